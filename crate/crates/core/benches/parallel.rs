//! Sequential against data-parallel execution on the hot paths.
//!
//! Run with `cargo bench -p flowlab-core`. With `--no-default-features`
//! both modes run on the calling thread.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use flowlab_core::config::ExperimentConfig;
use flowlab_core::eval::{build_target, exact_sampler_distribution};
use flowlab_core::flow::{Direction, HeadKind, PolicyHead};
use flowlab_core::rng::{substream, Stream};
use flowlab_core::theory::{tabular_tb_simulate, SettingA};
use flowlab_core::trainer::Trainer;
use flowlab_core::{Env, Exec};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn exact_sampler(c: &mut Criterion) {
    let env = Env::string_ar(4, 7);
    let cfg = ExperimentConfig::from_toml_str(
        "[env]\nkind = \"string_ar\"\nalphabet_size = 4\nseq_len = 7\n[reward]\nkind = \"string_motif\"\nmotifs = [{ pattern = \"ab\", bonus = 1.0 }]\n",
    )
    .unwrap();
    let reward = cfg.reward.build(&env).unwrap();
    let target = build_target(&env, &reward, 1 << 20, Exec::Sequential).unwrap();
    let head = PolicyHead::new(HeadKind::Sa, Direction::Forward, &env, &[64, 64], &mut substream(0, Stream::Init, &[]));
    let mut g = c.benchmark_group("exact_sampler_distribution");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| exact_sampler_distribution(&env, &head, &target, 1 << 20, exec).unwrap())
        });
    }
    g.finish();
}

fn training_rounds(c: &mut Criterion) {
    let cfg = ExperimentConfig::from_toml_str(
        "[env]\nkind = \"bag\"\nalphabet_size = 4\ncapacity = 6\n[reward]\nkind = \"bag_builtin\"\nthreshold = 3\n[train]\nobjective = \"gtb_sub\"\nparametrization = \"ssr\"\nprt = true\nhidden = [64, 64]\n",
    )
    .unwrap();
    let env = cfg.env.build().unwrap();
    let mut g = c.benchmark_group("gtb_training_round");
    g.sample_size(10);
    for (name, exec) in MODES {
        let reward = cfg.reward.build(&env).unwrap();
        let mut trainer = Trainer::new(env.clone(), reward, cfg.train.clone(), exec).unwrap();
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| trainer.run_round().unwrap()));
    }
    g.finish();
}

fn polya_trials(c: &mut Criterion) {
    let setting = SettingA::padded(8, 4, 2, 1, 1.0, 1.0).unwrap();
    let mut g = c.benchmark_group("polya_trials");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| tabular_tb_simulate(&setting, 200, 0.01, 0.002, 500, 0, 0, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, exact_sampler, training_rounds, polya_trials);
criterion_main!(benches);
