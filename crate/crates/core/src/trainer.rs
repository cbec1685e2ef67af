//! The active-learning loop.
//!
//! Each round samples a batch with the exploration policy, adds the
//! terminals to the dataset, takes one objective update, optionally takes a
//! replay update on a prioritized batch, and every `monitor_every` rounds
//! draws monitoring samples from the pure policy and emits an evaluation row.
//!
//! Every random draw comes from a substream keyed by the round and the item
//! index, so parallel and sequential execution give identical results.

use std::collections::VecDeque;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Reader, Writer};
use crate::config::{ExperimentConfig, GuideSource, TrainConfig};
use crate::error::{Error, Result};
use crate::eval::{build_target, exact_sampler_distribution, rounds_to_match_target, summary_metrics, total_variation, TargetDistribution};
use crate::flow::{sample_backward_trajectory, sample_forward_trajectory, FlowModel, HeadKind};
use crate::mdp::{Env, State, Trajectory};
use crate::nn::{clip_global_norm, Adam, CLIP_NORM};
use crate::objectives::{back_gtb_loss, forward_gtb_loss, tb_loss, Grads, Objective, SubstructureGuide};
use crate::par::{self, Exec};
use crate::replay::DatasetX;
use crate::reward::RewardFn;
use crate::rng::{substream, Stream};

pub const METRICS_HEADER: [&str; 10] = [
    "round",
    "n_seen",
    "loss",
    "logZ",
    "sample_mean_reward",
    "target_mean_reward",
    "rel_mean_error",
    "ad_statistic",
    "modes_found",
    "diversity",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub round: u64,
    pub n_seen: usize,
    pub loss: f64,
    #[serde(rename = "logZ")]
    pub log_z: f64,
    pub sample_mean_reward: f64,
    pub target_mean_reward: f64,
    pub rel_mean_error: f64,
    pub ad_statistic: f64,
    pub modes_found: usize,
    pub diversity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundOutcome {
    pub loss: f64,
    pub record: Option<MetricsRecord>,
}

/// Which parameter groups a step updates.
#[derive(Clone, Copy)]
struct Groups {
    log_z: bool,
    pf: bool,
    pb: bool,
}

pub struct Trainer {
    env: Env,
    reward: RewardFn,
    cfg: TrainConfig,
    exec: Exec,
    target: TargetDistribution,
    pub model: FlowModel,
    opt_z: Adam,
    opt_pf: Adam,
    opt_pb: Adam,
    data: DatasetX,
    monitor: VecDeque<(u64, Vec<(State, f64)>)>,
    round: u64,
    skipped: u64,
}

impl Trainer {
    pub fn new(env: Env, reward: RewardFn, cfg: TrainConfig, exec: Exec) -> Result<Self> {
        let target = build_target(&env, &reward, u128::from(cfg.enumeration_budget), exec)?;
        Self::with_target(env, reward, cfg, exec, target)
    }

    /// Like [`Trainer::new`] with a prebuilt target for `env` and `reward`.
    pub fn with_target(env: Env, reward: RewardFn, cfg: TrainConfig, exec: Exec, target: TargetDistribution) -> Result<Self> {
        cfg.validate()?;
        let pf_kind = cfg.parametrization.head_kind();
        let pb_kind = match cfg.objective {
            Objective::Maxent => HeadKind::Uniform,
            _ => pf_kind,
        };
        let mut rng = substream(cfg.seed, Stream::Init, &[]);
        let model = FlowModel::new(&env, pf_kind, pb_kind, &cfg.hidden, &mut rng);
        Ok(Trainer {
            opt_z: Adam::new(cfg.log_z_learning_rate, 1),
            opt_pf: Adam::new(cfg.learning_rate, model.pf.param_count()),
            opt_pb: Adam::new(cfg.learning_rate, model.pb.param_count()),
            env,
            reward,
            cfg,
            exec,
            target,
            model,
            data: DatasetX::new(),
            monitor: VecDeque::new(),
            round: 0,
            skipped: 0,
        })
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn target(&self) -> &TargetDistribution {
        &self.target
    }

    pub fn dataset(&self) -> &DatasetX {
        &self.data
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    /// Optimizer steps skipped because of non-finite gradients.
    pub fn skipped_steps(&self) -> u64 {
        self.skipped
    }

    /// Monitoring samples of the current evaluation window.
    pub fn window(&self) -> Vec<(State, f64)> {
        self.monitor.iter().flat_map(|(_, s)| s.iter().cloned()).collect()
    }

    /// Exact distribution of the pure policy over `target().terminals`.
    pub fn sampler_distribution(&self) -> Result<Vec<f64>> {
        exact_sampler_distribution(&self.env, &self.model.pf, &self.target, u128::from(self.cfg.enumeration_budget), self.exec)
    }

    pub fn exact_tv(&self) -> Result<f64> {
        Ok(total_variation(&self.sampler_distribution()?, &self.target.probs))
    }

    fn step(&mut self, mut g: Grads, groups: Groups) -> bool {
        if !g.is_finite() {
            self.skipped += 1;
            for (on, opt) in [(groups.log_z, &mut self.opt_z), (groups.pf, &mut self.opt_pf), (groups.pb, &mut self.opt_pb)] {
                if on {
                    opt.note_skipped();
                }
            }
            log::warn!("round {}: non-finite gradient, step skipped", self.round + 1);
            return false;
        }
        let mut z = [g.log_z];
        {
            let mut slices: Vec<&mut [f64]> = Vec::new();
            if groups.log_z {
                slices.push(&mut z);
            }
            if groups.pf {
                slices.push(&mut g.pf);
            }
            if groups.pb {
                slices.push(&mut g.pb);
            }
            clip_global_norm(&mut slices, CLIP_NORM);
        }
        if groups.log_z {
            let mut p = [self.model.log_z];
            self.opt_z.apply(&mut p, &z);
            self.model.log_z = p[0];
        }
        if groups.pf && !g.pf.is_empty() {
            self.opt_pf.apply(self.model.pf.params_mut(), &g.pf);
        }
        if groups.pb && !g.pb.is_empty() {
            self.opt_pb.apply(self.model.pb.params_mut(), &g.pb);
        }
        true
    }

    /// One objective update on a batch; returns the mean loss.
    fn update(&mut self, trajs: &[Trajectory], log_rs: &[f64], guide: Option<&SubstructureGuide>, round: u64, phase: u64) -> Result<f64> {
        let n = trajs.len();
        let scale = 1.0 / n as f64;
        let env = &self.env.clone();
        let exec = self.exec;
        match self.cfg.objective {
            Objective::Tb | Objective::Maxent => {
                let model = &self.model;
                let parts = par::map_range(exec, n, |i| {
                    let mut g = Grads::zeros(model);
                    tb_loss(env, model, &trajs[i], log_rs[i], Some(&mut g)).map(|l| (l.loss, g))
                });
                let mut total = Grads::zeros(model);
                let mut loss = 0.0;
                for p in parts {
                    let (l, g) = p?;
                    loss += l;
                    total.add(&g);
                }
                total.scale(scale);
                let pb = self.cfg.objective == Objective::Tb;
                self.step(total, Groups { log_z: true, pf: true, pb });
                Ok(loss * scale)
            }
            Objective::GtbSub => {
                let guide = guide.ok_or_else(|| Error::InvalidArgument("guided update without a guide".into()))?;
                let seed = self.cfg.seed;
                let source = self.cfg.guide_source;
                let scored = par::map_range(exec, n, |i| -> Result<(Option<Trajectory>, f64)> {
                    match source {
                        GuideSource::Policy => Ok((None, guide.log_prob(&trajs[i])?)),
                        GuideSource::Guide => {
                            let mut rng = substream(seed, Stream::Guide, &[round, phase, i as u64]);
                            let (t, lp) = guide.sample(trajs[i].terminal(), &mut rng)?;
                            Ok((Some(t), lp))
                        }
                    }
                });
                let mut batch: Vec<Trajectory> = Vec::with_capacity(n);
                let mut guide_lp = Vec::with_capacity(n);
                for (i, s) in scored.into_iter().enumerate() {
                    let (t, lp) = s?;
                    batch.push(t.unwrap_or_else(|| trajs[i].clone()));
                    guide_lp.push(lp);
                }

                let model = &self.model;
                let back = par::map_range(exec, n, |i| {
                    let mut g = Grads::zeros(model);
                    back_gtb_loss(env, &model.pb, &batch[i], guide_lp[i], Some(&mut g.pb)).map(|_| g)
                });
                let mut total = Grads::zeros(model);
                for g in back {
                    total.add(&g?);
                }
                total.scale(scale);
                self.step(total, Groups { log_z: false, pf: false, pb: true });

                let model = &self.model;
                let alpha = self.cfg.alpha;
                let fwd = par::map_range(exec, n, |i| {
                    let mut g = Grads::zeros(model);
                    forward_gtb_loss(env, model, &batch[i], log_rs[i], guide_lp[i], alpha, Some(&mut g)).map(|l| (l.loss, g))
                });
                let mut total = Grads::zeros(model);
                let mut loss = 0.0;
                for p in fwd {
                    let (l, g) = p?;
                    loss += l;
                    total.add(&g);
                }
                total.scale(scale);
                self.step(total, Groups { log_z: true, pf: true, pb: false });
                Ok(loss * scale)
            }
        }
    }

    pub fn run_round(&mut self) -> Result<RoundOutcome> {
        let r = self.round + 1;
        let cfg = self.cfg.clone();
        let (env, exec) = (self.env.clone(), self.exec);

        let trajs = par::map_range(exec, cfg.batch_size, |i| {
            let mut rng = substream(cfg.seed, Stream::Train, &[r, i as u64]);
            sample_forward_trajectory(&env, &self.model.pf, cfg.epsilon, &mut rng)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let mut log_rs = Vec::with_capacity(trajs.len());
        for t in &trajs {
            let rw = self.reward.reward(&env, t.terminal())?;
            self.data.insert(&env, t.terminal().clone(), rw, r)?;
            log_rs.push(rw.ln());
        }

        let guide = match cfg.objective {
            Objective::GtbSub => Some(SubstructureGuide::new(&env, self.data.snapshot(), cfg.guide_smoothing)?),
            _ => None,
        };
        let loss = self.update(&trajs, &log_rs, guide.as_ref(), r, 0)?;

        if cfg.prt && self.data.len() >= 2 {
            let picks = self
                .data
                .prt_sample(cfg.batch_size, cfg.prt_batch_fraction, cfg.prt_top_fraction, &mut substream(cfg.seed, Stream::Replay, &[r]))?;
            let entries = self.data.entries();
            let replay = par::map_range(exec, picks.len(), |i| {
                let mut rng = substream(cfg.seed, Stream::Replay, &[r, i as u64 + 1]);
                sample_backward_trajectory(&env, &self.model.pb, &entries[picks[i]].state, &mut rng)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            let replay_lr: Vec<f64> = picks.iter().map(|&i| entries[i].reward.ln()).collect();
            self.update(&replay, &replay_lr, guide.as_ref(), r, 1)?;
        }
        self.round = r;

        let mut record = None;
        if r % cfg.monitor_every == 0 {
            let samples = par::map_range(exec, cfg.monitor_samples, |j| {
                let mut rng = substream(cfg.seed, Stream::Monitor, &[r, j as u64]);
                sample_forward_trajectory(&env, &self.model.pf, 0.0, &mut rng)
            });
            let mut batch = Vec::with_capacity(cfg.monitor_samples);
            for s in samples {
                let x = s?.terminal().clone();
                let rw = self.reward.reward(&env, &x)?;
                batch.push((x, rw));
            }
            self.monitor.push_back((r, batch));
            while self.monitor.front().is_some_and(|(k, _)| k + cfg.eval_window_rounds <= r) {
                self.monitor.pop_front();
            }
            let window = self.window();
            let s = summary_metrics(&env, &window, &self.target, self.data.entries().iter().map(|e| &e.state))?;
            record = Some(MetricsRecord {
                round: r,
                n_seen: self.data.len(),
                loss,
                log_z: self.model.log_z,
                sample_mean_reward: s.sample_mean_reward,
                target_mean_reward: s.target_mean_reward,
                rel_mean_error: s.rel_mean_error,
                ad_statistic: s.ad_statistic,
                modes_found: s.modes_found,
                diversity: s.diversity,
            });
        }
        Ok(RoundOutcome { loss, record })
    }

    pub fn checkpoint(&self) -> String {
        let mut w = Writer::new();
        w.tag("round").u64(self.round).tag("skipped").u64(self.skipped).newline();
        self.model.write_to(&mut w);
        self.opt_z.write_to(&mut w);
        self.opt_pf.write_to(&mut w);
        self.opt_pb.write_to(&mut w);
        w.tag("dataset").usize(self.data.len()).newline();
        for e in self.data.entries() {
            w.tag(&self.env.label(&e.state)).f64(e.reward).u64(e.round).newline();
        }
        w.tag("monitor").usize(self.monitor.len()).newline();
        for (k, batch) in &self.monitor {
            w.tag("batch").u64(*k).usize(batch.len()).newline();
            for (x, rw) in batch {
                w.tag(&self.env.label(x)).f64(*rw).newline();
            }
        }
        w.finish()
    }

    /// Rebuilds a trainer from [`Trainer::checkpoint`] output.
    pub fn restore(env: Env, reward: RewardFn, cfg: TrainConfig, exec: Exec, target: TargetDistribution, text: &str) -> Result<Self> {
        let mut t = Self::with_target(env, reward, cfg, exec, target)?;
        let mut r = Reader::new(text)?;
        r.expect("round")?;
        t.round = r.u64()?;
        r.expect("skipped")?;
        t.skipped = r.u64()?;
        let model = FlowModel::read_from(&mut r, &t.env)?;
        if model.pf.kind() != t.model.pf.kind() || model.pb.kind() != t.model.pb.kind() {
            return Err(Error::Checkpoint("head kinds do not match the config".into()));
        }
        t.model = model;
        t.opt_z = Adam::read_from(&mut r)?;
        t.opt_pf = Adam::read_from(&mut r)?;
        t.opt_pb = Adam::read_from(&mut r)?;
        if t.opt_pf.len() != t.model.pf.param_count() || t.opt_pb.len() != t.model.pb.param_count() {
            return Err(Error::Checkpoint("optimizer state does not match the model".into()));
        }
        t.data = read_dataset(&mut r, &t.env)?;
        r.expect("monitor")?;
        for _ in 0..r.usize()? {
            r.expect("batch")?;
            let k = r.u64()?;
            let n = r.usize()?;
            let mut batch = Vec::with_capacity(n);
            for _ in 0..n {
                batch.push((parse_state(&t.env, r.token()?)?, r.f64()?));
            }
            t.monitor.push_back((k, batch));
        }
        Ok(t)
    }
}

fn parse_state(env: &Env, label: &str) -> Result<State> {
    env.parse_label(label)
        .filter(|s| env.is_terminal(s))
        .ok_or_else(|| Error::Checkpoint(format!("`{label}` is not a terminal of this environment")))
}

fn read_dataset(r: &mut Reader<'_>, env: &Env) -> Result<DatasetX> {
    r.expect("dataset")?;
    let mut data = DatasetX::new();
    for _ in 0..r.usize()? {
        let x = parse_state(env, r.token()?)?;
        let rw = r.f64()?;
        let round = r.u64()?;
        data.insert(env, x, rw, round)?;
    }
    Ok(data)
}

/// Reads only the dataset section of a checkpoint.
pub fn dataset_from_checkpoint(env: &Env, text: &str) -> Result<DatasetX> {
    let mut r = Reader::new(text)?;
    while let Some(tok) = r.peek() {
        if tok == "dataset" {
            return read_dataset(&mut r, env);
        }
        r.token()?;
    }
    Err(Error::Checkpoint("no dataset section".into()))
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub config: ExperimentConfig,
    pub rounds_to_match_target: Option<u64>,
    pub final_rel_mean_error: Option<f64>,
    pub final_ad_statistic: Option<f64>,
    pub final_exact_tv: Option<f64>,
    pub target_mean_reward: f64,
    pub n_seen: usize,
    pub skipped_steps: u64,
    pub wall_time_seconds: f64,
}

pub struct ExperimentResult {
    pub records: Vec<MetricsRecord>,
    pub summary: Summary,
    pub trainer: Trainer,
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const CONFIG_ECHO_FILE: &str = "config.toml";

struct MetricsSink {
    path: PathBuf,
    w: csv::Writer<std::io::BufWriter<std::fs::File>>,
}

impl MetricsSink {
    fn create(path: PathBuf) -> Result<Self> {
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(std::io::BufWriter::new(file));
        w.write_record(METRICS_HEADER)?;
        w.flush().map_err(|e| Error::io(&path, e))?;
        Ok(MetricsSink { path, w })
    }

    fn push(&mut self, rec: &MetricsRecord) -> Result<()> {
        self.w.serialize(rec)?;
        self.w.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(contents.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Runs every round of `cfg`. With `out`, writes the metrics log (flushed
/// row by row), the summary, the final checkpoint and a config echo.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>, exec: Exec) -> Result<ExperimentResult> {
    let start = Instant::now();
    let env = cfg.env.build()?;
    let reward = cfg.reward.build(&env)?;
    let mut sink = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            write_file(&dir.join(CONFIG_ECHO_FILE), &cfg.to_toml_string())?;
            Some(MetricsSink::create(dir.join(METRICS_FILE))?)
        }
        None => None,
    };
    let mut trainer = Trainer::new(env, reward, cfg.train.clone(), exec)?;
    let mut records = Vec::new();
    for _ in 0..cfg.train.rounds {
        let outcome = trainer.run_round()?;
        if let Some(rec) = outcome.record {
            if let Some(s) = sink.as_mut() {
                s.push(&rec)?;
            }
            records.push(rec);
        }
    }
    let rows: Vec<(u64, f64, f64)> = records.iter().map(|r| (r.round, r.sample_mean_reward, r.target_mean_reward)).collect();
    let last = records.last();
    let summary = Summary {
        config: cfg.clone(),
        rounds_to_match_target: rounds_to_match_target(&rows),
        final_rel_mean_error: last.map(|r| r.rel_mean_error),
        final_ad_statistic: last.map(|r| r.ad_statistic),
        final_exact_tv: trainer.exact_tv().ok(),
        target_mean_reward: trainer.target().target_mean,
        n_seen: trainer.dataset().len(),
        skipped_steps: trainer.skipped_steps(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
    };
    if let Some(dir) = out {
        write_file(&dir.join(CHECKPOINT_FILE), &trainer.checkpoint())?;
        write_file(&dir.join(SUMMARY_FILE), &serde_json::to_string_pretty(&summary)?)?;
    }
    Ok(ExperimentResult { records, summary, trainer })
}
