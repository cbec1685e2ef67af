//! Exact target distributions, exact sampler distributions and the training
//! summary metrics.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::flow::{forward_reach, PolicyHead};
use crate::mdp::{Dag, Env, EnvKind, State};
use crate::par::{self, Exec};
use crate::replay::ceil_fraction;
use crate::reward::RewardFn;

pub const MODE_FRACTION: f64 = 0.005;
pub const DIVERSITY_TOP: usize = 100;
const CDF_CLAMP: f64 = 1e-10;

/// `p*(x) = R(x) / Z` over every terminal, in enumeration order.
#[derive(Clone, Debug)]
pub struct TargetDistribution {
    pub terminals: Vec<State>,
    pub rewards: Vec<f64>,
    pub probs: Vec<f64>,
    pub z: f64,
    pub target_mean: f64,
    index: HashMap<State, usize>,
    /// Distinct rewards ascending with `P(R < r)` and `P(R = r)` under `p*`.
    cdf: Vec<(f64, f64, f64)>,
    modes: Vec<usize>,
}

impl TargetDistribution {
    pub fn from_rewards(terminals: Vec<State>, rewards: Vec<f64>) -> Result<Self> {
        if terminals.is_empty() || terminals.len() != rewards.len() {
            return Err(Error::InvalidArgument("target needs one positive reward per terminal".into()));
        }
        if let Some(r) = rewards.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
            return Err(Error::InvalidArgument(format!("reward {r} is not positive and finite")));
        }
        let z: f64 = rewards.iter().sum();
        let probs: Vec<f64> = rewards.iter().map(|r| r / z).collect();
        let target_mean = rewards.iter().map(|r| r * r).sum::<f64>() / z;

        let mut order: Vec<usize> = (0..rewards.len()).collect();
        order.sort_by(|&a, &b| rewards[a].total_cmp(&rewards[b]));
        let mut cdf: Vec<(f64, f64, f64)> = Vec::new();
        let mut below = 0.0;
        for &i in &order {
            match cdf.last_mut() {
                Some(last) if last.0 == rewards[i] => last.2 += probs[i],
                _ => {
                    if let Some(last) = cdf.last() {
                        below = last.1 + last.2;
                    }
                    cdf.push((rewards[i], below, probs[i]));
                }
            }
        }

        let n_modes = ceil_fraction(MODE_FRACTION, terminals.len()).max(1);
        let mut ranked: Vec<usize> = (0..rewards.len()).collect();
        ranked.sort_by(|&a, &b| rewards[b].total_cmp(&rewards[a]).then(a.cmp(&b)));
        ranked.truncate(n_modes);

        let index = terminals.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
        Ok(TargetDistribution {
            terminals,
            rewards,
            probs,
            z,
            target_mean,
            index,
            cdf,
            modes: ranked,
        })
    }

    pub fn len(&self) -> usize {
        self.terminals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terminals.is_empty()
    }

    pub fn position(&self, x: &State) -> Option<usize> {
        self.index.get(x).copied()
    }

    pub fn mean_reward(&self) -> f64 {
        self.rewards.iter().sum::<f64>() / self.len() as f64
    }

    /// `P(R < r) + P(R = r) / 2` under the target.
    pub fn midpoint_cdf(&self, r: f64) -> f64 {
        let i = self.cdf.partition_point(|c| c.0 < r);
        match self.cdf.get(i) {
            Some(&(v, below, at)) if v == r => below + 0.5 * at,
            Some(&(_, below, _)) => below,
            None => 1.0,
        }
    }

    /// Distinct rewards ascending with their target mass.
    pub fn reward_levels(&self) -> Vec<(f64, f64)> {
        self.cdf.iter().map(|c| (c.0, c.2)).collect()
    }

    /// Indices of the top `ceil(0.5% * |X|)` terminals by reward (ties by
    /// enumeration order).
    pub fn modes(&self) -> &[usize] {
        &self.modes
    }
}

/// Enumerates every terminal and evaluates the reward.
pub fn build_target(env: &Env, reward: &RewardFn, budget: u128, exec: Exec) -> Result<TargetDistribution> {
    let terminals: Vec<State> = env.enumerate_terminals(budget)?.collect();
    let rewards = par::map_slice(exec, &terminals, |x| reward.reward(env, x)).into_iter().collect::<Result<Vec<f64>>>()?;
    TargetDistribution::from_rewards(terminals, rewards)
}

/// `p_theta(x)` for every terminal of `target`, by forward dynamic programming.
pub fn exact_sampler_distribution(env: &Env, pf: &PolicyHead, target: &TargetDistribution, budget: u128, exec: Exec) -> Result<Vec<f64>> {
    let dag = Dag::full(env, budget)?;
    let reach = forward_reach(env, pf, &dag, exec)?;
    target
        .terminals
        .iter()
        .map(|x| {
            dag.get(x)
                .map(|i| reach[i])
                .ok_or_else(|| Error::InvalidArgument(format!("terminal {:?} not in the DAG", env.label(x))))
        })
        .collect()
}

/// `1/2 * sum |p - q|`.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len());
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// One-sample Anderson–Darling statistic of sampled rewards against the
/// target's reward distribution, using the midpoint CDF for ties.
pub fn anderson_darling(samples: &[f64], target: &TargetDistribution) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("Anderson-Darling needs at least one sample".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let f: Vec<f64> = sorted
        .iter()
        .map(|&r| target.midpoint_cdf(r).clamp(CDF_CLAMP, 1.0 - CDF_CLAMP))
        .collect();
    let mut s = 0.0;
    for i in 0..n {
        s += (2 * i + 1) as f64 * (f[i].ln() + (1.0 - f[n - 1 - i]).ln());
    }
    Ok(-(n as f64) - s / n as f64)
}

/// Distance between two terminals: normalized Hamming for strings,
/// `1 - multiset Jaccard` for bags.
pub fn distance(env: &Env, a: &State, b: &State) -> f64 {
    match env.kind() {
        EnvKind::Bag => {
            let (mut inter, mut union) = (0u32, 0u32);
            for (x, y) in a.0.iter().zip(&b.0) {
                inter += u32::from(*x.min(y));
                union += u32::from(*x.max(y));
            }
            if union == 0 {
                0.0
            } else {
                1.0 - inter as f64 / union as f64
            }
        }
        _ => {
            let n = a.0.len().max(b.0.len());
            if n == 0 {
                return 0.0;
            }
            let diff = (0..n).filter(|&i| a.0.get(i) != b.0.get(i)).count();
            diff as f64 / n as f64
        }
    }
}

/// Mean pairwise distance among the `DIVERSITY_TOP` highest-reward samples.
pub fn diversity(env: &Env, samples: &[(State, f64)]) -> f64 {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[b].1.total_cmp(&samples[a].1).then(a.cmp(&b)));
    order.truncate(DIVERSITY_TOP);
    if order.len() < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for (k, &i) in order.iter().enumerate() {
        for &j in &order[k + 1..] {
            total += distance(env, &samples[i].0, &samples[j].0);
            pairs += 1;
        }
    }
    total / pairs as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowSummary {
    pub sample_mean_reward: f64,
    pub target_mean_reward: f64,
    /// Sample mean as a percentage of the target mean.
    pub rel_mean_error: f64,
    pub ad_statistic: f64,
    pub modes_found: usize,
    pub diversity: f64,
}

pub fn summary_metrics<'a>(
    env: &Env,
    window: &[(State, f64)],
    target: &TargetDistribution,
    seen: impl IntoIterator<Item = &'a State>,
) -> Result<WindowSummary> {
    if window.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation window".into()));
    }
    let rewards: Vec<f64> = window.iter().map(|w| w.1).collect();
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    let mut is_mode = vec![false; target.len()];
    for &i in target.modes() {
        is_mode[i] = true;
    }
    let modes_found = seen
        .into_iter()
        .filter(|x| target.position(x).is_some_and(|i| is_mode[i]))
        .count();
    Ok(WindowSummary {
        sample_mean_reward: mean,
        target_mean_reward: target.target_mean,
        rel_mean_error: 100.0 * mean / target.target_mean,
        ad_statistic: anderson_darling(&rewards, target)?,
        modes_found,
        diversity: diversity(env, window),
    })
}

/// First round whose windowed sample mean reaches the target mean.
pub fn rounds_to_match_target(rows: &[(u64, f64, f64)]) -> Option<u64> {
    rows.iter().find(|(_, sample, target)| sample >= target).map(|r| r.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{sample_forward_trajectory, Direction, HeadKind};
    use crate::mdp::DEFAULT_BUDGET;
    use crate::nn::Mlp;
    use crate::rng::{substream, Stream};

    fn toy(rewards: &[f64]) -> TargetDistribution {
        let terminals = (0..rewards.len()).map(|i| State(vec![i as u8])).collect();
        TargetDistribution::from_rewards(terminals, rewards.to_vec()).unwrap()
    }

    #[test]
    fn two_point_target() {
        let t = toy(&[1.0, 3.0]);
        assert_eq!(t.z, 4.0);
        assert_eq!(t.probs, vec![0.25, 0.75]);
        assert_eq!(t.target_mean, 2.5);
        assert_eq!(t.midpoint_cdf(1.0), 0.125);
        assert_eq!(t.midpoint_cdf(3.0), 0.625);
        assert_eq!(t.midpoint_cdf(2.0), 0.25);
        assert_eq!(t.midpoint_cdf(0.5), 0.0);
        assert_eq!(t.midpoint_cdf(4.0), 1.0);
    }

    #[test]
    fn constant_rewards() {
        let t = toy(&[2.0; 7]);
        assert!((t.target_mean - 2.0).abs() < 1e-15);
        let ad = anderson_darling(&[2.0; 20], &t).unwrap();
        assert!(ad.is_finite());
        assert!(t.target_mean >= t.mean_reward());
    }

    #[test]
    fn invalid_targets() {
        assert!(TargetDistribution::from_rewards(vec![State(vec![0])], vec![0.0]).is_err());
        assert!(TargetDistribution::from_rewards(vec![], vec![]).is_err());
        assert!(anderson_darling(&[], &toy(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn ad_grows_with_off_target_sample() {
        let t = toy(&[1.0, 3.0]);
        let small = anderson_darling(&[1.0; 100], &t).unwrap();
        let large = anderson_darling(&[1.0; 1000], &t).unwrap();
        assert!(large > small && small > 0.0);
    }

    #[test]
    fn uniform_sampler_on_n2() {
        let env = Env::string_pa(2, 2);
        let terminals: Vec<State> = env.enumerate_terminals(DEFAULT_BUDGET).unwrap().collect();
        let t = TargetDistribution::from_rewards(terminals, vec![1.0; 4]).unwrap();
        let p = exact_sampler_distribution(&env, &PolicyHead::uniform(Direction::Forward), &t, DEFAULT_BUDGET, Exec::Sequential).unwrap();
        for v in &p {
            assert!((v - 0.25).abs() < 1e-15);
        }
        assert!(total_variation(&p, &t.probs) < 1e-15);
    }

    #[test]
    fn deterministic_sampler_is_point_mass() {
        let env = Env::string_ar(2, 3);
        let d = env.feature_dim();
        let mut params = vec![0.0; d * 2 + 2];
        params[d * 2] = 50.0;
        params[d * 2 + 1] = -50.0;
        let head = PolicyHead::with_net(HeadKind::Sa, Direction::Forward, &env, Mlp::from_params(&[d, 2], params).unwrap()).unwrap();
        let terminals: Vec<State> = env.enumerate_terminals(DEFAULT_BUDGET).unwrap().collect();
        let t = TargetDistribution::from_rewards(terminals, vec![1.0; 8]).unwrap();
        let p = exact_sampler_distribution(&env, &head, &t, DEFAULT_BUDGET, Exec::Parallel).unwrap();
        assert!((p[t.position(&State(vec![0, 0, 0])).unwrap()] - 1.0).abs() < 1e-40);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn dp_matches_monte_carlo() {
        let env = Env::string_pa(2, 3);
        let head = PolicyHead::new(HeadKind::Sa, Direction::Forward, &env, &[16], &mut substream(2, Stream::Init, &[]));
        let terminals: Vec<State> = env.enumerate_terminals(DEFAULT_BUDGET).unwrap().collect();
        let t = TargetDistribution::from_rewards(terminals, vec![1.0; 8]).unwrap();
        let p = exact_sampler_distribution(&env, &head, &t, DEFAULT_BUDGET, Exec::Sequential).unwrap();
        let n = 100_000;
        let mut counts = vec![0usize; 8];
        let mut rng = substream(2, Stream::Monitor, &[]);
        for _ in 0..n {
            let tau = sample_forward_trajectory(&env, &head, 0.0, &mut rng).unwrap();
            counts[t.position(tau.terminal()).unwrap()] += 1;
        }
        for (c, q) in counts.iter().zip(&p) {
            let f = *c as f64 / n as f64;
            assert!((f - q).abs() <= 3.0 * (q * (1.0 - q) / n as f64).sqrt() + 1e-12, "{f} vs {q}");
        }
    }

    #[test]
    fn distances() {
        let s = Env::string_pa(3, 4);
        assert_eq!(distance(&s, &State(vec![0, 1, 2, 0]), &State(vec![0, 1, 1, 1])), 0.5);
        let b = Env::bag(3, 4);
        assert_eq!(distance(&b, &State(vec![2, 2, 0]), &State(vec![2, 1, 1])), 1.0 - 3.0 / 5.0);
        let same = vec![(State(vec![1, 2, 0, 0]), 1.0); 10];
        assert_eq!(diversity(&s, &same), 0.0);
    }

    #[test]
    fn summary_and_modes() {
        let env = Env::string_pa(2, 8);
        let terminals: Vec<State> = env.enumerate_terminals(DEFAULT_BUDGET).unwrap().collect();
        let rewards: Vec<f64> = (0..terminals.len()).map(|i| 1.0 + (i % 17) as f64).collect();
        let t = TargetDistribution::from_rewards(terminals.clone(), rewards).unwrap();
        assert_eq!(t.modes().len(), 2);
        let win = vec![(terminals[0].clone(), 1.0); 10];
        let all = summary_metrics(&env, &win, &t, terminals.iter()).unwrap();
        assert_eq!(all.modes_found, 2);
        assert_eq!(all.diversity, 0.0);
        let win: Vec<(State, f64)> = (0..10).map(|_| (terminals[0].clone(), t.target_mean * 0.98)).collect();
        let s = summary_metrics(&env, &win, &t, std::iter::empty()).unwrap();
        assert!((s.rel_mean_error - 98.0).abs() < 1e-9);
        assert_eq!(s.modes_found, 0);
    }

    #[test]
    fn first_crossing() {
        let rows = [(4690, 2.0, 2.5), (4700, 2.6, 2.5), (4710, 2.4, 2.5), (4720, 2.7, 2.5)];
        assert_eq!(rounds_to_match_target(&rows), Some(4700));
        assert_eq!(rounds_to_match_target(&rows[..1]), None);
        assert_eq!(rounds_to_match_target(&[]), None);
    }
}
