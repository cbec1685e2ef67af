//! Flow parametrizations and trajectory sampling.
//!
//! A [`PolicyHead`] turns a state into a distribution over its forward edges
//! (children) or backward edges (parents):
//!
//! * `Sa` — the network maps `encode(s)` to one logit per action slot; slots
//!   of illegal actions are masked out before the softmax.
//! * `Ssr` — the network scores `encode(s) ‖ encode(s')` for each neighbour
//!   `s'`; the edge weight is `exp(score)`. Two edges into the same child get
//!   the same score and so split that child's weight equally.
//! * `Uniform` — `1 / |edges|`, no parameters.
//!
//! Logits are clamped to `[-LOGIT_CLIP, LOGIT_CLIP]` before normalization.

mod tabular;

pub use tabular::TabularTrajectoryFlow;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Reader, Writer};
use crate::error::{Error, Result};
use crate::mdp::{Dag, Edge, Env, State, Trajectory};
use crate::nn::{Mlp, Trace};
use crate::par::{self, Exec};

pub const LOGIT_CLIP: f64 = 50.0;
pub const LOG_Z_INIT: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Sa,
    Ssr,
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyHead {
    kind: HeadKind,
    dir: Direction,
    net: Option<Mlp>,
}

/// A head evaluated at one state: the edge set, its log-probabilities, and
/// what is needed to backpropagate through them.
#[derive(Clone, Debug)]
pub struct Evaluated {
    pub edges: Vec<Edge>,
    pub log_probs: Vec<f64>,
    traces: Vec<Trace>,
    slots: Vec<usize>,
    raw: Vec<f64>,
}

impl Evaluated {
    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|l| l.exp()).collect()
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Index of the forward edge taking `e.action` out of this state.
    pub fn forward_index(&self, e: &Edge) -> Option<usize> {
        self.edges.iter().position(|c| c.action == e.action)
    }

    /// Index of the backward edge matching `e`.
    pub fn backward_index(&self, e: &Edge) -> Option<usize> {
        self.edges.iter().position(|p| p.action == e.action && p.from == e.from)
    }
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

impl PolicyHead {
    pub fn new<R: Rng + ?Sized>(kind: HeadKind, dir: Direction, env: &Env, hidden: &[usize], rng: &mut R) -> Self {
        let d = env.feature_dim();
        let net = match kind {
            HeadKind::Uniform => None,
            HeadKind::Sa => {
                let out = match dir {
                    Direction::Forward => env.forward_slots(),
                    Direction::Backward => env.backward_slots(),
                };
                Some(Mlp::new(&layer_sizes(d, hidden, out), rng))
            }
            HeadKind::Ssr => Some(Mlp::new(&layer_sizes(2 * d, hidden, 1), rng)),
        };
        PolicyHead { kind, dir, net }
    }

    pub fn uniform(dir: Direction) -> Self {
        PolicyHead {
            kind: HeadKind::Uniform,
            dir,
            net: None,
        }
    }

    /// Wraps an existing network; its shape must match `kind`, `dir` and `env`.
    pub fn with_net(kind: HeadKind, dir: Direction, env: &Env, net: Mlp) -> Result<Self> {
        let d = env.feature_dim();
        let (want_in, want_out) = match (kind, dir) {
            (HeadKind::Uniform, _) => return Err(Error::InvalidArgument("uniform head has no network".into())),
            (HeadKind::Sa, Direction::Forward) => (d, env.forward_slots()),
            (HeadKind::Sa, Direction::Backward) => (d, env.backward_slots()),
            (HeadKind::Ssr, _) => (2 * d, 1),
        };
        if net.input_dim() != want_in {
            return Err(Error::DimensionMismatch { expected: want_in, got: net.input_dim() });
        }
        if net.output_dim() != want_out {
            return Err(Error::DimensionMismatch { expected: want_out, got: net.output_dim() });
        }
        Ok(PolicyHead { kind, dir, net: Some(net) })
    }

    pub fn kind(&self) -> HeadKind {
        self.kind
    }

    pub fn direction(&self) -> Direction {
        self.dir
    }

    pub fn net(&self) -> Option<&Mlp> {
        self.net.as_ref()
    }

    pub fn params(&self) -> &[f64] {
        self.net.as_ref().map_or(&[], |n| n.params())
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self.net.as_mut() {
            Some(n) => n.params_mut(),
            None => &mut [],
        }
    }

    pub fn param_count(&self) -> usize {
        self.net.as_ref().map_or(0, |n| n.param_count())
    }

    fn edges(&self, env: &Env, s: &State) -> Vec<Edge> {
        match self.dir {
            Direction::Forward => env.children(s),
            Direction::Backward => env.parents(s),
        }
    }

    /// Distribution over the forward (or backward) edges of `s`.
    pub fn evaluate(&self, env: &Env, s: &State) -> Result<Evaluated> {
        let edges = self.edges(env, s);
        if edges.is_empty() {
            return Err(Error::InvalidArgument(match self.dir {
                Direction::Forward => format!("terminal state {:?} has no forward edges", env.label(s)),
                Direction::Backward => "the source state has no backward edges".to_string(),
            }));
        }
        let n = edges.len();
        let (traces, slots, raw) = match (self.kind, &self.net) {
            (HeadKind::Uniform, _) | (_, None) => {
                let lp = -(n as f64).ln();
                return Ok(Evaluated {
                    edges,
                    log_probs: vec![lp; n],
                    traces: Vec::new(),
                    slots: Vec::new(),
                    raw: Vec::new(),
                });
            }
            (HeadKind::Sa, Some(net)) => {
                let trace = net.forward_traced(&env.encode(s))?;
                let slots: Vec<usize> = edges
                    .iter()
                    .map(|e| match self.dir {
                        Direction::Forward => env.forward_slot(e.action),
                        Direction::Backward => env.backward_slot(e.action),
                    })
                    .collect();
                let raw = slots.iter().map(|&k| trace.output()[k]).collect();
                (vec![trace], slots, raw)
            }
            (HeadKind::Ssr, Some(net)) => {
                let d = env.feature_dim();
                let mut input = vec![0.0; 2 * d];
                env.encode_into(s, &mut input[..d]);
                let mut traces = Vec::with_capacity(n);
                let mut raw = Vec::with_capacity(n);
                for e in &edges {
                    let other = match self.dir {
                        Direction::Forward => &e.to,
                        Direction::Backward => &e.from,
                    };
                    env.encode_into(other, &mut input[d..]);
                    let t = net.forward_traced(&input)?;
                    raw.push(t.output()[0]);
                    traces.push(t);
                }
                (traces, vec![0; n], raw)
            }
        };
        let z: Vec<f64> = raw.iter().map(|v: &f64| v.clamp(-LOGIT_CLIP, LOGIT_CLIP)).collect();
        Ok(Evaluated {
            edges,
            log_probs: log_softmax(&z),
            traces,
            slots,
            raw,
        })
    }

    /// Adds `sum_e weights[e] * d log p(e) / d params` into `grad`.
    pub fn backprop(&self, ev: &Evaluated, weights: &[f64], grad: &mut [f64]) {
        let Some(net) = &self.net else { return };
        if self.kind == HeadKind::Uniform {
            return;
        }
        assert_eq!(weights.len(), ev.edges.len());
        let total: f64 = weights.iter().sum();
        let dz: Vec<f64> = ev
            .log_probs
            .iter()
            .zip(weights)
            .zip(&ev.raw)
            .map(|((lp, w), r)| {
                if r.abs() > LOGIT_CLIP {
                    0.0
                } else {
                    w - lp.exp() * total
                }
            })
            .collect();
        match self.kind {
            HeadKind::Sa => {
                let mut out_grad = vec![0.0; net.output_dim()];
                for (&k, d) in ev.slots.iter().zip(&dz) {
                    out_grad[k] += d;
                }
                net.backward(&ev.traces[0], &out_grad, grad);
            }
            HeadKind::Ssr => {
                for (t, d) in ev.traces.iter().zip(&dz) {
                    if *d != 0.0 {
                        net.backward(t, &[*d], grad);
                    }
                }
            }
            HeadKind::Uniform => {}
        }
    }

    /// `sum_t log P(step_t)` over the trajectory in this head's direction.
    pub fn traj_log_prob(&self, env: &Env, tau: &Trajectory) -> Result<f64> {
        let mut total = 0.0;
        for e in &tau.steps {
            let (ev, i) = self.evaluate_step(env, e)?;
            total += ev.log_probs[i];
        }
        Ok(total)
    }

    /// Evaluates the head at the state a step is scored from and locates the step.
    pub fn evaluate_step(&self, env: &Env, e: &Edge) -> Result<(Evaluated, usize)> {
        let (ev, idx) = match self.dir {
            Direction::Forward => {
                let ev = self.evaluate(env, &e.from)?;
                let i = ev.forward_index(e);
                (ev, i)
            }
            Direction::Backward => {
                let ev = self.evaluate(env, &e.to)?;
                let i = ev.backward_index(e);
                (ev, i)
            }
        };
        let i = idx.ok_or_else(|| Error::InvalidArgument(format!("edge {e:?} is not legal")))?;
        Ok((ev, i))
    }

    pub fn write_to(&self, w: &mut Writer) {
        w.tag("head")
            .tag(match self.kind {
                HeadKind::Sa => "sa",
                HeadKind::Ssr => "ssr",
                HeadKind::Uniform => "uniform",
            })
            .tag(match self.dir {
                Direction::Forward => "forward",
                Direction::Backward => "backward",
            })
            .newline();
        if let Some(net) = &self.net {
            net.write_to(w);
        }
    }

    pub fn read_from(r: &mut Reader<'_>, env: &Env) -> Result<Self> {
        r.expect("head")?;
        let kind = match r.token()? {
            "sa" => HeadKind::Sa,
            "ssr" => HeadKind::Ssr,
            "uniform" => HeadKind::Uniform,
            t => return Err(Error::Checkpoint(format!("unknown head kind `{t}`"))),
        };
        let dir = match r.token()? {
            "forward" => Direction::Forward,
            "backward" => Direction::Backward,
            t => return Err(Error::Checkpoint(format!("unknown direction `{t}`"))),
        };
        if kind == HeadKind::Uniform {
            return Ok(PolicyHead::uniform(dir));
        }
        PolicyHead::with_net(kind, dir, env, Mlp::read_from(r)?)
    }
}

fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    std::iter::once(input)
        .chain(hidden.iter().copied())
        .chain(std::iter::once(output))
        .collect()
}

/// Trainable `(log Z, P_F, P_B)` triple.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowModel {
    pub log_z: f64,
    pub pf: PolicyHead,
    pub pb: PolicyHead,
}

impl FlowModel {
    /// `pb_kind` is `Uniform` for the maximum-entropy objective, otherwise the
    /// same parametrization as the forward head.
    pub fn new<R: Rng + ?Sized>(env: &Env, pf_kind: HeadKind, pb_kind: HeadKind, hidden: &[usize], rng: &mut R) -> Self {
        FlowModel {
            log_z: LOG_Z_INIT,
            pf: PolicyHead::new(pf_kind, Direction::Forward, env, hidden, rng),
            pb: PolicyHead::new(pb_kind, Direction::Backward, env, hidden, rng),
        }
    }

    pub fn write_to(&self, w: &mut Writer) {
        w.tag("log_z").f64(self.log_z).newline();
        self.pf.write_to(w);
        self.pb.write_to(w);
    }

    pub fn read_from(r: &mut Reader<'_>, env: &Env) -> Result<Self> {
        r.expect("log_z")?;
        let log_z = r.f64()?;
        let pf = PolicyHead::read_from(r, env)?;
        let pb = PolicyHead::read_from(r, env)?;
        Ok(FlowModel { log_z, pf, pb })
    }
}

fn sample_index<R: Rng + ?Sized>(probs: impl Iterator<Item = f64>, rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.enumerate() {
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Walks from the source; at each step, with probability `epsilon` takes a
/// uniformly random legal edge, otherwise samples the head.
pub fn sample_forward_trajectory<R: Rng + ?Sized>(
    env: &Env,
    pf: &PolicyHead,
    epsilon: f64,
    rng: &mut R,
) -> Result<Trajectory> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!("epsilon {epsilon} outside [0, 1]")));
    }
    let mut s = env.source();
    let mut steps = Vec::with_capacity(env.size());
    while !env.is_terminal(&s) {
        let explore = epsilon > 0.0 && rng.gen::<f64>() < epsilon;
        let edge = if explore || pf.kind() == HeadKind::Uniform {
            let mut edges = env.children(&s);
            let i = rng.gen_range(0..edges.len());
            edges.swap_remove(i)
        } else {
            let mut ev = pf.evaluate(env, &s)?;
            let i = sample_index(ev.log_probs.iter().map(|l| l.exp()), rng);
            ev.edges.swap_remove(i)
        };
        s = edge.to.clone();
        steps.push(edge);
    }
    Ok(Trajectory::new(steps))
}

/// Walks parents from `x` back to the source by sampling the backward head.
pub fn sample_backward_trajectory<R: Rng + ?Sized>(
    env: &Env,
    pb: &PolicyHead,
    x: &State,
    rng: &mut R,
) -> Result<Trajectory> {
    if !env.is_terminal(x) {
        return Err(Error::InvalidArgument(format!("{:?} is not terminal", env.label(x))));
    }
    let mut s = x.clone();
    let mut rev = Vec::with_capacity(env.size());
    while env.depth(&s) > 0 {
        let mut ev = pb.evaluate(env, &s)?;
        let i = if pb.kind() == HeadKind::Uniform {
            rng.gen_range(0..ev.edges.len())
        } else {
            sample_index(ev.log_probs.iter().map(|l| l.exp()), rng)
        };
        let e = ev.edges.swap_remove(i);
        s = e.from.clone();
        rev.push(e);
    }
    rev.reverse();
    Ok(Trajectory::new(rev))
}

/// `E_{tau ~ P_F} sum_t H[P_F(.|s_t)]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Entropy {
    Exact(f64),
    MonteCarlo { mean: f64, std_err: f64, samples: usize },
}

impl Entropy {
    pub fn value(&self) -> f64 {
        match *self {
            Entropy::Exact(v) => v,
            Entropy::MonteCarlo { mean, .. } => mean,
        }
    }
}

fn entropy_of(ev: &Evaluated) -> f64 {
    -ev.log_probs.iter().map(|l| if l.is_finite() { l.exp() * l } else { 0.0 }).sum::<f64>()
}

/// Exact flow entropy by a forward pass over visit probabilities, or a
/// Monte-Carlo estimate when the state space exceeds `budget` and
/// `mc_samples` is given.
pub fn flow_entropy<R: Rng + ?Sized>(
    env: &Env,
    pf: &PolicyHead,
    budget: u128,
    mc_samples: Option<usize>,
    exec: Exec,
    rng: &mut R,
) -> Result<Entropy> {
    match Dag::full(env, budget) {
        Ok(dag) => {
            let reach = forward_reach(env, pf, &dag, exec)?;
            let mut h = 0.0;
            for level in &dag.levels[..env.size()] {
                let evs = par::map_range(exec, level.len(), |j| pf.evaluate(env, &dag.states[level.start + j]));
                for (j, ev) in evs.into_iter().enumerate() {
                    h += reach[level.start + j] * entropy_of(&ev?);
                }
            }
            Ok(Entropy::Exact(h))
        }
        Err(e @ Error::BudgetExceeded { .. }) => {
            let Some(samples) = mc_samples else { return Err(e) };
            monte_carlo_entropy(env, pf, samples, rng)
        }
        Err(e) => Err(e),
    }
}

pub fn monte_carlo_entropy<R: Rng + ?Sized>(env: &Env, pf: &PolicyHead, samples: usize, rng: &mut R) -> Result<Entropy> {
    if samples < 2 {
        return Err(Error::InvalidArgument("need at least 2 Monte-Carlo samples".into()));
    }
    let mut vals = Vec::with_capacity(samples);
    for _ in 0..samples {
        let tau = sample_forward_trajectory(env, pf, 0.0, rng)?;
        let mut h = 0.0;
        for e in &tau.steps {
            h += entropy_of(&pf.evaluate(env, &e.from)?);
        }
        vals.push(h);
    }
    let n = samples as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(Entropy::MonteCarlo {
        mean,
        std_err: (var / n).sqrt(),
        samples,
    })
}

/// Probability that a `P_F` rollout visits each state of `dag`.
pub fn forward_reach(env: &Env, pf: &PolicyHead, dag: &Dag, exec: Exec) -> Result<Vec<f64>> {
    let mut reach = vec![0.0; dag.len()];
    let src = dag
        .get(&env.source())
        .ok_or_else(|| Error::InvalidArgument("DAG does not contain the source".into()))?;
    reach[src] = 1.0;
    for level in &dag.levels[..dag.levels.len().saturating_sub(1)] {
        let evs = par::map_range(exec, level.len(), |j| pf.evaluate(env, &dag.states[level.start + j]));
        for (j, ev) in evs.into_iter().enumerate() {
            let ev = ev?;
            let r = reach[level.start + j];
            if r == 0.0 {
                continue;
            }
            for (e, lp) in ev.edges.iter().zip(&ev.log_probs) {
                if let Some(k) = dag.get(&e.to) {
                    reach[k] += r * lp.exp();
                }
            }
        }
    }
    Ok(reach)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{trajectories_to, DEFAULT_BUDGET};
    use crate::rng::{substream, Stream};
    use std::collections::HashMap;

    fn st(env: &Env, s: &str) -> State {
        env.parse_label(s).unwrap()
    }

    #[test]
    fn uniform_forward_on_a() {
        let env = Env::string_pa(2, 3);
        let ev = PolicyHead::uniform(Direction::Forward).evaluate(&env, &st(&env, "a")).unwrap();
        assert_eq!(ev.len(), 4);
        for p in ev.probs() {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn ssr_with_constant_output_is_uniform() {
        let env = Env::string_pa(2, 3);
        let d = env.feature_dim();
        let mut params = vec![0.0; 2 * d + 1];
        params[2 * d] = 3.0; // bias only
        let net = Mlp::from_params(&[2 * d, 1], params).unwrap();
        let head = PolicyHead::with_net(HeadKind::Ssr, Direction::Forward, &env, net).unwrap();
        let ev = head.evaluate(&env, &st(&env, "b")).unwrap();
        for p in ev.probs() {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn sa_clipped_logits() {
        let env = Env::string_pa(2, 3);
        let d = env.feature_dim();
        // output bias: slot 0 at +80 (clipped to 50), the rest at -80 (clipped to -50)
        let mut params = vec![0.0; d * 4 + 4];
        params[d * 4..].copy_from_slice(&[80.0, -80.0, -80.0, -80.0]);
        let net = Mlp::from_params(&[d, 4], params).unwrap();
        let head = PolicyHead::with_net(HeadKind::Sa, Direction::Forward, &env, net).unwrap();
        let ev = head.evaluate(&env, &st(&env, "a")).unwrap();
        let p = ev.probs();
        assert!(p[0] >= 1.0 - 3e-44);
        assert!(ev.log_probs.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn uniform_backward() {
        let pa = Env::string_pa(2, 3);
        let ev = PolicyHead::uniform(Direction::Backward).evaluate(&pa, &st(&pa, "aa")).unwrap();
        assert_eq!(ev.probs(), vec![0.5, 0.5]);
        let ar = Env::string_ar(2, 3);
        let ev = PolicyHead::uniform(Direction::Backward).evaluate(&ar, &st(&ar, "ab")).unwrap();
        assert_eq!(ev.probs(), vec![1.0]);
        assert!(PolicyHead::uniform(Direction::Backward).evaluate(&pa, &pa.source()).is_err());
        assert!(PolicyHead::uniform(Direction::Forward).evaluate(&pa, &st(&pa, "aba")).is_err());
    }

    #[test]
    fn learned_heads_with_equal_logits_are_uniform() {
        let env = Env::bag(3, 4);
        for kind in [HeadKind::Sa, HeadKind::Ssr] {
            let mut head = PolicyHead::new(kind, Direction::Backward, &env, &[8], &mut substream(0, Stream::Init, &[]));
            head.params_mut().iter_mut().for_each(|p| *p = 0.0);
            let ev = head.evaluate(&env, &State(vec![1, 2, 1])).unwrap();
            for p in ev.probs() {
                assert!((p - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn distributions_are_valid_everywhere() {
        let mut rng = substream(9, Stream::Init, &[]);
        for env in [Env::string_pa(3, 3), Env::string_ar(3, 3), Env::bag(3, 4)] {
            let dag = Dag::full(&env, DEFAULT_BUDGET).unwrap();
            for kind in [HeadKind::Sa, HeadKind::Ssr, HeadKind::Uniform] {
                let pf = PolicyHead::new(kind, Direction::Forward, &env, &[8], &mut rng);
                let pb = PolicyHead::new(kind, Direction::Backward, &env, &[8], &mut rng);
                for s in &dag.states {
                    if !env.is_terminal(s) {
                        let ev = pf.evaluate(&env, s).unwrap();
                        assert_eq!(ev.len(), env.children(s).len());
                        assert!((ev.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
                        assert!(ev.probs().iter().all(|&p| p > 0.0));
                    }
                    if env.depth(s) > 0 {
                        let ev = pb.evaluate(&env, s).unwrap();
                        assert!((ev.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn ssr_duplicate_edges_share_probability() {
        let env = Env::string_pa(2, 3);
        let head = PolicyHead::new(HeadKind::Ssr, Direction::Forward, &env, &[8], &mut substream(4, Stream::Init, &[]));
        let ev = head.evaluate(&env, &st(&env, "a")).unwrap();
        // prepend(a) and append(a) both reach "aa"
        assert_eq!(ev.edges[0].to, ev.edges[2].to);
        assert_eq!(ev.log_probs[0], ev.log_probs[2]);
    }

    #[test]
    fn epsilon_one_walk_probabilities() {
        // A=2 n=2: first step 1/2, second step 1/4 per edge
        let env = Env::string_pa(2, 2);
        let head = PolicyHead::new(HeadKind::Sa, Direction::Forward, &env, &[4], &mut substream(1, Stream::Init, &[]));
        let mut counts: HashMap<Vec<crate::mdp::Action>, usize> = HashMap::new();
        let mut rng = substream(2, Stream::Train, &[]);
        let n = 40_000;
        for _ in 0..n {
            let t = sample_forward_trajectory(&env, &head, 1.0, &mut rng).unwrap();
            *counts.entry(t.actions().collect()).or_default() += 1;
        }
        assert_eq!(counts.len(), 8);
        for c in counts.values() {
            let p = *c as f64 / n as f64;
            assert!((p - 0.125).abs() < 4.0 * (0.125f64 * 0.875 / n as f64).sqrt(), "{p}");
        }
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let env = Env::string_pa(3, 4);
        let head = PolicyHead::new(HeadKind::Ssr, Direction::Forward, &env, &[8], &mut substream(1, Stream::Init, &[]));
        let a = sample_forward_trajectory(&env, &head, 0.1, &mut substream(5, Stream::Train, &[1])).unwrap();
        let b = sample_forward_trajectory(&env, &head, 0.1, &mut substream(5, Stream::Train, &[1])).unwrap();
        assert_eq!(a, b);
        assert!(a.is_chained());
        assert_eq!(a.source(), &env.source());
    }

    #[test]
    fn deterministic_head_gives_unique_trajectory() {
        let env = Env::string_ar(2, 3);
        let d = env.feature_dim();
        let mut params = vec![0.0; d * 2 + 2];
        params[d * 2] = 50.0;
        params[d * 2 + 1] = -50.0;
        let net = Mlp::from_params(&[d, 2], params).unwrap();
        let head = PolicyHead::with_net(HeadKind::Sa, Direction::Forward, &env, net).unwrap();
        for seed in 0..20 {
            let t = sample_forward_trajectory(&env, &head, 0.0, &mut substream(seed, Stream::Train, &[])).unwrap();
            assert_eq!(env.label(t.terminal()), "aaa");
        }
    }

    #[test]
    fn uniform_backward_sampling_covers_trajectories_evenly() {
        let env = Env::string_pa(3, 4);
        let x = st(&env, "abca");
        let pb = PolicyHead::uniform(Direction::Backward);
        let all = trajectories_to(&env, &x);
        assert_eq!(all.len(), 8);
        let mut counts: HashMap<Trajectory, usize> = HashMap::new();
        let mut rng = substream(3, Stream::Replay, &[]);
        let n = 16_000;
        for _ in 0..n {
            let t = sample_backward_trajectory(&env, &pb, &x, &mut rng).unwrap();
            assert!(t.is_chained());
            *counts.entry(t).or_default() += 1;
        }
        assert_eq!(counts.len(), 8);
        for c in counts.values() {
            let p = *c as f64 / n as f64;
            assert!((p - 0.125).abs() < 4.0 * (0.125f64 * 0.875 / n as f64).sqrt());
        }
        let ar = Env::string_ar(2, 3);
        let t = sample_backward_trajectory(&ar, &pb, &st(&ar, "bab"), &mut rng).unwrap();
        assert_eq!(t.len(), 3);
        let one = Env::string_pa(2, 1);
        assert_eq!(sample_backward_trajectory(&one, &pb, &st(&one, "b"), &mut rng).unwrap().len(), 1);
    }

    #[test]
    fn uniform_trajectory_log_probs() {
        let env = Env::string_pa(2, 3);
        let x = st(&env, "aba");
        let t = &trajectories_to(&env, &x)[0];
        let lpf = PolicyHead::uniform(Direction::Forward).traj_log_prob(&env, t).unwrap();
        assert!((lpf + 32f64.ln()).abs() < 1e-12);
        let lpb = PolicyHead::uniform(Direction::Backward).traj_log_prob(&env, t).unwrap();
        assert!((lpb + 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn entropy_uniform_and_deterministic() {
        let env = Env::string_pa(2, 2);
        let mut rng = substream(0, Stream::Eval, &[]);
        let h = flow_entropy(&env, &PolicyHead::uniform(Direction::Forward), DEFAULT_BUDGET, None, Exec::Sequential, &mut rng).unwrap();
        assert!((h.value() - (2f64.ln() + 4f64.ln())).abs() < 1e-12);

        let ar = Env::string_ar(2, 3);
        let d = ar.feature_dim();
        let mut params = vec![0.0; d * 2 + 2];
        params[d * 2] = 50.0;
        params[d * 2 + 1] = -50.0;
        let head = PolicyHead::with_net(HeadKind::Sa, Direction::Forward, &ar, Mlp::from_params(&[d, 2], params).unwrap()).unwrap();
        let h = flow_entropy(&ar, &head, DEFAULT_BUDGET, None, Exec::Sequential, &mut rng).unwrap();
        assert!(h.value().abs() < 1e-40);
    }

    #[test]
    fn entropy_monte_carlo_agrees_with_exact() {
        let env = Env::string_pa(2, 4);
        let head = PolicyHead::new(HeadKind::Sa, Direction::Forward, &env, &[8], &mut substream(6, Stream::Init, &[]));
        let mut rng = substream(6, Stream::Eval, &[]);
        let exact = flow_entropy(&env, &head, DEFAULT_BUDGET, None, Exec::Parallel, &mut rng).unwrap().value();
        let Entropy::MonteCarlo { mean, std_err, .. } = flow_entropy(&env, &head, 10, Some(4000), Exec::Sequential, &mut rng).unwrap() else {
            panic!("expected Monte-Carlo fallback");
        };
        assert!((mean - exact).abs() <= 3.0 * std_err, "{mean} vs {exact} ± {std_err}");
        assert!(flow_entropy(&env, &head, 10, None, Exec::Sequential, &mut rng).is_err());
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let mut rng = substream(8, Stream::Init, &[]);
        for env in [Env::string_pa(3, 3), Env::bag(3, 3)] {
            for (kind, dir) in [
                (HeadKind::Sa, Direction::Forward),
                (HeadKind::Ssr, Direction::Forward),
                (HeadKind::Sa, Direction::Backward),
                (HeadKind::Ssr, Direction::Backward),
            ] {
                let mut head = PolicyHead::new(kind, dir, &env, &[6], &mut rng);
                let s = match env.kind() {
                    crate::mdp::EnvKind::Bag => State(vec![1, 1, 0]),
                    _ => st(&env, "ab"),
                };
                let ev = head.evaluate(&env, &s).unwrap();
                let weights: Vec<f64> = (0..ev.len()).map(|i| (i as f64 * 0.7).sin()).collect();
                let mut g = vec![0.0; head.param_count()];
                head.backprop(&ev, &weights, &mut g);
                let objective = |h: &PolicyHead| -> f64 {
                    let ev = h.evaluate(&env, &s).unwrap();
                    ev.log_probs.iter().zip(&weights).map(|(l, w)| l * w).sum()
                };
                let eps = 1e-5;
                for i in 0..head.param_count() {
                    let orig = head.params()[i];
                    head.params_mut()[i] = orig + eps;
                    let up = objective(&head);
                    head.params_mut()[i] = orig - eps;
                    let dn = objective(&head);
                    head.params_mut()[i] = orig;
                    let fd = (up - dn) / (2.0 * eps);
                    let err = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-7);
                    assert!(err < 1e-4 || (fd - g[i]).abs() < 1e-9, "{kind:?} {dir:?} param {i}: {fd} vs {}", g[i]);
                }
            }
        }
    }
}
