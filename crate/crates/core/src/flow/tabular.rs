use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::mdp::{trajectories_to, Edge, Env, State, Trajectory};

/// A nonnegative flow assigned to each complete trajectory.
///
/// State and edge flows are sums over the trajectories passing through them,
/// and the induced forward policy is `F(s -> s') / F(s)`.
#[derive(Clone, Debug, Default)]
pub struct TabularTrajectoryFlow {
    trajs: Vec<Trajectory>,
    flows: Vec<f64>,
    index: HashMap<Trajectory, usize>,
    by_terminal: HashMap<State, Vec<usize>>,
}

impl TabularTrajectoryFlow {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every trajectory to each of `terminals`, each with flow `init`.
    pub fn over_terminals(env: &Env, terminals: &[State], init: f64) -> Self {
        let mut t = Self::new();
        for x in terminals {
            for tau in trajectories_to(env, x) {
                t.insert(tau, init);
            }
        }
        t
    }

    /// Sets the flow of `tau`, adding it if new.
    pub fn insert(&mut self, tau: Trajectory, flow: f64) {
        if let Some(&i) = self.index.get(&tau) {
            self.flows[i] = flow;
            return;
        }
        let i = self.trajs.len();
        self.by_terminal.entry(tau.terminal().clone()).or_default().push(i);
        self.index.insert(tau.clone(), i);
        self.trajs.push(tau);
        self.flows.push(flow);
    }

    pub fn len(&self) -> usize {
        self.trajs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajs.is_empty()
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajs
    }

    pub fn flows(&self) -> &[f64] {
        &self.flows
    }

    pub fn flows_mut(&mut self) -> &mut [f64] {
        &mut self.flows
    }

    pub fn position(&self, tau: &Trajectory) -> Option<usize> {
        self.index.get(tau).copied()
    }

    pub fn flow(&self, tau: &Trajectory) -> f64 {
        self.position(tau).map_or(0.0, |i| self.flows[i])
    }

    pub fn total(&self) -> f64 {
        self.flows.iter().sum()
    }

    /// Indices of the trajectories ending at `x`.
    pub fn ending_at(&self, x: &State) -> &[usize] {
        self.by_terminal.get(x).map_or(&[], |v| v.as_slice())
    }

    pub fn terminal_flow(&self, x: &State) -> f64 {
        self.ending_at(x).iter().map(|&i| self.flows[i]).sum()
    }

    pub fn state_flow(&self, s: &State) -> f64 {
        self.trajs
            .iter()
            .zip(&self.flows)
            .filter(|(t, _)| t.states().any(|u| u == s))
            .map(|(_, f)| f)
            .sum()
    }

    pub fn edge_flow(&self, e: &Edge) -> f64 {
        self.trajs
            .iter()
            .zip(&self.flows)
            .filter(|(t, _)| t.steps.contains(e))
            .map(|(_, f)| f)
            .sum()
    }

    /// Induced forward policy at `s` over `env.children(s)`.
    pub fn forward_policy(&self, env: &Env, s: &State) -> Result<Vec<(Edge, f64)>> {
        let total = self.state_flow(s);
        if total <= 0.0 {
            return Err(Error::InvalidArgument(format!("state {:?} carries no flow", env.label(s))));
        }
        Ok(env
            .children(s)
            .into_iter()
            .map(|e| {
                let f = self.edge_flow(&e);
                (e, f / total)
            })
            .collect())
    }

    /// Index of a trajectory ending at `x`, drawn in proportion to flow.
    pub fn sample_ending_at<R: Rng + ?Sized>(&self, x: &State, rng: &mut R) -> Option<usize> {
        let idx = self.ending_at(x);
        let total: f64 = idx.iter().map(|&i| self.flows[i]).sum();
        if idx.is_empty() || total <= 0.0 {
            return None;
        }
        let u = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        for &i in idx {
            acc += self.flows[i];
            if u < acc {
                return Some(i);
            }
        }
        idx.last().copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};

    #[test]
    fn uniform_flow_induces_edge_counting_policy() {
        let env = Env::string_pa(2, 3);
        let xs: Vec<State> = env.enumerate_terminals(1000).unwrap().collect();
        let t = TabularTrajectoryFlow::over_terminals(&env, &xs, 1.0);
        assert_eq!(t.len(), 8 * 4);
        assert_eq!(t.state_flow(&env.source()), 32.0);
        let x = env.parse_label("aba").unwrap();
        assert_eq!(t.terminal_flow(&x), 4.0);
        let pol = t.forward_policy(&env, &env.parse_label("a").unwrap()).unwrap();
        for (_, p) in pol {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_follows_flow() {
        let env = Env::string_pa(3, 3);
        let x = env.parse_label("abc").unwrap();
        let mut t = TabularTrajectoryFlow::over_terminals(&env, &[x.clone()], 1.0);
        t.flows_mut()[0] = 3.0;
        let mut rng = substream(0, Stream::Theory, &[]);
        let n = 12_000;
        let hits = (0..n).filter(|_| t.sample_ending_at(&x, &mut rng) == Some(0)).count();
        let p = hits as f64 / n as f64;
        assert!((p - 0.5).abs() < 0.02, "{p}");
        assert_eq!(t.sample_ending_at(&env.parse_label("aaa").unwrap(), &mut rng), None);
    }
}
