use std::collections::HashMap;
use std::sync::Mutex;

use rand::Rng;

use crate::error::{Error, Result};
use crate::mdp::{Edge, Env, State, Trajectory};

/// Guide over trajectories ending in a target, built from a frozen snapshot
/// of the observed dataset.
///
/// A child `c` of the current state scores the mean reward of the *other*
/// observed terminals that contain it, and zero if the target does not
/// contain it. When every child scores zero, the transition is uniform over
/// the children the target contains. With `smoothing > 0` each transition is
/// mixed with that uniform distribution, so every trajectory into the target
/// has positive probability.
#[derive(Debug)]
pub struct SubstructureGuide {
    env: Env,
    entries: Vec<(State, f64)>,
    position: HashMap<State, usize>,
    smoothing: f64,
    memo: Mutex<HashMap<State, (f64, usize)>>,
}

impl SubstructureGuide {
    pub fn new(env: &Env, entries: Vec<(State, f64)>, smoothing: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&smoothing) {
            return Err(Error::InvalidArgument(format!("guide smoothing {smoothing} outside [0, 1]")));
        }
        let mut position = HashMap::with_capacity(entries.len());
        for (i, (x, _)) in entries.iter().enumerate() {
            if position.insert(x.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate guide entry {:?}", env.label(x))));
            }
        }
        Ok(SubstructureGuide {
            env: env.clone(),
            entries,
            position,
            smoothing,
            memo: Mutex::new(HashMap::new()),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Reward sum and count over all entries containing `s`, scanning only
    /// `candidates` (which must include every entry containing `s`).
    fn stats(&self, s: &State, candidates: &[usize]) -> (f64, usize) {
        if let Some(&v) = self.memo.lock().unwrap().get(s) {
            return v;
        }
        let mut sum = 0.0;
        let mut count = 0;
        for &i in candidates {
            let (x, r) = &self.entries[i];
            if self.env.contains(s, x) {
                sum += r;
                count += 1;
            }
        }
        self.memo.lock().unwrap().insert(s.clone(), (sum, count));
        (sum, count)
    }

    fn score_with(&self, s: &State, target: &State, candidates: &[usize]) -> f64 {
        if !self.env.contains(s, target) {
            return 0.0;
        }
        let (mut sum, mut count) = self.stats(s, candidates);
        if let Some(&i) = self.position.get(target) {
            sum -= self.entries[i].1;
            count -= 1;
        }
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }

    /// Score of `s` given the target; zero unless the target contains `s`.
    pub fn score(&self, s: &State, target: &State) -> f64 {
        let all: Vec<usize> = (0..self.entries.len()).collect();
        self.score_with(s, target, &all)
    }

    fn transition_with(&self, s: &State, target: &State, candidates: &[usize]) -> Result<(Vec<Edge>, Vec<f64>)> {
        let edges = self.env.children(s);
        let inside: Vec<bool> = edges.iter().map(|e| self.env.contains(&e.to, target)).collect();
        let n_inside = inside.iter().filter(|&&b| b).count();
        if n_inside == 0 {
            return Err(Error::InvalidArgument(format!(
                "{:?} does not lead to the target {:?}",
                self.env.label(s),
                self.env.label(target)
            )));
        }
        let scores: Vec<f64> = edges
            .iter()
            .zip(&inside)
            .map(|(e, &ok)| if ok { self.score_with(&e.to, target, candidates) } else { 0.0 })
            .collect();
        let total: f64 = scores.iter().sum();
        let uniform = 1.0 / n_inside as f64;
        let probs = scores
            .iter()
            .zip(&inside)
            .map(|(&sc, &ok)| {
                if !ok {
                    0.0
                } else {
                    let p = if total > 0.0 { sc / total } else { uniform };
                    (1.0 - self.smoothing) * p + self.smoothing * uniform
                }
            })
            .collect();
        Ok((edges, probs))
    }

    /// Transition probabilities over every forward edge of `s`.
    pub fn transition(&self, s: &State, target: &State) -> Result<(Vec<Edge>, Vec<f64>)> {
        let candidates: Vec<usize> = (0..self.entries.len()).filter(|&i| self.env.contains(s, &self.entries[i].0)).collect();
        self.transition_with(s, target, &candidates)
    }

    fn narrow(&self, s: &State, candidates: &[usize]) -> Vec<usize> {
        candidates.iter().copied().filter(|&i| self.env.contains(s, &self.entries[i].0)).collect()
    }

    /// Log-probability of `tau` under the guide for its terminal.
    pub fn log_prob(&self, tau: &Trajectory) -> Result<f64> {
        let target = tau.terminal();
        let mut candidates: Vec<usize> = (0..self.entries.len()).collect();
        let mut lp = 0.0;
        for e in &tau.steps {
            let (edges, probs) = self.transition_with(&e.from, target, &candidates)?;
            let i = edges
                .iter()
                .position(|c| c.action == e.action)
                .ok_or_else(|| Error::InvalidArgument(format!("edge {e:?} is not legal")))?;
            lp += probs[i].ln();
            candidates = self.narrow(&e.to, &candidates);
        }
        Ok(lp)
    }

    /// Samples a trajectory into `target` and returns it with its log-probability.
    pub fn sample<R: Rng + ?Sized>(&self, target: &State, rng: &mut R) -> Result<(Trajectory, f64)> {
        if !self.env.is_terminal(target) {
            return Err(Error::InvalidArgument(format!("{:?} is not terminal", self.env.label(target))));
        }
        let mut s = self.env.source();
        let mut candidates: Vec<usize> = (0..self.entries.len()).collect();
        let mut steps = Vec::with_capacity(self.env.size());
        let mut lp = 0.0;
        while !self.env.is_terminal(&s) {
            let (mut edges, probs) = self.transition_with(&s, target, &candidates)?;
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = None;
            for (i, p) in probs.iter().enumerate() {
                acc += p;
                if *p > 0.0 {
                    pick = Some(i);
                    if u < acc {
                        break;
                    }
                }
            }
            let i = pick.expect("a transition row has positive mass");
            lp += probs[i].ln();
            let e = edges.swap_remove(i);
            s = e.to.clone();
            candidates = self.narrow(&s, &candidates);
            steps.push(e);
        }
        Ok((Trajectory::new(steps), lp))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{trajectories_to, Action};
    use crate::rng::{substream, Stream};

    fn st(env: &Env, s: &str) -> State {
        env.parse_label(s).unwrap()
    }

    fn guide(env: &Env, rows: &[(&str, f64)], smoothing: f64) -> SubstructureGuide {
        let entries = rows.iter().map(|(l, r)| (st(env, l), *r)).collect();
        SubstructureGuide::new(env, entries, smoothing).unwrap()
    }

    #[test]
    fn score_rules() {
        let env = Env::string_pa(3, 3);
        let g = guide(&env, &[("aab", 1.0), ("caa", 2.0)], 0.0);
        let x = st(&env, "aab");
        assert_eq!(g.score(&st(&env, "c"), &x), 0.0);
        assert_eq!(g.score(&st(&env, "aa"), &x), 2.0);
        assert_eq!(g.score(&st(&env, "ab"), &x), 0.0);
        // the target itself is excluded even when it is the only container
        assert_eq!(g.score(&x, &x), 0.0);
    }

    #[test]
    fn score_is_mean_over_other_containers() {
        let env = Env::string_pa(3, 3);
        let g = guide(&env, &[("aab", 1.0), ("caa", 2.0), ("aac", 4.0), ("bbb", 8.0)], 0.0);
        assert_eq!(g.score(&st(&env, "aa"), &st(&env, "aab")), 3.0);
        assert_eq!(g.score(&st(&env, "aa"), &st(&env, "caa")), 2.5);
    }

    #[test]
    fn transition_normalization_and_corner_case() {
        let env = Env::string_pa(3, 3);
        let x = st(&env, "aab");
        let g = guide(&env, &[("aab", 1.0), ("caa", 2.0)], 0.0);
        let (edges, p) = g.transition(&st(&env, "a"), &x).unwrap();
        for (e, q) in edges.iter().zip(&p) {
            let want = if env.label(&e.to) == "aa" { 0.5 } else { 0.0 };
            assert!((q - want).abs() < 1e-12, "{:?} {q}", e.action);
        }
        // from "aa" no child is shared with another entry: uniform over the contained one
        let (edges, p) = g.transition(&st(&env, "aa"), &x).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let idx = edges.iter().position(|e| e.action == Action::Append(1)).unwrap();
        assert_eq!(p[idx], 1.0);
    }

    #[test]
    fn corner_case_splits_over_contained_children() {
        let env = Env::string_pa(2, 3);
        let x = st(&env, "abb");
        let g = guide(&env, &[("abb", 1.0)], 0.0);
        let (edges, p) = g.transition(&env.source(), &x).unwrap();
        assert_eq!(edges.len(), 2);
        assert_eq!(p, vec![0.5, 0.5]);
        let (edges, p) = g.transition(&st(&env, "b"), &x).unwrap();
        // children "ab" (prepend a) and "bb" (prepend b, append b) are contained
        let contained = edges.iter().filter(|e| env.contains(&e.to, &x)).count();
        assert_eq!(contained, 3);
        for (e, q) in edges.iter().zip(&p) {
            let want = if env.contains(&e.to, &x) { 1.0 / 3.0 } else { 0.0 };
            assert!((q - want).abs() < 1e-12);
        }
    }

    #[test]
    fn literal_shared_symbol_example() {
        // x = "aab", x' = "baa": both length-2 substrings of x appear in x'
        let env = Env::string_pa(2, 3);
        let x = st(&env, "aab");
        let g = guide(&env, &[("aab", 1.0), ("baa", 1.0)], 0.0);
        let (edges, p) = g.transition(&st(&env, "a"), &x).unwrap();
        for (e, q) in edges.iter().zip(&p) {
            let want = if env.label(&e.to) == "aa" { 0.5 } else { 0.0 };
            assert!((q - want).abs() < 1e-12);
        }
        // every sampled trajectory passes through "aa" once at "a"
        let mut rng = substream(1, Stream::Guide, &[]);
        for _ in 0..200 {
            let (t, lp) = g.sample(&x, &mut rng).unwrap();
            assert_eq!(t.terminal(), &x);
            assert!(lp.is_finite());
            assert!((g.log_prob(&t).unwrap() - lp).abs() < 1e-12);
            if t.steps[0].to == st(&env, "a") {
                assert_eq!(env.label(&t.steps[1].to), "aa");
            }
        }
    }

    #[test]
    fn rows_sum_to_one_and_samples_end_at_target() {
        let env = Env::string_pa(3, 4);
        let rows = [("abca", 1.0), ("bcab", 3.0), ("ccca", 0.5), ("abab", 2.0), ("acbc", 1.5)];
        let g = guide(&env, &rows, 0.05);
        let mut rng = substream(7, Stream::Guide, &[]);
        for (label, _) in rows {
            let x = st(&env, label);
            let mut total = 0.0;
            for tau in trajectories_to(&env, &x) {
                let lp = g.log_prob(&tau).unwrap();
                total += lp.exp();
                for s in tau.states().take(4) {
                    let (_, p) = g.transition(s, &x).unwrap();
                    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }
            assert!((total - 1.0).abs() < 1e-9, "{label}: {total}");
            for _ in 0..20 {
                let (t, _) = g.sample(&x, &mut rng).unwrap();
                assert_eq!(t.terminal(), &x);
                assert!(t.is_chained());
            }
        }
    }

    #[test]
    fn autoregressive_guide_is_forced() {
        let env = Env::string_ar(3, 4);
        let g = guide(&env, &[("abca", 1.0), ("abcc", 2.0)], 0.0);
        let (t, lp) = g.sample(&st(&env, "abca"), &mut substream(0, Stream::Guide, &[])).unwrap();
        assert_eq!(lp, 0.0);
        assert_eq!(env.label(t.terminal()), "abca");
    }

    #[test]
    fn seeded_sampling_repeats() {
        let env = Env::bag(3, 4);
        let g = SubstructureGuide::new(&env, vec![(State(vec![2, 2, 0]), 1.0), (State(vec![2, 1, 1]), 4.0), (State(vec![0, 0, 4]), 2.0)], 0.0).unwrap();
        let x = State(vec![2, 2, 0]);
        let a = g.sample(&x, &mut substream(3, Stream::Guide, &[5])).unwrap();
        let b = g.sample(&x, &mut substream(3, Stream::Guide, &[5])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_probability_without_smoothing() {
        let env = Env::string_pa(2, 3);
        let x = st(&env, "aab");
        let tau = trajectories_to(&env, &x)
            .into_iter()
            .find(|t| t.states().any(|s| env.label(s) == "ab"))
            .unwrap();
        let rows = [("aab", 1.0), ("aaa", 2.0)];
        assert_eq!(guide(&env, &rows, 0.0).log_prob(&tau).unwrap(), f64::NEG_INFINITY);
        assert!(guide(&env, &rows, 0.01).log_prob(&tau).unwrap().is_finite());
    }
}
