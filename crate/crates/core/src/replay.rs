//! The dataset of observed terminals and reward-prioritized replay.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::mdp::{Env, State};

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub state: State,
    pub reward: f64,
    pub round: u64,
}

/// Insertion-ordered set of `(x, R(x))` with a reward-ranked index.
///
/// Rank order is reward descending, ties by insertion order.
#[derive(Clone, Debug, Default)]
pub struct DatasetX {
    entries: Vec<Entry>,
    index: HashMap<State, usize>,
    ranked: Vec<usize>,
}

/// `ceil(frac * n)` without floating-point overshoot on exact products.
pub fn ceil_fraction(frac: f64, n: usize) -> usize {
    let v = frac * n as f64;
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r as usize
    } else {
        v.ceil() as usize
    }
}

impl DatasetX {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn contains(&self, x: &State) -> bool {
        self.index.contains_key(x)
    }

    pub fn reward_of(&self, x: &State) -> Option<f64> {
        self.index.get(x).map(|&i| self.entries[i].reward)
    }

    /// Entry indices in rank order.
    pub fn ranked(&self) -> &[usize] {
        &self.ranked
    }

    /// Adds `x` if new. A repeated `x` must carry the same reward.
    pub fn insert(&mut self, env: &Env, x: State, reward: f64, round: u64) -> Result<bool> {
        if let Some(&i) = self.index.get(&x) {
            let stored = self.entries[i].reward;
            if stored.to_bits() != reward.to_bits() {
                return Err(Error::RewardMismatch {
                    terminal: env.label(&x),
                    stored,
                    got: reward,
                });
            }
            return Ok(false);
        }
        let i = self.entries.len();
        let pos = self.ranked.partition_point(|&j| self.entries[j].reward >= reward);
        self.ranked.insert(pos, i);
        self.index.insert(x.clone(), i);
        self.entries.push(Entry { state: x, reward, round });
        Ok(true)
    }

    /// Size of the top partition: `ceil(top_fraction * |X|)`, at least 1 and
    /// leaving at least one entry below.
    pub fn top_count(&self, top_fraction: f64) -> usize {
        ceil_fraction(top_fraction, self.len()).max(1).min(self.len().saturating_sub(1))
    }

    /// `ceil(batch_fraction * batch)` draws from the top partition and the
    /// rest from the remainder, uniformly with replacement.
    pub fn prt_sample<R: Rng + ?Sized>(&self, batch: usize, batch_fraction: f64, top_fraction: f64, rng: &mut R) -> Result<Vec<usize>> {
        if batch == 0 {
            return Err(Error::InvalidArgument("replay batch size must be positive".into()));
        }
        if self.len() < 2 {
            return Err(Error::InvalidArgument(format!("replay needs at least 2 observed terminals, have {}", self.len())));
        }
        let top = self.top_count(top_fraction);
        let n_top = ceil_fraction(batch_fraction, batch).min(batch);
        let mut out = Vec::with_capacity(batch);
        for _ in 0..n_top {
            out.push(self.ranked[rng.gen_range(0..top)]);
        }
        for _ in n_top..batch {
            out.push(self.ranked[rng.gen_range(top..self.len())]);
        }
        Ok(out)
    }

    /// `(x, R)` pairs in insertion order.
    pub fn snapshot(&self) -> Vec<(State, f64)> {
        self.entries.iter().map(|e| (e.state.clone(), e.reward)).collect()
    }

    /// Writes `terminal,reward,round_first_seen`.
    pub fn write_csv(&self, env: &Env, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
        w.write_record(["terminal", "reward", "round_first_seen"])?;
        for e in &self.entries {
            w.write_record([env.label(&e.state), format!("{}", e.reward), e.round.to_string()])?;
        }
        let mut inner = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
        inner.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};

    fn filled(env: &Env, rewards: &[f64]) -> DatasetX {
        let mut d = DatasetX::new();
        for (i, r) in rewards.iter().enumerate() {
            d.insert(env, State(vec![(i % 4) as u8, (i / 4 % 4) as u8, (i / 16 % 4) as u8, (i / 64) as u8]), *r, 0).unwrap();
        }
        d
    }

    #[test]
    fn insert_is_idempotent() {
        let env = Env::string_pa(4, 4);
        let mut d = DatasetX::new();
        assert!(d.insert(&env, State(vec![0, 1, 2, 3]), 1.5, 1).unwrap());
        assert_eq!(d.len(), 1);
        assert!(!d.insert(&env, State(vec![0, 1, 2, 3]), 1.5, 2).unwrap());
        assert_eq!(d.len(), 1);
        assert_eq!(d.entries()[0].round, 1);
        let err = d.insert(&env, State(vec![0, 1, 2, 3]), 2.0, 3).unwrap_err();
        assert!(matches!(err, Error::RewardMismatch { .. }));
    }

    #[test]
    fn ranked_index_matches_sort() {
        let env = Env::string_pa(4, 4);
        let mut rng = substream(0, Stream::Replay, &[]);
        let rewards: Vec<f64> = (0..100).map(|_| (rng.gen_range(0..20) as f64) * 0.5).collect();
        let d = filled(&env, &rewards);
        assert_eq!(d.len(), 100);
        let mut want: Vec<usize> = (0..100).collect();
        want.sort_by(|&a, &b| rewards[b].partial_cmp(&rewards[a]).unwrap().then(a.cmp(&b)));
        assert_eq!(d.ranked(), want.as_slice());
    }

    #[test]
    fn partition_sizes() {
        let env = Env::string_pa(4, 4);
        assert_eq!(filled(&env, &vec![1.0; 100]).top_count(0.1), 10);
        assert_eq!(filled(&env, &vec![1.0; 5]).top_count(0.1), 1);
        assert_eq!(filled(&env, &vec![1.0; 30]).top_count(0.1), 3);
        assert_eq!(filled(&env, &vec![1.0; 31]).top_count(0.1), 4);
        assert_eq!(filled(&env, &vec![1.0; 2]).top_count(0.1), 1);
    }

    #[test]
    fn prt_split() {
        let env = Env::string_pa(4, 4);
        let rewards: Vec<f64> = (0..5).map(|i| i as f64).collect();
        let d = filled(&env, &rewards);
        let draw = d.prt_sample(4, 0.5, 0.1, &mut substream(1, Stream::Replay, &[])).unwrap();
        assert_eq!(draw.iter().filter(|&&i| i == 4).count(), 2);
        assert!(d.prt_sample(0, 0.5, 0.1, &mut substream(1, Stream::Replay, &[])).is_err());
        let one = filled(&env, &[1.0]);
        assert!(one.prt_sample(4, 0.5, 0.1, &mut substream(1, Stream::Replay, &[])).is_err());

        // equal rewards: the tie rule puts the first insertion on top
        let d = filled(&env, &[2.0; 5]);
        let draw = d.prt_sample(4, 0.5, 0.1, &mut substream(2, Stream::Replay, &[])).unwrap();
        assert_eq!(&draw[..2], &[0, 0]);
        assert!(draw[2..].iter().all(|&i| i != 0));
    }

    #[test]
    fn csv_dump() {
        let env = Env::string_pa(2, 2);
        let mut d = DatasetX::new();
        d.insert(&env, State(vec![0, 1]), 0.25, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        d.write_csv(&env, &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "terminal,reward,round_first_seen\nab,0.25,3\n");
    }
}
