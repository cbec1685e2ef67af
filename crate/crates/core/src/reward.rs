//! Reward functions: the bag "repeats" reward, planted-motif string rewards,
//! and user-supplied reward tables.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Env, EnvKind, State};
use crate::rng::{mix, Stream};

/// Repeat-count reward for bags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BagReward {
    pub base: f64,
    /// A bag has the substructure when some symbol appears at least this often.
    pub threshold: usize,
    pub low: f64,
    pub high: f64,
    /// Probability that a bag with the substructure gets `low`.
    pub p_low: f64,
    pub seed: u64,
}

impl BagReward {
    /// Multiset of 13 over 7 symbols: base 0.01, >= 7 repeats gives 10 (75%) or 30.
    pub fn standard(seed: u64) -> Self {
        BagReward {
            base: 0.01,
            threshold: 7,
            low: 10.0,
            high: 30.0,
            p_low: 0.75,
            seed,
        }
    }

    fn value(&self, env: &Env, x: &State) -> f64 {
        let max = x.0.iter().copied().max().unwrap_or(0) as usize;
        if max < self.threshold {
            return self.base;
        }
        // frozen per-x coin: a hash of (seed, x) mapped to [0, 1)
        let h = mix(self.seed, Stream::Reward, &[env.state_id(x)]);
        let u = (h >> 11) as f64 / (1u64 << 53) as f64;
        if u < self.p_low {
            self.low
        } else {
            self.high
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Motif {
    pub pattern: String,
    pub bonus: f64,
}

/// `scale * (base + sum of bonuses of motifs occurring as substrings)^exponent`.
///
/// Motif occurrence is a substring test on the terminal string regardless of
/// the MDP, so the same reward can be used with prepend/append and
/// autoregressive generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotifReward {
    pub base: f64,
    pub motifs: Vec<(Vec<u8>, f64)>,
    pub exponent: f64,
    pub scale: f64,
}

impl MotifReward {
    pub fn new(env: &Env, base: f64, motifs: &[Motif], exponent: f64, scale: f64) -> Result<Self> {
        if !env.is_string() {
            return Err(Error::Config("string_motif reward needs a string environment".into()));
        }
        if !(base > 0.0) || !(exponent > 0.0) || !(scale > 0.0) {
            return Err(Error::Config("motif base, exponent and scale must be positive".into()));
        }
        let mut parsed = Vec::with_capacity(motifs.len());
        for m in motifs {
            let sym = env
                .parse_label(&m.pattern)
                .filter(|s| !s.0.is_empty())
                .ok_or_else(|| Error::Config(format!("motif {:?} is not a string over the alphabet", m.pattern)))?;
            if m.bonus < 0.0 {
                return Err(Error::Config(format!("motif {:?} has a negative bonus", m.pattern)));
            }
            parsed.push((sym.0, m.bonus));
        }
        Ok(MotifReward {
            base,
            motifs: parsed,
            exponent,
            scale,
        })
    }

    pub fn raw(&self, x: &State) -> f64 {
        self.base
            + self
                .motifs
                .iter()
                .filter(|(m, _)| x.0.windows(m.len()).any(|w| w == m.as_slice()))
                .map(|(_, b)| b)
                .sum::<f64>()
    }

    fn value(&self, x: &State) -> f64 {
        self.scale * self.raw(x).powf(self.exponent)
    }
}

/// Transformed scores keyed by terminal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardTable {
    pub exponent: f64,
    pub max_scale: f64,
    entries: HashMap<Vec<u8>, f64>,
}

impl RewardTable {
    pub const FLOOR_FRACTION: f64 = 1e-6;

    /// Min-max normalize to [0, 1], raise to `exponent`, rescale so the
    /// maximum equals `max_scale`, floor at `1e-6 * max_scale`. A table whose
    /// scores are all equal normalizes to 1 everywhere.
    pub fn from_scores(rows: Vec<(State, f64)>, exponent: f64, max_scale: f64) -> Result<Self> {
        if !(exponent > 0.0) || !(max_scale > 0.0) {
            return Err(Error::Config("table exponent and max_scale must be positive".into()));
        }
        let (lo, hi) = rows
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, s)| (lo.min(*s), hi.max(*s)));
        let floor = Self::FLOOR_FRACTION * max_scale;
        let entries = rows
            .into_iter()
            .map(|(x, s)| {
                let norm = if hi > lo { (s - lo) / (hi - lo) } else { 1.0 };
                (x.0, (norm.powf(exponent) * max_scale).max(floor))
            })
            .collect();
        Ok(RewardTable {
            exponent,
            max_scale,
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, x: &State) -> Option<f64> {
        self.entries.get(&x.0).copied()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum RewardFn {
    Bag(BagReward),
    Motif(MotifReward),
    Table(RewardTable),
}

impl RewardFn {
    pub fn kind_name(&self) -> &'static str {
        match self {
            RewardFn::Bag(_) => "bag_builtin",
            RewardFn::Motif(_) => "string_motif",
            RewardFn::Table(_) => "table",
        }
    }

    /// `R(x)`, strictly positive. Only table rewards can fail.
    pub fn reward(&self, env: &Env, x: &State) -> Result<f64> {
        match self {
            RewardFn::Bag(b) => Ok(b.value(env, x)),
            RewardFn::Motif(m) => Ok(m.value(x)),
            RewardFn::Table(t) => t.get(x).ok_or_else(|| Error::MissingReward(env.label(x))),
        }
    }
}

/// Reads a `sequence,score` CSV for a string environment.
pub fn load_reward_table(path: &Path, env: &Env, exponent: f64, max_scale: f64) -> Result<RewardFn> {
    if env.kind() == EnvKind::Bag {
        return Err(Error::Config("reward tables are only supported for string environments".into()));
    }
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: display.clone(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file);
    let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if headers.len() != 2 || &headers[0] != "sequence" || &headers[1] != "score" {
        return Err(parse_err(1, format!("expected header `sequence,score`, got `{}`", headers.iter().collect::<Vec<_>>().join(","))));
    }
    let mut seen = HashMap::new();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| parse_err(line, e.to_string()))?;
        if record.len() != 2 {
            return Err(parse_err(line, format!("expected 2 fields, got {}", record.len())));
        }
        let seq = &record[0];
        if seq.len() != env.size() {
            return Err(parse_err(line, format!("sequence {seq:?} has length {}, expected {}", seq.len(), env.size())));
        }
        let x = env
            .parse_label(seq)
            .ok_or_else(|| parse_err(line, format!("sequence {seq:?} uses letters outside the alphabet of size {}", env.alphabet())))?;
        let score: f64 = record[1]
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| parse_err(line, format!("score {:?} is not a finite number", &record[1])))?;
        if let Some(first) = seen.insert(x.clone(), line) {
            return Err(parse_err(line, format!("duplicate sequence {seq:?} (first seen on line {first})")));
        }
        rows.push((x, score));
    }
    if rows.is_empty() {
        return Err(parse_err(1, "table has no rows".into()));
    }
    Ok(RewardFn::Table(RewardTable::from_scores(rows, exponent, max_scale)?))
}
