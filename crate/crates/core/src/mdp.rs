//! Acyclic generative MDPs: bags (multisets), prepend/append strings and
//! autoregressive strings.
//!
//! Edges are `(state, action)` pairs, so the DAG is a multigraph: in the
//! prepend/append MDP, `prepend(a)` and `append(a)` from `"a"` are two
//! distinct edges into `"aa"`. Exit is implicit: every full-length string or
//! full bag is terminal and has no outgoing graph edges.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Bag,
    StringPa,
    StringAr,
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvKind::Bag => "bag",
            EnvKind::StringPa => "string_pa",
            EnvKind::StringAr => "string_ar",
        })
    }
}

/// A node of the generative DAG.
///
/// For strings the payload is the symbol sequence; for bags it is the count
/// vector (one entry per alphabet symbol). A state is only meaningful
/// together with the [`Env`] that produced it.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct State(pub Vec<u8>);

impl State {
    pub fn symbols(&self) -> &[u8] {
        &self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    /// Prepend and append coincide on the empty string; also the bag action.
    Add(u8),
    Prepend(u8),
    Append(u8),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Edge {
    pub from: State,
    pub action: Action,
    pub to: State,
}

/// A complete source-to-sink path.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Trajectory {
    pub steps: Vec<Edge>,
}

impl Trajectory {
    pub fn new(steps: Vec<Edge>) -> Self {
        Trajectory { steps }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn terminal(&self) -> &State {
        &self.steps.last().expect("empty trajectory").to
    }

    pub fn source(&self) -> &State {
        &self.steps.first().expect("empty trajectory").from
    }

    /// `s_0, s_1, ..., s_n`.
    pub fn states(&self) -> impl Iterator<Item = &State> {
        self.steps
            .first()
            .map(|e| &e.from)
            .into_iter()
            .chain(self.steps.iter().map(|e| &e.to))
    }

    pub fn actions(&self) -> impl Iterator<Item = Action> + '_ {
        self.steps.iter().map(|e| e.action)
    }

    pub fn is_chained(&self) -> bool {
        self.steps.windows(2).all(|w| w[0].to == w[1].from)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Env {
    kind: EnvKind,
    alphabet: usize,
    /// Terminal length for strings, capacity for bags.
    size: usize,
}

pub const DEFAULT_BUDGET: u128 = 4_000_000;

impl Env {
    pub fn new(kind: EnvKind, alphabet: usize, size: usize) -> Result<Self> {
        if alphabet == 0 || alphabet > 26 {
            return Err(Error::InvalidArgument(format!(
                "alphabet size must be in 1..=26, got {alphabet}"
            )));
        }
        if size == 0 || size > 64 {
            return Err(Error::InvalidArgument(format!(
                "length/capacity must be in 1..=64, got {size}"
            )));
        }
        Ok(Env {
            kind,
            alphabet,
            size,
        })
    }

    pub fn string_pa(alphabet: usize, len: usize) -> Self {
        Self::new(EnvKind::StringPa, alphabet, len).expect("valid env")
    }

    pub fn string_ar(alphabet: usize, len: usize) -> Self {
        Self::new(EnvKind::StringAr, alphabet, len).expect("valid env")
    }

    pub fn bag(alphabet: usize, capacity: usize) -> Self {
        Self::new(EnvKind::Bag, alphabet, capacity).expect("valid env")
    }

    pub fn kind(&self) -> EnvKind {
        self.kind
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    /// Terminal length (strings) or capacity (bags); also the trajectory length.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn is_string(&self) -> bool {
        self.kind != EnvKind::Bag
    }

    pub fn source(&self) -> State {
        match self.kind {
            EnvKind::Bag => State(vec![0; self.alphabet]),
            _ => State(Vec::new()),
        }
    }

    /// Number of actions taken to reach `s` from the source.
    pub fn depth(&self, s: &State) -> usize {
        match self.kind {
            EnvKind::Bag => s.0.iter().map(|&c| c as usize).sum(),
            _ => s.0.len(),
        }
    }

    pub fn is_terminal(&self, s: &State) -> bool {
        self.depth(s) == self.size
    }

    pub fn is_valid(&self, s: &State) -> bool {
        match self.kind {
            EnvKind::Bag => s.0.len() == self.alphabet && self.depth(s) <= self.size,
            _ => s.0.len() <= self.size && s.0.iter().all(|&c| (c as usize) < self.alphabet),
        }
    }

    pub fn apply(&self, s: &State, action: Action) -> State {
        let mut v = s.0.clone();
        match (self.kind, action) {
            (EnvKind::Bag, Action::Add(c)) => v[c as usize] += 1,
            (_, Action::Add(c)) | (_, Action::Append(c)) => v.push(c),
            (_, Action::Prepend(c)) => v.insert(0, c),
        }
        State(v)
    }

    /// Legal forward edges of `s`; empty for terminal states.
    pub fn children(&self, s: &State) -> Vec<Edge> {
        if self.is_terminal(s) {
            return Vec::new();
        }
        let a = self.alphabet as u8;
        let actions: Vec<Action> = match self.kind {
            EnvKind::Bag => (0..a).map(Action::Add).collect(),
            EnvKind::StringAr => (0..a).map(Action::Append).collect(),
            EnvKind::StringPa if s.0.is_empty() => (0..a).map(Action::Add).collect(),
            EnvKind::StringPa => (0..a)
                .map(Action::Prepend)
                .chain((0..a).map(Action::Append))
                .collect(),
        };
        actions
            .into_iter()
            .map(|action| Edge {
                from: s.clone(),
                to: self.apply(s, action),
                action,
            })
            .collect()
    }

    /// Incoming edges of `s`, with multiplicity; empty for the source.
    pub fn parents(&self, s: &State) -> Vec<Edge> {
        let depth = self.depth(s);
        if depth == 0 {
            return Vec::new();
        }
        let edge = |from: Vec<u8>, action| Edge {
            from: State(from),
            action,
            to: s.clone(),
        };
        match self.kind {
            EnvKind::Bag => (0..self.alphabet)
                .filter(|&c| s.0[c] > 0)
                .map(|c| {
                    let mut v = s.0.clone();
                    v[c] -= 1;
                    edge(v, Action::Add(c as u8))
                })
                .collect(),
            EnvKind::StringAr => {
                let v = &s.0;
                vec![edge(v[..v.len() - 1].to_vec(), Action::Append(v[v.len() - 1]))]
            }
            EnvKind::StringPa => {
                let v = &s.0;
                if v.len() == 1 {
                    vec![edge(Vec::new(), Action::Add(v[0]))]
                } else {
                    vec![
                        edge(v[1..].to_vec(), Action::Prepend(v[0])),
                        edge(v[..v.len() - 1].to_vec(), Action::Append(v[v.len() - 1])),
                    ]
                }
            }
        }
    }

    /// `|X|`: `A^n` for strings, `C(capacity + A - 1, A - 1)` for bags.
    pub fn terminal_count(&self) -> u128 {
        match self.kind {
            EnvKind::Bag => binomial_u128((self.size + self.alphabet - 1) as u64, (self.alphabet - 1) as u64),
            _ => (self.alphabet as u128).saturating_pow(self.size as u32),
        }
    }

    /// Number of reachable states, terminals included.
    pub fn state_count(&self) -> u128 {
        match self.kind {
            // sum_{t<=cap} C(t+A-1, A-1) = C(cap+A, A)
            EnvKind::Bag => binomial_u128((self.size + self.alphabet) as u64, self.alphabet as u64),
            _ => (0..=self.size as u32)
                .map(|l| (self.alphabet as u128).saturating_pow(l))
                .fold(0u128, |a, b| a.saturating_add(b)),
        }
    }

    /// Every terminal exactly once, in lexicographic payload order.
    pub fn enumerate_terminals(&self, budget: u128) -> Result<Terminals> {
        let required = self.terminal_count();
        if required > budget {
            return Err(Error::BudgetExceeded {
                what: "terminal enumeration",
                required,
                budget,
            });
        }
        Ok(Terminals::new(self.clone()))
    }

    /// Substructure test: is there a directed path from `s` to `x`?
    pub fn contains(&self, s: &State, x: &State) -> bool {
        match self.kind {
            EnvKind::Bag => s.0.iter().zip(&x.0).all(|(a, b)| a <= b),
            EnvKind::StringAr => x.0.starts_with(&s.0),
            EnvKind::StringPa => is_substring(&s.0, &x.0),
        }
    }

    /// Reachability by breadth-first search in the DAG; the generic
    /// definition [`Env::contains`] must agree with.
    pub fn contains_bfs(&self, s: &State, x: &State) -> bool {
        let target_depth = self.depth(x);
        let mut seen = HashSet::new();
        let mut queue = VecDeque::from([s.clone()]);
        while let Some(u) = queue.pop_front() {
            if &u == x {
                return true;
            }
            if self.depth(&u) >= target_depth {
                continue;
            }
            for e in self.children(&u) {
                if seen.insert(e.to.clone()) {
                    queue.push_back(e.to);
                }
            }
        }
        false
    }

    /// Fixed-width feature vector.
    pub fn encode(&self, s: &State) -> Vec<f64> {
        let mut out = vec![0.0; self.feature_dim()];
        self.encode_into(s, &mut out);
        out
    }

    pub fn encode_into(&self, s: &State, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.feature_dim());
        out.iter_mut().for_each(|v| *v = 0.0);
        let cap = self.size as f64;
        match self.kind {
            EnvKind::Bag => {
                for (i, &c) in s.0.iter().enumerate() {
                    out[i] = c as f64 / cap;
                }
                out[self.alphabet] = self.depth(s) as f64 / cap;
            }
            _ => {
                let classes = self.alphabet + 1;
                for pos in 0..self.size {
                    let class = s.0.get(pos).map_or(0, |&c| c as usize + 1);
                    out[pos * classes + class] = 1.0;
                }
                out[self.size * classes] = s.0.len() as f64 / cap;
            }
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self.kind {
            EnvKind::Bag => self.alphabet + 1,
            _ => self.size * (self.alphabet + 1) + 1,
        }
    }

    /// Injective key of a state within this environment.
    pub fn state_id(&self, s: &State) -> u64 {
        match self.kind {
            EnvKind::Bag => {
                let radix = self.size as u64 + 1;
                s.0.iter().fold(0u64, |acc, &c| acc * radix + c as u64)
            }
            _ => {
                // offset by all shorter strings, then read the string base-A
                let a = self.alphabet as u64;
                let offset: u64 = (0..s.0.len() as u32).map(|l| a.pow(l)).sum();
                offset + s.0.iter().fold(0u64, |acc, &c| acc * a + c as u64)
            }
        }
    }

    /// Number of forward action slots for a state-to-action-logits head.
    pub fn forward_slots(&self) -> usize {
        match self.kind {
            EnvKind::StringPa => 2 * self.alphabet,
            _ => self.alphabet,
        }
    }

    pub fn forward_slot(&self, action: Action) -> usize {
        let a = self.alphabet;
        match (self.kind, action) {
            (EnvKind::StringPa, Action::Append(c)) => a + c as usize,
            (_, Action::Add(c)) | (_, Action::Prepend(c)) | (_, Action::Append(c)) => c as usize,
        }
    }

    pub fn backward_slots(&self) -> usize {
        match self.kind {
            EnvKind::StringPa => 2,
            EnvKind::StringAr => 1,
            EnvKind::Bag => self.alphabet,
        }
    }

    /// Slot of the backward edge that undoes `action`.
    pub fn backward_slot(&self, action: Action) -> usize {
        match (self.kind, action) {
            (EnvKind::Bag, Action::Add(c)) => c as usize,
            (EnvKind::StringPa, Action::Append(_)) => 1,
            _ => 0,
        }
    }

    /// Human-readable name: letters for strings, sorted letters for bags.
    pub fn label(&self, s: &State) -> String {
        let letter = |c: u8| (b'a' + c) as char;
        match self.kind {
            EnvKind::Bag => s
                .0
                .iter()
                .enumerate()
                .flat_map(|(i, &c)| std::iter::repeat_n(letter(i as u8), c as usize))
                .collect(),
            _ => s.0.iter().map(|&c| letter(c)).collect(),
        }
    }

    /// Inverse of [`Env::label`]; `None` if a letter is outside the alphabet.
    pub fn parse_label(&self, text: &str) -> Option<State> {
        let mut symbols = Vec::with_capacity(text.len());
        for ch in text.chars() {
            if !ch.is_ascii_lowercase() {
                return None;
            }
            let c = ch as u8 - b'a';
            if c as usize >= self.alphabet {
                return None;
            }
            symbols.push(c);
        }
        let s = match self.kind {
            EnvKind::Bag => {
                let mut counts = vec![0u8; self.alphabet];
                for c in symbols {
                    counts[c as usize] += 1;
                }
                State(counts)
            }
            _ => State(symbols),
        };
        self.is_valid(&s).then_some(s)
    }

    /// Number of distinct trajectories ending at terminal `x`.
    pub fn trajectory_count(&self, x: &State) -> u128 {
        match self.kind {
            EnvKind::StringAr => 1,
            EnvKind::StringPa => 1u128 << (x.0.len().saturating_sub(1)),
            EnvKind::Bag => {
                let mut total = 0u64;
                let mut acc = 1u128;
                for &c in &x.0 {
                    for i in 1..=c as u64 {
                        total += 1;
                        acc = acc * total as u128 / i as u128;
                    }
                }
                acc
            }
        }
    }
}

fn is_substring(needle: &[u8], hay: &[u8]) -> bool {
    needle.is_empty() || hay.windows(needle.len()).any(|w| w == needle)
}

pub fn binomial_u128(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Odometer over terminals.
pub struct Terminals {
    env: Env,
    current: Option<Vec<u8>>,
}

impl Terminals {
    fn new(env: Env) -> Self {
        let first = match env.kind {
            EnvKind::Bag => {
                let mut v = vec![0u8; env.alphabet];
                v[env.alphabet - 1] = env.size as u8;
                v
            }
            _ => vec![0u8; env.size],
        };
        Terminals {
            env,
            current: Some(first),
        }
    }
}

impl Iterator for Terminals {
    type Item = State;

    fn next(&mut self) -> Option<State> {
        let cur = self.current.take()?;
        let mut next = cur.clone();
        let advanced = match self.env.kind {
            EnvKind::Bag => next_composition(&mut next),
            _ => {
                let a = self.env.alphabet as u8;
                let mut i = next.len();
                loop {
                    if i == 0 {
                        break false;
                    }
                    i -= 1;
                    if next[i] + 1 < a {
                        next[i] += 1;
                        break true;
                    }
                    next[i] = 0;
                }
            }
        };
        if advanced {
            self.current = Some(next);
        }
        Some(State(cur))
    }
}

/// Advances a composition (fixed total, fixed number of parts) to the next
/// one in lexicographic order. Returns false after the last.
fn next_composition(v: &mut [u8]) -> bool {
    let k = v.len();
    if k < 2 {
        return false;
    }
    // rightmost position i < k-1 whose suffix (i+1..) holds a positive count
    let mut i = k - 1;
    loop {
        if i == 0 {
            return false;
        }
        i -= 1;
        let tail: u32 = v[i + 1..].iter().map(|&c| c as u32).sum();
        if tail > 0 {
            v[i] += 1;
            let rest = tail - 1;
            for c in v[i + 1..].iter_mut() {
                *c = 0;
            }
            v[k - 1] = rest as u8;
            return true;
        }
    }
}

/// States of a (sub-)DAG in topological order, grouped by depth.
#[derive(Clone, Debug)]
pub struct Dag {
    pub states: Vec<State>,
    pub index: HashMap<State, usize>,
    pub levels: Vec<Range<usize>>,
}

impl Dag {
    /// All states reachable from the source.
    pub fn full(env: &Env, budget: u128) -> Result<Dag> {
        let required = env.state_count();
        if required > budget {
            return Err(Error::BudgetExceeded {
                what: "state enumeration",
                required,
                budget,
            });
        }
        let mut dag = Dag {
            states: vec![env.source()],
            index: HashMap::new(),
            levels: vec![0..1],
        };
        dag.index.insert(env.source(), 0);
        for depth in 0..env.size() {
            let range = dag.levels[depth].clone();
            let start = dag.states.len();
            for i in range {
                let s = dag.states[i].clone();
                for e in env.children(&s) {
                    if !dag.index.contains_key(&e.to) {
                        dag.index.insert(e.to.clone(), dag.states.len());
                        dag.states.push(e.to);
                    }
                }
            }
            dag.levels.push(start..dag.states.len());
        }
        Ok(dag)
    }

    /// States from which at least one of `terminals` is reachable.
    pub fn ancestors_of(env: &Env, terminals: &[State]) -> Dag {
        let n = env.size();
        let mut by_level: Vec<Vec<State>> = vec![Vec::new(); n + 1];
        let mut seen: HashSet<State> = HashSet::new();
        for x in terminals {
            if seen.insert(x.clone()) {
                by_level[n].push(x.clone());
            }
        }
        for depth in (1..=n).rev() {
            let layer = std::mem::take(&mut by_level[depth]);
            for s in &layer {
                for e in env.parents(s) {
                    if seen.insert(e.from.clone()) {
                        by_level[depth - 1].push(e.from);
                    }
                }
            }
            by_level[depth] = layer;
        }
        let mut dag = Dag {
            states: Vec::new(),
            index: HashMap::new(),
            levels: Vec::new(),
        };
        for mut layer in by_level {
            layer.sort();
            let start = dag.states.len();
            for s in layer {
                dag.index.insert(s.clone(), dag.states.len());
                dag.states.push(s);
            }
            dag.levels.push(start..dag.states.len());
        }
        dag
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn get(&self, s: &State) -> Option<usize> {
        self.index.get(s).copied()
    }
}

/// Every trajectory ending at `x`, by backward depth-first enumeration.
pub fn trajectories_to(env: &Env, x: &State) -> Vec<Trajectory> {
    let mut out = Vec::new();
    let mut stack: Vec<Edge> = Vec::new();
    fn walk(env: &Env, s: &State, stack: &mut Vec<Edge>, out: &mut Vec<Trajectory>) {
        if env.depth(s) == 0 {
            out.push(Trajectory::new(stack.iter().rev().cloned().collect()));
            return;
        }
        for e in env.parents(s) {
            let from = e.from.clone();
            stack.push(e);
            walk(env, &from, stack, out);
            stack.pop();
        }
    }
    walk(env, x, &mut stack, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(env: &Env, text: &str) -> State {
        env.parse_label(text).unwrap()
    }

    #[test]
    fn string_pa_children_of_a() {
        let env = Env::string_pa(2, 3);
        let kids = env.children(&st(&env, "a"));
        let got: Vec<(Action, String)> = kids.iter().map(|e| (e.action, env.label(&e.to))).collect();
        assert_eq!(
            got,
            vec![
                (Action::Prepend(0), "aa".into()),
                (Action::Prepend(1), "ba".into()),
                (Action::Append(0), "aa".into()),
                (Action::Append(1), "ab".into()),
            ]
        );
    }

    #[test]
    fn empty_string_has_one_add_edge_per_symbol() {
        let env = Env::string_pa(2, 3);
        let kids = env.children(&env.source());
        assert_eq!(kids.len(), 2);
        assert_eq!(kids[0].action, Action::Add(0));
        assert_eq!(env.label(&kids[1].to), "b");
    }

    #[test]
    fn bag_children() {
        let env = Env::bag(3, 2);
        let kids = env.children(&State(vec![1, 0, 0]));
        assert_eq!(kids.len(), 3);
        assert!(env.children(&State(vec![1, 1, 0])).is_empty());
    }

    #[test]
    fn parents_examples() {
        let pa = Env::string_pa(2, 3);
        let ps = pa.parents(&st(&pa, "aa"));
        assert_eq!(ps.len(), 2);
        assert!(ps.iter().all(|e| pa.label(&e.from) == "a"));
        assert!(pa.parents(&pa.source()).is_empty());

        let ar = Env::string_ar(2, 3);
        let ps = ar.parents(&st(&ar, "ab"));
        assert_eq!(ps.len(), 1);
        assert_eq!(ar.label(&ps[0].from), "a");

        let bag = Env::bag(2, 3);
        let ps = bag.parents(&State(vec![2, 1]));
        let froms: Vec<_> = ps.iter().map(|e| e.from.clone()).collect();
        assert_eq!(froms, vec![State(vec![1, 1]), State(vec![2, 0])]);
    }

    #[test]
    fn terminal_counts() {
        assert_eq!(Env::string_pa(2, 3).enumerate_terminals(DEFAULT_BUDGET).unwrap().count(), 8);
        assert_eq!(Env::bag(7, 13).enumerate_terminals(DEFAULT_BUDGET).unwrap().count(), 27132);
        assert_eq!(Env::string_ar(4, 8).enumerate_terminals(DEFAULT_BUDGET).unwrap().count(), 65536);
        let err = Env::string_pa(4, 10).enumerate_terminals(1000).err().unwrap();
        assert!(matches!(err, Error::BudgetExceeded { required: 1048576, .. }));
    }

    #[test]
    fn bag_terminals_are_distinct_and_full() {
        let env = Env::bag(4, 6);
        let all: Vec<State> = env.enumerate_terminals(DEFAULT_BUDGET).unwrap().collect();
        assert_eq!(all.len(), 84);
        let set: HashSet<_> = all.iter().cloned().collect();
        assert_eq!(set.len(), 84);
        assert!(all.iter().all(|s| env.is_terminal(s)));
    }

    #[test]
    fn contains_examples() {
        let pa = Env::string_pa(4, 4);
        assert!(pa.contains(&st(&pa, "ab"), &st(&pa, "cabd")));
        let ar = Env::string_ar(4, 4);
        assert!(!ar.contains(&st(&ar, "ab"), &st(&ar, "cabd")));
        let bag = Env::bag(2, 2);
        assert!(!bag.contains(&State(vec![1, 0]), &State(vec![0, 2])));
    }

    #[test]
    fn encode_examples() {
        let env = Env::string_pa(2, 3);
        let e = env.encode(&env.source());
        assert_eq!(e, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let e = env.encode(&st(&env, "ab"));
        assert_eq!(e, vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 2.0 / 3.0]);
        let bag = Env::bag(3, 4);
        assert_eq!(bag.encode(&State(vec![2, 0, 1])), vec![0.5, 0.0, 0.25, 0.75]);
    }

    #[test]
    fn state_id_is_injective_on_small_envs() {
        for env in [Env::string_pa(3, 4), Env::bag(3, 5)] {
            let dag = Dag::full(&env, DEFAULT_BUDGET).unwrap();
            let ids: HashSet<u64> = dag.states.iter().map(|s| env.state_id(s)).collect();
            assert_eq!(ids.len(), dag.len());
        }
    }

    #[test]
    fn labels_round_trip() {
        let bag = Env::bag(3, 4);
        let s = State(vec![2, 0, 1]);
        assert_eq!(bag.label(&s), "aac");
        assert_eq!(bag.parse_label("aca"), Some(s));
        assert_eq!(bag.parse_label("aaaaa"), None);
        let pa = Env::string_pa(2, 3);
        assert_eq!(pa.parse_label("abc"), None);
    }

    #[test]
    fn dag_counts_match_closed_forms() {
        for env in [Env::string_pa(2, 4), Env::string_ar(3, 3), Env::bag(3, 4)] {
            let dag = Dag::full(&env, DEFAULT_BUDGET).unwrap();
            assert_eq!(dag.len() as u128, env.state_count());
            assert_eq!(dag.levels[env.size()].len() as u128, env.terminal_count());
        }
    }

    #[test]
    fn trajectory_enumeration_small() {
        let env = Env::string_pa(2, 3);
        let x = st(&env, "aab");
        let trajs = trajectories_to(&env, &x);
        assert_eq!(trajs.len(), 4);
        for t in &trajs {
            assert!(t.is_chained());
            assert_eq!(t.source(), &env.source());
            assert_eq!(t.terminal(), &x);
        }
    }
}
