//! Executable checks of the credit-assignment results on small string MDPs.
//!
//! The testbed is a pair of equal-length strings `x`, `x'` that share a
//! unique longest substring `s*` of length `k`, placed after `a` symbols in
//! `x` and `a'` symbols in `x'`. Every trajectory into either string passes
//! through exactly one length-`k` state, so the length-`k` flows split the
//! total reward between `s*` and the competing substrings.

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::{E, PI};

use rand::Rng;
use serde::Serialize;
use statrs::function::beta::ln_beta;
use statrs::function::factorial::ln_binomial;

use crate::error::{Error, Result};
use crate::flow::TabularTrajectoryFlow;
use crate::mdp::{binomial_u128, trajectories_to, Action, Dag, Edge, Env, EnvKind, State};
use crate::objectives::SubstructureGuide;
use crate::par::{self, Exec};
use crate::rng::{substream, Stream};

/// `2^(n-1)`, the number of prepend/append trajectories into a length-`n` string.
pub fn count_trajectories(n: u32) -> Result<u64> {
    if n == 0 || n > 63 {
        return Err(Error::InvalidArgument(format!("trajectory count for n = {n} does not fit in 62 bits")));
    }
    Ok(1u64 << (n - 1))
}

/// `C(n-k, a) * 2^(k-1)`, trajectories into a length-`n` string that pass
/// through its length-`k` substring starting at offset `a`.
pub fn count_through(n: u32, k: u32, a: u32) -> Result<u64> {
    if k == 0 || k > n || a > n - k {
        return Err(Error::InvalidArgument(format!("need 1 <= k <= n and a <= n - k, got n={n} k={k} a={a}")));
    }
    let c = binomial_u128(u64::from(n - k), u64::from(a)) << (k - 1);
    u64::try_from(c)
        .ok()
        .filter(|v| *v < 1 << 62)
        .ok_or_else(|| Error::InvalidArgument(format!("count for n = {n} does not fit in 62 bits")))
}

fn distinct_string(n: u32) -> (Env, State) {
    let env = Env::string_pa(n as usize, n as usize);
    (env, State((0..n as u8).collect()))
}

/// Depth-first count of the trajectories into a string of distinct symbols.
pub fn brute_count_trajectories(n: u32) -> u64 {
    let (env, x) = distinct_string(n);
    trajectories_to(&env, &x).len() as u64
}

pub fn brute_count_through(n: u32, k: u32, a: u32) -> u64 {
    let (env, x) = distinct_string(n);
    let s = State(x.0[a as usize..(a + k) as usize].to_vec());
    trajectories_to(&env, &x)
        .iter()
        .filter(|t| t.states().any(|u| *u == s))
        .count() as u64
}

fn substrings(x: &[u8], len: usize) -> BTreeSet<Vec<u8>> {
    x.windows(len).map(|w| w.to_vec()).collect()
}

/// Two equal-reward-or-not strings sharing a unique longest substring.
#[derive(Clone, Debug)]
pub struct SettingA {
    pub env: Env,
    pub x: State,
    pub x2: State,
    pub s_star: State,
    pub k: usize,
    pub a: usize,
    pub a2: usize,
    pub r: f64,
    pub r2: f64,
}

impl SettingA {
    /// Validates the pair and locates `s*`.
    pub fn new(x: &str, x2: &str, r: f64, r2: f64) -> Result<Self> {
        let alphabet = x.bytes().chain(x2.bytes()).map(|c| c.wrapping_sub(b'a') as usize + 1).max().unwrap_or(1).max(2);
        let env = Env::string_pa(alphabet, x.len());
        let parse = |s: &str| {
            env.parse_label(s)
                .filter(|st| env.is_terminal(st))
                .ok_or_else(|| Error::InvalidArgument(format!("{s:?} is not a length-{} string", x.len())))
        };
        let (sx, sx2) = (parse(x)?, parse(x2)?);
        if !(r >= 0.0 && r2 >= 0.0) {
            return Err(Error::InvalidArgument("rewards must be nonnegative".into()));
        }
        let n = sx.0.len();
        let mut k = 0;
        let mut shared = BTreeSet::new();
        for len in (1..n).rev() {
            let common: BTreeSet<Vec<u8>> = substrings(&sx.0, len).intersection(&substrings(&sx2.0, len)).cloned().collect();
            if !common.is_empty() {
                k = len;
                shared = common;
                break;
            }
        }
        if sx == sx2 || substrings(&sx.0, n).intersection(&substrings(&sx2.0, n)).next().is_some() {
            return Err(Error::Uniqueness(format!("{x:?} and {x2:?} are identical")));
        }
        if k == 0 {
            return Err(Error::Uniqueness(format!("{x:?} and {x2:?} share no substring")));
        }
        if shared.len() > 1 {
            let labels: Vec<String> = shared.iter().map(|s| env.label(&State(s.clone()))).collect();
            return Err(Error::Uniqueness(format!("shared substrings of length {k}: {}", labels.join(", "))));
        }
        let s_star = State(shared.into_iter().next().unwrap());
        let find = |s: &State| -> Result<usize> {
            let hits: Vec<usize> = (0..=n - k).filter(|&i| s.0[i..i + k] == s_star.0[..]).collect();
            match hits.as_slice() {
                [a] => Ok(*a),
                _ => Err(Error::Uniqueness(format!("{} occurs more than once in {}", env.label(&s_star), env.label(s)))),
            }
        };
        let (a, a2) = (find(&sx)?, find(&sx2)?);
        Ok(SettingA {
            env,
            x: sx,
            x2: sx2,
            s_star,
            k,
            a,
            a2,
            r,
            r2,
        })
    }

    /// `s*` alternates `a`/`b`; `x` is padded with `c` and `x'` with `d`.
    pub fn padded(n: usize, k: usize, a: usize, a2: usize, r: f64, r2: f64) -> Result<Self> {
        if k == 0 || k >= n || a > n - k || a2 > n - k {
            return Err(Error::InvalidArgument(format!("need 1 <= k < n and offsets <= n - k, got n={n} k={k} a={a} a'={a2}")));
        }
        let star: String = (0..k).map(|i| if i % 2 == 0 { 'a' } else { 'b' }).collect();
        let build = |pad: char, off: usize| format!("{}{}{}", pad.to_string().repeat(off), star, pad.to_string().repeat(n - k - off));
        Self::new(&build('c', a), &build('d', a2), r, r2)
    }

    pub fn n(&self) -> usize {
        self.x.0.len()
    }

    /// Length-`k` substrings of `x` other than `s*`.
    pub fn competing_x(&self) -> Vec<State> {
        substrings(&self.x.0, self.k).into_iter().map(State).filter(|s| *s != self.s_star).collect()
    }

    /// Length-`k` substrings of `x` or `x'` other than `s*`.
    pub fn competing_all(&self) -> Vec<State> {
        let mut all = substrings(&self.x.0, self.k);
        all.extend(substrings(&self.x2.0, self.k));
        all.into_iter().map(State).filter(|s| *s != self.s_star).collect()
    }

    fn terminals(&self) -> [(State, f64); 2] {
        [(self.x.clone(), self.r), (self.x2.clone(), self.r2)]
    }
}

/// State flows on the ancestor DAG of `terminals`, from terminal rewards and
/// a backward policy.
fn backward_flows(env: &Env, dag: &Dag, terminals: &[(State, f64)], pb: impl Fn(&Edge) -> f64) -> Vec<f64> {
    let mut f = vec![0.0; dag.len()];
    for (x, r) in terminals {
        f[dag.get(x).expect("terminal in its ancestor DAG")] += r;
    }
    for level in dag.levels.iter().rev() {
        for i in level.clone() {
            let s = &dag.states[i];
            if f[i] == 0.0 || env.depth(s) == 0 {
                continue;
            }
            for e in env.parents(s) {
                let j = dag.get(&e.from).expect("parents are ancestors");
                f[j] += f[i] * pb(&e);
            }
        }
    }
    f
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FlowSplit {
    /// `F(s*)`.
    pub f_star: f64,
    /// Total flow through the competing length-`k` substrings of `x`.
    pub f_other_x: f64,
    /// Total flow through every competing length-`k` substring of `x` or `x'`.
    pub f_other_all: f64,
}

fn split(setting: &SettingA, dag: &Dag, f: &[f64]) -> FlowSplit {
    let get = |s: &State| dag.get(s).map_or(0.0, |i| f[i]);
    FlowSplit {
        f_star: get(&setting.s_star),
        f_other_x: setting.competing_x().iter().map(get).sum(),
        f_other_all: setting.competing_all().iter().map(get).sum(),
    }
}

/// Flows at the maximum-entropy optimum: `F(x) = R(x)` with uniform `P_B`.
pub fn maxent_flows(setting: &SettingA) -> FlowSplit {
    let env = &setting.env;
    let terms = setting.terminals();
    let dag = Dag::ancestors_of(env, &[terms[0].0.clone(), terms[1].0.clone()]);
    let f = backward_flows(env, &dag, &terms, |e| 1.0 / env.parents(&e.to).len() as f64);
    split(setting, &dag, &f)
}

#[derive(Clone, Debug, Serialize)]
pub struct MaxentRatio {
    pub n: usize,
    pub k: usize,
    /// `(a, a', flows)` for every placement pair.
    pub placements: Vec<(usize, usize, FlowSplit)>,
    pub mean_star: f64,
    pub mean_other: f64,
    pub ratio: f64,
}

/// Ratio of placement-averaged `F(s*)` to placement-averaged competing flow in `x`.
pub fn maxent_flow_ratio(n: usize, k: usize, r: f64, exec: Exec) -> Result<MaxentRatio> {
    let pairs: Vec<(usize, usize)> = (0..=n - k).flat_map(|a| (0..=n - k).map(move |b| (a, b))).collect();
    let placements = par::map_slice(exec, &pairs, |&(a, b)| SettingA::padded(n, k, a, b, r, r).map(|s| (a, b, maxent_flows(&s))))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let m = placements.len() as f64;
    let mean_star = placements.iter().map(|p| p.2.f_star).sum::<f64>() / m;
    let mean_other = placements.iter().map(|p| p.2.f_other_x).sum::<f64>() / m;
    Ok(MaxentRatio {
        n,
        k,
        placements,
        mean_star,
        mean_other,
        ratio: mean_star / mean_other,
    })
}

/// Builds the substructure guide for `x`, `x'` over `X = {x, x'}`, turns it
/// into a Markov backward policy from the summed guide edge mass, and returns
/// the resulting flows with `F(x) = R(x)`.
pub fn substructure_optimum(setting: &SettingA) -> Result<FlowSplit> {
    let env = &setting.env;
    if env.kind() == EnvKind::StringAr {
        return Err(Error::InvalidArgument("autoregressive strings have one trajectory per terminal".into()));
    }
    let terms = setting.terminals();
    let guide = SubstructureGuide::new(env, terms.to_vec(), 0.0)?;
    let dag = Dag::ancestors_of(env, &[terms[0].0.clone(), terms[1].0.clone()]);
    let mut edge_flow: HashMap<(usize, Action), f64> = HashMap::new();
    for (target, r) in &terms {
        let mut reach = vec![0.0; dag.len()];
        reach[dag.get(&env.source()).expect("source is an ancestor")] = 1.0;
        for level in &dag.levels[..env.size()] {
            for i in level.clone() {
                let s = &dag.states[i];
                if reach[i] == 0.0 || !env.contains(s, target) {
                    continue;
                }
                let (edges, probs) = guide.transition(s, target)?;
                for (e, p) in edges.iter().zip(probs) {
                    if p > 0.0 {
                        let j = dag.get(&e.to).expect("guide stays inside the target's ancestors");
                        reach[j] += reach[i] * p;
                        *edge_flow.entry((i, e.action)).or_default() += r * reach[i] * p;
                    }
                }
            }
        }
    }
    let incoming = |s: &State| -> f64 {
        env.parents(s)
            .iter()
            .map(|p| edge_flow.get(&(dag.get(&p.from).unwrap(), p.action)).copied().unwrap_or(0.0))
            .sum()
    };
    let f = backward_flows(env, &dag, &terms, |e| {
        let total = incoming(&e.to);
        if total > 0.0 {
            edge_flow.get(&(dag.get(&e.from).unwrap(), e.action)).copied().unwrap_or(0.0) / total
        } else {
            1.0 / env.parents(&e.to).len() as f64
        }
    });
    Ok(split(setting, &dag, &f))
}

/// Initial urn composition for the tabular trajectory-balance process.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PolyaParams {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
}

/// `alpha / (alpha + beta) = e / (pi sqrt(n-k))`, `alpha + beta = eps 2^(n-1) / delta`
/// with `delta = lambda (R - eps)`.
pub fn polya_params(n: usize, k: usize, r: f64, eps: f64, lambda: f64) -> Result<PolyaParams> {
    if k >= n || !(eps > 0.0 && eps < r) || !(lambda > 0.0) {
        return Err(Error::InvalidArgument("need k < n, 0 < eps < R and lambda > 0".into()));
    }
    let delta = lambda * (r - eps);
    let total = eps * 2f64.powi(n as i32 - 1) / delta;
    let frac = E / (PI * ((n - k) as f64).sqrt());
    Ok(PolyaParams {
        alpha: frac * total,
        beta: (1.0 - frac) * total,
        delta,
    })
}

pub fn beta_binomial_pmf(m: u64, j: u64, alpha: f64, beta: f64) -> f64 {
    (ln_binomial(m, j) + ln_beta(j as f64 + alpha, (m - j) as f64 + beta) - ln_beta(alpha, beta)).exp()
}

/// `P(X > psi m)` for `X ~ BetaBinomial(m, alpha, beta)`.
pub fn beta_binomial_exceedance(m: u64, alpha: f64, beta: f64, psi: f64) -> f64 {
    let cut = (psi * m as f64).floor();
    if cut < 0.0 {
        return 1.0;
    }
    let cut = cut as u64;
    ((cut + 1)..=m).map(|j| beta_binomial_pmf(m, j, alpha, beta)).sum::<f64>().min(1.0)
}

/// One run of the urn over pre-indexed trajectories: `ends[t]` are the
/// trajectory indices of target `t`, `through[i]` marks trajectories through
/// `s*`, `flows` the starting flows. Steps alternate targets. Returns the
/// number of steps that landed on `s*`.
pub fn urn_trial<R: Rng + ?Sized>(ends: [&[usize]; 2], through: &[bool], flows: &mut [f64], m: usize, delta: f64, rng: &mut R) -> usize {
    let mut totals = [ends[0].iter().map(|&i| flows[i]).sum::<f64>(), ends[1].iter().map(|&i| flows[i]).sum::<f64>()];
    let mut hits = 0;
    for step in 0..m {
        let t = step % 2;
        let u = rng.gen::<f64>() * totals[t];
        let mut acc = 0.0;
        let mut pick = *ends[t].last().expect("target has trajectories");
        for &i in ends[t] {
            acc += flows[i];
            if u < acc {
                pick = i;
                break;
            }
        }
        flows[pick] += delta;
        totals[t] += delta;
        if through[pick] {
            hits += 1;
        }
    }
    hits
}

#[derive(Clone, Debug, Serialize)]
pub struct PolyaPlacement {
    pub a: usize,
    pub a2: usize,
    /// Fraction of the `m` increments that went through `s*`, per trial.
    pub fractions: Vec<f64>,
}

/// Tabular trajectory-balance training on a setting: `m` steps alternating
/// between `x` and `x'`, each sampling a trajectory into that string in
/// proportion to its flow and adding `lambda (R - eps)` to it.
pub fn tabular_tb_simulate(setting: &SettingA, m: usize, lambda: f64, eps: f64, trials: usize, seed: u64, tag: u64, exec: Exec) -> Result<Vec<f64>> {
    if m == 0 || m % 2 != 0 {
        return Err(Error::InvalidArgument("m must be even and positive".into()));
    }
    if (setting.r - setting.r2).abs() > 0.0 {
        return Err(Error::InvalidArgument("the urn simulation needs R(x) = R(x')".into()));
    }
    let env = &setting.env;
    let table = TabularTrajectoryFlow::over_terminals(env, &[setting.x.clone(), setting.x2.clone()], eps);
    let through: Vec<bool> = table.trajectories().iter().map(|t| t.states().any(|s| *s == setting.s_star)).collect();
    let ends = [table.ending_at(&setting.x), table.ending_at(&setting.x2)];
    let delta = lambda * (setting.r - eps);
    let init = table.flows().to_vec();
    Ok(par::map_range(exec, trials, |trial| {
        let mut rng = substream(seed, Stream::Theory, &[tag, trial as u64]);
        let mut flows = init.clone();
        urn_trial(ends, &through, &mut flows, m, delta, &mut rng) as f64 / m as f64
    }))
}

/// `max_a C(n, a) <= e 2^n / (pi sqrt n)` for every `1 <= n <= n_max`;
/// returns the first `n` that fails.
pub fn pascal_row_bound_check(n_max: u32) -> std::result::Result<(), u32> {
    for n in 1..=n_max {
        let max = binomial_u128(u64::from(n), u64::from(n / 2));
        let bound = E * 2f64.powi(n as i32) / (PI * f64::from(n).sqrt());
        if max as f64 > bound {
            return Err(n);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct UniformFlowReport {
    /// Equal trajectory flows induce uniform forward and backward policies.
    pub flows_to_policies: bool,
    /// Uniform policies give every trajectory the same probability.
    pub policies_to_flows: bool,
}

fn induced_policies_uniform(env: &Env, table: &TabularTrajectoryFlow, dag: &Dag) -> bool {
    let mut edge_flow: HashMap<&Edge, f64> = HashMap::new();
    let mut state_flow = vec![0.0; dag.len()];
    for (t, f) in table.trajectories().iter().zip(table.flows()) {
        for e in &t.steps {
            *edge_flow.entry(e).or_default() += f;
        }
        for s in t.states() {
            state_flow[dag.get(s).expect("state in DAG")] += f;
        }
    }
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1.0);
    dag.states.iter().enumerate().all(|(i, s)| {
        let fs = state_flow[i];
        let forward_ok = env.is_terminal(s) || {
            let kids = env.children(s);
            kids.iter().all(|e| close(edge_flow.get(e).copied().unwrap_or(0.0) / fs, 1.0 / kids.len() as f64))
        };
        let backward_ok = env.depth(s) == 0 || {
            let ps = env.parents(s);
            ps.iter().all(|e| close(edge_flow.get(e).copied().unwrap_or(0.0) / fs, 1.0 / ps.len() as f64))
        };
        forward_ok && backward_ok
    })
}

/// Checks both directions of the uniform-flow equivalence on `string_pa`.
/// `perturb` scales one trajectory's flow before the forward check.
pub fn uniform_flow_equivalence_check(n: usize, alphabet: usize, perturb: Option<f64>) -> Result<UniformFlowReport> {
    let env = Env::new(EnvKind::StringPa, alphabet, n)?;
    let dag = Dag::full(&env, 1 << 20)?;
    let terminals: Vec<State> = env.enumerate_terminals(1 << 20)?.collect();
    let mut table = TabularTrajectoryFlow::over_terminals(&env, &terminals, 1.0);
    if let Some(c) = perturb {
        table.flows_mut()[0] *= c;
    }
    let flows_to_policies = induced_policies_uniform(&env, &table, &dag);

    let log_p: Vec<f64> = table
        .trajectories()
        .iter()
        .map(|t| t.steps.iter().map(|e| -(env.children(&e.from).len() as f64).ln()).sum())
        .collect();
    let log_b: Vec<f64> = table
        .trajectories()
        .iter()
        .map(|t| t.steps.iter().map(|e| -(env.parents(&e.to).len() as f64).ln()).sum())
        .collect();
    let same = |v: &[f64]| v.iter().all(|x| (x - v[0]).abs() < 1e-12);
    Ok(UniformFlowReport {
        flows_to_policies,
        policies_to_flows: same(&log_p) && same(&log_b),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        CheckResult {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TheoryOptions {
    /// Largest row for the Pascal bound.
    pub n_max: u32,
    /// Largest string length for the counting checks.
    pub count_max: u32,
    pub trials: usize,
    pub seed: u64,
    /// Feed a setting with two shared longest substrings to the credit checks.
    pub violate: bool,
    pub exec: Exec,
}

impl Default for TheoryOptions {
    fn default() -> Self {
        TheoryOptions {
            n_max: 30,
            count_max: 8,
            trials: 2000,
            seed: 0,
            violate: false,
            exec: Exec::default(),
        }
    }
}

pub const POLYA_N: usize = 8;
pub const POLYA_K: usize = 4;
pub const POLYA_M: usize = 200;
pub const POLYA_EPS: f64 = 0.002;
pub const POLYA_PSI: [f64; 4] = [0.2, 0.4, 0.6, 0.8];
pub const CREDIT_SIZES: [(usize, usize); 3] = [(3, 2), (6, 3), (8, 4)];
const TOL: f64 = 1e-9;

pub fn check_counting(count_max: u32) -> CheckResult {
    let mut cases = 0;
    for n in 1..=count_max {
        if count_trajectories(n).ok() != Some(brute_count_trajectories(n)) {
            return CheckResult::new("counting", false, format!("2^(n-1) differs from enumeration at n = {n}"));
        }
        cases += 1;
        for k in 1..=n {
            for a in 0..=n - k {
                if count_through(n, k, a).ok() != Some(brute_count_through(n, k, a)) {
                    return CheckResult::new("counting", false, format!("through-count differs at n={n} k={k} a={a}"));
                }
                cases += 1;
            }
        }
    }
    CheckResult::new("counting", true, format!("{cases} closed forms equal enumeration for n <= {count_max}"))
}

pub fn check_maxent(exec: Exec, violate: bool) -> CheckResult {
    let name = "maxent_credit";
    if violate {
        return match SettingA::new("aabb", "bbaa", 1.0, 1.0) {
            Ok(_) => CheckResult::new(name, false, "non-unique setting accepted".into()),
            Err(e) => CheckResult::new(name, false, e.to_string()),
        };
    }
    let hand = match SettingA::new("aab", "baa", 1.0, 1.0) {
        Ok(s) => maxent_flows(&s),
        Err(e) => return CheckResult::new(name, false, e.to_string()),
    };
    if (hand.f_star - 1.0).abs() > TOL || (hand.f_other_x - 0.5).abs() > TOL {
        return CheckResult::new(name, false, format!("aab/baa gives F(s*) = {}, F(ab) = {}", hand.f_star, hand.f_other_x));
    }
    let mut parts = vec![format!("aab/baa: F(s*)=1 F(ab)=0.5")];
    for (n, k) in CREDIT_SIZES {
        let res = match maxent_flow_ratio(n, k, 1.0, exec) {
            Ok(r) => r,
            Err(e) => return CheckResult::new(name, false, e.to_string()),
        };
        let want = 2.0 / (n - k) as f64;
        if (res.ratio - want).abs() > TOL {
            return CheckResult::new(name, false, format!("(n,k)=({n},{k}): ratio {} != {want}", res.ratio));
        }
        parts.push(format!("({n},{k}) ratio {:.6}", res.ratio));
    }
    CheckResult::new(name, true, parts.join("; "))
}

pub fn check_substructure(violate: bool) -> CheckResult {
    let name = "substructure_optimum";
    if violate {
        return match SettingA::new("aabb", "bbaa", 1.0, 1.0) {
            Ok(_) => CheckResult::new(name, false, "non-unique setting accepted".into()),
            Err(e) => CheckResult::new(name, false, e.to_string()),
        };
    }
    let mut count = 0;
    for (n, k) in CREDIT_SIZES {
        for a in 0..=n - k {
            for a2 in 0..=n - k {
                for (r, r2) in [(1.0, 1.0), (3.0, 5.0)] {
                    let res = SettingA::padded(n, k, a, a2, r, r2).and_then(|s| substructure_optimum(&s));
                    match res {
                        Ok(f) if (f.f_star - (r + r2)).abs() <= TOL && f.f_other_all.abs() <= TOL => count += 1,
                        Ok(f) => {
                            return CheckResult::new(
                                name,
                                false,
                                format!("(n,k,a,a')=({n},{k},{a},{a2}): F(s*)={} competing={}", f.f_star, f.f_other_all),
                            )
                        }
                        Err(e) => return CheckResult::new(name, false, e.to_string()),
                    }
                }
            }
        }
    }
    CheckResult::new(name, true, format!("F(s*) = R(x)+R(x') with zero competing flow in {count} settings"))
}

#[derive(Clone, Debug, Serialize)]
pub struct PolyaRow {
    pub a: usize,
    pub a2: usize,
    pub psi: f64,
    pub empirical: f64,
    pub std_err: f64,
    pub bound: f64,
}

/// Empirical exceedance against the beta-binomial bound at every placement.
pub fn polya_table(trials: usize, seed: u64, exec: Exec) -> Result<Vec<PolyaRow>> {
    let (n, k, m) = (POLYA_N, POLYA_K, POLYA_M);
    let lambda = 2.0 / m as f64;
    let p = polya_params(n, k, 1.0, POLYA_EPS, lambda)?;
    let mut rows = Vec::new();
    for a in 0..=n - k {
        for a2 in 0..=n - k {
            let s = SettingA::padded(n, k, a, a2, 1.0, 1.0)?;
            let fr = tabular_tb_simulate(&s, m, lambda, POLYA_EPS, trials, seed, (a * 16 + a2) as u64, exec)?;
            for psi in POLYA_PSI {
                let hits = fr.iter().filter(|&&f| f * m as f64 > (psi * m as f64).floor()).count();
                let emp = hits as f64 / trials as f64;
                rows.push(PolyaRow {
                    a,
                    a2,
                    psi,
                    empirical: emp,
                    std_err: (emp * (1.0 - emp) / trials as f64).sqrt(),
                    bound: beta_binomial_exceedance(m as u64, p.alpha, p.beta, psi),
                });
            }
        }
    }
    Ok(rows)
}

pub fn check_polya(trials: usize, seed: u64, exec: Exec) -> CheckResult {
    let name = "polya_bound";
    let rows = match polya_table(trials, seed, exec) {
        Ok(r) => r,
        Err(e) => return CheckResult::new(name, false, e.to_string()),
    };
    let worst = rows
        .iter()
        .max_by(|x, y| (x.empirical - x.bound - 3.0 * x.std_err).total_cmp(&(y.empirical - y.bound - 3.0 * y.std_err)))
        .expect("rows");
    let passed = rows.iter().all(|r| r.empirical <= r.bound + 3.0 * r.std_err);
    CheckResult::new(
        name,
        passed,
        format!(
            "{} rows; tightest at a={} a'={} psi={}: empirical {:.4} vs bound {:.4} + 3se {:.4}",
            rows.len(),
            worst.a,
            worst.a2,
            worst.psi,
            worst.empirical,
            worst.bound,
            3.0 * worst.std_err
        ),
    )
}

pub fn check_pascal(n_max: u32) -> CheckResult {
    match pascal_row_bound_check(n_max) {
        Ok(()) => CheckResult::new("pascal_row", true, format!("holds for 1 <= n <= {n_max}")),
        Err(n) => CheckResult::new("pascal_row", false, format!("fails at n = {n}")),
    }
}

pub fn check_uniform_flow() -> CheckResult {
    let name = "uniform_flow";
    let base = uniform_flow_equivalence_check(3, 2, None);
    let probe = uniform_flow_equivalence_check(3, 2, Some(2.0));
    match (base, probe) {
        (Ok(b), Ok(p)) => {
            let passed = b.flows_to_policies && b.policies_to_flows && !p.flows_to_policies;
            CheckResult::new(
                name,
                passed,
                format!(
                    "flows->policies {}, policies->flows {}, perturbed flow detected {}",
                    b.flows_to_policies, b.policies_to_flows, !p.flows_to_policies
                ),
            )
        }
        (Err(e), _) | (_, Err(e)) => CheckResult::new(name, false, e.to_string()),
    }
}

pub fn run_all(opts: &TheoryOptions) -> Vec<CheckResult> {
    vec![
        check_counting(opts.count_max),
        check_maxent(opts.exec, opts.violate),
        check_substructure(opts.violate),
        check_polya(opts.trials, opts.seed, opts.exec),
        check_pascal(opts.n_max),
        check_uniform_flow(),
    ]
}
