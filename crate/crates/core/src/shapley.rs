//! Coalitional games over exclusion sets and their Shapley values.
//!
//! Excluding a set `S` of marginal members is read as `S` forming a
//! coalition; its worth is the change in the outcome relative to the
//! broadest market, `v(S) = f(S) − f(∅)`. Shapley values split `v(N)` among
//! the members. On 0/1 games (did the screening rule trigger?) the Shapley
//! value is the Shapley-Shubik power index.

use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BoxError, Error, Result};
use crate::lattice::{check_exact_capacity, enumerate_subsets, ExclusionSet, MAX_MEMBERS};

type Evaluator = Arc<dyn Fn(ExclusionSet) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Characteristic {
    /// Worth of every coalition, indexed by bitmask.
    Table(Vec<f64>),
    /// Raw outcome evaluator plus its value at `∅`, subtracted on demand.
    OnDemand { f: Evaluator, base: f64 },
}

/// `⟨N, v⟩` with `v(∅) = 0`.
#[derive(Clone)]
pub struct CoalitionalGame {
    n: usize,
    v: Characteristic,
}

impl fmt::Debug for CoalitionalGame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mode = match self.v {
            Characteristic::Table(_) => "table",
            Characteristic::OnDemand { .. } => "on-demand",
        };
        f.debug_struct("CoalitionalGame")
            .field("n", &self.n)
            .field("v", &mode)
            .finish()
    }
}

impl CoalitionalGame {
    /// Game from a worth table indexed by coalition bitmask.
    pub fn from_table(n: usize, values: Vec<f64>) -> Result<Self> {
        check_exact_capacity(n, "coalitional game", "")?;
        if values.len() != 1usize << n {
            return Err(Error::domain(format!(
                "worth table has {} entries, expected 2^{n}",
                values.len()
            )));
        }
        if values[0] != 0.0 {
            return Err(Error::domain(format!("v(∅) must be 0, got {}", values[0])));
        }
        if let Some(bad) = values.iter().find(|x| !x.is_finite()) {
            return Err(Error::domain(format!("non-finite coalition worth {bad}")));
        }
        Ok(Self {
            n,
            v: Characteristic::Table(values),
        })
    }

    /// Game evaluated lazily from an outcome function, normalized so that
    /// `v(∅) = 0`. Suited to sampling when `2^n` is out of reach.
    pub fn on_demand<F>(n: usize, f: F) -> Result<Self>
    where
        F: Fn(ExclusionSet) -> f64 + Send + Sync + 'static,
    {
        if n > MAX_MEMBERS {
            return Err(Error::Capacity {
                what: "coalitional game",
                requested: n,
                limit: MAX_MEMBERS,
                hint: "",
            });
        }
        let base = f(ExclusionSet::empty(n));
        if !base.is_finite() {
            return Err(Error::domain(format!("non-finite outcome at ∅: {base}")));
        }
        Ok(Self {
            n,
            v: Characteristic::OnDemand { f: Arc::new(f), base },
        })
    }

    pub fn players(&self) -> usize {
        self.n
    }

    pub fn is_materialized(&self) -> bool {
        matches!(self.v, Characteristic::Table(_))
    }

    #[inline]
    fn worth_bits(&self, bits: u64) -> f64 {
        match &self.v {
            Characteristic::Table(values) => values[bits as usize],
            Characteristic::OnDemand { f, base } => {
                if bits == 0 {
                    0.0
                } else {
                    f(ExclusionSet::from_bits(self.n, bits).expect("coalition within universe")) - base
                }
            }
        }
    }

    pub fn worth(&self, coalition: ExclusionSet) -> f64 {
        assert_eq!(coalition.universe_size(), self.n, "coalition from a different universe");
        self.worth_bits(coalition.bits())
    }

    pub fn grand_value(&self) -> f64 {
        self.worth(ExclusionSet::full(self.n))
    }

    /// Worth table of a materialized game.
    pub fn table(&self) -> Option<&[f64]> {
        match &self.v {
            Characteristic::Table(values) => Some(values),
            Characteristic::OnDemand { .. } => None,
        }
    }
}

/// `v(S) = f(S) − f(∅)` over all `2^n` coalitions. `v(∅)` is exactly zero.
pub fn characteristic_from_outcome<F, E>(f: F, n: usize) -> Result<CoalitionalGame>
where
    F: Fn(ExclusionSet) -> std::result::Result<f64, E> + Sync,
    E: Into<Box<dyn std::error::Error + Send + Sync>>,
{
    check_exact_capacity(n, "coalitional game", "; use sampled Shapley for larger games")?;
    let subsets = enumerate_subsets(n)?;
    let raw: Vec<std::result::Result<f64, BoxError>> = subsets.par_iter().map(|&s| f(s).map_err(Into::into)).collect();
    let mut values = vec![0.0; 1usize << n];
    for (subset, r) in subsets.iter().zip(raw) {
        let x = r.map_err(|source| Error::Evaluation {
            subset: *subset,
            source,
        })?;
        if !x.is_finite() {
            return Err(Error::Evaluation {
                subset: *subset,
                source: format!("non-finite outcome {x}").into(),
            });
        }
        values[subset.bits() as usize] = x;
    }
    let base = values[0];
    for x in values.iter_mut() {
        *x -= base;
    }
    values[0] = 0.0;
    CoalitionalGame::from_table(n, values)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapleyMode {
    Exact,
    Sampled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapleyResult {
    pub values: Vec<f64>,
    /// `φ_i / Σφ`; absent when the grand coalition is worth nothing.
    pub shares: Option<Vec<f64>>,
    pub grand_value: f64,
    /// `Σφ_i − v(N)`.
    pub efficiency_residual: f64,
    pub mode: ShapleyMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std_errors: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub permutations_used: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ShapleyResult {
    fn assemble(values: Vec<f64>, grand_value: f64, mode: ShapleyMode) -> Self {
        let total: f64 = values.iter().sum();
        let shares = (grand_value != 0.0 && total != 0.0).then(|| values.iter().map(|x| x / total).collect());
        Self {
            efficiency_residual: total - grand_value,
            values,
            shares,
            grand_value,
            mode,
            std_errors: None,
            permutations_used: None,
            seed: None,
        }
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Neumaier compensated accumulator.
#[derive(Clone, Copy, Default)]
struct Accumulator {
    sum: f64,
    compensation: f64,
}

impl Accumulator {
    #[inline]
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.compensation
    }
}

/// `|S|!(n−|S|−1)!/n!` for `|S| = 0..n`, via the exact identity
/// `1 / (n · C(n−1, s))`; the binomials are exact integers for `n ≤ 24`.
fn subset_weights(n: usize) -> Vec<f64> {
    let mut weights = Vec::with_capacity(n);
    let mut binom: u128 = 1;
    for s in 0..n {
        if s > 0 {
            binom = binom * (n - s) as u128 / s as u128;
        }
        weights.push(1.0 / (n as u128 * binom) as f64);
    }
    weights
}

/// Exact Shapley values by the factorial-weighted subset sum.
pub fn shapley_exact(g: &CoalitionalGame) -> Result<ShapleyResult> {
    let n = g.players();
    check_exact_capacity(n, "exact Shapley", "; use shapley_sampled instead")?;
    let Some(table) = g.table() else {
        return Err(Error::domain("exact Shapley requires a materialized game"));
    };
    let weights = subset_weights(n);
    let values: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let bit = 1u64 << i;
            let mut layers = vec![Accumulator::default(); n];
            for s in 0..(1u64 << n) {
                if s & bit != 0 {
                    continue;
                }
                layers[s.count_ones() as usize].add(table[(s | bit) as usize] - table[s as usize]);
            }
            let mut phi = Accumulator::default();
            for (layer, w) in layers.into_iter().zip(&weights) {
                phi.add(w * layer.value());
            }
            phi.value()
        })
        .collect();
    Ok(ShapleyResult::assemble(values, g.grand_value(), ShapleyMode::Exact))
}

const PERMUTATIONS_PER_STREAM: u64 = 4096;

/// Running mean and sum of squared deviations per player.
#[derive(Clone)]
struct Moments {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(n: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; n],
            m2: vec![0.0; n],
        }
    }

    fn push(&mut self, sample: &[f64]) {
        self.count += 1;
        let k = self.count as f64;
        for ((mean, m2), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(sample) {
            let delta = x - *mean;
            *mean += delta / k;
            *m2 += delta * (x - *mean);
        }
    }

    fn merge(mut self, other: &Moments) -> Self {
        if other.count == 0 {
            return self;
        }
        if self.count == 0 {
            return other.clone();
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let total = na + nb;
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * nb / total;
            self.m2[i] += other.m2[i] + delta * delta * na * nb / total;
        }
        self.count += other.count;
        self
    }
}

fn sample_stream(g: &CoalitionalGame, seed: u64, stream: u64, count: u64) -> Moments {
    let n = g.players();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut order: Vec<usize> = (0..n).collect();
    let mut marginal = vec![0.0; n];
    let mut moments = Moments::new(n);
    for _ in 0..count {
        order.shuffle(&mut rng);
        let mut coalition = 0u64;
        let mut previous = 0.0;
        for &i in &order {
            coalition |= 1 << i;
            let worth = g.worth_bits(coalition);
            marginal[i] = worth - previous;
            previous = worth;
        }
        moments.push(&marginal);
    }
    moments
}

/// Permutation-sampling estimate of the Shapley values.
///
/// Permutations are split into fixed-size streams, each driven by its own
/// ChaCha stream derived from `seed`, and the stream statistics are merged
/// in stream order, so output does not depend on the worker count.
pub fn shapley_sampled(g: &CoalitionalGame, permutations: u64, seed: u64) -> Result<ShapleyResult> {
    if permutations == 0 {
        return Err(Error::domain("at least one permutation is required"));
    }
    let n = g.players();
    let streams = permutations.div_ceil(PERMUTATIONS_PER_STREAM);
    let parts: Vec<Moments> = (0..streams)
        .into_par_iter()
        .map(|stream| {
            let start = stream * PERMUTATIONS_PER_STREAM;
            let count = PERMUTATIONS_PER_STREAM.min(permutations - start);
            sample_stream(g, seed, stream, count)
        })
        .collect();
    let moments = parts.iter().fold(Moments::new(n), |acc, part| acc.merge(part));

    let p = moments.count as f64;
    let std_errors = moments
        .m2
        .iter()
        .map(|m2| if moments.count > 1 { (m2 / (p - 1.0)).sqrt() / p.sqrt() } else { 0.0 })
        .collect();
    let mut result = ShapleyResult::assemble(moments.mean, g.grand_value(), ShapleyMode::Sampled);
    result.std_errors = Some(std_errors);
    result.permutations_used = Some(moments.count);
    result.seed = Some(seed);
    Ok(result)
}

/// A 0/1 game: which exclusion sets trigger a decision rule.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimpleGame {
    n: usize,
    wins: Vec<bool>,
}

impl SimpleGame {
    /// `wins[bits]` says whether coalition `bits` triggers the rule.
    pub fn from_wins(n: usize, wins: Vec<bool>) -> Result<Self> {
        check_exact_capacity(n, "simple game", "")?;
        if wins.len() != 1usize << n {
            return Err(Error::domain(format!("win table has {} entries, expected 2^{n}", wins.len())));
        }
        Ok(Self { n, wins })
    }

    pub fn players(&self) -> usize {
        self.n
    }

    pub fn is_winning(&self, coalition: ExclusionSet) -> bool {
        self.wins[coalition.bits() as usize]
    }

    /// The rule already triggers in the broadest market, so `v*(∅) = 1`
    /// and no coalition is needed to reach it.
    pub fn degenerate_at_origin(&self) -> bool {
        self.wins[0]
    }

    /// True when the decision differs between some pair of coalitions.
    pub fn is_sensitive(&self) -> bool {
        self.wins.iter().any(|&w| w != self.wins[0])
    }

    /// Winning coalitions in canonical order.
    pub fn winning_coalitions(&self) -> Vec<ExclusionSet> {
        enumerate_subsets(self.n)
            .expect("simple games respect the exact cap")
            .into_iter()
            .filter(|s| self.is_winning(*s))
            .collect()
    }

    /// The normalized game `v*(S) − v*(∅)`; equals `v*` unless degenerate.
    pub fn characteristic(&self) -> CoalitionalGame {
        let origin = f64::from(u8::from(self.wins[0]));
        let values = self.wins.iter().map(|&w| f64::from(u8::from(w)) - origin).collect();
        CoalitionalGame::from_table(self.n, values).expect("win table has 2^n entries")
    }
}

/// `v*(S) = 1` iff `rule(f(S))`.
pub fn simple_game_from_rule<T, F, E, R>(f: F, rule: R, n: usize) -> Result<SimpleGame>
where
    F: Fn(ExclusionSet) -> std::result::Result<T, E> + Sync,
    E: Into<Box<dyn std::error::Error + Send + Sync>>,
    R: Fn(&T) -> bool + Sync,
    T: Send,
{
    check_exact_capacity(n, "simple game", "")?;
    let subsets = enumerate_subsets(n)?;
    let raw: Vec<std::result::Result<bool, BoxError>> = subsets
        .par_iter()
        .map(|&s| f(s).map(|t| rule(&t)).map_err(Into::into))
        .collect();
    let mut wins = vec![false; 1usize << n];
    for (subset, r) in subsets.iter().zip(raw) {
        wins[subset.bits() as usize] = r.map_err(|source| Error::Evaluation {
            subset: *subset,
            source,
        })?;
    }
    SimpleGame::from_wins(n, wins)
}

/// Shapley-Shubik power index: exact Shapley value of the normalized
/// simple game. Sums to `v*(N) − v*(∅)`.
pub fn sspi(g: &SimpleGame) -> Result<ShapleyResult> {
    shapley_exact(&g.characteristic())
}
