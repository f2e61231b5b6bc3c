#![allow(dead_code)]

use mktsens_core::lattice::{ExclusionSet, MarginalSet};
use mktsens_core::metrics::{hhi, Market, MarketUniverse};
use mktsens_core::shapley::CoalitionalGame;

/// Eight firms; A–E always in, 1–3 marginal.
pub const EXAMPLE_ONE: [(&str, f64); 8] = [
    ("A", 15.0),
    ("B", 15.0),
    ("C", 10.0),
    ("D", 10.0),
    ("E", 10.0),
    ("1", 9.0),
    ("2", 6.0),
    ("3", 3.0),
];

pub fn example_universe() -> MarketUniverse {
    MarketUniverse::new(Market::new(EXAMPLE_ONE).unwrap(), ["A", "B", "C", "D", "E"]).unwrap()
}

pub fn example_marginal() -> MarginalSet {
    MarginalSet::new(["1", "2", "3"]).unwrap()
}

pub fn example_hhi(omega: ExclusionSet) -> mktsens_core::Result<f64> {
    let ms = example_marginal();
    hhi(&example_universe().market_for(&ms, omega)?)
}

pub fn set(n: usize, idx: &[usize]) -> ExclusionSet {
    ExclusionSet::from_indices(n, idx.iter().copied()).unwrap()
}

/// Average marginal contribution over all n! orderings (Heap's algorithm).
pub fn permutation_oracle(g: &CoalitionalGame) -> Vec<f64> {
    let n = g.players();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut totals = vec![0.0; n];
    let mut count = 0u64;
    let mut visit = |p: &[usize]| {
        let mut s = ExclusionSet::empty(n);
        let mut prev = 0.0;
        for &i in p {
            s = s.with(i);
            let w = g.worth(s);
            totals[i] += w - prev;
            prev = w;
        }
        count += 1;
    };
    let mut c = vec![0usize; n];
    visit(&perm);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            visit(&perm);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    totals.iter().map(|t| t / count as f64).collect()
}
