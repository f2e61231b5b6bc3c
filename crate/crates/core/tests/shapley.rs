mod common;

use common::{example_hhi, permutation_oracle, set};
use mktsens_core::lattice::ExclusionSet;
use mktsens_core::shapley::{
    characteristic_from_outcome, shapley_exact, shapley_sampled, simple_game_from_rule, sspi, CoalitionalGame,
};
use proptest::prelude::*;

fn example_game() -> CoalitionalGame {
    characteristic_from_outcome(example_hhi, 3).unwrap()
}

#[test]
fn example_characteristic() {
    let g = example_game();
    assert_eq!(g.worth(ExclusionSet::empty(3)), 0.0);
    let grand = g.grand_value();
    assert!((grand - 643.49).abs() < 0.01);
    assert_eq!(grand.round(), 643.0);
    // the printed 644 is the difference of floored node values
    let floored = example_hhi(set(3, &[0, 1, 2])).unwrap().floor() - example_hhi(set(3, &[])).unwrap().floor();
    assert_eq!(floored, 644.0);
}

#[test]
fn example_shapley_matches_permutation_oracle() {
    let g = example_game();
    let r = shapley_exact(&g).unwrap();
    let oracle = permutation_oracle(&g);
    for (v, o) in r.values.iter().zip(&oracle) {
        assert!((v - o).abs() < 1e-9);
    }
    let frozen = [281.80, 227.58, 134.11];
    for (v, f) in r.values.iter().zip(frozen) {
        assert!((v - f).abs() < 0.01, "{v} vs {f}");
    }
    let rounded: Vec<f64> = r.values.iter().map(|v| v.round()).collect();
    assert_eq!(rounded, vec![282.0, 228.0, 134.0]);
    let pct: Vec<f64> = r.shares.unwrap().iter().map(|s| (s * 100.0).round()).collect();
    assert_eq!(pct, vec![44.0, 35.0, 21.0]);
    assert!(r.efficiency_residual.abs() <= 1e-9 * r.grand_value.abs().max(1.0));
}

#[test]
fn example_sspi_threshold_game() {
    let g = simple_game_from_rule(example_hhi, |h: &f64| *h >= 1800.0, 3).unwrap();
    assert_eq!(
        g.winning_coalitions(),
        vec![set(3, &[0, 1]), set(3, &[0, 2]), set(3, &[0, 1, 2])]
    );
    let r = sspi(&g).unwrap();
    let expected = [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0];
    for (v, e) in r.values.iter().zip(expected) {
        assert!((v - e).abs() < 1e-15);
    }
    assert!((r.total() - 1.0).abs() < 1e-15);
}

#[test]
fn sampled_example_is_close() {
    let g = example_game();
    let exact = shapley_exact(&g).unwrap();
    let r = shapley_sampled(&g, 200_000, 2024).unwrap();
    let se = r.std_errors.as_ref().unwrap();
    for ((v, e), s) in r.values.iter().zip(&exact.values).zip(se) {
        assert!((v - e).abs() <= 3.0 * s + 1e-9);
    }
    assert_eq!(r, shapley_sampled(&g, 200_000, 2024).unwrap());
    assert!((r.total() - g.grand_value()).abs() < 1e-9);
}

#[test]
fn sampled_independent_of_thread_count() {
    let g = example_game();
    let pool = |k| rayon::ThreadPoolBuilder::new().num_threads(k).build().unwrap();
    let one = pool(1).install(|| shapley_sampled(&g, 50_000, 7).unwrap());
    let four = pool(4).install(|| shapley_sampled(&g, 50_000, 7).unwrap());
    assert_eq!(serde_json::to_string(&one).unwrap(), serde_json::to_string(&four).unwrap());
}

fn game_strategy(max_n: usize) -> impl Strategy<Value = (usize, Vec<f64>)> {
    (1..=max_n).prop_flat_map(|n| {
        prop::collection::vec(-100.0f64..100.0, 1usize << n).prop_map(move |mut v| {
            v[0] = 0.0;
            (n, v)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn efficiency_and_oracle((n, table) in game_strategy(6)) {
        let g = CoalitionalGame::from_table(n, table).unwrap();
        let r = shapley_exact(&g).unwrap();
        prop_assert!(r.efficiency_residual.abs() <= 1e-9 * r.grand_value.abs().max(1.0));
        for (v, o) in r.values.iter().zip(permutation_oracle(&g)) {
            prop_assert!((v - o).abs() <= 1e-9);
        }
    }

    #[test]
    fn sampled_sums_to_grand_value((n, table) in game_strategy(8), perms in 1u64..300, seed in any::<u64>()) {
        let g = CoalitionalGame::from_table(n, table).unwrap();
        let r = shapley_sampled(&g, perms, seed).unwrap();
        prop_assert!((r.total() - g.grand_value()).abs() <= 1e-9 * g.grand_value().abs().max(1.0));
    }

    #[test]
    fn sspi_of_monotone_game_is_a_lattice_of_fractions(n in 1usize..=6, weights in prop::collection::vec(0u32..5, 6), quota_frac in 0.1f64..1.0) {
        // weighted voting game: monotone, ∅ loses, N wins (quota > 0, ≤ total)
        let w = &weights[..n];
        let total: u32 = w.iter().sum::<u32>().max(1);
        let quota = ((total as f64) * quota_frac).ceil().max(1.0) as u32;
        let g = simple_game_from_rule(
            |s: ExclusionSet| Ok::<_, mktsens_core::Error>(s.indices().map(|i| w[i]).sum::<u32>()),
            |&x| x >= quota,
            n,
        )
        .unwrap();
        let r = sspi(&g).unwrap();
        let n_fact: f64 = (1..=n).map(|k| k as f64).product();
        let grand_wins = g.is_winning(ExclusionSet::full(n));
        for v in &r.values {
            prop_assert!((0.0..=1.0 + 1e-12).contains(v));
            let scaled = v * n_fact;
            prop_assert!((scaled - scaled.round()).abs() < 1e-6);
        }
        let expected_total = if grand_wins { 1.0 } else { 0.0 };
        prop_assert!((r.total() - expected_total).abs() < 1e-12);
    }
}
