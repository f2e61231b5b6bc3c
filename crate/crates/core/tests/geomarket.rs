mod common;

use std::collections::BTreeSet;

use common::set;
use mktsens_core::geomarket::{
    analyze_local, chain_market, circle_market, count_presumptive, haversine, sspi_structure_table, Format, LatLon,
    Store, StoreUniverse, KM_PER_MILE,
};
use mktsens_core::lattice::{ExclusionSet, MarginalSet};
use mktsens_core::metrics::{MergerSpec, PresumptionRule, ScreeningRule};
use proptest::prelude::*;

fn store(id: &str, chain: &str, format: &str, lat: f64, lon: f64, revenue: f64) -> Store {
    Store {
        store_id: id.into(),
        chain_id: chain.into(),
        chain_name: chain.to_uppercase(),
        format: format.parse().unwrap(),
        latitude: lat,
        longitude: lon,
        revenue,
    }
}

/// Two well-separated circles. The first flips to presumptive once clubs
/// are dropped; the second never triggers.
fn two_circles() -> Vec<Store> {
    let first = [
        ("alb", "supermarket", 10.0),
        ("saf", "supermarket", 5.0),
        ("kro", "supermarket", 20.0),
        ("fm", "supermarket", 20.0),
        ("cost", "club", 50.0),
        ("wf", "natural", 4.0),
        ("aldi", "limited", 4.0),
    ];
    let second = [
        ("alb", "supermarket", 5.0),
        ("saf", "supermarket", 5.0),
        ("kro", "supermarket", 40.0),
        ("fm", "supermarket", 40.0),
        ("cost", "club", 20.0),
        ("wf", "natural", 10.0),
        ("aldi", "limited", 10.0),
    ];
    let mut out = Vec::new();
    for (c, (lat0, market)) in [(40.0, first), (41.0, second)].into_iter().enumerate() {
        for (k, (chain, format, rev)) in market.into_iter().enumerate() {
            let lat = lat0 + 0.002 * k as f64;
            out.push(store(&format!("m{}-{chain}", c + 1), chain, format, lat, -100.0, rev));
        }
    }
    out
}

fn marginal() -> MarginalSet {
    MarginalSet::new(["club", "natural", "limited"]).unwrap()
}

fn merger() -> MergerSpec {
    MergerSpec::new("alb", "saf").unwrap()
}

fn presumption() -> ScreeningRule {
    ScreeningRule::Presumption(PresumptionRule::default())
}

/// Flags for one circle from raw arithmetic: strict 1800 / 100 cutoffs.
fn oracle_flags(stores: &[Store], center: &Store, radius_miles: f64, n: usize, formats: &[&str]) -> Vec<bool> {
    let near: Vec<&Store> = stores
        .iter()
        .filter(|s| {
            let (p1, p2) = (center.latitude.to_radians(), s.latitude.to_radians());
            let dp = p2 - p1;
            let dl = (s.longitude - center.longitude).to_radians();
            let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
            2.0 * 6371.0088 * a.sqrt().asin() <= radius_miles * 1.609344
        })
        .collect();
    (0u64..1 << n)
        .map(|bits| {
            let kept: Vec<&&Store> = near
                .iter()
                .filter(|s| !(0..n).any(|i| bits >> i & 1 == 1 && s.format.as_str() == formats[i]))
                .collect();
            let chains: BTreeSet<&str> = kept.iter().map(|s| s.chain_id.as_str()).collect();
            let total: f64 = kept.iter().map(|s| s.revenue).sum();
            let sales = |c: &str| kept.iter().filter(|s| s.chain_id == c).map(|s| s.revenue).sum::<f64>();
            let pre: f64 = chains.iter().map(|c| (sales(c) / total).powi(2)).sum::<f64>() * 1e4;
            let delta = 2.0 * sales("alb") / total * sales("saf") / total * 1e4;
            pre + delta > 1800.0 && delta > 100.0
        })
        .collect()
}

#[test]
fn two_circle_pipeline_matches_oracle() {
    let stores = two_circles();
    let u = StoreUniverse::new(stores.clone(), ["alb"]).unwrap();
    let results = analyze_local(&u, &merger(), &marginal(), &presumption(), 5.0).unwrap();
    assert_eq!(results.len(), 2);
    assert_eq!(results[0].center, "m1-alb");
    assert_eq!(results[1].center, "m2-alb");
    for r in &results {
        assert_eq!(r.members, 7);
        let center = u.get(&r.center).unwrap();
        let expected = oracle_flags(&stores, center, 5.0, 3, &["club", "natural", "limited"]);
        for (bits, &want) in expected.iter().enumerate() {
            assert_eq!(r.flagged_at(ExclusionSet::from_bits(3, bits as u64).unwrap()), want, "{} {bits}", r.center);
        }
    }
    assert!(results[0].sensitive);
    assert!(!results[1].sensitive);
    assert_eq!(results[0].sspi.as_deref(), Some(&[1.0, 0.0, 0.0][..]));
    assert_eq!(results[1].sspi, None);
    assert_eq!(results[1].sspi_or_zero(), vec![0.0; 3]);

    assert_eq!(count_presumptive(&results, set(3, &[])), 0);
    assert_eq!(count_presumptive(&results, set(3, &[0])), 1);
    assert_eq!(count_presumptive(&results, set(3, &[1])), 0);
    assert_eq!(count_presumptive(&results, set(3, &[0, 1, 2])), 1);

    let table = sspi_structure_table(&results, 3);
    assert_eq!(table.len(), 1);
    assert_eq!(table[0].sspi, vec![1.0, 0.0, 0.0]);
    assert_eq!(table[0].count, 1);

    let o = &results[0].outcome_at(set(3, &[])).unwrap().outcome;
    assert!((o.post_hhi - 2785.65).abs() < 0.01);
    assert!((o.delta_hhi - 78.31).abs() < 0.01);
    let o = &results[0].outcome_at(set(3, &[0])).unwrap().outcome;
    assert!((o.delta_hhi - 251.95).abs() < 0.01);
}

#[test]
fn both_parties_as_centers_double_count_overlapping_circles() {
    let u = StoreUniverse::new(two_circles(), ["alb", "saf"]).unwrap();
    let results = analyze_local(&u, &merger(), &marginal(), &presumption(), 5.0).unwrap();
    assert_eq!(results.len(), 4);
    assert_eq!(results.iter().filter(|r| r.sensitive).count(), 2);
}

#[test]
fn example_market_as_single_circle() {
    let firms = [
        ("a", "supermarket", 15.0),
        ("b", "supermarket", 15.0),
        ("c", "supermarket", 10.0),
        ("d", "supermarket", 10.0),
        ("e", "supermarket", 10.0),
        ("f1", "club", 9.0),
        ("f2", "natural", 6.0),
        ("f3", "limited", 3.0),
    ];
    let stores: Vec<Store> = firms
        .iter()
        .enumerate()
        .map(|(k, (c, f, r))| store(&format!("s{k}"), c, f, 35.0, -90.0 + 0.001 * k as f64, *r))
        .collect();
    let u = StoreUniverse::new(stores, ["a"]).unwrap();
    let rule = ScreeningRule::HhiAtLeast { threshold: 1800.0 };
    let g = MergerSpec::new("a", "b").unwrap();
    let results = analyze_local(&u, &g, &marginal(), &rule, 5.0).unwrap();
    assert_eq!(results.len(), 1);
    let r = &results[0];
    let pre: Vec<f64> = r.outcomes.iter().map(|o| o.outcome.pre_hhi).collect();
    assert!((pre[0] - 1439.84).abs() < 0.01);
    let power = r.sspi.as_ref().unwrap();
    for (v, e) in power.iter().zip([2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0]) {
        assert!((v - e).abs() < 1e-15);
    }
}

#[test]
fn isolated_merging_parties_are_never_sensitive() {
    let mut stores = vec![
        store("x1", "alb", "supermarket", 30.0, -80.0, 10.0),
        store("x2", "saf", "supermarket", 30.001, -80.0, 8.0),
    ];
    // competitors 50 miles away
    stores.push(store("y1", "cost", "club", 30.72, -80.0, 100.0));
    stores.push(store("y2", "wf", "natural", 30.72, -80.001, 100.0));
    let u = StoreUniverse::new(stores, ["alb", "saf"]).unwrap();
    let results = analyze_local(&u, &merger(), &marginal(), &presumption(), 5.0).unwrap();
    assert_eq!(results.len(), 2);
    assert!(results.iter().all(|r| !r.sensitive && r.sspi.is_none()));
    assert!(results.iter().all(|r| r.outcomes.iter().all(|o| o.flagged)));
}

#[test]
fn circles_without_both_parties_are_skipped() {
    let stores = vec![
        store("a1", "alb", "supermarket", 10.0, 10.0, 5.0),
        store("s1", "saf", "supermarket", 12.0, 10.0, 5.0),
        store("k1", "kro", "supermarket", 10.0, 10.001, 5.0),
    ];
    let u = StoreUniverse::new(stores, ["alb", "saf"]).unwrap();
    assert!(analyze_local(&u, &merger(), &marginal(), &presumption(), 5.0).unwrap().is_empty());
}

#[test]
fn chain_market_totals_are_exact() {
    let stores = two_circles();
    let all = chain_market(&stores, &BTreeSet::new());
    assert_eq!(all.sales("alb"), Some(15.0));
    assert_eq!(all.sales("cost"), Some(70.0));
    assert_eq!(all.total(), stores.iter().map(|s| s.revenue).sum::<f64>());
    let no_club = chain_market(&stores, &[Format::Club].into_iter().collect());
    assert!(!no_club.contains("cost"));
    assert_eq!(no_club.total(), all.total() - 70.0);
}

#[test]
fn result_independent_of_input_order_and_workers() {
    let mut stores = two_circles();
    let u = StoreUniverse::new(stores.clone(), ["alb", "saf"]).unwrap();
    let base = serde_json::to_string(&analyze_local(&u, &merger(), &marginal(), &presumption(), 5.0).unwrap()).unwrap();
    stores.reverse();
    stores.swap(1, 5);
    let u2 = StoreUniverse::new(stores, ["saf", "alb"]).unwrap();
    for k in [1, 3] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(k).build().unwrap();
        let got = pool.install(|| analyze_local(&u2, &merger(), &marginal(), &presumption(), 5.0).unwrap());
        assert_eq!(serde_json::to_string(&got).unwrap(), base);
    }
}

#[test]
fn known_distance() {
    // one degree of latitude
    let d = haversine(LatLon::new(0.0, 0.0).unwrap(), LatLon::new(1.0, 0.0).unwrap()).unwrap();
    assert!((d - 111.195).abs() < 0.001);
    assert!(LatLon::new(91.0, 0.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn circles_grow_with_radius(
        offsets in prop::collection::vec((-0.2f64..0.2, -0.2f64..0.2), 1..30),
        r1 in 0.0f64..20.0,
        extra in 0.0f64..20.0,
    ) {
        let stores: Vec<Store> = offsets
            .iter()
            .enumerate()
            .map(|(k, (dy, dx))| store(&format!("s{k:02}"), "c", "supermarket", 45.0 + dy, 7.0 + dx, 1.0))
            .collect();
        let u = StoreUniverse::new(stores.clone(), ["c"]).unwrap();
        let small = circle_market(&u, "s00", r1).unwrap();
        let large = circle_market(&u, "s00", r1 + extra).unwrap();
        prop_assert!(small.members.is_subset(&large.members));
        prop_assert!(small.members.contains("s00"));
        // brute-force membership
        let origin = stores[0].location();
        for s in &stores {
            let d = haversine(origin, s.location()).unwrap();
            if (d - r1 * KM_PER_MILE).abs() > 1e-9 {
                prop_assert_eq!(small.members.contains(&s.store_id), d <= r1 * KM_PER_MILE);
            }
        }
    }
}
