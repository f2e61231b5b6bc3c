//! Share-based evaluation metrics and the structural-presumption rule.
//!
//! Everything here is a pure function of a [`Market`]. HHI values are in
//! points (`10000 · Σ s²`) and carried at full precision; rounding is left
//! to whoever prints them.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{ExclusionSet, MarginalSet};

/// HHI of a monopoly.
pub const HHI_SCALE: f64 = 10_000.0;

/// Sales by firm. Zero-sales firms are allowed and simply hold a zero share.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Market {
    sales: BTreeMap<String, f64>,
}

impl Market {
    pub fn new<I, K>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, f64)>,
        K: Into<String>,
    {
        let mut sales = BTreeMap::new();
        for (firm, x) in entries {
            let firm = firm.into();
            if !(x.is_finite() && x >= 0.0) {
                return Err(Error::domain(format!("sales of {firm:?} must be finite and nonnegative, got {x}")));
            }
            if sales.insert(firm.clone(), x).is_some() {
                return Err(Error::domain(format!("duplicate firm {firm:?} in market")));
            }
        }
        Ok(Self { sales })
    }

    pub fn len(&self) -> usize {
        self.sales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sales.is_empty()
    }

    pub fn contains(&self, firm: &str) -> bool {
        self.sales.contains_key(firm)
    }

    pub fn sales(&self, firm: &str) -> Option<f64> {
        self.sales.get(firm).copied()
    }

    pub fn firms(&self) -> impl Iterator<Item = &str> {
        self.sales.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.sales.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn total(&self) -> f64 {
        self.sales.values().sum()
    }

    /// Adds `firm` with zero sales if it is not already present.
    pub fn ensure_firm(&mut self, firm: &str) {
        self.sales.entry(firm.to_string()).or_insert(0.0);
    }

    fn positive_total(&self) -> Result<f64> {
        let total = self.total();
        if total > 0.0 {
            Ok(total)
        } else {
            Err(Error::DegenerateMarket)
        }
    }

    fn require(&self, firm: &str) -> Result<f64> {
        self.sales(firm)
            .ok_or_else(|| Error::domain(format!("firm {firm:?} is not in the market")))
    }

    fn share_of(&self, firm: &str) -> Result<f64> {
        let x = self.require(firm)?;
        Ok(x / self.positive_total()?)
    }
}

/// `s_j = x_j / Σ x_l`.
pub fn shares(m: &Market) -> Result<BTreeMap<String, f64>> {
    let total = m.positive_total()?;
    Ok(m.sales.iter().map(|(k, x)| (k.clone(), x / total)).collect())
}

pub fn hhi(m: &Market) -> Result<f64> {
    let total = m.positive_total()?;
    Ok(HHI_SCALE * m.sales.values().map(|x| (x / total).powi(2)).sum::<f64>())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergerSpec {
    pub acquirer: String,
    pub target: String,
}

impl MergerSpec {
    pub fn new(acquirer: impl Into<String>, target: impl Into<String>) -> Result<Self> {
        let (acquirer, target) = (acquirer.into(), target.into());
        if acquirer == target {
            return Err(Error::domain(format!("a firm cannot merge with itself ({acquirer:?})")));
        }
        Ok(Self { acquirer, target })
    }

    pub fn parties(&self) -> [&str; 2] {
        [&self.acquirer, &self.target]
    }

    pub fn involves(&self, firm: &str) -> bool {
        self.acquirer == firm || self.target == firm
    }
}

/// HHI after combining the merging parties' sales into one firm.
pub fn post_merger_hhi(m: &Market, g: &MergerSpec) -> Result<f64> {
    let total = m.positive_total()?;
    let combined = m.require(&g.acquirer)? + m.require(&g.target)?;
    let rest: f64 = m
        .iter()
        .filter(|(firm, _)| !g.involves(firm))
        .map(|(_, x)| (x / total).powi(2))
        .sum();
    Ok(HHI_SCALE * (rest + (combined / total).powi(2)))
}

/// `10000 · 2 s_a s_b`, at the candidate market's pre-merger shares.
pub fn delta_hhi(m: &Market, g: &MergerSpec) -> Result<f64> {
    let s_a = m.share_of(&g.acquirer)?;
    let s_b = m.share_of(&g.target)?;
    Ok(HHI_SCALE * 2.0 * s_a * s_b)
}

/// Combined share of `group`.
pub fn concentration_ratio<'a, I>(m: &Market, group: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a str>,
{
    let total = m.positive_total()?;
    let mut members = BTreeSet::new();
    for firm in group {
        m.require(firm)?;
        members.insert(firm);
    }
    Ok(members.into_iter().map(|f| m.sales[f] / total).sum())
}

/// Logit (proportional-to-share) diversion `D_{j→k} = s_k / (1 − s_j)`.
pub fn diversion_ratio(m: &Market, j: &str, k: &str) -> Result<f64> {
    if j == k {
        return Err(Error::domain(format!("diversion from {j:?} to itself")));
    }
    let s_j = m.share_of(j)?;
    let s_k = m.share_of(k)?;
    if s_j >= 1.0 {
        return Err(Error::Singularity(format!("{j:?} holds the whole market; diversion undefined")));
    }
    Ok(s_k / (1.0 - s_j))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriceCost {
    pub price: f64,
    pub marginal_cost: f64,
}

impl PriceCost {
    pub fn new(price: f64, marginal_cost: f64) -> Result<Self> {
        if !(price.is_finite() && price > 0.0) {
            return Err(Error::domain(format!("price must be positive, got {price}")));
        }
        if !(marginal_cost.is_finite() && (0.0..=price).contains(&marginal_cost)) {
            return Err(Error::domain(format!(
                "marginal cost must lie in [0, price], got {marginal_cost} for price {price}"
            )));
        }
        Ok(Self { price, marginal_cost })
    }

    /// `(p − c) / p`.
    pub fn margin(&self) -> f64 {
        (self.price - self.marginal_cost) / self.price
    }
}

/// Prices and marginal costs by firm.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MarginData {
    entries: BTreeMap<String, PriceCost>,
}

impl MarginData {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, firm: impl Into<String>, price: f64, marginal_cost: f64) -> Result<()> {
        self.entries.insert(firm.into(), PriceCost::new(price, marginal_cost)?);
        Ok(())
    }

    pub fn get(&self, firm: &str) -> Option<&PriceCost> {
        self.entries.get(firm)
    }

    fn require(&self, firm: &str) -> Result<&PriceCost> {
        self.get(firm)
            .ok_or_else(|| Error::domain(format!("no price/cost data for {firm:?}")))
    }
}

/// Gross upward pricing pressure on `j` from merging with `k`:
/// `(p_k − c_k) · D_{j→k}`, with no efficiency credit.
pub fn upp(m: &Market, md: &MarginData, j: &str, k: &str) -> Result<f64> {
    let pk = md.require(k)?;
    let d = diversion_ratio(m, j, k)?;
    Ok((pk.price - pk.marginal_cost) * d)
}

/// Compensating marginal cost reduction for `j`, as a fraction of `j`'s
/// price:
///
/// ```text
/// (m_j D_jk D_kj + m_k D_jk p_k/p_j) / ((1 − m_j)(1 − D_jk D_kj))
/// ```
pub fn cmcr(m: &Market, md: &MarginData, j: &str, k: &str) -> Result<f64> {
    let pj = md.require(j)?;
    let pk = md.require(k)?;
    let d_jk = diversion_ratio(m, j, k)?;
    let d_kj = diversion_ratio(m, k, j)?;
    let cross = d_jk * d_kj;
    if cross >= 1.0 {
        return Err(Error::Singularity(format!("D_jk·D_kj = {cross} ≥ 1")));
    }
    let (m_j, m_k) = (pj.margin(), pk.margin());
    if m_j >= 1.0 {
        return Err(Error::Singularity(format!("margin of {j:?} is 1 (zero marginal cost)")));
    }
    let numerator = m_j * cross + m_k * d_jk * pk.price / pj.price;
    Ok(numerator / ((1.0 - m_j) * (1.0 - cross)))
}

/// A broadest market plus the firms that can never be excluded from it
/// (merging parties and always-in firms).
#[derive(Clone, Debug, PartialEq)]
pub struct MarketUniverse {
    universe: Market,
    protected: BTreeSet<String>,
}

impl MarketUniverse {
    pub fn new<I, S>(universe: Market, protected: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let protected: BTreeSet<String> = protected.into_iter().map(Into::into).collect();
        if let Some(missing) = protected.iter().find(|f| !universe.contains(f)) {
            return Err(Error::domain(format!("protected firm {missing:?} is not in the universe")));
        }
        Ok(Self { universe, protected })
    }

    pub fn universe(&self) -> &Market {
        &self.universe
    }

    pub fn is_protected(&self, firm: &str) -> bool {
        self.protected.contains(firm)
    }

    /// The universe with `labels` removed.
    pub fn exclude<'a, I>(&self, labels: I) -> Result<Market>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut market = self.universe.clone();
        for label in labels {
            if self.protected.contains(label) {
                return Err(Error::domain(format!("{label:?} is a merging party or always-in member and cannot be excluded")));
            }
            if market.sales.remove(label).is_none() && !self.universe.contains(label) {
                return Err(Error::domain(format!("{label:?} is not in the universe")));
            }
        }
        Ok(market)
    }

    /// Market for exclusion set `omega` over the marginal firms `ms`.
    pub fn market_for(&self, ms: &MarginalSet, omega: ExclusionSet) -> Result<Market> {
        self.exclude(ms.labels_of(omega))
    }
}

/// Merger screening statistics on one candidate market.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergerOutcome {
    pub pre_hhi: f64,
    pub post_hhi: f64,
    pub delta_hhi: f64,
    pub merged_share: f64,
}

pub fn merger_outcome(m: &Market, g: &MergerSpec) -> Result<MergerOutcome> {
    Ok(MergerOutcome {
        pre_hhi: hhi(m)?,
        post_hhi: post_merger_hhi(m, g)?,
        delta_hhi: delta_hhi(m, g)?,
        merged_share: concentration_ratio(m, g.parties())?,
    })
}

/// Structural presumption thresholds. Criterion (i) is
/// `post HHI > 1800 ∧ ΔHHI > 100`; criterion (ii), off by default, is
/// `merged share > 30% ∧ ΔHHI > 100`. All inequalities are strict.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PresumptionRule {
    pub post_hhi_threshold: f64,
    pub delta_hhi_threshold: f64,
    pub merged_share_threshold: f64,
    pub use_share_criterion: bool,
}

impl Default for PresumptionRule {
    fn default() -> Self {
        Self {
            post_hhi_threshold: 1800.0,
            delta_hhi_threshold: 100.0,
            merged_share_threshold: 0.30,
            use_share_criterion: false,
        }
    }
}

impl PresumptionRule {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |x: f64| x.is_finite() && x >= 0.0;
        if !finite_nonneg(self.post_hhi_threshold) || !finite_nonneg(self.delta_hhi_threshold) {
            return Err(Error::domain("HHI thresholds must be finite and nonnegative"));
        }
        if !(self.merged_share_threshold > 0.0 && self.merged_share_threshold <= 1.0) {
            return Err(Error::domain("merged share threshold must lie in (0, 1]"));
        }
        Ok(())
    }
}

pub fn presumption(post_hhi: f64, d_hhi: f64, merged_share: f64, rule: &PresumptionRule) -> bool {
    let raises = d_hhi > rule.delta_hhi_threshold;
    let concentrated = post_hhi > rule.post_hhi_threshold && raises;
    let large_share = rule.use_share_criterion && merged_share > rule.merged_share_threshold && raises;
    concentrated || large_share
}

/// Binary screening decision applied to a candidate market.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScreeningRule {
    /// The structural presumption on post-merger HHI and ΔHHI.
    Presumption(PresumptionRule),
    /// Pre-merger HHI at or above a threshold ("highly concentrated").
    HhiAtLeast { threshold: f64 },
}

impl Default for ScreeningRule {
    fn default() -> Self {
        ScreeningRule::Presumption(PresumptionRule::default())
    }
}

impl ScreeningRule {
    pub fn decide(&self, o: &MergerOutcome) -> bool {
        match self {
            ScreeningRule::Presumption(rule) => presumption(o.post_hhi, o.delta_hhi, o.merged_share, rule),
            ScreeningRule::HhiAtLeast { threshold } => o.pre_hhi >= *threshold,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ScreeningRule::Presumption(rule) => rule.validate(),
            ScreeningRule::HhiAtLeast { threshold } if threshold.is_finite() && *threshold >= 0.0 => Ok(()),
            ScreeningRule::HhiAtLeast { .. } => Err(Error::domain("HHI threshold must be finite and nonnegative")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example_one() -> Market {
        Market::new([
            ("A", 15.0),
            ("B", 15.0),
            ("C", 10.0),
            ("D", 10.0),
            ("E", 10.0),
            ("1", 9.0),
            ("2", 6.0),
            ("3", 3.0),
        ])
        .unwrap()
    }

    fn ab() -> MergerSpec {
        MergerSpec::new("A", "B").unwrap()
    }

    #[test]
    fn shares_basic() {
        let m = Market::new([("x", 2.0), ("y", 2.0), ("z", 2.0)]).unwrap();
        for s in shares(&m).unwrap().values() {
            assert!((s - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = shares(&example_one()).unwrap();
        assert!((s["A"] - 15.0 / 78.0).abs() < 1e-15);
        assert!((s["A"] - 0.19231).abs() < 1e-5);
        assert!((s.values().sum::<f64>() - 1.0).abs() < 1e-12);
        let mono = Market::new([("only", 3.0)]).unwrap();
        assert_eq!(shares(&mono).unwrap()["only"], 1.0);
    }

    #[test]
    fn degenerate_market_is_rejected() {
        let m = Market::new([("x", 0.0), ("y", 0.0)]).unwrap();
        assert!(matches!(shares(&m), Err(Error::DegenerateMarket)));
        assert!(matches!(hhi(&m), Err(Error::DegenerateMarket)));
        assert!(matches!(hhi(&Market::default()), Err(Error::DegenerateMarket)));
    }

    #[test]
    fn market_rejects_bad_sales() {
        assert!(Market::new([("x", -1.0)]).is_err());
        assert!(Market::new([("x", f64::NAN)]).is_err());
        assert!(Market::new([("x", 1.0), ("x", 2.0)]).is_err());
    }

    #[test]
    fn hhi_example_one() {
        assert_eq!(hhi(&Market::new([("m", 5.0)]).unwrap()).unwrap(), 10_000.0);
        let full = hhi(&example_one()).unwrap();
        // 876 / 78²
        assert!((full - 10_000.0 * 876.0 / 6084.0).abs() < 1e-9);
        assert_eq!(full.floor(), 1439.0);
        let narrow = Market::new([("A", 15.0), ("B", 15.0), ("C", 10.0), ("D", 10.0), ("E", 10.0)]).unwrap();
        let h = hhi(&narrow).unwrap();
        assert!((h - 2_083.333_333).abs() < 1e-3);
        assert_eq!(h.floor(), 2083.0);
    }

    #[test]
    fn merger_deltas() {
        let duo = Market::new([("a", 1.0), ("b", 1.0)]).unwrap();
        let g = MergerSpec::new("a", "b").unwrap();
        assert!((post_merger_hhi(&duo, &g).unwrap() - 10_000.0).abs() < 1e-9);
        assert!((delta_hhi(&duo, &g).unwrap() - 5000.0).abs() < 1e-9);

        let m = example_one();
        let d = delta_hhi(&m, &ab()).unwrap();
        assert!((d - 2.0 * (15.0f64 / 78.0).powi(2) * 10_000.0).abs() < 1e-9);
        assert!((d - 739.64).abs() < 0.01);
        let post = post_merger_hhi(&m, &ab()).unwrap();
        assert!((post - 2179.49).abs() < 0.01);
        assert!((post - hhi(&m).unwrap() - d).abs() < 1e-9);

        let zero_target = Market::new([("a", 4.0), ("b", 0.0), ("c", 1.0)]).unwrap();
        assert_eq!(delta_hhi(&zero_target, &g).unwrap(), 0.0);

        let missing = MergerSpec::new("A", "Z").unwrap();
        assert!(matches!(delta_hhi(&m, &missing), Err(Error::Domain(_))));
        assert!(matches!(post_merger_hhi(&m, &missing), Err(Error::Domain(_))));
        assert!(MergerSpec::new("A", "A").is_err());
    }

    #[test]
    fn concentration_ratio_cases() {
        let m = example_one();
        let all: Vec<&str> = m.firms().collect();
        assert!((concentration_ratio(&m, all).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(concentration_ratio(&m, []).unwrap(), 0.0);
        assert!((concentration_ratio(&m, ["A", "B"]).unwrap() - 30.0 / 78.0).abs() < 1e-15);
        assert!(concentration_ratio(&m, ["Q"]).is_err());
    }

    #[test]
    fn diversion_cases() {
        let m = Market::new([("j", 5.0), ("k", 2.0), ("o", 3.0)]).unwrap();
        assert!((diversion_ratio(&m, "j", "k").unwrap() - 0.4).abs() < 1e-15);
        let tiny = Market::new([("j", 0.0), ("k", 2.0), ("o", 3.0)]).unwrap();
        assert!((diversion_ratio(&tiny, "j", "k").unwrap() - 0.4).abs() < 1e-15);
        let d = diversion_ratio(&example_one(), "A", "B").unwrap();
        assert!((d - 15.0 / 63.0).abs() < 1e-15);
        let mono = Market::new([("j", 5.0), ("k", 0.0)]).unwrap();
        assert!(matches!(diversion_ratio(&mono, "j", "k"), Err(Error::Singularity(_))));
        assert!(diversion_ratio(&m, "j", "j").is_err());
    }

    #[test]
    fn upp_cases() {
        // D = 0.25: s_j = 0.2, s_k = 0.2
        let m = Market::new([("j", 2.0), ("k", 2.0), ("o", 6.0)]).unwrap();
        let mut md = MarginData::new();
        md.insert("k", 5.0, 3.0).unwrap();
        assert!((upp(&m, &md, "j", "k").unwrap() - 0.5).abs() < 1e-15);

        let mut zero = MarginData::new();
        zero.insert("k", 4.0, 4.0).unwrap();
        assert_eq!(upp(&m, &zero, "j", "k").unwrap(), 0.0);

        let m = Market::new([("j", 5.0), ("k", 2.0), ("o", 3.0)]).unwrap();
        let mut md = MarginData::new();
        md.insert("k", 10.0, 6.0).unwrap();
        assert!((upp(&m, &md, "j", "k").unwrap() - 1.6).abs() < 1e-12);
        assert!(upp(&m, &MarginData::new(), "j", "k").is_err());
    }

    #[test]
    fn cmcr_cases() {
        let m = Market::new([("j", 1.0), ("k", 1.0), ("o", 1.0)]).unwrap();
        let mut md = MarginData::new();
        md.insert("j", 10.0, 5.0).unwrap();
        md.insert("k", 10.0, 5.0).unwrap();
        assert!((cmcr(&m, &md, "j", "k").unwrap() - 1.0).abs() < 1e-12);
        assert!((cmcr(&m, &md, "k", "j").unwrap() - 1.0).abs() < 1e-12);

        // zero shares for k: both diversion ratios vanish
        let m0 = Market::new([("j", 0.0), ("k", 0.0), ("o", 1.0)]).unwrap();
        assert_eq!(cmcr(&m0, &md, "j", "k").unwrap(), 0.0);

        let mut flat = MarginData::new();
        flat.insert("j", 10.0, 10.0).unwrap();
        flat.insert("k", 10.0, 10.0).unwrap();
        assert_eq!(cmcr(&m, &flat, "j", "k").unwrap(), 0.0);

        // duopoly: both diversions are 1
        let duo = Market::new([("j", 1.0), ("k", 1.0)]).unwrap();
        assert!(matches!(cmcr(&duo, &md, "j", "k"), Err(Error::Singularity(_))));
    }

    #[test]
    fn price_cost_validation() {
        assert!(PriceCost::new(0.0, 0.0).is_err());
        assert!(PriceCost::new(5.0, 6.0).is_err());
        assert!(PriceCost::new(5.0, -1.0).is_err());
        assert!((PriceCost::new(10.0, 6.0).unwrap().margin() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn exclusion() {
        let universe = MarketUniverse::new(example_one(), ["A", "B", "C", "D", "E"]).unwrap();
        assert_eq!(universe.exclude([]).unwrap(), example_one());
        let m = universe.exclude(["1", "3"]).unwrap();
        let firms: Vec<&str> = m.firms().collect();
        assert_eq!(firms, vec!["2", "A", "B", "C", "D", "E"]);
        let m = universe.exclude(["1", "2", "3"]).unwrap();
        assert_eq!(m.len(), 5);
        assert!(matches!(universe.exclude(["A"]), Err(Error::Domain(_))));
        assert!(matches!(universe.exclude(["Z"]), Err(Error::Domain(_))));

        let ms = MarginalSet::new(["1", "2", "3"]).unwrap();
        let omega = ms.set_of(["1"]).unwrap();
        assert_eq!(universe.market_for(&ms, omega).unwrap().len(), 7);
    }

    #[test]
    fn presumption_cases() {
        let rule = PresumptionRule::default();
        assert!(presumption(2152.0, 456.0, 0.0, &rule));
        assert!(!presumption(1576.0, 293.0, 0.0, &rule));
        assert!(!presumption(1800.0, 100.0, 0.0, &rule));
        assert!(!presumption(1800.0, 500.0, 0.5, &rule));
        let with_share = PresumptionRule {
            use_share_criterion: true,
            ..rule
        };
        assert!(presumption(1000.0, 150.0, 0.31, &with_share));
        assert!(!presumption(1000.0, 150.0, 0.30, &with_share));
        assert!(!presumption(1000.0, 100.0, 0.9, &with_share));
    }

    #[test]
    fn screening_rule_serde() {
        let r: ScreeningRule = serde_json::from_str(r#"{"kind":"hhi_at_least","threshold":1800}"#).unwrap();
        assert_eq!(r, ScreeningRule::HhiAtLeast { threshold: 1800.0 });
        let r: ScreeningRule = serde_json::from_str(r#"{"kind":"presumption"}"#).unwrap();
        assert_eq!(r, ScreeningRule::default());
        let bad = ScreeningRule::Presumption(PresumptionRule {
            merged_share_threshold: 0.0,
            ..PresumptionRule::default()
        });
        assert!(bad.validate().is_err());
    }
}
