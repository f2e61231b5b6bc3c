//! Local "circle" markets around the merging parties' stores.
//!
//! Every defendant store is the center of a market made of all stores
//! within a fixed radius. Store revenue is rolled up to chains, each
//! format-exclusion set is screened, and markets whose screening decision
//! depends on the exclusion set get a power index per format.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{check_exact_capacity, enumerate_subsets, DisplayRounding, ExclusionSet, MarginalSet};
use crate::metrics::{merger_outcome, Market, MergerOutcome, MergerSpec, ScreeningRule};
use crate::shapley::{sspi, SimpleGame};

/// Mean Earth radius in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;
pub const KM_PER_MILE: f64 = 1.609344;

/// Store format. Unknown tags are kept verbatim (lowercased).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Format {
    Supermarket,
    Supercenter,
    Club,
    Natural,
    Limited,
    Other(String),
}

impl Format {
    pub fn as_str(&self) -> &str {
        match self {
            Format::Supermarket => "supermarket",
            Format::Supercenter => "supercenter",
            Format::Club => "club",
            Format::Natural => "natural",
            Format::Limited => "limited",
            Format::Other(tag) => tag,
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let tag = s.trim().to_ascii_lowercase();
        Ok(match tag.as_str() {
            "" => return Err(Error::domain("empty store format")),
            "supermarket" => Format::Supermarket,
            "supercenter" => Format::Supercenter,
            "club" => Format::Club,
            "natural" => Format::Natural,
            "limited" => Format::Limited,
            _ => Format::Other(tag),
        })
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Format {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Format {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        let p = Self { lat, lon };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        if !(self.lat.is_finite() && (-90.0..=90.0).contains(&self.lat)) {
            return Err(Error::domain(format!("latitude {} outside [-90, 90]", self.lat)));
        }
        if !(self.lon.is_finite() && (-180.0..=180.0).contains(&self.lon)) {
            return Err(Error::domain(format!("longitude {} outside [-180, 180]", self.lon)));
        }
        Ok(())
    }
}

/// Great-circle distance in kilometres on a sphere of radius
/// [`EARTH_RADIUS_KM`].
pub fn haversine(a: LatLon, b: LatLon) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    Ok(haversine_unchecked(a, b))
}

fn haversine_unchecked(a: LatLon, b: LatLon) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Store {
    pub store_id: String,
    pub chain_id: String,
    pub chain_name: String,
    pub format: Format,
    pub latitude: f64,
    pub longitude: f64,
    pub revenue: f64,
}

impl Store {
    pub fn validate(&self) -> Result<()> {
        if self.store_id.is_empty() {
            return Err(Error::domain("empty store_id"));
        }
        if self.chain_id.is_empty() {
            return Err(Error::domain(format!("store {:?} has an empty chain_id", self.store_id)));
        }
        self.location()
            .validate()
            .map_err(|e| Error::domain(format!("store {:?}: {e}", self.store_id)))?;
        if !(self.revenue.is_finite() && self.revenue >= 0.0) {
            return Err(Error::domain(format!(
                "store {:?} has invalid revenue {}",
                self.store_id, self.revenue
            )));
        }
        Ok(())
    }

    pub fn location(&self) -> LatLon {
        LatLon {
            lat: self.latitude,
            lon: self.longitude,
        }
    }
}

/// Validated stores, sorted by `store_id`, with a latitude index for
/// radius queries.
#[derive(Clone, Debug)]
pub struct StoreUniverse {
    stores: Vec<Store>,
    defendant_chains: BTreeSet<String>,
    by_latitude: Vec<usize>,
}

impl StoreUniverse {
    pub fn new<I, S>(mut stores: Vec<Store>, defendant_chains: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        for store in &stores {
            store.validate()?;
        }
        stores.sort_by(|a, b| a.store_id.cmp(&b.store_id));
        if let Some(w) = stores.windows(2).find(|w| w[0].store_id == w[1].store_id) {
            return Err(Error::domain(format!("duplicate store_id {:?}", w[0].store_id)));
        }
        let mut by_latitude: Vec<usize> = (0..stores.len()).collect();
        by_latitude.sort_by(|&a, &b| stores[a].latitude.total_cmp(&stores[b].latitude).then(a.cmp(&b)));
        Ok(Self {
            stores,
            defendant_chains: defendant_chains.into_iter().map(Into::into).collect(),
            by_latitude,
        })
    }

    pub fn stores(&self) -> &[Store] {
        &self.stores
    }

    pub fn defendant_chains(&self) -> &BTreeSet<String> {
        &self.defendant_chains
    }

    pub fn len(&self) -> usize {
        self.stores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stores.is_empty()
    }

    fn position(&self, store_id: &str) -> Option<usize> {
        self.stores
            .binary_search_by(|s| s.store_id.as_str().cmp(store_id))
            .ok()
    }

    pub fn get(&self, store_id: &str) -> Option<&Store> {
        self.position(store_id).map(|k| &self.stores[k])
    }

    pub fn has_chain(&self, chain_id: &str) -> bool {
        self.stores.iter().any(|s| s.chain_id == chain_id)
    }

    /// Indices of stores within `radius_km` of store `center`, ascending.
    fn within(&self, center: usize, radius_km: f64) -> Vec<usize> {
        let origin = self.stores[center].location();
        // Latitude band prefilter: any point within r lies within r/R
        // radians of latitude. Widened slightly; the haversine test decides.
        let band = (radius_km / EARTH_RADIUS_KM).to_degrees() * (1.0 + 1e-9) + 1e-9;
        let lo = self
            .by_latitude
            .partition_point(|&k| self.stores[k].latitude < origin.lat - band);
        let hi = self
            .by_latitude
            .partition_point(|&k| self.stores[k].latitude <= origin.lat + band);
        let mut members: Vec<usize> = self.by_latitude[lo..hi]
            .iter()
            .copied()
            .filter(|&k| k == center || haversine_unchecked(origin, self.stores[k].location()) <= radius_km)
            .collect();
        members.sort_unstable();
        members
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircleMarket {
    pub center: String,
    pub radius_miles: f64,
    pub members: BTreeSet<String>,
}

/// All stores within `radius_miles` of `center` (boundary inclusive).
pub fn circle_market(u: &StoreUniverse, center: &str, radius_miles: f64) -> Result<CircleMarket> {
    check_radius(radius_miles)?;
    let k = u
        .position(center)
        .ok_or_else(|| Error::domain(format!("unknown center store {center:?}")))?;
    let members = u
        .within(k, radius_miles * KM_PER_MILE)
        .into_iter()
        .map(|i| u.stores[i].store_id.clone())
        .collect();
    Ok(CircleMarket {
        center: center.to_string(),
        radius_miles,
        members,
    })
}

fn check_radius(radius_miles: f64) -> Result<()> {
    if !(radius_miles.is_finite() && radius_miles >= 0.0) {
        return Err(Error::domain(format!("radius must be finite and nonnegative, got {radius_miles}")));
    }
    Ok(())
}

/// Revenue by chain over `stores`, skipping excluded formats.
pub fn chain_market<'a, I>(stores: I, excluded_formats: &BTreeSet<Format>) -> Market
where
    I: IntoIterator<Item = &'a Store>,
{
    let mut by_chain: BTreeMap<&str, f64> = BTreeMap::new();
    for store in stores {
        if excluded_formats.contains(&store.format) {
            continue;
        }
        *by_chain.entry(store.chain_id.as_str()).or_insert(0.0) += store.revenue;
    }
    Market::new(by_chain).expect("validated stores give a valid market")
}

/// Screening result for one exclusion set of one local market.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LocalOutcome {
    #[serde(serialize_with = "serialize_subset")]
    pub subset: ExclusionSet,
    pub outcome: MergerOutcome,
    pub flagged: bool,
}

fn serialize_subset<S: serde::Serializer>(s: &ExclusionSet, ser: S) -> std::result::Result<S::Ok, S::Error> {
    ser.collect_seq(s.indices())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LocalAnalysisResult {
    pub center: String,
    /// Number of stores in the circle.
    pub members: usize,
    /// One entry per exclusion set, canonical order.
    pub outcomes: Vec<LocalOutcome>,
    /// The screening decision is not constant across exclusion sets.
    pub sensitive: bool,
    /// The decision already triggers with nothing excluded.
    pub degenerate_at_origin: bool,
    /// Power index per marginal format; present for sensitive markets.
    pub sspi: Option<Vec<f64>>,
}

impl LocalAnalysisResult {
    pub fn outcome_at(&self, omega: ExclusionSet) -> Option<&LocalOutcome> {
        self.outcomes.iter().find(|o| o.subset == omega)
    }

    pub fn flagged_at(&self, omega: ExclusionSet) -> bool {
        self.outcome_at(omega).is_some_and(|o| o.flagged)
    }

    /// Power index, with zeros for non-sensitive markets (all players are
    /// null in a constant game).
    pub fn sspi_or_zero(&self) -> Vec<f64> {
        self.sspi
            .clone()
            .unwrap_or_else(|| vec![0.0; self.outcomes.first().map_or(0, |o| o.subset.universe_size())])
    }
}

/// Parses marginal-set labels as store formats.
pub fn marginal_formats(ms: &MarginalSet) -> Result<Vec<Format>> {
    ms.labels().iter().map(|l| l.parse()).collect()
}

/// Screens every circle market around a defendant store.
///
/// Centers are defendant-chain stores whose own format is not marginal,
/// so a center never excludes itself. Circles where either merging chain
/// has no revenue in the broadest market are skipped (no overlap).
/// Results are sorted by center `store_id`.
pub fn analyze_local(
    u: &StoreUniverse,
    merger: &MergerSpec,
    marginal: &MarginalSet,
    rule: &ScreeningRule,
    radius_miles: f64,
) -> Result<Vec<LocalAnalysisResult>> {
    check_radius(radius_miles)?;
    check_exact_capacity(marginal.len(), "local analysis", "")?;
    rule.validate()?;
    for party in merger.parties() {
        if !u.has_chain(party) {
            return Err(Error::domain(format!("merging chain {party:?} has no stores in the universe")));
        }
    }
    let formats = marginal_formats(marginal)?;
    let centers: Vec<usize> = (0..u.len())
        .filter(|&k| {
            let s = &u.stores[k];
            u.defendant_chains.contains(&s.chain_id) && !formats.contains(&s.format)
        })
        .collect();
    if centers.is_empty() {
        return Err(Error::domain("no defendant stores to center local markets on"));
    }

    let subsets = enumerate_subsets(marginal.len())?;
    let exclusions: Vec<BTreeSet<Format>> = subsets
        .iter()
        .map(|s| s.indices().map(|i| formats[i].clone()).collect())
        .collect();
    let radius_km = radius_miles * KM_PER_MILE;

    let results: Vec<Option<LocalAnalysisResult>> = centers
        .par_iter()
        .map(|&c| analyze_circle(u, c, radius_km, merger, rule, &subsets, &exclusions))
        .collect::<Result<_>>()?;
    Ok(results.into_iter().flatten().collect())
}

fn analyze_circle(
    u: &StoreUniverse,
    center: usize,
    radius_km: f64,
    merger: &MergerSpec,
    rule: &ScreeningRule,
    subsets: &[ExclusionSet],
    exclusions: &[BTreeSet<Format>],
) -> Result<Option<LocalAnalysisResult>> {
    let members = u.within(center, radius_km);
    let stores: Vec<&Store> = members.iter().map(|&k| &u.stores[k]).collect();
    let center_id = &u.stores[center].store_id;

    let broadest = chain_market(stores.iter().copied(), &BTreeSet::new());
    if merger.parties().iter().any(|p| broadest.sales(p).unwrap_or(0.0) <= 0.0) {
        return Ok(None);
    }

    let n = subsets.first().map_or(0, |s| s.universe_size());
    let mut outcomes = Vec::with_capacity(subsets.len());
    let mut wins = vec![false; 1usize << n];
    for (&subset, excluded) in subsets.iter().zip(exclusions) {
        let mut market = chain_market(stores.iter().copied(), excluded);
        for p in merger.parties() {
            market.ensure_firm(p);
        }
        let outcome = merger_outcome(&market, merger).map_err(|e| Error::Evaluation {
            subset,
            source: format!("circle around {center_id:?}: {e}").into(),
        })?;
        let flagged = rule.decide(&outcome);
        wins[subset.bits() as usize] = flagged;
        outcomes.push(LocalOutcome {
            subset,
            outcome,
            flagged,
        });
    }

    let game = SimpleGame::from_wins(n, wins)?;
    let sensitive = game.is_sensitive();
    let power = if sensitive { Some(sspi(&game)?.values) } else { None };
    Ok(Some(LocalAnalysisResult {
        center: center_id.clone(),
        members: members.len(),
        outcomes,
        sensitive,
        degenerate_at_origin: game.degenerate_at_origin(),
        sspi: power,
    }))
}

/// Number of markets whose screening rule triggers at `omega`.
pub fn count_presumptive(results: &[LocalAnalysisResult], omega: ExclusionSet) -> usize {
    results.iter().filter(|r| r.flagged_at(omega)).count()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureRow {
    /// Power index vector rounded half up.
    pub sspi: Vec<f64>,
    pub count: usize,
}

/// Frequency of rounded SSPI vectors over the sensitive markets, sorted by
/// descending count, then descending vector.
pub fn sspi_structure_table(results: &[LocalAnalysisResult], decimals: u32) -> Vec<StructureRow> {
    let rounding = DisplayRounding::Round(decimals);
    let scale = 10f64.powi(decimals as i32);
    let mut counts: BTreeMap<Vec<i64>, usize> = BTreeMap::new();
    for r in results.iter().filter(|r| r.sensitive) {
        let key = r
            .sspi_or_zero()
            .iter()
            .map(|&x| (rounding.apply(x) * scale).round() as i64)
            .collect();
        *counts.entry(key).or_insert(0) += 1;
    }
    let mut rows: Vec<(Vec<i64>, usize)> = counts.into_iter().collect();
    rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| b.0.cmp(&a.0)));
    rows.into_iter()
        .map(|(key, count)| StructureRow {
            sspi: key.into_iter().map(|k| k as f64 / scale).collect(),
            count,
        })
        .collect()
}
