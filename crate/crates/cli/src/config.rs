//! JSON run configuration.
//!
//! Every field has a default except `merging_chains`, so a minimal config
//! is `{"merging_chains": ["alb", "saf"]}`.

use std::collections::BTreeSet;
use std::path::Path;

use mktsens_core::geomarket::Format;
use mktsens_core::lattice::{DisplayRounding, MAX_EXACT_MEMBERS};
use mktsens_core::metrics::{MergerOutcome, MergerSpec, ScreeningRule};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// A screening statistic that can label Hasse nodes or define the
/// Shapley characteristic function.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    PreHhi,
    PostHhi,
    DeltaHhi,
    MergedShare,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::PreHhi => "pre_hhi",
            Metric::PostHhi => "post_hhi",
            Metric::DeltaHhi => "delta_hhi",
            Metric::MergedShare => "merged_share",
        }
    }

    pub fn of(self, o: &MergerOutcome) -> f64 {
        match self {
            Metric::PreHhi => o.pre_hhi,
            Metric::PostHhi => o.post_hhi,
            Metric::DeltaHhi => o.delta_hhi,
            Metric::MergedShare => o.merged_share,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapleyModeConfig {
    #[default]
    Exact,
    Sampled,
}

/// Display rounding per table. Raw values are always written to JSON.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoundingConfig {
    pub hhi: DisplayRounding,
    pub sv: DisplayRounding,
    pub sv_share: DisplayRounding,
    pub sspi: DisplayRounding,
}

impl Default for RoundingConfig {
    fn default() -> Self {
        Self {
            hhi: DisplayRounding::Floor,
            sv: DisplayRounding::Round(0),
            sv_share: DisplayRounding::Round(3),
            sspi: DisplayRounding::Round(3),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Acquirer and target chain ids.
    pub merging_chains: Vec<String>,
    pub always_in_formats: Vec<Format>,
    pub marginal_formats: Vec<Format>,
    /// Formats dropped at load time (e.g. military commissaries).
    pub drop_formats: Vec<Format>,
    /// Competitor chains for the firm-level analysis.
    pub marginal_firms: Option<Vec<String>>,
    /// Chains whose stores center local markets; defaults to the merging chains.
    pub center_chains: Option<Vec<String>>,
    pub rule: ScreeningRule,
    pub radius_miles: f64,
    /// Keep only rows whose `region` column equals this value.
    pub region_filter: Option<String>,
    pub hasse_metrics: Vec<Metric>,
    pub sv_metric: Metric,
    pub shapley_mode: ShapleyModeConfig,
    pub permutations: u64,
    pub seed: u64,
    pub rounding: RoundingConfig,
    pub title: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            merging_chains: Vec::new(),
            always_in_formats: vec![Format::Supermarket, Format::Supercenter],
            marginal_formats: vec![Format::Club, Format::Natural, Format::Limited],
            drop_formats: Vec::new(),
            marginal_firms: None,
            center_chains: None,
            rule: ScreeningRule::default(),
            radius_miles: 5.0,
            region_filter: None,
            hasse_metrics: vec![Metric::PostHhi, Metric::DeltaHhi],
            sv_metric: Metric::PostHhi,
            shapley_mode: ShapleyModeConfig::Exact,
            permutations: 200_000,
            seed: 0,
            rounding: RoundingConfig::default(),
            title: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Structural checks that need no store data.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.merging_chains.len() != 2 {
            return bad(format!("merging_chains must name exactly two chains, got {}", self.merging_chains.len()));
        }
        self.merger()?;
        let always: BTreeSet<&Format> = self.always_in_formats.iter().collect();
        let marginal: BTreeSet<&Format> = self.marginal_formats.iter().collect();
        let dropped: BTreeSet<&Format> = self.drop_formats.iter().collect();
        if marginal.len() != self.marginal_formats.len() {
            return bad("marginal_formats contains duplicates".into());
        }
        if let Some(f) = always.intersection(&marginal).next() {
            return bad(format!("format {f} is both always-in and marginal"));
        }
        if let Some(f) = dropped.iter().find(|f| always.contains(*f) || marginal.contains(*f)) {
            return bad(format!("format {f} is dropped but also analysed"));
        }
        if self.marginal_formats.len() > MAX_EXACT_MEMBERS {
            return bad(format!("at most {MAX_EXACT_MEMBERS} marginal formats are supported"));
        }
        if let Some(firms) = &self.marginal_firms {
            let unique: BTreeSet<&String> = firms.iter().collect();
            if unique.len() != firms.len() {
                return bad("marginal_firms contains duplicates".into());
            }
            if let Some(f) = firms.iter().find(|f| self.merging_chains.contains(f)) {
                return bad(format!("marginal firm {f:?} is a merging chain"));
            }
            if firms.iter().any(|f| f.is_empty()) {
                return bad("marginal_firms contains an empty chain id".into());
            }
        }
        if !(self.radius_miles.is_finite() && self.radius_miles >= 0.0) {
            return bad(format!("radius_miles must be finite and nonnegative, got {}", self.radius_miles));
        }
        if self.hasse_metrics.is_empty() {
            return bad("hasse_metrics must list at least one metric".into());
        }
        if self.shapley_mode == ShapleyModeConfig::Sampled && self.permutations == 0 {
            return bad("permutations must be positive in sampled mode".into());
        }
        self.rule.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn merger(&self) -> Result<MergerSpec> {
        MergerSpec::new(self.merging_chains[0].clone(), self.merging_chains[1].clone())
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn centers(&self) -> Vec<String> {
        self.center_chains.clone().unwrap_or_else(|| self.merging_chains.clone())
    }

    /// Formats that enter the analysis at all.
    pub fn analysed_formats(&self) -> BTreeSet<Format> {
        self.always_in_formats.iter().chain(&self.marginal_formats).cloned().collect()
    }
}
