//! State-level, firm-level and local analyses, and their report tables.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};

use mktsens_core::geomarket::{
    analyze_local, chain_market, count_presumptive, sspi_structure_table, Format, LocalAnalysisResult, StoreUniverse,
    StructureRow,
};
use mktsens_core::lattice::{
    build_hasse, check_exact_capacity, enumerate_subsets, AnnotatedHasseDiagram, DisplayRounding, ExclusionSet,
    MarginalSet, RenderStyle,
};
use mktsens_core::metrics::{merger_outcome, shares, Market, MarketUniverse, MergerOutcome, MergerSpec};
use mktsens_core::shapley::{
    characteristic_from_outcome, shapley_exact, shapley_sampled, simple_game_from_rule, sspi, ShapleyResult,
    SimpleGame,
};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{Metric, RoundingConfig, RunConfig, ShapleyModeConfig};
use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum FileKind {
    Dot,
    Json,
    Csv,
}

/// A rendered report file, not yet on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputFile {
    pub name: String,
    pub kind: FileKind,
    pub contents: String,
}

impl OutputFile {
    fn json<T: Serialize>(name: &str, value: &T) -> Self {
        let mut contents = serde_json::to_string_pretty(value).expect("report values serialize");
        contents.push('\n');
        Self {
            name: name.into(),
            kind: FileKind::Json,
            contents,
        }
    }

    fn csv(name: &str, header: &[&str], rows: &[Vec<String>]) -> Self {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).expect("in-memory write");
        for row in rows {
            w.write_record(row).expect("in-memory write");
        }
        let bytes = w.into_inner().expect("in-memory flush");
        Self {
            name: name.into(),
            kind: FileKind::Csv,
            contents: String::from_utf8(bytes).expect("csv of utf-8 fields"),
        }
    }
}

fn marginal_set_of(labels: impl IntoIterator<Item = String>) -> Result<MarginalSet> {
    let labels: Vec<String> = labels.into_iter().collect();
    if labels.is_empty() {
        return Ok(MarginalSet::empty());
    }
    Ok(MarginalSet::new(labels)?)
}

fn require_parties(u: &StoreUniverse, g: &MergerSpec) -> Result<()> {
    for party in g.parties() {
        if !u.has_chain(party) {
            return Err(mktsens_core::Error::Domain(format!("merging chain {party:?} has no stores")).into());
        }
    }
    Ok(())
}

/// chain id → display name (from the lowest store id of that chain).
fn chain_names(u: &StoreUniverse) -> BTreeMap<String, String> {
    let mut names = BTreeMap::new();
    for s in u.stores() {
        names.entry(s.chain_id.clone()).or_insert_with(|| {
            if s.chain_name.is_empty() {
                s.chain_id.clone()
            } else {
                s.chain_name.clone()
            }
        });
    }
    names
}

fn power_index(game: &SimpleGame) -> Result<ShapleyResult> {
    Ok(sspi(game)?)
}

fn fmt(r: DisplayRounding, x: f64) -> String {
    r.format(x)
}

fn subset_labels(ms: &MarginalSet, s: ExclusionSet) -> Vec<String> {
    ms.labels_of(s).into_iter().map(str::to_string).collect()
}

// ---------------------------------------------------------------------------
// State level

#[derive(Clone, Debug, Serialize)]
pub struct ChainShare {
    pub chain_id: String,
    pub chain_name: String,
    pub stores: usize,
    pub revenue: f64,
    pub share: f64,
}

#[derive(Debug)]
pub struct StateReport {
    pub marginal: MarginalSet,
    /// Outcome per exclusion set, in canonical order.
    pub outcomes: Vec<(ExclusionSet, MergerOutcome, Market)>,
    pub diagram: AnnotatedHasseDiagram,
    pub sv_metric: Metric,
    pub shapley: ShapleyResult,
    pub game: SimpleGame,
    pub sspi: ShapleyResult,
    /// Shares in the broadest market (all analysed stores).
    pub fixed_shares: Vec<ChainShare>,
    pub names: BTreeMap<String, String>,
    pub rounding: RoundingConfig,
    pub title: Option<String>,
}

/// Statewide chain market screened over every format-exclusion set.
pub fn run_state(config: &RunConfig, u: &StoreUniverse) -> Result<StateReport> {
    let merger = config.merger()?;
    require_parties(u, &merger)?;
    let marginal = marginal_set_of(config.marginal_formats.iter().map(Format::to_string))?;
    let n = marginal.len();
    check_exact_capacity(n, "state-level lattice", "")?;
    let subsets = enumerate_subsets(n)?;

    let evaluated: Vec<(ExclusionSet, MergerOutcome, Market)> = subsets
        .par_iter()
        .map(|&s| {
            let excluded: BTreeSet<Format> = s.indices().map(|i| config.marginal_formats[i].clone()).collect();
            let mut market = chain_market(u.stores(), &excluded);
            for p in merger.parties() {
                market.ensure_firm(p);
            }
            let outcome = merger_outcome(&market, &merger)
                .map_err(|e| mktsens_core::Error::Evaluation { subset: s, source: e.into() })?;
            Ok((s, outcome, market))
        })
        .collect::<Result<_>>()?;
    let mut by_bits = vec![None; 1usize << n];
    for (s, o, _) in &evaluated {
        by_bits[s.bits() as usize] = Some(*o);
    }
    let at = |s: ExclusionSet| by_bits[s.bits() as usize].expect("every subset evaluated");

    let names: Vec<&str> = config.hasse_metrics.iter().map(|m| m.name()).collect();
    let diagram = build_hasse(
        &marginal,
        &names,
        |s| Ok::<_, mktsens_core::Error>(config.hasse_metrics.iter().map(|m| m.of(&at(s))).collect()),
        None,
    )?
    .with_flags(|s| config.rule.decide(&at(s)));

    let game = characteristic_from_outcome(|s| Ok::<_, mktsens_core::Error>(config.sv_metric.of(&at(s))), n)?;
    let shapley = match config.shapley_mode {
        ShapleyModeConfig::Exact => shapley_exact(&game)?,
        ShapleyModeConfig::Sampled => shapley_sampled(&game, config.permutations, config.seed)?,
    };
    let simple = simple_game_from_rule(|s| Ok::<_, mktsens_core::Error>(at(s)), |o| config.rule.decide(o), n)?;
    let power = power_index(&simple)?;

    let names_by_chain = chain_names(u);
    let broadest = &evaluated[0].2;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for s in u.stores() {
        *counts.entry(s.chain_id.as_str()).or_default() += 1;
    }
    let mut fixed_shares: Vec<ChainShare> = shares(broadest)?
        .into_iter()
        .map(|(chain, share)| ChainShare {
            chain_name: names_by_chain.get(&chain).cloned().unwrap_or_else(|| chain.clone()),
            stores: counts.get(chain.as_str()).copied().unwrap_or(0),
            revenue: broadest.sales(&chain).unwrap_or(0.0),
            share,
            chain_id: chain,
        })
        .collect();
    fixed_shares.sort_by(|a, b| b.revenue.total_cmp(&a.revenue).then_with(|| a.chain_id.cmp(&b.chain_id)));

    Ok(StateReport {
        marginal,
        outcomes: evaluated,
        diagram,
        sv_metric: config.sv_metric,
        shapley,
        game: simple,
        sspi: power,
        fixed_shares,
        names: names_by_chain,
        rounding: config.rounding,
        title: config.title.clone(),
    })
}

impl StateReport {
    pub fn style(&self) -> RenderStyle {
        RenderStyle {
            rounding: self.rounding.hhi,
            title: self.title.clone(),
            ..RenderStyle::default()
        }
    }

    pub fn hasse_file(&self, kind: FileKind) -> Option<OutputFile> {
        match kind {
            FileKind::Dot => Some(OutputFile {
                name: "hasse.dot".into(),
                kind,
                contents: self.diagram.to_dot(&self.style()),
            }),
            FileKind::Json => Some(OutputFile {
                name: "hasse.json".into(),
                kind,
                contents: self.diagram.to_json(),
            }),
            FileKind::Csv => None,
        }
    }

    /// Table rows: member, SV, SV share, SSPI, then a Total row.
    pub fn shapley_rows(&self) -> Vec<Vec<String>> {
        let r = &self.rounding;
        let mut rows = Vec::new();
        for (i, label) in self.marginal.labels().iter().enumerate() {
            let mut row = vec![
                label.clone(),
                fmt(r.sv, self.shapley.values[i]),
                self.shapley.shares.as_ref().map_or(String::new(), |s| fmt(r.sv_share, s[i])),
                fmt(r.sspi, self.sspi.values[i]),
            ];
            if let Some(se) = &self.shapley.std_errors {
                row.push(fmt(r.sv, se[i]));
            }
            rows.push(row);
        }
        // The SV total is the sum of the displayed values, so the printed
        // column adds up exactly; raw totals are in the JSON.
        let displayed: f64 = self.shapley.values.iter().map(|&v| r.sv.apply(v)).sum();
        let mut total = vec![
            "Total".to_string(),
            fmt(r.sv, displayed),
            self.shapley
                .shares
                .as_ref()
                .map_or(String::new(), |s| fmt(r.sv_share, s.iter().sum())),
            fmt(r.sspi, self.sspi.total()),
        ];
        if self.shapley.std_errors.is_some() {
            total.push(String::new());
        }
        rows.push(total);
        rows
    }

    pub fn files(&self) -> Vec<OutputFile> {
        let r = &self.rounding;
        let mut out: Vec<OutputFile> = [FileKind::Dot, FileKind::Json]
            .into_iter()
            .filter_map(|k| self.hasse_file(k))
            .collect();

        let mut header = vec!["member", "sv", "sv_share", "sspi"];
        if self.shapley.std_errors.is_some() {
            header.push("sv_std_error");
        }
        out.push(OutputFile::csv("shapley.csv", &header, &self.shapley_rows()));
        out.push(OutputFile::json(
            "shapley.json",
            &json!({
                "members": self.marginal.labels(),
                "metric": self.sv_metric.name(),
                "shapley": self.shapley,
                "sspi": self.sspi.values,
                "table": self.shapley_rows(),
            }),
        ));

        let mut sspi_rows: Vec<Vec<String>> = self
            .marginal
            .labels()
            .iter()
            .zip(&self.sspi.values)
            .map(|(l, v)| vec![l.clone(), fmt(r.sspi, *v)])
            .collect();
        sspi_rows.push(vec!["Total".into(), fmt(r.sspi, self.sspi.total())]);
        out.push(OutputFile::csv("sspi.csv", &["member", "sspi"], &sspi_rows));
        out.push(OutputFile::json(
            "sspi.json",
            &json!({
                "members": self.marginal.labels(),
                "sspi": self.sspi,
                "sensitive": self.game.is_sensitive(),
                "degenerate_at_origin": self.game.degenerate_at_origin(),
                "winning_coalitions": self.game.winning_coalitions().into_iter()
                    .map(|s| subset_labels(&self.marginal, s)).collect::<Vec<_>>(),
                "table": sspi_rows,
            }),
        ));

        let share_rows: Vec<Vec<String>> = self
            .fixed_shares
            .iter()
            .map(|c| {
                vec![
                    c.chain_id.clone(),
                    c.chain_name.clone(),
                    c.stores.to_string(),
                    format!("{:.2}", c.revenue),
                    fmt(r.sv_share, c.share),
                ]
            })
            .collect();
        out.push(OutputFile::csv(
            "market_shares.csv",
            &["chain_id", "chain_name", "stores", "revenue", "share"],
            &share_rows,
        ));
        out.push(OutputFile::json("market_shares.json", &self.fixed_shares));

        // Shares and screening statistics per market definition.
        let mut omega_rows = Vec::new();
        let mut omega_json = Vec::new();
        for (s, o, market) in &self.outcomes {
            let label = self.marginal.describe(*s);
            let chain_shares = shares(market).unwrap_or_default();
            for (chain, share) in &chain_shares {
                omega_rows.push(vec![
                    label.clone(),
                    chain.clone(),
                    format!("{:.2}", market.sales(chain).unwrap_or(0.0)),
                    fmt(r.sv_share, *share),
                ]);
            }
            omega_json.push(json!({
                "excluded": subset_labels(&self.marginal, *s),
                "outcome": o,
                "flagged": self.game.is_winning(*s),
                "shares": chain_shares,
            }));
        }
        out.push(OutputFile::csv(
            "omega_shares.csv",
            &["excluded", "chain_id", "revenue", "share"],
            &omega_rows,
        ));
        out.push(OutputFile::json("omega_shares.json", &omega_json));
        out
    }

    pub fn summary(&self) -> String {
        let r = &self.rounding;
        let flagged = self.diagram.nodes().iter().filter(|n| n.flagged).count();
        let mut s = format!(
            "state-level: {} market definitions, {} flagged; {} Shapley total {}",
            self.outcomes.len(),
            flagged,
            self.sv_metric.name(),
            fmt(r.sv, self.shapley.total()),
        );
        if self.game.degenerate_at_origin() {
            s.push_str("; rule already triggers in the broadest market (degenerate at origin)");
        }
        s
    }
}

// ---------------------------------------------------------------------------
// Firm level

#[derive(Debug)]
pub struct FirmReport {
    pub firms: MarginalSet,
    pub names: BTreeMap<String, String>,
    pub game: SimpleGame,
    pub sspi: ShapleyResult,
    pub evaluations: usize,
    pub rounding: RoundingConfig,
}

/// Power of each listed competitor chain in triggering the rule, with the
/// merging chains (and all unlisted chains) always in the market.
pub fn run_firm_level(config: &RunConfig, u: &StoreUniverse) -> Result<FirmReport> {
    let merger = config.merger()?;
    let firms = config
        .marginal_firms
        .clone()
        .filter(|f| !f.is_empty())
        .ok_or_else(|| CliError::Config("firm-level analysis needs a nonempty marginal_firms list".into()))?;
    check_exact_capacity(firms.len(), "firm-level game", "")?;
    require_parties(u, &merger)?;

    let mut base = chain_market(u.stores(), &BTreeSet::new());
    for f in firms.iter().map(String::as_str).chain(merger.parties()) {
        base.ensure_firm(f);
    }
    let listed: BTreeSet<&str> = firms.iter().map(String::as_str).collect();
    let protected: Vec<String> = base.firms().filter(|f| !listed.contains(f)).map(str::to_string).collect();
    let universe = MarketUniverse::new(base, protected)?;
    let ms = MarginalSet::new(firms)?;

    let calls = AtomicUsize::new(0);
    let game = simple_game_from_rule(
        |s| {
            calls.fetch_add(1, Ordering::Relaxed);
            merger_outcome(&universe.market_for(&ms, s)?, &merger)
        },
        |o| config.rule.decide(o),
        ms.len(),
    )?;
    let power = power_index(&game)?;
    Ok(FirmReport {
        evaluations: calls.into_inner(),
        firms: ms,
        names: chain_names(u),
        game,
        sspi: power,
        rounding: config.rounding,
    })
}

impl FirmReport {
    /// Rows sorted by descending power (ties keep config order), then Total.
    pub fn rows(&self) -> Vec<Vec<String>> {
        let mut order: Vec<usize> = (0..self.firms.len()).collect();
        order.sort_by(|&a, &b| self.sspi.values[b].total_cmp(&self.sspi.values[a]));
        let mut rows: Vec<Vec<String>> = order
            .into_iter()
            .map(|i| {
                let id = &self.firms.labels()[i];
                vec![
                    id.clone(),
                    self.names.get(id).cloned().unwrap_or_else(|| id.clone()),
                    fmt(self.rounding.sspi, self.sspi.values[i]),
                ]
            })
            .collect();
        rows.push(vec!["Total".into(), String::new(), fmt(self.rounding.sspi, self.sspi.total())]);
        rows
    }

    pub fn files(&self) -> Vec<OutputFile> {
        let rows = self.rows();
        vec![
            OutputFile::csv("sspi.csv", &["chain_id", "firm", "sspi"], &rows),
            OutputFile::json(
                "sspi.json",
                &json!({
                    "members": self.firms.labels(),
                    "sspi": self.sspi,
                    "sensitive": self.game.is_sensitive(),
                    "degenerate_at_origin": self.game.degenerate_at_origin(),
                    "coalitions_evaluated": self.evaluations,
                    "table": rows,
                }),
            ),
        ]
    }

    pub fn summary(&self) -> String {
        format!(
            "firm-level: {} chains, {} coalitions evaluated, sensitive: {}, SSPI total {}",
            self.firms.len(),
            self.evaluations,
            self.game.is_sensitive(),
            fmt(self.rounding.sspi, self.sspi.total())
        )
    }
}

// ---------------------------------------------------------------------------
// Local markets

#[derive(Debug)]
pub struct LocalReport {
    pub marginal: MarginalSet,
    pub results: Vec<LocalAnalysisResult>,
    pub counts: Vec<(ExclusionSet, usize)>,
    pub structure: Vec<StructureRow>,
    pub radius_miles: f64,
    pub rounding: RoundingConfig,
}

pub fn run_local(config: &RunConfig, u: &StoreUniverse) -> Result<LocalReport> {
    let merger = config.merger()?;
    let marginal = marginal_set_of(config.marginal_formats.iter().map(Format::to_string))?;
    check_exact_capacity(marginal.len(), "local analysis", "")?;
    let results = analyze_local(u, &merger, &marginal, &config.rule, config.radius_miles)?;
    let counts = enumerate_subsets(marginal.len())?
        .into_iter()
        .map(|s| (s, count_presumptive(&results, s)))
        .collect();
    let structure = sspi_structure_table(&results, config.rounding.sspi.decimals());
    Ok(LocalReport {
        marginal,
        results,
        counts,
        structure,
        radius_miles: config.radius_miles,
        rounding: config.rounding,
    })
}

impl LocalReport {
    pub fn sensitive_count(&self) -> usize {
        self.results.iter().filter(|r| r.sensitive).count()
    }

    pub fn files(&self) -> Vec<OutputFile> {
        let r = &self.rounding;
        let labels = self.marginal.labels();
        let mut out = Vec::new();

        let count_rows: Vec<Vec<String>> = self
            .counts
            .iter()
            .map(|(s, c)| vec![self.marginal.describe(*s), s.len().to_string(), c.to_string()])
            .collect();
        out.push(OutputFile::csv(
            "local_counts.csv",
            &["excluded", "excluded_count", "presumptive_markets"],
            &count_rows,
        ));
        out.push(OutputFile::json(
            "local_counts.json",
            &json!({
                "markets": self.results.len(),
                "sensitive_markets": self.sensitive_count(),
                "radius_miles": self.radius_miles,
                "counts": self.counts.iter().map(|(s, c)| json!({
                    "excluded": subset_labels(&self.marginal, *s),
                    "presumptive_markets": c,
                })).collect::<Vec<_>>(),
            }),
        ));

        let mut header: Vec<String> = ["center", "stores", "sensitive", "degenerate_at_origin", "presumptive_broadest", "presumptive_narrowest"]
            .map(String::from)
            .to_vec();
        header.extend(labels.iter().map(|l| format!("sspi_{l}")));
        let full = self.marginal.full();
        let empty = ExclusionSet::empty(self.marginal.len());
        let market_rows: Vec<Vec<String>> = self
            .results
            .iter()
            .map(|m| {
                let mut row = vec![
                    m.center.clone(),
                    m.members.to_string(),
                    m.sensitive.to_string(),
                    m.degenerate_at_origin.to_string(),
                    m.flagged_at(empty).to_string(),
                    m.flagged_at(full).to_string(),
                ];
                match &m.sspi {
                    Some(v) => row.extend(v.iter().map(|x| fmt(r.sspi, *x))),
                    None => row.extend(labels.iter().map(|_| String::new())),
                }
                row
            })
            .collect();
        let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
        out.push(OutputFile::csv("local_markets.csv", &header_refs, &market_rows));
        out.push(OutputFile::json(
            "local_markets.json",
            &json!({
                "members": labels,
                "markets": self.results,
            }),
        ));

        let mut structure_header: Vec<String> = labels.iter().map(|l| format!("sspi_{l}")).collect();
        structure_header.push("count".into());
        let mut structure_rows: Vec<Vec<String>> = self
            .structure
            .iter()
            .map(|row| {
                let mut cells: Vec<String> = row.sspi.iter().map(|x| fmt(r.sspi, *x)).collect();
                cells.push(row.count.to_string());
                cells
            })
            .collect();
        let mut total: Vec<String> = vec![String::new(); labels.len()];
        if let Some(first) = total.first_mut() {
            *first = "Total".into();
        }
        total.push(self.structure.iter().map(|row| row.count).sum::<usize>().to_string());
        structure_rows.push(total);
        let refs: Vec<&str> = structure_header.iter().map(String::as_str).collect();
        out.push(OutputFile::csv("sspi_structure.csv", &refs, &structure_rows));
        out.push(OutputFile::json(
            "sspi_structure.json",
            &json!({
                "members": labels,
                "rows": self.structure,
                "sensitive_markets": self.sensitive_count(),
            }),
        ));
        out
    }

    pub fn summary(&self) -> String {
        let broadest = self.counts.first().map_or(0, |c| c.1);
        let narrowest = self.counts.last().map_or(0, |c| c.1);
        format!(
            "local: {} markets, {} presumptive (broadest) / {} presumptive (narrowest), {} sensitive",
            self.results.len(),
            broadest,
            narrowest,
            self.sensitive_count()
        )
    }
}
