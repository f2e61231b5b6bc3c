//! The subset lattice `(2^N, ⊆)` of candidate market definitions.
//!
//! An [`ExclusionSet`] names which marginal members are dropped from the
//! broadest market: the empty set is the broadest definition, the full set
//! the narrowest. [`build_hasse`] evaluates an outcome function on every
//! exclusion set and annotates the covering edges with metric deltas.
//!
//! Canonical order everywhere is ascending cardinality, then ascending
//! bitmask. Node and edge vectors are always stored in that order, so the
//! emitters are byte-deterministic.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BoxError, Error, Result};

/// Largest marginal set whose full lattice may be materialized (2^24 subsets).
pub const MAX_EXACT_MEMBERS: usize = 24;

/// Largest marginal set representable at all (one bit per member).
pub const MAX_MEMBERS: usize = 64;

/// Ordered, uniquely labelled marginal members. Index `i` of a label is
/// the bit `1 << i` in every [`ExclusionSet`] drawn from this set.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct MarginalSet {
    members: Vec<String>,
}

impl MarginalSet {
    pub fn new<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let members: Vec<String> = labels.into_iter().map(Into::into).collect();
        if members.len() > MAX_MEMBERS {
            return Err(Error::Capacity {
                what: "marginal set",
                requested: members.len(),
                limit: MAX_MEMBERS,
                hint: "",
            });
        }
        let mut seen = HashSet::with_capacity(members.len());
        for label in &members {
            if label.is_empty() {
                return Err(Error::domain("marginal member labels must be non-empty"));
            }
            if !seen.insert(label.as_str()) {
                return Err(Error::domain(format!("duplicate marginal member label {label:?}")));
            }
        }
        Ok(Self { members })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.members
    }

    pub fn label(&self, index: usize) -> Option<&str> {
        self.members.get(index).map(String::as_str)
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.members.iter().position(|m| m == label)
    }

    /// The exclusion set containing every member.
    pub fn full(&self) -> ExclusionSet {
        ExclusionSet::full(self.len())
    }

    /// Resolves labels into an exclusion set over this marginal set.
    pub fn set_of<I, S>(&self, labels: I) -> Result<ExclusionSet>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set = ExclusionSet::empty(self.len());
        for label in labels {
            let label = label.as_ref();
            let i = self
                .index_of(label)
                .ok_or_else(|| Error::domain(format!("{label:?} is not a marginal member")))?;
            set = set.with(i);
        }
        Ok(set)
    }

    /// Labels of the members of `set`, in index order.
    pub fn labels_of(&self, set: ExclusionSet) -> Vec<&str> {
        set.indices().filter_map(|i| self.label(i)).collect()
    }

    /// Human-readable rendering such as `{Club, Natural}` or `∅`.
    pub fn describe(&self, set: ExclusionSet) -> String {
        if set.is_empty() {
            return "∅".to_string();
        }
        format!("{{{}}}", self.labels_of(set).join(", "))
    }
}

/// A subset of the marginal index set `{0, …, n-1}`.
///
/// Ordering is canonical: by `n`, then cardinality, then bitmask value.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct ExclusionSet {
    bits: u64,
    n: u8,
}

impl ExclusionSet {
    fn mask(n: usize) -> u64 {
        if n >= 64 {
            u64::MAX
        } else {
            (1u64 << n) - 1
        }
    }

    pub fn empty(n: usize) -> Self {
        assert!(n <= MAX_MEMBERS, "exclusion set universe too large: {n}");
        Self { bits: 0, n: n as u8 }
    }

    pub fn full(n: usize) -> Self {
        assert!(n <= MAX_MEMBERS, "exclusion set universe too large: {n}");
        Self {
            bits: Self::mask(n),
            n: n as u8,
        }
    }

    pub fn from_bits(n: usize, bits: u64) -> Result<Self> {
        if n > MAX_MEMBERS {
            return Err(Error::Capacity {
                what: "exclusion set",
                requested: n,
                limit: MAX_MEMBERS,
                hint: "",
            });
        }
        if bits & !Self::mask(n) != 0 {
            return Err(Error::domain(format!(
                "bitmask {bits:#x} has members outside {{0..{n}}}"
            )));
        }
        Ok(Self { bits, n: n as u8 })
    }

    pub fn from_indices<I: IntoIterator<Item = usize>>(n: usize, indices: I) -> Result<Self> {
        let mut set = Self::from_bits(n, 0)?;
        for i in indices {
            if i >= n {
                return Err(Error::domain(format!("index {i} out of range for n = {n}")));
            }
            set.bits |= 1 << i;
        }
        Ok(set)
    }

    pub fn bits(self) -> u64 {
        self.bits
    }

    /// Size of the parent marginal set.
    pub fn universe_size(self) -> usize {
        self.n as usize
    }

    pub fn len(self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.bits == 0
    }

    pub fn contains(self, i: usize) -> bool {
        i < 64 && self.bits & (1 << i) != 0
    }

    /// `self ∪ {i}`. Panics if `i` is outside the universe.
    pub fn with(self, i: usize) -> Self {
        assert!(i < self.n as usize, "index {i} out of range for n = {}", self.n);
        Self {
            bits: self.bits | (1 << i),
            ..self
        }
    }

    /// `self ∖ {i}`.
    pub fn without(self, i: usize) -> Self {
        if i >= 64 {
            return self;
        }
        Self {
            bits: self.bits & !(1 << i),
            ..self
        }
    }

    pub fn is_subset(self, other: Self) -> bool {
        self.n == other.n && self.bits & !other.bits == 0
    }

    pub fn is_proper_subset(self, other: Self) -> bool {
        self.is_subset(other) && self.bits != other.bits
    }

    /// Member indices in ascending order.
    pub fn indices(self) -> impl Iterator<Item = usize> {
        let mut rest = self.bits;
        std::iter::from_fn(move || {
            if rest == 0 {
                return None;
            }
            let i = rest.trailing_zeros() as usize;
            rest &= rest - 1;
            Some(i)
        })
    }
}

impl Ord for ExclusionSet {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.n, self.len(), self.bits).cmp(&(other.n, other.len(), other.bits))
    }
}

impl PartialOrd for ExclusionSet {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for ExclusionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (k, i) in self.indices().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            write!(f, "{i}")?;
        }
        f.write_str("}")
    }
}

impl fmt::Debug for ExclusionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ExclusionSet(n={}, {})", self.n, self)
    }
}

/// Fails with a capacity error when `n` exceeds the exact-enumeration cap.
pub fn check_exact_capacity(n: usize, what: &'static str, hint: &'static str) -> Result<()> {
    if n > MAX_EXACT_MEMBERS {
        return Err(Error::Capacity {
            what,
            requested: n,
            limit: MAX_EXACT_MEMBERS,
            hint,
        });
    }
    Ok(())
}

/// All `2^n` subsets of `{0, …, n-1}` in canonical order.
pub fn enumerate_subsets(n: usize) -> Result<Vec<ExclusionSet>> {
    check_exact_capacity(n, "subset enumeration", "")?;
    let mut out = Vec::with_capacity(1usize << n);
    out.push(ExclusionSet::empty(n));
    for k in 1..=n {
        // Gosper's hack walks the k-subsets in increasing numeric order.
        let limit = 1u64 << n;
        let mut bits = (1u64 << k) - 1;
        while bits < limit {
            out.push(ExclusionSet { bits, n: n as u8 });
            let c = bits & bits.wrapping_neg();
            let r = bits + c;
            bits = (((r ^ bits) >> 2) / c) | r;
        }
    }
    Ok(out)
}

/// True iff `b` covers `a` in `(2^N, ⊆)`: `a ⊂ b` and `|b| = |a| + 1`.
pub fn covers(a: ExclusionSet, b: ExclusionSet) -> Result<bool> {
    if a.n != b.n {
        return Err(Error::domain(format!(
            "exclusion sets drawn from different marginal sets (n = {} vs {})",
            a.n, b.n
        )));
    }
    Ok(a.is_proper_subset(b) && b.len() == a.len() + 1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct HasseNode {
    pub subset: ExclusionSet,
    pub outcomes: Vec<f64>,
    pub flagged: bool,
}

/// Edge from a broader market (`from`) to a narrower one (`to`).
#[derive(Clone, Debug, PartialEq)]
pub struct HasseEdge {
    pub from: ExclusionSet,
    pub to: ExclusionSet,
    /// `outcomes(to) - outcomes(from)`, componentwise.
    pub deltas: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedHasseDiagram {
    marginal_set: MarginalSet,
    metrics: Vec<String>,
    nodes: Vec<HasseNode>,
    edges: Vec<HasseEdge>,
}

/// Decision predicate applied to a node's outcome vector.
pub type DecisionFn<'a> = &'a (dyn Fn(&[f64]) -> bool + Sync);

fn deltas(from: &[f64], to: &[f64]) -> Vec<f64> {
    to.iter().zip(from).map(|(t, f)| t - f).collect()
}

/// Evaluates `f` once on every exclusion set and builds the full annotated
/// lattice. Evaluation runs in parallel; output order is canonical.
pub fn build_hasse<F, E>(
    marginal_set: &MarginalSet,
    metrics: &[&str],
    f: F,
    rule: Option<DecisionFn<'_>>,
) -> Result<AnnotatedHasseDiagram>
where
    F: Fn(ExclusionSet) -> std::result::Result<Vec<f64>, E> + Sync,
    E: Into<Box<dyn std::error::Error + Send + Sync>>,
{
    let n = marginal_set.len();
    check_exact_capacity(n, "Hasse diagram", "")?;
    let subsets = enumerate_subsets(n)?;

    let evaluated: Vec<std::result::Result<Vec<f64>, BoxError>> =
        subsets.par_iter().map(|&s| f(s).map_err(Into::into)).collect();

    let mut nodes = Vec::with_capacity(subsets.len());
    for (subset, outcome) in subsets.iter().copied().zip(evaluated) {
        let outcomes = outcome.map_err(|source| Error::Evaluation { subset, source })?;
        validate_outcomes(subset, &outcomes, metrics.len())?;
        let flagged = rule.map(|r| r(&outcomes)).unwrap_or(false);
        nodes.push(HasseNode {
            subset,
            outcomes,
            flagged,
        });
    }

    let mut position = vec![0usize; 1usize << n];
    for (k, node) in nodes.iter().enumerate() {
        position[node.subset.bits() as usize] = k;
    }
    let mut edges = Vec::with_capacity(n * (1usize << n) / 2);
    for node in &nodes {
        for i in 0..n {
            if node.subset.contains(i) {
                continue;
            }
            let to = node.subset.with(i);
            let child = &nodes[position[to.bits() as usize]];
            edges.push(HasseEdge {
                from: node.subset,
                to,
                deltas: deltas(&node.outcomes, &child.outcomes),
            });
        }
    }

    Ok(AnnotatedHasseDiagram {
        marginal_set: marginal_set.clone(),
        metrics: metrics.iter().map(|m| m.to_string()).collect(),
        nodes,
        edges,
    })
}

fn validate_outcomes(subset: ExclusionSet, outcomes: &[f64], expected: usize) -> Result<()> {
    if outcomes.len() != expected {
        return Err(Error::Evaluation {
            subset,
            source: format!("expected {expected} metric values, got {}", outcomes.len()).into(),
        });
    }
    if let Some(bad) = outcomes.iter().find(|x| !x.is_finite()) {
        return Err(Error::Evaluation {
            subset,
            source: format!("non-finite metric value {bad}").into(),
        });
    }
    Ok(())
}

/// Covering pairs of the partial order induced on `sets` (sorted canonically).
fn induced_covers(sets: &[ExclusionSet]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (a_idx, &a) in sets.iter().enumerate() {
        // Supersets arrive in ascending cardinality, so every non-minimal
        // superset has a minimal one strictly inside it already recorded.
        let mut minimal: Vec<usize> = Vec::new();
        for (b_idx, &b) in sets.iter().enumerate().skip(a_idx + 1) {
            if !a.is_proper_subset(b) {
                continue;
            }
            if minimal.iter().any(|&m| sets[m].is_proper_subset(b)) {
                continue;
            }
            minimal.push(b_idx);
        }
        pairs.extend(minimal.into_iter().map(|b_idx| (a_idx, b_idx)));
    }
    pairs
}

impl AnnotatedHasseDiagram {
    pub fn marginal_set(&self) -> &MarginalSet {
        &self.marginal_set
    }

    pub fn metrics(&self) -> &[String] {
        &self.metrics
    }

    pub fn nodes(&self) -> &[HasseNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[HasseEdge] {
        &self.edges
    }

    pub fn node(&self, subset: ExclusionSet) -> Option<&HasseNode> {
        self.nodes
            .binary_search_by(|n| n.subset.cmp(&subset))
            .ok()
            .map(|k| &self.nodes[k])
    }

    pub fn edge(&self, from: ExclusionSet, to: ExclusionSet) -> Option<&HasseEdge> {
        self.edges
            .binary_search_by(|e| (e.from, e.to).cmp(&(from, to)))
            .ok()
            .map(|k| &self.edges[k])
    }

    /// Index of a metric by name.
    pub fn metric_index(&self, name: &str) -> Option<usize> {
        self.metrics.iter().position(|m| m == name)
    }

    /// Replaces every node's flag with `flag(subset)`, for decisions that
    /// depend on more than the displayed metrics.
    pub fn with_flags<F: Fn(ExclusionSet) -> bool>(mut self, flag: F) -> Self {
        for node in &mut self.nodes {
            node.flagged = flag(node.subset);
        }
        self
    }

    /// Sub-diagram on `keep`, with covering edges recomputed on the
    /// induced order (so `∅` and `{1,2,3}` alone are joined directly).
    pub fn restrict<I>(&self, keep: I) -> Result<AnnotatedHasseDiagram>
    where
        I: IntoIterator<Item = ExclusionSet>,
    {
        let keep: BTreeSet<ExclusionSet> = keep.into_iter().collect();
        let mut nodes = Vec::with_capacity(keep.len());
        for subset in &keep {
            let node = self
                .node(*subset)
                .ok_or_else(|| Error::domain(format!("exclusion set {subset} is not a node of the diagram")))?;
            nodes.push(node.clone());
        }
        let sets: Vec<ExclusionSet> = nodes.iter().map(|n| n.subset).collect();
        let mut edges: Vec<HasseEdge> = induced_covers(&sets)
            .into_iter()
            .map(|(a, b)| HasseEdge {
                from: nodes[a].subset,
                to: nodes[b].subset,
                deltas: deltas(&nodes[a].outcomes, &nodes[b].outcomes),
            })
            .collect();
        edges.sort_by_key(|e| (e.from, e.to));
        Ok(AnnotatedHasseDiagram {
            marginal_set: self.marginal_set.clone(),
            metrics: self.metrics.clone(),
            nodes,
            edges,
        })
    }

    /// Graphviz rendering. Rank follows cardinality with the broadest
    /// market at the bottom.
    pub fn to_dot(&self, style: &RenderStyle) -> String {
        use std::fmt::Write as _;

        let id = |s: ExclusionSet| format!("s{}", s.bits());
        let mut out = String::new();
        out.push_str("digraph hasse {\n");
        out.push_str("  rankdir=BT;\n");
        if let Some(title) = &style.title {
            let _ = writeln!(out, "  label=\"{}\";", escape(title));
            out.push_str("  labelloc=t;\n");
        }
        out.push_str("  node [shape=box, style=rounded, fontname=\"Helvetica\"];\n");
        out.push_str("  edge [fontname=\"Helvetica\", fontsize=10];\n");

        let mut by_rank: BTreeMap<usize, Vec<ExclusionSet>> = BTreeMap::new();
        for node in &self.nodes {
            by_rank.entry(node.subset.len()).or_default().push(node.subset);
        }
        for members in by_rank.values() {
            let ids: Vec<String> = members.iter().map(|&s| format!("{};", id(s))).collect();
            let _ = writeln!(out, "  {{ rank=same; {} }}", ids.join(" "));
        }

        for node in &self.nodes {
            let mut label = escape(&self.marginal_set.describe(node.subset));
            for (name, value) in self.metrics.iter().zip(&node.outcomes) {
                let _ = write!(label, "\\n{}: {}", escape(name), style.rounding.format(*value));
            }
            let _ = write!(out, "  {} [label=\"{}\"", id(node.subset), label);
            if node.flagged {
                let _ = write!(
                    out,
                    ", style=\"rounded,filled\", fillcolor=\"{}\"",
                    escape(&style.alert_color)
                );
            }
            out.push_str("];\n");
        }

        for edge in &self.edges {
            let (Some(from), Some(to)) = (self.node(edge.from), self.node(edge.to)) else {
                continue;
            };
            // Edge labels are differences of the displayed node values so
            // the printed diagram is arithmetically consistent.
            let labels: Vec<String> = from
                .outcomes
                .iter()
                .zip(&to.outcomes)
                .map(|(a, b)| style.rounding.format_delta(*a, *b))
                .collect();
            let _ = writeln!(
                out,
                "  {} -> {} [label=\"{}\"];",
                id(edge.from),
                id(edge.to),
                labels.join("\\n")
            );
        }
        out.push_str("}\n");
        out
    }

    /// Lossless JSON document.
    pub fn to_json(&self) -> String {
        let doc = DiagramDoc {
            marginal_set: self.marginal_set.labels().to_vec(),
            metrics: self.metrics.clone(),
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeDoc {
                    subset: n.subset.indices().collect(),
                    outcomes: n.outcomes.clone(),
                    flagged: n.flagged,
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeDoc {
                    from: e.from.indices().collect(),
                    to: e.to.indices().collect(),
                    deltas: e.deltas.clone(),
                })
                .collect(),
        };
        let mut text = serde_json::to_string_pretty(&doc).expect("diagram documents always serialize");
        text.push('\n');
        text
    }

    /// Parses a document produced by [`to_json`](Self::to_json).
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: DiagramDoc = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        let marginal_set = MarginalSet::new(doc.marginal_set).map_err(|e| Error::Format(e.to_string()))?;
        let n = marginal_set.len();
        let width = doc.metrics.len();
        let to_set = |indices: &[usize]| {
            ExclusionSet::from_indices(n, indices.iter().copied()).map_err(|e| Error::Format(e.to_string()))
        };

        let mut nodes = Vec::with_capacity(doc.nodes.len());
        for node in &doc.nodes {
            if node.outcomes.len() != width {
                return Err(Error::Format("node outcome width does not match metrics".into()));
            }
            nodes.push(HasseNode {
                subset: to_set(&node.subset)?,
                outcomes: node.outcomes.clone(),
                flagged: node.flagged,
            });
        }
        nodes.sort_by_key(|n| n.subset);
        if nodes.windows(2).any(|w| w[0].subset == w[1].subset) {
            return Err(Error::Format("duplicate node".into()));
        }

        let mut edges = Vec::with_capacity(doc.edges.len());
        for edge in &doc.edges {
            let from = to_set(&edge.from)?;
            let to = to_set(&edge.to)?;
            if edge.deltas.len() != width {
                return Err(Error::Format("edge delta width does not match metrics".into()));
            }
            if !from.is_proper_subset(to) {
                return Err(Error::Format(format!("edge {from} -> {to} does not go to a superset")));
            }
            edges.push(HasseEdge {
                from,
                to,
                deltas: edge.deltas.clone(),
            });
        }
        edges.sort_by_key(|e| (e.from, e.to));

        let diagram = Self {
            marginal_set,
            metrics: doc.metrics,
            nodes,
            edges,
        };
        if diagram
            .edges
            .iter()
            .any(|e| diagram.node(e.from).is_none() || diagram.node(e.to).is_none())
        {
            return Err(Error::Format("edge references a missing node".into()));
        }
        Ok(diagram)
    }
}

#[derive(Serialize, Deserialize)]
struct DiagramDoc {
    marginal_set: Vec<String>,
    metrics: Vec<String>,
    nodes: Vec<NodeDoc>,
    edges: Vec<EdgeDoc>,
}

#[derive(Serialize, Deserialize)]
struct NodeDoc {
    subset: Vec<usize>,
    outcomes: Vec<f64>,
    flagged: bool,
}

#[derive(Serialize, Deserialize)]
struct EdgeDoc {
    from: Vec<usize>,
    to: Vec<usize>,
    deltas: Vec<f64>,
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// How metric values are shown in rendered output. Internal values are
/// never rounded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "decimals")]
pub enum DisplayRounding {
    /// Floor to an integer (HHI points print as 1439 for 1439.84).
    Floor,
    /// Round half up to the given number of decimals.
    Round(u32),
    /// Truncate toward zero at the given number of decimals.
    Truncate(u32),
}

impl DisplayRounding {
    pub fn decimals(self) -> u32 {
        match self {
            DisplayRounding::Floor => 0,
            DisplayRounding::Round(d) | DisplayRounding::Truncate(d) => d,
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        let scale = 10f64.powi(self.decimals() as i32);
        let y = match self {
            DisplayRounding::Floor => x.floor(),
            // Scaling can land a hair below an exact .5 or an exact integer
            // (0.29 * 1000 = 289.99999999999997); nudge before cutting.
            DisplayRounding::Round(_) => (x * scale + 0.5 + 1e-9).floor() / scale,
            DisplayRounding::Truncate(_) => (x * scale + x.signum() * 1e-9).trunc() / scale,
        };
        if y == 0.0 {
            0.0
        } else {
            y
        }
    }

    pub fn format(self, x: f64) -> String {
        format!("{:.*}", self.decimals() as usize, self.apply(x))
    }

    /// Signed difference of the displayed values of `from` and `to`.
    pub fn format_delta(self, from: f64, to: f64) -> String {
        let mut d = self.apply(to) - self.apply(from);
        if d == 0.0 {
            d = 0.0;
        }
        format!("{:+.*}", self.decimals() as usize, d)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderStyle {
    pub rounding: DisplayRounding,
    /// Fill colour of flagged nodes.
    pub alert_color: String,
    pub title: Option<String>,
}

impl Default for RenderStyle {
    fn default() -> Self {
        Self {
            rounding: DisplayRounding::Floor,
            alert_color: "#f4a3a3".to_string(),
            title: None,
        }
    }
}
