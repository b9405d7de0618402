//! Shared domain types: datasets, subspaces, facts, relations and decks.
//!
//! Everything here is plain data. Values are immutable once validated; the
//! other modules build new values instead of mutating shared ones.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("duplicate column name `{0}`")]
    DuplicateColumn(String),
    #[error("column name must be non-empty (column {0})")]
    EmptyColumnName(usize),
    #[error("dataset has no columns or no rows")]
    EmptyDataset,
    #[error("row {row} has {found} cells, expected {expected}")]
    RaggedRow {
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("cell `{value}` in column `{column}` is not a valid {kind}")]
    InvalidCell {
        column: String,
        value: String,
        kind: ColumnKind,
    },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("conflicting filters on column `{0}`")]
    ConflictingFilter(String),
    #[error("invalid fact `{id}`: {reason}")]
    InvalidFact { id: String, reason: String },
}

// ---------------------------------------------------------------------------
// Cells and columns
// ---------------------------------------------------------------------------

/// A single cell. Temporal cells are stored as `Number` (four-digit years) or
/// `Text` (ISO-like dates).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(untagged)]
pub enum Value {
    #[default]
    Null,
    Number(f64),
    Text(String),
}

impl Value {
    pub fn text(s: impl Into<String>) -> Self {
        Value::Text(s.into())
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Number(n) => Some(*n),
            Value::Text(t) => parse_finite(t),
            Value::Null => None,
        }
    }

    /// Canonical textual form used for display, set keys and token matching.
    pub fn render(&self) -> String {
        match self {
            Value::Null => "null".to_string(),
            Value::Number(n) => format_number(*n),
            Value::Text(t) => t.clone(),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Text(s.to_string())
    }
}

impl From<f64> for Value {
    fn from(n: f64) -> Self {
        Value::Number(n)
    }
}

impl From<i64> for Value {
    fn from(n: i64) -> Self {
        Value::Number(n as f64)
    }
}

/// Integers print without a fractional part; other values keep at most two
/// decimals with trailing zeros trimmed.
pub fn format_number(n: f64) -> String {
    if n.is_finite() && (n - n.round()).abs() < 1e-9 && n.abs() < 1e15 {
        let r = n.round() as i64;
        return r.to_string();
    }
    let s = format!("{n:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

fn parse_finite(s: &str) -> Option<f64> {
    let t = s.trim();
    if t.is_empty() {
        return None;
    }
    // Rust accepts "inf"/"NaN"; numeric cells must be finite reals.
    t.parse::<f64>().ok().filter(|n| n.is_finite())
}

fn parse_date(s: &str) -> Option<NaiveDate> {
    let t = s.trim();
    for fmt in ["%Y-%m-%d", "%Y/%m/%d"] {
        if let Ok(d) = NaiveDate::parse_from_str(t, fmt) {
            return Some(d);
        }
    }
    // Year-month, e.g. 2010-03.
    if t.len() == 7 && t.as_bytes()[4] == b'-' {
        return NaiveDate::parse_from_str(&format!("{t}-01"), "%Y-%m-%d").ok();
    }
    None
}

fn is_four_digit_year(n: f64) -> bool {
    n.fract() == 0.0 && (1000.0..=9999.0).contains(&n)
}

/// Sort key for temporal cells: years map to Jan 1st of that year, dates to
/// themselves, both encoded as `yyyymmdd`.
pub fn temporal_key(v: &Value) -> Option<i64> {
    match v {
        Value::Number(n) if n.fract() == 0.0 => Some((*n as i64) * 10_000 + 101),
        Value::Text(t) => parse_date(t)
            .map(|d| d.year() as i64 * 10_000 + d.month() as i64 * 100 + d.day() as i64),
        _ => None,
    }
}

/// Position of a temporal cell on a numeric axis: the year itself for year
/// cells, days since the common era for dates.
pub fn temporal_ordinal(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => Some(*n),
        Value::Text(t) => parse_date(t).map(|d| d.num_days_from_ce() as f64),
        Value::Null => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Categorical,
    Numeric,
    Temporal,
}

impl fmt::Display for ColumnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColumnKind::Categorical => "categorical",
            ColumnKind::Numeric => "numeric",
            ColumnKind::Temporal => "temporal",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

const TIME_LIKE_NAMES: &[&str] = &["year", "date", "time", "period"];

fn name_is_time_like(name: &str) -> bool {
    let lower = name.to_lowercase();
    lower == "yr" || TIME_LIKE_NAMES.iter().any(|t| lower.contains(t))
}

/// Infers a column kind: numeric before temporal before categorical. Columns
/// of four-digit integers whose name looks like time are temporal.
pub fn infer_kind(name: &str, cells: &[&Value]) -> ColumnKind {
    let present: Vec<&Value> = cells
        .iter()
        .copied()
        .filter(|v| !matches!(v, Value::Null) && !matches!(v, Value::Text(t) if t.trim().is_empty()))
        .collect();
    if present.is_empty() {
        return ColumnKind::Categorical;
    }
    let numbers: Option<Vec<f64>> = present.iter().map(|v| v.as_f64()).collect();
    if let Some(numbers) = numbers {
        if name_is_time_like(name) && numbers.iter().all(|n| is_four_digit_year(*n)) {
            return ColumnKind::Temporal;
        }
        return ColumnKind::Numeric;
    }
    let all_dates = present.iter().all(|v| match v {
        Value::Text(t) => parse_date(t).is_some(),
        _ => false,
    });
    if all_dates {
        ColumnKind::Temporal
    } else {
        ColumnKind::Categorical
    }
}

/// Coerces a cell to a column kind, or `None` if it does not fit.
pub fn coerce(value: &Value, kind: ColumnKind) -> Option<Value> {
    if let Value::Text(t) = value {
        if t.trim().is_empty() {
            return Some(Value::Null);
        }
    }
    match (kind, value) {
        (_, Value::Null) => Some(Value::Null),
        (ColumnKind::Categorical, v) => Some(Value::Text(v.render())),
        (ColumnKind::Numeric, v) => v.as_f64().map(Value::Number),
        (ColumnKind::Temporal, Value::Number(n)) => n.is_finite().then_some(Value::Number(*n)),
        (ColumnKind::Temporal, Value::Text(t)) => {
            if let Some(n) = parse_finite(t) {
                Some(Value::Number(n))
            } else {
                parse_date(t).map(|_| Value::Text(t.trim().to_string()))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

/// Untyped table as it arrives from a file or API call.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RawTable {
    pub name: String,
    pub columns: Vec<RawColumn>,
    pub rows: Vec<Vec<Value>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawColumn {
    pub name: String,
    #[serde(default)]
    pub kind: Option<ColumnKind>,
}

impl RawColumn {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<Value>>,
}

/// Checks every dataset invariant, infers missing column kinds and coerces
/// cells to their column kind.
pub fn validate_dataset(raw: RawTable) -> Result<Dataset, ModelError> {
    if raw.columns.is_empty() || raw.rows.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut seen = HashSet::new();
    for (i, c) in raw.columns.iter().enumerate() {
        if c.name.trim().is_empty() {
            return Err(ModelError::EmptyColumnName(i));
        }
        if !seen.insert(c.name.as_str()) {
            return Err(ModelError::DuplicateColumn(c.name.clone()));
        }
    }
    let width = raw.columns.len();
    for (i, row) in raw.rows.iter().enumerate() {
        if row.len() != width {
            return Err(ModelError::RaggedRow {
                row: i + 1,
                found: row.len(),
                expected: width,
            });
        }
    }

    let mut columns = Vec::with_capacity(width);
    for (ci, c) in raw.columns.iter().enumerate() {
        let kind = match c.kind {
            Some(k) => k,
            None => {
                let cells: Vec<&Value> = raw.rows.iter().map(|r| &r[ci]).collect();
                infer_kind(&c.name, &cells)
            }
        };
        columns.push(Column {
            name: c.name.clone(),
            kind,
        });
    }

    let mut rows = Vec::with_capacity(raw.rows.len());
    for row in raw.rows {
        let mut out = Vec::with_capacity(width);
        for (cell, col) in row.into_iter().zip(&columns) {
            match coerce(&cell, col.kind) {
                Some(v) => out.push(v),
                None => {
                    return Err(ModelError::InvalidCell {
                        column: col.name.clone(),
                        value: cell.render(),
                        kind: col.kind,
                    })
                }
            }
        }
        rows.push(out);
    }
    Ok(Dataset {
        name: raw.name,
        columns,
        rows,
    })
}

impl Dataset {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn kind_of(&self, name: &str) -> Option<ColumnKind> {
        self.column(name).map(|c| c.kind)
    }

    /// Back to the untyped form, with the inferred kinds pinned.
    pub fn to_raw(&self) -> RawTable {
        RawTable {
            name: self.name.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| RawColumn {
                    name: c.name.clone(),
                    kind: Some(c.kind),
                })
                .collect(),
            rows: self.rows.clone(),
        }
    }

    /// Coerces a filter value to the kind of `column` so that `"2010"` and
    /// `2010` match the same year cell.
    pub fn coerce_for(&self, column: &str, value: &Value) -> Result<Value, ModelError> {
        let kind = self
            .kind_of(column)
            .ok_or_else(|| ModelError::UnknownColumn(column.to_string()))?;
        coerce(value, kind).ok_or_else(|| ModelError::InvalidCell {
            column: column.to_string(),
            value: value.render(),
            kind,
        })
    }

    /// Indices of the rows matching every filter by equality. Null cells never
    /// match.
    pub fn evaluate_subspace(&self, subspace: &Subspace) -> Result<Vec<usize>, ModelError> {
        let mut tests = Vec::with_capacity(subspace.len());
        for (col, val) in subspace.iter() {
            let idx = self
                .column_index(col)
                .ok_or_else(|| ModelError::UnknownColumn(col.to_string()))?;
            tests.push((idx, self.coerce_for(col, val)?));
        }
        Ok(self
            .rows
            .iter()
            .enumerate()
            .filter(|(_, row)| {
                tests
                    .iter()
                    .all(|(i, v)| !row[*i].is_null() && !v.is_null() && row[*i] == *v)
            })
            .map(|(i, _)| i)
            .collect())
    }
}

// ---------------------------------------------------------------------------
// Subspace
// ---------------------------------------------------------------------------

/// A set of equality filters, at most one per column.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Subspace(BTreeMap<String, Value>);

impl Subspace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<I, C, V>(pairs: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = (C, V)>,
        C: Into<String>,
        V: Into<Value>,
    {
        let mut s = Subspace::new();
        for (c, v) in pairs {
            s.insert(c, v)?;
        }
        Ok(s)
    }

    /// Adds a filter; re-adding the same value is a no-op.
    pub fn insert(&mut self, column: impl Into<String>, value: impl Into<Value>) -> Result<(), ModelError> {
        let column = column.into();
        let value = value.into();
        match self.0.get(&column) {
            Some(existing) if *existing != value => Err(ModelError::ConflictingFilter(column)),
            _ => {
                self.0.insert(column, value);
                Ok(())
            }
        }
    }

    pub fn with(mut self, column: impl Into<String>, value: impl Into<Value>) -> Result<Self, ModelError> {
        self.insert(column, value)?;
        Ok(self)
    }

    pub fn union(&self, other: &Subspace) -> Result<Subspace, ModelError> {
        let mut out = self.clone();
        for (c, v) in other.iter() {
            out.insert(c, v.clone())?;
        }
        Ok(out)
    }

    pub fn get(&self, column: &str) -> Option<&Value> {
        self.0.get(column)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Value)> {
        self.0.iter().map(|(c, v)| (c.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains_column(&self, column: &str) -> bool {
        self.0.contains_key(column)
    }

    /// `column=value` keys, the set form used for overlap scoring.
    pub fn keys(&self) -> BTreeSet<String> {
        self.iter().map(|(c, v)| pair_key(c, v)).collect()
    }
}

pub fn pair_key(column: &str, value: &Value) -> String {
    format!("{column}={}", value.render())
}

// ---------------------------------------------------------------------------
// Facts
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FactId(pub String);

impl FactId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for FactId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for FactId {
    fn from(s: &str) -> Self {
        FactId(s.to_string())
    }
}

impl From<String> for FactId {
    fn from(s: String) -> Self {
        FactId(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    Sum,
    Mean,
    Min,
    Max,
    Count,
}

impl Aggregate {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s.to_ascii_lowercase().as_str() {
            "sum" => Aggregate::Sum,
            "mean" | "average" | "avg" => Aggregate::Mean,
            "min" => Aggregate::Min,
            "max" => Aggregate::Max,
            "count" => Aggregate::Count,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Aggregate::Sum => "sum",
            Aggregate::Mean => "mean",
            Aggregate::Min => "min",
            Aggregate::Max => "max",
            Aggregate::Count => "count",
        }
    }

    /// Adjective used in fact descriptions.
    pub fn adjective(self) -> &'static str {
        match self {
            Aggregate::Sum => "total",
            Aggregate::Mean => "average",
            Aggregate::Min => "minimum",
            Aggregate::Max => "maximum",
            Aggregate::Count => "count of",
        }
    }

    /// Folds finite values; `None` when there is nothing to aggregate.
    pub fn apply(self, values: &[f64]) -> Option<f64> {
        if values.is_empty() {
            return match self {
                Aggregate::Count => Some(0.0),
                _ => None,
            };
        }
        Some(match self {
            Aggregate::Sum => values.iter().sum(),
            Aggregate::Mean => values.iter().sum::<f64>() / values.len() as f64,
            Aggregate::Min => values.iter().copied().fold(f64::INFINITY, f64::min),
            Aggregate::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Aggregate::Count => values.len() as f64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Measure {
    pub column: String,
    pub aggregate: Aggregate,
}

impl Measure {
    pub fn new(column: impl Into<String>, aggregate: Aggregate) -> Self {
        Self {
            column: column.into(),
            aggregate,
        }
    }

    pub fn key(&self) -> String {
        format!("{}({})", self.aggregate.name(), self.column)
    }
}

/// Fact types in their canonical order; the order is used for tie-breaking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactType {
    Value,
    Difference,
    Proportion,
    Trend,
    Rank,
    Extreme,
    Outlier,
}

impl FactType {
    pub const ALL: [FactType; 7] = [
        FactType::Value,
        FactType::Difference,
        FactType::Proportion,
        FactType::Trend,
        FactType::Rank,
        FactType::Extreme,
        FactType::Outlier,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FactType::Value => "value",
            FactType::Difference => "difference",
            FactType::Proportion => "proportion",
            FactType::Trend => "trend",
            FactType::Rank => "rank",
            FactType::Extreme => "extreme",
            FactType::Outlier => "outlier",
        }
    }
}

impl fmt::Display for FactType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrendDirection {
    Increasing,
    Decreasing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Max,
    Min,
}

/// Type-specific fact payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FactParameters {
    Value {
        value: f64,
    },
    Difference {
        higher: Value,
        lower: Value,
        gap: f64,
    },
    Proportion {
        share: f64,
    },
    Trend {
        direction: TrendDirection,
        /// Least-squares slope per unit of the temporal axis.
        slope: f64,
        /// `year` or `day`.
        unit: String,
        correlation: f64,
        start: Value,
        end: Value,
    },
    Rank {
        order: Vec<Value>,
    },
    Extreme {
        polarity: Polarity,
        value: f64,
    },
    Outlier {
        value: f64,
        /// Distance beyond the nearer fence.
        distance: f64,
        iqr: f64,
    },
}

impl FactParameters {
    pub fn fact_type(&self) -> FactType {
        match self {
            FactParameters::Value { .. } => FactType::Value,
            FactParameters::Difference { .. } => FactType::Difference,
            FactParameters::Proportion { .. } => FactType::Proportion,
            FactParameters::Trend { .. } => FactType::Trend,
            FactParameters::Rank { .. } => FactType::Rank,
            FactParameters::Extreme { .. } => FactType::Extreme,
            FactParameters::Outlier { .. } => FactType::Outlier,
        }
    }
}

/// One highlighted data point, `column = value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocusPoint {
    pub column: String,
    pub value: Value,
}

impl FocusPoint {
    pub fn new(column: impl Into<String>, value: impl Into<Value>) -> Self {
        Self {
            column: column.into(),
            value: value.into(),
        }
    }

    pub fn key(&self) -> String {
        pair_key(&self.column, &self.value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FactScores {
    pub importance: f64,
    pub interest_alignment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataFact {
    pub id: FactId,
    pub subspace: Subspace,
    pub dimension: Option<String>,
    pub measures: Vec<Measure>,
    pub fact_type: FactType,
    pub parameters: FactParameters,
    pub focus: Vec<FocusPoint>,
    pub scores: FactScores,
    pub description: String,
    pub chart_id: String,
}

impl DataFact {
    pub fn focus_keys(&self) -> BTreeSet<String> {
        self.focus.iter().map(FocusPoint::key).collect()
    }

    pub fn measure_keys(&self) -> BTreeSet<String> {
        self.measures.iter().map(Measure::key).collect()
    }

    /// Lexicographic focus key used in tie-breaking.
    pub fn focus_sort_key(&self) -> String {
        self.focus.iter().map(FocusPoint::key).collect::<Vec<_>>().join("|")
    }

    /// Checks the fact against the dataset it was mined from.
    pub fn validate(&self, dataset: &Dataset) -> Result<(), ModelError> {
        let bad = |reason: String| ModelError::InvalidFact {
            id: self.id.0.clone(),
            reason,
        };
        if self.parameters.fact_type() != self.fact_type {
            return Err(bad(format!(
                "parameters describe a {} fact but type is {}",
                self.parameters.fact_type(),
                self.fact_type
            )));
        }
        for s in [self.scores.importance, self.scores.interest_alignment] {
            if !(0.0..=1.0).contains(&s) {
                return Err(bad(format!("score {s} outside [0,1]")));
            }
        }
        if self.measures.is_empty() {
            return Err(bad("no measure".into()));
        }
        let rows = dataset.evaluate_subspace(&self.subspace)?;
        for p in &self.focus {
            let ci = dataset
                .column_index(&p.column)
                .ok_or_else(|| ModelError::UnknownColumn(p.column.clone()))?;
            let v = dataset.coerce_for(&p.column, &p.value)?;
            if !rows.iter().any(|&r| dataset.rows[r][ci] == v) {
                return Err(bad(format!("focus {} not in subspace", p.key())));
            }
        }
        Ok(())
    }
}

/// Read access to facts by id.
pub trait FactLookup {
    fn fact(&self, id: &FactId) -> Option<&DataFact>;
}

impl FactLookup for indexmap::IndexMap<FactId, DataFact> {
    fn fact(&self, id: &FactId) -> Option<&DataFact> {
        self.get(id)
    }
}

impl FactLookup for BTreeMap<FactId, DataFact> {
    fn fact(&self, id: &FactId) -> Option<&DataFact> {
        self.get(id)
    }
}

impl FactLookup for [DataFact] {
    fn fact(&self, id: &FactId) -> Option<&DataFact> {
        self.iter().find(|f| f.id == *id)
    }
}

impl FactLookup for Vec<DataFact> {
    fn fact(&self, id: &FactId) -> Option<&DataFact> {
        self.as_slice().fact(id)
    }
}

// ---------------------------------------------------------------------------
// Data relations
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataRelationKind {
    SubspaceOverlap,
    MeasureOverlap,
    DimensionOverlap,
    FocusOverlap,
    FacttypeOverlap,
    TemporalSubspace,
    TemporalFocus,
    ImportanceOrder,
}

impl DataRelationKind {
    pub fn is_overlap(self) -> bool {
        matches!(
            self,
            DataRelationKind::SubspaceOverlap
                | DataRelationKind::MeasureOverlap
                | DataRelationKind::DimensionOverlap
                | DataRelationKind::FocusOverlap
                | DataRelationKind::FacttypeOverlap
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataRelation {
    pub fact_a: FactId,
    pub fact_b: FactId,
    pub kind: DataRelationKind,
    pub score: f64,
}

// ---------------------------------------------------------------------------
// Meta relations
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelationId(pub String);

impl RelationId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for RelationId {
    fn from(s: &str) -> Self {
        RelationId(s.to_string())
    }
}

/// The five 1..5 self-ratings attached to a machine-suggested relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubScores {
    pub strength: u8,
    pub fidelity: u8,
    pub helpfulness: u8,
    pub interestingness: u8,
    pub confidence: u8,
}

impl SubScores {
    pub fn new(strength: u8, fidelity: u8, helpfulness: u8, interestingness: u8, confidence: u8) -> Self {
        Self {
            strength,
            fidelity,
            helpfulness,
            interestingness,
            confidence,
        }
    }

    pub fn all(&self) -> [u8; 5] {
        [
            self.strength,
            self.fidelity,
            self.helpfulness,
            self.interestingness,
            self.confidence,
        ]
    }
}

/// Weights over strength, fidelity, helpfulness and interestingness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreWeights {
    pub strength: f64,
    pub fidelity: f64,
    pub helpfulness: f64,
    pub interestingness: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self::uniform(1.0)
    }
}

impl ScoreWeights {
    pub fn uniform(w: f64) -> Self {
        Self {
            strength: w,
            fidelity: w,
            helpfulness: w,
            interestingness: w,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.strength, self.fidelity, self.helpfulness, self.interestingness]
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            strength: self.strength * k,
            fidelity: self.fidelity * k,
            helpfulness: self.helpfulness * k,
            interestingness: self.interestingness * k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationStatus {
    Suggested,
    Accepted,
    Edited,
    Rejected,
    UserAdded,
}

impl RelationStatus {
    /// Statuses that count as user-endorsed content.
    pub fn is_endorsed(self) -> bool {
        matches!(self, RelationStatus::Accepted | RelationStatus::Edited | RelationStatus::UserAdded)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaRelation {
    pub id: RelationId,
    pub fact_a: FactId,
    pub fact_b: FactId,
    pub type_description: String,
    pub summary: String,
    pub sub_scores: Option<SubScores>,
    pub weights: ScoreWeights,
    pub score: f64,
    pub entities: Vec<String>,
    pub evidence_quote: String,
    /// Whether the evidence quote was found verbatim in a knowledge document.
    pub evidence_matched: bool,
    pub intent_link: String,
    pub status: RelationStatus,
}

impl MetaRelation {
    /// A relation authored by the user; its score is pinned to 1.
    pub fn user_added(
        id: RelationId,
        fact_a: FactId,
        fact_b: FactId,
        type_description: impl Into<String>,
        summary: impl Into<String>,
    ) -> Self {
        Self {
            id,
            fact_a,
            fact_b,
            type_description: type_description.into(),
            summary: summary.into(),
            sub_scores: None,
            weights: ScoreWeights::default(),
            score: 1.0,
            entities: Vec::new(),
            evidence_quote: String::new(),
            evidence_matched: false,
            intent_link: String::new(),
            status: RelationStatus::UserAdded,
        }
    }

    pub fn links(&self, x: &FactId, y: &FactId) -> bool {
        (self.fact_a == *x && self.fact_b == *y) || (self.fact_a == *y && self.fact_b == *x)
    }

    pub fn involves(&self, f: &FactId) -> bool {
        self.fact_a == *f || self.fact_b == *f
    }

    pub fn other(&self, f: &FactId) -> Option<&FactId> {
        if self.fact_a == *f {
            Some(&self.fact_b)
        } else if self.fact_b == *f {
            Some(&self.fact_a)
        } else {
            None
        }
    }
}

// ---------------------------------------------------------------------------
// Narrative context
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeDoc {
    pub doc_id: String,
    pub title: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NarrativeContext {
    pub knowledge_docs: Vec<KnowledgeDoc>,
    pub intent: String,
}

impl NarrativeContext {
    pub fn new(knowledge_docs: Vec<KnowledgeDoc>, intent: impl Into<String>) -> Self {
        Self {
            knowledge_docs,
            intent: intent.into(),
        }
    }

    /// Id of the first document containing `quote` after whitespace
    /// normalization (case preserved).
    pub fn locate_quote(&self, quote: &str) -> Option<&str> {
        let needle = collapse_whitespace(quote);
        if needle.is_empty() {
            return None;
        }
        self.knowledge_docs
            .iter()
            .find(|d| collapse_whitespace(&d.body).contains(&needle))
            .map(|d| d.doc_id.as_str())
    }
}

/// Trims and collapses runs of whitespace to a single space.
pub fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Lowercased alphanumeric tokens.
pub fn tokenize(s: &str) -> BTreeSet<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

// ---------------------------------------------------------------------------
// Deck
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactEntry {
    pub fact_id: FactId,
    pub incoming_meta_relation: Option<RelationId>,
    pub prev_fact_id: Option<FactId>,
    pub order_locked: bool,
}

impl FactEntry {
    pub fn new(fact_id: FactId) -> Self {
        Self {
            fact_id,
            incoming_meta_relation: None,
            prev_fact_id: None,
            order_locked: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slide {
    pub title: String,
    pub title_locked: bool,
    pub entries: Vec<FactEntry>,
}

impl Slide {
    pub fn fact_ids(&self) -> impl Iterator<Item = &FactId> {
        self.entries.iter().map(|e| &e.fact_id)
    }
}

pub const DEFAULT_MAX_FACTS_PER_SLIDE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoryDeck {
    pub slides: Vec<Slide>,
    pub max_facts_per_slide: usize,
    pub intent: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeckViolation {
    #[error("max_facts_per_slide must be positive")]
    ZeroCapacity,
    #[error("slide {0} is empty")]
    EmptySlide(usize),
    #[error("slide {slide} holds {count} facts, limit is {max}")]
    OverCapacity { slide: usize, count: usize, max: usize },
    #[error("fact `{0}` appears more than once")]
    DuplicateFact(FactId),
    #[error("entry `{fact}` references unknown relation `{relation}`")]
    UnknownRelation { fact: FactId, relation: RelationId },
    #[error("entry `{0}` does not resolve to a fact")]
    UnresolvedFact(FactId),
    #[error("entry `{fact}` references relation `{relation}` that does not involve it")]
    ForeignRelation { fact: FactId, relation: RelationId },
}

impl StoryDeck {
    pub fn new(max_facts_per_slide: usize) -> Self {
        Self {
            slides: Vec::new(),
            max_facts_per_slide,
            intent: String::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.slides.is_empty()
    }

    pub fn fact_count(&self) -> usize {
        self.slides.iter().map(|s| s.entries.len()).sum()
    }

    /// Fact ids in reading order.
    pub fn flattened(&self) -> Vec<FactId> {
        self.slides.iter().flat_map(|s| s.fact_ids().cloned()).collect()
    }

    pub fn contains(&self, fact: &FactId) -> bool {
        self.locate(fact).is_some()
    }

    /// `(slide, position)` of a fact.
    pub fn locate(&self, fact: &FactId) -> Option<(usize, usize)> {
        self.slides.iter().enumerate().find_map(|(si, s)| {
            s.entries
                .iter()
                .position(|e| e.fact_id == *fact)
                .map(|pi| (si, pi))
        })
    }

    pub fn entry(&self, fact: &FactId) -> Option<&FactEntry> {
        self.locate(fact).map(|(s, p)| &self.slides[s].entries[p])
    }

    /// Structural invariants: capacity, non-empty slides, uniqueness.
    pub fn check_structure(&self) -> Result<(), DeckViolation> {
        if self.max_facts_per_slide == 0 {
            return Err(DeckViolation::ZeroCapacity);
        }
        let mut seen = HashSet::new();
        for (i, s) in self.slides.iter().enumerate() {
            if s.entries.is_empty() {
                return Err(DeckViolation::EmptySlide(i));
            }
            if s.entries.len() > self.max_facts_per_slide {
                return Err(DeckViolation::OverCapacity {
                    slide: i,
                    count: s.entries.len(),
                    max: self.max_facts_per_slide,
                });
            }
            for e in &s.entries {
                if !seen.insert(&e.fact_id) {
                    return Err(DeckViolation::DuplicateFact(e.fact_id.clone()));
                }
            }
        }
        Ok(())
    }

    /// Structural invariants plus relation references.
    pub fn check_invariants<'a, F>(&self, lookup: F) -> Result<(), DeckViolation>
    where
        F: Fn(&RelationId) -> Option<&'a MetaRelation>,
    {
        self.check_structure()?;
        for s in &self.slides {
            for e in &s.entries {
                if let Some(rid) = &e.incoming_meta_relation {
                    let rel = lookup(rid).ok_or_else(|| DeckViolation::UnknownRelation {
                        fact: e.fact_id.clone(),
                        relation: rid.clone(),
                    })?;
                    if !rel.involves(&e.fact_id) {
                        return Err(DeckViolation::ForeignRelation {
                            fact: e.fact_id.clone(),
                            relation: rid.clone(),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(cols: &[&str], rows: Vec<Vec<Value>>) -> RawTable {
        RawTable {
            name: "t".into(),
            columns: cols.iter().map(|c| RawColumn::new(*c)).collect(),
            rows,
        }
    }

    fn cars() -> Dataset {
        let rows = vec![
            vec!["CR-V".into(), "SUV".into(), Value::from(2010i64), Value::from(10.0)],
            vec!["CR-V".into(), "SUV".into(), Value::from(2010i64), Value::from(12.0)],
            vec!["CR-V".into(), "SUV".into(), Value::from(2010i64), Value::from(7.0)],
            vec!["CR-V".into(), "SUV".into(), Value::from(2011i64), Value::from(9.0)],
            vec!["Camry".into(), "Sedan".into(), Value::from(2010i64), Value::from(40.0)],
        ];
        validate_dataset(raw(&["model", "category", "year", "sales"], rows)).unwrap()
    }

    #[test]
    fn infers_temporal_year_and_numeric_measure() {
        let d = validate_dataset(raw(&["year", "sales"], vec![vec!["2007".into(), "10".into()]])).unwrap();
        assert_eq!(d.columns[0].kind, ColumnKind::Temporal);
        assert_eq!(d.columns[1].kind, ColumnKind::Numeric);
        assert_eq!(d.rows[0], vec![Value::Number(2007.0), Value::Number(10.0)]);
    }

    #[test]
    fn four_digit_ints_without_time_name_stay_numeric() {
        let d = validate_dataset(raw(&["units"], vec![vec!["2007".into()]])).unwrap();
        assert_eq!(d.columns[0].kind, ColumnKind::Numeric);
    }

    #[test]
    fn date_strings_are_temporal() {
        let d = validate_dataset(raw(&["when", "v"], vec![vec!["2010-03-01".into(), "1".into()]])).unwrap();
        assert_eq!(d.columns[0].kind, ColumnKind::Temporal);
    }

    #[test]
    fn non_finite_numbers_are_categorical() {
        let d = validate_dataset(raw(&["x"], vec![vec!["inf".into()], vec!["1".into()]])).unwrap();
        assert_eq!(d.columns[0].kind, ColumnKind::Categorical);
    }

    #[test]
    fn duplicate_column_rejected() {
        let err = validate_dataset(raw(&["sales", "sales"], vec![vec!["1".into(), "2".into()]])).unwrap_err();
        assert_eq!(err, ModelError::DuplicateColumn("sales".into()));
    }

    #[test]
    fn ragged_row_rejected() {
        let err = validate_dataset(raw(&["a", "b"], vec![vec!["1".into()]])).unwrap_err();
        assert!(matches!(err, ModelError::RaggedRow { row: 1, found: 1, expected: 2 }));
    }

    #[test]
    fn empty_dataset_rejected() {
        assert_eq!(validate_dataset(raw(&["a"], vec![])).unwrap_err(), ModelError::EmptyDataset);
        assert_eq!(validate_dataset(raw(&[], vec![vec![]])).unwrap_err(), ModelError::EmptyDataset);
    }

    #[test]
    fn validation_is_idempotent() {
        let d = cars();
        assert_eq!(validate_dataset(d.to_raw()).unwrap(), d);
        let mut unpinned = d.to_raw();
        unpinned.columns.iter_mut().for_each(|c| c.kind = None);
        assert_eq!(validate_dataset(unpinned).unwrap(), d);
    }

    #[test]
    fn empty_subspace_selects_everything() {
        let d = cars();
        assert_eq!(d.evaluate_subspace(&Subspace::new()).unwrap(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn subspace_matches_by_equality() {
        let d = cars();
        let s = Subspace::from_pairs([("model", Value::from("CR-V")), ("year", Value::from(2010i64))]).unwrap();
        // Brute-force scan.
        let expected: Vec<usize> = (0..d.rows.len())
            .filter(|&i| d.rows[i][0] == Value::from("CR-V") && d.rows[i][2] == Value::Number(2010.0))
            .collect();
        assert_eq!(expected, vec![0, 1, 2]);
        assert_eq!(d.evaluate_subspace(&s).unwrap(), expected);
        // Text filter values coerce to the year column kind.
        let s = Subspace::from_pairs([("year", "2011")]).unwrap();
        assert_eq!(d.evaluate_subspace(&s).unwrap(), vec![3]);
    }

    #[test]
    fn unknown_filter_column() {
        let s = Subspace::from_pairs([("colour", "red")]).unwrap();
        assert_eq!(
            cars().evaluate_subspace(&s).unwrap_err(),
            ModelError::UnknownColumn("colour".into())
        );
    }

    #[test]
    fn null_cells_never_match() {
        let d = validate_dataset(raw(&["k", "v"], vec![vec!["".into(), "1".into()], vec!["a".into(), "2".into()]])).unwrap();
        assert_eq!(d.rows[0][0], Value::Null);
        let s = Subspace::from_pairs([("k", Value::Null)]).unwrap();
        assert!(d.evaluate_subspace(&s).unwrap().is_empty());
    }

    #[test]
    fn conflicting_filters_rejected() {
        let mut s = Subspace::from_pairs([("model", "CR-V")]).unwrap();
        assert!(s.insert("model", "CR-V").is_ok());
        assert_eq!(s.insert("model", "Camry").unwrap_err(), ModelError::ConflictingFilter("model".into()));
    }

    #[test]
    fn number_formatting() {
        assert_eq!(format_number(2010.0), "2010");
        assert_eq!(format_number(0.126), "0.13");
        assert_eq!(format_number(1.5), "1.5");
        assert_eq!(format_number(-3.0), "-3");
    }

    #[test]
    fn temporal_keys_order_years_and_dates() {
        assert!(temporal_key(&Value::from(2009i64)) < temporal_key(&Value::from("2009-06-01")));
        assert!(temporal_key(&Value::from("2009-06-01")) < temporal_key(&Value::from(2010i64)));
    }

    #[test]
    fn locate_quote_normalizes_whitespace() {
        let nc = NarrativeContext::new(
            vec![KnowledgeDoc {
                doc_id: "k1".into(),
                title: "t".into(),
                body: "Hybrid cars\n  compete with plug-in cars.".into(),
            }],
            "",
        );
        assert_eq!(nc.locate_quote("hybrid cars compete"), None);
        assert_eq!(nc.locate_quote("Hybrid cars compete"), Some("k1"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn dataset_strategy() -> impl Strategy<Value = Dataset> {
            proptest::collection::vec((0u8..3, 0u8..3, 0u8..4), 1..20).prop_map(|rows| {
                let rows = rows
                    .into_iter()
                    .map(|(a, b, c)| {
                        vec![
                            Value::text(format!("a{a}")),
                            Value::text(format!("b{b}")),
                            Value::Number(c as f64),
                        ]
                    })
                    .collect();
                validate_dataset(RawTable {
                    name: "p".into(),
                    columns: vec![RawColumn::new("a"), RawColumn::new("b"), RawColumn::new("c")],
                    rows,
                })
                .unwrap()
            })
        }

        fn filter_strategy() -> impl Strategy<Value = Vec<(String, Value)>> {
            proptest::collection::vec(
                prop_oneof![
                    (0u8..3).prop_map(|a| ("a".to_string(), Value::text(format!("a{a}")))),
                    (0u8..3).prop_map(|b| ("b".to_string(), Value::text(format!("b{b}")))),
                    (0u8..4).prop_map(|c| ("c".to_string(), Value::Number(c as f64))),
                ],
                0..3,
            )
        }

        fn build(pairs: Vec<(String, Value)>) -> Subspace {
            let mut s = Subspace::new();
            for (c, v) in pairs {
                // Keep the first filter per column.
                if !s.contains_column(&c) {
                    s.insert(c, v).unwrap();
                }
            }
            s
        }

        proptest! {
            #[test]
            fn union_evaluates_to_intersection(d in dataset_strategy(), f1 in filter_strategy(), f2 in filter_strategy()) {
                let s1 = build(f1);
                let s2 = build(f2);
                if let Ok(u) = s1.union(&s2) {
                    let r1: BTreeSet<usize> = d.evaluate_subspace(&s1).unwrap().into_iter().collect();
                    let r2: BTreeSet<usize> = d.evaluate_subspace(&s2).unwrap().into_iter().collect();
                    let ru: BTreeSet<usize> = d.evaluate_subspace(&u).unwrap().into_iter().collect();
                    prop_assert_eq!(ru, r1.intersection(&r2).copied().collect::<BTreeSet<_>>());
                }
            }

            #[test]
            fn validate_idempotent(d in dataset_strategy()) {
                prop_assert_eq!(validate_dataset(d.to_raw()).unwrap(), d);
            }
        }
    }
}
