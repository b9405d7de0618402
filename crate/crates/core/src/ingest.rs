//! Tabular data loading, chart-spec parsing and chart resolution.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value as Json};
use thiserror::Error;

use crate::model::{
    temporal_key, validate_dataset, Aggregate, ColumnKind, Dataset, Measure, ModelError, RawColumn,
    RawTable, Subspace, Value,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("input is not valid UTF-8: {0}")]
    Encoding(String),
    #[error("parse error on line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("unsupported data format `{0}`")]
    UnsupportedFormat(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("chart spec is not a structured object: {0}")]
    InvalidSpec(String),
    #[error("chart spec is missing the `{0}` encoding")]
    MissingEncoding(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("unsupported mark `{0}`")]
    UnsupportedMark(String),
    #[error("unsupported aggregate `{0}`")]
    UnsupportedAggregate(String),
    #[error("invalid encoding: {0}")]
    InvalidEncoding(String),
    #[error("chart filters match no rows")]
    EmptySelection,
}

// ---------------------------------------------------------------------------
// Tabular files
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Csv,
    Tsv,
}

impl DataFormat {
    pub fn from_hint(hint: Option<&str>) -> Result<Self, IngestError> {
        match hint.map(|h| h.trim_start_matches('.').to_ascii_lowercase()) {
            None => Ok(DataFormat::Csv),
            Some(h) if h == "csv" || h.is_empty() => Ok(DataFormat::Csv),
            Some(h) if h == "tsv" || h == "tab" => Ok(DataFormat::Tsv),
            Some(h) => Err(IngestError::UnsupportedFormat(h)),
        }
    }

    fn delimiter(self) -> u8 {
        match self {
            DataFormat::Csv => b',',
            DataFormat::Tsv => b'\t',
        }
    }
}

/// Reports the line of the first quoted field that is never closed. The csv
/// reader silently runs such a field to end of input.
fn find_unterminated_quote(text: &str, delimiter: char) -> Option<usize> {
    let mut line = 1;
    let mut in_quotes = false;
    let mut opened_at = 0;
    let mut field_start = true;
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        if in_quotes {
            match c {
                '"' if chars.peek() == Some(&'"') => {
                    chars.next();
                }
                '"' => in_quotes = false,
                '\n' => line += 1,
                _ => {}
            }
            continue;
        }
        match c {
            '"' if field_start => {
                in_quotes = true;
                opened_at = line;
                field_start = false;
            }
            '\n' => {
                line += 1;
                field_start = true;
            }
            c if c == delimiter => field_start = true,
            '\r' => {}
            _ => field_start = false,
        }
    }
    in_quotes.then_some(opened_at)
}

/// Parses delimited text with a header row and validates the result.
pub fn load_dataset(bytes: &[u8], format_hint: Option<&str>, name: &str) -> Result<Dataset, IngestError> {
    let format = DataFormat::from_hint(format_hint)?;
    let text = std::str::from_utf8(bytes).map_err(|e| IngestError::Encoding(e.to_string()))?;
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    if let Some(line) = find_unterminated_quote(text, format.delimiter() as char) {
        return Err(IngestError::Parse {
            line,
            reason: "unterminated quoted field".into(),
        });
    }

    let mut reader = csv::ReaderBuilder::new()
        .delimiter(format.delimiter())
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| csv_error(e, 1))?
        .iter()
        .map(|h| RawColumn::new(h.trim()))
        .collect::<Vec<_>>();
    if headers.is_empty() || (headers.len() == 1 && headers[0].name.is_empty()) {
        return Err(IngestError::Parse {
            line: 1,
            reason: "missing header row".into(),
        });
    }

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(e, 0))?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() == 1 && record.get(0) == Some("") {
            continue; // blank line
        }
        if record.len() != headers.len() {
            return Err(IngestError::Parse {
                line,
                reason: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        rows.push(record.iter().map(Value::text).collect());
    }

    Ok(validate_dataset(RawTable {
        name: name.to_string(),
        columns: headers,
        rows,
    })?)
}

fn csv_error(e: csv::Error, fallback_line: usize) -> IngestError {
    let line = e
        .position()
        .map(|p| p.line() as usize)
        .unwrap_or(fallback_line);
    IngestError::Parse {
        line,
        reason: e.to_string(),
    }
}

// ---------------------------------------------------------------------------
// Chart specs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mark {
    Bar,
    Line,
    Point,
}

impl Mark {
    pub fn name(self) -> &'static str {
        match self {
            Mark::Bar => "bar",
            Mark::Line => "line",
            Mark::Point => "point",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoding {
    pub field: String,
    pub aggregate: Option<Aggregate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureAxis {
    X,
    Y,
}

/// The supported subset of a declarative chart: one mark, x/y/color
/// encodings and equality filters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartSpec {
    pub chart_id: String,
    pub mark: Mark,
    pub x: Encoding,
    pub y: Encoding,
    pub color: Option<String>,
    pub filters: Subspace,
    /// Which axis carries the measure; its aggregate is always set.
    pub measure_axis: MeasureAxis,
}

impl ChartSpec {
    pub fn measure(&self) -> Measure {
        let enc = self.measure_encoding();
        Measure::new(enc.field.clone(), enc.aggregate.unwrap_or(Aggregate::Sum))
    }

    pub fn measure_encoding(&self) -> &Encoding {
        match self.measure_axis {
            MeasureAxis::X => &self.x,
            MeasureAxis::Y => &self.y,
        }
    }

    pub fn dimension(&self) -> &str {
        match self.measure_axis {
            MeasureAxis::X => &self.y.field,
            MeasureAxis::Y => &self.x.field,
        }
    }

    /// Serializes back to the structured-object form accepted by
    /// [`parse_chart_spec`].
    pub fn to_json(&self) -> Json {
        let enc = |e: &Encoding| {
            let mut m = Map::new();
            m.insert("field".into(), json!(e.field));
            if let Some(a) = e.aggregate {
                m.insert("aggregate".into(), json!(a.name()));
            }
            Json::Object(m)
        };
        let mut encoding = Map::new();
        encoding.insert("x".into(), enc(&self.x));
        encoding.insert("y".into(), enc(&self.y));
        if let Some(c) = &self.color {
            encoding.insert("color".into(), json!({ "field": c }));
        }
        let transform: Vec<Json> = self
            .filters
            .iter()
            .map(|(c, v)| json!({ "filter": { "field": c, "equal": v } }))
            .collect();
        let mut doc = Map::new();
        doc.insert("chart_id".into(), json!(self.chart_id));
        doc.insert("mark".into(), json!(self.mark.name()));
        doc.insert("encoding".into(), Json::Object(encoding));
        if !transform.is_empty() {
            doc.insert("transform".into(), Json::Array(transform));
        }
        Json::Object(doc)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedChart {
    pub spec: ChartSpec,
    pub warnings: Vec<String>,
}

const KNOWN_KEYS: &[&str] = &["chart_id", "mark", "encoding", "transform"];
const IGNORED_KEYS: &[&str] = &["$schema", "data", "title", "description", "width", "height", "name"];

/// Parses a chart spec document and checks it against the dataset's columns.
/// A missing `chart_id` is left empty for the caller to assign.
pub fn parse_chart_spec(text: &str, dataset: &Dataset) -> Result<ParsedChart, IngestError> {
    let doc: Json = serde_json::from_str(text).map_err(|e| IngestError::InvalidSpec(e.to_string()))?;
    let obj = doc
        .as_object()
        .ok_or_else(|| IngestError::InvalidSpec("top level must be an object".into()))?;

    let mut warnings = Vec::new();
    for key in obj.keys() {
        if !KNOWN_KEYS.contains(&key.as_str()) && !IGNORED_KEYS.contains(&key.as_str()) {
            warnings.push(format!("ignored unknown key `{key}`"));
        }
    }

    let chart_id = obj
        .get("chart_id")
        .or_else(|| obj.get("name"))
        .and_then(Json::as_str)
        .unwrap_or_default()
        .to_string();

    let mark = match obj.get("mark") {
        None => Mark::Bar,
        Some(m) => {
            let name = match m {
                Json::String(s) => s.as_str(),
                Json::Object(o) => o.get("type").and_then(Json::as_str).unwrap_or(""),
                _ => "",
            };
            match name {
                "bar" => Mark::Bar,
                "line" => Mark::Line,
                "point" | "circle" => Mark::Point,
                other => return Err(IngestError::UnsupportedMark(other.to_string())),
            }
        }
    };

    let encoding = obj
        .get("encoding")
        .and_then(Json::as_object)
        .ok_or_else(|| IngestError::MissingEncoding("encoding".into()))?;
    let x = parse_encoding(encoding, "x", dataset)?;
    let y = parse_encoding(encoding, "y", dataset)?;
    let color = match encoding.get("color") {
        None => None,
        Some(c) => {
            let field = c
                .get("field")
                .and_then(Json::as_str)
                .ok_or_else(|| IngestError::InvalidEncoding("color needs a field".into()))?;
            require_column(dataset, field)?;
            Some(field.to_string())
        }
    };
    for key in encoding.keys() {
        if !["x", "y", "color"].contains(&key.as_str()) {
            warnings.push(format!("ignored encoding channel `{key}`"));
        }
    }

    let mut filters = Subspace::new();
    if let Some(t) = obj.get("transform") {
        let list = t
            .as_array()
            .ok_or_else(|| IngestError::InvalidSpec("transform must be a list".into()))?;
        for item in list {
            let (field, value) = parse_filter(item)?;
            require_column(dataset, &field)?;
            let value = dataset.coerce_for(&field, &value)?;
            filters.insert(field, value)?;
        }
    }

    let spec = assemble(chart_id, mark, x, y, color, filters, dataset)?;
    Ok(ParsedChart { spec, warnings })
}

fn require_column(dataset: &Dataset, field: &str) -> Result<(), IngestError> {
    if dataset.column(field).is_none() {
        return Err(IngestError::UnknownColumn(field.to_string()));
    }
    Ok(())
}

fn parse_encoding(enc: &Map<String, Json>, channel: &str, dataset: &Dataset) -> Result<Encoding, IngestError> {
    let e = enc
        .get(channel)
        .and_then(Json::as_object)
        .ok_or_else(|| IngestError::MissingEncoding(channel.to_string()))?;
    let field = e
        .get("field")
        .and_then(Json::as_str)
        .ok_or_else(|| IngestError::MissingEncoding(format!("{channel}.field")))?;
    require_column(dataset, field)?;
    let aggregate = match e.get("aggregate").and_then(Json::as_str) {
        None => None,
        Some(a) => Some(Aggregate::parse(a).ok_or_else(|| IngestError::UnsupportedAggregate(a.to_string()))?),
    };
    Ok(Encoding {
        field: field.to_string(),
        aggregate,
    })
}

/// Accepts `{"filter": {"field": f, "equal": v}}` and the expression form
/// `{"filter": "datum.f == 'v'"}`.
fn parse_filter(item: &Json) -> Result<(String, Value), IngestError> {
    let bad = || IngestError::InvalidSpec(format!("unsupported filter transform {item}"));
    let filter = item.get("filter").ok_or_else(bad)?;
    match filter {
        Json::Object(o) => {
            let field = o.get("field").and_then(Json::as_str).ok_or_else(bad)?;
            let value = match o.get("equal").ok_or_else(bad)? {
                Json::String(s) => Value::text(s.clone()),
                Json::Number(n) => Value::Number(n.as_f64().ok_or_else(bad)?),
                Json::Bool(b) => Value::text(b.to_string()),
                _ => return Err(bad()),
            };
            Ok((field.to_string(), value))
        }
        Json::String(expr) => {
            let (lhs, rhs) = expr.split_once("==").ok_or_else(bad)?;
            let field = lhs.trim().strip_prefix("datum.").ok_or_else(bad)?.trim();
            let rhs = rhs.trim().trim_start_matches('=').trim();
            let value = if let Some(inner) = rhs
                .strip_prefix('\'')
                .and_then(|r| r.strip_suffix('\''))
                .or_else(|| rhs.strip_prefix('"').and_then(|r| r.strip_suffix('"')))
            {
                Value::text(inner)
            } else {
                Value::Number(rhs.parse::<f64>().map_err(|_| bad())?)
            };
            Ok((field.to_string(), value))
        }
        _ => Err(bad()),
    }
}

fn assemble(
    chart_id: String,
    mark: Mark,
    mut x: Encoding,
    mut y: Encoding,
    color: Option<String>,
    filters: Subspace,
    dataset: &Dataset,
) -> Result<ChartSpec, IngestError> {
    let numeric = |f: &str| dataset.kind_of(f) == Some(ColumnKind::Numeric);
    let axis = match (x.aggregate.is_some(), y.aggregate.is_some()) {
        (true, false) => MeasureAxis::X,
        (false, true) => MeasureAxis::Y,
        (true, true) => {
            return Err(IngestError::InvalidEncoding(
                "only one of x/y may carry an aggregate".into(),
            ))
        }
        (false, false) => match (numeric(&x.field), numeric(&y.field)) {
            (false, true) => MeasureAxis::Y,
            (true, false) => MeasureAxis::X,
            _ => {
                return Err(IngestError::InvalidEncoding(
                    "exactly one of x/y must be a numeric measure".into(),
                ))
            }
        },
    };
    {
        let enc = match axis {
            MeasureAxis::X => &mut x,
            MeasureAxis::Y => &mut y,
        };
        let agg = *enc.aggregate.get_or_insert(Aggregate::Sum);
        if agg != Aggregate::Count && !numeric(&enc.field) {
            return Err(IngestError::InvalidEncoding(format!(
                "measure `{}` is not numeric",
                enc.field
            )));
        }
    }
    let dimension = match axis {
        MeasureAxis::X => &y.field,
        MeasureAxis::Y => &x.field,
    };
    if color.as_deref() == Some(dimension.as_str()) {
        return Err(IngestError::InvalidEncoding("color must differ from the dimension".into()));
    }
    Ok(ChartSpec {
        chart_id,
        mark,
        x,
        y,
        color,
        filters,
        measure_axis: axis,
    })
}

// ---------------------------------------------------------------------------
// Chart resolution
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub key: Value,
    pub value: f64,
    /// Rows that fell into this group (including null measures).
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSeries {
    pub group: Value,
    pub points: Vec<SeriesPoint>,
}

/// A chart resolved against its dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartContext {
    pub chart_id: String,
    pub spec: ChartSpec,
    pub subspace: Subspace,
    pub dimension: String,
    pub dimension_kind: ColumnKind,
    /// Secondary breakdown from the color channel.
    pub breakdown: Option<String>,
    pub measure: Measure,
    /// Aggregates over all selected rows, grouped by dimension.
    pub totals: Vec<SeriesPoint>,
    /// One series per breakdown value, grouped by dimension.
    pub groups: Vec<GroupSeries>,
    pub row_count: usize,
}

impl ChartContext {
    /// The series whose subspace equals `subspace`: the chart totals, or one
    /// breakdown series.
    pub fn series_for(&self, subspace: &Subspace) -> Option<&[SeriesPoint]> {
        if subspace.len() == self.subspace.len() {
            return Some(&self.totals);
        }
        let b = self.breakdown.as_ref()?;
        let v = subspace.get(b)?;
        self.groups
            .iter()
            .find(|g| g.group == *v)
            .map(|g| g.points.as_slice())
    }
}

fn group_rows(
    dataset: &Dataset,
    rows: &[usize],
    dim_idx: usize,
    temporal: bool,
    measure_idx: usize,
    agg: Aggregate,
) -> Vec<SeriesPoint> {
    let mut order: Vec<Value> = Vec::new();
    let mut buckets: Vec<(Vec<f64>, usize)> = Vec::new();
    for &r in rows {
        let key = &dataset.rows[r][dim_idx];
        if key.is_null() {
            continue;
        }
        let slot = match order.iter().position(|k| k == key) {
            Some(i) => i,
            None => {
                order.push(key.clone());
                buckets.push((Vec::new(), 0));
                order.len() - 1
            }
        };
        buckets[slot].1 += 1;
        let cell = &dataset.rows[r][measure_idx];
        if agg == Aggregate::Count {
            if !cell.is_null() {
                buckets[slot].0.push(1.0);
            }
        } else if let Some(v) = cell.as_f64() {
            buckets[slot].0.push(v);
        }
    }
    let mut points: Vec<SeriesPoint> = order
        .into_iter()
        .zip(buckets)
        .filter_map(|(key, (vals, n))| {
            if vals.is_empty() && agg != Aggregate::Count {
                return None;
            }
            agg.apply(&vals).map(|value| SeriesPoint { key, value, rows: n })
        })
        .collect();
    if temporal {
        points.sort_by_key(|p| temporal_key(&p.key).unwrap_or(i64::MAX));
    }
    points
}

/// Filters the dataset by the chart's filters and aggregates the measure per
/// dimension value (and per breakdown value when a color channel is set).
pub fn resolve_chart(dataset: &Dataset, spec: &ChartSpec) -> Result<ChartContext, IngestError> {
    let rows = dataset.evaluate_subspace(&spec.filters)?;
    if rows.is_empty() {
        return Err(IngestError::EmptySelection);
    }
    let dimension = spec.dimension().to_string();
    let dim_idx = dataset
        .column_index(&dimension)
        .ok_or_else(|| IngestError::UnknownColumn(dimension.clone()))?;
    let dimension_kind = dataset.columns[dim_idx].kind;
    let temporal = dimension_kind == ColumnKind::Temporal;
    let measure = spec.measure();
    let m_idx = dataset
        .column_index(&measure.column)
        .ok_or_else(|| IngestError::UnknownColumn(measure.column.clone()))?;

    let totals = group_rows(dataset, &rows, dim_idx, temporal, m_idx, measure.aggregate);

    let mut groups = Vec::new();
    if let Some(b) = &spec.color {
        let b_idx = dataset
            .column_index(b)
            .ok_or_else(|| IngestError::UnknownColumn(b.clone()))?;
        let mut by_group: BTreeMap<usize, (Value, Vec<usize>)> = BTreeMap::new();
        let mut seen: Vec<Value> = Vec::new();
        for &r in &rows {
            let g = &dataset.rows[r][b_idx];
            if g.is_null() {
                continue;
            }
            let slot = match seen.iter().position(|s| s == g) {
                Some(i) => i,
                None => {
                    seen.push(g.clone());
                    seen.len() - 1
                }
            };
            by_group.entry(slot).or_insert_with(|| (g.clone(), Vec::new())).1.push(r);
        }
        for (_, (group, members)) in by_group {
            let points = group_rows(dataset, &members, dim_idx, temporal, m_idx, measure.aggregate);
            if !points.is_empty() {
                groups.push(GroupSeries { group, points });
            }
        }
    }

    Ok(ChartContext {
        chart_id: spec.chart_id.clone(),
        spec: spec.clone(),
        subspace: spec.filters.clone(),
        dimension,
        dimension_kind,
        breakdown: spec.color.clone(),
        measure,
        totals,
        groups,
        row_count: rows.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const CARS: &str = "model,brand,category,year,sales\n\
        Escape,Ford,SUV,2007,10\n\
        Escape,Ford,SUV,2008,14\n\
        Escape,Ford,SUV,2008,6\n\
        Escape,Ford,SUV,2009,30\n\
        CR-V,Honda,SUV,2007,25\n\
        CR-V,Honda,SUV,2009,20\n\
        Camry,Toyota,Sedan,2007,400\n";

    fn cars() -> Dataset {
        load_dataset(CARS.as_bytes(), Some("csv"), "cars").unwrap()
    }

    #[test]
    fn loads_header_and_rows() {
        let d = load_dataset(b"model,sales\nCamry,400", None, "x").unwrap();
        assert_eq!(d.rows.len(), 1);
        assert_eq!(d.columns[1].kind, ColumnKind::Numeric);
    }

    #[test]
    fn quoted_field_with_escaped_quotes() {
        let d = load_dataset(b"model,sales\n\"Ford \"\"Escape\"\"\",3\n", None, "x").unwrap();
        assert_eq!(d.rows[0][0], Value::text("Ford \"Escape\""));
    }

    #[test]
    fn unbalanced_quote_reports_line() {
        let err = load_dataset(b"model,sales\nCamry,400\n\"Corolla,300\n", None, "x").unwrap_err();
        assert_eq!(
            err,
            IngestError::Parse {
                line: 3,
                reason: "unterminated quoted field".into()
            }
        );
    }

    #[test]
    fn ragged_record_reports_line() {
        let err = load_dataset(b"a,b\n1,2\n3\n", None, "x").unwrap_err();
        assert!(matches!(err, IngestError::Parse { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn invalid_utf8_is_encoding_error() {
        let err = load_dataset(&[0x61, 0x0a, 0xff, 0xfe], None, "x").unwrap_err();
        assert!(matches!(err, IngestError::Encoding(_)));
    }

    #[test]
    fn empty_cells_become_null() {
        let d = load_dataset(b"a,b\nx,\ny,2\n", None, "x").unwrap();
        assert_eq!(d.rows[0][1], Value::Null);
        assert_eq!(d.columns[1].kind, ColumnKind::Numeric);
    }

    #[test]
    fn parses_line_spec() {
        let spec = r#"{"mark":"line","encoding":{"x":{"field":"year"},"y":{"field":"sales","aggregate":"sum"}}}"#;
        let p = parse_chart_spec(spec, &cars()).unwrap();
        assert_eq!(p.spec.mark, Mark::Line);
        assert_eq!(p.spec.measure(), Measure::new("sales", Aggregate::Sum));
        assert_eq!(p.spec.dimension(), "year");
        assert!(p.warnings.is_empty());
    }

    #[test]
    fn defaults_and_warnings() {
        let spec = r#"{"encoding":{"x":{"field":"model"},"y":{"field":"sales"}},"foo":1,"data":{}}"#;
        let p = parse_chart_spec(spec, &cars()).unwrap();
        assert_eq!(p.spec.mark, Mark::Bar);
        assert!(p.spec.filters.is_empty());
        assert_eq!(p.spec.measure().aggregate, Aggregate::Sum);
        assert_eq!(p.warnings, vec!["ignored unknown key `foo`".to_string()]);
    }

    #[test]
    fn missing_y_encoding() {
        let spec = r#"{"mark":"bar","encoding":{"x":{"field":"model"}}}"#;
        assert_eq!(
            parse_chart_spec(spec, &cars()).unwrap_err(),
            IngestError::MissingEncoding("y".into())
        );
    }

    #[test]
    fn unsupported_mark() {
        let spec = r#"{"mark":"arc","encoding":{"x":{"field":"model"},"y":{"field":"sales"}}}"#;
        assert_eq!(
            parse_chart_spec(spec, &cars()).unwrap_err(),
            IngestError::UnsupportedMark("arc".into())
        );
    }

    #[test]
    fn unknown_column() {
        let spec = r#"{"mark":"bar","encoding":{"x":{"field":"colour"},"y":{"field":"sales"}}}"#;
        assert_eq!(
            parse_chart_spec(spec, &cars()).unwrap_err(),
            IngestError::UnknownColumn("colour".into())
        );
    }

    #[test]
    fn expression_filters() {
        let spec = r#"{"mark":"line","encoding":{"x":{"field":"year"},"y":{"field":"sales"}},
            "transform":[{"filter":"datum.model == 'Escape'"},{"filter":{"field":"year","equal":"2008"}}]}"#;
        let p = parse_chart_spec(spec, &cars()).unwrap();
        assert_eq!(p.spec.filters.get("model"), Some(&Value::text("Escape")));
        assert_eq!(p.spec.filters.get("year"), Some(&Value::Number(2008.0)));
    }

    #[test]
    fn resolves_line_chart_against_group_by_oracle() {
        let d = cars();
        let spec = r#"{"mark":"line","encoding":{"x":{"field":"year"},"y":{"field":"sales","aggregate":"sum"}},
            "transform":[{"filter":{"field":"model","equal":"Escape"}}]}"#;
        let p = parse_chart_spec(spec, &d).unwrap();
        let ctx = resolve_chart(&d, &p.spec).unwrap();

        // Brute-force group-by over the raw rows.
        let mut oracle: BTreeMap<i64, f64> = BTreeMap::new();
        for row in &d.rows {
            if row[0] == Value::text("Escape") {
                let y = row[3].as_f64().unwrap() as i64;
                *oracle.entry(y).or_default() += row[4].as_f64().unwrap();
            }
        }
        let got: Vec<(i64, f64)> = ctx
            .totals
            .iter()
            .map(|p| (p.key.as_f64().unwrap() as i64, p.value))
            .collect();
        assert_eq!(got, oracle.into_iter().collect::<Vec<_>>());
        assert_eq!(got, vec![(2007, 10.0), (2008, 20.0), (2009, 30.0)]);
    }

    #[test]
    fn empty_selection() {
        let d = cars();
        let spec = r#"{"encoding":{"x":{"field":"year"},"y":{"field":"sales"}},
            "transform":[{"filter":{"field":"model","equal":"Prius"}}]}"#;
        let p = parse_chart_spec(spec, &d).unwrap();
        assert_eq!(resolve_chart(&d, &p.spec).unwrap_err(), IngestError::EmptySelection);
    }

    #[test]
    fn color_adds_secondary_breakdown() {
        let d = cars();
        let spec = r#"{"mark":"bar","encoding":{"x":{"field":"model"},"y":{"field":"sales"},"color":{"field":"brand"}}}"#;
        let ctx = resolve_chart(&d, &parse_chart_spec(spec, &d).unwrap().spec).unwrap();
        assert_eq!(ctx.dimension, "model");
        assert_eq!(ctx.breakdown.as_deref(), Some("brand"));
        let names: Vec<String> = ctx.groups.iter().map(|g| g.group.render()).collect();
        assert_eq!(names, ["Ford", "Honda", "Toyota"]);
        // First-appearance order for a categorical dimension.
        let keys: Vec<String> = ctx.totals.iter().map(|p| p.key.render()).collect();
        assert_eq!(keys, ["Escape", "CR-V", "Camry"]);
    }

    #[test]
    fn count_totals_match_row_count() {
        let d = cars();
        let spec = r#"{"encoding":{"x":{"field":"category"},"y":{"field":"sales","aggregate":"count"}}}"#;
        let ctx = resolve_chart(&d, &parse_chart_spec(spec, &d).unwrap().spec).unwrap();
        let total: f64 = ctx.totals.iter().map(|p| p.value).sum();
        assert_eq!(total as usize, ctx.row_count);
        assert_eq!(ctx.row_count, d.rows.len());
    }

    #[test]
    fn serialize_round_trip() {
        let d = cars();
        let spec = r#"{"chart_id":"c9","mark":"point","encoding":{"x":{"field":"year"},"y":{"field":"sales","aggregate":"mean"},"color":{"field":"model"}},
            "transform":[{"filter":{"field":"category","equal":"SUV"}}]}"#;
        let p = parse_chart_spec(spec, &d).unwrap().spec;
        let again = parse_chart_spec(&p.to_json().to_string(), &d).unwrap().spec;
        assert_eq!(p, again);
    }
}
