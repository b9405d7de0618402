//! Data fact mining: detectors, scoring, ranking and text templates.
//!
//! Detectors run over each series of a resolved chart (the chart totals, and
//! one series per color value when the chart has a breakdown). Each detector
//! proposes facts; scoring and ordering happen afterwards so the result does
//! not depend on detector order.

use std::cmp::Ordering;

use crate::ingest::{ChartContext, SeriesPoint};
use crate::model::{
    format_number, temporal_ordinal, tokenize, ColumnKind, DataFact, FactId, FactParameters, FactScores,
    FocusPoint, Measure, NarrativeContext, Polarity, Subspace, TrendDirection, Value,
};

pub const DEFAULT_TOP_K: usize = 4;
/// Minimum |r| for a trend to be reported.
pub const TREND_MIN_CORRELATION: f64 = 0.5;
pub const OUTLIER_FENCE: f64 = 1.5;
const RANK_LENGTH: usize = 3;
const OUTLIER_MIN_POINTS: usize = 5;
const TREND_MIN_POINTS: usize = 3;
const CONSTANT_IMPORTANCE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct FactCandidate {
    pub fact: DataFact,
    /// 1-based position after sorting.
    pub rank: usize,
}

/// One series with the subspace that produced it.
struct SeriesView<'a> {
    subspace: Subspace,
    points: &'a [SeriesPoint],
}

/// Runs every detector on `ctx`, scores, sorts and keeps the best `top_k`.
pub fn mine_facts(ctx: &ChartContext, nc: &NarrativeContext, top_k: usize) -> Vec<FactCandidate> {
    let mut views = vec![SeriesView {
        subspace: ctx.subspace.clone(),
        points: &ctx.totals,
    }];
    if let Some(b) = &ctx.breakdown {
        for g in &ctx.groups {
            if let Ok(subspace) = ctx.subspace.clone().with(b.clone(), g.group.clone()) {
                views.push(SeriesView {
                    subspace,
                    points: &g.points,
                });
            }
        }
    }

    let mut facts: Vec<DataFact> = views
        .iter()
        .flat_map(|v| detect_all(ctx, v))
        .collect();
    for f in &mut facts {
        let (importance, interest_alignment) = score_fact(f, ctx, nc);
        f.scores = FactScores {
            importance,
            interest_alignment,
        };
        f.description = describe_fact(f);
    }
    facts.sort_by(compare_facts);
    facts.dedup_by(|a, b| a.description == b.description && a.fact_type == b.fact_type);
    facts.truncate(top_k);
    facts
        .into_iter()
        .enumerate()
        .map(|(i, mut fact)| {
            fact.id = FactId(format!("{}-f{}", ctx.chart_id, i + 1));
            FactCandidate { fact, rank: i + 1 }
        })
        .collect()
}

/// Importance descending, then fact type order, then focus, then subspace.
fn compare_facts(a: &DataFact, b: &DataFact) -> Ordering {
    b.scores
        .importance
        .total_cmp(&a.scores.importance)
        .then(a.fact_type.cmp(&b.fact_type))
        .then_with(|| a.focus_sort_key().cmp(&b.focus_sort_key()))
        .then_with(|| subspace_sort_key(&a.subspace).cmp(&subspace_sort_key(&b.subspace)))
        .then_with(|| a.description.cmp(&b.description))
}

fn subspace_sort_key(s: &Subspace) -> String {
    s.keys().into_iter().collect::<Vec<_>>().join("|")
}

fn detect_all(ctx: &ChartContext, view: &SeriesView<'_>) -> Vec<DataFact> {
    let mut out = Vec::new();
    out.extend(detect_value(ctx, view));
    out.extend(detect_difference(ctx, view));
    out.extend(detect_proportion(ctx, view));
    out.extend(detect_trend(ctx, view));
    out.extend(detect_rank(ctx, view));
    out.extend(detect_extremes(ctx, view));
    out.extend(detect_outliers(ctx, view));
    out
}

fn blank_fact(ctx: &ChartContext, view: &SeriesView<'_>, parameters: FactParameters, focus: Vec<Value>) -> DataFact {
    DataFact {
        id: FactId(String::new()),
        subspace: view.subspace.clone(),
        dimension: Some(ctx.dimension.clone()),
        measures: vec![ctx.measure.clone()],
        fact_type: parameters.fact_type(),
        parameters,
        focus: focus
            .into_iter()
            .map(|v| FocusPoint::new(ctx.dimension.clone(), v))
            .collect(),
        scores: FactScores::default(),
        description: String::new(),
        chart_id: ctx.chart_id.clone(),
    }
}

fn detect_value(ctx: &ChartContext, view: &SeriesView<'_>) -> Option<DataFact> {
    match view.points {
        [only] => Some(blank_fact(
            ctx,
            view,
            FactParameters::Value { value: only.value },
            vec![only.key.clone()],
        )),
        _ => None,
    }
}

/// Points sorted by value descending; ties keep series order.
fn by_value_desc(points: &[SeriesPoint]) -> Vec<&SeriesPoint> {
    let mut sorted: Vec<&SeriesPoint> = points.iter().collect();
    sorted.sort_by(|a, b| b.value.total_cmp(&a.value));
    sorted
}

fn detect_difference(ctx: &ChartContext, view: &SeriesView<'_>) -> Option<DataFact> {
    if view.points.len() < 2 {
        return None;
    }
    let sorted = by_value_desc(view.points);
    let (hi, lo) = (sorted[0], sorted[1]);
    let gap = hi.value - lo.value;
    if gap <= 0.0 {
        return None;
    }
    Some(blank_fact(
        ctx,
        view,
        FactParameters::Difference {
            higher: hi.key.clone(),
            lower: lo.key.clone(),
            gap,
        },
        vec![hi.key.clone(), lo.key.clone()],
    ))
}

fn detect_proportion(ctx: &ChartContext, view: &SeriesView<'_>) -> Vec<DataFact> {
    use crate::model::Aggregate::{Count, Sum};
    if view.points.len() < 2
        || ctx.dimension_kind == ColumnKind::Temporal
        || !matches!(ctx.measure.aggregate, Sum | Count)
        || view.points.iter().any(|p| p.value < 0.0)
    {
        return Vec::new();
    }
    let total: f64 = view.points.iter().map(|p| p.value).sum();
    if total <= 0.0 {
        return Vec::new();
    }
    view.points
        .iter()
        .filter(|p| p.value > 0.0)
        .map(|p| {
            blank_fact(
                ctx,
                view,
                FactParameters::Proportion { share: p.value / total },
                vec![p.key.clone()],
            )
        })
        .collect()
}

/// Least-squares slope and Pearson correlation of `ys` against `xs`.
/// `None` when either variable is constant.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len() as f64;
    if xs.len() < 2 || xs.len() != ys.len() {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx <= 0.0 || syy <= 1e-12 * (1.0 + my * my) {
        return None;
    }
    let slope = sxy / sxx;
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    Some((slope, r))
}

fn trend_stats(points: &[SeriesPoint]) -> Option<(f64, f64, &'static str)> {
    let xs: Option<Vec<f64>> = points.iter().map(|p| temporal_ordinal(&p.key)).collect();
    let xs = xs?;
    let unit = if points.iter().all(|p| matches!(p.key, Value::Number(_))) {
        "year"
    } else {
        "day"
    };
    let ys: Vec<f64> = points.iter().map(|p| p.value).collect();
    least_squares(&xs, &ys).map(|(s, r)| (s, r, unit))
}

fn detect_trend(ctx: &ChartContext, view: &SeriesView<'_>) -> Option<DataFact> {
    if ctx.dimension_kind != ColumnKind::Temporal || view.points.len() < TREND_MIN_POINTS {
        return None;
    }
    let (slope, r, unit) = trend_stats(view.points)?;
    if r.abs() < TREND_MIN_CORRELATION || slope == 0.0 {
        return None;
    }
    let direction = if slope > 0.0 {
        TrendDirection::Increasing
    } else {
        TrendDirection::Decreasing
    };
    Some(blank_fact(
        ctx,
        view,
        FactParameters::Trend {
            direction,
            slope,
            unit: unit.to_string(),
            correlation: r,
            start: view.points[0].key.clone(),
            end: view.points[view.points.len() - 1].key.clone(),
        },
        Vec::new(),
    ))
}

fn detect_rank(ctx: &ChartContext, view: &SeriesView<'_>) -> Option<DataFact> {
    if view.points.len() < RANK_LENGTH {
        return None;
    }
    let order: Vec<Value> = by_value_desc(view.points)
        .into_iter()
        .take(RANK_LENGTH)
        .map(|p| p.key.clone())
        .collect();
    Some(blank_fact(ctx, view, FactParameters::Rank { order: order.clone() }, order))
}

fn detect_extremes(ctx: &ChartContext, view: &SeriesView<'_>) -> Vec<DataFact> {
    let pts = view.points;
    if pts.len() < 2 {
        return Vec::new();
    }
    let mut out = Vec::new();
    let sorted = by_value_desc(pts);
    let (top, second) = (sorted[0], sorted[1]);
    if top.value > second.value {
        out.push(blank_fact(
            ctx,
            view,
            FactParameters::Extreme {
                polarity: Polarity::Max,
                value: top.value,
            },
            vec![top.key.clone()],
        ));
    }
    let (bottom, next) = (sorted[sorted.len() - 1], sorted[sorted.len() - 2]);
    if bottom.value < next.value {
        out.push(blank_fact(
            ctx,
            view,
            FactParameters::Extreme {
                polarity: Polarity::Min,
                value: bottom.value,
            },
            vec![bottom.key.clone()],
        ));
    }
    out
}

/// Quantile with linear interpolation between closest ranks.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// `(q1, q3, iqr)` of a series.
fn quartiles(points: &[SeriesPoint]) -> (f64, f64, f64) {
    let mut vals: Vec<f64> = points.iter().map(|p| p.value).collect();
    vals.sort_by(f64::total_cmp);
    let q1 = quantile(&vals, 0.25);
    let q3 = quantile(&vals, 0.75);
    (q1, q3, q3 - q1)
}

fn detect_outliers(ctx: &ChartContext, view: &SeriesView<'_>) -> Vec<DataFact> {
    if view.points.len() < OUTLIER_MIN_POINTS {
        return Vec::new();
    }
    let (q1, q3, iqr) = quartiles(view.points);
    if iqr <= 0.0 {
        return Vec::new();
    }
    let (lo, hi) = (q1 - OUTLIER_FENCE * iqr, q3 + OUTLIER_FENCE * iqr);
    view.points
        .iter()
        .filter_map(|p| {
            let distance = if p.value > hi {
                p.value - hi
            } else if p.value < lo {
                lo - p.value
            } else {
                return None;
            };
            Some(blank_fact(
                ctx,
                view,
                FactParameters::Outlier {
                    value: p.value,
                    distance,
                    iqr,
                },
                vec![p.key.clone()],
            ))
        })
        .collect()
}

/// Returns `(importance, interest_alignment)` for a fact mined from `ctx`.
pub fn score_fact(fact: &DataFact, ctx: &ChartContext, nc: &NarrativeContext) -> (f64, f64) {
    let series = ctx.series_for(&fact.subspace).unwrap_or(&ctx.totals);
    let importance = importance(fact, series).clamp(0.0, 1.0);
    (importance, interest_alignment(fact, &nc.intent))
}

fn importance(fact: &DataFact, series: &[SeriesPoint]) -> f64 {
    match &fact.parameters {
        FactParameters::Value { .. } | FactParameters::Rank { .. } => CONSTANT_IMPORTANCE,
        FactParameters::Trend { .. } => trend_stats(series).map(|(_, r, _)| r.abs()).unwrap_or(0.0),
        FactParameters::Proportion { share } => *share,
        FactParameters::Difference { gap, higher, .. } => {
            let top = series
                .iter()
                .find(|p| p.key == *higher)
                .map(|p| p.value.abs())
                .unwrap_or(0.0);
            if top > 0.0 {
                gap / top
            } else {
                0.0
            }
        }
        FactParameters::Extreme { polarity, .. } => {
            if series.len() < 2 {
                return 0.0;
            }
            let sorted = by_value_desc(series);
            let max = sorted[0].value;
            let min = sorted[sorted.len() - 1].value;
            let range = max - min;
            if range <= 0.0 {
                return 0.0;
            }
            match polarity {
                Polarity::Max => (max - sorted[1].value) / range,
                Polarity::Min => (sorted[sorted.len() - 2].value - min) / range,
            }
        }
        FactParameters::Outlier { distance, iqr, .. } => {
            if *iqr > 0.0 {
                (distance / iqr / 3.0).min(1.0)
            } else {
                0.0
            }
        }
    }
}

/// Token IoU between the fact's entity values and the narrative intent.
pub fn interest_alignment(fact: &DataFact, intent: &str) -> f64 {
    let intent_tokens = tokenize(intent);
    if intent_tokens.is_empty() {
        return 0.0;
    }
    let mut fact_tokens = std::collections::BTreeSet::new();
    for (_, v) in fact.subspace.iter() {
        fact_tokens.extend(tokenize(&v.render()));
    }
    for p in &fact.focus {
        fact_tokens.extend(tokenize(&p.value.render()));
    }
    crate::relations::iou(&fact_tokens, &intent_tokens)
}

fn measure_phrase(m: &Measure) -> String {
    format!("{} {}", m.aggregate.adjective(), m.column)
}

fn among(subspace: &Subspace) -> String {
    if subspace.is_empty() {
        String::new()
    } else {
        format!(" among {}", subspace_values(subspace))
    }
}

fn subspace_values(subspace: &Subspace) -> String {
    subspace.iter().map(|(_, v)| v.render()).collect::<Vec<_>>().join(", ")
}

fn join_labels(items: &[Value]) -> String {
    let names: Vec<String> = items.iter().map(Value::render).collect();
    match names.as_slice() {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{}, and {last}", init.join(", ")),
    }
}

/// Deterministic per-type sentence for a fact.
pub fn describe_fact(fact: &DataFact) -> String {
    let measure = fact
        .measures
        .first()
        .map(measure_phrase)
        .unwrap_or_else(|| "value".to_string());
    let focus = fact
        .focus
        .first()
        .map(|p| p.value.render())
        .unwrap_or_default();
    let scope = among(&fact.subspace);
    match &fact.parameters {
        FactParameters::Value { value } => {
            format!("The {measure} of {focus}{scope} is {}.", format_number(*value))
        }
        FactParameters::Difference { higher, lower, gap } => format!(
            "{} has {} more {measure} than {}{scope}.",
            higher.render(),
            format_number(*gap),
            lower.render()
        ),
        FactParameters::Proportion { share } => format!(
            "{focus} accounts for {}% of {measure}{scope}.",
            format_number((share * 100.0).round())
        ),
        FactParameters::Trend {
            direction,
            start,
            end,
            ..
        } => {
            let verb = match direction {
                TrendDirection::Increasing => "increased",
                TrendDirection::Decreasing => "decreased",
            };
            let column = fact.measures.first().map(|m| m.column.as_str()).unwrap_or("value");
            let subject = if fact.subspace.is_empty() {
                format!("The {measure}")
            } else {
                let names: Vec<String> = fact.subspace.iter().map(|(_, v)| v.render()).collect();
                format!("The {column} of {}", names.join(" "))
            };
            format!("{subject} {verb} from {} to {}.", start.render(), end.render())
        }
        FactParameters::Rank { order } => {
            let dim = fact.dimension.as_deref().unwrap_or("items");
            format!(
                "The top {} {dim} by {measure}{scope} are {}.",
                order.len(),
                join_labels(order)
            )
        }
        FactParameters::Extreme { polarity, .. } => {
            let word = match polarity {
                Polarity::Max => "highest",
                Polarity::Min => "lowest",
            };
            format!("{focus} has the {word} {measure}{scope}.")
        }
        FactParameters::Outlier { value, .. } => format!(
            "{focus} is an outlier in {measure}{scope} at {}.",
            format_number(*value)
        ),
    }
}
