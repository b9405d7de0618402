//! Rendering an organized deck into slide documents.
//!
//! Three formats: markdown slides (`---` between pages, chart panels as
//! embedded vega-lite blocks), a self-contained HTML file with inline SVG
//! charts, and the structured `.story.json` form that [`parse_story`] reads
//! back.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};
use thiserror::Error;

use crate::ingest::{ChartContext, ChartSpec, Mark, SeriesPoint};
use crate::model::{format_number, DataFact, FactId, FactLookup, MetaRelation, RelationId, Slide, StoryDeck};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExportError {
    #[error("deck entry `{0}` does not resolve to a fact")]
    UnresolvedFact(FactId),
    #[error("unknown theme `{0}`; use a preset name or an http(s) image link")]
    UnknownTheme(String),
    #[error("unknown export format `{0}`")]
    UnknownFormat(String),
    #[error("structured document is invalid: {0}")]
    InvalidDocument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExportFormat {
    MarkdownSlides,
    Html,
    Structured,
}

impl ExportFormat {
    pub fn parse(s: &str) -> Result<Self, ExportError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "markdown" | "markdown-slides" | "md" => Ok(Self::MarkdownSlides),
            "html" => Ok(Self::Html),
            "structured" | "json" | "story" => Ok(Self::Structured),
            other => Err(ExportError::UnknownFormat(other.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::MarkdownSlides => "markdown-slides",
            Self::Html => "html",
            Self::Structured => "structured",
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            Self::MarkdownSlides => "md",
            Self::Html => "html",
            Self::Structured => "story.json",
        }
    }

    pub fn media_type(self) -> &'static str {
        match self {
            Self::MarkdownSlides => "text/markdown; charset=utf-8",
            Self::Html => "text/html; charset=utf-8",
            Self::Structured => "application/json",
        }
    }
}

/// Preset backgrounds: name, background colour, text colour.
pub const PRESET_THEMES: &[(&str, &str, &str)] = &[
    ("default", "#ffffff", "#1b1b1b"),
    ("light", "#f7f7f2", "#1b1b1b"),
    ("dark", "#1f2430", "#f0f0f0"),
    ("ocean", "#e6f0f7", "#10283a"),
    ("sand", "#f5ecd9", "#3a2e1a"),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Theme {
    Preset(String),
    Image(String),
}

impl Theme {
    /// A preset name, or an http(s) link to a background image. Empty input
    /// selects `default`.
    pub fn parse(s: &str) -> Result<Self, ExportError> {
        let s = s.trim();
        if s.is_empty() {
            return Ok(Theme::Preset("default".into()));
        }
        if s.starts_with("http://") || s.starts_with("https://") {
            if s.chars().any(|c| c.is_whitespace() || matches!(c, '"' | '\'' | '(' | ')' | '<' | '>')) {
                return Err(ExportError::UnknownTheme(s.to_string()));
            }
            return Ok(Theme::Image(s.to_string()));
        }
        let lower = s.to_ascii_lowercase();
        if PRESET_THEMES.iter().any(|(n, _, _)| *n == lower) {
            Ok(Theme::Preset(lower))
        } else {
            Err(ExportError::UnknownTheme(s.to_string()))
        }
    }

    fn colours(&self) -> (&'static str, &'static str) {
        let name = match self {
            Theme::Preset(n) => n.as_str(),
            Theme::Image(_) => "default",
        };
        PRESET_THEMES
            .iter()
            .find(|(n, _, _)| *n == name)
            .map(|(_, bg, fg)| (*bg, *fg))
            .unwrap_or(("#ffffff", "#1b1b1b"))
    }

    pub fn label(&self) -> String {
        match self {
            Theme::Preset(n) => n.clone(),
            Theme::Image(u) => u.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlideStyle {
    /// One chart, fact descriptions as annotations.
    SameChart,
    /// One chart panel per fact.
    DifferentCharts,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationBox {
    /// The fact before the box.
    pub from: FactId,
    pub to: FactId,
    pub relation: RelationId,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page {
    pub title: String,
    pub style: SlideStyle,
    pub fact_ids: Vec<FactId>,
    pub relation_boxes: Vec<RelationBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideDocument {
    pub format: ExportFormat,
    pub theme: Theme,
    pub pages: Vec<Page>,
    /// The rendered file.
    pub content: String,
}

/// Canonical structured serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoryFile {
    pub format: String,
    pub theme: Theme,
    pub deck: StoryDeck,
    pub facts: Vec<DataFact>,
    pub meta_relations: Vec<MetaRelation>,
    pub charts: Vec<ChartSpec>,
    pub pages: Vec<Page>,
}

pub const STORY_FORMAT_TAG: &str = "storyweave-story/1";

/// Chart lookup by id.
pub trait ChartLookup {
    fn chart(&self, id: &str) -> Option<&ChartContext>;
}

impl ChartLookup for BTreeMap<String, ChartContext> {
    fn chart(&self, id: &str) -> Option<&ChartContext> {
        self.get(id)
    }
}

impl ChartLookup for IndexMap<String, ChartContext> {
    fn chart(&self, id: &str) -> Option<&ChartContext> {
        self.get(id)
    }
}

impl ChartLookup for [ChartContext] {
    fn chart(&self, id: &str) -> Option<&ChartContext> {
        self.iter().find(|c| c.chart_id == id)
    }
}

impl ChartLookup for Vec<ChartContext> {
    fn chart(&self, id: &str) -> Option<&ChartContext> {
        self.as_slice().chart(id)
    }
}

pub fn slide_style(facts: &[&DataFact]) -> SlideStyle {
    match facts.split_first() {
        Some((first, rest)) if rest.iter().all(|f| f.chart_id == first.chart_id) => SlideStyle::SameChart,
        _ => SlideStyle::DifferentCharts,
    }
}

/// The endorsed relation joining two consecutive facts, preferring the one
/// the later entry carries.
fn joining_relation<'a>(
    slide: &Slide,
    pos: usize,
    relations: &'a [MetaRelation],
) -> Option<&'a MetaRelation> {
    let prev = &slide.entries[pos - 1].fact_id;
    let entry = &slide.entries[pos];
    let ok = |m: &&MetaRelation| m.status.is_endorsed() && m.links(prev, &entry.fact_id);
    entry
        .incoming_meta_relation
        .as_ref()
        .and_then(|rid| relations.iter().find(|m| m.id == *rid))
        .filter(ok)
        .or_else(|| {
            let mut c: Vec<&MetaRelation> = relations.iter().filter(ok).collect();
            c.sort_by(|a, b| a.id.cmp(&b.id));
            c.into_iter().next()
        })
}

fn layout<L: FactLookup + ?Sized>(
    deck: &StoryDeck,
    facts: &L,
    relations: &[MetaRelation],
) -> Result<Vec<(Page, Vec<DataFact>)>, ExportError> {
    deck.slides
        .iter()
        .map(|s| {
            let members = s
                .entries
                .iter()
                .map(|e| facts.fact(&e.fact_id).ok_or_else(|| ExportError::UnresolvedFact(e.fact_id.clone())))
                .collect::<Result<Vec<_>, _>>()?;
            let boxes = (1..s.entries.len())
                .filter_map(|i| {
                    joining_relation(s, i, relations).map(|m| RelationBox {
                        from: s.entries[i - 1].fact_id.clone(),
                        to: s.entries[i].fact_id.clone(),
                        relation: m.id.clone(),
                        text: m.type_description.clone(),
                    })
                })
                .collect();
            let page = Page {
                title: s.title.clone(),
                style: slide_style(&members),
                fact_ids: s.fact_ids().cloned().collect(),
                relation_boxes: boxes,
            };
            Ok((page, members.into_iter().cloned().collect()))
        })
        .collect()
}

pub fn export_deck<L, C>(
    deck: &StoryDeck,
    facts: &L,
    charts: &C,
    relations: &[MetaRelation],
    theme: &str,
    format: ExportFormat,
) -> Result<SlideDocument, ExportError>
where
    L: FactLookup + ?Sized,
    C: ChartLookup + ?Sized,
{
    let theme = Theme::parse(theme)?;
    let pages = layout(deck, facts, relations)?;
    let content = match format {
        ExportFormat::MarkdownSlides => render_markdown(&pages, charts, &theme),
        ExportFormat::Html => render_html(&pages, charts, &theme),
        ExportFormat::Structured => render_structured(deck, &pages, charts, relations, &theme),
    };
    Ok(SlideDocument {
        format,
        theme,
        pages: pages.into_iter().map(|(p, _)| p).collect(),
        content,
    })
}

/// Reads a structured document back.
pub fn parse_story(text: &str) -> Result<StoryFile, ExportError> {
    let story: StoryFile = serde_json::from_str(text).map_err(|e| ExportError::InvalidDocument(e.to_string()))?;
    if story.format != STORY_FORMAT_TAG {
        return Err(ExportError::InvalidDocument(format!("unexpected format tag `{}`", story.format)));
    }
    Ok(story)
}

// ---------------------------------------------------------------------------
// Chart data
// ---------------------------------------------------------------------------

struct Series<'a> {
    label: Option<String>,
    points: &'a [SeriesPoint],
}

fn chart_series(ctx: &ChartContext) -> Vec<Series<'_>> {
    if ctx.groups.is_empty() {
        vec![Series {
            label: None,
            points: &ctx.totals,
        }]
    } else {
        ctx.groups
            .iter()
            .map(|g| Series {
                label: Some(g.group.render()),
                points: &g.points,
            })
            .collect()
    }
}

/// Whole numbers as JSON integers.
fn number_json(n: f64) -> Json {
    if n.fract() == 0.0 && n.abs() < 9.0e15 {
        json!(n as i64)
    } else {
        json!(n)
    }
}

/// A vega-lite document carrying the chart's aggregated values inline.
pub fn chart_block(ctx: &ChartContext) -> Json {
    let dim = &ctx.dimension;
    let measure = &ctx.measure.column;
    let mut values = Vec::new();
    for s in chart_series(ctx) {
        for p in s.points {
            let mut row = serde_json::Map::new();
            let key = match &p.key {
                crate::model::Value::Number(n) => number_json(*n),
                other => serde_json::to_value(other).unwrap_or(Json::Null),
            };
            row.insert(dim.clone(), key);
            if let (Some(b), Some(l)) = (&ctx.breakdown, &s.label) {
                row.insert(b.clone(), json!(l));
            }
            row.insert(measure.clone(), number_json(p.value));
            values.push(Json::Object(row));
        }
    }
    let dim_type = if ctx.dimension_kind == crate::model::ColumnKind::Temporal { "ordinal" } else { "nominal" };
    let dim_enc = json!({ "field": dim, "type": dim_type, "sort": null });
    let measure_title = format!("{} {}", ctx.measure.aggregate.adjective(), measure);
    let measure_enc = json!({ "field": measure, "type": "quantitative", "title": measure_title });
    let (x, y) = match ctx.spec.measure_axis {
        crate::ingest::MeasureAxis::Y => (dim_enc, measure_enc),
        crate::ingest::MeasureAxis::X => (measure_enc, dim_enc),
    };
    let mut encoding = serde_json::Map::new();
    encoding.insert("x".into(), x);
    encoding.insert("y".into(), y);
    if let Some(b) = &ctx.breakdown {
        encoding.insert("color".into(), json!({ "field": b, "type": "nominal" }));
    }
    let title = if ctx.subspace.is_empty() {
        ctx.chart_id.clone()
    } else {
        let f: Vec<String> = ctx.subspace.iter().map(|(c, v)| format!("{c}={}", v.render())).collect();
        format!("{} ({})", ctx.chart_id, f.join(", "))
    };
    json!({
        "$schema": "https://vega.github.io/schema/vega-lite/v5.json",
        "title": title,
        "data": { "values": values },
        "mark": ctx.spec.mark.name(),
        "encoding": Json::Object(encoding),
    })
}

// ---------------------------------------------------------------------------
// Markdown
// ---------------------------------------------------------------------------

fn md_fact_line(out: &mut String, f: &DataFact) {
    let _ = writeln!(out, "- **{}** ({}): {}", f.id, f.fact_type, f.description);
}

fn md_chart(out: &mut String, charts: &(impl ChartLookup + ?Sized), chart_id: &str) {
    match charts.chart(chart_id) {
        Some(ctx) => {
            let body = serde_json::to_string_pretty(&chart_block(ctx)).unwrap_or_default();
            let _ = write!(out, "```vega-lite\n{body}\n```\n\n");
        }
        None => {
            let _ = write!(out, "_Chart `{chart_id}` is not available._\n\n");
        }
    }
}

fn md_relation(out: &mut String, b: &RelationBox) {
    let _ = write!(out, "\n> **Relation:** {}\n\n", b.text.replace('\n', " "));
}

fn render_markdown<C: ChartLookup + ?Sized>(pages: &[(Page, Vec<DataFact>)], charts: &C, theme: &Theme) -> String {
    let (bg, fg) = theme.colours();
    let mut out = String::new();
    let _ = writeln!(out, "---\nmarp: true\ntheme: {}", theme.label());
    match theme {
        Theme::Image(url) => {
            let _ = writeln!(out, "backgroundImage: url('{url}')");
        }
        Theme::Preset(_) => {
            let _ = writeln!(out, "backgroundColor: \"{bg}\"\ncolor: \"{fg}\"");
        }
    }
    out.push_str("---\n\n");

    for (i, (page, members)) in pages.iter().enumerate() {
        if i > 0 {
            out.push_str("\n---\n\n");
        }
        let _ = write!(out, "# {}\n\n", page.title.replace('\n', " "));
        let box_after = |id: &FactId| page.relation_boxes.iter().find(|b| b.from == *id);
        match page.style {
            SlideStyle::SameChart => {
                if let Some(first) = members.first() {
                    md_chart(&mut out, charts, &first.chart_id);
                }
                for f in members {
                    md_fact_line(&mut out, f);
                    if let Some(b) = box_after(&f.id) {
                        md_relation(&mut out, b);
                    }
                }
            }
            SlideStyle::DifferentCharts => {
                for (j, f) in members.iter().enumerate() {
                    let _ = write!(out, "## Panel {}\n\n", j + 1);
                    md_chart(&mut out, charts, &f.chart_id);
                    md_fact_line(&mut out, f);
                    if let Some(b) = box_after(&f.id) {
                        md_relation(&mut out, b);
                    } else {
                        out.push('\n');
                    }
                }
            }
        }
    }
    while out.ends_with("\n\n") {
        out.pop();
    }
    out
}

/// Page bodies of a markdown-slides document, front matter removed.
pub fn markdown_pages(doc: &str) -> Vec<&str> {
    let body = match doc.strip_prefix("---\n") {
        Some(rest) => rest.split_once("\n---\n").map(|(_, b)| b).unwrap_or(rest),
        None => doc,
    };
    body.split("\n---\n").map(str::trim).filter(|p| !p.is_empty()).collect()
}

pub const MARKDOWN_RELATION_MARKER: &str = "> **Relation:** ";

// ---------------------------------------------------------------------------
// HTML
// ---------------------------------------------------------------------------

pub fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

const PALETTE: &[&str] = &["#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7"];

fn fmt_coord(v: f64) -> String {
    format!("{:.1}", v)
}

/// Inline SVG drawing of a chart.
pub fn chart_svg(ctx: &ChartContext) -> String {
    const W: f64 = 480.0;
    const H: f64 = 260.0;
    const LEFT: f64 = 48.0;
    const RIGHT: f64 = 12.0;
    const TOP: f64 = 16.0;
    const BOTTOM: f64 = 40.0;

    let series = chart_series(ctx);
    let mut keys: Vec<String> = Vec::new();
    for s in &series {
        for p in s.points {
            let k = p.key.render();
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
    }
    let values: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.value)).collect();
    let hi = values.iter().copied().fold(0.0_f64, f64::max);
    let lo = values.iter().copied().fold(0.0_f64, f64::min);
    let span = if hi - lo > 0.0 { hi - lo } else { 1.0 };
    let plot_w = W - LEFT - RIGHT;
    let plot_h = H - TOP - BOTTOM;
    let band = plot_w / keys.len().max(1) as f64;
    let y_of = |v: f64| TOP + plot_h * (hi - v) / span;
    let x_of = |k: usize| LEFT + band * (k as f64 + 0.5);
    let key_index = |p: &SeriesPoint| keys.iter().position(|k| *k == p.key.render()).unwrap_or(0);

    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {W} {H}\" width=\"{W}\" height=\"{H}\" role=\"img\" aria-label=\"{}\">",
        escape_html(&ctx.chart_id)
    );
    let base = y_of(0.0);
    let _ = write!(
        svg,
        "<line x1=\"{LEFT}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#888\"/>",
        fmt_coord(base),
        W - RIGHT,
        fmt_coord(base)
    );
    let _ = write!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"end\">{}</text>",
        LEFT - 4.0,
        fmt_coord(TOP + 4.0),
        escape_html(&format_number(hi))
    );

    let n_series = series.len().max(1) as f64;
    for (si, s) in series.iter().enumerate() {
        let colour = PALETTE[si % PALETTE.len()];
        match ctx.spec.mark {
            Mark::Bar => {
                let w = band * 0.8 / n_series;
                for p in s.points {
                    let x = LEFT + band * key_index(p) as f64 + band * 0.1 + w * si as f64;
                    let (y0, y1) = (y_of(p.value.max(0.0)), y_of(p.value.min(0.0)));
                    let _ = write!(
                        svg,
                        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{colour}\"/>",
                        fmt_coord(x),
                        fmt_coord(y0),
                        fmt_coord(w),
                        fmt_coord(y1 - y0)
                    );
                }
            }
            Mark::Line => {
                let pts: Vec<String> = s
                    .points
                    .iter()
                    .map(|p| format!("{},{}", fmt_coord(x_of(key_index(p))), fmt_coord(y_of(p.value))))
                    .collect();
                let _ = write!(
                    svg,
                    "<polyline points=\"{}\" fill=\"none\" stroke=\"{colour}\" stroke-width=\"2\"/>",
                    pts.join(" ")
                );
            }
            Mark::Point => {
                for p in s.points {
                    let _ = write!(
                        svg,
                        "<circle cx=\"{}\" cy=\"{}\" r=\"4\" fill=\"{colour}\"/>",
                        fmt_coord(x_of(key_index(p))),
                        fmt_coord(y_of(p.value))
                    );
                }
            }
        }
        if let Some(l) = &s.label {
            let _ = write!(
                svg,
                "<text x=\"{}\" y=\"{}\" font-size=\"10\" fill=\"{colour}\">{}</text>",
                fmt_coord(LEFT + 4.0 + 70.0 * si as f64),
                fmt_coord(TOP - 4.0),
                escape_html(l)
            );
        }
    }
    for (i, k) in keys.iter().enumerate() {
        let _ = write!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"middle\">{}</text>",
            fmt_coord(x_of(i)),
            fmt_coord(H - BOTTOM + 14.0),
            escape_html(k)
        );
    }
    svg.push_str("</svg>");
    svg
}

fn html_chart(out: &mut String, charts: &(impl ChartLookup + ?Sized), chart_id: &str) {
    match charts.chart(chart_id) {
        Some(ctx) => {
            let _ = writeln!(out, "<figure class=\"chart\">{}</figure>", chart_svg(ctx));
        }
        None => {
            let _ = writeln!(out, "<p class=\"missing\">Chart {} is not available.</p>", escape_html(chart_id));
        }
    }
}

fn html_fact(out: &mut String, f: &DataFact) {
    let _ = writeln!(
        out,
        "<p class=\"fact\" data-fact=\"{}\"><span class=\"type\">{}</span> {}</p>",
        escape_html(f.id.as_str()),
        f.fact_type,
        escape_html(&f.description)
    );
}

fn html_relation(out: &mut String, b: &RelationBox) {
    let _ = writeln!(
        out,
        "<aside class=\"relation\" data-relation=\"{}\">{}</aside>",
        escape_html(b.relation.as_str()),
        escape_html(&b.text)
    );
}

fn render_html<C: ChartLookup + ?Sized>(pages: &[(Page, Vec<DataFact>)], charts: &C, theme: &Theme) -> String {
    let (bg, fg) = theme.colours();
    let background = match theme {
        Theme::Image(url) => format!("background: {bg} url(\"{}\") center / cover no-repeat;", escape_html(url)),
        Theme::Preset(_) => format!("background: {bg};"),
    };
    let mut out = String::new();
    out.push_str("<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n<title>");
    out.push_str(&escape_html(pages.first().map(|(p, _)| p.title.as_str()).unwrap_or("Story")));
    out.push_str("</title>\n<style>\n");
    let _ = writeln!(
        out,
        "body {{ margin: 0; font-family: sans-serif; background: #666; }}\n\
         section.slide {{ {background} color: {fg}; width: 960px; min-height: 540px; margin: 24px auto; padding: 32px; box-sizing: border-box; }}\n\
         section.slide h1 {{ margin-top: 0; }}\n\
         .panels {{ display: flex; flex-wrap: wrap; gap: 16px; }}\n\
         .panel {{ flex: 1 1 280px; }}\n\
         .fact .type {{ font-weight: bold; text-transform: uppercase; font-size: 0.8em; }}\n\
         aside.relation {{ border: 1px solid currentColor; border-radius: 6px; padding: 6px 10px; margin: 8px 0; font-style: italic; }}\n\
         svg {{ max-width: 100%; height: auto; }}"
    );
    out.push_str("</style>\n</head>\n<body>\n");
    for (page, members) in pages {
        let style = match page.style {
            SlideStyle::SameChart => "same-chart",
            SlideStyle::DifferentCharts => "different-charts",
        };
        let _ = writeln!(out, "<section class=\"slide {style}\">\n<h1>{}</h1>", escape_html(&page.title));
        let box_after = |id: &FactId| page.relation_boxes.iter().find(|b| b.from == *id);
        match page.style {
            SlideStyle::SameChart => {
                if let Some(first) = members.first() {
                    html_chart(&mut out, charts, &first.chart_id);
                }
                for f in members {
                    html_fact(&mut out, f);
                    if let Some(b) = box_after(&f.id) {
                        html_relation(&mut out, b);
                    }
                }
            }
            SlideStyle::DifferentCharts => {
                out.push_str("<div class=\"panels\">\n");
                for f in members {
                    out.push_str("<div class=\"panel\">\n");
                    html_chart(&mut out, charts, &f.chart_id);
                    html_fact(&mut out, f);
                    out.push_str("</div>\n");
                    if let Some(b) = box_after(&f.id) {
                        html_relation(&mut out, b);
                    }
                }
                out.push_str("</div>\n");
            }
        }
        out.push_str("</section>\n");
    }
    out.push_str("</body>\n</html>\n");
    out
}

// ---------------------------------------------------------------------------
// Structured
// ---------------------------------------------------------------------------

fn render_structured<C: ChartLookup + ?Sized>(
    deck: &StoryDeck,
    pages: &[(Page, Vec<DataFact>)],
    charts: &C,
    relations: &[MetaRelation],
    theme: &Theme,
) -> String {
    let facts: Vec<DataFact> = pages.iter().flat_map(|(_, m)| m.iter().cloned()).collect();
    let mut chart_ids: Vec<String> = facts.iter().map(|f| f.chart_id.clone()).collect();
    chart_ids.sort_unstable();
    chart_ids.dedup();
    let story = StoryFile {
        format: STORY_FORMAT_TAG.into(),
        theme: theme.clone(),
        deck: deck.clone(),
        facts,
        meta_relations: relations.to_vec(),
        charts: chart_ids.iter().filter_map(|id| charts.chart(id)).map(|c| c.spec.clone()).collect(),
        pages: pages.iter().map(|(p, _)| p.clone()).collect(),
    };
    let mut s = serde_json::to_string_pretty(&story).unwrap_or_default();
    s.push('\n');
    s
}
