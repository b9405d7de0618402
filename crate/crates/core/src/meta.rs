//! Meta relation identification: prompt construction, response parsing,
//! entity verification, score aggregation and ranking.
//!
//! The model is asked for three things per candidate relation: the relation
//! itself with five 1..5 self-ratings, the entities it is about (checked
//! here against the two facts), and evidence plus an intent explanation that
//! are passed through for the user to read.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError, Transcript};
use crate::model::{
    collapse_whitespace, DataFact, FactId, MetaRelation, NarrativeContext, RelationId, RelationStatus,
    ScoreWeights, SubScores,
};
use crate::payload::extract_json;

/// Upper bound on suggestions kept per (previous, new) fact pair.
pub const MAX_SUGGESTIONS_PER_PAIR: usize = 2;
const MAX_SUMMARY_WORDS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetaError {
    #[error("identification needs at least one previous and one new fact")]
    EmptyFactSet,
    #[error("fact `{0}` is both previous and new")]
    OverlappingFacts(FactId),
    #[error("response contains no parsable relation payload")]
    MalformedResponse,
    #[error("sub-score {0} outside 1..5")]
    InvalidScoreRange(u8),
    #[error("weights must be non-negative and not all zero")]
    ZeroWeights,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentificationRequest {
    pub previous_facts: Vec<DataFact>,
    pub new_facts: Vec<DataFact>,
    pub context: NarrativeContext,
}

impl IdentificationRequest {
    fn validate(&self) -> Result<(), MetaError> {
        if self.previous_facts.is_empty() || self.new_facts.is_empty() {
            return Err(MetaError::EmptyFactSet);
        }
        let prev: HashSet<&FactId> = self.previous_facts.iter().map(|f| &f.id).collect();
        if let Some(f) = self.new_facts.iter().find(|f| prev.contains(&f.id)) {
            return Err(MetaError::OverlappingFacts(f.id.clone()));
        }
        Ok(())
    }

    fn fact(&self, id: &str) -> Option<&DataFact> {
        self.previous_facts
            .iter()
            .chain(&self.new_facts)
            .find(|f| f.id.as_str() == id)
    }

    fn is_previous(&self, id: &FactId) -> bool {
        self.previous_facts.iter().any(|f| f.id == *id)
    }
}

/// A structurally valid candidate from the model, not yet verified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCandidate {
    pub fact_a: FactId,
    pub fact_b: FactId,
    pub type_description: String,
    pub summary: String,
    pub sub_scores: SubScores,
    pub entities: Vec<String>,
    pub evidence_quote: String,
    pub intent_link: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedCandidate {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IdentificationResponse {
    pub candidates: Vec<RawCandidate>,
    pub dropped: Vec<DroppedCandidate>,
}

// ---------------------------------------------------------------------------
// Prompt
// ---------------------------------------------------------------------------

pub const NO_INTENT_MARKER: &str = "(no narrative intent provided)";

fn write_fact_block(out: &mut String, f: &DataFact, role: &str) {
    let subspace = if f.subspace.is_empty() {
        "(whole dataset)".to_string()
    } else {
        f.subspace
            .iter()
            .map(|(c, v)| format!("{c} = {v}"))
            .collect::<Vec<_>>()
            .join("; ")
    };
    let focus = if f.focus.is_empty() {
        "(none)".to_string()
    } else {
        f.focus
            .iter()
            .map(|p| format!("{} = {}", p.column, p.value))
            .collect::<Vec<_>>()
            .join("; ")
    };
    let measures = f
        .measures
        .iter()
        .map(|m| format!("{} of {}", m.aggregate.name(), m.column))
        .collect::<Vec<_>>()
        .join(", ");
    let _ = writeln!(out, "### Fact {}", f.id);
    let _ = writeln!(out, "- role: {role}");
    let _ = writeln!(out, "- type: {}", f.fact_type);
    let _ = writeln!(out, "- description: {}", f.description);
    let _ = writeln!(out, "- subspace: {subspace}");
    let _ = writeln!(out, "- dimension: {}", f.dimension.as_deref().unwrap_or("(none)"));
    let _ = writeln!(out, "- measures: {measures}");
    let _ = writeln!(out, "- focus: {focus}");
    out.push('\n');
}

/// Builds the identification prompt. Section order is fixed: definition,
/// tasks, facts, knowledge, intent, output format.
pub fn build_identification_prompt(req: &IdentificationRequest) -> Result<String, MetaError> {
    req.validate()?;
    let mut p = String::new();
    p.push_str("You help a data analyst connect findings from their charts into a data story.\n\n");

    p.push_str("# Meta relation definition\n");
    p.push_str(
        "A meta relation links a source fact A to a target fact B using information that is not in \
         the dataset itself, such as the domain knowledge documents or the analyst's narrative intent. \
         It is written as the quadruple (fact_A, fact_B, type, score). `type` is a short free-text \
         sentence naming the connection; `score` in [0, 1] says how important the connection is. \
         Two facts may have several meta relations of different types.\n\n",
    );

    p.push_str("# Tasks\n");
    p.push_str("## Task 1: Complete meta relation quadruples\n");
    p.push_str(
        "Pair each previously selected fact with each new fact and report every well-supported meta \
         relation between them. Give `type` as one sentence, a `summary` of at most three words, and \
         rate the relation with integers from 1 (lowest) to 5 (highest) on: strength (how strong the \
         connection is), fidelity (how closely it follows the knowledge documents), helpfulness (how \
         much it serves the narrative intent), interestingness (how much it would engage an audience) \
         and confidence (how sure you are of the relation).\n\n",
    );
    p.push_str("## Task 2: List the entities for automatic verification\n");
    p.push_str(
        "For each relation list the entities it is about, taken from the two facts: filter values, \
         focus values, dimension or measure names. Entities that appear only in the knowledge \
         documents are not valid; a relation whose entities are not found in its two facts is \
         discarded automatically.\n\n",
    );
    p.push_str("## Task 3: Provide evidence for manual verification\n");
    p.push_str(
        "Quote the sentence from the knowledge documents that the relation comes from, copied \
         exactly, and explain in one sentence how the relation relates to the narrative intent.\n\n",
    );

    p.push_str("# Previously selected facts\n");
    for f in &req.previous_facts {
        write_fact_block(&mut p, f, "previously selected");
    }
    p.push_str("# New facts\n");
    for f in &req.new_facts {
        write_fact_block(&mut p, f, "new");
    }

    p.push_str("# Domain knowledge\n");
    if req.context.knowledge_docs.is_empty() {
        p.push_str("(no documents provided)\n");
    }
    for d in &req.context.knowledge_docs {
        let _ = writeln!(p, "### Document {}: {}\n{}\n", d.doc_id, d.title, d.body.trim());
    }
    p.push('\n');

    p.push_str("# Narrative intent\n");
    let intent = req.context.intent.trim();
    p.push_str(if intent.is_empty() { NO_INTENT_MARKER } else { intent });
    p.push_str("\n\n");

    p.push_str("# Output format\n");
    p.push_str(
        "Answer with a single JSON object and nothing else:\n\
         {\"relations\": [{\"fact_a\": \"<previous fact id>\", \"fact_b\": \"<new fact id>\", \
         \"type\": \"<one sentence>\", \"summary\": \"<at most three words>\", \
         \"scores\": {\"strength\": 1-5, \"fidelity\": 1-5, \"helpfulness\": 1-5, \
         \"interestingness\": 1-5, \"confidence\": 1-5}, \"entities\": [\"<entity>\", ...], \
         \"evidence\": \"<exact quote>\", \"intent_link\": \"<one sentence>\"}]}\n\
         Use only the fact ids listed above. Return {\"relations\": []} if no relation is supported.\n",
    );
    Ok(p)
}

// ---------------------------------------------------------------------------
// Response parsing
// ---------------------------------------------------------------------------

fn relation_list(doc: &Json) -> Option<&Vec<Json>> {
    match doc {
        Json::Array(a) => Some(a),
        Json::Object(o) => o.get("relations").and_then(Json::as_array),
        _ => None,
    }
}

fn score_field(scores: &Json, name: &str) -> Result<u8, String> {
    let v = scores.get(name).ok_or_else(|| format!("missing score `{name}`"))?;
    let n = v.as_f64().ok_or_else(|| format!("score `{name}` is not a number"))?;
    if n.fract() != 0.0 || !(1.0..=5.0).contains(&n) {
        return Err(format!("score `{name}`={n} outside 1..5"));
    }
    Ok(n as u8)
}

fn parse_candidate(item: &Json, req: &IdentificationRequest) -> Result<RawCandidate, String> {
    let text = |key: &str| -> Result<String, String> {
        item.get(key)
            .and_then(Json::as_str)
            .map(str::to_string)
            .ok_or_else(|| format!("missing field `{key}`"))
    };
    let fact_a = FactId(text("fact_a")?);
    let fact_b = FactId(text("fact_b")?);
    let type_description = text("type")?;
    if type_description.trim().is_empty() {
        return Err("empty `type`".into());
    }
    let summary = text("summary")?;
    let scores = item.get("scores").ok_or("missing field `scores`")?;
    let sub_scores = SubScores {
        strength: score_field(scores, "strength")?,
        fidelity: score_field(scores, "fidelity")?,
        helpfulness: score_field(scores, "helpfulness")?,
        interestingness: score_field(scores, "interestingness")?,
        confidence: score_field(scores, "confidence")?,
    };
    let entities = item
        .get("entities")
        .and_then(Json::as_array)
        .ok_or("missing field `entities`")?
        .iter()
        .map(|e| e.as_str().map(str::to_string).ok_or("non-text entity"))
        .collect::<Result<Vec<_>, _>>()?;
    let evidence_quote = text("evidence")?;
    let intent_link = text("intent_link")?;

    for id in [&fact_a, &fact_b] {
        if req.fact(id.as_str()).is_none() {
            return Err(format!("unknown fact id `{id}`"));
        }
    }
    if req.is_previous(&fact_a) == req.is_previous(&fact_b) {
        return Err(format!("`{fact_a}`/`{fact_b}` is not a previous-new pair"));
    }
    let summary = summary.split_whitespace().take(MAX_SUMMARY_WORDS).collect::<Vec<_>>().join(" ");
    Ok(RawCandidate {
        fact_a,
        fact_b,
        type_description: type_description.trim().to_string(),
        summary,
        sub_scores,
        entities,
        evidence_quote,
        intent_link,
    })
}

/// Extracts the relation payload; invalid candidates are dropped one by one
/// and reported.
pub fn parse_identification_response(
    text: &str,
    req: &IdentificationRequest,
) -> Result<IdentificationResponse, MetaError> {
    let doc = extract_json(text, |v| relation_list(v).is_some()).ok_or(MetaError::MalformedResponse)?;
    let mut out = IdentificationResponse::default();
    for (index, item) in relation_list(&doc).into_iter().flatten().enumerate() {
        match parse_candidate(item, req) {
            Ok(c) => out.candidates.push(c),
            Err(reason) => out.dropped.push(DroppedCandidate { index, reason }),
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Verification
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verification {
    Accept,
    Reject(String),
}

fn normalize_entity(s: &str) -> String {
    let lower = collapse_whitespace(&s.to_lowercase());
    lower.replace(" = ", "=").replace(" =", "=").replace("= ", "=")
}

/// Normalized strings an entity may be found in.
pub fn textual_surface(f: &DataFact) -> Vec<String> {
    let mut out = Vec::new();
    for (c, v) in f.subspace.iter() {
        out.push(v.render());
        out.push(format!("{c}={v}"));
    }
    for p in &f.focus {
        out.push(p.value.render());
        out.push(format!("{}={}", p.column, p.value));
    }
    out.extend(f.dimension.iter().cloned());
    for m in &f.measures {
        out.push(m.column.clone());
    }
    out.push(f.description.clone());
    out.iter().map(|s| normalize_entity(s)).collect()
}

/// Accepts iff every entity occurs (case-insensitively, whitespace
/// normalized) in the textual surface of `fa` or `fb`.
pub fn verify_entities(candidate: &RawCandidate, fa: &DataFact, fb: &DataFact) -> Verification {
    if candidate.entities.is_empty() {
        return Verification::Reject("no entities listed".into());
    }
    let surface: Vec<String> = textual_surface(fa).into_iter().chain(textual_surface(fb)).collect();
    for e in &candidate.entities {
        let needle = normalize_entity(e);
        if needle.is_empty() || !surface.iter().any(|s| s.contains(&needle)) {
            return Verification::Reject(format!("entity `{e}` not found in either fact"));
        }
    }
    Verification::Accept
}

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

/// `confidence · Σ wᵢ·sᵢ / (5 · 5 · Σ wᵢ)` over strength, fidelity,
/// helpfulness and interestingness; 1.0 when every rating is 5.
pub fn aggregate_score(s: &SubScores, w: &ScoreWeights) -> Result<f64, MetaError> {
    if let Some(bad) = s.all().into_iter().find(|v| !(1..=5).contains(v)) {
        return Err(MetaError::InvalidScoreRange(bad));
    }
    let weights = w.as_array();
    if weights.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(MetaError::ZeroWeights);
    }
    let wsum: f64 = weights.iter().sum();
    if wsum <= 0.0 {
        return Err(MetaError::ZeroWeights);
    }
    let ratings = [s.strength, s.fidelity, s.helpfulness, s.interestingness];
    let weighted: f64 = weights.iter().zip(ratings).map(|(w, r)| w * r as f64).sum();
    Ok(s.confidence as f64 * weighted / (25.0 * wsum))
}

// ---------------------------------------------------------------------------
// Suggestion pipeline
// ---------------------------------------------------------------------------

/// Identity used to avoid re-suggesting a relation the user already saw.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RelationIdentity {
    pub fact_a: FactId,
    pub fact_b: FactId,
    pub type_key: String,
}

impl RelationIdentity {
    pub fn new(fact_a: &FactId, fact_b: &FactId, type_description: &str) -> Self {
        Self {
            fact_a: fact_a.clone(),
            fact_b: fact_b.clone(),
            type_key: collapse_whitespace(&type_description.to_lowercase()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuggestOptions {
    pub weights: ScoreWeights,
    /// Relation ids are `{id_prefix}-m{n}` in rank order.
    pub id_prefix: String,
    pub excluded: HashSet<RelationIdentity>,
}

impl Default for SuggestOptions {
    fn default() -> Self {
        Self {
            weights: ScoreWeights::default(),
            id_prefix: "rel".into(),
            excluded: HashSet::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SuggestionReport {
    pub relations: Vec<MetaRelation>,
    pub candidates: usize,
    pub dropped: Vec<DroppedCandidate>,
    /// Candidates that failed entity verification, with the reason.
    pub rejected: Vec<(RawCandidate, String)>,
    pub reprompted: bool,
}

const REPROMPT_NOTE: &str = "\n\nYour previous answer could not be parsed. Reply with the JSON object only.\n";

/// Prompt, parse, verify, score and rank. Unverified candidates never reach
/// the returned list.
pub fn suggest_meta_relations(
    req: &IdentificationRequest,
    gateway: &Gateway,
    transcript: &mut Transcript,
    options: &SuggestOptions,
) -> Result<SuggestionReport, MetaError> {
    let prompt = build_identification_prompt(req)?;
    let mut report = SuggestionReport::default();
    let text = gateway.complete(&prompt, transcript)?;
    let parsed = match parse_identification_response(&text, req) {
        Ok(p) => p,
        Err(MetaError::MalformedResponse) => {
            report.reprompted = true;
            let retry = gateway.complete(&format!("{prompt}{REPROMPT_NOTE}"), transcript)?;
            parse_identification_response(&retry, req)?
        }
        Err(e) => return Err(e),
    };
    report.candidates = parsed.candidates.len() + parsed.dropped.len();
    report.dropped = parsed.dropped;

    let mut scored: Vec<(RawCandidate, f64)> = Vec::new();
    let mut seen = HashSet::new();
    for c in parsed.candidates {
        let identity = RelationIdentity::new(&c.fact_a, &c.fact_b, &c.type_description);
        if options.excluded.contains(&identity) || !seen.insert(identity) {
            continue;
        }
        let (Some(fa), Some(fb)) = (req.fact(c.fact_a.as_str()), req.fact(c.fact_b.as_str())) else {
            continue;
        };
        match verify_entities(&c, fa, fb) {
            Verification::Accept => {
                let score = aggregate_score(&c.sub_scores, &options.weights)?;
                scored.push((c, score));
            }
            Verification::Reject(reason) => report.rejected.push((c, reason)),
        }
    }

    scored.sort_by(|(a, sa), (b, sb)| {
        sb.total_cmp(sa)
            .then_with(|| (&a.fact_a, &a.fact_b).cmp(&(&b.fact_a, &b.fact_b)))
            .then_with(|| a.type_description.cmp(&b.type_description))
    });

    let mut per_pair: BTreeMap<(FactId, FactId), usize> = BTreeMap::new();
    for (c, score) in scored {
        let key = if req.is_previous(&c.fact_a) {
            (c.fact_a.clone(), c.fact_b.clone())
        } else {
            (c.fact_b.clone(), c.fact_a.clone())
        };
        let n = per_pair.entry(key).or_default();
        if *n >= MAX_SUGGESTIONS_PER_PAIR {
            continue;
        }
        *n += 1;
        let id = RelationId(format!("{}-m{}", options.id_prefix, report.relations.len() + 1));
        report.relations.push(MetaRelation {
            id,
            evidence_matched: req.context.locate_quote(&c.evidence_quote).is_some(),
            fact_a: c.fact_a,
            fact_b: c.fact_b,
            type_description: c.type_description,
            summary: c.summary,
            sub_scores: Some(c.sub_scores),
            weights: options.weights,
            score,
            entities: c.entities,
            evidence_quote: c.evidence_quote,
            intent_link: c.intent_link,
            status: RelationStatus::Suggested,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::MockBackend;
    use crate::model::{
        Aggregate, FactParameters, FactScores, FactType, KnowledgeDoc, Measure, Subspace, TrendDirection, Value,
    };
    use serde_json::json;

    fn trend(id: &str, model: &str, dir: TrendDirection) -> DataFact {
        let verb = match dir {
            TrendDirection::Increasing => "increased",
            TrendDirection::Decreasing => "decreased",
        };
        DataFact {
            id: FactId(id.into()),
            subspace: Subspace::from_pairs([("model", model)]).unwrap(),
            dimension: Some("year".into()),
            measures: vec![Measure::new("sales", Aggregate::Sum)],
            fact_type: FactType::Trend,
            parameters: FactParameters::Trend {
                direction: dir,
                slope: 1.0,
                unit: "year".into(),
                correlation: 0.9,
                start: Value::from(2011i64),
                end: Value::from(2014i64),
            },
            focus: vec![],
            scores: FactScores {
                importance: 0.9,
                interest_alignment: 0.0,
            },
            description: format!("The sales of {model} {verb} from 2011 to 2014."),
            chart_id: "c".into(),
        }
    }

    fn request() -> IdentificationRequest {
        IdentificationRequest {
            previous_facts: vec![trend("p1", "Toyota Prius", TrendDirection::Decreasing)],
            new_facts: vec![
                trend("n1", "Nissan Leaf", TrendDirection::Increasing),
                trend("n2", "Tesla Model S", TrendDirection::Increasing),
            ],
            context: NarrativeContext::new(
                vec![KnowledgeDoc {
                    doc_id: "k1".into(),
                    title: "Electric cars".into(),
                    body: "Hybrid electric cars such as the Prius compete with plug-in cars like the Leaf.".into(),
                }],
                "why did Prius sales fall",
            ),
        }
    }

    fn candidate(a: &str, b: &str, ty: &str, scores: [u8; 5], entities: &[&str]) -> Json {
        json!({
            "fact_a": a, "fact_b": b, "type": ty, "summary": "Competitors",
            "scores": {"strength": scores[0], "fidelity": scores[1], "helpfulness": scores[2],
                       "interestingness": scores[3], "confidence": scores[4]},
            "entities": entities,
            "evidence": "Hybrid electric cars such as the Prius compete with plug-in cars like the Leaf.",
            "intent_link": "Explains the fall."
        })
    }

    #[test]
    fn prompt_structure() {
        let mut req = request();
        req.previous_facts.push(trend("p2", "Chevrolet Volt", TrendDirection::Increasing));
        req.new_facts.truncate(1);
        let p = build_identification_prompt(&req).unwrap();
        assert_eq!(p.matches("### Fact ").count(), 3);
        assert_eq!(p.matches("\n## Task ").count(), 3);
        assert!(p.contains("automatic verification"));
        let order = ["# Meta relation definition", "# Tasks", "# Previously selected facts", "# New facts",
            "# Domain knowledge", "# Narrative intent", "# Output format"];
        let positions: Vec<usize> = order.iter().map(|h| p.find(h).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        assert!(!p.contains(NO_INTENT_MARKER));
    }

    #[test]
    fn prompt_marks_missing_intent() {
        let mut req = request();
        req.context.intent = "  ".into();
        assert!(build_identification_prompt(&req).unwrap().contains(NO_INTENT_MARKER));
    }

    #[test]
    fn prompt_requires_previous_facts() {
        let mut req = request();
        req.previous_facts.clear();
        assert_eq!(build_identification_prompt(&req).unwrap_err(), MetaError::EmptyFactSet);
    }

    #[test]
    fn parses_two_candidates_with_prose() {
        let body = json!({"relations": [
            candidate("p1", "n1", "Competitors", [4, 2, 5, 3, 3], &["Toyota Prius", "Nissan Leaf"]),
            candidate("p1", "n2", "Competitors", [4, 2, 5, 3, 3], &["Toyota Prius"]),
        ]});
        let text = format!("Here is my answer:\n```json\n{body}\n```\nHope it helps.");
        let r = parse_identification_response(&text, &request()).unwrap();
        assert_eq!(r.candidates.len(), 2);
        assert!(r.dropped.is_empty());
    }

    #[test]
    fn drops_invalid_candidates_individually() {
        let mut missing = candidate("p1", "n1", "x", [1, 1, 1, 1, 1], &["Nissan Leaf"]);
        missing.as_object_mut().unwrap().remove("entities");
        let body = json!({"relations": [
            missing,
            candidate("p1", "zz", "x", [1, 1, 1, 1, 1], &["Nissan Leaf"]),
            candidate("p1", "n1", "x", [6, 1, 1, 1, 1], &["Nissan Leaf"]),
            candidate("n1", "n2", "x", [1, 1, 1, 1, 1], &["Nissan Leaf"]),
            candidate("p1", "n2", "ok", [1, 1, 1, 1, 1], &["Tesla Model S"]),
        ]});
        let r = parse_identification_response(&body.to_string(), &request()).unwrap();
        assert_eq!(r.candidates.len(), 1);
        assert_eq!(r.candidates[0].type_description, "ok");
        let idx: Vec<usize> = r.dropped.iter().map(|d| d.index).collect();
        assert_eq!(idx, [0, 1, 2, 3]);
        assert!(r.dropped[0].reason.contains("entities"));
    }

    #[test]
    fn pure_prose_is_malformed() {
        assert_eq!(
            parse_identification_response("I could not find any relations.", &request()).unwrap_err(),
            MetaError::MalformedResponse
        );
    }

    fn raw(entities: &[&str]) -> RawCandidate {
        RawCandidate {
            fact_a: "p1".into(),
            fact_b: "n1".into(),
            type_description: "t".into(),
            summary: "s".into(),
            sub_scores: SubScores::new(3, 3, 3, 3, 3),
            entities: entities.iter().map(|s| s.to_string()).collect(),
            evidence_quote: String::new(),
            intent_link: String::new(),
        }
    }

    #[test]
    fn verification() {
        let req = request();
        let (fa, fb) = (&req.previous_facts[0], &req.new_facts[0]);
        assert_eq!(verify_entities(&raw(&["Toyota Prius", "Nissan Leaf"]), fa, fb), Verification::Accept);
        assert_eq!(verify_entities(&raw(&["Model = Toyota Prius", "nissan  leaf"]), fa, fb), Verification::Accept);
        assert!(matches!(
            verify_entities(&raw(&["Toyota Prius", "plug-in cars"]), fa, fb),
            Verification::Reject(r) if r.contains("plug-in cars")
        ));
        assert!(matches!(verify_entities(&raw(&[]), fa, fb), Verification::Reject(_)));
    }

    #[test]
    fn score_examples() {
        let w = ScoreWeights::default();
        assert_eq!(aggregate_score(&SubScores::new(5, 5, 5, 5, 5), &w).unwrap(), 1.0);
        assert!((aggregate_score(&SubScores::new(1, 1, 1, 1, 1), &w).unwrap() - 0.04).abs() < 1e-12);
        assert!((aggregate_score(&SubScores::new(4, 2, 5, 3, 3), &w).unwrap() - 0.42).abs() < 1e-12);
        assert_eq!(
            aggregate_score(&SubScores::new(0, 1, 1, 1, 1), &w).unwrap_err(),
            MetaError::InvalidScoreRange(0)
        );
        assert_eq!(
            aggregate_score(&SubScores::new(1, 1, 1, 1, 1), &ScoreWeights::uniform(0.0)).unwrap_err(),
            MetaError::ZeroWeights
        );
    }

    fn run(body: Json) -> SuggestionReport {
        let gw = Gateway::mock(MockBackend::queue([body.to_string()]).unwrap());
        suggest_meta_relations(&request(), &gw, &mut Transcript::new(), &SuggestOptions::default()).unwrap()
    }

    #[test]
    fn suggestions_ranked_by_score() {
        // (4,2,5,3)·3 -> 0.42 ; (4,4,4,4)·5 -> 0.80
        let r = run(json!({"relations": [
            candidate("p1", "n1", "low", [4, 2, 5, 3, 3], &["Toyota Prius", "Nissan Leaf"]),
            candidate("p1", "n2", "high", [4, 4, 4, 4, 5], &["Toyota Prius", "Tesla Model S"]),
        ]}));
        let scores: Vec<f64> = r.relations.iter().map(|m| m.score).collect();
        assert!((scores[0] - 0.80).abs() < 1e-12 && (scores[1] - 0.42).abs() < 1e-12);
        assert_eq!(r.relations[0].type_description, "high");
        assert_eq!(r.relations[0].id.as_str(), "rel-m1");
        assert!(r.relations.iter().all(|m| m.status == RelationStatus::Suggested && m.evidence_matched));
    }

    #[test]
    fn unverifiable_candidate_is_filtered() {
        let r = run(json!({"relations": [
            candidate("p1", "n1", "x", [5, 5, 5, 5, 5], &["hybrid electric cars"]),
        ]}));
        assert!(r.relations.is_empty());
        assert_eq!(r.rejected.len(), 1);
    }

    #[test]
    fn cap_per_pair_and_exclusions() {
        let body = json!({"relations": [
            candidate("p1", "n1", "a", [5, 5, 5, 5, 5], &["Nissan Leaf"]),
            candidate("p1", "n1", "b", [4, 4, 4, 4, 4], &["Nissan Leaf"]),
            candidate("p1", "n1", "c", [3, 3, 3, 3, 3], &["Nissan Leaf"]),
        ]});
        assert_eq!(run(body.clone()).relations.len(), MAX_SUGGESTIONS_PER_PAIR);

        let gw = Gateway::mock(MockBackend::queue([body.to_string()]).unwrap());
        let mut opts = SuggestOptions::default();
        opts.excluded.insert(RelationIdentity::new(&"p1".into(), &"n1".into(), "  A "));
        let r = suggest_meta_relations(&request(), &gw, &mut Transcript::new(), &opts).unwrap();
        let types: Vec<&str> = r.relations.iter().map(|m| m.type_description.as_str()).collect();
        assert_eq!(types, ["b", "c"]);
    }

    #[test]
    fn one_reprompt_on_malformed_output() {
        let good = json!({"relations": [candidate("p1", "n1", "a", [5, 5, 5, 5, 5], &["Nissan Leaf"])]});
        let gw = Gateway::mock(MockBackend::queue(["sorry, no JSON".to_string(), good.to_string()]).unwrap());
        let mut t = Transcript::new();
        let r = suggest_meta_relations(&request(), &gw, &mut t, &SuggestOptions::default()).unwrap();
        assert!(r.reprompted);
        assert_eq!(r.relations.len(), 1);
        assert_eq!(t.len(), 2);

        let gw = Gateway::mock(MockBackend::queue(["nope", "still nope"]).unwrap());
        assert_eq!(
            suggest_meta_relations(&request(), &gw, &mut Transcript::new(), &SuggestOptions::default()).unwrap_err(),
            MetaError::MalformedResponse
        );
    }

    #[test]
    fn gateway_failure_propagates() {
        let gw = Gateway::disabled();
        assert!(matches!(
            suggest_meta_relations(&request(), &gw, &mut Transcript::new(), &SuggestOptions::default()),
            Err(MetaError::Gateway(GatewayError::Unavailable(_)))
        ));
    }
}
