//! One authoring session: dataset, charts, mined facts, relation
//! suggestions and the draft deck, mutated through a small set of
//! operations. Every successful mutation bumps `revision` by one.

use std::collections::HashSet;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use storyweave_core::export::{export_deck, parse_story, ExportError, ExportFormat, SlideDocument, StoryFile};
use storyweave_core::gateway::{Gateway, Transcript};
use storyweave_core::ingest::{load_dataset, parse_chart_spec, resolve_chart, ChartContext, IngestError};
use storyweave_core::meta::{suggest_meta_relations, IdentificationRequest, RelationIdentity, SuggestOptions};
use storyweave_core::miner::{mine_facts, DEFAULT_TOP_K};
use storyweave_core::model::{
    Column, DataFact, Dataset, FactEntry, FactId, KnowledgeDoc, MetaRelation, NarrativeContext, RelationId,
    RelationStatus, ScoreWeights, Slide, StoryDeck, DEFAULT_MAX_FACTS_PER_SLIDE,
};
use storyweave_core::organizer::{organize, OrganizeError, OrganizeInput, Placement, PlacementRoute};
use storyweave_core::relations::relations_with;

pub const SUGGESTIONS_UNAVAILABLE: &str = "meta suggestions unavailable";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SessionError {
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("dataset could not be parsed: {0}")]
    Parse(IngestError),
    #[error("chart rejected: {0}")]
    Chart(IngestError),
    #[error("chart `{0}` already exists in this session")]
    DuplicateChart(String),
    #[error("unknown fact `{0}`")]
    UnknownFact(FactId),
    #[error("fact `{0}` is already in the deck")]
    DuplicateFact(FactId),
    #[error("unknown meta relation `{0}`")]
    UnknownRelation(RelationId),
    #[error("invalid meta relation: {0}")]
    InvalidRelation(String),
    #[error("slide {slide} already holds the maximum of {max} facts")]
    CapacityExceeded { slide: usize, max: usize },
    #[error("unknown target: {0}")]
    UnknownTarget(String),
    #[error("the deck is empty")]
    EmptyDeck,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("language model gateway unavailable: {0}")]
    GatewayUnavailable(String),
    #[error(transparent)]
    Export(#[from] ExportError),
    #[error(transparent)]
    Organize(#[from] OrganizeError),
}

impl SessionError {
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::UnknownSession(_) => "unknown_session",
            SessionError::Parse(_) => "parse_error",
            SessionError::Chart(_) => "chart_error",
            SessionError::DuplicateChart(_) => "duplicate_chart",
            SessionError::UnknownFact(_) => "unknown_fact",
            SessionError::DuplicateFact(_) => "duplicate_fact",
            SessionError::UnknownRelation(_) => "unknown_relation",
            SessionError::InvalidRelation(_) => "invalid_relation",
            SessionError::CapacityExceeded { .. } => "capacity_exceeded",
            SessionError::UnknownTarget(_) => "unknown_target",
            SessionError::EmptyDeck => "empty_deck",
            SessionError::InvalidRequest(_) => "invalid_request",
            SessionError::GatewayUnavailable(_) => "gateway_unavailable",
            SessionError::Export(ExportError::UnknownTheme(_)) => "unknown_theme",
            SessionError::Export(ExportError::UnknownFormat(_)) => "unknown_format",
            SessionError::Export(_) => "export_error",
            SessionError::Organize(_) => "organize_error",
        }
    }

    /// Extra structured detail, e.g. the line of a parse error.
    pub fn detail(&self) -> serde_json::Value {
        match self {
            SessionError::Parse(IngestError::Parse { line, reason }) => {
                serde_json::json!({ "line": line, "reason": reason })
            }
            SessionError::CapacityExceeded { slide, max } => serde_json::json!({ "slide": slide, "max": max }),
            SessionError::UnknownFact(f) | SessionError::DuplicateFact(f) => serde_json::json!({ "fact_id": f }),
            SessionError::UnknownRelation(r) => serde_json::json!({ "relation_id": r }),
            _ => serde_json::Value::Null,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub top_k: usize,
    pub max_facts_per_slide: usize,
    pub weights: ScoreWeights,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            top_k: DEFAULT_TOP_K,
            max_facts_per_slide: DEFAULT_MAX_FACTS_PER_SLIDE,
            weights: ScoreWeights::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartSubmission {
    pub chart_id: String,
    pub facts: Vec<DataFact>,
    pub suggestions: Vec<MetaRelation>,
    pub warnings: Vec<String>,
    /// Set when the gateway failed and only facts are returned.
    pub suggestions_unavailable: bool,
    pub screening: Screening,
    pub revision: u64,
}

/// How many relation candidates the model proposed and where they were lost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Screening {
    pub proposed: usize,
    /// Structurally invalid.
    pub dropped: usize,
    /// Failed entity verification.
    pub unverified: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub fact_id: FactId,
    pub deck: StoryDeck,
    pub placement: Placement,
    pub route: PlacementRoute,
    pub revision: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelationPatch {
    pub type_description: Option<String>,
    pub summary: Option<String>,
    pub status: Option<RelationStatus>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewRelation {
    pub fact_a: FactId,
    pub fact_b: FactId,
    pub type_description: String,
    #[serde(default)]
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LockTarget {
    Title { slide: usize },
    Fact { fact_id: FactId },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum DeckOp {
    /// `slide == slides.len()` moves the fact onto a new last slide.
    Move { fact_id: FactId, slide: usize, position: usize },
    Delete { fact_id: FactId },
    Retitle { slide: usize, title: String },
    Lock {
        target: LockTarget,
        #[serde(default = "yes")]
        locked: bool,
    },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeckUpdate {
    pub deck: StoryDeck,
    pub revision: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub name: String,
    pub columns: Vec<Column>,
    pub row_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LastPlacement {
    pub fact_id: FactId,
    pub placement: Placement,
    pub route: PlacementRoute,
}

/// Read-only view returned by `GET /api/sessions/{id}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub revision: u64,
    pub dataset: DatasetSummary,
    pub intent: String,
    pub knowledge_docs: Vec<KnowledgeDoc>,
    pub config: SessionConfig,
    pub charts: Vec<serde_json::Value>,
    pub facts: Vec<DataFact>,
    pub meta_relations: Vec<MetaRelation>,
    pub deck: StoryDeck,
    pub last_placement: Option<LastPlacement>,
    pub transcript_entries: usize,
    pub backend: String,
}

#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    pub dataset: Dataset,
    pub context: NarrativeContext,
    pub config: SessionConfig,
    pub charts: IndexMap<String, ChartContext>,
    pub facts: IndexMap<FactId, DataFact>,
    pub relations: IndexMap<RelationId, MetaRelation>,
    pub deck: StoryDeck,
    pub transcript: Transcript,
    pub revision: u64,
    pub last_placement: Option<LastPlacement>,
    gateway: Gateway,
    user_relations: usize,
}

impl Session {
    pub fn new(
        id: impl Into<String>,
        dataset: Dataset,
        context: NarrativeContext,
        config: SessionConfig,
        gateway: Gateway,
    ) -> Result<Self, SessionError> {
        if config.max_facts_per_slide == 0 {
            return Err(SessionError::InvalidRequest("max_facts_per_slide must be positive".into()));
        }
        if config.top_k == 0 {
            return Err(SessionError::InvalidRequest("top_k must be positive".into()));
        }
        let mut deck = StoryDeck::new(config.max_facts_per_slide);
        deck.intent = context.intent.clone();
        Ok(Self {
            id: id.into(),
            dataset,
            context,
            config,
            charts: IndexMap::new(),
            facts: IndexMap::new(),
            relations: IndexMap::new(),
            deck,
            transcript: Transcript::new(),
            revision: 0,
            last_placement: None,
            gateway,
            user_relations: 0,
        })
    }

    /// Parses the dataset bytes and starts a session with an empty deck.
    pub fn create(
        id: impl Into<String>,
        data: &[u8],
        format_hint: Option<&str>,
        dataset_name: &str,
        context: NarrativeContext,
        config: SessionConfig,
        gateway: Gateway,
    ) -> Result<Self, SessionError> {
        let dataset = load_dataset(data, format_hint, dataset_name).map_err(SessionError::Parse)?;
        Self::new(id, dataset, context, config, gateway)
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    fn bump(&mut self) -> u64 {
        self.revision += 1;
        self.revision
    }

    fn deck_facts(&self) -> Vec<DataFact> {
        self.deck
            .flattened()
            .iter()
            .filter_map(|id| self.facts.get(id).cloned())
            .collect()
    }

    fn fresh_chart_id(&self) -> String {
        (1..)
            .map(|n| format!("c{n}"))
            .find(|id| !self.charts.contains_key(id))
            .unwrap_or_default()
    }

    /// Resolves and mines a chart; pairs its facts with the deck's facts for
    /// relation suggestions when the deck is non-empty.
    pub fn submit_chart(&mut self, spec_text: &str) -> Result<ChartSubmission, SessionError> {
        let parsed = parse_chart_spec(spec_text, &self.dataset).map_err(SessionError::Chart)?;
        let mut spec = parsed.spec;
        if spec.chart_id.trim().is_empty() {
            spec.chart_id = self.fresh_chart_id();
        }
        if self.charts.contains_key(&spec.chart_id) {
            return Err(SessionError::DuplicateChart(spec.chart_id));
        }
        let ctx = resolve_chart(&self.dataset, &spec).map_err(SessionError::Chart)?;
        let facts: Vec<DataFact> = mine_facts(&ctx, &self.context, self.config.top_k)
            .into_iter()
            .map(|c| c.fact)
            .collect();
        let mut warnings = parsed.warnings;
        let mut suggestions = Vec::new();
        let mut unavailable = false;
        let mut screening = Screening::default();

        let previous = self.deck_facts();
        if !previous.is_empty() && !facts.is_empty() {
            let req = IdentificationRequest {
                previous_facts: previous,
                new_facts: facts.clone(),
                context: self.context.clone(),
            };
            let mut excluded = HashSet::new();
            for m in self.relations.values() {
                excluded.insert(RelationIdentity::new(&m.fact_a, &m.fact_b, &m.type_description));
                excluded.insert(RelationIdentity::new(&m.fact_b, &m.fact_a, &m.type_description));
            }
            let options = SuggestOptions {
                weights: self.config.weights,
                id_prefix: spec.chart_id.clone(),
                excluded,
            };
            match suggest_meta_relations(&req, &self.gateway, &mut self.transcript, &options) {
                Ok(report) => {
                    screening = Screening {
                        proposed: report.candidates,
                        dropped: report.dropped.len(),
                        unverified: report.rejected.len(),
                    };
                    suggestions = report.relations;
                }
                Err(e) => {
                    tracing::warn!(session = %self.id, error = %e, "relation suggestion failed");
                    warnings.push(format!("{SUGGESTIONS_UNAVAILABLE}: {e}"));
                    unavailable = true;
                }
            }
        }

        for f in &facts {
            self.facts.insert(f.id.clone(), f.clone());
        }
        for m in &suggestions {
            self.relations.insert(m.id.clone(), m.clone());
        }
        let chart_id = spec.chart_id.clone();
        self.charts.insert(chart_id.clone(), ctx);
        let revision = self.bump();
        Ok(ChartSubmission {
            chart_id,
            facts,
            suggestions,
            warnings,
            suggestions_unavailable: unavailable,
            screening,
            revision,
        })
    }

    /// Adds a mined fact to the deck, optionally accepting the relation that
    /// links it to a fact already there.
    pub fn select_fact(
        &mut self,
        fact_id: &FactId,
        relation_id: Option<&RelationId>,
    ) -> Result<SelectionOutcome, SessionError> {
        let fact = self
            .facts
            .get(fact_id)
            .cloned()
            .ok_or_else(|| SessionError::UnknownFact(fact_id.clone()))?;
        if self.deck.contains(fact_id) {
            return Err(SessionError::DuplicateFact(fact_id.clone()));
        }
        let mut entry = FactEntry::new(fact_id.clone());
        if let Some(rid) = relation_id {
            let rel = self
                .relations
                .get(rid)
                .ok_or_else(|| SessionError::UnknownRelation(rid.clone()))?;
            let other = rel
                .other(fact_id)
                .ok_or_else(|| SessionError::InvalidRelation(format!("`{rid}` does not involve `{fact_id}`")))?;
            if !self.deck.contains(other) {
                return Err(SessionError::InvalidRelation(format!(
                    "`{rid}` links to `{other}`, which is not in the deck"
                )));
            }
            entry.prev_fact_id = Some(other.clone());
            entry.incoming_meta_relation = Some(rid.clone());
        }

        let others = self.deck_facts();
        let other_refs: Vec<&DataFact> = others.iter().collect();
        let data_rels = relations_with(&fact, &other_refs, &self.dataset);
        let meta_rels: Vec<MetaRelation> = self.relations.values().cloned().collect();
        let outcome = organize(
            OrganizeInput {
                deck: &self.deck,
                facts: &self.facts,
                new_fact: &fact,
                entry,
                data_rels: &data_rels,
                meta_rels: &meta_rels,
                intent: &self.context.intent,
            },
            &self.gateway,
            &mut self.transcript,
        )?;

        if let Some(rid) = relation_id {
            if let Some(rel) = self.relations.get_mut(rid) {
                if matches!(rel.status, RelationStatus::Suggested | RelationStatus::Rejected) {
                    rel.status = RelationStatus::Accepted;
                }
            }
        }
        self.deck = outcome.deck;
        self.deck.intent = self.context.intent.clone();
        self.last_placement = Some(LastPlacement {
            fact_id: fact_id.clone(),
            placement: outcome.placement.clone(),
            route: outcome.route.clone(),
        });
        let revision = self.bump();
        Ok(SelectionOutcome {
            fact_id: fact_id.clone(),
            deck: self.deck.clone(),
            placement: outcome.placement,
            route: outcome.route,
            revision,
        })
    }

    /// User edit of a relation. A new description marks it edited; scores
    /// never change. Rejecting detaches it from deck entries.
    pub fn edit_meta_relation(
        &mut self,
        relation_id: &RelationId,
        patch: RelationPatch,
    ) -> Result<(MetaRelation, u64), SessionError> {
        let rel = self
            .relations
            .get(relation_id)
            .ok_or_else(|| SessionError::UnknownRelation(relation_id.clone()))?;
        let mut rel = rel.clone();
        if patch.type_description.is_none() && patch.summary.is_none() && patch.status.is_none() {
            return Err(SessionError::InvalidRequest("empty relation patch".into()));
        }
        if let Some(t) = &patch.type_description {
            if t.trim().is_empty() {
                return Err(SessionError::InvalidRequest("type_description must not be empty".into()));
            }
        }
        match patch.status {
            None | Some(RelationStatus::Accepted) | Some(RelationStatus::Rejected) => {}
            Some(RelationStatus::Edited) if patch.type_description.is_some() || patch.summary.is_some() => {}
            Some(s) => {
                return Err(SessionError::InvalidRequest(format!("status `{s:?}` cannot be set directly")));
            }
        }
        let edited = patch.type_description.is_some() || patch.summary.is_some();
        if let Some(t) = patch.type_description {
            rel.type_description = t.trim().to_string();
        }
        if let Some(s) = patch.summary {
            rel.summary = s.trim().to_string();
        }
        if edited && rel.status != RelationStatus::UserAdded {
            rel.status = RelationStatus::Edited;
        }
        match patch.status {
            Some(RelationStatus::Rejected) => rel.status = RelationStatus::Rejected,
            Some(RelationStatus::Accepted) if !edited && rel.status != RelationStatus::UserAdded => {
                rel.status = RelationStatus::Accepted
            }
            _ => {}
        }
        if rel.status == RelationStatus::Rejected {
            for s in &mut self.deck.slides {
                for e in &mut s.entries {
                    if e.incoming_meta_relation.as_ref() == Some(relation_id) {
                        e.incoming_meta_relation = None;
                        e.prev_fact_id = None;
                    }
                }
            }
        }
        self.relations.insert(relation_id.clone(), rel.clone());
        let revision = self.bump();
        Ok((rel, revision))
    }

    /// A relation written by the user between two mined facts.
    pub fn add_meta_relation(&mut self, new: NewRelation) -> Result<(MetaRelation, u64), SessionError> {
        for f in [&new.fact_a, &new.fact_b] {
            if !self.facts.contains_key(f) {
                return Err(SessionError::UnknownFact(f.clone()));
            }
        }
        if new.fact_a == new.fact_b {
            return Err(SessionError::InvalidRelation("a relation needs two different facts".into()));
        }
        if new.type_description.trim().is_empty() {
            return Err(SessionError::InvalidRequest("type_description must not be empty".into()));
        }
        self.user_relations += 1;
        let id = (self.user_relations..)
            .map(|n| RelationId(format!("user-m{n}")))
            .find(|id| !self.relations.contains_key(id))
            .unwrap_or_else(|| RelationId("user-m".into()));
        let rel = MetaRelation::user_added(
            id.clone(),
            new.fact_a,
            new.fact_b,
            new.type_description.trim(),
            new.summary.trim(),
        );
        self.relations.insert(id, rel.clone());
        let revision = self.bump();
        Ok((rel, revision))
    }

    pub fn mutate_deck(&mut self, op: DeckOp) -> Result<DeckUpdate, SessionError> {
        let mut deck = self.deck.clone();
        match op {
            DeckOp::Move { fact_id, slide, position } => {
                let (si, pi) = deck
                    .locate(&fact_id)
                    .ok_or_else(|| SessionError::UnknownTarget(format!("fact `{fact_id}` is not in the deck")))?;
                if slide > deck.slides.len() {
                    return Err(SessionError::UnknownTarget(format!("slide {slide}")));
                }
                let mut target = slide;
                let mut entry = deck.slides[si].entries.remove(pi);
                if deck.slides[si].entries.is_empty() {
                    deck.slides.remove(si);
                    if target > si {
                        target -= 1;
                    }
                }
                entry.order_locked = true;
                if target == deck.slides.len() {
                    if position != 0 {
                        return Err(SessionError::UnknownTarget(format!("position {position} on a new slide")));
                    }
                    let title = self.facts.get(&fact_id).map(|f| f.description.clone()).unwrap_or_default();
                    deck.slides.push(Slide {
                        title,
                        title_locked: false,
                        entries: vec![entry],
                    });
                } else {
                    let s = &mut deck.slides[target];
                    if position > s.entries.len() {
                        return Err(SessionError::UnknownTarget(format!("position {position} in slide {slide}")));
                    }
                    if s.entries.len() >= deck.max_facts_per_slide {
                        return Err(SessionError::CapacityExceeded {
                            slide,
                            max: deck.max_facts_per_slide,
                        });
                    }
                    s.entries.insert(position, entry);
                }
            }
            DeckOp::Delete { fact_id } => {
                let (si, pi) = deck
                    .locate(&fact_id)
                    .ok_or_else(|| SessionError::UnknownTarget(format!("fact `{fact_id}` is not in the deck")))?;
                deck.slides[si].entries.remove(pi);
                if deck.slides[si].entries.is_empty() {
                    deck.slides.remove(si);
                }
                for s in &mut deck.slides {
                    for e in &mut s.entries {
                        let dangling = e
                            .incoming_meta_relation
                            .as_ref()
                            .and_then(|rid| self.relations.get(rid))
                            .is_some_and(|m| m.involves(&fact_id));
                        if dangling || e.prev_fact_id.as_ref() == Some(&fact_id) {
                            e.incoming_meta_relation = None;
                            e.prev_fact_id = None;
                        }
                    }
                }
            }
            DeckOp::Retitle { slide, title } => {
                let s = deck
                    .slides
                    .get_mut(slide)
                    .ok_or_else(|| SessionError::UnknownTarget(format!("slide {slide}")))?;
                let title = title.trim();
                if title.is_empty() {
                    return Err(SessionError::InvalidRequest("title must not be empty".into()));
                }
                s.title = title.to_string();
                s.title_locked = true;
            }
            DeckOp::Lock { target, locked } => match target {
                LockTarget::Title { slide } => {
                    deck.slides
                        .get_mut(slide)
                        .ok_or_else(|| SessionError::UnknownTarget(format!("slide {slide}")))?
                        .title_locked = locked;
                }
                LockTarget::Fact { fact_id } => {
                    let (si, pi) = deck
                        .locate(&fact_id)
                        .ok_or_else(|| SessionError::UnknownTarget(format!("fact `{fact_id}` is not in the deck")))?;
                    deck.slides[si].entries[pi].order_locked = locked;
                }
            },
        }
        self.deck = deck;
        let revision = self.bump();
        Ok(DeckUpdate {
            deck: self.deck.clone(),
            revision,
        })
    }

    /// Replaces the intent for later suggestions and placements; existing
    /// scores are left as they are.
    pub fn update_intent(&mut self, text: &str) -> u64 {
        self.context.intent = text.trim().to_string();
        self.deck.intent = self.context.intent.clone();
        self.bump()
    }

    pub fn export(&self, format: ExportFormat, theme: &str) -> Result<SlideDocument, SessionError> {
        if self.deck.is_empty() {
            return Err(SessionError::EmptyDeck);
        }
        let relations: Vec<MetaRelation> = self.relations.values().cloned().collect();
        Ok(export_deck(&self.deck, &self.facts, &self.charts, &relations, theme, format)?)
    }

    /// Structured snapshot, also valid for an empty deck. Unlike an export
    /// it lists every submitted chart, placed or not.
    pub fn snapshot(&self) -> Result<String, SessionError> {
        let relations: Vec<MetaRelation> = self.relations.values().cloned().collect();
        let doc = export_deck(&self.deck, &self.facts, &self.charts, &relations, "", ExportFormat::Structured)?;
        let mut story = parse_story(&doc.content)?;
        story.charts = self.charts.values().map(|c| c.spec.clone()).collect();
        let mut text = serde_json::to_string_pretty(&story)
            .map_err(|e| SessionError::InvalidRequest(format!("snapshot serialization: {e}")))?;
        text.push('\n');
        Ok(text)
    }

    /// Rebuilds a session from a snapshot and the original dataset. Facts
    /// that were mined but not placed are restored by re-running the charts.
    pub fn restore(
        id: impl Into<String>,
        dataset: Dataset,
        context: NarrativeContext,
        config: SessionConfig,
        gateway: Gateway,
        snapshot: &str,
    ) -> Result<Self, SessionError> {
        let story: StoryFile = parse_story(snapshot)?;
        let mut s = Self::new(id, dataset, context, config, gateway)?;
        for spec in &story.charts {
            let ctx = resolve_chart(&s.dataset, spec).map_err(SessionError::Chart)?;
            for c in mine_facts(&ctx, &s.context, s.config.top_k) {
                s.facts.insert(c.fact.id.clone(), c.fact);
            }
            s.charts.insert(spec.chart_id.clone(), ctx);
        }
        for f in story.facts {
            s.facts.insert(f.id.clone(), f);
        }
        for m in story.meta_relations {
            s.relations.insert(m.id.clone(), m);
        }
        s.user_relations = s.relations.keys().filter(|r| r.as_str().starts_with("user-m")).count();
        s.deck = story.deck;
        s.check().map_err(|e| SessionError::InvalidRequest(format!("snapshot deck is invalid: {e}")))?;
        Ok(s)
    }

    /// Deck invariants including relation references.
    pub fn check(&self) -> Result<(), storyweave_core::model::DeckViolation> {
        self.deck.check_invariants(|rid| self.relations.get(rid))?;
        for id in self.deck.flattened() {
            if !self.facts.contains_key(&id) {
                return Err(storyweave_core::model::DeckViolation::UnresolvedFact(id));
            }
        }
        Ok(())
    }

    pub fn view(&self) -> SessionView {
        SessionView {
            session_id: self.id.clone(),
            revision: self.revision,
            dataset: DatasetSummary {
                name: self.dataset.name.clone(),
                columns: self.dataset.columns.clone(),
                row_count: self.dataset.rows.len(),
            },
            intent: self.context.intent.clone(),
            knowledge_docs: self.context.knowledge_docs.clone(),
            config: self.config,
            charts: self.charts.values().map(|c| c.spec.to_json()).collect(),
            facts: self.facts.values().cloned().collect(),
            meta_relations: self.relations.values().cloned().collect(),
            deck: self.deck.clone(),
            last_placement: self.last_placement.clone(),
            transcript_entries: self.transcript.len(),
            backend: self.gateway.backend_name(),
        }
    }
}
