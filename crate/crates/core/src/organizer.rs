//! Story organization: placing a newly selected fact into the slide deck.
//!
//! The model proposes one placement with a four-part rationale. Placements
//! are insertion-only: facts already in the deck keep their order, locked
//! titles keep their text and adjacent order-locked entries stay adjacent.
//! Anything the model gets wrong routes to [`fallback_placement`].

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

use crate::gateway::{Gateway, Transcript};
use crate::model::{
    pair_key, DataFact, DataRelation, FactEntry, FactId, FactLookup, MetaRelation, RelationStatus, Slide,
    StoryDeck,
};
use crate::payload::extract_json;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OrganizeError {
    #[error("fact `{0}` is already in the deck")]
    DuplicateFact(FactId),
    #[error("malformed placement: {0}")]
    MalformedResponse(String),
    #[error("placement out of range: {0}")]
    OutOfRange(String),
    #[error("slide {slide} already holds the maximum of {max} facts")]
    CapacityExceeded { slide: usize, max: usize },
    #[error("placement breaks a lock: {0}")]
    LockViolation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementTarget {
    /// Insert into an existing slide.
    Slide(usize),
    /// Create a slide at this index.
    NewSlide(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rationale {
    pub topic_fit: String,
    pub relation_to_previous: String,
    pub relation_to_next: String,
    pub intent_fit: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub target: PlacementTarget,
    pub position_in_slide: usize,
    pub slide_title: String,
    pub rationale: Rationale,
}

impl Placement {
    /// Payload form, as requested from the model.
    pub fn to_json(&self) -> Json {
        let target = match self.target {
            PlacementTarget::Slide(i) => serde_json::json!({ "slide": i }),
            PlacementTarget::NewSlide(i) => serde_json::json!({ "new_slide": i }),
        };
        serde_json::json!({
            "target": target,
            "position": self.position_in_slide,
            "title": self.slide_title,
            "rationale": {
                "topic_fit": self.rationale.topic_fit,
                "relation_to_previous": self.rationale.relation_to_previous,
                "relation_to_next": self.rationale.relation_to_next,
                "intent_fit": self.rationale.intent_fit,
            }
        })
    }
}

pub const CAPACITY_CONSTRAINT: &str = "Maximum number of facts per slide";
pub const ALTERATION_CONSTRAINT: &str = "Minimal alteration of the existing sequence";
pub const FIRST_SLIDE_INSTRUCTION: &str =
    "The deck is empty. Create the first slide with target {\"new_slide\": 0} and position 0.";

fn fact_line(out: &mut String, f: Option<&DataFact>, id: &FactId) {
    match f {
        Some(f) => {
            let _ = write!(out, "[{id}] ({}) {}", f.fact_type, f.description);
        }
        None => {
            let _ = write!(out, "[{id}]");
        }
    }
}

/// Builds the placement prompt for `new_fact`.
pub fn build_organization_prompt<L: FactLookup + ?Sized>(
    deck: &StoryDeck,
    facts: &L,
    new_fact: &DataFact,
    data_rels: &[DataRelation],
    meta_rels: &[MetaRelation],
    intent: &str,
) -> Result<String, OrganizeError> {
    if deck.contains(&new_fact.id) {
        return Err(OrganizeError::DuplicateFact(new_fact.id.clone()));
    }
    let mut p = String::new();
    p.push_str(
        "You organize a data story as a slide deck. Insert the new fact at the most suitable \
         position and explain the decision.\n\n",
    );

    p.push_str("# Current deck\n");
    if deck.is_empty() {
        p.push_str(FIRST_SLIDE_INSTRUCTION);
        p.push('\n');
    }
    for (si, s) in deck.slides.iter().enumerate() {
        let lock = if s.title_locked { " [title locked by user]" } else { "" };
        let _ = writeln!(p, "## Slide {si}: \"{}\"{lock}", s.title);
        for (pi, e) in s.entries.iter().enumerate() {
            let _ = write!(p, "{pi}. ");
            fact_line(&mut p, facts.fact(&e.fact_id), &e.fact_id);
            if e.order_locked {
                p.push_str(" [order locked by user]");
            }
            p.push('\n');
        }
    }
    p.push('\n');

    p.push_str("# New fact\n");
    fact_line(&mut p, Some(new_fact), &new_fact.id);
    p.push_str("\n\n");

    p.push_str("# Relations between the new fact and facts in the deck\n");
    let metas: Vec<&MetaRelation> = meta_rels
        .iter()
        .filter(|m| m.involves(&new_fact.id) && m.status != RelationStatus::Rejected)
        .filter(|m| m.other(&new_fact.id).is_some_and(|o| deck.contains(o)))
        .collect();
    let datas: Vec<&DataRelation> = data_rels
        .iter()
        .filter(|r| r.fact_a == new_fact.id || r.fact_b == new_fact.id)
        .collect();
    if metas.is_empty() && datas.is_empty() {
        p.push_str("(none)\n");
    }
    for m in metas {
        let _ = writeln!(
            p,
            "- meta: [{}] -> [{}]: {} (score {:.2})",
            m.fact_a, m.fact_b, m.type_description, m.score
        );
    }
    for r in datas {
        let _ = writeln!(p, "- data: [{}] -> [{}]: {:?} {:.2}", r.fact_a, r.fact_b, r.kind, r.score);
    }
    p.push('\n');

    p.push_str("# Narrative intent\n");
    let intent = intent.trim();
    p.push_str(if intent.is_empty() { "(no narrative intent provided)" } else { intent });
    p.push_str("\n\n");

    p.push_str("# Design constraints\n");
    let _ = writeln!(
        p,
        "1. {CAPACITY_CONSTRAINT}: {}. Never put more facts than this on a slide.",
        deck.max_facts_per_slide
    );
    let _ = writeln!(
        p,
        "2. {ALTERATION_CONSTRAINT}: only insert the new fact. Do not move, drop or reorder existing \
         facts, do not separate facts marked as order locked, and keep locked titles."
    );
    p.push('\n');

    p.push_str("# Tasks\n");
    p.push_str(
        "1. Choose an existing slide or a new slide, the position inside it, and a title for the \
         slide that summarizes its content.\n\
         2. Explain the decision: how the fact fits the slide topic, how it relates to the fact \
         before it, how it relates to the fact after it, and how it serves the narrative intent.\n\n",
    );

    p.push_str("# Output format\n");
    p.push_str(
        "Answer with a single JSON object and nothing else:\n\
         {\"target\": {\"slide\": <index>} or {\"new_slide\": <index>}, \"position\": <index in slide>, \
         \"title\": \"<slide title>\", \"rationale\": {\"topic_fit\": \"...\", \
         \"relation_to_previous\": \"...\", \"relation_to_next\": \"...\", \"intent_fit\": \"...\"}}\n",
    );
    Ok(p)
}

fn malformed(m: impl Into<String>) -> OrganizeError {
    OrganizeError::MalformedResponse(m.into())
}

/// Extracts and sanity-checks a placement against `deck`.
pub fn parse_placement(text: &str, deck: &StoryDeck) -> Result<Placement, OrganizeError> {
    let doc = extract_json(text, |v| v.get("target").is_some()).ok_or_else(|| malformed("no placement payload"))?;
    let target = doc.get("target").ok_or_else(|| malformed("missing target"))?;
    let index = |key: &str| target.get(key).and_then(Json::as_u64).map(|v| v as usize);
    let target = match (index("slide"), index("new_slide")) {
        (Some(i), None) => PlacementTarget::Slide(i),
        (None, Some(i)) => PlacementTarget::NewSlide(i),
        _ => return Err(malformed("target needs exactly one of `slide` or `new_slide`")),
    };
    let position = doc
        .get("position")
        .and_then(Json::as_u64)
        .ok_or_else(|| malformed("missing position"))? as usize;
    let title = doc
        .get("title")
        .and_then(Json::as_str)
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .ok_or_else(|| malformed("missing title"))?
        .to_string();
    let r = doc
        .get("rationale")
        .and_then(Json::as_object)
        .ok_or_else(|| malformed("missing rationale"))?;
    let entry = |k: &str| {
        r.get(k)
            .and_then(Json::as_str)
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .ok_or_else(|| malformed(format!("rationale lacks `{k}`")))
    };
    let rationale = Rationale {
        topic_fit: entry("topic_fit")?,
        relation_to_previous: entry("relation_to_previous")?,
        relation_to_next: entry("relation_to_next")?,
        intent_fit: entry("intent_fit")?,
    };

    match target {
        PlacementTarget::Slide(i) => {
            let slide = deck
                .slides
                .get(i)
                .ok_or_else(|| OrganizeError::OutOfRange(format!("slide {i} of {}", deck.slides.len())))?;
            if position > slide.entries.len() {
                return Err(OrganizeError::OutOfRange(format!(
                    "position {position} in slide {i} of {} entries",
                    slide.entries.len()
                )));
            }
        }
        PlacementTarget::NewSlide(i) => {
            if i > deck.slides.len() {
                return Err(OrganizeError::OutOfRange(format!(
                    "new slide {i} of {}",
                    deck.slides.len()
                )));
            }
            if position != 0 {
                return Err(OrganizeError::OutOfRange(format!("position {position} in a new slide")));
            }
        }
    }
    Ok(Placement {
        target,
        position_in_slide: position,
        slide_title: title,
        rationale,
    })
}

/// Inserts `entry` as `placement` says; nothing else in the deck moves.
pub fn apply_placement(deck: &StoryDeck, entry: FactEntry, placement: &Placement) -> Result<StoryDeck, OrganizeError> {
    if deck.contains(&entry.fact_id) {
        return Err(OrganizeError::DuplicateFact(entry.fact_id));
    }
    let mut out = deck.clone();
    match placement.target {
        PlacementTarget::Slide(i) => {
            let max = deck.max_facts_per_slide;
            let slide = out
                .slides
                .get_mut(i)
                .ok_or_else(|| OrganizeError::OutOfRange(format!("slide {i}")))?;
            let pos = placement.position_in_slide;
            if pos > slide.entries.len() {
                return Err(OrganizeError::OutOfRange(format!("position {pos} in slide {i}")));
            }
            if slide.entries.len() >= max {
                return Err(OrganizeError::CapacityExceeded { slide: i, max });
            }
            if pos > 0 && pos < slide.entries.len() && slide.entries[pos - 1].order_locked && slide.entries[pos].order_locked {
                return Err(OrganizeError::LockViolation(format!(
                    "would separate locked entries `{}` and `{}`",
                    slide.entries[pos - 1].fact_id,
                    slide.entries[pos].fact_id
                )));
            }
            slide.entries.insert(pos, entry);
            if !slide.title_locked {
                slide.title = placement.slide_title.clone();
            }
        }
        PlacementTarget::NewSlide(i) => {
            if i > out.slides.len() {
                return Err(OrganizeError::OutOfRange(format!("new slide {i}")));
            }
            if placement.position_in_slide != 0 {
                return Err(OrganizeError::OutOfRange("non-zero position in a new slide".into()));
            }
            out.slides.insert(
                i,
                Slide {
                    title: placement.slide_title.clone(),
                    title_locked: false,
                    entries: vec![entry],
                },
            );
        }
    }
    Ok(out)
}

fn endorsed_or_suggested(m: &MetaRelation) -> bool {
    m.status != RelationStatus::Rejected
}

/// Best (meta, data) relation scores between `fact` and a slide's members.
fn slide_affinity(slide: &Slide, fact: &FactId, data_rels: &[DataRelation], meta_rels: &[MetaRelation]) -> (f64, f64) {
    let members: BTreeSet<&FactId> = slide.fact_ids().collect();
    let meta = meta_rels
        .iter()
        .filter(|m| endorsed_or_suggested(m))
        .filter(|m| m.other(fact).is_some_and(|o| members.contains(o)))
        .map(|m| m.score)
        .fold(0.0, f64::max);
    let data = data_rels
        .iter()
        .filter(|r| r.kind.is_overlap())
        .filter(|r| {
            (r.fact_a == *fact && members.contains(&r.fact_b)) || (r.fact_b == *fact && members.contains(&r.fact_a))
        })
        .map(|r| r.score)
        .fold(0.0, f64::max);
    (meta, data)
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Title from the filters shared by every fact, else from a shared measure.
pub fn synthesize_title(facts: &[&DataFact]) -> Option<String> {
    let first = facts.first()?;
    let shared: Vec<String> = first
        .subspace
        .iter()
        .filter(|(c, v)| facts.iter().all(|f| f.subspace.get(c) == Some(*v)))
        .map(|(_, v)| v.render())
        .collect();
    if !shared.is_empty() {
        return Some(shared.join(", "));
    }
    let m = first.measures.first()?;
    if facts.iter().all(|f| f.measures.first() == Some(m)) {
        return Some(capitalize(&format!("{} {}", m.aggregate.adjective(), m.column)));
    }
    None
}

/// Deterministic placement: next to the facts the new fact relates to most
/// strongly (meta score first, data overlap breaking ties).
pub fn fallback_placement<L: FactLookup + ?Sized>(
    deck: &StoryDeck,
    facts: &L,
    new_fact: &DataFact,
    data_rels: &[DataRelation],
    meta_rels: &[MetaRelation],
) -> Placement {
    let mut best: Option<(usize, (f64, f64))> = None;
    for (i, s) in deck.slides.iter().enumerate() {
        let a = slide_affinity(s, &new_fact.id, data_rels, meta_rels);
        if a == (0.0, 0.0) {
            continue;
        }
        let better = match best {
            None => true,
            Some((_, b)) => a.0 > b.0 || (a.0 == b.0 && a.1 > b.1),
        };
        if better {
            best = Some((i, a));
        }
    }

    let own_title = || {
        synthesize_title(&[new_fact]).unwrap_or_else(|| format!("Slide {}", deck.slides.len() + 1))
    };
    let Some((si, (meta, data))) = best else {
        return Placement {
            target: PlacementTarget::NewSlide(deck.slides.len()),
            position_in_slide: 0,
            slide_title: own_title(),
            rationale: Rationale {
                topic_fit: "rule: no relation to any slide, so the fact opens a new slide".into(),
                relation_to_previous: "rule: placed after the last slide".into(),
                relation_to_next: "rule: no following fact".into(),
                intent_fit: "rule: narrative intent not evaluated by the fallback".into(),
            },
        };
    };

    let slide = &deck.slides[si];
    let basis = if meta > 0.0 {
        format!("rule: strongest meta relation (score {meta:.2}) links it to slide {si}")
    } else {
        format!("rule: strongest data overlap (score {data:.2}) links it to slide {si}")
    };
    if slide.entries.len() >= deck.max_facts_per_slide {
        return Placement {
            target: PlacementTarget::NewSlide(si + 1),
            position_in_slide: 0,
            slide_title: own_title(),
            rationale: Rationale {
                topic_fit: format!("{basis}; that slide is full, so a new slide follows it"),
                relation_to_previous: format!("rule: placed right after slide {si}"),
                relation_to_next: "rule: first fact of its slide".into(),
                intent_fit: "rule: narrative intent not evaluated by the fallback".into(),
            },
        };
    }

    let mut members: Vec<&DataFact> = slide.fact_ids().filter_map(|id| facts.fact(id)).collect();
    members.push(new_fact);
    let title = if slide.title_locked {
        slide.title.clone()
    } else {
        synthesize_title(&members)
            .filter(|_| members.len() > 1)
            .or_else(|| (!slide.title.is_empty()).then(|| slide.title.clone()))
            .unwrap_or_else(own_title)
    };
    let last = slide.entries.last().map(|e| e.fact_id.to_string()).unwrap_or_default();
    Placement {
        target: PlacementTarget::Slide(si),
        position_in_slide: slide.entries.len(),
        slide_title: title,
        rationale: Rationale {
            topic_fit: basis,
            relation_to_previous: format!("rule: appended after [{last}] at the end of the slide"),
            relation_to_next: "rule: no following fact in the slide".into(),
            intent_fit: "rule: narrative intent not evaluated by the fallback".into(),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "route", rename_all = "snake_case")]
pub enum PlacementRoute {
    Llm,
    Fallback { reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrganizeOutcome {
    pub deck: StoryDeck,
    pub placement: Placement,
    pub route: PlacementRoute,
}

pub struct OrganizeInput<'a, L: FactLookup + ?Sized> {
    pub deck: &'a StoryDeck,
    pub facts: &'a L,
    pub new_fact: &'a DataFact,
    pub entry: FactEntry,
    pub data_rels: &'a [DataRelation],
    pub meta_rels: &'a [MetaRelation],
    pub intent: &'a str,
}

const REPROMPT_NOTE: &str = "\n\nYour previous answer could not be parsed. Reply with the JSON object only.\n";

/// Model placement with one re-prompt on unparsable output; any failure,
/// including a placement that breaks capacity or locks, falls back.
pub fn organize<L: FactLookup + ?Sized>(
    input: OrganizeInput<'_, L>,
    gateway: &Gateway,
    transcript: &mut Transcript,
) -> Result<OrganizeOutcome, OrganizeError> {
    let OrganizeInput {
        deck,
        facts,
        new_fact,
        entry,
        data_rels,
        meta_rels,
        intent,
    } = input;
    let prompt = build_organization_prompt(deck, facts, new_fact, data_rels, meta_rels, intent)?;

    let attempt = (|| -> Result<(StoryDeck, Placement), String> {
        let text = gateway.complete(&prompt, transcript).map_err(|e| e.to_string())?;
        let placement = match parse_placement(&text, deck) {
            Err(OrganizeError::MalformedResponse(_)) => {
                let retry = gateway
                    .complete(&format!("{prompt}{REPROMPT_NOTE}"), transcript)
                    .map_err(|e| e.to_string())?;
                parse_placement(&retry, deck).map_err(|e| e.to_string())?
            }
            other => other.map_err(|e| e.to_string())?,
        };
        let deck = apply_placement(deck, entry.clone(), &placement).map_err(|e| e.to_string())?;
        Ok((deck, placement))
    })();

    match attempt {
        Ok((deck, placement)) => Ok(OrganizeOutcome {
            deck,
            placement,
            route: PlacementRoute::Llm,
        }),
        Err(reason) => {
            tracing::warn!(fact = %new_fact.id, %reason, "model placement rejected, using fallback");
            let placement = fallback_placement(deck, facts, new_fact, data_rels, meta_rels);
            let deck = apply_placement(deck, entry, &placement)?;
            Ok(OrganizeOutcome {
                deck,
                placement,
                route: PlacementRoute::Fallback { reason },
            })
        }
    }
}

/// Keys of filters shared by two facts; used by callers building titles.
pub fn shared_filters(a: &DataFact, b: &DataFact) -> BTreeSet<String> {
    a.subspace
        .iter()
        .filter(|(c, v)| b.subspace.get(c) == Some(*v))
        .map(|(c, v)| pair_key(c, v))
        .collect()
}
