use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use storyweave_core::export::{parse_story, ExportFormat, MARKDOWN_RELATION_MARKER};
use storyweave_core::gateway::{mock_load, Gateway};
use storyweave_core::ingest::load_dataset;
use storyweave_core::model::{FactId, KnowledgeDoc, NarrativeContext, RelationId, RelationStatus};
use storyweave_core::organizer::PlacementRoute;
use storyweave_service::session::{DeckOp, LockTarget, NewRelation, RelationPatch};
use storyweave_service::{Session, SessionConfig, SessionError};

const CARS: &str = include_str!("../../cli/tests/fixtures/fig1/cars.csv");
const PRIUS: &str = include_str!("../../cli/tests/fixtures/fig1/prius.json");
const PLUGIN: &str = include_str!("../../cli/tests/fixtures/fig1/plugin.json");
const MOCK: &str = include_str!("../../cli/tests/fixtures/fig1/mock.json");
const KNOWLEDGE: &str = include_str!("../../cli/tests/fixtures/fig1/knowledge.md");

fn context() -> NarrativeContext {
    NarrativeContext::new(
        vec![KnowledgeDoc {
            doc_id: "k1".into(),
            title: "Electric car market".into(),
            body: KNOWLEDGE.into(),
        }],
        "Show how plug-in cars replace hybrids",
    )
}

fn session(gateway: Gateway) -> Session {
    Session::create("t", CARS.as_bytes(), Some("csv"), "cars", context(), SessionConfig::default(), gateway).unwrap()
}

fn mocked() -> Session {
    session(Gateway::mock(mock_load(MOCK).unwrap()))
}

fn fid(s: &str) -> FactId {
    FactId(s.into())
}

#[test]
fn scripted_flow_builds_one_slide_with_relation() {
    let mut s = mocked();
    let first = s.submit_chart(PRIUS).unwrap();
    assert!(first.suggestions.is_empty(), "no suggestions while the deck is empty");
    assert_eq!(first.revision, 1);
    let placed = s.select_fact(&fid("prius-f1"), None).unwrap();
    assert_eq!(placed.route, PlacementRoute::Llm);

    let second = s.submit_chart(PLUGIN).unwrap();
    assert_eq!(second.screening.proposed, 2);
    assert_eq!(second.screening.unverified, 1);
    assert_eq!(second.suggestions.len(), 1);
    let rel = second.suggestions[0].clone();
    assert_eq!(rel.status, RelationStatus::Suggested);

    let out = s.select_fact(&fid("plugin-f1"), Some(&rel.id)).unwrap();
    assert_eq!(out.route, PlacementRoute::Llm);
    assert_eq!(s.relations[&rel.id].status, RelationStatus::Accepted);
    assert_eq!(s.deck.slides.len(), 1);
    assert_eq!(s.deck.flattened(), vec![fid("prius-f1"), fid("plugin-f1")]);
    assert_eq!(out.revision, 4);
    s.check().unwrap();

    let md = s.export(ExportFormat::MarkdownSlides, "").unwrap();
    assert!(md.content.contains(MARKDOWN_RELATION_MARKER));
}

#[test]
fn offline_session_still_mines_and_places() {
    let mut s = session(Gateway::disabled());
    s.submit_chart(PRIUS).unwrap();
    s.select_fact(&fid("prius-f1"), None).unwrap();
    let sub = s.submit_chart(PLUGIN).unwrap();
    assert!(sub.suggestions_unavailable);
    assert!(sub.warnings.iter().any(|w| w.starts_with("meta suggestions unavailable")));
    let out = s.select_fact(&fid("plugin-f1"), None).unwrap();
    assert!(matches!(out.route, PlacementRoute::Fallback { .. }));
    s.check().unwrap();
}

#[test]
fn errors_leave_revision_untouched() {
    let mut s = session(Gateway::disabled());
    s.submit_chart(PRIUS).unwrap();
    let rev = s.revision;
    assert!(matches!(s.submit_chart(PRIUS), Err(SessionError::DuplicateChart(_))));
    assert!(matches!(s.select_fact(&fid("nope"), None), Err(SessionError::UnknownFact(_))));
    s.select_fact(&fid("prius-f1"), None).unwrap();
    assert!(matches!(s.select_fact(&fid("prius-f1"), None), Err(SessionError::DuplicateFact(_))));
    assert!(matches!(
        s.select_fact(&fid("prius-f2"), Some(&RelationId("missing".into()))),
        Err(SessionError::UnknownRelation(_))
    ));
    assert!(matches!(s.submit_chart("{not json"), Err(SessionError::Chart(_))));
    assert_eq!(s.revision, rev + 1);
}

#[test]
fn missing_chart_id_is_assigned() {
    let mut s = session(Gateway::disabled());
    let spec = r#"{"mark":"bar","encoding":{"x":{"field":"model"},"y":{"field":"sales","aggregate":"sum"}}}"#;
    assert_eq!(s.submit_chart(spec).unwrap().chart_id, "c1");
    assert_eq!(s.submit_chart(spec).unwrap().chart_id, "c2");
}

#[test]
fn edits_mark_relation_and_survive_later_suggestions() {
    let mut s = mocked();
    s.submit_chart(PRIUS).unwrap();
    s.select_fact(&fid("prius-f1"), None).unwrap();
    let rel = s.submit_chart(PLUGIN).unwrap().suggestions[0].clone();
    let (edited, _) = s
        .edit_meta_relation(
            &rel.id,
            RelationPatch {
                type_description: Some("Plug-ins take hybrid buyers".into()),
                ..Default::default()
            },
        )
        .unwrap();
    assert_eq!(edited.status, RelationStatus::Edited);
    assert_eq!(edited.score, rel.score);

    s.select_fact(&fid("plugin-f1"), Some(&rel.id)).unwrap();
    assert_eq!(s.relations[&rel.id].status, RelationStatus::Edited);
    assert_eq!(s.relations[&rel.id].type_description, "Plug-ins take hybrid buyers");

    let (rejected, _) = s
        .edit_meta_relation(
            &rel.id,
            RelationPatch {
                status: Some(RelationStatus::Rejected),
                ..Default::default()
            },
        )
        .unwrap();
    assert_eq!(rejected.status, RelationStatus::Rejected);
    assert!(s.deck.entry(&fid("plugin-f1")).unwrap().incoming_meta_relation.is_none());
    let md = s.export(ExportFormat::MarkdownSlides, "").unwrap();
    assert!(!md.content.contains(MARKDOWN_RELATION_MARKER));
    s.check().unwrap();
}

#[test]
fn user_relation_can_link_placed_facts() {
    let mut s = session(Gateway::disabled());
    s.submit_chart(PRIUS).unwrap();
    s.submit_chart(PLUGIN).unwrap();
    s.select_fact(&fid("prius-f1"), None).unwrap();
    let (rel, _) = s
        .add_meta_relation(NewRelation {
            fact_a: fid("prius-f1"),
            fact_b: fid("plugin-f1"),
            type_description: "Competitors".into(),
            summary: String::new(),
        })
        .unwrap();
    assert_eq!(rel.id.as_str(), "user-m1");
    assert_eq!(rel.score, 1.0);
    s.select_fact(&fid("plugin-f1"), Some(&rel.id)).unwrap();
    assert_eq!(s.relations[&rel.id].status, RelationStatus::UserAdded);
    assert!(s
        .add_meta_relation(NewRelation {
            fact_a: fid("prius-f1"),
            fact_b: fid("prius-f1"),
            type_description: "self".into(),
            summary: String::new(),
        })
        .is_err());
}

#[test]
fn deck_ops_respect_capacity_and_locks() {
    let mut s = Session::create(
        "t",
        CARS.as_bytes(),
        Some("csv"),
        "cars",
        context(),
        SessionConfig {
            max_facts_per_slide: 1,
            ..SessionConfig::default()
        },
        Gateway::disabled(),
    )
    .unwrap();
    s.submit_chart(PRIUS).unwrap();
    s.select_fact(&fid("prius-f1"), None).unwrap();
    s.select_fact(&fid("prius-f2"), None).unwrap();
    assert_eq!(s.deck.slides.len(), 2);
    let err = s
        .mutate_deck(DeckOp::Move {
            fact_id: fid("prius-f2"),
            slide: 0,
            position: 0,
        })
        .unwrap_err();
    assert!(matches!(err, SessionError::CapacityExceeded { .. }));

    s.mutate_deck(DeckOp::Retitle {
        slide: 0,
        title: "Mine".into(),
    })
    .unwrap();
    assert!(s.deck.slides[0].title_locked);
    s.mutate_deck(DeckOp::Lock {
        target: LockTarget::Title { slide: 0 },
        locked: false,
    })
    .unwrap();
    assert!(!s.deck.slides[0].title_locked);
    s.mutate_deck(DeckOp::Delete { fact_id: fid("prius-f1") }).unwrap();
    assert_eq!(s.deck.slides.len(), 1);
    assert!(matches!(
        s.mutate_deck(DeckOp::Retitle {
            slide: 5,
            title: "x".into()
        }),
        Err(SessionError::UnknownTarget(_))
    ));
}

#[test]
fn move_to_new_last_slide_locks_order() {
    let mut s = session(Gateway::disabled());
    s.submit_chart(PLUGIN).unwrap();
    for f in ["plugin-f1", "plugin-f2", "plugin-f3"] {
        s.select_fact(&fid(f), None).unwrap();
    }
    let before = s.deck.slides.len();
    s.mutate_deck(DeckOp::Move {
        fact_id: fid("plugin-f1"),
        slide: before,
        position: 0,
    })
    .unwrap();
    let (si, _) = s.deck.locate(&fid("plugin-f1")).unwrap();
    assert_eq!(si, s.deck.slides.len() - 1);
    assert!(s.deck.entry(&fid("plugin-f1")).unwrap().order_locked);
    s.check().unwrap();
}

#[test]
fn snapshot_restores_deck_and_unplaced_facts() {
    let mut s = mocked();
    s.submit_chart(PRIUS).unwrap();
    s.select_fact(&fid("prius-f1"), None).unwrap();
    let rel = s.submit_chart(PLUGIN).unwrap().suggestions[0].clone();
    s.select_fact(&fid("plugin-f1"), Some(&rel.id)).unwrap();
    let snap = s.snapshot().unwrap();
    assert_eq!(parse_story(&snap).unwrap().deck, s.deck);

    let ds = load_dataset(CARS.as_bytes(), Some("csv"), "cars").unwrap();
    let mut r = Session::restore("r", ds, context(), SessionConfig::default(), Gateway::disabled(), &snap).unwrap();
    assert_eq!(r.deck, s.deck);
    assert_eq!(r.relations[&rel.id].status, RelationStatus::Accepted);
    assert!(r.facts.contains_key(&fid("plugin-f2")));
    r.select_fact(&fid("plugin-f2"), None).unwrap();
    r.check().unwrap();
}

#[test]
fn export_of_empty_deck_is_refused() {
    let s = session(Gateway::disabled());
    assert!(matches!(s.export(ExportFormat::Html, ""), Err(SessionError::EmptyDeck)));
    assert!(s.snapshot().is_ok());
}

#[test]
fn random_operation_sequences_keep_invariants() {
    let mut rng = StdRng::seed_from_u64(11);
    for _ in 0..20 {
        let mut s = session(Gateway::disabled());
        s.submit_chart(PRIUS).unwrap();
        s.submit_chart(PLUGIN).unwrap();
        let ids: Vec<FactId> = s.facts.keys().cloned().collect();
        let mut successes = 2;
        for _ in 0..60 {
            let f = ids.choose(&mut rng).unwrap().clone();
            let slides = s.deck.slides.len();
            let res = match rng.gen_range(0..6) {
                0 | 1 => s.select_fact(&f, None).map(|_| ()),
                2 => s
                    .mutate_deck(DeckOp::Move {
                        fact_id: f,
                        slide: rng.gen_range(0..=slides),
                        position: rng.gen_range(0..3),
                    })
                    .map(|_| ()),
                3 => s.mutate_deck(DeckOp::Delete { fact_id: f }).map(|_| ()),
                4 => s
                    .mutate_deck(DeckOp::Lock {
                        target: LockTarget::Fact { fact_id: f },
                        locked: rng.gen_bool(0.5),
                    })
                    .map(|_| ()),
                _ => {
                    let g = ids.choose(&mut rng).unwrap().clone();
                    s.add_meta_relation(NewRelation {
                        fact_a: f,
                        fact_b: g,
                        type_description: "linked".into(),
                        summary: String::new(),
                    })
                    .map(|_| ())
                }
            };
            if res.is_ok() {
                successes += 1;
            }
            s.check().unwrap();
            assert_eq!(s.revision, successes);
        }
    }
}

#[test]
fn unplaced_chart_survives_restore() {
    let mut s = session(Gateway::disabled());
    s.submit_chart(PRIUS).unwrap();
    let snap = s.snapshot().unwrap();
    let ds = load_dataset(CARS.as_bytes(), Some("csv"), "cars").unwrap();
    let r = Session::restore("r", ds, context(), SessionConfig::default(), Gateway::disabled(), &snap).unwrap();
    assert!(r.charts.contains_key("prius"));
    assert!(r.facts.contains_key(&fid("prius-f1")));
}
