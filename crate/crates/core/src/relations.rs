//! Data relations between two facts: attribute overlaps scored by IoU, plus
//! binary temporal-order and importance-order relations.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::model::{temporal_key, ColumnKind, DataFact, DataRelation, DataRelationKind, Dataset, FactId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RelationError {
    #[error("cannot relate fact `{0}` to itself")]
    SelfRelation(FactId),
}

/// `|a ∩ b| / |a ∪ b|`, defined as 0 when both sets are empty.
pub fn iou<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn dimension_set(f: &DataFact) -> BTreeSet<String> {
    f.dimension.iter().cloned().collect()
}

fn type_set(f: &DataFact) -> BTreeSet<String> {
    BTreeSet::from([f.fact_type.name().to_string()])
}

/// Earliest temporal value among the subspace filters.
fn earliest_in_subspace(f: &DataFact, dataset: &Dataset) -> Option<i64> {
    f.subspace
        .iter()
        .filter(|(c, _)| dataset.kind_of(c) == Some(ColumnKind::Temporal))
        .filter_map(|(_, v)| temporal_key(v))
        .min()
}

fn earliest_in_focus(f: &DataFact, dataset: &Dataset) -> Option<i64> {
    f.focus
        .iter()
        .filter(|p| dataset.kind_of(&p.column) == Some(ColumnKind::Temporal))
        .filter_map(|p| temporal_key(&p.value))
        .min()
}

fn precedes(a: Option<i64>, b: Option<i64>) -> bool {
    matches!((a, b), (Some(a), Some(b)) if a < b)
}

/// All data relations from `fa` to `fb`. Zero-score overlaps and unmet
/// binary relations are omitted.
pub fn compute_data_relations(
    fa: &DataFact,
    fb: &DataFact,
    dataset: &Dataset,
) -> Result<Vec<DataRelation>, RelationError> {
    if fa.id == fb.id {
        return Err(RelationError::SelfRelation(fa.id.clone()));
    }
    let mut out = Vec::new();
    let mut push = |kind, score: f64| {
        if score > 0.0 {
            out.push(DataRelation {
                fact_a: fa.id.clone(),
                fact_b: fb.id.clone(),
                kind,
                score,
            });
        }
    };
    push(DataRelationKind::SubspaceOverlap, iou(&fa.subspace.keys(), &fb.subspace.keys()));
    push(DataRelationKind::MeasureOverlap, iou(&fa.measure_keys(), &fb.measure_keys()));
    push(DataRelationKind::DimensionOverlap, iou(&dimension_set(fa), &dimension_set(fb)));
    push(DataRelationKind::FocusOverlap, iou(&fa.focus_keys(), &fb.focus_keys()));
    push(DataRelationKind::FacttypeOverlap, iou(&type_set(fa), &type_set(fb)));
    if precedes(earliest_in_subspace(fa, dataset), earliest_in_subspace(fb, dataset)) {
        push(DataRelationKind::TemporalSubspace, 1.0);
    }
    if precedes(earliest_in_focus(fa, dataset), earliest_in_focus(fb, dataset)) {
        push(DataRelationKind::TemporalFocus, 1.0);
    }
    if fa.scores.importance >= fb.scores.importance {
        push(DataRelationKind::ImportanceOrder, 1.0);
    }
    Ok(out)
}

/// Relations in both directions between `fact` and each of `others`.
pub fn relations_with(fact: &DataFact, others: &[&DataFact], dataset: &Dataset) -> Vec<DataRelation> {
    let mut out = Vec::new();
    for o in others {
        if o.id == fact.id {
            continue;
        }
        out.extend(compute_data_relations(o, fact, dataset).unwrap_or_default());
        out.extend(compute_data_relations(fact, o, dataset).unwrap_or_default());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        validate_dataset, Aggregate, FactParameters, FactScores, FactType, FocusPoint, Measure, RawColumn,
        RawTable, Subspace, Value,
    };
    use proptest::prelude::*;

    fn dataset() -> Dataset {
        validate_dataset(RawTable {
            name: "d".into(),
            columns: ["model", "category", "year", "sales"].into_iter().map(RawColumn::new).collect(),
            rows: vec![
                vec!["CR-V".into(), "SUV".into(), "2007".into(), "1".into()],
                vec!["CR-V".into(), "SUV".into(), "2009".into(), "1".into()],
            ],
        })
        .unwrap()
    }

    fn fact(id: &str, subspace: Subspace, importance: f64) -> DataFact {
        DataFact {
            id: FactId(id.into()),
            subspace,
            dimension: Some("model".into()),
            measures: vec![Measure::new("sales", Aggregate::Sum)],
            fact_type: FactType::Value,
            parameters: FactParameters::Value { value: 1.0 },
            focus: vec![],
            scores: FactScores {
                importance,
                interest_alignment: 0.0,
            },
            description: String::new(),
            chart_id: "c".into(),
        }
    }

    fn score(rels: &[DataRelation], kind: DataRelationKind) -> Option<f64> {
        rels.iter().find(|r| r.kind == kind).map(|r| r.score)
    }

    #[test]
    fn iou_examples() {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<BTreeSet<_>>();
        assert_eq!(iou(&s(&["A", "B"]), &s(&["A", "B"])), 1.0);
        assert_eq!(iou(&s(&["A"]), &s(&["B"])), 0.0);
        assert_eq!(iou(&s(&["Model=CR-V", "Year=2010"]), &s(&["Model=CR-V"])), 0.5);
        assert_eq!(iou(&s(&[]), &s(&[])), 0.0);
    }

    #[test]
    fn shared_subspace_and_measure() {
        let suv = Subspace::from_pairs([("category", "SUV")]).unwrap();
        let rels = compute_data_relations(&fact("a", suv.clone(), 0.5), &fact("b", suv, 0.5), &dataset()).unwrap();
        assert_eq!(score(&rels, DataRelationKind::SubspaceOverlap), Some(1.0));
        assert_eq!(score(&rels, DataRelationKind::MeasureOverlap), Some(1.0));
        assert_eq!(score(&rels, DataRelationKind::FocusOverlap), None);
    }

    #[test]
    fn temporal_subspace_order() {
        let d = dataset();
        let a = fact("a", Subspace::from_pairs([("year", Value::from(2007i64))]).unwrap(), 0.5);
        let b = fact("b", Subspace::from_pairs([("year", Value::from(2009i64))]).unwrap(), 0.5);
        let ab = compute_data_relations(&a, &b, &d).unwrap();
        let ba = compute_data_relations(&b, &a, &d).unwrap();
        assert_eq!(score(&ab, DataRelationKind::TemporalSubspace), Some(1.0));
        assert_eq!(score(&ba, DataRelationKind::TemporalSubspace), None);
        // Disjoint years: no subspace overlap.
        assert_eq!(score(&ab, DataRelationKind::SubspaceOverlap), None);
    }

    #[test]
    fn temporal_focus_order() {
        let d = dataset();
        let mut a = fact("a", Subspace::new(), 0.5);
        let mut b = fact("b", Subspace::new(), 0.5);
        a.focus = vec![FocusPoint::new("year", Value::from(2007i64))];
        b.focus = vec![FocusPoint::new("year", Value::from(2009i64))];
        assert_eq!(
            score(&compute_data_relations(&a, &b, &d).unwrap(), DataRelationKind::TemporalFocus),
            Some(1.0)
        );
        assert_eq!(
            score(&compute_data_relations(&b, &a, &d).unwrap(), DataRelationKind::TemporalFocus),
            None
        );
    }

    #[test]
    fn importance_order() {
        let d = dataset();
        let a = fact("a", Subspace::new(), 0.8);
        let b = fact("b", Subspace::new(), 0.5);
        assert_eq!(
            score(&compute_data_relations(&a, &b, &d).unwrap(), DataRelationKind::ImportanceOrder),
            Some(1.0)
        );
        assert_eq!(
            score(&compute_data_relations(&b, &a, &d).unwrap(), DataRelationKind::ImportanceOrder),
            None
        );
        let c = fact("c", Subspace::new(), 0.8);
        assert!(score(&compute_data_relations(&c, &a, &d).unwrap(), DataRelationKind::ImportanceOrder).is_some());
        assert!(score(&compute_data_relations(&a, &c, &d).unwrap(), DataRelationKind::ImportanceOrder).is_some());
    }

    #[test]
    fn self_relation_rejected() {
        let a = fact("a", Subspace::new(), 0.8);
        assert_eq!(
            compute_data_relations(&a, &a, &dataset()).unwrap_err(),
            RelationError::SelfRelation(FactId("a".into()))
        );
    }

    fn arb_fact(id: &'static str) -> impl Strategy<Value = DataFact> {
        (
            proptest::option::of(0u8..3),
            proptest::option::of(prop_oneof![Just(2007i64), Just(2009i64)]),
            proptest::collection::btree_set(0u8..4, 0..3),
            0usize..7,
            0.0f64..1.0,
        )
            .prop_map(move |(cat, year, focus, ty, imp)| {
                let mut s = Subspace::new();
                if let Some(c) = cat {
                    s.insert("category", Value::text(format!("c{c}"))).unwrap();
                }
                if let Some(y) = year {
                    s.insert("year", Value::from(y)).unwrap();
                }
                let mut f = fact(id, s, imp);
                f.fact_type = FactType::ALL[ty];
                f.focus = focus
                    .into_iter()
                    .map(|m| FocusPoint::new("model", Value::text(format!("m{m}"))))
                    .collect();
                f
            })
    }

    proptest! {
        #[test]
        fn overlaps_symmetric_and_scores_bounded(a in arb_fact("a"), b in arb_fact("b")) {
            let d = dataset();
            let ab = compute_data_relations(&a, &b, &d).unwrap();
            let ba = compute_data_relations(&b, &a, &d).unwrap();
            for r in ab.iter().chain(&ba) {
                prop_assert!(r.score > 0.0 && r.score <= 1.0);
                if !r.kind.is_overlap() {
                    prop_assert_eq!(r.score, 1.0);
                }
            }
            for r in ab.iter().filter(|r| r.kind.is_overlap()) {
                prop_assert_eq!(score(&ba, r.kind), Some(r.score));
            }
        }
    }
}
