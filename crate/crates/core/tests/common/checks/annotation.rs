//! The annotation stage machine under random action sequences.

use std::collections::{BTreeSet, HashMap};

use hvd_core::annotate::{AnnotateError, AnnotationStore, Label, Role, Stage};
use hvd_core::corpus::Review;
use hvd_core::taxonomy::ViolationCategory as C;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Transitions the workflow allows, written out independently of the store.
pub const ALLOWED: [(Stage, Stage); 4] = [
    (Stage::Unlabeled, Stage::Labeled),
    (Stage::Labeled, Stage::Validated),
    (Stage::Labeled, Stage::Conflict),
    (Stage::Conflict, Stage::Resolved),
];

pub fn review(id: &str) -> Review {
    Review::new(id, "app", format!("text of {id}"))
}

fn stages(store: &AnnotationStore) -> HashMap<String, Stage> {
    store.tasks().map(|t| (t.review_id.clone(), t.stage)).collect()
}

fn random_label(rng: &mut ChaCha8Rng) -> Label {
    let annotator = *["ana", "ben", "cy", ""].choose(rng).unwrap();
    let k = rng.random_range(0..3);
    let cats: Vec<C> = C::ALL.choose_multiple(rng, k).copied().collect();
    Label::new(rng.random_bool(0.5), annotator).with_categories(cats)
}

pub fn ten_thousand_random_sequences_stay_on_the_allowed_transitions() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut seen = BTreeSet::new();
    for seq in 0..10_000 {
        let mut store = AnnotationStore::in_memory();
        let ids: Vec<String> = (0..rng.random_range(1..=3)).map(|i| format!("r{i}")).collect();
        for id in &ids {
            store.enqueue(review(id)).unwrap();
        }
        for step in 0..rng.random_range(1..=14) {
            let before = stages(&store);
            let id = ids.choose(&mut rng).unwrap().clone();
            let first = store.get(&id).unwrap().first_label.as_ref().map(|l| l.annotator.clone());
            let stage = before[&id];
            let result = match rng.random_range(0..5) {
                0 => store.enqueue(review(&id)).map(|_| ()),
                1 | 2 => {
                    let label = random_label(&mut rng);
                    let role = *[Role::Labeler, Role::Validator, Role::Resolver].choose(&mut rng).unwrap();
                    let self_check = role == Role::Validator && stage == Stage::Labeled && first.as_deref() == Some(label.annotator.as_str());
                    let r = store.submit_label(&id, label, role).map(|_| ());
                    if self_check {
                        assert!(matches!(r, Err(AnnotateError::SelfValidation { .. })), "seq {seq} step {step}: {r:?}");
                    }
                    r
                }
                _ => {
                    let note = *["", "  ", "agreed in meeting"].choose(&mut rng).unwrap();
                    store
                        .resolve_conflict(&id, rng.random_bool(0.5), vec![], note, Some("lead"))
                        .map(|_| ())
                }
            };
            let after = stages(&store);
            let changed: Vec<&String> = ids.iter().filter(|i| before[*i] != after[*i]).collect();
            match &result {
                Err(_) => assert!(changed.is_empty(), "seq {seq} step {step}: failed action changed state"),
                Ok(()) => {
                    assert!(changed.len() <= 1);
                    for i in changed {
                        let t = (before[i], after[i]);
                        assert!(ALLOWED.contains(&t), "seq {seq} step {step}: forbidden {t:?}");
                        seen.insert((t.0.code(), t.1.code()));
                    }
                }
            }
            if let Err(AnnotateError::Stage { stage: reported, .. }) = &result {
                assert_eq!(*reported, stage, "stage errors name the current stage");
            }
            assert!(store.tasks().all(|t| t.is_consistent()));
        }

        let exported: BTreeSet<String> = store.export_labels().into_iter().map(|e| e.review.id).collect();
        let finished: BTreeSet<String> = store
            .tasks()
            .filter(|t| matches!(t.stage, Stage::Validated | Stage::Resolved))
            .map(|t| t.review_id.clone())
            .collect();
        assert_eq!(exported, finished);
        for e in store.export_labels() {
            let t = store.get(&e.review.id).unwrap();
            assert!(t.first_label.is_some() && t.second_label.is_some(), "audit trail keeps both labels");
            if let Some(res) = &t.resolution {
                assert_eq!(e.label, u8::from(res.violation));
            }
            assert!(!store.history(&e.review.id).is_empty());
        }
    }
    assert_eq!(seen.len(), ALLOWED.len(), "every allowed transition was exercised: {seen:?}");
}
