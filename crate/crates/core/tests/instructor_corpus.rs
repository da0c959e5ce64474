mod common;

use brushedit::instructor::{classify_edit, EditInstruction, EditType, StubMllm};
use brushedit::{Error, Stage};
use common::corpus;
use proptest::prelude::*;

#[test]
fn corpus_has_twenty_cases_with_both_phrasings() {
    let c = corpus::corpus();
    assert_eq!(c.len(), 20);
    assert!(c.iter().any(|k| k.instruction.starts_with("remove the rose")));
    assert!(c.iter().any(|k| k.instruction.starts_with("convert the dumplings")));
}

#[test]
fn corpus_plans_match_expectations() {
    let failures = corpus::check_corpus();
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn absent_object_fails_at_locate_stage() {
    let err = common::corpus_instructor()
        .build_plan(&EditInstruction::new("remove the unicorn").unwrap(), &common::scene_a().render())
        .unwrap_err();
    assert_eq!(err.stage(), Some(Stage::LocateTarget));
    assert!(matches!(err.root(), Error::NotFound(_)));
}

#[test]
fn stub_plans_are_deterministic() {
    let ins = common::corpus_instructor();
    let img = common::scene_a().render();
    let i = EditInstruction::new("make the red circle blue").unwrap();
    let a = ins.build_plan(&i, &img).unwrap().to_json().unwrap();
    let b = ins.build_plan(&i, &img).unwrap().to_json().unwrap();
    assert_eq!(a, b);
}

proptest! {
    #[test]
    fn classification_is_total_over_fuzzed_text(text in "[a-zA-Z ,.'!?-]{1,60}") {
        let mllm = StubMllm::default();
        match EditInstruction::new(&text) {
            Ok(ins) => {
                if let Ok(c) = classify_edit(&ins, &mllm) {
                    prop_assert!(EditType::ALL.contains(&c.edit_type));
                }
            }
            Err(e) => prop_assert!(matches!(e, Error::Validation(_))),
        }
    }

    #[test]
    fn plan_masks_match_image_size(
        verb in prop::sample::select(vec!["remove", "make", "change", "add", "swap", "paint"]),
        target in prop::sample::select(vec!["red circle", "blue square", "green triangle", "background", "thing"]),
    ) {
        let img = common::scene_a().render();
        let text = format!("{verb} the {target}");
        if let Ok(plan) = common::corpus_instructor().build_plan(&EditInstruction::new(&text).unwrap(), &img) {
            prop_assert_eq!(plan.mask.dims(), img.dims());
            prop_assert!(EditType::ALL.contains(&plan.edit_type));
        }
    }
}
