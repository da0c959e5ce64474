//! The 20-instruction fixture with expected plans derived from the scene
//! graphs.

use brushedit::instructor::{EditInstruction, EditType};
use brushedit::mask::Mask;
use brushedit::scene::SceneGraph;
use serde::Deserialize;

#[derive(Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSpec {
    Object(usize),
    Band(usize),
    Background,
}

#[derive(Deserialize)]
pub struct Case {
    pub scene: String,
    pub instruction: String,
    pub edit_type: EditType,
    pub object: String,
    pub mask: MaskSpec,
}

pub fn corpus() -> Vec<Case> {
    serde_json::from_str(include_str!("../fixtures/instructor_corpus.json")).unwrap()
}

pub fn scene(name: &str) -> SceneGraph {
    match name {
        "a" => super::scene_a(),
        "b" => super::scene_b(),
        other => panic!("unknown scene {other}"),
    }
}

/// Square dilation minus the anchor, computed directly from the graph.
fn band(g: &SceneGraph, anchor: usize, radius: usize) -> Mask {
    let a = g.object_mask(anchor).unwrap();
    let r = radius as isize;
    Mask::from_fn(g.height, g.width, |y, x| {
        if a.get(y, x) == 1.0 {
            return 0.0;
        }
        for dy in -r..=r {
            for dx in -r..=r {
                let (yy, xx) = (y as isize + dy, x as isize + dx);
                if yy >= 0 && xx >= 0 && (yy as usize) < g.height && (xx as usize) < g.width && a.get(yy as usize, xx as usize) == 1.0 {
                    return 1.0;
                }
            }
        }
        0.0
    })
}

pub fn expected_mask(g: &SceneGraph, spec: &MaskSpec) -> Mask {
    match spec {
        MaskSpec::Object(i) => g.object_mask(*i).unwrap(),
        MaskSpec::Band(i) => band(g, *i, 3),
        MaskSpec::Background => Mask::from_fn(g.height, g.width, |y, x| {
            if g.objects.iter().any(|o| o.covers(y, x)) {
                0.0
            } else {
                1.0
            }
        }),
    }
}

/// Run every case through the offline instructor; returns one line per
/// mismatch.
pub fn check_corpus() -> Vec<String> {
    let ins = super::corpus_instructor();
    let mut failures = Vec::new();
    for case in corpus() {
        let g = scene(&case.scene);
        let plan = match EditInstruction::new(&case.instruction).and_then(|i| ins.build_plan(&i, &g.render())) {
            Ok(p) => p,
            Err(e) => {
                failures.push(format!("{:?}: {e}", case.instruction));
                continue;
            }
        };
        if plan.edit_type != case.edit_type || plan.target_object != case.object {
            failures.push(format!(
                "{:?}: got ({}, {:?})",
                case.instruction, plan.edit_type, plan.target_object
            ));
        }
        if plan.mask != expected_mask(&g, &case.mask) {
            failures.push(format!("{:?}: mask differs", case.instruction));
        }
        if let (EditType::Removal, MaskSpec::Object(i)) = (case.edit_type, &case.mask) {
            let phrase = g.objects[*i].phrase();
            if plan.target_caption.contains(&phrase) {
                failures.push(format!("{:?}: caption still mentions {phrase:?}", case.instruction));
            }
        }
        if plan.target_caption.trim().is_empty() {
            failures.push(format!("{:?}: empty caption", case.instruction));
        }
    }
    failures
}
