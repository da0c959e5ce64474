//! Turn instructions into edit plans with the offline clients.
//!
//! cargo run --example plan

use std::sync::Arc;

use brushedit::instructor::{AliasDetector, ColorShapeDetector, EditInstruction, Instructor, StubMllm};
use brushedit::scene::{Color, SceneGraph, SceneObject, ShapeKind};

fn main() -> brushedit::Result<()> {
    let scene = SceneGraph {
        height: 32,
        width: 32,
        background: Color::White,
        objects: vec![
            SceneObject { kind: ShapeKind::Circle, color: Color::Red, cy: 8, cx: 8, size: 4 },
            SceneObject { kind: ShapeKind::Square, color: Color::Blue, cy: 8, cx: 23, size: 4 },
            SceneObject { kind: ShapeKind::Triangle, color: Color::Green, cy: 23, cx: 15, size: 5 },
        ],
    };
    let image = scene.render();
    println!("scene: {}\n", scene.caption());

    // nouns the shape detector does not know can be mapped onto scene objects
    let instructor = Instructor {
        mllm: Arc::new(StubMllm::default()),
        detector: Arc::new(AliasDetector {
            inner: ColorShapeDetector::default(),
            aliases: [("rose".to_string(), "red circle".to_string())].into(),
        }),
        config: Default::default(),
    };

    for text in [
        "remove the red circle",
        "remove the rose from the vase",
        "make the blue square yellow",
        "add a purple circle next to the green triangle",
        "change the background to gray",
        "remove the unicorn",
    ] {
        match instructor.build_plan(&EditInstruction::new(text)?, &image) {
            Ok(p) => println!(
                "{text:<48} -> {:<15} {:<15} mask {:>3} px  caption {:?}{}",
                p.edit_type.to_string(),
                p.target_object,
                p.mask.count_ones(),
                p.target_caption,
                if p.low_confidence { " (low confidence)" } else { "" }
            ),
            Err(e) => println!("{text:<48} -> error: {e}"),
        }
    }
    Ok(())
}
