#![allow(dead_code)]

pub mod corpus;
pub mod oracle;

use std::collections::BTreeMap;

use brushedit::instructor::{AliasDetector, ColorShapeDetector, Instructor, StubMllm};
use brushedit::scene::{Color, SceneGraph, SceneObject, ShapeKind};
use std::sync::Arc;

pub fn obj(kind: ShapeKind, color: Color, cy: usize, cx: usize, size: usize) -> SceneObject {
    SceneObject { kind, color, cy, cx, size }
}

/// White background: red circle, blue square, green triangle.
pub fn scene_a() -> SceneGraph {
    SceneGraph {
        height: 24,
        width: 24,
        background: Color::White,
        objects: vec![
            obj(ShapeKind::Circle, Color::Red, 5, 5, 3),
            obj(ShapeKind::Square, Color::Blue, 5, 17, 3),
            obj(ShapeKind::Triangle, Color::Green, 17, 11, 4),
        ],
    }
}

/// Gray background: yellow circle, purple triangle, orange square.
pub fn scene_b() -> SceneGraph {
    SceneGraph {
        height: 24,
        width: 24,
        background: Color::Gray,
        objects: vec![
            obj(ShapeKind::Circle, Color::Yellow, 6, 6, 3),
            obj(ShapeKind::Triangle, Color::Purple, 16, 16, 4),
            obj(ShapeKind::Square, Color::Orange, 6, 18, 2),
        ],
    }
}

/// A lone red circle on white, large enough that a radius-7 blur band
/// leaves untouched background.
pub fn red_circle_scene() -> SceneGraph {
    SceneGraph {
        height: 32,
        width: 32,
        background: Color::White,
        objects: vec![obj(ShapeKind::Circle, Color::Red, 8, 8, 3)],
    }
}

pub fn aliases() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("rose".to_string(), "red circle".to_string()),
        ("dumplings".to_string(), "yellow circle".to_string()),
    ])
}

/// Offline clients with the corpus aliases for non-shape nouns.
pub fn corpus_instructor() -> Instructor {
    Instructor {
        mllm: Arc::new(StubMllm::default()),
        detector: Arc::new(AliasDetector {
            inner: ColorShapeDetector::default(),
            aliases: aliases(),
        }),
        config: Default::default(),
    }
}
