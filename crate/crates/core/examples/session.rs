//! A multi-round edit session persisted to disk: each round edits the
//! previous round's result, and the journal replays the whole history.
//!
//! cargo run --release --example session -- [store_dir] [ckpt_dir]

use brushedit::conductor::{ModelBundle, Overrides, RoundParams, SessionStore};
use brushedit::instructor::{EditInstruction, Instructor};
use brushedit::scene::{Color, SceneGraph, SceneObject, ShapeKind};

fn main() -> brushedit::Result<()> {
    let mut args = std::env::args().skip(1);
    let store_dir = args.next().unwrap_or_else(|| "target/session-store".into());
    let bundle = match args.next() {
        Some(dir) => ModelBundle::load(dir)?,
        None => ModelBundle::untrained(Default::default(), 0)?,
    };
    let store = SessionStore::open(&store_dir)?;
    let instructor = Instructor::offline();

    let scene = SceneGraph {
        height: 32,
        width: 32,
        background: Color::White,
        objects: vec![
            SceneObject { kind: ShapeKind::Circle, color: Color::Red, cy: 9, cx: 9, size: 4 },
            SceneObject { kind: ShapeKind::Square, color: Color::Blue, cy: 22, cx: 22, size: 4 },
        ],
    };
    let session = store.create(&scene.render())?;
    println!("session {} in {store_dir}", session.id);

    let params = RoundParams { steps: 20, guidance_scale: 2.0, ..RoundParams::default() };
    for (i, text) in ["remove the red circle", "make the blue square green"].iter().enumerate() {
        let current = store.current_image(&store.get(&session.id)?)?;
        let plan = instructor.build_plan(&EditInstruction::new(text)?, &current)?;
        let stored = store.add_plan(&session.id, &plan, Some(text))?;
        // the second round overrides the agent's caption
        let overrides = if i == 1 {
            Overrides { caption: Some("a green square".into()), ..Overrides::default() }
        } else {
            Overrides::default()
        };
        let round = store.run_round(&session.id, &bundle, &plan, Some(&stored.plan_id), &overrides, &params)?;
        println!(
            "round {}: {text:?} -> {} ({:?}, {} calls, {:.0} ms)",
            round.index,
            round.result.as_deref().unwrap_or("-"),
            round.status,
            round.denoiser_calls,
            round.timing_ms
        );
    }

    let replay = store.get(&session.id)?;
    println!("replayed {} plans and {} rounds; current image {}", replay.plans.len(), replay.rounds.len(), replay.current_ref());
    Ok(())
}
