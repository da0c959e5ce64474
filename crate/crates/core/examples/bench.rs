//! Build a small inside/outside benchmark from procedural scenes and score an
//! inpainter on it.
//!
//! cargo run --release --example bench -- [ckpt_dir]

use brushedit::conductor::{ModelBundle, RoundParams};
use brushedit::evaluation::{
    run_benchmark, BenchBackends, BenchConfig, BenchmarkManifest, BundleInpainter, ManifestItem, Split,
    TokenEmbeddingBackend,
};
use brushedit::scene::{random_scene, SceneParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> brushedit::Result<()> {
    let bundle = match std::env::args().nth(1) {
        Some(dir) => ModelBundle::load(dir)?,
        None => ModelBundle::untrained(Default::default(), 0)?,
    };
    let dir = std::env::temp_dir().join("brushedit-bench-example");
    std::fs::create_dir_all(&dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut items = Vec::new();
    for i in 0..6 {
        let s = random_scene(&mut rng, &SceneParams::default())?;
        let (img, mask) = (format!("img{i}.png"), format!("mask{i}.png"));
        s.image.save_png(dir.join(&img))?;
        let object = s.graph.object_mask(0)?;
        let (split, m, caption) = if i % 2 == 0 {
            (Split::Inside, object, s.graph.objects[0].phrase())
        } else {
            (Split::Outside, object.complement(), format!("{} background", s.graph.background.name()))
        };
        m.save_png(dir.join(&mask))?;
        items.push(ManifestItem { image_path: img.into(), mask_path: mask.into(), caption, split });
    }
    let manifest = BenchmarkManifest { benchmark: "procedural".into(), items, base_dir: dir.clone() };
    manifest.save(dir.join("manifest.json"))?;
    let manifest = BenchmarkManifest::load(dir.join("manifest.json"))?;

    let clip = TokenEmbeddingBackend::default();
    let backends = BenchBackends { perceptual: None, embedding: Some(&clip) };
    for blend in [false, true] {
        let inpainter = BundleInpainter {
            bundle: &bundle,
            params: RoundParams { steps: 20, guidance_scale: 2.0, ..RoundParams::default() },
            blend,
        };
        let report = run_benchmark(&manifest, &inpainter, &backends, &BenchConfig { seed: 0, jobs: 2 });
        println!("blend={blend}\n{}", report.to_csv());
    }
    Ok(())
}
