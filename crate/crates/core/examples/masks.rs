//! The mask pipeline: brush strokes, filtering, dilation, blur and the final
//! paste-back. Writes PNGs to the directory given (default `target/masks`).
//!
//! cargo run --example masks -- [out_dir]

use std::path::PathBuf;

use brushedit::mask::{blur_mask, filter_mask, mask_out, paste_blend, random_brush_mask, BlurSpec, BrushParams};
use brushedit::scene::{random_scene, SceneParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> brushedit::Result<()> {
    let out: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "target/masks".into()).into();
    std::fs::create_dir_all(&out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = SceneParams { height: 48, width: 48, size_range: (4, 8), objects: (2, 3) };
    let scene = random_scene(&mut rng, &params)?;
    println!("scene: {}", scene.caption);

    let brush = random_brush_mask(&mut rng, 48, 48, &BrushParams::default())?;
    println!(
        "brush mask covers {:.1}% of the image, passes filter: {}",
        100.0 * brush.area_fraction(),
        filter_mask(&brush, 0.02, true)?
    );

    let object = scene.graph.object_mask(0)?;
    let grown = object.dilate(2);
    println!("object 0 mask: {} px, dilated by 2: {} px", object.count_ones(), grown.count_ones());

    let blurred = blur_mask(&grown, BlurSpec::new(7));
    let hole = mask_out(&scene.image, &grown)?;
    let fill = brushedit::image::Image::filled(48, 48, [0.2, 0.6, 0.9]);
    let pasted = paste_blend(&scene.image, &fill, &blurred)?;

    scene.image.save_png(out.join("scene.png"))?;
    brush.save_png(out.join("brush.png"))?;
    grown.save_png(out.join("object.png"))?;
    blurred.save_png(out.join("blurred.png"))?;
    hole.save_png(out.join("masked.png"))?;
    pasted.save_png(out.join("pasted.png"))?;
    println!("wrote six PNGs to {}", out.display());
    Ok(())
}
