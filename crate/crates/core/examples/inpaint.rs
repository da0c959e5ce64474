//! Dual-branch inpainting against the blended-latent baseline, sweeping the
//! preservation scale and injection mode. Pass a trained checkpoint directory
//! (see the `train_desk` example) for meaningful numbers.
//!
//! cargo run --release --example inpaint -- [ckpt_dir]

use brushedit::branch::{blended_latent_inpaint, InjectionConfig, InjectionMode};
use brushedit::conductor::ModelBundle;
use brushedit::diffusion::SamplerConfig;
use brushedit::evaluation::mse;
use brushedit::mask::{mask_out, BlendPolarity};
use brushedit::scene::{random_scene, SceneParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> brushedit::Result<()> {
    let bundle = match std::env::args().nth(1) {
        Some(dir) => ModelBundle::load(dir)?,
        None => {
            eprintln!("no checkpoint given, using untrained weights");
            ModelBundle::untrained(Default::default(), 0)?
        }
    };
    let scene = random_scene(&mut ChaCha8Rng::seed_from_u64(11), &SceneParams::default())?;
    let mask = scene.graph.object_mask(0)?.dilate(1);
    let masked = mask_out(&scene.image, &mask)?;
    let caption = scene.graph.objects[0].phrase();
    let scfg = SamplerConfig { steps: 20, guidance_scale: 2.0, seed: 0 };
    println!("scene: {}; regenerating {caption:?}", scene.caption);

    let bld = blended_latent_inpaint(
        &bundle.base,
        &bundle.context(),
        &scene.image,
        &mask,
        &caption,
        &scfg,
        BlendPolarity::GenerateWhereOne,
    )?;
    println!("blended latent    unmasked mse {:.5}", mse(&bld, &scene.image, Some(&mask))?);

    for mode in [InjectionMode::Full, InjectionMode::Half, InjectionMode::ControlNet] {
        for w in [0.0, 0.5, 1.0] {
            let out = bundle.inpaint(&masked, &mask, &caption, &InjectionConfig { w, mode }, &scfg)?;
            println!(
                "{mode:<10?} w={w:.1}  unmasked mse {:.5}  ({} calls)",
                mse(&out.image, &scene.image, Some(&mask))?,
                out.denoiser_calls
            );
        }
    }
    Ok(())
}
