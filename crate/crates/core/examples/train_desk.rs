//! Pre-train the toy base, train the branch, and compare held-out
//! unmasked-region MSE against base-only sampling.
//!
//! cargo run --release --example train_desk -- [seed] [branch_steps] [out_dir]

use std::time::Instant;

use brushedit::diffusion::SamplerConfig;
use brushedit::training::{held_out_pairs, held_out_unmasked_mse, run_recipe, save_outcome, MaskMix, TrainRecipe};

fn main() -> brushedit::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let steps: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(300);
    let out_dir = args.next();

    let mut recipe = TrainRecipe::default();
    recipe.base.seed = seed;
    recipe.branch.seed = seed;
    recipe.branch.steps = steps;

    let start = Instant::now();
    let out = run_recipe(&recipe)?;
    let base = out.base_curve.smoothed(25);
    let branch = out.branch.curve.smoothed(25);
    println!(
        "trained in {:.1}s: base loss {:.4} -> {:.4}, branch loss {:.4} -> {:.4}",
        start.elapsed().as_secs_f64(),
        base[0],
        base[base.len() - 1],
        branch[0],
        branch[branch.len() - 1]
    );

    let pairs = held_out_pairs(10_000 + seed, 8, &recipe.scenes, &MaskMix::default())?;
    let scfg = SamplerConfig { steps: 20, guidance_scale: 2.0, seed };
    let r = held_out_unmasked_mse(&out.bundle, &pairs, &scfg)?;
    println!(
        "held-out unmasked MSE over {} pairs: branch {:.5}, base-only {:.5}",
        r.n, r.branch_mse, r.base_mse
    );

    if let Some(dir) = out_dir {
        save_outcome(&out, std::path::Path::new(&dir))?;
        println!("checkpoint written to {dir}");
    }
    Ok(())
}
