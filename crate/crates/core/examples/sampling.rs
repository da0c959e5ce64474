//! Guided DDIM sampling with a toy denoiser: two network calls per step, and
//! the same seed always gives the same sample.
//!
//! cargo run --example sampling

use brushedit::diffusion::{sample, Conditioning, HashingEmbedder, NoiseSchedule, SamplerConfig, TextEmbedder};
use brushedit::model::{ConvDenoiser, CountingDenoiser, ModelConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> brushedit::Result<()> {
    let cfg = ModelConfig::default();
    let model = ConvDenoiser::random(cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
    let sched = NoiseSchedule::linear(1000, 1e-4, 0.02)?;
    println!("alpha_bar: t=1 {:.5}, t=500 {:.5}, t=1000 {:.5}", sched.alpha_bar()[1], sched.alpha_bar()[500], sched.alpha_bar()[1000]);

    let emb = HashingEmbedder::new(cfg.cond_dim);
    let cond = Conditioning::from_caption(&emb, "a red circle on a white background");
    println!("caption embedding norm {:.3}", emb.embed("a red circle").as_slice().iter().map(|v| v * v).sum::<f64>().sqrt());

    for guidance in [1.0, 3.0, 7.5] {
        let scfg = SamplerConfig { steps: 25, guidance_scale: guidance, seed: 42 };
        let counter = CountingDenoiser::new(&model);
        let z = sample(&counter, &sched, scfg.initial_noise(3, 8, 8), &cond, &scfg, None)?;
        let again = sample(&model, &sched, scfg.initial_noise(3, 8, 8), &cond, &scfg, None)?;
        let mean = z.data().iter().sum::<f64>() / z.len() as f64;
        println!(
            "guidance {guidance:>4}: {} denoiser calls for {} steps, mean {mean:+.4}, repeat identical: {}",
            counter.calls(),
            scfg.steps,
            z == again
        );
    }
    Ok(())
}
