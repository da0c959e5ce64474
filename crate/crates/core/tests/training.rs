use std::collections::BTreeMap;

use brushedit::branch::{base_sample, InjectionConfig};
use brushedit::conductor::{BundleConfig, ModelBundle};
use brushedit::diffusion::SamplerConfig;
use brushedit::nn::Parameters;
use brushedit::scene::{random_scene, Color, SceneParams};
use brushedit::training::{
    load_dataset, make_training_pair, save_dataset, synth_dataset, train_branch, MaskKind, MaskMix, TrainConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn data(seed: u64, n: usize) -> Vec<brushedit::scene::ProceduralScene> {
    synth_dataset(&mut ChaCha8Rng::seed_from_u64(seed), n, &SceneParams::default()).unwrap()
}

fn short(seed: u64, jobs: usize) -> TrainConfig {
    TrainConfig {
        steps: 6,
        batch: 4,
        learning_rate: 0.01,
        seed,
        jobs,
        ..TrainConfig::default()
    }
}

#[test]
fn untrained_bundle_inpaints_like_the_base() {
    let bundle = ModelBundle::untrained(BundleConfig::default(), 11).unwrap();
    let scene = &data(3, 1)[0];
    let pair = make_training_pair(scene, &mut ChaCha8Rng::seed_from_u64(4), &MaskMix::default()).unwrap();
    let scfg = SamplerConfig { steps: 8, guidance_scale: 3.0, seed: 2 };
    let (h, w) = pair.image.dims();
    let dual = bundle
        .inpaint(&pair.masked_image, &pair.mask, &pair.caption_target, &InjectionConfig::default(), &scfg)
        .unwrap();
    let plain = base_sample(&bundle.base, &bundle.context(), h, w, &pair.caption_target, &scfg).unwrap();
    assert_eq!(dual.image, plain);
    assert_eq!(dual.denoiser_calls, 16);
}

#[test]
fn branch_training_leaves_base_untouched() {
    let mut bundle = ModelBundle::untrained(BundleConfig::default(), 0).unwrap();
    let before = bundle.base.checksum();
    let branch_before = bundle.branch.checksum();
    let out = train_branch(&mut bundle, &data(0, 8), &short(1, 1)).unwrap();
    assert_eq!(bundle.base.checksum(), before);
    assert_eq!(out.base_checksum, before);
    assert_ne!(bundle.branch.checksum(), branch_before);
    assert_eq!(out.curve.losses.len(), 6);
    assert!(out.curve.losses.iter().all(|l| l.is_finite()));
}

#[test]
fn branch_training_is_reproducible_across_thread_counts() {
    let scenes = data(5, 8);
    let run = |jobs| {
        let mut bundle = ModelBundle::untrained(BundleConfig::default(), 5).unwrap();
        let out = train_branch(&mut bundle, &scenes, &short(9, jobs)).unwrap();
        (out.curve.losses, bundle.branch.flat())
    };
    let (la, pa) = run(1);
    let (lb, pb) = run(1);
    let (lc, pc) = run(3);
    for (x, y) in la.iter().zip(&lb).chain(la.iter().zip(&lc)) {
        assert!((x - y).abs() <= 1e-6);
    }
    for (x, y) in pa.iter().zip(&pb).chain(pa.iter().zip(&pc)) {
        assert!((x - y).abs() <= 1e-6);
    }
}

#[test]
fn mask_kind_frequencies_follow_the_mix() {
    let mix = MaskMix::default();
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    let n = 10_000;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for _ in 0..n {
        *counts.entry(format!("{:?}", mix.sample(&mut rng))).or_default() += 1;
    }
    for kind in MaskKind::ALL {
        let freq = counts.get(&format!("{kind:?}")).copied().unwrap_or(0) as f64 / n as f64;
        assert!((freq - mix.weight(kind)).abs() <= 0.02, "{kind:?}: {freq}");
    }
}

#[test]
fn training_pairs_respect_their_kind() {
    let scenes = data(8, 30);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for s in &scenes {
        for kind in MaskKind::ALL {
            let p = make_training_pair(s, &mut rng, &MaskMix::only(kind)).unwrap();
            assert_eq!(p.mask_kind, kind);
            assert_eq!(p.mask.dims(), s.image.dims());
            assert!(p.mask.count_ones() > 0);
            for y in 0..p.mask.height() {
                for x in 0..p.mask.width() {
                    if p.mask.get(y, x) == 1.0 {
                        assert_eq!(p.masked_image.pixel(y, x), [0.0; 3]);
                    } else {
                        assert_eq!(p.masked_image.pixel(y, x), p.image.pixel(y, x));
                    }
                }
            }
            if kind == MaskKind::DeletionPair {
                assert_eq!(p.image, s.graph.render_background());
            } else {
                assert_eq!(p.image, s.image);
            }
        }
    }
}

fn histogram(seed: u64) -> BTreeMap<String, usize> {
    let s = random_scene(&mut ChaCha8Rng::seed_from_u64(seed), &SceneParams::default()).unwrap();
    let mut h = BTreeMap::new();
    let (hh, ww) = s.image.dims();
    for y in 0..hh {
        for x in 0..ww {
            let (c, d) = Color::nearest(s.image.pixel(y, x));
            assert_eq!(d, 0.0);
            *h.entry(c.name().to_string()).or_default() += 1;
        }
    }
    h
}

#[test]
fn scene_histogram_matches_golden() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/scene_seed7_histogram.json");
    let got = histogram(7);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, serde_json::to_string_pretty(&got).unwrap() + "\n").unwrap();
        return;
    }
    let want: BTreeMap<String, usize> = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(got, want);
    assert_eq!(got.values().sum::<usize>(), 256);
}

#[test]
fn seeded_dataset_is_reproducible_and_round_trips() {
    let a = data(7, 4);
    let b = data(7, 4);
    assert_eq!(a, b);
    assert_ne!(a, data(8, 4));
    let dir = tempfile::tempdir().unwrap();
    save_dataset(dir.path(), &a).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.len(), 4);
    for (x, y) in a.iter().zip(&back) {
        assert_eq!(x.caption, y.caption);
        assert_eq!(x.image.quantized(), y.image);
    }
}

#[test]
fn captions_name_each_object_once() {
    for s in data(21, 50) {
        for o in &s.graph.objects {
            let phrase = o.phrase();
            assert_eq!(s.caption.matches(phrase.as_str()).count(), 1, "{phrase:?} in {:?}", s.caption);
        }
        assert!(s.caption.contains(s.graph.background.name()));
    }
}
