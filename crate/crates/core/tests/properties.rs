mod common;

use brushedit::diffusion::forward_noise_with;
use brushedit::evaluation::{
    compute_fidelity, mse, psnr, run_benchmark, ssim, BenchBackends, BenchConfig, BenchReport, BenchmarkManifest,
    Inpainter, ItemResult, ManifestItem, Split, PSNR_CAP,
};
use brushedit::image::Image;
use brushedit::mask::{paste_blend, Mask};
use brushedit::tensor::Tensor3;
use brushedit::Error;
use proptest::prelude::*;

fn image_from(h: usize, w: usize, vals: &[f64]) -> Image {
    let data: Vec<f64> = (0..3 * h * w).map(|i| vals[i % vals.len()]).collect();
    Image::new(Tensor3::from_vec(3, h, w, data).unwrap()).unwrap()
}

fn mask_from(h: usize, w: usize, bits: &[bool]) -> Mask {
    Mask::from_fn(h, w, |y, x| if bits[(y * w + x) % bits.len()] { 1.0 } else { 0.0 })
}

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (4usize..14, 4usize..14)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn binary_blend_is_exact(
        (h, w) in dims(),
        src in prop::collection::vec(0.0f64..=1.0, 7..50),
        gen in prop::collection::vec(0.0f64..=1.0, 7..50),
        bits in prop::collection::vec(any::<bool>(), 5..40),
    ) {
        let (s, g, m) = (image_from(h, w, &src), image_from(h, w, &gen), mask_from(h, w, &bits));
        let out = paste_blend(&s, &g, &m).unwrap();
        for y in 0..h {
            for x in 0..w {
                let want = if m.get(y, x) == 1.0 { g.pixel(y, x) } else { s.pixel(y, x) };
                prop_assert_eq!(out.pixel(y, x), want);
            }
        }
    }

    #[test]
    fn forward_noise_inverts(z0 in -3.0f64..3.0, eps in -3.0f64..3.0, a in 0.0005f64..0.9995) {
        let zt = forward_noise_with(&Tensor3::filled(1, 1, 1, z0), &Tensor3::filled(1, 1, 1, eps), a).unwrap();
        let z = zt.data()[0];
        prop_assert!(((z - a.sqrt() * z0) / (1.0 - a).sqrt() - eps).abs() < 1e-9);
        prop_assert!(((z - (1.0 - a).sqrt() * eps) / a.sqrt() - z0).abs() < 1e-9);
    }

    #[test]
    fn psnr_is_a_function_of_mse(
        (h, w) in dims(),
        a in prop::collection::vec(0.0f64..=1.0, 3..30),
        b in prop::collection::vec(0.0f64..=1.0, 3..30),
    ) {
        let (x, y) = (image_from(h, w, &a), image_from(h, w, &b));
        let m = mse(&x, &y, None).unwrap();
        let p = psnr(&x, &y, None).unwrap();
        if m == 0.0 {
            prop_assert_eq!(p, PSNR_CAP);
        } else {
            prop_assert!((p - 10.0 * (1.0 / m).log10()).abs() < 1e-12);
        }
        prop_assert_eq!(mse(&x, &y, None).unwrap(), mse(&y, &x, None).unwrap());
        let s = ssim(&x, &y, None).unwrap();
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&s));
    }

    #[test]
    fn region_metrics_ignore_masked_noise(
        (h, w) in (12usize..20, 12usize..20),
        base in prop::collection::vec(0.0f64..=1.0, 5..40),
        noise in prop::collection::vec(-1.0f64..=1.0, 5..40),
        bits in prop::collection::vec(any::<bool>(), 5..40),
    ) {
        let m = mask_from(h, w, &bits);
        prop_assume!(m.count_ones() < h * w);
        let a = image_from(h, w, &base);
        let mut b = a.clone();
        for y in 0..h {
            for x in 0..w {
                if m.get(y, x) == 1.0 {
                    let p = b.pixel(y, x);
                    let n = noise[(y * w + x) % noise.len()];
                    b.set_pixel(y, x, p.map(|v| (v + n).clamp(0.0, 1.0)));
                }
            }
        }
        let r = compute_fidelity(&a, &b, Some(&m)).unwrap();
        prop_assert_eq!(r.mse, 0.0);
        prop_assert_eq!(r.psnr, PSNR_CAP);
        prop_assert!((r.ssim - 1.0).abs() < 1e-12);
    }

    #[test]
    fn means_survive_duplication(vals in prop::collection::vec((1.0f64..60.0, 0.0f64..0.2, -1.0f64..1.0), 1..12)) {
        let items: Vec<ItemResult> = vals
            .iter()
            .enumerate()
            .map(|(i, &(p, m, s))| ItemResult {
                index: i,
                split: if i % 2 == 0 { Split::Inside } else { Split::Outside },
                caption: String::new(),
                metrics: Some(brushedit::evaluation::MetricReport {
                    psnr: p,
                    mse: m,
                    ssim: s,
                    lpips: None,
                    clip_sim: None,
                    region: brushedit::evaluation::MetricRegion::Unmasked,
                    n_images: 1,
                }),
                error: None,
            })
            .collect();
        let once = BenchReport::from_items("t", items.clone());
        let twice = BenchReport::from_items("t", items.iter().chain(&items).cloned().collect());
        for (a, b) in once.summaries.iter().zip(&twice.summaries) {
            prop_assert_eq!(&a.split, &b.split);
            prop_assert_eq!(2 * a.n, b.n);
            for (x, y) in [(a.psnr, b.psnr), (a.mse, b.mse), (a.ssim, b.ssim)] {
                prop_assert!((x.unwrap() - y.unwrap()).abs() < 1e-9);
            }
        }
    }
}

/// Fills the hole with a flat colour that depends on the seed.
struct FlatFill;

impl Inpainter for FlatFill {
    fn inpaint(&self, image: &Image, mask: &Mask, _caption: &str, seed: u64) -> brushedit::Result<Image> {
        let v = (seed % 7) as f64 / 7.0;
        let mut out = image.clone();
        for y in 0..image.height() {
            for x in 0..image.width() {
                if mask.get(y, x) == 1.0 {
                    out.set_pixel(y, x, [v, 1.0 - v, 0.5]);
                } else {
                    // perturb the kept region so the metrics are not trivial
                    out.set_pixel(y, x, image.pixel(y, x).map(|c| (c + 0.01 * v).min(1.0)));
                }
            }
        }
        Ok(out)
    }
}

fn two_item_manifest(dir: &std::path::Path) -> BenchmarkManifest {
    let a = common::scene_a();
    let b = common::scene_b();
    a.render().save_png(dir.join("a.png")).unwrap();
    b.render().save_png(dir.join("b.png")).unwrap();
    a.object_mask(0).unwrap().save_png(dir.join("a-mask.png")).unwrap();
    b.object_mask(1).unwrap().complement().save_png(dir.join("b-mask.png")).unwrap();
    let m = BenchmarkManifest {
        benchmark: "pair".into(),
        items: vec![
            ManifestItem { image_path: "a.png".into(), mask_path: "a-mask.png".into(), caption: "red circle".into(), split: Split::Inside },
            ManifestItem { image_path: "b.png".into(), mask_path: "b-mask.png".into(), caption: "sky".into(), split: Split::Outside },
        ],
        base_dir: dir.to_path_buf(),
    };
    m.save(dir.join("manifest.json")).unwrap();
    BenchmarkManifest::load(dir.join("manifest.json")).unwrap()
}

#[test]
fn two_item_benchmark_matches_hand_aggregation() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = two_item_manifest(dir.path());
    let report = run_benchmark(&manifest, &FlatFill, &BenchBackends::default(), &BenchConfig { seed: 3, jobs: 2 });
    let mut by_hand = Vec::new();
    for (i, item) in manifest.items.iter().enumerate() {
        let img = Image::load_png(dir.path().join(&item.image_path)).unwrap();
        let mask = Mask::load_png(dir.path().join(&item.mask_path)).unwrap();
        let out = FlatFill.inpaint(&img, &mask, &item.caption, 3 + i as u64).unwrap();
        by_hand.push(compute_fidelity(&out, &img, Some(&mask)).unwrap());
    }
    let all = report.summaries.iter().find(|s| s.split == "all").unwrap();
    assert_eq!(all.n, 2);
    assert!((all.psnr.unwrap() - (by_hand[0].psnr + by_hand[1].psnr) / 2.0).abs() < 1e-12);
    assert!((all.mse.unwrap() - (by_hand[0].mse + by_hand[1].mse) / 2.0).abs() < 1e-12);
    assert!((all.ssim.unwrap() - (by_hand[0].ssim + by_hand[1].ssim) / 2.0).abs() < 1e-12);
    assert_eq!(report.summaries[0].psnr, Some(by_hand[0].psnr));
    assert_eq!(report.summaries[1].psnr, Some(by_hand[1].psnr));

    let single = run_benchmark(&manifest, &FlatFill, &BenchBackends::default(), &BenchConfig { seed: 3, jobs: 1 });
    assert_eq!(single, report);
}

#[test]
fn missing_mask_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    two_item_manifest(dir.path());
    std::fs::remove_file(dir.path().join("b-mask.png")).unwrap();
    let err = BenchmarkManifest::load(dir.path().join("manifest.json")).unwrap_err();
    assert!(matches!(err, Error::Load { .. }));
    assert!(err.to_string().contains("b-mask.png"), "{err}");
}
