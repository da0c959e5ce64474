//! Converters from public benchmark layouts to [`BenchmarkManifest`].

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;

use super::bench::{BenchmarkManifest, ManifestItem, Split};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::mask::Mask;

/// Decode a run-length mask given as flat `[start, len, start, len, ...]`
/// offsets into the row-major pixel array. The outermost rows and columns
/// are forced on to absorb boundary annotation errors.
pub fn decode_rle(runs: &[u64], height: usize, width: usize) -> Result<Mask> {
    if !runs.len().is_multiple_of(2) {
        return Err(Error::Validation(format!("odd run-length array ({} values)", runs.len())));
    }
    let n = height * width;
    let mut data = vec![0.0; n];
    for pair in runs.chunks_exact(2) {
        let start = pair[0] as usize;
        if start >= n {
            continue;
        }
        let end = start + (pair[1] as usize).min(n - start);
        data[start..end].iter_mut().for_each(|v| *v = 1.0);
    }
    let mut m = Mask::from_vec(height, width, data)?;
    for x in 0..width {
        m.set(0, x, 1.0);
        m.set(height - 1, x, 1.0);
    }
    for y in 0..height {
        m.set(y, 0, 1.0);
        m.set(y, width - 1, 1.0);
    }
    Ok(m)
}

/// Drop the `[` `]` emphasis markers used in edited prompts.
fn clean_prompt(s: &str) -> String {
    s.replace(['[', ']'], "").split_whitespace().collect::<Vec<_>>().join(" ")
}

fn str_field<'a>(entry: &'a Value, keys: &[&str]) -> Option<&'a str> {
    keys.iter().find_map(|k| entry.get(*k).and_then(Value::as_str))
}

fn runs(entry: &Value, key: &str) -> Option<Vec<u64>> {
    entry.get(key)?.as_array()?.iter().map(Value::as_u64).collect()
}

/// Import a `mapping_file.json` style benchmark (PIE-Bench, BrushBench).
///
/// Each entry needs `image_path` (relative to `root/annotation_images`, or
/// to `root`), a caption (`editing_prompt`, `caption` or `original_prompt`)
/// and an RLE mask under `mask`, `inpainting_mask` or `outpainting_mask`.
/// `outpainting_mask` entries become the outside split. Images are
/// re-encoded as PNG under `out_dir`.
pub fn import_mapping_file(root: &Path, out_dir: &Path, benchmark: &str) -> Result<BenchmarkManifest> {
    let path = root.join("mapping_file.json");
    let bytes = fs::read(&path).map_err(|e| Error::load(&path, e))?;
    let map: BTreeMap<String, Value> = serde_json::from_slice(&bytes).map_err(|e| Error::load(&path, e))?;
    fs::create_dir_all(out_dir.join("images"))?;
    fs::create_dir_all(out_dir.join("masks"))?;
    let mut items = Vec::new();
    for (key, entry) in &map {
        let rel = str_field(entry, &["image_path"])
            .ok_or_else(|| Error::load(&path, format!("entry {key} has no image_path")))?;
        let img_path = [root.join("annotation_images").join(rel), root.join(rel)]
            .into_iter()
            .find(|p| p.is_file())
            .ok_or_else(|| Error::load(root.join(rel), "referenced file does not exist"))?;
        let caption = clean_prompt(
            str_field(entry, &["editing_prompt", "caption", "original_prompt"])
                .ok_or_else(|| Error::load(&path, format!("entry {key} has no caption")))?,
        );
        let image = Image::load_png(&img_path)?;
        let (h, w) = image.dims();
        let stem = key.replace(['/', '\\'], "_");
        let image_rel = PathBuf::from("images").join(format!("{stem}.png"));
        image.save_png(out_dir.join(&image_rel))?;
        for (mask_key, split) in [
            ("mask", Split::Inside),
            ("inpainting_mask", Split::Inside),
            ("outpainting_mask", Split::Outside),
        ] {
            let Some(r) = runs(entry, mask_key) else { continue };
            let mask = decode_rle(&r, h, w)?;
            let mask_rel = PathBuf::from("masks").join(format!("{stem}-{mask_key}.png"));
            mask.save_png(out_dir.join(&mask_rel))?;
            items.push(ManifestItem {
                image_path: image_rel.clone(),
                mask_path: mask_rel,
                caption: caption.clone(),
                split,
            });
        }
    }
    if items.is_empty() {
        return Err(Error::load(&path, "no entries with a mask"));
    }
    let m = BenchmarkManifest {
        benchmark: benchmark.to_string(),
        items,
        base_dir: out_dir.to_path_buf(),
    };
    m.save(out_dir.join("manifest.json"))?;
    Ok(m)
}

/// Import a plain layout: `images/NAME.(png|jpg)`, `masks/NAME.png` and
/// `captions.json` mapping NAME to caption. Items without a mask are skipped.
pub fn import_dir(root: &Path, benchmark: &str, split: Split) -> Result<BenchmarkManifest> {
    let cap_path = root.join("captions.json");
    let bytes = fs::read(&cap_path).map_err(|e| Error::load(&cap_path, e))?;
    let captions: BTreeMap<String, String> =
        serde_json::from_slice(&bytes).map_err(|e| Error::load(&cap_path, e))?;
    let mut entries: Vec<PathBuf> = fs::read_dir(root.join("images"))
        .map_err(|e| Error::load(root.join("images"), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    let mut items = Vec::new();
    for p in entries {
        let Some(stem) = p.file_stem().and_then(|s| s.to_str()) else { continue };
        let mask_rel = PathBuf::from("masks").join(format!("{stem}.png"));
        if !root.join(&mask_rel).is_file() {
            continue;
        }
        let caption = captions
            .get(stem)
            .ok_or_else(|| Error::load(&cap_path, format!("no caption for {stem}")))?;
        items.push(ManifestItem {
            image_path: p.strip_prefix(root).unwrap_or(&p).to_path_buf(),
            mask_path: mask_rel,
            caption: caption.clone(),
            split,
        });
    }
    if items.is_empty() {
        return Err(Error::load(root, "no image/mask pairs found"));
    }
    let m = BenchmarkManifest {
        benchmark: benchmark.to_string(),
        items,
        base_dir: root.to_path_buf(),
    };
    m.save(root.join("manifest.json"))?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rle_runs_and_border() {
        let m = decode_rle(&[14, 3, 100, 50], 6, 6).unwrap();
        // interior of row 2 (offsets 14..17 => (2,2),(2,3),(2,4))
        assert_eq!(m.get(2, 2), 1.0);
        assert_eq!(m.get(2, 4), 1.0);
        assert_eq!(m.get(3, 3), 0.0);
        assert!((0..6).all(|i| m.get(0, i) == 1.0 && m.get(i, 5) == 1.0));
        assert!(decode_rle(&[1], 4, 4).is_err());
    }

    #[test]
    fn mapping_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("pie");
        fs::create_dir_all(root.join("annotation_images/0_random")).unwrap();
        Image::filled(8, 8, [0.5; 3]).save_png(root.join("annotation_images/0_random/a.png")).unwrap();
        let mapping = serde_json::json!({
            "000": {"image_path": "0_random/a.png", "editing_prompt": "a [red] cat", "mask": [27, 2]}
        });
        fs::write(root.join("mapping_file.json"), mapping.to_string()).unwrap();
        let out = dir.path().join("out");
        import_mapping_file(&root, &out, "pie").unwrap();
        let m = BenchmarkManifest::load(out.join("manifest.json")).unwrap();
        assert_eq!(m.items.len(), 1);
        assert_eq!(m.items[0].caption, "a red cat");
        let mask = Mask::load_png(m.resolve(&m.items[0].mask_path)).unwrap();
        assert_eq!((mask.get(3, 3), mask.get(3, 4), mask.get(3, 5)), (1.0, 1.0, 0.0));
    }

    #[test]
    fn dir_import() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        fs::create_dir_all(root.join("images")).unwrap();
        fs::create_dir_all(root.join("masks")).unwrap();
        for n in ["a", "b"] {
            Image::filled(4, 4, [0.1; 3]).save_png(root.join(format!("images/{n}.png"))).unwrap();
        }
        Mask::ones(4, 4).save_png(root.join("masks/a.png")).unwrap();
        fs::write(root.join("captions.json"), r#"{"a": "a cat", "b": "a dog"}"#).unwrap();
        let m = import_dir(root, "dir", Split::Outside).unwrap();
        assert_eq!(m.items.len(), 1);
        assert_eq!(m.items[0].split, Split::Outside);
        BenchmarkManifest::load(root.join("manifest.json")).unwrap();
    }
}
