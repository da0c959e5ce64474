//! Turns a free-form instruction into an edit plan: edit type, target
//! object, mask and target caption, behind swappable language and detector
//! clients.

mod detector;
pub mod grammar;
mod remote;

use std::path::Path;
use std::sync::Arc;

use base64::Engine;
use serde::{Deserialize, Serialize};

pub use detector::{
    analyze, AliasDetector, ColorShapeDetector, Detection, DetectorClient, FixedDetector, Region, SceneAnalysis,
    SceneGraphDetector, ShapeQuery,
};
pub use remote::{ClientConfig, HttpDetectorClient, HttpMllmClient};

use crate::error::{Error, Result, Stage};
use crate::image::Image;
use crate::mask::Mask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditType {
    Addition,
    Removal,
    LocalEdit,
    BackgroundEdit,
}

impl EditType {
    pub const ALL: [EditType; 4] = [
        EditType::Addition,
        EditType::Removal,
        EditType::LocalEdit,
        EditType::BackgroundEdit,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EditType::Addition => "addition",
            EditType::Removal => "removal",
            EditType::LocalEdit => "local_edit",
            EditType::BackgroundEdit => "background_edit",
        }
    }
}

impl std::fmt::Display for EditType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Trimmed, non-empty instruction text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct EditInstruction(String);

impl EditInstruction {
    pub fn new(text: &str) -> Result<Self> {
        let t = text.trim();
        if t.is_empty() {
            return Err(Error::Validation("instruction is empty".into()));
        }
        Ok(Self(t.to_string()))
    }

    pub fn text(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for EditInstruction {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Self::new(&s)
    }
}

impl From<EditInstruction> for String {
    fn from(i: EditInstruction) -> String {
        i.0
    }
}

/// Output of instruction classification.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub edit_type: EditType,
    pub object: String,
    /// Object an addition is placed relative to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<String>,
    /// New attribute or object for local and background edits.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replacement: Option<String>,
    #[serde(default)]
    pub low_confidence: bool,
}

/// Language-model role: classify instructions, describe images, write
/// target captions.
pub trait MllmClient: Send + Sync {
    fn classify(&self, instruction: &str) -> Result<Classification>;

    fn describe(&self, image: &Image) -> Result<String>;

    fn caption(&self, classification: &Classification, descriptor: &str) -> Result<String>;
}

/// Deterministic offline client: keyword grammar for text, flat-color scene
/// analysis for images.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StubMllm {
    pub tolerance: f64,
}

impl Default for StubMllm {
    fn default() -> Self {
        Self { tolerance: 0.15 }
    }
}

impl MllmClient for StubMllm {
    fn classify(&self, instruction: &str) -> Result<Classification> {
        grammar::classify(instruction)
    }

    fn describe(&self, image: &Image) -> Result<String> {
        Ok(analyze(image, self.tolerance).caption())
    }

    fn caption(&self, classification: &Classification, descriptor: &str) -> Result<String> {
        grammar::compose(classification, descriptor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstructorConfig {
    /// Detections below this confidence are discarded.
    pub confidence_threshold: f64,
    /// Chebyshev radius of the band around an addition anchor.
    pub addition_band: usize,
}

impl Default for InstructorConfig {
    fn default() -> Self {
        Self {
            confidence_threshold: 0.5,
            addition_band: 3,
        }
    }
}

/// Everything the conductor needs to run one edit.
#[derive(Debug, Clone, PartialEq)]
pub struct EditPlan {
    pub edit_type: EditType,
    pub target_object: String,
    pub mask: Mask,
    pub target_caption: String,
    pub confidence: f64,
    pub low_confidence: bool,
}

/// JSON form of a plan; the mask is a PNG path or an inline data URL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub edit_type: EditType,
    pub target_object: String,
    pub mask_ref: String,
    pub target_caption: String,
    pub confidence: f64,
    #[serde(default)]
    pub low_confidence: bool,
}

pub const DATA_URL_PREFIX: &str = "data:image/png;base64,";

pub fn mask_data_url(mask: &Mask) -> Result<String> {
    let png = mask.encode_png()?;
    Ok(format!(
        "{DATA_URL_PREFIX}{}",
        base64::engine::general_purpose::STANDARD.encode(png)
    ))
}

/// Resolve a `mask_ref`: inline data URL, or a path relative to `base_dir`.
pub fn resolve_mask_ref(mask_ref: &str, base_dir: Option<&Path>) -> Result<Mask> {
    if let Some(b64) = mask_ref.strip_prefix(DATA_URL_PREFIX) {
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(b64.trim())
            .map_err(|e| Error::Validation(format!("mask_ref is not valid base64: {e}")))?;
        return Mask::decode_png(&bytes);
    }
    let p = Path::new(mask_ref);
    let full = match base_dir {
        Some(d) if p.is_relative() => d.join(p),
        _ => p.to_path_buf(),
    };
    Mask::load_png(full)
}

impl EditPlan {
    pub fn validate_for(&self, image: &Image) -> Result<()> {
        self.mask.ensure_dims(image.dims(), "plan mask vs image")?;
        if self.target_caption.trim().is_empty() {
            return Err(Error::Validation("target caption is empty".into()));
        }
        if self.target_object.trim().is_empty() {
            return Err(Error::Validation("target object is empty".into()));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::Validation(format!("confidence {} outside [0, 1]", self.confidence)));
        }
        Ok(())
    }

    pub fn to_record(&self, mask_ref: String) -> PlanRecord {
        PlanRecord {
            edit_type: self.edit_type,
            target_object: self.target_object.clone(),
            mask_ref,
            target_caption: self.target_caption.clone(),
            confidence: self.confidence,
            low_confidence: self.low_confidence,
        }
    }

    pub fn to_inline_record(&self) -> Result<PlanRecord> {
        Ok(self.to_record(mask_data_url(&self.mask)?))
    }

    pub fn from_record(rec: &PlanRecord, base_dir: Option<&Path>) -> Result<Self> {
        Ok(Self {
            edit_type: rec.edit_type,
            target_object: rec.target_object.clone(),
            mask: resolve_mask_ref(&rec.mask_ref, base_dir)?,
            target_caption: rec.target_caption.clone(),
            confidence: rec.confidence,
            low_confidence: rec.low_confidence,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_inline_record()?)?)
    }
}

pub fn classify_edit(ins: &EditInstruction, mllm: &dyn MllmClient) -> Result<Classification> {
    let c = mllm.classify(ins.text())?;
    if c.object.trim().is_empty() {
        return Err(Error::Validation(format!("no target object found in {:?}", ins.text())));
    }
    Ok(c)
}

/// Selected mask and its detector confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct Located {
    pub mask: Mask,
    pub confidence: f64,
    pub fallback: bool,
    /// Detector label of the chosen object, when one was picked.
    pub label: Option<String>,
}

fn best_detection(dets: Vec<Detection>, threshold: f64, query: &str) -> Result<Detection> {
    dets.into_iter()
        .filter(|d| d.confidence >= threshold)
        .reduce(|best, d| {
            let better = d.confidence > best.confidence
                || (d.confidence == best.confidence && d.mask.count_ones() > best.mask.count_ones());
            if better {
                d
            } else {
                best
            }
        })
        .ok_or_else(|| Error::NotFound(format!("no detection for {query:?}")))
}

fn check_detections(image: &Image, dets: &[Detection]) -> Result<()> {
    for d in dets {
        d.mask.ensure_dims(image.dims(), "detection mask vs image")?;
        if !(0.0..=1.0).contains(&d.confidence) {
            return Err(Error::Model(format!("detector confidence {} outside [0, 1]", d.confidence)));
        }
    }
    Ok(())
}

/// Find the region to edit.
///
/// Removal and local edits take the best detection of the object; background
/// edits take the complement of all foreground detections; additions take a
/// band around the anchor, or a centered box when there is none.
pub fn locate_target(
    image: &Image,
    c: &Classification,
    det: &dyn DetectorClient,
    cfg: &InstructorConfig,
) -> Result<Located> {
    let (h, w) = image.dims();
    match c.edit_type {
        EditType::Removal | EditType::LocalEdit => {
            let dets = det.detect(image, &c.object)?;
            check_detections(image, &dets)?;
            let d = best_detection(dets, cfg.confidence_threshold, &c.object)?;
            Ok(Located {
                mask: d.mask.binarized(),
                confidence: d.confidence,
                fallback: false,
                label: Some(d.label),
            })
        }
        EditType::BackgroundEdit => {
            let dets = det.detect(image, "foreground")?;
            check_detections(image, &dets)?;
            let mut fg = Mask::zeros(h, w);
            let mut conf: f64 = 1.0;
            for d in dets.iter().filter(|d| d.confidence >= cfg.confidence_threshold) {
                fg = fg.union(&d.mask.binarized())?;
                conf = conf.min(d.confidence);
            }
            Ok(Located {
                mask: fg.complement(),
                confidence: conf,
                fallback: false,
                label: None,
            })
        }
        EditType::Addition => match &c.anchor {
            Some(anchor) => {
                let dets = det.detect(image, anchor)?;
                check_detections(image, &dets)?;
                let d = best_detection(dets, cfg.confidence_threshold, anchor)?;
                let a = d.mask.binarized();
                let band = a.dilate(cfg.addition_band).difference(&a)?;
                Ok(Located {
                    mask: band,
                    confidence: d.confidence,
                    fallback: false,
                    label: None,
                })
            }
            None => {
                let (bh, bw) = ((h / 2).max(1), (w / 2).max(1));
                let (y0, x0) = ((h - bh) / 2, (w - bw) / 2);
                let mask = Mask::from_fn(h, w, |y, x| {
                    if (y0..y0 + bh).contains(&y) && (x0..x0 + bw).contains(&x) {
                        1.0
                    } else {
                        0.0
                    }
                });
                Ok(Located {
                    mask,
                    confidence: 0.0,
                    fallback: true,
                    label: None,
                })
            }
        },
    }
}

pub fn compose_caption(c: &Classification, descriptor: &str, mllm: &dyn MllmClient) -> Result<String> {
    if c.object.trim().is_empty() {
        return Err(Error::Validation("target object is empty".into()));
    }
    let caption = mllm.caption(c, descriptor)?;
    if caption.trim().is_empty() {
        return Err(Error::Generation("client returned an empty caption".into()));
    }
    Ok(caption)
}

/// Language client, detector and thresholds bundled together.
#[derive(Clone)]
pub struct Instructor {
    pub mllm: Arc<dyn MllmClient>,
    pub detector: Arc<dyn DetectorClient>,
    pub config: InstructorConfig,
}

impl Default for Instructor {
    fn default() -> Self {
        Self::offline()
    }
}

impl Instructor {
    /// Stub language client plus the flat-color shape detector.
    pub fn offline() -> Self {
        Self {
            mllm: Arc::new(StubMllm::default()),
            detector: Arc::new(ColorShapeDetector::default()),
            config: InstructorConfig::default(),
        }
    }

    /// Hosted clients from `{prefix}_MLLM_*` and `{prefix}_DETECTOR_*`
    /// variables. A client whose URL is unset falls back to its offline
    /// counterpart unless `require` is set.
    pub fn from_env(prefix: &str, require: bool) -> Result<Self> {
        let mut ins = Self::offline();
        match ClientConfig::from_env(&format!("{prefix}_MLLM"))? {
            Some(cfg) => ins.mllm = Arc::new(HttpMllmClient::new(cfg)?),
            None if require => return Err(Error::Config(format!("{prefix}_MLLM_URL is not set"))),
            None => {}
        }
        match ClientConfig::from_env(&format!("{prefix}_DETECTOR"))? {
            Some(cfg) => ins.detector = Arc::new(HttpDetectorClient::new(cfg)?),
            None if require => return Err(Error::Config(format!("{prefix}_DETECTOR_URL is not set"))),
            None => {}
        }
        Ok(ins)
    }

    /// Classify, locate, caption. Errors carry the failing stage.
    pub fn build_plan(&self, ins: &EditInstruction, image: &Image) -> Result<EditPlan> {
        build_plan(ins, image, self.mllm.as_ref(), self.detector.as_ref(), &self.config)
    }
}

pub fn build_plan(
    ins: &EditInstruction,
    image: &Image,
    mllm: &dyn MllmClient,
    det: &dyn DetectorClient,
    cfg: &InstructorConfig,
) -> Result<EditPlan> {
    let c = classify_edit(ins, mllm).map_err(|e| e.at_stage(Stage::ClassifyEdit))?;
    let located = locate_target(image, &c, det, cfg).map_err(|e| e.at_stage(Stage::LocateTarget))?;
    // caption the object under the name the detector gave it
    let named = match &located.label {
        Some(l) if !l.is_empty() && *l != c.object => Classification { object: l.clone(), ..c.clone() },
        _ => c.clone(),
    };
    let caption = mllm
        .describe(image)
        .and_then(|desc| compose_caption(&named, &desc, mllm))
        .map_err(|e| e.at_stage(Stage::ComposeCaption))?;
    let plan = EditPlan {
        edit_type: c.edit_type,
        target_object: c.object,
        mask: located.mask,
        target_caption: caption,
        confidence: located.confidence,
        low_confidence: c.low_confidence || located.fallback,
    };
    plan.validate_for(image).map_err(|e| e.at_stage(Stage::ComposeCaption))?;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Color, SceneGraph, SceneObject, ShapeKind};

    fn scene() -> SceneGraph {
        SceneGraph {
            height: 16,
            width: 16,
            background: Color::White,
            objects: vec![
                SceneObject { kind: ShapeKind::Circle, color: Color::Red, cy: 4, cx: 4, size: 3 },
                SceneObject { kind: ShapeKind::Square, color: Color::Blue, cy: 11, cx: 11, size: 2 },
            ],
        }
    }

    fn plan(text: &str) -> Result<EditPlan> {
        let g = scene();
        Instructor::offline().build_plan(&EditInstruction::new(text)?, &g.render())
    }

    #[test]
    fn removal_plan() {
        let p = plan("remove the red circle").unwrap();
        assert_eq!(p.edit_type, EditType::Removal);
        assert_eq!(p.mask, scene().object_mask(0).unwrap());
        assert_eq!(p.confidence, 1.0);
        assert_eq!(p.target_caption, "a blue square on a white background");
    }

    #[test]
    fn background_plan_is_complement_of_foreground() {
        let p = plan("change the background to black").unwrap();
        let g = scene();
        let fg = g.object_mask(0).unwrap().union(&g.object_mask(1).unwrap()).unwrap();
        assert_eq!(p.mask, fg.complement());
        assert_eq!(p.target_caption, "a red circle and a blue square on a black background");
    }

    #[test]
    fn addition_band_excludes_anchor() {
        let p = plan("add a green triangle next to the blue square").unwrap();
        let anchor = scene().object_mask(1).unwrap();
        assert!(p.mask.count_ones() > 0);
        for (a, b) in p.mask.data().iter().zip(anchor.data()) {
            assert!(!(*a == 1.0 && *b == 1.0));
        }
        let free = plan("add a green triangle").unwrap();
        assert!(free.low_confidence);
    }

    #[test]
    fn absent_object_tagged_with_locate_stage() {
        let e = plan("remove the unicorn").unwrap_err();
        assert_eq!(e.stage(), Some(Stage::LocateTarget));
        assert!(matches!(e.root(), Error::NotFound(_)));
    }

    #[test]
    fn highest_confidence_then_larger_area() {
        let img = Image::filled(8, 8, [1.0; 3]);
        let small = Mask::from_fn(8, 8, |y, x| if y < 2 && x < 2 { 1.0 } else { 0.0 });
        let big = Mask::from_fn(8, 8, |y, _| if y >= 4 { 1.0 } else { 0.0 });
        let det = FixedDetector {
            detections: vec![
                Detection { label: "a".into(), mask: big.clone(), confidence: 0.7 },
                Detection { label: "b".into(), mask: small.clone(), confidence: 0.9 },
            ],
        };
        let c = grammar::classify("remove the thing").unwrap();
        let l = locate_target(&img, &c, &det, &InstructorConfig::default()).unwrap();
        assert_eq!((l.mask, l.confidence), (small.clone(), 0.9));

        let tie = FixedDetector {
            detections: vec![
                Detection { label: "a".into(), mask: small, confidence: 0.8 },
                Detection { label: "b".into(), mask: big.clone(), confidence: 0.8 },
            ],
        };
        assert_eq!(locate_target(&img, &c, &tie, &InstructorConfig::default()).unwrap().mask, big);
    }

    #[test]
    fn plan_json_round_trip() {
        let p = plan("make the red circle yellow").unwrap();
        let rec = p.to_inline_record().unwrap();
        let v = serde_json::to_value(&rec).unwrap();
        for k in ["edit_type", "target_object", "mask_ref", "target_caption", "confidence"] {
            assert!(v.get(k).is_some(), "missing {k}");
        }
        assert_eq!(v["edit_type"], "local_edit");
        let back = EditPlan::from_record(&serde_json::from_value(v).unwrap(), None).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn stub_plans_are_deterministic() {
        let a = plan("remove the blue square").unwrap().to_json().unwrap();
        let b = plan("remove the blue square").unwrap().to_json().unwrap();
        assert_eq!(a, b);
    }
}
