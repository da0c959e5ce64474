//! Background-fidelity metrics, pluggable perceptual and text-alignment
//! backends, and manifest-driven benchmark runs.
//!
//! Metrics are reported unscaled (no ×10^k factors).

mod backends;
mod bench;
mod import;
mod metrics;

pub use backends::{cosine, text_alignment, EmbeddingBackend, PerceptualBackend, TokenEmbeddingBackend};
pub use bench::{
    run_benchmark, summarize, BenchBackends, BenchConfig, BenchReport, BenchmarkManifest, BundleInpainter,
    Inpainter, ItemResult, ManifestItem, Split, SplitSummary, CSV_HEADER,
};
pub use import::{decode_rle, import_dir, import_mapping_file};
pub use metrics::{
    compute_fidelity, compute_fidelity_masked, mse, psnr, psnr_from_mse, ssim, MetricRegion, MetricReport,
    PSNR_CAP, SSIM_SIGMA, SSIM_WINDOW,
};
