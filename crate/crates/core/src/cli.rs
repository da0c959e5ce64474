//! Command-line front end. Exit codes: 0 ok, 2 validation, 3 not found,
//! 4 model or stage failure. Failures print one `ApiError` JSON object on
//! stderr.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::branch::InjectionMode;
use crate::conductor::{apply_overrides, execute_plan, Overrides, RoundParams};
use crate::error::{ApiError, Error, Result};
use crate::evaluation::{
    compute_fidelity, import_dir, import_mapping_file, run_benchmark, BenchBackends, BenchConfig, BenchmarkManifest,
    BundleInpainter, Split, TokenEmbeddingBackend,
};
use crate::image::Image;
use crate::instructor::{AliasDetector, EditInstruction, EditType, Instructor, PlanRecord};
use crate::mask::Mask;
use crate::service::{load_bundle, serve, ServiceConfig};
use crate::training::{run_recipe, save_outcome, TrainRecipe};

/// Environment prefix for hosted client settings.
pub const ENV_PREFIX: &str = "BRUSHEDIT";

#[derive(Debug, Parser)]
#[command(name = "brushedit", version, about = "Instruction-driven image editing with a dual-branch inpainter")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Clients {
    /// Offline grammar and flat-color detector.
    Stub,
    /// Hosted endpoints from BRUSHEDIT_MLLM_* and BRUSHEDIT_DETECTOR_*.
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ImportLayout {
    /// `mapping_file.json` with run-length masks.
    Mapping,
    /// `images/`, `masks/` and `captions.json`.
    Dir,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the edit plan for an instruction as JSON.
    Plan {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        instruction: String,
        #[arg(long, value_enum, default_value = "stub")]
        clients: Clients,
        /// Detector query alias, e.g. `rose=red circle`. Repeatable.
        #[arg(long = "alias", value_parser = parse_alias)]
        aliases: Vec<(String, String)>,
        /// Also write the plan mask here.
        #[arg(long)]
        mask_out: Option<PathBuf>,
    },
    /// Plan and execute one edit.
    Edit {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        instruction: String,
        /// Replace the planned mask.
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Replace the planned target caption.
        #[arg(long)]
        caption: Option<String>,
        #[arg(long, default_value_t = 1.0)]
        w: f64,
        #[arg(long, default_value_t = 7)]
        blur: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long, default_value_t = 7.5)]
        guidance: f64,
        #[arg(long, value_enum, default_value = "full")]
        mode: ModeArg,
        /// Trained bundle directory; untrained weights when omitted.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "stub")]
        clients: Clients,
        #[arg(long = "alias", value_parser = parse_alias)]
        aliases: Vec<(String, String)>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pre-train the base and train the branch from a recipe file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads per batch (results are unaffected).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Run a benchmark manifest and write the summary CSV.
    Bench {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
        /// Full per-item report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long, default_value_t = 7.5)]
        guidance: f64,
        /// Paste results back through the blurred mask before scoring.
        #[arg(long)]
        blend: bool,
        /// Fill clip_sim with the offline token embedding.
        #[arg(long)]
        clip_stub: bool,
    },
    /// Fidelity metrics between two images as JSON.
    Metrics {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Score only where this mask is 0.
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Convert a benchmark layout into a manifest.
    Import {
        #[arg(long, value_enum)]
        layout: ImportLayout,
        #[arg(long)]
        root: PathBuf,
        /// Output directory (mapping layout only).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        name: String,
        /// Split for the dir layout.
        #[arg(long, value_enum, default_value = "inside")]
        split: SplitArg,
    },
    /// Run the HTTP service.
    Serve {
        /// JSON service config; BRUSHEDIT_* variables override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "stub")]
        clients: Clients,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Full,
    Half,
    Controlnet,
}

impl From<ModeArg> for InjectionMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Full => InjectionMode::Full,
            ModeArg::Half => InjectionMode::Half,
            ModeArg::Controlnet => InjectionMode::ControlNet,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Inside,
    Outside,
}

fn parse_alias(s: &str) -> std::result::Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() && !v.trim().is_empty() => Ok((k.trim().to_lowercase(), v.trim().to_string())),
        _ => Err(format!("expected NAME=QUERY, got {s:?}")),
    }
}

fn instructor(clients: Clients, aliases: Vec<(String, String)>) -> Result<Instructor> {
    let mut ins = match clients {
        Clients::Stub => Instructor::offline(),
        Clients::Remote => Instructor::from_env(ENV_PREFIX, true)?,
    };
    if !aliases.is_empty() {
        ins.detector = Arc::new(AliasDetector {
            inner: ins.detector,
            aliases: aliases.into_iter().collect::<BTreeMap<_, _>>(),
        });
    }
    Ok(ins)
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

#[derive(Serialize)]
struct EditSummary {
    out: PathBuf,
    plan: PlanRecord,
    effective_caption: String,
    edit_type: EditType,
    params: RoundParams,
    denoiser_calls: usize,
    result_digest: String,
}

fn write_mask_beside(out: &Path, mask: &Mask) -> Result<PathBuf> {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let p = out.with_file_name(format!("{stem}-mask.png"));
    mask.save_png(&p)?;
    Ok(p)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Plan {
            image,
            instruction,
            clients,
            aliases,
            mask_out,
        } => {
            let img = Image::load_png(&image)?;
            let plan = instructor(clients, aliases)?.build_plan(&EditInstruction::new(&instruction)?, &img)?;
            if let Some(p) = mask_out {
                plan.mask.save_png(p)?;
            }
            print_json(&plan.to_inline_record()?)
        }
        Command::Edit {
            image,
            instruction,
            mask,
            caption,
            w,
            blur,
            seed,
            steps,
            guidance,
            mode,
            ckpt,
            clients,
            aliases,
            out,
        } => {
            let img = Image::load_png(&image)?.quantized();
            let plan = instructor(clients, aliases)?.build_plan(&EditInstruction::new(&instruction)?, &img)?;
            let overrides = Overrides {
                mask: mask.map(Mask::load_png).transpose()?,
                caption,
                w: Some(w),
                blur_radius: Some(blur),
            };
            let params = RoundParams {
                w,
                mode: mode.into(),
                blur_radius: blur,
                steps,
                guidance_scale: guidance,
                seed,
            };
            params.validate()?;
            let (effective, params) = apply_overrides(&plan, &params, &overrides, img.dims())?;
            if ckpt.is_none() {
                eprintln!("warning: no --ckpt given, editing with untrained weights");
            }
            let bundle = load_bundle(ckpt.as_deref(), 0)?;
            let exec = execute_plan(&bundle, &img, &effective, &params)?;
            exec.result.save_png(&out)?;
            let mask_path = write_mask_beside(&out, &effective.mask)?;
            print_json(&EditSummary {
                out,
                plan: plan.to_record(mask_path.display().to_string()),
                effective_caption: effective.target_caption,
                edit_type: plan.edit_type,
                params,
                denoiser_calls: exec.denoiser_calls,
                result_digest: exec.result.digest(),
            })
        }
        Command::Train { config, out, jobs } => {
            let mut recipe = TrainRecipe::load(&config)?;
            if let Some(j) = jobs {
                recipe.base.jobs = j;
                recipe.branch.jobs = j;
            }
            let outcome = run_recipe(&recipe)?;
            save_outcome(&outcome, &out)?;
            let s = outcome.branch.curve.smoothed(25);
            print_json(&serde_json::json!({
                "out": out,
                "base_final_loss": outcome.base_curve.last(),
                "branch_final_loss": outcome.branch.curve.last(),
                "branch_smoothed_first": s.first(),
                "branch_smoothed_last": s.last(),
                "base_checksum": outcome.branch.base_checksum,
            }))
        }
        Command::Bench {
            manifest,
            ckpt,
            report,
            json,
            jobs,
            seed,
            steps,
            guidance,
            blend,
            clip_stub,
        } => {
            let manifest = BenchmarkManifest::load(&manifest)?;
            let bundle = load_bundle(ckpt.as_deref(), 0)?;
            let inpainter = BundleInpainter {
                bundle: &bundle,
                params: RoundParams {
                    steps,
                    guidance_scale: guidance,
                    ..RoundParams::default()
                },
                blend,
            };
            let stub = TokenEmbeddingBackend::default();
            let backends = BenchBackends {
                perceptual: None,
                embedding: clip_stub.then_some(&stub as _),
            };
            let r = run_benchmark(&manifest, &inpainter, &backends, &BenchConfig { seed, jobs });
            fs::write(&report, r.to_csv())?;
            if let Some(j) = json {
                fs::write(j, serde_json::to_vec_pretty(&r)?)?;
            }
            print!("{}", r.to_csv());
            if r.failed() > 0 {
                eprintln!("warning: {} item(s) failed", r.failed());
            }
            Ok(())
        }
        Command::Metrics { a, b, mask } => {
            let (a, b) = (Image::load_png(&a)?, Image::load_png(&b)?);
            let mask = mask.map(Mask::load_png).transpose()?.map(|m| m.binarized());
            print_json(&compute_fidelity(&a, &b, mask.as_ref())?)
        }
        Command::Import {
            layout,
            root,
            out,
            name,
            split,
        } => {
            let m = match layout {
                ImportLayout::Mapping => {
                    let out = out.ok_or_else(|| Error::Validation("--out is required for the mapping layout".into()))?;
                    import_mapping_file(&root, &out, &name)?
                }
                ImportLayout::Dir => {
                    let split = match split {
                        SplitArg::Inside => Split::Inside,
                        SplitArg::Outside => Split::Outside,
                    };
                    import_dir(&root, &name, split)?
                }
            };
            print_json(&serde_json::json!({ "benchmark": m.benchmark, "items": m.items.len() }))
        }
        Command::Serve {
            config,
            port,
            store,
            ckpt,
            clients,
        } => {
            let mut cfg = ServiceConfig::load(config.as_deref())?;
            if let Some(p) = port {
                cfg.port = p;
            }
            if let Some(s) = store {
                cfg.store = s;
            }
            if ckpt.is_some() {
                cfg.ckpt = ckpt;
            }
            let ins = match clients {
                Clients::Stub => Instructor::from_env(ENV_PREFIX, false)?,
                Clients::Remote => Instructor::from_env(ENV_PREFIX, true)?,
            };
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            rt.block_on(serve(cfg, ins))
        }
    }
}

/// Parse, run, and map failures to an exit code with an `ApiError` on stderr.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            let api = ApiError::from(&e);
            eprintln!("{}", serde_json::to_string(&api).unwrap_or_else(|_| api.message.clone()));
            api.exit_code()
        }
    }
}
