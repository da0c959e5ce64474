//! Attention-free branch over `[z_t, masked-image latent, mask]` whose
//! per-layer features are added into a frozen base through zero-initialised
//! 1×1 links, plus the sampling entry points built on it.

mod checkpoint;
mod inpaint;
mod network;

pub use checkpoint::{load_base, load_branch, save_base, save_branch, BaseCheckpoint, BranchCheckpoint};
pub use inpaint::{
    base_sample, blended_latent_inpaint, branch_loss_and_grad, inpaint_sample, validate_scale,
    DiffusionContext, DualBranchDenoiser, InjectionConfig, InjectionMode,
};
pub use network::{
    assemble_branch_input, inject, BranchInput, BranchNetwork, BranchSignature, ZeroLinks,
};
