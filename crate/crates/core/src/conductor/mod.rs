//! Executes edit plans: masked-image inpainting, blur and paste-back, and
//! persistent multi-round sessions.

mod bundle;
mod codec;
mod execute;
mod session;

pub use bundle::{BundleConfig, InpaintOutput, ModelBundle, BASE_FILE, BRANCH_FILE, BUNDLE_FILE};
pub use codec::{IdentityCodec, LatentCodec, PoolingCodec};
pub use execute::{apply_overrides, execute_plan, Execution, Overrides, RoundParams};
pub use session::{EditRound, EditSession, OverrideRecord, RoundStatus, SessionStore, StoredPlan};
