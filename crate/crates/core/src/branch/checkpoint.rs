use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{BranchNetwork, BranchSignature};
use crate::error::{Error, Result};
use crate::model::ConvDenoiser;
use crate::nn::Parameters;

pub const BRANCH_FORMAT: &str = "brushedit.branch";
pub const BASE_FORMAT: &str = "brushedit.base";
pub const VERSION: u32 = 1;

/// On-disk branch: version tag, shape signature, checksum of the base it was
/// trained against, and the parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BranchCheckpoint {
    pub format: String,
    pub version: u32,
    pub signature: BranchSignature,
    #[serde(default)]
    pub base_checksum: Option<String>,
    pub network: BranchNetwork,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaseCheckpoint {
    pub format: String,
    pub version: u32,
    pub checksum: String,
    pub network: ConvDenoiser,
}

fn check_header(path: &Path, format: &str, version: u32, want: &str) -> Result<()> {
    if format != want {
        return Err(Error::load(path, format!("expected format {want:?}, found {format:?}")));
    }
    if version != VERSION {
        return Err(Error::load(path, format!("unsupported version {version}, expected {VERSION}")));
    }
    Ok(())
}

pub fn save_branch(
    path: impl AsRef<Path>,
    branch: &BranchNetwork,
    base_checksum: Option<String>,
) -> Result<()> {
    let ckpt = BranchCheckpoint {
        format: BRANCH_FORMAT.into(),
        version: VERSION,
        signature: branch.signature(),
        base_checksum,
        network: branch.clone(),
    };
    fs::write(path, serde_json::to_vec(&ckpt)?)?;
    Ok(())
}

/// Load a branch and verify its stored signature against the parameters.
pub fn load_branch(path: impl AsRef<Path>) -> Result<BranchCheckpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::load(path, e.to_string()))?;
    let ckpt: BranchCheckpoint =
        serde_json::from_slice(&bytes).map_err(|e| Error::load(path, e.to_string()))?;
    check_header(path, &ckpt.format, ckpt.version, BRANCH_FORMAT)?;
    let actual = ckpt.network.signature();
    if actual != ckpt.signature {
        return Err(Error::load(
            path,
            format!("signature mismatch: header {:?}, parameters {:?}", ckpt.signature, actual),
        ));
    }
    Ok(ckpt)
}

pub fn save_base(path: impl AsRef<Path>, base: &ConvDenoiser) -> Result<()> {
    let ckpt = BaseCheckpoint {
        format: BASE_FORMAT.into(),
        version: VERSION,
        checksum: base.checksum(),
        network: base.clone(),
    };
    fs::write(path, serde_json::to_vec(&ckpt)?)?;
    Ok(())
}

pub fn load_base(path: impl AsRef<Path>) -> Result<ConvDenoiser> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::load(path, e.to_string()))?;
    let ckpt: BaseCheckpoint =
        serde_json::from_slice(&bytes).map_err(|e| Error::load(path, e.to_string()))?;
    check_header(path, &ckpt.format, ckpt.version, BASE_FORMAT)?;
    if ckpt.network.checksum() != ckpt.checksum {
        return Err(Error::load(path, "parameter checksum mismatch"));
    }
    ckpt.network.config().validate()?;
    Ok(ckpt.network)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn branch_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base = ConvDenoiser::random(ModelConfig::default(), &mut rng).unwrap();
        let mut branch = BranchNetwork::from_base(&base);
        branch.links_mut().get_mut(2).unwrap().bias[0] = 0.1 + 0.2;
        let p = dir.path().join("b.json");
        save_branch(&p, &branch, Some(base.checksum())).unwrap();
        let back = load_branch(&p).unwrap();
        assert_eq!(back.network, branch);
        assert_eq!(back.base_checksum.unwrap(), base.checksum());

        let pb = dir.path().join("base.json");
        save_base(&pb, &base).unwrap();
        assert_eq!(load_base(&pb).unwrap(), base);
    }

    #[test]
    fn wrong_format_or_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base = ConvDenoiser::random(ModelConfig::default(), &mut rng).unwrap();
        let pb = dir.path().join("base.json");
        save_base(&pb, &base).unwrap();
        assert!(matches!(load_branch(&pb), Err(Error::Load { .. })));

        let mut v: serde_json::Value = serde_json::from_slice(&fs::read(&pb).unwrap()).unwrap();
        v["version"] = 7.into();
        fs::write(&pb, serde_json::to_vec(&v).unwrap()).unwrap();
        assert!(matches!(load_base(&pb), Err(Error::Load { .. })));
    }
}
