//! Atomic writes and config-hash stamped checkpoints.

use std::fs;
use std::path::Path;

use ndgrad::{NamedArrays, Tensor};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const HASH_KEY: &str = "config_hash";

/// Write to a sibling temp file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn hash_tensor(hash: &[u8; 32]) -> Tensor {
    Tensor::from_vec(vec![32], hash.iter().map(|&b| b as f64).collect()).expect("32 > 0")
}

/// Save `arrays` with the config hash embedded.
pub fn save_stamped(path: &Path, mut arrays: NamedArrays, hash: &[u8; 32]) -> Result<()> {
    arrays.insert(HASH_KEY, hash_tensor(hash));
    write_atomic(path, &arrays.to_bytes())
}

/// Load arrays written by [`save_stamped`], rejecting a missing file or a
/// different config hash as a dependency error naming `stage`.
pub fn load_stamped(path: &Path, hash: &[u8; 32], stage: &str) -> Result<NamedArrays> {
    if !path.exists() {
        return Err(Error::Dependency(format!(
            "{stage} artifact {} not found; run the {stage} stage first",
            path.display()
        )));
    }
    let arrays = ndgrad::read_arrays(path)?;
    let found = arrays.get(HASH_KEY).map(|t| t.data().to_vec());
    if found.as_deref() != Some(hash_tensor(hash).data()) {
        return Err(Error::Dependency(format!(
            "{stage} artifact {} was built from a different config",
            path.display()
        )));
    }
    Ok(arrays)
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stamped_round_trip_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ckpt");
        let mut a = NamedArrays::new();
        a.insert("x", Tensor::ones(&[2]));
        save_stamped(&p, a.clone(), &[1; 32]).unwrap();
        let back = load_stamped(&p, &[1; 32], "vae").unwrap();
        assert_eq!(back.get("x"), a.get("x"));
        assert!(matches!(load_stamped(&p, &[2; 32], "vae"), Err(Error::Dependency(_))));
        assert!(matches!(
            load_stamped(&dir.path().join("none"), &[1; 32], "vae"),
            Err(Error::Dependency(_))
        ));
        assert!(!dir.path().join("a.ckpt.tmp").exists());
    }
}
