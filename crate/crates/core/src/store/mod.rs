//! Persistence: the `MDT1` tensor container and dataset manifests.

mod manifest;
mod tensor;

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub use manifest::{
    load_manifest, manifest_to_string, parse_manifest, save_manifest, DatasetManifest,
    SampleRecord, SCHEMA_VERSION,
};
pub use tensor::{decode, encode, load_tensor, save_tensor, DType, Tensor, TensorData, MAGIC};

/// Writes to a sibling temporary file and renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().ok();
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
