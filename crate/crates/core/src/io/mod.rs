//! Files: NIfTI-1 volumes, model bundles, per-subject registration
//! records and CSV tables.

mod bundle;
mod manifest;
pub mod nifti;
mod table;

pub use bundle::{ModelBundle, Registration, BUNDLE_VERSION};
pub use manifest::Manifest;
pub use nifti::{read_coordinate_map, read_volume, write_coordinate_map, write_volume, Datatype};
pub use table::{read_trace, write_overlap, write_trace, TraceRow, OVERLAP_HEADER, TRACE_HEADER};

use sha2::{Digest, Sha256};

use crate::orchestrator::FitConfig;

/// First 16 hex digits of the SHA-256 of the canonical `key=value` lines
/// of `config`.
pub fn config_hash(config: &FitConfig) -> String {
    let mut h = Sha256::new();
    for (k, v) in config.to_key_values() {
        h.update(format!("{k}={v}\n").as_bytes());
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Provenance string stored in NIfTI `descrip` fields.
pub fn provenance(config: &FitConfig) -> String {
    format!("gwreg {} cfg={} seed={}", env!("CARGO_PKG_VERSION"), config_hash(config), config.seed)
}
