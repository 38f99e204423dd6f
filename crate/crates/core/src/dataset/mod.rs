//! Scan manifests, longitudinal pairing, subject-wise splits and synthetic
//! phantom cohorts.

mod flows;
mod manifest;
mod pairs;
mod phantom;
mod samples;
mod split;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use flows::{compute_pair_flow, precompute_flows, FlowConfig, PairIndex, PAIR_INDEX_FILE};
pub use manifest::{load_manifest, write_manifest};
pub use pairs::{build_pairs, PairKind, PairRecord, PairingConfig};
pub use phantom::{gen_phantom, synth_cohort, PhantomConfig, PhantomGeometry};
pub use samples::{load_sample, load_samples, Sample};
pub use split::{subject_split, SubjectSplit};

/// One acquired volume of one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub subject_id: String,
    /// Acquisition time in years.
    pub t_years: f64,
    /// 1 for the progressing class, 0 for the stable class.
    pub label: u8,
    pub volume_path: PathBuf,
}

/// Derives an independent stream seed from a base seed.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = base ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
