//! Synthetic longitudinal "brains": a soft-edged ellipsoidal shell around a
//! dark central cavity. The progressing class enlarges the cavity and thins
//! the shell over time; baseline anatomy varies per subject so that a single
//! scan says little about the class.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{derive_seed, write_manifest, ScanRecord};
use crate::error::{Error, Result};
use crate::io::write_volume;
use crate::numerics::Tensor;
use crate::scalar::Scalar;

pub const MIN_SIZE: usize = 16;

const TISSUE: f64 = 1.0;
const CAVITY: f64 = 0.2;
const EDGE_WIDTH: f64 = 0.75;
/// Shell shrinkage relative to cavity growth.
const SHELL_RATIO: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    pub size: usize,
    pub timepoints: Vec<f64>,
    /// Fractional cavity growth per year for the progressing class.
    pub atrophy_rate: f64,
    pub noise_sigma: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self { size: 32, timepoints: vec![0.0, 1.0], atrophy_rate: 0.1, noise_sigma: 0.02 }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size < MIN_SIZE {
            return Err(Error::InvalidArgument(format!("phantom size {} is below the minimum {MIN_SIZE}", self.size)));
        }
        if self.timepoints.is_empty() {
            return Err(Error::InvalidArgument("at least one timepoint is required".into()));
        }
        if self.timepoints.iter().any(|t| !t.is_finite()) || self.timepoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(format!("timepoints {:?} must be strictly increasing", self.timepoints)));
        }
        if !(self.atrophy_rate >= 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidArgument("atrophy_rate and noise_sigma must be non-negative".into()));
        }
        Ok(())
    }
}

/// Per-subject anatomy, in voxel units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhantomGeometry {
    pub center: [f64; 3],
    pub outer_radii: [f64; 3],
    pub cavity_radii: [f64; 3],
}

impl PhantomGeometry {
    /// Baseline anatomy drawn from the subject seed.
    pub fn baseline(seed: u64, size: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = size as f64;
        let mid = (s - 1.0) / 2.0;
        let center = [0; 3].map(|_| mid + rng.gen_range(-1.0..1.0));
        let outer_radii = [0; 3].map(|_| 0.36 * s * (1.0 + rng.gen_range(-0.06..0.06)));
        let scale = 1.0 + rng.gen_range(-0.3..0.3);
        let cavity_radii = [0; 3].map(|_| 0.13 * s * scale * (1.0 + rng.gen_range(-0.05..0.05)));
        Self { center, outer_radii, cavity_radii }
    }

    /// Anatomy at time `t` for the given class.
    pub fn at_time(&self, label: u8, atrophy_rate: f64, t: f64) -> Self {
        if label == 0 {
            return *self;
        }
        let grow = 1.0 + atrophy_rate * t;
        let shrink = 1.0 - SHELL_RATIO * atrophy_rate * t;
        Self {
            center: self.center,
            outer_radii: self.outer_radii.map(|r| r * shrink),
            cavity_radii: self.cavity_radii.map(|r| r * grow),
        }
    }

    fn rho(&self, p: [f64; 3], radii: [f64; 3]) -> f64 {
        (0..3).map(|a| ((p[a] - self.center[a]) / radii[a]).powi(2)).sum::<f64>().sqrt()
    }

    /// Noiseless intensity volume.
    pub fn render(&self, size: usize) -> Tensor<f64> {
        let soft = |rho: f64, radii: [f64; 3]| {
            let mean = (radii[0] + radii[1] + radii[2]) / 3.0;
            1.0 / (1.0 + ((rho - 1.0) * mean / EDGE_WIDTH).exp())
        };
        Tensor::from_fn(&[size, size, size], |i| {
            let p = voxel(i, size);
            let outer = soft(self.rho(p, self.outer_radii), self.outer_radii);
            let cavity = soft(self.rho(p, self.cavity_radii), self.cavity_radii);
            outer * (TISSUE - (TISSUE - CAVITY) * cavity)
        })
    }

    /// Voxels whose centers lie inside the cavity ellipsoid.
    pub fn cavity_mask(&self, size: usize) -> Vec<bool> {
        (0..size * size * size).map(|i| self.rho(voxel(i, size), self.cavity_radii) < 1.0).collect()
    }
}

fn voxel(i: usize, size: usize) -> [f64; 3] {
    [(i / (size * size)) as f64, ((i / size) % size) as f64, (i % size) as f64]
}

/// Scans of one synthetic subject, one per configured timepoint.
///
/// Volume paths are `volumes/<subject>_t<index>.raw`, relative to the cohort root.
pub fn gen_phantom<T: Scalar>(
    subject_id: &str,
    label: u8,
    seed: u64,
    config: &PhantomConfig,
) -> Result<Vec<(ScanRecord, Tensor<T>)>> {
    config.validate()?;
    if label > 1 {
        return Err(Error::InvalidArgument(format!("label must be 0 or 1, got {label}")));
    }
    let base = PhantomGeometry::baseline(seed, config.size);
    let noise = Normal::new(0.0, config.noise_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(config
        .timepoints
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let clean = base.at_time(label, config.atrophy_rate, t).render(config.size);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1 + k as u64));
            let noisy: Vec<T> = clean.data().iter().map(|&v| T::of(v + noise.sample(&mut rng))).collect();
            let volume = Tensor::new(clean.shape(), noisy).expect("shape preserved");
            let record = ScanRecord {
                subject_id: subject_id.to_string(),
                t_years: t,
                label,
                volume_path: PathBuf::from(format!("volumes/{subject_id}_t{k}.raw")),
            };
            (record, volume)
        })
        .collect())
}

/// Writes a balanced two-class cohort (alternating labels) with its manifest
/// at `out/manifest.csv` and returns the records.
pub fn synth_cohort(out: &Path, subjects: usize, config: &PhantomConfig, seed: u64) -> Result<Vec<ScanRecord>> {
    config.validate()?;
    let mut records = Vec::with_capacity(subjects * config.timepoints.len());
    for i in 0..subjects {
        let id = format!("sub-{i:03}");
        let label = (i % 2) as u8;
        for (mut rec, vol) in gen_phantom::<f32>(&id, label, derive_seed(seed, i as u64), config)? {
            rec.volume_path = out.join(&rec.volume_path);
            write_volume(&rec.volume_path, &vol, &id, rec.t_years)?;
            records.push(rec);
        }
    }
    write_manifest(&out.join("manifest.csv"), &records)?;
    Ok(records)
}
