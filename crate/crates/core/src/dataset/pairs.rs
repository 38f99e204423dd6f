use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dataset::ScanRecord;
use crate::error::{Error, Result};

const GAP_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    /// Prior at (approximately) the target gap.
    Multi,
    /// Prior elsewhere in the window; its flow is rescaled to one year.
    SingleScaled,
    /// No usable prior.
    SingleEmpty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairingConfig {
    pub target_gap: f64,
    pub dm_tolerance: f64,
    pub ds_window: [f64; 2],
}

impl Default for PairingConfig {
    fn default() -> Self {
        Self { target_gap: 1.0, dm_tolerance: 0.25, ds_window: [0.25, 1.75] }
    }
}

impl PairingConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.ds_window;
        if !(self.target_gap > 0.0) || !self.target_gap.is_finite() {
            return Err(Error::Config(format!("target_gap must be positive, got {}", self.target_gap)));
        }
        if !(self.dm_tolerance >= 0.0) {
            return Err(Error::Config(format!("dm_tolerance must be non-negative, got {}", self.dm_tolerance)));
        }
        if !(lo <= self.target_gap && self.target_gap <= hi) {
            return Err(Error::Config(format!("ds_window [{lo}, {hi}] must contain target_gap {}", self.target_gap)));
        }
        Ok(())
    }

    fn usable(&self, gap: f64) -> bool {
        gap > 0.0
            && ((gap >= self.ds_window[0] - GAP_EPS && gap <= self.ds_window[1] + GAP_EPS)
                || self.is_multi(gap))
    }

    fn is_multi(&self, gap: f64) -> bool {
        (gap - self.target_gap).abs() <= self.dm_tolerance + GAP_EPS
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub current: ScanRecord,
    pub prior: Option<ScanRecord>,
    pub flow_path: Option<PathBuf>,
    pub kind: PairKind,
}

impl PairRecord {
    pub fn gap(&self) -> Option<f64> {
        self.prior.as_ref().map(|p| self.current.t_years - p.t_years)
    }

    /// Stable sample identifier, `subject@time`.
    pub fn id(&self) -> String {
        format!("{}@{}", self.current.subject_id, self.current.t_years)
    }
}

/// Makes every record the current scan of exactly one pair, in input order.
///
/// The prior is the same-subject earlier scan whose gap is closest to the
/// target, ties going to the earlier scan.
pub fn build_pairs(records: &[ScanRecord], config: &PairingConfig) -> Result<Vec<PairRecord>> {
    config.validate()?;
    let pairs = records
        .iter()
        .map(|cur| {
            let best = records
                .iter()
                .filter(|r| r.subject_id == cur.subject_id)
                .map(|r| (r, cur.t_years - r.t_years))
                .filter(|&(_, gap)| config.usable(gap))
                .min_by(|(a, ga), (b, gb)| {
                    let da = (ga - config.target_gap).abs();
                    let db = (gb - config.target_gap).abs();
                    da.total_cmp(&db).then(a.t_years.total_cmp(&b.t_years))
                });
            match best {
                Some((prior, gap)) => PairRecord {
                    current: cur.clone(),
                    prior: Some(prior.clone()),
                    flow_path: None,
                    kind: if config.is_multi(gap) { PairKind::Multi } else { PairKind::SingleScaled },
                },
                None => PairRecord { current: cur.clone(), prior: None, flow_path: None, kind: PairKind::SingleEmpty },
            }
        })
        .collect();
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(s: &str, t: f64) -> ScanRecord {
        ScanRecord { subject_id: s.into(), t_years: t, label: 0, volume_path: format!("{s}_{t}.raw").into() }
    }

    fn kinds(p: &[PairRecord]) -> Vec<PairKind> {
        p.iter().map(|p| p.kind).collect()
    }

    #[test]
    fn one_year_gap_is_multi_and_baseline_empty() {
        let p = build_pairs(&[rec("a", 0.0), rec("a", 1.0)], &PairingConfig::default()).unwrap();
        assert_eq!(kinds(&p), vec![PairKind::SingleEmpty, PairKind::Multi]);
        assert_eq!(p[1].prior.as_ref().unwrap().t_years, 0.0);
    }

    #[test]
    fn half_year_gap_is_single_scaled() {
        let p = build_pairs(&[rec("a", 0.0), rec("a", 0.5)], &PairingConfig::default()).unwrap();
        assert_eq!(p[1].kind, PairKind::SingleScaled);
        assert_eq!(p[1].gap(), Some(0.5));
    }

    #[test]
    fn single_scan_is_empty() {
        let p = build_pairs(&[rec("a", 3.0)], &PairingConfig::default()).unwrap();
        assert_eq!(kinds(&p), vec![PairKind::SingleEmpty]);
        assert!(p[0].flow_path.is_none());
    }

    #[test]
    fn out_of_window_prior_ignored() {
        let p = build_pairs(&[rec("a", 0.0), rec("a", 2.5)], &PairingConfig::default()).unwrap();
        assert_eq!(p[1].kind, PairKind::SingleEmpty);
    }

    #[test]
    fn nearest_gap_wins_and_ties_go_earlier() {
        let p = build_pairs(&[rec("a", 0.0), rec("a", 0.4), rec("a", 1.1)], &PairingConfig::default()).unwrap();
        assert_eq!(p[2].prior.as_ref().unwrap().t_years, 0.0);
        let p = build_pairs(&[rec("a", 0.0), rec("a", 1.0), rec("a", 1.5)], &PairingConfig::default()).unwrap();
        assert_eq!(p[2].prior.as_ref().unwrap().t_years, 0.0);
        assert_eq!(p[2].gap(), Some(1.5));
        assert_eq!(p[2].kind, PairKind::SingleScaled);
    }

    #[test]
    fn window_must_contain_target() {
        let cfg = PairingConfig { ds_window: [1.5, 2.0], ..Default::default() };
        assert!(build_pairs(&[], &cfg).is_err());
    }

    proptest! {
        #[test]
        fn one_pair_per_scan_never_across_subjects(
            scans in prop::collection::vec((0usize..4, 0u32..12), 0..30)
        ) {
            let mut records: Vec<ScanRecord> = Vec::new();
            for (s, q) in scans {
                let r = rec(&format!("s{s}"), q as f64 * 0.25);
                if !records.iter().any(|x| x.subject_id == r.subject_id && x.t_years == r.t_years) {
                    records.push(r);
                }
            }
            let cfg = PairingConfig::default();
            let pairs = build_pairs(&records, &cfg).unwrap();
            prop_assert_eq!(pairs.len(), records.len());
            for (p, r) in pairs.iter().zip(&records) {
                prop_assert_eq!(&p.current, r);
                if let Some(prior) = &p.prior {
                    prop_assert_eq!(&prior.subject_id, &r.subject_id);
                    let gap = p.gap().unwrap();
                    prop_assert!(gap > 0.0);
                    if p.kind == PairKind::Multi {
                        prop_assert!((gap - cfg.target_gap).abs() <= cfg.dm_tolerance + 1e-9);
                    }
                } else {
                    prop_assert_eq!(p.kind, PairKind::SingleEmpty);
                }
            }
        }
    }
}
