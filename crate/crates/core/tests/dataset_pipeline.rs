use longi_core::dataset::*;
use longi_core::flowfield::{horn_schunck_flow, normalize_intensity, HornSchunckParams};
use longi_core::io::read_flow;
use longi_core::Tensor;

fn dark_voxels(v: &Tensor<f64>) -> usize {
    v.data().iter().filter(|&&x| x > 0.1 && x < 0.6).count()
}

/// Best accuracy of any single threshold on a scalar feature, either polarity.
fn best_threshold_accuracy(samples: &[(f64, u8)]) -> f64 {
    let mut best: f64 = 0.0;
    for &(cut, _) in samples {
        for polarity in [false, true] {
            let correct = samples.iter().filter(|&&(x, l)| ((x >= cut) ^ polarity) == (l == 1)).count();
            best = best.max(correct as f64 / samples.len() as f64);
        }
    }
    best
}

#[test]
fn single_timepoint_volume_is_ambiguous() {
    let cfg = PhantomConfig::default();
    let mut samples = Vec::new();
    for i in 0..40u64 {
        let label = (i % 2) as u8;
        for (_, v) in gen_phantom::<f64>(&format!("s{i}"), label, derive_seed(77, i), &cfg).unwrap() {
            samples.push((dark_voxels(&v) as f64, label));
        }
    }
    let acc = best_threshold_accuracy(&samples);
    assert!(acc < 0.85, "volume-threshold accuracy {acc}");
}

fn cavity_flow_magnitude(label: u8, seed: u64, cfg: &PhantomConfig) -> f64 {
    let g = PhantomGeometry::baseline(seed, cfg.size);
    let prior = normalize_intensity(&g.at_time(label, cfg.atrophy_rate, 0.0).render(cfg.size));
    let current = normalize_intensity(&g.at_time(label, cfg.atrophy_rate, 1.0).render(cfg.size));
    let flow = horn_schunck_flow(&prior, &current, &HornSchunckParams::default()).unwrap();
    let mag = flow.magnitude();
    let mask = g.at_time(label, cfg.atrophy_rate, 1.0).cavity_mask(cfg.size);
    let inside: Vec<f64> = mag.data().iter().zip(&mask).filter(|(_, &m)| m).map(|(&v, _)| v).collect();
    inside.iter().sum::<f64>() / inside.len() as f64
}

#[test]
fn noiseless_flow_magnitude_separates_classes() {
    let cfg = PhantomConfig::default();
    let stable: Vec<f64> = (0..5).map(|i| cavity_flow_magnitude(0, derive_seed(3, i), &cfg)).collect();
    let progressing: Vec<f64> = (0..5).map(|i| cavity_flow_magnitude(1, derive_seed(4, i), &cfg)).collect();
    let max_stable = stable.iter().cloned().fold(f64::MIN, f64::max);
    let min_prog = progressing.iter().cloned().fold(f64::MAX, f64::min);
    assert!(max_stable < min_prog, "stable {stable:?} progressing {progressing:?}");
}

#[test]
fn synth_pairs_and_flows_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PhantomConfig { size: 16, timepoints: vec![0.0, 0.5], ..Default::default() };
    let records = synth_cohort(dir.path(), 2, &cfg, 1).unwrap();
    assert_eq!(records.len(), 4);
    let manifest = dir.path().join("manifest.csv");
    let loaded = load_manifest(&manifest).unwrap();
    assert_eq!(loaded.len(), 4);

    let pairing = PairingConfig::default();
    let pairs = build_pairs(&loaded, &pairing).unwrap();
    let kinds: Vec<PairKind> = pairs.iter().map(|p| p.kind).collect();
    assert_eq!(kinds, vec![PairKind::SingleEmpty, PairKind::SingleScaled, PairKind::SingleEmpty, PairKind::SingleScaled]);

    let out = dir.path().join("flows");
    let flow_cfg = FlowConfig { horn_schunck: HornSchunckParams { iters: 10, ..Default::default() }, ..Default::default() };
    let index = precompute_flows(&pairs, &pairing, &flow_cfg, &out).unwrap();
    let reloaded = PairIndex::load(&out.join(PAIR_INDEX_FILE)).unwrap();
    assert_eq!(reloaded.pairs.len(), 4);
    assert_eq!(reloaded.pairs.iter().filter(|p| p.flow_path.is_some()).count(), 2);
    assert_eq!(reloaded.pairs[1].flow_path, index.pairs[1].flow_path.as_ref().map(|p| p.clone()));

    // Half-year interval doubles the raw field.
    let pair = &reloaded.pairs[1];
    let (stored, side) = read_flow::<f32>(pair.flow_path.as_ref().unwrap()).unwrap();
    assert_eq!(side.source_gap_years, Some(1.0));
    let prior = longi_core::io::read_volume::<f32>(&pair.prior.as_ref().unwrap().volume_path).unwrap();
    let current = longi_core::io::read_volume::<f32>(&pair.current.volume_path).unwrap();
    let raw = horn_schunck_flow(&normalize_intensity(&prior), &normalize_intensity(&current), &flow_cfg.horn_schunck).unwrap();
    for (s, r) in stored.vectors.data().iter().zip(raw.vectors.data()) {
        assert!((s - 2.0 * r).abs() <= 1e-6 * (1.0 + r.abs()));
    }

    let samples = load_samples::<f64>(&reloaded.pairs).unwrap();
    assert_eq!(samples[0].image.shape(), &[1, 16, 16, 16]);
    assert!(samples[0].flow.is_none() && samples[1].flow.is_some());
    assert_eq!(samples[1].prior.as_ref().unwrap().1, 0.0);
}

#[test]
fn synth_is_byte_identical_for_same_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = PhantomConfig { size: 16, ..Default::default() };
    synth_cohort(a.path(), 2, &cfg, 5).unwrap();
    synth_cohort(b.path(), 2, &cfg, 5).unwrap();
    for name in ["manifest.csv", "volumes/sub-001_t1.raw", "volumes/sub-001_t1.json"] {
        assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}
