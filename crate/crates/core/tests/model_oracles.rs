mod common;

use common::*;
use longi_core::embedding::*;
use longi_core::numerics::*;
use longi_core::querying::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn querying(rng: &mut ChaCha8Rng, config: QueryingConfig, channels: usize) -> (Querying, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let q = Querying::new(config, channels, &mut store, rng).unwrap();
    (q, store)
}

fn small_querying(grid: [usize; 3], d: usize, heads: usize) -> QueryingConfig {
    QueryingConfig { blocks: 1, grid, d, heads, ffn_hidden: 2 * d, offset_scale: 2.0, query_init_std: 0.1 }
}

#[test]
fn deformable_cross_attention_matches_loop_oracle() {
    let mut rng = rng(101);
    for case in 0..24 {
        let heads = rng.gen_range(1..=3);
        let d = heads * rng.gen_range(1..=3);
        let c = rng.gen_range(1..=4);
        let dims = [rng.gen_range(1..=4), rng.gen_range(2..=4), rng.gen_range(2..=5)];
        let nq = rng.gen_range(1..=6);
        let s = rng.gen_range(0.5..3.0);
        let (q, mut store) = querying(&mut rng, small_querying([1, 1, 1], d, heads), c);
        perturb(&mut store, &mut rng, 0.5);
        let ids = q.blocks[0].ca;
        let x = rand_tensor(&mut rng, &[nq, d]);
        let support = rand_tensor(&mut rng, &[c, dims[0], dims[1], dims[2]]);
        let reference = rand_tensor(&mut rng, &[nq, 3]);

        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let (xv, sv, rv) = (g.constant(x.clone()), g.constant(support.clone()), g.constant(reference.clone()));
        let trace = deformable_cross_attention(&mut g, &p, &ids, xv, sv, rv, heads, s).unwrap();
        let oracle = cross_attention_oracle(&store, &ids, &mat(&x), &support, &mat(&reference), heads, s);

        assert!(max_diff(&mat(g.value(trace.output)), &oracle.output) < 1e-10, "case {case}");
        assert!(max_diff(&mat(g.value(trace.offsets)), &oracle.offsets) < 1e-12, "case {case}");
        assert!(max_diff(&mat(g.value(trace.points)), &oracle.points) < 1e-12, "case {case}");
        for h in 0..heads {
            assert!(max_diff(&mat(g.value(trace.weights[h])), &oracle.weights[h]) < 1e-12, "case {case}");
        }
    }
}

#[test]
fn self_attention_matches_loop_oracle() {
    let mut rng = rng(102);
    for case in 0..24 {
        let heads = rng.gen_range(1..=4);
        let d = heads * rng.gen_range(1..=3);
        let n = rng.gen_range(1..=7);
        let (q, mut store) = querying(&mut rng, small_querying([1, 1, 1], d, heads), 2);
        perturb(&mut store, &mut rng, 0.3);
        let ids = q.blocks[0].sa;
        let x = rand_tensor(&mut rng, &[n, d]);
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let xv = g.constant(x.clone());
        let y = self_attention(&mut g, &p, &ids, xv, heads).unwrap();
        let expect = self_attention_oracle(&store, &ids, &mat(&x), heads);
        assert!(max_diff(&mat(g.value(y)), &expect) < 1e-10, "case {case}");
    }
}

#[test]
fn self_attention_is_permutation_equivariant() {
    let mut rng = rng(103);
    let (q, store) = querying(&mut rng, small_querying([1, 1, 1], 8, 2), 2);
    let ids = q.blocks[0].sa;
    let x = rand_tensor(&mut rng, &[5, 8]);
    let perm = [3, 0, 4, 1, 2];
    let xp = to_tensor(&perm.iter().map(|&i| mat(&x)[i].clone()).collect());
    let run = |x: Tensor<f64>| {
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let xv = g.constant(x);
        let y = self_attention(&mut g, &p, &ids, xv, 2).unwrap();
        mat(g.value(y))
    };
    let y = run(x);
    let yp = run(xp);
    let expect: Mat = perm.iter().map(|&i| y[i].clone()).collect();
    assert!(max_diff(&yp, &expect) < 1e-12);
}

#[test]
fn single_token_attention_returns_projected_value() {
    let mut rng = rng(104);
    let (q, mut store) = querying(&mut rng, small_querying([1, 1, 1], 4, 2), 3);
    perturb(&mut store, &mut rng, 0.3);
    let ids = q.blocks[0].sa;
    let x = rand_tensor(&mut rng, &[1, 4]);
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let xv = g.constant(x.clone());
    let y = self_attention(&mut g, &p, &ids, xv, 2).unwrap();
    let expect = apply(&store, &ids.out, &apply(&store, &ids.v, &mat(&x)));
    assert!(max_diff(&mat(g.value(y)), &expect) < 1e-12);

    // One query over one sampled point: weight exactly 1.
    let ca = q.blocks[0].ca;
    let support = rand_tensor(&mut rng, &[3, 2, 2, 2]);
    let (sv, rv) = (g.constant(support), g.constant(Tensor::zeros(&[1, 3])));
    let trace = deformable_cross_attention(&mut g, &p, &ca, xv, sv, rv, 2, 2.0).unwrap();
    for w in &trace.weights {
        assert_eq!(g.value(*w).data(), &[1.0]);
    }
}

#[test]
fn zero_offset_net_samples_at_reference_points_and_grid_voxels() {
    let mut rng = rng(105);
    let grid = [3, 4, 2];
    let (q, store) = querying(&mut rng, small_querying(grid, 6, 3), 5);
    let ids = q.blocks[0].ca;
    let support = rand_tensor(&mut rng, &[5, 3, 4, 2]);
    let x = rand_tensor(&mut rng, &[24, 6]);
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let reference = reference_grid::<f64>(grid);
    let (xv, sv, rv) = (g.constant(x), g.constant(support.clone()), g.constant(reference.clone()));
    let trace = deformable_cross_attention(&mut g, &p, &ids, xv, sv, rv, 3, 2.0).unwrap();
    assert!(g.value(trace.offsets).data().iter().all(|&v| v == 0.0));
    assert_eq!(g.value(trace.points), &reference);

    // Lattice matches the support grid, so each sample is a stored voxel.
    let sampled = g.trilinear_sample(sv, trace.points).unwrap();
    let vals = g.value(sampled);
    for n in 0..24 {
        let (z, y, xx) = (n / 8, (n / 2) % 4, n % 2);
        for c in 0..5 {
            assert_eq!(vals.at(&[n, c]), support.at(&[c, z, y, xx]));
        }
    }
}

#[test]
fn offsets_never_exceed_scale() {
    let mut rng = rng(106);
    for s in [0.5, 2.0, 3.0] {
        let (q, mut store) = querying(&mut rng, small_querying([2, 2, 2], 8, 2), 4);
        perturb(&mut store, &mut rng, 20.0);
        let ids = q.blocks[0].ca;
        let x = Tensor::from_fn(&[8, 8], |_| rng.gen_range(-100.0..100.0));
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let qv = g.constant(x);
        let q_proj = ids.q.apply(&mut g, &p, qv).unwrap();
        let off = offset_net(&mut g, &p, &ids.offset, q_proj, s).unwrap();
        let m = g.value(off).max_abs();
        assert!(m <= s, "{m} > {s}");
        assert!(m > 0.9 * s, "saturated offsets should approach the bound, got {m}");
    }
}

#[test]
fn zero_residual_projections_make_blocks_identity() {
    let mut rng = rng(107);
    let cfg = QueryingConfig { blocks: 3, ..small_querying([2, 2, 2], 8, 2) };
    let (q, mut store) = querying(&mut rng, cfg, 6);
    perturb(&mut store, &mut rng, 0.2);
    for b in &q.blocks {
        for lin in b.residual_projections() {
            *store.get_mut(lin.weight) = Tensor::zeros(store.get(lin.weight).shape());
            *store.get_mut(lin.bias) = Tensor::zeros(store.get(lin.bias).shape());
        }
    }
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let support = g.constant(rand_tensor(&mut rng, &[6, 3, 3, 3]));
    let out = q.forward(&mut g, &p, support).unwrap();
    assert_eq!(g.value(out.queries).data(), store.get(q.q_init).data());
}

#[test]
fn block_matches_composed_oracle() {
    let mut rng = rng(108);
    let (q, mut store) = querying(&mut rng, small_querying([2, 1, 2], 6, 2), 4);
    perturb(&mut store, &mut rng, 0.3);
    let b = q.blocks[0];
    let x = rand_tensor(&mut rng, &[4, 6]);
    let support = rand_tensor(&mut rng, &[4, 2, 3, 3]);
    let reference = reference_grid::<f64>([2, 1, 2]);

    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let (xv, sv, rv) = (g.constant(x.clone()), g.constant(support.clone()), g.constant(reference.clone()));
    let (y, _) = q.block(&mut g, &p, 0, xv, sv, rv).unwrap();

    let ln = |m: &Mat, n: &NormIds| layer_norm_oracle(m, store.get(n.gamma).data(), store.get(n.beta).data(), 1e-5);
    let add = |a: &Mat, c: &Mat| -> Mat { a.iter().zip(c).map(|(r, s)| r.iter().zip(s).map(|(u, v)| u + v).collect()).collect() };
    let x0 = mat(&x);
    let x1 = add(&x0, &self_attention_oracle(&store, &b.sa, &ln(&x0, &b.norm_sa), 2));
    let ca = cross_attention_oracle(&store, &b.ca, &ln(&x1, &b.norm_ca), &support, &mat(&reference), 2, 2.0);
    let x2 = add(&x1, &ca.output);
    let h = map(&apply(&store, &b.ffn_in, &ln(&x2, &b.norm_ffn)), |v| v.max(0.0));
    let x3 = add(&x2, &apply(&store, &b.ffn_out, &h));
    assert!(max_diff(&mat(g.value(y)), &x3) < 1e-10);
}

#[test]
fn querying_block_passes_gradient_check() {
    let mut rng = rng(109);
    let (q, mut store) = querying(&mut rng, small_querying([2, 2, 1], 6, 2), 3);
    perturb(&mut store, &mut rng, 0.3);
    let support = rand_tensor(&mut rng, &[3, 3, 3, 3]);
    let weights = rand_tensor(&mut rng, &[4, 6]);
    let mut inputs = store.tensors().to_vec();
    inputs.push(support);
    let report = grad_check(
        |g, vars| {
            let (params, sup) = vars.split_at(vars.len() - 1);
            let p = BoundParams::from_vars(params.to_vec());
            let out = q.forward(g, &p, sup[0])?;
            let flat = g.reshape(out.queries, &[1, 24])?;
            let w = g.constant(weights.reshape(&[24, 1])?);
            let b = g.constant(Tensor::zeros(&[1]));
            let y = g.linear(flat, w, b)?;
            g.sum(y)
        },
        &inputs,
        &GradCheckOptions { eps: 1e-5, rel_floor: 1e-5, ..Default::default() },
    )
    .unwrap();
    assert!(report.passes(1e-3), "{report:?}");
}

#[test]
fn offset_gradient_vanishes_only_when_saturated() {
    let mut rng = rng(110);
    let (q, mut store) = querying(&mut rng, small_querying([1, 1, 1], 4, 1), 2);
    perturb(&mut store, &mut rng, 0.3);
    let ids = q.blocks[0].ca.offset;
    let grad_norm = |store: &ParamStore<f64>, scale: f64| {
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.constant(Tensor::full(&[1, 4], scale));
        let off = offset_net(&mut g, &p, &ids, x, 2.0).unwrap();
        let s = g.sum(off).unwrap();
        let grads = g.backward(s).unwrap();
        grads.wrt(&g, p.get(ids.out.bias)).max_abs()
    };
    assert!(grad_norm(&store, 0.1) > 1e-3);
    *store.get_mut(ids.out.bias) = Tensor::full(&[3], 40.0);
    assert!(grad_norm(&store, 0.1) < 1e-20);
}

#[test]
fn query_count_follows_grid() {
    let mut rng = rng(111);
    for n in [3, 4, 5, 7] {
        let (q, store) = querying(&mut rng, small_querying([n, n, n], 4, 2), 2);
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let support = g.constant(rand_tensor(&mut rng, &[2, 2, 2, 2]));
        let out = q.forward(&mut g, &p, support).unwrap();
        assert_eq!(g.shape(out.queries), &[n * n * n, 4]);
        let pts = g.value(out.cross[0].points);
        assert_eq!(pts.shape(), &[n * n * n, 3]);
        assert_eq!(&pts.data()[..3], &[-1.0, -1.0, -1.0]);
        assert_eq!(&pts.data()[pts.numel() - 3..], &[1.0, 1.0, 1.0]);
    }
}

fn toy_embedding(mode: EmbeddingMode, size: usize) -> EmbeddingConfig {
    EmbeddingConfig {
        input_size: size,
        stage_channels: vec![2, 3],
        downsample_factor_total: 4,
        support_channels: 6,
        adapter_kernel: 3,
        mode,
    }
}

fn embedding(rng: &mut ChaCha8Rng, cfg: EmbeddingConfig) -> (Embedding, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let e = Embedding::new(cfg, &mut store, rng).unwrap();
    (e, store)
}

fn halves(t: &Tensor<f64>, c: usize) -> (&[f64], &[f64]) {
    t.data().split_at(c * t.numel() / (2 * c))
}

#[test]
fn shared_backbone_gives_equal_branches_for_equal_adapted_inputs() {
    let mut rng = rng(120);
    let (e, mut store) = embedding(&mut rng, toy_embedding(EmbeddingMode::Flow, 16));
    let [(iw, ib), (fw, fb)] = e.adapter_params();
    // Flow adapter reads only channel 0, with the image adapter's weights.
    let img_w = store.get(iw).clone();
    let mut flow_w = Tensor::zeros(store.get(fw).shape());
    for o in 0..2 {
        for k in 0..27 {
            flow_w.data_mut()[o * 81 + k] = img_w.data()[o * 27 + k];
        }
    }
    *store.get_mut(fw) = flow_w;
    *store.get_mut(fb) = store.get(ib).clone();

    let image = rand_tensor(&mut rng, &[1, 16, 16, 16]);
    let mut flow = Tensor::zeros(&[3, 16, 16, 16]);
    flow.data_mut()[..4096].copy_from_slice(image.data());
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let (iv, fv) = (g.constant(image), g.constant(flow));
    let f = e.embed_pair(&mut g, &p, iv, Some(fv)).unwrap();
    let (a, b) = halves(g.value(f.values), 6);
    assert_eq!(a, b);
    assert!(!f.flow_was_absent);
}

#[test]
fn missing_flow_yields_constant_identical_features() {
    let mut rng = rng(121);
    let (e, mut store) = embedding(&mut rng, toy_embedding(EmbeddingMode::Flow, 16));
    perturb(&mut store, &mut rng, 0.2);
    let mut seconds = Vec::new();
    for _ in 0..2 {
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let iv = g.constant(rand_tensor(&mut rng, &[1, 16, 16, 16]));
        let f = e.embed_pair(&mut g, &p, iv, None).unwrap();
        assert!(f.flow_was_absent);
        let (_, b) = halves(g.value(f.values), 6);
        for c in 0..6 {
            let ch = &b[c * 64..(c + 1) * 64];
            assert!(ch.iter().all(|&v| v == ch[0]));
            assert_eq!(ch[0], store.get(e.missing_vector().unwrap()).data()[c]);
        }
        seconds.push(b.to_vec());
    }
    assert_eq!(seconds[0], seconds[1]);
}

#[test]
fn single_image_mode_zeroes_second_half() {
    let mut rng = rng(122);
    let (e, store) = embedding(&mut rng, toy_embedding(EmbeddingMode::SingleImage, 16));
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let iv = g.constant(rand_tensor(&mut rng, &[1, 16, 16, 16]));
    let fv = g.constant(rand_tensor(&mut rng, &[3, 16, 16, 16]));
    let f = e.embed(&mut g, &p, iv, None, Some(fv)).unwrap();
    let (a, b) = halves(g.value(f.values), 6);
    assert!(b.iter().all(|&v| v == 0.0));
    assert!(a.iter().any(|&v| v != 0.0));
}

#[test]
fn identical_images_differ_by_temporal_rows() {
    let mut rng = rng(123);
    let (e, store) = embedding(&mut rng, toy_embedding(EmbeddingMode::PriorImage, 16));
    let image = rand_tensor(&mut rng, &[1, 16, 16, 16]);
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let (cv, pv) = (g.constant(image.clone()), g.constant(image));
    let (cur, pri) = e.prior_branches(&mut g, &p, cv, Some(pv)).unwrap();
    let t = store.get(e.temporal_encoding().unwrap());
    let (cur, pri) = (g.value(cur).data(), g.value(pri).data());
    for c in 0..6 {
        let want = t.at(&[0, c]) - t.at(&[1, c]);
        for s in 0..64 {
            assert!((cur[c * 64 + s] - pri[c * 64 + s] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn temporal_rows_and_adapters_receive_gradient() {
    let mut rng = rng(124);
    let (e, mut store) = embedding(&mut rng, toy_embedding(EmbeddingMode::PriorImage, 16));
    perturb(&mut store, &mut rng, 0.1);
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let cv = g.constant(rand_tensor(&mut rng, &[1, 16, 16, 16]));
    let pv = g.constant(rand_tensor(&mut rng, &[1, 16, 16, 16]));
    let f = e.embed(&mut g, &p, cv, Some(pv), None).unwrap();
    let s = g.sum(f.values).unwrap();
    let grads = g.backward(s).unwrap();
    let tg = grads.wrt(&g, p.get(e.temporal_encoding().unwrap()));
    assert!(tg.data()[..6].iter().all(|&v| v != 0.0));
    assert!(tg.data()[6..].iter().all(|&v| v != 0.0));
    let [(iw, _), _] = e.adapter_params();
    assert!(grads.wrt(&g, p.get(iw)).max_abs() > 0.0);
}

#[test]
fn adapters_pass_gradient_check() {
    let mut rng = rng(125);
    let cfg = toy_embedding(EmbeddingMode::Flow, 8);
    let cfg = EmbeddingConfig { stage_channels: vec![2], downsample_factor_total: 2, ..cfg };
    let (e, mut store) = embedding(&mut rng, cfg);
    perturb(&mut store, &mut rng, 0.1);
    let image = rand_tensor(&mut rng, &[1, 8, 8, 8]);
    let flow = rand_tensor(&mut rng, &[3, 8, 8, 8]);
    let r = rand_tensor(&mut rng, &[1, 12 * 64]);
    let report = grad_check(
        |g, vars| {
            let p = BoundParams::from_vars(vars.to_vec());
            let (iv, fv) = (g.constant(image.clone()), g.constant(flow.clone()));
            let f = e.embed_pair(g, &p, iv, Some(fv))?;
            let flat = g.reshape(f.values, &[12 * 64, 1])?;
            let w = g.constant(r.clone());
            let y = g.matmul(w, flat, false)?;
            g.sum(y)
        },
        store.tensors(),
        &GradCheckOptions { eps: 1e-5, rel_floor: 1e-5, max_elements_per_input: Some(40), ..Default::default() },
    )
    .unwrap();
    assert!(report.passes(1e-3), "{report:?}");
}

#[test]
fn support_shape_follows_input_size() {
    let mut rng = rng(126);
    for size in [16, 32, 64] {
        let (e, store) = embedding(&mut rng, toy_embedding(EmbeddingMode::Flow, size));
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let iv = g.constant(Tensor::zeros(&[1, size, size, size]));
        let f = e.embed_pair(&mut g, &p, iv, None).unwrap();
        let s = size / 4;
        assert_eq!(g.shape(f.values), &[12, s, s, s]);
        assert_eq!(g.shape(f.position_encoding), &[12, s, s, s]);
    }
}

#[test]
fn full_scale_input_reduces_to_seven_cubed() {
    // Full-scale depth and input size with narrow widths to keep memory small.
    let cfg = EmbeddingConfig { stage_channels: vec![1, 1, 1, 1, 2], support_channels: 6, ..EmbeddingConfig::full_scale() };
    assert_eq!(cfg.support_size(), 7);
    let mut rng = rng(127);
    let mut store = ParamStore::<f32>::new();
    let e = Embedding::new(cfg, &mut store, &mut rng).unwrap();
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let iv = g.constant(Tensor::full(&[1, 224, 224, 224], 0.5f32));
    let a = e.adapt_image(&mut g, &p, iv).unwrap();
    let f = e.backbone(&mut g, &p, a).unwrap();
    assert_eq!(g.shape(f), &[6, 7, 7, 7]);
}

#[test]
fn position_encoding_is_added_to_support_values() {
    let mut rng = rng(128);
    let (e, store) = embedding(&mut rng, toy_embedding(EmbeddingMode::Flow, 16));
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let iv = g.constant(rand_tensor(&mut rng, &[1, 16, 16, 16]));
    let f = e.embed_pair(&mut g, &p, iv, None).unwrap();
    let enc = f.encoded(&mut g).unwrap();
    let pe = positional_encoding::<f64>([4, 4, 4], 12).unwrap();
    assert_eq!(g.value(f.position_encoding), &pe);
    for ((e, v), q) in g.value(enc).data().iter().zip(g.value(f.values).data()).zip(pe.data()) {
        assert_eq!(*e, v + q);
    }
}
