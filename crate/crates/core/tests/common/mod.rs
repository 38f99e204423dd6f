//! Brute-force reimplementations shared by the integration tests and the
//! acceptance harness. Nothing here calls the graph.
#![allow(dead_code)]

use longi_core::numerics::{ParamStore, Tensor};
use longi_core::querying::{CrossAttentionIds, LinearIds, SelfAttentionIds};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

pub fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[allow(clippy::too_many_arguments)]
pub fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let [cin, d, h, wd] = x.dims::<4>("oracle").unwrap();
    let [cout, _, k, _, _] = w.dims::<5>("oracle").unwrap();
    let out = |n: usize| (n + 2 * pad - k) / stride + 1;
    let (od, oh, ow) = (out(d), out(h), out(wd));
    let mut y = Tensor::zeros(&[cout, od, oh, ow]);
    for co in 0..cout {
        for z in 0..od {
            for r in 0..oh {
                for c in 0..ow {
                    let mut acc = b.data()[co];
                    for ci in 0..cin {
                        for kz in 0..k {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iz = (z * stride + kz) as isize - pad as isize;
                                    let iy = (r * stride + ky) as isize - pad as isize;
                                    let ix = (c * stride + kx) as isize - pad as isize;
                                    if iz < 0 || iy < 0 || ix < 0 || iz >= d as isize || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += w.at(&[co, ci, kz, ky, kx]) * x.at(&[ci, iz as usize, iy as usize, ix as usize]);
                                }
                            }
                        }
                    }
                    y.set(&[co, z, r, c], acc);
                }
            }
        }
    }
    y
}

pub fn to_index(u: f64, n: usize) -> f64 {
    if n == 1 {
        0.0
    } else {
        ((u + 1.0) / 2.0 * (n - 1) as f64).clamp(0.0, (n - 1) as f64)
    }
}

pub fn trilinear_oracle(field: &Tensor<f64>, p: [f64; 3]) -> Vec<f64> {
    let [c, d, h, w] = field.dims::<4>("oracle").unwrap();
    let dims = [d, h, w];
    let idx: Vec<f64> = (0..3).map(|a| to_index(p[a], dims[a])).collect();
    let lo: Vec<usize> = (0..3).map(|a| (idx[a].floor() as usize).min(dims[a].saturating_sub(2))).collect();
    let mut out = vec![0.0; c];
    for corner in 0..8 {
        let mut weight = 1.0;
        let mut at = [0usize; 3];
        for a in 0..3 {
            let bit = (corner >> (2 - a)) & 1;
            if dims[a] == 1 {
                if bit == 1 {
                    weight = 0.0;
                }
                continue;
            }
            let f = idx[a] - lo[a] as f64;
            at[a] = lo[a] + bit;
            weight *= if bit == 1 { f } else { 1.0 - f };
        }
        if weight == 0.0 {
            continue;
        }
        for (ch, o) in out.iter_mut().enumerate() {
            *o += weight * field.at(&[ch, at[0], at[1], at[2]]);
        }
    }
    out
}


pub type Mat = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn mat(t: &Tensor<f64>) -> Mat {
    let [r, c] = t.dims::<2>("oracle").unwrap();
    (0..r).map(|i| t.data()[i * c..(i + 1) * c].to_vec()).collect()
}

pub fn to_tensor(m: &Mat) -> Tensor<f64> {
    let c = m.first().map_or(0, Vec::len);
    Tensor::new(&[m.len(), c], m.iter().flatten().copied().collect()).unwrap()
}

pub fn max_diff(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs())).fold(0.0, f64::max)
}

/// `x W + b` by explicit loops.
pub fn affine(x: &Mat, w: &Tensor<f64>, b: &Tensor<f64>) -> Mat {
    let [din, dout] = w.dims::<2>("oracle").unwrap();
    x.iter()
        .map(|row| {
            assert_eq!(row.len(), din);
            (0..dout).map(|o| b.data()[o] + (0..din).map(|i| row[i] * w.at(&[i, o])).sum::<f64>()).collect()
        })
        .collect()
}

pub fn apply(store: &ParamStore<f64>, ids: &LinearIds, x: &Mat) -> Mat {
    affine(x, store.get(ids.weight), store.get(ids.bias))
}

pub fn map(m: &Mat, f: impl Fn(f64) -> f64) -> Mat {
    m.iter().map(|r| r.iter().map(|&v| f(v)).collect()).collect()
}

/// Per-head scaled dot-product attention, one query row at a time.
/// Returns outputs `[M, d]` and each head's weights `[M, N]`.
pub fn attention_heads(q: &Mat, k: &Mat, v: &Mat, heads: usize) -> (Mat, Vec<Mat>) {
    let d = q[0].len();
    let dh = d / heads;
    let mut out = vec![vec![0.0; d]; q.len()];
    let mut weights = Vec::new();
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        let mut wh = Vec::new();
        for (i, qi) in q.iter().enumerate() {
            let logits: Vec<f64> = k
                .iter()
                .map(|kj| cols.clone().map(|c| qi[c] * kj[c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = e.iter().sum();
            let a: Vec<f64> = e.iter().map(|x| x / z).collect();
            for c in cols.clone() {
                out[i][c] = a.iter().zip(v).map(|(w, vj)| w * vj[c]).sum();
            }
            wh.push(a);
        }
        weights.push(wh);
    }
    (out, weights)
}

pub fn self_attention_oracle(store: &ParamStore<f64>, ids: &SelfAttentionIds, x: &Mat, heads: usize) -> Mat {
    let q = apply(store, &ids.q, x);
    let k = apply(store, &ids.k, x);
    let v = apply(store, &ids.v, x);
    let (o, _) = attention_heads(&q, &k, &v, heads);
    apply(store, &ids.out, &o)
}

pub struct CrossAttentionOracle {
    pub output: Mat,
    pub offsets: Mat,
    pub points: Mat,
    pub weights: Vec<Mat>,
}

/// Deformable cross-attention with explicit sampling loops.
pub fn cross_attention_oracle(
    store: &ParamStore<f64>,
    ids: &CrossAttentionIds,
    x: &Mat,
    support: &Tensor<f64>,
    reference: &Mat,
    heads: usize,
    s: f64,
) -> CrossAttentionOracle {
    let [_, d, h, w] = support.dims::<4>("oracle").unwrap();
    let dims = [d, h, w];
    let q = apply(store, &ids.q, x);
    let hidden = map(&apply(store, &ids.offset.hidden, &q), f64::tanh);
    let offsets = map(&apply(store, &ids.offset.out, &hidden), |v| s * v.tanh());
    let points: Mat = reference
        .iter()
        .zip(&offsets)
        .map(|(r, o)| (0..3).map(|a| r[a] + o[a] * 2.0 / (dims[a].max(2) - 1) as f64).collect())
        .collect();
    let sampled: Mat = points.iter().map(|p| trilinear_oracle(support, [p[0], p[1], p[2]])).collect();
    let k = apply(store, &ids.k, &sampled);
    let v = apply(store, &ids.v, &sampled);
    let (o, weights) = attention_heads(&q, &k, &v, heads);
    CrossAttentionOracle { output: apply(store, &ids.out, &o), offsets, points, weights }
}

/// Row-wise layer norm with affine parameters.
pub fn layer_norm_oracle(x: &Mat, gamma: &[f64], beta: &[f64], eps: f64) -> Mat {
    x.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mu = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
            r.iter().enumerate().map(|(i, v)| (v - mu) / (var + eps).sqrt() * gamma[i] + beta[i]).collect()
        })
        .collect()
}

/// `P(pos > neg) + ½ P(tie)` over all positive/negative pairs.
pub fn auc_pairwise(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut total = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                total += 1.0;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
    }
    wins / total
}

/// Adds Gaussian noise to every parameter so zero-initialized tensors matter.
pub fn perturb(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng, std: f64) {
    for t in store.tensors_mut() {
        for v in t.data_mut() {
            *v += std * (rng.gen::<f64>() * 2.0 - 1.0) * 1.7320508075688772;
        }
    }
}
