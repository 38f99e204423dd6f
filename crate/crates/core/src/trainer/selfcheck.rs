//! Finite-difference checks of every differentiable operation and of the
//! end-to-end model at toy shapes, in 64-bit precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::dataset::Sample;
use crate::embedding::{EmbeddingConfig, EmbeddingMode};
use crate::error::Result;
use crate::numerics::{grad_check, BoundParams, GradCheckOptions, GradCheckReport, Graph, Tensor, Var};
use crate::querying::QueryingConfig;
use crate::trainer::model::{Model, ModelConfig};

pub const TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Serialize)]
pub struct CaseResult {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub kinks: usize,
    /// Worst element as `(input, element)`.
    pub worst: Option<(usize, usize)>,
    pub passed: bool,
}

impl CaseResult {
    fn from_report(name: &str, r: &GradCheckReport) -> Self {
        Self {
            name: name.to_string(),
            max_rel_error: r.max_rel_error,
            checked: r.checked,
            kinks: r.kinks.len(),
            worst: r.worst,
            passed: r.passes(TOLERANCE),
        }
    }
}

fn randn(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| std * rng.sample::<f64, _>(StandardNormal))
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Scalar `Σ x ⊙ r` for a fixed random `r`, so every output element matters.
fn project(g: &mut Graph<f64>, x: Var, r: &Tensor<f64>) -> Result<Var> {
    let n = g.value(x).numel();
    let flat = g.reshape(x, &[1, n])?;
    let w = g.constant(r.reshape(&[n, 1])?);
    let b = g.constant(Tensor::zeros(&[1]));
    let y = g.linear(flat, w, b)?;
    g.sum(y)
}

/// The toy model used by the end-to-end checks.
pub fn toy_model_config(mode: EmbeddingMode) -> ModelConfig {
    ModelConfig {
        embedding: EmbeddingConfig {
            input_size: 16,
            stage_channels: vec![2, 3],
            downsample_factor_total: 4,
            support_channels: 6,
            adapter_kernel: 3,
            mode,
        },
        querying: QueryingConfig {
            blocks: 1,
            grid: [2, 2, 2],
            d: 8,
            heads: 2,
            ffn_hidden: 12,
            offset_scale: 2.0,
            query_init_std: 0.1,
        },
    }
}

/// Random sample at the toy input size; the flow and prior are optional.
pub fn toy_sample(rng: &mut ChaCha8Rng, label: u8, with_second: bool) -> Sample<f64> {
    let n = 16;
    Sample {
        id: "toy@1".into(),
        subject_id: "toy".into(),
        label,
        t_curr: 1.0,
        image: randn(rng, &[1, n, n, n], 1.0),
        prior: with_second.then(|| (randn(rng, &[1, n, n, n], 1.0), 0.0)),
        flow: with_second.then(|| randn(rng, &[3, n, n, n], 0.5)),
    }
}

fn model_case(name: &str, mode: EmbeddingMode, with_second: bool, seed: u64, opts: &GradCheckOptions) -> Result<CaseResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Model::<f64>::new(toy_model_config(mode), seed)?;
    // Move zero-initialized tensors (biases, offset head, missing vector) off zero.
    for t in model.params.tensors_mut() {
        for v in t.data_mut() {
            *v += 0.05 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let sample = toy_sample(&mut rng, 1, with_second);
    let inputs = model.params.tensors().to_vec();
    let report = grad_check(
        |g, vars| {
            let p = BoundParams::from_vars(vars.to_vec());
            Ok(model.loss(g, &p, &sample)?.0)
        },
        &inputs,
        opts,
    )?;
    let mut case = CaseResult::from_report(name, &report);
    if let Some((i, _)) = case.worst {
        case.name = format!("{name} (worst in {})", model.params.names()[i]);
    }
    Ok(case)
}

type OpCase = (&'static str, Vec<Tensor<f64>>, Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>);

fn op_cases(rng: &mut ChaCha8Rng) -> Vec<OpCase> {
    let mut cases: Vec<OpCase> = Vec::new();
    let proj = |rng: &mut ChaCha8Rng, shape: &[usize]| randn(rng, shape, 1.0);

    let r = proj(rng, &[3, 4]);
    cases.push((
        "add",
        vec![randn(rng, &[3, 4], 1.0), randn(rng, &[3, 4], 1.0)],
        Box::new(move |g, v| {
            let y = g.add(v[0], v[1])?;
            project(g, y, &r)
        }),
    ));
    let r = proj(rng, &[3, 4]);
    cases.push((
        "scale",
        vec![randn(rng, &[3, 4], 1.0)],
        Box::new(move |g, v| {
            let y = g.scale(v[0], -1.7)?;
            project(g, y, &r)
        }),
    ));
    let r = proj(rng, &[20]);
    cases.push((
        "relu",
        vec![randn(rng, &[20], 1.0)],
        Box::new(move |g, v| {
            let y = g.relu(v[0])?;
            project(g, y, &r)
        }),
    ));
    let r = proj(rng, &[20]);
    cases.push((
        "tanh",
        vec![randn(rng, &[20], 1.5)],
        Box::new(move |g, v| {
            let y = g.tanh(v[0])?;
            project(g, y, &r)
        }),
    ));
    let r = proj(rng, &[2, 5]);
    cases.push((
        "reshape/concat/slice",
        vec![randn(rng, &[2, 3], 1.0), randn(rng, &[4, 2], 1.0)],
        Box::new(move |g, v| {
            let b = g.reshape(v[1], &[2, 4])?;
            let c = g.concat(&[v[0], b], 1)?;
            let s = g.slice(c, 1, 1, 5)?;
            project(g, s, &r)
        }),
    ));
    let r = proj(rng, &[3, 2, 2, 3]);
    cases.push((
        "channel_broadcast",
        vec![randn(rng, &[3], 1.0)],
        Box::new(move |g, v| {
            let y = g.channel_broadcast(v[0], &[2, 2, 3])?;
            project(g, y, &r)
        }),
    ));
    let r = proj(rng, &[3, 5, 5, 5]);
    cases.push((
        "conv3d stride 1 pad 1",
        vec![randn(rng, &[2, 5, 5, 5], 1.0), randn(rng, &[3, 2, 3, 3, 3], 0.3), randn(rng, &[3], 0.3)],
        Box::new(move |g, v| {
            let y = g.conv3d(v[0], v[1], v[2], 1, 1)?;
            project(g, y, &r)
        }),
    ));
    let r = proj(rng, &[2, 3, 3, 3]);
    cases.push((
        "conv3d stride 2 pad 1",
        vec![randn(rng, &[2, 6, 6, 6], 1.0), randn(rng, &[2, 2, 3, 3, 3], 0.3), randn(rng, &[2], 0.3)],
        Box::new(move |g, v| {
            let y = g.conv3d(v[0], v[1], v[2], 2, 1)?;
            project(g, y, &r)
        }),
    ));
    let r = proj(rng, &[4, 3]);
    cases.push((
        "linear",
        vec![randn(rng, &[4, 5], 1.0), randn(rng, &[5, 3], 0.5), randn(rng, &[3], 0.5)],
        Box::new(move |g, v| {
            let y = g.linear(v[0], v[1], v[2])?;
            project(g, y, &r)
        }),
    ));
    let r = proj(rng, &[3, 4]);
    cases.push((
        "matmul",
        vec![randn(rng, &[3, 5], 1.0), randn(rng, &[5, 4], 1.0)],
        Box::new(move |g, v| {
            let y = g.matmul(v[0], v[1], false)?;
            project(g, y, &r)
        }),
    ));
    let r = proj(rng, &[3, 4]);
    cases.push((
        "matmul transposed",
        vec![randn(rng, &[3, 5], 1.0), randn(rng, &[4, 5], 1.0)],
        Box::new(move |g, v| {
            let y = g.matmul(v[0], v[1], true)?;
            project(g, y, &r)
        }),
    ));
    for axis in [0usize, 1] {
        let r = proj(rng, &[4, 5]);
        cases.push((
            if axis == 0 { "softmax axis 0" } else { "softmax axis 1" },
            vec![randn(rng, &[4, 5], 1.5)],
            Box::new(move |g, v| {
                let y = g.softmax(v[0], axis)?;
                project(g, y, &r)
            }),
        ));
    }
    let r = proj(rng, &[4, 6]);
    cases.push((
        "layer_norm",
        vec![randn(rng, &[4, 6], 1.0), randn(rng, &[6], 1.0), randn(rng, &[6], 1.0)],
        Box::new(move |g, v| {
            let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
            project(g, y, &r)
        }),
    ));
    let r = proj(rng, &[6, 2]);
    cases.push((
        "trilinear_sample",
        vec![randn(rng, &[2, 4, 5, 3], 1.0), uniform(rng, &[6, 3], -0.95, 0.95)],
        Box::new(move |g, v| {
            let y = g.trilinear_sample(v[0], v[1])?;
            project(g, y, &r)
        }),
    ));
    for label in [0.0, 1.0] {
        cases.push((
            if label == 0.0 { "bce_with_logits label 0" } else { "bce_with_logits label 1" },
            vec![randn(rng, &[1], 2.0)],
            Box::new(move |g, v| g.bce_with_logits(v[0], label)),
        ));
    }
    cases
}

/// Runs every case; the returned list is in a fixed order.
pub fn gradient_suite(seed: u64) -> Result<Vec<CaseResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = GradCheckOptions { seed, ..GradCheckOptions::default() };
    let mut results = Vec::new();
    for (name, inputs, f) in op_cases(&mut rng) {
        let report = grad_check(|g, v| f(g, v), &inputs, &opts)?;
        results.push(CaseResult::from_report(name, &report));
    }
    // Key biases have exactly zero gradient, so the floor keeps roundoff from
    // reading as relative error.
    let model_opts = GradCheckOptions { eps: 1e-5, rel_floor: 1e-5, max_elements_per_input: Some(48), ..opts };
    for (name, mode, second) in [
        ("model flow", EmbeddingMode::Flow, true),
        ("model flow, missing flow", EmbeddingMode::Flow, false),
        ("model prior_image", EmbeddingMode::PriorImage, true),
        ("model prior_image, missing prior", EmbeddingMode::PriorImage, false),
        ("model single_image", EmbeddingMode::SingleImage, false),
    ] {
        results.push(model_case(name, mode, second, rng.gen(), &model_opts)?);
    }
    Ok(results)
}
