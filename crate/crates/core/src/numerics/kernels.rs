//! Raw forward and backward loops behind the differentiable operations.
//!
//! Every accumulation runs in a fixed order so results are reproducible
//! bit-for-bit across runs.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub input: [usize; 3],
    pub output: [usize; 3],
}

impl ConvGeom {
    pub fn new(xs: [usize; 4], ws: [usize; 5], stride: usize, pad: usize) -> Result<Self> {
        let [cin, d, h, w] = xs;
        let [cout, wcin, k, k2, k3] = ws;
        if wcin != cin {
            return Err(Error::shape(
                "conv3d",
                format!("input has {cin} channels but weight expects {wcin}"),
            ));
        }
        if k != k2 || k != k3 || k == 0 {
            return Err(Error::shape("conv3d", format!("kernel must be a non-empty cube, got {ws:?}")));
        }
        if stride == 0 {
            return Err(Error::shape("conv3d", "stride must be at least 1"));
        }
        let mut output = [0; 3];
        for (o, &n) in output.iter_mut().zip(&[d, h, w]) {
            if k > n + 2 * pad {
                return Err(Error::shape(
                    "conv3d",
                    format!("kernel {k} exceeds padded extent {} of input {xs:?}", n + 2 * pad),
                ));
            }
            *o = (n + 2 * pad - k) / stride + 1;
        }
        Ok(Self { cin, cout, k, stride, pad, input: [d, h, w], output })
    }

    fn in_spatial(&self) -> usize {
        self.input.iter().product()
    }

    fn out_spatial(&self) -> usize {
        self.output.iter().product()
    }
}

/// Output positions `o` whose tap `o * stride + kk - pad` lands inside `0..n_in`.
fn valid_range(n_in: usize, n_out: usize, stride: usize, pad: usize, kk: usize) -> Range<usize> {
    let lo = if pad > kk { (pad - kk).div_ceil(stride) } else { 0 };
    let top = n_in - 1 + pad;
    if top < kk {
        return 0..0;
    }
    let hi = ((top - kk) / stride + 1).min(n_out);
    lo..hi.max(lo)
}

/// Visits every (kernel tap, input row, output row) triple of a convolution.
///
/// `f(weight_index, input_row_offset, output_row_offset, ow_range, first_iw)`
/// where row offsets are relative to one channel's spatial block.
fn for_each_row(g: &ConvGeom, mut f: impl FnMut(usize, usize, usize, Range<usize>, usize)) {
    let [d, h, w] = g.input;
    let [od, oh, ow] = g.output;
    let (k, s, p) = (g.k, g.stride, g.pad);
    for kd in 0..k {
        let rd = valid_range(d, od, s, p, kd);
        for kh in 0..k {
            let rh = valid_range(h, oh, s, p, kh);
            for kw in 0..k {
                let rw = valid_range(w, ow, s, p, kw);
                if rw.is_empty() {
                    continue;
                }
                let first_iw = rw.start * s + kw - p;
                let widx = (kd * k + kh) * k + kw;
                for o_d in rd.clone() {
                    let id = o_d * s + kd - p;
                    for o_h in rh.clone() {
                        let ih = o_h * s + kh - p;
                        f(widx, (id * h + ih) * w, (o_d * oh + o_h) * ow, rw.clone(), first_iw);
                    }
                }
            }
        }
    }
}

pub(crate) fn conv3d_forward<T: Scalar>(g: &ConvGeom, x: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
    let (isp, osp, k3) = (g.in_spatial(), g.out_spatial(), g.k * g.k * g.k);
    let mut out = vec![T::zero(); g.cout * osp];
    for co in 0..g.cout {
        let out_c = &mut out[co * osp..(co + 1) * osp];
        out_c.iter_mut().for_each(|v| *v = bias[co]);
        for ci in 0..g.cin {
            let x_c = &x[ci * isp..(ci + 1) * isp];
            let w_c = &weight[(co * g.cin + ci) * k3..(co * g.cin + ci + 1) * k3];
            for_each_row(g, |widx, xrow, orow, rw, iw0| {
                let wv = w_c[widx];
                let n = rw.len();
                let dst = &mut out_c[orow + rw.start..orow + rw.end];
                if g.stride == 1 {
                    for (o, &xv) in dst.iter_mut().zip(&x_c[xrow + iw0..xrow + iw0 + n]) {
                        *o += wv * xv;
                    }
                } else {
                    for (j, o) in dst.iter_mut().enumerate() {
                        *o += wv * x_c[xrow + iw0 + j * g.stride];
                    }
                }
            });
        }
    }
    out
}

/// Returns (grad_input, grad_weight, grad_bias); input gradient is skipped
/// when `need_input` is false.
pub(crate) fn conv3d_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    weight: &[T],
    grad_out: &[T],
    need_input: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let (isp, osp, k3) = (g.in_spatial(), g.out_spatial(), g.k * g.k * g.k);
    let mut gx = need_input.then(|| vec![T::zero(); g.cin * isp]);
    let mut gw = vec![T::zero(); weight.len()];
    let mut gb = vec![T::zero(); g.cout];
    for co in 0..g.cout {
        let go_c = &grad_out[co * osp..(co + 1) * osp];
        gb[co] = go_c.iter().copied().sum();
        for ci in 0..g.cin {
            let x_c = &x[ci * isp..(ci + 1) * isp];
            let base = (co * g.cin + ci) * k3;
            let w_c = &weight[base..base + k3];
            let gw_c = &mut gw[base..base + k3];
            let mut gx_c = gx.as_mut().map(|v| &mut v[ci * isp..(ci + 1) * isp]);
            for_each_row(g, |widx, xrow, orow, rw, iw0| {
                let src = &go_c[orow + rw.start..orow + rw.end];
                let mut acc = T::zero();
                if g.stride == 1 {
                    for (&gov, &xv) in src.iter().zip(&x_c[xrow + iw0..xrow + iw0 + src.len()]) {
                        acc += gov * xv;
                    }
                } else {
                    for (j, &gov) in src.iter().enumerate() {
                        acc += gov * x_c[xrow + iw0 + j * g.stride];
                    }
                }
                gw_c[widx] += acc;
                if let Some(gx_c) = gx_c.as_deref_mut() {
                    let wv = w_c[widx];
                    for (j, &gov) in src.iter().enumerate() {
                        gx_c[xrow + iw0 + j * g.stride] += wv * gov;
                    }
                }
            });
        }
    }
    (gx, gw, gb)
}

/// `out[r, j] = bias[j] + sum_i x[r, i] * w[i, j]`
pub(crate) fn linear_forward<T: Scalar>(x: &[T], w: &[T], bias: Option<&[T]>, din: usize, dout: usize) -> Vec<T> {
    let rows = x.len() / din.max(1);
    let mut out = vec![T::zero(); rows * dout];
    for r in 0..rows {
        let orow = &mut out[r * dout..(r + 1) * dout];
        if let Some(b) = bias {
            orow.copy_from_slice(b);
        }
        for (i, &xv) in x[r * din..(r + 1) * din].iter().enumerate() {
            for (o, &wv) in orow.iter_mut().zip(&w[i * dout..(i + 1) * dout]) {
                *o += xv * wv;
            }
        }
    }
    out
}

pub(crate) struct LinearGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Vec<T>,
}

pub(crate) fn linear_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    grad_out: &[T],
    din: usize,
    dout: usize,
    need_input: bool,
    need_weight: bool,
) -> LinearGrads<T> {
    let rows = x.len() / din.max(1);
    let mut gx = need_input.then(|| vec![T::zero(); x.len()]);
    let mut gw = need_weight.then(|| vec![T::zero(); w.len()]);
    let mut gb = vec![T::zero(); dout];
    for r in 0..rows {
        let go = &grad_out[r * dout..(r + 1) * dout];
        for (b, &g) in gb.iter_mut().zip(go) {
            *b += g;
        }
        let xr = &x[r * din..(r + 1) * din];
        for i in 0..din {
            let wrow = &w[i * dout..(i + 1) * dout];
            if let Some(gx) = gx.as_mut() {
                gx[r * din + i] = go.iter().zip(wrow).map(|(&a, &b)| a * b).sum();
            }
            if let Some(gw) = gw.as_mut() {
                let xv = xr[i];
                for (gwv, &g) in gw[i * dout..(i + 1) * dout].iter_mut().zip(go) {
                    *gwv += xv * g;
                }
            }
        }
    }
    LinearGrads { input: gx, weight: gw, bias: gb }
}

/// Per-axis interpolation stencil for one normalized coordinate.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AxisStencil<T> {
    pub lo: usize,
    pub hi: usize,
    pub frac: T,
    /// d(continuous index)/d(normalized coordinate); zero when clamped.
    pub dpos: T,
}

/// Maps normalized `u` in [-1, 1] onto voxel centres 0..n-1 with border clamping.
pub(crate) fn axis_stencil<T: Scalar>(u: T, n: usize) -> AxisStencil<T> {
    if n == 1 {
        return AxisStencil { lo: 0, hi: 0, frac: T::zero(), dpos: T::zero() };
    }
    let half_span = T::of((n - 1) as f64 / 2.0);
    let pos = (u + T::one()) * half_span;
    let last = T::of((n - 1) as f64);
    if pos < T::zero() {
        return AxisStencil { lo: 0, hi: 1, frac: T::zero(), dpos: T::zero() };
    }
    if pos > last {
        return AxisStencil { lo: n - 2, hi: n - 1, frac: T::one(), dpos: T::zero() };
    }
    let lo = pos.floor().to_usize().unwrap_or(0).min(n - 2);
    let frac = pos - T::of(lo as f64);
    AxisStencil { lo, hi: lo + 1, frac, dpos: half_span }
}

/// Eight corner (flat spatial index, weight) pairs plus weight partials per axis.
pub(crate) struct Corners<T> {
    pub index: [usize; 8],
    pub weight: [T; 8],
    /// d weight / d frac along (depth, height, width).
    pub dweight: [[T; 3]; 8],
    pub dpos: [T; 3],
}

pub(crate) fn corners<T: Scalar>(point: &[T], dims: [usize; 3]) -> Corners<T> {
    let st = [
        axis_stencil(point[0], dims[0]),
        axis_stencil(point[1], dims[1]),
        axis_stencil(point[2], dims[2]),
    ];
    let mut index = [0; 8];
    let mut weight = [T::zero(); 8];
    let mut dweight = [[T::zero(); 3]; 8];
    for c in 0..8 {
        let bits = [(c >> 2) & 1, (c >> 1) & 1, c & 1];
        let mut idx = [0usize; 3];
        let mut f = [T::zero(); 3];
        let mut df = [T::zero(); 3];
        for a in 0..3 {
            if bits[a] == 1 {
                idx[a] = st[a].hi;
                f[a] = st[a].frac;
                df[a] = T::one();
            } else {
                idx[a] = st[a].lo;
                f[a] = T::one() - st[a].frac;
                df[a] = -T::one();
            }
        }
        index[c] = (idx[0] * dims[1] + idx[1]) * dims[2] + idx[2];
        weight[c] = f[0] * f[1] * f[2];
        dweight[c] = [df[0] * f[1] * f[2], f[0] * df[1] * f[2], f[0] * f[1] * df[2]];
    }
    Corners { index, weight, dweight, dpos: [st[0].dpos, st[1].dpos, st[2].dpos] }
}

/// field: [C, D, H, W]; points: [N, 3] → [N, C]
pub(crate) fn trilinear_forward<T: Scalar>(field: &[T], fs: [usize; 4], points: &[T]) -> Vec<T> {
    let [c, d, h, w] = fs;
    let sp = d * h * w;
    let n = points.len() / 3;
    let mut out = vec![T::zero(); n * c];
    for p in 0..n {
        let cs = corners(&points[p * 3..p * 3 + 3], [d, h, w]);
        let row = &mut out[p * c..(p + 1) * c];
        for (ch, o) in row.iter_mut().enumerate() {
            let f = &field[ch * sp..(ch + 1) * sp];
            *o = (0..8).map(|k| cs.weight[k] * f[cs.index[k]]).sum();
        }
    }
    out
}

pub(crate) fn trilinear_backward<T: Scalar>(
    field: &[T],
    fs: [usize; 4],
    points: &[T],
    grad_out: &[T],
    need_field: bool,
    need_points: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let [c, d, h, w] = fs;
    let sp = d * h * w;
    let n = points.len() / 3;
    let mut gf = need_field.then(|| vec![T::zero(); field.len()]);
    let mut gp = need_points.then(|| vec![T::zero(); points.len()]);
    for p in 0..n {
        let cs = corners(&points[p * 3..p * 3 + 3], [d, h, w]);
        let go = &grad_out[p * c..(p + 1) * c];
        if let Some(gf) = gf.as_mut() {
            for (ch, &g) in go.iter().enumerate() {
                let dst = &mut gf[ch * sp..(ch + 1) * sp];
                for k in 0..8 {
                    dst[cs.index[k]] += cs.weight[k] * g;
                }
            }
        }
        if let Some(gp) = gp.as_mut() {
            let mut acc = [T::zero(); 3];
            for (ch, &g) in go.iter().enumerate() {
                let f = &field[ch * sp..(ch + 1) * sp];
                for k in 0..8 {
                    let v = f[cs.index[k]] * g;
                    for a in 0..3 {
                        acc[a] += cs.dweight[k][a] * v;
                    }
                }
            }
            for a in 0..3 {
                gp[p * 3 + a] = acc[a] * cs.dpos[a];
            }
        }
    }
    (gf, gp)
}
