use crate::error::{Error, Result};
use crate::flowfield::{same_shape, volume_dims, FlowField};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Trilinear sample at continuous voxel coordinates, clamped to the border.
pub fn sample_voxel<T: Scalar>(data: &[T], dims: [usize; 3], pos: [T; 3]) -> T {
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    let mut frac = [T::zero(); 3];
    for a in 0..3 {
        let n = dims[a];
        if n == 1 {
            continue;
        }
        let p = pos[a].max(T::zero()).min(T::of((n - 1) as f64));
        let l = p.floor().to_usize().unwrap_or(0).min(n - 2);
        lo[a] = l;
        hi[a] = l + 1;
        frac[a] = p - T::of(l as f64);
    }
    let at = |z: usize, y: usize, x: usize| data[(z * dims[1] + y) * dims[2] + x];
    let one = T::one();
    let (fz, fy, fx) = (frac[0], frac[1], frac[2]);
    let c00 = at(lo[0], lo[1], lo[2]) * (one - fx) + at(lo[0], lo[1], hi[2]) * fx;
    let c01 = at(lo[0], hi[1], lo[2]) * (one - fx) + at(lo[0], hi[1], hi[2]) * fx;
    let c10 = at(hi[0], lo[1], lo[2]) * (one - fx) + at(hi[0], lo[1], hi[2]) * fx;
    let c11 = at(hi[0], hi[1], lo[2]) * (one - fx) + at(hi[0], hi[1], hi[2]) * fx;
    let c0 = c00 * (one - fy) + c01 * fy;
    let c1 = c10 * (one - fy) + c11 * fy;
    c0 * (one - fz) + c1 * fz
}

/// `output(p) = volume(p + flow(p))`, trilinear with border clamping.
pub fn warp<T: Scalar>(volume: &Tensor<T>, flow: &FlowField<T>) -> Result<Tensor<T>> {
    let dims = volume_dims(volume, "warp")?;
    if flow.spatial() != dims {
        return Err(Error::shape("warp", format!("volume {dims:?} vs flow {:?}", flow.spatial())));
    }
    let [d, h, w] = dims;
    let n = d * h * w;
    let v = flow.vectors.data();
    let src = volume.data();
    let mut out = Vec::with_capacity(n);
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let i = (z * h + y) * w + x;
                let pos = [T::of(z as f64) + v[i], T::of(y as f64) + v[n + i], T::of(x as f64) + v[2 * n + i]];
                out.push(sample_voxel(src, dims, pos));
            }
        }
    }
    Tensor::new(&[d, h, w], out)
}

/// Shifts and scales intensities to zero mean and unit variance. Constant
/// volumes map to all zeros.
pub fn normalize_intensity<T: Scalar>(volume: &Tensor<T>) -> Tensor<T> {
    let n = volume.numel().max(1) as f64;
    let mean = volume.data().iter().map(|v| v.to_f64_lossless()).sum::<f64>() / n;
    let var = volume.data().iter().map(|v| (v.to_f64_lossless() - mean).powi(2)).sum::<f64>() / n;
    let inv = if var > 1e-24 { 1.0 / var.sqrt() } else { 0.0 };
    volume.map(|v| T::of((v.to_f64_lossless() - mean) * inv))
}

pub fn mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    same_shape(a, b, "mse")?;
    let n = a.numel().max(1) as f64;
    Ok(a.data().iter().zip(b.data()).map(|(&x, &y)| (x - y).to_f64_lossless().powi(2)).sum::<f64>() / n)
}

/// Separable Gaussian blur of a `[D, H, W]` block with clamped borders.
pub(crate) fn gaussian_smooth_slice<T: Scalar>(data: &mut [T], dims: [usize; 3], sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let kernel: Vec<T> = kernel.into_iter().map(T::of).collect();

    let strides = [dims[1] * dims[2], dims[2], 1];
    let mut line = Vec::new();
    for axis in 0..3 {
        let n = dims[axis];
        if n == 1 {
            continue;
        }
        let others: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
        for i in 0..dims[others[0]] {
            for j in 0..dims[others[1]] {
                let base = i * strides[others[0]] + j * strides[others[1]];
                line.clear();
                line.extend((0..n).map(|k| data[base + k * strides[axis]]));
                for k in 0..n {
                    let mut acc = T::zero();
                    for (t, &kv) in kernel.iter().enumerate() {
                        let src = (k as isize + t as isize - radius).clamp(0, n as isize - 1) as usize;
                        acc += kv * line[src];
                    }
                    data[base + k * strides[axis]] = acc;
                }
            }
        }
    }
}

/// Gaussian blur of a `[D, H, W]` volume.
pub fn gaussian_smooth<T: Scalar>(volume: &Tensor<T>, sigma: f64) -> Result<Tensor<T>> {
    let dims = volume_dims(volume, "gaussian_smooth")?;
    let mut out = volume.clone();
    gaussian_smooth_slice(out.data_mut(), dims, sigma);
    Ok(out)
}

/// Central-difference gradient with one-sided differences at the border.
pub(crate) fn gradient<T: Scalar>(data: &[T], dims: [usize; 3]) -> [Vec<T>; 3] {
    let [d, h, w] = dims;
    let strides = [h * w, w, 1];
    let half = T::of(0.5);
    let mut out = [vec![T::zero(); data.len()], vec![T::zero(); data.len()], vec![T::zero(); data.len()]];
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let i = (z * h + y) * w + x;
                let idx = [z, y, x];
                for a in 0..3 {
                    let n = dims[a];
                    if n == 1 {
                        continue;
                    }
                    let s = strides[a];
                    out[a][i] = if idx[a] == 0 {
                        data[i + s] - data[i]
                    } else if idx[a] == n - 1 {
                        data[i] - data[i - s]
                    } else {
                        (data[i + s] - data[i - s]) * half
                    };
                }
            }
        }
    }
    out
}
