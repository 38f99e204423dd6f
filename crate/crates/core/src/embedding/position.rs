use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Fixed 3D sinusoidal encoding `[channels, D, H, W]` at integer positions.
///
/// Channels split into three equal axis blocks (depth, height, width), each
/// holding sin/cos pairs at geometrically spaced frequencies starting at 1.
pub fn positional_encoding<T: Scalar>(shape: [usize; 3], channels: usize) -> Result<Tensor<T>> {
    if channels == 0 || channels % 6 != 0 {
        return Err(Error::Config(format!("position encoding needs channels divisible by 6, got {channels}")));
    }
    Ok(encode(shape, channels, channels))
}

/// Encoding over the largest multiple-of-6 channel prefix; remaining
/// channels are zero.
pub fn positional_encoding_prefix<T: Scalar>(shape: [usize; 3], channels: usize) -> Tensor<T> {
    encode(shape, channels, channels - channels % 6)
}

fn encode<T: Scalar>(shape: [usize; 3], channels: usize, encoded: usize) -> Tensor<T> {
    let [d, h, w] = shape;
    let per_axis = encoded / 3;
    let pairs = (per_axis / 2).max(1);
    let spatial = d * h * w;
    Tensor::from_fn(&[channels, d, h, w], |i| {
        let c = i / spatial;
        if c >= encoded {
            return T::zero();
        }
        let r = i % spatial;
        let pos = [r / (h * w), (r / w) % h, r % w];
        let axis = c / per_axis;
        let j = c % per_axis;
        let k = j / 2;
        let freq = 10000f64.powf(-(k as f64) / pairs as f64);
        let x = pos[axis] as f64 * freq;
        T::of(if j % 2 == 0 { x.sin() } else { x.cos() })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_indivisible_channels() {
        assert!(positional_encoding::<f64>([2, 2, 2], 8).is_err());
        assert!(positional_encoding::<f64>([2, 2, 2], 12).is_ok());
    }

    #[test]
    fn distinct_positions_get_distinct_vectors() {
        let shape = [4, 3, 5];
        let pe = positional_encoding::<f64>(shape, 12).unwrap();
        let n = 60;
        let vec_at = |s: usize| -> Vec<f64> { (0..12).map(|c| pe.data()[c * n + s]).collect() };
        for a in 0..n {
            for b in a + 1..n {
                let (va, vb) = (vec_at(a), vec_at(b));
                let dist: f64 = va.iter().zip(&vb).map(|(x, y)| (x - y).powi(2)).sum();
                assert!(dist > 1e-6, "positions {a} and {b} collide");
            }
        }
    }

    #[test]
    fn bounded_and_deterministic() {
        let a = positional_encoding::<f64>([3, 3, 3], 18).unwrap();
        assert!(a.data().iter().all(|v| v.abs() <= 1.0));
        assert_eq!(a, positional_encoding::<f64>([3, 3, 3], 18).unwrap());
    }

    #[test]
    fn prefix_pads_with_zeros() {
        let pe = positional_encoding_prefix::<f64>([2, 2, 2], 8);
        assert_eq!(pe.shape(), &[8, 2, 2, 2]);
        assert!(pe.data()[6 * 8..].iter().all(|&v| v == 0.0));
        assert_eq!(&pe.data()[..6 * 8], positional_encoding::<f64>([2, 2, 2], 6).unwrap().data());
    }
}
