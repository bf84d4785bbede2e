use crate::error::{NumError, Result};
use crate::{Scalar, Tensor};

/// Fixed sinusoidal position table `[length, dim]`:
/// `pe[p, 2i] = sin(p / 10000^(2i/dim))`, `pe[p, 2i+1] = cos(..)`.
pub fn sinusoidal_positions<T: Scalar>(length: usize, dim: usize) -> Result<Tensor<T>> {
    if dim % 2 != 0 {
        return Err(NumError::Invalid(format!("position dimension {dim} must be even")));
    }
    let mut data = vec![T::zero(); length * dim];
    for pos in 0..length {
        for i in 0..dim / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            data[pos * dim + 2 * i] = T::from_f64(angle.sin());
            data[pos * dim + 2 * i + 1] = T::from_f64(angle.cos());
        }
    }
    Tensor::new(&[length, dim], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn position_zero_alternates() {
        let pe = sinusoidal_positions::<f64>(3, 8).unwrap();
        for j in 0..8 {
            assert_eq!(pe.at(&[0, j]), if j % 2 == 0 { 0.0 } else { 1.0 });
        }
        assert!((pe.at(&[1, 0]) - 0.841_470_984_8).abs() < 1e-9);
    }

    #[test]
    fn odd_dimension_is_rejected() {
        assert!(sinusoidal_positions::<f32>(4, 7).is_err());
    }

    #[test]
    fn values_are_bounded() {
        let pe = sinusoidal_positions::<f32>(2000, 16).unwrap();
        assert!(pe.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}
