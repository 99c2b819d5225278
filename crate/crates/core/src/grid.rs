use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// A row-major `height × width` field of `f32`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Grid {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Grid {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(crate::error::invalid("grid", "dimensions must be positive"));
        }
        if data.len() != height * width {
            return Err(Error::ShapeMismatch {
                what: "grid data",
                expected: format!("{}", height * width),
                found: format!("{}", data.len()),
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_same_shape(&self, other: &Grid, what: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                what,
                expected: format!("{}x{}", self.height, self.width),
                found: format!("{}x{}", other.height, other.width),
            });
        }
        Ok(())
    }

    /// Linear min-max rescale to `[0, 1]`; a constant field maps to zeros.
    pub fn min_max_normalized(&self) -> Grid {
        Grid {
            height: self.height,
            width: self.width,
            data: normalize_f64(self.data.iter().map(|&v| v as f64)),
        }
    }
}

/// Min-max normalization of a stream of values, computed in `f64`.
pub(crate) fn normalize_f64(values: impl Iterator<Item = f64> + Clone) -> Vec<f32> {
    let (lo, hi) = values
        .clone()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    if !(hi > lo) {
        return values.map(|_| 0.0).collect();
    }
    let range = hi - lo;
    values
        .map(|v| (((v - lo) / range) as f32).clamp(0.0, 1.0))
        .collect()
}

/// A `channels × height × width` latent tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Latent {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(crate::error::invalid("latent", "dimensions must be positive"));
        }
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch {
                what: "latent data",
                expected: format!("{}", channels * height * width),
                found: format!("{}", data.len()),
            });
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_same_shape(&self, other: &Latent, what: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                what,
                expected: format!("{}x{}x{}", self.channels, self.height, self.width),
                found: format!("{}x{}x{}", other.channels, other.height, other.width),
            });
        }
        Ok(())
    }

    /// Euclidean norm over all cells, accumulated in `f64`.
    pub fn l2_norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|&v| (v as f64) * (v as f64)).sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn normalize_constant_is_zero() {
        let g = Grid::new(2, 2, vec![3.0; 4]).unwrap();
        assert_eq!(g.min_max_normalized().as_slice(), &[0.0; 4]);
    }

    #[test]
    fn normalize_maps_to_unit_range() {
        let g = Grid::new(2, 2, vec![0.0, 2.0, 1.0, 2.0]).unwrap();
        assert_eq!(g.min_max_normalized().as_slice(), &[0.0, 1.0, 0.5, 1.0]);
    }

    #[test]
    fn rejects_bad_lengths() {
        assert!(Grid::new(2, 2, vec![0.0; 3]).is_err());
        assert!(Latent::new(1, 2, 2, vec![0.0; 5]).is_err());
        assert!(Grid::new(0, 2, vec![]).is_err());
    }
}
