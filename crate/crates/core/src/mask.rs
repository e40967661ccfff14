//! Binary segmentation masks.

use ndarray::Array2;

use crate::error::{Error, Result};

/// An H×W grid of {0,1} values. Used for ground-truth, training (possibly
/// corrupted), and predicted masks alike.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    data: Array2<u8>,
}

impl BinaryMask {
    /// Wraps a grid, checking that every value is exactly 0 or 1 and that
    /// both dimensions are at least 1.
    pub fn new(data: Array2<u8>) -> Result<Self> {
        let (h, w) = data.dim();
        if h == 0 || w == 0 {
            return Err(Error::InvalidConfig(format!(
                "mask dimensions must be >= 1, got {h}x{w}"
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidConfig(
                "mask values must be exactly 0 or 1".into(),
            ));
        }
        Ok(Self { data })
    }

    /// All-background mask.
    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            data: Array2::zeros((h, w)),
        }
    }

    /// All-foreground mask.
    pub fn ones(h: usize, w: usize) -> Self {
        Self {
            data: Array2::from_elem((h, w), 1),
        }
    }

    /// Builds a mask from a predicate over (row, col).
    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        Self {
            data: Array2::from_shape_fn((h, w), |(r, c)| u8::from(f(r, c))),
        }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.data[(r, c)]
    }

    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.data[(r, c)] = u8::from(v);
    }

    pub fn grid(&self) -> &Array2<u8> {
        &self.data
    }

    /// Number of foreground pixels.
    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    /// Foreground fraction in [0, 1].
    pub fn foreground_fraction(&self) -> f64 {
        let (h, w) = self.dim();
        self.count_ones() as f64 / (h * w) as f64
    }

    /// Pixelwise `self <= other`.
    pub fn subset_of(&self, other: &BinaryMask) -> bool {
        self.dim() == other.dim()
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(&a, &b)| a <= b)
    }

    pub(crate) fn same_shape(&self, other: &BinaryMask) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::shape_mismatch(
                format!("{:?}", self.dim()),
                format!("{:?}", other.dim()),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rejects_non_binary_values() {
        assert!(BinaryMask::new(array![[0, 2]]).is_err());
        assert!(BinaryMask::new(array![[0, 1], [1, 0]]).is_ok());
    }

    #[test]
    fn rejects_empty_grid() {
        assert!(BinaryMask::new(Array2::zeros((0, 3))).is_err());
    }

    #[test]
    fn counts_and_subsets() {
        let a = BinaryMask::from_fn(3, 3, |r, c| r == 1 && c == 1);
        let b = BinaryMask::ones(3, 3);
        assert_eq!(a.count_ones(), 1);
        assert!(a.subset_of(&b));
        assert!(!b.subset_of(&a));
    }
}
