//! Binary band masks for MCLNN layers.
//!
//! A mask is an `l x e` matrix (feature length by hidden width). The positions
//! of its ones are given by the linear index
//!
//! ```text
//! lx = a + (g - 1) * (l + (bw - ov)),   a in [0, bw - 1],
//!                                        g in [1, ceil(l * e / (l + bw - ov))]
//! ```
//!
//! laid out column-major: row `lx % l`, column `lx / l`. Each column is one
//! hidden node, so a band of `bw` consecutive ones selects a local region of the
//! feature vector. Bands that run past the last row continue at the top of the
//! next column, which is what shifts the band phase from column to column when
//! the overlap is negative.

use std::fmt;

use thiserror::Error;

use crate::error::ShapeError;
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MaskError {
    #[error("invalid mask spec: {bound} violated ({detail})")]
    InvalidSpec { bound: &'static str, detail: String },
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

/// Parameters of a band mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MaskSpec {
    feature_length: usize,
    hidden_width: usize,
    bandwidth: usize,
    overlap: i64,
}

impl MaskSpec {
    pub fn new(feature_length: usize, hidden_width: usize, bandwidth: usize, overlap: i64) -> Result<Self, MaskError> {
        let invalid = |bound, detail: String| Err(MaskError::InvalidSpec { bound, detail });
        if feature_length == 0 {
            return invalid("feature_length >= 1", "feature_length = 0".into());
        }
        if hidden_width == 0 {
            return invalid("hidden_width >= 1", "hidden_width = 0".into());
        }
        if bandwidth == 0 || bandwidth > feature_length {
            return invalid(
                "1 <= bandwidth <= feature_length",
                format!("bandwidth = {bandwidth}, feature_length = {feature_length}"),
            );
        }
        if overlap >= bandwidth as i64 {
            return invalid(
                "overlap < bandwidth",
                format!("overlap = {overlap}, bandwidth = {bandwidth}"),
            );
        }
        let stride = feature_length as i128 + bandwidth as i128 - overlap as i128;
        if stride < 1 {
            return invalid(
                "feature_length + (bandwidth - overlap) >= 1",
                format!("stride = {stride}"),
            );
        }
        Ok(Self {
            feature_length,
            hidden_width,
            bandwidth,
            overlap,
        })
    }

    pub fn feature_length(&self) -> usize {
        self.feature_length
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden_width
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn overlap(&self) -> i64 {
        self.overlap
    }

    /// Distance between the starts of successive bands in the flat index.
    pub fn stride(&self) -> usize {
        (self.feature_length as i64 + self.bandwidth as i64 - self.overlap) as usize
    }

    pub fn cell_count(&self) -> usize {
        self.feature_length * self.hidden_width
    }
}

/// All linear indices of the mask's ones, ascending and unique.
pub fn generate_linear_indices(spec: &MaskSpec) -> Vec<usize> {
    let cells = spec.cell_count();
    let stride = spec.stride();
    let bands = cells.div_ceil(stride);
    let mut out = Vec::with_capacity(bands * spec.bandwidth);
    for g in 0..bands {
        let start = g * stride;
        for a in 0..spec.bandwidth {
            let lx = start + a;
            if lx < cells {
                out.push(lx);
            }
        }
    }
    // stride > bw whenever ov < bw, so bands never interleave and the list is
    // already ascending; sort anyway so the contract doesn't hinge on that
    out.sort_unstable();
    out.dedup();
    out
}

/// Fixed `l x e` connectivity pattern. Only constructible from a [`MaskSpec`].
#[derive(Clone, PartialEq, Eq)]
pub struct BinaryMask {
    spec: MaskSpec,
    // row-major, rows = features, cols = hidden nodes
    cells: Vec<bool>,
}

impl BinaryMask {
    pub fn spec(&self) -> &MaskSpec {
        &self.spec
    }

    pub fn rows(&self) -> usize {
        self.spec.feature_length
    }

    pub fn cols(&self) -> usize {
        self.spec.hidden_width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows(), self.cols())
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.cols() + col]
    }

    /// Row-major cells, `true` where the connection is active.
    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn ones(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Fraction of active connections.
    pub fn density(&self) -> f64 {
        self.ones() as f64 / self.cells.len() as f64
    }

    /// `(row, column)` of every one, in column-major order.
    pub fn positions(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.ones());
        for c in 0..self.cols() {
            for r in 0..self.rows() {
                if self.get(r, c) {
                    out.push((r, c));
                }
            }
        }
        out
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_fn(self.rows(), self.cols(), |r, c| if self.get(r, c) { 1.0 } else { 0.0 })
    }

    /// Zeroes every entry of `m` where the mask is off, in place.
    pub(crate) fn zero_inactive(&self, m: &mut Matrix) {
        debug_assert_eq!(m.shape(), self.shape());
        for (v, &on) in m.as_mut_slice().iter_mut().zip(&self.cells) {
            if !on {
                *v = 0.0;
            }
        }
    }

    /// Text grid, one line per feature row, `1` for active cells.
    pub fn to_grid_string(&self) -> String {
        let mut s = String::with_capacity(self.rows() * (2 * self.cols() + 1));
        for r in 0..self.rows() {
            for c in 0..self.cols() {
                if c > 0 {
                    s.push(' ');
                }
                s.push(if self.get(r, c) { '1' } else { '0' });
            }
            s.push('\n');
        }
        s
    }
}

impl fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BinaryMask {:?}\n{}", self.spec, self.to_grid_string())
    }
}

pub fn generate_mask(spec: &MaskSpec) -> BinaryMask {
    let l = spec.feature_length;
    let e = spec.hidden_width;
    let mut cells = vec![false; l * e];
    for lx in generate_linear_indices(spec) {
        let (row, col) = (lx % l, lx / l);
        cells[row * e + col] = true;
    }
    BinaryMask { spec: *spec, cells }
}

/// Element-wise product `W o M`. Inactive cells come out as `+0.0`.
pub fn apply_mask(weights: &Matrix, mask: &BinaryMask) -> Result<Matrix, MaskError> {
    if weights.shape() != mask.shape() {
        return Err(ShapeError::new("apply_mask", mask.shape(), weights.shape()).into());
    }
    let mut out = weights.clone();
    mask.zero_inactive(&mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(l: usize, e: usize, bw: usize, ov: i64) -> MaskSpec {
        MaskSpec::new(l, e, bw, ov).unwrap()
    }

    #[test]
    fn linear_indices_examples() {
        assert_eq!(generate_linear_indices(&spec(4, 3, 2, 0)), vec![0, 1, 6, 7]);
        assert_eq!(
            generate_linear_indices(&spec(4, 4, 4, 0)),
            vec![0, 1, 2, 3, 8, 9, 10, 11]
        );
        assert_eq!(generate_linear_indices(&spec(1, 1, 1, 0)), vec![0]);
    }

    #[test]
    fn mask_l4_e3() {
        let m = generate_mask(&spec(4, 3, 2, 0));
        assert_eq!(m.positions(), vec![(0, 0), (1, 0), (2, 1), (3, 1)]);
        assert_eq!(m.to_grid_string(), "1 0 0\n1 0 0\n0 1 0\n0 1 0\n");
    }

    #[test]
    fn negative_overlap_wraps_bands() {
        let m = generate_mask(&spec(6, 5, 3, -1));
        let expected = vec![(0, 0), (1, 0), (2, 0), (4, 1), (5, 1), (0, 2), (2, 3), (3, 3), (4, 3)];
        assert_eq!(m.positions(), expected);
        assert!((0..6).all(|r| !m.get(r, 4)));
    }

    #[test]
    fn single_cell() {
        let m = generate_mask(&spec(1, 1, 1, 0));
        assert_eq!(m.to_matrix().as_slice(), &[1.0]);
    }

    #[test]
    fn invalid_specs_name_the_bound() {
        let err = MaskSpec::new(4, 3, 5, 0).unwrap_err();
        assert!(err.to_string().contains("bandwidth <= feature_length"), "{err}");
        let err = MaskSpec::new(4, 3, 2, 2).unwrap_err();
        assert!(err.to_string().contains("overlap < bandwidth"), "{err}");
        assert!(MaskSpec::new(0, 3, 1, 0).is_err());
        assert!(MaskSpec::new(3, 0, 1, 0).is_err());
        assert!(MaskSpec::new(3, 3, 0, 0).is_err());
    }

    #[test]
    fn apply_mask_examples() {
        // [[1,0],[0,1]] is the mask l=2, e=2, bw=1, ov=0 (stride 3)
        let m = generate_mask(&spec(2, 2, 1, 0));
        assert_eq!(m.to_grid_string(), "1 0\n0 1\n");
        let w = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let z = apply_mask(&w, &m).unwrap();
        assert_eq!(z.as_slice(), &[1.0, 0.0, 0.0, 4.0]);

        // a single column band covering every row
        let full = generate_mask(&spec(2, 1, 2, 0));
        assert_eq!(full.ones(), 2);
        let col = Matrix::from_rows(&[[5.0], [-6.0]]).unwrap();
        assert_eq!(apply_mask(&col, &full).unwrap(), col);
    }

    #[test]
    fn apply_mask_all_zero_columns() {
        // l=2, e=2, bw=1, ov=-10: stride 13 > cells, only index 0 set
        let m = generate_mask(&spec(2, 2, 1, -10));
        assert_eq!(m.ones(), 1);
        let w = Matrix::filled(2, 2, -7.0);
        let z = apply_mask(&w, &m).unwrap();
        assert_eq!(z.as_slice(), &[-7.0, 0.0, 0.0, 0.0]);
        assert!(z.as_slice()[1].is_sign_positive());
    }

    #[test]
    fn apply_mask_shape_error() {
        let m = generate_mask(&spec(4, 3, 2, 0));
        let err = apply_mask(&Matrix::zeros(3, 4), &m).unwrap_err();
        assert_eq!(err, MaskError::Shape(ShapeError::new("apply_mask", (4, 3), (3, 4))));
    }

    #[test]
    fn table3_masks_build() {
        let m1 = generate_mask(&spec(256, 220, 40, -10));
        let m2 = generate_mask(&spec(220, 200, 10, 3));
        assert_eq!(m1.shape(), (256, 220));
        assert_eq!(m2.shape(), (220, 200));
        assert!(m1.ones() > 0 && m2.ones() > 0);
    }
}
