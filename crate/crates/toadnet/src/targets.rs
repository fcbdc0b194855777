//! Gaussian heat-map targets synthesized from bounding-box masks.
//!
//! Each box (r_min..=r_max, c_min..=c_max) becomes a separable Gaussian
//! centered on the box with its value falling to 0.5 exactly at the box
//! boundary midpoints (and hence 0.25 at the corners). Targets are laid out
//! on the network output grid directly: output cell (i, j) samples the
//! full-resolution Gaussian at the center pixel index of its stride-sized
//! block, so no resampling blur is introduced.

use crate::error::{Error, Result};
use ndarray::Array2;

/// Inclusive integer pixel bounds of a mask component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct BoundingBox {
    pub r_min: usize,
    pub r_max: usize,
    pub c_min: usize,
    pub c_max: usize,
}

impl BoundingBox {
    pub fn new(r_min: usize, r_max: usize, c_min: usize, c_max: usize) -> Result<Self> {
        if r_min > r_max || c_min > c_max {
            return Err(Error::Shape(format!(
                "degenerate box: rows {r_min}..{r_max}, cols {c_min}..{c_max}"
            )));
        }
        Ok(BoundingBox { r_min, r_max, c_min, c_max })
    }

    /// Center of the box, possibly landing between pixels.
    pub fn center(&self) -> (f64, f64) {
        (
            (self.r_min as f64 + self.r_max as f64) / 2.0,
            (self.c_min as f64 + self.c_max as f64) / 2.0,
        )
    }

    pub fn height(&self) -> usize {
        self.r_max - self.r_min + 1
    }

    pub fn width(&self) -> usize {
        self.c_max - self.c_min + 1
    }

    pub fn area(&self) -> usize {
        self.height() * self.width()
    }
}

/// Parameters of one separable Gaussian: value at (r, c) is
/// exp(-(r - row_center)^2 / row_spread - (c - col_center)^2 / col_spread).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianParams {
    pub row_center: f64,
    pub col_center: f64,
    pub row_spread: f64,
    pub col_spread: f64,
}

/// Half-extents below this are widened so single-pixel boxes still produce
/// a usable bump instead of a spike narrower than one pixel.
const MIN_HALF_EXTENT: f64 = 0.5;

/// Derives the Gaussian whose value is 1 at the box center and exactly 0.5
/// where the center row/column crosses the box boundary. Solving
/// exp(-(r_min - rc)^2 / spread) = 0.5 gives spread = (r_min - rc)^2 / ln 2.
pub fn gaussian_params(bbox: &BoundingBox) -> GaussianParams {
    let (row_center, col_center) = bbox.center();
    let row_half = (row_center - bbox.r_min as f64).max(MIN_HALF_EXTENT);
    let col_half = (col_center - bbox.c_min as f64).max(MIN_HALF_EXTENT);
    GaussianParams {
        row_center,
        col_center,
        row_spread: row_half * row_half / std::f64::consts::LN_2,
        col_spread: col_half * col_half / std::f64::consts::LN_2,
    }
}

pub fn evaluate_gaussian(params: &GaussianParams, r: f64, c: f64) -> f64 {
    let dr = r - params.row_center;
    let dc = c - params.col_center;
    (-dr * dr / params.row_spread - dc * dc / params.col_spread).exp()
}

impl GaussianParams {
    pub fn evaluate(&self, r: f64, c: f64) -> f64 {
        evaluate_gaussian(self, r, c)
    }
}

/// Tight boxes around the 4-connected components of non-zero mask pixels,
/// sorted by (r_min, c_min, r_max, c_max) so the ordering is canonical.
pub fn boxes_from_mask(mask: &Array2<u8>) -> Vec<BoundingBox> {
    let (rows, cols) = mask.dim();
    let mut seen = Array2::<bool>::default((rows, cols));
    let mut boxes = Vec::new();
    let mut stack = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if mask[(r, c)] == 0 || seen[(r, c)] {
                continue;
            }
            let mut bx = BoundingBox { r_min: r, r_max: r, c_min: c, c_max: c };
            seen[(r, c)] = true;
            stack.push((r, c));
            while let Some((pr, pc)) = stack.pop() {
                bx.r_min = bx.r_min.min(pr);
                bx.r_max = bx.r_max.max(pr);
                bx.c_min = bx.c_min.min(pc);
                bx.c_max = bx.c_max.max(pc);
                let mut visit = |nr: usize, nc: usize| {
                    if mask[(nr, nc)] != 0 && !seen[(nr, nc)] {
                        seen[(nr, nc)] = true;
                        stack.push((nr, nc));
                    }
                };
                if pr > 0 {
                    visit(pr - 1, pc);
                }
                if pr + 1 < rows {
                    visit(pr + 1, pc);
                }
                if pc > 0 {
                    visit(pr, pc - 1);
                }
                if pc + 1 < cols {
                    visit(pr, pc + 1);
                }
            }
            boxes.push(bx);
        }
    }
    boxes.sort();
    boxes
}

/// Full-resolution pixel index sampled by output cell `i`: the center of its
/// stride-sized block (15.5 for stride 32).
pub fn cell_sample_coord(i: usize, stride: usize) -> f64 {
    (i * stride) as f64 + (stride as f64 - 1.0) / 2.0
}

/// Heat-map target on the output grid: per-box Gaussians combined with a
/// per-cell max, zero everywhere when the mask is empty.
pub fn target_from_mask(mask: &Array2<u8>, stride: usize) -> Result<Array2<f64>> {
    let (rows, cols) = mask.dim();
    if stride == 0 || rows % stride != 0 || cols % stride != 0 {
        return Err(Error::Shape(format!(
            "mask {rows}x{cols} not divisible by stride {stride}"
        )));
    }
    let out = (rows / stride, cols / stride);
    let mut target = Array2::<f64>::zeros(out);
    for bbox in boxes_from_mask(mask) {
        let params = gaussian_params(&bbox);
        for i in 0..out.0 {
            let r = cell_sample_coord(i, stride);
            for j in 0..out.1 {
                let c = cell_sample_coord(j, stride);
                let v = params.evaluate(r, c);
                if v > target[(i, j)] {
                    target[(i, j)] = v;
                }
            }
        }
    }
    Ok(target)
}

/// Target built from already-extracted boxes; `shape` is the full-resolution
/// mask shape the boxes live in.
pub fn target_from_boxes(
    boxes: &[BoundingBox],
    shape: (usize, usize),
    stride: usize,
) -> Result<Array2<f64>> {
    let (rows, cols) = shape;
    if stride == 0 || rows % stride != 0 || cols % stride != 0 {
        return Err(Error::Shape(format!(
            "shape {rows}x{cols} not divisible by stride {stride}"
        )));
    }
    let out = (rows / stride, cols / stride);
    let mut target = Array2::<f64>::zeros(out);
    for bbox in boxes {
        let params = gaussian_params(bbox);
        for i in 0..out.0 {
            let r = cell_sample_coord(i, stride);
            for j in 0..out.1 {
                let c = cell_sample_coord(j, stride);
                let v = params.evaluate(r, c);
                if v > target[(i, j)] {
                    target[(i, j)] = v;
                }
            }
        }
    }
    Ok(target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn params_for_known_box() {
        let bx = BoundingBox::new(8, 16, 20, 28).unwrap();
        let p = gaussian_params(&bx);
        assert_eq!(p.row_center, 12.0);
        assert_eq!(p.col_center, 24.0);
        // (8 - 12)^2 / ln 2
        assert_relative_eq!(p.row_spread, 23.083120654223414, max_relative = 1e-15);
        assert_relative_eq!(p.col_spread, 23.083120654223414, max_relative = 1e-15);
    }

    #[test]
    fn center_value_is_one() {
        let bx = BoundingBox::new(3, 11, 40, 44).unwrap();
        let p = gaussian_params(&bx);
        assert_eq!(p.evaluate(p.row_center, p.col_center), 1.0);
    }

    #[test]
    fn boundary_midpoints_are_half() {
        let bx = BoundingBox::new(8, 16, 20, 28).unwrap();
        let p = gaussian_params(&bx);
        for (r, c) in [(8.0, 24.0), (16.0, 24.0), (12.0, 20.0), (12.0, 28.0)] {
            assert!((p.evaluate(r, c) - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn corners_are_quarter() {
        let bx = BoundingBox::new(8, 16, 20, 28).unwrap();
        let p = gaussian_params(&bx);
        for (r, c) in [(8.0, 20.0), (8.0, 28.0), (16.0, 20.0), (16.0, 28.0)] {
            assert!((p.evaluate(r, c) - 0.25).abs() < 1e-9);
        }
    }

    #[test]
    fn single_pixel_box_clamps_to_half_pixel() {
        let bx = BoundingBox::new(5, 5, 7, 7).unwrap();
        let p = gaussian_params(&bx);
        assert_relative_eq!(p.row_spread, 0.25 / std::f64::consts::LN_2, max_relative = 1e-15);
        // The clamped Gaussian still drops to 0.5 half a pixel out.
        assert!((p.evaluate(4.5, 7.0) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn degenerate_box_rejected() {
        assert!(BoundingBox::new(5, 4, 0, 0).is_err());
        assert!(BoundingBox::new(0, 0, 9, 2).is_err());
    }

    #[test]
    fn boxes_empty_mask() {
        let mask = Array2::<u8>::zeros((16, 16));
        assert!(boxes_from_mask(&mask).is_empty());
    }

    #[test]
    fn boxes_single_pixel() {
        let mut mask = Array2::<u8>::zeros((8, 8));
        mask[(3, 5)] = 255;
        assert_eq!(boxes_from_mask(&mask), vec![BoundingBox { r_min: 3, r_max: 3, c_min: 5, c_max: 5 }]);
    }

    #[test]
    fn boxes_rectangle_and_l_shape() {
        let mut mask = Array2::<u8>::zeros((12, 12));
        for r in 2..5 {
            for c in 3..8 {
                mask[(r, c)] = 1;
            }
        }
        // L-shape in the lower right corner.
        for r in 8..11 {
            mask[(r, 9)] = 1;
        }
        mask[(10, 10)] = 1;
        mask[(10, 11)] = 1;
        let boxes = boxes_from_mask(&mask);
        assert_eq!(
            boxes,
            vec![
                BoundingBox { r_min: 2, r_max: 4, c_min: 3, c_max: 7 },
                BoundingBox { r_min: 8, r_max: 10, c_min: 9, c_max: 11 },
            ]
        );
    }

    #[test]
    fn diagonal_pixels_are_separate_components() {
        let mut mask = Array2::<u8>::zeros((6, 6));
        mask[(2, 2)] = 1;
        mask[(3, 3)] = 1;
        assert_eq!(boxes_from_mask(&mask).len(), 2);
    }

    #[test]
    fn target_empty_mask_is_zero() {
        let mask = Array2::<u8>::zeros((64, 64));
        let t = target_from_mask(&mask, 32).unwrap();
        assert_eq!(t.dim(), (2, 2));
        assert!(t.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn target_shape_must_divide() {
        let mask = Array2::<u8>::zeros((65, 64));
        assert!(target_from_mask(&mask, 32).is_err());
    }

    #[test]
    fn centered_box_peaks_at_one() {
        // Box center at (47.5, 79.5) = sample coordinate of cell (1, 2).
        let mut mask = Array2::<u8>::zeros((128, 128));
        for r in 40..56 {
            for c in 70..90 {
                mask[(r, c)] = 255;
            }
        }
        let t = target_from_mask(&mask, 32).unwrap();
        assert_eq!(t[(1, 2)], 1.0);
        let peak = t
            .indexed_iter()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(idx, _)| idx)
            .unwrap();
        assert_eq!(peak, (1, 2));
    }

    #[test]
    fn two_boxes_combine_with_max() {
        let mut mask = Array2::<u8>::zeros((128, 128));
        for r in 8..24 {
            for c in 8..24 {
                mask[(r, c)] = 1;
            }
        }
        for r in 100..120 {
            for c in 96..124 {
                mask[(r, c)] = 1;
            }
        }
        let combined = target_from_mask(&mask, 32).unwrap();

        let mut only_a = Array2::<u8>::zeros((128, 128));
        for r in 8..24 {
            for c in 8..24 {
                only_a[(r, c)] = 1;
            }
        }
        let mut only_b = Array2::<u8>::zeros((128, 128));
        for r in 100..120 {
            for c in 96..124 {
                only_b[(r, c)] = 1;
            }
        }
        let ta = target_from_mask(&only_a, 32).unwrap();
        let tb = target_from_mask(&only_b, 32).unwrap();
        for ((i, j), &v) in combined.indexed_iter() {
            assert_eq!(v, ta[(i, j)].max(tb[(i, j)]));
        }
    }

    #[test]
    fn target_commutes_with_horizontal_flip() {
        let mut mask = Array2::<u8>::zeros((96, 160));
        for r in 10..40 {
            for c in 17..58 {
                mask[(r, c)] = 1;
            }
        }
        for r in 60..80 {
            for c in 100..140 {
                mask[(r, c)] = 1;
            }
        }
        let flipped_mask = Array2::from_shape_fn(mask.dim(), |(r, c)| mask[(r, mask.dim().1 - 1 - c)]);
        let t_flip = target_from_mask(&flipped_mask, 32).unwrap();
        let t = target_from_mask(&mask, 32).unwrap();
        let w = t.dim().1;
        for ((i, j), &v) in t_flip.indexed_iter() {
            assert_eq!(v, t[(i, w - 1 - j)]);
        }
    }

    /// Independent oracle: two-pass union-find labeling.
    fn oracle_boxes(mask: &Array2<u8>) -> Vec<BoundingBox> {
        let (rows, cols) = mask.dim();
        let n = rows * cols;
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let union = |parent: &mut Vec<usize>, a: usize, b: usize| {
            let ra = find(parent, a);
            let rb = find(parent, b);
            if ra != rb {
                parent[ra] = rb;
            }
        };
        for r in 0..rows {
            for c in 0..cols {
                if mask[(r, c)] == 0 {
                    continue;
                }
                if r > 0 && mask[(r - 1, c)] != 0 {
                    union(&mut parent, r * cols + c, (r - 1) * cols + c);
                }
                if c > 0 && mask[(r, c - 1)] != 0 {
                    union(&mut parent, r * cols + c, r * cols + c - 1);
                }
            }
        }
        let mut by_root: std::collections::HashMap<usize, BoundingBox> = Default::default();
        for r in 0..rows {
            for c in 0..cols {
                if mask[(r, c)] == 0 {
                    continue;
                }
                let root = find(&mut parent, r * cols + c);
                let e = by_root.entry(root).or_insert(BoundingBox {
                    r_min: r,
                    r_max: r,
                    c_min: c,
                    c_max: c,
                });
                e.r_min = e.r_min.min(r);
                e.r_max = e.r_max.max(r);
                e.c_min = e.c_min.min(c);
                e.c_max = e.c_max.max(c);
            }
        }
        let mut boxes: Vec<_> = by_root.into_values().collect();
        boxes.sort();
        boxes
    }

    proptest! {
        #[test]
        fn boxes_match_union_find_oracle(bits in proptest::collection::vec(0u8..2, 12 * 18)) {
            let mask = Array2::from_shape_vec((12, 18), bits).unwrap();
            prop_assert_eq!(boxes_from_mask(&mask), oracle_boxes(&mask));
        }

        #[test]
        fn gaussian_symmetry_and_separability(
            r0 in 0usize..200, h in 1usize..80,
            c0 in 0usize..200, w in 1usize..80,
            dr in -60.0..60.0f64, dc in -60.0..60.0f64,
        ) {
            let bx = BoundingBox::new(r0, r0 + h, c0, c0 + w).unwrap();
            let p = gaussian_params(&bx);
            let sym_r = p.evaluate(p.row_center + dr, p.col_center + dc);
            let sym_r2 = p.evaluate(p.row_center - dr, p.col_center + dc);
            prop_assert!((sym_r - sym_r2).abs() <= 1e-12 * sym_r.max(1e-300));
            let sym_c2 = p.evaluate(p.row_center + dr, p.col_center - dc);
            prop_assert!((sym_r - sym_c2).abs() <= 1e-12 * sym_r.max(1e-300));
            // Separable: joint value factors into row and column profiles.
            let factored = p.evaluate(p.row_center + dr, p.col_center)
                * p.evaluate(p.row_center, p.col_center + dc);
            prop_assert!((sym_r - factored).abs() <= 1e-12 * sym_r.max(1e-300));
        }

        #[test]
        fn random_box_boundary_values(r0 in 0usize..500, h in 1usize..120, c0 in 0usize..500, w in 1usize..120) {
            let bx = BoundingBox::new(r0, r0 + h, c0, c0 + w).unwrap();
            let p = gaussian_params(&bx);
            let (rc, cc) = bx.center();
            prop_assert!((p.evaluate(bx.r_min as f64, cc) - 0.5).abs() < 1e-9);
            prop_assert!((p.evaluate(bx.r_max as f64, cc) - 0.5).abs() < 1e-9);
            prop_assert!((p.evaluate(rc, bx.c_min as f64) - 0.5).abs() < 1e-9);
            prop_assert!((p.evaluate(rc, bx.c_max as f64) - 0.5).abs() < 1e-9);
            prop_assert!((p.evaluate(bx.r_min as f64, bx.c_max as f64) - 0.25).abs() < 1e-9);
        }
    }
}
