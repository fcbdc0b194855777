//! Paired image/mask augmentation and input normalization.
//!
//! Training samples go through nine ordered steps: (1) random square crop,
//! (2) rotation, (3) per-axis shrink, (4) random perspective distortion,
//! (5) horizontal flip, (6) a second random crop to the network input size,
//! then photometric normalization: (7) divide by 125.5, (8) subtract the
//! global mean, (9) scale by a random intensity factor. Steps 1-6 are
//! geometric and apply identically to the image and its box mask; the six
//! transforms compose into a single homography so the image is resampled
//! exactly once (bilinear, reflected borders) and the mask once
//! (nearest neighbor, zero outside). Boxes are re-fit from the warped mask
//! and the Gaussian target is synthesized from those, so supervision always
//! matches what the network actually sees.

use crate::error::{Error, Result};
use crate::targets::{boxes_from_mask, target_from_boxes, BoundingBox};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const DIVISOR: f64 = 125.5;

/// 3x3 homography acting on homogeneous (x, y, 1) column vectors,
/// x = column, y = row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    /// self * other: applies `other` first.
    pub fn compose(&self, other: &Mat3) -> Mat3 {
        let a = &self.0;
        let b = &other.0;
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
            }
        }
        Mat3(m)
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.0;
        let w = m[2][0] * x + m[2][1] * y + m[2][2];
        (
            (m[0][0] * x + m[0][1] * y + m[0][2]) / w,
            (m[1][0] * x + m[1][1] * y + m[1][2]) / w,
        )
    }

    pub fn inverse(&self) -> Option<Mat3> {
        let m = &self.0;
        let cof = |r1: usize, c1: usize, r2: usize, c2: usize| m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1];
        let det = m[0][0] * cof(1, 1, 2, 2) - m[0][1] * cof(1, 0, 2, 2) + m[0][2] * cof(1, 0, 2, 1);
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let adj = [
            [cof(1, 1, 2, 2), -(m[0][1] * m[2][2] - m[0][2] * m[2][1]), cof(0, 1, 1, 2)],
            [-cof(1, 0, 2, 2), m[0][0] * m[2][2] - m[0][2] * m[2][0], -cof(0, 0, 1, 2)],
            [cof(1, 0, 2, 1), -(m[0][0] * m[2][1] - m[0][1] * m[2][0]), cof(0, 0, 1, 1)],
        ];
        let mut inv = [[0.0; 3]; 3];
        for (i, row) in inv.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = adj[i][j] / det;
            }
        }
        Some(Mat3(inv))
    }

    pub fn translation(tx: f64, ty: f64) -> Mat3 {
        Mat3([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]])
    }

    pub fn rotation_about(cx: f64, cy: f64, radians: f64) -> Mat3 {
        let (s, c) = radians.sin_cos();
        Mat3([
            [c, -s, cx - c * cx + s * cy],
            [s, c, cy - s * cx - c * cy],
            [0.0, 0.0, 1.0],
        ])
    }

    pub fn scale_about(cx: f64, cy: f64, sx: f64, sy: f64) -> Mat3 {
        Mat3([
            [sx, 0.0, cx * (1.0 - sx)],
            [0.0, sy, cy * (1.0 - sy)],
            [0.0, 0.0, 1.0],
        ])
    }

    /// Mirror x across the vertical line x = axis.
    pub fn flip_x_about(axis: f64) -> Mat3 {
        Mat3([[-1.0, 0.0, 2.0 * axis], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    }
}

/// Homography sending each `src` corner to the matching `dst` corner,
/// solved from the standard 8x8 linear system by Gaussian elimination.
pub fn homography_from_corners(src: &[(f64, f64); 4], dst: &[(f64, f64); 4]) -> Option<Mat3> {
    let mut a = [[0.0f64; 9]; 8];
    for k in 0..4 {
        let (x, y) = src[k];
        let (u, v) = dst[k];
        a[2 * k] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
        a[2 * k + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
    }
    // Solve A h = rhs where the rhs sits in column 8.
    for col in 0..8 {
        let pivot = (col..8).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        let d = a[col][col];
        for v in a[col].iter_mut() {
            *v /= d;
        }
        for row in 0..8 {
            if row != col && a[row][col] != 0.0 {
                let f = a[row][col];
                let pivot_row = a[col];
                for (dst, src) in a[row].iter_mut().zip(pivot_row) {
                    *dst -= f * src;
                }
            }
        }
    }
    let h: Vec<f64> = (0..8).map(|i| a[i][8]).collect();
    Some(Mat3([[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]]))
}

/// Reflect an integer tap into [0, n) without repeating the edge sample.
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    debug_assert!(n > 0);
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

/// Warp an (H, W, C) image through `inv`, which maps output (x, y) to source
/// coordinates. Bilinear sampling with reflected borders.
pub fn warp_image(img: &Array3<f32>, inv: &Mat3, out_h: usize, out_w: usize) -> Array3<f32> {
    let (h, w, ch) = img.dim();
    let mut out = Array3::<f32>::zeros((out_h, out_w, ch));
    for oy in 0..out_h {
        for ox in 0..out_w {
            let (sx, sy) = inv.apply(ox as f64, oy as f64);
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            let xi = [reflect_index(x0 as isize, w), reflect_index(x0 as isize + 1, w)];
            let yi = [reflect_index(y0 as isize, h), reflect_index(y0 as isize + 1, h)];
            let wx = [1.0 - fx, fx];
            let wy = [1.0 - fy, fy];
            for c in 0..ch {
                let mut acc = 0.0f64;
                for (dy, &yy) in yi.iter().enumerate() {
                    for (dx, &xx) in xi.iter().enumerate() {
                        acc += wy[dy] * wx[dx] * img[(yy, xx, c)] as f64;
                    }
                }
                out[(oy, ox, c)] = acc as f32;
            }
        }
    }
    out
}

/// Warp a mask through `inv` with nearest-neighbor sampling; coordinates
/// falling outside the source are background (0), never reflected, so the
/// warp cannot invent box pixels.
pub fn warp_mask(mask: &Array2<u8>, inv: &Mat3, out_h: usize, out_w: usize) -> Array2<u8> {
    let (h, w) = mask.dim();
    let mut out = Array2::<u8>::zeros((out_h, out_w));
    for oy in 0..out_h {
        for ox in 0..out_w {
            let (sx, sy) = inv.apply(ox as f64, oy as f64);
            let xi = sx.round() as isize;
            let yi = sy.round() as isize;
            if xi >= 0 && (xi as usize) < w && yi >= 0 && (yi as usize) < h {
                out[(oy, ox)] = mask[(yi as usize, xi as usize)];
            }
        }
    }
    out
}

/// BT.601 luma (0.299 R + 0.587 G + 0.114 B) replicated into all three
/// channels, matching the network's gray-tripled input contract.
pub fn gray_triple(img: &Array3<f32>) -> Result<Array3<f32>> {
    let (h, w, ch) = img.dim();
    if ch != 3 {
        return Err(Error::Shape(format!("gray_triple expects 3 channels, got {ch}")));
    }
    let mut out = Array3::<f32>::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let l = 0.299 * img[(y, x, 0)] + 0.587 * img[(y, x, 1)] + 0.114 * img[(y, x, 2)];
            out[(y, x, 0)] = l;
            out[(y, x, 1)] = l;
            out[(y, x, 2)] = l;
        }
    }
    Ok(out)
}

/// X = (I / 125.5 - mean(I / 125.5)) * s, the mean taken over every pixel
/// and channel. Computed as (v*n - sum) * (s / (125.5*n)): for
/// integer-valued inputs v*n - sum is exact integer arithmetic in f64, so
/// an additive offset on the input cancels bitwise.
pub fn normalize(values: &Array3<f32>, intensity: f64) -> Result<Array3<f32>> {
    Ok(normalize_with_mean(values, intensity)?.0)
}

/// `normalize` plus the mean of I / 125.5 actually subtracted, for trace logs.
pub fn normalize_with_mean(values: &Array3<f32>, intensity: f64) -> Result<(Array3<f32>, f64)> {
    if values.is_empty() {
        return Err(Error::Shape("cannot normalize an empty grid".into()));
    }
    if !(intensity.is_finite() && intensity > 0.0) {
        return Err(Error::Config(format!("intensity scale must be positive, got {intensity}")));
    }
    let n = values.len() as f64;
    let sum: f64 = values.iter().map(|&v| v as f64).sum();
    let scale = intensity / (DIVISOR * n);
    let out = values.mapv(|v| ((v as f64 * n - sum) * scale) as f32);
    Ok((out, sum / n / DIVISOR))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Off = deterministic test-time path: center crop to `crop2`, s = 1.
    pub enabled: bool,
    /// Side of the first random square crop.
    pub crop1: usize,
    /// Side of the final crop fed to the network; multiple of `stride`.
    pub crop2: usize,
    /// Output-grid stride of the model the samples are prepared for.
    pub stride: usize,
    pub rotation_degrees: (f64, f64),
    pub shrink_range: (f64, f64),
    /// Corner jitter for the perspective distortion, as a fraction of crop1.
    pub perspective_jitter: f64,
    pub flip_prob: f64,
    pub intensity_range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            enabled: true,
            crop1: 720,
            crop2: 704,
            stride: 32,
            rotation_degrees: (-360.0, 360.0),
            shrink_range: (0.9, 1.0),
            perspective_jitter: 0.05,
            flip_prob: 0.5,
            intensity_range: (0.75, 1.25),
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.stride == 0 || self.crop2 == 0 || !self.crop2.is_multiple_of(self.stride) {
            return fail(format!(
                "crop2 ({}) must be a positive multiple of stride ({})",
                self.crop2, self.stride
            ));
        }
        if self.crop1 < self.crop2 {
            return fail(format!("crop1 ({}) must be >= crop2 ({})", self.crop1, self.crop2));
        }
        let (rlo, rhi) = self.rotation_degrees;
        if !(rlo <= rhi && (-360.0..=360.0).contains(&rlo) && (-360.0..=360.0).contains(&rhi)) {
            return fail(format!("rotation range ({rlo}, {rhi}) must be ordered within [-360, 360]"));
        }
        let (slo, shi) = self.shrink_range;
        if !(slo <= shi && slo >= 0.5 && shi <= 1.0) {
            return fail(format!("shrink range ({slo}, {shi}) must be ordered within [0.5, 1]"));
        }
        if !(0.0..=0.1).contains(&self.perspective_jitter) {
            return fail(format!("perspective jitter {} must lie in [0, 0.1]", self.perspective_jitter));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return fail(format!("flip probability {} must lie in [0, 1]", self.flip_prob));
        }
        let (ilo, ihi) = self.intensity_range;
        if !(ilo <= ihi && ilo >= 0.25 && ihi <= 2.0) {
            return fail(format!("intensity range ({ilo}, {ihi}) must be ordered within [0.25, 2]"));
        }
        Ok(())
    }
}

/// One normalized network input with its heat-map target.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    /// (crop2, crop2, 3), gray-tripled and normalized.
    pub x: Array3<f32>,
    /// (crop2/stride, crop2/stride) Gaussian target.
    pub y: Array2<f64>,
    /// Boxes re-fit from the warped mask (full-resolution coordinates).
    pub boxes: Vec<BoundingBox>,
}

pub const STEP_NAMES: [&str; 9] = [
    "crop1",
    "rotate",
    "shrink",
    "perspective",
    "flip",
    "crop2",
    "divide",
    "mean_subtract",
    "intensity",
];

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct TraceStep {
    pub name: &'static str,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct AugmentTrace {
    pub steps: Vec<TraceStep>,
    /// Composed geometric transform from record coordinates to the final
    /// crop2 frame (homogeneous, row-major).
    pub forward: [[f64; 3]; 3],
}

struct Draws {
    crop1_u: (f64, f64),
    theta_u: f64,
    shrink_u: (f64, f64),
    persp_u: [f64; 8],
    flip_u: f64,
    crop2_u: (f64, f64),
    intensity_u: f64,
}

/// A fixed number of unit draws in a fixed order, so the mapping from seed
/// to parameters never depends on which config knobs are active.
fn draw_all(rng: &mut ChaCha8Rng) -> Draws {
    Draws {
        crop1_u: (rng.gen(), rng.gen()),
        theta_u: rng.gen(),
        shrink_u: (rng.gen(), rng.gen()),
        persp_u: std::array::from_fn(|_| rng.gen()),
        flip_u: rng.gen(),
        crop2_u: (rng.gen(), rng.gen()),
        intensity_u: rng.gen(),
    }
}

fn unit_to_offset(u: f64, max: usize) -> usize {
    (((max + 1) as f64 * u) as usize).min(max)
}

fn lerp(range: (f64, f64), u: f64) -> f64 {
    range.0 + (range.1 - range.0) * u
}

pub fn augment_pair(
    image: &Array3<f32>,
    mask: Option<&Array2<u8>>,
    seed: u64,
    cfg: &AugmentConfig,
) -> Result<TrainingSample> {
    augment_pair_traced(image, mask, seed, cfg).map(|(sample, _)| sample)
}

pub fn augment_pair_traced(
    image: &Array3<f32>,
    mask: Option<&Array2<u8>>,
    seed: u64,
    cfg: &AugmentConfig,
) -> Result<(TrainingSample, AugmentTrace)> {
    cfg.validate()?;
    let (h, w, ch) = image.dim();
    if ch != 3 {
        return Err(Error::Shape(format!("expected a 3-channel image, got {ch} channels")));
    }
    if h < cfg.crop1 || w < cfg.crop1 {
        return Err(Error::Shape(format!(
            "image {h}x{w} smaller than crop1 {0}x{0}",
            cfg.crop1
        )));
    }
    if let Some(m) = mask {
        if m.dim() != (h, w) {
            return Err(Error::Shape(format!(
                "mask {:?} does not match image {h}x{w}",
                m.dim()
            )));
        }
    }

    let c1 = cfg.crop1 as f64;
    let center = (c1 - 1.0) / 2.0;

    // Parameters for the nine steps. With augmentation disabled everything
    // degenerates to a centered crop with s = 1.
    let (ox1, oy1, theta_deg, shrink, persp, flip, ox2, oy2, intensity);
    if cfg.enabled {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = draw_all(&mut rng);
        ox1 = unit_to_offset(d.crop1_u.0, w - cfg.crop1);
        oy1 = unit_to_offset(d.crop1_u.1, h - cfg.crop1);
        theta_deg = lerp(cfg.rotation_degrees, d.theta_u);
        shrink = (lerp(cfg.shrink_range, d.shrink_u.0), lerp(cfg.shrink_range, d.shrink_u.1));
        let amp = cfg.perspective_jitter * c1;
        persp = std::array::from_fn::<f64, 8, _>(|i| (d.persp_u[i] * 2.0 - 1.0) * amp);
        flip = d.flip_u < cfg.flip_prob;
        ox2 = unit_to_offset(d.crop2_u.0, cfg.crop1 - cfg.crop2);
        oy2 = unit_to_offset(d.crop2_u.1, cfg.crop1 - cfg.crop2);
        intensity = lerp(cfg.intensity_range, d.intensity_u);
    } else {
        ox1 = (w - cfg.crop1) / 2;
        oy1 = (h - cfg.crop1) / 2;
        theta_deg = 0.0;
        shrink = (1.0, 1.0);
        persp = [0.0; 8];
        flip = false;
        ox2 = (cfg.crop1 - cfg.crop2) / 2;
        oy2 = (cfg.crop1 - cfg.crop2) / 2;
        intensity = 1.0;
    }

    // Steps 1-6 composed into one forward homography (step 1 applied first).
    let t1 = Mat3::translation(-(ox1 as f64), -(oy1 as f64));
    let rot = Mat3::rotation_about(center, center, theta_deg.to_radians());
    let shr = Mat3::scale_about(center, center, shrink.0, shrink.1);
    let corners = [(0.0, 0.0), (c1 - 1.0, 0.0), (c1 - 1.0, c1 - 1.0), (0.0, c1 - 1.0)];
    let jittered = std::array::from_fn::<(f64, f64), 4, _>(|i| {
        (corners[i].0 + persp[2 * i], corners[i].1 + persp[2 * i + 1])
    });
    let per = homography_from_corners(&corners, &jittered)
        .ok_or_else(|| Error::Shape("degenerate perspective jitter".into()))?;
    let t2 = Mat3::translation(-(ox2 as f64), -(oy2 as f64));
    let mut forward = rot.compose(&t1);
    forward = shr.compose(&forward);
    forward = per.compose(&forward);
    if flip {
        forward = Mat3::flip_x_about(center).compose(&forward);
    }
    forward = t2.compose(&forward);
    let inverse = forward
        .inverse()
        .ok_or_else(|| Error::Shape("non-invertible augmentation transform".into()))?;

    let geo = warp_image(image, &inverse, cfg.crop2, cfg.crop2);
    let warped_mask = mask.map(|m| warp_mask(m, &inverse, cfg.crop2, cfg.crop2));
    let boxes = warped_mask.as_ref().map(boxes_from_mask).unwrap_or_default();
    let y = target_from_boxes(&boxes, (cfg.crop2, cfg.crop2), cfg.stride)?;

    let gray = gray_triple(&geo)?;
    let (x, mean) = normalize_with_mean(&gray, intensity)?;

    let trace = AugmentTrace {
        steps: vec![
            TraceStep { name: STEP_NAMES[0], params: vec![ox1 as f64, oy1 as f64, c1] },
            TraceStep { name: STEP_NAMES[1], params: vec![theta_deg] },
            TraceStep { name: STEP_NAMES[2], params: vec![shrink.0, shrink.1] },
            TraceStep { name: STEP_NAMES[3], params: persp.to_vec() },
            TraceStep { name: STEP_NAMES[4], params: vec![if flip { 1.0 } else { 0.0 }] },
            TraceStep {
                name: STEP_NAMES[5],
                params: vec![ox2 as f64, oy2 as f64, cfg.crop2 as f64],
            },
            TraceStep { name: STEP_NAMES[6], params: vec![DIVISOR] },
            TraceStep { name: STEP_NAMES[7], params: vec![mean] },
            TraceStep { name: STEP_NAMES[8], params: vec![intensity] },
        ],
        forward: forward.0,
    };

    Ok((TrainingSample { x, y, boxes }, trace))
}

/// Test-time preparation of a full image (no crop randomness, s = 1):
/// gray-triple then normalize.
pub fn prepare_inference_input(image: &Array3<f32>) -> Result<Array3<f32>> {
    normalize(&gray_triple(image)?, 1.0)
}
