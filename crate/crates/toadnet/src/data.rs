//! Dataset layout, frame sampling, and synthetic scene generation.
//!
//! Disk layout: `<root>/toad/<clip>_<frame>.png`,
//! `<root>/not_toad/<clip>_<frame>.png`, with box masks for toad records at
//! `<root>/masks/<clip>_<frame>.png`, plus a `manifest.json` cache written by
//! the generator. Clip frame sampling follows the sparse-labeling scheme:
//! every 41st frame starting at 1 for training, every 9th starting at 10 for
//! test, with any index claimed by both kept in training only.

use crate::error::{Error, Result};
use image::{GrayImage, RgbImage};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

pub const TRAIN_FRAME_START: u32 = 1;
pub const TRAIN_FRAME_STEP: u32 = 41;
pub const TEST_FRAME_START: u32 = 10;
pub const TEST_FRAME_STEP: u32 = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Toad,
    NotToad,
}

impl Label {
    pub fn dir_name(&self) -> &'static str {
        match self {
            Label::Toad => "toad",
            Label::NotToad => "not_toad",
        }
    }
}

/// 1-based frame indices used for training: 1, 42, 83, ...
pub fn extract_training_indices(n_frames: u32) -> Vec<u32> {
    (TRAIN_FRAME_START..=n_frames).step_by(TRAIN_FRAME_STEP as usize).collect()
}

/// 1-based frame indices used for test: 10, 19, 28, ... with any index also
/// claimed by the training progression removed, keeping the sets disjoint.
pub fn extract_test_indices(n_frames: u32) -> Vec<u32> {
    if n_frames < TEST_FRAME_START {
        return Vec::new();
    }
    let train: HashSet<u32> = extract_training_indices(n_frames).into_iter().collect();
    (TEST_FRAME_START..=n_frames)
        .step_by(TEST_FRAME_STEP as usize)
        .filter(|i| !train.contains(i))
        .collect()
}

/// FNV-1a over raw bytes; used for string-keyed seeds and checksums.
pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// SplitMix64-style diffusion chain for deriving independent seeds.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        let mut z = h.wrapping_add(p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

/// One labeled frame resolvable on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameRecord {
    pub clip_id: String,
    pub frame_index: u32,
    pub label: Label,
    pub image_path: PathBuf,
    pub mask_path: Option<PathBuf>,
}

impl FrameRecord {
    pub fn uid(&self) -> String {
        format!("{}_{}", self.clip_id, self.frame_index)
    }

    pub fn load_image(&self) -> Result<Array3<f32>> {
        load_image_f32(&self.image_path)
    }

    pub fn load_mask(&self) -> Result<Option<Array2<u8>>> {
        match &self.mask_path {
            Some(p) => Ok(Some(load_mask(p)?)),
            None => Ok(None),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub toad: usize,
    pub not_toad: usize,
}

#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub records: Vec<FrameRecord>,
}

impl DatasetManifest {
    pub fn counts(&self) -> ClassCounts {
        let toad = self.records.iter().filter(|r| r.label == Label::Toad).count();
        ClassCounts { toad, not_toad: self.records.len() - toad }
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Serialized manifest cache (`manifest.json`).
#[derive(Debug, Serialize, Deserialize)]
struct ManifestCache {
    seed: u64,
    height: usize,
    width: usize,
    counts: ClassCounts,
}

fn parse_record_name(path: &Path) -> Result<(String, u32)> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Dataset(format!("unparseable file name: {}", path.display())))?;
    let (clip, frame) = stem.rsplit_once('_').ok_or_else(|| {
        Error::Dataset(format!(
            "file name {} does not follow <clip>_<frame>.png",
            path.display()
        ))
    })?;
    let frame_index: u32 = frame.parse().map_err(|_| {
        Error::Dataset(format!("frame index in {} is not an integer", path.display()))
    })?;
    Ok((clip.to_string(), frame_index))
}

/// Scans the directory layout, validates it, and returns records sorted by
/// (clip_id, frame_index). A missing class directory counts as empty. When a
/// `manifest.json` cache is present its class counts must agree with disk.
pub fn load_manifest(root: &Path) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(Error::Dataset(format!("dataset root {} is not a directory", root.display())));
    }
    let mut records = Vec::new();
    let mut seen: HashMap<(String, u32), PathBuf> = HashMap::new();
    for label in [Label::Toad, Label::NotToad] {
        let dir = root.join(label.dir_name());
        if !dir.exists() {
            continue;
        }
        let mut entries: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "png"))
            .collect();
        entries.sort();
        for path in entries {
            let (clip_id, frame_index) = parse_record_name(&path)?;
            if let Some(dup) = seen.insert((clip_id.clone(), frame_index), path.clone()) {
                return Err(Error::Dataset(format!(
                    "duplicate record {clip_id}_{frame_index}: {} and {}",
                    dup.display(),
                    path.display()
                )));
            }
            let mask_file = root.join("masks").join(path.file_name().unwrap());
            let mask_path = match label {
                Label::Toad => {
                    if !mask_file.is_file() {
                        return Err(Error::Dataset(format!(
                            "toad record {} has no mask at {}",
                            path.display(),
                            mask_file.display()
                        )));
                    }
                    Some(mask_file)
                }
                Label::NotToad => {
                    if mask_file.is_file() {
                        return Err(Error::Dataset(format!(
                            "not_toad record {} unexpectedly has a mask at {}",
                            path.display(),
                            mask_file.display()
                        )));
                    }
                    None
                }
            };
            records.push(FrameRecord { clip_id, frame_index, label, image_path: path, mask_path });
        }
    }
    records.sort_by(|a, b| (&a.clip_id, a.frame_index).cmp(&(&b.clip_id, b.frame_index)));
    let manifest = DatasetManifest { root: root.to_path_buf(), records };

    let cache_path = root.join("manifest.json");
    if cache_path.is_file() {
        let text = std::fs::read_to_string(&cache_path).map_err(|e| Error::io(&cache_path, e))?;
        let cache: ManifestCache = serde_json::from_str(&text)
            .map_err(|e| Error::Dataset(format!("{}: {e}", cache_path.display())))?;
        if cache.counts != manifest.counts() {
            return Err(Error::Dataset(format!(
                "manifest.json counts {:?} disagree with files on disk {:?}",
                cache.counts,
                manifest.counts()
            )));
        }
    }
    Ok(manifest)
}

/// A generated scene: RGB pixels plus, for toad scenes, the box mask.
#[derive(Debug, Clone)]
pub struct SynthScene {
    pub image: Array3<u8>,
    pub mask: Option<Array2<u8>>,
}

struct Wart {
    u: f64,
    v: f64,
    radius: f64,
    delta: f64,
}

struct EllipseSpec {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    phi: f64,
    body_delta: f64,
    shade: f64,
    warts: Vec<Wart>,
}

impl EllipseSpec {
    /// Tight axis-aligned half-extents of the rotated ellipse.
    fn half_extents(&self) -> (f64, f64) {
        let (s, c) = self.phi.sin_cos();
        let ex = ((self.a * c).powi(2) + (self.b * s).powi(2)).sqrt();
        let ey = ((self.a * s).powi(2) + (self.b * c).powi(2)).sqrt();
        (ex, ey)
    }
}

const EDGE_FEATHER: f64 = 0.07;

fn render_ellipse(canvas: &mut Array2<f64>, e: &EllipseSpec) {
    let (h, w) = canvas.dim();
    let (ex, ey) = e.half_extents();
    let y0 = (e.cy - ey - 2.0).floor().max(0.0) as usize;
    let y1 = ((e.cy + ey + 2.0).ceil() as usize).min(h - 1);
    let x0 = (e.cx - ex - 2.0).floor().max(0.0) as usize;
    let x1 = ((e.cx + ex + 2.0).ceil() as usize).min(w - 1);
    let (sphi, cphi) = e.phi.sin_cos();
    for y in y0..=y1 {
        for x in x0..=x1 {
            let dx = x as f64 - e.cx;
            let dy = y as f64 - e.cy;
            let u = dx * cphi + dy * sphi;
            let v = -dx * sphi + dy * cphi;
            let rho2 = (u / e.a).powi(2) + (v / e.b).powi(2);
            if rho2 > 1.0 {
                continue;
            }
            let rho = rho2.sqrt();
            let alpha = ((1.0 - rho) / EDGE_FEATHER).clamp(0.0, 1.0);
            let mut value = e.body_delta + e.shade * (1.0 - rho2);
            for wart in &e.warts {
                let du = u - wart.u;
                let dv = v - wart.v;
                let d2 = du * du + dv * dv;
                let r2 = wart.radius * wart.radius;
                if d2 < r2 {
                    value += wart.delta * (1.0 - d2 / r2);
                }
            }
            canvas[(y, x)] += alpha * value;
        }
    }
}

fn mask_ellipse_bbox(mask: &mut Array2<u8>, e: &EllipseSpec) {
    let (h, w) = mask.dim();
    let (ex, ey) = e.half_extents();
    let y0 = (e.cy - ey).round().max(0.0) as usize;
    let y1 = ((e.cy + ey).round() as usize).min(h - 1);
    let x0 = (e.cx - ex).round().max(0.0) as usize;
    let x1 = ((e.cx + ex).round() as usize).min(w - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            mask[(y, x)] = 255;
        }
    }
}

fn place_centers(
    rng: &mut ChaCha8Rng,
    count: usize,
    row_band: (f64, f64),
    col_band: (f64, f64),
    min_sep: f64,
    shape: (usize, usize),
) -> Vec<(f64, f64)> {
    let (h, w) = shape;
    let mut centers: Vec<(f64, f64)> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut placed = (0.0, 0.0);
        for _attempt in 0..50 {
            let cy = rng.gen_range(row_band.0..row_band.1) * h as f64;
            let cx = rng.gen_range(col_band.0..col_band.1) * w as f64;
            placed = (cy, cx);
            let clear = centers
                .iter()
                .all(|&(py, px)| ((py - cy).powi(2) + (px - cx).powi(2)).sqrt() >= min_sep);
            if clear {
                break;
            }
        }
        centers.push(placed);
    }
    centers
}

/// Deterministic synthetic scene. Toad scenes contain 1-3 warty-textured
/// ellipses of moderate aspect ratio; not_toad scenes contain 0-3 smooth
/// distractors that are either much rounder or much more elongated. Texture
/// and aspect are the learnable cues; brightness and background are matched
/// across classes so they carry no label signal.
pub fn synth_scene(seed: u64, label: Label, shape: (usize, usize)) -> Result<SynthScene> {
    let (h, w) = shape;
    if h < 64 || w < 64 {
        return Err(Error::Shape(format!("scene shape {h}x{w} below the 64x64 minimum")));
    }
    let class_tag = match label {
        Label::Toad => 1,
        Label::NotToad => 2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, class_tag, h as u64, w as u64]));

    // Background: base level, a soft linear gradient, a few dim blotches.
    let base = rng.gen_range(80.0..150.0);
    let grad_amp = rng.gen_range(0.0..18.0);
    let grad_dir = rng.gen_range(0.0..std::f64::consts::TAU);
    let (gx, gy) = (grad_dir.cos(), grad_dir.sin());
    let mut canvas = Array2::from_shape_fn((h, w), |(y, x)| {
        base + 2.0
            * grad_amp
            * ((x as f64 / w as f64 - 0.5) * gx + (y as f64 / h as f64 - 0.5) * gy)
    });
    for _ in 0..rng.gen_range(0..4usize) {
        let blob = EllipseSpec {
            cy: rng.gen_range(0.0..h as f64),
            cx: rng.gen_range(0.0..w as f64),
            a: rng.gen_range(25.0..70.0),
            b: rng.gen_range(25.0..70.0),
            phi: rng.gen_range(0.0..std::f64::consts::PI),
            body_delta: rng.gen_range(-10.0..10.0),
            shade: rng.gen_range(-6.0..6.0),
            warts: Vec::new(),
        };
        render_ellipse(&mut canvas, &blob);
    }

    let scale = (h.min(w)) as f64;
    let mut mask = Array2::<u8>::zeros((h, w));
    let specs: Vec<EllipseSpec> = match label {
        Label::Toad => {
            let count = *[1, 1, 1, 2, 2, 3].get(rng.gen_range(0..6usize)).unwrap();
            let centers =
                place_centers(&mut rng, count, (0.35, 0.65), (0.42, 0.58), scale * 0.38, shape);
            centers
                .into_iter()
                .map(|(cy, cx)| {
                    let a = rng.gen_range(0.17..0.26) * scale;
                    let aspect = rng.gen_range(1.35..1.85);
                    let body_delta: f64 =
                        rng.gen_range(25.0..60.0) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
                    let wart_count = rng.gen_range(60..100usize);
                    let warts = (0..wart_count)
                        .map(|_| {
                            // Rejection-free placement inside the unit disk,
                            // mapped into ellipse coordinates.
                            let ang = rng.gen_range(0.0..std::f64::consts::TAU);
                            let rad = rng.gen::<f64>().sqrt() * 0.85;
                            let delta_mag = rng.gen_range(45.0..85.0);
                            let sign = if rng.gen::<f64>() < 0.5 { -1.0 } else { 1.0 };
                            Wart {
                                u: ang.cos() * rad * a,
                                v: ang.sin() * rad * (a / aspect),
                                radius: rng.gen_range(2.5..5.5),
                                delta: sign * delta_mag,
                            }
                        })
                        .collect();
                    EllipseSpec {
                        cx,
                        cy,
                        a,
                        b: a / aspect,
                        phi: rng.gen_range(0.0..std::f64::consts::PI),
                        body_delta,
                        shade: rng.gen_range(-12.0..12.0),
                        warts,
                    }
                })
                .collect()
        }
        Label::NotToad => {
            let count = *[0, 1, 1, 2, 2, 3].get(rng.gen_range(0..6usize)).unwrap();
            let centers =
                place_centers(&mut rng, count, (0.2, 0.8), (0.15, 0.85), scale * 0.38, shape);
            centers
                .into_iter()
                .map(|(cy, cx)| {
                    let a = rng.gen_range(0.14..0.24) * scale;
                    // Distractors sit clearly outside the toad aspect band:
                    // either near-circular or strongly elongated.
                    let aspect = if rng.gen::<bool>() {
                        rng.gen_range(1.0..1.12)
                    } else {
                        rng.gen_range(2.6..4.0)
                    };
                    let body_delta =
                        rng.gen_range(25.0..60.0) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
                    EllipseSpec {
                        cx,
                        cy,
                        a,
                        b: a / aspect,
                        phi: rng.gen_range(0.0..std::f64::consts::PI),
                        body_delta,
                        shade: rng.gen_range(-25.0..25.0),
                        warts: Vec::new(),
                    }
                })
                .collect()
        }
    };
    for e in &specs {
        render_ellipse(&mut canvas, e);
        if label == Label::Toad {
            mask_ellipse_bbox(&mut mask, e);
        }
    }

    // Per-pixel sensor noise and a faint per-channel tint.
    let tint: [f64; 3] = [rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0)];
    let mut image = Array3::<u8>::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let noisy = canvas[(y, x)] + rng.gen_range(-7.0..7.0);
            for c in 0..3 {
                image[(y, x, c)] = (noisy + tint[c]).round().clamp(0.0, 255.0) as u8;
            }
        }
    }

    let mask = (label == Label::Toad).then_some(mask);
    Ok(SynthScene { image, mask })
}

pub fn to_f32(image: &Array3<u8>) -> Array3<f32> {
    image.mapv(|v| v as f32)
}

pub fn save_image(path: &Path, image: &Array3<u8>) -> Result<()> {
    let (h, w, ch) = image.dim();
    if ch != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {ch}")));
    }
    let raw: Vec<u8> = image.iter().copied().collect();
    let img = RgbImage::from_raw(w as u32, h as u32, raw)
        .ok_or_else(|| Error::Shape("image buffer size mismatch".into()))?;
    img.save(path).map_err(|e| Error::image(path, e))
}

pub fn save_mask(path: &Path, mask: &Array2<u8>) -> Result<()> {
    let (h, w) = mask.dim();
    let raw: Vec<u8> = mask.iter().copied().collect();
    let img = GrayImage::from_raw(w as u32, h as u32, raw)
        .ok_or_else(|| Error::Shape("mask buffer size mismatch".into()))?;
    img.save(path).map_err(|e| Error::image(path, e))
}

/// Write a single-channel 0..255 image, e.g. a heat-map overlay.
pub fn save_gray(path: &Path, gray: &Array2<u8>) -> Result<()> {
    let (h, w) = gray.dim();
    let raw: Vec<u8> = gray.iter().copied().collect();
    let img = GrayImage::from_raw(w as u32, h as u32, raw)
        .ok_or_else(|| Error::Shape("gray buffer size mismatch".into()))?;
    img.save(path).map_err(|e| Error::image(path, e))
}

pub fn load_image_f32(path: &Path) -> Result<Array3<f32>> {
    let img = image::open(path).map_err(|e| Error::image(path, e))?.to_rgb8();
    let (w, h) = img.dimensions();
    let raw = img.into_raw();
    let arr = Array3::from_shape_vec((h as usize, w as usize, 3), raw)
        .map_err(|e| Error::Shape(e.to_string()))?;
    Ok(arr.mapv(|v| v as f32))
}

pub fn load_mask(path: &Path) -> Result<Array2<u8>> {
    let img = image::open(path).map_err(|e| Error::image(path, e))?.to_luma8();
    let (w, h) = img.dimensions();
    Array2::from_shape_vec((h as usize, w as usize), img.into_raw())
        .map_err(|e| Error::Shape(e.to_string()))
}

/// Generates `counts` synthetic records under `root` and writes the
/// manifest cache. Existing files are overwritten.
pub fn write_dataset(
    root: &Path,
    counts: ClassCounts,
    seed: u64,
    shape: (usize, usize),
) -> Result<DatasetManifest> {
    for sub in ["toad", "not_toad", "masks"] {
        let dir = root.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for (label, n, prefix) in [
        (Label::Toad, counts.toad, "toad"),
        (Label::NotToad, counts.not_toad, "nottoad"),
    ] {
        for i in 0..n {
            let scene = synth_scene(mix_seed(&[seed, i as u64]), label, shape)?;
            let name = format!("{prefix}{i:04}_1.png");
            save_image(&root.join(label.dir_name()).join(&name), &scene.image)?;
            if let Some(mask) = &scene.mask {
                save_mask(&root.join("masks").join(&name), mask)?;
            }
        }
    }
    let cache = ManifestCache { seed, height: shape.0, width: shape.1, counts };
    let cache_path = root.join("manifest.json");
    let text = serde_json::to_string_pretty(&cache).expect("manifest serializes");
    std::fs::write(&cache_path, text).map_err(|e| Error::io(&cache_path, e))?;
    load_manifest(root)
}
