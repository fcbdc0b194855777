//! Test-time pipeline: center-cropped gray inference, thresholded
//! classification, confusion matrix and derived metrics, score histograms,
//! and heat-map overlays for visual inspection.

use crate::augment::{gray_triple, prepare_inference_input};
use crate::data::Label;
use crate::error::{Error, Result};
use crate::model::{heat_max, CheckpointManifest, Network, MODEL_STRIDE};
use ndarray::{Array2, Array3, Axis};
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};
use std::io::Write;
use std::path::Path;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const HISTOGRAM_BINS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub true_negatives: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        ConfusionMatrix {
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            true_negatives: tn,
        }
    }

    /// Ground-truth positives, P.
    pub fn positives(&self) -> u64 {
        self.true_positives + self.false_negatives
    }

    /// Ground-truth negatives, N.
    pub fn negatives(&self) -> u64 {
        self.false_positives + self.true_negatives
    }

    pub fn total(&self) -> u64 {
        self.positives() + self.negatives()
    }

    pub fn false_positive_rate(&self) -> Option<f64> {
        let n = self.negatives();
        (n > 0).then(|| self.false_positives as f64 / n as f64)
    }
}

/// A ratio that may be undefined on degenerate counts. Reports carry the
/// marker explicitly so a reader can never mistake "no positives predicted"
/// for a measured zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MetricValue {
    Defined(f64),
    Undefined,
}

impl MetricValue {
    pub fn value(&self) -> Option<f64> {
        match self {
            MetricValue::Defined(v) => Some(*v),
            MetricValue::Undefined => None,
        }
    }

    /// Percent with one decimal, truncated. Truncation, not rounding,
    /// keeps a borderline score like 0.97160 reading as 97.1 rather than
    /// overstating it as 97.2.
    pub fn percent(&self) -> String {
        match self {
            MetricValue::Defined(v) => format!("{:.1}", (v * 1000.0).floor() / 10.0),
            MetricValue::Undefined => "undefined".to_string(),
        }
    }
}

impl Serialize for MetricValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            MetricValue::Defined(v) => serializer.serialize_f64(*v),
            MetricValue::Undefined => serializer.serialize_str("undefined"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub recall: MetricValue,
    pub precision: MetricValue,
    pub accuracy: MetricValue,
    pub f_measure: MetricValue,
}

pub fn confusion(predictions: &[Label], labels: &[Label]) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions against {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut cm = ConfusionMatrix::new(0, 0, 0, 0);
    for (&pred, &truth) in predictions.iter().zip(labels.iter()) {
        match (truth, pred) {
            (Label::Toad, Label::Toad) => cm.true_positives += 1,
            (Label::NotToad, Label::Toad) => cm.false_positives += 1,
            (Label::Toad, Label::NotToad) => cm.false_negatives += 1,
            (Label::NotToad, Label::NotToad) => cm.true_negatives += 1,
        }
    }
    Ok(cm)
}

/// Recall, precision, accuracy and F-measure from a confusion matrix.
/// Precision is undefined when nothing was predicted positive; F-measure
/// is undefined when either factor is undefined or zero.
pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    if cm.total() == 0 {
        return Err(Error::Shape("empty confusion matrix".into()));
    }
    let p = cm.positives();
    let recall = if p > 0 {
        MetricValue::Defined(cm.true_positives as f64 / p as f64)
    } else {
        MetricValue::Undefined
    };
    let predicted_pos = cm.true_positives + cm.false_positives;
    let precision = if predicted_pos > 0 {
        MetricValue::Defined(cm.true_positives as f64 / predicted_pos as f64)
    } else {
        MetricValue::Undefined
    };
    let accuracy = MetricValue::Defined(
        (cm.true_positives + cm.true_negatives) as f64 / cm.total() as f64,
    );
    let f_measure = match (recall.value(), precision.value()) {
        (Some(r), Some(pr)) if r > 0.0 && pr > 0.0 => {
            MetricValue::Defined(2.0 / (1.0 / pr + 1.0 / r))
        }
        _ => MetricValue::Undefined,
    };
    Ok(Metrics { recall, precision, accuracy, f_measure })
}

/// Toad iff the score strictly exceeds the threshold.
pub fn classify(score: f64, threshold: f64) -> Label {
    if score > threshold {
        Label::Toad
    } else {
        Label::NotToad
    }
}

/// Center crop both dimensions down to the largest multiple of the model
/// stride, e.g. 720x1280 to 704x1280.
pub fn center_crop_to_stride(image: &Array3<f32>) -> Result<Array3<f32>> {
    let (h, w, c) = image.dim();
    if c != 3 {
        return Err(Error::Shape(format!("expected a 3-channel image, got {c}")));
    }
    if h < MODEL_STRIDE || w < MODEL_STRIDE {
        return Err(Error::Shape(format!(
            "image {h}x{w} is smaller than one {MODEL_STRIDE}px cell"
        )));
    }
    let ch = (h / MODEL_STRIDE) * MODEL_STRIDE;
    let cw = (w / MODEL_STRIDE) * MODEL_STRIDE;
    let top = (h - ch) / 2;
    let left = (w - cw) / 2;
    Ok(image.slice(ndarray::s![top..top + ch, left..left + cw, ..]).to_owned())
}

/// Reflect-pad (without repeating edge pixels) both dimensions up to the
/// next multiple of the model stride. Aligned images pass through
/// unchanged; padding is split evenly around the content.
pub fn pad_to_stride(image: &Array3<f32>) -> Result<Array3<f32>> {
    let (h, w, c) = image.dim();
    if c != 3 {
        return Err(Error::Shape(format!("expected a 3-channel image, got {c}")));
    }
    if h < 2 || w < 2 {
        return Err(Error::Shape(format!("image {h}x{w} is too small to reflect-pad")));
    }
    let th = h.div_ceil(MODEL_STRIDE) * MODEL_STRIDE;
    let tw = w.div_ceil(MODEL_STRIDE) * MODEL_STRIDE;
    if (th, tw) == (h, w) {
        return Ok(image.clone());
    }
    let top = (th - h) / 2;
    let left = (tw - w) / 2;
    let out = Array3::from_shape_fn((th, tw, 3), |(r, col, ch)| {
        let sr = crate::augment::reflect_index(r as isize - top as isize, h);
        let sc = crate::augment::reflect_index(col as isize - left as isize, w);
        image[(sr, sc, ch)]
    });
    Ok(out)
}

/// Full inference path: center crop, gray triple, normalize with s = 1,
/// forward. Returns the whole-image score and the heat-map behind it.
pub fn predict_image(network: &Network, image: &Array3<f32>) -> Result<(f64, Array2<f32>)> {
    let cropped = center_crop_to_stride(image)?;
    let input = prepare_inference_input(&cropped)?;
    let heat = network.heatmap_forward(&input)?;
    Ok((heat_max(&heat) as f64, heat))
}

/// Grid cell holding the maximum heat value (first occurrence wins).
pub fn heat_argmax(heat: &Array2<f32>) -> (usize, usize) {
    let mut best = ((0, 0), f32::NEG_INFINITY);
    for (idx, &v) in heat.indexed_iter() {
        if v > best.1 {
            best = (idx, v);
        }
    }
    best.0
}

/// 100-bin histogram over [0,1] in 0.01 steps, normalized to sum to one.
/// A score of exactly 1.0 lands in the last bin. Empty input gives zeros.
pub fn score_histogram(scores: &[f64]) -> Vec<f64> {
    let mut bins = vec![0.0f64; HISTOGRAM_BINS];
    if scores.is_empty() {
        return bins;
    }
    for &s in scores {
        let idx = ((s * HISTOGRAM_BINS as f64).floor() as usize).min(HISTOGRAM_BINS - 1);
        bins[idx] += 1.0;
    }
    let total = scores.len() as f64;
    for b in &mut bins {
        *b /= total;
    }
    bins
}

/// Bilinear upscale by an integer factor using half-pixel centers.
pub fn bilinear_upscale(grid: &Array2<f32>, factor: usize) -> Array2<f32> {
    let (gh, gw) = grid.dim();
    let (h, w) = (gh * factor, gw * factor);
    let mut out = Array2::<f32>::zeros((h, w));
    let f = factor as f64;
    for r in 0..h {
        let src_r = (r as f64 + 0.5) / f - 0.5;
        let r0 = src_r.floor().max(0.0) as usize;
        let r1 = (r0 + 1).min(gh - 1);
        let tr = (src_r - src_r.floor()).clamp(0.0, 1.0);
        let tr = if src_r < 0.0 { 0.0 } else { tr };
        for c in 0..w {
            let src_c = (c as f64 + 0.5) / f - 0.5;
            let c0 = src_c.floor().max(0.0) as usize;
            let c1 = (c0 + 1).min(gw - 1);
            let tc = (src_c - src_c.floor()).clamp(0.0, 1.0);
            let tc = if src_c < 0.0 { 0.0 } else { tc };
            let top = grid[(r0, c0)] as f64 * (1.0 - tc) + grid[(r0, c1)] as f64 * tc;
            let bottom = grid[(r1, c0)] as f64 * (1.0 - tc) + grid[(r1, c1)] as f64 * tc;
            out[(r, c)] = (top * (1.0 - tr) + bottom * tr) as f32;
        }
    }
    out
}

/// Heat-map visualization: upscale the grid by the model stride and
/// multiply it into the gray image, staying within [0, 255].
pub fn overlay(heat: &Array2<f32>, gray: &Array2<f32>) -> Result<Array2<u8>> {
    let (gh, gw) = heat.dim();
    let (h, w) = gray.dim();
    if h != gh * MODEL_STRIDE || w != gw * MODEL_STRIDE {
        return Err(Error::Shape(format!(
            "gray image {h}x{w} does not match heat-map {gh}x{gw} at stride {MODEL_STRIDE}"
        )));
    }
    let scaled = bilinear_upscale(heat, MODEL_STRIDE);
    let mut out = Array2::<u8>::zeros((h, w));
    for ((r, c), px) in out.indexed_iter_mut() {
        let v = (gray[(r, c)] as f64 * scaled[(r, c)] as f64).round();
        *px = v.clamp(0.0, 255.0) as u8;
    }
    Ok(out)
}

/// Gray channel of a raw 0..255 RGB image.
pub fn gray_channel(image: &Array3<f32>) -> Result<Array2<f32>> {
    Ok(gray_triple(image)?.index_axis(Axis(2), 0).to_owned())
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalOutcome {
    pub uid: String,
    pub label: Label,
    pub predicted: Label,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub outcomes: Vec<EvalOutcome>,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
    pub threshold: f64,
}

impl EvalReport {
    pub fn false_negative_uids(&self) -> Vec<&str> {
        self.outcomes
            .iter()
            .filter(|o| o.label == Label::Toad && o.predicted == Label::NotToad)
            .map(|o| o.uid.as_str())
            .collect()
    }

    pub fn class_scores(&self, label: Label) -> Vec<f64> {
        self.outcomes.iter().filter(|o| o.label == label).map(|o| o.score).collect()
    }
}

/// Run the model over every record of a dataset and tabulate the results.
pub fn evaluate_dataset(
    network: &Network,
    manifest: &crate::data::DatasetManifest,
    threshold: f64,
) -> Result<EvalReport> {
    if manifest.is_empty() {
        return Err(Error::Dataset("cannot evaluate an empty dataset".into()));
    }
    let mut outcomes = Vec::with_capacity(manifest.records.len());
    for record in &manifest.records {
        let image = record.load_image()?;
        let (score, _) = predict_image(network, &image)?;
        outcomes.push(EvalOutcome {
            uid: record.uid(),
            label: record.label,
            predicted: classify(score, threshold),
            score,
        });
    }
    let predictions: Vec<Label> = outcomes.iter().map(|o| o.predicted).collect();
    let labels: Vec<Label> = outcomes.iter().map(|o| o.label).collect();
    let cm = confusion(&predictions, &labels)?;
    Ok(EvalReport { outcomes, confusion: cm, metrics: metrics(&cm)?, threshold })
}

struct ReportJson<'a> {
    report: &'a EvalReport,
    provenance: Option<&'a CheckpointManifest>,
}

impl Serialize for ReportJson<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let cm = &self.report.confusion;
        let mut s = serializer.serialize_struct("report", 7)?;
        s.serialize_field("threshold", &self.report.threshold)?;
        s.serialize_field("n_images", &self.report.outcomes.len())?;
        s.serialize_field(
            "confusion",
            &serde_json::json!({
                "tp": cm.true_positives,
                "fp": cm.false_positives,
                "fn": cm.false_negatives,
                "tn": cm.true_negatives,
                "p": cm.positives(),
                "n": cm.negatives(),
            }),
        )?;
        s.serialize_field("metrics", &self.report.metrics)?;
        let m = &self.report.metrics;
        s.serialize_field(
            "metrics_percent",
            &serde_json::json!({
                "recall": m.recall.percent(),
                "precision": m.precision.percent(),
                "accuracy": m.accuracy.percent(),
                "f_measure": m.f_measure.percent(),
            }),
        )?;
        s.serialize_field("provenance", &self.provenance)?;
        s.end()
    }
}

/// Write report.json, histogram.csv and false_negatives.txt into `dir`.
pub fn write_reports(
    dir: &Path,
    report: &EvalReport,
    provenance: Option<&CheckpointManifest>,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let json_path = dir.join("report.json");
    let body = serde_json::to_string_pretty(&ReportJson { report, provenance })
        .expect("report serializes");
    std::fs::write(&json_path, body).map_err(|e| Error::io(&json_path, e))?;

    let toad = score_histogram(&report.class_scores(Label::Toad));
    let not_toad = score_histogram(&report.class_scores(Label::NotToad));
    let hist_path = dir.join("histogram.csv");
    let mut file = std::fs::File::create(&hist_path).map_err(|e| Error::io(&hist_path, e))?;
    writeln!(file, "bin_low,toad_density,nottoad_density").map_err(|e| Error::io(&hist_path, e))?;
    for i in 0..HISTOGRAM_BINS {
        writeln!(file, "{:.2},{},{}", i as f64 / HISTOGRAM_BINS as f64, toad[i], not_toad[i])
            .map_err(|e| Error::io(&hist_path, e))?;
    }

    let fn_path = dir.join("false_negatives.txt");
    let mut lines = report.false_negative_uids().join("\n");
    if !lines.is_empty() {
        lines.push('\n');
    }
    std::fs::write(&fn_path, lines).map_err(|e| Error::io(&fn_path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BackboneConfig;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reference_counts_reproduce_reference_percentages() {
        let cm = ConfusionMatrix::new(1728, 0, 135, 2892);
        assert_eq!(cm.positives(), 1863);
        assert_eq!(cm.negatives(), 2892);
        let m = metrics(&cm).unwrap();
        assert_eq!(m.recall.percent(), "92.7");
        assert_eq!(m.precision.percent(), "100.0");
        assert_eq!(m.accuracy.percent(), "97.1");
        assert_eq!(m.f_measure.percent(), "96.2");
    }

    #[test]
    fn all_correct_matrix_scores_hundred_everywhere() {
        let m = metrics(&ConfusionMatrix::new(10, 0, 0, 10)).unwrap();
        for v in [m.recall, m.precision, m.accuracy, m.f_measure] {
            assert_eq!(v.percent(), "100.0");
            assert_eq!(v.value(), Some(1.0));
        }
    }

    #[test]
    fn degenerate_matrix_marks_undefined() {
        let m = metrics(&ConfusionMatrix::new(0, 0, 5, 5)).unwrap();
        assert_eq!(m.recall.value(), Some(0.0));
        assert_eq!(m.precision, MetricValue::Undefined);
        assert_eq!(m.precision.percent(), "undefined");
        assert_eq!(m.accuracy.value(), Some(0.5));
        assert_eq!(m.f_measure, MetricValue::Undefined);
        assert!(metrics(&ConfusionMatrix::new(0, 0, 0, 0)).is_err());
    }

    #[test]
    fn undefined_serializes_as_marker_not_number() {
        let m = metrics(&ConfusionMatrix::new(0, 0, 5, 5)).unwrap();
        let json = serde_json::to_value(m).unwrap();
        assert_eq!(json["precision"], serde_json::json!("undefined"));
        assert_eq!(json["recall"], serde_json::json!(0.0));
    }

    #[test]
    fn truncation_never_rounds_up() {
        assert_eq!(MetricValue::Defined(4620.0 / 4755.0).percent(), "97.1");
        assert_eq!(MetricValue::Defined(0.9999).percent(), "99.9");
        assert_eq!(MetricValue::Defined(1.0).percent(), "100.0");
        assert_eq!(MetricValue::Defined(0.0).percent(), "0.0");
    }

    #[test]
    fn confusion_counts_the_contingency_table() {
        use Label::{NotToad as N, Toad as T};
        let labels = [T, T, T, N, N, N];
        let perfect = confusion(&labels, &labels).unwrap();
        assert_eq!(perfect, ConfusionMatrix::new(3, 0, 0, 3));
        let inverted: Vec<Label> =
            labels.iter().map(|l| if *l == T { N } else { T }).collect();
        let cm = confusion(&inverted, &labels).unwrap();
        assert_eq!(cm, ConfusionMatrix::new(0, 3, 3, 0));
        assert!(confusion(&labels[..3], &labels).is_err());
    }

    #[test]
    fn classification_is_strict_at_the_threshold() {
        assert_eq!(classify(0.9, 0.5), Label::Toad);
        assert_eq!(classify(0.1, 0.5), Label::NotToad);
        assert_eq!(classify(0.5, 0.5), Label::NotToad);
    }

    proptest! {
        #[test]
        fn classify_is_monotone_in_score(a in 0.0f64..1.0, b in 0.0f64..1.0, t in 0.0f64..1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            // toad at the lower score implies toad at the higher one
            if classify(lo, t) == Label::Toad {
                prop_assert_eq!(classify(hi, t), Label::Toad);
            }
        }
    }

    #[test]
    fn histogram_mass_lands_in_the_right_bins() {
        let zeros = score_histogram(&[0.0, 0.0, 0.0]);
        assert_eq!(zeros[0], 1.0);
        assert!(zeros[1..].iter().all(|&b| b == 0.0));

        let grid: Vec<f64> = (0..100).map(|i| i as f64 / 100.0 + 0.005).collect();
        let uniform = score_histogram(&grid);
        for (i, &b) in uniform.iter().enumerate() {
            assert_abs_diff_eq!(b, 0.01, epsilon = 1e-12);
            let _ = i;
        }

        let ones = score_histogram(&[1.0]);
        assert_eq!(ones[99], 1.0);
    }

    #[test]
    fn histogram_matches_a_counting_oracle_and_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let scores: Vec<f64> = (0..1000).map(|_| rng.gen::<f64>()).collect();
        let bins = score_histogram(&scores);
        for (i, &b) in bins.iter().enumerate() {
            let lo = i as f64 / 100.0;
            let hi = lo + 0.01;
            let count = scores
                .iter()
                .filter(|&&s| s >= lo && (s < hi || (i == 99 && s <= 1.0)))
                .count();
            assert_abs_diff_eq!(b, count as f64 / 1000.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(bins.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn overlay_identity_and_annihilator() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let gray = Array2::from_shape_fn((64, 96), |_| rng.gen_range(0u16..256) as f32);
        let ones = Array2::from_elem((2, 3), 1.0f32);
        let out = overlay(&ones, &gray).unwrap();
        for (a, b) in out.iter().zip(gray.iter()) {
            assert_eq!(*a as f32, *b);
        }
        let zeros = Array2::from_elem((2, 3), 0.0f32);
        let black = overlay(&zeros, &gray).unwrap();
        assert!(black.iter().all(|&v| v == 0));
        assert!(overlay(&ones, &Array2::zeros((65, 96))).is_err());
    }

    #[test]
    fn single_hot_overlay_matches_direct_oracle() {
        let gray = Array2::from_elem((96, 96), 200.0f32);
        let mut heat = Array2::<f32>::zeros((3, 3));
        heat[(1, 1)] = 1.0;
        let out = overlay(&heat, &gray).unwrap();

        // Direct oracle: same half-pixel bilinear formula, scalar loop.
        let up = bilinear_upscale(&heat, 32);
        for ((r, c), &v) in up.indexed_iter() {
            let expected = (200.0f64 * v as f64).round().clamp(0.0, 255.0) as u8;
            assert_eq!(out[(r, c)], expected, "pixel ({r},{c})");
        }
        // Bright around the hot cell center (the peak straddles pixels 47
        // and 48 under half-pixel sampling), dark two cells away.
        assert!(out[(47, 47)] >= 190 && out[(48, 48)] >= 190);
        assert_eq!(out[(0, 0)], 0);
        assert_eq!(out[(95, 95)], 0);
    }

    fn tiny_network(seed: u64) -> Network {
        let cfg = BackboneConfig { channels: vec![2, 2, 2, 2, 2], seed };
        Network::build(&cfg, seed + 1).unwrap()
    }

    #[test]
    fn predict_center_crops_to_stride_multiples() {
        let net = tiny_network(3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let image = Array3::from_shape_fn((720, 1280, 3), |_| rng.gen_range(0u16..256) as f32);
        let (score, heat) = predict_image(&net, &image).unwrap();
        assert_eq!(heat.dim(), (22, 40));
        assert!(score > 0.0 && score < 1.0);
        assert_eq!(score, heat_max(&heat) as f64);

        // Equals inference on the manual 704x1280 center crop.
        let manual = image.slice(ndarray::s![8..712, .., ..]).to_owned();
        let input = prepare_inference_input(&manual).unwrap();
        let direct = net.heatmap_forward(&input).unwrap();
        assert_eq!(heat, direct);

        assert!(predict_image(&net, &Array3::zeros((16, 16, 3))).is_err());
    }

    #[test]
    fn padding_reaches_the_next_stride_multiple() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let image = Array3::from_shape_fn((30, 70, 3), |_| rng.gen_range(0u16..256) as f32);
        let padded = pad_to_stride(&image).unwrap();
        assert_eq!(padded.dim(), (32, 96, 3));
        // Content sits centered and untouched.
        let inner = padded.slice(ndarray::s![1..31, 13..83, ..]);
        assert_eq!(inner, image);
        // Reflection: the row above the content mirrors row 1 of it.
        assert_eq!(padded[(0, 13, 0)], image[(1, 0, 0)]);

        let aligned = Array3::from_shape_fn((64, 64, 3), |_| 1.0f32);
        assert_eq!(pad_to_stride(&aligned).unwrap().dim(), (64, 64, 3));
        assert!(pad_to_stride(&Array3::zeros((1, 50, 3))).is_err());
    }

    #[test]
    fn argmax_finds_the_hot_cell() {
        let mut heat = Array2::<f32>::zeros((4, 5));
        heat[(2, 3)] = 0.9;
        heat[(1, 1)] = 0.5;
        assert_eq!(heat_argmax(&heat), (2, 3));
    }

    #[test]
    fn report_files_have_the_advertised_shape() {
        let dir = tempfile::tempdir().unwrap();
        let outcomes = vec![
            EvalOutcome { uid: "a_1".into(), label: Label::Toad, predicted: Label::Toad, score: 0.92 },
            EvalOutcome { uid: "b_1".into(), label: Label::Toad, predicted: Label::NotToad, score: 0.2 },
            EvalOutcome { uid: "c_1".into(), label: Label::NotToad, predicted: Label::NotToad, score: 0.05 },
        ];
        let predictions: Vec<Label> = outcomes.iter().map(|o| o.predicted).collect();
        let labels: Vec<Label> = outcomes.iter().map(|o| o.label).collect();
        let cm = confusion(&predictions, &labels).unwrap();
        let report = EvalReport {
            outcomes,
            confusion: cm,
            metrics: metrics(&cm).unwrap(),
            threshold: 0.5,
        };
        assert_eq!(report.false_negative_uids(), vec!["b_1"]);
        write_reports(dir.path(), &report, None).unwrap();

        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
                .unwrap();
        assert_eq!(json["confusion"]["tp"], 1);
        assert_eq!(json["confusion"]["fn"], 1);
        assert_eq!(json["threshold"], 0.5);
        assert_eq!(json["n_images"], 3);

        let hist = std::fs::read_to_string(dir.path().join("histogram.csv")).unwrap();
        assert_eq!(hist.lines().count(), 101);
        assert!(hist.starts_with("bin_low,toad_density,nottoad_density"));

        let fn_list = std::fs::read_to_string(dir.path().join("false_negatives.txt")).unwrap();
        assert_eq!(fn_list, "b_1\n");
    }

    #[test]
    fn evaluate_dataset_tabulates_every_record() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = crate::data::write_dataset(
            dir.path(),
            crate::data::ClassCounts { toad: 2, not_toad: 3 },
            5,
            (64, 64),
        )
        .unwrap();
        let net = tiny_network(1);
        let report = evaluate_dataset(&net, &manifest, 0.5).unwrap();
        assert_eq!(report.outcomes.len(), 5);
        assert_eq!(report.confusion.total(), 5);
        for o in &report.outcomes {
            assert!(o.score > 0.0 && o.score < 1.0);
        }
    }
}
