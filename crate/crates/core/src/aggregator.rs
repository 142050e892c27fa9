//! Image-level grading: a multinomial logistic model over summary statistics
//! of an image's patch scores.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{PatchDataset, SampleRecord};
use crate::error::{invalid, shape_err, Result};
use crate::grade::{QualityGrade, NUM_GRADES};
use crate::imageio::load_luminance;
use crate::network::{DeepQualityNet, PatchScore};
use crate::nn::softmax;
use crate::pooling::{pool_image, PoolingConfig};
use crate::scalar::Real;
use crate::training::{confusion_accuracy, score_patches, Confusion};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregatorConfig {
    /// 5: mean patch probabilities. 10: mean followed by per-class std.
    pub feature_dim: usize,
    pub l2_lambda: f64,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
}

impl Default for AggregatorConfig {
    fn default() -> Self {
        AggregatorConfig {
            feature_dim: NUM_GRADES,
            l2_lambda: 1e-6,
            max_iterations: 10_000,
            gradient_tolerance: 1e-6,
        }
    }
}

fn check_feature_dim(d: usize) -> Result<()> {
    if d == NUM_GRADES || d == 2 * NUM_GRADES {
        Ok(())
    } else {
        Err(invalid!("feature_dim must be 5 or 10, got {d}"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearAggregator {
    pub feature_dim: usize,
    /// Row-major `[5, feature_dim]`.
    pub weights: Vec<f64>,
    pub bias: [f64; NUM_GRADES],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    pub loss: f64,
    pub training_accuracy: f64,
}

/// Mean of the patch probability vectors, optionally followed by their
/// per-class population standard deviation.
pub fn image_features<T: Real>(scores: &[PatchScore<T>], feature_dim: usize) -> Result<Vec<f64>> {
    check_feature_dim(feature_dim)?;
    if scores.is_empty() {
        return Err(invalid!("an image needs at least one patch score"));
    }
    let n = scores.len() as f64;
    let mut mean = [0.0; NUM_GRADES];
    for s in scores {
        for (m, p) in mean.iter_mut().zip(&s.probabilities) {
            *m += p.to_f64_lossy();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut out = mean.to_vec();
    if feature_dim == 2 * NUM_GRADES {
        for (k, m) in mean.iter().enumerate() {
            let var = scores
                .iter()
                .map(|s| (s.probabilities[k].to_f64_lossy() - m).powi(2))
                .sum::<f64>()
                / n;
            out.push(var.sqrt());
        }
    }
    Ok(out)
}

impl LinearAggregator {
    pub fn zeros(feature_dim: usize) -> Result<Self> {
        check_feature_dim(feature_dim)?;
        Ok(LinearAggregator {
            feature_dim,
            weights: vec![0.0; NUM_GRADES * feature_dim],
            bias: [0.0; NUM_GRADES],
        })
    }

    /// Identity weights on the mean block and zero bias: the image grade is
    /// the argmax of the mean patch probabilities.
    pub fn identity(feature_dim: usize) -> Result<Self> {
        let mut a = Self::zeros(feature_dim)?;
        for k in 0..NUM_GRADES {
            a.weights[k * feature_dim + k] = 1.0;
        }
        Ok(a)
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }

    /// Parameters as they will read back from a model file.
    pub fn rounded_to_f32(&self) -> Self {
        LinearAggregator {
            feature_dim: self.feature_dim,
            weights: self.weights.iter().map(|&w| w as f32 as f64).collect(),
            bias: self.bias.map(|b| b as f32 as f64),
        }
    }

    fn logits(&self, features: &[f64]) -> [f64; NUM_GRADES] {
        std::array::from_fn(|k| {
            let row = &self.weights[k * self.feature_dim..(k + 1) * self.feature_dim];
            self.bias[k] + row.iter().zip(features).map(|(w, x)| w * x).sum::<f64>()
        })
    }

    /// Softmax probabilities and argmax grade for a feature vector.
    pub fn predict_features(&self, features: &[f64]) -> Result<(QualityGrade, [f64; NUM_GRADES])> {
        if features.len() != self.feature_dim {
            return Err(shape_err!(
                "aggregator expects {} features, got {}",
                self.feature_dim,
                features.len()
            ));
        }
        let p: [f64; NUM_GRADES] = softmax(&self.logits(features)).try_into().expect("five classes");
        Ok((QualityGrade::argmax(&p), p))
    }
}

pub fn predict_image<T: Real>(
    aggregator: &LinearAggregator,
    scores: &[PatchScore<T>],
) -> Result<(QualityGrade, [f64; NUM_GRADES])> {
    aggregator.predict_features(&image_features(scores, aggregator.feature_dim)?)
}

/// Full-batch gradient descent on mean cross-entropy plus
/// `l2_lambda · ‖W‖²`, starting from zero.
pub fn fit_aggregator(
    features: &[Vec<f64>],
    labels: &[QualityGrade],
    config: &AggregatorConfig,
) -> Result<(LinearAggregator, FitReport)> {
    let d = config.feature_dim;
    check_feature_dim(d)?;
    if features.len() != labels.len() {
        return Err(invalid!("{} feature rows but {} labels", features.len(), labels.len()));
    }
    if let Some(bad) = features.iter().find(|f| f.len() != d) {
        return Err(shape_err!("feature row of length {} for feature_dim {d}", bad.len()));
    }
    let mut seen = [false; NUM_GRADES];
    labels.iter().for_each(|l| seen[l.index()] = true);
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(invalid!("aggregator fit needs at least two distinct grades"));
    }
    if !(config.l2_lambda >= 0.0) {
        return Err(invalid!("l2_lambda must be non-negative"));
    }

    // softmax Jacobian eigenvalues are at most 1/2, so this bounds the
    // curvature of the mean loss
    let max_sq = features
        .iter()
        .map(|f| 1.0 + f.iter().map(|x| x * x).sum::<f64>())
        .fold(0.0, f64::max);
    let step = 1.0 / (0.5 * max_sq + 2.0 * config.l2_lambda);

    let n = features.len() as f64;
    let mut agg = LinearAggregator::zeros(d)?;
    let mut gw = vec![0.0; NUM_GRADES * d];
    let mut gb = [0.0; NUM_GRADES];
    let mut report = FitReport {
        iterations: 0,
        converged: false,
        gradient_norm: f64::INFINITY,
        loss: f64::NAN,
        training_accuracy: 0.0,
    };
    loop {
        gw.iter_mut().for_each(|g| *g = 0.0);
        gb.fill(0.0);
        let mut loss = 0.0;
        for (x, l) in features.iter().zip(labels) {
            let z = agg.logits(x);
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - z[l.index()];
            for k in 0..NUM_GRADES {
                let r = (z[k] - lse).exp() - if k == l.index() { 1.0 } else { 0.0 };
                gb[k] += r;
                for (g, xi) in gw[k * d..(k + 1) * d].iter_mut().zip(x) {
                    *g += r * xi;
                }
            }
        }
        let reg: f64 = agg.weights.iter().map(|w| w * w).sum();
        report.loss = loss / n + config.l2_lambda * reg;
        for (g, w) in gw.iter_mut().zip(&agg.weights) {
            *g = *g / n + 2.0 * config.l2_lambda * w;
        }
        gb.iter_mut().for_each(|g| *g /= n);
        report.gradient_norm = gw.iter().chain(&gb).map(|g| g * g).sum::<f64>().sqrt();
        if report.gradient_norm < config.gradient_tolerance {
            report.converged = true;
            break;
        }
        if report.iterations == config.max_iterations {
            break;
        }
        for (w, g) in agg.weights.iter_mut().zip(&gw) {
            *w -= step * g;
        }
        for (b, g) in agg.bias.iter_mut().zip(&gb) {
            *b -= step * g;
        }
        report.iterations += 1;
    }
    let hits = features
        .iter()
        .zip(labels)
        .filter(|(x, l)| agg.predict_features(x).map(|(g, _)| g == **l).unwrap_or(false))
        .count();
    report.training_accuracy = hits as f64 / n;
    Ok((agg, report))
}

/// One image's patch scores grouped out of a scored patch dataset.
#[derive(Clone, Debug)]
pub struct ImageScores<T> {
    pub image_id: Arc<str>,
    pub kind: Arc<str>,
    pub grade: QualityGrade,
    pub scores: Vec<PatchScore<T>>,
}

/// Regroups per-patch scores (in dataset order) by image, in image-id order.
pub fn group_by_image<T: Real>(dataset: &PatchDataset<T>, scores: &[PatchScore<T>]) -> Vec<ImageScores<T>> {
    dataset
        .by_image()
        .into_iter()
        .map(|(image_id, idx)| {
            let first = &dataset.samples[idx[0]];
            ImageScores {
                image_id,
                kind: first.kind.clone(),
                grade: first.grade,
                scores: idx.iter().map(|&i| scores[i]).collect(),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageReportRow {
    pub image_id: String,
    pub kind: String,
    pub true_grade: QualityGrade,
    pub predicted_grade: QualityGrade,
    pub probabilities: [f64; NUM_GRADES],
    /// Probability-weighted grade of the mean patch score.
    pub expected_grade: f64,
    pub patch_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageEvaluation {
    pub accuracy: f64,
    pub confusion: Confusion,
    pub rows: Vec<ImageReportRow>,
    /// Images that could not be scored, with the reason.
    pub errors: Vec<(String, String)>,
}

fn report_row<T: Real>(aggregator: &LinearAggregator, image: &ImageScores<T>) -> Result<ImageReportRow> {
    let features = image_features(&image.scores, aggregator.feature_dim)?;
    let (predicted_grade, probabilities) = aggregator.predict_features(&features)?;
    Ok(ImageReportRow {
        image_id: image.image_id.to_string(),
        kind: image.kind.to_string(),
        true_grade: image.grade,
        predicted_grade,
        probabilities,
        expected_grade: features[..NUM_GRADES].iter().enumerate().map(|(i, p)| i as f64 * p).sum(),
        patch_count: image.scores.len(),
    })
}

fn summarize(rows: Vec<ImageReportRow>, errors: Vec<(String, String)>) -> ImageEvaluation {
    let mut confusion = [[0; NUM_GRADES]; NUM_GRADES];
    for r in &rows {
        confusion[r.true_grade.index()][r.predicted_grade.index()] += 1;
    }
    let accuracy = if rows.is_empty() { 0.0 } else { confusion_accuracy(&confusion) };
    ImageEvaluation {
        accuracy,
        confusion,
        rows,
        errors,
    }
}

/// Image-level evaluation from already-scored, already-grouped patches.
pub fn evaluate_grouped<T: Real>(aggregator: &LinearAggregator, images: &[ImageScores<T>]) -> Result<ImageEvaluation> {
    let rows = images.iter().map(|im| report_row(aggregator, im)).collect::<Result<_>>()?;
    Ok(summarize(rows, Vec::new()))
}

/// Loads, pools, scores and aggregates every record independently.
/// Unreadable images are listed in `errors` and left out of the accuracy.
pub fn evaluate_images<T: Real>(
    aggregator: &LinearAggregator,
    net: &DeepQualityNet<T>,
    records: &[SampleRecord],
    pooling: &PoolingConfig,
) -> Result<ImageEvaluation> {
    pooling.validate()?;
    let outcomes: Vec<std::result::Result<ImageReportRow, (String, String)>> = records
        .par_iter()
        .map(|r| {
            let run = || -> Result<ImageReportRow> {
                let grade = r.require_grade()?;
                let image = load_luminance::<T>(&r.path)?;
                let selection = pool_image(&image, pooling)?;
                let scores = score_patches(net, selection.patches.par_iter().map(|p| &p.patch))?;
                report_row(
                    aggregator,
                    &ImageScores {
                        image_id: r.image_id.as_str().into(),
                        kind: r.kind.as_str().into(),
                        grade,
                        scores,
                    },
                )
            };
            run().map_err(|e| (r.image_id.clone(), e.to_string()))
        })
        .collect();
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for o in outcomes {
        match o {
            Ok(row) => rows.push(row),
            Err(e) => errors.push(e),
        }
    }
    Ok(summarize(rows, errors))
}

/// Per-kind accuracies and the mean expected grade at each ladder level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistortionBreakdown {
    pub kind: String,
    pub images: usize,
    pub image_accuracy: f64,
    pub patch_accuracy: Option<f64>,
    /// Indexed by true grade; `None` where the kind has no such images.
    pub mean_expected_grade: [Option<f64>; NUM_GRADES],
    /// Adjacent populated levels whose mean expected grade decreases.
    pub inversions: usize,
}

/// Groups image rows by distortion kind, in kind order. `patch_hits` maps a
/// kind to its (correct, total) patch counts when available.
pub fn distortion_breakdown(
    rows: &[ImageReportRow],
    patch_hits: &BTreeMap<String, (usize, usize)>,
) -> Vec<DistortionBreakdown> {
    let mut by_kind: BTreeMap<&str, Vec<&ImageReportRow>> = BTreeMap::new();
    for r in rows {
        by_kind.entry(&r.kind).or_default().push(r);
    }
    by_kind
        .into_iter()
        .map(|(kind, rs)| {
            let mut sums = [(0.0, 0usize); NUM_GRADES];
            for r in &rs {
                let s = &mut sums[r.true_grade.index()];
                s.0 += r.expected_grade;
                s.1 += 1;
            }
            let mean_expected_grade = sums.map(|(s, n)| (n > 0).then(|| s / n as f64));
            let levels: Vec<f64> = mean_expected_grade.iter().flatten().copied().collect();
            let inversions = levels.windows(2).filter(|w| w[1] < w[0]).count();
            let hits = rs.iter().filter(|r| r.true_grade == r.predicted_grade).count();
            DistortionBreakdown {
                kind: kind.to_string(),
                images: rs.len(),
                image_accuracy: hits as f64 / rs.len() as f64,
                patch_accuracy: patch_hits.get(kind).map(|&(c, t)| c as f64 / t as f64),
                mean_expected_grade,
                inversions,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn score(p: [f64; 5]) -> PatchScore<f64> {
        PatchScore {
            predicted_grade: QualityGrade::argmax(&p),
            probabilities: p,
        }
    }

    fn g(i: usize) -> QualityGrade {
        QualityGrade::new(i).unwrap()
    }

    #[test]
    fn features_of_a_single_patch_are_its_probabilities() {
        let p = [0.1, 0.2, 0.3, 0.25, 0.15];
        let f = image_features(&[score(p)], 10).unwrap();
        assert_eq!(&f[..5], &p);
        assert!(f[5..].iter().all(|&s| s == 0.0));
    }

    #[test]
    fn two_extreme_patches_average_to_halves() {
        let f = image_features(&[score([1.0, 0.0, 0.0, 0.0, 0.0]), score([0.0, 0.0, 0.0, 0.0, 1.0])], 5).unwrap();
        assert_eq!(f, vec![0.5, 0.0, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn empty_and_bad_dimensions_are_rejected() {
        assert!(image_features::<f64>(&[], 5).is_err());
        assert!(image_features(&[score([0.2; 5])], 7).is_err());
        let a = LinearAggregator::identity(10).unwrap();
        assert!(a.predict_features(&[0.2; 5]).is_err());
    }

    #[test]
    fn identity_aggregator_follows_consensus() {
        let a = LinearAggregator::identity(5).unwrap();
        let (grade, p) = predict_image(&a, &[score([0.0, 0.0, 1.0, 0.0, 0.0]); 4]).unwrap();
        assert_eq!(grade, g(2));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    fn separable() -> (Vec<Vec<f64>>, Vec<QualityGrade>) {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..10 {
            let t = 0.05 * i as f64;
            xs.push(vec![0.7 - t, 0.2, 0.05 + t, 0.03, 0.02]);
            ys.push(g(0));
            xs.push(vec![0.02, 0.03, 0.05 + t, 0.2, 0.7 - t]);
            ys.push(g(4));
        }
        (xs, ys)
    }

    #[test]
    fn separable_toy_set_is_fit_perfectly() {
        let (xs, ys) = separable();
        let (agg, report) = fit_aggregator(&xs, &ys, &AggregatorConfig::default()).unwrap();
        assert_eq!(report.training_accuracy, 1.0);
        assert!(agg.is_finite());
    }

    #[test]
    fn iteration_cap_is_reported() {
        let (xs, ys) = separable();
        let cfg = AggregatorConfig {
            max_iterations: 3,
            ..Default::default()
        };
        let (_, report) = fit_aggregator(&xs, &ys, &cfg).unwrap();
        assert!(!report.converged);
        assert_eq!(report.iterations, 3);
    }

    #[test]
    fn single_class_is_rejected() {
        let xs = vec![vec![0.2; 5]; 3];
        assert!(fit_aggregator(&xs, &[g(1); 3], &AggregatorConfig::default()).is_err());
    }

    #[test]
    fn fitted_aggregator_follows_one_hot_consensus() {
        let (xs, ys) = separable();
        let (agg, _) = fit_aggregator(&xs, &ys, &AggregatorConfig::default()).unwrap();
        let (grade, _) = predict_image(&agg, &[score([0.0, 0.0, 0.0, 0.0, 1.0]); 3]).unwrap();
        assert_eq!(grade, g(4));
        let (grade, _) = predict_image(&agg, &[score([1.0, 0.0, 0.0, 0.0, 0.0]); 3]).unwrap();
        assert_eq!(grade, g(0));
    }

    #[test]
    fn breakdown_counts_inversions_between_populated_levels() {
        let row = |kind: &str, grade: usize, e: f64| ImageReportRow {
            image_id: format!("{kind}{grade}{e}"),
            kind: kind.into(),
            true_grade: g(grade),
            predicted_grade: g(grade),
            probabilities: [0.2; 5],
            expected_grade: e,
            patch_count: 1,
        };
        let rows = vec![
            row("blur", 0, 0.1),
            row("blur", 1, 1.0),
            row("blur", 2, 0.8),
            row("blur", 4, 3.9),
            row("noise", 0, 0.5),
            row("noise", 3, 2.0),
        ];
        let b = distortion_breakdown(&rows, &BTreeMap::new());
        assert_eq!(b.len(), 2);
        assert_eq!((b[0].kind.as_str(), b[0].inversions), ("blur", 1));
        assert_eq!(b[0].mean_expected_grade[3], None);
        assert_eq!(b[1].inversions, 0);
    }
}
