use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use deepquality::aggregator::{predict_image, LinearAggregator};
use deepquality::imageio::load_luminance;
use deepquality::model_io::load_model;
use deepquality::pooling::pool_image;
use deepquality::training::score_patches;
use deepquality::NUM_GRADES;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::failure::{CliResult, Failure};

/// JSON written to stdout by `score`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub image: String,
    /// "c0" (best) to "c4" (worst).
    pub grade: String,
    pub probabilities: [f64; NUM_GRADES],
    /// Probability-weighted grade of the mean patch score.
    pub expected_grade: f64,
    pub patch_count: usize,
    pub aggregator: String,
    pub luminance: String,
}

pub fn run(config: &RunConfig, model_path: &Path, image: &Path, per_patch: Option<&Path>) -> CliResult<ScoreReport> {
    config.pooling.validate()?;
    let model = load_model(model_path)?;
    let plane = load_luminance::<f32>(image)?;
    let (h, w) = (plane.shape()[0], plane.shape()[1]);
    if h < 64 || w < 64 {
        return Err(Failure::input(format!("{} is {w}x{h}; at least 64x64 is required", image.display())));
    }
    let selection = pool_image(&plane, &config.pooling)?;
    let scores = score_patches(&model.net, selection.patches.par_iter().map(|p| &p.patch))?;
    let identity = LinearAggregator::identity(NUM_GRADES)?;
    let agg = model.aggregator.as_ref().unwrap_or(&identity);
    let (grade, probabilities) = predict_image(agg, &scores)?;
    let n = scores.len() as f64;
    let expected_grade = scores.iter().map(|s| s.expected_grade()).sum::<f64>() / n;

    if let Some(path) = per_patch {
        let mut csv = String::from("row,col,variance,p0,p1,p2,p3,p4,predicted_grade\n");
        for (p, s) in selection.patches.iter().zip(&scores) {
            let _ = write!(csv, "{},{},{:.8}", p.location.row, p.location.col, p.variance);
            for v in s.probabilities {
                let _ = write!(csv, ",{v:.6}");
            }
            let _ = writeln!(csv, ",{}", s.predicted_grade);
        }
        fs::write(path, csv).map_err(|e| Failure::write(path, e))?;
    }
    Ok(ScoreReport {
        image: image.display().to_string(),
        grade: grade.to_string(),
        probabilities,
        expected_grade,
        patch_count: scores.len(),
        aggregator: if model.aggregator.is_some() { "fitted" } else { "identity" }.into(),
        luminance: model.header.luminance,
    })
}
