use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use deepquality::dataset::{pool_records, PatchDataset};
use deepquality::model_io::load_model;
use rayon::prelude::*;

use crate::commands::train::SplitFile;
use crate::config::RunConfig;
use crate::failure::{CliResult, Failure};
use crate::pipeline::{evaluate_dataset, load_records, write_image_rows, write_json, EvalReport};

pub struct EvalRequest<'a> {
    pub model: &'a Path,
    /// Restrict to the held-out images of this split (and reuse its DMOS bins).
    pub split: Option<&'a Path>,
}

fn read_split(path: &Path) -> CliResult<SplitFile> {
    let text = fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

/// Scores every configured record and writes `eval.json` and `images.csv`
/// into the output directory.
pub fn run(config: &RunConfig, request: &EvalRequest) -> CliResult<(EvalReport, PathBuf)> {
    config.validate()?;
    let out = &config.output_dir;
    config.write_effective(out)?;
    let model = load_model(request.model)?;
    let split = request.split.map(read_split).transpose()?;
    let loaded = load_records(
        &config.dataset,
        &config.distortions,
        split.as_ref().and_then(|s| s.binning.as_ref()),
    )?;
    let mut records = loaded.records;
    if let Some(s) = &split {
        let keep: HashSet<&str> = s.report.test_images.iter().map(String::as_str).collect();
        records.retain(|r| keep.contains(r.image_id.as_str()));
        if records.is_empty() {
            return Err(Failure::input("none of the split's test images are in the dataset"));
        }
    }

    let pooled: Vec<_> = records
        .par_iter()
        .map(|r| (r.image_id.clone(), pool_records::<f32>(std::slice::from_ref(r), &config.pooling)))
        .collect();
    let mut dataset = PatchDataset::default();
    let mut errors = Vec::new();
    for (id, result) in pooled {
        match result {
            Ok((samples, _)) => dataset.samples.extend(samples),
            Err(e) => {
                eprintln!("skipping {id}: {e}");
                errors.push((id, e.to_string()));
            }
        }
    }
    if dataset.is_empty() {
        return Err(Failure::input("no evaluable images"));
    }
    let mut report = evaluate_dataset(&model.net, model.aggregator.as_ref(), &dataset)?;
    report.image_errors = errors;
    let path = out.join("eval.json");
    write_json(&path, &report)?;
    write_image_rows(&out.join("images.csv"), &report.rows)?;
    eprintln!(
        "{} patches, accuracy {:.4}; {} images, accuracy {:.4} ({} aggregator); {} unreadable",
        report.patches,
        report.patch_accuracy,
        report.images,
        report.image_accuracy,
        report.aggregator,
        report.image_errors.len()
    );
    Ok((report, path))
}
