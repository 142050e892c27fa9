use std::fs;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use deepquality::aggregator::{fit_aggregator, group_by_image, image_features, FitReport, LinearAggregator};
use deepquality::dataset::{build_patch_dataset, GradeBinning, PatchDataset, SplitReport};
use deepquality::model_io::save_model;
use deepquality::training::{score_patches, train, EpochMetrics, Precision, TrainAbort};
use deepquality::{DeepQualityNet, Real};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::failure::{CliResult, Failure};
use crate::pipeline::{evaluate_dataset, load_records, write_checksum, write_image_rows, write_json, EvalReport};

/// Everything `split.json` records about how the data was divided.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitFile {
    #[serde(flatten)]
    pub report: SplitReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub binning: Option<GradeBinning>,
    pub dataset_issues: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainSummary {
    pub model: PathBuf,
    pub best_model: PathBuf,
    pub checksum: String,
    pub epochs_completed: usize,
    pub best_epoch: usize,
    pub best_test_accuracy: f64,
    pub final_metrics: Option<EpochMetrics>,
    pub aborted: Option<TrainAbort>,
    pub aggregator_fit: Option<FitReport>,
    pub test: EvalReport,
}

fn fit_on_train<T: Real>(
    net: &DeepQualityNet<T>,
    train_set: &PatchDataset<T>,
    config: &RunConfig,
) -> CliResult<(LinearAggregator, FitReport)> {
    let scores = score_patches(net, train_set.samples.par_iter().map(|s| &s.patch))?;
    let images = group_by_image(train_set, &scores);
    let cfg = config.aggregator.config();
    let features = images
        .iter()
        .map(|im| image_features(&im.scores, cfg.feature_dim))
        .collect::<Result<Vec<_>, _>>()?;
    let labels: Vec<_> = images.iter().map(|im| im.grade).collect();
    let (agg, report) = fit_aggregator(&features, &labels, &cfg)?;
    if !report.converged {
        eprintln!(
            "aggregator stopped at the iteration cap ({}) with gradient norm {:.3e}",
            report.iterations, report.gradient_norm
        );
    }
    // evaluate with the parameters a reloaded model will carry
    Ok((agg.rounded_to_f32(), report))
}

fn run_typed<T: Real>(config: &RunConfig) -> CliResult<TrainSummary> {
    let out = &config.output_dir;
    let loaded = load_records(&config.dataset, &config.distortions, None)?;
    for issue in &loaded.issues {
        eprintln!("dataset: {issue}");
    }
    let split = config.dataset.split_spec()?;
    let (train_set, test_set, report) =
        build_patch_dataset::<T>(&loaded.records, &config.pooling, &split, config.seed)?;
    eprintln!(
        "patches: {} train {:?}, {} test {:?}",
        report.train_patches, report.train_per_grade, report.test_patches, report.test_per_grade
    );
    write_json(
        &out.join("split.json"),
        &SplitFile {
            report,
            binning: loaded.binning.clone(),
            dataset_issues: loaded.issues,
        },
    )?;

    let net = DeepQualityNet::<T>::init(config.seed, config.network.widths())?;
    let metrics_path = out.join("metrics.jsonl");
    let file = fs::File::create(&metrics_path).map_err(|e| Failure::write(&metrics_path, e))?;
    let mut metrics_out = BufWriter::new(file);
    let mut write_err = None;
    let outcome = train(net, &train_set, &test_set, &config.training, |m| {
        eprintln!(
            "epoch {:>3}  lr {:.2e}  loss {:.4}  train {:.3}  test {:.3}  ({:.1}s)",
            m.epoch, m.learning_rate, m.train_loss, m.train_accuracy, m.test_accuracy, m.seconds
        );
        let line = serde_json::to_string(m).expect("metrics serialize");
        if let Err(e) = writeln!(metrics_out, "{line}").and_then(|_| metrics_out.flush()) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(Failure::write(&metrics_path, e));
    }

    let (aggregator, fit) = if config.aggregator.patch_only {
        (None, None)
    } else {
        let (a, f) = fit_on_train(&outcome.final_net, &train_set, config)?;
        (Some(a), Some(f))
    };
    let training_meta = serde_json::json!({
        "config": config.training,
        "pooling": config.pooling,
        "distortions": config.distortions.kinds,
        "epochs_completed": outcome.metrics.len(),
        "best_epoch": outcome.best_epoch,
        "aggregator_fit": fit,
        "aborted": outcome.aborted,
    });
    let model = out.join("model.dqm");
    save_model(&model, &outcome.final_net, aggregator.as_ref(), config.seed, training_meta.clone())?;
    let best_model = out.join("best.dqm");
    save_model(&best_model, &outcome.best_net, aggregator.as_ref(), config.seed, training_meta)?;
    let checksum = write_checksum(&model)?;

    let test = evaluate_dataset(&outcome.final_net, aggregator.as_ref(), &test_set)?;
    write_json(&out.join("report.json"), &test)?;
    write_image_rows(&out.join("images.csv"), &test.rows)?;

    let final_metrics = outcome.metrics.last().cloned();
    let mut csv = String::from("metric,value\n");
    let mut row = |k: &str, v: String| csv.push_str(&format!("{k},{v}\n"));
    row("epochs_completed", outcome.metrics.len().to_string());
    if let Some(m) = &final_metrics {
        row("final_train_loss", format!("{:.6}", m.train_loss));
        row("final_train_accuracy", format!("{:.6}", m.train_accuracy));
        row("final_test_accuracy", format!("{:.6}", m.test_accuracy));
    }
    row("best_epoch", outcome.best_epoch.to_string());
    row("best_test_accuracy", format!("{:.6}", outcome.best_test_accuracy));
    row("test_patch_accuracy", format!("{:.6}", test.patch_accuracy));
    row(
        "test_extreme_accuracy",
        test.extreme_accuracy.map_or("".into(), |v| format!("{v:.6}")),
    );
    row("test_image_accuracy", format!("{:.6}", test.image_accuracy));
    row("model_sha256", checksum.clone());
    let summary_path = out.join("summary.csv");
    fs::write(&summary_path, csv).map_err(|e| Failure::write(&summary_path, e))?;

    eprintln!(
        "test: patch accuracy {:.4}, image accuracy {:.4}; model {} (sha256 {checksum})",
        test.patch_accuracy,
        test.image_accuracy,
        model.display()
    );
    Ok(TrainSummary {
        model,
        best_model,
        checksum,
        epochs_completed: outcome.metrics.len(),
        best_epoch: outcome.best_epoch,
        best_test_accuracy: outcome.best_test_accuracy,
        final_metrics,
        aborted: outcome.aborted,
        aggregator_fit: fit,
        test,
    })
}

/// Trains a patch network (and unless disabled an aggregator) on the
/// configured dataset. The run directory receives the effective config,
/// split, metrics, summary, report and model files.
pub fn run(config: &RunConfig) -> CliResult<TrainSummary> {
    config.validate()?;
    config.write_effective(&config.output_dir)?;
    let summary = match config.training.precision {
        Precision::F32 => run_typed::<f32>(config)?,
        Precision::F64 => run_typed::<f64>(config)?,
    };
    write_json(&config.output_dir.join("train_summary.json"), &summary)?;
    if let Some(a) = &summary.aborted {
        return Err(Failure::check(format!(
            "training stopped at epoch {} batch {}: {}; last good parameters saved to {}",
            a.epoch,
            a.batch,
            a.message,
            summary.model.display()
        )));
    }
    Ok(summary)
}
