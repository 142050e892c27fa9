//! Steps shared by several subcommands.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use deepquality::aggregator::{
    distortion_breakdown, evaluate_grouped, group_by_image, DistortionBreakdown, ImageReportRow, LinearAggregator,
};
use deepquality::dataset::{load_csiq, load_synth_manifest, map_dmos_to_grades, GradeBinning, PatchDataset, SampleRecord};
use deepquality::training::{evaluate_patches, extreme_grade_accuracy, Confusion};
use deepquality::{DeepQualityNet, QualityGrade, Real};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{DatasetSection, DistortionSection};
use crate::failure::{CliResult, Failure};

pub struct LoadedRecords {
    pub records: Vec<SampleRecord>,
    pub binning: Option<GradeBinning>,
    pub issues: Vec<String>,
}

/// Reads the configured dataset, keeps only the configured distortion kinds
/// (all kinds when the list is empty), and grades CSIQ records (with `binning` if given, else freshly fitted).
pub fn load_records(
    dataset: &DatasetSection,
    distortions: &DistortionSection,
    binning: Option<&GradeBinning>,
) -> CliResult<LoadedRecords> {
    let keep = |r: &SampleRecord| distortions.kinds.is_empty() || distortions.kinds.iter().any(|k| *k == r.kind);
    match (&dataset.manifest, &dataset.csiq_root) {
        (Some(manifest), None) => {
            if !manifest.is_file() {
                return Err(Failure::input(format!("manifest not found: {}", manifest.display())));
            }
            let records: Vec<_> = load_synth_manifest(manifest)?.into_iter().filter(keep).collect();
            if records.is_empty() {
                return Err(Failure::input(format!(
                    "no records of kinds {:?} in {}",
                    distortions.kinds,
                    manifest.display()
                )));
            }
            Ok(LoadedRecords {
                records,
                binning: None,
                issues: Vec::new(),
            })
        }
        (None, Some(root)) => {
            if !root.is_dir() {
                return Err(Failure::input(format!("CSIQ root not found: {}", root.display())));
            }
            let dmos = dataset.dmos_csv.clone().unwrap_or_else(|| root.join("dmos.csv"));
            if !dmos.is_file() {
                return Err(Failure::input(format!("DMOS table not found: {}", dmos.display())));
            }
            let load = load_csiq(root, &dmos, dataset.allow_partial)?;
            let mut records: Vec<_> = load.records.into_iter().filter(keep).collect();
            if records.is_empty() {
                return Err(Failure::input(format!(
                    "no CSIQ records of kinds {:?} (set distortions.kinds = [] to keep every kind)",
                    distortions.kinds
                )));
            }
            let binning = match binning {
                Some(b) => {
                    b.apply(&mut records)?;
                    b.clone()
                }
                None => map_dmos_to_grades(&mut records, dataset.binning)?,
            };
            Ok(LoadedRecords {
                records,
                binning: Some(binning),
                issues: load.issues,
            })
        }
        (Some(_), Some(_)) => Err(Failure::input("set either a manifest or a CSIQ root, not both")),
        (None, None) => Err(Failure::input("no dataset given: set --manifest or --csiq-root")),
    }
}

/// Patch- and image-level results on one labelled patch set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub patches: usize,
    pub patch_accuracy: f64,
    pub patch_confusion: Confusion,
    /// c0-vs-c4 preference accuracy over patches labelled c0 or c4.
    pub extreme_accuracy: Option<f64>,
    pub images: usize,
    pub image_accuracy: f64,
    pub image_confusion: Confusion,
    /// "fitted" or "identity".
    pub aggregator: String,
    pub per_distortion: Vec<DistortionBreakdown>,
    pub monotonicity_inversions: BTreeMap<String, usize>,
    pub image_errors: Vec<(String, String)>,
    #[serde(skip)]
    pub rows: Vec<ImageReportRow>,
}

pub fn evaluate_dataset<T: Real>(
    net: &DeepQualityNet<T>,
    aggregator: Option<&LinearAggregator>,
    dataset: &PatchDataset<T>,
) -> CliResult<EvalReport> {
    let patch_eval = evaluate_patches(net, dataset)?;
    let labels: Vec<QualityGrade> = dataset.samples.iter().map(|s| s.grade).collect();
    let mut patch_hits: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (s, score) in dataset.samples.iter().zip(&patch_eval.scores) {
        let e = patch_hits.entry(s.kind.to_string()).or_default();
        e.0 += usize::from(s.grade == score.predicted_grade);
        e.1 += 1;
    }
    let identity = LinearAggregator::identity(deepquality::NUM_GRADES)?;
    let agg = aggregator.unwrap_or(&identity);
    let grouped = group_by_image(dataset, &patch_eval.scores);
    let images = evaluate_grouped(agg, &grouped)?;
    let per_distortion = distortion_breakdown(&images.rows, &patch_hits);
    Ok(EvalReport {
        patches: dataset.len(),
        patch_accuracy: patch_eval.accuracy,
        patch_confusion: patch_eval.confusion,
        extreme_accuracy: extreme_grade_accuracy(&labels, &patch_eval.scores),
        images: images.rows.len(),
        image_accuracy: images.accuracy,
        image_confusion: images.confusion,
        aggregator: if aggregator.is_some() { "fitted" } else { "identity" }.into(),
        monotonicity_inversions: per_distortion.iter().map(|d| (d.kind.clone(), d.inversions)).collect(),
        per_distortion,
        image_errors: images.errors,
        rows: images.rows,
    })
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    fs::write(path, text + "\n").map_err(|e| Failure::write(path, e))
}

pub fn write_image_rows(path: &Path, rows: &[ImageReportRow]) -> CliResult<()> {
    let mut out = String::from("image_id,kind,true_grade,predicted_grade,p0,p1,p2,p3,p4,expected_grade,patch_count\n");
    for r in rows {
        let p: Vec<String> = r.probabilities.iter().map(|v| format!("{v:.6}")).collect();
        out.push_str(&format!(
            "{},{},{},{},{},{:.6},{}\n",
            r.image_id,
            r.kind,
            r.true_grade,
            r.predicted_grade,
            p.join(","),
            r.expected_grade,
            r.patch_count
        ));
    }
    fs::write(path, out).map_err(|e| Failure::write(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `<path>.sha256` in the conventional `digest  filename` layout and
/// returns the digest.
pub fn write_checksum(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    let digest = sha256_hex(&bytes);
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let sum_path = path.with_extension("dqm.sha256");
    let mut f = fs::File::create(&sum_path).map_err(|e| Failure::write(&sum_path, e))?;
    writeln!(f, "{digest}  {name}").map_err(|e| Failure::write(&sum_path, e))?;
    Ok(digest)
}
