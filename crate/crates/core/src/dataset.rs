//! Labelled image records, DMOS→grade binning, and patch-level train/test
//! splits.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::ManifestEntry;
use crate::error::{invalid, Error, Result};
use crate::grade::{QualityGrade, NUM_GRADES};
use crate::imageio::load_luminance;
use crate::nn::Tensor;
use crate::pooling::{pool_image, PatchLocation, PoolingConfig};
use crate::scalar::Real;

/// Number of distorted images in the complete CSIQ release.
pub const CSIQ_EXPECTED_IMAGES: usize = 866;

/// One distorted image and its label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub image_id: String,
    /// Pristine image this one was derived from; splits never straddle it.
    pub source_id: String,
    pub kind: String,
    pub level: u8,
    pub dmos: Option<f64>,
    /// `None` until DMOS binning has run.
    pub grade: Option<QualityGrade>,
    pub path: PathBuf,
}

impl SampleRecord {
    pub fn require_grade(&self) -> Result<QualityGrade> {
        self.grade
            .ok_or_else(|| invalid!("record {} has no grade; bin DMOS values first", self.image_id))
    }
}

#[derive(Clone, Debug, Default)]
pub struct CsiqLoad {
    pub records: Vec<SampleRecord>,
    /// Only non-empty when partial loading was allowed.
    pub issues: Vec<String>,
}

#[derive(Deserialize)]
struct CsiqRow {
    image: String,
    distortion: String,
    level: u32,
    dmos: f64,
}

fn csiq_image_path(root: &Path, image: &str, distortion: &str, level: u32) -> PathBuf {
    root.join("dst_imgs")
        .join(distortion)
        .join(format!("{image}.{distortion}.{level}.png"))
}

/// Reads a CSIQ-layout tree: `dst_imgs/<distortion>/<image>.<distortion>.<level>.png`
/// joined against a CSV with header `image,distortion,level,dmos`.
///
/// Missing files, unparseable rows, images without a DMOS row and a total
/// other than 866 are all reported; they are fatal unless `allow_partial`.
pub fn load_csiq(root: &Path, dmos_csv: &Path, allow_partial: bool) -> Result<CsiqLoad> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(dmos_csv)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(dmos_csv, io),
            other => Error::Parse {
                path: dmos_csv.to_path_buf(),
                line: 1,
                message: format!("{other:?}"),
            },
        })?;
    let headers = reader.headers().map_err(|e| Error::Parse {
        path: dmos_csv.to_path_buf(),
        line: 1,
        message: e.to_string(),
    })?;
    for required in ["image", "distortion", "level", "dmos"] {
        if !headers.iter().any(|h| h == required) {
            return Err(Error::Parse {
                path: dmos_csv.to_path_buf(),
                line: 1,
                message: format!("missing column {required:?}"),
            });
        }
    }

    let mut issues = Vec::new();
    let mut records = Vec::new();
    let mut joined = HashSet::new();
    for row in reader.deserialize::<CsiqRow>() {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                issues.push(format!("{}:{line}: {e}", dmos_csv.display()));
                continue;
            }
        };
        if !row.dmos.is_finite() {
            issues.push(format!("{}: non-finite DMOS for {}", dmos_csv.display(), row.image));
            continue;
        }
        let path = csiq_image_path(root, &row.image, &row.distortion, row.level);
        if !path.is_file() {
            issues.push(format!("missing image file {}", path.display()));
            continue;
        }
        let level = u8::try_from(row.level).unwrap_or(u8::MAX);
        joined.insert(path.clone());
        records.push(SampleRecord {
            image_id: format!("{}.{}.{}", row.image, row.distortion, row.level),
            source_id: row.image,
            kind: row.distortion,
            level,
            dmos: Some(row.dmos),
            grade: None,
            path,
        });
    }

    let dst = root.join("dst_imgs");
    if let Ok(kinds) = fs::read_dir(&dst) {
        let mut orphans = Vec::new();
        for kind_dir in kinds.flatten().filter(|e| e.path().is_dir()) {
            for entry in fs::read_dir(kind_dir.path()).into_iter().flatten().flatten() {
                let p = entry.path();
                if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) && !joined.contains(&p) {
                    orphans.push(p);
                }
            }
        }
        orphans.sort();
        issues.extend(orphans.iter().map(|p| format!("image without a DMOS row: {}", p.display())));
    }

    if records.is_empty() {
        issues.insert(0, format!("no usable records under {}", root.display()));
        return Err(Error::Dataset(issues));
    }
    if records.len() != CSIQ_EXPECTED_IMAGES {
        issues.push(format!(
            "loaded {} images, the complete set has {CSIQ_EXPECTED_IMAGES}",
            records.len()
        ));
    }
    if !issues.is_empty() && !allow_partial {
        return Err(Error::Dataset(issues));
    }
    Ok(CsiqLoad { records, issues })
}

/// Reads a corpus manifest; output paths are relative to its directory.
pub fn load_synth_manifest(path: &Path) -> Result<Vec<SampleRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let entry: ManifestEntry = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        if entry.level as usize >= NUM_GRADES {
            return Err(parse_err(format!("level {} is outside 0..=4", entry.level)));
        }
        if entry.grade != entry.level {
            return Err(parse_err(format!("grade {} disagrees with level {}", entry.grade, entry.level)));
        }
        records.push(SampleRecord {
            image_id: format!("{}.{}.{}", entry.source_id, entry.kind, entry.level),
            source_id: entry.source_id,
            kind: entry.kind,
            level: entry.level,
            dmos: None,
            grade: Some(QualityGrade::new(entry.level as usize)?),
            path: base.join(entry.output_path),
        });
    }
    if records.is_empty() {
        return Err(Error::Dataset(vec![format!("manifest {} has no entries", path.display())]));
    }
    Ok(records)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinningStrategy {
    /// Equal-count bins over the DMOS ranks.
    #[default]
    Quantile,
    /// Equal-width bins over [min, max].
    UniformRange,
}

/// Four cut points separating the five grades.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradeBinning {
    pub strategy: BinningStrategy,
    pub edges: [f64; NUM_GRADES - 1],
}

impl GradeBinning {
    /// Higher DMOS means worse quality, hence a higher grade.
    pub fn grade(&self, dmos: f64) -> QualityGrade {
        let above = match self.strategy {
            BinningStrategy::Quantile => self.edges.iter().filter(|&&e| dmos > e).count(),
            BinningStrategy::UniformRange => self.edges.iter().filter(|&&e| dmos >= e).count(),
        };
        QualityGrade::new(above).expect("at most four edges")
    }

    pub fn apply(&self, records: &mut [SampleRecord]) -> Result<()> {
        for r in records.iter_mut() {
            let d = r.dmos.ok_or_else(|| invalid!("record {} has no DMOS", r.image_id))?;
            r.grade = Some(self.grade(d));
        }
        Ok(())
    }
}

/// Fits bin edges to the records' DMOS values and assigns grades.
///
/// Quantile: the record at rank `r` of `n` goes to `floor(5r/n)`, and every
/// member of a run of equal values takes the grade of the run's first member.
pub fn map_dmos_to_grades(records: &mut [SampleRecord], strategy: BinningStrategy) -> Result<GradeBinning> {
    let values: Vec<f64> = records
        .iter()
        .map(|r| r.dmos.ok_or_else(|| invalid!("record {} has no DMOS", r.image_id)))
        .collect::<Result<_>>()?;
    if values.is_empty() {
        return Err(invalid!("no records to bin"));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(invalid!("DMOS values are constant ({lo}); grades would be meaningless"));
    }
    let edges = match strategy {
        BinningStrategy::UniformRange => {
            let width = (hi - lo) / NUM_GRADES as f64;
            std::array::from_fn(|k| lo + (k + 1) as f64 * width)
        }
        BinningStrategy::Quantile => {
            let mut sorted = values.clone();
            sorted.sort_by(f64::total_cmp);
            let n = sorted.len();
            let mut grades = vec![0usize; n];
            let mut r = 0;
            while r < n {
                let g = r * NUM_GRADES / n;
                let mut end = r;
                while end < n && sorted[end] == sorted[r] {
                    grades[end] = g;
                    end += 1;
                }
                r = end;
            }
            // edge k = largest value graded <= k; empty low bins inherit lo
            let mut edges = [f64::NEG_INFINITY; NUM_GRADES - 1];
            for (k, edge) in edges.iter_mut().enumerate() {
                *edge = sorted
                    .iter()
                    .zip(&grades)
                    .filter(|(_, &g)| g <= k)
                    .map(|(v, _)| *v)
                    .next_back()
                    .unwrap_or(f64::NEG_INFINITY);
            }
            edges
        }
    };
    let binning = GradeBinning { strategy, edges };
    binning.apply(records)?;
    Ok(binning)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Patches are shuffled together regardless of origin.
    PatchRandom,
    /// No source image contributes patches to both sides.
    #[default]
    ImageDisjoint,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitSizes {
    Counts { train: usize, test: usize },
    TestFraction(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub sizes: SplitSizes,
}

#[derive(Clone, Debug)]
pub struct PatchSample<T> {
    /// `[1, 64, 64]`
    pub patch: Tensor<T>,
    pub grade: QualityGrade,
    pub image_id: Arc<str>,
    pub source_id: Arc<str>,
    pub kind: Arc<str>,
    pub location: PatchLocation,
}

#[derive(Clone, Debug, Default)]
pub struct PatchDataset<T> {
    pub samples: Vec<PatchSample<T>>,
}

impl<T: Real> PatchDataset<T> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn grade_counts(&self) -> [usize; NUM_GRADES] {
        let mut c = [0; NUM_GRADES];
        for s in &self.samples {
            c[s.grade.index()] += 1;
        }
        c
    }

    /// Sample indices grouped by image, in image-id order.
    pub fn by_image(&self) -> BTreeMap<Arc<str>, Vec<usize>> {
        let mut map: BTreeMap<Arc<str>, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            map.entry(s.image_id.clone()).or_default().push(i);
        }
        map
    }

    pub fn image_ids(&self) -> Vec<String> {
        self.samples
            .iter()
            .map(|s| s.image_id.to_string())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn cast<U: Real>(&self) -> PatchDataset<U> {
        PatchDataset {
            samples: self
                .samples
                .iter()
                .map(|s| PatchSample {
                    patch: s.patch.cast(),
                    grade: s.grade,
                    image_id: s.image_id.clone(),
                    source_id: s.source_id.clone(),
                    kind: s.kind.clone(),
                    location: s.location,
                })
                .collect(),
        }
    }
}

/// What went where; serialized next to every training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub seed: u64,
    pub mode: SplitMode,
    pub available_patches: usize,
    pub train_patches: usize,
    pub test_patches: usize,
    pub train_per_grade: [usize; NUM_GRADES],
    pub test_per_grade: [usize; NUM_GRADES],
    pub train_images: Vec<String>,
    pub test_images: Vec<String>,
    /// Images with fewer candidate windows than the per-image quota.
    pub shortfall_images: Vec<String>,
}

/// Pooled patches for every record, in record order.
pub fn pool_records<T: Real>(
    records: &[SampleRecord],
    pooling: &PoolingConfig,
) -> Result<(Vec<PatchSample<T>>, Vec<String>)> {
    pooling.validate()?;
    let per_image: Vec<(Vec<PatchSample<T>>, bool)> = records
        .par_iter()
        .map(|r| {
            let grade = r.require_grade()?;
            let image: Tensor<T> = load_luminance(&r.path)?;
            let selection = pool_image(&image, pooling)?;
            let image_id: Arc<str> = r.image_id.as_str().into();
            let source_id: Arc<str> = r.source_id.as_str().into();
            let kind: Arc<str> = r.kind.as_str().into();
            let samples = selection
                .patches
                .into_iter()
                .map(|p| PatchSample {
                    patch: p.patch,
                    grade,
                    image_id: image_id.clone(),
                    source_id: source_id.clone(),
                    kind: kind.clone(),
                    location: p.location,
                })
                .collect();
            Ok((samples, selection.shortfall))
        })
        .collect::<Result<_>>()?;
    let mut shortfall = Vec::new();
    let mut all = Vec::new();
    for (r, (samples, short)) in records.iter().zip(per_image) {
        if short {
            shortfall.push(r.image_id.clone());
        }
        all.extend(samples);
    }
    Ok((all, shortfall))
}

fn split_counts(total: usize, sizes: SplitSizes) -> Result<(usize, usize)> {
    match sizes {
        SplitSizes::Counts { train, test } => {
            if train + test > total {
                return Err(Error::Insufficient {
                    what: "patches",
                    requested: train + test,
                    available: total,
                });
            }
            Ok((train, test))
        }
        SplitSizes::TestFraction(f) => {
            if !(f > 0.0 && f < 1.0) {
                return Err(invalid!("test fraction must lie in (0, 1), got {f}"));
            }
            let test = (f * total as f64).round() as usize;
            Ok((total - test, test))
        }
    }
}

/// Divides already-pooled patches into train and test sets.
pub fn split_patches<T: Real>(
    mut samples: Vec<PatchSample<T>>,
    split: &SplitSpec,
    seed: u64,
) -> Result<(PatchDataset<T>, PatchDataset<T>, SplitReport)> {
    let available = samples.len();
    if available == 0 {
        return Err(Error::Dataset(vec!["no patches to split".into()]));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (train, test) = match split.mode {
        SplitMode::PatchRandom => {
            let (n_train, n_test) = split_counts(available, split.sizes)?;
            samples.shuffle(&mut rng);
            let test: Vec<_> = samples.drain(n_train..n_train + n_test).collect();
            samples.truncate(n_train);
            (samples, test)
        }
        SplitMode::ImageDisjoint => {
            let mut sources: Vec<Arc<str>> = samples
                .iter()
                .map(|s| s.source_id.clone())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            if sources.len() < 2 {
                return Err(Error::Insufficient {
                    what: "source images for an image-disjoint split",
                    requested: 2,
                    available: sources.len(),
                });
            }
            sources.shuffle(&mut rng);
            let mut per_source: BTreeMap<Arc<str>, usize> = BTreeMap::new();
            for s in &samples {
                *per_source.entry(s.source_id.clone()).or_default() += 1;
            }
            let (n_test_sources, train_cap, test_cap) = match split.sizes {
                SplitSizes::TestFraction(f) => {
                    if !(f > 0.0 && f < 1.0) {
                        return Err(invalid!("test fraction must lie in (0, 1), got {f}"));
                    }
                    let k = ((f * sources.len() as f64).round() as usize).clamp(1, sources.len() - 1);
                    (k, usize::MAX, usize::MAX)
                }
                SplitSizes::Counts { train, test } => {
                    let mut k = 0;
                    let mut got = 0;
                    while got < test && k < sources.len() {
                        got += per_source[&sources[k]];
                        k += 1;
                    }
                    let remaining: usize = sources[k..].iter().map(|s| per_source[s]).sum();
                    if got < test || remaining < train {
                        return Err(Error::Insufficient {
                            what: "patches for an image-disjoint split",
                            requested: train + test,
                            available: got.min(test) + remaining,
                        });
                    }
                    (k, train, test)
                }
            };
            let test_sources: HashSet<Arc<str>> = sources[..n_test_sources].iter().cloned().collect();
            let (mut test, mut train): (Vec<_>, Vec<_>) =
                samples.into_iter().partition(|s| test_sources.contains(&s.source_id));
            train.shuffle(&mut rng);
            test.shuffle(&mut rng);
            train.truncate(train_cap);
            test.truncate(test_cap);
            (train, test)
        }
    };
    let train = PatchDataset { samples: train };
    let test = PatchDataset { samples: test };
    let report = SplitReport {
        seed,
        mode: split.mode,
        available_patches: available,
        train_patches: train.len(),
        test_patches: test.len(),
        train_per_grade: train.grade_counts(),
        test_per_grade: test.grade_counts(),
        train_images: train.image_ids(),
        test_images: test.image_ids(),
        shortfall_images: Vec::new(),
    };
    Ok((train, test, report))
}

/// Loads, pools and splits in one step.
pub fn build_patch_dataset<T: Real>(
    records: &[SampleRecord],
    pooling: &PoolingConfig,
    split: &SplitSpec,
    seed: u64,
) -> Result<(PatchDataset<T>, PatchDataset<T>, SplitReport)> {
    let (samples, shortfall) = pool_records(records, pooling)?;
    let (train, test, mut report) = split_patches(samples, split, seed)?;
    report.shortfall_images = shortfall;
    Ok((train, test, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imageio::save_gray_png;
    use crate::scenes::procedural_image;

    fn rec(dmos: f64, i: usize) -> SampleRecord {
        SampleRecord {
            image_id: format!("img{i}"),
            source_id: format!("src{}", i % 3),
            kind: "blur".into(),
            level: 1,
            dmos: Some(dmos),
            grade: None,
            path: PathBuf::new(),
        }
    }

    fn grades(records: &[SampleRecord]) -> Vec<usize> {
        records.iter().map(|r| r.grade.unwrap().index()).collect()
    }

    #[test]
    fn quantile_bins_ten_distinct_values_two_per_grade() {
        let mut rs: Vec<_> = (0..10).map(|i| rec(i as f64 / 10.0, i)).collect();
        let b = map_dmos_to_grades(&mut rs, BinningStrategy::Quantile).unwrap();
        assert_eq!(grades(&rs), vec![0, 0, 1, 1, 2, 2, 3, 3, 4, 4]);
        assert_eq!(b.edges, [0.1, 0.3, 0.5, 0.7]);
    }

    #[test]
    fn quantile_ties_go_to_lower_grade() {
        // ranks 1 and 2 share a value; rank 2 alone would be grade 1
        let vals = [0.0, 0.5, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.2];
        let mut rs: Vec<_> = vals.iter().enumerate().map(|(i, &v)| rec(v, i)).collect();
        map_dmos_to_grades(&mut rs, BinningStrategy::Quantile).unwrap();
        assert_eq!(grades(&rs), vec![0, 0, 0, 1, 2, 2, 3, 3, 4, 4]);
    }

    #[test]
    fn uniform_bins_split_the_range_evenly() {
        let vals = [0.0, 0.19, 0.2, 0.5, 0.99, 1.0];
        let mut rs: Vec<_> = vals.iter().enumerate().map(|(i, &v)| rec(v, i)).collect();
        let b = map_dmos_to_grades(&mut rs, BinningStrategy::UniformRange).unwrap();
        assert_eq!(grades(&rs), vec![0, 0, 1, 2, 4, 4]);
        assert_eq!(b.grade(0.5).index(), 2);
    }

    #[test]
    fn constant_or_missing_dmos_is_rejected() {
        let mut rs: Vec<_> = (0..4).map(|i| rec(0.3, i)).collect();
        assert!(map_dmos_to_grades(&mut rs, BinningStrategy::Quantile).is_err());
        let mut rs = vec![rec(0.1, 0), rec(0.2, 1)];
        rs[1].dmos = None;
        assert!(map_dmos_to_grades(&mut rs, BinningStrategy::UniformRange).is_err());
    }

    fn write_csiq(root: &Path, rows: &[(&str, &str, u32)], extra_file: bool) -> PathBuf {
        let mut csv = String::from("image,distortion,level,dmos\n");
        for (i, (img, d, l)) in rows.iter().enumerate() {
            let p = csiq_image_path(root, img, d, *l);
            fs::create_dir_all(p.parent().unwrap()).unwrap();
            save_gray_png(&p, &procedural_image::<f32>(64, 64, i as u64)).unwrap();
            csv.push_str(&format!("{img},{d},{l},{}\n", 0.1 * i as f64));
        }
        if extra_file {
            let p = csiq_image_path(root, "orphan", "blur", 1);
            save_gray_png(&p, &procedural_image::<f32>(64, 64, 99)).unwrap();
        }
        let csv_path = root.join("dmos.csv");
        fs::write(&csv_path, csv).unwrap();
        csv_path
    }

    #[test]
    fn csiq_partial_load_reports_count_and_orphans() {
        let dir = tempfile::tempdir().unwrap();
        let csv = write_csiq(dir.path(), &[("a", "blur", 1), ("a", "jpeg", 2), ("b", "blur", 1)], true);
        let err = load_csiq(dir.path(), &csv, false).unwrap_err().to_string();
        assert!(err.contains("866"), "{err}");
        assert!(err.contains("orphan"), "{err}");
        let ok = load_csiq(dir.path(), &csv, true).unwrap();
        assert_eq!(ok.records.len(), 3);
        assert_eq!(ok.records[1].source_id, "a");
        assert_eq!(ok.records[1].image_id, "a.jpeg.2");
    }

    #[test]
    fn csiq_missing_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let csv = write_csiq(dir.path(), &[("a", "blur", 1)], false);
        let mut text = fs::read_to_string(&csv).unwrap();
        text.push_str("ghost,awgn,3,0.4\n");
        fs::write(&csv, text).unwrap();
        let err = load_csiq(dir.path(), &csv, false).unwrap_err().to_string();
        assert!(err.contains("ghost.awgn.3.png"), "{err}");
    }

    #[test]
    fn csiq_empty_root_is_a_hard_error() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("dmos.csv");
        fs::write(&csv, "image,distortion,level,dmos\n").unwrap();
        assert!(matches!(load_csiq(dir.path(), &csv, true), Err(Error::Dataset(_))));
    }

    #[test]
    fn manifest_level_out_of_range_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let good = r#"{"source_id":"s","kind":"blur","level":1,"params":{},"seed":0,"output_path":"x.png","grade":1}"#;
        let bad = r#"{"source_id":"s","kind":"blur","level":5,"params":{},"seed":0,"output_path":"y.png","grade":5}"#;
        fs::write(&p, format!("{good}\n{bad}\n")).unwrap();
        let err = load_synth_manifest(&p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    fn fake_samples(sources: usize, per_source: usize) -> Vec<PatchSample<f32>> {
        (0..sources * per_source)
            .map(|i| {
                let s = i / per_source;
                PatchSample {
                    patch: Tensor::zeros([1, 64, 64]),
                    grade: QualityGrade::new(i % NUM_GRADES).unwrap(),
                    image_id: format!("src{s}.k.{}", i % 2).into(),
                    source_id: format!("src{s}").into(),
                    kind: "k".into(),
                    location: PatchLocation { row: i, col: 0 },
                }
            })
            .collect()
    }

    #[test]
    fn image_disjoint_split_never_shares_sources() {
        let split = SplitSpec {
            mode: SplitMode::ImageDisjoint,
            sizes: SplitSizes::TestFraction(0.25),
        };
        let (train, test, report) = split_patches(fake_samples(8, 10), &split, 3).unwrap();
        let a: HashSet<_> = train.samples.iter().map(|s| s.source_id.clone()).collect();
        let b: HashSet<_> = test.samples.iter().map(|s| s.source_id.clone()).collect();
        assert!(a.is_disjoint(&b));
        assert_eq!((a.len(), b.len()), (6, 2));
        assert_eq!(report.train_patches + report.test_patches, 80);
    }

    #[test]
    fn oversized_counts_are_rejected() {
        for mode in [SplitMode::PatchRandom, SplitMode::ImageDisjoint] {
            let split = SplitSpec {
                mode,
                sizes: SplitSizes::Counts { train: 70, test: 20 },
            };
            let err = split_patches(fake_samples(8, 10), &split, 1).unwrap_err();
            assert!(matches!(err, Error::Insufficient { .. }), "{err}");
        }
    }

    #[test]
    fn patch_random_split_is_seeded() {
        let split = SplitSpec {
            mode: SplitMode::PatchRandom,
            sizes: SplitSizes::Counts { train: 30, test: 10 },
        };
        let locs = |seed| {
            let (tr, te, _) = split_patches(fake_samples(4, 10), &split, seed).unwrap();
            assert_eq!((tr.len(), te.len()), (30, 10));
            tr.samples.iter().map(|s| s.location.row).collect::<Vec<_>>()
        };
        assert_eq!(locs(5), locs(5));
        assert_ne!(locs(5), locs(6));
    }
}
