//! Synthetic training corpora: every clean image run through each distortion
//! ladder, written as PNGs plus a JSON-lines manifest.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distortions::{apply, derive_seed, DistortionKind, LadderConfig};
use crate::error::{Error, Result};
use crate::imageio::save_gray_png;
use crate::nn::Tensor;

/// One line of a corpus manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub source_id: String,
    pub kind: String,
    pub level: u8,
    pub params: serde_json::Value,
    pub seed: u64,
    pub output_path: String,
    pub grade: u8,
}

/// Applies every ladder level of every requested kind to each source image
/// and writes `<out_dir>/<kind>/<source>.<kind>.<level>.png`. Entries come
/// back ordered by (source, kind, level) whatever the thread count.
pub fn synthesize_corpus(
    sources: &[(String, Tensor<f32>)],
    kinds: &[DistortionKind],
    ladders: &LadderConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<ManifestEntry>> {
    for kind in kinds {
        let dir = out_dir.join(kind.as_str());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let mut jobs = Vec::new();
    for (index, (source_id, _)) in sources.iter().enumerate() {
        for &kind in kinds {
            for spec in ladders.ladder(kind, 0)? {
                jobs.push((index, source_id, spec));
            }
        }
    }
    jobs.into_par_iter()
        .map(|(index, source_id, mut spec)| {
            spec.seed = derive_seed(seed, index, spec.kind, spec.level);
            let out = apply(&sources[index].1, &spec)?;
            let rel = PathBuf::from(spec.kind.as_str()).join(format!("{source_id}.{}.{}.png", spec.kind, spec.level));
            save_gray_png(out_dir.join(&rel), &out)?;
            Ok(ManifestEntry {
                source_id: source_id.clone(),
                kind: spec.kind.to_string(),
                level: spec.level,
                params: spec.params_json(),
                seed: spec.seed,
                output_path: rel.to_string_lossy().into_owned(),
                grade: spec.level,
            })
        })
        .collect()
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for e in entries {
        let line = serde_json::to_string(e).expect("manifest entries serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
