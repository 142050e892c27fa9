use std::fs;
use std::path::{Path, PathBuf};

use deepquality::corpus::{synthesize_corpus, write_manifest, ManifestEntry};
use deepquality::imageio::{load_luminance, save_gray_png};
use deepquality::scenes::procedural_image;
use deepquality::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::failure::{CliResult, Failure};

pub struct SynthOutput {
    pub manifest: PathBuf,
    pub entries: Vec<ManifestEntry>,
    /// Inputs that could not be read, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

fn is_image(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg" | "bmp" | "tif" | "tiff"))
}

fn read_inputs(dir: &Path) -> CliResult<(Vec<(String, Tensor<f32>)>, Vec<(PathBuf, String)>)> {
    let entries = fs::read_dir(dir).map_err(|e| Failure::input(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries.flatten().map(|e| e.path()).filter(|p| p.is_file() && is_image(p)).collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Failure::input(format!("no input images in {}", dir.display())));
    }
    let mut sources = Vec::new();
    let mut skipped = Vec::new();
    for p in paths {
        match load_luminance::<f32>(&p) {
            Ok(img) => {
                let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                sources.push((id, img));
            }
            Err(e) => {
                eprintln!("skipping {}: {e}", p.display());
                skipped.push((p, e.to_string()));
            }
        }
    }
    if sources.is_empty() {
        return Err(Failure::input(format!("none of the input images in {} could be read", dir.display())));
    }
    Ok((sources, skipped))
}

/// Writes procedural clean images to `<out>/clean` and returns that directory.
fn write_procedural(config: &RunConfig, out: &Path) -> CliResult<PathBuf> {
    let dir = out.join("clean");
    fs::create_dir_all(&dir).map_err(|e| Failure::write(&dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let size = config.synth.procedural_size;
    if size < 64 {
        return Err(Failure::input(format!("procedural images must be at least 64 pixels, got {size}")));
    }
    for i in 0..config.synth.procedural_images {
        let img = procedural_image::<f32>(size, size, rng.random());
        let p = dir.join(format!("scene{i:03}.png"));
        save_gray_png(&p, &img)?;
    }
    Ok(dir)
}

/// Applies every configured ladder to every clean image.
pub fn run(config: &RunConfig) -> CliResult<SynthOutput> {
    let out = &config.output_dir;
    config.write_effective(out)?;
    let kinds = config.distortions.synth_kinds()?;
    let input = if config.synth.procedural_images > 0 {
        write_procedural(config, out)?
    } else {
        config
            .synth
            .input_dir
            .clone()
            .ok_or_else(|| Failure::input("no input images: pass --input or --procedural"))?
    };
    if !input.is_dir() {
        return Err(Failure::input(format!("input directory not found: {}", input.display())));
    }
    let (sources, skipped) = read_inputs(&input)?;
    let entries = synthesize_corpus(&sources, &kinds, &config.distortions.ladders, config.seed, out)?;
    let manifest = out.join("manifest.jsonl");
    write_manifest(&manifest, &entries)?;
    eprintln!(
        "synthesized {} images from {} sources into {}",
        entries.len(),
        sources.len(),
        out.display()
    );
    Ok(SynthOutput {
        manifest,
        entries,
        skipped,
    })
}
