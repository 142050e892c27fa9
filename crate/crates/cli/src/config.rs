//! Run configuration: TOML sections over built-in defaults, with command-line
//! flags applied last.

use std::fs;
use std::path::{Path, PathBuf};

use deepquality::aggregator::AggregatorConfig;
use deepquality::dataset::{BinningStrategy, SplitMode, SplitSizes, SplitSpec};
use deepquality::distortions::{DistortionKind, LadderConfig};
use deepquality::pooling::PoolingConfig;
use deepquality::training::TrainConfig;
use deepquality::NetWidths;
use serde::{Deserialize, Serialize};

use crate::failure::{CliResult, Failure};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; also drives splitting, initialization and shuffling.
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    pub network: NetworkSection,
    pub pooling: PoolingConfig,
    pub distortions: DistortionSection,
    pub synth: SynthSection,
    pub dataset: DatasetSection,
    pub training: TrainConfig,
    pub aggregator: AggregatorSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: PathBuf::from("run"),
            workers: None,
            network: NetworkSection::default(),
            pooling: PoolingConfig::default(),
            distortions: DistortionSection::default(),
            synth: SynthSection::default(),
            dataset: DatasetSection::default(),
            training: TrainConfig::default(),
            aggregator: AggregatorSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub conv_channels: [usize; 3],
    pub hidden: usize,
}

impl Default for NetworkSection {
    fn default() -> Self {
        let w = NetWidths::default();
        NetworkSection {
            conv_channels: w.conv,
            hidden: w.hidden,
        }
    }
}

impl NetworkSection {
    pub fn widths(&self) -> NetWidths {
        NetWidths {
            conv: self.conv_channels,
            hidden: self.hidden,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistortionSection {
    /// Kinds to synthesize, and the kinds a dataset is filtered to.
    pub kinds: Vec<String>,
    pub ladders: LadderConfig,
}

impl Default for DistortionSection {
    fn default() -> Self {
        DistortionSection {
            kinds: DistortionKind::ALL.iter().map(|k| k.to_string()).collect(),
            ladders: LadderConfig::default(),
        }
    }
}

impl DistortionSection {
    pub fn synth_kinds(&self) -> CliResult<Vec<DistortionKind>> {
        if self.kinds.is_empty() {
            return Err(Failure::input("distortions.kinds is empty"));
        }
        self.kinds
            .iter()
            .map(|k| k.parse().map_err(|e: deepquality::Error| Failure::input(e.to_string())))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_dir: Option<PathBuf>,
    /// Generate this many procedural clean images instead of reading `input_dir`.
    pub procedural_images: usize,
    pub procedural_size: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            input_dir: None,
            procedural_images: 0,
            procedural_size: 192,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csiq_root: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dmos_csv: Option<PathBuf>,
    pub allow_partial: bool,
    pub binning: BinningStrategy,
    pub split_mode: SplitMode,
    /// Fixed patch counts; when both are set they replace `test_fraction`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_patches: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_patches: Option<usize>,
    pub test_fraction: f64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            manifest: None,
            csiq_root: None,
            dmos_csv: None,
            allow_partial: false,
            binning: BinningStrategy::Quantile,
            split_mode: SplitMode::ImageDisjoint,
            train_patches: None,
            test_patches: None,
            test_fraction: 0.2,
        }
    }
}

impl DatasetSection {
    pub fn split_spec(&self) -> CliResult<SplitSpec> {
        let sizes = match (self.train_patches, self.test_patches) {
            (Some(train), Some(test)) => SplitSizes::Counts { train, test },
            (None, None) => SplitSizes::TestFraction(self.test_fraction),
            _ => {
                return Err(Failure::input(
                    "dataset.train_patches and dataset.test_patches must be set together",
                ))
            }
        };
        Ok(SplitSpec {
            mode: self.split_mode,
            sizes,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregatorSection {
    /// Skip fitting; images are graded by the argmax of mean patch scores.
    pub patch_only: bool,
    pub feature_dim: usize,
    pub l2_lambda: f64,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
}

impl Default for AggregatorSection {
    fn default() -> Self {
        let a = AggregatorConfig::default();
        AggregatorSection {
            patch_only: false,
            feature_dim: a.feature_dim,
            l2_lambda: a.l2_lambda,
            max_iterations: a.max_iterations,
            gradient_tolerance: a.gradient_tolerance,
        }
    }
}

impl AggregatorSection {
    pub fn config(&self) -> AggregatorConfig {
        AggregatorConfig {
            feature_dim: self.feature_dim,
            l2_lambda: self.l2_lambda,
            max_iterations: self.max_iterations,
            gradient_tolerance: self.gradient_tolerance,
        }
    }
}

impl RunConfig {
    /// Defaults, overlaid with `path` when given.
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
        let mut config: RunConfig =
            toml::from_str(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
        config.set_seed(config.seed);
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    /// Creates the output directory and records this configuration in it.
    pub fn write_effective(&self, dir: &Path) -> CliResult<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Failure::write(dir, e))?;
        let path = dir.join("config.toml");
        fs::write(&path, self.to_toml()).map_err(|e| Failure::write(&path, e))?;
        Ok(path)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.network.widths().validate()?;
        self.pooling.validate()?;
        self.training.validate()?;
        Ok(())
    }

    /// Applies the top-level seed everywhere it is consumed; `training.seed`
    /// always mirrors it.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.training.seed = seed;
    }
}
