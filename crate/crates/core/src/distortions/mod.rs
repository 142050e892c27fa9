//! Synthetic degradations applied at five graded levels.

mod blur;
mod jpeg;
mod noise;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grade::{QualityGrade, NUM_GRADES};
use crate::nn::Tensor;
use crate::scalar::Real;

pub use blur::{gaussian_blur, gaussian_kernel};
pub use jpeg::{dct8x8, idct8x8, jpeg_proxy, LUMA_QUANT};
pub use noise::{pink_noise, pink_noise_field};
pub(crate) use noise::{bin_frequency, fft2};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistortionKind {
    Blur,
    PinkNoise,
    Contrast,
    JpegProxy,
}

impl DistortionKind {
    pub const ALL: [DistortionKind; 4] = [
        DistortionKind::Blur,
        DistortionKind::PinkNoise,
        DistortionKind::Contrast,
        DistortionKind::JpegProxy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DistortionKind::Blur => "blur",
            DistortionKind::PinkNoise => "pink_noise",
            DistortionKind::Contrast => "contrast",
            DistortionKind::JpegProxy => "jpeg_proxy",
        }
    }

    /// Name of the single parameter each kind takes.
    pub fn param_name(self) -> &'static str {
        match self {
            DistortionKind::Blur => "sigma",
            DistortionKind::PinkNoise => "std",
            DistortionKind::Contrast => "factor",
            DistortionKind::JpegProxy => "quant_scale",
        }
    }

    /// Whether a larger parameter value means a harsher degradation.
    fn harsher_when_larger(self) -> bool {
        !matches!(self, DistortionKind::Contrast)
    }
}

impl fmt::Display for DistortionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DistortionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        DistortionKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| invalid!("unknown distortion kind {s:?} (expected blur, pink_noise, contrast or jpeg_proxy)"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistortionSpec {
    pub kind: DistortionKind,
    /// 0 (mildest) ..= 4 (harshest); doubles as the quality grade.
    pub level: u8,
    /// sigma / noise std / contrast factor / quantization scale.
    pub param: f64,
    /// Only consumed by the noise generator.
    pub seed: u64,
}

impl DistortionSpec {
    pub fn grade(&self) -> QualityGrade {
        QualityGrade::new(self.level as usize).expect("ladder levels are 0..=4")
    }

    pub fn params_json(&self) -> serde_json::Value {
        serde_json::json!({ self.kind.param_name(): self.param })
    }
}

/// Parameter values for each level of every ladder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LadderConfig {
    pub blur: [f64; NUM_GRADES],
    pub pink_noise: [f64; NUM_GRADES],
    pub contrast: [f64; NUM_GRADES],
    pub jpeg_proxy: [f64; NUM_GRADES],
}

impl Default for LadderConfig {
    fn default() -> Self {
        LadderConfig {
            blur: [0.5, 1.0, 2.0, 4.0, 8.0],
            pink_noise: [0.01, 0.03, 0.06, 0.12, 0.24],
            contrast: [0.9, 0.7, 0.5, 0.3, 0.15],
            jpeg_proxy: [1.0, 2.0, 4.0, 8.0, 16.0],
        }
    }
}

impl LadderConfig {
    pub fn values(&self, kind: DistortionKind) -> [f64; NUM_GRADES] {
        match kind {
            DistortionKind::Blur => self.blur,
            DistortionKind::PinkNoise => self.pink_noise,
            DistortionKind::Contrast => self.contrast,
            DistortionKind::JpegProxy => self.jpeg_proxy,
        }
    }

    /// Five specs for `kind`, level `i` mapping to grade `c_i`. Rejects
    /// ladders that are not strictly monotone in harshness.
    pub fn ladder(&self, kind: DistortionKind, seed: u64) -> Result<[DistortionSpec; NUM_GRADES]> {
        let values = self.values(kind);
        let monotone = values.windows(2).all(|p| {
            if kind.harsher_when_larger() {
                p[0] < p[1]
            } else {
                p[0] > p[1]
            }
        });
        if !monotone {
            return Err(invalid!("{kind} ladder {values:?} is not strictly monotone in harshness"));
        }
        Ok(std::array::from_fn(|level| DistortionSpec {
            kind,
            level: level as u8,
            param: values[level],
            seed,
        }))
    }
}

/// Default five-level ladder for a kind given by name.
pub fn build_ladder(kind: &str) -> Result<[DistortionSpec; NUM_GRADES]> {
    LadderConfig::default().ladder(kind.parse()?, 0)
}

/// `mean + factor * (x - mean)`, clamped to [0, 1]. `factor == 1` returns the
/// input unchanged.
pub fn contrast_decrement<T: Real>(image: &Tensor<T>, factor: f64) -> Result<Tensor<T>> {
    if !(factor > 0.0 && factor <= 1.0) {
        return Err(invalid!("contrast factor must lie in (0, 1], got {factor}"));
    }
    if factor == 1.0 {
        return Ok(image.clone());
    }
    let n = image.len() as f64;
    let mean = image.data().iter().map(|v| v.to_f64_lossy()).sum::<f64>() / n;
    Ok(image.map(|v| T::from_f64_lossy((mean + factor * (v.to_f64_lossy() - mean)).clamp(0.0, 1.0))))
}

pub fn apply<T: Real>(image: &Tensor<T>, spec: &DistortionSpec) -> Result<Tensor<T>> {
    match spec.kind {
        DistortionKind::Blur => gaussian_blur(image, spec.param),
        DistortionKind::PinkNoise => pink_noise(image, spec.param, spec.seed),
        DistortionKind::Contrast => contrast_decrement(image, spec.param),
        DistortionKind::JpegProxy => jpeg_proxy(image, spec.param),
    }
}

/// Noise seed for one (source image, kind, level) triple, independent of the
/// order in which pairs are processed.
pub fn derive_seed(base: u64, source_index: usize, kind: DistortionKind, level: u8) -> u64 {
    let mut z = base
        ^ (source_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ ((kind as u64) << 40)
        ^ ((level as u64) << 48);
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mean absolute difference between two images of equal shape.
pub fn mean_abs_diff<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.to_f64_lossy() - y.to_f64_lossy()).abs())
        .sum::<f64>()
        / a.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenes::procedural_image;

    #[test]
    fn default_ladders() {
        for kind in DistortionKind::ALL {
            let ladder = build_ladder(kind.as_str()).unwrap();
            assert_eq!(ladder.len(), 5);
            for (i, s) in ladder.iter().enumerate() {
                assert_eq!(s.level as usize, i);
                assert_eq!(s.grade().index(), i);
            }
        }
        let blur = build_ladder("blur").unwrap();
        assert!(blur.windows(2).all(|p| p[0].param < p[1].param));
        assert!(build_ladder("jpeg2000").is_err());
    }

    #[test]
    fn non_monotone_ladder_rejected() {
        let cfg = LadderConfig {
            contrast: [0.9, 0.95, 0.5, 0.3, 0.1],
            ..Default::default()
        };
        assert!(cfg.ladder(DistortionKind::Contrast, 0).is_err());
    }

    #[test]
    fn contrast_arithmetic() {
        let img = Tensor::<f64>::new([1, 2], vec![0.0, 1.0]).unwrap();
        assert_eq!(contrast_decrement(&img, 0.5).unwrap().data(), &[0.25, 0.75]);
        assert_eq!(contrast_decrement(&img, 1.0).unwrap(), img);
        let flat = contrast_decrement(&img, 0.01).unwrap();
        assert!(flat.data().iter().all(|v| (v - 0.5).abs() <= 0.005 + 1e-12));
        assert!(contrast_decrement(&img, 0.0).is_err());
        assert!(contrast_decrement(&img, 1.5).is_err());
    }

    #[test]
    fn identity_settings_are_bit_exact() {
        let img = procedural_image::<f32>(96, 96, 3);
        assert_eq!(gaussian_blur(&img, 0.0).unwrap(), img);
        assert_eq!(pink_noise(&img, 0.0, 5).unwrap(), img);
        assert_eq!(contrast_decrement(&img, 1.0).unwrap(), img);
    }

    #[test]
    fn jpeg_proxy_blocking_grows_with_scale() {
        let img = procedural_image::<f64>(96, 96, 7);
        let mild = mean_abs_diff(&img, &jpeg_proxy(&img, 1.0).unwrap());
        let harsh = mean_abs_diff(&img, &jpeg_proxy(&img, 10.0).unwrap());
        assert!(harsh > mild, "{harsh} <= {mild}");
    }

    #[test]
    fn every_ladder_degrades_monotonically() {
        let corpus: Vec<Tensor<f64>> = (0..3).map(|s| procedural_image(96, 96, 100 + s)).collect();
        let cfg = LadderConfig::default();
        for kind in DistortionKind::ALL {
            for (i, img) in corpus.iter().enumerate() {
                let errs: Vec<f64> = cfg
                    .ladder(kind, derive_seed(1, i, kind, 0))
                    .unwrap()
                    .iter()
                    .map(|spec| {
                        let out = apply(img, spec).unwrap();
                        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
                        mean_abs_diff(img, &out)
                    })
                    .collect();
                assert!(errs.windows(2).all(|p| p[0] < p[1]), "{kind}: {errs:?}");
            }
        }
    }

    #[test]
    fn derived_seeds_differ_per_pair() {
        let a = derive_seed(7, 0, DistortionKind::PinkNoise, 0);
        assert_eq!(a, derive_seed(7, 0, DistortionKind::PinkNoise, 0));
        assert_ne!(a, derive_seed(7, 1, DistortionKind::PinkNoise, 0));
        assert_ne!(a, derive_seed(7, 0, DistortionKind::PinkNoise, 1));
        assert_ne!(a, derive_seed(8, 0, DistortionKind::PinkNoise, 0));
    }
}
