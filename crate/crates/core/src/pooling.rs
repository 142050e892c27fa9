//! Local patch pooling: enumerate overlapping 64x64 windows and keep the
//! lowest-variance ones.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::network::PATCH_SIZE;
use crate::nn::Tensor;
use crate::scalar::Real;

/// Top-left corner of a patch, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PatchLocation {
    pub row: usize,
    pub col: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceOrder {
    /// Keep the flattest patches.
    #[default]
    Lowest,
    /// Keep the busiest patches instead.
    Highest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolingConfig {
    pub stride: usize,
    pub patches_per_image: usize,
    pub order: VarianceOrder,
}

impl Default for PoolingConfig {
    fn default() -> Self {
        PoolingConfig {
            stride: 32,
            patches_per_image: 70,
            order: VarianceOrder::Lowest,
        }
    }
}

impl PoolingConfig {
    pub const WINDOW: usize = PATCH_SIZE;

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.stride > Self::WINDOW {
            return Err(invalid!("pooling stride must be in 1..={}, got {}", Self::WINDOW, self.stride));
        }
        if self.patches_per_image == 0 {
            return Err(invalid!("patches_per_image must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SelectedPatch<T> {
    pub location: PatchLocation,
    /// `[1, 64, 64]`
    pub patch: Tensor<T>,
    pub variance: f64,
}

#[derive(Clone, Debug)]
pub struct Selection<T> {
    pub patches: Vec<SelectedPatch<T>>,
    /// Set when fewer than the requested number of candidates existed.
    pub shortfall: bool,
}

/// Window offsets along one axis: a regular grid with a final window flush
/// against the far border.
pub fn window_offsets(len: usize, window: usize, stride: usize) -> Vec<usize> {
    assert!(len >= window && stride > 0);
    let last = len - window;
    let mut offsets: Vec<usize> = (0..=last).step_by(stride).collect();
    if offsets.last() != Some(&last) {
        offsets.push(last);
    }
    offsets
}

/// Number of windows [`extract_patches`] produces for an image.
pub fn patch_count(height: usize, width: usize, stride: usize) -> usize {
    let w = PoolingConfig::WINDOW;
    ((height - w).div_ceil(stride) + 1) * ((width - w).div_ceil(stride) + 1)
}

/// All sliding-window patches of a `[H, W]` image in row-major order.
pub fn extract_patches<T: Real>(image: &Tensor<T>, config: &PoolingConfig) -> Result<Vec<(PatchLocation, Tensor<T>)>> {
    config.validate()?;
    let (h, w) = image.hw()?;
    let win = PoolingConfig::WINDOW;
    if h < win || w < win {
        return Err(invalid!("image is {h}x{w} (HxW) but patches need at least {win}x{win}"));
    }
    let rows = window_offsets(h, win, config.stride);
    let cols = window_offsets(w, win, config.stride);
    let src = image.data();
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for &row in &rows {
        for &col in &cols {
            let mut data = Vec::with_capacity(win * win);
            for y in row..row + win {
                data.extend_from_slice(&src[y * w + col..y * w + col + win]);
            }
            out.push((PatchLocation { row, col }, Tensor::new([1, win, win], data)?));
        }
    }
    Ok(out)
}

/// Population variance (divide by N), accumulated with Welford's update in f64.
pub fn patch_variance<T: Real>(patch: &Tensor<T>) -> f64 {
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &v) in patch.data().iter().enumerate() {
        let x = v.to_f64_lossy();
        let delta = x - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (x - mean);
    }
    m2 / patch.len() as f64
}

fn by_variance_then_location(order: VarianceOrder) -> impl Fn(&(f64, PatchLocation), &(f64, PatchLocation)) -> Ordering {
    move |a, b| {
        let primary = match order {
            VarianceOrder::Lowest => a.0.total_cmp(&b.0),
            VarianceOrder::Highest => b.0.total_cmp(&a.0),
        };
        primary.then_with(|| a.1.cmp(&b.1))
    }
}

/// The `l` patches with the smallest variance, ascending by
/// (variance, row, col). Returns everything, flagged, when fewer exist.
pub fn select_low_variance<T: Real>(
    patches: Vec<(PatchLocation, Tensor<T>)>,
    l: usize,
    order: VarianceOrder,
) -> Result<Selection<T>> {
    if patches.is_empty() {
        return Err(invalid!("cannot select from an empty patch list"));
    }
    if l == 0 {
        return Err(invalid!("must select at least one patch"));
    }
    let mut keyed: Vec<(f64, PatchLocation, Tensor<T>)> = patches
        .into_iter()
        .map(|(loc, p)| (patch_variance(&p), loc, p))
        .collect();
    let cmp = by_variance_then_location(order);
    keyed.sort_by(|a, b| cmp(&(a.0, a.1), &(b.0, b.1)));
    let shortfall = keyed.len() < l;
    keyed.truncate(l);
    Ok(Selection {
        patches: keyed
            .into_iter()
            .map(|(variance, location, patch)| SelectedPatch {
                location,
                patch,
                variance,
            })
            .collect(),
        shortfall,
    })
}

/// Extraction followed by selection with the configured count and order.
pub fn pool_image<T: Real>(image: &Tensor<T>, config: &PoolingConfig) -> Result<Selection<T>> {
    let patches = extract_patches(image, config)?;
    select_low_variance(patches, config.patches_per_image, config.order)
}
