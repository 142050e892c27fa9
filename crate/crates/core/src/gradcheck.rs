//! Central finite-difference verification of the analytic gradients of the
//! training objective.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::network::{DeepQualityNet, Gradients, PARAM_NAMES};
use crate::nn::Tensor;
use crate::training::{batch_objective, total_loss};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Differences below this are treated as agreement.
    pub abs_floor: f64,
    /// Check at most this many randomly chosen entries per group.
    pub max_per_group: Option<usize>,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            step: 1e-5,
            tolerance: 1e-4,
            abs_floor: 1e-8,
            max_per_group: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub name: String,
    pub checked: usize,
    /// Largest error after the absolute floor is applied; compared to the tolerance.
    pub max_rel_error: f64,
    /// Largest raw `|analytic - numeric|`.
    pub max_abs_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub groups: Vec<GroupReport>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.passed)
    }

    /// Largest relative error; ties (e.g. all under the floor) go to the
    /// largest absolute difference.
    pub fn worst(&self) -> &GroupReport {
        self.groups
            .iter()
            .max_by(|a, b| {
                a.max_rel_error
                    .total_cmp(&b.max_rel_error)
                    .then(a.max_abs_error.total_cmp(&b.max_abs_error))
            })
            .expect("ten groups")
    }
}

/// `|a - n| / max(|a|, |n|)`, or 0 when the difference is under `floor`.
/// Non-finite inputs yield infinity.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    if !analytic.is_finite() || !numeric.is_finite() {
        return f64::INFINITY;
    }
    let diff = (analytic - numeric).abs();
    if diff <= floor {
        0.0
    } else {
        diff / analytic.abs().max(numeric.abs())
    }
}

pub fn gradcheck(
    net: &DeepQualityNet<f64>,
    patches: &[Tensor<f64>],
    labels: &[usize],
    l2_lambda: f64,
    options: &GradcheckOptions,
) -> Result<GradcheckReport> {
    gradcheck_with(net, patches, labels, l2_lambda, options, |_| {})
}

/// As [`gradcheck`], with `tamper` applied to the analytic gradients before
/// comparison.
pub fn gradcheck_with(
    net: &DeepQualityNet<f64>,
    patches: &[Tensor<f64>],
    labels: &[usize],
    l2_lambda: f64,
    options: &GradcheckOptions,
    tamper: impl FnOnce(&mut Gradients<f64>),
) -> Result<GradcheckReport> {
    let refs: Vec<&Tensor<f64>> = patches.iter().collect();
    let mut analytic = total_loss(net, &refs, labels, l2_lambda)?.grads;
    tamper(&mut analytic);
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut probe = net.clone();
    let mut groups = Vec::with_capacity(PARAM_NAMES.len());
    for (g, name) in PARAM_NAMES.iter().enumerate() {
        let len = net.params()[g].len();
        let indices: Vec<usize> = match options.max_per_group {
            Some(k) if k < len => {
                let mut v = sample(&mut rng, len, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..len).collect(),
        };
        let mut report = GroupReport {
            name: name.to_string(),
            checked: indices.len(),
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            passed: true,
        };
        for i in indices {
            let original = probe.params()[g].data()[i];
            probe.params_mut()[g].data_mut()[i] = original + options.step;
            let up = batch_objective(&probe, &refs, labels, l2_lambda)?;
            probe.params_mut()[g].data_mut()[i] = original - options.step;
            let down = batch_objective(&probe, &refs, labels, l2_lambda)?;
            probe.params_mut()[g].data_mut()[i] = original;
            let numeric = (up - down) / (2.0 * options.step);
            let a = analytic.params()[g].data()[i];
            let err = relative_error(a, numeric, options.abs_floor);
            let diff = (a - numeric).abs();
            if !(diff <= report.max_abs_error) {
                report.max_abs_error = diff;
            }
            if err > report.max_rel_error || (err.is_nan() && !report.max_rel_error.is_nan()) {
                report.max_rel_error = err;
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
        report.passed = report.max_rel_error <= options.tolerance;
        groups.push(report);
    }
    Ok(GradcheckReport {
        tolerance: options.tolerance,
        groups,
    })
}
