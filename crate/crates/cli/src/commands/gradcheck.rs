use deepquality::gradcheck::{gradcheck, GradcheckOptions, GradcheckReport};
use deepquality::{DeepQualityNet, NetWidths, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::failure::CliResult;

/// Widths of the self-contained network the check runs on.
pub const CHECK_WIDTHS: NetWidths = NetWidths {
    conv: [2, 2, 2],
    hidden: 8,
};

/// Two random patches, distinct labels, random nonzero biases, and a
/// nonzero L2 term so that every parameter group has signal.
pub fn run(seed: u64, max_per_group: Option<usize>) -> CliResult<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = DeepQualityNet::<f64>::init(seed, CHECK_WIDTHS)?;
    for g in [1, 3, 5, 7, 9] {
        net.params_mut()[g]
            .data_mut()
            .iter_mut()
            .for_each(|b| *b = rng.random_range(-0.1..0.1));
    }
    let patches: Vec<Tensor<f64>> = (0..2)
        .map(|_| Tensor::from_fn([1, 64, 64], |_| rng.random::<f64>()))
        .collect();
    let labels = [rng.random_range(0..5), rng.random_range(0..5)];
    let options = GradcheckOptions {
        max_per_group,
        seed,
        ..Default::default()
    };
    Ok(gradcheck(&net, &patches, &labels, 1e-2, &options)?)
}
