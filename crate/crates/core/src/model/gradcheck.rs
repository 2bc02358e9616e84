use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LossWeights, ModelConfig, ModelError, MultiTaskModel, Targets};
use crate::features::FeatureType;
use crate::nn::{grad_check, GradCheckReport};

/// Central-difference check of the summed three-task loss of a freshly
/// initialized model on a random batch, over `n_coords` sampled parameters.
///
/// The loss is only piecewise smooth. A coordinate whose ±h perturbation
/// moves any ReLU input across zero or changes a pooling winner has no
/// meaningful central difference; it is skipped (counted in `skipped`) and
/// another coordinate is drawn in its place.
pub fn check_model_gradients(
    arch: &str,
    feature_type: FeatureType,
    seed: u64,
    batch_size: usize,
    n_coords: usize,
    h: f64,
) -> Result<GradCheckReport, ModelError> {
    let mut model = MultiTaskModel::build(ModelConfig::new(arch, feature_type, seed))?;
    let config = model.config().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let xs: Vec<Vec<f64>> = (0..batch_size)
        .map(|_| (0..config.input_dim).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let ts: Vec<Targets> = (0..batch_size)
        .map(|_| Targets {
            emotion: rng.random_range(0..config.n_emotions),
            gender: rng.random_range(0..config.n_genders),
            age_z: rng.random_range(-2.0..2.0),
        })
        .collect();
    let batch: Vec<(&[f64], Targets)> = xs.iter().map(Vec::as_slice).zip(ts).collect();
    let weights = LossWeights::default();

    let (_, grads) = model.gradients(&batch, &weights)?;
    let analytic: Vec<f64> = grads.iter().flat_map(|g| g.data().iter().copied()).collect();
    let params = model.flat_params();
    let pattern = |m: &MultiTaskModel| -> Result<Vec<_>, ModelError> {
        batch.iter().map(|(x, _)| Ok(m.forward(x)?.trunk.activation_pattern())).collect()
    };
    let base = pattern(&model)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = Vec::with_capacity(n_coords);
    let mut skipped = 0;
    let mut work = params.clone();
    for i in sample(&mut rng, params.len(), params.len()) {
        if coords.len() == n_coords {
            break;
        }
        let mut smooth = true;
        for delta in [h, -h] {
            work[i] = params[i] + delta;
            model.set_flat_params(&work);
            smooth &= pattern(&model)? == base;
        }
        work[i] = params[i];
        if smooth {
            coords.push(i);
        } else {
            skipped += 1;
        }
    }
    model.set_flat_params(&params);

    let mut report = grad_check(
        &params,
        &analytic,
        |p| {
            model.set_flat_params(p);
            model.batch_loss(&batch, &weights).map(|l| l.total).unwrap_or(f64::NAN)
        },
        h,
        &coords,
    );
    report.skipped = skipped;
    Ok(report)
}
