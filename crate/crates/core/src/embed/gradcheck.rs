//! Finite-difference check of the analytic loss gradients.
//!
//! A tiny random model (5 entities, 3 relations, d = 4) scores one positive
//! triple against three corruptions. Every parameter is perturbed by `±ε`
//! and the central difference is compared with the analytic gradient.
//!
//! The losses are piecewise smooth. An instance is resampled whenever it
//! lies within `100ε` of a kink: an active/inactive hinge boundary or a zero
//! distance for TransE, or a zero complex modulus for RotatE. RotatE
//! self-adversarial weights are frozen at the base point, as in training.

use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::{adversarial_weights, example_loss_with, Gradients, LossParams, Trig};
use super::{rotate, EmbedError, EmbeddingModel, ModelFamily, NormOrder};

pub const DEFAULT_EPSILON: f64 = 1e-5;
const ENTITIES: usize = 5;
const RELATIONS: usize = 3;
const DIM: usize = 4;
const NEGATIVES: usize = 3;
const MAX_RESAMPLES: usize = 1000;
/// Gradients smaller than this are compared by absolute error. Central
/// differences of an O(10) loss carry roughly 1e-10 of roundoff, which a
/// smaller floor would turn into spurious relative error on components that
/// are exactly zero.
const ERROR_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub family: ModelFamily,
    pub seed: u64,
    pub epsilon: f64,
    pub max_relative_error: f64,
    pub parameters: usize,
    /// Instances discarded for lying near a kink.
    pub resamples: usize,
}

type Key = (usize, usize, usize);

fn params(family: ModelFamily, norm: NormOrder) -> LossParams<f64> {
    LossParams {
        family,
        norm,
        margin: match family {
            ModelFamily::TransE => 2.0,
            _ => 1.0,
        },
        temperature: 1.0,
        regularization: 0.1,
    }
}

fn sample_instance(family: ModelFamily, norm: NormOrder, rng: &mut ChaCha8Rng) -> (EmbeddingModel<f64>, Key, Vec<Key>) {
    let mut model = EmbeddingModel::zeros(family, DIM, norm, ENTITIES, RELATIONS);
    let unit = Uniform::new(-1.0, 1.0).expect("valid range");
    for x in model.entities.iter_mut() {
        *x = unit.sample(rng);
    }
    let phase = Uniform::new(0.0, std::f64::consts::TAU).expect("valid range");
    for x in model.relations.iter_mut() {
        *x = match family {
            ModelFamily::RotatE => phase.sample(rng),
            _ => unit.sample(rng),
        };
    }
    let pos = (
        rng.random_range(0..ENTITIES),
        rng.random_range(0..RELATIONS),
        rng.random_range(0..ENTITIES),
    );
    let negs = (0..NEGATIVES)
        .map(|_| {
            let e = rng.random_range(0..ENTITIES);
            if rng.random_bool(0.5) {
                (e, pos.1, pos.2)
            } else {
                (pos.0, pos.1, e)
            }
        })
        .collect();
    (model, pos, negs)
}

fn near_kink(model: &EmbeddingModel<f64>, p: &LossParams<f64>, pos: Key, negs: &[Key], delta: f64) -> bool {
    let d = model.dim();
    let all = std::iter::once(pos).chain(negs.iter().copied());
    match p.family {
        ModelFamily::DistMult => false,
        ModelFamily::TransE => {
            let dist = |(h, r, t): Key| -model.score_unchecked(h, r, t);
            for (h, r, t) in all {
                let v: Vec<f64> = (0..d)
                    .map(|i| model.entity(h)[i] + model.relation(r)[i] - model.entity(t)[i])
                    .collect();
                let kink = match p.norm {
                    NormOrder::L1 => v.iter().any(|x| x.abs() < delta),
                    NormOrder::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt() < delta,
                };
                if kink {
                    return true;
                }
            }
            let d_pos = dist(pos);
            negs.iter().any(|&n| (p.margin + d_pos - dist(n)).abs() < delta)
        }
        ModelFamily::RotatE => all.into_iter().any(|(h, r, t)| {
            let rot = rotate(model.entity(h), model.relation(r), 1.0);
            let tv = model.entity(t);
            (0..d).any(|i| (rot[i] - tv[i]).hypot(rot[d + i] - tv[d + i]) < delta)
        }),
    }
}

/// Entity parameters first, then relation parameters.
fn param_mut(model: &mut EmbeddingModel<f64>, k: usize) -> &mut f64 {
    let n = model.entities.len();
    if k < n {
        &mut model.entities[k]
    } else {
        &mut model.relations[k - n]
    }
}

/// Largest relative gradient error over all parameters of a tiny random
/// model. `norm` only matters for TransE.
pub fn gradient_check(
    family: ModelFamily,
    norm: NormOrder,
    seed: u64,
    epsilon: f64,
) -> Result<GradCheckReport, EmbedError> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(EmbedError::Config(format!("epsilon {epsilon} outside [1e-7, 1e-3]")));
    }
    let p = params(family, norm);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut resamples = 0;
    let (mut model, pos, negs) = loop {
        let (model, pos, negs) = sample_instance(family, norm, &mut rng);
        if !near_kink(&model, &p, pos, &negs, 100.0 * epsilon) {
            break (model, pos, negs);
        }
        resamples += 1;
        if resamples >= MAX_RESAMPLES {
            return Err(EmbedError::Config("could not sample a kink-free instance".into()));
        }
    };

    let weights = (family == ModelFamily::RotatE).then(|| {
        let dists: Vec<f64> = negs.iter().map(|&(h, r, t)| -model.score_unchecked(h, r, t)).collect();
        adversarial_weights(&dists, p.temperature)
    });
    let w = weights.as_deref();
    let mut grads = Gradients::for_model(&model);
    example_loss_with(&model, &p, &Trig::new(&model), pos, &negs, w, Some(&mut grads));
    let analytic: Vec<f64> = grads
        .entity_gradients()
        .iter()
        .chain(grads.relation_gradients())
        .copied()
        .collect();

    let mut worst = 0.0f64;
    for (k, &a) in analytic.iter().enumerate() {
        let original = *param_mut(&mut model, k);
        *param_mut(&mut model, k) = original + epsilon;
        let plus = example_loss_with(&model, &p, &Trig::new(&model), pos, &negs, w, None);
        *param_mut(&mut model, k) = original - epsilon;
        let minus = example_loss_with(&model, &p, &Trig::new(&model), pos, &negs, w, None);
        *param_mut(&mut model, k) = original;
        let numeric = (plus - minus) / (2.0 * epsilon);
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(ERROR_FLOOR);
        worst = worst.max(err);
    }
    Ok(GradCheckReport {
        family,
        seed,
        epsilon,
        max_relative_error: worst,
        parameters: analytic.len(),
        resamples,
    })
}
