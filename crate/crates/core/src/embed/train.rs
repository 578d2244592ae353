//! Mini-batch SGD training with uniform negative sampling.
//!
//! Losses, per positive triple with `k` corruptions:
//!
//! - TransE: `Σ_j max(0, γ + d⁺ - d⁻_j)` with `d = ‖h + r - t‖_p`
//! - DistMult: `softplus(-s⁺) + λR⁺ + (1/k) Σ_j [softplus(s⁻_j) + λR⁻_j]`
//!   with `R = ‖h‖² + ‖r‖² + ‖t‖²`
//! - RotatE: `-log σ(γ - d⁺) - Σ_j w_j log σ(d⁻_j - γ)` where the weights
//!   `w = softmax(-α d⁻)` are treated as constants

use std::marker::PhantomData;

use rand::distr::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{entity_width, EmbedError, EmbeddingModel, ModelFamily, NormOrder};
use crate::corpus::{KnowledgeGraph, Split, Triple};
use crate::scalar::Scalar;

/// Multiply the learning rate by `factor` every `every` epochs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDecay {
    pub every: usize,
    pub factor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub family: ModelFamily,
    pub dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub negatives: usize,
    /// TransE and RotatE.
    pub margin: f64,
    /// RotatE self-adversarial temperature.
    pub adversarial_temperature: f64,
    /// DistMult L2 weight.
    pub regularization: f64,
    /// TransE distance norm.
    pub norm: NormOrder,
    pub decay: Option<StepDecay>,
    pub seed: u64,
}

impl TrainConfig {
    /// Shipped defaults, tuned on UMLS.
    pub fn default_for(family: ModelFamily) -> Self {
        let base = TrainConfig {
            family,
            dim: 128,
            epochs: 500,
            batch_size: 128,
            learning_rate: 0.002,
            negatives: 1,
            margin: 2.0,
            adversarial_temperature: 1.0,
            regularization: 0.0,
            norm: NormOrder::L1,
            decay: None,
            seed: 42,
        };
        let halve_every = |every| Some(StepDecay { every, factor: 0.5 });
        match family {
            ModelFamily::TransE => TrainConfig {
                decay: halve_every(100),
                ..base
            },
            ModelFamily::DistMult => TrainConfig {
                epochs: 200,
                learning_rate: 0.2,
                negatives: 8,
                regularization: 3e-3,
                decay: halve_every(50),
                ..base
            },
            ModelFamily::RotatE => TrainConfig {
                epochs: 200,
                learning_rate: 0.001,
                negatives: 16,
                margin: 6.0,
                decay: halve_every(50),
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        let bad = |what: &str| Err(EmbedError::Config(what.to_string()));
        if self.dim == 0 {
            return bad("dimension must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if self.negatives == 0 {
            return bad("negatives per positive must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning rate must be positive and finite");
        }
        let uses_margin = matches!(self.family, ModelFamily::TransE | ModelFamily::RotatE);
        if uses_margin && !(self.margin.is_finite() && self.margin > 0.0) {
            return bad("margin must be positive and finite");
        }
        if self.family == ModelFamily::RotatE
            && !(self.adversarial_temperature.is_finite() && self.adversarial_temperature > 0.0)
        {
            return bad("adversarial temperature must be positive and finite");
        }
        if self.family == ModelFamily::DistMult && !(self.regularization.is_finite() && self.regularization >= 0.0) {
            return bad("regularization weight must be non-negative and finite");
        }
        if let Some(d) = self.decay {
            if d.every == 0 || !(d.factor.is_finite() && d.factor > 0.0) {
                return bad("step decay needs a positive period and factor");
            }
        }
        Ok(())
    }

    pub(crate) fn loss_params<F: Scalar>(&self) -> LossParams<F> {
        LossParams {
            family: self.family,
            norm: self.norm,
            margin: F::from_f64(self.margin),
            temperature: F::from_f64(self.adversarial_temperature),
            regularization: F::from_f64(self.regularization),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LossParams<F> {
    pub family: ModelFamily,
    pub norm: NormOrder,
    pub margin: F,
    pub temperature: F,
    pub regularization: F,
}

/// Dense gradient buffers that remember which rows were written.
#[derive(Clone, Debug)]
pub struct Gradients<F> {
    entity_width: usize,
    relation_width: usize,
    pub(crate) entities: Vec<F>,
    pub(crate) relations: Vec<F>,
    entity_rows: Vec<usize>,
    relation_rows: Vec<usize>,
    entity_seen: Vec<bool>,
    relation_seen: Vec<bool>,
}

impl<F: Scalar> Gradients<F> {
    pub fn for_model(model: &EmbeddingModel<F>) -> Self {
        Gradients {
            entity_width: model.entity_width(),
            relation_width: model.dim(),
            entities: vec![F::zero(); model.entities.len()],
            relations: vec![F::zero(); model.relations.len()],
            entity_rows: Vec::new(),
            relation_rows: Vec::new(),
            entity_seen: vec![false; model.num_entities()],
            relation_seen: vec![false; model.num_relations()],
        }
    }

    pub fn entity_gradients(&self) -> &[F] {
        &self.entities
    }

    pub fn relation_gradients(&self) -> &[F] {
        &self.relations
    }

    /// Marks entity row `e` as written and returns its offset.
    fn touch_entity(&mut self, e: usize) -> usize {
        if !self.entity_seen[e] {
            self.entity_seen[e] = true;
            self.entity_rows.push(e);
        }
        e * self.entity_width
    }

    fn touch_relation(&mut self, r: usize) -> usize {
        if !self.relation_seen[r] {
            self.relation_seen[r] = true;
            self.relation_rows.push(r);
        }
        r * self.relation_width
    }

    fn clear(&mut self) {
        let (ew, rw) = (self.entity_width, self.relation_width);
        for &e in &self.entity_rows {
            self.entities[e * ew..(e + 1) * ew].fill(F::zero());
            self.entity_seen[e] = false;
        }
        for &r in &self.relation_rows {
            self.relations[r * rw..(r + 1) * rw].fill(F::zero());
            self.relation_seen[r] = false;
        }
        self.entity_rows.clear();
        self.relation_rows.clear();
    }
}

fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

fn softplus<F: Scalar>(x: F) -> F {
    if x > F::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `(sin θ, cos θ)` for every RotatE relation phase, refreshed whenever
/// the phases change.
pub(crate) struct Trig<F> {
    dim: usize,
    table: Vec<(F, F)>,
}

impl<F: Scalar> Trig<F> {
    pub(crate) fn new(model: &EmbeddingModel<F>) -> Self {
        let table = match model.family() {
            ModelFamily::RotatE => model.relations.iter().map(|x| x.sin_cos()).collect(),
            _ => Vec::new(),
        };
        Trig {
            dim: model.dim(),
            table,
        }
    }

    fn row(&self, r: usize) -> &[(F, F)] {
        &self.table[r * self.dim..(r + 1) * self.dim]
    }
}

/// TransE/RotatE distance, or the DistMult score.
fn energy<F: Scalar>(
    model: &EmbeddingModel<F>,
    p: &LossParams<F>,
    trig: &Trig<F>,
    (h, r, t): (usize, usize, usize),
) -> F {
    match p.family {
        ModelFamily::DistMult => model.score_unchecked(h, r, t),
        ModelFamily::TransE => -model.score_unchecked(h, r, t),
        ModelFamily::RotatE => {
            let d = model.dim();
            let (hv, tv, sc) = (model.entity(h), model.entity(t), trig.row(r));
            let mut acc = F::zero();
            for i in 0..d {
                let (s, c) = sc[i];
                let a = hv[i] * c - hv[d + i] * s - tv[i];
                let b = hv[i] * s + hv[d + i] * c - tv[d + i];
                acc += (a * a + b * b).sqrt();
            }
            acc
        }
    }
}

fn squared_norm<F: Scalar>(model: &EmbeddingModel<F>, (h, r, t): (usize, usize, usize)) -> F {
    let sq = |v: &[F]| v.iter().map(|&x| x * x).sum::<F>();
    sq(model.entity(h)) + sq(model.relation(r)) + sq(model.entity(t))
}

/// Adds `coef * ∂energy/∂θ` to `grads`.
fn accumulate_energy<F: Scalar>(
    model: &EmbeddingModel<F>,
    p: &LossParams<F>,
    trig: &Trig<F>,
    (h, r, t): (usize, usize, usize),
    coef: F,
    grads: &mut Gradients<F>,
) {
    if coef == F::zero() {
        return;
    }
    let d = model.dim();
    let (hv, rv, tv) = (model.entity(h), model.relation(r), model.entity(t));
    let (ho, ro, to) = (grads.touch_entity(h), grads.touch_relation(r), grads.touch_entity(t));
    let (ge, gr) = (&mut grads.entities, &mut grads.relations);
    match p.family {
        ModelFamily::TransE => {
            let scale = match p.norm {
                NormOrder::L1 => coef,
                NormOrder::L2 => {
                    let n = (0..d).map(|i| hv[i] + rv[i] - tv[i]).map(|v| v * v).sum::<F>().sqrt();
                    if n == F::zero() {
                        return;
                    }
                    coef / n
                }
            };
            for i in 0..d {
                let v = hv[i] + rv[i] - tv[i];
                let g = match p.norm {
                    NormOrder::L1 => sign(v) * scale,
                    NormOrder::L2 => v * scale,
                };
                ge[ho + i] += g;
                gr[ro + i] += g;
                ge[to + i] -= g;
            }
        }
        ModelFamily::DistMult => {
            for i in 0..d {
                ge[ho + i] += rv[i] * tv[i] * coef;
                gr[ro + i] += hv[i] * tv[i] * coef;
                ge[to + i] += hv[i] * rv[i] * coef;
            }
        }
        ModelFamily::RotatE => {
            let sc = trig.row(r);
            for i in 0..d {
                let (s, c) = sc[i];
                let a = hv[i] * c - hv[d + i] * s;
                let b = hv[i] * s + hv[d + i] * c;
                let (ur, ui) = (a - tv[i], b - tv[d + i]);
                let m = (ur * ur + ui * ui).sqrt();
                if m == F::zero() {
                    continue;
                }
                let (sr, si) = (ur / m * coef, ui / m * coef);
                ge[ho + i] += sr * c + si * s;
                ge[ho + d + i] += -sr * s + si * c;
                ge[to + i] -= sr;
                ge[to + d + i] -= si;
                gr[ro + i] += -sr * b + si * a;
            }
        }
    }
}

fn accumulate_l2<F: Scalar>(
    model: &EmbeddingModel<F>,
    (h, r, t): (usize, usize, usize),
    coef: F,
    grads: &mut Gradients<F>,
) {
    if coef == F::zero() {
        return;
    }
    let two = coef + coef;
    let (ho, ro, to) = (grads.touch_entity(h), grads.touch_relation(r), grads.touch_entity(t));
    add(&mut grads.entities[ho..ho + model.entity_width()], model.entity(h), two);
    add(&mut grads.relations[ro..ro + model.dim()], model.relation(r), two);
    add(&mut grads.entities[to..to + model.entity_width()], model.entity(t), two);
}

fn add<F: Scalar>(dst: &mut [F], src: &[F], scale: F) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s * scale;
    }
}

fn sign<F: Scalar>(x: F) -> F {
    if x > F::zero() {
        F::one()
    } else if x < F::zero() {
        -F::one()
    } else {
        F::zero()
    }
}

/// Self-adversarial weights `softmax(-α d⁻)`.
pub(crate) fn adversarial_weights<F: Scalar>(distances: &[F], temperature: F) -> Vec<F> {
    let logits: Vec<F> = distances.iter().map(|&d| -temperature * d).collect();
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let exps: Vec<F> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: F = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Loss of one positive triple against its corruptions. With `grads`, also
/// accumulates the analytic gradient. RotatE weights are recomputed from the
/// current parameters unless `frozen_weights` is given.
pub(crate) fn example_loss_with<F: Scalar>(
    model: &EmbeddingModel<F>,
    p: &LossParams<F>,
    trig: &Trig<F>,
    pos: (usize, usize, usize),
    negs: &[(usize, usize, usize)],
    frozen_weights: Option<&[F]>,
    mut grads: Option<&mut Gradients<F>>,
) -> F {
    let e_pos = energy(model, p, trig, pos);
    let e_negs: Vec<F> = negs.iter().map(|&n| energy(model, p, trig, n)).collect();
    match p.family {
        ModelFamily::TransE => {
            let mut loss = F::zero();
            let mut active = F::zero();
            for (&n, &e_neg) in negs.iter().zip(&e_negs) {
                let l = p.margin + e_pos - e_neg;
                if l > F::zero() {
                    loss += l;
                    active += F::one();
                    if let Some(g) = grads.as_deref_mut() {
                        accumulate_energy(model, p, trig, n, -F::one(), g);
                    }
                }
            }
            if let Some(g) = grads {
                accumulate_energy(model, p, trig, pos, active, g);
            }
            loss
        }
        ModelFamily::DistMult => {
            let k = F::from_f64(negs.len() as f64);
            let lambda = p.regularization;
            let mut loss = softplus(-e_pos) + lambda * squared_norm(model, pos);
            if let Some(g) = grads.as_deref_mut() {
                accumulate_energy(model, p, trig, pos, -sigmoid(-e_pos), g);
                accumulate_l2(model, pos, lambda, g);
            }
            for (&n, &e_neg) in negs.iter().zip(&e_negs) {
                loss += (softplus(e_neg) + lambda * squared_norm(model, n)) / k;
                if let Some(g) = grads.as_deref_mut() {
                    accumulate_energy(model, p, trig, n, sigmoid(e_neg) / k, g);
                    accumulate_l2(model, n, lambda / k, g);
                }
            }
            loss
        }
        ModelFamily::RotatE => {
            let owned;
            let weights = match frozen_weights {
                Some(w) => w,
                None => {
                    owned = adversarial_weights(&e_negs, p.temperature);
                    &owned
                }
            };
            let mut loss = softplus(e_pos - p.margin);
            if let Some(g) = grads.as_deref_mut() {
                accumulate_energy(model, p, trig, pos, sigmoid(e_pos - p.margin), g);
            }
            for ((&n, &e_neg), &w) in negs.iter().zip(&e_negs).zip(weights) {
                loss += w * softplus(p.margin - e_neg);
                if let Some(g) = grads.as_deref_mut() {
                    accumulate_energy(model, p, trig, n, -w * sigmoid(p.margin - e_neg), g);
                }
            }
            loss
        }
    }
}

/// Loss of one positive triple against its corruptions under `config`.
pub fn example_loss<F: Scalar>(
    model: &EmbeddingModel<F>,
    config: &TrainConfig,
    positive: Triple,
    negatives: &[Triple],
) -> F {
    let key = |t: &Triple| (t.head.index(), t.relation.index(), t.tail.index());
    let negs: Vec<_> = negatives.iter().map(key).collect();
    example_loss_with(
        model,
        &config.loss_params(),
        &Trig::new(model),
        key(&positive),
        &negs,
        None,
        None,
    )
}

/// TransE/DistMult vectors uniform in `±6/√d`. RotatE components uniform
/// in `±(γ + 2)/d`, which keeps initial distances near the margin, and
/// phases uniform in `[0, 2π)`.
pub(crate) fn initialize<F: Scalar>(
    config: &TrainConfig,
    num_entities: usize,
    num_relations: usize,
    rng: &mut ChaCha8Rng,
) -> EmbeddingModel<F> {
    let (family, dim) = (config.family, config.dim);
    let mut model = EmbeddingModel::zeros(family, dim, config.norm, num_entities, num_relations);
    let bound = 6.0 / (dim as f64).sqrt();
    let uniform = Uniform::new(-bound, bound).expect("finite bound");
    let entity_bound = match family {
        ModelFamily::RotatE => (config.margin + 2.0) / dim as f64,
        _ => bound,
    };
    let entity_uniform = Uniform::new(-entity_bound, entity_bound).expect("finite bound");
    for x in model.entities.iter_mut() {
        *x = F::from_f64(entity_uniform.sample(rng));
    }
    match family {
        ModelFamily::RotatE => {
            let phase = Uniform::new(0.0, std::f64::consts::TAU).expect("finite range");
            for x in model.relations.iter_mut() {
                *x = F::from_f64(phase.sample(rng));
            }
        }
        _ => {
            for x in model.relations.iter_mut() {
                *x = F::from_f64(uniform.sample(rng));
            }
        }
    }
    if family == ModelFamily::TransE {
        for r in 0..num_relations {
            normalize(&mut model.relations[r * dim..(r + 1) * dim]);
        }
        for e in 0..num_entities {
            normalize(&mut model.entities[e * dim..(e + 1) * dim]);
        }
    }
    model
}

fn normalize<F: Scalar>(row: &mut [F]) {
    let n = row.iter().map(|&x| x * x).sum::<F>().sqrt();
    if n > F::zero() {
        for x in row {
            *x /= n;
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<F: Scalar> {
    pub model: EmbeddingModel<F>,
    /// Mean loss per positive triple, one entry per epoch.
    pub epoch_losses: Vec<f64>,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct Trainer<F> {
    config: TrainConfig,
    _scalar: PhantomData<F>,
}

impl<F: Scalar> Trainer<F> {
    pub fn new(config: TrainConfig) -> Result<Self, EmbedError> {
        config.validate()?;
        Ok(Trainer {
            config,
            _scalar: PhantomData,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Trains on the graph's training split.
    pub fn train(&self, graph: &KnowledgeGraph) -> Result<TrainOutcome<F>, EmbedError> {
        self.fit(
            graph.num_entities(),
            graph.num_relations(),
            graph.split(Split::Train),
            |_, _| {},
        )
    }

    /// Trains on `triples`, calling `on_epoch(epoch, mean_loss)` after each epoch.
    pub fn fit(
        &self,
        num_entities: usize,
        num_relations: usize,
        triples: &[Triple],
        mut on_epoch: impl FnMut(usize, f64),
    ) -> Result<TrainOutcome<F>, EmbedError> {
        let cfg = &self.config;
        if triples.is_empty() {
            return Err(EmbedError::NoTriples);
        }
        for t in triples {
            for e in [t.head, t.tail] {
                if e.index() >= num_entities {
                    return Err(EmbedError::EntityOutOfRange {
                        id: e.0,
                        count: num_entities,
                    });
                }
            }
            if t.relation.index() >= num_relations {
                return Err(EmbedError::RelationOutOfRange {
                    id: t.relation.0,
                    count: num_relations,
                });
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut model: EmbeddingModel<F> = initialize(cfg, num_entities, num_relations, &mut rng);
        let params = cfg.loss_params::<F>();
        let mut grads = Gradients::for_model(&model);
        let ew = entity_width(cfg.family, cfg.dim);
        let keys: Vec<(usize, usize, usize)> = triples
            .iter()
            .map(|t| (t.head.index(), t.relation.index(), t.tail.index()))
            .collect();
        let mut order: Vec<usize> = (0..keys.len()).collect();
        let mut negs = Vec::with_capacity(cfg.negatives);
        let mut lr = cfg.learning_rate;
        let mut epoch_losses = Vec::with_capacity(cfg.epochs);

        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let step = F::from_f64(lr);
            let mut epoch_loss = 0.0f64;
            for (batch_index, batch) in order.chunks(cfg.batch_size).enumerate() {
                let mut batch_loss = F::zero();
                let trig = Trig::new(&model);
                for &i in batch {
                    let pos = keys[i];
                    negs.clear();
                    for _ in 0..cfg.negatives {
                        let e = rng.random_range(0..num_entities);
                        negs.push(if rng.random_bool(0.5) {
                            (e, pos.1, pos.2)
                        } else {
                            (pos.0, pos.1, e)
                        });
                    }
                    batch_loss += example_loss_with(&model, &params, &trig, pos, &negs, None, Some(&mut grads));
                }
                let loss = batch_loss.as_f64();
                if !loss.is_finite() {
                    return Err(EmbedError::Divergence {
                        epoch,
                        batch: batch_index,
                        loss,
                    });
                }
                epoch_loss += loss;
                for &e in &grads.entity_rows {
                    let row = &mut model.entities[e * ew..(e + 1) * ew];
                    add(row, &grads.entities[e * ew..(e + 1) * ew], -step);
                    if cfg.family == ModelFamily::TransE {
                        normalize(row);
                    }
                }
                let d = cfg.dim;
                for &r in &grads.relation_rows {
                    add(
                        &mut model.relations[r * d..(r + 1) * d],
                        &grads.relations[r * d..(r + 1) * d],
                        -step,
                    );
                }
                let touched_finite = grads
                    .entity_rows
                    .iter()
                    .all(|&e| model.entities[e * ew..(e + 1) * ew].iter().all(|x| x.is_finite()))
                    && grads
                        .relation_rows
                        .iter()
                        .all(|&r| model.relations[r * d..(r + 1) * d].iter().all(|x| x.is_finite()));
                if !touched_finite {
                    return Err(EmbedError::Divergence {
                        epoch,
                        batch: batch_index,
                        loss: f64::NAN,
                    });
                }
                grads.clear();
            }
            let mean = epoch_loss / keys.len() as f64;
            epoch_losses.push(mean);
            on_epoch(epoch, mean);
            if let Some(decay) = cfg.decay {
                if (epoch + 1) % decay.every == 0 {
                    lr *= decay.factor;
                }
            }
        }
        Ok(TrainOutcome {
            model,
            epoch_losses,
            seed: cfg.seed,
        })
    }
}
