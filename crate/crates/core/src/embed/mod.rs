//! Embedding-based KGC models: TransE, DistMult and RotatE.
//!
//! Parameters are flat row-major arrays. TransE and DistMult entities have
//! `dim` reals; RotatE entities have `dim` complex components stored as
//! `[re_0 .. re_{d-1}, im_0 .. im_{d-1}]`, and RotatE relations are `dim`
//! phase angles, so every relation acts as a unit-modulus rotation.
//!
//! Scores are "higher is more plausible":
//!
//! - TransE: `-‖h + r - t‖_p`
//! - DistMult: `Σ h_i r_i t_i`
//! - RotatE: `-Σ_i |h_i e^{iθ_i} - t_i|`

mod checkpoint;
mod gradcheck;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{EntityId, RelationId};
use crate::scalar::Scalar;

pub use checkpoint::{read_header, Checkpoint, CheckpointHeader, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{gradient_check, GradCheckReport, DEFAULT_EPSILON};
pub use train::{example_loss, Gradients, StepDecay, TrainConfig, TrainOutcome, Trainer};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("entity id {id} out of range ({count} entities)")]
    EntityOutOfRange { id: u32, count: usize },
    #[error("relation id {id} out of range ({count} relations)")]
    RelationOutOfRange { id: u32, count: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },
    #[error("no training triples")]
    NoTriples,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    TransE,
    DistMult,
    RotatE,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 3] = [ModelFamily::TransE, ModelFamily::DistMult, ModelFamily::RotatE];

    pub fn name(self) -> &'static str {
        match self {
            ModelFamily::TransE => "transe",
            ModelFamily::DistMult => "distmult",
            ModelFamily::RotatE => "rotate",
        }
    }
}

impl std::str::FromStr for ModelFamily {
    type Err = EmbedError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "transe" => Ok(ModelFamily::TransE),
            "distmult" => Ok(ModelFamily::DistMult),
            "rotate" => Ok(ModelFamily::RotatE),
            other => Err(EmbedError::Config(format!("unknown model family `{other}`"))),
        }
    }
}

/// Distance norm for TransE.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormOrder {
    L1,
    L2,
}

impl NormOrder {
    pub fn from_order(p: u32) -> Option<Self> {
        match p {
            1 => Some(NormOrder::L1),
            2 => Some(NormOrder::L2),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingModel<F: Scalar> {
    family: ModelFamily,
    dim: usize,
    norm: NormOrder,
    num_entities: usize,
    num_relations: usize,
    pub(crate) entities: Vec<F>,
    pub(crate) relations: Vec<F>,
}

impl<F: Scalar> EmbeddingModel<F> {
    /// All-zero model; see [`Trainer`] for initialized ones.
    pub fn zeros(family: ModelFamily, dim: usize, norm: NormOrder, num_entities: usize, num_relations: usize) -> Self {
        let ew = entity_width(family, dim);
        EmbeddingModel {
            family,
            dim,
            norm,
            num_entities,
            num_relations,
            entities: vec![F::zero(); num_entities * ew],
            relations: vec![F::zero(); num_relations * dim],
        }
    }

    /// Builds a model from flat parameter arrays.
    pub fn from_parameters(
        family: ModelFamily,
        dim: usize,
        norm: NormOrder,
        entities: Vec<F>,
        relations: Vec<F>,
    ) -> Result<Self, EmbedError> {
        let ew = entity_width(family, dim);
        if dim == 0 || !entities.len().is_multiple_of(ew) || !relations.len().is_multiple_of(dim) {
            return Err(EmbedError::Checkpoint(format!(
                "parameter lengths {} / {} do not fit dimension {dim}",
                entities.len(),
                relations.len()
            )));
        }
        Ok(EmbeddingModel {
            family,
            dim,
            norm,
            num_entities: entities.len() / ew,
            num_relations: relations.len() / dim,
            entities,
            relations,
        })
    }

    pub fn family(&self) -> ModelFamily {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn norm(&self) -> NormOrder {
        self.norm
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn entity_width(&self) -> usize {
        entity_width(self.family, self.dim)
    }

    pub fn entity_parameters(&self) -> &[F] {
        &self.entities
    }

    pub fn relation_parameters(&self) -> &[F] {
        &self.relations
    }

    pub fn entity_parameters_mut(&mut self) -> &mut [F] {
        &mut self.entities
    }

    pub fn relation_parameters_mut(&mut self) -> &mut [F] {
        &mut self.relations
    }

    pub fn entity(&self, e: usize) -> &[F] {
        let w = self.entity_width();
        &self.entities[e * w..(e + 1) * w]
    }

    pub fn relation(&self, r: usize) -> &[F] {
        &self.relations[r * self.dim..(r + 1) * self.dim]
    }

    pub fn is_finite(&self) -> bool {
        self.entities.iter().chain(&self.relations).all(|x| x.is_finite())
    }

    fn check(&self, h: EntityId, r: RelationId, t: EntityId) -> Result<(), EmbedError> {
        for e in [h, t] {
            if e.index() >= self.num_entities {
                return Err(EmbedError::EntityOutOfRange {
                    id: e.0,
                    count: self.num_entities,
                });
            }
        }
        if r.index() >= self.num_relations {
            return Err(EmbedError::RelationOutOfRange {
                id: r.0,
                count: self.num_relations,
            });
        }
        Ok(())
    }

    /// Plausibility of `(h, r, t)`.
    pub fn score(&self, h: EntityId, r: RelationId, t: EntityId) -> Result<F, EmbedError> {
        self.check(h, r, t)?;
        Ok(self.score_unchecked(h.index(), r.index(), t.index()))
    }

    pub(crate) fn score_unchecked(&self, h: usize, r: usize, t: usize) -> F {
        score_rows(
            self.family,
            self.norm,
            self.dim,
            self.entity(h),
            self.relation(r),
            self.entity(t),
        )
    }

    /// Scores `(h, r, e)` for every entity `e` into `out`.
    pub fn score_all_tails(&self, h: usize, r: usize, out: &mut [F]) {
        debug_assert_eq!(out.len(), self.num_entities);
        let (hv, rv) = (self.entity(h), self.relation(r));
        let query: Vec<F> = match self.family {
            ModelFamily::TransE => hv.iter().zip(rv).map(|(&a, &b)| a + b).collect(),
            ModelFamily::DistMult => hv.iter().zip(rv).map(|(&a, &b)| a * b).collect(),
            ModelFamily::RotatE => rotate(hv, rv, F::one()),
        };
        self.score_against(&query, out);
    }

    /// Scores `(e, r, t)` for every entity `e` into `out`.
    pub fn score_all_heads(&self, r: usize, t: usize, out: &mut [F]) {
        debug_assert_eq!(out.len(), self.num_entities);
        let (rv, tv) = (self.relation(r), self.entity(t));
        // |h∘r - t| = |h - t∘conj(r)| for unit-modulus r, and
        // h + r - t = h - (t - r).
        let query: Vec<F> = match self.family {
            ModelFamily::TransE => tv.iter().zip(rv).map(|(&a, &b)| a - b).collect(),
            ModelFamily::DistMult => tv.iter().zip(rv).map(|(&a, &b)| a * b).collect(),
            ModelFamily::RotatE => rotate(tv, rv, -F::one()),
        };
        self.score_against(&query, out);
    }

    fn score_against(&self, query: &[F], out: &mut [F]) {
        let w = self.entity_width();
        for (e, slot) in out.iter_mut().enumerate() {
            let row = &self.entities[e * w..(e + 1) * w];
            *slot = match self.family {
                ModelFamily::TransE => -distance(self.norm, query, row),
                ModelFamily::DistMult => query.iter().zip(row).map(|(&a, &b)| a * b).sum(),
                ModelFamily::RotatE => -complex_l1(query, row, self.dim),
            };
        }
    }
}

pub(crate) fn entity_width(family: ModelFamily, dim: usize) -> usize {
    match family {
        ModelFamily::RotatE => 2 * dim,
        _ => dim,
    }
}

/// Rotates complex `x` by `sign * phases`.
pub(crate) fn rotate<F: Scalar>(x: &[F], phases: &[F], sign: F) -> Vec<F> {
    let d = phases.len();
    let mut out = vec![F::zero(); 2 * d];
    for i in 0..d {
        let (re, im) = (x[i], x[d + i]);
        let theta = sign * phases[i];
        let (s, c) = theta.sin_cos();
        out[i] = re * c - im * s;
        out[d + i] = re * s + im * c;
    }
    out
}

fn distance<F: Scalar>(norm: NormOrder, a: &[F], b: &[F]) -> F {
    match norm {
        NormOrder::L1 => a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).sum(),
        NormOrder::L2 => a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<F>().sqrt(),
    }
}

/// Sum of complex moduli of `a - b`.
fn complex_l1<F: Scalar>(a: &[F], b: &[F], d: usize) -> F {
    (0..d)
        .map(|i| {
            let (x, y) = (a[i] - b[i], a[d + i] - b[d + i]);
            (x * x + y * y).sqrt()
        })
        .sum()
}

pub(crate) fn score_rows<F: Scalar>(family: ModelFamily, norm: NormOrder, dim: usize, h: &[F], r: &[F], t: &[F]) -> F {
    match family {
        ModelFamily::TransE => {
            let mut acc = F::zero();
            for i in 0..dim {
                let v = h[i] + r[i] - t[i];
                acc += match norm {
                    NormOrder::L1 => v.abs(),
                    NormOrder::L2 => v * v,
                };
            }
            match norm {
                NormOrder::L1 => -acc,
                NormOrder::L2 => -acc.sqrt(),
            }
        }
        ModelFamily::DistMult => (0..dim).map(|i| h[i] * r[i] * t[i]).sum(),
        ModelFamily::RotatE => -complex_l1(&rotate(h, r, F::one()), t, dim),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(family: ModelFamily, entities: Vec<f64>, relations: Vec<f64>, dim: usize) -> EmbeddingModel<f64> {
        EmbeddingModel::from_parameters(family, dim, NormOrder::L2, entities, relations).unwrap()
    }

    #[test]
    fn transe_translation_identity_scores_zero() {
        let m = model(ModelFamily::TransE, vec![1.0, 2.0, 1.5, 1.5], vec![0.5, -0.5], 2);
        let s = m.score(EntityId(0), RelationId(0), EntityId(1)).unwrap();
        assert_eq!(s, 0.0);
        let other = m.score(EntityId(1), RelationId(0), EntityId(0)).unwrap();
        assert!(other < s);
    }

    #[test]
    fn rotate_identity_rotation_is_maximal() {
        let m = model(
            ModelFamily::RotatE,
            vec![0.3, -0.2, 0.7, 0.1, 0.5, 0.5, 0.5, 0.5],
            vec![0.0, 0.0],
            2,
        );
        assert_eq!(m.score(EntityId(0), RelationId(0), EntityId(0)).unwrap(), 0.0);
        assert!(m.score(EntityId(0), RelationId(0), EntityId(1)).unwrap() < 0.0);
    }

    #[test]
    fn out_of_range_ids() {
        let m = model(ModelFamily::DistMult, vec![1.0, 2.0], vec![1.0], 1);
        assert!(matches!(
            m.score(EntityId(2), RelationId(0), EntityId(0)),
            Err(EmbedError::EntityOutOfRange { id: 2, count: 2 })
        ));
        assert!(matches!(
            m.score(EntityId(0), RelationId(1), EntityId(0)),
            Err(EmbedError::RelationOutOfRange { id: 1, count: 1 })
        ));
    }

    #[test]
    fn rotate_composition() {
        let h = [0.3f64, -1.2, 0.8, 0.4];
        let (a, b) = ([0.7, -2.1], [1.9, 0.25]);
        let sum = [a[0] + b[0], a[1] + b[1]];
        let twice = rotate(&rotate(&h, &a, 1.0), &b, 1.0);
        let once = rotate(&h, &sum, 1.0);
        for (x, y) in twice.iter().zip(&once) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
