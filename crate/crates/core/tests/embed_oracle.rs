use std::path::PathBuf;

use kgaug_core::embed::{EmbeddingModel, ModelFamily, NormOrder, TrainConfig, Trainer};
use kgaug_core::{EntityId, KnowledgeGraph, RelationId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_model(family: ModelFamily, norm: NormOrder, n: usize, r: usize, d: usize, seed: u64) -> EmbeddingModel<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = if family == ModelFamily::RotatE { 2 * d } else { d };
    let ent = (0..n * width).map(|_| rng.random_range(-1.0..1.0)).collect();
    let rel = (0..r * d).map(|_| rng.random_range(-3.0..3.0)).collect();
    EmbeddingModel::from_parameters(family, d, norm, ent, rel).unwrap()
}

/// Straightforward restatement of each scoring formula.
fn reference_score(m: &EmbeddingModel<f64>, h: usize, r: usize, t: usize) -> f64 {
    let d = m.dim();
    let (hv, rv, tv) = (m.entity(h), m.relation(r), m.entity(t));
    match m.family() {
        ModelFamily::TransE => {
            let p = if m.norm() == NormOrder::L1 { 1.0 } else { 2.0 };
            let s: f64 = (0..d).map(|i| (hv[i] + rv[i] - tv[i]).abs().powf(p)).sum();
            -s.powf(1.0 / p)
        }
        ModelFamily::DistMult => (0..d).map(|i| hv[i] * rv[i] * tv[i]).sum(),
        ModelFamily::RotatE => {
            let mut total = 0.0;
            for i in 0..d {
                // (a + bi)(cos θ + i sin θ) - (c + di)
                let (a, b) = (hv[i], hv[d + i]);
                let (c, s) = (rv[i].cos(), rv[i].sin());
                let re = a * c - b * s - tv[i];
                let im = a * s + b * c - tv[d + i];
                total += re.hypot(im);
            }
            -total
        }
    }
}

#[test]
fn scores_match_reference_formulas() {
    let cases = [
        (ModelFamily::TransE, NormOrder::L1),
        (ModelFamily::TransE, NormOrder::L2),
        (ModelFamily::DistMult, NormOrder::L2),
        (ModelFamily::RotatE, NormOrder::L2),
    ];
    for (seed, (family, norm)) in cases.into_iter().enumerate() {
        let m = random_model(family, norm, 6, 3, 5, seed as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed as u64);
        let mut tails = vec![0.0; 6];
        let mut heads = vec![0.0; 6];
        for _ in 0..5 {
            let (h, r, t) = (rng.random_range(0..6), rng.random_range(0..3), rng.random_range(0..6));
            let s = m
                .score(EntityId(h as u32), RelationId(r as u32), EntityId(t as u32))
                .unwrap();
            let want = reference_score(&m, h, r, t);
            assert!((s - want).abs() < 1e-12, "{family:?}: {s} vs {want}");
            m.score_all_tails(h, r, &mut tails);
            m.score_all_heads(r, t, &mut heads);
            for e in 0..6 {
                assert!((tails[e] - reference_score(&m, h, r, e)).abs() < 1e-12);
                assert!((heads[e] - reference_score(&m, e, r, t)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn distmult_is_symmetric() {
    let m = random_model(ModelFamily::DistMult, NormOrder::L2, 8, 4, 16, 9);
    for h in 0..8u32 {
        for t in 0..8u32 {
            for r in 0..4u32 {
                let a = m.score(EntityId(h), RelationId(r), EntityId(t)).unwrap();
                let b = m.score(EntityId(t), RelationId(r), EntityId(h)).unwrap();
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

fn umls() -> KnowledgeGraph {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/umls");
    KnowledgeGraph::load(&dir, None).unwrap()
}

/// Mean over consecutive windows of `w` epochs.
fn smoothed(losses: &[f64], w: usize) -> Vec<f64> {
    losses
        .chunks(w)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}

#[test]
fn default_configs_decrease_loss_on_umls() {
    let g = umls();
    for family in ModelFamily::ALL {
        let out = Trainer::<f32>::new(TrainConfig::default_for(family))
            .unwrap()
            .train(&g)
            .unwrap();
        assert!(out.model.is_finite());
        let s = smoothed(&out.epoch_losses, 50);
        for w in s.windows(2) {
            assert!(w[1] <= w[0], "{family:?}: smoothed loss rose {:?}", s);
        }
    }
}
