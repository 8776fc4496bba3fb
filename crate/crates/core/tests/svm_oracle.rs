mod common;

use std::collections::BTreeMap;

use common::{qp_oracle, Problem};
use mcle_core::svm::{BiasMode, LinearModel, SolverConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Trains in a few random batches so the warm start is exercised.
fn train_in_batches(p: &Problem, config: SolverConfig, seed: u64) -> LinearModel {
    let pool = p.pool();
    let labels = p.labels();
    let mut order: Vec<usize> = (0..p.x.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut model = LinearModel::new(p.dim, p.x.len(), config).unwrap();
    let mut seen = BTreeMap::new();
    for chunk in order.chunks(3) {
        for &i in chunk {
            seen.insert(i, labels[&i]);
        }
        model.train_incremental(&pool, &seen, chunk).unwrap();
    }
    model
}

/// Worst KKT violation recomputed from the multipliers alone.
fn kkt_violation(p: &Problem, model: &LinearModel, c: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..p.x.len() {
        let m = p.y[i] * model.score(&p.x[i]);
        let a = model.alpha(i);
        let v = if a <= 1e-12 {
            (1.0 - m).max(0.0)
        } else if a >= c - 1e-12 {
            (m - 1.0).max(0.0)
        } else {
            (m - 1.0).abs()
        };
        worst = worst.max(v);
    }
    worst
}

fn check(seed: u64, bias: BiasMode) {
    let p = Problem::random(seed, 20, 5);
    let config = SolverConfig {
        bias_mode: bias,
        ..SolverConfig::default()
    };
    let model = train_in_batches(&p, config, seed);
    let alpha: Vec<f64> = (0..p.x.len()).map(|i| model.alpha(i)).collect();
    let ours = p.dual_objective(&alpha);
    let reference = p.dual_objective(&qp_oracle(&p, 1.0, bias == BiasMode::Constrained));
    let rel = (ours - reference).abs() / reference.abs().max(1e-12);
    assert!(
        rel <= 1e-4,
        "seed {seed}: objective {ours} vs oracle {reference} (rel {rel:e})"
    );
    assert!(
        ours <= reference + 1e-9 * reference.abs().max(1.0),
        "seed {seed}: above the optimum"
    );
    assert!((model.dual_objective(&p.pool()) - ours).abs() < 1e-9);
    let kkt = model.check_kkt(&p.pool());
    assert!(
        kkt.max_residual <= 1e-3,
        "seed {seed}: KKT residual {}",
        kkt.max_residual
    );
    assert!(kkt_violation(&p, &model, 1.0) <= 1e-3, "seed {seed}");
    if bias == BiasMode::Constrained {
        let eq: f64 = alpha.iter().zip(&p.y).map(|(a, y)| a * y).sum();
        assert!(eq.abs() <= 1e-6, "seed {seed}: equality residual {eq:e}");
    } else {
        assert_eq!(model.b(), 0.0);
    }
}

#[test]
fn matches_qp_oracle_on_random_problems() {
    for seed in 0..50 {
        check(seed, BiasMode::Constrained);
    }
}

#[test]
fn unbiased_mode_matches_box_qp_oracle() {
    for seed in 100..130 {
        check(seed, BiasMode::None);
    }
}

#[test]
fn batch_order_does_not_change_the_optimum() {
    for seed in 200..210 {
        let p = Problem::random(seed, 20, 5);
        let a = train_in_batches(&p, SolverConfig::default(), 1);
        let b = train_in_batches(&p, SolverConfig::default(), 2);
        let oa = a.dual_objective(&p.pool());
        let ob = b.dual_objective(&p.pool());
        assert!(
            (oa - ob).abs() <= 1e-4 * oa.abs().max(1e-12),
            "seed {seed}: {oa} vs {ob}"
        );
    }
}

/// Oracle values recorded once and frozen; guards the oracle itself
/// against silent drift.
#[test]
fn frozen_oracle_values() {
    let p = Problem {
        dim: 2,
        x: vec![
            vec![2.0, 0.0],
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            vec![-1.0, 0.5],
        ],
        y: vec![1.0, -1.0, 1.0, -1.0],
    };
    let alpha = qp_oracle(&p, 1.0, true);
    let obj = p.dual_objective(&alpha);
    assert!(
        (obj - FROZEN_OBJECTIVE).abs() < 1e-9,
        "oracle objective {obj}"
    );
    for (a, want) in alpha.iter().zip([0.0, 1.0, 1.0, 0.0]) {
        assert!((a - want).abs() < 1e-9);
    }
    let model = train_in_batches(&p, SolverConfig::default(), 0);
    assert!((model.dual_objective(&p.pool()) - FROZEN_OBJECTIVE).abs() < 1e-6);
}

// alpha = (0, 1, 1, 0): w = (1, 1), b = -1; samples 1 and 2 sit at the
// box bound with margin exactly 1, sample 3 has margin 1.5.
const FROZEN_OBJECTIVE: f64 = 1.0;
