mod common;

use common::{kink_gap, numeric_gradient, rel_err, random_batch, random_matrix};
use hfe_core::loss::{
    abr_loss, ce_loss, dynamic_weight, hfe_loss, inter_loss, intra_loss, pairwise_intra_loss, Component,
    MarginSet, MinedBatch, PROB_EPS,
};
use hfe_core::mining::{attribute_distances, mine_batch};
use hfe_core::{Batch, HfeRng, Matrix, Quintuplet};
use proptest::prelude::*;

fn scalar_ce(probs: &Matrix, labels: &Matrix) -> f64 {
    let mut total = 0.0;
    for i in 0..probs.rows() {
        for j in 0..probs.cols() {
            let p = probs[(i, j)].clamp(PROB_EPS, 1.0 - PROB_EPS);
            let y = labels[(i, j)];
            total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        }
    }
    total / probs.rows() as f64
}

#[test]
fn ce_matches_scalar_oracle() {
    let mut rng = HfeRng::new(8);
    for _ in 0..100 {
        let (b, m) = (1 + rng.below(10), 1 + rng.below(4));
        let probs = Matrix::from_vec(b, m, (0..b * m).map(|_| rng.uniform(0.01, 0.99)).collect());
        let labels = Matrix::from_vec(b, m, (0..b * m).map(|_| rng.below(2) as f64).collect());
        let out = ce_loss(&probs, &labels).unwrap();
        assert!((out.value - scalar_ce(&probs, &labels)).abs() <= 1e-12);
        assert_eq!(out.count, b * m);
        for i in 0..b {
            for j in 0..m {
                let want = (probs[(i, j)] - labels[(i, j)]) / b as f64;
                assert!((out.d_logits[(i, j)] - want).abs() <= 1e-15);
            }
        }
    }
}

#[test]
fn ce_clamps_saturated_probabilities() {
    let probs = Matrix::from_rows(&[[0.0, 1.0]]);
    let labels = Matrix::from_rows(&[[1.0, 0.0]]);
    let v = ce_loss(&probs, &labels).unwrap().value;
    assert!(v.is_finite());
    let want = -PROB_EPS.ln() - (1.0 - (1.0 - PROB_EPS)).ln();
    assert!((v - want).abs() < 1e-9);
}

struct Instance {
    batch: Batch,
    emb: Vec<Matrix>,
    quints: Vec<Quintuplet>,
}

fn instance(rng: &mut HfeRng) -> Instance {
    let batch = random_batch(rng, 12, 2, 4, 1);
    let emb = vec![random_matrix(rng, 12, 4, 1.0), random_matrix(rng, 12, 4, 1.0)];
    let (_, quints) = mine_batch(&emb, &batch).unwrap();
    Instance { batch, emb, quints }
}

fn evaluate(emb: &[Matrix], quints: &[Quintuplet], f: &dyn Fn(&MinedBatch<'_>) -> Component) -> Component {
    let dists = attribute_distances(emb).unwrap();
    f(&MinedBatch::new(emb, &dists, quints))
}

fn check_gradient(name: &str, inst: &Instance, f: &dyn Fn(&MinedBatch<'_>) -> Component) {
    let base = evaluate(&inst.emb, &inst.quints, f);
    for (j, e) in inst.emb.iter().enumerate() {
        let numeric = numeric_gradient(e.as_slice(), 1e-5, |x| {
            let mut emb = inst.emb.clone();
            emb[j] = Matrix::from_vec(e.rows(), e.cols(), x.to_vec());
            evaluate(&emb, &inst.quints, f).value
        });
        for (k, (&a, &n)) in base.grads[j].as_slice().iter().zip(&numeric).enumerate() {
            assert!(rel_err(a, n) < 1e-4, "{name}: attr {j} entry {k}: analytic {a}, numeric {n}");
        }
    }
}

#[test]
fn loss_gradients_match_finite_differences() {
    // Small alpha3 keeps the boundary term active on some anchors and not others.
    let m = MarginSet::new(0.3, 0.1, 1.2).unwrap();
    let mut rng = HfeRng::new(77);
    let mut checked = 0;
    while checked < 40 {
        let inst = instance(&mut rng);
        if kink_gap(&inst.emb, &inst.quints, m.alpha1, m.alpha2, m.alpha3) < 1e-3 {
            continue;
        }
        check_gradient("inter", &inst, &|mb| inter_loss(mb, m.alpha1));
        check_gradient("intra", &inst, &|mb| intra_loss(mb, m.alpha2));
        check_gradient("abr", &inst, &|mb| abr_loss(mb, m.alpha3));
        check_gradient("pairwise", &inst, &|mb| pairwise_intra_loss(mb, m.alpha2));
        checked += 1;
    }
}

#[test]
fn hfe_is_sum_of_parts() {
    let mut rng = HfeRng::new(4);
    for _ in 0..50 {
        let inst = instance(&mut rng);
        let dists = attribute_distances(&inst.emb).unwrap();
        let mined = MinedBatch::new(&inst.emb, &dists, &inst.quints);
        let parts = hfe_loss(&mined, &MarginSet::default());
        let sum = inter_loss(&mined, 0.3).value + intra_loss(&mined, 0.1).value + abr_loss(&mined, 5.0).value;
        assert!((parts.value() - sum).abs() <= 1e-12);
        assert_eq!(inst.batch.len(), 12);
    }
}

#[test]
fn per_attribute_means_are_summed() {
    // Two attributes with one valid inter term each: anchor 0 of each space.
    let emb = vec![
        Matrix::from_rows(&[[0.0], [0.5], [0.5]]),
        Matrix::from_rows(&[[0.0], [0.2], [0.4]]),
    ];
    let q = |attr| Quintuplet {
        attr,
        anchor: 0,
        p1: None,
        p2: Some(1),
        p3: Some(1),
        n: Some(2),
    };
    let quints = [q(0), q(1)];
    let c = evaluate(&emb, &quints, &|mb| inter_loss(mb, 0.3));
    // attr 0: 0.5 - 0.5 + 0.3; attr 1: 0.2 - 0.4 + 0.3
    assert!((c.value - (0.3 + 0.1)).abs() < 1e-12);
    assert_eq!(c.count, 2);
}

#[test]
fn satisfied_margins_give_exact_zero() {
    // Identity clusters along a line, classes far apart.
    let rows: Vec<[f64; 1]> = vec![[0.0], [0.01], [1.0], [1.01], [20.0], [20.01], [21.0], [21.01]];
    let emb = vec![Matrix::from_rows(&rows)];
    let samples = (0..8)
        .map(|i| hfe_core::Sample::new(vec![0.0], vec![u8::from(i >= 4)], (i / 2) as u64))
        .collect();
    let batch = Batch::from_samples(samples).unwrap();
    let (dists, quints) = mine_batch(&emb, &batch).unwrap();
    let parts = hfe_loss(&MinedBatch::new(&emb, &dists, &quints), &MarginSet::default());
    assert_eq!(parts.value(), 0.0);
    for c in [&parts.inter, &parts.intra, &parts.abr] {
        assert!(c.grads[0].as_slice().iter().all(|&g| g == 0.0));
    }
}

#[test]
fn schedule_endpoints_and_sweep() {
    for t in [1u64, 2, 10, 2000, 10_000] {
        assert_eq!(dynamic_weight(0, t, 1.0).unwrap(), 0.0);
        assert_eq!(dynamic_weight(t, t, 1.0).unwrap(), 1.0);
        if t % 2 == 0 {
            assert_eq!(dynamic_weight(t / 2, t, 1.0).unwrap(), 0.5);
            assert_eq!(dynamic_weight(t / 2, t, 3.0).unwrap(), 1.5);
        }
    }
    let t = 10_000;
    let mut prev = 0.0;
    for i in 0..=t {
        let w = dynamic_weight(i, t, 1.0).unwrap();
        assert!(w >= prev, "decrease at {i}");
        prev = w;
    }
    assert!(dynamic_weight(t + 1, t, 1.0).is_err());
    assert!(dynamic_weight(0, 0, 1.0).is_err());
}

proptest! {
    #[test]
    fn losses_non_negative_and_translation_invariant(seed in 0u64..500, shift in -5.0f64..5.0) {
        let mut rng = HfeRng::new(seed);
        let inst = instance(&mut rng);
        let moved: Vec<Matrix> = inst
            .emb
            .iter()
            .map(|e| Matrix::from_vec(e.rows(), e.cols(), e.as_slice().iter().map(|v| v + shift).collect()))
            .collect();
        let d0 = attribute_distances(&inst.emb).unwrap();
        let d1 = attribute_distances(&moved).unwrap();
        let p0 = hfe_loss(&MinedBatch::new(&inst.emb, &d0, &inst.quints), &MarginSet::default());
        let p1 = hfe_loss(&MinedBatch::new(&moved, &d1, &inst.quints), &MarginSet::default());
        for (a, b) in [(&p0.inter, &p1.inter), (&p0.intra, &p1.intra), (&p0.abr, &p1.abr)] {
            prop_assert!(a.value >= 0.0);
            prop_assert!((a.value - b.value).abs() < 1e-9);
        }
    }

    #[test]
    fn schedule_stays_within_bounds(t in 1u64..100_000, frac in 0.0f64..=1.0, w0 in 0.0f64..10.0) {
        let i = ((t as f64) * frac) as u64;
        let w = dynamic_weight(i, t, w0).unwrap();
        prop_assert!((0.0..=w0).contains(&w));
    }
}
