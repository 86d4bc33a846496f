mod common;

use ndarray::{s, Array1, Array2};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use seeable::factory::ClassLayout;
use seeable::graph::PatchGraph;
use seeable::losses::{
    bcr, guidance_loss, lambda_schedule, nt_xent, objective, supcon, total_loss, EmbeddingBatch,
    Objective, Targets, Temperature,
};
use seeable::prototypes::{make_simplex_prototypes, PrototypeSet};
use seeable::seed::rng_for;

use common::*;

/// 2x2 grid, two types, reserve slot: 9 prototypes.
struct Setup {
    layout: ClassLayout,
    graph: PatchGraph,
    protos: PrototypeSet,
}

impl Setup {
    fn new(dim: usize) -> Self {
        let layout = ClassLayout::new(2, 2, 1).unwrap();
        Self {
            graph: PatchGraph::grid(2, 2).unwrap(),
            protos: make_simplex_prototypes(dim, layout.n_prototypes()).unwrap(),
            layout,
        }
    }

    fn targets(&self) -> Targets<'_> {
        Targets::new(&self.protos, self.layout, &self.graph).unwrap()
    }
}

fn random_batch(
    n: usize,
    d: usize,
    n_classes: usize,
    rng: &mut impl Rng,
) -> (Array2<f64>, Vec<usize>) {
    let mut labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n_classes)).collect();
    labels[1] = labels[0];
    (random_matrix(n, d, rng), labels)
}

/// Prediction and guidance computed from first principles.
fn guidance_oracle_value(z: &Array2<f64>, labels: &[usize], setup: &Setup) -> f64 {
    let mut u = z.clone();
    normalize_rows(&mut u);
    let p = setup.protos.vectors();
    let off = setup.layout.reserve_offset;
    let mut total = 0.0;
    for i in 0..z.nrows() {
        let sims: Vec<f64> = (0..setup.layout.n_classes())
            .map(|k| u.row(i).dot(&p.row(k + off)))
            .collect();
        let mut pred = 0;
        for k in 1..sims.len() {
            if sims[k] > sims[pred] {
                pred = k;
            }
        }
        let g = guidance_oracle(pred, labels[i], 2, 2, 2);
        total += g * (1.0 - sims[labels[i]]);
    }
    total
}

#[test]
fn loss_values_match_oracles() {
    let setup = Setup::new(12);
    let tau = Temperature::new(0.2).unwrap();
    for inst in 0..20u64 {
        let mut rng = rng_for(0x1055, &[inst]);
        let (z, labels) = random_batch(10, 12, setup.layout.n_classes(), &mut rng);
        let batch = EmbeddingBatch::normalized(z.clone(), labels.clone()).unwrap();
        let sc = supcon_oracle(&z, &labels, 0.2);
        let pt = proto_term_oracle(&z, &labels, setup.protos.vectors(), 1, 0.2);
        let gd = guidance_oracle_value(&z, &labels, &setup);
        assert!((supcon(&batch, tau).unwrap() - sc).abs() < 1e-10 * sc.abs().max(1.0));
        assert!(
            (bcr(&batch, &setup.targets(), tau).unwrap() - (sc + pt)).abs()
                < 1e-10 * (sc + pt).max(1.0)
        );
        assert!(
            (guidance_loss(&batch, &setup.targets()).unwrap() - gd).abs() < 1e-10 * gd.max(1.0)
        );
        let total = total_loss(&batch, &setup.targets(), tau, 0.3).unwrap();
        assert!((total - (sc + pt + 0.3 * gd)).abs() < 1e-10 * total.max(1.0));
    }
}

#[test]
fn gradients_match_finite_differences() {
    let setup = Setup::new(10);
    let targets = setup.targets();
    let tau = Temperature::new(0.1).unwrap();
    for inst in 0..20u64 {
        let mut rng = rng_for(0x9d, &[inst]);
        let (z, labels) = random_batch(8, 10, setup.layout.n_classes(), &mut rng);
        for (kind, lambda) in [
            (Objective::Supcon, 0.0),
            (Objective::Seeable, 0.0),
            (Objective::Seeable, 0.7),
            (Objective::CrossEntropy, 0.0),
        ] {
            let grad = objective(z.view(), &labels, &targets, tau, lambda, kind, true)
                .unwrap()
                .1
                .unwrap();
            let fd = finite_difference(z.as_slice().unwrap(), 1e-5, |x| {
                let zz = Array2::from_shape_vec(z.raw_dim(), x.to_vec()).unwrap();
                objective(zz.view(), &labels, &targets, tau, lambda, kind, false)
                    .unwrap()
                    .0
                    .total
            });
            let err = relative_error(grad.as_slice().unwrap(), &fd);
            assert!(err < 1e-4, "{kind:?} lambda {lambda}: relative error {err}");
        }
    }
}

#[test]
fn degenerate_batches_are_rejected() {
    let setup = Setup::new(8);
    let tau = Temperature::default();
    let z = Array2::from_shape_fn((3, 8), |(i, j)| if i == j { 1.0 } else { 0.0 });
    let distinct = EmbeddingBatch::normalized(z.clone(), vec![0, 1, 2]).unwrap();
    assert!(supcon(&distinct, tau).is_err());
    assert!(EmbeddingBatch::normalized(z.slice(s![..1, ..]).to_owned(), vec![0]).is_err());
    assert!(EmbeddingBatch::normalized(z.clone(), vec![0, 1]).is_err());
    let bad_label = EmbeddingBatch::normalized(z, vec![0, 0, 99]).unwrap();
    assert!(bcr(&bad_label, &setup.targets(), tau).is_err());
    assert!(Temperature::new(0.0).is_err());
    assert!(Temperature::new(f64::NAN).is_err());
}

#[test]
fn guidance_vanishes_only_at_the_prototypes() {
    let setup = Setup::new(8);
    let labels = vec![0, 3, 5, 5];
    let on = Array2::from_shape_fn((4, 8), |(i, j)| {
        setup.protos.get(setup.layout.proto_index(labels[i]))[j]
    });
    let batch = EmbeddingBatch::normalized(on.clone(), labels.clone()).unwrap();
    assert!(guidance_loss(&batch, &setup.targets()).unwrap().abs() < 1e-12);
    let mut off = on;
    off[[2, 0]] += 0.1;
    let batch = EmbeddingBatch::normalized(off, labels).unwrap();
    assert!(guidance_loss(&batch, &setup.targets()).unwrap() > 0.0);
}

/// Rotates the positive towards the anchor with the negatives held fixed:
/// the prototype-anchored term must never grow as the positive similarity
/// rises.
#[test]
fn raising_the_positive_similarity_never_raises_nt_xent() {
    let tau = Temperature::new(0.1).unwrap();
    let mut rng = rng_for(0xc105e, &[]);
    for _ in 0..10 {
        let negatives = random_matrix(5, 6, &mut rng);
        let anchor = Array1::from_vec(vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let mut last = f64::INFINITY;
        for step in 0..=40 {
            let theta = std::f64::consts::PI * (1.0 - step as f64 / 40.0);
            let positive = Array1::from_vec(vec![theta.cos(), theta.sin(), 0.0, 0.0, 0.0, 0.0]);
            let l = nt_xent(anchor.view(), positive.view(), negatives.view(), tau).unwrap();
            assert!(l <= last, "step {step}: {l} > {last}");
            last = l;
        }
    }
}

/// The per-anchor prototype term is NT-Xent against the other-class batch
/// members and the other prototypes, divided by the positive count.
#[test]
fn prototype_term_decomposes_into_nt_xent() {
    let setup = Setup::new(12);
    let tau = Temperature::new(0.2).unwrap();
    let mut rng = rng_for(0x7e, &[]);
    let (z, labels) = random_batch(7, 12, setup.layout.n_classes(), &mut rng);
    let p = setup.protos.vectors();
    let mut want = 0.0;
    for i in 0..7 {
        let t = setup.layout.proto_index(labels[i]);
        let rows: Vec<Vec<f64>> = (0..7)
            .filter(|&j| labels[j] != labels[i])
            .map(|j| z.row(j).to_vec())
            .chain(
                (0..p.nrows())
                    .filter(|&k| k != t)
                    .map(|k| p.row(k).to_vec()),
            )
            .collect();
        let neg = Array2::from_shape_fn((rows.len(), 12), |(a, b)| rows[a][b]);
        let n_pos = labels.iter().filter(|&&l| l == labels[i]).count() - 1;
        want += nt_xent(z.row(i), p.row(t), neg.view(), tau).unwrap() / n_pos.max(1) as f64;
    }
    let got = objective(
        z.view(),
        &labels,
        &setup.targets(),
        tau,
        0.0,
        Objective::Seeable,
        false,
    )
    .unwrap()
    .0
    .proto;
    assert!((got - want).abs() < 1e-10 * want, "{got} vs {want}");
}

#[test]
fn lambda_ramp_is_linear() {
    assert_eq!(lambda_schedule(0, 10, 0.1), 0.0);
    assert_eq!(lambda_schedule(9, 10, 0.1), 0.1);
    assert!((lambda_schedule(3, 7, 0.6) - 0.3).abs() < 1e-15);
    assert_eq!(lambda_schedule(0, 1, 0.1), 0.0);
}

fn permuted(z: &Array2<f64>, labels: &[usize], perm: &[usize]) -> (Array2<f64>, Vec<usize>) {
    let zp = Array2::from_shape_fn(z.raw_dim(), |(i, j)| z[[perm[i], j]]);
    (zp, perm.iter().map(|&i| labels[i]).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn losses_ignore_row_order(seed in any::<u64>(), n in 3usize..12) {
        let setup = Setup::new(10);
        let tau = Temperature::new(0.15).unwrap();
        let mut rng = rng_for(seed, &[]);
        let (z, labels) = random_batch(n, 10, setup.layout.n_classes(), &mut rng);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let (zp, lp) = permuted(&z, &labels, &perm);
        let a = EmbeddingBatch::normalized(z, labels).unwrap();
        let b = EmbeddingBatch::normalized(zp, lp).unwrap();
        let t = setup.targets();
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-10 * x.abs().max(1.0);
        prop_assert!(close(supcon(&a, tau).unwrap(), supcon(&b, tau).unwrap()));
        prop_assert!(close(bcr(&a, &t, tau).unwrap(), bcr(&b, &t, tau).unwrap()));
        prop_assert!(close(guidance_loss(&a, &t).unwrap(), guidance_loss(&b, &t).unwrap()));
    }

    #[test]
    fn losses_ignore_joint_rotations(seed in any::<u64>()) {
        let dim = 10;
        let setup = Setup::new(dim);
        let tau = Temperature::new(0.15).unwrap();
        let mut rng = rng_for(seed, &[]);
        let (z, labels) = random_batch(8, dim, setup.layout.n_classes(), &mut rng);
        let q = random_orthogonal(dim, &mut rng);
        let rotated = Setup {
            protos: PrototypeSet::from_matrix(setup.protos.vectors().dot(&q)).unwrap(),
            layout: setup.layout,
            graph: setup.graph.clone(),
        };
        let a = EmbeddingBatch::normalized(z.clone(), labels.clone()).unwrap();
        let b = EmbeddingBatch::normalized(z.dot(&q), labels).unwrap();
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-9 * x.abs().max(1.0);
        prop_assert!(close(bcr(&a, &setup.targets(), tau).unwrap(), bcr(&b, &rotated.targets(), tau).unwrap()));
        prop_assert!(close(
            guidance_loss(&a, &setup.targets()).unwrap(),
            guidance_loss(&b, &rotated.targets()).unwrap()
        ));
    }

    #[test]
    fn guidance_is_nonnegative(seed in any::<u64>()) {
        let setup = Setup::new(10);
        let mut rng = rng_for(seed, &[]);
        let (z, labels) = random_batch(6, 10, setup.layout.n_classes(), &mut rng);
        let b = EmbeddingBatch::normalized(z, labels).unwrap();
        prop_assert!(guidance_loss(&b, &setup.targets()).unwrap() >= 0.0);
    }
}
