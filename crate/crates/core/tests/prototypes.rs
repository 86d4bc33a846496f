mod common;

use proptest::prelude::*;

use seeable::prototypes::{
    cosine_similarity, d_sim, make_simplex_prototypes, match_prototype, PrototypeSet,
};

use common::riesz_minimizer;

/// Gram matrices are rotation invariant, so they compare configurations
/// without aligning them first.
fn gram(m: &ndarray::Array2<f64>) -> ndarray::Array2<f64> {
    m.dot(&m.t())
}

#[test]
fn simplex_matches_energy_minimizer() {
    for (dim, count) in [(8, 5), (6, 7), (10, 4), (3, 3)] {
        let ours = gram(make_simplex_prototypes(dim, count).unwrap().vectors());
        let oracle = gram(&riesz_minimizer(dim, count, dim as u64));
        let worst = (&ours - &oracle).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(
            worst < 1e-6,
            "({dim}, {count}): Gram matrices differ by {worst}"
        );
    }
}

#[test]
fn paper_scale_gram() {
    let p = make_simplex_prototypes(128, 33).unwrap();
    let g = gram(p.vectors());
    for i in 0..33 {
        for j in 0..33 {
            let want = if i == j { 1.0 } else { -1.0 / 32.0 };
            assert!((g[[i, j]] - want).abs() < 1e-9);
        }
    }
}

#[test]
fn invalid_shapes_are_dimension_errors() {
    for (d, k) in [(4, 6), (1, 3), (10, 1), (0, 0)] {
        assert!(make_simplex_prototypes(d, k).is_err(), "({d}, {k})");
    }
    assert!(matches!(
        make_simplex_prototypes(4, 6),
        Err(seeable::Error::Dimension(_))
    ));
}

#[test]
fn persistence_round_trip() {
    let p = make_simplex_prototypes(16, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.bin");
    p.save(&path).unwrap();
    assert_eq!(PrototypeSet::load(&path).unwrap(), p);
}

#[test]
fn similarity_examples() {
    assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 2.0]).unwrap(), 0.0);
    assert_eq!(d_sim(&[1.0, 1.0], &[-3.0, -3.0]).unwrap(), 2.0);
    assert!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    assert!(cosine_similarity(&[1.0], &[1.0, 0.0]).is_err());
}

fn shape() -> impl Strategy<Value = (usize, usize)> {
    (2usize..40).prop_flat_map(|d| (Just(d), 2..=d + 1))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gram_is_constant_off_the_diagonal((d, k) in shape()) {
        let p = make_simplex_prototypes(d, k).unwrap();
        let target = -1.0 / (k as f64 - 1.0);
        let g = gram(p.vectors());
        for i in 0..k {
            for j in 0..k {
                let want = if i == j { 1.0 } else { target };
                prop_assert!((g[[i, j]] - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn every_prototype_matches_itself((d, k) in shape(), scale in 1e-3f64..1e3) {
        let p = make_simplex_prototypes(d, k).unwrap();
        for i in 0..k {
            let v: Vec<f64> = p.get(i).to_vec();
            prop_assert_eq!(match_prototype(&v, &p).unwrap(), i);
            let scaled: Vec<f64> = v.iter().map(|x| x * scale).collect();
            prop_assert_eq!(match_prototype(&scaled, &p).unwrap(), i);
        }
    }

    #[test]
    fn matching_ignores_positive_scale(
        (d, k) in shape(),
        seed in any::<u64>(),
        scale in 1e-3f64..1e3,
    ) {
        use rand::Rng;
        let p = make_simplex_prototypes(d, k).unwrap();
        let mut rng = seeable::seed::rng_for(seed, &[]);
        let z: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let zs: Vec<f64> = z.iter().map(|x| x * scale).collect();
        prop_assert_eq!(match_prototype(&z, &p).unwrap(), match_prototype(&zs, &p).unwrap());
    }

    #[test]
    fn full_simplex_is_centered(d in 1usize..60) {
        let p = make_simplex_prototypes(d, d + 1).unwrap();
        let mean = p.vectors().mean_axis(ndarray::Axis(0)).unwrap();
        prop_assert!(mean.dot(&mean).sqrt() <= 1e-8);
    }
}
