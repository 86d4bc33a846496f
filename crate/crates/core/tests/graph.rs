mod common;

use proptest::prelude::*;

use seeable::graph::{guidance_weight, sym, PatchGraph};

use common::{guidance_oracle, manhattan};

#[test]
fn hop_distance_is_manhattan() {
    for rows in 1..=6 {
        for cols in 1..=6 {
            let g = PatchGraph::grid(rows, cols).unwrap();
            assert_eq!(g.edge_count(), rows * (cols - 1) + cols * (rows - 1));
            for a in 0..rows * cols {
                for b in 0..rows * cols {
                    assert_eq!(
                        g.distance(a, b).unwrap(),
                        manhattan(a, b, cols),
                        "{rows}x{cols} ({a}, {b})"
                    );
                    assert_eq!(g.is_adjacent(a, b), manhattan(a, b, cols) == 1);
                }
            }
        }
    }
}

#[test]
fn empty_grids_and_stray_nodes_are_rejected() {
    assert!(PatchGraph::grid(0, 3).is_err());
    let g = PatchGraph::grid(2, 2).unwrap();
    assert!(g.distance(0, 4).is_err());
    assert!(guidance_weight(8, 0, &g, 2).is_err());
}

#[test]
fn guidance_weight_matches_oracle() {
    for (rows, cols) in [(3, 3), (4, 4), (5, 5), (4, 6), (1, 2)] {
        let g = PatchGraph::grid(rows, cols).unwrap();
        let n = rows * cols * 2;
        for pred in 0..n {
            for truth in 0..n {
                let w = guidance_weight(pred, truth, &g, 2).unwrap();
                assert_eq!(
                    w,
                    guidance_oracle(pred, truth, rows, cols, 2),
                    "{rows}x{cols} ({pred}, {truth})"
                );
                assert!(w > 0.0);
            }
        }
    }
}

#[test]
fn distance_table_lists_every_pair() {
    let t = PatchGraph::grid(2, 2).unwrap().distance_table();
    assert_eq!(t, "0,1,1,2\n1,0,2,1\n1,2,0,1\n2,1,1,0\n");
}

proptest! {
    #[test]
    fn mirror_is_a_row_preserving_involution(rows in 1usize..10, cols in 1usize..10, seed in any::<usize>()) {
        let loc = seed % (rows * cols);
        let m = sym(loc, rows, cols);
        prop_assert_eq!(sym(m, rows, cols), loc);
        prop_assert_eq!(m / cols, loc / cols);
        prop_assert_eq!(m % cols + loc % cols, cols - 1);
    }

    #[test]
    fn type_only_errors_cost_least(rows in 1usize..6, cols in 1usize..6, seed in any::<usize>()) {
        let g = PatchGraph::grid(rows, cols).unwrap();
        let n = rows * cols * 2;
        let truth = seed % n;
        let type_only = guidance_weight(truth ^ 1, truth, &g, 2).unwrap();
        prop_assert_eq!(type_only, 0.25);
        for pred in 0..n {
            prop_assert!(guidance_weight(pred, truth, &g, 2).unwrap() >= type_only);
        }
    }
}
