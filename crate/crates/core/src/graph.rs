//! Patch adjacency graph and the geometry-aware penalty used by the
//! guidance loss.

use std::collections::VecDeque;
use std::fmt::Write as _;

use crate::error::{bail, Result};

/// 4-connected lattice over a `rows x cols` patch grid with unit edges,
/// with all-pairs hop distances precomputed by breadth-first search.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchGraph {
    rows: usize,
    cols: usize,
    adjacency: Vec<Vec<usize>>,
    distances: Vec<Option<u32>>,
}

impl PatchGraph {
    pub fn grid(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            bail!(Domain, "grid graph needs at least one row and column");
        }
        let n = rows * cols;
        let mut adjacency = vec![Vec::new(); n];
        for r in 0..rows {
            for c in 0..cols {
                let i = r * cols + c;
                if c + 1 < cols {
                    adjacency[i].push(i + 1);
                    adjacency[i + 1].push(i);
                }
                if r + 1 < rows {
                    adjacency[i].push(i + cols);
                    adjacency[i + cols].push(i);
                }
            }
        }
        for nbrs in &mut adjacency {
            nbrs.sort_unstable();
        }
        Ok(Self::from_adjacency(rows, cols, adjacency))
    }

    fn from_adjacency(rows: usize, cols: usize, adjacency: Vec<Vec<usize>>) -> Self {
        let n = adjacency.len();
        let mut distances = vec![None; n * n];
        for src in 0..n {
            let row = &mut distances[src * n..(src + 1) * n];
            row[src] = Some(0);
            let mut queue = VecDeque::from([src]);
            while let Some(u) = queue.pop_front() {
                let du = row[u].unwrap();
                for &v in &adjacency[u] {
                    if row[v].is_none() {
                        row[v] = Some(du + 1);
                        queue.push_back(v);
                    }
                }
            }
        }
        Self {
            rows,
            cols,
            adjacency,
            distances,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn n_nodes(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn is_adjacent(&self, i: usize, j: usize) -> bool {
        self.adjacency[i].binary_search(&j).is_ok()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Minimum number of edges between two patches.
    pub fn distance(&self, i: usize, j: usize) -> Result<u32> {
        let n = self.n_nodes();
        if i >= n || j >= n {
            bail!(Domain, "node out of range ({i}, {j}) for {n} nodes");
        }
        match self.distances[i * n + j] {
            Some(d) => Ok(d),
            None => bail!(Domain, "nodes {i} and {j} are disconnected"),
        }
    }

    /// Mirror of a patch about the vertical center axis.
    pub fn sym(&self, loc: usize) -> usize {
        sym(loc, self.rows, self.cols)
    }

    /// Distance matrix as comma-separated text, one row per node.
    pub fn distance_table(&self) -> String {
        let n = self.n_nodes();
        let mut out = String::new();
        for i in 0..n {
            let row: Vec<String> = (0..n)
                .map(|j| match self.distances[i * n + j] {
                    Some(d) => d.to_string(),
                    None => "inf".into(),
                })
                .collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }
}

pub fn sym(loc: usize, rows: usize, cols: usize) -> usize {
    debug_assert!(loc < rows * cols);
    let (r, c) = (loc / cols, loc % cols);
    r * cols + (cols - 1 - c)
}

/// Penalty for predicting class `pred` when the truth is `truth`:
/// 1/4 for the right patch, 1/2 for its mirror image, otherwise the hop
/// distance between the two patches.
pub fn guidance_weight(
    pred: usize,
    truth: usize,
    graph: &PatchGraph,
    n_type: usize,
) -> Result<f64> {
    let n_classes = graph.n_nodes() * n_type;
    if pred >= n_classes || truth >= n_classes {
        bail!(
            Domain,
            "class out of range ({pred}, {truth}) for {n_classes} classes"
        );
    }
    let (p, t) = (pred / n_type, truth / n_type);
    Ok(if p == t {
        0.25
    } else if graph.sym(p) == t {
        0.5
    } else {
        graph.distance(p, t)? as f64
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edge_counts() {
        for (r, c, e) in [(4, 4, 24), (1, 1, 0), (2, 3, 7)] {
            let g = PatchGraph::grid(r, c).unwrap();
            assert_eq!(g.n_nodes(), r * c);
            assert_eq!(g.edge_count(), e);
            assert_eq!(e, r * (c - 1) + c * (r - 1));
        }
    }

    #[test]
    fn adjacency_is_symmetric_and_irreflexive() {
        let g = PatchGraph::grid(3, 5).unwrap();
        for i in 0..15 {
            assert!(!g.is_adjacent(i, i));
            for j in 0..15 {
                assert_eq!(g.is_adjacent(i, j), g.is_adjacent(j, i));
            }
        }
    }

    #[test]
    fn distances_on_4x4() {
        let g = PatchGraph::grid(4, 4).unwrap();
        assert_eq!(g.distance(0, 0).unwrap(), 0);
        assert_eq!(g.distance(0, 15).unwrap(), 6);
        assert_eq!(g.distance(5, 6).unwrap(), 1);
        assert!(g.distance(0, 16).is_err());
        assert!(g.distance_table().starts_with("0,1,2,3,1,2,3,4"));
    }

    #[test]
    fn mirror() {
        assert_eq!(sym(0, 4, 4), 3);
        assert_eq!(sym(5, 4, 4), 6);
        for r in 0..3 {
            assert_eq!(sym(r * 3 + 1, 3, 3), r * 3 + 1);
        }
    }

    #[test]
    fn weight_branches() {
        let g = PatchGraph::grid(4, 4).unwrap();
        assert_eq!(guidance_weight(7, 7, &g, 2).unwrap(), 0.25);
        // same position, different type
        assert_eq!(guidance_weight(6, 7, &g, 2).unwrap(), 0.25);
        // position 1 mirrors position 2
        assert_eq!(guidance_weight(2, 5, &g, 2).unwrap(), 0.5);
        // cell 0 vs cell 15
        assert_eq!(guidance_weight(0, 31, &g, 2).unwrap(), 6.0);
        assert!(guidance_weight(32, 0, &g, 2).is_err());
    }
}
