//! Contrastive objectives: NT-Xent, SupCon, bounded contrastive regression
//! (SupCon plus a prototype-anchored term), the guidance loss, and their
//! combination, each with an analytic gradient.
//!
//! Every loss is a sum over the batch (not a mean) and is written in terms
//! of cosine similarities, so gradients are taken with respect to the raw
//! (unnormalized) embedding rows.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::factory::ClassLayout;
use crate::graph::{guidance_weight, PatchGraph};
use crate::prototypes::{match_prototype_in, PrototypeSet};

/// Unit-norm projector outputs with their class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    z: Array2<f64>,
    h_norms: Vec<f64>,
    labels: Vec<usize>,
}

impl EmbeddingBatch {
    pub fn new(z: Array2<f64>, h_norms: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        let n = z.nrows();
        if n < 2 {
            bail!(Domain, "a batch needs at least two embeddings");
        }
        if labels.len() != n || h_norms.len() != n {
            bail!(
                Domain,
                "batch has {n} rows but {} labels / {} norms",
                labels.len(),
                h_norms.len()
            );
        }
        for row in z.rows() {
            let norm = row.dot(&row).sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                bail!(Domain, "embedding row has norm {norm}, expected 1");
            }
        }
        if h_norms.iter().any(|&h| !(h >= 0.0)) {
            bail!(Domain, "feature norms must be nonnegative");
        }
        Ok(Self { z, h_norms, labels })
    }

    /// Normalizes each row of `raw`; feature norms default to one.
    pub fn normalized(raw: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        let mut z = raw;
        for mut row in z.rows_mut() {
            let norm = row.dot(&row).sqrt();
            if norm == 0.0 {
                bail!(Domain, "zero embedding");
            }
            row.mapv_inplace(|v| v / norm);
        }
        let n = z.nrows();
        Self::new(z, vec![1.0; n], labels)
    }

    pub fn z(&self) -> &Array2<f64> {
        &self.z
    }

    pub fn h_norms(&self) -> &[f64] {
        &self.h_norms
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Softmax temperature.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            bail!(Domain, "temperature must be positive, got {tau}");
        }
        Ok(Self(tau))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Self(0.1)
    }
}

/// Which objective the trainer minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Bounded contrastive regression plus weighted guidance.
    #[default]
    Seeable,
    /// Plain supervised contrastive loss.
    Supcon,
    /// Softmax cross-entropy over cosine logits to the fixed prototypes.
    CrossEntropy,
}

fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<f64> {
    let (na, nb) = (a.dot(&a).sqrt(), b.dot(&b).sqrt());
    if na == 0.0 || nb == 0.0 {
        bail!(Domain, "zero vector in similarity");
    }
    Ok(a.dot(&b) / (na * nb))
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `-log(exp(s_ap/t) / (exp(s_ap/t) + sum_n exp(s_an/t)))` over cosine
/// similarities; the positive is always part of the denominator.
pub fn nt_xent(
    anchor: ArrayView1<f64>,
    positive: ArrayView1<f64>,
    negatives: ArrayView2<f64>,
    tau: Temperature,
) -> Result<f64> {
    if negatives.nrows() == 0 {
        bail!(Domain, "NT-Xent needs at least one negative");
    }
    let t = tau.get();
    let pos = cosine(anchor, positive)? / t;
    let mut logits = vec![pos];
    for n in negatives.rows() {
        logits.push(cosine(anchor, n)? / t);
    }
    Ok(log_sum_exp(logits.iter().copied()) - pos)
}

fn positive_counts(labels: &[usize]) -> Vec<usize> {
    labels
        .iter()
        .map(|&y| labels.iter().filter(|&&l| l == y).count() - 1)
        .collect()
}

/// Supervised contrastive loss; anchors without positives contribute 0.
pub fn supcon(batch: &EmbeddingBatch, tau: Temperature) -> Result<f64> {
    if positive_counts(&batch.labels).iter().all(|&c| c == 0) {
        bail!(Domain, "degenerate batch: no sample has a positive partner");
    }
    let spec = TermWeights {
        supcon: 1.0,
        proto: 0.0,
        cross_entropy: 0.0,
        guidance: 0.0,
        track_guidance: false,
    };
    Ok(
        evaluate(batch.z.view(), &batch.labels, None, tau, spec, false)?
            .0
            .supcon,
    )
}

fn check_protos(
    labels: &[usize],
    protos: &PrototypeSet,
    layout: &ClassLayout,
    dim: usize,
) -> Result<()> {
    if protos.count() != layout.n_prototypes() {
        bail!(
            Domain,
            "{} prototypes for a layout needing {}",
            protos.count(),
            layout.n_prototypes()
        );
    }
    if protos.dim() != dim {
        bail!(
            Domain,
            "prototype dim {} vs embedding dim {dim}",
            protos.dim()
        );
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= layout.n_classes()) {
        bail!(
            Domain,
            "label {y} out of range for {} classes",
            layout.n_classes()
        );
    }
    Ok(())
}

/// Prototype context shared by the regression and guidance terms.
#[derive(Debug, Clone, Copy)]
pub struct Targets<'a> {
    pub protos: &'a PrototypeSet,
    pub layout: ClassLayout,
    pub graph: &'a PatchGraph,
}

impl<'a> Targets<'a> {
    pub fn new(
        protos: &'a PrototypeSet,
        layout: ClassLayout,
        graph: &'a PatchGraph,
    ) -> Result<Self> {
        if graph.n_nodes() != layout.n_loc() {
            bail!(
                Domain,
                "graph has {} nodes, layout {} locations",
                graph.n_nodes(),
                layout.n_loc()
            );
        }
        if protos.count() != layout.n_prototypes() {
            bail!(
                Domain,
                "{} prototypes for a layout needing {}",
                protos.count(),
                layout.n_prototypes()
            );
        }
        Ok(Self {
            protos,
            layout,
            graph,
        })
    }

    /// Hard prediction restricted to the discrepancy classes.
    pub fn predict(&self, z: &[f64]) -> Result<usize> {
        let k = match_prototype_in(z, self.protos, self.layout.class_protos())?;
        Ok(k - self.layout.reserve_offset)
    }
}

/// Bounded contrastive regression: SupCon plus, for every anchor, NT-Xent
/// against its class prototype with the batch members of other classes and
/// the other prototypes as negatives, divided by its positive count (or 1).
pub fn bcr(batch: &EmbeddingBatch, targets: &Targets, tau: Temperature) -> Result<f64> {
    check_protos(
        &batch.labels,
        targets.protos,
        &targets.layout,
        batch.z.ncols(),
    )?;
    let spec = TermWeights {
        supcon: 1.0,
        proto: 1.0,
        cross_entropy: 0.0,
        guidance: 0.0,
        track_guidance: false,
    };
    let (terms, _) = evaluate(
        batch.z.view(),
        &batch.labels,
        Some(targets),
        tau,
        spec,
        false,
    )?;
    Ok(terms.bcr())
}

/// `sum_i G(pred_i, y_i) * (1 - sim(z_i, p_{y_i}))`.
pub fn guidance_loss(batch: &EmbeddingBatch, targets: &Targets) -> Result<f64> {
    check_protos(
        &batch.labels,
        targets.protos,
        &targets.layout,
        batch.z.ncols(),
    )?;
    let spec = TermWeights {
        supcon: 0.0,
        proto: 0.0,
        cross_entropy: 0.0,
        guidance: 1.0,
        track_guidance: false,
    };
    let (terms, _) = evaluate(
        batch.z.view(),
        &batch.labels,
        Some(targets),
        Temperature::default(),
        spec,
        false,
    )?;
    Ok(terms.guidance)
}

/// `bcr + lambda * guidance`.
pub fn total_loss(
    batch: &EmbeddingBatch,
    targets: &Targets,
    tau: Temperature,
    lambda: f64,
) -> Result<f64> {
    Ok(objective(
        batch.z.view(),
        &batch.labels,
        targets,
        tau,
        lambda,
        Objective::Seeable,
        false,
    )?
    .0
    .total)
}

/// Linear ramp from 0 at the first epoch to `lambda_max` at the last.
pub fn lambda_schedule(epoch: usize, total_epochs: usize, lambda_max: f64) -> f64 {
    if total_epochs <= 1 {
        return 0.0;
    }
    let e = epoch.min(total_epochs - 1);
    lambda_max * e as f64 / (total_epochs - 1) as f64
}

/// Individual loss components of one evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub supcon: f64,
    pub proto: f64,
    pub cross_entropy: f64,
    pub guidance: f64,
    pub lambda: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn bcr(&self) -> f64 {
        self.supcon + self.proto
    }
}

#[derive(Debug, Clone, Copy)]
struct TermWeights {
    supcon: f64,
    proto: f64,
    cross_entropy: f64,
    guidance: f64,
    /// Evaluate the guidance term even when its weight is zero.
    track_guidance: bool,
}

/// Value and (optionally) gradient of the chosen objective with respect to
/// the raw embedding rows `z`.
pub fn objective(
    z: ArrayView2<f64>,
    labels: &[usize],
    targets: &Targets,
    tau: Temperature,
    lambda: f64,
    kind: Objective,
    with_grad: bool,
) -> Result<(LossTerms, Option<Array2<f64>>)> {
    if !(lambda >= 0.0) {
        bail!(Domain, "lambda must be nonnegative");
    }
    check_protos(labels, targets.protos, &targets.layout, z.ncols())?;
    let spec = match kind {
        Objective::Seeable => TermWeights {
            supcon: 1.0,
            proto: 1.0,
            cross_entropy: 0.0,
            guidance: lambda,
            track_guidance: true,
        },
        Objective::Supcon => TermWeights {
            supcon: 1.0,
            proto: 0.0,
            cross_entropy: 0.0,
            guidance: 0.0,
            track_guidance: false,
        },
        Objective::CrossEntropy => TermWeights {
            supcon: 0.0,
            proto: 0.0,
            cross_entropy: 1.0,
            guidance: 0.0,
            track_guidance: false,
        },
    };
    let (mut terms, grad) = evaluate(z, labels, Some(targets), tau, spec, with_grad)?;
    terms.lambda = lambda;
    Ok((terms, grad))
}

fn evaluate(
    z: ArrayView2<f64>,
    labels: &[usize],
    targets: Option<&Targets>,
    tau: Temperature,
    w: TermWeights,
    with_grad: bool,
) -> Result<(LossTerms, Option<Array2<f64>>)> {
    let n = z.nrows();
    if n < 2 || labels.len() != n {
        bail!(Domain, "batch needs >= 2 rows and one label per row");
    }
    let t = tau.get();
    let norms: Vec<f64> = z.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    if norms.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        bail!(Domain, "zero or non-finite embedding");
    }
    let mut u = z.to_owned();
    for (mut row, &nr) in u.rows_mut().into_iter().zip(&norms) {
        row.mapv_inplace(|v| v / nr);
    }
    let s_bb = u.dot(&u.t());
    let s_bp = targets.map(|tg| u.dot(&tg.protos.vectors().t()));
    let pos_counts = positive_counts(labels);

    // gradient w.r.t. the similarity matrices
    let mut g_bb = Array2::<f64>::zeros((n, n));
    let mut g_bp = s_bp.as_ref().map(|s| Array2::<f64>::zeros(s.raw_dim()));
    let mut terms = LossTerms::default();

    for i in 0..n {
        let others = || (0..n).filter(move |&j| j != i);

        if w.supcon != 0.0 && pos_counts[i] > 0 {
            let lse = log_sum_exp(others().map(|j| s_bb[[i, j]] / t));
            let inv = 1.0 / pos_counts[i] as f64;
            let mut li = lse;
            for j in others() {
                let soft = (s_bb[[i, j]] / t - lse).exp();
                let is_pos = labels[j] == labels[i];
                if is_pos {
                    li -= inv * s_bb[[i, j]] / t;
                }
                g_bb[[i, j]] += w.supcon * (soft - if is_pos { inv } else { 0.0 }) / t;
            }
            terms.supcon += li;
        }

        let (Some(tg), Some(s_bp), Some(g_bp)) = (targets, s_bp.as_ref(), g_bp.as_mut()) else {
            continue;
        };
        let k_count = s_bp.ncols();
        let target = tg.layout.proto_index(labels[i]);

        if w.proto != 0.0 {
            let weight = 1.0 / pos_counts[i].max(1) as f64;
            let rivals = || others().filter(|&j| labels[j] != labels[i]);
            let logits = rivals()
                .map(|j| s_bb[[i, j]] / t)
                .chain((0..k_count).map(|k| s_bp[[i, k]] / t));
            let lse = log_sum_exp(logits);
            terms.proto += weight * (lse - s_bp[[i, target]] / t);
            for j in rivals() {
                g_bb[[i, j]] += w.proto * weight * (s_bb[[i, j]] / t - lse).exp() / t;
            }
            for k in 0..k_count {
                let soft = (s_bp[[i, k]] / t - lse).exp();
                let hit = if k == target { 1.0 } else { 0.0 };
                g_bp[[i, k]] += w.proto * weight * (soft - hit) / t;
            }
        }

        if w.cross_entropy != 0.0 {
            let lse = log_sum_exp((0..k_count).map(|k| s_bp[[i, k]] / t));
            terms.cross_entropy += lse - s_bp[[i, target]] / t;
            for k in 0..k_count {
                let soft = (s_bp[[i, k]] / t - lse).exp();
                let hit = if k == target { 1.0 } else { 0.0 };
                g_bp[[i, k]] += w.cross_entropy * (soft - hit) / t;
            }
        }

        if w.guidance != 0.0 || w.track_guidance {
            let pred = tg.predict(u.row(i).as_slice().expect("contiguous row"))?;
            let g = guidance_weight(pred, labels[i], tg.graph, tg.layout.n_type)?;
            terms.guidance += g * (1.0 - s_bp[[i, target]]).max(0.0);
            g_bp[[i, target]] -= w.guidance * g;
        }
    }

    terms.total = w.supcon * terms.supcon
        + w.proto * terms.proto
        + w.cross_entropy * terms.cross_entropy
        + w.guidance * terms.guidance;
    if !terms.total.is_finite() {
        bail!(Numeric, "non-finite loss");
    }
    if !with_grad {
        return Ok((terms, None));
    }

    // chain rule through s_ij = u_i . u_j and s_ik = u_i . p_k
    let mut g_u = g_bb.dot(&u) + g_bb.t().dot(&u);
    if let (Some(g_bp), Some(tg)) = (g_bp, targets) {
        g_u = g_u + g_bp.dot(tg.protos.vectors());
    }
    // then through u = z / |z|
    let radial = (&g_u * &u).sum_axis(Axis(1));
    let mut g_z = g_u;
    for (i, mut row) in g_z.rows_mut().into_iter().enumerate() {
        let ui = u.row(i);
        for (d, v) in row.iter_mut().enumerate() {
            *v = (*v - radial[i] * ui[d]) / norms[i];
        }
    }
    Ok((terms, Some(g_z)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prototypes::make_simplex_prototypes;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1};

    #[test]
    fn nt_xent_scalar_cases() {
        let a = array![1.0, 0.0, 0.0];
        let orth = array![[0.0, 1.0, 0.0]];
        let one = Temperature::new(1.0).unwrap();
        let v = nt_xent(a.view(), a.view(), orth.view(), one).unwrap();
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(v, -(e / (e + 1.0)).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(v, 0.3133, epsilon = 1e-4);

        let p = array![0.0, 0.0, 1.0];
        let v = nt_xent(a.view(), p.view(), orth.view(), one).unwrap();
        assert_abs_diff_eq!(v, 2f64.ln(), epsilon = 1e-12);

        let cold = Temperature::new(0.01).unwrap();
        assert!(nt_xent(a.view(), a.view(), orth.view(), cold).unwrap() < 1e-30);

        let none = Array2::<f64>::zeros((0, 3));
        assert!(nt_xent(a.view(), a.view(), none.view(), one).is_err());
        assert!(Temperature::new(0.0).is_err());
    }

    #[test]
    fn supcon_needs_positives() {
        let b =
            EmbeddingBatch::normalized(array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]], vec![0, 1, 2])
                .unwrap();
        assert!(supcon(&b, Temperature::default()).is_err());
    }

    #[test]
    fn supcon_matches_double_loop() {
        // two classes at antipodes, two samples each
        let z = array![[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [-1.0, 0.0]];
        let labels = vec![0, 0, 1, 1];
        let b = EmbeddingBatch::normalized(z.clone(), labels.clone()).unwrap();
        let tau = Temperature::new(1.0).unwrap();
        let mut want = 0.0;
        for i in 0..4 {
            let pos: Vec<usize> = (0..4)
                .filter(|&p| p != i && labels[p] == labels[i])
                .collect();
            for &p in &pos {
                let num = z.row(i).dot(&z.row(p)).exp();
                let den: f64 = (0..4)
                    .filter(|&j| j != i)
                    .map(|j| z.row(i).dot(&z.row(j)).exp())
                    .sum();
                want += -(num / den).ln() / pos.len() as f64;
            }
        }
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(want, 4.0 * -(e / (e + 2.0 / e)).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(supcon(&b, tau).unwrap(), want, epsilon = 1e-12);
    }

    fn collapse_setup(layout: ClassLayout, dim: usize) -> (PrototypeSet, PatchGraph) {
        let protos = make_simplex_prototypes(dim, layout.n_prototypes()).unwrap();
        let graph = PatchGraph::grid(layout.rows, layout.cols).unwrap();
        (protos, graph)
    }

    #[test]
    fn guidance_vanishes_at_collapse_and_counts_type_errors() {
        let layout = ClassLayout::new(2, 2, 1).unwrap();
        let (protos, graph) = collapse_setup(layout, 16);
        let tg = Targets::new(&protos, layout, &graph).unwrap();
        let labels = vec![0, 3, 5, 6];
        let z = Array2::from_shape_fn((4, 16), |(i, d)| {
            protos.get(layout.proto_index(labels[i]))[d]
        });
        let b = EmbeddingBatch::normalized(z.clone(), labels.clone()).unwrap();
        assert_eq!(guidance_loss(&b, &tg).unwrap(), 0.0);

        // sample 0 sits on class 1's prototype: same patch, other type
        let mut z2 = z;
        z2.row_mut(0).assign(&protos.get(layout.proto_index(1)));
        let b2 = EmbeddingBatch::normalized(z2, labels).unwrap();
        let k = protos.count() as f64;
        assert_abs_diff_eq!(
            guidance_loss(&b2, &tg).unwrap(),
            0.25 * k / (k - 1.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn total_is_affine_in_lambda() {
        let layout = ClassLayout::new(2, 2, 0).unwrap();
        let (protos, graph) = collapse_setup(layout, 12);
        let tg = Targets::new(&protos, layout, &graph).unwrap();
        let z = Array2::from_shape_fn((6, 12), |(i, d)| ((i * 31 + d * 7) % 11) as f64 - 5.0);
        let b = EmbeddingBatch::normalized(z, vec![0, 1, 1, 4, 7, 7]).unwrap();
        let tau = Temperature::default();
        let bcr_v = bcr(&b, &tg, tau).unwrap();
        assert_eq!(total_loss(&b, &tg, tau, 0.0).unwrap(), bcr_v);
        let f = |l| total_loss(&b, &tg, tau, l).unwrap();
        assert_abs_diff_eq!(f(0.1) + f(0.3) - 2.0 * f(0.2), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn singletons_drop_the_supcon_term() {
        let layout = ClassLayout::new(2, 2, 0).unwrap();
        let (protos, graph) = collapse_setup(layout, 8);
        let tg = Targets::new(&protos, layout, &graph).unwrap();
        let z = Array2::from_shape_fn((3, 8), |(i, d)| 1.0 + (i + d) as f64);
        let b = EmbeddingBatch::normalized(z, vec![0, 1, 2]).unwrap();
        let (terms, _) = objective(
            b.z().view(),
            b.labels(),
            &tg,
            Temperature::default(),
            0.0,
            Objective::Seeable,
            false,
        )
        .unwrap();
        assert_eq!(terms.supcon, 0.0);
        assert!(terms.proto.is_finite() && terms.proto > 0.0);
    }

    #[test]
    fn label_prototype_mismatch_is_an_error() {
        let layout = ClassLayout::new(2, 2, 0).unwrap();
        let (protos, graph) = collapse_setup(layout, 8);
        let tg = Targets::new(&protos, layout, &graph).unwrap();
        let z = Array2::from_shape_fn((2, 8), |(i, d)| 1.0 + (i * d) as f64);
        let b = EmbeddingBatch::normalized(z, vec![0, 8]).unwrap();
        assert!(bcr(&b, &tg, Temperature::default()).is_err());
        let other = make_simplex_prototypes(8, 5).unwrap();
        assert!(Targets::new(&other, layout, &graph).is_err());
    }

    #[test]
    fn lambda_ramp() {
        assert_eq!(lambda_schedule(0, 200, 0.1), 0.0);
        assert_abs_diff_eq!(lambda_schedule(199, 200, 0.1), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(
            lambda_schedule(99, 200, 0.1),
            0.1 * 99.0 / 199.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(lambda_schedule(99, 200, 0.1), 0.0497, epsilon = 1e-4);
        let trace: Array1<f64> = (0..50).map(|e| lambda_schedule(e, 50, 0.1)).collect();
        assert!(trace.windows(2).into_iter().all(|w| w[0] <= w[1]));
    }

    #[test]
    fn batch_validation() {
        assert!(EmbeddingBatch::new(array![[1.0, 0.0]], vec![1.0], vec![0]).is_err());
        assert!(
            EmbeddingBatch::new(array![[1.0, 0.0], [0.5, 0.0]], vec![1.0, 1.0], vec![0, 0])
                .is_err()
        );
        assert!(
            EmbeddingBatch::new(array![[1.0, 0.0], [0.0, 1.0]], vec![1.0, 1.0], vec![0, 0]).is_ok()
        );
    }
}
