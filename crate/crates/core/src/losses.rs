//! Training objectives and their analytic gradients.
//!
//! The contrastive losses all share one backbone: interleave anchors and
//! views into a single feature stack z̃ (anchor_i at row 2i, view_i at
//! row 2i+1), build the feature-space conditional Q̃ over it, and charge
//! each feature for failing to put probability mass on its own partner.
//! [`kl_match`] makes the connection explicit: matching the sparse
//! positive-pair target of [`crate::similarity::p_positive_pairs`] against
//! Q̃ equals the contrastive loss plus the constant log(1/(2n)).
//!
//! Gradients are exact and hand-derived. For every softmax-based loss they
//! flow through one engine (`kl_conditional_grad`); the heavy-tailed loss
//! has its own closed form. Everything here is tested against central
//! finite differences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{dot, norm2, sq_dist, Matrix};
use crate::similarity::{softmax_rows_off_diagonal, t_weight, QBuilder, SimKind, SimMatrix};

/// Which objective to optimize, with its scalar knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    /// Temperature dividing similarities (softmax losses) or scaling the
    /// squared distance (heavy-tailed loss).
    pub tau: f64,
    /// Degrees of freedom of the heavy-tailed kernel; ignored by the
    /// softmax losses.
    pub t_df: f64,
    /// Feature similarity for the softmax losses; ignored by t_simclr.
    pub sim_kind: SimKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// KL between a supplied P and the feature conditional built from the
    /// feature stack (the anchors argument) — views must be empty.
    SneKl,
    /// Standard contrastive cross entropy over 2n−1 candidates.
    InfoNce,
    /// InfoNCE with a nonnegative weight per pair.
    InfoNceWeighted,
    /// InfoNCE with raw inner products and no feature normalization.
    InfoNceUnnormalized,
    /// Heavy-tailed pairwise loss with batch-global denominator.
    TSimclr,
}

/// Default degrees of freedom for the heavy-tailed loss.
pub const DEFAULT_T_DF: f64 = 5.0;

impl LossSpec {
    pub fn sne_kl(tau: f64, sim_kind: SimKind) -> LossSpec {
        LossSpec { kind: LossKind::SneKl, tau, t_df: DEFAULT_T_DF, sim_kind }
    }

    pub fn infonce(tau: f64, sim_kind: SimKind) -> LossSpec {
        LossSpec { kind: LossKind::InfoNce, tau, t_df: DEFAULT_T_DF, sim_kind }
    }

    pub fn infonce_weighted(tau: f64, sim_kind: SimKind) -> LossSpec {
        LossSpec { kind: LossKind::InfoNceWeighted, tau, t_df: DEFAULT_T_DF, sim_kind }
    }

    pub fn infonce_unnormalized(tau: f64) -> LossSpec {
        LossSpec {
            kind: LossKind::InfoNceUnnormalized,
            tau,
            t_df: DEFAULT_T_DF,
            sim_kind: SimKind::InnerProduct,
        }
    }

    pub fn t_simclr(t_df: f64, tau: f64) -> LossSpec {
        LossSpec { kind: LossKind::TSimclr, tau, t_df, sim_kind: SimKind::NegSqEuclidean }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::arg("LossSpec", "tau", format!("{} must be > 0", self.tau)));
        }
        if !(self.t_df > 0.0 && self.t_df.is_finite()) {
            return Err(Error::arg("LossSpec", "t_df", format!("{} must be > 0", self.t_df)));
        }
        Ok(())
    }
}

/// Side inputs some losses need: a target P for [`LossKind::SneKl`], pair
/// weights for [`LossKind::InfoNceWeighted`].
#[derive(Default, Clone, Copy)]
pub struct LossAux<'a> {
    pub p: Option<&'a SimMatrix>,
    pub weights: Option<&'a [f64]>,
}

/// KL-style matching cost Σ_ij P_ij · log(P_ij / Q_ij), with 0·log(0/q)
/// read as 0. P and Q may follow different normalization disciplines; for
/// conditional P and Q of the same kind the value is a sum of per-row KL
/// divergences and hence ≥ 0.
pub fn kl_match(p: &SimMatrix, q: &SimMatrix) -> Result<f64> {
    if p.n() != q.n() {
        return Err(Error::dim(
            "kl_match",
            format!("P is {0}x{0}, Q is {1}x{1}", p.n(), q.n()),
        ));
    }
    let mut total = 0.0;
    for i in 0..p.n() {
        for j in 0..p.n() {
            let pv = p.values().get(i, j);
            if pv == 0.0 {
                continue;
            }
            let qv = q.values().get(i, j);
            if qv == 0.0 {
                return Err(Error::arg(
                    "kl_match",
                    "q",
                    format!("Q is 0 at ({i},{j}) where P = {pv}"),
                ));
            }
            total += pv * (pv / qv).ln();
        }
    }
    if !total.is_finite() {
        return Err(Error::non_finite("kl_match", format!("value {total}")));
    }
    Ok(total)
}

/// Stack anchors and views into a single 2n-row matrix with anchor_i at row
/// 2i and view_i at row 2i+1 — the index convention every pair-based loss
/// and [`crate::similarity::p_positive_pairs`] share.
pub fn interleave_pairs(anchors: &Matrix, views: &Matrix) -> Result<Matrix> {
    if anchors.rows() != views.rows() || anchors.cols() != views.cols() {
        return Err(Error::dim(
            "interleave_pairs",
            format!(
                "anchors {}x{} vs views {}x{}",
                anchors.rows(),
                anchors.cols(),
                views.rows(),
                views.cols()
            ),
        ));
    }
    let (n, d) = (anchors.rows(), anchors.cols());
    let mut z = Matrix::zeros(2 * n, d);
    for i in 0..n {
        z.row_mut(2 * i).copy_from_slice(anchors.row(i));
        z.row_mut(2 * i + 1).copy_from_slice(views.row(i));
    }
    Ok(z)
}

/// Inverse of [`interleave_pairs`]: rows 2i back to the first matrix, rows
/// 2i+1 to the second.
fn deinterleave_pairs(z: &Matrix) -> (Matrix, Matrix) {
    let n = z.rows() / 2;
    let d = z.cols();
    let mut anchors = Matrix::zeros(n, d);
    let mut views = Matrix::zeros(n, d);
    for i in 0..n {
        anchors.row_mut(i).copy_from_slice(z.row(2 * i));
        views.row_mut(i).copy_from_slice(z.row(2 * i + 1));
    }
    (anchors, views)
}

/// Pairwise similarity scores sim(z_u, z_v)/τ with an untouched (zero)
/// diagonal.
fn score_matrix(z: &Matrix, sim_kind: SimKind, tau: f64) -> Result<Matrix> {
    let m = z.rows();
    let mut scores = Matrix::zeros(m, m);
    for u in 0..m {
        for v in 0..m {
            if u != v {
                scores.set(u, v, sim_kind.eval(z.row(u), z.row(v))? / tau);
            }
        }
    }
    Ok(scores)
}

fn logsumexp_off_diagonal(scores: &Matrix, u: usize) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for v in 0..scores.cols() {
        if v != u && scores.get(u, v) > max {
            max = scores.get(u, v);
        }
    }
    let mut sum = 0.0;
    for v in 0..scores.cols() {
        if v != u {
            sum += (scores.get(u, v) - max).exp();
        }
    }
    max + sum.ln()
}

fn check_pair_inputs(op: &'static str, anchors: &Matrix, views: &Matrix, tau: f64) -> Result<()> {
    if anchors.rows() != views.rows() || anchors.cols() != views.cols() {
        return Err(Error::dim(
            op,
            format!(
                "anchors {}x{} vs views {}x{}",
                anchors.rows(),
                anchors.cols(),
                views.rows(),
                views.cols()
            ),
        ));
    }
    if anchors.rows() < 2 {
        return Err(Error::dim(op, "need at least 2 pairs"));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::arg(op, "tau", format!("{tau} must be > 0")));
    }
    Ok(())
}

/// Weighted contrastive cross entropy. For each of the 2n features, the
/// per-feature cost is −log softmax probability of its partner among the
/// other 2n−1 features; pair i's two costs are scaled by weights[i] and the
/// total is averaged over 2n. All-ones weights give the plain loss.
pub fn infonce_weighted(
    anchors_z: &Matrix,
    views_z: &Matrix,
    weights: &[f64],
    tau: f64,
    sim_kind: SimKind,
) -> Result<f64> {
    check_pair_inputs("infonce_weighted", anchors_z, views_z, tau)?;
    let n = anchors_z.rows();
    if weights.len() != n {
        return Err(Error::dim(
            "infonce_weighted",
            format!("{n} pairs but {} weights", weights.len()),
        ));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::arg("infonce_weighted", "weights", "must be finite and ≥ 0"));
    }
    let z = interleave_pairs(anchors_z, views_z)?;
    let scores = score_matrix(&z, sim_kind, tau)?;
    let mut total = 0.0;
    for u in 0..2 * n {
        let partner = u ^ 1;
        let l = logsumexp_off_diagonal(&scores, u) - scores.get(u, partner);
        total += weights[u / 2] * l;
    }
    Ok(total / (2 * n) as f64)
}

/// Standard contrastive cross entropy (all pair weights 1).
pub fn infonce(anchors_z: &Matrix, views_z: &Matrix, tau: f64, sim_kind: SimKind) -> Result<f64> {
    let ones = vec![1.0; anchors_z.rows().max(1)];
    infonce_weighted(anchors_z, views_z, &ones, tau, sim_kind)
}

/// Contrastive cross entropy over raw inner products: no per-feature
/// normalization, so features live in flat Euclidean space and the loss is
/// sensitive to their scale.
pub fn infonce_unnormalized(anchors_z: &Matrix, views_z: &Matrix, tau: f64) -> Result<f64> {
    infonce(anchors_z, views_z, tau, SimKind::InnerProduct)
}

/// Heavy-tailed pairwise loss: with w(a,b) = (1 + ‖a−b‖²/(τ·t_df))^(−(t_df+1)/2)
/// over the interleaved stack z̃,
///   L = (1/n) Σ_i −log[ w(z_i, z_i′) / Σ_{j≠k} w(z̃_j, z̃_k) ],
/// the denominator running over all ordered pairs of the 2n features.
pub fn t_simclr_loss(anchors_z: &Matrix, views_z: &Matrix, t_df: f64, tau: f64) -> Result<f64> {
    check_pair_inputs("t_simclr_loss", anchors_z, views_z, tau)?;
    if !(t_df > 0.0 && t_df.is_finite()) {
        return Err(Error::arg("t_simclr_loss", "t_df", format!("{t_df} must be > 0")));
    }
    let n = anchors_z.rows();
    let z = interleave_pairs(anchors_z, views_z)?;
    let denom = t_pair_denominator(&z, t_df, tau);
    let mut total = 0.0;
    for i in 0..n {
        let w_pos = t_weight(sq_dist(anchors_z.row(i), views_z.row(i)), t_df, tau);
        total += -(w_pos / denom).ln();
    }
    Ok(total / n as f64)
}

/// Σ over ordered pairs j≠k of the heavy-tailed weight.
fn t_pair_denominator(z: &Matrix, t_df: f64, tau: f64) -> f64 {
    let m = z.rows();
    let mut denom = 0.0;
    for j in 0..m {
        for k in 0..m {
            if j != k {
                denom += t_weight(sq_dist(z.row(j), z.row(k)), t_df, tau);
            }
        }
    }
    denom
}

/// The two faces of [`t_simclr_loss`]:
///   align   = (1/n) Σ_i ((t_df+1)/2)·log(1 + ‖z_i−z_i′‖²/(τ·t_df)) ≥ 0,
///   uniform = log Σ_{j≠k} w(z̃_j, z̃_k),
/// with align + uniform equal to the loss.
pub fn t_simclr_align_uniform(
    anchors_z: &Matrix,
    views_z: &Matrix,
    t_df: f64,
    tau: f64,
) -> Result<(f64, f64)> {
    check_pair_inputs("t_simclr_align_uniform", anchors_z, views_z, tau)?;
    if !(t_df > 0.0 && t_df.is_finite()) {
        return Err(Error::arg("t_simclr_align_uniform", "t_df", format!("{t_df} must be > 0")));
    }
    let n = anchors_z.rows();
    let beta = (t_df + 1.0) / 2.0;
    let c = 1.0 / (tau * t_df);
    let mut align = 0.0;
    for i in 0..n {
        align += beta * (1.0 + c * sq_dist(anchors_z.row(i), views_z.row(i))).ln();
    }
    align /= n as f64;
    let z = interleave_pairs(anchors_z, views_z)?;
    let uniform = t_pair_denominator(&z, t_df, tau).ln();
    Ok((align, uniform))
}

/// Gradient of [`kl_match`] (P fixed) with respect to the features the Q
/// side is built from.
///
/// For the conditional Q (row softmax of scores a_uv = sim(z_u,z_v)/τ) the
/// chain is ∂L/∂a_uv = r_u·Q_{v|u} − P_uv with r_u the u-th row sum of P,
/// pushed through the similarity's own jacobian. For the heavy-tailed joint
/// Q the closed form is derived in place below.
pub fn kl_match_grad(p: &SimMatrix, z: &Matrix, q_builder: &QBuilder) -> Result<Matrix> {
    if p.n() != z.rows() {
        return Err(Error::dim(
            "kl_match_grad",
            format!("P is {0}x{0} but Z has {1} rows", p.n(), z.rows()),
        ));
    }
    match *q_builder {
        QBuilder::GaussianConditional { sim_kind, tau } => {
            kl_conditional_grad(p.values(), z, sim_kind, tau)
        }
        QBuilder::TJoint { t_df, tau } => kl_t_joint_grad(p.values(), z, t_df, tau),
    }
}

/// Engine shared by every softmax loss: gradient of
/// Σ_uv P_uv·(−log Q_{v|u}) with Q the row softmax of sim(z_u,z_v)/τ.
fn kl_conditional_grad(p_vals: &Matrix, z: &Matrix, sim_kind: SimKind, tau: f64) -> Result<Matrix> {
    let m = z.rows();
    if m < 2 {
        return Err(Error::dim("kl_match_grad", "need at least 2 features"));
    }
    let scores = score_matrix(z, sim_kind, tau)?;
    let q = softmax_rows_off_diagonal(&scores);
    let row_mass: Vec<f64> = (0..m).map(|u| p_vals.row(u).iter().sum()).collect();
    let mut grad = Matrix::zeros(m, z.cols());
    for u in 0..m {
        for v in 0..m {
            if u == v {
                continue;
            }
            // ∂L/∂a_uv, already divided by τ for the chain to sim space.
            let g = (row_mass[u] * q.get(u, v) - p_vals.get(u, v)) / tau;
            if g == 0.0 {
                continue;
            }
            accumulate_sim_grad(sim_kind, z, u, v, g, &mut grad);
        }
    }
    Ok(grad)
}

/// grad_{z_u} += coeff·∂sim(z_u,z_v)/∂z_u and grad_{z_v} += coeff·∂sim/∂z_v.
fn accumulate_sim_grad(sim_kind: SimKind, z: &Matrix, u: usize, v: usize, coeff: f64, grad: &mut Matrix) {
    let d = z.cols();
    match sim_kind {
        SimKind::InnerProduct => {
            for k in 0..d {
                grad.set(u, k, grad.get(u, k) + coeff * z.get(v, k));
                grad.set(v, k, grad.get(v, k) + coeff * z.get(u, k));
            }
        }
        SimKind::NegSqEuclidean => {
            for k in 0..d {
                let diff = z.get(u, k) - z.get(v, k);
                grad.set(u, k, grad.get(u, k) - coeff * 2.0 * diff);
                grad.set(v, k, grad.get(v, k) + coeff * 2.0 * diff);
            }
        }
        SimKind::Cosine => {
            // s = ⟨û, v̂⟩; ∂s/∂z_u = (v̂ − s·û)/‖z_u‖ and symmetrically.
            let (nu, nv) = (norm2(z.row(u)), norm2(z.row(v)));
            let s = dot(z.row(u), z.row(v)) / (nu * nv);
            for k in 0..d {
                let uu = z.get(u, k) / nu;
                let vv = z.get(v, k) / nv;
                grad.set(u, k, grad.get(u, k) + coeff * (vv - s * uu) / nu);
                grad.set(v, k, grad.get(v, k) + coeff * (uu - s * vv) / nv);
            }
        }
    }
}

/// Gradient of KL(P ‖ Q_t) where Q_t is the heavy-tailed joint of
/// [`crate::similarity::q_t_joint`]. With β = (t_df+1)/2, c = 1/(τ·t_df),
/// base_uv = 1 + c·‖z_u−z_v‖², and S_P the total mass of P:
///   ∂L/∂z_u = 2βc·Σ_v (P_uv+P_vu)(z_u−z_v)/base_uv
///           − (4βc·S_P/W)·Σ_v base_uv^(−β−1)·(z_u−z_v).
fn kl_t_joint_grad(p_vals: &Matrix, z: &Matrix, t_df: f64, tau: f64) -> Result<Matrix> {
    let m = z.rows();
    if m < 2 {
        return Err(Error::dim("kl_match_grad", "need at least 2 features"));
    }
    let beta = (t_df + 1.0) / 2.0;
    let c = 1.0 / (tau * t_df);
    let s_p: f64 = p_vals.data().iter().sum();
    let mut w_total = 0.0;
    for u in 0..m {
        for v in 0..m {
            if u != v {
                w_total += t_weight(sq_dist(z.row(u), z.row(v)), t_df, tau);
            }
        }
    }
    let mut grad = Matrix::zeros(m, z.cols());
    for u in 0..m {
        for v in 0..m {
            if u == v {
                continue;
            }
            let base = 1.0 + c * sq_dist(z.row(u), z.row(v));
            let attract = 2.0 * beta * c * (p_vals.get(u, v) + p_vals.get(v, u)) / base;
            let repel = 4.0 * beta * c * s_p * base.powf(-beta - 1.0) / w_total;
            for k in 0..z.cols() {
                let diff = z.get(u, k) - z.get(v, k);
                grad.set(u, k, grad.get(u, k) + (attract - repel) * diff);
            }
        }
    }
    Ok(grad)
}

/// Gradient of the heavy-tailed loss with respect to anchors and views.
fn t_simclr_grad(anchors_z: &Matrix, views_z: &Matrix, t_df: f64, tau: f64) -> Result<(Matrix, Matrix)> {
    check_pair_inputs("t_simclr_grad", anchors_z, views_z, tau)?;
    let n = anchors_z.rows();
    let d = anchors_z.cols();
    let beta = (t_df + 1.0) / 2.0;
    let c = 1.0 / (tau * t_df);
    let z = interleave_pairs(anchors_z, views_z)?;
    let m = 2 * n;
    let w_total = t_pair_denominator(&z, t_df, tau);

    // Alignment: (1/n)·β·log(1+c·D_i) pulls each pair together.
    let mut grad = Matrix::zeros(m, d);
    for i in 0..n {
        let base = 1.0 + c * sq_dist(anchors_z.row(i), views_z.row(i));
        let coeff = 2.0 * beta * c / (n as f64 * base);
        for k in 0..d {
            let diff = anchors_z.get(i, k) - views_z.get(i, k);
            grad.set(2 * i, k, grad.get(2 * i, k) + coeff * diff);
            grad.set(2 * i + 1, k, grad.get(2 * i + 1, k) - coeff * diff);
        }
    }
    // Uniformity: log W pushes every ordered pair apart.
    for u in 0..m {
        for v in 0..m {
            if u == v {
                continue;
            }
            let base = 1.0 + c * sq_dist(z.row(u), z.row(v));
            let coeff = -4.0 * beta * c * base.powf(-beta - 1.0) / w_total;
            for k in 0..d {
                let diff = z.get(u, k) - z.get(v, k);
                grad.set(u, k, grad.get(u, k) + coeff * diff);
            }
        }
    }
    Ok(deinterleave_pairs(&grad))
}

/// Evaluate the objective a [`LossSpec`] names.
///
/// [`LossKind::SneKl`] reads the whole feature stack from `anchors_z`
/// (pass a 0-row `views_z`) and requires `aux.p`;
/// [`LossKind::InfoNceWeighted`] requires `aux.weights`.
pub fn loss_value(
    spec: &LossSpec,
    anchors_z: &Matrix,
    views_z: &Matrix,
    aux: LossAux<'_>,
) -> Result<f64> {
    spec.validate()?;
    match spec.kind {
        LossKind::SneKl => {
            let p = aux.p.ok_or_else(|| Error::arg("loss_value", "aux.p", "sne_kl needs a target P"))?;
            if views_z.rows() != 0 {
                return Err(Error::arg(
                    "loss_value",
                    "views_z",
                    "sne_kl takes the whole feature stack in anchors_z; views_z must have 0 rows",
                ));
            }
            let q = QBuilder::GaussianConditional { sim_kind: spec.sim_kind, tau: spec.tau }
                .build(anchors_z)?;
            kl_match(p, &q)
        }
        LossKind::InfoNce => infonce(anchors_z, views_z, spec.tau, spec.sim_kind),
        LossKind::InfoNceWeighted => {
            let w = aux
                .weights
                .ok_or_else(|| Error::arg("loss_value", "aux.weights", "weighted loss needs weights"))?;
            infonce_weighted(anchors_z, views_z, w, spec.tau, spec.sim_kind)
        }
        LossKind::InfoNceUnnormalized => infonce_unnormalized(anchors_z, views_z, spec.tau),
        LossKind::TSimclr => t_simclr_loss(anchors_z, views_z, spec.t_df, spec.tau),
    }
}

/// Analytic gradient of [`loss_value`] with respect to `(anchors_z,
/// views_z)`. For [`LossKind::SneKl`] the first returned matrix is the
/// gradient for the whole stack and the second is empty.
pub fn loss_grad(
    spec: &LossSpec,
    anchors_z: &Matrix,
    views_z: &Matrix,
    aux: LossAux<'_>,
) -> Result<(Matrix, Matrix)> {
    spec.validate()?;
    match spec.kind {
        LossKind::SneKl => {
            let p = aux.p.ok_or_else(|| Error::arg("loss_grad", "aux.p", "sne_kl needs a target P"))?;
            if views_z.rows() != 0 {
                return Err(Error::arg(
                    "loss_grad",
                    "views_z",
                    "sne_kl takes the whole feature stack in anchors_z; views_z must have 0 rows",
                ));
            }
            let g = kl_match_grad(
                p,
                anchors_z,
                &QBuilder::GaussianConditional { sim_kind: spec.sim_kind, tau: spec.tau },
            )?;
            Ok((g, Matrix::zeros(0, anchors_z.cols())))
        }
        LossKind::InfoNce | LossKind::InfoNceWeighted | LossKind::InfoNceUnnormalized => {
            check_pair_inputs("loss_grad", anchors_z, views_z, spec.tau)?;
            let n = anchors_z.rows();
            let ones;
            let weights: &[f64] = match spec.kind {
                LossKind::InfoNceWeighted => aux.weights.ok_or_else(|| {
                    Error::arg("loss_grad", "aux.weights", "weighted loss needs weights")
                })?,
                _ => {
                    ones = vec![1.0; n];
                    &ones
                }
            };
            if weights.len() != n {
                return Err(Error::dim(
                    "loss_grad",
                    format!("{n} pairs but {} weights", weights.len()),
                ));
            }
            let sim_kind = match spec.kind {
                LossKind::InfoNceUnnormalized => SimKind::InnerProduct,
                _ => spec.sim_kind,
            };
            // The loss is Σ_uv P̃_uv·(−log Q̃_{v|u}) + const with
            // P̃ the positive-pair mass w_i/(2n) at rows 2i ↔ 2i+1.
            let z = interleave_pairs(anchors_z, views_z)?;
            let mut p_vals = Matrix::zeros(2 * n, 2 * n);
            for i in 0..n {
                let w = weights[i] / (2 * n) as f64;
                p_vals.set(2 * i, 2 * i + 1, w);
                p_vals.set(2 * i + 1, 2 * i, w);
            }
            let g = kl_conditional_grad(&p_vals, &z, sim_kind, spec.tau)?;
            Ok(deinterleave_pairs(&g))
        }
        LossKind::TSimclr => t_simclr_grad(anchors_z, views_z, spec.t_df, spec.tau),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{finite_diff_grad, RngState};
    use crate::similarity::{
        p_positive_pairs, p_sne_conditional, q_gaussian_conditional, Bandwidths, MatrixKind,
    };
    use proptest::prelude::*;

    fn random_matrix(rows: usize, cols: usize, rng: &mut RngState) -> Matrix {
        let mut m = Matrix::zeros(rows, cols);
        for v in m.data_mut() {
            *v = rng.gaussian();
        }
        m
    }

    fn normalize_rows(m: &mut Matrix) {
        for i in 0..m.rows() {
            let n = norm2(m.row(i));
            for v in m.row_mut(i) {
                *v /= n;
            }
        }
    }

    #[test]
    fn kl_of_identical_conditionals_is_zero() {
        let mut rng = RngState::new(41);
        let x = random_matrix(5, 2, &mut rng);
        let p = p_sne_conditional(&x, &Bandwidths::Shared(1.0)).unwrap();
        let v = kl_match(&p, &p).unwrap();
        assert!(v.abs() < 1e-14, "{v}");
    }

    #[test]
    fn kl_of_two_uniform_conditionals_is_zero() {
        let n = 4;
        let mut vals = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    vals.set(i, j, 1.0 / (n - 1) as f64);
                }
            }
        }
        let p = SimMatrix::new(vals.clone(), MatrixKind::Conditional).unwrap();
        let q = SimMatrix::new(vals, MatrixKind::Conditional).unwrap();
        assert!(kl_match(&p, &q).unwrap().abs() < 1e-14);
    }

    #[test]
    fn kl_rejects_zero_q_under_positive_p() {
        // Q row 0 puts everything on column 2, nothing on column 1.
        let mut qv = Matrix::zeros(3, 3);
        qv.set(0, 2, 1.0);
        qv.set(1, 0, 1.0);
        qv.set(2, 0, 1.0);
        let q = SimMatrix::new(qv, MatrixKind::Conditional).unwrap();
        let mut pv = Matrix::zeros(3, 3);
        pv.set(0, 1, 0.5);
        pv.set(0, 2, 0.5);
        pv.set(1, 0, 1.0);
        pv.set(2, 0, 1.0);
        let p = SimMatrix::new(pv, MatrixKind::Conditional).unwrap();
        assert!(kl_match(&p, &q).is_err());
    }

    #[test]
    fn sparse_pair_matching_equals_contrastive_loss_plus_constant() {
        for (n, seed) in [(2usize, 51u64), (8, 52)] {
            let mut rng = RngState::new(seed);
            let mut anchors = random_matrix(n, 3, &mut rng);
            let mut views = random_matrix(n, 3, &mut rng);
            normalize_rows(&mut anchors);
            normalize_rows(&mut views);
            let z = interleave_pairs(&anchors, &views).unwrap();
            let p = p_positive_pairs(n).unwrap();
            let q = q_gaussian_conditional(&z, SimKind::Cosine, 1.0).unwrap();
            let kl = kl_match(&p, &q).unwrap();
            let ince = infonce(&anchors, &views, 1.0, SimKind::Cosine).unwrap();
            let constant = (1.0 / (2 * n) as f64).ln();
            assert!(
                (kl - ince - constant).abs() < 1e-10,
                "n={n}: kl {kl} vs infonce {ince} + {constant}"
            );
        }
    }

    #[test]
    fn two_orthogonal_pairs_hand_value() {
        // Anchors = views = (e1, e2): each feature sees its partner at
        // cosine 1 and two negatives at cosine 0, so every per-feature cost
        // is −log(e/(e+2)) = log(1+2/e).
        let anchors = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let views = anchors.clone();
        let v = infonce(&anchors, &views, 1.0, SimKind::Cosine).unwrap();
        let expected = (1.0 + 2.0 / std::f64::consts::E).ln();
        assert!((v - expected).abs() < 1e-12, "{v} vs {expected}");
        assert!((expected - 0.5514).abs() < 1e-4);
    }

    #[test]
    fn aligned_simplex_is_a_local_minimum_among_aligned_configs() {
        // Regular tetrahedron in R³ (pairwise cosine −1/3), views equal to
        // anchors. Random aligned perturbations must never beat it.
        let s = 1.0 / 3.0f64.sqrt();
        let anchors = Matrix::from_vec(
            4,
            3,
            vec![s, s, s, s, -s, -s, -s, s, -s, -s, -s, s],
        )
        .unwrap();
        let base = infonce(&anchors, &anchors, 1.0, SimKind::Cosine).unwrap();
        let mut rng = RngState::new(53);
        for _ in 0..100 {
            let mut pert = anchors.clone();
            for v in pert.data_mut() {
                *v += 0.05 * rng.gaussian();
            }
            normalize_rows(&mut pert);
            let v = infonce(&pert, &pert, 1.0, SimKind::Cosine).unwrap();
            assert!(v >= base - 1e-12, "perturbed {v} < simplex {base}");
        }
    }

    #[test]
    fn pair_order_is_irrelevant() {
        let mut rng = RngState::new(54);
        let anchors = random_matrix(5, 3, &mut rng);
        let views = random_matrix(5, 3, &mut rng);
        let v1 = infonce(&anchors, &views, 0.5, SimKind::Cosine).unwrap();
        // Shuffle pairs (same permutation on both sides).
        let perm = [3usize, 0, 4, 1, 2];
        let a2 = Matrix::from_rows(&perm.iter().map(|&i| anchors.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        let v2m = Matrix::from_rows(&perm.iter().map(|&i| views.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        let v2 = infonce(&a2, &v2m, 0.5, SimKind::Cosine).unwrap();
        assert!((v1 - v2).abs() < 1e-12);
    }

    #[test]
    fn unit_weights_reduce_to_plain_loss_and_zero_weights_to_zero() {
        let mut rng = RngState::new(55);
        let anchors = random_matrix(4, 2, &mut rng);
        let views = random_matrix(4, 2, &mut rng);
        let plain = infonce(&anchors, &views, 0.7, SimKind::NegSqEuclidean).unwrap();
        let weighted =
            infonce_weighted(&anchors, &views, &[1.0; 4], 0.7, SimKind::NegSqEuclidean).unwrap();
        assert!((plain - weighted).abs() < 1e-12);
        let zeroed =
            infonce_weighted(&anchors, &views, &[0.0; 4], 0.7, SimKind::NegSqEuclidean).unwrap();
        assert_eq!(zeroed, 0.0);
    }

    #[test]
    fn flat_tau_weights_approximate_plain_loss() {
        use crate::similarity::p_weighted_pairs;
        let mut rng = RngState::new(56);
        let anchors = random_matrix(6, 2, &mut rng);
        let views = random_matrix(6, 2, &mut rng);
        let ious: Vec<f64> = (0..6).map(|_| rng.uniform()).collect();
        let w = p_weighted_pairs(&ious, 1e6).unwrap();
        let plain = infonce(&anchors, &views, 1.0, SimKind::Cosine).unwrap();
        let weighted = infonce_weighted(&anchors, &views, &w, 1.0, SimKind::Cosine).unwrap();
        assert!((plain - weighted).abs() < 1e-6, "{plain} vs {weighted}");
    }

    #[test]
    fn inner_product_loss_is_scale_sensitive_cosine_is_not() {
        let mut rng = RngState::new(57);
        let anchors = random_matrix(4, 3, &mut rng);
        let views = random_matrix(4, 3, &mut rng);
        let scaled_a = anchors.map(|v| 3.0 * v);
        let scaled_v = views.map(|v| 3.0 * v);

        let raw = infonce_unnormalized(&anchors, &views, 1.0).unwrap();
        let raw_scaled = infonce_unnormalized(&scaled_a, &scaled_v, 1.0).unwrap();
        assert!((raw - raw_scaled).abs() > 1e-3, "inner product should feel scale");

        let cos = infonce(&anchors, &views, 1.0, SimKind::Cosine).unwrap();
        let cos_scaled = infonce(&scaled_a, &scaled_v, 1.0, SimKind::Cosine).unwrap();
        assert!((cos - cos_scaled).abs() < 1e-12, "cosine should not");
    }

    #[test]
    fn inner_product_equals_cosine_on_unit_vectors() {
        let anchors = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let a = infonce_unnormalized(&anchors, &anchors, 1.0).unwrap();
        let b = infonce(&anchors, &anchors, 1.0, SimKind::Cosine).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn heavy_tailed_two_point_closed_form() {
        // n=2, views = anchors, anchors at distance r: numerator weight 1,
        // denominator 4·w(0) + 8·w(r²) = 4 + 8(1+r²/(τ·t_df))^(−β).
        let (t_df, tau) = (2.0, 0.5);
        let beta = (t_df + 1.0) / 2.0;
        let loss_at = |r: f64| {
            let anchors = Matrix::from_vec(2, 1, vec![0.0, r]).unwrap();
            t_simclr_loss(&anchors, &anchors, t_df, tau).unwrap()
        };
        for r in [0.5, 1.0, 2.0] {
            let w_r = (1.0 + r * r / (tau * t_df)).powf(-beta);
            let expected = (4.0 + 8.0 * w_r).ln();
            assert!((loss_at(r) - expected).abs() < 1e-12, "r = {r}");
        }
        // Farther apart → smaller denominator → smaller loss.
        assert!(loss_at(2.0) < loss_at(1.0));
    }

    #[test]
    fn heavy_tailed_loss_is_translation_invariant() {
        let mut rng = RngState::new(58);
        let anchors = random_matrix(4, 2, &mut rng);
        let views = random_matrix(4, 2, &mut rng);
        let v1 = t_simclr_loss(&anchors, &views, 5.0, 0.5).unwrap();
        let shift = |m: &Matrix| {
            let mut s = m.clone();
            for i in 0..s.rows() {
                s.set(i, 0, s.get(i, 0) + 7.5);
                s.set(i, 1, s.get(i, 1) - 2.25);
            }
            s
        };
        let v2 = t_simclr_loss(&shift(&anchors), &shift(&views), 5.0, 0.5).unwrap();
        assert!((v1 - v2).abs() < 1e-12);
    }

    #[test]
    fn heavy_tailed_cauchy_case_matches_direct_formula() {
        let mut rng = RngState::new(59);
        let anchors = random_matrix(3, 2, &mut rng);
        let views = random_matrix(3, 2, &mut rng);
        let v = t_simclr_loss(&anchors, &views, 1.0, 1.0).unwrap();
        // Direct: w(a,b) = 1/(1+‖a−b‖²) over the interleaved stack.
        let z = interleave_pairs(&anchors, &views).unwrap();
        let mut denom = 0.0;
        for j in 0..6 {
            for k in 0..6 {
                if j != k {
                    denom += 1.0 / (1.0 + sq_dist(z.row(j), z.row(k)));
                }
            }
        }
        let mut expected = 0.0;
        for i in 0..3 {
            let w = 1.0 / (1.0 + sq_dist(anchors.row(i), views.row(i)));
            expected += -(w / denom).ln();
        }
        expected /= 3.0;
        assert!((v - expected).abs() < 1e-12);
    }

    #[test]
    fn align_uniform_decomposition_is_exact() {
        let mut rng = RngState::new(60);
        let anchors = random_matrix(5, 3, &mut rng);
        let views = random_matrix(5, 3, &mut rng);
        let (t_df, tau) = (5.0, 0.5);
        let loss = t_simclr_loss(&anchors, &views, t_df, tau).unwrap();
        let (align, uniform) = t_simclr_align_uniform(&anchors, &views, t_df, tau).unwrap();
        assert!(align >= 0.0);
        assert!((align + uniform - loss).abs() < 1e-12);

        // Perfect alignment zeroes the align term.
        let (align0, _) = t_simclr_align_uniform(&anchors, &anchors, t_df, tau).unwrap();
        assert_eq!(align0, 0.0);
    }

    #[test]
    fn spreading_points_decreases_uniform_term() {
        let anchors = Matrix::from_vec(4, 2, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let views = anchors.map(|v| v + 0.1);
        let (_, u1) = t_simclr_align_uniform(&anchors, &views, 5.0, 0.5).unwrap();
        let (_, u2) = t_simclr_align_uniform(
            &anchors.map(|v| 2.0 * v),
            &views.map(|v| 2.0 * v),
            5.0,
            0.5,
        )
        .unwrap();
        assert!(u2 < u1);
    }

    #[test]
    fn identical_features_make_heavy_tailed_gradient_vanish() {
        let anchors = Matrix::from_vec(3, 2, vec![0.5, -0.5, 0.5, -0.5, 0.5, -0.5]).unwrap();
        let spec = LossSpec::t_simclr(5.0, 0.5);
        let (ga, gv) = loss_grad(&spec, &anchors, &anchors, LossAux::default()).unwrap();
        assert!(ga.data().iter().all(|&v| v.abs() < 1e-14));
        assert!(gv.data().iter().all(|&v| v.abs() < 1e-14));
    }

    #[test]
    fn aligned_pairs_leave_only_the_uniformity_force() {
        // With views == anchors the align term's gradient is exactly zero,
        // so anchor and view of each pair must receive identical gradients.
        let mut rng = RngState::new(61);
        let anchors = random_matrix(4, 2, &mut rng);
        let spec = LossSpec::t_simclr(5.0, 0.5);
        let (ga, gv) = loss_grad(&spec, &anchors, &anchors, LossAux::default()).unwrap();
        for i in 0..4 {
            for k in 0..2 {
                assert!((ga.get(i, k) - gv.get(i, k)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cosine_gradient_is_tangent_for_unit_features() {
        // Cosine similarity is scale-free per feature, so the gradient must
        // be orthogonal to each feature vector.
        let mut rng = RngState::new(62);
        let mut anchors = random_matrix(5, 3, &mut rng);
        let mut views = random_matrix(5, 3, &mut rng);
        normalize_rows(&mut anchors);
        normalize_rows(&mut views);
        let spec = LossSpec::infonce(0.5, SimKind::Cosine);
        let (ga, gv) = loss_grad(&spec, &anchors, &views, LossAux::default()).unwrap();
        for i in 0..5 {
            assert!(dot(ga.row(i), anchors.row(i)).abs() < 1e-8);
            assert!(dot(gv.row(i), views.row(i)).abs() < 1e-8);
        }
    }

    /// Compare loss_grad against central finite differences on a random
    /// instance, treating (anchors, views) as one stacked variable.
    fn check_grad_fdiff(spec: &LossSpec, n: usize, d: usize, seed: u64, weights: Option<&[f64]>) {
        let mut rng = RngState::new(seed);
        let anchors = random_matrix(n, d, &mut rng);
        let views = random_matrix(n, d, &mut rng);
        let aux = LossAux { p: None, weights };
        let (ga, gv) = loss_grad(spec, &anchors, &views, aux).unwrap();
        let analytic = Matrix::vstack(&[&ga, &gv]).unwrap();

        let stacked = Matrix::vstack(&[&anchors, &views]).unwrap();
        let numeric = finite_diff_grad(
            |m| {
                let a = m.slice_rows(0, n);
                let v = m.slice_rows(n, 2 * n);
                loss_value(spec, &a, &v, aux)
            },
            &stacked,
            1e-4,
        )
        .unwrap();

        let diff = analytic.sub(&numeric).unwrap().sq_sum().sqrt();
        let scale = numeric.sq_sum().sqrt();
        assert!(
            diff / scale < 1e-5,
            "{:?}: rel err {} (analytic norm {}, numeric norm {})",
            spec.kind,
            diff / scale,
            analytic.sq_sum().sqrt(),
            scale
        );
    }

    #[test]
    fn all_pair_losses_match_finite_differences() {
        let weights = [0.3, 1.2, 0.0, 2.0, 0.7];
        for seed in 0..5u64 {
            check_grad_fdiff(&LossSpec::infonce(0.5, SimKind::Cosine), 5, 3, 70 + seed, None);
            check_grad_fdiff(&LossSpec::infonce(1.0, SimKind::NegSqEuclidean), 5, 2, 80 + seed, None);
            check_grad_fdiff(&LossSpec::infonce_unnormalized(0.7), 5, 2, 90 + seed, None);
            check_grad_fdiff(
                &LossSpec::infonce_weighted(0.5, SimKind::Cosine),
                5,
                3,
                100 + seed,
                Some(&weights),
            );
            check_grad_fdiff(&LossSpec::t_simclr(5.0, 0.5), 5, 3, 110 + seed, None);
            check_grad_fdiff(&LossSpec::t_simclr(1.0, 1.0), 5, 2, 120 + seed, None);
        }
    }

    #[test]
    fn sne_kl_gradient_matches_finite_differences() {
        let mut rng = RngState::new(130);
        let x = random_matrix(6, 3, &mut rng);
        let p = p_sne_conditional(&x, &Bandwidths::Shared(1.0)).unwrap();
        for sim_kind in [SimKind::NegSqEuclidean, SimKind::Cosine, SimKind::InnerProduct] {
            let z = random_matrix(6, 2, &mut rng);
            let spec = LossSpec::sne_kl(0.8, sim_kind);
            let aux = LossAux { p: Some(&p), weights: None };
            let (g, _) = loss_grad(&spec, &z, &Matrix::zeros(0, 2), aux).unwrap();
            let numeric = finite_diff_grad(
                |m| loss_value(&spec, m, &Matrix::zeros(0, 2), aux),
                &z,
                1e-4,
            )
            .unwrap();
            let rel = g.sub(&numeric).unwrap().sq_sum().sqrt() / numeric.sq_sum().sqrt();
            assert!(rel < 1e-5, "{sim_kind:?}: rel err {rel}");
        }
    }

    #[test]
    fn t_joint_kl_gradient_matches_finite_differences() {
        use crate::similarity::q_t_joint;
        let mut rng = RngState::new(131);
        let x = random_matrix(5, 3, &mut rng);
        let p = p_sne_conditional(&x, &Bandwidths::Shared(1.0)).unwrap();
        for (t_df, tau) in [(1.0, 1.0), (5.0, 0.5)] {
            let z = random_matrix(5, 2, &mut rng);
            let qb = QBuilder::TJoint { t_df, tau };
            let g = kl_match_grad(&p, &z, &qb).unwrap();
            let numeric = finite_diff_grad(
                |m| kl_match(&p, &q_t_joint(m, t_df, tau).unwrap()),
                &z,
                1e-4,
            )
            .unwrap();
            let rel = g.sub(&numeric).unwrap().sq_sum().sqrt() / numeric.sq_sum().sqrt();
            assert!(rel < 1e-5, "t_df {t_df}: rel err {rel}");
        }
    }

    proptest! {
        // The pair-matching identity holds for every τ and n, not just the
        // τ=1 case pinned above.
        #[test]
        fn matching_identity_for_random_tau(seed in 0u64..200, n in 2usize..10, tau in 0.2f64..3.0) {
            let mut rng = RngState::new(seed);
            let mut anchors = random_matrix(n, 2, &mut rng);
            let mut views = random_matrix(n, 2, &mut rng);
            normalize_rows(&mut anchors);
            normalize_rows(&mut views);
            let z = interleave_pairs(&anchors, &views).unwrap();
            let p = p_positive_pairs(n).unwrap();
            let q = q_gaussian_conditional(&z, SimKind::Cosine, tau).unwrap();
            let kl = kl_match(&p, &q).unwrap();
            let ince = infonce(&anchors, &views, tau, SimKind::Cosine).unwrap();
            prop_assert!((kl - ince - (1.0/(2.0*n as f64)).ln()).abs() < 1e-10);
        }

        #[test]
        fn decomposition_always_exact(seed in 0u64..200, n in 2usize..8) {
            let mut rng = RngState::new(seed);
            let anchors = random_matrix(n, 2, &mut rng);
            let views = random_matrix(n, 2, &mut rng);
            let loss = t_simclr_loss(&anchors, &views, 5.0, 0.5).unwrap();
            let (a, u) = t_simclr_align_uniform(&anchors, &views, 5.0, 0.5).unwrap();
            prop_assert!((a + u - loss).abs() < 1e-12);
            prop_assert!(a >= 0.0);
        }
    }
}
