//! Pairwise-similarity matrices over inputs (P) and features (Q).
//!
//! Everything downstream — the KL matching objective, the contrastive
//! losses, the embedding optimizer — consumes these n×n matrices. A
//! [`SimMatrix`] carries its own normalization discipline: `Conditional`
//! rows each sum to 1, `Joint` entries sum to 1 overall, `Unnormalized`
//! promises nothing beyond nonnegative finite entries and a zero diagonal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{dot, norm2, sq_dist, Matrix, RngState};
use crate::simdata::LambdaSpec;

/// Normalization discipline of a similarity matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixKind {
    /// Each row sums to 1.
    Conditional,
    /// All entries sum to 1.
    Joint,
    /// No normalization constraint.
    Unnormalized,
}

impl MatrixKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MatrixKind::Conditional => "conditional",
            MatrixKind::Joint => "joint",
            MatrixKind::Unnormalized => "unnormalized",
        }
    }
}

/// Pairwise similarity values with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SimMatrix {
    values: Matrix,
    kind: MatrixKind,
}

impl SimMatrix {
    /// Validates squareness, zero diagonal, nonnegative finite entries, and
    /// the normalization the `kind` promises (within 1e-10).
    pub fn new(values: Matrix, kind: MatrixKind) -> Result<SimMatrix> {
        if values.rows() != values.cols() {
            return Err(Error::dim(
                "SimMatrix::new",
                format!("{}x{} is not square", values.rows(), values.cols()),
            ));
        }
        let n = values.rows();
        for i in 0..n {
            if values.get(i, i) != 0.0 {
                return Err(Error::arg(
                    "SimMatrix::new",
                    "values",
                    format!("diagonal entry ({i},{i}) is {}, must be 0", values.get(i, i)),
                ));
            }
            for j in 0..n {
                let v = values.get(i, j);
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::arg(
                        "SimMatrix::new",
                        "values",
                        format!("entry ({i},{j}) = {v} is negative or non-finite"),
                    ));
                }
            }
        }
        match kind {
            MatrixKind::Conditional => {
                for i in 0..n {
                    let s: f64 = values.row(i).iter().sum();
                    if (s - 1.0).abs() > 1e-10 {
                        return Err(Error::arg(
                            "SimMatrix::new",
                            "values",
                            format!("conditional row {i} sums to {s}"),
                        ));
                    }
                }
            }
            MatrixKind::Joint => {
                let s: f64 = values.data().iter().sum();
                if (s - 1.0).abs() > 1e-10 {
                    return Err(Error::arg(
                        "SimMatrix::new",
                        "values",
                        format!("joint entries sum to {s}"),
                    ));
                }
            }
            MatrixKind::Unnormalized => {}
        }
        Ok(SimMatrix { values, kind })
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn kind(&self) -> MatrixKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.values.rows()
    }
}

/// Similarity function between two feature vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimKind {
    /// ⟨a, b⟩ / (‖a‖·‖b‖). Errors on zero vectors.
    Cosine,
    /// −‖a − b‖².
    NegSqEuclidean,
    /// Raw ⟨a, b⟩.
    InnerProduct,
}

impl SimKind {
    pub fn eval(self, a: &[f64], b: &[f64]) -> Result<f64> {
        match self {
            SimKind::Cosine => {
                let (na, nb) = (norm2(a), norm2(b));
                if na == 0.0 || nb == 0.0 {
                    return Err(Error::arg(
                        "SimKind::eval",
                        "features",
                        "cosine similarity of a zero vector",
                    ));
                }
                Ok(dot(a, b) / (na * nb))
            }
            SimKind::NegSqEuclidean => Ok(-sq_dist(a, b)),
            SimKind::InnerProduct => Ok(dot(a, b)),
        }
    }
}

/// Bandwidth choice for the input-space conditional: one shared value or
/// one per row.
#[derive(Debug, Clone, PartialEq)]
pub enum Bandwidths {
    Shared(f64),
    PerRow(Vec<f64>),
}

impl Bandwidths {
    fn get(&self, i: usize, n: usize) -> Result<f64> {
        let h = match self {
            Bandwidths::Shared(h) => *h,
            Bandwidths::PerRow(hs) => {
                if hs.len() != n {
                    return Err(Error::dim(
                        "Bandwidths",
                        format!("{} bandwidths for {} rows", hs.len(), n),
                    ));
                }
                hs[i]
            }
        };
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::arg("Bandwidths", "value", format!("{h} must be > 0")));
        }
        Ok(h)
    }
}

/// Row-wise softmax over off-diagonal entries of a similarity score matrix
/// (row max subtracted for stability). Diagonal comes out exactly 0.
pub(crate) fn softmax_rows_off_diagonal(scores: &Matrix) -> Matrix {
    let n = scores.rows();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        let mut max = f64::NEG_INFINITY;
        for j in 0..n {
            if j != i && scores.get(i, j) > max {
                max = scores.get(i, j);
            }
        }
        let mut sum = 0.0;
        for j in 0..n {
            if j != i {
                let e = (scores.get(i, j) - max).exp();
                out.set(i, j, e);
                sum += e;
            }
        }
        for j in 0..n {
            if j != i {
                out.set(i, j, out.get(i, j) / sum);
            }
        }
    }
    out
}

/// Input-space neighbor conditional: row i is the softmax of
/// −‖x_i − x_j‖²/h_i over j ≠ i.
pub fn p_sne_conditional(x: &Matrix, bandwidths: &Bandwidths) -> Result<SimMatrix> {
    let n = x.rows();
    if n < 2 {
        return Err(Error::dim("p_sne_conditional", "need at least 2 points"));
    }
    let mut scores = Matrix::zeros(n, n);
    for i in 0..n {
        let h = bandwidths.get(i, n)?;
        for j in 0..n {
            if j != i {
                scores.set(i, j, -sq_dist(x.row(i), x.row(j)) / h);
            }
        }
    }
    SimMatrix::new(softmax_rows_off_diagonal(&scores), MatrixKind::Conditional)
}

/// The sparse positive-pair target over 2n interleaved features
/// (anchor_0, view_0, anchor_1, view_1, …): each of the 2n pair entries is
/// exactly 1/(2n) and everything else is 0.
///
/// Stored as `Unnormalized`: each row sums to 1/(2n) — deliberately not
/// row-stochastic — while the total mass is 1. Keeping the per-entry value
/// at 1/(2n) is what makes KL matching against a feature-space conditional
/// reproduce the contrastive loss up to the exact constant log(1/(2n)); see
/// [`crate::losses::kl_match`].
pub fn p_positive_pairs(n: usize) -> Result<SimMatrix> {
    if n < 1 {
        return Err(Error::arg("p_positive_pairs", "n", "need at least 1 pair"));
    }
    let size = 2 * n;
    let v = 1.0 / size as f64;
    let mut values = Matrix::zeros(size, size);
    for i in 0..n {
        values.set(2 * i, 2 * i + 1, v);
        values.set(2 * i + 1, 2 * i, v);
    }
    SimMatrix::new(values, MatrixKind::Unnormalized)
}

/// Per-pair weights from crop overlap: exp(iou/τ_w), normalized to mean 1
/// so that constant overlap reproduces the unweighted loss exactly.
pub fn p_weighted_pairs(ious: &[f64], tau_w: f64) -> Result<Vec<f64>> {
    if !(tau_w > 0.0 && tau_w.is_finite()) {
        return Err(Error::arg("p_weighted_pairs", "tau_w", format!("{tau_w} must be > 0")));
    }
    if ious.is_empty() {
        return Err(Error::arg("p_weighted_pairs", "ious", "empty"));
    }
    for (i, &v) in ious.iter().enumerate() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::arg(
                "p_weighted_pairs",
                "ious",
                format!("entry {i} = {v} outside [0, 1]"),
            ));
        }
    }
    let mut w: Vec<f64> = ious.iter().map(|&v| (v / tau_w).exp()).collect();
    let mean: f64 = w.iter().sum::<f64>() / w.len() as f64;
    for v in &mut w {
        *v /= mean;
    }
    Ok(w)
}

/// Pair similarities induced by an additive-noise augmentation with noise
/// density φ: entry (i, j) = φ(x_i − x_j), diagonal zeroed. φ must be
/// symmetric (φ(v) = φ(−v)) — caller contract, so the result is symmetric.
pub fn p_noise_induced(x: &Matrix, phi: impl Fn(&[f64]) -> f64) -> Result<SimMatrix> {
    let n = x.rows();
    if n < 2 {
        return Err(Error::dim("p_noise_induced", "need at least 2 points"));
    }
    let mut values = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let diff: Vec<f64> = x
                .row(i)
                .iter()
                .zip(x.row(j))
                .map(|(&a, &b)| a - b)
                .collect();
            let v = phi(&diff);
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::non_finite(
                    "p_noise_induced",
                    format!("phi at pair ({i},{j}) = {v}"),
                ));
            }
            values.set(i, j, v);
        }
    }
    SimMatrix::new(values, MatrixKind::Unnormalized)
}

/// The isotropic Gaussian N(0, σ²I) density in d dimensions, the φ induced
/// by [`crate::simdata::augment_gaussian_noise`].
pub fn gaussian_density(sigma: f64, d: usize) -> impl Fn(&[f64]) -> f64 {
    let norm = (2.0 * std::f64::consts::PI * sigma * sigma).powf(-(d as f64) / 2.0);
    let inv = 1.0 / (2.0 * sigma * sigma);
    move |v: &[f64]| norm * (-dot(v, v) * inv).exp()
}

/// Pair similarities induced by mixup, estimated by Monte Carlo KDE.
///
/// Draws `m_samples` displacements λ·(x_a − x_b) (uniform distinct pair,
/// λ from `lambda_spec`), then evaluates a Gaussian kernel density estimate
/// at every pairwise difference x_i − x_j. `bandwidth` defaults (None) to a
/// Silverman-style rule: pooled per-coordinate std of the draws times
/// m_samples^(−1/(d+4)). The estimate is explicitly symmetrized as
/// (V + Vᵀ)/2 since the finite-sample KDE is only symmetric in expectation.
pub fn p_mixup_induced(
    x: &Matrix,
    lambda_spec: LambdaSpec,
    m_samples: usize,
    bandwidth: Option<f64>,
    rng: &mut RngState,
) -> Result<SimMatrix> {
    let n = x.rows();
    let d = x.cols();
    if n < 2 {
        return Err(Error::dim("p_mixup_induced", "need at least 2 points"));
    }
    if m_samples < 100 {
        return Err(Error::arg(
            "p_mixup_induced",
            "m_samples",
            format!("{m_samples} draws is too few (need ≥ 100)"),
        ));
    }
    if let Some(h) = bandwidth {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::arg("p_mixup_induced", "bandwidth", format!("{h} must be > 0")));
        }
    }

    // Monte Carlo draws of the mixup displacement.
    let mut draws = Matrix::zeros(m_samples, d);
    for s in 0..m_samples {
        let a = rng.below(n);
        let mut b = rng.below(n - 1);
        if b >= a {
            b += 1;
        }
        let lambda = match lambda_spec {
            LambdaSpec::Fixed { lambda } => lambda,
            LambdaSpec::Beta { alpha, beta } => rng.beta(alpha, beta),
        };
        for k in 0..d {
            draws.set(s, k, lambda * (x.get(a, k) - x.get(b, k)));
        }
    }

    let h = match bandwidth {
        Some(h) => h,
        None => {
            let mean = draws.col_mean();
            let var = draws.col_var_biased(&mean);
            let pooled_std = (var.iter().sum::<f64>() / d as f64).sqrt().max(1e-12);
            pooled_std * (m_samples as f64).powf(-1.0 / (d as f64 + 4.0))
        }
    };

    let kernel_norm = (2.0 * std::f64::consts::PI * h * h).powf(-(d as f64) / 2.0);
    let inv = 1.0 / (2.0 * h * h);
    let mut values = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let mut acc = 0.0;
            for s in 0..m_samples {
                let mut d2 = 0.0;
                for k in 0..d {
                    let u = (x.get(i, k) - x.get(j, k)) - draws.get(s, k);
                    d2 += u * u;
                }
                acc += (-d2 * inv).exp();
            }
            values.set(i, j, kernel_norm * acc / m_samples as f64);
        }
    }
    // Symmetrize.
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (values.get(i, j) + values.get(j, i));
            values.set(i, j, v);
            values.set(j, i, v);
        }
    }
    SimMatrix::new(values, MatrixKind::Unnormalized)
}

/// Feature-space conditional: row i is the softmax of sim(z_i, z_j)/τ over
/// j ≠ i.
pub fn q_gaussian_conditional(z: &Matrix, sim_kind: SimKind, tau: f64) -> Result<SimMatrix> {
    let n = z.rows();
    if n < 2 {
        return Err(Error::dim("q_gaussian_conditional", "need at least 2 features"));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::arg("q_gaussian_conditional", "tau", format!("{tau} must be > 0")));
    }
    let mut scores = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if j != i {
                scores.set(i, j, sim_kind.eval(z.row(i), z.row(j))? / tau);
            }
        }
    }
    SimMatrix::new(softmax_rows_off_diagonal(&scores), MatrixKind::Conditional)
}

/// The heavy-tailed pair weight (1 + d²/(τ·t_df))^(−(t_df+1)/2). At
/// t_df = 1, τ = 1 this is the Cauchy kernel 1/(1+d²).
pub(crate) fn t_weight(d2: f64, t_df: f64, tau: f64) -> f64 {
    (1.0 + d2 / (tau * t_df)).powf(-(t_df + 1.0) / 2.0)
}

/// Feature-space joint with t-distribution tails:
/// Q_ij = w(z_i,z_j) / Σ_{k≠l} w(z_k,z_l), w as in [`t_weight`]. Symmetric;
/// sums to 1 over ordered pairs.
pub fn q_t_joint(z: &Matrix, t_df: f64, tau: f64) -> Result<SimMatrix> {
    let n = z.rows();
    if n < 2 {
        return Err(Error::dim("q_t_joint", "need at least 2 features"));
    }
    if !(t_df > 0.0 && t_df.is_finite()) {
        return Err(Error::arg("q_t_joint", "t_df", format!("{t_df} must be > 0")));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::arg("q_t_joint", "tau", format!("{tau} must be > 0")));
    }
    let mut values = Matrix::zeros(n, n);
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if j != i {
                let w = t_weight(sq_dist(z.row(i), z.row(j)), t_df, tau);
                values.set(i, j, w);
                total += w;
            }
        }
    }
    for v in values.data_mut() {
        *v /= total;
    }
    SimMatrix::new(values, MatrixKind::Joint)
}

/// Recipe for turning a feature matrix into a Q matrix — the knob that
/// selects what the embedding optimizer and the KL gradient machinery match
/// against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum QBuilder {
    GaussianConditional { sim_kind: SimKind, tau: f64 },
    TJoint { t_df: f64, tau: f64 },
}

impl QBuilder {
    pub fn build(&self, z: &Matrix) -> Result<SimMatrix> {
        match *self {
            QBuilder::GaussianConditional { sim_kind, tau } => {
                q_gaussian_conditional(z, sim_kind, tau)
            }
            QBuilder::TJoint { t_df, tau } => q_t_joint(z, t_df, tau),
        }
    }
}
