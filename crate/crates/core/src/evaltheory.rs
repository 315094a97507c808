//! Evaluation protocols and brute-force numerical oracles.
//!
//! Two kinds of things live here. The evaluation half scores a frozen
//! feature map the way the experiments do: weighted KNN, a multinomial
//! logistic probe, alignment / uniformity summaries, a Monte Carlo
//! smoothness estimate, and class-level cosine heatmaps. The oracle half
//! re-derives, by exhaustive enumeration or dense summation, the algebraic
//! identities the loss implementations rely on, so the fast paths can be
//! checked against something that is obviously correct.

use itertools::Itertools;

use crate::error::{Error, Result};
use crate::losses::{infonce, interleave_pairs, kl_match};
use crate::numkit::{dot, norm2, sq_dist, Matrix, RngState};
use crate::similarity::{p_positive_pairs, q_gaussian_conditional, SimKind};

/// How KNN votes are tallied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnnWeighting {
    /// Every neighbor contributes one vote.
    Uniform,
    /// Every neighbor votes with its cosine similarity to the query,
    /// whatever metric selected the neighbors.
    CosineWeighted,
}

/// Which metric ranks candidate neighbors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnnMetric {
    /// Largest cosine similarity first.
    Cosine,
    /// Smallest Euclidean distance first. Useful for one-dimensional or
    /// otherwise unnormalized features, where cosine degenerates to a sign.
    Euclidean,
}

/// Classify each query row by a weighted vote among its `k` nearest
/// reference rows. Returns the predictions and the accuracy against
/// `query_y`. Vote ties go to the lowest class index; ties in neighbor
/// rank are broken by the lower reference index.
pub fn knn_classify(
    ref_z: &Matrix,
    ref_y: &[usize],
    query_z: &Matrix,
    query_y: &[usize],
    k: usize,
    metric: KnnMetric,
    weighting: KnnWeighting,
) -> Result<(Vec<usize>, f64)> {
    let n_ref = ref_z.rows();
    if n_ref == 0 {
        return Err(Error::arg("knn_classify", "ref_z", "empty reference set"));
    }
    if ref_y.len() != n_ref {
        return Err(Error::dim(
            "knn_classify",
            format!("{} reference rows but {} labels", n_ref, ref_y.len()),
        ));
    }
    if query_y.len() != query_z.rows() {
        return Err(Error::dim(
            "knn_classify",
            format!("{} query rows but {} labels", query_z.rows(), query_y.len()),
        ));
    }
    if query_z.cols() != ref_z.cols() {
        return Err(Error::dim(
            "knn_classify",
            format!("query dim {} vs reference dim {}", query_z.cols(), ref_z.cols()),
        ));
    }
    if k == 0 || k > n_ref {
        return Err(Error::arg(
            "knn_classify",
            "k",
            format!("k = {k} must be in 1..={n_ref}"),
        ));
    }
    let n_classes = 1 + ref_y.iter().copied().max().unwrap_or(0);

    let mut predictions = Vec::with_capacity(query_z.rows());
    let mut hits = 0usize;
    for qi in 0..query_z.rows() {
        let q = query_z.row(qi);
        // Score every reference so that larger is always better, then pick
        // the top k deterministically.
        let mut scored: Vec<(f64, usize)> = Vec::with_capacity(n_ref);
        for ri in 0..n_ref {
            let s = match metric {
                KnnMetric::Cosine => SimKind::Cosine.eval(q, ref_z.row(ri))?,
                KnnMetric::Euclidean => -sq_dist(q, ref_z.row(ri)).sqrt(),
            };
            scored.push((s, ri));
        }
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));

        let mut votes = vec![0.0f64; n_classes];
        for &(_, ri) in scored.iter().take(k) {
            let w = match weighting {
                KnnWeighting::Uniform => 1.0,
                KnnWeighting::CosineWeighted => SimKind::Cosine.eval(q, ref_z.row(ri))?,
            };
            votes[ref_y[ri]] += w;
        }
        let mut best = 0usize;
        for c in 1..n_classes {
            if votes[c] > votes[best] {
                best = c;
            }
        }
        if best == query_y[qi] {
            hits += 1;
        }
        predictions.push(best);
    }
    let accuracy = hits as f64 / query_y.len().max(1) as f64;
    Ok((predictions, accuracy))
}

/// Default probe budget used by the command-line experiments.
pub const PROBE_EPOCHS: usize = 500;
/// Default probe learning rate used by the command-line experiments.
pub const PROBE_LR: f64 = 0.1;

/// Fit a multinomial logistic regression on frozen features by full-batch
/// gradient descent from zero initialization (no regularization), then
/// report the accuracy on the test split. Deterministic: there is no
/// randomness anywhere in the procedure.
pub fn linear_probe(
    train_z: &Matrix,
    train_y: &[usize],
    test_z: &Matrix,
    test_y: &[usize],
    epochs: usize,
    lr: f64,
) -> Result<f64> {
    let n = train_z.rows();
    if n == 0 || train_y.len() != n {
        return Err(Error::dim(
            "linear_probe",
            format!("{} train rows but {} labels", n, train_y.len()),
        ));
    }
    if test_y.len() != test_z.rows() {
        return Err(Error::dim(
            "linear_probe",
            format!("{} test rows but {} labels", test_z.rows(), test_y.len()),
        ));
    }
    if test_z.cols() != train_z.cols() {
        return Err(Error::dim(
            "linear_probe",
            format!("test dim {} vs train dim {}", test_z.cols(), train_z.cols()),
        ));
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::arg("linear_probe", "lr", "must be positive and finite"));
    }
    if epochs == 0 {
        return Err(Error::arg("linear_probe", "epochs", "must be at least 1"));
    }
    let n_classes = 1 + train_y
        .iter()
        .chain(test_y.iter())
        .copied()
        .max()
        .unwrap_or(0);
    if train_y.iter().copied().collect::<std::collections::BTreeSet<_>>().len() < 2 {
        return Err(Error::arg(
            "linear_probe",
            "train_y",
            "need at least 2 distinct classes",
        ));
    }

    let d = train_z.cols();
    // Weights are (d_z + 1) per class; the extra column is the bias.
    let mut w = Matrix::zeros(n_classes, d + 1);
    let mut logits = vec![0.0f64; n_classes];
    let mut grad = Matrix::zeros(n_classes, d + 1);
    for _ in 0..epochs {
        grad.data_mut().fill(0.0);
        for i in 0..n {
            let zi = train_z.row(i);
            for (c, logit) in logits.iter_mut().enumerate() {
                *logit = dot(&w.row(c)[..d], zi) + w.get(c, d);
            }
            softmax_in_place(&mut logits);
            for c in 0..n_classes {
                let err = logits[c] - if c == train_y[i] { 1.0 } else { 0.0 };
                let gr = grad.row_mut(c);
                for (j, &zj) in zi.iter().enumerate() {
                    gr[j] += err * zj;
                }
                gr[d] += err;
            }
        }
        let scale = -lr / n as f64;
        w.add_scaled(&grad, scale)?;
    }

    let mut hits = 0usize;
    for i in 0..test_z.rows() {
        let zi = test_z.row(i);
        let mut best = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for c in 0..n_classes {
            let s = dot(&w.row(c)[..d], zi) + w.get(c, d);
            if s > best_score {
                best_score = s;
                best = c;
            }
        }
        if best == test_y[i] {
            hits += 1;
        }
    }
    Ok(hits as f64 / test_y.len().max(1) as f64)
}

fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Mean positive-pair cosine similarity between matched rows. Pairs where
/// either feature is the zero vector contribute 0.
pub fn alignment_score(anchors_z: &Matrix, views_z: &Matrix) -> Result<f64> {
    if anchors_z.rows() != views_z.rows() || anchors_z.cols() != views_z.cols() {
        return Err(Error::dim(
            "alignment_score",
            format!(
                "anchors {}x{} vs views {}x{}",
                anchors_z.rows(),
                anchors_z.cols(),
                views_z.rows(),
                views_z.cols()
            ),
        ));
    }
    if anchors_z.rows() == 0 {
        return Err(Error::arg("alignment_score", "anchors_z", "no rows"));
    }
    let mut sum = 0.0;
    for i in 0..anchors_z.rows() {
        let denom = norm2(anchors_z.row(i)) * norm2(views_z.row(i));
        if denom > 0.0 {
            sum += dot(anchors_z.row(i), views_z.row(i)) / denom;
        }
    }
    Ok(sum / anchors_z.rows() as f64)
}

/// Log of the mean Gaussian potential over distinct feature pairs,
/// `log mean_{u != v} exp(-||z_u - z_v||^2)`. Lower is more uniform.
pub fn gaussian_potential(z: &Matrix) -> Result<f64> {
    let m = z.rows();
    if m < 2 {
        return Err(Error::arg("gaussian_potential", "z", "need at least 2 rows"));
    }
    let mut sum = 0.0;
    for u in 0..m {
        for v in 0..m {
            if u != v {
                sum += (-sq_dist(z.row(u), z.row(v))).exp();
            }
        }
    }
    Ok((sum / (m * (m - 1)) as f64).ln())
}

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzEstimate {
    pub mean: f64,
    pub std_error: f64,
}

/// Monte Carlo estimate of the expected local stretch
/// `E ||f(x) - f(x')|| / ||x - x'||` over random distinct sample pairs.
/// Pairs that land on identical inputs are resampled.
pub fn lipschitz_estimate(
    embed_fn: impl Fn(&Matrix) -> Result<Matrix>,
    x: &Matrix,
    pair_count: usize,
    rng: &mut RngState,
) -> Result<LipschitzEstimate> {
    let n = x.rows();
    if n < 2 {
        return Err(Error::arg("lipschitz_estimate", "x", "need at least 2 rows"));
    }
    if pair_count == 0 {
        return Err(Error::arg("lipschitz_estimate", "pair_count", "must be at least 1"));
    }
    let distinct_exists = (1..n).any(|i| x.row(i) != x.row(0));
    if !distinct_exists {
        return Err(Error::arg(
            "lipschitz_estimate",
            "x",
            "all points are identical; no valid pairs",
        ));
    }
    let z = embed_fn(x)?;
    if z.rows() != n {
        return Err(Error::dim(
            "lipschitz_estimate",
            format!("embed_fn returned {} rows for {} inputs", z.rows(), n),
        ));
    }

    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..pair_count {
        let (i, j) = loop {
            let i = rng.below(n);
            let j = rng.below(n);
            if i != j && x.row(i) != x.row(j) {
                break (i, j);
            }
        };
        let dx = sq_dist(x.row(i), x.row(j)).sqrt();
        let dz = sq_dist(z.row(i), z.row(j)).sqrt();
        let ratio = dz / dx;
        sum += ratio;
        sum_sq += ratio * ratio;
    }
    let m = pair_count as f64;
    let mean = sum / m;
    let var = (sum_sq / m - mean * mean).max(0.0);
    let std_error = if pair_count > 1 { (var / (m - 1.0)).sqrt() } else { 0.0 };
    Ok(LipschitzEstimate { mean, std_error })
}

/// Outcome of comparing a cyclic class order against an expected one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderVerdict {
    /// The angular order equals the expected sequence up to rotation.
    Match,
    /// It equals the reversed expected sequence up to rotation.
    ReverseMatch,
    /// Neither orientation matches.
    Mismatch,
}

impl OrderVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            OrderVerdict::Match => "match",
            OrderVerdict::ReverseMatch => "reverse_match",
            OrderVerdict::Mismatch => "mismatch",
        }
    }
}

/// Reference point for angular ordering of class means.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderCenter {
    /// Angles around the origin — natural for features on the circle.
    Origin,
    /// Angles around the centroid of the class means — natural for
    /// unconstrained planar features.
    Centroid,
}

/// Mean feature vector per class. Classes must be labeled 0..m-1 with
/// every class present.
pub fn class_means(z: &Matrix, labels: &[usize]) -> Result<Matrix> {
    if labels.len() != z.rows() {
        return Err(Error::dim(
            "class_means",
            format!("{} rows but {} labels", z.rows(), labels.len()),
        ));
    }
    if z.rows() == 0 {
        return Err(Error::arg("class_means", "z", "no rows"));
    }
    let m = 1 + labels.iter().copied().max().unwrap();
    let mut sums = Matrix::zeros(m, z.cols());
    let mut counts = vec![0usize; m];
    for (i, &c) in labels.iter().enumerate() {
        counts[c] += 1;
        let row = sums.row_mut(c);
        for (j, &v) in z.row(i).iter().enumerate() {
            row[j] += v;
        }
    }
    for (c, &count) in counts.iter().enumerate() {
        if count == 0 {
            return Err(Error::arg("class_means", "labels", format!("class {c} is empty")));
        }
        for v in sums.row_mut(c) {
            *v /= count as f64;
        }
    }
    Ok(sums)
}

/// Angle (degrees, in (-180, 180]) of each class mean around the chosen
/// center. Requires 2-D features and class means distinct from the center.
pub fn class_mean_angles(z: &Matrix, labels: &[usize], center: OrderCenter) -> Result<Vec<f64>> {
    if z.cols() != 2 {
        return Err(Error::dim(
            "class_mean_angles",
            format!("features must be 2-D, got {} columns", z.cols()),
        ));
    }
    let means = class_means(z, labels)?;
    let (cx, cy) = match center {
        OrderCenter::Origin => (0.0, 0.0),
        OrderCenter::Centroid => {
            let m = means.rows() as f64;
            (
                (0..means.rows()).map(|c| means.get(c, 0)).sum::<f64>() / m,
                (0..means.rows()).map(|c| means.get(c, 1)).sum::<f64>() / m,
            )
        }
    };
    let mut angles = Vec::with_capacity(means.rows());
    for c in 0..means.rows() {
        let dx = means.get(c, 0) - cx;
        let dy = means.get(c, 1) - cy;
        if dx.hypot(dy) < 1e-12 {
            return Err(Error::arg(
                "class_mean_angles",
                "z",
                format!("class {c} mean coincides with the center"),
            ));
        }
        angles.push(dy.atan2(dx).to_degrees());
    }
    Ok(angles)
}

/// Gaps between consecutive angles (degrees) around the circle, including
/// the wrap-around gap. The gaps sum to 360.
pub fn circular_gaps(angles_deg: &[f64]) -> Vec<f64> {
    if angles_deg.len() < 2 {
        return vec![360.0];
    }
    let mut sorted = angles_deg.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut gaps: Vec<f64> = sorted.windows(2).map(|w| w[1] - w[0]).collect();
    gaps.push(360.0 - (sorted[sorted.len() - 1] - sorted[0]));
    gaps
}

/// Compare the cyclic angular order of class means against an expected
/// label sequence, up to rotation and reflection. The loss landscape is
/// invariant to global rotations and reflections of the feature space, so
/// only the cyclic structure is meaningful.
pub fn order_cycle_check(
    z: &Matrix,
    labels: &[usize],
    expected: &[usize],
    center: OrderCenter,
) -> Result<OrderVerdict> {
    let means = class_means(z, labels)?;
    let m = means.rows();
    if m < 3 {
        return Err(Error::arg("order_cycle_check", "labels", "need at least 3 classes"));
    }
    if expected.len() != m {
        return Err(Error::dim(
            "order_cycle_check",
            format!("{m} classes but expected sequence has {} entries", expected.len()),
        ));
    }
    for a in 0..m {
        for b in (a + 1)..m {
            if sq_dist(means.row(a), means.row(b)) < 1e-24 {
                return Err(Error::arg(
                    "order_cycle_check",
                    "z",
                    format!("class means {a} and {b} coincide"),
                ));
            }
        }
    }
    let angles = class_mean_angles(z, labels, center)?;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| angles[a].partial_cmp(&angles[b]).unwrap());

    if cyclic_equal(&order, expected) {
        Ok(OrderVerdict::Match)
    } else {
        let reversed: Vec<usize> = expected.iter().rev().copied().collect();
        if cyclic_equal(&order, &reversed) {
            Ok(OrderVerdict::ReverseMatch)
        } else {
            Ok(OrderVerdict::Mismatch)
        }
    }
}

fn cyclic_equal(a: &[usize], b: &[usize]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let n = a.len();
    (0..n).any(|shift| (0..n).all(|i| a[(i + shift) % n] == b[i]))
}

/// Result of enumerating all permutations in the matching-criteria oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct PermVerdict {
    /// Permutations minimizing the similarity-ratio criterion.
    pub c1_argmin: Vec<Vec<usize>>,
    /// Permutations minimizing the squared-Frobenius criterion.
    pub frob_argmin: Vec<Vec<usize>>,
    pub c1_min: f64,
    pub frob_sq_min: f64,
    /// Square root of `frob_sq_min`; same minimizers, reported for
    /// convenience.
    pub frob_min: f64,
    /// Whether the two argmin sets are identical.
    pub identical: bool,
    /// Spread of `frob_sq - 2*c1` across permutations. The two criteria
    /// differ by exactly this constant, so the spread is float noise.
    pub const_spread: f64,
}

/// Exhaustively verify, for one instance, that ranking embeddings by the
/// ratio criterion `sum_{i != j} q_{pi(i)pi(j)} / p_ij` (with negative
/// distances as similarities) picks exactly the same permutations as
/// ranking by `sum (1/||x_i - x_j|| + ||z_pi(i) - z_pi(j)||)^2`.
pub fn theorem1_oracle(x: &Matrix, z: &Matrix) -> Result<PermVerdict> {
    let n = x.rows();
    if z.rows() != n {
        return Err(Error::dim(
            "theorem1_oracle",
            format!("{} input rows vs {} feature rows", n, z.rows()),
        ));
    }
    if !(2..=6).contains(&n) {
        return Err(Error::arg(
            "theorem1_oracle",
            "x",
            format!("n = {n} outside 2..=6 (factorial enumeration)"),
        ));
    }
    let mut x_dist = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let d = sq_dist(x.row(i), x.row(j)).sqrt();
                if d <= 0.0 {
                    return Err(Error::arg(
                        "theorem1_oracle",
                        "x",
                        format!("rows {i} and {j} coincide"),
                    ));
                }
                x_dist.set(i, j, d);
            }
        }
    }
    let mut z_dist = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                z_dist.set(i, j, sq_dist(z.row(i), z.row(j)).sqrt());
            }
        }
    }

    let mut perms: Vec<Vec<usize>> = Vec::new();
    let mut c1_vals: Vec<f64> = Vec::new();
    let mut frob_vals: Vec<f64> = Vec::new();
    for perm in (0..n).permutations(n) {
        let mut c1 = 0.0;
        let mut frob = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let xd = x_dist.get(i, j);
                    let zd = z_dist.get(perm[i], perm[j]);
                    // Similarities are negative distances, so the ratio
                    // q/p is zd/xd and the target entry -1/p is 1/xd.
                    c1 += zd / xd;
                    let diff = 1.0 / xd + zd;
                    frob += diff * diff;
                }
            }
        }
        perms.push(perm);
        c1_vals.push(c1);
        frob_vals.push(frob);
    }

    let argmin_set = |vals: &[f64]| -> (f64, Vec<Vec<usize>>) {
        let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let tol = 1e-9 * min.abs().max(1.0);
        let set = vals
            .iter()
            .zip(&perms)
            .filter(|(v, _)| **v <= min + tol)
            .map(|(_, p)| p.clone())
            .collect();
        (min, set)
    };
    let (c1_min, c1_argmin) = argmin_set(&c1_vals);
    let (frob_sq_min, frob_argmin) = argmin_set(&frob_vals);

    let diffs: Vec<f64> = frob_vals.iter().zip(&c1_vals).map(|(f, c)| f - 2.0 * c).collect();
    let const_spread = diffs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - diffs.iter().copied().fold(f64::INFINITY, f64::min);

    let identical = c1_argmin == frob_argmin;
    Ok(PermVerdict {
        c1_argmin,
        frob_argmin,
        c1_min,
        frob_sq_min,
        frob_min: frob_sq_min.sqrt(),
        identical,
        const_spread,
    })
}

/// Verdict of the sorted-sequence matching check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RearrangementVerdict {
    /// Identity permutation minimizes `sum y_pi(i) / x_i`.
    pub ratio_ok: bool,
    /// Identity permutation minimizes `sum (x_i - y_pi(i))^2`.
    pub squares_ok: bool,
}

impl RearrangementVerdict {
    pub fn holds(&self) -> bool {
        self.ratio_ok && self.squares_ok
    }
}

/// For strictly ascending, positive, unit-sum-of-squares sequences `x`
/// and `y`, check by enumeration that pairing them in order minimizes
/// both the ratio sum and the squared-difference sum.
pub fn rearrangement_oracle(x: &[f64], y: &[f64]) -> Result<RearrangementVerdict> {
    if x.len() != y.len() {
        return Err(Error::dim(
            "rearrangement_oracle",
            format!("lengths {} vs {}", x.len(), y.len()),
        ));
    }
    let m = x.len();
    if !(2..=8).contains(&m) {
        return Err(Error::arg(
            "rearrangement_oracle",
            "x",
            format!("length {m} outside 2..=8 (factorial enumeration)"),
        ));
    }
    for (name, s) in [("x", x), ("y", y)] {
        for w in s.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::arg("rearrangement_oracle", "x", format!("{name} not strictly ascending")));
            }
        }
        if s[0] <= 0.0 {
            return Err(Error::arg("rearrangement_oracle", "x", format!("{name} not positive")));
        }
        let sq: f64 = s.iter().map(|v| v * v).sum();
        if (sq - 1.0).abs() > 1e-9 {
            return Err(Error::arg(
                "rearrangement_oracle",
                "x",
                format!("{name} squares sum to {sq}, expected 1"),
            ));
        }
    }

    let ratio = |perm: &[usize]| -> f64 { perm.iter().zip(x).map(|(&p, &xi)| y[p] / xi).sum() };
    let squares = |perm: &[usize]| -> f64 {
        perm.iter().zip(x).map(|(&p, &xi)| (xi - y[p]) * (xi - y[p])).sum()
    };
    let identity: Vec<usize> = (0..m).collect();
    let id_ratio = ratio(&identity);
    let id_squares = squares(&identity);
    let mut min_ratio = f64::INFINITY;
    let mut min_squares = f64::INFINITY;
    for perm in (0..m).permutations(m) {
        min_ratio = min_ratio.min(ratio(&perm));
        min_squares = min_squares.min(squares(&perm));
    }
    let tol_r = 1e-12 * min_ratio.abs().max(1.0);
    let tol_s = 1e-12 * min_squares.abs().max(1.0);
    Ok(RearrangementVerdict {
        ratio_ok: id_ratio <= min_ratio + tol_r,
        squares_ok: id_squares <= min_squares + tol_s,
    })
}

/// Evaluate, on random features, how far the KL matching value of the
/// sparse pair target is from the InfoNCE value plus its `log(1/(2n))`
/// constant. Returns the absolute residual, which should be float noise.
pub fn equivalence_check(n: usize, rng: &mut RngState) -> Result<f64> {
    if n < 2 {
        return Err(Error::arg("equivalence_check", "n", "need at least 2 pairs"));
    }
    let d = 4;
    let mut anchors = Matrix::zeros(n, d);
    let mut views = Matrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            anchors.set(i, j, rng.gaussian());
            views.set(i, j, rng.gaussian());
        }
    }
    let p = p_positive_pairs(n)?;
    let stacked = interleave_pairs(&anchors, &views)?;
    let q = q_gaussian_conditional(&stacked, SimKind::Cosine, 1.0)?;
    let kl = kl_match(&p, &q)?;
    let nce = infonce(&anchors, &views, 1.0, SimKind::Cosine)?;
    let constant = (1.0 / (2.0 * n as f64)).ln();
    Ok((kl - nce - constant).abs())
}

/// Residual of the discrete cross-entropy decomposition for one feature
/// assignment: direct cross entropy minus (attraction + normalizer) terms.
/// The residual depends only on the densities, never on `f`.
///
/// `p_x` is a strictly positive distribution over grid cells (sums to 1),
/// `p_cond` its row-normalized transition matrix, and `f` one feature row
/// per cell. Weights use the heavy-tailed kernel `1/(1 + ||f_i - f_j||^2)`.
pub fn ce_residual(p_x: &[f64], p_cond: &Matrix, f: &Matrix) -> Result<f64> {
    let cells = p_x.len();
    if cells == 0 {
        return Err(Error::arg("ce_residual", "p_x", "empty grid"));
    }
    if p_cond.rows() != cells || p_cond.cols() != cells {
        return Err(Error::dim(
            "ce_residual",
            format!("conditional is {}x{}, expected {cells}x{cells}", p_cond.rows(), p_cond.cols()),
        ));
    }
    if f.rows() != cells {
        return Err(Error::dim(
            "ce_residual",
            format!("{} feature rows for {cells} cells", f.rows()),
        ));
    }
    let total: f64 = p_x.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::arg("ce_residual", "p_x", format!("sums to {total}, expected 1")));
    }
    for (i, &p) in p_x.iter().enumerate() {
        if p <= 0.0 {
            return Err(Error::arg("ce_residual", "p_x", format!("zero density at cell {i}")));
        }
    }
    for i in 0..cells {
        let mut row_sum = 0.0;
        for j in 0..cells {
            let v = p_cond.get(i, j);
            if v < 0.0 {
                return Err(Error::arg("ce_residual", "p_cond", format!("negative entry at ({i},{j})")));
            }
            row_sum += v;
        }
        if (row_sum - 1.0).abs() > 1e-9 {
            return Err(Error::arg(
                "ce_residual",
                "p_cond",
                format!("row {i} sums to {row_sum}, expected 1"),
            ));
        }
    }

    // Kernel weights and per-cell normalizers.
    let mut weight = Matrix::zeros(cells, cells);
    let mut normalizer = vec![0.0f64; cells];
    for i in 0..cells {
        for j in 0..cells {
            let w = 1.0 / (1.0 + sq_dist(f.row(i), f.row(j)));
            weight.set(i, j, w);
            normalizer[i] += p_x[j] * w;
        }
    }

    // Direct path: build the induced conditional and take the cross
    // entropy against p_cond.
    let mut cross_entropy = 0.0;
    for i in 0..cells {
        for j in 0..cells {
            let c = p_cond.get(i, j);
            if c > 0.0 {
                let q = p_x[j] * weight.get(i, j) / normalizer[i];
                cross_entropy -= p_x[i] * c * q.ln();
            }
        }
    }

    // Decomposition path: attraction term plus log-normalizer term,
    // accumulated independently of the direct path.
    let mut attract = 0.0;
    for i in 0..cells {
        let mut row = 0.0;
        for j in 0..cells {
            let c = p_cond.get(i, j);
            if c > 0.0 {
                row += c * (1.0 + sq_dist(f.row(i), f.row(j))).ln();
            }
        }
        attract += p_x[i] * row;
    }
    let mut log_norm = 0.0;
    for i in 0..cells {
        log_norm += p_x[i] * normalizer[i].ln();
    }

    Ok(cross_entropy - attract - log_norm)
}

/// Spread (max minus min) of the decomposition residual across `trials`
/// random feature assignments. Constancy of the residual is the testable
/// content of the decomposition: everything feature-dependent cancels.
pub fn ce_decomposition_check(
    p_x: &[f64],
    p_cond: &Matrix,
    trials: usize,
    d_z: usize,
    rng: &mut RngState,
) -> Result<f64> {
    if trials < 5 {
        return Err(Error::arg("ce_decomposition_check", "trials", "need at least 5"));
    }
    if d_z == 0 {
        return Err(Error::arg("ce_decomposition_check", "d_z", "must be at least 1"));
    }
    let cells = p_x.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for _ in 0..trials {
        let mut f = Matrix::zeros(cells, d_z);
        for v in f.data_mut() {
            *v = rng.gaussian();
        }
        let r = ce_residual(p_x, p_cond, &f)?;
        lo = lo.min(r);
        hi = hi.max(r);
    }
    Ok(hi - lo)
}

/// Mean pairwise cosine between features of every pair of classes.
/// Entry (a, b) averages over all ordered pairs in class a x class b,
/// including the self-pair when a == b, so a singleton class still has a
/// well-defined diagonal.
pub fn class_cosine_heatmap(z: &Matrix, labels: &[usize]) -> Result<Matrix> {
    if labels.len() != z.rows() {
        return Err(Error::dim(
            "class_cosine_heatmap",
            format!("{} rows but {} labels", z.rows(), labels.len()),
        ));
    }
    if z.rows() == 0 {
        return Err(Error::arg("class_cosine_heatmap", "z", "no rows"));
    }
    let m = 1 + labels.iter().copied().max().unwrap();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (i, &c) in labels.iter().enumerate() {
        by_class[c].push(i);
    }
    for (c, members) in by_class.iter().enumerate() {
        if members.is_empty() {
            return Err(Error::arg("class_cosine_heatmap", "labels", format!("class {c} is empty")));
        }
    }
    let mut heat = Matrix::zeros(m, m);
    for a in 0..m {
        for b in a..m {
            let mut sum = 0.0;
            for &i in &by_class[a] {
                for &j in &by_class[b] {
                    sum += SimKind::Cosine.eval(z.row(i), z.row(j))?;
                }
            }
            let mean = sum / (by_class[a].len() * by_class[b].len()) as f64;
            heat.set(a, b, mean);
            heat.set(b, a, mean);
        }
    }
    Ok(heat)
}

/// Everything the evaluation pipeline reports about one trained encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Weighted-KNN accuracy on held-out features.
    pub knn_accuracy: f64,
    /// Linear-probe accuracy on held-out features.
    pub probe_accuracy: f64,
    /// Mean positive-pair cosine on fresh augmented pairs.
    pub alignment: f64,
    /// Uniformity of sphere-projected class means: (minimum pairwise
    /// angle in degrees, worst deviation from the equiangular cosine).
    pub uniformity: (f64, f64),
    /// Monte Carlo smoothness estimate of the encoder.
    pub lipschitz: LipschitzEstimate,
    /// Cyclic order of class means versus the generating order; `None`
    /// when no expected order applies (or the features are not planar).
    pub order: Option<OrderVerdict>,
    /// Class-by-class mean cosine matrix.
    pub heatmap: Matrix,
}

impl EvalReport {
    /// Check the report's own invariants.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("knn_accuracy", self.knn_accuracy), ("probe_accuracy", self.probe_accuracy)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::arg(
                    "EvalReport::validate",
                    "accuracy",
                    format!("{name} = {v} outside [0, 1]"),
                ));
            }
        }
        Ok(())
    }

    /// Render as `key=value` lines. Keys: `knn_accuracy`,
    /// `probe_accuracy`, `alignment`, `uniformity_min_angle_deg`,
    /// `uniformity_cosine_dev`, `lipschitz_mean`, `lipschitz_std_error`,
    /// `order_check`. The heatmap is exported separately as CSV.
    pub fn to_text(&self) -> String {
        format!(
            "knn_accuracy={}\nprobe_accuracy={}\nalignment={}\nuniformity_min_angle_deg={}\nuniformity_cosine_dev={}\nlipschitz_mean={}\nlipschitz_std_error={}\norder_check={}\n",
            self.knn_accuracy,
            self.probe_accuracy,
            self.alignment,
            self.uniformity.0,
            self.uniformity.1,
            self.lipschitz.mean,
            self.lipschitz.std_error,
            self.order.map_or("not_evaluated", |o| o.as_str()),
        )
    }
}
