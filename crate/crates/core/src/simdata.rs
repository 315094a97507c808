//! Synthetic data: isotropic Gaussian mixtures, the positive-pair
//! augmentations used for contrastive training, distribution shift, and
//! abstract crop rectangles with intersection-over-union.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{Matrix, RngState};

/// Isotropic Gaussian mixture with equal component weights 1/m.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmSpec {
    /// m × d matrix of component means.
    pub means: Matrix,
    /// Shared isotropic standard deviation.
    pub sigma: f64,
}

impl GmmSpec {
    pub fn new(means: Matrix, sigma: f64) -> Result<GmmSpec> {
        if means.rows() == 0 || means.cols() == 0 {
            return Err(Error::dim("GmmSpec::new", "means must be at least 1x1"));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::arg("GmmSpec::new", "sigma", format!("{sigma} must be > 0")));
        }
        Ok(GmmSpec { means, sigma })
    }

    /// Means on the vertices of a regular m-gon of the given radius in the
    /// plane: μ_k = radius·(cos 2πk/m, sin 2πk/m).
    pub fn polygon(m: usize, radius: f64, sigma: f64) -> Result<GmmSpec> {
        if m < 1 {
            return Err(Error::arg("GmmSpec::polygon", "m", "need at least 1 component"));
        }
        let mut means = Matrix::zeros(m, 2);
        for k in 0..m {
            let theta = 2.0 * std::f64::consts::PI * k as f64 / m as f64;
            means.set(k, 0, radius * theta.cos());
            means.set(k, 1, radius * theta.sin());
        }
        GmmSpec::new(means, sigma)
    }

    /// One-dimensional means at the integers 1..=m.
    pub fn line_1d(m: usize, sigma: f64) -> Result<GmmSpec> {
        let mut means = Matrix::zeros(m, 1);
        for k in 0..m {
            means.set(k, 0, (k + 1) as f64);
        }
        GmmSpec::new(means, sigma)
    }

    /// Means at scale·e_k along the first m coordinate axes of R^d
    /// (requires m ≤ d).
    pub fn scaled_basis(m: usize, d: usize, scale: f64, sigma: f64) -> Result<GmmSpec> {
        if m > d {
            return Err(Error::arg(
                "GmmSpec::scaled_basis",
                "m",
                format!("{m} components need {m} axes but d = {d}"),
            ));
        }
        let mut means = Matrix::zeros(m, d);
        for k in 0..m {
            means.set(k, k, scale);
        }
        GmmSpec::new(means, sigma)
    }

    pub fn n_components(&self) -> usize {
        self.means.rows()
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }
}

/// Points plus integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    /// n × d.
    pub x: Matrix,
    /// Length n, values in [0, m).
    pub labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(x: Matrix, labels: Vec<usize>) -> Result<LabeledDataset> {
        if labels.len() != x.rows() {
            return Err(Error::dim(
                "LabeledDataset::new",
                format!("{} rows but {} labels", x.rows(), labels.len()),
            ));
        }
        if x.rows() == 0 {
            return Err(Error::dim("LabeledDataset::new", "empty dataset"));
        }
        Ok(LabeledDataset { x, labels })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    /// Number of classes, taken as max label + 1.
    pub fn n_classes(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| m + 1)
    }
}

/// A batch of positive pairs: row i of `views` is the alternative view of
/// row i of `anchors`. `weights` scale each pair's contribution to weighted
/// losses; they default to all ones.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    pub anchors: Matrix,
    pub views: Matrix,
    pub weights: Vec<f64>,
}

impl PairBatch {
    pub fn new(anchors: Matrix, views: Matrix) -> Result<PairBatch> {
        let n = anchors.rows();
        let weights = vec![1.0; n];
        PairBatch::with_weights(anchors, views, weights)
    }

    pub fn with_weights(anchors: Matrix, views: Matrix, weights: Vec<f64>) -> Result<PairBatch> {
        if anchors.rows() != views.rows() || anchors.cols() != views.cols() {
            return Err(Error::dim(
                "PairBatch::new",
                format!(
                    "anchors {}x{} vs views {}x{}",
                    anchors.rows(),
                    anchors.cols(),
                    views.rows(),
                    views.cols()
                ),
            ));
        }
        if weights.len() != anchors.rows() {
            return Err(Error::dim(
                "PairBatch::with_weights",
                format!("{} pairs but {} weights", anchors.rows(), weights.len()),
            ));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::arg(
                "PairBatch::with_weights",
                "weights",
                "weights must be finite and ≥ 0",
            ));
        }
        Ok(PairBatch {
            anchors,
            views,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.anchors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.rows() == 0
    }
}

/// Draw n points from the mixture: a uniformly chosen component, then
/// mean + σ·standard normal per coordinate. Labels record the component.
pub fn gmm_sample(spec: &GmmSpec, n: usize, rng: &mut RngState) -> Result<LabeledDataset> {
    if n < 1 {
        return Err(Error::arg("gmm_sample", "n", "need at least 1 sample"));
    }
    let (m, d) = (spec.n_components(), spec.dim());
    let mut x = Matrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = rng.below(m);
        labels.push(c);
        for j in 0..d {
            x.set(i, j, spec.means.get(c, j) + spec.sigma * rng.gaussian());
        }
    }
    LabeledDataset::new(x, labels)
}

/// Positive pairs by resampling: the view of x_i is a fresh, independent
/// draw from x_i's own mixture component.
pub fn augment_resample(
    spec: &GmmSpec,
    dataset: &LabeledDataset,
    rng: &mut RngState,
) -> Result<PairBatch> {
    if dataset.x.cols() != spec.dim() {
        return Err(Error::dim(
            "augment_resample",
            format!("dataset dim {} vs mixture dim {}", dataset.x.cols(), spec.dim()),
        ));
    }
    let m = spec.n_components();
    let mut views = Matrix::zeros(dataset.len(), spec.dim());
    for i in 0..dataset.len() {
        let c = dataset.labels[i];
        if c >= m {
            return Err(Error::arg(
                "augment_resample",
                "dataset",
                format!("label {c} out of range for {m} components"),
            ));
        }
        for j in 0..spec.dim() {
            views.set(i, j, spec.means.get(c, j) + spec.sigma * rng.gaussian());
        }
    }
    PairBatch::new(dataset.x.clone(), views)
}

/// Positive pairs by additive noise: view_i = x_i + δ, δ ~ N(0, σ_noise²·I).
pub fn augment_gaussian_noise(
    dataset: &LabeledDataset,
    sigma_noise: f64,
    rng: &mut RngState,
) -> Result<PairBatch> {
    if !(sigma_noise > 0.0 && sigma_noise.is_finite()) {
        return Err(Error::arg(
            "augment_gaussian_noise",
            "sigma_noise",
            format!("{sigma_noise} must be > 0"),
        ));
    }
    let mut views = dataset.x.clone();
    for v in views.data_mut() {
        *v += sigma_noise * rng.gaussian();
    }
    PairBatch::new(dataset.x.clone(), views)
}

/// How mixup picks its interpolation coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LambdaSpec {
    /// Every pair uses the same λ.
    Fixed { lambda: f64 },
    /// λ ~ Beta(alpha, beta) per pair.
    Beta { alpha: f64, beta: f64 },
}

impl Default for LambdaSpec {
    /// Beta(1, 1), i.e. uniform on (0, 1).
    fn default() -> LambdaSpec {
        LambdaSpec::Beta { alpha: 1.0, beta: 1.0 }
    }
}

impl LambdaSpec {
    fn validate(&self) -> Result<()> {
        match *self {
            LambdaSpec::Fixed { lambda } => {
                if !(lambda > 0.0 && lambda < 1.0) {
                    return Err(Error::arg(
                        "LambdaSpec",
                        "lambda",
                        format!("{lambda} outside (0, 1)"),
                    ));
                }
            }
            LambdaSpec::Beta { alpha, beta } => {
                if !(alpha > 0.0 && beta > 0.0) {
                    return Err(Error::arg("LambdaSpec", "alpha/beta", "must be > 0"));
                }
            }
        }
        Ok(())
    }

    fn draw(&self, rng: &mut RngState) -> f64 {
        match *self {
            LambdaSpec::Fixed { lambda } => lambda,
            LambdaSpec::Beta { alpha, beta } => rng.beta(alpha, beta),
        }
    }
}

/// Positive pairs by convex combination: view_i = x_i + λ·(x_j − x_i) with
/// a uniformly drawn partner j ≠ i from the same dataset.
pub fn augment_mixup(
    dataset: &LabeledDataset,
    lambda_spec: LambdaSpec,
    rng: &mut RngState,
) -> Result<PairBatch> {
    lambda_spec.validate()?;
    let n = dataset.len();
    if n < 2 {
        return Err(Error::arg("augment_mixup", "dataset", "need at least 2 points"));
    }
    let d = dataset.x.cols();
    let mut views = Matrix::zeros(n, d);
    for i in 0..n {
        // Uniform over the n−1 indices ≠ i.
        let mut j = rng.below(n - 1);
        if j >= i {
            j += 1;
        }
        let lambda = lambda_spec.draw(rng);
        for k in 0..d {
            let a = dataset.x.get(i, k);
            views.set(i, k, a + lambda * (dataset.x.get(j, k) - a));
        }
    }
    PairBatch::new(dataset.x.clone(), views)
}

/// Translate every point by δ; labels are untouched.
pub fn mean_shift(dataset: &LabeledDataset, delta: &[f64]) -> Result<LabeledDataset> {
    if delta.len() != dataset.x.cols() {
        return Err(Error::dim(
            "mean_shift",
            format!("delta length {} vs dimension {}", delta.len(), dataset.x.cols()),
        ));
    }
    let mut x = dataset.x.clone();
    for i in 0..x.rows() {
        for (v, &dd) in x.row_mut(i).iter_mut().zip(delta) {
            *v += dd;
        }
    }
    LabeledDataset::new(x, dataset.labels.clone())
}

/// Axis-aligned rectangle inside the unit square.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl CropBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<CropBox> {
        let b = CropBox { x0, y0, x1, y1 };
        if !(x0 < x1 && y0 < y1) {
            return Err(Error::arg("CropBox::new", "corners", "need x0 < x1 and y0 < y1"));
        }
        if x0 < 0.0 || y0 < 0.0 || x1 > 1.0 || y1 > 1.0 {
            return Err(Error::arg(
                "CropBox::new",
                "corners",
                "box must lie inside the unit square",
            ));
        }
        Ok(b)
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}

/// The default crop scale range (fraction of unit-square area kept).
pub const DEFAULT_CROP_SCALE: (f64, f64) = (0.2, 1.0);
/// The default width/height aspect range.
pub const DEFAULT_CROP_ASPECT: (f64, f64) = (0.75, 4.0 / 3.0);

fn sample_crop_box(
    rng: &mut RngState,
    scale: (f64, f64),
    aspect: (f64, f64),
) -> CropBox {
    let s = rng.uniform_in(scale.0, scale.1);
    // Width √(s·a) and height √(s/a) both fit in the unit square exactly
    // when a ∈ [s, 1/s]; the drawn aspect is clamped into that band, which
    // keeps the area at s, keeps the draw count fixed, and degenerates to
    // the full square as s → 1.
    let a = rng.uniform_in(aspect.0, aspect.1).clamp(s, 1.0 / s);
    let w = (s * a).sqrt().min(1.0);
    let h = (s / a).sqrt().min(1.0);
    let x0 = rng.uniform_in(0.0, 1.0 - w);
    let y0 = rng.uniform_in(0.0, 1.0 - h);
    CropBox {
        x0,
        y0,
        x1: x0 + w,
        y1: y0 + h,
    }
}

/// Two independent random crops of the unit square: area uniform in the
/// scale range, aspect uniform in the aspect range (clamped to feasibility),
/// position uniform.
pub fn sample_crop_pair(
    rng: &mut RngState,
    scale: (f64, f64),
    aspect: (f64, f64),
) -> Result<(CropBox, CropBox)> {
    if !(scale.0 > 0.0 && scale.0 <= scale.1 && scale.1 <= 1.0) {
        return Err(Error::arg(
            "sample_crop_pair",
            "scale",
            format!("need 0 < s_min ≤ s_max ≤ 1, got ({}, {})", scale.0, scale.1),
        ));
    }
    if !(aspect.0 > 0.0 && aspect.0 <= aspect.1 && aspect.1.is_finite()) {
        return Err(Error::arg(
            "sample_crop_pair",
            "aspect",
            format!("need 0 < lo ≤ hi, got ({}, {})", aspect.0, aspect.1),
        ));
    }
    let first = sample_crop_box(rng, scale, aspect);
    let second = sample_crop_box(rng, scale, aspect);
    Ok((first, second))
}

/// Intersection area over union area; 0 for disjoint boxes.
pub fn iou(a: &CropBox, b: &CropBox) -> f64 {
    let ix = (a.x1.min(b.x1) - a.x0.max(b.x0)).max(0.0);
    let iy = (a.y1.min(b.y1) - a.y0.max(b.y0)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    inter / union
}

/// Orthogonal distance from `v` to the line through the origin with unit
/// direction `u` — used to quantify how tightly an augmentation stays on a
/// low-dimensional structure.
pub fn off_line_norm(v: &[f64], u: &[f64]) -> f64 {
    let along: f64 = v.iter().zip(u).map(|(&a, &b)| a * b).sum();
    let orth_sq: f64 = v
        .iter()
        .zip(u)
        .map(|(&a, &b)| {
            let o = a - along * b;
            o * o
        })
        .sum();
    orth_sq.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{norm2, sq_dist};

    #[test]
    fn tiny_sigma_pins_samples_to_means() {
        let spec = GmmSpec::polygon(5, 1.0, 1e-9).unwrap();
        let mut rng = RngState::new(1);
        let ds = gmm_sample(&spec, 100, &mut rng).unwrap();
        for i in 0..ds.len() {
            let c = ds.labels[i];
            assert!(sq_dist(ds.x.row(i), spec.means.row(c)).sqrt() < 1e-6);
        }
    }

    #[test]
    fn single_component_sample_mean() {
        let spec = GmmSpec::new(Matrix::zeros(1, 3), 1.0).unwrap();
        let mut rng = RngState::new(2);
        let ds = gmm_sample(&spec, 10_000, &mut rng).unwrap();
        let mean = ds.x.col_mean();
        for m in mean {
            // σ/√n = 0.01; 0.05 is a 5σ band.
            assert!(m.abs() < 0.05, "mean coordinate {m}");
        }
    }

    #[test]
    fn pentagon_setting_stays_near_means() {
        let spec = GmmSpec::polygon(5, 1.0, 0.1).unwrap();
        let mut rng = RngState::new(3);
        let ds = gmm_sample(&spec, 250, &mut rng).unwrap();
        assert_eq!(ds.len(), 250);
        assert_eq!(ds.n_classes(), 5);
        for i in 0..ds.len() {
            let c = ds.labels[i];
            // ‖x−μ‖ > 0.5 = 5σ has probability ~3.7e-6 per point.
            assert!(sq_dist(ds.x.row(i), spec.means.row(c)).sqrt() < 0.5);
        }
    }

    #[test]
    fn polygon_means_lie_on_circle() {
        let spec = GmmSpec::polygon(5, 1.0, 0.1).unwrap();
        for k in 0..5 {
            assert!((norm2(spec.means.row(k)) - 1.0).abs() < 1e-12);
        }
        // First mean is (1, 0).
        assert!((spec.means.get(0, 0) - 1.0).abs() < 1e-12);
        assert!(spec.means.get(0, 1).abs() < 1e-12);
    }

    #[test]
    fn resample_views_stay_near_component_means() {
        let spec = GmmSpec::polygon(5, 1.0, 1e-9).unwrap();
        let mut rng = RngState::new(4);
        let ds = gmm_sample(&spec, 50, &mut rng).unwrap();
        let pairs = augment_resample(&spec, &ds, &mut rng).unwrap();
        for i in 0..pairs.len() {
            let c = ds.labels[i];
            assert!(sq_dist(pairs.views.row(i), spec.means.row(c)).sqrt() < 1e-6);
        }
        assert!(pairs.weights.iter().all(|&w| w == 1.0));
    }

    #[test]
    fn resample_views_recover_labels_by_nearest_anchor() {
        // Fig-3-style well-separated mixture: a 1-NN vote from anchors
        // should classify the fresh views almost perfectly.
        let spec = GmmSpec::polygon(5, 1.0, 0.1).unwrap();
        let mut rng = RngState::new(5);
        let ds = gmm_sample(&spec, 250, &mut rng).unwrap();
        let pairs = augment_resample(&spec, &ds, &mut rng).unwrap();
        let mut correct = 0;
        for i in 0..pairs.len() {
            let mut best = (f64::INFINITY, 0usize);
            for j in 0..ds.len() {
                let d = sq_dist(pairs.views.row(i), ds.x.row(j));
                if d < best.0 {
                    best = (d, ds.labels[j]);
                }
            }
            if best.1 == ds.labels[i] {
                correct += 1;
            }
        }
        assert!(correct as f64 / pairs.len() as f64 > 0.99, "{correct}/250");
    }

    #[test]
    fn resample_views_match_component_moments() {
        let mut means = Matrix::zeros(2, 2);
        means.set(0, 0, -3.0);
        means.set(1, 0, 3.0);
        let sigma = 0.7;
        let spec = GmmSpec::new(means.clone(), sigma).unwrap();
        let mut rng = RngState::new(6);
        let ds = gmm_sample(&spec, 10_000, &mut rng).unwrap();
        let pairs = augment_resample(&spec, &ds, &mut rng).unwrap();
        for c in 0..2 {
            let rows: Vec<Vec<f64>> = (0..ds.len())
                .filter(|&i| ds.labels[i] == c)
                .map(|i| pairs.views.row(i).to_vec())
                .collect();
            let pooled = Matrix::from_rows(&rows).unwrap();
            let mean = pooled.col_mean();
            let var = pooled.col_var_biased(&mean);
            let n_c = pooled.rows() as f64;
            for j in 0..2 {
                // 5σ bands: mean ± 5σ/√n_c, variance ± 5·σ²√(2/n_c).
                assert!(
                    (mean[j] - means.get(c, j)).abs() < 5.0 * sigma / n_c.sqrt(),
                    "component {c} mean[{j}] = {}",
                    mean[j]
                );
                let var_tol = 5.0 * sigma * sigma * (2.0 / n_c).sqrt();
                assert!(
                    (var[j] - sigma * sigma).abs() < var_tol,
                    "component {c} var[{j}] = {}",
                    var[j]
                );
            }
        }
    }

    #[test]
    fn tiny_noise_reproduces_anchors() {
        let spec = GmmSpec::polygon(3, 1.0, 0.2).unwrap();
        let mut rng = RngState::new(7);
        let ds = gmm_sample(&spec, 20, &mut rng).unwrap();
        let pairs = augment_gaussian_noise(&ds, 1e-12, &mut rng).unwrap();
        for i in 0..pairs.len() {
            assert!(sq_dist(pairs.anchors.row(i), pairs.views.row(i)).sqrt() < 1e-9);
        }
    }

    #[test]
    fn noise_displacement_second_moment() {
        let d = 4;
        let spec = GmmSpec::new(Matrix::zeros(1, d), 1.0).unwrap();
        let mut rng = RngState::new(8);
        let ds = gmm_sample(&spec, 10_000, &mut rng).unwrap();
        let sigma_noise = 0.3;
        let pairs = augment_gaussian_noise(&ds, sigma_noise, &mut rng).unwrap();
        let mean_sq: f64 = (0..pairs.len())
            .map(|i| sq_dist(pairs.anchors.row(i), pairs.views.row(i)))
            .sum::<f64>()
            / pairs.len() as f64;
        let expected = d as f64 * sigma_noise * sigma_noise;
        assert!(
            (mean_sq - expected).abs() < 0.05 * expected,
            "E‖δ‖² = {mean_sq}, expected {expected}"
        );
    }

    #[test]
    fn near_zero_lambda_mixup_reproduces_anchors() {
        let spec = GmmSpec::polygon(3, 1.0, 0.2).unwrap();
        let mut rng = RngState::new(9);
        let ds = gmm_sample(&spec, 20, &mut rng).unwrap();
        let pairs =
            augment_mixup(&ds, LambdaSpec::Fixed { lambda: 1e-9 }, &mut rng).unwrap();
        for i in 0..pairs.len() {
            assert!(sq_dist(pairs.anchors.row(i), pairs.views.row(i)).sqrt() < 1e-6);
        }
    }

    #[test]
    fn half_lambda_mixup_views_are_midpoints() {
        let spec = GmmSpec::polygon(4, 1.0, 0.3).unwrap();
        let mut rng = RngState::new(10);
        let ds = gmm_sample(&spec, 12, &mut rng).unwrap();
        let pairs = augment_mixup(&ds, LambdaSpec::Fixed { lambda: 0.5 }, &mut rng).unwrap();
        for i in 0..pairs.len() {
            // The view must be the midpoint of anchor i and some other point.
            let found = (0..ds.len()).filter(|&j| j != i).any(|j| {
                (0..2).all(|k| {
                    let mid = 0.5 * (ds.x.get(i, k) + ds.x.get(j, k));
                    (pairs.views.get(i, k) - mid).abs() < 1e-12
                })
            });
            assert!(found, "pair {i} is not a midpoint");
        }
    }

    #[test]
    fn mixup_concentrates_on_the_mean_line() {
        // Means k·u along a fixed unit direction in R^10; mixup differences
        // should stay within a few σ of that line.
        let d = 10;
        let mut u = vec![0.0; d];
        let inv = 1.0 / (d as f64).sqrt();
        for v in &mut u {
            *v = inv;
        }
        let m = 4;
        let mut means = Matrix::zeros(m, d);
        for k in 0..m {
            for j in 0..d {
                means.set(k, j, (k + 1) as f64 * u[j]);
            }
        }
        let sigma = 0.01;
        let spec = GmmSpec::new(means, sigma).unwrap();
        let mut rng = RngState::new(11);
        let ds = gmm_sample(&spec, 2_000, &mut rng).unwrap();
        let pairs = augment_mixup(&ds, LambdaSpec::default(), &mut rng).unwrap();
        let mut ok = 0;
        for i in 0..pairs.len() {
            let diff: Vec<f64> = (0..d)
                .map(|k| pairs.views.get(i, k) - pairs.anchors.get(i, k))
                .collect();
            if off_line_norm(&diff, &u) < 10.0 * sigma {
                ok += 1;
            }
        }
        assert!(ok as f64 / pairs.len() as f64 > 0.99, "{ok}/2000 on the line");
    }

    #[test]
    fn zero_shift_is_identity_and_shift_inverts() {
        let spec = GmmSpec::polygon(3, 1.0, 0.2).unwrap();
        let mut rng = RngState::new(12);
        let mut ds = gmm_sample(&spec, 30, &mut rng).unwrap();
        // Snap coordinates to a dyadic grid so x + 1 incurs no rounding and
        // the shift/unshift round trip is bit-exact.
        let snap = (1u64 << 26) as f64;
        for v in ds.x.data_mut() {
            *v = (*v * snap).round() / snap;
        }
        assert_eq!(mean_shift(&ds, &[0.0, 0.0]).unwrap(), ds);
        let shifted = mean_shift(&ds, &[1.0, 1.0]).unwrap();
        assert_eq!(mean_shift(&shifted, &[-1.0, -1.0]).unwrap(), ds);
        assert_ne!(shifted, ds);
        assert_eq!(shifted.labels, ds.labels);
    }

    #[test]
    fn shift_rejects_wrong_length() {
        let spec = GmmSpec::polygon(3, 1.0, 0.2).unwrap();
        let mut rng = RngState::new(13);
        let ds = gmm_sample(&spec, 5, &mut rng).unwrap();
        assert!(mean_shift(&ds, &[1.0]).is_err());
    }

    #[test]
    fn full_scale_crop_is_the_unit_square() {
        let mut rng = RngState::new(14);
        let (a, b) =
            sample_crop_pair(&mut rng, (1.0, 1.0), DEFAULT_CROP_ASPECT).unwrap();
        for c in [a, b] {
            assert!((c.x0).abs() < 1e-12 && (c.y0).abs() < 1e-12);
            assert!((c.x1 - 1.0).abs() < 1e-12 && (c.y1 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn crop_areas_stay_in_scale_range() {
        let mut rng = RngState::new(15);
        for _ in 0..1000 {
            let (a, b) =
                sample_crop_pair(&mut rng, DEFAULT_CROP_SCALE, DEFAULT_CROP_ASPECT).unwrap();
            for c in [a, b] {
                assert!(c.area() >= 0.2 - 1e-12 && c.area() <= 1.0 + 1e-12, "area {}", c.area());
                assert!(c.x0 >= 0.0 && c.y0 >= 0.0 && c.x1 <= 1.0 && c.y1 <= 1.0);
            }
        }
    }

    #[test]
    fn crop_iou_distribution_centers_near_half() {
        let mut rng = RngState::new(16);
        let mut sum = 0.0;
        let mut above = 0usize;
        let n = 1000;
        for _ in 0..n {
            let (a, b) =
                sample_crop_pair(&mut rng, DEFAULT_CROP_SCALE, DEFAULT_CROP_ASPECT).unwrap();
            let v = iou(&a, &b);
            sum += v;
            if v > 0.5 {
                above += 1;
            }
        }
        let mean = sum / n as f64;
        assert!((0.4..=0.6).contains(&mean), "mean IoU {mean}");
        // Rough symmetry about 0.5: both tails populated.
        assert!(above > n / 4 && above < 3 * n / 4, "{above}/{n} above 0.5");
    }

    #[test]
    fn iou_identical_disjoint_and_hand_case() {
        let a = CropBox::new(0.0, 0.0, 0.4, 0.4).unwrap();
        assert!((iou(&a, &a) - 1.0).abs() < 1e-15);
        let far = CropBox::new(0.6, 0.6, 0.9, 0.9).unwrap();
        assert_eq!(iou(&a, &far), 0.0);
        // Overlap 0.2×0.2 = 0.04, union 0.16 + 0.16 − 0.04 = 0.28 → 1/7.
        let b = CropBox::new(0.2, 0.2, 0.6, 0.6).unwrap();
        assert!((iou(&a, &b) - 1.0 / 7.0).abs() < 1e-12);
        assert!((iou(&a, &b) - iou(&b, &a)).abs() < 1e-15);
    }

    #[test]
    fn crop_box_validation() {
        assert!(CropBox::new(0.5, 0.0, 0.4, 1.0).is_err()); // x0 > x1
        assert!(CropBox::new(-0.1, 0.0, 0.4, 1.0).is_err()); // outside square
        assert!(CropBox::new(0.0, 0.0, 0.4, 1.1).is_err());
    }
}
