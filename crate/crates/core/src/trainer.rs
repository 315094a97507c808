//! Parametric encoder training: a small MLP mapped over positive pairs,
//! optimized against any of the contrastive objectives, with optional
//! output normalization (sphere projection or batch normalization).
//!
//! Everything is deterministic given the config seed: the seed is split
//! into independent streams for data generation, parameter init, epoch
//! shuffling, and augmentation, so two runs with the same `TrainConfig`
//! produce bit-identical [`TrainReport`]s (wall-clock aside).

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaltheory::{alignment_score, gaussian_potential};
use crate::losses::{loss_grad, loss_value, LossAux, LossKind, LossSpec};
use crate::numkit::{
    dot, mlp_backward, mlp_forward, norm2, param_lens, param_slices_mut, Activation,
    BatchNormState, BnMode, Matrix, MlpParams, OptKind, OptimizerState, RngState,
};
use crate::simdata::{
    augment_gaussian_noise, augment_mixup, augment_resample, gmm_sample, GmmSpec, LabeledDataset,
    LambdaSpec, PairBatch,
};

/// Encoder shape. The input width comes from the data at train time; this
/// fixes the hidden stack, its activation, and the feature dimension d_z.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arch {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub d_z: usize,
}

impl Arch {
    /// Two hidden layers of 64 ReLU units — enough capacity for every
    /// toy-mixture experiment here.
    pub fn default_mlp(d_z: usize) -> Arch {
        Arch { hidden: vec![64, 64], activation: Activation::Relu, d_z }
    }
}

/// How the view of each anchor is produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Augment {
    /// Fresh draw from the anchor's own mixture component (requires
    /// generative training data).
    Resample,
    /// Additive isotropic noise.
    GaussianNoise { sigma: f64 },
    /// Convex combination with a random partner from the same batch.
    Mixup { lambda: LambdaSpec },
}

/// Feature-space normalization applied to the encoder output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizeOutput {
    /// Rows projected to the unit sphere (gradients flow through the
    /// projection).
    Sphere,
    /// Batch normalization along every feature dimension.
    Batchnorm,
    /// Raw encoder output — features live in flat Euclidean space.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptKind,
    pub lr: f64,
    pub weight_decay: f64,
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> OptimizerConfig {
        OptimizerConfig { kind: OptKind::adam(), lr, weight_decay: 0.0 }
    }

    pub fn sgd_momentum(lr: f64, momentum: f64) -> OptimizerConfig {
        OptimizerConfig { kind: OptKind::SgdMomentum { momentum }, lr, weight_decay: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossSpec,
    pub arch: Arch,
    pub epochs: usize,
    pub batch: usize,
    pub optimizer: OptimizerConfig,
    pub augment: Augment,
    pub normalize_output: NormalizeOutput,
    pub seed: u64,
}

impl TrainConfig {
    /// The budget used for all mixture experiments: 200 epochs, batch 64,
    /// Adam at 1e-3, resample views, default MLP.
    pub fn gmm_default(
        loss: LossSpec,
        d_z: usize,
        normalize_output: NormalizeOutput,
        seed: u64,
    ) -> TrainConfig {
        TrainConfig {
            loss,
            arch: Arch::default_mlp(d_z),
            epochs: 200,
            batch: 64,
            optimizer: OptimizerConfig::adam(1e-3),
            augment: Augment::Resample,
            normalize_output,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.batch < 2 {
            return Err(Error::arg("TrainConfig", "batch", "batch size must be ≥ 2"));
        }
        if self.epochs < 1 {
            return Err(Error::arg("TrainConfig", "epochs", "must be ≥ 1"));
        }
        if self.arch.d_z == 0 {
            return Err(Error::arg("TrainConfig", "arch.d_z", "must be ≥ 1"));
        }
        if self.arch.hidden.iter().any(|&h| h == 0) {
            return Err(Error::arg("TrainConfig", "arch.hidden", "zero hidden width"));
        }
        if !(self.optimizer.lr >= 0.0 && self.optimizer.lr.is_finite()) {
            return Err(Error::arg("TrainConfig", "optimizer.lr", "must be ≥ 0"));
        }
        if !(self.optimizer.weight_decay >= 0.0 && self.optimizer.weight_decay.is_finite()) {
            return Err(Error::arg("TrainConfig", "optimizer.weight_decay", "must be ≥ 0"));
        }
        if let Augment::GaussianNoise { sigma } = self.augment {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(Error::arg("TrainConfig", "augment.sigma", "must be > 0"));
            }
        }
        // The heavy-tailed loss needs features normalized along every
        // dimension; the sphere or raw output lets the denominator collapse.
        if self.loss.kind == LossKind::TSimclr
            && self.normalize_output != NormalizeOutput::Batchnorm
        {
            return Err(Error::arg(
                "TrainConfig",
                "normalize_output",
                "the heavy-tailed loss requires batchnorm output normalization",
            ));
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    /// Mean batch loss.
    pub loss: f64,
    /// Mean positive-pair cosine across the epoch's batches.
    pub align_metric: f64,
    /// log of the mean over distinct in-batch feature pairs of
    /// exp(−‖z_u − z_v‖²): 0 when everything coincides, more negative as
    /// the batch spreads out.
    pub uniform_metric: f64,
}

/// Everything a finished run knows: config echo, per-epoch log, and the
/// trained encoder. Equality ignores `wall_clock_secs` so two identically
/// seeded runs compare equal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub epoch_log: Vec<EpochStats>,
    pub params: MlpParams,
    pub batchnorm: Option<BatchNormState>,
    pub wall_clock_secs: f64,
}

impl PartialEq for TrainReport {
    fn eq(&self, other: &TrainReport) -> bool {
        self.config == other.config
            && self.epoch_log == other.epoch_log
            && self.params == other.params
            && self.batchnorm == other.batchnorm
    }
}

/// What to train on: a fixed labeled dataset, or a mixture to sample
/// `n` points from (seeded by the config).
#[derive(Debug, Clone, Copy)]
pub enum TrainData<'a> {
    Labeled(&'a LabeledDataset),
    Gmm { spec: &'a GmmSpec, n: usize },
}

/// Run the training loop described by `cfg` and return the full report.
///
/// Batches are shuffled per epoch; a trailing partial batch is dropped.
/// Anchors and views are encoded as one stacked 2B-row forward pass, so
/// batch normalization sees the whole pair population. A non-finite loss
/// or gradient aborts with the offending epoch in the error.
pub fn train_encoder(data: TrainData<'_>, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let start = Instant::now();
    let mut rng = RngState::new(cfg.seed);
    let mut data_rng = rng.split();
    let mut init_rng = rng.split();
    let mut shuffle_rng = rng.split();
    let mut augment_rng = rng.split();

    let gmm_spec = match data {
        TrainData::Gmm { spec, .. } => Some(spec),
        TrainData::Labeled(_) => None,
    };
    let dataset = match data {
        TrainData::Labeled(ds) => ds.clone(),
        TrainData::Gmm { spec, n } => gmm_sample(spec, n, &mut data_rng)?,
    };
    if dataset.len() < cfg.batch {
        return Err(Error::arg(
            "train_encoder",
            "batch",
            format!("batch size {} exceeds dataset size {}", cfg.batch, dataset.len()),
        ));
    }
    if matches!(cfg.augment, Augment::Resample) && gmm_spec.is_none() {
        return Err(Error::arg(
            "train_encoder",
            "augment",
            "resample views need a generative mixture source",
        ));
    }

    let mut dims = vec![dataset.x.cols()];
    dims.extend_from_slice(&cfg.arch.hidden);
    dims.push(cfg.arch.d_z);
    let mut params =
        MlpParams::new_xavier(&dims, cfg.arch.activation, Activation::Identity, &mut init_rng)?;
    let mut bn = match cfg.normalize_output {
        NormalizeOutput::Batchnorm => Some(BatchNormState::new(cfg.arch.d_z, 0.1, 1e-5)?),
        _ => None,
    };
    let lens = param_lens(&params, bn.as_ref());
    let mut opt = OptimizerState::new(
        cfg.optimizer.kind,
        cfg.optimizer.lr,
        cfg.optimizer.weight_decay,
        &lens,
    )?;

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut align_sum = 0.0;
        let mut uniform_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch) {
            if chunk.len() < cfg.batch {
                break;
            }
            let batch_set = subset(&dataset, chunk)?;
            let pair = make_views(gmm_spec, &batch_set, cfg.augment, &mut augment_rng)
                .map_err(|e| epoch_failure(epoch, &e))?;
            let stacked_x = Matrix::vstack(&[&pair.anchors, &pair.views])?;
            let (y, cache) = mlp_forward(&params, bn.as_mut(), &stacked_x)
                .map_err(|e| epoch_failure(epoch, &e))?;
            let (z, pre_norms) = normalize_features("train_encoder", cfg.normalize_output, &y)
                .map_err(|e| epoch_failure(epoch, &e))?;
            let b = chunk.len();
            let anchors_z = z.slice_rows(0, b);
            let views_z = z.slice_rows(b, 2 * b);
            let aux = LossAux { p: None, weights: Some(&pair.weights) };

            let loss = loss_value(&cfg.loss, &anchors_z, &views_z, aux)
                .map_err(|e| epoch_failure(epoch, &e))?;
            if !loss.is_finite() {
                return Err(Error::non_finite(
                    "train_encoder",
                    format!("loss {loss} at epoch {epoch}"),
                ));
            }
            let (ga, gv) =
                loss_grad(&cfg.loss, &anchors_z, &views_z, aux).map_err(|e| epoch_failure(epoch, &e))?;
            let gz = Matrix::vstack(&[&ga, &gv])?;
            let gy = match &pre_norms {
                Some(norms) => sphere_backward(&z, &gz, norms),
                None => gz,
            };
            let (grads, _) = mlp_backward(&params, bn.as_ref(), &cache, &gy)
                .map_err(|e| epoch_failure(epoch, &e))?;
            opt.step(&mut param_slices_mut(&mut params, bn.as_mut()), &grads.slices())
                .map_err(|e| epoch_failure(epoch, &e))?;

            loss_sum += loss;
            align_sum += alignment_score(&anchors_z, &views_z).map_err(|e| epoch_failure(epoch, &e))?;
            uniform_sum += gaussian_potential(&z).map_err(|e| epoch_failure(epoch, &e))?;
            batches += 1;
        }
        epoch_log.push(EpochStats {
            epoch,
            loss: loss_sum / batches as f64,
            align_metric: align_sum / batches as f64,
            uniform_metric: uniform_sum / batches as f64,
        });
    }

    // The stored encoder always embeds in eval mode.
    if let Some(state) = &mut bn {
        state.mode = BnMode::Eval;
    }
    Ok(TrainReport {
        config: cfg.clone(),
        epoch_log,
        params,
        batchnorm: bn,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}

fn epoch_failure(epoch: usize, e: &Error) -> Error {
    Error::non_finite("train_encoder", format!("epoch {epoch}: {e}"))
}

fn subset(ds: &LabeledDataset, idx: &[usize]) -> Result<LabeledDataset> {
    let rows: Vec<Vec<f64>> = idx.iter().map(|&i| ds.x.row(i).to_vec()).collect();
    let labels = idx.iter().map(|&i| ds.labels[i]).collect();
    LabeledDataset::new(Matrix::from_rows(&rows)?, labels)
}

fn make_views(
    gmm: Option<&GmmSpec>,
    batch: &LabeledDataset,
    augment: Augment,
    rng: &mut RngState,
) -> Result<PairBatch> {
    match augment {
        Augment::Resample => {
            let spec = gmm.ok_or_else(|| {
                Error::arg("train_encoder", "augment", "resample views need a mixture source")
            })?;
            augment_resample(spec, batch, rng)
        }
        Augment::GaussianNoise { sigma } => augment_gaussian_noise(batch, sigma, rng),
        Augment::Mixup { lambda } => augment_mixup(batch, lambda, rng),
    }
}

/// Apply the configured output normalization to raw encoder outputs.
/// Returns the features plus, for sphere mode, the pre-projection row
/// norms needed to backpropagate through the projection.
fn normalize_features(
    op: &'static str,
    mode: NormalizeOutput,
    y: &Matrix,
) -> Result<(Matrix, Option<Vec<f64>>)> {
    match mode {
        NormalizeOutput::Sphere => {
            let mut z = y.clone();
            let mut norms = Vec::with_capacity(y.rows());
            for i in 0..z.rows() {
                let n = norm2(z.row(i));
                if n == 0.0 || !n.is_finite() {
                    return Err(Error::non_finite(op, format!("feature row {i} has norm {n}")));
                }
                for v in z.row_mut(i) {
                    *v /= n;
                }
                norms.push(n);
            }
            Ok((z, Some(norms)))
        }
        // Batchnorm already happened inside the forward pass.
        NormalizeOutput::Batchnorm | NormalizeOutput::None => Ok((y.clone(), None)),
    }
}

/// Chain rule through row normalization z = y/‖y‖:
/// ∂L/∂y = (g − ⟨g, z⟩·z)/‖y‖ per row.
fn sphere_backward(z: &Matrix, gz: &Matrix, pre_norms: &[f64]) -> Matrix {
    let mut gy = Matrix::zeros(z.rows(), z.cols());
    for i in 0..z.rows() {
        let zi = z.row(i);
        let gi = gz.row(i);
        let radial = dot(gi, zi);
        for k in 0..z.cols() {
            gy.set(i, k, (gi[k] - radial * zi[k]) / pre_norms[i]);
        }
    }
    gy
}

/// Map data through the trained encoder. Batch normalization always runs
/// in eval mode, so the output depends only on the stored state and `x`.
pub fn embed(report: &TrainReport, x: &Matrix) -> Result<Matrix> {
    if x.cols() != report.params.input_dim() {
        return Err(Error::dim(
            "embed",
            format!("input has {} columns, encoder expects {}", x.cols(), report.params.input_dim()),
        ));
    }
    let mut bn = report.batchnorm.clone();
    if let Some(state) = &mut bn {
        state.mode = BnMode::Eval;
    }
    let (y, _) = mlp_forward(&report.params, bn.as_mut(), x)?;
    let (z, _) = normalize_features("embed", report.config.normalize_output, &y)?;
    Ok(z)
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    report: TrainReport,
}

/// Write the report as versioned JSON. All floats survive the round trip
/// bit-exactly (shortest round-trip decimal encoding).
pub fn save_checkpoint(report: &TrainReport, path: &Path) -> Result<()> {
    let file = CheckpointFile { version: CHECKPOINT_VERSION, report: report.clone() };
    let text = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::CheckpointCorrupt(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TrainReport> {
    let text = std::fs::read_to_string(path)?;
    // Check the version on its own first, so a mismatch is reported as a
    // mismatch even if the payload layout changed between versions.
    #[derive(Deserialize)]
    struct VersionOnly {
        version: u32,
    }
    let v: VersionOnly =
        serde_json::from_str(&text).map_err(|e| Error::CheckpointCorrupt(e.to_string()))?;
    if v.version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion { found: v.version, expected: CHECKPOINT_VERSION });
    }
    let file: CheckpointFile =
        serde_json::from_str(&text).map_err(|e| Error::CheckpointCorrupt(e.to_string()))?;
    Ok(file.report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::SimKind;

    fn pentagon_mixture() -> GmmSpec {
        GmmSpec::polygon(5, 1.0, 0.1).unwrap()
    }

    fn small_cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            loss: LossSpec::infonce(0.5, SimKind::Cosine),
            arch: Arch { hidden: vec![16], activation: Activation::Relu, d_z: 2 },
            epochs: 3,
            batch: 16,
            optimizer: OptimizerConfig::adam(1e-3),
            augment: Augment::Resample,
            normalize_output: NormalizeOutput::Sphere,
            seed,
        }
    }

    fn tmp_path(name: &str) -> std::path::PathBuf {
        std::env::temp_dir().join(format!("csne-trainer-{}-{name}", std::process::id()))
    }

    #[test]
    fn zero_lr_leaves_parameters_at_initialization() {
        let spec = pentagon_mixture();
        let mut cfg = small_cfg(3);
        cfg.optimizer.lr = 0.0;
        cfg.epochs = 1;
        let one = train_encoder(TrainData::Gmm { spec: &spec, n: 64 }, &cfg).unwrap();
        cfg.epochs = 2;
        let two = train_encoder(TrainData::Gmm { spec: &spec, n: 64 }, &cfg).unwrap();
        // Same seed → same init; zero learning rate → nothing ever moves.
        assert_eq!(one.params, two.params);
    }

    #[test]
    fn identical_seeds_give_bit_identical_reports() {
        let spec = pentagon_mixture();
        let cfg = small_cfg(7);
        let a = train_encoder(TrainData::Gmm { spec: &spec, n: 64 }, &cfg).unwrap();
        let b = train_encoder(TrainData::Gmm { spec: &spec, n: 64 }, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.epoch_log.len(), 3);
        assert!(a.epoch_log.iter().all(|s| s.loss.is_finite()));
    }

    #[test]
    fn alignment_improves_on_a_well_separated_mixture() {
        // Component means ≥ 10σ apart, so views land squarely in their own
        // cluster and alignment has a clean signal to climb.
        let spec = GmmSpec::polygon(5, 1.0, 0.05).unwrap();
        let cfg = TrainConfig::gmm_default(
            LossSpec::infonce(0.5, SimKind::Cosine),
            2,
            NormalizeOutput::Sphere,
            11,
        );
        let report = train_encoder(TrainData::Gmm { spec: &spec, n: 250 }, &cfg).unwrap();
        let first = report.epoch_log.first().unwrap().align_metric;
        let last = report.epoch_log.last().unwrap().align_metric;
        assert!(last > first, "alignment {first} → {last} did not improve");
    }

    #[test]
    fn converged_spherical_run_aligns_positive_pairs() {
        // Five well-separated clusters on a ring, spherical features in 2D:
        // after the standard budget, positive pairs should be nearly
        // coincident on the circle.
        let spec = pentagon_mixture();
        let cfg = TrainConfig::gmm_default(
            LossSpec::infonce(0.5, SimKind::Cosine),
            2,
            NormalizeOutput::Sphere,
            12,
        );
        let report = train_encoder(TrainData::Gmm { spec: &spec, n: 250 }, &cfg).unwrap();

        // Re-draw aligned pairs and embed both sides.
        let mut rng = RngState::new(999);
        let data = gmm_sample(&spec, 200, &mut rng).unwrap();
        let pair = augment_resample(&spec, &data, &mut rng).unwrap();
        let za = embed(&report, &pair.anchors).unwrap();
        let zv = embed(&report, &pair.views).unwrap();
        for i in 0..za.rows() {
            assert!((norm2(za.row(i)) - 1.0).abs() < 1e-12, "row {i} off the sphere");
        }
        let cos = alignment_score(&za, &zv).unwrap();
        assert!(cos >= 0.99, "mean positive-pair cosine {cos}");
    }

    #[test]
    fn unnormalized_one_dim_features_separate_the_clusters() {
        // The Euclidean variant in one dimension: each cluster's feature
        // interval should end up disjoint from every other's. Raw
        // inner-product logits see z/τ, so a large temperature lets the
        // features grow to a scale weight decay then holds in check; a
        // short budget stops before the drift toward collapse sets in.
        let spec = collinear_mixture();
        let mut cfg = TrainConfig::gmm_default(
            LossSpec::infonce_unnormalized(20.0),
            1,
            NormalizeOutput::None,
            13,
        );
        cfg.arch.hidden = vec![32, 32];
        cfg.optimizer.weight_decay = 1e-2;
        cfg.epochs = 100;
        let report = train_encoder(TrainData::Gmm { spec: &spec, n: 250 }, &cfg).unwrap();

        let mut rng = RngState::new(998);
        let data = gmm_sample(&spec, 300, &mut rng).unwrap();
        let z = embed(&report, &data.x).unwrap();
        let mut intervals = vec![(f64::INFINITY, f64::NEG_INFINITY); 5];
        for i in 0..data.len() {
            let c = data.labels[i];
            let v = z.get(i, 0);
            intervals[c].0 = intervals[c].0.min(v);
            intervals[c].1 = intervals[c].1.max(v);
        }
        intervals.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for w in intervals.windows(2) {
            assert!(
                w[0].1 < w[1].0,
                "cluster intervals overlap: {:?} vs {:?} (all: {intervals:?})",
                w[0],
                w[1]
            );
        }
    }

    fn collinear_mixture() -> GmmSpec {
        // Five collinear means along (1, -1), adjacent pairs 2.0 apart
        // (20 sigma), so the class structure lives in a single linear
        // coordinate.
        let s = std::f64::consts::SQRT_2;
        let mut vals = Vec::new();
        for t in [-2.0f64, -1.0, 0.0, 1.0, 2.0] {
            vals.push(t * s);
            vals.push(-t * s);
        }
        GmmSpec::new(Matrix::from_vec(5, 2, vals).unwrap(), 0.1).unwrap()
    }

    // The training step chains loss_grad → sphere_backward → mlp_backward.
    // The pieces are each checked against finite differences on their own;
    // this checks the composition, parameter-for-parameter.
    fn check_train_step_grads(loss: LossSpec, normalize: NormalizeOutput, seed: u64) {
        use crate::numkit::finite_diff_grad;

        let mut rng = RngState::new(seed);
        let b = 5;
        let anchors = Matrix::from_vec(
            b,
            2,
            (0..b * 2).map(|_| rng.gaussian()).collect::<Vec<_>>(),
        )
        .unwrap();
        let views = anchors.map(|v| v + 0.1);
        let stacked = Matrix::vstack(&[&anchors, &views]).unwrap();
        let dims = [2usize, 6, 3];
        let params =
            MlpParams::new_xavier(&dims, Activation::Tanh, Activation::Identity, &mut rng)
                .unwrap();

        let loss_of = |p: &mut MlpParams| -> crate::error::Result<f64> {
            let (y, _) = mlp_forward(p, None, &stacked)?;
            let (z, _) = normalize_features("check", normalize, &y)?;
            let az = z.slice_rows(0, b);
            let vz = z.slice_rows(b, 2 * b);
            loss_value(&loss, &az, &vz, LossAux::default())
        };

        // Analytic gradient through the full chain.
        let (y, cache) = mlp_forward(&params, None, &stacked).unwrap();
        let (z, pre_norms) = normalize_features("check", normalize, &y).unwrap();
        let az = z.slice_rows(0, b);
        let vz = z.slice_rows(b, 2 * b);
        let (ga, gv) = loss_grad(&loss, &az, &vz, LossAux::default()).unwrap();
        let gz = Matrix::vstack(&[&ga, &gv]).unwrap();
        let gy = match &pre_norms {
            Some(norms) => sphere_backward(&z, &gz, norms),
            None => gz,
        };
        let (grads, _) = mlp_backward(&params, None, &cache, &gy).unwrap();
        let analytic: Vec<f64> =
            grads.slices().into_iter().flatten().copied().collect();

        // Finite differences over a flat parameter vector.
        let total: usize = param_lens(&params, None).iter().sum();
        let mut flat = vec![0.0; total];
        {
            let mut p = params.clone();
            let mut i = 0;
            for s in param_slices_mut(&mut p, None) {
                flat[i..i + s.len()].copy_from_slice(s);
                i += s.len();
            }
        }
        let flat_m = Matrix::from_vec(1, total, flat).unwrap();
        let fd = finite_diff_grad(
            |m| {
                let mut p = params.clone();
                let mut i = 0;
                for s in param_slices_mut(&mut p, None) {
                    s.copy_from_slice(&m.data()[i..i + s.len()]);
                    i += s.len();
                }
                loss_of(&mut p)
            },
            &flat_m,
            1e-5,
        )
        .unwrap();

        for (i, (a, f)) in analytic.iter().zip(fd.data()).enumerate() {
            let scale = a.abs().max(f.abs()).max(1e-6);
            assert!(
                (a - f).abs() / scale < 1e-5,
                "param {i}: analytic {a} vs fdiff {f}"
            );
        }
    }

    #[test]
    fn train_step_gradients_match_finite_differences() {
        check_train_step_grads(
            LossSpec::infonce(0.5, SimKind::Cosine),
            NormalizeOutput::Sphere,
            31,
        );
        check_train_step_grads(
            LossSpec::infonce(1.0, SimKind::NegSqEuclidean),
            NormalizeOutput::Sphere,
            32,
        );
        check_train_step_grads(LossSpec::infonce_unnormalized(2.0), NormalizeOutput::None, 33);
        check_train_step_grads(LossSpec::t_simclr(5.0, 0.5), NormalizeOutput::None, 34);
    }

    #[test]
    fn heavy_tailed_loss_demands_batchnorm() {
        let mut cfg = small_cfg(1);
        cfg.loss = LossSpec::t_simclr(5.0, 0.5);
        cfg.normalize_output = NormalizeOutput::Sphere;
        assert!(cfg.validate().is_err());
        cfg.normalize_output = NormalizeOutput::None;
        assert!(cfg.validate().is_err());
        cfg.normalize_output = NormalizeOutput::Batchnorm;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn batchnorm_training_runs_and_embeds_in_eval_mode() {
        let spec = pentagon_mixture();
        let mut cfg = small_cfg(21);
        cfg.loss = LossSpec::t_simclr(5.0, 0.5);
        cfg.normalize_output = NormalizeOutput::Batchnorm;
        cfg.epochs = 5;
        let report = train_encoder(TrainData::Gmm { spec: &spec, n: 64 }, &cfg).unwrap();
        let state = report.batchnorm.as_ref().unwrap();
        assert_eq!(state.mode, BnMode::Eval);
        // Running statistics moved off their initial values.
        assert!(state.running_mean.iter().any(|&v| v != 0.0));

        let mut rng = RngState::new(5);
        let data = gmm_sample(&spec, 10, &mut rng).unwrap();
        let z1 = embed(&report, &data.x).unwrap();
        let z2 = embed(&report, &data.x).unwrap();
        assert_eq!(z1, z2);
        // Eval mode: single rows embed fine and match the batch result.
        let single = embed(&report, &data.x.slice_rows(0, 1)).unwrap();
        assert_eq!(single.row(0), z1.row(0));
    }

    #[test]
    fn mixup_views_train_smoothly() {
        let spec = pentagon_mixture();
        let mut cfg = small_cfg(31);
        cfg.augment = Augment::Mixup { lambda: LambdaSpec::default() };
        cfg.epochs = 4;
        let report = train_encoder(TrainData::Gmm { spec: &spec, n: 64 }, &cfg).unwrap();
        assert!(report.epoch_log.iter().all(|s| s.loss.is_finite()));
    }

    #[test]
    fn resample_views_need_a_generative_source() {
        let x = Matrix::from_vec(4, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let ds = LabeledDataset::new(x, vec![0, 0, 1, 1]).unwrap();
        let mut cfg = small_cfg(1);
        cfg.batch = 2;
        let err = train_encoder(TrainData::Labeled(&ds), &cfg).unwrap_err();
        assert!(err.to_string().contains("resample"), "{err}");
    }

    #[test]
    fn oversized_batch_is_rejected() {
        let spec = pentagon_mixture();
        let cfg = small_cfg(1);
        assert!(train_encoder(TrainData::Gmm { spec: &spec, n: 8 }, &cfg).is_err());
    }

    #[test]
    fn runaway_learning_rate_reports_the_epoch() {
        let spec = pentagon_mixture();
        let mut cfg = small_cfg(41);
        cfg.loss = LossSpec::infonce_unnormalized(1.0);
        cfg.normalize_output = NormalizeOutput::None;
        cfg.arch = Arch { hidden: vec![], activation: Activation::Identity, d_z: 2 };
        cfg.optimizer = OptimizerConfig::sgd_momentum(1e18, 0.0);
        cfg.augment = Augment::GaussianNoise { sigma: 0.1 };
        cfg.epochs = 10;
        let err = train_encoder(TrainData::Gmm { spec: &spec, n: 64 }, &cfg).unwrap_err();
        assert!(err.to_string().contains("epoch"), "{err}");
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let spec = pentagon_mixture();
        let report = train_encoder(TrainData::Gmm { spec: &spec, n: 64 }, &small_cfg(51)).unwrap();
        let path = tmp_path("roundtrip.json");
        save_checkpoint(&report, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        std::fs::remove_file(&path).ok();
        assert_eq!(report, loaded);
        assert_eq!(report.wall_clock_secs, loaded.wall_clock_secs);

        let mut rng = RngState::new(77);
        let data = gmm_sample(&spec, 20, &mut rng).unwrap();
        let z1 = embed(&report, &data.x).unwrap();
        let z2 = embed(&loaded, &data.x).unwrap();
        assert_eq!(z1, z2);
    }

    #[test]
    fn corrupt_checkpoint_gives_a_structured_error() {
        let path = tmp_path("corrupt.json");
        std::fs::write(&path, "{\"version\": 1, \"report\": {\"config\"").unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        std::fs::remove_file(&path).ok();
        assert!(matches!(err, Error::CheckpointCorrupt(_)), "{err}");
    }

    #[test]
    fn version_mismatch_names_both_versions() {
        let spec = pentagon_mixture();
        let mut cfg = small_cfg(61);
        cfg.epochs = 1;
        let report = train_encoder(TrainData::Gmm { spec: &spec, n: 64 }, &cfg).unwrap();
        let path = tmp_path("version.json");
        save_checkpoint(&report, &path).unwrap();
        let mut value: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        value["version"] = serde_json::json!(999);
        std::fs::write(&path, serde_json::to_string(&value).unwrap()).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        std::fs::remove_file(&path).ok();
        match err {
            Error::CheckpointVersion { found, expected } => {
                assert_eq!(found, 999);
                assert_eq!(expected, CHECKPOINT_VERSION);
            }
            other => panic!("wrong error: {other}"),
        }
        // The rendered message names both numbers.
        let msg = Error::CheckpointVersion { found: 999, expected: CHECKPOINT_VERSION }.to_string();
        assert!(msg.contains("999") && msg.contains(&CHECKPOINT_VERSION.to_string()), "{msg}");
    }
}
