//! Run configuration: one TOML file per experiment, `--key value` flags
//! layered on top. Presets are config files checked into `presets/`.
//!
//! ## Key schema
//!
//! ```toml
//! [out]
//! dir = "runs"                 # default: $CSNE_OUT_DIR, else "."
//!
//! [data]                       # Gaussian mixture the experiment draws from
//! means = [[-2.83, 2.83], ...] # m rows of d coordinates
//! sigma = 0.1
//! n = 250                      # sample size per draw
//! seed = 1                     # gen draw seed
//!
//! [gen]
//! out = "data.csv"             # required by `gen`
//!
//! [train]
//! loss = "infonce"             # sne_kl | infonce | infonce_weighted |
//!                              #   infonce_unnormalized | t_simclr
//! tau = 0.5
//! t_df = 5.0                   # t_simclr only
//! sim = "cosine"               # cosine | neg_sq_euclidean | inner_product
//! d_z = 2
//! hidden = [64, 64]
//! activation = "relu"          # relu | tanh
//! epochs = 200
//! batch = 64
//! optimizer = "adam"           # adam | sgd_momentum
//! lr = 1e-3
//! momentum = 0.9               # sgd_momentum only
//! weight_decay = 0.0
//! augment = "resample"         # resample | gaussian_noise | mixup
//! augment_sigma = 0.1          # gaussian_noise only
//! normalize = "sphere"         # sphere | batchnorm | none
//! seed = 7
//! checkpoint_out = "model.ckpt"
//! log_out = "model-log.csv"    # default: <checkpoint stem>-log.csv
//!
//! [eval]
//! checkpoints = ["model.ckpt"]
//! seed = 40000                 # reference + query draw seed
//! n_train = 250
//! n_test = 250
//! shift = [1.0, 1.0]           # optional mean shift of the query draw
//! knn_k = 15
//! knn_metric = "cosine"        # cosine | euclidean
//! knn_weighting = "cosine_weighted"  # uniform | cosine_weighted
//! expected_order = [0, 1, 2, 3]      # optional cyclic-order check (d_z = 2)
//! order_center = "origin"      # origin | centroid
//! lipschitz_pairs = 10000
//! report_out = "eval.txt"      # required by `eval`
//! embedding_out = "emb.csv"    # optional query-embedding CSV
//! heatmap_out = "heat.csv"     # optional class-cosine CSV
//!
//! [sweep]
//! kind = "train_knn"           # train_knn | tau_w
//! t_df = [1.0, 5.0, 10.0]      # train_knn axes (default: the [train] value)
//! d_z = [1, 2, 4]
//! tau_w = [0.1, 1.0, 1e6]      # tau_w axis
//! out = "sweep.csv"            # required by `sweep`
//! cell_dir = "sweep-cells"     # default: <out stem>-cells
//! threads = 1
//! eval_seed = 9000             # train_knn: KNN draw seed
//! knn_k = 15
//! knn_metric = "euclidean"
//! knn_weighting = "uniform"
//! feature_n = 64               # tau_w: random feature instance
//! feature_d = 4
//! feature_seed = 0
//! tau = 0.5                    # tau_w: base temperature
//! sim = "cosine"               # tau_w: base similarity
//!
//! [plot]
//! kind = "scatter2d"           # scatter2d | line | heatmap
//! input = "emb.csv"
//! out = "emb.svg"              # required by `plot`
//! ```

use std::path::{Path, PathBuf};

use csne_core::losses::LossSpec;
use csne_core::numkit::{Activation, Matrix, OptKind};
use csne_core::simdata::{GmmSpec, LambdaSpec};
use csne_core::similarity::SimKind;
use csne_core::trainer::{Arch, Augment, NormalizeOutput, OptimizerConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub out: OutCfg,
    pub data: Option<DataCfg>,
    pub gen: Option<GenCfg>,
    pub train: Option<TrainCfg>,
    pub eval: Option<EvalCfg>,
    pub sweep: Option<SweepCfg>,
    pub plot: Option<PlotCfg>,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutCfg {
    pub dir: Option<String>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DataCfg {
    pub means: Vec<Vec<f64>>,
    pub sigma: f64,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

impl DataCfg {
    pub fn spec(&self) -> Result<GmmSpec, CliError> {
        let m = self.means.len();
        if m == 0 {
            return Err(CliError::usage("data.means is empty"));
        }
        let d = self.means[0].len();
        let mut flat = Vec::with_capacity(m * d);
        for (i, row) in self.means.iter().enumerate() {
            if row.len() != d {
                return Err(CliError::usage(format!(
                    "data.means row {i} has {} entries, row 0 has {d}",
                    row.len()
                )));
            }
            flat.extend_from_slice(row);
        }
        let means = Matrix::from_vec(m, d, flat)?;
        Ok(GmmSpec::new(means, self.sigma)?)
    }
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenCfg {
    pub out: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LossName {
    SneKl,
    Infonce,
    InfonceWeighted,
    InfonceUnnormalized,
    TSimclr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SimName {
    Cosine,
    NegSqEuclidean,
    InnerProduct,
}

impl SimName {
    pub fn kind(self) -> SimKind {
        match self {
            SimName::Cosine => SimKind::Cosine,
            SimName::NegSqEuclidean => SimKind::NegSqEuclidean,
            SimName::InnerProduct => SimKind::InnerProduct,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SimName::Cosine => "cosine",
            SimName::NegSqEuclidean => "neg_sq_euclidean",
            SimName::InnerProduct => "inner_product",
        }
    }
}

impl LossName {
    pub fn as_str(self) -> &'static str {
        match self {
            LossName::SneKl => "sne_kl",
            LossName::Infonce => "infonce",
            LossName::InfonceWeighted => "infonce_weighted",
            LossName::InfonceUnnormalized => "infonce_unnormalized",
            LossName::TSimclr => "t_simclr",
        }
    }
}

impl ActName {
    pub fn as_str(self) -> &'static str {
        match self {
            ActName::Relu => "relu",
            ActName::Tanh => "tanh",
        }
    }
}

impl OptName {
    pub fn as_str(self) -> &'static str {
        match self {
            OptName::Adam => "adam",
            OptName::SgdMomentum => "sgd_momentum",
        }
    }
}

impl AugName {
    pub fn as_str(self) -> &'static str {
        match self {
            AugName::Resample => "resample",
            AugName::GaussianNoise => "gaussian_noise",
            AugName::Mixup => "mixup",
        }
    }
}

impl NormName {
    pub fn as_str(self) -> &'static str {
        match self {
            NormName::Sphere => "sphere",
            NormName::Batchnorm => "batchnorm",
            NormName::None => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ActName {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OptName {
    Adam,
    SgdMomentum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AugName {
    Resample,
    GaussianNoise,
    Mixup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NormName {
    Sphere,
    Batchnorm,
    None,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TrainCfg {
    pub loss: LossName,
    pub tau: f64,
    #[serde(default = "default_t_df")]
    pub t_df: f64,
    #[serde(default = "default_sim")]
    pub sim: SimName,
    pub d_z: usize,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: ActName,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptName,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_augment")]
    pub augment: AugName,
    #[serde(default)]
    pub augment_sigma: Option<f64>,
    #[serde(default = "default_normalize")]
    pub normalize: NormName,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub checkpoint_out: Option<String>,
    #[serde(default)]
    pub log_out: Option<String>,
}

fn default_t_df() -> f64 {
    5.0
}
fn default_sim() -> SimName {
    SimName::Cosine
}
fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}
fn default_activation() -> ActName {
    ActName::Relu
}
fn default_epochs() -> usize {
    200
}
fn default_batch() -> usize {
    64
}
fn default_optimizer() -> OptName {
    OptName::Adam
}
fn default_lr() -> f64 {
    1e-3
}
fn default_momentum() -> f64 {
    0.9
}
fn default_augment() -> AugName {
    AugName::Resample
}
fn default_normalize() -> NormName {
    NormName::Sphere
}

impl TrainCfg {
    pub fn loss_spec(&self) -> LossSpec {
        match self.loss {
            LossName::SneKl => LossSpec::sne_kl(self.tau, self.sim.kind()),
            LossName::Infonce => LossSpec::infonce(self.tau, self.sim.kind()),
            LossName::InfonceWeighted => LossSpec::infonce_weighted(self.tau, self.sim.kind()),
            LossName::InfonceUnnormalized => LossSpec::infonce_unnormalized(self.tau),
            LossName::TSimclr => LossSpec::t_simclr(self.t_df, self.tau),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let activation = match self.activation {
            ActName::Relu => Activation::Relu,
            ActName::Tanh => Activation::Tanh,
        };
        let kind = match self.optimizer {
            OptName::Adam => OptKind::adam(),
            OptName::SgdMomentum => OptKind::SgdMomentum { momentum: self.momentum },
        };
        let augment = match self.augment {
            AugName::Resample => Augment::Resample,
            AugName::GaussianNoise => {
                Augment::GaussianNoise { sigma: self.augment_sigma.unwrap_or(0.1) }
            }
            AugName::Mixup => Augment::Mixup { lambda: LambdaSpec::default() },
        };
        let normalize_output = match self.normalize {
            NormName::Sphere => NormalizeOutput::Sphere,
            NormName::Batchnorm => NormalizeOutput::Batchnorm,
            NormName::None => NormalizeOutput::None,
        };
        TrainConfig {
            loss: self.loss_spec(),
            arch: Arch { hidden: self.hidden.clone(), activation, d_z: self.d_z },
            epochs: self.epochs,
            batch: self.batch,
            optimizer: OptimizerConfig {
                kind,
                lr: self.lr,
                weight_decay: self.weight_decay,
            },
            augment,
            normalize_output,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Cosine,
    Euclidean,
}

impl MetricName {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::Cosine => "cosine",
            MetricName::Euclidean => "euclidean",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingName {
    Uniform,
    CosineWeighted,
}

impl WeightingName {
    pub fn as_str(self) -> &'static str {
        match self {
            WeightingName::Uniform => "uniform",
            WeightingName::CosineWeighted => "cosine_weighted",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterName {
    Origin,
    Centroid,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct EvalCfg {
    pub checkpoints: Vec<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_eval_n")]
    pub n_train: usize,
    #[serde(default = "default_eval_n")]
    pub n_test: usize,
    #[serde(default)]
    pub shift: Option<Vec<f64>>,
    #[serde(default = "default_knn_k")]
    pub knn_k: usize,
    #[serde(default = "default_knn_metric")]
    pub knn_metric: MetricName,
    #[serde(default = "default_knn_weighting")]
    pub knn_weighting: WeightingName,
    #[serde(default)]
    pub expected_order: Option<Vec<usize>>,
    #[serde(default = "default_order_center")]
    pub order_center: CenterName,
    #[serde(default = "default_lipschitz_pairs")]
    pub lipschitz_pairs: usize,
    #[serde(default)]
    pub report_out: Option<String>,
    #[serde(default)]
    pub embedding_out: Option<String>,
    #[serde(default)]
    pub heatmap_out: Option<String>,
}

fn default_eval_n() -> usize {
    250
}
fn default_knn_k() -> usize {
    15
}
fn default_knn_metric() -> MetricName {
    MetricName::Cosine
}
fn default_knn_weighting() -> WeightingName {
    WeightingName::CosineWeighted
}
fn default_order_center() -> CenterName {
    CenterName::Origin
}
fn default_lipschitz_pairs() -> usize {
    10_000
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    TrainKnn,
    TauW,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SweepCfg {
    pub kind: SweepKind,
    #[serde(default)]
    pub t_df: Vec<f64>,
    #[serde(default)]
    pub d_z: Vec<usize>,
    #[serde(default)]
    pub tau_w: Vec<f64>,
    #[serde(default)]
    pub out: Option<String>,
    #[serde(default)]
    pub cell_dir: Option<String>,
    #[serde(default = "default_threads")]
    pub threads: usize,
    #[serde(default)]
    pub eval_seed: u64,
    #[serde(default = "default_knn_k")]
    pub knn_k: usize,
    #[serde(default = "default_sweep_metric")]
    pub knn_metric: MetricName,
    #[serde(default = "default_sweep_weighting")]
    pub knn_weighting: WeightingName,
    #[serde(default = "default_feature_n")]
    pub feature_n: usize,
    #[serde(default = "default_feature_d")]
    pub feature_d: usize,
    #[serde(default)]
    pub feature_seed: u64,
    #[serde(default = "default_sweep_tau")]
    pub tau: f64,
    #[serde(default = "default_sim")]
    pub sim: SimName,
}

fn default_sweep_tau() -> f64 {
    0.5
}

fn default_threads() -> usize {
    1
}
fn default_sweep_metric() -> MetricName {
    MetricName::Euclidean
}
fn default_sweep_weighting() -> WeightingName {
    WeightingName::Uniform
}
fn default_feature_n() -> usize {
    64
}
fn default_feature_d() -> usize {
    4
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    Scatter2d,
    Line,
    Heatmap,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PlotCfg {
    pub kind: PlotKind,
    pub input: String,
    #[serde(default)]
    pub out: Option<String>,
}

/// Load a config file and fold `--key value` overrides into it, where
/// `key` is a dotted path into the TOML tree. Values parse as TOML
/// scalars or arrays; anything unparsable is taken as a string.
pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<FileConfig, CliError> {
    let mut root = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| {
                CliError::usage(format!("cannot read config {}: {e}", p.display()))
            })?;
            text.parse::<toml::Value>()
                .map_err(|e| CliError::config(format!("{}: {e}", p.display())))?
        }
        None => toml::Value::Table(toml::value::Table::new()),
    };
    for (key, raw) in overrides {
        set_path(&mut root, key, parse_override(raw))?;
    }
    root.try_into::<FileConfig>().map_err(|e| CliError::config(e.to_string()))
}

fn parse_override(raw: &str) -> toml::Value {
    // A bare word is not valid TOML on the right-hand side; fall back to
    // treating it as a string.
    match format!("v = {raw}").parse::<toml::Value>() {
        Ok(toml::Value::Table(mut t)) => t.remove("v").expect("key v just parsed"),
        _ => toml::Value::String(raw.to_string()),
    }
}

fn set_path(root: &mut toml::Value, key: &str, value: toml::Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::usage(format!("bad override key --{key}")));
    }
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| CliError::usage(format!("--{key}: {part} is not a table")))?;
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::value::Table::new()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| CliError::usage(format!("--{key}: parent is not a table")))?;
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Resolve `--preset <name>` to a config file: `$CSNE_PRESET_DIR`, then
/// `presets/` under the working directory, then the copy shipped next to
/// this crate's source.
pub fn preset_path(name: &str) -> Result<PathBuf, CliError> {
    if name.contains('/') || name.contains('\\') || name.contains("..") {
        return Err(CliError::usage(format!("bad preset name {name:?}")));
    }
    let file = format!("{name}.toml");
    let mut candidates = Vec::new();
    if let Ok(dir) = std::env::var("CSNE_PRESET_DIR") {
        candidates.push(PathBuf::from(dir).join(&file));
    }
    candidates.push(PathBuf::from("presets").join(&file));
    candidates.push(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets").join(&file),
    );
    for c in &candidates {
        if c.is_file() {
            return Ok(c.clone());
        }
    }
    Err(CliError::usage(format!(
        "preset {name:?} not found (searched {})",
        candidates
            .iter()
            .map(|c| c.display().to_string())
            .collect::<Vec<_>>()
            .join(", ")
    )))
}

/// Output directory: `[out].dir`, else `$CSNE_OUT_DIR`, else the working
/// directory. Created if missing; every relative output path lands here.
pub fn out_dir(cfg: &FileConfig) -> Result<PathBuf, CliError> {
    let dir = match &cfg.out.dir {
        Some(d) => PathBuf::from(d),
        None => match std::env::var("CSNE_OUT_DIR") {
            Ok(d) if !d.is_empty() => PathBuf::from(d),
            _ => PathBuf::from("."),
        },
    };
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

pub fn out_path(dir: &Path, name: &str) -> PathBuf {
    let p = Path::new(name);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}
