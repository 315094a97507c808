//! Grid sweeps that accumulate one CSV row per cell.
//!
//! Every cell lands in its own small file first (written to a temp name,
//! then renamed), so an interrupted sweep resumes where it stopped:
//! existing cell files are reused, missing ones are recomputed, and the
//! final table is stitched together in grid order either way. Cells are
//! independent, so `threads > 1` simply deals them out round-robin.

use std::path::{Path, PathBuf};

use csne_core::evaltheory::knn_classify;
use csne_core::losses::{loss_value, LossAux, LossSpec};
use csne_core::numkit::Matrix;
use csne_core::simdata::{
    gmm_sample, iou, sample_crop_pair, DEFAULT_CROP_ASPECT, DEFAULT_CROP_SCALE,
};
use csne_core::similarity::p_weighted_pairs;
use csne_core::trainer::{embed, train_encoder, TrainData};
use csne_core::RngState;

use crate::config::{self, DataCfg, FileConfig, SweepCfg, SweepKind, TrainCfg};
use crate::eval::{metric, weighting};
use crate::CliError;

const TRAIN_KNN_HEADER: &str = "t_df,d_z,loss,tau,sim,hidden,activation,epochs,batch,\
optimizer,lr,momentum,weight_decay,augment,normalize,train_seed,data_n,data_sigma,\
eval_seed,knn_k,knn_metric,knn_weighting,knn_accuracy";

const TAU_W_HEADER: &str =
    "tau_w,n,d,seed,tau,sim,weighted_loss,unweighted_loss,abs_gap";

enum Work {
    TrainKnn { t_df: f64, d_z: usize },
    TauW { tau_w: f64 },
}

struct Cell {
    path: PathBuf,
    work: Work,
}

pub fn run(cfg: &FileConfig) -> Result<(), CliError> {
    let sweep = cfg.sweep.as_ref().ok_or_else(|| CliError::usage("sweep needs a [sweep] section"))?;
    let out_name =
        sweep.out.as_deref().ok_or_else(|| CliError::usage("sweep needs sweep.out"))?;
    let dir = config::out_dir(cfg)?;
    let out = config::out_path(&dir, out_name);
    let cell_dir = match &sweep.cell_dir {
        Some(d) => config::out_path(&dir, d),
        None => {
            let stem = Path::new(out_name)
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("sweep");
            out.with_file_name(format!("{stem}-cells"))
        }
    };
    std::fs::create_dir_all(&cell_dir)
        .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", cell_dir.display())))?;

    let (header, cells) = plan(cfg, sweep, &cell_dir)?;
    let pending: Vec<&Cell> = cells.iter().filter(|c| !c.path.exists()).collect();
    let reused = cells.len() - pending.len();

    let workers = sweep.threads.max(1).min(pending.len().max(1));
    if workers <= 1 {
        for cell in &pending {
            run_cell(cell, header, cfg, sweep)?;
        }
    } else {
        std::thread::scope(|scope| -> Result<(), CliError> {
            let mut handles = Vec::with_capacity(workers);
            for w in 0..workers {
                let mine: Vec<&Cell> =
                    pending.iter().copied().skip(w).step_by(workers).collect();
                handles.push(scope.spawn(move || -> Result<(), CliError> {
                    for cell in mine {
                        run_cell(cell, header, cfg, sweep)?;
                    }
                    Ok(())
                }));
            }
            for h in handles {
                h.join().map_err(|_| CliError::runtime("sweep worker panicked"))??;
            }
            Ok(())
        })?;
    }

    // Stitch in grid order, not directory order, so the table layout does
    // not depend on which cells were recomputed.
    let mut table = String::with_capacity(cells.len() * 128);
    table.push_str(header);
    table.push('\n');
    for cell in &cells {
        let text = std::fs::read_to_string(&cell.path)
            .map_err(|e| CliError::runtime(format!("cannot read {}: {e}", cell.path.display())))?;
        let (first, rest) = text
            .split_once('\n')
            .ok_or_else(|| stale_cell(&cell.path))?;
        if first != header || rest.is_empty() {
            return Err(stale_cell(&cell.path));
        }
        table.push_str(rest);
    }
    std::fs::write(&out, table)
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", out.display())))?;
    println!(
        "sweep: {} cells ({} computed, {} reused), wrote {}",
        cells.len(),
        pending.len(),
        reused,
        out.display()
    );
    Ok(())
}

fn stale_cell(path: &Path) -> CliError {
    CliError::config(format!(
        "{} does not match this sweep's columns; delete the cell directory to recompute",
        path.display()
    ))
}

/// Lay out the full grid: the per-kind header and one cell per grid point.
fn plan(
    cfg: &FileConfig,
    sweep: &SweepCfg,
    cell_dir: &Path,
) -> Result<(&'static str, Vec<Cell>), CliError> {
    match sweep.kind {
        SweepKind::TrainKnn => {
            let train = require_train(cfg)?;
            require_data(cfg)?;
            let t_axis = if sweep.t_df.is_empty() { vec![train.t_df] } else { sweep.t_df.clone() };
            let d_axis = if sweep.d_z.is_empty() { vec![train.d_z] } else { sweep.d_z.clone() };
            let mut cells = Vec::with_capacity(t_axis.len() * d_axis.len());
            for &t_df in &t_axis {
                for &d_z in &d_axis {
                    cells.push(Cell {
                        path: cell_dir.join(format!("cell-tdf{t_df}-dz{d_z}.csv")),
                        work: Work::TrainKnn { t_df, d_z },
                    });
                }
            }
            Ok((TRAIN_KNN_HEADER, cells))
        }
        SweepKind::TauW => {
            if sweep.tau_w.is_empty() {
                return Err(CliError::usage("a tau_w sweep needs a nonempty sweep.tau_w axis"));
            }
            let cells = sweep
                .tau_w
                .iter()
                .map(|&tau_w| Cell {
                    path: cell_dir.join(format!("cell-tauw{tau_w}.csv")),
                    work: Work::TauW { tau_w },
                })
                .collect();
            Ok((TAU_W_HEADER, cells))
        }
    }
}

fn require_data(cfg: &FileConfig) -> Result<&DataCfg, CliError> {
    cfg.data.as_ref().ok_or_else(|| CliError::usage("a train_knn sweep needs a [data] section"))
}

fn require_train(cfg: &FileConfig) -> Result<&TrainCfg, CliError> {
    cfg.train.as_ref().ok_or_else(|| CliError::usage("a train_knn sweep needs a [train] section"))
}

fn run_cell(
    cell: &Cell,
    header: &str,
    cfg: &FileConfig,
    sweep: &SweepCfg,
) -> Result<(), CliError> {
    let row = match cell.work {
        Work::TrainKnn { t_df, d_z } => train_knn_row(t_df, d_z, cfg, sweep)?,
        Work::TauW { tau_w } => tau_w_row(tau_w, sweep)?,
    };
    let tmp = cell.path.with_extension("csv.tmp");
    std::fs::write(&tmp, format!("{header}\n{row}\n"))
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, &cell.path)
        .map_err(|e| CliError::runtime(format!("cannot rename {}: {e}", tmp.display())))?;
    println!("cell {} done", cell.path.file_name().and_then(|s| s.to_str()).unwrap_or("?"));
    Ok(())
}

/// Train one encoder at (t_df, d_z) and score a fresh reference/query pair
/// of mixture draws by k-nearest-neighbor vote in embedding space.
fn train_knn_row(
    t_df: f64,
    d_z: usize,
    cfg: &FileConfig,
    sweep: &SweepCfg,
) -> Result<String, CliError> {
    let data = require_data(cfg)?;
    let train = require_train(cfg)?;
    let spec = data.spec()?;
    let mut tc = train.train_config();
    tc.loss.t_df = t_df;
    tc.arch.d_z = d_z;
    let report = train_encoder(TrainData::Gmm { spec: &spec, n: data.n }, &tc)?;

    let mut rng = RngState::new(sweep.eval_seed);
    let reference = gmm_sample(&spec, data.n, &mut rng)?;
    let query = gmm_sample(&spec, data.n, &mut rng)?;
    let z_ref = embed(&report, &reference.x)?;
    let z_query = embed(&report, &query.x)?;
    let (_, accuracy) = knn_classify(
        &z_ref,
        &reference.labels,
        &z_query,
        &query.labels,
        sweep.knn_k,
        metric(sweep.knn_metric),
        weighting(sweep.knn_weighting),
    )?;

    let hidden =
        train.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join("|");
    Ok(format!(
        "{t_df},{d_z},{},{},{},{hidden},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{accuracy}",
        train.loss.as_str(),
        train.tau,
        train.sim.as_str(),
        train.activation.as_str(),
        train.epochs,
        train.batch,
        train.optimizer.as_str(),
        train.lr,
        train.momentum,
        train.weight_decay,
        train.augment.as_str(),
        train.normalize.as_str(),
        train.seed,
        data.n,
        data.sigma,
        sweep.eval_seed,
        sweep.knn_k,
        sweep.knn_metric.as_str(),
        sweep.knn_weighting.as_str(),
    ))
}

/// Value the pair-weighted objective against the plain one on a single
/// random feature instance, with weights derived from crop-overlap IoU at
/// the given weighting temperature. As tau_w grows the weights flatten to
/// 1 and the gap must vanish.
fn tau_w_row(tau_w: f64, sweep: &SweepCfg) -> Result<String, CliError> {
    let n = sweep.feature_n;
    let d = sweep.feature_d;
    let mut rng = RngState::new(sweep.feature_seed);
    let anchors = gaussian_matrix(n, d, &mut rng);
    let views = gaussian_matrix(n, d, &mut rng);
    let mut ious = Vec::with_capacity(n);
    for _ in 0..n {
        let (a, b) = sample_crop_pair(&mut rng, DEFAULT_CROP_SCALE, DEFAULT_CROP_ASPECT)?;
        ious.push(iou(&a, &b));
    }
    let weights = p_weighted_pairs(&ious, tau_w)?;

    let sim = sweep.sim.kind();
    let weighted = loss_value(
        &LossSpec::infonce_weighted(sweep.tau, sim),
        &anchors,
        &views,
        LossAux { p: None, weights: Some(&weights) },
    )?;
    let unweighted = loss_value(
        &LossSpec::infonce(sweep.tau, sim),
        &anchors,
        &views,
        LossAux { p: None, weights: None },
    )?;
    Ok(format!(
        "{tau_w},{n},{d},{},{},{},{weighted},{unweighted},{}",
        sweep.feature_seed,
        sweep.tau,
        sweep.sim.as_str(),
        (weighted - unweighted).abs()
    ))
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut RngState) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m.set(i, j, rng.gaussian());
        }
    }
    m
}
