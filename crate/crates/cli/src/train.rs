//! `csne train` — train an encoder on mixture draws, write the checkpoint
//! and the per-epoch training log.

use std::path::PathBuf;

use csne_core::csvio::write_training_log_csv;
use csne_core::trainer::{save_checkpoint, train_encoder, TrainData, TrainReport};

use crate::config::{self, FileConfig};
use crate::CliError;

pub fn run(cfg: &FileConfig) -> Result<TrainReport, CliError> {
    let data = cfg
        .data
        .as_ref()
        .ok_or_else(|| CliError::usage("train needs a [data] section"))?;
    let train = cfg
        .train
        .as_ref()
        .ok_or_else(|| CliError::usage("train needs a [train] section"))?;
    let ckpt_name = train
        .checkpoint_out
        .as_deref()
        .ok_or_else(|| CliError::usage("train needs train.checkpoint_out"))?;

    let spec = data.spec()?;
    let tc = train.train_config();
    let report = train_encoder(TrainData::Gmm { spec: &spec, n: data.n }, &tc)?;

    let dir = config::out_dir(cfg)?;
    let ckpt_path = config::out_path(&dir, ckpt_name);
    save_checkpoint(&report, &ckpt_path)?;

    let log_path = match &train.log_out {
        Some(name) => config::out_path(&dir, name),
        None => default_log_path(&ckpt_path),
    };
    write_training_log_csv(&log_path, &report.epoch_log)?;

    let last = report.epoch_log.last().expect("epochs >= 1 after validate");
    println!(
        "trained {} epochs in {:.1}s: loss {:.6}, align {:.4}, uniform {:.4}",
        report.epoch_log.len(),
        report.wall_clock_secs,
        last.loss,
        last.align_metric,
        last.uniform_metric
    );
    println!("wrote {}", ckpt_path.display());
    println!("wrote {}", log_path.display());
    Ok(report)
}

fn default_log_path(ckpt: &std::path::Path) -> PathBuf {
    let stem = ckpt.file_stem().and_then(|s| s.to_str()).unwrap_or("train");
    ckpt.with_file_name(format!("{stem}-log.csv"))
}
