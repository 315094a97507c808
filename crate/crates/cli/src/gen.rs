//! `csne gen` — draw a labeled mixture sample and persist it as CSV.

use csne_core::csvio::write_dataset_csv;
use csne_core::simdata::gmm_sample;
use csne_core::RngState;

use crate::config::{self, FileConfig};
use crate::CliError;

pub fn run(cfg: &FileConfig) -> Result<(), CliError> {
    let data = cfg
        .data
        .as_ref()
        .ok_or_else(|| CliError::usage("gen needs a [data] section"))?;
    let out_name = cfg
        .gen
        .as_ref()
        .and_then(|g| g.out.as_deref())
        .ok_or_else(|| CliError::usage("gen needs an output path (gen.out or --out)"))?;

    let spec = data.spec()?;
    let mut rng = RngState::new(data.seed);
    let sample = gmm_sample(&spec, data.n, &mut rng)?;

    let dir = config::out_dir(cfg)?;
    let path = config::out_path(&dir, out_name);
    write_dataset_csv(&path, &sample)?;
    println!(
        "wrote {} ({} points, {} components, {} dims, seed {})",
        path.display(),
        sample.len(),
        spec.means.rows(),
        spec.means.cols(),
        data.seed
    );
    Ok(())
}
