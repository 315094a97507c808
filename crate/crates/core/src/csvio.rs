//! CSV interchange formats.
//!
//! Every artifact the command-line tools exchange is a small, strictly
//! numeric CSV: datasets, similarity matrices, embeddings, training logs,
//! and plain matrices (heatmaps). Values are written with Rust's shortest
//! round-trip float formatting, so re-reading a file reproduces the exact
//! numbers and rerunning a seeded pipeline reproduces the exact bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numkit::Matrix;
use crate::similarity::{MatrixKind, SimMatrix};
use crate::simdata::LabeledDataset;
use crate::trainer::EpochStats;

fn parse_f64(field: &str, line_no: usize) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("line {line_no}: `{field}` is not a number")))
}

fn parse_label(field: &str, line_no: usize) -> Result<usize> {
    field
        .trim()
        .parse::<usize>()
        .map_err(|_| Error::Parse(format!("line {line_no}: `{field}` is not a label")))
}

fn split_nonempty_lines(text: &str) -> Vec<(usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
        .collect()
}

/// Write a labeled dataset with header `x0,...,x{d-1},label`.
pub fn write_dataset_csv(path: &Path, data: &LabeledDataset) -> Result<()> {
    let d = data.x.cols();
    let mut out = String::new();
    for j in 0..d {
        let _ = write!(out, "x{j},");
    }
    out.push_str("label\n");
    for i in 0..data.len() {
        for j in 0..d {
            let _ = write!(out, "{},", data.x.get(i, j));
        }
        let _ = writeln!(out, "{}", data.labels[i]);
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read a dataset written by [`write_dataset_csv`].
pub fn read_dataset_csv(path: &Path) -> Result<LabeledDataset> {
    let text = fs::read_to_string(path)?;
    let lines = split_nonempty_lines(&text);
    let Some(((_, header), rows)) = lines.split_first() else {
        return Err(Error::Parse("empty dataset file".into()));
    };
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 2 || cols[cols.len() - 1] != "label" {
        return Err(Error::Parse(format!("bad dataset header `{header}`")));
    }
    let d = cols.len() - 1;
    for (j, col) in cols[..d].iter().enumerate() {
        if *col != format!("x{j}") {
            return Err(Error::Parse(format!("bad dataset header `{header}`")));
        }
    }
    let mut values = Vec::with_capacity(rows.len() * d);
    let mut labels = Vec::with_capacity(rows.len());
    for &(line_no, line) in rows {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 1 {
            return Err(Error::Parse(format!(
                "line {line_no}: expected {} fields, found {}",
                d + 1,
                fields.len()
            )));
        }
        for field in &fields[..d] {
            values.push(parse_f64(field, line_no)?);
        }
        labels.push(parse_label(fields[d], line_no)?);
    }
    let n = labels.len();
    LabeledDataset::new(Matrix::from_vec(n, d, values)?, labels)
}

/// Write a similarity matrix: a `kind=<...>` header line, then the grid.
pub fn write_sim_matrix_csv(path: &Path, m: &SimMatrix) -> Result<()> {
    let mut out = format!("kind={}\n", m.kind().as_str());
    push_grid(&mut out, m.values());
    fs::write(path, out)?;
    Ok(())
}

/// Read a similarity matrix written by [`write_sim_matrix_csv`].
pub fn read_sim_matrix_csv(path: &Path) -> Result<SimMatrix> {
    let text = fs::read_to_string(path)?;
    let lines = split_nonempty_lines(&text);
    let Some(((_, header), rows)) = lines.split_first() else {
        return Err(Error::Parse("empty similarity file".into()));
    };
    let kind = match header.trim() {
        "kind=conditional" => MatrixKind::Conditional,
        "kind=joint" => MatrixKind::Joint,
        "kind=unnormalized" => MatrixKind::Unnormalized,
        other => return Err(Error::Parse(format!("bad similarity header `{other}`"))),
    };
    let values = parse_grid(rows)?;
    if values.rows() != values.cols() {
        return Err(Error::Parse(format!(
            "similarity grid is {}x{}, expected square",
            values.rows(),
            values.cols()
        )));
    }
    SimMatrix::new(values, kind)
}

/// Write an embedding with header `z0,...,z{d_z-1}` plus an optional
/// trailing `label` column.
pub fn write_embedding_csv(path: &Path, z: &Matrix, labels: Option<&[usize]>) -> Result<()> {
    if let Some(l) = labels {
        if l.len() != z.rows() {
            return Err(Error::dim(
                "write_embedding_csv",
                format!("{} rows but {} labels", z.rows(), l.len()),
            ));
        }
    }
    let d = z.cols();
    let mut out = String::new();
    for j in 0..d {
        let _ = write!(out, "z{j}");
        if j + 1 < d || labels.is_some() {
            out.push(',');
        }
    }
    if labels.is_some() {
        out.push_str("label");
    }
    out.push('\n');
    for i in 0..z.rows() {
        for j in 0..d {
            let _ = write!(out, "{}", z.get(i, j));
            if j + 1 < d || labels.is_some() {
                out.push(',');
            }
        }
        if let Some(l) = labels {
            let _ = write!(out, "{}", l[i]);
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read an embedding written by [`write_embedding_csv`]. The labels are
/// `Some` exactly when the file has a `label` column.
pub fn read_embedding_csv(path: &Path) -> Result<(Matrix, Option<Vec<usize>>)> {
    let text = fs::read_to_string(path)?;
    let lines = split_nonempty_lines(&text);
    let Some(((_, header), rows)) = lines.split_first() else {
        return Err(Error::Parse("empty embedding file".into()));
    };
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let labeled = *cols.last().unwrap() == "label";
    let d = cols.len() - usize::from(labeled);
    if d == 0 {
        return Err(Error::Parse(format!("bad embedding header `{header}`")));
    }
    for (j, col) in cols[..d].iter().enumerate() {
        if *col != format!("z{j}") {
            return Err(Error::Parse(format!("bad embedding header `{header}`")));
        }
    }
    let mut values = Vec::with_capacity(rows.len() * d);
    let mut labels = Vec::with_capacity(if labeled { rows.len() } else { 0 });
    for &(line_no, line) in rows {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::Parse(format!(
                "line {line_no}: expected {} fields, found {}",
                cols.len(),
                fields.len()
            )));
        }
        for field in &fields[..d] {
            values.push(parse_f64(field, line_no)?);
        }
        if labeled {
            labels.push(parse_label(fields[d], line_no)?);
        }
    }
    let n = rows.len();
    Ok((Matrix::from_vec(n, d, values)?, labeled.then_some(labels)))
}

/// Write a training log with header `epoch,loss,align_metric,uniform_metric`.
pub fn write_training_log_csv(path: &Path, log: &[EpochStats]) -> Result<()> {
    let mut out = String::from("epoch,loss,align_metric,uniform_metric\n");
    for s in log {
        let _ = writeln!(out, "{},{},{},{}", s.epoch, s.loss, s.align_metric, s.uniform_metric);
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read a training log written by [`write_training_log_csv`].
pub fn read_training_log_csv(path: &Path) -> Result<Vec<EpochStats>> {
    let text = fs::read_to_string(path)?;
    let lines = split_nonempty_lines(&text);
    let Some(((_, header), rows)) = lines.split_first() else {
        return Err(Error::Parse("empty training log".into()));
    };
    if header.trim() != "epoch,loss,align_metric,uniform_metric" {
        return Err(Error::Parse(format!("bad training log header `{header}`")));
    }
    let mut log = Vec::with_capacity(rows.len());
    for &(line_no, line) in rows {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Parse(format!(
                "line {line_no}: expected 4 fields, found {}",
                fields.len()
            )));
        }
        log.push(EpochStats {
            epoch: parse_label(fields[0], line_no)?,
            loss: parse_f64(fields[1], line_no)?,
            align_metric: parse_f64(fields[2], line_no)?,
            uniform_metric: parse_f64(fields[3], line_no)?,
        });
    }
    Ok(log)
}

/// Write a bare numeric grid with no header (heatmaps, sweep surfaces).
pub fn write_matrix_csv(path: &Path, m: &Matrix) -> Result<()> {
    let mut out = String::new();
    push_grid(&mut out, m);
    fs::write(path, out)?;
    Ok(())
}

/// Read a bare numeric grid written by [`write_matrix_csv`].
pub fn read_matrix_csv(path: &Path) -> Result<Matrix> {
    let text = fs::read_to_string(path)?;
    let lines = split_nonempty_lines(&text);
    parse_grid(&lines)
}

fn push_grid(out: &mut String, m: &Matrix) {
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", m.get(i, j));
        }
        out.push('\n');
    }
}

fn parse_grid(rows: &[(usize, &str)]) -> Result<Matrix> {
    if rows.is_empty() {
        return Err(Error::Parse("empty numeric grid".into()));
    }
    let cols = rows[0].1.split(',').count();
    let mut values = Vec::with_capacity(rows.len() * cols);
    for &(line_no, line) in rows {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols {
            return Err(Error::Parse(format!(
                "line {line_no}: expected {cols} fields, found {}",
                fields.len()
            )));
        }
        for field in fields {
            values.push(parse_f64(field, line_no)?);
        }
    }
    Matrix::from_vec(rows.len(), cols, values)
}
