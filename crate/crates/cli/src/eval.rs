//! `csne eval` — embed fresh mixture draws with one or more checkpoints
//! and report KNN accuracy, linear-probe accuracy, alignment, uniformity,
//! smoothness, and the cyclic class order.
//!
//! The reference draw and the query draw come from `eval.seed`; an
//! optional `eval.shift` displaces the query draw only, so the probe and
//! KNN are fit on in-distribution features and scored on shifted ones.

use csne_core::csvio::{write_embedding_csv, write_matrix_csv};
use csne_core::evaltheory::{
    alignment_score, class_cosine_heatmap, class_means, knn_classify, linear_probe,
    lipschitz_estimate, order_cycle_check, EvalReport, KnnMetric, KnnWeighting, OrderCenter,
    PROBE_EPOCHS, PROBE_LR,
};
use csne_core::numkit::{dot, norm2, Matrix};
use csne_core::simdata::{augment_resample, gmm_sample, mean_shift};
use csne_core::trainer::{embed, load_checkpoint};
use csne_core::RngState;

use crate::config::{self, CenterName, FileConfig, MetricName, WeightingName};
use crate::CliError;

pub fn run(cfg: &FileConfig) -> Result<(), CliError> {
    let data = cfg
        .data
        .as_ref()
        .ok_or_else(|| CliError::usage("eval needs a [data] section"))?;
    let eval = cfg
        .eval
        .as_ref()
        .ok_or_else(|| CliError::usage("eval needs an [eval] section"))?;
    if eval.checkpoints.is_empty() {
        return Err(CliError::usage("eval.checkpoints is empty"));
    }
    let report_name = eval
        .report_out
        .as_deref()
        .ok_or_else(|| CliError::usage("eval needs eval.report_out"))?;

    let spec = data.spec()?;
    let dir = config::out_dir(cfg)?;
    let multi = eval.checkpoints.len() > 1;
    let mut report_text = String::new();

    for ckpt_name in &eval.checkpoints {
        let ckpt_path = config::out_path(&dir, ckpt_name);
        let model = load_checkpoint(&ckpt_path)?;

        // Every checkpoint sees identical draws.
        let mut rng = RngState::new(eval.seed);
        let reference = gmm_sample(&spec, eval.n_train, &mut rng)?;
        let held_out = gmm_sample(&spec, eval.n_test, &mut rng)?;
        let query = match &eval.shift {
            Some(delta) => mean_shift(&held_out, delta)?,
            None => held_out.clone(),
        };

        let z_ref = embed(&model, &reference.x)?;
        let z_query = embed(&model, &query.x)?;

        let (_, knn_accuracy) = knn_classify(
            &z_ref,
            &reference.labels,
            &z_query,
            &query.labels,
            eval.knn_k,
            metric(eval.knn_metric),
            weighting(eval.knn_weighting),
        )?;
        let probe_accuracy = linear_probe(
            &z_ref,
            &reference.labels,
            &z_query,
            &query.labels,
            PROBE_EPOCHS,
            PROBE_LR,
        )?;

        // Alignment on fresh in-distribution pairs.
        let pair = augment_resample(&spec, &held_out, &mut rng)?;
        let za = embed(&model, &pair.anchors)?;
        let zv = embed(&model, &pair.views)?;
        let alignment = alignment_score(&za, &zv)?;

        let means = class_means(&z_query, &query.labels)?;
        let uniformity = uniformity_of(&means)?;
        let lipschitz =
            lipschitz_estimate(|x| embed(&model, x), &held_out.x, eval.lipschitz_pairs, &mut rng)?;

        let order = match (&eval.expected_order, model.config.arch.d_z) {
            (Some(expected), 2) => Some(order_cycle_check(
                &z_query,
                &query.labels,
                expected,
                center(eval.order_center),
            )?),
            _ => None,
        };
        let heatmap = class_cosine_heatmap(&z_query, &query.labels)?;

        let report = EvalReport {
            knn_accuracy,
            probe_accuracy,
            alignment,
            uniformity,
            lipschitz,
            order,
            heatmap,
        };
        report.validate()?;

        if let Some(name) = &eval.embedding_out {
            let path = config::out_path(&dir, &suffixed(name, ckpt_name, multi));
            write_embedding_csv(&path, &z_query, Some(&query.labels))?;
            println!("wrote {}", path.display());
        }
        if let Some(name) = &eval.heatmap_out {
            let path = config::out_path(&dir, &suffixed(name, ckpt_name, multi));
            write_matrix_csv(&path, &report.heatmap)?;
            println!("wrote {}", path.display());
        }

        report_text.push_str(&format!("# checkpoint: {ckpt_name}\n"));
        report_text.push_str(&report.to_text());
        report_text.push('\n');
        println!(
            "{ckpt_name}: knn {knn_accuracy:.4}, probe {probe_accuracy:.4}, align {alignment:.4}"
        );
    }

    let report_path = config::out_path(&dir, report_name);
    std::fs::write(&report_path, &report_text)
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", report_path.display())))?;
    println!("wrote {}", report_path.display());
    Ok(())
}

pub(crate) fn metric(m: MetricName) -> KnnMetric {
    match m {
        MetricName::Cosine => KnnMetric::Cosine,
        MetricName::Euclidean => KnnMetric::Euclidean,
    }
}

pub(crate) fn weighting(w: WeightingName) -> KnnWeighting {
    match w {
        WeightingName::Uniform => KnnWeighting::Uniform,
        WeightingName::CosineWeighted => KnnWeighting::CosineWeighted,
    }
}

fn center(c: CenterName) -> OrderCenter {
    match c {
        CenterName::Origin => OrderCenter::Origin,
        CenterName::Centroid => OrderCenter::Centroid,
    }
}

/// Uniformity of the sphere-projected class means: the smallest pairwise
/// angle in degrees (larger = more spread) and the worst deviation of any
/// pairwise cosine from the equiangular value −1/(m−1).
fn uniformity_of(means: &Matrix) -> Result<(f64, f64), CliError> {
    let m = means.rows();
    if m < 2 {
        return Err(CliError::config("uniformity needs at least 2 classes"));
    }
    let mut unit = means.clone();
    for i in 0..m {
        let n = norm2(unit.row(i));
        if n == 0.0 || !n.is_finite() {
            return Err(CliError::config(format!("class mean {i} has norm {n}")));
        }
        for v in unit.row_mut(i) {
            *v /= n;
        }
    }
    let target = -1.0 / (m as f64 - 1.0);
    let mut min_angle = f64::INFINITY;
    let mut worst_dev = 0.0f64;
    for a in 0..m {
        for b in (a + 1)..m {
            let c = dot(unit.row(a), unit.row(b)).clamp(-1.0, 1.0);
            min_angle = min_angle.min(c.acos().to_degrees());
            worst_dev = worst_dev.max((c - target).abs());
        }
    }
    Ok((min_angle, worst_dev))
}

fn suffixed(name: &str, ckpt: &str, multi: bool) -> String {
    if !multi {
        return name.to_string();
    }
    let ckpt_stem = std::path::Path::new(ckpt)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("ckpt");
    match name.rsplit_once('.') {
        Some((stem, ext)) => format!("{stem}-{ckpt_stem}.{ext}"),
        None => format!("{name}-{ckpt_stem}"),
    }
}
