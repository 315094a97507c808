//! `csne verify` — run a named oracle suite and exit nonzero if any check
//! fails. Every suite is deterministic given `--seed`.

use csne_core::embedopt::{optimize_embedding, tammes_closed_form, Constraint};
use csne_core::evaltheory::{
    ce_decomposition_check, equivalence_check, rearrangement_oracle, theorem1_oracle,
};
use csne_core::losses::{loss_grad, loss_value, LossAux, LossKind, LossSpec};
use csne_core::numkit::{dot, finite_diff_grad, norm2, Matrix};
use csne_core::similarity::{p_positive_pairs, p_sne_conditional, Bandwidths, QBuilder, SimKind};
use csne_core::RngState;

use crate::CliError;

pub fn run(suite: &str, trials: usize, seed: u64) -> Result<(), CliError> {
    let failures = match suite {
        "equivalence" => equivalence(seed)?,
        "theorem1" => theorem1(trials, seed)?,
        "rearrangement" => rearrangement(seed)?,
        "ce_decomposition" => ce_decomposition(seed)?,
        "gradients" => gradients(seed)?,
        "tammes" => tammes(seed)?,
        other => {
            return Err(CliError::usage(format!(
                "unknown suite {other:?} (expected equivalence | theorem1 | rearrangement | \
                 ce_decomposition | gradients | tammes)"
            )))
        }
    };
    if failures.is_empty() {
        println!("{suite}: all checks passed");
        Ok(())
    } else {
        Err(CliError::Verify(failures.join("\n")))
    }
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut RngState) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gaussian()).collect())
        .expect("shape matches data")
}

/// InfoNCE equals the KL matching objective up to ln(1/(2n)); the residual
/// must vanish identically for every feature draw.
fn equivalence(seed: u64) -> Result<Vec<String>, CliError> {
    let mut failures = Vec::new();
    for n in [2usize, 8, 64] {
        let mut worst = 0.0f64;
        for draw in 0..10u64 {
            let mut rng = RngState::new(seed ^ (1000 * n as u64 + draw));
            worst = worst.max(equivalence_check(n, &mut rng)?);
        }
        let ok = worst < 1e-10;
        println!("equivalence n={n}: worst residual {worst:.3e} over 10 draws ... {}", tag(ok));
        if !ok {
            failures.push(format!("equivalence n={n}: residual {worst:.3e} >= 1e-10"));
        }
    }
    Ok(failures)
}

/// The matching-matrix argmin and the squared-Frobenius argmin select the
/// same permutations, and their difference is permutation-independent.
fn theorem1(trials: usize, seed: u64) -> Result<Vec<String>, CliError> {
    if trials == 0 {
        return Err(CliError::usage("--trials must be at least 1"));
    }
    let mut failures = Vec::new();
    let mut rng = RngState::new(seed.wrapping_add(2));
    let mut identical = 0usize;
    let mut worst_spread = 0.0f64;
    for t in 0..trials {
        let n = 3 + t % 3;
        let x = gaussian_matrix(n, 2, &mut rng);
        let z = gaussian_matrix(n, 2, &mut rng);
        let verdict = theorem1_oracle(&x, &z)?;
        worst_spread = worst_spread.max(verdict.const_spread);
        if verdict.identical && verdict.const_spread < 1e-9 {
            identical += 1;
        } else {
            failures.push(format!(
                "theorem1 trial {t} (n={n}): identical={}, const spread {:.3e}",
                verdict.identical, verdict.const_spread
            ));
        }
    }
    println!(
        "theorem1: {identical}/{trials} argmin sets identical, worst const spread \
         {worst_spread:.3e} ... {}",
        tag(identical == trials)
    );
    Ok(failures)
}

/// The identity permutation minimizes both the ratio sum and the squared
/// distance sum for ascending positive sequences.
fn rearrangement(seed: u64) -> Result<Vec<String>, CliError> {
    let mut failures = Vec::new();
    let mut rng = RngState::new(seed.wrapping_add(3));
    let mut held = 0usize;
    let total = 50usize;
    for t in 0..total {
        let m = 3 + t % 2;
        let x = ascending_unit(m, &mut rng);
        let y = ascending_unit(m, &mut rng);
        let verdict = rearrangement_oracle(&x, &y)?;
        if verdict.holds() {
            held += 1;
        } else {
            failures.push(format!("rearrangement trial {t} (m={m}): identity not optimal"));
        }
    }
    println!("rearrangement: identity optimal in {held}/{total} ... {}", tag(held == total));
    Ok(failures)
}

/// Strictly ascending positives with unit sum of squares.
fn ascending_unit(m: usize, rng: &mut RngState) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..m).map(|_| rng.gaussian().abs() + 0.05).collect();
        v.sort_by(|a, b| a.partial_cmp(b).expect("finite draws"));
        if v.windows(2).any(|w| w[1] - w[0] < 1e-6) {
            continue;
        }
        let s = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in &mut v {
            *x /= s;
        }
        return v;
    }
}

/// The cross entropy splits into attraction + uniformity plus a residual
/// that does not depend on the features.
fn ce_decomposition(seed: u64) -> Result<Vec<String>, CliError> {
    let mut rng = RngState::new(seed.wrapping_add(4));
    let cells = 32;
    let mut p_x: Vec<f64> = (0..cells).map(|_| rng.uniform_in(0.1, 1.0)).collect();
    let total: f64 = p_x.iter().sum();
    for v in &mut p_x {
        *v /= total;
    }
    let mut p_cond = Matrix::zeros(cells, cells);
    for i in 0..cells {
        let mut row: Vec<f64> = (0..cells).map(|_| rng.uniform_in(0.1, 1.0)).collect();
        let s: f64 = row.iter().sum();
        for v in &mut row {
            *v /= s;
        }
        for (j, v) in row.iter().enumerate() {
            p_cond.set(i, j, *v);
        }
    }
    let spread = ce_decomposition_check(&p_x, &p_cond, 5, 2, &mut rng)?;
    let ok = spread < 1e-8;
    println!("ce_decomposition: residual spread {spread:.3e} over 5 feature draws ... {}", tag(ok));
    if ok {
        Ok(Vec::new())
    } else {
        Ok(vec![format!("ce_decomposition: spread {spread:.3e} >= 1e-8")])
    }
}

/// Central finite differences against every loss's analytic gradient.
fn gradients(seed: u64) -> Result<Vec<String>, CliError> {
    let mut failures = Vec::new();
    let specs: [(&str, LossSpec, usize); 6] = [
        ("infonce/cosine", LossSpec::infonce(0.5, SimKind::Cosine), 3),
        ("infonce/neg_sq_euclidean", LossSpec::infonce(1.0, SimKind::NegSqEuclidean), 2),
        ("infonce_unnormalized", LossSpec::infonce_unnormalized(0.7), 2),
        ("infonce_weighted", LossSpec::infonce_weighted(0.5, SimKind::Cosine), 3),
        ("t_simclr/df5", LossSpec::t_simclr(5.0, 0.5), 3),
        ("t_simclr/df1", LossSpec::t_simclr(1.0, 1.0), 2),
    ];
    let n = 6;
    for (name, spec, d) in &specs {
        let mut worst = 0.0f64;
        for inst in 0..5u64 {
            let mut rng = RngState::new(seed ^ (7_000 + 31 * inst));
            let anchors = gaussian_matrix(n, *d, &mut rng);
            let views = gaussian_matrix(n, *d, &mut rng);
            let w: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
            let weights =
                if spec.kind == LossKind::InfoNceWeighted { Some(&w[..]) } else { None };
            let aux = LossAux { p: None, weights };
            let (ga, gv) = loss_grad(spec, &anchors, &views, aux)?;
            let analytic = Matrix::vstack(&[&ga, &gv])?;
            let stacked = Matrix::vstack(&[&anchors, &views])?;
            let numeric = finite_diff_grad(
                |m| {
                    let a = m.slice_rows(0, n);
                    let v = m.slice_rows(n, 2 * n);
                    loss_value(spec, &a, &v, aux)
                },
                &stacked,
                1e-4,
            )?;
            let rel = analytic.sub(&numeric)?.sq_sum().sqrt() / numeric.sq_sum().sqrt();
            worst = worst.max(rel);
        }
        let ok = worst < 1e-5;
        println!("gradients {name}: worst rel err {worst:.3e} over 5 instances ... {}", tag(ok));
        if !ok {
            failures.push(format!("gradients {name}: rel err {worst:.3e} >= 1e-5"));
        }
    }

    // The stack-based KL loss takes its target through aux and no views.
    let mut worst = 0.0f64;
    for inst in 0..5u64 {
        let mut rng = RngState::new(seed ^ (8_000 + 31 * inst));
        let x = gaussian_matrix(n, 3, &mut rng);
        let p = p_sne_conditional(&x, &Bandwidths::Shared(1.0))?;
        let z = gaussian_matrix(n, 2, &mut rng);
        let spec = LossSpec::sne_kl(0.8, SimKind::NegSqEuclidean);
        let aux = LossAux { p: Some(&p), weights: None };
        let empty = Matrix::zeros(0, 2);
        let (g, _) = loss_grad(&spec, &z, &empty, aux)?;
        let numeric = finite_diff_grad(|m| loss_value(&spec, m, &empty, aux), &z, 1e-4)?;
        let rel = g.sub(&numeric)?.sq_sum().sqrt() / numeric.sq_sum().sqrt();
        worst = worst.max(rel);
    }
    let ok = worst < 1e-5;
    println!("gradients sne_kl: worst rel err {worst:.3e} over 5 instances ... {}", tag(ok));
    if !ok {
        failures.push(format!("gradients sne_kl: rel err {worst:.3e} >= 1e-5"));
    }
    Ok(failures)
}

/// Closed-form maximal-separation references, then a from-scratch
/// optimization run that must land on the tetrahedron.
fn tammes(seed: u64) -> Result<Vec<String>, CliError> {
    let mut failures = Vec::new();

    for (n, d_z) in [(2usize, 1usize), (2, 3), (3, 2), (4, 3), (5, 4)] {
        let z = tammes_closed_form(n, d_z)?;
        let target = -1.0 / (n as f64 - 1.0);
        let mut worst = 0.0f64;
        for a in 0..n {
            for b in (a + 1)..n {
                worst = worst.max((dot(z.row(a), z.row(b)) - target).abs());
            }
        }
        let ok = worst <= 1e-12;
        println!(
            "tammes closed-form n={n} d_z={d_z}: worst |cos - ({target:.4})| = {worst:.3e} ... {}",
            tag(ok)
        );
        if !ok {
            failures.push(format!("tammes closed-form n={n} d_z={d_z}: {worst:.3e} > 1e-12"));
        }
    }

    // Four aligned pairs on S² must settle into the tetrahedron.
    let p = p_positive_pairs(4)?;
    let qb = QBuilder::GaussianConditional { sim_kind: SimKind::Cosine, tau: 0.5 };
    let mut rng = RngState::new(seed.wrapping_add(11));
    let (z, _) = optimize_embedding(&p, 3, &qb, Constraint::Sphere, 4000, 2.0, 0.9, &mut rng)?;
    let mut worst_pair = 1.0f64;
    let mut means = Vec::new();
    for i in 0..4 {
        let a = z.row(2 * i);
        let b = z.row(2 * i + 1);
        worst_pair = worst_pair.min(dot(a, b));
        let mut m: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x + y) / 2.0).collect();
        let nm = norm2(&m);
        for v in &mut m {
            *v /= nm;
        }
        means.push(m);
    }
    let mut worst_cos = 0.0f64;
    for i in 0..4 {
        for j in (i + 1)..4 {
            worst_cos = worst_cos.max((dot(&means[i], &means[j]) + 1.0 / 3.0).abs());
        }
    }
    let ok = worst_pair > 0.99 && worst_cos < 1e-2;
    println!(
        "tammes optimize n=4 d_z=3: worst pair cosine {worst_pair:.4}, worst |cos + 1/3| = \
         {worst_cos:.3e} ... {}",
        tag(ok)
    );
    if !ok {
        failures.push(format!(
            "tammes optimize: pair cosine {worst_pair:.4} (need > 0.99), dev {worst_cos:.3e} \
             (need < 1e-2)"
        ));
    }
    Ok(failures)
}

fn tag(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAIL"
    }
}
