//! Nonparametric embedding optimization: descend [`kl_match`] directly on a
//! free feature matrix Z, plus the closed-form maximal-separation references
//! (regular polygon, regular simplex) that the optimized configurations are
//! measured against.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{kl_match, kl_match_grad};
use crate::numkit::{dot, norm2, Matrix, OptKind, OptimizerState, RngState};
use crate::similarity::{QBuilder, SimMatrix};

/// Where the optimized features are allowed to live.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    /// Rows renormalized to unit length after every update.
    Sphere,
    /// Unconstrained flat space.
    Euclidean,
}

/// Renormalize every row of Z to unit length. Errors on a zero row, which
/// has no direction to preserve.
pub fn project_sphere(z: &Matrix) -> Result<Matrix> {
    let mut out = z.clone();
    for i in 0..out.rows() {
        let n = norm2(out.row(i));
        if n == 0.0 {
            return Err(Error::arg(
                "project_sphere",
                "z",
                format!("row {i} is the zero vector"),
            ));
        }
        if !n.is_finite() {
            return Err(Error::non_finite("project_sphere", format!("row {i} has norm {n}")));
        }
        for v in out.row_mut(i) {
            *v /= n;
        }
    }
    Ok(out)
}

/// Minimize kl_match(P, Q(Z)) over Z by gradient descent with heavy-ball
/// momentum, rows initialized i.i.d. N(0, 10⁻²·I). Under
/// [`Constraint::Sphere`] every row is renormalized after every update.
///
/// Returns the final Z and the loss recorded after each of the `steps`
/// updates. A non-finite loss or gradient aborts with the offending step in
/// the error.
pub fn optimize_embedding(
    p: &SimMatrix,
    d_z: usize,
    q_builder: &QBuilder,
    constraint: Constraint,
    steps: usize,
    lr: f64,
    momentum: f64,
    rng: &mut RngState,
) -> Result<(Matrix, Vec<f64>)> {
    if p.n() < 2 {
        return Err(Error::dim("optimize_embedding", "P must cover at least 2 items"));
    }
    if d_z == 0 {
        return Err(Error::arg("optimize_embedding", "d_z", "must be ≥ 1"));
    }
    if steps == 0 {
        return Err(Error::arg("optimize_embedding", "steps", "must be ≥ 1"));
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::arg("optimize_embedding", "lr", format!("{lr} must be > 0")));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::arg(
            "optimize_embedding",
            "momentum",
            format!("{momentum} must lie in [0, 1)"),
        ));
    }

    let n = p.n();
    let mut z = Matrix::zeros(n, d_z);
    for v in z.data_mut() {
        *v = 0.1 * rng.gaussian();
    }
    if constraint == Constraint::Sphere {
        z = project_sphere(&z)?;
    }

    let mut opt = OptimizerState::new(
        OptKind::SgdMomentum { momentum },
        lr,
        0.0,
        &[n * d_z],
    )?;
    let mut history = Vec::with_capacity(steps);
    for step in 0..steps {
        let grad = kl_match_grad(p, &z, q_builder)
            .map_err(|e| diverged(step, format!("gradient failed: {e}")))?;
        opt.step(&mut [z.data_mut()], &[grad.data()])
            .map_err(|e| diverged(step, format!("update failed: {e}")))?;
        if constraint == Constraint::Sphere {
            z = project_sphere(&z).map_err(|e| diverged(step, format!("projection failed: {e}")))?;
        }
        let q = q_builder
            .build(&z)
            .map_err(|e| diverged(step, format!("Q became invalid: {e}")))?;
        let loss = kl_match(p, &q).map_err(|e| diverged(step, format!("loss failed: {e}")))?;
        if !loss.is_finite() {
            return Err(diverged(step, format!("loss {loss}")));
        }
        history.push(loss);
    }
    Ok((z, history))
}

fn diverged(step: usize, detail: String) -> Error {
    Error::non_finite("optimize_embedding", format!("diverged at step {step}: {detail}"))
}

/// Closed-form maximal-separation configuration on the unit sphere of
/// R^{d_z}: for d_z = 2, the regular n-gon; for n ≤ d_z + 1, the regular
/// (n−1)-simplex, whose pairwise cosines are all −1/(n−1). No general
/// solver is provided — other (n, d_z) combinations error.
pub fn tammes_closed_form(n: usize, d_z: usize) -> Result<Matrix> {
    if n < 2 {
        return Err(Error::arg("tammes_closed_form", "n", "need at least 2 points"));
    }
    if d_z == 2 {
        let mut z = Matrix::zeros(n, 2);
        for k in 0..n {
            let theta = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            z.set(k, 0, theta.cos());
            z.set(k, 1, theta.sin());
        }
        return Ok(z);
    }
    if n <= d_z + 1 {
        return Ok(simplex_vertices(n, d_z));
    }
    Err(Error::arg(
        "tammes_closed_form",
        "n",
        format!("no closed form for {n} points in {d_z} dimensions (need d_z = 2 or n ≤ d_z + 1)"),
    ))
}

/// Vertices of a regular (n−1)-simplex inscribed in the unit sphere,
/// padded with zeros to d_z columns (requires d_z ≥ n−1).
///
/// Construction: center the n standard basis vectors of R^n at their mean
/// and express them in the orthonormal basis of the sum-zero subspace whose
/// k-th vector is (1,…,1,−k,0,…,0)/√(k(k+1)) with k leading ones. Vertex i
/// then has coordinates √(n/(n−1))·h_k[i], giving ⟨v_i,v_j⟩ = −1/(n−1)
/// exactly.
fn simplex_vertices(n: usize, d_z: usize) -> Matrix {
    let mut z = Matrix::zeros(n, d_z);
    let scale = (n as f64 / (n as f64 - 1.0)).sqrt();
    for k in 1..n {
        let denom = (k as f64 * (k + 1) as f64).sqrt();
        for i in 0..n {
            let h = if i < k {
                1.0 / denom
            } else if i == k {
                -(k as f64) / denom
            } else {
                0.0
            };
            z.set(i, k - 1, scale * h);
        }
    }
    z
}

/// How evenly a unit-row configuration covers the sphere, summarized by
/// the two quantities the simplex makes extremal:
/// the minimum pairwise angle in degrees, and the maximum deviation
/// |cos(z_i, z_j) + 1/(n−1)| from the simplex cosine.
pub fn uniformity_score(z: &Matrix) -> Result<(f64, f64)> {
    let n = z.rows();
    if n < 2 {
        return Err(Error::dim("uniformity_score", "need at least 2 points"));
    }
    for i in 0..n {
        let norm = norm2(z.row(i));
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::arg(
                "uniformity_score",
                "z",
                format!("row {i} has norm {norm}; rows must be unit vectors"),
            ));
        }
    }
    let target = -1.0 / (n as f64 - 1.0);
    let mut min_angle = f64::INFINITY;
    let mut max_dev: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let c = dot(z.row(i), z.row(j)).clamp(-1.0, 1.0);
            min_angle = min_angle.min(c.acos().to_degrees());
            max_dev = max_dev.max((c - target).abs());
        }
    }
    Ok((min_angle, max_dev))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::{p_positive_pairs, p_sne_conditional, Bandwidths, MatrixKind, SimKind};

    #[test]
    fn project_sphere_examples() {
        let unit = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, -1.0]).unwrap();
        let out = project_sphere(&unit).unwrap();
        assert_eq!(out, unit);

        let z = Matrix::from_vec(1, 2, vec![3.0, 4.0]).unwrap();
        let out = project_sphere(&z).unwrap();
        assert!((out.get(0, 0) - 0.6).abs() < 1e-15);
        assert!((out.get(0, 1) - 0.8).abs() < 1e-15);

        let zero = Matrix::zeros(2, 3);
        assert!(project_sphere(&zero).is_err());
    }

    #[test]
    fn two_points_antipodal() {
        let z = tammes_closed_form(2, 2).unwrap();
        let c = dot(z.row(0), z.row(1));
        assert!((c + 1.0).abs() < 1e-12);
        // And via the simplex branch in 1D.
        let z = tammes_closed_form(2, 1).unwrap();
        assert!((dot(z.row(0), z.row(1)) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn tetrahedron_cosines_are_exactly_minus_third() {
        let z = tammes_closed_form(4, 3).unwrap();
        for i in 0..4 {
            assert!((norm2(z.row(i)) - 1.0).abs() < 1e-12, "row {i} not unit");
            for j in (i + 1)..4 {
                let c = dot(z.row(i), z.row(j));
                assert!((c + 1.0 / 3.0).abs() < 1e-12, "cos({i},{j}) = {c}");
            }
        }
    }

    #[test]
    fn simplex_branch_works_up_to_the_dimension_bound() {
        for (n, d_z) in [(3usize, 5usize), (5, 4), (8, 7)] {
            let z = tammes_closed_form(n, d_z).unwrap();
            let target = -1.0 / (n as f64 - 1.0);
            for i in 0..n {
                assert!((norm2(z.row(i)) - 1.0).abs() < 1e-12);
                for j in (i + 1)..n {
                    assert!((dot(z.row(i), z.row(j)) - target).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn pentagon_has_72_degree_gaps() {
        let z = tammes_closed_form(5, 2).unwrap();
        let mut angles: Vec<f64> = (0..5)
            .map(|i| z.get(i, 1).atan2(z.get(i, 0)).to_degrees().rem_euclid(360.0))
            .collect();
        angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for k in 0..5 {
            let gap = if k + 1 < 5 {
                angles[k + 1] - angles[k]
            } else {
                360.0 - angles[4] + angles[0]
            };
            assert!((gap - 72.0).abs() < 1e-9, "gap {gap}");
        }
    }

    #[test]
    fn unsupported_combinations_error() {
        assert!(tammes_closed_form(5, 3).is_err());
        assert!(tammes_closed_form(10, 4).is_err());
        assert!(tammes_closed_form(1, 2).is_err());
        assert!(tammes_closed_form(0, 2).is_err());
    }

    #[test]
    fn uniformity_score_on_reference_configs() {
        let (min_angle, dev) = uniformity_score(&tammes_closed_form(4, 3).unwrap()).unwrap();
        assert!(dev < 1e-12);
        assert!((min_angle - (-1.0f64 / 3.0).acos().to_degrees()).abs() < 1e-9);

        let (min_angle, _) = uniformity_score(&tammes_closed_form(5, 2).unwrap()).unwrap();
        assert!((min_angle - 72.0).abs() < 1e-9);

        let identical = Matrix::from_vec(3, 2, vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        let (min_angle, _) = uniformity_score(&identical).unwrap();
        assert_eq!(min_angle, 0.0);

        let off_sphere = Matrix::from_vec(2, 2, vec![2.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(uniformity_score(&off_sphere).is_err());
    }

    #[test]
    fn two_item_problem_is_solved_from_the_first_step() {
        // With only two items every row of Q is forced to put all its mass
        // on the other item, so a row-normalized P is matched exactly.
        let mut vals = Matrix::zeros(2, 2);
        vals.set(0, 1, 1.0);
        vals.set(1, 0, 1.0);
        let p = SimMatrix::new(vals, MatrixKind::Conditional).unwrap();
        let mut rng = RngState::new(7);
        let qb = QBuilder::GaussianConditional { sim_kind: SimKind::NegSqEuclidean, tau: 1.0 };
        let (z, history) =
            optimize_embedding(&p, 2, &qb, Constraint::Euclidean, 25, 0.1, 0.0, &mut rng).unwrap();
        assert!(history.iter().all(|l| l.abs() < 1e-12), "{history:?}");
        let q = qb.build(&z).unwrap();
        assert!((q.values().get(0, 1) - 1.0).abs() < 1e-12);
        assert!((q.values().get(1, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn aligned_pairs_on_sphere_settle_into_the_simplex() {
        // Four positive pairs, eight features, on S². The pair target merges
        // each pair; the merged classes then spread as far as the sphere
        // allows, which for 4 classes in R³ is the tetrahedron with
        // pairwise cosine −1/3.
        let p = p_positive_pairs(4).unwrap();
        let qb = QBuilder::GaussianConditional { sim_kind: SimKind::Cosine, tau: 0.5 };
        let mut rng = RngState::new(11);
        let (z, history) =
            optimize_embedding(&p, 3, &qb, Constraint::Sphere, 4000, 2.0, 0.9, &mut rng).unwrap();
        assert!(history.last().unwrap().is_finite());

        // Every row still on the sphere.
        for i in 0..8 {
            assert!((norm2(z.row(i)) - 1.0).abs() < 1e-12);
        }
        // Pairs aligned…
        let mut means = Vec::new();
        for i in 0..4 {
            let a = z.row(2 * i);
            let b = z.row(2 * i + 1);
            assert!(dot(a, b) > 0.99, "pair {i} cosine {}", dot(a, b));
            let mut m: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x + y) / 2.0).collect();
            let n = norm2(&m);
            for v in &mut m {
                *v /= n;
            }
            means.push(m);
        }
        // …and class means within 1e-2 of the simplex cosine.
        for i in 0..4 {
            for j in (i + 1)..4 {
                let c = dot(&means[i], &means[j]);
                assert!((c + 1.0 / 3.0).abs() < 1e-2, "classes {i},{j}: cosine {c}");
            }
        }
    }

    #[test]
    fn collinear_points_keep_their_betweenness() {
        let x = Matrix::from_vec(3, 1, vec![0.0, 1.0, 2.5]).unwrap();
        let p = p_sne_conditional(&x, &Bandwidths::Shared(1.0)).unwrap();
        let qb = QBuilder::GaussianConditional { sim_kind: SimKind::NegSqEuclidean, tau: 1.0 };
        let mut rng = RngState::new(13);
        let (z, history) =
            optimize_embedding(&p, 2, &qb, Constraint::Euclidean, 2000, 0.1, 0.9, &mut rng).unwrap();
        assert!(history.last().unwrap() < &history[0]);
        let d01 = crate::numkit::sq_dist(z.row(0), z.row(1));
        let d12 = crate::numkit::sq_dist(z.row(1), z.row(2));
        let d02 = crate::numkit::sq_dist(z.row(0), z.row(2));
        // Input order: d(0,1)=1 < d(1,2)=2.25 < d(0,2)=6.25.
        assert!(d01 < d12, "d01 {d01} vs d12 {d12}");
        assert!(d12 < d02, "d12 {d12} vs d02 {d02}");
    }

    #[test]
    fn same_seed_same_trajectory() {
        let p = p_positive_pairs(3).unwrap();
        let qb = QBuilder::GaussianConditional { sim_kind: SimKind::Cosine, tau: 1.0 };
        let run = || {
            let mut rng = RngState::new(99);
            optimize_embedding(&p, 2, &qb, Constraint::Sphere, 50, 0.5, 0.5, &mut rng).unwrap()
        };
        let (z1, h1) = run();
        let (z2, h2) = run();
        assert_eq!(z1, z2);
        assert_eq!(h1, h2);
    }

    #[test]
    fn small_step_descent_is_windowed_monotone_for_most_seeds() {
        // Plain projected descent can fluctuate locally; over 50-step
        // windows it should not climb, for at least 95% of seeds.
        let mut good = 0;
        let total = 40;
        for seed in 0..total {
            let mut rng = RngState::new(1000 + seed);
            let n = 4 + rng.below(13) as usize; // 4..=16
            let mut x = Matrix::zeros(n, 2);
            for v in x.data_mut() {
                *v = rng.gaussian();
            }
            let p = p_sne_conditional(&x, &Bandwidths::Shared(1.0)).unwrap();
            let qb = QBuilder::GaussianConditional { sim_kind: SimKind::NegSqEuclidean, tau: 1.0 };
            let (_, history) =
                optimize_embedding(&p, 2, &qb, Constraint::Euclidean, 300, 0.1, 0.0, &mut rng)
                    .unwrap();
            let ok = (0..history.len() - 49).all(|t| history[t + 49] <= history[t] + 1e-12);
            if ok {
                good += 1;
            }
        }
        assert!(good * 100 >= total * 95, "only {good}/{total} seeds windowed-monotone");
    }

    #[test]
    fn runaway_learning_rate_reports_the_step() {
        let x = Matrix::from_vec(4, 2, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let p = p_sne_conditional(&x, &Bandwidths::Shared(1.0)).unwrap();
        let qb = QBuilder::GaussianConditional { sim_kind: SimKind::InnerProduct, tau: 1e-3 };
        let mut rng = RngState::new(5);
        let err = optimize_embedding(&p, 2, &qb, Constraint::Euclidean, 500, 1e12, 0.0, &mut rng)
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("step"), "{msg}");
    }

    #[test]
    fn bad_arguments_are_rejected() {
        let p = p_positive_pairs(2).unwrap();
        let qb = QBuilder::GaussianConditional { sim_kind: SimKind::Cosine, tau: 1.0 };
        let mut rng = RngState::new(1);
        assert!(optimize_embedding(&p, 0, &qb, Constraint::Sphere, 10, 0.1, 0.0, &mut rng).is_err());
        assert!(optimize_embedding(&p, 2, &qb, Constraint::Sphere, 0, 0.1, 0.0, &mut rng).is_err());
        assert!(optimize_embedding(&p, 2, &qb, Constraint::Sphere, 10, -0.1, 0.0, &mut rng).is_err());
        assert!(optimize_embedding(&p, 2, &qb, Constraint::Sphere, 10, 0.1, 1.0, &mut rng).is_err());
    }
}
