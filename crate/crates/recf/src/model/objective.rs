//! The reduced least-squares objective, its exact gradients with respect
//! to the factor matrices, and the (optionally backtracking) descent
//! step.

use nalgebra::DMatrix;

use crate::embedding::DescriptionMatrix;
use crate::error::{Error, Result};

use super::{HybridModel, SparseLabels, SparseRatings};

/// Value of the masked objective
/// `1/2 ||X.(R - U B_R V')||^2 + lambda_l/2 ||Y.(L - U B_L V')||^2
///  + lambda_c/2 ||Z.(C - V W_C)||^2`.
///
/// Ridge penalties on `B_R`, `B_L`, `W_C` belong to the subproblem
/// solvers, not to this loss.
pub fn objective(
    model: &HybridModel,
    ratings: &SparseRatings,
    labels: &SparseLabels,
    c: &DescriptionMatrix,
    lambda_l: f64,
    lambda_c: f64,
) -> Result<f64> {
    check_shapes(model, ratings, labels, c)?;
    Ok(objective_parts(
        model.user_factors(),
        model.item_factors(),
        model.bridge_ratings(),
        model.bridge_labels(),
        model.projection(),
        ratings.entries(),
        &labels.numeric_entries(),
        c,
        lambda_l,
        lambda_c,
    ))
}

/// Gradient of [`objective`] with respect to `U` (rating and label terms;
/// the description term does not involve `U`).
pub fn grad_u(
    model: &HybridModel,
    ratings: &SparseRatings,
    labels: &SparseLabels,
    lambda_l: f64,
) -> Result<DMatrix<f64>> {
    if ratings.n_users() != model.n_users()
        || ratings.n_items() != model.n_items()
        || labels.n_users() != model.n_users()
        || labels.n_items() != model.n_items()
    {
        return Err(Error::DimensionMismatch("grad_u input shapes".into()));
    }
    Ok(grad_u_parts(
        model.user_factors(),
        model.item_factors(),
        model.bridge_ratings(),
        model.bridge_labels(),
        ratings.entries(),
        &labels.numeric_entries(),
        lambda_l,
    ))
}

/// Gradient of [`objective`] with respect to `V` (all three terms).
pub fn grad_v(
    model: &HybridModel,
    ratings: &SparseRatings,
    labels: &SparseLabels,
    c: &DescriptionMatrix,
    lambda_l: f64,
    lambda_c: f64,
) -> Result<DMatrix<f64>> {
    check_shapes(model, ratings, labels, c)?;
    Ok(grad_v_parts(
        model.user_factors(),
        model.item_factors(),
        model.bridge_ratings(),
        model.bridge_labels(),
        model.projection(),
        ratings.entries(),
        &labels.numeric_entries(),
        c,
        lambda_l,
        lambda_c,
    ))
}

fn check_shapes(
    model: &HybridModel,
    ratings: &SparseRatings,
    labels: &SparseLabels,
    c: &DescriptionMatrix,
) -> Result<()> {
    let (n, m) = (model.n_users(), model.n_items());
    if ratings.n_users() != n
        || ratings.n_items() != m
        || labels.n_users() != n
        || labels.n_items() != m
        || c.n_items() != m
        || c.dim() != model.description_dim()
    {
        return Err(Error::DimensionMismatch(format!(
            "model is {n} x {m} with e = {}, data is {} x {} / {} x {} / {} items x {}",
            model.description_dim(),
            ratings.n_users(),
            ratings.n_items(),
            labels.n_users(),
            labels.n_items(),
            c.n_items(),
            c.dim()
        )));
    }
    Ok(())
}

/// Residual of one observed cell against `A B A2'` evaluated row-wise.
#[inline]
fn bilinear(u: &DMatrix<f64>, b: &DMatrix<f64>, v: &DMatrix<f64>, uu: usize, vv: usize) -> f64 {
    let d = u.ncols();
    let mut acc = 0.0;
    for j in 0..d {
        let mut t = 0.0;
        for k in 0..d {
            t += u[(uu, k)] * b[(k, j)];
        }
        acc += t * v[(vv, j)];
    }
    acc
}

#[allow(clippy::too_many_arguments)]
pub(super) fn objective_parts(
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    b_r: &DMatrix<f64>,
    b_l: &DMatrix<f64>,
    w_c: &DMatrix<f64>,
    ratings: &[(usize, usize, f64)],
    labels: &[(usize, usize, f64)],
    c: &DescriptionMatrix,
    lambda_l: f64,
    lambda_c: f64,
) -> f64 {
    let mut f = 0.0;
    for &(uu, vv, val) in ratings {
        let r = val - bilinear(u, b_r, v, uu, vv);
        f += 0.5 * r * r;
    }
    if lambda_l != 0.0 {
        for &(uu, vv, val) in labels {
            let r = val - bilinear(u, b_l, v, uu, vv);
            f += 0.5 * lambda_l * r * r;
        }
    }
    if lambda_c != 0.0 {
        let e = c.dim();
        let d = v.ncols();
        let rows = c.rows();
        for item in 0..c.n_items() {
            if !c.present(item) {
                continue;
            }
            for j in 0..e {
                let mut pred = 0.0;
                for k in 0..d {
                    pred += v[(item, k)] * w_c[(k, j)];
                }
                let r = rows[(item, j)] - pred;
                f += 0.5 * lambda_c * r * r;
            }
        }
    }
    f
}

pub(super) fn grad_u_parts(
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    b_r: &DMatrix<f64>,
    b_l: &DMatrix<f64>,
    ratings: &[(usize, usize, f64)],
    labels: &[(usize, usize, f64)],
    lambda_l: f64,
) -> DMatrix<f64> {
    let d = u.ncols();
    let mut grad = DMatrix::zeros(u.nrows(), d);
    // d/dU of the rating term: -(X.(R - U B_R V')) V B_R'; per entry the
    // row u picks up -resid * V_v B_R'.
    let vbr_t = v * b_r.transpose();
    for &(uu, vv, val) in ratings {
        let resid = val - bilinear(u, b_r, v, uu, vv);
        for k in 0..d {
            grad[(uu, k)] -= resid * vbr_t[(vv, k)];
        }
    }
    if lambda_l != 0.0 {
        let vbl_t = v * b_l.transpose();
        for &(uu, vv, val) in labels {
            let resid = val - bilinear(u, b_l, v, uu, vv);
            for k in 0..d {
                grad[(uu, k)] -= lambda_l * resid * vbl_t[(vv, k)];
            }
        }
    }
    grad
}

#[allow(clippy::too_many_arguments)]
pub(super) fn grad_v_parts(
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    b_r: &DMatrix<f64>,
    b_l: &DMatrix<f64>,
    w_c: &DMatrix<f64>,
    ratings: &[(usize, usize, f64)],
    labels: &[(usize, usize, f64)],
    c: &DescriptionMatrix,
    lambda_l: f64,
    lambda_c: f64,
) -> DMatrix<f64> {
    let d = v.ncols();
    let mut grad = DMatrix::zeros(v.nrows(), d);
    let ubr = u * b_r;
    for &(uu, vv, val) in ratings {
        let resid = val - bilinear(u, b_r, v, uu, vv);
        for k in 0..d {
            grad[(vv, k)] -= resid * ubr[(uu, k)];
        }
    }
    if lambda_l != 0.0 {
        let ubl = u * b_l;
        for &(uu, vv, val) in labels {
            let resid = val - bilinear(u, b_l, v, uu, vv);
            for k in 0..d {
                grad[(vv, k)] -= lambda_l * resid * ubl[(uu, k)];
            }
        }
    }
    if lambda_c != 0.0 {
        let e = c.dim();
        let rows = c.rows();
        for item in 0..c.n_items() {
            if !c.present(item) {
                continue;
            }
            for j in 0..e {
                let mut pred = 0.0;
                for k in 0..d {
                    pred += v[(item, k)] * w_c[(k, j)];
                }
                let resid = rows[(item, j)] - pred;
                for k in 0..d {
                    grad[(item, k)] -= lambda_c * resid * w_c[(k, j)];
                }
            }
        }
    }
    grad
}

/// Plain descent step `X - gamma * grad`.
pub fn update_factor(x: &DMatrix<f64>, grad: &DMatrix<f64>, gamma: f64) -> DMatrix<f64> {
    debug_assert_eq!(x.shape(), grad.shape());
    x - gamma * grad
}

/// Descent step with backtracking: halve `gamma` (at most 20 times)
/// until `objective` does not increase. Returns the new point and its
/// objective value, or `None` when every tried step increased the
/// objective — the caller should keep `x` and treat the factor as
/// converged.
pub fn update_factor_backtracking<F>(
    x: &DMatrix<f64>,
    grad: &DMatrix<f64>,
    gamma: f64,
    current: f64,
    objective: F,
) -> Option<(DMatrix<f64>, f64)>
where
    F: Fn(&DMatrix<f64>) -> f64,
{
    let mut step = gamma;
    for _ in 0..=20 {
        let candidate = update_factor(x, grad, step);
        let f = objective(&candidate);
        if f <= current {
            return Some((candidate, f));
        }
        step *= 0.5;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::test_support::random_instance;
    use crate::model::RatingScale;
    use nalgebra::dmatrix;

    /// Fully naive re-evaluation of the objective: explicit loops over
    /// every cell and every index, no shared subexpressions.
    #[allow(clippy::too_many_arguments)]
    fn objective_naive(
        u: &DMatrix<f64>,
        v: &DMatrix<f64>,
        b_r: &DMatrix<f64>,
        b_l: &DMatrix<f64>,
        w_c: &DMatrix<f64>,
        ratings: &[(usize, usize, f64)],
        labels: &[(usize, usize, f64)],
        c: &DescriptionMatrix,
        lambda_l: f64,
        lambda_c: f64,
    ) -> f64 {
        let d = u.ncols();
        let e = w_c.ncols();
        let mut total = 0.0;
        for &(uu, vv, val) in ratings {
            let mut pred = 0.0;
            for i in 0..d {
                for j in 0..d {
                    pred += u[(uu, i)] * b_r[(i, j)] * v[(vv, j)];
                }
            }
            total += 0.5 * (val - pred) * (val - pred);
        }
        for &(uu, vv, val) in labels {
            let mut pred = 0.0;
            for i in 0..d {
                for j in 0..d {
                    pred += u[(uu, i)] * b_l[(i, j)] * v[(vv, j)];
                }
            }
            total += 0.5 * lambda_l * (val - pred) * (val - pred);
        }
        for item in 0..c.n_items() {
            if !c.present(item) {
                continue;
            }
            for j in 0..e {
                let mut pred = 0.0;
                for k in 0..d {
                    pred += v[(item, k)] * w_c[(k, j)];
                }
                let r = c.rows()[(item, j)] - pred;
                total += 0.5 * lambda_c * r * r;
            }
        }
        total
    }

    #[test]
    fn objective_zero_residuals() {
        // Construct data exactly from the model so every residual is 0.
        let inst = random_instance(1, 5, 4, 2, 3);
        let ratings: Vec<(usize, usize, f64)> = inst
            .ratings
            .iter()
            .map(|&(u, v, _)| (u, v, bilinear(&inst.u, &inst.b_r, &inst.v, u, v)))
            .collect();
        let labels: Vec<(usize, usize, f64)> = inst
            .labels
            .iter()
            .map(|&(u, v, _)| (u, v, bilinear(&inst.u, &inst.b_l, &inst.v, u, v)))
            .collect();
        let mut rows = inst.c.rows().clone();
        for item in 0..4 {
            for j in 0..3 {
                let mut pred = 0.0;
                for k in 0..2 {
                    pred += inst.v[(item, k)] * inst.w_c[(k, j)];
                }
                rows[(item, j)] = pred;
            }
        }
        let present: Vec<bool> = (0..4).map(|i| inst.c.present(i)).collect();
        let c = DescriptionMatrix::from_rows(rows, present).unwrap();
        let f = objective_parts(
            &inst.u, &inst.v, &inst.b_r, &inst.b_l, &inst.w_c, &ratings, &labels, &c, 0.7, 1.3,
        );
        assert!(f.abs() < 1e-18);
    }

    #[test]
    fn objective_single_residual() {
        let eye = DMatrix::<f64>::identity(2, 2);
        // One observed rating of 3 predicted as 1: residual 2, f = 2.
        let u = dmatrix![1.0, 0.0; 0.0, 1.0];
        let c = DescriptionMatrix::empty(2, 1);
        let f = objective_parts(
            &u,
            &eye,
            &eye,
            &eye,
            &DMatrix::zeros(2, 1),
            &[(0, 0, 3.0)],
            &[],
            &c,
            0.0,
            0.0,
        );
        assert!((f - 2.0).abs() < 1e-15);
    }

    #[test]
    fn objective_matches_naive_oracle() {
        for seed in 200..210 {
            let inst = random_instance(seed, 6, 5, 2, 3);
            let fast = objective_parts(
                &inst.u, &inst.v, &inst.b_r, &inst.b_l, &inst.w_c, &inst.ratings,
                &inst.labels, &inst.c, 0.4, 1.7,
            );
            let naive = objective_naive(
                &inst.u, &inst.v, &inst.b_r, &inst.b_l, &inst.w_c, &inst.ratings,
                &inst.labels, &inst.c, 0.4, 1.7,
            );
            assert!(
                (fast - naive).abs() < 1e-10 * naive.abs().max(1.0),
                "seed {seed}: {fast} vs {naive}"
            );
        }
    }

    #[test]
    fn objective_public_checks_dimensions() {
        let inst = random_instance(3, 4, 3, 2, 2);
        let model = HybridModel::new(
            inst.u.clone(),
            inst.v.clone(),
            inst.b_r.clone(),
            inst.b_l.clone(),
            inst.w_c.clone(),
        )
        .unwrap();
        let ratings =
            SparseRatings::new(9, 9, vec![(0, 0, 3.0)], RatingScale::one_to_five()).unwrap();
        let labels = SparseLabels::new(4, 3, vec![]).unwrap();
        assert!(matches!(
            objective(&model, &ratings, &labels, &inst.c, 0.2, 1.0),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn gradients_vanish_at_zero_residuals() {
        let inst = random_instance(11, 5, 4, 2, 3);
        let ratings: Vec<(usize, usize, f64)> = inst
            .ratings
            .iter()
            .map(|&(u, v, _)| (u, v, bilinear(&inst.u, &inst.b_r, &inst.v, u, v)))
            .collect();
        let gu = grad_u_parts(&inst.u, &inst.v, &inst.b_r, &inst.b_l, &ratings, &[], 0.0);
        assert!(gu.norm() < 1e-12);
    }

    #[test]
    fn grad_u_single_cell_chain_rule() {
        let inst = random_instance(13, 4, 3, 2, 2);
        let observed = vec![(1usize, 2usize, 4.0f64)];
        let gu = grad_u_parts(&inst.u, &inst.v, &inst.b_r, &inst.b_l, &observed, &[], 0.0);
        let resid = 4.0 - bilinear(&inst.u, &inst.b_r, &inst.v, 1, 2);
        let vbr_t = &inst.v * inst.b_r.transpose();
        for k in 0..2 {
            let expect = -resid * vbr_t[(2, k)];
            assert!((gu[(1, k)] - expect).abs() < 1e-12);
        }
        for row in [0usize, 2, 3] {
            for k in 0..2 {
                assert_eq!(gu[(row, k)], 0.0);
            }
        }
    }

    fn fd_check(seed: u64, n: usize, m: usize, d: usize, e: usize) {
        let h = 1e-5;
        let inst = random_instance(seed, n, m, d, e);
        let (ll, lc) = (0.3, 0.9);
        let f = |u: &DMatrix<f64>, v: &DMatrix<f64>| {
            objective_parts(
                u, v, &inst.b_r, &inst.b_l, &inst.w_c, &inst.ratings, &inst.labels,
                &inst.c, ll, lc,
            )
        };

        let gu = grad_u_parts(
            &inst.u, &inst.v, &inst.b_r, &inst.b_l, &inst.ratings, &inst.labels, ll,
        );
        let mut fd_u = DMatrix::zeros(n, d);
        for i in 0..n {
            for j in 0..d {
                let mut up = inst.u.clone();
                let mut dn = inst.u.clone();
                up[(i, j)] += h;
                dn[(i, j)] -= h;
                fd_u[(i, j)] = (f(&up, &inst.v) - f(&dn, &inst.v)) / (2.0 * h);
            }
        }
        let rel_u = (&gu - &fd_u).norm() / fd_u.norm().max(1e-12);
        assert!(rel_u < 1e-5, "seed {seed}: grad_u relative error {rel_u}");

        let gv = grad_v_parts(
            &inst.u, &inst.v, &inst.b_r, &inst.b_l, &inst.w_c, &inst.ratings,
            &inst.labels, &inst.c, ll, lc,
        );
        let mut fd_v = DMatrix::zeros(m, d);
        for i in 0..m {
            for j in 0..d {
                let mut up = inst.v.clone();
                let mut dn = inst.v.clone();
                up[(i, j)] += h;
                dn[(i, j)] -= h;
                fd_v[(i, j)] = (f(&inst.u, &up) - f(&inst.u, &dn)) / (2.0 * h);
            }
        }
        let rel_v = (&gv - &fd_v).norm() / fd_v.norm().max(1e-12);
        assert!(rel_v < 1e-5, "seed {seed}: grad_v relative error {rel_v}");
    }

    #[test]
    fn gradients_match_central_differences() {
        for seed in 300..320 {
            fd_check(seed, 6, 5, 2, 3);
        }
        fd_check(400, 8, 7, 3, 4);
        fd_check(401, 3, 8, 3, 2);
    }

    #[test]
    fn missing_description_rows_do_not_touch_gradient() {
        let inst = random_instance(17, 5, 4, 2, 3);
        let mut rows = inst.c.rows().clone();
        let present: Vec<bool> = (0..4).map(|i| inst.c.present(i)).collect();
        for (item, &p) in present.iter().enumerate() {
            if !p {
                for j in 0..3 {
                    rows[(item, j)] = -4e8;
                }
            }
        }
        let poisoned = DescriptionMatrix::from_rows(rows, present).unwrap();
        let g1 = grad_v_parts(
            &inst.u, &inst.v, &inst.b_r, &inst.b_l, &inst.w_c, &inst.ratings,
            &inst.labels, &inst.c, 0.2, 2.5,
        );
        let g2 = grad_v_parts(
            &inst.u, &inst.v, &inst.b_r, &inst.b_l, &inst.w_c, &inst.ratings,
            &inst.labels, &poisoned, 0.2, 2.5,
        );
        assert_eq!(g1, g2);
        let f1 = objective_parts(
            &inst.u, &inst.v, &inst.b_r, &inst.b_l, &inst.w_c, &inst.ratings,
            &inst.labels, &inst.c, 0.2, 2.5,
        );
        let f2 = objective_parts(
            &inst.u, &inst.v, &inst.b_r, &inst.b_l, &inst.w_c, &inst.ratings,
            &inst.labels, &poisoned, 0.2, 2.5,
        );
        assert_eq!(f1, f2);
    }

    #[test]
    fn update_zero_gradient_is_identity() {
        let x = dmatrix![1.0, 2.0; 3.0, 4.0];
        let z = DMatrix::zeros(2, 2);
        assert_eq!(update_factor(&x, &z, 0.5), x);
    }

    #[test]
    fn update_zero_gamma_is_identity() {
        let x = dmatrix![1.0, 2.0; 3.0, 4.0];
        let g = dmatrix![5.0, 5.0; 5.0, 5.0];
        assert_eq!(update_factor(&x, &g, 0.0), x);
    }

    #[test]
    fn update_quadratic_analytic_step() {
        // f(x) = x^2 / 2, grad = x; from x = 1 with gamma = 0.5 -> 0.5.
        let x = dmatrix![1.0];
        let g = dmatrix![1.0];
        let next = update_factor(&x, &g, 0.5);
        assert_eq!(next[(0, 0)], 0.5);
    }

    #[test]
    fn backtracking_halves_until_non_increasing() {
        // Same quadratic; a wild step of 100 overshoots until halved to
        // 1.5625 (f(-0.5625) < f(1)).
        let x = dmatrix![1.0];
        let quad = |m: &DMatrix<f64>| 0.5 * m[(0, 0)] * m[(0, 0)];
        let g = dmatrix![1.0];
        let (next, f) = update_factor_backtracking(&x, &g, 100.0, quad(&x), quad).unwrap();
        assert!(f <= quad(&x));
        assert!(next[(0, 0)].abs() < 1.0);
    }

    #[test]
    fn backtracking_gives_up_when_no_step_helps() {
        // Objective that punishes any move away from x.
        let x = dmatrix![1.0];
        let g = dmatrix![1.0];
        let spiky = |m: &DMatrix<f64>| {
            if (m[(0, 0)] - 1.0).abs() < 1e-300 {
                0.0
            } else {
                1.0
            }
        };
        assert!(update_factor_backtracking(&x, &g, 1.0, 0.0, spiky).is_none());
    }
}
