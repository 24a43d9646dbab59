//! The EM-style fitting loop: gradient steps on `V` and `U`, exact
//! ridge solves for `B_R`, `B_L`, `W_C`, and the lambda_C schedules.

use nalgebra::DMatrix;

use crate::embedding::DescriptionMatrix;
use crate::error::Result;

use super::objective::{
    grad_u_parts, grad_v_parts, objective_parts, update_factor, update_factor_backtracking,
};
use super::solve::{init_factors, solve_bridge, solve_projection};
use super::{FitConfig, HybridModel, Schedule, SparseLabels, SparseRatings};

/// One fitting iteration as seen from outside: the lambda_C in force and
/// the regularized objective at the end of the iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    pub lambda_c: f64,
    /// Loss plus the ridge penalties on `B_R`, `B_L`, `W_C` — the
    /// quantity the loop drives downhill and tests for convergence.
    pub objective: f64,
}

/// Result of [`fit`].
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: HybridModel,
    pub trace: Vec<TraceRecord>,
    pub iterations: usize,
    pub converged: bool,
    /// Under [`Schedule::Mutation`], the iteration at whose end the first
    /// convergence was detected (lambda_C is 0 from the next iteration
    /// on).
    pub switch_iter: Option<usize>,
}

/// lambda_C at iteration `iter` (1-based) under the given schedule.
///
/// - linear: `m - (iter - 1) k` while `iter < m/k + 1`, else 0
/// - nonlinear: `m / iter`
/// - mutation: `m` before the first convergence, 0 after
pub fn lambda_schedule(
    kind: Schedule,
    m: f64,
    k: f64,
    iter: usize,
    first_convergence_seen: bool,
) -> f64 {
    debug_assert!(iter >= 1, "iterations are 1-based");
    match kind {
        Schedule::Linear => {
            let it = iter as f64;
            if it < m / k + 1.0 {
                m - (it - 1.0) * k
            } else {
                0.0
            }
        }
        Schedule::Nonlinear => m / iter as f64,
        Schedule::Mutation => {
            if first_convergence_seen {
                0.0
            } else {
                m
            }
        }
    }
}

fn bridge_or_zero(
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    observed: &[(usize, usize, f64)],
    beta: f64,
) -> Result<DMatrix<f64>> {
    if observed.is_empty() {
        // With nothing observed the ridge term alone is minimized by 0.
        return Ok(DMatrix::zeros(u.ncols(), u.ncols()));
    }
    solve_bridge(u, v, observed, beta)
}

fn ridge_term(cfg: &FitConfig, b_r: &DMatrix<f64>, b_l: &DMatrix<f64>, w_c: &DMatrix<f64>) -> f64 {
    0.5 * cfg.beta * (b_r.norm_squared() + b_l.norm_squared())
        + 0.5 * cfg.delta * w_c.norm_squared()
}

fn qr_q(m: &DMatrix<f64>) -> DMatrix<f64> {
    let cols = m.ncols();
    m.clone().qr().q().columns(0, cols).into_owned()
}

/// Fit the hybrid model.
///
/// Initialization takes `U`, `V` from the label SVD, then solves the
/// bridge and projection subproblems once. Each iteration then updates
/// `V` by a (guarded) gradient step, updates `U` likewise, and recomputes
/// `B_R`, `B_L`, `W_C` exactly. The loop stops when the relative change
/// of the regularized objective falls below `cfg.tol`, or at
/// `cfg.max_iter`.
///
/// Under the mutation schedule the first time the relative change stays
/// below `cfg.tol` for two consecutive iterations counts as the first
/// convergence: lambda_C drops to exactly 0, the projection stops being
/// updated, and the loop keeps running to a second convergence.
pub fn fit(
    ratings: &SparseRatings,
    labels: &SparseLabels,
    c: &DescriptionMatrix,
    cfg: &FitConfig,
) -> Result<FitOutcome> {
    cfg.validate()?;
    let (n, m) = (ratings.n_users(), ratings.n_items());
    if labels.n_users() != n || labels.n_items() != m || c.n_items() != m {
        return Err(crate::error::Error::DimensionMismatch(format!(
            "ratings {n} x {m}, labels {} x {}, descriptions {} items",
            labels.n_users(),
            labels.n_items(),
            c.n_items()
        )));
    }
    if c.dim() == 0 {
        return Err(crate::error::Error::DimensionMismatch(
            "description matrix must have at least one column".into(),
        ));
    }

    let rat = ratings.entries();
    let lab = labels.numeric_entries();
    let has_desc = c.n_present() > 0;

    // Step 0: SVD init for the factors, closed forms for the rest.
    let (mut u, mut v) = init_factors(labels, cfg.d, cfg.seed)?;
    let mut b_r = bridge_or_zero(&u, &v, rat, cfg.beta)?;
    let mut b_l = bridge_or_zero(&u, &v, &lab, cfg.beta)?;
    let mut w_c = DMatrix::zeros(cfg.d, c.dim());
    let lc_first = lambda_schedule(cfg.schedule, cfg.lambda_c_init, cfg.step_k, 1, false);
    if lc_first > 0.0 && has_desc {
        w_c = solve_projection(&v, c, cfg.delta / lc_first)?;
    }

    let mut f_prev = objective_parts(
        &u, &v, &b_r, &b_l, &w_c, rat, &lab, c, cfg.lambda_l, lc_first,
    ) + ridge_term(cfg, &b_r, &b_l, &w_c);

    let mut trace = Vec::new();
    let mut first_conv = false;
    let mut switch_iter = None;
    let mut consec_below = 0usize;
    let mut converged = false;

    for iter in 1..=cfg.max_iter {
        let lc = lambda_schedule(cfg.schedule, cfg.lambda_c_init, cfg.step_k, iter, first_conv);

        // Step 1: V.
        let gv = grad_v_parts(&u, &v, &b_r, &b_l, &w_c, rat, &lab, c, cfg.lambda_l, lc);
        let mut v_failed = false;
        if cfg.backtracking {
            let base = objective_parts(&u, &v, &b_r, &b_l, &w_c, rat, &lab, c, cfg.lambda_l, lc);
            match update_factor_backtracking(&v, &gv, cfg.gamma_v, base, |cand| {
                objective_parts(&u, cand, &b_r, &b_l, &w_c, rat, &lab, c, cfg.lambda_l, lc)
            }) {
                Some((next, _)) => v = next,
                None => v_failed = true,
            }
        } else {
            v = update_factor(&v, &gv, cfg.gamma_v);
        }
        if cfg.qr_retraction && !v_failed {
            v = qr_q(&v);
        }

        // Step 2: U, against the updated V.
        let gu = grad_u_parts(&u, &v, &b_r, &b_l, rat, &lab, cfg.lambda_l);
        let mut u_failed = false;
        if cfg.backtracking {
            let base = objective_parts(&u, &v, &b_r, &b_l, &w_c, rat, &lab, c, cfg.lambda_l, lc);
            match update_factor_backtracking(&u, &gu, cfg.gamma_u, base, |cand| {
                objective_parts(cand, &v, &b_r, &b_l, &w_c, rat, &lab, c, cfg.lambda_l, lc)
            }) {
                Some((next, _)) => u = next,
                None => u_failed = true,
            }
        } else {
            u = update_factor(&u, &gu, cfg.gamma_u);
        }
        if cfg.qr_retraction && !u_failed {
            u = qr_q(&u);
        }

        // Step 3: exact subproblems.
        b_r = bridge_or_zero(&u, &v, rat, cfg.beta)?;
        b_l = bridge_or_zero(&u, &v, &lab, cfg.beta)?;
        if lc > 0.0 && has_desc {
            w_c = solve_projection(&v, c, cfg.delta / lc)?;
        }

        let f = objective_parts(&u, &v, &b_r, &b_l, &w_c, rat, &lab, c, cfg.lambda_l, lc)
            + ridge_term(cfg, &b_r, &b_l, &w_c);
        trace.push(TraceRecord {
            iter,
            lambda_c: lc,
            objective: f,
        });

        let rel = (f_prev - f).abs() / f_prev.abs().max(1e-12);
        let step_stuck = v_failed && u_failed;
        let below = rel < cfg.tol || step_stuck;
        f_prev = f;

        if cfg.schedule == Schedule::Mutation && !first_conv {
            consec_below = if below { consec_below + 1 } else { 0 };
            if consec_below >= 2 {
                first_conv = true;
                switch_iter = Some(iter);
            }
        } else if below {
            converged = true;
            break;
        }
    }

    let iterations = trace.len();
    let model = HybridModel::new(u, v, b_r, b_l, w_c)?;
    Ok(FitOutcome {
        model,
        trace,
        iterations,
        converged,
        switch_iter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::test_support::random_matrix;
    use crate::model::RatingScale;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn schedule_linear_boundary() {
        assert_eq!(lambda_schedule(Schedule::Linear, 2.5, 0.5, 1, false), 2.5);
        assert_eq!(lambda_schedule(Schedule::Linear, 2.5, 0.5, 3, false), 1.5);
        assert_eq!(lambda_schedule(Schedule::Linear, 2.5, 0.5, 5, false), 0.5);
        assert_eq!(lambda_schedule(Schedule::Linear, 2.5, 0.5, 6, false), 0.0);
        assert_eq!(lambda_schedule(Schedule::Linear, 2.5, 0.5, 60, false), 0.0);
    }

    #[test]
    fn schedule_linear_zero_step_is_constant() {
        for iter in [1usize, 5, 500] {
            assert_eq!(lambda_schedule(Schedule::Linear, 2.5, 0.0, iter, false), 2.5);
        }
        assert_eq!(lambda_schedule(Schedule::Linear, 0.0, 0.0, 3, false), 0.0);
    }

    #[test]
    fn schedule_nonlinear() {
        assert_eq!(lambda_schedule(Schedule::Nonlinear, 2.5, 0.5, 5, false), 0.5);
        assert_eq!(lambda_schedule(Schedule::Nonlinear, 2.5, 0.5, 1, false), 2.5);
    }

    #[test]
    fn schedule_mutation_flag() {
        assert_eq!(lambda_schedule(Schedule::Mutation, 2.5, 0.5, 9, false), 2.5);
        assert_eq!(lambda_schedule(Schedule::Mutation, 2.5, 0.5, 9, true), 0.0);
    }

    /// Rank-d planted problem on a wide scale so no affine shift is
    /// needed. Returns (ratings over `observed`, labels thresholded at
    /// the median, full planted matrix).
    fn planted(
        seed: u64,
        n: usize,
        m: usize,
        d: usize,
        keep: f64,
    ) -> (SparseRatings, SparseLabels, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u_star = random_matrix(&mut rng, n, d);
        let v_star = random_matrix(&mut rng, m, d);
        let b_star = random_matrix(&mut rng, d, d);
        let full = &u_star * &b_star * v_star.transpose();
        let scale = RatingScale::new(-50.0, 50.0).unwrap();
        let mut entries = Vec::new();
        let mut label_entries = Vec::new();
        for i in 0..n {
            for j in 0..m {
                if rng.gen_bool(keep) {
                    entries.push((i, j, full[(i, j)]));
                }
                label_entries.push((i, j, full[(i, j)] > 0.0));
            }
        }
        let ratings = SparseRatings::new(n, m, entries, scale).unwrap();
        let labels = SparseLabels::new(n, m, label_entries).unwrap();
        (ratings, labels, full)
    }

    #[test]
    fn fit_drives_planted_full_data_to_zero() {
        let (ratings, labels, _) = planted(1, 6, 5, 2, 1.0);
        let c = DescriptionMatrix::empty(5, 2);
        let cfg = FitConfig {
            d: 2,
            lambda_l: 0.0,
            lambda_c_init: 0.0,
            schedule: Schedule::Linear,
            step_k: 0.0,
            beta: 0.0,
            delta: 0.0,
            gamma_u: 0.05,
            gamma_v: 0.05,
            backtracking: true,
            qr_retraction: false,
            max_iter: 2000,
            tol: 0.0,
            seed: 1,
        };
        let out = fit(&ratings, &labels, &c, &cfg).unwrap();
        let f = out.trace.last().unwrap().objective;
        assert!(f < 1e-6, "final objective {f}");
    }

    #[test]
    fn fit_recovers_held_out_cells() {
        let (ratings, labels, full) = planted(2, 8, 6, 2, 0.7);
        let c = DescriptionMatrix::empty(6, 2);
        let cfg = FitConfig {
            d: 2,
            lambda_l: 0.0,
            lambda_c_init: 0.0,
            schedule: Schedule::Linear,
            step_k: 0.0,
            beta: 0.0,
            delta: 0.0,
            gamma_u: 0.05,
            gamma_v: 0.05,
            backtracking: true,
            qr_retraction: false,
            max_iter: 4000,
            tol: 0.0,
            seed: 1,
        };
        let out = fit(&ratings, &labels, &c, &cfg).unwrap();
        let observed: std::collections::HashSet<(usize, usize)> = ratings
            .entries()
            .iter()
            .map(|&(u, v, _)| (u, v))
            .collect();
        let pred = out.model.predict();
        let mut worst = 0.0f64;
        for i in 0..8 {
            for j in 0..6 {
                if !observed.contains(&(i, j)) {
                    worst = worst.max((pred[(i, j)] - full[(i, j)]).abs());
                }
            }
        }
        assert!(worst < 1e-3, "worst held-out error {worst}");
    }

    #[test]
    fn fit_infinite_tol_runs_one_iteration() {
        let (ratings, labels, _) = planted(3, 5, 4, 2, 0.8);
        let c = DescriptionMatrix::empty(4, 2);
        let cfg = FitConfig {
            d: 2,
            schedule: Schedule::Linear,
            step_k: 0.0,
            tol: f64::INFINITY,
            ..Default::default()
        };
        let out = fit(&ratings, &labels, &c, &cfg).unwrap();
        assert_eq!(out.iterations, 1);
        assert!(out.converged);
    }

    #[test]
    fn fit_monotone_descent_with_fixed_lambda() {
        for seed in [10u64, 11, 12] {
            let (ratings, labels, _) = planted(seed, 6, 5, 2, 0.6);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let rows = random_matrix(&mut rng, 5, 3);
            let present = (0..5).map(|_| rng.gen_bool(0.7)).collect();
            let c = DescriptionMatrix::from_rows(rows, present).unwrap();
            let cfg = FitConfig {
                d: 2,
                lambda_l: 0.2,
                lambda_c_init: 1.5,
                schedule: Schedule::Linear,
                step_k: 0.0, // lambda_C stays 1.5 throughout
                gamma_u: 0.01,
                gamma_v: 0.01,
                max_iter: 60,
                tol: 0.0,
                seed,
                ..Default::default()
            };
            let out = fit(&ratings, &labels, &c, &cfg).unwrap();
            for w in out.trace.windows(2) {
                assert!(
                    w[1].objective <= w[0].objective + 1e-10,
                    "seed {seed}: objective rose from {} to {}",
                    w[0].objective,
                    w[1].objective
                );
            }
        }
    }

    #[test]
    fn fit_mutation_two_phases() {
        let (ratings, labels, _) = planted(20, 8, 6, 2, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let rows = random_matrix(&mut rng, 6, 3);
        let c = DescriptionMatrix::from_rows(rows, vec![true; 6]).unwrap();
        let cfg = FitConfig {
            d: 2,
            lambda_l: 0.2,
            lambda_c_init: 2.5,
            schedule: Schedule::Mutation,
            gamma_u: 0.05,
            gamma_v: 0.05,
            max_iter: 400,
            tol: 1e-4,
            seed: 20,
            ..Default::default()
        };
        let out = fit(&ratings, &labels, &c, &cfg).unwrap();
        let switch = out.switch_iter.expect("first convergence detected");
        for rec in &out.trace {
            if rec.iter <= switch {
                assert_eq!(rec.lambda_c, 2.5, "iter {}", rec.iter);
            } else {
                assert_eq!(rec.lambda_c, 0.0, "iter {}", rec.iter);
            }
        }
        assert!(out.iterations > switch, "loop continued past the switch");
    }

    #[test]
    fn fit_is_deterministic() {
        let (ratings, labels, _) = planted(30, 6, 5, 2, 0.6);
        let c = DescriptionMatrix::empty(5, 2);
        let cfg = FitConfig {
            d: 2,
            max_iter: 20,
            ..Default::default()
        };
        let a = fit(&ratings, &labels, &c, &cfg).unwrap();
        let b = fit(&ratings, &labels, &c, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn fit_with_qr_retraction_keeps_factors_orthonormal() {
        let (ratings, labels, _) = planted(60, 7, 5, 2, 0.7);
        let c = DescriptionMatrix::empty(5, 2);
        let cfg = FitConfig {
            d: 2,
            qr_retraction: true,
            max_iter: 15,
            tol: 0.0,
            ..Default::default()
        };
        let out = fit(&ratings, &labels, &c, &cfg).unwrap();
        for m in [out.model.user_factors(), out.model.item_factors()] {
            let gram = m.transpose() * m;
            let eye = DMatrix::<f64>::identity(2, 2);
            assert!((gram - eye).norm() < 1e-10);
        }
    }

    #[test]
    fn fit_rejects_shape_mismatch() {
        let (ratings, _, _) = planted(40, 5, 4, 2, 0.5);
        let labels = SparseLabels::new(9, 9, vec![]).unwrap();
        let c = DescriptionMatrix::empty(4, 2);
        assert!(fit(&ratings, &labels, &c, &FitConfig::default()).is_err());
    }

    #[test]
    fn fit_without_descriptions_ignores_lambda_c() {
        // All-missing C must behave exactly like lambda_C = 0.
        let (ratings, labels, _) = planted(50, 6, 5, 2, 0.6);
        let c_empty = DescriptionMatrix::empty(5, 3);
        let cfg = FitConfig {
            d: 2,
            lambda_c_init: 2.5,
            schedule: Schedule::Linear,
            step_k: 0.0,
            max_iter: 30,
            tol: 0.0,
            ..Default::default()
        };
        let with_lc = fit(&ratings, &labels, &c_empty, &cfg).unwrap();
        let without_lc = fit(
            &ratings,
            &labels,
            &c_empty,
            &FitConfig {
                lambda_c_init: 0.0,
                ..cfg
            },
        )
        .unwrap();
        assert_eq!(with_lc.model, without_lc.model);
    }
}
