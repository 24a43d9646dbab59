//! Initialization and the two closed-form subproblem solvers.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embedding::DescriptionMatrix;
use crate::error::{Error, Result};

use super::SparseLabels;

/// Initialize `U`, `V` as the top-`d` left/right singular vectors of the
/// dense zero-filled label matrix.
///
/// Zero-filling means unobserved cells and observed dislikes both
/// contribute 0, so the SVD captures the "who liked what" structure. If
/// the dense matrix is all zeros (no observed likes at all) the
/// initialization falls back to seeded random factors orthonormalized by
/// QR; either way `U' U = I` and `V' V = I` hold at the output.
pub fn init_factors(
    labels: &SparseLabels,
    d: usize,
    seed: u64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = labels.n_users();
    let m = labels.n_items();
    if d == 0 || d > n.min(m) {
        return Err(Error::InvalidParameter(format!(
            "latent dimension {d} not in 1..={}",
            n.min(m)
        )));
    }

    let mut dense = DMatrix::<f64>::zeros(n, m);
    for &(u, v, like) in labels.entries() {
        if like {
            dense[(u, v)] = 1.0;
        }
    }

    if dense.iter().all(|x| *x == 0.0) {
        return Ok((random_orthonormal(n, d, seed), random_orthonormal(m, d, seed ^ 0x9e37_79b9)));
    }

    let svd = dense.svd(true, true);
    let u_full = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V'");
    // Columns sorted by singular value, largest first; nalgebra does not
    // promise an order.
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut u = DMatrix::zeros(n, d);
    let mut v = DMatrix::zeros(m, d);
    for (col, &src) in order.iter().take(d).enumerate() {
        u.set_column(col, &u_full.column(src));
        for row in 0..m {
            v[(row, col)] = v_t[(src, row)];
        }
    }
    Ok((u, v))
}

fn random_orthonormal(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-0.5..0.5));
    let qr = raw.qr();
    let q = qr.q();
    q.columns(0, cols).into_owned()
}

/// Solve the ridge problem for a bridge matrix `B`:
///
/// ```text
/// min_B 1/2 sum_observed (val - U_u B V_v')^2 + beta/2 ||B||^2
/// ```
///
/// Each observed cell contributes one row `vec(U_u' V_v)` to a design
/// matrix; the normal equations over the d^2 unknowns are assembled
/// entry by entry and solved by Cholesky (LU as a fallback when
/// `beta = 0` makes definiteness borderline).
pub fn solve_bridge(
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    observed: &[(usize, usize, f64)],
    beta: f64,
) -> Result<DMatrix<f64>> {
    let d = u.ncols();
    if v.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "U has {} columns, V has {}",
            d,
            v.ncols()
        )));
    }
    if observed.is_empty() {
        return Err(Error::NoObservations);
    }
    if !beta.is_finite() || beta < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "beta must be non-negative, got {beta}"
        )));
    }
    let dd = d * d;
    let mut a = DMatrix::<f64>::zeros(dd, dd);
    let mut rhs = DVector::<f64>::zeros(dd);
    let mut row = vec![0.0; dd];
    for &(uu, vv, val) in observed {
        if uu >= u.nrows() || vv >= v.nrows() {
            return Err(Error::IndexOutOfRange(format!(
                "observed cell ({uu}, {vv}) outside factor shapes"
            )));
        }
        // row = vec(U_u' V_v), column-major: row[i + j d] = U[u,i] V[v,j].
        for j in 0..d {
            let vj = v[(vv, j)];
            for i in 0..d {
                row[i + j * d] = u[(uu, i)] * vj;
            }
        }
        for q in 0..dd {
            let mq = row[q];
            if mq != 0.0 {
                for p in q..dd {
                    a[(p, q)] += row[p] * mq;
                }
            }
            rhs[q] += val * mq;
        }
    }
    for q in 0..dd {
        for p in (q + 1)..dd {
            a[(q, p)] = a[(p, q)];
        }
        a[(q, q)] += beta;
    }
    let x = solve_spd(a, rhs)?;
    Ok(DMatrix::from_fn(d, d, |i, j| x[i + j * d]))
}

/// Solve the ridge problem for the projection `W_C` over the items whose
/// description row is present:
///
/// ```text
/// W_C = (V~' V~ + delta I)^-1 V~' C~
/// ```
///
/// where the tilde restricts to present rows. The caller is responsible
/// for folding any loss weight into `delta` (a loss weighted by
/// `lambda_C` with ridge `delta` is equivalent to an unweighted loss
/// with ridge `delta / lambda_C`).
pub fn solve_projection(
    v: &DMatrix<f64>,
    c: &DescriptionMatrix,
    delta: f64,
) -> Result<DMatrix<f64>> {
    let d = v.ncols();
    let e = c.dim();
    if c.n_items() != v.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "V has {} rows, descriptions cover {} items",
            v.nrows(),
            c.n_items()
        )));
    }
    if c.n_present() == 0 {
        return Err(Error::NoDescriptions);
    }
    if !delta.is_finite() || delta < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "delta must be non-negative, got {delta}"
        )));
    }
    let rows = c.rows();
    let mut g = DMatrix::<f64>::zeros(d, d);
    let mut vtc = DMatrix::<f64>::zeros(d, e);
    for item in 0..c.n_items() {
        if !c.present(item) {
            continue;
        }
        for i in 0..d {
            let vi = v[(item, i)];
            if vi == 0.0 {
                continue;
            }
            for j in i..d {
                g[(j, i)] += vi * v[(item, j)];
            }
            for j in 0..e {
                vtc[(i, j)] += vi * rows[(item, j)];
            }
        }
    }
    for i in 0..d {
        for j in (i + 1)..d {
            g[(i, j)] = g[(j, i)];
        }
        g[(i, i)] += delta;
    }
    let mut w = DMatrix::zeros(d, e);
    match g.clone().cholesky() {
        Some(chol) => {
            for j in 0..e {
                let col = chol.solve(&vtc.column(j).into_owned());
                w.set_column(j, &col);
            }
        }
        None => {
            let lu = g.lu();
            for j in 0..e {
                let col = lu.solve(&vtc.column(j).into_owned()).ok_or_else(|| {
                    Error::SingularSystem(
                        "V'V singular and delta = 0; increase delta".into(),
                    )
                })?;
                w.set_column(j, &col);
            }
        }
    }
    Ok(w)
}

fn solve_spd(a: DMatrix<f64>, b: DVector<f64>) -> Result<DVector<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(&b));
    }
    a.lu().solve(&b).ok_or_else(|| {
        Error::SingularSystem("normal equations singular and beta = 0; increase beta".into())
    })
}
