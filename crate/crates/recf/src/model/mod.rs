//! The hybrid factor model: latent user/item factors `U`, `V`, bridge
//! matrices `B_R`, `B_L` linking them to ratings and labels, and a
//! projection `W_C` linking item factors to description vectors.
//!
//! Ratings, labels, and descriptions are fused into one least-squares
//! objective
//!
//! ```text
//! f = 1/2 ||X.(R - U B_R V')||^2
//!   + lambda_L/2 ||Y.(L - U B_L V')||^2
//!   + lambda_C/2 ||Z.(C - V W_C)||^2
//! ```
//!
//! where `X`, `Y`, `Z` mask unobserved cells (`Z` is per item, applied to
//! whole rows of the description residual). Fitting alternates gradient
//! steps on `V` and `U` with exact ridge solves for `B_R`, `B_L`, `W_C`.

mod fit;
mod objective;
mod solve;
mod store;

pub use fit::{fit, lambda_schedule, FitOutcome, TraceRecord};
pub use objective::{grad_u, grad_v, objective, update_factor, update_factor_backtracking};
pub use solve::{init_factors, solve_bridge, solve_projection};
pub use store::{load_model, save_model};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Inclusive rating bounds, e.g. 1..5 for the usual star scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatingScale {
    min: f64,
    max: f64,
}

impl RatingScale {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(Error::InvalidParameter(format!(
                "bad rating scale [{min}, {max}]"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn one_to_five() -> Self {
        Self { min: 1.0, max: 5.0 }
    }

    pub fn min(&self) -> f64 {
        self.min
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    pub fn contains(&self, score: f64) -> bool {
        score >= self.min && score <= self.max
    }

    /// Clamp a raw prediction into the scale for reporting.
    pub fn clamp(&self, score: f64) -> f64 {
        score.clamp(self.min, self.max)
    }
}

impl Default for RatingScale {
    fn default() -> Self {
        Self::one_to_five()
    }
}

fn check_entries<T>(
    n_users: usize,
    n_items: usize,
    entries: &[(usize, usize, T)],
) -> Result<()> {
    let mut seen = std::collections::HashSet::with_capacity(entries.len());
    for (u, v, _) in entries {
        if *u >= n_users || *v >= n_items {
            return Err(Error::IndexOutOfRange(format!(
                "entry ({u}, {v}) outside {n_users} x {n_items} grid"
            )));
        }
        if !seen.insert((*u, *v)) {
            return Err(Error::DuplicateEntry { user: *u, item: *v });
        }
    }
    Ok(())
}

/// Observed `(user, item, score)` triplets over an `N x M` grid. Cells
/// not listed are unknown, not zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRatings {
    n_users: usize,
    n_items: usize,
    entries: Vec<(usize, usize, f64)>,
    scale: RatingScale,
}

impl SparseRatings {
    pub fn new(
        n_users: usize,
        n_items: usize,
        entries: Vec<(usize, usize, f64)>,
        scale: RatingScale,
    ) -> Result<Self> {
        check_entries(n_users, n_items, &entries)?;
        for &(u, v, s) in &entries {
            if !scale.contains(s) {
                return Err(Error::InvalidParameter(format!(
                    "rating {s} at ({u}, {v}) outside scale [{}, {}]",
                    scale.min, scale.max
                )));
            }
        }
        Ok(Self {
            n_users,
            n_items,
            entries,
            scale,
        })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn scale(&self) -> RatingScale {
        self.scale
    }

    /// Fraction of observed cells in the grid.
    pub fn sparsity(&self) -> f64 {
        if self.n_users == 0 || self.n_items == 0 {
            return 0.0;
        }
        self.entries.len() as f64 / (self.n_users as f64 * self.n_items as f64)
    }
}

/// Observed binary like/dislike labels over the same grid shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseLabels {
    n_users: usize,
    n_items: usize,
    entries: Vec<(usize, usize, bool)>,
}

impl SparseLabels {
    pub fn new(
        n_users: usize,
        n_items: usize,
        entries: Vec<(usize, usize, bool)>,
    ) -> Result<Self> {
        check_entries(n_users, n_items, &entries)?;
        Ok(Self {
            n_users,
            n_items,
            entries,
        })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(usize, usize, bool)] {
        &self.entries
    }

    /// Entries with labels as 0.0 / 1.0, for the numeric layers.
    pub fn numeric_entries(&self) -> Vec<(usize, usize, f64)> {
        self.entries
            .iter()
            .map(|&(u, v, like)| (u, v, if like { 1.0 } else { 0.0 }))
            .collect()
    }
}

/// A fitted (or hand-built) hybrid model.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridModel {
    u: DMatrix<f64>,
    v: DMatrix<f64>,
    b_r: DMatrix<f64>,
    b_l: DMatrix<f64>,
    w_c: DMatrix<f64>,
}

impl HybridModel {
    pub fn new(
        u: DMatrix<f64>,
        v: DMatrix<f64>,
        b_r: DMatrix<f64>,
        b_l: DMatrix<f64>,
        w_c: DMatrix<f64>,
    ) -> Result<Self> {
        let d = u.ncols();
        if d == 0 || u.nrows() == 0 || v.nrows() == 0 || w_c.ncols() == 0 {
            return Err(Error::DimensionMismatch(
                "model dimensions must be positive".into(),
            ));
        }
        if v.ncols() != d
            || b_r.nrows() != d
            || b_r.ncols() != d
            || b_l.nrows() != d
            || b_l.ncols() != d
            || w_c.nrows() != d
        {
            return Err(Error::DimensionMismatch(format!(
                "inconsistent model shapes: U {}x{}, V {}x{}, B_R {}x{}, B_L {}x{}, W_C {}x{}",
                u.nrows(),
                u.ncols(),
                v.nrows(),
                v.ncols(),
                b_r.nrows(),
                b_r.ncols(),
                b_l.nrows(),
                b_l.ncols(),
                w_c.nrows(),
                w_c.ncols()
            )));
        }
        for m in [&u, &v, &b_r, &b_l, &w_c] {
            if !m.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidParameter(
                    "model matrices must be finite".into(),
                ));
            }
        }
        Ok(Self { u, v, b_r, b_l, w_c })
    }

    pub fn n_users(&self) -> usize {
        self.u.nrows()
    }

    pub fn n_items(&self) -> usize {
        self.v.nrows()
    }

    /// Latent dimension `d`.
    pub fn latent_dim(&self) -> usize {
        self.u.ncols()
    }

    /// Description dimension `e`.
    pub fn description_dim(&self) -> usize {
        self.w_c.ncols()
    }

    pub fn user_factors(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn item_factors(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn bridge_ratings(&self) -> &DMatrix<f64> {
        &self.b_r
    }

    pub fn bridge_labels(&self) -> &DMatrix<f64> {
        &self.b_l
    }

    pub fn projection(&self) -> &DMatrix<f64> {
        &self.w_c
    }

    /// Raw score for one `(user, item)` cell: `U_u B_R V_v'`.
    ///
    /// Computed with the exact same operation order as [`HybridModel::predict`],
    /// so the two agree bit for bit.
    pub fn predict_one(&self, user: usize, item: usize) -> Result<f64> {
        if user >= self.n_users() || item >= self.n_items() {
            return Err(Error::IndexOutOfRange(format!(
                "({user}, {item}) outside {} x {} model",
                self.n_users(),
                self.n_items()
            )));
        }
        let t = self.user_bridge_row(user);
        Ok(Self::score_item(&t, &self.v, item))
    }

    /// Dense raw prediction matrix `U B_R V'` (no clamping).
    pub fn predict(&self) -> DMatrix<f64> {
        let n = self.n_users();
        let m = self.n_items();
        let mut out = DMatrix::zeros(n, m);
        for user in 0..n {
            let t = self.user_bridge_row(user);
            for item in 0..m {
                out[(user, item)] = Self::score_item(&t, &self.v, item);
            }
        }
        out
    }

    /// Row `u` of `U B_R`.
    fn user_bridge_row(&self, user: usize) -> Vec<f64> {
        let d = self.latent_dim();
        let mut t = vec![0.0; d];
        for (j, tj) in t.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in 0..d {
                acc += self.u[(user, k)] * self.b_r[(k, j)];
            }
            *tj = acc;
        }
        t
    }

    fn score_item(t: &[f64], v: &DMatrix<f64>, item: usize) -> f64 {
        let mut acc = 0.0;
        for (j, tj) in t.iter().enumerate() {
            acc += tj * v[(item, j)];
        }
        acc
    }
}

/// Which lambda_C decline rule the fit loop follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// `m - (iter - 1) k` until it hits zero. `k = 0` keeps lambda_C
    /// constant at `m`, which is also how the "no decline" setting is
    /// expressed.
    Linear,
    /// `m / iter`.
    Nonlinear,
    /// `m` until the first convergence is detected, then exactly 0; the
    /// loop continues to a second convergence.
    Mutation,
}

impl std::str::FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "nonlinear" => Ok(Self::Nonlinear),
            "mutation" => Ok(Self::Mutation),
            other => Err(Error::InvalidParameter(format!(
                "unknown schedule {other:?} (linear, nonlinear, mutation)"
            ))),
        }
    }
}

impl std::fmt::Display for Schedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Linear => "linear",
            Self::Nonlinear => "nonlinear",
            Self::Mutation => "mutation",
        })
    }
}

/// Hyperparameters for [`fit`].
///
/// `lambda_l` and `lambda_c_init` trade off the label and description
/// losses against the rating loss (they absorb the noise precisions of
/// the underlying probabilistic story); `beta` and `delta` are the ridge
/// weights on the bridge matrices and the projection (the corresponding
/// prior precisions). None of the precision parameters exist separately
/// at runtime.
#[derive(Debug, Clone)]
pub struct FitConfig {
    /// Latent dimension `d`.
    pub d: usize,
    /// Weight of the labeling loss.
    pub lambda_l: f64,
    /// Initial value `m` of the description weight lambda_C.
    pub lambda_c_init: f64,
    pub schedule: Schedule,
    /// Per-iteration decline of lambda_C under [`Schedule::Linear`].
    pub step_k: f64,
    /// Ridge weight for `B_R` and `B_L`.
    pub beta: f64,
    /// Ridge weight for `W_C`.
    pub delta: f64,
    pub gamma_u: f64,
    pub gamma_v: f64,
    /// Halve the step (up to 20 times) until the objective does not
    /// increase; an exhausted search leaves the factor unchanged.
    pub backtracking: bool,
    /// Re-orthonormalize `U` and `V` by QR after every gradient step.
    /// Off by default: it enforces the orthogonality constraint at the
    /// price of guaranteed monotone descent.
    pub qr_retraction: bool,
    pub max_iter: usize,
    /// Relative objective-change threshold for convergence.
    pub tol: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            d: 10,
            lambda_l: 0.2,
            lambda_c_init: 2.5,
            schedule: Schedule::Mutation,
            step_k: 0.25,
            beta: 0.01,
            delta: 0.01,
            gamma_u: 0.001,
            gamma_v: 0.001,
            backtracking: true,
            qr_retraction: false,
            max_iter: 200,
            tol: 1e-4,
            seed: 1,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidParameter("d must be >= 1".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be >= 1".into()));
        }
        for (name, x) in [
            ("lambda_l", self.lambda_l),
            ("lambda_c_init", self.lambda_c_init),
            ("step_k", self.step_k),
            ("beta", self.beta),
            ("delta", self.delta),
        ] {
            if !x.is_finite() || x < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be a finite non-negative number, got {x}"
                )));
            }
        }
        for (name, x) in [("gamma_u", self.gamma_u), ("gamma_v", self.gamma_v)] {
            if !x.is_finite() || x <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {x}"
                )));
            }
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "tol must be non-negative, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}
