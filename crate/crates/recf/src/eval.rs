//! The evaluation protocol: n-way random splits, label derivation,
//! MAE/RMSE, and the sparsity sweep.
//!
//! A dataset is shuffled once per seed and dealt into `n` near-equal
//! subsets: subset 0 trains the model, subset 1 is thresholded into the
//! binary labeling matrix, and the remaining `n - 2` subsets are held
//! out for testing. Growing `n` therefore shrinks the training fraction
//! — the x-axis of a sparsity sweep.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{build_huffman, build_vocab};
use crate::embedding::{
    build_description_matrix, train_skipgram, DescriptionMatrix, SkipgramConfig,
};
use crate::error::{Error, Result};
use crate::model::{fit, FitConfig, HybridModel, RatingScale, SparseLabels, SparseRatings};

/// Rating threshold above which an entry counts as "like".
const LIKE_THRESHOLD: f64 = 3.0;

/// One train/label/test partition of a rating dataset.
#[derive(Debug, Clone)]
pub struct EvalSplit {
    pub train: SparseRatings,
    /// Binary labels derived from the label-source subset.
    pub labels: SparseLabels,
    /// Held-out `(user, item, true score)` triplets.
    pub test: Vec<(usize, usize, f64)>,
}

/// Shuffle the entries by `seed` and deal them round-robin into `n`
/// subsets: subset 0 becomes the training ratings, subset 1 the label
/// source, subsets 2..n the test set.
pub fn split_dataset(ratings: &SparseRatings, n: usize, seed: u64) -> Result<EvalSplit> {
    if n < 3 {
        return Err(Error::InvalidParameter(format!(
            "need at least 3 subsets, got {n}"
        )));
    }
    if ratings.len() < n {
        return Err(Error::TooFewEntries {
            have: ratings.len(),
            need: n,
        });
    }
    let mut entries = ratings.entries().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    entries.shuffle(&mut rng);

    let mut train = Vec::new();
    let mut label_source = Vec::new();
    let mut test = Vec::new();
    for (i, entry) in entries.into_iter().enumerate() {
        match i % n {
            0 => train.push(entry),
            1 => label_source.push(entry),
            _ => test.push(entry),
        }
    }

    let train = SparseRatings::new(
        ratings.n_users(),
        ratings.n_items(),
        train,
        ratings.scale(),
    )?;
    let label_source = SparseRatings::new(
        ratings.n_users(),
        ratings.n_items(),
        label_source,
        ratings.scale(),
    )?;
    Ok(EvalSplit {
        train,
        labels: derive_labels(&label_source),
        test,
    })
}

/// Threshold ratings into binary labels: like (1) iff score > 3, at
/// exactly the observed cells of `source`.
pub fn derive_labels(source: &SparseRatings) -> SparseLabels {
    let entries = source
        .entries()
        .iter()
        .map(|&(u, v, s)| (u, v, s > LIKE_THRESHOLD))
        .collect();
    SparseLabels::new(source.n_users(), source.n_items(), entries)
        .expect("source entries are already valid")
}

/// Mean absolute error over paired predictions and ground truths.
pub fn mae(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    check_pairs(predicted, actual)?;
    let sum: f64 = predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a).abs())
        .sum();
    Ok(sum / predicted.len() as f64)
}

/// Root mean squared error over paired predictions and ground truths.
pub fn rmse(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    check_pairs(predicted, actual)?;
    let sum: f64 = predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a) * (p - a))
        .sum();
    Ok((sum / predicted.len() as f64).sqrt())
}

fn check_pairs(predicted: &[f64], actual: &[f64]) -> Result<()> {
    if predicted.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    if predicted.len() != actual.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions vs {} truths",
            predicted.len(),
            actual.len()
        )));
    }
    Ok(())
}

/// MAE/RMSE of raw and scale-clamped predictions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    pub mae_clamped: f64,
    pub rmse_clamped: f64,
}

/// Score every test cell with the model and compute both raw and clamped
/// error metrics.
pub fn evaluate(
    model: &HybridModel,
    test: &[(usize, usize, f64)],
    scale: RatingScale,
) -> Result<Metrics> {
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let mut raw = Vec::with_capacity(test.len());
    let mut clamped = Vec::with_capacity(test.len());
    let mut actual = Vec::with_capacity(test.len());
    for &(u, v, truth) in test {
        let p = model.predict_one(u, v)?;
        raw.push(p);
        clamped.push(scale.clamp(p));
        actual.push(truth);
    }
    Ok(Metrics {
        mae: mae(&raw, &actual)?,
        rmse: rmse(&raw, &actual)?,
        mae_clamped: mae(&clamped, &actual)?,
        rmse_clamped: rmse(&clamped, &actual)?,
    })
}

/// Model variants compared by the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// The full model: ratings + labels + descriptions.
    Recf,
    /// Descriptions off (lambda_C = 0): ratings + labels.
    NoDesc,
    /// Labels and descriptions off: plain rating factorization.
    RatingsOnly,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Recf, Variant::NoDesc, Variant::RatingsOnly];

    /// The fit configuration this variant uses, derived from the base.
    pub fn adjust(self, base: &FitConfig) -> FitConfig {
        let mut cfg = base.clone();
        match self {
            Variant::Recf => {}
            Variant::NoDesc => cfg.lambda_c_init = 0.0,
            Variant::RatingsOnly => {
                cfg.lambda_c_init = 0.0;
                cfg.lambda_l = 0.0;
            }
        }
        cfg
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Recf => "RECF",
            Variant::NoDesc => "NO-DESC",
            Variant::RatingsOnly => "RATINGS-ONLY",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "RECF" => Ok(Variant::Recf),
            "NO-DESC" => Ok(Variant::NoDesc),
            "RATINGS-ONLY" => Ok(Variant::RatingsOnly),
            other => Err(Error::InvalidParameter(format!(
                "unknown variant {other:?} (RECF, NO-DESC, RATINGS-ONLY)"
            ))),
        }
    }
}

/// Everything a sweep needs besides the data itself.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub fit: FitConfig,
    pub skipgram: SkipgramConfig,
    pub min_count: u64,
    pub n_values: Vec<usize>,
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    /// Measure wall time per cell. Off by default so that report files
    /// are byte-identical across runs with the same config and seeds.
    pub timing: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            fit: FitConfig::default(),
            skipgram: SkipgramConfig::default(),
            min_count: 1,
            n_values: vec![3, 5, 10, 15, 20],
            seeds: vec![1, 2, 3, 4, 5],
            variants: Variant::ALL.to_vec(),
            timing: false,
        }
    }
}

/// Successful measurements for one sweep cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellMetrics {
    pub metrics: Metrics,
    pub iterations: usize,
    pub seconds: f64,
}

/// One (variant, n, seed) run, successful or failed.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub variant: Variant,
    pub n: usize,
    pub sparsity: f64,
    pub seed: u64,
    pub outcome: std::result::Result<CellMetrics, String>,
}

/// Mean/std of the error metrics across seeds for one (variant, n).
#[derive(Debug, Clone, Copy)]
pub struct Aggregate {
    pub variant: Variant,
    pub n: usize,
    pub sparsity: f64,
    pub mean_mae: f64,
    pub std_mae: f64,
    pub mean_rmse: f64,
    pub std_rmse: f64,
    pub runs: usize,
}

/// All sweep cells plus derived aggregates and the CSV rendering.
#[derive(Debug, Clone)]
pub struct SweepReport {
    pub cells: Vec<SweepCell>,
}

impl SweepReport {
    /// Per-(variant, n) aggregates over the successful cells, in first
    /// appearance order.
    pub fn aggregates(&self) -> Vec<Aggregate> {
        let mut order: Vec<(Variant, usize)> = Vec::new();
        for cell in &self.cells {
            if !order.contains(&(cell.variant, cell.n)) {
                order.push((cell.variant, cell.n));
            }
        }
        order
            .into_iter()
            .map(|(variant, n)| {
                let ok: Vec<&SweepCell> = self
                    .cells
                    .iter()
                    .filter(|c| c.variant == variant && c.n == n && c.outcome.is_ok())
                    .collect();
                let maes: Vec<f64> = ok
                    .iter()
                    .map(|c| c.outcome.as_ref().unwrap().metrics.mae)
                    .collect();
                let rmses: Vec<f64> = ok
                    .iter()
                    .map(|c| c.outcome.as_ref().unwrap().metrics.rmse)
                    .collect();
                let sparsity = ok.first().map_or(f64::NAN, |c| c.sparsity);
                Aggregate {
                    variant,
                    n,
                    sparsity,
                    mean_mae: mean(&maes),
                    std_mae: sample_std(&maes),
                    mean_rmse: mean(&rmses),
                    std_rmse: sample_std(&rmses),
                    runs: ok.len(),
                }
            })
            .collect()
    }

    /// Render the report: one CSV line per cell, then an aggregate block.
    /// Deterministic for a deterministic set of cells.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "variant,n,sparsity,seed,mae,rmse,mae_clamped,rmse_clamped,iters,seconds\n",
        );
        let mut errors = Vec::new();
        for cell in &self.cells {
            match &cell.outcome {
                Ok(m) => {
                    out.push_str(&format!(
                        "{},{},{:.6},{},{:.6},{:.6},{:.6},{:.6},{},{:.3}\n",
                        cell.variant,
                        cell.n,
                        cell.sparsity,
                        cell.seed,
                        m.metrics.mae,
                        m.metrics.rmse,
                        m.metrics.mae_clamped,
                        m.metrics.rmse_clamped,
                        m.iterations,
                        m.seconds
                    ));
                }
                Err(msg) => {
                    out.push_str(&format!(
                        "{},{},{:.6},{},nan,nan,nan,nan,0,0.000\n",
                        cell.variant, cell.n, cell.sparsity, cell.seed
                    ));
                    errors.push(format!(
                        "# error variant={} n={} seed={}: {}",
                        cell.variant,
                        cell.n,
                        cell.seed,
                        msg.replace('\n', " ")
                    ));
                }
            }
        }
        out.push_str("# aggregate\n");
        out.push_str("# variant,n,sparsity,mean_mae,std_mae,mean_rmse,std_rmse,runs\n");
        for a in self.aggregates() {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{}\n",
                a.variant, a.n, a.sparsity, a.mean_mae, a.std_mae, a.mean_rmse, a.std_rmse, a.runs
            ));
        }
        for e in errors {
            out.push_str(&e);
            out.push('\n');
        }
        out
    }

    /// Plot-friendly per-variant table: `n sparsity mean_mae std_mae
    /// mean_rmse std_rmse` rows.
    pub fn plot_data(&self, variant: Variant) -> String {
        let mut out = String::from("# n sparsity mean_mae std_mae mean_rmse std_rmse\n");
        for a in self.aggregates().into_iter().filter(|a| a.variant == variant) {
            out.push_str(&format!(
                "{} {:.6} {:.6} {:.6} {:.6} {:.6}\n",
                a.n, a.sparsity, a.mean_mae, a.std_mae, a.mean_rmse, a.std_rmse
            ));
        }
        out
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64;
    var.sqrt()
}

/// Build the description matrix once (embeddings depend only on the
/// descriptions, not on splits), then run every (variant, n, seed) cell:
/// split, fit, evaluate. A failed cell is recorded in the report rather
/// than aborting the sweep.
pub fn run_sweep(
    ratings: &SparseRatings,
    item_tokens: &[Vec<String>],
    cfg: &SweepConfig,
) -> Result<SweepReport> {
    run_sweep_with_progress(ratings, item_tokens, cfg, |_| {})
}

/// [`run_sweep`] with a callback invoked after each finished cell,
/// for progress reporting.
pub fn run_sweep_with_progress<F: FnMut(&SweepCell)>(
    ratings: &SparseRatings,
    item_tokens: &[Vec<String>],
    cfg: &SweepConfig,
    mut progress: F,
) -> Result<SweepReport> {
    if item_tokens.len() != ratings.n_items() {
        return Err(Error::DimensionMismatch(format!(
            "{} token lists for {} items",
            item_tokens.len(),
            ratings.n_items()
        )));
    }
    let c = build_sweep_descriptions(item_tokens, &cfg.skipgram, cfg.min_count)?;

    let mut cells = Vec::new();
    for &variant in &cfg.variants {
        let base = variant.adjust(&cfg.fit);
        for &n in &cfg.n_values {
            for &seed in &cfg.seeds {
                let cell = run_cell(ratings, &c, &base, variant, n, seed, cfg.timing);
                progress(&cell);
                cells.push(cell);
            }
        }
    }
    Ok(SweepReport { cells })
}

/// Train embeddings over the item descriptions and average them into the
/// description matrix; degrade to an all-missing matrix when there is no
/// usable text at all.
pub fn build_sweep_descriptions(
    item_tokens: &[Vec<String>],
    skipgram: &SkipgramConfig,
    min_count: u64,
) -> Result<DescriptionMatrix> {
    let flat: Vec<&String> = item_tokens.iter().flatten().collect();
    match build_vocab(flat, min_count) {
        Ok(vocab) => {
            let tree = build_huffman(&vocab);
            let table = train_skipgram(item_tokens, &vocab, &tree, skipgram)?;
            Ok(build_description_matrix(item_tokens, &table))
        }
        Err(Error::EmptyVocabulary { .. }) => Ok(DescriptionMatrix::empty(
            item_tokens.len(),
            skipgram.dim,
        )),
        Err(e) => Err(e),
    }
}

fn run_cell(
    ratings: &SparseRatings,
    c: &DescriptionMatrix,
    base: &FitConfig,
    variant: Variant,
    n: usize,
    seed: u64,
    timing: bool,
) -> SweepCell {
    let started = Instant::now();
    let outcome = (|| -> Result<CellMetrics> {
        let split = split_dataset(ratings, n, seed)?;
        let cfg = FitConfig { seed, ..base.clone() };
        let fitted = fit(&split.train, &split.labels, c, &cfg)?;
        let metrics = evaluate(&fitted.model, &split.test, ratings.scale())?;
        Ok(CellMetrics {
            metrics,
            iterations: fitted.iterations,
            seconds: if timing {
                started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        })
    })()
    .map_err(|e| e.to_string());
    let sparsity = sparsity_for(ratings, n);
    SweepCell {
        variant,
        n,
        sparsity,
        seed,
        outcome,
    }
}

/// Training fraction of the grid when dealing into `n` subsets: subset 0
/// holds ceil(len / n) or floor(len / n) entries depending on remainder.
fn sparsity_for(ratings: &SparseRatings, n: usize) -> f64 {
    if n == 0 {
        return f64::NAN;
    }
    let len = ratings.len();
    let train_len = len / n + usize::from(!len.is_multiple_of(n));
    let cells = ratings.n_users() as f64 * ratings.n_items() as f64;
    if cells == 0.0 {
        0.0
    } else {
        train_len as f64 / cells
    }
}
