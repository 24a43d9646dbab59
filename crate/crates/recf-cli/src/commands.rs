use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};

use recf::corpus::{build_huffman, build_vocab, tokenize};
use recf::embedding::{
    build_description_matrix, load_embeddings, save_embeddings, train_skipgram,
    DescriptionMatrix, EmbeddingTable,
};
use recf::eval::{evaluate, run_sweep_with_progress, Variant};
use recf::io::{
    align_descriptions, parse_descriptions, parse_labels, parse_ratings, write_atomic,
    FileFormat, IdMap, ParsedRatings, RunConfig,
};
use recf::model::{
    fit, load_model, save_model, HybridModel, SparseLabels, SparseRatings,
};

use crate::{Cli, CmdError, Command, EmbedArgs, EvaluateArgs, PredictArgs, SweepArgs, TrainArgs};

type CmdResult = Result<(), CmdError>;

fn usage(msg: impl Into<String>) -> CmdError {
    CmdError::Usage(msg.into())
}

struct Ctx {
    cfg: RunConfig,
    quiet: bool,
}

impl Ctx {
    fn say(&self, msg: std::fmt::Arguments<'_>) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }
}

macro_rules! progress {
    ($ctx:expr, $($arg:tt)*) => { $ctx.say(format_args!($($arg)*)) };
}

pub fn run(cli: Cli) -> CmdResult {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(name) = &cli.format {
        cfg.format = name
            .parse::<FileFormat>()
            .map_err(|e| usage(e.to_string()))?;
    }
    // Seed precedence: --seed flag, then RECF_SEED, then the config file.
    if let Ok(env_seed) = std::env::var("RECF_SEED") {
        let parsed: u64 = env_seed
            .parse()
            .map_err(|_| anyhow!("RECF_SEED must be an unsigned integer, got {env_seed:?}"))?;
        cfg.set_seed(parsed);
    }
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    let ctx = Ctx {
        cfg,
        quiet: cli.quiet,
    };
    match cli.command {
        Command::Embed(args) => embed(&ctx, args),
        Command::Train(args) => train(&ctx, args),
        Command::Predict(args) => predict(&ctx, args),
        Command::Evaluate(args) => evaluate_cmd(&ctx, args),
        Command::Sweep(args) => sweep(&ctx, args),
    }
}

/// Sentences for embedding training: either raw text lines or the tag
/// field of a description file.
fn corpus_sentences(ctx: &Ctx, args: &EmbedArgs) -> Result<Vec<Vec<String>>, CmdError> {
    if let Some(path) = &args.corpus {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading corpus {}", path.display()))?;
        return Ok(text.lines().map(tokenize).collect());
    }
    let path = args
        .descriptions
        .clone()
        .or_else(|| ctx.cfg.descriptions_path.clone())
        .ok_or_else(|| usage("embed needs --corpus, --descriptions, or a config with `descriptions`"))?;
    let entries = parse_descriptions(&path, ctx.cfg.format)?;
    Ok(entries.into_iter().map(|(_, tokens)| tokens).collect())
}

fn embed(ctx: &Ctx, args: EmbedArgs) -> CmdResult {
    let sentences = corpus_sentences(ctx, &args)?;
    let flat: Vec<&String> = sentences.iter().flatten().collect();
    let vocab = build_vocab(flat, ctx.cfg.min_count)?;
    progress!(ctx, "embed: vocabulary of {} words", vocab.len());
    if let Some(path) = &args.vocab_out {
        write_atomic(path, &vocab.dump())?;
    }
    let tree = build_huffman(&vocab);
    let table = train_skipgram(&sentences, &vocab, &tree, &ctx.cfg.skipgram)?;
    save_embeddings(&table, &args.output)?;
    progress!(
        ctx,
        "embed: wrote {} x {} vectors to {}",
        table.n_words(),
        table.dim(),
        args.output.display()
    );
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(suffix);
    PathBuf::from(os)
}

/// Build the description matrix for the items of `parsed`, degrading to
/// an all-missing matrix (with a warning) when no usable text exists.
fn description_matrix(
    ctx: &Ctx,
    parsed: &ParsedRatings,
    desc_path: Option<&Path>,
    pretrained: Option<&EmbeddingTable>,
) -> Result<DescriptionMatrix, CmdError> {
    let fallback_dim = pretrained.map_or(ctx.cfg.skipgram.dim, EmbeddingTable::dim);
    let degrade = |why: &str| {
        eprintln!("warning: {why}; continuing without descriptions");
        DescriptionMatrix::empty(parsed.ratings.n_items(), fallback_dim)
    };
    let Some(path) = desc_path else {
        return Ok(degrade("no description file configured"));
    };
    if !path.exists() {
        return Ok(degrade(&format!(
            "description file {} not found",
            path.display()
        )));
    }
    let entries = parse_descriptions(path, ctx.cfg.format)?;
    let q = align_descriptions(&entries, &parsed.items);
    if q.iter().all(Vec::is_empty) {
        return Ok(degrade("no description matched any rated item"));
    }
    let table = match pretrained {
        Some(table) => table.clone(),
        None => {
            let flat: Vec<&String> = q.iter().flatten().collect();
            let vocab = build_vocab(flat, ctx.cfg.min_count)?;
            let tree = build_huffman(&vocab);
            train_skipgram(&q, &vocab, &tree, &ctx.cfg.skipgram)?
        }
    };
    Ok(build_description_matrix(&q, &table))
}

fn train(ctx: &Ctx, args: TrainArgs) -> CmdResult {
    let ratings_path = args
        .ratings
        .clone()
        .or_else(|| ctx.cfg.ratings_path.clone())
        .ok_or_else(|| usage("train needs --ratings or a config with `ratings`"))?;
    let mut parsed = parse_ratings(&ratings_path, ctx.cfg.format, ctx.cfg.scale)?;
    progress!(
        ctx,
        "train: {} ratings over {} users x {} items (sparsity {:.4}%)",
        parsed.ratings.len(),
        parsed.ratings.n_users(),
        parsed.ratings.n_items(),
        100.0 * parsed.ratings.sparsity()
    );

    let labels = match &args.labels {
        Some(path) => {
            let mut users = parsed.users.clone();
            let mut items = parsed.items.clone();
            let entries = parse_labels(path, ctx.cfg.format, &mut users, &mut items)?;
            // The label file may mention users/items the ratings never
            // did; the grid grows to cover both.
            let ratings = SparseRatings::new(
                users.len(),
                items.len(),
                parsed.ratings.entries().to_vec(),
                ctx.cfg.scale,
            )?;
            let labels = SparseLabels::new(users.len(), items.len(), entries)?;
            parsed = ParsedRatings {
                ratings,
                users,
                items,
            };
            labels
        }
        None => {
            progress!(ctx, "train: no label file; thresholding ratings > 3");
            recf::eval::derive_labels(&parsed.ratings)
        }
    };

    let pretrained = match &args.embeddings {
        Some(path) => Some(load_embeddings(path)?),
        None => None,
    };
    let desc_path = args
        .descriptions
        .clone()
        .or_else(|| ctx.cfg.descriptions_path.clone());
    let c = description_matrix(ctx, &parsed, desc_path.as_deref(), pretrained.as_ref())?;
    progress!(
        ctx,
        "train: descriptions present for {} of {} items",
        c.n_present(),
        c.n_items()
    );

    let outcome = fit(&parsed.ratings, &labels, &c, &ctx.cfg.fit)?;
    progress!(
        ctx,
        "train: {} iterations, converged = {}, final objective {:.6}",
        outcome.iterations,
        outcome.converged,
        outcome.trace.last().map_or(f64::NAN, |t| t.objective)
    );

    save_model(&outcome.model, &args.model_out)?;
    parsed.users.save(&sibling(&args.model_out, ".users"))?;
    parsed.items.save(&sibling(&args.model_out, ".items"))?;
    if let Some(path) = &args.trace_out {
        let mut csv = String::from("iter,lambda_c,objective\n");
        for rec in &outcome.trace {
            csv.push_str(&format!(
                "{},{:.6},{:.12e}\n",
                rec.iter, rec.lambda_c, rec.objective
            ));
        }
        write_atomic(path, &csv)?;
    }
    progress!(ctx, "train: model written to {}", args.model_out.display());
    Ok(())
}

/// Saved models sit next to their id maps; when the maps are absent the
/// raw ids are taken as dense indices.
fn resolve_id(map_path: &Path, raw: &str, what: &str) -> Result<usize, CmdError> {
    if map_path.exists() {
        let map = IdMap::load(map_path)?;
        return map
            .get(raw)
            .ok_or_else(|| anyhow!("unknown {what} id {raw:?}").into());
    }
    raw.parse::<usize>()
        .map_err(|_| anyhow!("no id map at {}; expected a dense {what} index, got {raw:?}", map_path.display()).into())
}

fn predict(ctx: &Ctx, args: PredictArgs) -> CmdResult {
    let model = load_model(&args.model)?;
    let user = resolve_id(&sibling(&args.model, ".users"), &args.user, "user")?;
    let item = resolve_id(&sibling(&args.model, ".items"), &args.item, "item")?;
    let raw = model.predict_one(user, item)?;
    let score = if args.clamp {
        ctx.cfg.scale.clamp(raw)
    } else {
        raw
    };
    println!("{score:.6}");
    Ok(())
}

/// Translate a test file into the model's dense index space, skipping
/// entries whose user or item the model has never seen.
fn translate_test(
    model: &HybridModel,
    test: &ParsedRatings,
    users: &IdMap,
    items: &IdMap,
) -> (Vec<(usize, usize, f64)>, usize) {
    let mut cells = Vec::new();
    let mut skipped = 0usize;
    for &(u, v, s) in test.ratings.entries() {
        let mu = users.get(test.users.original(u));
        let mv = items.get(test.items.original(v));
        match (mu, mv) {
            (Some(mu), Some(mv)) if mu < model.n_users() && mv < model.n_items() => {
                cells.push((mu, mv, s));
            }
            _ => skipped += 1,
        }
    }
    (cells, skipped)
}

fn evaluate_cmd(ctx: &Ctx, args: EvaluateArgs) -> CmdResult {
    let model = load_model(&args.model)?;
    let users_path = sibling(&args.model, ".users");
    let items_path = sibling(&args.model, ".items");
    let test = parse_ratings(&args.test, ctx.cfg.format, ctx.cfg.scale)?;
    let (cells, skipped) = if users_path.exists() && items_path.exists() {
        let users = IdMap::load(&users_path)?;
        let items = IdMap::load(&items_path)?;
        translate_test(&model, &test, &users, &items)
    } else {
        // Without maps, ids in the test file are dense indices already.
        let mut cells = Vec::new();
        let mut skipped = 0usize;
        for &(u, v, s) in test.ratings.entries() {
            let (du, dv) = (
                test.users.original(u).parse::<usize>(),
                test.items.original(v).parse::<usize>(),
            );
            match (du, dv) {
                (Ok(du), Ok(dv)) if du < model.n_users() && dv < model.n_items() => {
                    cells.push((du, dv, s));
                }
                _ => skipped += 1,
            }
        }
        (cells, skipped)
    };
    if skipped > 0 {
        eprintln!("warning: skipped {skipped} test entries outside the model's id space");
    }
    let metrics = evaluate(&model, &cells, ctx.cfg.scale)?;
    println!("n={}", cells.len());
    println!("mae={:.6}", metrics.mae);
    println!("rmse={:.6}", metrics.rmse);
    println!("mae_clamped={:.6}", metrics.mae_clamped);
    println!("rmse_clamped={:.6}", metrics.rmse_clamped);
    Ok(())
}

fn sweep(ctx: &Ctx, args: SweepArgs) -> CmdResult {
    let ratings_path = ctx
        .cfg
        .ratings_path
        .clone()
        .ok_or_else(|| usage("sweep needs a config with `ratings` (pass --config)"))?;
    let parsed = parse_ratings(&ratings_path, ctx.cfg.format, ctx.cfg.scale)?;
    let q = match &ctx.cfg.descriptions_path {
        Some(path) if path.exists() => {
            let entries = parse_descriptions(path, ctx.cfg.format)?;
            align_descriptions(&entries, &parsed.items)
        }
        Some(path) => {
            eprintln!(
                "warning: description file {} not found; sweeping without descriptions",
                path.display()
            );
            vec![Vec::new(); parsed.ratings.n_items()]
        }
        None => vec![Vec::new(); parsed.ratings.n_items()],
    };

    let sweep_cfg = ctx.cfg.sweep_config();
    let report = run_sweep_with_progress(&parsed.ratings, &q, &sweep_cfg, |cell| {
        if !ctx.quiet {
            match &cell.outcome {
                Ok(m) => eprintln!(
                    "sweep: {} n={} seed={} mae={:.4} rmse={:.4} ({} iters)",
                    cell.variant, cell.n, cell.seed, m.metrics.mae, m.metrics.rmse, m.iterations
                ),
                Err(e) => eprintln!(
                    "sweep: {} n={} seed={} FAILED: {e}",
                    cell.variant, cell.n, cell.seed
                ),
            }
        }
    })?;

    let out_dir = args.output_dir.unwrap_or_else(|| ctx.cfg.output_dir.clone());
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let report_path = out_dir.join("report.csv");
    write_atomic(&report_path, &report.to_csv())?;
    let mut variants_seen: Vec<Variant> = Vec::new();
    for cell in &report.cells {
        if !variants_seen.contains(&cell.variant) {
            variants_seen.push(cell.variant);
        }
    }
    for variant in variants_seen {
        let path = out_dir.join(format!("{variant}.dat"));
        write_atomic(&path, &report.plot_data(variant))?;
    }
    progress!(ctx, "sweep: report written to {}", report_path.display());
    Ok(())
}
