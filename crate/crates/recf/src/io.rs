//! Dataset ingestion, run configuration, and file helpers.
//!
//! Rating files are line oriented: `user<sep>item<sep>rating` with an
//! optional trailing timestamp field that is ignored. Description files
//! are `item<sep>title<sep>tag1|tag2|...` or the two-field form
//! `item<sep>tags`. Raw ids are remapped to dense 0-based indices in
//! first-appearance order, and the mapping is kept so that predictions
//! can be queried by the original ids.

use std::collections::HashMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::corpus::tokenize;
use crate::error::{Error, Result};
use crate::eval::{SweepConfig, Variant};
use crate::model::{FitConfig, RatingScale, SparseRatings};
use crate::embedding::SkipgramConfig;

/// Field separator of a data file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FileFormat {
    /// `::` — the classic MovieLens `.dat` separator.
    #[default]
    DoubleColon,
    Tab,
    Comma,
}

impl FileFormat {
    pub fn separator(self) -> &'static str {
        match self {
            Self::DoubleColon => "::",
            Self::Tab => "\t",
            Self::Comma => ",",
        }
    }
}

impl std::str::FromStr for FileFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "double-colon" => Ok(Self::DoubleColon),
            "tab" => Ok(Self::Tab),
            "comma" => Ok(Self::Comma),
            other => Err(Error::UnknownFormat(other.to_string())),
        }
    }
}

impl std::fmt::Display for FileFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::DoubleColon => "double-colon",
            Self::Tab => "tab",
            Self::Comma => "comma",
        })
    }
}

/// Dense-id mapping in first-appearance order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IdMap {
    originals: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Dense id for `original`, inserting it if unseen.
    pub fn intern(&mut self, original: &str) -> usize {
        if let Some(&id) = self.index.get(original) {
            return id;
        }
        let id = self.originals.len();
        self.originals.push(original.to_string());
        self.index.insert(original.to_string(), id);
        id
    }

    pub fn get(&self, original: &str) -> Option<usize> {
        self.index.get(original).copied()
    }

    pub fn original(&self, id: usize) -> &str {
        &self.originals[id]
    }

    pub fn len(&self) -> usize {
        self.originals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.originals.is_empty()
    }

    /// One original id per line, in dense order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for original in &self.originals {
            out.push_str(original);
            out.push('\n');
        }
        write_atomic(path, &out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut map = Self::new();
        for line in text.lines() {
            map.intern(line);
        }
        Ok(map)
    }
}

/// A parsed rating file: the sparse matrix plus both id mappings.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedRatings {
    pub ratings: SparseRatings,
    pub users: IdMap,
    pub items: IdMap,
}

/// Parse a rating file. Lines look like `user<sep>item<sep>rating` with
/// an optional fourth timestamp field; blank lines are skipped. Scores
/// must lie within `scale`; duplicate `(user, item)` pairs are an error.
pub fn parse_ratings(
    path: &Path,
    format: FileFormat,
    scale: RatingScale,
) -> Result<ParsedRatings> {
    let text = std::fs::read_to_string(path)?;
    let sep = format.separator();
    let mut users = IdMap::new();
    let mut items = IdMap::new();
    let mut entries = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(sep).collect();
        if fields.len() != 3 && fields.len() != 4 {
            return Err(Error::MalformedLine {
                path: path.display().to_string(),
                line: lineno,
                msg: format!("expected 3 or 4 fields, got {}", fields.len()),
            });
        }
        let score: f64 = fields[2].trim().parse().map_err(|_| Error::MalformedLine {
            path: path.display().to_string(),
            line: lineno,
            msg: format!("bad rating {:?}", fields[2]),
        })?;
        if !scale.contains(score) {
            return Err(Error::OutOfScale {
                path: path.display().to_string(),
                line: lineno,
                value: score,
                min: scale.min(),
                max: scale.max(),
            });
        }
        let u = users.intern(fields[0].trim());
        let v = items.intern(fields[1].trim());
        if !seen.insert((u, v)) {
            return Err(Error::DuplicateEntry { user: u, item: v });
        }
        entries.push((u, v, score));
    }
    let ratings = SparseRatings::new(users.len(), items.len(), entries, scale)?;
    Ok(ParsedRatings {
        ratings,
        users,
        items,
    })
}

/// Write ratings back out with their original ids, one entry per line in
/// stored order. Integral scores print without a decimal point, so a
/// parse -> write cycle of an integer-scored file is byte-stable.
pub fn write_ratings(
    parsed: &ParsedRatings,
    format: FileFormat,
    path: &Path,
) -> Result<()> {
    let sep = format.separator();
    let mut out = String::new();
    for &(u, v, s) in parsed.ratings.entries() {
        out.push_str(parsed.users.original(u));
        out.push_str(sep);
        out.push_str(parsed.items.original(v));
        out.push_str(sep);
        if s.fract() == 0.0 && s.abs() < 1e15 {
            out.push_str(&format!("{s:.0}"));
        } else {
            out.push_str(&format!("{s}"));
        }
        out.push('\n');
    }
    write_atomic(path, &out)
}

/// Parse a binary label file (`user<sep>item<sep>label` with label 0 or
/// 1), interning ids into the given maps so the label grid shares the
/// rating grid's dense index space.
pub fn parse_labels(
    path: &Path,
    format: FileFormat,
    users: &mut IdMap,
    items: &mut IdMap,
) -> Result<Vec<(usize, usize, bool)>> {
    let text = std::fs::read_to_string(path)?;
    let sep = format.separator();
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(sep).collect();
        if fields.len() != 3 && fields.len() != 4 {
            return Err(Error::MalformedLine {
                path: path.display().to_string(),
                line: lineno,
                msg: format!("expected 3 or 4 fields, got {}", fields.len()),
            });
        }
        let label = match fields[2].trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::MalformedLine {
                    path: path.display().to_string(),
                    line: lineno,
                    msg: format!("label must be 0 or 1, got {other:?}"),
                })
            }
        };
        let u = users.intern(fields[0].trim());
        let v = items.intern(fields[1].trim());
        entries.push((u, v, label));
    }
    Ok(entries)
}

/// Parse a description file into `(original item id, tokens)` pairs.
///
/// Two-field lines are `item<sep>tags`; three-field lines are
/// `item<sep>title<sep>tags` with the title ignored. The tag field is
/// split on `|` and each piece tokenized, so both `a|b's|c` and
/// `a, b's, c` styles work.
pub fn parse_descriptions(
    path: &Path,
    format: FileFormat,
) -> Result<Vec<(String, Vec<String>)>> {
    let text = std::fs::read_to_string(path)?;
    let sep = format.separator();
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(sep).collect();
        let tags = match fields.len() {
            2 => fields[1],
            3 => fields[2],
            n => {
                return Err(Error::MalformedLine {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    msg: format!("expected 2 or 3 fields, got {n}"),
                })
            }
        };
        let tokens: Vec<String> = tags.split('|').flat_map(tokenize).collect();
        out.push((fields[0].trim().to_string(), tokens));
    }
    Ok(out)
}

/// Arrange parsed descriptions by dense item id. Items absent from the
/// file get an empty token list; file entries for unknown items are
/// dropped; a repeated item id keeps the last occurrence.
pub fn align_descriptions(
    entries: &[(String, Vec<String>)],
    items: &IdMap,
) -> Vec<Vec<String>> {
    let mut q = vec![Vec::new(); items.len()];
    for (original, tokens) in entries {
        if let Some(id) = items.get(original) {
            q[id] = tokens.clone();
        }
    }
    q
}

/// Everything a run needs, loadable from a flat `key=value` file.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub ratings_path: Option<PathBuf>,
    pub descriptions_path: Option<PathBuf>,
    pub format: FileFormat,
    pub scale: RatingScale,
    pub min_count: u64,
    pub skipgram: SkipgramConfig,
    pub fit: FitConfig,
    pub n_values: Vec<usize>,
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    pub timing: bool,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            ratings_path: None,
            descriptions_path: None,
            format: FileFormat::default(),
            scale: RatingScale::one_to_five(),
            min_count: 1,
            skipgram: SkipgramConfig::default(),
            fit: FitConfig::default(),
            n_values: vec![3, 5, 10, 15, 20],
            seeds: vec![1, 2, 3, 4, 5],
            variants: Variant::ALL.to_vec(),
            timing: false,
            output_dir: PathBuf::from("."),
        }
    }
}

impl RunConfig {
    /// Parse `key = value` lines; `#` starts a comment, blank lines are
    /// skipped, unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut scale_min = cfg.scale.min();
        let mut scale_max = cfg.scale.max();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            let ctx = |e: String| Error::Config(format!("line {}: {e}", lineno + 1));
            match key {
                "ratings" => cfg.ratings_path = Some(PathBuf::from(value)),
                "descriptions" => cfg.descriptions_path = Some(PathBuf::from(value)),
                "format" => cfg.format = value.parse()?,
                "scale_min" => scale_min = parse_num(value).map_err(ctx)?,
                "scale_max" => scale_max = parse_num(value).map_err(ctx)?,
                "min_count" => cfg.min_count = parse_num(value).map_err(ctx)?,
                "dim" => cfg.skipgram.dim = parse_num(value).map_err(ctx)?,
                "window" => cfg.skipgram.window = parse_num(value).map_err(ctx)?,
                "epochs" => cfg.skipgram.epochs = parse_num(value).map_err(ctx)?,
                "initial_step" => cfg.skipgram.initial_step = parse_num(value).map_err(ctx)?,
                "d" => cfg.fit.d = parse_num(value).map_err(ctx)?,
                "lambda_l" => cfg.fit.lambda_l = parse_num(value).map_err(ctx)?,
                "lambda_c" => cfg.fit.lambda_c_init = parse_num(value).map_err(ctx)?,
                "schedule" => cfg.fit.schedule = value.parse()?,
                "step_k" => cfg.fit.step_k = parse_num(value).map_err(ctx)?,
                "beta" => cfg.fit.beta = parse_num(value).map_err(ctx)?,
                "delta" => cfg.fit.delta = parse_num(value).map_err(ctx)?,
                "gamma_u" => cfg.fit.gamma_u = parse_num(value).map_err(ctx)?,
                "gamma_v" => cfg.fit.gamma_v = parse_num(value).map_err(ctx)?,
                "backtracking" => cfg.fit.backtracking = parse_bool(value).map_err(ctx)?,
                "qr_retraction" => cfg.fit.qr_retraction = parse_bool(value).map_err(ctx)?,
                "max_iter" => cfg.fit.max_iter = parse_num(value).map_err(ctx)?,
                "tol" => cfg.fit.tol = parse_num(value).map_err(ctx)?,
                "seed" => cfg.set_seed(parse_num(value).map_err(ctx)?),
                "n_values" => cfg.n_values = parse_list(value).map_err(ctx)?,
                "seeds" => cfg.seeds = parse_list(value).map_err(ctx)?,
                "variants" => {
                    cfg.variants = value
                        .split(',')
                        .map(|v| v.trim().parse::<Variant>())
                        .collect::<Result<_>>()?
                }
                "timing" => cfg.timing = parse_bool(value).map_err(ctx)?,
                "output_dir" => cfg.output_dir = PathBuf::from(value),
                other => {
                    return Err(Error::Config(format!(
                        "line {}: unknown key {other:?}",
                        lineno + 1
                    )))
                }
            }
        }
        cfg.scale = RatingScale::new(scale_min, scale_max)?;
        cfg.skipgram.validate()?;
        cfg.fit.validate()?;
        Ok(cfg)
    }

    /// Load and parse a config file; the ratings path, when given, must
    /// exist. A missing descriptions file is deliberately legal (runs
    /// degrade to the no-description variant with a warning).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg = Self::parse(&text)?;
        if let Some(p) = &cfg.ratings_path {
            if !p.exists() {
                return Err(Error::Config(format!(
                    "ratings file {} does not exist",
                    p.display()
                )));
            }
        }
        Ok(cfg)
    }

    /// One seed steers everything derived from this config.
    pub fn set_seed(&mut self, seed: u64) {
        self.fit.seed = seed;
        self.skipgram.seed = seed;
    }

    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            fit: self.fit.clone(),
            skipgram: self.skipgram.clone(),
            min_count: self.min_count,
            n_values: self.n_values.clone(),
            seeds: self.seeds.clone(),
            variants: self.variants.clone(),
            timing: self.timing,
        }
    }
}

fn parse_num<T: std::str::FromStr>(value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("bad number {value:?}"))
}

fn parse_bool(value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(format!("bad boolean {other:?}")),
    }
}

fn parse_list<T: std::str::FromStr>(value: &str) -> std::result::Result<Vec<T>, String> {
    value
        .split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| format!("bad list element {v:?}"))
        })
        .collect()
}

/// Write a file via temp-file-then-rename so readers never observe a
/// half-written state.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = {
        let mut os = path.as_os_str().to_os_string();
        os.push(".tmp");
        PathBuf::from(os)
    };
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}
