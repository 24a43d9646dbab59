//! Model persistence: a versioned plain-text format.
//!
//! ```text
//! recf-model v1 N M d e
//! U
//! <N lines of d floats>
//! V
//! <M lines of d floats>
//! B_R
//! <d lines of d floats>
//! B_L
//! <d lines of d floats>
//! W_C
//! <d lines of e floats>
//! ```
//!
//! Values are written with 17 significant digits, which is enough to
//! reproduce every f64 bit-exactly on reload.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::Path;

use nalgebra::DMatrix;

use crate::io::write_atomic;
use crate::error::{Error, Result};

use super::HybridModel;

const MAGIC: &str = "recf-model";
const VERSION: &str = "v1";

fn push_block(out: &mut String, name: &str, m: &DMatrix<f64>) {
    out.push_str(name);
    out.push('\n');
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(' ');
            }
            write!(out, "{:.16e}", m[(i, j)]).expect("write to string");
        }
        out.push('\n');
    }
}

/// Write `model` to `path` (temp file + rename).
pub fn save_model(model: &HybridModel, path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln!(
        out,
        "{MAGIC} {VERSION} {} {} {} {}",
        model.n_users(),
        model.n_items(),
        model.latent_dim(),
        model.description_dim()
    )
    .expect("write to string");
    push_block(&mut out, "U", model.user_factors());
    push_block(&mut out, "V", model.item_factors());
    push_block(&mut out, "B_R", model.bridge_ratings());
    push_block(&mut out, "B_L", model.bridge_labels());
    push_block(&mut out, "W_C", model.projection());
    write_atomic(path, &out)
}

fn read_block<I: Iterator<Item = std::io::Result<String>>>(
    lines: &mut I,
    name: &str,
    rows: usize,
    cols: usize,
) -> Result<DMatrix<f64>> {
    let bad = |msg: String| Error::BadModelFile(msg);
    let header = lines
        .next()
        .ok_or_else(|| bad(format!("missing section {name}")))??;
    if header.trim() != name {
        return Err(bad(format!("expected section {name}, found {header:?}")));
    }
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        let line = lines
            .next()
            .ok_or_else(|| bad(format!("section {name}: missing row {i}")))??;
        let mut parts = line.split_whitespace();
        for j in 0..cols {
            let tok = parts
                .next()
                .ok_or_else(|| bad(format!("section {name} row {i}: too few values")))?;
            m[(i, j)] = tok
                .parse()
                .map_err(|_| bad(format!("section {name} row {i}: bad float {tok:?}")))?;
        }
        if parts.next().is_some() {
            return Err(bad(format!("section {name} row {i}: too many values")));
        }
    }
    Ok(m)
}

/// Load a model written by [`save_model`].
pub fn load_model(path: &Path) -> Result<HybridModel> {
    let bad = |msg: String| Error::BadModelFile(msg);
    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header = lines.next().ok_or_else(|| bad("empty file".into()))??;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 6 || parts[0] != MAGIC {
        return Err(bad(format!("bad header {header:?}")));
    }
    if parts[1] != VERSION {
        return Err(bad(format!("unsupported version {:?}", parts[1])));
    }
    let dims: Vec<usize> = parts[2..]
        .iter()
        .map(|s| s.parse().map_err(|_| bad(format!("bad dimension {s:?}"))))
        .collect::<Result<_>>()?;
    let (n, m, d, e) = (dims[0], dims[1], dims[2], dims[3]);
    let u = read_block(&mut lines, "U", n, d)?;
    let v = read_block(&mut lines, "V", m, d)?;
    let b_r = read_block(&mut lines, "B_R", d, d)?;
    let b_l = read_block(&mut lines, "B_L", d, d)?;
    let w_c = read_block(&mut lines, "W_C", d, e)?;
    if let Some(extra) = lines.next() {
        let extra = extra?;
        if !extra.trim().is_empty() {
            return Err(bad(format!("trailing content {extra:?}")));
        }
    }
    HybridModel::new(u, v, b_r, b_l, w_c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::test_support::random_matrix;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_model(seed: u64) -> HybridModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        HybridModel::new(
            random_matrix(&mut rng, 4, 2),
            random_matrix(&mut rng, 3, 2),
            random_matrix(&mut rng, 2, 2),
            random_matrix(&mut rng, 2, 2),
            random_matrix(&mut rng, 2, 5),
        )
        .unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txt");
        for seed in 0..5 {
            let model = random_model(seed);
            save_model(&model, &path).unwrap();
            let loaded = load_model(&path).unwrap();
            assert_eq!(model, loaded);
        }
    }

    #[test]
    fn save_is_byte_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.txt");
        let b = dir.path().join("b.txt");
        let model = random_model(9);
        save_model(&model, &a).unwrap();
        save_model(&model, &b).unwrap();
        assert_eq!(
            std::fs::read(&a).unwrap(),
            std::fs::read(&b).unwrap()
        );
    }

    #[test]
    fn header_starts_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txt");
        save_model(&random_model(3), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("recf-model v1 4 3 2 5\nU\n"));
    }

    #[test]
    fn load_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txt");
        std::fs::write(&path, "nonsense\n").unwrap();
        assert!(matches!(load_model(&path), Err(Error::BadModelFile(_))));

        std::fs::write(&path, "recf-model v2 1 1 1 1\nU\n1\n").unwrap();
        assert!(matches!(load_model(&path), Err(Error::BadModelFile(_))));
    }

    #[test]
    fn load_rejects_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txt");
        save_model(&random_model(4), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let cut: String = text.lines().take(6).map(|l| format!("{l}\n")).collect();
        std::fs::write(&path, cut).unwrap();
        assert!(matches!(load_model(&path), Err(Error::BadModelFile(_))));
    }
}
