//! Text checkpoint format.
//!
//! ```text
//! emm-checkpoint 1
//! tags <C>
//! features <D>
//! mode <name>
//! chi <χ₁> <χ₂>
//! eta <η>
//! lambda <λ_1> ... <λ_C>
//! w <w_1> ... <w_C>
//! mu
//! <μ_11> ... <μ_1D>
//! ...
//! ```
//!
//! Reals are written in scientific notation with 17 significant digits, which
//! round-trips every `f64` exactly and is independent of locale.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::ModelParams;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

const MAGIC: &str = "emm-checkpoint";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub mode: String,
}

fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_reals<W: Write>(out: &mut W, key: Option<&str>, values: &[f64]) -> std::io::Result<()> {
    let mut first = true;
    if let Some(k) = key {
        out.write_all(k.as_bytes())?;
        first = false;
    }
    for &v in values {
        if !first {
            out.write_all(b" ")?;
        }
        out.write_all(fmt_real(v).as_bytes())?;
        first = false;
    }
    out.write_all(b"\n")
}

pub fn write_checkpoint_to<W: Write>(ckpt: &Checkpoint, out: &mut W) -> std::io::Result<()> {
    let p = &ckpt.params;
    writeln!(out, "{MAGIC} {VERSION}")?;
    writeln!(out, "tags {}", p.num_tags())?;
    writeln!(out, "features {}", p.num_features())?;
    writeln!(out, "mode {}", ckpt.mode)?;
    writeln!(out, "chi {} {}", fmt_real(p.chi.0), fmt_real(p.chi.1))?;
    writeln!(out, "eta {}", fmt_real(p.eta))?;
    write_reals(out, Some("lambda"), &p.lambda)?;
    write_reals(out, Some("w"), &p.w)?;
    writeln!(out, "mu")?;
    for row in p.mu.iter_rows() {
        write_reals(out, None, row)?;
    }
    Ok(())
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    write_checkpoint_to(ckpt, &mut out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

struct LineReader<'a> {
    path: &'a Path,
    lines: std::iter::Enumerate<std::io::Lines<BufReader<File>>>,
    lineno: usize,
}

impl LineReader<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line: self.lineno,
            message: msg.into(),
        }
    }

    fn next_line(&mut self) -> Result<String> {
        match self.lines.next() {
            Some((i, line)) => {
                self.lineno = i + 1;
                line.map_err(|e| Error::io(self.path, e))
            }
            None => {
                self.lineno += 1;
                Err(self.err("unexpected end of checkpoint"))
            }
        }
    }

    /// Reads `key v1 v2 ...` and returns the value tokens.
    fn keyed(&mut self, key: &str) -> Result<Vec<String>> {
        let line = self.next_line()?;
        let mut tokens = line.split_ascii_whitespace();
        if tokens.next() != Some(key) {
            return Err(self.err(format!("expected `{key}`")));
        }
        Ok(tokens.map(str::to_string).collect())
    }

    fn reals(&self, tokens: &[String], expected: usize) -> Result<Vec<f64>> {
        if tokens.len() != expected {
            return Err(self.err(format!("expected {expected} values, found {}", tokens.len())));
        }
        tokens
            .iter()
            .map(|t| t.parse::<f64>().map_err(|_| self.err(format!("bad real {t:?}"))))
            .collect()
    }

    fn count(&self, tokens: &[String]) -> Result<usize> {
        match tokens {
            [t] => t.parse().map_err(|_| self.err(format!("bad count {t:?}"))),
            _ => Err(self.err("expected a single count")),
        }
    }
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = LineReader {
        path,
        lines: BufReader::new(file).lines().enumerate(),
        lineno: 0,
    };
    let magic = r.keyed(MAGIC)?;
    if magic != [VERSION.to_string()] {
        return Err(r.err(format!("unsupported checkpoint version {magic:?}")));
    }
    let tags_tok = r.keyed("tags")?;
    let tags = r.count(&tags_tok)?;
    let feat_tok = r.keyed("features")?;
    let features = r.count(&feat_tok)?;
    let mode = match r.keyed("mode")?.as_slice() {
        [m] => m.clone(),
        _ => return Err(r.err("expected a single mode name")),
    };
    let chi_tok = r.keyed("chi")?;
    let chi = r.reals(&chi_tok, 2)?;
    let eta_tok = r.keyed("eta")?;
    let eta = r.reals(&eta_tok, 1)?[0];
    let lambda_tok = r.keyed("lambda")?;
    let lambda = r.reals(&lambda_tok, tags)?;
    let w_tok = r.keyed("w")?;
    let w = r.reals(&w_tok, tags)?;
    if !r.keyed("mu")?.is_empty() {
        return Err(r.err("`mu` takes no values on its own line"));
    }
    let mut mu = Vec::with_capacity(tags * features);
    for _ in 0..tags {
        let line = r.next_line()?;
        let tokens: Vec<String> = line.split_ascii_whitespace().map(str::to_string).collect();
        mu.extend(r.reals(&tokens, features)?);
    }
    let params = ModelParams {
        lambda,
        mu: Matrix::from_vec(tags, features, mu),
        w,
        eta,
        chi: (chi[0], chi[1]),
    };
    params.validate()?;
    Ok(Checkpoint { params, mode })
}
