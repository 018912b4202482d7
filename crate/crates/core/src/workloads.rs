//! Model descriptions, their GEMM workloads, and tensor data sources.

use std::fmt;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mpgemm::GemmProblem;
use crate::quant::GroupPadding;
use crate::tensor::Tensor;

/// Transformer dimensions relevant to the weight GEMMs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub hidden_size: usize,
    pub num_layers: usize,
    /// FFN inner dimension over hidden size.
    pub ffn_mult: f64,
    pub num_heads: usize,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 || self.num_layers == 0 || self.num_heads == 0 {
            return Err(Error::Config(format!(
                "{}: dimensions must be positive",
                self.name
            )));
        }
        if !(self.ffn_mult >= 1.0 && self.ffn_mult.is_finite()) {
            return Err(Error::Config(format!(
                "{}: ffn_mult must be at least 1, got {}",
                self.name, self.ffn_mult
            )));
        }
        let ffn = self.ffn_mult * self.hidden_size as f64;
        if (ffn - ffn.round()).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "{}: ffn_mult * hidden_size = {ffn} is not an integer",
                self.name
            )));
        }
        Ok(())
    }

    pub fn ffn_dim(&self) -> usize {
        (self.ffn_mult * self.hidden_size as f64).round() as usize
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let m: ModelSpec = toml::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        ModelSpec::from_toml(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GemmRole {
    #[serde(rename = "qkv")]
    Qkv,
    #[serde(rename = "out_proj")]
    OutProj,
    #[serde(rename = "ffn_up")]
    FfnUp,
    #[serde(rename = "ffn_down")]
    FfnDown,
}

impl fmt::Display for GemmRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GemmRole::Qkv => "qkv",
            GemmRole::OutProj => "out_proj",
            GemmRole::FfnUp => "ffn_up",
            GemmRole::FfnDown => "ffn_down",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedGemm {
    pub layer: usize,
    pub role: GemmRole,
    pub problem: GemmProblem,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub model: ModelSpec,
    pub batch: usize,
    pub gemms: Vec<TaggedGemm>,
}

impl WorkloadSpec {
    pub fn total_macs(&self) -> u64 {
        self.gemms.iter().map(|g| g.problem.macs()).sum()
    }
}

/// The four weight GEMMs of every layer. Attention score GEMMs have no
/// quantized weight operand and are not included.
pub fn expand_workload(model: &ModelSpec, batch: usize, group_size: usize) -> Result<WorkloadSpec> {
    expand_workload_padded(model, batch, group_size, GroupPadding::Strict)
}

/// [`expand_workload`] with an explicit policy for ragged final groups.
pub fn expand_workload_padded(
    model: &ModelSpec,
    batch: usize,
    group_size: usize,
    padding: GroupPadding,
) -> Result<WorkloadSpec> {
    model.validate()?;
    let h = model.hidden_size;
    let f = model.ffn_dim();
    let shapes = [
        (GemmRole::Qkv, 3 * h, h),
        (GemmRole::OutProj, h, h),
        (GemmRole::FfnUp, f, h),
        (GemmRole::FfnDown, h, f),
    ];
    let mut gemms = Vec::with_capacity(4 * model.num_layers);
    for layer in 0..model.num_layers {
        for (role, n, k) in shapes {
            gemms.push(TaggedGemm {
                layer,
                role,
                problem: GemmProblem::new_padded(batch, n, k, group_size, padding)?,
            });
        }
    }
    Ok(WorkloadSpec {
        model: model.clone(),
        batch,
        gemms,
    })
}

/// Seeded standard-normal `n x k` tensor.
pub fn synth_weights(n: usize, k: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * k)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    Tensor::new(n, k, data).expect("length is n * k")
}

const BINARY_MAGIC: &[u8; 4] = b"MPXT";

/// Load activation samples, detecting the binary form by its magic bytes.
///
/// Text form: a `rows cols` header line, then whitespace-separated reals.
/// Lines starting with `#` are comments. Binary form: `MPXT`, rows and cols
/// as little-endian u64, then row-major little-endian f64.
pub fn load_activation_samples(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let t = if bytes.starts_with(BINARY_MAGIC) {
        parse_binary(path, &bytes)?
    } else {
        let text = String::from_utf8(bytes).map_err(|_| Error::Parse {
            path: path.into(),
            line: 1,
            message: "not UTF-8 text and no MPXT magic".into(),
        })?;
        parse_text(path, &text)?
    };
    if let Some((row, col, value)) = t.first_non_finite() {
        return Err(Error::NonFiniteSample {
            path: path.into(),
            row,
            col,
            token: value.to_string(),
        });
    }
    Ok(t)
}

fn parse_text(path: &Path, text: &str) -> Result<Tensor> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.into(),
        line,
        message,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (hline, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing \"rows cols\" header".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| parse_err(hline, format!("bad header {header:?}: {e}")))?;
    let [rows, cols] = dims[..] else {
        return Err(parse_err(hline, format!("header needs two integers, got {header:?}")));
    };

    let mut data = Vec::with_capacity(rows * cols);
    for (line, content) in lines {
        for token in content.split_whitespace() {
            let idx = data.len();
            let (row, col) = idx.checked_div(cols).map_or((idx, 0), |r| (r, idx % cols));
            let v: f64 = token.parse().map_err(|_| {
                parse_err(line, format!("bad number {token:?} at row {row}, column {col}"))
            })?;
            if !v.is_finite() {
                return Err(Error::NonFiniteSample {
                    path: path.into(),
                    row,
                    col,
                    token: token.into(),
                });
            }
            data.push(v);
        }
    }
    if data.len() != rows * cols {
        return Err(parse_err(
            hline,
            format!(
                "header declares {rows}x{cols} = {} values, found {}",
                rows * cols,
                data.len()
            ),
        ));
    }
    Tensor::new(rows, cols, data)
}

fn parse_binary(path: &Path, bytes: &[u8]) -> Result<Tensor> {
    let err = |message: String| Error::Parse {
        path: path.into(),
        line: 0,
        message,
    };
    if bytes.len() < 20 {
        return Err(err("binary header truncated".into()));
    }
    let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
    let (rows, cols) = (word(4) as usize, word(12) as usize);
    let body = &bytes[20..];
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| err(format!("header {rows}x{cols} overflows")))?;
    if body.len() != expected {
        return Err(err(format!(
            "header declares {rows}x{cols} ({expected} bytes), body has {} bytes",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(rows, cols, data)
}

/// Write the text form. Values use the shortest round-tripping decimal.
pub fn save_activation_samples_text(path: &Path, t: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{} {}", t.rows(), t.cols())?;
    for r in 0..t.rows() {
        let line: Vec<String> = t.row(r).iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_activation_samples_binary(path: &Path, t: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&(t.rows() as u64).to_le_bytes())?;
    w.write_all(&(t.cols() as u64).to_le_bytes())?;
    for v in t.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}
