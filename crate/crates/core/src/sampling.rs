//! Seeded synthetic data: a single Gaussian (the over-specified regime),
//! a genuine symmetric two-component mixture (high SNR), and a shuffled
//! train/validation split.
//!
//! Normal variate `k` of a dataset is produced by Box–Muller from the
//! 64-bit words `2⌊k/2⌋` and `2⌊k/2⌋ + 1` of a ChaCha8 stream keyed by the
//! seed. Because ChaCha is seekable, blocks of rows are generated in
//! parallel and still depend only on `(seed, index)`.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::numeric::mix64;
use crate::params::TruthSpec;

/// Normals generated per parallel block (even, so pairs never straddle).
const BLOCK: usize = 1 << 12;
const SIGN_STREAM: u64 = 1;

/// `n × d` row-major samples plus the metadata they were generated from.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<f64>,
    n: usize,
    d: usize,
    pub seed: u64,
    pub truth: TruthSpec,
}

impl Dataset {
    pub fn new(samples: Vec<f64>, n: usize, d: usize, seed: u64, truth: TruthSpec) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::invalid(format!("dataset needs n >= 1 and d >= 1, got n={n}, d={d}")));
        }
        check_dim(n * d, samples.len())?;
        check_dim(d, truth.dim())?;
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("dataset contains non-finite samples"));
        }
        Ok(Self { samples, n, d, seed, truth })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.samples[i * self.d..(i + 1) * self.d]
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    fn subset(&self, idx: &[usize]) -> Self {
        let mut samples = Vec::with_capacity(idx.len() * self.d);
        for &i in idx {
            samples.extend_from_slice(self.row(i));
        }
        Self { samples, n: idx.len(), d: self.d, seed: self.seed, truth: self.truth.clone() }
    }

    /// Write the dataset CSV: a `#` metadata line, then one row per sample.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        out.write_all(self.to_csv_string().as_bytes())?;
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::with_capacity(self.samples.len() * 24 + 128);
        let star: Vec<String> = self.truth.theta_star.iter().map(|v| fmt17(*v)).collect();
        let _ = writeln!(
            s,
            "# d={} n={} seed={} theta_star={} sigma_star2={}",
            self.d,
            self.n,
            self.seed,
            star.join(","),
            fmt17(self.truth.sigma_star2)
        );
        for i in 0..self.n {
            for (j, v) in self.row(i).iter().enumerate() {
                if j > 0 {
                    s.push(',');
                }
                s.push_str(&fmt17(*v));
            }
            s.push('\n');
        }
        s
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::parse_csv(std::io::BufReader::new(file))
    }

    pub fn parse_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty dataset file".into()))??;
        let meta = parse_header(&header)?;
        let mut samples = Vec::with_capacity(meta.n * meta.d);
        let mut rows = 0usize;
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let before = samples.len();
            for field in line.split(',') {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::Parse(format!("line {}: bad number {field:?}", lineno + 2))
                })?;
                samples.push(v);
            }
            if samples.len() - before != meta.d {
                return Err(Error::Parse(format!(
                    "line {}: expected {} fields, got {}",
                    lineno + 2,
                    meta.d,
                    samples.len() - before
                )));
            }
            rows += 1;
        }
        if rows != meta.n {
            return Err(Error::Parse(format!("header says n={}, found {rows} rows", meta.n)));
        }
        let truth = TruthSpec::new(meta.theta_star, meta.sigma_star2)
            .map_err(|e| Error::Parse(format!("header truth: {e}")))?;
        Dataset::new(samples, meta.n, meta.d, meta.seed, truth)
    }
}

struct Header {
    d: usize,
    n: usize,
    seed: u64,
    theta_star: Vec<f64>,
    sigma_star2: f64,
}

fn parse_header(line: &str) -> Result<Header> {
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| Error::Parse("dataset header must start with '#'".into()))?;
    let (mut d, mut n, mut seed, mut star, mut s2) = (None, None, None, None, None);
    for token in body.split_whitespace() {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("header token {token:?} is not key=value")))?;
        let bad = |_| Error::Parse(format!("header field {key} has bad value {value:?}"));
        match key {
            "d" => d = Some(value.parse::<usize>().map_err(|e| bad(e.to_string()))?),
            "n" => n = Some(value.parse::<usize>().map_err(|e| bad(e.to_string()))?),
            "seed" => seed = Some(value.parse::<u64>().map_err(|e| bad(e.to_string()))?),
            "theta_star" => {
                star = Some(
                    value
                        .split(',')
                        .map(|v| v.parse::<f64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|e| bad(e.to_string()))?,
                )
            }
            "sigma_star2" => s2 = Some(value.parse::<f64>().map_err(|e| bad(e.to_string()))?),
            _ => return Err(Error::Parse(format!("unknown header field {key:?}"))),
        }
    }
    let missing = |k: &str| Error::Parse(format!("header is missing {k}"));
    Ok(Header {
        d: d.ok_or_else(|| missing("d"))?,
        n: n.ok_or_else(|| missing("n"))?,
        seed: seed.ok_or_else(|| missing("seed"))?,
        theta_star: star.ok_or_else(|| missing("theta_star"))?,
        sigma_star2: s2.ok_or_else(|| missing("sigma_star2"))?,
    })
}

/// 17 significant digits: enough to round-trip any `f64`.
fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Train and validation parts of a [`Dataset`]; disjoint by index.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: Dataset,
    pub validation: Option<Dataset>,
}

impl SplitDataset {
    pub fn validation_n(&self) -> usize {
        self.validation.as_ref().map_or(0, Dataset::n)
    }
}

fn check_shape(n: usize, d: usize, truth: &TruthSpec) -> Result<()> {
    if n == 0 || d == 0 {
        return Err(Error::invalid(format!("need n >= 1 and d >= 1, got n={n}, d={d}")));
    }
    check_dim(d, truth.dim())
}

#[inline]
fn unit_open(word: u64) -> f64 {
    ((word >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[inline]
fn unit_closed_open(word: u64) -> f64 {
    (word >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normals `start..start+out.len()` of the stream keyed by `seed`.
/// `start` must be even.
fn fill_normals(seed: u64, start: usize, out: &mut [f64]) {
    debug_assert!(start % 2 == 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Two u64 per pair, two 32-bit words per u64.
    rng.set_word_pos(2 * start as u128);
    for pair in out.chunks_mut(2) {
        let u1 = unit_open(rng.next_u64());
        let u2 = unit_closed_open(rng.next_u64());
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        pair[0] = r * c;
        if pair.len() > 1 {
            pair[1] = r * s;
        }
    }
}

pub(crate) fn standard_normals(seed: u64, count: usize) -> Vec<f64> {
    let mut z = vec![0.0; count];
    z.par_chunks_mut(BLOCK)
        .enumerate()
        .for_each(|(b, chunk)| fill_normals(seed, b * BLOCK, chunk));
    z
}

/// `n` i.i.d. draws from `N(θ*, σ*² I_d)`.
pub fn sample_gaussian(n: usize, d: usize, truth: &TruthSpec, seed: u64) -> Result<Dataset> {
    check_shape(n, d, truth)?;
    let sd = truth.sigma_star2.sqrt();
    let mut x = standard_normals(seed, n * d);
    for row in x.chunks_mut(d) {
        for (v, m) in row.iter_mut().zip(&truth.theta_star) {
            *v = m + sd * *v;
        }
    }
    Dataset::new(x, n, d, seed, truth.clone())
}

/// `n` i.i.d. draws from `½N(−θ*, σ*² I) + ½N(θ*, σ*² I)`. Component
/// labels come from a separate ChaCha stream of the same key.
pub fn sample_symmetric_mixture(n: usize, d: usize, truth: &TruthSpec, seed: u64) -> Result<Dataset> {
    check_shape(n, d, truth)?;
    let sd = truth.sigma_star2.sqrt();
    let mut x = standard_normals(seed, n * d);
    x.par_chunks_mut(BLOCK * d).enumerate().for_each(|(b, rows)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(SIGN_STREAM);
        rng.set_word_pos(2 * (b * BLOCK) as u128);
        for row in rows.chunks_mut(d) {
            let sign = if rng.next_u64() >> 63 == 1 { 1.0 } else { -1.0 };
            for (v, m) in row.iter_mut().zip(&truth.theta_star) {
                *v = sign * m + sd * *v;
            }
        }
    });
    Dataset::new(x, n, d, seed, truth.clone())
}

/// Shuffled split with `floor(n · val_fraction)` validation rows. Both parts
/// keep the source's row order.
pub fn split_train_val(data: &Dataset, val_fraction: f64, seed: u64) -> Result<SplitDataset> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::invalid(format!("val_fraction must lie in [0, 1), got {val_fraction}")));
    }
    let n = data.n();
    let n_val = (n as f64 * val_fraction).floor() as usize;
    if val_fraction == 0.0 {
        return Ok(SplitDataset { train: data.clone(), validation: None });
    }
    if n_val == 0 {
        return Err(Error::invalid(format!(
            "val_fraction {val_fraction} leaves no validation rows out of n={n}"
        )));
    }
    if n_val >= n {
        return Err(Error::invalid("validation split would consume every row"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ 0x5eed_5711_7000_0000));
    idx.shuffle(&mut rng);
    let (val, train) = idx.split_at_mut(n_val);
    val.sort_unstable();
    train.sort_unstable();
    Ok(SplitDataset { train: data.subset(train), validation: Some(data.subset(val)) })
}
