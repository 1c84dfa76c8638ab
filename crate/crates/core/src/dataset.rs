//! Binary classification datasets: a separable 2-D task, two interleaved
//! half-moons, and two-class subsets of the 8×8 handwritten digits CSV.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const LINEAR_DEFAULT_SIZE: usize = 51;
pub const NONLINEAR_DEFAULT_SIZE: usize = 863;
pub const DIGITS_PIXELS: usize = 64;
const DIGITS_MAX_PIXEL: f64 = 16.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vec<f64>,
    pub name: String,
}

impl Dataset {
    pub fn new(x: Matrix, y: Vec<f64>, name: impl Into<String>) -> Result<Self> {
        if x.rows() == 0 {
            return Err(Error::InvalidArgument("dataset has no examples".into()));
        }
        if x.rows() != y.len() {
            return Err(Error::Shape(format!(
                "{} feature rows against {} labels",
                x.rows(),
                y.len()
            )));
        }
        if let Some(i) = x.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite feature in row {}",
                i / x.cols().max(1)
            )));
        }
        if let Some(i) = y.iter().position(|&t| t != 0.0 && t != 1.0) {
            return Err(Error::InvalidArgument(format!(
                "label {} at row {i} is not binary",
                y[i]
            )));
        }
        Ok(Self {
            x,
            y,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.x.cols()
    }

    fn subset(&self, rows: &[usize], name: String) -> Result<Dataset> {
        let mut data = Vec::with_capacity(rows.len() * self.x.cols());
        for &r in rows {
            data.extend_from_slice(self.x.row(r));
        }
        let x = Matrix::from_vec(rows.len(), self.x.cols(), data)?;
        let y = rows.iter().map(|&r| self.y[r]).collect();
        Dataset::new(x, y, name)
    }

    /// Writes `features…,label` rows without a header.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (row, label) in (0..self.len()).map(|r| (self.x.row(r), self.y[r])) {
            for v in row {
                write!(out, "{v},")?;
            }
            writeln!(out, "{}", label as u8)?;
        }
        Ok(())
    }
}

/// Uniform points in `[-1, 1]²` labeled by a seeded random line; points
/// closer than `margin` to the line are redrawn.
pub fn gen_linear(m: usize, seed: u64, margin: f64) -> Result<Dataset> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 examples, got {m}"
        )));
    }
    if !(margin > 0.0 && margin < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "margin must lie in (0, 1), got {margin}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (normal, offset) = linear_boundary(&mut rng);
    let mut data = Vec::with_capacity(2 * m);
    let mut y = Vec::with_capacity(m);
    while y.len() < m {
        let p = [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)];
        let signed = normal[0] * p[0] + normal[1] * p[1] - offset;
        if signed.abs() < margin {
            continue;
        }
        data.extend_from_slice(&p);
        y.push(if signed > 0.0 { 1.0 } else { 0.0 });
    }
    Dataset::new(Matrix::from_vec(m, 2, data)?, y, "linear")
}

/// Unit normal and offset of the separating line used by [`gen_linear`] for `seed`.
pub fn linear_boundary_for_seed(seed: u64) -> ([f64; 2], f64) {
    linear_boundary(&mut ChaCha8Rng::seed_from_u64(seed))
}

fn linear_boundary(rng: &mut ChaCha8Rng) -> ([f64; 2], f64) {
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let offset: f64 = rng.random_range(-0.25..=0.25);
    ([angle.cos(), angle.sin()], offset)
}

/// Two interleaved half-moons with isotropic Gaussian jitter.
///
/// Class 0 lies on the upper unit half-circle around the origin, class 1 on
/// the lower unit half-circle around `(1, 0.5)`. Classes alternate by index.
pub fn gen_nonlinear(m: usize, seed: u64, noise: f64) -> Result<Dataset> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 examples, got {m}"
        )));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "noise must be >= 0, got {noise}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, noise).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut data = Vec::with_capacity(2 * m);
    let mut y = Vec::with_capacity(m);
    for i in 0..m {
        let t: f64 = rng.random_range(0.0..=std::f64::consts::PI);
        let label = (i % 2) as f64;
        let (px, py) = if label == 0.0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        let (jx, jy) = if noise > 0.0 {
            (jitter.sample(&mut rng), jitter.sample(&mut rng))
        } else {
            (0.0, 0.0)
        };
        data.push(px + jx);
        data.push(py + jy);
        y.push(label);
    }
    Dataset::new(Matrix::from_vec(m, 2, data)?, y, "nonlinear")
}

/// One row of the digits CSV: 64 pixel intensities in `[0, 16]` and a digit label.
#[derive(Debug, Clone, PartialEq)]
pub struct DigitRow {
    pub pixels: Vec<u8>,
    pub label: u8,
}

/// Reads every row of a headerless digits CSV.
pub fn read_digits_rows(path: impl AsRef<Path>) -> Result<Vec<DigitRow>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(parse_digit_row(&line, line_no)?);
    }
    Ok(rows)
}

fn parse_digit_row(line: &str, line_no: usize) -> Result<DigitRow> {
    let parse_err = |message: String| Error::Parse {
        line: line_no,
        message,
    };
    let fields: Vec<&str> = line.trim().split(',').map(str::trim).collect();
    if fields.len() != DIGITS_PIXELS + 1 {
        return Err(parse_err(format!(
            "expected {} fields, found {}",
            DIGITS_PIXELS + 1,
            fields.len()
        )));
    }
    let parse_int = |s: &str, max: u8| -> Result<u8> {
        // Some exports write integers as "3.0".
        let v: f64 = s
            .parse()
            .map_err(|_| parse_err(format!("{s:?} is not a number")))?;
        if v.fract() != 0.0 || v < 0.0 || v > f64::from(max) {
            return Err(parse_err(format!("{s:?} is not an integer in [0, {max}]")));
        }
        Ok(v as u8)
    };
    let pixels = fields[..DIGITS_PIXELS]
        .iter()
        .map(|s| parse_int(s, DIGITS_MAX_PIXEL as u8))
        .collect::<Result<Vec<_>>>()?;
    let label = parse_int(fields[DIGITS_PIXELS], 9)?;
    Ok(DigitRow { pixels, label })
}

/// Rows labeled `class_a` (→ 0) or `class_b` (→ 1), pixels scaled to `[0, 1]`.
pub fn load_digits_csv(path: impl AsRef<Path>, class_a: u8, class_b: u8) -> Result<Dataset> {
    if class_a == class_b || class_a > 9 || class_b > 9 {
        return Err(Error::InvalidArgument(format!(
            "need two distinct digit classes, got {class_a} and {class_b}"
        )));
    }
    let rows = read_digits_rows(path)?;
    let mut data = Vec::new();
    let mut y = Vec::new();
    for row in rows
        .iter()
        .filter(|r| r.label == class_a || r.label == class_b)
    {
        data.extend(row.pixels.iter().map(|&p| f64::from(p) / DIGITS_MAX_PIXEL));
        y.push(if row.label == class_b { 1.0 } else { 0.0 });
    }
    if y.is_empty() {
        return Err(Error::EmptyClass { class_a, class_b });
    }
    let x = Matrix::from_vec(y.len(), DIGITS_PIXELS, data)?;
    Dataset::new(x, y, format!("digits-{class_a}v{class_b}"))
}

/// Seeded shuffle, then the first `⌈m · test_fraction⌉` examples form the test set.
pub fn split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let (train_idx, test_idx) = split_indices(ds.len(), test_fraction, seed)?;
    let train = ds.subset(&train_idx, format!("{}-train", ds.name))?;
    let test = ds.subset(&test_idx, format!("{}-test", ds.name))?;
    Ok((train, test))
}

/// Index form of [`split`]: `(train, test)` row indices into the original set.
pub fn split_indices(m: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let n_test = (m as f64 * test_fraction - 1e-9).ceil().max(0.0) as usize;
    if n_test == 0 || n_test >= m {
        return Err(Error::InvalidArgument(format!(
            "splitting {m} examples with test fraction {test_fraction} leaves an empty side"
        )));
    }
    let mut perm: Vec<usize> = (0..m).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train = perm.split_off(n_test);
    Ok((train, perm))
}
