//! Observation-mask generators for the experimental missingness regimes.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_store::{Mask, PartialTensor};
use crate::util;

const MAX_RETRIES: u64 = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PatternSpec {
    SquareBlock {
        m: usize,
        n: usize,
        n_obs: usize,
    },
    Staircase {
        m: usize,
        n: usize,
        block_fraction: f64,
    },
    UniformRandom {
        m: usize,
        n: usize,
        density: f64,
        #[serde(default)]
        seed: u64,
    },
}

impl PatternSpec {
    pub fn generate(&self) -> Result<Mask> {
        match *self {
            PatternSpec::SquareBlock { m, n, n_obs } => square_block(m, n, n_obs),
            PatternSpec::Staircase { m, n, block_fraction } => staircase(m, n, block_fraction),
            PatternSpec::UniformRandom { m, n, density, seed } => uniform_random(m, n, density, seed),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match *self {
            PatternSpec::SquareBlock { m, n, .. }
            | PatternSpec::Staircase { m, n, .. }
            | PatternSpec::UniformRandom { m, n, .. } => (m, n),
        }
    }
}

/// First `n_obs` rows and first `n_obs` columns observed; the bottom-right
/// `(m - n_obs) x (n - n_obs)` block is missing.
pub fn square_block(m: usize, n: usize, n_obs: usize) -> Result<Mask> {
    if n_obs == 0 || n_obs >= m.min(n) {
        return Err(Error::InvalidPattern(format!(
            "n_obs must lie in 1..{} for a {m}x{n} square block, got {n_obs}",
            m.min(n)
        )));
    }
    Ok(Mask::from_fn(m, n, |i, j| i < n_obs || j < n_obs))
}

/// Continuous column-height profile of the staircase: `m` at the first
/// column falling along a concave parabola to `m * block_fraction` at the
/// last.
pub fn staircase_profile(m: usize, n: usize, block_fraction: f64) -> Vec<f64> {
    (0..n)
        .map(|j| {
            let t = if n > 1 { j as f64 / (n - 1) as f64 } else { 0.0 };
            m as f64 * (1.0 - (1.0 - block_fraction) * t * t)
        })
        .collect()
}

/// Column `j` observes its top `k(j)` rows, `k` nonincreasing.
/// `k` is the floor of the profile plus one extra row on a leading run of
/// non-full columns, so `|Ω|` is the profile sum rounded to an integer.
pub fn staircase(m: usize, n: usize, block_fraction: f64) -> Result<Mask> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidPattern("staircase needs a nonempty shape".into()));
    }
    if !(block_fraction > 0.0 && block_fraction <= 1.0) {
        return Err(Error::InvalidPattern(format!(
            "block_fraction must lie in (0, 1], got {block_fraction}"
        )));
    }
    if ((m as f64) * block_fraction).floor() < 1.0 {
        return Err(Error::InvalidPattern(format!(
            "block_fraction {block_fraction} leaves the last column of a {m}-row staircase empty"
        )));
    }
    let profile = staircase_profile(m, n, block_fraction);
    let mut heights: Vec<usize> = profile.iter().map(|h| (h.floor() as usize).min(m)).collect();
    let total = profile.iter().sum::<f64>().round() as usize;
    let mut extra = total.saturating_sub(heights.iter().sum());
    // adding to the first non-full columns keeps the heights nonincreasing
    for h in heights.iter_mut() {
        if extra == 0 {
            break;
        }
        if *h < m {
            *h += 1;
            extra -= 1;
        }
    }
    Ok(Mask::from_fn(m, n, |i, j| i < heights[j]))
}

/// Independent Bernoulli(`density`) cells, redrawn until no row or column
/// is empty.
pub fn uniform_random(m: usize, n: usize, density: f64, seed: u64) -> Result<Mask> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::InvalidPattern(format!("density must lie in (0, 1], got {density}")));
    }
    if m == 0 || n == 0 {
        return Err(Error::InvalidPattern("uniform pattern needs a nonempty shape".into()));
    }
    for attempt in 0..MAX_RETRIES {
        let mut rng = util::stream(seed, &[attempt]);
        let mask = Mask::from_fn(m, n, |_, _| rng.gen::<f64>() < density);
        if mask.has_no_empty_lines() {
            return Ok(mask);
        }
    }
    Err(Error::InvalidPattern(format!(
        "no {m}x{n} mask without empty rows or columns at density {density} after {MAX_RETRIES} draws"
    )))
}

/// Seeded row and column permutation followed by the leading `rows x cols`
/// block. Labels travel with their rows and columns.
pub fn shuffle_and_crop(t: &PartialTensor, rows: usize, cols: usize, seed: u64) -> Result<PartialTensor> {
    if rows == 0 || cols == 0 || rows > t.rows() || cols > t.cols() {
        return Err(Error::InvalidParameter(format!(
            "crop {rows}x{cols} does not fit in {}x{}",
            t.rows(),
            t.cols()
        )));
    }
    let mut row_perm: Vec<usize> = (0..t.rows()).collect();
    let mut col_perm: Vec<usize> = (0..t.cols()).collect();
    row_perm.shuffle(&mut util::stream(seed, &[0]));
    col_perm.shuffle(&mut util::stream(seed, &[1]));
    t.select(&row_perm[..rows], &col_perm[..cols])
}
