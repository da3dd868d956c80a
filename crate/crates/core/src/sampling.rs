//! Row sampling: the alias table, seeded draws and frequency tabulation.
//!
//! All randomness in the crate flows through [`rng_stream`], a ChaCha8
//! generator (`rand_chacha` 0.9) keyed by a 64-bit seed and a stream id, so
//! every draw is reproducible bit for bit and independent streams can be
//! consumed concurrently.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type SketchRng = ChaCha8Rng;

/// Generator for `(seed, stream)`.
pub fn rng_stream(seed: u64, stream: u64) -> SketchRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Walker/Vose alias table: O(kd) construction, O(1) per draw.
#[derive(Clone, Debug)]
pub struct AliasTable {
    /// `(threshold, alias)` per cell, interleaved so a draw touches one
    /// cache line.
    cells: Vec<(f64, u32)>,
}

impl AliasTable {
    pub fn new(q: &[f64]) -> Result<Self> {
        let m = q.len();
        if m == 0 {
            return Err(Error::InvalidDistribution("empty distribution".into()));
        }
        if m > u32::MAX as usize {
            return Err(Error::InvalidDistribution("too many cells".into()));
        }
        if let Some(i) = q.iter().position(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidDistribution(format!("entry {i} is {}", q[i])));
        }
        let total: f64 = q.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidDistribution("probabilities sum to zero".into()));
        }

        let scale = m as f64 / total;
        let mut scaled: Vec<f64> = q.iter().map(|&x| x * scale).collect();
        let mut threshold = vec![0.0; m];
        let mut alias: Vec<u32> = (0..m as u32).collect();
        let (mut small, mut large): (Vec<usize>, Vec<usize>) = (0..m).partition(|&i| scaled[i] < 1.0);

        while let (Some(&s), Some(&l)) = (small.last(), large.last()) {
            small.pop();
            threshold[s] = scaled[s];
            alias[s] = l as u32;
            scaled[l] = (scaled[l] + scaled[s]) - 1.0;
            if scaled[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        // Leftovers carry mass 1 up to rounding.
        for i in large.into_iter().chain(small) {
            threshold[i] = if q[i] > 0.0 { 1.0 } else { 0.0 };
        }
        // A zero-probability cell must never be returned: its alias must
        // point at a positive cell, and its threshold is zero.
        for i in 0..m {
            if q[i] == 0.0 {
                threshold[i] = 0.0;
                if q[alias[i] as usize] == 0.0 {
                    alias[i] = q.iter().position(|&x| x > 0.0).unwrap() as u32;
                }
            }
        }
        Ok(Self {
            cells: threshold.into_iter().zip(alias).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    #[inline]
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let cell = rng.random_range(0..self.cells.len());
        let u: f64 = rng.random();
        let (threshold, alias) = self.cells[cell];
        if u < threshold {
            cell
        } else {
            alias as usize
        }
    }
}

/// Builds the constant-time sampler for `q`.
pub fn build_sampling_table(q: &[f64]) -> Result<AliasTable> {
    AliasTable::new(q)
}

/// `c` iid draws from the table with the generator for `seed`.
pub fn draw_samples(table: &AliasTable, c: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng_stream(seed, 0);
    draw_with(table, c, &mut rng)
}

pub(crate) fn draw_with<R: Rng + ?Sized>(table: &AliasTable, c: usize, rng: &mut R) -> Vec<usize> {
    (0..c).map(|_| table.draw(rng)).collect()
}

/// Distinct sampled rows with their multiplicities.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleTab {
    /// Distinct row indices, strictly increasing.
    pub rows: Vec<usize>,
    /// Multiplicity of each row; sums to `total`.
    pub counts: Vec<u32>,
    /// Total number of draws `c`.
    pub total: usize,
    pub seed: u64,
}

impl SampleTab {
    /// Number of distinct rows `c'`.
    pub fn distinct(&self) -> usize {
        self.rows.len()
    }
}

/// Sort-based tabulation of raw draws.
pub fn tabulate(indices: &[usize]) -> SampleTab {
    let mut sorted = indices.to_vec();
    sorted.sort_unstable();
    let mut rows = Vec::new();
    let mut counts: Vec<u32> = Vec::new();
    for &i in &sorted {
        if rows.last() == Some(&i) {
            *counts.last_mut().unwrap() += 1;
        } else {
            rows.push(i);
            counts.push(1);
        }
    }
    SampleTab {
        rows,
        counts,
        total: indices.len(),
        seed: 0,
    }
}

/// Counting-array tabulation for draws known to lie in `0..cells`; O(c + cells).
pub fn tabulate_bounded(indices: &[usize], cells: usize) -> SampleTab {
    let mut hist = vec![0u32; cells];
    for &i in indices {
        hist[i] += 1;
    }
    let mut rows = Vec::new();
    let mut counts = Vec::new();
    for (i, &m) in hist.iter().enumerate() {
        if m > 0 {
            rows.push(i);
            counts.push(m);
        }
    }
    SampleTab {
        rows,
        counts,
        total: indices.len(),
        seed: 0,
    }
}
