//! Seeded synthetic datasets: uniform and zipf-skewed sparse vectors,
//! low-rank matrix cells, and the small eight-vector fixture used
//! throughout the tests.

use std::collections::HashSet;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, Zipf};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradient_descent::LmfLayout;
use crate::model_store::PageLayout;
use crate::sparse_data::{Dataset, PageRequestSet, SparseVector};

/// Above this dimension zipf indexes come from rejection sampling instead
/// of a cumulative table.
pub const ZIPF_TABLE_LIMIT: u64 = 10_000_000;

/// Dimension and page size of the fixture.
pub const FIG2_DIMENSION: u64 = 6;
pub const FIG2_PAGE_SIZE: u64 = 2;

/// The eight-vector fixture over a 6-entry model split into three pages of
/// two entries. Page-request sets: u1,u3,u5 -> {0,1}; u2,u4,u8 -> {1,2};
/// u6,u7 -> {0,2}. 19 non-zeros in total.
pub fn gen_fig2() -> Dataset {
    let raw: [(&[u64], &[f64], f64); 8] = [
        (&[0, 2, 3], &[1.0, 3.0, 9.0], 1.0),
        (&[3, 4], &[2.0, 5.0], -1.0),
        (&[1, 3], &[4.0, 1.0], 1.0),
        (&[2, 4, 5], &[7.0, 2.0, 3.0], -1.0),
        (&[0, 1, 2], &[2.0, 6.0, 1.0], 1.0),
        (&[0, 4], &[8.0, 3.0], -1.0),
        (&[1, 5], &[5.0, 2.0], 1.0),
        (&[3, 5], &[6.0, 4.0], -1.0),
    ];
    let vectors = raw
        .iter()
        .enumerate()
        .map(|(i, (idx, val, label))| SparseVector::new(i as u64 + 1, *label, idx.to_vec(), val.to_vec()).unwrap())
        .collect();
    Dataset::new(FIG2_DIMENSION, vectors).unwrap()
}

pub fn fig2_layout() -> PageLayout {
    PageLayout::new(FIG2_DIMENSION, FIG2_PAGE_SIZE).unwrap()
}

pub fn fig2_sets() -> Vec<PageRequestSet> {
    gen_fig2().page_request_sets(&fig2_layout()).unwrap()
}

/// Deterministic per-index weight in `[-1, 1)` of the planted label model.
fn planted_weight(seed: u64, index: u64) -> f64 {
    // splitmix64 finalizer
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

/// `+1` when the planted model scores the example non-negative, else `-1`.
fn planted_label(seed: u64, indexes: &[u64], values: &[f64]) -> f64 {
    let score: f64 = indexes.iter().zip(values).map(|(&i, &v)| planted_weight(seed, i) * v).sum();
    if score >= 0.0 { 1.0 } else { -1.0 }
}

fn labelled_vector(tid: u64, seed: u64, mut indexes: Vec<u64>, rng: &mut ChaCha8Rng) -> SparseVector {
    indexes.sort_unstable();
    let values: Vec<f64> = indexes.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
    let label = planted_label(seed, &indexes, &values);
    SparseVector::new(tid, label, indexes, values).expect("generator produces valid vectors")
}

/// `n` vectors with exactly `nnz` distinct uniformly drawn indexes each.
pub fn gen_uniform(n: usize, d: u64, nnz: usize, seed: u64) -> Result<Dataset> {
    if d == 0 || nnz == 0 || nnz as u64 > d {
        return Err(Error::InvalidArgument(format!("uniform generator needs 1 <= nnz <= d (nnz={nnz}, d={d})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let label_seed = rng.random();
    let vectors = (0..n)
        .map(|t| {
            let indexes = if (nnz as u64) * 2 > d {
                rand::seq::index::sample(&mut rng, d as usize, nnz).into_iter().map(|i| i as u64).collect()
            } else {
                let mut seen = HashSet::with_capacity(nnz);
                while seen.len() < nnz {
                    seen.insert(rng.random_range(0..d));
                }
                seen.into_iter().collect()
            };
            labelled_vector(t as u64, label_seed, indexes, &mut rng)
        })
        .collect();
    Dataset::new(d, vectors)
}

/// Zipf sampler over ranks `1..=d`, mapped to index `rank - 1`.
enum ZipfIndex {
    Table(Vec<f64>),
    Rejection(Zipf<f64>),
}

impl ZipfIndex {
    fn new(d: u64, s: f64) -> Result<Self> {
        if d <= ZIPF_TABLE_LIMIT {
            let mut cdf = Vec::with_capacity(d as usize);
            let mut acc = 0.0;
            for rank in 1..=d {
                acc += (rank as f64).powf(-s);
                cdf.push(acc);
            }
            for c in &mut cdf {
                *c /= acc;
            }
            Ok(ZipfIndex::Table(cdf))
        } else {
            Zipf::new(d as f64, s)
                .map(ZipfIndex::Rejection)
                .map_err(|e| Error::InvalidArgument(format!("zipf: {e}")))
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> u64 {
        match self {
            ZipfIndex::Table(cdf) => {
                let u: f64 = rng.random();
                cdf.partition_point(|&c| c < u).min(cdf.len() - 1) as u64
            }
            ZipfIndex::Rejection(z) => z.sample(rng) as u64 - 1,
        }
    }
}

/// `n` vectors whose index popularity follows `rank^-s`; per-vector nnz is
/// Poisson around `nnz_avg` (at least 1), duplicate draws are dropped.
pub fn gen_skewed(n: usize, d: u64, nnz_avg: usize, s: f64, seed: u64) -> Result<Dataset> {
    if d == 0 || nnz_avg == 0 || s.is_nan() || s <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "skewed generator needs d >= 1, nnz_avg >= 1, s > 0 (d={d}, nnz_avg={nnz_avg}, s={s})"
        )));
    }
    let zipf = ZipfIndex::new(d, s)?;
    let poisson = Poisson::new(nnz_avg as f64).map_err(|e| Error::InvalidArgument(format!("poisson: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let label_seed = rng.random();
    let vectors = (0..n)
        .map(|t| {
            let draws = (poisson.sample(&mut rng) as u64).clamp(1, d);
            let mut indexes: Vec<u64> = (0..draws).map(|_| zipf.sample(&mut rng)).collect();
            indexes.sort_unstable();
            indexes.dedup();
            labelled_vector(t as u64, label_seed, indexes, &mut rng)
        })
        .collect();
    Dataset::new(d, vectors)
}

/// `cells` distinct cells of an `m x n` matrix, every row and column
/// covered, rated by a planted rank-`k` model plus small gaussian noise.
pub fn gen_matrix(m: u64, n: u64, cells: u64, k: u64, seed: u64) -> Result<Dataset> {
    let layout = LmfLayout::new(m, n, k)?;
    let cover = m.max(n);
    if cells < cover || cells > m.saturating_mul(n) {
        return Err(Error::InvalidArgument(format!(
            "matrix generator needs max(m, n) <= cells <= m*n (m={m}, n={n}, cells={cells})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (k as f64).sqrt();
    let left: Vec<f64> = (0..m * k).map(|_| rng.random_range(0.0..scale)).collect();
    let right: Vec<f64> = (0..n * k).map(|_| rng.random_range(0.0..scale)).collect();
    let noise = Normal::new(0.0, 0.01).expect("valid normal");

    let mut cols: Vec<u64> = (0..n).collect();
    cols.shuffle(&mut rng);
    // the first max(m, n) cells pair rows and shuffled columns cyclically
    let mut chosen: Vec<(u64, u64)> = (0..cover).map(|t| (t % m, cols[(t % n) as usize])).collect();
    let mut seen: HashSet<(u64, u64)> = chosen.iter().copied().collect();
    while (chosen.len() as u64) < cells {
        let cell = (rng.random_range(0..m), rng.random_range(0..n));
        if seen.insert(cell) {
            chosen.push(cell);
        }
    }

    let k = k as usize;
    let vectors = chosen
        .into_iter()
        .enumerate()
        .map(|(t, (i, j))| {
            let l = &left[i as usize * k..(i as usize + 1) * k];
            let r = &right[j as usize * k..(j as usize + 1) * k];
            let rating = l.iter().zip(r).map(|(a, b)| a * b).sum::<f64>() + noise.sample(&mut rng);
            layout.cell_vector(i, j, t as u64, rating)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(layout.dimension(), vectors)?.with_lmf(layout)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenKind {
    Uniform,
    Skewed,
    Matrix,
    Fig2,
}

impl FromStr for GenKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(GenKind::Uniform),
            "skewed" => Ok(GenKind::Skewed),
            "matrix" => Ok(GenKind::Matrix),
            "fig2" => Ok(GenKind::Fig2),
            other => Err(Error::InvalidArgument(format!("unknown dataset kind '{other}'"))),
        }
    }
}

/// Generator parameters. For `Matrix`, `n` is the number of cells and the
/// shape comes from `rows x cols x rank`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub kind: GenKind,
    pub n: usize,
    pub d: u64,
    pub nnz: usize,
    pub zipf_s: f64,
    pub rows: u64,
    pub cols: u64,
    pub rank: u64,
    pub seed: u64,
}

impl GenSpec {
    /// Uniform row of the paper-scale dataset table with examples shrunk 1:100.
    pub fn uniform_desk(seed: u64) -> Self {
        GenSpec { kind: GenKind::Uniform, n: 800, d: 1_000_000, nnz: 3000, ..Self::base(seed) }
    }

    /// Skewed row: zipf 1.0, about 300 non-zeros per example.
    pub fn skewed_desk(seed: u64) -> Self {
        GenSpec { kind: GenKind::Skewed, n: 8_192, d: 1_000_000, nnz: 300, zipf_s: 1.0, ..Self::base(seed) }
    }

    /// Matrix row scaled down to 10^4 x 10^2 with 3 * 10^5 cells.
    pub fn matrix_desk(seed: u64) -> Self {
        GenSpec { kind: GenKind::Matrix, n: 300_000, rows: 10_000, cols: 100, rank: 10, ..Self::base(seed) }
    }

    fn base(seed: u64) -> Self {
        GenSpec { kind: GenKind::Fig2, n: 0, d: 0, nnz: 0, zipf_s: 1.0, rows: 0, cols: 0, rank: 0, seed }
    }

    pub fn generate(&self) -> Result<Dataset> {
        match self.kind {
            GenKind::Uniform => gen_uniform(self.n, self.d, self.nnz, self.seed),
            GenKind::Skewed => gen_skewed(self.n, self.d, self.nnz, self.zipf_s, self.seed),
            GenKind::Matrix => gen_matrix(self.rows, self.cols, self.n as u64, self.rank, self.seed),
            GenKind::Fig2 => Ok(gen_fig2()),
        }
    }
}
