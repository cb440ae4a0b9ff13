//! Vector reordering within one U-page.
//!
//! Each heuristic returns a permutation of local positions `[0, n)` that
//! tries to place vectors with overlapping page-request sets next to each
//! other, so that consecutive set requests share resident pages.

mod kcenter;
mod lsh;
mod radix;

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use kcenter::{default_k, kcenter_clusters, reorder_kcenter};
pub use lsh::{minwise_signature, reorder_lsh, LshIndex, MinwiseHash};
pub use radix::{page_frequency_ranks, reorder_radix};

use crate::error::{Error, Result};
use crate::sparse_data::{set_diff_cardinality, PageRequestSet};

pub const DEFAULT_LSH_HASHES: usize = 16;
pub const DEFAULT_LSH_BANDS: usize = 4;

/// Reordering heuristic and its parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Heuristic {
    None,
    Radix,
    Lsh { hashes: usize, bands: usize },
    /// `k = None` picks the default cluster count per U-page.
    Kcenter { k: Option<usize> },
}

impl Heuristic {
    pub const ALL_DEFAULTS: [Heuristic; 4] = [
        Heuristic::None,
        Heuristic::Radix,
        Heuristic::Lsh { hashes: DEFAULT_LSH_HASHES, bands: DEFAULT_LSH_BANDS },
        Heuristic::Kcenter { k: None },
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Heuristic::None => "none",
            Heuristic::Radix => "radix",
            Heuristic::Lsh { .. } => "lsh",
            Heuristic::Kcenter { .. } => "kcenter",
        }
    }
}

impl fmt::Display for Heuristic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Heuristic::Lsh { hashes, bands } => write!(f, "lsh(m={hashes},b={bands})"),
            Heuristic::Kcenter { k: Some(k) } => write!(f, "kcenter(k={k})"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for Heuristic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Heuristic::None),
            "radix" => Ok(Heuristic::Radix),
            "lsh" => Ok(Heuristic::Lsh { hashes: DEFAULT_LSH_HASHES, bands: DEFAULT_LSH_BANDS }),
            "kcenter" => Ok(Heuristic::Kcenter { k: None }),
            other => Err(Error::InvalidArgument(format!("unknown reorder heuristic '{other}'"))),
        }
    }
}

/// A permutation of local vector positions produced by one heuristic run.
#[derive(Clone, Debug, PartialEq)]
pub struct Reordering {
    pub permutation: Vec<usize>,
    pub heuristic: Heuristic,
    pub seed: u64,
    pub elapsed: Duration,
}

impl Reordering {
    pub fn len(&self) -> usize {
        self.permutation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.permutation.is_empty()
    }

    pub fn is_bijection(&self) -> bool {
        is_permutation(&self.permutation)
    }
}

pub fn is_permutation(order: &[usize]) -> bool {
    let mut seen = vec![false; order.len()];
    order.iter().all(|&i| i < seen.len() && !std::mem::replace(&mut seen[i], true))
}

/// Sum of `|set(next) \ set(previous)|` over consecutive vectors in `order`.
pub fn objective(order: &[usize], sets: &[PageRequestSet]) -> usize {
    order
        .windows(2)
        .map(|w| set_diff_cardinality(&sets[w[1]], &sets[w[0]]))
        .sum()
}

pub fn reorder_none(n: usize) -> Vec<usize> {
    (0..n).collect()
}

/// Runs `heuristic` over `sets`; `budget` is the memory budget in pages.
pub fn reorder(sets: &[PageRequestSet], heuristic: Heuristic, budget: usize, seed: u64) -> Result<Reordering> {
    let started = Instant::now();
    let permutation = match heuristic {
        Heuristic::None => reorder_none(sets.len()),
        Heuristic::Radix => reorder_radix(sets),
        Heuristic::Lsh { hashes, bands } => reorder_lsh(sets, hashes, bands, seed)?,
        Heuristic::Kcenter { k } => reorder_kcenter(sets, k, budget, seed)?,
    };
    Ok(Reordering { permutation, heuristic, seed, elapsed: started.elapsed() })
}
