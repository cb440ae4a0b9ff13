//! Grouping of consecutive vectors into batches whose union page set fits
//! the memory budget.

use crate::sparse_data::PageRequestSet;

/// Largest input accepted by [`brute_force_batches`].
pub const BRUTE_FORCE_MAX: usize = 20;

/// A run of consecutive vectors (positions in the processing order) and
/// the union of their page-request sets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub members: std::ops::Range<usize>,
    pub pages: PageRequestSet,
}

/// The vector at `position` needs more pages than the budget allows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Oversized {
    pub position: usize,
    pub pages: usize,
    pub budget: usize,
}

fn check_sizes(sets: &[PageRequestSet], budget: usize) -> Result<(), Oversized> {
    match sets.iter().position(|s| s.len() > budget) {
        Some(position) => Err(Oversized { position, pages: sets[position].len(), budget }),
        None => Ok(()),
    }
}

/// Greedy batching: keep appending vectors while the running union fits.
pub fn greedy_batches(sets: &[PageRequestSet], budget: usize) -> Result<Vec<Batch>, Oversized> {
    check_sizes(sets, budget)?;
    let mut batches = Vec::new();
    let mut start = 0;
    let mut union = PageRequestSet::empty();
    for (i, set) in sets.iter().enumerate() {
        if i > start && union.union_len(set) > budget {
            batches.push(Batch { members: start..i, pages: std::mem::take(&mut union) });
            start = i;
        }
        union = union.union(set);
    }
    if start < sets.len() {
        batches.push(Batch { members: start..sets.len(), pages: union });
    }
    Ok(batches)
}

/// One batch per vector (vector-at-a-time execution).
pub fn single_batches(sets: &[PageRequestSet], budget: usize) -> Result<Vec<Batch>, Oversized> {
    check_sizes(sets, budget)?;
    Ok(sets.iter().enumerate().map(|(i, s)| Batch { members: i..i + 1, pages: s.clone() }).collect())
}

pub fn total_page_requests(batches: &[Batch]) -> usize {
    batches.iter().map(|b| b.pages.len()).sum()
}

/// Exact minimum of the summed batch union sizes over every order-preserving
/// partition whose parts fit `budget`, by enumerating all cut patterns.
///
/// Returns `None` when `sets.len()` exceeds [`BRUTE_FORCE_MAX`] or a single
/// set does not fit.
pub fn brute_force_batches(sets: &[PageRequestSet], budget: usize) -> Option<usize> {
    let n = sets.len();
    if n > BRUTE_FORCE_MAX || sets.iter().any(|s| s.len() > budget) {
        return None;
    }
    if n == 0 {
        return Some(0);
    }
    let mut best = usize::MAX;
    // bit i set means a cut between position i and i + 1
    'patterns: for cuts in 0u32..(1 << (n - 1)) {
        let mut total = 0;
        let mut union = PageRequestSet::empty();
        for (i, set) in sets.iter().enumerate() {
            union = union.union(set);
            let closes = i == n - 1 || cuts & (1 << i) != 0;
            if closes {
                if union.len() > budget {
                    continue 'patterns;
                }
                total += union.len();
                union = PageRequestSet::empty();
            }
        }
        best = best.min(total);
    }
    Some(best)
}
