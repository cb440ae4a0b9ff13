use std::cmp::{Ordering, Reverse};
use std::collections::HashMap;

use crate::model_store::PageId;
use crate::sparse_data::PageRequestSet;

/// Pages in descending request frequency; ties go to the lower page id.
pub fn page_frequency_ranks(sets: &[PageRequestSet]) -> Vec<(PageId, usize)> {
    let mut freq: HashMap<PageId, usize> = HashMap::new();
    for set in sets {
        for page in set.iter() {
            *freq.entry(page).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(PageId, usize)> = freq.into_iter().collect();
    ranked.sort_unstable_by_key(|&(page, f)| (Reverse(f), page));
    ranked
}

/// Radix-sort reordering over frequency-ranked page bitsets.
///
/// Each vector becomes a bitset whose bit 0 is the most frequent page. An
/// MSD radix sort that puts the set-bit partition before the clear-bit
/// partition and keeps each partition stable is the same as a stable sort
/// by this key: compare the ascending lists of set bit positions
/// element-wise (smaller position first) and, when one list is a prefix of
/// the other, put the longer list first.
pub fn reorder_radix(sets: &[PageRequestSet]) -> Vec<usize> {
    let rank: HashMap<PageId, u32> = page_frequency_ranks(sets)
        .into_iter()
        .enumerate()
        .map(|(r, (page, _))| (page, r as u32))
        .collect();
    let keys: Vec<Vec<u32>> = sets
        .iter()
        .map(|s| {
            let mut bits: Vec<u32> = s.iter().map(|p| rank[&p]).collect();
            bits.sort_unstable();
            bits
        })
        .collect();
    let mut order: Vec<usize> = (0..sets.len()).collect();
    order.sort_by(|&a, &b| compare_bitsets(&keys[a], &keys[b]));
    order
}

fn compare_bitsets(a: &[u32], b: &[u32]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        if x != y {
            return x.cmp(y);
        }
    }
    b.len().cmp(&a.len())
}
