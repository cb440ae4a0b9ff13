//! Minwise-hash LSH index and nearest-neighbor chaining over it.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model_store::PageId;
use crate::sparse_data::PageRequestSet;

/// One minwise hash function over page ids.
#[derive(Clone, Debug, PartialEq)]
pub enum MinwiseHash {
    /// `((mul * mix(x) + add) mod 2^128) >> 64` with an odd 128-bit
    /// multiplier. `mix` is a fixed bijection that breaks up runs of
    /// consecutive page ids, on which plain multiply-shift is far from min-wise.
    MultiplyShift { mul: u128, add: u128 },
    /// Explicit page ranking; unlisted pages hash to `u64::MAX`.
    Permutation(HashMap<PageId, u64>),
}

impl MinwiseHash {
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        MinwiseHash::MultiplyShift { mul: rng.random::<u128>() | 1, add: rng.random::<u128>() }
    }

    /// Hash that ranks pages in the given order, first page lowest.
    pub fn from_permutation(order: &[PageId]) -> Self {
        MinwiseHash::Permutation(order.iter().enumerate().map(|(r, &p)| (p, r as u64)).collect())
    }

    pub fn hash(&self, page: PageId) -> u64 {
        match self {
            MinwiseHash::MultiplyShift { mul, add } => {
                (mul.wrapping_mul(premix(page.0) as u128).wrapping_add(*add) >> 64) as u64
            }
            MinwiseHash::Permutation(ranks) => ranks.get(&page).copied().unwrap_or(u64::MAX),
        }
    }
}

// splitmix64 finalizer
fn premix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `s_k = min_{p in set} h_k(p)` for every hash function.
pub fn minwise_signature(set: &PageRequestSet, hashes: &[MinwiseHash]) -> Result<Vec<u64>> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("minwise signature of an empty set".into()));
    }
    Ok(hashes.iter().map(|h| set.iter().map(|p| h.hash(p)).min().unwrap()).collect())
}

/// Banded LSH tables: one hash table per band, keyed by the band's slice of
/// the signature.
#[derive(Clone, Debug)]
pub struct LshIndex {
    bands: usize,
    /// `bucket_of[v][k]` is the bucket of vector `v` in band `k`.
    bucket_of: Vec<Vec<usize>>,
    /// Members of each bucket, ascending by position.
    buckets: Vec<Vec<usize>>,
}

impl LshIndex {
    pub fn build(sets: &[PageRequestSet], hashes: &[MinwiseHash], bands: usize) -> Result<Self> {
        if bands == 0 || hashes.len() < bands {
            return Err(Error::InvalidArgument(format!(
                "need at least one band and no more bands than hash functions (m={}, b={bands})",
                hashes.len()
            )));
        }
        let width = hashes.len() / bands;
        let mut tables: Vec<HashMap<Vec<u64>, usize>> = vec![HashMap::new(); bands];
        let mut buckets: Vec<Vec<usize>> = Vec::new();
        let mut bucket_of = Vec::with_capacity(sets.len());
        for (v, set) in sets.iter().enumerate() {
            // empty sets all share one signature
            let signature =
                if set.is_empty() { vec![u64::MAX; hashes.len()] } else { minwise_signature(set, hashes)? };
            let mut own = Vec::with_capacity(bands);
            for (k, table) in tables.iter_mut().enumerate() {
                let key = signature[k * width..(k + 1) * width].to_vec();
                let id = *table.entry(key).or_insert_with(|| {
                    buckets.push(Vec::new());
                    buckets.len() - 1
                });
                buckets[id].push(v);
                own.push(id);
            }
            bucket_of.push(own);
        }
        Ok(Self { bands, bucket_of, buckets })
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn len(&self) -> usize {
        self.bucket_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bucket_of.is_empty()
    }

    /// Members of `vector`'s bucket in `band`.
    pub fn bucket(&self, vector: usize, band: usize) -> &[usize] {
        &self.buckets[self.bucket_of[vector][band]]
    }

    /// Unvisited vectors sharing at least one band bucket with `current`, ascending.
    pub fn candidates(&self, current: usize, visited: &[bool]) -> Vec<usize> {
        let mut out: Vec<usize> = self.bucket_of[current]
            .iter()
            .flat_map(|&b| self.buckets[b].iter().copied())
            .filter(|&v| !visited[v])
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Nearest-neighbor chain starting at `start`.
    ///
    /// The next vector is the unvisited bucket neighbor of the current one
    /// with the smallest `|next \ current|`, lowest position on ties. With no
    /// unvisited neighbor the chain jumps to the lowest unvisited position.
    pub fn nearest_neighbor_order(&self, sets: &[PageRequestSet], start: usize) -> Vec<usize> {
        let n = self.len();
        if n == 0 {
            return Vec::new();
        }
        let mut local = LocalSets::new(sets);
        let mut buckets = self.buckets.clone();
        let mut visited = vec![false; n];
        let mut seen_stamp = vec![usize::MAX; n];
        let mut order = Vec::with_capacity(n);
        let mut next_unvisited = 0;
        let mut current = start;
        loop {
            visited[current] = true;
            order.push(current);
            if order.len() == n {
                break;
            }
            local.mark(current);
            let mut best: Option<(usize, usize)> = None;
            for &b in &self.bucket_of[current] {
                let bucket = &mut buckets[b];
                bucket.retain(|&v| !visited[v]);
                for &v in bucket.iter() {
                    if seen_stamp[v] == current {
                        continue;
                    }
                    seen_stamp[v] = current;
                    let cost = local.diff_from_marked(v);
                    if best.is_none_or(|(c, p)| (cost, v) < (c, p)) {
                        best = Some((cost, v));
                    }
                }
            }
            current = match best {
                Some((_, v)) => v,
                None => {
                    while visited[next_unvisited] {
                        next_unvisited += 1;
                    }
                    next_unvisited
                }
            };
        }
        order
    }
}

/// Page sets remapped to dense local ids, with a marker array for fast
/// `|a \ current|` evaluation.
struct LocalSets {
    sets: Vec<Vec<u32>>,
    marks: Vec<u32>,
    stamp: u32,
}

impl LocalSets {
    fn new(sets: &[PageRequestSet]) -> Self {
        let mut ids: HashMap<PageId, u32> = HashMap::new();
        let sets: Vec<Vec<u32>> = sets
            .iter()
            .map(|s| {
                s.iter()
                    .map(|p| {
                        let next = ids.len() as u32;
                        *ids.entry(p).or_insert(next)
                    })
                    .collect()
            })
            .collect();
        Self { sets, marks: vec![0; ids.len()], stamp: 0 }
    }

    fn mark(&mut self, v: usize) {
        self.stamp += 1;
        for &p in &self.sets[v] {
            self.marks[p as usize] = self.stamp;
        }
    }

    fn diff_from_marked(&self, v: usize) -> usize {
        self.sets[v].iter().filter(|&&p| self.marks[p as usize] != self.stamp).count()
    }
}

/// LSH reordering with `hashes` seeded minwise functions in `bands` bands,
/// starting from a seeded-random vector.
pub fn reorder_lsh(sets: &[PageRequestSet], hashes: usize, bands: usize, seed: u64) -> Result<Vec<usize>> {
    if bands == 0 || hashes < bands {
        return Err(Error::InvalidArgument(format!("LSH needs m >= b >= 1 (m={hashes}, b={bands})")));
    }
    if sets.is_empty() {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let functions: Vec<MinwiseHash> = (0..hashes).map(|_| MinwiseHash::random(&mut rng)).collect();
    let index = LshIndex::build(sets, &functions, bands)?;
    let start = rng.random_range(0..sets.len());
    Ok(index.nearest_neighbor_order(sets, start))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::fig2_sets;
    use crate::reorder::objective;

    fn ids(pages: &[u64]) -> Vec<PageId> {
        pages.iter().map(|&p| PageId(p)).collect()
    }

    #[test]
    fn fig2_buckets_and_first_step() {
        let sets = fig2_sets();
        let hashes =
            [MinwiseHash::from_permutation(&ids(&[1, 2, 0])), MinwiseHash::from_permutation(&ids(&[2, 0, 1]))];
        let index = LshIndex::build(&sets, &hashes, 2).unwrap();
        // band 0 keys: page 1 -> {u1,u2,u3,u4,u5,u8}, page 2 -> {u6,u7}
        assert_eq!(index.bucket(0, 0), &[0, 1, 2, 3, 4, 7]);
        assert_eq!(index.bucket(5, 0), &[5, 6]);
        // band 1 keys: page 0 -> {u1,u3,u5}, page 2 -> {u2,u4,u6,u7,u8}
        assert_eq!(index.bucket(0, 1), &[0, 2, 4]);
        assert_eq!(index.bucket(1, 1), &[1, 3, 5, 6, 7]);

        let mut visited = vec![false; 8];
        visited[0] = true;
        assert_eq!(index.candidates(0, &visited), vec![1, 2, 3, 4, 7]);

        let order = index.nearest_neighbor_order(&sets, 0);
        assert!(order[1] == 2 || order[1] == 4);
        assert_eq!(&order[..3], &[0, 2, 4]);
        assert_eq!(objective(&order, &sets), 2);
    }

    #[test]
    fn single_vector() {
        let sets = vec![PageRequestSet::from_ids([3])];
        assert_eq!(reorder_lsh(&sets, 16, 4, 1).unwrap(), vec![0]);
    }

    #[test]
    fn identical_sets_one_band() {
        let sets = vec![PageRequestSet::from_ids([1, 2, 3]); 7];
        let order = reorder_lsh(&sets, 4, 1, 99).unwrap();
        assert_eq!(objective(&order, &sets), 0);
    }

    #[test]
    fn signature_of_singleton_is_the_hashes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let hashes: Vec<MinwiseHash> = (0..5).map(|_| MinwiseHash::random(&mut rng)).collect();
        let sig = minwise_signature(&PageRequestSet::from_ids([42]), &hashes).unwrap();
        let direct: Vec<u64> = hashes.iter().map(|h| h.hash(PageId(42))).collect();
        assert_eq!(sig, direct);
        let a = PageRequestSet::from_ids([1, 5, 9]);
        assert_eq!(minwise_signature(&a, &hashes).unwrap(), minwise_signature(&a.clone(), &hashes).unwrap());
    }

    #[test]
    fn empty_set_has_no_signature() {
        assert!(minwise_signature(&PageRequestSet::empty(), &[]).is_err());
    }

    #[test]
    fn dead_end_jumps_to_lowest_unvisited() {
        // disjoint singletons never share a bucket, so the chain is positional
        let sets: Vec<PageRequestSet> = (0..5).map(|i| PageRequestSet::from_ids([i * 1000])).collect();
        let hashes = vec![MinwiseHash::from_permutation(&ids(&[0, 1000, 2000, 3000, 4000]))];
        let index = LshIndex::build(&sets, &hashes, 1).unwrap();
        assert_eq!(index.nearest_neighbor_order(&sets, 3), vec![3, 0, 1, 2, 4]);
    }

    #[test]
    fn rejects_bad_band_counts() {
        let sets = vec![PageRequestSet::from_ids([1])];
        assert!(reorder_lsh(&sets, 2, 4, 0).is_err());
        assert!(reorder_lsh(&sets, 2, 0, 0).is_err());
    }
}
