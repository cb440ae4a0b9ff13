//! Hierarchical k-center clustering by set-difference cardinality.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sparse_data::{set_diff_cardinality, PageRequestSet};

const MAX_DEPTH: usize = 32;

/// `max(2, ceil(n * max_r / budget / 4))`.
pub fn default_k(n: usize, max_request: usize, budget: usize) -> usize {
    let budget = budget.max(1);
    2.max((n * max_request).div_ceil(budget).div_ceil(4))
}

/// Recursive k-center reordering.
///
/// Clusters whose union page set exceeds `budget` are split again; final
/// clusters are concatenated in the order of a greedy nearest-center chain.
pub fn reorder_kcenter(sets: &[PageRequestSet], k: Option<usize>, budget: usize, seed: u64) -> Result<Vec<usize>> {
    Ok(kcenter_clusters(sets, k, budget, seed)?.into_iter().flatten().collect())
}

/// The final (leaf) clusters of [`reorder_kcenter`], in output order.
pub fn kcenter_clusters(
    sets: &[PageRequestSet],
    k: Option<usize>,
    budget: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if k == Some(0) {
        return Err(Error::InvalidArgument("k-center needs k >= 1".into()));
    }
    if sets.is_empty() {
        return Ok(Vec::new());
    }
    let max_request = sets.iter().map(PageRequestSet::len).max().unwrap_or(0);
    let k = k.unwrap_or_else(|| default_k(sets.len(), max_request, budget));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ctx = Clustering { sets, k, budget, rng: &mut rng };
    Ok(ctx.order((0..sets.len()).collect(), 0))
}

struct Clustering<'a, R> {
    sets: &'a [PageRequestSet],
    k: usize,
    budget: usize,
    rng: &'a mut R,
}

impl<R: Rng> Clustering<'_, R> {
    fn fits(&self, members: &[usize]) -> bool {
        let mut union = PageRequestSet::empty();
        for &m in members {
            union = union.union(&self.sets[m]);
            if union.len() > self.budget {
                return false;
            }
        }
        true
    }

    fn order(&mut self, members: Vec<usize>, depth: usize) -> Vec<Vec<usize>> {
        if members.len() <= 1 || self.fits(&members) {
            return vec![members];
        }
        if depth >= MAX_DEPTH {
            return self.split_halves(members);
        }

        let mut centers: Vec<usize> =
            sample(self.rng, members.len(), self.k.min(members.len())).into_iter().map(|i| members[i]).collect();
        centers.sort_unstable();

        let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); centers.len()];
        for &m in &members {
            let nearest = centers
                .iter()
                .enumerate()
                .min_by_key(|&(c, &center)| (set_diff_cardinality(&self.sets[m], &self.sets[center]), c))
                .map(|(c, _)| c)
                .unwrap();
            clusters[nearest].push(m);
        }
        let (centers, clusters): (Vec<usize>, Vec<Vec<usize>>) =
            centers.into_iter().zip(clusters).filter(|(_, c)| !c.is_empty()).unzip();
        if clusters.len() == 1 {
            // no split happened, e.g. all sets identical to the single center
            return self.split_halves(members);
        }

        let ordered: Vec<Vec<Vec<usize>>> = clusters.into_iter().map(|c| self.order(c, depth + 1)).collect();

        let mut remaining: Vec<usize> = (0..ordered.len()).collect();
        let mut current = remaining.remove(self.rng.random_range(0..remaining.len()));
        let mut chain = vec![current];
        while !remaining.is_empty() {
            let from = &self.sets[centers[current]];
            let pick = remaining
                .iter()
                .enumerate()
                .min_by_key(|&(_, &c)| (set_diff_cardinality(&self.sets[centers[c]], from), c))
                .map(|(i, _)| i)
                .unwrap();
            current = remaining.remove(pick);
            chain.push(current);
        }
        let mut ordered: Vec<Option<Vec<Vec<usize>>>> = ordered.into_iter().map(Some).collect();
        chain.into_iter().flat_map(|c| ordered[c].take().unwrap()).collect()
    }

    /// Positional halving, used when clustering makes no progress.
    fn split_halves(&mut self, mut members: Vec<usize>) -> Vec<Vec<usize>> {
        let tail = members.split_off(members.len() / 2);
        let mut out = Vec::new();
        for part in [members, tail] {
            if part.len() <= 1 || self.fits(&part) {
                out.push(part);
            } else {
                out.extend(self.split_halves(part));
            }
        }
        out
    }
}
