//! The dot-product join operator.
//!
//! The input stream is cut into U-pages of `upage` vectors. Each U-page is
//! reordered, split into batches whose union page set fits the budget, and
//! every batch is served by one pinned set request; the vectors of the
//! batch are then visited while those pages stay pinned. Dot-products are
//! handed to the sink as soon as they are computed.

use std::io::Write;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::batcher::{greedy_batches, single_batches, Batch};
use crate::buffer_manager::BufferManager;
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::model_store::ModelStore;
use crate::reorder::{reorder, Heuristic};
use crate::sparse_data::{Dataset, PageRequestSet, SparseVector};

pub const DEFAULT_UPAGE: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorConfig {
    /// Memory budget in pages.
    pub budget: usize,
    pub heuristic: Heuristic,
    pub batching: bool,
    /// Vectors per U-page (the reordering scope).
    pub upage: usize,
    pub seed: u64,
}

impl OperatorConfig {
    pub fn new(budget: usize) -> Self {
        Self { budget, heuristic: Heuristic::None, batching: true, upage: DEFAULT_UPAGE, seed: 0 }
    }

    pub fn with_heuristic(mut self, heuristic: Heuristic) -> Self {
        self.heuristic = heuristic;
        self
    }

    pub fn with_batching(mut self, batching: bool) -> Self {
        self.batching = batching;
        self
    }

    pub fn with_upage(mut self, upage: usize) -> Self {
        self.upage = upage;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 || self.upage == 0 {
            return Err(Error::InvalidArgument("budget and U-page size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DotProductResult {
    pub tid: u64,
    pub dp: f64,
}

/// Consumer of dot-product results, called once per vector as soon as its
/// product is known.
pub trait ResultSink {
    fn emit(&mut self, result: DotProductResult) -> Result<()>;
}

impl ResultSink for Vec<DotProductResult> {
    fn emit(&mut self, result: DotProductResult) -> Result<()> {
        self.push(result);
        Ok(())
    }
}

/// Writes `tid,dp` rows; `dp` uses the shortest round-tripping float form.
pub struct CsvSink<W: Write> {
    out: W,
}

impl<W: Write> CsvSink<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "tid,dp")?;
        Ok(Self { out })
    }

    pub fn into_inner(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

impl<W: Write> ResultSink for CsvSink<W> {
    fn emit(&mut self, r: DotProductResult) -> Result<()> {
        writeln!(self.out, "{},{:?}", r.tid, r.dp)?;
        Ok(())
    }
}

/// Per-vector work done while the vector's pages are pinned.
pub trait VectorVisitor {
    fn visit(&mut self, vector: &SparseVector, buffer: &mut BufferManager) -> Result<()>;

    /// Called after the last batch of every U-page, with nothing pinned.
    fn end_upage(&mut self, _buffer: &mut BufferManager) -> Result<()> {
        Ok(())
    }
}

/// `Σ values[k] * V[indexes[k]]` in ascending index order over pinned pages.
pub fn dot_product(vector: &SparseVector, buffer: &mut BufferManager) -> Result<f64> {
    buffer.record_element_requests(vector.nnz() as u64);
    let mut acc = 0.0;
    for (index, x) in vector.iter() {
        acc += x * buffer.value(index)?;
    }
    Ok(acc)
}

/// In-memory reference with the same accumulation order as [`dot_product`].
pub fn oracle_dot_products(dataset: &Dataset, model: &[f64]) -> Vec<DotProductResult> {
    dataset
        .vectors()
        .iter()
        .map(|v| {
            let mut acc = 0.0;
            for (index, x) in v.iter() {
                acc += x * model[index as usize];
            }
            DotProductResult { tid: v.tid, dp: acc }
        })
        .collect()
}

struct DotProductVisitor<'a> {
    sink: &'a mut dyn ResultSink,
}

impl VectorVisitor for DotProductVisitor<'_> {
    fn visit(&mut self, vector: &SparseVector, buffer: &mut BufferManager) -> Result<()> {
        let dp = dot_product(vector, buffer)?;
        self.sink.emit(DotProductResult { tid: vector.tid, dp })
    }
}

/// Seed for the `k`-th unit of work derived from `seed` (splitmix64 step).
pub fn mix_seed(seed: u64, k: u64) -> u64 {
    let mut z = seed.wrapping_add(k.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Processing plan of one U-page.
#[derive(Clone, Debug)]
pub struct UpagePlan {
    /// Dataset positions in processing order.
    pub order: Vec<usize>,
    /// Batches over `order` (member ranges index into `order`).
    pub batches: Vec<Batch>,
    pub reorder_time: Duration,
}

/// Reorders and batches the U-page made of dataset positions `members`.
pub fn plan_upage(
    members: &[usize],
    dataset: &Dataset,
    sets: &[PageRequestSet],
    config: &OperatorConfig,
    seed: u64,
) -> Result<UpagePlan> {
    let local: Vec<PageRequestSet> = members.iter().map(|&p| sets[p].clone()).collect();
    let reordering = reorder(&local, config.heuristic, config.budget, seed)?;
    let order: Vec<usize> = reordering.permutation.iter().map(|&i| members[i]).collect();
    let ordered: Vec<PageRequestSet> = reordering.permutation.iter().map(|&i| local[i].clone()).collect();
    let batches = if config.batching {
        greedy_batches(&ordered, config.budget)
    } else {
        single_batches(&ordered, config.budget)
    }
    .map_err(|o| Error::OversizedVector {
        tid: dataset.vectors()[order[o.position]].tid,
        pages: o.pages,
        budget: o.budget,
    })?;
    Ok(UpagePlan { order, batches, reorder_time: reordering.elapsed })
}

/// Stream positions grouped into U-pages.
pub fn upages(stream: &[usize], upage: usize) -> impl Iterator<Item = &[usize]> {
    stream.chunks(upage.max(1))
}

/// Operator events, for checking that results are emitted before the
/// next batch is requested.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Event {
    SetRequest { batch: usize },
    Visited { batch: usize, tid: u64 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PassStats {
    pub vectors: u64,
    pub batches: u64,
    pub upages: u64,
    pub reorder_time: Duration,
}

impl PassStats {
    pub fn add(&mut self, other: &PassStats) {
        self.vectors += other.vectors;
        self.batches += other.batches;
        self.upages += other.upages;
        self.reorder_time += other.reorder_time;
    }
}

pub struct DotProductJoin {
    buffer: BufferManager,
    config: OperatorConfig,
    events: Option<Vec<Event>>,
}

impl DotProductJoin {
    pub fn new(store: ModelStore, config: OperatorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { buffer: BufferManager::new(store, config.budget)?, config, events: None })
    }

    pub fn config(&self) -> &OperatorConfig {
        &self.config
    }

    pub fn buffer(&self) -> &BufferManager {
        &self.buffer
    }

    pub fn buffer_mut(&mut self) -> &mut BufferManager {
        &mut self.buffer
    }

    pub fn enable_event_log(&mut self) {
        self.events = Some(Vec::new());
    }

    pub fn take_events(&mut self) -> Vec<Event> {
        self.events.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Flushes dirty pages and returns the model store.
    pub fn into_store(self) -> Result<ModelStore> {
        self.buffer.into_store()
    }

    /// Dot-products of every vector in dataset order, streamed to `sink`.
    pub fn run(&mut self, dataset: &Dataset, sink: &mut dyn ResultSink) -> Result<MetricsReport> {
        let stream: Vec<usize> = (0..dataset.len()).collect();
        self.run_stream(dataset, &stream, sink)
    }

    /// Like [`run`](Self::run) over an explicit stream of dataset positions.
    pub fn run_stream(
        &mut self,
        dataset: &Dataset,
        stream: &[usize],
        sink: &mut dyn ResultSink,
    ) -> Result<MetricsReport> {
        let started = Instant::now();
        let before = self.buffer.stats();
        let sets = dataset.page_request_sets(&self.buffer.layout())?;
        let seed = self.config.seed;
        let pass = self.pass(dataset, &sets, stream, seed, &mut DotProductVisitor { sink })?;
        Ok(MetricsReport::new(self.buffer.stats().since(&before), &pass, started.elapsed(), &self.config))
    }

    /// One pass over `stream` with an arbitrary visitor. `sets` are the
    /// page-request sets of every dataset vector.
    pub fn pass(
        &mut self,
        dataset: &Dataset,
        sets: &[PageRequestSet],
        stream: &[usize],
        seed: u64,
        visitor: &mut dyn VectorVisitor,
    ) -> Result<PassStats> {
        let config = self.config;
        self.pass_with(&config, dataset, sets, stream, seed, visitor)
    }

    /// [`pass`](Self::pass) under a different configuration with the same budget.
    pub fn pass_with(
        &mut self,
        config: &OperatorConfig,
        dataset: &Dataset,
        sets: &[PageRequestSet],
        stream: &[usize],
        seed: u64,
        visitor: &mut dyn VectorVisitor,
    ) -> Result<PassStats> {
        if config.budget != self.buffer.capacity() {
            return Err(Error::InvalidArgument("pass budget differs from the buffer capacity".into()));
        }
        config.validate()?;
        dataset.check_layout(&self.buffer.layout())?;
        let mut stats = PassStats::default();
        let mut batch_no = 0;
        for (u, members) in upages(stream, config.upage).enumerate() {
            let plan = plan_upage(members, dataset, sets, config, mix_seed(seed, u as u64))?;
            stats.reorder_time += plan.reorder_time;
            for batch in &plan.batches {
                if let Some(log) = &mut self.events {
                    log.push(Event::SetRequest { batch: batch_no });
                }
                self.buffer.request_set(&batch.pages)?;
                for &position in &plan.order[batch.members.clone()] {
                    let vector = &dataset.vectors()[position];
                    visitor.visit(vector, &mut self.buffer)?;
                    if let Some(log) = &mut self.events {
                        log.push(Event::Visited { batch: batch_no, tid: vector.tid });
                    }
                }
                self.buffer.unpin_set(&batch.pages)?;
                batch_no += 1;
            }
            visitor.end_upage(&mut self.buffer)?;
            stats.upages += 1;
            stats.vectors += members.len() as u64;
        }
        stats.batches = batch_no as u64;
        Ok(stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{fig2_layout, gen_fig2};
    use crate::model_store::InitSpec;

    fn fig2_join(budget: usize, heuristic: Heuristic, batching: bool) -> DotProductJoin {
        let store = ModelStore::create_in_memory(6, 2, InitSpec::Constant(1.0)).unwrap();
        let config = OperatorConfig::new(budget).with_heuristic(heuristic).with_batching(batching);
        DotProductJoin::new(store, config).unwrap()
    }

    #[test]
    fn u1_against_all_ones() {
        let mut join = fig2_join(2, Heuristic::None, false);
        let mut out = Vec::new();
        join.run(&gen_fig2(), &mut out).unwrap();
        assert_eq!(out[0], DotProductResult { tid: 1, dp: 13.0 });
    }

    #[test]
    fn fig2_original_order_vector_at_a_time() {
        let mut join = fig2_join(2, Heuristic::None, false);
        let report = join.run(&gen_fig2(), &mut Vec::new()).unwrap();
        assert_eq!(report.element_requests, 19);
        assert_eq!(report.page_requests, 16);
        assert_eq!(report.page_misses, 8);
        assert_eq!(report.batch_count, 8);
    }

    #[test]
    fn fig2_radix_with_batching() {
        let mut join = fig2_join(2, Heuristic::Radix, true);
        let report = join.run(&gen_fig2(), &mut Vec::new()).unwrap();
        assert_eq!(report.element_requests, 19);
        assert_eq!(report.page_requests, 6);
        assert_eq!(report.batch_count, 3);
        assert_eq!(report.page_misses, 4);
    }

    #[test]
    fn fig2_radix_vector_at_a_time_misses() {
        let mut join = fig2_join(2, Heuristic::Radix, false);
        assert_eq!(join.run(&gen_fig2(), &mut Vec::new()).unwrap().page_misses, 4);
    }

    #[test]
    fn whole_model_fits() {
        let mut join = fig2_join(3, Heuristic::None, false);
        assert_eq!(join.run(&gen_fig2(), &mut Vec::new()).unwrap().page_misses, 3);
    }

    #[test]
    fn ramp_model_values() {
        let ramp: Vec<f64> = (0..6).map(f64::from).collect();
        let store = ModelStore::from_values_in_memory(&ramp, 2).unwrap();
        let mut join = DotProductJoin::new(store, OperatorConfig::new(2)).unwrap();
        let mut out = Vec::new();
        join.run(&gen_fig2(), &mut out).unwrap();
        let dps: Vec<f64> = out.iter().map(|r| r.dp).collect();
        assert_eq!(dps, vec![33.0, 26.0, 7.0, 37.0, 8.0, 12.0, 15.0, 38.0]);
        assert_eq!(out, oracle_dot_products(&gen_fig2(), &ramp));
    }

    #[test]
    fn zero_values_and_scalar_case() {
        let ds = Dataset::new(1, vec![SparseVector::new(9, 1.0, vec![0], vec![2.5]).unwrap()]).unwrap();
        let store = ModelStore::from_values_in_memory(&[-4.0], 1).unwrap();
        let mut join = DotProductJoin::new(store, OperatorConfig::new(1)).unwrap();
        let mut out = Vec::new();
        join.run(&ds, &mut out).unwrap();
        assert_eq!(out, vec![DotProductResult { tid: 9, dp: -10.0 }]);

        let zeros = Dataset::new(4, vec![SparseVector::new(0, 1.0, vec![1, 3], vec![0.0, 0.0]).unwrap()]).unwrap();
        assert_eq!(oracle_dot_products(&zeros, &[1.0, 2.0, 3.0, 4.0])[0].dp, 0.0);
        assert!(oracle_dot_products(&Dataset::new(4, vec![]).unwrap(), &[0.0; 4]).is_empty());
    }

    #[test]
    fn oversized_vector_names_its_tid() {
        let mut join = fig2_join(1, Heuristic::None, true);
        match join.run(&gen_fig2(), &mut Vec::new()) {
            Err(Error::OversizedVector { tid: 1, pages: 2, budget: 1 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dot_product_requires_pins() {
        let store = ModelStore::create_in_memory(6, 2, InitSpec::Zeros).unwrap();
        let mut buffer = BufferManager::new(store, 2).unwrap();
        let ds = gen_fig2();
        let v = &ds.vectors()[0];
        assert!(matches!(dot_product(v, &mut buffer), Err(Error::NotPinned(_))));
        let set = v.page_request_set(&fig2_layout()).unwrap();
        buffer.request_set(&set).unwrap();
        assert_eq!(dot_product(v, &mut buffer).unwrap(), 0.0);
    }

    #[test]
    fn results_precede_the_next_set_request() {
        let mut join = fig2_join(2, Heuristic::Radix, true);
        join.enable_event_log();
        let mut out = Vec::new();
        join.run(&gen_fig2(), &mut out).unwrap();
        let events = join.take_events();
        let mut current = None;
        let mut visited = 0;
        for e in &events {
            match *e {
                Event::SetRequest { batch } => {
                    assert_eq!(Some(batch), current.map_or(Some(0), |c: usize| Some(c + 1)));
                    current = Some(batch);
                }
                Event::Visited { batch, .. } => {
                    assert_eq!(Some(batch), current);
                    visited += 1;
                }
            }
        }
        assert_eq!(visited, 8);
        assert_eq!(out.len(), 8);
    }

    #[test]
    fn csv_sink_format() {
        let mut sink = CsvSink::new(Vec::new()).unwrap();
        sink.emit(DotProductResult { tid: 3, dp: 0.1 }).unwrap();
        sink.emit(DotProductResult { tid: 4, dp: -2.0 }).unwrap();
        let text = String::from_utf8(sink.into_inner().unwrap()).unwrap();
        assert_eq!(text, "tid,dp\n3,0.1\n4,-2.0\n");
    }

    #[test]
    fn upage_of_one_disables_reordering() {
        let mut misses = Vec::new();
        for h in Heuristic::ALL_DEFAULTS {
            let mut join = fig2_join(2, h, false);
            join.config.upage = 1;
            misses.push(join.run(&gen_fig2(), &mut Vec::new()).unwrap().page_misses);
        }
        assert!(misses.iter().all(|&m| m == 8), "{misses:?}");
    }
}
