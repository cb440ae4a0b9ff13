//! Logistic regression and low-rank matrix factorization trained by
//! gradient descent through the dot-product join operator.
//!
//! Three update modes are supported: per-example SGD (updates applied while
//! the example's pages are pinned), page-level SGD (gradient summed over a
//! U-page, applied once per U-page) and BGD (one update per full pass).
//! An in-memory trainer follows the exact same arithmetic and processing
//! order, so both produce bit-identical loss sequences.

use std::collections::BTreeMap;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::buffer_manager::BufferManager;
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::model_store::{ModelStore, PageLayout};
use crate::operator::{mix_seed, plan_upage, upages, DotProductJoin, OperatorConfig, PassStats, VectorVisitor};
use crate::sparse_data::{Dataset, PageRequestSet, SparseVector};

/// Placement of the two factor matrices in the model vector: row factors
/// `L` first (`rows * rank` entries), then column factors `R`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LmfLayout {
    rows: u64,
    cols: u64,
    rank: u64,
}

impl LmfLayout {
    pub fn new(rows: u64, cols: u64, rank: u64) -> Result<Self> {
        if rows == 0 || cols == 0 || rank == 0 {
            return Err(Error::InvalidArgument(format!("LMF shape must be positive ({rows}x{cols}x{rank})")));
        }
        rows.checked_add(cols)
            .and_then(|s| s.checked_mul(rank))
            .ok_or_else(|| Error::InvalidArgument("LMF model dimension overflows".into()))?;
        Ok(Self { rows, cols, rank })
    }

    pub fn rows(&self) -> u64 {
        self.rows
    }

    pub fn cols(&self) -> u64 {
        self.cols
    }

    pub fn rank(&self) -> u64 {
        self.rank
    }

    pub fn dimension(&self) -> u64 {
        (self.rows + self.cols) * self.rank
    }

    pub fn row_block(&self, i: u64) -> std::ops::Range<u64> {
        i * self.rank..(i + 1) * self.rank
    }

    pub fn col_block(&self, j: u64) -> std::ops::Range<u64> {
        let base = self.rows * self.rank;
        base + j * self.rank..base + (j + 1) * self.rank
    }

    /// Example vector of cell `(i, j)`: both blocks' indexes with value 1,
    /// the rating as label.
    pub fn cell_vector(&self, i: u64, j: u64, tid: u64, rating: f64) -> Result<SparseVector> {
        if i >= self.rows || j >= self.cols {
            return Err(Error::Validation(format!("cell ({i}, {j}) outside {}x{}", self.rows, self.cols)));
        }
        let indexes: Vec<u64> = self.row_block(i).chain(self.col_block(j)).collect();
        let n = indexes.len();
        SparseVector::new(tid, rating, indexes, vec![1.0; n])
    }

    /// The `(row, col)` a cell vector refers to.
    pub fn cell_of(&self, v: &SparseVector) -> Result<(u64, u64)> {
        let k = self.rank as usize;
        let bad = || Error::Validation(format!("vector {} is not a {}-rank matrix cell", v.tid, self.rank));
        let idx = v.indexes();
        if idx.len() != 2 * k || !idx[0].is_multiple_of(self.rank) {
            return Err(bad());
        }
        let i = idx[0] / self.rank;
        let split = self.rows * self.rank;
        if i >= self.rows || idx[k] < split || !(idx[k] - split).is_multiple_of(self.rank) {
            return Err(bad());
        }
        let j = (idx[k] - split) / self.rank;
        if j >= self.cols || idx[..k] != *self.row_block(i).collect::<Vec<_>>() {
            return Err(bad());
        }
        if idx[k..] != *self.col_block(j).collect::<Vec<_>>() {
            return Err(bad());
        }
        Ok((i, j))
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Per-example gradient factor of the logistic loss: `-y * sigmoid(-y * dp)`.
pub fn lr_scale(y: f64, dp: f64) -> f64 {
    -y * sigmoid(-y * dp)
}

/// `log(1 + e^{-y * dp})`.
pub fn lr_example_loss(y: f64, dp: f64) -> f64 {
    softplus(-y * dp)
}

/// Residual `L_i . R_j - rating` and the two block gradients.
pub fn lmf_cell_gradient(rating: f64, left: &[f64], right: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let mut e = 0.0;
    for (l, r) in left.iter().zip(right) {
        e += l * r;
    }
    e -= rating;
    (e, right.iter().map(|r| e * r).collect(), left.iter().map(|l| e * l).collect())
}

/// Read/update access to model entries, either paged or in memory.
pub trait ModelAccess {
    fn get(&mut self, index: u64) -> Result<f64>;
    fn add(&mut self, index: u64, delta: f64) -> Result<()>;
}

impl ModelAccess for BufferManager {
    fn get(&mut self, index: u64) -> Result<f64> {
        self.value(index)
    }

    fn add(&mut self, index: u64, delta: f64) -> Result<()> {
        self.add_to_value(index, delta)
    }
}

impl ModelAccess for [f64] {
    fn get(&mut self, index: u64) -> Result<f64> {
        Ok(self[index as usize])
    }

    fn add(&mut self, index: u64, delta: f64) -> Result<()> {
        self[index as usize] += delta;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Lr,
    Lmf { rank: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Sgd,
    SgdPage,
    Bgd,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Mode::Sgd),
            "sgd-page" => Ok(Mode::SgdPage),
            "bgd" => Ok(Mode::Bgd),
            other => Err(Error::InvalidArgument(format!("unknown training mode '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: Task,
    pub mode: Mode,
    pub alpha: f64,
    pub iters: usize,
    pub operator: OperatorConfig,
    /// Visit U-pages in a fresh random order every iteration.
    pub shuffle_pages: bool,
    /// Shuffle the whole example stream every iteration before it is cut
    /// into U-pages.
    pub shuffle_examples: bool,
}

impl TrainConfig {
    pub fn new(task: Task, mode: Mode, alpha: f64, iters: usize, operator: OperatorConfig) -> Self {
        Self { task, mode, alpha, iters, operator, shuffle_pages: false, shuffle_examples: false }
    }

    fn validate(&self, dataset: &Dataset) -> Result<Kernel> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("step size must be finite and >= 0, got {}", self.alpha)));
        }
        self.operator.validate()?;
        match self.task {
            Task::Lr => {
                if let Some(v) = dataset.vectors().iter().find(|v| v.label != 1.0 && v.label != -1.0) {
                    return Err(Error::Validation(format!("LR label of {} must be +1 or -1, got {}", v.tid, v.label)));
                }
                Ok(Kernel::Lr)
            }
            Task::Lmf { rank } => {
                let layout = *dataset
                    .lmf()
                    .ok_or_else(|| Error::Validation("LMF training needs a matrix-cell dataset".into()))?;
                if layout.rank() != rank {
                    return Err(Error::Validation(format!("dataset rank {} != requested rank {rank}", layout.rank())));
                }
                Ok(Kernel::Lmf(layout))
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Kernel {
    Lr,
    Lmf(LmfLayout),
}

impl Kernel {
    /// Loss of one example.
    fn loss<M: ModelAccess + ?Sized>(&self, v: &SparseVector, model: &mut M) -> Result<f64> {
        match self {
            Kernel::Lr => Ok(lr_example_loss(v.label, dot(v, model)?)),
            Kernel::Lmf(layout) => {
                let (left, right) = blocks(layout, v, model)?;
                let (e, _, _) = lmf_cell_gradient(v.label, &left, &right);
                Ok(0.5 * e * e)
            }
        }
    }

    /// Gradient of one example as `(index, component)` pairs, ascending.
    fn gradient<M: ModelAccess + ?Sized>(&self, v: &SparseVector, model: &mut M) -> Result<Vec<(u64, f64)>> {
        match self {
            Kernel::Lr => {
                let s = lr_scale(v.label, dot(v, model)?);
                Ok(v.iter().map(|(i, x)| (i, s * x)).collect())
            }
            Kernel::Lmf(layout) => {
                let (left, right) = blocks(layout, v, model)?;
                let (_, gl, gr) = lmf_cell_gradient(v.label, &left, &right);
                Ok(v.indexes().iter().copied().zip(gl.into_iter().chain(gr)).collect())
            }
        }
    }

    fn element_requests(&self, v: &SparseVector) -> u64 {
        v.nnz() as u64
    }
}

fn dot<M: ModelAccess + ?Sized>(v: &SparseVector, model: &mut M) -> Result<f64> {
    let mut acc = 0.0;
    for (index, x) in v.iter() {
        acc += x * model.get(index)?;
    }
    Ok(acc)
}

fn blocks<M: ModelAccess + ?Sized>(layout: &LmfLayout, v: &SparseVector, model: &mut M) -> Result<(Vec<f64>, Vec<f64>)> {
    let k = layout.rank() as usize;
    let values = v.indexes().iter().map(|&i| model.get(i)).collect::<Result<Vec<f64>>>()?;
    let right = values[k..].to_vec();
    let mut left = values;
    left.truncate(k);
    Ok((left, right))
}

fn apply<M: ModelAccess + ?Sized>(model: &mut M, alpha: f64, grad: &[(u64, f64)]) -> Result<()> {
    for &(i, g) in grad {
        model.add(i, -(alpha * g))?;
    }
    Ok(())
}

fn accumulate(acc: &mut BTreeMap<u64, f64>, grad: &[(u64, f64)]) {
    for &(i, g) in grad {
        *acc.entry(i).or_insert(0.0) += g;
    }
}

/// Total loss of `dataset` under an in-memory model, in dataset order.
pub fn lr_loss(dataset: &Dataset, model: &[f64]) -> f64 {
    let mut total = 0.0;
    for v in dataset.vectors() {
        let mut acc = 0.0;
        for (i, x) in v.iter() {
            acc += x * model[i as usize];
        }
        total += lr_example_loss(v.label, acc);
    }
    total
}

/// Full gradient of the LR loss as a dense vector.
pub fn lr_gradient(dataset: &Dataset, model: &[f64]) -> Vec<f64> {
    dense_gradient(Kernel::Lr, dataset, model)
}

/// `Σ ½ (L_i . R_j - rating)^2` over the cells of `dataset`.
pub fn lmf_loss(dataset: &Dataset, layout: &LmfLayout, model: &[f64]) -> f64 {
    let kernel = Kernel::Lmf(*layout);
    let mut m = model.to_vec();
    dataset.vectors().iter().map(|v| kernel.loss(v, m.as_mut_slice()).unwrap()).sum()
}

pub fn lmf_gradient(dataset: &Dataset, layout: &LmfLayout, model: &[f64]) -> Vec<f64> {
    dense_gradient(Kernel::Lmf(*layout), dataset, model)
}

fn dense_gradient(kernel: Kernel, dataset: &Dataset, model: &[f64]) -> Vec<f64> {
    let mut m = model.to_vec();
    let mut out = vec![0.0; model.len()];
    for v in dataset.vectors() {
        for (i, g) in kernel.gradient(v, m.as_mut_slice()).unwrap() {
            out[i as usize] += g;
        }
    }
    out
}

/// Seeded LMF starting point: uniform in `[0, 1/sqrt(rank))`.
pub fn lmf_init(layout: &LmfLayout, seed: u64) -> crate::model_store::InitSpec {
    crate::model_store::InitSpec::Uniform { lo: 0.0, hi: 1.0 / (layout.rank() as f64).sqrt(), seed }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Loss before training followed by the loss after every iteration.
    pub losses: Vec<f64>,
    /// Counters of the training passes (loss evaluation excluded).
    pub metrics: MetricsReport,
}

/// The stream of dataset positions for iteration `it`.
fn iteration_stream(n: usize, config: &TrainConfig, it: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.operator.seed, it as u64));
    let mut stream: Vec<usize> = (0..n).collect();
    if config.shuffle_examples {
        stream.shuffle(&mut rng);
    }
    if config.shuffle_pages {
        let mut pages: Vec<&[usize]> = upages(&stream, config.operator.upage).collect();
        pages.shuffle(&mut rng);
        stream = pages.concat();
    }
    stream
}

fn iteration_seed(config: &TrainConfig, it: usize) -> u64 {
    mix_seed(config.operator.seed ^ 0x5EED, it as u64)
}

fn check_finite(loss: f64, iteration: usize, losses: &[f64]) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged { iteration, losses: losses.to_vec() })
    }
}

struct TrainVisitor {
    kernel: Kernel,
    mode: Mode,
    alpha: f64,
    pending: BTreeMap<u64, f64>,
    budget: usize,
    layout: PageLayout,
}

impl TrainVisitor {
    /// Applies the pending gradient in ascending index order, pinning at
    /// most `budget` pages at a time.
    fn flush(&mut self, buffer: &mut BufferManager) -> Result<()> {
        let pending: Vec<(u64, f64)> = std::mem::take(&mut self.pending).into_iter().collect();
        let mut start = 0;
        while start < pending.len() {
            let mut pages = Vec::new();
            let mut end = start;
            while end < pending.len() {
                let page = self.layout.page_of(pending[end].0)?;
                if pages.last() != Some(&page) {
                    if pages.len() == self.budget {
                        break;
                    }
                    pages.push(page);
                }
                end += 1;
            }
            let set = PageRequestSet::new(pages);
            buffer.request_set(&set)?;
            apply(buffer, self.alpha, &pending[start..end])?;
            buffer.unpin_set(&set)?;
            start = end;
        }
        Ok(())
    }
}

impl VectorVisitor for TrainVisitor {
    fn visit(&mut self, v: &SparseVector, buffer: &mut BufferManager) -> Result<()> {
        buffer.record_element_requests(self.kernel.element_requests(v));
        let grad = self.kernel.gradient(v, buffer)?;
        match self.mode {
            Mode::Sgd => apply(buffer, self.alpha, &grad),
            Mode::SgdPage | Mode::Bgd => {
                accumulate(&mut self.pending, &grad);
                Ok(())
            }
        }
    }

    fn end_upage(&mut self, buffer: &mut BufferManager) -> Result<()> {
        if self.mode == Mode::SgdPage {
            self.flush(buffer)?;
        }
        Ok(())
    }
}

struct LossVisitor {
    kernel: Kernel,
    total: f64,
}

impl VectorVisitor for LossVisitor {
    fn visit(&mut self, v: &SparseVector, buffer: &mut BufferManager) -> Result<()> {
        buffer.record_element_requests(self.kernel.element_requests(v));
        self.total += self.kernel.loss(v, buffer)?;
        Ok(())
    }
}

/// Loss over the paged model: one pass in dataset order without reordering.
fn paged_loss(join: &mut DotProductJoin, dataset: &Dataset, sets: &[PageRequestSet], kernel: Kernel) -> Result<f64> {
    let eval = OperatorConfig { heuristic: crate::reorder::Heuristic::None, ..*join.config() };
    let stream: Vec<usize> = (0..dataset.len()).collect();
    let mut visitor = LossVisitor { kernel, total: 0.0 };
    join.pass_with(&eval, dataset, sets, &stream, 0, &mut visitor)?;
    Ok(visitor.total)
}

/// Trains over the paged model in `store`, returning the report and the
/// flushed store.
pub fn train(dataset: &Dataset, store: ModelStore, config: &TrainConfig) -> Result<(TrainReport, ModelStore)> {
    let kernel = config.validate(dataset)?;
    let layout = store.layout();
    let sets = dataset.page_request_sets(&layout)?;
    let mut join = DotProductJoin::new(store, config.operator)?;
    let mut metrics = MetricsReport::new(Default::default(), &PassStats::default(), Default::default(), config);

    let mut losses = vec![paged_loss(&mut join, dataset, &sets, kernel)?];
    check_finite(losses[0], 0, &losses)?;
    for it in 0..config.iters {
        let started = Instant::now();
        let before = join.buffer().stats();
        let stream = iteration_stream(dataset.len(), config, it);
        let mut visitor = TrainVisitor {
            kernel,
            mode: config.mode,
            alpha: config.alpha,
            pending: BTreeMap::new(),
            budget: config.operator.budget,
            layout,
        };
        let pass = join.pass(dataset, &sets, &stream, iteration_seed(config, it), &mut visitor)?;
        if config.mode == Mode::Bgd {
            visitor.flush(join.buffer_mut())?;
        }
        let step = MetricsReport::new(join.buffer().stats().since(&before), &pass, started.elapsed(), config);
        metrics.accumulate(&step);

        let loss = paged_loss(&mut join, dataset, &sets, kernel)?;
        losses.push(loss);
        check_finite(loss, it + 1, &losses)?;
    }
    // write-backs of the final flush belong to training
    let before = join.buffer().stats();
    join.buffer_mut().flush_all()?;
    metrics.write_backs += join.buffer().stats().since(&before).write_backs;
    Ok((TrainReport { losses, metrics }, join.into_store()?))
}

/// In-memory reference trainer with the same processing order and
/// arithmetic as [`train`]; `page_size` fixes the page layout used for
/// reordering and batching decisions.
pub fn train_oracle(dataset: &Dataset, model: &mut [f64], page_size: u64, config: &TrainConfig) -> Result<TrainReport> {
    let kernel = config.validate(dataset)?;
    let layout = PageLayout::new(model.len() as u64, page_size)?;
    let sets = dataset.page_request_sets(&layout)?;
    let loss = |model: &mut [f64]| -> Result<f64> {
        let mut total = 0.0;
        for v in dataset.vectors() {
            total += kernel.loss(v, model)?;
        }
        Ok(total)
    };

    let mut losses = vec![loss(model)?];
    check_finite(losses[0], 0, &losses)?;
    for it in 0..config.iters {
        let stream = iteration_stream(dataset.len(), config, it);
        let seed = iteration_seed(config, it);
        let mut pending = BTreeMap::new();
        for (u, members) in upages(&stream, config.operator.upage).enumerate() {
            let plan = plan_upage(members, dataset, &sets, &config.operator, mix_seed(seed, u as u64))?;
            for &p in &plan.order {
                let v = &dataset.vectors()[p];
                let grad = kernel.gradient(v, model)?;
                match config.mode {
                    Mode::Sgd => apply(model, config.alpha, &grad)?,
                    Mode::SgdPage | Mode::Bgd => accumulate(&mut pending, &grad),
                }
            }
            if config.mode == Mode::SgdPage {
                apply(model, config.alpha, &std::mem::take(&mut pending).into_iter().collect::<Vec<_>>())?;
            }
        }
        if config.mode == Mode::Bgd {
            apply(model, config.alpha, &pending.into_iter().collect::<Vec<_>>())?;
        }
        let l = loss(model)?;
        losses.push(l);
        check_finite(l, it + 1, &losses)?;
    }
    Ok(TrainReport { losses, metrics: MetricsReport::default() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_matrix, gen_uniform};
    use crate::model_store::InitSpec;
    use crate::reorder::Heuristic;

    #[test]
    fn lr_scale_values() {
        assert_eq!(lr_scale(1.0, 0.0), -0.5);
        assert_eq!(lr_scale(-1.0, 0.0), 0.5);
        assert_eq!(lr_scale(1.0, 1e6), 0.0);
        assert!(lr_scale(1.0, -1e6).is_finite());
    }

    #[test]
    fn lr_loss_closed_forms() {
        let ds = gen_uniform(10, 20, 3, 1).unwrap();
        assert!((lr_loss(&ds, &[0.0; 20]) - 10.0 * 2f64.ln()).abs() < 1e-12);
        assert!((lr_example_loss(1.0, 3f64.ln()) - (4.0f64 / 3.0).ln()).abs() < 1e-15);
        assert!((lr_example_loss(-1.0, 800.0) - 800.0).abs() < 1e-9);
    }

    #[test]
    fn lmf_scalar_cell() {
        let (e, gl, gr) = lmf_cell_gradient(5.0, &[2.0], &[3.0]);
        assert_eq!((e, gl, gr), (1.0, vec![3.0], vec![2.0]));
        let (e, gl, gr) = lmf_cell_gradient(6.0, &[2.0], &[3.0]);
        assert_eq!((e, gl, gr), (0.0, vec![0.0], vec![0.0]));
    }

    #[test]
    fn cell_vectors_round_trip() {
        let layout = LmfLayout::new(4, 3, 2).unwrap();
        assert_eq!(layout.dimension(), 14);
        let v = layout.cell_vector(3, 1, 0, 2.0).unwrap();
        assert_eq!(v.indexes(), &[6, 7, 10, 11]);
        assert_eq!(layout.cell_of(&v).unwrap(), (3, 1));
        assert!(layout.cell_vector(4, 0, 0, 1.0).is_err());
        let skewed = SparseVector::new(0, 1.0, vec![1, 2, 8, 9], vec![1.0; 4]).unwrap();
        assert!(layout.cell_of(&skewed).is_err());
    }

    fn lr_config(mode: Mode, heuristic: Heuristic) -> TrainConfig {
        let op = OperatorConfig::new(4).with_heuristic(heuristic).with_upage(16).with_seed(4);
        TrainConfig::new(Task::Lr, mode, 0.05, 4, op)
    }

    #[test]
    fn paged_and_in_memory_training_agree_bit_for_bit() {
        let ds = gen_uniform(60, 40, 4, 9).unwrap();
        for mode in [Mode::Sgd, Mode::SgdPage, Mode::Bgd] {
            for h in Heuristic::ALL_DEFAULTS {
                let mut config = lr_config(mode, h);
                config.shuffle_pages = true;
                config.shuffle_examples = mode == Mode::Sgd;
                let store = ModelStore::create_in_memory(40, 4, InitSpec::Zeros).unwrap();
                let (report, mut store) = train(&ds, store, &config).unwrap();
                let mut model = vec![0.0; 40];
                let oracle = train_oracle(&ds, &mut model, 4, &config).unwrap();
                assert_eq!(report.losses, oracle.losses, "{mode:?} {h}");
                assert_eq!(store.snapshot_values().unwrap()[..40], model[..], "{mode:?} {h}");
            }
        }
    }

    #[test]
    fn zero_step_keeps_the_model() {
        let ds = gen_uniform(30, 40, 4, 2).unwrap();
        let mut config = lr_config(Mode::Sgd, Heuristic::Radix);
        config.alpha = 0.0;
        let store = ModelStore::create_in_memory(40, 4, InitSpec::Constant(0.25)).unwrap();
        let (report, mut store) = train(&ds, store, &config).unwrap();
        assert!(report.losses.windows(2).all(|w| w[0] == w[1]));
        assert!(store.snapshot_values().unwrap()[..40].iter().all(|&v| v == 0.25));
    }

    #[test]
    fn zero_iterations_report_the_initial_loss() {
        let ds = gen_uniform(5, 10, 2, 2).unwrap();
        let mut config = lr_config(Mode::Sgd, Heuristic::None);
        config.iters = 0;
        let report = train_oracle(&ds, &mut [0.0; 10], 2, &config).unwrap();
        assert_eq!(report.losses.len(), 1);
    }

    #[test]
    fn sgd_step_touches_only_the_example() {
        let v = SparseVector::new(0, 1.0, vec![2, 7], vec![1.0, -2.0]).unwrap();
        let ds = Dataset::new(10, vec![v]).unwrap();
        let mut config = lr_config(Mode::Sgd, Heuristic::None);
        config.iters = 1;
        let mut model: Vec<f64> = (0..10).map(|i| i as f64 * 0.01).collect();
        let before = model.clone();
        train_oracle(&ds, &mut model, 2, &config).unwrap();
        for i in 0..10 {
            if i == 2 || i == 7 {
                assert_ne!(model[i].to_bits(), before[i].to_bits());
            } else {
                assert_eq!(model[i].to_bits(), before[i].to_bits());
            }
        }
    }

    #[test]
    fn lmf_trains_through_the_operator() {
        let ds = gen_matrix(12, 10, 60, 2, 3).unwrap();
        let layout = *ds.lmf().unwrap();
        let op = OperatorConfig::new(4).with_heuristic(Heuristic::Radix).with_upage(32).with_seed(1);
        let config = TrainConfig::new(Task::Lmf { rank: 2 }, Mode::Sgd, 0.1, 5, op);
        let store = ModelStore::create_in_memory(layout.dimension(), 4, lmf_init(&layout, 8)).unwrap();
        let mut model = store_values(&layout, 4, 8);
        let (report, _) = train(&ds, store, &config).unwrap();
        let oracle = train_oracle(&ds, &mut model, 4, &config).unwrap();
        assert_eq!(report.losses, oracle.losses);
        assert!(report.losses.windows(2).all(|w| w[1] < w[0]), "{:?}", report.losses);
        assert!(report.metrics.write_backs > 0);
    }

    fn store_values(layout: &LmfLayout, page_size: u64, seed: u64) -> Vec<f64> {
        let mut s = ModelStore::create_in_memory(layout.dimension(), page_size, lmf_init(layout, seed)).unwrap();
        let mut v = s.snapshot_values().unwrap();
        v.truncate(layout.dimension() as usize);
        v
    }

    #[test]
    fn wrong_task_or_labels_rejected() {
        let ds = gen_uniform(5, 10, 2, 2).unwrap();
        let config = TrainConfig::new(Task::Lmf { rank: 2 }, Mode::Sgd, 0.1, 1, OperatorConfig::new(2));
        assert!(train_oracle(&ds, &mut [0.0; 10], 2, &config).is_err());
        let bad = Dataset::new(4, vec![SparseVector::new(0, 0.5, vec![1], vec![1.0]).unwrap()]).unwrap();
        assert!(train_oracle(&bad, &mut [0.0; 4], 2, &lr_config(Mode::Sgd, Heuristic::None)).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let ds = gen_matrix(5, 5, 10, 1, 1).unwrap();
        let config = TrainConfig::new(Task::Lmf { rank: 1 }, Mode::Bgd, 1e3, 20, OperatorConfig::new(10));
        let mut model = vec![1.0; 10];
        match train_oracle(&ds, &mut model, 2, &config) {
            Err(Error::Diverged { iteration, losses }) => {
                assert!(iteration >= 1);
                assert_eq!(losses.len(), iteration + 1);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
