//! Reordering benchmark and memory-budget sweep.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::model_store::{InitSpec, ModelStore, PageLayout};
use crate::operator::{DotProductJoin, DotProductResult, OperatorConfig, ResultSink};
use crate::reorder::Heuristic;
use crate::sparse_data::Dataset;

/// Memory budget, absolute or relative to the number of model pages.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Budget {
    Pages(usize),
    Percent(f64),
}

impl Budget {
    /// Budget in pages for a model of `num_pages` pages (at least one).
    pub fn pages(&self, num_pages: u64) -> usize {
        match *self {
            Budget::Pages(p) => p,
            Budget::Percent(pct) => ((pct / 100.0 * num_pages as f64).ceil() as usize).max(1),
        }
    }
}

impl fmt::Display for Budget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Budget::Pages(p) => write!(f, "{p}"),
            Budget::Percent(pct) => write!(f, "{pct}%"),
        }
    }
}

impl FromStr for Budget {
    type Err = Error;

    /// `"20%"` is a share of the model, `"128"` a page count.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad budget '{s}' (expected e.g. '20%' or '128')"));
        match s.trim().strip_suffix('%') {
            Some(pct) => {
                let pct: f64 = pct.trim().parse().map_err(|_| bad())?;
                if pct > 0.0 && pct <= 100.0 {
                    Ok(Budget::Percent(pct))
                } else {
                    Err(bad())
                }
            }
            None => match s.trim().parse::<usize>() {
                Ok(p) if p > 0 => Ok(Budget::Pages(p)),
                _ => Err(bad()),
            },
        }
    }
}

/// Sink that drops results; used when only counters matter.
pub struct Discard;

impl ResultSink for Discard {
    fn emit(&mut self, _: DotProductResult) -> Result<()> {
        Ok(())
    }
}

/// Runs the operator over a zero model of the dataset's dimension and
/// returns the metrics.
pub fn count_misses(dataset: &Dataset, page_size: u64, config: OperatorConfig) -> Result<MetricsReport> {
    let store = ModelStore::create_in_memory(dataset.dimension(), page_size, InitSpec::Zeros)?;
    DotProductJoin::new(store, config)?.run(dataset, &mut Discard)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub heuristic: String,
    pub upage: usize,
    pub budget_pages: usize,
    pub page_misses: u64,
    pub baseline_misses: u64,
    /// `1 - misses / baseline_misses`.
    pub improvement: f64,
    pub reorder_time: f64,
}

#[derive(Clone, Debug)]
pub struct BenchSpec {
    pub page_size: u64,
    pub budget: Budget,
    pub upages: Vec<usize>,
    pub heuristics: Vec<Heuristic>,
    pub batching: bool,
    pub seed: u64,
}

/// For every U-page size and heuristic: reorder time and page misses
/// relative to the unreordered run under the same budget.
pub fn bench_reorder(dataset: &Dataset, spec: &BenchSpec) -> Result<Vec<BenchRow>> {
    let layout = PageLayout::new(dataset.dimension(), spec.page_size)?;
    let budget = spec.budget.pages(layout.num_pages());
    let mut rows = Vec::new();
    for &upage in &spec.upages {
        let base = OperatorConfig::new(budget).with_upage(upage).with_batching(spec.batching).with_seed(spec.seed);
        let baseline = count_misses(dataset, spec.page_size, base)?.page_misses;
        for &h in &spec.heuristics {
            let report = count_misses(dataset, spec.page_size, base.with_heuristic(h))?;
            rows.push(BenchRow {
                heuristic: h.to_string(),
                upage,
                budget_pages: budget,
                page_misses: report.page_misses,
                baseline_misses: baseline,
                improvement: improvement(report.page_misses, baseline),
                reorder_time: report.reorder_time,
            });
        }
    }
    Ok(rows)
}

pub fn improvement(misses: u64, baseline: u64) -> f64 {
    if baseline == 0 {
        0.0
    } else {
        1.0 - misses as f64 / baseline as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub budget: String,
    pub budget_pages: usize,
    pub page_misses: u64,
    pub page_requests: u64,
    pub batch_count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Distinct pages touched by the dataset.
    pub distinct_pages: u64,
    /// Misses never increase as the budget grows.
    pub monotone: bool,
}

/// Runs the operator once per budget (in the given order).
pub fn sweep_budget(
    dataset: &Dataset,
    page_size: u64,
    config: OperatorConfig,
    budgets: &[Budget],
) -> Result<SweepReport> {
    let layout = PageLayout::new(dataset.dimension(), page_size)?;
    let distinct = dataset
        .page_request_sets(&layout)?
        .iter()
        .fold(crate::sparse_data::PageRequestSet::empty(), |u, s| u.union(s))
        .len() as u64;
    let mut rows = Vec::new();
    for b in budgets {
        let pages = b.pages(layout.num_pages());
        let report = count_misses(dataset, page_size, OperatorConfig { budget: pages, ..config })?;
        rows.push(SweepRow {
            budget: b.to_string(),
            budget_pages: pages,
            page_misses: report.page_misses,
            page_requests: report.page_requests,
            batch_count: report.batch_count,
        });
    }
    let mut by_pages: Vec<&SweepRow> = rows.iter().collect();
    by_pages.sort_by_key(|r| r.budget_pages);
    let monotone = by_pages.windows(2).all(|w| w[1].page_misses <= w[0].page_misses);
    Ok(SweepReport { rows, distinct_pages: distinct, monotone })
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("heuristic,upage,budget_pages,page_misses,baseline_misses,improvement,reorder_time\n");
    for r in rows {
        let heuristic = if r.heuristic.contains(',') { format!("\"{}\"", r.heuristic) } else { r.heuristic.clone() };
        writeln!(
            out,
            "{heuristic},{},{},{},{},{:.6},{:.6}",
            r.upage, r.budget_pages, r.page_misses, r.baseline_misses, r.improvement, r.reorder_time
        )
        .unwrap();
    }
    out
}

pub fn sweep_csv(report: &SweepReport) -> String {
    let mut out = String::from("budget,budget_pages,page_misses,page_requests,batch_count\n");
    for r in &report.rows {
        writeln!(out, "{},{},{},{},{}", r.budget, r.budget_pages, r.page_misses, r.page_requests, r.batch_count)
            .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_fig2, gen_skewed};

    #[test]
    fn budget_parsing() {
        assert_eq!("20%".parse::<Budget>().unwrap(), Budget::Percent(20.0));
        assert_eq!("128".parse::<Budget>().unwrap(), Budget::Pages(128));
        for bad in ["0", "0%", "150%", "x", "-3", ""] {
            assert!(bad.parse::<Budget>().is_err(), "{bad}");
        }
        assert_eq!(Budget::Percent(1.0).pages(62_500), 625);
        assert_eq!(Budget::Percent(10.0).pages(3), 1);
        assert_eq!(Budget::Pages(7).pages(3), 7);
    }

    #[test]
    fn baseline_against_itself_is_zero() {
        let spec = BenchSpec {
            page_size: 2,
            budget: Budget::Pages(2),
            upages: vec![8, 1],
            heuristics: Heuristic::ALL_DEFAULTS.to_vec(),
            batching: false,
            seed: 0,
        };
        let rows = bench_reorder(&gen_fig2(), &spec).unwrap();
        assert_eq!(rows.len(), 8);
        assert_eq!(rows[0].improvement, 0.0);
        assert_eq!(rows[1].page_misses, 4);
        // one vector per U-page leaves nothing to reorder
        assert!(rows[4..].iter().all(|r| r.page_misses == r.baseline_misses));
    }

    #[test]
    fn sweep_ends_at_distinct_pages() {
        let ds = gen_skewed(300, 4_000, 20, 1.0, 2).unwrap();
        let budgets: Vec<Budget> = ["40%", "60%", "100%"].iter().map(|b| b.parse().unwrap()).collect();
        let report = sweep_budget(&ds, 32, OperatorConfig::new(1).with_batching(false), &budgets).unwrap();
        assert!(report.monotone, "{report:?}");
        assert_eq!(report.rows.last().unwrap().page_misses, report.distinct_pages);
        assert!(sweep_csv(&report).starts_with("budget,budget_pages,"));
    }

    #[test]
    fn sweep_below_largest_request_fails() {
        let ds = gen_skewed(50, 4_000, 40, 1.0, 2).unwrap();
        let err = sweep_budget(&ds, 32, OperatorConfig::new(1), &[Budget::Pages(1)]).unwrap_err();
        assert!(matches!(err, Error::OversizedVector { .. }));
    }
}
