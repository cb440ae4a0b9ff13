//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on
//! any failure.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use dpjoin_core::batcher::{brute_force_batches, greedy_batches, total_page_requests};
use dpjoin_core::buffer_manager::BufferManager;
use dpjoin_core::datagen::{gen_fig2, gen_matrix, gen_skewed, gen_uniform};
use dpjoin_core::experiments::{count_misses, improvement, sweep_budget, Budget};
use dpjoin_core::gradient_descent::{
    lmf_gradient, lmf_init, lmf_loss, lr_gradient, lr_loss, train, LmfLayout, Mode, Task, TrainConfig,
};
use dpjoin_core::operator::{oracle_dot_products, DotProductJoin, DotProductResult, OperatorConfig};
use dpjoin_core::reorder::{minwise_signature, page_frequency_ranks, reorder_radix, Heuristic, MinwiseHash};
use dpjoin_core::{Dataset, InitSpec, ModelStore, PageLayout, PageRequestSet, SparseVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Outcome);

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn fig2_counts() -> Outcome {
    let started = Instant::now();
    let ds = gen_fig2();
    let run = |heuristic, batching| {
        let store = ModelStore::create_in_memory(6, 2, InitSpec::Constant(1.0)).unwrap();
        let config = OperatorConfig::new(2).with_heuristic(heuristic).with_batching(batching);
        DotProductJoin::new(store, config).unwrap().run(&ds, &mut Vec::new()).unwrap()
    };
    let plain = run(Heuristic::None, false);
    let radix = run(Heuristic::Radix, false);
    let batched = run(Heuristic::Radix, true);
    let got = [
        plain.element_requests,
        plain.page_requests,
        plain.page_misses,
        radix.page_misses,
        batched.batch_count,
        batched.page_requests,
    ];
    let elapsed = started.elapsed();
    outcome(
        got == [19, 16, 8, 4, 3, 6] && elapsed < Duration::from_secs(1),
        format!(
            "elements={} grouped={} lru_misses={} radix_misses={} batches={} batched_requests={} ({elapsed:.2?})",
            got[0], got[1], got[2], got[3], got[4], got[5]
        ),
    )
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Dataset, Vec<f64>, u64) {
    let d = rng.random_range(1..=10_000u64);
    let n = rng.random_range(0..=200usize);
    let page_size = rng.random_range(1..=d.min(512));
    let max_nnz = d.min(40) as usize;
    let vectors = (0..n)
        .map(|t| {
            let nnz = rng.random_range(1..=max_nnz);
            let mut idx: Vec<u64> = (0..nnz).map(|_| rng.random_range(0..d)).collect();
            idx.sort_unstable();
            idx.dedup();
            let values = idx.iter().map(|_| rng.random_range(-10.0..10.0)).collect();
            SparseVector::new(t as u64 * 3 + 1, 1.0, idx, values).unwrap()
        })
        .collect();
    let model = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    (Dataset::new(d, vectors).unwrap(), model, page_size)
}

fn sorted_bits(results: &[DotProductResult]) -> Vec<(u64, u64)> {
    let mut v: Vec<(u64, u64)> = results.iter().map(|r| (r.tid, r.dp.to_bits())).collect();
    v.sort_unstable();
    v
}

fn oracle_equivalence() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut runs = 0;
    let mut mismatches = 0;
    for case in 0..1000 {
        let (ds, model, page_size) = random_instance(&mut rng);
        let layout = PageLayout::new(ds.dimension(), page_size).unwrap();
        let max_r = ds.page_request_sets(&layout).unwrap().iter().map(PageRequestSet::len).max().unwrap_or(1).max(1);
        let pv = layout.num_pages() as usize;
        let quarter = Budget::Percent(25.0).pages(pv as u64).max(max_r);
        let expected = sorted_bits(&oracle_dot_products(&ds, &model));
        let upage = rng.random_range(1..=64);
        for budget in [max_r, quarter, pv] {
            for h in Heuristic::ALL_DEFAULTS {
                for batching in [true, false] {
                    let store = ModelStore::from_values_in_memory(&model, page_size).unwrap();
                    let config = OperatorConfig::new(budget)
                        .with_heuristic(h)
                        .with_batching(batching)
                        .with_upage(upage)
                        .with_seed(case);
                    let mut out = Vec::new();
                    DotProductJoin::new(store, config).unwrap().run(&ds, &mut out).unwrap();
                    runs += 1;
                    if sorted_bits(&out) != expected {
                        mismatches += 1;
                    }
                }
            }
        }
    }
    let elapsed = started.elapsed();
    outcome(
        mismatches == 0 && elapsed < Duration::from_secs(60),
        format!("{runs} runs over 1000 instances, {mismatches} mismatches ({elapsed:.2?})"),
    )
}

fn batching_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worse = 0;
    let mut example = None;
    for _ in 0..500 {
        let budget = rng.random_range(1..=5usize);
        let n = rng.random_range(1..=12usize);
        let sets: Vec<PageRequestSet> = (0..n)
            .map(|_| {
                let size = rng.random_range(1..=budget);
                PageRequestSet::from_ids((0..size).map(|_| rng.random_range(0..8u64)))
            })
            .collect();
        let greedy = total_page_requests(&greedy_batches(&sets, budget).unwrap());
        let best = brute_force_batches(&sets, budget).unwrap();
        if greedy != best {
            worse += 1;
            let smaller = example.as_ref().is_none_or(|(s, ..): &(Vec<PageRequestSet>, _, _, _)| sets.len() < s.len());
            if smaller {
                example = Some((sets.clone(), budget, greedy, best));
            }
        }
    }
    let mut detail = format!("greedy above exhaustive minimum on {worse}/500 instances");
    if let Some((sets, budget, greedy, best)) = example {
        let shown: Vec<Vec<u64>> = sets.iter().map(|s| s.iter().map(|p| p.0).collect()).collect();
        detail += &format!("; smallest: M={budget} sets={shown:?} greedy={greedy} min={best}");
    }
    outcome(worse == 0, detail)
}

fn radix_access_bound() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut zero_based = 0;
    let mut one_based = 0;
    let mut pages_checked = 0;
    for case in 0..100 {
        let d = rng.random_range(500..=10_000u64);
        let ds = gen_skewed(rng.random_range(20..=300), d, rng.random_range(2..=30), 1.0, case).unwrap();
        let page_size = rng.random_range(4..=64);
        let layout = PageLayout::new(d, page_size).unwrap();
        let sets = ds.page_request_sets(&layout).unwrap();
        let budget = sets.iter().map(PageRequestSet::len).max().unwrap();
        let upage = 64;
        for chunk in sets.chunks(upage) {
            let ranks = page_frequency_ranks(chunk);
            let order = reorder_radix(chunk);
            let store = ModelStore::create_in_memory(d, page_size, InitSpec::Zeros).unwrap();
            let mut buffer = BufferManager::new(store, budget).unwrap();
            buffer.enable_miss_log();
            for &i in &order {
                buffer.request_set(&chunk[i]).unwrap();
                buffer.unpin_set(&chunk[i]).unwrap();
            }
            let misses = buffer.take_miss_log();
            for (rho, (page, freq)) in ranks.iter().enumerate() {
                let m = misses.get(page).copied().unwrap_or(0);
                let bound = |r: usize| if r >= 63 { *freq as u64 } else { (1u64 << r).min(*freq as u64) };
                pages_checked += 1;
                if m > bound(rho) {
                    zero_based += 1;
                }
                if m > bound(rho + 1) {
                    one_based += 1;
                }
            }
        }
    }
    outcome(
        zero_based == 0,
        format!(
            "{pages_checked} page bounds checked; violations with 0-based rank: {zero_based}, with 1-based rank: {one_based}"
        ),
    )
}

fn minwise_property() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let hashes: Vec<MinwiseHash> = (0..1000).map(|_| MinwiseHash::random(&mut rng)).collect();
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (shared, jaccard) in [(20u64, 0.2), (50, 0.5), (80, 0.8)] {
        // union of 100 page ids, `shared` of them in both sets
        let only = (100 - shared) / 2;
        let ids: Vec<u64> = (0..100).map(|i| i * 7 + 3).collect();
        let a = PageRequestSet::from_ids(ids[..(shared + only) as usize].iter().copied());
        let b = PageRequestSet::from_ids(ids[only as usize..].iter().copied());
        assert_eq!(a.intersection_len(&b) as u64, shared);
        let (sa, sb) = (minwise_signature(&a, &hashes).unwrap(), minwise_signature(&b, &hashes).unwrap());
        let rate = sa.iter().zip(&sb).filter(|(x, y)| x == y).count() as f64 / hashes.len() as f64;
        worst = worst.max((rate - jaccard).abs());
        parts.push(format!("J={jaccard}: {rate:.3}"));
    }
    outcome(worst <= 0.05, format!("{} (max deviation {worst:.3})", parts.join(", ")))
}

fn reorder_improvement() -> Outcome {
    let started = Instant::now();
    let page_size = 32;
    let ds = gen_skewed(8192, 1_000_000, 300, 1.0, 6).unwrap();
    let layout = PageLayout::new(ds.dimension(), page_size).unwrap();
    let budget = Budget::Percent(1.0).pages(layout.num_pages());
    let base = OperatorConfig::new(budget).with_upage(4096).with_batching(false).with_seed(6);
    let none = count_misses(&ds, page_size, base).unwrap();
    let radix = count_misses(&ds, page_size, base.with_heuristic(Heuristic::Radix)).unwrap();
    let lsh = count_misses(&ds, page_size, base.with_heuristic(LSH_BENCH)).unwrap();
    let (gr, gl) = (improvement(radix.page_misses, none.page_misses), improvement(lsh.page_misses, none.page_misses));
    let elapsed = started.elapsed();
    outcome(
        gr >= 0.10 && gl >= 0.10 && gl >= gr - 0.05 && elapsed < Duration::from_secs(300),
        format!(
            "M={budget} pages of {}: none={} radix={} ({:.1}%) {LSH_BENCH}={} ({:.1}%) ({elapsed:.2?})",
            layout.num_pages(),
            none.page_misses,
            radix.page_misses,
            gr * 100.0,
            lsh.page_misses,
            gl * 100.0
        ),
    )
}

const LSH_BENCH: Heuristic = Heuristic::Lsh { hashes: 16, bands: 16 };

fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

fn central_difference(model: &[f64], loss: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let h = 1e-5;
    let mut m = model.to_vec();
    (0..model.len())
        .map(|i| {
            let x = m[i];
            m[i] = x + h;
            let up = loss(&m);
            m[i] = x - h;
            let down = loss(&m);
            m[i] = x;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn gradient_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_lr: f64 = 0.0;
    let mut worst_lmf: f64 = 0.0;
    for case in 0..50 {
        let d = rng.random_range(2..=50u64);
        let ds = gen_uniform(rng.random_range(1..=20), d, rng.random_range(1..=d as usize), case).unwrap();
        let w: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let numeric = central_difference(&w, |m| lr_loss(&ds, m));
        worst_lr = worst_lr.max(relative_error(&lr_gradient(&ds, &w), &numeric));

        let (rows, cols, rank) = (rng.random_range(1..=5u64), rng.random_range(1..=5u64), rng.random_range(1..=4u64));
        let cells = rng.random_range(rows.max(cols)..=rows * cols);
        let cells_ds = gen_matrix(rows, cols, cells, rank, case).unwrap();
        let layout: LmfLayout = *cells_ds.lmf().unwrap();
        let v: Vec<f64> = (0..layout.dimension()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let numeric = central_difference(&v, |m| lmf_loss(&cells_ds, &layout, m));
        worst_lmf = worst_lmf.max(relative_error(&lmf_gradient(&cells_ds, &layout, &v), &numeric));
    }
    outcome(
        worst_lr <= 1e-5 && worst_lmf <= 1e-5,
        format!("max relative error LR {worst_lr:.2e}, LMF {worst_lmf:.2e} over 50 instances each"),
    )
}

const LR_ALPHA: f64 = 0.5;
const LMF_ALPHA: f64 = 0.05;

fn convergence() -> Outcome {
    let started = Instant::now();
    let ds = gen_uniform(5000, 10_000, 50, 8).unwrap();
    let page_size = 64;
    let op = OperatorConfig::new(64).with_upage(512).with_seed(8);
    let lr_run = |heuristic, shuffle_examples| {
        let mut config =
            TrainConfig::new(Task::Lr, Mode::Sgd, LR_ALPHA, 10, op.with_heuristic(heuristic));
        config.shuffle_pages = true;
        config.shuffle_examples = shuffle_examples;
        let store = ModelStore::create_in_memory(ds.dimension(), page_size, InitSpec::Zeros).unwrap();
        train(&ds, store, &config).unwrap().0.losses
    };
    let radix = lr_run(Heuristic::Radix, false);
    let random = lr_run(Heuristic::None, true);
    let (first, radix_last, random_last) = (radix[0], *radix.last().unwrap(), *random.last().unwrap());
    let halved = radix_last < 0.5 * first;
    let close = (radix_last - random_last).abs() <= 0.05 * random_last;

    let cells = gen_matrix(200, 200, 8000, 8, 8).unwrap();
    let layout = *cells.lmf().unwrap();
    let config = TrainConfig::new(
        Task::Lmf { rank: 8 },
        Mode::Sgd,
        LMF_ALPHA,
        10,
        OperatorConfig::new(64).with_heuristic(Heuristic::Radix).with_upage(1024).with_seed(8),
    );
    let store = ModelStore::create_in_memory(layout.dimension(), 32, lmf_init(&layout, 8)).unwrap();
    let lmf = train(&cells, store, &config).unwrap().0.losses;
    let decreasing = lmf.windows(2).all(|w| w[1] < w[0]);
    outcome(
        halved && close && decreasing,
        format!(
            "LR loss {first:.1} -> radix {radix_last:.1} / random order {random_last:.1} ({:+.2}%); LMF {:.3} -> {:.3}, strictly decreasing: {decreasing} ({:.2?})",
            (radix_last / random_last - 1.0) * 100.0,
            lmf[0],
            lmf.last().unwrap(),
            started.elapsed()
        ),
    )
}

fn graceful_degradation() -> Outcome {
    let ds = gen_skewed(2000, 100_000, 100, 1.0, 9).unwrap();
    let budgets: Vec<Budget> = [10.0, 20.0, 40.0, 60.0, 100.0].map(Budget::Percent).to_vec();
    let mut parts = Vec::new();
    let mut pass = true;
    for batching in [false, true] {
        let config = OperatorConfig::new(1).with_batching(batching).with_upage(4096);
        let report = sweep_budget(&ds, 32, config, &budgets).unwrap();
        let misses: Vec<u64> = report.rows.iter().map(|r| r.page_misses).collect();
        let ok = report.monotone && *misses.last().unwrap() == report.distinct_pages;
        // the fixed-order requirement is the unbatched trace; batching is reported only
        if !batching {
            pass &= ok;
        }
        parts.push(format!(
            "batching={batching}: misses {misses:?}, distinct {} ({})",
            report.distinct_pages,
            if ok { "non-increasing" } else { "NOT non-increasing" }
        ));
    }
    outcome(pass, parts.join("; "))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("1 fig2 exact counts", fig2_counts),
        ("2 oracle equivalence", oracle_equivalence),
        ("3 batching optimality", batching_optimality),
        ("4 radix access bound", radix_access_bound),
        ("5 minwise property", minwise_property),
        ("6 reorder miss reduction", reorder_improvement),
        ("7 gradient checks", gradient_checks),
        ("8 convergence", convergence),
        ("9 graceful degradation", graceful_degradation),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.starts_with(o.as_str())) {
            continue;
        }
        let result = check();
        println!("{} [{name}] {}", if result.pass { "PASS" } else { "FAIL" }, result.detail);
        failed += usize::from(!result.pass);
    }
    if only.is_empty() {
        println!(
            "DECLARED [10 not reproducible at desk scale] cross-system wall-clock comparisons, full-scale datasets and absolute timings are replaced by the counter-based checks above"
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
