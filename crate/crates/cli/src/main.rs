use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dpjoin_core::datagen::{fig2_sets, gen_fig2, GenKind, GenSpec, FIG2_PAGE_SIZE};
use dpjoin_core::experiments::{bench_csv, bench_reorder, count_misses, sweep_budget, sweep_csv, BenchSpec, Budget};
use dpjoin_core::gradient_descent::{lmf_init, train, Mode, Task, TrainConfig};
use dpjoin_core::metrics::ReportFormat;
use dpjoin_core::operator::CsvSink;
use dpjoin_core::reorder::{objective, reorder, DEFAULT_LSH_BANDS, DEFAULT_LSH_HASHES};
use dpjoin_core::sparse_data::DataFormat;
use dpjoin_core::{Dataset, DotProductJoin, Error, Heuristic, InitSpec, ModelStore, OperatorConfig, PageLayout, Result};

const DEFAULT_PAGE_SIZE: u64 = 1024;

#[derive(Parser)]
#[command(name = "dpjoin", version, about = "Out-of-core dot-product join and gradient descent over a paged model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Compute the dot-product of every vector with a model.
    Run(RunArgs),
    /// Train LR or LMF with gradient descent through the paged model.
    Train(TrainArgs),
    /// Page misses and reorder time of each heuristic against no reordering.
    BenchReorder(BenchArgs),
    /// Page misses as a function of the memory budget.
    SweepBudget(SweepArgs),
    /// Print the counters of the eight-vector worked example.
    Fixture,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Uniform,
    Skewed,
    Matrix,
    Fig2,
}

#[derive(Clone, Copy, ValueEnum)]
enum FileFormat {
    Bin,
    Txt,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    /// Number of examples (cells for `matrix`). Unset parameters take the desk-scale preset.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<u64>,
    #[arg(long)]
    nnz: Option<usize>,
    #[arg(long)]
    zipf_s: Option<f64>,
    #[arg(long)]
    rows: Option<u64>,
    #[arg(long)]
    cols: Option<u64>,
    #[arg(long)]
    rank: Option<u64>,
    #[arg(long, env = "DPJOIN_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to the output file extension (`.txt` is text, anything else binary).
    #[arg(long, value_enum)]
    format: Option<FileFormat>,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    /// Dataset encoding; defaults to the file extension.
    #[arg(long, value_enum)]
    format: Option<FileFormat>,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        Dataset::load(&self.data, data_format(self.format, &self.data))
    }
}

#[derive(Args)]
#[group(multiple = false)]
struct BudgetArgs {
    /// Memory budget as a share of the model, e.g. `20%` [default: 20%].
    #[arg(long)]
    budget: Option<Budget>,
    /// Memory budget in pages.
    #[arg(long)]
    budget_pages: Option<usize>,
}

impl BudgetArgs {
    fn pages(&self, num_pages: u64) -> Result<usize> {
        match (self.budget, self.budget_pages) {
            (_, Some(0)) => Err(Error::InvalidArgument("--budget-pages must be at least 1".into())),
            (_, Some(p)) => Ok(p),
            (Some(b), None) => Ok(b.pages(num_pages)),
            (None, None) => Ok(Budget::Percent(20.0).pages(num_pages)),
        }
    }
}

#[derive(Args)]
struct ReorderArgs {
    #[arg(long, default_value = "none", value_parser = ["none", "radix", "lsh", "kcenter"])]
    reorder: String,
    /// Minwise hash functions per signature.
    #[arg(long, default_value_t = DEFAULT_LSH_HASHES)]
    lsh_m: usize,
    /// LSH bands.
    #[arg(long, default_value_t = DEFAULT_LSH_BANDS)]
    lsh_b: usize,
    /// Initial cluster count; defaults per U-page.
    #[arg(long)]
    kcenter_k: Option<usize>,
}

impl ReorderArgs {
    fn heuristic(&self) -> Heuristic {
        heuristic(&self.reorder, self)
    }
}

fn heuristic(name: &str, args: &ReorderArgs) -> Heuristic {
    match name {
        "radix" => Heuristic::Radix,
        "lsh" => Heuristic::Lsh { hashes: args.lsh_m, bands: args.lsh_b },
        "kcenter" => Heuristic::Kcenter { k: args.kcenter_k },
        _ => Heuristic::None,
    }
}

#[derive(Args)]
struct OperatorArgs {
    #[command(flatten)]
    budget: BudgetArgs,
    #[command(flatten)]
    reorder: ReorderArgs,
    /// One vector per batch (tuple-at-a-time baseline).
    #[arg(long)]
    no_batching: bool,
    /// Vectors per reordering scope.
    #[arg(long, default_value_t = dpjoin_core::operator::DEFAULT_UPAGE)]
    upage: usize,
    #[arg(long, env = "DPJOIN_SEED", default_value_t = 0)]
    seed: u64,
}

impl OperatorArgs {
    fn config(&self, num_pages: u64) -> Result<OperatorConfig> {
        Ok(OperatorConfig::new(self.budget.pages(num_pages)?)
            .with_heuristic(self.reorder.heuristic())
            .with_batching(!self.no_batching)
            .with_upage(self.upage)
            .with_seed(self.seed))
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Model file; without it the join runs against an all-zero in-memory model.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Entries per page of the in-memory model.
    #[arg(long, default_value_t = DEFAULT_PAGE_SIZE)]
    page_size: u64,
    #[command(flatten)]
    operator: OperatorArgs,
    /// `tid,dp` results; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Metrics report, JSON or CSV by extension.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Lr,
    Lmf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "lr")]
    task: TaskArg,
    /// LMF rank; defaults to the rank stored with the dataset.
    #[arg(long)]
    rank: Option<u64>,
    #[arg(long, default_value = "sgd")]
    mode: Mode,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 10)]
    iters: usize,
    /// Model file, updated in place; created (zeros for LR, small random
    /// factors for LMF) when missing. In memory when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_PAGE_SIZE)]
    page_size: u64,
    #[command(flatten)]
    operator: OperatorArgs,
    /// Visit U-pages in a fresh random order every iteration.
    #[arg(long)]
    shuffle_pages: bool,
    /// Shuffle all examples every iteration.
    #[arg(long)]
    shuffle_examples: bool,
    /// `iteration,loss` rows.
    #[arg(long)]
    loss_out: Option<PathBuf>,
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = DEFAULT_PAGE_SIZE)]
    page_size: u64,
    /// Budget as a share (`1%`) or page count [default: 1%].
    #[arg(long)]
    budget: Option<Budget>,
    /// Comma-separated U-page sizes.
    #[arg(long, value_delimiter = ',', default_value = "64,128,256,512,1024,2048,4096,8192")]
    upages: Vec<usize>,
    /// Comma-separated heuristics.
    #[arg(long, value_delimiter = ',', default_value = "none,radix,lsh,kcenter",
          value_parser = ["none", "radix", "lsh", "kcenter"])]
    heuristics: Vec<String>,
    #[command(flatten)]
    params: BenchReorderParams,
    /// Batch vectors as in a normal run (off by default to isolate reordering).
    #[arg(long)]
    batching: bool,
    #[arg(long, env = "DPJOIN_SEED", default_value_t = 0)]
    seed: u64,
    /// Report file, CSV or JSON by extension; CSV on stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchReorderParams {
    #[arg(long, default_value_t = DEFAULT_LSH_HASHES)]
    lsh_m: usize,
    #[arg(long, default_value_t = DEFAULT_LSH_BANDS)]
    lsh_b: usize,
    #[arg(long)]
    kcenter_k: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = DEFAULT_PAGE_SIZE)]
    page_size: u64,
    /// Comma-separated budgets, shares or page counts.
    #[arg(long, value_delimiter = ',', default_value = "10%,20%,40%,60%,100%")]
    budgets: Vec<Budget>,
    #[command(flatten)]
    reorder: ReorderArgs,
    #[arg(long)]
    no_batching: bool,
    #[arg(long, default_value_t = dpjoin_core::operator::DEFAULT_UPAGE)]
    upage: usize,
    #[arg(long, env = "DPJOIN_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Run(args) => cmd_run(args),
        Command::Train(args) => cmd_train(args),
        Command::BenchReorder(args) => cmd_bench(args),
        Command::SweepBudget(args) => cmd_sweep(args),
        Command::Fixture => cmd_fixture(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dpjoin: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn data_format(format: Option<FileFormat>, path: &Path) -> DataFormat {
    match format {
        Some(FileFormat::Bin) => DataFormat::Binary,
        Some(FileFormat::Txt) => DataFormat::Text,
        None => DataFormat::from_path(path),
    }
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    let (kind, preset) = match args.kind {
        Kind::Uniform => (GenKind::Uniform, GenSpec::uniform_desk(args.seed)),
        Kind::Skewed => (GenKind::Skewed, GenSpec::skewed_desk(args.seed)),
        Kind::Matrix => (GenKind::Matrix, GenSpec::matrix_desk(args.seed)),
        Kind::Fig2 => (GenKind::Fig2, GenSpec::skewed_desk(args.seed)),
    };
    let spec = GenSpec {
        kind,
        n: args.n.unwrap_or(preset.n),
        d: args.d.unwrap_or(preset.d),
        nnz: args.nnz.unwrap_or(preset.nnz),
        zipf_s: args.zipf_s.unwrap_or(preset.zipf_s),
        rows: args.rows.unwrap_or(preset.rows),
        cols: args.cols.unwrap_or(preset.cols),
        rank: args.rank.unwrap_or(preset.rank),
        seed: args.seed,
    };
    let ds = spec.generate()?;
    ds.store(&args.out, data_format(args.format, &args.out))?;
    eprintln!("wrote {} vectors (d={}, nnz={}) to {}", ds.len(), ds.dimension(), ds.total_nnz(), args.out.display());
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let ds = args.data.load()?;
    let store = match &args.model {
        Some(path) => ModelStore::open(path)?,
        None => ModelStore::create_in_memory(ds.dimension(), args.page_size, InitSpec::Zeros)?,
    };
    if store.dimension() != ds.dimension() {
        return Err(Error::Validation(format!(
            "model dimension {} does not match dataset dimension {}",
            store.dimension(),
            ds.dimension()
        )));
    }
    let config = args.operator.config(store.num_pages())?;
    let mut join = DotProductJoin::new(store, config)?;
    let report = match &args.out {
        Some(path) => {
            let mut sink = CsvSink::new(BufWriter::new(File::create(path)?))?;
            let report = join.run(&ds, &mut sink)?;
            sink.into_inner()?;
            report
        }
        None => {
            let mut sink = CsvSink::new(BufWriter::new(io::stdout().lock()))?;
            let report = join.run(&ds, &mut sink)?;
            sink.into_inner()?;
            report
        }
    };
    if let Some(path) = &args.metrics {
        report.emit(path, ReportFormat::from_path(path))?;
    }
    eprintln!(
        "{} vectors, {} page requests, {} page misses, {} batches",
        report.vectors, report.page_requests, report.page_misses, report.batch_count
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let ds = args.data.load()?;
    let task = match args.task {
        TaskArg::Lr => Task::Lr,
        TaskArg::Lmf => {
            let layout = ds
                .lmf()
                .ok_or_else(|| Error::Validation("LMF training needs a matrix dataset (binary, from `gen --kind matrix`)".into()))?;
            Task::Lmf { rank: args.rank.unwrap_or(layout.rank()) }
        }
    };
    let init = match (task, ds.lmf()) {
        (Task::Lmf { .. }, Some(layout)) => lmf_init(layout, args.operator.seed),
        _ => InitSpec::Zeros,
    };
    let store = match &args.model {
        Some(path) if path.exists() => ModelStore::open(path)?,
        Some(path) => ModelStore::create(path, ds.dimension(), args.page_size, init)?,
        None => ModelStore::create_in_memory(ds.dimension(), args.page_size, init)?,
    };
    let mut config = TrainConfig::new(task, args.mode, args.alpha, args.iters, args.operator.config(store.num_pages())?);
    config.shuffle_pages = args.shuffle_pages;
    config.shuffle_examples = args.shuffle_examples;
    let (report, mut store) = train(&ds, store, &config)?;
    store.sync()?;
    if let Some(path) = &args.loss_out {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "iteration,loss")?;
        for (it, loss) in report.losses.iter().enumerate() {
            writeln!(out, "{it},{loss:?}")?;
        }
        out.flush()?;
    }
    if let Some(path) = &args.metrics {
        report.metrics.emit(path, ReportFormat::from_path(path))?;
    }
    eprintln!(
        "loss {:.6} -> {:.6} after {} iterations; {} page misses, {} write-backs",
        report.losses[0],
        report.losses.last().unwrap(),
        args.iters,
        report.metrics.page_misses,
        report.metrics.write_backs
    );
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let ds = args.data.load()?;
    let names = ReorderArgs {
        reorder: String::new(),
        lsh_m: args.params.lsh_m,
        lsh_b: args.params.lsh_b,
        kcenter_k: args.params.kcenter_k,
    };
    let spec = BenchSpec {
        page_size: args.page_size,
        budget: args.budget.unwrap_or(Budget::Percent(1.0)),
        upages: args.upages,
        heuristics: args.heuristics.iter().map(|h| heuristic(h, &names)).collect(),
        batching: args.batching,
        seed: args.seed,
    };
    let rows = bench_reorder(&ds, &spec)?;
    let json = || serde_json::to_string_pretty(&rows).expect("rows serialize") + "\n";
    write_report(args.out.as_deref(), || bench_csv(&rows), json)
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let ds = args.data.load()?;
    let config = OperatorConfig::new(1)
        .with_heuristic(args.reorder.heuristic())
        .with_batching(!args.no_batching)
        .with_upage(args.upage)
        .with_seed(args.seed);
    let report = sweep_budget(&ds, args.page_size, config, &args.budgets)?;
    if !report.monotone {
        eprintln!("warning: page misses increase with the budget somewhere in this sweep");
    }
    let json = || serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    write_report(args.out.as_deref(), || sweep_csv(&report), json)
}

/// CSV on stdout, or a file whose extension picks CSV or JSON.
fn write_report(out: Option<&Path>, csv: impl FnOnce() -> String, json: impl FnOnce() -> String) -> Result<()> {
    match out {
        None => {
            io::stdout().lock().write_all(csv().as_bytes())?;
        }
        Some(path) => {
            let text = match ReportFormat::from_path(path) {
                ReportFormat::Csv => csv(),
                ReportFormat::Json => json(),
            };
            std::fs::write(path, text)?;
        }
    }
    Ok(())
}

fn cmd_fixture() -> Result<()> {
    let ds = gen_fig2();
    let sets = fig2_sets();
    let layout = PageLayout::new(ds.dimension(), FIG2_PAGE_SIZE)?;
    let tuple = OperatorConfig::new(2).with_batching(false);
    let plain = count_misses(&ds, layout.page_size(), tuple)?;
    let radix = count_misses(&ds, layout.page_size(), tuple.with_heuristic(Heuristic::Radix))?;
    let batched = count_misses(&ds, layout.page_size(), OperatorConfig::new(2).with_heuristic(Heuristic::Radix))?;
    let order = reorder(&sets, Heuristic::Radix, 2, 0)?.permutation;
    let identity: Vec<usize> = (0..sets.len()).collect();
    let mut out = io::stdout().lock();
    writeln!(out, "metric,value")?;
    writeln!(out, "vectors,{}", ds.len())?;
    writeln!(out, "element_requests,{}", plain.element_requests)?;
    writeln!(out, "page_requests,{}", plain.page_requests)?;
    writeln!(out, "lru_misses_original_order,{}", plain.page_misses)?;
    writeln!(out, "lru_misses_radix_order,{}", radix.page_misses)?;
    writeln!(out, "objective_original_order,{}", objective(&identity, &sets))?;
    writeln!(out, "objective_radix_order,{}", objective(&order, &sets))?;
    writeln!(out, "batches,{}", batched.batch_count)?;
    writeln!(out, "batched_page_requests,{}", batched.page_requests)?;
    Ok(())
}
