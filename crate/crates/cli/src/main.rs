use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use raglab::context::{apply_ordering, reorder_sequence, OrderingStrategy, TemplateRegistry};
use raglab::corpus::{ingest_corpus, load_queries, CorpusStore, IngestOptions, QueryRecord};
use raglab::ftdata::{
    build_mix, mix_external_sft, parse_ratio, read_external, write_manifest, write_samples, KPolicy, Labeler, MixConfig,
    RetrieverPolicy, Source,
};
use raglab::generator::{CachedBackend, HttpBackend, HttpConfig, DEFAULT_API_KEY_ENV};
use raglab::harness::{
    compare_orderings, run_hardneg_sweep, run_sweep, write_csv, ExperimentPlan, SweepInputs, Transcript,
};
use raglab::hardneg::{build_hardneg, build_randomneg, child_seed, identify_gold, write_instances};
use raglab::metrics::{similarity_curves, write_curves_csv, RelevanceLabeler};
use raglab::retrieval::{
    bm25_search, dense_search, mix_retrievers, read_ranked_lists, write_ranked_lists, Bm25Params, EmbeddingTable,
    MixStrategy, RankedList, RankedSet,
};
use raglab::{Error, Result};

const DEFAULT_INDEX_DIR: &str = "index";

/// Retrieval-augmented generation experiment toolkit.
///
/// Exit status: 0 on success, 1 on usage errors (bad flags, missing files,
/// invalid configuration), 2 on data errors (malformed input content).
/// All randomness comes from --seed, which defaults to 0.
#[derive(Parser, Debug)]
#[command(name = "raglab", version)]
struct Cli {
    /// Log verbosity: -v for info, -vv for debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Ingest a corpus JSONL file and build the passage store and BM25 index.
    Index(IndexArgs),
    /// Retrieve ranked passages for a query file.
    Retrieve(RetrieveArgs),
    /// Recall/precision curves for one or more ranked-list files.
    Metrics(MetricsArgs),
    /// Print the reordering permutation, or rewrite ranked lists in display order.
    Reorder(ReorderArgs),
    /// Build gold-plus-negatives context instances.
    Hardneg(HardnegArgs),
    /// Build a fine-tuning dataset and its manifest.
    BuildFt(BuildFtArgs),
    /// Run an experiment plan.
    Eval(EvalArgs),
    /// Re-score a plan from its transcript without calling any backend.
    Replay(ReplayArgs),
}

#[derive(Args, Debug)]
struct IndexArgs {
    /// Corpus JSONL with one {"id","title","text"} object per line.
    #[arg(long)]
    corpus: PathBuf,
    /// Output directory for the store and index.
    #[arg(long, default_value = DEFAULT_INDEX_DIR)]
    index: PathBuf,
    /// Fail on the first malformed line instead of skipping it.
    #[arg(long)]
    strict: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RetrieverKind {
    Bm25,
    Dense,
    Mix,
}

#[derive(Args, Debug)]
struct RetrieveArgs {
    /// Store directory written by `index`.
    #[arg(long, default_value = DEFAULT_INDEX_DIR)]
    index: PathBuf,
    /// Query JSONL file.
    #[arg(long = "q", value_name = "QUERIES")]
    queries: PathBuf,
    /// Number of passages to keep per query.
    #[arg(long)]
    k: usize,
    /// Retriever to run.
    #[arg(long, value_enum, default_value = "bm25")]
    retriever: RetrieverKind,
    /// BM25 k1.
    #[arg(long, default_value_t = 1.2)]
    k1: f64,
    /// BM25 b.
    #[arg(long, default_value_t = 0.75)]
    b: f64,
    /// Query embedding file (dense retriever).
    #[arg(long)]
    query_emb: Option<PathBuf>,
    /// Passage embedding file (dense retriever).
    #[arg(long)]
    passage_emb: Option<PathBuf>,
    /// Id written into dense ranked lists.
    #[arg(long, default_value = "dense")]
    retriever_id: String,
    /// Ranked-list files to combine (mix retriever); repeat the flag.
    #[arg(long = "lists")]
    lists: Vec<PathBuf>,
    /// How the mix retriever combines lists.
    #[arg(long, value_enum, default_value = "round-robin")]
    strategy: MixArg,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads across queries.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MixArg {
    RoundRobin,
    UnionByRank,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LabelArg {
    Containment,
    GoldId,
}

impl LabelArg {
    fn labeler(self) -> RelevanceLabeler {
        match self {
            LabelArg::Containment => RelevanceLabeler::containment(),
            LabelArg::GoldId => RelevanceLabeler::gold_id(),
        }
    }
}

#[derive(Args, Debug)]
struct MetricsArgs {
    /// Store directory written by `index`.
    #[arg(long, default_value = DEFAULT_INDEX_DIR)]
    index: PathBuf,
    /// Query JSONL file.
    #[arg(long = "q", value_name = "QUERIES")]
    queries: PathBuf,
    /// Ranked-list files; repeat the flag for several retrievers.
    #[arg(long = "lists", required = true)]
    lists: Vec<PathBuf>,
    /// Comma-separated cutoffs, strictly ascending.
    #[arg(long, value_delimiter = ',', required = true)]
    ks: Vec<usize>,
    /// Relevance labeling rule.
    #[arg(long, value_enum, default_value = "containment")]
    labeler: LabelArg,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReorderArgs {
    /// Number of passages.
    #[arg(long)]
    k: usize,
    /// Ranked-list file to rewrite; without it the permutation is printed.
    #[arg(long = "lists")]
    lists: Option<PathBuf>,
    /// Ordering: original, reordered, reversed or random(<seed>).
    #[arg(long, default_value = "reordered")]
    ordering: OrderingStrategy,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum NegArg {
    Retriever,
    Random,
}

#[derive(Args, Debug)]
struct HardnegArgs {
    /// Store directory written by `index`.
    #[arg(long, default_value = DEFAULT_INDEX_DIR)]
    index: PathBuf,
    /// Query JSONL file.
    #[arg(long = "q", value_name = "QUERIES")]
    queries: PathBuf,
    /// Ranked-list file used for gold identification and retriever negatives.
    #[arg(long = "lists")]
    lists: PathBuf,
    /// Comma-separated context sizes K (gold plus K-1 negatives).
    #[arg(long, value_delimiter = ',', required = true)]
    ks: Vec<usize>,
    /// Where negatives come from.
    #[arg(long, value_enum, default_value = "retriever")]
    source: NegArg,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output instance JSONL.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BuildFtArgs {
    /// Store directory written by `index`.
    #[arg(long, default_value = DEFAULT_INDEX_DIR)]
    index: PathBuf,
    /// Query pool per source as SOURCE=FILE (nq, wow, fever, mmlu); repeat the flag.
    #[arg(long = "pool", value_parser = parse_pool, required = true)]
    pools: Vec<(Source, PathBuf)>,
    /// Ranked-list files covering the pooled queries; repeat the flag.
    #[arg(long = "lists", required = true)]
    lists: Vec<PathBuf>,
    /// Comma-separated retriever ids; more than one rotates per sample.
    #[arg(long, value_delimiter = ',', required = true)]
    retrievers: Vec<String>,
    /// Samples per source.
    #[arg(long, default_value_t = raglab::ftdata::DEFAULT_PER_SOURCE)]
    per_source: usize,
    /// Fixed number of passages per sample.
    #[arg(long, conflicts_with = "k_dynamic")]
    k: Option<usize>,
    /// Per-sample passage count drawn uniformly from LO,HI.
    #[arg(long, value_delimiter = ',', num_args = 2, value_names = ["LO", "HI"])]
    k_dynamic: Option<Vec<usize>>,
    /// Upper bound on passages per sample.
    #[arg(long, default_value_t = raglab::ftdata::DEFAULT_MAX_PASSAGES)]
    max_passages: usize,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Build reasoning-augmented targets via the labeler.
    #[arg(long)]
    reasoning: bool,
    /// Chat-completions URL of the reasoning labeler.
    #[arg(long)]
    labeler_url: Option<String>,
    /// Model id sent to the labeler.
    #[arg(long, default_value = "labeler")]
    labeler_model: String,
    /// Environment variable holding the labeler API key.
    #[arg(long, default_value = DEFAULT_API_KEY_ENV)]
    api_key_env: String,
    /// Replay cache of labeler responses (read first, filled on miss).
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Generic instruction data (JSONL with input/output) to interleave.
    #[arg(long)]
    external: Option<PathBuf>,
    /// Tag recorded on external samples.
    #[arg(long, default_value = "external")]
    external_tag: String,
    /// Ratio EXTERNAL:RAG for interleaving.
    #[arg(long, default_value = "4:1")]
    ratio: String,
    /// Templates directory overriding the built-ins.
    #[arg(long)]
    templates_dir: Option<PathBuf>,
    /// Concurrent labeler requests.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output dataset JSONL.
    #[arg(long)]
    out: PathBuf,
    /// Output manifest JSON.
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Plan file (TOML, or JSON with a .json extension).
    #[arg(long)]
    plan: PathBuf,
    /// Transcript JSONL; existing entries are reused.
    #[arg(long)]
    transcript: Option<PathBuf>,
    /// Results CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Ordering-delta CSV (needs original and reordered in the plan).
    #[arg(long)]
    deltas: Option<PathBuf>,
    /// Hard-negative results CSV (needs a hardneg section in the plan).
    #[arg(long)]
    hardneg_out: Option<PathBuf>,
    /// Per-query outcomes JSONL.
    #[arg(long)]
    per_query: Option<PathBuf>,
    /// Concurrent generations; defaults to the number of logical cores.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    /// Plan file the transcript was produced with.
    #[arg(long)]
    plan: PathBuf,
    /// Transcript JSONL written by `eval`.
    #[arg(long)]
    transcript: PathBuf,
    /// Results CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_pool(s: &str) -> std::result::Result<(Source, PathBuf), String> {
    let (source, path) = s.split_once('=').ok_or("expected SOURCE=FILE")?;
    Ok((source.parse()?, PathBuf::from(path)))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).map_err(|e| io_err(p, e))?),
        None => Box::new(io::stdout().lock()),
    })
}

fn io_err(path: &Path, source: io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

fn cmd_index(args: IndexArgs) -> Result<()> {
    let (store, report) = ingest_corpus(&args.corpus, IngestOptions { strict: args.strict })?;
    for line in &report.skipped_lines {
        log::warn!("{}:{line}: skipped malformed line", args.corpus.display());
    }
    store.save(&args.index)?;
    let stats = store.stats();
    eprintln!(
        "indexed {} passages ({} skipped lines, {} oversized) into {}",
        stats.passage_count,
        report.skipped_lines.len(),
        report.oversized.len(),
        args.index.display()
    );
    Ok(())
}

fn parallel_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    let jobs = jobs.max(1);
    if jobs == 1 || items.len() < 2 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(jobs);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| scope.spawn(|| part.iter().map(&f).collect::<Result<Vec<R>>>()))
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().expect("worker panicked")?);
        }
        Ok(out)
    })
}

fn cmd_retrieve(args: RetrieveArgs) -> Result<()> {
    let lists: Vec<RankedList> = match args.retriever {
        RetrieverKind::Bm25 => {
            let store = CorpusStore::load(&args.index)?;
            let queries = load_queries(&args.queries)?;
            let params = Bm25Params { k1: args.k1, b: args.b };
            parallel_map(&queries, args.jobs, |q| bm25_search(&store, q, args.k, params))?
        }
        RetrieverKind::Dense => {
            let (Some(qe), Some(pe)) = (&args.query_emb, &args.passage_emb) else {
                return Err(usage("--retriever dense needs --query-emb and --passage-emb"));
            };
            let queries = load_queries(&args.queries)?;
            let qt = EmbeddingTable::load(qe)?;
            let pt = EmbeddingTable::load(pe)?;
            parallel_map(&queries, args.jobs, |q| dense_search(q, &qt, &pt, args.k, &args.retriever_id))?
        }
        RetrieverKind::Mix => {
            if args.lists.len() < 2 {
                return Err(usage("--retriever mix needs at least two --lists files"));
            }
            let queries = load_queries(&args.queries)?;
            let mut sets = Vec::new();
            for path in &args.lists {
                sets.push(RankedSet::from_lists(read_ranked_lists(path)?));
            }
            let strategy = match args.strategy {
                MixArg::RoundRobin => MixStrategy::RoundRobin,
                MixArg::UnionByRank => MixStrategy::UnionByRank,
            };
            parallel_map(&queries, args.jobs, |q| {
                let mut per_query = Vec::new();
                for set in &sets {
                    for r in set.retrievers() {
                        per_query.push(set.get(r, &q.id)?.clone());
                    }
                }
                mix_retrievers(&per_query, args.k, strategy)
            })?
        }
    };
    write_ranked_lists(output(args.out.as_deref())?, &lists)
}

fn cmd_metrics(args: MetricsArgs) -> Result<()> {
    let store = CorpusStore::load(&args.index)?.without_index();
    let queries = load_queries(&args.queries)?;
    let mut by_retriever: BTreeMap<String, Vec<RankedList>> = BTreeMap::new();
    for path in &args.lists {
        for list in read_ranked_lists(path)? {
            by_retriever.entry(list.retriever_id.clone()).or_default().push(list);
        }
    }
    let rows = similarity_curves(&by_retriever, &queries, &args.ks, args.labeler.labeler(), &store)?;
    write_curves_csv(output(args.out.as_deref())?, &rows)
}

#[derive(serde::Serialize)]
struct DisplayOrder<'a> {
    query_id: &'a str,
    retriever_id: &'a str,
    ordering: String,
    passage_ids: Vec<String>,
}

fn cmd_reorder(args: ReorderArgs) -> Result<()> {
    let mut out = output(args.out.as_deref())?;
    let write_err = |e| io_err(Path::new("<output>"), e);
    match &args.lists {
        None => {
            let seq: Vec<String> = match args.ordering {
                OrderingStrategy::Reordered => reorder_sequence(args.k).iter().map(usize::to_string).collect(),
                other => raglab::context::order_items(&(1..=args.k).collect::<Vec<_>>(), other)
                    .iter()
                    .map(usize::to_string)
                    .collect(),
            };
            writeln!(out, "{}", seq.join(" ")).map_err(write_err)?;
        }
        Some(path) => {
            for list in read_ranked_lists(path)? {
                let record = DisplayOrder {
                    query_id: &list.query_id,
                    retriever_id: &list.retriever_id,
                    ordering: args.ordering.to_string(),
                    passage_ids: apply_ordering(&list, args.k, args.ordering),
                };
                serde_json::to_writer(&mut out, &record)?;
                writeln!(out).map_err(write_err)?;
            }
        }
    }
    out.flush().map_err(write_err)
}

fn cmd_hardneg(args: HardnegArgs) -> Result<()> {
    let store = CorpusStore::load(&args.index)?.without_index();
    let queries = load_queries(&args.queries)?;
    let ranked = RankedSet::from_lists(read_ranked_lists(&args.lists)?);
    let retriever = ranked
        .retrievers()
        .first()
        .map(|r| r.to_string())
        .ok_or_else(|| usage(format!("{} holds no ranked lists", args.lists.display())))?;
    let mut instances = Vec::new();
    let mut skipped = 0;
    for q in &queries {
        let list = ranked.get(&retriever, &q.id)?;
        let gold = match identify_gold(q, list, &store) {
            Ok(g) => g,
            Err(Error::NoGold(id)) => {
                log::warn!("no gold passage for query {id}; skipped");
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        for &k in &args.ks {
            let seed = child_seed(args.seed, &q.id, k);
            let built = match args.source {
                NegArg::Retriever => build_hardneg(q, gold, list, k, seed, &store),
                NegArg::Random => build_randomneg(q, gold, &store, k, seed),
            };
            match built {
                Ok(inst) => instances.push(inst),
                Err(e @ Error::InsufficientNegatives { .. }) => {
                    log::warn!("query {} K={k}: {e}; skipped", q.id);
                    skipped += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
    write_instances(&args.out, &instances)?;
    eprintln!("wrote {} instances ({skipped} skipped)", instances.len());
    Ok(())
}

fn cmd_build_ft(args: BuildFtArgs) -> Result<()> {
    let store = CorpusStore::load(&args.index)?.without_index();
    let registry = match &args.templates_dir {
        Some(dir) => TemplateRegistry::builtin_with_overrides(dir)?,
        None => TemplateRegistry::builtin(),
    };
    let mut pools: BTreeMap<Source, Vec<QueryRecord>> = BTreeMap::new();
    for (source, path) in &args.pools {
        pools.insert(source.clone(), load_queries(path)?);
    }
    let mut ranked = RankedSet::new();
    for path in &args.lists {
        for list in read_ranked_lists(path)? {
            ranked.insert(list);
        }
    }
    let k_policy = match (&args.k, &args.k_dynamic) {
        (Some(k), None) => KPolicy::Fixed(*k),
        (None, Some(lh)) => KPolicy::Dynamic { lo: lh[0], hi: lh[1] },
        _ => return Err(usage("give exactly one of --k or --k-dynamic")),
    };
    let retriever_policy = match args.retrievers.as_slice() {
        [one] => RetrieverPolicy::Single(one.clone()),
        many => RetrieverPolicy::Mixed(many.to_vec()),
    };
    let sources: Vec<Source> = pools.keys().cloned().collect();
    let mut config = MixConfig::uniform(&sources, args.per_source, retriever_policy, k_policy, args.seed);
    config.max_passages = args.max_passages;
    config.reasoning = args.reasoning;

    let live = match &args.labeler_url {
        Some(url) => Some(HttpBackend::new(HttpConfig {
            api_key_env: args.api_key_env.clone(),
            ..HttpConfig::new(url)
        })?),
        None => None,
    };
    let (mut samples, manifest) = if args.reasoning {
        let cache_dir = args
            .cache_dir
            .clone()
            .ok_or_else(|| usage("--reasoning needs --cache-dir (and --labeler-url for cache misses)"))?;
        let cached = CachedBackend::new(cache_dir, live)?;
        let labeler = Labeler {
            backend: &cached,
            model_id: args.labeler_model.clone(),
            parallelism: args.jobs,
        };
        build_mix(&config, &pools, &ranked, &registry, &store, Some(&labeler))?
    } else {
        build_mix(&config, &pools, &ranked, &registry, &store, None)?
    };
    if let Some(ext) = &args.external {
        let external = read_external(ext, &args.external_tag)?;
        samples = mix_external_sft(&samples, &external, parse_ratio(&args.ratio)?, args.seed)?;
    }
    write_samples(&args.out, &samples)?;
    write_manifest(&args.manifest, &manifest)?;
    eprintln!("wrote {} samples to {}", samples.len(), args.out.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let mut plan = ExperimentPlan::load(&args.plan)?;
    plan.parallelism = args
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let inputs = SweepInputs::load(&plan)?;
    let backend = plan.backend.build()?;
    let mut transcript = match &args.transcript {
        Some(p) => Transcript::open(p)?,
        None => Transcript::in_memory(),
    };
    let out = run_sweep(&plan, &inputs, Some(backend.as_ref()), &mut transcript)?;
    if out.failures > 0 {
        log::warn!("{} generations failed", out.failures);
    }
    write_csv(output(args.out.as_deref())?, &out.rows)?;
    if let Some(path) = &args.deltas {
        write_csv(output(Some(path))?, &compare_orderings(&out.rows)?)?;
    }
    if let Some(path) = &args.hardneg_out {
        let hn = run_hardneg_sweep(&plan, &inputs, Some(backend.as_ref()), &mut transcript)?;
        write_csv(output(Some(path))?, &hn.rows)?;
    }
    if let Some(path) = &args.per_query {
        let mut w = output(Some(path))?;
        for o in &out.per_query {
            serde_json::to_writer(&mut w, o)?;
            writeln!(w).map_err(|e| io_err(path, e))?;
        }
    }
    Ok(())
}

fn cmd_replay(args: ReplayArgs) -> Result<()> {
    let plan = ExperimentPlan::load(&args.plan)?;
    let inputs = SweepInputs::load(&plan)?;
    let mut transcript = Transcript::read(&args.transcript)?;
    let out = run_sweep(&plan, &inputs, None, &mut transcript)?;
    write_csv(output(args.out.as_deref())?, &out.rows)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Index(a) => cmd_index(a),
        Command::Retrieve(a) => cmd_retrieve(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Reorder(a) => cmd_reorder(a),
        Command::Hardneg(a) => cmd_hardneg(a),
        Command::BuildFt(a) => cmd_build_ft(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Replay(a) => cmd_replay(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_data_error() { 2 } else { 1 })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn every_flag_is_documented() {
        let mut cmd = Cli::command();
        for sub in cmd.get_subcommands_mut() {
            let name = sub.get_name().to_string();
            assert!(sub.get_about().is_some(), "{name} has no description");
            let help = sub.render_long_help().to_string();
            for arg in sub.get_arguments() {
                let Some(long) = arg.get_long() else { continue };
                if long == "help" || long == "version" {
                    continue;
                }
                assert!(arg.get_help().is_some(), "{name} --{long} has no help text");
                assert!(help.contains(&format!("--{long}")), "{name} help omits --{long}");
            }
        }
    }
}
