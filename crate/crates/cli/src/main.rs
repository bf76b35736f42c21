use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use relkit::config::RunConfig;
use relkit::corpus::{
    default_lexicon, default_stoplist, filter_vocabulary, ingest_triplet_file, join_prose_lines, load_word_list,
    SvoExtractor, TripletCorpus,
};
use relkit::embed::EmbeddingTable;
use relkit::evalkit::{
    longtail_report, longtail_split, predcls_eval, predictions_to_jsonl, sgcls_eval, synonym_report, Report,
    ReportFormat, ScenePredictions,
};
use relkit::orm::{build_orm, sample_candidates, OrmTable};
use relkit::pipeline::{argmax_triplets, zeroshot_accuracy, zeroshot_rank, Predictor, Protocol};
use relkit::relhead::{train, Ablation, ModelParams};
use relkit::relhead::train::TrainData;
use relkit::sg::{read_scenes, write_scenes, SceneGraph, Vocabulary};
use relkit::synth::generate;
use relkit::zeroshot::LabelEmbeddingMatrix;
use relkit::{Error, Result};

#[derive(Parser)]
#[command(name = "relkit", version, about = "Scene-graph relationship toolkit")]
struct Cli {
    /// TOML run configuration; flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// worker threads (0 = all cores); RELKIT_THREADS caps this
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// add a generation timestamp to reports
    #[arg(long, global = true)]
    timestamps: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract triplets from text, or normalize a triplet JSONL file
    Parse(ParseArgs),
    /// Count a triplet corpus into a relationship prior table
    BuildOrm(BuildOrmArgs),
    /// Show ranked or sampled predicates for an object pair
    Query(QueryArgs),
    /// Print the pooled vector of a phrase
    Embed(EmbedArgs),
    /// Generate a synthetic dataset directory
    Synth(SynthArgs),
    Train(TrainArgs),
    Eval(EvalArgs),
    /// Classify annotated pairs against a label list by embedding similarity
    Zeroshot(ZeroshotArgs),
    /// Long-tail and synonym report over a predicate vocabulary
    Report(ReportArgs),
}

#[derive(Args)]
struct ParseArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// input is triplet JSONL (default: guessed from the .jsonl extension)
    #[arg(long)]
    jsonl: bool,
    /// join wrapped lines into paragraphs before extraction
    #[arg(long)]
    prose: bool,
    #[arg(long)]
    stoplist: Option<PathBuf>,
    #[arg(long = "predicate-lexicon")]
    predicate_lexicon: Option<PathBuf>,
    #[arg(long = "min-count")]
    min_count: Option<u64>,
}

#[derive(Args)]
struct BuildOrmArgs {
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "min-count")]
    min_count: Option<u64>,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    orm: Option<PathBuf>,
    #[arg(long)]
    subject: String,
    #[arg(long)]
    object: String,
    /// M: number of ranked predicates to show
    #[arg(long)]
    top: Option<usize>,
    /// K: draw this many of the top M instead of listing them
    #[arg(long)]
    draw: Option<usize>,
    /// unseen pairs get no predicates instead of global frequencies
    #[arg(long = "no-backoff")]
    no_backoff: bool,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    vectors: Option<PathBuf>,
    #[arg(long)]
    phrase: String,
    /// fail on unknown tokens
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// output directory
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    heldout: Option<usize>,
    #[arg(long = "train-pairs")]
    train_pairs: Option<usize>,
}

#[derive(Args, Default)]
struct DataPaths {
    #[arg(long)]
    objects: Option<PathBuf>,
    #[arg(long)]
    predicates: Option<PathBuf>,
    #[arg(long)]
    vectors: Option<PathBuf>,
    #[arg(long)]
    orm: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args, Default)]
struct ModelFlags {
    /// all-on, all-off, or a comma list of enabled components
    /// (object-attention, geo-objects, geo-relationships, so-attention)
    #[arg(long, value_parser = parse_ablation)]
    ablation: Option<Ablation>,
    /// on: scale the attention sum by 1/k; off: plain weighted sum
    #[arg(long = "attention-mean", value_parser = parse_on_off)]
    attention_mean: Option<bool>,
    #[arg(long)]
    r: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    paths: DataPaths,
    #[command(flatten)]
    model: ModelFlags,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long = "lr")]
    learning_rate: Option<f64>,
    #[arg(long = "batch-size")]
    batch_size: Option<usize>,
}

#[derive(Args)]
struct ReportFlags {
    #[arg(long)]
    format: Option<ReportFormat>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    paths: DataPaths,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    report: ReportFlags,
    #[arg(long)]
    test: Option<PathBuf>,
    /// predcls or sgcls
    #[arg(long)]
    protocol: Option<Protocol>,
    /// pool recall over all ground-truth triplets
    #[arg(long)]
    micro: bool,
    /// allow several predicates per pair
    #[arg(long = "no-graph-constraint")]
    no_graph_constraint: bool,
    #[arg(long = "recall-k", value_delimiter = ',')]
    recall_k: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    topk: Option<Vec<usize>>,
    /// also write per-scene predictions as JSONL
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Args)]
struct ZeroshotArgs {
    #[command(flatten)]
    paths: DataPaths,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    report: ReportFlags,
    /// candidate labels, one per line
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    scenes: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    topk: Option<Vec<usize>>,
    #[arg(long)]
    temperature: Option<f64>,
    /// write per-instance rankings as JSONL here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    report: ReportFlags,
    /// predicate vocabulary with counts
    #[arg(long)]
    predicates: Option<PathBuf>,
    #[arg(long)]
    vectors: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<u64>,
    #[arg(long = "synonym-threshold")]
    synonym_threshold: Option<f64>,
}

fn parse_on_off(s: &str) -> std::result::Result<bool, String> {
    match s {
        "on" | "true" => Ok(true),
        "off" | "false" => Ok(false),
        _ => Err(format!("expected on or off, got {s:?}")),
    }
}

fn parse_ablation(s: &str) -> std::result::Result<Ablation, String> {
    match s {
        "all-on" => return Ok(Ablation::all_on()),
        "all-off" | "none" => return Ok(Ablation::all_off()),
        _ => {}
    }
    let mut a = Ablation::all_off();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part {
            "object-attention" => a.object_attention = true,
            "geo-objects" => a.geometric_encoding_objects = true,
            "geo-relationships" => a.geometric_encoding_relationships = true,
            "so-attention" => a.subject_object_attention = true,
            other => return Err(format!("unknown component {other:?}")),
        }
    }
    Ok(a)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // usage errors share the invalid-argument code; help and version succeed
            return if e.use_stderr() { ExitCode::from(4) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// Loaded config with global flag overrides applied.
struct Ctx {
    cfg: RunConfig,
    threads: usize,
    timestamps: bool,
}

impl Ctx {
    fn new(cli: &Cli) -> Result<Self> {
        let mut cfg = match &cli.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = cli.seed {
            cfg.seed = s;
            cfg.synth.seed = s;
        }
        if let Some(t) = cli.threads {
            cfg.threads = t;
        }
        Ok(Ctx {
            threads: effective_threads(cfg.threads)?,
            cfg,
            timestamps: cli.timestamps,
        })
    }

    fn finish(&mut self) -> Result<()> {
        self.cfg.threads = self.threads;
        self.cfg.validate()
    }

    fn emit(&self, report: &Report, format: ReportFormat) {
        if self.timestamps {
            let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
            println!("# generated at unix time {secs}");
        }
        print!("{}", report.render(format));
    }

    fn format(&self, flag: &ReportFlags) -> ReportFormat {
        flag.format.unwrap_or(self.cfg.eval.format)
    }

    fn apply_paths(&mut self, p: &DataPaths) {
        let paths = &mut self.cfg.paths;
        for (slot, flag) in [
            (&mut paths.objects, &p.objects),
            (&mut paths.predicates, &p.predicates),
            (&mut paths.vectors, &p.vectors),
            (&mut paths.orm, &p.orm),
            (&mut paths.checkpoint, &p.checkpoint),
        ] {
            if flag.is_some() {
                slot.clone_from(flag);
            }
        }
    }

    fn apply_model(&mut self, m: &ModelFlags) {
        if let Some(a) = m.ablation {
            self.cfg.ablation = a;
        }
        if let Some(mean) = m.attention_mean {
            self.cfg.model.attention_mean = mean;
        }
        if let Some(r) = m.r {
            self.cfg.model.r = r;
        }
    }

    fn load_model_inputs(&self) -> Result<(Vocabulary, OrmTable, EmbeddingTable)> {
        let p = &self.cfg.paths;
        let objects = Vocabulary::load(self.cfg.require(&p.objects, "objects")?)?;
        let orm = OrmTable::load(self.cfg.require(&p.orm, "orm")?)?;
        let table = EmbeddingTable::load(self.cfg.require(&p.vectors, "vectors")?)?;
        if table.dim() != self.cfg.model.e {
            log::warn!(
                "word vectors have {} dimensions, config model.e says {}; using the table",
                table.dim(),
                self.cfg.model.e
            );
        }
        Ok((objects, orm, table))
    }

    fn predictor<'a>(
        &self,
        params: &'a ModelParams,
        objects: &'a Vocabulary,
        orm: &'a OrmTable,
        table: &'a EmbeddingTable,
    ) -> Predictor<'a> {
        Predictor {
            params,
            head: self.cfg.head_config(),
            policy: self.cfg.policy(),
            objects,
            orm,
            table,
        }
    }
}

fn effective_threads(requested: usize) -> Result<usize> {
    let all = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let mut n = if requested == 0 { all } else { requested };
    if let Ok(cap) = std::env::var("RELKIT_THREADS") {
        let cap: usize = cap
            .trim()
            .parse()
            .ok()
            .filter(|&c| c >= 1)
            .ok_or_else(|| Error::Config(format!("RELKIT_THREADS must be a positive integer, got {cap:?}")))?;
        n = n.min(cap);
    }
    Ok(n)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn run(cli: Cli) -> Result<()> {
    let mut ctx = Ctx::new(&cli)?;
    match cli.command {
        Command::Parse(a) => cmd_parse(ctx, a),
        Command::BuildOrm(a) => {
            if let Some(m) = a.min_count {
                ctx.cfg.orm.min_count = m;
            }
            ctx.finish()?;
            cmd_build_orm(ctx, a)
        }
        Command::Query(a) => cmd_query(ctx, a),
        Command::Embed(a) => cmd_embed(ctx, a),
        Command::Synth(a) => cmd_synth(ctx, a),
        Command::Train(a) => cmd_train(ctx, a),
        Command::Eval(a) => cmd_eval(ctx, a),
        Command::Zeroshot(a) => cmd_zeroshot(ctx, a),
        Command::Report(a) => cmd_report(ctx, a),
    }
}

fn cmd_parse(mut ctx: Ctx, a: ParseArgs) -> Result<()> {
    if let Some(m) = a.min_count {
        ctx.cfg.orm.min_count = m;
    }
    ctx.finish()?;
    let as_jsonl = a.jsonl || a.input.extension().is_some_and(|e| e == "jsonl");
    let corpus = if as_jsonl {
        ingest_triplet_file(&a.input)?
    } else {
        let stop: HashSet<String> = match &a.stoplist {
            Some(p) => load_word_list(p)?,
            None => default_stoplist(),
        };
        let lexicon = match &a.predicate_lexicon {
            Some(p) => load_word_list(p)?,
            None => default_lexicon(),
        };
        let text = fs::read_to_string(&a.input).map_err(|e| Error::io(&a.input, e))?;
        let text = if a.prose { join_prose_lines(&text) } else { text };
        TripletCorpus::from_triplets(SvoExtractor::new(stop, lexicon).extract(&text))
    };
    let (corpus, _, _) = filter_vocabulary(&corpus, ctx.cfg.orm.min_count)?;
    write_file(&a.out, &corpus.to_jsonl())?;
    println!("{}", corpus.total_weight());
    Ok(())
}

fn cmd_build_orm(ctx: Ctx, a: BuildOrmArgs) -> Result<()> {
    let input = a.input.or(ctx.cfg.paths.corpus.clone());
    let out = a.out.or(ctx.cfg.paths.orm.clone());
    let corpus = ingest_triplet_file(ctx.cfg.require(&input, "corpus")?)?;
    let (corpus, _, _) = filter_vocabulary(&corpus, ctx.cfg.orm.min_count)?;
    let orm = build_orm(&corpus);
    let out = ctx.cfg.require(&out, "orm")?;
    write_file(out, &orm.dump())?;
    println!("{} pairs, {} triplets", orm.num_pairs(), orm.total());
    Ok(())
}

fn cmd_query(mut ctx: Ctx, a: QueryArgs) -> Result<()> {
    if let Some(m) = a.top {
        ctx.cfg.orm.top_m = m;
    }
    match a.draw {
        Some(k) => ctx.cfg.orm.draw_k = k,
        // listing only: K is unused, keep it from failing K <= M
        None => ctx.cfg.orm.draw_k = ctx.cfg.orm.draw_k.min(ctx.cfg.orm.top_m),
    }
    if a.no_backoff {
        ctx.cfg.orm.backoff = false;
    }
    ctx.finish()?;
    let orm_path = a.orm.or(ctx.cfg.paths.orm.clone());
    let orm = OrmTable::load(ctx.cfg.require(&orm_path, "orm")?)?;
    let policy = ctx.cfg.policy();
    let mut out = String::new();
    if a.draw.is_some() {
        let drawn = sample_candidates(&orm, &a.subject, &a.object, policy.top_m, policy.draw_k, ctx.cfg.seed)?;
        for p in drawn {
            out.push_str(&p);
            out.push('\n');
        }
    } else {
        let lookup = orm.lookup_with(&a.subject, &a.object, policy.backoff);
        if lookup.backoff {
            log::warn!("pair ({}, {}) unseen; showing global frequencies", a.subject, a.object);
        }
        for (p, prob) in lookup.entries.iter().take(policy.top_m) {
            out.push_str(&format!("{p}\t{prob}\n"));
        }
    }
    print!("{out}");
    Ok(())
}

fn cmd_embed(mut ctx: Ctx, a: EmbedArgs) -> Result<()> {
    ctx.finish()?;
    let path = a.vectors.or(ctx.cfg.paths.vectors.clone());
    let table = EmbeddingTable::load(ctx.cfg.require(&path, "vectors")?)?;
    let v = table.embed_phrase(&a.phrase, a.strict || ctx.cfg.orm.strict_oov)?;
    if v.oov {
        log::warn!("no token of {:?} has a vector; printing zeros", a.phrase);
    }
    let line: Vec<String> = v.vector.iter().map(|x| x.to_string()).collect();
    println!("{}", line.join(" "));
    Ok(())
}

fn cmd_synth(mut ctx: Ctx, a: SynthArgs) -> Result<()> {
    if let Some(s) = a.sigma {
        ctx.cfg.synth.sigma = s;
    }
    if let Some(h) = a.heldout {
        ctx.cfg.synth.heldout_predicates = h;
    }
    if let Some(n) = a.train_pairs {
        ctx.cfg.synth.train_pairs = n;
    }
    ctx.finish()?;
    let ds = generate(&ctx.cfg.synth)?;
    let dir = &a.out;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_scenes(&dir.join("train.jsonl"), &ds.train)?;
    write_scenes(&dir.join("test.jsonl"), &ds.test)?;
    write_scenes(&dir.join("unseen.jsonl"), &ds.unseen)?;
    ds.objects.save(&dir.join("objects.txt"))?;
    ds.predicates.save(&dir.join("predicates.txt"))?;
    ds.labels.save(&dir.join("labels.txt"))?;
    ds.table.save(&dir.join("vectors.txt"))?;
    ds.corpus.save_jsonl(&dir.join("corpus.jsonl"))?;

    // a ready-to-use config pointing at the generated files
    let mut run = ctx.cfg.clone();
    run.threads = 0;
    run.model.e = ds.table.dim();
    run.paths.objects = Some("objects.txt".into());
    run.paths.predicates = Some("predicates.txt".into());
    run.paths.labels = Some("labels.txt".into());
    run.paths.vectors = Some("vectors.txt".into());
    run.paths.corpus = Some("corpus.jsonl".into());
    run.paths.orm = Some("orm.tsv".into());
    run.paths.train = Some("train.jsonl".into());
    run.paths.test = Some("test.jsonl".into());
    run.paths.checkpoint = Some("params.ckpt".into());
    write_file(&dir.join("relkit.toml"), &run.to_toml())?;
    println!(
        "{} train, {} test, {} unseen scenes in {}",
        ds.train.len(),
        ds.test.len(),
        ds.unseen.len(),
        dir.display()
    );
    Ok(())
}

fn cmd_train(mut ctx: Ctx, a: TrainArgs) -> Result<()> {
    ctx.apply_paths(&a.paths);
    ctx.apply_model(&a.model);
    if a.train.is_some() {
        ctx.cfg.paths.train.clone_from(&a.train);
    }
    if let Some(e) = a.epochs {
        ctx.cfg.train.epochs = e;
    }
    if let Some(lr) = a.learning_rate {
        ctx.cfg.train.learning_rate = lr;
    }
    if let Some(b) = a.batch_size {
        ctx.cfg.train.batch_size = b;
    }
    ctx.finish()?;
    let cfg = &ctx.cfg;
    let (objects, orm, table) = ctx.load_model_inputs()?;
    let predicates = Vocabulary::load(cfg.require(&cfg.paths.predicates, "predicates")?)?;
    let scenes = read_scenes(cfg.require(&cfg.paths.train, "train")?)?;
    let checkpoint = cfg.require(&cfg.paths.checkpoint, "checkpoint")?;
    let data = TrainData {
        scenes: &scenes,
        objects: &objects,
        predicates: &predicates,
        orm: &orm,
        table: &table,
    };
    let outcome = train(&cfg.train_config(), &data)?;
    write_file(checkpoint, &outcome.params.to_checkpoint())?;
    let mut stdout = std::io::stdout().lock();
    for (epoch, l) in outcome.epoch_losses.iter().enumerate() {
        writeln!(
            stdout,
            "epoch {}\tloss {:.6}\tobject {:.6}\trelationship {:.6}\tembedding {:.6}",
            epoch + 1,
            l.total,
            l.object,
            l.relationship,
            l.embedding
        )
        .map_err(|e| Error::io("<stdout>", e))?;
    }
    Ok(())
}

fn cmd_eval(mut ctx: Ctx, a: EvalArgs) -> Result<()> {
    ctx.apply_paths(&a.paths);
    ctx.apply_model(&a.model);
    if a.test.is_some() {
        ctx.cfg.paths.test.clone_from(&a.test);
    }
    if let Some(p) = a.protocol {
        ctx.cfg.eval.protocol = p;
    }
    if a.micro {
        ctx.cfg.eval.micro = true;
    }
    if a.no_graph_constraint {
        ctx.cfg.eval.graph_constraint = false;
    }
    if let Some(k) = &a.recall_k {
        ctx.cfg.eval.recall_k.clone_from(k);
    }
    if let Some(k) = &a.topk {
        ctx.cfg.eval.topk.clone_from(k);
    }
    ctx.finish()?;
    let cfg = &ctx.cfg;
    let (objects, orm, table) = ctx.load_model_inputs()?;
    let params = ModelParams::load(cfg.require(&cfg.paths.checkpoint, "checkpoint")?)?;
    let scenes = read_scenes(cfg.require(&cfg.paths.test, "test")?)?;
    let predictor = ctx.predictor(&params, &objects, &orm, &table);
    let protocol = cfg.eval.protocol;
    let scores = predictor.score_all(&scenes, protocol, ctx.threads)?;
    let graphs: Vec<SceneGraph> = scenes.iter().map(|s| s.graph.clone()).collect();
    let opts = cfg.eval_options();
    let (metrics, title) = match protocol {
        Protocol::PredCls => (predcls_eval(&scores, &graphs, &opts)?, "predcls"),
        Protocol::SgCls => (sgcls_eval(&scores, &graphs, &opts)?, "sgcls"),
    };
    if let Some(path) = &a.predictions {
        let items: Vec<ScenePredictions> = scores
            .iter()
            .enumerate()
            .map(|(i, s)| ScenePredictions {
                scene: i,
                triplets: argmax_triplets(s),
            })
            .collect();
        write_file(path, &predictions_to_jsonl(&items))?;
    }
    ctx.emit(&metrics.report(title), ctx.format(&a.report));
    Ok(())
}

fn cmd_zeroshot(mut ctx: Ctx, a: ZeroshotArgs) -> Result<()> {
    ctx.apply_paths(&a.paths);
    ctx.apply_model(&a.model);
    if a.labels.is_some() {
        ctx.cfg.paths.labels.clone_from(&a.labels);
    }
    if a.scenes.is_some() {
        ctx.cfg.paths.test.clone_from(&a.scenes);
    }
    if let Some(k) = &a.topk {
        ctx.cfg.eval.topk.clone_from(k);
    }
    if let Some(t) = a.temperature {
        ctx.cfg.eval.temperature = t;
    }
    ctx.finish()?;
    let cfg = &ctx.cfg;
    let (objects, orm, table) = ctx.load_model_inputs()?;
    let params = ModelParams::load(cfg.require(&cfg.paths.checkpoint, "checkpoint")?)?;
    let scenes = read_scenes(cfg.require(&cfg.paths.test, "test")?)?;
    let truth = Vocabulary::load(cfg.require(&cfg.paths.labels, "labels")?)?;
    let labels = LabelEmbeddingMatrix::from_labels(truth.labels(), &table)?;
    let predictor = ctx.predictor(&params, &objects, &orm, &table);
    let scores = predictor.score_all(&scenes, Protocol::PredCls, ctx.threads)?;
    let keep = cfg.eval.topk.iter().copied().max().unwrap_or(1);
    let instances = zeroshot_rank(&scores, &scenes, &truth, &labels, cfg.eval.temperature, keep)?;

    let mut lines = String::new();
    for i in &instances {
        if a.out.is_some() {
            lines.push_str(&serde_json::to_string(i).expect("serializable"));
            lines.push('\n');
        } else {
            lines.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                i.scene,
                i.subject,
                i.object,
                i.truth,
                i.ranked.join(",")
            ));
        }
    }
    match &a.out {
        Some(p) => write_file(p, &lines)?,
        None => print!("{lines}"),
    }
    let mut rows: Vec<Vec<String>> = cfg
        .eval
        .topk
        .iter()
        .map(|&k| vec![format!("top-{k}"), relkit::evalkit::fmt_metric(zeroshot_accuracy(&instances, k))])
        .collect();
    rows.push(vec!["instances".into(), instances.len().to_string()]);
    let report = Report {
        title: "zero-shot".into(),
        columns: vec!["metric".into(), "value".into()],
        rows,
    };
    ctx.emit(&report, ctx.format(&a.report));
    Ok(())
}

fn cmd_report(mut ctx: Ctx, a: ReportArgs) -> Result<()> {
    if a.predicates.is_some() {
        ctx.cfg.paths.predicates.clone_from(&a.predicates);
    }
    if a.vectors.is_some() {
        ctx.cfg.paths.vectors.clone_from(&a.vectors);
    }
    if let Some(t) = a.threshold {
        ctx.cfg.eval.longtail_threshold = t;
    }
    if let Some(t) = a.synonym_threshold {
        ctx.cfg.eval.synonym_threshold = t;
    }
    ctx.finish()?;
    let cfg = &ctx.cfg;
    let vocab = Vocabulary::load(cfg.require(&cfg.paths.predicates, "predicates")?)?;
    let table = EmbeddingTable::load(cfg.require(&cfg.paths.vectors, "vectors")?)?;
    let entries = synonym_report(&vocab, &table, cfg.eval.synonym_threshold, cfg.orm.strict_oov)?;
    let threshold = cfg.eval.longtail_threshold;
    let (rare, frequent) = longtail_split(&vocab, threshold);
    log::info!("{} rare, {} frequent predicates", rare.len(), frequent.len());
    ctx.emit(&longtail_report(&vocab, &entries, threshold), ctx.format(&a.report));
    Ok(())
}
