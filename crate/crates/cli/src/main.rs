mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dialmae::checkpoint::{self, Phase};
use dialmae::corpus::{
    all_pairs, assemble_encoder_input, load_jsonl, load_eval, load_sessions, Records, SynthSpec, Utterance,
    Vocabulary,
};
use dialmae::masking::MaskStrategy;
use dialmae::pipeline::{self, SweepCell};
use dialmae::retrieval::{build_index, evaluate, DenseVector};
use dialmae::training::{fine_tune, post_train, response_input, BiEncoder, Side};
use dialmae::{Error, Result};
use serde_json::json;

use config::{resolve, set, Overrides, Resolved, RunConfig};

const CHECKPOINT_DIR: &str = "checkpoint";
const EMBEDDINGS_DIR: &str = "embeddings";
const ITEMS_FILE: &str = "items.jsonl";

/// Dialogue masked auto-encoder post-training, bi-encoder fine-tuning and
/// response retrieval.
#[derive(Parser, Debug)]
#[command(name = "dialmae", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a synthetic session corpus and a held-out eval file.
    GenSynth(GenSynthArgs),
    /// Joint encoder/decoder masked auto-encoding post-training.
    PostTrain(PostTrainArgs),
    /// Contrastive bi-encoder fine-tuning from a post-training checkpoint.
    FineTune(FineTuneArgs),
    /// Compute R@k over an eval file.
    Eval(EvalArgs),
    /// Embed utterances or contexts into an embedding dump.
    Embed(EmbedArgs),
    /// Exact top-k retrieval of a context against an embedding dump.
    Retrieve(RetrieveArgs),
    /// Mask-rate / decoder-depth ablation grid.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct GenSynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    n_sessions: usize,
    /// Held-out sessions turned into eval blocks.
    #[arg(long, default_value_t = 500)]
    n_eval: usize,
    #[arg(long, default_value_t = 2000)]
    vocab_size: usize,
    #[arg(long, default_value_t = 6)]
    turns: usize,
    #[arg(long, default_value_t = 16)]
    n_topics: usize,
    #[arg(long, default_value_t = 0.7)]
    p_topic: f64,
    /// Context window of the eval queries.
    #[arg(long, default_value_t = 4)]
    max_ctx_turns: usize,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// Built-in preset: desk, ubuntu-style, ecommerce-style, ubuntu-paper-scale.
    #[arg(long)]
    preset: Option<String>,
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct ModelFlags {
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    n_heads: Option<usize>,
    #[arg(long)]
    ffn_dim: Option<usize>,
    #[arg(long)]
    n_enc_layers: Option<usize>,
    #[arg(long)]
    n_dec_layers: Option<usize>,
    #[arg(long)]
    max_enc_len: Option<usize>,
    #[arg(long)]
    max_dec_len: Option<usize>,
    #[arg(long)]
    dropout_rate: Option<f64>,
}

impl ModelFlags {
    fn apply(&self, m: &mut serde_json::Map<String, serde_json::Value>) {
        set(m, "vocab_size", self.vocab_size);
        set(m, "hidden_dim", self.hidden_dim);
        set(m, "n_heads", self.n_heads);
        set(m, "ffn_dim", self.ffn_dim);
        set(m, "n_enc_layers", self.n_enc_layers);
        set(m, "n_dec_layers", self.n_dec_layers);
        set(m, "max_enc_len", self.max_enc_len);
        set(m, "max_dec_len", self.max_dec_len);
        set(m, "dropout_rate", self.dropout_rate);
    }
}

#[derive(Args, Debug, Default)]
struct TrainFlags {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long = "lr")]
    base_lr: Option<f64>,
    #[arg(long)]
    warmup_ratio: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    max_ctx_turns: Option<usize>,
    #[arg(long)]
    pairs_per_session: Option<usize>,
    #[arg(long)]
    min_freq: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
}

impl TrainFlags {
    fn apply(&self, m: &mut serde_json::Map<String, serde_json::Value>) {
        set(m, "seed", self.seed);
        set(m, "max_steps", self.max_steps);
        set(m, "batch_size", self.batch_size);
        set(m, "base_lr", self.base_lr);
        set(m, "warmup_ratio", self.warmup_ratio);
        set(m, "weight_decay", self.weight_decay);
        set(m, "max_ctx_turns", self.max_ctx_turns);
        set(m, "pairs_per_session", self.pairs_per_session);
        set(m, "min_freq", self.min_freq);
        set(m, "temperature", self.temperature);
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StrategyArg {
    Replace,
    Bert,
}

#[derive(Args, Debug)]
struct PostTrainArgs {
    /// Session JSONL (falls back to the config file's `sessions`).
    #[arg(long)]
    sessions: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigArgs,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    train: TrainFlags,
    #[arg(long)]
    enc_mask_rate: Option<f64>,
    #[arg(long)]
    dec_mask_rate: Option<f64>,
    #[arg(long, value_enum)]
    mask_strategy: Option<StrategyArg>,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct FineTuneArgs {
    /// Post-training run directory or checkpoint directory.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    sessions: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigArgs,
    #[command(flatten)]
    train: TrainFlags,
    /// Share one tower between contexts and responses.
    #[arg(long)]
    tie_towers: bool,
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Tower {
    /// Fine-tuned context and response towers.
    Bi,
    /// Both sides through the post-trained encoder, no fine-tuning.
    PostOnly,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Eval JSONL with positional candidate blocks.
    #[arg(long)]
    eval: PathBuf,
    #[arg(long, value_enum, default_value_t = Tower::Bi)]
    tower: Tower,
    #[arg(long, default_value_t = pipeline::DEFAULT_BLOCK_SIZE)]
    block_size: usize,
    /// Also write eval.json, eval.csv and a run manifest here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SideArg {
    Context,
    Response,
}

#[derive(Args, Debug)]
struct EmbedArgs {
    /// Fine-tuning or post-training run directory or checkpoint directory.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Session or eval JSONL.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = SideArg::Response)]
    side: SideArg,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct RetrieveArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output directory of `embed`.
    #[arg(long)]
    embeddings: PathBuf,
    /// One context utterance, oldest first; repeat for several turns.
    #[arg(long = "context", required = true)]
    context: Vec<String>,
    #[arg(short = 'k', long, default_value_t = 5)]
    k: usize,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    sessions: Option<PathBuf>,
    #[arg(long)]
    eval: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Comma-separated enc:dec mask-rate pairs; dec 0 is the decoder-free baseline.
    #[arg(long, default_value = "0.15:0,0.15:0.15,0.30:0.75,0.30:0.90")]
    grid: String,
    /// Comma-separated decoder depths applied to every decoder cell.
    #[arg(long, default_value = "1")]
    layers: String,
    #[arg(long, default_value = "1,2,3")]
    seeds: String,
    #[command(flatten)]
    cfg: ConfigArgs,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    train: TrainFlags,
    /// Fine-tuning steps per cell.
    #[arg(long)]
    ft_steps: Option<usize>,
    #[arg(long)]
    ft_lr: Option<f64>,
    #[arg(long)]
    force: bool,
}

fn require(path: Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    path.or_else(|| fallback.clone())
        .ok_or_else(|| Error::Config(format!("--{what} is required (flag or config file)")))
}

fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.join(pipeline::RUN_MANIFEST).exists() && !force {
        return Err(Error::Invalid(format!("{} already holds a run (use --force to overwrite)", dir.display())));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Accepts either a checkpoint directory or a run directory containing one.
fn checkpoint_dir(path: &Path) -> PathBuf {
    let nested = path.join(CHECKPOINT_DIR);
    if nested.join(checkpoint::MANIFEST_FILE).exists() {
        nested
    } else {
        path.to_path_buf()
    }
}

fn load_bi(path: &Path, tower: Option<Tower>) -> Result<(BiEncoder, Vocabulary, u64)> {
    let dir = checkpoint_dir(path);
    let manifest = checkpoint::read_manifest(&dir)?;
    match (manifest.phase, tower) {
        (Phase::FineTune, None | Some(Tower::Bi)) => {
            let ft = checkpoint::load_fine_tuned(&dir)?;
            Ok((ft.bi, ft.vocab, ft.train_config.seed))
        }
        (Phase::PostTrain, None | Some(Tower::PostOnly)) => {
            let post = checkpoint::load_post_trained(&dir)?;
            Ok((pipeline::post_only_bi_encoder(&post), post.vocab, post.train_config.seed))
        }
        (Phase::PostTrain, Some(Tower::Bi)) => Err(Error::Invalid(
            "post-training checkpoint has no fine-tuned towers; use --tower post-only".into(),
        )),
        (Phase::FineTune, Some(Tower::PostOnly)) => {
            Err(Error::Invalid("--tower post-only needs a post-training checkpoint".into()))
        }
        (Phase::Embeddings, _) => Err(Error::Invalid(format!("{} is an embedding dump", dir.display()))),
    }
}

fn cmd_gen_synth(a: GenSynthArgs) -> Result<()> {
    let spec = SynthSpec {
        n_topics: a.n_topics,
        p_topic: a.p_topic,
        ..SynthSpec::new(a.seed, a.n_sessions, a.vocab_size, a.turns)
    };
    let data = pipeline::gen_synth_data(&spec, a.n_eval, a.max_ctx_turns)?;
    prepare_out_dir(&a.out_dir, a.force)?;
    let (s, e) = pipeline::write_synth_files(&data, &a.out_dir, a.force)?;
    let cfg = json!({ "synth": spec, "n_eval": a.n_eval, "max_ctx_turns": a.max_ctx_turns });
    pipeline::write_run_manifest(&a.out_dir, "gen-synth", a.seed, &cfg)?;
    eprintln!("wrote {} sessions to {} and {} eval lines to {}", data.train.len(), s.display(), data.eval.len(), e.display());
    Ok(())
}

fn cmd_post_train(a: PostTrainArgs) -> Result<()> {
    let file = RunConfig::load(a.cfg.config.as_deref())?;
    let mut flags = Overrides { preset: a.cfg.preset.clone(), ..Default::default() };
    a.model.apply(&mut flags.model);
    a.train.apply(&mut flags.post_train);
    set(&mut flags.post_train, "enc_mask_rate", a.enc_mask_rate);
    set(&mut flags.post_train, "dec_mask_rate", a.dec_mask_rate);
    set(
        &mut flags.post_train,
        "mask_strategy",
        a.mask_strategy.map(|s| match s {
            StrategyArg::Replace => MaskStrategy::Replace,
            StrategyArg::Bert => MaskStrategy::Bert801010,
        }),
    );
    let r = resolve(&file, &flags)?;
    let sessions_path = require(a.sessions, &file.sessions, "sessions")?;
    let out = require(a.out_dir, &file.out_dir, "out-dir")?;
    let sessions = load_sessions(&sessions_path)?;
    prepare_out_dir(&out, a.force)?;

    let post = post_train(&sessions, &r.model, &r.post_train)?;
    checkpoint::save_post_trained(&post, &out.join(CHECKPOINT_DIR))?;
    pipeline::write_metrics(&out, &post.logs, false)?;
    let cfg = run_config_json(&r, &sessions_path, "post_train");
    pipeline::write_run_manifest(&out, "post-train", r.post_train.seed, &cfg)?;
    if let Some(last) = post.logs.last() {
        eprintln!("post-train: {} steps, final L = {:.6}", last.step, last.l_total.unwrap_or(f64::NAN));
    }
    Ok(())
}

fn run_config_json(r: &Resolved, sessions: &Path, stage: &str) -> serde_json::Value {
    let train = if stage == "post_train" { &r.post_train } else { &r.fine_tune };
    json!({ "preset": r.preset, "model": r.model, stage: train, "sessions": sessions })
}

fn cmd_fine_tune(a: FineTuneArgs) -> Result<()> {
    let file = RunConfig::load(a.cfg.config.as_deref())?;
    let mut flags = Overrides { preset: a.cfg.preset.clone(), ..Default::default() };
    a.train.apply(&mut flags.fine_tune);
    if a.tie_towers {
        set(&mut flags.fine_tune, "tie_towers", Some(true));
    }
    let r = resolve(&file, &flags)?;
    let sessions_path = require(a.sessions, &file.sessions, "sessions")?;
    let out = require(a.out_dir, &file.out_dir, "out-dir")?;
    let post = checkpoint::load_post_trained(&checkpoint_dir(&a.checkpoint))?;
    let sessions = load_sessions(&sessions_path)?;
    prepare_out_dir(&out, a.force)?;

    let ft = fine_tune(&post, &sessions, &r.fine_tune)?;
    for w in &ft.warnings {
        eprintln!("warning: {w}");
    }
    checkpoint::save_fine_tuned(&ft, &out.join(CHECKPOINT_DIR))?;
    pipeline::write_metrics(&out, &ft.logs, true)?;
    let mut cfg = run_config_json(&r, &sessions_path, "fine_tune");
    cfg["model"] = serde_json::to_value(&post.model_config)?;
    cfg["post_checkpoint"] = json!(a.checkpoint);
    pipeline::write_run_manifest(&out, "fine-tune", r.fine_tune.seed, &cfg)?;
    if let Some(last) = ft.logs.last() {
        eprintln!("fine-tune: {} steps, final L_ft = {:.6}", last.step, last.l_ft.unwrap_or(f64::NAN));
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let (bi, vocab, seed) = load_bi(&a.checkpoint, Some(a.tower))?;
    let examples = load_eval(&a.eval)?;
    let report = evaluate(&bi, &vocab, &examples, a.block_size)?;
    let j = report.to_json();
    println!("{}", serde_json::to_string(&j)?);
    if let Some(out) = a.out_dir {
        prepare_out_dir(&out, a.force)?;
        let p = out.join("eval.json");
        fs::write(&p, format!("{}\n", serde_json::to_string_pretty(&j)?)).map_err(|e| Error::io(&p, e))?;
        let p = out.join("eval.csv");
        fs::write(&p, format!("{}\n{}\n", report.csv_header(), report.csv_row())).map_err(|e| Error::io(&p, e))?;
        let cfg = json!({ "checkpoint": a.checkpoint, "eval": a.eval, "tower": format!("{:?}", a.tower), "block_size": a.block_size });
        pipeline::write_run_manifest(&out, "eval", seed, &cfg)?;
    }
    Ok(())
}

fn cmd_embed(a: EmbedArgs) -> Result<()> {
    let (bi, vocab, seed) = load_bi(&a.checkpoint, None)?;
    let max_len = bi.config.max_enc_len;
    let side = match a.side {
        SideArg::Context => Side::Context,
        SideArg::Response => Side::Response,
    };
    // (id, turns) for every item to embed
    let items: Vec<(String, Vec<Utterance>)> = match (load_jsonl(&a.input)?, side) {
        (Records::Sessions(ss), Side::Response) => ss
            .iter()
            .enumerate()
            .flat_map(|(i, s)| s.utterances.iter().enumerate().map(move |(j, u)| (format!("s{i:05}.u{j:02}"), vec![u.clone()])))
            .collect(),
        (Records::Sessions(ss), Side::Context) => ss
            .iter()
            .enumerate()
            .flat_map(|(i, s)| all_pairs(s, i, usize::MAX).into_iter().map(move |p| (format!("s{i:05}.c{:02}", p.split_index), p.context)))
            .collect(),
        (Records::Labeled(ex), Side::Response) => {
            ex.iter().enumerate().map(|(i, e)| (format!("e{i:06}"), vec![e.response.clone()])).collect()
        }
        (Records::Labeled(ex), Side::Context) => ex
            .iter()
            .enumerate()
            .filter(|(i, _)| i % pipeline::DEFAULT_BLOCK_SIZE == 0)
            .map(|(i, e)| (format!("q{:05}", i / pipeline::DEFAULT_BLOCK_SIZE), e.context.clone()))
            .collect(),
    };
    let mut vectors = Vec::with_capacity(items.len());
    for (id, turns) in &items {
        let seq = match side {
            Side::Context => assemble_encoder_input(turns, &vocab, max_len)?,
            Side::Response => response_input(&turns[0], &vocab, max_len)?,
        };
        vectors.push(DenseVector::new(id.clone(), bi.embed(side, &seq)?));
    }
    prepare_out_dir(&a.out_dir, a.force)?;
    checkpoint::save_embeddings(&vectors, seed, &a.out_dir.join(EMBEDDINGS_DIR))?;
    let p = a.out_dir.join(ITEMS_FILE);
    let mut lines = String::new();
    for (id, turns) in &items {
        let text: Vec<&str> = turns.iter().map(|u| u.text.as_str()).collect();
        lines.push_str(&serde_json::to_string(&json!({ "id": id, "text": text.join(" [SEG] ") }))?);
        lines.push('\n');
    }
    fs::write(&p, lines).map_err(|e| Error::io(&p, e))?;
    let cfg = json!({ "checkpoint": a.checkpoint, "input": a.input, "side": format!("{:?}", a.side) });
    pipeline::write_run_manifest(&a.out_dir, "embed", seed, &cfg)?;
    eprintln!("embedded {} items", vectors.len());
    Ok(())
}

fn cmd_retrieve(a: RetrieveArgs) -> Result<()> {
    let (bi, vocab, _) = load_bi(&a.checkpoint, None)?;
    let pool = checkpoint::load_embeddings(&a.embeddings.join(EMBEDDINGS_DIR))?;
    let texts: std::collections::HashMap<String, String> = fs::read_to_string(a.embeddings.join(ITEMS_FILE))
        .ok()
        .map(|s| {
            s.lines()
                .filter_map(|l| serde_json::from_str::<serde_json::Value>(l).ok())
                .filter_map(|v| Some((v["id"].as_str()?.to_string(), v["text"].as_str()?.to_string())))
                .collect()
        })
        .unwrap_or_default();
    let context = a.context.iter().map(|t| Utterance::new(t)).collect::<Result<Vec<_>>>()?;
    let seq = assemble_encoder_input(&context, &vocab, bi.config.max_enc_len)?;
    let query = DenseVector::new("query", bi.embed(Side::Context, &seq)?);
    let index = build_index(pool)?;
    for (rank, (id, score)) in index.query_topk(&query, a.k)?.into_iter().enumerate() {
        let text = texts.get(&id).map(String::as_str).unwrap_or("");
        println!("{}\t{score:.6}\t{id}\t{text}", rank + 1);
    }
    Ok(())
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse().map_err(|_| Error::Config(format!("bad {what} entry {t:?}"))))
        .collect()
}

fn parse_grid(grid: &str, layers: &[usize]) -> Result<Vec<SweepCell>> {
    let mut cells: Vec<SweepCell> = Vec::new();
    for pair in grid.split(',').filter(|t| !t.trim().is_empty()) {
        let (e, d) = pair
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("grid entry {pair:?} is not enc:dec")))?;
        let parse = |x: &str| x.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad rate in {pair:?}")));
        let (e, d) = (parse(e)?, parse(d)?);
        for &l in layers {
            let cell = SweepCell::new(e, d, l);
            if !cells.contains(&cell) {
                cells.push(cell);
            }
        }
    }
    if cells.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    Ok(cells)
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let file = RunConfig::load(a.cfg.config.as_deref())?;
    let mut flags = Overrides { preset: a.cfg.preset.clone(), ..Default::default() };
    a.model.apply(&mut flags.model);
    a.train.apply(&mut flags.post_train);
    set(&mut flags.fine_tune, "max_steps", a.ft_steps);
    set(&mut flags.fine_tune, "base_lr", a.ft_lr);
    let r = resolve(&file, &flags)?;
    let layers: Vec<usize> = parse_list(&a.layers, "layer")?;
    if layers.is_empty() || layers.contains(&0) {
        return Err(Error::Config("--layers needs positive decoder depths".into()));
    }
    let cells = parse_grid(&a.grid, &layers)?;
    let seeds: Vec<u64> = parse_list(&a.seeds, "seed")?;
    let sessions_path = require(a.sessions, &file.sessions, "sessions")?;
    let eval_path = require(a.eval, &file.eval, "eval")?;
    let out = require(a.out_dir, &file.out_dir, "out-dir")?;
    let sessions = load_sessions(&sessions_path)?;
    let eval = load_eval(&eval_path)?;
    prepare_out_dir(&out, a.force)?;

    let rows = pipeline::run_sweep(&sessions, &eval, &r.model, &r.post_train, &r.fine_tune, &cells, &seeds)?;
    let csv = out.join("sweep.csv");
    pipeline::write_sweep_csv(&csv, &rows)?;
    let cfg = json!({
        "preset": r.preset, "model": r.model, "post_train": r.post_train, "fine_tune": r.fine_tune,
        "grid": a.grid, "layers": layers, "seeds": seeds, "sessions": sessions_path, "eval": eval_path,
    });
    pipeline::write_run_manifest(&out, "sweep", seeds[0], &cfg)?;
    print!("{}", fs::read_to_string(&csv).map_err(|e| Error::io(&csv, e))?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::GenSynth(a) => cmd_gen_synth(a),
        Cmd::PostTrain(a) => cmd_post_train(a),
        Cmd::FineTune(a) => cmd_fine_tune(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Embed(a) => cmd_embed(a),
        Cmd::Retrieve(a) => cmd_retrieve(a),
        Cmd::Sweep(a) => cmd_sweep(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
