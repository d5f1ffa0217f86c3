//! End-to-end stage drivers shared by the command line and the test suites:
//! synthetic data files, run manifests, metrics streams and ablation sweeps.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::Command;

use rand::Rng as _;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::corpus::{
    all_pairs, gen_synthetic_corpus_with, write_eval, write_sessions, DialogueSession, LabeledExample, SynthSpec,
    Utterance,
};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::retrieval::{evaluate, EvalReport};
use crate::rng;
use crate::training::{fine_tune, post_train, BiEncoder, PostTrained, StepLog, TrainConfig};

pub const SESSIONS_FILE: &str = "sessions.jsonl";
pub const EVAL_FILE: &str = "eval.jsonl";
pub const RUN_MANIFEST: &str = "manifest.json";
pub const METRICS_JSONL: &str = "metrics.jsonl";
pub const METRICS_CSV: &str = "metrics.csv";
pub const DEFAULT_BLOCK_SIZE: usize = 10;

/// Refuses to overwrite `path` unless `force` is set.
pub fn guard_output(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Invalid(format!("{} already exists (use --force to overwrite)", path.display())));
    }
    Ok(())
}

/// Retrieval blocks from held-out sessions.
///
/// Each session contributes one query at a random split point. The true next
/// utterance is placed at a random position among `block_size - 1` negatives
/// drawn from the utterances of the other sessions.
pub fn build_eval_set(
    sessions: &[DialogueSession],
    seed: u64,
    block_size: usize,
    max_ctx_turns: usize,
) -> Result<Vec<LabeledExample>> {
    if block_size < 2 {
        return Err(Error::Config("eval block size must be at least 2".into()));
    }
    if sessions.len() < 2 {
        return Err(Error::Config("need at least two held-out sessions to draw negatives".into()));
    }
    let mut rng = rng::stream(seed, "eval");
    let pool: Vec<(usize, &Utterance)> = sessions
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.utterances.iter().map(move |u| (i, u)))
        .collect();
    let mut out = Vec::with_capacity(sessions.len() * block_size);
    for (sid, session) in sessions.iter().enumerate() {
        let pairs = all_pairs(session, sid, max_ctx_turns);
        let pair = &pairs[rng.random_range(0..pairs.len())];
        let mut negatives = Vec::with_capacity(block_size - 1);
        while negatives.len() < block_size - 1 {
            let (owner, u) = pool[rng.random_range(0..pool.len())];
            if owner != sid {
                negatives.push(u.clone());
            }
        }
        let pos = rng.random_range(0..block_size);
        let mut negatives = negatives.into_iter();
        for slot in 0..block_size {
            let (response, label) = if slot == pos {
                (pair.response.clone(), 1)
            } else {
                (negatives.next().unwrap(), 0)
            };
            out.push(LabeledExample { context: pair.context.clone(), response, label });
        }
    }
    Ok(out)
}

/// Training sessions plus the held-out evaluation blocks of a synthetic corpus.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub train: Vec<DialogueSession>,
    pub eval: Vec<LabeledExample>,
}

/// Draws `spec.n_sessions + n_eval` sessions from one grammar and holds out the last `n_eval`.
pub fn gen_synth_data(spec: &SynthSpec, n_eval: usize, max_ctx_turns: usize) -> Result<SynthData> {
    let mut all = gen_synthetic_corpus_with(&SynthSpec { n_sessions: spec.n_sessions + n_eval, ..spec.clone() })?;
    let held_out = all.split_off(spec.n_sessions);
    let eval = build_eval_set(&held_out, spec.seed, DEFAULT_BLOCK_SIZE, max_ctx_turns)?;
    Ok(SynthData { train: all, eval })
}

pub fn write_synth_files(data: &SynthData, dir: &Path, force: bool) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (s, e) = (dir.join(SESSIONS_FILE), dir.join(EVAL_FILE));
    guard_output(&s, force)?;
    guard_output(&e, force)?;
    write_sessions(&s, &data.train)?;
    write_eval(&e, &data.eval)?;
    Ok((s, e))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// `git describe --always --dirty` of the working directory, or `"unknown"`.
pub fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    seed: u64,
    git_describe: String,
    config: &'a serde_json::Value,
    files: std::collections::BTreeMap<String, String>,
}

/// Writes `manifest.json` in `out_dir` with SHA-256 hashes of every regular
/// file below it (paths relative to `out_dir`, sorted).
pub fn write_run_manifest(out_dir: &Path, command: &str, seed: u64, config: &serde_json::Value) -> Result<PathBuf> {
    let mut files = std::collections::BTreeMap::new();
    let mut stack = vec![out_dir.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path != out_dir.join(RUN_MANIFEST) {
                let rel = path.strip_prefix(out_dir).unwrap().to_string_lossy().replace('\\', "/");
                files.insert(rel, sha256_file(&path)?);
            }
        }
    }
    let manifest = RunManifest { command, seed, git_describe: git_describe(), config, files };
    let path = out_dir.join(RUN_MANIFEST);
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Per-step metrics as JSON lines plus a CSV mirror.
pub fn write_metrics(out_dir: &Path, logs: &[StepLog], fine_tune: bool) -> Result<()> {
    let jp = out_dir.join(METRICS_JSONL);
    let mut j = BufWriter::new(File::create(&jp).map_err(|e| Error::io(&jp, e))?);
    let cp = out_dir.join(METRICS_CSV);
    let mut c = BufWriter::new(File::create(&cp).map_err(|e| Error::io(&cp, e))?);
    writeln!(c, "{}", StepLog::csv_header(fine_tune)).map_err(|e| Error::io(&cp, e))?;
    for l in logs {
        serde_json::to_writer(&mut j, l)?;
        j.write_all(b"\n").map_err(|e| Error::io(&jp, e))?;
        writeln!(c, "{}", l.csv_row()).map_err(|e| Error::io(&cp, e))?;
    }
    j.flush().map_err(|e| Error::io(&jp, e))?;
    c.flush().map_err(|e| Error::io(&cp, e))
}

/// Both towers are the post-trained encoder; no contrastive training.
pub fn post_only_bi_encoder(post: &PostTrained) -> BiEncoder {
    BiEncoder::from_encoder(&post.model_config, &post.params.encoder, true)
}

pub fn evaluate_post_only(post: &PostTrained, eval: &[LabeledExample], block_size: usize) -> Result<EvalReport> {
    evaluate(&post_only_bi_encoder(post), &post.vocab, eval, block_size)
}

/// One post-training regime of an ablation grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCell {
    pub enc_rate: f64,
    pub dec_rate: f64,
    pub n_dec_layers: usize,
}

impl SweepCell {
    /// A decoder mask rate of 0 means the plain-MLM baseline with no decoder.
    pub fn new(enc_rate: f64, dec_rate: f64, n_dec_layers: usize) -> Self {
        let n_dec_layers = if dec_rate == 0.0 { 0 } else { n_dec_layers };
        Self { enc_rate, dec_rate, n_dec_layers }
    }

    pub fn is_baseline(&self) -> bool {
        self.n_dec_layers == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub cell: SweepCell,
    pub seed: u64,
    pub final_loss: f64,
    pub report: EvalReport,
}

pub const SWEEP_CSV_HEADER: &str = "enc_rate,dec_rate,n_dec_layers,seed,final_l_total,R@1,R@2,R@5,n_queries";

impl SweepRow {
    pub fn csv_row(&self) -> String {
        let r = |k| self.report.get(k).map(|v: f64| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.cell.enc_rate,
            self.cell.dec_rate,
            self.cell.n_dec_layers,
            self.seed,
            self.final_loss,
            r(1),
            r(2),
            r(5),
            self.report.n_queries
        )
    }
}

/// Post-train, fine-tune and evaluate one cell under one seed. The seed
/// overrides both train configs so the corpus, initialization and sampling
/// streams are shared across cells.
pub fn run_cell(
    sessions: &[DialogueSession],
    eval: &[LabeledExample],
    model: &ModelConfig,
    post_tc: &TrainConfig,
    ft_tc: &TrainConfig,
    cell: SweepCell,
    seed: u64,
) -> Result<SweepRow> {
    let model = ModelConfig { n_dec_layers: cell.n_dec_layers, ..model.clone() };
    let post_tc = TrainConfig { enc_mask_rate: cell.enc_rate, dec_mask_rate: cell.dec_rate, seed, ..post_tc.clone() };
    let post = post_train(sessions, &model, &post_tc)?;
    let ft = fine_tune(&post, sessions, &TrainConfig { seed, ..ft_tc.clone() })?;
    let report = evaluate(&ft.bi, &ft.vocab, eval, DEFAULT_BLOCK_SIZE)?;
    let final_loss = post.logs.last().and_then(|l| l.l_total).unwrap_or(f64::NAN);
    Ok(SweepRow { cell, seed, final_loss, report })
}

pub fn run_sweep(
    sessions: &[DialogueSession],
    eval: &[LabeledExample],
    model: &ModelConfig,
    post_tc: &TrainConfig,
    ft_tc: &TrainConfig,
    cells: &[SweepCell],
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    if cells.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one seed".into()));
    }
    let mut rows = Vec::with_capacity(cells.len() * seeds.len());
    for cell in cells {
        for &seed in seeds {
            rows.push(run_cell(sessions, eval, model, post_tc, ft_tc, *cell, seed)?);
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    writeln!(w, "{SWEEP_CSV_HEADER}").map_err(|e| Error::io(path, e))?;
    for r in rows {
        writeln!(w, "{}", r.csv_row()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::gen_synthetic_corpus;
    use crate::retrieval::candidate_blocks;

    #[test]
    fn eval_blocks_are_well_formed() {
        let sessions = gen_synthetic_corpus(2, 30, 80, 5).unwrap();
        let eval = build_eval_set(&sessions, 2, 10, 4).unwrap();
        assert_eq!(eval.len(), 300);
        let blocks = candidate_blocks(&eval, 10).unwrap();
        let positions: std::collections::BTreeSet<usize> =
            blocks.iter().map(|b| b.iter().position(|e| e.label == 1).unwrap()).collect();
        assert!(positions.len() > 3, "positive should not sit at a fixed slot");
        assert_eq!(eval, build_eval_set(&sessions, 2, 10, 4).unwrap());
        assert!(build_eval_set(&sessions[..1], 2, 10, 4).is_err());
    }

    #[test]
    fn synth_files_respect_force() {
        let data = gen_synth_data(&SynthSpec::new(3, 12, 60, 4), 4, 10).unwrap();
        assert_eq!(data.train.len(), 12);
        assert_eq!(data.eval.len(), 40);
        let tmp = tempfile::tempdir().unwrap();
        let (s, _) = write_synth_files(&data, tmp.path(), false).unwrap();
        let first = fs::read(&s).unwrap();
        assert!(matches!(write_synth_files(&data, tmp.path(), false), Err(Error::Invalid(_))));
        write_synth_files(&data, tmp.path(), true).unwrap();
        assert_eq!(fs::read(&s).unwrap(), first);
        assert_eq!(first.iter().filter(|&&b| b == b'\n').count(), 12);
    }

    #[test]
    fn run_manifest_hashes_files() {
        let tmp = tempfile::tempdir().unwrap();
        fs::write(tmp.path().join("a.txt"), b"abc").unwrap();
        let p = write_run_manifest(tmp.path(), "test", 1, &serde_json::json!({"x": 1})).unwrap();
        let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap();
        assert_eq!(
            m["files"]["a.txt"],
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(m["seed"], 1);
    }

    #[test]
    fn baseline_cell_has_no_decoder() {
        assert!(SweepCell::new(0.15, 0.0, 1).is_baseline());
        assert!(!SweepCell::new(0.30, 0.75, 1).is_baseline());
    }
}
