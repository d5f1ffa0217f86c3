//! Dialogue ingestion, vocabulary, tokenization and pair construction.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEG: &str = "[SEG]";
pub const MASK: &str = "[MASK]";
pub const EOT: &str = "[EOT]";

/// Special tokens in id order; they always occupy ids `0..SPECIALS.len()`.
pub const SPECIALS: [&str; 6] = [PAD, UNK, CLS, SEG, MASK, EOT];

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEG_ID: u32 = 3;
pub const MASK_ID: u32 = 4;
pub const EOT_ID: u32 = 5;
pub const FIRST_REGULAR_ID: u32 = SPECIALS.len() as u32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub text: String,
    pub speaker: Option<u32>,
}

impl Utterance {
    /// Builds an utterance with whitespace collapsed; empty text is rejected.
    pub fn new(text: &str) -> Result<Self> {
        let text = normalize_ws(text);
        if text.is_empty() {
            return Err(Error::Invalid("utterance is empty after whitespace normalization".into()));
        }
        Ok(Self { text, speaker: None })
    }

    pub fn with_speaker(mut self, speaker: u32) -> Self {
        self.speaker = Some(speaker);
        self
    }
}

fn normalize_ws(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogueSession {
    pub utterances: Vec<Utterance>,
}

impl DialogueSession {
    pub fn new(utterances: Vec<Utterance>) -> Result<Self> {
        if utterances.len() < 2 {
            return Err(Error::Invalid(format!(
                "a session needs at least 2 utterances, got {}",
                utterances.len()
            )));
        }
        Ok(Self { utterances })
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextResponsePair {
    pub context: Vec<Utterance>,
    pub response: Utterance,
    pub session_id: usize,
    /// Zero-based index of the response within its session.
    pub split_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledExample {
    pub context: Vec<Utterance>,
    pub response: Utterance,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    /// Number of leading non-pad positions.
    pub attention_len: usize,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// The non-pad prefix of the sequence.
    pub fn active(&self) -> &[u32] {
        &self.ids[..self.attention_len]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    /// Rebuilds a vocabulary from its id-ordered token list, checking the special prefix.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens.iter().zip(SPECIALS).any(|(a, b)| a != b) {
            return Err(Error::Invalid("vocabulary does not start with the special tokens".into()));
        }
        let vocab = Self::from(tokens);
        if vocab.index.len() != vocab.tokens.len() {
            return Err(Error::Invalid("vocabulary contains duplicate tokens".into()));
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_special(id: u32) -> bool {
        id < FIRST_REGULAR_ID
    }
}

/// Builds a frequency-ranked vocabulary; ties are broken lexicographically.
///
/// `max_size` counts the special tokens.
pub fn build_vocab(sessions: &[DialogueSession], min_freq: usize, max_size: usize) -> Result<Vocabulary> {
    if min_freq < 1 {
        return Err(Error::Config("min_freq must be at least 1".into()));
    }
    if max_size <= SPECIALS.len() {
        return Err(Error::Config(format!(
            "max_size must exceed the {} special tokens",
            SPECIALS.len()
        )));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for u in sessions.iter().flat_map(|s| &s.utterances) {
        for w in u.text.split_whitespace() {
            *counts.entry(w.to_lowercase()).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::Empty("corpus has no tokens".into()));
    }
    let mut ranked: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(w, c)| *c >= min_freq && !SPECIALS.contains(&w.as_str()))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size - SPECIALS.len());

    let tokens: Vec<String> = SPECIALS
        .iter()
        .map(|s| s.to_string())
        .chain(ranked.into_iter().map(|(w, _)| w))
        .collect();
    Ok(Vocabulary::from(tokens))
}

/// Lowercased whitespace tokenization; unknown words map to `[UNK]`.
pub fn tokenize(text: &str, vocab: &Vocabulary) -> TokenSeq {
    let ids: Vec<u32> = text
        .split_whitespace()
        .map(|w| vocab.id(&w.to_lowercase()).unwrap_or(UNK_ID))
        .collect();
    let attention_len = ids.len();
    TokenSeq { ids, attention_len }
}

pub fn detokenize(ids: &[u32], vocab: &Vocabulary) -> String {
    ids.iter()
        .map(|&id| vocab.token(id).unwrap_or(UNK))
        .collect::<Vec<_>>()
        .join(" ")
}

fn pair_at(session: &DialogueSession, session_id: usize, split_index: usize, max_ctx_turns: usize) -> ContextResponsePair {
    let start = split_index.saturating_sub(max_ctx_turns);
    ContextResponsePair {
        context: session.utterances[start..split_index].to_vec(),
        response: session.utterances[split_index].clone(),
        session_id,
        split_index,
    }
}

/// Samples up to `num_samples` distinct split points of a session.
///
/// Each pair takes one utterance as the response and up to `max_ctx_turns`
/// immediately preceding utterances as its context. Sampling is without
/// replacement and stops once every split point has been drawn.
pub fn sample_pairs(
    session: &DialogueSession,
    session_id: usize,
    rng: &mut Rng,
    num_samples: usize,
    max_ctx_turns: usize,
) -> Result<Vec<ContextResponsePair>> {
    if session.len() < 2 {
        return Err(Error::Invalid(format!(
            "session {session_id} has {} utterances; need at least 2",
            session.len()
        )));
    }
    if num_samples < 1 || max_ctx_turns < 1 {
        return Err(Error::Config("num_samples and max_ctx_turns must be at least 1".into()));
    }
    let splits = session.len() - 1;
    let take = num_samples.min(splits);
    Ok(index::sample(rng, splits, take)
        .into_iter()
        .map(|k| pair_at(session, session_id, k + 1, max_ctx_turns))
        .collect())
}

/// Every split point of a session, in order.
pub fn all_pairs(session: &DialogueSession, session_id: usize, max_ctx_turns: usize) -> Vec<ContextResponsePair> {
    (1..session.len())
        .map(|j| pair_at(session, session_id, j, max_ctx_turns))
        .collect()
}

/// `[CLS] u1 [SEG] u2 [SEG] ...`, left-truncated to `max_len` and padded.
pub fn assemble_encoder_input(context: &[Utterance], vocab: &Vocabulary, max_len: usize) -> Result<TokenSeq> {
    if max_len < 2 {
        return Err(Error::Config(format!("encoder max_len must be at least 2, got {max_len}")));
    }
    if context.is_empty() {
        return Err(Error::Invalid("context must contain at least one utterance".into()));
    }
    let mut body = Vec::new();
    for u in context {
        body.extend(tokenize(&u.text, vocab).ids);
        body.push(SEG_ID);
    }
    let keep = body.len().min(max_len - 1);
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS_ID);
    ids.extend_from_slice(&body[body.len() - keep..]);
    let attention_len = ids.len();
    ids.resize(max_len, PAD_ID);
    Ok(TokenSeq { ids, attention_len })
}

/// `[CLS] response`, right-truncated to `max_len` and padded. Slot 0 is the
/// bottleneck slot that the decoder overwrites with the context embedding.
pub fn assemble_decoder_input(response: &Utterance, vocab: &Vocabulary, max_len: usize) -> Result<TokenSeq> {
    if max_len < 2 {
        return Err(Error::Config(format!("decoder max_len must be at least 2, got {max_len}")));
    }
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS_ID);
    ids.extend(tokenize(&response.text, vocab).ids.into_iter().take(max_len - 1));
    let attention_len = ids.len();
    ids.resize(max_len, PAD_ID);
    Ok(TokenSeq { ids, attention_len })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionRecord {
    utterances: Vec<String>,
    #[serde(default)]
    speakers: Option<Vec<u32>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalRecord {
    context: Vec<String>,
    response: String,
    label: u8,
}

#[derive(Serialize)]
struct SessionOut<'a> {
    utterances: Vec<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    speakers: Option<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Records {
    Sessions(Vec<DialogueSession>),
    Labeled(Vec<LabeledExample>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    Session,
    Eval,
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

fn utterances_from(path: &Path, line: usize, texts: &[String]) -> Result<Vec<Utterance>> {
    texts
        .iter()
        .map(|t| Utterance::new(t).map_err(|e| parse_err(path, line, e.to_string())))
        .collect()
}

fn parse_session(path: &Path, line: usize, raw: &str) -> Result<DialogueSession> {
    let rec: SessionRecord = serde_json::from_str(raw).map_err(|e| parse_err(path, line, e.to_string()))?;
    let mut utterances = utterances_from(path, line, &rec.utterances)?;
    if let Some(speakers) = rec.speakers {
        if speakers.len() != utterances.len() {
            return Err(parse_err(path, line, "speakers and utterances differ in length"));
        }
        for (u, s) in utterances.iter_mut().zip(speakers) {
            u.speaker = Some(s);
        }
    }
    DialogueSession::new(utterances).map_err(|e| parse_err(path, line, e.to_string()))
}

fn parse_eval(path: &Path, line: usize, raw: &str) -> Result<LabeledExample> {
    let rec: EvalRecord = serde_json::from_str(raw).map_err(|e| parse_err(path, line, e.to_string()))?;
    if rec.label > 1 {
        return Err(parse_err(path, line, format!("label must be 0 or 1, got {}", rec.label)));
    }
    let context = utterances_from(path, line, &rec.context)?;
    if context.is_empty() {
        return Err(parse_err(path, line, "context is empty"));
    }
    let response = Utterance::new(&rec.response).map_err(|e| parse_err(path, line, e.to_string()))?;
    Ok(LabeledExample { context, response, label: rec.label })
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    if out.is_empty() {
        return Err(Error::Empty(format!("{} contains no records", path.display())));
    }
    Ok(out)
}

/// Reads a JSONL corpus; the first record decides whether it is a session or eval file.
pub fn load_jsonl(path: &Path) -> Result<Records> {
    let lines = read_lines(path)?;
    let (first_no, first) = &lines[0];
    let probe: serde_json::Value = serde_json::from_str(first).map_err(|e| parse_err(path, *first_no, e.to_string()))?;
    let kind = if probe.get("utterances").is_some() { RecordKind::Session } else { RecordKind::Eval };
    parse_lines(path, &lines, kind)
}

pub fn load_sessions(path: &Path) -> Result<Vec<DialogueSession>> {
    match parse_lines(path, &read_lines(path)?, RecordKind::Session)? {
        Records::Sessions(s) => Ok(s),
        Records::Labeled(_) => unreachable!(),
    }
}

pub fn load_eval(path: &Path) -> Result<Vec<LabeledExample>> {
    match parse_lines(path, &read_lines(path)?, RecordKind::Eval)? {
        Records::Labeled(l) => Ok(l),
        Records::Sessions(_) => unreachable!(),
    }
}

fn parse_lines(path: &Path, lines: &[(usize, String)], kind: RecordKind) -> Result<Records> {
    match kind {
        RecordKind::Session => lines
            .iter()
            .map(|(n, l)| parse_session(path, *n, l))
            .collect::<Result<_>>()
            .map(Records::Sessions),
        RecordKind::Eval => lines
            .iter()
            .map(|(n, l)| parse_eval(path, *n, l))
            .collect::<Result<_>>()
            .map(Records::Labeled),
    }
}

pub fn write_sessions(path: &Path, sessions: &[DialogueSession]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in sessions {
        let speakers = s.utterances.iter().map(|u| u.speaker).collect::<Option<Vec<_>>>();
        let rec = SessionOut { utterances: s.utterances.iter().map(|u| u.text.as_str()).collect(), speakers };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_eval(path: &Path, examples: &[LabeledExample]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for ex in examples {
        let rec = EvalRecord {
            context: ex.context.iter().map(|u| u.text.clone()).collect(),
            response: ex.response.text.clone(),
            label: ex.label,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parameters of the seeded topic grammar behind the synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_sessions: usize,
    pub vocab_size: usize,
    pub turns_per_session: usize,
    pub n_topics: usize,
    /// Probability that a token is drawn from the session topic rather than the shared noise pool.
    pub p_topic: f64,
    pub min_utt_len: usize,
    pub max_utt_len: usize,
}

impl SynthSpec {
    pub fn new(seed: u64, n_sessions: usize, vocab_size: usize, turns_per_session: usize) -> Self {
        Self {
            seed,
            n_sessions,
            vocab_size,
            turns_per_session,
            n_topics: 16,
            p_topic: 0.7,
            min_utt_len: 4,
            max_utt_len: 10,
        }
    }
}

/// Word inventory of the synthetic grammar: per-topic word lists and a shared noise pool.
#[derive(Debug, Clone)]
pub struct SynthLexicon {
    pub topics: Vec<Vec<String>>,
    pub noise: Vec<String>,
}

impl SynthLexicon {
    pub fn new(vocab_size: usize, n_topics: usize) -> Result<Self> {
        if vocab_size < 20 {
            return Err(Error::Config(format!("synthetic vocab_size must be at least 20, got {vocab_size}")));
        }
        let n_noise_min = vocab_size / 4;
        let topical = vocab_size - n_noise_min;
        let n_topics = n_topics.clamp(1, topical);
        let per_topic = topical / n_topics;
        let n_noise = vocab_size - per_topic * n_topics;
        let topics = (0..n_topics)
            .map(|t| (0..per_topic).map(|k| format!("t{t:02}w{k:03}")).collect())
            .collect();
        let noise = (0..n_noise).map(|k| format!("n{k:03}")).collect();
        Ok(Self { topics, noise })
    }

    pub fn is_topic_word(word: &str) -> bool {
        word.starts_with('t')
    }
}

pub fn gen_synthetic_corpus(seed: u64, n_sessions: usize, vocab_size: usize, turns_per_session: usize) -> Result<Vec<DialogueSession>> {
    gen_synthetic_corpus_with(&SynthSpec::new(seed, n_sessions, vocab_size, turns_per_session))
}

/// Generates sessions from the topic grammar: each session draws one latent
/// topic and every token comes from that topic with probability `p_topic`,
/// otherwise from the shared noise pool.
pub fn gen_synthetic_corpus_with(spec: &SynthSpec) -> Result<Vec<DialogueSession>> {
    if spec.n_sessions < 1 {
        return Err(Error::Config("n_sessions must be at least 1".into()));
    }
    if spec.turns_per_session < 2 {
        return Err(Error::Config("turns_per_session must be at least 2".into()));
    }
    if !(0.0..=1.0).contains(&spec.p_topic) {
        return Err(Error::Config("p_topic must lie in [0, 1]".into()));
    }
    if spec.min_utt_len < 1 || spec.max_utt_len < spec.min_utt_len {
        return Err(Error::Config("utterance length range is empty".into()));
    }
    let lex = SynthLexicon::new(spec.vocab_size, spec.n_topics)?;
    let mut rng = rng::stream(spec.seed, "corpus");
    let mut sessions = Vec::with_capacity(spec.n_sessions);
    for _ in 0..spec.n_sessions {
        let topic = &lex.topics[rng.random_range(0..lex.topics.len())];
        let utterances = (0..spec.turns_per_session)
            .map(|turn| {
                let len = rng.random_range(spec.min_utt_len..=spec.max_utt_len);
                let words: Vec<&str> = (0..len)
                    .map(|_| {
                        let pool = if rng.random_bool(spec.p_topic) { topic } else { &lex.noise };
                        pool[rng.random_range(0..pool.len())].as_str()
                    })
                    .collect();
                Utterance { text: words.join(" "), speaker: Some((turn % 2) as u32) }
            })
            .collect();
        sessions.push(DialogueSession { utterances });
    }
    Ok(sessions)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn utt(s: &str) -> Utterance {
        Utterance::new(s).unwrap()
    }

    fn session(texts: &[&str]) -> DialogueSession {
        DialogueSession::new(texts.iter().map(|t| utt(t)).collect()).unwrap()
    }

    fn vocab_of(words: &[&str]) -> Vocabulary {
        let tokens = SPECIALS.iter().chain(words).map(|s| s.to_string()).collect();
        Vocabulary::from_tokens(tokens).unwrap()
    }

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_session_line() {
        let f = write_tmp("{\"utterances\":[\"hi\",\"hello\",\"bye\"]}\n");
        match load_jsonl(f.path()).unwrap() {
            Records::Sessions(s) => {
                assert_eq!(s.len(), 1);
                assert_eq!(s[0].len(), 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn loads_eval_line() {
        let f = write_tmp("{\"context\":[\"a\",\"b\"],\"response\":\"c\",\"label\":1}\n");
        let ex = load_eval(f.path()).unwrap();
        assert_eq!(ex[0].context.len(), 2);
        assert_eq!(ex[0].response.text, "c");
        assert_eq!(ex[0].label, 1);
        assert!(matches!(load_jsonl(f.path()).unwrap(), Records::Labeled(_)));
    }

    #[test]
    fn missing_response_reports_line() {
        let f = write_tmp(concat!(
            "{\"context\":[\"a\"],\"response\":\"c\",\"label\":1}\n",
            "{\"context\":[\"a\"],\"label\":0}\n",
        ));
        match load_eval(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_error() {
        let f = write_tmp("");
        assert!(matches!(load_jsonl(f.path()), Err(Error::Empty(_))));
    }

    #[test]
    fn speakers_must_match_length() {
        let f = write_tmp("{\"utterances\":[\"a\",\"b\"],\"speakers\":[0]}\n");
        assert!(matches!(load_sessions(f.path()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn vocab_frequency_filter() {
        let s = session(&["a a a", "a a b"]);
        let v = build_vocab(&[s], 2, 100).unwrap();
        assert_eq!(v.len(), SPECIALS.len() + 1);
        assert_eq!(v.id("a"), Some(FIRST_REGULAR_ID));
        assert_eq!(v.id("b"), None);
    }

    #[test]
    fn vocab_truncation_and_ties() {
        let s = session(&["zeta beta alpha", "zeta beta alpha gamma"]);
        let one = build_vocab(std::slice::from_ref(&s), 1, SPECIALS.len() + 1).unwrap();
        assert_eq!(one.len(), SPECIALS.len() + 1);
        assert_eq!(one.token(FIRST_REGULAR_ID), Some("alpha"));

        let all = build_vocab(&[s], 1, 100).unwrap();
        let regular: Vec<_> = all.tokens()[SPECIALS.len()..].to_vec();
        assert_eq!(regular, ["alpha", "beta", "zeta", "gamma"]);
    }

    #[test]
    fn vocab_specials_first_and_inverse() {
        let v = build_vocab(&[session(&["x y", "y z"])], 1, 50).unwrap();
        for (i, s) in SPECIALS.iter().enumerate() {
            assert_eq!(v.id(s), Some(i as u32));
        }
        for (i, t) in v.tokens().iter().enumerate() {
            assert_eq!(v.id(t), Some(i as u32));
        }
    }

    #[test]
    fn empty_corpus_vocab_error() {
        assert!(matches!(build_vocab(&[], 1, 50), Err(Error::Empty(_))));
    }

    #[test]
    fn tokenize_cases() {
        let v = vocab_of(&["hello", "world"]);
        assert_eq!(tokenize("Hello world", &v).ids, vec![v.id("hello").unwrap(), v.id("world").unwrap()]);
        assert_eq!(tokenize("qwzx", &v).ids, vec![UNK_ID]);
        let empty = tokenize("", &v);
        assert!(empty.ids.is_empty());
        assert_eq!(empty.attention_len, 0);
    }

    #[test]
    fn detokenize_round_trip() {
        let v = vocab_of(&["hello", "world"]);
        let text = "  HELLO   world hello ";
        let back = detokenize(&tokenize(text, &v).ids, &v);
        assert_eq!(back, normalize_ws(text).to_lowercase());
    }

    #[test]
    fn sample_pairs_enumerates_all_split_points() {
        let s = session(&["u1", "u2", "u3", "u4", "u5"]);
        let mut rng = rng::stream(0, "t");
        let mut pairs = sample_pairs(&s, 7, &mut rng, 4, 10).unwrap();
        pairs.sort_by_key(|p| p.split_index);
        let expected: Vec<_> = (1..5).map(|j| pair_at(&s, 7, j, 10)).collect();
        assert_eq!(pairs, expected);
        for p in &pairs {
            assert_eq!(p.context, s.utterances[..p.split_index].to_vec());
        }
    }

    #[test]
    fn sample_pairs_exhausts_short_session() {
        let s = session(&["u1", "u2"]);
        let mut rng = rng::stream(0, "t");
        let pairs = sample_pairs(&s, 0, &mut rng, 10, 10).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].context, vec![utt("u1")]);
        assert_eq!(pairs[0].response, utt("u2"));
    }

    #[test]
    fn sample_pairs_window_clamp() {
        let s = session(&["u1", "u2", "u3", "u4", "u5"]);
        let p = pair_at(&s, 0, 4, 1);
        assert_eq!(p.context, vec![utt("u4")]);
        assert_eq!(p.response, utt("u5"));
    }

    #[test]
    fn sample_pairs_rejects_short_session() {
        let s = DialogueSession { utterances: vec![utt("only")] };
        let mut rng = rng::stream(0, "t");
        assert!(sample_pairs(&s, 0, &mut rng, 1, 3).is_err());
    }

    #[test]
    fn encoder_input_layout() {
        let v = vocab_of(&["hi", "yo"]);
        let seq = assemble_encoder_input(&[utt("hi"), utt("yo")], &v, 8).unwrap();
        let (hi, yo) = (v.id("hi").unwrap(), v.id("yo").unwrap());
        assert_eq!(seq.ids, vec![CLS_ID, hi, SEG_ID, yo, SEG_ID, PAD_ID, PAD_ID, PAD_ID]);
        assert_eq!(seq.attention_len, 5);

        let single = assemble_encoder_input(&[utt("hi yo")], &v, 6).unwrap();
        assert_eq!(single.ids, vec![CLS_ID, hi, yo, SEG_ID, PAD_ID, PAD_ID]);
    }

    #[test]
    fn encoder_input_left_truncation() {
        let v = vocab_of(&["a", "b", "c", "d"]);
        let id = |w| v.id(w).unwrap();
        let seq = assemble_encoder_input(&[utt("a b"), utt("c d")], &v, 5).unwrap();
        assert_eq!(seq.ids, vec![CLS_ID, SEG_ID, id("c"), id("d"), SEG_ID]);
        assert_eq!(seq.attention_len, 5);
        assert!(assemble_encoder_input(&[utt("a")], &v, 1).is_err());
    }

    #[test]
    fn decoder_input_layout() {
        let v = vocab_of(&["ok", "thanks"]);
        let seq = assemble_decoder_input(&utt("ok thanks"), &v, 4).unwrap();
        assert_eq!(seq.ids, vec![CLS_ID, v.id("ok").unwrap(), v.id("thanks").unwrap(), PAD_ID]);

        let long = assemble_decoder_input(&utt("ok thanks ok thanks"), &v, 3).unwrap();
        assert_eq!(long.ids, vec![CLS_ID, v.id("ok").unwrap(), v.id("thanks").unwrap()]);

        let empty = Utterance { text: String::new(), speaker: None };
        let seq = assemble_decoder_input(&empty, &v, 4).unwrap();
        assert_eq!(seq.ids, vec![CLS_ID, PAD_ID, PAD_ID, PAD_ID]);
        assert_eq!(seq.attention_len, 1);
    }

    #[test]
    fn synthetic_corpus_is_deterministic() {
        let a = gen_synthetic_corpus(42, 20, 100, 5).unwrap();
        let b = gen_synthetic_corpus(42, 20, 100, 5).unwrap();
        assert_eq!(a, b);
        let c = gen_synthetic_corpus(43, 20, 100, 5).unwrap();
        assert_ne!(a, c);
        let one = gen_synthetic_corpus(1, 1, 50, 4).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].len(), 4);
    }

    #[test]
    fn synthetic_lexicon_covers_vocab_size() {
        for size in [20, 57, 200, 2000] {
            let lex = SynthLexicon::new(size, 16).unwrap();
            let total = lex.noise.len() + lex.topics.iter().map(Vec::len).sum::<usize>();
            assert_eq!(total, size);
        }
        assert!(SynthLexicon::new(19, 4).is_err());
    }

    #[test]
    fn synthetic_topic_fraction() {
        // Monte-Carlo estimate of the topic-token share over 10k utterances.
        let sessions = gen_synthetic_corpus(9, 2500, 200, 4).unwrap();
        let (mut topical, mut total) = (0usize, 0usize);
        let mut utterances = 0;
        for u in sessions.iter().flat_map(|s| &s.utterances) {
            utterances += 1;
            for w in u.text.split_whitespace() {
                total += 1;
                topical += usize::from(SynthLexicon::is_topic_word(w));
            }
        }
        assert_eq!(utterances, 10_000);
        let frac = topical as f64 / total as f64;
        assert!((frac - 0.7).abs() < 0.05, "topic fraction {frac}");
    }
}
