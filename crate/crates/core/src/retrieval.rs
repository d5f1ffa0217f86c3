//! Dense scoring, candidate ranking, exact top-k search and R_n@k evaluation.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{assemble_encoder_input, LabeledExample};
use crate::error::{Error, Result};
use crate::tensor::dot;
use crate::training::{BiEncoder, Side};
use crate::corpus::Vocabulary;

pub const DEFAULT_KS: [usize; 3] = [1, 2, 5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseVector {
    pub values: Vec<f64>,
    pub source_id: String,
}

impl DenseVector {
    pub fn new(source_id: impl Into<String>, values: Vec<f64>) -> Self {
        Self { values, source_id: source_id.into() }
    }
}

/// Dot-product similarity.
pub fn score(c: &DenseVector, r: &DenseVector) -> Result<f64> {
    if c.values.len() != r.values.len() {
        return Err(Error::Shape(format!("vector dims {} and {}", c.values.len(), r.values.len())));
    }
    Ok(dot(&c.values, &r.values))
}

/// Indices ordered by descending score; equal scores keep ascending index order.
pub fn rank_by_scores(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

pub fn rank_candidates(c: &DenseVector, candidates: &[DenseVector]) -> Result<Vec<usize>> {
    if candidates.is_empty() {
        return Err(Error::Invalid("no candidates to rank".into()));
    }
    let scores = candidates.iter().map(|r| score(c, r)).collect::<Result<Vec<_>>>()?;
    Ok(rank_by_scores(&scores))
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub context_vec: DenseVector,
    pub candidates: Vec<(DenseVector, u8)>,
    pub scores: Vec<f64>,
    /// 1-based rank of the positive candidate.
    pub rank_of_positive: usize,
}

impl QueryRecord {
    /// Scores every candidate against the context and records where the positive lands.
    pub fn new(context_vec: DenseVector, candidates: Vec<(DenseVector, u8)>) -> Result<Self> {
        let scores = candidates
            .iter()
            .map(|(r, _)| score(&context_vec, r))
            .collect::<Result<Vec<_>>>()?;
        let labels: Vec<u8> = candidates.iter().map(|(_, l)| *l).collect();
        let rank_of_positive = positive_rank(&scores, &labels)?;
        Ok(Self { context_vec, candidates, scores, rank_of_positive })
    }

    pub fn from_scores(scores: Vec<f64>, labels: &[u8]) -> Result<Self> {
        let rank_of_positive = positive_rank(&scores, labels)?;
        let candidates = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| (DenseVector::new(i.to_string(), Vec::new()), l))
            .collect();
        Ok(Self { context_vec: DenseVector::new("query", Vec::new()), candidates, scores, rank_of_positive })
    }

    fn positive_count(&self) -> usize {
        self.candidates.iter().filter(|(_, l)| *l == 1).count()
    }
}

fn positive_rank(scores: &[f64], labels: &[u8]) -> Result<usize> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    let positives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    if positives.len() != 1 {
        return Err(Error::Invalid(format!("expected exactly one positive, found {}", positives.len())));
    }
    let order = rank_by_scores(scores);
    Ok(order.iter().position(|&i| i == positives[0]).unwrap() + 1)
}

/// Fraction of queries whose positive is ranked within the top `k`.
pub fn recall_at_k(records: &[QueryRecord], k: usize) -> Result<f64> {
    if k < 1 {
        return Err(Error::Invalid("k must be at least 1".into()));
    }
    if records.is_empty() {
        return Err(Error::Empty("no query records".into()));
    }
    for (i, r) in records.iter().enumerate() {
        let n = r.positive_count();
        if n != 1 {
            return Err(Error::Block { block: i, msg: format!("expected exactly one positive, found {n}") });
        }
    }
    let hits = records.iter().filter(|r| r.rank_of_positive <= k).count();
    Ok(hits as f64 / records.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub r_at: BTreeMap<usize, f64>,
    pub n_queries: usize,
    pub n_candidates_per_query: usize,
}

impl EvalReport {
    pub fn from_records(records: &[QueryRecord], ks: &[usize]) -> Result<Self> {
        let n = records.first().map(|r| r.candidates.len()).unwrap_or(0);
        let mut r_at = BTreeMap::new();
        for &k in ks.iter().filter(|&&k| k <= n) {
            r_at.insert(k, recall_at_k(records, k)?);
        }
        Ok(Self { r_at, n_queries: records.len(), n_candidates_per_query: n })
    }

    pub fn get(&self, k: usize) -> Option<f64> {
        self.r_at.get(&k).copied()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut m = serde_json::Map::new();
        for (k, v) in &self.r_at {
            m.insert(format!("R@{k}"), serde_json::json!(v));
        }
        m.insert("n_queries".into(), serde_json::json!(self.n_queries));
        m.insert("n_candidates".into(), serde_json::json!(self.n_candidates_per_query));
        serde_json::Value::Object(m)
    }

    pub fn csv_header(&self) -> String {
        let mut cols: Vec<String> = self.r_at.keys().map(|k| format!("R@{k}")).collect();
        cols.push("n_queries".into());
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols: Vec<String> = self.r_at.values().map(|v| v.to_string()).collect();
        cols.push(self.n_queries.to_string());
        cols.join(",")
    }
}

/// Splits positional candidate blocks and checks each has one positive and a shared context.
pub fn candidate_blocks(examples: &[LabeledExample], block_size: usize) -> Result<Vec<&[LabeledExample]>> {
    if block_size < 1 {
        return Err(Error::Config("block size must be at least 1".into()));
    }
    if examples.is_empty() {
        return Err(Error::Empty("evaluation set is empty".into()));
    }
    if !examples.len().is_multiple_of(block_size) {
        return Err(Error::Block {
            block: examples.len() / block_size,
            msg: format!("{} lines is not a multiple of block size {block_size}", examples.len()),
        });
    }
    let blocks: Vec<_> = examples.chunks(block_size).collect();
    for (i, b) in blocks.iter().enumerate() {
        let pos = b.iter().filter(|e| e.label == 1).count();
        if pos != 1 {
            return Err(Error::Block { block: i, msg: format!("expected exactly one positive, found {pos}") });
        }
        if b.iter().any(|e| e.context != b[0].context) {
            return Err(Error::Block { block: i, msg: "candidates do not share one context".into() });
        }
    }
    Ok(blocks)
}

/// Embeds every block's context once and each candidate response, then ranks.
pub fn score_eval_set(
    bi: &BiEncoder,
    vocab: &Vocabulary,
    examples: &[LabeledExample],
    block_size: usize,
) -> Result<Vec<QueryRecord>> {
    let max_len = bi.config.max_enc_len;
    candidate_blocks(examples, block_size)?
        .into_iter()
        .enumerate()
        .map(|(bi_idx, block)| {
            let c = assemble_encoder_input(&block[0].context, vocab, max_len)?;
            let cv = DenseVector::new(format!("q{bi_idx}"), bi.embed(Side::Context, &c)?);
            let cands = block
                .iter()
                .enumerate()
                .map(|(j, ex)| {
                    let r = crate::training::response_input(&ex.response, vocab, max_len)?;
                    Ok((DenseVector::new(format!("q{bi_idx}c{j}"), bi.embed(Side::Response, &r)?), ex.label))
                })
                .collect::<Result<Vec<_>>>()?;
            QueryRecord::new(cv, cands)
        })
        .collect()
}

pub fn evaluate(bi: &BiEncoder, vocab: &Vocabulary, examples: &[LabeledExample], block_size: usize) -> Result<EvalReport> {
    let records = score_eval_set(bi, vocab, examples, block_size)?;
    EvalReport::from_records(&records, &DEFAULT_KS)
}

/// Exact brute-force inner-product index.
#[derive(Debug, Clone)]
pub struct DenseIndex {
    items: Vec<DenseVector>,
    dim: usize,
}

pub fn build_index(vectors: Vec<DenseVector>) -> Result<DenseIndex> {
    let dim = vectors
        .first()
        .map(|v| v.values.len())
        .ok_or_else(|| Error::Empty("cannot index an empty pool".into()))?;
    if let Some(bad) = vectors.iter().find(|v| v.values.len() != dim) {
        return Err(Error::Shape(format!("{} has dim {}, expected {dim}", bad.source_id, bad.values.len())));
    }
    Ok(DenseIndex { items: vectors, dim })
}

impl DenseIndex {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Top `k` by (score desc, source_id asc).
    pub fn query_topk(&self, query: &DenseVector, k: usize) -> Result<Vec<(String, f64)>> {
        if k > self.items.len() {
            return Err(Error::Invalid(format!("k = {k} exceeds pool size {}", self.items.len())));
        }
        if query.values.len() != self.dim {
            return Err(Error::Shape(format!("query dim {} vs index dim {}", query.values.len(), self.dim)));
        }
        let mut scored: Vec<(&str, f64)> = self
            .items
            .iter()
            .map(|v| (v.source_id.as_str(), dot(&query.values, &v.values)))
            .collect();
        scored.sort_by(|a, b| match b.1.total_cmp(&a.1) {
            Ordering::Equal => a.0.cmp(b.0),
            o => o,
        });
        Ok(scored.into_iter().take(k).map(|(id, s)| (id.to_string(), s)).collect())
    }
}
