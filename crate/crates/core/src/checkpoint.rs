//! On-disk checkpoints: a JSON manifest plus one raw little-endian f64 blob.
//!
//! A checkpoint is a directory holding `manifest.json` and `tensors.bin`.
//! Tensors are stored back to back in manifest order; each manifest entry
//! records the name, shape, dtype, byte offset and byte length.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::model::params::fill_named;
use crate::model::{EncoderParams, ModelConfig, ModelParams};
use crate::retrieval::DenseVector;
use crate::tensor::Mat;
use crate::training::{
    BiEncoder, FineTuned, OptimState, Parameterized, PostTrained, TrainConfig, CONTEXT_PREFIX, RESPONSE_PREFIX,
};

pub const FORMAT: &str = "dialmae-checkpoint/1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "tensors.bin";
const OPTIM_M: &str = "optim.m.";
const OPTIM_V: &str = "optim.v.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    PostTrain,
    FineTune,
    Embeddings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub dtype: String,
    pub offset: u64,
    pub nbytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub phase: Phase,
    pub seed: u64,
    pub step: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_config: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_config: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<Vocabulary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tie_towers: Option<bool>,
    pub tensors: Vec<TensorEntry>,
}

/// Manifest metadata together with the tensors it describes, in order.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub tensors: Vec<(String, Mat)>,
}

impl Checkpoint {
    fn new(mut manifest: Manifest, tensors: Vec<(String, Mat)>) -> Self {
        let mut offset = 0u64;
        manifest.tensors = tensors
            .iter()
            .map(|(name, t)| {
                let nbytes = (t.len() * 8) as u64;
                let e = TensorEntry { name: name.clone(), shape: [t.rows, t.cols], dtype: "f64".into(), offset, nbytes };
                offset += nbytes;
                e
            })
            .collect();
        Self { manifest, tensors }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut blob = Vec::with_capacity(self.tensors.iter().map(|(_, t)| t.len() * 8).sum());
        for (_, t) in &self.tensors {
            for x in &t.data {
                blob.extend_from_slice(&x.to_le_bytes());
            }
        }
        let mut json = serde_json::to_string_pretty(&self.manifest)?;
        json.push('\n');
        let m = dir.join(MANIFEST_FILE);
        fs::write(&m, json).map_err(|e| Error::io(&m, e))?;
        let b = dir.join(BLOB_FILE);
        fs::write(&b, blob).map_err(|e| Error::io(&b, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = read_manifest(dir)?;
        if manifest.format != FORMAT {
            return Err(Error::Checkpoint(format!("unsupported format {:?}", manifest.format)));
        }
        let b = dir.join(BLOB_FILE);
        let blob = fs::read(&b).map_err(|e| Error::io(&b, e))?;
        let mut expected_offset = 0u64;
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in &manifest.tensors {
            let [rows, cols] = e.shape;
            if e.dtype != "f64" {
                return Err(Error::Checkpoint(format!("{}: unsupported dtype {}", e.name, e.dtype)));
            }
            if e.offset != expected_offset || e.nbytes != (rows * cols * 8) as u64 {
                return Err(Error::Checkpoint(format!("{}: inconsistent offset or size", e.name)));
            }
            let end = (e.offset + e.nbytes) as usize;
            let bytes = blob
                .get(e.offset as usize..end)
                .ok_or_else(|| Error::Checkpoint(format!("{}: blob is truncated", e.name)))?;
            let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.push((e.name.clone(), Mat::from_vec(rows, cols, data)));
            expected_offset = end as u64;
        }
        if expected_offset != blob.len() as u64 {
            return Err(Error::Checkpoint(format!("{} has trailing bytes", b.display())));
        }
        Ok(Self { manifest, tensors })
    }

    fn expect_phase(&self, phase: Phase) -> Result<()> {
        if self.manifest.phase != phase {
            return Err(Error::Checkpoint(format!(
                "expected a {phase:?} checkpoint, found {:?}",
                self.manifest.phase
            )));
        }
        Ok(())
    }

    fn model_config(&self) -> Result<ModelConfig> {
        self.manifest.model_config.clone().ok_or_else(|| Error::Checkpoint("manifest lacks model_config".into()))
    }

    fn train_config(&self) -> Result<TrainConfig> {
        self.manifest.train_config.clone().ok_or_else(|| Error::Checkpoint("manifest lacks train_config".into()))
    }

    fn vocab(&self) -> Result<Vocabulary> {
        let v = self.manifest.vocab.clone().ok_or_else(|| Error::Checkpoint("manifest lacks vocab".into()))?;
        Vocabulary::from_tokens(v.tokens().to_vec())
    }

    fn tensor_map(&self) -> BTreeMap<String, Mat> {
        self.tensors.iter().cloned().collect()
    }
}

/// Reads only the manifest of the checkpoint in `dir`.
pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let m = dir.join(MANIFEST_FILE);
    if !m.exists() {
        return Err(Error::Checkpoint(format!("no checkpoint at {}", dir.display())));
    }
    let text = fs::read_to_string(&m).map_err(|e| Error::io(&m, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", m.display())))
}

fn optim_tensors<P: Parameterized>(params: &P, optim: &OptimState) -> Vec<(String, Mat)> {
    let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    let m = names.iter().zip(&optim.m).map(|(n, t)| (format!("{OPTIM_M}{n}"), t.clone()));
    let v = names.iter().zip(&optim.v).map(|(n, t)| (format!("{OPTIM_V}{n}"), t.clone()));
    m.chain(v).collect()
}

fn restore_optim<P: Parameterized>(params: &P, step: u64, tensors: &mut BTreeMap<String, Mat>) -> Result<OptimState> {
    let mut optim = OptimState::new(params);
    optim.step = step;
    let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    let m_slots = names.iter().map(|n| format!("{OPTIM_M}{n}")).zip(optim.m.iter_mut()).collect();
    fill_named(m_slots, tensors)?;
    let v_slots = names.iter().map(|n| format!("{OPTIM_V}{n}")).zip(optim.v.iter_mut()).collect();
    fill_named(v_slots, tensors)?;
    Ok(optim)
}

fn reject_leftovers(tensors: &BTreeMap<String, Mat>) -> Result<()> {
    match tensors.keys().next() {
        Some(extra) => Err(Error::Checkpoint(format!("unexpected tensor {extra}"))),
        None => Ok(()),
    }
}

/// Encoder, decoder, MLM bias and AdamW moments of a post-training run.
pub fn post_trained_checkpoint(post: &PostTrained) -> Checkpoint {
    let mut tensors: Vec<(String, Mat)> = post.params.named().into_iter().map(|(n, t)| (n, t.clone())).collect();
    tensors.extend(optim_tensors(&post.params, &post.optim));
    let manifest = Manifest {
        format: FORMAT.into(),
        phase: Phase::PostTrain,
        seed: post.train_config.seed,
        step: post.optim.step,
        model_config: Some(post.model_config.clone()),
        train_config: Some(post.train_config.clone()),
        vocab: Some(post.vocab.clone()),
        tie_towers: None,
        tensors: Vec::new(),
    };
    Checkpoint::new(manifest, tensors)
}

pub fn save_post_trained(post: &PostTrained, dir: &Path) -> Result<()> {
    post_trained_checkpoint(post).save(dir)
}

/// Restores a post-training run. Per-step logs are not part of a checkpoint.
pub fn load_post_trained(dir: &Path) -> Result<PostTrained> {
    let ck = Checkpoint::load(dir)?;
    ck.expect_phase(Phase::PostTrain)?;
    let model_config = ck.model_config()?;
    model_config.validate()?;
    let mut tensors = ck.tensor_map();
    let mut params = ModelParams::zeros(&model_config);
    fill_named(params.named_mut(), &mut tensors)?;
    let optim = restore_optim(&params, ck.manifest.step, &mut tensors)?;
    reject_leftovers(&tensors)?;
    Ok(PostTrained {
        model_config,
        train_config: ck.train_config()?,
        vocab: ck.vocab()?,
        params,
        optim,
        logs: Vec::new(),
    })
}

/// Context and response towers (one tower when tied) plus AdamW moments.
pub fn fine_tuned_checkpoint(ft: &FineTuned) -> Checkpoint {
    let mut tensors: Vec<(String, Mat)> = ft.bi.named().into_iter().map(|(n, t)| (n, t.clone())).collect();
    tensors.extend(optim_tensors(&ft.bi, &ft.optim));
    let manifest = Manifest {
        format: FORMAT.into(),
        phase: Phase::FineTune,
        seed: ft.train_config.seed,
        step: ft.optim.step,
        model_config: Some(ft.bi.config.clone()),
        train_config: Some(ft.train_config.clone()),
        vocab: Some(ft.vocab.clone()),
        tie_towers: Some(ft.bi.is_tied()),
        tensors: Vec::new(),
    };
    Checkpoint::new(manifest, tensors)
}

pub fn save_fine_tuned(ft: &FineTuned, dir: &Path) -> Result<()> {
    fine_tuned_checkpoint(ft).save(dir)
}

pub fn load_fine_tuned(dir: &Path) -> Result<FineTuned> {
    let ck = Checkpoint::load(dir)?;
    ck.expect_phase(Phase::FineTune)?;
    let config = ck.model_config()?;
    config.validate()?;
    let tied = ck.manifest.tie_towers.ok_or_else(|| Error::Checkpoint("manifest lacks tie_towers".into()))?;
    let mut tensors = ck.tensor_map();
    let mut context = EncoderParams::zeros(&config);
    fill_named(context.named_mut(CONTEXT_PREFIX), &mut tensors)?;
    let response = if tied {
        None
    } else {
        let mut r = EncoderParams::zeros(&config);
        fill_named(r.named_mut(RESPONSE_PREFIX), &mut tensors)?;
        Some(r)
    };
    let bi = BiEncoder { config, context, response };
    let optim = restore_optim(&bi, ck.manifest.step, &mut tensors)?;
    reject_leftovers(&tensors)?;
    Ok(FineTuned {
        bi,
        vocab: ck.vocab()?,
        train_config: ck.train_config()?,
        optim,
        logs: Vec::new(),
        warnings: Vec::new(),
    })
}

/// Embedding dump: one `1 × d` tensor per source id, in the given order.
pub fn embeddings_checkpoint(vectors: &[DenseVector], seed: u64) -> Result<Checkpoint> {
    let mut seen = std::collections::BTreeSet::new();
    let mut tensors = Vec::with_capacity(vectors.len());
    for v in vectors {
        if !seen.insert(v.source_id.as_str()) {
            return Err(Error::Invalid(format!("duplicate source id {}", v.source_id)));
        }
        tensors.push((v.source_id.clone(), Mat::from_vec(1, v.values.len(), v.values.clone())));
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        phase: Phase::Embeddings,
        seed,
        step: 0,
        model_config: None,
        train_config: None,
        vocab: None,
        tie_towers: None,
        tensors: Vec::new(),
    };
    Ok(Checkpoint::new(manifest, tensors))
}

pub fn save_embeddings(vectors: &[DenseVector], seed: u64, dir: &Path) -> Result<()> {
    embeddings_checkpoint(vectors, seed)?.save(dir)
}

pub fn load_embeddings(dir: &Path) -> Result<Vec<DenseVector>> {
    let ck = Checkpoint::load(dir)?;
    ck.expect_phase(Phase::Embeddings)?;
    Ok(ck.tensors.into_iter().map(|(id, t)| DenseVector::new(id, t.data)).collect())
}
