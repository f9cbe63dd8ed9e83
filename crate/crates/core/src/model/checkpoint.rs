//! Checkpoint persistence: a directory holding `manifest.json` (tensor
//! names, shapes, dtypes, provenance), `tensors.bin` (concatenated
//! little-endian f32 data in manifest order), and `tokenizer.json` (the
//! vocabulary the model was trained with). Loads verify a content hash, and
//! weight averaging operates directly on checkpoints.

use std::path::Path;

use indexmap::IndexMap;
use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{EncoderConfig, Param};
use crate::tokenizer::Vocab;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TENSORS_FILE: &str = "tensors.bin";
pub const TOKENIZER_FILE: &str = "tokenizer.json";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
}

/// Where a checkpoint came from: the pipeline stage that wrote it, a hash of
/// the configuration that produced it, and the content hashes of its parent
/// checkpoints (empty for pre-training, two for an averaged model).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Provenance {
    pub stage: String,
    pub config_hash: String,
    pub parents: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub encoder: EncoderConfig,
    /// Number of output classes when a classifier head is present.
    pub classes: Option<usize>,
    pub tensors: Vec<TensorInfo>,
    /// SHA-256 of `tensors.bin`, hex encoded.
    pub tensors_hash: String,
    pub provenance: Provenance,
}

/// An in-memory checkpoint: manifest plus named tensors in manifest order.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub vocab: Vocab,
    pub tensors: IndexMap<String, ArrayD<f32>>,
}

fn tensor_bytes(tensors: &IndexMap<String, ArrayD<f32>>) -> Vec<u8> {
    let total: usize = tensors.values().map(|t| t.len() * 4).sum();
    let mut bytes = Vec::with_capacity(total);
    for tensor in tensors.values() {
        for v in tensor.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes
}

fn hex_sha256(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    /// Build a checkpoint from live parameters, in their given order.
    pub fn from_params(
        encoder: EncoderConfig,
        classes: Option<usize>,
        vocab: Vocab,
        params: &[&Param],
        stage: &str,
        config_hash: &str,
        parents: Vec<String>,
    ) -> Result<Self> {
        let mut tensors = IndexMap::new();
        let mut infos = Vec::new();
        for p in params {
            if tensors.insert(p.name.clone(), p.value.clone()).is_some() {
                return Err(Error::Checkpoint(format!(
                    "duplicate tensor name {}",
                    p.name
                )));
            }
            infos.push(TensorInfo {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                dtype: "f32".to_string(),
            });
        }
        let tensors_hash = hex_sha256(&tensor_bytes(&tensors));
        Ok(Checkpoint {
            manifest: Manifest {
                format: 1,
                encoder,
                classes,
                tensors: infos,
                tensors_hash,
                provenance: Provenance {
                    stage: stage.to_string(),
                    config_hash: config_hash.to_string(),
                    parents,
                },
            },
            vocab,
            tensors,
        })
    }

    /// Content hash of the tensor bytes alone. Two checkpoints with equal
    /// weights share this hash even when their provenance differs.
    pub fn hash(&self) -> &str {
        &self.manifest.tensors_hash
    }

    /// Identity covering both content and ancestry, like a commit hash: it
    /// digests the tensor hash, stage, config hash, and parent identities.
    /// Because every parent reference is such an identity, a provenance
    /// chain cannot cycle — a record would have to contain its own digest.
    pub fn identity(&self) -> String {
        let p = &self.manifest.provenance;
        let mut hasher = Sha256::new();
        hasher.update(self.manifest.tensors_hash.as_bytes());
        hasher.update([0u8]);
        hasher.update(p.stage.as_bytes());
        hasher.update([0u8]);
        hasher.update(p.config_hash.as_bytes());
        for parent in &p.parents {
            hasher.update([0u8]);
            hasher.update(parent.as_bytes());
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f32>> {
        self.tensors.get(name)
    }

    /// Copy tensors into live parameters by name, checking shapes.
    pub fn load_into(&self, params: &mut [&mut Param]) -> Result<()> {
        for p in params.iter_mut() {
            let tensor = self.tensors.get(&p.name).ok_or_else(|| {
                Error::Checkpoint(format!("tensor {} missing from checkpoint", p.name))
            })?;
            if tensor.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has shape {:?} in checkpoint but {:?} in model",
                    p.name,
                    tensor.shape(),
                    p.value.shape()
                )));
            }
            p.value.assign(tensor);
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let bytes = tensor_bytes(&self.tensors);
        debug_assert_eq!(hex_sha256(&bytes), self.manifest.tensors_hash);
        let tensors_path = dir.join(TENSORS_FILE);
        std::fs::write(&tensors_path, &bytes).map_err(|e| Error::io(&tensors_path, e))?;
        let manifest_path = dir.join(MANIFEST_FILE);
        let manifest_json =
            serde_json::to_string_pretty(&self.manifest).map_err(|e| Error::Json {
                path: manifest_path.display().to_string(),
                source: e,
            })?;
        std::fs::write(&manifest_path, manifest_json)
            .map_err(|e| Error::io(&manifest_path, e))?;
        let tok_path = dir.join(TOKENIZER_FILE);
        let tok_json = serde_json::to_string(&self.vocab).map_err(|e| Error::Json {
            path: tok_path.display().to_string(),
            source: e,
        })?;
        std::fs::write(&tok_path, tok_json).map_err(|e| Error::io(&tok_path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let manifest_raw = std::fs::read_to_string(&manifest_path)
            .map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&manifest_raw).map_err(|e| Error::Json {
            path: manifest_path.display().to_string(),
            source: e,
        })?;
        let tensors_path = dir.join(TENSORS_FILE);
        let bytes = std::fs::read(&tensors_path).map_err(|e| Error::io(&tensors_path, e))?;
        let actual_hash = hex_sha256(&bytes);
        if actual_hash != manifest.tensors_hash {
            return Err(Error::Checkpoint(format!(
                "tensor data hash {actual_hash} does not match manifest {}",
                manifest.tensors_hash
            )));
        }
        let expected_len: usize = manifest
            .tensors
            .iter()
            .map(|t| t.shape.iter().product::<usize>() * 4)
            .sum();
        if bytes.len() != expected_len {
            return Err(Error::Checkpoint(format!(
                "tensor file holds {} bytes but manifest describes {expected_len}",
                bytes.len()
            )));
        }
        let mut tensors = IndexMap::new();
        let mut offset = 0usize;
        for info in &manifest.tensors {
            if info.dtype != "f32" {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has unsupported dtype {}",
                    info.name, info.dtype
                )));
            }
            let count: usize = info.shape.iter().product();
            let mut values = Vec::with_capacity(count);
            for i in 0..count {
                let start = offset + i * 4;
                let raw: [u8; 4] = bytes[start..start + 4].try_into().expect("4 bytes");
                values.push(f32::from_le_bytes(raw));
            }
            offset += count * 4;
            let array = ArrayD::from_shape_vec(IxDyn(&info.shape), values)
                .map_err(|e| Error::Checkpoint(format!("tensor {}: {e}", info.name)))?;
            tensors.insert(info.name.clone(), array);
        }
        let tok_path = dir.join(TOKENIZER_FILE);
        let tok_raw = std::fs::read_to_string(&tok_path).map_err(|e| Error::io(&tok_path, e))?;
        let mut vocab: Vocab = serde_json::from_str(&tok_raw).map_err(|e| Error::Json {
            path: tok_path.display().to_string(),
            source: e,
        })?;
        vocab.rebuild_index();
        Ok(Checkpoint {
            manifest,
            vocab,
            tensors,
        })
    }

    /// Elementwise mean of two checkpoints with identical manifests.
    /// Averaging a checkpoint with itself reproduces it exactly, and the
    /// operation is commutative.
    pub fn average(a: &Checkpoint, b: &Checkpoint) -> Result<Checkpoint> {
        if a.manifest.encoder != b.manifest.encoder {
            return Err(Error::ManifestMismatch(
                "encoder configurations differ".into(),
            ));
        }
        if a.manifest.classes != b.manifest.classes {
            return Err(Error::ManifestMismatch("class counts differ".into()));
        }
        if a.vocab.words() != b.vocab.words() {
            return Err(Error::ManifestMismatch("vocabularies differ".into()));
        }
        if a.manifest.tensors.len() != b.manifest.tensors.len() {
            return Err(Error::ManifestMismatch(format!(
                "{} tensors vs {}",
                a.manifest.tensors.len(),
                b.manifest.tensors.len()
            )));
        }
        for (ta, tb) in a.manifest.tensors.iter().zip(b.manifest.tensors.iter()) {
            if ta != tb {
                return Err(Error::ManifestMismatch(format!(
                    "first differing tensor: {} vs {}",
                    ta.name, tb.name
                )));
            }
        }
        let mut tensors = IndexMap::new();
        for info in &a.manifest.tensors {
            let ta = &a.tensors[&info.name];
            let tb = &b.tensors[&info.name];
            let mean = ta + tb;
            tensors.insert(info.name.clone(), mean.mapv(|v| v / 2.0));
        }
        let tensors_hash = hex_sha256(&tensor_bytes(&tensors));
        let config_hash = hex_sha256(format!("{}+{}", a.identity(), b.identity()).as_bytes());
        Ok(Checkpoint {
            manifest: Manifest {
                format: a.manifest.format,
                encoder: a.manifest.encoder.clone(),
                classes: a.manifest.classes,
                tensors: a.manifest.tensors.clone(),
                tensors_hash,
                provenance: Provenance {
                    stage: "soup".to_string(),
                    config_hash,
                    parents: vec![a.identity(), b.identity()],
                },
            },
            vocab: a.vocab.clone(),
            tensors,
        })
    }
}
