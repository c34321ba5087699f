//! Binary checkpoints.
//!
//! Layout: the 8-byte magic `OODPPOCK`, a little-endian `u64` header length,
//! a JSON header, then every tensor as raw little-endian `f64`. The header
//! records each tensor's name, shape and offset, so files are
//! self-describing. All floating-point state that must survive bit-exactly
//! lives in the payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::{Agent, AgentConfig};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::layers::masks::MaskSet;
use crate::math::optim::Adam;
use crate::math::rng::Rng;
use crate::math::tensor::Tensor;
use crate::ppo::loss::agent_params_mut;
use crate::ppo::{RunningStats, TrainState};

pub const MAGIC: &[u8; 8] = b"OODPPOCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the payload, in `f64` elements.
    offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct AdamHeader {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RngHeader {
    rollout: Rng,
    loss: Rng,
    minibatch: Rng,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    config: RunConfig,
    agent: AgentConfig,
    tensors: Vec<TensorEntry>,
    adam: AdamHeader,
    policy_masks: Vec<MaskSet>,
    value_masks: Vec<MaskSet>,
    rng: RngHeader,
}

/// A run configuration plus the full training state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub state: TrainState,
}

fn param_names(agent: &Agent) -> Vec<String> {
    let mut names = Vec::new();
    for (net, label) in [(&agent.policy, "policy"), (&agent.value, "value")] {
        for (m, mlp) in net.members.iter().enumerate() {
            for l in 0..mlp.layers.len() {
                names.push(format!("{label}.{m}.{l}.weight"));
                names.push(format!("{label}.{m}.{l}.bias"));
            }
        }
    }
    if agent.log_std.is_some() {
        names.push("log_std".into());
    }
    names
}

impl Checkpoint {
    /// Named tensors in payload order.
    fn tensors(&self) -> Vec<(String, Tensor)> {
        let mut agent = self.state.agent.clone();
        let mut out: Vec<(String, Tensor)> = param_names(&agent)
            .into_iter()
            .zip(agent_params_mut(&mut agent).into_iter().map(|t| t.clone()))
            .collect();
        for (i, t) in self.state.adam.m.iter().enumerate() {
            out.push((format!("adam.m.{i}"), t.clone()));
        }
        for (i, t) in self.state.adam.v.iter().enumerate() {
            out.push((format!("adam.v.{i}"), t.clone()));
        }
        if let Some(stats) = &self.state.agent.obs_norm {
            out.push(("obs_norm.count".into(), Tensor::row(&[stats.count])));
            out.push(("obs_norm.mean".into(), Tensor::row(&stats.mean)));
            out.push(("obs_norm.m2".into(), Tensor::row(&stats.m2)));
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let tensors = self.tensors();
        let mut entries = Vec::with_capacity(tensors.len());
        let mut offset = 0;
        for (name, t) in &tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += t.len();
        }
        let adam = &self.state.adam;
        let header = Header {
            version: FORMAT_VERSION,
            config: self.config.clone(),
            agent: self.state.agent.config.clone(),
            tensors: entries,
            adam: AdamHeader {
                beta1: adam.beta1,
                beta2: adam.beta2,
                eps: adam.eps,
                step: adam.step,
            },
            policy_masks: self.state.agent.policy.masks.clone(),
            value_masks: self.state.agent.value.masks.clone(),
            rng: RngHeader {
                rollout: self.state.rollout_rng.clone(),
                loss: self.state.loss_rng.clone(),
                minibatch: self.state.minibatch_rng.clone(),
            },
        };
        let json = serde_json::to_vec(&header)?;
        let mut bytes = Vec::with_capacity(16 + json.len() + offset * 8);
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&json);
        for (_, t) in &tensors {
            for x in t.data() {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let json = bytes
            .get(16..16usize.saturating_add(header_len))
            .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
        let version: VersionProbe =
            serde_json::from_slice(json).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        if version.version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {} is not supported (expected {FORMAT_VERSION})",
                version.version
            )));
        }
        let header: Header =
            serde_json::from_slice(json).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        let payload = &bytes[16 + header_len..];
        if !payload.len().is_multiple_of(8) {
            return Err(Error::Checkpoint("payload is not a whole number of f64 values".into()));
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let read = |e: &TensorEntry| -> Result<Tensor> {
            let n: usize = e.shape.iter().product();
            let data = values
                .get(e.offset..e.offset + n)
                .ok_or_else(|| Error::Checkpoint(format!("tensor {} runs past the payload", e.name)))?;
            Tensor::new(e.shape.clone(), data.to_vec())
        };
        let find = |name: &str| header.tensors.iter().find(|e| e.name == name);

        let mut agent = Agent::new(header.agent.clone())?;
        let names = param_names(&agent);
        for (name, slot) in names.iter().zip(agent_params_mut(&mut agent)) {
            let entry = find(name).ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if entry.shape != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    entry.shape,
                    slot.shape()
                )));
            }
            *slot = read(entry)?;
        }
        agent.policy.masks = header.policy_masks;
        agent.value.masks = header.value_masks;
        if let Some(count) = find("obs_norm.count") {
            let get = |name: &str| -> Result<Vec<f64>> {
                let e = find(name).ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
                Ok(read(e)?.into_data())
            };
            agent.obs_norm = Some(RunningStats {
                count: read(count)?.item(),
                mean: get("obs_norm.mean")?,
                m2: get("obs_norm.m2")?,
            });
        }
        let n_params = names.len();
        let moments = |prefix: &str| -> Result<Vec<Tensor>> {
            (0..n_params)
                .map(|i| {
                    let name = format!("{prefix}.{i}");
                    read(find(&name).ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?)
                })
                .collect()
        };
        let adam = Adam {
            beta1: header.adam.beta1,
            beta2: header.adam.beta2,
            eps: header.adam.eps,
            step: header.adam.step,
            m: moments("adam.m")?,
            v: moments("adam.v")?,
        };
        Ok(Checkpoint {
            config: header.config,
            state: TrainState {
                agent,
                adam,
                rollout_rng: header.rng.rollout,
                loss_rng: header.rng.loss,
                minibatch_rng: header.rng.minibatch,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[derive(Deserialize)]
struct VersionProbe {
    version: u32,
}
