//! One network type for every sub-model mechanism.
//!
//! Modulated positions are the activations leaving hidden layers 1 and 2.
//! Masksembles and MC Dropout multiply those activations; MC Dropconnect
//! instead drops weights of the layer that consumes them; Ensembles keep `k`
//! independent parameter sets and no modulation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::masks::{generate_masks, MaskSet};
use crate::math::mlp::{Mlp, MlpVars, Modulation};
use crate::math::rng::Rng;
use crate::math::tape::{Tape, Var};
use crate::math::tensor::Tensor;

/// Hidden-layer indices whose outputs are modulated.
pub const MODULATED_LAYERS: [usize; 2] = [0, 1];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Method {
    None,
    Masksembles { k: usize, scale: f64 },
    Dropout { k: usize, p: f64 },
    Dropconnect { k: usize, p: f64 },
    Ensembles { k: usize },
}

impl Method {
    /// Number of sub-models; 1 for the plain network.
    pub fn k(&self) -> usize {
        match *self {
            Method::None => 1,
            Method::Masksembles { k, .. }
            | Method::Dropout { k, .. }
            | Method::Dropconnect { k, .. }
            | Method::Ensembles { k } => k,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Masksembles { .. } => "masksembles",
            Method::Dropout { .. } => "dropout",
            Method::Dropconnect { .. } => "dropconnect",
            Method::Ensembles { .. } => "ensembles",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if !matches!(self, Method::None) && k < 2 {
            return Err(Error::config(
                "agent.k",
                format!("{} needs k >= 2, got {k}", self.name()),
            ));
        }
        match *self {
            Method::Dropout { p, .. } | Method::Dropconnect { p, .. } if !(0.0..1.0).contains(&p) => {
                Err(Error::config("agent.p", format!("drop probability must be in [0, 1), got {p}")))
            }
            Method::Masksembles { k, scale } if !(scale >= 1.0 && scale <= k as f64) => Err(
                Error::config("agent.scale", format!("scale must be in [1, {k}], got {scale}")),
            ),
            _ => Ok(()),
        }
    }
}

/// Sub-model index that acts in environment `env_index` during training.
///
/// Environments are split into `k` contiguous equal blocks.
pub fn submodel_for_env(k: usize, env_index: usize, num_envs: usize) -> Result<usize> {
    if k == 0 || !num_envs.is_multiple_of(k) {
        return Err(Error::config(
            "ppo.num_envs",
            format!("{num_envs} environments cannot be split evenly across {k} sub-models"),
        ));
    }
    if env_index >= num_envs {
        return Err(Error::contract(format!(
            "environment {env_index} out of range for {num_envs}"
        )));
    }
    Ok(env_index / (num_envs / k))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StochasticMlp {
    pub method: Method,
    /// `k` members for ensembles, otherwise one shared network.
    pub members: Vec<Mlp>,
    /// Masksembles masks, one per modulated layer.
    pub masks: Vec<MaskSet>,
}

impl StochasticMlp {
    /// Ensemble member `i` is initialized from `seed + i`; masks for modulated
    /// layer `l` use `mask_seed + l`.
    pub fn new(
        method: Method,
        sizes: &[usize],
        output_gain: f64,
        seed: u64,
        init_stream: u64,
        mask_seed: u64,
    ) -> Result<Self> {
        method.validate()?;
        if sizes.len() < 2 {
            return Err(Error::config("agent.hidden", "network needs an input and output size"));
        }
        let n_members = if matches!(method, Method::Ensembles { .. }) {
            method.k()
        } else {
            1
        };
        let members = (0..n_members)
            .map(|i| {
                let mut rng = Rng::new(seed.wrapping_add(i as u64), init_stream);
                Mlp::new(sizes, output_gain, &mut rng)
            })
            .collect();
        let hidden = &sizes[1..sizes.len() - 1];
        let masks = match method {
            Method::Masksembles { k, scale } => MODULATED_LAYERS
                .iter()
                .filter(|&&l| l < hidden.len())
                .map(|&l| generate_masks(k, hidden[l], scale, mask_seed.wrapping_add(l as u64)))
                .collect::<Result<Vec<_>>>()?,
            _ => Vec::new(),
        };
        Ok(StochasticMlp {
            method,
            members,
            masks,
        })
    }

    pub fn k(&self) -> usize {
        self.method.k()
    }

    pub fn member(&self, submodel: usize) -> &Mlp {
        if self.members.len() == 1 {
            &self.members[0]
        } else {
            &self.members[submodel]
        }
    }

    pub fn input_dim(&self) -> usize {
        self.members[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.members[0].output_dim()
    }

    /// Whether repeated forwards of one sub-model draw fresh randomness.
    pub fn is_sampling(&self) -> bool {
        matches!(self.method, Method::Dropout { .. } | Method::Dropconnect { .. })
    }

    /// Multipliers for sub-model `submodel` on a group of `rows` inputs.
    /// Dropout and Dropconnect draw fresh masks from `rng`.
    pub fn modulation(&self, submodel: usize, rows: usize, rng: &mut Rng) -> Modulation {
        let net = self.member(submodel);
        let n_hidden = net.hidden_widths().len();
        let positions = MODULATED_LAYERS.iter().filter(|&&l| l < n_hidden);
        match self.method {
            Method::None | Method::Ensembles { .. } => Modulation::none(),
            Method::Masksembles { .. } => {
                let mut units = vec![None; n_hidden];
                for (mask_set, &l) in self.masks.iter().zip(positions) {
                    units[l] = Some(mask_set.multiplier(submodel));
                }
                Modulation {
                    units,
                    weights: Vec::new(),
                }
            }
            Method::Dropout { p, .. } => {
                let widths = net.hidden_widths();
                let mut units = vec![None; n_hidden];
                for &l in positions {
                    units[l] = Some(bernoulli_mask(&[rows, widths[l]], p, rng));
                }
                Modulation {
                    units,
                    weights: Vec::new(),
                }
            }
            Method::Dropconnect { p, .. } => {
                let mut weights = vec![None; net.layers.len()];
                for &l in positions {
                    let shape = net.layers[l + 1].weight.shape().to_vec();
                    weights[l + 1] = Some(bernoulli_mask(&shape, p, rng));
                }
                Modulation {
                    units: Vec::new(),
                    weights,
                }
            }
        }
    }

    pub fn forward_submodel(&self, x: &Tensor, submodel: usize, rng: &mut Rng) -> Result<Tensor> {
        let modulation = self.modulation(submodel, x.rows(), rng);
        self.member(submodel).forward(x, &modulation)
    }

    /// Evaluates row `i` of `x` under sub-model `submodels[i]`.
    ///
    /// Rows are grouped by sub-model in ascending order so randomness is
    /// consumed deterministically.
    pub fn forward_rows(&self, x: &Tensor, submodels: &[usize], rng: &mut Rng) -> Result<Tensor> {
        if submodels.len() != x.rows() {
            return Err(Error::dimension(format!(
                "{} sub-model ids for {} rows",
                submodels.len(),
                x.rows()
            )));
        }
        let out_dim = self.output_dim();
        let mut out = Tensor::zeros(&[x.rows(), out_dim]);
        for (j, rows) in group_rows(submodels, self.k())? {
            let y = self.forward_submodel(&x.select_rows(&rows), j, rng)?;
            for (r, &i) in rows.iter().enumerate() {
                out.data_mut()[i * out_dim..(i + 1) * out_dim].copy_from_slice(y.row_slice(r));
            }
        }
        Ok(out)
    }

    /// One output per sub-model, each over the full batch.
    pub fn forward_all(&self, x: &Tensor, rng: &mut Rng) -> Result<Vec<Tensor>> {
        (0..self.k())
            .map(|j| self.forward_submodel(x, j, rng))
            .collect()
    }

    pub fn register(&self, tape: &mut Tape) -> Vec<MlpVars> {
        self.members.iter().map(|m| m.register(tape)).collect()
    }

    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        vars: &[MlpVars],
        x: Var,
        submodel: usize,
        modulation: &Modulation,
    ) -> Result<Var> {
        let idx = if vars.len() == 1 { 0 } else { submodel };
        self.member(submodel)
            .forward_tape(tape, &vars[idx], x, modulation)
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.members.iter().flat_map(|m| m.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.members.iter_mut().flat_map(|m| m.params_mut()).collect()
    }
}

/// Row indices grouped by sub-model id, ascending.
pub fn group_rows(submodels: &[usize], k: usize) -> Result<Vec<(usize, Vec<usize>)>> {
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &j) in submodels.iter().enumerate() {
        if j >= k {
            return Err(Error::contract(format!("sub-model {j} out of range for k = {k}")));
        }
        groups[j].push(i);
    }
    Ok(groups
        .into_iter()
        .enumerate()
        .filter(|(_, g)| !g.is_empty())
        .collect())
}

/// Inverted-dropout mask: kept entries are `1/(1-p)`, dropped entries 0.
pub fn bernoulli_mask(shape: &[usize], p: f64, rng: &mut Rng) -> Tensor {
    let n: usize = shape.iter().product();
    if p == 0.0 {
        return Tensor::full(shape, 1.0);
    }
    let keep = 1.0 / (1.0 - p);
    let data = (0..n)
        .map(|_| if rng.uniform() < p { 0.0 } else { keep })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("sized")
}
