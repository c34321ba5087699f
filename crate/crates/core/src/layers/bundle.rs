use crate::error::{Error, Result};
use crate::layers::net::StochasticMlp;
use crate::math::dist::{softmax, Categorical, DiagGaussian};
use crate::math::rng::Rng;
use crate::math::tensor::Tensor;
use crate::space::ActionSpace;

/// Outputs of all `k` sub-models for a batch of states.
#[derive(Clone, Debug, PartialEq)]
pub struct SubmodelBundle {
    pub method: &'static str,
    pub action_space: ActionSpace,
    /// `k` tensors of shape `[batch, N]`: logits or Gaussian means.
    pub policy: Vec<Tensor>,
    /// `k` vectors of length `batch`.
    pub values: Vec<Vec<f64>>,
    /// Shared log standard deviation for continuous spaces.
    pub log_std: Option<Vec<f64>>,
}

/// Outputs of all `k` sub-models for one state.
#[derive(Clone, Debug, PartialEq)]
pub struct StateBundle {
    pub action_space: ActionSpace,
    /// `k` vectors of length `N`.
    pub policy: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub log_std: Option<Vec<f64>>,
}

impl SubmodelBundle {
    pub fn k(&self) -> usize {
        self.policy.len()
    }

    pub fn batch_size(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn state(&self, i: usize) -> StateBundle {
        StateBundle {
            action_space: self.action_space,
            policy: self.policy.iter().map(|t| t.row_slice(i).to_vec()).collect(),
            values: self.values.iter().map(|v| v[i]).collect(),
            log_std: self.log_std.clone(),
        }
    }

    pub fn states(&self) -> impl Iterator<Item = StateBundle> + '_ {
        (0..self.batch_size()).map(|i| self.state(i))
    }
}

impl StateBundle {
    pub fn k(&self) -> usize {
        self.policy.len()
    }

    pub fn categorical(&self, j: usize) -> Categorical {
        Categorical::new(self.policy[j].clone())
    }

    pub fn probs(&self, j: usize) -> Vec<f64> {
        softmax(&self.policy[j])
    }

    pub fn gaussian(&self, j: usize) -> Result<DiagGaussian> {
        let log_std = self
            .log_std
            .clone()
            .ok_or_else(|| Error::contract("Gaussian requested for a discrete policy"))?;
        DiagGaussian::new(self.policy[j].clone(), log_std)
    }
}

/// Evaluates every sub-model of the policy and value networks on `states`.
///
/// MC Dropout and Dropconnect draw `k` fresh masks from `rng`; Masksembles
/// use their fixed masks; Ensembles evaluate each member.
pub fn forward_all_submodels(
    policy: &StochasticMlp,
    value: &StochasticMlp,
    log_std: Option<&[f64]>,
    action_space: ActionSpace,
    states: &Tensor,
    rng: &mut Rng,
) -> Result<SubmodelBundle> {
    let k = policy.k();
    if k != value.k() {
        return Err(Error::contract("policy and value networks disagree on k"));
    }
    let mut policy_out = Vec::with_capacity(k);
    let mut values = Vec::with_capacity(k);
    for j in 0..k {
        policy_out.push(policy.forward_submodel(states, j, rng)?);
        values.push(value.forward_submodel(states, j, rng)?.into_data());
    }
    Ok(SubmodelBundle {
        method: policy.method.name(),
        action_space,
        policy: policy_out,
        values,
        log_std: log_std.map(<[f64]>::to_vec),
    })
}
