//! Fully connected tanh networks with optional multiplicative modulation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::rng::Rng;
use crate::math::tape::{Tape, Var};
use crate::math::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `[fan_in, fan_out]`
    pub weight: Tensor,
    /// `[1, fan_out]`
    pub bias: Tensor,
}

/// Tanh hidden layers followed by a linear output layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Multipliers applied inside a forward pass.
///
/// `units[i]` scales the activations leaving layer `i` and is either a
/// `[1, width]` row (shared by the batch) or a `[batch, width]` matrix.
/// `weights[i]` scales layer `i`'s weight matrix elementwise.
#[derive(Clone, Debug, Default)]
pub struct Modulation {
    pub units: Vec<Option<Tensor>>,
    pub weights: Vec<Option<Tensor>>,
}

impl Modulation {
    pub fn none() -> Self {
        Modulation::default()
    }

    fn unit(&self, layer: usize) -> Option<&Tensor> {
        self.units.get(layer).and_then(|m| m.as_ref())
    }

    fn weight(&self, layer: usize) -> Option<&Tensor> {
        self.weights.get(layer).and_then(|m| m.as_ref())
    }
}

/// Tape handles for one network's parameters, in `layers` order.
#[derive(Clone, Debug)]
pub struct MlpVars {
    pub layers: Vec<(Var, Var)>,
}

impl Mlp {
    /// Gaussian init with std `1/sqrt(fan_in)`; the output layer is further
    /// scaled by `output_gain`. Biases start at zero.
    pub fn new(sizes: &[usize], output_gain: f64, rng: &mut Rng) -> Self {
        let n = sizes.len().saturating_sub(1);
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let gain = if i + 1 == n { output_gain } else { 1.0 };
                let std = gain / (fan_in as f64).sqrt();
                let data = (0..fan_in * fan_out).map(|_| rng.normal() * std).collect();
                Linear {
                    weight: Tensor::new(vec![fan_in, fan_out], data).expect("sized"),
                    bias: Tensor::zeros(&[1, fan_out]),
                }
            })
            .collect();
        Mlp { layers }
    }

    pub fn from_layers(layers: Vec<Linear>) -> Result<Self> {
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].weight.cols() != pair[1].weight.rows() {
                return Err(Error::dimension(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].weight.cols(),
                    i + 1,
                    pair[1].weight.rows()
                )));
            }
        }
        Ok(Mlp { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weight.rows())
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.cols())
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        let n = self.layers.len();
        self.layers[..n.saturating_sub(1)]
            .iter()
            .map(|l| l.weight.cols())
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Parameters flattened as `[w0, b0, w1, b1, ...]`.
    pub fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::dimension(format!(
                "input width {} does not match network input {}",
                x.cols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Plain evaluation without recording.
    pub fn forward(&self, x: &Tensor, modulation: &Modulation) -> Result<Tensor> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = match modulation.weight(i) {
                Some(mask) => h.matmul(&layer.weight.zip_map(mask, |w, m| w * m)?)?,
                None => h.matmul(&layer.weight)?,
            };
            let c = z.cols();
            let bias = layer.bias.data();
            for (j, v) in z.data_mut().iter_mut().enumerate() {
                *v += bias[j % c];
            }
            if i < last {
                z = z.map(f64::tanh);
                if let Some(mask) = modulation.unit(i) {
                    z = apply_unit_mask(&z, mask)?;
                }
            }
            h = z;
        }
        Ok(h)
    }

    /// Registers every parameter as a tape leaf.
    pub fn register(&self, tape: &mut Tape) -> MlpVars {
        MlpVars {
            layers: self
                .layers
                .iter()
                .map(|l| (tape.param(l.weight.clone()), tape.param(l.bias.clone())))
                .collect(),
        }
    }

    /// Recorded forward pass using previously registered parameters.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        vars: &MlpVars,
        x: Var,
        modulation: &Modulation,
    ) -> Result<Var> {
        self.check_input(tape.value(x))?;
        let last = vars.layers.len() - 1;
        let mut h = x;
        for (i, &(w, b)) in vars.layers.iter().enumerate() {
            let w = match modulation.weight(i) {
                Some(mask) => {
                    let m = tape.constant(mask.clone());
                    tape.mul(w, m)?
                }
                None => w,
            };
            let z = tape.matmul(h, w)?;
            let mut z = tape.add_row(z, b)?;
            if i < last {
                z = tape.tanh(z);
                if let Some(mask) = modulation.unit(i) {
                    let m = tape.constant(mask.clone());
                    z = if mask.rows() == 1 && tape.value(z).rows() != 1 {
                        tape.mul_row(z, m)?
                    } else {
                        tape.mul(z, m)?
                    };
                }
            }
            h = z;
        }
        Ok(h)
    }
}

fn apply_unit_mask(z: &Tensor, mask: &Tensor) -> Result<Tensor> {
    if mask.shape() == z.shape() {
        return z.zip_map(mask, |a, m| a * m);
    }
    if mask.rows() == 1 && mask.cols() == z.cols() {
        let c = z.cols();
        let m = mask.data();
        let data = z
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * m[i % c])
            .collect();
        return Tensor::new(z.shape().to_vec(), data);
    }
    Err(Error::dimension(format!(
        "unit mask {:?} does not fit activations {:?}",
        mask.shape(),
        z.shape()
    )))
}
