use serde::{Deserialize, Serialize};

use crate::envs::EnvParams;
use crate::error::{Error, Result};
use crate::math::rng::Rng;

/// Which physical parameters may be perturbed, and over which ranges.
///
/// Each enabled parameter is included independently with probability
/// `inclusion_prob`; included ones are drawn uniformly from their range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbationSpace {
    pub gravity: Option<(f64, f64)>,
    pub wind: Option<(f64, f64)>,
    pub friction: Option<(f64, f64)>,
    pub body_scale: Option<(f64, f64)>,
    /// Swap to the alternate grid layout.
    pub layout: bool,
    pub inclusion_prob: f64,
    /// Redraw until at least one parameter is included.
    pub at_least_one: bool,
}

impl Default for PerturbationSpace {
    fn default() -> Self {
        PerturbationSpace {
            gravity: Some((0.5, 4.0)),
            wind: Some((0.0, 1.0)),
            friction: Some((0.1, 50.0)),
            body_scale: Some((1.5, 2.5)),
            layout: true,
            inclusion_prob: 0.5,
            at_least_one: false,
        }
    }
}

impl PerturbationSpace {
    /// Only gravity and friction.
    pub fn gravity_friction() -> Self {
        PerturbationSpace {
            wind: None,
            body_scale: None,
            layout: false,
            ..PerturbationSpace::default()
        }
    }

    /// Nothing is ever perturbed.
    pub fn null() -> Self {
        PerturbationSpace {
            gravity: None,
            wind: None,
            friction: None,
            body_scale: None,
            layout: false,
            inclusion_prob: 0.5,
            at_least_one: false,
        }
    }

    fn enabled(&self) -> usize {
        [self.gravity, self.wind, self.friction, self.body_scale]
            .iter()
            .filter(|r| r.is_some())
            .count()
            + usize::from(self.layout)
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("gravity", self.gravity, 0.0),
            ("wind", self.wind, -f64::MIN_POSITIVE),
            ("friction", self.friction, 0.0),
            ("body_scale", self.body_scale, 0.0),
        ];
        for (name, range, floor) in ranges {
            if let Some((lo, hi)) = range {
                if !(lo > floor && lo <= hi && hi.is_finite()) {
                    return Err(Error::config(
                        format!("perturbation.{name}"),
                        format!("invalid range [{lo}, {hi}]"),
                    ));
                }
            }
        }
        if !(0.0..=1.0).contains(&self.inclusion_prob) {
            return Err(Error::config("perturbation.inclusion_prob", "must be in [0, 1]"));
        }
        if self.at_least_one && (self.enabled() == 0 || self.inclusion_prob == 0.0) {
            return Err(Error::config(
                "perturbation.at_least_one",
                "no parameter can ever be included",
            ));
        }
        Ok(())
    }
}

/// Samples a perturbed copy of `base`. Coins are flipped in the fixed order
/// gravity, wind, friction, body_scale, layout.
pub fn perturb(base: &EnvParams, space: &PerturbationSpace, rng: &mut Rng) -> EnvParams {
    loop {
        let mut p = base.clone();
        let mut included = 0;
        let mut draw = |range: Option<(f64, f64)>, rng: &mut Rng| -> Option<f64> {
            let (lo, hi) = range?;
            if rng.bernoulli(space.inclusion_prob) {
                included += 1;
                Some(rng.uniform_range(lo, hi))
            } else {
                None
            }
        };
        if let Some(v) = draw(space.gravity, rng) {
            p.gravity = v;
        }
        if let Some(v) = draw(space.wind, rng) {
            p.wind = v;
        }
        if let Some(v) = draw(space.friction, rng) {
            p.friction = v;
        }
        if let Some(v) = draw(space.body_scale, rng) {
            p.body_scale = v;
        }
        if space.layout && rng.bernoulli(space.inclusion_prob) {
            included += 1;
            p.layout = 1;
        }
        if included > 0 || !space.at_least_one {
            return p;
        }
    }
}
