//! JSON scenario schema.
//!
//! ```json
//! {"lambda": 0.1, "d": 10000, "r": 100, "bit_rate": 50000, "packet_bits": 1000, "seed": 1,
//!  "velocity": {"type": "discrete", "classes": [{"v": 20, "p": 0.5}, {"v": 25, "p": 0.5}]}}
//! ```
//!
//! or, for continuous traffic,
//! `"velocity": {"type": "continuous", "family": "uniform", "a": 20, "b": 40, "direction_split": 1.0}`
//! where `direction_split` is the forward share and reverse traffic is uniform
//! on `[-b, -a]`. Unknown keys are rejected at every level.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::traffic::{ContinuousMixture, DiscreteVelocityDist, Scenario, VelocityClass, VelocityDist};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub lambda: f64,
    pub d: f64,
    pub r: f64,
    pub bit_rate: f64,
    pub packet_bits: f64,
    pub seed: u64,
    pub velocity: VelocityConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum VelocityConfig {
    Discrete {
        classes: Vec<ClassConfig>,
    },
    Continuous {
        family: DensityFamily,
        a: f64,
        b: f64,
        direction_split: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassConfig {
    pub v: f64,
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityFamily {
    Uniform,
}

impl ScenarioConfig {
    pub fn build(&self) -> Result<Scenario> {
        let velocity = match &self.velocity {
            VelocityConfig::Discrete { classes } => VelocityDist::Discrete(DiscreteVelocityDist::new(
                classes.iter().map(|c| VelocityClass { v: c.v, p: c.p }).collect(),
            )?),
            VelocityConfig::Continuous {
                family: DensityFamily::Uniform,
                a,
                b,
                direction_split,
            } => VelocityDist::Continuous(ContinuousMixture::uniform_bidirectional(*a, *b, *direction_split)?),
        };
        Scenario::new(
            self.lambda,
            self.d,
            self.r,
            self.bit_rate,
            self.packet_bits,
            velocity,
            self.seed,
        )
    }
}
