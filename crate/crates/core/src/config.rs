//! Experiment setup: task, encoder and head built from one run seed.

use crate::data::{build_head, gen_task, SyntheticTask, TaskConfig};
use crate::encoder::{Architecture, EncoderParams, DEFAULT_DIM, DEFAULT_HIDDEN};
use crate::error::{Error, Result};
use crate::head::ZeroShotHead;
use crate::structured::StructuredInit;
use serde::{Deserialize, Serialize};

pub const DEFAULT_TEMPERATURE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderInit {
    /// I.i.d. Gaussian weights scaled by `1/sqrt(fan_in)`.
    Gaussian,
    /// Template and ring units derived from the task prototypes (mlp1 only).
    Structured(StructuredInit),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub architecture: Architecture,
    pub dim: usize,
    pub hidden: usize,
    pub init: EncoderInit,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Mlp1,
            dim: DEFAULT_DIM,
            hidden: DEFAULT_HIDDEN,
            init: EncoderInit::Structured(StructuredInit::default()),
        }
    }
}

impl EncoderConfig {
    pub fn build(&self, task: &SyntheticTask, seed: u64) -> Result<EncoderParams> {
        match (&self.init, self.architecture) {
            (EncoderInit::Gaussian, arch) => {
                EncoderParams::random(arch, task.config.shape, self.dim, self.hidden, seed)
            }
            (EncoderInit::Structured(init), Architecture::Mlp1) => {
                init.build(&task.prototypes, self.dim, self.hidden, seed)
            }
            (EncoderInit::Structured(_), Architecture::Linear) => Err(Error::InvalidParameter(
                "structured init requires the mlp1 architecture".into(),
            )),
        }
    }
}

/// Everything needed to rebuild an experiment besides the attack and defense.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskConfig,
    pub encoder: EncoderConfig,
    pub temperature: f64,
    pub seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: TaskConfig::default(),
            encoder: EncoderConfig::default(),
            temperature: DEFAULT_TEMPERATURE,
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone)]
pub struct Setup {
    pub seed: u64,
    pub task: SyntheticTask,
    pub encoder: EncoderParams,
    pub head: ZeroShotHead,
}

impl RunConfig {
    /// Task, encoder and head for `seed`; the task's own seed is replaced.
    pub fn setup(&self, seed: u64) -> Result<Setup> {
        let task = gen_task(&TaskConfig {
            seed,
            ..self.task.clone()
        })?;
        let encoder = self.encoder.build(&task, seed)?;
        let head = build_head(&encoder, &task.prototypes, self.temperature)?;
        Ok(Setup {
            seed,
            task,
            encoder,
            head,
        })
    }
}
