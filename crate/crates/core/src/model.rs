//! The full dehazer: recurrent model-free component followed by the physics stage.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::haze_physics::{Image, PhysicsConstants, ResidualMap, TransmissionMap, DEFAULT_EPS_A, DEFAULT_T_MIN};
use crate::model_free::{DehazerConfig, IterationTrace, ModelFreeDehazer, StepVars, DOWNSAMPLE};
use crate::nn::{Bound, ParamStore};
use crate::physics_dehazer::{PhysicsConfig, PhysicsDehazer, StageOutputs, StageVars};
use crate::tensor::{Scalar, Tensor};

/// Independent seed for sub-component `stream` of a run seeded with `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

pub(crate) const FREE_PREFIX: &str = "free/";
pub(crate) const PHYSICS_PREFIX: &str = "physics/";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Number of recurrent iterations K.
    #[serde(alias = "K")]
    pub iterations: usize,
    pub widths: [usize; 3],
    pub residual_width: usize,
    pub airlight_widths: [usize; 2],
    pub refine_width: usize,
    pub refine_blocks: usize,
    pub t_min: f64,
    #[serde(alias = "eps_A")]
    pub eps_a: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let d = DehazerConfig::default();
        let p = PhysicsConfig::default();
        Self {
            iterations: 3,
            widths: d.widths,
            residual_width: d.residual_width,
            airlight_widths: p.airlight_widths,
            refine_width: p.refine_width,
            refine_blocks: p.refine_blocks,
            t_min: DEFAULT_T_MIN,
            eps_a: DEFAULT_EPS_A,
        }
    }
}

impl ModelConfig {
    pub fn dehazer(&self) -> DehazerConfig {
        DehazerConfig {
            widths: self.widths,
            residual_width: self.residual_width,
        }
    }

    pub fn physics(&self) -> PhysicsConfig {
        PhysicsConfig {
            airlight_widths: self.airlight_widths,
            refine_width: self.refine_width,
            refine_blocks: self.refine_blocks,
        }
    }

    pub fn constants(&self) -> PhysicsConstants {
        PhysicsConstants {
            t_min: self.t_min,
            eps_a: self.eps_a,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::Config("model.iterations (K) must be at least 1".into()));
        }
        self.dehazer().validate()?;
        self.physics().validate()?;
        self.constants().validate()
    }
}

/// Graph handles of one full forward pass.
#[derive(Clone, Debug)]
pub struct PipelineVars {
    pub steps: Vec<StepVars>,
    pub stages: StageVars,
}

impl PipelineVars {
    /// `(Ĵ_k, R̂_k)` handles in iteration order.
    pub fn iterates(&self) -> Vec<(Var, Var)> {
        self.steps.iter().map(|s| (s.dehazed, s.residual)).collect()
    }
}

/// Every intermediate output of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference<T: Scalar = f32> {
    pub trace: IterationTrace<T>,
    pub stages: StageOutputs<T>,
}

#[derive(Clone, Debug)]
pub struct Dehazer<T: Scalar = f32> {
    config: ModelConfig,
    free: ModelFreeDehazer<T>,
    physics: PhysicsDehazer<T>,
}

impl<T: Scalar> Dehazer<T> {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config: config.clone(),
            free: ModelFreeDehazer::new(&config.dehazer(), derive_seed(seed, 1))?,
            physics: PhysicsDehazer::new(&config.physics(), config.constants(), derive_seed(seed, 2))?,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn model_free(&self) -> &ModelFreeDehazer<T> {
        &self.free
    }

    pub fn physics(&self) -> &PhysicsDehazer<T> {
        &self.physics
    }

    pub fn param_groups(&self) -> [&ParamStore<T>; 2] {
        [self.free.params(), self.physics.params()]
    }

    pub fn param_groups_mut(&mut self) -> (&mut ParamStore<T>, &mut ParamStore<T>) {
        (self.free.params_mut(), self.physics.params_mut())
    }

    pub fn num_parameters(&self) -> usize {
        self.free.params().num_scalars() + self.physics.params().num_scalars()
    }

    pub fn cast<U: Scalar>(&self) -> Dehazer<U> {
        Dehazer {
            config: self.config.clone(),
            free: self.free.cast(),
            physics: self.physics.cast(),
        }
    }

    pub fn forward_graph(&self, g: &Graph<T>, free: &Bound, physics: &Bound, image: Var) -> PipelineVars {
        let steps = self.free.run_graph(g, free, image, self.config.iterations);
        let last = steps.last().expect("K >= 1");
        let stages = self
            .physics
            .forward_graph(g, physics, image, last.dehazed, last.residual);
        PipelineVars { steps, stages }
    }

    /// Full pipeline on images whose sides are multiples of 4.
    pub fn infer(&self, image: &Image<T>) -> Result<Inference<T>> {
        let trace = self.free.run(image, self.config.iterations)?;
        let (j, r) = trace.last();
        let stages = self.physics.forward(image, j, r)?;
        Ok(Inference { trace, stages })
    }

    /// Like [`Dehazer::infer`] for any size: the input is edge-padded up to a
    /// multiple of 4 and every output is cropped back.
    pub fn infer_any_size(&self, image: &Image<T>) -> Result<Inference<T>> {
        let s = image.shape();
        let pad = |n: usize| (DOWNSAMPLE - n % DOWNSAMPLE) % DOWNSAMPLE;
        let (pb, pr) = (pad(s.h), pad(s.w));
        if pb == 0 && pr == 0 {
            return self.infer(image);
        }
        let padded = Image::new(image.tensor().pad_replicate(pb, pr))?;
        let out = self.infer(&padded)?;
        let crop = |t: &Tensor<T>| t.crop(0, 0, s.h, s.w);
        let steps = out
            .trace
            .iter()
            .map(|(j, r)| {
                Ok((
                    Image::new(crop(j.tensor())?)?,
                    ResidualMap::new(crop(r.tensor())?)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let st = out.stages;
        Ok(Inference {
            trace: IterationTrace::new(steps)?,
            stages: StageOutputs {
                airlight: st.airlight,
                t_hat: TransmissionMap::new(crop(st.t_hat.tensor())?)?,
                t_refine: TransmissionMap::new(crop(st.t_refine.tensor())?)?,
                j_prelim: Image::new(crop(st.j_prelim.tensor())?)?,
                j_refine: Image::new(crop(st.j_refine.tensor())?)?,
            },
        })
    }
}

impl Dehazer<f32> {
    pub fn write_arrays(&self, ckpt: &mut Checkpoint) {
        for (prefix, store) in [(FREE_PREFIX, self.free.params()), (PHYSICS_PREFIX, self.physics.params())] {
            for (name, t) in store.iter() {
                ckpt.push(format!("{prefix}{name}"), t.clone());
            }
        }
    }

    /// Overwrites every parameter from the arrays of `ckpt`; all names must be present.
    pub fn read_arrays(&mut self, ckpt: &Checkpoint) -> Result<()> {
        for (prefix, store) in [(FREE_PREFIX, self.free.params_mut()), (PHYSICS_PREFIX, self.physics.params_mut())] {
            let names = store.names().to_vec();
            for name in names {
                let key = format!("{prefix}{name}");
                let t = ckpt
                    .get(&key)
                    .ok_or_else(|| Error::Checkpoint(format!("missing array `{key}`")))?;
                store.assign(&name, t.clone())?;
            }
        }
        if !self.free.params().all_finite() || !self.physics.params().all_finite() {
            return Err(Error::Checkpoint("checkpoint contains non-finite parameters".into()));
        }
        Ok(())
    }

    /// Rebuilds a model from the configuration and parameters stored in a checkpoint.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let model_cfg = match ckpt.config.get("model") {
            Some(v) => serde_json::from_value(v.clone())
                .map_err(|e| Error::Checkpoint(format!("model configuration: {e}")))?,
            None => ModelConfig::default(),
        };
        let mut model = Self::new(&model_cfg, ckpt.seed)?;
        model.read_arrays(ckpt)?;
        Ok(model)
    }
}
