//! Map between the constrained parameter layout and the real line.
//!
//! Real-valued blocks use the identity, positive blocks use `log`. Blocks
//! whose prior is a point mass are dropped from the unconstrained vector and
//! re-inserted on the way back.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    CoefPrior, Dataset, FhParams, FhvParams, HyperPriorSpec, ModelKind, ModelSpec, ParamVector,
    ScalePrior,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    Identity,
    Log,
}

impl Transform {
    #[inline]
    pub fn constrain(self, u: f64) -> f64 {
        match self {
            Transform::Identity => u,
            Transform::Log => u.exp(),
        }
    }

    #[inline]
    pub fn unconstrain(self, x: f64) -> Result<f64> {
        match self {
            Transform::Identity => Ok(x),
            Transform::Log if x > 0.0 => Ok(x.ln()),
            Transform::Log => Err(Error::Domain(format!(
                "log transform requires a positive value, got {x}"
            ))),
        }
    }

    /// `log |d constrain / du|`.
    #[inline]
    pub fn log_abs_det_jacobian(self, u: f64) -> f64 {
        match self {
            Transform::Identity => 0.0,
            Transform::Log => u,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Theta,
    Beta,
    TauU2,
    Sigma2,
    A,
    Gamma,
}

/// A contiguous run of unconstrained coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSlot {
    pub block: Block,
    pub offset: usize,
    pub len: usize,
    pub transform: Transform,
}

/// Layout of the free parameters of a model on a given dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct UnconstrainedMap {
    kind: ModelKind,
    n: usize,
    px: usize,
    pz: usize,
    slots: Vec<BlockSlot>,
    dim: usize,
    hyper: HyperPriorSpec,
}

impl UnconstrainedMap {
    pub fn new(spec: &ModelSpec, data: &Dataset) -> Result<Self> {
        Self::with_dims(spec, data.len(), data.px(), data.pz())
    }

    pub fn with_dims(spec: &ModelSpec, n: usize, px: usize, pz: usize) -> Result<Self> {
        spec.hyper.validate(spec.kind, px, pz)?;
        let hyper = &spec.hyper;
        let mut slots = Vec::new();
        let mut offset = 0;
        let mut push = |block, len, transform| {
            slots.push(BlockSlot {
                block,
                offset,
                len,
                transform,
            });
            offset += len;
        };
        push(Block::Theta, n, Transform::Identity);
        if !hyper.beta.is_fixed() && px > 0 {
            push(Block::Beta, px, Transform::Identity);
        }
        if !hyper.tau_u2.is_fixed() {
            push(Block::TauU2, 1, Transform::Log);
        }
        if spec.kind == ModelKind::Fhv {
            push(Block::Sigma2, n, Transform::Log);
            if !hyper.a.is_fixed() {
                push(Block::A, 1, Transform::Log);
            }
            if !hyper.gamma.is_fixed() && pz > 0 {
                push(Block::Gamma, pz, Transform::Identity);
            }
        }
        Ok(UnconstrainedMap {
            kind: spec.kind,
            n,
            px,
            pz,
            slots,
            dim: offset,
            hyper: spec.hyper.clone(),
        })
    }

    /// Number of unconstrained coordinates.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn n_domains(&self) -> usize {
        self.n
    }

    pub fn px(&self) -> usize {
        self.px
    }

    pub fn pz(&self) -> usize {
        self.pz
    }

    pub fn slots(&self) -> &[BlockSlot] {
        &self.slots
    }

    pub fn slot(&self, block: Block) -> Option<&BlockSlot> {
        self.slots.iter().find(|s| s.block == block)
    }

    /// Per-coordinate transform tags.
    pub fn transforms(&self) -> Vec<Transform> {
        self.slots
            .iter()
            .flat_map(|s| std::iter::repeat_n(s.transform, s.len))
            .collect()
    }

    fn fixed_beta(&self) -> Vec<f64> {
        match &self.hyper.beta {
            CoefPrior::Fixed { values } => values.clone(),
            _ => vec![0.0; self.px],
        }
    }

    fn fixed_gamma(&self) -> Vec<f64> {
        match &self.hyper.gamma {
            CoefPrior::Fixed { values } => values.clone(),
            _ => vec![0.0; self.pz],
        }
    }

    fn fixed_scale(prior: &ScalePrior) -> f64 {
        prior.fixed_value().unwrap_or(1.0)
    }

    fn get(&self, u: &[f64], block: Block) -> Option<Vec<f64>> {
        self.slot(block).map(|s| {
            u[s.offset..s.offset + s.len]
                .iter()
                .map(|&x| s.transform.constrain(x))
                .collect()
        })
    }

    pub fn constrain(&self, u: &[f64]) -> Result<ParamVector> {
        if u.len() != self.dim {
            return Err(Error::dim("unconstrained vector", self.dim, u.len()));
        }
        let theta = self.get(u, Block::Theta).unwrap_or_default();
        let beta = self.get(u, Block::Beta).unwrap_or_else(|| self.fixed_beta());
        let tau_u2 = self
            .get(u, Block::TauU2)
            .map(|v| v[0])
            .unwrap_or_else(|| Self::fixed_scale(&self.hyper.tau_u2));
        Ok(match self.kind {
            ModelKind::Fh => ParamVector::Fh(FhParams { theta, beta, tau_u2 }),
            ModelKind::Fhv => ParamVector::Fhv(FhvParams {
                theta,
                beta,
                tau_u2,
                sigma2: self.get(u, Block::Sigma2).unwrap_or_default(),
                a: self
                    .get(u, Block::A)
                    .map(|v| v[0])
                    .unwrap_or_else(|| Self::fixed_scale(&self.hyper.a)),
                gamma: self.get(u, Block::Gamma).unwrap_or_else(|| self.fixed_gamma()),
            }),
        })
    }

    pub fn unconstrain(&self, params: &ParamVector) -> Result<Vec<f64>> {
        if params.kind() != self.kind {
            return Err(Error::Argument(format!(
                "parameter vector is {} but the map is {}",
                params.kind(),
                self.kind
            )));
        }
        let (theta, beta, tau_u2) = match params {
            ParamVector::Fh(p) => (&p.theta, &p.beta, p.tau_u2),
            ParamVector::Fhv(p) => (&p.theta, &p.beta, p.tau_u2),
        };
        let mut u = vec![0.0; self.dim];
        for slot in &self.slots {
            let values: Vec<f64> = match (slot.block, params) {
                (Block::Theta, _) => theta.clone(),
                (Block::Beta, _) => beta.clone(),
                (Block::TauU2, _) => vec![tau_u2],
                (Block::Sigma2, ParamVector::Fhv(p)) => p.sigma2.clone(),
                (Block::A, ParamVector::Fhv(p)) => vec![p.a],
                (Block::Gamma, ParamVector::Fhv(p)) => p.gamma.clone(),
                _ => unreachable!("FH maps carry no FHV blocks"),
            };
            if values.len() != slot.len {
                return Err(Error::dim(format!("{:?}", slot.block), slot.len, values.len()));
            }
            for (k, x) in values.into_iter().enumerate() {
                u[slot.offset + k] = slot.transform.unconstrain(x)?;
            }
        }
        Ok(u)
    }

    pub fn log_abs_det_jacobian(&self, u: &[f64]) -> f64 {
        self.slots
            .iter()
            .filter(|s| s.transform == Transform::Log)
            .map(|s| u[s.offset..s.offset + s.len].iter().sum::<f64>())
            .sum()
    }
}
