use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Zero-mean, unit-variance error distributions; scaled by `sqrt(omega_j)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseFamily {
    Gaussian,
    Uniform,
    Laplace,
    /// Random sign of magnitude 0.9 plus Gaussian jitter of variance 0.19.
    RademacherMixture,
}

const MIX_CENTER: f64 = 0.9;

impl NoiseFamily {
    pub fn draw_standard<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            NoiseFamily::Gaussian => StandardNormal.sample(rng),
            NoiseFamily::Uniform => {
                let h = 3f64.sqrt();
                rng.random_range(-h..h)
            }
            NoiseFamily::Laplace => {
                let e: f64 = Exp1.sample(rng);
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                sign * e / std::f64::consts::SQRT_2
            }
            NoiseFamily::RademacherMixture => {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let z: f64 = StandardNormal.sample(rng);
                sign * MIX_CENTER + z * (1.0 - MIX_CENTER * MIX_CENTER).sqrt()
            }
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gaussian" | "normal" => Ok(NoiseFamily::Gaussian),
            "uniform" => Ok(NoiseFamily::Uniform),
            "laplace" => Ok(NoiseFamily::Laplace),
            "rademacher-mixture" | "mixture" => Ok(NoiseFamily::RademacherMixture),
            other => Err(Error::invalid(format!("unknown noise family '{other}'"))),
        }
    }
}

/// One error family per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    families: Vec<NoiseFamily>,
}

impl NoiseSpec {
    pub fn new(families: Vec<NoiseFamily>) -> Self {
        NoiseSpec { families }
    }

    pub fn uniform_family(p: usize, family: NoiseFamily) -> Self {
        NoiseSpec {
            families: vec![family; p],
        }
    }

    pub fn gaussian(p: usize) -> Self {
        Self::uniform_family(p, NoiseFamily::Gaussian)
    }

    pub fn len(&self) -> usize {
        self.families.len()
    }

    pub fn is_empty(&self) -> bool {
        self.families.is_empty()
    }

    pub fn family(&self, j: usize) -> NoiseFamily {
        self.families[j]
    }
}
