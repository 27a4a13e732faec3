//! Serializable description of one physical instance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{FormFactor, MomentumGrid, Profile};
use crate::reduction::Model;
use crate::spectral::SolverConfig;

/// Grid, profile, coupling and total momentum; the boson cutoff is chosen per use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Instance {
    pub dimension: usize,
    pub half_width: f64,
    pub spacing: f64,
    pub profile: Profile,
    #[serde(default)]
    pub coupling: f64,
    #[serde(default)]
    pub xi: Option<Vec<f64>>,
}

impl Instance {
    /// d=1, K=2, h=0.5 with a gaussian profile.
    pub fn reference(coupling: f64) -> Self {
        Self {
            dimension: 1,
            half_width: 2.0,
            spacing: 0.5,
            profile: Profile::Gaussian,
            coupling,
            xi: None,
        }
    }

    pub fn with_coupling(&self, coupling: f64) -> Self {
        Self {
            coupling,
            ..self.clone()
        }
    }

    pub fn grid(&self) -> Result<MomentumGrid> {
        MomentumGrid::new(self.dimension, self.half_width, self.spacing)
    }

    pub fn xi(&self) -> Result<Vec<f64>> {
        match &self.xi {
            None => Ok(vec![0.0; self.dimension]),
            Some(x) if x.len() == self.dimension => Ok(x.clone()),
            Some(x) => Err(Error::DimensionMismatch {
                expected: self.dimension,
                actual: x.len(),
            }),
        }
    }

    pub fn form(&self, grid: &MomentumGrid) -> Result<FormFactor> {
        FormFactor::sample(grid, self.profile, self.coupling)
    }

    pub fn model(&self, nmax: usize, config: &SolverConfig) -> Result<Model> {
        let grid = self.grid()?;
        let form = self.form(&grid)?;
        Model::new(grid, form, nmax, self.xi()?, config.clone())
    }
}
