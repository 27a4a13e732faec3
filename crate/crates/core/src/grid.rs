//! Momentum lattice and sampled form factors.
//!
//! The phonon field lives on the symmetric lattice `h Z^d ∩ [-K, K]^d` with the
//! origin removed. Quadrature weights `h^d` are folded into the amplitudes, so
//! discrete inner products approximate continuum `L^2` pairings directly.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on the number of lattice modes.
pub const DEFAULT_MAX_MODES: usize = 4096;

/// Finite symmetric momentum lattice, origin excluded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentumGrid {
    dimension: usize,
    spacing: f64,
    half_width: f64,
    steps: i64,
    /// Row-major `M x d` coordinates.
    coords: Vec<f64>,
}

impl MomentumGrid {
    pub fn new(dimension: usize, half_width: f64, spacing: f64) -> Result<Self> {
        Self::with_cap(dimension, half_width, spacing, DEFAULT_MAX_MODES)
    }

    pub fn with_cap(dimension: usize, half_width: f64, spacing: f64, max_modes: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidGrid("dimension must be at least 1".into()));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::InvalidGrid(format!("spacing {spacing} must be positive")));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::InvalidGrid(format!("half-width {half_width} must be positive")));
        }
        let ratio = half_width / spacing;
        let steps = ratio.round();
        if steps < 1.0 || (ratio - steps).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidGrid(format!(
                "half-width {half_width} is not a positive integer multiple of spacing {spacing}"
            )));
        }
        let steps = steps as i64;
        let side = (2 * steps + 1) as f64;
        let count = side.powi(dimension as i32) - 1.0;
        if count > max_modes as f64 {
            return Err(Error::CapExceeded {
                what: "mode count",
                actual: count.min(usize::MAX as f64) as usize,
                cap: max_modes,
            });
        }
        let count = count as usize;

        let mut coords = Vec::with_capacity(count * dimension);
        let mut index = vec![-steps; dimension];
        loop {
            if index.iter().any(|&i| i != 0) {
                coords.extend(index.iter().map(|&i| i as f64 * spacing));
            }
            // odometer, last axis fastest
            let mut axis = dimension;
            loop {
                if axis == 0 {
                    debug_assert_eq!(coords.len(), count * dimension);
                    return Ok(Self {
                        dimension,
                        spacing,
                        half_width,
                        steps,
                        coords,
                    });
                }
                axis -= 1;
                if index[axis] < steps {
                    index[axis] += 1;
                    break;
                }
                index[axis] = -steps;
            }
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// Lattice steps per half axis, `K / h`.
    pub fn steps(&self) -> i64 {
        self.steps
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dimension
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn mode(&self, j: usize) -> &[f64] {
        &self.coords[j * self.dimension..(j + 1) * self.dimension]
    }

    pub fn modes(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dimension)
    }

    /// Index of `-k` for mode `k`. Lexicographic order on a symmetric box is
    /// reversed by negation.
    pub fn negated(&self, j: usize) -> usize {
        self.len() - 1 - j
    }

    pub fn norm(&self, j: usize) -> f64 {
        norm(self.mode(j))
    }

    pub fn weight(&self) -> f64 {
        self.spacing.powi(self.dimension as i32)
    }

    /// Grid modes plus the origin.
    pub fn default_probes(&self) -> Vec<Vec<f64>> {
        let mut probes = vec![vec![0.0; self.dimension]];
        probes.extend(self.modes().map(<[f64]>::to_vec));
        probes
    }
}

pub(crate) fn norm(k: &[f64]) -> f64 {
    k.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Shape `w(k)` of the coupling function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    /// `|k|^{-alpha}`; `alpha = 1` is the Fröhlich coupling.
    Froehlich { alpha: f64 },
    /// `exp(-|k|^2)`.
    Gaussian,
    Constant,
}

impl Profile {
    pub fn shape(&self, k: &[f64]) -> f64 {
        match *self {
            Profile::Froehlich { alpha } => norm(k).powf(-alpha),
            Profile::Gaussian => (-k.iter().map(|x| x * x).sum::<f64>()).exp(),
            Profile::Constant => 1.0,
        }
    }
}

/// Real, even amplitudes `v_k = g w(k) h^{d/2}` on the grid modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormFactor {
    pub profile: Profile,
    pub coupling: f64,
    pub amplitudes: Vec<f64>,
}

impl FormFactor {
    pub fn sample(grid: &MomentumGrid, profile: Profile, coupling: f64) -> Result<Self> {
        if !(coupling >= 0.0 && coupling.is_finite()) {
            return Err(Error::InvalidArgument(format!("coupling {coupling} must be >= 0")));
        }
        let scale = coupling * grid.weight().sqrt();
        let amplitudes: Vec<f64> = grid.modes().map(|k| scale * profile.shape(k)).collect();
        if let Some(bad) = amplitudes.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "form factor is not finite at mode {:?}",
                grid.mode(bad)
            )));
        }
        Ok(Self {
            profile,
            coupling,
            amplitudes,
        })
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    pub fn get(&self, j: usize) -> f64 {
        self.amplitudes[j]
    }

    pub fn norm_squared(&self) -> f64 {
        self.amplitudes.iter().map(|v| v * v).sum()
    }

    /// Columns `k0..k{d-1}, v`.
    pub fn write_csv<W: Write>(&self, grid: &MomentumGrid, mut out: W) -> Result<()> {
        let header: Vec<String> = (0..grid.dimension()).map(|i| format!("k{i}")).collect();
        writeln!(out, "{},v", header.join(","))?;
        for (k, v) in grid.modes().zip(&self.amplitudes) {
            let cols: Vec<String> = k.iter().map(|x| format!("{x:.17e}")).collect();
            writeln!(out, "{},{v:.17e}", cols.join(","))?;
        }
        Ok(())
    }
}

/// Probe-sampled lower bound for `sup_k || (1 + |. - k|)^{-1} v ||`.
pub fn triple_norm(form: &FormFactor, grid: &MomentumGrid, probes: &[Vec<f64>]) -> Result<f64> {
    if probes.is_empty() {
        return Err(Error::EmptyProbeSet);
    }
    let mut best = 0.0_f64;
    for probe in probes {
        if probe.len() != grid.dimension() {
            return Err(Error::DimensionMismatch {
                expected: grid.dimension(),
                actual: probe.len(),
            });
        }
        let sum: f64 = grid
            .modes()
            .zip(&form.amplitudes)
            .map(|(k, v)| {
                let dist = k.iter().zip(probe).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                let x = v / (1.0 + dist);
                x * x
            })
            .sum();
        best = best.max(sum.sqrt());
    }
    Ok(best)
}
