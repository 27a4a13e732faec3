//! Browser demo. Three operations on small instances, each a plain function
//! with a `wasm_bindgen` wrapper that takes and returns JSON.

use polaron::grid::Profile;
use polaron::instance::Instance;
use polaron::spectral::{SolverConfig, SpectralResult};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

/// Largest Hilbert-space dimension the page will attempt.
pub const MAX_DIMENSION: usize = 2000;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceInput {
    #[serde(default = "default_half_width")]
    pub half_width: f64,
    #[serde(default = "default_spacing")]
    pub spacing: f64,
    #[serde(default = "default_profile")]
    pub profile: Profile,
    #[serde(default = "default_nmax")]
    pub nmax: usize,
}

fn default_half_width() -> f64 {
    2.0
}
fn default_spacing() -> f64 {
    0.5
}
fn default_profile() -> Profile {
    Profile::Gaussian
}
fn default_nmax() -> usize {
    3
}

impl Default for InstanceInput {
    fn default() -> Self {
        Self {
            half_width: default_half_width(),
            spacing: default_spacing(),
            profile: default_profile(),
            nmax: default_nmax(),
        }
    }
}

impl InstanceInput {
    fn instance(&self, coupling: f64) -> Instance {
        Instance {
            dimension: 1,
            half_width: self.half_width,
            spacing: self.spacing,
            profile: self.profile,
            coupling,
            xi: None,
        }
    }

    fn check(&self, nmax: usize) -> Result<(), String> {
        let grid = self.instance(0.0).grid().map_err(|e| e.to_string())?;
        let dim = polaron::fock::basis_dimension(grid.len(), nmax);
        if dim > MAX_DIMENSION {
            return Err(format!("dimension {dim} exceeds the demo limit {MAX_DIMENSION}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumRow {
    pub coupling: f64,
    pub e0: f64,
    pub nu1: f64,
    pub nu2: Option<f64>,
    pub count: usize,
    pub eigenvalues: Vec<f64>,
}

/// Ground energy, gaps and bound-state count along a coupling ladder.
pub fn coupling_scan(input: &InstanceInput, couplings: &[f64]) -> Result<Vec<SpectrumRow>, String> {
    input.check(input.nmax)?;
    let config = SolverConfig::default();
    couplings
        .iter()
        .map(|&g| {
            let model = input.instance(g).model(input.nmax, &config).map_err(|e| e.to_string())?;
            let buffer = config.edge_buffer(input.spacing);
            let s = SpectralResult::compute(&model.hamiltonian, &model.basis, buffer, &config).map_err(|e| e.to_string())?;
            Ok(SpectrumRow {
                coupling: g,
                e0: s.ground_energy,
                nu1: s.nu1,
                nu2: s.nu2,
                count: s.count(),
                eigenvalues: s.eigenvalues.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct Dispersion {
    pub e0: f64,
    pub momenta: Vec<f64>,
    /// `E_q - E_0`.
    pub excess: Vec<f64>,
    /// `q^2`, the free curve.
    pub free: Vec<f64>,
}

/// `E_q - E_0` on `points` equally spaced momenta in `[-K, K]`.
pub fn dispersion(input: &InstanceInput, coupling: f64, points: usize) -> Result<Dispersion, String> {
    input.check(input.nmax)?;
    if points < 2 {
        return Err("need at least two momenta".into());
    }
    let model = input
        .instance(coupling)
        .model(input.nmax, &SolverConfig::default())
        .map_err(|e| e.to_string())?;
    let k = input.half_width;
    let momenta: Vec<f64> = (0..points).map(|i| -k + 2.0 * k * i as f64 / (points - 1) as f64).collect();
    let e0 = model.e0();
    let excess = momenta
        .iter()
        .map(|&q| model.energy_curve(&[q]).map(|e| e - e0).map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dispersion {
        e0,
        free: momenta.iter().map(|q| q * q).collect(),
        momenta,
        excess,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct NormIdentityRow {
    pub nmax: usize,
    pub c0: f64,
    pub phi_norm: Option<f64>,
    pub a_norm: Option<f64>,
    /// `<φ|(1+A)^{-1}|φ>`, absent when `c_0 <= 0`.
    pub value: Option<f64>,
    pub residual: Option<f64>,
}

/// Norm-identity residual along a cutoff ladder at fixed coupling.
pub fn norm_identity_ladder(input: &InstanceInput, coupling: f64, ladder: &[usize]) -> Result<Vec<NormIdentityRow>, String> {
    let config = SolverConfig::default();
    ladder
        .iter()
        .map(|&n| {
            input.check(n)?;
            let model = input.instance(coupling).model(n, &config).map_err(|e| e.to_string())?;
            let b = model.build_bundle(0.0).map_err(|e| e.to_string())?;
            let value = b.norm_identity().ok();
            Ok(NormIdentityRow {
                nmax: n,
                c0: b.c0,
                phi_norm: b.phi.as_ref().map(|p| p.norm()),
                a_norm: b.a_norm(),
                value,
                residual: value.map(|v| (v - 1.0).abs()),
            })
        })
        .collect()
}

fn parse(input: &str) -> Result<InstanceInput, JsError> {
    if input.trim().is_empty() {
        return Ok(InstanceInput::default());
    }
    serde_json::from_str(input).map_err(|e| JsError::new(&e.to_string()))
}

fn to_json<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let value = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = couplingScan)]
pub fn coupling_scan_js(instance: &str, couplings: Vec<f64>) -> Result<String, JsError> {
    to_json(coupling_scan(&parse(instance)?, &couplings))
}

#[wasm_bindgen(js_name = dispersion)]
pub fn dispersion_js(instance: &str, coupling: f64, points: usize) -> Result<String, JsError> {
    to_json(dispersion(&parse(instance)?, coupling, points))
}

#[wasm_bindgen(js_name = normIdentity)]
pub fn norm_identity_js(instance: &str, coupling: f64, ladder: Vec<usize>) -> Result<String, JsError> {
    to_json(norm_identity_ladder(&parse(instance)?, coupling, &ladder))
}
