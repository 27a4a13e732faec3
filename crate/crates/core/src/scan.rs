//! Coupling-constant sweep: spectrum, reduction and standing assumptions per `g`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::par;
use crate::reduction::symmetrized;
use crate::spectral::{dense_eigenvalues, SolverConfig, SpectralResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanOptions {
    pub couplings: Vec<f64>,
    pub nmax: usize,
    pub epsilon_grid: Vec<f64>,
    /// Defaults to `max(h^2, 10 tol)`.
    pub buffer: Option<f64>,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            couplings: vec![0.0, 0.05, 0.1, 0.2],
            nmax: 4,
            epsilon_grid: (1..10).map(|i| i as f64 / 10.0).collect(),
            buffer: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StandingAssumptions {
    pub e0_above_minus_one: bool,
    pub nu2_positive: bool,
    pub c0_positive: bool,
    pub a_norm_below_one: bool,
}

impl StandingAssumptions {
    pub fn all(&self) -> bool {
        self.e0_above_minus_one && self.nu2_positive && self.c0_positive && self.a_norm_below_one
    }

    fn flags(&self) -> [(&'static str, bool); 4] {
        [
            ("e0_above_minus_one", self.e0_above_minus_one),
            ("nu2_positive", self.nu2_positive),
            ("c0_positive", self.c0_positive),
            ("a_norm_below_one", self.a_norm_below_one),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub coupling: f64,
    pub dimension: usize,
    #[serde(with = "crate::float_serde::nullable")]
    pub e0: f64,
    #[serde(with = "crate::float_serde::nullable")]
    pub nu1: f64,
    #[serde(with = "crate::float_serde::nullable")]
    pub nu2: f64,
    #[serde(with = "crate::float_serde::nullable")]
    pub buffer: f64,
    /// Eigenvalues below `E_0 + 1 - buffer`.
    pub count: usize,
    pub eigenvalues: Vec<f64>,
    /// `min spec O^(ε)` per point of the ε-grid.
    pub one_particle_minima: Vec<f64>,
    pub min_one_particle: Option<f64>,
    /// Sign changes of `min spec O^(ε)` along the ε-grid; each brackets an excited level.
    pub one_particle_sign_changes: usize,
    pub c0: Option<f64>,
    pub a_norm: Option<f64>,
    pub norm_identity_residual: Option<f64>,
    pub assumptions: StandingAssumptions,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionFailure {
    pub assumption: String,
    pub first_coupling: Option<f64>,
    /// Holds again at some larger `g` after first failing.
    pub non_monotone: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub instance: Instance,
    pub options: ScanOptions,
    pub points: Vec<ScanPoint>,
    /// First coupling with more than one eigenvalue below the edge.
    pub g_star: Option<f64>,
    pub failures: Vec<AssumptionFailure>,
}

impl ScanResult {
    pub const CSV_HEADER: &'static str = "coupling,dimension,e0,nu1,nu2,buffer,count,min_one_particle,one_particle_sign_changes,c0,a_norm,norm_identity_residual,e0_above_minus_one,nu2_positive,c0_positive,a_norm_below_one,error";

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let opt = |x: Option<f64>| x.map(|v| format!("{v:e}")).unwrap_or_default();
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for p in &self.points {
            let a = p.assumptions;
            writeln!(
                out,
                "{},{},{:e},{:e},{:e},{:e},{},{},{},{},{},{},{},{},{},{},{}",
                p.coupling,
                p.dimension,
                p.e0,
                p.nu1,
                p.nu2,
                p.buffer,
                p.count,
                opt(p.min_one_particle),
                p.one_particle_sign_changes,
                opt(p.c0),
                opt(p.a_norm),
                opt(p.norm_identity_residual),
                a.e0_above_minus_one,
                a.nu2_positive,
                a.c0_positive,
                a.a_norm_below_one,
                p.error.as_deref().unwrap_or("").replace(',', ";"),
            )?;
        }
        Ok(())
    }
}

/// One scan point; reduction failures are recorded, not propagated.
pub fn scan_point(instance: &Instance, nmax: usize, epsilons: &[f64], buffer: Option<f64>, config: &SolverConfig) -> Result<ScanPoint> {
    let model = instance.model(nmax, config)?;
    let buffer = buffer.unwrap_or_else(|| config.edge_buffer(instance.spacing));
    let spec = SpectralResult::compute(&model.hamiltonian, &model.basis, buffer, config)?;
    let nu2 = spec.nu2.unwrap_or(f64::NAN);
    let mut point = ScanPoint {
        coupling: instance.coupling,
        dimension: spec.dimension,
        e0: spec.ground_energy,
        nu1: spec.nu1,
        nu2,
        buffer,
        count: spec.count(),
        eigenvalues: spec.eigenvalues.clone(),
        one_particle_minima: Vec::new(),
        min_one_particle: None,
        one_particle_sign_changes: 0,
        c0: None,
        a_norm: None,
        norm_identity_residual: None,
        assumptions: StandingAssumptions {
            e0_above_minus_one: spec.ground_energy > -1.0,
            nu2_positive: nu2 > 0.0,
            c0_positive: false,
            a_norm_below_one: false,
        },
        error: None,
    };
    let mut reduction = || -> Result<()> {
        let bundle = model.build_bundle(0.0)?;
        point.c0 = Some(bundle.c0);
        point.assumptions.c0_positive = bundle.c0 > 0.0;
        point.a_norm = bundle.a_norm();
        point.assumptions.a_norm_below_one = bundle.a_norm().is_some_and(|a| a < 1.0);
        if bundle.phi.is_some() {
            point.norm_identity_residual = Some((bundle.norm_identity()? - 1.0).abs());
        }
        for &eps in epsilons {
            let o = model.one_particle_operator(eps)?;
            point.one_particle_minima.push(dense_eigenvalues(&symmetrized(&o))[0]);
        }
        point.min_one_particle = point.one_particle_minima.iter().copied().reduce(f64::min);
        point.one_particle_sign_changes = point.one_particle_minima.windows(2).filter(|w| (w[0] > 0.0) != (w[1] > 0.0)).count();
        Ok(())
    };
    if let Err(e) = reduction() {
        point.error = Some(e.to_string());
    }
    Ok(point)
}

/// Runs every coupling (in parallel under the `parallel` feature) and merges in ascending `g`.
pub fn run_scan(instance: &Instance, options: &ScanOptions, config: &SolverConfig) -> Result<ScanResult> {
    if options.couplings.is_empty() {
        return Err(Error::InvalidArgument("coupling ladder is empty".into()));
    }
    if options.couplings.iter().any(|g| !g.is_finite()) {
        return Err(Error::InvalidArgument("couplings must be finite".into()));
    }
    let mut gs = options.couplings.clone();
    gs.sort_by(f64::total_cmp);
    gs.dedup();
    let points: Vec<ScanPoint> = par::map(gs, |g| {
        let inst = instance.with_coupling(g);
        scan_point(&inst, options.nmax, &options.epsilon_grid, options.buffer, config).unwrap_or_else(|e| failed_point(g, e))
    });
    let g_star = points.iter().find(|p| p.error.is_none() && p.count > 1).map(|p| p.coupling);
    let failures = ["e0_above_minus_one", "nu2_positive", "c0_positive", "a_norm_below_one"]
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let flags: Vec<(f64, bool)> = points.iter().map(|p| (p.coupling, p.assumptions.flags()[i].1)).collect();
            let first = flags.iter().position(|f| !f.1);
            AssumptionFailure {
                assumption: name.to_string(),
                first_coupling: first.map(|j| flags[j].0),
                non_monotone: first.is_some_and(|j| flags[j..].iter().any(|f| f.1)),
            }
        })
        .collect();
    Ok(ScanResult {
        instance: instance.clone(),
        options: options.clone(),
        points,
        g_star,
        failures,
    })
}

fn failed_point(g: f64, e: Error) -> ScanPoint {
    ScanPoint {
        coupling: g,
        dimension: 0,
        e0: f64::NAN,
        nu1: f64::NAN,
        nu2: f64::NAN,
        buffer: f64::NAN,
        count: 0,
        eigenvalues: Vec::new(),
        one_particle_minima: Vec::new(),
        min_one_particle: None,
        one_particle_sign_changes: 0,
        c0: None,
        a_norm: None,
        norm_identity_residual: None,
        assumptions: StandingAssumptions {
            e0_above_minus_one: false,
            nu2_positive: false,
            c0_positive: false,
            a_norm_below_one: false,
        },
        error: Some(e.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_single_row() {
        let opts = ScanOptions {
            couplings: vec![0.0],
            nmax: 2,
            ..ScanOptions::default()
        };
        let r = run_scan(&Instance::reference(0.0), &opts, &SolverConfig::default()).unwrap();
        assert_eq!(r.points.len(), 1);
        let p = &r.points[0];
        assert_eq!(p.count, 1);
        assert_eq!(p.c0, Some(0.0));
        assert!(!p.assumptions.c0_positive);
        assert_eq!(r.g_star, None);
        assert_eq!(r.failures[2].first_coupling, Some(0.0));
    }

    #[test]
    fn sorted_and_csv() {
        let opts = ScanOptions {
            couplings: vec![0.1, 0.05],
            nmax: 2,
            ..ScanOptions::default()
        };
        let r = run_scan(&Instance::reference(0.0), &opts, &SolverConfig::default()).unwrap();
        assert_eq!(r.points.iter().map(|p| p.coupling).collect::<Vec<_>>(), vec![0.05, 0.1]);
        for p in &r.points {
            assert!(p.assumptions.all(), "{p:?}");
            assert_eq!(p.one_particle_minima.len(), 9);
            assert!(p.min_one_particle.unwrap() > 0.0);
        }
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), ScanResult::CSV_HEADER);
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn empty_ladder_rejected() {
        let opts = ScanOptions {
            couplings: vec![],
            ..ScanOptions::default()
        };
        assert!(run_scan(&Instance::reference(0.0), &opts, &SolverConfig::default()).is_err());
    }
}
