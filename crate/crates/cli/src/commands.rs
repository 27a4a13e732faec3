//! The five subcommands. Each returns a JSON-serializable outcome.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use polaron::fock::{assemble_hamiltonian, FockBasis};
use polaron::identities::{run_suite, Classification, VerificationManifest};
use polaron::reduction::{bs_limit_check, BsLimitReport, BundleSummary, ReductionBundle, SchurCorrespondence};
use polaron::scan::{run_scan, ScanResult};
use polaron::sparse::SparseOperator;
use polaron::spectral::SpectralResult;
use serde::{Deserialize, Serialize};

use crate::config::{CachePolicy, RunConfig};
use crate::error::{CliError, CliResult};
use crate::run::{RunDir, MANIFEST};

pub const HAMILTONIAN: &str = "matrices/hamiltonian.bin";
pub const HAMILTONIAN_SIDECAR: &str = "matrices/hamiltonian.json";
pub const FORM_FACTOR: &str = "tables/form_factor.csv";
pub const SPECTRUM: &str = "results/spectrum.json";
pub const VERIFICATION: &str = "results/verification.json";
pub const VERIFICATION_CSV: &str = "tables/verification.csv";
pub const BUNDLE: &str = "results/bundle.json";
pub const REDUCTION_CHECKS: &str = "results/reduction_checks.json";
pub const SCAN: &str = "results/scan.json";
pub const SCAN_CSV: &str = "tables/scan.csv";
pub const SUMMARY_CSV: &str = "tables/summary.csv";
pub const SUMMARY_TXT: &str = "tables/summary.txt";

/// `--out`, then `output_dir`, then `runs/<hash prefix>`.
pub fn resolve_root(out: Option<&Path>, config: &RunConfig) -> PathBuf {
    out.map(Path::to_path_buf)
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(&config.content_hash()[..12]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSidecar {
    pub dimension: usize,
    pub nnz: usize,
    pub modes: usize,
    pub nmax: usize,
    pub hermitian: bool,
    pub sha256: String,
    pub layout: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BuildOutcome {
    pub run_dir: PathBuf,
    pub cache_hit: bool,
    pub dimension: usize,
    pub nnz: usize,
    pub hamiltonian_sha256: String,
}

pub fn build(config: RunConfig, out: Option<&Path>) -> CliResult<BuildOutcome> {
    config.validate()?;
    let root = resolve_root(out, &config);
    if root.join(MANIFEST).exists() {
        let run = RunDir::open(&root)?;
        if config.cache == CachePolicy::Reuse && run.manifest.config_hash == config.content_hash() && run.has(HAMILTONIAN) {
            let side: MatrixSidecar = run.read_json(HAMILTONIAN_SIDECAR)?;
            if side.sha256 != run.manifest.artifacts[HAMILTONIAN].sha256 {
                return Err(CliError::Cache("hamiltonian sidecar disagrees with manifest".into()));
            }
            info!("cache hit: {}", root.display());
            return Ok(BuildOutcome {
                run_dir: root,
                cache_hit: true,
                dimension: side.dimension,
                nnz: side.nnz,
                hamiltonian_sha256: side.sha256,
            });
        }
        info!("rebuilding {}", root.display());
        for sub in ["matrices", "results", "tables", "points"] {
            let p = root.join(sub);
            if p.exists() {
                fs::remove_dir_all(&p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            }
        }
    }
    let instance = config.instance();
    let grid = instance.grid()?;
    let form = instance.form(&grid)?;
    let basis = FockBasis::new(grid.len(), config.nmax)?;
    let h = assemble_hamiltonian(&basis, &grid, &form, &instance.xi()?)?;
    let mut run = RunDir::create(&root, config)?;
    let sha = run.write_artifact(HAMILTONIAN, &h.to_bytes())?;
    let side = MatrixSidecar {
        dimension: h.dim(),
        nnz: h.nnz(),
        modes: grid.len(),
        nmax: basis.nmax(),
        hermitian: h.is_hermitian(),
        sha256: sha.clone(),
        layout: "le: u64 dim, u64 nnz, u64 flags; nnz x (u64 row, u64 col, f64 value)".into(),
    };
    run.write_json(HAMILTONIAN_SIDECAR, &side)?;
    let mut csv = Vec::new();
    form.write_csv(&grid, &mut csv)?;
    run.write_artifact(FORM_FACTOR, &csv)?;
    run.save()?;
    Ok(BuildOutcome {
        run_dir: root,
        cache_hit: false,
        dimension: h.dim(),
        nnz: h.nnz(),
        hamiltonian_sha256: sha,
    })
}

/// Opens `root`, building it first from `config` when no run exists there.
pub fn open_or_build(root: Option<&Path>, config: Option<RunConfig>) -> CliResult<RunDir> {
    match (root, config) {
        (Some(r), _) if r.join(MANIFEST).exists() => RunDir::open(r),
        (r, Some(c)) => {
            let outcome = build(c, r)?;
            RunDir::open(&outcome.run_dir)
        }
        (Some(r), None) => Err(CliError::Config(format!("no run at {} and no --config given", r.display()))),
        (None, None) => Err(CliError::Config("need a run directory or --config".into())),
    }
}

pub fn load_hamiltonian(run: &RunDir) -> CliResult<(SparseOperator, FockBasis)> {
    let bytes = run.read_artifact(HAMILTONIAN)?;
    let side: MatrixSidecar = run.read_json(HAMILTONIAN_SIDECAR)?;
    let h = SparseOperator::from_bytes(&bytes).map_err(|e| CliError::Cache(e.to_string()))?;
    let basis = FockBasis::new(side.modes, side.nmax)?;
    if h.dim() != side.dimension || basis.dim() != side.dimension || h.nnz() != side.nnz {
        return Err(CliError::Cache("cached hamiltonian disagrees with its sidecar".into()));
    }
    Ok((h, basis))
}

pub fn spectrum(run: &mut RunDir) -> CliResult<SpectralResult> {
    let (h, basis) = load_hamiltonian(run)?;
    let config = run.config().clone();
    let result = SpectralResult::compute(&h, &basis, config.buffer(), &config.solver).map_err(|e| CliError::Solver(e.to_string()))?;
    run.write_json(SPECTRUM, &result)?;
    run.save()?;
    Ok(result)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BundleRecord {
    pub nmax: usize,
    pub summary: BundleSummary,
    /// Kernel name to relative path of its binary block.
    pub kernels: Vec<(String, String)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReductionChecks {
    pub nmax: usize,
    pub schur_correspondence: Option<SchurCorrespondence>,
    pub schur_error: Option<String>,
    pub bs_limit: Option<BsLimitReport>,
    pub bs_limit_error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyOutcome {
    pub run_dir: PathBuf,
    pub exact_passed: bool,
    pub all_passed: bool,
    pub warning: bool,
    pub failed: Vec<String>,
}

fn persist_bundle(run: &mut RunDir, bundle: &ReductionBundle, nmax: usize) -> CliResult<()> {
    let mut kernels = Vec::new();
    for (name, m) in bundle.kernels() {
        let rel = format!("matrices/kernels/{name}.bin");
        run.write_artifact(&rel, &ReductionBundle::kernel_bytes(m))?;
        kernels.push((name.to_string(), rel));
    }
    let record = BundleRecord {
        nmax,
        summary: bundle.summary(),
        kernels,
    };
    run.write_json(BUNDLE, &record)?;
    Ok(())
}

pub fn verify(run: &mut RunDir, filter: Option<&[String]>) -> CliResult<(VerificationManifest, VerifyOutcome)> {
    let config = run.config().clone();
    let instance = config.instance();
    let manifest = run_suite(&instance, &config.solver, &config.verify, filter).map_err(|e| match e {
        polaron::Error::UnknownSelector(id) => CliError::Config(format!("unknown identity id `{id}`")),
        other => CliError::from(other),
    })?;
    run.write_json(VERIFICATION, &manifest)?;
    let mut csv = Vec::new();
    manifest.write_csv(&mut csv)?;
    run.write_artifact(VERIFICATION_CSV, &csv)?;

    let model = instance.model(config.nmax, &config.solver).map_err(|e| CliError::Solver(e.to_string()))?;
    let bundle = model.build_bundle(config.epsilon).map_err(|e| CliError::Solver(e.to_string()))?;
    persist_bundle(run, &bundle, config.nmax)?;

    if filter.is_none() {
        let mut checks = ReductionChecks {
            nmax: config.nmax,
            schur_correspondence: None,
            schur_error: None,
            bs_limit: None,
            bs_limit_error: None,
        };
        if config.nmax >= 2 && model.dim() <= config.solver.dense_threshold {
            match model.schur_correspondence(config.buffer(), 400) {
                Ok(c) => checks.schur_correspondence = Some(c),
                Err(e) => checks.schur_error = Some(e.to_string()),
            }
        }
        let base = if config.epsilon == 0.0 { bundle } else { model.build_bundle(0.0)? };
        match bs_limit_check(&base, &model.grid, &[1e-1, 1e-2, 1e-3]) {
            Ok(r) => checks.bs_limit = Some(r),
            Err(e) => checks.bs_limit_error = Some(e.to_string()),
        }
        run.write_json(REDUCTION_CHECKS, &checks)?;
    }
    run.save()?;

    for w in &manifest.warnings {
        warn!("{w}");
    }
    let failed: Vec<String> = manifest
        .reports
        .iter()
        .filter(|r| !r.passed)
        .map(|r| format!("{} ({:?})", r.id, r.classification))
        .collect();
    let outcome = VerifyOutcome {
        run_dir: run.root.clone(),
        exact_passed: manifest.exact_passed,
        all_passed: manifest.all_passed,
        warning: !manifest.warnings.is_empty(),
        failed,
    };
    Ok((manifest, outcome))
}

/// Exit status for a verification: 1 iff an EXACT identity failed.
pub fn verify_exit(manifest: &VerificationManifest) -> CliResult<()> {
    let bad: Vec<&str> = manifest
        .reports
        .iter()
        .filter(|r| r.classification == Classification::Exact && !r.passed)
        .map(|r| r.id.as_str())
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(CliError::Identity(bad.join(", ")))
    }
}

pub fn scan(run: &mut RunDir) -> CliResult<ScanResult> {
    let config = run.config().clone();
    let result = run_scan(&config.instance(), &config.scan, &config.solver)?;
    for (i, p) in result.points.iter().enumerate() {
        run.write_json(&format!("points/{i:03}-g{}/point.json", p.coupling), p)?;
        if let Some(e) = &p.error {
            warn!("g = {}: {e}", p.coupling);
        }
    }
    run.write_json(SCAN, &result)?;
    let mut csv = Vec::new();
    result.write_csv(&mut csv)?;
    run.write_artifact(SCAN_CSV, &csv)?;
    run.save()?;
    Ok(result)
}

pub const SUMMARY_HEADER: &str = "config_hash,dimension_d,modes_half_width,spacing,coupling,nmax,hilbert_dimension,e0,nu1,nu2,count,c0,exact_passed,all_passed";

/// Merges whatever results exist into CSV tables and a text summary.
pub fn report(run: &mut RunDir) -> CliResult<String> {
    let config = run.config().clone();
    let spectrum: Option<SpectralResult> = if run.has(SPECTRUM) { Some(run.read_json(SPECTRUM)?) } else { None };
    let verification: Option<VerificationManifest> = if run.has(VERIFICATION) { Some(run.read_json(VERIFICATION)?) } else { None };
    let bundle: Option<BundleRecord> = if run.has(BUNDLE) { Some(run.read_json(BUNDLE)?) } else { None };
    let scan: Option<ScanResult> = if run.has(SCAN) { Some(run.read_json(SCAN)?) } else { None };
    if spectrum.is_none() && verification.is_none() && scan.is_none() {
        return Err(CliError::Config(format!("{}: no results to report; run spectrum, verify or scan first", run.root.display())));
    }

    let fmt = |x: Option<f64>| x.map(|v| format!("{v:e}")).unwrap_or_default();
    let mut text = String::new();
    let _ = writeln!(text, "run {}", run.root.display());
    let _ = writeln!(
        text,
        "instance: d={} K={} h={} profile={:?} g={} nmax={}",
        config.grid.dimension, config.grid.half_width, config.grid.spacing, config.profile, config.coupling, config.nmax
    );
    if spectrum.is_some() || verification.is_some() {
        let mut csv = format!("{SUMMARY_HEADER}\n");
        let s = spectrum.as_ref();
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            run.manifest.config_hash,
            config.grid.dimension,
            config.grid.half_width,
            config.grid.spacing,
            config.coupling,
            config.nmax,
            s.map(|s| s.dimension.to_string()).unwrap_or_default(),
            fmt(s.map(|s| s.ground_energy)),
            fmt(s.map(|s| s.nu1)),
            fmt(s.and_then(|s| s.nu2)),
            s.map(|s| s.count().to_string()).unwrap_or_default(),
            fmt(bundle.as_ref().map(|b| b.summary.c0)),
            verification.as_ref().map(|v| v.exact_passed.to_string()).unwrap_or_default(),
            verification.as_ref().map(|v| v.all_passed.to_string()).unwrap_or_default(),
        );
        run.write_artifact(SUMMARY_CSV, csv.as_bytes())?;
    }
    if let Some(s) = &spectrum {
        let _ = writeln!(
            text,
            "spectrum: dim={} E0={:.12e} nu1={:.6e} nu2={} count below E0+1-{:.3e}: {}",
            s.dimension,
            s.ground_energy,
            s.nu1,
            fmt(s.nu2),
            s.buffer,
            s.count()
        );
    }
    if let Some(v) = &verification {
        let mut csv = Vec::new();
        v.write_csv(&mut csv)?;
        run.write_artifact(VERIFICATION_CSV, &csv)?;
        let _ = writeln!(text, "verification: exact_passed={} all_passed={}", v.exact_passed, v.all_passed);
        for r in &v.reports {
            let levels: Vec<String> = r.levels.iter().map(|l| format!("{}:{:.2e}", l.nmax, l.residual)).collect();
            let status = if r.absent {
                "absent"
            } else if r.passed {
                "pass"
            } else {
                "FAIL"
            };
            let _ = writeln!(text, "  {:<18} {:<6} {}", r.id, status, levels.join(" "));
        }
    }
    if let Some(sc) = &scan {
        let mut csv = Vec::new();
        sc.write_csv(&mut csv)?;
        run.write_artifact(SCAN_CSV, &csv)?;
        let _ = writeln!(
            text,
            "scan: {} couplings, g* = {}",
            sc.points.len(),
            sc.g_star.map(|g| g.to_string()).unwrap_or_else(|| "none in range".into())
        );
        for f in &sc.failures {
            if let Some(g) = f.first_coupling {
                let _ = writeln!(text, "  {} first fails at g = {g}{}", f.assumption, if f.non_monotone { " (non-monotone)" } else { "" });
            }
        }
    }
    run.write_artifact(SUMMARY_TXT, text.as_bytes())?;
    run.save()?;
    Ok(text)
}
