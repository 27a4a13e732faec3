//! Eigenvalue and linear solvers.
//!
//! Everything at or below `SolverConfig::dense_threshold` is solved densely;
//! larger problems go through Lanczos with full reorthogonalization and
//! locking (so degenerate levels are resolved one copy at a time) or through
//! conjugate gradients.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen, LU};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::FockBasis;
use crate::sparse::SparseOperator;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Residual norm accepted for an eigenpair.
    pub eigen_tolerance: f64,
    pub max_krylov: usize,
    pub max_restarts: usize,
    /// Relative residual for linear solves.
    pub linear_tolerance: f64,
    pub max_cg_iterations: usize,
    /// Problems of at most this dimension are solved densely.
    pub dense_threshold: usize,
    pub seed: u64,
    /// Permit LU solves of indefinite restricted operators on the dense path.
    pub allow_indefinite: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eigen_tolerance: 1e-10,
            max_krylov: 300,
            max_restarts: 30,
            linear_tolerance: 1e-12,
            max_cg_iterations: 20_000,
            dense_threshold: 500,
            seed: 0,
            allow_indefinite: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eigen_tolerance > 0.0 && self.linear_tolerance > 0.0) {
            return Err(Error::InvalidArgument("solver tolerances must be positive".into()));
        }
        if self.dense_threshold < 1 || self.max_krylov < 2 {
            return Err(Error::InvalidArgument(
                "dense threshold must be >= 1 and max_krylov >= 2".into(),
            ));
        }
        Ok(())
    }

    /// Exclusion buffer below the continuum edge: `max(h^2, 10 tol)`.
    pub fn edge_buffer(&self, spacing: f64) -> f64 {
        (spacing * spacing).max(10.0 * self.eigen_tolerance)
    }
}

/// Symmetric linear map.
pub trait SymmetricOperator {
    fn dim(&self) -> usize;
    fn apply_into(&self, x: &[f64], y: &mut [f64]);

    fn apply_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.dim());
        self.apply_into(x.as_slice(), y.as_mut_slice());
        y
    }
}

impl SymmetricOperator for SparseOperator {
    fn dim(&self) -> usize {
        SparseOperator::dim(self)
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        SparseOperator::apply_into(self, x, y)
    }
}

impl SymmetricOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        let xv = nalgebra::DVectorView::from_slice(x, x.len());
        let mut yv = nalgebra::DVectorViewMut::from_slice(y, x.len());
        yv.gemv(1.0, self, &xv, 0.0);
    }
}

/// `op - shift`.
struct Shifted<'a, T: SymmetricOperator + ?Sized> {
    op: &'a T,
    shift: f64,
}

impl<T: SymmetricOperator + ?Sized> SymmetricOperator for Shifted<'_, T> {
    fn dim(&self) -> usize {
        self.op.dim()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        self.op.apply_into(x, y);
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi -= self.shift * xi;
        }
    }
}

/// Ascending eigenvalues with matching eigenvector columns.
pub fn dense_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(m.nrows(), m.nrows(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

pub fn dense_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

fn residual_norm<T: SymmetricOperator + ?Sized>(op: &T, lambda: f64, x: &DVector<f64>) -> f64 {
    (op.apply_vec(x) - x * lambda).norm()
}

fn random_unit(dim: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let v = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
    let n = v.norm();
    v / n
}

fn orthogonalize(w: &mut DVector<f64>, basis: &[DVector<f64>]) {
    for _ in 0..2 {
        for q in basis {
            let c = q.dot(w);
            w.axpy(-c, q, 1.0);
        }
    }
}

/// Lowest eigenpair of `op` on the orthogonal complement of `locked`.
fn lanczos_lowest<T: SymmetricOperator + ?Sized>(
    op: &T,
    locked: &[DVector<f64>],
    mut start: DVector<f64>,
    config: &SolverConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, DVector<f64>, f64)> {
    let n = op.dim();
    let room = n - locked.len();
    let m_max = config.max_krylov.min(room).max(1);
    let mut best = (f64::INFINITY, None::<(f64, DVector<f64>)>);
    let mut iterations = 0;

    for _restart in 0..=config.max_restarts {
        orthogonalize(&mut start, locked);
        let mut norm = start.norm();
        if norm < 1e-12 {
            start = random_unit(n, rng);
            orthogonalize(&mut start, locked);
            norm = start.norm();
        }
        let mut q: Vec<DVector<f64>> = vec![start / norm];
        let mut alphas: Vec<f64> = Vec::new();
        let mut betas: Vec<f64> = Vec::new();
        let mut ritz: Option<(f64, DVector<f64>)> = None;

        for j in 0..m_max {
            iterations += 1;
            let mut w = op.apply_vec(&q[j]);
            let alpha = q[j].dot(&w);
            w.axpy(-alpha, &q[j], 1.0);
            if j > 0 {
                w.axpy(-betas[j - 1], &q[j - 1], 1.0);
            }
            orthogonalize(&mut w, &q);
            orthogonalize(&mut w, locked);
            let beta = w.norm();
            alphas.push(alpha);

            let exhausted = beta < 1e-13 || j + 1 == m_max;
            if exhausted || (j + 1) % 5 == 0 {
                let k = alphas.len();
                let t = DMatrix::from_fn(k, k, |r, c| {
                    if r == c {
                        alphas[r]
                    } else if r + 1 == c {
                        betas[r]
                    } else if c + 1 == r {
                        betas[c]
                    } else {
                        0.0
                    }
                });
                let (vals, vecs) = dense_eigen(&t);
                let estimate = beta * vecs[(k - 1, 0)].abs();
                if estimate <= 0.5 * config.eigen_tolerance || exhausted {
                    let mut x = DVector::zeros(n);
                    for (i, qi) in q.iter().enumerate() {
                        x.axpy(vecs[(i, 0)], qi, 1.0);
                    }
                    let xn = x.norm();
                    ritz = Some((vals[0], x / xn));
                    break;
                }
            }
            betas.push(beta);
            q.push(w / beta);
        }

        let (_, x) = ritz.expect("Lanczos loop always yields a Ritz pair");
        let lambda = x.dot(&op.apply_vec(&x));
        let r = residual_norm(op, lambda, &x);
        if r <= config.eigen_tolerance {
            return Ok((lambda, x, r));
        }
        if r < best.0 {
            best = (r, Some((lambda, x.clone())));
        }
        start = x;
    }
    Err(Error::NotConverged {
        iterations,
        best_residual: best.0,
    })
}

/// Eigenpairs in ascending order with their residual norms.
#[derive(Debug, Clone)]
pub struct Eigenpairs {
    pub values: Vec<f64>,
    pub vectors: Vec<DVector<f64>>,
    pub residuals: Vec<f64>,
    pub dense: bool,
}

/// The `count` smallest eigenpairs.
pub fn lowest_eigenpairs<T: SymmetricOperator + ?Sized>(op: &T, count: usize, config: &SolverConfig) -> Result<Eigenpairs> {
    lowest_until(op, count, None, config)
}

/// Lowest eigenpairs, stopping after `count` pairs or at the first value above `cutoff`.
fn lowest_until<T: SymmetricOperator + ?Sized>(op: &T, count: usize, cutoff: Option<f64>, config: &SolverConfig) -> Result<Eigenpairs> {
    let n = op.dim();
    if count == 0 || count > n {
        return Err(Error::InvalidArgument(format!(
            "requested {count} eigenpairs of a {n}-dimensional operator"
        )));
    }
    if n <= config.dense_threshold {
        let mut m = DMatrix::zeros(n, n);
        let mut e = DVector::zeros(n);
        for c in 0..n {
            e[c] = 1.0;
            let col = op.apply_vec(&e);
            m.set_column(c, &col);
            e[c] = 0.0;
        }
        let (vals, vecs) = dense_eigen(&m);
        let mut out = Eigenpairs {
            values: Vec::new(),
            vectors: Vec::new(),
            residuals: Vec::new(),
            dense: true,
        };
        for (i, &lambda) in vals.iter().enumerate().take(count) {
            let x = vecs.column(i).into_owned();
            out.residuals.push(residual_norm(op, lambda, &x));
            out.values.push(lambda);
            out.vectors.push(x);
            if cutoff.is_some_and(|c| lambda > c) {
                break;
            }
        }
        return Ok(out);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Eigenpairs {
        values: Vec::new(),
        vectors: Vec::new(),
        residuals: Vec::new(),
        dense: false,
    };
    while out.values.len() < count {
        let start = random_unit(n, &mut rng);
        let (lambda, x, r) = lanczos_lowest(op, &out.vectors, start, config, &mut rng)?;
        out.values.push(lambda);
        out.vectors.push(x);
        out.residuals.push(r);
        if cutoff.is_some_and(|c| lambda > c) {
            break;
        }
    }
    // locking can return near-degenerate levels slightly out of order
    let mut order: Vec<usize> = (0..out.values.len()).collect();
    order.sort_by(|&a, &b| out.values[a].total_cmp(&out.values[b]));
    Ok(Eigenpairs {
        values: order.iter().map(|&i| out.values[i]).collect(),
        vectors: order.iter().map(|&i| out.vectors[i].clone()).collect(),
        residuals: order.iter().map(|&i| out.residuals[i]).collect(),
        dense: false,
    })
}

#[derive(Debug, Clone)]
pub struct GroundState {
    pub energy: f64,
    pub vector: DVector<f64>,
    pub residual: f64,
    pub vacuum_component: f64,
}

pub fn ground_energy(h: &SparseOperator, config: &SolverConfig) -> Result<GroundState> {
    let pairs = lowest_eigenpairs(h, 1, config)?;
    let mut vector = pairs.vectors[0].clone();
    if vector[0] < 0.0 {
        vector.neg_mut();
    }
    Ok(GroundState {
        energy: pairs.values[0],
        vacuum_component: vector[0],
        vector,
        residual: pairs.residuals[0],
    })
}

/// `ν_n = inf spec Π^{≥n}(H - 1 - E_0)Π^{≥n}` on the `≥ n` subspace.
pub fn nu(h: &SparseOperator, e0: f64, n: usize, basis: &FockBasis, config: &SolverConfig) -> Result<f64> {
    if n > basis.nmax() {
        return Err(Error::SectorOutOfRange { n, nmax: basis.nmax() });
    }
    let block = h.trailing_block(basis.sector_start(n));
    let pairs = lowest_eigenpairs(&block, 1, config)?;
    Ok(pairs.values[0] - 1.0 - e0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CountBelow {
    pub count: usize,
    pub cutoff: f64,
    pub eigenvalues: Vec<f64>,
    pub residuals: Vec<f64>,
    pub dense: bool,
}

/// Eigenvalues of `op` in `(-inf, threshold - buffer]`.
pub fn count_below<T: SymmetricOperator + ?Sized>(op: &T, threshold: f64, buffer: f64, config: &SolverConfig) -> Result<CountBelow> {
    if buffer.is_nan() || buffer <= 0.0 {
        return Err(Error::InvalidArgument(format!("buffer {buffer} must be positive")));
    }
    let cutoff = threshold - buffer;
    let pairs = lowest_until(op, op.dim(), Some(cutoff), config)?;
    let keep = pairs.values.iter().take_while(|&&l| l <= cutoff).count();
    if let Some((i, r)) = pairs.residuals[..keep].iter().enumerate().find(|(_, &r)| r > config.eigen_tolerance) {
        return Err(Error::NotConverged {
            iterations: i,
            best_residual: *r,
        });
    }
    Ok(CountBelow {
        count: keep,
        cutoff,
        eigenvalues: pairs.values[..keep].to_vec(),
        residuals: pairs.residuals[..keep].to_vec(),
        dense: pairs.dense,
    })
}

fn conjugate_gradient<T: SymmetricOperator + ?Sized>(op: &T, rhs: &DVector<f64>, config: &SolverConfig) -> Result<DVector<f64>> {
    let n = op.dim();
    let bnorm = rhs.norm();
    let mut x = DVector::zeros(n);
    if bnorm == 0.0 {
        return Ok(x);
    }
    let target = config.linear_tolerance * bnorm;
    let mut r = rhs.clone();
    let mut p = r.clone();
    let mut rr = r.dot(&r);
    for _ in 0..config.max_cg_iterations {
        let ap = op.apply_vec(&p);
        let pap = p.dot(&ap);
        if pap <= 0.0 {
            return Err(Error::Indefinite {
                min_eigenvalue: pap / p.norm_squared(),
            });
        }
        let alpha = rr / pap;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        let rr_new = r.dot(&r);
        if rr_new.sqrt() <= target {
            // recheck against the true residual
            let true_r = (rhs - op.apply_vec(&x)).norm();
            if true_r <= target {
                return Ok(x);
            }
            r = rhs - op.apply_vec(&x);
            rr = r.dot(&r);
            p = r.clone();
            continue;
        }
        p = &r + &p * (rr_new / rr);
        rr = rr_new;
    }
    Err(Error::NotConverged {
        iterations: config.max_cg_iterations,
        best_residual: (rhs - op.apply_vec(&x)).norm() / bnorm,
    })
}

/// Solves `(op - shift) x = rhs` for a symmetric positive definite `op - shift`.
pub fn resolvent_apply<T: SymmetricOperator + ?Sized>(op: &T, shift: f64, rhs: &DVector<f64>, config: &SolverConfig) -> Result<DVector<f64>> {
    let n = op.dim();
    if rhs.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: rhs.len(),
        });
    }
    let shifted = Shifted { op, shift };
    if n <= config.dense_threshold {
        let mut m = DMatrix::zeros(n, n);
        let mut e = DVector::zeros(n);
        for c in 0..n {
            e[c] = 1.0;
            m.set_column(c, &shifted.apply_vec(&e));
            e[c] = 0.0;
        }
        return DenseFactor::new(m, config)?.solve(rhs);
    }
    let min = lowest_eigenpairs(&shifted, 1, config)?.values[0];
    if min <= 0.0 {
        return Err(Error::Indefinite { min_eigenvalue: min });
    }
    conjugate_gradient(&shifted, rhs, config)
}

enum DenseFactor {
    Cholesky(Cholesky<f64, Dyn>),
    Lu(LU<f64, Dyn, Dyn>),
}

impl DenseFactor {
    fn new(m: DMatrix<f64>, config: &SolverConfig) -> Result<Self> {
        match Cholesky::new(m.clone()) {
            Some(c) => Ok(DenseFactor::Cholesky(c)),
            None if config.allow_indefinite => {
                let lu = m.lu();
                if !lu.is_invertible() {
                    return Err(Error::Indefinite { min_eigenvalue: 0.0 });
                }
                Ok(DenseFactor::Lu(lu))
            }
            None => Err(Error::Indefinite {
                min_eigenvalue: dense_eigenvalues(&m)[0],
            }),
        }
    }

    fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            DenseFactor::Cholesky(c) => Ok(c.solve(rhs)),
            DenseFactor::Lu(lu) => lu.solve(rhs).ok_or(Error::Indefinite { min_eigenvalue: 0.0 }),
        }
    }
}

enum Backend {
    Dense(DenseFactor),
    Iterative(SparseOperator),
}

/// Prepared inverse of a restricted operator acting on the trailing block
/// `[start, full_dim)` of the Fock basis. Inputs are projected onto the
/// block, outputs are zero-padded.
pub struct Resolvent {
    start: usize,
    full_dim: usize,
    backend: Backend,
    config: SolverConfig,
}

impl Resolvent {
    /// `block` is the already shifted restricted operator.
    pub fn new(block: SparseOperator, start: usize, full_dim: usize, config: &SolverConfig) -> Result<Self> {
        if block.dim() + start != full_dim {
            return Err(Error::DimensionMismatch {
                expected: full_dim - start,
                actual: block.dim(),
            });
        }
        let backend = if block.dim() <= config.dense_threshold {
            Backend::Dense(DenseFactor::new(block.to_dense(), config)?)
        } else {
            let min = lowest_eigenpairs(&block, 1, config)?.values[0];
            if min <= 0.0 {
                return Err(Error::Indefinite { min_eigenvalue: min });
            }
            Backend::Iterative(block)
        };
        Ok(Self {
            start,
            full_dim,
            backend,
            config: config.clone(),
        })
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn solve_block(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.backend {
            Backend::Dense(f) => f.solve(rhs),
            Backend::Iterative(op) => conjugate_gradient(op, rhs, &self.config),
        }
    }

    /// Full-space application `R Π x`.
    pub fn apply(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let block = rhs.rows(self.start, self.full_dim - self.start).into_owned();
        let x = self.solve_block(&block)?;
        let mut out = DVector::zeros(self.full_dim);
        out.rows_mut(self.start, self.full_dim - self.start).copy_from(&x);
        Ok(out)
    }
}

/// Spectral summary of one Hamiltonian instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralResult {
    pub dimension: usize,
    pub ground_energy: f64,
    pub ground_residual: f64,
    pub vacuum_component: f64,
    #[serde(skip)]
    pub ground_vector: Vec<f64>,
    pub threshold: f64,
    pub buffer: f64,
    /// Eigenvalues in `(-inf, E_0 + 1 - buffer]`, ascending.
    pub eigenvalues: Vec<f64>,
    pub residuals: Vec<f64>,
    pub nu1: f64,
    pub nu2: Option<f64>,
    pub method: String,
    pub assumptions: Assumptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Assumptions {
    pub e0_above_minus_one: bool,
    pub nu2_positive: Option<bool>,
}

impl SpectralResult {
    pub fn compute(h: &SparseOperator, basis: &FockBasis, buffer: f64, config: &SolverConfig) -> Result<Self> {
        let gs = ground_energy(h, config)?;
        let threshold = gs.energy + 1.0;
        let below = count_below(h, threshold, buffer, config)?;
        let nu1 = nu(h, gs.energy, 1, basis, config)?;
        let nu2 = if basis.nmax() >= 2 {
            Some(nu(h, gs.energy, 2, basis, config)?)
        } else {
            None
        };
        Ok(Self {
            dimension: h.dim(),
            ground_energy: gs.energy,
            ground_residual: gs.residual,
            vacuum_component: gs.vacuum_component,
            ground_vector: gs.vector.as_slice().to_vec(),
            threshold,
            buffer,
            eigenvalues: below.eigenvalues,
            residuals: below.residuals,
            nu1,
            nu2,
            method: if below.dense { "dense" } else { "krylov" }.to_string(),
            assumptions: Assumptions {
                e0_above_minus_one: gs.energy > -1.0,
                nu2_positive: nu2.map(|x| x > 0.0),
            },
        })
    }

    pub fn count(&self) -> usize {
        self.eigenvalues.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{assemble_hamiltonian, FockBasis};
    use crate::grid::{FormFactor, MomentumGrid, Profile};

    fn instance(k: f64, h: f64, nmax: usize, profile: Profile, g: f64) -> (MomentumGrid, FockBasis, SparseOperator) {
        let grid = MomentumGrid::new(1, k, h).unwrap();
        let form = FormFactor::sample(&grid, profile, g).unwrap();
        let basis = FockBasis::new(grid.len(), nmax).unwrap();
        let ham = assemble_hamiltonian(&basis, &grid, &form, &[0.0]).unwrap();
        (grid, basis, ham)
    }

    fn krylov() -> SolverConfig {
        SolverConfig {
            dense_threshold: 1,
            ..SolverConfig::default()
        }
    }

    #[test]
    fn diagonal_examples() {
        let m = SparseOperator::diagonal(&[3.0, 1.0, 2.0]);
        let p = lowest_eigenpairs(&m, 2, &SolverConfig::default()).unwrap();
        assert_eq!(p.values, vec![1.0, 2.0]);
        let c = count_below(&SparseOperator::diagonal(&[0.0, 0.5, 2.0]), 1.0, 0.1, &SolverConfig::default()).unwrap();
        assert_eq!(c.count, 2);
        assert!(lowest_eigenpairs(&m, 0, &SolverConfig::default()).is_err());
    }

    #[test]
    fn resolvent_examples() {
        let id = SparseOperator::diagonal(&[1.0, 1.0, 1.0]);
        let r = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        for cfg in [SolverConfig::default(), krylov()] {
            let x = resolvent_apply(&id, 0.0, &r, &cfg).unwrap();
            assert!((x - &r).amax() < 1e-12);
            let d = SparseOperator::diagonal(&[2.0, 4.0]);
            let x = resolvent_apply(&d, 0.0, &DVector::from_vec(vec![1.0, 1.0]), &cfg).unwrap();
            assert!((x[0] - 0.5).abs() < 1e-12 && (x[1] - 0.25).abs() < 1e-12);
            let err = resolvent_apply(&d, 3.0, &DVector::from_vec(vec![1.0, 1.0]), &cfg);
            assert!(matches!(err, Err(Error::Indefinite { .. })));
        }
    }

    #[test]
    fn free_model() {
        let (grid, basis, h) = instance(2.0, 1.0, 3, Profile::Gaussian, 0.0);
        let cfg = SolverConfig::default();
        let gs = ground_energy(&h, &cfg).unwrap();
        assert_eq!(gs.energy, 0.0);
        assert!((gs.vacuum_component - 1.0).abs() < 1e-14);
        assert_eq!(nu(&h, 0.0, 2, &basis, &cfg).unwrap(), 1.0);
        assert_eq!(nu(&h, 0.0, 1, &basis, &cfg).unwrap(), 1.0);
        let c = count_below(&h, 1.0, grid.spacing().powi(2) / 2.0, &cfg).unwrap();
        assert_eq!(c.count, 1);

        let (_, basis, h) = instance(2.0, 0.5, 3, Profile::Gaussian, 0.0);
        assert_eq!(nu(&h, 0.0, 1, &basis, &cfg).unwrap(), 0.25);
    }

    #[test]
    fn krylov_matches_dense_on_small_instances() {
        for (k, sp, nmax, g) in [(1.0, 1.0, 2, 0.1), (2.0, 0.5, 2, 0.2), (1.0, 0.5, 4, 0.3)] {
            let (_, _, h) = instance(k, sp, nmax, Profile::Constant, g);
            let dense = dense_eigenvalues(&h.to_dense());
            let count = 5.min(h.dim());
            let kr = lowest_eigenpairs(&h, count, &krylov()).unwrap();
            assert!(!kr.dense);
            for (a, b) in kr.values.iter().zip(&dense) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
            assert!(kr.residuals.iter().all(|&r| r <= 1e-10));
        }
    }

    #[test]
    fn ground_energy_small_instance_matches_dense() {
        let (_, basis, h) = instance(1.0, 1.0, 2, Profile::Constant, 0.1);
        assert_eq!(basis.dim(), 6);
        let oracle = dense_eigenvalues(&h.to_dense())[0];
        let gs = ground_energy(&h, &krylov()).unwrap();
        assert!((gs.energy - oracle).abs() < 1e-10);
        assert!(gs.energy <= 0.0);
        assert!(gs.vacuum_component.abs() > 0.5);
    }

    #[test]
    fn ground_energy_is_monotone_in_coupling() {
        let mut last = f64::INFINITY;
        for g in [0.0, 0.05, 0.1, 0.2] {
            let (_, _, h) = instance(2.0, 0.5, 3, Profile::Gaussian, g);
            let e = ground_energy(&h, &SolverConfig::default()).unwrap().energy;
            assert!(e <= last + 1e-14);
            assert!(e <= 0.0);
            last = e;
        }
    }

    #[test]
    fn degenerate_levels_are_resolved_by_locking() {
        // free one-boson levels at ±k are degenerate pairs
        let (_, _, h) = instance(2.0, 1.0, 2, Profile::Gaussian, 0.0);
        let kr = lowest_eigenpairs(&h, 5, &krylov()).unwrap();
        let dense = dense_eigenvalues(&h.to_dense());
        for (a, b) in kr.values.iter().zip(&dense) {
            assert!((a - b).abs() < 1e-9, "{:?} vs {:?}", kr.values, &dense[..5]);
        }
    }

    #[test]
    fn nu2_positive_at_small_coupling() {
        let (_, basis, h) = instance(2.0, 0.5, 3, Profile::Gaussian, 0.1);
        let cfg = SolverConfig::default();
        let e0 = ground_energy(&h, &cfg).unwrap().energy;
        let nu2 = nu(&h, e0, 2, &basis, &cfg).unwrap();
        let block = h.trailing_dense(basis.sector_start(2));
        let oracle = dense_eigenvalues(&block)[0] - 1.0 - e0;
        assert!((nu2 - oracle).abs() < 1e-12);
        assert!(nu2 > 0.0);
        let nu2_k = nu(&h, e0, 2, &basis, &krylov()).unwrap();
        assert!((nu2_k - oracle).abs() < 1e-9);
    }

    #[test]
    fn count_below_small_coupling_has_only_ground_state() {
        let (grid, _, h) = instance(2.0, 0.5, 3, Profile::Gaussian, 0.1);
        let cfg = SolverConfig::default();
        let e0 = ground_energy(&h, &cfg).unwrap().energy;
        let buffer = cfg.edge_buffer(grid.spacing());
        let c = count_below(&h, e0 + 1.0, buffer, &cfg).unwrap();
        assert_eq!(c.count, 1);
        let kc = count_below(&h, e0 + 1.0, buffer, &krylov()).unwrap();
        assert_eq!(kc.count, 1);
    }

    #[test]
    fn resolvent_block_agrees_with_dense_inverse() {
        let (_, basis, h) = instance(1.0, 1.0, 2, Profile::Constant, 0.1);
        let cfg = SolverConfig::default();
        let e0 = ground_energy(&h, &cfg).unwrap().energy;
        let start = basis.sector_start(1);
        let block = h.trailing_block(start);
        let rhs = DVector::from_fn(block.dim(), |i, _| if i < 2 { 0.1 } else { 0.0 });
        let x = resolvent_apply(&block, e0, &rhs, &cfg).unwrap();
        let mut dense = h.trailing_dense(start);
        for i in 0..dense.nrows() {
            dense[(i, i)] -= e0;
        }
        let oracle = dense.try_inverse().unwrap() * &rhs;
        assert!((x - &oracle).amax() < 1e-13);
        let xk = resolvent_apply(&block, e0, &rhs, &krylov()).unwrap();
        assert!((xk - oracle).amax() < 1e-11);
    }
}
