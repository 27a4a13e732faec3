//! Two-step Schur reduction of `H` onto the vacuum and one-boson sectors.
//!
//! With `E_0` the ground energy, the restricted resolvents are
//!
//! * `Y_k = [Π^{≥1}((P+k)^2 + Φ(v) + N - E_0)Π^{≥1}]^{-1}`,
//! * `Z_k = [(P+k)^2 + Φ(v) + N + 1 - E_0]^{-1}`,
//! * `X^(ε) = [Π^{≥2}(H - E_0 - 1 + ε)Π^{≥2}]^{-1}`,
//!
//! and an eigenvalue `E_0 + 1 - ε` of `H` corresponds to a zero eigenvalue of
//! the one-boson operator
//! `O^(ε) = ε + k^2 - E_0 - D^(ε) + (1 + E_0 - ε)^{-1} |v><v|`,
//! with `D^(ε)(k,l) = <v| a_k X^(ε) a_l^† |v>`. The kernel
//! `C(k,l) = c_0 + ψ_k + ψ_l + F(k,l)` splits `O^(0)` into the Birman–Schwinger
//! form `|k| (1 + A - |φ><φ|) |k|` plus a dropped positive rank-one term.
//!
//! A nonzero total momentum `ξ` replaces `P` by `P - ξ` throughout.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{assemble_hamiltonian, field_operator, shifted_hamiltonian, FockBasis};
use crate::grid::{FormFactor, MomentumGrid};
use crate::par;
use crate::sparse::SparseOperator;
use crate::spectral::{dense_eigen, dense_eigenvalues, ground_energy, GroundState, Resolvent, SolverConfig};

/// Which trailing sectors a resolvent lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Restriction {
    Full,
    AtLeastOne,
    AtLeastTwo,
}

impl Restriction {
    pub fn sector(self) -> usize {
        match self {
            Restriction::Full => 0,
            Restriction::AtLeastOne => 1,
            Restriction::AtLeastTwo => 2,
        }
    }
}

/// Cached inverse of `Π((P - ξ + q)^2 + Φ(v) + N + constant)Π`.
pub struct ResolventHandle {
    pub restriction: Restriction,
    pub momentum_shift: Vec<f64>,
    pub constant: f64,
    resolvent: Resolvent,
}

impl ResolventHandle {
    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.resolvent.apply(x)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct HandleKey {
    restriction: Restriction,
    shift_bits: Vec<u64>,
    constant_bits: u64,
}

/// One discretized instance together with its ground state and a resolvent cache.
pub struct Model {
    pub grid: MomentumGrid,
    pub form: FormFactor,
    pub basis: FockBasis,
    pub xi: Vec<f64>,
    pub hamiltonian: SparseOperator,
    pub ground: GroundState,
    config: SolverConfig,
    /// `P - ξ`, row-major `dim x d`.
    momenta: Vec<f64>,
    field: SparseOperator,
    cache: Mutex<HashMap<HandleKey, Arc<ResolventHandle>>>,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("modes", &self.grid.len())
            .field("nmax", &self.basis.nmax())
            .field("dim", &self.basis.dim())
            .field("e0", &self.ground.energy)
            .finish()
    }
}

impl Model {
    pub fn new(grid: MomentumGrid, form: FormFactor, nmax: usize, xi: Vec<f64>, config: SolverConfig) -> Result<Self> {
        let basis = FockBasis::new(grid.len(), nmax)?;
        Self::with_basis(grid, form, basis, xi, config)
    }

    pub fn with_basis(grid: MomentumGrid, form: FormFactor, basis: FockBasis, xi: Vec<f64>, config: SolverConfig) -> Result<Self> {
        config.validate()?;
        if xi.len() != grid.dimension() {
            return Err(Error::DimensionMismatch {
                expected: grid.dimension(),
                actual: xi.len(),
            });
        }
        let hamiltonian = assemble_hamiltonian(&basis, &grid, &form, &xi)?;
        let ground = ground_energy(&hamiltonian, &config)?;
        let d = grid.dimension();
        let mut momenta = basis.momenta(&grid);
        for p in momenta.chunks_exact_mut(d) {
            for (pa, xa) in p.iter_mut().zip(&xi) {
                *pa -= xa;
            }
        }
        let field = field_operator(&basis, &form);
        Ok(Self {
            grid,
            form,
            basis,
            xi,
            hamiltonian,
            ground,
            config,
            momenta,
            field,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn e0(&self) -> f64 {
        self.ground.energy
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn modes(&self) -> usize {
        self.grid.len()
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn origin(&self) -> Vec<f64> {
        vec![0.0; self.grid.dimension()]
    }

    pub fn vacuum(&self) -> DVector<f64> {
        let mut x = DVector::zeros(self.dim());
        x[0] = 1.0;
        x
    }

    /// `|v> = a^†(v) Ω`.
    pub fn field_vector(&self) -> DVector<f64> {
        let mut x = DVector::zeros(self.dim());
        for j in 0..self.modes() {
            x[self.basis.one_boson(j)] = self.form.get(j);
        }
        x
    }

    /// Sector-1 amplitudes of a Fock vector, in mode order.
    pub fn one_boson_part(&self, x: &DVector<f64>) -> DVector<f64> {
        x.rows(1, self.modes()).into_owned()
    }

    /// Embeds one-boson amplitudes into the Fock space.
    pub fn embed_one_boson(&self, amplitudes: &DVector<f64>) -> DVector<f64> {
        let mut x = DVector::zeros(self.dim());
        x.rows_mut(1, self.modes()).copy_from(amplitudes);
        x
    }

    /// Zeroes every component outside sectors `range`.
    pub fn project_sectors(&self, x: &DVector<f64>, sectors: std::ops::RangeInclusive<usize>) -> DVector<f64> {
        let lo = self.basis.sector_start(*sectors.start());
        let hi = if *sectors.end() >= self.basis.nmax() {
            self.dim()
        } else {
            self.basis.sector_start(sectors.end() + 1)
        };
        DVector::from_fn(self.dim(), |i, _| if (lo..hi).contains(&i) { x[i] } else { 0.0 })
    }

    /// `a_j^† x`; the top sector is annihilated.
    pub fn create(&self, j: usize, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        for i in 0..self.dim() {
            if x[i] == 0.0 {
                continue;
            }
            if let Some(t) = self.basis.raised(i, j) {
                out[t] += (self.basis.state(i)[j] as f64 + 1.0).sqrt() * x[i];
            }
        }
        out
    }

    /// `a_j x`.
    pub fn annihilate(&self, j: usize, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        for i in 0..self.dim() {
            if x[i] == 0.0 {
                continue;
            }
            if let Some(t) = self.basis.lowered(i, j) {
                out[t] += (self.basis.state(i)[j] as f64).sqrt() * x[i];
            }
        }
        out
    }

    fn field_part(&self, x: &DVector<f64>, raising: bool) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        for (r, c, val) in self.field.triplets() {
            if (self.basis.total(r) > self.basis.total(c)) == raising {
                out[r] += val * x[c];
            }
        }
        out
    }

    /// `a^†(v) x`.
    pub fn create_field(&self, x: &DVector<f64>) -> DVector<f64> {
        self.field_part(x, true)
    }

    /// `a(v) x`.
    pub fn annihilate_field(&self, x: &DVector<f64>) -> DVector<f64> {
        self.field_part(x, false)
    }

    /// Elementwise `|P - ξ|` diagonal.
    pub fn momentum_magnitude(&self) -> Vec<f64> {
        self.momenta
            .chunks_exact(self.grid.dimension())
            .map(|p| p.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect()
    }

    /// Diagonal of `(P - ξ + q)_i`.
    pub fn momentum_component(&self, i: usize, q: &[f64]) -> Vec<f64> {
        let d = self.grid.dimension();
        self.momenta.chunks_exact(d).map(|p| p[i] + q[i]).collect()
    }

    fn shift_vector(&self, q: &[f64]) -> Vec<f64> {
        q.iter().zip(&self.xi).map(|(a, b)| a - b).collect()
    }

    /// The restricted operator `Π((P - ξ + q)^2 + Φ + N + constant)Π` as a trailing block.
    pub fn restricted_operator(&self, restriction: Restriction, q: &[f64], constant: f64) -> Result<SparseOperator> {
        if q.len() != self.grid.dimension() {
            return Err(Error::DimensionMismatch {
                expected: self.grid.dimension(),
                actual: q.len(),
            });
        }
        let sector = restriction.sector();
        if sector > self.basis.nmax() {
            return Err(Error::SectorOutOfRange {
                n: sector,
                nmax: self.basis.nmax(),
            });
        }
        let full = shifted_hamiltonian(&self.basis, &self.grid, &self.form, &self.shift_vector(q), constant)?;
        Ok(full.trailing_block(self.basis.sector_start(sector)))
    }

    /// Full-space application of the restricted operator (zero outside its block).
    pub fn restricted_apply(&self, restriction: Restriction, q: &[f64], constant: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        let block = self.restricted_operator(restriction, q, constant)?;
        let start = self.basis.sector_start(restriction.sector());
        let n = self.dim() - start;
        let y = block.apply(&x.rows(start, n).into_owned());
        let mut out = DVector::zeros(self.dim());
        out.rows_mut(start, n).copy_from(&y);
        Ok(out)
    }

    pub fn resolvent(&self, restriction: Restriction, q: &[f64], constant: f64) -> Result<Arc<ResolventHandle>> {
        self.resolvent_with(restriction, q, constant, &self.config)
    }

    fn resolvent_with(&self, restriction: Restriction, q: &[f64], constant: f64, config: &SolverConfig) -> Result<Arc<ResolventHandle>> {
        let key = HandleKey {
            restriction,
            shift_bits: q.iter().map(|x| (x + 0.0).to_bits()).collect(),
            constant_bits: constant.to_bits(),
        };
        if let Some(h) = self.cache.lock().expect("resolvent cache poisoned").get(&key) {
            return Ok(Arc::clone(h));
        }
        let block = self.restricted_operator(restriction, q, constant)?;
        let start = self.basis.sector_start(restriction.sector());
        let handle = Arc::new(ResolventHandle {
            restriction,
            momentum_shift: q.to_vec(),
            constant,
            resolvent: Resolvent::new(block, start, self.dim(), config)?,
        });
        let mut cache = self.cache.lock().expect("resolvent cache poisoned");
        Ok(Arc::clone(cache.entry(key).or_insert(handle)))
    }

    pub fn y(&self, q: &[f64]) -> Result<Arc<ResolventHandle>> {
        self.resolvent(Restriction::AtLeastOne, q, -self.e0())
    }

    pub fn z(&self, q: &[f64]) -> Result<Arc<ResolventHandle>> {
        self.resolvent(Restriction::Full, q, 1.0 - self.e0())
    }

    /// `X^(ε)`; `ε = 0` gives `X`.
    pub fn x(&self, epsilon: f64) -> Result<Arc<ResolventHandle>> {
        self.resolvent(Restriction::AtLeastTwo, &self.origin(), -self.e0() - 1.0 + epsilon)
    }

    /// `<v| [Π^{≥1}(H - 1 - E_0 + ε)Π^{≥1}]^{-1} |v>`.
    pub fn vacuum_schur(&self, epsilon: f64) -> Result<f64> {
        let v = self.field_vector();
        let r = self.resolvent(Restriction::AtLeastOne, &self.origin(), -1.0 - self.e0() + epsilon)?;
        Ok(v.dot(&r.apply(&v)?))
    }

    /// `E_q = -<v|Y_q|v>` at any momentum `q`.
    pub fn energy_curve(&self, q: &[f64]) -> Result<f64> {
        let v = self.field_vector();
        Ok(-v.dot(&self.y(q)?.apply(&v)?))
    }

    /// `∂_i E_q = 2 <v|Y_q (P_i + q_i) Y_q|v>`.
    pub fn energy_gradient(&self, q: &[f64]) -> Result<Vec<f64>> {
        let y = self.y(q)?.apply(&self.field_vector())?;
        Ok((0..self.grid.dimension())
            .map(|i| {
                let p = self.momentum_component(i, q);
                2.0 * y.iter().zip(&p).map(|(a, b)| a * a * b).sum::<f64>()
            })
            .collect())
    }

    /// `∂_i ∂_j E_q = 2 δ_ij <v|Y_q^2|v> - 8 <v|Y_q (P_i+q_i) Y_q (P_j+q_j) Y_q|v>`; both orderings of the
    /// cross term contribute equally.
    pub fn energy_hessian(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        let d = self.grid.dimension();
        let yq = self.y(q)?;
        let y = yq.apply(&self.field_vector())?;
        let py: Vec<DVector<f64>> = (0..d)
            .map(|i| {
                let p = self.momentum_component(i, q);
                DVector::from_fn(self.dim(), |s, _| p[s] * y[s])
            })
            .collect();
        let ypy: Vec<DVector<f64>> = py.iter().map(|x| yq.apply(x)).collect::<Result<_>>()?;
        let yy = y.dot(&y);
        Ok(DMatrix::from_fn(d, d, |i, j| {
            let diag = if i == j { 2.0 * yy } else { 0.0 };
            diag - 8.0 * py[i].dot(&ypy[j])
        }))
    }

    /// `a_l^† |v>` for every mode.
    fn created_field_vectors(&self) -> Vec<DVector<f64>> {
        let v = self.field_vector();
        (0..self.modes()).map(|l| self.create(l, &v)).collect()
    }

    /// `D^(ε)(k,l) = <v| a_k X^(ε) a_l^† |v>`.
    pub fn d_kernel(&self, epsilon: f64) -> Result<DMatrix<f64>> {
        self.d_kernel_with(epsilon, &self.config)
    }

    fn d_kernel_with(&self, epsilon: f64, config: &SolverConfig) -> Result<DMatrix<f64>> {
        let m = self.modes();
        if self.basis.nmax() < 2 {
            return Ok(DMatrix::zeros(m, m));
        }
        let x = self.resolvent_with(Restriction::AtLeastTwo, &self.origin(), -self.e0() - 1.0 + epsilon, config)?;
        let u = self.created_field_vectors();
        let w: Vec<DVector<f64>> = par::map((0..m).collect(), |l| x.apply(&u[l])).into_iter().collect::<Result<_>>()?;
        Ok(DMatrix::from_fn(m, m, |k, l| u[k].dot(&w[l])))
    }

    /// `C(k,l) = 1/(1+E_0) - <Ω|(1 - a(v)Y_k) Z_{k+l} (1 - Y_l a^†(v))|Ω> - <v|Y_k X Y_l|v>`.
    pub fn c_kernel(&self, k: &[f64], l: &[f64]) -> Result<f64> {
        let v = self.field_vector();
        let omega = self.vacuum();
        let yk = self.y(k)?.apply(&v)?;
        let yl = self.y(l)?.apply(&v)?;
        let kl: Vec<f64> = k.iter().zip(l).map(|(a, b)| a + b).collect();
        let zl = self.z(&kl)?.apply(&(&omega - &yl))?;
        let xl = self.x(0.0)?.apply(&yl)?;
        Ok(1.0 / (1.0 + self.e0()) - (&omega - &yk).dot(&zl) - yk.dot(&xl))
    }

    /// `<v|G^2 P^2|v>` with `G = (P^2 + 1 - E_0)^{-1}`: the leading order of `c_0`.
    pub fn c0_leading_order(&self) -> f64 {
        let p = self.momentum_magnitude();
        (0..self.modes())
            .map(|j| {
                let s = self.basis.one_boson(j);
                let p2 = p[s] * p[s];
                let g = 1.0 / (p2 + 1.0 - self.e0());
                self.form.get(j).powi(2) * g * g * p2
            })
            .sum()
    }

    /// `O^(ε)` on the one-boson space.
    pub fn one_particle_operator(&self, epsilon: f64) -> Result<DMatrix<f64>> {
        let d = self.d_kernel(epsilon)?;
        Ok(self.one_particle_from(epsilon, &d))
    }

    fn one_particle_from(&self, epsilon: f64, d: &DMatrix<f64>) -> DMatrix<f64> {
        let m = self.modes();
        let v = &self.form.amplitudes;
        let vac = 1.0 / (1.0 + self.e0() - epsilon);
        DMatrix::from_fn(m, m, |k, l| {
            let s = self.basis.one_boson(k);
            let diag = if k == l {
                self.hamiltonian.get(s, s) - self.e0() - 1.0 + epsilon
            } else {
                0.0
            };
            diag - d[(k, l)] + vac * v[k] * v[l]
        })
    }

    /// Builds every reduction object at spectral parameter `ε`.
    pub fn build_bundle(&self, epsilon: f64) -> Result<ReductionBundle> {
        if epsilon.is_nan() || epsilon < 0.0 {
            return Err(Error::InvalidArgument(format!("epsilon {epsilon} must be >= 0")));
        }
        let m = self.modes();
        let e0 = self.e0();
        let v = self.field_vector();
        let omega = self.vacuum();
        let origin = self.origin();
        let modes: Vec<Vec<f64>> = self.grid.modes().map(<[f64]>::to_vec).collect();

        // Y_k |v> for every mode, then for k = 0
        let ys: Vec<DVector<f64>> = par::map(modes.clone(), |k| self.y(&k).and_then(|h| h.apply(&v)))
            .into_iter()
            .collect::<Result<_>>()?;
        let y0 = self.y(&origin)?.apply(&v)?;
        let x = self.x(0.0)?;
        let xs: Vec<DVector<f64>> = par::map(ys.clone(), |y| x.apply(&y)).into_iter().collect::<Result<_>>()?;
        let x0 = x.apply(&y0)?;
        let energies: Vec<f64> = ys.iter().map(|y| -v.dot(y)).collect();
        let schur_e0 = -v.dot(&y0);

        let inv = 1.0 / (1.0 + e0);
        let right0 = &omega - &y0;

        // k = 0 column, stored once
        let z0 = self.z(&origin)?;
        let zr0 = z0.apply(&right0)?;
        let c0 = inv - right0.dot(&zr0) - y0.dot(&x0);
        let lambda0 = right0.dot(&zr0) + y0.dot(&x0);
        let origin_col: Vec<(f64, f64)> = par::map((0..m).collect(), |j| {
            let z = self.z(&modes[j])?.apply(&right0)?;
            let left = &omega - &ys[j];
            let c = inv - left.dot(&z) - ys[j].dot(&x0);
            let lam = left.dot(&z) + ys[j].dot(&x0);
            Ok((c, lam))
        })
        .into_iter()
        .collect::<Result<_>>()?;
        let c_origin: Vec<f64> = origin_col.iter().map(|p| p.0).collect();
        let lambda: Vec<f64> = origin_col.iter().map(|p| p.1).collect();

        let pairs: Vec<(usize, usize)> = (0..m).flat_map(|k| (0..m).map(move |l| (k, l))).collect();
        let entries: Vec<f64> = par::map(pairs, |(k, l)| {
            let kl: Vec<f64> = modes[k].iter().zip(&modes[l]).map(|(a, b)| a + b).collect();
            let z = self.z(&kl)?.apply(&(&omega - &ys[l]))?;
            Ok(inv - (&omega - &ys[k]).dot(&z) - ys[k].dot(&xs[l]))
        })
        .into_iter()
        .collect::<Result<_>>()?;
        let raw_c = DMatrix::from_row_slice(m, m, &entries);
        let c_asymmetry = (&raw_c - raw_c.transpose()).amax();
        let c_kernel = (&raw_c + raw_c.transpose()) * 0.5;

        let psi: Vec<f64> = c_origin.iter().map(|c| c - c0).collect();
        let f_kernel = DMatrix::from_fn(m, m, |k, l| c_kernel[(k, l)] - c0 - psi[k] - psi[l]);

        let d_kernel = self.d_kernel(epsilon)?;
        let d_zero = if epsilon == 0.0 { d_kernel.clone() } else { self.d_kernel(0.0)? };
        let one_particle = self.one_particle_from(epsilon, &d_kernel);
        let one_particle_zero = self.one_particle_from(0.0, &d_zero);

        let amps = &self.form.amplitudes;
        let norms: Vec<f64> = (0..m).map(|j| self.grid.norm(j)).collect();
        let (branch, phi, a, s) = if c0 > 0.0 {
            let sq = c0.sqrt();
            let phi = DVector::from_fn(m, |j, _| amps[j] * psi[j] / (norms[j] * sq));
            let a = DMatrix::from_fn(m, m, |k, l| {
                let diag = if k == l { (energies[k] - e0) / (norms[k] * norms[k]) } else { 0.0 };
                diag + amps[k] / norms[k] * f_kernel[(k, l)] * amps[l] / norms[l]
            });
            let s = DMatrix::identity(m, m) + &a - &phi * phi.transpose();
            (Branch::BirmanSchwinger, Some(phi), Some(a), Some(s))
        } else {
            (Branch::Perturbative, None, None, None)
        };

        Ok(ReductionBundle {
            epsilon,
            e0,
            schur_e0,
            energies,
            d_kernel,
            d_zero,
            c_kernel,
            c_asymmetry,
            c_origin,
            c0,
            psi,
            f_kernel,
            lambda,
            lambda0,
            branch,
            phi,
            a,
            s,
            one_particle,
            one_particle_zero,
            y_origin: y0,
        })
    }

    /// Decides whether `E_0 + 1 - ε` is an eigenvalue via the spectrum of `O^(ε)`.
    pub fn excited_eigenvalue_test(&self, epsilon: f64, nu1: f64) -> Result<ExcitedVerdict> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::InvalidArgument(format!("epsilon {epsilon} outside (0, 1]")));
        }
        let o = self.one_particle_operator(epsilon)?;
        let vals = dense_eigenvalues(&o);
        let nearest = vals.iter().copied().min_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(f64::NAN);
        Ok(ExcitedVerdict {
            epsilon,
            energy: self.e0() + 1.0 - epsilon,
            smallest_eigenvalue: vals[0],
            nearest_to_zero: nearest,
            eigenvalue_exists: nearest.abs() <= ZERO_TOLERANCE,
            nu1_plus_epsilon: nu1 + epsilon,
            vacuum_schur_excludes: nu1 + epsilon > 0.0 && epsilon < 1.0,
        })
    }

    /// Matches eigenvalues of `H` in `(E_0, E_0 + 1 - buffer)` with zeros of
    /// `ε -> spec O^(ε)` on `(buffer, 1)`. Dense only.
    pub fn schur_correspondence(&self, buffer: f64, scan_points: usize) -> Result<SchurCorrespondence> {
        if self.dim() > self.config.dense_threshold.max(1) {
            return Err(Error::CapExceeded {
                what: "dense Schur check dimension",
                actual: self.dim(),
                cap: self.config.dense_threshold,
            });
        }
        if self.basis.nmax() < 2 {
            return Err(Error::InvalidArgument("Schur correspondence needs nmax >= 2".into()));
        }
        let e0 = self.e0();
        let spectrum = dense_eigenvalues(&self.hamiltonian.to_dense());
        let gap = 1e-9_f64.max(10.0 * self.config.eigen_tolerance);
        let window: Vec<f64> = spectrum
            .iter()
            .copied()
            .filter(|&l| l > e0 + gap && l < e0 + 1.0 - buffer)
            .collect();

        // O^(ε) through the eigendecomposition of Π^{≥2} H Π^{≥2}
        let start = self.basis.sector_start(2);
        let (mu, vecs) = dense_eigen(&self.hamiltonian.trailing_dense(start));
        let u = self.created_field_vectors();
        let m = self.modes();
        let b = DMatrix::from_fn(mu.len(), m, |i, l| vecs.column(i).dot(&u[l].rows(start, self.dim() - start)));
        let amps = &self.form.amplitudes;
        let h11: Vec<f64> = (0..m).map(|k| self.hamiltonian.get(1 + k, 1 + k)).collect();
        let operator = |eps: f64| -> DMatrix<f64> {
            let w: Vec<f64> = mu.iter().map(|x| 1.0 / (x - e0 - 1.0 + eps)).collect();
            let vac = 1.0 / (1.0 + e0 - eps);
            DMatrix::from_fn(m, m, |k, l| {
                let d: f64 = (0..mu.len()).map(|i| b[(i, k)] * w[i] * b[(i, l)]).sum();
                let diag = if k == l { h11[k] - e0 - 1.0 + eps } else { 0.0 };
                diag - d + vac * amps[k] * amps[l]
            })
        };
        let negatives = |eps: f64| dense_eigenvalues(&operator(eps)).iter().filter(|&&x| x < 0.0).count() as i64;

        let lo = buffer;
        let hi = 1.0;
        let n = scan_points.max(2);
        let grid: Vec<f64> = (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
        let counts: Vec<i64> = grid.iter().map(|&e| negatives(e)).collect();
        let mut events = Vec::new();
        for w in 0..n {
            refine_events(&negatives, grid[w], grid[w + 1], counts[w], counts[w + 1], &mut events);
        }
        // zeros: the negative count drops as ε increases; poles raise it
        let mut zeros = Vec::new();
        for (eps, delta) in events {
            for _ in 0..delta.max(0) {
                zeros.push(eps);
            }
        }
        // ε -> 1 is the ground state itself; excluded like E_0 on the H side
        zeros.retain(|&eps| eps > lo && eps < hi - gap);
        let mut zero_energies: Vec<f64> = zeros.iter().map(|eps| e0 + 1.0 - eps).collect();
        zero_energies.sort_by(f64::total_cmp);

        // confirm each zero through the resolvent route
        let mut config = self.config.clone();
        config.allow_indefinite = true;
        let mut resolvent_residuals = Vec::new();
        for &eps in &zeros {
            let d = self.d_kernel_with(eps, &config)?;
            let o = self.one_particle_from(eps, &d);
            let nearest = dense_eigenvalues(&o).into_iter().map(f64::abs).fold(f64::INFINITY, f64::min);
            resolvent_residuals.push(nearest);
        }

        let matched = window.len() == zero_energies.len();
        let max_mismatch = if matched {
            window.iter().zip(&zero_energies).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        } else {
            f64::INFINITY
        };
        Ok(SchurCorrespondence {
            buffer,
            hamiltonian_eigenvalues: window,
            zero_energies,
            resolvent_residuals,
            max_mismatch,
        })
    }
}

/// Zero-eigenvalue acceptance for `O^(ε)`.
pub const ZERO_TOLERANCE: f64 = 1e-7;

fn refine_events(f: &dyn Fn(f64) -> i64, a: f64, b: f64, fa: i64, fb: i64, out: &mut Vec<(f64, i64)>) {
    if fa == fb {
        return;
    }
    if b - a < 1e-13 {
        out.push((0.5 * (a + b), fa - fb));
        return;
    }
    let mid = 0.5 * (a + b);
    let fm = f(mid);
    refine_events(f, a, mid, fa, fm, out);
    refine_events(f, mid, b, fm, fb, out);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// `c_0 > 0`: `φ`, `A` and `S` are defined.
    BirmanSchwinger,
    /// `c_0 <= 0`: positivity of `O` must come from smallness of all non-identity terms.
    Perturbative,
}

/// Every derived object of the reduction at one `ε`.
#[derive(Debug, Clone)]
pub struct ReductionBundle {
    pub epsilon: f64,
    pub e0: f64,
    /// `-<v|Y_0|v>`.
    pub schur_e0: f64,
    /// `E_k` per mode.
    pub energies: Vec<f64>,
    /// `D^(ε)`.
    pub d_kernel: DMatrix<f64>,
    /// `D = D^(0)`.
    pub d_zero: DMatrix<f64>,
    /// Symmetrized grid block of `C`.
    pub c_kernel: DMatrix<f64>,
    pub c_asymmetry: f64,
    /// `C(k, 0)` per mode.
    pub c_origin: Vec<f64>,
    pub c0: f64,
    pub psi: Vec<f64>,
    pub f_kernel: DMatrix<f64>,
    pub lambda: Vec<f64>,
    pub lambda0: f64,
    pub branch: Branch,
    pub phi: Option<DVector<f64>>,
    pub a: Option<DMatrix<f64>>,
    pub s: Option<DMatrix<f64>>,
    /// `O^(ε)`.
    pub one_particle: DMatrix<f64>,
    /// `O^(0)`.
    pub one_particle_zero: DMatrix<f64>,
    /// `Y_0 |v>` in the Fock space.
    pub y_origin: DVector<f64>,
}

/// Scalars and per-mode arrays of a bundle; kernels go to binary blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleSummary {
    pub epsilon: f64,
    pub e0: f64,
    pub schur_e0: f64,
    pub c0: f64,
    pub branch: Branch,
    pub energies: Vec<f64>,
    pub c_origin: Vec<f64>,
    pub psi: Vec<f64>,
    pub lambda: Vec<f64>,
    pub lambda0: f64,
    pub phi: Option<Vec<f64>>,
    pub phi_norm: Option<f64>,
    pub a_norm: Option<f64>,
    pub s_min_eigenvalue: Option<f64>,
    pub one_particle_min_eigenvalue: f64,
    pub c_asymmetry: f64,
}

impl ReductionBundle {
    pub fn summary(&self) -> BundleSummary {
        BundleSummary {
            epsilon: self.epsilon,
            e0: self.e0,
            schur_e0: self.schur_e0,
            c0: self.c0,
            branch: self.branch,
            energies: self.energies.clone(),
            c_origin: self.c_origin.clone(),
            psi: self.psi.clone(),
            lambda: self.lambda.clone(),
            lambda0: self.lambda0,
            phi: self.phi.as_ref().map(|p| p.as_slice().to_vec()),
            phi_norm: self.phi.as_ref().map(|p| p.norm()),
            a_norm: self.a_norm(),
            s_min_eigenvalue: self.s.as_ref().map(|s| dense_eigenvalues(&symmetrized(s))[0]),
            one_particle_min_eigenvalue: dense_eigenvalues(&symmetrized(&self.one_particle))[0],
            c_asymmetry: self.c_asymmetry,
        }
    }

    /// Spectral norm of `A`.
    pub fn a_norm(&self) -> Option<f64> {
        self.a.as_ref().map(|a| dense_eigenvalues(&symmetrized(a)).iter().fold(0.0, |m: f64, x| m.max(x.abs())))
    }

    /// `<φ|(1 + A)^{-1}|φ>`, after checking `1 + A > 0`.
    pub fn norm_identity(&self) -> Result<f64> {
        let (phi, a) = self.birman_schwinger()?;
        let one_plus_a = DMatrix::identity(a.nrows(), a.nrows()) + a;
        let x = solve_positive(&one_plus_a, phi)?;
        Ok(phi.dot(&x))
    }

    /// `‖S (1 + A)^{-1} φ‖`.
    pub fn null_vector_residual(&self) -> Result<f64> {
        let (phi, a) = self.birman_schwinger()?;
        let s = self.s.as_ref().expect("S present with φ");
        let one_plus_a = DMatrix::identity(a.nrows(), a.nrows()) + a;
        let x = solve_positive(&one_plus_a, phi)?;
        Ok((s * x).norm())
    }

    fn birman_schwinger(&self) -> Result<(&DVector<f64>, &DMatrix<f64>)> {
        match (&self.phi, &self.a) {
            (Some(p), Some(a)) => Ok((p, a)),
            _ => Err(Error::NonPositiveC0(self.c0)),
        }
    }

    /// `D` rebuilt from `E_k` and `C`: `-δ_kl E_k + v_k v_l (1/(1+E_0) - C(k,l))`.
    pub fn d_from_c(&self, form: &FormFactor) -> DMatrix<f64> {
        let m = self.energies.len();
        let v = &form.amplitudes;
        let inv = 1.0 / (1.0 + self.e0);
        DMatrix::from_fn(m, m, |k, l| {
            let diag = if k == l { -self.energies[k] } else { 0.0 };
            diag + v[k] * v[l] * (inv - self.c_kernel[(k, l)])
        })
    }

    /// Little-endian `u64 rows, u64 cols` followed by row-major `f64` entries.
    pub fn kernel_bytes(m: &DMatrix<f64>) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * m.len());
        out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
        out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                out.extend_from_slice(&m[(r, c)].to_le_bytes());
            }
        }
        out
    }

    /// Named kernel blocks for persistence.
    pub fn kernels(&self) -> Vec<(&'static str, &DMatrix<f64>)> {
        let mut out = vec![
            ("d_kernel", &self.d_kernel),
            ("c_kernel", &self.c_kernel),
            ("f_kernel", &self.f_kernel),
            ("one_particle", &self.one_particle),
        ];
        if let Some(a) = &self.a {
            out.push(("a", a));
        }
        if let Some(s) = &self.s {
            out.push(("s", s));
        }
        out
    }
}

pub(crate) fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn solve_positive(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let sym = symmetrized(m);
    let min = dense_eigenvalues(&sym)[0];
    if min <= 0.0 {
        return Err(Error::Indefinite { min_eigenvalue: min });
    }
    let chol = nalgebra::Cholesky::new(sym).ok_or(Error::Indefinite { min_eigenvalue: min })?;
    Ok(chol.solve(rhs))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExcitedVerdict {
    pub epsilon: f64,
    pub energy: f64,
    pub smallest_eigenvalue: f64,
    pub nearest_to_zero: f64,
    pub eigenvalue_exists: bool,
    pub nu1_plus_epsilon: f64,
    /// `ν_1 + ε > 0`: the vacuum-sector Schur argument already rules out an eigenvalue.
    pub vacuum_schur_excludes: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchurCorrespondence {
    pub buffer: f64,
    pub hamiltonian_eigenvalues: Vec<f64>,
    /// `E_0 + 1 - ε` for each zero `ε` of `spec O^(ε)`, with multiplicity.
    pub zero_energies: Vec<f64>,
    /// `min |spec O^(ε)|` at each zero, recomputed through the resolvent route.
    pub resolvent_residuals: Vec<f64>,
    /// `null` when the counts differ.
    #[serde(with = "crate::float_serde::nullable")]
    pub max_mismatch: f64,
}

impl SchurCorrespondence {
    pub fn agrees(&self, tolerance: f64) -> bool {
        self.hamiltonian_eigenvalues.len() == self.zero_energies.len()
            && self.max_mismatch <= tolerance
            && self.resolvent_residuals.iter().all(|&r| r <= tolerance)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BsLimitReport {
    pub epsilons: Vec<f64>,
    /// `inf spec (k^2+ε)^{-1/2} O^(0) (k^2+ε)^{-1/2}` per ladder value.
    pub values: Vec<f64>,
    pub inf_spec_s: f64,
    /// `inf spec |k|^{-1} O^(0) |k|^{-1}`, the `ε -> 0` value on a finite grid.
    pub grid_limit: f64,
    pub distances: Vec<f64>,
    pub monotone: bool,
}

/// Compares the regularized infimum on an `ε` ladder with `inf spec S`.
pub fn bs_limit_check(bundle: &ReductionBundle, grid: &MomentumGrid, ladder: &[f64]) -> Result<BsLimitReport> {
    let m = grid.len();
    let inf_spec_s = match &bundle.s {
        Some(s) => dense_eigenvalues(&symmetrized(s))[0],
        // A = 0 and φ = 0 in the free limit
        None if bundle.c0 == 0.0 && bundle.one_particle_zero.iter().all(|x| x.is_finite()) => 1.0,
        None => return Err(Error::NonPositiveC0(bundle.c0)),
    };
    let o = symmetrized(&bundle.one_particle_zero);
    let conj = |w: &dyn Fn(usize) -> f64| {
        let mat = DMatrix::from_fn(m, m, |k, l| w(k) * o[(k, l)] * w(l));
        dense_eigenvalues(&mat)[0]
    };
    let values: Vec<f64> = ladder
        .iter()
        .map(|&eps| conj(&|j| 1.0 / (grid.norm(j).powi(2) + eps).sqrt()))
        .collect();
    let grid_limit = conj(&|j| 1.0 / grid.norm(j));
    let distances: Vec<f64> = values.iter().map(|v| (v - inf_spec_s).abs()).collect();
    let monotone = distances.windows(2).all(|w| w[1] <= w[0]);
    Ok(BsLimitReport {
        epsilons: ladder.to_vec(),
        values,
        inf_spec_s,
        grid_limit,
        distances,
        monotone,
    })
}
