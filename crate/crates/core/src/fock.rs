//! Truncated bosonic Fock space over the grid modes.
//!
//! States are ordered sector-major (total boson number `0..=nmax`) and
//! lexicographically descending inside a sector, so the vacuum is index 0 and
//! the one-boson state on mode `j` sits at index `1 + j`. Because sectors are
//! contiguous, `Π^{≥n}` restricts to a trailing index range.
//!
//! Creation operators annihilate the top sector.

use std::collections::HashMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{FormFactor, MomentumGrid};
use crate::sparse::SparseOperator;

/// Default cap on the Fock-space dimension.
pub const DEFAULT_MAX_DIMENSION: usize = 1_000_000;

/// Occupation-number basis with `sum n_j <= nmax`.
#[derive(Debug, Clone)]
pub struct FockBasis {
    modes: usize,
    nmax: usize,
    /// Row-major `dim x modes` occupations.
    occupations: Vec<u16>,
    index: HashMap<Vec<u16>, usize>,
    /// `sector_offsets[n]` is the first index of sector `n`; last entry is `dim`.
    sector_offsets: Vec<usize>,
}

/// `sum_{n=0}^{nmax} C(modes + n - 1, n)`, saturating.
pub fn basis_dimension(modes: usize, nmax: usize) -> usize {
    let mut total: u128 = 1;
    let mut term: u128 = 1;
    for n in 1..=nmax as u128 {
        term = term * (modes as u128 + n - 1) / n;
        total = total.saturating_add(term);
    }
    total.min(usize::MAX as u128) as usize
}

impl FockBasis {
    pub fn new(modes: usize, nmax: usize) -> Result<Self> {
        Self::with_cap(modes, nmax, DEFAULT_MAX_DIMENSION)
    }

    pub fn with_cap(modes: usize, nmax: usize, max_dimension: usize) -> Result<Self> {
        if modes == 0 || nmax == 0 {
            return Err(Error::InvalidArgument(format!(
                "basis needs at least one mode and nmax >= 1 (got modes={modes}, nmax={nmax})"
            )));
        }
        if nmax > u16::MAX as usize {
            return Err(Error::InvalidArgument(format!("nmax {nmax} too large")));
        }
        let dim = basis_dimension(modes, nmax);
        if dim > max_dimension {
            return Err(Error::CapExceeded {
                what: "Fock dimension",
                actual: dim,
                cap: max_dimension,
            });
        }

        let mut occupations = Vec::with_capacity(dim * modes);
        let mut sector_offsets = Vec::with_capacity(nmax + 2);
        let mut current = vec![0u16; modes];
        for n in 0..=nmax {
            sector_offsets.push(occupations.len() / modes);
            fill_sector(&mut current, 0, n as u16, &mut occupations);
        }
        sector_offsets.push(dim);
        debug_assert_eq!(occupations.len(), dim * modes);

        let index = occupations
            .chunks_exact(modes)
            .enumerate()
            .map(|(i, occ)| (occ.to_vec(), i))
            .collect();
        Ok(Self {
            modes,
            nmax,
            occupations,
            index,
            sector_offsets,
        })
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn nmax(&self) -> usize {
        self.nmax
    }

    pub fn dim(&self) -> usize {
        self.occupations.len() / self.modes
    }

    pub fn vacuum(&self) -> usize {
        0
    }

    pub fn state(&self, i: usize) -> &[u16] {
        &self.occupations[i * self.modes..(i + 1) * self.modes]
    }

    pub fn index_of(&self, occupation: &[u16]) -> Option<usize> {
        self.index.get(occupation).copied()
    }

    pub fn total(&self, i: usize) -> usize {
        self.state(i).iter().map(|&n| n as usize).sum()
    }

    /// Index range of sector `n`.
    pub fn sector(&self, n: usize) -> std::ops::Range<usize> {
        self.sector_offsets[n]..self.sector_offsets[n + 1]
    }

    /// First index with at least `n` bosons.
    pub fn sector_start(&self, n: usize) -> usize {
        self.sector_offsets[n]
    }

    pub fn sector_sizes(&self) -> Vec<usize> {
        self.sector_offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Index of the one-boson state on mode `j`.
    pub fn one_boson(&self, j: usize) -> usize {
        1 + j
    }

    /// Index of `a_j |i>` (up to its amplitude) if nonzero.
    pub(crate) fn lowered(&self, i: usize, j: usize) -> Option<usize> {
        let occ = self.state(i);
        if occ[j] == 0 {
            return None;
        }
        let mut t = occ.to_vec();
        t[j] -= 1;
        self.index_of(&t)
    }

    /// Index of `a_j^† |i>` if inside the truncation.
    pub(crate) fn raised(&self, i: usize, j: usize) -> Option<usize> {
        if self.total(i) >= self.nmax {
            return None;
        }
        let mut t = self.state(i).to_vec();
        t[j] += 1;
        self.index_of(&t)
    }

    /// Total field momentum `sum n_j k_j` of every basis state, row-major `dim x d`.
    pub fn momenta(&self, grid: &MomentumGrid) -> Vec<f64> {
        let d = grid.dimension();
        let mut out = vec![0.0; self.dim() * d];
        for i in 0..self.dim() {
            let p = &mut out[i * d..(i + 1) * d];
            for (j, &n) in self.state(i).iter().enumerate() {
                if n > 0 {
                    for (pa, ka) in p.iter_mut().zip(grid.mode(j)) {
                        *pa += n as f64 * ka;
                    }
                }
            }
        }
        out
    }

    pub fn numbers(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.total(i) as f64).collect()
    }
}

fn fill_sector(current: &mut [u16], pos: usize, remaining: u16, out: &mut Vec<u16>) {
    if pos + 1 == current.len() {
        current[pos] = remaining;
        out.extend_from_slice(current);
        current[pos] = 0;
        return;
    }
    for c in (0..=remaining).rev() {
        current[pos] = c;
        fill_sector(current, pos + 1, remaining - c, out);
    }
    current[pos] = 0;
}

/// Selector for the building blocks of `H`.
#[derive(Debug, Clone, PartialEq)]
pub enum Component {
    Number,
    /// Cartesian component `P_i`.
    Momentum(usize),
    /// `(P + k0)^2`.
    MomentumSquaredShift(Vec<f64>),
    Phi,
    Annihilator(usize),
    Creator(usize),
}

impl FromStr for Component {
    type Err = Error;

    /// Accepts `N`, `P<i>`, `P2:<k0,..>`, `Phi`, `a:<j>`, `adag:<j>`.
    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::UnknownSelector(s.to_string());
        match s {
            "N" => return Ok(Component::Number),
            "Phi" => return Ok(Component::Phi),
            _ => {}
        }
        if let Some(rest) = s.strip_prefix("P2:") {
            let k0 = rest
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| unknown())?;
            return Ok(Component::MomentumSquaredShift(k0));
        }
        if let Some(rest) = s.strip_prefix("adag:") {
            return rest.parse().map(Component::Creator).map_err(|_| unknown());
        }
        if let Some(rest) = s.strip_prefix("a:") {
            return rest.parse().map(Component::Annihilator).map_err(|_| unknown());
        }
        if let Some(rest) = s.strip_prefix('P') {
            return rest.parse().map(Component::Momentum).map_err(|_| unknown());
        }
        Err(unknown())
    }
}

fn check_modes(basis: &FockBasis, grid: &MomentumGrid) -> Result<()> {
    if basis.modes() != grid.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            actual: basis.modes(),
        });
    }
    Ok(())
}

/// Diagonal of `|P + shift|^2` over the basis.
pub fn shifted_momentum_squared(basis: &FockBasis, grid: &MomentumGrid, shift: &[f64]) -> Vec<f64> {
    let d = grid.dimension();
    basis
        .momenta(grid)
        .chunks_exact(d)
        .map(|p| p.iter().zip(shift).map(|(a, b)| (a + b) * (a + b)).sum())
        .collect()
}

pub fn assemble_component(basis: &FockBasis, grid: &MomentumGrid, form: &FormFactor, which: &Component) -> Result<SparseOperator> {
    check_modes(basis, grid)?;
    let dim = basis.dim();
    match which {
        Component::Number => Ok(SparseOperator::diagonal(&basis.numbers())),
        Component::Momentum(i) => {
            let d = grid.dimension();
            if *i >= d {
                return Err(Error::UnknownSelector(format!("P{i}")));
            }
            let p = basis.momenta(grid);
            let diag: Vec<f64> = (0..dim).map(|s| p[s * d + i]).collect();
            Ok(SparseOperator::diagonal(&diag))
        }
        Component::MomentumSquaredShift(k0) => {
            if k0.len() != grid.dimension() {
                return Err(Error::DimensionMismatch {
                    expected: grid.dimension(),
                    actual: k0.len(),
                });
            }
            Ok(SparseOperator::diagonal(&shifted_momentum_squared(basis, grid, k0)))
        }
        Component::Phi => Ok(field_operator(basis, form)),
        Component::Annihilator(j) | Component::Creator(j) => {
            if *j >= basis.modes() {
                return Err(Error::NotAMode {
                    index: *j,
                    modes: basis.modes(),
                });
            }
            let mut triplets = Vec::new();
            for i in 0..dim {
                if let Some(t) = basis.lowered(i, *j) {
                    let amp = (basis.state(i)[*j] as f64).sqrt();
                    triplets.push((t, i, amp));
                }
            }
            let a = SparseOperator::from_triplets(dim, triplets, false)?;
            Ok(if matches!(which, Component::Creator(_)) { a.transpose() } else { a })
        }
    }
}

/// `Φ(v) = a(v) + a^†(v)`, assembled row by row.
pub fn field_operator(basis: &FockBasis, form: &FormFactor) -> SparseOperator {
    let rows = crate::par::map((0..basis.dim()).collect(), |i| field_row(basis, form, i, None));
    SparseOperator::from_sorted_rows(rows, true)
}

fn field_row(basis: &FockBasis, form: &FormFactor, i: usize, diagonal: Option<f64>) -> Vec<(usize, f64)> {
    let occ = basis.state(i);
    let mut row = Vec::with_capacity(2 * basis.modes() + 1);
    for (j, &n) in occ.iter().enumerate() {
        let v = form.get(j);
        if v == 0.0 {
            continue;
        }
        // <i| a^†(v) |i - e_j>
        if let Some(t) = basis.lowered(i, j) {
            row.push((t, v * (n as f64).sqrt()));
        }
        // <i| a(v) |i + e_j>
        if let Some(t) = basis.raised(i, j) {
            row.push((t, v * (n as f64 + 1.0).sqrt()));
        }
    }
    if let Some(dg) = diagonal {
        row.push((i, dg));
    }
    row.sort_by_key(|e| e.0);
    row
}

pub fn shifted_hamiltonian(basis: &FockBasis, grid: &MomentumGrid, form: &FormFactor, shift: &[f64], constant: f64) -> Result<SparseOperator> {
    check_modes(basis, grid)?;
    if form.len() != basis.modes() {
        return Err(Error::DimensionMismatch {
            expected: basis.modes(),
            actual: form.len(),
        });
    }
    if shift.len() != grid.dimension() {
        return Err(Error::DimensionMismatch {
            expected: grid.dimension(),
            actual: shift.len(),
        });
    }
    let p2 = shifted_momentum_squared(basis, grid, shift);
    let rows = crate::par::map((0..basis.dim()).collect(), |i| field_row(basis, form, i, Some(p2[i] + basis.total(i) as f64 + constant)));
    Ok(SparseOperator::from_sorted_rows(rows, true))
}

/// `H = (P - ξ)^2 + Φ(v) + N`.
pub fn assemble_hamiltonian(basis: &FockBasis, grid: &MomentumGrid, form: &FormFactor, xi: &[f64]) -> Result<SparseOperator> {
    let minus_xi: Vec<f64> = xi.iter().map(|x| -x).collect();
    shifted_hamiltonian(basis, grid, form, &minus_xi, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectorMode {
    Exact,
    AtLeast,
}

/// Diagonal 0/1 projector onto `Π^n` or `Π^{≥n}`.
pub fn sector_projector(basis: &FockBasis, n: usize, mode: SectorMode) -> Result<SparseOperator> {
    if n > basis.nmax() {
        return Err(Error::SectorOutOfRange { n, nmax: basis.nmax() });
    }
    let range = match mode {
        SectorMode::Exact => basis.sector(n),
        SectorMode::AtLeast => basis.sector_start(n)..basis.dim(),
    };
    let diag: Vec<f64> = (0..basis.dim()).map(|i| if range.contains(&i) { 1.0 } else { 0.0 }).collect();
    Ok(SparseOperator::diagonal(&diag))
}
