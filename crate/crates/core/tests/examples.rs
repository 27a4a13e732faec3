//! Per-operation examples checked through the public API. Dense oracles are
//! assembled here directly from occupation numbers, independent of the crate's
//! sparse assembly.

use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, DVector};
use polaron::fock::{assemble_component, assemble_hamiltonian, basis_dimension, sector_projector, Component, FockBasis, SectorMode};
use polaron::grid::{triple_norm, FormFactor, MomentumGrid, Profile};
use polaron::reduction::Model;
use polaron::spectral::{
    count_below, dense_eigenvalues, ground_energy, lowest_eigenpairs, nu, resolvent_apply, SolverConfig,
};

fn grid(d: usize, k: f64, h: f64) -> MomentumGrid {
    MomentumGrid::new(d, k, h).unwrap()
}

fn model(g: &MomentumGrid, profile: Profile, coupling: f64, nmax: usize) -> Model {
    let form = FormFactor::sample(g, profile, coupling).unwrap();
    Model::new(g.clone(), form, nmax, vec![0.0; g.dimension()], SolverConfig::default()).unwrap()
}

/// `a^†_j` as a dense matrix, built from occupation lookups.
fn dense_creator(basis: &FockBasis, j: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(basis.dim(), basis.dim());
    for i in 0..basis.dim() {
        if basis.total(i) == basis.nmax() {
            continue;
        }
        let mut occ = basis.state(i).to_vec();
        occ[j] += 1;
        let t = basis.index_of(&occ).unwrap();
        a[(t, i)] = (occ[j] as f64).sqrt();
    }
    a
}

/// `|P + shift|^2 + N + Φ(v) + constant` as a dense matrix.
fn dense_hamiltonian(basis: &FockBasis, g: &MomentumGrid, amps: &[f64], shift: &[f64], constant: f64) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(basis.dim(), basis.dim());
    for (j, &v) in amps.iter().enumerate() {
        let a = dense_creator(basis, j);
        h += (&a + a.transpose()) * v;
    }
    for i in 0..basis.dim() {
        let occ = basis.state(i);
        let mut p = shift.to_vec();
        for (j, &n) in occ.iter().enumerate() {
            for (c, k) in g.mode(j).iter().enumerate() {
                p[c] += n as f64 * k;
            }
        }
        h[(i, i)] += p.iter().map(|x| x * x).sum::<f64>() + basis.total(i) as f64 + constant;
    }
    h
}

fn trailing_inverse(m: &DMatrix<f64>, start: usize) -> DMatrix<f64> {
    let n = m.nrows() - start;
    m.view((start, start), (n, n)).into_owned().try_inverse().unwrap()
}

fn tail(x: &DVector<f64>, start: usize) -> DVector<f64> {
    x.rows(start, x.len() - start).into_owned()
}

// grid

#[test]
fn grid_mode_sets() {
    let g = grid(1, 1.0, 1.0);
    let mut modes: Vec<f64> = g.modes().map(|k| k[0]).collect();
    modes.sort_by(f64::total_cmp);
    assert_eq!(modes, vec![-1.0, 1.0]);

    let g = grid(1, 2.0, 1.0);
    let mut modes: Vec<f64> = g.modes().map(|k| k[0]).collect();
    modes.sort_by(f64::total_cmp);
    assert_eq!(modes, vec![-2.0, -1.0, 1.0, 2.0]);

    let g = grid(3, 1.0, 1.0);
    assert_eq!(g.len(), 26);
    assert!(g.modes().all(|k| k.iter().any(|&x| x != 0.0)));
    for j in 0..g.len() {
        let n = g.negated(j);
        assert!(g.mode(j).iter().zip(g.mode(n)).all(|(a, b)| *a == -*b));
    }
}

#[test]
fn grid_rejects_incommensurate_width() {
    assert!(MomentumGrid::new(1, 1.5, 1.0).is_err());
}

#[test]
fn form_factor_examples() {
    let g = grid(1, 2.0, 1.0);
    let f = FormFactor::sample(&g, Profile::Froehlich { alpha: 1.0 }, 0.0).unwrap();
    assert!(f.amplitudes.iter().all(|&v| v == 0.0));

    let g1 = grid(1, 1.0, 1.0);
    let f = FormFactor::sample(&g1, Profile::Constant, 1.0).unwrap();
    assert!(f.amplitudes.iter().all(|&v| v == 1.0));

    let f = FormFactor::sample(&g, Profile::Froehlich { alpha: 1.0 }, 1.0).unwrap();
    let at2 = g.modes().position(|k| k[0] == 2.0).unwrap();
    assert_eq!(f.get(at2), 0.5);
    for j in 0..g.len() {
        assert_eq!(f.get(j), f.get(g.negated(j)));
    }
}

#[test]
fn triple_norm_examples() {
    let g = grid(1, 1.0, 1.0);
    let zero = FormFactor::sample(&g, Profile::Constant, 0.0).unwrap();
    assert_eq!(triple_norm(&zero, &g, &g.default_probes()).unwrap(), 0.0);

    let one = FormFactor::sample(&g, Profile::Constant, 1.0).unwrap();
    let at_origin = triple_norm(&one, &g, &[vec![0.0]]).unwrap();
    assert_abs_diff_eq!(at_origin, 0.5_f64.sqrt(), epsilon = 1e-15);
    assert!(triple_norm(&one, &g, &g.default_probes()).unwrap() >= 0.5_f64.sqrt());

    let g3 = grid(3, 1.0, 1.0);
    let f = FormFactor::sample(&g3, Profile::Froehlich { alpha: 1.0 }, 1.0).unwrap();
    let probes = g3.default_probes();
    let mut best: f64 = 0.0;
    for p in &probes {
        let mut s = 0.0;
        for (j, k) in g3.modes().enumerate() {
            let dist = k.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            s += (f.get(j) / (1.0 + dist)).powi(2);
        }
        best = best.max(s.sqrt());
    }
    assert_abs_diff_eq!(triple_norm(&f, &g3, &probes).unwrap(), best, epsilon = 1e-14);

    let f3 = FormFactor::sample(&g3, Profile::Froehlich { alpha: 1.0 }, 3.0).unwrap();
    assert_abs_diff_eq!(triple_norm(&f3, &g3, &probes).unwrap(), 3.0 * best, epsilon = 1e-13);
}

// fock

#[test]
fn basis_dimensions() {
    let b = FockBasis::new(2, 2).unwrap();
    assert_eq!(b.dim(), 6);
    assert_eq!(b.sector_sizes(), vec![1, 2, 3]);
    assert_eq!(FockBasis::new(2, 1).unwrap().dim(), 3);
    assert_eq!(basis_dimension(4, 3), 35);
    assert_eq!(b.vacuum(), 0);
}

#[test]
fn hamiltonian_matches_dense_oracle() {
    // free model is diagonal
    let g = grid(1, 1.0, 1.0);
    let b = FockBasis::new(2, 2).unwrap();
    let free = FormFactor::sample(&g, Profile::Constant, 0.0).unwrap();
    let h = assemble_hamiltonian(&b, &g, &free, &[0.0]).unwrap();
    assert_eq!(h.to_dense(), dense_hamiltonian(&b, &g, &free.amplitudes, &[0.0], 0.0));
    assert_eq!(h.to_dense(), DMatrix::from_diagonal(&DVector::from_iterator(6, (0..6).map(|i| h.get(i, i)))));

    let form = FormFactor::sample(&g, Profile::Constant, 0.1).unwrap();
    let h = assemble_hamiltonian(&b, &g, &form, &[0.0]).unwrap();
    assert!(h.is_symmetric_exact());
    let oracle = dense_hamiltonian(&b, &g, &form.amplitudes, &[0.0], 0.0);
    assert!((h.to_dense() - &oracle).amax() < 1e-15);
    assert_eq!(h.get(0, 0), 0.0);
    for j in 0..2 {
        assert_eq!(h.get(0, b.one_boson(j)), form.get(j));
    }

    // every instance up to dimension 200
    let r = grid(1, 2.0, 0.5);
    let form = FormFactor::sample(&r, Profile::Gaussian, 0.2).unwrap();
    for nmax in [2, 3] {
        let b = FockBasis::new(r.len(), nmax).unwrap();
        assert!(b.dim() <= 200);
        let h = assemble_hamiltonian(&b, &r, &form, &[0.0]).unwrap();
        assert!((h.to_dense() - dense_hamiltonian(&b, &r, &form.amplitudes, &[0.0], 0.0)).amax() < 1e-14);
    }
}

#[test]
fn component_examples() {
    let g = grid(1, 1.0, 1.0);
    let b = FockBasis::new(2, 2).unwrap();
    let form = FormFactor::sample(&g, Profile::Constant, 0.1).unwrap();
    let n = assemble_component(&b, &g, &form, &Component::Number).unwrap();
    let diag: Vec<f64> = (0..6).map(|i| n.get(i, i)).collect();
    assert_eq!(diag, vec![0.0, 1.0, 1.0, 2.0, 2.0, 2.0]);

    let b3 = FockBasis::new(2, 3).unwrap();
    let below = b3.sector_start(3);
    for j in 0..2 {
        let a = assemble_component(&b3, &g, &form, &Component::Annihilator(j)).unwrap().to_dense();
        let ad = assemble_component(&b3, &g, &form, &Component::Creator(j)).unwrap().to_dense();
        let comm = &a * &ad - &ad * &a;
        let block = comm.view((0, 0), (below, below)).into_owned();
        assert!((block - DMatrix::identity(below, below)).amax() < 1e-14);
    }

    let p2 = assemble_component(&b, &g, &form, &"P2:0.3".parse().unwrap()).unwrap();
    assert_abs_diff_eq!(p2.get(0, 0), 0.09, epsilon = 1e-16);
}

#[test]
fn projector_examples() {
    let b = FockBasis::new(2, 2).unwrap();
    let p0 = sector_projector(&b, 0, SectorMode::Exact).unwrap().to_dense();
    let mut rank_one = DMatrix::zeros(6, 6);
    rank_one[(0, 0)] = 1.0;
    assert_eq!(p0, rank_one);
    let p_ge1 = sector_projector(&b, 1, SectorMode::AtLeast).unwrap().to_dense();
    assert_eq!(p_ge1, DMatrix::identity(6, 6) - p0);
    assert_eq!(sector_projector(&b, 2, SectorMode::Exact).unwrap().to_dense().trace(), 3.0);
    assert!(sector_projector(&b, 3, SectorMode::Exact).is_err());
}

// spectral

#[test]
fn eigen_examples() {
    let config = SolverConfig::default();
    let m = model(&grid(1, 1.0, 1.0), Profile::Constant, 0.0, 2);
    let gs = ground_energy(&m.hamiltonian, &config).unwrap();
    assert_eq!(gs.energy, 0.0);
    assert_abs_diff_eq!(gs.vector[0].abs(), 1.0, epsilon = 1e-14);

    let d = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, 2.0]));
    let pairs = lowest_eigenpairs(&d, 2, &config).unwrap();
    assert_eq!(pairs.values, vec![1.0, 2.0]);

    // Krylov path against the dense oracle
    let m = model(&grid(1, 1.0, 1.0), Profile::Constant, 0.1, 2);
    let oracle = dense_eigenvalues(&dense_hamiltonian(&m.basis, &m.grid, &m.form.amplitudes, &[0.0], 0.0));
    let krylov = SolverConfig {
        dense_threshold: 0,
        ..SolverConfig::default()
    };
    let pairs = lowest_eigenpairs(&m.hamiltonian, 3, &krylov).unwrap();
    assert!(!pairs.dense);
    for (a, b) in pairs.values.iter().zip(&oracle) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-10);
    }
    assert_abs_diff_eq!(m.e0(), oracle[0], epsilon = 1e-12);
    assert!(m.e0() <= 0.0);
}

#[test]
fn nu_examples() {
    let config = SolverConfig::default();
    let m = model(&grid(1, 1.0, 1.0), Profile::Constant, 0.0, 3);
    assert_eq!(nu(&m.hamiltonian, 0.0, 2, &m.basis, &config).unwrap(), 1.0);
    assert_eq!(nu(&m.hamiltonian, 0.0, 1, &m.basis, &config).unwrap(), 1.0);

    let m = model(&grid(1, 2.0, 0.5), Profile::Gaussian, 0.05, 3);
    let dense = dense_hamiltonian(&m.basis, &m.grid, &m.form.amplitudes, &[0.0], 0.0);
    let start = m.basis.sector_start(2);
    let n = m.dim() - start;
    let oracle = dense_eigenvalues(&dense.view((start, start), (n, n)).into_owned())[0] - 1.0 - m.e0();
    let nu2 = nu(&m.hamiltonian, m.e0(), 2, &m.basis, &config).unwrap();
    assert_abs_diff_eq!(nu2, oracle, epsilon = 1e-10);
    assert!(nu2 > 0.0);
}

#[test]
fn count_below_examples() {
    let config = SolverConfig::default();
    let m = model(&grid(1, 1.0, 1.0), Profile::Constant, 0.0, 2);
    assert_eq!(count_below(&m.hamiltonian, 1.0, 0.5, &config).unwrap().count, 1);

    let m = model(&grid(1, 2.0, 0.5), Profile::Gaussian, 0.1, 3);
    let c = count_below(&m.hamiltonian, m.e0() + 1.0, config.edge_buffer(0.5), &config).unwrap();
    assert_eq!(c.count, 1);

    let d = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 0.5, 2.0]));
    assert_eq!(count_below(&d, 1.0, 0.1, &config).unwrap().count, 2);
}

#[test]
fn resolvent_examples() {
    let config = SolverConfig::default();
    let r = DVector::from_vec(vec![0.3, -1.0, 2.0]);
    let id = DMatrix::<f64>::identity(3, 3);
    assert_eq!(resolvent_apply(&id, 0.0, &r, &config).unwrap(), r);
    let d = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]));
    let x = resolvent_apply(&d, 0.0, &DVector::from_vec(vec![1.0, 1.0]), &config).unwrap();
    assert_abs_diff_eq!(x[0], 0.5, epsilon = 1e-15);
    assert_abs_diff_eq!(x[1], 0.25, epsilon = 1e-15);

    let m = model(&grid(1, 1.0, 1.0), Profile::Constant, 0.1, 2);
    let v = m.field_vector();
    let y = m.y(&[0.0]).unwrap().apply(&v).unwrap();
    let dense = dense_hamiltonian(&m.basis, &m.grid, &m.form.amplitudes, &[0.0], -m.e0());
    let oracle = trailing_inverse(&dense, 1) * tail(&v, 1);
    assert_eq!(y[0], 0.0);
    assert!((tail(&y, 1) - oracle).amax() < 1e-12);
}

// reduction

#[test]
fn vacuum_schur_examples() {
    let free = model(&grid(1, 1.0, 1.0), Profile::Constant, 0.0, 3);
    for eps in [0.3, 1.0] {
        assert_eq!(free.vacuum_schur(eps).unwrap(), 0.0);
    }
    let m = model(&grid(1, 1.0, 1.0), Profile::Constant, 0.1, 3);
    assert!((m.vacuum_schur(1.0).unwrap() + m.e0()).abs() <= 1e-8);
    let ladder: Vec<f64> = [0.5, 1.0, 1.5].iter().map(|&e| m.vacuum_schur(e).unwrap()).collect();
    assert!(ladder.windows(2).all(|w| w[1] < w[0]), "{ladder:?}");
}

#[test]
fn energy_curve_examples() {
    let free = model(&grid(1, 1.0, 1.0), Profile::Constant, 0.0, 2);
    assert_eq!(free.energy_curve(&[1.0]).unwrap(), 0.0);

    let m = model(&grid(1, 2.0, 0.5), Profile::Gaussian, 0.1, 3);
    for j in 0..m.modes() {
        let k = m.grid.mode(j).to_vec();
        let neg = m.grid.mode(m.grid.negated(j)).to_vec();
        assert_abs_diff_eq!(m.energy_curve(&k).unwrap(), m.energy_curve(&neg).unwrap(), epsilon = 1e-13);
    }
    let q = [0.1];
    let dense = dense_hamiltonian(&m.basis, &m.grid, &m.form.amplitudes, &q, -m.e0());
    let v = tail(&m.field_vector(), 1);
    let oracle = -v.dot(&(trailing_inverse(&dense, 1) * &v));
    assert_abs_diff_eq!(m.energy_curve(&q).unwrap(), oracle, epsilon = 1e-12);
}

#[test]
fn d_kernel_examples() {
    let free = model(&grid(1, 1.0, 1.0), Profile::Constant, 0.0, 3);
    assert_eq!(free.d_kernel(0.0).unwrap().amax(), 0.0);

    let m = model(&grid(1, 1.0, 1.0), Profile::Constant, 0.1, 3);
    let d = m.d_kernel(0.0).unwrap();
    assert!((&d - d.transpose()).amax() <= 1e-9);

    let start = m.basis.sector_start(2);
    let dense = dense_hamiltonian(&m.basis, &m.grid, &m.form.amplitudes, &[0.0], -m.e0() - 1.0);
    let x = trailing_inverse(&dense, start);
    let v = m.field_vector();
    let u: Vec<DVector<f64>> = (0..m.modes()).map(|l| tail(&(dense_creator(&m.basis, l) * &v), start)).collect();
    for k in 0..m.modes() {
        for l in 0..m.modes() {
            assert_abs_diff_eq!(d[(k, l)], u[k].dot(&(&x * &u[l])), epsilon = 1e-12);
        }
    }
}

#[test]
fn c_kernel_examples() {
    let free = model(&grid(1, 2.0, 1.0), Profile::Constant, 0.0, 2);
    for k in [-2.0, 1.0, 2.0] {
        for l in [-1.0, 1.0] {
            let s: f64 = k + l;
            assert_abs_diff_eq!(free.c_kernel(&[k], &[l]).unwrap(), s * s / (s * s + 1.0), epsilon = 1e-14);
        }
    }
    assert_eq!(free.c_kernel(&[0.0], &[0.0]).unwrap(), 0.0);
    assert_eq!(free.build_bundle(0.0).unwrap().c0, 0.0);
}

#[test]
fn c0_leading_order_examples() {
    let g = grid(1, 2.0, 0.5);
    let ratios: Vec<f64> = [0.05, 0.1]
        .iter()
        .map(|&c| {
            let m = model(&g, Profile::Gaussian, c, 4);
            let c0 = m.build_bundle(0.0).unwrap().c0;
            (c0 - m.c0_leading_order()).abs() / c.powi(4)
        })
        .collect();
    assert!(ratios.iter().all(|r| r.is_finite() && *r < 10.0), "{ratios:?}");
}

#[test]
fn one_particle_operator_examples() {
    let free = model(&grid(1, 1.0, 1.0), Profile::Constant, 0.0, 2);
    let o = free.one_particle_operator(0.0).unwrap();
    let k2 = DMatrix::from_diagonal(&DVector::from_iterator(2, (0..2).map(|j| free.grid.norm(j).powi(2))));
    assert!((o - k2).amax() < 1e-15);

    let m = model(&grid(1, 2.0, 0.5), Profile::Gaussian, 0.1, 3);
    let o0 = m.one_particle_operator(0.0).unwrap();
    let o3 = m.one_particle_operator(0.3).unwrap();
    let diff = &o3 - &o0 - DMatrix::identity(m.modes(), m.modes()) * 0.3;
    let sym = (&diff + diff.transpose()) * 0.5;
    assert!(dense_eigenvalues(&sym)[0] >= -1e-10);

    let b = m.build_bundle(0.0).unwrap();
    let phi = b.phi.as_ref().unwrap();
    for j in 0..m.modes() {
        let direct = m.form.get(j) / m.grid.norm(j) * (b.lambda0 - b.lambda[j]);
        assert_abs_diff_eq!(b.c0.sqrt() * phi[j], direct, epsilon = 1e-8);
    }
}

#[test]
fn excited_test_examples() {
    let free = model(&grid(1, 1.0, 1.0), Profile::Constant, 0.0, 2);
    for eps in [0.2, 0.7] {
        let v = free.excited_eigenvalue_test(eps, 1.0).unwrap();
        assert_abs_diff_eq!(v.smallest_eigenvalue, eps + 1.0, epsilon = 1e-14);
        assert!(!v.eigenvalue_exists);
    }
}
