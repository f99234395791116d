//! Controller-circuit augmentation and Kron reduction.
//!
//! Each inverter's quadratic droop law is equivalent to a fictitious branch
//! of susceptance `K_i` to a bus held at `E_i*`. Eliminating the inverter
//! buses from that augmented circuit leaves a network of load buses and
//! fixed-voltage buses, described by `B_red`, the averaging matrices `W1`,
//! `W2` and the open-circuit load voltages `E_L*`.

use nalgebra::{Cholesky, Dyn};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::netmodel::{NetworkModel, SusceptanceBlocks, TOL_EIG};
use crate::validation::ValidationReport;

/// Condition number above which `B_red` is rejected.
pub const MAX_CONDITION: f64 = 1e12;
/// Tolerance on row sums of the averaging matrices.
pub const TOL_ROW_SUM: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct ReducedNetwork {
    /// `B_LL - B_LI (B_II + K_I)^-1 B_IL`, symmetric, n x n.
    pub b_red: Matrix,
    /// Row-stochastic n x m map from set points to open-circuit load voltages.
    pub w1: Matrix,
    /// Row-stochastic m x (n+m) map from `(E_L, E_I*)` to inverter voltages.
    pub w2: Matrix,
    pub e_l_star: Vector,
    /// Diagonal of `K_I`.
    pub k_i: Vector,
    pub e_i_star: Vector,
    pub blocks: SusceptanceBlocks,
    neg_b_red: Cholesky<f64, Dyn>,
    neg_b_ii_k: Cholesky<f64, Dyn>,
}

impl ReducedNetwork {
    pub fn n_loads(&self) -> usize {
        self.b_red.nrows()
    }

    pub fn n_inverters(&self) -> usize {
        self.k_i.len()
    }

    /// Solves `B_red x = rhs` using the stored factorization.
    pub fn solve_b_red(&self, rhs: &Vector) -> Vector {
        -self.neg_b_red.solve(rhs)
    }

    /// Solves `(B_II + K_I) x = rhs` using the stored factorization.
    pub fn solve_b_ii_k(&self, rhs: &Matrix) -> Matrix {
        -self.neg_b_ii_k.solve(rhs)
    }

    /// Condition number of `B_red` (symmetric, so ratio of extreme |eigenvalues|).
    pub fn condition_number(&self) -> f64 {
        let ev = linalg::sym_eigenvalues(&self.b_red);
        let lo = ev.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
        let hi = ev.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        hi / lo
    }
}

/// Reduction of a validated model with its own gains and set points.
pub fn reduce_model(model: &NetworkModel) -> Result<ReducedNetwork> {
    let blocks = crate::netmodel::build_susceptance(model);
    kron_reduce(&blocks, model.gains(), model.setpoints())
}

/// Eliminates the inverter buses of the controller-augmented network.
pub fn kron_reduce(
    blocks: &SusceptanceBlocks,
    k_i: &Vector,
    e_i_star: &Vector,
) -> Result<ReducedNetwork> {
    let m = blocks.n_inverters();
    if k_i.len() != m || e_i_star.len() != m {
        return Err(Error::InvalidModel(format!(
            "expected {m} gains and set points, got {} and {}",
            k_i.len(),
            e_i_star.len()
        )));
    }
    let k_diag = linalg::diag(k_i);
    let b_ii_k = &blocks.ii + &k_diag;
    let neg_b_ii_k = linalg::spd_factor(&(-&b_ii_k), "-(B_II + K_I)")?;

    // X = (B_II + K_I)^-1 B_IL
    let x = -neg_b_ii_k.solve(&blocks.il);
    let b_red = linalg::symmetrize(&(&blocks.ll - &blocks.li * &x));

    let ev = linalg::sym_eigenvalues(&(-&b_red));
    let lo = ev.first().copied().unwrap_or(0.0);
    let hi = ev.last().copied().unwrap_or(0.0);
    if !(lo > 0.0) || hi / lo > MAX_CONDITION {
        return Err(Error::IllConditioned {
            cond: if lo > 0.0 { hi / lo } else { f64::INFINITY },
        });
    }
    let neg_b_red = linalg::spd_factor(&(-&b_red), "-B_red")?;

    // Y = (B_II + K_I)^-1 K_I
    let y = -neg_b_ii_k.solve(&k_diag);
    // W1 = -B_red^-1 B_LI Y = (-B_red)^-1 B_LI Y
    let w1 = neg_b_red.solve(&(&blocks.li * &y));
    // W2 = (B_II + K_I)^-1 [-B_IL, K_I] = [-X, Y]
    let n = blocks.n_loads();
    let mut w2 = Matrix::zeros(m, n + m);
    w2.view_mut((0, 0), (m, n)).copy_from(&(-&x));
    w2.view_mut((0, n), (m, m)).copy_from(&y);
    let e_l_star = &w1 * e_i_star;

    let red = ReducedNetwork {
        b_red,
        w1,
        w2,
        e_l_star,
        k_i: k_i.clone(),
        e_i_star: e_i_star.clone(),
        blocks: blocks.clone(),
        neg_b_red,
        neg_b_ii_k,
    };
    let report = check_reduced_properties(&red);
    if !report.passed() {
        let failed: Vec<String> = report
            .failures()
            .map(|i| format!("{}: {}", i.name, i.detail))
            .collect();
        return Err(Error::InternalConsistency(failed.join("; ")));
    }
    Ok(red)
}

/// Checks that `-B_red` is an M-matrix, that `W1` and `W2` are
/// row-stochastic, and that `E_L*` is positive and bracketed by the set points.
pub fn check_reduced_properties(red: &ReducedNetwork) -> ValidationReport {
    let mut report = ValidationReport::new();
    let n = red.n_loads();
    let neg = -&red.b_red;

    let mut worst_off = f64::NEG_INFINITY;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                worst_off = worst_off.max(neg[(i, j)]);
            }
        }
    }
    let scale = linalg::max_abs(&neg).max(f64::MIN_POSITIVE);
    let ev = linalg::sym_eigenvalues(&neg);
    let lam_min = ev.first().copied().unwrap_or(0.0);
    let lam_max = ev.last().copied().unwrap_or(0.0);
    let sign_ok = n == 1 || worst_off <= 1e-14 * scale;
    let eig_ok = lam_min > TOL_EIG * lam_max;
    report.check(
        "neg_b_red_m_matrix",
        sign_ok && eig_ok,
        format!(
            "max off-diagonal of -B_red {:.3e}, eigenvalues in [{lam_min:.6e}, {lam_max:.6e}]",
            if n == 1 { 0.0 } else { worst_off }
        ),
    );

    let w1_rows = linalg::max_norm(&(&red.w1 * linalg::ones(red.w1.ncols()) - linalg::ones(n)));
    let w2_rows =
        linalg::max_norm(&(&red.w2 * linalg::ones(red.w2.ncols()) - linalg::ones(red.w2.nrows())));
    report.check(
        "averaging_row_sums",
        w1_rows <= TOL_ROW_SUM && w2_rows <= TOL_ROW_SUM,
        format!("max |W1 1 - 1| = {w1_rows:.3e}, max |W2 1 - 1| = {w2_rows:.3e}"),
    );
    let w_min = red.w1.min().min(red.w2.min());
    report.check(
        "averaging_nonnegative",
        w_min >= -1e-14,
        format!("smallest entry {w_min:.3e}"),
    );

    let lo = linalg::min_entry(&red.e_i_star);
    let hi = linalg::max_entry(&red.e_i_star);
    let slack = 1e-12 * hi;
    let e_min = linalg::min_entry(&red.e_l_star);
    let e_max = linalg::max_entry(&red.e_l_star);
    report.check(
        "open_circuit_voltages",
        e_min > 0.0 && e_min >= lo - slack && e_max <= hi + slack,
        format!("E_L* in [{e_min:.9}, {e_max:.9}], set points in [{lo:.9}, {hi:.9}]"),
    );
    report
}

/// The `(n + 2m)`-square current/voltage matrix of the network augmented with
/// one controller branch per inverter, ordered (loads, inverters, fictitious buses).
pub fn augmented_matrix(blocks: &SusceptanceBlocks, k_i: &Vector) -> Matrix {
    let n = blocks.n_loads();
    let m = blocks.n_inverters();
    let k = linalg::diag(k_i);
    let mut a = Matrix::zeros(n + 2 * m, n + 2 * m);
    a.view_mut((0, 0), (n, n)).copy_from(&blocks.ll);
    a.view_mut((0, n), (n, m)).copy_from(&blocks.li);
    a.view_mut((n, 0), (m, n)).copy_from(&blocks.il);
    a.view_mut((n, n), (m, m)).copy_from(&(&blocks.ii + &k));
    a.view_mut((n, n + m), (m, m)).copy_from(&(-&k));
    a.view_mut((n + m, n), (m, m)).copy_from(&(-&k));
    a.view_mut((n + m, n + m), (m, m)).copy_from(&k);
    a
}

/// Kron reduction: the Schur complement of `a` eliminating the listed
/// interior indices. Remaining indices keep their relative order.
pub fn kron_eliminate(a: &Matrix, interior: &[usize]) -> Result<Matrix> {
    let nb = a.nrows();
    let boundary: Vec<usize> = (0..nb).filter(|i| !interior.contains(i)).collect();
    let pick = |rows: &[usize], cols: &[usize]| {
        Matrix::from_fn(rows.len(), cols.len(), |r, c| a[(rows[r], cols[c])])
    };
    let abb = pick(&boundary, &boundary);
    let abi = pick(&boundary, interior);
    let aib = pick(interior, &boundary);
    let aii = pick(interior, interior);
    let x = linalg::lu_solve(&aii, &aib, "interior block")?;
    Ok(abb - abi * x)
}

/// The input/output equivalent circuit between load buses and fictitious
/// controller buses, assembled from the reduced quantities:
/// `[[B_red, -B_red W1], [-W1' B_red, K_I (B_II + K_I)^-1 B_II]]`.
pub fn input_output_matrix(red: &ReducedNetwork) -> Matrix {
    let n = red.n_loads();
    let m = red.n_inverters();
    let top_right = -&red.b_red * &red.w1;
    let k = linalg::diag(&red.k_i);
    let bottom_right = &k * red.solve_b_ii_k(&red.blocks.ii);
    let mut out = Matrix::zeros(n + m, n + m);
    out.view_mut((0, 0), (n, n)).copy_from(&red.b_red);
    out.view_mut((0, n), (n, m)).copy_from(&top_right);
    out.view_mut((n, 0), (m, n))
        .copy_from(&top_right.transpose());
    out.view_mut((n, n), (m, m)).copy_from(&bottom_right);
    out
}

/// Direct reactance between two buses: `1/B_ik` on a branch, or an explicit
/// marker when no branch exists (infinite reactance).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DirectReactance {
    Branch(f64),
    NoBranch,
}

impl DirectReactance {
    /// `1/X`, which is zero for a missing branch.
    pub fn admittance(self) -> f64 {
        match self {
            DirectReactance::Branch(x) => 1.0 / x,
            DirectReactance::NoBranch => 0.0,
        }
    }
}

/// Differential effective reactances between load buses and the direct
/// branch reactances of the network.
#[derive(Debug, Clone)]
pub struct EffectiveReactanceMap {
    /// `X_eff = -B_LL^-1`, symmetric positive definite.
    pub x_eff: Matrix,
    b_full: Matrix,
    n_loads: usize,
}

impl EffectiveReactanceMap {
    /// Direct reactance between buses `i` and `k` (dense indices).
    pub fn direct(&self, i: usize, k: usize) -> DirectReactance {
        let b = self.b_full[(i, k)];
        if i != k && b > 0.0 {
            DirectReactance::Branch(1.0 / b)
        } else {
            DirectReactance::NoBranch
        }
    }

    pub fn n_loads(&self) -> usize {
        self.n_loads
    }

    pub fn n_inverters(&self) -> usize {
        self.b_full.nrows() - self.n_loads
    }
}

pub fn effective_reactances(blocks: &SusceptanceBlocks) -> Result<EffectiveReactanceMap> {
    let neg_ll = linalg::spd_factor(&(-&blocks.ll), "-B_LL")?;
    let n = blocks.n_loads();
    let x_eff = linalg::symmetrize(&neg_ll.inverse());
    if x_eff.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("B_LL is numerically singular".into()));
    }
    debug_assert_eq!(x_eff.nrows(), n);
    Ok(EffectiveReactanceMap {
        x_eff,
        b_full: blocks.full.clone(),
        n_loads: n,
    })
}
