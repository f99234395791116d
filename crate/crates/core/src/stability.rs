//! Local stability certificates for closed-loop equilibria.
//!
//! Three views are provided: the Jacobian of the reduced power flow
//! equation, the sufficient condition `B_red < [E_L]^-2 [Q_L(E_L)]`, and the
//! spectrum of the full differential-algebraic linearization. For the last
//! one the linearization `J = [E] M` with symmetric
//! `M = B + [E]^-1 ([B E] + D)` is reduced onto the inverter states and
//! solved as the symmetric generalized eigenproblem
//! `M_red v = lambda [E_I]^-1 tau_I v`.

use nalgebra::Complex;
use serde::Serialize;

use crate::equilibrium::{self, EquilibriumSolution};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::loads::{check_positive, LoadKind, LoadSpec};
use crate::netmodel::{build_susceptance, NetworkModel, SusceptanceBlocks, TOL_EIG};
use crate::reduction::ReducedNetwork;

/// Relative Hurwitz tolerance (times the spectral radius).
pub const TOL_HURWITZ: f64 = 1e-9;
/// Relative threshold below which a principal block counts as singular.
pub const TOL_SINGULAR: f64 = 1e-12;

/// `J_red = dQ/dE + [E_L] B_red + [B_red (E_L - E_L*)]`.
pub fn reduced_jacobian(red: &ReducedNetwork, spec: &LoadSpec, e_l: &Vector) -> Result<Matrix> {
    check_positive(e_l)?;
    Ok(reduced_jacobian_unchecked(red, spec, e_l))
}

pub(crate) fn reduced_jacobian_unchecked(
    red: &ReducedNetwork,
    spec: &LoadSpec,
    e_l: &Vector,
) -> Matrix {
    let dq = spec.jacobian_diag_unchecked(e_l);
    let drop = &red.b_red * (e_l - &red.e_l_star);
    linalg::diag(e_l) * &red.b_red + linalg::diag(&(dq + drop))
}

#[derive(Debug, Clone)]
pub struct HurwitzVerdict {
    pub hurwitz: bool,
    /// Largest real part of the spectrum.
    pub margin: f64,
    /// Eigenvalues sorted by descending real part.
    pub spectrum: Vec<Complex<f64>>,
}

/// Hurwitz test: every eigenvalue has real part below `-1e-9` times the
/// spectral radius.
pub fn certify_hurwitz(j: &Matrix) -> Result<HurwitzVerdict> {
    let mut spectrum = linalg::eigenvalues(j)?;
    linalg::sort_spectrum_desc(&mut spectrum);
    let radius = spectrum.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let margin = linalg::spectral_abscissa(&spectrum);
    Ok(HurwitzVerdict {
        hurwitz: margin < -TOL_HURWITZ * radius,
        margin,
        spectrum,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SufficientCondition {
    Holds,
    Fails,
    /// Some load has `dQ_i/dE_i > 0`, so the condition says nothing.
    Inapplicable,
}

impl SufficientCondition {
    pub fn as_str(self) -> &'static str {
        match self {
            SufficientCondition::Holds => "holds",
            SufficientCondition::Fails => "fails",
            SufficientCondition::Inapplicable => "inapplicable",
        }
    }
}

/// Checks `[E_L]^-2 [Q_L(E_L)] - B_red` positive definite, provided every
/// load satisfies `dQ_i/dE_i <= 0` at `E_L`.
pub fn sufficient_condition(
    red: &ReducedNetwork,
    spec: &LoadSpec,
    e_l: &Vector,
) -> Result<SufficientCondition> {
    let slope = spec.jacobian_diag(e_l)?;
    if slope.iter().any(|&s| s > 0.0) {
        return Ok(SufficientCondition::Inapplicable);
    }
    let q = spec.eval(e_l)?;
    let a = linalg::diag(&q.component_div(&e_l.component_mul(e_l))) - &red.b_red;
    let ev = linalg::sym_eigenvalues(&a);
    let scale = ev.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    Ok(if ev[0] > TOL_EIG * scale {
        SufficientCondition::Holds
    } else {
        SufficientCondition::Fails
    })
}

/// Jacobian of the full right-hand side `(Q_L + [E_L](BE)_L, [E_I]K(E_I - E*) + [E_I](BE)_I)`.
#[derive(Debug, Clone)]
pub struct FullJacobian {
    /// `J = [E] B + [B E] + [D]`.
    pub j: Matrix,
    /// `D`: `dQ_i/dE_i` on loads, `K_i (2 E_i - E_i*)` on inverters.
    pub d: Vector,
}

/// Full Jacobian at the stacked voltage vector `e = (E_L, E_I)`.
pub fn full_jacobian(
    blocks: &SusceptanceBlocks,
    spec: &LoadSpec,
    gains: &Vector,
    setpoints: &Vector,
    e: &Vector,
) -> FullJacobian {
    let n = blocks.n_loads();
    let m = blocks.n_inverters();
    let e_l = e.rows(0, n).into_owned();
    let dq = spec.jacobian_diag_unchecked(&e_l);
    let mut d = Vector::zeros(n + m);
    d.rows_mut(0, n).copy_from(&dq);
    for k in 0..m {
        d[n + k] = gains[k] * (2.0 * e[n + k] - setpoints[k]);
    }
    let be = &blocks.full * e;
    let j = linalg::diag(e) * &blocks.full + linalg::diag(&(be + &d));
    FullJacobian { j, d }
}

/// Symmetric `M = B + [E]^-1 ([B E] + D)`, so that `J = [E] M`.
pub fn symmetric_m(
    blocks: &SusceptanceBlocks,
    spec: &LoadSpec,
    gains: &Vector,
    setpoints: &Vector,
    e: &Vector,
) -> Matrix {
    let fj = full_jacobian(blocks, spec, gains, setpoints, e);
    let be = &blocks.full * e;
    let extra = (be + fj.d).component_div(e);
    &blocks.full + linalg::diag(&extra)
}

fn symmetric_singular(a: &Matrix) -> (bool, Vec<f64>) {
    let ev = linalg::sym_eigenvalues(a);
    let scale = ev
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let smallest = ev.iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
    (smallest <= TOL_SINGULAR * scale, ev)
}

/// Reduced symmetric matrix `M_red = M_II - M_IL M_LL^-1 M_LI` together
/// with the eigenvalues of `M_LL`.
fn reduced_m(m: &Matrix, n: usize) -> Result<(Matrix, Vec<f64>)> {
    let nm = m.nrows();
    let mi = nm - n;
    let m_ll = m.view((0, 0), (n, n)).into_owned();
    let m_li = m.view((0, n), (n, mi)).into_owned();
    let m_il = m.view((n, 0), (mi, n)).into_owned();
    let m_ii = m.view((n, n), (mi, mi)).into_owned();
    let (singular, ev) = symmetric_singular(&m_ll);
    if singular {
        return Err(Error::SingularityInducedBifurcation(format!(
            "the load block of the linearization is singular (eigenvalues {:?})",
            ev
        )));
    }
    let x = linalg::lu_solve(&m_ll, &m_li, "M_LL")?;
    Ok((linalg::symmetrize(&(m_ii - m_il * x)), ev))
}

fn ensure_equilibrium(
    model: &NetworkModel,
    spec: &LoadSpec,
    e_l: &Vector,
    e_i: &Vector,
    tol: f64,
) -> Result<()> {
    let r = equilibrium::verify_full_equilibrium(model, spec, e_l, e_i);
    if r > tol {
        return Err(Error::NotAnEquilibrium { residual: r, tol });
    }
    Ok(())
}

/// Eigenvalues (descending) of the generalized problem
/// `M_red v = lambda [E_I]^-1 tau_I v` at an equilibrium.
pub fn full_dae_spectrum(
    model: &NetworkModel,
    spec: &LoadSpec,
    e_l: &Vector,
    e_i: &Vector,
    tau: &Vector,
) -> Result<Vec<f64>> {
    check_positive(e_l)?;
    check_positive(e_i)?;
    check_tau(tau, model.n_inverters())?;
    ensure_equilibrium(model, spec, e_l, e_i, 1e-9)?;
    let blocks = build_susceptance(model);
    let e = equilibrium::stack(e_l, e_i);
    let m = symmetric_m(&blocks, spec, model.gains(), model.setpoints(), &e);
    let (m_red, _) = reduced_m(&m, model.n_loads())?;
    // Congruence with [E_I]^-1 tau_I = S^2 turns the GEP into S^-1 M_red S^-1.
    let s_inv = tau.component_div(e_i).map(|x| 1.0 / x.sqrt());
    let a = linalg::diag(&s_inv) * m_red * linalg::diag(&s_inv);
    let mut ev = linalg::sym_eigenvalues(&a);
    ev.reverse();
    Ok(ev)
}

/// Eigenvalues of `[tau_I]^-1 [E_I] M_red` computed with the general
/// (nonsymmetric) eigensolver. Mathematically identical to
/// [`full_dae_spectrum`]; used to confirm the spectrum is real.
pub fn full_dae_spectrum_general(
    model: &NetworkModel,
    spec: &LoadSpec,
    e_l: &Vector,
    e_i: &Vector,
    tau: &Vector,
) -> Result<Vec<Complex<f64>>> {
    check_tau(tau, model.n_inverters())?;
    let blocks = build_susceptance(model);
    let e = equilibrium::stack(e_l, e_i);
    let m = symmetric_m(&blocks, spec, model.gains(), model.setpoints(), &e);
    let (m_red, _) = reduced_m(&m, model.n_loads())?;
    let scale = e_i.component_div(tau);
    let mut ev = linalg::eigenvalues(&(linalg::diag(&scale) * m_red))?;
    linalg::sort_spectrum_desc(&mut ev);
    Ok(ev)
}

fn check_tau(tau: &Vector, m: usize) -> Result<()> {
    if tau.len() != m || tau.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
        return Err(Error::InvalidModel(format!(
            "need {m} strictly positive inverter time constants"
        )));
    }
    Ok(())
}

/// Spectrum of the linearized dynamic-shunt closed loop.
///
/// Differential states are the inverter voltages and one shunt
/// susceptance per bus with `Q_i < 0`; the load voltages are algebraic.
/// With `x = (E_I, b_dyn)` and `z = E_L` the linearization reads
/// `diag(tau, T) x' = A x + C z`, `0 = F x + G z`, where
///
/// * `A = blkdiag(J_II, -[E_L^2])`, `C = (J_IL; -2 [E_L b_dyn])`,
/// * `F = (J_LI, [E_L^2])`, `G = J_LL` with `D_L = dQ_static/dE + 2 [b_dyn E_L]`,
///
/// and the returned eigenvalues are those of `diag(tau, T)^-1 (A - C G^-1 F)`,
/// sorted by descending real part.
pub fn dynamic_shunt_spectrum(
    model: &NetworkModel,
    spec: &LoadSpec,
    sol: &EquilibriumSolution,
    tau: &Vector,
) -> Result<Vec<Complex<f64>>> {
    if spec.kind != LoadKind::DynamicShunt {
        return Err(Error::UnsupportedLoadModel(format!(
            "expected dynamic shunt loads, got {}",
            spec.kind.as_str()
        )));
    }
    check_tau(tau, model.n_inverters())?;
    let b_dyn = sol
        .b_dyn
        .as_ref()
        .ok_or_else(|| Error::InvalidLoad("solution carries no dynamic shunt state".into()))?;
    let n = model.n_loads();
    let m = model.n_inverters();
    let e_l = &sol.e_l;
    let dyn_buses = spec.dynamic_buses();
    let p = dyn_buses.len();

    // Algebraic rows see the static part plus the shunt state b_dyn E^2.
    let static_spec = spec.zi_part();
    let blocks = build_susceptance(model);
    let e = equilibrium::stack(e_l, &sol.e_i);
    let mut fj = full_jacobian(&blocks, &static_spec, model.gains(), model.setpoints(), &e);
    for i in 0..n {
        fj.j[(i, i)] += 2.0 * b_dyn[i] * e_l[i];
    }
    let j = fj.j;
    let g = j.view((0, 0), (n, n)).into_owned();
    let (singular, ev) = symmetric_singular(&(linalg::diag(&e_l.map(|x| 1.0 / x)) * &g));
    if singular {
        return Err(Error::SingularityInducedBifurcation(format!(
            "algebraic load-balance block is singular (eigenvalues {:?})",
            ev
        )));
    }

    let nx = m + p;
    let mut a = Matrix::zeros(nx, nx);
    a.view_mut((0, 0), (m, m))
        .copy_from(&j.view((n, n), (m, m)));
    let mut c = Matrix::zeros(nx, n);
    c.view_mut((0, 0), (m, n))
        .copy_from(&j.view((n, 0), (m, n)));
    let mut f = Matrix::zeros(n, nx);
    f.view_mut((0, 0), (n, m))
        .copy_from(&j.view((0, n), (n, m)));
    let mut rate = Vector::zeros(nx);
    rate.rows_mut(0, m).copy_from(tau);
    for (r, &bus) in dyn_buses.iter().enumerate() {
        let e2 = e_l[bus] * e_l[bus];
        a[(m + r, m + r)] = -e2;
        c[(m + r, bus)] = -2.0 * e_l[bus] * b_dyn[bus];
        f[(bus, m + r)] = e2;
        rate[m + r] = spec.t[bus];
    }
    let x = linalg::lu_solve(&g, &f, "algebraic block")?;
    let a_red = a - c * x;
    let scaled = linalg::diag(&rate.map(|t| 1.0 / t)) * a_red;
    let mut spectrum = linalg::eigenvalues(&scaled)?;
    linalg::sort_spectrum_desc(&mut spectrum);
    Ok(spectrum)
}

#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub j_red: Matrix,
    /// Eigenvalues of `J_red`, descending real part.
    pub spectrum_red: Vec<Complex<f64>>,
    pub hurwitz: bool,
    pub margin: f64,
    pub sufficient_condition: SufficientCondition,
    /// Real eigenvalues of the reduced generalized problem, descending.
    /// `None` when the load block of the linearization is singular.
    pub gep_spectrum: Option<Vec<f64>>,
    /// Extended spectrum for dynamic shunt loads.
    pub ds_spectrum: Option<Vec<Complex<f64>>>,
    /// Both certificates reach the same verdict.
    pub consistent: bool,
    pub notes: Vec<String>,
}

impl StabilityReport {
    pub fn gep_stable(&self) -> Option<bool> {
        self.gep_spectrum
            .as_ref()
            .map(|ev| ev.iter().all(|&l| l < 0.0))
    }

    pub fn ds_stable(&self) -> Option<bool> {
        self.ds_spectrum
            .as_ref()
            .map(|ev| ev.iter().all(|z| z.re < 0.0))
    }

    /// Overall verdict: every certificate that applies says stable.
    pub fn stable(&self) -> bool {
        self.hurwitz && self.gep_stable().unwrap_or(false) && self.ds_stable().unwrap_or(true)
    }
}

/// Runs every certificate at an equilibrium.
pub fn analyze(
    model: &NetworkModel,
    red: &ReducedNetwork,
    spec: &LoadSpec,
    sol: &EquilibriumSolution,
    tau: &Vector,
) -> Result<StabilityReport> {
    let j_red = reduced_jacobian(red, spec, &sol.e_l)?;
    let verdict = certify_hurwitz(&j_red)?;
    let sufficient = sufficient_condition(red, spec, &sol.e_l)?;
    let mut notes = Vec::new();
    let gep = match full_dae_spectrum(model, spec, &sol.e_l, &sol.e_i, tau) {
        Ok(ev) => Some(ev),
        Err(Error::SingularityInducedBifurcation(msg)) => {
            notes.push(format!("singularity-induced bifurcation: {msg}"));
            None
        }
        Err(e) => return Err(e),
    };
    let ds_spectrum = if spec.kind == LoadKind::DynamicShunt {
        if spec.is_mixed_dynamic() {
            notes.push("mixed dynamic-shunt/static load model".into());
        }
        match dynamic_shunt_spectrum(model, spec, sol, tau) {
            Ok(ev) => Some(ev),
            Err(Error::SingularityInducedBifurcation(msg)) => {
                notes.push(format!("dynamic shunt linearization: {msg}"));
                None
            }
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let gep_stable = gep.as_ref().map(|ev| ev.iter().all(|&l| l < 0.0));
    let consistent = gep_stable == Some(verdict.hurwitz);
    if !consistent {
        let tol = TOL_HURWITZ
            * verdict
                .spectrum
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max);
        if verdict.margin.abs() <= 1e3 * tol {
            notes.push(format!(
                "certificates disagree within tolerance of the stability boundary (margin {:.3e})",
                verdict.margin
            ));
        } else {
            notes.push(
                "certificates disagree: the load block of the linearization is indefinite".into(),
            );
        }
    }
    if sufficient == SufficientCondition::Holds && !verdict.hurwitz {
        notes.push("sufficient condition holds but the reduced Jacobian is not Hurwitz".into());
    }
    Ok(StabilityReport {
        j_red,
        spectrum_red: verdict.spectrum,
        hurwitz: verdict.hurwitz,
        margin: verdict.margin,
        sufficient_condition: sufficient,
        gep_spectrum: gep,
        ds_spectrum,
        consistent,
        notes,
    })
}
