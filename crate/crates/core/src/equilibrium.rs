//! Equilibria of the closed loop via the reduced power flow equation
//! `0 = Q_L(E_L) + [E_L] B_red (E_L - E_L*)`, with inverter voltages
//! recovered as `E_I = W2 (E_L, E_I*)`.

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::loads::{check_positive, LoadKind, LoadSpec};
use crate::netmodel::{build_susceptance, NetworkModel, SusceptanceBlocks, TOL_EIG};
use crate::reduction::ReducedNetwork;
use crate::stability;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Maximum full fixed-point residual for an accepted equilibrium.
    pub tol_fixed: f64,
    /// Newton stopping tolerance on the max-norm residual.
    pub newton_tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Largest admissible `|Q_sc^-1 Q_L|_inf` for the perturbative solvers.
    pub q_max: f64,
    /// Iterates below this fraction of `min(E_L*)` count as collapse.
    pub collapse_fraction: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_fixed: 1e-9,
            newton_tol: 1e-10,
            max_iter: 100,
            max_halvings: 30,
            q_max: 0.25,
            collapse_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    ClosedFormZi,
    PerturbativeZip,
    Newton,
    DynamicShunt,
    FullNewton,
}

impl SolveMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveMethod::ClosedFormZi => "closed_form_zi",
            SolveMethod::PerturbativeZip => "perturbative_zip",
            SolveMethod::Newton => "newton",
            SolveMethod::DynamicShunt => "dynamic_shunt",
            SolveMethod::FullNewton => "full_newton",
        }
    }
}

#[derive(Debug, Clone)]
pub struct EquilibriumSolution {
    pub e_l: Vector,
    pub e_i: Vector,
    /// Max-norm of the reduced power flow residual at `e_l`.
    pub residual_reduced: f64,
    /// Max-norm of the full fixed-point residual at `(e_l, e_i)`.
    pub residual_full: f64,
    pub method: SolveMethod,
    /// `|Q_sc^-1 Q_L|_inf` for the perturbative solvers.
    pub loading_norm: Option<f64>,
    /// `|[E_base]^-1 E_L - 1 + Q_sc^-1 Q_L|_inf`, the higher-order remainder.
    pub epsilon_norm: Option<f64>,
    /// First-order voltage estimate before Newton polishing.
    pub first_order: Option<Vector>,
    /// Steady-state dynamic shunt susceptances (zero on buses without shunt dynamics).
    pub b_dyn: Option<Vector>,
    pub iterations: usize,
}

/// `F(E_L) = Q_L(E_L) + [E_L] B_red (E_L - E_L*)`.
pub fn reduced_residual(red: &ReducedNetwork, spec: &LoadSpec, e_l: &Vector) -> Vector {
    let drop = &red.b_red * (e_l - &red.e_l_star);
    spec.eval_unchecked(e_l) + e_l.component_mul(&drop)
}

/// `E_I = W2 (E_L, E_I*)`.
pub fn recover_inverter_voltages(red: &ReducedNetwork, e_l: &Vector) -> Vector {
    let n = red.n_loads();
    let m = red.n_inverters();
    let mut x = Vector::zeros(n + m);
    x.rows_mut(0, n).copy_from(e_l);
    x.rows_mut(n, m).copy_from(&red.e_i_star);
    &red.w2 * x
}

/// Both blocks of the full fixed-point equation:
/// loads `Q_L(E_L) + [E_L](B E)_L`, inverters `[E_I] K (E_I - E_I*) + [E_I](B E)_I`.
pub fn full_residual(
    blocks: &SusceptanceBlocks,
    gains: &Vector,
    setpoints: &Vector,
    spec: &LoadSpec,
    e_l: &Vector,
    e_i: &Vector,
) -> Vector {
    let n = e_l.len();
    let m = e_i.len();
    let e = stack(e_l, e_i);
    let be = &blocks.full * &e;
    let mut r = Vector::zeros(n + m);
    let q = spec.eval_unchecked(e_l);
    for i in 0..n {
        r[i] = q[i] + e_l[i] * be[i];
    }
    for k in 0..m {
        let ek = e_i[k];
        r[n + k] = ek * gains[k] * (ek - setpoints[k]) + ek * be[n + k];
    }
    r
}

/// Max-norm of the full fixed-point residual of a candidate equilibrium.
pub fn verify_full_equilibrium(
    model: &NetworkModel,
    spec: &LoadSpec,
    e_l: &Vector,
    e_i: &Vector,
) -> f64 {
    let blocks = build_susceptance(model);
    linalg::max_norm(&full_residual(
        &blocks,
        model.gains(),
        model.setpoints(),
        spec,
        e_l,
        e_i,
    ))
}

pub(crate) fn stack(a: &Vector, b: &Vector) -> Vector {
    let mut x = Vector::zeros(a.len() + b.len());
    x.rows_mut(0, a.len()).copy_from(a);
    x.rows_mut(a.len(), b.len()).copy_from(b);
    x
}

/// Checks that `-(B_red + [b_shunt])` is an M-matrix and that
/// `I_shunt >= B_red E_L*` componentwise.
///
/// `B_red E_L*` vanishes at loads without a direct branch to an inverter, so
/// the current condition is checked with equality allowed; positivity of the
/// solution still follows because `-(B_red + [b_shunt])^-1` is entrywise
/// positive on a connected network.
pub fn check_zi_hypotheses(red: &ReducedNetwork, b_shunt: &Vector, i_shunt: &Vector) -> Result<()> {
    let a = -(&red.b_red + linalg::diag(b_shunt));
    let ev = linalg::sym_eigenvalues(&a);
    let lo = ev[0];
    let hi = ev.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    if !(lo > TOL_EIG * hi) {
        return Err(Error::CapacitiveLoad { min_eigenvalue: lo });
    }
    let be = &red.b_red * &red.e_l_star;
    let scale = linalg::max_norm(&be).max(f64::MIN_POSITIVE);
    let bad: Vec<usize> = (0..be.len())
        .filter(|&i| i_shunt[i] < be[i] - 1e-12 * scale)
        .collect();
    if !bad.is_empty() {
        return Err(Error::InductiveCurrent { buses: bad });
    }
    Ok(())
}

/// `E_L = (B_red + [b_shunt])^-1 (B_red E_L* - I_shunt)` after checking the hypotheses.
pub fn zi_closed_form(red: &ReducedNetwork, b_shunt: &Vector, i_shunt: &Vector) -> Result<Vector> {
    check_zi_hypotheses(red, b_shunt, i_shunt)?;
    let a = &red.b_red + linalg::diag(b_shunt);
    let rhs = &red.b_red * &red.e_l_star - i_shunt;
    let e = linalg::lu_solve_vec(&a, &rhs, "B_red + [b_shunt]")?;
    check_positive(&e)?;
    Ok(e)
}

/// `Q_sc = [E_base] (B_red + [b_shunt]) [E_base]`.
pub fn short_circuit_matrix(red: &ReducedNetwork, b_shunt: &Vector, e_base: &Vector) -> Matrix {
    let d = linalg::diag(e_base);
    &d * (&red.b_red + linalg::diag(b_shunt)) * &d
}

fn finish(
    red: &ReducedNetwork,
    spec: &LoadSpec,
    e_l: Vector,
    method: SolveMethod,
    iterations: usize,
    opts: &SolverOptions,
) -> Result<EquilibriumSolution> {
    check_positive(&e_l)?;
    let e_i = recover_inverter_voltages(red, &e_l);
    check_positive(&e_i)?;
    let residual_reduced = linalg::max_norm(&reduced_residual(red, spec, &e_l));
    let residual_full = linalg::max_norm(&full_residual(
        &red.blocks,
        &red.k_i,
        &red.e_i_star,
        spec,
        &e_l,
        &e_i,
    ));
    if !(residual_full <= opts.tol_fixed) {
        return Err(Error::NotAnEquilibrium {
            residual: residual_full,
            tol: opts.tol_fixed,
        });
    }
    Ok(EquilibriumSolution {
        e_l,
        e_i,
        residual_reduced,
        residual_full,
        method,
        loading_norm: None,
        epsilon_norm: None,
        first_order: None,
        b_dyn: None,
        iterations,
    })
}

/// Closed-form equilibrium for constant-impedance/constant-current loads.
pub fn solve_zi(
    red: &ReducedNetwork,
    spec: &LoadSpec,
    opts: &SolverOptions,
) -> Result<EquilibriumSolution> {
    spec.validate(red.n_loads())?;
    if spec.has_constant_power() {
        return Err(Error::UnsupportedLoadModel(
            "the closed-form solution needs loads without a constant-power term".into(),
        ));
    }
    let e_l = zi_closed_form(red, &spec.b_shunt, &spec.i_shunt)?;
    finish(red, spec, e_l, SolveMethod::ClosedFormZi, 0, opts)
}

/// Outcome of the damped Newton iteration on a residual map.
struct NewtonOutcome {
    x: Vector,
    iterations: usize,
}

/// Damped Newton iteration shared by the reduced and full solvers.
/// Trial points with any entry at or below `floor` are treated as rejected.
fn damped_newton<F, J>(
    x0: Vector,
    floor: f64,
    opts: &SolverOptions,
    f: F,
    jac: J,
) -> Result<NewtonOutcome>
where
    F: Fn(&Vector) -> Vector,
    J: Fn(&Vector) -> Matrix,
{
    let mut x = x0;
    let mut fx = f(&x);
    let mut norm = linalg::max_norm(&fx);
    let mut history = vec![norm];
    for iter in 0..opts.max_iter {
        if norm <= opts.newton_tol {
            // One extra full step costs little and usually lands on the
            // root to rounding level.
            if let Ok(step) = linalg::lu_solve_vec(&jac(&x), &(-&fx), "Newton Jacobian") {
                let trial = &x + step;
                if trial.iter().all(|&v| v > floor) && linalg::max_norm(&f(&trial)) <= norm {
                    x = trial;
                }
            }
            return Ok(NewtonOutcome {
                x,
                iterations: iter,
            });
        }
        let j = jac(&x);
        let step = match linalg::lu_solve_vec(&j, &(-&fx), "Newton Jacobian") {
            Ok(s) => s,
            Err(_) => {
                return Err(Error::Collapse {
                    reason: format!("Jacobian became singular at residual {norm:.3e}"),
                })
            }
        };
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial = &x + &step * alpha;
            if trial.iter().all(|&v| v > floor) {
                let ft = f(&trial);
                let nt = linalg::max_norm(&ft);
                if nt < norm {
                    accepted = Some((trial, ft, nt));
                    break;
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((xt, ft, nt)) => {
                x = xt;
                fx = ft;
                norm = nt;
                history.push(norm);
            }
            None => {
                return Err(Error::Collapse {
                    reason: format!(
                        "line search found no decrease after {} halvings (residual {norm:.3e}, min voltage {:.4})",
                        opts.max_halvings,
                        linalg::min_entry(&x)
                    ),
                })
            }
        }
    }
    if norm <= opts.newton_tol {
        return Ok(NewtonOutcome {
            x,
            iterations: opts.max_iter,
        });
    }
    // Stagnation at a nonzero residual means the iterates are sliding along
    // a residual valley without a root: no high-voltage solution nearby.
    let k = history.len();
    let recent = history[k.saturating_sub(11)];
    if norm > 0.99 * recent {
        return Err(Error::Collapse {
            reason: format!("residual stagnated at {norm:.3e}"),
        });
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        residual: norm,
    })
}

/// Damped Newton on the reduced power flow equation starting at `E_L*`.
pub fn solve_newton(
    red: &ReducedNetwork,
    spec: &LoadSpec,
    opts: &SolverOptions,
) -> Result<EquilibriumSolution> {
    solve_newton_from(red, spec, &red.e_l_star.clone(), opts)
}

/// Damped Newton on the reduced power flow equation from a given start.
pub fn solve_newton_from(
    red: &ReducedNetwork,
    spec: &LoadSpec,
    init: &Vector,
    opts: &SolverOptions,
) -> Result<EquilibriumSolution> {
    spec.validate(red.n_loads())?;
    check_positive(init)?;
    let floor = opts.collapse_fraction * linalg::min_entry(&red.e_l_star);
    // Iterate on F / E_L: same positive roots as F, but without the spurious
    // roots at E_i = 0 that attract Newton from low starting voltages. ZI
    // loads make this map affine, so Newton lands in one step.
    let scaled = |e: &Vector| reduced_residual(red, spec, e).component_div(e);
    let mut h_opts = opts.clone();
    h_opts.newton_tol = opts.newton_tol / (2.0 * linalg::max_entry(&red.e_l_star).max(1.0));
    let out = damped_newton(init.clone(), floor, &h_opts, scaled, |e| {
        let j = stability::reduced_jacobian_unchecked(red, spec, e);
        let h = scaled(e);
        let mut j = j - linalg::diag(&h);
        for (i, mut row) in j.row_iter_mut().enumerate() {
            row /= e[i];
        }
        j
    })?;
    finish(red, spec, out.x, SolveMethod::Newton, out.iterations, opts)
}

/// First-order perturbative solution about the ZI equilibrium, polished by
/// Newton. Shared by the ZIP and dynamic-shunt solvers.
fn perturbative(
    red: &ReducedNetwork,
    spec: &LoadSpec,
    opts: &SolverOptions,
    method: SolveMethod,
) -> Result<EquilibriumSolution> {
    let e_base = zi_closed_form(red, &spec.b_shunt, &spec.i_shunt)?;
    let q_sc = short_circuit_matrix(red, &spec.b_shunt, &e_base);
    let x = linalg::lu_solve_vec(&q_sc, &spec.q_const, "Q_sc")?;
    let loading = linalg::max_norm(&x);
    if loading > opts.q_max {
        return Err(Error::LoadingTooHeavy {
            norm: loading,
            limit: opts.q_max,
        });
    }
    let first = e_base.component_mul(&(linalg::ones(x.len()) - &x));
    let mut sol = match solve_newton_from(red, spec, &first, opts) {
        Ok(s) => s,
        Err(Error::NonConvergence { iterations, residual }) => {
            return Err(Error::Collapse {
                reason: format!(
                    "Newton polishing did not converge in {iterations} iterations (residual {residual:.3e})"
                ),
            })
        }
        Err(e) => return Err(e),
    };
    let eps = sol.e_l.component_div(&e_base) - linalg::ones(x.len()) + &x;
    sol.method = method;
    sol.loading_norm = Some(loading);
    sol.epsilon_norm = Some(linalg::max_norm(&eps));
    sol.first_order = Some(first);
    Ok(sol)
}

/// ZIP loads: first-order solution `[E_L^ZI](1 - Q_sc^-1 Q_L)` polished by Newton.
pub fn solve_zip_perturbative(
    red: &ReducedNetwork,
    spec: &LoadSpec,
    opts: &SolverOptions,
) -> Result<EquilibriumSolution> {
    spec.validate(red.n_loads())?;
    perturbative(red, spec, opts, SolveMethod::PerturbativeZip)
}

/// Steady state of the dynamic shunt loads: the constant-power equilibrium
/// together with `b_dyn = [E_L]^-2 Q_L`.
pub fn solve_dynamic_shunt(
    red: &ReducedNetwork,
    spec: &LoadSpec,
    opts: &SolverOptions,
) -> Result<EquilibriumSolution> {
    if spec.kind != LoadKind::DynamicShunt {
        return Err(Error::UnsupportedLoadModel(format!(
            "expected dynamic shunt loads, got {}",
            spec.kind.as_str()
        )));
    }
    spec.validate(red.n_loads())?;
    let mut sol = perturbative(red, spec, opts, SolveMethod::DynamicShunt)?;
    let mut b_dyn = Vector::zeros(red.n_loads());
    for i in spec.dynamic_buses() {
        b_dyn[i] = spec.q_const[i] / (sol.e_l[i] * sol.e_l[i]);
    }
    sol.b_dyn = Some(b_dyn);
    Ok(sol)
}

/// Picks the solver matching the load kind: closed form for ZI, the
/// perturbative solver for ZIP and dynamic shunts, Newton for constant power.
pub fn solve(
    red: &ReducedNetwork,
    spec: &LoadSpec,
    opts: &SolverOptions,
) -> Result<EquilibriumSolution> {
    match spec.kind {
        LoadKind::Zi => solve_zi(red, spec, opts),
        LoadKind::Zip => solve_zip_perturbative(red, spec, opts),
        LoadKind::ConstantPower => solve_newton(red, spec, opts),
        LoadKind::DynamicShunt => solve_dynamic_shunt(red, spec, opts),
    }
}

/// Damped Newton directly on the `(n+m)`-dimensional fixed-point equations,
/// independent of the reduction. Used to cross-check reduced solutions.
pub fn solve_full_newton(
    model: &NetworkModel,
    spec: &LoadSpec,
    init_l: &Vector,
    init_i: &Vector,
    opts: &SolverOptions,
) -> Result<EquilibriumSolution> {
    spec.validate(model.n_loads())?;
    let blocks = build_susceptance(model);
    let n = model.n_loads();
    let m = model.n_inverters();
    let floor = opts.collapse_fraction * linalg::min_entry(model.setpoints()) * 0.1;
    let split = |x: &Vector| (x.rows(0, n).into_owned(), x.rows(n, m).into_owned());
    let out = damped_newton(
        stack(init_l, init_i),
        floor,
        opts,
        |x| {
            let (l, i) = split(x);
            full_residual(&blocks, model.gains(), model.setpoints(), spec, &l, &i)
        },
        |x| stability::full_jacobian(&blocks, spec, model.gains(), model.setpoints(), x).j,
    )?;
    let (e_l, e_i) = split(&out.x);
    let residual_full = linalg::max_norm(&full_residual(
        &blocks,
        model.gains(),
        model.setpoints(),
        spec,
        &e_l,
        &e_i,
    ));
    Ok(EquilibriumSolution {
        e_l,
        e_i,
        residual_reduced: f64::NAN,
        residual_full,
        method: SolveMethod::FullNewton,
        loading_norm: None,
        epsilon_norm: None,
        first_order: None,
        b_dyn: None,
        iterations: out.iterations,
    })
}
