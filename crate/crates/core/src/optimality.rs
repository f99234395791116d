//! The cost function whose critical point is the closed-loop equilibrium
//! for constant-impedance loads:
//!
//! `C(E) = Q_loss(E) + Q_load(E_L) + C_volt(E_I)` with
//! `Q_loss = -E' B E`, `Q_load = -E_L' [b_shunt] E_L` and
//! `C_volt = -(E_I - E_I*)' [kappa] (E_I - E_I*)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::loads::LoadSpec;
use crate::netmodel::{build_susceptance, NetworkModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostBreakdown {
    pub q_loss: f64,
    pub q_load: f64,
    pub c_volt: f64,
    pub c_total: f64,
    pub gradient_norm: f64,
}

/// The three cost terms and the max-norm of the gradient at `(E_L, E_I)`.
pub fn evaluate_cost(
    model: &NetworkModel,
    b_shunt: &Vector,
    e_l: &Vector,
    e_i: &Vector,
    kappa: &Vector,
) -> CostBreakdown {
    let mut q_loss = 0.0;
    let e = stack(e_l, e_i);
    for br in model.branches() {
        let d = e[br.from] - e[br.to];
        q_loss += br.susceptance * d * d;
    }
    let q_load: f64 = (0..e_l.len()).map(|i| -b_shunt[i] * e_l[i] * e_l[i]).sum();
    let c_volt: f64 = (0..e_i.len())
        .map(|k| {
            let d = e_i[k] - model.setpoints()[k];
            -kappa[k] * d * d
        })
        .sum();
    let gradient_norm = linalg::max_norm(&cost_gradient(model, b_shunt, e_l, e_i, kappa));
    CostBreakdown {
        q_loss,
        q_load,
        c_volt,
        c_total: q_loss + q_load + c_volt,
        gradient_norm,
    }
}

fn stack(a: &Vector, b: &Vector) -> Vector {
    let mut x = Vector::zeros(a.len() + b.len());
    x.rows_mut(0, a.len()).copy_from(a);
    x.rows_mut(a.len(), b.len()).copy_from(b);
    x
}

/// Symmetric `(n+2m)`-square matrix with `C = x' Bq x`, `x = (E_L, E_I, E_I*)`.
pub fn cost_quadratic_form(model: &NetworkModel, b_shunt: &Vector, kappa: &Vector) -> Matrix {
    let blocks = build_susceptance(model);
    let n = model.n_loads();
    let m = model.n_inverters();
    let k = linalg::diag(kappa);
    let mut q = Matrix::zeros(n + 2 * m, n + 2 * m);
    q.view_mut((0, 0), (n, n))
        .copy_from(&(-(&blocks.ll + linalg::diag(b_shunt))));
    q.view_mut((0, n), (n, m)).copy_from(&(-&blocks.li));
    q.view_mut((n, 0), (m, n)).copy_from(&(-&blocks.il));
    q.view_mut((n, n), (m, m)).copy_from(&(-(&blocks.ii + &k)));
    q.view_mut((n, n + m), (m, m)).copy_from(&k);
    q.view_mut((n + m, n), (m, m)).copy_from(&k);
    q.view_mut((n + m, n + m), (m, m)).copy_from(&(-&k));
    q
}

/// Coefficient matrix of the first-order conditions,
/// `[[B_LL + [b_shunt], B_LI], [B_IL, B_II + [kappa]]]`.
pub fn coefficient_matrix(model: &NetworkModel, b_shunt: &Vector, kappa: &Vector) -> Matrix {
    let blocks = build_susceptance(model);
    let n = model.n_loads();
    let mut a = blocks.full.clone();
    for i in 0..n {
        a[(i, i)] += b_shunt[i];
    }
    for (k, &kk) in kappa.iter().enumerate() {
        a[(n + k, n + k)] += kk;
    }
    a
}

/// `grad C = -2 (A E - (0, [kappa] E_I*))` with `A` the coefficient matrix.
pub fn cost_gradient(
    model: &NetworkModel,
    b_shunt: &Vector,
    e_l: &Vector,
    e_i: &Vector,
    kappa: &Vector,
) -> Vector {
    let a = coefficient_matrix(model, b_shunt, kappa);
    gradient_with(&a, model, kappa, &stack(e_l, e_i))
}

fn gradient_with(a: &Matrix, model: &NetworkModel, kappa: &Vector, e: &Vector) -> Vector {
    let n = model.n_loads();
    let mut r = a * e;
    for (k, &kk) in kappa.iter().enumerate() {
        r[n + k] -= kk * model.setpoints()[k];
    }
    r * -2.0
}

/// Hessian of `C` in `(E_L, E_I)`: `-2` times the coefficient matrix.
pub fn cost_hessian(model: &NetworkModel, b_shunt: &Vector, kappa: &Vector) -> Matrix {
    coefficient_matrix(model, b_shunt, kappa) * -2.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimizerOptions {
    pub max_iter: usize,
    /// Stop when the projected gradient max-norm falls below this.
    pub tol: f64,
    /// Lower bound enforcing strictly positive voltages.
    pub floor: f64,
}

impl Default for MinimizerOptions {
    fn default() -> Self {
        Self {
            max_iter: 200_000,
            tol: 1e-12,
            floor: 1e-8,
        }
    }
}

/// Projected gradient descent on `C` over `E > 0` with Barzilai-Borwein
/// trial steps and backtracking. The sufficient-decrease test uses the
/// exact quadratic increment `g'd + d'(g+ - g)/2`, which stays accurate
/// when cost differences fall below round-off.
pub fn minimize_cost(
    model: &NetworkModel,
    b_shunt: &Vector,
    kappa: &Vector,
    start: &Vector,
    opts: &MinimizerOptions,
) -> Vector {
    let a = coefficient_matrix(model, b_shunt, kappa);
    let grad = |x: &Vector| gradient_with(&a, model, kappa, x);
    let project = |x: Vector| x.map(|v| v.max(opts.floor));
    let mut x = project(start.clone());
    let mut g = grad(&x);
    let mut step = 1.0 / linalg::matrix_inf_norm(&a).max(1e-12);
    for _ in 0..opts.max_iter {
        let pg = project(&x - &g) - &x;
        if linalg::max_norm(&pg) <= opts.tol {
            break;
        }
        let mut alpha = step;
        let mut accepted = None;
        for _ in 0..60 {
            let xt = project(&x - &g * alpha);
            let d = &xt - &x;
            let gt = grad(&xt);
            let decrease = g.dot(&d) + 0.5 * d.dot(&(&gt - &g));
            if decrease <= 1e-4 * g.dot(&d) {
                accepted = Some((xt, gt, d));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xt, gt, d)) = accepted else { break };
        let y = &gt - &g;
        let sy = d.dot(&y);
        step = if sy > 0.0 {
            d.dot(&d) / sy
        } else {
            alpha * 2.0
        };
        x = xt;
        g = gt;
    }
    x
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimalityStatus {
    Pass,
    Fail,
    /// The Hessian is not positive definite, so the equivalence does not apply.
    HypothesisViolated,
}

#[derive(Debug, Clone)]
pub struct OptimalityVerdict {
    pub status: OptimalityStatus,
    pub cost: CostBreakdown,
    pub gradient_norm: f64,
    pub hessian_min_eigenvalue: f64,
    /// Largest max-norm distance between a numerical minimizer and the equilibrium.
    pub minimizer_distance: Option<f64>,
    pub minimizer: Option<Vector>,
    pub starts: usize,
    pub detail: String,
}

/// Number of random starts used by [`verify_optimality`].
pub const OPTIMALITY_STARTS: usize = 10;

/// Checks that `(E_L, E_I)` is the unique minimizer of `C` when the cost
/// weights equal the controller gains: zero gradient, positive definite
/// Hessian, and agreement with an independent minimization from random
/// positive starts.
pub fn verify_optimality(
    model: &NetworkModel,
    spec: &LoadSpec,
    e_l: &Vector,
    e_i: &Vector,
    kappa: &Vector,
    seed: u64,
) -> Result<OptimalityVerdict> {
    let gains = model.gains();
    if kappa.len() != gains.len()
        || kappa
            .iter()
            .zip(gains.iter())
            .any(|(a, b)| (a - b).abs() > 1e-12 * b.abs())
    {
        return Err(Error::HypothesisViolated(
            "cost weights must equal the controller gains".into(),
        ));
    }
    if spec
        .i_shunt
        .iter()
        .chain(spec.q_const.iter())
        .any(|&x| x != 0.0)
    {
        return Err(Error::HypothesisViolated(
            "the cost equivalence holds for constant-impedance loads only".into(),
        ));
    }
    let cost = evaluate_cost(model, &spec.b_shunt, e_l, e_i, kappa);
    let hess = cost_hessian(model, &spec.b_shunt, kappa);
    let ev = linalg::sym_eigenvalues(&hess);
    let scale = ev.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let h_min = ev[0];
    if !(h_min > 1e-9 * scale) {
        return Ok(OptimalityVerdict {
            status: OptimalityStatus::HypothesisViolated,
            cost,
            gradient_norm: cost.gradient_norm,
            hessian_min_eigenvalue: h_min,
            minimizer_distance: None,
            minimizer: None,
            starts: 0,
            detail: format!("Hessian is not positive definite (smallest eigenvalue {h_min:.6e})"),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = stack(e_l, e_i);
    let mean = model.setpoints().mean();
    let opts = MinimizerOptions::default();
    let mut worst: f64 = 0.0;
    let mut best = None;
    for _ in 0..OPTIMALITY_STARTS {
        let start = Vector::from_fn(target.len(), |_, _| mean * rng.random_range(0.5..1.5));
        let x = minimize_cost(model, &spec.b_shunt, kappa, &start, &opts);
        worst = worst.max(linalg::max_norm(&(&x - &target)));
        best.get_or_insert(x);
    }
    let grad_ok = cost.gradient_norm <= 1e-8;
    let min_ok = worst <= 1e-6;
    let status = if grad_ok && min_ok {
        OptimalityStatus::Pass
    } else {
        OptimalityStatus::Fail
    };
    Ok(OptimalityVerdict {
        status,
        cost,
        gradient_norm: cost.gradient_norm,
        hessian_min_eigenvalue: h_min,
        minimizer_distance: Some(worst),
        minimizer: best,
        starts: OPTIMALITY_STARTS,
        detail: format!(
            "|grad C|_inf = {:.3e}, smallest Hessian eigenvalue {h_min:.6e}, max distance of {OPTIMALITY_STARTS} minimizations {worst:.3e}",
            cost.gradient_norm
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{solve_zi, SolverOptions};
    use crate::reduction::reduce_model;
    use crate::synth;

    fn v(x: &[f64]) -> Vector {
        Vector::from_vec(x.to_vec())
    }

    #[test]
    fn two_bus_cost_terms() {
        let model = synth::two_bus();
        let e_l = v(&[0.5 / 0.6]);
        let e_i = v(&[0.5 * (0.5 / 0.6 + 1.0)]);
        let c = evaluate_cost(&model, &v(&[-0.1]), &e_l, &e_i, &v(&[-1.0]));
        assert!((c.q_loss - 0.006_944_444).abs() < 1e-8);
        assert!((c.q_load - 0.069_444_444).abs() < 1e-8);
        assert!((c.c_volt - 0.006_944_444).abs() < 1e-8);
        assert!((c.c_total - 0.083_333_333).abs() < 1e-8);
        assert!(c.gradient_norm <= 1e-9);
    }

    #[test]
    fn flat_profile_costs_nothing() {
        let model = synth::fig1b_unit();
        let c = evaluate_cost(
            &model,
            &Vector::zeros(5),
            &linalg::ones(5),
            &linalg::ones(3),
            model.gains(),
        );
        assert_eq!(c.c_total, 0.0);
        assert_eq!(c.gradient_norm, 0.0);
    }

    #[test]
    fn quadratic_form_and_hessian_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..20 {
            let model = synth::random_network(&mut rng, 4, 3);
            let b = Vector::from_fn(4, |_, _| -rng.random_range(0.0..0.5));
            let kappa = Vector::from_fn(3, |_, _| -rng.random_range(0.2..3.0));
            let e_l = Vector::from_fn(4, |_, _| rng.random_range(0.7..1.2));
            let e_i = Vector::from_fn(3, |_, _| rng.random_range(0.7..1.2));
            let c = evaluate_cost(&model, &b, &e_l, &e_i, &kappa);
            let x = stack(&stack(&e_l, &e_i), model.setpoints());
            let q = cost_quadratic_form(&model, &b, &kappa);
            let quad = (x.transpose() * &q * &x)[(0, 0)];
            assert!((quad - c.c_total).abs() <= 1e-12 * c.c_total.abs().max(1.0));
            let h = cost_hessian(&model, &b, &kappa);
            let coef = coefficient_matrix(&model, &b, &kappa);
            assert!(linalg::max_abs(&(h + coef * 2.0)) <= 1e-12);

            // central differences of the gradient
            let g = cost_gradient(&model, &b, &e_l, &e_i, &kappa);
            let hstep = 1e-6;
            for k in 0..7 {
                let mut xp = stack(&e_l, &e_i);
                let mut xm = xp.clone();
                xp[k] += hstep;
                xm[k] -= hstep;
                let cp = evaluate_cost(
                    &model,
                    &b,
                    &xp.rows(0, 4).into_owned(),
                    &xp.rows(4, 3).into_owned(),
                    &kappa,
                )
                .c_total;
                let cm = evaluate_cost(
                    &model,
                    &b,
                    &xm.rows(0, 4).into_owned(),
                    &xm.rows(4, 3).into_owned(),
                    &kappa,
                )
                .c_total;
                let fd = (cp - cm) / (2.0 * hstep);
                assert!((fd - g[k]).abs() <= 1e-6 * g[k].abs().max(1.0));
            }
        }
    }

    #[test]
    fn open_circuit_is_not_optimal_under_load() {
        let model = synth::two_bus();
        let c = evaluate_cost(&model, &v(&[-0.1]), &v(&[1.0]), &v(&[1.0]), &v(&[-1.0]));
        assert!(c.gradient_norm > 0.1);
    }

    #[test]
    fn two_bus_verdict_passes() {
        let model = synth::two_bus();
        let red = reduce_model(&model).unwrap();
        let spec = LoadSpec::zi(v(&[-0.1]), v(&[0.0]));
        let sol = solve_zi(&red, &spec, &SolverOptions::default()).unwrap();
        let verdict =
            verify_optimality(&model, &spec, &sol.e_l, &sol.e_i, model.gains(), 1).unwrap();
        assert_eq!(verdict.status, OptimalityStatus::Pass, "{}", verdict.detail);
        let x = verdict.minimizer.unwrap();
        assert!((x[0] - 0.833_333_333_333).abs() < 1e-6);
        assert!((x[1] - 0.916_666_666_667).abs() < 1e-6);
    }

    #[test]
    fn capacitive_shunt_violates_hypothesis() {
        let model = synth::two_bus();
        let spec = LoadSpec::zi(v(&[0.8]), v(&[0.0]));
        let verdict =
            verify_optimality(&model, &spec, &v(&[1.0]), &v(&[1.0]), model.gains(), 1).unwrap();
        assert_eq!(verdict.status, OptimalityStatus::HypothesisViolated);
        assert!(verdict.hessian_min_eigenvalue < 0.0);
    }

    #[test]
    fn mismatched_weights_are_rejected() {
        let model = synth::two_bus();
        let spec = LoadSpec::zi(v(&[-0.1]), v(&[0.0]));
        let err =
            verify_optimality(&model, &spec, &v(&[1.0]), &v(&[1.0]), &v(&[-2.0]), 1).unwrap_err();
        assert!(matches!(err, Error::HypothesisViolated(_)));
    }

    #[test]
    fn unloaded_minimizer_is_flat() {
        let model = synth::fig1b_unit();
        let spec = LoadSpec::none(5);
        let verdict = verify_optimality(
            &model,
            &spec,
            &linalg::ones(5),
            &linalg::ones(3),
            model.gains(),
            3,
        )
        .unwrap();
        assert_eq!(verdict.status, OptimalityStatus::Pass, "{}", verdict.detail);
        assert_eq!(verdict.cost.c_total, 0.0);
    }
}
