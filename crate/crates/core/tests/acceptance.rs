//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::path::PathBuf;
use std::time::Instant;

use qdroop_core::equilibrium::solve_full_newton;
use qdroop_core::linalg::{matrix_inf_norm, max_norm};
use qdroop_core::optimality::evaluate_cost;
use qdroop_core::sharing::{
    gain_shares, high_gain_limit, high_gain_matrix, high_gain_matrix_from_distances,
    low_gain_matrix, shares, sharing_matrix,
};
use qdroop_core::stability::{
    certify_hurwitz, full_dae_spectrum, reduced_jacobian, sufficient_condition,
};
use qdroop_core::{
    build_susceptance, effective_reactances, linalg, netfile, reduce_model, simulate,
    solve_dynamic_shunt, solve_newton, solve_zi, solve_zip_perturbative, synth, verify_optimality,
    LoadSpec, Matrix, NetworkModel, SimConfig, SimStatus, SolverOptions, SufficientCondition,
    Vector,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_model(rng: &mut ChaCha8Rng, max_n: usize, max_m: usize) -> NetworkModel {
    let n = rng.random_range(1..=max_n);
    let m = rng.random_range(1..=max_m);
    synth::random_network(rng, n, m)
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

fn v(x: &[f64]) -> Vector {
    Vector::from_row_slice(x)
}

/// Reduced solutions lift to full equilibria, and full Newton from a
/// perturbed start returns to the same point.
fn lift_to_full() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let opts = SolverOptions::default();
    let mut worst_res = 0.0_f64;
    let mut worst_gap = 0.0_f64;
    let mut failures = Vec::new();
    for k in 0..100 {
        let model = random_model(&mut rng, 10, 10);
        let red = reduce_model(&model).unwrap();
        let spec = synth::random_zi_loads(&mut rng, &red);
        let sol = match solve_zi(&red, &spec, &opts) {
            Ok(s) => s,
            Err(e) => {
                failures.push(format!("#{k}: {e}"));
                continue;
            }
        };
        worst_res = worst_res.max(sol.residual_full);
        let jitter = |rng: &mut ChaCha8Rng, x: &Vector| {
            x.map(|xi| xi * (1.0 + rng.random_range(-0.05..0.05)))
        };
        let init_l = jitter(&mut rng, &sol.e_l);
        let init_i = jitter(&mut rng, &sol.e_i);
        match solve_full_newton(&model, &spec, &init_l, &init_i, &opts) {
            Ok(full) => {
                let gap = max_norm(&(&full.e_l - &sol.e_l)).max(max_norm(&(&full.e_i - &sol.e_i)));
                worst_gap = worst_gap.max(gap);
            }
            Err(e) => failures.push(format!("#{k} full Newton: {e}")),
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        failures.is_empty() && worst_res <= 1e-9 && worst_gap <= 1e-7 && secs < 10.0,
        format!(
            "max full residual {worst_res:.2e}, max recovery gap {worst_gap:.2e}, {secs:.2} s, failures {failures:?}"
        ),
    )
}

/// Closed-form ZI solution agrees with Newton, its Jacobian has the
/// structured form `[E](B_red + [b])`, and it is Hurwitz.
fn zi_closed_form_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let opts = SolverOptions::default();
    let mut worst_gap = 0.0_f64;
    let mut worst_jac = 0.0_f64;
    let mut not_hurwitz = 0;
    let mut failures = Vec::new();
    for k in 0..100 {
        let model = random_model(&mut rng, 10, 10);
        let red = reduce_model(&model).unwrap();
        let spec = synth::random_zi_loads(&mut rng, &red);
        let (zi, newton) = match (
            solve_zi(&red, &spec, &opts),
            solve_newton(&red, &spec, &opts),
        ) {
            (Ok(a), Ok(b)) => (a, b),
            (a, b) => {
                failures.push(format!("#{k}: {:?} / {:?}", a.err(), b.err()));
                continue;
            }
        };
        worst_gap = worst_gap.max(max_norm(&(&zi.e_l - &newton.e_l)));
        let j = reduced_jacobian(&red, &spec, &zi.e_l).unwrap();
        let structured = linalg::diag(&zi.e_l) * (&red.b_red + linalg::diag(&spec.b_shunt));
        worst_jac = worst_jac.max(matrix_inf_norm(&(j.clone() - structured)));
        if !certify_hurwitz(&j).unwrap().hurwitz {
            not_hurwitz += 1;
        }
    }
    outcome(
        failures.is_empty() && worst_gap <= 1e-8 && worst_jac <= 1e-12 && not_hurwitz == 0,
        format!(
            "max |E_ZI - E_Newton| {worst_gap:.2e}, max Jacobian mismatch {worst_jac:.2e}, non-Hurwitz {not_hurwitz}, failures {failures:?}"
        ),
    )
}

fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|a| a.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|a| a.ln()).collect();
    let mx = lx.iter().sum::<f64>() / lx.len() as f64;
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// First-order ZIP approximation: two-bus values and second-order error
/// decay on random instances.
fn perturbative_accuracy() -> Outcome {
    let opts = SolverOptions::default();
    let red = reduce_model(&synth::two_bus()).unwrap();
    let spec = LoadSpec::zip(v(&[-0.1]), v(&[0.0]), v(&[-0.05]));
    let sol = solve_zip_perturbative(&red, &spec, &opts).unwrap();
    let first = sol.first_order.as_ref().unwrap()[0];
    let exact = (0.5 + (0.25_f64 - 0.12).sqrt()) / 1.2;
    let two_bus_ok = (first - 0.7333).abs() < 5e-5
        && (sol.e_l[0] - 0.71713).abs() < 5e-6
        && (sol.e_l[0] - exact).abs() < 1e-10;

    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut min_slope = f64::INFINITY;
    let mut failures = Vec::new();
    for k in 0..20 {
        let model = random_model(&mut rng, 8, 5);
        let red = reduce_model(&model).unwrap();
        let base = synth::random_zip_loads(&mut rng, &red, 0.2);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for s in [1.0, 0.5, 0.25, 0.125] {
            match solve_zip_perturbative(&red, &base.with_q_scaled(s), &opts) {
                Ok(sol) => {
                    xs.push(sol.loading_norm.unwrap());
                    ys.push(sol.epsilon_norm.unwrap());
                }
                Err(e) => failures.push(format!("#{k} scale {s}: {e}")),
            }
        }
        if xs.len() == 4 {
            min_slope = min_slope.min(fit_slope(&xs, &ys));
        }
    }
    outcome(
        two_bus_ok && failures.is_empty() && min_slope >= 1.8,
        format!(
            "two-bus first order {first:.4}, exact {:.5}; min log-log slope {min_slope:.3}; failures {failures:?}",
            sol.e_l[0]
        ),
    )
}

/// Stability certificates are mutually consistent and the full DAE signs
/// do not depend on the inverter time constants.
fn stability_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let opts = SolverOptions::default();
    let mut implication_violations = 0;
    let mut sign_mismatch = 0;
    let mut tau_mismatch = 0;
    let mut holds = 0;
    let mut failures = Vec::new();
    for k in 0..200 {
        let model = random_model(&mut rng, 8, 5);
        let red = reduce_model(&model).unwrap();
        let spec = if k % 2 == 0 {
            let loading = rng.random_range(0.02..0.25);
            synth::random_zip_loads(&mut rng, &red, loading)
        } else {
            let loading = rng.random_range(0.02..0.2);
            synth::random_constant_power(&mut rng, &red, loading)
        };
        let sol = match qdroop_core::solve(&red, &spec, &opts) {
            Ok(s) => s,
            Err(e) => {
                failures.push(format!("#{k}: {e}"));
                continue;
            }
        };
        let j = reduced_jacobian(&red, &spec, &sol.e_l).unwrap();
        let hurwitz = certify_hurwitz(&j).unwrap().hurwitz;
        if sufficient_condition(&red, &spec, &sol.e_l).unwrap() == SufficientCondition::Holds {
            holds += 1;
            if !hurwitz {
                implication_violations += 1;
            }
        }
        let tau = synth::random_tau(&mut rng, model.n_inverters());
        let gep = full_dae_spectrum(&model, &spec, &sol.e_l, &sol.e_i, &tau).unwrap();
        let gep_slow =
            full_dae_spectrum(&model, &spec, &sol.e_l, &sol.e_i, &(&tau * 10.0)).unwrap();
        let stable = gep.iter().all(|&x| x < 0.0);
        if stable != hurwitz {
            sign_mismatch += 1;
        }
        let signs = |ev: &[f64]| ev.iter().map(|&x| x < 0.0).collect::<Vec<_>>();
        if signs(&gep) != signs(&gep_slow) {
            tau_mismatch += 1;
        }
    }
    outcome(
        failures.is_empty() && implication_violations == 0 && sign_mismatch == 0 && tau_mismatch == 0,
        format!(
            "sufficient condition held on {holds}/200; violations {implication_violations}, \
             J_red vs DAE mismatches {sign_mismatch}, tau-scaling mismatches {tau_mismatch}, failures {failures:?}"
        ),
    )
}

/// The equilibrium minimizes the network cost when the weights equal the gains.
fn optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let opts = SolverOptions::default();
    let mut worst_dist = 0.0_f64;
    let mut worst_grad = 0.0_f64;
    let mut failures = Vec::new();
    for k in 0..100 {
        let model = random_model(&mut rng, 6, 4);
        let red = reduce_model(&model).unwrap();
        let spec = synth::random_z_loads(&mut rng, &red);
        let sol = solve_zi(&red, &spec, &opts).unwrap();
        match verify_optimality(&model, &spec, &sol.e_l, &sol.e_i, model.gains(), k) {
            Ok(verdict) => {
                worst_grad = worst_grad.max(verdict.gradient_norm);
                match verdict.minimizer_distance {
                    Some(d) => worst_dist = worst_dist.max(d),
                    None => failures.push(format!("#{k}: no minimizer found")),
                }
            }
            Err(e) => failures.push(format!("#{k}: {e}")),
        }
    }
    let two = synth::two_bus();
    let e_l = v(&[5.0 / 6.0]);
    let e_i = v(&[11.0 / 12.0]);
    let c = evaluate_cost(&two, &v(&[-0.1]), &e_l, &e_i, two.gains()).c_total;
    outcome(
        failures.is_empty() && worst_dist <= 1e-6 && worst_grad <= 1e-8 && (c - 0.083333).abs() < 5e-7,
        format!(
            "max minimizer distance {worst_dist:.2e}, max gradient {worst_grad:.2e}, two-bus cost {c:.6}, failures {failures:?}"
        ),
    )
}

/// Sharing matrix limits at extreme gain scales and on reference networks.
fn sharing_limits() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut worst_high = 0.0_f64;
    let mut worst_low = 0.0_f64;
    for _ in 0..50 {
        let model = random_model(&mut rng, 8, 5);
        let blocks = build_susceptance(&model);
        let gains = model.gains();
        let high = high_gain_matrix(&blocks).unwrap();
        let s_hi = sharing_matrix(&blocks, gains, 1e8).unwrap();
        worst_high = worst_high.max(matrix_inf_norm(&(s_hi - &high)) / matrix_inf_norm(&high));
        let s_lo = sharing_matrix(&blocks, gains, 1e-6).unwrap();
        let low = low_gain_matrix(gains, model.n_loads());
        worst_low = worst_low.max((s_lo - low).abs().max());
    }
    let star = synth::star(2.0, 1.0, [-1.0, -1.0]);
    let star_shares = shares(&high_gain_limit(&build_susceptance(&star), &v(&[-1.0])).unwrap());
    let star_ok =
        (star_shares[0] - 2.0 / 3.0).abs() <= 1e-10 && (star_shares[1] - 1.0 / 3.0).abs() <= 1e-10;
    let low = gain_shares(synth::fig1b_unit().gains());
    let low_ok = low.as_slice() == [0.4, 0.4, 0.2];
    outcome(
        worst_high <= 1e-6 && worst_low <= 1e-4 && star_ok && low_ok,
        format!(
            "high-gain relative gap {worst_high:.2e}, low-gain gap {worst_low:.2e}, star shares ({:.12}, {:.12}), low shares {:?}",
            star_shares[0],
            star_shares[1],
            low.as_slice()
        ),
    )
}

/// Dynamic-shunt simulations settle on the static solution; the reference
/// microgrid collapses only at reduced gains.
fn simulation() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let opts = SolverOptions::default();
    let mut worst = 0.0_f64;
    let mut failures = Vec::new();
    for k in 0..10 {
        let model = random_model(&mut rng, 5, 3);
        let red = reduce_model(&model).unwrap();
        let q = synth::random_constant_power(&mut rng, &red, 0.05).q_const;
        let t = Vector::from_fn(model.n_loads(), |_, _| rng.random_range(0.1..0.5));
        let spec = LoadSpec::dynamic_shunt(q, t);
        let target = match solve_dynamic_shunt(&red, &spec, &opts) {
            Ok(s) => s,
            Err(e) => {
                failures.push(format!("#{k}: {e}"));
                continue;
            }
        };
        let mut cfg = SimConfig::new(
            synth::random_tau(&mut rng, model.n_inverters()),
            0.05,
            400.0,
        );
        cfg.steady_tol = 1e-10;
        cfg.stop_when_settled = true;
        match simulate(&model, &spec, &cfg) {
            Ok(trace) if trace.status == SimStatus::Converged => {
                worst = worst.max(max_norm(&(trace.final_e_l() - &target.e_l)));
            }
            Ok(trace) => failures.push(format!("#{k}: ended {}", trace.status.as_str())),
            Err(e) => failures.push(format!("#{k}: {e}")),
        }
    }

    let net = netfile::parse_file(fixture("fig1b.net")).unwrap();
    let cfg = net.simulation.clone().unwrap();
    let stiff = simulate(&net.model, &net.loads, &cfg).unwrap();
    let weak = simulate(&net.model.with_gain_scale(0.05).unwrap(), &net.loads, &cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        failures.is_empty()
            && worst <= 1e-6
            && stiff.status == SimStatus::Converged
            && weak.status == SimStatus::Collapsed
            && secs < 30.0,
        format!(
            "max |E_sim - E_static| {worst:.2e}; reference grid: full gains {}, 5% gains {} at {:?} s; {secs:.2} s; failures {failures:?}",
            stiff.status.as_str(),
            weak.status.as_str(),
            weak.collapse_time
        ),
    )
}

/// Effective-reactance double sum reproduces `B_IL B_LL^-1`.
fn distance_formula() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut worst = 0.0_f64;
    for _ in 0..50 {
        let model = random_model(&mut rng, 8, 5);
        let blocks = build_susceptance(&model);
        let direct: Matrix = high_gain_matrix(&blocks).unwrap();
        let via = high_gain_matrix_from_distances(&effective_reactances(&blocks).unwrap());
        worst = worst.max((direct - via).abs().max());
    }
    outcome(worst <= 1e-12, format!("max entry gap {worst:.2e}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("reduced solutions lift to full equilibria", lift_to_full),
        (
            "closed-form ZI solution, structured Jacobian, Hurwitz",
            zi_closed_form_checks,
        ),
        (
            "first-order ZIP accuracy and quadratic error decay",
            perturbative_accuracy,
        ),
        ("stability certificates agree", stability_consistency),
        ("equilibrium minimizes the network cost", optimality),
        ("sharing matrix gain limits", sharing_limits),
        ("dynamic-shunt simulation and collapse", simulation),
        ("effective-reactance sharing formula", distance_formula),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let out = check();
        let tag = if out.pass { "PASS" } else { "FAIL" };
        println!("{tag} criterion {}: {name}: {}", k + 1, out.detail);
        if !out.pass {
            failed += 1;
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
