//! Subcommand implementations. Each returns a report body plus whether the
//! analysis came out negative (unstable, collapsed, failed check).

use qdroop_core::equilibrium;
use qdroop_core::netfile::ParsedNetwork;
use qdroop_core::optimality::{self, OptimalityStatus};
use qdroop_core::reduction::{self, ReducedNetwork};
use qdroop_core::sharing::{self, SharingReport};
use qdroop_core::simulate::{Jitter, JITTER_DEFAULT_STD};
use qdroop_core::{
    build_susceptance, check_reduced_properties, effective_reactances, reduce_model, stability,
    validate_susceptance, EquilibriumSolution, Error, LoadKind, LoadSpec, NetworkModel, Result,
    SharingRegime, SimConfig, SimStatus, SolverOptions, ValidationReport, Vector,
};

use crate::json::Json;

pub struct Outcome {
    pub body: Json,
    /// The analysis completed but its answer is negative.
    pub negative: bool,
    pub warnings: Vec<String>,
    pub csv: Option<String>,
}

impl Outcome {
    fn new(body: Json, negative: bool) -> Self {
        Self {
            body,
            negative,
            warnings: Vec::new(),
            csv: None,
        }
    }
}

fn checks_json(report: &ValidationReport) -> Json {
    Json::Arr(
        report
            .items
            .iter()
            .map(|c| {
                Json::obj()
                    .with("name", c.name.as_str())
                    .with("passed", c.passed)
                    .with("detail", c.detail.as_str())
            })
            .collect(),
    )
}

fn model_json(net: &ParsedNetwork) -> Json {
    let m = &net.model;
    Json::obj()
        .with("n_loads", m.n_loads())
        .with("n_inverters", m.n_inverters())
        .with("n_branches", m.branches().len())
        .with("loads", m.load_names())
        .with("inverters", m.inverter_names())
        .with("load_model", net.loads.kind.as_str())
}

pub fn validate(net: &ParsedNetwork) -> Result<Outcome> {
    let blocks = build_susceptance(&net.model);
    let sus = validate_susceptance(&blocks);
    let mut body = Json::obj()
        .with("model", model_json(net))
        .with("susceptance_checks", checks_json(&sus.report))
        .with("susceptance_eigenvalues", sus.eigenvalues.as_slice());
    let mut passed = sus.report.passed();
    match reduce_model(&net.model) {
        Ok(red) => {
            let rep = check_reduced_properties(&red);
            passed &= rep.passed();
            body.push("reduction_checks", checks_json(&rep));
        }
        Err(e) => {
            passed = false;
            body.push("reduction_error", e.to_string());
        }
    }
    body.push("passed", passed);
    Ok(Outcome::new(body, !passed))
}

pub fn reduce(net: &ParsedNetwork) -> Result<Outcome> {
    let red = reduce_model(&net.model)?;
    let checks = check_reduced_properties(&red);
    let x = effective_reactances(&red.blocks)?;
    let body = Json::obj()
        .with("model", model_json(net))
        .with("b_red", &red.b_red)
        .with("w1", &red.w1)
        .with("w2", &red.w2)
        .with("e_l_star", &red.e_l_star)
        .with("condition_number", red.condition_number())
        .with("input_output_matrix", &reduction::input_output_matrix(&red))
        .with("effective_reactance", &x.x_eff)
        .with("checks", checks_json(&checks))
        .with("passed", checks.passed());
    Ok(Outcome::new(body, !checks.passed()))
}

fn solution_json(net: &ParsedNetwork, spec: &LoadSpec, sol: &EquilibriumSolution) -> Json {
    let q_l = spec.eval(&sol.e_l).ok();
    let q_i = sharing::realized_injections(net.model.gains(), net.model.setpoints(), &sol.e_i);
    let mut j = Json::obj()
        .with("method", sol.method.as_str())
        .with("load_model", spec.kind.as_str())
        .with("E_L", &sol.e_l)
        .with("E_I", &sol.e_i)
        .with("Q_L", q_l.as_ref())
        .with("Q_I", &q_i)
        .with("residual_reduced", sol.residual_reduced)
        .with("residual_full", sol.residual_full)
        .with("iterations", sol.iterations);
    if let Some(x) = sol.loading_norm {
        j.push("loading_norm", x);
    }
    if let Some(x) = sol.epsilon_norm {
        j.push("epsilon_norm", x);
    }
    if let Some(v) = &sol.first_order {
        j.push("first_order_E_L", v);
    }
    if let Some(v) = &sol.b_dyn {
        j.push("b_dyn", v);
    }
    j
}

fn solve_with(
    red: &ReducedNetwork,
    spec: &LoadSpec,
    opts: &SolverOptions,
) -> Result<EquilibriumSolution> {
    equilibrium::solve(red, spec, opts)
}

pub fn solve(
    net: &ParsedNetwork,
    model_kind: Option<LoadKind>,
    opts: &SolverOptions,
) -> Result<Outcome> {
    let spec = match model_kind {
        Some(k) => net.loads.with_kind(k),
        None => net.loads.clone(),
    };
    let red = reduce_model(&net.model)?;
    let sol = solve_with(&red, &spec, opts)?;
    let body = Json::obj()
        .with("model", model_json(net))
        .with("solution", solution_json(net, &spec, &sol));
    Ok(Outcome::new(body, false))
}

fn complex_json(v: &[qdroop_core::Complex<f64>]) -> Json {
    v.into()
}

pub fn stability(net: &ParsedNetwork, opts: &SolverOptions) -> Result<Outcome> {
    let red = reduce_model(&net.model)?;
    let sol = solve_with(&red, &net.loads, opts)?;
    let rep = stability::analyze(&net.model, &red, &net.loads, &sol, &net.tau)?;
    let stable = rep.stable();
    let body = Json::obj()
        .with("model", model_json(net))
        .with("solution", solution_json(net, &net.loads, &sol))
        .with("hurwitz", rep.hurwitz)
        .with("margin", rep.margin)
        .with("spectrum", complex_json(&rep.spectrum_red))
        .with("sufficient_condition", rep.sufficient_condition.as_str())
        .with("full_dae_spectrum", rep.gep_spectrum.as_deref())
        .with("full_dae_stable", rep.gep_stable())
        .with(
            "dynamic_shunt_spectrum",
            rep.ds_spectrum.as_deref().map(complex_json),
        )
        .with("dynamic_shunt_stable", rep.ds_stable())
        .with("consistent", rep.consistent)
        .with("stable", stable)
        .with("j_red", &rep.j_red)
        .with("notes", rep.notes.as_slice());
    Ok(Outcome::new(body, !stable))
}

fn sharing_json(r: &SharingReport) -> Json {
    Json::obj()
        .with("regime", r.regime.label())
        .with("S", &r.s)
        .with("Q_L", &r.q_l)
        .with("Q_I", &r.q_i)
        .with("shares", &r.shares)
        .with("proportional_error", r.proportional_error)
        .with("distance_error", r.distance_error)
        .with("distance_error_abs", r.distance_error_abs)
        .with("approximate", r.approximate)
}

pub enum ShareMode {
    GainScale(f64),
    High,
    Low,
}

pub fn share(net: &ParsedNetwork, mode: ShareMode, opts: &SolverOptions) -> Result<Outcome> {
    let (model, regime) = match mode {
        ShareMode::GainScale(eps) => (net.model.with_gain_scale(eps)?, SharingRegime::General(1.0)),
        ShareMode::High => (net.model.clone(), SharingRegime::HighGain),
        ShareMode::Low => (net.model.clone(), SharingRegime::LowGain),
    };
    let blocks = build_susceptance(&model);
    let red = reduce_model(&model)?;
    let mut warnings = Vec::new();
    // Load powers at the operating point when one exists, otherwise at the
    // open-circuit voltages.
    let sol = match solve_with(&red, &net.loads, opts) {
        Ok(s) => Some(s),
        Err(e) => {
            warnings.push(format!(
                "no equilibrium at this gain setting ({e}); load powers evaluated at open-circuit voltages"
            ));
            None
        }
    };
    let q_l = match &sol {
        Some(s) => net.loads.eval(&s.e_l)?,
        None => net.loads.eval(&red.e_l_star)?,
    };
    let rep = sharing::sharing_report(&model, &blocks, &q_l, regime)?;
    let mut body = Json::obj()
        .with("model", model_json(net))
        .with(
            "gain_scale",
            match mode {
                ShareMode::GainScale(eps) => Json::Num(eps),
                _ => Json::Null,
            },
        )
        .with("gains", model.gains())
        .with("linearized", sharing_json(&rep));
    if let Some(s) = &sol {
        let diag = sharing::sharing_diagnostics(&model, &blocks, &net.loads, s)?;
        body.push("realized", sharing_json(&diag));
    }
    body.push("equilibrium_found", sol.is_some());
    let mut out = Outcome::new(body, false);
    out.warnings = warnings;
    Ok(out)
}

pub fn optimality(net: &ParsedNetwork, opts: &SolverOptions) -> Result<Outcome> {
    let red = reduce_model(&net.model)?;
    let sol = solve_with(&red, &net.loads, opts)?;
    let kappa = net.model.gains().clone();
    let cost =
        optimality::evaluate_cost(&net.model, &net.loads.b_shunt, &sol.e_l, &sol.e_i, &kappa);
    let cost_json = Json::obj()
        .with("Q_loss", cost.q_loss)
        .with("Q_load", cost.q_load)
        .with("C_volt", cost.c_volt)
        .with("C_total", cost.c_total)
        .with("gradient_norm", cost.gradient_norm);
    let mut body = Json::obj()
        .with("model", model_json(net))
        .with("E_L", &sol.e_l)
        .with("E_I", &sol.e_i)
        .with("cost", cost_json);
    let negative = match optimality::verify_optimality(
        &net.model, &net.loads, &sol.e_l, &sol.e_i, &kappa, 0,
    ) {
        Ok(v) => {
            body.push(
                "status",
                match v.status {
                    OptimalityStatus::Pass => "pass",
                    OptimalityStatus::Fail => "fail",
                    OptimalityStatus::HypothesisViolated => "hypothesis_violated",
                },
            );
            body.push("hessian_min_eigenvalue", v.hessian_min_eigenvalue);
            body.push("minimizer_distance", v.minimizer_distance);
            body.push("starts", v.starts);
            body.push("detail", v.detail);
            v.status != OptimalityStatus::Pass
        }
        Err(Error::HypothesisViolated(msg)) => {
            body.push("status", "hypothesis_violated");
            body.push("detail", msg);
            true
        }
        Err(e) => return Err(e),
    };
    Ok(Outcome::new(body, negative))
}

pub struct SimOverrides {
    pub gain_scale: Option<f64>,
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
    pub jitter: Option<Option<f64>>,
    pub seed: Option<u64>,
}

pub fn simulate(net: &ParsedNetwork, ov: &SimOverrides) -> Result<Outcome> {
    let mut cfg = match (&net.simulation, ov.dt, ov.t_end) {
        (Some(c), _, _) => c.clone(),
        (None, Some(dt), Some(t_end)) => SimConfig::new(net.tau.clone(), dt, t_end),
        (None, _, _) => {
            return Err(Error::Validation(vec![
                "no [simulation] section; pass --dt and --t-end".into(),
            ]))
        }
    };
    if let Some(dt) = ov.dt {
        cfg.dt = dt;
    }
    if let Some(t) = ov.t_end {
        cfg.t_end = t;
    }
    if let Some(j) = ov.jitter {
        let std = j.unwrap_or(JITTER_DEFAULT_STD);
        let seed = ov.seed.or(cfg.jitter.map(|j| j.seed)).unwrap_or(0);
        cfg.jitter = Some(Jitter { std, seed });
    } else if let (Some(seed), Some(j)) = (ov.seed, cfg.jitter.as_mut()) {
        j.seed = seed;
    }
    let model: NetworkModel = match ov.gain_scale {
        Some(eps) => net.model.with_gain_scale(eps)?,
        None => net.model.clone(),
    };
    let trace = qdroop_core::simulate(&model, &net.loads, &cfg)?;
    let max_res = trace.residual.iter().copied().fold(0.0, f64::max);
    let collapsed = trace.status == SimStatus::Collapsed;
    let body = Json::obj()
        .with("model", model_json(net))
        .with("gain_scale", ov.gain_scale)
        .with("dt", cfg.dt)
        .with("t_end", cfg.t_end)
        .with(
            "jitter",
            cfg.jitter
                .map(|j| Json::obj().with("std", j.std).with("seed", j.seed)),
        )
        .with("status", trace.status.as_str())
        .with("collapse_time", trace.collapse_time)
        .with("message", trace.message.clone())
        .with("steps", trace.len().saturating_sub(1))
        .with("final_time", trace.final_time())
        .with("final_E_L", trace.final_e_l())
        .with("final_E_I", trace.final_e_i())
        .with("final_b_dyn", trace.final_b_dyn())
        .with(
            "final_Q_I",
            trace.q_i.last().map(|v: &Vector| Json::from(v)),
        )
        .with("max_algebraic_residual", max_res);
    let mut out = Outcome::new(body, collapsed);
    out.csv = Some(trace.to_csv());
    Ok(out)
}
