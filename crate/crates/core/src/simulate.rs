//! Time integration of the closed-loop differential-algebraic system
//!
//! ```text
//! 0           = Q_L(E_L) + [E_L] (B E)_L
//! tau_I E_I'  = [E_I] K (E_I - E_I*) + [E_I] (B E)_I
//! T b_dyn'    = Q_L - [E_L]^2 b_dyn          (dynamic shunt buses only)
//! ```
//!
//! Each step is implicit Euler: the load voltages, inverter voltages and
//! shunt states at the new time are solved together by damped Newton,
//! warm-started from the previous step. A step whose solve fails is retried
//! as two half steps a few times before the run is declared collapsed.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::loads::{LoadKind, LoadSpec};
use crate::netmodel::{build_susceptance, NetworkModel, SusceptanceBlocks};
use crate::reduction::reduce_model;
use crate::stability::{self, FullJacobian};

/// Default standard deviation of the optional multiplicative load jitter.
pub const JITTER_DEFAULT_STD: f64 = 0.15;

#[derive(Debug, Clone, PartialEq)]
pub enum EventAction {
    /// Multiply the nominal coefficients of the listed buses.
    Scale(f64),
    /// Overwrite individual coefficients.
    Set {
        b_shunt: Option<f64>,
        i_shunt: Option<f64>,
        q: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadEvent {
    pub time: f64,
    pub buses: Vec<usize>,
    pub action: EventAction,
}

/// Multiplies the coefficients of the listed buses by
/// `1 + amplitude * sin(2 pi (t - start) / period)` for `start <= t < end`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinusoid {
    pub start: f64,
    pub end: f64,
    pub buses: Vec<usize>,
    pub amplitude: f64,
    pub period: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DisturbanceSchedule {
    pub events: Vec<LoadEvent>,
    pub sinusoids: Vec<Sinusoid>,
}

impl DisturbanceSchedule {
    pub fn is_empty(&self) -> bool {
        self.events.is_empty() && self.sinusoids.is_empty()
    }

    pub fn validate(&self, base: &LoadSpec) -> Result<()> {
        let n = base.len();
        let mut errs = Vec::new();
        let mut last = f64::NEG_INFINITY;
        for (k, ev) in self.events.iter().enumerate() {
            if !ev.time.is_finite() || ev.time < 0.0 {
                errs.push(format!("event {k}: time must be finite and nonnegative"));
            }
            if ev.time < last {
                errs.push(format!("event {k}: event times must be nondecreasing"));
            }
            last = last.max(ev.time);
            if ev.buses.is_empty() || ev.buses.iter().any(|&b| b >= n) {
                errs.push(format!("event {k}: bus list is empty or out of range"));
            }
            match ev.action {
                EventAction::Scale(f) => {
                    if !(f >= 0.0 && f.is_finite()) {
                        errs.push(format!("event {k}: scale factor must be nonnegative"));
                    }
                }
                EventAction::Set {
                    b_shunt,
                    i_shunt,
                    q,
                } => {
                    if [b_shunt, i_shunt, q]
                        .iter()
                        .flatten()
                        .any(|x| !x.is_finite())
                    {
                        errs.push(format!("event {k}: values must be finite"));
                    }
                    if let Some(q) = q {
                        if q > 0.0 {
                            errs.push(format!(
                                "event {k}: constant-power overwrite must be consuming (q <= 0)"
                            ));
                        }
                        if base.kind == LoadKind::DynamicShunt
                            && ev.buses.iter().any(|&b| b < n && base.q_const[b] == 0.0)
                        {
                            errs.push(format!(
                                "event {k}: cannot set q on a bus without shunt dynamics"
                            ));
                        }
                    }
                }
            }
        }
        for (k, s) in self.sinusoids.iter().enumerate() {
            if !(s.start.is_finite() && s.end.is_finite() && s.start < s.end) {
                errs.push(format!("sinusoid {k}: need start < end"));
            }
            if !(0.0..1.0).contains(&s.amplitude) {
                errs.push(format!("sinusoid {k}: amplitude must lie in [0, 1)"));
            }
            if !(s.period > 0.0 && s.period.is_finite()) {
                errs.push(format!("sinusoid {k}: period must be positive"));
            }
            if s.buses.is_empty() || s.buses.iter().any(|&b| b >= n) {
                errs.push(format!("sinusoid {k}: bus list is empty or out of range"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }

    /// Load coefficients in force at time `t`.
    pub fn params_at(&self, base: &LoadSpec, t: f64) -> LoadSpec {
        let mut p = base.clone();
        for ev in self.events.iter().filter(|e| e.time <= t) {
            for &bus in &ev.buses {
                match ev.action {
                    EventAction::Scale(f) => {
                        p.b_shunt[bus] = base.b_shunt[bus] * f;
                        p.i_shunt[bus] = base.i_shunt[bus] * f;
                        p.q_const[bus] = base.q_const[bus] * f;
                    }
                    EventAction::Set {
                        b_shunt,
                        i_shunt,
                        q,
                    } => {
                        if let Some(x) = b_shunt {
                            p.b_shunt[bus] = x;
                        }
                        if let Some(x) = i_shunt {
                            p.i_shunt[bus] = x;
                        }
                        if let Some(x) = q {
                            p.q_const[bus] = x;
                        }
                    }
                }
            }
        }
        for s in self.sinusoids.iter().filter(|s| s.start <= t && t < s.end) {
            let f =
                1.0 + s.amplitude * (2.0 * std::f64::consts::PI * (t - s.start) / s.period).sin();
            for &bus in &s.buses {
                p.b_shunt[bus] *= f;
                p.i_shunt[bus] *= f;
                p.q_const[bus] *= f;
            }
        }
        p
    }

    /// Time after which the schedule no longer changes the loads.
    pub fn last_change(&self) -> f64 {
        let ev = self.events.iter().map(|e| e.time);
        let sn = self.sinusoids.iter().map(|s| s.end);
        ev.chain(sn).fold(0.0, f64::max)
    }
}

/// Seeded multiplicative load noise: every step each load's coefficients are
/// scaled by `1 + u`, `u` uniform with the given standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jitter {
    pub std: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Inverter time constants in seconds.
    pub tau: Vector,
    pub dt: f64,
    pub t_end: f64,
    /// Newton tolerance per step; must not exceed 1e-8.
    pub algebraic_tol: f64,
    /// State rate below which the final state counts as converged.
    pub steady_tol: f64,
    pub schedule: DisturbanceSchedule,
    pub jitter: Option<Jitter>,
    /// End the run early once settled and no disturbance remains.
    pub stop_when_settled: bool,
    /// Iterates with a load voltage below this fraction of `min(E_L*)` are collapse.
    pub collapse_fraction: f64,
    /// How many times a failed step may be split in half.
    pub max_step_splits: usize,
}

impl SimConfig {
    pub fn new(tau: Vector, dt: f64, t_end: f64) -> Self {
        Self {
            tau,
            dt,
            t_end,
            algebraic_tol: 1e-10,
            steady_tol: 1e-6,
            schedule: DisturbanceSchedule::default(),
            jitter: None,
            stop_when_settled: false,
            collapse_fraction: 0.1,
            max_step_splits: 5,
        }
    }

    pub fn validate(&self, m: usize, spec: &LoadSpec) -> Result<()> {
        let mut errs = Vec::new();
        if self.tau.len() != m || self.tau.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            errs.push(format!(
                "need {m} strictly positive inverter time constants"
            ));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            errs.push("dt must be positive".into());
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            errs.push("t_end must be positive".into());
        }
        if !(self.algebraic_tol > 0.0 && self.algebraic_tol <= 1e-8) {
            errs.push("algebraic_tol must lie in (0, 1e-8]".into());
        }
        if !(self.steady_tol > 0.0) {
            errs.push("steady_tol must be positive".into());
        }
        if let Some(j) = self.jitter {
            if !(0.0..1.0 / 3f64.sqrt()).contains(&j.std) {
                errs.push("jitter standard deviation must lie in [0, 0.577)".into());
            }
        }
        if let Err(Error::Validation(e)) = self.schedule.validate(spec) {
            errs.extend(e);
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimStatus {
    Converged,
    Running,
    Collapsed,
}

impl SimStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SimStatus::Converged => "converged",
            SimStatus::Running => "running",
            SimStatus::Collapsed => "collapsed",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimTrace {
    pub t: Vec<f64>,
    pub e_l: Vec<Vector>,
    pub e_i: Vec<Vector>,
    /// Shunt susceptances per load bus (zero on buses without shunt dynamics).
    pub b_dyn: Vec<Vector>,
    /// Realized inverter injections `-E_i (B E)_i`.
    pub q_i: Vec<Vector>,
    /// Max-norm of the load-balance rows at each stored point.
    pub residual: Vec<f64>,
    pub status: SimStatus,
    pub collapse_time: Option<f64>,
    pub message: Option<String>,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn final_time(&self) -> f64 {
        *self.t.last().unwrap_or(&0.0)
    }

    pub fn final_e_l(&self) -> &Vector {
        self.e_l.last().expect("trace has at least one point")
    }

    pub fn final_e_i(&self) -> &Vector {
        self.e_i.last().expect("trace has at least one point")
    }

    pub fn final_b_dyn(&self) -> &Vector {
        self.b_dyn.last().expect("trace has at least one point")
    }

    /// CSV with columns `t, E_L_*, E_I_*, bdyn_*, Q_I_*, status`. Numbers
    /// carry nine significant digits; every row but the last is `running`,
    /// the last carries the terminal status.
    pub fn to_csv(&self) -> String {
        let n = self.e_l.first().map_or(0, |v| v.len());
        let m = self.e_i.first().map_or(0, |v| v.len());
        let mut out = String::from("t");
        for i in 1..=n {
            let _ = write!(out, ",E_L_{i}");
        }
        for i in 1..=m {
            let _ = write!(out, ",E_I_{i}");
        }
        for i in 1..=n {
            let _ = write!(out, ",bdyn_{i}");
        }
        for i in 1..=m {
            let _ = write!(out, ",Q_I_{i}");
        }
        out.push_str(",status\n");
        let last = self.t.len().saturating_sub(1);
        for k in 0..self.t.len() {
            let _ = write!(out, "{:.8e}", self.t[k]);
            for v in [&self.e_l[k], &self.e_i[k], &self.b_dyn[k], &self.q_i[k]] {
                for x in v.iter() {
                    let _ = write!(out, ",{x:.8e}");
                }
            }
            let status = if k == last {
                self.status.as_str()
            } else {
                SimStatus::Running.as_str()
            };
            out.push(',');
            out.push_str(status);
            out.push('\n');
        }
        out
    }
}

/// Full Jacobian `J = [E] B + [B E] + D` of the right-hand side at a state.
pub fn linearize_at(
    model: &NetworkModel,
    spec: &LoadSpec,
    e_l: &Vector,
    e_i: &Vector,
) -> FullJacobian {
    let blocks = build_susceptance(model);
    let e = crate::equilibrium::stack(e_l, e_i);
    stability::full_jacobian(&blocks, spec, model.gains(), model.setpoints(), &e)
}

/// Differential state carried between steps.
#[derive(Debug, Clone)]
struct State {
    e_l: Vector,
    e_i: Vector,
    /// One entry per dynamic bus.
    b: Vector,
}

struct Integrator<'a> {
    model: &'a NetworkModel,
    blocks: SusceptanceBlocks,
    base: &'a LoadSpec,
    cfg: &'a SimConfig,
    dyn_buses: Vec<usize>,
    floor: f64,
}

impl Integrator<'_> {
    fn n(&self) -> usize {
        self.model.n_loads()
    }

    fn m(&self) -> usize {
        self.model.n_inverters()
    }

    /// Static coefficients seen by the load-balance rows. Dynamic shunt
    /// buses draw their constant-power demand through `b_dyn` instead.
    fn static_params(&self, p: &LoadSpec) -> LoadSpec {
        if p.kind == LoadKind::DynamicShunt {
            p.zi_part()
        } else {
            p.clone()
        }
    }

    fn b_full(&self, b: &Vector) -> Vector {
        let mut full = Vector::zeros(self.n());
        for (r, &bus) in self.dyn_buses.iter().enumerate() {
            full[bus] = b[r];
        }
        full
    }

    /// Residual and Jacobian of one implicit Euler step of length `h`
    /// (`h = inf` gives the purely algebraic problem with `E_I`, `b` frozen).
    fn system(
        &self,
        z: &Vector,
        prev: &State,
        p: &LoadSpec,
        h: f64,
        algebraic_only: bool,
    ) -> (Vector, Matrix) {
        let n = self.n();
        let m = self.m();
        let nd = self.dyn_buses.len();
        let e = z.rows(0, n + m).into_owned();
        let b = z.rows(n + m, nd).into_owned();
        let e_l = e.rows(0, n).into_owned();
        let stat = self.static_params(p);
        let b_full = self.b_full(&b);
        let be = &self.blocks.full * &e;
        let gains = self.model.gains();
        let set = self.model.setpoints();

        let size = n + m + nd;
        let mut r = Vector::zeros(size);
        let q = stat.eval_unchecked(&e_l);
        for i in 0..n {
            r[i] = q[i] + b_full[i] * e_l[i] * e_l[i] + e_l[i] * be[i];
        }
        for k in 0..m {
            let ek = e[n + k];
            r[n + k] = ek * gains[k] * (ek - set[k]) + ek * be[n + k];
            if !algebraic_only {
                r[n + k] -= self.cfg.tau[k] * (ek - prev.e_i[k]) / h;
            }
        }
        for (row, &bus) in self.dyn_buses.iter().enumerate() {
            let el = e_l[bus];
            r[n + m + row] = p.q_const[bus] - el * el * b[row];
            if !algebraic_only {
                r[n + m + row] -= p.t[bus] * (b[row] - prev.b[row]) / h;
            }
        }

        let fj = stability::full_jacobian(&self.blocks, &stat, gains, set, &e);
        let mut j = Matrix::zeros(size, size);
        j.view_mut((0, 0), (n + m, n + m)).copy_from(&fj.j);
        for i in 0..n {
            j[(i, i)] += 2.0 * b_full[i] * e_l[i];
        }
        if !algebraic_only {
            for k in 0..m {
                j[(n + k, n + k)] -= self.cfg.tau[k] / h;
            }
        }
        for (row, &bus) in self.dyn_buses.iter().enumerate() {
            let el = e_l[bus];
            j[(bus, n + m + row)] = el * el;
            j[(n + m + row, bus)] = -2.0 * el * b[row];
            j[(n + m + row, n + m + row)] =
                -el * el - if algebraic_only { 0.0 } else { p.t[bus] / h };
        }
        if algebraic_only {
            // Freeze E_I and b: identity rows.
            for k in n..size {
                j.row_mut(k).fill(0.0);
                j[(k, k)] = 1.0;
                r[k] = 0.0;
            }
        }
        (r, j)
    }

    fn pack(&self, s: &State) -> Vector {
        let n = self.n();
        let m = self.m();
        let nd = self.dyn_buses.len();
        let mut z = Vector::zeros(n + m + nd);
        z.rows_mut(0, n).copy_from(&s.e_l);
        z.rows_mut(n, m).copy_from(&s.e_i);
        z.rows_mut(n + m, nd).copy_from(&s.b);
        z
    }

    fn unpack(&self, z: &Vector) -> State {
        let n = self.n();
        let m = self.m();
        let nd = self.dyn_buses.len();
        State {
            e_l: z.rows(0, n).into_owned(),
            e_i: z.rows(n, m).into_owned(),
            b: z.rows(n + m, nd).into_owned(),
        }
    }

    /// Damped Newton for one step; `None` if it fails.
    fn newton(
        &self,
        prev: &State,
        p: &LoadSpec,
        h: f64,
        algebraic_only: bool,
    ) -> Option<(State, f64)> {
        let nm = self.n() + self.m();
        let mut z = self.pack(prev);
        let (mut r, mut j) = self.system(&z, prev, p, h, algebraic_only);
        let mut norm = linalg::max_norm(&r);
        for _ in 0..50 {
            if norm <= self.cfg.algebraic_tol {
                let s = self.unpack(&z);
                let load_res = linalg::max_norm(&r.rows(0, self.n()).into_owned());
                return Some((s, load_res));
            }
            let step = linalg::lu_solve_vec(&j, &(-&r), "step Jacobian").ok()?;
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let zt = &z + &step * alpha;
                if zt.rows(0, nm).iter().all(|&v| v > 0.0) {
                    let (rt, jt) = self.system(&zt, prev, p, h, algebraic_only);
                    let nt = linalg::max_norm(&rt);
                    if nt < norm {
                        z = zt;
                        r = rt;
                        j = jt;
                        norm = nt;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                return None;
            }
        }
        None
    }

    /// Advances by `h`, splitting the step in half on failure.
    fn advance(
        &self,
        prev: &State,
        t0: f64,
        h: f64,
        depth: usize,
        jitter: &[f64],
    ) -> Option<(State, f64)> {
        let p = self.params(t0 + h, jitter);
        if let Some(out) = self.newton(prev, &p, h, false) {
            if linalg::min_entry(&out.0.e_l) >= self.floor || depth == 0 {
                return Some(out);
            }
        }
        if depth == 0 {
            return None;
        }
        let (mid, _) = self.advance(prev, t0, h / 2.0, depth - 1, jitter)?;
        self.advance(&mid, t0 + h / 2.0, h / 2.0, depth - 1, jitter)
    }

    fn params(&self, t: f64, jitter: &[f64]) -> LoadSpec {
        let mut p = self.cfg.schedule.params_at(self.base, t);
        for (i, &f) in jitter.iter().enumerate() {
            p.b_shunt[i] *= f;
            p.i_shunt[i] *= f;
            p.q_const[i] *= f;
        }
        p
    }

    fn injections(&self, s: &State) -> Vector {
        let e = crate::equilibrium::stack(&s.e_l, &s.e_i);
        let be = &self.blocks.full * &e;
        Vector::from_fn(self.m(), |k, _| -s.e_i[k] * be[self.n() + k])
    }
}

/// Runs from the open-circuit point: `E_I = E_I*`, shunt states at
/// `Q_i / E_i*^2` with `E_L*` voltages, and `E_L` from the load balance.
pub fn simulate(model: &NetworkModel, spec: &LoadSpec, cfg: &SimConfig) -> Result<SimTrace> {
    let red = reduce_model(model)?;
    let dyn_buses = spec.dynamic_buses();
    let b0 = Vector::from_fn(dyn_buses.len(), |r, _| {
        let bus = dyn_buses[r];
        spec.q_const[bus] / (red.e_l_star[bus] * red.e_l_star[bus])
    });
    simulate_from(model, spec, cfg, &red.e_l_star, model.setpoints(), &b0)
}

/// Runs from given inverter voltages and shunt states (one per dynamic bus,
/// in bus order). `e_l_guess` only seeds the initial algebraic solve.
pub fn simulate_from(
    model: &NetworkModel,
    spec: &LoadSpec,
    cfg: &SimConfig,
    e_l_guess: &Vector,
    e_i0: &Vector,
    b0: &Vector,
) -> Result<SimTrace> {
    let n = model.n_loads();
    let m = model.n_inverters();
    spec.validate(n)?;
    cfg.validate(m, spec)?;
    let red = reduce_model(model)?;
    let dyn_buses = spec.dynamic_buses();
    if e_i0.len() != m || b0.len() != dyn_buses.len() || e_l_guess.len() != n {
        return Err(Error::InvalidModel(
            "initial state has wrong dimensions".into(),
        ));
    }
    let integ = Integrator {
        model,
        blocks: build_susceptance(model),
        base: spec,
        cfg,
        dyn_buses,
        floor: cfg.collapse_fraction * linalg::min_entry(&red.e_l_star),
    };
    let mut rng = cfg
        .jitter
        .map(|j| (ChaCha8Rng::seed_from_u64(j.seed), j.std));
    let draw = |rng: &mut Option<(ChaCha8Rng, f64)>| -> Vec<f64> {
        match rng {
            Some((r, std)) => {
                let w = 3f64.sqrt() * *std;
                (0..n).map(|_| 1.0 + r.random_range(-w..=w)).collect()
            }
            None => Vec::new(),
        }
    };

    let mut trace = SimTrace {
        t: Vec::new(),
        e_l: Vec::new(),
        e_i: Vec::new(),
        b_dyn: Vec::new(),
        q_i: Vec::new(),
        residual: Vec::new(),
        status: SimStatus::Running,
        collapse_time: None,
        message: None,
    };
    let push = |trace: &mut SimTrace, t: f64, s: &State, res: f64| {
        trace.t.push(t);
        trace.e_l.push(s.e_l.clone());
        trace.e_i.push(s.e_i.clone());
        trace.b_dyn.push(integ.b_full(&s.b));
        trace.q_i.push(integ.injections(s));
        trace.residual.push(res);
    };

    let start = State {
        e_l: e_l_guess.clone(),
        e_i: e_i0.clone(),
        b: b0.clone(),
    };
    let j0 = draw(&mut rng);
    let p0 = integ.params(0.0, &j0);
    let Some((mut state, res0)) = integ.newton(&start, &p0, f64::INFINITY, true) else {
        // No consistent load voltages for the initial differential state.
        push(&mut trace, 0.0, &start, f64::NAN);
        trace.status = SimStatus::Collapsed;
        trace.collapse_time = Some(0.0);
        trace.message = Some("no consistent initial load voltages".into());
        return Ok(trace);
    };
    push(&mut trace, 0.0, &state, res0);
    if linalg::min_entry(&state.e_l) < integ.floor {
        trace.status = SimStatus::Collapsed;
        trace.collapse_time = Some(0.0);
        trace.message = Some("initial load voltages below the collapse threshold".into());
        return Ok(trace);
    }

    let steps = ((cfg.t_end / cfg.dt) - 1e-9).ceil().max(1.0) as usize;
    let quiet_after = cfg.schedule.last_change();
    let mut rate = f64::INFINITY;
    for k in 1..=steps {
        let t0 = (k - 1) as f64 * cfg.dt;
        let h = (cfg.t_end - t0).min(cfg.dt);
        let jit = draw(&mut rng);
        let next = integ.advance(&state, t0, h, cfg.max_step_splits, &jit);
        let t1 = t0 + h;
        match next {
            Some((s, res)) => {
                rate = state_rate(&state, &s, h);
                push(&mut trace, t1, &s, res);
                state = s;
                if linalg::min_entry(&state.e_l) < integ.floor {
                    trace.status = SimStatus::Collapsed;
                    trace.collapse_time = Some(t1);
                    trace.message = Some(format!(
                        "load voltage {:.4} fell below the collapse threshold {:.4}",
                        linalg::min_entry(&state.e_l),
                        integ.floor
                    ));
                    return Ok(trace);
                }
            }
            None => {
                trace.status = SimStatus::Collapsed;
                trace.collapse_time = Some(t1);
                trace.message = Some(format!("implicit step from t = {t0:.6} failed to converge"));
                return Ok(trace);
            }
        }
        if cfg.stop_when_settled
            && cfg.jitter.is_none()
            && t1 >= quiet_after
            && rate <= cfg.steady_tol
        {
            break;
        }
    }
    trace.status = if rate <= cfg.steady_tol {
        SimStatus::Converged
    } else {
        SimStatus::Running
    };
    Ok(trace)
}

fn state_rate(a: &State, b: &State, h: f64) -> f64 {
    let d = [
        linalg::max_norm(&(&b.e_l - &a.e_l)),
        linalg::max_norm(&(&b.e_i - &a.e_i)),
        if a.b.is_empty() {
            0.0
        } else {
            linalg::max_norm(&(&b.b - &a.b))
        },
    ];
    d.iter().copied().fold(0.0, f64::max) / h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{solve_dynamic_shunt, solve_zi, SolverOptions};
    use crate::synth;

    fn v(x: &[f64]) -> Vector {
        Vector::from_vec(x.to_vec())
    }

    #[test]
    fn zi_loads_converge_to_closed_form() {
        let model = synth::two_bus();
        let red = reduce_model(&model).unwrap();
        let spec = LoadSpec::zi(v(&[-0.1]), v(&[-0.02]));
        let sol = solve_zi(&red, &spec, &SolverOptions::default()).unwrap();
        let cfg = SimConfig::new(v(&[0.1]), 0.01, 20.0);
        let trace = simulate(&model, &spec, &cfg).unwrap();
        assert_eq!(trace.status, SimStatus::Converged);
        assert!((trace.final_e_l()[0] - sol.e_l[0]).abs() < 1e-6);
        assert!((trace.final_e_i()[0] - sol.e_i[0]).abs() < 1e-6);
        assert!(trace.residual.iter().all(|&r| r <= 1e-10));
    }

    #[test]
    fn zero_load_stays_at_open_circuit() {
        let model = synth::fig1b_unit();
        let spec = LoadSpec::none(5);
        let cfg = SimConfig::new(v(&[0.1, 0.1, 0.2]), 0.05, 2.0);
        let trace = simulate(&model, &spec, &cfg).unwrap();
        for k in 0..trace.len() {
            assert!(linalg::max_norm(&(&trace.e_l[k] - linalg::ones(5))) < 1e-12);
            assert!(linalg::max_norm(&(&trace.e_i[k] - linalg::ones(3))) < 1e-12);
        }
        assert_eq!(trace.status, SimStatus::Converged);
    }

    #[test]
    fn dynamic_shunt_converges_to_steady_state() {
        let model = synth::two_bus();
        let red = reduce_model(&model).unwrap();
        let spec = LoadSpec::dynamic_shunt(v(&[-0.05]), v(&[0.5]));
        let sol = solve_dynamic_shunt(&red, &spec, &SolverOptions::default()).unwrap();
        let mut cfg = SimConfig::new(v(&[0.2]), 0.01, 40.0);
        cfg.stop_when_settled = true;
        cfg.steady_tol = 1e-9;
        let trace = simulate(&model, &spec, &cfg).unwrap();
        assert_eq!(trace.status, SimStatus::Converged);
        assert!((trace.final_e_l()[0] - sol.e_l[0]).abs() < 1e-6);
        assert!((trace.final_b_dyn()[0] - sol.b_dyn.unwrap()[0]).abs() < 1e-6);
    }

    #[test]
    fn heavy_constant_power_collapses() {
        let model = synth::two_bus();
        let spec = LoadSpec::dynamic_shunt(v(&[-0.1]), v(&[0.5]));
        let mut cfg = SimConfig::new(v(&[0.2]), 0.01, 20.0);
        cfg.schedule.events.push(LoadEvent {
            time: 2.0,
            buses: vec![0],
            action: EventAction::Scale(4.0),
        });
        let trace = simulate(&model, &spec, &cfg).unwrap();
        assert_eq!(trace.status, SimStatus::Collapsed);
        assert!(trace.collapse_time.unwrap() > 2.0);
        assert!(trace.e_l.iter().all(|e| e.iter().all(|&x| x > 0.0)));
    }

    #[test]
    fn schedule_parameters() {
        let base = LoadSpec::zip(v(&[-0.1, -0.2]), v(&[0.0, 0.0]), v(&[-0.05, -0.1]));
        let sched = DisturbanceSchedule {
            events: vec![
                LoadEvent {
                    time: 1.0,
                    buses: vec![1],
                    action: EventAction::Scale(2.0),
                },
                LoadEvent {
                    time: 2.0,
                    buses: vec![1],
                    action: EventAction::Scale(1.0),
                },
            ],
            sinusoids: vec![Sinusoid {
                start: 0.0,
                end: 1.0,
                buses: vec![0],
                amplitude: 0.5,
                period: 1.0,
            }],
        };
        sched.validate(&base).unwrap();
        let p = sched.params_at(&base, 0.25);
        assert!((p.q_const[0] + 0.05 * 1.5).abs() < 1e-15);
        assert_eq!(sched.params_at(&base, 1.5).q_const[1], -0.2);
        assert_eq!(sched.params_at(&base, 2.5).q_const[1], -0.1);
        let bad = DisturbanceSchedule {
            events: vec![LoadEvent {
                time: 1.0,
                buses: vec![0],
                action: EventAction::Set {
                    b_shunt: None,
                    i_shunt: None,
                    q: Some(0.3),
                },
            }],
            sinusoids: vec![],
        };
        assert!(bad.validate(&base).is_err());
    }

    #[test]
    fn csv_layout() {
        let model = synth::star(2.0, 1.0, [-1.0, -1.0]);
        let spec = LoadSpec::dynamic_shunt(v(&[-0.05]), v(&[0.5]));
        let cfg = SimConfig::new(v(&[0.2, 0.2]), 0.1, 0.3);
        let csv = simulate(&model, &spec, &cfg).unwrap().to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,E_L_1,E_I_1,E_I_2,bdyn_1,Q_I_1,Q_I_2,status"
        );
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 4);
        assert!(rows[0].ends_with(",running"));
        let fields: Vec<&str> = rows[1].split(',').collect();
        assert_eq!(fields.len(), 8);
        assert_eq!(fields[0], "1.00000000e-1");
        assert!(!csv.contains('\r'));
    }

    #[test]
    fn linearization_matches_finite_differences() {
        let model = synth::fig1b_unit();
        let spec = LoadSpec::zip(
            Vector::from_element(5, -0.1),
            Vector::from_element(5, -0.02),
            Vector::from_element(5, -0.03),
        );
        let e_l = v(&[0.93, 0.9, 0.91, 0.88, 0.9]);
        let e_i = v(&[0.97, 0.96, 0.95]);
        let lin = linearize_at(&model, &spec, &e_l, &e_i);
        for k in 0..3 {
            assert!((lin.d[5 + k] - model.gains()[k] * (2.0 * e_i[k] - 1.0)).abs() < 1e-15);
        }
        let blocks = build_susceptance(&model);
        let f = |x: &Vector| {
            crate::equilibrium::full_residual(
                &blocks,
                model.gains(),
                model.setpoints(),
                &spec,
                &x.rows(0, 5).into_owned(),
                &x.rows(5, 3).into_owned(),
            )
        };
        let x = crate::equilibrium::stack(&e_l, &e_i);
        let h = 1e-6;
        for c in 0..8 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[c] += h;
            xm[c] -= h;
            let col = (f(&xp) - f(&xm)) / (2.0 * h);
            for r in 0..8 {
                assert!((col[r] - lin.j[(r, c)]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn jitter_is_reproducible() {
        let model = synth::two_bus();
        let spec = LoadSpec::zi(v(&[-0.1]), v(&[0.0]));
        let mut cfg = SimConfig::new(v(&[0.1]), 0.01, 0.5);
        cfg.jitter = Some(Jitter {
            std: JITTER_DEFAULT_STD,
            seed: 9,
        });
        let a = simulate(&model, &spec, &cfg).unwrap();
        let b = simulate(&model, &spec, &cfg).unwrap();
        assert_eq!(a.e_l, b.e_l);
        cfg.jitter = Some(Jitter {
            std: JITTER_DEFAULT_STD,
            seed: 10,
        });
        let c = simulate(&model, &spec, &cfg).unwrap();
        assert_ne!(a.e_l, c.e_l);
    }
}
