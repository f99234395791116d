//! Network description files (TOML).
//!
//! ```toml
//! load_model = "zip"            # zi | zip | cp | ds
//!
//! [bases]                       # optional, informational
//! v_base = 230.0
//! s_base = 1400.0
//!
//! [[bus]]
//! id = "L1"
//! kind = "load"
//!
//! [[bus]]
//! id = "I1"
//! kind = "inverter"
//! k = -1.0
//! e_star = 1.0
//! tau = 0.1
//!
//! [[branch]]
//! from = "L1"
//! to = "I1"
//! b = 1.0                       # optional g for a lossy branch
//!
//! [[load]]
//! bus = "L1"
//! b_shunt = -0.1
//! i_shunt = 0.0
//! q = -0.05
//! t = 0.5                       # dynamic shunt time constant
//!
//! [simulation]
//! dt = 0.01
//! t_end = 10.0
//!
//! [[simulation.event]]
//! time = 4.0
//! buses = ["L1"]
//! scale = 2.0
//! ```
//!
//! Unknown keys are rejected. Loads are numbered in file order of the load
//! buses, inverters likewise. Positive `b_shunt` or `q` must be flagged with
//! `capacitive = true`.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::loads::{LoadKind, LoadSpec};
use crate::netmodel::{rotate_uniform_ratio, Branch, LossyBranch, NetworkModel};
use crate::simulate::{DisturbanceSchedule, EventAction, Jitter, LoadEvent, SimConfig, Sinusoid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Load,
    Inverter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusEntry {
    pub id: String,
    pub kind: BusKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_star: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchEntry {
    pub from: String,
    pub to: String,
    pub b: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadEntry {
    pub bus: String,
    #[serde(default)]
    pub b_shunt: f64,
    #[serde(default)]
    pub i_shunt: f64,
    #[serde(default)]
    pub q: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub capacitive: bool,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bases {
    /// Volts.
    pub v_base: f64,
    /// Volt-amperes.
    pub s_base: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventEntry {
    pub time: f64,
    pub buses: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_shunt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i_shunt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinusoidEntry {
    pub start: f64,
    pub end: f64,
    pub buses: Vec<String>,
    pub amplitude: f64,
    pub period: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationEntry {
    pub dt: f64,
    pub t_end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub algebraic_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steady_tol: Option<f64>,
    /// Standard deviation of multiplicative load noise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jitter: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_when_settled: Option<bool>,
    #[serde(default, rename = "event", skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<EventEntry>,
    #[serde(default, rename = "sinusoid", skip_serializing_if = "Vec::is_empty")]
    pub sinusoids: Vec<SinusoidEntry>,
}

/// Raw file contents, before any semantic checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDocument {
    #[serde(default = "default_load_model")]
    pub load_model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bases: Option<Bases>,
    #[serde(rename = "bus")]
    pub buses: Vec<BusEntry>,
    #[serde(default, rename = "branch")]
    pub branches: Vec<BranchEntry>,
    #[serde(default, rename = "load", skip_serializing_if = "Vec::is_empty")]
    pub loads: Vec<LoadEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationEntry>,
}

fn default_load_model() -> String {
    "zip".into()
}

/// A fully validated network file.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedNetwork {
    pub model: NetworkModel,
    pub loads: LoadSpec,
    /// Inverter time constants.
    pub tau: Vector,
    pub simulation: Option<SimConfig>,
    pub bases: Option<Bases>,
}

impl NetworkDocument {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| syntax_error(text, &e))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("network documents always serialize")
    }

    /// Checks every semantic rule and reports all violations at once.
    pub fn interpret(&self) -> Result<ParsedNetwork> {
        let mut errs: Vec<String> = Vec::new();

        let kind = LoadKind::parse(&self.load_model);
        if kind.is_none() {
            errs.push(format!(
                "load_model: unknown model '{}' (expected zi, zip, cp or ds)",
                self.load_model
            ));
        }
        let kind = kind.unwrap_or(LoadKind::Zip);

        let mut seen = HashSet::new();
        for b in &self.buses {
            if !seen.insert(b.id.as_str()) {
                errs.push(format!("bus '{}': duplicate id", b.id));
            }
        }
        let load_buses: Vec<&BusEntry> = self
            .buses
            .iter()
            .filter(|b| b.kind == BusKind::Load)
            .collect();
        let inv_buses: Vec<&BusEntry> = self
            .buses
            .iter()
            .filter(|b| b.kind == BusKind::Inverter)
            .collect();
        let n = load_buses.len();
        let m = inv_buses.len();
        let mut index: HashMap<&str, usize> = HashMap::new();
        for (i, b) in load_buses.iter().chain(inv_buses.iter()).enumerate() {
            index.entry(b.id.as_str()).or_insert(i);
        }

        for b in &load_buses {
            if b.k.is_some() || b.e_star.is_some() || b.tau.is_some() {
                errs.push(format!(
                    "bus '{}': k, e_star and tau apply to inverters only",
                    b.id
                ));
            }
        }
        let mut gains = Vector::zeros(m);
        let mut setpoints = Vector::zeros(m);
        let mut tau = Vector::zeros(m);
        for (k, b) in inv_buses.iter().enumerate() {
            match b.k {
                Some(x) if x < 0.0 && x.is_finite() => gains[k] = x,
                Some(x) => errs.push(format!("bus '{}': gain must be negative (got {x})", b.id)),
                None => errs.push(format!("bus '{}': missing gain k", b.id)),
            }
            match b.e_star {
                Some(x) if x > 0.0 && x.is_finite() => setpoints[k] = x,
                Some(x) => errs.push(format!("bus '{}': e_star must be positive (got {x})", b.id)),
                None => errs.push(format!("bus '{}': missing e_star", b.id)),
            }
            match b.tau {
                Some(x) if x > 0.0 && x.is_finite() => tau[k] = x,
                Some(x) => errs.push(format!("bus '{}': tau must be positive (got {x})", b.id)),
                None => errs.push(format!("bus '{}': missing tau", b.id)),
            }
        }

        let mut lossy = Vec::new();
        let any_g = self.branches.iter().any(|b| b.g.is_some());
        for (k, br) in self.branches.iter().enumerate() {
            let from = index.get(br.from.as_str());
            let to = index.get(br.to.as_str());
            if from.is_none() {
                errs.push(format!("branch {k}: unknown bus '{}'", br.from));
            }
            if to.is_none() {
                errs.push(format!("branch {k}: unknown bus '{}'", br.to));
            }
            if !(br.b > 0.0 && br.b.is_finite()) {
                errs.push(format!(
                    "branch {k}: susceptance weight must be positive (got {})",
                    br.b
                ));
            }
            if let Some(g) = br.g {
                if !(g >= 0.0 && g.is_finite()) {
                    errs.push(format!(
                        "branch {k}: conductance must be nonnegative (got {g})"
                    ));
                }
            }
            if let (Some(&f), Some(&t)) = (from, to) {
                lossy.push(LossyBranch {
                    from: f,
                    to: t,
                    conductance: br.g.unwrap_or(0.0),
                    susceptance: br.b,
                });
            }
        }

        let mut b_shunt = Vector::zeros(n);
        let mut i_shunt = Vector::zeros(n);
        let mut q = Vector::zeros(n);
        let mut t = Vector::zeros(n);
        let mut has_entry = vec![false; n];
        for ld in &self.loads {
            let Some(&i) = index.get(ld.bus.as_str()) else {
                errs.push(format!("load on '{}': unknown bus", ld.bus));
                continue;
            };
            if i >= n {
                errs.push(format!("load on '{}': bus is not a load bus", ld.bus));
                continue;
            }
            if has_entry[i] {
                errs.push(format!("load on '{}': duplicate entry", ld.bus));
                continue;
            }
            has_entry[i] = true;
            for (name, x) in [
                ("b_shunt", ld.b_shunt),
                ("i_shunt", ld.i_shunt),
                ("q", ld.q),
            ] {
                if !x.is_finite() {
                    errs.push(format!("load on '{}': {name} must be finite", ld.bus));
                }
            }
            if (ld.b_shunt > 0.0 || ld.q > 0.0) && !ld.capacitive {
                errs.push(format!(
                    "load on '{}': positive b_shunt or q needs capacitive = true",
                    ld.bus
                ));
            }
            b_shunt[i] = ld.b_shunt;
            i_shunt[i] = ld.i_shunt;
            q[i] = ld.q;
            match ld.t {
                Some(x) if x > 0.0 && x.is_finite() => t[i] = x,
                Some(x) => errs.push(format!(
                    "load on '{}': t must be positive (got {x})",
                    ld.bus
                )),
                None if kind == LoadKind::DynamicShunt && ld.q < 0.0 => errs.push(format!(
                    "load on '{}': dynamic shunt needs a time constant t",
                    ld.bus
                )),
                None => {}
            }
            if kind == LoadKind::DynamicShunt && ld.q > 0.0 {
                errs.push(format!(
                    "load on '{}': dynamic shunt requires q <= 0",
                    ld.bus
                ));
            }
        }
        let loads = LoadSpec {
            kind,
            b_shunt,
            i_shunt,
            q_const: q,
            t,
        };

        let load_index = |id: &str, what: &str, errs: &mut Vec<String>| -> Option<usize> {
            match index.get(id) {
                Some(&i) if i < n => Some(i),
                Some(_) => {
                    errs.push(format!("{what}: '{id}' is not a load bus"));
                    None
                }
                None => {
                    errs.push(format!("{what}: unknown bus '{id}'"));
                    None
                }
            }
        };
        let mut simulation = None;
        if let Some(sim) = &self.simulation {
            let mut schedule = DisturbanceSchedule::default();
            for (k, ev) in sim.events.iter().enumerate() {
                let what = format!("simulation event {k}");
                let buses: Vec<usize> = ev
                    .buses
                    .iter()
                    .filter_map(|b| load_index(b, &what, &mut errs))
                    .collect();
                let set = ev.b_shunt.is_some() || ev.i_shunt.is_some() || ev.q.is_some();
                let action = match (ev.scale, set) {
                    (Some(f), false) => EventAction::Scale(f),
                    (None, true) => EventAction::Set {
                        b_shunt: ev.b_shunt,
                        i_shunt: ev.i_shunt,
                        q: ev.q,
                    },
                    _ => {
                        errs.push(format!(
                            "{what}: give either scale or overwrite values, not both"
                        ));
                        continue;
                    }
                };
                schedule.events.push(LoadEvent {
                    time: ev.time,
                    buses,
                    action,
                });
            }
            for (k, s) in sim.sinusoids.iter().enumerate() {
                let what = format!("simulation sinusoid {k}");
                let buses = s
                    .buses
                    .iter()
                    .filter_map(|b| load_index(b, &what, &mut errs))
                    .collect();
                schedule.sinusoids.push(Sinusoid {
                    start: s.start,
                    end: s.end,
                    buses,
                    amplitude: s.amplitude,
                    period: s.period,
                });
            }
            let mut cfg = SimConfig::new(tau.clone(), sim.dt, sim.t_end);
            if let Some(x) = sim.algebraic_tol {
                cfg.algebraic_tol = x;
            }
            if let Some(x) = sim.steady_tol {
                cfg.steady_tol = x;
            }
            if let Some(std) = sim.jitter {
                cfg.jitter = Some(Jitter {
                    std,
                    seed: sim.seed.unwrap_or(0),
                });
            } else if sim.seed.is_some() {
                errs.push("simulation: seed given without jitter".into());
            }
            if let Some(x) = sim.stop_when_settled {
                cfg.stop_when_settled = x;
            }
            cfg.schedule = schedule;
            if errs.is_empty() {
                if let Err(Error::Validation(e)) = cfg.validate(m, &loads) {
                    errs.extend(e.into_iter().map(|s| format!("simulation: {s}")));
                }
            }
            simulation = Some(cfg);
        }

        if let Some(b) = self.bases {
            if !(b.v_base > 0.0 && b.s_base > 0.0 && b.v_base.is_finite() && b.s_base.is_finite()) {
                errs.push("bases: v_base and s_base must be positive".into());
            }
        }

        if !errs.is_empty() {
            return Err(Error::Validation(errs));
        }

        let branches = if any_g {
            rotate_uniform_ratio(&lossy)?
        } else {
            lossy
                .iter()
                .map(|b| Branch::new(b.from, b.to, b.susceptance))
                .collect()
        };
        let names = load_buses
            .iter()
            .chain(inv_buses.iter())
            .map(|b| b.id.clone())
            .collect();
        let model =
            NetworkModel::with_names(names, n, m, branches, gains, setpoints).map_err(flatten)?;
        loads.validate(n)?;
        Ok(ParsedNetwork {
            model,
            loads,
            tau,
            simulation,
            bases: self.bases,
        })
    }
}

fn flatten(e: Error) -> Error {
    match e {
        Error::Validation(v) => Error::Validation(v),
        other => Error::Validation(vec![other.to_string()]),
    }
}

impl ParsedNetwork {
    /// Canonical document: loads first, branches as rotated susceptances,
    /// every load bus listed explicitly.
    pub fn to_document(&self) -> NetworkDocument {
        let model = &self.model;
        let n = model.n_loads();
        let names = model.bus_names();
        let mut buses: Vec<BusEntry> = (0..n)
            .map(|i| BusEntry {
                id: names[i].clone(),
                kind: BusKind::Load,
                k: None,
                e_star: None,
                tau: None,
            })
            .collect();
        for k in 0..model.n_inverters() {
            buses.push(BusEntry {
                id: names[n + k].clone(),
                kind: BusKind::Inverter,
                k: Some(model.gains()[k]),
                e_star: Some(model.setpoints()[k]),
                tau: Some(self.tau[k]),
            });
        }
        let branches = model
            .branches()
            .iter()
            .map(|b| BranchEntry {
                from: names[b.from].clone(),
                to: names[b.to].clone(),
                b: b.susceptance,
                g: None,
            })
            .collect();
        let l = &self.loads;
        let loads = (0..n)
            .map(|i| LoadEntry {
                bus: names[i].clone(),
                b_shunt: l.b_shunt[i],
                i_shunt: l.i_shunt[i],
                q: l.q_const[i],
                t: (l.t[i] > 0.0).then_some(l.t[i]),
                capacitive: l.b_shunt[i] > 0.0 || l.q_const[i] > 0.0,
            })
            .collect();
        let bus_names = |v: &[usize]| v.iter().map(|&i| names[i].clone()).collect();
        let simulation = self.simulation.as_ref().map(|c| SimulationEntry {
            dt: c.dt,
            t_end: c.t_end,
            algebraic_tol: Some(c.algebraic_tol),
            steady_tol: Some(c.steady_tol),
            jitter: c.jitter.map(|j| j.std),
            seed: c.jitter.map(|j| j.seed),
            stop_when_settled: Some(c.stop_when_settled),
            events: c
                .schedule
                .events
                .iter()
                .map(|e| {
                    let (scale, b_shunt, i_shunt, q) = match e.action {
                        EventAction::Scale(f) => (Some(f), None, None, None),
                        EventAction::Set {
                            b_shunt,
                            i_shunt,
                            q,
                        } => (None, b_shunt, i_shunt, q),
                    };
                    EventEntry {
                        time: e.time,
                        buses: bus_names(&e.buses),
                        scale,
                        b_shunt,
                        i_shunt,
                        q,
                    }
                })
                .collect(),
            sinusoids: c
                .schedule
                .sinusoids
                .iter()
                .map(|s| SinusoidEntry {
                    start: s.start,
                    end: s.end,
                    buses: bus_names(&s.buses),
                    amplitude: s.amplitude,
                    period: s.period,
                })
                .collect(),
        });
        NetworkDocument {
            load_model: l.kind.as_str().into(),
            bases: self.bases,
            buses,
            branches,
            loads,
            simulation,
        }
    }

    pub fn to_toml(&self) -> String {
        self.to_document().to_toml()
    }
}

pub fn parse_str(text: &str) -> Result<ParsedNetwork> {
    NetworkDocument::from_toml(text)?.interpret()
}

pub fn parse_file(path: impl AsRef<Path>) -> Result<ParsedNetwork> {
    let text = std::fs::read_to_string(path)?;
    parse_str(&text)
}

fn syntax_error(text: &str, e: &toml::de::Error) -> Error {
    let (line, column) = match e.span() {
        Some(span) => line_col(text, span.start),
        None => (1, 1),
    };
    Error::Syntax {
        line,
        column,
        message: e.message().to_string(),
    }
}

/// One-based line and column of a byte offset.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |s| s.chars().count()) + 1;
    (line, col)
}
