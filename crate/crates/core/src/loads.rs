//! Reactive load models.
//!
//! Sign convention: `Q_i(E_i) < 0` means the load consumes reactive power
//! (inductive). A ZIP load draws `b E^2 + I E + Q`; the dynamic shunt model
//! adapts a susceptance state `b_dyn` so that it draws `Q` in steady state.

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LoadKind {
    /// Constant impedance plus constant current.
    Zi,
    /// Constant impedance, constant current and constant power.
    Zip,
    ConstantPower,
    /// Static ZI part plus an adaptive shunt per bus with `Q_i < 0`.
    DynamicShunt,
}

impl LoadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LoadKind::Zi => "zi",
            LoadKind::Zip => "zip",
            LoadKind::ConstantPower => "cp",
            LoadKind::DynamicShunt => "ds",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "zi" => Some(LoadKind::Zi),
            "zip" => Some(LoadKind::Zip),
            "cp" => Some(LoadKind::ConstantPower),
            "ds" => Some(LoadKind::DynamicShunt),
            _ => None,
        }
    }
}

/// Per-bus load coefficients for all `n` load buses.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadSpec {
    pub kind: LoadKind,
    pub b_shunt: Vector,
    pub i_shunt: Vector,
    /// Constant-power term `Q_L`.
    pub q_const: Vector,
    /// Dynamic-shunt time constants in seconds; ignored by static kinds.
    pub t: Vector,
}

impl LoadSpec {
    pub fn none(n: usize) -> Self {
        Self::zi(Vector::zeros(n), Vector::zeros(n))
    }

    pub fn zi(b_shunt: Vector, i_shunt: Vector) -> Self {
        let n = b_shunt.len();
        Self {
            kind: LoadKind::Zi,
            b_shunt,
            i_shunt,
            q_const: Vector::zeros(n),
            t: Vector::zeros(n),
        }
    }

    pub fn zip(b_shunt: Vector, i_shunt: Vector, q_const: Vector) -> Self {
        let n = b_shunt.len();
        Self {
            kind: LoadKind::Zip,
            b_shunt,
            i_shunt,
            q_const,
            t: Vector::zeros(n),
        }
    }

    pub fn constant_power(q_const: Vector) -> Self {
        let n = q_const.len();
        Self {
            kind: LoadKind::ConstantPower,
            b_shunt: Vector::zeros(n),
            i_shunt: Vector::zeros(n),
            q_const,
            t: Vector::zeros(n),
        }
    }

    /// Pure dynamic shunt loads (no static part).
    pub fn dynamic_shunt(q_const: Vector, t: Vector) -> Self {
        let n = q_const.len();
        Self {
            kind: LoadKind::DynamicShunt,
            b_shunt: Vector::zeros(n),
            i_shunt: Vector::zeros(n),
            q_const,
            t,
        }
    }

    pub fn len(&self) -> usize {
        self.b_shunt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b_shunt.is_empty()
    }

    /// Checks vector lengths, finiteness and the dynamic-shunt sign rules.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut errs = Vec::new();
        for (name, v) in [
            ("b_shunt", &self.b_shunt),
            ("i_shunt", &self.i_shunt),
            ("q", &self.q_const),
            ("t", &self.t),
        ] {
            if v.len() != n {
                errs.push(format!("{name} has length {}, expected {n}", v.len()));
            } else if v.iter().any(|x| !x.is_finite()) {
                errs.push(format!("{name} has non-finite entries"));
            }
        }
        if errs.is_empty() && self.kind == LoadKind::DynamicShunt {
            for i in 0..n {
                if self.q_const[i] > 0.0 {
                    errs.push(format!(
                        "load {}: dynamic shunt requires Q < 0 (got {})",
                        i + 1,
                        self.q_const[i]
                    ));
                } else if self.q_const[i] < 0.0 && !(self.t[i] > 0.0) {
                    errs.push(format!(
                        "load {}: dynamic shunt time constant must be positive (got {})",
                        i + 1,
                        self.t[i]
                    ));
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidLoad(errs.join("; ")))
        }
    }

    /// Static load power `b E^2 + I E + Q` per bus. For dynamic shunts this
    /// is the steady-state consumption.
    pub fn eval(&self, e_l: &Vector) -> Result<Vector> {
        check_positive(e_l)?;
        Ok(self.eval_unchecked(e_l))
    }

    pub(crate) fn eval_unchecked(&self, e_l: &Vector) -> Vector {
        Vector::from_fn(e_l.len(), |i, _| {
            let e = e_l[i];
            self.b_shunt[i] * e * e + self.i_shunt[i] * e + self.q_const[i]
        })
    }

    /// Diagonal of `dQ/dE`: `2 b E + I`.
    pub fn jacobian_diag(&self, e_l: &Vector) -> Result<Vector> {
        check_positive(e_l)?;
        Ok(self.jacobian_diag_unchecked(e_l))
    }

    pub(crate) fn jacobian_diag_unchecked(&self, e_l: &Vector) -> Vector {
        Vector::from_fn(e_l.len(), |i, _| {
            2.0 * self.b_shunt[i] * e_l[i] + self.i_shunt[i]
        })
    }

    /// The constant-impedance/constant-current part alone.
    pub fn zi_part(&self) -> LoadSpec {
        LoadSpec::zi(self.b_shunt.clone(), self.i_shunt.clone())
    }

    /// The constant-power part alone.
    pub fn as_constant_power(&self) -> LoadSpec {
        LoadSpec::constant_power(self.q_const.clone())
    }

    /// Same coefficients with a different kind. Converting to `Zi` drops the
    /// constant-power term, converting to `ConstantPower` drops the rest.
    pub fn with_kind(&self, kind: LoadKind) -> LoadSpec {
        match kind {
            LoadKind::Zi => self.zi_part(),
            LoadKind::ConstantPower => self.as_constant_power(),
            LoadKind::Zip | LoadKind::DynamicShunt => LoadSpec {
                kind,
                ..self.clone()
            },
        }
    }

    /// Same spec with every coefficient multiplied by `s`.
    pub fn scaled(&self, s: f64) -> LoadSpec {
        LoadSpec {
            kind: self.kind,
            b_shunt: &self.b_shunt * s,
            i_shunt: &self.i_shunt * s,
            q_const: &self.q_const * s,
            t: self.t.clone(),
        }
    }

    /// Same spec with only the constant-power term multiplied by `s`.
    pub fn with_q_scaled(&self, s: f64) -> LoadSpec {
        LoadSpec {
            q_const: &self.q_const * s,
            ..self.clone()
        }
    }

    /// Buses carrying a dynamic shunt state (`Q_i < 0`). Buses with `Q_i = 0`
    /// have no shunt dynamics and are dropped.
    pub fn dynamic_buses(&self) -> Vec<usize> {
        if self.kind != LoadKind::DynamicShunt {
            return Vec::new();
        }
        (0..self.len()).filter(|&i| self.q_const[i] < 0.0).collect()
    }

    /// True for dynamic-shunt specs that also carry a static part or have
    /// buses without shunt dynamics.
    pub fn is_mixed_dynamic(&self) -> bool {
        self.kind == LoadKind::DynamicShunt
            && (self.dynamic_buses().len() != self.len()
                || self
                    .b_shunt
                    .iter()
                    .chain(self.i_shunt.iter())
                    .any(|&x| x != 0.0))
    }

    pub fn has_constant_power(&self) -> bool {
        self.q_const.iter().any(|&q| q != 0.0)
    }
}

/// `dQ/dE` as a diagonal matrix.
pub fn load_jacobian(spec: &LoadSpec, e_l: &Vector) -> Result<Matrix> {
    Ok(Matrix::from_diagonal(&spec.jacobian_diag(e_l)?))
}

pub fn eval_load(spec: &LoadSpec, e_l: &Vector) -> Result<Vector> {
    spec.eval(e_l)
}

pub(crate) fn check_positive(e: &Vector) -> Result<()> {
    match e.iter().position(|&v| !(v > 0.0)) {
        Some(bus) => Err(Error::NonpositiveVoltage { bus, value: e[bus] }),
        None => Ok(()),
    }
}
