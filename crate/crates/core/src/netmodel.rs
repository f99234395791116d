//! Network description and the bus susceptance matrix.
//!
//! Buses are indexed densely from zero with all load buses first and all
//! inverter buses after them, so the load/inverter block partition of the
//! susceptance matrix is a plain slice of the full matrix. All quantities
//! are per-unit.

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::validation::ValidationReport;

/// Relative eigenvalue threshold for definiteness checks.
pub const TOL_EIG: f64 = 1e-9;
/// Required ratio between the two smallest eigenvalue magnitudes of `B`
/// for the zero eigenvalue to count as simple.
pub const ZERO_GAP_RATIO: f64 = 1e6;
/// Relative tolerance for the uniform R/X ratio check.
pub const TOL_RATIO: f64 = 1e-6;

/// A series branch between two buses with susceptance weight `b_ij > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub susceptance: f64,
}

impl Branch {
    pub fn new(from: usize, to: usize, susceptance: f64) -> Self {
        Self {
            from,
            to,
            susceptance,
        }
    }
}

/// A branch with both conductance and susceptance, before rotation onto
/// an equivalent purely susceptive network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossyBranch {
    pub from: usize,
    pub to: usize,
    pub conductance: f64,
    pub susceptance: f64,
}

/// Validated microgrid: buses, branches, inverter gains and set points.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    bus_names: Vec<String>,
    n_loads: usize,
    n_inverters: usize,
    branches: Vec<Branch>,
    gains: Vector,
    setpoints: Vector,
}

impl NetworkModel {
    /// Builds a model with default bus names `L1..Ln`, `I1..Im`.
    pub fn new(
        n_loads: usize,
        n_inverters: usize,
        branches: Vec<Branch>,
        gains: Vector,
        setpoints: Vector,
    ) -> Result<Self> {
        let names = (1..=n_loads)
            .map(|i| format!("L{i}"))
            .chain((1..=n_inverters).map(|i| format!("I{i}")))
            .collect();
        Self::with_names(names, n_loads, n_inverters, branches, gains, setpoints)
    }

    /// Builds a model with explicit bus names in dense (loads, then inverters) order.
    pub fn with_names(
        bus_names: Vec<String>,
        n_loads: usize,
        n_inverters: usize,
        branches: Vec<Branch>,
        gains: Vector,
        setpoints: Vector,
    ) -> Result<Self> {
        let model = Self {
            bus_names,
            n_loads,
            n_inverters,
            branches,
            gains,
            setpoints,
        };
        let mut errors = model.check();
        match errors.len() {
            0 => Ok(model),
            1 => Err(errors.remove(0)),
            _ => Err(Error::Validation(
                errors.iter().map(ToString::to_string).collect(),
            )),
        }
    }

    fn check(&self) -> Vec<Error> {
        let mut errs = Vec::new();
        let n_bus = self.n_loads + self.n_inverters;
        if self.n_loads == 0 {
            errs.push(Error::InvalidModel(
                "at least one load bus is required".into(),
            ));
        }
        if self.n_inverters == 0 {
            errs.push(Error::InvalidModel(
                "at least one inverter bus is required".into(),
            ));
        }
        if self.bus_names.len() != n_bus {
            errs.push(Error::InvalidModel(format!(
                "expected {n_bus} bus names, got {}",
                self.bus_names.len()
            )));
            return errs;
        }
        if self.gains.len() != self.n_inverters || self.setpoints.len() != self.n_inverters {
            errs.push(Error::InvalidModel(format!(
                "gain/set-point vectors must have length {}",
                self.n_inverters
            )));
            return errs;
        }
        for (k, &g) in self.gains.iter().enumerate() {
            if !(g < 0.0 && g.is_finite()) {
                errs.push(Error::InvalidModel(format!(
                    "inverter {}: gain must be negative (got {g})",
                    self.bus_names[self.n_loads + k]
                )));
            }
        }
        for (k, &e) in self.setpoints.iter().enumerate() {
            if !(e > 0.0 && e.is_finite()) {
                errs.push(Error::InvalidModel(format!(
                    "inverter {}: voltage set point must be positive (got {e})",
                    self.bus_names[self.n_loads + k]
                )));
            }
        }
        let mut endpoints_ok = true;
        for (idx, br) in self.branches.iter().enumerate() {
            if br.from >= n_bus || br.to >= n_bus {
                errs.push(Error::InvalidModel(format!(
                    "branch {idx} references a bus outside 0..{n_bus}"
                )));
                endpoints_ok = false;
                continue;
            }
            if br.from == br.to {
                errs.push(Error::InvalidModel(format!(
                    "branch {idx} is a self-loop at bus {}",
                    self.bus_names[br.from]
                )));
            }
            if !(br.susceptance > 0.0 && br.susceptance.is_finite()) {
                errs.push(Error::NonpositiveBranch {
                    index: idx,
                    from: self.bus_names[br.from].clone(),
                    to: self.bus_names[br.to].clone(),
                    weight: br.susceptance,
                });
            }
        }
        if endpoints_ok && n_bus > 0 {
            let comps = connected_components(n_bus, &self.branches);
            if comps.len() > 1 {
                errs.push(Error::Disconnected {
                    components: comps
                        .iter()
                        .map(|c| c.iter().map(|&i| self.bus_names[i].clone()).collect())
                        .collect(),
                });
            }
        }
        errs
    }

    pub fn n_loads(&self) -> usize {
        self.n_loads
    }

    pub fn n_inverters(&self) -> usize {
        self.n_inverters
    }

    pub fn n_buses(&self) -> usize {
        self.n_loads + self.n_inverters
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    /// Inverter gains `K_i < 0`.
    pub fn gains(&self) -> &Vector {
        &self.gains
    }

    /// Inverter voltage set points `E_i* > 0`.
    pub fn setpoints(&self) -> &Vector {
        &self.setpoints
    }

    pub fn bus_names(&self) -> &[String] {
        &self.bus_names
    }

    pub fn load_names(&self) -> &[String] {
        &self.bus_names[..self.n_loads]
    }

    pub fn inverter_names(&self) -> &[String] {
        &self.bus_names[self.n_loads..]
    }

    pub fn bus_index(&self, name: &str) -> Option<usize> {
        self.bus_names.iter().position(|n| n == name)
    }

    /// Same network with all gains multiplied by `scale > 0`.
    pub fn with_gain_scale(&self, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidGainScale(scale));
        }
        let mut m = self.clone();
        m.gains *= scale;
        Ok(m)
    }

    pub fn with_gains(&self, gains: Vector) -> Result<Self> {
        Self::with_names(
            self.bus_names.clone(),
            self.n_loads,
            self.n_inverters,
            self.branches.clone(),
            gains,
            self.setpoints.clone(),
        )
    }

    /// True when all inverter set points coincide (to 1e-12 relative).
    pub fn uniform_setpoints(&self) -> bool {
        let lo = linalg::min_entry(&self.setpoints);
        let hi = linalg::max_entry(&self.setpoints);
        hi - lo <= 1e-12 * hi
    }
}

/// `B` partitioned into load and inverter blocks. The full matrix is kept
/// alongside the blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct SusceptanceBlocks {
    pub full: Matrix,
    pub ll: Matrix,
    pub li: Matrix,
    pub il: Matrix,
    pub ii: Matrix,
}

impl SusceptanceBlocks {
    /// Partitions a full `(n+m)`-square susceptance matrix.
    pub fn from_full(full: Matrix, n_loads: usize) -> Self {
        let nm = full.nrows();
        let m = nm - n_loads;
        Self {
            ll: full.view((0, 0), (n_loads, n_loads)).into_owned(),
            li: full.view((0, n_loads), (n_loads, m)).into_owned(),
            il: full.view((n_loads, 0), (m, n_loads)).into_owned(),
            ii: full.view((n_loads, n_loads), (m, m)).into_owned(),
            full,
        }
    }

    pub fn n_loads(&self) -> usize {
        self.ll.nrows()
    }

    pub fn n_inverters(&self) -> usize {
        self.ii.nrows()
    }
}

/// Assembles `B` with `B_ij = b_ij` on branches and `B_ii = -sum_j B_ij`.
pub fn build_susceptance(model: &NetworkModel) -> SusceptanceBlocks {
    let nb = model.n_buses();
    let mut b = Matrix::zeros(nb, nb);
    for br in model.branches() {
        b[(br.from, br.to)] += br.susceptance;
        b[(br.to, br.from)] += br.susceptance;
    }
    for i in 0..nb {
        let off: f64 = (0..nb).filter(|&j| j != i).map(|j| b[(i, j)]).sum();
        b[(i, i)] = -off;
    }
    SusceptanceBlocks::from_full(b, model.n_loads())
}

/// Outcome of [`validate_susceptance`], with the spectral data it used.
#[derive(Debug, Clone)]
pub struct SusceptanceCheck {
    pub report: ValidationReport,
    /// Eigenvalues of `B`, ascending.
    pub eigenvalues: Vec<f64>,
    /// Unit eigenvector of the eigenvalue closest to zero, sign-normalized
    /// to a nonnegative sum.
    pub null_vector: Vector,
}

/// Checks the structural properties of a susceptance matrix: symmetry and
/// sign pattern, negative semidefiniteness with a simple zero eigenvalue on
/// the all-ones vector, and negative definite load/inverter blocks.
pub fn validate_susceptance(blocks: &SusceptanceBlocks) -> SusceptanceCheck {
    let b = &blocks.full;
    let nb = b.nrows();
    let mut report = ValidationReport::new();

    // (i) symmetry, off-diagonal sign pattern, zero row sums
    let asym = linalg::max_asymmetry(b);
    let mut worst_offdiag: Option<(usize, usize, f64)> = None;
    for i in 0..nb {
        for j in 0..nb {
            if i != j && b[(i, j)] < 0.0 {
                match worst_offdiag {
                    Some((_, _, w)) if w <= b[(i, j)] => {}
                    _ => worst_offdiag = Some((i, j, b[(i, j)])),
                }
            }
        }
    }
    let scale = linalg::max_abs(b).max(1.0);
    let row_sum_err = linalg::max_norm(&(b * linalg::ones(nb)));
    let sign_ok = worst_offdiag.is_none() && asym == 0.0;
    let detail = match worst_offdiag {
        Some((i, j, v)) => format!("negative off-diagonal B[{i},{j}] = {v:.6e}"),
        None if asym != 0.0 => format!("asymmetry {asym:.3e}"),
        None => "symmetric, off-diagonals nonnegative".into(),
    };
    report.check("symmetry_and_sign", sign_ok, detail);
    report.check(
        "zero_row_sums",
        row_sum_err <= 1e-12 * scale,
        format!("max |B 1| = {row_sum_err:.3e}"),
    );

    // (ii) negative semidefinite with a simple zero eigenvalue on 1
    let (vals, vecs) = linalg::sym_eigen(b);
    let lam_max_abs = vals.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let tol = TOL_EIG * lam_max_abs.max(f64::MIN_POSITIVE);
    let top = *vals.last().unwrap_or(&0.0);
    report.check(
        "negative_semidefinite",
        top <= tol,
        format!("largest eigenvalue {top:.6e} (tol {tol:.1e})"),
    );
    let mut mags: Vec<(f64, usize)> = vals.iter().enumerate().map(|(k, v)| (v.abs(), k)).collect();
    mags.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (zero_mag, zero_idx) = mags[0];
    let second = mags.get(1).map_or(f64::INFINITY, |m| m.0);
    let gap_ok = zero_mag <= tol && (zero_mag == 0.0 || second / zero_mag >= ZERO_GAP_RATIO);
    report.check(
        "simple_zero_eigenvalue",
        gap_ok && second > tol,
        format!("|lambda| smallest {zero_mag:.3e}, next {second:.3e}"),
    );
    let mut null_vector: Vector = vecs.column(zero_idx).into_owned();
    if null_vector.sum() < 0.0 {
        null_vector = -null_vector;
    }
    let align = null_vector.sum() / (nb as f64).sqrt();
    report.check(
        "null_vector_is_ones",
        (1.0 - align).abs() <= 1e-6,
        format!("alignment with 1/sqrt(N): {align:.12}"),
    );

    // (iii) load and inverter principal blocks negative definite
    for (name, block) in [
        ("b_ll_negative_definite", &blocks.ll),
        ("b_ii_negative_definite", &blocks.ii),
    ] {
        let ev = linalg::sym_eigenvalues(block);
        let top = ev.last().copied().unwrap_or(f64::NEG_INFINITY);
        report.check(name, top < -tol, format!("largest eigenvalue {top:.6e}"));
    }

    SusceptanceCheck {
        report,
        eigenvalues: vals,
        null_vector,
    }
}

/// Maps a lossy network with a uniform R/X ratio onto an equivalent
/// susceptive network with edge weights `|y_ij| = (g_ij^2 + b_ij^2)^(1/2)`.
pub fn rotate_uniform_ratio(branches: &[LossyBranch]) -> Result<Vec<Branch>> {
    if branches.is_empty() {
        return Ok(Vec::new());
    }
    // Direction of each admittance in the (b, g) plane. Uniform ratio means
    // identical direction; this also handles g = 0.
    let dirs: Vec<(f64, f64)> = branches
        .iter()
        .map(|br| {
            let mag = br.conductance.hypot(br.susceptance);
            if mag > 0.0 {
                (br.susceptance / mag, br.conductance / mag)
            } else {
                (f64::NAN, f64::NAN)
            }
        })
        .collect();
    if let Some(k) = dirs.iter().position(|d| d.0.is_nan()) {
        return Err(Error::NonpositiveBranch {
            index: k,
            from: branches[k].from.to_string(),
            to: branches[k].to.to_string(),
            weight: 0.0,
        });
    }
    let (b0, g0) = dirs[0];
    let spread_dir = dirs
        .iter()
        .map(|(b, g)| (b - b0).abs().max((g - g0).abs()))
        .fold(0.0, f64::max);
    if spread_dir > TOL_RATIO {
        let ratios: Vec<f64> = branches
            .iter()
            .map(|br| br.conductance / br.susceptance)
            .collect();
        let finite: Vec<f64> = ratios.iter().copied().filter(|r| r.is_finite()).collect();
        let spread = if finite.len() == ratios.len() {
            finite.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                - finite.iter().copied().fold(f64::INFINITY, f64::min)
        } else {
            f64::INFINITY
        };
        return Err(Error::NonUniformRatio { spread });
    }
    Ok(branches
        .iter()
        .map(|br| Branch::new(br.from, br.to, br.conductance.hypot(br.susceptance)))
        .collect())
}

/// Connected components of the undirected graph on `n` vertices.
pub fn connected_components(n: usize, branches: &[Branch]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for br in branches {
        if br.from < n && br.to < n {
            adj[br.from].push(br.to);
            adj[br.to].push(br.from);
        }
    }
    let mut seen = vec![false; n];
    let mut comps = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(v) = stack.pop() {
            comp.push(v);
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    comps
}

/// Second-smallest eigenvalue of the graph Laplacian `-B` (Fiedler value).
/// Positive iff the graph is connected.
pub fn algebraic_connectivity(n: usize, branches: &[Branch]) -> f64 {
    let mut lap = Matrix::zeros(n, n);
    for br in branches {
        lap[(br.from, br.to)] -= br.susceptance;
        lap[(br.to, br.from)] -= br.susceptance;
        lap[(br.from, br.from)] += br.susceptance;
        lap[(br.to, br.to)] += br.susceptance;
    }
    let ev = linalg::sym_eigenvalues(&lap);
    ev.get(1).copied().unwrap_or(0.0)
}
