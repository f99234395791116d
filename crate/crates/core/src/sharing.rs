//! Steady-state reactive power sharing between inverters.
//!
//! Under uniform set points the inverter injections are linear in the load
//! powers to first order, `Q_I = S_eps Q_L`, where `eps` scales every gain.
//! Stiff controllers (`eps -> inf`) share by electrical distance through
//! `B_IL B_LL^-1`; soft controllers (`eps -> 0`) share in proportion to
//! their gains regardless of topology.

use crate::equilibrium::EquilibriumSolution;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::loads::LoadSpec;
use crate::netmodel::{NetworkModel, SusceptanceBlocks};
use crate::reduction::{DirectReactance, EffectiveReactanceMap};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SharingRegime {
    /// Gains scaled by `eps`.
    General(f64),
    HighGain,
    LowGain,
}

impl SharingRegime {
    pub fn label(self) -> String {
        match self {
            SharingRegime::General(eps) => format!("general(eps={eps})"),
            SharingRegime::HighGain => "high_gain".into(),
            SharingRegime::LowGain => "low_gain".into(),
        }
    }
}

/// `S_eps = eps K (B_II + eps K)^-1 B_IL B_red,eps^-1` with
/// `B_red,eps = B_LL - B_LI (B_II + eps K)^-1 B_IL`.
pub fn sharing_matrix(blocks: &SusceptanceBlocks, gains: &Vector, eps: f64) -> Result<Matrix> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidGainScale(eps));
    }
    let k = linalg::diag(&(gains * eps));
    let a = &blocks.ii + &k;
    let neg_a = linalg::spd_factor(&(-&a), "-(B_II + eps K)")?;
    // X = (B_II + eps K)^-1 B_IL
    let x = -neg_a.solve(&blocks.il);
    let b_red = linalg::symmetrize(&(&blocks.ll - &blocks.li * &x));
    let neg_red = linalg::spd_factor(&(-&b_red), "-B_red,eps")?;
    // S = K X B_red^-1 = -(K X)(-B_red)^-1; B_red symmetric so solve on the transpose.
    let kx = &k * x;
    let s_t = neg_red.solve(&kx.transpose());
    Ok(-s_t.transpose())
}

/// `B_IL B_LL^-1`, the high-gain limit of the sharing matrix.
pub fn high_gain_matrix(blocks: &SusceptanceBlocks) -> Result<Matrix> {
    let neg_ll = linalg::spd_factor(&(-&blocks.ll), "-B_LL")?;
    Ok(-neg_ll.solve(&blocks.il.transpose()).transpose())
}

/// The same limit assembled term by term from direct and effective
/// reactances: `S_ij = -sum_k X_eff,kj / X_ik` over loads `k` with a branch
/// to inverter `i`.
pub fn high_gain_matrix_from_distances(x: &EffectiveReactanceMap) -> Matrix {
    let n = x.n_loads();
    let m = x.n_inverters();
    Matrix::from_fn(m, n, |i, j| {
        let mut s = 0.0;
        for k in 0..n {
            if let DirectReactance::Branch(x_ik) = x.direct(n + i, k) {
                s -= x.x_eff[(k, j)] / x_ik;
            }
        }
        s
    })
}

/// Low-gain limit `-(K / sum K) 1^T`: every column sends the load's power to
/// the inverters in proportion to their gains.
pub fn low_gain_matrix(gains: &Vector, n_loads: usize) -> Matrix {
    let total = gains.sum();
    Matrix::from_fn(gains.len(), n_loads, |i, _| -gains[i] / total)
}

/// High-gain injections `Q_I = B_IL B_LL^-1 Q_L`.
pub fn high_gain_limit(blocks: &SusceptanceBlocks, q_l: &Vector) -> Result<Vector> {
    Ok(high_gain_matrix(blocks)? * q_l)
}

/// Low-gain injections: inverter `i` supplies `K_i / sum K` of the total demand.
pub fn low_gain_limit(gains: &Vector, q_l: &Vector) -> Vector {
    let total_demand = -q_l.sum();
    gains * (total_demand / gains.sum())
}

/// Fractions `Q_i / sum_j Q_j` (zero vector if the total vanishes).
pub fn shares(q_i: &Vector) -> Vector {
    let total = q_i.sum();
    if total == 0.0 {
        Vector::zeros(q_i.len())
    } else {
        q_i / total
    }
}

/// Gain fractions `K_i / sum K`.
pub fn gain_shares(gains: &Vector) -> Vector {
    gains / gains.sum()
}

#[derive(Debug, Clone)]
pub struct SharingReport {
    pub regime: SharingRegime,
    /// Sharing matrix of the regime (m x n).
    pub s: Matrix,
    /// Load powers the injections refer to.
    pub q_l: Vector,
    /// Inverter injections.
    pub q_i: Vector,
    pub shares: Vector,
    /// `max_i |Q_i / sum Q - K_i / sum K|`.
    pub proportional_error: f64,
    /// `max_i |Q_i / sum Q - Q_i^high / sum Q^high|`, on share-normalized vectors.
    pub distance_error: f64,
    /// `|Q_I - Q_I^high|_inf` in per-unit power.
    pub distance_error_abs: f64,
    /// Set points are not uniform, so the limits are only indicative.
    pub approximate: bool,
}

fn errors(gains: &Vector, q_i: &Vector, q_high: &Vector) -> (f64, f64, f64) {
    let sh = shares(q_i);
    let prop = linalg::max_norm(&(&sh - gain_shares(gains)));
    let dist = linalg::max_norm(&(&sh - shares(q_high)));
    let dist_abs = linalg::max_norm(&(q_i - q_high));
    (prop, dist, dist_abs)
}

/// Linearized injections `S Q_L` for the requested regime.
pub fn sharing_report(
    model: &NetworkModel,
    blocks: &SusceptanceBlocks,
    q_l: &Vector,
    regime: SharingRegime,
) -> Result<SharingReport> {
    let gains = model.gains();
    let s = match regime {
        SharingRegime::General(eps) => sharing_matrix(blocks, gains, eps)?,
        SharingRegime::HighGain => high_gain_matrix(blocks)?,
        SharingRegime::LowGain => low_gain_matrix(gains, blocks.n_loads()),
    };
    let q_i = &s * q_l;
    let q_high = high_gain_limit(blocks, q_l)?;
    let (prop, dist, dist_abs) = errors(gains, &q_i, &q_high);
    // In the low-gain limit the fractions are the gain ratios themselves.
    let fractions = match regime {
        SharingRegime::LowGain => gain_shares(gains),
        _ => shares(&q_i),
    };
    Ok(SharingReport {
        regime,
        shares: fractions,
        s,
        q_l: q_l.clone(),
        q_i,
        proportional_error: prop,
        distance_error: dist,
        distance_error_abs: dist_abs,
        approximate: !model.uniform_setpoints(),
    })
}

/// Realized injections `Q_i = K_i E_i (E_i - E_i*)` at an equilibrium,
/// compared against both sharing limits evaluated at the realized load powers.
pub fn sharing_diagnostics(
    model: &NetworkModel,
    blocks: &SusceptanceBlocks,
    spec: &LoadSpec,
    sol: &EquilibriumSolution,
) -> Result<SharingReport> {
    let gains = model.gains();
    let q_i = realized_injections(gains, model.setpoints(), &sol.e_i);
    let q_l = spec.eval(&sol.e_l)?;
    let s = sharing_matrix(blocks, gains, 1.0)?;
    let q_high = high_gain_limit(blocks, &q_l)?;
    let (prop, dist, dist_abs) = errors(gains, &q_i, &q_high);
    Ok(SharingReport {
        regime: SharingRegime::General(1.0),
        shares: shares(&q_i),
        s,
        q_l,
        q_i,
        proportional_error: prop,
        distance_error: dist,
        distance_error_abs: dist_abs,
        approximate: !model.uniform_setpoints(),
    })
}

/// `K_i E_i (E_i - E_i*)` per inverter.
pub fn realized_injections(gains: &Vector, setpoints: &Vector, e_i: &Vector) -> Vector {
    Vector::from_fn(e_i.len(), |k, _| {
        gains[k] * e_i[k] * (e_i[k] - setpoints[k])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{solve_newton, SolverOptions};
    use crate::netmodel::{build_susceptance, Branch};
    use crate::reduction::{effective_reactances, reduce_model};
    use crate::synth;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> Vector {
        Vector::from_vec(x.to_vec())
    }

    #[test]
    fn two_bus_single_inverter_carries_everything() {
        let blocks = build_susceptance(&synth::two_bus());
        let s = sharing_matrix(&blocks, &v(&[-1.0]), 1.0).unwrap();
        // K (B_II + K)^-1 B_IL B_red^-1 = (-1)(1/-2)(1)(1/-0.5) = -1
        assert!((s[(0, 0)] + 1.0).abs() < 1e-14);
        let q_i = &s * v(&[-0.3]);
        assert!((q_i[0] - 0.3).abs() < 1e-14);
    }

    #[test]
    fn zero_gain_scale_rejected() {
        let blocks = build_susceptance(&synth::two_bus());
        assert!(matches!(
            sharing_matrix(&blocks, &v(&[-1.0]), 0.0),
            Err(Error::InvalidGainScale(_))
        ));
    }

    #[test]
    fn star_high_gain_shares() {
        let model = synth::star(2.0, 1.0, [-1.0, -3.0]);
        let blocks = build_susceptance(&model);
        let q = high_gain_limit(&blocks, &v(&[-1.0])).unwrap();
        assert!((q[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((q[1] - 1.0 / 3.0).abs() < 1e-12);
        let x = effective_reactances(&blocks).unwrap();
        let sum_form = high_gain_matrix_from_distances(&x);
        assert!(linalg::max_abs(&(sum_form - high_gain_matrix(&blocks).unwrap())) < 1e-15);
    }

    #[test]
    fn symmetric_star_splits_equally_for_any_gains() {
        let model = synth::star(1.5, 1.5, [-0.2, -7.0]);
        let blocks = build_susceptance(&model);
        let q = high_gain_limit(&blocks, &v(&[-0.4])).unwrap();
        assert!((q[0] - q[1]).abs() < 1e-15);
    }

    #[test]
    fn low_gain_ratios() {
        let q = low_gain_limit(
            &v(&[-2.0, -2.0, -1.0]),
            &v(&[-0.3, -0.2, -0.1, -0.25, -0.15]),
        );
        assert_eq!(
            gain_shares(&v(&[-2.0, -2.0, -1.0])).as_slice(),
            &[0.4, 0.4, 0.2]
        );
        let sh = shares(&q);
        assert!((sh[0] - 0.4).abs() < 1e-15 && (sh[2] - 0.2).abs() < 1e-15);
        assert!((q.sum() - 1.0).abs() < 1e-15);
        let eq = low_gain_limit(&v(&[-1.0, -1.0]), &v(&[-0.6]));
        assert_eq!(eq[0], eq[1]);
    }

    #[test]
    fn high_gain_columns_sum_to_minus_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for _ in 0..20 {
            let n = rng.random_range(1..8);
            let m = rng.random_range(1..4);
            let blocks = build_susceptance(&synth::random_network(&mut rng, n, m));
            let s = high_gain_matrix(&blocks).unwrap();
            for j in 0..n {
                assert!((s.column(j).sum() + 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sharing_limits_in_gain_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let model = synth::random_network(&mut rng, 6, 3);
        let blocks = build_susceptance(&model);
        let high = high_gain_matrix(&blocks).unwrap();
        let low = low_gain_matrix(model.gains(), 6);
        let s_hi = sharing_matrix(&blocks, model.gains(), 1e6).unwrap();
        assert!(linalg::max_abs(&(s_hi - &high)) < 1e-4);
        let s_lo = sharing_matrix(&blocks, model.gains(), 1e-6).unwrap();
        assert!(linalg::max_abs(&(s_lo - &low)) < 1e-4);
        // every column sums to -1 in all regimes
        let s1 = sharing_matrix(&blocks, model.gains(), 1.0).unwrap();
        for j in 0..6 {
            assert!((s1.column(j).sum() + 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn single_inverter_diagnostics_are_exact() {
        let model = NetworkModel::new(
            2,
            1,
            vec![Branch::new(0, 1, 1.0), Branch::new(1, 2, 2.0)],
            v(&[-1.5]),
            v(&[1.0]),
        )
        .unwrap();
        let red = reduce_model(&model).unwrap();
        let spec = LoadSpec::constant_power(v(&[-0.05, -0.08]));
        let sol = solve_newton(&red, &spec, &SolverOptions::default()).unwrap();
        let rep = sharing_diagnostics(&model, &red.blocks, &spec, &sol).unwrap();
        assert!(rep.proportional_error < 1e-12);
        assert!(rep.distance_error < 1e-12);
    }

    #[test]
    fn low_gain_shares_ignore_topology() {
        let a = synth::fig1b_unit();
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let b = synth::random_network(&mut rng, 5, 3)
            .with_gains(a.gains().clone())
            .unwrap();
        let q = v(&[-0.1, -0.2, -0.1, -0.3, -0.05]);
        let ra = sharing_report(&a, &build_susceptance(&a), &q, SharingRegime::LowGain).unwrap();
        let rb = sharing_report(&b, &build_susceptance(&b), &q, SharingRegime::LowGain).unwrap();
        assert_eq!(ra.q_i, rb.q_i);
    }
}
