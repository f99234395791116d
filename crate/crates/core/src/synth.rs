//! Reference networks and seeded random instance generators, used by the
//! test suites and benchmarks.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::equilibrium;
use crate::linalg::{self, Vector};
use crate::loads::LoadSpec;
use crate::netmodel::{Branch, NetworkModel};
use crate::reduction::ReducedNetwork;

/// One load tied to one inverter through a unit branch, `K = -1`, `E* = 1`.
pub fn two_bus() -> NetworkModel {
    NetworkModel::new(
        1,
        1,
        vec![Branch::new(0, 1, 1.0)],
        Vector::from_element(1, -1.0),
        Vector::from_element(1, 1.0),
    )
    .expect("two-bus model is valid")
}

/// One load fed by two inverters through branches of susceptance `b_a`, `b_b`.
pub fn star(b_a: f64, b_b: f64, gains: [f64; 2]) -> NetworkModel {
    NetworkModel::new(
        1,
        2,
        vec![Branch::new(0, 1, b_a), Branch::new(0, 2, b_b)],
        Vector::from_row_slice(&gains),
        Vector::from_element(2, 1.0),
    )
    .expect("star model is valid")
}

/// Branch list of the five-load, three-inverter meshed test microgrid.
/// Dense indices: loads `L1..L5` are 0..4, inverters `I1..I3` are 5..7.
pub const FIG1B_BRANCHES: [(usize, usize); 8] = [
    (5, 0),
    (0, 1),
    (1, 2),
    (2, 6),
    (1, 3),
    (3, 4),
    (4, 7),
    (2, 4),
];

/// The five-load, three-inverter microgrid with unit branch weights,
/// gains in ratio `2 : 2 : 1` and unit set points.
pub fn fig1b_unit() -> NetworkModel {
    NetworkModel::new(
        5,
        3,
        FIG1B_BRANCHES
            .iter()
            .map(|&(a, b)| Branch::new(a, b, 1.0))
            .collect(),
        Vector::from_row_slice(&[-2.0, -2.0, -1.0]),
        Vector::from_element(3, 1.0),
    )
    .expect("fig1b model is valid")
}

/// Random connected network: a random spanning tree over all buses plus
/// about `(n + m) / 2` extra branches. Branch weights in `[0.5, 5]`, gains
/// in `[-5, -0.5]`, set points in `[0.95, 1.05]`.
pub fn random_network<R: Rng + ?Sized>(rng: &mut R, n: usize, m: usize) -> NetworkModel {
    let nb = n + m;
    let mut order: Vec<usize> = (0..nb).collect();
    order.shuffle(rng);
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for k in 1..nb {
        let parent = order[rng.random_range(0..k)];
        edges.push((parent, order[k]));
    }
    let extra = nb / 2;
    for _ in 0..extra {
        let a = rng.random_range(0..nb);
        let b = rng.random_range(0..nb);
        let dup = edges
            .iter()
            .any(|&(x, y)| (x == a && y == b) || (x == b && y == a));
        if a != b && !dup {
            edges.push((a, b));
        }
    }
    let branches = edges
        .into_iter()
        .map(|(a, b)| Branch::new(a, b, rng.random_range(0.5..5.0)))
        .collect();
    let gains = Vector::from_fn(m, |_, _| rng.random_range(-5.0..-0.5));
    let setpoints = Vector::from_fn(m, |_, _| rng.random_range(0.95..1.05));
    NetworkModel::new(n, m, branches, gains, setpoints).expect("random network is valid")
}

/// Same as [`random_network`] with all set points equal to one.
pub fn random_network_uniform<R: Rng + ?Sized>(rng: &mut R, n: usize, m: usize) -> NetworkModel {
    let model = random_network(rng, n, m);
    NetworkModel::new(
        n,
        m,
        model.branches().to_vec(),
        model.gains().clone(),
        Vector::from_element(m, 1.0),
    )
    .expect("random network is valid")
}

/// Inductive ZI loads satisfying the closed-form hypotheses:
/// `b_i` up to 30% of `|B_red,ii|` and `I_i` between `B_red E_L*` and 0,
/// scaled down by halves until every load voltage stays above 60% of
/// `min(E_L*)`. Weakly tied load buses would otherwise sit near zero volts.
pub fn random_zi_loads<R: Rng + ?Sized>(rng: &mut R, red: &ReducedNetwork) -> LoadSpec {
    let n = red.n_loads();
    let be = &red.b_red * &red.e_l_star;
    let mut b = Vector::from_fn(n, |i, _| {
        -rng.random_range(0.0..0.3) * red.b_red[(i, i)].abs()
    });
    let mut cur = Vector::from_fn(n, |i, _| rng.random_range(0.0..0.5) * be[i]);
    let target = 0.6 * linalg::min_entry(&red.e_l_star);
    for _ in 0..60 {
        match equilibrium::zi_closed_form(red, &b, &cur) {
            Ok(e) if linalg::min_entry(&e) >= target => break,
            _ => {
                b *= 0.5;
                cur *= 0.5;
            }
        }
    }
    LoadSpec::zi(b, cur)
}

/// Constant-impedance loads only (`I = 0`).
pub fn random_z_loads<R: Rng + ?Sized>(rng: &mut R, red: &ReducedNetwork) -> LoadSpec {
    let n = red.n_loads();
    let b = Vector::from_fn(n, |i, _| {
        -rng.random_range(0.0..0.3) * red.b_red[(i, i)].abs()
    });
    LoadSpec::zi(b, Vector::zeros(n))
}

/// ZIP loads: random ZI part plus consuming constant-power terms scaled so
/// that `|Q_sc^-1 Q_L|_inf` equals `loading`.
pub fn random_zip_loads<R: Rng + ?Sized>(
    rng: &mut R,
    red: &ReducedNetwork,
    loading: f64,
) -> LoadSpec {
    let zi = random_zi_loads(rng, red);
    let n = red.n_loads();
    let q = Vector::from_fn(n, |_, _| -rng.random_range(0.2..1.0));
    let e_zi = equilibrium::zi_closed_form(red, &zi.b_shunt, &zi.i_shunt)
        .expect("random ZI loads satisfy the closed-form hypotheses");
    let q_sc = equilibrium::short_circuit_matrix(red, &zi.b_shunt, &e_zi);
    let x = linalg::lu_solve_vec(&q_sc, &q, "Q_sc").expect("Q_sc is nonsingular");
    let q = q * (loading / linalg::max_norm(&x));
    LoadSpec::zip(zi.b_shunt, zi.i_shunt, q)
}

/// Pure constant-power loads scaled to the given `|Q_sc^-1 Q_L|_inf` with
/// `Q_sc = [E_L*] B_red [E_L*]`.
pub fn random_constant_power<R: Rng + ?Sized>(
    rng: &mut R,
    red: &ReducedNetwork,
    loading: f64,
) -> LoadSpec {
    let n = red.n_loads();
    let q = Vector::from_fn(n, |_, _| -rng.random_range(0.2..1.0));
    let q_sc = equilibrium::short_circuit_matrix(red, &Vector::zeros(n), &red.e_l_star);
    let x = linalg::lu_solve_vec(&q_sc, &q, "Q_sc").expect("Q_sc is nonsingular");
    LoadSpec::constant_power(q * (loading / linalg::max_norm(&x)))
}

/// Inverter time constants in `[0.05, 0.5]` seconds.
pub fn random_tau<R: Rng + ?Sized>(rng: &mut R, m: usize) -> Vector {
    Vector::from_fn(m, |_, _| rng.random_range(0.05..0.5))
}
