//! Seeded benchmark instances.

use qdroop_core::{reduce_model, synth, LoadSpec, NetworkModel, ReducedNetwork};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A random network with its reduction and inductive ZIP loads.
pub struct Instance {
    pub model: NetworkModel,
    pub red: ReducedNetwork,
    pub spec: LoadSpec,
}

/// Builds the instance for `(n, m)` from a fixed seed, so every run
/// benchmarks the same network.
pub fn instance(n: usize, m: usize, loading: f64, seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = synth::random_network(&mut rng, n, m);
    let red = reduce_model(&model).expect("random networks reduce");
    let spec = synth::random_zip_loads(&mut rng, &red, loading);
    Instance { model, red, spec }
}

/// Same network with the constant-power part removed.
pub fn zi_instance(n: usize, m: usize, seed: u64) -> Instance {
    let mut inst = instance(n, m, 0.1, seed);
    inst.spec = inst.spec.zi_part();
    inst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instances_are_reproducible() {
        let a = instance(6, 3, 0.1, 7);
        let b = instance(6, 3, 0.1, 7);
        assert_eq!(a.red.b_red, b.red.b_red);
        assert_eq!(a.spec.q_const, b.spec.q_const);
        assert_eq!(zi_instance(6, 3, 7).spec.q_const.iter().sum::<f64>(), 0.0);
    }
}
