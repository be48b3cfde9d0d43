//! Fixtures shared by the benchmarks.

use pmlp::{LagDataset, MaskedMlp, ParamVector, Topology};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random dense network and dataset of `n` rows.
pub fn fixture(p: usize, h: usize, n: usize, seed: u64) -> (MaskedMlp, LagDataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = Topology::new(p, h).unwrap();
    let w = (0..t.n_params())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let net = MaskedMlp::dense(t, ParamVector::new(w).unwrap()).unwrap();
    let inputs = (0..n * p).map(|_| rng.random_range(-2.0..2.0)).collect();
    let targets = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    (net, LagDataset::from_parts(p, inputs, targets).unwrap())
}
