//! One-hidden-layer tanh perceptron with a linear scalar output and a
//! per-parameter activity mask.
//!
//! Parameters live in one flat vector packed as
//! `[W1 (h×p, row-major), B1 (h), W2 (h), B2]`, so a network with `p` inputs
//! and `h` hidden units has `m = p·h + 2h + 1` parameters. Masked-out
//! parameters are stored as exactly zero and their Jacobian columns dropped.

use std::fmt;
use std::ops::Deref;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::series::LagDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Topology {
    n_inputs: usize,
    n_hidden: usize,
}

/// Which layer a packed parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    InputWeight { hidden: usize, input: usize },
    HiddenBias { hidden: usize },
    OutputWeight { hidden: usize },
    OutputBias,
}

impl fmt::Display for ParamRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ParamRole::InputWeight { hidden, input } => write!(f, "W1[{hidden},{input}]"),
            ParamRole::HiddenBias { hidden } => write!(f, "B1[{hidden}]"),
            ParamRole::OutputWeight { hidden } => write!(f, "W2[{hidden}]"),
            ParamRole::OutputBias => write!(f, "B2"),
        }
    }
}

impl Topology {
    pub fn new(n_inputs: usize, n_hidden: usize) -> Result<Self> {
        if n_inputs == 0 || n_hidden == 0 {
            return Err(Error::invalid(format!(
                "topology needs at least one input and one hidden unit, got {n_inputs}x{n_hidden}"
            )));
        }
        Ok(Self { n_inputs, n_hidden })
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn n_hidden(&self) -> usize {
        self.n_hidden
    }

    /// Total parameter count `m`.
    pub fn n_params(&self) -> usize {
        self.n_inputs * self.n_hidden + 2 * self.n_hidden + 1
    }

    pub fn input_weight(&self, hidden: usize, input: usize) -> usize {
        hidden * self.n_inputs + input
    }

    pub fn hidden_bias(&self, hidden: usize) -> usize {
        self.n_inputs * self.n_hidden + hidden
    }

    pub fn output_weight(&self, hidden: usize) -> usize {
        self.n_inputs * self.n_hidden + self.n_hidden + hidden
    }

    pub fn output_bias(&self) -> usize {
        self.n_params() - 1
    }

    pub fn role(&self, index: usize) -> ParamRole {
        let (p, h) = (self.n_inputs, self.n_hidden);
        if index < p * h {
            ParamRole::InputWeight {
                hidden: index / p,
                input: index % p,
            }
        } else if index < p * h + h {
            ParamRole::HiddenBias {
                hidden: index - p * h,
            }
        } else if index < p * h + 2 * h {
            ParamRole::OutputWeight {
                hidden: index - p * h - h,
            }
        } else {
            assert!(index < self.n_params(), "parameter index out of range");
            ParamRole::OutputBias
        }
    }

    /// Indices of the output layer (`W2` then `B2`).
    pub fn output_layer(&self) -> impl Iterator<Item = usize> {
        self.output_weight(0)..self.n_params()
    }
}

/// Flat parameter vector in packing order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("parameters must be finite"));
        }
        Ok(Self(values))
    }

    pub fn zeros(topology: Topology) -> Self {
        Self(vec![0.0; topology.n_params()])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Per-parameter activity flags aligned with the packing order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectionMask(Vec<bool>);

impl ConnectionMask {
    pub fn full(topology: Topology) -> Self {
        Self(vec![true; topology.n_params()])
    }

    pub fn from_flags(flags: Vec<bool>) -> Self {
        Self(flags)
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_active(&self, index: usize) -> bool {
        self.0[index]
    }

    pub fn set(&mut self, index: usize, active: bool) {
        self.0[index] = active;
    }

    pub fn active_count(&self) -> usize {
        self.0.iter().filter(|&&a| a).count()
    }

    pub fn active_indices(&self) -> Vec<usize> {
        (0..self.0.len()).filter(|&i| self.0[i]).collect()
    }

    /// Length matches the topology and the output layer keeps at least one
    /// active parameter.
    pub fn validate(&self, topology: Topology) -> Result<()> {
        if self.0.len() != topology.n_params() {
            return Err(Error::Dimension {
                expected: topology.n_params(),
                got: self.0.len(),
            });
        }
        if !topology.output_layer().any(|i| self.0[i]) {
            return Err(Error::invalid(
                "mask disconnects the output: every W2 entry and B2 are inactive",
            ));
        }
        Ok(())
    }
}

/// Draws every parameter independently from U[-0.5, 0.5].
pub fn init_params(topology: Topology, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ParamVector(
        (0..topology.n_params())
            .map(|_| rng.random_range(-0.5..=0.5))
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedMlp {
    topology: Topology,
    params: ParamVector,
    mask: ConnectionMask,
}

impl MaskedMlp {
    /// Builds a network; parameters under inactive mask entries are zeroed.
    pub fn new(topology: Topology, params: ParamVector, mask: ConnectionMask) -> Result<Self> {
        if params.len() != topology.n_params() {
            return Err(Error::Dimension {
                expected: topology.n_params(),
                got: params.len(),
            });
        }
        mask.validate(topology)?;
        let mut net = Self {
            topology,
            params,
            mask,
        };
        net.zero_masked();
        Ok(net)
    }

    pub fn dense(topology: Topology, params: ParamVector) -> Result<Self> {
        Self::new(topology, params, ConnectionMask::full(topology))
    }

    fn zero_masked(&mut self) {
        for (p, &a) in self.params.0.iter_mut().zip(&self.mask.0) {
            if !a {
                *p = 0.0;
            }
        }
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn mask(&self) -> &ConnectionMask {
        &self.mask
    }

    pub fn active_params(&self) -> Vec<f64> {
        self.mask
            .active_indices()
            .into_iter()
            .map(|i| self.params[i])
            .collect()
    }

    /// Same topology and mask with different parameters.
    pub fn with_params(&self, params: ParamVector) -> Result<Self> {
        Self::new(self.topology, params, self.mask.clone())
    }

    /// Sets one parameter; masked entries must stay zero.
    pub fn set_param(&mut self, index: usize, value: f64) -> Result<()> {
        if !self.mask.is_active(index) && value != 0.0 {
            return Err(Error::invalid(format!("parameter {index} is masked out")));
        }
        self.params.0[index] = value;
        Ok(())
    }

    /// Overwrites the active parameters, in packing order.
    pub fn set_active_params(&mut self, values: &[f64]) -> Result<()> {
        let idx = self.mask.active_indices();
        if values.len() != idx.len() {
            return Err(Error::Dimension {
                expected: idx.len(),
                got: values.len(),
            });
        }
        for (i, &v) in idx.into_iter().zip(values) {
            self.params.0[i] = v;
        }
        Ok(())
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.topology.n_inputs {
            return Err(Error::Dimension {
                expected: self.topology.n_inputs,
                got: len,
            });
        }
        Ok(())
    }

    /// Network output `W2·tanh(W1·x + B1) + B2`.
    pub fn forward(&self, input: &[f64]) -> Result<f64> {
        self.check_input(input.len())?;
        Ok(self.eval(input))
    }

    fn eval(&self, input: &[f64]) -> f64 {
        let t = self.topology;
        let w = &self.params.0;
        let mut out = w[t.output_bias()];
        for q in 0..t.n_hidden {
            let a = self.activation(q, input);
            out += w[t.output_weight(q)] * a;
        }
        out
    }

    fn activation(&self, q: usize, input: &[f64]) -> f64 {
        let t = self.topology;
        let w = &self.params.0;
        let row = &w[q * t.n_inputs..(q + 1) * t.n_inputs];
        let z: f64 = row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>() + w[t.hidden_bias(q)];
        z.tanh()
    }

    /// One-step-ahead predictions for every dataset row.
    pub fn predict(&self, ds: &LagDataset) -> Result<Vec<f64>> {
        self.check_input(ds.lags())?;
        Ok(ds.rows().map(|r| self.eval(r)).collect())
    }

    /// `r_i = forward(inputs_i) - target_i`.
    pub fn residuals(&self, ds: &LagDataset) -> Result<Vec<f64>> {
        self.check_input(ds.lags())?;
        Ok(ds
            .rows()
            .zip(ds.targets())
            .map(|(r, &y)| self.eval(r) - y)
            .collect())
    }

    /// Analytic Jacobian of the residual vector with respect to the active
    /// parameters; one row per dataset row, columns in packing order.
    pub fn jacobian(&self, ds: &LagDataset) -> Result<Matrix> {
        Ok(self.residuals_and_jacobian(ds)?.1)
    }

    pub fn residuals_and_jacobian(&self, ds: &LagDataset) -> Result<(Vec<f64>, Matrix)> {
        self.residuals_and_jacobian_for(ds, &self.mask.active_indices())
    }

    /// Residuals plus the Jacobian restricted to the packed parameter
    /// indices in `columns` (in that order).
    pub fn residuals_and_jacobian_for(
        &self,
        ds: &LagDataset,
        columns: &[usize],
    ) -> Result<(Vec<f64>, Matrix)> {
        self.check_input(ds.lags())?;
        let t = self.topology;
        if let Some(&bad) = columns.iter().find(|&&c| c >= t.n_params()) {
            return Err(Error::invalid(format!(
                "parameter index {bad} out of range"
            )));
        }
        let (p, h) = (t.n_inputs, t.n_hidden);
        let w = &self.params.0;
        let active = columns;
        let mut jac = Matrix::zeros(ds.len(), active.len());
        let mut resid = Vec::with_capacity(ds.len());
        let mut grad = vec![0.0; t.n_params()];
        let mut acts = vec![0.0; h];

        for (i, (x, &y)) in ds.rows().zip(ds.targets()).enumerate() {
            let mut out = w[t.output_bias()];
            for (q, a) in acts.iter_mut().enumerate() {
                *a = self.activation(q, x);
                out += w[t.output_weight(q)] * *a;
            }
            resid.push(out - y);

            for (q, &a) in acts.iter().enumerate() {
                let delta = w[t.output_weight(q)] * (1.0 - a * a);
                for (g, &xj) in grad[q * p..(q + 1) * p].iter_mut().zip(x) {
                    *g = delta * xj;
                }
                grad[t.hidden_bias(q)] = delta;
                grad[t.output_weight(q)] = a;
            }
            grad[t.output_bias()] = 1.0;

            for (dst, &src) in jac.row_mut(i).iter_mut().zip(active) {
                *dst = grad[src];
            }
        }
        Ok((resid, jac))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop, prop_assert, prop_assert_eq, proptest};

    fn topo(p: usize, h: usize) -> Topology {
        Topology::new(p, h).unwrap()
    }

    fn random_ds(p: usize, n: usize, seed: u64) -> LagDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = (0..n * p).map(|_| rng.random_range(-2.0..2.0)).collect();
        let targets = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        LagDataset::from_parts(p, inputs, targets).unwrap()
    }

    #[test]
    fn packing_layout() {
        let t = topo(7, 2);
        assert_eq!(t.n_params(), 19);
        assert_eq!(t.input_weight(1, 6), 13);
        assert_eq!(t.hidden_bias(0), 14);
        assert_eq!(t.output_weight(1), 17);
        assert_eq!(t.output_bias(), 18);
        assert_eq!(
            t.role(13),
            ParamRole::InputWeight {
                hidden: 1,
                input: 6
            }
        );
        assert_eq!(t.role(15), ParamRole::HiddenBias { hidden: 1 });
        assert_eq!(t.role(16).to_string(), "W2[0]");
        assert_eq!(t.role(18), ParamRole::OutputBias);
        assert!(Topology::new(0, 2).is_err());
        assert!(Topology::new(3, 0).is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let t = topo(7, 2);
        let a = init_params(t, 42);
        assert_eq!(a, init_params(t, 42));
        assert_ne!(a, init_params(t, 43));
        assert_eq!(a.len(), 19);
        for seed in 0..50 {
            assert!(init_params(t, seed)
                .iter()
                .all(|v| (-0.5..=0.5).contains(v)));
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        let t = topo(7, 2);
        let net = MaskedMlp::dense(t, ParamVector::zeros(t)).unwrap();
        assert_eq!(net.forward(&[1.0; 7]).unwrap(), 0.0);
    }

    #[test]
    fn single_unit_tanh_one() {
        let t = topo(7, 1);
        let mut w = vec![0.0; t.n_params()];
        w[t.input_weight(0, 0)] = 1.0;
        w[t.output_weight(0)] = 1.0;
        let net = MaskedMlp::dense(t, ParamVector::new(w).unwrap()).unwrap();
        let mut x = [0.0; 7];
        x[0] = 1.0;
        assert!((net.forward(&x).unwrap() - 0.7615941559557649).abs() < 1e-12);
    }

    #[test]
    fn forward_dimension_mismatch() {
        let t = topo(3, 2);
        let net = MaskedMlp::dense(t, init_params(t, 1)).unwrap();
        assert!(matches!(
            net.forward(&[1.0, 2.0]),
            Err(Error::Dimension {
                expected: 3,
                got: 2
            })
        ));
        assert!(net.residuals(&random_ds(4, 3, 0)).is_err());
    }

    #[test]
    fn masking_equals_explicit_zeroing() {
        let t = topo(7, 2);
        let params = init_params(t, 9);
        let idx = t.input_weight(1, 3);
        let mut mask = ConnectionMask::full(t);
        mask.set(idx, false);
        let masked = MaskedMlp::new(t, params.clone(), mask).unwrap();
        assert_eq!(masked.params()[idx], 0.0);

        let mut zeroed = params.into_vec();
        zeroed[idx] = 0.0;
        let explicit = MaskedMlp::dense(t, ParamVector::new(zeroed).unwrap()).unwrap();
        let x = [0.3, -1.2, 0.5, 2.0, -0.7, 0.1, 1.1];
        assert_eq!(masked.forward(&x).unwrap(), explicit.forward(&x).unwrap());
    }

    #[test]
    fn residual_sign_convention() {
        let t = topo(1, 1);
        let net = MaskedMlp::dense(t, ParamVector::zeros(t)).unwrap();
        let ds = LagDataset::from_parts(1, vec![0.0, 0.0], vec![1.0, -2.0]).unwrap();
        assert_eq!(net.residuals(&ds).unwrap(), vec![-1.0, 2.0]);
        let zeros = LagDataset::from_parts(1, vec![0.5, 0.5], vec![0.0, 0.0]).unwrap();
        assert_eq!(net.residuals(&zeros).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn duplicated_rows_share_residuals() {
        let t = topo(3, 2);
        let net = MaskedMlp::dense(t, init_params(t, 5)).unwrap();
        let ds = random_ds(3, 4, 2).select(&[1, 3, 1]);
        let r = net.residuals(&ds).unwrap();
        assert_eq!(r[0], r[2]);
    }

    #[test]
    fn output_bias_column_is_ones() {
        let t = topo(3, 2);
        let net = MaskedMlp::dense(t, init_params(t, 3)).unwrap();
        let j = net.jacobian(&random_ds(3, 6, 1)).unwrap();
        assert!(j.column(t.output_bias()).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn zero_network_jacobian_structure() {
        let t = topo(3, 2);
        let net = MaskedMlp::dense(t, ParamVector::zeros(t)).unwrap();
        let j = net.jacobian(&random_ds(3, 6, 4)).unwrap();
        for q in 0..2 {
            assert!(j.column(t.output_weight(q)).iter().all(|&v| v == 0.0));
            for i in 0..3 {
                assert!(j.column(t.input_weight(q, i)).iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn jacobian_drops_masked_columns() {
        let t = topo(3, 2);
        let mut mask = ConnectionMask::full(t);
        mask.set(t.input_weight(0, 1), false);
        mask.set(t.hidden_bias(1), false);
        let full = MaskedMlp::dense(t, init_params(t, 8)).unwrap();
        let net = MaskedMlp::new(t, init_params(t, 8), mask.clone()).unwrap();
        let ds = random_ds(3, 5, 6);
        let j = net.jacobian(&ds).unwrap();
        assert_eq!(j.cols(), t.n_params() - 2);
        assert_eq!(j.rows(), 5);
        // Output weight column depends on B1[1] being zero, so compare against
        // a dense net with the same zeroing.
        let mut zeroed = full.params().to_vec();
        zeroed[t.input_weight(0, 1)] = 0.0;
        zeroed[t.hidden_bias(1)] = 0.0;
        let dense = MaskedMlp::dense(t, ParamVector::new(zeroed).unwrap()).unwrap();
        let jd = dense.jacobian(&ds).unwrap();
        for (c, &src) in mask.active_indices().iter().enumerate() {
            assert_eq!(j.column(c), jd.column(src));
        }
    }

    #[test]
    fn mask_guard_rejects_disconnected_output() {
        let t = topo(2, 2);
        let mut mask = ConnectionMask::full(t);
        for i in t.output_layer() {
            mask.set(i, false);
        }
        assert!(MaskedMlp::new(t, ParamVector::zeros(t), mask.clone()).is_err());
        mask.set(t.output_bias(), true);
        assert!(MaskedMlp::new(t, ParamVector::zeros(t), mask).is_ok());
    }

    proptest! {
        #[test]
        fn output_bounded_by_output_layer_norm(
            seed in any::<u64>(),
            x in prop::collection::vec(-50.0f64..50.0, 4),
        ) {
            let t = topo(4, 3);
            let net = MaskedMlp::dense(t, init_params(t, seed)).unwrap();
            let bound: f64 = t.output_layer().map(|i| net.params()[i].abs()).sum();
            prop_assert!(net.forward(&x).unwrap().abs() <= bound + 1e-12);
        }

        #[test]
        fn output_bias_shifts_output(seed in any::<u64>(), shift in -5.0f64..5.0) {
            let t = topo(3, 2);
            let params = init_params(t, seed);
            let mut moved = params.to_vec();
            moved[t.output_bias()] += shift;
            let a = MaskedMlp::dense(t, params).unwrap();
            let b = MaskedMlp::dense(t, ParamVector::new(moved).unwrap()).unwrap();
            let x = [0.1, -0.4, 0.9];
            let diff = b.forward(&x).unwrap() - a.forward(&x).unwrap();
            prop_assert!((diff - shift).abs() <= 1e-12 * (1.0 + shift.abs()));
        }

        #[test]
        fn masked_values_do_not_leak(seed in any::<u64>(), junk in -10.0f64..10.0) {
            let t = topo(3, 2);
            let mut mask = ConnectionMask::full(t);
            mask.set(t.input_weight(1, 2), false);
            let mut a = init_params(t, seed).to_vec();
            let mut b = a.clone();
            a[t.input_weight(1, 2)] = junk;
            b[t.input_weight(1, 2)] = 0.0;
            let na = MaskedMlp::new(t, ParamVector::new(a).unwrap(), mask.clone()).unwrap();
            let nb = MaskedMlp::new(t, ParamVector::new(b).unwrap(), mask).unwrap();
            let ds = random_ds(3, 4, seed);
            prop_assert_eq!(na.residuals(&ds).unwrap(), nb.residuals(&ds).unwrap());
            prop_assert_eq!(na.jacobian(&ds).unwrap(), nb.jacobian(&ds).unwrap());
        }
    }
}
