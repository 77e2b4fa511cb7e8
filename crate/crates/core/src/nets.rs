//! Multilayer perceptrons over the tape engine.
//!
//! Every network here is a plain fully-connected stack: relu hidden layers, then one of
//! three heads — linear, sigmoid (probability output), or row-wise softmax (distribution
//! output). Parameters live in the [`Mlp`] between steps and are registered on a fresh
//! tape per forward pass; a `tracked=false` pass feeds them in as constants so no gradient
//! ever flows to a network that the current update must not touch.
//!
//! [`Mlp::input_gradient`] builds ∂output/∂input *as tape ops* (valid for scalar-output
//! linear-head critics with relu hidden layers, whose second derivative vanishes almost
//! everywhere), so an objective that penalizes the critic's input gradient can still be
//! differentiated with one ordinary backward pass.

use crate::rng::SeededSampler;
use crate::tensor::{Parameter, Tape, TensorError, Var};

type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Linear,
    Sigmoid,
    Softmax,
}

/// Fully-connected network: `in_dim → hidden… → out_dim` with relu between layers.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
    pub hidden: Vec<usize>,
    pub head: Head,
    /// interleaved `[w0, b0, w1, b1, …]`; weight l has shape `dims[l] × dims[l+1]`
    pub params: Vec<Parameter>,
}

/// Per-layer tape handles captured during a forward pass, enough to reconstruct an exact
/// input-gradient expression afterwards.
pub struct ForwardTrace {
    pub output: Var,
    pub input: Var,
    /// pre-activation of every layer, in forward order
    pres: Vec<Var>,
    /// weight vars (params or constants) of every layer, in forward order
    weights: Vec<Var>,
}

impl Mlp {
    /// Glorot-uniform weights (limit √(6/(fan_in+fan_out))), zero biases.
    pub fn new(
        name: impl Into<String>,
        in_dim: usize,
        hidden: &[usize],
        out_dim: usize,
        head: Head,
        rng: &mut SeededSampler,
    ) -> Self {
        let name = name.into();
        let dims: Vec<usize> = std::iter::once(in_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(out_dim))
            .collect();
        let mut params = Vec::with_capacity(2 * (dims.len() - 1));
        for l in 0..dims.len() - 1 {
            params.push(Parameter::glorot(format!("{name}.w{l}"), dims[l], dims[l + 1], rng));
            params.push(Parameter::zeros(format!("{name}.b{l}"), 1, dims[l + 1]));
        }
        Self { name, in_dim, out_dim, hidden: hidden.to_vec(), head, params }
    }

    /// `[in, hidden…, out]`
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.in_dim)
            .chain(self.hidden.iter().copied())
            .chain(std::iter::once(self.out_dim))
            .collect()
    }

    pub fn n_layers(&self) -> usize {
        self.hidden.len() + 1
    }

    /// Forward pass. With `tracked`, parameters are registered at slots
    /// `slot_base + i` (i indexing [`Mlp::params`]); otherwise they enter as constants and
    /// receive no gradient.
    pub fn forward_trace(
        &self,
        tape: &mut Tape,
        input: Var,
        slot_base: usize,
        tracked: bool,
    ) -> Result<ForwardTrace> {
        if input.cols != self.in_dim {
            return Err(TensorError::ShapeMismatch {
                op: "mlp forward",
                lhs: format!("input {}x{}", input.rows, input.cols),
                rhs: format!("in_dim {}", self.in_dim),
            });
        }
        let n_layers = self.n_layers();
        let mut pres = Vec::with_capacity(n_layers);
        let mut weights = Vec::with_capacity(n_layers);
        let mut h = input;
        for l in 0..n_layers {
            let (wp, bp) = (&self.params[2 * l], &self.params[2 * l + 1]);
            let w = if tracked {
                tape.param(wp, slot_base + 2 * l)?
            } else {
                tape.constant(wp.data.clone(), wp.rows, wp.cols)?
            };
            let b = if tracked {
                tape.param(bp, slot_base + 2 * l + 1)?
            } else {
                tape.constant(bp.data.clone(), bp.rows, bp.cols)?
            };
            let hw = tape.matmul(h, w)?;
            let pre = tape.add_row(hw, b)?;
            pres.push(pre);
            weights.push(w);
            h = if l + 1 < n_layers { tape.relu(pre)? } else { pre };
        }
        let output = match self.head {
            Head::Linear => h,
            Head::Sigmoid => tape.sigmoid(h)?,
            Head::Softmax => tape.softmax_rows(h)?,
        };
        Ok(ForwardTrace { output, input, pres, weights })
    }

    pub fn forward(&self, tape: &mut Tape, input: Var, slot_base: usize, tracked: bool) -> Result<Var> {
        Ok(self.forward_trace(tape, input, slot_base, tracked)?.output)
    }

    /// Convenience forward on raw row-major data, returning the output values.
    pub fn eval(&self, data: &[f64], rows: usize) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let input = tape.constant(data.to_vec(), rows, self.in_dim)?;
        let out = self.forward(&mut tape, input, 0, false)?;
        Ok(tape.value(out).to_vec())
    }

    /// Build ∂(scalar output)/∂input on the tape as a `[rows × in_dim]` expression whose
    /// value depends on the same parameter vars as the forward pass — so a loss built from
    /// it differentiates through to the parameters with the ordinary backward pass.
    ///
    /// Requires a linear head with a single output and relu hidden layers: relu's second
    /// derivative is zero almost everywhere, so the activation masks enter as constants.
    pub fn input_gradient(&self, tape: &mut Tape, trace: &ForwardTrace) -> Result<Var> {
        if self.head != Head::Linear || self.out_dim != 1 {
            return Err(TensorError::Domain {
                op: "input_gradient",
                what: "defined only for scalar linear-head critics".into(),
            });
        }
        let n_layers = self.n_layers();
        let rows = trace.input.rows;
        // d(out)/d(pre of last layer) = 1
        let mut d = tape.constant(vec![1.0; rows], rows, 1)?;
        for l in (0..n_layers).rev() {
            if l + 1 < n_layers {
                // crossing relu of layer l: multiply by the (constant) active-mask
                let mask: Vec<f64> = tape
                    .value(trace.pres[l])
                    .iter()
                    .map(|&v| if v > 0.0 { 1.0 } else { 0.0 })
                    .collect();
                let (r, c) = (trace.pres[l].rows, trace.pres[l].cols);
                let mask = tape.constant(mask, r, c)?;
                d = tape.mul(d, mask)?;
            }
            let wt = tape.transpose(trace.weights[l])?;
            d = tape.matmul(d, wt)?;
        }
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck;

    fn rng(seed: u64) -> SeededSampler {
        SeededSampler::new(seed, 0)
    }

    #[test]
    fn zero_weight_softmax_network_outputs_uniform_rows() {
        let mut r = rng(1);
        let mut net = Mlp::new("enc", 3, &[8], 4, Head::Softmax, &mut r);
        for p in &mut net.params {
            p.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let out = net.eval(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0], 2).unwrap();
        for &v in &out {
            assert!((v - 0.25).abs() < 1e-15, "{v}");
        }
    }

    #[test]
    fn deterministic_without_noise() {
        let mut r = rng(7);
        let net = Mlp::new("gen", 2, &[16, 16], 3, Head::Linear, &mut r);
        let a = net.eval(&[0.3, -1.2], 1).unwrap();
        let b = net.eval(&[0.3, -1.2], 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn softmax_head_rows_sum_to_one_for_random_parameters() {
        for seed in 0..20 {
            let mut r = rng(seed);
            let net = Mlp::new("enc", 5, &[32], 6, Head::Softmax, &mut r);
            let input: Vec<f64> = (0..15).map(|_| r.gaussian()).collect();
            let out = net.eval(&input, 3).unwrap();
            for row in out.chunks(6) {
                let s: f64 = row.iter().sum();
                assert!((s - 1.0).abs() < 1e-9, "row sum {s}");
            }
        }
    }

    #[test]
    fn zero_hidden_layer_network_is_affine() {
        let mut r = rng(3);
        let mut net = Mlp::new("aff", 2, &[], 2, Head::Linear, &mut r);
        net.params[0].data = vec![1.0, 0.0, 0.0, -2.0]; // w: [[1,0],[0,-2]]
        net.params[1].data = vec![0.5, 0.25];
        let out = net.eval(&[3.0, 4.0], 1).unwrap();
        assert_eq!(out, vec![3.5, -7.75]);
    }

    #[test]
    fn untracked_forward_receives_no_gradients() {
        let mut r = rng(11);
        let net = Mlp::new("d", 3, &[4], 1, Head::Sigmoid, &mut r);
        let mut tape = Tape::new();
        let input = tape.constant(vec![0.1, 0.2, 0.3], 1, 3).unwrap();
        let out = net.forward(&mut tape, input, 0, false).unwrap();
        // untracked output cannot be a backward root
        assert!(matches!(tape.backward(out), Err(TensorError::DetachedGraph)));
        assert_eq!(tape.param_grads().count(), 0);
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let mut r = rng(21);
        let proto = Mlp::new("net", 4, &[6, 5], 2, Head::Softmax, &mut r);
        let input: Vec<f64> = (0..12).map(|_| r.gaussian()).collect();
        let mut params = proto.params.clone();
        let err = gradcheck::max_rel_err(&mut params, 1e-5, |t, ps| {
            let net = Mlp { params: ps.to_vec(), ..proto.clone() };
            let x = t.constant(input.clone(), 3, 4)?;
            let out = net.forward(t, x, 0, true)?;
            let out = t.clamp(out, 1e-7, 1.0 - 1e-7)?;
            let out = t.log(out)?;
            t.mean_all(out)
        });
        assert!(err < 1e-4, "rel err {err}");
    }

    #[test]
    fn input_gradient_matches_finite_differences_on_input() {
        let mut r = rng(5);
        let net = Mlp::new("critic", 3, &[8, 8], 1, Head::Linear, &mut r);
        let input: Vec<f64> = (0..6).map(|_| r.gaussian()).collect();

        let mut tape = Tape::new();
        let x = tape.constant(input.clone(), 2, 3).unwrap();
        let trace = net.forward_trace(&mut tape, x, 0, false).unwrap();
        let g = net.input_gradient(&mut tape, &trace).unwrap();
        let analytic = tape.value(g).to_vec();

        let h = 1e-6;
        for i in 0..input.len() {
            let mut plus = input.clone();
            plus[i] += h;
            let mut minus = input.clone();
            minus[i] -= h;
            let op: f64 = net.eval(&plus, 2).unwrap()[i / 3];
            let om: f64 = net.eval(&minus, 2).unwrap()[i / 3];
            let numeric = (op - om) / (2.0 * h);
            assert!(
                (analytic[i] - numeric).abs() < 1e-6 * analytic[i].abs().max(1.0),
                "elem {i}: {} vs {numeric}",
                analytic[i]
            );
        }
    }

    #[test]
    fn input_gradient_value_differentiates_to_parameters() {
        // loss = mean of input-gradient entries; finite differences over parameters must
        // agree, which exercises the transpose/mask construction end to end
        let mut r = rng(17);
        let proto = Mlp::new("critic", 2, &[5], 1, Head::Linear, &mut r);
        let input: Vec<f64> = (0..8).map(|_| r.gaussian()).collect();
        let mut params = proto.params.clone();
        let err = gradcheck::max_rel_err(&mut params, 1e-5, |t, ps| {
            let net = Mlp { params: ps.to_vec(), ..proto.clone() };
            let x = t.constant(input.clone(), 4, 2)?;
            let trace = net.forward_trace(t, x, 0, true)?;
            let g = net.input_gradient(t, &trace)?;
            let g2 = t.mul(g, g)?;
            t.mean_all(g2)
        });
        assert!(err < 1e-4, "rel err {err}");
    }

    #[test]
    fn input_gradient_requires_scalar_linear_head() {
        let mut r = rng(9);
        let net = Mlp::new("d", 2, &[4], 1, Head::Sigmoid, &mut r);
        let mut tape = Tape::new();
        let x = tape.constant(vec![0.0, 0.0], 1, 2).unwrap();
        let trace = net.forward_trace(&mut tape, x, 0, false).unwrap();
        assert!(net.input_gradient(&mut tape, &trace).is_err());
    }
}
