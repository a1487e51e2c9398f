//! Neural building blocks: LSTM layers (unidirectional or bidirectional),
//! parameter-free scaled dot-product self-attention, and dense layers.
//!
//! Layers own their parameters as plain tensors. To run a forward pass they
//! are first bound to a [`Tape`], which yields `Bound*` views holding `Var`
//! handles; gradients are read back from those handles after `backward()`.
//!
//! Weights are initialized uniform in `(-1/sqrt(fan), 1/sqrt(fan))`; the
//! forget-gate bias starts at 1.0. No dropout or normalization layers.

use rand::Rng;

use crate::autodiff::{Tape, Tensor, Var};

/// Gate weight block for one LSTM direction, with the four gates fused
/// column-wise in the order: input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmDirection {
    /// (input_size, 4*hidden)
    pub wx: Tensor,
    /// (hidden, 4*hidden)
    pub wh: Tensor,
    /// (4*hidden)
    pub b: Tensor,
}

impl LstmDirection {
    fn new(input_size: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let limit = 1.0 / (hidden as f64).sqrt();
        let mut b = Tensor::zeros(&[4 * hidden]);
        // forget-gate bias starts open
        for v in &mut b.data[hidden..2 * hidden] {
            *v = 1.0;
        }
        Self {
            wx: Tensor::uniform(&[input_size, 4 * hidden], limit, rng),
            wh: Tensor::uniform(&[hidden, 4 * hidden], limit, rng),
            b,
        }
    }
}

/// One LSTM layer; bidirectional layers hold a second, independent set of
/// gate weights for the reversed pass and emit `2 * hidden` wide outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    pub input_size: usize,
    pub hidden: usize,
    pub fwd: LstmDirection,
    pub bwd: Option<LstmDirection>,
}

impl LstmLayer {
    pub fn new(input_size: usize, hidden: usize, bidirectional: bool, rng: &mut impl Rng) -> Self {
        Self {
            input_size,
            hidden,
            fwd: LstmDirection::new(input_size, hidden, rng),
            bwd: bidirectional.then(|| LstmDirection::new(input_size, hidden, rng)),
        }
    }

    pub fn bidirectional(&self) -> bool {
        self.bwd.is_some()
    }

    /// Width of each per-timestep output vector.
    pub fn output_size(&self) -> usize {
        if self.bidirectional() {
            2 * self.hidden
        } else {
            self.hidden
        }
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut p = vec![&self.fwd.wx, &self.fwd.wh, &self.fwd.b];
        if let Some(bwd) = &self.bwd {
            p.extend([&bwd.wx, &bwd.wh, &bwd.b]);
        }
        p
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = vec![&mut self.fwd.wx, &mut self.fwd.wh, &mut self.fwd.b];
        if let Some(bwd) = &mut self.bwd {
            p.extend([&mut bwd.wx, &mut bwd.wh, &mut bwd.b]);
        }
        p
    }

    pub fn bind(&self, tape: &Tape, trainable: bool) -> BoundLstm {
        BoundLstm {
            hidden: self.hidden,
            fwd: BoundDirection {
                wx: tape.leaf(self.fwd.wx.clone(), trainable),
                wh: tape.leaf(self.fwd.wh.clone(), trainable),
                b: tape.leaf(self.fwd.b.clone(), trainable),
            },
            bwd: self.bwd.as_ref().map(|d| BoundDirection {
                wx: tape.leaf(d.wx.clone(), trainable),
                wh: tape.leaf(d.wh.clone(), trainable),
                b: tape.leaf(d.b.clone(), trainable),
            }),
        }
    }
}

#[derive(Clone)]
pub struct BoundDirection {
    pub wx: Var,
    pub wh: Var,
    pub b: Var,
}

/// Tape-bound view of an [`LstmLayer`].
#[derive(Clone)]
pub struct BoundLstm {
    pub hidden: usize,
    pub fwd: BoundDirection,
    pub bwd: Option<BoundDirection>,
}

impl BoundLstm {
    /// Parameter vars in the same order as [`LstmLayer::parameters`].
    pub fn param_vars(&self) -> Vec<Var> {
        let mut p = vec![self.fwd.wx.clone(), self.fwd.wh.clone(), self.fwd.b.clone()];
        if let Some(bwd) = &self.bwd {
            p.extend([bwd.wx.clone(), bwd.wh.clone(), bwd.b.clone()]);
        }
        p
    }

    /// Run the layer over a sequence of `(batch, input_size)` steps and
    /// return one `(batch, output_size)` hidden state per timestep.
    ///
    /// `init` optionally overrides the all-zero initial hidden and cell
    /// state; a bidirectional layer applies it to both directions.
    pub fn forward(&self, tape: &Tape, xs: &[Var], init: Option<(&Var, &Var)>) -> Vec<Var> {
        assert!(!xs.is_empty(), "empty input sequence");
        let forward = direction_pass(tape, &self.fwd, xs, false, self.hidden, init);
        match &self.bwd {
            None => forward,
            Some(bwd) => {
                let backward = direction_pass(tape, bwd, xs, true, self.hidden, init);
                forward
                    .iter()
                    .zip(&backward)
                    .map(|(f, b)| Var::concat(&[f, b], 1))
                    .collect()
            }
        }
    }
}

fn direction_pass(
    tape: &Tape,
    dir: &BoundDirection,
    xs: &[Var],
    reverse: bool,
    hidden: usize,
    init: Option<(&Var, &Var)>,
) -> Vec<Var> {
    let batch = xs[0].shape()[0];
    let (mut h, mut c) = match init {
        Some((h0, c0)) => (h0.clone(), c0.clone()),
        None => (
            tape.constant(Tensor::zeros(&[batch, hidden])),
            tape.constant(Tensor::zeros(&[batch, hidden])),
        ),
    };
    let mut outputs = Vec::with_capacity(xs.len());
    let order: Vec<usize> = if reverse {
        (0..xs.len()).rev().collect()
    } else {
        (0..xs.len()).collect()
    };
    for &t in &order {
        let gates = xs[t]
            .matmul(&dir.wx)
            .add(&h.matmul(&dir.wh))
            .add_bias(&dir.b);
        let i = gates.slice(1, 0, hidden).sigmoid();
        let f = gates.slice(1, hidden, hidden).sigmoid();
        let g = gates.slice(1, 2 * hidden, hidden).tanh();
        let o = gates.slice(1, 3 * hidden, hidden).sigmoid();
        c = f.mul(&c).add(&i.mul(&g));
        h = o.mul(&c.tanh());
        outputs.push(h.clone());
    }
    if reverse {
        outputs.reverse();
    }
    outputs
}

/// Scaled dot-product self-attention over a `(batch, seq, width)` sequence:
/// `out_i = sum_j softmax_j(h_i . h_j / sqrt(width)) h_j`.
///
/// Parameter-free and position-agnostic: permuting the sequence permutes the
/// outputs identically.
pub fn self_attention(hseq: &Var) -> Var {
    self_attention_with_weights(hseq).0
}

/// As [`self_attention`], also returning the `(batch, seq, seq)` attention
/// weights (each row sums to 1).
pub fn self_attention_with_weights(hseq: &Var) -> (Var, Var) {
    let shape = hseq.shape();
    assert_eq!(shape.len(), 3, "attention expects (batch, seq, width)");
    let width = shape[2];
    let scores = hseq
        .bmm(&hseq.transpose_last())
        .scale(1.0 / (width as f64).sqrt());
    let weights = scores.softmax(2);
    (weights.bmm(hseq), weights)
}

/// Output activation of a dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    None,
    Sigmoid,
}

/// Fully connected layer applied independently to every row (and, for
/// rank-3 inputs, every timestep).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(input: usize, output: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let limit = 1.0 / (input as f64).sqrt();
        Self {
            weight: Tensor::uniform(&[input, output], limit, rng),
            bias: Tensor::zeros(&[output]),
            activation,
        }
    }

    pub fn input_size(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn output_size(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn bind(&self, tape: &Tape, trainable: bool) -> BoundDense {
        BoundDense {
            weight: tape.leaf(self.weight.clone(), trainable),
            bias: tape.leaf(self.bias.clone(), trainable),
            activation: self.activation,
        }
    }
}

#[derive(Clone)]
pub struct BoundDense {
    pub weight: Var,
    pub bias: Var,
    pub activation: Activation,
}

impl BoundDense {
    pub fn param_vars(&self) -> Vec<Var> {
        vec![self.weight.clone(), self.bias.clone()]
    }

    /// Apply to a `(rows, input)` matrix or a `(batch, seq, input)` tensor.
    pub fn forward(&self, x: &Var) -> Var {
        let out = self.forward_logits(x);
        match self.activation {
            Activation::None => out,
            Activation::Sigmoid => out.sigmoid(),
        }
    }

    /// Pre-activation output (logits), regardless of the configured
    /// activation. Used by losses that need numerically stable log terms.
    pub fn forward_logits(&self, x: &Var) -> Var {
        let shape = x.shape();
        match shape.len() {
            2 => x.matmul(&self.weight).add_bias(&self.bias),
            3 => {
                let flat = x.reshape(&[shape[0] * shape[1], shape[2]]);
                let y = flat.matmul(&self.weight).add_bias(&self.bias);
                let out_width = self.weight.shape()[1];
                y.reshape(&[shape[0], shape[1], out_width])
            }
            r => panic!("dense layer on rank-{r} input"),
        }
    }
}

/// Turn a `(batch, seq)` matrix of values into per-timestep `(batch, 1)`
/// constant inputs.
pub fn sequence_inputs(tape: &Tape, batch: &Tensor) -> Vec<Var> {
    assert_eq!(batch.rank(), 2);
    let x = tape.constant(batch.clone());
    (0..batch.shape[1]).map(|t| x.slice(1, t, 1)).collect()
}

/// Stack per-timestep `(batch, width)` states into `(batch, seq, width)`.
pub fn stack_timesteps(states: &[Var]) -> Var {
    assert!(!states.is_empty());
    let shape = states[0].shape();
    let reshaped: Vec<Var> = states
        .iter()
        .map(|s| s.reshape(&[shape[0], 1, shape[1]]))
        .collect();
    let refs: Vec<&Var> = reshaped.iter().collect();
    Var::concat(&refs, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check::check_gradients;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn run_lstm(layer: &LstmLayer, seq: &Tensor) -> Vec<Tensor> {
        let tape = Tape::new();
        let bound = layer.bind(&tape, false);
        let xs = sequence_inputs(&tape, seq);
        bound
            .forward(&tape, &xs, None)
            .iter()
            .map(Var::value)
            .collect()
    }

    #[test]
    fn zero_weights_give_zero_hidden_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut layer = LstmLayer::new(1, 3, false, &mut rng);
        layer.fwd.wx = Tensor::zeros(&[1, 12]);
        layer.fwd.wh = Tensor::zeros(&[3, 12]);
        layer.fwd.b = Tensor::zeros(&[12]);
        let out = run_lstm(&layer, &Tensor::new(vec![2, 4], vec![1.0; 8]));
        for state in out {
            assert!(state.data.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn length_one_sequence_equals_single_cell_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = LstmLayer::new(1, 4, false, &mut rng);
        let long = run_lstm(&layer, &Tensor::new(vec![1, 3], vec![0.5, -0.2, 0.9]));
        let short = run_lstm(&layer, &Tensor::new(vec![1, 1], vec![0.5]));
        assert_eq!(long[0], short[0]);
    }

    #[test]
    fn bidirectional_forward_half_matches_forward_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let bidir = LstmLayer::new(1, 3, true, &mut rng);
        let uni = LstmLayer {
            input_size: 1,
            hidden: 3,
            fwd: bidir.fwd.clone(),
            bwd: None,
        };
        let seq = Tensor::new(vec![2, 5], (0..10).map(|i| 0.1 * i as f64).collect());
        let both = run_lstm(&bidir, &seq);
        let fwd_only = run_lstm(&uni, &seq);
        for (b, f) in both.iter().zip(&fwd_only) {
            assert_eq!(b.shape, vec![2, 6]);
            for row in 0..2 {
                for col in 0..3 {
                    assert_relative_eq!(b.at2(row, col), f.at2(row, col));
                }
            }
        }
    }

    #[test]
    fn lstm_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = LstmLayer::new(2, 3, true, &mut rng);
        let params: Vec<Tensor> = layer.parameters().into_iter().cloned().collect();
        let seq = Tensor::randn(&[2, 4 * 2], &mut rng); // (batch, seq*input) packed
        let report = check_gradients(&params, |tape, vars| {
            let bound = BoundLstm {
                hidden: 3,
                fwd: BoundDirection {
                    wx: vars[0].clone(),
                    wh: vars[1].clone(),
                    b: vars[2].clone(),
                },
                bwd: Some(BoundDirection {
                    wx: vars[3].clone(),
                    wh: vars[4].clone(),
                    b: vars[5].clone(),
                }),
            };
            let x = tape.constant(seq.clone());
            let xs: Vec<Var> = (0..4).map(|t| x.slice(1, 2 * t, 2)).collect();
            let out = bound.forward(tape, &xs, None);
            let stacked = stack_timesteps(&out);
            stacked.square().sum()
        });
        assert!(report.passes(), "worst ratio {}", report.worst_ratio);
    }

    #[test]
    fn attention_on_identical_vectors_returns_them() {
        let tape = Tape::new();
        let v = [0.3, -1.2];
        let mut data = Vec::new();
        for _ in 0..4 {
            data.extend_from_slice(&v);
        }
        let hseq = tape.constant(Tensor::new(vec![1, 4, 2], data));
        let out = self_attention(&hseq).value();
        for t in 0..4 {
            assert_relative_eq!(out.data[t * 2], v[0], epsilon = 1e-12);
            assert_relative_eq!(out.data[t * 2 + 1], v[1], epsilon = 1e-12);
        }
    }

    #[test]
    fn attention_worked_example_two_steps_one_dim() {
        // h = [1, 0], width 1: scores for i=1 are [1, 0] -> softmax e/(e+1);
        // scores for i=2 are [0, 0] -> uniform, so out_2 = 0.5
        let tape = Tape::new();
        let hseq = tape.constant(Tensor::new(vec![1, 2, 1], vec![1.0, 0.0]));
        let out = self_attention(&hseq).value();
        let e = std::f64::consts::E;
        assert_relative_eq!(out.data[0], e / (e + 1.0), epsilon = 1e-12);
        assert_relative_eq!(out.data[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn attention_is_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let base = Tensor::randn(&[1, 5, 3], &mut rng);
        let perm = [3usize, 0, 4, 1, 2];
        let mut permuted = Tensor::zeros(&[1, 5, 3]);
        for (dst, &src) in perm.iter().enumerate() {
            permuted.data[dst * 3..(dst + 1) * 3]
                .copy_from_slice(&base.data[src * 3..(src + 1) * 3]);
        }
        let tape = Tape::new();
        let out = self_attention(&tape.constant(base)).value();
        let out_p = self_attention(&tape.constant(permuted)).value();
        for (dst, &src) in perm.iter().enumerate() {
            for k in 0..3 {
                assert_relative_eq!(
                    out_p.data[dst * 3 + k],
                    out.data[src * 3 + k],
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn attention_weights_are_a_distribution_per_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let hseq = Tensor::randn(&[2, 6, 4], &mut rng);
        let tape = Tape::new();
        let (_, weights) = self_attention_with_weights(&tape.constant(hseq));
        let w = weights.value();
        for lane in w.data.chunks(6) {
            let sum: f64 = lane.iter().sum();
            assert_relative_eq!(sum, 1.0, epsilon = 1e-12);
            assert!(lane.iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn attention_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let hseq = Tensor::randn(&[2, 3, 2], &mut rng);
        let report = check_gradients(&[hseq], |_, vars| {
            self_attention(&vars[0]).square().sum()
        });
        assert!(report.passes(), "worst ratio {}", report.worst_ratio);
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let layer = DenseLayer::new(3, 2, Activation::Sigmoid, &mut rng);
        let x = Tensor::randn(&[4, 3], &mut rng);
        let params: Vec<Tensor> = layer.parameters().into_iter().cloned().collect();
        let report = check_gradients(&params, |tape, vars| {
            let bound = BoundDense {
                weight: vars[0].clone(),
                bias: vars[1].clone(),
                activation: Activation::Sigmoid,
            };
            bound.forward(&tape.constant(x.clone())).square().sum()
        });
        assert!(report.passes(), "worst ratio {}", report.worst_ratio);
    }

    #[test]
    fn dense_rank3_matches_per_timestep_rank2() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let layer = DenseLayer::new(3, 2, Activation::None, &mut rng);
        let x = Tensor::randn(&[2, 4, 3], &mut rng);
        let tape = Tape::new();
        let bound = layer.bind(&tape, false);
        let all = bound.forward(&tape.constant(x.clone())).value();
        for t in 0..4 {
            let mut step = Tensor::zeros(&[2, 3]);
            for b in 0..2 {
                step.data[b * 3..(b + 1) * 3]
                    .copy_from_slice(&x.data[b * 12 + t * 3..b * 12 + (t + 1) * 3]);
            }
            let one = bound.forward(&tape.constant(step)).value();
            for b in 0..2 {
                for k in 0..2 {
                    assert_relative_eq!(all.data[b * 8 + t * 2 + k], one.at2(b, k));
                }
            }
        }
    }
}
