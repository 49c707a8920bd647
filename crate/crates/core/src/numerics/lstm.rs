//! Peephole-free LSTM layer with a hand-written backward pass.
//!
//! Gate rows are stacked as `[input, forget, candidate, output]`, each of
//! height `width`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{sigmoid, Tensor2};
use crate::error::{Error, Result};

const INIT_SCALE: f64 = 0.05;
const FORGET_BIAS: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayer {
    /// `4H x I`
    pub w_input: Tensor2,
    /// `4H x H`
    pub w_hidden: Tensor2,
    /// `4H`
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmState {
    pub cell: Vec<f64>,
    pub hidden: Vec<f64>,
}

impl LstmState {
    pub fn zeros(width: usize) -> Self {
        Self {
            cell: vec![0.0; width],
            hidden: vec![0.0; width],
        }
    }
}

/// Values saved by the forward step for the backward pass.
#[derive(Debug, Clone)]
pub struct LstmCache {
    input: Vec<f64>,
    prev: LstmState,
    /// Post-activation gates, same layout as the weight rows.
    gates: Vec<f64>,
    cell: Vec<f64>,
    tanh_cell: Vec<f64>,
}

impl LstmLayer {
    pub fn zeros(input: usize, width: usize) -> Self {
        Self {
            w_input: Tensor2::zeros(4 * width, input),
            w_hidden: Tensor2::zeros(4 * width, width),
            bias: vec![0.0; 4 * width],
        }
    }

    /// Weights uniform in `[-0.05, 0.05]`, forget-gate bias 1, other biases 0.
    pub fn init<R: Rng + ?Sized>(input: usize, width: usize, rng: &mut R) -> Self {
        let w_input = Tensor2::uniform(4 * width, input, INIT_SCALE, rng);
        let w_hidden = Tensor2::uniform(4 * width, width, INIT_SCALE, rng);
        let mut bias = vec![0.0; 4 * width];
        bias[width..2 * width].fill(FORGET_BIAS);
        Self {
            w_input,
            w_hidden,
            bias,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.w_hidden.cols()
    }

    #[inline]
    pub fn input_width(&self) -> usize {
        self.w_input.cols()
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let h = self.width();
        if self.w_hidden.rows() != 4 * h {
            return Err(Error::shape(
                format!("{name}.w_hidden rows"),
                4 * h,
                self.w_hidden.rows(),
            ));
        }
        if self.w_input.rows() != 4 * h {
            return Err(Error::shape(
                format!("{name}.w_input rows"),
                4 * h,
                self.w_input.rows(),
            ));
        }
        if self.bias.len() != 4 * h {
            return Err(Error::shape(format!("{name}.bias"), 4 * h, self.bias.len()));
        }
        Ok(())
    }

    fn check_operands(&self, input: &[f64], state: &LstmState) -> Result<()> {
        if input.len() != self.input_width() {
            return Err(Error::shape("lstm input", self.input_width(), input.len()));
        }
        if state.hidden.len() != self.width() {
            return Err(Error::shape("lstm hidden state", self.width(), state.hidden.len()));
        }
        if state.cell.len() != self.width() {
            return Err(Error::shape("lstm cell state", self.width(), state.cell.len()));
        }
        Ok(())
    }

    /// One checked step; returns the layer output and next state.
    pub fn step(&self, input: &[f64], state: &LstmState) -> Result<(Vec<f64>, LstmState)> {
        self.check_operands(input, state)?;
        let next = self.forward(input, state).0;
        Ok((next.hidden.clone(), next))
    }

    /// Unchecked step that also returns the backward cache.
    pub(crate) fn forward(&self, input: &[f64], state: &LstmState) -> (LstmState, LstmCache) {
        let h = self.width();
        let mut gates = self.bias.clone();
        self.w_input.matvec_acc(input, &mut gates);
        self.w_hidden.matvec_acc(&state.hidden, &mut gates);
        for g in &mut gates[..2 * h] {
            *g = sigmoid(*g);
        }
        for g in &mut gates[2 * h..3 * h] {
            *g = g.tanh();
        }
        for g in &mut gates[3 * h..] {
            *g = sigmoid(*g);
        }
        let mut cell = vec![0.0; h];
        let mut tanh_cell = vec![0.0; h];
        let mut hidden = vec![0.0; h];
        for j in 0..h {
            cell[j] = gates[h + j] * state.cell[j] + gates[j] * gates[2 * h + j];
            tanh_cell[j] = cell[j].tanh();
            hidden[j] = gates[3 * h + j] * tanh_cell[j];
        }
        let next = LstmState {
            cell: cell.clone(),
            hidden,
        };
        let cache = LstmCache {
            input: input.to_vec(),
            prev: state.clone(),
            gates,
            cell,
            tanh_cell,
        };
        (next, cache)
    }

    /// Backpropagates `d_hidden`/`d_cell` (gradients w.r.t. this step's
    /// outputs) into `grads`, adds the input gradient into `d_input`, and
    /// returns the gradients w.r.t. the previous state.
    pub(crate) fn backward(
        &self,
        cache: &LstmCache,
        d_hidden: &[f64],
        d_cell: &[f64],
        grads: &mut LstmLayer,
        d_input: &mut [f64],
    ) -> LstmState {
        let h = self.width();
        let g = &cache.gates;
        let mut d_pre = vec![0.0; 4 * h];
        let mut d_cell_prev = vec![0.0; h];
        for j in 0..h {
            let (ig, fg, cg, og) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
            let tc = cache.tanh_cell[j];
            let dc = d_cell[j] + d_hidden[j] * og * (1.0 - tc * tc);
            d_pre[3 * h + j] = d_hidden[j] * tc * og * (1.0 - og);
            d_pre[j] = dc * cg * ig * (1.0 - ig);
            d_pre[h + j] = dc * cache.prev.cell[j] * fg * (1.0 - fg);
            d_pre[2 * h + j] = dc * ig * (1.0 - cg * cg);
            d_cell_prev[j] = dc * fg;
        }
        debug_assert_eq!(cache.cell.len(), h);
        grads.w_input.outer_acc(&d_pre, &cache.input);
        grads.w_hidden.outer_acc(&d_pre, &cache.prev.hidden);
        for (b, d) in grads.bias.iter_mut().zip(&d_pre) {
            *b += d;
        }
        self.w_input.matvec_t_acc(&d_pre, d_input);
        let mut d_hidden_prev = vec![0.0; h];
        self.w_hidden.matvec_t_acc(&d_pre, &mut d_hidden_prev);
        LstmState {
            cell: d_cell_prev,
            hidden: d_hidden_prev,
        }
    }
}

/// Public entry point for a single LSTM cell step.
pub fn lstm_step(
    layer: &LstmLayer,
    input: &[f64],
    state: &LstmState,
) -> Result<(Vec<f64>, LstmState)> {
    layer.step(input, state)
}
