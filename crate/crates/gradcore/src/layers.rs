//! Layer primitives composed from graph operations.

use crate::error::GradError;
use crate::graph::{Graph, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
    Softplus,
}

pub fn activate(g: &mut Graph, x: Var, act: Activation) -> Result<Var, GradError> {
    match act {
        Activation::Identity => Ok(x),
        Activation::Tanh => g.tanh(x),
        Activation::Sigmoid => g.sigmoid(x),
        Activation::Softplus => g.softplus(x),
    }
}

/// One affine layer already bound into a graph.
#[derive(Debug, Clone, Copy)]
pub struct DenseVars {
    pub w: Var,
    pub b: Var,
}

/// An MLP bound into a graph: hidden layers use `hidden`, the last uses `output`.
#[derive(Debug, Clone)]
pub struct MlpVars {
    pub layers: Vec<DenseVars>,
    pub hidden: Activation,
    pub output: Activation,
}

impl MlpVars {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var, GradError> {
        let mut h = x;
        let last = self.layers.len().saturating_sub(1);
        for (i, layer) in self.layers.iter().enumerate() {
            h = g.linear(h, layer.w, Some(layer.b))?;
            h = activate(g, h, if i == last { self.output } else { self.hidden })?;
        }
        Ok(h)
    }
}

/// Gate order in the fused weight matrices: input, forget, output, cell.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    /// `[input_width, 4 * hidden]`
    pub wx: Var,
    /// `[hidden, 4 * hidden]`
    pub wh: Var,
    /// `[4 * hidden]`
    pub b: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

/// One LSTM update for a batch of rows. Returns the new state; the output is `state.h`.
pub fn lstm_step(
    g: &mut Graph,
    params: &LstmVars,
    state: LstmState,
    input: Var,
) -> Result<LstmState, GradError> {
    let hidden = g.shape(params.wh).first().copied().unwrap_or(0);
    let four_h = g.shape(params.wh).get(1).copied().unwrap_or(0);
    if four_h != 4 * hidden {
        return Err(GradError::ShapeMismatch {
            op: "lstm_step",
            detail: format!("wh {:?} is not [H, 4H]", g.shape(params.wh)),
        });
    }
    let h_width = g.value(state.h).rows_cols().1;
    if h_width != hidden || g.value(state.c).rows_cols().1 != hidden {
        return Err(GradError::ShapeMismatch {
            op: "lstm_step",
            detail: format!("state width {h_width} vs hidden {hidden}"),
        });
    }
    let xw = g.linear(input, params.wx, Some(params.b))?;
    let hw = g.matmul(state.h, params.wh)?;
    let pre = g.add(xw, hw)?;
    let sig_pre = g.slice_cols(pre, 0, 3 * hidden)?;
    let gates = g.sigmoid(sig_pre)?;
    let cell_pre = g.slice_cols(pre, 3 * hidden, 4 * hidden)?;
    let cand = g.tanh(cell_pre)?;
    let i = g.slice_cols(gates, 0, hidden)?;
    let f = g.slice_cols(gates, hidden, 2 * hidden)?;
    let o = g.slice_cols(gates, 2 * hidden, 3 * hidden)?;
    let keep = g.mul(f, state.c)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let c_act = g.tanh(c)?;
    let h = g.mul(o, c_act)?;
    Ok(LstmState { h, c })
}
