//! Recurrent cells composed from graph primitives.
//!
//! Gate layout along the gate axis is `[input, forget, cell, output]`, each
//! block `hidden` wide.

use super::conv::Padding;
use super::graph::{Graph, Var};
use crate::error::{Error, Result};

/// LSTM parameters: `w_ih: [4M, N]`, `w_hh: [4M, M]`, `bias: [4M]`.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
}

/// ConvLSTM parameters: `w_x: [4F, C, k, k]`, `w_h: [4F, F, k, k]`, `bias: [4F]`.
#[derive(Debug, Clone, Copy)]
pub struct ConvLstmVars {
    pub w_x: Var,
    pub w_h: Var,
    pub bias: Var,
}

fn gate_update(g: &mut Graph, gates: Var, c: Var, axis: usize, hidden: usize) -> Result<(Var, Var)> {
    let i = g.narrow(gates, axis, 0, hidden)?;
    let f = g.narrow(gates, axis, hidden, hidden)?;
    let cand = g.narrow(gates, axis, 2 * hidden, hidden)?;
    let o = g.narrow(gates, axis, 3 * hidden, hidden)?;
    let i = g.sigmoid(i);
    let f = g.sigmoid(f);
    let cand = g.tanh(cand);
    let o = g.sigmoid(o);
    let keep = g.mul(f, c)?;
    let write = g.mul(i, cand)?;
    let c_next = g.add(keep, write)?;
    let squashed = g.tanh(c_next);
    let h_next = g.mul(o, squashed)?;
    Ok((h_next, c_next))
}

/// One LSTM step for `x: [N]` or `[B, N]`; returns `(h', c')`.
pub fn lstm_cell(g: &mut Graph, x: Var, h: Var, c: Var, p: &LstmVars) -> Result<(Var, Var)> {
    let hs = g.shape(h).to_vec();
    if g.shape(c) != hs.as_slice() {
        return Err(Error::dim(format!(
            "lstm: hidden {hs:?} and cell {:?} state differ",
            g.shape(c)
        )));
    }
    let hidden = *hs.last().ok_or_else(|| Error::dim("lstm: empty state shape"))?;
    if g.shape(p.w_ih)[0] != 4 * hidden {
        return Err(Error::dim(format!(
            "lstm: w_ih {:?} does not produce 4x{hidden} gates",
            g.shape(p.w_ih)
        )));
    }
    let from_x = g.linear(x, p.w_ih, Some(p.bias))?;
    let from_h = g.linear(h, p.w_hh, None)?;
    let gates = g.add(from_x, from_h)?;
    let axis = g.shape(gates).len() - 1;
    gate_update(g, gates, c, axis, hidden)
}

/// One ConvLSTM step with same-padded convolutions.
///
/// `x: [C, H, W]` or `[B, C, H, W]`; state `[F, H, W]` / `[B, F, H, W]`.
pub fn convlstm_cell(
    g: &mut Graph,
    x: Var,
    h: Var,
    c: Var,
    p: &ConvLstmVars,
) -> Result<(Var, Var)> {
    let xs = g.shape(x).to_vec();
    let hs = g.shape(h).to_vec();
    if g.shape(c) != hs.as_slice() {
        return Err(Error::dim(format!(
            "convlstm: hidden {hs:?} and cell {:?} state differ",
            g.shape(c)
        )));
    }
    if xs.len() != hs.len() || xs.len() < 3 || xs[xs.len() - 2..] != hs[hs.len() - 2..] {
        return Err(Error::dim(format!(
            "convlstm: input {xs:?} and state {hs:?} disagree spatially"
        )));
    }
    if xs.len() == 4 && xs[0] != hs[0] {
        return Err(Error::dim("convlstm: batch sizes of input and state differ"));
    }
    let axis = xs.len() - 3;
    let hidden = hs[axis];
    let from_x = g.conv2d(x, p.w_x, Some(p.bias), Padding::Same)?;
    let from_h = g.conv2d(h, p.w_h, None, Padding::Same)?;
    let gates = g.add(from_x, from_h)?;
    if g.shape(gates)[axis] != 4 * hidden {
        return Err(Error::dim(format!(
            "convlstm: kernels produce {} gate channels for {hidden} filters",
            g.shape(gates)[axis]
        )));
    }
    gate_update(g, gates, c, axis, hidden)
}
