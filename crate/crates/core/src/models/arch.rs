//! Parameter layouts and forward passes for each family.

use rand::Rng;

use super::{Batch, Family, ModelConfig};
use crate::data::INPUT_STEPS;
use crate::error::{Error, Result};
use crate::tensor::{
    convlstm_cell, glorot_uniform, lstm_cell, recurrent_uniform, BoundParams, ConvLstmVars, Graph,
    LstmVars, Padding, ParamSet, Tensor, Var,
};

/// Temporal extent of the Conv3D kernels.
const KT: usize = 3;
const CONV_LAYERS: usize = 3;

fn conv_weight<R: Rng + ?Sized>(
    p: &mut ParamSet,
    name: &str,
    shape: &[usize],
    rng: &mut R,
) -> Result<()> {
    let taps: usize = shape[2..].iter().product();
    let w = glorot_uniform(shape, shape[1] * taps, shape[0] * taps, rng);
    p.insert(format!("{name}.w"), w)?;
    p.insert(format!("{name}.b"), Tensor::zeros(&[shape[0]]))
}

fn dense<R: Rng + ?Sized>(
    p: &mut ParamSet,
    name: &str,
    out: usize,
    inp: usize,
    rng: &mut R,
) -> Result<()> {
    p.insert(format!("{name}.w"), glorot_uniform(&[out, inp], inp, out, rng))?;
    p.insert(format!("{name}.b"), Tensor::zeros(&[out]))
}

fn gate_bias(hidden: usize) -> Tensor {
    // forget gate starts open
    Tensor::from_fn(&[4 * hidden], |i| if (hidden..2 * hidden).contains(&i) { 1.0 } else { 0.0 })
}

fn lstm<R: Rng + ?Sized>(
    p: &mut ParamSet,
    name: &str,
    inp: usize,
    hidden: usize,
    rng: &mut R,
) -> Result<()> {
    p.insert(format!("{name}.w_ih"), recurrent_uniform(&[4 * hidden, inp], hidden, rng))?;
    p.insert(format!("{name}.w_hh"), recurrent_uniform(&[4 * hidden, hidden], hidden, rng))?;
    p.insert(format!("{name}.bias"), gate_bias(hidden))
}

fn convlstm<R: Rng + ?Sized>(
    p: &mut ParamSet,
    name: &str,
    inp: usize,
    filters: usize,
    k: usize,
    rng: &mut R,
) -> Result<()> {
    let kk = k * k;
    let fan_out = 4 * filters * kk;
    p.insert(
        format!("{name}.w_x"),
        glorot_uniform(&[4 * filters, inp, k, k], inp * kk, fan_out, rng),
    )?;
    p.insert(
        format!("{name}.w_h"),
        glorot_uniform(&[4 * filters, filters, k, k], filters * kk, fan_out, rng),
    )?;
    p.insert(format!("{name}.bias"), gate_bias(filters))
}

/// Spatial side after three 2x2 pools (odd sides round up).
fn pooled3(side: usize) -> usize {
    (0..CONV_LAYERS).fold(side, |s, _| s.div_ceil(2))
}

pub(super) fn init_params<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<ParamSet> {
    let mut p = ParamSet::new();
    let (k, f, d, l) = (cfg.kernel_size, cfg.filters, cfg.dense_nodes, cfg.horizon_steps);
    match cfg.family {
        Family::PvCnn => {
            conv_weight(&mut p, "cnn1", &[f, 1, k], rng)?;
            conv_weight(&mut p, "cnn2", &[f, f, k], rng)?;
            conv_weight(&mut p, "cnn3", &[f, f, k], rng)?;
            dense(&mut p, "head", l, f * INPUT_STEPS, rng)?;
        }
        Family::PvLstm => {
            lstm(&mut p, "lstm1", 1, d, rng)?;
            lstm(&mut p, "lstm2", d, d, rng)?;
            lstm(&mut p, "lstm3", d, d, rng)?;
            dense(&mut p, "head", l, d, rng)?;
        }
        Family::Conv3d => {
            conv_weight(&mut p, "c3d1", &[f, 1, KT, k, k], rng)?;
            conv_weight(&mut p, "c3d2", &[f, f, KT, k, k], rng)?;
            conv_weight(&mut p, "c3d3", &[f, f, KT, k, k], rng)?;
            conv_weight(&mut p, "pvconv", &[f, 1, k], rng)?;
            let s = pooled3(cfg.frame_side());
            let flat = f * INPUT_STEPS * s * s + f * INPUT_STEPS;
            dense(&mut p, "fc1", d, flat, rng)?;
            dense(&mut p, "head", l, d, rng)?;
        }
        Family::Convlstm => {
            convlstm(&mut p, "clstm1", 1, f, k, rng)?;
            convlstm(&mut p, "clstm2", f, f, k, rng)?;
            convlstm(&mut p, "clstm3", f, f, k, rng)?;
            lstm(&mut p, "pvlstm", 1, d, rng)?;
            dense(&mut p, "head", l, f + d, rng)?;
        }
        Family::SinglePeriod => {
            conv_weight(&mut p, "c2d1", &[f, 1, k, k], rng)?;
            conv_weight(&mut p, "c2d2", &[f, f, k, k], rng)?;
            conv_weight(&mut p, "c2d3", &[f, f, k, k], rng)?;
            let s = pooled3(cfg.frame_side());
            dense(&mut p, "head", 1, f * s * s, rng)?;
        }
    }
    Ok(p)
}

/// Fail with the layer name if any activation is not finite.
fn finite(g: &Graph, v: Var, layer: &str) -> Result<Var> {
    if g.value(v).iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(Error::Numeric {
            layer: layer.to_string(),
            msg: "non-finite activation".into(),
        })
    }
}

fn lstm_vars(b: &BoundParams, name: &str) -> LstmVars {
    LstmVars {
        w_ih: b.get(&format!("{name}.w_ih")),
        w_hh: b.get(&format!("{name}.w_hh")),
        bias: b.get(&format!("{name}.bias")),
    }
}

fn affine(g: &mut Graph, b: &BoundParams, name: &str, x: Var) -> Result<Var> {
    let y = g.linear(x, b.get(&format!("{name}.w")), Some(b.get(&format!("{name}.b"))))?;
    finite(g, y, name)
}

fn conv(g: &mut Graph, b: &BoundParams, name: &str, x: Var, dims: usize) -> Result<Var> {
    let (w, bias) = (b.get(&format!("{name}.w")), Some(b.get(&format!("{name}.b"))));
    let y = match dims {
        1 => g.conv1d(x, w, bias, Padding::Same)?,
        2 => g.conv2d(x, w, bias, Padding::Same)?,
        _ => g.conv3d(x, w, bias, Padding::Same)?,
    };
    finite(g, y, name)
}

fn zeros(g: &mut Graph, shape: &[usize]) -> Var {
    g.constant(Tensor::zeros(shape))
}

/// Run an LSTM over a sequence of `[B, N]` inputs; returns every hidden state.
fn unroll_lstm(g: &mut Graph, p: &LstmVars, xs: &[Var], hidden: usize, name: &str) -> Result<Vec<Var>> {
    let batch = g.shape(xs[0])[0];
    let mut h = zeros(g, &[batch, hidden]);
    let mut c = zeros(g, &[batch, hidden]);
    let mut out = Vec::with_capacity(xs.len());
    for &x in xs {
        (h, c) = lstm_cell(g, x, h, c, p)?;
        out.push(finite(g, h, name)?);
    }
    Ok(out)
}

/// Crop a same-padded `[O, I, k, k]` kernel to the `2 * side - 1` central
/// taps when it is wider than that; the outer taps never reach a real pixel
/// of a `side x side` map. Done once per pass so unrolled steps share it.
fn trim_kernel(g: &mut Graph, w: Var, side: usize) -> Result<Var> {
    let k = g.shape(w)[2];
    let reach = 2 * side - 1;
    if k <= reach {
        return Ok(w);
    }
    let off = (k - reach) / 2;
    let w = g.narrow(w, 2, off, reach)?;
    g.narrow(w, 3, off, reach)
}

fn pv_steps(g: &mut Graph, pv: Var) -> Result<Vec<Var>> {
    (0..INPUT_STEPS).map(|t| g.narrow(pv, 1, t, 1)).collect()
}

fn input(g: &mut Graph, t: &Option<Tensor>, what: &str, family: Family) -> Result<Var> {
    let t = t
        .as_ref()
        .ok_or_else(|| Error::usage(format!("{family} needs {what} in the batch")))?;
    Ok(g.constant(t.clone().with_requires_grad(false)))
}

pub(super) fn forward<R: Rng + ?Sized>(
    cfg: &ModelConfig,
    g: &mut Graph,
    b: &BoundParams,
    batch: &Batch,
    training: bool,
    rng: &mut R,
) -> Result<Var> {
    let n = batch.len();
    let (f, d) = (cfg.filters, cfg.dense_nodes);
    let rate = cfg.dropout;
    let out = match cfg.family {
        Family::PvCnn => {
            let pv = input(g, &batch.pv, "PV", cfg.family)?;
            let mut x = g.reshape(pv, &[n, 1, INPUT_STEPS])?;
            for name in ["cnn1", "cnn2", "cnn3"] {
                x = conv(g, b, name, x, 1)?;
                x = g.relu(x);
            }
            let flat = g.reshape(x, &[n, f * INPUT_STEPS])?;
            let flat = g.dropout(flat, rate, training, rng)?;
            affine(g, b, "head", flat)?
        }
        Family::PvLstm => {
            let pv = input(g, &batch.pv, "PV", cfg.family)?;
            let mut seq = pv_steps(g, pv)?;
            for (i, name) in ["lstm1", "lstm2", "lstm3"].into_iter().enumerate() {
                if i > 0 {
                    seq = seq
                        .into_iter()
                        .map(|h| g.dropout(h, rate, training, rng))
                        .collect::<Result<_>>()?;
                }
                let p = lstm_vars(b, name);
                seq = unroll_lstm(g, &p, &seq, d, name)?;
            }
            affine(g, b, "head", seq[INPUT_STEPS - 1])?
        }
        Family::Conv3d => {
            let frames = input(g, &batch.frames, "frames", cfg.family)?;
            let side = cfg.frame_side();
            let mut x = g.reshape(frames, &[n, 1, INPUT_STEPS, side, side])?;
            for name in ["c3d1", "c3d2", "c3d3"] {
                x = conv(g, b, name, x, 3)?;
                x = g.relu(x);
                x = g.maxpool2(x)?;
            }
            let s = pooled3(side);
            let img = g.reshape(x, &[n, f * INPUT_STEPS * s * s])?;
            let pv = input(g, &batch.pv, "PV", cfg.family)?;
            let pv = g.reshape(pv, &[n, 1, INPUT_STEPS])?;
            let pv = conv(g, b, "pvconv", pv, 1)?;
            let pv = g.relu(pv);
            let pv = g.reshape(pv, &[n, f * INPUT_STEPS])?;
            let joint = g.concat(&[img, pv], 1)?;
            let h = affine(g, b, "fc1", joint)?;
            let h = g.relu(h);
            let h = g.dropout(h, rate, training, rng)?;
            affine(g, b, "head", h)?
        }
        Family::Convlstm => {
            let frames = input(g, &batch.frames, "frames", cfg.family)?;
            let side = cfg.frame_side();
            let mut seq: Vec<Var> = (0..INPUT_STEPS)
                .map(|t| g.narrow(frames, 1, t, 1))
                .collect::<Result<_>>()?;
            for (i, name) in ["clstm1", "clstm2", "clstm3"].into_iter().enumerate() {
                if i > 0 {
                    seq = seq
                        .into_iter()
                        .map(|h| g.dropout(h, rate, training, rng))
                        .collect::<Result<_>>()?;
                }
                let p = ConvLstmVars {
                    w_x: trim_kernel(g, b.get(&format!("{name}.w_x")), side)?,
                    w_h: trim_kernel(g, b.get(&format!("{name}.w_h")), side)?,
                    bias: b.get(&format!("{name}.bias")),
                };
                let mut h = zeros(g, &[n, f, side, side]);
                let mut c = zeros(g, &[n, f, side, side]);
                let mut next = Vec::with_capacity(INPUT_STEPS);
                for &x in &seq {
                    (h, c) = convlstm_cell(g, x, h, c, &p)?;
                    next.push(finite(g, h, name)?);
                }
                seq = next;
            }
            let last = g.reshape(seq[INPUT_STEPS - 1], &[n, f, side * side])?;
            let img = g.mean_axis(last, 2)?;
            let pv = input(g, &batch.pv, "PV", cfg.family)?;
            let steps = pv_steps(g, pv)?;
            let p = lstm_vars(b, "pvlstm");
            let hs = unroll_lstm(g, &p, &steps, d, "pvlstm")?;
            let joint = g.concat(&[img, hs[INPUT_STEPS - 1]], 1)?;
            let joint = g.dropout(joint, rate, training, rng)?;
            affine(g, b, "head", joint)?
        }
        Family::SinglePeriod => {
            let layers = single_period_features(cfg, g, b, batch)?;
            let x = g.maxpool2(layers[CONV_LAYERS - 1])?;
            let s = pooled3(cfg.frame_side());
            let flat = g.reshape(x, &[n, f * s * s])?;
            let flat = g.dropout(flat, rate, training, rng)?;
            affine(g, b, "head", flat)?
        }
    };
    Ok(out)
}

/// Post-relu, pre-pool outputs of the three conv blocks of `single_period`.
pub(super) fn single_period_features(
    cfg: &ModelConfig,
    g: &mut Graph,
    b: &BoundParams,
    batch: &Batch,
) -> Result<Vec<Var>> {
    let mut x = input(g, &batch.frames, "frames", cfg.family)?;
    let mut layers = Vec::with_capacity(CONV_LAYERS);
    for (i, name) in ["c2d1", "c2d2", "c2d3"].into_iter().enumerate() {
        if i > 0 {
            x = g.maxpool2(x)?;
        }
        x = conv(g, b, name, x, 2)?;
        x = g.relu(x);
        layers.push(x);
    }
    Ok(layers)
}
