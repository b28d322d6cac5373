//! Brute-force f64 reference kernels, written independently of the engine.

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Cross-correlation over 1 to 3 spatial axes. `x: [B, C, s..]`,
/// `w: [F, C, k..]`. Same padding is `(k - 1) / 2` per axis (odd k).
pub fn conv(
    x: &[f64],
    xs: &[usize],
    w: &[f64],
    ws: &[usize],
    bias: Option<&[f64]>,
    same: bool,
) -> (Vec<f64>, Vec<usize>) {
    let d = xs.len() - 2;
    let (b, c, f) = (xs[0], xs[1], ws[0]);
    assert_eq!(ws[1], c);
    // lift to three spatial axes
    let mut ins = [1usize; 3];
    let mut ks = [1usize; 3];
    for a in 0..d {
        ins[3 - d + a] = xs[2 + a];
        ks[3 - d + a] = ws[2 + a];
    }
    let pad: Vec<isize> = (0..3)
        .map(|a| if same { ((ks[a] - 1) / 2) as isize } else { 0 })
        .collect();
    let outs: Vec<usize> = (0..3)
        .map(|a| if same { ins[a] } else { ins[a] - ks[a] + 1 })
        .collect();
    let mut out = vec![0.0; b * f * outs[0] * outs[1] * outs[2]];
    for bi in 0..b {
        for fi in 0..f {
            for z in 0..outs[0] {
                for y in 0..outs[1] {
                    for xo in 0..outs[2] {
                        let mut acc = bias.map_or(0.0, |bb| bb[fi]);
                        for ci in 0..c {
                            for kz in 0..ks[0] {
                                let zz = z as isize + kz as isize - pad[0];
                                if zz < 0 || zz >= ins[0] as isize {
                                    continue;
                                }
                                for ky in 0..ks[1] {
                                    let yy = y as isize + ky as isize - pad[1];
                                    if yy < 0 || yy >= ins[1] as isize {
                                        continue;
                                    }
                                    for kx in 0..ks[2] {
                                        let xx = xo as isize + kx as isize - pad[2];
                                        if xx < 0 || xx >= ins[2] as isize {
                                            continue;
                                        }
                                        let xi = (((bi * c + ci) * ins[0] + zz as usize) * ins[1]
                                            + yy as usize)
                                            * ins[2]
                                            + xx as usize;
                                        let wi = (((fi * c + ci) * ks[0] + kz) * ks[1] + ky) * ks[2] + kx;
                                        acc += x[xi] * w[wi];
                                    }
                                }
                            }
                        }
                        out[(((bi * f + fi) * outs[0] + z) * outs[1] + y) * outs[2] + xo] = acc;
                    }
                }
            }
        }
    }
    let mut shape = vec![b, f];
    shape.extend_from_slice(&outs[3 - d..]);
    (out, shape)
}

/// 2x2 stride-2 max over the last two axes; edge windows are truncated.
pub fn maxpool(x: &[f64], xs: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let r = xs.len();
    let (h, w) = (xs[r - 2], xs[r - 1]);
    let outer = numel(&xs[..r - 2]);
    let (oh, ow) = ((h + 1) / 2, (w + 1) / 2);
    let mut out = Vec::new();
    for o in 0..outer {
        for y in 0..oh {
            for xo in 0..ow {
                let mut m = f64::NEG_INFINITY;
                for yy in 2 * y..(2 * y + 2).min(h) {
                    for xx in 2 * xo..(2 * xo + 2).min(w) {
                        m = m.max(x[o * h * w + yy * w + xx]);
                    }
                }
                out.push(m);
            }
        }
    }
    let mut shape = xs[..r - 2].to_vec();
    shape.extend_from_slice(&[oh, ow]);
    (out, shape)
}

/// `x: [B, N]`, `w: [M, N]`, `b: [M]`.
pub fn dense(x: &[f64], batch: usize, w: &[f64], m: usize, b: Option<&[f64]>) -> Vec<f64> {
    let n = x.len() / batch;
    let mut out = vec![0.0; batch * m];
    for r in 0..batch {
        for j in 0..m {
            let mut acc = b.map_or(0.0, |b| b[j]);
            for k in 0..n {
                acc += x[r * n + k] * w[j * n + k];
            }
            out[r * m + j] = acc;
        }
    }
    out
}

/// Gate layout `[input, forget, cell, output]`; `gates` is
/// `[B, 4, M, inner]` flattened, `c` is `[B, M, inner]`.
fn gate_update(gates: &[f64], c: &[f64], batch: usize, hidden: usize, inner: usize) -> (Vec<f64>, Vec<f64>) {
    let mut h_next = vec![0.0; c.len()];
    let mut c_next = vec![0.0; c.len()];
    let block = hidden * inner;
    for b in 0..batch {
        for j in 0..block {
            let g = |q: usize| gates[b * 4 * block + q * block + j];
            let (i, f, cand, o) = (sigmoid(g(0)), sigmoid(g(1)), g(2).tanh(), sigmoid(g(3)));
            let idx = b * block + j;
            c_next[idx] = f * c[idx] + i * cand;
            h_next[idx] = o * c_next[idx].tanh();
        }
    }
    (h_next, c_next)
}

/// One LSTM step; `x: [B, N]`, `h, c: [B, M]`.
#[allow(clippy::too_many_arguments)]
pub fn lstm(
    x: &[f64],
    h: &[f64],
    c: &[f64],
    batch: usize,
    hidden: usize,
    w_ih: &[f64],
    w_hh: &[f64],
    bias: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let a = dense(x, batch, w_ih, 4 * hidden, Some(bias));
    let r = dense(h, batch, w_hh, 4 * hidden, None);
    let gates: Vec<f64> = a.iter().zip(&r).map(|(p, q)| p + q).collect();
    gate_update(&gates, c, batch, hidden, 1)
}

/// One ConvLSTM step; `x: [B, C, H, W]`, `h, c: [B, F, H, W]`.
#[allow(clippy::too_many_arguments)]
pub fn convlstm(
    x: &[f64],
    xs: &[usize],
    h: &[f64],
    c: &[f64],
    filters: usize,
    k: usize,
    w_x: &[f64],
    w_h: &[f64],
    bias: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let (b, ch, hh, ww) = (xs[0], xs[1], xs[2], xs[3]);
    let (a, _) = conv(x, xs, w_x, &[4 * filters, ch, k, k], Some(bias), true);
    let (r, _) = conv(h, &[b, filters, hh, ww], w_h, &[4 * filters, filters, k, k], None, true);
    let gates: Vec<f64> = a.iter().zip(&r).map(|(p, q)| p + q).collect();
    gate_update(&gates, c, b, filters, hh * ww)
}

pub fn mse(p: &[f64], t: &[f64]) -> f64 {
    p.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / p.len() as f64
}
