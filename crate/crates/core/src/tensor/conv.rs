//! Dense kernels behind the convolution and pooling ops.
//!
//! Every convolution is lowered to a 3-D cross-correlation over
//! `[B, C, D, H, W]` (1-D and 2-D inputs use unit depth/height) and computed
//! as `im2col` followed by a single GEMM over the whole batch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero padding so that output spatial dims equal input dims (odd kernels).
    Same,
    /// No padding; each axis shrinks by `k - 1`.
    Valid,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub in_dims: [usize; 3],
    pub kernel: [usize; 3],
    pub pad: [usize; 3],
    pub out_dims: [usize; 3],
    /// Per axis, the half-open range of kernel taps that can touch real
    /// input; taps outside it only ever see padding.
    pub live: [(usize, usize); 3],
}

impl ConvGeom {
    pub fn new(
        batch: usize,
        in_ch: usize,
        out_ch: usize,
        in_dims: [usize; 3],
        kernel: [usize; 3],
        padding: Padding,
    ) -> Result<Self> {
        let mut pad = [0; 3];
        let mut out_dims = [0; 3];
        for a in 0..3 {
            match padding {
                Padding::Same => {
                    if kernel[a] % 2 == 0 {
                        return Err(Error::dim(format!(
                            "same padding needs odd kernel sizes, got {kernel:?}"
                        )));
                    }
                    pad[a] = (kernel[a] - 1) / 2;
                    out_dims[a] = in_dims[a];
                }
                Padding::Valid => {
                    if in_dims[a] < kernel[a] {
                        return Err(Error::dim(format!(
                            "valid padding: input {in_dims:?} smaller than kernel {kernel:?}"
                        )));
                    }
                    out_dims[a] = in_dims[a] - kernel[a] + 1;
                }
            }
        }
        let live = std::array::from_fn(|a| {
            let lo = pad[a].saturating_sub(out_dims[a] - 1);
            let hi = kernel[a].min(pad[a] + in_dims[a]);
            (lo, hi)
        });
        Ok(ConvGeom {
            batch,
            in_ch,
            out_ch,
            in_dims,
            kernel,
            pad,
            out_dims,
            live,
        })
    }

    fn live_taps(&self) -> usize {
        self.live.iter().map(|(lo, hi)| hi - lo).product()
    }

    fn pruned(&self) -> bool {
        self.live_taps() != self.kernel.iter().product::<usize>()
    }

    /// Rows of the patch matrix (live taps only).
    fn patch(&self) -> usize {
        self.in_ch * self.live_taps()
    }

    /// Kernel `[F, C, kd, kh, kw]` restricted to live taps, as `[F, patch]`.
    fn compact_kernel<'a>(&self, kernel: &'a [f32]) -> std::borrow::Cow<'a, [f32]> {
        if !self.pruned() {
            return kernel.into();
        }
        let mut out = Vec::with_capacity(self.out_ch * self.patch());
        for fc in 0..self.out_ch * self.in_ch {
            self.for_each_live(|full, _| out.push(kernel[fc * self.taps() + full]));
        }
        out.into()
    }

    /// Scatter a compact `[F, patch]` gradient back to full kernel layout.
    fn expand_kernel(&self, compact: Vec<f32>) -> Vec<f32> {
        if !self.pruned() {
            return compact;
        }
        let mut full = vec![0.0f32; self.out_ch * self.in_ch * self.taps()];
        let live = self.live_taps();
        for fc in 0..self.out_ch * self.in_ch {
            self.for_each_live(|t, r| full[fc * self.taps() + t] = compact[fc * live + r]);
        }
        full
    }

    fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Visit live taps as (full tap index, compact tap index).
    fn for_each_live(&self, mut f: impl FnMut(usize, usize)) {
        let [_, kh, kw] = self.kernel;
        let mut r = 0;
        for a in self.live[0].0..self.live[0].1 {
            for i in self.live[1].0..self.live[1].1 {
                for j in self.live[2].0..self.live[2].1 {
                    f((a * kh + i) * kw + j, r);
                    r += 1;
                }
            }
        }
    }

    fn out_positions(&self) -> usize {
        self.out_dims.iter().product()
    }

    fn in_positions(&self) -> usize {
        self.in_dims.iter().product()
    }
}

/// `C = alpha * A * B + beta * C` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(k == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    debug_assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    // SAFETY: the asserted extents keep every strided access in bounds.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Unfold `[B, C, D, H, W]` into `[C*kd*kh*kw, B*P]` patch columns.
fn im2col(input: &[f32], g: &ConvGeom) -> Vec<f32> {
    let [id, ih, iw] = g.in_dims;
    let [pd, ph, pw] = g.pad;
    let [od, oh, ow] = g.out_dims;
    let p = g.out_positions();
    let ncols = g.batch * p;
    let mut cols = vec![0.0f32; g.patch() * ncols];
    let in_pos = g.in_positions();
    let [(la, ha), (li, hi), (lj, hj)] = g.live;
    for c in 0..g.in_ch {
        for a in la..ha {
            for i in li..hi {
                for j in lj..hj {
                    let row = ((c * (ha - la) + a - la) * (hi - li) + i - li) * (hj - lj) + j - lj;
                    let dst_row = &mut cols[row * ncols..(row + 1) * ncols];
                    for b in 0..g.batch {
                        let src = &input[(b * g.in_ch + c) * in_pos..(b * g.in_ch + c + 1) * in_pos];
                        for z in 0..od {
                            let zi = (z + a) as isize - pd as isize;
                            if zi < 0 || zi >= id as isize {
                                continue;
                            }
                            for y in 0..oh {
                                let yi = (y + i) as isize - ph as isize;
                                if yi < 0 || yi >= ih as isize {
                                    continue;
                                }
                                let src_row = &src[(zi as usize * ih + yi as usize) * iw..][..iw];
                                let base = b * p + (z * oh + y) * ow;
                                let dst = &mut dst_row[base..base + ow];
                                // valid x range: 0 <= x + j - pw < iw
                                let x0 = pw.saturating_sub(j);
                                let x1 = (iw + pw).saturating_sub(j).min(ow);
                                if x0 < x1 {
                                    let s0 = x0 + j - pw;
                                    dst[x0..x1].copy_from_slice(&src_row[s0..s0 + (x1 - x0)]);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: accumulate patch columns back into `[B, C, D, H, W]`.
fn col2im(cols: &[f32], g: &ConvGeom, out: &mut [f32]) {
    let [id, ih, iw] = g.in_dims;
    let [pd, ph, pw] = g.pad;
    let [od, oh, ow] = g.out_dims;
    let p = g.out_positions();
    let ncols = g.batch * p;
    let in_pos = g.in_positions();
    let [(la, ha), (li, hi), (lj, hj)] = g.live;
    for c in 0..g.in_ch {
        for a in la..ha {
            for i in li..hi {
                for j in lj..hj {
                    let row = ((c * (ha - la) + a - la) * (hi - li) + i - li) * (hj - lj) + j - lj;
                    let src_row = &cols[row * ncols..(row + 1) * ncols];
                    for b in 0..g.batch {
                        let dst = &mut out[(b * g.in_ch + c) * in_pos..(b * g.in_ch + c + 1) * in_pos];
                        for z in 0..od {
                            let zi = (z + a) as isize - pd as isize;
                            if zi < 0 || zi >= id as isize {
                                continue;
                            }
                            for y in 0..oh {
                                let yi = (y + i) as isize - ph as isize;
                                if yi < 0 || yi >= ih as isize {
                                    continue;
                                }
                                let dst_row = &mut dst[(zi as usize * ih + yi as usize) * iw..][..iw];
                                let base = b * p + (z * oh + y) * ow;
                                let src = &src_row[base..base + ow];
                                let x0 = pw.saturating_sub(j);
                                let x1 = (iw + pw).saturating_sub(j).min(ow);
                                for x in x0..x1 {
                                    dst_row[x + j - pw] += src[x];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Forward cross-correlation. Returns `[B, F, P]` flattened.
pub(crate) fn conv_forward(
    input: &[f32],
    kernel: &[f32],
    bias: Option<&[f32]>,
    g: &ConvGeom,
) -> Vec<f32> {
    let cols = im2col(input, g);
    let p = g.out_positions();
    let n = g.batch * p;
    let k = g.patch();
    let f = g.out_ch;
    let mut tmp = vec![0.0f32; f * n];
    let kernel = g.compact_kernel(kernel);
    gemm(f, k, n, &kernel, (k, 1), &cols, (n, 1), 0.0, &mut tmp, (n, 1));
    let mut out = vec![0.0f32; f * n];
    for fi in 0..f {
        let bv = bias.map_or(0.0, |b| b[fi]);
        for b in 0..g.batch {
            let src = &tmp[fi * n + b * p..fi * n + (b + 1) * p];
            let dst = &mut out[(b * f + fi) * p..(b * f + fi + 1) * p];
            for (d, s) in dst.iter_mut().zip(src) {
                *d = s + bv;
            }
        }
    }
    out
}

pub(crate) struct ConvGrads {
    pub input: Option<Vec<f32>>,
    pub kernel: Option<Vec<f32>>,
    pub bias: Option<Vec<f32>>,
}

pub(crate) fn conv_backward(
    input: &[f32],
    kernel: &[f32],
    grad_out: &[f32],
    g: &ConvGeom,
    want: (bool, bool, bool),
) -> ConvGrads {
    let p = g.out_positions();
    let n = g.batch * p;
    let k = g.patch();
    let f = g.out_ch;
    // [B, F, P] -> [F, B*P]
    let mut dy = vec![0.0f32; f * n];
    for b in 0..g.batch {
        for fi in 0..f {
            dy[fi * n + b * p..fi * n + (b + 1) * p]
                .copy_from_slice(&grad_out[(b * f + fi) * p..(b * f + fi + 1) * p]);
        }
    }
    let bias = want.2.then(|| {
        (0..f)
            .map(|fi| dy[fi * n..(fi + 1) * n].iter().sum())
            .collect()
    });
    let kernel_grad = want.1.then(|| {
        let cols = im2col(input, g);
        let mut dw = vec![0.0f32; f * k];
        // dW = dY · colsᵀ
        gemm(f, n, k, &dy, (n, 1), &cols, (1, n), 0.0, &mut dw, (k, 1));
        g.expand_kernel(dw)
    });
    let input_grad = want.0.then(|| {
        let mut dcols = vec![0.0f32; k * n];
        // dcols = Wᵀ · dY
        let kernel = g.compact_kernel(kernel);
        gemm(k, f, n, &kernel, (1, k), &dy, (n, 1), 0.0, &mut dcols, (n, 1));
        let mut dx = vec![0.0f32; g.batch * g.in_ch * g.in_positions()];
        col2im(&dcols, g, &mut dx);
        dx
    });
    ConvGrads {
        input: input_grad,
        kernel: kernel_grad,
        bias,
    }
}

/// 2x2 / stride-2 max pooling over the last two axes of `[outer, H, W]`.
///
/// Odd dimensions behave as if padded with −∞ on the high side. Returns the
/// pooled values and, per output, the flat input index of the maximum (first
/// occurrence in row-major window order on ties).
pub(crate) fn maxpool_forward(input: &[f32], outer: usize, h: usize, w: usize) -> (Vec<f32>, Vec<u32>) {
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Vec::with_capacity(outer * oh * ow);
    let mut arg = Vec::with_capacity(outer * oh * ow);
    for o in 0..outer {
        let base = o * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let mut best = f32::NEG_INFINITY;
                let mut best_idx = usize::MAX;
                for dy in 0..2 {
                    let yy = 2 * y + dy;
                    if yy >= h {
                        continue;
                    }
                    for dx in 0..2 {
                        let xx = 2 * x + dx;
                        if xx >= w {
                            continue;
                        }
                        let idx = base + yy * w + xx;
                        if best_idx == usize::MAX || input[idx] > best {
                            best = input[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                arg.push(best_idx as u32);
            }
        }
    }
    (out, arg)
}
