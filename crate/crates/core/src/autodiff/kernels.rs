//! Raw forward/backward kernels over flat buffers. Shape checking happens in
//! the graph layer; everything here assumes valid shapes.

/// Output extent of a 3x3, padding-1 convolution.
pub fn conv_out(extent: usize, stride: usize) -> usize {
    (extent - 1) / stride + 1
}

/// Geometry of one 3x3 convolution.
#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub stride: usize,
}

impl ConvGeom {
    pub fn ho(&self) -> usize {
        conv_out(self.h, self.stride)
    }

    pub fn wo(&self) -> usize {
        conv_out(self.w, self.stride)
    }

    /// Output columns `ox` for which `ox * stride + kx - 1` lands inside the
    /// input, as a half-open range.
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        let wo = self.wo();
        let lo = if kx == 0 { 1 } else { 0 };
        // ox * stride + kx - 1 <= w - 1  <=>  ox <= (w - kx) / stride
        let hi = if self.w + 1 > kx {
            ((self.w - kx) / self.stride + 1).min(wo)
        } else {
            0
        };
        (lo.min(hi), hi)
    }
}

pub fn conv3x3_forward(geom: ConvGeom, input: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let (ho, wo) = (geom.ho(), geom.wo());
    let (h, w, s) = (geom.h, geom.w, geom.stride);
    let mut out = vec![0.0; geom.c_out * ho * wo];
    for co in 0..geom.c_out {
        let plane = &mut out[co * ho * wo..(co + 1) * ho * wo];
        plane.iter_mut().for_each(|v| *v = bias[co]);
        for ci in 0..geom.c_in {
            let src = &input[ci * h * w..(ci + 1) * h * w];
            let k = &weight[(co * geom.c_in + ci) * 9..(co * geom.c_in + ci + 1) * 9];
            for ky in 0..3 {
                for oy in 0..ho {
                    let iy = (oy * s + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let row = &src[iy as usize * w..(iy as usize + 1) * w];
                    let orow = &mut plane[oy * wo..(oy + 1) * wo];
                    for kx in 0..3 {
                        let kv = k[ky * 3 + kx];
                        let (lo, hi) = geom.valid_cols(kx);
                        for ox in lo..hi {
                            orow[ox] += kv * row[ox * s + kx - 1];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(grad_input, grad_weight, grad_bias)`.
pub fn conv3x3_backward(
    geom: ConvGeom,
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (ho, wo) = (geom.ho(), geom.wo());
    let (h, w, s) = (geom.h, geom.w, geom.stride);
    let mut gin = vec![0.0; geom.c_in * h * w];
    let mut gw = vec![0.0; weight.len()];
    let mut gb = vec![0.0; geom.c_out];
    for co in 0..geom.c_out {
        let gplane = &grad_out[co * ho * wo..(co + 1) * ho * wo];
        gb[co] = gplane.iter().sum();
        for ci in 0..geom.c_in {
            let src = &input[ci * h * w..(ci + 1) * h * w];
            let dst = &mut gin[ci * h * w..(ci + 1) * h * w];
            let base = (co * geom.c_in + ci) * 9;
            for ky in 0..3 {
                for oy in 0..ho {
                    let iy = (oy * s + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let iy = iy as usize;
                    let grow = &gplane[oy * wo..(oy + 1) * wo];
                    for kx in 0..3 {
                        let kv = weight[base + ky * 3 + kx];
                        let (lo, hi) = geom.valid_cols(kx);
                        let mut acc = 0.0;
                        for ox in lo..hi {
                            let ix = iy * w + ox * s + kx - 1;
                            acc += grow[ox] * src[ix];
                            dst[ix] += grow[ox] * kv;
                        }
                        gw[base + ky * 3 + kx] += acc;
                    }
                }
            }
        }
    }
    (gin, gw, gb)
}

pub fn upsample2x_forward(c: usize, h: usize, w: usize, input: &[f64]) -> Vec<f64> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![0.0; c * h2 * w2];
    for ch in 0..c {
        for y in 0..h2 {
            for x in 0..w2 {
                out[(ch * h2 + y) * w2 + x] = input[(ch * h + y / 2) * w + x / 2];
            }
        }
    }
    out
}

/// `h`, `w` are the extents of the (small) forward input.
pub fn upsample2x_backward(c: usize, h: usize, w: usize, grad_out: &[f64]) -> Vec<f64> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut gin = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h2 {
            for x in 0..w2 {
                gin[(ch * h + y / 2) * w + x / 2] += grad_out[(ch * h2 + y) * w2 + x];
            }
        }
    }
    gin
}

/// 2x2 max pooling. Returns the pooled values and, per output cell, the flat
/// input index of the winning cell (first maximum in row-major scan order).
pub fn maxpool2x2_forward(c: usize, h: usize, w: usize, input: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = vec![0.0; c * ho * wo];
    let mut arg = vec![0usize; c * ho * wo];
    for ch in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best_idx = (ch * h + 2 * oy) * w + 2 * ox;
                let mut best = input[best_idx];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = (ch * h + 2 * oy + dy) * w + 2 * ox + dx;
                    if input[idx] > best {
                        best = input[idx];
                        best_idx = idx;
                    }
                }
                let o = (ch * ho + oy) * wo + ox;
                out[o] = best;
                arg[o] = best_idx;
            }
        }
    }
    (out, arg)
}

pub fn maxpool2x2_backward(input_len: usize, argmax: &[usize], grad_out: &[f64]) -> Vec<f64> {
    let mut gin = vec![0.0; input_len];
    for (&idx, &g) in argmax.iter().zip(grad_out) {
        gin[idx] += g;
    }
    gin
}
