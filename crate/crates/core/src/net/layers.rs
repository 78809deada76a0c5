//! Dense CPU kernels for the classifier: 3x3 same-padding convolution,
//! 2x2 max pooling, and their adjoints. Planes are channel-major, row-major.

/// Column window `[x0, x1)` of output pixels whose tap at offset `d` stays in
/// bounds on an axis of length `n`.
#[inline]
fn span(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).min(n as isize).max(0) as usize;
    (lo, hi)
}

pub(crate) struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
}

pub(crate) fn conv3x3_forward(
    s: &ConvShape,
    input: &[f64],
    weight: &[f64],
    bias: &[f64],
    out: &mut [f64],
) {
    let plane = s.h * s.w;
    for co in 0..s.cout {
        let o = &mut out[co * plane..(co + 1) * plane];
        o.fill(bias[co]);
        for ci in 0..s.cin {
            let inp = &input[ci * plane..(ci + 1) * plane];
            let k = &weight[(co * s.cin + ci) * 9..(co * s.cin + ci + 1) * 9];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = span(s.h, dy);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (x0, x1) = span(s.w, dx);
                    let wv = k[ky * 3 + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let sx = (x0 as isize + dx) as usize;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let orow = &mut o[y * s.w + x0..y * s.w + x1];
                        let irow = &inp[sy * s.w + sx..sy * s.w + sx + (x1 - x0)];
                        for (a, b) in orow.iter_mut().zip(irow) {
                            *a += wv * b;
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates the input gradient (if `grad_in` is given) and the weight and
/// bias gradients (if `grad_w` is given) of a convolution.
pub(crate) fn conv3x3_backward(
    s: &ConvShape,
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    mut grad_in: Option<&mut [f64]>,
    mut grad_w: Option<(&mut [f64], &mut [f64])>,
) {
    let plane = s.h * s.w;
    for co in 0..s.cout {
        let go = &grad_out[co * plane..(co + 1) * plane];
        if let Some((_, gb)) = grad_w.as_mut() {
            gb[co] += go.iter().sum::<f64>();
        }
        for ci in 0..s.cin {
            let inp = &input[ci * plane..(ci + 1) * plane];
            let base = (co * s.cin + ci) * 9;
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = span(s.h, dy);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (x0, x1) = span(s.w, dx);
                    let sx = (x0 as isize + dx) as usize;
                    let len = x1 - x0;
                    let wv = weight[base + ky * 3 + kx];
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let grow = &go[y * s.w + x0..y * s.w + x1];
                        if grad_w.is_some() {
                            let irow = &inp[sy * s.w + sx..sy * s.w + sx + len];
                            acc += grow.iter().zip(irow).map(|(a, b)| a * b).sum::<f64>();
                        }
                        if let Some(gi) = grad_in.as_mut() {
                            if wv != 0.0 {
                                let gi_plane = &mut gi[ci * plane..(ci + 1) * plane];
                                let irow = &mut gi_plane[sy * s.w + sx..sy * s.w + sx + len];
                                for (a, b) in irow.iter_mut().zip(grow) {
                                    *a += wv * b;
                                }
                            }
                        }
                    }
                    if let Some((gw, _)) = grad_w.as_mut() {
                        gw[base + ky * 3 + kx] += acc;
                    }
                }
            }
        }
    }
}

pub(crate) fn relu_inplace(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// 2x2 stride-2 max pooling over `c` planes of `h x w` (both even). Returns
/// the pooled planes and, per output, the flat input index that won.
pub(crate) fn maxpool2_forward(input: &[f64], c: usize, h: usize, w: usize) -> (Vec<f64>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let mut best = base + 2 * y * w + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let cand = base + (2 * y + dy) * w + 2 * x + dx;
                    // Strict comparison keeps the first maximum on ties.
                    if input[cand] > input[best] {
                        best = cand;
                    }
                }
                out.push(input[best]);
                idx.push(best as u32);
            }
        }
    }
    (out, idx)
}

pub(crate) fn maxpool2_backward(grad_out: &[f64], idx: &[u32], grad_in: &mut [f64]) {
    for (g, &i) in grad_out.iter().zip(idx) {
        grad_in[i as usize] += g;
    }
}
