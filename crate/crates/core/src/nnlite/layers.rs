//! Valid 3x3 convolution, ReLU and 2x2 max-pool on channel-major buffers.

pub(crate) const K: usize = 3;

/// Compiles a kernel for AVX-512 and AVX2 as well as the baseline target and
/// picks one at runtime. Lanes never reassociate sums and floating-point
/// contraction is off, so every variant returns bit-identical results.
macro_rules! multiversion {
    (fn $name:ident $(<const $n:ident: usize>)? ($($arg:ident: $ty:ty),* $(,)?) $body:block) => {
        fn $name $(<const $n: usize>)? ($($arg: $ty),*) {
            #[inline(always)]
            fn body $(<const $n: usize>)? ($($arg: $ty),*) $body
            #[cfg(target_arch = "x86_64")]
            {
                #[target_feature(enable = "avx512f")]
                fn avx512 $(<const $n: usize>)? ($($arg: $ty),*) {
                    body $(::<$n>)? ($($arg),*)
                }
                #[target_feature(enable = "avx2")]
                fn avx2 $(<const $n: usize>)? ($($arg: $ty),*) {
                    body $(::<$n>)? ($($arg),*)
                }
                if std::arch::is_x86_feature_detected!("avx512f") {
                    // SAFETY: the required CPU feature was detected above.
                    return unsafe { avx512 $(::<$n>)? ($($arg),*) };
                }
                if std::arch::is_x86_feature_detected!("avx2") {
                    // SAFETY: the required CPU feature was detected above.
                    return unsafe { avx2 $(::<$n>)? ($($arg),*) };
                }
            }
            body $(::<$n>)? ($($arg),*)
        }
    };
}

/// `out[o] = bias[o] + sum_c w[o,c] (*) input[c]`, valid padding.
///
/// Works channel-last internally so all output channels of one pixel
/// accumulate in registers.
pub(crate) fn conv_forward(
    input: &[f64],
    (in_c, in_h, in_w): (usize, usize, usize),
    weight: &[f64],
    bias: &[f64],
    out: &mut [f64],
) {
    let out_c = bias.len();
    let (oh, ow) = (in_h - K + 1, in_w - K + 1);
    debug_assert_eq!(out.len(), out_c * oh * ow);
    let plane = in_h * in_w;
    let mut hwc = vec![0.0; plane * in_c];
    for c in 0..in_c {
        for (i, v) in input[c * plane..(c + 1) * plane].iter().enumerate() {
            hwc[i * in_c + c] = *v;
        }
    }
    // [ky][kx][c][o]
    let mut wt = vec![0.0; K * K * in_c * out_c];
    for o in 0..out_c {
        for c in 0..in_c {
            for t in 0..K * K {
                wt[(t * in_c + c) * out_c + o] = weight[(o * in_c + c) * K * K + t];
            }
        }
    }
    let dims = ConvDims { in_c, in_w, oh, ow };
    match out_c {
        8 => conv_forward_fixed::<8>(&hwc, &wt, bias, dims, out),
        16 => conv_forward_fixed::<16>(&hwc, &wt, bias, dims, out),
        _ => conv_forward_any(&hwc, &wt, bias, dims, out),
    }
}

#[derive(Clone, Copy)]
struct ConvDims {
    in_c: usize,
    in_w: usize,
    oh: usize,
    ow: usize,
}

multiversion! {
fn conv_forward_fixed<const N: usize>(hwc: &[f64], wt: &[f64], bias: &[f64], d: ConvDims, out: &mut [f64]) {
    let ConvDims { in_c, in_w, oh, ow } = d;
    let plane = oh * ow;
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = [0.0f64; N];
            acc.copy_from_slice(bias);
            for ky in 0..K {
                let px = &hwc[((y + ky) * in_w + x) * in_c..((y + ky) * in_w + x + K) * in_c];
                let wrow = &wt[ky * K * in_c * N..(ky + 1) * K * in_c * N];
                for (v, w) in px.iter().zip(wrow.chunks_exact(N)) {
                    for o in 0..N {
                        acc[o] += v * w[o];
                    }
                }
            }
            for (o, a) in acc.iter().enumerate() {
                out[o * plane + y * ow + x] = *a;
            }
        }
    }
}
}

multiversion! {
fn conv_forward_any(hwc: &[f64], wt: &[f64], bias: &[f64], d: ConvDims, out: &mut [f64]) {
    let ConvDims { in_c, in_w, oh, ow } = d;
    let out_c = bias.len();
    let plane = oh * ow;
    let mut acc = vec![0.0; out_c];
    for y in 0..oh {
        for x in 0..ow {
            acc.copy_from_slice(bias);
            for ky in 0..K {
                let px = &hwc[((y + ky) * in_w + x) * in_c..((y + ky) * in_w + x + K) * in_c];
                let wrow = &wt[ky * K * in_c * out_c..(ky + 1) * K * in_c * out_c];
                for (v, w) in px.iter().zip(wrow.chunks_exact(out_c)) {
                    for (a, wv) in acc.iter_mut().zip(w) {
                        *a += v * wv;
                    }
                }
            }
            for (o, a) in acc.iter().enumerate() {
                out[o * plane + y * ow + x] = *a;
            }
        }
    }
}
}

/// Accumulates weight/bias gradients and, when `d_input` is given, the
/// gradient with respect to the convolution input.
pub(crate) fn conv_backward(
    input: &[f64],
    (in_c, in_h, in_w): (usize, usize, usize),
    weight: &[f64],
    d_out: &[f64],
    out_c: usize,
    grads: Option<(&mut [f64], &mut [f64])>,
    d_input: Option<&mut [f64]>,
) {
    let (oh, ow) = (in_h - K + 1, in_w - K + 1);
    if let Some((d_w, d_b)) = grads {
        weight_gradient(input, (in_c, in_h, in_w), d_out, out_c, d_w, d_b);
    }
    let Some(din) = d_input else { return };
    if in_c == 1 {
        scatter_input_gradient(weight, d_out, out_c, (in_c, in_h, in_w), din);
        return;
    }
    // d_input is the full correlation of the zero-padded gradient with the
    // flipped kernel, i.e. a valid convolution with out/in channels swapped.
    let (ph, pw) = (oh + 2 * (K - 1), ow + 2 * (K - 1));
    let mut padded = vec![0.0; ph * pw * out_c];
    for o in 0..out_c {
        for y in 0..oh {
            for x in 0..ow {
                padded[((y + K - 1) * pw + x + K - 1) * out_c + o] = d_out[(o * oh + y) * ow + x];
            }
        }
    }
    let mut flipped = vec![0.0; K * K * out_c * in_c];
    for o in 0..out_c {
        for c in 0..in_c {
            for t in 0..K * K {
                flipped[(t * out_c + o) * in_c + c] = weight[(o * in_c + c) * K * K + (K * K - 1 - t)];
            }
        }
    }
    let zeros = vec![0.0; in_c];
    let mut full = vec![0.0; in_c * in_h * in_w];
    let dims = ConvDims {
        in_c: out_c,
        in_w: pw,
        oh: in_h,
        ow: in_w,
    };
    match in_c {
        8 => conv_forward_fixed::<8>(&padded, &flipped, &zeros, dims, &mut full),
        _ => conv_forward_any(&padded, &flipped, &zeros, dims, &mut full),
    }
    for (d, f) in din.iter_mut().zip(&full) {
        *d += f;
    }
}

// Single-channel input: row-wise scatter vectorizes along x, where the
// gather form would reduce serially.
multiversion! {
fn scatter_input_gradient(
    weight: &[f64],
    d_out: &[f64],
    out_c: usize,
    dims: (usize, usize, usize),
    din: &mut [f64],
) {
    let (in_c, in_h, in_w) = dims;
    let (oh, ow) = (in_h - K + 1, in_w - K + 1);
    for o in 0..out_c {
        let g_o = &d_out[o * oh * ow..(o + 1) * oh * ow];
        for c in 0..in_c {
        let wk = &weight[(o * in_c + c) * K * K..(o * in_c + c + 1) * K * K];
        let dplane = &mut din[c * in_h * in_w..(c + 1) * in_h * in_w];
        for y in 0..oh {
            let g = &g_o[y * ow..(y + 1) * ow];
            for ky in 0..K {
                let row = &mut dplane[(y + ky) * in_w..(y + ky + 1) * in_w];
                let (w0, w1, w2) = (wk[ky * K], wk[ky * K + 1], wk[ky * K + 2]);
                for x in 0..ow {
                    let gx = g[x];
                    row[x] += w0 * gx;
                    row[x + 1] += w1 * gx;
                    row[x + 2] += w2 * gx;
                }
            }
        }
        }
    }
}
}

fn weight_gradient(
    input: &[f64],
    (in_c, in_h, in_w): (usize, usize, usize),
    d_out: &[f64],
    out_c: usize,
    d_w: &mut [f64],
    d_b: &mut [f64],
) {
    let (oh, ow) = (in_h - K + 1, in_w - K + 1);
    let plane = oh * ow;
    for o in 0..out_c {
        d_b[o] += d_out[o * plane..(o + 1) * plane].iter().sum::<f64>();
    }
    if in_c == 1 {
        single_channel_weight_gradient(input, (in_h, in_w), d_out, out_c, d_w);
        return;
    }
    let mut g = vec![0.0; plane * out_c];
    for o in 0..out_c {
        for (i, v) in d_out[o * plane..(o + 1) * plane].iter().enumerate() {
            g[i * out_c + o] = *v;
        }
    }
    let in_plane = in_h * in_w;
    let mut hwc = vec![0.0; in_plane * in_c];
    for c in 0..in_c {
        for (i, v) in input[c * in_plane..(c + 1) * in_plane].iter().enumerate() {
            hwc[i * in_c + c] = *v;
        }
    }
    // [ky][kx][c][o]
    let mut acc = vec![0.0; K * K * in_c * out_c];
    let dims = ConvDims { in_c, in_w, oh, ow };
    match out_c {
        8 => weight_gradient_fixed::<8>(&hwc, &g, dims, &mut acc),
        16 => weight_gradient_fixed::<16>(&hwc, &g, dims, &mut acc),
        _ => weight_gradient_any(&hwc, &g, dims, out_c, &mut acc),
    }
    for o in 0..out_c {
        for c in 0..in_c {
            for t in 0..K * K {
                d_w[(o * in_c + c) * K * K + t] += acc[(t * in_c + c) * out_c + o];
            }
        }
    }
}

multiversion! {
fn weight_gradient_fixed<const N: usize>(hwc: &[f64], g: &[f64], d: ConvDims, acc: &mut [f64]) {
    let ConvDims { in_c, in_w, oh, ow } = d;
    // four input channels per pass share each gradient load
    const CB: usize = 4;
    for t in 0..K * K {
        let (ky, kx) = (t / K, t % K);
        let mut c0 = 0;
        while c0 < in_c {
            let cb = CB.min(in_c - c0);
            let mut a = [[0.0f64; N]; CB];
            for y in 0..oh {
                let row = (y + ky) * in_w + kx;
                for x in 0..ow {
                    let px = &hwc[(row + x) * in_c + c0..(row + x) * in_c + c0 + cb];
                    let gp = &g[(y * ow + x) * N..(y * ow + x + 1) * N];
                    for (ac, v) in a.iter_mut().zip(px) {
                        for o in 0..N {
                            ac[o] += v * gp[o];
                        }
                    }
                }
            }
            for (i, ac) in a.iter().take(cb).enumerate() {
                let c = c0 + i;
                acc[(t * in_c + c) * N..(t * in_c + c + 1) * N].copy_from_slice(ac);
            }
            c0 += cb;
        }
    }
}
}

multiversion! {
fn single_channel_weight_gradient(img: &[f64], dims: (usize, usize), d_out: &[f64], out_c: usize, d_w: &mut [f64]) {
    const L: usize = 8;
    let (in_h, in_w) = dims;
    let (oh, ow) = (in_h - K + 1, in_w - K + 1);
    let body = ow - ow % L;
    for o in 0..out_c {
        let g_o = &d_out[o * oh * ow..(o + 1) * oh * ow];
        // nine taps share each gradient load; lanes run along x
        let mut a = [[0.0f64; L]; K * K];
        let mut tail = [0.0f64; K * K];
        for y in 0..oh {
            let g = &g_o[y * ow..(y + 1) * ow];
            for x in (0..body).step_by(L) {
                let gx = &g[x..x + L];
                for (t, at) in a.iter_mut().enumerate() {
                    let start = (y + t / K) * in_w + x + t % K;
                    let r = &img[start..start + L];
                    for l in 0..L {
                        at[l] += gx[l] * r[l];
                    }
                }
            }
            for x in body..ow {
                for (t, tt) in tail.iter_mut().enumerate() {
                    *tt += g[x] * img[(y + t / K) * in_w + x + t % K];
                }
            }
        }
        for t in 0..K * K {
            d_w[o * K * K + t] += a[t].iter().sum::<f64>() + tail[t];
        }
    }
}
}

fn weight_gradient_any(hwc: &[f64], g: &[f64], d: ConvDims, out_c: usize, acc: &mut [f64]) {
    let ConvDims { in_c, in_w, oh, ow } = d;
    for t in 0..K * K {
        let (ky, kx) = (t / K, t % K);
        for c in 0..in_c {
            let a = &mut acc[(t * in_c + c) * out_c..(t * in_c + c + 1) * out_c];
            for y in 0..oh {
                for x in 0..ow {
                    let v = hwc[((y + ky) * in_w + kx + x) * in_c + c];
                    for (ao, gv) in a.iter_mut().zip(&g[(y * ow + x) * out_c..(y * ow + x + 1) * out_c]) {
                        *ao += v * gv;
                    }
                }
            }
        }
    }
}

pub(crate) fn relu_inplace(xs: &mut [f64]) {
    for x in xs {
        *x = if *x > 0.0 { *x } else { 0.0 };
    }
}

/// ReLU backward given the post-activation values. In guided mode positions
/// with a negative incoming gradient are zeroed as well.
pub(crate) fn relu_backward(activation: &[f64], grad: &mut [f64], guided: bool) {
    if guided {
        for (g, a) in grad.iter_mut().zip(activation) {
            *g = if *a > 0.0 && *g >= 0.0 { *g } else { 0.0 };
        }
    } else {
        for (g, a) in grad.iter_mut().zip(activation) {
            *g = if *a > 0.0 { *g } else { 0.0 };
        }
    }
}

/// 2x2 max-pool with stride 2 (trailing odd row/column dropped). Ties go to
/// the first position in row-major order. `argmax` receives flat input
/// indices.
pub(crate) fn maxpool_forward(input: &[f64], (c, h, w): (usize, usize, usize), out: &mut [f64], argmax: &mut [u32]) {
    let (ph, pw) = (h / 2, w / 2);
    for ch in 0..c {
        let base = ch * h * w;
        for i in 0..ph {
            let top = base + 2 * i * w;
            let bottom = top + w;
            for j in 0..pw {
                // branch-free select; strict > keeps the earliest index on ties
                let mut best = top + 2 * j;
                let mut value = input[best];
                for idx in [top + 2 * j + 1, bottom + 2 * j, bottom + 2 * j + 1] {
                    let v = input[idx];
                    let take = v > value;
                    best = if take { idx } else { best };
                    value = if take { v } else { value };
                }
                let o = (ch * ph + i) * pw + j;
                out[o] = value;
                argmax[o] = best as u32;
            }
        }
    }
}

pub(crate) fn maxpool_backward(d_out: &[f64], argmax: &[u32], d_input: &mut [f64]) {
    d_input.fill(0.0);
    for (g, &idx) in d_out.iter().zip(argmax) {
        d_input[idx as usize] += g;
    }
}
