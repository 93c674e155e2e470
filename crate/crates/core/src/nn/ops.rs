//! Forward and backward kernels on `[C, F, T]` buffers.

use super::{strides, Real};

/// Geometry of a 2-D correlation from an input plane `(f, t)` to an output
/// plane `(fo, to)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub f: usize,
    pub t: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
}

impl ConvGeom {
    /// Stride-1 convolution with "same" zero padding (odd kernels).
    pub fn same(channels: usize, f: usize, t: usize, kh: usize, kw: usize) -> Self {
        Self {
            channels,
            f,
            t,
            kh,
            kw,
            sh: 1,
            sw: 1,
            ph: kh / 2,
            pw: kw / 2,
        }
    }

    /// The 3x3, stride (2, 1), padding (1, 1) correlation that halves the
    /// frequency axis; its adjoint is the decoder's deconvolution.
    pub fn down2(channels: usize, f: usize, t: usize) -> Self {
        Self {
            channels,
            f,
            t,
            kh: 3,
            kw: 3,
            sh: 2,
            sw: 1,
            ph: 1,
            pw: 1,
        }
    }

    pub fn fo(&self) -> usize {
        (self.f + 2 * self.ph - self.kh) / self.sh + 1
    }

    pub fn to(&self) -> usize {
        (self.t + 2 * self.pw - self.kw) / self.sw + 1
    }

    /// Rows of the column matrix: `channels * kh * kw`.
    pub fn k(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    /// Columns of the column matrix: `fo * to`.
    pub fn p(&self) -> usize {
        self.fo() * self.to()
    }
}

/// Unfolds `x` (`[channels, f, t]`) into a `[k, p]` column matrix.
pub fn im2col<T: Real>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let (fo, to) = (g.fo(), g.to());
    let p = fo * to;
    let mut cols = vec![T::ZERO; g.k() * p];
    for c in 0..g.channels {
        let plane = &x[c * g.f * g.t..(c + 1) * g.f * g.t];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = ((c * g.kh + i) * g.kw + j) * p;
                for of in 0..fo {
                    let fi = (of * g.sh + i) as isize - g.ph as isize;
                    if fi < 0 || fi >= g.f as isize {
                        continue;
                    }
                    let src = &plane[fi as usize * g.t..(fi as usize + 1) * g.t];
                    let dst = &mut cols[row + of * to..row + (of + 1) * to];
                    if g.sw == 1 {
                        // Contiguous run of valid time indices.
                        let lo = g.pw.saturating_sub(j);
                        let hi = (g.t + g.pw).saturating_sub(j).min(to);
                        if lo < hi {
                            let s0 = lo + j - g.pw;
                            dst[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                        }
                    } else {
                        for (ot, d) in dst.iter_mut().enumerate() {
                            let ti = (ot * g.sw + j) as isize - g.pw as isize;
                            if ti >= 0 && ti < g.t as isize {
                                *d = src[ti as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: folds a `[k, p]` column matrix back into
/// `[channels, f, t]`, summing overlaps.
pub fn col2im<T: Real>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let (fo, to) = (g.fo(), g.to());
    let p = fo * to;
    let mut x = vec![T::ZERO; g.channels * g.f * g.t];
    for c in 0..g.channels {
        let plane = &mut x[c * g.f * g.t..(c + 1) * g.f * g.t];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = ((c * g.kh + i) * g.kw + j) * p;
                for of in 0..fo {
                    let fi = (of * g.sh + i) as isize - g.ph as isize;
                    if fi < 0 || fi >= g.f as isize {
                        continue;
                    }
                    let dst = &mut plane[fi as usize * g.t..(fi as usize + 1) * g.t];
                    let src = &cols[row + of * to..row + (of + 1) * to];
                    if g.sw == 1 {
                        let lo = g.pw.saturating_sub(j);
                        let hi = (g.t + g.pw).saturating_sub(j).min(to);
                        if lo < hi {
                            let d0 = lo + j - g.pw;
                            for (d, s) in dst[d0..d0 + (hi - lo)].iter_mut().zip(&src[lo..hi]) {
                                *d += *s;
                            }
                        }
                    } else {
                        for (ot, s) in src.iter().enumerate() {
                            let ti = (ot * g.sw + j) as isize - g.pw as isize;
                            if ti >= 0 && ti < g.t as isize {
                                dst[ti as usize] += *s;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// Correlation of `x` (geometry `g`) with `w` (`[co, g.k()]`) plus `bias`.
/// Returns `[co, fo, to]`.
pub fn conv_forward<T: Real>(x: &[T], w: &[T], bias: &[T], co: usize, g: &ConvGeom) -> Vec<T> {
    let p = g.p();
    let k = g.k();
    let mut out = vec![T::ZERO; co * p];
    for (o, b) in out.chunks_mut(p).zip(bias) {
        o.iter_mut().for_each(|v| *v = *b);
    }
    if g.kh == 1 && g.kw == 1 && g.sh == 1 && g.sw == 1 {
        T::gemm(co, k, p, w, strides(k, false), x, strides(p, false), T::ONE, &mut out);
    } else {
        let cols = im2col(x, g);
        T::gemm(co, k, p, w, strides(k, false), &cols, strides(p, false), T::ONE, &mut out);
    }
    out
}

/// Backward of [`conv_forward`]. Accumulates into `dw` and `db`; returns
/// the gradient with respect to `x`.
pub fn conv_backward<T: Real>(
    x: &[T],
    w: &[T],
    dy: &[T],
    co: usize,
    g: &ConvGeom,
    dw: &mut [T],
    db: &mut [T],
) -> Vec<T> {
    let p = g.p();
    let k = g.k();
    for (b, row) in db.iter_mut().zip(dy.chunks(p)) {
        *b += row.iter().copied().sum::<T>();
    }
    let pointwise = g.kh == 1 && g.kw == 1 && g.sh == 1 && g.sw == 1;
    let owned;
    let cols: &[T] = if pointwise {
        x
    } else {
        owned = im2col(x, g);
        &owned
    };
    // dW[co, k] += dY[co, p] * cols[k, p]^T
    T::gemm(co, p, k, dy, strides(p, false), cols, strides(p, true), T::ONE, dw);
    // dcols[k, p] = W[co, k]^T * dY[co, p]
    let mut dcols = vec![T::ZERO; k * p];
    T::gemm(k, co, p, w, strides(k, true), dy, strides(p, false), T::ZERO, &mut dcols);
    if pointwise {
        dcols
    } else {
        col2im(&dcols, g)
    }
}

/// Transposed convolution: the adjoint of the correlation `g` (which maps
/// `[c_out, g.f, g.t]` to `[c_in, fo, to]`), applied to `x` of shape
/// `[c_in, fo, to]`, plus `bias`. `w` is `[c_in, c_out * kh * kw]`.
pub fn deconv_forward<T: Real>(x: &[T], w: &[T], bias: &[T], c_in: usize, g: &ConvGeom) -> Vec<T> {
    let p = g.p();
    let k = g.k();
    let mut cols = vec![T::ZERO; k * p];
    T::gemm(k, c_in, p, w, strides(k, true), x, strides(p, false), T::ZERO, &mut cols);
    let mut out = col2im(&cols, g);
    let plane = g.f * g.t;
    for (o, b) in out.chunks_mut(plane).zip(bias) {
        o.iter_mut().for_each(|v| *v += *b);
    }
    out
}

/// Backward of [`deconv_forward`].
pub fn deconv_backward<T: Real>(
    x: &[T],
    w: &[T],
    dy: &[T],
    c_in: usize,
    g: &ConvGeom,
    dw: &mut [T],
    db: &mut [T],
) -> Vec<T> {
    let p = g.p();
    let k = g.k();
    let plane = g.f * g.t;
    for (b, row) in db.iter_mut().zip(dy.chunks(plane)) {
        *b += row.iter().copied().sum::<T>();
    }
    let dcols = im2col(dy, g);
    // dW[c_in, k] += X[c_in, p] * dcols[k, p]^T
    T::gemm(c_in, p, k, x, strides(p, false), &dcols, strides(p, true), T::ONE, dw);
    // dX[c_in, p] = W[c_in, k] * dcols[k, p]
    let mut dx = vec![T::ZERO; c_in * p];
    T::gemm(c_in, k, p, w, strides(k, false), &dcols, strides(p, false), T::ZERO, &mut dx);
    dx
}

/// 2x1 max-pooling along frequency. Returns the pooled values and, per
/// output cell, the input index that won.
pub fn maxpool_freq_forward<T: Real>(x: &[T], c: usize, f: usize, t: usize) -> (Vec<T>, Vec<u32>) {
    let fo = f / 2;
    let mut out = Vec::with_capacity(c * fo * t);
    let mut arg = Vec::with_capacity(c * fo * t);
    for ch in 0..c {
        for of in 0..fo {
            let a = (ch * f + 2 * of) * t;
            let b = a + t;
            for ti in 0..t {
                // Ties go to the lower frequency bin.
                if x[b + ti] > x[a + ti] {
                    out.push(x[b + ti]);
                    arg.push((b + ti) as u32);
                } else {
                    out.push(x[a + ti]);
                    arg.push((a + ti) as u32);
                }
            }
        }
    }
    (out, arg)
}

pub fn maxpool_freq_backward<T: Real>(dy: &[T], arg: &[u32], input_len: usize) -> Vec<T> {
    let mut dx = vec![T::ZERO; input_len];
    for (&i, &g) in arg.iter().zip(dy) {
        dx[i as usize] += g;
    }
    dx
}

/// Softmax across channels at every `(f, t)` position.
pub fn softmax_channels<T: Real>(x: &[T], c: usize, plane: usize) -> Vec<T> {
    let mut y = vec![T::ZERO; x.len()];
    for pos in 0..plane {
        let mut m = x[pos];
        for ch in 1..c {
            m = m.max(x[ch * plane + pos]);
        }
        let mut z = T::ZERO;
        for ch in 0..c {
            let e = (x[ch * plane + pos] - m).exp();
            y[ch * plane + pos] = e;
            z += e;
        }
        for ch in 0..c {
            y[ch * plane + pos] = y[ch * plane + pos] / z;
        }
    }
    y
}

pub fn softmax_channels_backward<T: Real>(y: &[T], dy: &[T], c: usize, plane: usize) -> Vec<T> {
    let mut dx = vec![T::ZERO; y.len()];
    for pos in 0..plane {
        let dot: T = (0..c).map(|ch| y[ch * plane + pos] * dy[ch * plane + pos]).sum();
        for ch in 0..c {
            let i = ch * plane + pos;
            dx[i] = y[i] * (dy[i] - dot);
        }
    }
    dx
}

pub fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::ZERO {
        T::ONE / (T::ONE + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::ONE + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct 4-loop correlation used as an oracle.
    fn naive_conv(x: &[f64], w: &[f64], co: usize, g: &ConvGeom) -> Vec<f64> {
        let (fo, to) = (g.fo(), g.to());
        let mut out = vec![0.0; co * fo * to];
        for o in 0..co {
            for of in 0..fo {
                for ot in 0..to {
                    let mut s = 0.0;
                    for c in 0..g.channels {
                        for i in 0..g.kh {
                            for j in 0..g.kw {
                                let fi = (of * g.sh + i) as isize - g.ph as isize;
                                let ti = (ot * g.sw + j) as isize - g.pw as isize;
                                if fi >= 0 && ti >= 0 && (fi as usize) < g.f && (ti as usize) < g.t {
                                    s += x[(c * g.f + fi as usize) * g.t + ti as usize]
                                        * w[((o * g.channels + c) * g.kh + i) * g.kw + j];
                                }
                            }
                        }
                    }
                    out[(o * fo + of) * to + ot] = s;
                }
            }
        }
        out
    }

    fn rand_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn im2col_conv_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(c, f, t, kh, kw, sh) in &[
            (1, 5, 7, 3, 3, 1),
            (2, 4, 3, 1, 1, 1),
            (3, 6, 5, 3, 21, 1),
            (2, 23, 4, 21, 3, 1),
            (2, 8, 5, 3, 3, 2),
            (1, 2, 1, 3, 3, 1),
        ] {
            let g = if sh == 2 {
                ConvGeom::down2(c, f, t)
            } else {
                ConvGeom::same(c, f, t, kh, kw)
            };
            let co = 2;
            let x = rand_vec(c * f * t, &mut rng);
            let w = rand_vec(co * g.k(), &mut rng);
            let fast = conv_forward(&x, &w, &[0.0, 0.0], co, &g);
            let slow = naive_conv(&x, &w, co, &g);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for g in [ConvGeom::same(2, 5, 6, 3, 21), ConvGeom::down2(3, 8, 4)] {
            let x = rand_vec(g.channels * g.f * g.t, &mut rng);
            let y = rand_vec(g.k() * g.p(), &mut rng);
            let lhs: f64 = im2col(&x, &g).iter().zip(&y).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&col2im(&y, &g)).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn down2_geometry_halves_frequency() {
        for f in [2, 4, 8, 16] {
            let g = ConvGeom::down2(1, f * 2, 9);
            assert_eq!(g.fo(), f);
            assert_eq!(g.to(), 9);
        }
    }

    #[test]
    fn maxpool_picks_larger_bin() {
        let x = [1.0f64, 5.0, 3.0, 2.0, 0.0, 0.0];
        // c=1, f=3, t=2: rows [1,5], [3,2], [0,0]; last row dropped.
        let (y, arg) = maxpool_freq_forward(&x, 1, 3, 2);
        assert_eq!(y, [3.0, 5.0]);
        assert_eq!(arg, [2, 1]);
        let dx = maxpool_freq_backward(&[1.0, 2.0], &arg, 6);
        assert_eq!(dx, [0.0, 2.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn softmax_is_normalized() {
        let x = [1.0f64, -3.0, 1000.0, 2.0, 0.5, 1000.0];
        let y = softmax_channels(&x, 2, 3);
        for pos in 0..3 {
            assert!((y[pos] + y[3 + pos] - 1.0).abs() < 1e-12);
        }
        assert!((y[2] - 0.5).abs() < 1e-12);
        assert!(sigmoid(1000.0f64) <= 1.0 && sigmoid(-1000.0f64) >= 0.0);
    }
}
