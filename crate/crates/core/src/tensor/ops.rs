//! Forward and backward math for the op set.
//!
//! Every function here is pure: inputs are borrowed, outputs are fresh
//! tensors. The tape calls into these for both directions, and the
//! evaluation executor calls the forward halves directly.
//!
//! Convolution is cross-correlation (no kernel flip). Bilinear resize uses
//! the align-corners-false, half-pixel-center convention. Backward of `relu`
//! at exactly 0 is 0.

use super::gemm::{gemm, gemm_abt, transpose};
use super::{build_tensor, Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Interpolation mode for [`resize`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ResizeMode {
    Nearest,
    Bilinear,
}

/// Resolution change factor; the op set supports exactly these.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Scale {
    Down4,
    Down2,
    Up2,
    Up4,
}

impl Scale {
    /// (numerator, denominator) of the output/input ratio.
    pub fn ratio(self) -> (usize, usize) {
        match self {
            Scale::Down4 => (1, 4),
            Scale::Down2 => (1, 2),
            Scale::Up2 => (2, 1),
            Scale::Up4 => (4, 1),
        }
    }

    pub fn apply(self, dim: usize) -> Result<usize> {
        let (num, den) = self.ratio();
        if dim * num % den != 0 {
            return Err(Error::dim(format!("dimension {dim} not divisible for scale {self:?}")));
        }
        Ok(dim * num / den)
    }

    pub fn inverse(self) -> Scale {
        match self {
            Scale::Down4 => Scale::Up4,
            Scale::Down2 => Scale::Up2,
            Scale::Up2 => Scale::Down2,
            Scale::Up4 => Scale::Down4,
        }
    }
}

pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if input + 2 * pad < kernel {
        return Err(Error::dim(format!(
            "input {input} with pad {pad} smaller than kernel {kernel}"
        )));
    }
    let out = (input + 2 * pad - kernel) / stride + 1;
    if out == 0 {
        return Err(Error::dim("empty convolution output"));
    }
    Ok(out)
}

fn check_conv_args<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, stride: usize) -> Result<()> {
    let (xs, ws) = (x.shape(), w.shape());
    if ws.h != ws.w || ws.h % 2 == 0 {
        return Err(Error::dim(format!("kernel must be square and odd, got {}x{}", ws.h, ws.w)));
    }
    if xs.c != ws.c {
        return Err(Error::dim(format!(
            "input channels {} do not match weight in-channels {}",
            xs.c, ws.c
        )));
    }
    if stride == 0 {
        return Err(Error::dim("stride must be >= 1"));
    }
    if b.numel() != ws.n {
        return Err(Error::dim(format!(
            "bias length {} does not match out-channels {}",
            b.numel(),
            ws.n
        )));
    }
    Ok(())
}

// Columns per im2col tile; bounds the scratch buffer for large frames.
const COL_TILE: usize = 8192;

/// For output columns `ox` in `[ox0, ox0+run)` and kernel offset `kx`, the
/// input column is `ox*stride + kx - pad`. Returns the sub-range of the run
/// whose input column lands inside `[0, w)`.
#[inline]
fn valid_x_run(ox0: usize, run: usize, stride: usize, kx: usize, pad: usize, w: usize) -> (usize, usize) {
    // smallest ox with ox*stride + kx >= pad
    let lo = if kx >= pad { 0 } else { (pad - kx).div_ceil(stride) };
    // smallest ox with ox*stride + kx - pad >= w (exclusive bound)
    let hi = (w + pad - kx).div_ceil(stride);
    let lo = lo.clamp(ox0, ox0 + run);
    let hi = hi.clamp(ox0, ox0 + run);
    (lo - ox0, hi.max(lo) - ox0)
}

/// Fill `cols` (k_total rows x `cnt` columns) with the receptive fields of
/// output positions `[start, start+cnt)` of sample `n`.
fn im2col_tile<T: Scalar>(
    cols: &mut [T],
    x: &Tensor<T>,
    n: usize,
    start: usize,
    cnt: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    ow: usize,
) {
    let xs = x.shape();
    let data = x.data();
    for ic in 0..xs.c {
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (ic * kernel + ky) * kernel + kx;
                let dst = &mut cols[row * cnt..(row + 1) * cnt];
                // walk the tile one output row at a time
                let mut pos = start;
                while pos < start + cnt {
                    let oy = pos / ow;
                    let ox0 = pos % ow;
                    let run = (ow - ox0).min(start + cnt - pos);
                    let seg = &mut dst[pos - start..pos - start + run];
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy as usize >= xs.h {
                        seg.fill(T::zero());
                    } else {
                        let (v0, v1) = valid_x_run(ox0, run, stride, kx, pad, xs.w);
                        seg[..v0].fill(T::zero());
                        seg[v1..].fill(T::zero());
                        if v1 > v0 {
                            let src_row = &data[xs.at(n, ic, iy as usize, 0)..][..xs.w];
                            let ix0 = (ox0 + v0) * stride + kx - pad;
                            if stride == 1 {
                                seg[v0..v1].copy_from_slice(&src_row[ix0..ix0 + (v1 - v0)]);
                            } else {
                                for (d, s) in seg[v0..v1].iter_mut().zip(src_row[ix0..].iter().step_by(stride)) {
                                    *d = *s;
                                }
                            }
                        }
                    }
                    pos += run;
                }
            }
        }
    }
}

/// Scatter-add the adjoint of im2col back into the input gradient.
fn col2im<T: Scalar>(
    dx: &mut [T],
    cols: &[T],
    xs: Shape,
    n: usize,
    total: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    ow: usize,
) {
    let oh = total / ow;
    for ic in 0..xs.c {
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (ic * kernel + ky) * kernel + kx;
                let src = &cols[row * total..(row + 1) * total];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy as usize >= xs.h {
                        continue;
                    }
                    let (v0, v1) = valid_x_run(0, ow, stride, kx, pad, xs.w);
                    if v1 <= v0 {
                        continue;
                    }
                    let seg = &src[oy * ow + v0..oy * ow + v1];
                    let ix0 = v0 * stride + kx - pad;
                    let dst_row = &mut dx[xs.at(n, ic, iy as usize, 0)..][..xs.w];
                    if stride == 1 {
                        for (d, &s) in dst_row[ix0..ix0 + (v1 - v0)].iter_mut().zip(seg) {
                            *d = *d + s;
                        }
                    } else {
                        for (d, &s) in dst_row[ix0..].iter_mut().step_by(stride).zip(seg) {
                            *d = *d + s;
                        }
                    }
                }
            }
        }
    }
}

/// 2-D convolution (cross-correlation). Weight layout `[out_c, in_c, k, k]`,
/// bias shaped `(1, out_c, 1, 1)`.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    check_conv_args(x, w, b, stride)?;
    let (xs, ws) = (x.shape(), w.shape());
    let kernel = ws.h;
    let oh = conv_out_dim(xs.h, kernel, stride, pad)?;
    let ow = conv_out_dim(xs.w, kernel, stride, pad)?;
    let (m, k_total, n_total) = (ws.n, ws.c * kernel * kernel, oh * ow);
    let out_shape = Shape::new(xs.n, m, oh, ow);

    let tile = n_total.min(COL_TILE);
    let mut cols = vec![T::zero(); k_total * tile];
    let mut ct = vec![T::zero(); m * tile];
    let bias = b.data();

    let out = build_tensor(out_shape, |out| {
        for n in 0..xs.n {
            let mut start = 0;
            while start < n_total {
                let cnt = (n_total - start).min(tile);
                im2col_tile(&mut cols[..k_total * cnt], x, n, start, cnt, kernel, stride, pad, ow);
                gemm(&mut ct[..m * cnt], w.data(), &cols[..k_total * cnt], m, k_total, cnt, false);
                for oc in 0..m {
                    let dst = &mut out[out_shape.at(n, oc, 0, 0) + start..][..cnt];
                    let src = &ct[oc * cnt..(oc + 1) * cnt];
                    let bv = bias[oc];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d = s + bv;
                    }
                }
                start += cnt;
            }
        }
    });
    if !out.all_finite() {
        return Err(Error::Numeric("conv2d produced non-finite values".into()));
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward<T: Scalar>(
    dy: &Tensor<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (xs, ws, ys) = (x.shape(), w.shape(), dy.shape());
    let kernel = ws.h;
    let (m, k_total, n_total) = (ws.n, ws.c * kernel * kernel, ys.h * ys.w);
    let ow = ys.w;

    let mut dw = vec![T::zero(); m * k_total];
    let mut db = vec![T::zero(); m];
    let mut wt = vec![T::zero(); k_total * m];
    transpose(&mut wt, w.data(), m, k_total);

    let mut cols = vec![T::zero(); k_total * n_total];
    let mut dcols = vec![T::zero(); k_total * n_total];

    let dx = build_tensor(xs, |dx| {
        for n in 0..xs.n {
            let dy_n = &dy.data()[ys.at(n, 0, 0, 0)..ys.at(n, 0, 0, 0) + m * n_total];
            // bias gradient: sum over positions
            for oc in 0..m {
                let s: T = dy_n[oc * n_total..(oc + 1) * n_total].iter().copied().sum();
                db[oc] = db[oc] + s;
            }
            // weight gradient: dW += dY * cols^T
            im2col_tile(&mut cols, x, n, 0, n_total, kernel, stride, pad, ow);
            gemm_abt(&mut dw, dy_n, &cols, m, n_total, k_total, true);
            // input gradient: dcols = W^T * dY, scattered back
            gemm(&mut dcols, &wt, dy_n, k_total, m, n_total, false);
            col2im(dx, &dcols, xs, n, n_total, kernel, stride, pad, ow);
        }
    });

    let dw = Tensor::from_vec(ws, dw).expect("dw shape");
    let db = Tensor::from_vec(Shape::new(1, m, 1, 1), db).expect("db shape");
    (dx, dw, db)
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient mask is 1 for x > 0 and 0 otherwise (0 at exactly 0).
pub fn relu_backward<T: Scalar>(dy: &Tensor<T>, x: &Tensor<T>) -> Tensor<T> {
    build_tensor(x.shape(), |out| {
        for ((o, &d), &v) in out.iter_mut().zip(dy.data()).zip(x.data()) {
            *o = if v > T::zero() { d } else { T::zero() };
        }
    })
}

/// Bilinear source coordinate for output index `d` (half-pixel centers):
/// returns (low index, high index, weight of high tap).
fn bilinear_taps(d: usize, num: usize, den: usize, in_dim: usize) -> (usize, usize, f64) {
    // src = (d + 0.5) * in/out - 0.5, with in/out = den/num
    let src = (d as f64 + 0.5) * den as f64 / num as f64 - 0.5;
    let lo = src.floor();
    let t = src - lo;
    let i0 = (lo.max(0.0) as usize).min(in_dim - 1);
    let i1 = ((lo + 1.0).max(0.0) as usize).min(in_dim - 1);
    (i0, i1, t)
}

pub fn resize<T: Scalar>(x: &Tensor<T>, scale: Scale, mode: ResizeMode) -> Result<Tensor<T>> {
    let xs = x.shape();
    let oh = scale.apply(xs.h)?;
    let ow = scale.apply(xs.w)?;
    let os = Shape::new(xs.n, xs.c, oh, ow);
    let (num, den) = scale.ratio();
    let out = build_tensor(os, |out| match mode {
        ResizeMode::Nearest => {
            for n in 0..xs.n {
                for c in 0..xs.c {
                    for y in 0..oh {
                        let iy = y * den / num;
                        for xo in 0..ow {
                            let ix = xo * den / num;
                            out[os.at(n, c, y, xo)] = x.get(n, c, iy, ix);
                        }
                    }
                }
            }
        }
        ResizeMode::Bilinear => {
            let ytaps: Vec<_> = (0..oh).map(|y| bilinear_taps(y, num, den, xs.h)).collect();
            let xtaps: Vec<_> = (0..ow).map(|xo| bilinear_taps(xo, num, den, xs.w)).collect();
            for n in 0..xs.n {
                for c in 0..xs.c {
                    for y in 0..oh {
                        let (y0, y1, ty) = ytaps[y];
                        let (wy0, wy1) = (T::from_f64(1.0 - ty), T::from_f64(ty));
                        for xo in 0..ow {
                            let (x0, x1, tx) = xtaps[xo];
                            let (wx0, wx1) = (T::from_f64(1.0 - tx), T::from_f64(tx));
                            let v = wy0 * (wx0 * x.get(n, c, y0, x0) + wx1 * x.get(n, c, y0, x1))
                                + wy1 * (wx0 * x.get(n, c, y1, x0) + wx1 * x.get(n, c, y1, x1));
                            out[os.at(n, c, y, xo)] = v;
                        }
                    }
                }
            }
        }
    });
    Ok(out)
}

/// Adjoint of [`resize`]: scatter the output gradient back with the same taps.
pub fn resize_backward<T: Scalar>(dy: &Tensor<T>, in_shape: Shape, scale: Scale, mode: ResizeMode) -> Tensor<T> {
    let ys = dy.shape();
    let (num, den) = scale.ratio();
    build_tensor(in_shape, |dx| match mode {
        ResizeMode::Nearest => {
            for n in 0..ys.n {
                for c in 0..ys.c {
                    for y in 0..ys.h {
                        let iy = y * den / num;
                        for xo in 0..ys.w {
                            let ix = xo * den / num;
                            let at = in_shape.at(n, c, iy, ix);
                            dx[at] = dx[at] + dy.get(n, c, y, xo);
                        }
                    }
                }
            }
        }
        ResizeMode::Bilinear => {
            let ytaps: Vec<_> = (0..ys.h).map(|y| bilinear_taps(y, num, den, in_shape.h)).collect();
            let xtaps: Vec<_> = (0..ys.w).map(|xo| bilinear_taps(xo, num, den, in_shape.w)).collect();
            for n in 0..ys.n {
                for c in 0..ys.c {
                    for y in 0..ys.h {
                        let (y0, y1, ty) = ytaps[y];
                        let (wy0, wy1) = (T::from_f64(1.0 - ty), T::from_f64(ty));
                        for xo in 0..ys.w {
                            let (x0, x1, tx) = xtaps[xo];
                            let (wx0, wx1) = (T::from_f64(1.0 - tx), T::from_f64(tx));
                            let g = dy.get(n, c, y, xo);
                            for (iy, ix, wgt) in [
                                (y0, x0, wy0 * wx0),
                                (y0, x1, wy0 * wx1),
                                (y1, x0, wy1 * wx0),
                                (y1, x1, wy1 * wx1),
                            ] {
                                let at = in_shape.at(n, c, iy, ix);
                                dx[at] = dx[at] + wgt * g;
                            }
                        }
                    }
                }
            }
        }
    })
}

pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.n != sb.n || sa.h != sb.h || sa.w != sb.w {
        return Err(Error::dim(format!("concat operands {sa} and {sb} disagree on n/h/w")));
    }
    let os = Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w);
    let plane = sa.h * sa.w;
    Ok(build_tensor(os, |out| {
        for n in 0..sa.n {
            let dst = &mut out[os.at(n, 0, 0, 0)..os.at(n, 0, 0, 0) + os.c * plane];
            dst[..sa.c * plane].copy_from_slice(&a.data()[n * sa.c * plane..(n + 1) * sa.c * plane]);
            dst[sa.c * plane..].copy_from_slice(&b.data()[n * sb.c * plane..(n + 1) * sb.c * plane]);
        }
    }))
}

/// Split a concat gradient back into the two operands' gradients.
pub fn concat_backward<T: Scalar>(dy: &Tensor<T>, ca: usize) -> (Tensor<T>, Tensor<T>) {
    let ys = dy.shape();
    let cb = ys.c - ca;
    let plane = ys.h * ys.w;
    let sa = Shape::new(ys.n, ca, ys.h, ys.w);
    let sb = Shape::new(ys.n, cb, ys.h, ys.w);
    let da = build_tensor(sa, |out| {
        for n in 0..ys.n {
            out[n * ca * plane..(n + 1) * ca * plane]
                .copy_from_slice(&dy.data()[ys.at(n, 0, 0, 0)..ys.at(n, 0, 0, 0) + ca * plane]);
        }
    });
    let db = build_tensor(sb, |out| {
        for n in 0..ys.n {
            out[n * cb * plane..(n + 1) * cb * plane]
                .copy_from_slice(&dy.data()[ys.at(n, ca, 0, 0)..ys.at(n, ca, 0, 0) + cb * plane]);
        }
    });
    (da, db)
}

fn check_same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!("{what}: shapes {} and {} differ", a.shape(), b.shape())));
    }
    Ok(())
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape(a, b, "add")?;
    Ok(build_tensor(a.shape(), |out| {
        for ((o, &x), &y) in out.iter_mut().zip(a.data()).zip(b.data()) {
            *o = x + y;
        }
    }))
}

pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape(a, b, "sub")?;
    Ok(build_tensor(a.shape(), |out| {
        for ((o, &x), &y) in out.iter_mut().zip(a.data()).zip(b.data()) {
            *o = x - y;
        }
    }))
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape(a, b, "mul")?;
    Ok(build_tensor(a.shape(), |out| {
        for ((o, &x), &y) in out.iter_mut().zip(a.data()).zip(b.data()) {
            *o = x * y;
        }
    }))
}

pub fn scale_by<T: Scalar>(x: &Tensor<T>, c: T) -> Tensor<T> {
    x.map(|v| v * c)
}

pub fn add_const<T: Scalar>(x: &Tensor<T>, c: T) -> Tensor<T> {
    x.map(|v| v + c)
}

/// Multiply a tensor by a 1-element tensor (broadcast), e.g. a switch omega.
pub fn mul_scalar<T: Scalar>(x: &Tensor<T>, s: &Tensor<T>) -> Result<Tensor<T>> {
    if !s.is_scalar() {
        return Err(Error::dim("mul_scalar expects a 1-element scalar tensor"));
    }
    Ok(scale_by(x, s.item()))
}

/// Elementwise x^p for p >= 1 (used on switch omegas in [0, 1]).
pub fn pow_const<T: Scalar>(x: &Tensor<T>, p: f64) -> Tensor<T> {
    let pe = T::from_f64(p);
    x.map(|v| v.powf(pe))
}

pub fn pow_const_backward<T: Scalar>(dy: &Tensor<T>, x: &Tensor<T>, p: f64) -> Tensor<T> {
    let pe = T::from_f64(p);
    build_tensor(x.shape(), |out| {
        for ((o, &d), &v) in out.iter_mut().zip(dy.data()).zip(x.data()) {
            *o = pe * v.powf(pe - T::one()) * d;
        }
    })
}

pub fn mean_all<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s: T = x.data().iter().copied().sum();
    Tensor::scalar(s / T::from_f64(x.numel() as f64))
}

/// Mean absolute error; the task loss.
pub fn l1_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape(pred, target, "l1_loss")?;
    let s: T = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| (p - t).abs())
        .sum();
    let v = s / T::from_f64(pred.numel() as f64);
    if !v.is_finite() {
        return Err(Error::Numeric("l1_loss is non-finite".into()));
    }
    Ok(Tensor::scalar(v))
}

/// d(l1)/d(pred) = sign(pred - target) / numel; sign(0) = 0.
pub fn l1_loss_backward<T: Scalar>(dy: T, pred: &Tensor<T>, target: &Tensor<T>) -> Tensor<T> {
    let inv = dy / T::from_f64(pred.numel() as f64);
    build_tensor(pred.shape(), |out| {
        for ((o, &p), &t) in out.iter_mut().zip(pred.data()).zip(target.data()) {
            let d = p - t;
            *o = if d > T::zero() {
                inv
            } else if d < T::zero() {
                -inv
            } else {
                T::zero()
            };
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn rand_tensor(shape: Shape, rng: &mut Rng) -> Tensor<f64> {
        build_tensor(shape, |d| {
            for v in d.iter_mut() {
                *v = rng.range(-1.0, 1.0);
            }
        })
    }

    /// Six-loop reference convolution, the independent oracle.
    fn conv_naive(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let (xs, ws) = (x.shape(), w.shape());
        let oh = conv_out_dim(xs.h, ws.h, stride, pad).unwrap();
        let ow = conv_out_dim(xs.w, ws.w, stride, pad).unwrap();
        let os = Shape::new(xs.n, ws.n, oh, ow);
        build_tensor(os, |out| {
            for n in 0..xs.n {
                for oc in 0..ws.n {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = b.data()[oc];
                            for ic in 0..xs.c {
                                for ky in 0..ws.h {
                                    for kx in 0..ws.w {
                                        let iy = (oy * stride + ky) as isize - pad as isize;
                                        let ix = (ox * stride + kx) as isize - pad as isize;
                                        if iy >= 0 && ix >= 0 && (iy as usize) < xs.h && (ix as usize) < xs.w {
                                            acc += x.get(n, ic, iy as usize, ix as usize)
                                                * w.get(oc, ic, ky, kx);
                                        }
                                    }
                                }
                            }
                            out[os.at(n, oc, oy, ox)] = acc;
                        }
                    }
                }
            }
        })
    }

    #[test]
    fn conv_zero_input_zero_bias_is_zero() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 1, 3, 3));
        let w = Tensor::full(Shape::new(2, 1, 3, 3), 0.7);
        let b = Tensor::zeros(Shape::new(1, 2, 1, 1));
        let y = conv2d(&x, &w, &b, 1, 1).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_impulse_reproduces_kernel() {
        // cross-correlation: an impulse image maps to the kernel flipped onto
        // the impulse position (the Jacobian row, by contrast, is the kernel
        // verbatim -- see arch::impulse_response)
        let mut rng = Rng::new(1);
        let x = build_tensor(Shape::new(1, 1, 5, 5), |d| d[2 * 5 + 2] = 1.0);
        let w = rand_tensor(Shape::new(1, 1, 3, 3), &mut rng);
        let b = Tensor::zeros(Shape::new(1, 1, 1, 1));
        let y = conv2d(&x, &w, &b, 1, 1).unwrap();
        for ky in 0..3 {
            for kx in 0..3 {
                assert_eq!(y.get(0, 0, 1 + ky, 1 + kx), w.get(0, 0, 2 - ky, 2 - kx));
            }
        }
    }

    #[test]
    fn conv_matches_naive_oracle() {
        let mut rng = Rng::new(5);
        for &(stride, pad, k) in &[(1usize, 1usize, 3usize), (2, 1, 3), (1, 3, 7), (4, 3, 7), (2, 3, 7)] {
            let x = rand_tensor(Shape::new(2, 3, 8, 8), &mut rng);
            let w = rand_tensor(Shape::new(4, 3, k, k), &mut rng);
            let b = rand_tensor(Shape::new(1, 4, 1, 1), &mut rng);
            let y = conv2d(&x, &w, &b, stride, pad).unwrap();
            let want = conv_naive(&x, &w, &b, stride, pad);
            assert_eq!(y.shape(), want.shape());
            for (a, e) in y.data().iter().zip(want.data()) {
                let rel = (a - e).abs() / e.abs().max(1.0);
                assert!(rel < 1e-5, "stride {stride} pad {pad}: {a} vs {e}");
            }
        }
    }

    #[test]
    fn conv_shape_mismatch_errors() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 2, 4, 4));
        let w = Tensor::<f64>::zeros(Shape::new(1, 3, 3, 3));
        let b = Tensor::zeros(Shape::new(1, 1, 1, 1));
        assert!(matches!(conv2d(&x, &w, &b, 1, 1), Err(Error::Dim(_))));
    }

    #[test]
    fn relu_matches_elementwise_oracle() {
        let mut rng = Rng::new(9);
        let x = rand_tensor(Shape::new(1, 2, 4, 4), &mut rng);
        let y = relu(&x);
        for (&o, &i) in y.data().iter().zip(x.data()) {
            assert_eq!(o, if i > 0.0 { i } else { 0.0 });
        }
        let all_neg = Tensor::full(Shape::new(1, 1, 2, 2), -3.0);
        assert!(relu(&all_neg).data().iter().all(|&v| v == 0.0));
        let g = relu_backward(&Tensor::full(Shape::new(1, 1, 2, 2), 1.0), &all_neg);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn resize_constant_invariance() {
        let x = Tensor::full(Shape::new(1, 1, 4, 4), 0.37f64);
        for mode in [ResizeMode::Nearest, ResizeMode::Bilinear] {
            let y = resize(&x, Scale::Down2, mode).unwrap();
            assert_eq!(y.shape(), Shape::new(1, 1, 2, 2));
            for &v in y.data() {
                assert!((v - 0.37).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn resize_nearest_replicates_blocks() {
        let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let y = resize(&x, Scale::Up2, ResizeMode::Nearest).unwrap();
        let want = [1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0];
        assert_eq!(y.data(), &want);
    }

    #[test]
    fn bilinear_down_is_box_average() {
        // half-pixel convention: exact 2x2 block means at factor 1/2
        let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let y = resize(&x, Scale::Down2, ResizeMode::Bilinear).unwrap();
        assert!((y.item() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn bilinear_roundtrip_is_low_pass() {
        // down then up approximates the original; error bounded by the
        // reference-resampler oracle (worst-case local variation: the
        // 2x2 box average differs from a sample by at most the block range).
        let mut rng = Rng::new(13);
        let x = rand_tensor(Shape::new(1, 1, 8, 8), &mut rng);
        let down = resize(&x, Scale::Down2, ResizeMode::Bilinear).unwrap();
        let up = resize(&down, Scale::Up2, ResizeMode::Bilinear).unwrap();
        // oracle bound: max |roundtrip - x| <= max 2x2-neighbourhood range
        let mut max_err: f64 = 0.0;
        let mut bound: f64 = 0.0;
        for y in 0usize..8 {
            for xx in 0..8 {
                max_err = max_err.max((up.get(0, 0, y, xx) - x.get(0, 0, y, xx)).abs());
            }
        }
        for y in 0usize..8 {
            for xx in 0usize..8 {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for dy in y.saturating_sub(1)..(y + 2).min(8) {
                    for dx in xx.saturating_sub(1)..(xx + 2).min(8) {
                        lo = lo.min(x.get(0, 0, dy, dx));
                        hi = hi.max(x.get(0, 0, dy, dx));
                    }
                }
                bound = bound.max(hi - lo);
            }
        }
        assert!(max_err <= bound + 1e-12, "{max_err} vs {bound}");
    }

    #[test]
    fn resize_rejects_non_integral_dims() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 1, 6, 6));
        assert!(matches!(resize(&x, Scale::Down4, ResizeMode::Bilinear), Err(Error::Dim(_))));
    }

    #[test]
    fn concat_stacks_channels() {
        let a = Tensor::<f64>::full(Shape::new(2, 32, 3, 3), 1.0);
        let b = Tensor::<f64>::full(Shape::new(2, 32, 3, 3), 2.0);
        let y = concat_channels(&a, &b).unwrap();
        assert_eq!(y.shape(), Shape::new(2, 64, 3, 3));
        assert_eq!(y.get(0, 0, 0, 0), 1.0);
        assert_eq!(y.get(0, 32, 0, 0), 2.0);
        assert_eq!(y.get(1, 63, 2, 2), 2.0);
    }

    #[test]
    fn sub_then_scale_matches_elementwise_oracle() {
        let a = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![1.0f64, 5.0, -2.0]).unwrap();
        let b = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![0.5f64, 1.0, 1.0]).unwrap();
        let y = scale_by(&sub(&a, &b).unwrap(), 3.0);
        assert_eq!(y.data(), &[1.5, 12.0, -9.0]);
    }

    #[test]
    fn l1_loss_basics() {
        let mut rng = Rng::new(3);
        let x = rand_tensor(Shape::new(1, 3, 4, 4), &mut rng);
        assert_eq!(l1_loss(&x, &x).unwrap().item(), 0.0);
        let y = add_const(&x, 0.5);
        assert!((l1_loss(&y, &x).unwrap().item() - 0.5).abs() < 1e-12);
    }
}
