//! Raw compute kernels behind the differentiable ops.
//!
//! Convolutions are lowered to matrix products: [`im2col`] unfolds each
//! sample into a `(C·k·k) × (H_out·W_out)` column matrix, a single-threaded
//! GEMM multiplies it with the weights, and [`col2im`] folds gradients back.
//! Loop order and blocking depend only on the shapes, so results are
//! bit-reproducible on a given machine.

use std::any::Any;
use std::cell::RefCell;
use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

/// Row-major matrix view: `(data, rows, cols)` with optional transpose.
#[derive(Clone, Copy)]
struct Mat<'a, T> {
    data: &'a [T],
    rows: usize,
    cols: usize,
    /// Read the stored `cols × rows` row-major buffer as its transpose.
    transposed: bool,
}

impl<'a, T> Mat<'a, T> {
    fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        Mat {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    /// The transpose of a stored `rows × cols` row-major matrix.
    fn t(data: &'a [T], rows: usize, cols: usize) -> Self {
        Mat {
            data,
            rows: cols,
            cols: rows,
            transposed: true,
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.rows as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `c ← a·b + beta·c` with `c` row-major `a.rows × b.cols`.
fn matmul<T: Real>(a: Mat<T>, b: Mat<T>, beta: T, c: &mut [T]) {
    assert_eq!(a.cols, b.rows, "inner dimensions");
    assert!(a.data.len() >= a.rows * a.cols && b.data.len() >= b.rows * b.cols);
    assert!(c.len() >= a.rows * b.cols);
    if a.rows == 0 || b.cols == 0 {
        return;
    }
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        T::gemm(
            a.rows,
            a.cols,
            b.cols,
            a.data.as_ptr(),
            a.strides(),
            b.data.as_ptr(),
            b.strides(),
            beta,
            c.as_mut_ptr(),
            (b.cols as isize, 1),
        );
    }
}

thread_local! {
    static SCRATCH: RefCell<Option<Box<dyn Any>>> = const { RefCell::new(None) };
}

/// Column buffer borrowed from a per-thread cache, so repeated convolutions
/// do not pay for fresh zeroed pages on every call.
///
/// Callers overwrite every element they read, so stale contents from an
/// earlier call are harmless and the buffer is only zeroed when it grows.
struct Scratch<T: Real> {
    buf: Vec<T>,
    len: usize,
}

impl<T: Real> Scratch<T> {
    fn new(len: usize) -> Self {
        let mut buf = SCRATCH
            .with(|s| s.borrow_mut().take())
            .and_then(|b| b.downcast::<Vec<T>>().ok())
            .map(|b| *b)
            .unwrap_or_default();
        if buf.len() < len {
            buf.resize(len, T::zero());
        }
        Scratch { buf, len }
    }
}

impl<T: Real> Drop for Scratch<T> {
    fn drop(&mut self) {
        let buf = std::mem::take(&mut self.buf);
        SCRATCH.with(|s| *s.borrow_mut() = Some(Box::new(buf)));
    }
}

impl<T: Real> Deref for Scratch<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.buf[..self.len]
    }
}

impl<T: Real> DerefMut for Scratch<T> {
    fn deref_mut(&mut self) -> &mut [T] {
        &mut self.buf[..self.len]
    }
}

/// Geometry of one stride-1 correlation: input `c × h × w`, kernel `k`,
/// zero padding `pad`, output `oh × ow`.
#[derive(Clone, Copy, Debug)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geom {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// A 1×1 unpadded kernel, whose column matrix is the input itself.
    fn is_identity(&self) -> bool {
        self.k == 1 && self.pad == 0
    }

    fn scratch<T: Real>(&self) -> Scratch<T> {
        Scratch::new(if self.is_identity() { 0 } else { self.rows() * self.cols() })
    }

    /// Valid output-column range `[x0, x1)` for kernel column `kx`.
    fn span(&self, kx: usize) -> (usize, usize) {
        let x0 = self.pad.saturating_sub(kx).min(self.ow);
        let x1 = (self.w + self.pad).saturating_sub(kx).min(self.ow).max(x0);
        (x0, x1)
    }
}

/// Unfold one sample: `cols[(ci·k + ky)·k + kx][oy·ow + ox] = src[ci][oy + ky − pad][ox + kx − pad]`.
fn im2col<T: Real>(src: &[T], g: Geom, cols: &mut [T]) {
    let p = g.cols();
    for ci in 0..g.c {
        let plane = &src[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = &mut cols[((ci * g.k + ky) * g.k + kx) * p..][..p];
                let (x0, x1) = g.span(kx);
                for oy in 0..g.oh {
                    let dst = &mut row[oy * g.ow..(oy + 1) * g.ow];
                    let iy = oy + ky;
                    if iy < g.pad || iy >= g.h + g.pad {
                        dst.fill(T::zero());
                        continue;
                    }
                    let srow = &plane[(iy - g.pad) * g.w..][..g.w];
                    dst[..x0].fill(T::zero());
                    dst[x1..].fill(T::zero());
                    if x1 > x0 {
                        let sx = x0 + kx - g.pad;
                        dst[x0..x1].copy_from_slice(&srow[sx..sx + (x1 - x0)]);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulate columns back into `dst`.
fn col2im<T: Real>(cols: &[T], g: Geom, dst: &mut [T]) {
    let p = g.cols();
    for ci in 0..g.c {
        let plane = &mut dst[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = &cols[((ci * g.k + ky) * g.k + kx) * p..][..p];
                let (x0, x1) = g.span(kx);
                if x1 <= x0 {
                    continue;
                }
                for oy in 0..g.oh {
                    let iy = oy + ky;
                    if iy < g.pad || iy >= g.h + g.pad {
                        continue;
                    }
                    let sx = x0 + kx - g.pad;
                    let drow = &mut plane[(iy - g.pad) * g.w + sx..][..x1 - x0];
                    for (d, &v) in drow.iter_mut().zip(&row[oy * g.ow + x0..oy * g.ow + x1]) {
                        *d = *d + v;
                    }
                }
            }
        }
    }
}

fn check_kernel<T: Real>(op: &'static str, w: &Tensor<T>) -> Result<usize> {
    let s = w.shape();
    if s.h != s.w || s.h == 0 {
        return Err(Error::Shape {
            op,
            reason: format!("kernel must be square and non-empty, got {s}"),
        });
    }
    Ok(s.h)
}

fn check_bias<T: Real>(op: &'static str, bias: Option<&[T]>, channels: usize) -> Result<()> {
    match bias {
        Some(b) if b.len() != channels => Err(Error::Shape {
            op,
            reason: format!("bias has {} entries, expected {channels}", b.len()),
        }),
        _ => Ok(()),
    }
}

/// Output shape of a stride-1 cross-correlation.
pub fn conv2d_out_shape(x: Shape, w: Shape, padding: usize) -> Result<Shape> {
    if x.c != w.c {
        return Err(Error::Dimension {
            op: "conv2d",
            lhs: x.dims(),
            rhs: w.dims(),
        });
    }
    let oh = (x.h + 2 * padding) as isize - w.h as isize + 1;
    let ow = (x.w + 2 * padding) as isize - w.w as isize + 1;
    if oh <= 0 || ow <= 0 {
        return Err(Error::Shape {
            op: "conv2d",
            reason: format!("kernel {}x{} with padding {padding} does not fit input {x}", w.h, w.w),
        });
    }
    Ok(Shape::new(x.n, w.n, oh as usize, ow as usize))
}

/// Stride-1 cross-correlation. `w` is `(out, in, k, k)`.
pub fn conv2d<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&[T]>,
    padding: usize,
) -> Result<Tensor<T>> {
    let k = check_kernel("conv2d", w)?;
    let xs = x.shape();
    let ws = w.shape();
    let os = conv2d_out_shape(xs, ws, padding)?;
    check_bias("conv2d", bias, ws.n)?;
    let g = Geom {
        c: xs.c,
        h: xs.h,
        w: xs.w,
        k,
        pad: padding,
        oh: os.h,
        ow: os.w,
    };
    let mut out = Tensor::zeros(os);
    let mut cols = g.scratch();
    let (ip, op) = (xs.c * xs.plane(), os.c * os.plane());
    let wm = Mat::new(w.data(), ws.n, g.rows());
    for n in 0..xs.n {
        let src = &x.data()[n * ip..(n + 1) * ip];
        let unfolded = if g.is_identity() {
            src
        } else {
            im2col(src, g, &mut cols);
            &cols
        };
        let dst = &mut out.data_mut()[n * op..(n + 1) * op];
        if let Some(b) = bias {
            for (plane, &bv) in dst.chunks_mut(os.plane()).zip(b) {
                plane.fill(bv);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        matmul(wm, Mat::new(unfolded, g.rows(), g.cols()), beta, dst);
    }
    Ok(out)
}

/// Gradient of [`conv2d`] with respect to its input.
pub fn conv2d_grad_input<T: Real>(
    gout: &Tensor<T>,
    w: &Tensor<T>,
    padding: usize,
    in_shape: Shape,
) -> Tensor<T> {
    let ws = w.shape();
    let gs = gout.shape();
    let g = Geom {
        c: in_shape.c,
        h: in_shape.h,
        w: in_shape.w,
        k: ws.h,
        pad: padding,
        oh: gs.h,
        ow: gs.w,
    };
    let mut gx = Tensor::zeros(in_shape);
    let mut cols = g.scratch();
    let (ip, op) = (in_shape.c * in_shape.plane(), gs.c * gs.plane());
    let wt = Mat::t(w.data(), ws.n, g.rows());
    for n in 0..in_shape.n {
        let go = Mat::new(&gout.data()[n * op..(n + 1) * op], gs.c, g.cols());
        let dst = &mut gx.data_mut()[n * ip..(n + 1) * ip];
        if g.is_identity() {
            matmul(wt, go, T::zero(), dst);
        } else {
            matmul(wt, go, T::zero(), &mut cols);
            col2im(&cols, g, dst);
        }
    }
    gx
}

/// Gradient of [`conv2d`] with respect to its `(out, in, k, k)` weights.
pub fn conv2d_grad_weight<T: Real>(
    gout: &Tensor<T>,
    x: &Tensor<T>,
    padding: usize,
    k: usize,
) -> Tensor<T> {
    let xs = x.shape();
    let gs = gout.shape();
    let g = Geom {
        c: xs.c,
        h: xs.h,
        w: xs.w,
        k,
        pad: padding,
        oh: gs.h,
        ow: gs.w,
    };
    let mut gw = Tensor::zeros(Shape::new(gs.c, xs.c, k, k));
    let mut cols = g.scratch();
    let (ip, op) = (xs.c * xs.plane(), gs.c * gs.plane());
    for n in 0..xs.n {
        let src = &x.data()[n * ip..(n + 1) * ip];
        let unfolded = if g.is_identity() {
            src
        } else {
            im2col(src, g, &mut cols);
            &cols
        };
        matmul(
            Mat::new(&gout.data()[n * op..(n + 1) * op], gs.c, g.cols()),
            Mat::t(unfolded, g.rows(), g.cols()),
            T::one(),
            gw.data_mut(),
        );
    }
    gw
}

/// Per-channel sum of an upstream gradient (bias gradient).
pub fn channel_sums<T: Real>(g: &Tensor<T>) -> Vec<T> {
    let s = g.shape();
    let p = s.plane();
    let mut out = vec![T::zero(); s.c];
    for n in 0..s.n {
        for (c, o) in out.iter_mut().enumerate() {
            let start = (n * s.c + c) * p;
            *o = *o + g.data()[start..start + p].iter().copied().sum::<T>();
        }
    }
    out
}

/// Stride-1, padding-0 transposed convolution, the adjoint of [`conv2d`].
/// `w` is `(in, out, k, k)`; output is `H + k - 1` by `W + k - 1`.
pub fn conv_transpose2d<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&[T]>,
) -> Result<Tensor<T>> {
    let k = check_kernel("conv_transpose2d", w)?;
    let xs = x.shape();
    let ws = w.shape();
    if xs.c != ws.n {
        return Err(Error::Dimension {
            op: "conv_transpose2d",
            lhs: xs.dims(),
            rhs: ws.dims(),
        });
    }
    check_bias("conv_transpose2d", bias, ws.c)?;
    let os = Shape::new(xs.n, ws.c, xs.h + k - 1, xs.w + k - 1);
    // The output plays the role of a padding-0 correlation input whose
    // result has the size of `x`.
    let g = Geom {
        c: ws.c,
        h: os.h,
        w: os.w,
        k,
        pad: 0,
        oh: xs.h,
        ow: xs.w,
    };
    let mut out = Tensor::zeros(os);
    let mut cols = g.scratch();
    let (ip, op) = (xs.c * xs.plane(), os.c * os.plane());
    let wt = Mat::t(w.data(), ws.n, g.rows());
    for n in 0..xs.n {
        let xm = Mat::new(&x.data()[n * ip..(n + 1) * ip], xs.c, g.cols());
        let dst = &mut out.data_mut()[n * op..(n + 1) * op];
        if let Some(b) = bias {
            for (plane, &bv) in dst.chunks_mut(os.plane()).zip(b) {
                plane.fill(bv);
            }
        }
        if g.is_identity() {
            matmul(wt, xm, T::one(), dst);
        } else {
            matmul(wt, xm, T::zero(), &mut cols);
            col2im(&cols, g, dst);
        }
    }
    Ok(out)
}

/// Gradient of [`conv_transpose2d`] with respect to its input: a plain
/// padding-0 correlation with the same `(in, out, k, k)` tensor read as
/// `(out, in, k, k)`.
pub fn conv_transpose2d_grad_input<T: Real>(gout: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    conv2d(gout, w, None, 0)
}

/// Gradient of [`conv_transpose2d`] with respect to its weights.
pub fn conv_transpose2d_grad_weight<T: Real>(gout: &Tensor<T>, x: &Tensor<T>, k: usize) -> Tensor<T> {
    // gw[ci, co, ky, kx] = Σ x[ci][y][x] · gout[co][y + ky][x + kx]
    conv2d_grad_weight(x, gout, 0, k)
}

/// `out[n, c, h·s + a, w·s + b] = in[n, c·s² + a·s + b, h, w]`.
pub fn pixel_shuffle<T: Real>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let xs = x.shape();
    if s == 0 || !xs.c.is_multiple_of(s * s) {
        return Err(Error::Shape {
            op: "pixel_shuffle",
            reason: format!("{} channels not divisible by {}", xs.c, s * s),
        });
    }
    let os = Shape::new(xs.n, xs.c / (s * s), xs.h * s, xs.w * s);
    let mut data = vec![T::zero(); os.numel()];
    for n in 0..xs.n {
        for c in 0..os.c {
            let dst = &mut data[(n * os.c + c) * os.plane()..][..os.plane()];
            for a in 0..s {
                for b in 0..s {
                    let src = x.plane(n, c * s * s + a * s + b);
                    for h in 0..xs.h {
                        let row = &mut dst[(h * s + a) * os.w..][..os.w];
                        for (w, &v) in src[h * xs.w..(h + 1) * xs.w].iter().enumerate() {
                            row[w * s + b] = v;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(os, data)
}

/// Inverse permutation of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Real>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let xs = x.shape();
    if s == 0 || !xs.h.is_multiple_of(s) || !xs.w.is_multiple_of(s) {
        return Err(Error::Shape {
            op: "pixel_unshuffle",
            reason: format!("spatial size {}x{} not divisible by {s}", xs.h, xs.w),
        });
    }
    let os = Shape::new(xs.n, xs.c * s * s, xs.h / s, xs.w / s);
    let mut data = vec![T::zero(); os.numel()];
    for n in 0..xs.n {
        for c in 0..xs.c {
            let src = x.plane(n, c);
            for a in 0..s {
                for b in 0..s {
                    let dst = &mut data[(n * os.c + c * s * s + a * s + b) * os.plane()..][..os.plane()];
                    for h in 0..os.h {
                        for w in 0..os.w {
                            dst[h * os.w + w] = src[(h * s + a) * xs.w + w * s + b];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(os, data)
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_filter_sums() {
        let x = Tensor::<f64>::from_fn(Shape::new(1, 1, 5, 5), |_, _, y, x| (y * 5 + x) as f64);
        let w = Tensor::full(Shape::new(1, 1, 3, 3), 1.0);
        let out = conv2d(&x, &w, None, 0).unwrap();
        assert_eq!(out.shape(), Shape::new(1, 1, 3, 3));
        for oy in 0..3 {
            for ox in 0..3 {
                let mut s = 0.0;
                for y in oy..oy + 3 {
                    for xx in ox..ox + 3 {
                        s += (y * 5 + xx) as f64;
                    }
                }
                assert_eq!(out.at(0, 0, oy, ox), s);
            }
        }
    }

    #[test]
    fn valid_conv_output_size() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 2, 10, 10));
        let w = Tensor::zeros(Shape::new(3, 2, 5, 5));
        assert_eq!(conv2d(&x, &w, None, 0).unwrap().shape(), Shape::new(1, 3, 6, 6));
    }

    #[test]
    fn conv_rejects_bad_shapes() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 2, 4, 4));
        let w = Tensor::zeros(Shape::new(1, 3, 3, 3));
        assert!(matches!(conv2d(&x, &w, None, 0), Err(Error::Dimension { .. })));
        let w = Tensor::zeros(Shape::new(1, 2, 5, 5));
        assert!(matches!(conv2d(&x, &w, None, 0), Err(Error::Shape { .. })));
    }

    #[test]
    fn transpose_delta_response_is_kernel() {
        let x = Tensor::<f64>::full(Shape::new(1, 1, 1, 1), 1.0);
        let w = Tensor::from_fn(Shape::new(1, 1, 3, 3), |_, _, y, x| (y * 3 + x) as f64 + 0.5);
        let out = conv_transpose2d(&x, &w, Some(&[0.25])).unwrap();
        assert_eq!(out.shape(), Shape::new(1, 1, 3, 3));
        for (o, k) in out.data().iter().zip(w.data()) {
            assert_eq!(*o, k + 0.25);
        }
    }

    #[test]
    fn pixel_shuffle_interleaving() {
        let x = Tensor::<f64>::from_fn(Shape::new(1, 4, 2, 2), |_, c, h, w| (c * 10 + h * 2 + w) as f64);
        let out = pixel_shuffle(&x, 2).unwrap();
        assert_eq!(out.shape(), Shape::new(1, 1, 4, 4));
        for c in 0..4 {
            let (a, b) = (c / 2, c % 2);
            for h in 0..2 {
                for w in 0..2 {
                    assert_eq!(out.at(0, 0, h * 2 + a, w * 2 + b), x.at(0, c, h, w));
                }
            }
        }
        assert_eq!(pixel_unshuffle(&out, 2).unwrap(), x);
        assert!(pixel_shuffle(&Tensor::<f64>::zeros(Shape::new(1, 3, 2, 2)), 2).is_err());
    }

    #[test]
    fn sigmoid_extremes_stay_finite() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-1000.0f64) >= 0.0);
        assert!(sigmoid(1000.0f64) <= 1.0);
        assert!(sigmoid(-1000.0f32).is_finite());
    }
}
