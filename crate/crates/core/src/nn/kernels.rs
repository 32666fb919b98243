//! Inner loops shared by the layers.
//!
//! Reductions use eight fixed accumulation lanes folded in a fixed order, so
//! results do not depend on how work is split across threads.

use super::tensor::Scalar;

const LANES: usize = 8;

#[inline]
fn fold_lanes<T: Scalar>(acc: [T; LANES]) -> T {
    ((acc[0] + acc[4]) + (acc[2] + acc[6])) + ((acc[1] + acc[5]) + (acc[3] + acc[7]))
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); LANES];
    let ac = a.chunks_exact(LANES);
    let bc = b.chunks_exact(LANES);
    let (ar, br) = (ac.remainder(), bc.remainder());
    for (x, y) in ac.zip(bc) {
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ar.iter().zip(br) {
        tail += x * y;
    }
    fold_lanes(acc) + tail
}

#[inline]
pub fn sum<T: Scalar>(a: &[T]) -> T {
    let mut acc = [T::zero(); LANES];
    let ac = a.chunks_exact(LANES);
    let rem = ac.remainder();
    for x in ac {
        for l in 0..LANES {
            acc[l] += x[l];
        }
    }
    let mut tail = T::zero();
    for &x in rem {
        tail += x;
    }
    fold_lanes(acc) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Geometry of a strided, zero-padded square-kernel window sweep.
///
/// `channels × height × width` is the "large" image; `out_h × out_w` is the
/// grid of window positions. Conv2d reads from the large image, the transposed
/// convolution writes into it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Window {
    pub fn for_conv(
        channels: usize,
        height: usize,
        width: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Option<Self> {
        let ph = height + 2 * padding;
        let pw = width + 2 * padding;
        if kernel == 0 || stride == 0 || ph < kernel || pw < kernel {
            return None;
        }
        Some(Self {
            channels,
            height,
            width,
            kernel,
            stride,
            padding,
            out_h: (ph - kernel) / stride + 1,
            out_w: (pw - kernel) / stride + 1,
        })
    }

    /// Window sweep for a transposed convolution taking an `in_h × in_w` grid
    /// to a `(in-1)·stride − 2·padding + kernel` image.
    pub fn for_transpose(
        channels: usize,
        in_h: usize,
        in_w: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Option<Self> {
        if kernel == 0 || stride == 0 || in_h == 0 || in_w == 0 {
            return None;
        }
        let full_h = (in_h - 1) * stride + kernel;
        let full_w = (in_w - 1) * stride + kernel;
        if full_h <= 2 * padding || full_w <= 2 * padding {
            return None;
        }
        Some(Self {
            channels,
            height: full_h - 2 * padding,
            width: full_w - 2 * padding,
            kernel,
            stride,
            padding,
            out_h: in_h,
            out_w: in_w,
        })
    }

    pub fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Unfold `image` into `cols` laid out `[rows, positions]`.
    pub fn im2col<T: Scalar>(&self, image: &[T], cols: &mut [T]) {
        let p = self.positions();
        let (h, w, k, s) = (
            self.height as isize,
            self.width as isize,
            self.kernel,
            self.stride,
        );
        let pad = self.padding as isize;
        for c in 0..self.channels {
            let plane = &image[c * self.height * self.width..(c + 1) * self.height * self.width];
            for kh in 0..k {
                for kw in 0..k {
                    let row = (c * k + kh) * k + kw;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..self.out_h {
                        let iy = (oy * s) as isize + kh as isize - pad;
                        let line = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        if iy < 0 || iy >= h {
                            line.fill(T::zero());
                            continue;
                        }
                        let src =
                            &plane[(iy as usize) * self.width..(iy as usize + 1) * self.width];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = (ox * s) as isize + kw as isize - pad;
                            *v = if ix < 0 || ix >= w {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Fold `cols` back, accumulating overlapping windows into `image`.
    pub fn col2im<T: Scalar>(&self, cols: &[T], image: &mut [T]) {
        let p = self.positions();
        let (h, w, k, s) = (
            self.height as isize,
            self.width as isize,
            self.kernel,
            self.stride,
        );
        let pad = self.padding as isize;
        for c in 0..self.channels {
            let plane =
                &mut image[c * self.height * self.width..(c + 1) * self.height * self.width];
            for kh in 0..k {
                for kw in 0..k {
                    let row = (c * k + kh) * k + kw;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..self.out_h {
                        let iy = (oy * s) as isize + kh as isize - pad;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        let line = &src[oy * self.out_w..(oy + 1) * self.out_w];
                        let dst =
                            &mut plane[(iy as usize) * self.width..(iy as usize + 1) * self.width];
                        for (ox, &v) in line.iter().enumerate() {
                            let ix = (ox * s) as isize + kw as isize - pad;
                            if ix >= 0 && ix < w {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `out[m×n] = a[m×k] · b[k×n]`, overwriting `out`.
pub fn matmul<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    out[..m * n].fill(T::zero());
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for r in 0..k {
            let alpha = a[i * k + r];
            if alpha != T::zero() {
                axpy(alpha, &b[r * n..(r + 1) * n], row);
            }
        }
    }
}

/// `out[k×n] = aᵀ · b` where `a` is `m×k` and `b` is `m×n`.
pub fn matmul_at_b<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    out[..k * n].fill(T::zero());
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for r in 0..k {
            let alpha = a[i * k + r];
            if alpha != T::zero() {
                axpy(alpha, brow, &mut out[r * n..(r + 1) * n]);
            }
        }
    }
}

/// `out[m×k] += a[m×n] · bᵀ` where `b` is `k×n`.
pub fn matmul_a_bt_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for r in 0..k {
            out[i * k + r] += dot(arow, &b[r * n..(r + 1) * n]);
        }
    }
}
