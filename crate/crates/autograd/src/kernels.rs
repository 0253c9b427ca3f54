//! Raw numeric kernels shared by the graph ops.

use crate::scalar::Scalar;

/// `c (m×n) = a (m×k) · b (k×n)`, accumulating into `c` when `accumulate`.
///
/// `a_t`/`b_t` mean the operand is stored transposed (row-major `k×m` /
/// `n×k` respectively).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: lengths are checked above and strides describe the stated layouts.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a strided, zero-padded square-kernel window over one image.
///
/// `channels/height/width` describe the image side; `out_h/out_w` the
/// window-position grid. For a transposed convolution the image side is the
/// output and the grid is the input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Window {
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
    pub fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Valid output coordinates `[lo, hi)` along one axis for kernel tap `kk`.
    #[inline]
    fn valid_range(&self, kk: usize, extent: usize, out: usize) -> (usize, usize) {
        // i = o*s + kk - p must satisfy 0 <= i < extent
        let s = self.stride;
        let p = self.padding;
        let lo = if kk >= p { 0 } else { (p - kk).div_ceil(s) };
        let hi = if extent + p > kk {
            ((extent + p - kk - 1) / s + 1).min(out)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

/// Unfolds one `C×H×W` image into a `(C·k·k) × (out_h·out_w)` matrix.
pub(crate) fn im2col<T: Scalar>(img: &[T], w: &Window, col: &mut [T]) {
    debug_assert_eq!(img.len(), w.channels * w.height * w.width);
    debug_assert_eq!(col.len(), w.rows() * w.positions());
    let k = w.kernel;
    let (oh, ow) = (w.out_h, w.out_w);
    let s = w.stride;
    for c in 0..w.channels {
        let plane = &img[c * w.height * w.width..(c + 1) * w.height * w.width];
        for ky in 0..k {
            let (oy_lo, oy_hi) = w.valid_range(ky, w.height, oh);
            for kx in 0..k {
                let (ox_lo, ox_hi) = w.valid_range(kx, w.width, ow);
                let row = (c * k + ky) * k + kx;
                let dst = &mut col[row * oh * ow..(row + 1) * oh * ow];
                dst.fill(T::zero());
                for oy in oy_lo..oy_hi {
                    let iy = oy * s + ky - w.padding;
                    let src_row = &plane[iy * w.width..(iy + 1) * w.width];
                    let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
                    if s == 1 {
                        let ix0 = ox_lo + kx - w.padding;
                        dst_row[ox_lo..ox_hi]
                            .copy_from_slice(&src_row[ix0..ix0 + (ox_hi - ox_lo)]);
                    } else {
                        for ox in ox_lo..ox_hi {
                            dst_row[ox] = src_row[ox * s + kx - w.padding];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds a column matrix back into an image.
pub(crate) fn col2im<T: Scalar>(col: &[T], w: &Window, img: &mut [T]) {
    debug_assert_eq!(img.len(), w.channels * w.height * w.width);
    debug_assert_eq!(col.len(), w.rows() * w.positions());
    let k = w.kernel;
    let (oh, ow) = (w.out_h, w.out_w);
    let s = w.stride;
    for c in 0..w.channels {
        let plane = &mut img[c * w.height * w.width..(c + 1) * w.height * w.width];
        for ky in 0..k {
            let (oy_lo, oy_hi) = w.valid_range(ky, w.height, oh);
            for kx in 0..k {
                let (ox_lo, ox_hi) = w.valid_range(kx, w.width, ow);
                let row = (c * k + ky) * k + kx;
                let src = &col[row * oh * ow..(row + 1) * oh * ow];
                for oy in oy_lo..oy_hi {
                    let iy = oy * s + ky - w.padding;
                    let dst_row = &mut plane[iy * w.width..(iy + 1) * w.width];
                    let src_row = &src[oy * ow..(oy + 1) * ow];
                    for ox in ox_lo..ox_hi {
                        dst_row[ox * s + kx - w.padding] += src_row[ox];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_im2col(img: &[f64], w: &Window) -> Vec<f64> {
        let mut col = vec![0.0; w.rows() * w.positions()];
        for c in 0..w.channels {
            for ky in 0..w.kernel {
                for kx in 0..w.kernel {
                    let row = (c * w.kernel + ky) * w.kernel + kx;
                    for oy in 0..w.out_h {
                        for ox in 0..w.out_w {
                            let iy = (oy * w.stride + ky) as isize - w.padding as isize;
                            let ix = (ox * w.stride + kx) as isize - w.padding as isize;
                            if iy >= 0
                                && ix >= 0
                                && (iy as usize) < w.height
                                && (ix as usize) < w.width
                            {
                                col[row * w.positions() + oy * w.out_w + ox] = img
                                    [(c * w.height + iy as usize) * w.width + ix as usize];
                            }
                        }
                    }
                }
            }
        }
        col
    }

    #[test]
    fn im2col_matches_naive_indexing() {
        for &(h, k, s, p) in &[(8, 3, 1, 1), (8, 4, 2, 1), (7, 3, 2, 1), (5, 7, 1, 3), (4, 3, 2, 0)] {
            let out = (h + 2 * p - k) / s + 1;
            let w = Window {
                channels: 2,
                height: h,
                width: h,
                kernel: k,
                stride: s,
                padding: p,
                out_h: out,
                out_w: out,
            };
            let img: Vec<f64> = (0..2 * h * h).map(|i| i as f64 * 0.5 - 3.0).collect();
            let mut col = vec![f64::NAN; w.rows() * w.positions()];
            im2col(&img, &w, &mut col);
            assert_eq!(col, naive_im2col(&img, &w), "h={h} k={k} s={s} p={p}");
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let w = Window {
            channels: 3,
            height: 6,
            width: 6,
            kernel: 4,
            stride: 2,
            padding: 1,
            out_h: 3,
            out_w: 3,
        };
        let img: Vec<f64> = (0..w.channels * 36).map(|i| ((i * 7) % 11) as f64).collect();
        let col_probe: Vec<f64> = (0..w.rows() * w.positions())
            .map(|i| ((i * 5) % 13) as f64 - 6.0)
            .collect();
        let mut col = vec![0.0; col_probe.len()];
        im2col(&img, &w, &mut col);
        let lhs: f64 = col.iter().zip(&col_probe).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; img.len()];
        col2im(&col_probe, &w, &mut back);
        let rhs: f64 = img.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn gemm_handles_transposed_operands() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0f64; 4];
        gemm(2, 2, 2, &a, false, &b, false, &mut c, false);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, &mut c, false);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, &mut c, true);
        assert_eq!(c, [26.0 + 17.0, 30.0 + 23.0, 38.0 + 39.0, 44.0 + 53.0]);
    }
}
