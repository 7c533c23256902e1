//! Dense numeric kernels behind the graph ops. All buffers are row-major.

/// `c = a · b + beta · c` for row-major `a: m×k`, `b: k×n`, `c: m×n`.
/// `trans_a` / `trans_b` read the stored operand transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: strides describe exactly the m×k, k×n and m×n extents checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
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

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
}

impl ConvGeom {
    fn pad(&self) -> isize {
        (self.kernel / 2) as isize
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.height * self.width
    }
}

/// Unfolds one C×H×W image into a (C·k·k)×(H·W) patch matrix with zero "same" padding.
pub(crate) fn im2col(img: &[f64], g: ConvGeom, cols: &mut [f64]) {
    let (h, w, k, p) = (g.height as isize, g.width as isize, g.kernel, g.pad());
    let hw = g.col_cols();
    for c in 0..g.channels {
        let plane = &img[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let out = &mut cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - p;
                let dx = kx as isize - p;
                for y in 0..h {
                    let sy = y + dy;
                    let dst = &mut out[(y * w) as usize..((y + 1) * w) as usize];
                    if sy < 0 || sy >= h {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[(sy * w) as usize..((sy + 1) * w) as usize];
                    for x in 0..w {
                        let sx = x + dx;
                        dst[x as usize] = if sx < 0 || sx >= w { 0.0 } else { src[sx as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch-matrix gradients back onto the image.
pub(crate) fn col2im_add(cols: &[f64], g: ConvGeom, img: &mut [f64]) {
    let (h, w, k, p) = (g.height as isize, g.width as isize, g.kernel, g.pad());
    let hw = g.col_cols();
    for c in 0..g.channels {
        let plane = &mut img[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - p;
                let dx = kx as isize - p;
                for y in 0..h {
                    let sy = y + dy;
                    if sy < 0 || sy >= h {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x + dx;
                        if sx >= 0 && sx < w {
                            plane[(sy * w + sx) as usize] += src[(y * w + x) as usize];
                        }
                    }
                }
            }
        }
    }
}

/// 2×2 mean pooling of an N·C stack of H×W planes.
pub(crate) fn avg_pool2(x: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for y in 0..oh {
            for xx in 0..ow {
                let i = 2 * y * w + 2 * xx;
                dst[y * ow + xx] = 0.25 * (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]);
            }
        }
    }
    out
}

pub(crate) fn avg_pool2_backward(gy: &[f64], planes: usize, h: usize, w: usize, gx: &mut [f64]) {
    let (oh, ow) = (h / 2, w / 2);
    for p in 0..planes {
        let src = &gy[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut gx[p * h * w..(p + 1) * h * w];
        for y in 0..oh {
            for xx in 0..ow {
                let g = 0.25 * src[y * ow + xx];
                let i = 2 * y * w + 2 * xx;
                dst[i] += g;
                dst[i + 1] += g;
                dst[i + w] += g;
                dst[i + w + 1] += g;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_handles_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, 0.0, &mut c);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, 0.0, &mut c);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn im2col_center_row_is_identity() {
        let g = ConvGeom { channels: 1, height: 3, width: 3, kernel: 3 };
        let img: Vec<f64> = (1..=9).map(f64::from).collect();
        let mut cols = vec![0.0; 9 * 9];
        im2col(&img, g, &mut cols);
        assert_eq!(&cols[4 * 9..5 * 9], &img[..]);
        // top-left tap reads the padded border for the first row and column
        assert_eq!(&cols[0..9], &[0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 0.0, 4.0, 5.0]);
    }
}
