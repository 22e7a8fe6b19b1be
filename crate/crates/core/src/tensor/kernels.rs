//! Raw numeric kernels on row-major slices. No shape validation happens here;
//! callers in `ops` check shapes first.

/// Geometry of a stride-1, zero-padded 2-D cross-correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        self.h + 2 * self.pad + 1 - self.kh
    }
    pub fn out_w(&self) -> usize {
        self.w + 2 * self.pad + 1 - self.kw
    }
    fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }
    fn out_plane(&self) -> usize {
        self.out_h() * self.out_w()
    }
    fn in_image(&self) -> usize {
        self.cin * self.h * self.w
    }
    fn out_image(&self) -> usize {
        self.cout * self.out_plane()
    }
    pub fn input_len(&self) -> usize {
        self.n * self.in_image()
    }
    pub fn output_len(&self) -> usize {
        self.n * self.out_image()
    }
    pub fn weight_len(&self) -> usize {
        self.cout * self.patch()
    }
}

/// Unfolds one image into `col`, laid out `[cin*kh*kw, out_h*out_w]`.
fn im2col(g: &ConvGeom, img: &[f64], col: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let pad = g.pad as isize;
    for c in 0..g.cin {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * oh * ow..(row + 1) * oh * ow];
                for oi in 0..oh {
                    let si = oi as isize + ki as isize - pad;
                    let line = &mut dst[oi * ow..(oi + 1) * ow];
                    if si < 0 || si >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[si as usize * g.w..(si as usize + 1) * g.w];
                    for (oj, v) in line.iter_mut().enumerate() {
                        let sj = oj as isize + kj as isize - pad;
                        *v = if sj < 0 || sj >= g.w as isize {
                            0.0
                        } else {
                            src[sj as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: folds `col` back, adding into `img`.
fn col2im(g: &ConvGeom, col: &[f64], img: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let pad = g.pad as isize;
    for c in 0..g.cin {
        let plane = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &col[row * oh * ow..(row + 1) * oh * ow];
                for oi in 0..oh {
                    let si = oi as isize + ki as isize - pad;
                    if si < 0 || si >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[si as usize * g.w..(si as usize + 1) * g.w];
                    for (oj, v) in src[oi * ow..(oi + 1) * ow].iter().enumerate() {
                        let sj = oj as isize + kj as isize - pad;
                        if sj >= 0 && sj < g.w as isize {
                            dst[sj as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` with explicit strides, row-major `c`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    debug_assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    // SAFETY: the debug assertions above spell out the extents dgemm reads
    // and writes; every caller sizes its buffers from the same ConvGeom or
    // matrix dimensions.
    unsafe {
        matrixmultiply::dgemm(
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
            n as isize,
            1,
        );
    }
}

/// Row-major `[m,k] x [k,n]` product, with either operand optionally
/// transposed in place.
pub(crate) fn matmul(
    a: &[f64],
    b: &[f64],
    m: usize,
    k: usize,
    n: usize,
    a_t: bool,
    b_t: bool,
) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    let sa = if a_t { (1, m) } else { (k, 1) };
    let sb = if b_t { (1, k) } else { (n, 1) };
    gemm(m, k, n, a, sa, b, sb, 0.0, &mut c);
    c
}

pub(crate) fn conv_forward(g: &ConvGeom, x: &[f64], w: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; g.output_len()];
    let mut col = vec![0.0; g.patch() * g.out_plane()];
    for i in 0..g.n {
        im2col(g, &x[i * g.in_image()..(i + 1) * g.in_image()], &mut col);
        let dst = &mut out[i * g.out_image()..(i + 1) * g.out_image()];
        gemm(g.cout, g.patch(), g.out_plane(), w, (g.patch(), 1), &col, (g.out_plane(), 1), 0.0, dst);
    }
    out
}

/// Gradient of `<conv(x, w), gy>` with respect to `x`.
pub(crate) fn conv_input_grad(g: &ConvGeom, gy: &[f64], w: &[f64]) -> Vec<f64> {
    let mut gx = vec![0.0; g.input_len()];
    let mut col = vec![0.0; g.patch() * g.out_plane()];
    for i in 0..g.n {
        let src = &gy[i * g.out_image()..(i + 1) * g.out_image()];
        // col = w^T [patch, cout] * gy_i [cout, plane]
        gemm(g.patch(), g.cout, g.out_plane(), w, (1, g.patch()), src, (g.out_plane(), 1), 0.0, &mut col);
        col2im(g, &col, &mut gx[i * g.in_image()..(i + 1) * g.in_image()]);
    }
    gx
}

/// Gradient of `<conv(x, w), gy>` with respect to `w`. Images are summed in
/// batch order.
pub(crate) fn conv_weight_grad(g: &ConvGeom, x: &[f64], gy: &[f64]) -> Vec<f64> {
    let mut gw = vec![0.0; g.weight_len()];
    let mut col = vec![0.0; g.patch() * g.out_plane()];
    for i in 0..g.n {
        im2col(g, &x[i * g.in_image()..(i + 1) * g.in_image()], &mut col);
        let src = &gy[i * g.out_image()..(i + 1) * g.out_image()];
        // gw += gy_i [cout, plane] * col^T [plane, patch]
        gemm(g.cout, g.out_plane(), g.patch(), src, (g.out_plane(), 1), &col, (1, g.out_plane()), 1.0, &mut gw);
    }
    gw
}
