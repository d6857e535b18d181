//! im2col / col2im and a direct loop convolution used as a reference.
//!
//! The column matrix has one row per `(channel, ky, kx)` triple, in that
//! order, and one column per output position `(oy, ox)`. A conv layer's GEMM
//! weight matrix (`out_channels x in_channels*kh*kw`) multiplies it directly.

use crate::tensor::Matrix;

/// Geometry of a 2-D convolution over a `channels x height x width` input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel_h) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel_w) / self.stride + 1
    }

    /// Rows of the column matrix.
    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel_h * self.kernel_w
    }

    /// Maps an output coordinate plus kernel offset to an input index,
    /// `None` inside the zero padding.
    #[inline]
    fn source(&self, c: usize, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky).checked_sub(self.padding)?;
        let ix = (ox * self.stride + kx).checked_sub(self.padding)?;
        if iy >= self.height || ix >= self.width {
            return None;
        }
        Some((c * self.height + iy) * self.width + ix)
    }
}

pub fn im2col(input: &[f64], g: &ConvGeometry) -> Matrix {
    debug_assert_eq!(input.len(), g.channels * g.height * g.width);
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut cols = Matrix::zeros(g.patch_len(), oh * ow);
    for c in 0..g.channels {
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let r = (c * g.kernel_h + ky) * g.kernel_w + kx;
                let row = cols.row_mut(r);
                for oy in 0..oh {
                    for ox in 0..ow {
                        if let Some(src) = g.source(c, oy, ox, ky, kx) {
                            row[oy * ow + ox] = input[src];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column-matrix gradients back onto the
/// input, summing overlapping patches.
pub fn col2im(cols: &Matrix, g: &ConvGeometry) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut out = vec![0.0; g.channels * g.height * g.width];
    for c in 0..g.channels {
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let r = (c * g.kernel_h + ky) * g.kernel_w + kx;
                let row = cols.row(r);
                for oy in 0..oh {
                    for ox in 0..ow {
                        if let Some(dst) = g.source(c, oy, ox, ky, kx) {
                            out[dst] += row[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Straightforward nested-loop convolution; output laid out
/// `out_channels x out_h x out_w`.
pub fn conv2d_direct(input: &[f64], weight: &Matrix, bias: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut out = vec![0.0; weight.rows() * oh * ow];
    for o in 0..weight.rows() {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias[o];
                for c in 0..g.channels {
                    for ky in 0..g.kernel_h {
                        for kx in 0..g.kernel_w {
                            let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                            let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                            if iy < 0 || ix < 0 || iy >= g.height as isize || ix >= g.width as isize {
                                continue;
                            }
                            let w = weight.get(o, (c * g.kernel_h + ky) * g.kernel_w + kx);
                            acc += w * input[(c * g.height + iy as usize) * g.width + ix as usize];
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = acc;
            }
        }
    }
    out
}
