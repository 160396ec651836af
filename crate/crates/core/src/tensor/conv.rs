//! Bias-free 2-D cross-correlation via im2col + GEMM.

use super::array::Tensor;
use super::element::Element;
use super::error::TensorError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(
        input: &[usize],
        kernel: &[usize],
        stride: usize,
        pad: usize,
    ) -> Result<Self, TensorError> {
        let (&[n, c, h, w], &[o, ci, kh, kw]) = (input, kernel) else {
            let bad = if input.len() != 4 { input } else { kernel };
            return Err(TensorError::Rank {
                op: "conv2d",
                expected: 4,
                shape: bad.to_vec(),
            });
        };
        if ci != c {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: input.to_vec(),
                rhs: kernel.to_vec(),
            });
        }
        let out = |extent: usize, k: usize| {
            let padded = extent + 2 * pad;
            if stride == 0 || padded < k {
                return Err(TensorError::ConvGeometry {
                    extent,
                    kernel: k,
                    stride,
                    pad,
                });
            }
            Ok((padded - k) / stride + 1)
        };
        Ok(Self {
            n,
            c,
            h,
            w,
            o,
            kh,
            kw,
            stride,
            pad,
            ho: out(h, kh)?,
            wo: out(w, kw)?,
        })
    }

    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.n, self.o, self.ho, self.wo]
    }
}

/// Unfold one sample (C×H×W) into a (C·Kh·Kw)×(Ho·Wo) column matrix.
fn im2col<T: Element>(g: &ConvGeom, sample: &[T], cols: &mut [T]) {
    let positions = g.positions();
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * positions..(row + 1) * positions];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &sample[(c * g.h + iy as usize) * g.w..][..g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
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

/// Scatter-add a column matrix back onto one sample's gradient.
fn col2im<T: Element>(g: &ConvGeom, cols: &[T], sample_grad: &mut [T]) {
    let positions = g.positions();
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * positions..(row + 1) * positions];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut sample_grad[(c * g.h + iy as usize) * g.w..][..g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn forward<T: Element>(
    g: &ConvGeom,
    input: &Tensor<T>,
    kernel: &Tensor<T>,
) -> Tensor<T> {
    let (patch, positions) = (g.patch(), g.positions());
    let in_len = g.c * g.h * g.w;
    let out_len = g.o * positions;
    let mut out = vec![T::zero(); g.n * out_len];
    let mut cols = vec![T::zero(); patch * positions];
    for n in 0..g.n {
        im2col(g, &input.data()[n * in_len..(n + 1) * in_len], &mut cols);
        T::gemm(
            g.o,
            patch,
            positions,
            T::one(),
            kernel.data(),
            (patch as isize, 1),
            &cols,
            (positions as isize, 1),
            T::zero(),
            &mut out[n * out_len..(n + 1) * out_len],
            (positions as isize, 1),
        );
    }
    Tensor::new(&g.output_shape(), out).expect("conv2d output shape")
}

/// Returns (d input, d kernel); either half is skipped when not requested.
pub(crate) fn backward<T: Element>(
    g: &ConvGeom,
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &[T],
    want_input: bool,
    want_kernel: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let (patch, positions) = (g.patch(), g.positions());
    let in_len = g.c * g.h * g.w;
    let out_len = g.o * positions;
    let mut d_input = want_input.then(|| vec![T::zero(); g.n * in_len]);
    let mut d_kernel = want_kernel.then(|| vec![T::zero(); g.o * patch]);
    let mut cols = vec![T::zero(); patch * positions];
    for n in 0..g.n {
        let dout = &grad_out[n * out_len..(n + 1) * out_len];
        if let Some(dk) = d_kernel.as_mut() {
            im2col(g, &input.data()[n * in_len..(n + 1) * in_len], &mut cols);
            // dK[O, P] += dOut[O, HW] · cols^T[HW, P]
            T::gemm(
                g.o,
                positions,
                patch,
                T::one(),
                dout,
                (positions as isize, 1),
                &cols,
                (1, positions as isize),
                T::one(),
                dk,
                (patch as isize, 1),
            );
        }
        if let Some(dx) = d_input.as_mut() {
            // dcols[P, HW] = K^T[P, O] · dOut[O, HW]
            T::gemm(
                patch,
                g.o,
                positions,
                T::one(),
                kernel.data(),
                (1, patch as isize),
                dout,
                (positions as isize, 1),
                T::zero(),
                &mut cols,
                (positions as isize, 1),
            );
            col2im(g, &cols, &mut dx[n * in_len..(n + 1) * in_len]);
        }
    }
    (d_input, d_kernel)
}
