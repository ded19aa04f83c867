use crate::error::{invalid, AutogradError, Result};
use crate::gemm::gemm;
use crate::scalar::Scalar;
use crate::tape::{accumulate, Node, Op, Tape, Var};
use crate::tensor::{Shape, Tensor};

/// Resolved extents of one 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    /// Validates the operand shapes and derives the output extent
    /// `floor((H + 2p - kh) / stride) + 1` (same for the width).
    pub fn new(input: &Shape, kernel: &Shape, stride: usize, padding: usize) -> Result<Self> {
        let (i, k) = (input.dims(), kernel.dims());
        if i.len() != 4 || k.len() != 4 {
            return Err(invalid(
                "conv2d",
                format!("expected N×C×H×W input and F×C×kh×kw kernel, got {input} and {kernel}"),
            ));
        }
        if stride == 0 {
            return Err(invalid("conv2d", "stride must be positive"));
        }
        if i[1] != k[1] {
            return Err(AutogradError::ShapeMismatch {
                op: "conv2d",
                lhs: input.clone(),
                rhs: kernel.clone(),
            });
        }
        let (h, w) = (i[2] + 2 * padding, i[3] + 2 * padding);
        if k[2] > h || k[3] > w {
            return Err(invalid(
                "conv2d",
                format!(
                    "kernel {}×{} larger than padded input {h}×{w}",
                    k[2], k[3]
                ),
            ));
        }
        Ok(ConvGeometry {
            batch: i[0],
            in_channels: i[1],
            height: i[2],
            width: i[3],
            filters: k[0],
            kernel_h: k[2],
            kernel_w: k[3],
            stride,
            padding,
            out_h: (h - k[2]) / stride + 1,
            out_w: (w - k[3]) / stride + 1,
        })
    }

    fn patch(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Input coordinate for output index `o` and kernel offset `k`, if inside the image.
    #[inline]
    fn source(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let p = (o * self.stride + k).checked_sub(self.padding)?;
        (p < extent).then_some(p)
    }
}

/// Unrolls one sample `[C×H×W]` into `[C·kh·kw × Ho·Wo]`.
fn im2col<T: Scalar>(g: &ConvGeometry, x: &[T], cols: &mut [T]) {
    let p = g.positions();
    let mut row = 0;
    for c in 0..g.in_channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    match g.source(oy, ky, g.height) {
                        None => line.fill(T::zero()),
                        Some(iy) => {
                            let src = &plane[iy * g.width..(iy + 1) * g.width];
                            for (ox, v) in line.iter_mut().enumerate() {
                                *v = match g.source(ox, kx, g.width) {
                                    Some(ix) => src[ix],
                                    None => T::zero(),
                                };
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-adds `[C·kh·kw × Ho·Wo]` back into one sample `[C×H×W]`.
fn col2im<T: Scalar>(g: &ConvGeometry, cols: &[T], dx: &mut [T]) {
    let p = g.positions();
    let mut row = 0;
    for c in 0..g.in_channels {
        let plane = &mut dx[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let Some(iy) = g.source(oy, ky, g.height) else { continue };
                    let line = &src[oy * g.out_w..(oy + 1) * g.out_w];
                    for (ox, &v) in line.iter().enumerate() {
                        if let Some(ix) = g.source(ox, kx, g.width) {
                            plane[iy * g.width + ix] += v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    /// 2-D cross-correlation `N×C×H×W ⊛ F×C×kh×kw (+ bias[F]) → N×F×H'×W'`.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        self.check(input)?;
        self.check(kernel)?;
        self.check(bias)?;
        let geom = ConvGeometry::new(self.shape(input), self.shape(kernel), stride, padding)?;
        if self.shape(bias).dims() != [geom.filters] {
            return Err(AutogradError::ShapeMismatch {
                op: "conv2d bias",
                lhs: self.shape(bias).clone(),
                rhs: Shape::new([geom.filters]),
            });
        }
        let (patch, pos) = (geom.patch(), geom.positions());
        let keep_cols = self.needs_grad(kernel) || self.needs_grad(input);
        let sample_in = geom.in_channels * geom.height * geom.width;
        let sample_out = geom.filters * pos;

        let x = self.data(input);
        let w = self.data(kernel);
        let b = self.data(bias);
        let mut out = vec![T::zero(); geom.batch * sample_out];
        let mut saved = if keep_cols {
            vec![T::zero(); geom.batch * patch * pos]
        } else {
            Vec::new()
        };
        let mut scratch = if keep_cols { Vec::new() } else { vec![T::zero(); patch * pos] };

        for n in 0..geom.batch {
            let cols = if keep_cols {
                &mut saved[n * patch * pos..(n + 1) * patch * pos]
            } else {
                &mut scratch[..]
            };
            im2col(&geom, &x[n * sample_in..(n + 1) * sample_in], cols);
            let y = &mut out[n * sample_out..(n + 1) * sample_out];
            for (f, row) in y.chunks_exact_mut(pos).enumerate() {
                row.fill(b[f]);
            }
            gemm(false, false, geom.filters, pos, patch, w, cols, T::one(), y);
        }

        let out = Tensor::from_vec([geom.batch, geom.filters, geom.out_h, geom.out_w], out)?;
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                cols: saved,
            },
        ))
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn conv2d_backward<T: Scalar>(
    nodes: &[Node<T>],
    input: Var,
    kernel: Var,
    bias: Var,
    geom: &ConvGeometry,
    cols: &[T],
    g: &[T],
    adj: &mut [Option<Vec<T>>],
) {
    let (patch, pos) = (geom.patch(), geom.positions());
    let sample_out = geom.filters * pos;

    if nodes[bias.0].needs_grad {
        accumulate(adj, bias, geom.filters, |db| {
            for n in 0..geom.batch {
                let gy = &g[n * sample_out..(n + 1) * sample_out];
                for (f, row) in gy.chunks_exact(pos).enumerate() {
                    db[f] += row.iter().copied().sum::<T>();
                }
            }
        });
    }

    if nodes[kernel.0].needs_grad {
        accumulate(adj, kernel, geom.filters * patch, |dw| {
            for n in 0..geom.batch {
                let gy = &g[n * sample_out..(n + 1) * sample_out];
                let c = &cols[n * patch * pos..(n + 1) * patch * pos];
                // dW += dY[F×P] · colsᵀ[P×patch]
                gemm(false, true, geom.filters, patch, pos, gy, c, T::one(), dw);
            }
        });
    }

    if nodes[input.0].needs_grad {
        let w = nodes[kernel.0].value.data();
        let sample_in = geom.in_channels * geom.height * geom.width;
        let mut dcols = vec![T::zero(); patch * pos];
        accumulate(adj, input, geom.batch * sample_in, |dx| {
            for n in 0..geom.batch {
                let gy = &g[n * sample_out..(n + 1) * sample_out];
                // dcols[patch×P] = Wᵀ[patch×F] · dY[F×P]
                gemm(true, false, patch, pos, geom.filters, w, gy, T::zero(), &mut dcols);
                col2im(geom, &dcols, &mut dx[n * sample_in..(n + 1) * sample_in]);
            }
        });
    }
}
