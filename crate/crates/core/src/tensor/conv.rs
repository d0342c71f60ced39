//! im2col cross-correlation kernels.

use super::Element;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    fn in_sample(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    fn is_pointwise(&self) -> bool {
        self.kernel_h == 1 && self.kernel_w == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Unfold one sample into `[Cin*kh*kw, out_h*out_w]`.
fn im2col<T: Element>(g: &ConvGeometry, input: &[T], cols: &mut [T]) {
    let plane = g.out_plane();
    let pad = g.padding as isize;
    for c in 0..g.in_channels {
        let channel = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - pad;
                    let out_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &channel[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, slot) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - pad;
                        *slot = if ix < 0 || ix >= g.width as isize {
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

/// Scatter-add columns back onto one sample's input gradient.
fn col2im<T: Element>(g: &ConvGeometry, cols: &[T], grad_input: &mut [T]) {
    let plane = g.out_plane();
    let pad = g.padding as isize;
    for c in 0..g.in_channels {
        let channel = &mut grad_input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - pad;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut channel[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kj) as isize - pad;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] = dst[ix as usize] + src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn forward<T: Element>(g: &ConvGeometry, input: &[T], kernel: &[T], out: &mut [T]) {
    let plane = g.out_plane();
    let patch = g.patch_len();
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); patch * plane]
    };
    for n in 0..g.batch {
        let x = &input[n * g.in_sample()..(n + 1) * g.in_sample()];
        let y = &mut out[n * g.out_channels * plane..(n + 1) * g.out_channels * plane];
        let cols_ref: &[T] = if g.is_pointwise() {
            x
        } else {
            im2col(g, x, &mut cols);
            &cols
        };
        T::gemm(g.out_channels, patch, plane, kernel, false, cols_ref, false, y, false);
    }
}

/// Returns `(grad_input, grad_kernel)`; either may be skipped.
pub(crate) fn backward<T: Element>(
    g: &ConvGeometry,
    input: &[T],
    kernel: &[T],
    grad_out: &[T],
    mut grad_input: Option<&mut [T]>,
    mut grad_kernel: Option<&mut [T]>,
) {
    let plane = g.out_plane();
    let patch = g.patch_len();
    let mut cols = vec![T::zero(); patch * plane];
    let mut dcols = vec![T::zero(); patch * plane];
    for n in 0..g.batch {
        let x = &input[n * g.in_sample()..(n + 1) * g.in_sample()];
        let dy = &grad_out[n * g.out_channels * plane..(n + 1) * g.out_channels * plane];
        if let Some(dk) = grad_kernel.as_deref_mut() {
            let cols_ref: &[T] = if g.is_pointwise() {
                x
            } else {
                im2col(g, x, &mut cols);
                &cols
            };
            T::gemm(g.out_channels, plane, patch, dy, false, cols_ref, true, dk, true);
        }
        if let Some(dx) = grad_input.as_deref_mut() {
            let dx = &mut dx[n * g.in_sample()..(n + 1) * g.in_sample()];
            if g.is_pointwise() {
                T::gemm(patch, g.out_channels, plane, kernel, true, dy, false, dx, true);
            } else {
                T::gemm(patch, g.out_channels, plane, kernel, true, dy, false, &mut dcols, false);
                col2im(g, &dcols, dx);
            }
        }
    }
}
