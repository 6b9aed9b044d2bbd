use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Conv2dParams {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2dParams {
    pub fn patch_len(&self) -> usize {
        self.in_ch * self.kh * self.kw
    }

    pub fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match (
            conv_out_dim(h, self.kh, self.stride, self.pad),
            conv_out_dim(w, self.kw, self.stride, self.pad),
        ) {
            (Some(ho), Some(wo)) => Ok((ho, wo)),
            _ => Err(Error::Shape {
                shape: vec![self.in_ch, h, w],
                reason: "kernel larger than padded input",
            }),
        }
    }
}

/// `floor((n + 2 pad - k) / stride) + 1`, or None when the kernel does not fit.
pub fn conv_out_dim(n: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = n + 2 * pad;
    if stride == 0 || k == 0 || k > padded {
        return None;
    }
    Some((padded - k) / stride + 1)
}

fn chw(x: &Tensor, conv: &Conv2dParams) -> Result<(usize, usize, usize)> {
    match x.shape()[..] {
        [c, h, w] if c == conv.in_ch => Ok((c, h, w)),
        _ => Err(Error::dim("im2col", x.shape(), &[conv.in_ch, 0, 0])),
    }
}

/// Writes the receptive fields of one `[C, H, W]` sample into columns
/// `col_offset..col_offset + Ho*Wo` of a matrix with `ncols` columns.
fn fill_columns(
    src: &[f32],
    (c, h, w): (usize, usize, usize),
    conv: &Conv2dParams,
    (ho, wo): (usize, usize),
    dst: &mut [f32],
    ncols: usize,
    col_offset: usize,
) {
    for ch in 0..c {
        for ki in 0..conv.kh {
            for kj in 0..conv.kw {
                let row = (ch * conv.kh + ki) * conv.kw + kj;
                let out_row = &mut dst[row * ncols + col_offset..row * ncols + col_offset + ho * wo];
                for oy in 0..ho {
                    let y = (oy * conv.stride + ki) as isize - conv.pad as isize;
                    for ox in 0..wo {
                        let xx = (ox * conv.stride + kj) as isize - conv.pad as isize;
                        out_row[oy * wo + ox] = if y >= 0 && (y as usize) < h && xx >= 0 && (xx as usize) < w {
                            src[(ch * h + y as usize) * w + xx as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

/// Lowers a `[C, H, W]` input to a `[C*kh*kw, Ho*Wo]` matrix.
///
/// Rows are ordered channel-major, then kernel row, then kernel column; column
/// `j` is output position `(j / Wo, j % Wo)`. Padding is materialized as zeros.
pub fn im2col(x: &Tensor, conv: &Conv2dParams) -> Result<Tensor> {
    let dims = chw(x, conv)?;
    let (ho, wo) = conv.out_hw(dims.1, dims.2)?;
    let ncols = ho * wo;
    let mut out = vec![0.0; conv.patch_len() * ncols];
    fill_columns(x.data(), dims, conv, (ho, wo), &mut out, ncols, 0);
    Ok(Tensor::new(&[conv.patch_len(), ncols], out)?.with_dtype(x.dtype()))
}

/// [`im2col`] over a `[B, C, H, W]` batch; sample `b` occupies columns
/// `b*Ho*Wo .. (b+1)*Ho*Wo`.
pub fn im2col_batch(x: &Tensor, conv: &Conv2dParams) -> Result<Tensor> {
    let [b, c, h, w] = x.shape()[..] else {
        return Err(Error::dim("im2col_batch", x.shape(), &[0, conv.in_ch, 0, 0]));
    };
    if c != conv.in_ch {
        return Err(Error::dim("im2col_batch", x.shape(), &[b, conv.in_ch, h, w]));
    }
    let (ho, wo) = conv.out_hw(h, w)?;
    let ncols = b * ho * wo;
    let mut out = vec![0.0; conv.patch_len() * ncols];
    let per = c * h * w;
    for s in 0..b {
        fill_columns(
            &x.data()[s * per..(s + 1) * per],
            (c, h, w),
            conv,
            (ho, wo),
            &mut out,
            ncols,
            s * ho * wo,
        );
    }
    Ok(Tensor::new(&[conv.patch_len(), ncols], out)?.with_dtype(x.dtype()))
}

/// Adjoint of [`im2col_batch`]: scatters column gradients back onto a
/// `[B, C, H, W]` input gradient.
pub fn col2im(cols: &Tensor, conv: &Conv2dParams, input_shape: &[usize]) -> Result<Tensor> {
    let [b, c, h, w] = input_shape[..] else {
        return Err(Error::dim("col2im", input_shape, &[0, conv.in_ch, 0, 0]));
    };
    let (ho, wo) = conv.out_hw(h, w)?;
    let ncols = b * ho * wo;
    if cols.shape() != [conv.patch_len(), ncols] {
        return Err(Error::dim("col2im", cols.shape(), &[conv.patch_len(), ncols]));
    }
    let mut out = vec![0.0f32; b * c * h * w];
    let src = cols.data();
    for s in 0..b {
        for ch in 0..c {
            for ki in 0..conv.kh {
                for kj in 0..conv.kw {
                    let row = (ch * conv.kh + ki) * conv.kw + kj;
                    for oy in 0..ho {
                        let y = (oy * conv.stride + ki) as isize - conv.pad as isize;
                        if y < 0 || y as usize >= h {
                            continue;
                        }
                        for ox in 0..wo {
                            let xx = (ox * conv.stride + kj) as isize - conv.pad as isize;
                            if xx < 0 || xx as usize >= w {
                                continue;
                            }
                            out[((s * c + ch) * h + y as usize) * w + xx as usize] +=
                                src[row * ncols + s * ho * wo + oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(input_shape, out)
}

/// Textbook cross-correlation of `x [C, H, W]` with `w [F, C, kh, kw]`,
/// zero padding, no kernel flip. Returns `[F, Ho, Wo]`.
pub fn conv2d_direct(x: &Tensor, w: &Tensor, conv: &Conv2dParams) -> Result<Tensor> {
    let (c, h, wd) = chw(x, conv)?;
    if w.shape() != [conv.out_ch, conv.in_ch, conv.kh, conv.kw] {
        return Err(Error::dim(
            "conv2d_direct",
            w.shape(),
            &[conv.out_ch, conv.in_ch, conv.kh, conv.kw],
        ));
    }
    let (ho, wo) = conv.out_hw(h, wd)?;
    let (xd, wdata) = (x.data(), w.data());
    let mut out: Vec<f32> = vec![0.0; conv.out_ch * ho * wo];
    for f in 0..conv.out_ch {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = 0.0f32;
                for ch in 0..c {
                    for ki in 0..conv.kh {
                        let y = (oy * conv.stride + ki) as isize - conv.pad as isize;
                        if y < 0 || y as usize >= h {
                            continue;
                        }
                        for kj in 0..conv.kw {
                            let xx = (ox * conv.stride + kj) as isize - conv.pad as isize;
                            if xx < 0 || xx as usize >= wd {
                                continue;
                            }
                            acc += wdata[((f * c + ch) * conv.kh + ki) * conv.kw + kj]
                                * xd[(ch * h + y as usize) * wd + xx as usize];
                        }
                    }
                }
                out[(f * ho + oy) * wo + ox] = acc;
            }
        }
    }
    Tensor::new(&[conv.out_ch, ho, wo], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::matmul;

    fn p(in_ch: usize, out_ch: usize, k: usize, stride: usize, pad: usize) -> Conv2dParams {
        Conv2dParams {
            in_ch,
            out_ch,
            kh: k,
            kw: k,
            stride,
            pad,
        }
    }

    #[test]
    fn one_by_one_is_flatten() {
        let x = Tensor::new(&[1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        let cols = im2col(&x, &p(1, 1, 1, 1, 0)).unwrap();
        assert_eq!(cols.shape(), &[1, 4]);
        assert_eq!(cols.data(), &[1., 2., 3., 4.]);
    }

    #[test]
    fn two_by_two_on_three_by_three() {
        let x = Tensor::new(&[1, 3, 3], (1..=9).map(|v| v as f32).collect()).unwrap();
        let cols = im2col(&x, &p(1, 1, 2, 1, 0)).unwrap();
        assert_eq!(cols.shape(), &[4, 4]);
        let col = |j: usize| -> Vec<f32> { (0..4).map(|r| cols.data()[r * 4 + j]).collect() };
        assert_eq!(col(0), vec![1., 2., 4., 5.]);
        assert_eq!(col(1), vec![2., 3., 5., 6.]);
        assert_eq!(col(2), vec![4., 5., 7., 8.]);
        assert_eq!(col(3), vec![5., 6., 8., 9.]);
    }

    #[test]
    fn corner_padding_is_zero() {
        let x = Tensor::new(&[1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        // 3x3 kernel, pad 1: output (0,0) sees the top-left padded border.
        let cols = im2col(&x, &p(1, 1, 3, 1, 1)).unwrap();
        assert_eq!(cols.shape(), &[9, 4]);
        let col0: Vec<f32> = (0..9).map(|r| cols.data()[r * 4]).collect();
        assert_eq!(col0, vec![0., 0., 0., 0., 1., 2., 0., 3., 4.]);
        // Direct-conv oracle with a kernel that only reads the padding row.
        let mut k = vec![0.0; 9];
        k[0] = 1.0;
        k[1] = 1.0;
        k[2] = 1.0;
        let w = Tensor::new(&[1, 1, 3, 3], k).unwrap();
        let direct = conv2d_direct(&x, &w, &p(1, 1, 3, 1, 1)).unwrap();
        assert_eq!(direct.data()[0], 0.0);
    }

    #[test]
    fn kernel_too_large() {
        let x = Tensor::zeros(&[1, 2, 2]).unwrap();
        assert!(im2col(&x, &p(1, 1, 3, 1, 0)).is_err());
        assert!(im2col(&x, &p(2, 1, 1, 1, 0)).is_err());
    }

    #[test]
    fn direct_examples() {
        let x = Tensor::new(&[1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        let id = Tensor::new(&[1, 1, 1, 1], vec![1.0]).unwrap();
        assert_eq!(conv2d_direct(&x, &id, &p(1, 1, 1, 1, 0)).unwrap().data(), x.data());
        let k = Tensor::new(&[1, 1, 2, 2], vec![1., 0., 0., 1.]).unwrap();
        assert_eq!(conv2d_direct(&x, &k, &p(1, 1, 2, 1, 0)).unwrap().data(), &[5.0]);
        assert!(conv2d_direct(&x, &k, &p(1, 2, 2, 1, 0)).is_err());
    }

    #[test]
    fn im2col_matmul_matches_direct() {
        let c = p(2, 3, 3, 2, 1);
        let x = Tensor::from_fn(&[2, 5, 4], |i| ((i * 7 % 11) as f32 - 5.0) * 0.3).unwrap();
        let w = Tensor::from_fn(&[3, 2, 3, 3], |i| ((i * 5 % 13) as f32 - 6.0) * 0.1).unwrap();
        let cols = im2col(&x, &c).unwrap();
        let wf = w.clone().reshape(&[3, 18]).unwrap();
        let y = matmul(&wf, &cols).unwrap();
        let d = conv2d_direct(&x, &w, &c).unwrap();
        for (a, b) in y.data().iter().zip(d.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), g> == <x, col2im(g)>
        let c = p(2, 1, 3, 2, 1);
        let x = Tensor::from_fn(&[2, 2, 5, 5], |i| (i % 7) as f32 - 3.0).unwrap();
        let cols = im2col_batch(&x, &c).unwrap();
        let g = Tensor::from_fn(cols.shape(), |i| (i % 5) as f32 * 0.5 - 1.0).unwrap();
        let back = col2im(&g, &c, x.shape()).unwrap();
        let lhs: f64 = cols.data().iter().zip(g.data()).map(|(a, b)| (*a * *b) as f64).sum();
        let rhs: f64 = x.data().iter().zip(back.data()).map(|(a, b)| (*a * *b) as f64).sum();
        assert!((lhs - rhs).abs() < 1e-6);
    }
}
