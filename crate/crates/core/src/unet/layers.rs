//! Layer kernels on activations stored as `(channels, batch·h·w)` matrices,
//! column index `(b·h + y)·w + x`.

use std::fmt::Debug;
use std::iter::Sum;

use ndarray::{s, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};

/// Scalar type the network can run in.
pub trait Real:
    Float + FromPrimitive + LinalgScalar + ScalarOperand + Sum + Send + Sync + Debug + Default + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// A batch of feature maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Act<T> {
    pub b: usize,
    pub h: usize,
    pub w: usize,
    pub data: Array2<T>,
}

impl<T: Real> Act<T> {
    pub fn zeros(c: usize, b: usize, h: usize, w: usize) -> Self {
        Self {
            b,
            h,
            w,
            data: Array2::zeros((c, b * h * w)),
        }
    }

    pub fn channels(&self) -> usize {
        self.data.nrows()
    }

    fn like(&self, data: Array2<T>) -> Self {
        Self {
            b: self.b,
            h: self.h,
            w: self.w,
            data,
        }
    }
}

/// 2×2 patches with one row/column of zero padding at the top and left, so
/// output `(y, x)` sees inputs `(y-1..=y, x-1..=x)`.
fn im2col<T: Real>(x: &Act<T>) -> Array2<T> {
    let (c, b, h, w) = (x.channels(), x.b, x.h, x.w);
    let mut cols = Array2::zeros((4 * c, b * h * w));
    for ci in 0..c {
        let src = x.data.row(ci);
        let src = src.as_slice().unwrap();
        for k in 0..4 {
            let (ky, kx) = (k / 2, k % 2);
            let mut dst = cols.row_mut(4 * ci + k);
            let dst = dst.as_slice_mut().unwrap();
            for bi in 0..b {
                for y in 0..h {
                    let Some(sy) = (y + ky).checked_sub(1) else { continue };
                    let row = (bi * h + y) * w;
                    let srow = (bi * h + sy) * w;
                    for xx in (1 - kx)..w {
                        dst[row + xx] = src[srow + xx + kx - 1];
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &Array2<T>, c: usize, b: usize, h: usize, w: usize) -> Array2<T> {
    let mut out = Array2::zeros((c, b * h * w));
    for ci in 0..c {
        let mut dst = out.row_mut(ci);
        let dst = dst.as_slice_mut().unwrap();
        for k in 0..4 {
            let (ky, kx) = (k / 2, k % 2);
            let src = cols.row(4 * ci + k);
            let src = src.as_slice().unwrap();
            for bi in 0..b {
                for y in 0..h {
                    let Some(sy) = (y + ky).checked_sub(1) else { continue };
                    let row = (bi * h + y) * w;
                    let srow = (bi * h + sy) * w;
                    for xx in (1 - kx)..w {
                        dst[srow + xx + kx - 1] = dst[srow + xx + kx - 1] + src[row + xx];
                    }
                }
            }
        }
    }
    out
}

fn add_bias<T: Real>(data: &mut Array2<T>, bias: &[T]) {
    for (mut row, &bv) in data.axis_iter_mut(Axis(0)).zip(bias) {
        row.mapv_inplace(|v| v + bv);
    }
}

fn row_sums<T: Real>(a: &Array2<T>) -> Vec<T> {
    a.axis_iter(Axis(0)).map(|r| r.iter().copied().sum()).collect()
}

/// Same-size 2×2 convolution. `weight` is `(c_out, c_in·4)`. Returns the
/// output and the im2col buffer needed by the backward pass.
pub fn conv2x2<T: Real>(x: &Act<T>, weight: ArrayView2<T>, bias: &[T]) -> (Act<T>, Array2<T>) {
    let cols = im2col(x);
    let mut out = weight.dot(&cols);
    add_bias(&mut out, bias);
    (x.like(out), cols)
}

/// Gradients `(d input, d weight, d bias)`.
pub fn conv2x2_backward<T: Real>(
    dout: &Array2<T>,
    cols: &Array2<T>,
    weight: ArrayView2<T>,
    shape: (usize, usize, usize, usize),
) -> (Array2<T>, Array2<T>, Vec<T>) {
    let dw = dout.dot(&cols.t());
    let db = row_sums(dout);
    let dcols = weight.t().dot(dout);
    let (c, b, h, w) = shape;
    (col2im(&dcols, c, b, h, w), dw, db)
}

pub fn relu<T: Real>(a: &mut Act<T>) {
    a.data.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
}

/// Zero the gradient wherever the (post-activation) output was not positive.
pub fn relu_backward<T: Real>(dout: &mut Array2<T>, out: &Array2<T>) {
    ndarray::Zip::from(dout).and(out).for_each(|d, &o| {
        if o <= T::zero() {
            *d = T::zero();
        }
    });
}

/// 2×2 max pooling, stride 2. Also returns the flat argmax source column of
/// every output element (first maximum wins).
pub fn maxpool<T: Real>(x: &Act<T>) -> (Act<T>, Vec<u32>) {
    let (c, b, h, w) = (x.channels(), x.b, x.h, x.w);
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Array2::zeros((c, b * ho * wo));
    let mut arg = vec![0u32; c * b * ho * wo];
    for ci in 0..c {
        let src = x.data.row(ci);
        let src = src.as_slice().unwrap();
        for bi in 0..b {
            for y in 0..ho {
                for xx in 0..wo {
                    let base = (bi * h + 2 * y) * w + 2 * xx;
                    let mut best = base;
                    for cand in [base + 1, base + w, base + w + 1] {
                        if src[cand] > src[best] {
                            best = cand;
                        }
                    }
                    let o = (bi * ho + y) * wo + xx;
                    out[[ci, o]] = src[best];
                    arg[ci * b * ho * wo + o] = best as u32;
                }
            }
        }
    }
    (
        Act {
            b,
            h: ho,
            w: wo,
            data: out,
        },
        arg,
    )
}

pub fn maxpool_backward<T: Real>(dout: &Array2<T>, arg: &[u32], in_cols: usize) -> Array2<T> {
    let (c, n) = dout.dim();
    let mut dx = Array2::zeros((c, in_cols));
    for ci in 0..c {
        for o in 0..n {
            let src = arg[ci * n + o] as usize;
            dx[[ci, src]] = dx[[ci, src]] + dout[[ci, o]];
        }
    }
    dx
}

/// Transposed 2×2 convolution with stride 2 (exact doubling). `weight` is
/// `(c_in, c_out·4)`.
pub fn upconv<T: Real>(x: &Act<T>, weight: ArrayView2<T>, bias: &[T]) -> Act<T> {
    let (b, h, w) = (x.b, x.h, x.w);
    let co = weight.ncols() / 4;
    let t = weight.t().dot(&x.data); // (c_out·4, b·h·w)
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = Array2::zeros((co, b * ho * wo));
    for c in 0..co {
        let mut dst = out.row_mut(c);
        let dst = dst.as_slice_mut().unwrap();
        for k in 0..4 {
            let (ky, kx) = (k / 2, k % 2);
            let src = t.row(4 * c + k);
            for bi in 0..b {
                for y in 0..h {
                    for xx in 0..w {
                        dst[(bi * ho + 2 * y + ky) * wo + 2 * xx + kx] = src[(bi * h + y) * w + xx] + bias[c];
                    }
                }
            }
        }
    }
    Act {
        b,
        h: ho,
        w: wo,
        data: out,
    }
}

pub fn upconv_backward<T: Real>(
    dout: &Array2<T>,
    x: &Act<T>,
    weight: ArrayView2<T>,
) -> (Array2<T>, Array2<T>, Vec<T>) {
    let (b, h, w) = (x.b, x.h, x.w);
    let co = weight.ncols() / 4;
    let (ho, wo) = (2 * h, 2 * w);
    let mut dt = Array2::zeros((4 * co, b * h * w));
    for c in 0..co {
        let src = dout.row(c);
        for k in 0..4 {
            let (ky, kx) = (k / 2, k % 2);
            let mut dst = dt.row_mut(4 * c + k);
            for bi in 0..b {
                for y in 0..h {
                    for xx in 0..w {
                        dst[(bi * h + y) * w + xx] = src[(bi * ho + 2 * y + ky) * wo + 2 * xx + kx];
                    }
                }
            }
        }
    }
    let dw = x.data.dot(&dt.t());
    let dx = weight.dot(&dt);
    (dx, dw, row_sums(dout))
}

/// Pointwise convolution. `weight` is `(c_out, c_in)`.
pub fn conv1x1<T: Real>(x: &Act<T>, weight: ArrayView2<T>, bias: &[T]) -> Act<T> {
    let mut out = weight.dot(&x.data);
    add_bias(&mut out, bias);
    x.like(out)
}

pub fn conv1x1_backward<T: Real>(
    dout: &Array2<T>,
    x: &Act<T>,
    weight: ArrayView2<T>,
) -> (Array2<T>, Array2<T>, Vec<T>) {
    (weight.t().dot(dout), dout.dot(&x.data.t()), row_sums(dout))
}

/// Channel concatenation `[a; b]`.
pub fn concat<T: Real>(a: &Act<T>, b: &Act<T>) -> Act<T> {
    let ca = a.channels();
    let mut data = Array2::zeros((ca + b.channels(), a.data.ncols()));
    data.slice_mut(s![..ca, ..]).assign(&a.data);
    data.slice_mut(s![ca.., ..]).assign(&b.data);
    a.like(data)
}
