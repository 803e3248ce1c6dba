//! Dense 4-D `f64` tensors in NCHW layout and the numeric kernels the
//! autograd layer is built from.
//!
//! Every tensor is exactly four-dimensional. Scalars are `[1, 1, 1, 1]`,
//! convolution weights are `[out, in, kh, kw]` and biases `[1, c, 1, 1]`.

use std::fmt;
use std::ops::Range;

pub type Shape = [usize; 4];

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

pub fn numel(shape: Shape) -> usize {
    shape.iter().product()
}

fn strides(shape: Shape) -> [usize; 4] {
    [
        shape[1] * shape[2] * shape[3],
        shape[2] * shape[3],
        shape[3],
        1,
    ]
}

/// Result shape of broadcasting `a` against `b`; each axis must match or be 1.
pub fn broadcast_shape(a: Shape, b: Shape) -> Option<Shape> {
    let mut out = [0; 4];
    for d in 0..4 {
        out[d] = match (a[d], b[d]) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Self {
        assert_eq!(
            numel(shape),
            data.len(),
            "shape {shape:?} does not match data length {}",
            data.len()
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor::full(shape, 0.0)
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Tensor {
            shape,
            data: vec![value; numel(shape)],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::full([1, 1, 1, 1], value)
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut([usize; 4]) -> f64) -> Self {
        let mut data = Vec::with_capacity(numel(shape));
        for n in 0..shape[0] {
            for c in 0..shape[1] {
                for y in 0..shape[2] {
                    for x in 0..shape[3] {
                        data.push(f([n, c, y, x]));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.offset(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f64) {
        let o = self.offset(n, c, y, x);
        self.data[o] = v;
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(mut self, shape: Shape) -> Tensor {
        assert_eq!(numel(shape), self.data.len());
        self.shape = shape;
        self
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise binary op with broadcasting over unit axes.
    pub fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        if self.shape == other.shape {
            return Tensor {
                shape: self.shape,
                data: self
                    .data
                    .iter()
                    .zip(&other.data)
                    .map(|(&a, &b)| f(a, b))
                    .collect(),
            };
        }
        let out_shape = broadcast_shape(self.shape, other.shape).unwrap_or_else(|| {
            panic!(
                "cannot broadcast {:?} against {:?}",
                self.shape, other.shape
            )
        });
        let sa = broadcast_strides(self.shape);
        let sb = broadcast_strides(other.shape);
        let mut data = Vec::with_capacity(numel(out_shape));
        for n in 0..out_shape[0] {
            for c in 0..out_shape[1] {
                for y in 0..out_shape[2] {
                    let ba = n * sa[0] + c * sa[1] + y * sa[2];
                    let bb = n * sb[0] + c * sb[1] + y * sb[2];
                    for x in 0..out_shape[3] {
                        data.push(f(self.data[ba + x * sa[3]], other.data[bb + x * sb[3]]));
                    }
                }
            }
        }
        Tensor {
            shape: out_shape,
            data,
        }
    }

    /// Sums over every axis where `target` is 1 and `self` is not.
    pub fn sum_to(&self, target: Shape) -> Tensor {
        if target == self.shape {
            return self.clone();
        }
        for d in 0..4 {
            assert!(
                target[d] == self.shape[d] || target[d] == 1,
                "cannot sum {:?} to {:?}",
                self.shape,
                target
            );
        }
        let st = broadcast_strides_for(target, self.shape);
        let mut out = vec![0.0; numel(target)];
        let s = self.shape;
        let mut i = 0;
        for n in 0..s[0] {
            for c in 0..s[1] {
                for y in 0..s[2] {
                    let base = n * st[0] + c * st[1] + y * st[2];
                    if st[3] == 0 {
                        let row: f64 = self.data[i..i + s[3]].iter().sum();
                        out[base] += row;
                    } else {
                        for x in 0..s[3] {
                            out[base + x] += self.data[i + x];
                        }
                    }
                    i += s[3];
                }
            }
        }
        Tensor::new(target, out)
    }

    pub fn broadcast_to(&self, target: Shape) -> Tensor {
        if target == self.shape {
            return self.clone();
        }
        let zeros = Tensor::zeros(target);
        zeros.zip_with(self, |_, b| b)
    }

    /// Zero-filled spatial window: rows `top..top+h`, columns `left..left+w`,
    /// where the offsets may be negative or run past the border.
    pub fn window(&self, top: isize, left: isize, h: usize, w: usize) -> Tensor {
        let [n, c, sh, sw] = self.shape;
        let mut out = Tensor::zeros([n, c, h, w]);
        let x0 = left.max(0);
        let x1 = (left + w as isize).min(sw as isize);
        if x1 <= x0 {
            return out;
        }
        let span = (x1 - x0) as usize;
        for ni in 0..n {
            for ci in 0..c {
                for oy in 0..h {
                    let sy = top + oy as isize;
                    if sy < 0 || sy >= sh as isize {
                        continue;
                    }
                    let src = self.offset(ni, ci, sy as usize, x0 as usize);
                    let dst = out.offset(ni, ci, oy, (x0 - left) as usize);
                    out.data[dst..dst + span].copy_from_slice(&self.data[src..src + span]);
                }
            }
        }
        out
    }

    /// Copies `patch` into this tensor with its corner at `(top, left)`.
    pub fn paste(&mut self, patch: &Tensor, top: usize, left: usize) {
        let [n, c, ph, pw] = patch.shape;
        let [n2, c2, h, w] = self.shape;
        assert!(n == n2 && c == c2 && top + ph <= h && left + pw <= w, "paste out of bounds");
        for ni in 0..n {
            for ci in 0..c {
                for y in 0..ph {
                    let src = patch.offset(ni, ci, y, 0);
                    let dst = self.offset(ni, ci, top + y, left);
                    self.data[dst..dst + pw].copy_from_slice(&patch.data[src..src + pw]);
                }
            }
        }
    }

    /// Concatenates tensors along the batch axis.
    pub fn stack(items: &[Tensor]) -> Tensor {
        assert!(!items.is_empty());
        let [_, c, h, w] = items[0].shape;
        let mut data = Vec::with_capacity(items.iter().map(Tensor::len).sum());
        let mut n = 0;
        for t in items {
            assert_eq!(&t.shape[1..], &[c, h, w], "stack shape mismatch");
            data.extend_from_slice(&t.data);
            n += t.shape[0];
        }
        Tensor::new([n, c, h, w], data)
    }

    /// Batch element `i` as a `[1, c, h, w]` tensor.
    pub fn batch_item(&self, i: usize) -> Tensor {
        let per = numel([1, self.shape[1], self.shape[2], self.shape[3]]);
        Tensor::new(
            [1, self.shape[1], self.shape[2], self.shape[3]],
            self.data[i * per..(i + 1) * per].to_vec(),
        )
    }

    pub fn add_assign_scaled(&mut self, other: &Tensor, scale: f64) {
        assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }
}

fn broadcast_strides(shape: Shape) -> [usize; 4] {
    let s = strides(shape);
    let mut out = [0; 4];
    for d in 0..4 {
        out[d] = if shape[d] == 1 { 0 } else { s[d] };
    }
    out
}

fn broadcast_strides_for(small: Shape, big: Shape) -> [usize; 4] {
    let s = strides(small);
    let mut out = [0; 4];
    for d in 0..4 {
        out[d] = if small[d] == 1 && big[d] != 1 { 0 } else { s[d] };
    }
    out
}

/// `c = alpha * a * b + beta * c` for row-major matrices addressed by strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    gemm_rs(m, k, n, a, (rsa, csa), b, (rsb, csb), beta, c, n);
}

/// [`gemm`] with `c` rows `rsc` elements apart.
#[allow(clippy::too_many_arguments)]
fn gemm_rs(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    assert!(m == 0 || n == 0 || c.len() >= (m - 1) * rsc + n);
    // SAFETY: every matrix is a live slice, and the extent implied by the
    // dimensions and strides lies within it (checked by the callers' shapes).
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
            rsc as isize,
            1,
        );
    }
}

/// Scratch budget (in elements) for one im2col block.
const COLS_BUDGET: usize = 1 << 21;

/// Output rows per im2col block so the scratch stays within [`COLS_BUDGET`].
fn row_block(r: usize, oh: usize, ow: usize) -> usize {
    (COLS_BUDGET / (r * ow).max(1)).clamp(1, oh.max(1))
}

/// Columns for output rows `ys`, laid out `[c*kh*kw, ys.len()*ow]`.
#[allow(clippy::too_many_arguments)]
fn im2col(
    xs: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ys: Range<usize>,
    ow: usize,
    cols: &mut [f64],
) {
    let p = ys.len() * ow;
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for (j, y) in ys.clone().enumerate() {
                    let src = ci * h * w + (y + ky) * w + kx;
                    dst[j * ow..(j + 1) * ow].copy_from_slice(&xs[src..src + ow]);
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im_add(
    cols: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ys: Range<usize>,
    ow: usize,
    xs: &mut [f64],
) {
    let p = ys.len() * ow;
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                for (j, y) in ys.clone().enumerate() {
                    let dst = ci * h * w + (y + ky) * w + kx;
                    for (d, s) in xs[dst..dst + ow].iter_mut().zip(&src[j * ow..(j + 1) * ow]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

fn blocks(oh: usize, rb: usize) -> impl Iterator<Item = Range<usize>> {
    (0..oh).step_by(rb).map(move |y| y..(y + rb).min(oh))
}

/// Unpadded stride-1 cross-correlation: `[n,c,h,w] * [o,c,kh,kw] -> [n,o,h-kh+1,w-kw+1]`.
pub fn conv2d(x: &Tensor, w: &Tensor) -> Tensor {
    let [n, c, h, wd] = x.shape;
    let [o, c2, kh, kw] = w.shape;
    assert_eq!(c, c2, "conv2d channel mismatch: input {c}, weight {c2}");
    assert!(h >= kh && wd >= kw, "conv2d input {h}x{wd} smaller than kernel");
    let (oh, ow) = (h - kh + 1, wd - kw + 1);
    let r = c * kh * kw;
    let p = oh * ow;
    let mut out = Tensor::zeros([n, o, oh, ow]);
    let in_per = c * h * wd;
    if kh == 1 && kw == 1 {
        for s in 0..n {
            let xs = &x.data[s * in_per..(s + 1) * in_per];
            let dst = &mut out.data[s * o * p..(s + 1) * o * p];
            gemm(o, r, p, &w.data, (r as isize, 1), xs, (p as isize, 1), 0.0, dst);
        }
        return out;
    }
    let rb = row_block(r, oh, ow);
    let mut cols = vec![0.0; r * rb * ow];
    for s in 0..n {
        let xs = &x.data[s * in_per..(s + 1) * in_per];
        for ys in blocks(oh, rb) {
            let q = ys.len() * ow;
            im2col(xs, c, h, wd, kh, kw, ys.clone(), ow, &mut cols);
            let dst = &mut out.data[s * o * p + ys.start * ow..(s + 1) * o * p];
            gemm_rs(o, r, q, &w.data, (r as isize, 1), &cols[..r * q], (q as isize, 1), 0.0, dst, p);
        }
    }
    out
}

/// Gradient of [`conv2d`] with respect to its input, given the output gradient.
pub fn conv2d_input_grad(g: &Tensor, w: &Tensor, in_hw: (usize, usize)) -> Tensor {
    let [n, o, oh, ow] = g.shape;
    let [o2, c, kh, kw] = w.shape;
    assert_eq!(o, o2, "conv2d_input_grad channel mismatch");
    let (h, wd) = in_hw;
    assert_eq!((oh, ow), (h + 1 - kh, wd + 1 - kw), "conv2d_input_grad geometry");
    let r = c * kh * kw;
    let p = oh * ow;
    let mut out = Tensor::zeros([n, c, h, wd]);
    let in_per = c * h * wd;
    if kh == 1 && kw == 1 {
        for s in 0..n {
            let gs = &g.data[s * o * p..(s + 1) * o * p];
            let xs = &mut out.data[s * in_per..(s + 1) * in_per];
            gemm(r, o, p, &w.data, (1, r as isize), gs, (p as isize, 1), 0.0, xs);
        }
        return out;
    }
    let rb = row_block(r, oh, ow);
    let mut cols = vec![0.0; r * rb * ow];
    for s in 0..n {
        let xs = &mut out.data[s * in_per..(s + 1) * in_per];
        for ys in blocks(oh, rb) {
            let q = ys.len() * ow;
            let gs = &g.data[s * o * p + ys.start * ow..(s + 1) * o * p];
            gemm(r, o, q, &w.data, (1, r as isize), gs, (p as isize, 1), 0.0, &mut cols[..r * q]);
            col2im_add(&cols[..r * q], c, h, wd, kh, kw, ys, ow, xs);
        }
    }
    out
}

/// Gradient of [`conv2d`] with respect to its weight, summed over the batch.
pub fn conv2d_weight_grad(x: &Tensor, g: &Tensor, k: (usize, usize)) -> Tensor {
    let [n, c, h, wd] = x.shape;
    let [n2, o, oh, ow] = g.shape;
    assert_eq!(n, n2, "conv2d_weight_grad batch mismatch");
    let (kh, kw) = k;
    assert_eq!((oh, ow), (h + 1 - kh, wd + 1 - kw), "conv2d_weight_grad geometry");
    let r = c * kh * kw;
    let p = oh * ow;
    let mut out = Tensor::zeros([o, c, kh, kw]);
    let in_per = c * h * wd;
    let pointwise = kh == 1 && kw == 1;
    let rb = if pointwise { oh.max(1) } else { row_block(r, oh, ow) };
    let mut cols = if pointwise { Vec::new() } else { vec![0.0; r * rb * ow] };
    let mut first = true;
    for s in 0..n {
        let xs = &x.data[s * in_per..(s + 1) * in_per];
        for ys in blocks(oh, rb) {
            let q = ys.len() * ow;
            let b: &[f64] = if pointwise {
                xs
            } else {
                im2col(xs, c, h, wd, kh, kw, ys.clone(), ow, &mut cols);
                &cols[..r * q]
            };
            let gs = &g.data[s * o * p + ys.start * ow..(s + 1) * o * p];
            let bs = if pointwise { (1, p as isize) } else { (1, q as isize) };
            gemm(o, q, r, gs, (p as isize, 1), b, bs, if first { 0.0 } else { 1.0 }, &mut out.data);
            first = false;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &Tensor, w: &Tensor) -> Tensor {
        let [n, c, h, wd] = x.shape();
        let [o, _, kh, kw] = w.shape();
        Tensor::from_fn([n, o, h - kh + 1, wd - kw + 1], |[ni, oi, y, xx]| {
            let mut acc = 0.0;
            for ci in 0..c {
                for ky in 0..kh {
                    for kx in 0..kw {
                        acc += w.at(oi, ci, ky, kx) * x.at(ni, ci, y + ky, xx + kx);
                    }
                }
            }
            acc
        })
    }

    fn pseudo(shape: Shape, seed: u64) -> Tensor {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        Tensor::from_fn(shape, |_| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    fn dot(a: &Tensor, b: &Tensor) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn conv_matches_naive_loops() {
        for &(k, c, o) in &[(3, 2, 4), (1, 3, 5), (3, 1, 1)] {
            let x = pseudo([2, c, 7, 6], 1);
            let w = pseudo([o, c, k, k], 2);
            let fast = conv2d(&x, &w);
            let slow = naive_conv(&x, &w);
            assert!(fast.max_abs_diff(&slow) < 1e-12);
        }
    }

    #[test]
    fn conv_gradients_are_adjoint() {
        // <conv(x, w), g> = <x, conv_input_grad(g, w)> = <w, conv_weight_grad(x, g)>
        let x = pseudo([2, 3, 6, 5], 3);
        let w = pseudo([4, 3, 3, 3], 4);
        let g = pseudo([2, 4, 4, 3], 5);
        let y = conv2d(&x, &w);
        let lhs = dot(&y, &g);
        let gx = conv2d_input_grad(&g, &w, (6, 5));
        let gw = conv2d_weight_grad(&x, &g, (3, 3));
        assert!((lhs - dot(&x, &gx)).abs() < 1e-10);
        assert!((lhs - dot(&w, &gw)).abs() < 1e-10);
    }

    #[test]
    fn blocked_conv_matches_naive() {
        let x = pseudo([2, 4, 304, 203], 6);
        let w = pseudo([2, 4, 3, 3], 7);
        assert!(row_block(36, 302, 201) < 302);
        assert!(conv2d(&x, &w).max_abs_diff(&naive_conv(&x, &w)) < 1e-12);
        let g = pseudo([2, 2, 302, 201], 8);
        let lhs = dot(&conv2d(&x, &w), &g);
        let rel = |v: f64| (lhs - v).abs() / lhs.abs().max(1.0);
        assert!(rel(dot(&x, &conv2d_input_grad(&g, &w, (304, 203)))) < 1e-12);
        assert!(rel(dot(&w, &conv2d_weight_grad(&x, &g, (3, 3)))) < 1e-12);
    }

    #[test]
    fn window_zero_fills_outside() {
        let t = Tensor::full([1, 1, 3, 3], 1.0);
        let w = t.window(-1, -1, 5, 5);
        assert_eq!(w.sum(), 9.0);
        assert_eq!(w.at(0, 0, 0, 0), 0.0);
        assert_eq!(w.at(0, 0, 1, 1), 1.0);
        let inner = t.window(1, 1, 1, 1);
        assert_eq!(inner.data(), &[1.0]);
        let outside = t.window(5, 5, 2, 2);
        assert_eq!(outside.sum(), 0.0);
    }

    #[test]
    fn sum_to_and_broadcast_are_adjoint() {
        let a = pseudo([2, 3, 4, 5], 9);
        let s = a.sum_to([1, 3, 1, 1]);
        let b = pseudo([1, 3, 1, 1], 10);
        let lhs = dot(&s, &b);
        let rhs = dot(&a, &b.broadcast_to([2, 3, 4, 5]));
        assert!((lhs - rhs).abs() < 1e-10);
        assert!((a.sum_to([1, 1, 1, 1]).item() - a.sum()).abs() < 1e-10);
        let pix = a.sum_to([2, 1, 4, 5]);
        let manual: f64 = (0..3).map(|c| a.at(1, c, 2, 3)).sum();
        assert!((pix.at(1, 0, 2, 3) - manual).abs() < 1e-12);
    }
}
