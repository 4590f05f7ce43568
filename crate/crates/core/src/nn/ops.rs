//! Layer primitives over NCHW arrays.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array3, Array4, ArrayView1, ArrayView2, ArrayView3, ArrayView4, ArrayViewMut1, ArrayViewMut2, ArrayViewMut4, Axis};

use super::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_size(&self, input: usize) -> usize {
        (input + 2 * self.pad - self.kernel) / self.stride + 1
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Real>(x: ArrayView3<T>, g: ConvGeom, ho: usize, wo: usize) -> Array2<T> {
    let (c, h, w) = x.dim();
    let k = g.kernel;
    let mut cols = Array2::<T>::zeros((c * k * k, ho * wo));
    let xs = x.as_standard_layout();
    let xs = xs.as_slice().expect("standard layout");
    let out = cols.as_slice_mut().expect("fresh array");
    let plane = ho * wo;
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let orow = &mut out[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let xrow = &xs[(ci * h + iy as usize) * w..][..w];
                    let orow = &mut orow[oy * wo..(oy + 1) * wo];
                    for (ox, o) in orow.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            *o = xrow[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im_add<T: Real>(cols: ArrayView2<T>, g: ConvGeom, dx: &mut Array3<T>, ho: usize, wo: usize) {
    let (c, h, w) = dx.dim();
    let k = g.kernel;
    let cs = cols.as_standard_layout();
    let cs = cs.as_slice().expect("standard layout");
    let out = dx.as_slice_mut().expect("fresh array");
    let plane = ho * wo;
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let crow = &cs[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let xrow = &mut out[(ci * h + iy as usize) * w..][..w];
                    let crow = &crow[oy * wo..(oy + 1) * wo];
                    for (ox, &v) in crow.iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            xrow[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn weight_matrix<T: Real>(w: &ArrayView4<'_, T>) -> Array2<T> {
    let (co, ci, kh, kw) = w.dim();
    w.as_standard_layout()
        .into_owned()
        .into_shape_with_order((co, ci * kh * kw))
        .expect("contiguous weight")
}

/// Convolution without bias. `w` is (out, in, k, k).
pub fn conv2d<T: Real>(x: &Array4<T>, w: ArrayView4<T>, g: ConvGeom) -> Array4<T> {
    let (n, _, h, wd) = x.dim();
    let co = w.dim().0;
    let (ho, wo) = (g.out_size(h), g.out_size(wd));
    let wm = weight_matrix(&w);
    let mut y = Array4::<T>::zeros((n, co, ho, wo));
    for i in 0..n {
        let mut yi = y
            .index_axis_mut(Axis(0), i)
            .into_shape_with_order((co, ho * wo))
            .expect("contiguous output");
        let xi = x.index_axis(Axis(0), i);
        if g.is_pointwise() {
            let xi = xi.as_standard_layout();
            let x2 = xi.view().into_shape_with_order((xi.dim().0, h * wd)).expect("contiguous");
            general_mat_mul(T::one(), &wm, &x2, T::zero(), &mut yi);
        } else {
            let cols = im2col(xi, g, ho, wo);
            general_mat_mul(T::one(), &wm, &cols, T::zero(), &mut yi);
        }
    }
    y
}

/// Accumulates the weight gradient into `dw` and returns the input gradient
/// when `need_dx`.
pub fn conv2d_backward<T: Real>(
    x: &Array4<T>,
    w: ArrayView4<T>,
    g: ConvGeom,
    dy: &Array4<T>,
    mut dw: ArrayViewMut4<T>,
    need_dx: bool,
) -> Option<Array4<T>> {
    let (n, ci, h, wd) = x.dim();
    let (_, co, ho, wo) = dy.dim();
    let wm = weight_matrix(&w);
    let wmt = wm.t();
    let mut dw2 = dw
        .view_mut()
        .into_shape_with_order((co, ci * g.kernel * g.kernel))
        .expect("contiguous gradient");
    let mut dx = need_dx.then(|| Array4::<T>::zeros((n, ci, h, wd)));
    for i in 0..n {
        let dyi = dy.index_axis(Axis(0), i);
        let dyi = dyi.as_standard_layout();
        let dy2 = dyi.view().into_shape_with_order((co, ho * wo)).expect("contiguous");
        let xi = x.index_axis(Axis(0), i);
        if g.is_pointwise() {
            let xi = xi.as_standard_layout();
            let x2 = xi.view().into_shape_with_order((ci, h * wd)).expect("contiguous");
            general_mat_mul(T::one(), &dy2, &x2.t(), T::one(), &mut dw2);
            if let Some(dx) = dx.as_mut() {
                let mut dxi = dx
                    .index_axis_mut(Axis(0), i)
                    .into_shape_with_order((ci, h * wd))
                    .expect("contiguous");
                general_mat_mul(T::one(), &wmt, &dy2, T::zero(), &mut dxi);
            }
        } else {
            let cols = im2col(xi, g, ho, wo);
            general_mat_mul(T::one(), &dy2, &cols.t(), T::one(), &mut dw2);
            if let Some(dx) = dx.as_mut() {
                let dcols = wmt.dot(&dy2);
                let mut dxi = dx.index_axis(Axis(0), i).to_owned();
                col2im_add(dcols.view(), g, &mut dxi, ho, wo);
                dx.index_axis_mut(Axis(0), i).assign(&dxi);
            }
        }
    }
    dx
}

pub struct BnCache<T> {
    pub xhat: Array4<T>,
    pub inv_std: Array1<T>,
}

/// Per-channel batch statistics observed in a training forward.
#[derive(Debug, Clone)]
pub struct BnBatchStats<T> {
    pub mean: Array1<T>,
    /// Unbiased (n-1) variance, the value folded into running statistics.
    pub var_unbiased: Array1<T>,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

pub fn batch_norm_train<T: Real>(
    x: &Array4<T>,
    gamma: ArrayView1<T>,
    beta: ArrayView1<T>,
) -> (Array4<T>, BnCache<T>, BnBatchStats<T>) {
    let (n, c, h, w) = x.dim();
    let plane = h * w;
    let count = n * plane;
    let cnt = T::lit(count as f64);
    let eps = T::lit(BN_EPS);
    let xs = x.as_slice().expect("standard layout");
    let mut mean = Array1::<T>::zeros(c);
    let mut var = Array1::<T>::zeros(c);
    for ch in 0..c {
        let mut sum = T::zero();
        for i in 0..n {
            let off = (i * c + ch) * plane;
            sum += xs[off..off + plane].iter().copied().sum::<T>();
        }
        let m = sum / cnt;
        let mut sq = T::zero();
        for i in 0..n {
            let off = (i * c + ch) * plane;
            sq += xs[off..off + plane].iter().map(|&v| (v - m) * (v - m)).sum::<T>();
        }
        mean[ch] = m;
        var[ch] = sq / cnt;
    }
    let inv_std = var.mapv(|v| T::one() / (v + eps).sqrt());
    let mut xhat = Array4::<T>::zeros((n, c, h, w));
    let mut y = Array4::<T>::zeros((n, c, h, w));
    {
        let xh = xhat.as_slice_mut().expect("fresh");
        let ys = y.as_slice_mut().expect("fresh");
        for i in 0..n {
            for ch in 0..c {
                let off = (i * c + ch) * plane;
                let (m, is, ga, be) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
                for j in off..off + plane {
                    let v = (xs[j] - m) * is;
                    xh[j] = v;
                    ys[j] = ga * v + be;
                }
            }
        }
    }
    let unbias = if count > 1 {
        T::lit(count as f64 / (count - 1) as f64)
    } else {
        T::one()
    };
    let stats = BnBatchStats {
        mean,
        var_unbiased: var.mapv(|v| v * unbias),
    };
    (y, BnCache { xhat, inv_std }, stats)
}

pub fn batch_norm_eval<T: Real>(
    x: &Array4<T>,
    gamma: ArrayView1<T>,
    beta: ArrayView1<T>,
    running_mean: ArrayView1<T>,
    running_var: ArrayView1<T>,
) -> Array4<T> {
    let (n, c, h, w) = x.dim();
    let plane = h * w;
    let eps = T::lit(BN_EPS);
    let mut y = x.as_standard_layout().into_owned();
    let ys = y.as_slice_mut().expect("standard layout");
    for i in 0..n {
        for ch in 0..c {
            let scale = gamma[ch] / (running_var[ch] + eps).sqrt();
            let shift = beta[ch] - running_mean[ch] * scale;
            let off = (i * c + ch) * plane;
            for v in &mut ys[off..off + plane] {
                *v = *v * scale + shift;
            }
        }
    }
    y
}

pub fn batch_norm_backward<T: Real>(
    cache: &BnCache<T>,
    gamma: ArrayView1<T>,
    dy: &Array4<T>,
    mut dgamma: ArrayViewMut1<T>,
    mut dbeta: ArrayViewMut1<T>,
) -> Array4<T> {
    let (n, c, h, w) = dy.dim();
    let plane = h * w;
    let cnt = T::lit((n * plane) as f64);
    let dys = dy.as_slice().expect("standard layout");
    let xh = cache.xhat.as_slice().expect("standard layout");
    let mut dx = Array4::<T>::zeros((n, c, h, w));
    let dxs = dx.as_slice_mut().expect("fresh");
    for ch in 0..c {
        let mut sum_dy = T::zero();
        let mut sum_dy_xhat = T::zero();
        for i in 0..n {
            let off = (i * c + ch) * plane;
            for j in off..off + plane {
                sum_dy += dys[j];
                sum_dy_xhat += dys[j] * xh[j];
            }
        }
        dgamma[ch] += sum_dy_xhat;
        dbeta[ch] += sum_dy;
        let k = gamma[ch] * cache.inv_std[ch] / cnt;
        for i in 0..n {
            let off = (i * c + ch) * plane;
            for j in off..off + plane {
                dxs[j] = k * (cnt * dys[j] - sum_dy - xh[j] * sum_dy_xhat);
            }
        }
    }
    dx
}

/// Folds batch statistics into running statistics, PyTorch style.
pub fn update_running_stats<T: Real>(
    mut running_mean: ArrayViewMut1<T>,
    mut running_var: ArrayViewMut1<T>,
    stats: &BnBatchStats<T>,
) {
    let m = T::lit(BN_MOMENTUM);
    let keep = T::one() - m;
    running_mean.zip_mut_with(&stats.mean, |r, &b| *r = keep * *r + m * b);
    running_var.zip_mut_with(&stats.var_unbiased, |r, &b| *r = keep * *r + m * b);
}

pub fn relu_inplace<T: Real>(x: &mut Array4<T>) {
    x.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
}

/// Gradient through a ReLU given its output.
pub fn relu_backward<T: Real>(out: &Array4<T>, dy: &Array4<T>) -> Array4<T> {
    let mut dx = dy.clone();
    dx.zip_mut_with(out, |d, &o| {
        if o <= T::zero() {
            *d = T::zero()
        }
    });
    dx
}

pub struct PoolCache {
    input_dim: (usize, usize, usize, usize),
    /// Flat index into the input plane for every output element.
    argmax: Vec<usize>,
}

/// Max pooling with implicit `-inf` padding; ties resolve to the first
/// maximal element in row-major window order.
pub fn max_pool<T: Real>(x: &Array4<T>, g: ConvGeom) -> (Array4<T>, PoolCache) {
    let (n, c, h, w) = x.dim();
    let (ho, wo) = (g.out_size(h), g.out_size(w));
    let xs = x.as_slice().expect("standard layout");
    let mut y = Array4::<T>::zeros((n, c, ho, wo));
    let ys = y.as_slice_mut().expect("fresh");
    let mut argmax = vec![0usize; n * c * ho * wo];
    for p in 0..n * c {
        let plane = &xs[p * h * w..(p + 1) * h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = T::neg_infinity();
                let mut best_idx = usize::MAX;
                for ki in 0..g.kernel {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kj in 0..g.kernel {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let idx = iy as usize * w + ix as usize;
                        if best_idx == usize::MAX || plane[idx] > best {
                            best = plane[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = (p * ho + oy) * wo + ox;
                ys[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
    (
        y,
        PoolCache {
            input_dim: (n, c, h, w),
            argmax,
        },
    )
}

pub fn max_pool_backward<T: Real>(cache: &PoolCache, dy: &Array4<T>) -> Array4<T> {
    let (n, c, h, w) = cache.input_dim;
    let (_, _, ho, wo) = dy.dim();
    let mut dx = Array4::<T>::zeros((n, c, h, w));
    let dxs = dx.as_slice_mut().expect("fresh");
    let dys = dy.as_slice().expect("standard layout");
    for p in 0..n * c {
        for o in 0..ho * wo {
            let flat = p * ho * wo + o;
            dxs[p * h * w + cache.argmax[flat]] += dys[flat];
        }
    }
    dx
}

pub fn global_avg_pool<T: Real>(x: &Array4<T>) -> Array2<T> {
    let (n, c, h, w) = x.dim();
    let inv = T::one() / T::lit((h * w) as f64);
    let xs = x.as_slice().expect("standard layout");
    Array2::from_shape_fn((n, c), |(i, ch)| {
        let off = (i * c + ch) * h * w;
        xs[off..off + h * w].iter().copied().sum::<T>() * inv
    })
}

pub fn global_avg_pool_backward<T: Real>(dy: &Array2<T>, h: usize, w: usize) -> Array4<T> {
    let (n, c) = dy.dim();
    let inv = T::one() / T::lit((h * w) as f64);
    Array4::from_shape_fn((n, c, h, w), |(i, ch, _, _)| dy[[i, ch]] * inv)
}

/// `x · wᵀ + b` with `w` shaped (out, in).
pub fn linear<T: Real>(x: &Array2<T>, w: ArrayView2<T>, b: ArrayView1<T>) -> Array2<T> {
    let mut y = x.dot(&w.t());
    y += &b;
    y
}

pub fn linear_backward<T: Real>(
    x: &Array2<T>,
    w: ArrayView2<T>,
    dy: &Array2<T>,
    mut dw: ArrayViewMut2<T>,
    mut db: ArrayViewMut1<T>,
) -> Array2<T> {
    general_mat_mul(T::one(), &dy.t(), x, T::one(), &mut dw);
    db += &dy.sum_axis(Axis(0));
    dy.dot(&w)
}

/// Rounds every value to the nearest bfloat16, emulating reduced-precision
/// compute for `mixed_precision` runs.
pub fn round_to_bf16<T: Real>(x: &mut Array4<T>) {
    x.mapv_inplace(|v| {
        let f = v.to_f32().unwrap_or(f32::NAN);
        if !f.is_finite() {
            return v;
        }
        let bits = f.to_bits();
        let rounded = bits.wrapping_add(0x7FFF + ((bits >> 16) & 1)) & 0xFFFF_0000;
        T::from_f32(f32::from_bits(rounded)).unwrap_or(v)
    });
}

/// Direct convolution by definition; the reference for the im2col path.
pub fn naive_conv2d<T: Real>(x: &Array4<T>, w: ArrayView4<T>, g: ConvGeom) -> Array4<T> {
    let (n, ci, h, wd) = x.dim();
    let co = w.dim().0;
    let (ho, wo) = (g.out_size(h), g.out_size(wd));
    Array4::from_shape_fn((n, co, ho, wo), |(i, o, oy, ox)| {
        let mut acc = T::zero();
        for c in 0..ci {
            for ki in 0..g.kernel {
                for kj in 0..g.kernel {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                    if iy >= 0 && iy < h as isize && ix >= 0 && ix < wd as isize {
                        acc += x[[i, c, iy as usize, ix as usize]] * w[[o, c, ki, kj]];
                    }
                }
            }
        }
        acc
    })
}

/// Sum of `a * b` over all elements; the scalar probe used in gradient tests.
pub fn dot_all<T: Real>(a: &Array4<T>, b: &Array4<T>) -> T {
    a.iter().zip(b.iter()).map(|(&x, &y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::{s, Array};

    fn rand4(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
        let mut r = rng::seeded(seed);
        Array::from_shape_fn(shape, |_| rng::uniform(&mut r, -1.0, 1.0))
    }

    #[test]
    fn conv_matches_naive() {
        for g in [
            ConvGeom { kernel: 3, stride: 1, pad: 1 },
            ConvGeom { kernel: 3, stride: 2, pad: 1 },
            ConvGeom { kernel: 1, stride: 1, pad: 0 },
            ConvGeom { kernel: 1, stride: 2, pad: 0 },
            ConvGeom { kernel: 7, stride: 2, pad: 3 },
        ] {
            let x = rand4((2, 3, 9, 8), 1);
            let w = rand4((4, 3, g.kernel, g.kernel), 2);
            let fast = conv2d(&x, w.view(), g);
            let slow = naive_conv2d(&x, w.view(), g);
            assert_eq!(fast.dim(), slow.dim());
            for (a, b) in fast.iter().zip(slow.iter()) {
                assert!((a - b).abs() < 1e-12, "{g:?}");
            }
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let g = ConvGeom { kernel: 3, stride: 2, pad: 1 };
        let x = rand4((2, 2, 6, 5), 3);
        let w = rand4((3, 2, 3, 3), 4);
        let probe = rand4((2, 3, 3, 3), 5);
        let mut dw = Array4::<f64>::zeros(w.dim());
        let dx = conv2d_backward(&x, w.view(), g, &probe, dw.view_mut(), true).unwrap();
        let f = |x: &Array4<f64>, w: &Array4<f64>| dot_all(&conv2d(x, w.view(), g), &probe);
        let h = 1e-6;
        for idx in [[0, 0, 0, 0], [1, 1, 3, 2], [0, 1, 5, 4]] {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let fd = (f(&xp, &w) - f(&xm, &w)) / (2.0 * h);
            assert!((fd - dx[idx]).abs() < 1e-7);
        }
        for idx in [[0, 0, 0, 0], [2, 1, 2, 1], [1, 0, 1, 2]] {
            let mut wp = w.clone();
            wp[idx] += h;
            let mut wm = w.clone();
            wm[idx] -= h;
            let fd = (f(&x, &wp) - f(&x, &wm)) / (2.0 * h);
            assert!((fd - dw[idx]).abs() < 1e-7);
        }
    }

    #[test]
    fn batch_norm_backward_matches_finite_differences() {
        let x = rand4((3, 2, 2, 2), 6);
        let gamma = Array1::from(vec![1.3, 0.7]);
        let beta = Array1::from(vec![0.1, -0.2]);
        let probe = rand4((3, 2, 2, 2), 7);
        let (_, cache, _) = batch_norm_train(&x, gamma.view(), beta.view());
        let mut dg = Array1::zeros(2);
        let mut db = Array1::zeros(2);
        let dx = batch_norm_backward(&cache, gamma.view(), &probe, dg.view_mut(), db.view_mut());
        let f = |x: &Array4<f64>, g: &Array1<f64>| {
            dot_all(&batch_norm_train(x, g.view(), beta.view()).0, &probe)
        };
        let h = 1e-6;
        for idx in [[0, 0, 0, 0], [2, 1, 1, 0], [1, 1, 0, 1]] {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let fd = (f(&xp, &gamma) - f(&xm, &gamma)) / (2.0 * h);
            assert!((fd - dx[idx]).abs() < 1e-6, "{fd} vs {}", dx[idx]);
        }
        let mut gp = gamma.clone();
        gp[1] += h;
        let mut gm = gamma.clone();
        gm[1] -= h;
        let fd = (f(&x, &gp) - f(&x, &gm)) / (2.0 * h);
        assert!((fd - dg[1]).abs() < 1e-6);
        assert!((db[0] - probe.index_axis(Axis(1), 0).sum()).abs() < 1e-12);
    }

    #[test]
    fn batch_norm_eval_with_identity_stats_is_affine() {
        let x = rand4((1, 2, 3, 3), 8);
        let y = batch_norm_eval(
            &x,
            Array1::from(vec![2.0, 1.0]).view(),
            Array1::from(vec![0.0, 1.0]).view(),
            Array1::zeros(2).view(),
            Array1::from(vec![1.0 - BN_EPS, 1.0 - BN_EPS]).view(),
        );
        assert!((y[[0, 0, 1, 1]] - 2.0 * x[[0, 0, 1, 1]]).abs() < 1e-12);
        assert!((y[[0, 1, 2, 0]] - (x[[0, 1, 2, 0]] + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn max_pool_routes_gradient_to_argmax() {
        let x = rand4((1, 1, 4, 4), 9);
        let g = ConvGeom { kernel: 2, stride: 2, pad: 0 };
        let (y, cache) = max_pool(&x, g);
        assert_eq!(y.dim(), (1, 1, 2, 2));
        let expect = x.slice(s![0, 0, 0..2, 0..2]).iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(y[[0, 0, 0, 0]], expect);
        let dx = max_pool_backward(&cache, &Array4::<f64>::ones((1, 1, 2, 2)));
        assert_eq!(dx.sum(), 4.0);
        assert_eq!(dx.iter().filter(|&&v| v == 1.0).count(), 4);
    }

    #[test]
    fn linear_backward_shapes_and_values() {
        let x = Array2::<f64>::from_shape_vec((2, 3), vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0]).unwrap();
        let w = Array2::from_shape_vec((2, 3), vec![0.5, -0.5, 1.0, 0.0, 1.0, 0.0]).unwrap();
        let b = Array1::from(vec![0.1, 0.2]);
        let y = linear(&x, w.view(), b.view());
        assert!((y[[0, 0]] - (0.5 - 1.0 + 3.0 + 0.1)).abs() < 1e-12);
        let dy = Array2::ones((2, 2));
        let mut dw = Array2::zeros((2, 3));
        let mut db = Array1::zeros(2);
        let dx = linear_backward(&x, w.view(), &dy, dw.view_mut(), db.view_mut());
        assert_eq!(db, Array1::from(vec![2.0, 2.0]));
        assert_eq!(dw.row(0).to_vec(), vec![0.0, 2.0, 4.0]);
        assert_eq!(dx.row(0).to_vec(), vec![0.5, 0.5, 1.0]);
    }

    #[test]
    fn bf16_rounding_keeps_representable_values() {
        let mut x = Array4::from_elem((1, 1, 1, 3), 1.0f32);
        x[[0, 0, 0, 1]] = 1.0 + 1.0 / 1024.0;
        x[[0, 0, 0, 2]] = 0.5;
        round_to_bf16(&mut x);
        assert_eq!(x[[0, 0, 0, 0]], 1.0);
        assert_eq!(x[[0, 0, 0, 1]], 1.0);
        assert_eq!(x[[0, 0, 0, 2]], 0.5);
    }
}
