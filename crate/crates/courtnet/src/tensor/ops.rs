//! Elementwise, reduction, and shape operations, each registered on the
//! tape with its analytic backward rule.
//!
//! Broadcast rule for binary ops: shapes must be equal, or one operand
//! is a single element, or the smaller operand's shape is a suffix of
//! the larger's (covers bias rows and positional embeddings). Gradients
//! of a broadcast operand are summed over the tiled positions.

use std::rc::Rc;

use super::{numel, Scalar, Tensor};

fn is_suffix(small: &[usize], big: &[usize]) -> bool {
    small.len() <= big.len() && big[big.len() - small.len()..] == *small
}

/// (out_shape, a_modulus, b_modulus) for the supported broadcast cases.
fn broadcast_plan(a: &[usize], b: &[usize]) -> (Vec<usize>, usize, usize) {
    let an = numel(a);
    let bn = numel(b);
    if a == b {
        (a.to_vec(), an, bn)
    } else if bn == 1 || is_suffix(b, a) {
        (a.to_vec(), an, bn)
    } else if an == 1 || is_suffix(a, b) {
        (b.to_vec(), an, bn)
    } else {
        panic!("shapes {:?} and {:?} are not broadcastable", a, b);
    }
}

fn binary_map<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: fn(T, T) -> T,
    dfda: fn(T, T) -> T,
    dfdb: fn(T, T) -> T,
) -> Tensor<T> {
    let (shape, an, bn) = broadcast_plan(a.shape(), b.shape());
    let n = numel(&shape);
    let ad = a.data_rc();
    let bd = b.data_rc();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        out.push(f(ad[i % an], bd[i % bn]));
    }
    let a_id = a.track_id();
    let b_id = b.track_id();
    let (ad2, bd2) = (Rc::clone(&ad), Rc::clone(&bd));
    Tensor::from_op(&[a, b], out, shape, move |g, store| {
        if let Some(id) = a_id {
            let buf = store.buf_mut(id);
            for i in 0..n {
                buf[i % an] += g[i] * dfda(ad2[i % an], bd2[i % bn]);
            }
        }
        if let Some(id) = b_id {
            let buf = store.buf_mut(id);
            for i in 0..n {
                buf[i % bn] += g[i] * dfdb(ad2[i % an], bd2[i % bn]);
            }
        }
    })
}

fn unary_map<T: Scalar, F, D>(x: &Tensor<T>, f: F, df: D) -> Tensor<T>
where
    F: Fn(T) -> T,
    D: Fn(T, T) -> T + 'static,
{
    let xd = x.data_rc();
    let out: Vec<T> = xd.iter().map(|&v| f(v)).collect();
    let out_rc = Rc::new(out);
    let y = Rc::clone(&out_rc);
    let x_id = x.track_id();
    Tensor::from_op_shared(&[x], out_rc, x.shape().to_vec(), move |g, store| {
        if let Some(id) = x_id {
            let buf = store.buf_mut(id);
            for i in 0..g.len() {
                buf[i] += g[i] * df(xd[i], y[i]);
            }
        }
    })
}

impl<T: Scalar> Tensor<T> {
    pub(crate) fn data_rc(&self) -> Rc<Vec<T>> {
        Rc::clone(&self.data)
    }

    pub fn add(&self, other: &Tensor<T>) -> Tensor<T> {
        binary_map(self, other, |a, b| a + b, |_, _| T::one(), |_, _| T::one())
    }

    pub fn sub(&self, other: &Tensor<T>) -> Tensor<T> {
        binary_map(self, other, |a, b| a - b, |_, _| T::one(), |_, _| -T::one())
    }

    pub fn mul(&self, other: &Tensor<T>) -> Tensor<T> {
        binary_map(self, other, |a, b| a * b, |_, b| b, |a, _| a)
    }

    pub fn div(&self, other: &Tensor<T>) -> Tensor<T> {
        binary_map(
            self,
            other,
            |a, b| a / b,
            |_, b| T::one() / b,
            |a, b| -a / (b * b),
        )
    }

    pub fn neg(&self) -> Tensor<T> {
        unary_map(self, |v| -v, |_, _| -T::one())
    }

    pub fn scale(&self, c: T) -> Tensor<T> {
        unary_map(self, move |v| v * c, move |_, _| c)
    }

    pub fn add_scalar(&self, c: T) -> Tensor<T> {
        unary_map(self, move |v| v + c, |_, _| T::one())
    }

    /// Natural logarithm; callers clamp into a positive domain first.
    pub fn log(&self) -> Tensor<T> {
        unary_map(self, |v| v.ln(), |x, _| T::one() / x)
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        unary_map(
            self,
            |v| T::one() / (T::one() + (-v).exp()),
            |_, y| y * (T::one() - y),
        )
    }

    pub fn relu(&self) -> Tensor<T> {
        unary_map(
            self,
            |v| if v > T::zero() { v } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    /// tanh-approximation gelu: 0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³))).
    pub fn gelu(&self) -> Tensor<T> {
        let c = T::from_f64(0.7978845608028654).unwrap(); // sqrt(2/pi)
        let k = T::from_f64(0.044715).unwrap();
        let half = T::from_f64(0.5).unwrap();
        let three = T::from_f64(3.0).unwrap();
        unary_map(
            self,
            move |x| half * x * (T::one() + (c * (x + k * x * x * x)).tanh()),
            move |x, _| {
                let u = c * (x + k * x * x * x);
                let t = u.tanh();
                let sech2 = T::one() - t * t;
                half * (T::one() + t) + half * x * sech2 * c * (T::one() + three * k * x * x)
            },
        )
    }

    /// Elementwise x^e for a fixed exponent; e = 0 yields 1 with zero
    /// gradient (the γ = 0 ablation path).
    pub fn pow_scalar(&self, e: T) -> Tensor<T> {
        unary_map(
            self,
            move |x| x.powf(e),
            move |x, _| {
                if e == T::zero() {
                    T::zero()
                } else {
                    e * x.powf(e - T::one())
                }
            },
        )
    }

    /// Clamp to [lo, hi]; gradient passes through inside the interval
    /// (boundary included) and is zero outside.
    pub fn clamp(&self, lo: T, hi: T) -> Tensor<T> {
        assert!(lo <= hi, "clamp bounds inverted");
        unary_map(
            self,
            move |x| {
                if x < lo {
                    lo
                } else if x > hi {
                    hi
                } else {
                    x
                }
            },
            move |x, _| {
                if x < lo || x > hi {
                    T::zero()
                } else {
                    T::one()
                }
            },
        )
    }

    pub fn sum_all(&self) -> Tensor<T> {
        let s = self.data().iter().copied().sum();
        let x_id = self.track_id();
        Tensor::from_op(&[self], vec![s], vec![1], move |g, store| {
            if let Some(id) = x_id {
                let buf = store.buf_mut(id);
                for v in buf.iter_mut() {
                    *v += g[0];
                }
            }
        })
    }

    pub fn mean_all(&self) -> Tensor<T> {
        let n = T::from_usize(self.len()).unwrap();
        self.sum_all().scale(T::one() / n)
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Tensor<T> {
        assert_eq!(
            numel(&shape),
            self.len(),
            "reshape {:?} -> {:?} changes element count",
            self.shape(),
            shape
        );
        let x_id = self.track_id();
        Tensor::from_op_shared(&[self], self.data_rc(), shape, move |g, store| {
            if let Some(id) = x_id {
                let buf = store.buf_mut(id);
                for i in 0..g.len() {
                    buf[i] += g[i];
                }
            }
        })
    }

    /// Swap two axes (general stride copy; its own inverse).
    pub fn swap_axes(&self, a0: usize, a1: usize) -> Tensor<T> {
        let rank = self.shape().len();
        assert!(a0 < rank && a1 < rank, "swap_axes out of range");
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(a0, a1);
        let (out, out_shape, gather) = permute_with_map(self.data(), self.shape(), &perm);
        let x_id = self.track_id();
        Tensor::from_op(&[self], out, out_shape, move |g, store| {
            if let Some(id) = x_id {
                let buf = store.buf_mut(id);
                for (oi, &si) in gather.iter().enumerate() {
                    buf[si] += g[oi];
                }
            }
        })
    }

    /// Contiguous sub-range along one axis.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Tensor<T> {
        let shape = self.shape();
        assert!(axis < shape.len(), "slice axis out of range");
        assert!(
            start + len <= shape[axis] && len > 0,
            "slice [{}, {}) exceeds extent {} on axis {}",
            start,
            start + len,
            shape[axis],
            axis
        );
        let outer: usize = shape[..axis].iter().product();
        let alen = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * len * inner);
        let d = self.data();
        for o in 0..outer {
            let base = (o * alen + start) * inner;
            out.extend_from_slice(&d[base..base + len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let x_id = self.track_id();
        Tensor::from_op(&[self], out, out_shape, move |g, store| {
            if let Some(id) = x_id {
                let buf = store.buf_mut(id);
                for o in 0..outer {
                    let src = o * len * inner;
                    let dst = (o * alen + start) * inner;
                    for i in 0..len * inner {
                        buf[dst + i] += g[src + i];
                    }
                }
            }
        })
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Tensor<T>], axis: usize) -> Tensor<T> {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let shape0 = parts[0].shape();
        let rank = shape0.len();
        assert!(axis < rank, "concat axis out of range");
        for p in parts {
            assert_eq!(p.shape().len(), rank, "concat rank mismatch");
            for ax in 0..rank {
                assert!(
                    ax == axis || p.shape()[ax] == shape0[ax],
                    "concat extents differ off-axis: {:?} vs {:?}",
                    p.shape(),
                    shape0
                );
            }
        }
        let outer: usize = shape0[..axis].iter().product();
        let inner: usize = shape0[axis + 1..].iter().product();
        let alens: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = alens.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &al) in parts.iter().zip(&alens) {
                let d = p.data();
                let base = o * al * inner;
                out.extend_from_slice(&d[base..base + al * inner]);
            }
        }
        let mut out_shape = shape0.to_vec();
        out_shape[axis] = total;
        let ids: Vec<Option<usize>> = parts.iter().map(|p| p.track_id()).collect();
        Tensor::from_op(parts, out, out_shape, move |g, store| {
            for (pi, id) in ids.iter().enumerate() {
                if let Some(id) = *id {
                    let al = alens[pi];
                    let off: usize = alens[..pi].iter().sum();
                    let buf = store.buf_mut(id);
                    for o in 0..outer {
                        let src = (o * total + off) * inner;
                        let dst = o * al * inner;
                        for i in 0..al * inner {
                            buf[dst + i] += g[src + i];
                        }
                    }
                }
            }
        })
    }

    /// Numerically stabilized softmax along `axis`; rows sum to one.
    pub fn softmax(&self, axis: usize) -> Tensor<T> {
        let shape = self.shape().to_vec();
        assert!(axis < shape.len(), "softmax axis out of range");
        let outer: usize = shape[..axis].iter().product();
        let alen = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let d = self.data();
        let mut out = vec![T::zero(); d.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * alen + a) * inner + i;
                let mut mx = d[idx(0)];
                for a in 1..alen {
                    if d[idx(a)] > mx {
                        mx = d[idx(a)];
                    }
                }
                let mut z = T::zero();
                for a in 0..alen {
                    let e = (d[idx(a)] - mx).exp();
                    out[idx(a)] = e;
                    z += e;
                }
                for a in 0..alen {
                    out[idx(a)] = out[idx(a)] / z;
                }
            }
        }
        let out_rc = Rc::new(out);
        let y = Rc::clone(&out_rc);
        let x_id = self.track_id();
        Tensor::from_op_shared(&[self], out_rc, shape, move |g, store| {
            if let Some(id) = x_id {
                let buf = store.buf_mut(id);
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |a: usize| (o * alen + a) * inner + i;
                        let mut dot = T::zero();
                        for a in 0..alen {
                            dot += g[idx(a)] * y[idx(a)];
                        }
                        for a in 0..alen {
                            buf[idx(a)] += y[idx(a)] * (g[idx(a)] - dot);
                        }
                    }
                }
            }
        })
    }

    /// Zero-mean unit-variance normalization over the last axis
    /// (affine gain/bias live with the caller's parameters).
    pub fn layernorm(&self, eps: T) -> Tensor<T> {
        let shape = self.shape().to_vec();
        let dlen = *shape.last().unwrap();
        let lanes = self.len() / dlen;
        let d = self.data();
        let mut out = vec![T::zero(); d.len()];
        let mut inv_std = vec![T::zero(); lanes];
        let nd = T::from_usize(dlen).unwrap();
        for l in 0..lanes {
            let row = &d[l * dlen..(l + 1) * dlen];
            let mean = row.iter().copied().sum::<T>() / nd;
            let var = row
                .iter()
                .map(|&v| (v - mean) * (v - mean))
                .sum::<T>()
                / nd;
            let is = T::one() / (var + eps).sqrt();
            inv_std[l] = is;
            for j in 0..dlen {
                out[l * dlen + j] = (row[j] - mean) * is;
            }
        }
        let out_rc = Rc::new(out);
        let y = Rc::clone(&out_rc);
        let x_id = self.track_id();
        Tensor::from_op_shared(&[self], out_rc, shape, move |g, store| {
            if let Some(id) = x_id {
                let buf = store.buf_mut(id);
                for l in 0..lanes {
                    let base = l * dlen;
                    let mut gm = T::zero();
                    let mut gym = T::zero();
                    for j in 0..dlen {
                        gm += g[base + j];
                        gym += g[base + j] * y[base + j];
                    }
                    gm = gm / nd;
                    gym = gym / nd;
                    for j in 0..dlen {
                        buf[base + j] +=
                            inv_std[l] * (g[base + j] - gm - y[base + j] * gym);
                    }
                }
            }
        })
    }

    /// [B,1,H,W] -> [B, p², (H/p)·(W/p)]: row-major patch grid, row-major
    /// pixels within a patch. Bijective; backward is the inverse scatter.
    pub fn extract_patches(&self, p: usize) -> Tensor<T> {
        let s = self.shape();
        assert_eq!(s.len(), 4, "extract_patches expects [B,1,H,W]");
        assert_eq!(s[1], 1, "extract_patches expects a single channel");
        let (b, h, w) = (s[0], s[2], s[3]);
        assert!(
            h % p == 0 && w % p == 0,
            "patch grid {} does not divide image {}x{}",
            p,
            h,
            w
        );
        let (ph, pw) = (h / p, w / p);
        let px = ph * pw;
        let gather = patch_gather_map(b, h, w, p);
        let d = self.data();
        let out: Vec<T> = gather.iter().map(|&i| d[i]).collect();
        let x_id = self.track_id();
        Tensor::from_op(&[self], out, vec![b, p * p, px], move |g, store| {
            if let Some(id) = x_id {
                let buf = store.buf_mut(id);
                for (oi, &si) in gather.iter().enumerate() {
                    buf[si] += g[oi];
                }
            }
        })
    }

    /// Inverse of [`Tensor::extract_patches`]: [B, p², px] -> [B,1,H,W].
    pub fn assemble_patches(&self, p: usize, h: usize, w: usize) -> Tensor<T> {
        let s = self.shape();
        assert_eq!(s.len(), 3, "assemble_patches expects [B,P,px]");
        let b = s[0];
        assert_eq!(s[1], p * p, "patch count mismatch");
        assert_eq!(s[2], (h / p) * (w / p), "patch pixel count mismatch");
        let gather = patch_gather_map(b, h, w, p); // image index per patch slot
        let d = self.data();
        let mut out = vec![T::zero(); b * h * w];
        for (oi, &si) in gather.iter().enumerate() {
            out[si] = d[oi];
        }
        let x_id = self.track_id();
        Tensor::from_op(&[self], out, vec![b, 1, h, w], move |g, store| {
            if let Some(id) = x_id {
                let buf = store.buf_mut(id);
                for (oi, &si) in gather.iter().enumerate() {
                    buf[oi] += g[si];
                }
            }
        })
    }
}

/// For each element of the patch layout [B, P, px] (in order), the index
/// into the flat image [B,1,H,W] it comes from.
fn patch_gather_map(b: usize, h: usize, w: usize, p: usize) -> Vec<usize> {
    let (ph, pw) = (h / p, w / p);
    let mut map = Vec::with_capacity(b * h * w);
    for bi in 0..b {
        for pr in 0..p {
            for pc in 0..p {
                for y in 0..ph {
                    for x in 0..pw {
                        let iy = pr * ph + y;
                        let ix = pc * pw + x;
                        map.push(bi * h * w + iy * w + ix);
                    }
                }
            }
        }
    }
    map
}

/// Permuted copy plus the out-index -> in-index map used by backward.
fn permute_with_map<T: Copy>(
    src: &[T],
    shape: &[usize],
    perm: &[usize],
) -> (Vec<T>, Vec<usize>, Vec<usize>) {
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for ax in (0..rank.saturating_sub(1)).rev() {
        in_strides[ax] = in_strides[ax + 1] * shape[ax + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let os: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    // pad to 4 axes for fixed nesting
    let mut dims = [1usize; 4];
    let mut strides = [0usize; 4];
    for ax in 0..rank {
        dims[4 - rank + ax] = out_shape[ax];
        strides[4 - rank + ax] = os[ax];
    }
    let n: usize = shape.iter().product();
    let mut out = Vec::with_capacity(n);
    let mut map = Vec::with_capacity(n);
    for i0 in 0..dims[0] {
        for i1 in 0..dims[1] {
            for i2 in 0..dims[2] {
                let base = i0 * strides[0] + i1 * strides[1] + i2 * strides[2];
                for i3 in 0..dims[3] {
                    let si = base + i3 * strides[3];
                    out.push(src[si]);
                    map.push(si);
                }
            }
        }
    }
    (out, out_shape, map)
}
