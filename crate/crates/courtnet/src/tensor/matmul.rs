//! Batched matrix product and the affine map built on it.
//!
//! Supported shapes: [M,K]×[K,N], [B,M,K]×[B,K,N], and [B,M,K]×[K,N]
//! (shared right operand). Gradients: dA = dC·Bᵀ, dB = Aᵀ·dC, per batch.

use super::{Scalar, Tensor};

/// c += a·b, row-major, ikj order.
fn gemm<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
}

/// da += dc·bᵀ  (dc: [M,N], b: [K,N], da: [M,K])
fn gemm_nt<T: Scalar>(m: usize, k: usize, n: usize, dc: &[T], b: &[T], da: &mut [T]) {
    for i in 0..m {
        let dcrow = &dc[i * n..(i + 1) * n];
        let darow = &mut da[i * k..(i + 1) * k];
        for kk in 0..k {
            let brow = &b[kk * n..(kk + 1) * n];
            let mut s = T::zero();
            for j in 0..n {
                s += dcrow[j] * brow[j];
            }
            darow[kk] += s;
        }
    }
}

/// db += aᵀ·dc  (a: [M,K], dc: [M,N], db: [K,N])
fn gemm_tn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], dc: &[T], db: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let dcrow = &dc[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            let dbrow = &mut db[kk * n..(kk + 1) * n];
            for j in 0..n {
                dbrow[j] += av * dcrow[j];
            }
        }
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn matmul(&self, other: &Tensor<T>) -> Tensor<T> {
        let sa = self.shape().to_vec();
        let sb = other.shape().to_vec();
        let (batch, m, k, n, b_shared) = match (sa.len(), sb.len()) {
            (2, 2) => {
                assert_eq!(sa[1], sb[0], "matmul inner dims {:?} x {:?}", sa, sb);
                (1, sa[0], sa[1], sb[1], true)
            }
            (3, 3) => {
                assert_eq!(sa[0], sb[0], "matmul batch dims {:?} x {:?}", sa, sb);
                assert_eq!(sa[2], sb[1], "matmul inner dims {:?} x {:?}", sa, sb);
                (sa[0], sa[1], sa[2], sb[2], false)
            }
            (3, 2) => {
                assert_eq!(sa[2], sb[0], "matmul inner dims {:?} x {:?}", sa, sb);
                (sa[0], sa[1], sa[2], sb[1], true)
            }
            _ => panic!("matmul unsupported ranks {:?} x {:?}", sa, sb),
        };
        let ad = self.data_rc();
        let bd = other.data_rc();
        let mut out = vec![T::zero(); batch * m * n];
        for bi in 0..batch {
            let boff = if b_shared { 0 } else { bi * k * n };
            gemm(
                m,
                k,
                n,
                &ad[bi * m * k..(bi + 1) * m * k],
                &bd[boff..boff + k * n],
                &mut out[bi * m * n..(bi + 1) * m * n],
            );
        }
        let out_shape = if sa.len() == 2 {
            vec![m, n]
        } else {
            vec![batch, m, n]
        };
        let a_id = self.track_id();
        let b_id = other.track_id();
        Tensor::from_op(&[self, other], out, out_shape, move |g, store| {
            if let Some(id) = a_id {
                let buf = store.buf_mut(id);
                for bi in 0..batch {
                    let boff = if b_shared { 0 } else { bi * k * n };
                    gemm_nt(
                        m,
                        k,
                        n,
                        &g[bi * m * n..(bi + 1) * m * n],
                        &bd[boff..boff + k * n],
                        &mut buf[bi * m * k..(bi + 1) * m * k],
                    );
                }
            }
            if let Some(id) = b_id {
                let buf = store.buf_mut(id);
                for bi in 0..batch {
                    let boff = if b_shared { 0 } else { bi * k * n };
                    gemm_tn(
                        m,
                        k,
                        n,
                        &ad[bi * m * k..(bi + 1) * m * k],
                        &g[bi * m * n..(bi + 1) * m * n],
                        &mut buf[boff..boff + k * n],
                    );
                }
            }
        })
    }

    /// Affine map over the last axis: x·w + b, any leading shape.
    pub fn linear(&self, w: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
        let s = self.shape().to_vec();
        let d_in = *s.last().unwrap();
        assert_eq!(w.shape().len(), 2, "weight must be [D_in, D_out]");
        assert_eq!(w.shape()[0], d_in, "linear input width mismatch");
        let d_out = w.shape()[1];
        assert_eq!(b.shape(), &[d_out], "bias width mismatch");
        let rows = self.len() / d_in;
        let flat = self.reshape(vec![rows, d_in]);
        let y = flat.matmul(w).add(b);
        let mut out_shape = s;
        *out_shape.last_mut().unwrap() = d_out;
        y.reshape(out_shape)
    }
}
