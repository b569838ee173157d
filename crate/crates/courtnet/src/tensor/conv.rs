//! 2-D convolution (cross-correlation semantics) with gradients for
//! input, kernels, and bias. Desk-scale direct loops.

use super::{Scalar, Tensor};

#[derive(Clone, Copy)]
struct ConvDims {
    b: usize,
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

fn out_extent(x: usize, k: usize, stride: usize, pad: usize) -> usize {
    assert!(
        x + 2 * pad >= k,
        "kernel {} larger than padded input {}",
        k,
        x + 2 * pad
    );
    (x + 2 * pad - k) / stride + 1
}

impl<T: Scalar> Tensor<T> {
    /// x: [B,Ci,H,W], kernels: [Co,Ci,kh,kw], bias: [Co].
    pub fn conv2d(&self, kernels: &Tensor<T>, bias: &Tensor<T>, stride: usize, pad: usize) -> Tensor<T> {
        let sx = self.shape();
        let sw = kernels.shape();
        assert_eq!(sx.len(), 4, "conv2d input must be [B,Ci,H,W]");
        assert_eq!(sw.len(), 4, "conv2d kernels must be [Co,Ci,kh,kw]");
        assert_eq!(sx[1], sw[1], "conv2d channel mismatch {:?} vs {:?}", sx, sw);
        assert!(stride > 0, "conv2d stride must be positive");
        let d = ConvDims {
            b: sx[0],
            ci: sx[1],
            h: sx[2],
            w: sx[3],
            co: sw[0],
            kh: sw[2],
            kw: sw[3],
            stride,
            pad,
            ho: out_extent(sx[2], sw[2], stride, pad),
            wo: out_extent(sx[3], sw[3], stride, pad),
        };
        assert_eq!(bias.shape(), &[d.co], "conv2d bias width mismatch");
        let xd = self.data_rc();
        let wd = kernels.data_rc();
        let bd = bias.data_rc();

        let mut out = vec![T::zero(); d.b * d.co * d.ho * d.wo];
        for bi in 0..d.b {
            for oc in 0..d.co {
                for oy in 0..d.ho {
                    for ox in 0..d.wo {
                        let mut acc = bd[oc];
                        for ic in 0..d.ci {
                            for ky in 0..d.kh {
                                let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                                if iy < 0 || iy >= d.h as isize {
                                    continue;
                                }
                                for kx in 0..d.kw {
                                    let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                                    if ix < 0 || ix >= d.w as isize {
                                        continue;
                                    }
                                    let xi = ((bi * d.ci + ic) * d.h + iy as usize) * d.w
                                        + ix as usize;
                                    let wi = ((oc * d.ci + ic) * d.kh + ky) * d.kw + kx;
                                    acc += xd[xi] * wd[wi];
                                }
                            }
                        }
                        out[((bi * d.co + oc) * d.ho + oy) * d.wo + ox] = acc;
                    }
                }
            }
        }

        let x_id = self.track_id();
        let w_id = kernels.track_id();
        let b_id = bias.track_id();
        Tensor::from_op(
            &[self, kernels, bias],
            out,
            vec![d.b, d.co, d.ho, d.wo],
            move |g, store| {
                if let Some(id) = b_id {
                    let buf = store.buf_mut(id);
                    for bi in 0..d.b {
                        for oc in 0..d.co {
                            let base = (bi * d.co + oc) * d.ho * d.wo;
                            for i in 0..d.ho * d.wo {
                                buf[oc] += g[base + i];
                            }
                        }
                    }
                }
                // dx and dw share the same traversal
                for bi in 0..d.b {
                    for oc in 0..d.co {
                        for oy in 0..d.ho {
                            for ox in 0..d.wo {
                                let go = g[((bi * d.co + oc) * d.ho + oy) * d.wo + ox];
                                for ic in 0..d.ci {
                                    for ky in 0..d.kh {
                                        let iy =
                                            (oy * d.stride + ky) as isize - d.pad as isize;
                                        if iy < 0 || iy >= d.h as isize {
                                            continue;
                                        }
                                        for kx in 0..d.kw {
                                            let ix = (ox * d.stride + kx) as isize
                                                - d.pad as isize;
                                            if ix < 0 || ix >= d.w as isize {
                                                continue;
                                            }
                                            let xi = ((bi * d.ci + ic) * d.h + iy as usize)
                                                * d.w
                                                + ix as usize;
                                            let wi =
                                                ((oc * d.ci + ic) * d.kh + ky) * d.kw + kx;
                                            if let Some(id) = x_id {
                                                store.buf_mut(id)[xi] += go * wd[wi];
                                            }
                                            if let Some(id) = w_id {
                                                store.buf_mut(id)[wi] += go * xd[xi];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            },
        )
    }
}
