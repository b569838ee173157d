//! Reusable network pieces: patch embedding/de-embedding, coarse
//! (patch-level, multi-head) attention, fine (intra-patch, channel-axis,
//! grouped) attention, feed-forward, the channel-growing denseblock, and
//! the plain constant-width transformer block.
//!
//! Every forward is a pure function of (input, parameter bank); blocks
//! optionally record their attention maps and working features into a
//! [`ForwardTrace`] for post-hoc analysis.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Channel growth contributed by every denseblock: the block's working
/// width and the width of the feature concatenated onto its input.
pub const DENSE_WIDTH: usize = 32;

/// FFN hidden width multiplier (D -> 4D -> D).
pub const FFN_MULT: usize = 4;

/// Patch-grid geometry shared by the two transformer networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbedConfig {
    pub image_h: usize,
    pub image_w: usize,
    /// patch grid is p×p
    pub grid: usize,
    /// channels per patch pixel in the embedded feature
    pub channel_mult: usize,
}

impl EmbedConfig {
    pub fn new(image_h: usize, image_w: usize, grid: usize, channel_mult: usize) -> Result<Self> {
        let cfg = EmbedConfig {
            image_h,
            image_w,
            grid,
            channel_mult,
        };
        if grid == 0 || channel_mult == 0 {
            return Err(Error::Config("grid and channel_mult must be positive".into()));
        }
        if image_h % grid != 0 || image_w % grid != 0 {
            return Err(Error::Config(format!(
                "patch grid {} must divide image {}x{}",
                grid, image_h, image_w
            )));
        }
        Ok(cfg)
    }

    /// Number of patches P = p².
    pub fn patch_count(&self) -> usize {
        self.grid * self.grid
    }

    /// Pixels per patch, (H/p)·(W/p).
    pub fn patch_pixels(&self) -> usize {
        (self.image_h / self.grid) * (self.image_w / self.grid)
    }

    /// Embedded width C = (H/p)·(W/p)·c.
    pub fn embed_dim(&self) -> usize {
        self.patch_pixels() * self.channel_mult
    }
}

/// Ordered name -> tensor view of one network's parameters, tracked on a
/// tape during training or plain during inference.
pub struct ParamBank<T: Scalar> {
    map: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamBank<T> {
    pub fn new() -> Self {
        ParamBank {
            map: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        let name = name.into();
        let prev = self.map.insert(name.clone(), t);
        assert!(prev.is_none(), "duplicate parameter name {}", name);
    }

    pub fn get(&self, name: &str) -> &Tensor<T> {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {}", name))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.map.iter()
    }
}

impl<T: Scalar> Default for ParamBank<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Attention maps and working features captured during one forward pass.
#[derive(Default)]
pub struct ForwardTrace<T: Scalar> {
    pub blocks: Vec<BlockTrace<T>>,
}

pub struct BlockTrace<T: Scalar> {
    /// [B·n, P, P] row-stochastic maps, one per head.
    pub coarse_maps: Tensor<T>,
    pub heads: usize,
    /// [B·m, D, D] row-stochastic maps, one per group.
    pub fine_maps: Option<Tensor<T>>,
    pub groups: usize,
    /// [B, P, D] feature handed to fine attention (post pre-norm).
    pub fine_input: Option<Tensor<T>>,
}

fn ln_affine<T: Scalar>(x: &Tensor<T>, bank: &ParamBank<T>, prefix: &str) -> Tensor<T> {
    let eps = T::from_f64(1e-5).unwrap();
    x.layernorm(eps)
        .mul(bank.get(&format!("{prefix}.g")))
        .add(bank.get(&format!("{prefix}.b")))
}

fn proj<T: Scalar>(x: &Tensor<T>, bank: &ParamBank<T>, name: &str) -> Tensor<T> {
    x.linear(
        bank.get(&format!("{name}.w")),
        bank.get(&format!("{name}.b")),
    )
}

/// Patch-level scaled-dot-product attention with `heads` heads; the
/// P×P maps select which patches matter. Returns (output, maps [B·n,P,P]).
pub fn coarse_attention<T: Scalar>(
    x: &Tensor<T>,
    bank: &ParamBank<T>,
    prefix: &str,
    heads: usize,
) -> (Tensor<T>, Tensor<T>) {
    let s = x.shape();
    assert_eq!(s.len(), 3, "attention input must be [B,P,D]");
    let (b, p, d) = (s[0], s[1], s[2]);
    assert!(
        d % heads == 0,
        "head count {} must divide width {}",
        heads,
        d
    );
    let dh = d / heads;
    let split = |t: &Tensor<T>| -> Tensor<T> {
        t.reshape(vec![b, p, heads, dh])
            .swap_axes(1, 2)
            .reshape(vec![b * heads, p, dh])
    };
    let q = split(&proj(x, bank, &format!("{prefix}.q")));
    let k = split(&proj(x, bank, &format!("{prefix}.k")));
    let v = split(&proj(x, bank, &format!("{prefix}.v")));
    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
    let att = q
        .matmul(&k.swap_axes(1, 2))
        .scale(scale)
        .softmax(2);
    let out = att
        .matmul(&v)
        .reshape(vec![b, heads, p, dh])
        .swap_axes(1, 2)
        .reshape(vec![b, p, d]);
    (proj(&out, bank, &format!("{prefix}.o")), att)
}

/// Intra-patch attention: patches split into `groups` along the P axis;
/// per group the D×D map QᵀK (softmax along the key-channel axis) weights
/// positions inside each patch. Returns (output, maps [B·m,D,D]).
pub fn fine_attention<T: Scalar>(
    x: &Tensor<T>,
    bank: &ParamBank<T>,
    prefix: &str,
    groups: usize,
) -> (Tensor<T>, Tensor<T>) {
    let s = x.shape();
    assert_eq!(s.len(), 3, "attention input must be [B,P,D]");
    let (b, p, d) = (s[0], s[1], s[2]);
    assert!(
        p % groups == 0,
        "group count {} must divide patch count {}",
        groups,
        p
    );
    let pg = p / groups;
    let split = |t: &Tensor<T>| -> Tensor<T> { t.reshape(vec![b * groups, pg, d]) };
    let q = split(&proj(x, bank, &format!("{prefix}.q")));
    let k = split(&proj(x, bank, &format!("{prefix}.k")));
    let v = split(&proj(x, bank, &format!("{prefix}.v")));
    let scale = T::one() / T::from_usize(pg).unwrap().sqrt();
    let att = q
        .swap_axes(1, 2)
        .matmul(&k)
        .scale(scale)
        .softmax(2);
    let out = v.matmul(&att.swap_axes(1, 2)).reshape(vec![b, p, d]);
    (proj(&out, bank, &format!("{prefix}.o")), att)
}

/// linear D -> 4D, gelu, linear 4D -> D.
pub fn feed_forward<T: Scalar>(x: &Tensor<T>, bank: &ParamBank<T>, prefix: &str) -> Tensor<T> {
    proj(&proj(x, bank, &format!("{prefix}.in")).gelu(), bank, &format!("{prefix}.out"))
}

/// Denseblock: project the input to the 32-wide working feature, run the
/// pre-norm residual sequence coarse attention -> FFN -> fine attention
/// -> FFN, and concatenate the result onto the untouched input along the
/// channel axis.
pub fn denseblock<T: Scalar>(
    f_prev: &Tensor<T>,
    bank: &ParamBank<T>,
    prefix: &str,
    heads: usize,
    groups: usize,
    trace: Option<&mut ForwardTrace<T>>,
) -> Tensor<T> {
    let h0 = proj(f_prev, bank, &format!("{prefix}.proj"));
    let (ca, coarse_maps) = coarse_attention(
        &ln_affine(&h0, bank, &format!("{prefix}.ln1")),
        bank,
        &format!("{prefix}.coarse"),
        heads,
    );
    let h1 = h0.add(&ca);
    let h2 = h1.add(&feed_forward(
        &ln_affine(&h1, bank, &format!("{prefix}.ln2")),
        bank,
        &format!("{prefix}.ffn1"),
    ));
    let fine_in = ln_affine(&h2, bank, &format!("{prefix}.ln3"));
    let (fa, fine_maps) = fine_attention(&fine_in, bank, &format!("{prefix}.fine"), groups);
    let h3 = h2.add(&fa);
    let h4 = h3.add(&feed_forward(
        &ln_affine(&h3, bank, &format!("{prefix}.ln4")),
        bank,
        &format!("{prefix}.ffn2"),
    ));
    if let Some(t) = trace {
        t.blocks.push(BlockTrace {
            coarse_maps: coarse_maps.detach(),
            heads,
            fine_maps: Some(fine_maps.detach()),
            groups,
            fine_input: Some(fine_in.detach()),
        });
    }
    Tensor::concat(&[f_prev, &h4], 2)
}

/// Constant-width pre-norm transformer block: coarse attention then FFN,
/// both residual.
pub fn vit_block<T: Scalar>(
    x: &Tensor<T>,
    bank: &ParamBank<T>,
    prefix: &str,
    heads: usize,
    trace: Option<&mut ForwardTrace<T>>,
) -> Tensor<T> {
    let (ca, coarse_maps) = coarse_attention(
        &ln_affine(x, bank, &format!("{prefix}.ln1")),
        bank,
        &format!("{prefix}.coarse"),
        heads,
    );
    let h1 = x.add(&ca);
    let h2 = h1.add(&feed_forward(
        &ln_affine(&h1, bank, &format!("{prefix}.ln2")),
        bank,
        &format!("{prefix}.ffn"),
    ));
    if let Some(t) = trace {
        t.blocks.push(BlockTrace {
            coarse_maps: coarse_maps.detach(),
            heads,
            fine_maps: None,
            groups: 0,
            fine_input: None,
        });
    }
    h2
}

/// [B,1,H,W] -> [B,P,C]: per-patch linear projection of pixels plus a
/// learned additive positional embedding.
pub fn patch_embed<T: Scalar>(
    image: &Tensor<T>,
    cfg: &EmbedConfig,
    bank: &ParamBank<T>,
) -> Tensor<T> {
    let s = image.shape();
    assert_eq!(
        (s[2], s[3]),
        (cfg.image_h, cfg.image_w),
        "image size {:?} does not match config {}x{}",
        s,
        cfg.image_h,
        cfg.image_w
    );
    proj(&image.extract_patches(cfg.grid), bank, "embed")
        .add(bank.get("embed.pos"))
}

/// [B,P,C_final] -> [B,1,H,W]: per-patch linear projection back to pixel
/// space, patch reassembly, sigmoid. Output values lie in (0,1).
pub fn patch_deembed<T: Scalar>(
    feat: &Tensor<T>,
    cfg: &EmbedConfig,
    bank: &ParamBank<T>,
) -> Tensor<T> {
    assert_eq!(
        feat.shape()[1],
        cfg.patch_count(),
        "patch count mismatch in de-embedding"
    );
    proj(feat, bank, "deembed")
        .assemble_patches(cfg.grid, cfg.image_h, cfg.image_w)
        .sigmoid()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, random_tensor, Tape};

    type T64 = Tensor<f64>;

    fn bank_with<'a>(entries: &[(&str, Vec<usize>)], seed: u64) -> ParamBank<f64> {
        let mut bank = ParamBank::new();
        for (i, (name, shape)) in entries.iter().enumerate() {
            bank.insert(*name, random_tensor(shape, seed + i as u64).scale(0.3));
        }
        bank
    }

    fn attn_entries(prefix: &str, d: usize) -> Vec<(String, Vec<usize>)> {
        let mut v = Vec::new();
        for part in ["q", "k", "v", "o"] {
            v.push((format!("{prefix}.{part}.w"), vec![d, d]));
            v.push((format!("{prefix}.{part}.b"), vec![d]));
        }
        v
    }

    fn attn_bank(prefix: &str, d: usize, seed: u64) -> ParamBank<f64> {
        let entries = attn_entries(prefix, d);
        let refs: Vec<(&str, Vec<usize>)> = entries
            .iter()
            .map(|(n, s)| (n.as_str(), s.clone()))
            .collect();
        bank_with(&refs, seed)
    }

    #[test]
    fn embed_config_arithmetic() {
        let cfg = EmbedConfig::new(56, 56, 14, 1).unwrap();
        assert_eq!(cfg.patch_count(), 196);
        assert_eq!(cfg.embed_dim(), 16);
        let cfg4 = EmbedConfig::new(56, 56, 14, 4).unwrap();
        assert_eq!(cfg4.embed_dim(), 64);
        assert!(EmbedConfig::new(56, 56, 15, 1).is_err());
    }

    #[test]
    fn coarse_attention_maps_are_row_stochastic() {
        let bank = attn_bank("a", 8, 1);
        let x = random_tensor(&[2, 6, 8], 10);
        let (out, maps) = coarse_attention(&x, &bank, "a", 2);
        assert_eq!(out.shape(), &[2, 6, 8]);
        assert_eq!(maps.shape(), &[4, 6, 6]);
        for r in 0..4 * 6 {
            let s: f64 = maps.data()[r * 6..(r + 1) * 6].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn coarse_attention_hand_unrolled_oracle() {
        // P=4, D=4, n=1, Q=K=V=x (identity projections, zero bias):
        // out = softmax(x xᵀ / 2) x with identity output projection.
        let mut bank = ParamBank::new();
        for part in ["q", "k", "v", "o"] {
            bank.insert(format!("a.{part}.w"), T64::eye(4));
            bank.insert(format!("a.{part}.b"), T64::zeros(vec![4]));
        }
        let x = random_tensor(&[1, 4, 4], 20);
        let (out, _) = coarse_attention(&x, &bank, "a", 1);
        // direct scalar computation
        let xd = x.data();
        let mut expect = vec![0.0; 16];
        for i in 0..4 {
            let mut logits = [0.0; 4];
            for j in 0..4 {
                let mut dot = 0.0;
                for c in 0..4 {
                    dot += xd[i * 4 + c] * xd[j * 4 + c];
                }
                logits[j] = dot / 2.0; // sqrt(D/n) = 2
            }
            let mx = logits.iter().cloned().fold(f64::MIN, f64::max);
            let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
            for j in 0..4 {
                let a = (logits[j] - mx).exp() / z;
                for c in 0..4 {
                    expect[i * 4 + c] += a * xd[j * 4 + c];
                }
            }
        }
        for (a, e) in out.data().iter().zip(&expect) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn fine_attention_maps_and_oracle() {
        let bank = attn_bank("f", 3, 2);
        let x = random_tensor(&[1, 4, 3], 30);
        let (out, maps) = fine_attention(&x, &bank, "f", 2);
        assert_eq!(out.shape(), &[1, 4, 3]);
        assert_eq!(maps.shape(), &[2, 3, 3]);
        for r in 0..2 * 3 {
            let s: f64 = maps.data()[r * 3..(r + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        // direct scalar computation of group 0 (rows 0..2 of P)
        let q = x.linear(bank.get("f.q.w"), bank.get("f.q.b"));
        let k = x.linear(bank.get("f.k.w"), bank.get("f.k.b"));
        let v = x.linear(bank.get("f.v.w"), bank.get("f.v.b"));
        let (qd, kd, vd) = (q.data(), k.data(), v.data());
        let pg = 2usize;
        let scale = 1.0 / (pg as f64).sqrt();
        let mut group_out = vec![0.0; pg * 3];
        for qc in 0..3 {
            let mut logits = [0.0; 3];
            for kc in 0..3 {
                let mut dot = 0.0;
                for r in 0..pg {
                    dot += qd[r * 3 + qc] * kd[r * 3 + kc];
                }
                logits[kc] = dot * scale;
            }
            let mx = logits.iter().cloned().fold(f64::MIN, f64::max);
            let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
            for kc in 0..3 {
                let a = (logits[kc] - mx).exp() / z;
                for r in 0..pg {
                    // out = V·Aᵀ: out[r, qc] += v[r, kc] · A[qc, kc]
                    group_out[r * 3 + qc] += vd[r * 3 + kc] * a;
                }
            }
        }
        // compare pre-output-projection by inverting is hard; instead apply o
        let pre = T64::from_vec(group_out, vec![1, pg, 3]);
        let expect = pre.linear(bank.get("f.o.w"), bank.get("f.o.b"));
        for (a, e) in out.data()[..pg * 3].iter().zip(expect.data()) {
            assert!((a - e).abs() < 1e-12, "{} vs {}", a, e);
        }
    }

    #[test]
    fn fine_attention_map_is_32x32_at_dense_width() {
        let bank = attn_bank("f", DENSE_WIDTH, 3);
        let x = random_tensor(&[1, 8, DENSE_WIDTH], 40);
        let (_, maps) = fine_attention(&x, &bank, "f", 4);
        assert_eq!(&maps.shape()[1..], &[32, 32]);
    }

    #[test]
    fn feed_forward_zero_params_and_shape() {
        let mut bank = ParamBank::new();
        bank.insert("ffn.in.w", T64::zeros(vec![8, 32]));
        bank.insert("ffn.in.b", T64::zeros(vec![32]));
        bank.insert("ffn.out.w", T64::zeros(vec![32, 8]));
        bank.insert("ffn.out.b", T64::zeros(vec![8]));
        let x = random_tensor(&[2, 5, 8], 50);
        let y = feed_forward(&x, &bank, "ffn");
        assert_eq!(y.shape(), x.shape());
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn feed_forward_grad() {
        for seed in [1, 2, 3] {
            let x = random_tensor(&[1, 3, 4], seed);
            let w1 = random_tensor(&[4, 16], seed + 10);
            let b1 = random_tensor(&[16], seed + 11);
            let w2 = random_tensor(&[16, 4], seed + 12);
            let b2 = random_tensor(&[4], seed + 13);
            let err = grad_check(&[x, w1, b1, w2, b2], |v| {
                let mut bank = ParamBank::new();
                bank.insert("ffn.in.w", v[1].clone());
                bank.insert("ffn.in.b", v[2].clone());
                bank.insert("ffn.out.w", v[3].clone());
                bank.insert("ffn.out.b", v[4].clone());
                let y = feed_forward(&v[0], &bank, "ffn");
                y.mul(&y).sum_all()
            });
            assert!(err < 1e-4, "seed {}: rel err {}", seed, err);
        }
    }

    fn dense_bank(prefix: &str, c_prev: usize, seed: u64) -> ParamBank<f64> {
        let d = DENSE_WIDTH;
        let mut entries: Vec<(String, Vec<usize>)> = vec![
            (format!("{prefix}.proj.w"), vec![c_prev, d]),
            (format!("{prefix}.proj.b"), vec![d]),
        ];
        for ln in ["ln1", "ln2", "ln3", "ln4"] {
            entries.push((format!("{prefix}.{ln}.g"), vec![d]));
            entries.push((format!("{prefix}.{ln}.b"), vec![d]));
        }
        entries.extend(attn_entries(&format!("{prefix}.coarse"), d));
        entries.extend(attn_entries(&format!("{prefix}.fine"), d));
        for (ffn, win, wout) in [("ffn1", d, d * FFN_MULT), ("ffn2", d, d * FFN_MULT)] {
            entries.push((format!("{prefix}.{ffn}.in.w"), vec![win, wout]));
            entries.push((format!("{prefix}.{ffn}.in.b"), vec![wout]));
            entries.push((format!("{prefix}.{ffn}.out.w"), vec![wout, win]));
            entries.push((format!("{prefix}.{ffn}.out.b"), vec![win]));
        }
        let mut bank = ParamBank::new();
        for (i, (name, shape)) in entries.iter().enumerate() {
            let t = random_tensor(shape, seed + i as u64).scale(0.2);
            // keep layernorm gains near one
            if name.contains(".ln") && name.ends_with(".g") {
                bank.insert(name.clone(), t.add_scalar(1.0));
            } else {
                bank.insert(name.clone(), t);
            }
        }
        bank
    }

    #[test]
    fn denseblock_growth_and_passthrough() {
        let bank = dense_bank("b0", 64, 7);
        let x = random_tensor(&[2, 8, 64], 70);
        let y = denseblock(&x, &bank, "b0", 4, 4, None);
        assert_eq!(y.shape(), &[2, 8, 64 + DENSE_WIDTH]);
        // dense pass-through: first 64 channels equal the input bit-exactly
        let head = y.slice(2, 0, 64);
        assert_eq!(head.data(), x.data());
    }

    #[test]
    fn denseblock_grad_composite() {
        let bank = dense_bank("b0", 8, 8);
        // width-8 input so the check stays fast; full-width composite is
        // exercised in the acceptance suite
        let mut small = ParamBank::new();
        for (n, t) in bank.iter() {
            if n == "b0.proj.w" {
                small.insert(n.clone(), random_tensor(&[8, DENSE_WIDTH], 80).scale(0.2));
            } else {
                small.insert(n.clone(), t.clone());
            }
        }
        let x = random_tensor(&[1, 4, 8], 81);
        let err = grad_check(&[x], |v| {
            let y = denseblock(&v[0], &small, "b0", 4, 4, None);
            y.mul(&y).sum_all()
        });
        assert!(err < 1e-3, "rel err {}", err);
    }

    #[test]
    fn vit_block_zero_params_is_identity() {
        let d = 8;
        let mut bank = ParamBank::new();
        for ln in ["ln1", "ln2"] {
            bank.insert(format!("v.{ln}.g"), T64::full(vec![d], 1.0));
            bank.insert(format!("v.{ln}.b"), T64::zeros(vec![d]));
        }
        for part in ["q", "k", "v", "o"] {
            bank.insert(format!("v.coarse.{part}.w"), T64::zeros(vec![d, d]));
            bank.insert(format!("v.coarse.{part}.b"), T64::zeros(vec![d]));
        }
        bank.insert("v.ffn.in.w", T64::zeros(vec![d, d * FFN_MULT]));
        bank.insert("v.ffn.in.b", T64::zeros(vec![d * FFN_MULT]));
        bank.insert("v.ffn.out.w", T64::zeros(vec![d * FFN_MULT, d]));
        bank.insert("v.ffn.out.b", T64::zeros(vec![d]));
        let x = random_tensor(&[2, 6, d], 90);
        let y = vit_block(&x, &bank, "v", 2, None);
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn patch_embed_zero_everything_is_zero() {
        let cfg = EmbedConfig::new(8, 8, 4, 2).unwrap();
        let mut bank = ParamBank::new();
        bank.insert("embed.w", T64::zeros(vec![cfg.patch_pixels(), cfg.embed_dim()]));
        bank.insert("embed.b", T64::zeros(vec![cfg.embed_dim()]));
        bank.insert("embed.pos", T64::zeros(vec![cfg.patch_count(), cfg.embed_dim()]));
        let img = T64::zeros(vec![1, 1, 8, 8]);
        let f = patch_embed(&img, &cfg, &bank);
        assert_eq!(f.shape(), &[1, 16, 8]);
        assert!(f.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deembed_zero_params_gives_half() {
        let cfg = EmbedConfig::new(8, 8, 4, 2).unwrap();
        let mut bank = ParamBank::new();
        bank.insert("deembed.w", T64::zeros(vec![8, cfg.patch_pixels()]));
        bank.insert("deembed.b", T64::zeros(vec![cfg.patch_pixels()]));
        let f = random_tensor(&[1, 16, 8], 100);
        let y = patch_deembed(&f, &cfg, &bank);
        assert_eq!(y.shape(), &[1, 1, 8, 8]);
        assert!(y.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn embed_deembed_roundtrip_preserves_shape() {
        let cfg = EmbedConfig::new(8, 8, 4, 2).unwrap();
        let mut bank = ParamBank::new();
        bank.insert("embed.w", random_tensor(&[cfg.patch_pixels(), cfg.embed_dim()], 1));
        bank.insert("embed.b", random_tensor(&[cfg.embed_dim()], 2));
        bank.insert(
            "embed.pos",
            random_tensor(&[cfg.patch_count(), cfg.embed_dim()], 3),
        );
        bank.insert("deembed.w", random_tensor(&[cfg.embed_dim(), cfg.patch_pixels()], 4));
        bank.insert("deembed.b", random_tensor(&[cfg.patch_pixels()], 5));
        let img = random_tensor(&[3, 1, 8, 8], 6);
        let y = patch_deembed(&patch_embed(&img, &cfg, &bank), &cfg, &bank);
        assert_eq!(y.shape(), img.shape());
    }

    #[test]
    fn patch_spatial_arrangement_with_crafted_params() {
        // one-hot embed + transpose-style de-embed keep energy in the
        // patch where it was placed
        let cfg = EmbedConfig::new(8, 8, 4, 1).unwrap();
        let px = cfg.patch_pixels(); // 4
        let mut bank = ParamBank::new();
        bank.insert("embed.w", T64::eye(px));
        bank.insert("embed.b", T64::zeros(vec![px]));
        bank.insert("embed.pos", T64::zeros(vec![cfg.patch_count(), px]));
        bank.insert("deembed.w", T64::eye(px).scale(100.0));
        bank.insert("deembed.b", T64::full(vec![px], -50.0));
        // target in patch q = 6 (row 1, col 2 of the 4x4 grid)
        let mut img = vec![0.0; 64];
        img[2 * 8 + 4] = 1.0; // pixel (2,4): patch row 1, col 2, local (0,0)
        let x = T64::from_vec(img, vec![1, 1, 8, 8]);
        let y = patch_deembed(&patch_embed(&x, &cfg, &bank), &cfg, &bank);
        let d = y.data();
        let mut hot = Vec::new();
        for (i, &v) in d.iter().enumerate() {
            if v > 0.5 {
                hot.push(i);
            }
        }
        assert_eq!(hot, vec![2 * 8 + 4]);
    }

    #[test]
    fn trace_collects_maps() {
        let bank = dense_bank("b0", 16, 9);
        let mut b2 = ParamBank::new();
        for (n, t) in bank.iter() {
            if n == "b0.proj.w" {
                b2.insert(n.clone(), random_tensor(&[16, DENSE_WIDTH], 91).scale(0.2));
            } else {
                b2.insert(n.clone(), t.clone());
            }
        }
        let x = random_tensor(&[1, 8, 16], 92);
        let mut trace = ForwardTrace::default();
        let _ = denseblock(&x, &b2, "b0", 4, 4, Some(&mut trace));
        assert_eq!(trace.blocks.len(), 1);
        let bt = &trace.blocks[0];
        assert_eq!(bt.coarse_maps.shape(), &[4, 8, 8]);
        assert_eq!(bt.fine_maps.as_ref().unwrap().shape(), &[4, 32, 32]);
        assert_eq!(bt.fine_input.as_ref().unwrap().shape(), &[1, 8, 32]);
    }

    #[test]
    fn blocks_are_deterministic() {
        let bank = dense_bank("b0", 16, 11);
        let mut b2 = ParamBank::new();
        for (n, t) in bank.iter() {
            if n == "b0.proj.w" {
                b2.insert(n.clone(), random_tensor(&[16, DENSE_WIDTH], 93).scale(0.2));
            } else {
                b2.insert(n.clone(), t.clone());
            }
        }
        let x = random_tensor(&[1, 8, 16], 94);
        let y1 = denseblock(&x, &b2, "b0", 4, 4, None);
        let y2 = denseblock(&x, &b2, "b0", 4, 4, None);
        assert_eq!(y1.data(), y2.data());
    }

    #[test]
    fn tracked_params_receive_grads() {
        let tape: Tape<f64> = Tape::new();
        let bank_plain = attn_bank("a", 8, 12);
        let mut bank = ParamBank::new();
        let mut names = Vec::new();
        for (n, t) in bank_plain.iter() {
            bank.insert(n.clone(), tape.var(t));
            names.push(n.clone());
        }
        let x = random_tensor(&[1, 4, 8], 13);
        let (out, _) = coarse_attention(&x, &bank, "a", 2);
        let loss = out.mul(&out).sum_all();
        let g = loss.backward();
        for n in names {
            assert!(g.wrt(bank.get(&n)).is_some(), "no grad for {}", n);
        }
    }
}
