//! The three networks and the fusion rule: prosecution (densely
//! connected transformer), defendant (plain ViT), jury (conv + FC
//! confidence head), and the confidence-weighted combination of the two
//! detection masks.

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::blocks::{
    denseblock, patch_deembed, patch_embed, vit_block, EmbedConfig, ForwardTrace, ParamBank,
    DENSE_WIDTH, FFN_MULT,
};
use crate::error::{Error, Result};
use crate::{Tape, Tensor};

/// Sigmoid-output bias prior: detections are sparse, so fresh networks
/// should predict mostly background.
const OUTPUT_BIAS_PRIOR: f64 = -4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetworkKind {
    Prosecution,
    Defendant,
    Jury,
}

impl NetworkKind {
    pub fn tag(self) -> u8 {
        match self {
            NetworkKind::Prosecution => 0,
            NetworkKind::Defendant => 1,
            NetworkKind::Jury => 2,
        }
    }

    pub fn from_tag(t: u8) -> Result<Self> {
        match t {
            0 => Ok(NetworkKind::Prosecution),
            1 => Ok(NetworkKind::Defendant),
            2 => Ok(NetworkKind::Jury),
            _ => Err(Error::Data(format!("unknown network tag {}", t))),
        }
    }
}

/// One named, shaped parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Named, ordered parameter collection for one network.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub kind: NetworkKind,
    entries: IndexMap<String, ParamTensor>,
}

impl ModelParams {
    pub fn new(kind: NetworkKind) -> Self {
        ModelParams {
            kind,
            entries: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) {
        let name = name.into();
        assert_eq!(
            shape.iter().product::<usize>(),
            values.len(),
            "parameter {} shape/data mismatch",
            name
        );
        let prev = self.entries.insert(name.clone(), ParamTensor { shape, values });
        assert!(prev.is_none(), "duplicate parameter {}", name);
    }

    pub fn get(&self, name: &str) -> &ParamTensor {
        self.entries
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {}", name))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut ParamTensor {
        self.entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("missing parameter {}", name))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamTensor)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ParamTensor)> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Tensor view of the parameters, tracked on `tape` when given.
    pub fn bank(&self, tape: Option<&Tape>) -> ParamBank<f64> {
        let mut bank = ParamBank::new();
        for (name, p) in self.entries.iter() {
            let t = Tensor::from_vec(p.values.clone(), p.shape.clone());
            match tape {
                Some(tape) => bank.insert(name.clone(), tape.var(&t)),
                None => bank.insert(name.clone(), t),
            }
        }
        bank
    }
}

/// Full model configuration. Defaults follow the desk-scale toy setup:
/// 56×56 inputs, 14×14 patch grid, channel multiplier 4 (embed width 64),
/// 4 denseblocks / ViT blocks, 4 heads, 4 groups.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CourtNetConfig {
    pub embed: EmbedConfig,
    pub blocks: usize,
    pub heads: usize,
    pub groups: usize,
    pub jury_channels: [usize; 4],
    pub jury_fc: [usize; 2],
    pub threshold: f64,
}

impl Default for CourtNetConfig {
    fn default() -> Self {
        CourtNetConfig {
            embed: EmbedConfig::new(56, 56, 14, 4).expect("default embed config"),
            blocks: 4,
            heads: 4,
            groups: 4,
            jury_channels: [16, 32, 64, 64],
            jury_fc: [256, 64],
            threshold: 0.5,
        }
    }
}

impl CourtNetConfig {
    /// Prosecution feature width after all denseblocks.
    pub fn final_width(&self) -> usize {
        self.embed.embed_dim() + DENSE_WIDTH * self.blocks
    }

    /// Spatial side lengths after each stride-2 jury conv layer.
    fn jury_spatial(&self) -> Result<Vec<(usize, usize)>> {
        let (mut h, mut w) = (self.embed.image_h, self.embed.image_w);
        let mut sizes = Vec::new();
        for i in 0..4 {
            if h + 2 < 3 || w + 2 < 3 {
                return Err(Error::Config(format!(
                    "image too small for jury conv layer {}",
                    i + 1
                )));
            }
            h = (h + 2 - 3) / 2 + 1;
            w = (w + 2 - 3) / 2 + 1;
            if h == 0 || w == 0 {
                return Err(Error::Config(format!(
                    "image too small for jury conv layer {}",
                    i + 1
                )));
            }
            sizes.push((h, w));
        }
        Ok(sizes)
    }

    /// Flattened width entering the jury's fully connected stack.
    pub fn jury_flat(&self) -> Result<usize> {
        let last = *self.jury_spatial()?.last().unwrap();
        Ok(self.jury_channels[3] * last.0 * last.1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 {
            return Err(Error::Config("block count must be positive".into()));
        }
        if self.embed.embed_dim() % self.heads != 0 || DENSE_WIDTH % self.heads != 0 {
            return Err(Error::Config(format!(
                "head count {} must divide widths {} and {}",
                self.heads,
                self.embed.embed_dim(),
                DENSE_WIDTH
            )));
        }
        if self.embed.patch_count() % self.groups != 0 {
            return Err(Error::Config(format!(
                "group count {} must divide patch count {}",
                self.groups,
                self.embed.patch_count()
            )));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config("threshold must lie in [0,1]".into()));
        }
        self.jury_flat()?;
        Ok(())
    }
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// fan-in-scaled normal weights
    fn weight(&mut self, params: &mut ModelParams, name: &str, shape: Vec<usize>) {
        let fan_in: usize = if shape.len() == 4 {
            shape[1] * shape[2] * shape[3] // conv kernels [Co,Ci,kh,kw]
        } else {
            shape[0]
        };
        let std = 1.0 / (fan_in as f64).sqrt();
        let dist = Normal::new(0.0, std).unwrap();
        let n: usize = shape.iter().product();
        let values: Vec<f64> = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        params.insert(name, shape, values);
    }

    fn zeros(&mut self, params: &mut ModelParams, name: &str, shape: Vec<usize>) {
        let n: usize = shape.iter().product();
        params.insert(name, shape, vec![0.0; n]);
    }

    fn consts(&mut self, params: &mut ModelParams, name: &str, shape: Vec<usize>, v: f64) {
        let n: usize = shape.iter().product();
        params.insert(name, shape, vec![v; n]);
    }

    fn pos_embed(&mut self, params: &mut ModelParams, name: &str, shape: Vec<usize>) {
        let dist = Normal::new(0.0, 0.02).unwrap();
        let n: usize = shape.iter().product();
        let values: Vec<f64> = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        params.insert(name, shape, values);
    }

    fn layernorm(&mut self, params: &mut ModelParams, prefix: &str, d: usize) {
        self.consts(params, &format!("{prefix}.g"), vec![d], 1.0);
        self.zeros(params, &format!("{prefix}.b"), vec![d]);
    }

    fn attention(&mut self, params: &mut ModelParams, prefix: &str, d: usize) {
        for part in ["q", "k", "v", "o"] {
            self.weight(params, &format!("{prefix}.{part}.w"), vec![d, d]);
            self.zeros(params, &format!("{prefix}.{part}.b"), vec![d]);
        }
    }

    fn ffn(&mut self, params: &mut ModelParams, prefix: &str, d: usize) {
        self.weight(params, &format!("{prefix}.in.w"), vec![d, d * FFN_MULT]);
        self.zeros(params, &format!("{prefix}.in.b"), vec![d * FFN_MULT]);
        self.weight(params, &format!("{prefix}.out.w"), vec![d * FFN_MULT, d]);
        self.zeros(params, &format!("{prefix}.out.b"), vec![d]);
    }
}

/// Fresh prosecution parameters: embedding, `blocks` denseblocks with
/// channel growth C_i = C_{i-1} + 32, de-embedding from the final width.
pub fn init_prosecution(cfg: &CourtNetConfig, seed: u64) -> ModelParams {
    let mut params = ModelParams::new(NetworkKind::Prosecution);
    let mut init = Init::new(seed);
    let c0 = cfg.embed.embed_dim();
    let px = cfg.embed.patch_pixels();
    init.weight(&mut params, "embed.w", vec![px, c0]);
    init.zeros(&mut params, "embed.b", vec![c0]);
    init.pos_embed(&mut params, "embed.pos", vec![cfg.embed.patch_count(), c0]);
    let mut c = c0;
    for i in 0..cfg.blocks {
        let p = format!("block{i}");
        init.weight(&mut params, &format!("{p}.proj.w"), vec![c, DENSE_WIDTH]);
        init.zeros(&mut params, &format!("{p}.proj.b"), vec![DENSE_WIDTH]);
        for ln in ["ln1", "ln2", "ln3", "ln4"] {
            init.layernorm(&mut params, &format!("{p}.{ln}"), DENSE_WIDTH);
        }
        init.attention(&mut params, &format!("{p}.coarse"), DENSE_WIDTH);
        init.ffn(&mut params, &format!("{p}.ffn1"), DENSE_WIDTH);
        init.attention(&mut params, &format!("{p}.fine"), DENSE_WIDTH);
        init.ffn(&mut params, &format!("{p}.ffn2"), DENSE_WIDTH);
        c += DENSE_WIDTH;
    }
    init.weight(&mut params, "deembed.w", vec![c, px]);
    init.consts(&mut params, "deembed.b", vec![px], OUTPUT_BIAS_PRIOR);
    params
}

/// Fresh defendant parameters: embedding, `blocks` constant-width ViT
/// blocks, de-embedding.
pub fn init_defendant(cfg: &CourtNetConfig, seed: u64) -> ModelParams {
    let mut params = ModelParams::new(NetworkKind::Defendant);
    let mut init = Init::new(seed);
    let c0 = cfg.embed.embed_dim();
    let px = cfg.embed.patch_pixels();
    init.weight(&mut params, "embed.w", vec![px, c0]);
    init.zeros(&mut params, "embed.b", vec![c0]);
    init.pos_embed(&mut params, "embed.pos", vec![cfg.embed.patch_count(), c0]);
    for i in 0..cfg.blocks {
        let p = format!("block{i}");
        init.layernorm(&mut params, &format!("{p}.ln1"), c0);
        init.attention(&mut params, &format!("{p}.coarse"), c0);
        init.layernorm(&mut params, &format!("{p}.ln2"), c0);
        init.ffn(&mut params, &format!("{p}.ffn"), c0);
    }
    init.weight(&mut params, "deembed.w", vec![c0, px]);
    init.consts(&mut params, "deembed.b", vec![px], OUTPUT_BIAS_PRIOR);
    params
}

/// Fresh jury parameters: 4 stride-2 convs then 3 fully connected layers
/// ending in a single sigmoid unit.
pub fn init_jury(cfg: &CourtNetConfig, seed: u64) -> Result<ModelParams> {
    let mut params = ModelParams::new(NetworkKind::Jury);
    let mut init = Init::new(seed);
    let mut ci = 2; // image + candidate mask
    for (i, &co) in cfg.jury_channels.iter().enumerate() {
        init.weight(&mut params, &format!("conv{}.w", i + 1), vec![co, ci, 3, 3]);
        init.zeros(&mut params, &format!("conv{}.b", i + 1), vec![co]);
        ci = co;
    }
    let flat = cfg.jury_flat()?;
    init.weight(&mut params, "fc1.w", vec![flat, cfg.jury_fc[0]]);
    init.zeros(&mut params, "fc1.b", vec![cfg.jury_fc[0]]);
    init.weight(&mut params, "fc2.w", vec![cfg.jury_fc[0], cfg.jury_fc[1]]);
    init.zeros(&mut params, "fc2.b", vec![cfg.jury_fc[1]]);
    init.weight(&mut params, "fc3.w", vec![cfg.jury_fc[1], 1]);
    init.zeros(&mut params, "fc3.b", vec![1]);
    Ok(params)
}

/// patch_embed -> N denseblocks -> patch_deembed; output in (0,1).
pub fn prosecution_forward(
    cfg: &CourtNetConfig,
    bank: &ParamBank<f64>,
    x: &Tensor,
    mut trace: Option<&mut ForwardTrace<f64>>,
) -> Tensor {
    let mut f = patch_embed(x, &cfg.embed, bank);
    for i in 0..cfg.blocks {
        f = denseblock(
            &f,
            bank,
            &format!("block{i}"),
            cfg.heads,
            cfg.groups,
            trace.as_deref_mut(),
        );
    }
    patch_deembed(&f, &cfg.embed, bank)
}

/// patch_embed -> N constant-width blocks -> patch_deembed.
pub fn defendant_forward(
    cfg: &CourtNetConfig,
    bank: &ParamBank<f64>,
    x: &Tensor,
    mut trace: Option<&mut ForwardTrace<f64>>,
) -> Tensor {
    let mut f = patch_embed(x, &cfg.embed, bank);
    for i in 0..cfg.blocks {
        f = vit_block(&f, bank, &format!("block{i}"), cfg.heads, trace.as_deref_mut());
    }
    patch_deembed(&f, &cfg.embed, bank)
}

/// Confidence in a candidate mask given the scene: the image and the
/// candidate are stacked as a 2-channel input; 4 stride-2 relu convs,
/// then 3 fully connected layers ending in one sigmoid unit per batch
/// element. Output shape [B], values strictly in (0,1).
pub fn jury_confidence(
    _cfg: &CourtNetConfig,
    bank: &ParamBank<f64>,
    x: &Tensor,
    y_candidate: &Tensor,
) -> Tensor {
    assert_eq!(
        x.shape(),
        y_candidate.shape(),
        "jury inputs must share shape"
    );
    let b = x.shape()[0];
    let mut h = Tensor::concat(&[x, y_candidate], 1);
    for i in 1..=4 {
        h = h
            .conv2d(
                bank.get(&format!("conv{i}.w")),
                bank.get(&format!("conv{i}.b")),
                2,
                1,
            )
            .relu();
    }
    let flat = h.len() / b;
    let h = h.reshape(vec![b, flat]);
    let h = h.linear(bank.get("fc1.w"), bank.get("fc1.b")).relu();
    let h = h.linear(bank.get("fc2.w"), bank.get("fc2.b")).relu();
    h.linear(bank.get("fc3.w"), bank.get("fc3.b"))
        .sigmoid()
        .reshape(vec![b])
}

/// Per-batch-element fusion weights w_p = c_p/(c_p+c_d), w_d = 1-w_p;
/// both confidences zero falls back to equal weights.
pub fn fusion_weights(c_p: &[f64], c_d: &[f64]) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(c_p.len(), c_d.len());
    let mut wp = Vec::with_capacity(c_p.len());
    let mut wd = Vec::with_capacity(c_p.len());
    for (&p, &d) in c_p.iter().zip(c_d) {
        assert!(p >= 0.0 && d >= 0.0, "confidences must be non-negative");
        let s = p + d;
        if s > 0.0 {
            // the complement keeps the pair summing to 1 exactly
            let w = p / s;
            wp.push(w);
            wd.push(1.0 - w);
        } else {
            wp.push(0.5);
            wd.push(0.5);
        }
    }
    (wp, wd)
}

/// Confidence-weighted sum of the two candidate maps (inference-side;
/// not recorded on any tape).
pub fn fuse(y_p: &Tensor, y_d: &Tensor, c_p: &Tensor, c_d: &Tensor) -> Tensor {
    assert_eq!(y_p.shape(), y_d.shape(), "fuse candidate shape mismatch");
    let b = y_p.shape()[0];
    assert_eq!(c_p.shape(), &[b], "confidence shape mismatch");
    assert_eq!(c_d.shape(), &[b], "confidence shape mismatch");
    let (wp, wd) = fusion_weights(c_p.data(), c_d.data());
    let per = y_p.len() / b;
    let mut out = Vec::with_capacity(y_p.len());
    let (pd, dd) = (y_p.data(), y_d.data());
    for bi in 0..b {
        for i in 0..per {
            out.push(wp[bi] * pd[bi * per + i] + wd[bi] * dd[bi * per + i]);
        }
    }
    Tensor::from_vec(out, y_p.shape().to_vec())
}

/// Binarize a soft map at `threshold` (strictly greater than).
pub fn binarize(y: &Tensor, threshold: f64) -> Tensor {
    let out: Vec<f64> = y
        .data()
        .iter()
        .map(|&v| if v > threshold { 1.0 } else { 0.0 })
        .collect();
    Tensor::from_vec(out, y.shape().to_vec())
}

/// The complete model: three parameter sets sharing one configuration.
#[derive(Clone)]
pub struct CourtNet {
    pub cfg: CourtNetConfig,
    pub prosecution: ModelParams,
    pub defendant: ModelParams,
    pub jury: ModelParams,
}

/// Outputs of one full inference pass.
pub struct Detection {
    pub y_p: Tensor,
    pub y_d: Tensor,
    pub c_p: Tensor,
    pub c_d: Tensor,
    pub fused: Tensor,
    pub mask: Tensor,
}

impl CourtNet {
    /// Randomly initialized model; sub-network seeds are derived from
    /// `seed` so the three networks start decorrelated.
    pub fn new(cfg: CourtNetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(CourtNet {
            cfg,
            prosecution: init_prosecution(&cfg, seed ^ 0x50524f53),
            defendant: init_defendant(&cfg, seed ^ 0x44454645),
            jury: init_jury(&cfg, seed ^ 0x4a555259)?,
        })
    }

    pub fn infer_prosecution(&self, x: &Tensor) -> Tensor {
        prosecution_forward(&self.cfg, &self.prosecution.bank(None), x, None)
    }

    pub fn infer_defendant(&self, x: &Tensor) -> Tensor {
        defendant_forward(&self.cfg, &self.defendant.bank(None), x, None)
    }

    pub fn infer_confidence(&self, x: &Tensor, candidate: &Tensor) -> Tensor {
        jury_confidence(&self.cfg, &self.jury.bank(None), x, candidate)
    }

    /// Full pipeline: both detectors, jury weighting, fusion, and the
    /// binarized mask. `use_jury = false` averages the two maps instead
    /// (the jury-ablated variant).
    pub fn detect(&self, x: &Tensor, use_jury: bool) -> Detection {
        let y_p = self.infer_prosecution(x);
        let y_d = self.infer_defendant(x);
        let b = x.shape()[0];
        let (c_p, c_d) = if use_jury {
            (
                self.infer_confidence(x, &y_p),
                self.infer_confidence(x, &y_d),
            )
        } else {
            (Tensor::full(vec![b], 0.5), Tensor::full(vec![b], 0.5))
        };
        let fused = fuse(&y_p, &y_d, &c_p, &c_d);
        let mask = binarize(&fused, self.cfg.threshold);
        Detection {
            y_p,
            y_d,
            c_p,
            c_d,
            fused,
            mask,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> CourtNetConfig {
        CourtNetConfig {
            embed: EmbedConfig::new(16, 16, 4, 4).unwrap(),
            blocks: 2,
            heads: 4,
            groups: 4,
            jury_channels: [4, 8, 8, 8],
            jury_fc: [16, 8],
            threshold: 0.5,
        }
    }

    #[test]
    fn default_config_is_valid() {
        let cfg = CourtNetConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.embed.patch_count(), 196);
        assert_eq!(cfg.embed.embed_dim(), 64);
        assert_eq!(cfg.jury_flat().unwrap(), 64 * 4 * 4);
    }

    #[test]
    fn final_width_growth() {
        let mut cfg = CourtNetConfig::default();
        cfg.blocks = 12;
        assert_eq!(cfg.final_width(), 64 + 384);
    }

    #[test]
    fn prosecution_output_shape_and_range() {
        let cfg = tiny_cfg();
        let net = CourtNet::new(cfg, 1).unwrap();
        let x = Tensor::full(vec![2, 1, 16, 16], 0.3);
        let y = net.infer_prosecution(&x);
        assert_eq!(y.shape(), &[2, 1, 16, 16]);
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn defendant_output_shape_and_range() {
        let cfg = tiny_cfg();
        let net = CourtNet::new(cfg, 1).unwrap();
        let x = Tensor::full(vec![1, 1, 16, 16], 0.7);
        let y = net.infer_defendant(&x);
        assert_eq!(y.shape(), &[1, 1, 16, 16]);
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn jury_confidence_in_open_interval() {
        let cfg = tiny_cfg();
        let net = CourtNet::new(cfg, 2).unwrap();
        let x = Tensor::full(vec![3, 1, 16, 16], 0.4);
        let y = Tensor::full(vec![3, 1, 16, 16], 0.9);
        let c = net.infer_confidence(&x, &y);
        assert_eq!(c.shape(), &[3]);
        assert!(c.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn jury_zero_final_layer_gives_half() {
        let cfg = tiny_cfg();
        let mut net = CourtNet::new(cfg, 3).unwrap();
        let p = net.jury.get_mut("fc3.w");
        p.values.iter_mut().for_each(|v| *v = 0.0);
        let p = net.jury.get_mut("fc3.b");
        p.values.iter_mut().for_each(|v| *v = 0.0);
        let x = Tensor::full(vec![2, 1, 16, 16], 0.4);
        let y = Tensor::full(vec![2, 1, 16, 16], 0.1);
        let c = net.infer_confidence(&x, &y);
        assert!(c.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn jury_spatial_arithmetic_56() {
        // 56 -> 28 -> 14 -> 7 -> 4 with pad 1, stride 2, kernel 3
        let cfg = CourtNetConfig::default();
        let sizes = cfg.jury_spatial().unwrap();
        assert_eq!(sizes, vec![(28, 28), (14, 14), (7, 7), (4, 4)]);
    }

    #[test]
    fn fuse_equal_confidence_is_mean() {
        let y_p = Tensor::from_vec(vec![0.0, 1.0, 0.4, 0.6], vec![1, 1, 2, 2]);
        let y_d = Tensor::from_vec(vec![1.0, 0.0, 0.8, 0.2], vec![1, 1, 2, 2]);
        let c = Tensor::from_vec(vec![0.37], vec![1]);
        let f = fuse(&y_p, &y_d, &c, &c);
        for (v, e) in f.data().iter().zip([0.5, 0.5, 0.6, 0.4]) {
            assert!((v - e).abs() < 1e-12);
        }
    }

    #[test]
    fn fuse_weights_normalized_and_fallback() {
        let (wp, wd) = fusion_weights(&[0.96, 0.0], &[0.04, 0.0]);
        assert!((wp[0] - 0.96).abs() < 1e-12 && (wd[0] - 0.04).abs() < 1e-12);
        assert_eq!((wp[1], wd[1]), (0.5, 0.5));
        for (a, b) in wp.iter().zip(&wd) {
            assert_eq!(a + b, 1.0);
        }
    }

    #[test]
    fn fuse_monotone_toward_prosecution() {
        let y_p = Tensor::full(vec![1, 1, 2, 2], 1.0);
        let y_d = Tensor::full(vec![1, 1, 2, 2], 0.0);
        let mut last = -1.0;
        for cp in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let f = fuse(
                &y_p,
                &y_d,
                &Tensor::from_vec(vec![cp], vec![1]),
                &Tensor::from_vec(vec![0.5], vec![1]),
            );
            assert!(f.data()[0] > last);
            last = f.data()[0];
        }
    }

    #[test]
    fn detect_emits_binary_mask() {
        let cfg = tiny_cfg();
        let net = CourtNet::new(cfg, 5).unwrap();
        let x = Tensor::full(vec![1, 1, 16, 16], 0.2);
        let det = net.detect(&x, true);
        assert!(det.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert_eq!(det.mask.shape(), x.shape());
        // low-prior init: fused map is near zero, mask all zero
        assert!(det.mask.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = tiny_cfg();
        let a = CourtNet::new(cfg, 42).unwrap();
        let b = CourtNet::new(cfg, 42).unwrap();
        let x = Tensor::full(vec![1, 1, 16, 16], 0.6);
        assert_eq!(
            a.infer_prosecution(&x).data(),
            b.infer_prosecution(&x).data()
        );
        assert_eq!(a.infer_defendant(&x).data(), b.infer_defendant(&x).data());
        let y = a.infer_prosecution(&x);
        assert_eq!(
            a.infer_confidence(&x, &y).data(),
            b.infer_confidence(&x, &y).data()
        );
    }

    #[test]
    fn networks_start_decorrelated() {
        let net = CourtNet::new(tiny_cfg(), 7).unwrap();
        let pw = &net.prosecution.get("embed.w").values;
        let dw = &net.defendant.get("embed.w").values;
        assert_ne!(pw, dw);
    }
}
