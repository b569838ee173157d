//! Adam with linear warm-up, the alternating three-network training
//! loop (jury, then prosecution, then defendant, once each per batch),
//! and binary checkpoint persistence.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::blocks::{EmbedConfig, ParamBank};
use crate::data::Sample;
use crate::loss::{
    adaptive_balance_loss, jury_loss, prosecution_loss, soft_pr, soft_re, LossConfig,
};
use crate::model::{
    defendant_forward, jury_confidence, prosecution_forward, CourtNet, CourtNetConfig,
    ModelParams, NetworkKind,
};
use crate::{Error, Gradients, Result, Tape, Tensor};

/// Linear warm-up to a constant plateau.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub warmup_steps: u64,
    pub lr_start: f64,
    pub lr_max: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            warmup_steps: 200,
            lr_start: 1e-7,
            lr_max: 2.5e-5,
        }
    }
}

/// lr interpolated lr_start→lr_max over the warm-up, then constant.
pub fn lr_at(step: u64, s: &Schedule) -> f64 {
    if s.warmup_steps == 0 || step >= s.warmup_steps {
        return s.lr_max;
    }
    s.lr_start + (s.lr_max - s.lr_start) * step as f64 / s.warmup_steps as f64
}

/// Adam moment buffers for one network, keyed by parameter name.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: IndexMap<String, Vec<f64>>,
    v: IndexMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new() -> Self {
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: IndexMap::new(),
            v: IndexMap::new(),
        }
    }
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new()
    }
}

/// One bias-corrected Adam update. Parameters absent from `grads` get
/// a zero gradient (their moments still decay).
pub fn adam_step(
    params: &mut ModelParams,
    grads: &IndexMap<String, Vec<f64>>,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let zero: Vec<f64> = Vec::new();
    for (name, p) in params.iter_mut() {
        let g = grads.get(name).unwrap_or(&zero);
        if !g.is_empty() && g.len() != p.values.len() {
            return Err(Error::Numeric(format!(
                "gradient for {} has {} values, parameter has {}",
                name,
                g.len(),
                p.values.len()
            )));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("NaN gradient in parameter {name}")));
        }
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; p.values.len()]);
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; p.values.len()]);
        for i in 0..p.values.len() {
            let gi = g.get(i).copied().unwrap_or(0.0);
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
            p.values[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Pulls each tracked parameter's gradient out of a backward pass,
/// erroring (with the parameter's name) on non-finite values.
fn collect_grads(
    params: &ModelParams,
    bank: &ParamBank<f64>,
    grads: &Gradients,
) -> Result<IndexMap<String, Vec<f64>>> {
    let mut out = IndexMap::new();
    for (name, _) in params.iter() {
        if let Some(g) = grads.wrt(bank.get(name)) {
            if g.has_nan() {
                return Err(Error::Numeric(format!("NaN gradient in parameter {name}")));
            }
            out.insert(name.clone(), g.data().to_vec());
        }
    }
    Ok(out)
}

/// Everything the training loop tunes and how.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub loss: LossConfig,
    pub schedule: Schedule,
    /// With the jury disabled, the confidence terms drop from the
    /// losses and inference fuses by plain mean.
    pub use_jury: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 4,
            loss: LossConfig::default(),
            schedule: Schedule::default(),
            use_jury: true,
            seed: 0,
        }
    }
}

/// Per-epoch aggregates; `step_losses_p` keeps the prosecution loss of
/// every batch for fluctuation analysis.
#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: u64,
    pub loss_p: f64,
    pub loss_d: f64,
    pub loss_j: f64,
    pub soft_pr: f64,
    pub soft_re: f64,
    pub lr: f64,
    pub step_losses_p: Vec<f64>,
}

impl EpochStats {
    pub const CSV_HEADER: &'static str = "epoch,loss_p,loss_d,loss_j,soft_pr,soft_re,lr";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.8},{:.8},{:.8},{:.6},{:.6},{:.3e}",
            self.epoch, self.loss_p, self.loss_d, self.loss_j, self.soft_pr, self.soft_re, self.lr
        )
    }

    /// Appends to a CSV log, writing the header on first touch.
    pub fn append_log(&self, path: &Path) -> Result<()> {
        let mut text = if path.exists() {
            fs::read_to_string(path)?
        } else {
            format!("{}\n", Self::CSV_HEADER)
        };
        text.push_str(&self.csv_row());
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }
}

/// Model plus optimizer and progress state; the unit that checkpoints.
pub struct Trainer {
    pub net: CourtNet,
    pub cfg: TrainConfig,
    pub opt_p: AdamState,
    pub opt_d: AdamState,
    pub opt_j: AdamState,
    pub epoch: u64,
    pub global_step: u64,
}

fn batch_tensors(samples: &[&Sample], h: usize, w: usize) -> Result<(Tensor, Tensor)> {
    let b = samples.len();
    let mut xs = Vec::with_capacity(b * h * w);
    let mut ys = Vec::with_capacity(b * h * w);
    for s in samples {
        if s.image.shape() != [h, w] {
            return Err(Error::Data(format!(
                "sample shape {:?} does not match model input {}x{}",
                s.image.shape(),
                h,
                w
            )));
        }
        xs.extend_from_slice(s.image.data());
        ys.extend_from_slice(s.mask.data());
    }
    Ok((
        Tensor::from_vec(xs, vec![b, 1, h, w]),
        Tensor::from_vec(ys, vec![b, 1, h, w]),
    ))
}

impl Trainer {
    pub fn new(net: CourtNet, cfg: TrainConfig) -> Self {
        Trainer {
            net,
            cfg,
            opt_p: AdamState::new(),
            opt_d: AdamState::new(),
            opt_j: AdamState::new(),
            epoch: 0,
            global_step: 0,
        }
    }

    fn check_finite(&self, loss: f64, what: &str) -> Result<()> {
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("{what} loss diverged to {loss}")));
        }
        Ok(())
    }

    /// Jury update on one batch: the ground truth scores label 1, the
    /// two detached detector outputs score label 0. Detector parameters
    /// are never on this tape.
    pub fn jury_step(&mut self, x: &Tensor, y_hat: &Tensor, lr: f64) -> Result<f64> {
        let y_p = prosecution_forward(&self.net.cfg, &self.net.prosecution.bank(None), x, None);
        let y_d = defendant_forward(&self.net.cfg, &self.net.defendant.bank(None), x, None);
        let tape = Tape::new();
        let bank = self.net.jury.bank(Some(&tape));
        let eps = self.cfg.loss.epsilon;
        let l_true = jury_loss(&jury_confidence(&self.net.cfg, &bank, x, y_hat), 1.0, eps);
        let l_p = jury_loss(&jury_confidence(&self.net.cfg, &bank, x, &y_p), 0.0, eps);
        let l_d = jury_loss(&jury_confidence(&self.net.cfg, &bank, x, &y_d), 0.0, eps);
        let loss = l_true.add(&l_p).add(&l_d).scale(1.0 / 3.0);
        let value = loss.item();
        self.check_finite(value, "jury")?;
        let grads = loss.backward();
        let g = collect_grads(&self.net.jury, &bank, &grads)?;
        adam_step(&mut self.net.jury, &g, &mut self.opt_j, lr)?;
        Ok(value)
    }

    fn detector_step(&mut self, kind: NetworkKind, x: &Tensor, y_hat: &Tensor, lr: f64)
        -> Result<(f64, f64, f64)> {
        let tape = Tape::new();
        let params = match kind {
            NetworkKind::Prosecution => &self.net.prosecution,
            NetworkKind::Defendant => &self.net.defendant,
            NetworkKind::Jury => unreachable!("jury is not a detector"),
        };
        let bank = params.bank(Some(&tape));
        let y = match kind {
            NetworkKind::Prosecution => prosecution_forward(&self.net.cfg, &bank, x, None),
            _ => defendant_forward(&self.net.cfg, &bank, x, None),
        };
        let lcfg = &self.cfg.loss;
        let loss = if self.cfg.use_jury {
            // jury parameters untracked: the confidence term shapes the
            // detector without moving the jury
            let c = jury_confidence(&self.net.cfg, &self.net.jury.bank(None), x, &y);
            prosecution_loss(&y, y_hat, &c, lcfg)
        } else {
            let pr = soft_pr(&y, y_hat, lcfg.epsilon);
            let re = soft_re(&y, y_hat, lcfg.epsilon);
            adaptive_balance_loss(&pr, &re, lcfg.gamma).scale(lcfg.abl_weight)
        };
        let value = loss.item();
        self.check_finite(value, "detector")?;
        let grads = loss.backward();
        let g = collect_grads(params, &bank, &grads)?;
        let yd = y.detach();
        let pr = soft_pr(&yd, y_hat, lcfg.epsilon).item();
        let re = soft_re(&yd, y_hat, lcfg.epsilon).item();
        match kind {
            NetworkKind::Prosecution => {
                adam_step(&mut self.net.prosecution, &g, &mut self.opt_p, lr)?
            }
            _ => adam_step(&mut self.net.defendant, &g, &mut self.opt_d, lr)?,
        }
        Ok((value, pr, re))
    }

    pub fn prosecution_step(&mut self, x: &Tensor, y_hat: &Tensor, lr: f64)
        -> Result<(f64, f64, f64)> {
        self.detector_step(NetworkKind::Prosecution, x, y_hat, lr)
    }

    pub fn defendant_step(&mut self, x: &Tensor, y_hat: &Tensor, lr: f64)
        -> Result<(f64, f64, f64)> {
        self.detector_step(NetworkKind::Defendant, x, y_hat, lr)
    }

    /// One pass over `data`: per batch, jury update (when enabled),
    /// then prosecution, then defendant. Batch order reshuffles each
    /// epoch from the master seed, so a resumed run replays exactly.
    pub fn train_epoch(&mut self, data: &[Sample]) -> Result<EpochStats> {
        if data.is_empty() {
            return Err(Error::Data("training dataset is empty".into()));
        }
        let (h, w) = (self.net.cfg.embed.image_h, self.net.cfg.embed.image_w);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.cfg.seed ^ (self.epoch + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15),
        );
        order.shuffle(&mut rng);

        let (mut sp, mut sd, mut sj, mut spr, mut sre) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let mut step_losses_p = Vec::new();
        let mut last_lr = lr_at(self.global_step, &self.cfg.schedule);
        let mut batches = 0usize;
        for chunk in order.chunks(self.cfg.batch_size.max(1)) {
            let samples: Vec<&Sample> = chunk.iter().map(|&i| &data[i]).collect();
            let (x, y_hat) = batch_tensors(&samples, h, w)?;
            last_lr = lr_at(self.global_step, &self.cfg.schedule);
            if self.cfg.use_jury {
                sj += self.jury_step(&x, &y_hat, last_lr)?;
            }
            let (lp, pr, re) = self.prosecution_step(&x, &y_hat, last_lr)?;
            let (ld, _, _) = self.defendant_step(&x, &y_hat, last_lr)?;
            sp += lp;
            sd += ld;
            spr += pr;
            sre += re;
            step_losses_p.push(lp);
            self.global_step += 1;
            batches += 1;
        }
        self.epoch += 1;
        let n = batches as f64;
        Ok(EpochStats {
            epoch: self.epoch,
            loss_p: sp / n,
            loss_d: sd / n,
            loss_j: if self.cfg.use_jury { sj / n } else { 0.0 },
            soft_pr: spr / n,
            soft_re: sre / n,
            lr: last_lr,
            step_losses_p,
        })
    }
}

// ---------------------------------------------------------------------------
// checkpoint format: magic "CNT1", version, model config, three named
// parameter tables, three optimizer states, progress counters

const MAGIC: &[u8; 4] = b"CNT1";
const VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.b.len() {
            return Err(Error::Data("truncated checkpoint".into()));
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        Ok(String::from_utf8_lossy(self.take(n)?).into_owned())
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

fn write_params(w: &mut Writer, p: &ModelParams) {
    w.u8(p.kind.tag());
    w.u32(p.len() as u32);
    for (name, t) in p.iter() {
        w.str(name);
        w.u8(t.shape.len() as u8);
        for &e in &t.shape {
            w.u32(e as u32);
        }
        w.f64s(&t.values);
    }
}

fn read_params(r: &mut Reader) -> Result<ModelParams> {
    let kind = NetworkKind::from_tag(r.u8()?)?;
    let count = r.u32()? as usize;
    let mut p = ModelParams::new(kind);
    for _ in 0..count {
        let name = r.str()?;
        let rank = r.u8()? as usize;
        if rank == 0 || rank > 4 {
            return Err(Error::Data(format!("parameter {name} has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        p.insert(name, shape, r.f64s(n)?);
    }
    Ok(p)
}

fn write_opt(w: &mut Writer, s: &AdamState, params: &ModelParams) {
    w.u64(s.step);
    w.f64(s.beta1);
    w.f64(s.beta2);
    w.f64(s.eps);
    w.u32(params.len() as u32);
    for (name, t) in params.iter() {
        w.str(name);
        let zero = vec![0.0; t.values.len()];
        w.f64s(s.m.get(name).unwrap_or(&zero));
        w.f64s(s.v.get(name).unwrap_or(&zero));
    }
}

fn read_opt(r: &mut Reader, params: &ModelParams) -> Result<AdamState> {
    let mut s = AdamState::new();
    s.step = r.u64()?;
    s.beta1 = r.f64()?;
    s.beta2 = r.f64()?;
    s.eps = r.f64()?;
    let count = r.u32()? as usize;
    if count != params.len() {
        return Err(Error::Data(format!(
            "optimizer state has {count} entries, network has {}",
            params.len()
        )));
    }
    for _ in 0..count {
        let name = r.str()?;
        let n = params.get(&name).values.len();
        s.m.insert(name.clone(), r.f64s(n)?);
        s.v.insert(name, r.f64s(n)?);
    }
    Ok(s)
}

fn write_config(w: &mut Writer, c: &CourtNetConfig) {
    for v in [
        c.embed.image_h,
        c.embed.image_w,
        c.embed.grid,
        c.embed.channel_mult,
        c.blocks,
        c.heads,
        c.groups,
    ] {
        w.u32(v as u32);
    }
    for v in c.jury_channels {
        w.u32(v as u32);
    }
    for v in c.jury_fc {
        w.u32(v as u32);
    }
    w.f64(c.threshold);
}

fn read_config(r: &mut Reader) -> Result<CourtNetConfig> {
    let mut f = [0usize; 7];
    for v in &mut f {
        *v = r.u32()? as usize;
    }
    let embed = EmbedConfig::new(f[0], f[1], f[2], f[3])?;
    let mut jury_channels = [0usize; 4];
    for v in &mut jury_channels {
        *v = r.u32()? as usize;
    }
    let mut jury_fc = [0usize; 2];
    for v in &mut jury_fc {
        *v = r.u32()? as usize;
    }
    let cfg = CourtNetConfig {
        embed,
        blocks: f[4],
        heads: f[5],
        groups: f[6],
        jury_channels,
        jury_fc,
        threshold: r.f64()?,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Serializes model, optimizers, and progress counters. Saving, loading,
/// and saving again produces byte-identical files.
pub fn save_checkpoint(path: &Path, t: &Trainer) -> Result<()> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    write_config(&mut w, &t.net.cfg);
    write_params(&mut w, &t.net.prosecution);
    write_params(&mut w, &t.net.defendant);
    write_params(&mut w, &t.net.jury);
    write_opt(&mut w, &t.opt_p, &t.net.prosecution);
    write_opt(&mut w, &t.opt_d, &t.net.defendant);
    write_opt(&mut w, &t.opt_j, &t.net.jury);
    w.u64(t.cfg.seed);
    w.u64(t.epoch);
    w.u64(t.global_step);
    fs::write(path, w.0)?;
    Ok(())
}

/// Restores a [`Trainer`]. `train_cfg.seed` is overwritten by the
/// checkpoint's stored seed so the resumed shuffle order matches.
pub fn load_checkpoint(path: &Path, mut train_cfg: TrainConfig) -> Result<Trainer> {
    let bytes = fs::read(path)?;
    let mut r = Reader { b: &bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Data(format!(
            "{}: not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Data(format!("unknown checkpoint version {version}")));
    }
    let cfg = read_config(&mut r)?;
    let prosecution = read_params(&mut r)?;
    let defendant = read_params(&mut r)?;
    let jury = read_params(&mut r)?;
    // shape table check: stored parameters must match what this config
    // would build
    let fresh = CourtNet::new(cfg, 0)?;
    for (stored, built) in [
        (&prosecution, &fresh.prosecution),
        (&defendant, &fresh.defendant),
        (&jury, &fresh.jury),
    ] {
        if stored.len() != built.len() {
            return Err(Error::Data("checkpoint parameter table mismatch".into()));
        }
        for ((an, at), (bn, bt)) in stored.iter().zip(built.iter()) {
            if an != bn || at.shape != bt.shape {
                return Err(Error::Data(format!(
                    "checkpoint parameter {an} {:?} does not match layout {bn} {:?}",
                    at.shape, bt.shape
                )));
            }
        }
    }
    let opt_p = read_opt(&mut r, &prosecution)?;
    let opt_d = read_opt(&mut r, &defendant)?;
    let opt_j = read_opt(&mut r, &jury)?;
    train_cfg.seed = r.u64()?;
    let epoch = r.u64()?;
    let global_step = r.u64()?;
    Ok(Trainer {
        net: CourtNet {
            cfg,
            prosecution,
            defendant,
            jury,
        },
        cfg: train_cfg,
        opt_p,
        opt_d,
        opt_j,
        epoch,
        global_step,
    })
}
