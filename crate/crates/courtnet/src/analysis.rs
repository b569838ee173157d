//! Post-hoc model analysis: attention-map extraction with a patch-grid
//! summary, probe-set feature series collection, and a direct DFT
//! periodicity analyzer.

use std::path::Path;

use crate::blocks::ForwardTrace;
use crate::data::{write_pgm, Sample};
use crate::model::{prosecution_forward, CourtNet};
use crate::{Error, Result, Tensor};

/// Peak-to-mean power ratio a spectrum must reach before a dominant
/// period is reported. Multichannel noise concentrates well below this;
/// a genuine cycle concentrates far above it.
pub const DOMINANCE_THRESHOLD: f64 = 4.0;

/// Attention maps captured from one forward pass, plus the folded
/// patch-grid summary of the last block's coarse attention.
pub struct AttentionDump {
    /// Per block: [heads, P, P] row-stochastic coarse maps.
    pub coarse: Vec<Tensor>,
    /// Per block: [groups, D, D] fine maps where the block has them.
    pub fine: Vec<Option<Tensor>>,
    /// p×p grid of column mass (how much each patch is attended to),
    /// averaged over the last block's heads. Sums to P.
    pub summary: Tensor,
}

/// Column mass of head-stacked row-stochastic maps [n, P, P], averaged
/// over heads and folded row-major to a p×p grid.
pub fn coarse_summary(maps: &Tensor, grid: usize) -> Tensor {
    let s = maps.shape();
    assert_eq!(s.len(), 3, "maps must be [heads, P, P]");
    let (n, p) = (s[0], s[1]);
    assert_eq!(s[2], p, "maps must be square");
    assert_eq!(grid * grid, p, "patch count {} is not {}²", p, grid);
    let d = maps.data();
    let mut mass = vec![0.0f64; p];
    for h in 0..n {
        for row in 0..p {
            for col in 0..p {
                mass[col] += d[h * p * p + row * p + col];
            }
        }
    }
    for v in &mut mass {
        *v /= n as f64;
    }
    Tensor::from_vec(mass, vec![grid, grid])
}

/// Runs the prosecution network on one [1,1,H,W] input and captures
/// every attention map.
pub fn dump_attention(net: &CourtNet, x: &Tensor) -> AttentionDump {
    assert_eq!(x.shape()[0], 1, "dump_attention works on a single frame");
    let mut trace = ForwardTrace::default();
    let _ = prosecution_forward(&net.cfg, &net.prosecution.bank(None), x, Some(&mut trace));
    let grid = net.cfg.embed.grid;
    let p = net.cfg.embed.patch_count();
    let mut coarse = Vec::new();
    let mut fine = Vec::new();
    for b in &trace.blocks {
        coarse.push(b.coarse_maps.reshape(vec![b.heads, p, p]));
        fine.push(b.fine_maps.as_ref().map(|m| {
            let d = m.shape()[1];
            m.reshape(vec![b.groups, d, d])
        }));
    }
    let summary = coarse_summary(coarse.last().expect("at least one block"), grid);
    AttentionDump {
        coarse,
        fine,
        summary,
    }
}

/// One feature vector per probe frame, in frame order.
pub struct FeatureSeries {
    /// N rows of D values.
    pub features: Vec<Vec<f64>>,
    /// (patch index, intra-patch slot) per frame.
    pub meta: Vec<(usize, usize)>,
}

/// Records, for each probe frame, the last denseblock's fine-attention
/// input feature at the frame's target patch (the D-wide working
/// feature that fine attention re-weights).
pub fn collect_feature_series(net: &CourtNet, probe: &[Sample]) -> Result<FeatureSeries> {
    let (h, w) = (net.cfg.embed.image_h, net.cfg.embed.image_w);
    let p = net.cfg.embed.patch_count();
    let mut features = Vec::with_capacity(probe.len());
    let mut meta = Vec::with_capacity(probe.len());
    for (t, s) in probe.iter().enumerate() {
        let (patch, slot) = s.probe_pos.ok_or_else(|| {
            Error::Data(format!("frame {t} lacks probe metadata; not a probe set"))
        })?;
        if s.image.shape() != [h, w] {
            return Err(Error::Data(format!(
                "probe frame {t} is {:?}, model wants {}x{}",
                s.image.shape(),
                h,
                w
            )));
        }
        let x = s.image.reshape(vec![1, 1, h, w]);
        let mut trace = ForwardTrace::default();
        let _ = prosecution_forward(&net.cfg, &net.prosecution.bank(None), &x, Some(&mut trace));
        let last = trace.blocks.last().expect("at least one block");
        let fin = last
            .fine_input
            .as_ref()
            .ok_or_else(|| Error::Data("last block exposes no fine-attention input".into()))?;
        let d = fin.shape()[2];
        assert_eq!(fin.shape(), &[1, p, d]);
        features.push(fin.data()[patch * d..(patch + 1) * d].to_vec());
        meta.push((patch, slot));
    }
    Ok(FeatureSeries { features, meta })
}

/// Power spectrum of a mean-removed multichannel series.
pub struct Spectrum {
    pub n: usize,
    /// Per feature dimension: power at every frequency bin k in 0..N.
    pub per_dim: Vec<Vec<f64>>,
    /// Power summed over dimensions.
    pub total: Vec<f64>,
    /// N/k* for the dominant bin k* in 1..=N/2, when its peak-to-mean
    /// ratio clears [`DOMINANCE_THRESHOLD`].
    pub dominant_period: Option<f64>,
    /// Peak-to-mean ratio of the candidate bin.
    pub dominance: f64,
}

/// Direct O(N²) discrete Fourier transform of each feature dimension
/// after mean removal; power is the squared magnitude.
pub fn dft_power(features: &[Vec<f64>]) -> Result<Spectrum> {
    let n = features.len();
    if n < 2 {
        return Err(Error::Data(format!("series of {n} frames is too short")));
    }
    let dims = features[0].len();
    if dims == 0 || features.iter().any(|f| f.len() != dims) {
        return Err(Error::Data("ragged or empty feature rows".into()));
    }
    let mut per_dim = Vec::with_capacity(dims);
    let mut total = vec![0.0f64; n];
    for d in 0..dims {
        let mean = features.iter().map(|f| f[d]).sum::<f64>() / n as f64;
        let x: Vec<f64> = features.iter().map(|f| f[d] - mean).collect();
        let mut power = Vec::with_capacity(n);
        for k in 0..n {
            let (mut re, mut im) = (0.0f64, 0.0f64);
            for (t, &v) in x.iter().enumerate() {
                let ang = -std::f64::consts::TAU * (k as f64) * (t as f64) / n as f64;
                re += v * ang.cos();
                im += v * ang.sin();
            }
            let p = re * re + im * im;
            total[k] += p;
            power.push(p);
        }
        per_dim.push(power);
    }
    // candidate over the non-trivial half spectrum
    let half = n / 2;
    let mut k_star = 1usize;
    for k in 1..=half {
        if total[k] > total[k_star] {
            k_star = k;
        }
    }
    let mean_power = total[1..=half].iter().sum::<f64>() / half as f64;
    // an absolute floor keeps rounding residue of a constant series from
    // passing the ratio test
    let dominance = if mean_power > 0.0 && total[k_star] > 1e-18 {
        total[k_star] / mean_power
    } else {
        0.0
    };
    let dominant_period = if dominance >= DOMINANCE_THRESHOLD {
        Some(n as f64 / k_star as f64)
    } else {
        None
    };
    Ok(Spectrum {
        n,
        per_dim,
        total,
        dominant_period,
        dominance,
    })
}

/// Parseval gap: |Σ_k power − N·Σ_t x̃²| / max(Σ) over all dimensions
/// (mean-removed x̃). Zero for an exact transform.
pub fn parseval_gap(features: &[Vec<f64>], spec: &Spectrum) -> f64 {
    let n = features.len() as f64;
    let mut worst = 0.0f64;
    for (d, power) in spec.per_dim.iter().enumerate() {
        let mean = features.iter().map(|f| f[d]).sum::<f64>() / n;
        let energy: f64 = features.iter().map(|f| (f[d] - mean).powi(2)).sum();
        let freq: f64 = power.iter().sum();
        let denom = (n * energy).abs().max(freq.abs()).max(1e-300);
        worst = worst.max((freq - n * energy).abs() / denom);
    }
    worst
}

/// Spectrum rows k=1..=N/2 as `k,period,power` (summed over dims).
pub fn write_spectrum_csv(path: &Path, spec: &Spectrum) -> Result<()> {
    let mut s = String::from("k,period,power\n");
    for k in 1..=spec.n / 2 {
        s.push_str(&format!(
            "{},{:.6},{:.9e}\n",
            k,
            spec.n as f64 / k as f64,
            spec.total[k]
        ));
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// Feature series rows as `frame,patch,slot,f0..f{D-1}`.
pub fn write_series_csv(path: &Path, series: &FeatureSeries) -> Result<()> {
    let dims = series.features.first().map_or(0, |f| f.len());
    let mut s = String::from("frame,patch,slot");
    for d in 0..dims {
        s.push_str(&format!(",f{d}"));
    }
    s.push('\n');
    for (t, (f, (patch, slot))) in series.features.iter().zip(&series.meta).enumerate() {
        s.push_str(&format!("{t},{patch},{slot}"));
        for v in f {
            s.push_str(&format!(",{v:.9e}"));
        }
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// Reads a series written by [`write_series_csv`] (metadata included).
pub fn read_series_csv(path: &Path) -> Result<FeatureSeries> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Data("empty series file".into()))?;
    if !header.starts_with("frame,patch,slot") {
        return Err(Error::Data(format!("unexpected series header {header:?}")));
    }
    let mut features = Vec::new();
    let mut meta = Vec::new();
    for (i, line) in lines.enumerate() {
        let mut cells = line.split(',');
        let bad = || Error::Data(format!("series row {} malformed", i + 1));
        let _frame = cells.next().ok_or_else(bad)?;
        let patch: usize = cells.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let slot: usize = cells.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let row: std::result::Result<Vec<f64>, _> = cells.map(str::parse).collect();
        features.push(row.map_err(|_| bad())?);
        meta.push((patch, slot));
    }
    Ok(FeatureSeries { features, meta })
}

/// Min-max normalized grayscale heatmap of a 2-d grid.
pub fn write_heatmap_pgm(path: &Path, grid: &Tensor) -> Result<()> {
    let (lo, hi) = grid
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, u), &v| {
            (l.min(v), u.max(v))
        });
    let span = (hi - lo).max(1e-300);
    let norm = Tensor::from_vec(
        grid.data().iter().map(|&v| (v - lo) / span).collect(),
        grid.shape().to_vec(),
    );
    write_pgm(path, &norm)
}

/// Attention summary grid as CSV rows.
pub fn write_summary_csv(path: &Path, grid: &Tensor) -> Result<()> {
    let s = grid.shape();
    let (h, w) = (s[0], s[1]);
    let mut out = String::new();
    for r in 0..h {
        let row: Vec<String> = (0..w)
            .map(|c| format!("{:.9e}", grid.data()[r * w + c]))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
