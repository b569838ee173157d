//! Synthetic infrared scenes (random clutter plus the ordered probe
//! set), PGM image I/O, and TSV dataset manifests.
//!
//! Every emitted mask satisfies the SPIE small-target constraint:
//! each target's bounding box is at most 9×9 pixels and the total
//! target area stays below 0.15% of the image.

use std::fs;
use std::io::Read as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::{Error, Result, Tensor};

/// Fraction of the image the union of target masks may occupy.
pub const MAX_TARGET_AREA_FRACTION: f64 = 0.0015;
/// Side of the largest permitted target bounding box.
pub const MAX_TARGET_EXTENT: usize = 9;

const PLACEMENT_RETRIES: usize = 50;

/// Parameters for one random cluttered scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    /// Inclusive range for the number of targets.
    pub targets_min: usize,
    pub targets_max: usize,
    /// Inclusive range for the truncation box side of a target stamp.
    pub size_min: usize,
    pub size_max: usize,
    /// Peak brightness added above the local background (range).
    pub intensity_min: f64,
    pub intensity_max: f64,
    pub noise_sigma: f64,
    pub blob_count: usize,
    pub blob_scale: f64,
    pub gradient_amplitude: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            height: 56,
            width: 56,
            targets_min: 1,
            targets_max: 1,
            size_min: 2,
            size_max: 3,
            intensity_min: 0.8,
            intensity_max: 1.0,
            noise_sigma: 0.02,
            blob_count: 1,
            blob_scale: 8.0,
            gradient_amplitude: 0.1,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height < 8 || self.width < 8 {
            return Err(Error::Config(format!(
                "scene {}x{} too small",
                self.height, self.width
            )));
        }
        if self.targets_min > self.targets_max {
            return Err(Error::Config("targets_min > targets_max".into()));
        }
        if self.size_min < 1 || self.size_min > self.size_max {
            return Err(Error::Config("invalid target size range".into()));
        }
        if self.size_max > MAX_TARGET_EXTENT {
            return Err(Error::Config(format!(
                "target size {} exceeds the {}x{} small-target bound",
                self.size_max, MAX_TARGET_EXTENT, MAX_TARGET_EXTENT
            )));
        }
        if !(self.intensity_min > 0.0 && self.intensity_min <= self.intensity_max) {
            return Err(Error::Config("invalid intensity range".into()));
        }
        if self.noise_sigma < 0.0 || self.gradient_amplitude < 0.0 || self.blob_scale <= 0.0 {
            return Err(Error::Config("negative clutter parameter".into()));
        }
        Ok(())
    }

    fn area_budget(&self) -> usize {
        let limit = MAX_TARGET_AREA_FRACTION * (self.height * self.width) as f64;
        // strict inequality: the largest count still below the fraction
        (limit.ceil() as usize).saturating_sub(1)
    }
}

/// One image/mask pair with provenance metadata.
#[derive(Debug, Clone)]
pub struct Sample {
    /// H×W gray values in [0, 1].
    pub image: Tensor,
    /// H×W binary mask, nonzero exactly on target pixels.
    pub mask: Tensor,
    pub seed: u64,
    /// Target centers as (row, col) in pixel coordinates.
    pub centers: Vec<(f64, f64)>,
    /// (patch index, intra-patch slot) when from the probe set.
    pub probe_pos: Option<(usize, usize)>,
}

/// Parameters for the ordered probe set: one frame per (patch, slot),
/// enumerated patch-major then slot-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSpec {
    /// Patch grid side p; the image is p·patch_px square.
    pub grid: usize,
    /// Patch side in pixels.
    pub patch_px: usize,
    /// Target stamp side (k×k solid bright square).
    pub stamp: usize,
    pub background: f64,
    pub intensity: f64,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        ProbeSpec {
            grid: 14,
            patch_px: 4,
            stamp: 1,
            background: 0.15,
            intensity: 0.9,
        }
    }
}

impl ProbeSpec {
    pub fn frame_count(&self) -> usize {
        self.grid * self.grid * 9
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid == 0 || self.patch_px < 3 {
            return Err(Error::Config(
                "probe patch must be at least 3 pixels to host the 3x3 slots".into(),
            ));
        }
        // slots span 3 cells; the stamp grows the footprint past that
        if 2 + self.stamp > self.patch_px {
            return Err(Error::Config(format!(
                "stamp {} does not fit a {}-pixel patch",
                self.stamp, self.patch_px
            )));
        }
        if !(0.0..1.0).contains(&self.background) || !(0.0..=1.0).contains(&self.intensity) {
            return Err(Error::Config("probe levels must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

fn scene_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (index.wrapping_mul(0x9e37_79b9_7f4a_7c15)).rotate_left(17))
}

/// One random scene drawn from `spec`'s own seed.
pub fn generate_random_scene(spec: &SceneSpec) -> Result<Sample> {
    generate_indexed_scene(spec, 0)
}

/// Scene `index` of the stream defined by `spec.seed`; samples are
/// independent of generation order, so datasets can be built in any
/// order (or in parallel) and stay byte-identical.
pub fn generate_indexed_scene(spec: &SceneSpec, index: u64) -> Result<Sample> {
    spec.validate()?;
    let mut rng = scene_rng(spec.seed, index);
    let (h, w) = (spec.height, spec.width);

    // clutter background: smooth blobs + linear gradient + pixel noise
    let mut bg = vec![0.0f64; h * w];
    let mut blobs = Vec::with_capacity(spec.blob_count);
    for _ in 0..spec.blob_count {
        let cy = rng.gen_range(0.0..h as f64);
        let cx = rng.gen_range(0.0..w as f64);
        let s = spec.blob_scale * rng.gen_range(0.5..1.5);
        let a = rng.gen_range(0.3..1.0);
        blobs.push((cy, cx, s, a));
    }
    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
    let (gy, gx) = (theta.sin(), theta.cos());
    let noise = Normal::new(0.0, spec.noise_sigma.max(1e-12)).unwrap();
    for r in 0..h {
        for c in 0..w {
            let mut v = 0.0;
            for &(cy, cx, s, a) in &blobs {
                let d2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
                v += a * (-d2 / (2.0 * s * s)).exp();
            }
            v += spec.gradient_amplitude * (gy * r as f64 / h as f64 + gx * c as f64 / w as f64);
            v += noise.sample(&mut rng);
            bg[r * w + c] = v;
        }
    }
    let (lo, hi) = bg
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, u), &v| {
            (l.min(v), u.max(v))
        });
    let span = (hi - lo).max(1e-12);
    for v in &mut bg {
        *v = (*v - lo) / span;
    }

    // stamp targets; Gaussian profile truncated to a k×k box, mask where
    // the contribution exceeds half its peak
    let n_targets = rng.gen_range(spec.targets_min..=spec.targets_max);
    let budget = spec.area_budget();
    let mut image = bg;
    let mut mask = vec![0.0f64; h * w];
    let mut centers = Vec::new();
    let mut used = 0usize;
    for _ in 0..n_targets {
        let mut placed = false;
        for _ in 0..PLACEMENT_RETRIES {
            let k = rng.gen_range(spec.size_min..=spec.size_max);
            let sigma = k as f64 / 4.0;
            let half = k as f64 / 2.0;
            let cy = rng.gen_range(half..h as f64 - half) + rng.gen_range(-0.25..0.25);
            let cx = rng.gen_range(half..w as f64 - half) + rng.gen_range(-0.25..0.25);
            let r0 = (cy - half).floor().max(0.0) as usize;
            let c0 = (cx - half).floor().max(0.0) as usize;
            let r1 = ((cy + half).ceil() as usize).min(h - 1);
            let c1 = ((cx + half).ceil() as usize).min(w - 1);
            // keep targets off bright clutter so the peak margin is real
            let local = image[(cy.round() as usize).min(h - 1) * w
                + (cx.round() as usize).min(w - 1)];
            if local > 0.6 {
                continue;
            }
            let mut hits = Vec::new();
            for r in r0..=r1 {
                for c in c0..=c1 {
                    let d2 = (r as f64 + 0.0 - cy).powi(2) + (c as f64 - cx).powi(2);
                    let g = (-d2 / (2.0 * sigma * sigma)).exp();
                    if g > 0.5 {
                        hits.push((r, c));
                    }
                }
            }
            if hits.is_empty()
                || used + hits.len() > budget
                || hits.iter().any(|&(r, c)| mask[r * w + c] != 0.0)
            {
                continue;
            }
            let peak = rng.gen_range(spec.intensity_min..=spec.intensity_max);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    let d2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
                    let g = peak * (-d2 / (2.0 * sigma * sigma)).exp();
                    let px = &mut image[r * w + c];
                    *px = (*px + g).min(1.0);
                }
            }
            for &(r, c) in &hits {
                mask[r * w + c] = 1.0;
            }
            used += hits.len();
            centers.push((cy, cx));
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::Data(format!(
                "could not place target {} of {} within {} retries (area budget {} px)",
                centers.len() + 1,
                n_targets,
                PLACEMENT_RETRIES,
                budget
            )));
        }
    }

    Ok(Sample {
        image: Tensor::from_vec(image, vec![h, w]),
        mask: Tensor::from_vec(mask, vec![h, w]),
        seed: spec.seed,
        centers,
        probe_pos: None,
    })
}

/// `count` scenes from the stream defined by `spec.seed`.
pub fn generate_dataset(spec: &SceneSpec, count: usize) -> Result<Vec<Sample>> {
    (0..count as u64)
        .map(|i| generate_indexed_scene(spec, i))
        .collect()
}

/// The full ordered probe set: frame t puts one target in patch t/9 at
/// intra-patch slot t mod 9 (both row-major, 3×3 slot sub-grid
/// centered in the patch).
pub fn generate_probe_set(spec: &ProbeSpec) -> Result<Vec<Sample>> {
    spec.validate()?;
    let p = spec.grid;
    let side = p * spec.patch_px;
    let off = (spec.patch_px - (2 + spec.stamp)) / 2;
    let mut frames = Vec::with_capacity(spec.frame_count());
    for t in 0..spec.frame_count() {
        let (patch, slot) = (t / 9, t % 9);
        let (pr, pc) = (patch / p, patch % p);
        let (sr, sc) = (slot / 3, slot % 3);
        let top = pr * spec.patch_px + off + sr;
        let left = pc * spec.patch_px + off + sc;
        let mut image = vec![spec.background; side * side];
        let mut mask = vec![0.0; side * side];
        for dr in 0..spec.stamp {
            for dc in 0..spec.stamp {
                let i = (top + dr) * side + (left + dc);
                image[i] = spec.intensity;
                mask[i] = 1.0;
            }
        }
        frames.push(Sample {
            image: Tensor::from_vec(image, vec![side, side]),
            mask: Tensor::from_vec(mask, vec![side, side]),
            seed: 0,
            centers: vec![(
                top as f64 + (spec.stamp as f64 - 1.0) / 2.0,
                left as f64 + (spec.stamp as f64 - 1.0) / 2.0,
            )],
            probe_pos: Some((patch, slot)),
        });
    }
    Ok(frames)
}

/// Writes a [0,1] image as a binary 8-bit graymap (P5, maxval 255).
pub fn write_pgm(path: &Path, image: &Tensor) -> Result<()> {
    let shape = image.shape();
    if shape.len() != 2 {
        return Err(Error::Data(format!("PGM wants a 2-d image, got {shape:?}")));
    }
    let (h, w) = (shape[0], shape[1]);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    for &v in image.data() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Data(format!("pixel {v} outside [0, 1]")));
        }
        out.push((v * 255.0).round() as u8);
    }
    fs::write(path, out)?;
    Ok(())
}

fn pgm_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Data("truncated PGM header".into()));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

/// Reads a binary 8-bit graymap back to [0,1] values.
pub fn read_pgm(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    if pgm_token(&bytes, &mut pos)? != "P5" {
        return Err(Error::Data(format!("{}: not a binary PGM", path.display())));
    }
    let parse = |s: String| -> Result<usize> {
        s.parse()
            .map_err(|_| Error::Data(format!("bad PGM header field {s:?}")))
    };
    let w = parse(pgm_token(&bytes, &mut pos)?)?;
    let h = parse(pgm_token(&bytes, &mut pos)?)?;
    let maxval = parse(pgm_token(&bytes, &mut pos)?)?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Data(format!("unsupported PGM maxval {maxval}")));
    }
    pos += 1; // single whitespace byte after maxval
    if bytes.len() < pos + h * w {
        return Err(Error::Data(format!(
            "{}: truncated payload ({} of {} pixels)",
            path.display(),
            bytes.len().saturating_sub(pos),
            h * w
        )));
    }
    let data = bytes[pos..pos + h * w]
        .iter()
        .map(|&b| b as f64 / maxval as f64)
        .collect();
    Ok(Tensor::from_vec(data, vec![h, w]))
}

/// One record per line: image_path TAB mask_path (relative to the
/// manifest's directory when not absolute).
pub fn write_manifest(path: &Path, pairs: &[(PathBuf, PathBuf)]) -> Result<()> {
    let mut out = String::new();
    for (img, mask) in pairs {
        out.push_str(&format!("{}\t{}\n", img.display(), mask.display()));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes every sample to `dir` as numbered image/mask PGM pairs plus a
/// `manifest.tsv`; returns the manifest path.
pub fn write_dataset(dir: &Path, samples: &[Sample]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut pairs = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let img = format!("img_{i:05}.pgm");
        let mask = format!("mask_{i:05}.pgm");
        write_pgm(&dir.join(&img), &s.image)?;
        write_pgm(&dir.join(&mask), &s.mask)?;
        pairs.push((PathBuf::from(img), PathBuf::from(mask)));
    }
    let manifest = dir.join("manifest.tsv");
    write_manifest(&manifest, &pairs)?;
    Ok(manifest)
}

/// Loads every pair listed in a manifest. Mask pixels at or above the
/// 128/255 level become 1, the rest 0; image and mask shapes must agree.
pub fn load_dataset(manifest: &Path) -> Result<Vec<Sample>> {
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    let text = fs::read_to_string(manifest)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (img_path, mask_path) = line.split_once('\t').ok_or_else(|| {
            Error::Data(format!(
                "{}:{}: expected image TAB mask",
                manifest.display(),
                lineno + 1
            ))
        })?;
        let resolve = |p: &str| {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        let image = read_pgm(&resolve(img_path))?;
        let raw = read_pgm(&resolve(mask_path))?;
        if image.shape() != raw.shape() {
            return Err(Error::Data(format!(
                "{}:{}: image {:?} vs mask {:?}",
                manifest.display(),
                lineno + 1,
                image.shape(),
                raw.shape()
            )));
        }
        let thresh = 128.0 / 255.0 - 1e-9;
        let mask = Tensor::from_vec(
            raw.data()
                .iter()
                .map(|&v| if v >= thresh { 1.0 } else { 0.0 })
                .collect(),
            raw.shape().to_vec(),
        );
        out.push(Sample {
            image,
            mask,
            seed: 0,
            centers: Vec::new(),
            probe_pos: None,
        });
    }
    Ok(out)
}

/// Every 8-connected mask component must fit a 9×9 box, and the total
/// mask area must stay under the area fraction bound.
pub fn check_spie(mask: &Tensor) -> Result<()> {
    let shape = mask.shape();
    let (h, w) = (shape[0], shape[1]);
    let d = mask.data();
    let total = d.iter().filter(|&&v| v != 0.0).count();
    if (total as f64) >= MAX_TARGET_AREA_FRACTION * (h * w) as f64 {
        return Err(Error::Data(format!(
            "mask area {total} px breaks the {:.2}% bound",
            MAX_TARGET_AREA_FRACTION * 100.0
        )));
    }
    let mut seen = vec![false; h * w];
    for start in 0..h * w {
        if d[start] == 0.0 || seen[start] {
            continue;
        }
        let mut stack = vec![start];
        seen[start] = true;
        let (mut r0, mut r1, mut c0, mut c1) = (h, 0, w, 0);
        while let Some(i) = stack.pop() {
            let (r, c) = (i / w, i % w);
            r0 = r0.min(r);
            r1 = r1.max(r);
            c0 = c0.min(c);
            c1 = c1.max(c);
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                        continue;
                    }
                    let j = nr as usize * w + nc as usize;
                    if d[j] != 0.0 && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        if r1 - r0 + 1 > MAX_TARGET_EXTENT || c1 - c0 + 1 > MAX_TARGET_EXTENT {
            return Err(Error::Data(format!(
                "target component spans {}x{}",
                r1 - r0 + 1,
                c1 - c0 + 1
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::dataset_metrics;

    #[test]
    fn zero_targets_zero_mask() {
        let spec = SceneSpec {
            targets_min: 0,
            targets_max: 0,
            ..SceneSpec::default()
        };
        let s = generate_random_scene(&spec).unwrap();
        assert!(s.mask.data().iter().all(|&v| v == 0.0));
        assert!(s.centers.is_empty());
    }

    #[test]
    fn scene_determinism_and_independence() {
        let spec = SceneSpec::default();
        let a = generate_indexed_scene(&spec, 3).unwrap();
        let b = generate_indexed_scene(&spec, 3).unwrap();
        assert_eq!(a.image.data(), b.image.data());
        assert_eq!(a.mask.data(), b.mask.data());
        let c = generate_indexed_scene(&spec, 4).unwrap();
        assert_ne!(a.image.data(), c.image.data());
    }

    #[test]
    fn scene_values_in_range_with_visible_target() {
        let s = generate_random_scene(&SceneSpec {
            seed: 7,
            ..SceneSpec::default()
        })
        .unwrap();
        assert!(s.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let n_target = s.mask.data().iter().filter(|&&v| v == 1.0).count();
        assert!(n_target >= 1);
        // target pixels are bright
        for (i, &m) in s.mask.data().iter().enumerate() {
            if m == 1.0 {
                assert!(s.image.data()[i] > 0.3);
            }
        }
    }

    #[test]
    fn spie_constraint_over_many_scenes() {
        let spec = SceneSpec::default();
        for i in 0..200 {
            let s = generate_indexed_scene(&spec, i).unwrap();
            check_spie(&s.mask).unwrap();
        }
    }

    #[test]
    fn spie_checker_rejects_violations() {
        // a 10-wide bar breaks the bounding-box rule
        let mut d = vec![0.0; 32 * 32];
        for c in 0..10 {
            d[5 * 32 + c] = 1.0;
        }
        assert!(check_spie(&Tensor::from_vec(d, vec![32, 32])).is_err());
        // scattered singletons break the area rule on a small image
        let mut d = vec![0.0; 16 * 16];
        for i in 0..5 {
            d[i * 37] = 1.0;
        }
        assert!(check_spie(&Tensor::from_vec(d, vec![16, 16])).is_err());
    }

    #[test]
    fn oversized_spec_rejected() {
        let spec = SceneSpec {
            size_max: 11,
            ..SceneSpec::default()
        };
        assert!(generate_random_scene(&spec).is_err());
    }

    #[test]
    fn probe_counts_and_order() {
        let spec = ProbeSpec::default();
        let set = generate_probe_set(&spec).unwrap();
        assert_eq!(set.len(), 1764);
        for (t, s) in set.iter().enumerate() {
            assert_eq!(s.probe_pos, Some((t / 9, t % 9)));
            assert_eq!(s.mask.data().iter().filter(|&&v| v == 1.0).count(), 1);
        }
        // frame 0: top-left patch, top-left slot
        let m0 = &set[0].mask;
        assert_eq!(m0.data()[0 * 56 + 0], 1.0);
        // frame 9: second patch of the top row (cols 4..8), top-left slot
        let m9 = &set[9].mask;
        let hit: Vec<usize> = m9
            .data()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1.0)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(hit, vec![0 * 56 + 4]);
        // intra-patch position has exact period 9
        for t in 0..set.len() {
            assert_eq!(set[t].probe_pos.unwrap().1, set[t % 9].probe_pos.unwrap().1);
        }
    }

    #[test]
    fn probe_stamp_must_fit() {
        let spec = ProbeSpec {
            patch_px: 3,
            stamp: 2,
            ..ProbeSpec::default()
        };
        assert!(generate_probe_set(&spec).is_err());
    }

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        // all-zero image: payload is zero bytes after the header
        write_pgm(&p, &Tensor::zeros(vec![4, 6])).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert!(bytes.ends_with(&[0u8; 24]));
        assert_eq!(read_pgm(&p).unwrap().data(), &[0.0; 24]);
        // random image round-trips within half a quantization step
        let img = crate::tensor::random_tensor(&[9, 7], 11);
        let img = Tensor::from_vec(
            img.data().iter().map(|v| (v + 1.0) / 2.0).collect(),
            vec![9, 7],
        );
        let p2 = dir.path().join("b.pgm");
        write_pgm(&p2, &img).unwrap();
        let back = read_pgm(&p2).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1.0 / 510.0 + 1e-12);
        }
    }

    #[test]
    fn pgm_rejects_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.pgm");
        fs::write(&p, b"P2\n2 2\n255\n0 0 0 0\n").unwrap();
        assert!(read_pgm(&p).is_err());
        fs::write(&p, b"P5\n4 4\n255\nxx").unwrap();
        assert!(matches!(read_pgm(&p), Err(Error::Data(_))));
    }

    #[test]
    fn empty_manifest_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("manifest.tsv");
        write_manifest(&m, &[]).unwrap();
        assert!(load_dataset(&m).unwrap().is_empty());
    }

    #[test]
    fn dataset_round_trip_preserves_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SceneSpec {
            seed: 21,
            ..SceneSpec::default()
        };
        let samples = generate_dataset(&spec, 20).unwrap();
        let manifest = write_dataset(dir.path(), &samples).unwrap();
        let back = load_dataset(&manifest).unwrap();
        assert_eq!(back.len(), 20);
        // masks survive exactly, so self-metrics stay perfect
        let items: Vec<_> = samples
            .iter()
            .zip(&back)
            .enumerate()
            .map(|(i, (a, b))| {
                assert_eq!(a.mask.data(), b.mask.data(), "mask {i} changed");
                (format!("{i}"), b.mask.clone(), a.mask.clone())
            })
            .collect();
        let rep = dataset_metrics(&items, false).unwrap();
        assert_eq!(rep.mean_f1, 1.0);
    }

    #[test]
    fn manifest_shape_mismatch_is_error() {
        let dir = tempfile::tempdir().unwrap();
        write_pgm(&dir.path().join("i.pgm"), &Tensor::zeros(vec![4, 4])).unwrap();
        write_pgm(&dir.path().join("m.pgm"), &Tensor::zeros(vec![2, 2])).unwrap();
        let man = dir.path().join("manifest.tsv");
        fs::write(&man, "i.pgm\tm.pgm\n").unwrap();
        assert!(load_dataset(&man).is_err());
    }
}
