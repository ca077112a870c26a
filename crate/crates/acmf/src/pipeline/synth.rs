//! Synthetic forgery videos.
//!
//! "Real" frames are seeded smooth random fields: a superposition of
//! low-frequency sinusoids plus box-blurred noise, normalized into [0, 1].
//! Frames of one video share the base field with small per-frame jitter.
//!
//! Fakes paste a smoothly feathered elliptical patch from an independently
//! drawn donor field into each frame; this shared low-frequency manipulation
//! is what generalization is measured against. The `hi-freq-grid` family
//! additionally overlays an alternating-sign grid on the patched region,
//! which concentrates its energy far above the frequency cutoff and gives
//! that family a loud high-frequency cue on top of the subtle one.

use rayon::prelude::*;

use super::{ArtifactFamily, PipelineError, VideoClip};
use crate::rng::{stream, SplitMix64};
use crate::tensor::Tensor;

/// Dataset shape and artifact strength.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Real (and fake) videos in the training split.
    pub train_videos_per_class: usize,
    /// Real (and fake) videos in the test split; fakes split evenly between
    /// the two artifact families.
    pub test_videos_per_class: usize,
    pub frames_per_video: usize,
    pub image_size: usize,
    pub channels: usize,
    pub seed: u64,
    /// Peak amplitude of the grid overlay.
    pub artifact_amplitude: f64,
    /// Family of the training-split fakes.
    pub train_family: ArtifactFamily,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            train_videos_per_class: 25,
            test_videos_per_class: 20,
            frames_per_video: 8,
            image_size: 64,
            channels: 1,
            seed: 0,
            artifact_amplitude: 0.45,
            train_family: ArtifactFamily::HiFreqGrid,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub train: Vec<VideoClip>,
    pub test: Vec<VideoClip>,
}

// Field recipe constants. Sinusoid frequencies stay at or below the default
// cutoff so the smooth structure lives entirely in the low band.
const MAX_SINUSOID_FREQ: i64 = 2;
const NOISE_AMPLITUDE: f64 = 1.9;
const BLUR_PASSES: usize = 1;
const FIELD_LO: f64 = 0.08;
const FIELD_HI: f64 = 0.92;
const JITTER_AMPLITUDE: f64 = 0.03;
const BLEND_STRENGTH: f64 = 1.0;

// stream labels inside one video
const L_FIELD: u64 = 1;
const L_DONOR: u64 = 2;
const L_ELLIPSE: u64 = 3;
const L_JITTER: u64 = 4;
const L_DONOR_JITTER: u64 = 5;

/// Smooth random field: sinusoids plus blurred noise, raw scale.
fn raw_field(size: usize, rng: &mut SplitMix64) -> Vec<f64> {
    let n = size * size;
    let mut field = vec![0.0f64; n];
    let sinusoids = 4 + rng.below(5); // 4..=8
    for _ in 0..sinusoids {
        let amp = rng.uniform(0.25, 1.0);
        let (fy, fx) = loop {
            let fy = rng.below((2 * MAX_SINUSOID_FREQ + 1) as usize) as i64 - MAX_SINUSOID_FREQ;
            let fx = rng.below((2 * MAX_SINUSOID_FREQ + 1) as usize) as i64 - MAX_SINUSOID_FREQ;
            if fy != 0 || fx != 0 {
                break (fy, fx);
            }
        };
        let phase = rng.uniform(0.0, std::f64::consts::TAU);
        let scale = std::f64::consts::TAU / size as f64;
        for y in 0..size {
            for x in 0..size {
                field[y * size + x] +=
                    amp * (scale * (fy as f64 * y as f64 + fx as f64 * x as f64) + phase).sin();
            }
        }
    }
    let mut noise: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
    for _ in 0..BLUR_PASSES {
        noise = box_blur3(&noise, size, size);
    }
    for (f, nz) in field.iter_mut().zip(&noise) {
        *f += NOISE_AMPLITUDE * nz;
    }
    field
}

/// Edge-aware 3x3 box blur (mean over in-bounds neighbors).
pub(crate) fn box_blur3(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            let mut count = 0.0;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (yy, xx) = (y as i64 + dy, x as i64 + dx);
                    if yy >= 0 && yy < h as i64 && xx >= 0 && xx < w as i64 {
                        acc += plane[yy as usize * w + xx as usize];
                        count += 1.0;
                    }
                }
            }
            out[y * w + x] = acc / count;
        }
    }
    out
}

/// Affine map sending the field's min/max onto [FIELD_LO, FIELD_HI].
fn field_scale(field: &[f64]) -> (f64, f64) {
    let lo = field.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = field.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let gain = (FIELD_HI - FIELD_LO) / span;
    (gain, FIELD_LO - lo * gain)
}

/// Small smooth per-frame drift, two low-frequency sinusoids.
fn jitter_field(size: usize, rng: &mut SplitMix64) -> Vec<f64> {
    let mut field = vec![0.0f64; size * size];
    for _ in 0..2 {
        let amp = rng.uniform(0.4, 1.0) * JITTER_AMPLITUDE;
        let fy = rng.below((2 * MAX_SINUSOID_FREQ + 1) as usize) as i64 - MAX_SINUSOID_FREQ;
        let fx = rng.below((2 * MAX_SINUSOID_FREQ + 1) as usize) as i64 - MAX_SINUSOID_FREQ;
        let phase = rng.uniform(0.0, std::f64::consts::TAU);
        let scale = std::f64::consts::TAU / size as f64;
        for y in 0..size {
            for x in 0..size {
                field[y * size + x] +=
                    amp * (scale * (fy as f64 * y as f64 + fx as f64 * x as f64) + phase).sin();
            }
        }
    }
    field
}

/// Feathered elliptical window in [0, 1]: a plateau of 1 inside the ellipse,
/// smoothly falling to 0 across a wide band.
struct EllipseWindow {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    feather: f64,
}

impl EllipseWindow {
    /// Wide window carrying the pasted donor content.
    fn sample_blend(size: usize, rng: &mut SplitMix64) -> Self {
        let s = size as f64;
        Self {
            cy: rng.uniform(0.3, 0.7) * s,
            cx: rng.uniform(0.3, 0.7) * s,
            ry: rng.uniform(0.28, 0.42) * s,
            rx: rng.uniform(0.28, 0.42) * s,
            feather: 0.65,
        }
    }

    /// Compact window carrying the grid overlay; small enough that patch
    /// masking regularly erases it outright.
    fn sample_grid(size: usize, rng: &mut SplitMix64) -> Self {
        let s = size as f64;
        Self {
            cy: rng.uniform(0.25, 0.75) * s,
            cx: rng.uniform(0.25, 0.75) * s,
            ry: rng.uniform(0.09, 0.14) * s,
            rx: rng.uniform(0.09, 0.14) * s,
            feather: 0.4,
        }
    }

    fn weight(&self, y: usize, x: usize) -> f64 {
        let ey = (y as f64 - self.cy) / self.ry;
        let ex = (x as f64 - self.cx) / self.rx;
        let e = (ey * ey + ex * ex).sqrt();
        let inner = 1.0 - self.feather;
        let outer = 1.0 + self.feather;
        if e <= inner {
            1.0
        } else if e >= outer {
            0.0
        } else {
            let t = (e - inner) / (outer - inner);
            1.0 - (3.0 * t * t - 2.0 * t * t * t)
        }
    }
}

/// One clean frame and, when `family` is not `None`, its forged counterpart.
struct VideoSynth {
    size: usize,
    channels: usize,
    family: ArtifactFamily,
    amplitude: f64,
    base: Vec<Vec<f64>>,  // per channel, raw
    donor: Vec<Vec<f64>>, // per channel, raw
    base_scale: Vec<(f64, f64)>,
    donor_scale: Vec<(f64, f64)>,
    blend_window: EllipseWindow,
    grid_window: EllipseWindow,
    rng: SplitMix64,
}

impl VideoSynth {
    fn new(video_rng: SplitMix64, size: usize, channels: usize, family: ArtifactFamily, amplitude: f64) -> Self {
        let base: Vec<Vec<f64>> = (0..channels)
            .map(|c| raw_field(size, &mut video_rng.child(L_FIELD).child(c as u64)))
            .collect();
        let donor: Vec<Vec<f64>> = (0..channels)
            .map(|c| raw_field(size, &mut video_rng.child(L_DONOR).child(c as u64)))
            .collect();
        let base_scale = base.iter().map(|f| field_scale(f)).collect();
        let donor_scale = donor.iter().map(|f| field_scale(f)).collect();
        let mut ellipse_rng = video_rng.child(L_ELLIPSE);
        let blend_window = EllipseWindow::sample_blend(size, &mut ellipse_rng);
        let grid_window = EllipseWindow::sample_grid(size, &mut ellipse_rng);
        Self { size, channels, family, amplitude, base, donor, base_scale, donor_scale, blend_window, grid_window, rng: video_rng }
    }

    /// (clean frame, presented frame) for frame index `t`. For real videos the
    /// two are identical.
    fn frame_pair(&self, t: usize) -> (Tensor<f32>, Tensor<f32>) {
        let s = self.size;
        let mut clean = Vec::with_capacity(self.channels * s * s);
        let mut faked = Vec::with_capacity(self.channels * s * s);
        for c in 0..self.channels {
            let jitter = jitter_field(s, &mut self.rng.child(L_JITTER).child(t as u64).child(c as u64));
            let donor_jitter =
                jitter_field(s, &mut self.rng.child(L_DONOR_JITTER).child(t as u64).child(c as u64));
            let (bg, bo) = self.base_scale[c];
            let (dg, do_) = self.donor_scale[c];
            for y in 0..s {
                for x in 0..s {
                    let i = y * s + x;
                    let real = (self.base[c][i] * bg + bo + jitter[i]).clamp(0.0, 1.0);
                    clean.push(real as f32);
                    let value = match self.family {
                        ArtifactFamily::None => real,
                        _ => {
                            let w = self.blend_window.weight(y, x);
                            let donor = (self.donor[c][i] * dg + do_ + donor_jitter[i]).clamp(0.0, 1.0);
                            let mut v = real + BLEND_STRENGTH * w * (donor - real);
                            if self.family == ArtifactFamily::HiFreqGrid {
                                let checker = if (y + x) % 2 == 0 { 1.0 } else { -1.0 };
                                v += self.amplitude * self.grid_window.weight(y, x) * checker;
                            }
                            v.clamp(0.0, 1.0)
                        }
                    };
                    faked.push(value as f32);
                }
            }
        }
        let shape = [self.channels, s, s];
        (
            Tensor::new(&shape, clean).expect("consistent extents"),
            Tensor::new(&shape, faked).expect("consistent extents"),
        )
    }
}

/// Frames of one synthetic video plus their pre-artifact counterparts.
/// Exposed so energy properties of the construction can be measured against
/// paired clean frames.
pub fn synth_frame_pairs(
    video_rng: SplitMix64,
    config: &SynthConfig,
    family: ArtifactFamily,
) -> Vec<(Tensor<f32>, Tensor<f32>)> {
    let synth = VideoSynth::new(video_rng, config.image_size, config.channels, family, config.artifact_amplitude);
    (0..config.frames_per_video).map(|t| synth.frame_pair(t)).collect()
}

fn synth_video(
    video_rng: SplitMix64,
    config: &SynthConfig,
    family: ArtifactFamily,
    id: String,
) -> Result<VideoClip, PipelineError> {
    let synth = VideoSynth::new(video_rng, config.image_size, config.channels, family, config.artifact_amplitude);
    let frames: Vec<Tensor<f32>> = (0..config.frames_per_video).map(|t| synth.frame_pair(t).1).collect();
    let label = u8::from(family != ArtifactFamily::None);
    VideoClip::new(id, frames, label, family)
}

/// Balanced, disjoint train/test splits, deterministic under the seed.
/// Training fakes all carry `train_family`; test fakes are split evenly
/// between the grid and blend families.
pub fn synth_dataset(config: &SynthConfig) -> Result<SynthDataset, PipelineError> {
    if config.frames_per_video == 0 || config.frames_per_video > super::MAX_FRAMES_PER_VIDEO {
        return Err(PipelineError::InvalidClip(format!(
            "frames_per_video {} outside 1..={}",
            config.frames_per_video,
            super::MAX_FRAMES_PER_VIDEO
        )));
    }
    let root = SplitMix64::new(config.seed);
    let train_rng = root.child(stream::SYNTH_TRAIN);
    let test_rng = root.child(stream::SYNTH_TEST);

    // (rng label, family, id)
    let mut train_specs = Vec::new();
    for i in 0..config.train_videos_per_class {
        train_specs.push((i as u64, ArtifactFamily::None, format!("train-real-{i:04}")));
    }
    for i in 0..config.train_videos_per_class {
        let label = (config.train_videos_per_class + i) as u64;
        train_specs.push((label, config.train_family, format!("train-fake-{i:04}")));
    }

    let mut test_specs = Vec::new();
    for i in 0..config.test_videos_per_class {
        test_specs.push((i as u64, ArtifactFamily::None, format!("test-real-{i:04}")));
    }
    let grid_count = config.test_videos_per_class.div_ceil(2);
    for i in 0..config.test_videos_per_class {
        let label = (config.test_videos_per_class + i) as u64;
        let (family, id) = if i < grid_count {
            (ArtifactFamily::HiFreqGrid, format!("test-grid-{i:04}"))
        } else {
            (ArtifactFamily::LoFreqBlend, format!("test-blend-{:04}", i - grid_count))
        };
        test_specs.push((label, family, id));
    }

    let build = |rng: &SplitMix64, specs: Vec<(u64, ArtifactFamily, String)>| {
        specs
            .into_par_iter()
            .map(|(label, family, id)| synth_video(rng.child(label), config, family, id))
            .collect::<Result<Vec<_>, _>>()
    };
    Ok(SynthDataset { train: build(&train_rng, train_specs)?, test: build(&test_rng, test_specs)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::dft2;

    fn tiny_config() -> SynthConfig {
        SynthConfig {
            train_videos_per_class: 3,
            test_videos_per_class: 4,
            frames_per_video: 2,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let config = tiny_config();
        let a = synth_dataset(&config).unwrap();
        let b = synth_dataset(&config).unwrap();
        assert_eq!(a.train.len(), b.train.len());
        for (va, vb) in a.train.iter().zip(&b.train).chain(a.test.iter().zip(&b.test)) {
            assert_eq!(va.id, vb.id);
            assert_eq!(va.label, vb.label);
            for (fa, fb) in va.frames.iter().zip(&vb.frames) {
                assert_eq!(fa, fb);
            }
        }
    }

    #[test]
    fn splits_are_balanced_and_disjoint() {
        let config = tiny_config();
        let ds = synth_dataset(&config).unwrap();
        let reals = ds.test.iter().filter(|v| v.label == 0).count();
        let fakes = ds.test.iter().filter(|v| v.label == 1).count();
        assert_eq!(reals, fakes);
        let grid = ds.test.iter().filter(|v| v.family == ArtifactFamily::HiFreqGrid).count();
        let blend = ds.test.iter().filter(|v| v.family == ArtifactFamily::LoFreqBlend).count();
        assert_eq!(grid, 2);
        assert_eq!(blend, 2);
        let train_ids: std::collections::HashSet<_> = ds.train.iter().map(|v| v.id.clone()).collect();
        assert!(ds.test.iter().all(|v| !train_ids.contains(&v.id)));
    }

    #[test]
    fn frames_are_in_unit_range() {
        let ds = synth_dataset(&tiny_config()).unwrap();
        for v in ds.train.iter().chain(&ds.test) {
            for f in &v.frames {
                for &x in f.data() {
                    assert!((0.0..=1.0).contains(&x), "video {} value {x}", v.id);
                }
            }
        }
    }

    fn mean_high_band_ratio(family: ArtifactFamily, cutoff: usize) -> f64 {
        let config = SynthConfig::default();
        let root = SplitMix64::new(11);
        let mut fake_energy = 0.0;
        let mut clean_energy = 0.0;
        for vid in 0..6u64 {
            let pairs = synth_frame_pairs(root.child(vid), &config, family);
            for (clean, fake) in pairs {
                let (hf, _) = dft2(&fake.convert::<f64>()).unwrap().band_energy(cutoff);
                let (hc, _) = dft2(&clean.convert::<f64>()).unwrap().band_energy(cutoff);
                fake_energy += hf;
                clean_energy += hc;
            }
        }
        fake_energy / clean_energy
    }

    #[test]
    fn grid_family_doubles_high_band_energy() {
        let ratio = mean_high_band_ratio(ArtifactFamily::HiFreqGrid, 2);
        assert!(ratio >= 2.0, "grid fakes high-band ratio {ratio}, construction target is >= 2");
    }

    #[test]
    fn blend_family_preserves_high_band_energy() {
        let ratio = mean_high_band_ratio(ArtifactFamily::LoFreqBlend, 2);
        assert!(
            (0.75..=1.25).contains(&ratio),
            "blend fakes high-band ratio {ratio}, expected within 25% of paired reals"
        );
    }

    #[test]
    fn frames_within_video_share_structure() {
        let config = tiny_config();
        let ds = synth_dataset(&config).unwrap();
        let v = &ds.train[0];
        let a = v.frames[0].data();
        let b = v.frames[1].data();
        let mse: f32 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f32>() / a.len() as f32;
        assert!(mse < 0.01, "per-frame jitter should be small, mse {mse}");
        assert!(mse > 0.0, "frames should not be identical");
    }
}
