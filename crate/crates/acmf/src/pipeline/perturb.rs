//! Test-time image perturbations for the robustness harness.
//!
//! Fixed settings: sharpness factor 2, brightness factor 1.5, additive
//! Gaussian noise with variance 1e-4, color factor 2. Inputs are expected in
//! [0, 1]; outputs are clamped back into [0, 1].

use serde::{Deserialize, Serialize};

use super::{synth::box_blur3, PipelineError};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PerturbKind {
    #[serde(rename = "sharpness")]
    Sharpness,
    #[serde(rename = "brightness")]
    Brightness,
    #[serde(rename = "gaussian-noise")]
    GaussianNoise,
    #[serde(rename = "color")]
    Color,
}

impl PerturbKind {
    pub const ALL: [PerturbKind; 4] = [
        PerturbKind::Sharpness,
        PerturbKind::Brightness,
        PerturbKind::GaussianNoise,
        PerturbKind::Color,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PerturbKind::Sharpness => "sharpness",
            PerturbKind::Brightness => "brightness",
            PerturbKind::GaussianNoise => "gaussian-noise",
            PerturbKind::Color => "color",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sharpness" => Some(PerturbKind::Sharpness),
            "brightness" => Some(PerturbKind::Brightness),
            "gaussian-noise" => Some(PerturbKind::GaussianNoise),
            "color" => Some(PerturbKind::Color),
            _ => None,
        }
    }
}

const SHARPNESS_FACTOR: f64 = 2.0;
const BRIGHTNESS_FACTOR: f64 = 1.5;
const NOISE_STD: f64 = 0.01; // variance 1e-4
const COLOR_FACTOR: f64 = 2.0;

/// Apply one perturbation to a `C x H x W` frame in [0, 1]. Only the noise
/// kind consumes randomness.
pub fn perturb(frame: &Tensor<f32>, kind: PerturbKind, rng: &mut SplitMix64) -> Result<Tensor<f32>, PipelineError> {
    let [c, h, w] = match *frame.shape() {
        [c, h, w] => [c, h, w],
        _ => {
            return Err(PipelineError::InvalidClip(format!(
                "perturb expects C x H x W, got {}",
                crate::tensor::format_shape(frame.shape())
            )))
        }
    };
    let data = frame.data();
    let out: Vec<f32> = match kind {
        PerturbKind::Brightness => data.iter().map(|&v| (v as f64 * BRIGHTNESS_FACTOR).clamp(0.0, 1.0) as f32).collect(),
        PerturbKind::GaussianNoise => data
            .iter()
            .map(|&v| (v as f64 + NOISE_STD * rng.normal()).clamp(0.0, 1.0) as f32)
            .collect(),
        PerturbKind::Sharpness => {
            let mut out = Vec::with_capacity(data.len());
            for ci in 0..c {
                let plane: Vec<f64> = data[ci * h * w..][..h * w].iter().map(|&v| v as f64).collect();
                let blurred = box_blur3(&plane, h, w);
                out.extend(
                    plane
                        .iter()
                        .zip(&blurred)
                        .map(|(&v, &b)| (v + (SHARPNESS_FACTOR - 1.0) * (v - b)).clamp(0.0, 1.0) as f32),
                );
            }
            out
        }
        PerturbKind::Color => {
            if c != 3 {
                // grayscale has no chroma to push; identity
                return Ok(frame.clone());
            }
            let hw = h * w;
            let mut out = vec![0.0f32; data.len()];
            for i in 0..hw {
                let r = data[i] as f64;
                let g = data[hw + i] as f64;
                let b = data[2 * hw + i] as f64;
                let lum = 0.299 * r + 0.587 * g + 0.114 * b;
                for (ci, v) in [r, g, b].into_iter().enumerate() {
                    out[ci * hw + i] = (lum + COLOR_FACTOR * (v - lum)).clamp(0.0, 1.0) as f32;
                }
            }
            out
        }
    };
    Ok(Tensor::new(frame.shape(), out)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(data: Vec<f32>, c: usize, s: usize) -> Tensor<f32> {
        Tensor::new(&[c, s, s], data).unwrap()
    }

    #[test]
    fn brightness_on_zeros_is_zeros() {
        let f = frame(vec![0.0; 16], 1, 4);
        let mut rng = SplitMix64::new(0);
        let out = perturb(&f, PerturbKind::Brightness, &mut rng).unwrap();
        assert_eq!(out.data(), f.data());
    }

    #[test]
    fn brightness_scales_and_clamps() {
        let f = frame(vec![0.2, 0.5, 0.8, 1.0], 1, 2);
        let mut rng = SplitMix64::new(0);
        let out = perturb(&f, PerturbKind::Brightness, &mut rng).unwrap();
        let expect = [0.3f32, 0.75, 1.0, 1.0];
        for (a, b) in out.data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn gaussian_noise_is_deterministic_under_seed() {
        let f = frame((0..16).map(|i| i as f32 / 15.0).collect(), 1, 4);
        let a = perturb(&f, PerturbKind::GaussianNoise, &mut SplitMix64::new(5)).unwrap();
        let b = perturb(&f, PerturbKind::GaussianNoise, &mut SplitMix64::new(5)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.data(), f.data());
    }

    #[test]
    fn sharpness_leaves_constants_unchanged() {
        let f = frame(vec![0.4; 64], 1, 8);
        let mut rng = SplitMix64::new(0);
        let out = perturb(&f, PerturbKind::Sharpness, &mut rng).unwrap();
        for (a, b) in out.data().iter().zip(f.data()) {
            assert!((a - b).abs() < 1e-6, "blur of a constant is itself");
        }
    }

    #[test]
    fn color_is_identity_on_grayscale() {
        let f = frame((0..16).map(|i| i as f32 / 15.0).collect(), 1, 4);
        let mut rng = SplitMix64::new(0);
        let out = perturb(&f, PerturbKind::Color, &mut rng).unwrap();
        assert_eq!(out, f);
    }

    #[test]
    fn color_pushes_channels_from_luminance() {
        let mut data = vec![0.0f32; 3 * 4];
        for i in 0..4 {
            data[i] = 0.6; // R
            data[4 + i] = 0.5; // G
            data[8 + i] = 0.4; // B
        }
        let f = frame(data, 3, 2);
        let mut rng = SplitMix64::new(0);
        let out = perturb(&f, PerturbKind::Color, &mut rng).unwrap();
        let lum = 0.299 * 0.6 + 0.587 * 0.5 + 0.114 * 0.4;
        let expect = [lum + 2.0 * (0.6 - lum), lum + 2.0 * (0.5 - lum), lum + 2.0 * (0.4 - lum)];
        for ci in 0..3 {
            assert!((out.data()[ci * 4] as f64 - expect[ci]).abs() < 1e-6);
        }
    }

    #[test]
    fn outputs_stay_in_unit_range() {
        let mut rng = SplitMix64::new(9);
        let f = frame((0..64).map(|_| rng.next_f64() as f32).collect(), 1, 8);
        for kind in PerturbKind::ALL {
            let out = perturb(&f, kind, &mut rng).unwrap();
            assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)), "{kind:?}");
        }
    }
}
