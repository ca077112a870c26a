//! Frequency-domain decomposition and masked recombination.
//!
//! Images are carried into a centered 2-D spectrum (DC bin at `(H/2, W/2)`),
//! split into high and low frequency components by a Chebyshev-box mask with
//! cutoff `d`, and recombined after randomly erasing patches of the
//! high-frequency image:
//!
//! ```text
//! high = idft2(dft2(x) * freq_mask(d))     // bins with Dis(u,v) > d
//! low  = x - high
//! out  = high * patch_mask + low
//! ```
//!
//! Extents are restricted to powers of two so a radix-2 transform suffices.
//! The transform is unnormalized in the forward direction, so Parseval reads
//! `sum|x|^2 == sum|z|^2 / (H*W)`.

use num_complex::Complex;

use crate::rng::SplitMix64;
use crate::tensor::{format_shape, Scalar, Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum SpectralError {
    #[error("image extent {extent} is not a power of two")]
    NonPowerOfTwo { extent: usize },
    #[error("expected a C x H x W image, got shape {shape}")]
    NotAnImage { shape: String },
    #[error("cutoff {cutoff} out of range, must be at most {max}")]
    CutoffOutOfRange { cutoff: usize, max: usize },
    #[error("patch size {patch_size} does not divide image extents {height}x{width}")]
    PatchSizeMismatch { patch_size: usize, height: usize, width: usize },
    #[error("mask ratio {ratio} outside [0, 1]")]
    RatioOutOfRange { ratio: f64 },
    #[error("spectrum/mask extent mismatch: {lhs} vs {rhs}")]
    ExtentMismatch { lhs: String, rhs: String },
    #[error("inverse transform symmetry violation: imaginary residue {residue} above tolerance {tolerance}")]
    SymmetryViolation { residue: f64, tolerance: f64 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

fn check_image<E: Scalar>(image: &Tensor<E>) -> Result<(usize, usize, usize), SpectralError> {
    let [c, h, w] = match *image.shape() {
        [c, h, w] => [c, h, w],
        _ => return Err(SpectralError::NotAnImage { shape: format_shape(image.shape()) }),
    };
    for extent in [h, w] {
        if !extent.is_power_of_two() {
            return Err(SpectralError::NonPowerOfTwo { extent });
        }
    }
    Ok((c, h, w))
}

// ------------------------------------------------------------------ fft

/// Twiddle factors exp(sign * 2*pi*i*k/n) for k in 0..n/2, computed in f64.
fn twiddle_table(n: usize, inverse: bool) -> Vec<Complex<f64>> {
    let sign = if inverse { 1.0 } else { -1.0 };
    (0..n / 2)
        .map(|k| {
            let angle = sign * std::f64::consts::TAU * k as f64 / n as f64;
            Complex::new(angle.cos(), angle.sin())
        })
        .collect()
}

/// Iterative radix-2 Cooley-Tukey transform, unnormalized.
fn fft_inplace<E: Scalar>(buf: &mut [Complex<E>], twiddles: &[Complex<f64>]) {
    let n = buf.len();
    debug_assert!(n.is_power_of_two());
    debug_assert_eq!(twiddles.len(), n / 2);
    // bit-reversal permutation
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let stride = n / len;
        let half = len / 2;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let tw = twiddles[k * stride];
                let w = Complex::new(E::from_f64(tw.re), E::from_f64(tw.im));
                let u = buf[start + k];
                let v = buf[start + k + half] * w;
                buf[start + k] = u + v;
                buf[start + k + half] = u - v;
            }
        }
        len <<= 1;
    }
}

/// 2-D transform over a row-major H x W buffer: rows, then columns.
fn fft2_inplace<E: Scalar>(buf: &mut [Complex<E>], h: usize, w: usize, inverse: bool) {
    let row_tw = twiddle_table(w, inverse);
    for row in buf.chunks_mut(w) {
        fft_inplace(row, &row_tw);
    }
    let col_tw = twiddle_table(h, inverse);
    let mut column = vec![Complex::new(E::zero(), E::zero()); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = buf[y * w + x];
        }
        fft_inplace(&mut column, &col_tw);
        for y in 0..h {
            buf[y * w + x] = column[y];
        }
    }
}

// ------------------------------------------------------------- spectrum

/// Per-channel complex spectrum in the centered convention: the DC bin of the
/// source image sits at index `(H/2, W/2)`.
#[derive(Debug, Clone)]
pub struct Spectrum<E: Scalar> {
    height: usize,
    width: usize,
    channels: Vec<Vec<Complex<E>>>,
}

impl<E: Scalar> Spectrum<E> {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn channel(&self, c: usize) -> &[Complex<E>] {
        &self.channels[c]
    }

    /// Bin at centered position (u, v).
    pub fn bin(&self, c: usize, u: usize, v: usize) -> Complex<E> {
        self.channels[c][u * self.width + v]
    }

    /// Total squared magnitude over all channels and bins.
    pub fn energy(&self) -> f64 {
        self.channels
            .iter()
            .flat_map(|ch| ch.iter())
            .map(|z| z.norm_sqr().to_f64())
            .sum()
    }

    /// Squared magnitude split at the Chebyshev cutoff: `(above d, at or below d)`.
    pub fn band_energy(&self, cutoff: usize) -> (f64, f64) {
        let (hc, wc) = (self.height / 2, self.width / 2);
        let mut high = 0.0;
        let mut low = 0.0;
        for ch in &self.channels {
            for (idx, z) in ch.iter().enumerate() {
                let (u, v) = (idx / self.width, idx % self.width);
                let dis = u.abs_diff(hc).max(v.abs_diff(wc));
                if dis > cutoff {
                    high += z.norm_sqr().to_f64();
                } else {
                    low += z.norm_sqr().to_f64();
                }
            }
        }
        (high, low)
    }
}

/// Centered 2-D DFT of a `C x H x W` image with power-of-two extents.
pub fn dft2<E: Scalar>(image: &Tensor<E>) -> Result<Spectrum<E>, SpectralError> {
    let (c, h, w) = check_image(image)?;
    let data = image.data();
    let mut channels = Vec::with_capacity(c);
    for ci in 0..c {
        let plane = &data[ci * h * w..][..h * w];
        let mut buf: Vec<Complex<E>> = plane.iter().map(|&v| Complex::new(v, E::zero())).collect();
        fft2_inplace(&mut buf, h, w, false);
        // shift DC to the center
        let mut centered = vec![Complex::new(E::zero(), E::zero()); h * w];
        for u in 0..h {
            let us = (u + h / 2) % h;
            for v in 0..w {
                let vs = (v + w / 2) % w;
                centered[us * w + vs] = buf[u * w + v];
            }
        }
        channels.push(centered);
    }
    Ok(Spectrum { height: h, width: w, channels })
}

/// Real image recovered from a spectrum, along with the largest absolute
/// imaginary residue that was discarded.
#[derive(Debug, Clone)]
pub struct InverseResult<E: Scalar> {
    pub image: Tensor<E>,
    pub max_imag: E,
}

/// Inverse of [`dft2`]: real part of the inverse transform. The imaginary
/// residue is reported; it stays at rounding level whenever the spectrum came
/// from a real image through a symmetric frequency mask.
pub fn idft2<E: Scalar>(spectrum: &Spectrum<E>) -> InverseResult<E> {
    let (h, w) = (spectrum.height, spectrum.width);
    let inv_hw = E::from_f64(1.0 / (h * w) as f64);
    let mut data = Vec::with_capacity(spectrum.channels.len() * h * w);
    let mut max_imag = E::zero();
    for ch in &spectrum.channels {
        // undo the center shift
        let mut buf = vec![Complex::new(E::zero(), E::zero()); h * w];
        for u in 0..h {
            let us = (u + h / 2) % h;
            for v in 0..w {
                let vs = (v + w / 2) % w;
                buf[u * w + v] = ch[us * w + vs];
            }
        }
        fft2_inplace(&mut buf, h, w, true);
        for z in buf {
            data.push(z.re * inv_hw);
            max_imag = max_imag.max((z.im * inv_hw).abs());
        }
    }
    let image = Tensor::new(&[spectrum.channels.len(), h, w], data).expect("consistent extents");
    InverseResult { image, max_imag }
}

/// [`idft2`] that flags an imaginary residue above `tolerance` as a mask
/// symmetry violation.
pub fn idft2_checked<E: Scalar>(spectrum: &Spectrum<E>, tolerance: f64) -> Result<Tensor<E>, SpectralError> {
    let result = idft2(spectrum);
    let residue = result.max_imag.to_f64();
    if residue > tolerance {
        return Err(SpectralError::SymmetryViolation { residue, tolerance });
    }
    Ok(result.image)
}

// ------------------------------------------------------------ freq mask

/// Binary high-pass mask on the centered spectrum: entry `(u, v)` is 1 iff
/// `max(|u - H/2|, |v - W/2|) > d`. Bins at exactly distance `d` belong to
/// the low component.
#[derive(Debug, Clone)]
pub struct FreqMask {
    height: usize,
    width: usize,
    cutoff: usize,
    keep_high: Vec<bool>,
}

impl FreqMask {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn keeps_high(&self, u: usize, v: usize) -> bool {
        self.keep_high[u * self.width + v]
    }

    pub fn ones_count(&self) -> usize {
        self.keep_high.iter().filter(|&&k| k).count()
    }

    /// 0/1 grid for export in the tensor format.
    pub fn to_tensor<E: Scalar>(&self) -> Tensor<E> {
        Tensor::from_fn(&[self.height, self.width], |i| {
            if self.keep_high[i] {
                E::one()
            } else {
                E::zero()
            }
        })
    }
}

/// Chebyshev-box frequency mask. `cutoff` must satisfy `0 <= d <= max(H,W)/2`.
pub fn freq_mask(height: usize, width: usize, cutoff: usize) -> Result<FreqMask, SpectralError> {
    let max = height.max(width) / 2;
    if cutoff > max {
        return Err(SpectralError::CutoffOutOfRange { cutoff, max });
    }
    let (hc, wc) = (height / 2, width / 2);
    let mut keep_high = Vec::with_capacity(height * width);
    for u in 0..height {
        for v in 0..width {
            let dis = u.abs_diff(hc).max(v.abs_diff(wc));
            keep_high.push(dis > cutoff);
        }
    }
    Ok(FreqMask { height, width, cutoff, keep_high })
}

/// Zero all bins the mask does not keep.
pub fn apply_freq_mask<E: Scalar>(spectrum: &Spectrum<E>, mask: &FreqMask) -> Result<Spectrum<E>, SpectralError> {
    if spectrum.height != mask.height || spectrum.width != mask.width {
        return Err(SpectralError::ExtentMismatch {
            lhs: format!("{}x{}", spectrum.height, spectrum.width),
            rhs: format!("{}x{}", mask.height, mask.width),
        });
    }
    let zero = Complex::new(E::zero(), E::zero());
    let channels = spectrum
        .channels
        .iter()
        .map(|ch| {
            ch.iter()
                .zip(&mask.keep_high)
                .map(|(&z, &keep)| if keep { z } else { zero })
                .collect()
        })
        .collect();
    Ok(Spectrum { height: spectrum.height, width: spectrum.width, channels })
}

// ------------------------------------------------------------- decompose

/// Spatial-domain high/low split. `high + low` reproduces the source image by
/// construction: the low component is defined as the residual.
#[derive(Debug, Clone)]
pub struct HighLowPair<E: Scalar> {
    pub high: Tensor<E>,
    pub low: Tensor<E>,
}

pub fn decompose_frequency<E: Scalar>(image: &Tensor<E>, cutoff: usize) -> Result<HighLowPair<E>, SpectralError> {
    let (_, h, w) = check_image(image)?;
    let mask = freq_mask(h, w, cutoff)?;
    let spectrum = dft2(image)?;
    let high = idft2(&apply_freq_mask(&spectrum, &mask)?).image;
    let low_data: Vec<E> = image.data().iter().zip(high.data()).map(|(&x, &hv)| x - hv).collect();
    let low = Tensor::new(image.shape(), low_data)?;
    Ok(HighLowPair { high, low })
}

// ------------------------------------------------------------ patch mask

/// Binary spatial mask built on a regular grid of square patches; each patch
/// is uniformly 0 or 1 and exactly `round(ratio * patches)` patches are zero.
#[derive(Debug, Clone)]
pub struct PatchMask {
    height: usize,
    width: usize,
    patch_size: usize,
    ratio: f64,
    keep: Vec<bool>, // per patch, row-major over the patch grid
}

impl PatchMask {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn total_patches(&self) -> usize {
        self.keep.len()
    }

    pub fn zeroed_patches(&self) -> usize {
        self.keep.iter().filter(|&&k| !k).count()
    }

    /// Mask value at pixel (y, x): 1 keeps, 0 erases.
    pub fn value(&self, y: usize, x: usize) -> bool {
        let patches_w = self.width / self.patch_size;
        self.keep[(y / self.patch_size) * patches_w + (x / self.patch_size)]
    }

    pub fn to_tensor<E: Scalar>(&self) -> Tensor<E> {
        Tensor::from_fn(&[self.height, self.width], |i| {
            if self.value(i / self.width, i % self.width) {
                E::one()
            } else {
                E::zero()
            }
        })
    }
}

/// Uniformly random patch mask: `round(ratio * patches)` patches erased.
pub fn random_patch_mask(
    height: usize,
    width: usize,
    patch_size: usize,
    ratio: f64,
    rng: &mut SplitMix64,
) -> Result<PatchMask, SpectralError> {
    if patch_size == 0 || height % patch_size != 0 || width % patch_size != 0 {
        return Err(SpectralError::PatchSizeMismatch { patch_size, height, width });
    }
    if !(0.0..=1.0).contains(&ratio) {
        return Err(SpectralError::RatioOutOfRange { ratio });
    }
    let total = (height / patch_size) * (width / patch_size);
    let zeroed = (ratio * total as f64).round() as usize;
    let mut keep = vec![true; total];
    for idx in rng.choose_k(total, zeroed) {
        keep[idx] = false;
    }
    Ok(PatchMask { height, width, patch_size, ratio, keep })
}

// --------------------------------------------------------- mfr transform

/// Result of the masked-frequency recombination. Values are reported, not
/// clamped: clamping would break the `high + low == image` partition.
#[derive(Debug, Clone)]
pub struct MfrOutcome<E: Scalar> {
    pub image: Tensor<E>,
    /// How many output values fell outside [0, 1].
    pub out_of_range: usize,
}

/// Recombine the masked high-frequency component with the intact low
/// component: `out = high * mask + low`. One mask is drawn per call and
/// shared across channels.
pub fn mfr_transform<E: Scalar>(
    image: &Tensor<E>,
    cutoff: usize,
    patch_size: usize,
    ratio: f64,
    rng: &mut SplitMix64,
) -> Result<MfrOutcome<E>, SpectralError> {
    let (c, h, w) = check_image(image)?;
    let pair = decompose_frequency(image, cutoff)?;
    let mask = random_patch_mask(h, w, patch_size, ratio, rng)?;
    let high = pair.high.data();
    let low = pair.low.data();
    let mut out = Vec::with_capacity(image.numel());
    let mut out_of_range = 0usize;
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                let i = (ci * h + y) * w + x;
                let keep = if mask.value(y, x) { E::one() } else { E::zero() };
                let v = high[i] * keep + low[i];
                if v < E::zero() || v > E::one() {
                    out_of_range += 1;
                }
                out.push(v);
            }
        }
    }
    Ok(MfrOutcome { image: Tensor::new(image.shape(), out)?, out_of_range })
}
