//! Short-time Fourier analysis and weighted overlap-add synthesis.
//!
//! Frames start `frame_len - hop` zero samples before the first input sample,
//! so every input sample is covered by `frame_len / hop` full frames. The
//! frame count is `ceil((len + frame_len - hop) / hop)`.

use std::f64::consts::PI;

use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::model::FrameTensor;

/// Multichannel real-valued signal.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub channels: Vec<Vec<f64>>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        let w = Self { channels, sample_rate };
        w.validate()?;
        Ok(w)
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            channels: vec![samples],
            sample_rate,
        }
    }

    pub fn zeros(channels: usize, len: usize, sample_rate: u32) -> Self {
        Self {
            channels: vec![vec![0.0; len]; channels],
            sample_rate,
        }
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, m: usize) -> &[f64] {
        &self.channels[m]
    }

    pub fn validate(&self) -> Result<()> {
        let len = self.len();
        if self.channels.iter().any(|c| c.len() != len) {
            return Err(Error::Shape("waveform channels differ in length".into()));
        }
        if self.channels.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("waveform"));
        }
        Ok(())
    }

    /// Single-channel waveform holding channel `m`.
    pub fn select(&self, m: usize) -> Waveform {
        Waveform::mono(self.channels[m].clone(), self.sample_rate)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindowKind {
    /// Periodic Hann.
    Hann,
}

impl WindowKind {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            WindowKind::Hann => (0..len)
                .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StftConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub window: WindowKind,
}

impl Default for StftConfig {
    /// 32 ms frames with an 8 ms shift at 16 kHz.
    fn default() -> Self {
        Self {
            frame_len: 512,
            hop: 128,
            window: WindowKind::Hann,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.frame_len == 0 || !self.frame_len.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "frame_len must be even and hop positive, got {}/{}",
                self.frame_len, self.hop
            )));
        }
        if !self.frame_len.is_multiple_of(self.hop) {
            return Err(Error::Config(format!(
                "hop {} does not divide frame_len {}",
                self.hop, self.frame_len
            )));
        }
        let w = self.window.coefficients(self.frame_len);
        let min_sum = (0..self.hop)
            .map(|p| (p..self.frame_len).step_by(self.hop).map(|n| w[n] * w[n]).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        if !(min_sum > 1e-8) {
            return Err(Error::Config("window has no overlap-add support at this hop".into()));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    pub fn pad(&self) -> usize {
        self.frame_len - self.hop
    }

    pub fn num_frames(&self, len: usize) -> usize {
        (len + self.pad()).div_ceil(self.hop)
    }

    /// Center frequency of bin `k` in Hz.
    pub fn bin_frequency(&self, k: usize, sample_rate: u32) -> f64 {
        k as f64 * sample_rate as f64 / self.frame_len as f64
    }
}

/// Analysis of every channel of `w`, giving an `(m, t, f)` tensor.
pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<FrameTensor> {
    cfg.validate()?;
    w.validate()?;
    if w.num_channels() == 0 || w.is_empty() {
        return Err(Error::Shape("empty waveform".into()));
    }
    let n = cfg.frame_len;
    let bins = cfg.bins();
    let frames = cfg.num_frames(w.len());
    let pad = cfg.pad();
    let win = cfg.window.coefficients(n);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut out = FrameTensor::zeros(w.num_channels(), frames, bins);
    let mut buf = vec![C64::new(0.0, 0.0); n];
    let mut scratch = vec![C64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for (m, ch) in w.channels.iter().enumerate() {
        for t in 0..frames {
            let start = (t * cfg.hop) as isize - pad as isize;
            for (k, b) in buf.iter_mut().enumerate() {
                let idx = start + k as isize;
                let v = if idx >= 0 && (idx as usize) < ch.len() {
                    ch[idx as usize]
                } else {
                    0.0
                };
                *b = C64::new(v * win[k], 0.0);
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            for (f, v) in buf.iter().take(bins).enumerate() {
                *out.get_mut(m, t, f) = *v;
            }
        }
    }
    Ok(out)
}

/// Weighted overlap-add synthesis returning `out_len` samples per channel.
pub fn istft(x: &FrameTensor, cfg: &StftConfig, out_len: usize, sample_rate: u32) -> Result<Waveform> {
    cfg.validate()?;
    if x.bins() != cfg.bins() {
        return Err(Error::Shape(format!(
            "tensor has {} bins, config expects {}",
            x.bins(),
            cfg.bins()
        )));
    }
    let n = cfg.frame_len;
    let pad = cfg.pad();
    let frames = x.frames();
    let total = (frames.saturating_sub(1)) * cfg.hop + n;
    let win = cfg.window.coefficients(n);
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    let mut scratch = vec![C64::new(0.0, 0.0); ifft.get_inplace_scratch_len()];
    let mut norm = vec![0.0; total];
    for t in 0..frames {
        for k in 0..n {
            norm[t * cfg.hop + k] += win[k] * win[k];
        }
    }
    let mut channels = Vec::with_capacity(x.width());
    let mut buf = vec![C64::new(0.0, 0.0); n];
    for m in 0..x.width() {
        let mut acc = vec![0.0; total];
        for t in 0..frames {
            for f in 0..cfg.bins() {
                buf[f] = *x.get(m, t, f);
            }
            buf[0].im = 0.0;
            buf[n / 2].im = 0.0;
            for f in 1..n / 2 {
                buf[n - f] = buf[f].conj();
            }
            ifft.process_with_scratch(&mut buf, &mut scratch);
            for k in 0..n {
                acc[t * cfg.hop + k] += buf[k].re / n as f64 * win[k];
            }
        }
        let ch: Vec<f64> = (0..out_len)
            .map(|i| {
                let p = i + pad;
                if p < total && norm[p] > 1e-10 {
                    acc[p] / norm[p]
                } else {
                    0.0
                }
            })
            .collect();
        channels.push(ch);
    }
    Ok(Waveform { channels, sample_rate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| StandardNormal.sample(&mut r)).collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    #[test]
    fn zeros_give_zeros() {
        let w = Waveform::zeros(2, 1000, 16000);
        let x = stft(&w, &StftConfig::default()).unwrap();
        assert!(x.data().iter().all(|z| z.norm() == 0.0));
        let y = istft(&x, &StftConfig::default(), 1000, 16000).unwrap();
        assert!(y.channels.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn one_second_frame_count() {
        let w = Waveform::zeros(1, 16000, 16000);
        let cfg = StftConfig::default();
        let x = stft(&w, &cfg).unwrap();
        assert_eq!(x.bins(), 257);
        // ceil((16000 + 384) / 128) = 128
        assert_eq!(x.frames(), 128);
    }

    #[test]
    fn bin_centered_sinusoid_is_concentrated() {
        let cfg = StftConfig::default();
        let k0 = 40usize;
        let freq = k0 as f64 / cfg.frame_len as f64;
        let s: Vec<f64> = (0..8000).map(|n| (2.0 * PI * freq * n as f64).sin()).collect();
        let x = stft(&Waveform::mono(s, 16000), &cfg).unwrap();
        let t = x.frames() / 2;
        let total: f64 = (0..cfg.bins()).map(|f| x.get(0, t, f).norm_sqr()).sum();
        let peak: f64 = (k0 - 1..=k0 + 1).map(|f| x.get(0, t, f).norm_sqr()).sum();
        assert!(peak / total > 0.95, "ratio {}", peak / total);
    }

    #[test]
    fn white_noise_round_trip() {
        let cfg = StftConfig::default();
        let s = noise(10_000, 1);
        let w = Waveform::new(vec![s.clone(), noise(10_000, 2)], 16000).unwrap();
        let y = istft(&stft(&w, &cfg).unwrap(), &cfg, 10_000, 16000).unwrap();
        assert!(rel_err(&y.channels[0], &s) < 1e-6);
        assert!(rel_err(&y.channels[1], &w.channels[1]) < 1e-6);
    }

    #[test]
    fn impulse_round_trip_keeps_position() {
        let cfg = StftConfig::default();
        let mut s = vec![0.0; 700];
        s[333] = 1.0;
        let y = istft(&stft(&Waveform::mono(s, 16000), &cfg).unwrap(), &cfg, 700, 16000).unwrap();
        let peak = y.channels[0].iter().enumerate().fold(
            (0, 0.0),
            |acc, (i, &v)| if v.abs() > acc.1 { (i, v.abs()) } else { acc },
        );
        assert_eq!(peak.0, 333);
        assert!((y.channels[0][333] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn linearity() {
        let cfg = StftConfig::default();
        let a = noise(3000, 3);
        let b = noise(3000, 4);
        let mix: Vec<f64> = a.iter().zip(&b).map(|(p, q)| 2.0 * p - 0.5 * q).collect();
        let xa = stft(&Waveform::mono(a, 16000), &cfg).unwrap();
        let xb = stft(&Waveform::mono(b, 16000), &cfg).unwrap();
        let xm = stft(&Waveform::mono(mix, 16000), &cfg).unwrap();
        for ((m, p), q) in xm.data().iter().zip(xa.data()).zip(xb.data()) {
            assert!((m - (p * 2.0 - q * 0.5)).norm() < 1e-10);
        }
    }

    #[test]
    fn parseval_constant() {
        // Regression value measured once: sum over the full spectrum of |X|^2
        // equals 768 * sum x^2 for the Hann/512/128 configuration.
        let cfg = StftConfig::default();
        let s = noise(5000, 5);
        let energy: f64 = s.iter().map(|v| v * v).sum();
        let x = stft(&Waveform::mono(s, 16000), &cfg).unwrap();
        let mut spec = 0.0;
        for t in 0..x.frames() {
            for f in 0..cfg.bins() {
                let w = if f == 0 || f == cfg.bins() - 1 { 1.0 } else { 2.0 };
                spec += w * x.get(0, t, f).norm_sqr();
            }
        }
        assert!((spec / energy - 768.0).abs() < 1e-9 * 768.0);
    }

    #[test]
    fn rejects_mismatched_channels_and_bad_config() {
        let w = Waveform {
            channels: vec![vec![0.0; 10], vec![0.0; 11]],
            sample_rate: 16000,
        };
        assert!(matches!(stft(&w, &StftConfig::default()), Err(Error::Shape(_))));
        let bad = StftConfig {
            frame_len: 512,
            hop: 100,
            window: WindowKind::Hann,
        };
        assert!(bad.validate().is_err());
    }
}
