//! Synthetic reverberant, noisy multichannel scenes with full ground truth.
//!
//! Geometry is a uniform linear array with far-field sources. Each room
//! response is a fractional-delay direct path followed by an exponentially
//! decaying Gaussian tail. Sources are voiced, formant-filtered excitation
//! with syllable envelopes and pauses; noise is spatially diffuse.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::linalg::{CMatrix, C64};
use crate::model::{AtfSet, BinMatrices, FrameTensor};
use crate::rng::{stream, stream_indexed, Stream};
use crate::spectral::{istft, StftConfig, Waveform};
use crate::tensor_io::{save_tensor, RawTensor};
use crate::wav::{write_wav, WavEncoding};

pub const SPEED_OF_SOUND: f64 = 343.0;
/// Propagation delay kept at the reference microphone, in samples.
pub const BULK_DELAY: f64 = 16.0;
const SINC_HALF_WIDTH: usize = 8;
const ROOM_VOLUME: f64 = 60.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub sources: usize,
    pub mics: usize,
    pub duration_s: f64,
    pub rt60: f64,
    /// Reverberant SNR; `f64::INFINITY` disables noise.
    pub snr_db: f64,
    pub early_ms: f64,
    pub seed: u64,
    pub sample_rate: u32,
    pub mic_spacing: f64,
    pub min_separation_deg: f64,
    pub min_distance: f64,
    pub max_distance: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            sources: 2,
            mics: 2,
            duration_s: 6.0,
            rt60: 0.5,
            snr_db: 20.0,
            early_ms: 50.0,
            seed: 0,
            sample_rate: 16000,
            mic_spacing: 0.05,
            min_separation_deg: 30.0,
            min_distance: 1.0,
            max_distance: 2.0,
        }
    }
}

const SPEC_KEYS: &[&str] = &[
    "scene.sources",
    "scene.mics",
    "scene.duration",
    "scene.rt60",
    "scene.snr_db",
    "scene.early_ms",
    "scene.seed",
    "scene.sample_rate",
    "scene.mic_spacing",
    "scene.min_separation_deg",
    "scene.min_distance",
    "scene.max_distance",
];

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.sources == 0 || self.mics < self.sources {
            return bad(format!(
                "need mics >= sources >= 1, got {} sources and {} mics",
                self.sources, self.mics
            ));
        }
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return bad(format!("duration must be positive, got {}", self.duration_s));
        }
        if !(self.rt60 >= 0.0) || !self.rt60.is_finite() {
            return bad(format!("rt60 must be >= 0, got {}", self.rt60));
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return bad("snr_db must be a number or inf".into());
        }
        if !(self.early_ms > 0.0) || self.sample_rate == 0 || !(self.mic_spacing > 0.0) {
            return bad("early_ms, sample_rate and mic_spacing must be positive".into());
        }
        if !(self.min_distance > 0.0) || self.max_distance < self.min_distance {
            return bad("distance range is empty".into());
        }
        let span = 140.0;
        if self.min_separation_deg * (self.sources as f64 - 1.0) > span {
            return bad(format!(
                "{} sources cannot be {} degrees apart",
                self.sources, self.min_separation_deg
            ));
        }
        Ok(())
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        kv.reject_unknown(SPEC_KEYS)?;
        let d = Self::default();
        let spec = Self {
            sources: kv.get_or("scene.sources", d.sources)?,
            mics: kv.get_or("scene.mics", d.mics)?,
            duration_s: kv.get_or("scene.duration", d.duration_s)?,
            rt60: kv.get_or("scene.rt60", d.rt60)?,
            snr_db: kv.get_or("scene.snr_db", d.snr_db)?,
            early_ms: kv.get_or("scene.early_ms", d.early_ms)?,
            seed: kv.get_or("scene.seed", d.seed)?,
            sample_rate: kv.get_or("scene.sample_rate", d.sample_rate)?,
            mic_spacing: kv.get_or("scene.mic_spacing", d.mic_spacing)?,
            min_separation_deg: kv.get_or("scene.min_separation_deg", d.min_separation_deg)?,
            min_distance: kv.get_or("scene.min_distance", d.min_distance)?,
            max_distance: kv.get_or("scene.max_distance", d.max_distance)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.insert("scene.sources", self.sources);
        kv.insert("scene.mics", self.mics);
        kv.insert("scene.duration", self.duration_s);
        kv.insert("scene.rt60", self.rt60);
        kv.insert("scene.snr_db", self.snr_db);
        kv.insert("scene.early_ms", self.early_ms);
        kv.insert("scene.seed", self.seed);
        kv.insert("scene.sample_rate", self.sample_rate);
        kv.insert("scene.mic_spacing", self.mic_spacing);
        kv.insert("scene.min_separation_deg", self.min_separation_deg);
        kv.insert("scene.min_distance", self.min_distance);
        kv.insert("scene.max_distance", self.max_distance);
        kv
    }

    pub fn num_samples(&self) -> usize {
        (self.duration_s * self.sample_rate as f64).round() as usize
    }
}

/// Source placement relative to the array.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SourcePosition {
    pub azimuth_deg: f64,
    pub distance: f64,
}

/// Room response of one source, split at the early/late boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct RoomResponse {
    /// `[mic][tap]`
    pub early: Vec<Vec<f64>>,
    pub late: Vec<Vec<f64>>,
    /// Direct-path arrival at the reference microphone, in samples.
    pub arrival: f64,
}

impl RoomResponse {
    pub fn full(&self, mic: usize) -> Vec<f64> {
        let mut out = self.early[mic].clone();
        out.extend_from_slice(&self.late[mic]);
        out
    }
}

#[derive(Clone, Debug)]
pub struct SceneTruth {
    pub spec: SceneSpec,
    pub positions: Vec<SourcePosition>,
    pub dry: Vec<Vec<f64>>,
    pub rirs: Vec<RoomResponse>,
    pub mixture: Waveform,
    /// Direct plus early part per source, all microphones.
    pub desired: Vec<Waveform>,
    pub late: Vec<Waveform>,
    pub noise: Waveform,
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Hann-windowed sinc interpolator placing a unit impulse at `delay` samples.
fn add_fractional_impulse(buf: &mut [f64], delay: f64, gain: f64) {
    let center = delay.round() as isize;
    let hw = SINC_HALF_WIDTH as isize;
    for k in (center - hw)..=(center + hw) {
        if k < 0 || k as usize >= buf.len() {
            continue;
        }
        let x = k as f64 - delay;
        let win = 0.5 + 0.5 * (PI * x / (hw as f64 + 1.0)).cos();
        buf[k as usize] += gain * sinc(x) * win;
    }
}

fn draw_positions(spec: &SceneSpec) -> Result<Vec<SourcePosition>> {
    let mut r = stream(spec.seed, Stream::Geometry);
    for _ in 0..10_000 {
        let az: Vec<f64> = (0..spec.sources).map(|_| r.random_range(20.0..160.0)).collect();
        let ok = (0..az.len()).all(|a| (a + 1..az.len()).all(|b| (az[a] - az[b]).abs() >= spec.min_separation_deg));
        if ok {
            return Ok(az
                .into_iter()
                .map(|azimuth_deg| SourcePosition {
                    azimuth_deg,
                    distance: r.random_range(spec.min_distance..=spec.max_distance),
                })
                .collect());
        }
    }
    Err(Error::Config(
        "could not place sources with the requested separation".into(),
    ))
}

/// Arrival time in samples at each microphone for a far-field source.
pub fn arrival_times(spec: &SceneSpec, azimuth_deg: f64) -> Vec<f64> {
    let fs = spec.sample_rate as f64;
    let cos = azimuth_deg.to_radians().cos();
    (0..spec.mics)
        .map(|m| BULK_DELAY + m as f64 * spec.mic_spacing * cos / SPEED_OF_SOUND * fs)
        .collect()
}

/// Room response of source `idx`.
pub fn gen_rir(spec: &SceneSpec, idx: usize) -> Result<RoomResponse> {
    spec.validate()?;
    let pos = draw_positions(spec)?[idx];
    Ok(gen_rir_at(spec, idx, pos))
}

fn gen_rir_at(spec: &SceneSpec, idx: usize, pos: SourcePosition) -> RoomResponse {
    let fs = spec.sample_rate as f64;
    let arrivals = arrival_times(spec, pos.azimuth_deg);
    let arrival = arrivals[0];
    let split = (arrival + spec.early_ms * 1e-3 * fs).round() as usize;
    let tail_len = (1.2 * spec.rt60 * fs).round() as usize;
    let head = arrivals.iter().cloned().fold(0.0, f64::max).ceil() as usize + SINC_HALF_WIDTH + 1;
    let total = (head + tail_len).max(split);
    let mut r = stream_indexed(spec.seed, Stream::Reverb, idx as u64);
    let mut early = Vec::with_capacity(spec.mics);
    let mut late = Vec::with_capacity(spec.mics);
    for &a in &arrivals {
        let mut h = vec![0.0; total];
        add_fractional_impulse(&mut h, a, 1.0);
        if spec.rt60 > 0.0 {
            let direct: f64 = h.iter().map(|v| v * v).sum();
            let start = a.floor() as usize + 1;
            let mut tail = vec![0.0; total];
            for (k, slot) in tail.iter_mut().enumerate().skip(start).take(tail_len) {
                let age = (k - start) as f64 / fs;
                let g: f64 = r.sample(StandardNormal);
                *slot = g * 10f64.powf(-3.0 * age / spec.rt60);
            }
            let rc = 0.057 * (ROOM_VOLUME / spec.rt60).sqrt();
            let want = direct * (pos.distance / rc).powi(2);
            let have: f64 = tail.iter().map(|v| v * v).sum();
            if have > 0.0 {
                let g = (want / have).sqrt();
                for (hv, tv) in h.iter_mut().zip(&tail) {
                    *hv += g * tv;
                }
            }
        }
        let cut = split.min(h.len());
        late.push(h[cut..].to_vec());
        h.truncate(cut);
        early.push(h);
    }
    RoomResponse { early, late, arrival }
}

/// Linear convolution truncated to `out_len` samples.
pub fn fft_convolve(a: &[f64], b: &[f64], out_len: usize) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return vec![0.0; out_len];
    }
    let n = (a.len() + b.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut fa: Vec<C64> = a
        .iter()
        .map(|&v| C64::new(v, 0.0))
        .chain(std::iter::repeat(C64::new(0.0, 0.0)))
        .take(n)
        .collect();
    let mut fb: Vec<C64> = b
        .iter()
        .map(|&v| C64::new(v, 0.0))
        .chain(std::iter::repeat(C64::new(0.0, 0.0)))
        .take(n)
        .collect();
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    (0..out_len)
        .map(|k| if k < n { fa[k].re / n as f64 } else { 0.0 })
        .collect()
}

struct Resonator {
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn step(&mut self, x: f64, freq: f64, bw: f64, fs: f64) -> f64 {
        let r = (-PI * bw / fs).exp();
        let a1 = 2.0 * r * (2.0 * PI * freq / fs).cos();
        let a2 = -r * r;
        let y = (1.0 - r) * x + a1 * self.y1 + a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Speech-like dry signal with unit RMS over active samples.
pub fn speech_like(len: usize, sample_rate: u32, r: &mut ChaCha8Rng) -> Vec<f64> {
    let fs = sample_rate as f64;
    let mut out = vec![0.0; len];
    let mut res = [
        Resonator { y1: 0.0, y2: 0.0 },
        Resonator { y1: 0.0, y2: 0.0 },
        Resonator { y1: 0.0, y2: 0.0 },
    ];
    let f0_base: f64 = r.random_range(100.0..220.0);
    let mut k = (r.random_range(0.0..0.3) * fs) as usize;
    let mut phase = 0.0;
    while k < len {
        // one word of 1 to 4 syllables, then a pause
        let syllables = r.random_range(1..=4);
        for _ in 0..syllables {
            let dur = (r.random_range(0.12..0.3) * fs) as usize;
            let formants = [
                r.random_range(300.0..850.0),
                r.random_range(900.0..2300.0),
                r.random_range(2400.0..3200.0),
            ];
            let voiced = r.random_bool(0.8);
            let f0 = f0_base * r.random_range(0.85..1.2);
            for q in 0..dur {
                let idx = k + q;
                if idx >= len {
                    break;
                }
                let env = (PI * q as f64 / dur as f64).sin().powf(0.7);
                let noise: f64 = r.sample(StandardNormal);
                let excitation = if voiced {
                    phase += f0 / fs;
                    let pulse = if phase >= 1.0 {
                        phase -= 1.0;
                        6.0
                    } else {
                        0.0
                    };
                    pulse + 0.15 * noise
                } else {
                    noise
                };
                let mut v = 0.0;
                for (resonator, (&fr, gain)) in res.iter_mut().zip(formants.iter().zip([1.0, 0.6, 0.3])) {
                    v += gain * resonator.step(excitation, fr, 80.0 + 0.05 * fr, fs);
                }
                out[idx] = env * v;
            }
            k += dur;
        }
        k += (r.random_range(0.08..0.5) * fs) as usize;
    }
    let active: Vec<f64> = out.iter().filter(|v| v.abs() > 0.0).map(|v| v * v).collect();
    if !active.is_empty() {
        let rms = (active.iter().sum::<f64>() / active.len() as f64).sqrt();
        if rms > 0.0 {
            out.iter_mut().for_each(|v| *v /= rms);
        }
    }
    out
}

/// Spatial coherence of a spherically diffuse field between two points.
pub fn diffuse_coherence(freq: f64, distance: f64) -> f64 {
    let x = 2.0 * PI * freq * distance / SPEED_OF_SOUND;
    if x.abs() < 1e-12 {
        1.0
    } else {
        x.sin() / x
    }
}

/// Stationary diffuse noise, unscaled.
pub fn diffuse_noise(spec: &SceneSpec, len: usize) -> Result<Waveform> {
    let cfg = StftConfig::default();
    let frames = cfg.num_frames(len);
    let bins = cfg.bins();
    let m = spec.mics;
    let mut r = stream(spec.seed, Stream::Noise);
    let mut spec_t = FrameTensor::zeros(m, frames, bins);
    for f in 0..bins {
        let freq = cfg.bin_frequency(f, spec.sample_rate);
        let coh = CMatrix::from_fn(m, m, |a, b| {
            let d = (a as f64 - b as f64).abs() * spec.mic_spacing;
            C64::new(diffuse_coherence(freq, d), 0.0)
        });
        let loaded = &coh + CMatrix::identity(m, m).scale(1e-6);
        let l = loaded
            .cholesky()
            .ok_or_else(|| Error::Numerical("diffuse coherence not positive definite".into()))?
            .l();
        let tilt = 1.0 / (1.0 + freq / 500.0).sqrt();
        for t in 0..frames {
            let g = CMatrix::from_fn(m, 1, |_, _| {
                let re: f64 = r.sample(StandardNormal);
                let im: f64 = r.sample(StandardNormal);
                C64::new(re, im) * (tilt / 2f64.sqrt())
            });
            let v = &l * g;
            spec_t.frame_mut(t, f).copy_from_slice(v.as_slice());
        }
    }
    istft(&spec_t, &cfg, len, spec.sample_rate)
}

fn energy(w: &Waveform) -> f64 {
    w.channels.iter().flat_map(|c| c.iter()).map(|v| v * v).sum()
}

/// Generates a full scene from `spec`.
pub fn gen_scene(spec: &SceneSpec) -> Result<SceneTruth> {
    spec.validate()?;
    let len = spec.num_samples();
    let fs = spec.sample_rate;
    let positions = draw_positions(spec)?;
    let mut dry = Vec::with_capacity(spec.sources);
    let mut rirs = Vec::with_capacity(spec.sources);
    let mut desired = Vec::with_capacity(spec.sources);
    let mut late = Vec::with_capacity(spec.sources);
    for (n, pos) in positions.iter().enumerate() {
        let mut r = stream_indexed(spec.seed, Stream::Source, n as u64);
        let s = speech_like(len, fs, &mut r);
        let rir = gen_rir_at(spec, n, *pos);
        let d: Vec<Vec<f64>> = rir.early.iter().map(|h| fft_convolve(&s, h, len)).collect();
        let l: Vec<Vec<f64>> = rir
            .late
            .iter()
            .map(|h| {
                // late part starts at the split point
                let mut full = vec![0.0; rir.early[0].len()];
                full.extend_from_slice(h);
                fft_convolve(&s, &full, len)
            })
            .collect();
        desired.push(Waveform::new(d, fs)?);
        late.push(Waveform::new(l, fs)?);
        rirs.push(rir);
        dry.push(s);
    }
    let mut speech = Waveform::zeros(spec.mics, len, fs);
    for (d, l) in desired.iter().zip(&late) {
        for m in 0..spec.mics {
            for k in 0..len {
                speech.channels[m][k] += d.channels[m][k] + l.channels[m][k];
            }
        }
    }
    let noise = if spec.snr_db.is_infinite() {
        Waveform::zeros(spec.mics, len, fs)
    } else {
        let mut v = diffuse_noise(spec, len)?;
        let g = (energy(&speech) / energy(&v) / 10f64.powf(spec.snr_db / 10.0)).sqrt();
        v.channels.iter_mut().flat_map(|c| c.iter_mut()).for_each(|x| *x *= g);
        v
    };
    let mut mixture = speech;
    for m in 0..spec.mics {
        for k in 0..len {
            mixture.channels[m][k] += noise.channels[m][k];
        }
    }
    Ok(SceneTruth {
        spec: spec.clone(),
        positions,
        dry,
        rirs,
        mixture,
        desired,
        late,
        noise,
    })
}

/// DTFT of `h` at bin `f` of a `frame_len`-point transform.
pub fn transfer_function(h: &[f64], f: usize, frame_len: usize) -> C64 {
    let omega = 2.0 * PI * f as f64 / frame_len as f64;
    h.iter()
        .enumerate()
        .map(|(k, &v)| C64::from_polar(v, -omega * k as f64))
        .sum()
}

/// Transfer function of each early response at the STFT bin frequencies,
/// as `M x 1` columns indexed `(source, bin)`.
pub fn truth_atf(truth: &SceneTruth, cfg: &StftConfig) -> AtfSet {
    let bins = cfg.bins();
    BinMatrices::from_fn(truth.rirs.len(), bins, |n, f| {
        CMatrix::from_fn(truth.spec.mics, 1, |m, _| {
            transfer_function(&truth.rirs[n].early[m], f, cfg.frame_len)
        })
    })
}

/// Writes the scene as WAV files, truth tensors and a manifest into `dir`.
///
/// Files: `mix.wav`, `desired_<n>.wav`, `late_<n>.wav`, `noise.wav`,
/// `atf.swbt` (complex, dims `N x F x M`), `masks.swbt` (real, `N x T x F`)
/// and `manifest.txt`.
pub fn export_scene(truth: &SceneTruth, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let enc = WavEncoding::Float32;
    write_wav(dir.join("mix.wav"), &truth.mixture, enc)?;
    for (n, (d, l)) in truth.desired.iter().zip(&truth.late).enumerate() {
        write_wav(dir.join(format!("desired_{n}.wav")), d, enc)?;
        write_wav(dir.join(format!("late_{n}.wav")), l, enc)?;
    }
    write_wav(dir.join("noise.wav"), &truth.noise, enc)?;
    let cfg = StftConfig::default();
    let atf = truth_atf(truth, &cfg);
    let n_src = truth.spec.sources;
    let m = truth.spec.mics;
    let mut payload = Vec::with_capacity(n_src * cfg.bins() * m);
    for n in 0..n_src {
        for f in 0..cfg.bins() {
            payload.extend(atf.get(n, f).iter().copied());
        }
    }
    save_tensor(
        dir.join("atf.swbt"),
        &RawTensor::new(vec![n_src, cfg.bins(), m], crate::tensor_io::Payload::Complex(payload))?,
    )?;
    let masks = crate::atf_init::oracle_masks(truth, &cfg)?;
    save_tensor(dir.join("masks.swbt"), &RawTensor::from_real(&masks.omega))?;
    let mut kv = truth.spec.to_kv();
    for (n, p) in truth.positions.iter().enumerate() {
        kv.insert(&format!("truth.azimuth_deg.{n}"), format!("{:.6}", p.azimuth_deg));
        kv.insert(&format!("truth.distance.{n}"), format!("{:.6}", p.distance));
    }
    kv.insert("truth.reference_mic", 0);
    fs::write(dir.join("manifest.txt"), kv.to_text())?;
    Ok(())
}
