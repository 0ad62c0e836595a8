//! Log-likelihood of the switching model and signal-level quality measures.

use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::linalg::{hermitian_solve, log_abs_det, CMatrix, LoadingPolicy, C64};
use crate::model::{FrameTensor, RealTensor, SeparationMatrices, SwitchWeights};
use crate::spectral::{stft, StftConfig, Waveform};

fn loglik_impl(
    z: &[FrameTensor],
    w: &SeparationMatrices,
    lam: &RealTensor,
    beta: &SwitchWeights,
    coarse: bool,
) -> Result<f64> {
    if z.len() != beta.states_mclp() || w.states() != beta.states_sep() {
        return Err(Error::Shape("state counts differ between z, W and beta".into()));
    }
    let (m, frames, bins) = z[0].dims();
    let n_src = lam.width();
    let lam_bins_ok = if coarse { lam.bins() == 1 } else { lam.bins() == bins };
    if n_src > m || lam.frames() != frames || !lam_bins_ok || w.bins() != bins {
        return Err(Error::Shape("variances or W do not match the outputs".into()));
    }
    let nj = beta.states_sep();
    let per_bin: Vec<f64> = (0..bins)
        .into_par_iter()
        .map(|f| {
            let logdet: Vec<f64> = w.bin(f).iter().map(log_abs_det).collect();
            let lb = lam.bin(if coarse { 0 } else { f });
            let mut acc = 0.0;
            for t in 0..frames {
                let l = &lb[t * n_src..(t + 1) * n_src];
                for (s, &b) in beta.frame(t, f).iter().enumerate() {
                    if b == 0.0 {
                        continue;
                    }
                    let (i, j) = (s / nj, s % nj);
                    let wj = w.get(j, f);
                    let zt = z[i].frame(t, f);
                    let mut term = 2.0 * logdet[j];
                    for (n, ln) in l.iter().enumerate() {
                        let y: C64 = wj.column(n).iter().zip(zt).map(|(wv, zv)| wv.conj() * zv).sum();
                        term -= y.norm_sqr() / ln + ln.ln();
                    }
                    acc += b * term;
                }
            }
            acc
        })
        .collect();
    Ok(per_bin.iter().sum())
}

/// Total log-likelihood with the frequency-dependent variances `lambda(n, t, f)`.
///
/// Returns `-inf` if an active state has a singular separation matrix.
pub fn log_likelihood(
    z: &[FrameTensor],
    w: &SeparationMatrices,
    lam: &RealTensor,
    beta: &SwitchWeights,
) -> Result<f64> {
    loglik_impl(z, w, lam, beta, false)
}

/// Same as [`log_likelihood`] with frequency-independent variances `lambda(n, t)`
/// given as a one-bin tensor.
pub fn log_likelihood_coarse(
    z: &[FrameTensor],
    w: &SeparationMatrices,
    lam: &RealTensor,
    beta: &SwitchWeights,
) -> Result<f64> {
    loglik_impl(z, w, lam, beta, true)
}

const FW_BANDS: usize = 23;
const FW_LOW_HZ: f64 = 125.0;
const FW_MIN_DB: f64 = -10.0;
const FW_MAX_DB: f64 = 35.0;
const FW_GAMMA: f64 = 0.2;
const FW_SILENCE_DB: f64 = 40.0;

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Frequency-weighted segmental SNR in dB.
///
/// Frames are 25 ms Hann with a 10 ms hop. Each frame is split into 23
/// mel-spaced bands between 125 Hz and Nyquist; the band SNR compares the
/// reference energy with the energy of `est - ref`, is clamped to
/// `[-10, 35]` dB and weighted by the reference band magnitude raised to
/// 0.2. Frames more than 40 dB below the loudest reference frame are skipped.
pub fn fwssnr(est: &[f64], reference: &[f64], sample_rate: u32) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::Shape(format!(
            "estimate has {} samples, reference {}",
            est.len(),
            reference.len()
        )));
    }
    let fs = sample_rate as f64;
    let frame = (0.025 * fs).round() as usize;
    let hop = (0.010 * fs).round() as usize;
    if frame == 0 || hop == 0 || reference.len() < frame {
        return Err(Error::Shape("signal shorter than one analysis frame".into()));
    }
    let nfft = frame.next_power_of_two();
    let window: Vec<f64> = (0..frame)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / frame as f64).cos())
        .collect();
    let half = nfft / 2 + 1;
    let edges: Vec<f64> = {
        let lo = hz_to_mel(FW_LOW_HZ);
        let hi = hz_to_mel(fs / 2.0);
        (0..=FW_BANDS)
            .map(|b| mel_to_hz(lo + (hi - lo) * b as f64 / FW_BANDS as f64))
            .collect()
    };
    let band_of: Vec<Option<usize>> = (0..half)
        .map(|k| {
            let hz = k as f64 * fs / nfft as f64;
            (0..FW_BANDS).find(|&b| hz >= edges[b] && (hz < edges[b + 1] || (b + 1 == FW_BANDS && hz <= edges[b + 1])))
        })
        .collect();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(nfft);
    let n_frames = (reference.len() - frame) / hop + 1;
    let mut per_frame = Vec::with_capacity(n_frames);
    let mut buf_r = vec![C64::new(0.0, 0.0); nfft];
    let mut buf_e = vec![C64::new(0.0, 0.0); nfft];
    for q in 0..n_frames {
        let start = q * hop;
        buf_r.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
        buf_e.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
        let mut energy = 0.0;
        for n in 0..frame {
            let r = reference[start + n] * window[n];
            energy += r * r;
            buf_r[n] = C64::new(r, 0.0);
            buf_e[n] = C64::new((est[start + n] - reference[start + n]) * window[n], 0.0);
        }
        fft.process(&mut buf_r);
        fft.process(&mut buf_e);
        let mut ref_b = [0.0; FW_BANDS];
        let mut err_b = [0.0; FW_BANDS];
        for k in 0..half {
            if let Some(b) = band_of[k] {
                ref_b[b] += buf_r[k].norm_sqr();
                err_b[b] += buf_e[k].norm_sqr();
            }
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for b in 0..FW_BANDS {
            if ref_b[b] <= 0.0 {
                continue;
            }
            let snr = if err_b[b] > 0.0 {
                10.0 * (ref_b[b] / err_b[b]).log10()
            } else {
                FW_MAX_DB
            };
            let weight = ref_b[b].sqrt().powf(FW_GAMMA);
            num += weight * snr.clamp(FW_MIN_DB, FW_MAX_DB);
            den += weight;
        }
        per_frame.push((energy, if den > 0.0 { Some(num / den) } else { None }));
    }
    let max_energy = per_frame.iter().map(|p| p.0).fold(0.0, f64::max);
    if max_energy <= 0.0 {
        return Err(Error::Numerical("silent reference".into()));
    }
    let floor = max_energy * 10f64.powf(-FW_SILENCE_DB / 10.0);
    let kept: Vec<f64> = per_frame.iter().filter(|p| p.0 >= floor).filter_map(|p| p.1).collect();
    if kept.is_empty() {
        return Err(Error::Numerical("no active reference frames".into()));
    }
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

/// Upper bound reported for interference-free estimates.
pub const SIR_CAP_DB: f64 = 60.0;

/// Signal-to-interference ratio of `est` for target `target` in dB.
///
/// In every STFT bin the estimate is projected by least squares onto the
/// span of all references; the component along the target is signal and the
/// components along the other references are interference.
pub fn sir(est: &[f64], refs: &[Vec<f64>], target: usize, sample_rate: u32) -> Result<f64> {
    if target >= refs.len() {
        return Err(Error::Shape(format!("target {target} but {} references", refs.len())));
    }
    if refs.iter().any(|r| r.len() != est.len()) {
        return Err(Error::Shape("references and estimate differ in length".into()));
    }
    if refs.iter().any(|r| r.iter().all(|&v| v == 0.0)) {
        return Err(Error::Numerical("zero-energy reference".into()));
    }
    let cfg = StftConfig::default();
    let mut chans = refs.to_vec();
    chans.push(est.to_vec());
    let spec = stft(&Waveform::new(chans, sample_rate)?, &cfg)?;
    let k = refs.len();
    let per_bin: Vec<Result<(f64, f64)>> = (0..spec.bins())
        .into_par_iter()
        .map(|f| {
            let mut gram = CMatrix::zeros(k, k);
            let mut rhs = CMatrix::zeros(k, 1);
            for t in 0..spec.frames() {
                let fr = spec.frame(t, f);
                for a in 0..k {
                    for b in 0..k {
                        gram[(a, b)] += fr[a] * fr[b].conj();
                    }
                    rhs[(a, 0)] += fr[a] * fr[k].conj();
                }
            }
            let mut sig = 0.0;
            let mut interf = 0.0;
            if gram.trace().re <= 0.0 {
                return Ok((0.0, 0.0));
            }
            let coef = hermitian_solve(&gram, &rhs, LoadingPolicy::new(1e-10)?)?;
            for t in 0..spec.frames() {
                let fr = spec.frame(t, f);
                let mut other = C64::new(0.0, 0.0);
                for a in 0..k {
                    let part = coef[(a, 0)].conj() * fr[a];
                    if a == target {
                        sig += part.norm_sqr();
                    } else {
                        other += part;
                    }
                }
                interf += other.norm_sqr();
            }
            Ok((sig, interf))
        })
        .collect();
    let mut sig = 0.0;
    let mut interf = 0.0;
    for r in per_bin {
        let (s, i) = r?;
        sig += s;
        interf += i;
    }
    if interf <= 0.0 {
        return Ok(SIR_CAP_DB);
    }
    if sig <= 0.0 {
        return Ok(-SIR_CAP_DB);
    }
    Ok((10.0 * (sig / interf).log10()).clamp(-SIR_CAP_DB, SIR_CAP_DB))
}

/// `SIR(est) - SIR(mix_ref)` for the same target.
pub fn sir_improvement(
    est: &[f64],
    refs: &[Vec<f64>],
    target: usize,
    mix_ref: &[f64],
    sample_rate: u32,
) -> Result<f64> {
    Ok(sir(est, refs, target, sample_rate)? - sir(mix_ref, refs, target, sample_rate)?)
}

/// Normalized correlation magnitude, used to match outputs to references.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let ab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let aa: f64 = a.iter().map(|x| x * x).sum();
    let bb: f64 = b.iter().map(|x| x * x).sum();
    if aa <= 0.0 || bb <= 0.0 {
        0.0
    } else {
        ab.abs() / (aa * bb).sqrt()
    }
}

/// Assignment of estimates to references maximizing total correlation.
///
/// Returns `perm` with `perm[n]` the estimate index matched to reference `n`.
/// Exhaustive over permutations, so meant for a handful of sources.
pub fn best_permutation(est: &[Vec<f64>], refs: &[Vec<f64>]) -> Vec<usize> {
    let n = refs.len();
    let score: Vec<Vec<f64>> = refs
        .iter()
        .map(|r| est.iter().map(|e| correlation(e, r)).collect())
        .collect();
    let mut best = (0..n).collect::<Vec<_>>();
    let mut best_score = f64::NEG_INFINITY;
    let mut current = Vec::with_capacity(n);
    let mut used = vec![false; est.len()];
    fn rec(
        k: usize,
        score: &[Vec<f64>],
        current: &mut Vec<usize>,
        used: &mut [bool],
        acc: f64,
        best: &mut Vec<usize>,
        best_score: &mut f64,
    ) {
        if k == score.len() {
            if acc > *best_score {
                *best_score = acc;
                best.clone_from(current);
            }
            return;
        }
        for e in 0..used.len() {
            if !used[e] {
                used[e] = true;
                current.push(e);
                rec(k + 1, score, current, used, acc + score[k][e], best, best_score);
                current.pop();
                used[e] = false;
            }
        }
    }
    rec(0, &score, &mut current, &mut used, 0.0, &mut best, &mut best_score);
    best
}
