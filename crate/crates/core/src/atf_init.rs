//! Mask-guided initialization: ATF estimation by noise-covariance whitening,
//! MPDR separation matrices and initial source variances.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{dominant_eigvec, hermitian_solve, max_gen_eigvec, CMatrix, LoadingPolicy, C64};
use crate::model::{AtfSet, BinMatrices, FrameTensor, RealTensor, SeparationMatrices};
use crate::simulator::SceneTruth;
use crate::spectral::{stft, StftConfig, Waveform};

/// Lower and upper clip applied to mask values before use.
pub const MASK_CLIP: f64 = 1e-4;

/// Time-frequency masks `Omega(n, t, f)` in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskTensor {
    pub omega: RealTensor,
}

impl MaskTensor {
    pub fn new(omega: RealTensor) -> Result<Self> {
        if omega.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Format("mask values must lie in [0, 1]".into()));
        }
        Ok(Self { omega })
    }

    pub fn sources(&self) -> usize {
        self.omega.width()
    }

    /// Masks clipped to `[1e-4, 1 - 1e-4]`.
    pub fn clipped(&self) -> RealTensor {
        let (n, t, f) = self.omega.dims();
        let data = self
            .omega
            .data()
            .iter()
            .map(|v| v.clamp(MASK_CLIP, 1.0 - MASK_CLIP))
            .collect();
        RealTensor::from_vec(n, t, f, data).expect("same shape")
    }
}

/// `z = sum_i gamma(i) z(i)`.
pub fn dereverb_for_init(gamma: &RealTensor, z: &[FrameTensor]) -> Result<FrameTensor> {
    if z.is_empty() || gamma.width() != z.len() {
        return Err(Error::Shape("one MCLP output per gamma state required".into()));
    }
    let (m, frames, bins) = z[0].dims();
    if (gamma.frames(), gamma.bins()) != (frames, bins) {
        return Err(Error::Shape("gamma grid differs from the outputs".into()));
    }
    Ok(FrameTensor::from_fn(m, frames, bins, |c, t, f| {
        z.iter()
            .enumerate()
            .map(|(i, zi)| zi.get(c, t, f) * *gamma.get(i, t, f))
            .sum()
    }))
}

fn weighted_scatter(z: &FrameTensor, f: usize, weight: impl Fn(usize) -> f64) -> CMatrix {
    let m = z.width();
    let mut acc = CMatrix::zeros(m, m);
    let mut mass = 0.0;
    for t in 0..z.frames() {
        let w = weight(t);
        mass += w;
        let v = z.frame(t, f);
        for b in 0..m {
            let cb = v[b].conj() * w;
            for a in 0..m {
                acc[(a, b)] += v[a] * cb;
            }
        }
    }
    if mass > 0.0 {
        acc.unscale_mut(mass);
    }
    acc
}

/// Mask-weighted source and interference covariances `(Gamma_Z, Gamma_V)`,
/// each indexed `(source, bin)`.
pub fn masked_covariances(z: &FrameTensor, masks: &MaskTensor) -> Result<(BinMatrices, BinMatrices)> {
    let (_, frames, bins) = z.dims();
    if (masks.omega.frames(), masks.omega.bins()) != (frames, bins) {
        return Err(Error::Shape("mask grid differs from the signal".into()));
    }
    let omega = masks.clipped();
    let n_src = masks.sources();
    let per_bin: Vec<(Vec<CMatrix>, Vec<CMatrix>)> = (0..bins)
        .into_par_iter()
        .map(|f| {
            (0..n_src)
                .map(|n| {
                    (
                        weighted_scatter(z, f, |t| *omega.get(n, t, f)),
                        weighted_scatter(z, f, |t| 1.0 - omega.get(n, t, f)),
                    )
                })
                .unzip()
        })
        .collect();
    let mut gz = BinMatrices::filled(n_src, bins, CMatrix::zeros(0, 0));
    let mut gv = gz.clone();
    for (f, (a, b)) in per_bin.into_iter().enumerate() {
        gz.bin_mut(f).clone_from_slice(&a);
        gv.bin_mut(f).clone_from_slice(&b);
    }
    Ok((gz, gv))
}

/// Phase-rotates `a` so its reference entry is real and positive.
fn reference_phase(a: &mut CMatrix, reference: usize) {
    let r = a[(reference, 0)];
    if r.norm() > 0.0 {
        let rot = r.conj() / r.norm();
        a.iter_mut().for_each(|v| *v *= rot);
    }
}

/// ATF of one source and bin: `Gamma_V * MaxEig(Gamma_V^{-1} Gamma_Z)`.
///
/// Falls back to the dominant eigenvector of `Gamma_Z` if the generalized
/// problem cannot be solved.
pub fn estimate_atf_one(gz: &CMatrix, gv: &CMatrix, policy: LoadingPolicy) -> Result<CMatrix> {
    let mut a = match max_gen_eigvec(gz, gv, policy) {
        Ok(v) => gv * v,
        Err(_) => dominant_eigvec(gz)?,
    };
    if !(a.norm() > 0.0) {
        a = dominant_eigvec(gz)?;
    }
    reference_phase(&mut a, 0);
    Ok(a)
}

pub fn estimate_atf(gz: &BinMatrices, gv: &BinMatrices, policy: LoadingPolicy) -> Result<AtfSet> {
    let (n_src, bins) = (gz.states(), gz.bins());
    let per_bin: Vec<Result<Vec<CMatrix>>> = (0..bins)
        .into_par_iter()
        .map(|f| {
            (0..n_src)
                .map(|n| estimate_atf_one(gz.get(n, f), gv.get(n, f), policy))
                .collect()
        })
        .collect();
    let mut out = BinMatrices::filled(n_src, bins, CMatrix::zeros(0, 0));
    for (f, r) in per_bin.into_iter().enumerate() {
        out.bin_mut(f).clone_from_slice(&r?);
    }
    Ok(out)
}

/// Near-uniform random weights in `1 +- 1e-3`, normalized to sum to one
/// over the leading (state) index.
pub fn near_uniform_weights(
    states: usize,
    width: usize,
    frames: usize,
    bins: usize,
    r: &mut ChaCha8Rng,
) -> Vec<RealTensor> {
    let mut raw: Vec<RealTensor> = (0..states)
        .map(|_| RealTensor::from_fn(width, frames, bins, |_, _, _| 1.0 + r.random_range(-1e-3..=1e-3)))
        .collect();
    for f in 0..bins {
        for t in 0..frames {
            for k in 0..width {
                let sum: f64 = raw.iter().map(|a| *a.get(k, t, f)).sum();
                for a in raw.iter_mut() {
                    *a.get_mut(k, t, f) /= sum;
                }
            }
        }
    }
    raw
}

/// MPDR column `a_r^* Xi^{-1} a / (a^H Xi^{-1} a)`.
pub fn mpdr_vector(xi: &CMatrix, a: &CMatrix, policy: LoadingPolicy) -> Result<CMatrix> {
    let xa = hermitian_solve(xi, a, policy)?;
    let den = (a.adjoint() * &xa)[(0, 0)];
    if !(den.norm() > 0.0) {
        return Err(Error::Singular("MPDR denominator vanished".into()));
    }
    Ok(xa * (a[(0, 0)].conj() / den))
}

/// Separation matrices from MPDR beamformers with randomly weighted
/// covariances, one set per separation state.
///
/// Columns beyond the number of ATFs are unit vectors. Returns the matrices
/// and the frame weights `alpha(j)`, each of width `M`.
pub fn mpdr_init(
    z: &FrameTensor,
    atfs: &AtfSet,
    states_sep: usize,
    r: &mut ChaCha8Rng,
    policy: LoadingPolicy,
) -> Result<(SeparationMatrices, Vec<RealTensor>)> {
    let (m, frames, bins) = z.dims();
    let n_src = atfs.states();
    if n_src > m || atfs.bins() != bins {
        return Err(Error::Shape("ATF set does not match the signal".into()));
    }
    let alpha = near_uniform_weights(states_sep, m, frames, bins, r);
    let per_bin: Vec<Result<Vec<CMatrix>>> = (0..bins)
        .into_par_iter()
        .map(|f| {
            (0..states_sep)
                .map(|j| {
                    let mut w = CMatrix::identity(m, m);
                    for n in 0..n_src {
                        let xi = weighted_scatter(z, f, |t| *alpha[j].get(n, t, f));
                        let col = mpdr_vector(&xi, atfs.get(n, f), policy)?;
                        w.set_column(n, &col.column(0));
                    }
                    Ok(w)
                })
                .collect()
        })
        .collect();
    let mut w = BinMatrices::filled(states_sep, bins, CMatrix::zeros(0, 0));
    for (f, res) in per_bin.into_iter().enumerate() {
        w.bin_mut(f).clone_from_slice(&res?);
    }
    Ok((w, alpha))
}

/// `lambda(n, t, f) = |sum_j alpha w(j)_n^H z / sum_j alpha|^2 + eps`.
pub fn init_variances_sg(
    z: &FrameTensor,
    w: &SeparationMatrices,
    alpha: &[RealTensor],
    eps: f64,
) -> Result<RealTensor> {
    let (m, frames, bins) = z.dims();
    if alpha.len() != w.states() || alpha.iter().any(|a| a.dims() != (m, frames, bins)) {
        return Err(Error::Shape(
            "one alpha tensor of width M per separation state required".into(),
        ));
    }
    Ok(RealTensor::from_fn(m, frames, bins, |n, t, f| {
        let zt = z.frame(t, f);
        let mut num = C64::new(0.0, 0.0);
        let mut den = 0.0;
        for (j, a) in alpha.iter().enumerate() {
            let wj = w.get(j, f);
            let y: C64 = wj.column(n).iter().zip(zt).map(|(wv, zv)| wv.conj() * zv).sum();
            num += y * *a.get(n, t, f);
            den += a.get(n, t, f);
        }
        (num / den).norm_sqr() + eps
    }))
}

/// Masks from simulator ground truth at the reference microphone:
/// `|d_n|^2 / (sum_k |d_k|^2 + |late + noise|^2)`.
pub fn oracle_masks(truth: &SceneTruth, cfg: &StftConfig) -> Result<MaskTensor> {
    let fs = truth.mixture.sample_rate;
    let len = truth.mixture.len();
    let mut chans: Vec<Vec<f64>> = truth.desired.iter().map(|d| d.channel(0).to_vec()).collect();
    let mut rest = truth.noise.channel(0).to_vec();
    for l in &truth.late {
        for (acc, v) in rest.iter_mut().zip(l.channel(0)) {
            *acc += v;
        }
    }
    chans.push(rest);
    debug_assert!(chans.iter().all(|c| c.len() == len));
    let spec = stft(&Waveform::new(chans, fs)?, cfg)?;
    let n_src = truth.desired.len();
    let omega = RealTensor::from_fn(n_src, spec.frames(), spec.bins(), |n, t, f| {
        let fr = spec.frame(t, f);
        let total: f64 = fr.iter().map(|v| v.norm_sqr()).sum();
        if total > 0.0 {
            fr[n].norm_sqr() / total
        } else {
            0.0
        }
    });
    MaskTensor::new(omega)
}
