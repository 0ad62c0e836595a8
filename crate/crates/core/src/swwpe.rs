//! Switching multichannel linear prediction.
//!
//! The prediction filters `G(i, f)` are updated in closed form given the
//! separation matrices, source variances and switch weights. Everything is
//! computed independently per frequency bin.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{hermitian_solve, kron, unvec, vec, CMatrix, LoadingPolicy, C64};
use crate::model::{
    BinMatrices, FrameTensor, ObservedTensor, PredictionFilters, RealTensor, SeparationMatrices, StackedPast,
    SwitchWeights,
};

/// Spatio-temporal covariances of one bin, indexed by `(i, j, n)`.
#[derive(Clone, Debug)]
pub struct BinCovariances {
    pub states_mclp: usize,
    pub states_sep: usize,
    pub sources: usize,
    /// `sum_t beta/lambda * xbar xbar^H`, each `K x K`.
    pub r: Vec<CMatrix>,
    /// `sum_t beta/lambda * xbar x^H`, each `K x M`.
    pub p: Vec<CMatrix>,
}

impl BinCovariances {
    fn index(&self, i: usize, j: usize, n: usize) -> usize {
        (i * self.states_sep + j) * self.sources + n
    }

    pub fn r(&self, i: usize, j: usize, n: usize) -> &CMatrix {
        &self.r[self.index(i, j, n)]
    }

    pub fn p(&self, i: usize, j: usize, n: usize) -> &CMatrix {
        &self.p[self.index(i, j, n)]
    }
}

/// Accumulates `R` and `P` for one bin from raw bin slices.
///
/// `x` is `T*M`, `xbar` is `T*K`, `beta` is `T*(I*J)` and `lam` is
/// `T*N`, all frame-major as stored in [`crate::model::Tensor3`].
pub fn accumulate_cov_bin(
    x: &[C64],
    xbar: &[C64],
    beta: &[f64],
    lam: &[f64],
    channels: usize,
    states_mclp: usize,
    states_sep: usize,
) -> BinCovariances {
    let s_count = states_mclp * states_sep;
    let frames = beta.len() / s_count;
    let k = xbar.len() / frames.max(1);
    let sources = lam.len() / frames.max(1);
    let mut r = vec![CMatrix::zeros(k, k); s_count * sources];
    let mut p = vec![CMatrix::zeros(k, channels); s_count * sources];
    let mut outer = vec![C64::new(0.0, 0.0); k * k];
    let mut cross = vec![C64::new(0.0, 0.0); k * channels];
    for t in 0..frames {
        let b = &beta[t * s_count..(t + 1) * s_count];
        if b.iter().all(|&v| v == 0.0) {
            continue;
        }
        let xb = &xbar[t * k..(t + 1) * k];
        let xt = &x[t * channels..(t + 1) * channels];
        // column-major: entry (a, c) at c * rows + a
        for c in 0..k {
            let cc = xb[c].conj();
            for a in 0..k {
                outer[c * k + a] = xb[a] * cc;
            }
        }
        for c in 0..channels {
            let cc = xt[c].conj();
            for a in 0..k {
                cross[c * k + a] = xb[a] * cc;
            }
        }
        let l = &lam[t * sources..(t + 1) * sources];
        for (s, &bw) in b.iter().enumerate() {
            if bw == 0.0 {
                continue;
            }
            for (n, &ln) in l.iter().enumerate() {
                let coef = bw / ln;
                let idx = s * sources + n;
                for (dst, src) in r[idx].as_mut_slice().iter_mut().zip(&outer) {
                    *dst += src * coef;
                }
                for (dst, src) in p[idx].as_mut_slice().iter_mut().zip(&cross) {
                    *dst += src * coef;
                }
            }
        }
    }
    BinCovariances {
        states_mclp,
        states_sep,
        sources,
        r,
        p,
    }
}

/// `R` and `P` for every bin.
pub fn accumulate_cov(
    x: &ObservedTensor,
    xbar: &StackedPast,
    beta: &SwitchWeights,
    lam: &RealTensor,
) -> Result<Vec<BinCovariances>> {
    check_shapes(x, xbar, beta, lam)?;
    Ok((0..x.bins())
        .into_par_iter()
        .map(|f| {
            accumulate_cov_bin(
                x.bin(f),
                xbar.data.bin(f),
                beta.tensor().bin(f),
                lam.bin(f),
                x.width(),
                beta.states_mclp(),
                beta.states_sep(),
            )
        })
        .collect())
}

fn check_shapes(x: &ObservedTensor, xbar: &StackedPast, beta: &SwitchWeights, lam: &RealTensor) -> Result<()> {
    let grid = (x.frames(), x.bins());
    if (xbar.data.frames(), xbar.data.bins()) != grid
        || (beta.frames(), beta.bins()) != grid
        || (lam.frames(), lam.bins()) != grid
    {
        return Err(Error::Shape(
            "observation, stacked past, switches and variances differ in grid".into(),
        ));
    }
    if xbar.channels != x.width() {
        return Err(Error::Shape("stacked past built from a different channel count".into()));
    }
    Ok(())
}

/// Normal equations `(Psi(i), Phi(i))` of one bin.
///
/// `Psi = sum_{j,n} (w w^H)^* kron R(i,j,n)` and `Phi = sum_{j,n} P(i,j,n) w w^H`
/// with `w` the `n`th column of `W(j)`.
pub fn assemble_normal_eq(cov: &BinCovariances, w: &[CMatrix]) -> (Vec<CMatrix>, Vec<CMatrix>) {
    let k = cov.r[0].nrows();
    let m = cov.p[0].ncols();
    let mut psi = Vec::with_capacity(cov.states_mclp);
    let mut phi = Vec::with_capacity(cov.states_mclp);
    for i in 0..cov.states_mclp {
        let mut ps = CMatrix::zeros(m * k, m * k);
        let mut ph = CMatrix::zeros(k, m);
        for (j, wj) in w.iter().enumerate().take(cov.states_sep) {
            for n in 0..cov.sources {
                let col = wj.column(n);
                let q = col * col.adjoint();
                ps += kron(&q.conjugate(), cov.r(i, j, n));
                ph += cov.p(i, j, n) * &q;
            }
        }
        psi.push(ps);
        phi.push(ph);
    }
    (psi, phi)
}

/// `vec(G(i)) = Psi(i)^{-1} vec(Phi(i))` for each state of one bin.
pub fn update_prediction_filters(psi: &[CMatrix], phi: &[CMatrix], policy: LoadingPolicy) -> Result<Vec<CMatrix>> {
    psi.iter()
        .zip(phi)
        .map(|(ps, ph)| {
            let g = hermitian_solve(ps, &vec(ph), policy)?;
            unvec(&g, ph.nrows(), ph.ncols())
        })
        .collect()
}

/// Full G-update: accumulate, assemble and solve in every bin.
pub fn update_g(
    x: &ObservedTensor,
    xbar: &StackedPast,
    beta: &SwitchWeights,
    lam: &RealTensor,
    w: &SeparationMatrices,
    policy: LoadingPolicy,
) -> Result<PredictionFilters> {
    check_shapes(x, xbar, beta, lam)?;
    let states_mclp = beta.states_mclp();
    let per_bin: Vec<Result<Vec<CMatrix>>> = (0..x.bins())
        .into_par_iter()
        .map(|f| {
            let cov = accumulate_cov_bin(
                x.bin(f),
                xbar.data.bin(f),
                beta.tensor().bin(f),
                lam.bin(f),
                x.width(),
                states_mclp,
                beta.states_sep(),
            );
            let (psi, phi) = assemble_normal_eq(&cov, w.bin(f));
            update_prediction_filters(&psi, &phi, policy)
        })
        .collect();
    let mut g = BinMatrices::filled(states_mclp, x.bins(), CMatrix::zeros(0, 0));
    for (f, res) in per_bin.into_iter().enumerate() {
        for (i, gi) in res?.into_iter().enumerate() {
            *g.get_mut(i, f) = gi;
        }
    }
    Ok(g)
}

/// `z(i) = x - G(i)^H xbar` for every state.
pub fn apply_mclp(x: &ObservedTensor, xbar: &StackedPast, g: &PredictionFilters) -> Vec<FrameTensor> {
    let (m, frames, bins) = x.dims();
    let k = xbar.height();
    (0..g.states())
        .map(|i| {
            let mut z = x.clone();
            z.data_mut().par_chunks_mut(frames * m).enumerate().for_each(|(f, zb)| {
                let gi = g.get(i, f);
                let xb = xbar.data.bin(f);
                for t in 0..frames {
                    let past = &xb[t * k..(t + 1) * k];
                    for c in 0..m {
                        let col = gi.column(c);
                        let pred: C64 = col.iter().zip(past).map(|(gv, xv)| gv.conj() * xv).sum();
                        zb[t * m + c] -= pred;
                    }
                }
            });
            debug_assert_eq!(z.bins(), bins);
            z
        })
        .collect()
}

/// Result of one conventional switching-WPE iteration.
#[derive(Clone, Debug)]
pub struct SwWpeStep {
    pub g: PredictionFilters,
    pub z: Vec<FrameTensor>,
    /// Hard MCLP switch `(i, t, f)`.
    pub gamma: RealTensor,
}

/// One swWPE iteration with a shared per-(t, f) variance.
///
/// The variance is `x^H x / M + eps`, each state solves its own weighted
/// normal equations, and the switch is re-assigned to the state with the
/// lowest output power (ties go to the lower index).
pub fn plain_swwpe_step(
    x: &ObservedTensor,
    xbar: &StackedPast,
    gamma: &RealTensor,
    eps: f64,
    policy: LoadingPolicy,
) -> Result<SwWpeStep> {
    let (m, frames, bins) = x.dims();
    if (gamma.frames(), gamma.bins()) != (frames, bins) {
        return Err(Error::Shape("gamma grid differs from observation".into()));
    }
    let states = gamma.width();
    let lam = RealTensor::from_fn(1, frames, bins, |_, t, f| {
        x.frame(t, f).iter().map(|v| v.norm_sqr()).sum::<f64>() / m as f64 + eps
    });
    let per_bin: Vec<Result<Vec<CMatrix>>> = (0..bins)
        .into_par_iter()
        .map(|f| {
            let cov = accumulate_cov_bin(x.bin(f), xbar.data.bin(f), gamma.bin(f), lam.bin(f), m, states, 1);
            (0..states)
                .map(|i| hermitian_solve(cov.r(i, 0, 0), cov.p(i, 0, 0), policy))
                .collect()
        })
        .collect();
    let mut g = BinMatrices::filled(states, bins, CMatrix::zeros(0, 0));
    for (f, res) in per_bin.into_iter().enumerate() {
        for (i, gi) in res?.into_iter().enumerate() {
            *g.get_mut(i, f) = gi;
        }
    }
    let z = apply_mclp(x, xbar, &g);
    let gamma = RealTensor::from_fn(states, frames, bins, |_, _, _| 0.0);
    let mut gamma = gamma;
    for f in 0..bins {
        for t in 0..frames {
            let mut best = 0;
            let mut best_pow = f64::INFINITY;
            for (i, zi) in z.iter().enumerate() {
                let pow: f64 = zi.frame(t, f).iter().map(|v| v.norm_sqr()).sum();
                if pow < best_pow {
                    best_pow = pow;
                    best = i;
                }
            }
            *gamma.get_mut(best, t, f) = 1.0;
        }
    }
    Ok(SwWpeStep { g, z, gamma })
}
