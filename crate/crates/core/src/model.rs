//! State containers for one enhancement problem.
//!
//! All per-(t, f) tensors share one memory layout: bin-major, then frame,
//! then the channel/source/state index. A whole frequency bin is a contiguous
//! slice, which lets every per-bin update run on disjoint chunks.

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, C64};

/// Three-index tensor addressed as `(k, t, f)` with `k` the fastest index.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3<T> {
    width: usize,
    frames: usize,
    bins: usize,
    data: Vec<T>,
}

pub type FrameTensor = Tensor3<C64>;
pub type RealTensor = Tensor3<f64>;

/// Multichannel STFT of the mixture, `(m, t, f)`.
pub type ObservedTensor = FrameTensor;
/// Separated outputs `(n, t, f)`.
pub type OutputTensor = FrameTensor;

impl<T: Copy + Default> Tensor3<T> {
    pub fn zeros(width: usize, frames: usize, bins: usize) -> Self {
        Self {
            width,
            frames,
            bins,
            data: vec![T::default(); width * frames * bins],
        }
    }

    pub fn filled(width: usize, frames: usize, bins: usize, value: T) -> Self {
        Self {
            width,
            frames,
            bins,
            data: vec![value; width * frames * bins],
        }
    }

    pub fn from_fn(width: usize, frames: usize, bins: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * frames * bins);
        for b in 0..bins {
            for t in 0..frames {
                for k in 0..width {
                    data.push(f(k, t, b));
                }
            }
        }
        Self {
            width,
            frames,
            bins,
            data,
        }
    }

    pub fn from_vec(width: usize, frames: usize, bins: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * frames * bins {
            return Err(Error::Shape(format!(
                "{} values for a {width}x{frames}x{bins} tensor",
                data.len()
            )));
        }
        Ok(Self {
            width,
            frames,
            bins,
            data,
        })
    }
}

impl<T> Tensor3<T> {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.frames, self.bins)
    }

    #[inline]
    fn offset(&self, k: usize, t: usize, f: usize) -> usize {
        debug_assert!(k < self.width && t < self.frames && f < self.bins);
        (f * self.frames + t) * self.width + k
    }

    #[inline]
    pub fn get(&self, k: usize, t: usize, f: usize) -> &T {
        &self.data[self.offset(k, t, f)]
    }

    #[inline]
    pub fn get_mut(&mut self, k: usize, t: usize, f: usize) -> &mut T {
        let o = self.offset(k, t, f);
        &mut self.data[o]
    }

    #[inline]
    pub fn frame(&self, t: usize, f: usize) -> &[T] {
        let o = (f * self.frames + t) * self.width;
        &self.data[o..o + self.width]
    }

    #[inline]
    pub fn frame_mut(&mut self, t: usize, f: usize) -> &mut [T] {
        let o = (f * self.frames + t) * self.width;
        &mut self.data[o..o + self.width]
    }

    /// All frames of bin `f`, `frames * width` values.
    pub fn bin(&self, f: usize) -> &[T] {
        let n = self.frames * self.width;
        &self.data[f * n..(f + 1) * n]
    }

    pub fn bin_len(&self) -> usize {
        self.frames * self.width
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn same_shape<U>(&self, other: &Tensor3<U>) -> bool {
        self.dims() == other.dims()
    }
}

impl FrameTensor {
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn scale_by(&mut self, s: f64) {
        self.data.iter_mut().for_each(|z| *z *= s);
    }

    /// Mean of `|x_{t,f}|^2 / M` over all frames and bins.
    pub fn mean_frame_power(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>() / self.data.len() as f64
    }

    /// Copies channel `k` into a single-channel tensor.
    pub fn channel(&self, k: usize) -> FrameTensor {
        FrameTensor::from_fn(1, self.frames, self.bins, |_, t, f| *self.get(k, t, f))
    }
}

/// Past observations stacked for multichannel linear prediction.
///
/// Row block `d` of frame `t` holds `x_{t-D-d}` for `d = 0..L-D`; frames
/// before the start of the signal read as zero.
#[derive(Clone, Debug, PartialEq)]
pub struct StackedPast {
    pub delay: usize,
    pub length: usize,
    pub channels: usize,
    pub data: FrameTensor,
}

impl StackedPast {
    pub fn taps(&self) -> usize {
        self.length - self.delay
    }

    pub fn height(&self) -> usize {
        self.data.width()
    }
}

pub fn build_stacked_past(x: &ObservedTensor, delay: usize, length: usize) -> Result<StackedPast> {
    if delay < 1 || length <= delay {
        return Err(Error::Config(format!(
            "prediction needs L > D >= 1, got D={delay}, L={length}"
        )));
    }
    let (m, frames, bins) = x.dims();
    let taps = length - delay;
    let mut data = FrameTensor::zeros(m * taps, frames, bins);
    for f in 0..bins {
        for t in 0..frames {
            let out = data.frame_mut(t, f);
            for d in 0..taps {
                let lag = delay + d;
                if t >= lag {
                    out[d * m..(d + 1) * m].copy_from_slice(x.frame(t - lag, f));
                }
            }
        }
    }
    Ok(StackedPast {
        delay,
        length,
        channels: m,
        data,
    })
}

/// Unified switching weights `beta(i, j, t, f)` with `s = i * J + j` as the
/// fastest index.
///
/// Hard (one-hot) weights are the normal state; soft values only occur
/// during initialization before the first switch update.
#[derive(Clone, Debug, PartialEq)]
pub struct SwitchWeights {
    states_mclp: usize,
    states_sep: usize,
    weights: RealTensor,
}

impl SwitchWeights {
    /// Every `(t, f)` assigned to state `(0, 0)`.
    pub fn single(states_mclp: usize, states_sep: usize, frames: usize, bins: usize) -> Self {
        Self::one_hot(states_mclp, states_sep, frames, bins, |_, _| (0, 0))
    }

    pub fn one_hot(
        states_mclp: usize,
        states_sep: usize,
        frames: usize,
        bins: usize,
        mut assign: impl FnMut(usize, usize) -> (usize, usize),
    ) -> Self {
        let s = states_mclp * states_sep;
        let mut weights = RealTensor::zeros(s, frames, bins);
        for f in 0..bins {
            for t in 0..frames {
                let (i, j) = assign(t, f);
                assert!(i < states_mclp && j < states_sep, "state out of range");
                *weights.get_mut(i * states_sep + j, t, f) = 1.0;
            }
        }
        Self {
            states_mclp,
            states_sep,
            weights,
        }
    }

    /// `beta(i, j) = gamma(i) * delta(j)`.
    pub fn from_marginals(gamma: &RealTensor, delta: &RealTensor) -> Result<Self> {
        if gamma.frames() != delta.frames() || gamma.bins() != delta.bins() {
            return Err(Error::Shape("gamma and delta cover different grids".into()));
        }
        let (ni, frames, bins) = gamma.dims();
        let nj = delta.width();
        let weights = RealTensor::from_fn(ni * nj, frames, bins, |s, t, f| {
            gamma.get(s / nj, t, f) * delta.get(s % nj, t, f)
        });
        Ok(Self {
            states_mclp: ni,
            states_sep: nj,
            weights,
        })
    }

    pub fn from_tensor(states_mclp: usize, states_sep: usize, weights: RealTensor) -> Result<Self> {
        if weights.width() != states_mclp * states_sep {
            return Err(Error::Shape("weight tensor width must be I*J".into()));
        }
        Ok(Self {
            states_mclp,
            states_sep,
            weights,
        })
    }

    pub fn states_mclp(&self) -> usize {
        self.states_mclp
    }

    pub fn states_sep(&self) -> usize {
        self.states_sep
    }

    pub fn frames(&self) -> usize {
        self.weights.frames()
    }

    pub fn bins(&self) -> usize {
        self.weights.bins()
    }

    pub fn weight(&self, i: usize, j: usize, t: usize, f: usize) -> f64 {
        *self.weights.get(i * self.states_sep + j, t, f)
    }

    /// The `I*J` weights at `(t, f)`.
    pub fn frame(&self, t: usize, f: usize) -> &[f64] {
        self.weights.frame(t, f)
    }

    pub fn tensor(&self) -> &RealTensor {
        &self.weights
    }

    pub fn tensor_mut(&mut self) -> &mut RealTensor {
        &mut self.weights
    }

    pub fn is_one_hot(&self) -> bool {
        self.validate_one_hot().is_ok()
    }

    pub fn validate_one_hot(&self) -> Result<()> {
        for f in 0..self.bins() {
            for t in 0..self.frames() {
                let w = self.frame(t, f);
                let ones = w.iter().filter(|&&v| v == 1.0).count();
                let zeros = w.iter().filter(|&&v| v == 0.0).count();
                if ones != 1 || ones + zeros != w.len() {
                    return Err(Error::Switch(format!("not one-hot at t={t}, f={f}")));
                }
            }
        }
        Ok(())
    }

    /// Index `(i, j)` of the active state, for one-hot weights.
    pub fn active(&self, t: usize, f: usize) -> Option<(usize, usize)> {
        self.frame(t, f)
            .iter()
            .position(|&v| v == 1.0)
            .map(|s| (s / self.states_sep, s % self.states_sep))
    }

    /// Marginal sums `gamma(i) = sum_j beta`, `delta(j) = sum_i beta`
    /// without checking one-hotness.
    pub fn marginal_sums(&self) -> (RealTensor, RealTensor) {
        let (ni, nj) = (self.states_mclp, self.states_sep);
        let (frames, bins) = (self.frames(), self.bins());
        let mut gamma = RealTensor::zeros(ni, frames, bins);
        let mut delta = RealTensor::zeros(nj, frames, bins);
        for f in 0..bins {
            for t in 0..frames {
                let w = self.frame(t, f);
                for i in 0..ni {
                    for j in 0..nj {
                        *gamma.get_mut(i, t, f) += w[i * nj + j];
                        *delta.get_mut(j, t, f) += w[i * nj + j];
                    }
                }
            }
        }
        (gamma, delta)
    }

    /// One-hot marginals of hard switch weights.
    pub fn marginals(&self) -> Result<(RealTensor, RealTensor)> {
        self.validate_one_hot()?;
        Ok(self.marginal_sums())
    }

    /// Total weight mass per state `(i, j)` in bin `f`.
    pub fn bin_mass(&self, f: usize) -> Vec<f64> {
        let mut mass = vec![0.0; self.states_mclp * self.states_sep];
        for t in 0..self.frames() {
            for (acc, w) in mass.iter_mut().zip(self.frame(t, f)) {
                *acc += w;
            }
        }
        mass
    }

    /// Total weight mass per state over all bins.
    pub fn state_mass(&self) -> Vec<f64> {
        let mut mass = vec![0.0; self.states_mclp * self.states_sep];
        for f in 0..self.bins() {
            for (acc, w) in mass.iter_mut().zip(self.bin_mass(f)) {
                *acc += w;
            }
        }
        mass
    }
}

/// Per-state, per-bin matrices stored bin-major (`f * states + s`).
#[derive(Clone, Debug, PartialEq)]
pub struct BinMatrices {
    states: usize,
    bins: usize,
    mats: Vec<CMatrix>,
}

impl BinMatrices {
    pub fn filled(states: usize, bins: usize, m: CMatrix) -> Self {
        Self {
            states,
            bins,
            mats: vec![m; states * bins],
        }
    }

    pub fn from_fn(states: usize, bins: usize, mut f: impl FnMut(usize, usize) -> CMatrix) -> Self {
        let mut mats = Vec::with_capacity(states * bins);
        for b in 0..bins {
            for s in 0..states {
                mats.push(f(s, b));
            }
        }
        Self { states, bins, mats }
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn get(&self, s: usize, f: usize) -> &CMatrix {
        &self.mats[f * self.states + s]
    }

    pub fn get_mut(&mut self, s: usize, f: usize) -> &mut CMatrix {
        &mut self.mats[f * self.states + s]
    }

    pub fn bin(&self, f: usize) -> &[CMatrix] {
        &self.mats[f * self.states..(f + 1) * self.states]
    }

    pub fn bin_mut(&mut self, f: usize) -> &mut [CMatrix] {
        &mut self.mats[f * self.states..(f + 1) * self.states]
    }

    pub fn as_mut_slice(&mut self) -> &mut [CMatrix] {
        &mut self.mats
    }

    pub fn is_finite(&self) -> bool {
        self.mats
            .iter()
            .all(|m| m.iter().all(|z| z.re.is_finite() && z.im.is_finite()))
    }
}

/// Prediction matrices `G(i, f)`, each `M(L-D) x M`.
pub type PredictionFilters = BinMatrices;
/// Separation matrices `W(j, f)`, each `M x M`; column `n` extracts output `n`.
pub type SeparationMatrices = BinMatrices;
/// Acoustic transfer functions as `M x 1` columns indexed `(source, bin)`.
pub type AtfSet = BinMatrices;

/// Time-varying source variances.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceVariances {
    /// `lambda(n, t, f)`
    pub fine: RealTensor,
    /// `lambda(n, t)`, stored as a one-bin tensor.
    pub coarse: RealTensor,
    pub eps: f64,
}

impl SourceVariances {
    pub fn constant(sources: usize, frames: usize, bins: usize, value: f64, eps: f64) -> Self {
        Self {
            fine: RealTensor::filled(sources, frames, bins, value),
            coarse: RealTensor::filled(sources, frames, 1, value),
            eps,
        }
    }

    pub fn from_fine(fine: RealTensor, eps: f64) -> Self {
        let coarse = crate::swiva::coarsen_variances(&fine);
        Self { fine, coarse, eps }
    }

    pub fn sources(&self) -> usize {
        self.fine.width()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(m: usize, t: usize, f: usize, seed: u64) -> FrameTensor {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        FrameTensor::from_fn(m, t, f, |_, _, _| {
            C64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))
        })
    }

    #[test]
    fn stacked_past_height_for_default_lags() {
        let x = random_tensor(2, 20, 3, 1);
        let xb = build_stacked_past(&x, 2, 10).unwrap();
        assert_eq!(xb.height(), 16);
        assert_eq!(xb.taps(), 8);
    }

    #[test]
    fn stacked_past_first_frame_is_zero() {
        let x = random_tensor(3, 12, 4, 2);
        let xb = build_stacked_past(&x, 2, 6).unwrap();
        for f in 0..4 {
            assert!(xb.data.frame(0, f).iter().all(|z| *z == C64::new(0.0, 0.0)));
            assert!(xb.data.frame(1, f).iter().all(|z| *z == C64::new(0.0, 0.0)));
        }
    }

    #[test]
    fn stacked_past_matches_index_oracle() {
        let (m, d, l) = (2, 2, 7);
        let x = random_tensor(m, 30, 5, 3);
        let xb = build_stacked_past(&x, d, l).unwrap();
        for f in 0..5 {
            for t in 0..30 {
                for blk in 0..l - d {
                    for ch in 0..m {
                        let got = *xb.data.get(blk * m + ch, t, f);
                        let src = t as isize - d as isize - blk as isize;
                        let want = if src >= 0 {
                            *x.get(ch, src as usize, f)
                        } else {
                            C64::new(0.0, 0.0)
                        };
                        assert_eq!(got, want);
                    }
                }
            }
        }
    }

    #[test]
    fn stacked_past_rejects_bad_lags() {
        let x = random_tensor(2, 5, 2, 4);
        assert!(build_stacked_past(&x, 3, 3).is_err());
        assert!(build_stacked_past(&x, 0, 3).is_err());
    }

    #[test]
    fn stacked_past_is_a_view_of_x() {
        let mut x = random_tensor(2, 10, 2, 5);
        let a = build_stacked_past(&x, 1, 3).unwrap();
        *x.get_mut(0, 4, 1) = C64::new(9.0, -9.0);
        let b = build_stacked_past(&x, 1, 3).unwrap();
        // frame 4 feeds frames 5 (lag 1) and 6 (lag 2)
        assert_eq!(*b.data.get(0, 5, 1), C64::new(9.0, -9.0));
        assert_eq!(*b.data.get(2, 6, 1), C64::new(9.0, -9.0));
        let changed = a.data.data().iter().zip(b.data.data()).filter(|(p, q)| p != q).count();
        assert_eq!(changed, 2);
    }

    #[test]
    fn single_state_marginals_are_ones() {
        let b = SwitchWeights::single(1, 1, 4, 3);
        let (g, d) = b.marginals().unwrap();
        assert!(g.data().iter().all(|&v| v == 1.0));
        assert!(d.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn marginal_of_selected_state() {
        let b = SwitchWeights::one_hot(2, 2, 3, 2, |t, f| if (t, f) == (1, 1) { (1, 0) } else { (0, 1) });
        let (g, d) = b.marginals().unwrap();
        assert_eq!(*g.get(1, 1, 1), 1.0);
        assert_eq!(*g.get(0, 1, 1), 0.0);
        assert_eq!(*d.get(0, 1, 1), 1.0);
        assert_eq!(*d.get(1, 1, 1), 0.0);
    }

    #[test]
    fn marginals_reject_soft_weights() {
        let g = RealTensor::filled(2, 3, 2, 0.5);
        let d = RealTensor::filled(1, 3, 2, 1.0);
        let b = SwitchWeights::from_marginals(&g, &d).unwrap();
        assert!(matches!(b.marginals(), Err(Error::Switch(_))));
    }

    proptest! {
        #[test]
        fn random_one_hot_has_one_hot_marginals(ni in 1usize..4, nj in 1usize..4, seed in any::<u64>()) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let b = SwitchWeights::one_hot(ni, nj, 6, 3, |_, _| (r.random_range(0..ni), r.random_range(0..nj)));
            let (g, d) = b.marginals().unwrap();
            for f in 0..3 {
                for t in 0..6 {
                    let (i, j) = b.active(t, f).unwrap();
                    for k in 0..ni {
                        prop_assert_eq!(*g.get(k, t, f), if k == i { 1.0 } else { 0.0 });
                    }
                    for k in 0..nj {
                        prop_assert_eq!(*d.get(k, t, f), if k == j { 1.0 } else { 0.0 });
                    }
                }
            }
        }
    }
}
