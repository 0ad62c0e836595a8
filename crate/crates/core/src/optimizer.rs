//! Top-level joint optimization: initialization, the outer MCLP/separation
//! loop, single-state re-initialization and projection back.

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;

use crate::atf_init::{
    dereverb_for_init, estimate_atf, init_variances_sg, masked_covariances, mpdr_init, near_uniform_weights, MaskTensor,
};
use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::linalg::{general_solve, hermitian_solve, CMatrix, LoadingPolicy, C64};
use crate::metrics::log_likelihood;
use crate::model::{
    build_stacked_past, BinMatrices, FrameTensor, ObservedTensor, OutputTensor, PredictionFilters, RealTensor,
    SeparationMatrices, SourceVariances, StackedPast, SwitchWeights,
};
use crate::rng::{stream, Stream};
use crate::swiva::{compute_outputs, swiva_sweep, SwitchModel, SwivaOptions, SwivaState};
use crate::swwpe::{apply_mclp, plain_swwpe_step, update_g};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Separation only, applied to the observation.
    SwIva,
    /// Joint dereverberation and separation.
    SwCiva,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitKind {
    Simple,
    SingleState,
    SpatiallyGuided,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::SwIva => "swiva",
            Mode::SwCiva => "swciva",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "swiva" => Ok(Mode::SwIva),
            "swciva" => Ok(Mode::SwCiva),
            _ => Err(Error::Config(format!("unknown mode '{s}'"))),
        }
    }
}

impl fmt::Display for InitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitKind::Simple => "simple",
            InitKind::SingleState => "single_state",
            InitKind::SpatiallyGuided => "spatially_guided",
        })
    }
}

impl FromStr for InitKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(InitKind::Simple),
            "single_state" => Ok(InitKind::SingleState),
            "spatially_guided" => Ok(InitKind::SpatiallyGuided),
            _ => Err(Error::Config(format!("unknown init '{s}'"))),
        }
    }
}

fn model_name(m: SwitchModel) -> &'static str {
    match m {
        SwitchModel::Factorized => "factorized",
        SwitchModel::Direct => "direct",
    }
}

fn parse_model(s: &str) -> Result<SwitchModel> {
    match s {
        "factorized" => Ok(SwitchModel::Factorized),
        "direct" => Ok(SwitchModel::Direct),
        _ => Err(Error::Config(format!("unknown switching model '{s}'"))),
    }
}

/// Settings of one optimization run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    /// `I`
    pub states_mclp: usize,
    /// `J`
    pub states_sep: usize,
    /// Separation sweeps per MCLP update (`K`).
    pub sweeps: usize,
    /// Number of MCLP updates, including the one inside initialization.
    /// Also the number of separation rounds, so `rounds * sweeps` W-updates run.
    pub rounds: usize,
    /// Prediction delay `D` in frames.
    pub delay: usize,
    /// Prediction lag limit `L` in frames.
    pub lag: usize,
    pub model: SwitchModel,
    pub init: InitKind,
    /// W-updates run with a single separation state before re-initialization.
    pub single_state_iters: usize,
    pub seed: u64,
    /// Variance floor relative to the mean frame power of the observation.
    pub eps: f64,
    /// Relative diagonal loading for every linear solve.
    pub loading: f64,
    /// Number of speech sources `N`.
    pub sources: usize,
    /// Stop when the relative change of the log-likelihood over one round
    /// falls below this value. Zero disables early stopping.
    pub early_stop: f64,
    /// Evaluate objectives around every step.
    pub track: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::SwCiva,
            states_mclp: 2,
            states_sep: 2,
            sweeps: 5,
            rounds: 10,
            delay: 2,
            lag: 10,
            model: SwitchModel::Factorized,
            init: InitKind::Simple,
            single_state_iters: 25,
            seed: 0,
            eps: 1e-6,
            loading: 1e-8,
            sources: 2,
            early_stop: 0.0,
            track: true,
        }
    }
}

const RUN_KEYS: &[&str] = &[
    "run.mode",
    "run.states_mclp",
    "run.states_sep",
    "run.sweeps",
    "run.rounds",
    "run.delay",
    "run.lag",
    "run.model",
    "run.init",
    "run.single_state_iters",
    "run.seed",
    "run.eps",
    "run.loading",
    "run.sources",
    "run.early_stop",
    "run.track",
];

impl RunConfig {
    /// Plain IVA: one separation state, no MCLP.
    pub fn iva() -> Self {
        Self {
            mode: Mode::SwIva,
            states_mclp: 1,
            states_sep: 1,
            ..Default::default()
        }
    }

    /// Plain CIVA: one MCLP state and one separation state.
    pub fn civa() -> Self {
        Self {
            states_mclp: 1,
            states_sep: 1,
            ..Default::default()
        }
    }

    pub fn total_w_updates(&self) -> usize {
        self.rounds * self.sweeps
    }

    pub fn policy(&self) -> LoadingPolicy {
        LoadingPolicy::new(self.loading).expect("validated")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.states_mclp == 0 || self.states_sep == 0 {
            return bad("state counts must be at least 1".into());
        }
        if self.mode == Mode::SwIva && self.states_mclp != 1 {
            return bad("swiva mode uses a single MCLP state".into());
        }
        if self.model == SwitchModel::Direct && self.states_mclp != self.states_sep {
            return bad("the direct switching model needs states_mclp == states_sep".into());
        }
        if self.sweeps == 0 || self.rounds == 0 {
            return bad("sweeps and rounds must be positive".into());
        }
        if self.mode == Mode::SwCiva && self.lag <= self.delay {
            return bad(format!("lag {} must exceed delay {}", self.lag, self.delay));
        }
        if self.init == InitKind::SingleState
            && (self.single_state_iters >= self.total_w_updates() || self.single_state_iters < self.sweeps)
        {
            return bad(format!(
                "single_state_iters {} must lie in [{}, {})",
                self.single_state_iters,
                self.sweeps,
                self.total_w_updates()
            ));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return bad("eps must be positive".into());
        }
        if !(self.loading >= 0.0 && self.loading.is_finite()) {
            return bad("loading must be non-negative".into());
        }
        if self.sources == 0 {
            return bad("at least one source is required".into());
        }
        if !(self.early_stop >= 0.0) {
            return bad("early_stop must be non-negative".into());
        }
        Ok(())
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let d = Self::default();
        let mode: Mode = kv.get_str("run.mode").map(str::parse).transpose()?.unwrap_or(d.mode);
        let cfg = Self {
            mode,
            states_mclp: kv.get_or("run.states_mclp", if mode == Mode::SwIva { 1 } else { d.states_mclp })?,
            states_sep: kv.get_or("run.states_sep", d.states_sep)?,
            sweeps: kv.get_or("run.sweeps", d.sweeps)?,
            rounds: kv.get_or("run.rounds", d.rounds)?,
            delay: kv.get_or("run.delay", d.delay)?,
            lag: kv.get_or("run.lag", d.lag)?,
            model: kv.get_str("run.model").map(parse_model).transpose()?.unwrap_or(d.model),
            init: kv.get_str("run.init").map(str::parse).transpose()?.unwrap_or(d.init),
            single_state_iters: kv.get_or("run.single_state_iters", d.single_state_iters)?,
            seed: kv.get_or("run.seed", d.seed)?,
            eps: kv.get_or("run.eps", d.eps)?,
            loading: kv.get_or("run.loading", d.loading)?,
            sources: kv.get_or("run.sources", d.sources)?,
            early_stop: kv.get_or("run.early_stop", d.early_stop)?,
            track: kv.get_or("run.track", d.track)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Keys understood by [`RunConfig::from_kv`].
    pub fn keys() -> &'static [&'static str] {
        RUN_KEYS
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.insert("run.mode", self.mode);
        kv.insert("run.states_mclp", self.states_mclp);
        kv.insert("run.states_sep", self.states_sep);
        kv.insert("run.sweeps", self.sweeps);
        kv.insert("run.rounds", self.rounds);
        kv.insert("run.delay", self.delay);
        kv.insert("run.lag", self.lag);
        kv.insert("run.model", model_name(self.model));
        kv.insert("run.init", self.init);
        kv.insert("run.single_state_iters", self.single_state_iters);
        kv.insert("run.seed", self.seed);
        kv.insert("run.eps", self.eps);
        kv.insert("run.loading", self.loading);
        kv.insert("run.sources", self.sources);
        kv.insert("run.early_stop", self.early_stop);
        kv.insert("run.track", self.track);
        kv
    }

    fn swiva_options(&self) -> SwivaOptions {
        SwivaOptions {
            policy: self.policy(),
            model: self.model,
            coarse_fine: true,
            taps: if self.mode == Mode::SwCiva {
                self.lag - self.delay
            } else {
                0
            },
            track: self.track,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Step {
    /// End of initialization.
    Init,
    /// MCLP filter update.
    Mclp,
    /// Separation-matrix update.
    Separation,
    /// Switch update.
    Switch,
    /// Single-state re-initialization.
    Reinit,
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Step::Init => "init",
            Step::Mclp => "mclp",
            Step::Separation => "separation",
            Step::Switch => "switch",
            Step::Reinit => "reinit",
        })
    }
}

/// One diagnostics record.
#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostic {
    /// Number of W-updates completed when the record was taken.
    pub iteration: usize,
    pub step: Step,
    /// Fine log-likelihood before the step, if tracked.
    pub before: Option<f64>,
    /// Fine log-likelihood after the step (W-objective for separation steps).
    pub after: Option<f64>,
    /// Frames assigned to each joint state `(i, j)`.
    pub state_mass: Vec<f64>,
    pub degenerate: usize,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| v.map_or_else(|| "na".to_string(), |x| format!("{x:.12e}"));
        write!(
            f,
            "iter={} step={} before={} after={} degenerate={} mass=",
            self.iteration,
            self.step,
            opt(self.before),
            opt(self.after),
            self.degenerate
        )?;
        let mass: Vec<String> = self.state_mass.iter().map(|m| format!("{m:.0}")).collect();
        f.write_str(&mass.join(","))
    }
}

/// Full optimizer state.
#[derive(Clone, Debug)]
pub struct RunState {
    /// MCLP filters; `None` in swIVA mode.
    pub g: Option<PredictionFilters>,
    pub sep: SwivaState,
}

/// Result of a run.
#[derive(Clone, Debug)]
pub struct RunOutput {
    /// The first `N` outputs after projection back, at the input scale.
    pub y: OutputTensor,
    /// All `M` outputs after projection back, at the input scale.
    pub all: OutputTensor,
    /// All `M` outputs before projection back, on the normalized scale.
    pub raw: OutputTensor,
    pub state: RunState,
    pub diagnostics: Vec<Diagnostic>,
    /// Factor the observation was divided by before optimization.
    pub scale: f64,
}

/// Working data of one run.
struct Ctx<'a> {
    cfg: &'a RunConfig,
    x: ObservedTensor,
    xbar: Option<StackedPast>,
    opts: SwivaOptions,
    diagnostics: Vec<Diagnostic>,
    w_updates: usize,
}

impl Ctx<'_> {
    fn record(&mut self, step: Step, before: Option<f64>, after: Option<f64>, beta: &SwitchWeights, degenerate: usize) {
        self.diagnostics.push(Diagnostic {
            iteration: self.w_updates,
            step,
            before,
            after,
            state_mass: beta.state_mass(),
            degenerate,
        });
    }

    fn loglik(&self, z: &[FrameTensor], sep: &SwivaState) -> Result<Option<f64>> {
        if self.cfg.track {
            Ok(Some(log_likelihood(z, &sep.w, &sep.lam.fine, &sep.beta)?))
        } else {
            Ok(None)
        }
    }

    /// One separation sweep with its records.
    fn sweep(&mut self, z: &[FrameTensor], sep: &mut SwivaState) -> Result<OutputTensor> {
        let (y, rec) = swiva_sweep(z, sep, &self.opts)?;
        self.w_updates += 1;
        let (wb, wa) = rec.w_objective.unzip();
        self.diagnostics.push(Diagnostic {
            iteration: self.w_updates,
            step: Step::Separation,
            before: wb,
            after: wa,
            state_mass: Vec::new(),
            degenerate: rec.degenerate,
        });
        let (bb, ba) = rec.switch_loglik.unzip();
        self.record(Step::Switch, bb, ba, &sep.beta, rec.degenerate);
        Ok(y)
    }
}

fn unit_weights(states: usize, frames: usize, bins: usize, r: &mut ChaCha8Rng) -> RealTensor {
    let parts = near_uniform_weights(states, 1, frames, bins, r);
    RealTensor::from_fn(states, frames, bins, |s, t, f| *parts[s].get(0, t, f))
}

/// Joint weights `beta(i, j) = gamma(i) delta(j)`, restricted to `i == j`
/// for the direct model.
fn joint_weights(gamma: &RealTensor, delta: &RealTensor, model: SwitchModel) -> Result<SwitchWeights> {
    match model {
        SwitchModel::Factorized => SwitchWeights::from_marginals(gamma, delta),
        SwitchModel::Direct => {
            let n = gamma.width();
            let (frames, bins) = (gamma.frames(), gamma.bins());
            let w = RealTensor::from_fn(n * n, frames, bins, |s, t, f| {
                let (i, j) = (s / n, s % n);
                if i == j {
                    *gamma.get(i, t, f)
                } else {
                    0.0
                }
            });
            SwitchWeights::from_tensor(n, n, w)
        }
    }
}

/// Initialization for the current state count: the first MCLP update and
/// the first separation round.
fn initialize(
    ctx: &mut Ctx<'_>,
    states_sep: usize,
    masks: Option<&MaskTensor>,
) -> Result<(Option<PredictionFilters>, Vec<FrameTensor>, SwivaState)> {
    let cfg = ctx.cfg;
    let (m, frames, bins) = ctx.x.dims();
    let policy = cfg.policy();
    let mut r = stream(cfg.seed, Stream::SwitchInit);
    let (g, z, gamma) = match &ctx.xbar {
        Some(xbar) => {
            let gamma0 = unit_weights(cfg.states_mclp, frames, bins, &mut r);
            let step = plain_swwpe_step(&ctx.x, xbar, &gamma0, cfg.eps, policy)?;
            (Some(step.g), step.z, step.gamma)
        }
        None => (None, vec![ctx.x.clone()], RealTensor::filled(1, frames, bins, 1.0)),
    };
    let delta = match cfg.model {
        SwitchModel::Factorized => unit_weights(states_sep, frames, bins, &mut r),
        SwitchModel::Direct => gamma.clone(),
    };
    let beta = joint_weights(&gamma, &delta, cfg.model)?;
    let (w, lam) = match cfg.init {
        InitKind::SpatiallyGuided => {
            let masks = masks.ok_or_else(|| Error::Config("spatially guided init needs masks".into()))?;
            if masks.sources() > m {
                return Err(Error::Config(format!("{} masks for {m} channels", masks.sources())));
            }
            let zd = dereverb_for_init(&gamma, &z)?;
            let (gz, gv) = masked_covariances(&zd, masks)?;
            let atfs = estimate_atf(&gz, &gv, policy)?;
            let (w, alpha) = mpdr_init(&zd, &atfs, states_sep, &mut stream(cfg.seed, Stream::Mpdr), policy)?;
            let lam = init_variances_sg(&zd, &w, &alpha, cfg.eps)?;
            (w, SourceVariances::from_fine(lam, cfg.eps))
        }
        _ => (
            BinMatrices::filled(states_sep, bins, CMatrix::identity(m, m)),
            SourceVariances::constant(m, frames, bins, 1.0, cfg.eps),
        ),
    };
    let mut sep = SwivaState { w, lam, beta };
    for _ in 0..cfg.sweeps {
        ctx.sweep(&z, &mut sep)?;
    }
    let ll = ctx.loglik(&z, &sep)?;
    ctx.record(Step::Init, None, ll, &sep.beta, 0);
    Ok((g, z, sep))
}

/// Copies `W(1)` to every separation state and spreads each `beta(i, 1)`
/// over the states with fresh near-uniform weights.
pub fn reinit_states(sep: &SwivaState, states_sep: usize, r: &mut ChaCha8Rng) -> Result<SwivaState> {
    if sep.beta.states_sep() != 1 || sep.w.states() != 1 {
        return Err(Error::Shape(
            "re-initialization starts from a single separation state".into(),
        ));
    }
    let bins = sep.w.bins();
    let ni = sep.beta.states_mclp();
    let (frames, _) = (sep.beta.frames(), sep.beta.bins());
    let w = BinMatrices::from_fn(states_sep, bins, |_, f| sep.w.get(0, f).clone());
    let delta = unit_weights(states_sep, frames, bins, r);
    let weights = RealTensor::from_fn(ni * states_sep, frames, bins, |s, t, f| {
        let (i, j) = (s / states_sep, s % states_sep);
        sep.beta.weight(i, 0, t, f) * delta.get(j, t, f)
    });
    Ok(SwivaState {
        w,
        lam: sep.lam.clone(),
        beta: SwitchWeights::from_tensor(ni, states_sep, weights)?,
    })
}

/// Per-state projection-back coefficients `[(W(j)^H)^{-1}]_{r,n}`, indexed
/// `(j, bin)` as `1 x M` rows.
pub fn projection_coefficients(w: &SeparationMatrices, reference: usize, policy: LoadingPolicy) -> Result<BinMatrices> {
    let mut out = BinMatrices::filled(w.states(), w.bins(), CMatrix::zeros(0, 0));
    for f in 0..w.bins() {
        for j in 0..w.states() {
            let wj = w.get(j, f);
            let m = wj.nrows();
            if reference >= m {
                return Err(Error::Config(format!("reference channel {reference} of {m}")));
            }
            let a = match general_solve(&wj.adjoint(), &CMatrix::identity(m, m)) {
                Ok(a) if a.iter().all(|v| v.re.is_finite() && v.im.is_finite()) => a,
                _ => hermitian_solve(&(wj * wj.adjoint()), wj, policy)?,
            };
            *out.get_mut(j, f) = a.rows(reference, 1).into_owned();
        }
    }
    Ok(out)
}

/// Rescales each output by the projection-back coefficient of its active
/// separation state (a `delta`-weighted mix for soft switches).
pub fn projection_back(
    y: &OutputTensor,
    w: &SeparationMatrices,
    beta: &SwitchWeights,
    reference: usize,
    policy: LoadingPolicy,
) -> Result<OutputTensor> {
    let (m, frames, bins) = y.dims();
    if w.bins() != bins || beta.frames() != frames || beta.bins() != bins || w.states() != beta.states_sep() {
        return Err(Error::Shape("outputs, separation matrices and switches differ".into()));
    }
    let coef = projection_coefficients(w, reference, policy)?;
    let (_, delta) = beta.marginal_sums();
    Ok(OutputTensor::from_fn(m, frames, bins, |n, t, f| {
        let c: C64 = (0..w.states())
            .map(|j| coef.get(j, f)[(0, n)] * *delta.get(j, t, f))
            .sum();
        c * y.get(n, t, f)
    }))
}

/// Runs swCIVA or swIVA according to `cfg.mode`.
pub fn run(x: &ObservedTensor, cfg: &RunConfig, masks: Option<&MaskTensor>) -> Result<RunOutput> {
    cfg.validate()?;
    let (m, frames, bins) = x.dims();
    if cfg.sources > m {
        return Err(Error::Config(format!("{} sources but {m} channels", cfg.sources)));
    }
    if cfg.init == InitKind::SpatiallyGuided && masks.is_none() {
        return Err(Error::Config("spatially guided init needs masks".into()));
    }
    if let Some(mk) = masks {
        if (mk.omega.frames(), mk.omega.bins()) != (frames, bins) {
            return Err(Error::Shape("mask grid differs from the observation".into()));
        }
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("observation"));
    }
    let power = x.mean_frame_power();
    let scale = if power > 0.0 { power.sqrt() } else { 1.0 };
    let mut xn = x.clone();
    xn.scale_by(1.0 / scale);
    let xbar = match cfg.mode {
        Mode::SwCiva => Some(build_stacked_past(&xn, cfg.delay, cfg.lag)?),
        Mode::SwIva => None,
    };
    let mut ctx = Ctx {
        cfg,
        x: xn,
        xbar,
        opts: cfg.swiva_options(),
        diagnostics: Vec::new(),
        w_updates: 0,
    };
    let single = cfg.init == InitKind::SingleState && cfg.states_sep > 1;
    let init_states = if single { 1 } else { cfg.states_sep };
    let (mut g, mut z, mut sep) = initialize(&mut ctx, init_states, masks)?;
    let mut last_ll = ctx.loglik(&z, &sep)?;
    for _ in 1..cfg.rounds {
        if let (Some(gf), Some(xbar)) = (g.as_mut(), ctx.xbar.as_ref()) {
            let before = ctx.loglik(&z, &sep)?;
            *gf = update_g(&ctx.x, xbar, &sep.beta, &sep.lam.fine, &sep.w, cfg.policy())?;
            z = apply_mclp(&ctx.x, xbar, gf);
            let after = ctx.loglik(&z, &sep)?;
            ctx.record(Step::Mclp, before, after, &sep.beta, 0);
        }
        for _ in 0..cfg.sweeps {
            if single && sep.beta.states_sep() == 1 && ctx.w_updates == cfg.single_state_iters {
                let before = ctx.loglik(&z, &sep)?;
                sep = reinit_states(&sep, cfg.states_sep, &mut stream(cfg.seed, Stream::SingleStateInit))?;
                let after = ctx.loglik(&z, &sep)?;
                ctx.record(Step::Reinit, before, after, &sep.beta, 0);
            }
            ctx.sweep(&z, &mut sep)?;
        }
        if cfg.early_stop > 0.0 && sep.beta.states_sep() == cfg.states_sep {
            let ll = log_likelihood(&z, &sep.w, &sep.lam.fine, &sep.beta)?;
            if let Some(prev) = last_ll {
                if ((ll - prev) / prev.abs().max(f64::MIN_POSITIVE)).abs() < cfg.early_stop {
                    break;
                }
            }
            last_ll = Some(ll);
        }
    }
    if single && sep.beta.states_sep() == 1 {
        return Err(Error::Config("single-state re-initialization never ran".into()));
    }
    if !sep.w.is_finite() {
        return Err(Error::Numerical("separation matrices are not finite".into()));
    }
    let raw = compute_outputs(&z, &sep.w, &sep.beta)?;
    let mut all = projection_back(&raw, &sep.w, &sep.beta, 0, cfg.policy())?;
    all.scale_by(scale);
    let y = OutputTensor::from_fn(cfg.sources, frames, bins, |n, t, f| *all.get(n, t, f));
    if !all.is_finite() {
        return Err(Error::Numerical("outputs are not finite".into()));
    }
    Ok(RunOutput {
        y,
        all,
        raw,
        state: RunState { g, sep },
        diagnostics: ctx.diagnostics,
        scale,
    })
}

/// swCIVA with the configured state counts.
pub fn run_swciva(x: &ObservedTensor, cfg: &RunConfig, masks: Option<&MaskTensor>) -> Result<RunOutput> {
    if cfg.mode != Mode::SwCiva {
        return Err(Error::Config("run_swciva needs mode swciva".into()));
    }
    run(x, cfg, masks)
}

/// swIVA: the observation is separated directly, with one MCLP state.
pub fn run_swiva(x: &ObservedTensor, cfg: &RunConfig, masks: Option<&MaskTensor>) -> Result<RunOutput> {
    if cfg.mode != Mode::SwIva {
        return Err(Error::Config("run_swiva needs mode swiva".into()));
    }
    run(x, cfg, masks)
}

/// Likelihood trace steps that must never decrease.
pub fn ascent_violations(diag: &[Diagnostic], rel_tol: f64) -> Vec<&Diagnostic> {
    diag.iter()
        .filter(|d| matches!(d.step, Step::Mclp | Step::Switch | Step::Separation))
        .filter(|d| match (d.before, d.after) {
            (Some(b), Some(a)) => a < b - rel_tol * b.abs().max(1.0),
            _ => false,
        })
        .collect()
}
