//! In-memory enhancement and scoring shared by the commands, sweeps and
//! acceptance checks.

use swbss_core::atf_init::{oracle_masks, MaskTensor};
use swbss_core::kv::KvMap;
use swbss_core::metrics::{best_permutation, fwssnr, sir, sir_improvement};
use swbss_core::optimizer::{run, Diagnostic, InitKind, RunOutput};
use swbss_core::simulator::{gen_scene, SceneSpec, SceneTruth};
use swbss_core::spectral::{istft, stft};
use swbss_core::{Error, Result, Waveform};

use crate::config::EnhanceConfig;

/// Enhanced waveforms and the optimizer output they came from.
pub struct Enhanced {
    /// The first `N` projected outputs.
    pub estimates: Waveform,
    pub output: RunOutput,
}

impl Enhanced {
    pub fn diagnostics(&self) -> &[Diagnostic] {
        &self.output.diagnostics
    }
}

pub fn enhance(mix: &Waveform, cfg: &EnhanceConfig, masks: Option<&MaskTensor>) -> Result<Enhanced> {
    let x = stft(mix, &cfg.stft)?;
    let masks = if cfg.run.init == InitKind::SpatiallyGuided {
        masks
    } else {
        None
    };
    let output = run(&x, &cfg.run, masks)?;
    let estimates = istft(&output.y, &cfg.stft, mix.len(), mix.sample_rate)?;
    Ok(Enhanced { estimates, output })
}

/// Scores of one reference source.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceScore {
    /// Index of the estimate assigned to this source.
    pub estimate: usize,
    pub fwssnr: f64,
    pub sir: f64,
    pub sir_improvement: f64,
    /// FWSSNR of the unprocessed reference microphone.
    pub unprocessed_fwssnr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub sources: Vec<SourceScore>,
}

impl Evaluation {
    fn mean(&self, f: impl Fn(&SourceScore) -> f64) -> f64 {
        self.sources.iter().map(f).sum::<f64>() / self.sources.len() as f64
    }

    pub fn mean_fwssnr(&self) -> f64 {
        self.mean(|s| s.fwssnr)
    }

    pub fn mean_sir_improvement(&self) -> f64 {
        self.mean(|s| s.sir_improvement)
    }

    pub fn mean_unprocessed_fwssnr(&self) -> f64 {
        self.mean(|s| s.unprocessed_fwssnr)
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        for (n, s) in self.sources.iter().enumerate() {
            kv.insert(&format!("source.{n}.estimate"), s.estimate);
            kv.insert(&format!("source.{n}.fwssnr_db"), format!("{:.6}", s.fwssnr));
            kv.insert(&format!("source.{n}.sir_db"), format!("{:.6}", s.sir));
            kv.insert(
                &format!("source.{n}.sir_improvement_db"),
                format!("{:.6}", s.sir_improvement),
            );
            kv.insert(
                &format!("source.{n}.unprocessed_fwssnr_db"),
                format!("{:.6}", s.unprocessed_fwssnr),
            );
        }
        kv.insert("mean.fwssnr_db", format!("{:.6}", self.mean_fwssnr()));
        kv.insert("mean.sir_improvement_db", format!("{:.6}", self.mean_sir_improvement()));
        kv.insert(
            "mean.unprocessed_fwssnr_db",
            format!("{:.6}", self.mean_unprocessed_fwssnr()),
        );
        kv
    }
}

/// Assigns estimates to references by correlation and scores each pair.
///
/// `refs` are the desired signals at the reference microphone and `mix_ref`
/// the observation there.
pub fn evaluate(est: &[Vec<f64>], refs: &[Vec<f64>], mix_ref: &[f64], sample_rate: u32) -> Result<Evaluation> {
    if est.len() < refs.len() {
        return Err(Error::Config(format!(
            "{} estimates for {} references",
            est.len(),
            refs.len()
        )));
    }
    if est.iter().chain(refs).any(|s| s.len() != mix_ref.len()) {
        return Err(Error::Shape(
            "estimates, references and mixture differ in length".into(),
        ));
    }
    let perm = best_permutation(est, refs);
    let sources = perm
        .iter()
        .enumerate()
        .map(|(n, &k)| {
            Ok(SourceScore {
                estimate: k,
                fwssnr: fwssnr(&est[k], &refs[n], sample_rate)?,
                sir: sir(&est[k], refs, n, sample_rate)?,
                sir_improvement: sir_improvement(&est[k], refs, n, mix_ref, sample_rate)?,
                unprocessed_fwssnr: fwssnr(mix_ref, &refs[n], sample_rate)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Evaluation { sources })
}

/// Desired signals at the reference microphone.
pub fn references(truth: &SceneTruth) -> Vec<Vec<f64>> {
    truth.desired.iter().map(|d| d.channel(0).to_vec()).collect()
}

/// Simulates a scene, enhances it (with oracle masks when needed) and scores the result.
pub fn run_scene(spec: &SceneSpec, cfg: &EnhanceConfig) -> Result<(Evaluation, Enhanced)> {
    let truth = gen_scene(spec)?;
    let masks = match cfg.run.init {
        InitKind::SpatiallyGuided => Some(oracle_masks(&truth, &cfg.stft)?),
        _ => None,
    };
    let out = enhance(&truth.mixture, cfg, masks.as_ref())?;
    let eval = evaluate(
        &out.estimates.channels,
        &references(&truth),
        truth.mixture.channel(0),
        spec.sample_rate,
    )?;
    Ok((eval, out))
}

/// One-sided sign-test p-value for `wins` successes out of `n` ties-free trials.
pub fn sign_test_p(wins: usize, n: usize) -> f64 {
    let mut p = 0.0;
    let mut coef = 1.0f64;
    for k in 0..=n {
        if k > 0 {
            coef *= (n - k + 1) as f64 / k as f64;
        }
        if k >= wins {
            p += coef;
        }
    }
    p / 2f64.powi(n as i32)
}
