//! File-level implementations of the `swbss` subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use swbss_core::atf_init::MaskTensor;
use swbss_core::kv::KvMap;
use swbss_core::optimizer::InitKind;
use swbss_core::simulator::{export_scene, gen_scene, SceneSpec};
use swbss_core::tensor_io::load_tensor;
use swbss_core::wav::{read_wav, write_wav, WavEncoding};
use swbss_core::{Error, Result};

use crate::config::EnhanceConfig;
use crate::pipeline::{self, Evaluation};
use crate::sweep::{evaluate_trends, run_grid, scenes_csv, summary_csv, Grid};

fn read_kv(path: &Path) -> Result<KvMap> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    KvMap::parse(&text)
}

/// Simulates a scene and writes it to `out`. Without a spec file the defaults are used.
pub fn simulate(spec: Option<&Path>, out: &Path) -> Result<()> {
    let spec = match spec {
        Some(p) => SceneSpec::from_kv(&read_kv(p)?)?,
        None => SceneSpec::default(),
    };
    export_scene(&gen_scene(&spec)?, out)
}

/// Enhances `<input>/mix.wav` and writes `est_<n>.wav`, `trace.txt` and
/// `config.txt` into `out`.
pub fn enhance(input: &Path, config: &Path, out: &Path) -> Result<()> {
    let cfg = EnhanceConfig::load(config)?;
    let mix = read_wav(input.join("mix.wav"))?;
    if cfg.run.sources > mix.num_channels() {
        return Err(Error::Config(format!(
            "{} sources requested from {} microphones",
            cfg.run.sources,
            mix.num_channels()
        )));
    }
    let masks = if cfg.run.init == InitKind::SpatiallyGuided {
        let path = input.join(&cfg.masks);
        if !path.exists() {
            return Err(Error::Config(format!(
                "spatially guided init needs masks at {}",
                path.display()
            )));
        }
        Some(MaskTensor::new(load_tensor(&path)?.to_real()?)?)
    } else {
        None
    };
    let enhanced = pipeline::enhance(&mix, &cfg, masks.as_ref())?;
    fs::create_dir_all(out)?;
    for n in 0..enhanced.estimates.num_channels() {
        write_wav(
            out.join(format!("est_{n}.wav")),
            &enhanced.estimates.select(n),
            WavEncoding::Float32,
        )?;
    }
    let trace: String = enhanced.diagnostics().iter().map(|d| format!("{d}\n")).collect();
    fs::write(out.join("trace.txt"), trace)?;
    fs::write(out.join("config.txt"), cfg.to_kv().to_text())?;
    Ok(())
}

/// `est_<n>.wav` files in `dir`, ordered by `n`.
fn estimate_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found: Vec<(usize, PathBuf)> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let n = name.strip_prefix("est_")?.strip_suffix(".wav")?.parse().ok()?;
            Some((n, e.path()))
        })
        .collect();
    found.sort();
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

/// Scores the estimates in `est` against the scene in `truth`.
pub fn evaluate(est: &Path, truth: &Path) -> Result<Evaluation> {
    let manifest = read_kv(&truth.join("manifest.txt"))?;
    let sources: usize = manifest.get_or("scene.sources", 0)?;
    let reference: usize = manifest.get_or("truth.reference_mic", 0)?;
    let files = estimate_files(est)?;
    if files.is_empty() {
        return Err(Error::Config(format!("no est_<n>.wav files in {}", est.display())));
    }
    let mut estimates = Vec::with_capacity(files.len());
    let mut rate = None;
    for f in &files {
        let w = read_wav(f)?;
        rate.get_or_insert(w.sample_rate);
        estimates.push(w.channel(0).to_vec());
    }
    let refs = (0..sources)
        .map(|n| {
            Ok(read_wav(truth.join(format!("desired_{n}.wav")))?
                .channel(reference)
                .to_vec())
        })
        .collect::<Result<Vec<_>>>()?;
    let mix = read_wav(truth.join("mix.wav"))?;
    if reference >= mix.num_channels() {
        return Err(Error::Format(format!(
            "reference microphone {reference} is not in the mixture"
        )));
    }
    if rate != Some(mix.sample_rate) {
        return Err(Error::Format("estimates and mixture differ in sample rate".into()));
    }
    pipeline::evaluate(&estimates, &refs, mix.channel(reference), mix.sample_rate)
}

pub fn evaluate_to_file(est: &Path, truth: &Path, report: &Path) -> Result<Evaluation> {
    let eval = evaluate(est, truth)?;
    fs::write(report, eval.to_kv().to_text())?;
    Ok(eval)
}

/// Runs a grid and writes `<out>`, `<out>.scenes.csv` and `<out>.trend.txt`.
/// Returns the trend report lines.
pub fn sweep(grid: &Path, out: &Path) -> Result<Vec<String>> {
    let grid = Grid::from_kv(&read_kv(grid)?)?;
    let results = run_grid(&grid);
    fs::write(out, summary_csv(&results))?;
    let with_suffix = |s: &str| {
        let mut p = out.as_os_str().to_owned();
        p.push(s);
        PathBuf::from(p)
    };
    fs::write(with_suffix(".scenes.csv"), scenes_csv(&grid, &results))?;
    let lines: Vec<String> = evaluate_trends(&grid, &results)?
        .iter()
        .map(|t| t.to_string())
        .collect();
    fs::write(
        with_suffix(".trend.txt"),
        lines.iter().map(|l| format!("{l}\n")).collect::<String>(),
    )?;
    Ok(lines)
}
