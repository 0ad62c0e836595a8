//! Metric sweeps over a grid of methods, state counts, initializations and
//! switching models.

use std::fmt::{self, Write as _};

use swbss_core::kv::KvMap;
use swbss_core::optimizer::{InitKind, RunConfig};
use swbss_core::simulator::SceneSpec;
use swbss_core::swiva::SwitchModel;
use swbss_core::{Error, Result, StftConfig};

use crate::config::{stft_from_kv, EnhanceConfig, Method, STFT_KEYS};
use crate::pipeline::{run_scene, sign_test_p};

/// One grid cell.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cell {
    pub method: Method,
    pub states_mclp: usize,
    pub states_sep: usize,
    pub init: InitKind,
    pub model: SwitchModel,
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let model = match self.model {
            SwitchModel::Factorized => "factorized",
            SwitchModel::Direct => "direct",
        };
        write!(
            f,
            "{}/{}x{}/{}/{}",
            self.method, self.states_mclp, self.states_sep, self.init, model
        )
    }
}

fn parse_model(s: &str) -> Result<SwitchModel> {
    match s {
        "factorized" => Ok(SwitchModel::Factorized),
        "direct" => Ok(SwitchModel::Direct),
        _ => Err(Error::Config(format!("unknown switching model '{s}'"))),
    }
}

fn parse_states(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("states must look like IxJ, got '{s}'"));
    let (i, j) = s.split_once('x').ok_or_else(bad)?;
    Ok((
        i.trim().parse().map_err(|_| bad())?,
        j.trim().parse().map_err(|_| bad())?,
    ))
}

impl std::str::FromStr for Cell {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split('/').collect();
        if parts.len() != 4 {
            return Err(Error::Config(format!("cell must be method/IxJ/init/model, got '{s}'")));
        }
        let (states_mclp, states_sep) = parse_states(parts[1])?;
        Ok(Cell {
            method: parts[0].parse()?,
            states_mclp,
            states_sep,
            init: parts[2].parse()?,
            model: parse_model(parts[3])?,
        })
    }
}

impl Cell {
    /// Enhancement config for this cell on top of `base`.
    pub fn config(&self, base: &EnhanceConfig) -> Result<EnhanceConfig> {
        let mut kv = base.to_kv();
        kv.insert("method", self.method);
        kv.insert("run.states_mclp", self.states_mclp);
        kv.insert("run.states_sep", self.states_sep);
        kv.insert("run.init", self.init);
        kv.insert(
            "run.model",
            match self.model {
                SwitchModel::Factorized => "factorized",
                SwitchModel::Direct => "direct",
            },
        );
        EnhanceConfig::from_kv(&kv)
    }
}

/// A sweep description.
#[derive(Clone, Debug)]
pub struct Grid {
    pub cells: Vec<Cell>,
    pub scenes: usize,
    pub scene: SceneSpec,
    pub base: EnhanceConfig,
    /// Pairs `(better, worse)` whose ordering is checked.
    pub trends: Vec<(Cell, Cell)>,
}

fn list(kv: &KvMap, key: &str, default: &str) -> Vec<String> {
    kv.get_str(key)
        .unwrap_or(default)
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

const SWEEP_KEYS: &[&str] = &[
    "sweep.methods",
    "sweep.states",
    "sweep.inits",
    "sweep.models",
    "sweep.scenes",
    "sweep.trend",
];

impl Grid {
    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let mut known: Vec<&str> = SWEEP_KEYS.to_vec();
        known.extend(STFT_KEYS);
        known.extend(RunConfig::keys().iter().filter(|k| {
            !matches!(
                **k,
                "run.mode" | "run.states_mclp" | "run.states_sep" | "run.init" | "run.model" | "run.seed"
            )
        }));
        let scene_kv = kv.subset("scene.");
        let scene = SceneSpec::from_kv(&scene_kv)?;
        known.extend(scene_kv.keys());
        kv.reject_unknown(&known)?;
        let mut base_kv = kv.subset("run.");
        base_kv.merge(&kv.subset("stft."))?;
        base_kv.insert("method", "swciva");
        base_kv.insert("run.states_mclp", 1);
        base_kv.insert("run.states_sep", 1);
        let base = EnhanceConfig::from_kv(&base_kv)?;
        let _: StftConfig = stft_from_kv(kv)?;
        let mut cells = Vec::new();
        for m in list(kv, "sweep.methods", "swciva") {
            for st in list(kv, "sweep.states", "1x1,2x2") {
                for init in list(kv, "sweep.inits", "spatially_guided") {
                    for model in list(kv, "sweep.models", "factorized") {
                        let (states_mclp, states_sep) = parse_states(&st)?;
                        cells.push(Cell {
                            method: m.parse()?,
                            states_mclp,
                            states_sep,
                            init: init.parse()?,
                            model: parse_model(&model)?,
                        });
                    }
                }
            }
        }
        let trends = kv
            .get_str("sweep.trend")
            .unwrap_or("")
            .split(';')
            .filter(|s| !s.trim().is_empty())
            .map(|t| {
                let (a, b) = t
                    .split_once('>')
                    .ok_or_else(|| Error::Config(format!("trend must be 'cell > cell', got '{t}'")))?;
                Ok((a.parse()?, b.parse()?))
            })
            .collect::<Result<Vec<(Cell, Cell)>>>()?;
        let scenes = kv.get_or("sweep.scenes", 10usize)?;
        if scenes == 0 {
            return Err(Error::Config("sweep.scenes must be positive".into()));
        }
        Ok(Grid {
            cells,
            scenes,
            scene,
            base,
            trends,
        })
    }

    /// Scene `k` of the sweep.
    pub fn scene_spec(&self, k: usize) -> SceneSpec {
        SceneSpec {
            seed: self.scene.seed + k as u64,
            ..self.scene.clone()
        }
    }
}

/// Per-scene scores of one cell, or the error that stopped it.
#[derive(Clone, Debug)]
pub struct CellResult {
    pub cell: Cell,
    pub fwssnr: Vec<f64>,
    pub sir_improvement: Vec<f64>,
    pub error: Option<String>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Runs one cell over all scenes. Run seeds follow the scene seeds.
pub fn run_cell(grid: &Grid, cell: &Cell) -> CellResult {
    let mut res = CellResult {
        cell: cell.clone(),
        fwssnr: Vec::new(),
        sir_improvement: Vec::new(),
        error: None,
    };
    let cfg = match cell.config(&grid.base) {
        Ok(c) => c,
        Err(e) => {
            res.error = Some(e.to_string());
            return res;
        }
    };
    for k in 0..grid.scenes {
        let spec = grid.scene_spec(k);
        let mut c = cfg.clone();
        c.run.seed = spec.seed;
        match run_scene(&spec, &c) {
            Ok((eval, _)) => {
                res.fwssnr.push(eval.mean_fwssnr());
                res.sir_improvement.push(eval.mean_sir_improvement());
            }
            Err(e) => {
                res.error = Some(format!("scene {}: {e}", spec.seed));
                break;
            }
        }
    }
    res
}

pub fn run_grid(grid: &Grid) -> Vec<CellResult> {
    grid.cells.iter().map(|c| run_cell(grid, c)).collect()
}

/// Summary table, one row per cell.
pub fn summary_csv(results: &[CellResult]) -> String {
    let mut out = String::from(
        "method,states_mclp,states_sep,init,model,samples,fwssnr_mean,fwssnr_std,sir_improvement_mean,sir_improvement_std,status\n",
    );
    for r in results {
        let (fm, fs) = mean_std(&r.fwssnr);
        let (sm, ss) = mean_std(&r.sir_improvement);
        let c = &r.cell;
        let model = c.to_string().rsplit('/').next().unwrap_or_default().to_string();
        let status = match &r.error {
            None => "ok".to_string(),
            Some(e) => format!("\"error: {}\"", e.replace('"', "'")),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{:.4},{:.4},{:.4},{:.4},{}",
            c.method,
            c.states_mclp,
            c.states_sep,
            c.init,
            model,
            r.fwssnr.len(),
            fm,
            fs,
            sm,
            ss,
            status
        );
    }
    out
}

/// Per-scene values, one row per cell and scene.
pub fn scenes_csv(grid: &Grid, results: &[CellResult]) -> String {
    let mut out = String::from("cell,scene_seed,fwssnr,sir_improvement\n");
    for r in results {
        for (k, (f, s)) in r.fwssnr.iter().zip(&r.sir_improvement).enumerate() {
            let _ = writeln!(out, "{},{},{:.6},{:.6}", r.cell, grid.scene_spec(k).seed, f, s);
        }
    }
    out
}

/// Outcome of a paired ordering check.
#[derive(Clone, Debug)]
pub struct Trend {
    pub better: Cell,
    pub worse: Cell,
    pub wins: usize,
    pub pairs: usize,
    pub mean_diff: f64,
    pub p_value: f64,
}

impl Trend {
    pub fn passed(&self) -> bool {
        self.pairs > 0 && self.mean_diff > 0.0 && self.p_value < 0.05
    }
}

impl fmt::Display for Trend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} > {}: wins {}/{} mean_diff {:.3} dB p {:.4}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.better,
            self.worse,
            self.wins,
            self.pairs,
            self.mean_diff,
            self.p_value
        )
    }
}

/// Paired FWSSNR comparison; ties count as losses.
pub fn paired_trend(better: &Cell, a: &[f64], worse: &Cell, b: &[f64]) -> Trend {
    let pairs = a.len().min(b.len());
    let wins = (0..pairs).filter(|&k| a[k] > b[k]).count();
    let mean_diff = if pairs > 0 {
        (0..pairs).map(|k| a[k] - b[k]).sum::<f64>() / pairs as f64
    } else {
        f64::NAN
    };
    Trend {
        better: better.clone(),
        worse: worse.clone(),
        wins,
        pairs,
        mean_diff,
        p_value: sign_test_p(wins, pairs),
    }
}

pub fn evaluate_trends(grid: &Grid, results: &[CellResult]) -> Result<Vec<Trend>> {
    grid.trends
        .iter()
        .map(|(a, b)| {
            let find = |c: &Cell| {
                results
                    .iter()
                    .find(|r| &r.cell == c)
                    .ok_or_else(|| Error::Config(format!("trend cell {c} is not in the grid")))
            };
            let (ra, rb) = (find(a)?, find(b)?);
            Ok(paired_trend(a, &ra.fwssnr, b, &rb.fwssnr))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells_parse_and_print() {
        let c: Cell = "swciva/2x2/spatially_guided/direct".parse().unwrap();
        assert_eq!(c.states_mclp, 2);
        assert_eq!(c.model, SwitchModel::Direct);
        assert_eq!(c.to_string(), "swciva/2x2/spatially_guided/direct");
        assert!("swciva/2/simple/factorized".parse::<Cell>().is_err());
    }

    #[test]
    fn grid_expands_the_product() {
        let kv = KvMap::parse(
            "sweep.methods = swiva, swciva\nsweep.states = 1x1, 1x2\nsweep.inits = simple\nsweep.scenes = 3\nscene.duration = 1\nrun.rounds = 2",
        )
        .unwrap();
        let g = Grid::from_kv(&kv).unwrap();
        assert_eq!(g.cells.len(), 4);
        assert_eq!(g.scenes, 3);
        assert_eq!(g.base.run.rounds, 2);
        assert_eq!(g.scene_spec(2).seed, 2);
        assert!(Grid::from_kv(&KvMap::parse("sweep.bogus = 1").unwrap()).is_err());
    }

    #[test]
    fn invalid_cells_become_error_rows() {
        let kv =
            KvMap::parse("sweep.methods = swiva\nsweep.states = 2x2\nsweep.inits = simple\nsweep.scenes = 1").unwrap();
        let g = Grid::from_kv(&kv).unwrap();
        let r = run_cell(&g, &g.cells[0]);
        assert!(r.error.is_some());
        let csv = summary_csv(&[r]);
        assert!(csv.lines().nth(1).unwrap().contains("error"));
    }

    #[test]
    fn trend_counts_wins() {
        let a: Cell = "swiva/1x2/simple/factorized".parse().unwrap();
        let b: Cell = "swiva/1x1/simple/factorized".parse().unwrap();
        let t = paired_trend(&a, &[1.0, 2.0, 3.0], &b, &[0.5, 2.0, 1.0]);
        assert_eq!((t.wins, t.pairs), (2, 3));
        assert!((t.mean_diff - 2.5 / 3.0).abs() < 1e-12);
        assert!(!t.passed());
    }

    #[test]
    fn mean_and_sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }
}
