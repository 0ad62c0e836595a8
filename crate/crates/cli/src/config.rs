//! Enhancement configuration files.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use swbss_core::kv::KvMap;
use swbss_core::optimizer::{Mode, RunConfig};
use swbss_core::{Error, Result, StftConfig};

/// Algorithm family selected in a config file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Iva,
    Civa,
    SwIva,
    SwCiva,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Iva => "iva",
            Method::Civa => "civa",
            Method::SwIva => "swiva",
            Method::SwCiva => "swciva",
        })
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iva" => Ok(Method::Iva),
            "civa" => Ok(Method::Civa),
            "swiva" => Ok(Method::SwIva),
            "swciva" => Ok(Method::SwCiva),
            _ => Err(Error::Config(format!("unknown method '{s}'"))),
        }
    }
}

impl Method {
    /// Mode and forced state counts.
    fn apply(self, kv: &KvMap, run: &mut RunConfig) -> Result<()> {
        let fixed = |key: &str| -> Result<()> {
            match kv.get_or::<usize>(key, 1)? {
                1 => Ok(()),
                v => Err(Error::Config(format!("method {self} fixes {key} = 1, got {v}"))),
            }
        };
        match self {
            Method::Iva | Method::Civa => {
                fixed("run.states_mclp")?;
                fixed("run.states_sep")?;
                run.states_mclp = 1;
                run.states_sep = 1;
            }
            Method::SwIva => {
                fixed("run.states_mclp")?;
                run.states_mclp = 1;
            }
            Method::SwCiva => {}
        }
        run.mode = match self {
            Method::Iva | Method::SwIva => Mode::SwIva,
            Method::Civa | Method::SwCiva => Mode::SwCiva,
        };
        Ok(())
    }
}

pub fn stft_from_kv(kv: &KvMap) -> Result<StftConfig> {
    let d = StftConfig::default();
    let cfg = StftConfig {
        frame_len: kv.get_or("stft.frame_len", d.frame_len)?,
        hop: kv.get_or("stft.hop", d.hop)?,
        window: d.window,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn stft_to_kv(cfg: &StftConfig, kv: &mut KvMap) {
    kv.insert("stft.frame_len", cfg.frame_len);
    kv.insert("stft.hop", cfg.hop);
}

pub const STFT_KEYS: &[&str] = &["stft.frame_len", "stft.hop"];

/// Everything `enhance` needs besides the audio.
#[derive(Clone, Debug, PartialEq)]
pub struct EnhanceConfig {
    pub method: Method,
    pub run: RunConfig,
    pub stft: StftConfig,
    /// Mask file, relative to the input directory.
    pub masks: String,
}

impl Default for EnhanceConfig {
    fn default() -> Self {
        Self {
            method: Method::SwCiva,
            run: RunConfig::default(),
            stft: StftConfig::default(),
            masks: "masks.swbt".into(),
        }
    }
}

impl EnhanceConfig {
    pub fn known_keys() -> Vec<&'static str> {
        let mut keys = vec!["method", "masks"];
        keys.extend(STFT_KEYS);
        keys.extend(RunConfig::keys().iter().filter(|k| **k != "run.mode"));
        keys
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        kv.reject_unknown(&Self::known_keys())?;
        let method: Method = kv.get_or("method", Method::SwCiva)?;
        let mut run_kv = kv.subset("run.");
        let mode = match method {
            Method::Iva | Method::SwIva => Mode::SwIva,
            _ => Mode::SwCiva,
        };
        run_kv.insert("run.mode", mode);
        if mode == Mode::SwIva && run_kv.get_str("run.states_mclp").is_none() {
            run_kv.insert("run.states_mclp", 1);
        }
        if matches!(method, Method::Iva | Method::Civa) {
            for key in ["run.states_mclp", "run.states_sep"] {
                if run_kv.get_str(key).is_none() {
                    run_kv.insert(key, 1);
                }
            }
        }
        let mut run = RunConfig::from_kv(&run_kv)?;
        method.apply(kv, &mut run)?;
        run.validate()?;
        Ok(Self {
            method,
            run,
            stft: stft_from_kv(kv)?,
            masks: kv.get_or("masks", "masks.swbt".to_string())?,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_kv(&KvMap::parse(&text)?)
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = self.run.to_kv();
        kv.remove("run.mode");
        kv.insert("method", self.method);
        kv.insert("masks", &self.masks);
        stft_to_kv(&self.stft, &mut kv);
        kv
    }
}
