//! Flat `key = value` configuration files.
//!
//! Keys are dotted (`train.iters`, `vicinal.sigma`); `#` starts a comment.
//! Unknown keys are rejected at parse time, and [`ConfigFile::unused`] lists
//! keys a command never read so callers can report them.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::conditioning::{EmbedConfig, LabelInputMode, NetSpec};
use crate::data::{parse_path, Family, Manifest, SyntheticSpec};
use crate::losses::LossFamily;
use crate::sampler::VicinalMode;
use crate::trainer::{EvalSettings, Method, TrainConfig, VicinalChoice};
use crate::{Error, Result};

/// Every key a config file may contain.
pub const KNOWN_KEYS: &[&str] = &[
    "dataset.family",
    "dataset.mean_path",
    "dataset.noise",
    "dataset.n_labels",
    "dataset.per_label",
    "dataset.holdout",
    "dataset.raw_min",
    "dataset.raw_max",
    "dataset.seed",
    "dataset.dir",
    "dataset.train_csv",
    "dataset.heldout_csv",
    "dataset.min_per_label",
    "train.method",
    "train.loss",
    "train.iters",
    "train.batch_d",
    "train.batch_g",
    "train.d_steps_per_g",
    "train.lr_g",
    "train.lr_d",
    "train.beta1",
    "train.beta2",
    "train.seed",
    "train.eval_every",
    "train.out_dir",
    "train.resume",
    "bin.K",
    "model.latent_dim",
    "model.g_hidden",
    "model.d_hidden",
    "model.label_input",
    "vicinal.kernel",
    "vicinal.sigma",
    "vicinal.kappa",
    "vicinal.nu",
    "vicinal.m_kappa",
    "vicinal.max_retries",
    "vicinal.clamp_labels",
    "embed.d_f",
    "embed.t1_hidden",
    "embed.t3_hidden",
    "embed.sigma_gamma",
    "embed.regressor_epochs",
    "embed.embed_steps",
    "embed.batch",
    "embed.lr",
    "embed.dir",
    "embed.threshold",
    "embed.self_consistency",
    "embed.regressor_mae",
    "eval.n_per_label",
    "eval.labels",
    "eval.sfid_radius",
    "eval.sfid_centers",
    "eval.min_count",
    "eval.out_dir",
    "eval.extractor",
    "eval.ae_epochs",
    "eval.seed",
    "bounds.kappa_grid",
    "bounds.nu_grid",
    "bounds.mc_draws",
    "bounds.u",
    "bounds.m_r",
    "bounds.m_g",
    "bounds.l_r",
    "bounds.l_g",
    "bounds.fake_csv",
    "bounds.seed",
    "bounds.out",
];

/// Parsed config with read tracking.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    entries: BTreeMap<String, String>,
    read: RefCell<BTreeSet<String>>,
}

fn check_key(key: &str) -> Result<()> {
    if KNOWN_KEYS.contains(&key) {
        Ok(())
    } else {
        Err(Error::Config(format!("unknown key {key:?}")))
    }
}

impl ConfigFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = ConfigFile::new();
        for (n, raw) in text.lines().enumerate() {
            let err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                msg,
            };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`".into()))?;
            let (k, v) = (k.trim(), v.trim());
            check_key(k).map_err(|e| err(e.to_string()))?;
            if cfg.entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(err(format!("duplicate key {k:?}")));
            }
        }
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Sets or replaces a key; used for command-line overrides.
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        check_key(key)?;
        self.entries.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.read.borrow_mut().insert(key.to_string());
        self.entries.get(key).map(String::as_str)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Keys present in the file but never read.
    pub fn unused(&self) -> Vec<String> {
        let read = self.read.borrow();
        self.entries
            .keys()
            .filter(|k| !read.contains(*k))
            .cloned()
            .collect()
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?
            .ok_or_else(|| Error::Config(format!("missing required key {key}")))
    }

    pub fn get_bool(&self, key: &str, default: bool) -> Result<bool> {
        match self.raw(key) {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(v) => Err(Error::Config(format!(
                "{key}: expected true or false, got {v:?}"
            ))),
        }
    }

    /// Comma-separated list.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("{key}: cannot parse {s:?}")))
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    /// A float or `auto`; `auto` and absence both give `None`.
    pub fn get_auto(&self, key: &str) -> Result<Option<f64>> {
        match self.raw(key) {
            None | Some("auto") => Ok(None),
            Some(_) => self.get(key),
        }
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(PathBuf::from)
    }

    /// `CCGAN_SEED` style override applied to every seed key.
    pub fn override_seed(&mut self, seed: u64) {
        for key in ["dataset.seed", "train.seed", "eval.seed", "bounds.seed"] {
            self.entries.insert(key.to_string(), seed.to_string());
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn synthetic_spec(&self) -> Result<SyntheticSpec> {
        let d = SyntheticSpec::default();
        let spec = SyntheticSpec {
            family: match self.raw("dataset.family") {
                Some(f) => Family::parse(f)?,
                None => d.family,
            },
            path: match self.raw("dataset.mean_path") {
                Some(p) => parse_path(p)?,
                None => d.path,
            },
            noise: self.get_or("dataset.noise", d.noise)?,
            n_labels: self.get_or("dataset.n_labels", d.n_labels)?,
            per_label: self.get_or("dataset.per_label", d.per_label)?,
            holdout: self.get_or("dataset.holdout", d.holdout)?,
            raw_min: self.get_or("dataset.raw_min", d.raw_min)?,
            raw_max: self.get_or("dataset.raw_max", d.raw_max)?,
        };
        spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(spec)
    }

    /// Training and held-out CSV locations.
    pub fn dataset_paths(&self) -> (PathBuf, PathBuf) {
        let dir = self
            .path("dataset.dir")
            .unwrap_or_else(|| PathBuf::from("data"));
        let train = self
            .path("dataset.train_csv")
            .unwrap_or_else(|| dir.join("train.csv"));
        let heldout = self
            .path("dataset.heldout_csv")
            .unwrap_or_else(|| dir.join("heldout.csv"));
        (train, heldout)
    }

    pub fn net_spec(&self) -> Result<NetSpec> {
        let d = NetSpec::default();
        Ok(NetSpec {
            latent_dim: self.get_or("model.latent_dim", d.latent_dim)?,
            data_dim: d.data_dim,
            g_hidden: self.get_list("model.g_hidden")?.unwrap_or(d.g_hidden),
            d_hidden: self.get_list("model.d_hidden")?.unwrap_or(d.d_hidden),
        })
    }

    pub fn embed_config(&self) -> Result<EmbedConfig> {
        let d = EmbedConfig::default();
        let cfg = EmbedConfig {
            d_f: self.get_or("embed.d_f", d.d_f)?,
            t1_hidden: self.get_list("embed.t1_hidden")?.unwrap_or(d.t1_hidden),
            t3_hidden: self.get_list("embed.t3_hidden")?.unwrap_or(d.t3_hidden),
            sigma_gamma: self.get_or("embed.sigma_gamma", d.sigma_gamma)?,
            regressor_epochs: self.get_or("embed.regressor_epochs", d.regressor_epochs)?,
            embed_steps: self.get_or("embed.embed_steps", d.embed_steps)?,
            batch: self.get_or("embed.batch", d.batch)?,
            lr: self.get_or("embed.lr", d.lr)?,
        };
        cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn method(&self) -> Result<Method> {
        let name: String = self.get_or("train.method", "ccgan".to_string())?;
        let method = match name.as_str() {
            "ccgan" => {
                let kernel =
                    VicinalMode::parse(&self.get_or("vicinal.kernel", "soft".to_string())?)
                        .map_err(|e| Error::Config(e.to_string()))?;
                let label_input =
                    LabelInputMode::parse(&self.get_or("model.label_input", "ili".to_string())?)
                        .map_err(|e| Error::Config(e.to_string()))?;
                let loss = LossFamily::parse(&self.get_or("train.loss", "vanilla".to_string())?)
                    .map_err(|e| Error::Config(e.to_string()))?;
                if self.contains("bin.K") {
                    return Err(Error::Config(
                        "bin.K only applies to train.method = cgan_bin".into(),
                    ));
                }
                Method::CcGan {
                    kernel,
                    label_input,
                    loss,
                }
            }
            "cgan_bin" | "cgan_concat" => {
                for key in ["vicinal.kernel", "train.loss", "model.label_input"] {
                    if self.contains(key) {
                        return Err(Error::Config(format!(
                            "{key} does not apply to train.method = {name}"
                        )));
                    }
                }
                if name == "cgan_bin" {
                    let k: usize = self.get("bin.K")?.ok_or_else(|| {
                        Error::Config("train.method = cgan_bin requires bin.K".into())
                    })?;
                    Method::CganBin { k }
                } else {
                    if self.contains("bin.K") {
                        return Err(Error::Config(
                            "bin.K only applies to train.method = cgan_bin".into(),
                        ));
                    }
                    Method::CganConcat
                }
            }
            other => return Err(Error::Config(format!("unknown train.method {other:?}"))),
        };
        Ok(method)
    }

    pub fn vicinal(&self) -> Result<VicinalChoice> {
        let d = VicinalChoice::default();
        Ok(VicinalChoice {
            sigma: self.get_auto("vicinal.sigma")?,
            kappa: self.get_auto("vicinal.kappa")?,
            nu: self.get_auto("vicinal.nu")?,
            m_kappa: self.get_or("vicinal.m_kappa", d.m_kappa)?,
            max_retries: self.get_or("vicinal.max_retries", d.max_retries)?,
            clamp_labels: self.get_bool("vicinal.clamp_labels", d.clamp_labels)?,
        })
    }

    pub fn eval_settings(&self) -> Result<EvalSettings> {
        let d = EvalSettings::default();
        Ok(EvalSettings {
            n_per_label: self.get_or("eval.n_per_label", d.n_per_label)?,
            sfid_radius: self.get("eval.sfid_radius")?,
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let method = self.method()?;
        let mut cfg = TrainConfig::new(method);
        cfg.iters = self.get_or("train.iters", cfg.iters)?;
        cfg.batch_d = self.get_or("train.batch_d", cfg.batch_d)?;
        cfg.batch_g = self.get_or("train.batch_g", cfg.batch_g)?;
        cfg.d_steps_per_g = self.get_or("train.d_steps_per_g", cfg.d_steps_per_g)?;
        cfg.lr_g = self.get_or("train.lr_g", cfg.lr_g)?;
        cfg.lr_d = self.get_or("train.lr_d", cfg.lr_d)?;
        cfg.beta1 = self.get_or("train.beta1", cfg.beta1)?;
        cfg.beta2 = self.get_or("train.beta2", cfg.beta2)?;
        cfg.seed = self.get_or("train.seed", cfg.seed)?;
        cfg.eval_every = self.get_or("train.eval_every", cfg.eval_every)?;
        cfg.out_dir = Some(
            self.path("train.out_dir")
                .unwrap_or_else(|| PathBuf::from("run")),
        );
        cfg.resume = self.path("train.resume");
        cfg.net = self.net_spec()?;
        if matches!(method, Method::CcGan { .. }) {
            cfg.vicinal = self.vicinal()?;
        } else {
            for key in [
                "vicinal.sigma",
                "vicinal.kappa",
                "vicinal.nu",
                "vicinal.m_kappa",
            ] {
                if self.contains(key) {
                    return Err(Error::Config(format!(
                        "{key} does not apply to train.method = {}",
                        method.name()
                    )));
                }
            }
        }
        if method.label_input() == LabelInputMode::Ili {
            cfg.embed = self.embed_config()?;
        }
        cfg.eval = self.eval_settings()?;
        cfg.validate().map_err(|e| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        })?;
        Ok(cfg)
    }
}

/// Renders a manifest as config text so it can be fed back to the CLI.
pub fn manifest_to_config_text(m: &Manifest) -> String {
    let mut s = String::new();
    for (k, v) in m.entries() {
        let _ = writeln!(s, "{k} = {v}");
    }
    s
}

/// Reads a manifest written by [`manifest_to_config_text`].
pub fn read_config_manifest(path: &Path) -> Result<Manifest> {
    let cfg = ConfigFile::read(path)?;
    let mut m = Manifest::new();
    for (k, v) in cfg.entries() {
        m.insert(k, v);
    }
    Ok(m)
}
