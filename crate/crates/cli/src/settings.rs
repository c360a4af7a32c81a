use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mimn_core::config::ConfigDoc;
use mimn_core::model::{HyperParams, MemoryInit};
use mimn_core::train::{ModelKind, TrainConfig};

use crate::CliError;

const SECTIONS: &[(&str, &[&str])] = &[
    ("", &["out", "seed"]),
    (
        "data",
        &[
            "source",
            "reviews",
            "meta",
            "path",
            "min_len",
            "max_len",
            "test_fraction",
            "split_seed",
            "negative_seed",
            "train",
            "test",
        ],
    ),
    (
        "synth",
        &[
            "users",
            "items",
            "categories",
            "min_events",
            "max_events",
            "segment_len",
            "noise",
            "zipf",
            "seed",
            "seq_len",
        ],
    ),
    (
        "model",
        &[
            "slots",
            "dim",
            "miu_hidden",
            "k_top",
            "lambda",
            "mlp_widths",
            "profile_dim",
            "memory_init",
            "init_scale",
            "init_seed",
            "mur",
            "miu",
        ],
    ),
    (
        "train",
        &[
            "model",
            "lr0",
            "decay_rate",
            "decay_interval",
            "batch_size",
            "epochs",
            "chunk_size",
            "resume",
            "version",
        ],
    ),
    ("ablate", &["seeds", "grid", "slots"]),
    (
        "gradcheck",
        &[
            "mode",
            "batch",
            "seq_len",
            "n_items",
            "n_categories",
            "step",
            "tolerance",
            "n",
        ],
    ),
    (
        "serve",
        &[
            "checkpoint",
            "stale_checkpoint",
            "events",
            "warmup_events",
            "requests",
            "snapshot_at_end",
            "snapshot_dir",
            "snapshot_id",
        ],
    ),
    (
        "bench",
        &[
            "profile",
            "request_rate",
            "event_rate",
            "duration",
            "users",
            "candidates",
            "workers",
            "seed",
            "lengths",
            "modes",
            "n_items",
            "n_categories",
            "checkpoint",
        ],
    ),
];

/// Comma-separated list value.
#[derive(Clone, Debug, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: Display,
{
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|p| p.trim().parse::<T>().map_err(|e| format!("{p:?}: {e}")))
            .collect::<Result<Vec<T>, String>>()
            .map(List)
    }
}

impl<T: Display> Display for List<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, x) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{x}")?;
        }
        Ok(())
    }
}

/// The run configuration: the config file with overrides applied. Every
/// value a command reads, including defaults, is written back so the echoed
/// file reproduces the run.
pub struct Settings {
    command: &'static str,
    doc: ConfigDoc,
}

impl Settings {
    pub fn load(
        command: &'static str,
        config: Option<&Path>,
        sets: &[String],
        out: Option<&Path>,
    ) -> Result<Self, CliError> {
        let mut doc = match config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
                ConfigDoc::parse(&text)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
            }
            None => ConfigDoc::default(),
        };
        for s in sets {
            doc.set(s).map_err(|e| CliError::Usage(e.to_string()))?;
        }
        if let Some(o) = out {
            doc.set(&format!("out={}", o.display()))
                .map_err(|e| CliError::Usage(e.to_string()))?;
        }
        for name in doc.section_names() {
            let Some((_, keys)) = SECTIONS.iter().find(|(s, _)| *s == name) else {
                return Err(CliError::Usage(format!("unknown config section [{name}]")));
            };
            doc.check_keys(name, keys)
                .map_err(|e| CliError::Usage(e.to_string()))?;
        }
        Ok(Settings { command, doc })
    }

    /// Value of `section.key`, or `default` (which is then recorded).
    pub fn get<T>(&mut self, section: &str, key: &str, default: T) -> Result<T, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        match self.opt(section, key)? {
            Some(v) => Ok(v),
            None => {
                self.record(section, key, &default);
                Ok(default)
            }
        }
    }

    pub fn opt<T>(&mut self, section: &str, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.doc
            .value(section, key)
            .map_err(|e| CliError::Usage(e.to_string()))
    }

    /// Sets `section.key`, replacing any configured value.
    pub fn record<T: Display>(&mut self, section: &str, key: &str, value: &T) {
        let path = if section.is_empty() {
            key.to_string()
        } else {
            format!("{section}.{key}")
        };
        self.doc
            .set(&format!("{path}={value}"))
            .expect("well-formed assignment");
    }

    /// A required path.
    pub fn path(&mut self, section: &str, key: &str) -> Result<PathBuf, CliError> {
        self.opt::<String>(section, key)?
            .map(PathBuf::from)
            .ok_or_else(|| CliError::Usage(format!("missing required setting {section}.{key}")))
    }

    /// A required input file that must exist.
    pub fn input(&mut self, section: &str, key: &str) -> Result<PathBuf, CliError> {
        let p = self.path(section, key)?;
        existing(p)
    }

    /// An input file defaulting to `default` inside the output directory.
    pub fn input_or(
        &mut self,
        section: &str,
        key: &str,
        default: &str,
    ) -> Result<PathBuf, CliError> {
        let fallback = self.out()?.join(default);
        let p: String = self.get(section, key, fallback.display().to_string())?;
        existing(PathBuf::from(p))
    }

    pub fn out(&mut self) -> Result<PathBuf, CliError> {
        Ok(PathBuf::from(self.get::<String>(
            "",
            "out",
            "mimn-out".into(),
        )?))
    }

    pub fn seed(&mut self) -> Result<u64, CliError> {
        self.get("", "seed", 1)
    }

    pub fn hyper(&mut self) -> Result<HyperParams, CliError> {
        let d = HyperParams::default();
        let memory_init = match self
            .get::<String>("model", "memory_init", "uniform".into())?
            .as_str()
        {
            "zeros" => MemoryInit::Zeros,
            "uniform" => MemoryInit::Uniform {
                scale: self.get("model", "init_scale", 0.1)?,
                seed: self.get("model", "init_seed", 1)?,
            },
            other => {
                return Err(CliError::Usage(format!(
                    "model.memory_init must be zeros or uniform, got {other:?}"
                )))
            }
        };
        let h = HyperParams {
            slots: self.get("model", "slots", d.slots)?,
            dim: self.get("model", "dim", d.dim)?,
            miu_hidden: self.get("model", "miu_hidden", d.miu_hidden)?,
            k_top: self.get("model", "k_top", d.k_top)?,
            lambda: self.get("model", "lambda", d.lambda)?,
            mlp_widths: self.get("model", "mlp_widths", List(d.mlp_widths))?.0,
            profile_dim: self.get("model", "profile_dim", d.profile_dim)?,
            memory_init,
            mur: self.get("model", "mur", d.mur)?,
            miu: self.get("model", "miu", d.miu)?,
        };
        h.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(h)
    }

    pub fn train_config(&mut self) -> Result<TrainConfig, CliError> {
        let d = TrainConfig::default();
        let hyper = self.hyper()?;
        let decay_interval: usize = self.get("train", "decay_interval", 0)?;
        let cfg = TrainConfig {
            model: self
                .get::<String>("train", "model", "mimn".into())?
                .parse::<ModelKind>()
                .map_err(CliError::Usage)?,
            lr0: self.get("train", "lr0", d.lr0)?,
            decay_rate: self.get("train", "decay_rate", d.decay_rate)?,
            decay_interval: (decay_interval > 0).then_some(decay_interval),
            batch_size: self.get("train", "batch_size", d.batch_size)?,
            epochs: self.get("train", "epochs", d.epochs)?,
            seed: self.seed()?,
            chunk_size: self.get("train", "chunk_size", d.chunk_size)?,
            hyper,
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }

    /// Writes the effective configuration to `<command>.config` in `dir`.
    pub fn echo(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(format!("{}.config", self.command));
        std::fs::write(&path, self.doc.render()).map_err(|e| CliError::io(&path, e))
    }
}

fn existing(p: PathBuf) -> Result<PathBuf, CliError> {
    if p.is_file() {
        Ok(p)
    } else {
        Err(CliError::Usage(format!("{}: no such file", p.display())))
    }
}
