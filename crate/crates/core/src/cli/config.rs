//! Flat `key = value` run configuration with command-line overrides.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::aperture::{PupilFunction, QuadratureSpec};
use crate::montecarlo::{EstimatorSettings, SimulationConfig};
use crate::overlap::Vec3;
use crate::qfi::{Axis, Sweep};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum CommandKind {
    QcrbLl,
    QcrbSs,
    Verify,
    Channels,
    Fi,
    Simulate,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::QcrbLl => "qcrb-ll",
            CommandKind::QcrbSs => "qcrb-ss",
            CommandKind::Verify => "verify",
            CommandKind::Channels => "channels",
            CommandKind::Fi => "fi",
            CommandKind::Simulate => "simulate",
        }
    }
}

/// Where a setting came from, for diagnostics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    File { path: PathBuf, line: usize },
    Flag(String),
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::File { path, line } => write!(f, "{}:{line}", path.display()),
            Origin::Flag(flag) => write!(f, "{flag}"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: PathBuf, message: String },

    #[error("{origin}: expected `key = value`, got `{text}`")]
    Syntax { origin: Origin, text: String },

    #[error("{origin}: key `{key}` {message}")]
    Key {
        origin: Origin,
        key: String,
        message: String,
    },

    #[error("`{command}` requires key `{key}`")]
    Missing {
        command: &'static str,
        key: &'static str,
    },
}

use CommandKind::*;

const ALL: &[CommandKind] = &[QcrbLl, QcrbSs, Verify, Channels, Fi, Simulate];

/// Recognized keys and the commands that accept them.
const KEYS: &[(&str, &[CommandKind])] = &[
    ("pupil", ALL),
    ("pupil_sigma", ALL),
    ("nr", ALL),
    ("ntheta", ALL),
    ("refinement", ALL),
    ("out", ALL),
    ("threads", ALL),
    ("seed", ALL),
    ("l", &[QcrbSs, Channels, Fi, Simulate]),
    ("s", &[Channels, Fi]),
    ("channels", &[Channels, Fi, Simulate]),
    ("photons", &[Fi, Simulate]),
    ("sweep_axis", &[QcrbSs]),
    ("sweep_start", &[QcrbSs]),
    ("sweep_stop", &[QcrbSs]),
    ("sweep_step", &[QcrbSs]),
    ("samples", &[Verify]),
    ("sigma_s", &[Simulate]),
    ("draws", &[Simulate]),
    ("frames", &[Simulate]),
    ("init", &[Simulate]),
    ("multistart", &[Simulate]),
    ("jitter", &[Simulate]),
    ("simplex_step", &[Simulate]),
    ("xtol", &[Simulate]),
    ("max_iter", &[Simulate]),
];

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: String,
    origin: Origin,
}

/// Raw settings: file entries first, then overrides replacing them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, Entry>,
}

impl RawConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::parse(&text, path)
    }

    /// Blank lines and `#` comments are ignored; keys may appear once.
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let mut raw = Self::default();
        for (k, line) in text.lines().enumerate() {
            let origin = Origin::File {
                path: path.to_path_buf(),
                line: k + 1,
            };
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError::Syntax {
                    origin,
                    text: content.to_string(),
                });
            };
            let key = key.trim();
            if raw.entries.contains_key(key) {
                return Err(ConfigError::Key {
                    origin,
                    key: key.to_string(),
                    message: "is set twice".into(),
                });
            }
            raw.insert(key, value.trim(), origin)?;
        }
        Ok(raw)
    }

    pub fn set(&mut self, key: &str, value: &str, origin: Origin) -> Result<(), ConfigError> {
        self.insert(key, value.trim(), origin)
    }

    /// Parses a `key=value` override given via `--set`.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), ConfigError> {
        let origin = Origin::Flag("--set".into());
        let Some((key, value)) = pair.split_once('=') else {
            return Err(ConfigError::Syntax {
                origin,
                text: pair.to_string(),
            });
        };
        self.insert(key.trim(), value.trim(), origin)
    }

    fn insert(&mut self, key: &str, value: &str, origin: Origin) -> Result<(), ConfigError> {
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(ConfigError::Key {
                origin,
                key: key.to_string(),
                message: "is not recognized".into(),
            });
        }
        self.entries.insert(
            key.to_string(),
            Entry {
                value: value.to_string(),
                origin,
            },
        );
        Ok(())
    }

    pub fn resolve(&self, command: CommandKind) -> Result<RunConfig, ConfigError> {
        Resolver {
            raw: self,
            command,
            canonical: BTreeMap::new(),
        }
        .run()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PupilChoice {
    Clear,
    Gaussian { sigma: f64 },
}

impl PupilChoice {
    pub fn build(&self, spec: QuadratureSpec) -> crate::Result<PupilFunction> {
        match self {
            PupilChoice::Clear => PupilFunction::clear_circular(spec),
            PupilChoice::Gaussian { sigma } => PupilFunction::gaussian_apodized(spec, *sigma),
        }
    }
}

/// Fully resolved settings for one command.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: CommandKind,
    pub pupil: PupilChoice,
    pub quadrature: QuadratureSpec,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub l: Option<Vec3>,
    pub s: Vec3,
    pub channels: usize,
    pub photons: u64,
    pub sweep: Option<Sweep>,
    pub samples: usize,
    pub simulation: Option<SimulationConfig>,
    /// `key=value` lines of every effective setting that affects results.
    canonical: String,
}

impl RunConfig {
    /// SHA-256 of the effective settings (output path and threads excluded).
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical.as_bytes()))
    }

    pub fn canonical(&self) -> &str {
        &self.canonical
    }
}

struct Resolver<'a> {
    raw: &'a RawConfig,
    command: CommandKind,
    canonical: BTreeMap<&'static str, String>,
}

impl Resolver<'_> {
    fn run(mut self) -> Result<RunConfig, ConfigError> {
        for (key, entry) in &self.raw.entries {
            let allowed = KEYS
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, c)| *c)
                .unwrap_or(&[]);
            if !allowed.contains(&self.command) {
                return Err(ConfigError::Key {
                    origin: entry.origin.clone(),
                    key: key.clone(),
                    message: format!("does not apply to `{}`", self.command.name()),
                });
            }
        }

        let pupil = match self.string("pupil", "clear").as_str() {
            "clear" => PupilChoice::Clear,
            "gaussian" => {
                let sigma = self.float("pupil_sigma", 0.5)?;
                if !(sigma > 0.0 && sigma.is_finite()) {
                    return Err(self.invalid("pupil_sigma", "must be positive"));
                }
                PupilChoice::Gaussian { sigma }
            }
            _ => return Err(self.invalid("pupil", "must be `clear` or `gaussian`")),
        };
        if pupil == PupilChoice::Clear && self.raw.entries.contains_key("pupil_sigma") {
            return Err(self.invalid("pupil_sigma", "only applies to `pupil = gaussian`"));
        }
        let defaults = QuadratureSpec::default();
        let quadrature = QuadratureSpec {
            n_radial: self.int("nr", defaults.n_radial as u64)? as usize,
            n_angular: self.int("ntheta", defaults.n_angular as u64)? as usize,
            refinement_factor: self.int("refinement", defaults.refinement_factor as u64)? as usize,
        };
        if let Err(e) = quadrature.validate() {
            let key = ["nr", "ntheta", "refinement"]
                .into_iter()
                .find(|k| self.raw.entries.contains_key(*k))
                .unwrap_or("nr");
            return Err(self.invalid(key, &e.to_string()));
        }
        let seed = self.int("seed", 42)?;
        let out = self.raw.entries.get("out").map(|e| PathBuf::from(&e.value));
        let threads = match self.raw.entries.get("threads") {
            Some(_) => {
                let n = self.parse_int("threads")?;
                if n == 0 {
                    return Err(self.invalid("threads", "must be at least 1"));
                }
                Some(n as usize)
            }
            None => None,
        };

        let cmd = self.command;
        let l = match cmd {
            QcrbSs => Some(self.vector("l", Some([0.0; 3]))?),
            Channels | Fi | Simulate => Some(self.vector("l", None)?),
            _ => None,
        };
        let s = match cmd {
            Channels | Fi => self.vector("s", Some([0.0; 3]))?,
            _ => [0.0; 3],
        };
        let channels = match cmd {
            Channels | Fi | Simulate => {
                let n = self.int("channels", 4)? as usize;
                if n == 0 {
                    return Err(self.invalid("channels", "must be at least 1"));
                }
                n
            }
            _ => 0,
        };
        let photons = match cmd {
            Fi | Simulate => {
                let m = self.int("photons", 100_000)?;
                if m == 0 {
                    return Err(self.invalid("photons", "must be positive"));
                }
                m
            }
            _ => 0,
        };
        let sweep = match cmd {
            QcrbSs => Some(self.sweep(l.unwrap_or_default())?),
            _ => None,
        };
        let samples = match cmd {
            Verify => {
                let n = self.int("samples", 100)? as usize;
                if n == 0 {
                    return Err(self.invalid("samples", "must be at least 1"));
                }
                n
            }
            _ => 0,
        };
        let simulation = match cmd {
            Simulate => Some(self.simulation(l.unwrap_or_default(), photons, seed)?),
            _ => None,
        };

        self.canonical.insert("command", cmd.name().to_string());
        let canonical = self
            .canonical
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        Ok(RunConfig {
            command: cmd,
            pupil,
            quadrature,
            seed,
            out,
            threads,
            l,
            s,
            channels,
            photons,
            sweep,
            samples,
            simulation,
            canonical,
        })
    }

    fn sweep(&mut self, base: Vec3) -> Result<Sweep, ConfigError> {
        let axis_text = self.required("sweep_axis")?;
        let axis: Axis = axis_text
            .parse()
            .map_err(|m: String| self.invalid("sweep_axis", &m))?;
        let start = self.required_float("sweep_start")?;
        let stop = self.required_float("sweep_stop")?;
        let step = self.required_float("sweep_step")?;
        if !(step > 0.0) {
            return Err(self.invalid("sweep_step", "must be positive"));
        }
        let sweep = Sweep::range(axis, start, stop, step, base);
        if sweep.values.is_empty() {
            return Err(self.invalid("sweep_stop", "gives an empty sweep (stop < start)"));
        }
        Ok(sweep)
    }

    fn simulation(
        &mut self,
        l: Vec3,
        photons: u64,
        seed: u64,
    ) -> Result<SimulationConfig, ConfigError> {
        let defaults = SimulationConfig::default();
        let est = EstimatorSettings::default();
        let init = match self.raw.entries.contains_key("init") {
            true => Some(self.vector("init", None)?),
            false => None,
        };
        let config = SimulationConfig {
            true_l: l,
            sigma_s: self.vector("sigma_s", Some(defaults.sigma_s))?,
            n_centroid_draws: self.int("draws", defaults.n_centroid_draws as u64)? as usize,
            frames_per_draw: self.int("frames", defaults.frames_per_draw as u64)? as usize,
            photons_per_frame: photons,
            seed,
            init,
            estimator: EstimatorSettings {
                multistart: self.int("multistart", est.multistart as u64)? as usize,
                jitter: self.float("jitter", est.jitter)?,
                initial_step: self.float("simplex_step", est.initial_step)?,
                xtol: self.float("xtol", est.xtol)?,
                max_iter: self.int("max_iter", est.max_iter as u64)? as usize,
            },
        };
        if let Err(e) = config.validate() {
            return Err(ConfigError::Key {
                origin: Origin::Flag("simulate".into()),
                key: "draws/frames/photons/sigma_s".into(),
                message: e.to_string(),
            });
        }
        Ok(config)
    }

    fn origin(&self, key: &str) -> Origin {
        self.raw
            .entries
            .get(key)
            .map(|e| e.origin.clone())
            .unwrap_or_else(|| Origin::Flag("default".into()))
    }

    fn invalid(&self, key: &str, message: &str) -> ConfigError {
        ConfigError::Key {
            origin: self.origin(key),
            key: key.to_string(),
            message: message.to_string(),
        }
    }

    fn lookup(&self, key: &str) -> Option<&str> {
        self.raw.entries.get(key).map(|e| e.value.as_str())
    }

    fn string(&mut self, key: &'static str, default: &str) -> String {
        let v = self.lookup(key).unwrap_or(default).to_string();
        self.canonical.insert(key, v.clone());
        v
    }

    fn required(&mut self, key: &'static str) -> Result<String, ConfigError> {
        let v = self.lookup(key).ok_or(ConfigError::Missing {
            command: self.command.name(),
            key,
        })?;
        let v = v.to_string();
        self.canonical.insert(key, v.clone());
        Ok(v)
    }

    fn parse_float(&self, key: &str, text: &str) -> Result<f64, ConfigError> {
        text.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| self.invalid(key, &format!("expects a finite number, got `{text}`")))
    }

    fn parse_int(&self, key: &str) -> Result<u64, ConfigError> {
        let text = self.lookup(key).unwrap_or("");
        // Accept `1e5`-style integers as well.
        text.parse::<u64>()
            .ok()
            .or_else(|| {
                text.parse::<f64>()
                    .ok()
                    .filter(|v| *v >= 0.0 && v.fract() == 0.0 && *v < 1.8e19)
                    .map(|v| v as u64)
            })
            .ok_or_else(|| {
                self.invalid(
                    key,
                    &format!("expects a non-negative integer, got `{text}`"),
                )
            })
    }

    fn float(&mut self, key: &'static str, default: f64) -> Result<f64, ConfigError> {
        let v = match self.lookup(key) {
            Some(text) => self.parse_float(key, text)?,
            None => default,
        };
        self.canonical.insert(key, format!("{v:?}"));
        Ok(v)
    }

    fn required_float(&mut self, key: &'static str) -> Result<f64, ConfigError> {
        let text = self.required(key)?;
        let v = self.parse_float(key, &text)?;
        self.canonical.insert(key, format!("{v:?}"));
        Ok(v)
    }

    fn int(&mut self, key: &'static str, default: u64) -> Result<u64, ConfigError> {
        let v = match self.lookup(key) {
            Some(_) => self.parse_int(key)?,
            None => default,
        };
        self.canonical.insert(key, v.to_string());
        Ok(v)
    }

    fn vector(&mut self, key: &'static str, default: Option<Vec3>) -> Result<Vec3, ConfigError> {
        let v = match (self.lookup(key), default) {
            (Some(text), _) => {
                let parts: Vec<&str> = text.split(',').map(str::trim).collect();
                if parts.len() != 3 {
                    return Err(self.invalid(
                        key,
                        &format!("expects three comma-separated numbers, got `{text}`"),
                    ));
                }
                let mut v = [0.0; 3];
                for (slot, part) in v.iter_mut().zip(parts) {
                    *slot = self.parse_float(key, part)?;
                }
                v
            }
            (None, Some(d)) => d,
            (None, None) => {
                return Err(ConfigError::Missing {
                    command: self.command.name(),
                    key,
                })
            }
        };
        self.canonical
            .insert(key, format!("{:?},{:?},{:?}", v[0], v[1], v[2]));
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RawConfig, ConfigError> {
        RawConfig::parse(text, Path::new("run.cfg"))
    }

    #[test]
    fn parses_comments_and_vectors() {
        let raw = parse("# scene\nl = 0.2, 0.025,0.025  # trailing\n\nseed=7\n").unwrap();
        let cfg = raw.resolve(Channels).unwrap();
        assert_eq!(cfg.l, Some([0.2, 0.025, 0.025]));
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.channels, 4);
    }

    #[test]
    fn unknown_key_reports_line() {
        let err = parse("seed = 1\nfoo = 2\n").unwrap_err();
        assert_eq!(err.to_string(), "run.cfg:2: key `foo` is not recognized");
    }

    #[test]
    fn syntax_and_duplicate_errors() {
        assert!(matches!(
            parse("l 0.1").unwrap_err(),
            ConfigError::Syntax { .. }
        ));
        let err = parse("seed=1\nseed=2").unwrap_err();
        assert!(err.to_string().contains("run.cfg:2"), "{err}");
    }

    #[test]
    fn key_for_other_command_is_rejected() {
        let raw = parse("samples = 10\n").unwrap();
        assert!(raw.resolve(Verify).is_ok());
        let err = raw.resolve(QcrbLl).unwrap_err();
        assert!(
            err.to_string().contains("does not apply to `qcrb-ll`"),
            "{err}"
        );
    }

    #[test]
    fn bad_values_name_the_key() {
        let raw = parse("l = 0.1,0.2\n").unwrap();
        let err = raw.resolve(Fi).unwrap_err();
        assert!(err.to_string().starts_with("run.cfg:1: key `l`"), "{err}");
        let raw = parse("nr = 2\n").unwrap();
        assert!(raw
            .resolve(QcrbLl)
            .unwrap_err()
            .to_string()
            .contains("`nr`"));
    }

    #[test]
    fn sweep_requires_all_fields_and_a_nonempty_range() {
        let raw = parse("sweep_axis = x\nsweep_start = 0.1\nsweep_stop = 0.3\n").unwrap();
        assert!(matches!(
            raw.resolve(QcrbSs),
            Err(ConfigError::Missing {
                key: "sweep_step",
                ..
            })
        ));
        let raw = parse("sweep_axis=x\nsweep_start=0.3\nsweep_stop=0.1\nsweep_step=0.1").unwrap();
        assert!(raw.resolve(QcrbSs).is_err());
        let raw = parse("sweep_axis=z\nsweep_start=0.1\nsweep_stop=0.3\nsweep_step=0.1\nl=0.1,0,0")
            .unwrap();
        let sweep = raw.resolve(QcrbSs).unwrap().sweep.unwrap();
        assert_eq!(sweep.values.len(), 3);
        assert_eq!(sweep.point(2)[0], 0.1);
    }

    #[test]
    fn overrides_replace_file_values_and_hash_tracks_effect() {
        let mut raw = parse("l = 0.2,0,0\nout = a.csv\n").unwrap();
        let before = raw.resolve(Fi).unwrap();
        raw.set("out", "b.csv", Origin::Flag("--out".into()))
            .unwrap();
        raw.set("threads", "3", Origin::Flag("--threads".into()))
            .unwrap();
        let moved = raw.resolve(Fi).unwrap();
        assert_eq!(before.hash(), moved.hash());
        raw.set_pair("photons=1e6").unwrap();
        let more = raw.resolve(Fi).unwrap();
        assert_eq!(more.photons, 1_000_000);
        assert_ne!(before.hash(), more.hash());
    }

    #[test]
    fn gaussian_pupil_needs_positive_sigma() {
        let raw = parse("pupil = gaussian\npupil_sigma = 0.4").unwrap();
        assert_eq!(
            raw.resolve(QcrbLl).unwrap().pupil,
            PupilChoice::Gaussian { sigma: 0.4 }
        );
        let raw = parse("pupil = gaussian\npupil_sigma = -1").unwrap();
        assert!(raw.resolve(QcrbLl).is_err());
        let raw = parse("pupil_sigma = 0.3").unwrap();
        assert!(raw.resolve(QcrbLl).is_err());
    }
}
