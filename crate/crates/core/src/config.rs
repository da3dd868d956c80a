//! Flat `key = value` run configuration for the online benchmark.
//!
//! ```text
//! # comments start with '#'
//! mesh = disk.mesh
//! bundle = disk.bundle
//! output = report.csv
//! forcing = ball
//! runs = 100
//! rho = 20
//! c = 5000            # or: epsilon = 0.3 (with optional beta)
//! seed = 42
//! field = uniform     # uniform | lognormal | discontinuous
//! field.lo = 0.1
//! field.hi = 100
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fields::{FieldSpec, ForcingSpec, SignField};
use crate::sketch::{plan_sample_size, DEFAULT_BETA};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub mesh_path: PathBuf,
    pub bundle_path: PathBuf,
    pub output_csv: PathBuf,
    pub field: FieldSpec,
    pub forcing: ForcingSpec,
    pub runs: usize,
    /// Expected basis size; checked against the bundle when given.
    pub rho: Option<usize>,
    pub c: Option<usize>,
    pub epsilon: Option<f64>,
    pub beta: f64,
    pub seed: u64,
}

const KEYS: &[&str] = &[
    "mesh",
    "bundle",
    "output",
    "forcing",
    "runs",
    "rho",
    "c",
    "epsilon",
    "beta",
    "seed",
    "field",
    "field.lo",
    "field.hi",
    "field.nu",
    "field.scales",
    "field.variance",
    "field.kl_modes",
    "field.offset",
    "field.weights",
    "field.noise",
];

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut map: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected 'key = value', found '{line}'"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("unknown key '{key}'"),
                });
            }
            if map.insert(key, (i + 1, value)).is_some() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("duplicate key '{key}'"),
                });
            }
        }
        let cfg = Lookup { map: &map };

        let path = |key: &str| -> Result<PathBuf> {
            let p = PathBuf::from(cfg.required(key)?);
            Ok(if p.is_absolute() { p } else { base.join(p) })
        };
        let field = match cfg.get("field").unwrap_or("uniform") {
            "uniform" => FieldSpec::Uniform {
                lo: cfg.parse_or("field.lo", 0.1)?,
                hi: cfg.parse_or("field.hi", 100.0)?,
            },
            "lognormal" => FieldSpec::LognormalMatern {
                nu: cfg.parse_or("field.nu", 7.5)?,
                scales: cfg.list("field.scales")?.unwrap_or_default(),
                variance: cfg.parse_or("field.variance", 1.0)?,
                kl_modes: cfg.parse_opt("field.kl_modes")?,
            },
            "discontinuous" => {
                let default = SignField::default();
                FieldSpec::Discontinuous(SignField {
                    offset: cfg.parse_or("field.offset", default.offset)?,
                    weights: cfg.list("field.weights")?.unwrap_or(default.weights),
                    noise: cfg.parse_or("field.noise", default.noise)?,
                })
            }
            other => return Err(Error::Config(format!("unknown field kind '{other}'"))),
        };

        let out = RunConfig {
            mesh_path: path("mesh")?,
            bundle_path: path("bundle")?,
            output_csv: path("output")?,
            field,
            forcing: ForcingSpec::parse(cfg.get("forcing").unwrap_or("1"))?,
            runs: cfg.parse_or("runs", 100)?,
            rho: cfg.parse_opt("rho")?,
            c: cfg.parse_opt("c")?,
            epsilon: cfg.parse_opt("epsilon")?,
            beta: cfg.parse_or("beta", DEFAULT_BETA)?,
            seed: cfg.parse_or("seed", 0)?,
        };
        if out.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        if out.rho == Some(0) {
            return Err(Error::Config("rho must be at least 1".into()));
        }
        if out.c == Some(0) {
            return Err(Error::Config("c must be at least 1".into()));
        }
        if out.c.is_none() && out.epsilon.is_none() {
            return Err(Error::Config("either c or epsilon must be given".into()));
        }
        if let FieldSpec::LognormalMatern { scales, .. } = &out.field {
            if scales.is_empty() {
                return Err(Error::Config("lognormal field needs field.scales".into()));
            }
        }
        Ok(out)
    }

    /// `c` if given, otherwise planned from `epsilon` and `beta`.
    pub fn sample_size(&self, rho: usize) -> Result<usize> {
        match (self.c, self.epsilon) {
            (Some(c), _) => Ok(c),
            (None, Some(eps)) => plan_sample_size(rho, eps, self.beta),
            (None, None) => Err(Error::Config("either c or epsilon must be given".into())),
        }
    }
}

struct Lookup<'a> {
    map: &'a BTreeMap<&'a str, (usize, &'a str)>,
}

impl Lookup<'_> {
    fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|(_, v)| *v)
    }

    fn required(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("missing required key '{key}'")))
    }

    fn parse_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.map.get(key) {
            None => Ok(None),
            Some(&(line, v)) => v.parse().map(Some).map_err(|_| Error::Parse {
                line,
                message: format!("cannot parse '{v}' for '{key}'"),
            }),
        }
    }

    fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.parse_opt(key)?.unwrap_or(default))
    }

    fn list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        let Some(&(line, v)) = self.map.get(key) else {
            return Ok(None);
        };
        v.split(',')
            .map(|s| {
                s.trim().parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("cannot parse list entry '{}' for '{key}'", s.trim()),
                })
            })
            .collect::<Result<Vec<f64>>>()
            .map(Some)
    }
}
