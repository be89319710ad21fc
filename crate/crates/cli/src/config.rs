use std::path::{Path, PathBuf};

use noisyir::metrics::{EvalConfig, MapNormalization};
use noisyir::significance::{DEFAULT_RESAMPLES, MIN_RESAMPLES};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub name: String,
    /// JSONL or NGEM1 embedding file.
    pub embeddings: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    #[serde(default)]
    pub sampling: u64,
    #[serde(default)]
    pub bootstrap: u64,
}

/// JSON run configuration. Relative paths resolve against the config file's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub metadata: Option<PathBuf>,
    pub min_chars: Option<u64>,
    pub systems: Vec<SystemSpec>,
    pub out_dir: PathBuf,
    pub k_list: Vec<usize>,
    pub tau_list: Vec<f64>,
    pub rbp_p: f64,
    pub bootstrap_b: usize,
    pub seeds: Seeds,
    pub query_n: usize,
    pub map_normalization: MapNormalization,
}

impl Default for RunConfig {
    fn default() -> Self {
        let eval = EvalConfig::default();
        Self {
            metadata: None,
            min_chars: None,
            systems: Vec::new(),
            out_dir: PathBuf::from("out"),
            k_list: eval.k_list,
            tau_list: eval.tau_list,
            rbp_p: eval.rbp_p,
            bootstrap_b: DEFAULT_RESAMPLES,
            seeds: Seeds::default(),
            query_n: 2000,
            map_normalization: eval.map_normalization,
        }
    }
}

/// Flag values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out_dir: Option<PathBuf>,
    pub seed_sampling: Option<u64>,
    pub seed_bootstrap: Option<u64>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                let mut cfg: RunConfig = serde_json::from_str(&text)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
                let base = p.parent().unwrap_or(Path::new(""));
                cfg.resolve(base);
                cfg
            }
            None => RunConfig::default(),
        };
        if let Some(d) = &overrides.out_dir {
            cfg.out_dir = d.clone();
        }
        if let Some(s) = overrides.seed_sampling {
            cfg.seeds.sampling = s;
        }
        if let Some(s) = overrides.seed_bootstrap {
            cfg.seeds.bootstrap = s;
        }
        cfg.validate()
    }

    fn resolve(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(m) = &mut self.metadata {
            join(m);
        }
        for s in &mut self.systems {
            join(&mut s.embeddings);
        }
        join(&mut self.out_dir);
    }

    fn validate(mut self) -> Result<Self> {
        let eval = self.eval_config()?;
        self.k_list = eval.k_list;
        self.tau_list = eval.tau_list;
        if self.bootstrap_b < MIN_RESAMPLES {
            return Err(CliError::Usage(format!(
                "bootstrap_b must be at least {MIN_RESAMPLES}, got {}",
                self.bootstrap_b
            )));
        }
        if self.query_n == 0 {
            return Err(CliError::Usage("query_n must be positive".into()));
        }
        let mut names: Vec<&str> = self.systems.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(CliError::Usage(format!("system {:?} listed twice", w[0])));
        }
        if let Some(bad) = self.systems.iter().find(|s| !valid_name(&s.name)) {
            return Err(CliError::Usage(format!(
                "system name {:?} may only use letters, digits, '-', '_' and '.'",
                bad.name
            )));
        }
        Ok(self)
    }

    pub fn eval_config(&self) -> Result<EvalConfig> {
        EvalConfig {
            k_list: self.k_list.clone(),
            tau_list: self.tau_list.clone(),
            rbp_p: self.rbp_p,
            map_normalization: self.map_normalization,
        }
        .validated()
        .map_err(|e| CliError::Usage(e.to_string()))
    }

    pub fn metadata_path(&self) -> Result<&Path> {
        self.metadata
            .as_deref()
            .ok_or_else(|| CliError::Usage("config has no metadata path".into()))
    }

    pub fn system(&self, name: &str) -> Result<&SystemSpec> {
        self.systems
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| CliError::Usage(format!("no system named {name:?} in config")))
    }

    /// Hash of the settings that define an evaluation snapshot. Paths,
    /// output location and bootstrap settings are left out, so moving a
    /// workspace or re-running significance with another seed keeps staged
    /// artifacts valid.
    pub fn snapshot_hash(&self) -> String {
        let snapshot = serde_json::json!({
            "min_chars": self.min_chars,
            "k_list": self.k_list,
            "tau_list": self.tau_list,
            "rbp_p": self.rbp_p,
            "query_n": self.query_n,
            "seed_sampling": self.seeds.sampling,
            "map_normalization": self.map_normalization,
        });
        hex::encode(Sha256::digest(snapshot.to_string().as_bytes()))
    }
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && !name.starts_with('.')
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}
