use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tsfb_core::evalproto::{build_vintages, derive_seed, DataScope, ExperimentPlan, ModelSpec, Vintage};
use tsfb_core::panel::{clean, read_cache, read_raw_csv, CleanConfig, ReturnPanel};
use tsfb_core::portfolio::CostScenario;
use tsfb_core::synth::{make_signal_panel, SignalConfig};
use tsfb_core::tensorcore::{ModelCheckpoint, Regime};
use tsfb_core::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum PanelSource {
    /// Binary cache written by `tsfb clean`.
    Cache { path: PathBuf },
    /// Raw record CSV, cleaned on load.
    Csv {
        path: PathBuf,
        #[serde(default)]
        clean: CleanConfig,
    },
    /// Seeded pattern panel. Its seed is mixed with the run seed.
    Signal {
        #[serde(default)]
        config: SignalConfig,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub panel: PanelSource,
    /// CSV with one auxiliary series per column.
    #[serde(default)]
    pub auxiliary: Option<PathBuf>,
    pub plan: ExperimentPlan,
    pub models: Vec<ModelSpec>,
    /// Base checkpoint per model name, for zero-shot and fine-tune runs.
    #[serde(default)]
    pub base_checkpoints: BTreeMap<String, PathBuf>,
    #[serde(default = "CostScenario::standard")]
    pub costs: Vec<CostScenario>,
    #[serde(default)]
    pub raw_kurtosis: bool,
}

/// One (model, window) unit of work and the directory it writes to.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Job {
    pub model: String,
    pub key: String,
    pub window: usize,
    pub dir: String,
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '.' { c } else { '-' })
        .collect()
}

impl RunConfig {
    /// Parses the file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path)?;
        let mut cfg: RunConfig = serde_json::from_reader(BufReader::new(f))
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        match &mut self.panel {
            PanelSource::Cache { path } | PanelSource::Csv { path, .. } => fix(path),
            PanelSource::Signal { .. } => {}
        }
        if let Some(p) = &mut self.auxiliary {
            fix(p);
        }
        for p in self.base_checkpoints.values_mut() {
            fix(p);
        }
    }

    /// Checks everything that can be checked without loading data.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} unsupported, expected {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        self.plan.validate()?;
        if self.models.is_empty() {
            return Err(Error::Config("no models configured".into()));
        }
        let mut names = BTreeSet::new();
        for m in &self.models {
            if !names.insert(m.name.as_str()) {
                return Err(Error::Config(format!("model name {} repeated", m.name)));
            }
            for &w in &self.plan.window_sizes {
                m.grid_for(w)?;
                if m.effective_regime(&self.plan, w)? != Regime::Scratch && !self.base_checkpoints.contains_key(&m.name) {
                    return Err(Error::Config(format!(
                        "model {} runs {} but has no base checkpoint",
                        m.name, self.plan.regime
                    )));
                }
            }
        }
        if let Some(k) = self.base_checkpoints.keys().find(|k| !names.contains(k.as_str())) {
            return Err(Error::Config(format!("base checkpoint for unknown model {k}")));
        }
        if self.plan.scope == DataScope::Augmented && self.auxiliary.is_none() {
            return Err(Error::Config("augmented scope needs an auxiliary file".into()));
        }
        if self.costs.is_empty() {
            return Err(Error::Config("no cost scenarios".into()));
        }
        let mut seen = BTreeSet::new();
        for c in &self.costs {
            if let CostScenario::Fixed { bps } = c {
                if !(bps.is_finite() && *bps >= 0.0) {
                    return Err(Error::Config(format!("cost rate {bps} bps must be non-negative")));
                }
            }
            if !seen.insert(c.name()) {
                return Err(Error::Config(format!("cost scenario {} repeated", c.name())));
            }
        }
        self.jobs()?;
        Ok(())
    }

    /// Jobs in configuration order, models outer and windows inner.
    pub fn jobs(&self) -> Result<Vec<Job>> {
        let mut out = Vec::new();
        let mut dirs = BTreeSet::new();
        for m in &self.models {
            for &w in &self.plan.window_sizes {
                let key = m.key(&self.plan, w)?;
                let dir = format!("jobs/{}/w{w}", slug(&key.replace('/', "__")));
                if !dirs.insert(dir.clone()) {
                    return Err(Error::Config(format!("artifact path {dir} used by two jobs")));
                }
                out.push(Job {
                    model: m.name.clone(),
                    key,
                    window: w,
                    dir,
                });
            }
        }
        Ok(out)
    }

    pub fn load_panel(&self) -> Result<ReturnPanel> {
        match &self.panel {
            PanelSource::Cache { path } => read_cache(BufReader::new(File::open(path)?)),
            PanelSource::Csv { path, clean: cc } => {
                let records = read_raw_csv(BufReader::new(File::open(path)?))?;
                Ok(clean(records, cc)?.panel)
            }
            PanelSource::Signal { config } => make_signal_panel(&SignalConfig {
                seed: derive_seed(self.seed, "panel") ^ config.seed,
                ..config.clone()
            }),
        }
    }

    pub fn load_auxiliary(&self) -> Result<Vec<Vec<f64>>> {
        match &self.auxiliary {
            Some(p) => read_auxiliary(File::open(p)?),
            None => Ok(Vec::new()),
        }
    }

    pub fn load_bases(&self) -> Result<BTreeMap<String, ModelCheckpoint>> {
        self.base_checkpoints
            .iter()
            .map(|(k, p)| Ok((k.clone(), ModelCheckpoint::load(p)?)))
            .collect()
    }

    pub fn vintages(&self, panel: &ReturnPanel) -> Result<Vec<Vintage>> {
        build_vintages(&self.plan, panel)
    }
}

/// One series per column; empty cells are skipped.
pub fn read_auxiliary<R: std::io::Read>(r: R) -> Result<Vec<Vec<f64>>> {
    let mut rd = csv::Reader::from_reader(r);
    let n = rd.headers()?.len();
    let mut cols = vec![Vec::new(); n];
    for (k, rec) in rd.records().enumerate() {
        let rec = rec?;
        for (j, cell) in rec.iter().enumerate() {
            let cell = cell.trim();
            if cell.is_empty() {
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Schema {
                row: k + 2,
                column: format!("column {}", j + 1),
                message: format!("cannot parse {cell:?} as a number"),
            })?;
            cols[j].push(v);
        }
    }
    Ok(cols)
}
