//! `key = value` experiment files with `[section]` headers.
//!
//! ```text
//! [experiment]
//! methods = mtal, single, multi-hard
//! seeds = 0, 1, 2
//! epochs = 50
//!
//! [mtal]
//! preset = related
//!
//! [task.0]
//! dims = 1x16x16
//! classes = 4
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::baselines::Method;
use crate::data::{
    generate_tasks, load_dataset, InputDims, SplitMode, SyntheticTaskFamily, TaskRequest, TaskSpec, TaskTransform,
};
use crate::error::{Error, Result};
use crate::network::{ArchSpec, MtalConfig, Sharing};
use crate::sharing::PhiMode;
use crate::similarity::ThresholdConfig;

/// Parsed sections: name -> key -> (value, line number).
#[derive(Clone, Debug, Default)]
pub struct Ini {
    sections: BTreeMap<String, BTreeMap<String, (String, usize)>>,
}

impl Ini {
    pub fn parse(text: &str) -> Result<Self> {
        let mut ini = Ini::default();
        let mut current: Option<String> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim().to_string();
                if ini.sections.contains_key(&name) {
                    return Err(Error::config(name, format!("section repeated at line {}", n + 1)));
                }
                ini.sections.insert(name.clone(), BTreeMap::new());
                current = Some(name);
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::config(format!("line {}", n + 1), format!("expected `key = value`, got `{line}`")));
            };
            let Some(section) = &current else {
                return Err(Error::config(key.trim(), format!("line {} is outside any [section]", n + 1)));
            };
            let keys = ini.sections.get_mut(section).expect("section inserted");
            let key = key.trim().to_string();
            if keys.contains_key(&key) {
                return Err(Error::config(format!("{section}.{key}"), format!("repeated at line {}", n + 1)));
            }
            keys.insert(key, (value.trim().to_string(), n + 1));
        }
        Ok(ini)
    }

    pub fn section_names(&self) -> impl Iterator<Item = &str> {
        self.sections.keys().map(String::as_str)
    }

    fn section(&self, name: &str) -> Section<'_> {
        Section {
            name: name.to_string(),
            keys: self.sections.get(name),
        }
    }
}

struct Section<'a> {
    name: String,
    keys: Option<&'a BTreeMap<String, (String, usize)>>,
}

impl Section<'_> {
    fn field(&self, key: &str) -> String {
        format!("{}.{key}", self.name)
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.keys.and_then(|k| k.get(key)).map(|(v, _)| v.as_str())
    }

    fn parse<V: std::str::FromStr>(&self, key: &str) -> Result<Option<V>>
    where
        V::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| v.parse::<V>().map_err(|e| Error::config(self.field(key), format!("`{v}`: {e}"))))
            .transpose()
    }

    fn list<V: std::str::FromStr>(&self, key: &str) -> Result<Option<Vec<V>>>
    where
        V::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<V>().map_err(|e| Error::config(self.field(key), format!("`{s}`: {e}"))))
                    .collect()
            })
            .transpose()
    }

    fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        if let Some(keys) = self.keys {
            if let Some((k, (_, line))) = keys.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
                return Err(Error::config(self.field(k), format!("unknown key at line {line}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TaskSource {
    Synthetic(TaskRequest),
    Disk(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub deltas: Vec<f64>,
    pub epochs: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            deltas: (1..=9).map(|k| k as f64 / 10.0).collect(),
            epochs: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub out: Option<PathBuf>,
    pub split: SplitMode,
    /// `seed` is replaced by each run's seed.
    pub mtal: MtalConfig,
    pub checkpoint_every: Option<usize>,
    pub sweep: SweepConfig,
    /// `seed` is ignored unless `synthetic_seed` is set; otherwise each run seed generates its own data.
    pub synthetic: SyntheticTaskFamily,
    pub synthetic_seed: Option<u64>,
    /// Ordered by task id.
    pub tasks: Vec<TaskSource>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            methods: vec![Method::Mtal],
            seeds: vec![0],
            epochs: 50,
            out: None,
            split: SplitMode::Stratified,
            mtal: MtalConfig::default(),
            checkpoint_every: None,
            sweep: SweepConfig::default(),
            synthetic: SyntheticTaskFamily::default(),
            synthetic_seed: None,
            tasks: Vec::new(),
        }
    }
}

fn parse_bool(field: String, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::config(field, format!("expected true or false, got `{v}`"))),
    }
}

/// Named threshold settings.
pub fn preset(name: &str) -> Option<Sharing> {
    match name {
        "related" => Some(Sharing::Adaptive(ThresholdConfig::related())),
        "unrelated" => Some(Sharing::Adaptive(ThresholdConfig::unrelated())),
        "disabled" => Some(Sharing::Disabled),
        _ => None,
    }
}

impl ExperimentConfig {
    pub fn from_str(text: &str, base_dir: &Path) -> Result<Self> {
        let ini = Ini::parse(text)?;
        let mut cfg = ExperimentConfig::default();
        for name in ini.section_names() {
            let known = ["experiment", "mtal", "architecture", "synthetic"].contains(&name) || name.starts_with("task.");
            if !known {
                return Err(Error::config(name, "unknown section"));
            }
        }

        let s = ini.section("experiment");
        s.check_keys(&["methods", "method", "seeds", "epochs", "out", "split", "checkpoint_every", "sweep_deltas", "sweep_epochs"])?;
        if let Some(m) = s.list::<Method>("methods")?.or(s.list::<Method>("method")?) {
            cfg.methods = m;
        }
        if let Some(v) = s.list::<u64>("seeds")? {
            cfg.seeds = v;
        }
        if let Some(v) = s.parse("epochs")? {
            cfg.epochs = v;
        }
        if let Some(v) = s.raw("out") {
            cfg.out = Some(base_dir.join(v));
        }
        if let Some(v) = s.raw("split") {
            cfg.split = match v {
                "stratified" => SplitMode::Stratified,
                "unstratified" => SplitMode::Unstratified,
                _ => return Err(Error::config(s.field("split"), format!("expected stratified or unstratified, got `{v}`"))),
            };
        }
        cfg.checkpoint_every = s.parse("checkpoint_every")?;
        if let Some(v) = s.list::<f64>("sweep_deltas")? {
            cfg.sweep.deltas = v;
        }
        if let Some(v) = s.parse("sweep_epochs")? {
            cfg.sweep.epochs = v;
        }

        let s = ini.section("mtal");
        s.check_keys(&["delta", "preset", "eta", "lambda", "phi", "share_every", "batch_size", "early_stop"])?;
        match (s.raw("preset"), s.parse::<f64>("delta")?) {
            (Some(_), Some(_)) => return Err(Error::config(s.field("delta"), "give either delta or preset, not both")),
            (Some(p), None) => {
                cfg.mtal.sharing = preset(p).ok_or_else(|| {
                    Error::config(s.field("preset"), format!("unknown preset `{p}` (related, unrelated, disabled)"))
                })?;
            }
            (None, Some(d)) => {
                cfg.mtal.sharing = Sharing::Adaptive(
                    ThresholdConfig::new(d).map_err(|e| Error::config(s.field("delta"), e.to_string()))?,
                );
            }
            (None, None) => {}
        }
        if let Some(v) = s.parse("eta")? {
            cfg.mtal.eta = v;
        }
        if let Some(v) = s.parse("lambda")? {
            cfg.mtal.lambda = v;
        }
        if let Some(v) = s.raw("phi") {
            cfg.mtal.phi = match v {
                "learnable" => PhiMode::Learnable,
                fixed => PhiMode::Fixed(fixed.parse().map_err(|_| {
                    Error::config(s.field("phi"), format!("expected `learnable` or a number, got `{fixed}`"))
                })?),
            };
        }
        if let Some(v) = s.parse("share_every")? {
            cfg.mtal.share_every = v;
        }
        if let Some(v) = s.parse("batch_size")? {
            cfg.mtal.batch_size = v;
        }
        if let Some(v) = s.raw("early_stop") {
            cfg.mtal.early_stop = parse_bool(s.field("early_stop"), v)?;
        }

        let s = ini.section("architecture");
        s.check_keys(&["kernels", "layers", "kernel_size", "pool_after", "pool_window"])?;
        let mut arch = ArchSpec::default();
        match (s.list::<usize>("kernels")?, s.parse::<usize>("layers")?) {
            (Some(k), Some(l)) if k.len() == 1 => arch.kernels_per_layer = vec![k[0]; l],
            (Some(k), Some(l)) if k.len() != l => {
                return Err(Error::config(s.field("kernels"), format!("{} counts for {l} layers", k.len())))
            }
            (Some(k), _) => arch.kernels_per_layer = k,
            (None, Some(l)) => arch.kernels_per_layer = vec![arch.kernels_per_layer[0]; l],
            (None, None) => {}
        }
        if let Some(v) = s.parse("kernel_size")? {
            arch.kernel_size = v;
        }
        if let Some(v) = s.list("pool_after")? {
            arch.pool_after = v;
        }
        if let Some(v) = s.parse("pool_window")? {
            arch.pool_window = v;
        }
        if let Some(&bad) = arch.pool_after.iter().find(|&&l| l >= arch.layers()) {
            return Err(Error::config(s.field("pool_after"), format!("layer {bad} out of range for {} layers", arch.layers())));
        }
        cfg.mtal.arch = arch;

        let s = ini.section("synthetic");
        s.check_keys(&["seed", "relatedness", "examples", "noise", "max_shift"])?;
        cfg.synthetic_seed = s.parse("seed")?;
        if let Some(v) = s.parse("relatedness")? {
            cfg.synthetic.relatedness = v;
        }
        if let Some(v) = s.parse("examples")? {
            cfg.synthetic.examples = v;
        }
        if let Some(v) = s.parse("noise")? {
            cfg.synthetic.noise = v;
        }
        if let Some(v) = s.parse("max_shift")? {
            cfg.synthetic.max_shift = v;
        }

        let mut tasks: Vec<(usize, TaskSource)> = Vec::new();
        for name in ini.section_names() {
            let Some(id) = name.strip_prefix("task.") else { continue };
            let id: usize = id
                .parse()
                .map_err(|_| Error::config(name, "task sections are named [task.N] with N a task index"))?;
            let s = ini.section(name);
            s.check_keys(&["dims", "classes", "transform", "path"])?;
            let source = match s.raw("path") {
                Some(p) => {
                    if s.raw("dims").is_some() || s.raw("classes").is_some() {
                        return Err(Error::config(s.field("path"), "dims and classes come from the dataset meta"));
                    }
                    TaskSource::Disk(base_dir.join(p))
                }
                None => {
                    let dims_raw = s.raw("dims").ok_or_else(|| Error::config(s.field("dims"), "missing"))?;
                    let dims = InputDims::parse(dims_raw)
                        .ok_or_else(|| Error::config(s.field("dims"), format!("expected CxHxW, got `{dims_raw}`")))?;
                    let classes = s.parse("classes")?.ok_or_else(|| Error::config(s.field("classes"), "missing"))?;
                    let transform = match s.raw("transform") {
                        None => TaskTransform::identity(),
                        Some(t) => TaskTransform::parse(t)
                            .ok_or_else(|| Error::config(s.field("transform"), format!("unknown transform `{t}`")))?,
                    };
                    TaskSource::Synthetic(TaskRequest::new(dims, classes).with_transform(transform))
                }
            };
            tasks.push((id, source));
        }
        tasks.sort_by_key(|t| t.0);
        for (pos, (id, _)) in tasks.iter().enumerate() {
            if *id != pos {
                return Err(Error::config(format!("task.{id}"), format!("task ids must run 0..N without gaps; expected task.{pos}")));
            }
        }
        cfg.tasks = tasks.into_iter().map(|t| t.1).collect();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
        Self::from_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("experiment.seeds", "at least one seed is required"));
        }
        if self.methods.is_empty() {
            return Err(Error::config("experiment.methods", "at least one method is required"));
        }
        if self.tasks.is_empty() {
            return Err(Error::config("task", "at least one [task.N] section is required"));
        }
        for (i, t) in self.tasks.iter().enumerate() {
            if let TaskSource::Disk(p) = t {
                if !p.is_dir() {
                    return Err(Error::config(format!("task.{i}.path"), format!("{} is not a directory", p.display())));
                }
            }
        }
        if !(0.0..=1.0).contains(&self.synthetic.relatedness) {
            return Err(Error::config("synthetic.relatedness", "must lie in [0, 1]"));
        }
        if self.synthetic.noise < 0.0 {
            return Err(Error::config("synthetic.noise", "must be non-negative"));
        }
        for &d in &self.sweep.deltas {
            ThresholdConfig::new(d).map_err(|e| Error::config("experiment.sweep_deltas", e.to_string()))?;
        }
        self.mtal.validate().map_err(|e| match e {
            Error::Config { field, reason } => Error::config(format!("mtal.{field}"), reason),
            other => other,
        })
    }

    /// MtalConfig for one run.
    pub fn mtal_for(&self, seed: u64) -> MtalConfig {
        MtalConfig {
            seed,
            ..self.mtal.clone()
        }
    }

    /// Raw (unsplit, unnormalized) task datasets for one run seed, ids in config order.
    pub fn load_tasks(&self, seed: u64) -> Result<Vec<TaskSpec>> {
        let family = SyntheticTaskFamily {
            seed: self.synthetic_seed.unwrap_or(seed),
            ..self.synthetic.clone()
        };
        let requests: Vec<TaskRequest> = self
            .tasks
            .iter()
            .filter_map(|t| match t {
                TaskSource::Synthetic(r) => Some(r.clone()),
                TaskSource::Disk(_) => None,
            })
            .collect();
        let mut synthetic = if requests.is_empty() {
            Vec::new()
        } else {
            generate_tasks(&family, &requests)?
        }
        .into_iter();
        self.tasks
            .iter()
            .enumerate()
            .map(|(id, t)| {
                let spec = match t {
                    TaskSource::Synthetic(_) => synthetic.next().expect("one dataset per request"),
                    TaskSource::Disk(p) => TaskSpec::new(id, load_dataset(p).map_err(|e| e.in_task(id))?)?,
                };
                Ok(TaskSpec { id, ..spec })
            })
            .collect()
    }
}
