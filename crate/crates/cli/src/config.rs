//! Run configuration: defaults, an optional TOML file, `--set` overrides and
//! dedicated flags, merged in that order.

use crate::CliError;
use satforge::dataset::{DatasetConfig, SizeClass, PAPER_IMAGES};
use satforge::eval::Geometry;
use satforge::models::ArchId;
use satforge::numerics::OptimizerKind;
use satforge::ocsvm::SvmConfig;
use satforge::training::{Stage, TrainConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use toml::{Table, Value};

/// Environment variable naming a config file when `--config` is absent.
pub const CONFIG_ENV: &str = "SATFORGE_CONFIG";
/// Base images at desk scale (10% of the full set).
pub const DESK_IMAGES: usize = 13;
pub const DESK_EPOCHS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub paths: Paths,
    pub dataset: DatasetSection,
    pub patches: PatchSection,
    pub train: TrainSection,
    pub svm: SvmSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub data: PathBuf,
    pub models: PathBuf,
    pub outputs: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub images: usize,
    pub height: usize,
    pub width: usize,
    pub rotate: bool,
    pub feather: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatchSection {
    pub size: usize,
    pub stride: usize,
    /// `mean` or `min`.
    pub aggregation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub arch: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub gen_lr: f64,
    pub disc_lr: f64,
    pub gen_optimizer: String,
    pub disc_optimizer: String,
    pub reconstruction_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvmSection {
    pub gamma: f64,
    pub nu: f64,
    pub tolerance: f64,
    pub max_iterations: u64,
    pub standardize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub size_classes: Vec<String>,
    pub strategies: Vec<String>,
    /// Soft-mask threshold for binary masks; 0 is the SVM boundary.
    pub threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            workers: 0,
            paths: Paths::default(),
            dataset: DatasetSection::default(),
            patches: PatchSection::default(),
            train: TrainSection::default(),
            svm: SvmSection::default(),
            eval: EvalSection::default(),
        }
    }
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            data: "data".into(),
            models: "models".into(),
            outputs: "outputs".into(),
        }
    }
}

impl Default for DatasetSection {
    fn default() -> Self {
        let d = DatasetConfig::default();
        DatasetSection {
            images: PAPER_IMAGES,
            height: d.height,
            width: d.width,
            rotate: d.rotate,
            feather: d.feather,
        }
    }
}

impl Default for PatchSection {
    fn default() -> Self {
        let g = Geometry::default();
        PatchSection {
            size: g.size,
            stride: g.stride,
            aggregation: "mean".into(),
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            arch: t.arch.as_str().into(),
            epochs: t.epochs,
            batch_size: t.batch_size,
            gen_lr: t.gen_lr,
            disc_lr: t.disc_lr,
            gen_optimizer: t.gen_optimizer.name().into(),
            disc_optimizer: t.disc_optimizer.name().into(),
            reconstruction_weight: t.reconstruction_weight,
        }
    }
}

impl Default for SvmSection {
    fn default() -> Self {
        let s = SvmConfig::default();
        SvmSection {
            gamma: s.gamma,
            nu: s.nu,
            tolerance: s.tolerance,
            max_iterations: s.max_iterations,
            standardize: s.standardize,
        }
    }
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            size_classes: SizeClass::ALL
                .iter()
                .map(|c| c.as_str().to_string())
                .collect(),
            strategies: vec!["plain".into(), "gan".into()],
            threshold: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Scale {
    /// Full dataset size, 100 epochs.
    Paper,
    /// 13 base images and 20 epochs per stage.
    Desk,
}

/// Where the effective values came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Provenance {
    pub file: Option<PathBuf>,
    pub scale: Option<Scale>,
    pub overrides: Vec<String>,
}

/// Everything that can change the defaults.
#[derive(Debug, Clone, Default)]
pub struct Sources {
    pub file: Option<PathBuf>,
    pub scale: Option<Scale>,
    /// `key=value` pairs from `--set`.
    pub sets: Vec<String>,
    /// Dotted keys and values from dedicated flags; applied last.
    pub flags: Vec<(String, Value)>,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn merge(base: &mut Table, over: Table, prefix: &str) -> Result<(), CliError> {
    for (k, v) in over {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o, &key)?,
            (Some(_), Value::Table(_)) | (Some(Value::Table(_)), _) => {
                return Err(usage(format!("config key {key} has the wrong shape")))
            }
            (Some(slot), v) => *slot = v,
            (None, _) => return Err(usage(format!("unknown config key {key}"))),
        }
    }
    Ok(())
}

fn set_path(root: &mut Table, key: &str, value: Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut table = root;
    for p in parents {
        table = match table.get_mut(*p) {
            Some(Value::Table(t)) => t,
            _ => return Err(usage(format!("unknown config key {key}"))),
        };
    }
    match table.get_mut(*last) {
        Some(Value::Table(_)) => Err(usage(format!("config key {key} is a section"))),
        Some(slot) => {
            *slot = coerce(slot, value);
            Ok(())
        }
        None => Err(usage(format!("unknown config key {key}"))),
    }
}

/// Integers given where a float is expected stay valid.
fn coerce(slot: &Value, value: Value) -> Value {
    match (slot, value) {
        (Value::Float(_), Value::Integer(i)) => Value::Float(i as f64),
        (_, v) => v,
    }
}

/// Parse the right-hand side of `--set k=v` as a TOML value, falling back
/// to a bare string.
fn parse_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn scale_preset(scale: Scale) -> Vec<(&'static str, Value)> {
    match scale {
        Scale::Paper => vec![],
        Scale::Desk => vec![
            ("dataset.images", Value::Integer(DESK_IMAGES as i64)),
            ("train.epochs", Value::Integer(DESK_EPOCHS as i64)),
        ],
    }
}

/// Merge defaults, scale preset, file, `--set` overrides and flags.
pub fn load(sources: &Sources) -> Result<(RunConfig, Provenance), CliError> {
    let mut table = match Value::try_from(RunConfig::default()) {
        Ok(Value::Table(t)) => t,
        _ => unreachable!("config serializes to a table"),
    };
    let mut prov = Provenance {
        file: sources.file.clone(),
        scale: sources.scale,
        overrides: Vec::new(),
    };
    if let Some(scale) = sources.scale {
        for (k, v) in scale_preset(scale) {
            set_path(&mut table, k, v)?;
        }
    }
    if let Some(path) = &sources.file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        let file: Table = text
            .parse()
            .map_err(|e| usage(format!("config {}: {e}", path.display())))?;
        merge(&mut table, file, "")?;
    }
    for s in &sources.sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects key=value, got {s:?}")))?;
        set_path(&mut table, k.trim(), parse_value(v.trim()))?;
        prov.overrides.push(format!("{}={}", k.trim(), v.trim()));
    }
    for (k, v) in &sources.flags {
        set_path(&mut table, k, v.clone())?;
        prov.overrides.push(format!("{k}={v}"));
    }
    let cfg: RunConfig = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| usage(e.to_string()))?;
    cfg.validate()?;
    Ok((cfg, prov))
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.arch()?;
        self.aggregation()?;
        self.size_classes()?;
        self.strategies()?;
        self.train_config(Stage::Plain)?;
        self.svm_config()?;
        if self.patches.size == 0 || self.patches.stride == 0 {
            return Err(usage("patch size and stride must be positive"));
        }
        Ok(())
    }

    pub fn arch(&self) -> Result<ArchId, CliError> {
        let a = ArchId::from_str(&self.train.arch).map_err(|e| usage(e.to_string()))?;
        if !a.is_autoencoder() {
            return Err(usage(format!(
                "train.arch must be an autoencoder, got {}",
                self.train.arch
            )));
        }
        Ok(a)
    }

    pub fn aggregation(&self) -> Result<satforge::pipeline::Aggregation, CliError> {
        self.patches
            .aggregation
            .parse()
            .map_err(|e: satforge::Error| usage(e.to_string()))
    }

    pub fn size_classes(&self) -> Result<Vec<SizeClass>, CliError> {
        if self.eval.size_classes.is_empty() {
            return Err(usage("eval.size_classes is empty"));
        }
        self.eval
            .size_classes
            .iter()
            .map(|s| s.parse().map_err(|e: satforge::Error| usage(e.to_string())))
            .collect()
    }

    pub fn strategies(&self) -> Result<Vec<Stage>, CliError> {
        if self.eval.strategies.is_empty() {
            return Err(usage("eval.strategies is empty"));
        }
        self.eval
            .strategies
            .iter()
            .map(|s| s.parse().map_err(|e: satforge::Error| usage(e.to_string())))
            .collect()
    }

    pub fn geometry(&self) -> Result<Geometry, CliError> {
        Ok(Geometry {
            size: self.patches.size,
            stride: self.patches.stride,
            aggregation: self.aggregation()?,
        })
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            images: self.dataset.images,
            height: self.dataset.height,
            width: self.dataset.width,
            patch_size: self.patches.size,
            stride: self.patches.stride,
            seed: self.seed,
            rotate: self.dataset.rotate,
            feather: self.dataset.feather,
        }
    }

    pub fn train_config(&self, stage: Stage) -> Result<TrainConfig, CliError> {
        let opt = |name: &str| match name {
            "adam" => Ok(OptimizerKind::adam()),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(usage(format!("unknown optimizer {other:?}"))),
        };
        let t = TrainConfig {
            arch: self.arch()?,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            gen_lr: self.train.gen_lr,
            disc_lr: self.train.disc_lr,
            gen_optimizer: opt(&self.train.gen_optimizer)?,
            disc_optimizer: opt(&self.train.disc_optimizer)?,
            reconstruction_weight: self.train.reconstruction_weight,
            seed: self.seed,
            checkpoint_dir: Some(self.checkpoint_dir(stage)),
        };
        t.validate().map_err(|e| usage(e.to_string()))?;
        Ok(t)
    }

    pub fn svm_config(&self) -> Result<SvmConfig, CliError> {
        let s = SvmConfig {
            gamma: self.svm.gamma,
            nu: self.svm.nu,
            tolerance: self.svm.tolerance,
            max_iterations: self.svm.max_iterations,
            standardize: self.svm.standardize,
        };
        s.validate().map_err(|e| usage(e.to_string()))?;
        Ok(s)
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.paths.models.join(stage.as_str())
    }

    pub fn checkpoint_dir(&self, stage: Stage) -> PathBuf {
        self.stage_dir(stage).join("checkpoints")
    }

    pub fn best_weights(&self, stage: Stage) -> PathBuf {
        self.stage_dir(stage).join("best.weights")
    }

    pub fn svm_path(&self, stage: Stage) -> PathBuf {
        self.stage_dir(stage).join("svm.bin")
    }

    /// TOML text with a provenance header.
    pub fn to_effective(&self, prov: &Provenance) -> String {
        let mut out = String::from("# effective configuration\n");
        match &prov.file {
            Some(p) => out.push_str(&format!("# file: {}\n", p.display())),
            None => out.push_str("# file: none\n"),
        }
        if let Some(s) = prov.scale {
            out.push_str(&format!("# scale: {s:?}\n").to_lowercase());
        }
        for o in &prov.overrides {
            out.push_str(&format!("# override: {o}\n"));
        }
        out.push('\n');
        out.push_str(&toml::to_string(self).expect("config serializes"));
        out
    }

    /// Write `<verb>.config.toml` into `dir`.
    pub fn write_effective(
        &self,
        prov: &Provenance,
        dir: &Path,
        verb: &str,
    ) -> Result<PathBuf, CliError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
        let p = dir.join(format!("{verb}.config.toml"));
        std::fs::write(&p, self.to_effective(prov))
            .map_err(|e| CliError::data(format!("{}: {e}", p.display())))?;
        Ok(p)
    }
}
