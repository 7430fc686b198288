//! Experiment configuration: a JSON document whose fields can each be
//! overridden from the command line by their dotted path.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tsrc_core::sar::{NoiseModel, POLARIZATIONS};
use tsrc_core::{Protocol, SparsityMode};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// Every target is its own class.
    SeparateTarget,
    /// Only target versus confuser matters.
    AllTarget,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::SeparateTarget => "separate-target",
            Scenario::AllTarget => "all-target",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DictKind {
    Raw,
    Learned,
}

/// One classification method: sparsity mode, non-negativity and dictionary
/// kind. Written as `MODE[+nonneg][+learned]`, e.g. `SM+nonneg+learned`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct MethodSpec {
    pub mode: SparsityMode,
    pub nonneg: bool,
    pub dictionary: DictKind,
}

impl MethodSpec {
    pub fn new(mode: SparsityMode, nonneg: bool, dictionary: DictKind) -> Self {
        MethodSpec {
            mode,
            nonneg,
            dictionary,
        }
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.mode)?;
        if self.nonneg {
            f.write_str("+nonneg")?;
        }
        if self.dictionary == DictKind::Learned {
            f.write_str("+learned")?;
        }
        Ok(())
    }
}

impl FromStr for MethodSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let mut parts = s.split('+');
        let mode: SparsityMode = parts
            .next()
            .unwrap_or_default()
            .trim()
            .parse()
            .map_err(|e| format!("method {s:?}: {e}"))?;
        let mut m = MethodSpec::new(mode, false, DictKind::Raw);
        for tag in parts {
            match tag.trim().to_ascii_lowercase().as_str() {
                "nonneg" => m.nonneg = true,
                "learned" => m.dictionary = DictKind::Learned,
                "raw" | "plain" => {}
                other => return Err(format!("method {s:?}: unknown tag {other:?} (nonneg, learned)")),
            }
        }
        Ok(m)
    }
}

impl TryFrom<String> for MethodSpec {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<MethodSpec> for String {
    fn from(m: MethodSpec) -> String {
        m.to_string()
    }
}

/// Polarization names of a channel combination such as `HH+HV`; `ALL`
/// stands for every channel.
pub fn combo_channels(combo: &str) -> Result<Vec<String>, String> {
    if combo.trim().eq_ignore_ascii_case("all") {
        return Ok(POLARIZATIONS.iter().map(|s| s.to_string()).collect());
    }
    let names: Vec<String> = combo.split('+').map(|s| s.trim().to_ascii_uppercase()).collect();
    for n in &names {
        if !POLARIZATIONS.contains(&n.as_str()) {
            return Err(format!("combo {combo:?}: unknown polarization {n:?} (VV, HH, HV)"));
        }
    }
    let mut sorted = names.clone();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != names.len() {
        return Err(format!("combo {combo:?} repeats a polarization"));
    }
    Ok(names)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            max_iters: 500,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecisionSettings {
    /// Ground threshold on the ground-removed signal norm.
    pub eps: f64,
    /// Unseen-object threshold on the smallest class residual; `null`
    /// disables it unless calibrated.
    pub tau: Option<f64>,
    pub shared_dominant: bool,
    /// When set, τ becomes this quantile of the held-out minimum residuals
    /// seen during cross-validation.
    pub calibrate_tau_quantile: Option<f64>,
}

impl Default for DecisionSettings {
    fn default() -> Self {
        DecisionSettings {
            eps: 0.0,
            tau: None,
            shared_dominant: false,
            calibrate_tau_quantile: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DictLearnSettings {
    pub atoms_per_class: usize,
    /// Sparsity weight while learning; `null` reuses the selected λ.
    pub lambda: Option<f64>,
    pub discriminant_weight: f64,
    pub outer_iters: usize,
    pub inner_max_iters: usize,
    pub inner_tol: f64,
    pub learn_ground: bool,
}

impl Default for DictLearnSettings {
    fn default() -> Self {
        DictLearnSettings {
            atoms_per_class: 12,
            lambda: None,
            discriminant_weight: 0.0,
            outer_iters: 5,
            inner_max_iters: 300,
            inner_tol: 1e-6,
            learn_ground: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Benchmark,
    Multilook,
}

/// Parameters of `gen-data`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSettings {
    pub kind: DatasetKind,
    pub rows: usize,
    pub cols: usize,
    /// Metres per pixel.
    pub pixel_spacing: f64,
    pub integration_angle_deg: f64,
    pub noise_levels: Vec<f64>,
    /// Ground scale of the training renders (a smooth burial surface);
    /// `null` renders them clean.
    pub train_noise_level: Option<f64>,
    /// Angular step of the training renders; multi-look views are always
    /// spaced at half the integration angle.
    pub train_step_deg: f64,
    pub test_per_class: usize,
    pub ground_samples: usize,
    pub noise: NoiseModel,
    pub views: usize,
    pub aspect_jitter_deg: f64,
}

impl Default for GeneratorSettings {
    fn default() -> Self {
        GeneratorSettings {
            kind: DatasetKind::Benchmark,
            rows: 64,
            cols: 32,
            pixel_spacing: 0.04,
            integration_angle_deg: 30.0,
            noise_levels: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            train_noise_level: None,
            train_step_deg: 30.0,
            test_per_class: 20,
            ground_samples: 24,
            noise: crate::benchmark::default_noise(),
            views: 24,
            aspect_jitter_deg: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub output: PathBuf,
    pub methods: Vec<MethodSpec>,
    pub channel_combos: Vec<String>,
    /// Noise levels to evaluate; empty means every level in the dataset.
    pub noise_levels: Vec<f64>,
    pub scenario: Scenario,
    pub protocol: Protocol,
    pub cv_folds: usize,
    pub trials: usize,
    pub seed: u64,
    pub lambda_grid: Vec<f64>,
    /// Training samples drawn per class in each trial; `null` keeps all.
    pub train_per_class: Option<usize>,
    /// Ground atoms drawn in each trial; `null` keeps all.
    pub ground_atoms: Option<usize>,
    /// Drop one confuser type from training in each trial (cycling), so it
    /// is unseen at test time.
    pub leave_one_confuser_out: bool,
    pub solver: SolverSettings,
    pub decision: DecisionSettings,
    pub dict_learn: DictLearnSettings,
    pub generator: GeneratorSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: PathBuf::from("data"),
            output: PathBuf::from("results.csv"),
            methods: vec![
                MethodSpec::new(SparsityMode::Cr, true, DictKind::Raw),
                MethodSpec::new(SparsityMode::Cc, true, DictKind::Raw),
                MethodSpec::new(SparsityMode::Sm, true, DictKind::Raw),
                MethodSpec::new(SparsityMode::Gt, true, DictKind::Raw),
            ],
            channel_combos: ["VV", "HH", "VV+HH", "HH+HV", "ALL"].map(String::from).to_vec(),
            noise_levels: Vec::new(),
            scenario: Scenario::SeparateTarget,
            protocol: Protocol::OneLook,
            cv_folds: 5,
            trials: 10,
            seed: 0,
            lambda_grid: vec![0.003, 0.01, 0.03, 0.1],
            train_per_class: None,
            ground_atoms: None,
            leave_one_confuser_out: true,
            solver: SolverSettings::default(),
            decision: DecisionSettings::default(),
            dict_learn: DictLearnSettings::default(),
            generator: GeneratorSettings::default(),
        }
    }
}

fn field_err(field: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    /// Parses a JSON document; syntax and type errors carry line and column.
    pub fn from_json_str(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| field_err("<document>", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| field_err("<file>", format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    /// Applies `path = value` overrides; a value that is not valid JSON is
    /// taken as a string.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let mut doc = serde_json::to_value(self).map_err(|e| field_err("<document>", e.to_string()))?;
        for (path, raw) in overrides {
            let value = serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.clone()));
            set_path(&mut doc, path, value)?;
            // surface type errors against the field that caused them
            serde_json::from_value::<ExperimentConfig>(doc.clone())
                .map_err(|e| field_err(path, e.to_string()))?;
        }
        serde_json::from_value(doc).map_err(|e| field_err("<document>", e.to_string()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.trials == 0 {
            return Err(field_err("trials", "must be at least 1"));
        }
        if self.cv_folds < 2 {
            return Err(field_err("cv_folds", "must be at least 2"));
        }
        if self.methods.is_empty() {
            return Err(field_err("methods", "at least one method is required"));
        }
        if self.channel_combos.is_empty() {
            return Err(field_err("channel_combos", "at least one combination is required"));
        }
        for (i, c) in self.channel_combos.iter().enumerate() {
            combo_channels(c).map_err(|e| field_err(&format!("channel_combos.{i}"), e))?;
        }
        if self.lambda_grid.is_empty() {
            return Err(field_err("lambda_grid", "must not be empty"));
        }
        if let Some((i, l)) = self.lambda_grid.iter().enumerate().find(|(_, l)| !(**l > 0.0 && l.is_finite())) {
            return Err(field_err(&format!("lambda_grid.{i}"), format!("must be positive, got {l}")));
        }
        if let Some((i, l)) = self.noise_levels.iter().enumerate().find(|(_, l)| !(**l > 0.0)) {
            return Err(field_err(&format!("noise_levels.{i}"), format!("must be positive, got {l}")));
        }
        if self.train_per_class == Some(0) {
            return Err(field_err("train_per_class", "must be at least 1"));
        }
        if self.ground_atoms == Some(0) {
            return Err(field_err("ground_atoms", "must be at least 1"));
        }
        if self.solver.max_iters == 0 || !(self.solver.tol > 0.0) {
            return Err(field_err("solver", "max_iters and tol must be positive"));
        }
        if let Some(q) = self.decision.calibrate_tau_quantile {
            if !(0.0..=1.0).contains(&q) {
                return Err(field_err("decision.calibrate_tau_quantile", "must lie in [0, 1]"));
            }
        }
        if self.dict_learn.atoms_per_class == 0 {
            return Err(field_err("dict_learn.atoms_per_class", "must be at least 1"));
        }
        if self.dict_learn.outer_iters == 0 {
            return Err(field_err("dict_learn.outer_iters", "must be at least 1"));
        }
        let g = &self.generator;
        if g.rows == 0 || g.cols == 0 || !(g.pixel_spacing > 0.0) {
            return Err(field_err("generator", "image size and pixel spacing must be positive"));
        }
        if !(g.train_step_deg > 0.0) {
            return Err(field_err("generator.train_step_deg", "must be positive"));
        }
        Ok(())
    }
}

fn set_path(doc: &mut Value, path: &str, value: Value) -> Result<(), CliError> {
    let mut cur = doc;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        let here = segments[..=i].join(".");
        cur = match cur {
            Value::Object(map) => {
                if !map.contains_key(*seg) {
                    return Err(field_err(&here, "no such field"));
                }
                let slot = map.get_mut(*seg).expect("checked above");
                if last {
                    *slot = value;
                    return Ok(());
                }
                // optional sections that are null become objects on demand
                if slot.is_null() {
                    *slot = Value::Object(Default::default());
                }
                slot
            }
            Value::Array(items) => {
                let idx: usize = seg
                    .parse()
                    .map_err(|_| field_err(&here, "expected an array index"))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| field_err(&here, format!("index out of range (length {len})")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(field_err(&here, "is not a section")),
        };
    }
    Err(field_err(path, "empty path"))
}

/// Splits `--a.b value` / `--a.b=value` pairs.
pub fn parse_override_args(args: &[String]) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let key = a
            .strip_prefix("--")
            .ok_or_else(|| field_err(a, "expected --<dotted.field> <value>"))?;
        if let Some((k, v)) = key.split_once('=') {
            out.push((k.to_string(), v.to_string()));
        } else {
            let v = it
                .next()
                .ok_or_else(|| field_err(key, "missing value"))?;
            out.push((key.to_string(), v.clone()));
        }
    }
    Ok(out)
}
