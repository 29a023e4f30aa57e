//! The run configuration: one TOML file with `data`, `synth`, `model`,
//! `train`, `explain`, `plot` and `io` sections, plus `key=value` overrides.

use std::path::{Path, PathBuf};

use nearmiss_core::clipstore::{JitterConfig, Label, SegmentationPolicy, DEFAULT_FPS};
use nearmiss_core::slowfast::{LayerId, PathwayConfig};
use nearmiss_core::synthgen::CorpusOptions;
use nearmiss_core::trainer::{OptimConfig, ScheduleConfig};
use serde::{Deserialize, Serialize};

/// Environment variable that overrides `io.output_dir`.
pub const OUTPUT_DIR_ENV: &str = "NEARMISS_OUTPUT_DIR";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Read { path: PathBuf, message: String },

    #[error("override {0:?}: expected key=value with a dotted key")]
    Override(String),

    #[error("unknown keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),

    #[error("{}", .0.join("; "))]
    Invalid(Vec<String>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Clip manifest; empty means the corpus written by `synth`.
    pub manifest: String,
    pub policy: SegmentationPolicy,
    /// Train, validation and test weights.
    pub ratio: [f64; 3],
    pub seed: u64,
    /// Frame rate for manifest rows whose fps field is `-`.
    pub fps: f64,
    pub jitter: JitterConfig,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            manifest: String::new(),
            policy: SegmentationPolicy::default(),
            ratio: [6.0, 2.0, 2.0],
            seed: 0,
            fps: DEFAULT_FPS,
            jitter: JitterConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n: usize,
    pub balance: f64,
    pub master_seed: u64,
    /// `[height, width]`.
    pub resolution: [usize; 2],
    pub fps: f64,
    pub duration_s: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let c = CorpusOptions::default();
        Self {
            n: c.n,
            balance: c.balance,
            master_seed: c.master_seed,
            resolution: [c.resolution.0, c.resolution.1],
            fps: c.fps,
            duration_s: c.duration_s,
        }
    }
}

impl SynthSection {
    pub fn corpus_options(&self) -> CorpusOptions {
        CorpusOptions {
            n: self.n,
            balance: self.balance,
            master_seed: self.master_seed,
            resolution: (self.resolution[0], self.resolution[1]),
            fps: self.fps,
            duration_s: self.duration_s,
        }
    }
}

/// Schedule and optimizer settings in one table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr_min: f64,
    pub lr_max: f64,
    pub warmup_start: f64,
    pub warmup_epochs: usize,
    pub t_max: usize,
    pub per_iteration: bool,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Seed of the sampling order, temporal offsets and jitter.
    pub seed: u64,
    /// Seed of the weight initialization and dropout.
    pub init_seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let s = ScheduleConfig::default();
        let o = OptimConfig::default();
        Self {
            lr_min: s.lr_min,
            lr_max: s.lr_max,
            warmup_start: s.warmup_start,
            warmup_epochs: s.warmup_epochs,
            t_max: s.t_max,
            per_iteration: s.per_iteration,
            momentum: o.momentum,
            weight_decay: o.weight_decay,
            batch_size: o.batch_size,
            max_epochs: o.max_epochs,
            seed: 0,
            init_seed: 0,
        }
    }
}

impl TrainSection {
    pub fn schedule(&self) -> ScheduleConfig {
        ScheduleConfig {
            lr_min: self.lr_min,
            lr_max: self.lr_max,
            warmup_start: self.warmup_start,
            warmup_epochs: self.warmup_epochs,
            t_max: self.t_max,
            per_iteration: self.per_iteration,
        }
    }

    pub fn optim(&self) -> OptimConfig {
        OptimConfig {
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainSection {
    /// Layers to explain, e.g. `"fast.res5"`.
    pub layers: Vec<String>,
    pub target: Label,
    /// Fraction of cells in the top region for the IoU.
    pub threshold: f64,
    pub opacity: f64,
    /// Number of test segments to explain (in split order).
    pub clips: usize,
    /// Fast-frame positions (within the sampled clip) to render as overlays.
    pub frames: Vec<usize>,
    /// Directory of gaze maps named `<clip_id>.png` or `<clip_id>.txt`;
    /// empty means a centred synthetic gaze map.
    pub saliency_dir: String,
}

impl Default for ExplainSection {
    fn default() -> Self {
        Self {
            layers: vec!["slow.res5".into(), "fast.res5".into()],
            target: Label::NearMiss,
            threshold: 0.2,
            opacity: 0.5,
            clips: 8,
            frames: vec![0, 4, 7],
            saliency_dir: String::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotSection {
    /// Centred moving-average window for the per-iteration curves (odd).
    pub window: usize,
    pub width: u32,
    pub height: u32,
}

impl Default for PlotSection {
    fn default() -> Self {
        Self {
            window: 25,
            width: 800,
            height: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoSection {
    pub output_dir: PathBuf,
}

impl Default for IoSection {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub synth: SynthSection,
    pub model: PathwayConfig,
    pub train: TrainSection,
    pub explain: ExplainSection,
    pub plot: PlotSection,
    pub io: IoSection,
}

impl RunConfig {
    /// Every invariant violation across all sections.
    pub fn problems(&self) -> Vec<String> {
        fn tag(section: &str, v: Vec<String>) -> Vec<String> {
            v.into_iter().map(|m| format!("{section}: {m}")).collect()
        }
        let mut p = Vec::new();
        p.extend(tag("data.policy", self.data.policy.problems()));
        p.extend(tag("data.jitter", self.data.jitter.problems()));
        let r = self.data.ratio;
        if r.iter().any(|v| !(*v >= 0.0 && v.is_finite())) || r.iter().sum::<f64>() <= 0.0 {
            p.push(format!("data.ratio {r:?} must be non-negative with a positive sum"));
        }
        if !(self.data.fps > 0.0 && self.data.fps.is_finite()) {
            p.push(format!("data.fps {} must be positive", self.data.fps));
        }
        p.extend(tag("synth", self.synth.corpus_options().problems()));
        p.extend(tag("model", self.model.problems()));
        p.extend(self.train.schedule().problems());
        p.extend(self.train.optim().problems());
        if self.train.max_epochs > self.train.t_max + 1 {
            p.push(format!(
                "train.max_epochs {} runs past train.t_max {}",
                self.train.max_epochs, self.train.t_max
            ));
        }
        if self.explain.layers.is_empty() {
            p.push("explain.layers must name at least one layer".into());
        }
        for l in &self.explain.layers {
            if let Err(e) = l.parse::<LayerId>() {
                p.push(format!("explain.layers: {e}"));
            }
        }
        if !(self.explain.threshold > 0.0 && self.explain.threshold <= 1.0) {
            p.push(format!("explain.threshold {} must lie in (0, 1]", self.explain.threshold));
        }
        if !(0.0..=1.0).contains(&self.explain.opacity) {
            p.push(format!("explain.opacity {} must lie in [0, 1]", self.explain.opacity));
        }
        let fast = self.model.fast_frames();
        if let Some(f) = self.explain.frames.iter().find(|&&f| f >= fast) {
            p.push(format!("explain.frames: frame {f} beyond the {fast} fast frames"));
        }
        if self.plot.window == 0 || self.plot.window % 2 == 0 {
            p.push(format!("plot.window {} must be odd and positive", self.plot.window));
        }
        if self.plot.width < 64 || self.plot.height < 64 {
            p.push("plot.width and plot.height must be at least 64".into());
        }
        p
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn output_dir(&self) -> &Path {
        &self.io.output_dir
    }

    /// The manifest named in `data.manifest`, or the one written by `synth`.
    pub fn manifest_path(&self) -> PathBuf {
        if self.data.manifest.is_empty() {
            self.output_dir().join("corpus").join("manifest.tsv")
        } else {
            PathBuf::from(&self.data.manifest)
        }
    }

    pub fn explain_layers(&self) -> Vec<LayerId> {
        self.explain.layers.iter().filter_map(|l| l.parse().ok()).collect()
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let raw = raw.trim();
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_override(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), ConfigError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Override(key.to_string()));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(ConfigError::Override(key.to_string())),
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn unknown_keys(user: &toml::Table, known: &toml::Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in user {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (known.get(k), v) {
            (None, _) => out.push(path),
            (Some(toml::Value::Table(kt)), toml::Value::Table(ut)) => unknown_keys(ut, kt, &path, out),
            _ => {}
        }
    }
}

/// Overlay `user` onto `base`; tables merge key by key, anything else replaces.
fn merge(base: &mut toml::Table, user: toml::Table) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => merge(b, u),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Build the effective configuration from an optional file, the output
/// directory environment override and `key=value` overrides (applied in
/// that order), then validate it as a whole.
pub fn load_config(
    path: Option<&Path>,
    overrides: &[String],
    env_output_dir: Option<&str>,
) -> Result<RunConfig, ConfigError> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| ConfigError::Read {
                path: p.to_path_buf(),
                message: e.to_string(),
            })?;
            toml::from_str::<toml::Table>(&text).map_err(|e| ConfigError::Read {
                path: p.to_path_buf(),
                message: e.message().to_string(),
            })?
        }
        None => toml::Table::new(),
    };
    if let Some(dir) = env_output_dir.filter(|d| !d.is_empty()) {
        apply_override(&mut table, "io.output_dir", toml::Value::String(dir.to_string()))?;
    }
    for o in overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| ConfigError::Override(o.clone()))?;
        apply_override(&mut table, k.trim(), parse_value(v))?;
    }

    let known = toml::Table::try_from(RunConfig::default()).expect("defaults serialize");
    let mut unknown = Vec::new();
    unknown_keys(&table, &known, "", &mut unknown);
    if !unknown.is_empty() {
        return Err(ConfigError::UnknownKeys(unknown));
    }
    let mut merged = known;
    merge(&mut merged, table);
    let cfg: RunConfig = toml::Value::Table(merged)
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Invalid(vec![e.message().to_string()]))?;
    let problems = cfg.problems();
    if problems.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError::Invalid(problems))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nearmiss_core::slowfast::Depth;

    #[test]
    fn empty_input_gives_defaults() {
        let cfg = load_config(None, &[], None).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.model.alpha, 4);
        assert_eq!(cfg.model.beta_inv, 8);
        assert_eq!(cfg.train.t_max, 196);
    }

    #[test]
    fn echo_round_trips() {
        let cfg = load_config(
            None,
            &["train.t_max=10".into(), "train.warmup_epochs=3".into(), "train.max_epochs=8".into()],
            None,
        )
        .unwrap();
        let text = cfg.to_toml();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, &text).unwrap();
        assert_eq!(load_config(Some(&p), &[], None).unwrap(), cfg);
        assert!(text.contains("t_max = 10"));
    }

    #[test]
    fn overrides_parse_typed_values() {
        let cfg = load_config(
            None,
            &[
                "model.backbone_depth=18".into(),
                "explain.layers=[\"fast.res3\"]".into(),
                "io.output_dir=out/x".into(),
                "data.jitter.crop=200".into(),
            ],
            Some("ignored/by/override"),
        )
        .unwrap();
        assert_eq!(cfg.model.backbone_depth, Depth::R18);
        assert_eq!(cfg.explain.layers, vec!["fast.res3".to_string()]);
        assert_eq!(cfg.io.output_dir, PathBuf::from("out/x"));
        assert_eq!(cfg.data.jitter.crop, 200);
    }

    #[test]
    fn environment_sets_the_output_dir() {
        let cfg = load_config(None, &[], Some("env/dir")).unwrap();
        assert_eq!(cfg.io.output_dir, PathBuf::from("env/dir"));
    }

    #[test]
    fn unknown_keys_are_all_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "[modle]\nalpha = 4\n[train]\nlr = 0.1\nt_max = 50\n").unwrap();
        match load_config(Some(&p), &[], None).unwrap_err() {
            ConfigError::UnknownKeys(k) => assert_eq!(k, vec!["modle".to_string(), "train.lr".to_string()]),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn all_problems_are_listed_at_once() {
        let err = load_config(
            None,
            &["model.alpha=0".into(), "explain.opacity=2.0".into(), "plot.window=4".into()],
            None,
        )
        .unwrap_err();
        match err {
            ConfigError::Invalid(p) => {
                assert!(p.iter().any(|m| m.contains("alpha")), "{p:?}");
                assert!(p.iter().any(|m| m.contains("opacity")));
                assert!(p.iter().any(|m| m.contains("plot.window")));
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn malformed_overrides_are_rejected() {
        assert!(matches!(load_config(None, &["t_max".into()], None), Err(ConfigError::Override(_))));
        assert!(matches!(load_config(None, &["train..x=1".into()], None), Err(ConfigError::Override(_))));
        assert!(load_config(None, &["train.t_max=\"ten\"".into()], None).is_err());
    }
}
