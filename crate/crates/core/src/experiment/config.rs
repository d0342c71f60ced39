use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{BIN_COUNT, MAX_MAGNITUDE, MIN_MAGNITUDE};
use crate::error::{Error, Result};
use crate::layers::{BlockKind, NetworkSpec, BN_EPS, BN_MOMENTUM};
use crate::optim::{ClipMode, ClipSpec, ScheduleSpec, SgdConfig};

/// How the network is kept trainable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Original residual blocks with batch normalization.
    BatchNorm,
    /// Modified blocks: weight-normalized convolutions, dropout and gradient clipping.
    WeightnormClipDropout,
    /// Plain convolutions with no normalization at all.
    Unnormalized,
}

impl Regime {
    pub fn block_kind(self) -> BlockKind {
        match self {
            Regime::BatchNorm => BlockKind::OriginalBn,
            Regime::WeightnormClipDropout => BlockKind::ModifiedWeightnorm,
            Regime::Unnormalized => BlockKind::Plain,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::BatchNorm => "batch_norm",
            Regime::WeightnormClipDropout => "weightnorm_clip_dropout",
            Regime::Unnormalized => "unnormalized",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    Idx,
    Cifar,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    #[serde(default = "d_classes")]
    pub classes: usize,
    #[serde(default = "d_samples")]
    pub samples: usize,
    #[serde(default = "d_channels")]
    pub channels: usize,
    #[serde(default = "d_side")]
    pub height: usize,
    #[serde(default = "d_side")]
    pub width: usize,
    #[serde(default = "d_noise")]
    pub noise: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            classes: d_classes(),
            samples: d_samples(),
            channels: d_channels(),
            height: d_side(),
            width: d_side(),
            noise: d_noise(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default = "d_source")]
    pub source: DataSource,
    /// IDX image file.
    pub images: Option<PathBuf>,
    /// IDX label file.
    pub labels: Option<PathBuf>,
    /// CIFAR-10 binary batch files.
    #[serde(default)]
    pub files: Vec<PathBuf>,
    /// Keep only the first `limit` samples.
    pub limit: Option<usize>,
    /// Seeds dataset generation and the train/validation split.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_val")]
    pub validation_fraction: f64,
    #[serde(default = "d_augment")]
    pub augment: String,
    #[serde(default)]
    pub synthetic: SyntheticConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: d_source(),
            images: None,
            labels: None,
            files: Vec::new(),
            limit: None,
            seed: 0,
            validation_fraction: d_val(),
            augment: d_augment(),
            synthetic: SyntheticConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    #[serde(default = "d_widths")]
    pub widths: Vec<usize>,
    #[serde(default = "d_blocks")]
    pub blocks: Vec<usize>,
    /// Defaults to the regime's block kind.
    pub block_kind: Option<BlockKind>,
    /// Defaults to 0.1 for the weight-norm regime, 0 otherwise.
    pub dropout: Option<f64>,
    #[serde(default = "d_bn_eps")]
    pub bn_eps: f64,
    #[serde(default = "d_bn_momentum")]
    pub bn_momentum: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            widths: d_widths(),
            blocks: d_blocks(),
            block_kind: None,
            dropout: None,
            bn_eps: d_bn_eps(),
            bn_momentum: d_bn_momentum(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    MonotonicDecrease,
    StepDecrease,
    CyclicTriangular,
    WarmupThenDecay,
}

/// Learning-rate schedule; lengths are in epochs and `total` defaults to the run length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub base_lr: Option<f64>,
    pub hold: Option<f64>,
    pub min_lr: Option<f64>,
    pub max_lr: Option<f64>,
    pub step: Option<f64>,
    pub start_lr: Option<f64>,
    pub target_lr: Option<f64>,
    pub warmup: Option<f64>,
    pub total: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipConfig {
    /// Defaults to adaptive log increase for the weight-norm regime, none otherwise.
    pub mode: Option<ClipMode>,
    #[serde(default = "d_tau")]
    pub initial: f64,
    #[serde(default)]
    pub allow_with_batch_norm: bool,
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self {
            mode: None,
            initial: d_tau(),
            allow_with_batch_norm: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdSection {
    #[serde(default = "d_momentum")]
    pub momentum: f64,
    #[serde(default = "d_weight_decay")]
    pub weight_decay: f64,
    #[serde(default)]
    pub momentum_correction: bool,
}

impl Default for SgdSection {
    fn default() -> Self {
        let d = SgdConfig::default();
        Self {
            momentum: d.momentum,
            weight_decay: d.weight_decay,
            momentum_correction: d.momentum_correction,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "d_out_dir")]
    pub dir: PathBuf,
    /// `csv` or `json` for the diagnostics tables; an SVG report is always written.
    #[serde(default = "d_format")]
    pub format: String,
    /// Write a checkpoint every this many epochs (0: only at the end).
    #[serde(default)]
    pub checkpoint_every: usize,
    /// Record gradient histograms every step.
    #[serde(default = "d_true")]
    pub diagnostics: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: d_out_dir(),
            format: d_format(),
            checkpoint_every: 0,
            diagnostics: true,
        }
    }
}

/// Fixed histogram layout, recorded so every snapshot states how gradients were binned.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramConfig {
    #[serde(default = "d_bins")]
    pub bins: usize,
    #[serde(default = "d_min_mag")]
    pub min_magnitude: f64,
    #[serde(default = "d_max_mag")]
    pub max_magnitude: f64,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        Self {
            bins: d_bins(),
            min_magnitude: d_min_mag(),
            max_magnitude: d_max_mag(),
        }
    }
}

/// A complete experiment description. After [`parse_config`] every default is
/// filled in, so serializing it yields a self-describing snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub regime: Regime,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub network: NetworkConfig,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub clip: ClipConfig,
    #[serde(default)]
    pub sgd: SgdSection,
    #[serde(default)]
    pub histogram: HistogramConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn d_classes() -> usize {
    10
}
fn d_samples() -> usize {
    3000
}
fn d_channels() -> usize {
    3
}
fn d_side() -> usize {
    16
}
fn d_noise() -> f64 {
    1.0
}
fn d_source() -> DataSource {
    DataSource::Synthetic
}
fn d_val() -> f64 {
    0.2
}
fn d_augment() -> String {
    "none".into()
}
fn d_widths() -> Vec<usize> {
    vec![16, 32]
}
fn d_blocks() -> Vec<usize> {
    vec![2, 2]
}
fn d_bn_eps() -> f64 {
    BN_EPS
}
fn d_bn_momentum() -> f64 {
    BN_MOMENTUM
}
fn d_tau() -> f64 {
    5.0
}
fn d_momentum() -> f64 {
    SgdConfig::default().momentum
}
fn d_weight_decay() -> f64 {
    SgdConfig::default().weight_decay
}
fn d_out_dir() -> PathBuf {
    PathBuf::from("runs/latest")
}
fn d_format() -> String {
    "csv".into()
}
fn d_true() -> bool {
    true
}
fn d_bins() -> usize {
    BIN_COUNT
}
fn d_min_mag() -> f64 {
    MIN_MAGNITUDE
}
fn d_max_mag() -> f64 {
    MAX_MAGNITUDE
}
fn d_epochs() -> usize {
    5
}
fn d_batch() -> usize {
    64
}

fn need(value: Option<f64>, key: &str, kind: ScheduleKind) -> Result<f64> {
    value.ok_or_else(|| Error::Config(format!("schedule kind {kind:?} requires `schedule.{key}`")))
}

impl ExperimentConfig {
    /// Fill regime-dependent defaults in place.
    fn materialize(&mut self) {
        let kind = self.regime.block_kind();
        self.network.block_kind.get_or_insert(kind);
        let dropout = if self.regime == Regime::WeightnormClipDropout {
            0.1
        } else {
            0.0
        };
        self.network.dropout.get_or_insert(dropout);
        let clip = if self.regime == Regime::WeightnormClipDropout {
            ClipMode::AdaptiveLogIncrease
        } else {
            ClipMode::None
        };
        self.clip.mode.get_or_insert(clip);
        self.schedule.total.get_or_insert(self.epochs as f64);
    }

    pub fn network_spec(&self, in_channels: usize, classes: usize) -> NetworkSpec {
        NetworkSpec {
            in_channels,
            widths: self.network.widths.clone(),
            blocks: self.network.blocks.clone(),
            kind: self.network.block_kind.unwrap_or(self.regime.block_kind()),
            classes,
            dropout_p: self.network.dropout.unwrap_or(0.0),
            bn_eps: self.network.bn_eps,
            bn_momentum: self.network.bn_momentum,
        }
    }

    pub fn schedule_spec(&self) -> Result<ScheduleSpec> {
        let s = &self.schedule;
        let total = s.total.unwrap_or(self.epochs as f64);
        let spec = match s.kind {
            ScheduleKind::MonotonicDecrease => ScheduleSpec::MonotonicDecrease {
                base: need(s.base_lr, "base_lr", s.kind)?,
                total,
            },
            ScheduleKind::StepDecrease => ScheduleSpec::StepDecrease {
                base: need(s.base_lr, "base_lr", s.kind)?,
                hold: need(s.hold, "hold", s.kind)?,
                total,
            },
            ScheduleKind::CyclicTriangular => ScheduleSpec::CyclicTriangular {
                min: need(s.min_lr, "min_lr", s.kind)?,
                max: need(s.max_lr, "max_lr", s.kind)?,
                step: need(s.step, "step", s.kind)?,
                total,
            },
            ScheduleKind::WarmupThenDecay => ScheduleSpec::WarmupThenDecay {
                start: need(s.start_lr, "start_lr", s.kind)?,
                target: need(s.target_lr, "target_lr", s.kind)?,
                warmup: need(s.warmup, "warmup", s.kind)?,
                total,
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn clip_spec(&self) -> ClipSpec {
        ClipSpec {
            mode: self.clip.mode.unwrap_or(ClipMode::None),
            initial: self.clip.initial,
        }
    }

    pub fn sgd_config(&self) -> SgdConfig {
        SgdConfig {
            momentum: self.sgd.momentum,
            weight_decay: self.sgd.weight_decay,
            momentum_correction: self.sgd.momentum_correction,
        }
    }

    /// Cross-field checks. File paths are checked relative to the working directory.
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("`epochs` must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("`batch_size` must be at least 1".into()));
        }
        let kind = self.network.block_kind.unwrap_or(self.regime.block_kind());
        if kind != self.regime.block_kind() {
            return Err(Error::Config(format!(
                "regime {} requires network.block_kind = {}, got {kind}",
                self.regime,
                self.regime.block_kind()
            )));
        }
        let clip = self.clip_spec();
        clip.validate()?;
        if self.regime == Regime::BatchNorm && clip.mode != ClipMode::None && !self.clip.allow_with_batch_norm {
            return Err(Error::Config(
                "gradient clipping with regime batch_norm needs clip.allow_with_batch_norm = true".into(),
            ));
        }
        let schedule = self.schedule_spec()?;
        if schedule.total() < self.epochs as f64 {
            return Err(Error::Config(format!(
                "schedule.total {} is shorter than {} epochs",
                schedule.total(),
                self.epochs
            )));
        }
        self.sgd_config().validate()?;
        self.network_spec(1, 2).validate()?;
        if self.histogram
            != (HistogramConfig {
                bins: BIN_COUNT,
                min_magnitude: MIN_MAGNITUDE,
                max_magnitude: MAX_MAGNITUDE,
            })
        {
            return Err(Error::Config(format!(
                "histogram layout is fixed at {BIN_COUNT} bins over [{MIN_MAGNITUDE:e}, {MAX_MAGNITUDE:e}]"
            )));
        }
        crate::data::AugmentPolicy::from_str(&self.data.augment)?;
        if !["csv", "json"].contains(&self.output.format.as_str()) {
            return Err(Error::Config(format!(
                "output.format must be csv or json, got `{}`",
                self.output.format
            )));
        }
        if !(self.data.validation_fraction > 0.0 && self.data.validation_fraction < 1.0) {
            return Err(Error::Config("data.validation_fraction must lie in (0, 1)".into()));
        }
        match self.data.source {
            DataSource::Synthetic => {}
            DataSource::Idx => {
                for (key, path) in [("data.images", &self.data.images), ("data.labels", &self.data.labels)] {
                    let path = path
                        .as_ref()
                        .ok_or_else(|| Error::Config(format!("data.source = idx requires `{key}`")))?;
                    require_exists(path)?;
                }
            }
            DataSource::Cifar => {
                if self.data.files.is_empty() {
                    return Err(Error::Config("data.source = cifar requires `data.files`".into()));
                }
                self.data.files.iter().try_for_each(|p| require_exists(p))?;
            }
        }
        Ok(())
    }

    /// The fully-defaulted configuration as config-file text.
    pub fn snapshot(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }
}

fn require_exists(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingPath(path.to_path_buf()))
    }
}

/// Parse config text: unknown keys are rejected, defaults are filled in and the
/// result is validated.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let mut config: ExperimentConfig = toml::from_str(text).map_err(|e| {
        let detail = e.to_string().trim_end().to_string();
        match unknown_key(e.message()) {
            Some(key) => Error::UnknownKey { key, detail },
            None => Error::Config(detail),
        }
    })?;
    config.materialize();
    config.validate()?;
    Ok(config)
}

fn unknown_key(msg: &str) -> Option<String> {
    let rest = msg.strip_prefix("unknown field `")?;
    Some(rest[..rest.find('`')?].to_string())
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "regime = \"batch_norm\"\nschedule.kind = \"monotonic_decrease\"\nschedule.base_lr = 0.1\n";

    #[test]
    fn minimal_config_is_fully_defaulted() {
        let c = parse_config_str(MINIMAL).unwrap();
        assert_eq!(c.network.block_kind, Some(BlockKind::OriginalBn));
        assert_eq!(c.network.bn_eps, 1e-5);
        assert_eq!(c.clip.mode, Some(ClipMode::None));
        assert_eq!(c.schedule.total, Some(5.0));
        assert_eq!((c.sgd.momentum, c.sgd.weight_decay), (0.9, 1e-4));
        let snap = c.snapshot().unwrap();
        for key in ["bn_eps", "bn_momentum", "bins", "momentum", "block_kind", "mode"] {
            assert!(snap.contains(key), "{key} missing from\n{snap}");
        }
        assert_eq!(parse_config_str(&snap).unwrap(), c);
    }

    #[test]
    fn misspelled_key_is_named() {
        let err = parse_config_str(&format!("{MINIMAL}schedule.base_lrr = 0.2\n")).unwrap_err();
        assert!(matches!(&err, Error::UnknownKey { key, .. } if key == "base_lrr"));
        assert!(err.to_string().contains("base_lrr"), "{err}");
        let err = parse_config_str(&format!("{MINIMAL}epoch = 3\n")).unwrap_err();
        assert!(err.to_string().contains("epoch"), "{err}");
    }

    #[test]
    fn regime_and_block_kind_must_agree() {
        let text = "regime = \"weightnorm_clip_dropout\"\nnetwork.block_kind = \"original_bn\"\n\
                    schedule.kind = \"monotonic_decrease\"\nschedule.base_lr = 0.01\n";
        let err = parse_config_str(text).unwrap_err();
        assert!(err.to_string().contains("block_kind"), "{err}");
    }

    #[test]
    fn weightnorm_defaults() {
        let text =
            "regime = \"weightnorm_clip_dropout\"\nschedule.kind = \"monotonic_decrease\"\nschedule.base_lr = 0.01\n";
        let c = parse_config_str(text).unwrap();
        assert_eq!(c.network.dropout, Some(0.1));
        assert_eq!(c.clip.mode, Some(ClipMode::AdaptiveLogIncrease));
        assert_eq!(c.clip.initial, 5.0);
    }

    #[test]
    fn clipping_with_bn_is_gated() {
        let text = format!("{MINIMAL}clip.mode = \"constant\"\n");
        assert!(parse_config_str(&text).is_err());
        let text = format!("{text}clip.allow_with_batch_norm = true\n");
        assert_eq!(parse_config_str(&text).unwrap().clip.mode, Some(ClipMode::Constant));
    }

    #[test]
    fn missing_paths_and_fields() {
        let text = format!(
            "{MINIMAL}data.source = \"idx\"\ndata.images = \"/no/such/file\"\ndata.labels = \"/no/such/labels\"\n"
        );
        assert!(matches!(parse_config_str(&text), Err(Error::MissingPath(_))));
        let text = "regime = \"batch_norm\"\nschedule.kind = \"warmup_then_decay\"\nschedule.target_lr = 0.017\n";
        assert!(parse_config_str(text).unwrap_err().to_string().contains("start_lr"));
    }
}
