//! Simulator and training configuration files, layered under command-line
//! overrides.
//!
//! Both are TOML with a mandatory `schema = 1`. Keys match the long flag
//! names with `_` for `-`; a flag always wins over the file.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use clap::Args;
use dlac_core::quantize::ThresholdPolicy;
use dlac_core::sim::{Mode, SimConfig};
use dlac_core::train::TrainConfig;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::schema::parse_table;

/// Pipeline fill charged per mmOp by the named presets.
pub const PRESET_FILL_CYCLES: u64 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
pub enum Preset {
    #[serde(rename = "dlac-train")]
    #[value(name = "dlac-train")]
    DlacTrain,
    #[serde(rename = "dlac-infer")]
    #[value(name = "dlac-infer")]
    DlacInfer,
}

impl Preset {
    pub fn expand(self) -> SimConfig {
        let base = match self {
            Preset::DlacTrain => SimConfig::train(),
            Preset::DlacInfer => SimConfig::infer(),
        };
        SimConfig {
            fill_overhead_cycles: PRESET_FILL_CYCLES,
            ..base
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Train,
    Infer,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Train => Mode::Train,
            ModeArg::Infer => Mode::Infer,
        }
    }
}

/// Simulator settings; every field is optional so files and flags can be
/// layered.
#[derive(Debug, Clone, Default, PartialEq, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct SimSettings {
    /// Base instantiation [default: dlac-train]
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub pe_rows: Option<usize>,
    #[arg(long)]
    pub pe_cols: Option<usize>,
    #[arg(long)]
    pub fpus_per_pe: Option<usize>,
    #[arg(long)]
    pub flops_per_mac: Option<u64>,
    #[arg(long)]
    pub output_buffers_per_pe: Option<usize>,
    #[arg(long)]
    pub ptwise_units_per_pe: Option<usize>,
    #[arg(long)]
    pub freq_hz: Option<f64>,
    #[arg(long)]
    pub fill_overhead_cycles: Option<u64>,
}

macro_rules! overlay {
    ($base:expr, $top:expr, $($f:ident),+) => {{
        let (mut b, t) = ($base, $top);
        $( if t.$f.is_some() { b.$f = t.$f; } )+
        b
    }};
}

impl SimSettings {
    /// `top` wins wherever it is set.
    pub fn overlay(self, top: SimSettings) -> SimSettings {
        overlay!(
            self,
            top,
            preset,
            mode,
            pe_rows,
            pe_cols,
            fpus_per_pe,
            flops_per_mac,
            output_buffers_per_pe,
            ptwise_units_per_pe,
            freq_hz,
            fill_overhead_cycles
        )
    }

    pub fn resolve(&self) -> Result<SimConfig> {
        let base = self.preset.unwrap_or(Preset::DlacTrain).expand();
        let cfg = SimConfig {
            mode: self.mode.map_or(base.mode, Mode::from),
            pe_rows: self.pe_rows.unwrap_or(base.pe_rows),
            pe_cols: self.pe_cols.unwrap_or(base.pe_cols),
            fpus_per_pe: self.fpus_per_pe.unwrap_or(base.fpus_per_pe),
            flops_per_mac: self.flops_per_mac.unwrap_or(base.flops_per_mac),
            output_buffers_per_pe: self.output_buffers_per_pe.unwrap_or(base.output_buffers_per_pe),
            ptwise_units_per_pe: self.ptwise_units_per_pe.unwrap_or(base.ptwise_units_per_pe),
            freq_hz: self.freq_hz.unwrap_or(base.freq_hz),
            fill_overhead_cycles: self.fill_overhead_cycles.unwrap_or(base.fill_overhead_cycles),
        };
        cfg.validate().map_err(|e| Error::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

/// Full-precision epoch count, or every epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpochsFp {
    All,
    Count(usize),
}

impl FromStr for EpochsFp {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "all" => Ok(EpochsFp::All),
            _ => s
                .parse()
                .map(EpochsFp::Count)
                .map_err(|_| format!("expected a count or `all`, got `{s}`")),
        }
    }
}

impl<'de> Deserialize<'de> for EpochsFp {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(usize),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(n) => Ok(EpochsFp::Count(n)),
            Raw::Word(w) => w.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl fmt::Display for EpochsFp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EpochsFp::All => f.write_str("all"),
            EpochsFp::Count(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PolicyArg {
    MeanScaled,
    Fixed,
}

/// `threshold` is the factor `t` for `mean_scaled` and `w_th` itself for
/// `fixed`.
pub fn threshold_policy(policy: Option<PolicyArg>, threshold: Option<f32>) -> Result<ThresholdPolicy> {
    let p = match (policy.unwrap_or(PolicyArg::MeanScaled), threshold) {
        (PolicyArg::MeanScaled, t) => ThresholdPolicy::MeanScaled(t.unwrap_or(dlac_core::quantize::DEFAULT_MEAN_SCALE)),
        (PolicyArg::Fixed, Some(th)) => ThresholdPolicy::Fixed(th),
        (PolicyArg::Fixed, None) => return Err(Error::Usage("threshold_policy = fixed needs a threshold".into())),
    };
    p.validate().map_err(|e| Error::Usage(e.to_string()))?;
    Ok(p)
}

pub fn policy_fields(p: ThresholdPolicy) -> (&'static str, f32) {
    match p {
        ThresholdPolicy::MeanScaled(t) => ("mean_scaled", t),
        ThresholdPolicy::Fixed(th) => ("fixed", th),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Full-precision pre-initialization epochs, or `all`
    #[arg(long)]
    pub epochs_fp: Option<EpochsFp>,
    #[arg(long)]
    pub lr0: Option<f32>,
    #[arg(long)]
    pub lr_drop_factor: Option<f32>,
    #[arg(long)]
    pub plateau_window: Option<usize>,
    #[arg(long)]
    pub plateau_min_delta: Option<f32>,
    #[arg(long)]
    pub lambda_l1: Option<f32>,
    #[arg(long)]
    pub relu_tau: Option<f32>,
    #[arg(long)]
    pub relu_tau_from_epoch: Option<usize>,
    #[arg(long)]
    pub grad_update_filter: Option<bool>,
    #[arg(long, value_enum)]
    pub threshold_policy: Option<PolicyArg>,
    #[arg(long)]
    pub threshold: Option<f32>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub momentum: Option<f32>,
}

impl TrainSettings {
    pub fn overlay(self, top: TrainSettings) -> TrainSettings {
        overlay!(
            self,
            top,
            epochs,
            epochs_fp,
            lr0,
            lr_drop_factor,
            plateau_window,
            plateau_min_delta,
            lambda_l1,
            relu_tau,
            relu_tau_from_epoch,
            grad_update_filter,
            threshold_policy,
            threshold,
            seed,
            batch_size,
            momentum
        )
    }

    pub fn resolve(&self) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let epochs_total = self.epochs.unwrap_or(d.epochs_total);
        let epochs_full_precision = match self.epochs_fp {
            None => d.epochs_full_precision.min(epochs_total),
            Some(EpochsFp::All) => epochs_total,
            Some(EpochsFp::Count(n)) => n,
        };
        let cfg = TrainConfig {
            epochs_total,
            epochs_full_precision,
            lr0: self.lr0.unwrap_or(d.lr0),
            lr_drop_factor: self.lr_drop_factor.unwrap_or(d.lr_drop_factor),
            plateau_window: self.plateau_window.unwrap_or(d.plateau_window),
            plateau_min_delta: self.plateau_min_delta.unwrap_or(d.plateau_min_delta),
            lambda_l1: self.lambda_l1.unwrap_or(d.lambda_l1),
            relu_tau: self.relu_tau.unwrap_or(d.relu_tau),
            relu_tau_from_epoch: self.relu_tau_from_epoch.unwrap_or(d.relu_tau_from_epoch),
            grad_update_filter: self.grad_update_filter.unwrap_or(d.grad_update_filter),
            threshold_policy: threshold_policy(self.threshold_policy, self.threshold)?,
            seed: self.seed.unwrap_or(d.seed),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            momentum: self.momentum.unwrap_or(d.momentum),
        };
        cfg.validate().map_err(|e| Error::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

/// Deserializes a `schema = 1` TOML file into `T`, whose fields are the
/// allowed keys.
fn read_settings<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut table = parse_table(path, &text, None)?;
    table.remove("schema");
    // Every field is optional, so each key can be checked alone and named
    // in the error.
    let err = |k: &str, e: toml::de::Error| Error::schema(path, k, e.message().trim_end());
    for (k, v) in &table {
        let one = toml::Table::from_iter([(k.clone(), v.clone())]);
        toml::Value::Table(one).try_into::<T>().map_err(|e| err(k, e))?;
    }
    toml::Value::Table(table).try_into().map_err(|e| err("<root>", e))
}

pub fn read_sim_settings(path: &Path) -> Result<SimSettings> {
    read_settings(path)
}

pub fn read_train_settings(path: &Path) -> Result<TrainSettings> {
    read_settings(path)
}

/// `config.<key> = <value>` lines for a resolved simulator config.
pub fn sim_config_lines(cfg: &SimConfig) -> Vec<(String, String)> {
    vec![
        ("mode".into(), cfg.mode.name().into()),
        ("pe_rows".into(), cfg.pe_rows.to_string()),
        ("pe_cols".into(), cfg.pe_cols.to_string()),
        ("fpus_per_pe".into(), cfg.fpus_per_pe.to_string()),
        ("flops_per_mac".into(), cfg.flops_per_mac.to_string()),
        ("output_buffers_per_pe".into(), cfg.output_buffers_per_pe.to_string()),
        ("ptwise_units_per_pe".into(), cfg.ptwise_units_per_pe.to_string()),
        ("freq_hz".into(), cfg.freq_hz.to_string()),
        ("fill_overhead_cycles".into(), cfg.fill_overhead_cycles.to_string()),
    ]
}

pub fn train_config_lines(cfg: &TrainConfig) -> Vec<(String, String)> {
    let (policy, threshold) = policy_fields(cfg.threshold_policy);
    vec![
        ("epochs".into(), cfg.epochs_total.to_string()),
        ("epochs_fp".into(), cfg.epochs_full_precision.to_string()),
        ("lr0".into(), cfg.lr0.to_string()),
        ("lr_drop_factor".into(), cfg.lr_drop_factor.to_string()),
        ("plateau_window".into(), cfg.plateau_window.to_string()),
        ("plateau_min_delta".into(), cfg.plateau_min_delta.to_string()),
        ("lambda_l1".into(), cfg.lambda_l1.to_string()),
        ("relu_tau".into(), cfg.relu_tau.to_string()),
        ("relu_tau_from_epoch".into(), cfg.relu_tau_from_epoch.to_string()),
        ("grad_update_filter".into(), cfg.grad_update_filter.to_string()),
        ("threshold_policy".into(), policy.into()),
        ("threshold".into(), threshold.to_string()),
        ("seed".into(), cfg.seed.to_string()),
        ("batch_size".into(), cfg.batch_size.to_string()),
        ("momentum".into(), cfg.momentum.to_string()),
    ]
}
