//! Run configuration: a flat `key = value` file, CLI overrides on top, and
//! a deterministic effective-config echo.
//!
//! Unknown keys are rejected, not ignored. Every field has a documented
//! default so a config file only needs the keys it changes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use kunet_core::normalize::NormMode;
use kunet_core::partition::PartitionPlan;
use kunet_core::unet::{KernelOverrides, OutputSchedule, Variant};

use crate::data::{GapPolicy, SplitScheme};
use crate::error::{io_err, Error, Result};
use crate::train::{EraseConfig, TrainConfig};

/// Where the input series comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    Csv(PathBuf),
    /// Built-in surrogate with daily/weekly periodicity.
    Synthetic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: DataSource,
    pub synthetic_rows: usize,
    pub synthetic_channels: usize,
    /// Keep at most this many leading rows (0 = all).
    pub max_rows: usize,
    pub gap_policy: GapPolicy,
    pub split: SplitScheme,
    pub univariate: bool,
    pub target: String,
    pub channel_independent: bool,

    pub variant: Variant,
    pub lookback: usize,
    pub l_unit: usize,
    pub l_multiples: Vec<usize>,
    pub horizon: usize,
    pub out_unit: usize,
    pub out_multiples: Vec<usize>,
    pub hidden: usize,
    pub heads: usize,
    pub blocks: usize,
    pub use_skips: bool,

    pub normalization: NormMode,
    pub erase_p: f64,
    pub erase_span: (f64, f64),
    pub learning_rate: f64,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub stride: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataSource::Synthetic,
            synthetic_rows: 4000,
            synthetic_channels: 7,
            max_rows: 0,
            gap_policy: GapPolicy::ForwardFill,
            split: SplitScheme::standard_ratio(),
            univariate: true,
            target: "OT".into(),
            channel_independent: true,
            variant: Variant::Linear,
            lookback: 336,
            l_unit: 3,
            l_multiples: vec![4, 4, 7],
            horizon: 96,
            out_unit: 2,
            out_multiples: vec![2, 24],
            hidden: 30,
            heads: 2,
            blocks: 1,
            use_skips: true,
            normalization: NormMode::Mean,
            erase_p: 0.0,
            erase_span: (0.02, 0.2),
            learning_rate: 0.0005,
            epochs: 10,
            patience: 3,
            batch_size: 32,
            stride: 1,
            seed: 42,
            out_dir: PathBuf::from("runs/out"),
        }
    }
}

impl RunConfig {
    /// Long-running preset for the full univariate hourly-benchmark
    /// protocol: 12/4/4-month splits, look-back 336 as 3*4*4*7, horizon 96,
    /// 300 epochs with patience 30, mean normalization. Expects the real
    /// dataset CSV; hours, not minutes, of compute. Desk-scale acceptance
    /// never runs this.
    pub fn full_protocol_etth1_univariate() -> Self {
        let mut cfg = RunConfig::default();
        cfg.data = DataSource::Csv(PathBuf::from("ETTh1.csv"));
        cfg.split = SplitScheme::ett_hourly();
        cfg.univariate = true;
        cfg.target = "OT".into();
        cfg.lookback = 336;
        cfg.l_unit = 3;
        cfg.l_multiples = vec![4, 4, 7];
        cfg.horizon = 96;
        cfg.out_unit = 2;
        cfg.out_multiples = vec![2, 24];
        cfg.hidden = 30;
        cfg.normalization = NormMode::Mean;
        cfg.learning_rate = 0.0005;
        cfg.epochs = 300;
        cfg.patience = 30;
        cfg.batch_size = 32;
        cfg
    }

    /// Parse a config file and apply it over the defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg = RunConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{}:{}: expected key = value", path.display(), i + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// Apply one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("field {key:?}: {what} (got {value:?})"));
        match key {
            "data" => {
                self.data = if value == "synthetic" {
                    DataSource::Synthetic
                } else {
                    DataSource::Csv(PathBuf::from(value))
                };
            }
            "synthetic_rows" => self.synthetic_rows = value.parse().map_err(|_| bad("expected integer"))?,
            "synthetic_channels" => {
                self.synthetic_channels = value.parse().map_err(|_| bad("expected integer"))?
            }
            "max_rows" => self.max_rows = value.parse().map_err(|_| bad("expected integer"))?,
            "gap_policy" => {
                self.gap_policy = match value {
                    "reject" => GapPolicy::Reject,
                    "forward_fill" => GapPolicy::ForwardFill,
                    _ => return Err(bad("expected reject|forward_fill")),
                }
            }
            "split" => {
                self.split = match value {
                    "ratio" => SplitScheme::standard_ratio(),
                    "ett_hourly" => SplitScheme::ett_hourly(),
                    "ett_quarter_hourly" => SplitScheme::ett_quarter_hourly(),
                    _ => return Err(bad("expected ratio|ett_hourly|ett_quarter_hourly")),
                }
            }
            "univariate" => self.univariate = parse_bool(value).ok_or_else(|| bad("expected true|false"))?,
            "target" => self.target = value.to_string(),
            "channel_independent" => {
                self.channel_independent = parse_bool(value).ok_or_else(|| bad("expected true|false"))?
            }
            "variant" => self.variant = Variant::parse(value)?,
            "lookback" => self.lookback = value.parse().map_err(|_| bad("expected integer"))?,
            "l_unit" => self.l_unit = value.parse().map_err(|_| bad("expected integer"))?,
            "l_multiples" => self.l_multiples = parse_usize_list(value).ok_or_else(|| bad("expected n,n,..."))?,
            "horizon" => self.horizon = value.parse().map_err(|_| bad("expected integer"))?,
            "out_unit" => self.out_unit = value.parse().map_err(|_| bad("expected integer"))?,
            "out_multiples" => {
                self.out_multiples = parse_usize_list(value).ok_or_else(|| bad("expected n,n,..."))?
            }
            "hidden" => self.hidden = value.parse().map_err(|_| bad("expected integer"))?,
            "heads" => self.heads = value.parse().map_err(|_| bad("expected integer"))?,
            "blocks" => self.blocks = value.parse().map_err(|_| bad("expected integer"))?,
            "use_skips" => self.use_skips = parse_bool(value).ok_or_else(|| bad("expected true|false"))?,
            "normalization" => self.normalization = NormMode::parse(value)?,
            "erase_p" => self.erase_p = value.parse().map_err(|_| bad("expected number"))?,
            "erase_span" => {
                let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                if parts.len() != 2 {
                    return Err(bad("expected lo,hi"));
                }
                let lo = parts[0].parse().map_err(|_| bad("expected number"))?;
                let hi = parts[1].parse().map_err(|_| bad("expected number"))?;
                self.erase_span = (lo, hi);
            }
            "learning_rate" => self.learning_rate = value.parse().map_err(|_| bad("expected number"))?,
            "epochs" => self.epochs = value.parse().map_err(|_| bad("expected integer"))?,
            "patience" => self.patience = value.parse().map_err(|_| bad("expected integer"))?,
            "batch_size" => self.batch_size = value.parse().map_err(|_| bad("expected integer"))?,
            "stride" => self.stride = value.parse().map_err(|_| bad("expected integer"))?,
            "seed" => self.seed = value.parse().map_err(|_| bad("expected integer"))?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn plan(&self, features: usize) -> PartitionPlan {
        PartitionPlan {
            lookback: self.lookback,
            features,
            l_unit: self.l_unit,
            l_multiples: self.l_multiples.clone(),
            m_unit: features,
            m_multiples: Vec::new(),
            hidden: self.hidden,
            latent_len: 1,
            latent_width: self.hidden,
        }
    }

    pub fn output_schedule(&self) -> OutputSchedule {
        OutputSchedule::new(self.horizon, self.out_unit, self.out_multiples.clone())
    }

    pub fn overrides(&self) -> KernelOverrides {
        KernelOverrides {
            heads: self.heads,
            blocks: self.blocks,
            use_skips: self.use_skips,
            ..KernelOverrides::default()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            patience: self.patience,
            batch_size: self.batch_size,
            seed: self.seed,
            norm: self.normalization,
            erase: if self.erase_p > 0.0 {
                Some(EraseConfig { probability: self.erase_p, span: self.erase_span })
            } else {
                None
            },
        }
    }

    /// Full key = value dump in fixed order; written next to run outputs.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "data = {}",
            match &self.data {
                DataSource::Synthetic => "synthetic".to_string(),
                DataSource::Csv(p) => p.display().to_string(),
            }
        );
        let _ = writeln!(s, "synthetic_rows = {}", self.synthetic_rows);
        let _ = writeln!(s, "synthetic_channels = {}", self.synthetic_channels);
        let _ = writeln!(s, "max_rows = {}", self.max_rows);
        let _ = writeln!(
            s,
            "gap_policy = {}",
            match self.gap_policy {
                GapPolicy::Reject => "reject",
                GapPolicy::ForwardFill => "forward_fill",
            }
        );
        let _ = writeln!(
            s,
            "split = {}",
            match self.split {
                SplitScheme::Ratio { .. } => "ratio",
                SplitScheme::EttMonths { rows_per_month } =>
                    if rows_per_month == 30 * 24 { "ett_hourly" } else { "ett_quarter_hourly" },
            }
        );
        let _ = writeln!(s, "univariate = {}", self.univariate);
        let _ = writeln!(s, "target = {}", self.target);
        let _ = writeln!(s, "channel_independent = {}", self.channel_independent);
        let _ = writeln!(s, "variant = {}", self.variant.as_str());
        let _ = writeln!(s, "lookback = {}", self.lookback);
        let _ = writeln!(s, "l_unit = {}", self.l_unit);
        let _ = writeln!(s, "l_multiples = {}", join_usize(&self.l_multiples));
        let _ = writeln!(s, "horizon = {}", self.horizon);
        let _ = writeln!(s, "out_unit = {}", self.out_unit);
        let _ = writeln!(s, "out_multiples = {}", join_usize(&self.out_multiples));
        let _ = writeln!(s, "hidden = {}", self.hidden);
        let _ = writeln!(s, "heads = {}", self.heads);
        let _ = writeln!(s, "blocks = {}", self.blocks);
        let _ = writeln!(s, "use_skips = {}", self.use_skips);
        let _ = writeln!(s, "normalization = {}", self.normalization.as_str());
        let _ = writeln!(s, "erase_p = {}", self.erase_p);
        let _ = writeln!(s, "erase_span = {},{}", self.erase_span.0, self.erase_span.1);
        let _ = writeln!(s, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "patience = {}", self.patience);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "stride = {}", self.stride);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "out_dir = {}", self.out_dir.display());
        s
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" => Some(true),
        "false" => Some(false),
        _ => None,
    }
}

fn parse_usize_list(s: &str) -> Option<Vec<usize>> {
    if s == "-" {
        return Some(Vec::new());
    }
    s.split(',').map(|p| p.trim().parse::<usize>().ok()).collect()
}

fn join_usize(xs: &[usize]) -> String {
    if xs.is_empty() {
        "-".to_string()
    } else {
        xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
    }
}
