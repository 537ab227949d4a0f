//! Synthetic chart environment: regime-switching price series, rise/fall
//! labels per prediction target, grayscale chart rendering, CSV ingestion
//! and on-disk datasets (PGM images plus a JSON Lines manifest).

mod csv_ingest;
mod dataset;
mod image;
mod render;
mod series;

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use csv_ingest::{ingest_csv, ColumnMap};
pub use dataset::{
    build_dataset, build_dataset_from_series, load_dataset, read_manifest, Continuation, CsvSource,
    Dataset, DatasetManifest, GenConfig, ManifestRecord, Sample, SampleTags, Split, StratumCount,
    StratumSpec, MANIFEST_FILE, SUMMARY_FILE,
};
pub use image::GrayImage;
pub use render::{render_chart, render_chart_with, Style};
pub use series::{
    generate_series, label_sample, moving_average, realized_volatility, Regime, SeriesSpec,
};

pub const HORIZONS: [usize; 3] = [5, 21, 63];
pub const MAX_HORIZON: usize = 63;
pub const DEFAULT_HEIGHT: usize = 64;
pub const DEFAULT_WIDTH: usize = 96;

#[derive(Debug, Error)]
pub enum ChartError {
    #[error("invalid series spec: {field}: {reason}")]
    InvalidSpec { field: &'static str, reason: String },
    #[error("series of length {len} cannot be labelled at t={t} with horizon {horizon}")]
    InsufficientContinuation {
        len: usize,
        t: usize,
        horizon: usize,
    },
    #[error("cannot render: {0}")]
    Render(String),
    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("{path}: invalid PGM: {message}")]
    Pgm { path: PathBuf, message: String },
    #[error("manifest {path}, line {line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid generation config: {0}")]
    Config(String),
}

impl ChartError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ChartError::Io {
            path: path.into(),
            source,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantity {
    Price,
    Volatility,
}

impl Quantity {
    pub const ALL: [Quantity; 2] = [Quantity::Volatility, Quantity::Price];

    pub fn as_str(self) -> &'static str {
        match self {
            Quantity::Price => "price",
            Quantity::Volatility => "volatility",
        }
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A prediction objective: which quantity, over how many periods.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TargetSpec {
    pub quantity: Quantity,
    pub horizon: usize,
}

impl TargetSpec {
    /// The six targets in report order: volatility 5/21/63, then price 5/21/63.
    pub const ALL: [TargetSpec; 6] = [
        TargetSpec::raw(Quantity::Volatility, 5),
        TargetSpec::raw(Quantity::Volatility, 21),
        TargetSpec::raw(Quantity::Volatility, 63),
        TargetSpec::raw(Quantity::Price, 5),
        TargetSpec::raw(Quantity::Price, 21),
        TargetSpec::raw(Quantity::Price, 63),
    ];

    const fn raw(quantity: Quantity, horizon: usize) -> Self {
        Self { quantity, horizon }
    }

    pub fn new(quantity: Quantity, horizon: usize) -> Result<Self, ChartError> {
        if !HORIZONS.contains(&horizon) {
            return Err(ChartError::InvalidSpec {
                field: "horizon",
                reason: format!("{horizon} is not one of {HORIZONS:?}"),
            });
        }
        Ok(Self { quantity, horizon })
    }

    /// Position in [`TargetSpec::ALL`].
    pub fn index(self) -> usize {
        let q = match self.quantity {
            Quantity::Volatility => 0,
            Quantity::Price => 3,
        };
        q + HORIZONS
            .iter()
            .position(|&h| h == self.horizon)
            .unwrap_or(0)
    }

    pub fn horizon_index(self) -> usize {
        HORIZONS
            .iter()
            .position(|&h| h == self.horizon)
            .unwrap_or(0)
    }
}

impl fmt::Display for TargetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.quantity, self.horizon)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    /// Noise-free trend whose continuation is a deterministic function of the chart.
    Learnable,
    /// Random walk whose continuation is independent of the chart.
    Noise,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Feature {
    Close,
    Volume,
    MovingAverage,
}
