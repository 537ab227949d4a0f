use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::seed::mix_seed;

use super::{
    generate_series, ingest_csv, label_sample, render_chart_with, ChartError, ColumnMap,
    Difficulty, Direction, Feature, GrayImage, Quantity, Regime, SeriesSpec, Style, TargetSpec,
    DEFAULT_HEIGHT, DEFAULT_WIDTH, HORIZONS,
};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const SUMMARY_FILE: &str = "strata.json";

/// How a learnable sample's hidden continuation relates to its last visible regime.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Continuation {
    /// The last regime's direction carries on.
    #[default]
    Trend,
    /// The last regime's direction flips.
    Reversal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StratumSpec {
    pub quantity: Quantity,
    pub horizon: usize,
    pub length: [usize; 2],
    pub style: Style,
    pub difficulty: Difficulty,
    pub count: usize,
}

impl StratumSpec {
    pub fn key(&self) -> String {
        format!(
            "{}_{}/{}-{}/{}/{}",
            self.quantity.as_str(),
            self.horizon,
            self.length[0],
            self.length[1],
            serde_json::to_value(self.style)
                .unwrap()
                .as_str()
                .unwrap_or_default(),
            serde_json::to_value(self.difficulty)
                .unwrap()
                .as_str()
                .unwrap_or_default(),
        )
    }
}

/// Dataset generation settings. Without explicit `strata`, every combination
/// of quantity × horizon × length bucket × style × difficulty gets `per_stratum` samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub seed: u64,
    pub quantities: Vec<Quantity>,
    pub horizons: Vec<usize>,
    pub styles: Vec<Style>,
    pub length_buckets: Vec<[usize; 2]>,
    pub difficulties: Vec<Difficulty>,
    pub per_stratum: usize,
    pub strata: Vec<StratumSpec>,
    pub continuation: Continuation,
    pub test_fraction: f64,
    pub image_height: usize,
    pub image_width: usize,
    pub features: Vec<Feature>,
    pub frequencies: Vec<String>,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            quantities: Quantity::ALL.to_vec(),
            horizons: HORIZONS.to_vec(),
            styles: vec![Style::LineThin, Style::LineThick, Style::FilledArea],
            length_buckets: vec![[32, 127], [128, 512]],
            difficulties: vec![Difficulty::Learnable, Difficulty::Noise],
            per_stratum: 10,
            strata: Vec::new(),
            continuation: Continuation::Trend,
            test_fraction: 0.2,
            image_height: DEFAULT_HEIGHT,
            image_width: DEFAULT_WIDTH,
            features: vec![Feature::Close],
            frequencies: vec!["daily".into(), "hourly".into()],
        }
    }
}

impl GenConfig {
    pub fn resolved_strata(&self) -> Vec<StratumSpec> {
        if !self.strata.is_empty() {
            return self.strata.clone();
        }
        let mut out = Vec::new();
        for &quantity in &self.quantities {
            for &horizon in &self.horizons {
                for &length in &self.length_buckets {
                    for &style in &self.styles {
                        for &difficulty in &self.difficulties {
                            out.push(StratumSpec {
                                quantity,
                                horizon,
                                length,
                                style,
                                difficulty,
                                count: self.per_stratum,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), ChartError> {
        let bad = |m: String| Err(ChartError::Config(m));
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad(format!(
                "test_fraction {} must be in [0, 1)",
                self.test_fraction
            ));
        }
        if self.image_height % 8 != 0 || self.image_width % 8 != 0 || self.image_height < 16 {
            return bad(format!(
                "image size {}x{} must be multiples of 8, at least 16 high",
                self.image_height, self.image_width
            ));
        }
        if self.frequencies.is_empty() {
            return bad("frequencies must not be empty".into());
        }
        if !self.features.contains(&Feature::Close) {
            return bad("features must include close".into());
        }
        for s in self.resolved_strata() {
            TargetSpec::new(s.quantity, s.horizon)?;
            if s.length[0] > s.length[1] || s.length[1] > 4096 {
                return bad(format!("length bucket {:?} is not a valid range", s.length));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleTags {
    pub difficulty: Option<Difficulty>,
    pub style: Style,
    pub length: usize,
    pub frequency: String,
    pub features: Vec<Feature>,
    pub continuation: Option<Continuation>,
    pub source: String,
}

/// One line of `manifest.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub image_path: String,
    pub quantity: Quantity,
    pub horizon: usize,
    pub label: Direction,
    pub split: Split,
    pub tags: SampleTags,
    pub seed: u64,
}

impl ManifestRecord {
    pub fn target(&self) -> TargetSpec {
        TargetSpec {
            quantity: self.quantity,
            horizon: self.horizon,
        }
    }

    /// Sidecar holding the full series (lookback plus continuation).
    pub fn series_path(&self) -> String {
        let stem = Path::new(&self.image_path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        format!("series/{stem}.txt")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratumCount {
    pub stratum: String,
    pub train: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub total: usize,
    pub strata: Vec<StratumCount>,
    #[serde(skip)]
    pub records: Vec<ManifestRecord>,
    #[serde(skip)]
    pub warnings: Vec<String>,
}

/// A loaded sample: the chart, its target and label, and the hidden series.
#[derive(Clone, Debug)]
pub struct Sample {
    pub index: usize,
    pub record: ManifestRecord,
    pub image: GrayImage,
    /// Lookback followed by the continuation.
    pub series: Vec<f64>,
    pub lookback: usize,
}

impl Sample {
    pub fn target(&self) -> TargetSpec {
        self.record.target()
    }

    pub fn label(&self) -> Direction {
        self.record.label
    }

    pub fn visible(&self) -> &[f64] {
        &self.series[..self.lookback]
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<usize> {
        self.samples
            .iter()
            .filter(|s| s.record.split == split)
            .map(|s| s.index)
            .collect()
    }
}

struct Pending {
    stratum: usize,
    target: TargetSpec,
    series: Vec<f64>,
    lookback: usize,
    tags: SampleTags,
    seed: u64,
}

/// Ratio between successive volatility levels of a learnable volatility
/// sample.
const VOL_STEP: f64 = 4.0;

fn magnitude(rng: &mut impl Rng) -> f64 {
    rng.random_range(0.002..0.01)
}

fn signed(rng: &mut impl Rng) -> f64 {
    if rng.random_bool(0.5) {
        1.0
    } else {
        -1.0
    }
}

fn synth_sample(
    cfg: &GenConfig,
    stratum: &StratumSpec,
    stratum_idx: usize,
    global: usize,
) -> Result<Pending, ChartError> {
    let seed = mix_seed(cfg.seed, global as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = stratum.horizon;
    let min_len = 2 * h + 2;
    let lo = stratum.length[0].max(min_len);
    let hi = stratum.length[1].max(lo);
    let length = rng.random_range(lo..=hi);
    let frequency = cfg.frequencies[rng.random_range(0..cfg.frequencies.len())].clone();
    // lookback has length-1 increments, the continuation h more; one spare period
    let visible = length - 1;
    let tail = h + 1;
    let regimes = match stratum.difficulty {
        Difficulty::Learnable if stratum.quantity == Quantity::Volatility => {
            // Zero drift; the visible chart steps between a calm and a
            // jittery stretch and the continuation moves the level again by
            // the same factor, so the label is readable from the chart.
            let last_len =
                rng.random_range((h + 1).max(visible / 2)..=(h + 1).max(3 * visible / 4));
            let first = rng.random_range(0.002..0.004);
            let rising = rng.random_bool(0.5);
            let step = if rising { VOL_STEP } else { 1.0 / VOL_STEP };
            let (first, last) = if rising {
                (first, first * step)
            } else {
                (first * VOL_STEP, first)
            };
            let next = match cfg.continuation {
                Continuation::Trend => last * step,
                Continuation::Reversal => last / step,
            };
            let mut regimes = Vec::new();
            if visible > last_len {
                regimes.push(Regime {
                    duration: visible - last_len,
                    drift: 0.0,
                    volatility: first,
                });
            }
            regimes.push(Regime {
                duration: last_len,
                drift: 0.0,
                volatility: last,
            });
            regimes.push(Regime {
                duration: tail,
                drift: 0.0,
                volatility: next,
            });
            regimes
        }
        Difficulty::Learnable => {
            let last_len = rng.random_range((h + 1).max(visible / 2)..=visible);
            let last_drift = signed(&mut rng) * magnitude(&mut rng);
            let mut regimes = Vec::new();
            if visible > last_len && rng.random_bool(0.5) {
                regimes.push(Regime {
                    duration: visible - last_len,
                    drift: signed(&mut rng) * magnitude(&mut rng),
                    volatility: 0.0,
                });
            } else if visible > last_len {
                regimes.push(Regime {
                    duration: visible - last_len,
                    drift: last_drift,
                    volatility: 0.0,
                });
            }
            regimes.push(Regime {
                duration: last_len,
                drift: last_drift,
                volatility: 0.0,
            });
            let dir = match cfg.continuation {
                Continuation::Trend => last_drift.signum(),
                Continuation::Reversal => -last_drift.signum(),
            };
            regimes.push(Regime {
                duration: tail,
                drift: dir * magnitude(&mut rng),
                volatility: 0.0,
            });
            regimes
        }
        Difficulty::Noise => {
            let sigma = rng.random_range(0.005..0.03);
            let coin = rng.random_bool(0.5);
            let continuation = match stratum.quantity {
                Quantity::Price => Regime {
                    duration: tail,
                    drift: if coin { sigma } else { -sigma },
                    volatility: sigma,
                },
                Quantity::Volatility => Regime {
                    duration: tail,
                    drift: 0.0,
                    volatility: if coin { 2.0 * sigma } else { 0.5 * sigma },
                },
            };
            vec![
                Regime {
                    duration: visible,
                    drift: 0.0,
                    volatility: sigma,
                },
                continuation,
            ]
        }
    };
    let spec = SeriesSpec {
        length,
        max_horizon: h,
        frequency: frequency.clone(),
        regimes,
        features: cfg.features.clone(),
        seed: rng.next_u64(),
    };
    let series = generate_series(&spec)?;
    Ok(Pending {
        stratum: stratum_idx,
        target: TargetSpec::new(stratum.quantity, h)?,
        series,
        lookback: length,
        tags: SampleTags {
            difficulty: Some(stratum.difficulty),
            style: stratum.style,
            length,
            frequency,
            features: cfg.features.clone(),
            continuation: (stratum.difficulty == Difficulty::Learnable).then_some(cfg.continuation),
            source: "synthetic".into(),
        },
        seed,
    })
}

/// Generates the synthetic dataset into `out_dir`: `images/*.pgm`,
/// `series/*.txt`, `manifest.jsonl` and a `strata.json` summary.
/// The output is a pure function of the config.
pub fn build_dataset(cfg: &GenConfig, out_dir: &Path) -> Result<DatasetManifest, ChartError> {
    cfg.validate()?;
    let strata = cfg.resolved_strata();
    let mut warnings = Vec::new();
    let mut pending = Vec::new();
    for (si, stratum) in strata.iter().enumerate() {
        if stratum.count == 0 {
            let w = format!("stratum {} has zero samples", stratum.key());
            log::warn!("{w}");
            warnings.push(w);
        }
        for _ in 0..stratum.count {
            let global = pending.len();
            pending.push(synth_sample(cfg, stratum, si, global)?);
        }
    }
    let keys: Vec<String> = strata.iter().map(StratumSpec::key).collect();
    let mut manifest = write_samples(cfg, &keys, pending, out_dir)?;
    manifest.warnings = warnings;
    Ok(manifest)
}

/// Where to find a real price series and how to cut it into samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
    #[serde(default)]
    pub columns: ColumnMap,
    pub lookback: usize,
    pub stride: usize,
}

/// Cuts an ingested series into sliding windows, one sample per window and
/// configured target, labelled from the real continuation.
pub fn build_dataset_from_series(
    cfg: &GenConfig,
    source: &CsvSource,
    out_dir: &Path,
) -> Result<DatasetManifest, ChartError> {
    cfg.validate()?;
    let series = ingest_csv(&source.path, &source.columns)?;
    let style = cfg.styles.first().copied().unwrap_or(Style::LineThin);
    let targets: Vec<TargetSpec> = cfg
        .quantities
        .iter()
        .flat_map(|&q| cfg.horizons.iter().map(move |&h| TargetSpec::new(q, h)))
        .collect::<Result<_, _>>()?;
    let stride = source.stride.max(1);
    let mut keys = Vec::new();
    let mut pending = Vec::new();
    for (ti, target) in targets.iter().enumerate() {
        keys.push(format!("{target}/csv"));
        let h = target.horizon;
        if source.lookback < 2 * h + 2 {
            return Err(ChartError::Config(format!(
                "lookback {} is too short for horizon {h}",
                source.lookback
            )));
        }
        let mut start = 0;
        while start + source.lookback + h <= series.len() {
            let window = series[start..start + source.lookback + h].to_vec();
            let global = pending.len();
            pending.push(Pending {
                stratum: ti,
                target: *target,
                series: window,
                lookback: source.lookback,
                tags: SampleTags {
                    difficulty: None,
                    style,
                    length: source.lookback,
                    frequency: cfg.frequencies[0].clone(),
                    features: cfg.features.clone(),
                    continuation: None,
                    source: format!("csv:{}@{start}", source.path.display()),
                },
                seed: mix_seed(cfg.seed, global as u64),
            });
            start += stride;
        }
    }
    write_samples(cfg, &keys, pending, out_dir)
}

fn write_samples(
    cfg: &GenConfig,
    keys: &[String],
    pending: Vec<Pending>,
    out_dir: &Path,
) -> Result<DatasetManifest, ChartError> {
    let images = out_dir.join("images");
    let series_dir = out_dir.join("series");
    for dir in [out_dir, &images, &series_dir] {
        fs::create_dir_all(dir).map_err(|e| ChartError::io(dir, e))?;
    }

    // stratified split: a seeded shuffle inside each stratum
    let mut by_stratum: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, p) in pending.iter().enumerate() {
        by_stratum.entry(p.stratum).or_default().push(i);
    }
    let mut splits = vec![Split::Train; pending.len()];
    let mut counts = vec![(0usize, 0usize); keys.len()];
    for (&s, members) in &by_stratum {
        let mut order = members.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed ^ 0x5EED_5EED, s as u64));
        order.shuffle(&mut rng);
        let n_test = (members.len() as f64 * cfg.test_fraction).round() as usize;
        for &i in &order[..n_test] {
            splits[i] = Split::Test;
        }
    }

    let manifest_path = out_dir.join(MANIFEST_FILE);
    let mut out =
        fs::File::create(&manifest_path).map_err(|e| ChartError::io(&manifest_path, e))?;
    let mut records = Vec::with_capacity(pending.len());
    for (i, p) in pending.into_iter().enumerate() {
        let label = label_sample(&p.series, p.lookback - 1, p.target)?;
        let image = render_chart_with(
            &p.series[..p.lookback],
            p.tags.style,
            &p.tags.features,
            cfg.image_height,
            cfg.image_width,
        )?;
        let record = ManifestRecord {
            image_path: format!("images/{i:06}.pgm"),
            quantity: p.target.quantity,
            horizon: p.target.horizon,
            label,
            split: splits[i],
            tags: p.tags,
            seed: p.seed,
        };
        image.write_pgm(&out_dir.join(&record.image_path))?;
        let series_path = out_dir.join(record.series_path());
        let mut text = String::with_capacity(p.series.len() * 20);
        for v in &p.series {
            text.push_str(&format!("{v:?}\n"));
        }
        fs::write(&series_path, text).map_err(|e| ChartError::io(&series_path, e))?;
        let line = serde_json::to_string(&record).expect("record serialises");
        writeln!(out, "{line}").map_err(|e| ChartError::io(&manifest_path, e))?;
        match splits[i] {
            Split::Train => counts[p.stratum].0 += 1,
            Split::Test => counts[p.stratum].1 += 1,
        }
        records.push(record);
    }
    out.flush().map_err(|e| ChartError::io(&manifest_path, e))?;

    let manifest = DatasetManifest {
        seed: cfg.seed,
        total: records.len(),
        strata: keys
            .iter()
            .zip(&counts)
            .map(|(k, &(train, test))| StratumCount {
                stratum: k.clone(),
                train,
                test,
            })
            .collect(),
        records,
        warnings: Vec::new(),
    };
    let summary_path = out_dir.join(SUMMARY_FILE);
    let summary = serde_json::to_string_pretty(&manifest).expect("summary serialises");
    fs::write(&summary_path, summary + "\n").map_err(|e| ChartError::io(&summary_path, e))?;
    Ok(manifest)
}

/// Reads the manifest without touching images or series.
pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestRecord>, ChartError> {
    let path = dir.join(MANIFEST_FILE);
    let file = fs::File::open(&path).map_err(|e| ChartError::io(&path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ChartError::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord =
            serde_json::from_str(&line).map_err(|e| ChartError::Manifest {
                path: path.clone(),
                line: i + 1,
                message: e.to_string(),
            })?;
        TargetSpec::new(record.quantity, record.horizon).map_err(|e| ChartError::Manifest {
            path: path.clone(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Loads every sample, checking that each image exists and that each stored
/// label agrees with the label recomputed from its stored continuation.
pub fn load_dataset(dir: &Path) -> Result<Dataset, ChartError> {
    let records = read_manifest(dir)?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut samples = Vec::with_capacity(records.len());
    for (index, record) in records.into_iter().enumerate() {
        let image = GrayImage::read_pgm(&dir.join(&record.image_path))?;
        let series_path = dir.join(record.series_path());
        let text = fs::read_to_string(&series_path).map_err(|e| ChartError::io(&series_path, e))?;
        let series: Vec<f64> = text
            .lines()
            .map(|l| l.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| ChartError::Manifest {
                path: series_path.clone(),
                line: 0,
                message: e.to_string(),
            })?;
        let lookback = record.tags.length;
        let bad = |message: String| ChartError::Manifest {
            path: manifest_path.clone(),
            line: index + 1,
            message,
        };
        if lookback == 0 || series.len() < lookback + record.horizon {
            return Err(bad(format!(
                "series has {} points, need lookback {lookback} + horizon {}",
                series.len(),
                record.horizon
            )));
        }
        let recomputed = label_sample(&series, lookback - 1, record.target())?;
        if recomputed != record.label {
            return Err(bad(format!(
                "stored label {} disagrees with continuation ({recomputed})",
                record.label
            )));
        }
        samples.push(Sample {
            index,
            record,
            image,
            series,
            lookback,
        });
    }
    Ok(Dataset {
        dir: dir.to_path_buf(),
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> GenConfig {
        GenConfig {
            seed: 11,
            styles: vec![Style::LineThin, Style::FilledArea],
            length_buckets: vec![[32, 200]],
            difficulties: vec![Difficulty::Learnable],
            per_stratum: 10,
            ..GenConfig::default()
        }
    }

    #[test]
    fn counts_match_strata() {
        let dir = tempfile::tempdir().unwrap();
        let m = build_dataset(&small_config(), dir.path()).unwrap();
        assert_eq!(m.total, 120);
        assert_eq!(m.strata.len(), 12);
        for s in &m.strata {
            assert_eq!(s.train + s.test, 10);
            assert_eq!(s.test, 2);
        }
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.samples.len(), 120);
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        build_dataset(&small_config(), a.path()).unwrap();
        build_dataset(&small_config(), b.path()).unwrap();
        for f in [
            MANIFEST_FILE,
            SUMMARY_FILE,
            "images/000042.pgm",
            "series/000042.txt",
        ] {
            assert_eq!(
                fs::read(a.path().join(f)).unwrap(),
                fs::read(b.path().join(f)).unwrap(),
                "{f}"
            );
        }
    }

    #[test]
    fn zero_count_stratum_warns() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GenConfig {
            strata: vec![StratumSpec {
                quantity: Quantity::Price,
                horizon: 5,
                length: [32, 64],
                style: Style::LineThin,
                difficulty: Difficulty::Noise,
                count: 0,
            }],
            ..small_config()
        };
        let m = build_dataset(&cfg, dir.path()).unwrap();
        assert_eq!(m.total, 0);
        assert_eq!(m.warnings.len(), 1);
    }

    #[test]
    fn unwritable_output_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, b"x").unwrap();
        let err = build_dataset(&small_config(), &blocker.join("sub")).unwrap_err();
        assert!(matches!(err, ChartError::Io { .. }), "{err}");
    }

    #[test]
    fn tampered_label_is_caught_on_load() {
        let dir = tempfile::tempdir().unwrap();
        build_dataset(&small_config(), dir.path()).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).unwrap();
        let first = text.lines().next().unwrap();
        let flipped = if first.contains("\"label\":\"up\"") {
            first.replace("\"label\":\"up\"", "\"label\":\"down\"")
        } else {
            first.replace("\"label\":\"down\"", "\"label\":\"up\"")
        };
        fs::write(&path, text.replacen(first, &flipped, 1)).unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("disagrees"), "{err}");
    }

    #[test]
    fn learnable_reversal_flips_the_last_regime() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GenConfig {
            quantities: vec![Quantity::Price],
            continuation: Continuation::Reversal,
            ..small_config()
        };
        build_dataset(&cfg, dir.path()).unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        for s in &ds.samples {
            let t = s.lookback - 1;
            let last_up = s.series[t] > s.series[t - 1];
            assert_eq!(s.label() == Direction::Up, !last_up);
        }
    }

    #[test]
    fn learnable_volatility_label_follows_the_visible_step() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GenConfig {
            quantities: vec![Quantity::Volatility],
            per_stratum: 20,
            ..small_config()
        };
        build_dataset(&cfg, dir.path()).unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        let mut agree = 0;
        for s in &ds.samples {
            let v = s.visible();
            let q = v.len() / 4;
            let early = crate::chart::realized_volatility(v, 0, q);
            let late = crate::chart::realized_volatility(v, v.len() - 1 - q, v.len() - 1);
            agree += usize::from((late > early) == (s.label() == Direction::Up));
        }
        // label noise comes only from short-window volatility estimates
        assert!(
            agree * 100 >= ds.samples.len() * 95,
            "{agree}/{}",
            ds.samples.len()
        );
    }
}
