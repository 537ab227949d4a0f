//! Evaluation protocol: per-target accuracy tables, confidence terciles,
//! the naive trend-extension baseline and accuracy-vs-step comparisons.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::chart::{
    realized_volatility, ChartError, Dataset, Difficulty, Direction, Quantity, Sample, Split,
    TargetSpec, HORIZONS,
};
use crate::policy::{greedy, load_checkpoint, PolicyError, PolicyParams};
use crate::reward::parse_output;

#[cfg(test)]
mod tests;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Dataset(#[from] ChartError),
    #[error("series of length {len} is too short for trend window {k}")]
    SeriesTooShort { len: usize, k: usize },
    #[error("trend window must be at least 1")]
    ZeroWindow,
    #[error("confidence grouping needs at least 3 records, got {0}")]
    TooFewRecords(usize),
    #[error("policy images are {expected:?}, dataset image {path} is {actual:?}")]
    ImageSize {
        path: String,
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("{path}: row {row}: {message}")]
    Csv {
        path: PathBuf,
        row: usize,
        message: String,
    },
    #[error("{path}: duplicated step {step} at row {row}")]
    DuplicateStep {
        path: PathBuf,
        step: u64,
        row: usize,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Trend extension: up iff `series[t] > series[t - k]` at the last index;
/// ties are down.
pub fn naive_predict(series: &[f64], k: usize) -> Result<Direction, EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroWindow);
    }
    if series.len() <= k {
        return Err(EvalError::SeriesTooShort {
            len: series.len(),
            k,
        });
    }
    let t = series.len() - 1;
    Ok(if series[t] > series[t - k] {
        Direction::Up
    } else {
        Direction::Down
    })
}

/// The naive baseline on a sample's visible series with `k` = horizon.
/// Volatility targets extend the trend of the trailing realized-volatility
/// series (window `k`).
pub fn naive_sample(sample: &Sample) -> Result<Direction, EvalError> {
    let visible = sample.visible();
    let target = sample.target();
    let k = target.horizon;
    match target.quantity {
        Quantity::Price => naive_predict(visible, k),
        Quantity::Volatility => {
            if visible.len() <= 2 * k {
                return Err(EvalError::SeriesTooShort {
                    len: visible.len(),
                    k: 2 * k,
                });
            }
            let vols: Vec<f64> = (k..visible.len())
                .map(|t| realized_volatility(visible, t - k, t))
                .collect();
            naive_predict(&vols, k)
        }
    }
}

/// One evaluated sample.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub sample: usize,
    pub target: TargetSpec,
    pub difficulty: Option<Difficulty>,
    pub label: Direction,
    /// Absent when the output is not format-valid.
    pub prediction: Option<Direction>,
    /// 0 for invalid outputs.
    pub confidence: u32,
    pub correct: bool,
}

pub const RECORDS_HEADER: &str =
    "sample,quantity,horizon,difficulty,label,prediction,confidence,correct";

impl EvalRecord {
    /// Scores a decoded output; invalid outputs are wrong with confidence 0.
    pub fn from_output(sample: &Sample, tokens: &[usize]) -> Self {
        let parsed = parse_output(tokens);
        let (prediction, confidence) = if parsed.format_valid {
            (parsed.direction, parsed.confidence.unwrap_or(0))
        } else {
            (None, 0)
        };
        Self {
            sample: sample.index,
            target: sample.target(),
            difficulty: sample.record.tags.difficulty,
            label: sample.label(),
            prediction,
            confidence,
            correct: prediction == Some(sample.label()),
        }
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.sample,
            self.target.quantity,
            self.target.horizon,
            match self.difficulty {
                Some(Difficulty::Learnable) => "learnable",
                Some(Difficulty::Noise) => "noise",
                None => "",
            },
            self.label,
            self.prediction.map_or("invalid", Direction::as_str),
            self.confidence,
            u8::from(self.correct)
        )
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Cell {
    pub correct: usize,
    pub total: usize,
}

impl Cell {
    /// Percent correct; `None` for an empty cell.
    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| 100.0 * self.correct as f64 / self.total as f64)
    }
}

/// Accuracy per (quantity, horizon), rows in `Quantity::ALL` order and
/// columns in `HORIZONS` order.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub decoding: String,
    pub cells: [[Cell; 3]; 2],
}

fn quantity_row(q: Quantity) -> usize {
    Quantity::ALL.iter().position(|&x| x == q).expect("listed")
}

impl EvalReport {
    pub fn from_records(records: &[EvalRecord], decoding: &str) -> Self {
        let mut cells = [[Cell::default(); 3]; 2];
        for r in records {
            let c = &mut cells[quantity_row(r.target.quantity)][r.target.horizon_index()];
            c.total += 1;
            c.correct += usize::from(r.correct);
        }
        Self {
            decoding: decoding.into(),
            cells,
        }
    }

    pub fn accuracy(&self, target: TargetSpec) -> Option<f64> {
        self.cells[quantity_row(target.quantity)][target.horizon_index()].accuracy()
    }

    /// Mean of the non-empty horizon columns.
    pub fn average(&self, quantity: Quantity) -> Option<f64> {
        let accs: Vec<f64> = self.cells[quantity_row(quantity)]
            .iter()
            .filter_map(Cell::accuracy)
            .collect();
        (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
    }

    pub fn total(&self) -> Cell {
        let mut t = Cell::default();
        for c in self.cells.iter().flatten() {
            t.correct += c.correct;
            t.total += c.total;
        }
        t
    }

    /// Eight values in table order: Volatility 5/21/63/Avg, Price 5/21/63/Avg.
    pub fn row(&self) -> [Option<f64>; 8] {
        let mut out = [None; 8];
        for (qi, &q) in Quantity::ALL.iter().enumerate() {
            for (hi, cell) in self.cells[qi].iter().enumerate() {
                out[qi * 4 + hi] = cell.accuracy();
            }
            out[qi * 4 + 3] = self.average(q);
        }
        out
    }
}

fn fmt_pct(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".into(), |v| format!("{v:.2}"))
}

pub const REPORT_HEADER: &str = "model,volatility_5,volatility_21,volatility_63,volatility_avg,\
price_5,price_21,price_63,price_avg";

/// Accuracy rows (percent, two decimals) followed by one `n` row of
/// per-cell sample counts, where the Avg columns hold the row totals.
pub fn report_csv(rows: &[(&str, &EvalReport)]) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for (name, report) in rows {
        let cells: Vec<String> = report.row().iter().map(|&v| fmt_pct(v)).collect();
        let _ = writeln!(out, "{name},{}", cells.join(","));
    }
    if let Some((_, report)) = rows.first() {
        let mut counts = Vec::new();
        for row in &report.cells {
            counts.extend(row.iter().map(|c| c.total.to_string()));
            counts.push(row.iter().map(|c| c.total).sum::<usize>().to_string());
        }
        let _ = writeln!(out, "n,{}", counts.join(","));
    }
    out
}

/// Markdown table with one row per model: Volatility 5/21/63/Avg and
/// Price 5/21/63/Avg accuracy in percent, then each row's decoding.
pub fn table1_markdown(rows: &[(&str, &EvalReport)]) -> String {
    let mut out = String::new();
    let hs: Vec<String> = HORIZONS.iter().map(|h| h.to_string()).collect();
    let _ = writeln!(
        out,
        "| Model | Volatility {} | Volatility {} | Volatility {} | Volatility Avg | Price {} | Price {} | Price {} | Price Avg |",
        hs[0], hs[1], hs[2], hs[0], hs[1], hs[2]
    );
    let _ = writeln!(out, "|---|---:|---:|---:|---:|---:|---:|---:|---:|");
    for (name, report) in rows {
        let cells: Vec<String> = report.row().iter().map(|&v| fmt_pct(v)).collect();
        let _ = writeln!(out, "| {name} | {} |", cells.join(" | "));
    }
    if let Some((_, report)) = rows.first() {
        let decoding: Vec<String> = rows
            .iter()
            .map(|(name, r)| format!("{name} {}", r.decoding))
            .collect();
        let _ = writeln!(
            out,
            "\nDecoding: {}. Test samples: {}.",
            decoding.join(", "),
            report.total().total
        );
    }
    out
}

/// Runs `decode` on every sample of `split` in index order.
pub fn evaluate_with(
    dataset: &Dataset,
    split: Split,
    mut decode: impl FnMut(&Sample) -> Result<Vec<usize>, EvalError>,
) -> Result<Vec<EvalRecord>, EvalError> {
    dataset
        .split(split)
        .into_iter()
        .map(|i| {
            let s = &dataset.samples[i];
            Ok(EvalRecord::from_output(s, &decode(s)?))
        })
        .collect()
}

/// Greedy decoding of every sample in `split`.
pub fn evaluate(
    params: &PolicyParams,
    dataset: &Dataset,
    split: Split,
    max_len: usize,
) -> Result<(EvalReport, Vec<EvalRecord>), EvalError> {
    let cfg = params.config();
    let expected = (cfg.image_height, cfg.image_width);
    for s in &dataset.samples {
        let actual = (s.image.height(), s.image.width());
        if actual != expected {
            return Err(EvalError::ImageSize {
                path: s.record.image_path.clone(),
                expected,
                actual,
            });
        }
    }
    let records = evaluate_with(dataset, split, |s| {
        Ok(greedy(params, &s.image, s.target(), max_len)?.tokens)
    })?;
    Ok((EvalReport::from_records(&records, "greedy"), records))
}

/// Loads the checkpoint before touching any sample.
pub fn evaluate_checkpoint(
    checkpoint: &Path,
    dataset: &Dataset,
    split: Split,
    max_len: usize,
) -> Result<(EvalReport, Vec<EvalRecord>), EvalError> {
    let params = load_checkpoint(checkpoint)?;
    evaluate(&params, dataset, split, max_len)
}

/// The naive baseline scored like a policy that always answers with
/// confidence 100.
pub fn evaluate_naive(
    dataset: &Dataset,
    split: Split,
) -> Result<(EvalReport, Vec<EvalRecord>), EvalError> {
    let records = evaluate_with(dataset, split, |s| {
        Ok(crate::reward::format_answer(&[], naive_sample(s)?, 100))
    })?;
    Ok((EvalReport::from_records(&records, "naive"), records))
}

pub fn records_csv(records: &[EvalRecord]) -> String {
    let mut out = format!("{RECORDS_HEADER}\n");
    for r in records {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GroupStat {
    pub count: usize,
    pub correct: usize,
    pub mean_confidence: f64,
}

impl GroupStat {
    pub fn accuracy(&self) -> Option<f64> {
        Cell {
            correct: self.correct,
            total: self.count,
        }
        .accuracy()
    }
}

/// Confidence terciles; `high` is always the most confident third.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceGroups {
    pub low: GroupStat,
    pub middle: GroupStat,
    pub high: GroupStat,
    /// Sample indices per group, in sorted order: high, middle, low.
    pub members: [Vec<usize>; 3],
}

pub const GROUP_NAMES: [&str; 3] = ["Low", "Middle", "High"];

impl ConfidenceGroups {
    /// Low, Middle, High.
    pub fn stats(&self) -> [GroupStat; 3] {
        [self.low, self.middle, self.high]
    }
}

/// Sorts by confidence descending (ties by sample index), then cuts into
/// three groups whose sizes differ by at most one; remainders go to the
/// earlier, more confident groups.
pub fn confidence_grouping(records: &[EvalRecord]) -> Result<ConfidenceGroups, EvalError> {
    let n = records.len();
    if n < 3 {
        return Err(EvalError::TooFewRecords(n));
    }
    let mut order: Vec<&EvalRecord> = records.iter().collect();
    order.sort_by(|a, b| {
        b.confidence
            .cmp(&a.confidence)
            .then(a.sample.cmp(&b.sample))
    });
    let sizes = [
        n / 3 + usize::from(n % 3 > 0),
        n / 3 + usize::from(n % 3 > 1),
        n / 3,
    ];
    let mut stats = [GroupStat::default(); 3];
    let mut members: [Vec<usize>; 3] = Default::default();
    let mut it = order.into_iter();
    for g in 0..3 {
        let mut conf = 0.0;
        for r in it.by_ref().take(sizes[g]) {
            stats[g].count += 1;
            stats[g].correct += usize::from(r.correct);
            conf += f64::from(r.confidence);
            members[g].push(r.sample);
        }
        stats[g].mean_confidence = conf / stats[g].count as f64;
    }
    Ok(ConfidenceGroups {
        high: stats[0],
        middle: stats[1],
        low: stats[2],
        members,
    })
}

pub const GROUPS_HEADER: &str = "group,count,correct,accuracy,mean_confidence";

/// Three rows: Low, Middle, High.
pub fn groups_csv(groups: &ConfidenceGroups) -> String {
    let mut out = format!("{GROUPS_HEADER}\n");
    for (name, g) in GROUP_NAMES.iter().zip(groups.stats()) {
        let _ = writeln!(
            out,
            "{name},{},{},{},{:.2}",
            g.count,
            g.correct,
            fmt_pct(g.accuracy()),
            g.mean_confidence
        );
    }
    out
}

/// Markdown table with one row per model: Low/Middle/High accuracy.
pub fn table2_markdown(rows: &[(&str, &ConfidenceGroups)]) -> String {
    let mut out =
        String::from("| Model | Low (%) | Middle (%) | High (%) |\n|---|---:|---:|---:|\n");
    for (name, g) in rows {
        let cells: Vec<String> = g.stats().iter().map(|s| fmt_pct(s.accuracy())).collect();
        let _ = writeln!(out, "| {name} | {} |", cells.join(" | "));
    }
    out
}

/// Relative improvement of `value` over `reference`, in percent.
pub fn relative_improvement(value: f64, reference: f64) -> f64 {
    (value / reference - 1.0) * 100.0
}

pub const REPORT_FILE: &str = "report.csv";
pub const RECORDS_FILE: &str = "records.csv";
pub const GROUPS_FILE: &str = "groups.csv";
pub const TABLE1_FILE: &str = "table1.md";
pub const TABLE2_FILE: &str = "table2.md";

/// Writes the report, per-sample records and Table 1 into `dir`, plus the
/// terciles and Table 2 when there are at least 3 records. The naive row,
/// when given, precedes the model row.
pub fn write_eval_outputs(
    dir: &Path,
    model_name: &str,
    report: &EvalReport,
    records: &[EvalRecord],
    naive: Option<&EvalReport>,
) -> Result<Option<ConfidenceGroups>, EvalError> {
    let io = |path: PathBuf| move |source| EvalError::Io { path, source };
    std::fs::create_dir_all(dir).map_err(io(dir.to_path_buf()))?;
    let mut rows = Vec::new();
    if let Some(n) = naive {
        rows.push(("Naive", n));
    }
    rows.push((model_name, report));
    let groups = (records.len() >= 3)
        .then(|| confidence_grouping(records))
        .transpose()?;
    let mut files = vec![
        (REPORT_FILE, report_csv(&rows)),
        (RECORDS_FILE, records_csv(records)),
        (TABLE1_FILE, table1_markdown(&rows)),
    ];
    if let Some(g) = &groups {
        files.push((GROUPS_FILE, groups_csv(g)));
        files.push((TABLE2_FILE, table2_markdown(&[(model_name, g)])));
    }
    for (name, body) in files {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(io(path.clone()))?;
    }
    Ok(groups)
}

/// Reads `(global_step, column)` pairs from a metrics CSV.
pub fn read_metric_column(path: &Path, column: &str) -> Result<Vec<(u64, String)>, EvalError> {
    let csv_err = |row: usize, message: String| EvalError::Csv {
        path: path.to_path_buf(),
        row,
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => EvalError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => csv_err(1, format!("{other:?}")),
    })?;
    let headers = reader
        .headers()
        .map_err(|e| csv_err(1, e.to_string()))?
        .clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| csv_err(1, format!("missing column {name:?}")))
    };
    let step_col = find("global_step")?;
    let value_col = find(column)?;
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| csv_err(row, e.to_string()))?;
        let step = rec
            .get(step_col)
            .and_then(|s| s.parse::<u64>().ok())
            .ok_or_else(|| csv_err(row, "global_step is not an integer".into()))?;
        let value = rec.get(value_col).unwrap_or("").to_string();
        out.push((step, value));
    }
    Ok(out)
}

/// One CSV with a `global_step` column and one column per run. Steps are
/// the union over runs; a run without a step leaves a blank.
pub fn compare_runs(runs: &[(String, PathBuf)], column: &str) -> Result<String, EvalError> {
    let mut table: BTreeMap<u64, Vec<Option<String>>> = BTreeMap::new();
    for (k, (_, path)) in runs.iter().enumerate() {
        let mut seen = BTreeMap::new();
        for (i, (step, value)) in read_metric_column(path, column)?.into_iter().enumerate() {
            if seen.insert(step, ()).is_some() {
                return Err(EvalError::DuplicateStep {
                    path: path.clone(),
                    step,
                    row: i + 2,
                });
            }
            table.entry(step).or_insert_with(|| vec![None; runs.len()])[k] = Some(value);
        }
    }
    let names: Vec<&str> = runs.iter().map(|(n, _)| n.as_str()).collect();
    let mut out = format!("global_step,{}\n", names.join(","));
    for (step, values) in table {
        let cells: Vec<String> = values.into_iter().map(Option::unwrap_or_default).collect();
        let _ = writeln!(out, "{step},{}", cells.join(","));
    }
    Ok(out)
}
