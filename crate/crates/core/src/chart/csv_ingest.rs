use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ChartError;

/// Which CSV columns hold the timestamp and the close price.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnMap {
    pub timestamp: String,
    pub close: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            timestamp: "timestamp".into(),
            close: "close".into(),
        }
    }
}

fn compare_stamps(a: &str, b: &str) -> Ordering {
    match (a.trim().parse::<f64>(), b.trim().parse::<f64>()) {
        (Ok(x), Ok(y)) => x.partial_cmp(&y).unwrap_or(Ordering::Equal),
        _ => a.trim().cmp(b.trim()),
    }
}

/// Reads the close column in file order. Data rows are numbered from 1.
pub fn ingest_csv(path: &Path, columns: &ColumnMap) -> Result<Vec<f64>, ChartError> {
    let fail = |message: String| ChartError::Csv {
        path: path.to_path_buf(),
        message,
    };
    let file = std::fs::File::open(path).map_err(|e| ChartError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(file);
    let headers = match reader.headers() {
        Ok(h) => h.clone(),
        Err(e) => return Err(fail(e.to_string())),
    };
    if headers.is_empty() {
        return Err(fail("no data rows".into()));
    }
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| fail(format!("missing column {name:?}")))
    };
    let ts_col = find(&columns.timestamp)?;
    let close_col = find(&columns.close)?;

    let mut out = Vec::new();
    let mut prev: Option<String> = None;
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| fail(format!("row {row}: {e}")))?;
        let ts = record.get(ts_col).unwrap_or_default().to_string();
        if let Some(p) = &prev {
            if compare_stamps(p, &ts) != Ordering::Less {
                return Err(fail(format!(
                    "non-monotone timestamps at row {row}: {ts:?} does not follow {p:?}"
                )));
            }
        }
        let raw = record.get(close_col).unwrap_or_default();
        let value: f64 = raw.trim().parse().map_err(|_| {
            fail(format!(
                "row {row}, column {:?}: cannot parse {raw:?} as a number",
                columns.close
            ))
        })?;
        if !value.is_finite() || value <= 0.0 {
            return Err(fail(format!(
                "row {row}, column {:?}: close must be positive and finite",
                columns.close
            )));
        }
        out.push(value);
        prev = Some(ts);
    }
    if out.is_empty() {
        return Err(fail("no data rows".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn reads_close_in_file_order() {
        let f = file("timestamp,open,close\n1,1,10.5\n2,1,11\n3,1,9.25\n");
        let s = ingest_csv(f.path(), &ColumnMap::default()).unwrap();
        assert_eq!(s, vec![10.5, 11.0, 9.25]);
    }

    #[test]
    fn non_monotone_timestamp_reports_row() {
        let f = file("timestamp,close\n2,1\n1,1\n3,1\n");
        let err = ingest_csv(f.path(), &ColumnMap::default())
            .unwrap_err()
            .to_string();
        assert!(err.contains("row 2"), "{err}");
    }

    #[test]
    fn empty_file_has_no_data_rows() {
        let f = file("");
        let err = ingest_csv(f.path(), &ColumnMap::default())
            .unwrap_err()
            .to_string();
        assert!(err.contains("no data rows"), "{err}");
        let f = file("timestamp,close\n");
        let err = ingest_csv(f.path(), &ColumnMap::default())
            .unwrap_err()
            .to_string();
        assert!(err.contains("no data rows"), "{err}");
    }

    #[test]
    fn missing_column_and_bad_number() {
        let f = file("time,close\n1,2\n");
        let err = ingest_csv(f.path(), &ColumnMap::default())
            .unwrap_err()
            .to_string();
        assert!(err.contains("missing column \"timestamp\""), "{err}");
        let f = file("timestamp,close\n1,2\n2,abc\n");
        let err = ingest_csv(f.path(), &ColumnMap::default())
            .unwrap_err()
            .to_string();
        assert!(err.contains("row 2") && err.contains("close"), "{err}");
    }

    #[test]
    fn iso_dates_compare_lexicographically() {
        let f = file("timestamp,close\n2024-01-02,1\n2024-01-03,2\n");
        assert_eq!(
            ingest_csv(f.path(), &ColumnMap::default()).unwrap().len(),
            2
        );
    }
}
