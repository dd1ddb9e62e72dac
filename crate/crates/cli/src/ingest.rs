//! CSV ingestion: one file per sample plus a `labels.csv` sidecar.
//!
//! Sample files hold a time column followed by one column per channel, with
//! an optional header row. The sidecar has a header with `file` and, for
//! classification, `label`; an optional `split` column (`train`, `val`,
//! `test`) fixes the partition.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};
use sharessm::data::{Dataset, SplitIndices, Targets};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSpec {
    /// Directory holding `labels.csv` and the sample files.
    pub path: PathBuf,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub n_channels: Option<usize>,
    #[serde(default)]
    pub seq_len: Option<usize>,
    /// Forecast targets `horizon` steps ahead (regression).
    #[serde(default)]
    pub horizon: Option<usize>,
    /// Channels to forecast; all channels when absent.
    #[serde(default)]
    pub target_channels: Option<Vec<usize>>,
}

fn data_err(path: &Path, line: usize, msg: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}:{line}: {msg}", path.display()))
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>, CliError> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Reads one series; returns `L x C` without the time column.
pub fn read_series(path: &Path) -> Result<Array2<f64>, CliError> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    let mut last_t = f64::NEG_INFINITY;
    for (i, rec) in reader(path)?.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| data_err(path, line, e))?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if i == 0 && rec.get(0).is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        let vals = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| data_err(path, line, format!("`{f}` is not a number")))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if vals.len() < 2 {
            return Err(data_err(path, line, "need a time column and at least one channel"));
        }
        if let Some((col, _)) = vals.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(data_err(path, line, format!("non-finite value in column {}", col + 1)));
        }
        match width {
            None => width = Some(vals.len()),
            Some(w) if w != vals.len() => {
                return Err(data_err(path, line, format!("{} fields, expected {w}", vals.len())));
            }
            _ => {}
        }
        if vals[0] <= last_t {
            return Err(data_err(path, line, "time index is not increasing"));
        }
        last_t = vals[0];
        rows.push(vals[1..].to_vec());
    }
    let c = width.ok_or_else(|| CliError::Data(format!("{}: no data rows", path.display())))? - 1;
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Array2::from_shape_vec((rows.len(), c), flat).expect("rows have equal width"))
}

#[derive(Debug)]
pub struct Ingested {
    pub dataset: Dataset,
    /// Partition given by the sidecar, if any.
    pub split: Option<SplitIndices>,
    /// Every file read, for hashing.
    pub files: Vec<PathBuf>,
}

pub fn ingest(spec: &CsvSpec, classification: bool) -> Result<Ingested, CliError> {
    let sidecar = spec.path.join("labels.csv");
    let mut rdr = reader(&sidecar)?;
    let mut records = rdr.records();
    let header = records
        .next()
        .ok_or_else(|| data_err(&sidecar, 1, "missing header"))?
        .map_err(|e| data_err(&sidecar, 1, e))?;
    let col = |name: &str| header.iter().position(|h| h.eq_ignore_ascii_case(name));
    let file_col = col("file").ok_or_else(|| data_err(&sidecar, 1, "no `file` column"))?;
    let label_col = col("label");
    let split_col = col("split");
    if classification && label_col.is_none() {
        return Err(data_err(&sidecar, 1, "classification needs a `label` column"));
    }

    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    let mut targets = Vec::new();
    let mut split = SplitIndices {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    let mut files = vec![sidecar.clone()];
    for (i, rec) in records.enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| data_err(&sidecar, line, e))?;
        if rec.len() != header.len() {
            return Err(data_err(
                &sidecar,
                line,
                format!("{} fields, expected {}", rec.len(), header.len()),
            ));
        }
        let file = spec.path.join(&rec[file_col]);
        let series = read_series(&file)?;
        if let Some(c) = spec.n_channels {
            if series.ncols() != c {
                return Err(CliError::Data(format!(
                    "{}: {} channels, manifest declares {c}",
                    file.display(),
                    series.ncols()
                )));
            }
        }
        if let Some(l) = spec.seq_len {
            if series.nrows() != l {
                return Err(CliError::Data(format!(
                    "{}: {} steps, manifest declares {l}",
                    file.display(),
                    series.nrows()
                )));
            }
        }
        let idx = inputs.len();
        if let Some(sc) = split_col {
            match rec[sc].to_ascii_lowercase().as_str() {
                "train" => split.train.push(idx),
                "val" | "valid" | "validation" => split.val.push(idx),
                "test" => split.test.push(idx),
                other => return Err(data_err(&sidecar, line, format!("unknown split `{other}`"))),
            }
        }
        if classification {
            let raw = &rec[label_col.expect("checked")];
            labels.push(
                raw.parse::<usize>()
                    .map_err(|_| data_err(&sidecar, line, format!("label `{raw}` is not a class index")))?,
            );
            inputs.push(series);
        } else {
            let h = spec
                .horizon
                .ok_or_else(|| CliError::Usage("regression from CSV needs data.horizon".into()))?;
            if series.nrows() <= h {
                return Err(CliError::Data(format!(
                    "{}: {} steps cannot forecast {h} ahead",
                    file.display(),
                    series.nrows()
                )));
            }
            let chans: Vec<usize> = spec
                .target_channels
                .clone()
                .unwrap_or_else(|| (0..series.ncols()).collect());
            if let Some(&bad) = chans.iter().find(|&&c| c >= series.ncols()) {
                return Err(CliError::Usage(format!("target channel {bad} out of range")));
            }
            let len = series.nrows() - h;
            let y = Array2::from_shape_fn((len, chans.len()), |(t, k)| series[[t + h, chans[k]]]);
            inputs.push(series.slice(s![..len, ..]).to_owned());
            targets.push(y);
        }
        files.push(file);
    }
    let t = if classification {
        Targets::Labels(labels)
    } else {
        Targets::Sequences(targets)
    };
    let dataset = Dataset::new(inputs, t).map_err(|e| CliError::Data(format!("{}: {e}", spec.path.display())))?;
    Ok(Ingested {
        dataset,
        split: split_col.map(|_| split),
        files,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) {
        fs::File::create(dir.join(name))
            .unwrap()
            .write_all(body.as_bytes())
            .unwrap();
    }

    #[test]
    fn toy_series_exact_values() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.csv", "t,x,y\n0,1.5,-2\n1,0.25,3\n2,7,8\n");
        let x = read_series(&dir.path().join("a.csv")).unwrap();
        assert_eq!(x, ndarray::array![[1.5, -2.0], [0.25, 3.0], [7.0, 8.0]]);
    }

    #[test]
    fn ragged_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.csv", "0,1,2\n1,3\n");
        let err = read_series(&dir.path().join("a.csv")).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
    }

    #[test]
    fn nan_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.csv", "0,1\n1,2\n2,NaN\n");
        let err = read_series(&dir.path().join("a.csv")).unwrap_err().to_string();
        assert!(err.contains(":3:"), "{err}");
    }

    #[test]
    fn sidecar_with_split_and_forecast() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.csv", "0,1\n1,2\n2,3\n3,4\n");
        write(dir.path(), "b.csv", "0,5\n1,6\n2,7\n3,8\n");
        write(
            dir.path(),
            "labels.csv",
            "file,label,split\na.csv,0,train\nb.csv,1,test\n",
        );
        let spec = CsvSpec {
            path: dir.path().to_path_buf(),
            name: None,
            n_channels: Some(1),
            seq_len: Some(4),
            horizon: Some(2),
            target_channels: None,
        };
        let c = ingest(&spec, true).unwrap();
        assert_eq!(c.split.as_ref().unwrap().test, vec![1]);
        assert_eq!(c.dataset.num_classes(), Some(2));
        let r = ingest(&spec, false).unwrap();
        let Targets::Sequences(y) = r.dataset.targets() else {
            panic!()
        };
        assert_eq!(y[0], ndarray::array![[3.0], [4.0]]);
        assert_eq!(r.dataset.inputs()[1], ndarray::array![[5.0], [6.0]]);
    }
}
