//! On-disk formats: headerless numeric CSV for matrices and vectors, label
//! files (one entry per line), JSON dataset manifests with paths relative to
//! the manifest, prediction tables, and the benchmark report CSV.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write as _};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::MultiViewDataset;
use crate::error::{Error, Result};
use crate::metrics::{MetricsReport, MetricsRow, PerViewRow};

/// Write any serializable value as pretty JSON.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::parse(path, e.to_string()))?;
    out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read a JSON value, reporting the path of the offending field on type or
/// shape errors.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de)
        .map_err(|e| Error::parse(path, format!("{} at {}", e.inner(), e.path())))
}

fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write a matrix as headerless CSV, one row per line, full precision.
pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format_value(m[(i, j)])).collect();
        writeln!(out, "{}", row.join(",")).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Read a headerless CSV matrix; all rows must have the same width.
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|cell| {
                cell.trim().parse::<f64>().map_err(|_| {
                    Error::parse(path, format!("line {}: bad number {cell:?}", ln + 1))
                })
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::parse(
                    path,
                    format!(
                        "line {}: {} columns, expected {}",
                        ln + 1,
                        row.len(),
                        first.len()
                    ),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Ok(DMatrix::zeros(0, 0));
    }
    let ncols = rows[0].len();
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Write a vector as a single CSV column.
pub fn write_vector_csv(path: &Path, v: &DVector<f64>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for x in v.iter() {
        writeln!(out, "{}", format_value(*x)).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Read a single-column CSV as a vector.
pub fn read_vector_csv(path: &Path) -> Result<DVector<f64>> {
    let m = read_matrix_csv(path)?;
    if m.is_empty() {
        return Ok(DVector::zeros(0));
    }
    if m.ncols() != 1 {
        return Err(Error::parse(
            path,
            format!("expected one column, found {}", m.ncols()),
        ));
    }
    Ok(m.column(0).into_owned())
}

/// Write labels, one per line.
pub fn write_labels(path: &Path, labels: &[String]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for l in labels {
        writeln!(out, "{l}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Read labels, one per line; blank lines are skipped.
pub fn read_labels(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut labels = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if !trimmed.is_empty() {
            labels.push(trimmed.to_string());
        }
    }
    Ok(labels)
}

/// One view entry of a dataset manifest. Paths are relative to the manifest
/// file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestView {
    pub name: String,
    pub data: String,
    /// Optional label file with one feature name per line.
    #[serde(default)]
    pub features: Option<String>,
}

/// Covariate block of a dataset manifest.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestCovariates {
    pub data: String,
    #[serde(default)]
    pub names: Vec<String>,
}

/// JSON description of where a dataset's pieces live on disk.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub views: Vec<ManifestView>,
    #[serde(default)]
    pub covariates: Option<ManifestCovariates>,
    pub outcome: String,
    pub site: String,
    pub family: String,
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    base.join(rel)
}

/// Read a dataset through its manifest. Relative paths resolve against the
/// manifest's directory; missing feature-name files fall back to positional
/// names.
pub fn load_dataset(manifest_path: &Path) -> Result<MultiViewDataset> {
    let manifest: DatasetManifest = read_json(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut views = Vec::with_capacity(manifest.views.len());
    let mut view_names = Vec::with_capacity(manifest.views.len());
    let mut feature_names = Vec::with_capacity(manifest.views.len());
    for entry in &manifest.views {
        let data = read_matrix_csv(&resolve(base, &entry.data))?;
        let names = match &entry.features {
            Some(rel) => {
                let names = read_labels(&resolve(base, rel))?;
                if names.len() != data.ncols() {
                    return Err(Error::parse(
                        &resolve(base, rel),
                        format!(
                            "{} feature names for {} columns of view {}",
                            names.len(),
                            data.ncols(),
                            entry.name
                        ),
                    ));
                }
                names
            }
            None => (0..data.ncols())
                .map(|j| format!("{}_f{}", entry.name, j + 1))
                .collect(),
        };
        views.push(data);
        view_names.push(entry.name.clone());
        feature_names.push(names);
    }
    let (covariates, covariate_names) = match &manifest.covariates {
        Some(block) => {
            let w = read_matrix_csv(&resolve(base, &block.data))?;
            let names = if block.names.is_empty() {
                (0..w.ncols()).map(|c| format!("w{}", c + 1)).collect()
            } else {
                block.names.clone()
            };
            (Some(w), names)
        }
        None => (None, Vec::new()),
    };
    let outcome = read_vector_csv(&resolve(base, &manifest.outcome))?;
    let site = read_labels(&resolve(base, &manifest.site))?;
    let family = read_labels(&resolve(base, &manifest.family))?;
    let dataset = MultiViewDataset {
        views,
        view_names,
        feature_names,
        covariates,
        covariate_names,
        outcome,
        site,
        family,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Write a dataset into `dir` (created if needed) and return the path of the
/// manifest that ties the files together.
pub fn write_dataset(dir: &Path, dataset: &MultiViewDataset) -> Result<PathBuf> {
    dataset.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut views = Vec::with_capacity(dataset.views.len());
    for (m, view) in dataset.views.iter().enumerate() {
        let data_rel = format!("view{}.csv", m + 1);
        let feat_rel = format!("view{}_features.txt", m + 1);
        write_matrix_csv(&dir.join(&data_rel), view)?;
        write_labels(&dir.join(&feat_rel), &dataset.feature_names[m])?;
        views.push(ManifestView {
            name: dataset.view_names[m].clone(),
            data: data_rel,
            features: Some(feat_rel),
        });
    }
    let covariates = match &dataset.covariates {
        Some(w) if w.ncols() > 0 => {
            write_matrix_csv(&dir.join("covariates.csv"), w)?;
            Some(ManifestCovariates {
                data: "covariates.csv".into(),
                names: dataset.covariate_names.clone(),
            })
        }
        _ => None,
    };
    write_vector_csv(&dir.join("outcome.csv"), &dataset.outcome)?;
    write_labels(&dir.join("site.txt"), &dataset.site)?;
    write_labels(&dir.join("family.txt"), &dataset.family)?;
    let manifest = DatasetManifest {
        views,
        covariates,
        outcome: "outcome.csv".into(),
        site: "site.txt".into(),
        family: "family.txt".into(),
    };
    let manifest_path = dir.join("manifest.json");
    write_json(&manifest_path, &manifest)?;
    Ok(manifest_path)
}

/// Write predictions with their row labels: `row,site,family,y_hat`.
pub fn write_predictions(
    path: &Path,
    site: &[String],
    family: &[String],
    y_hat: &DVector<f64>,
) -> Result<()> {
    if site.len() != y_hat.len() || family.len() != y_hat.len() {
        return Err(Error::LengthMismatch {
            left: site.len(),
            right: y_hat.len(),
            context: "labels vs predictions".into(),
        });
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "row,site,family,y_hat").map_err(|e| Error::io(path, e))?;
    for i in 0..y_hat.len() {
        writeln!(
            out,
            "{},{},{},{}",
            i + 1,
            site[i],
            family[i],
            format_value(y_hat[i])
        )
        .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Read a predictions table back: (site, family, y_hat).
pub fn read_predictions(path: &Path) -> Result<(Vec<String>, Vec<String>, DVector<f64>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut site = Vec::new();
    let mut family = Vec::new();
    let mut y_hat = Vec::new();
    for (ln, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if ln == 0 {
            if line.trim() != "row,site,family,y_hat" {
                return Err(Error::parse(path, "expected header row,site,family,y_hat"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 4 {
            return Err(Error::parse(
                path,
                format!("line {}: expected 4 cells, found {}", ln + 1, cells.len()),
            ));
        }
        site.push(cells[1].to_string());
        family.push(cells[2].to_string());
        y_hat.push(cells[3].trim().parse::<f64>().map_err(|_| {
            Error::parse(path, format!("line {}: bad number {:?}", ln + 1, cells[3]))
        })?);
    }
    Ok((site, family, DVector::from_vec(y_hat)))
}

const REPORT_HEADER: &str = "scenario,method,replicate,mse,var_yhat,fpr,fnr,auc";
const PER_VIEW_HEADER: &str = "scenario,method,replicate,view,fpr,fnr,auc";

fn metric_cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.6}"),
        None => "NA".into(),
    }
}

/// Write the main benchmark report. A trailing `#` comment marks degenerate
/// sd rows when only one replicate ran.
pub fn write_report_csv(path: &Path, report: &MetricsReport) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "{REPORT_HEADER}").map_err(|e| Error::io(path, e))?;
    for row in &report.rows {
        writeln!(
            out,
            "{},{},{},{:.6},{:.6},{},{},{}",
            row.scenario,
            row.method,
            row.replicate,
            row.mse,
            row.var_yhat,
            metric_cell(row.fpr),
            metric_cell(row.fnr),
            metric_cell(row.auc),
        )
        .map_err(|e| Error::io(path, e))?;
    }
    if report.single_replicate {
        writeln!(out, "# single replicate: sd rows are degenerate (0)")
            .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Parse the report back; `#` comment lines are skipped and NA cells become
/// absent metrics.
pub fn read_report_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (ln, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if ln == 0 {
            if trimmed != REPORT_HEADER {
                return Err(Error::parse(
                    path,
                    format!("expected header {REPORT_HEADER}"),
                ));
            }
            continue;
        }
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let cells: Vec<&str> = trimmed.split(',').collect();
        if cells.len() != 8 {
            return Err(Error::parse(
                path,
                format!("line {}: expected 8 cells, found {}", ln + 1, cells.len()),
            ));
        }
        let num = |cell: &str| -> Result<f64> {
            cell.parse::<f64>()
                .map_err(|_| Error::parse(path, format!("line {}: bad number {cell:?}", ln + 1)))
        };
        let opt = |cell: &str| -> Result<Option<f64>> {
            if cell == "NA" {
                Ok(None)
            } else {
                num(cell).map(Some)
            }
        };
        rows.push(MetricsRow {
            scenario: cells[0].to_string(),
            method: cells[1].to_string(),
            replicate: cells[2].to_string(),
            mse: num(cells[3])?,
            var_yhat: num(cells[4])?,
            fpr: opt(cells[5])?,
            fnr: opt(cells[6])?,
            auc: opt(cells[7])?,
        });
    }
    Ok(rows)
}

/// Write kept-sweep traces as CSV, one row per kept state; the header is
/// sized from the first row.
pub fn write_trace_csv(path: &Path, rows: &[crate::sampler::TraceRow]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let first = match rows.first() {
        Some(first) => first,
        None => {
            writeln!(out, "sweep").map_err(|e| Error::io(path, e))?;
            return Ok(());
        }
    };
    let mut header = vec![
        "sweep".to_string(),
        "residual_var".into(),
        "site_var".into(),
        "family_var_mean".into(),
        "mu".into(),
        "outcome_components".into(),
    ];
    header.extend((0..first.alpha.len()).map(|l| format!("alpha{}", l + 1)));
    header.extend((0..first.beta.len()).map(|c| format!("beta{}", c + 1)));
    for m in 0..first.view_components.len() {
        header.push(format!("view{}_components", m + 1));
        header.push(format!("view{}_features", m + 1));
    }
    writeln!(out, "{}", header.join(",")).map_err(|e| Error::io(path, e))?;
    for row in rows {
        let mut cells = vec![
            row.sweep.to_string(),
            format_value(row.residual_var),
            format_value(row.site_var),
            format_value(row.family_var_mean),
            format_value(row.mu),
            row.outcome_components.to_string(),
        ];
        cells.extend(row.alpha.iter().map(|v| format_value(*v)));
        cells.extend(row.beta.iter().map(|v| format_value(*v)));
        for m in 0..row.view_components.len() {
            cells.push(row.view_components[m].to_string());
            cells.push(row.view_features[m].to_string());
        }
        writeln!(out, "{}", cells.join(",")).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Write the per-view selection breakdown.
pub fn write_per_view_csv(path: &Path, rows: &[PerViewRow]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "{PER_VIEW_HEADER}").map_err(|e| Error::io(path, e))?;
    for row in rows {
        writeln!(
            out,
            "{},{},{},{},{:.6},{:.6},{:.6}",
            row.scenario, row.method, row.replicate, row.view, row.fpr, row.fnr, row.auc
        )
        .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::append_summary_rows;

    fn tiny_dataset() -> MultiViewDataset {
        MultiViewDataset {
            views: vec![
                DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.5]),
                DMatrix::from_row_slice(4, 1, &[0.25, -0.5, 1.0 / 3.0, 9.0]),
            ],
            view_names: vec!["omics".into(), "clinical".into()],
            feature_names: vec![vec!["g1".into(), "g2".into()], vec!["c1".into()]],
            covariates: Some(DMatrix::from_row_slice(4, 1, &[0.1, 0.2, 0.3, 0.4])),
            covariate_names: vec!["age".into()],
            outcome: DVector::from_vec(vec![1.5, -2.25, 0.125, 3.0]),
            site: vec!["s1".into(), "s1".into(), "s2".into(), "s2".into()],
            family: vec!["f1".into(), "f1".into(), "f2".into(), "f2".into()],
        }
    }

    #[test]
    fn matrix_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = DMatrix::from_row_slice(
            2,
            3,
            &[1.0 / 3.0, -2.5e-300, 7.0, f64::MIN_POSITIVE, 1e300, -0.0],
        );
        write_matrix_csv(&path, &m).unwrap();
        let back = read_matrix_csv(&path).unwrap();
        assert_eq!(m.as_slice(), back.as_slice());
    }

    #[test]
    fn ragged_or_corrupt_matrix_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "1,2\n3\n").unwrap();
        assert!(matches!(read_matrix_csv(&path), Err(Error::Parse { .. })));
        std::fs::write(&path, "1,zzz\n").unwrap();
        assert!(matches!(read_matrix_csv(&path), Err(Error::Parse { .. })));
        assert!(matches!(
            read_matrix_csv(Path::new("/no/such/file.csv")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn dataset_round_trip_through_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let data = tiny_dataset();
        let manifest = write_dataset(dir.path(), &data).unwrap();
        let back = load_dataset(&manifest).unwrap();
        assert_eq!(back.view_names, data.view_names);
        assert_eq!(back.feature_names, data.feature_names);
        assert_eq!(back.views[0].as_slice(), data.views[0].as_slice());
        assert_eq!(back.views[1].as_slice(), data.views[1].as_slice());
        assert_eq!(
            back.covariates.as_ref().unwrap().as_slice(),
            data.covariates.as_ref().unwrap().as_slice()
        );
        assert_eq!(back.covariate_names, data.covariate_names);
        assert_eq!(back.outcome.as_slice(), data.outcome.as_slice());
        assert_eq!(back.site, data.site);
        assert_eq!(back.family, data.family);
    }

    #[test]
    fn manifest_reports_field_path_on_bad_json() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        std::fs::write(
            &path,
            r#"{"views": [{"name": "v", "data": 7}], "outcome": "o.csv", "site": "s", "family": "f"}"#,
        )
        .unwrap();
        let err = load_dataset(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("views[0].data"), "got: {msg}");
    }

    #[test]
    fn predictions_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pred.csv");
        let site = vec!["s1".to_string(), "s2".to_string()];
        let family = vec!["f1".to_string(), "f2".to_string()];
        let y_hat = DVector::from_vec(vec![0.1234567890123456, -7.5]);
        write_predictions(&path, &site, &family, &y_hat).unwrap();
        let (s, f, y) = read_predictions(&path).unwrap();
        assert_eq!(s, site);
        assert_eq!(f, family);
        assert_eq!(y.as_slice(), y_hat.as_slice());
    }

    #[test]
    fn report_round_trip_with_na_and_comment() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.csv");
        let mut report = MetricsReport::default();
        report.rows.push(MetricsRow {
            scenario: "2".into(),
            method: "pca2step".into(),
            replicate: "1".into(),
            mse: 1.25,
            var_yhat: 0.5,
            fpr: None,
            fnr: None,
            auc: None,
        });
        append_summary_rows(&mut report);
        write_report_csv(&path, &report).unwrap();
        let rows = read_report_csv(&path).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows[0].fpr.is_none());
        assert_eq!(rows[1].replicate, "mean");
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("# single replicate"));
    }
}
