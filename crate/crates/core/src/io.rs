//! File formats.
//!
//! Matrices are read and written as header-less numeric CSV (one line per
//! row) or as JSON `{"rows": r, "cols": c, "data": [row-major values]}`.
//! Labels are one integer per line. Everything else is written as CSV with
//! a header row; floats use Rust's shortest round-trip formatting so output
//! is byte-stable.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path as FsPath;

use crate::embedding::SignalReport;
use crate::error::{Error, Result};
use crate::model::{Decomposition, Matrix, Path};
use crate::simulation::{CurvePoint, ErrorTable};

fn io_err(path: &FsPath) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &FsPath) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Parse {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

fn parse_err(path: &FsPath, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

fn create(path: &FsPath) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn open(path: &FsPath) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(io_err(path))
}

/// Parses header-less numeric CSV. `origin` names the source in errors.
pub fn parse_matrix_csv(reader: impl Read, origin: &FsPath) -> Result<Matrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(csv_err(origin))?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(j, field)| {
                field
                    .parse::<f64>()
                    .map_err(|_| parse_err(origin, format!("line {}, field {}: {field:?} is not a number", i + 1, j + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(
                    origin,
                    format!("line {} has {} fields, expected {}", i + 1, row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(origin, "no rows"));
    }
    Matrix::from_rows(&rows).map_err(|e| parse_err(origin, e.to_string()))
}

pub fn read_matrix_csv(path: impl AsRef<FsPath>) -> Result<Matrix> {
    let path = path.as_ref();
    parse_matrix_csv(open(path)?, path)
}

pub fn write_matrix_csv(path: impl AsRef<FsPath>, m: &Matrix) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    format_matrix_csv(&mut out, m).map_err(io_err(path))?;
    out.flush().map_err(io_err(path))
}

/// Writes `m` as header-less CSV.
pub fn format_matrix_csv(out: &mut impl Write, m: &Matrix) -> std::io::Result<()> {
    for i in 0..m.rows() {
        let line: Vec<String> = m.row(i).iter().map(f64::to_string).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn read_matrix_json(path: impl AsRef<FsPath>) -> Result<Matrix> {
    let path = path.as_ref();
    serde_json::from_reader(open(path)?).map_err(|e| parse_err(path, e.to_string()))
}

pub fn write_matrix_json(path: impl AsRef<FsPath>, m: &Matrix) -> Result<()> {
    write_json(path, m)
}

/// Reads a matrix as JSON when the extension is `.json`, CSV otherwise.
pub fn read_matrix(path: impl AsRef<FsPath>) -> Result<Matrix> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("json") => read_matrix_json(path),
        _ => read_matrix_csv(path),
    }
}

/// Pretty-printed JSON followed by a newline.
pub fn write_json(path: impl AsRef<FsPath>, value: &impl serde::Serialize) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| parse_err(path, e.to_string()))?;
    writeln!(out).and_then(|_| out.flush()).map_err(io_err(path))
}

/// One nonnegative integer per line; blank lines are skipped.
pub fn parse_labels(reader: impl BufRead, origin: &FsPath) -> Result<Vec<usize>> {
    let mut labels = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(origin))?;
        let field = line.trim();
        if field.is_empty() {
            continue;
        }
        labels.push(
            field
                .parse()
                .map_err(|_| parse_err(origin, format!("line {}: {field:?} is not a class label", i + 1)))?,
        );
    }
    Ok(labels)
}

pub fn read_labels(path: impl AsRef<FsPath>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    parse_labels(open(path)?, path)
}

pub fn write_labels(path: impl AsRef<FsPath>, labels: &[usize]) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    for l in labels {
        writeln!(out, "{l}").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

fn finish<W: Write>(wtr: csv::Writer<W>, path: &FsPath) -> Result<()> {
    wtr.into_inner()
        .map_err(|e| parse_err(path, e.to_string()))?
        .flush()
        .map_err(io_err(path))
}

fn csv_writer(path: &FsPath) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

/// Long-format path: one line per entry that is nonzero in `B`, `Γ` or `B̃`
/// or changed since the previous recorded point.
pub fn write_path_csv(path: impl AsRef<FsPath>, p: &Path) -> Result<()> {
    let path = path.as_ref();
    let mut wtr = csv_writer(path)?;
    let err = csv_err(path);
    wtr.write_record(["t", "column_index", "row_index", "B", "Gamma", "Btilde"]).map_err(&err)?;
    let mut prev: Option<&crate::model::PathPoint> = None;
    for point in &p.points {
        for j in 0..point.b.cols() {
            for i in 0..point.b.rows() {
                let vals = [point.b[(i, j)], point.gamma[(i, j)], point.btilde[(i, j)]];
                let changed = prev.is_some_and(|q| [q.b[(i, j)], q.gamma[(i, j)], q.btilde[(i, j)]] != vals);
                if changed || vals.iter().any(|v| *v != 0.0) {
                    wtr.write_record([
                        point.t.to_string(),
                        j.to_string(),
                        i.to_string(),
                        vals[0].to_string(),
                        vals[1].to_string(),
                        vals[2].to_string(),
                    ])
                    .map_err(&err)?;
                }
            }
        }
        prev = Some(point);
    }
    finish(wtr, path)
}

/// Dense JSON export of every recorded point; meant for small problems.
pub fn write_path_json(path: impl AsRef<FsPath>, p: &Path) -> Result<()> {
    write_json(path, p)
}

pub fn write_decomposition_csv(path: impl AsRef<FsPath>, d: &Decomposition) -> Result<()> {
    let path = path.as_ref();
    let mut wtr = csv_writer(path)?;
    let err = csv_err(path);
    wtr.write_record(["row_index", "column_index", "strong", "weak", "noise"]).map_err(&err)?;
    for j in 0..d.strong.cols() {
        for i in 0..d.strong.rows() {
            wtr.write_record([
                i.to_string(),
                j.to_string(),
                d.strong[(i, j)].to_string(),
                d.weak[(i, j)].to_string(),
                d.noise[(i, j)].to_string(),
            ])
            .map_err(&err)?;
        }
    }
    finish(wtr, path)
}

/// Method × σ grid of `mean ± sd` cells with four decimals.
pub fn write_table_csv(path: impl AsRef<FsPath>, table: &ErrorTable) -> Result<()> {
    let path = path.as_ref();
    let mut wtr = csv_writer(path)?;
    let err = csv_err(path);
    let mut header = vec!["method".to_string()];
    header.extend(table.sigmas.iter().map(|s| format!("sigma={s}")));
    wtr.write_record(&header).map_err(&err)?;
    for (method, cells) in table.methods.iter().zip(&table.cells) {
        let mut row = vec![method.label().to_string()];
        row.extend(cells.iter().map(|c| format!("{:.4} ± {:.4}", c.mean, c.sd)));
        wtr.write_record(&row).map_err(&err)?;
    }
    finish(wtr, path)
}

/// One line per method and σ with full-precision mean and sd.
pub fn write_table_long_csv(path: impl AsRef<FsPath>, table: &ErrorTable) -> Result<()> {
    let path = path.as_ref();
    let mut wtr = csv_writer(path)?;
    let err = csv_err(path);
    wtr.write_record(["method", "sigma", "mean", "sd", "trials"]).map_err(&err)?;
    for (method, cells) in table.methods.iter().zip(&table.cells) {
        for (sigma, c) in table.sigmas.iter().zip(cells) {
            wtr.write_record([
                method.label().to_string(),
                sigma.to_string(),
                c.mean.to_string(),
                c.sd.to_string(),
                c.per_trial.len().to_string(),
            ])
            .map_err(&err)?;
        }
    }
    finish(wtr, path)
}

pub fn write_curve_csv(path: impl AsRef<FsPath>, curve: &[CurvePoint]) -> Result<()> {
    let path = path.as_ref();
    let mut wtr = csv_writer(path)?;
    let err = csv_err(path);
    wtr.write_record(["t", "err_beta", "err_btilde", "err_mle"]).map_err(&err)?;
    for p in curve {
        wtr.write_record([p.t, p.err_beta, p.err_btilde, p.err_mle].map(|v| v.to_string()))
            .map_err(&err)?;
    }
    finish(wtr, path)
}

/// Ranked strong and weak signals, one line per entry.
pub fn write_signal_report_csv(path: impl AsRef<FsPath>, report: &SignalReport) -> Result<()> {
    let path = path.as_ref();
    let mut wtr = csv_writer(path)?;
    let err = csv_err(path);
    wtr.write_record(["target_class", "kind", "rank", "source_index", "weight"]).map_err(&err)?;
    for (j, col) in report.columns.iter().enumerate() {
        for (kind, list) in [("strong", &col.strong), ("weak", &col.weak)] {
            for (rank, s) in list.iter().enumerate() {
                wtr.write_record([
                    j.to_string(),
                    kind.to_string(),
                    (rank + 1).to_string(),
                    s.source.to_string(),
                    s.weight.to_string(),
                ])
                .map_err(&err)?;
            }
        }
    }
    finish(wtr, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn origin() -> &'static FsPath {
        FsPath::new("test.csv")
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = Matrix::from_rows(&[[1.5, -2.0, 0.1], [1e-17, 3.0, 1e300]]).unwrap();
        let p = dir.path().join("m.csv");
        write_matrix_csv(&p, &m).unwrap();
        assert_eq!(read_matrix(&p).unwrap(), m);
        let j = dir.path().join("m.json");
        write_matrix_json(&j, &m).unwrap();
        assert_eq!(read_matrix(&j).unwrap(), m);
    }

    #[test]
    fn csv_rejections() {
        assert!(parse_matrix_csv("1,2\n3\n".as_bytes(), origin()).is_err());
        assert!(parse_matrix_csv("1,x\n".as_bytes(), origin()).is_err());
        assert!(parse_matrix_csv("".as_bytes(), origin()).is_err());
        assert!(parse_matrix_csv("1,NaN\n".as_bytes(), origin()).is_err());
        let m = parse_matrix_csv(" 1 , 2\n\n3,4\n".as_bytes(), origin()).unwrap();
        assert_eq!(m.shape(), (2, 2));
    }

    #[test]
    fn json_shape_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.json");
        std::fs::write(&p, r#"{"rows":2,"cols":2,"data":[1,2,3]}"#).unwrap();
        assert!(read_matrix(&p).is_err());
    }

    #[test]
    fn labels() {
        assert_eq!(parse_labels("0\n2\n\n1\n".as_bytes(), origin()).unwrap(), vec![0, 2, 1]);
        assert!(parse_labels("0\n-1\n".as_bytes(), origin()).is_err());
        assert!(parse_labels("1.5\n".as_bytes(), origin()).is_err());
    }

    #[test]
    fn missing_file_names_path() {
        let err = read_labels("/nonexistent/labels.csv").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/labels.csv"), "{err}");
    }
}
