//! Long-format structural-function tables.
//!
//! Each file starts with `#` lines describing its contents, followed by the
//! columns `x,index,value,lo,hi,kind`. The ASF has no index and leaves that
//! field empty, as do `lo` and `hi` when there are no bands. Numbers are
//! written in shortest round-trip form, so a table re-parses to the same
//! estimate bit for bit.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use cvsf_core::structural::Bands;
use cvsf_core::{Kind, StructuralFunctionEstimate};

use crate::failure::Failure;

pub const TABLE_HEADER: [&str; 6] = ["x", "index", "value", "lo", "hi", "kind"];

fn partial_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    path.with_file_name(name)
}

/// Writes through `<path>.partial` and renames on success, so a complete
/// file never coexists with a half-written one under the final name.
pub fn write_atomic(
    path: &Path,
    write: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
) -> Result<(), Failure> {
    let partial = partial_path(path);
    let result = (|| {
        let mut file = std::io::BufWriter::new(fs::File::create(&partial)?);
        write(&mut file)?;
        file.flush()?;
        drop(file);
        fs::rename(&partial, path)
    })();
    result.map_err(|e| Failure::Data(format!("cannot write {}: {e}", path.display())))
}

fn index_label(kind: Kind) -> &'static str {
    match kind {
        Kind::Dsf => "y",
        Kind::Qsf => "p",
        Kind::Asf => "none",
    }
}

fn write_tables(
    out: &mut dyn Write,
    tables: &[&StructuralFunctionEstimate],
) -> std::io::Result<()> {
    writeln!(out, "# cvsf structural function table")?;
    for t in tables {
        write!(
            out,
            "# kind={} x_points={} index={} index_points={}",
            t.kind,
            t.x_grid.len(),
            index_label(t.kind),
            t.index_grid.len()
        )?;
        match &t.bands {
            Some(b) => writeln!(out, " band_level={}", b.level)?,
            None => writeln!(out)?,
        }
    }
    let mut csv = csv::Writer::from_writer(out);
    csv.write_record(TABLE_HEADER)?;
    let kind_ = |k: Kind| k.to_string();
    for t in tables {
        for (i, x) in t.x_grid.iter().enumerate() {
            for (j, value) in t.values[i].iter().enumerate() {
                let index = t.index_grid.get(j).map_or(String::new(), f64::to_string);
                let (lo, hi) = match &t.bands {
                    Some(b) => (b.lower[i][j].to_string(), b.upper[i][j].to_string()),
                    None => (String::new(), String::new()),
                };
                csv.write_record([
                    x.to_string(),
                    index,
                    value.to_string(),
                    lo,
                    hi,
                    kind_(t.kind),
                ])?;
            }
        }
    }
    csv.flush()?;
    Ok(())
}

pub fn write_table(path: &Path, tables: &[&StructuralFunctionEstimate]) -> Result<(), Failure> {
    write_atomic(path, |w| write_tables(w, tables))
}

/// Same layout as [`write_table`] for a single estimate.
pub fn emit_plot_data(estimate: &StructuralFunctionEstimate, path: &Path) -> Result<(), Failure> {
    write_table(path, &[estimate])
}

fn parse_f64(field: &str, what: &str, line: usize) -> Result<f64, Failure> {
    field
        .parse()
        .map_err(|_| Failure::Data(format!("line {line}: bad {what} `{field}`")))
}

/// Parses a table written by [`write_table`], one estimate per kind in file
/// order.
pub fn read_table(path: &Path) -> Result<Vec<StructuralFunctionEstimate>, Failure> {
    let file = fs::File::open(path)
        .map_err(|e| Failure::Data(format!("cannot read {}: {e}", path.display())))?;
    // kind -> (index points, band level)
    let mut layout: Vec<(Kind, usize, Option<f64>)> = Vec::new();
    let mut comment_lines = 0;
    let mut reader = BufReader::new(file);
    let mut header = String::new();
    let mut body = String::new();
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        if let Some(meta) = line.strip_prefix('#') {
            comment_lines += 1;
            let fields: Vec<(&str, &str)> = meta
                .split_whitespace()
                .filter_map(|f| f.split_once('='))
                .collect();
            let kind = fields.iter().find(|(k, _)| *k == "kind").map(|(_, v)| *v);
            let points = fields
                .iter()
                .find(|(k, _)| *k == "index_points")
                .map(|(_, v)| *v);
            let level = fields
                .iter()
                .find(|(k, _)| *k == "band_level")
                .map(|(_, v)| *v);
            if let (Some(k), Some(p)) = (kind, points) {
                let kind: Kind = k.parse().map_err(|e| Failure::Data(format!("{e}")))?;
                let points = p.parse().map_err(|_| {
                    Failure::Data(format!("line {comment_lines}: bad index_points `{p}`"))
                })?;
                let level = level
                    .map(|l| parse_f64(l, "band level", comment_lines))
                    .transpose()?;
                layout.push((kind, points, level));
            }
        } else if header.is_empty() {
            header = line;
        } else {
            body.push_str(&line);
        }
    }
    if header.trim_end() != TABLE_HEADER.join(",") {
        return Err(Failure::Data(format!(
            "{}: expected header `{}`",
            path.display(),
            TABLE_HEADER.join(",")
        )));
    }

    let mut tables: Vec<StructuralFunctionEstimate> = Vec::new();
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(body.as_bytes());
    for (row, record) in csv.records().enumerate() {
        let line = comment_lines + row + 2;
        let r = record.map_err(|e| Failure::Data(format!("line {line}: {e}")))?;
        if r.len() != 6 {
            return Err(Failure::Data(format!(
                "line {line}: expected 6 fields, found {}",
                r.len()
            )));
        }
        let kind: Kind = r[5]
            .parse()
            .map_err(|e| Failure::Data(format!("line {line}: {e}")))?;
        let x = parse_f64(&r[0], "x", line)?;
        let index = if r[1].is_empty() {
            None
        } else {
            Some(parse_f64(&r[1], "index", line)?)
        };
        let value = parse_f64(&r[2], "value", line)?;
        let band = match (&r[3], &r[4]) {
            ("", "") => None,
            (lo, hi) => Some((parse_f64(lo, "lo", line)?, parse_f64(hi, "hi", line)?)),
        };
        if tables.last().is_none_or(|t| t.kind != kind) {
            if tables.iter().any(|t| t.kind == kind) {
                return Err(Failure::Data(format!(
                    "line {line}: rows of `{kind}` are not contiguous"
                )));
            }
            let Some(&(_, _, level)) = layout.iter().find(|(k, _, _)| *k == kind) else {
                return Err(Failure::Data(format!(
                    "line {line}: `{kind}` is not described in the header"
                )));
            };
            tables.push(StructuralFunctionEstimate {
                kind,
                x_grid: Vec::new(),
                index_grid: Vec::new(),
                values: Vec::new(),
                bands: level.map(|level| Bands {
                    level,
                    lower: Vec::new(),
                    upper: Vec::new(),
                }),
            });
        }
        let t = tables.last_mut().unwrap();
        let width = layout
            .iter()
            .find(|(k, _, _)| *k == kind)
            .map_or(1, |l| l.1.max(1));
        if t.values.last().is_none_or(|row| row.len() == width) {
            t.x_grid.push(x);
            t.values.push(Vec::new());
            if let Some(b) = &mut t.bands {
                b.lower.push(Vec::new());
                b.upper.push(Vec::new());
            }
        }
        let i = t.x_grid.len() - 1;
        if t.x_grid[i] != x {
            return Err(Failure::Data(format!(
                "line {line}: x changes inside a row"
            )));
        }
        if i == 0 {
            if let Some(index) = index {
                t.index_grid.push(index);
            }
        }
        t.values[i].push(value);
        match (&mut t.bands, band) {
            (Some(b), Some((lo, hi))) => {
                b.lower[i].push(lo);
                b.upper[i].push(hi);
            }
            (None, None) => {}
            _ => {
                return Err(Failure::Data(format!(
                    "line {line}: band columns do not match the header's band level"
                )))
            }
        }
    }
    for t in &tables {
        let width = t.values.first().map_or(0, Vec::len);
        if t.values.iter().any(|row| row.len() != width)
            || t.index_grid.len() != width && t.kind != Kind::Asf
        {
            return Err(Failure::Data(format!(
                "`{}` table is not rectangular",
                t.kind
            )));
        }
    }
    Ok(tables)
}

/// Resamples an estimate onto `points` equally spaced x values spanning its
/// grid, by linear interpolation.
pub fn refine(
    estimate: &StructuralFunctionEstimate,
    points: usize,
) -> Result<StructuralFunctionEstimate, Failure> {
    let g = &estimate.x_grid;
    if g.is_empty() || points < 2 {
        return Ok(estimate.clone());
    }
    let (lo, hi) = (g[0], g[g.len() - 1]);
    let x_grid: Vec<f64> = (0..points)
        .map(|k| {
            if k + 1 == points {
                hi
            } else {
                lo + (hi - lo) * k as f64 / (points - 1) as f64
            }
        })
        .collect();
    let mut values = Vec::with_capacity(points);
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for &x in &x_grid {
        values.push(estimate.interpolate(x)?);
        if let Some((l, u)) = estimate.interpolate_bands(x)? {
            lower.push(l);
            upper.push(u);
        }
    }
    Ok(StructuralFunctionEstimate {
        kind: estimate.kind,
        x_grid,
        index_grid: estimate.index_grid.clone(),
        values,
        bands: estimate.bands.as_ref().map(|b| Bands {
            level: b.level,
            lower,
            upper,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qsf_table(bands: bool) -> StructuralFunctionEstimate {
        let values: Vec<Vec<f64>> = (0..5)
            .map(|i| vec![0.1 * i as f64, 0.1 * i as f64 + 1.0 / 3.0, 0.7 + i as f64])
            .collect();
        StructuralFunctionEstimate {
            kind: Kind::Qsf,
            x_grid: vec![-1.5, 0.0, 1e-7, 1e-7, 3.0],
            index_grid: vec![0.25, 0.5, 0.75],
            bands: bands.then(|| Bands {
                level: 0.9,
                lower: values
                    .iter()
                    .map(|r| r.iter().map(|v| v - 0.1).collect())
                    .collect(),
                upper: values
                    .iter()
                    .map(|r| r.iter().map(|v| v + 0.2).collect())
                    .collect(),
            }),
            values,
        }
    }

    #[test]
    fn plot_data_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("qsf.csv");
        let qsf = qsf_table(true);
        emit_plot_data(&qsf, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 16);
        assert!(!dir.path().join("qsf.csv.partial").exists());
        assert_eq!(read_table(&path).unwrap(), vec![qsf]);
    }

    #[test]
    fn asf_rows_leave_index_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let asf = StructuralFunctionEstimate {
            kind: Kind::Asf,
            x_grid: vec![1.0, 2.0],
            index_grid: vec![],
            values: vec![vec![0.5], vec![0.75]],
            bands: None,
        };
        let qsf = qsf_table(false);
        write_table(&path, &[&qsf, &asf]).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.lines().any(|l| l == "1,,0.5,,,asf"), "{text}");
        assert_eq!(read_table(&path).unwrap(), vec![qsf, asf]);
    }

    #[test]
    fn malformed_tables_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(
            &path,
            "# kind=qsf x_points=1 index_points=1\nx,index,value,lo,hi,kind\n1,0.5,abc,,,qsf\n",
        )
        .unwrap();
        let err = read_table(&path).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        fs::write(&path, "x,value\n").unwrap();
        assert!(read_table(&path).is_err());
    }

    #[test]
    fn refinement_keeps_grid_ends_and_monotonicity() {
        let fine = refine(&qsf_table(true), 41).unwrap();
        assert_eq!(fine.x_grid.len(), 41);
        assert_eq!(fine.x_grid[0], -1.5);
        assert_eq!(fine.x_grid[40], 3.0);
        for row in &fine.values {
            assert!(row.windows(2).all(|w| w[0] <= w[1]));
        }
        assert_eq!(fine.bands.as_ref().unwrap().lower.len(), 41);
    }
}
