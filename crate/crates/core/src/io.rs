//! Dataset CSV: columns `x1..xd, w, y` and `delta` for Cox families.

use std::io::{Read, Write};

use crate::error::{DinaError, Result};
use crate::model::{Dataset, Family, Matrix};

pub fn write_dataset<W: Write>(data: &Dataset, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (1..=data.d()).map(|j| format!("x{j}")).collect();
    header.push("w".into());
    header.push("y".into());
    if data.delta.is_some() {
        header.push("delta".into());
    }
    wtr.write_record(&header)?;
    for i in 0..data.n() {
        let mut rec: Vec<String> = data.x.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(data.w[i].to_string());
        rec.push(data.y[i].to_string());
        if let Some(d) = &data.delta {
            rec.push(d[i].to_string());
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

fn column(header: &csv::StringRecord, name: &str) -> Result<usize> {
    header.iter().position(|h| h.trim() == name).ok_or_else(|| DinaError::MissingColumn(name.into()))
}

/// Parses a dataset for `family`. `n_arms` defaults to one more than the largest treatment index.
pub fn read_dataset<R: Read>(input: R, family: &Family, n_arms: Option<usize>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = rdr.headers()?.clone();
    let mut xcols: Vec<(usize, usize)> = header
        .iter()
        .enumerate()
        .filter_map(|(c, h)| h.strip_prefix('x').and_then(|k| k.parse::<usize>().ok()).map(|k| (k, c)))
        .collect();
    xcols.sort_unstable();
    if xcols.is_empty() {
        return Err(DinaError::MissingColumn("x1".into()));
    }
    if let Some(j) = (1..=xcols.len()).find(|&j| xcols[j - 1].0 != j) {
        return Err(DinaError::MissingColumn(format!("x{j}")));
    }
    let wc = column(&header, "w")?;
    let yc = column(&header, "y")?;
    let dc = if family.is_cox() { Some(column(&header, "delta")?) } else { None };

    let d = xcols.len();
    let mut xs = Vec::new();
    let (mut w, mut y, mut delta) = (Vec::new(), Vec::new(), Vec::new());
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec.map_err(|e| DinaError::Parse { row, column: "-".into(), message: e.to_string() })?;
        let field = |c: usize| -> Result<&str> {
            rec.get(c).ok_or_else(|| DinaError::Parse { row, column: header[c].to_string(), message: "missing field".into() })
        };
        let real = |c: usize| -> Result<f64> {
            let s = field(c)?;
            s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| DinaError::Parse {
                row,
                column: header[c].to_string(),
                message: format!("expected a finite number, found {s:?}"),
            })
        };
        for &(_, c) in &xcols {
            xs.push(real(c)?);
        }
        let ws = field(wc)?;
        w.push(ws.parse::<usize>().map_err(|_| DinaError::Parse {
            row,
            column: "w".into(),
            message: format!("expected a treatment index, found {ws:?}"),
        })?);
        y.push(real(yc)?);
        if let Some(c) = dc {
            let s = field(c)?;
            delta.push(match s {
                "0" => 0,
                "1" => 1,
                _ => {
                    return Err(DinaError::Parse { row, column: "delta".into(), message: format!("expected 0 or 1, found {s:?}") })
                }
            });
        }
    }
    let n = y.len();
    if n == 0 {
        return Err(DinaError::Parse { row: 0, column: "-".into(), message: "no data rows".into() });
    }
    let k = n_arms.unwrap_or_else(|| w.iter().max().map_or(2, |m| (m + 1).max(2)));
    Dataset::new(family.clone(), Matrix::new(n, d, xs)?, w, y, dc.map(|_| delta), k)
}
