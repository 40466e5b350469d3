//! Long-format CSV ingestion and export of balanced multidimensional panels.
//!
//! Each record holds one index tuple `(i_1, .., i_d)`, the outcome and the
//! regressors. Index labels are arbitrary strings, densified per dimension in
//! order of first appearance.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Most problem cells listed in a balance error.
const MAX_REPORTED_CELLS: usize = 10;

/// A balanced panel as tensors, with the labels of every index.
#[derive(Clone, Debug, PartialEq)]
pub struct PanelFrame {
    pub dim_names: Vec<String>,
    /// `levels[n][i]` is the label of 0-based index `i` in dimension `n`.
    pub levels: Vec<Vec<String>>,
    pub y_name: String,
    pub x_names: Vec<String>,
    pub y: Tensor,
    pub xs: Vec<Tensor>,
}

impl PanelFrame {
    pub fn sizes(&self) -> Vec<usize> {
        self.levels.iter().map(Vec::len).collect()
    }

    /// Label tuple of a 0-based cell.
    pub fn cell_label(&self, idx: &[usize]) -> Vec<&str> {
        idx.iter()
            .zip(&self.levels)
            .map(|(&i, lv)| lv[i].as_str())
            .collect()
    }
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::InvalidArgument(format!("column '{name}' not found in header")))
}

fn parse_value(field: &str, name: &str, line: usize) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("column '{name}' holds non-numeric value '{field}'"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("column '{name}' holds non-finite value '{field}'"),
        });
    }
    Ok(v)
}

fn describe(labels: &[Vec<String>], idx: &[usize]) -> String {
    let parts: Vec<&str> = idx
        .iter()
        .zip(labels)
        .map(|(&i, lv)| lv[i].as_str())
        .collect();
    format!("({})", parts.join(", "))
}

/// Reads a panel from any CSV source with a header row.
pub fn read_panel<R: Read>(
    source: R,
    index_cols: &[&str],
    y_col: &str,
    x_cols: &[&str],
) -> Result<PanelFrame> {
    if index_cols.len() < 2 {
        return Err(Error::InvalidArgument(
            "a panel needs at least two index columns".into(),
        ));
    }
    if x_cols.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one regressor column is required".into(),
        ));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let index_pos: Vec<usize> = index_cols
        .iter()
        .map(|c| column(&headers, c))
        .collect::<Result<_>>()?;
    let y_pos = column(&headers, y_col)?;
    let x_pos: Vec<usize> = x_cols
        .iter()
        .map(|c| column(&headers, c))
        .collect::<Result<_>>()?;

    let d = index_cols.len();
    let mut lookup: Vec<HashMap<String, usize>> = vec![HashMap::new(); d];
    let mut levels: Vec<Vec<String>> = vec![Vec::new(); d];
    let mut rows: Vec<(Vec<usize>, f64, Vec<f64>, usize)> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let mut idx = Vec::with_capacity(d);
        for (n, &p) in index_pos.iter().enumerate() {
            let label = record.get(p).unwrap_or("").trim().to_string();
            let next = levels[n].len();
            let i = *lookup[n].entry(label.clone()).or_insert_with(|| {
                levels[n].push(label);
                next
            });
            idx.push(i);
        }
        let field = |p: usize| record.get(p).unwrap_or("");
        let y = parse_value(field(y_pos), y_col, line)?;
        let x = x_pos
            .iter()
            .zip(x_cols)
            .map(|(&p, name)| parse_value(field(p), name, line))
            .collect::<Result<Vec<_>>>()?;
        rows.push((idx, y, x, line));
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument("the file has no data rows".into()));
    }

    let shape: Vec<usize> = levels.iter().map(Vec::len).collect();
    let total: usize = shape.iter().product();
    let offset = |idx: &[usize]| {
        let mut k = 0;
        let mut stride = 1;
        for (&i, &n) in idx.iter().zip(&shape) {
            k += i * stride;
            stride *= n;
        }
        k
    };
    let mut seen: Vec<Option<usize>> = vec![None; total];
    let mut problems = Vec::new();
    let mut problem_count = 0usize;
    for (idx, _, _, line) in &rows {
        let k = offset(idx);
        match seen[k] {
            Some(first) => {
                problem_count += 1;
                if problems.len() < MAX_REPORTED_CELLS {
                    problems.push(format!(
                        "duplicate cell {} on lines {first} and {line}",
                        describe(&levels, idx)
                    ));
                }
            }
            None => seen[k] = Some(*line),
        }
    }
    let mut idx = vec![0usize; d];
    for cell in &seen {
        if cell.is_none() {
            problem_count += 1;
            if problems.len() < MAX_REPORTED_CELLS {
                problems.push(format!("missing cell {}", describe(&levels, &idx)));
            }
        }
        for n in 0..d {
            idx[n] += 1;
            if idx[n] < shape[n] {
                break;
            }
            idx[n] = 0;
        }
    }
    if problem_count > 0 {
        let more = problem_count.saturating_sub(problems.len());
        let tail = if more > 0 {
            format!("; and {more} more")
        } else {
            String::new()
        };
        return Err(Error::UnbalancedPanel(format!(
            "{}{tail}",
            problems.join("; ")
        )));
    }

    let mut y = vec![0.0; total];
    let mut xs = vec![vec![0.0; total]; x_cols.len()];
    for (idx, yv, xv, _) in rows {
        let k = offset(&idx);
        y[k] = yv;
        for (col, v) in xs.iter_mut().zip(xv) {
            col[k] = v;
        }
    }
    Ok(PanelFrame {
        dim_names: index_cols.iter().map(|s| s.to_string()).collect(),
        levels,
        y_name: y_col.to_string(),
        x_names: x_cols.iter().map(|s| s.to_string()).collect(),
        y: Tensor::new(shape.clone(), y)?,
        xs: xs
            .into_iter()
            .map(|v| Tensor::new(shape.clone(), v))
            .collect::<Result<_>>()?,
    })
}

/// Reads a panel from a CSV file; see [`read_panel`].
pub fn load_panel_csv(
    path: impl AsRef<Path>,
    index_cols: &[&str],
    y_col: &str,
    x_cols: &[&str],
) -> Result<PanelFrame> {
    read_panel(File::open(path)?, index_cols, y_col, x_cols)
}

/// Writes a panel in long format with mode 0 varying fastest. Floats use the
/// shortest representation that parses back to the same bits.
pub fn write_panel<W: Write>(sink: W, frame: &PanelFrame) -> Result<()> {
    let shape = frame.y.shape().to_vec();
    for x in &frame.xs {
        if x.shape() != shape.as_slice() {
            return Err(Error::ShapeMismatch(
                "regressor and outcome shapes differ".into(),
            ));
        }
    }
    if frame.levels.len() != shape.len()
        || frame
            .levels
            .iter()
            .zip(&shape)
            .any(|(lv, &n)| lv.len() != n)
        || frame.dim_names.len() != shape.len()
        || frame.x_names.len() != frame.xs.len()
    {
        return Err(Error::ShapeMismatch(
            "labels do not match the tensor shape".into(),
        ));
    }
    let mut writer = csv::Writer::from_writer(sink);
    let mut header: Vec<&str> = frame.dim_names.iter().map(String::as_str).collect();
    header.push(&frame.y_name);
    header.extend(frame.x_names.iter().map(String::as_str));
    writer.write_record(&header)?;
    let mut idx = vec![0usize; shape.len()];
    for k in 0..frame.y.len() {
        let mut row: Vec<String> = frame
            .cell_label(&idx)
            .iter()
            .map(|s| s.to_string())
            .collect();
        row.push(format!("{}", frame.y.data()[k]));
        row.extend(frame.xs.iter().map(|x| format!("{}", x.data()[k])));
        writer.write_record(&row)?;
        for n in 0..shape.len() {
            idx[n] += 1;
            if idx[n] < shape[n] {
                break;
            }
            idx[n] = 0;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Wraps tensors with default names (`i1..id`, `y`, `x1..xK`) and 1-based
/// integer labels.
pub fn frame_from_tensors(y: &Tensor, xs: &[Tensor]) -> PanelFrame {
    let d = y.order();
    PanelFrame {
        dim_names: (1..=d).map(|n| format!("i{n}")).collect(),
        levels: y
            .shape()
            .iter()
            .map(|&n| (1..=n).map(|i| i.to_string()).collect())
            .collect(),
        y_name: "y".into(),
        x_names: (1..=xs.len()).map(|k| format!("x{k}")).collect(),
        y: y.clone(),
        xs: xs.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = "store,week,brand,q,p\n\
        a,1,u,1.5,2\n\
        b,1,u,2.5,3\n\
        a,2,u,3.5,4\n\
        b,2,u,4.5,5\n\
        a,1,v,5.5,6\n\
        b,1,v,6.5,7\n\
        a,2,v,7.5,8\n\
        b,2,v,8.5,9\n";

    #[test]
    fn complete_toy_file() {
        let f = read_panel(TOY.as_bytes(), &["store", "week", "brand"], "q", &["p"]).unwrap();
        assert_eq!(f.y.shape(), &[2, 2, 2]);
        assert_eq!(f.levels[0], vec!["a", "b"]);
        assert_eq!(f.y.get(&[1, 0, 1]), 6.5);
        assert_eq!(f.xs[0].get(&[0, 1, 1]), 8.0);
    }

    #[test]
    fn missing_cell_is_named() {
        let text: String = TOY
            .lines()
            .filter(|l| !l.starts_with("b,2,v"))
            .map(|l| format!("{l}\n"))
            .collect();
        let err =
            read_panel(text.as_bytes(), &["store", "week", "brand"], "q", &["p"]).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::UnbalancedPanel(_)));
        assert!(msg.contains("missing cell (b, 2, v)"), "{msg}");
    }

    #[test]
    fn duplicate_cell_is_named() {
        let text = format!("{TOY}a,1,u,9,9\n");
        let err =
            read_panel(text.as_bytes(), &["store", "week", "brand"], "q", &["p"]).unwrap_err();
        assert!(
            err.to_string()
                .contains("duplicate cell (a, 1, u) on lines 2 and 10"),
            "{err}"
        );
    }

    #[test]
    fn non_numeric_field_reports_line() {
        let text = TOY.replace("6.5", "six");
        let err =
            read_panel(text.as_bytes(), &["store", "week", "brand"], "q", &["p"]).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 7),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn missing_column() {
        let err =
            read_panel(TOY.as_bytes(), &["store", "week", "brand"], "q", &["price"]).unwrap_err();
        assert!(err.to_string().contains("price"));
    }

    #[test]
    fn export_roundtrip_is_bit_identical() {
        let y = Tensor::from_fn(&[3, 2, 4], |i| {
            (i[0] as f64 + 0.1).sqrt() * std::f64::consts::PI - i[2] as f64 / 3.0
        })
        .unwrap();
        let x = y.map(|v| v.exp() * 1e-7);
        let frame = frame_from_tensors(&y, &[x]);
        let mut buf = Vec::new();
        write_panel(&mut buf, &frame).unwrap();
        let back = read_panel(buf.as_slice(), &["i1", "i2", "i3"], "y", &["x1"]).unwrap();
        assert_eq!(back, frame);
    }
}
