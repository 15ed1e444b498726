//! Curve datasets as CSV.
//!
//! ```text
//! grid,t1,t2,…,tm
//! y1,x11,x12,…,x1m
//! y2,x21,x22,…,x2m
//! ```
//!
//! Files with several predictors repeat the block once per predictor, each
//! introduced by a `predictor:<r>` row (`r` counts from 1). Every block must
//! carry the same grid and the same responses. Lines starting with `#` are
//! comments. Numbers are written with 17 significant digits so that a write
//! followed by a read reproduces every value exactly.

use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use funcnet_core::data::{CurveSet, ResponseKind};
use funcnet_core::grid::Grid;
use funcnet_core::linalg::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How to read the response column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseChoice {
    /// Binary when every response is 0 or 1, continuous otherwise.
    #[default]
    Auto,
    Continuous,
    Binary,
}

impl FromStr for ResponseChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "auto" => Ok(ResponseChoice::Auto),
            "continuous" => Ok(ResponseChoice::Continuous),
            "binary" => Ok(ResponseChoice::Binary),
            other => Err(Error::Config(format!(
                "unknown response kind '{other}' (expected auto, continuous, binary)"
            ))),
        }
    }
}

/// A parsed file.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub data: CurveSet,
    /// The original `[first, last]` grid range when it was mapped onto `[0, 1]`.
    pub rescaled_from: Option<(f64, f64)>,
}

struct Block {
    marker_row: Option<usize>,
    grid_row: usize,
    grid: Vec<f64>,
    responses: Vec<f64>,
    /// `(row number, values)` of each data row.
    rows: Vec<(usize, Vec<f64>)>,
}

fn parse_error(origin: &str, row: usize, column: usize, message: impl fmt::Display) -> Error {
    Error::Parse {
        origin: origin.to_string(),
        row,
        column,
        message: message.to_string(),
    }
}

fn number(origin: &str, row: usize, column: usize, field: &str) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| parse_error(origin, row, column, format!("'{field}' is not a number")))?;
    if !v.is_finite() {
        return Err(parse_error(origin, row, column, format!("'{field}' is not finite")));
    }
    Ok(v)
}

fn marker_index(field: &str) -> Option<&str> {
    let lower = field.trim();
    lower
        .get(..10)
        .filter(|p| p.eq_ignore_ascii_case("predictor:"))
        .map(|_| lower[10..].trim())
}

/// Reads a dataset from any reader; `origin` names it in diagnostics.
pub fn parse_dataset(reader: impl Read, origin: &str, response: ResponseChoice) -> Result<LoadedDataset> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut blocks: Vec<Block> = Vec::new();
    let mut pending_marker: Option<usize> = None;
    for record in csv.records() {
        let record = record.map_err(|e| {
            let row = e.position().map_or(0, |p| p.line() as usize);
            parse_error(origin, row, 1, e)
        })?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        let first = record.get(0).unwrap_or("");
        if record.len() == 1 && first.is_empty() {
            continue;
        }
        if let Some(idx) = marker_index(first) {
            if record.len() > 1 {
                return Err(parse_error(origin, row, 2, "a predictor marker row has a single field"));
            }
            let r: usize = idx
                .parse()
                .map_err(|_| parse_error(origin, row, 1, format!("bad predictor index '{idx}'")))?;
            if pending_marker.is_some() {
                return Err(parse_error(origin, row, 1, "predictor marker without a grid row"));
            }
            if r != blocks.len() + 1 {
                return Err(parse_error(
                    origin,
                    row,
                    1,
                    format!("expected predictor:{}, found predictor:{r}", blocks.len() + 1),
                ));
            }
            pending_marker = Some(row);
            continue;
        }
        if first.eq_ignore_ascii_case("grid") {
            if blocks.len() == 1 && blocks[0].marker_row.is_none() && pending_marker.is_none() {
                return Err(parse_error(
                    origin,
                    row,
                    1,
                    "a second grid row needs a predictor:<r> marker before it",
                ));
            }
            if !blocks.is_empty() && pending_marker.is_none() {
                return Err(parse_error(origin, row, 1, "grid row without a predictor:<r> marker"));
            }
            let grid = (1..record.len())
                .map(|c| number(origin, row, c + 1, &record[c]))
                .collect::<Result<Vec<f64>>>()?;
            if grid.len() < 2 {
                return Err(parse_error(origin, row, 2, "a grid needs at least 2 points"));
            }
            if let Some(c) = grid
                .windows(2)
                .position(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less))
            {
                return Err(Error::Format(format!(
                    "{origin}: row {row}, column {}: grid is not strictly increasing ({} then {})",
                    c + 3,
                    grid[c],
                    grid[c + 1]
                )));
            }
            blocks.push(Block {
                marker_row: pending_marker.take(),
                grid_row: row,
                grid,
                responses: Vec::new(),
                rows: Vec::new(),
            });
            continue;
        }
        if pending_marker.is_some() {
            return Err(parse_error(
                origin,
                row,
                1,
                "expected a grid row after the predictor marker",
            ));
        }
        let Some(block) = blocks.last_mut() else {
            return Err(parse_error(origin, row, 1, "data row before the grid row"));
        };
        let m = block.grid.len();
        if record.len() != m + 1 {
            return Err(parse_error(
                origin,
                row,
                if record.len() < m + 1 { record.len() + 1 } else { m + 2 },
                format!(
                    "expected {} fields (response + {m} curve values), found {}",
                    m + 1,
                    record.len()
                ),
            ));
        }
        let y = number(origin, row, 1, first)?;
        let values = (1..=m)
            .map(|c| number(origin, row, c + 1, &record[c]))
            .collect::<Result<Vec<f64>>>()?;
        block.responses.push(y);
        block.rows.push((row, values));
    }
    if let Some(row) = pending_marker {
        return Err(parse_error(origin, row, 1, "predictor marker at the end of the file"));
    }
    assemble(blocks, origin, response)
}

fn assemble(blocks: Vec<Block>, origin: &str, response: ResponseChoice) -> Result<LoadedDataset> {
    let Some(first) = blocks.first() else {
        return Err(Error::Format(format!("{origin}: no grid row found")));
    };
    if first.rows.is_empty() {
        return Err(Error::Format(format!(
            "{origin}: row {}: the grid has no data rows",
            first.grid_row
        )));
    }
    for (b, block) in blocks.iter().enumerate().skip(1) {
        if block.grid.len() != first.grid.len()
            || block.grid.iter().zip(&first.grid).any(|(a, c)| (a - c).abs() > 1e-12)
        {
            return Err(Error::Format(format!(
                "{origin}: row {}: predictor {} has a different grid from predictor 1",
                block.grid_row,
                b + 1
            )));
        }
        if block.rows.len() != first.rows.len() {
            return Err(Error::Format(format!(
                "{origin}: row {}: predictor {} has {} samples, predictor 1 has {}",
                block.marker_row.unwrap_or(block.grid_row),
                b + 1,
                block.rows.len(),
                first.rows.len()
            )));
        }
        if let Some(i) = block.responses.iter().zip(&first.responses).position(|(a, c)| a != c) {
            return Err(Error::Format(format!(
                "{origin}: row {}, column 1: response differs from predictor 1 (row {})",
                block.rows[i].0, first.rows[i].0
            )));
        }
    }

    let kind = match response {
        ResponseChoice::Continuous => ResponseKind::Continuous,
        ResponseChoice::Binary => {
            if let Some(i) = first.responses.iter().position(|&y| y != 0.0 && y != 1.0) {
                return Err(Error::Format(format!(
                    "{origin}: row {}, column 1: binary responses must be 0 or 1, found {}",
                    first.rows[i].0, first.responses[i]
                )));
            }
            ResponseKind::Binary
        }
        ResponseChoice::Auto => {
            if first.responses.iter().all(|&y| y == 0.0 || y == 1.0) {
                ResponseKind::Binary
            } else {
                ResponseKind::Continuous
            }
        }
    };

    let (lo, hi) = (first.grid[0], first.grid[first.grid.len() - 1]);
    let (points, rescaled_from) = if lo < 0.0 || hi > 1.0 {
        let span = hi - lo;
        let mut p: Vec<f64> = first.grid.iter().map(|t| (t - lo) / span).collect();
        let last = p.len() - 1;
        p[0] = 0.0;
        p[last] = 1.0;
        (p, Some((lo, hi)))
    } else {
        (first.grid.clone(), None)
    };
    let grid =
        Grid::from_points(points).map_err(|e| Error::Format(format!("{origin}: row {}: {e}", first.grid_row)))?;
    let m = grid.len();
    let predictors = blocks
        .iter()
        .map(|b| {
            Matrix::from_vec(
                b.rows.len(),
                m,
                b.rows.iter().flat_map(|(_, v)| v.iter().copied()).collect(),
            )
        })
        .collect::<funcnet_core::Result<Vec<Matrix>>>()?;
    let data = CurveSet::new(Arc::new(grid), predictors, first.responses.clone(), kind)?;
    Ok(LoadedDataset { data, rescaled_from })
}

pub fn read_dataset(path: &Path, response: ResponseChoice) -> Result<LoadedDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(io::BufReader::new(file), &path.display().to_string(), response)
}

fn write_row(w: &mut impl Write, head: &str, values: &[f64]) -> io::Result<()> {
    w.write_all(head.as_bytes())?;
    for v in values {
        write!(w, ",{v:.16e}")?;
    }
    w.write_all(b"\n")
}

/// Writes `data` in the CSV layout; marker rows appear only for several predictors.
pub fn write_dataset(w: &mut impl Write, data: &CurveSet) -> io::Result<()> {
    let points = data.grid().points();
    let multi = data.predictor_count() > 1;
    for (r, x) in data.predictors().iter().enumerate() {
        if multi {
            writeln!(w, "predictor:{}", r + 1)?;
        }
        write_row(w, "grid", points)?;
        for (i, y) in data.responses().iter().enumerate() {
            write_row(w, &format!("{y:.16e}"), x.row(i))?;
        }
    }
    Ok(())
}

pub fn save_dataset(path: &Path, data: &CurveSet) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_dataset(&mut w, data)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}
