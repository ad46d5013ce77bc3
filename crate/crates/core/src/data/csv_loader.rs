use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SpatialDataset;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::spatial::{CoordinateSet, LatLon};

/// Which CSV columns hold what. Columns are matched by header name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    pub target: String,
    #[serde(default)]
    pub features: Vec<String>,
    pub latitude: String,
    pub longitude: String,
}

fn is_missing(cell: &str) -> bool {
    matches!(
        cell.trim().to_ascii_lowercase().as_str(),
        "" | "na" | "nan" | "null" | "none"
    )
}

/// Reads a headed, comma-separated UTF-8 file. Rows with a missing field
/// (empty, `NA`, `NaN`, `null`) are dropped and counted; any other
/// non-numeric cell is an error.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<SpatialDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(Error::Schema(format!(
            "{} has no header row",
            path.as_ref().display()
        )));
    }
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column `{name}` not found")))
    };
    let target = find(&schema.target)?;
    let lat = find(&schema.latitude)?;
    let lon = find(&schema.longitude)?;
    let features = schema
        .features
        .iter()
        .map(|f| find(f))
        .collect::<Result<Vec<_>>>()?;

    let mut wanted = vec![target, lat, lon];
    wanted.extend(&features);
    let names: Vec<&str> = wanted.iter().map(|&c| &headers[c]).collect();

    let p = features.len();
    let (mut y, mut x, mut points) = (Vec::new(), Vec::new(), Vec::new());
    let mut dropped = 0;
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let cells: Vec<&str> = wanted.iter().map(|&c| record.get(c).unwrap_or("")).collect();
        if cells.iter().any(|c| is_missing(c)) {
            dropped += 1;
            continue;
        }
        let mut values = Vec::with_capacity(cells.len());
        for (cell, name) in cells.iter().zip(&names) {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: name.to_string(),
                value: cell.to_string(),
            })?;
            values.push(v);
        }
        y.push(values[0]);
        let point = LatLon {
            lat: values[1],
            lon: values[2],
        };
        point
            .validate()
            .map_err(|e| Error::Validation(format!("row {row}: {e}")))?;
        points.push(point);
        x.extend_from_slice(&values[3..]);
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} row(s) with missing fields");
    }
    let n = y.len();
    let mut ds = SpatialDataset::new(
        y,
        Tensor::new(n, p, x)?,
        CoordinateSet::new(points)?,
        schema.features.clone(),
    )?;
    ds.dropped_rows = dropped;
    Ok(ds)
}
