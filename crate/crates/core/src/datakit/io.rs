//! Directory format: `view_1.csv … view_V.csv` (header-free, one instance per
//! row), optional `mask.csv` (N×V of 0/1), optional `labels.csv` (N×1 of
//! 0..=3) and optional `provenance.json`.

use std::fs;
use std::path::Path;

use super::{MultiViewDataset, OutlierType, ProvenanceStep};
use crate::error::{Error, Result};
use crate::numeric::Matrix;

fn read_rows(path: &Path) -> Result<Vec<Vec<String>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::format(path, e.to_string()))?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        rows.push(record.iter().map(str::to_owned).collect());
    }
    Ok(rows)
}

fn parse_matrix(path: &Path) -> Result<Matrix> {
    let rows = read_rows(path)?;
    let mut parsed = Vec::with_capacity(rows.len());
    for (r, row) in rows.iter().enumerate() {
        let values = row
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| {
                        Error::format(path, format!("row {}, column {}: non-numeric cell {cell:?}", r + 1, c + 1))
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        parsed.push(values);
    }
    Matrix::from_rows(&parsed).map_err(|e| Error::format(path, e.to_string()))
}

/// Reads a dataset directory. Without `mask.csv` every view is present.
pub fn load_dataset(dir: &Path) -> Result<MultiViewDataset> {
    let mut views = Vec::new();
    loop {
        let path = dir.join(format!("view_{}.csv", views.len() + 1));
        if !path.exists() {
            break;
        }
        views.push(parse_matrix(&path)?);
    }
    if views.is_empty() {
        return Err(Error::format(dir, "no view_1.csv found"));
    }
    let n = views[0].rows();
    for (v, m) in views.iter().enumerate() {
        if m.rows() != n {
            return Err(Error::format(
                dir.join(format!("view_{}.csv", v + 1)),
                format!("row-count mismatch: {} rows, view_1.csv has {n}", m.rows()),
            ));
        }
    }

    let mask_path = dir.join("mask.csv");
    let presence = if mask_path.exists() {
        let rows = read_rows(&mask_path)?;
        if rows.len() != n {
            return Err(Error::format(&mask_path, format!("row-count mismatch: {} rows, expected {n}", rows.len())));
        }
        rows.iter()
            .enumerate()
            .map(|(r, row)| {
                if row.len() != views.len() {
                    return Err(Error::format(&mask_path, format!("row {} has {} columns, expected {}", r + 1, row.len(), views.len())));
                }
                row.iter()
                    .map(|cell| match cell.as_str() {
                        "1" => Ok(true),
                        "0" => Ok(false),
                        other => Err(Error::format(&mask_path, format!("row {}: mask value {other:?} is not 0 or 1", r + 1))),
                    })
                    .collect()
            })
            .collect::<Result<Vec<Vec<bool>>>>()?
    } else {
        vec![vec![true; views.len()]; n]
    };

    let labels_path = dir.join("labels.csv");
    let labels = if labels_path.exists() {
        let rows = read_rows(&labels_path)?;
        if rows.len() != n {
            return Err(Error::format(&labels_path, format!("row-count mismatch: {} rows, expected {n}", rows.len())));
        }
        Some(
            rows.iter()
                .enumerate()
                .map(|(r, row)| {
                    row.first()
                        .and_then(|c| c.parse::<u8>().ok())
                        .and_then(OutlierType::from_code)
                        .ok_or_else(|| Error::format(&labels_path, format!("row {}: label must be 0..=3", r + 1)))
                })
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };

    let provenance_path = dir.join("provenance.json");
    let mut provenance: Vec<ProvenanceStep> = if provenance_path.exists() {
        let text = fs::read_to_string(&provenance_path).map_err(|e| Error::io(&provenance_path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(&provenance_path, e.to_string()))?
    } else {
        Vec::new()
    };
    provenance.push(ProvenanceStep::Loaded {
        directory: dir.display().to_string(),
    });

    let mut ds = MultiViewDataset {
        views,
        presence,
        labels,
        provenance,
    };
    // zero absent rows so stored values never leak in
    for i in 0..n {
        for v in 0..ds.num_views() {
            if !ds.presence[i][v] {
                ds.views[v].row_mut(i).fill(0.0);
            }
        }
    }
    ds.validate().map_err(|e| Error::format(dir, e.to_string()))?;
    Ok(ds)
}

fn write(path: &Path, text: String) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `ds` in the directory format (creating the directory). Floats are
/// written in shortest round-trip form.
pub fn save_dataset(ds: &MultiViewDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (v, m) in ds.views.iter().enumerate() {
        let mut text = String::with_capacity(m.rows() * m.cols() * 8);
        for row in m.iter_rows() {
            let cells: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
            text.push_str(&cells.join(","));
            text.push('\n');
        }
        write(&dir.join(format!("view_{}.csv", v + 1)), text)?;
    }
    let mut mask = String::new();
    for row in &ds.presence {
        let cells: Vec<&str> = row.iter().map(|&p| if p { "1" } else { "0" }).collect();
        mask.push_str(&cells.join(","));
        mask.push('\n');
    }
    write(&dir.join("mask.csv"), mask)?;
    if let Some(labels) = &ds.labels {
        let text: String = labels.iter().map(|l| format!("{}\n", l.code())).collect();
        write(&dir.join("labels.csv"), text)?;
    }
    let provenance = serde_json::to_string_pretty(&ds.provenance).expect("provenance serializes");
    write(&dir.join("provenance.json"), provenance + "\n")
}
