//! Dataset loading: simple CSV import and synthetic generation.
//!
//! CSV rules: comma-separated, no quoting support, optional header row
//! (detected when no cell of the first row parses as a number, and
//! ignored — feature names are never used). The label column defaults to
//! the last one. Non-numeric feature columns become categorical via
//! value interning; labels are interned to 0..K-1 (numerically when all
//! labels parse as integers, lexicographically otherwise).

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};

use manyshot_core::task::{ColumnKind, ColumnSchema, TaskTable};
use manyshot_core::Matrix;

pub fn load_csv(path: &Path, label_col: Option<usize>) -> Result<TaskTable> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_csv(&text, label_col)
}

pub fn parse_csv(text: &str, label_col: Option<usize>) -> Result<TaskTable> {
    let mut rows: Vec<Vec<String>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(|c| c.trim().to_string()).collect())
        .collect();
    if rows.is_empty() {
        bail!("csv has no rows");
    }
    let cols = rows[0].len();
    if cols < 2 {
        bail!("csv needs at least one feature column and one label column");
    }
    if rows.iter().any(|r| r.len() != cols) {
        bail!("csv rows have inconsistent column counts");
    }
    // Header row: nothing in it parses as a number.
    if rows[0].iter().all(|c| c.parse::<f64>().is_err()) {
        rows.remove(0);
        if rows.is_empty() {
            bail!("csv has a header but no data rows");
        }
    }

    let label_col = label_col.unwrap_or(cols - 1);
    if label_col >= cols {
        bail!("label column {label_col} out of range (csv has {cols} columns)");
    }

    let labels_raw: Vec<&String> = rows.iter().map(|r| &r[label_col]).collect();
    let y = intern_labels(&labels_raw)?;
    let k = y.iter().map(|&l| l as usize + 1).max().unwrap().max(2);

    let feature_cols: Vec<usize> = (0..cols).filter(|&c| c != label_col).collect();
    let d = feature_cols.len();
    let mut schema = Vec::with_capacity(d);
    let mut x = Matrix::zeros(rows.len(), d);
    let finite = |v: &String| v.parse::<f64>().map(|x| x.is_finite()).unwrap_or(false);
    for (j, &c) in feature_cols.iter().enumerate() {
        let cells: Vec<&String> = rows.iter().map(|r| &r[c]).collect();
        if cells.iter().all(|v| finite(v)) {
            for (i, v) in cells.iter().enumerate() {
                x.set(i, j, v.parse().unwrap());
            }
            schema.push(ColumnKind::Numeric);
        } else {
            // Intern distinct values in sorted order.
            let mut distinct: Vec<&String> = cells.clone();
            distinct.sort();
            distinct.dedup();
            let index: BTreeMap<&String, u16> = distinct
                .iter()
                .enumerate()
                .map(|(i, v)| (*v, i as u16))
                .collect();
            for (i, v) in cells.iter().enumerate() {
                x.set(i, j, index[v] as f64);
            }
            schema.push(ColumnKind::Categorical {
                categories: distinct.len(),
                id_map: (0..distinct.len() as u16).collect(),
            });
        }
    }

    Ok(TaskTable {
        schema: ColumnSchema { columns: schema },
        x,
        y,
        k,
        d,
    })
}

fn intern_labels(raw: &[&String]) -> Result<Vec<u8>> {
    let mut distinct: Vec<&String> = raw.to_vec();
    distinct.sort();
    distinct.dedup();
    if distinct.len() > 255 {
        bail!("{} distinct labels exceed the 255 limit", distinct.len());
    }
    // Numeric ordering when every label is an integer ("2" before "10").
    if distinct.iter().all(|v| v.parse::<i64>().is_ok()) {
        distinct.sort_by_key(|v| v.parse::<i64>().unwrap());
    }
    let index: BTreeMap<&String, u8> = distinct
        .iter()
        .enumerate()
        .map(|(i, v)| (*v, i as u8))
        .collect();
    Ok(raw.iter().map(|v| index[v]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_csv_with_header() {
        let table = parse_csv("a,b,label\n1.5,2,0\n3,4,1\n5,6,0\n", None).unwrap();
        assert_eq!(table.d, 2);
        assert_eq!(table.k, 2);
        assert_eq!(table.y, vec![0, 1, 0]);
        assert_eq!(table.x.get(0, 0), 1.5);
    }

    #[test]
    fn headerless_csv() {
        let table = parse_csv("1,2,0\n3,4,1\n", None).unwrap();
        assert_eq!(table.x.rows(), 2);
    }

    #[test]
    fn text_column_becomes_categorical() {
        let table = parse_csv("x,color,label\n1,red,0\n2,blue,1\n3,red,0\n", None).unwrap();
        assert!(matches!(
            table.schema.columns[1],
            ColumnKind::Categorical { categories: 2, .. }
        ));
        // blue < red lexicographically
        assert_eq!(table.x.get(0, 1), 1.0);
        assert_eq!(table.x.get(1, 1), 0.0);
    }

    #[test]
    fn numeric_labels_sort_numerically() {
        let table = parse_csv("x,label\n1,10\n2,2\n3,10\n4,0\n", None).unwrap();
        // 0 -> 0, 2 -> 1, 10 -> 2
        assert_eq!(table.y, vec![2, 1, 2, 0]);
        assert_eq!(table.k, 3);
    }

    #[test]
    fn explicit_label_column() {
        let table = parse_csv("label,x\n0,1\n1,2\n", Some(0)).unwrap();
        assert_eq!(table.d, 1);
        assert_eq!(table.y, vec![0, 1]);
        assert_eq!(table.x.get(1, 0), 2.0);
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(parse_csv("1,2,0\n3,4\n", None).is_err());
    }

    #[test]
    fn non_finite_cells_fall_back_to_categorical() {
        // "NaN" parses as an f64 but would poison normalization; such
        // columns are treated as categorical strings instead.
        let table = parse_csv("x,y,label\nNaN,1,0\n2,2,1\n", None).unwrap();
        assert!(matches!(
            table.schema.columns[0],
            ColumnKind::Categorical { .. }
        ));
        assert!(matches!(table.schema.columns[1], ColumnKind::Numeric));
    }
}
