use std::path::Path;

use super::{Normalization, Normalizer, Pool};
use crate::error::{input_err, Error, Result};
use crate::losses::Targets;
use crate::numerics::Matrix;

/// Reads numeric columns from a headered CSV. When `feature_columns` is
/// `None`, every non-target column is a feature. Returns `(features, targets)`
/// without any normalization.
pub fn read_csv_columns(
    path: impl AsRef<Path>,
    target_columns: &[String],
    feature_columns: Option<&[String]>,
) -> Result<(Matrix, Matrix)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Csv {
            row: 1,
            column: String::new(),
            msg: e.to_string(),
        })?
        .iter()
        .map(str::to_owned)
        .collect();
    let find = |name: &String| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Input(format!("column {name:?} not in CSV header")))
    };
    if target_columns.is_empty() {
        return input_err("at least one target column is required");
    }
    let t_idx = target_columns.iter().map(find).collect::<Result<Vec<_>>>()?;
    let f_idx = match feature_columns {
        Some(cols) => cols.iter().map(find).collect::<Result<Vec<_>>>()?,
        None => (0..header.len()).filter(|j| !t_idx.contains(j)).collect(),
    };
    if f_idx.is_empty() {
        return input_err("no feature columns selected");
    }

    let mut feats = Vec::new();
    let mut targs = Vec::new();
    let mut n = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Csv {
            row: e.position().map_or(0, |p| p.line() as usize),
            column: String::new(),
            msg: e.to_string(),
        })?;
        let row = rec.position().map_or(n + 2, |p| p.line() as usize);
        let cell = |j: usize| -> Result<f64> {
            let raw = rec.get(j).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Csv {
                    row,
                    column: header[j].clone(),
                    msg: format!("{raw:?} is not a finite number"),
                })
        };
        for &j in &f_idx {
            feats.push(cell(j)?);
        }
        for &j in &t_idx {
            targs.push(cell(j)?);
        }
        n += 1;
    }
    Ok((
        Matrix::from_vec(n, f_idx.len(), feats)?,
        Matrix::from_vec(n, t_idx.len(), targs)?,
    ))
}

/// Loads a regression pool from CSV with z-scored features and targets.
pub fn load_csv(
    path: impl AsRef<Path>,
    target_columns: &[String],
    feature_columns: Option<&[String]>,
) -> Result<Pool> {
    let (mut x, mut y) = read_csv_columns(path, target_columns, feature_columns)?;
    Normalizer::fit(&x, Normalization::Zscore).apply(&mut x)?;
    Normalizer::fit(&y, Normalization::Zscore).apply(&mut y)?;
    Pool::new(x, Some(Targets::Values(y)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn three_row_fixture_is_zscored() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        fs::write(&p, "a,b,const,y\n1,10,7,0\n2,20,7,3\n3,60,7,6\n").unwrap();
        let pool = load_csv(&p, &names(&["y"]), None).unwrap();
        // a: mean 2, std sqrt(2/3); b: mean 30, std sqrt(1400/3); const -> 0
        let sa = (2.0f64 / 3.0).sqrt();
        let sb = (1400.0f64 / 3.0).sqrt();
        let expected = [
            [-1.0 / sa, -20.0 / sb, 0.0],
            [0.0, -10.0 / sb, 0.0],
            [1.0 / sa, 30.0 / sb, 0.0],
        ];
        for (i, row) in expected.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert!((pool.features.get(i, j) - v).abs() < 1e-14);
            }
        }
        let Some(Targets::Values(y)) = pool.targets else {
            panic!()
        };
        // y: mean 3, std sqrt(6)
        let sy = 6f64.sqrt();
        for (a, b) in y.data().iter().zip([-3.0 / sy, 0.0, 3.0 / sy]) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn missing_column_and_bad_cell() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        fs::write(&p, "a,y\n1,2\nx,3\n").unwrap();
        assert!(matches!(
            load_csv(&p, &names(&["nope"]), None),
            Err(Error::Input(_))
        ));
        match load_csv(&p, &names(&["y"]), None) {
            Err(Error::Csv { row, column, .. }) => {
                assert_eq!(row, 3);
                assert_eq!(column, "a");
            }
            other => panic!("expected csv error, got {other:?}"),
        }
    }

    #[test]
    fn explicit_feature_subset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        fs::write(&p, "a,b,y\n1,5,0\n2,6,1\n").unwrap();
        let (x, y) = read_csv_columns(&p, &names(&["y"]), Some(&names(&["b"]))).unwrap();
        assert_eq!(x.data(), &[5.0, 6.0]);
        assert_eq!(y.data(), &[0.0, 1.0]);
    }
}
