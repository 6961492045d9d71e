//! CSV emission and ingestion for histories, evaluation reports, bias tables
//! and the ablation matrix. Floats print with Rust's shortest round-trip
//! formatting, so written values re-parse bit-exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::train::ablation::AblationTable;
use crate::train::eval::EvalReport;
use crate::train::stats::BiasStats;
use crate::train::{EpochRecord, TrainError};

fn write_file(path: &Path, contents: String) -> Result<(), TrainError> {
    fs::write(path, contents).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<(), TrainError> {
    let mut out = String::from("epoch,train_loss,val_mad,lr\n");
    for row in history {
        let _ = writeln!(out, "{},{},{},{}", row.epoch, row.train_loss, row.val_mad, row.lr);
    }
    write_file(path, out)
}

pub fn write_report_csv(path: &Path, report: &EvalReport) -> Result<(), TrainError> {
    let mut out = String::from(
        "id,bone_age_months,predicted_bone_age_months,chronological_age_months,relative_age_months,abs_error_months\n",
    );
    for row in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            row.id, row.bone_age, row.predicted, row.chronological, row.relative_age, row.abs_error
        );
    }
    write_file(path, out)
}

pub fn write_bias_csv(path: &Path, rows: &[(String, f64, f64)]) -> Result<(), TrainError> {
    let mut out = String::from("id,relative_age,abs_error\n");
    for (id, relative_age, abs_error) in rows {
        let _ = writeln!(out, "{id},{relative_age},{abs_error}");
    }
    write_file(path, out)
}

pub fn write_bias_summary_csv(path: &Path, stats: &BiasStats) -> Result<(), TrainError> {
    write_file(
        path,
        format!(
            "pearson_r,slope,intercept,n\n{},{},{},{}\n",
            stats.pearson_r, stats.slope, stats.intercept, stats.n
        ),
    )
}

fn flag_bit(b: bool) -> u8 {
    u8::from(b)
}

pub fn write_ablation_csv(path: &Path, table: &AblationTable) -> Result<(), TrainError> {
    let mut out = String::from("use_gender,use_chrono,use_relative,seed,val_mad\n");
    for row in &table.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            flag_bit(row.flags.use_gender),
            flag_bit(row.flags.use_chrono),
            flag_bit(row.flags.use_relative),
            row.seed,
            row.val_mad
        );
    }
    write_file(path, out)
}

pub fn write_ablation_summary_csv(path: &Path, table: &AblationTable) -> Result<(), TrainError> {
    let mut out = String::from("use_gender,use_chrono,use_relative,median_val_mad\n");
    for (flags, median) in &table.medians {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            flag_bit(flags.use_gender),
            flag_bit(flags.use_chrono),
            flag_bit(flags.use_relative),
            median
        );
    }
    write_file(path, out)
}

/// Reads `(id, relative_age, abs_error)` triples from an evaluation report
/// or bias CSV, located by header names (`relative_age*`, `abs_error*`).
pub fn read_bias_rows(path: &Path) -> Result<Vec<(String, f64, f64)>, TrainError> {
    let text = fs::read_to_string(path).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let malformed = |detail: String| TrainError::MalformedReport {
        path: path.to_path_buf(),
        detail,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| malformed("empty file".into()))?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let find = |prefix: &str| columns.iter().position(|c| c.starts_with(prefix));
    let id_col = find("id").ok_or_else(|| malformed("missing id column".into()))?;
    let rel_col =
        find("relative_age").ok_or_else(|| malformed("missing relative_age column".into()))?;
    let err_col = find("abs_error").ok_or_else(|| malformed("missing abs_error column".into()))?;

    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let need = id_col.max(rel_col).max(err_col);
        if fields.len() <= need {
            return Err(malformed(format!("line {}: too few fields", lineno + 2)));
        }
        let parse = |s: &str| -> Result<f64, TrainError> {
            s.parse()
                .map_err(|_| malformed(format!("line {}: bad number {s:?}", lineno + 2)))
        };
        rows.push((
            fields[id_col].to_string(),
            parse(fields[rel_col])?,
            parse(fields[err_col])?,
        ));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::eval::EvalRow;

    #[test]
    fn history_round_trips_through_display() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("history.csv");
        let history = vec![EpochRecord {
            epoch: 1,
            train_loss: 0.12345678901234567,
            val_mad: 9.87654321,
            lr: 0.001 * 0.8f64.powi(3),
        }];
        write_history_csv(&path, &history).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let line = text.lines().nth(1).unwrap();
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[1].parse::<f64>().unwrap(), history[0].train_loss);
        assert_eq!(fields[3].parse::<f64>().unwrap(), history[0].lr);
    }

    #[test]
    fn report_feeds_bias_reader() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.csv");
        let report = EvalReport {
            rows: vec![
                EvalRow {
                    id: "a".into(),
                    bone_age: 100.0,
                    predicted: 104.0,
                    chronological: 98.0,
                    relative_age: -2.0,
                    abs_error: 4.0,
                },
                EvalRow {
                    id: "b".into(),
                    bone_age: 60.0,
                    predicted: 59.0,
                    chronological: 72.5,
                    relative_age: 12.5,
                    abs_error: 1.0,
                },
            ],
            mad: 2.5,
        };
        write_report_csv(&path, &report).unwrap();
        let rows = read_bias_rows(&path).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0], ("a".to_string(), -2.0, 4.0));
        assert_eq!(rows[1], ("b".to_string(), 12.5, 1.0));
    }

    #[test]
    fn bias_reader_rejects_missing_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "id,foo\nx,1\n").unwrap();
        assert!(matches!(
            read_bias_rows(&path),
            Err(TrainError::MalformedReport { .. })
        ));
    }

    #[test]
    fn ablation_csv_row_count() {
        use crate::train::ablation::{AblationRow, ABLATION_CONFIGS};
        let rows: Vec<AblationRow> = ABLATION_CONFIGS
            .iter()
            .flat_map(|&flags| {
                [1u64, 2, 3].iter().map(move |&seed| AblationRow {
                    flags,
                    seed,
                    val_mad: 5.0,
                })
            })
            .collect();
        let table = AblationTable {
            rows,
            medians: ABLATION_CONFIGS.iter().map(|&f| (f, 5.0)).collect(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ablation.csv");
        write_ablation_csv(&path, &table).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 16); // header + 15 rows
    }
}
