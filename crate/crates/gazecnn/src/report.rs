//! CSV and JSON emitters for evaluation reports. Output is byte-exact for
//! equal inputs: fixed six-decimal formatting, fixed key order.

use std::fmt::Write as _;

use crate::harness::{CvReport, EpochStats, EvalReport, MatrixReport};

fn json_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out
}

fn eval_json(r: &EvalReport) -> String {
    format!(
        "{{\"mae_mean_deg\":{:.6},\"mae_std_deg\":{:.6},\"max_error_deg\":{:.6},\"n_samples\":{}}}",
        r.mae_mean_deg, r.mae_std_deg, r.max_error_deg, r.n_samples
    )
}

fn eval_csv_fields(r: &EvalReport) -> String {
    format!(
        "{:.6},{:.6},{:.6},{}",
        r.mae_mean_deg, r.mae_std_deg, r.max_error_deg, r.n_samples
    )
}

pub fn eval_report_csv(r: &EvalReport) -> String {
    format!(
        "mae_mean_deg,mae_std_deg,max_error_deg,n_samples\n{}\n",
        eval_csv_fields(r)
    )
}

pub fn eval_report_json(r: &EvalReport) -> String {
    format!("{}\n", eval_json(r))
}

/// One row per fold plus a `pooled` row.
pub fn crossval_csv(r: &CvReport) -> String {
    let mut out = String::from("fold,mae_mean_deg,mae_std_deg,max_error_deg,n_samples\n");
    for (i, fold) in r.folds.iter().enumerate() {
        let _ = writeln!(out, "{i},{}", eval_csv_fields(fold));
    }
    let _ = writeln!(out, "pooled,{}", eval_csv_fields(&r.pooled));
    out
}

pub fn crossval_json(r: &CvReport) -> String {
    let folds: Vec<String> = r.folds.iter().map(eval_json).collect();
    format!(
        "{{\"k\":{},\"folds\":[{}],\"pooled\":{}}}\n",
        r.folds.len(),
        folds.join(","),
        eval_json(&r.pooled)
    )
}

/// One row per (train, test) cell.
pub fn matrix_csv(r: &MatrixReport) -> String {
    let mut out = String::from("train,test,mae_mean_deg,mae_std_deg,max_error_deg,n_samples\n");
    for (i, row) in r.cells.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", r.names[i], r.names[j], eval_csv_fields(cell));
        }
    }
    out
}

pub fn matrix_json(r: &MatrixReport) -> String {
    let names: Vec<String> = r
        .names
        .iter()
        .map(|n| format!("\"{}\"", json_escape(n)))
        .collect();
    let rows: Vec<String> = r
        .cells
        .iter()
        .map(|row| {
            let cells: Vec<String> = row.iter().map(eval_json).collect();
            format!("[{}]", cells.join(","))
        })
        .collect();
    format!(
        "{{\"datasets\":[{}],\"cells\":[{}]}}\n",
        names.join(","),
        rows.join(",")
    )
}

/// Per-epoch training log.
pub fn history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_mse,val_mae_deg\n");
    for e in history {
        let _ = writeln!(out, "{},{:.6},{:.6}", e.epoch, e.train_mse, e.val_mae);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(mean: f64, n: usize) -> EvalReport {
        EvalReport {
            mae_mean_deg: mean,
            mae_std_deg: 0.5,
            max_error_deg: mean * 2.0,
            n_samples: n,
        }
    }

    #[test]
    fn crossval_csv_has_fold_rows_plus_pooled() {
        let cv = CvReport {
            folds: vec![report(1.0, 10), report(2.0, 12)],
            pooled: report(1.5, 22),
        };
        let csv = crossval_csv(&cv);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0,1.000000"));
        assert!(lines[3].starts_with("pooled,1.500000"));
    }

    #[test]
    fn matrix_csv_emits_one_row_per_cell() {
        let m = MatrixReport {
            names: vec!["a".into(), "b".into(), "combined".into()],
            cells: vec![vec![report(1.0, 1); 3]; 3],
        };
        let csv = matrix_csv(&m);
        assert_eq!(csv.lines().count(), 10);
        assert!(csv.contains("combined,a,"));
    }

    #[test]
    fn json_escapes_names() {
        let m = MatrixReport {
            names: vec!["we\"ird".into(), "b".into()],
            cells: vec![vec![report(1.0, 1); 2]; 2],
        };
        let json = matrix_json(&m);
        assert!(json.contains("we\\\"ird"));
    }

    #[test]
    fn same_report_same_bytes() {
        let cv = CvReport {
            folds: vec![report(1.23456789, 7)],
            pooled: report(1.23456789, 7),
        };
        assert_eq!(crossval_json(&cv), crossval_json(&cv));
        assert!(crossval_json(&cv).contains("1.234568"));
    }
}
