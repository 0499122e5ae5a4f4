//! Report emission: CSV with a fixed column set, or a JSON mirror.

use std::io::Write;

use crate::config::OutputFormat;
use crate::experiment::RunRow;

pub const CSV_HEADER: &str =
    "case,method,N,rel_l2,elapsed_s,cr_solution,cr_operator,max_rank,sweeps,converged";

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v:.9e}")
    }
}

/// Writes the rows as CSV with the fixed header.
pub fn write_csv<W: Write>(w: &mut W, rows: &[RunRow]) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for row in rows {
        let r = &row.report;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.case,
            r.method,
            r.n,
            fmt_f64(r.rel_l2),
            fmt_f64(r.elapsed_s),
            fmt_f64(r.cr_solution),
            fmt_f64(r.cr_operator),
            r.max_rank,
            r.sweeps,
            r.converged
        )?;
    }
    Ok(())
}

/// Writes the rows as a JSON array mirroring the CSV columns, plus a
/// `note` field on skipped or failed rows.
pub fn write_json<W: Write>(w: &mut W, rows: &[RunRow]) -> std::io::Result<()> {
    let values: Vec<serde_json::Value> = rows
        .iter()
        .map(|row| {
            let r = &row.report;
            let mut obj = serde_json::json!({
                "case": r.case,
                "method": r.method,
                "N": r.n,
                "rel_l2": if r.rel_l2.is_nan() { serde_json::Value::Null } else { r.rel_l2.into() },
                "elapsed_s": r.elapsed_s,
                "cr_solution": if r.cr_solution.is_nan() { serde_json::Value::Null } else { r.cr_solution.into() },
                "cr_operator": if r.cr_operator.is_nan() { serde_json::Value::Null } else { r.cr_operator.into() },
                "max_rank": r.max_rank,
                "sweeps": r.sweeps,
                "converged": r.converged,
            });
            if let Some(note) = &row.note {
                obj["note"] = serde_json::Value::String(note.clone());
            }
            obj
        })
        .collect();
    let text = serde_json::to_string_pretty(&values)?;
    writeln!(w, "{text}")
}

/// Dispatches on the configured format.
pub fn write_report<W: Write>(
    w: &mut W,
    rows: &[RunRow],
    format: OutputFormat,
) -> std::io::Result<()> {
    match format {
        OutputFormat::Csv => write_csv(w, rows),
        OutputFormat::Json => write_json(w, rows),
    }
}
