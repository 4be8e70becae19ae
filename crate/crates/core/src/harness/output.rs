//! Result tables as CSV or JSON, reals at 12 significant digits.

use std::path::Path;

use super::{OutputFormat, ResultRow};
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 7] =
    ["algorithm", "P_db", "mean_sum_rate", "std_sum_rate", "mean_user_dims", "trials", "failures"];

/// `x` with 12 significant digits in the style of C's `%.12g`.
pub fn format_g12(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: String| {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    };
    if (-4..12).contains(&exp) {
        trim(format!("{x:.*}", (11 - exp) as usize))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim(mantissa.to_string()), exp.abs())
    }
}

fn rounded(x: f64) -> f64 {
    format_g12(x).parse().expect("formatted real parses")
}

pub fn format_results(rows: &[ResultRow], format: OutputFormat) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::contract("no result rows to emit"));
    }
    match format {
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let csv_err = |e: csv::Error| Error::contract(format!("csv encoding failed: {e}"));
            w.write_record(CSV_HEADER).map_err(csv_err)?;
            for r in rows {
                w.write_record([
                    r.algorithm.clone(),
                    format_g12(r.p_db),
                    format_g12(r.mean_sum_rate),
                    format_g12(r.std_sum_rate),
                    format_g12(r.mean_user_dims),
                    r.trials.to_string(),
                    r.failures.to_string(),
                ])
                .map_err(csv_err)?;
            }
            let bytes = w.into_inner().map_err(|e| Error::contract(format!("csv encoding failed: {e}")))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
        OutputFormat::Json => {
            let rounded_rows: Vec<ResultRow> = rows
                .iter()
                .map(|r| ResultRow {
                    p_db: rounded(r.p_db),
                    mean_sum_rate: rounded(r.mean_sum_rate),
                    std_sum_rate: rounded(r.std_sum_rate),
                    mean_user_dims: rounded(r.mean_user_dims),
                    ..r.clone()
                })
                .collect();
            let mut text = serde_json::to_string_pretty(&rounded_rows).expect("rows serialize");
            text.push('\n');
            Ok(text)
        }
    }
}

pub fn emit_results(rows: &[ResultRow], format: OutputFormat, path: &Path) -> Result<()> {
    let text = format_results(rows, format)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn parse_results(text: &str, format: OutputFormat) -> std::result::Result<Vec<ResultRow>, String> {
    match format {
        OutputFormat::Csv => {
            let mut r = csv::Reader::from_reader(text.as_bytes());
            let header = r.headers().map_err(|e| e.to_string())?;
            if header.iter().ne(CSV_HEADER) {
                return Err(format!("unexpected header {header:?}"));
            }
            r.deserialize().map(|row| row.map_err(|e| e.to_string())).collect()
        }
        OutputFormat::Json => serde_json::from_str(text).map_err(|e| e.to_string()),
    }
}
