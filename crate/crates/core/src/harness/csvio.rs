//! CSV conventions: a header row on every file, floats with six
//! significant digits, `inf` and `n/a` sentinels.

use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::EvalRecord;

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// `%g`-style formatting with six significant digits. NaN (undefined)
/// prints as `n/a`, infinities as `inf` / `-inf`.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        return "n/a".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf" } else { "-inf" }.into();
    }
    if v == 0.0 {
        return "0".into();
    }
    // The exponent after rounding to six digits decides the notation.
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific notation");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    } else {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

pub const RECORD_HEADER: &str =
    "id,label,clean_prediction,adversarial_prediction,success,final_loss,queries,psnr,ssim";

/// One line of an attack's `records.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordRow {
    pub id: String,
    pub label: usize,
    pub clean_prediction: usize,
    pub adversarial_prediction: usize,
    /// The adversarial prediction differs from the clean one.
    pub success: bool,
    pub final_loss: f64,
    pub queries: usize,
    pub psnr: f64,
    pub ssim: f64,
}

impl RecordRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.id,
            self.label,
            self.clean_prediction,
            self.adversarial_prediction,
            u8::from(self.success),
            format_float(self.final_loss),
            self.queries,
            format_float(self.psnr),
            format_float(self.ssim),
        )
    }

    pub fn eval_record(&self) -> EvalRecord {
        EvalRecord {
            id: self.id.clone(),
            label: self.label,
            clean_prediction: self.clean_prediction,
            adversarial_prediction: self.adversarial_prediction,
        }
    }
}

fn parse_float(s: &str) -> Option<f64> {
    match s {
        "n/a" => Some(f64::NAN),
        _ => s.parse().ok(),
    }
}

/// Reads a `records.csv`, rejecting any other schema.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<RecordRow>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let header = reader.headers().map_err(|e| parse_err(1, e.to_string()))?;
    let header: Vec<&str> = header.iter().collect();
    if header.join(",") != RECORD_HEADER {
        return Err(parse_err(1, format!("expected header `{RECORD_HEADER}`")));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |col: &str| parse_err(line, format!("bad `{col}` value"));
        let int = |i: usize, col: &str| record[i].parse::<usize>().map_err(|_| bad(col));
        let float = |i: usize, col: &str| parse_float(&record[i]).ok_or_else(|| bad(col));
        rows.push(RecordRow {
            id: record[0].to_string(),
            label: int(1, "label")?,
            clean_prediction: int(2, "clean_prediction")?,
            adversarial_prediction: int(3, "adversarial_prediction")?,
            success: match &record[4] {
                "0" => false,
                "1" => true,
                _ => return Err(bad("success")),
            },
            final_loss: float(5, "final_loss")?,
            queries: int(6, "queries")?,
            psnr: float(7, "psnr")?,
            ssim: float(8, "ssim")?,
        });
    }
    Ok(rows)
}
