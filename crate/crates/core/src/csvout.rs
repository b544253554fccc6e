//! CSV emission with bit-stable float formatting.

use std::path::Path;

use crate::error::{Error, Result};

/// Formats like C's `%.17g`: 17 significant digits, enough to round-trip
/// every `f64`. Missing (non-finite) values become an empty field.
pub fn fmt_f64(v: f64) -> String {
    if !v.is_finite() {
        return String::new();
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..17).contains(&exp) {
        let m = trim_fraction(mantissa);
        return format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs());
    }
    let fixed = format!("{v:.*}", (16 - exp) as usize);
    trim_fraction(&fixed).to_string()
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Renders a header and rows to CSV text.
pub fn to_string(header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        if r.len() != header.len() {
            return Err(Error::invalid(format!(
                "CSV row has {} fields, header has {}",
                r.len(),
                header.len()
            )));
        }
        w.write_record(r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("CSV of UTF-8 fields is UTF-8"))
}

pub fn write(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    std::fs::write(path, to_string(header, rows)?)?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("CSV: {e}"))
}
