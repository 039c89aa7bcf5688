//! CSV and JSON report emission. CSV feeds plotting; JSON summaries feed
//! scripted assertions. Numbers are printed in scientific notation with
//! nine significant digits so f32 values round-trip exactly, and JSON
//! keys are sorted so reruns are byte-identical.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde_json::{Map, Value};

use crate::error::{io_err, Result};

/// Nine significant digits: enough for any f32 to parse back bit-exact.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.8e}")
}

pub fn fmt_f32(v: f32) -> String {
    fmt_float(v as f64)
}

/// Writes a header row plus data rows, comma-separated, '.' decimal,
/// newline-terminated.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        writeln!(w, "{}", header.join(","))?;
        for row in rows {
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()
    })()
    .map_err(io_err(path))
}

/// Writes a JSON object with sorted keys (serde_json's default map is a
/// BTreeMap) followed by a trailing newline.
pub fn write_json(path: &Path, fields: Map<String, Value>) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(&Value::Object(fields))
            .expect("JSON summaries contain only finite numbers and strings");
        writeln!(w, "{text}")?;
        w.flush()
    })()
    .map_err(io_err(path))
}

pub fn json_num(v: f64) -> Value {
    serde_json::Number::from_f64(v).map(Value::Number).unwrap_or(Value::Null)
}
