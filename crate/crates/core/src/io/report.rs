use serde_json::Value;

use crate::error::{Error, Result};
use crate::metrics::EvalReport;

const SIGNIFICANT_DIGITS: usize = 6;

/// Rounds to six significant digits; non-finite values pass through.
pub fn round_significant(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x)
        .parse()
        .unwrap_or(x)
}

fn round_numbers(value: &mut Value) {
    match value {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().map(round_significant) {
                *value = serde_json::Number::from_f64(r).map_or(Value::Null, Value::Number);
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_numbers),
        Value::Object(map) => map.values_mut().for_each(round_numbers),
        _ => {}
    }
}

/// Serializes a report as pretty JSON with sorted keys and reals rounded
/// to six significant digits.
pub fn write_report(report: &EvalReport) -> Vec<u8> {
    let mut value = serde_json::to_value(report).expect("report serializes");
    round_numbers(&mut value);
    let mut out = serde_json::to_vec_pretty(&value).expect("value serializes");
    out.push(b'\n');
    out
}

pub fn parse_report(bytes: &[u8]) -> Result<EvalReport> {
    serde_json::from_slice(bytes).map_err(|e| Error::Parse {
        offset: 0,
        message: format!("report JSON: {e}"),
    })
}
