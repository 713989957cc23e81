//! Text serialization helpers shared by the point-CSV format and the
//! experiment runner's tables.

/// Formats a float with 17 significant digits, enough to round-trip `f64`
/// exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Parses one comma-separated row of floats; errors carry the 1-based line
/// number for the caller's message.
pub fn parse_float_row(line: &str, line_no: usize) -> Result<Vec<f64>, String> {
    line.split(',')
        .map(|field| {
            field
                .trim()
                .parse::<f64>()
                .map_err(|e| format!("line {line_no}: bad float {field:?}: {e}"))
        })
        .collect()
}
