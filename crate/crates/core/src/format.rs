//! Number formatting shared by every report.

/// Twelve digits after the decimal point, switching to scientific notation
/// outside `[1e-3, 1e15)`.
pub fn fmt_value(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-3..1e15).contains(&a) {
        format!("{x:.12}")
    } else if x.is_finite() {
        format!("{x:.12e}")
    } else {
        format!("{x}")
    }
}

/// Twelve significant digits with trailing zeros removed (`1`, `2.5`).
pub fn fmt_compact(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    if !(-4..15).contains(&magnitude) {
        return format!("{x:.11e}");
    }
    let decimals = (11 - magnitude).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}
