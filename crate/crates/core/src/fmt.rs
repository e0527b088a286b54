//! Number formatting shared by every text artifact.

/// Rounds to 12 significant digits and prints the shortest decimal that reads back to that value.
pub fn sig12(x: f64) -> String {
    sig(x, 12)
}

pub fn sig(x: f64, digits: usize) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let rounded: f64 = format!("{:.*e}", digits.saturating_sub(1), x).parse().unwrap_or(x);
    let plain = format!("{rounded}");
    let sci = format!("{rounded:e}");
    if plain.len() <= sci.len() + 2 {
        plain
    } else {
        sci
    }
}
