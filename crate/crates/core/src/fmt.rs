//! Fixed-precision number formatting for CSV output.

/// Formats `x` with `digits` significant digits in the style of C's `%.Ng`:
/// plain decimal for moderate exponents, scientific otherwise, trailing
/// zeros removed. Non-finite values print as `NaN`, `inf` and `-inf`, all of
/// which round-trip through `str::parse::<f64>`.
pub fn format_sig(x: f64, digits: usize) -> String {
    assert!(digits >= 1);
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -5 || exp >= digits as i32 {
        format!("{}e{exp}", trim_zeros(mantissa))
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
