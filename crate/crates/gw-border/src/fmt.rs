//! Text formatting shared by table serialization and the CLI: floats are
//! printed with 15 significant digits (Rust's formatter rounds correctly),
//! positional where readable, scientific otherwise. Output is byte-stable
//! for a given value.

/// Formats a float with 15 significant digits, trimming trailing zeros.
pub fn sig15(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let s = format!("{:.14e}", x);
    let (mantissa, exp) = s.split_once('e').expect("exponential format");
    let exp: i32 = exp.parse().expect("exponent");
    let neg = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    debug_assert_eq!(digits.len(), 15);
    let digits = digits.trim_end_matches('0');
    let digits = if digits.is_empty() { "0" } else { digits };
    let sign = if neg { "-" } else { "" };

    let body = if (-4..15).contains(&exp) {
        if exp >= 0 {
            let point = (exp + 1) as usize;
            if digits.len() <= point {
                format!("{digits}{}", "0".repeat(point - digits.len()))
            } else {
                format!("{}.{}", &digits[..point], &digits[point..])
            }
        } else {
            format!("0.{}{}", "0".repeat((-exp - 1) as usize), digits)
        }
    } else {
        let mut m = String::new();
        m.push_str(&digits[..1]);
        if digits.len() > 1 {
            m.push('.');
            m.push_str(&digits[1..]);
        }
        format!("{m}e{exp}")
    };
    format!("{sign}{body}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positional_rendering() {
        assert_eq!(sig15(0.0), "0");
        assert_eq!(sig15(1.0), "1");
        assert_eq!(sig15(-2.5), "-2.5");
        assert_eq!(sig15(0.25), "0.25");
        assert_eq!(sig15(1.0 / 3.0), "0.333333333333333");
        assert_eq!(sig15(4.0 / 9.0), "0.444444444444444");
        assert_eq!(sig15(123456.0), "123456");
    }

    #[test]
    fn scientific_fallback() {
        assert_eq!(sig15(1e-9), "1e-9");
        assert_eq!(sig15(3.25e20), "3.25e20");
        assert_eq!(sig15(-7e-12), "-7e-12");
    }

    #[test]
    fn fifteen_digits_kept() {
        assert_eq!(sig15(std::f64::consts::E), "2.71828182845905");
        assert_eq!(sig15(0.6922006275553464), "0.692200627555346");
    }

    #[test]
    fn roundtrip_is_stable() {
        for &x in &[0.1, 12345.6789, 1e-300, 2.0f64.powi(53)] {
            assert_eq!(sig15(x), sig15(x));
        }
    }
}
