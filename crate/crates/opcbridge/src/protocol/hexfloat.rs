//! Bit-exact hexadecimal float encoding for the wire.
//!
//! Canonical forms produced by the encoder:
//!
//! * zero:      `0x0p+0`, `-0x0p+0`
//! * normal:    `0x1.fp+4` (fraction digits trimmed, `0x1p+4` when empty)
//! * subnormal: `0x0.<frac>p-1022` (f64) / `0x0.<frac>p-126` (f32)
//! * infinity:  `inf`, `-inf`
//!
//! The decoder accepts any exactly representable hexfloat, normalized or
//! not, and rejects NaN and inexact inputs: a value that cannot round-trip
//! bit-exactly is a malformed token, not something to round.

/// Formats an `f64` so that [`parse_f64`] reproduces the exact bit pattern.
pub fn format_f64(v: f64) -> String {
    let bits = v.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp_biased = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    if exp_biased == 0x7ff {
        return if frac == 0 { format!("{sign}inf") } else { "nan".to_owned() };
    }
    if exp_biased == 0 && frac == 0 {
        return format!("{sign}0x0p+0");
    }
    if exp_biased == 0 {
        // Subnormal: leading digit 0, fraction scaled by the minimum
        // normal exponent.
        return format!("{sign}0x0.{}p-1022", frac_digits(frac, 13));
    }
    let e = exp_biased - 1023;
    let digits = frac_digits(frac, 13);
    if digits.is_empty() {
        format!("{sign}0x1p{e:+}")
    } else {
        format!("{sign}0x1.{digits}p{e:+}")
    }
}

/// Formats an `f32`; the 23 fraction bits are left-aligned into 6 hex digits.
pub fn format_f32(v: f32) -> String {
    let bits = v.to_bits();
    let sign = if bits >> 31 == 1 { "-" } else { "" };
    let exp_biased = ((bits >> 23) & 0xff) as i64;
    let frac = u64::from(bits & ((1u32 << 23) - 1)) << 1; // 24 bits, 6 digits
    if exp_biased == 0xff {
        return if frac == 0 { format!("{sign}inf") } else { "nan".to_owned() };
    }
    if exp_biased == 0 && frac == 0 {
        return format!("{sign}0x0p+0");
    }
    if exp_biased == 0 {
        return format!("{sign}0x0.{}p-126", frac_digits(frac, 6));
    }
    let e = exp_biased - 127;
    let digits = frac_digits(frac, 6);
    if digits.is_empty() {
        format!("{sign}0x1p{e:+}")
    } else {
        format!("{sign}0x1.{digits}p{e:+}")
    }
}

/// Fraction bits right-aligned in a `4*ndigits`-bit window, rendered as hex
/// with trailing zeros trimmed.
fn frac_digits(frac: u64, ndigits: u32) -> String {
    let mut s = String::new();
    for i in 0..ndigits {
        let shift = 4 * (ndigits - 1 - i);
        let d = (frac >> shift) & 0xf;
        s.push(char::from_digit(d as u32, 16).unwrap());
    }
    while s.ends_with('0') {
        s.pop();
    }
    s
}

pub fn parse_f64(s: &str) -> Result<f64, String> {
    let (sign, mant, exp2) = parse_parts(s)?;
    match assemble(mant, exp2, 52, 1023) {
        Some(bits) => Ok(f64::from_bits(bits | if sign { 1u64 << 63 } else { 0 })),
        None => Err(format!("`{s}` is not exactly representable as f64")),
    }
}

pub fn parse_f32(s: &str) -> Result<f32, String> {
    let (sign, mant, exp2) = parse_parts(s)?;
    match assemble(mant, exp2, 23, 127) {
        Some(bits) => {
            Ok(f32::from_bits(bits as u32 | if sign { 1u32 << 31 } else { 0 }))
        }
        None => Err(format!("`{s}` is not exactly representable as f32")),
    }
}

/// Splits `[-]0xH[.H]p[+-]D` (or `inf`) into sign, integer mantissa and the
/// power of two it is scaled by. NaN is rejected here: value invariants
/// upstream guarantee it never appears, so it never decodes.
fn parse_parts(s: &str) -> Result<(bool, u128, i64), String> {
    let (sign, rest) = match s.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, s),
    };
    if rest == "inf" {
        return Ok((sign, 1, INF_EXP));
    }
    if rest.eq_ignore_ascii_case("nan") {
        return Err("nan is not a valid value".to_owned());
    }
    let rest = rest
        .strip_prefix("0x")
        .or_else(|| rest.strip_prefix("0X"))
        .ok_or_else(|| format!("`{s}`: missing 0x prefix"))?;
    let p = rest
        .find(['p', 'P'])
        .ok_or_else(|| format!("`{s}`: missing binary exponent"))?;
    let (digits, exp_str) = (&rest[..p], &rest[p + 1..]);
    let exp: i64 = exp_str
        .parse()
        .map_err(|_| format!("`{s}`: bad exponent `{exp_str}`"))?;
    if exp.abs() > 1_000_000 {
        return Err(format!("`{s}`: exponent out of range"));
    }
    let (int_part, frac_part) = match digits.find('.') {
        Some(dot) => (&digits[..dot], &digits[dot + 1..]),
        None => (digits, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(format!("`{s}`: no mantissa digits"));
    }
    let mut mant: u128 = 0;
    for c in int_part.chars().chain(frac_part.chars()) {
        let d = c.to_digit(16).ok_or_else(|| format!("`{s}`: bad hex digit `{c}`"))?;
        mant = mant
            .checked_mul(16)
            .and_then(|m| m.checked_add(u128::from(d)))
            .ok_or_else(|| format!("`{s}`: mantissa overflow"))?;
    }
    Ok((sign, mant, exp - 4 * frac_part.len() as i64))
}

/// Exponent sentinel carried by the `inf` token.
const INF_EXP: i64 = i64::MAX;

/// Builds the magnitude bits of `mant * 2^exp2` for a format with
/// `mant_bits` stored fraction bits and the given exponent bias.
/// Returns `None` when the value is not exactly representable.
fn assemble(mant: u128, exp2: i64, mant_bits: u32, bias: i64) -> Option<u64> {
    if exp2 == INF_EXP {
        return Some(((2 * bias + 1) as u64) << mant_bits);
    }
    if mant == 0 {
        return Some(0);
    }
    let msb = 127 - mant.leading_zeros() as i64;
    let e = exp2 + msb; // unbiased binary exponent
    let max_e = bias;
    let min_e = 1 - bias;
    if e > max_e {
        return None;
    }
    if e >= min_e {
        // Normal: place the leading bit at position `mant_bits`.
        let shift = msb - i64::from(mant_bits);
        let m = shift_exact(mant, shift)?;
        let frac = (m as u64) & ((1u64 << mant_bits) - 1);
        return Some((((e + bias) as u64) << mant_bits) | frac);
    }
    // Subnormal: unit in the last place is 2^(min_e - mant_bits).
    let shift = (min_e - i64::from(mant_bits)) - exp2;
    let m = shift_exact(mant, shift)?;
    if m >> mant_bits != 0 {
        return None;
    }
    Some(m as u64)
}

/// `mant * 2^-shift` when exact (no set bits lost, no overflow).
fn shift_exact(mant: u128, shift: i64) -> Option<u128> {
    if shift >= 0 {
        let shift = u32::try_from(shift).ok()?;
        if shift >= 128 || mant & ((1u128 << shift) - 1) != 0 {
            return None;
        }
        Some(mant >> shift)
    } else {
        let shift = u32::try_from(-shift).ok()?;
        if shift >= 128 || mant.leading_zeros() < shift {
            return None;
        }
        Some(mant << shift)
    }
}
