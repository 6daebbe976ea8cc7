use anyhow::{anyhow, bail, Result};
use dirac_ladder::algebra::Scalar;

/// Parses `2`, `-0.5`, `0.5+0.866i`, `1e-3-2i`, `i`, `-2.5i`.
pub fn parse_complex(s: &str) -> Result<Scalar> {
    let t = s.trim();
    if t.is_empty() {
        bail!("empty number");
    }
    let Some(body) = t.strip_suffix('i').or_else(|| t.strip_suffix('j')) else {
        return Ok(Scalar::new(parse_real(t)?, 0.0));
    };
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&i| matches!(bytes[i], b'+' | b'-') && !matches!(bytes[i - 1], b'e' | b'E'));
    let (re_part, im_part) = match split {
        Some(i) => (&body[..i], &body[i..]),
        None => ("", body),
    };
    let im = match im_part {
        "" | "+" => 1.0,
        "-" => -1.0,
        x => parse_real(x)?,
    };
    let re = if re_part.is_empty() { 0.0 } else { parse_real(re_part)? };
    Ok(Scalar::new(re, im))
}

fn parse_real(s: &str) -> Result<f64> {
    let v: f64 = s.parse().map_err(|_| anyhow!("invalid number `{s}`"))?;
    if !v.is_finite() {
        bail!("non-finite number `{s}`");
    }
    Ok(v)
}

/// `e=1,a0=0.5` → `[("e", 1), ("a0", 0.5)]`.
pub fn parse_assignments(s: &str) -> Result<Vec<(String, Scalar)>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|pair| {
            let (k, v) = pair.split_once('=').ok_or_else(|| anyhow!("expected name=value, got `{pair}`"))?;
            Ok((k.trim().to_string(), parse_complex(v)?))
        })
        .collect()
}

pub fn parse_labels(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(String::from).collect()
}
