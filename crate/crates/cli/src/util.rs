use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::Context;
use foramslice_core::metrics::MetricKind;
use foramslice_core::Axis;
use serde::Serialize;

/// Bad arguments that clap could not catch; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn parse_axis(s: &str) -> Result<Axis, String> {
    Axis::parse(s).ok_or_else(|| format!("{s:?} is not an axis (X, Y or Z)"))
}

/// Drops repeats, keeping first occurrences.
pub fn dedup_axes(axes: &[Axis]) -> Vec<Axis> {
    let mut out = Vec::new();
    for a in axes {
        if !out.contains(a) {
            out.push(*a);
        }
    }
    out
}

/// An error and its causes, skipping causes already quoted by the message
/// above them.
pub fn error_chain(e: &anyhow::Error) -> String {
    let mut out = e.to_string();
    for cause in e.chain().skip(1) {
        let text = cause.to_string();
        if !out.contains(&text) {
            out.push_str(": ");
            out.push_str(&text);
        }
    }
    out
}

pub fn parse_dims(s: &str) -> Result<[usize; 3], String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match v.as_slice() {
        [x, y, z] if *x > 0 && *y > 0 && *z > 0 => Ok([*x, *y, *z]),
        _ => Err("expected three positive sizes NX,NY,NZ".into()),
    }
}

pub fn parse_fractions(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match v.as_slice() {
        [a, b, c] => Ok([*a, *b, *c]),
        _ => Err("expected three comma-separated numbers".into()),
    }
}

pub fn parse_named_path(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((id, path)) if !id.is_empty() && !path.is_empty() => Ok((id.to_string(), PathBuf::from(path))),
        _ => Err("expected ID=PATH".into()),
    }
}

pub fn parse_metric_kind(s: &str) -> Result<MetricKind, String> {
    MetricKind::parse(s).ok_or_else(|| format!("{s:?} is not one of ssim, ncc, dice, hu, orb"))
}

pub fn print_json<T: Serialize + ?Sized>(value: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Left-aligned text table.
pub fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_parsers() {
        assert_eq!(parse_axis("x").unwrap(), Axis::X);
        assert!(parse_axis("w").is_err());
        assert_eq!(dedup_axes(&[Axis::Z, Axis::X, Axis::Z]), vec![Axis::Z, Axis::X]);
        assert_eq!(parse_dims("4,5,6").unwrap(), [4, 5, 6]);
        assert!(parse_dims("4,0,6").is_err());
        assert_eq!(parse_fractions("0.4,0.13,0.47").unwrap(), [0.4, 0.13, 0.47]);
        assert!(parse_fractions("1,2").is_err());
        assert_eq!(parse_named_path("cnn=a/b.tsv").unwrap(), ("cnn".into(), PathBuf::from("a/b.tsv")));
        assert!(parse_named_path("=x").is_err());
    }

    #[test]
    fn table_pads_columns() {
        let t = table(&["a", "bb"], &[vec!["xxx".into(), "y".into()]]);
        assert_eq!(t, "a    bb\nxxx  y\n");
    }
}
