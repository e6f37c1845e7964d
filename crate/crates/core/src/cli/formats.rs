//! Plain-text signal and measure files, and the metrics CSV.

use std::io::{BufRead, Write};

use crate::bwgan::TrainRecord;
use crate::error::{Error, Result};
use crate::spaces::{Geometry, GridSignal};
use crate::transport::DiscreteMeasure;

pub const CSV_HEADER: &str = "iter,critic_loss,gen_loss,penalty_mean,grad_dual_norm_mean,drift_term,exact_w1,lr";

/// Parses `CxHxW`.
pub fn parse_shape(s: &str) -> Result<Geometry> {
    let dims: Vec<usize> = s
        .split(['x', 'X'])
        .map(|d| d.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Format(format!("shape {s:?} is not CxHxW")))?;
    match dims.as_slice() {
        &[c, h, w] => Geometry::new(c, h, w),
        _ => Err(Error::Format(format!("shape {s:?} is not CxHxW"))),
    }
}

fn numbers(line: &str, lineno: usize) -> Result<Vec<f64>> {
    let content = line.split('#').next().unwrap_or("");
    content
        .split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Format(format!("line {lineno}: {tok:?} is not a finite number")))
        })
        .collect()
}

/// Whitespace-separated values; `#` starts a comment. Without a shape the
/// signal is flat.
pub fn parse_signal(text: &str, shape: Option<Geometry>) -> Result<GridSignal> {
    let mut values = Vec::new();
    for (k, line) in text.lines().enumerate() {
        values.extend(numbers(line, k + 1)?);
    }
    if values.is_empty() {
        return Err(Error::Format("signal file has no values".into()));
    }
    let geometry = shape.unwrap_or(Geometry::flat(values.len()));
    GridSignal::new(geometry, values)
}

/// One support point per line: weight, then coordinates.
pub fn parse_measure(text: &str, shape: Option<Geometry>) -> Result<DiscreteMeasure> {
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let nums = numbers(line, k + 1)?;
        let Some((&w, coords)) = nums.split_first() else {
            continue;
        };
        if coords.is_empty() {
            return Err(Error::Format(format!("line {}: weight without coordinates", k + 1)));
        }
        let geometry = shape.unwrap_or(Geometry::flat(coords.len()));
        points.push(GridSignal::new(geometry, coords.to_vec())?);
        weights.push(w);
    }
    if points.is_empty() {
        return Err(Error::EmptySample);
    }
    DiscreteMeasure::new(points, weights)
}

/// Formats with 12 significant digits, plain decimal notation for moderate
/// magnitudes.
pub fn fmt_sig12(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let e = v.abs().log10().floor() as i32;
    if (-5..15).contains(&e) {
        format!("{:.*}", (11 - e).max(0) as usize, v)
    } else {
        format!("{v:.11e}")
    }
}

/// Rounds to the value a 12-significant-digit round trip yields.
pub fn round_sig12(v: f64) -> f64 {
    fmt_sig12(v).parse().expect("formatted float parses")
}

pub fn write_metrics_csv<W: Write>(mut w: W, records: &[TrainRecord], log_every: usize) -> Result<()> {
    w.write_all(CSV_HEADER.as_bytes())?;
    w.write_all(b"\n")?;
    for r in records.iter().filter(|r| r.iter % log_every.max(1) == 0) {
        let w1 = r.exact_w1.map(fmt_sig12).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.iter,
            fmt_sig12(r.critic_loss),
            fmt_sig12(r.gen_loss),
            fmt_sig12(r.penalty_mean),
            fmt_sig12(r.grad_dual_norm_mean),
            fmt_sig12(r.drift_term),
            w1,
            fmt_sig12(r.lr)
        )?;
    }
    w.flush()?;
    Ok(())
}

/// One parsed CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub iter: usize,
    pub critic_loss: f64,
    pub gen_loss: f64,
    pub penalty_mean: f64,
    pub grad_dual_norm_mean: f64,
    pub drift_term: f64,
    pub exact_w1: Option<f64>,
    pub lr: f64,
}

impl MetricsRow {
    /// The row a record becomes after a write/read round trip.
    pub fn rounded(r: &TrainRecord) -> Self {
        MetricsRow {
            iter: r.iter,
            critic_loss: round_sig12(r.critic_loss),
            gen_loss: round_sig12(r.gen_loss),
            penalty_mean: round_sig12(r.penalty_mean),
            grad_dual_norm_mean: round_sig12(r.grad_dual_norm_mean),
            drift_term: round_sig12(r.drift_term),
            exact_w1: r.exact_w1.map(round_sig12),
            lr: round_sig12(r.lr),
        }
    }
}

pub fn read_metrics_csv<R: BufRead>(r: R) -> Result<Vec<MetricsRow>> {
    let mut lines = r.lines();
    let header = lines.next().transpose()?;
    if header.as_deref() != Some(CSV_HEADER) {
        return Err(Error::Format("missing metrics header".into()));
    }
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line?;
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Format(format!("metrics row {}: {line:?}", k + 1));
        if f.len() != 8 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        rows.push(MetricsRow {
            iter: f[0].parse().map_err(|_| bad())?,
            critic_loss: num(f[1])?,
            gen_loss: num(f[2])?,
            penalty_mean: num(f[3])?,
            grad_dual_norm_mean: num(f[4])?,
            drift_term: num(f[5])?,
            exact_w1: if f[6].is_empty() { None } else { Some(num(f[6])?) },
            lr: num(f[7])?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig12_formatting() {
        assert_eq!(fmt_sig12(5.0), "5.00000000000");
        assert_eq!(fmt_sig12(0.0002), "0.000200000000000");
        assert_eq!(fmt_sig12(-123.456), "-123.456000000");
        assert_eq!(fmt_sig12(1e-20), "1.00000000000e-20");
        assert_eq!(round_sig12(1.0 / 3.0), 0.333333333333);
    }

    #[test]
    fn measure_file_parsing() {
        let m = parse_measure("# two points\n0.25 0 0\n\n0.75 3 4 # far\n", None).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.weights(), &[0.25, 0.75]);
        assert!(matches!(
            parse_measure("0.5 1\n0.6 2\n", None),
            Err(Error::WeightSum(_))
        ));
        assert!(parse_measure("1.0\n", None).is_err());
    }

    #[test]
    fn signal_parsing() {
        let s = parse_signal("3 4\n", None).unwrap();
        assert_eq!(s.values(), &[3.0, 4.0]);
        assert!(parse_signal("1 2 x", None).is_err());
        assert!(parse_signal("1 2 3", Some(parse_shape("1x2x2").unwrap())).is_err());
        assert_eq!(parse_shape("3x32x32").unwrap().len(), 3072);
    }

    #[test]
    fn csv_round_trip() {
        let records: Vec<TrainRecord> = (0..4)
            .map(|i| TrainRecord {
                iter: i,
                critic_loss: -0.1234567890123456 * i as f64,
                gen_loss: 1.0 / 7.0,
                penalty_mean: 1e-9,
                penalty_variance: 0.0,
                grad_dual_norm_mean: 2.5,
                drift_term: 3.3e-7,
                exact_w1: (i % 2 == 0).then_some(0.75),
                lr: 2e-4 * (1.0 - i as f64 / 4.0),
            })
            .collect();
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &records, 1).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(CSV_HEADER));
        assert!(!text.contains('\r'));
        let rows = read_metrics_csv(buf.as_slice()).unwrap();
        let want: Vec<MetricsRow> = records.iter().map(MetricsRow::rounded).collect();
        assert_eq!(rows, want);
    }
}
