//! CSV trace files: `iteration,elapsed_seconds,elbo,heldout_loglik`.
//!
//! The objective column is empty for sampler traces. Values carry ten
//! significant digits; `#` comment lines before the header record the run
//! configuration.

use std::io::{BufRead, Write};

use super::CliError;
use crate::vi::{FitTrace, TraceRow};

const HEADER: &str = "iteration,elapsed_seconds,elbo,heldout_loglik";

fn fmt(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else {
        format!("{x:.9e}")
    }
}

/// Write a trace as CSV, optionally preceded by `#` comment lines.
pub fn write_trace<W: Write>(
    trace: &FitTrace,
    mut out: W,
    comment: Option<&str>,
) -> std::io::Result<()> {
    if let Some(c) = comment {
        for line in c.lines() {
            writeln!(out, "# {line}")?;
        }
    }
    writeln!(out, "{HEADER}")?;
    for (i, row) in trace.rows.iter().enumerate() {
        let elbo = row.elbo.map(fmt).unwrap_or_default();
        writeln!(
            out,
            "{i},{},{elbo},{}",
            fmt(row.elapsed_seconds),
            fmt(row.heldout)
        )?;
    }
    Ok(())
}

/// Parse a trace written by [`write_trace`].
pub fn read_trace<R: BufRead>(input: R) -> Result<FitTrace, CliError> {
    let mut rows = Vec::new();
    let mut saw_header = false;
    for (idx, line) in input.lines().enumerate() {
        let line = line.map_err(CliError::Io)?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_header {
            if line != HEADER {
                return Err(CliError::Parse {
                    line: idx + 1,
                    message: format!("expected trace header, found '{line}'"),
                });
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(CliError::Parse {
                line: idx + 1,
                message: format!("expected 4 columns, found {}", fields.len()),
            });
        }
        let num = |s: &str| -> Result<f64, CliError> {
            s.parse().map_err(|_| CliError::Parse {
                line: idx + 1,
                message: format!("bad number '{s}'"),
            })
        };
        let elbo = if fields[2].is_empty() {
            None
        } else {
            Some(num(fields[2])?)
        };
        rows.push(TraceRow {
            elbo,
            elapsed_seconds: num(fields[1])?,
            heldout: num(fields[3])?,
        });
    }
    if !saw_header {
        return Err(CliError::Parse {
            line: 0,
            message: "missing trace header".into(),
        });
    }
    Ok(FitTrace { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn empty_trace_is_header_only() {
        let mut buf = Vec::new();
        write_trace(&FitTrace::default(), &mut buf, None).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert_eq!(text.lines().next().unwrap(), HEADER);
    }

    #[test]
    fn three_rows_make_four_lines() {
        let trace = FitTrace {
            rows: (0..3)
                .map(|i| TraceRow {
                    elbo: Some(-100.0 - i as f64),
                    heldout: -5.0,
                    elapsed_seconds: i as f64,
                })
                .collect(),
        };
        let mut buf = Vec::new();
        write_trace(&trace, &mut buf, None).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
    }

    #[test]
    fn round_trips_to_ten_digits() {
        let trace = FitTrace {
            rows: vec![
                TraceRow {
                    elbo: Some(-1234.567890123),
                    heldout: -7.2345678901234,
                    elapsed_seconds: 0.123456789,
                },
                TraceRow {
                    elbo: None,
                    heldout: -6.999999999,
                    elapsed_seconds: 2.5,
                },
            ],
        };
        let mut buf = Vec::new();
        write_trace(&trace, &mut buf, Some("fit-mcmc seed=1")).unwrap();
        let back = read_trace(Cursor::new(buf)).unwrap();
        assert_eq!(back.rows.len(), 2);
        assert!(back.rows[1].elbo.is_none());
        for (a, b) in trace.rows.iter().zip(&back.rows) {
            let close = |x: f64, y: f64| (x - y).abs() <= 1e-9 * x.abs().max(1.0);
            assert!(close(a.heldout, b.heldout));
            assert!(close(a.elapsed_seconds, b.elapsed_seconds));
            if let (Some(x), Some(y)) = (a.elbo, b.elbo) {
                assert!(close(x, y));
            }
        }
    }

    #[test]
    fn nan_heldout_survives() {
        let trace = FitTrace {
            rows: vec![TraceRow {
                elbo: None,
                heldout: f64::NAN,
                elapsed_seconds: 1.0,
            }],
        };
        let mut buf = Vec::new();
        write_trace(&trace, &mut buf, None).unwrap();
        let back = read_trace(Cursor::new(buf)).unwrap();
        assert!(back.rows[0].heldout.is_nan());
    }
}
