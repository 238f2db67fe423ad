//! UCI bag-of-words corpus files.
//!
//! Three header lines (document count, vocabulary size, number of nonzero
//! triples) followed by one `docID wordID count` line per nonzero cell,
//! with 1-based ids. Lines starting with `#` before the header carry run
//! configuration and are skipped on read.

use std::io::{BufRead, Write};

use super::CliError;
use crate::model::{Corpus, CountEntry};

fn parse_count<T: std::str::FromStr>(line: usize, field: &str, value: &str) -> Result<T, CliError> {
    value.trim().parse().map_err(|_| CliError::Parse {
        line,
        message: format!("expected {field}, found '{value}'"),
    })
}

/// Read a corpus in UCI bag-of-words format.
pub fn parse_uci_bow<R: BufRead>(input: R) -> Result<Corpus, CliError> {
    let mut lines = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line.map_err(CliError::Io)?;
        let trimmed = line.trim().to_string();
        if trimmed.starts_with('#') || trimmed.is_empty() {
            continue;
        }
        lines.push((idx + 1, trimmed));
    }
    if lines.len() < 3 {
        return Err(CliError::Parse {
            line: lines.len(),
            message: "file ends before the three header lines".into(),
        });
    }
    let n_docs: usize = parse_count(lines[0].0, "document count", &lines[0].1)?;
    let vocab_size: usize = parse_count(lines[1].0, "vocabulary size", &lines[1].1)?;
    let nnz: usize = parse_count(lines[2].0, "nonzero count", &lines[2].1)?;
    let body = &lines[3..];
    if body.len() != nnz {
        return Err(CliError::Parse {
            line: lines[2].0,
            message: format!("header promises {nnz} triples, found {}", body.len()),
        });
    }
    let mut entries = Vec::with_capacity(nnz);
    let mut seen = std::collections::HashSet::with_capacity(nnz);
    for (line_no, text) in body {
        let mut parts = text.split_whitespace();
        let doc: usize = parse_count(*line_no, "docID", parts.next().unwrap_or(""))?;
        let word: usize = parse_count(*line_no, "wordID", parts.next().unwrap_or(""))?;
        let count: i64 = parse_count(*line_no, "count", parts.next().unwrap_or(""))?;
        if parts.next().is_some() {
            return Err(CliError::Parse {
                line: *line_no,
                message: "expected exactly 3 fields".into(),
            });
        }
        if doc < 1 || doc > n_docs {
            return Err(CliError::Parse {
                line: *line_no,
                message: format!("docID {doc} outside 1..{n_docs}"),
            });
        }
        if word < 1 || word > vocab_size {
            return Err(CliError::Parse {
                line: *line_no,
                message: format!("wordID {word} outside 1..{vocab_size}"),
            });
        }
        if count < 1 {
            return Err(CliError::Parse {
                line: *line_no,
                message: format!("count must be positive, got {count}"),
            });
        }
        if !seen.insert((doc, word)) {
            return Err(CliError::Parse {
                line: *line_no,
                message: format!("duplicate (doc {doc}, word {word}) pair"),
            });
        }
        entries.push(CountEntry {
            word: word - 1,
            doc: doc - 1,
            count: count as u32,
        });
    }
    Corpus::new(vocab_size, n_docs, entries).map_err(|e| CliError::Parse {
        line: 0,
        message: e.to_string(),
    })
}

/// Write a corpus in UCI bag-of-words format, optionally preceded by `#`
/// comment lines recording the run configuration.
pub fn write_uci_bow<W: Write>(
    corpus: &Corpus,
    mut out: W,
    comment: Option<&str>,
) -> std::io::Result<()> {
    if let Some(c) = comment {
        for line in c.lines() {
            writeln!(out, "# {line}")?;
        }
    }
    writeln!(out, "{}", corpus.n_docs())?;
    writeln!(out, "{}", corpus.vocab_size())?;
    writeln!(out, "{}", corpus.entries().len())?;
    for e in corpus.entries() {
        writeln!(out, "{} {} {}", e.doc + 1, e.word + 1, e.count)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn parses_minimal_file() {
        let corpus = parse_uci_bow(Cursor::new("2\n3\n1\n1 2 5\n")).unwrap();
        assert_eq!(corpus.n_docs(), 2);
        assert_eq!(corpus.vocab_size(), 3);
        let e = corpus.entries()[0];
        assert_eq!((e.doc, e.word, e.count), (0, 1, 5));
    }

    #[test]
    fn skips_comment_header() {
        let corpus = parse_uci_bow(Cursor::new("# seed=7 alpha=1\n2\n3\n1\n1 2 5\n")).unwrap();
        assert_eq!(corpus.total_tokens(), 5);
    }

    #[test]
    fn nnz_mismatch_names_expected_and_found() {
        let err = parse_uci_bow(Cursor::new("2\n3\n2\n1 2 5\n")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('2') && msg.contains('1'), "{msg}");
    }

    #[test]
    fn rejects_bad_ids_counts_and_duplicates() {
        assert!(parse_uci_bow(Cursor::new("2\n3\n1\n3 1 1\n")).is_err());
        assert!(parse_uci_bow(Cursor::new("2\n3\n1\n1 4 1\n")).is_err());
        assert!(parse_uci_bow(Cursor::new("2\n3\n1\n1 1 0\n")).is_err());
        assert!(parse_uci_bow(Cursor::new("2\n3\n2\n1 1 1\n1 1 2\n")).is_err());
        let err = parse_uci_bow(Cursor::new("2\nx\n1\n1 1 1\n")).unwrap_err();
        assert!(matches!(err, CliError::Parse { line: 2, .. }));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = parse_uci_bow(Cursor::new("# comment\n2\n3\n1\n1 2 bad\n")).unwrap_err();
        assert!(matches!(err, CliError::Parse { line: 5, .. }), "{err}");
    }
}
