//! Minimal FASTA reader for sequence corpora.

use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FastaError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {reason}")]
    ParseError { line: usize, reason: String },
    #[error("symbol {symbol:?} at line {line} is outside the alphabet")]
    AlphabetViolation { line: usize, symbol: char },
    #[error("no record with id {0:?}")]
    UnknownRecord(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FastaRecord {
    pub id: String,
    pub sequence: Vec<u8>,
}

/// What to do with symbols outside the alphabet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sanitize {
    Reject,
    Drop,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FastaFile {
    pub records: Vec<FastaRecord>,
    /// Symbols removed under [`Sanitize::Drop`].
    pub dropped: usize,
}

impl FastaFile {
    pub fn record(&self, id: &str) -> Result<&FastaRecord, FastaError> {
        self.records
            .iter()
            .find(|r| r.id == id)
            .ok_or_else(|| FastaError::UnknownRecord(id.to_owned()))
    }
}

/// Parses `>`-headed records, uppercasing and stripping whitespace. The record id is the
/// first whitespace-delimited word of the header.
pub fn parse(text: &str, alphabet: &[u8], sanitize: Sanitize) -> Result<FastaFile, FastaError> {
    let mut records: Vec<FastaRecord> = Vec::new();
    let mut dropped = 0;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim_end_matches('\r');
        if let Some(header) = line.strip_prefix('>') {
            let id = header.split_whitespace().next().unwrap_or("").to_owned();
            if id.is_empty() {
                return Err(FastaError::ParseError {
                    line: line_no,
                    reason: "empty record id".into(),
                });
            }
            records.push(FastaRecord {
                id,
                sequence: Vec::new(),
            });
            continue;
        }
        if line.trim().is_empty() || line.starts_with(';') {
            continue;
        }
        let Some(current) = records.last_mut() else {
            return Err(FastaError::ParseError {
                line: line_no,
                reason: "sequence data before first header".into(),
            });
        };
        for b in line.bytes().filter(|b| !b.is_ascii_whitespace()) {
            let b = b.to_ascii_uppercase();
            if alphabet.contains(&b) {
                current.sequence.push(b);
            } else if sanitize == Sanitize::Drop {
                dropped += 1;
            } else {
                return Err(FastaError::AlphabetViolation {
                    line: line_no,
                    symbol: b as char,
                });
            }
        }
    }
    Ok(FastaFile { records, dropped })
}

pub fn read(path: impl AsRef<Path>, alphabet: &[u8], sanitize: Sanitize) -> Result<FastaFile, FastaError> {
    parse(&fs::read_to_string(path)?, alphabet, sanitize)
}

pub fn write_record(out: &mut String, record: &FastaRecord, width: usize) {
    out.push('>');
    out.push_str(&record.id);
    out.push('\n');
    for chunk in record.sequence.chunks(width.max(1)) {
        out.push_str(&String::from_utf8_lossy(chunk));
        out.push('\n');
    }
}
