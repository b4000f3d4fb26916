//! Shared file helpers: atomic writes and strict CSV reading.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::IngestError;

/// Writes `bytes` to `path` through a temporary file in the same directory
/// followed by a rename, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Opens a comma-separated file and checks that its header row equals
/// `expected` exactly.
pub(crate) fn open_csv(
    path: &Path,
    expected: &str,
) -> Result<csv::Reader<BufReader<File>>, IngestError> {
    let file = File::open(path).map_err(|e| IngestError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(BufReader::new(file));
    check_header(&mut reader, expected)?;
    Ok(reader)
}

pub(crate) fn check_header<R: std::io::Read>(
    reader: &mut csv::Reader<R>,
    expected: &str,
) -> Result<(), IngestError> {
    let found = reader
        .headers()
        .map_err(|source| IngestError::Csv { line: 1, source })?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if found != expected {
        return Err(IngestError::Header {
            expected: expected.to_string(),
            found,
        });
    }
    Ok(())
}

/// Iterates records, pairing each with its 1-based line number.
pub(crate) fn records<R: std::io::Read>(
    reader: &mut csv::Reader<R>,
) -> impl Iterator<Item = Result<(u64, csv::StringRecord), IngestError>> + '_ {
    let mut fallback = 1u64;
    reader.records().map(move |rec| {
        fallback += 1;
        match rec {
            Ok(r) => {
                let line = r.position().map(|p| p.line()).unwrap_or(fallback);
                Ok((line, r))
            }
            Err(source) => {
                let line = source
                    .position()
                    .map(|p| p.line())
                    .unwrap_or(fallback);
                Err(IngestError::Csv { line, source })
            }
        }
    })
}

pub(crate) fn parse_num<T: FromStr>(line: u64, field: &str, raw: &str) -> Result<T, IngestError> {
    raw.trim()
        .parse::<T>()
        .map_err(|_| IngestError::field(line, field, format!("malformed number `{raw}`")))
}

pub(crate) fn parse_finite(line: u64, field: &str, raw: &str) -> Result<f64, IngestError> {
    let v: f64 = parse_num(line, field, raw)?;
    if !v.is_finite() {
        return Err(IngestError::field(line, field, format!("non-finite value `{raw}`")));
    }
    Ok(v)
}

/// Serializes rows as CSV into a byte buffer with `\n` line endings.
pub fn csv_bytes<I, R>(header: &[&str], rows: I) -> Vec<u8>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    writer.write_record(header).expect("in-memory write");
    for row in rows {
        writer.write_record(row).expect("in-memory write");
    }
    writer.into_inner().expect("in-memory flush")
}
