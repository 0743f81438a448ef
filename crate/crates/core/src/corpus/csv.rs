//! Strict RFC-4180 reader and a minimal writer.

use std::borrow::Cow;
use std::io::{self, Read, Write};

use super::{CorpusError, LabeledRecord, OperatorClass, RawRecord};

/// A parsed record plus the 1-based line on which it starts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvRow {
    pub line: usize,
    pub fields: Vec<String>,
}

/// Parses CSV text into records. Empty lines are skipped.
///
/// Quoted fields may contain commas, doubled quotes and line breaks. A quote
/// left open at end of input, or text directly after a closing quote, is an
/// error naming the row where the record started.
pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>, CorpusError> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut rows = Vec::new();
    let mut chars = text.chars().peekable();
    let mut line = 1;

    while chars.peek().is_some() {
        let start_line = line;
        let mut fields = Vec::new();
        let mut field = String::new();
        let mut quoted_field = false;
        loop {
            let Some(c) = chars.next() else {
                fields.push(std::mem::take(&mut field));
                break;
            };
            match c {
                '"' if field.is_empty() && !quoted_field => {
                    quoted_field = true;
                    loop {
                        match chars.next() {
                            None => {
                                return Err(CorpusError::MalformedCsv {
                                    row: start_line,
                                    reason: "unbalanced quote".into(),
                                })
                            }
                            Some('"') if chars.peek() == Some(&'"') => {
                                chars.next();
                                field.push('"');
                            }
                            Some('"') => break,
                            Some(ch) => {
                                if ch == '\n' {
                                    line += 1;
                                }
                                field.push(ch);
                            }
                        }
                    }
                    match chars.peek() {
                        None | Some(',') | Some('\n') | Some('\r') => {}
                        Some(other) => {
                            return Err(CorpusError::MalformedCsv {
                                row: start_line,
                                reason: format!("unexpected {other:?} after closing quote"),
                            })
                        }
                    }
                }
                ',' => {
                    fields.push(std::mem::take(&mut field));
                    quoted_field = false;
                }
                '\r' if chars.peek() == Some(&'\n') => {}
                '\n' => {
                    line += 1;
                    fields.push(std::mem::take(&mut field));
                    break;
                }
                _ => field.push(c),
            }
        }
        let blank = fields.len() == 1 && fields[0].is_empty() && !quoted_field;
        if !blank {
            rows.push(CsvRow {
                line: start_line,
                fields,
            });
        }
    }
    Ok(rows)
}

/// Reads CSV with a header row and extracts the two named columns.
pub fn ingest_records<R: Read>(
    mut source: R,
    operator_column: &str,
    summary_column: &str,
) -> Result<Vec<RawRecord>, CorpusError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    let text = String::from_utf8(bytes).map_err(|_| CorpusError::InvalidUtf8)?;
    let rows = parse_csv(&text)?;
    let Some((header, data)) = rows.split_first() else {
        return Err(CorpusError::MissingColumn {
            column: operator_column.to_string(),
            row: 1,
        });
    };
    let find = |name: &str| {
        header
            .fields
            .iter()
            .position(|h| h.trim() == name)
            .or_else(|| header.fields.iter().position(|h| h.trim().eq_ignore_ascii_case(name)))
            .ok_or_else(|| CorpusError::MissingColumn {
                column: name.to_string(),
                row: header.line,
            })
    };
    let op_idx = find(operator_column)?;
    let sum_idx = find(summary_column)?;
    let width = header.fields.len();

    data.iter()
        .map(|row| {
            if row.fields.len() != width {
                return Err(CorpusError::MalformedCsv {
                    row: row.line,
                    reason: format!("expected {width} fields, found {}", row.fields.len()),
                });
            }
            Ok(RawRecord::new(
                row.fields[op_idx].clone(),
                row.fields[sum_idx].clone(),
            ))
        })
        .collect()
}

/// Writes `class,summary` rows under a header.
pub fn write_labeled_csv<W: Write>(w: &mut W, records: &[LabeledRecord]) -> io::Result<()> {
    write_csv_row(w, &["class", "summary"])?;
    for r in records {
        write_csv_row(w, &[r.class.name(), r.summary.as_str()])?;
    }
    Ok(())
}

pub fn read_labeled_csv<R: Read>(source: R) -> Result<Vec<LabeledRecord>, CorpusError> {
    ingest_records(source, "class", "summary")?
        .into_iter()
        .map(|r| {
            let class = r
                .operator
                .parse::<OperatorClass>()
                .map_err(|_| CorpusError::UnknownClass(r.operator.clone()))?;
            Ok(LabeledRecord::new(class, r.summary))
        })
        .collect()
}

fn quote(field: &str) -> Cow<'_, str> {
    if field.contains([',', '"', '\n', '\r']) {
        Cow::Owned(format!("\"{}\"", field.replace('"', "\"\"")))
    } else {
        Cow::Borrowed(field)
    }
}

/// Writes one CSV row terminated by `\n`, quoting only where required.
pub fn write_csv_row<W: Write, S: AsRef<str>>(w: &mut W, fields: &[S]) -> io::Result<()> {
    for (i, f) in fields.iter().enumerate() {
        if i > 0 {
            w.write_all(b",")?;
        }
        w.write_all(quote(f.as_ref()).as_bytes())?;
    }
    w.write_all(b"\n")
}
