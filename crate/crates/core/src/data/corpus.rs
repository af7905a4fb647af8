use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::semisup::{Example, ExampleId};

/// Supported corpus encodings.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    /// One JSON object per line: `{"text": "...", "label": 0}`; `label` is
    /// optional.
    #[default]
    JsonLines,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    text: String,
    #[serde(default)]
    label: Option<i64>,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    text: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<usize>,
}

/// Reads a corpus. Ids follow input order; blank lines are skipped but still
/// count toward line numbers in errors.
pub fn load_corpus(path: &Path, format: CorpusFormat, num_labels: usize) -> Result<Vec<Example>, DataError> {
    let file = File::open(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_corpus(BufReader::new(file), format, num_labels)
}

pub fn parse_corpus(reader: impl BufRead, format: CorpusFormat, num_labels: usize) -> Result<Vec<Example>, DataError> {
    let CorpusFormat::JsonLines = format;
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| DataError::Malformed {
            line: line_no,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| DataError::Malformed {
            line: line_no,
            reason: e.to_string(),
        })?;
        let id = ExampleId(out.len() as u64);
        let ex = match rec.label {
            None => Example::unlabeled(id, rec.text),
            Some(l) if l >= 0 && (l as usize) < num_labels => Example::hard(id, rec.text, l as usize),
            Some(l) => {
                return Err(DataError::UnknownLabel {
                    line: line_no,
                    label: l,
                })
            }
        };
        out.push(ex);
    }
    Ok(out)
}

/// Writes examples in the JSON-lines corpus format. Soft labels are not part
/// of the format and are written as unlabeled.
pub fn write_corpus(path: &Path, examples: &[Example]) -> Result<(), DataError> {
    let io_err = |e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    for ex in examples {
        let rec = RecordOut {
            text: &ex.text,
            label: ex.hard_label(),
        };
        let line = serde_json::to_string(&rec).expect("records serialize");
        writeln!(w, "{line}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semisup::LabelState;

    fn parse(s: &str) -> Result<Vec<Example>, DataError> {
        parse_corpus(s.as_bytes(), CorpusFormat::JsonLines, 2)
    }

    #[test]
    fn labeled_and_unlabeled_records() {
        let ex = parse("{\"text\":\"good\",\"label\":0}\n{\"text\":\"bad\",\"label\":1}\n").unwrap();
        assert_eq!(ex.len(), 2);
        assert_eq!(ex[1].hard_label(), Some(1));
        assert_eq!(ex[1].id, ExampleId(1));
        let ex = parse("{\"text\":\"no label\"}").unwrap();
        assert_eq!(ex[0].label(), &LabelState::Unlabeled);
    }

    #[test]
    fn duplicates_are_kept() {
        let ex = parse("{\"text\":\"same\",\"label\":0}\n{\"text\":\"same\",\"label\":0}").unwrap();
        assert_eq!(ex.len(), 2);
        assert_ne!(ex[0].id, ex[1].id);
    }

    #[test]
    fn errors_carry_line_numbers() {
        match parse("{\"text\":\"ok\"}\n\n{\"text\": 5}") {
            Err(DataError::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        match parse("{\"text\":\"ok\",\"label\":7}") {
            Err(DataError::UnknownLabel { line, label }) => assert_eq!((line, label), (1, 7)),
            other => panic!("unexpected {other:?}"),
        }
    }
}
