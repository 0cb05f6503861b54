use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SSLDataset, UNLABELED};
use crate::error::{Error, Result};

/// How to read a CSV file: the label column (if any) and the class count.
/// Every other column is a numeric feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    pub label_column: Option<String>,
    pub classes: usize,
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn parse_label(cell: &str, line: usize, column: &str, classes: usize) -> Result<i64> {
    let cell = cell.trim();
    if cell.is_empty() || cell == "?" {
        return Ok(UNLABELED);
    }
    let value: f64 = cell.parse().map_err(|_| Error::ParseError {
        line,
        column: Some(column.to_string()),
        message: format!("label {cell:?} is not a number"),
    })?;
    if value.fract() != 0.0 || value < 0.0 || value >= classes as f64 {
        return Err(Error::InvalidLabel { label: if value.fract() == 0.0 { value as i64 } else { i64::MIN }, classes });
    }
    Ok(value as i64)
}

/// Reads a headered CSV. An empty or `?` label cell marks the row unlabeled.
/// Line numbers in errors are 1-based and count the header.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<SSLDataset> {
    let text = read_to_string(path)?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::ParseError { line: 1, column: None, message: e.to_string() })?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let label_idx = match &schema.label_column {
        Some(name) => Some(header.iter().position(|h| h == name).ok_or_else(|| Error::ParseError {
            line: 1,
            column: Some(name.clone()),
            message: "label column not found in header".into(),
        })?),
        None => None,
    };
    let dim = header.len() - usize::from(label_idx.is_some());
    if dim == 0 {
        return Err(Error::ParseError { line: 1, column: None, message: "no feature columns".into() });
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::ParseError {
            line: e.position().map_or(0, |p| p.line() as usize),
            column: None,
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != header.len() {
            return Err(Error::ParseError {
                line,
                column: None,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let mut label = UNLABELED;
        for (j, cell) in record.iter().enumerate() {
            if Some(j) == label_idx {
                label = parse_label(cell, line, &header[j], schema.classes)?;
                continue;
            }
            let v: f64 = cell.trim().parse().map_err(|_| Error::ParseError {
                line,
                column: Some(header[j].clone()),
                message: format!("{cell:?} is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::ParseError {
                    line,
                    column: Some(header[j].clone()),
                    message: "non-finite value".into(),
                });
            }
            features.push(v);
        }
        labels.push(label);
    }
    SSLDataset::new(features, dim, labels, schema.classes)
}

/// Writes features as `f0..f{D-1}` plus a `label` column (`?` when unlabeled).
pub fn write_csv(ds: &SSLDataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut header: Vec<String> = (0..ds.dim()).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(&header).map_err(io)?;
    for i in 0..ds.len() {
        let mut row: Vec<String> = ds.row(i).iter().map(|v| format!("{v:?}")).collect();
        row.push(ds.label(i).map_or_else(|| "?".to_string(), |y| y.to_string()));
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| Error::Io(e.to_string()))
}

/// Reads bag-of-words data.
///
/// * `triplets`: whitespace-separated `doc_id word_id count` lines with
///   0-based ids; repeated pairs add up, `#` starts a comment line. The
///   document count is `max doc_id + 1`.
/// * `vocab`: one word per line; the vocabulary size is the line count.
/// * `labels`: optional, one label per line in document order, `?` for
///   unlabeled; without it all documents are unlabeled.
pub fn load_unigram(triplets: &Path, vocab: &Path, labels: Option<&Path>, classes: usize) -> Result<SSLDataset> {
    let v = read_to_string(vocab)?.lines().filter(|l| !l.trim().is_empty()).count();
    if v == 0 {
        return Err(Error::ParseError { line: 1, column: None, message: "empty vocabulary".into() });
    }
    let mut entries = Vec::new();
    let mut docs = 0usize;
    for (k, raw) in read_to_string(triplets)?.lines().enumerate() {
        let line = k + 1;
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = l.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(Error::ParseError {
                line,
                column: None,
                message: format!("expected 3 fields, found {}", parts.len()),
            });
        }
        let field = |idx: usize, name: &str| -> Result<u64> {
            parts[idx].parse().map_err(|_| Error::ParseError {
                line,
                column: Some(name.to_string()),
                message: format!("{:?} is not a non-negative integer", parts[idx]),
            })
        };
        let (doc, word, count) = (field(0, "doc_id")? as usize, field(1, "word_id")? as usize, field(2, "count")?);
        if word >= v {
            return Err(Error::ParseError {
                line,
                column: Some("word_id".into()),
                message: format!("word id {word} outside vocabulary of {v}"),
            });
        }
        docs = docs.max(doc + 1);
        entries.push((doc, word, count as f64));
    }
    let mut features = vec![0.0; docs * v];
    for (d, w, c) in entries {
        features[d * v + w] += c;
    }
    let labels = match labels {
        Some(p) => {
            let ls: Vec<i64> = read_to_string(p)?
                .lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(k, l)| parse_label(l, k + 1, "label", classes))
                .collect::<Result<_>>()?;
            if ls.len() != docs {
                return Err(Error::InvalidInput(format!("{} labels for {docs} documents", ls.len())));
            }
            ls
        }
        None => vec![UNLABELED; docs],
    };
    SSLDataset::new(features, v, labels, classes)?.with_counts()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn file(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    fn schema() -> CsvSchema {
        CsvSchema { label_column: Some("y".into()), classes: 2 }
    }

    #[test]
    fn missing_label_becomes_sentinel() {
        let dir = tempfile::tempdir().unwrap();
        let p = file(&dir, "a.csv", "a,y,b\n1.0,0,2\n3,,4\n5,1,6\n");
        let ds = load_csv(&p, &schema()).unwrap();
        assert_eq!(ds.raw_labels(), &[0, -1, 1]);
        assert_eq!(ds.features(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let q = file(&dir, "q.csv", "a,y\n1,?\n");
        assert_eq!(load_csv(&q, &schema()).unwrap().raw_labels(), &[-1]);
    }

    #[test]
    fn ragged_row_reports_its_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = file(&dir, "r.csv", "a,y\n1,0\n2,1\n3\n");
        match load_csv(&p, &schema()) {
            Err(Error::ParseError { line, column: None, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_cells() {
        let dir = tempfile::tempdir().unwrap();
        let p = file(&dir, "n.csv", "a,y\n1,0\nx,1\n");
        assert_eq!(
            load_csv(&p, &schema()),
            Err(Error::ParseError { line: 3, column: Some("a".into()), message: "\"x\" is not a number".into() })
        );
        let p = file(&dir, "l.csv", "a,y\n1,5\n");
        assert_eq!(load_csv(&p, &schema()), Err(Error::InvalidLabel { label: 5, classes: 2 }));
        let missing = dir.path().join("nope.csv");
        match load_csv(&missing, &schema()) {
            Err(Error::Io(msg)) => assert!(msg.contains("nope.csv")),
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn csv_round_trip(rows in proptest::collection::vec((-1e6f64..1e6, -1e3f64..1e3, -1i64..3), 1..30)) {
            let dir = tempfile::tempdir().unwrap();
            let feats: Vec<f64> = rows.iter().flat_map(|r| [r.0, r.1]).collect();
            let labels: Vec<i64> = rows.iter().map(|r| r.2).collect();
            let ds = SSLDataset::new(feats, 2, labels, 3).unwrap();
            let p = dir.path().join("rt.csv");
            write_csv(&ds, &p).unwrap();
            let back = load_csv(&p, &CsvSchema { label_column: Some("label".into()), classes: 3 }).unwrap();
            prop_assert_eq!(back.features(), ds.features());
            prop_assert_eq!(back.raw_labels(), ds.raw_labels());
        }
    }

    #[test]
    fn unigram_triplets() {
        let dir = tempfile::tempdir().unwrap();
        let t = file(&dir, "t.txt", "# doc word count\n0 1 2\n0 2 1\n2 0 4\n0 1 1\n");
        let v = file(&dir, "v.txt", "apple\nbanana\ncherry\n");
        let l = file(&dir, "l.txt", "1\n?\n0\n");
        let ds = load_unigram(&t, &v, Some(&l), 2).unwrap();
        assert!(ds.is_counts());
        assert_eq!(ds.features(), &[0.0, 3.0, 1.0, 0.0, 0.0, 0.0, 4.0, 0.0, 0.0]);
        assert_eq!(ds.raw_labels(), &[1, -1, 0]);
        let bad = file(&dir, "b.txt", "0 7 1\n");
        assert!(matches!(load_unigram(&bad, &v, None, 2), Err(Error::ParseError { line: 1, .. })));
        assert!(super::super::standardize(&ds).is_err());
    }
}
