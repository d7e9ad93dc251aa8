//! Word-embedding sources: static GloVe-format tables and pre-exported
//! per-token contextual vectors.
//!
//! Static tables map each token to one fixed row; out-of-vocabulary tokens
//! get a zero vector. Contextual files (`CTXEMB v1`) carry a ready-made
//! matrix per sentence id, exported by whatever produced the vectors; the
//! dimension in the header flows through to the classifier input size.
//! Both are immutable after load — the neural trainers never write to
//! them.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Token-to-row embedding table with uniform dimension.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    rows: HashMap<String, Vec<f64>>,
    dim: usize,
}

impl EmbeddingTable {
    pub fn from_rows(rows: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let dim = match rows.first() {
            Some((_, v)) => v.len(),
            None => return Err(Error::Data("empty embedding table".into())),
        };
        let mut map = HashMap::with_capacity(rows.len());
        for (token, vector) in rows {
            if vector.len() != dim {
                return Err(Error::Data(format!(
                    "embedding row for `{token}` has {} values, expected {dim}",
                    vector.len()
                )));
            }
            map.insert(token, vector);
        }
        Ok(EmbeddingTable { rows: map, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn lookup(&self, token: &str) -> Option<&[f64]> {
        self.rows.get(token).map(|v| v.as_slice())
    }

    /// Stable byte digest of the table, for the frozenness check.
    pub fn content_digest(&self) -> u64 {
        // FNV-1a over rows in sorted token order.
        let mut tokens: Vec<&String> = self.rows.keys().collect();
        tokens.sort();
        let mut hash: u64 = 0xcbf29ce484222325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                hash ^= b as u64;
                hash = hash.wrapping_mul(0x100000001b3);
            }
        };
        for token in tokens {
            eat(token.as_bytes());
            for v in &self.rows[token] {
                eat(&v.to_bits().to_le_bytes());
            }
        }
        hash
    }
}

/// Load a text-format table: one `token v1 v2 ... vd` line per word,
/// space-separated, dimension inferred from the first line. Duplicate
/// tokens keep the last occurrence.
pub fn load_embedding_text(path: &Path) -> Result<EmbeddingTable> {
    let file = std::fs::File::open(path).map_err(|e| {
        Error::Config(format!("cannot open embedding file {}: {e}", path.display()))
    })?;
    let reader = BufReader::new(file);
    let mut map: HashMap<String, Vec<f64>> = HashMap::new();
    let mut dim = 0usize;
    let mut duplicates = 0usize;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_ascii_whitespace();
        let token = parts
            .next()
            .ok_or_else(|| Error::Parse {
                line: line_no,
                message: "blank embedding line".into(),
            })?
            .to_string();
        let values: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("non-numeric component `{p}`"),
                })
            })
            .collect::<Result<_>>()?;
        if dim == 0 {
            if values.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    message: "first line has no vector components".into(),
                });
            }
            dim = values.len();
        } else if values.len() != dim {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {dim} components, found {}", values.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                line: line_no,
                message: "non-finite component".into(),
            });
        }
        if map.insert(token, values).is_some() {
            duplicates += 1;
        }
    }
    if map.is_empty() {
        return Err(Error::Data(format!(
            "embedding file {} has no rows",
            path.display()
        )));
    }
    if duplicates > 0 {
        log::warn!(
            "{duplicates} duplicate token(s) in {}; last occurrence kept",
            path.display()
        );
    }
    Ok(EmbeddingTable { rows: map, dim })
}

/// Map a token sequence to a `T x d` matrix; OOV rows are zero.
pub fn embed_sequence(tokens: &[String], table: &EmbeddingTable) -> Tensor {
    let d = table.dim();
    let mut data = Vec::with_capacity(tokens.len() * d);
    for token in tokens {
        match table.lookup(token) {
            Some(row) => data.extend_from_slice(row),
            None => data.extend(std::iter::repeat(0.0).take(d)),
        }
    }
    Tensor::matrix(tokens.len(), d, data).expect("row-per-token matrix")
}

/// Per-sentence contextual vectors keyed by sentence id.
#[derive(Clone, Debug)]
pub struct ContextualSequenceFile {
    sequences: HashMap<String, Tensor>,
    dim: usize,
}

impl ContextualSequenceFile {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Matrix for a sentence id; unknown ids are a key error.
    pub fn sequence(&self, id: &str) -> Result<&Tensor> {
        self.sequences
            .get(id)
            .ok_or_else(|| Error::Key(format!("sentence id `{id}` not in contextual file")))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.sequences.contains_key(id)
    }
}

/// Parse a `CTXEMB v1` file.
///
/// Header: `CTXEMB v1 <d_ctx> <n_sentences>`. Each sentence: a line
/// `<id> <length>` followed by `length` lines of `d_ctx` floats.
pub fn load_contextual(path: &Path) -> Result<ContextualSequenceFile> {
    let file = std::fs::File::open(path).map_err(|e| {
        Error::Config(format!(
            "cannot open contextual file {}: {e}",
            path.display()
        ))
    })?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        line: 1,
        message: "empty contextual file".into(),
    })?;
    let header = header?;
    let fields: Vec<&str> = header.split_ascii_whitespace().collect();
    if fields.len() != 4 || fields[0] != "CTXEMB" || fields[1] != "v1" {
        return Err(Error::Parse {
            line: 1,
            message: format!("bad header `{header}`; expected `CTXEMB v1 <d> <n>`"),
        });
    }
    let dim: usize = fields[2].parse().map_err(|_| Error::Parse {
        line: 1,
        message: format!("bad dimension `{}`", fields[2]),
    })?;
    let count: usize = fields[3].parse().map_err(|_| Error::Parse {
        line: 1,
        message: format!("bad sentence count `{}`", fields[3]),
    })?;
    if dim == 0 {
        return Err(Error::Parse {
            line: 1,
            message: "dimension must be positive".into(),
        });
    }

    let mut sequences = HashMap::with_capacity(count);
    for _ in 0..count {
        let (i, line) = lines.next().ok_or_else(|| {
            Error::Data(format!("contextual file ended before {count} sentences"))
        })?;
        let line_no = i + 1;
        let line = line?;
        let fields: Vec<&str> = line.split_ascii_whitespace().collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected `<id> <length>`, found `{line}`"),
            });
        }
        let id = fields[0].to_string();
        let length: usize = fields[1].parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("bad length `{}`", fields[1]),
        })?;
        if length == 0 {
            return Err(Error::DataAt {
                row: line_no,
                message: format!("sentence `{id}` declares zero length"),
            });
        }
        let mut data = Vec::with_capacity(length * dim);
        for _ in 0..length {
            let (j, row) = lines.next().ok_or_else(|| {
                Error::Data(format!(
                    "sentence `{id}` declares {length} rows but the file ended"
                ))
            })?;
            let row = row?;
            let values: Vec<f64> = row
                .split_ascii_whitespace()
                .map(|p| {
                    p.parse::<f64>().map_err(|_| Error::Parse {
                        line: j + 1,
                        message: format!("non-numeric component `{p}`"),
                    })
                })
                .collect::<Result<_>>()?;
            if values.len() != dim {
                return Err(Error::DataAt {
                    row: j + 1,
                    message: format!(
                        "sentence `{id}` row has {} values, expected {dim}",
                        values.len()
                    ),
                });
            }
            data.extend(values);
        }
        if sequences
            .insert(id.clone(), Tensor::matrix(length, dim, data)?)
            .is_some()
        {
            return Err(Error::Data(format!("duplicate sentence id `{id}`")));
        }
    }

    Ok(ContextualSequenceFile { sequences, dim })
}

/// Write sequences in `CTXEMB v1` format. Floats use the shortest
/// round-trippable decimal form, so load-after-write is bit-identical.
pub fn write_contextual(path: &Path, sequences: &[(String, Tensor)]) -> Result<()> {
    let dim = match sequences.first() {
        Some((_, t)) => t.cols(),
        None => return Err(Error::Usage("no sequences to write".into())),
    };
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "CTXEMB v1 {dim} {}", sequences.len())?;
    for (id, matrix) in sequences {
        if matrix.cols() != dim {
            return Err(Error::Shape(format!(
                "sentence `{id}` has dimension {} in a file of {dim}",
                matrix.cols()
            )));
        }
        writeln!(out, "{id} {}", matrix.rows())?;
        for r in 0..matrix.rows() {
            let mut first = true;
            for v in matrix.row(r) {
                if !first {
                    write!(out, " ")?;
                }
                write!(out, "{v}")?;
                first = false;
            }
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn write_file(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    fn toy_table() -> EmbeddingTable {
        EmbeddingTable::from_rows(vec![
            ("a".into(), vec![1.0, 0.0]),
            ("b".into(), vec![0.0, 1.0]),
        ])
        .unwrap()
    }

    #[test]
    fn load_two_line_table() {
        let f = write_file("a 1 0\nb 0 1\n");
        let table = load_embedding_text(f.path()).unwrap();
        assert_eq!(table.dim(), 2);
        assert_eq!(table.lookup("a"), Some(&[1.0, 0.0][..]));
        assert_eq!(table.lookup("b"), Some(&[0.0, 1.0][..]));
    }

    #[test]
    fn empty_embedding_file_is_error() {
        let f = write_file("");
        assert!(load_embedding_text(f.path()).is_err());
    }

    #[test]
    fn malformed_line_names_line_number() {
        let f = write_file("a 1 0\nb 0 oops\nc 1 1\n");
        match load_embedding_text(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected Parse, got {other:?}"),
        }
    }

    #[test]
    fn wrong_arity_names_line_number() {
        let f = write_file("a 1 0\nb 1\n");
        match load_embedding_text(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected Parse, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_tokens_keep_last() {
        let f = write_file("a 1 0\na 5 5\n");
        let table = load_embedding_text(f.path()).unwrap();
        assert_eq!(table.lookup("a"), Some(&[5.0, 5.0][..]));
    }

    #[test]
    fn embed_sequence_rows_and_oov() {
        let table = toy_table();
        let seq = embed_sequence(&["a".into(), "b".into()], &table);
        assert_eq!(seq.as_slice(), &[1.0, 0.0, 0.0, 1.0]);
        let oov = embed_sequence(&["z".into()], &table);
        assert_eq!(oov.as_slice(), &[0.0, 0.0]);
        let empty = embed_sequence(&[], &table);
        assert_eq!(empty.rows(), 0);
        assert_eq!(empty.cols(), 2);
    }

    #[test]
    fn embed_sequence_shape_matches_tokens() {
        let table = toy_table();
        for len in 0..6usize {
            let tokens: Vec<String> = (0..len).map(|i| format!("t{i}")).collect();
            let m = embed_sequence(&tokens, &table);
            assert_eq!((m.rows(), m.cols()), (len, 2));
        }
    }

    #[test]
    fn contextual_parse_small_fixture() {
        let f = write_file("CTXEMB v1 3 1\ns1 2\n1 2 3\n4 5 6\n");
        let ctx = load_contextual(f.path()).unwrap();
        assert_eq!(ctx.dim(), 3);
        let m = ctx.sequence("s1").unwrap();
        assert_eq!((m.rows(), m.cols()), (2, 3));
        assert_eq!(m.as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn contextual_accepts_declared_dimension() {
        let rows: Vec<String> = (0..2)
            .map(|_| {
                (0..1024)
                    .map(|i| (i as f64 / 100.0).to_string())
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        let f = write_file(&format!("CTXEMB v1 1024 1\ns1 2\n{}\n{}\n", rows[0], rows[1]));
        let ctx = load_contextual(f.path()).unwrap();
        assert_eq!(ctx.dim(), 1024);
    }

    #[test]
    fn contextual_arity_mismatch_is_data_error() {
        let f = write_file("CTXEMB v1 3 1\ns1 2\n1 2 3\n4 5\n");
        match load_contextual(f.path()) {
            Err(Error::DataAt { .. }) => {}
            other => panic!("expected DataAt, got {other:?}"),
        }
    }

    #[test]
    fn contextual_unknown_id_is_key_error() {
        let f = write_file("CTXEMB v1 2 1\ns1 1\n1 2\n");
        let ctx = load_contextual(f.path()).unwrap();
        assert!(matches!(ctx.sequence("nope"), Err(Error::Key(_))));
    }

    #[test]
    fn contextual_roundtrip_is_bit_identical() {
        let sequences = vec![
            (
                "m1".to_string(),
                Tensor::matrix(2, 3, vec![0.1, -2.5e-7, 3.0, 1.0 / 3.0, 5e12, -0.0]).unwrap(),
            ),
            (
                "m2".to_string(),
                Tensor::matrix(1, 3, vec![f64::MIN_POSITIVE, 1.5, -9.75]).unwrap(),
            ),
        ];
        let f = tempfile::NamedTempFile::new().unwrap();
        write_contextual(f.path(), &sequences).unwrap();
        let ctx = load_contextual(f.path()).unwrap();
        for (id, original) in &sequences {
            assert_eq!(ctx.sequence(id).unwrap(), original);
        }
    }
}
