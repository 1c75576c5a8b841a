//! On-disk formats.
//!
//! * Embeddings, binary: `"SEMB"`, `u32 LE` version 1, `u64 LE` n_items,
//!   `u32 LE` dim, then `n_items * dim` little-endian `f32` values row-major.
//! * Embeddings, text: one item per line, an id column followed by `dim`
//!   numbers separated by whitespace or commas.
//! * Trees: canonical single-line JSON, `format = "treeid-v1"`.
//! * Reports: CSV with a header row, numbers at 6 significant digits.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::{BenchRow, CompareRow};
use crate::decode::Ranked;
use crate::error::{Error, Result};
use crate::metrics::{EvalReport, UserRun};
use crate::types::{validate_tree, EmbeddingMatrix, IdentifierTree, TokenPath};

pub const EMBEDDING_MAGIC: [u8; 4] = *b"SEMB";
pub const EMBEDDING_VERSION: u32 = 1;
pub const TREE_FORMAT: &str = "treeid-v1";
const HEADER_LEN: usize = 4 + 4 + 8 + 4;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic {0:?}, expected \"SEMB\"")]
    BadMagic([u8; 4]),
    #[error("unsupported embedding file version {0}")]
    BadVersion(u32),
    #[error("truncated file: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("{0} trailing bytes after payload")]
    TrailingData(u64),
    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("empty embedding matrix (n_items={n_items}, dim={dim})")]
    Empty { n_items: u64, dim: u32 },
    #[error("line {line}: {msg}")]
    Text { line: usize, msg: String },
    #[error("tree schema: {0}")]
    TreeSchema(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn io_or_format<T>(r: std::result::Result<T, csv::Error>) -> Result<T> {
    r.map_err(|e| {
        if e.is_io_error() {
            match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::Io(io),
                _ => unreachable!(),
            }
        } else {
            FormatError::Csv(e).into()
        }
    })
}

pub fn write_embeddings<W: Write>(m: &EmbeddingMatrix, mut w: W) -> Result<()> {
    let mut header = Vec::with_capacity(HEADER_LEN);
    header.extend_from_slice(&EMBEDDING_MAGIC);
    header.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
    header.extend_from_slice(&(m.n_items() as u64).to_le_bytes());
    let dim = u32::try_from(m.dim()).map_err(|_| Error::InvalidConfig("dim exceeds u32".into()))?;
    header.extend_from_slice(&dim.to_le_bytes());
    w.write_all(&header)?;
    let mut buf = Vec::with_capacity(m.values().len() * 4);
    for v in m.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_embeddings<R: Read>(mut r: R) -> Result<EmbeddingMatrix> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::Truncated { expected: HEADER_LEN as u64, actual: bytes.len() as u64 }.into());
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
    if magic != EMBEDDING_MAGIC {
        return Err(FormatError::BadMagic(magic).into());
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != EMBEDDING_VERSION {
        return Err(FormatError::BadVersion(version).into());
    }
    let n_items = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let dim = u32::from_le_bytes(bytes[16..20].try_into().expect("4 bytes"));
    if n_items == 0 || dim == 0 {
        return Err(FormatError::Empty { n_items, dim }.into());
    }
    let payload = (n_items as u128) * (dim as u128) * 4;
    let actual = (bytes.len() - HEADER_LEN) as u128;
    if actual < payload {
        return Err(FormatError::Truncated {
            expected: (HEADER_LEN as u128 + payload).min(u64::MAX as u128) as u64,
            actual: bytes.len() as u64,
        }
        .into());
    }
    if actual > payload {
        return Err(FormatError::TrailingData((actual - payload) as u64).into());
    }
    let values: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(FormatError::NonFinite(i).into());
    }
    Ok(EmbeddingMatrix::from_raw(n_items as usize, dim as usize, values))
}

pub fn write_embeddings_file(m: &EmbeddingMatrix, path: &Path) -> Result<()> {
    write_embeddings(m, BufWriter::new(File::create(path)?))
}

pub fn read_embeddings_file(path: &Path) -> Result<EmbeddingMatrix> {
    read_embeddings(BufReader::new(File::open(path)?))
}

pub fn parse_embeddings_tsv(text: &str) -> Result<EmbeddingMatrix> {
    let mut values = Vec::new();
    let mut dim: Option<usize> = None;
    let mut n = 0usize;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(|c: char| c.is_whitespace() || c == ',').filter(|f| !f.is_empty());
        fields.next(); // item id
        let mut count = 0;
        for f in fields {
            let v: f32 = f.parse().map_err(|_| FormatError::Text {
                line: line_no,
                msg: format!("cannot parse '{f}' as a number"),
            })?;
            if !v.is_finite() {
                return Err(FormatError::Text { line: line_no, msg: format!("non-finite value '{f}'") }.into());
            }
            values.push(v);
            count += 1;
        }
        match dim {
            None if count == 0 => {
                return Err(FormatError::Text { line: line_no, msg: "no values after the id".into() }.into())
            }
            None => dim = Some(count),
            Some(d) if d != count => {
                return Err(FormatError::Text {
                    line: line_no,
                    msg: format!("expected {d} values, found {count}"),
                }
                .into())
            }
            Some(_) => {}
        }
        n += 1;
    }
    let dim = dim.ok_or(FormatError::Empty { n_items: 0, dim: 0 })?;
    EmbeddingMatrix::new(n, dim, values)
}

pub fn read_embeddings_tsv(path: &Path) -> Result<EmbeddingMatrix> {
    parse_embeddings_tsv(&std::fs::read_to_string(path)?)
}

/// Text formats by extension (`.tsv`, `.txt`, `.csv`), binary otherwise.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("tsv" | "txt" | "csv") => read_embeddings_tsv(path),
        _ => read_embeddings_file(path),
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeFile {
    format: String,
    k: usize,
    depth: usize,
    n_items: usize,
    pad_token: u32,
    paths: Vec<Vec<u32>>,
}

pub fn tree_to_json(t: &IdentifierTree) -> String {
    let file = TreeFile {
        format: TREE_FORMAT.to_string(),
        k: t.k(),
        depth: t.depth(),
        n_items: t.n_items(),
        pad_token: t.pad_token(),
        paths: t.paths().iter().map(|p| p.0.clone()).collect(),
    };
    let mut s = serde_json::to_string(&file).expect("tree serializes");
    s.push('\n');
    s
}

pub fn write_tree<W: Write>(t: &IdentifierTree, mut w: W) -> Result<()> {
    validate_tree(t).into_result()?;
    w.write_all(tree_to_json(t).as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn read_tree<R: Read>(r: R) -> Result<IdentifierTree> {
    let file: TreeFile = serde_json::from_reader(r).map_err(FormatError::Json)?;
    let schema = |m: String| -> Error { FormatError::TreeSchema(m).into() };
    if file.format != TREE_FORMAT {
        return Err(schema(format!("format '{}' is not '{TREE_FORMAT}'", file.format)));
    }
    if file.pad_token as usize != file.k {
        return Err(schema(format!("pad_token {} differs from k {}", file.pad_token, file.k)));
    }
    if file.paths.len() != file.n_items {
        return Err(schema(format!("{} paths for n_items {}", file.paths.len(), file.n_items)));
    }
    if let Some(i) = file.paths.iter().position(|p| p.len() != file.depth) {
        return Err(schema(format!("path {i} length differs from depth {}", file.depth)));
    }
    let t = IdentifierTree::from_paths(file.k, file.paths.into_iter().map(TokenPath).collect())?;
    if t.depth() != file.depth {
        return Err(schema(format!("declared depth {} but deepest leaf is {}", file.depth, t.depth())));
    }
    validate_tree(&t).into_result()?;
    Ok(t)
}

pub fn write_tree_file(t: &IdentifierTree, path: &Path) -> Result<()> {
    write_tree(t, BufWriter::new(File::create(path)?))
}

pub fn read_tree_file(path: &Path) -> Result<IdentifierTree> {
    read_tree(BufReader::new(File::open(path)?))
}

/// `%g`-style formatting with 6 significant digits.
pub fn fmt_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.5e}");
    let exp: i32 = sci[sci.find('e').expect("exponent") + 1..].parse().expect("integer exponent");
    let s = if (-5..6).contains(&exp) {
        format!("{:.*}", (5 - exp) as usize, x)
    } else {
        sci
    };
    strip_zeros(&s)
}

fn strip_zeros(s: &str) -> String {
    let (mantissa, exp) = match s.find('e') {
        Some(i) => (&s[..i], &s[i..]),
        None => (s, ""),
    };
    let mantissa = if mantissa.contains('.') {
        mantissa.trim_end_matches('0').trim_end_matches('.')
    } else {
        mantissa
    };
    format!("{mantissa}{exp}")
}

pub fn write_eval_csv<W: Write>(report: &EvalReport, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    io_or_format(out.write_record(["metric", "cutoff", "value"]))?;
    for (m, k, v) in &report.entries {
        io_or_format(out.write_record([m.as_str().to_string(), k.to_string(), fmt_sig6(*v)]))?;
    }
    out.flush()?;
    Ok(())
}

pub const BENCH_HEADER: [&str; 7] = ["method", "n_items", "dim", "k", "seed", "build_seconds", "total_sse"];

pub fn write_bench_csv<W: Write>(rows: &[BenchRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    io_or_format(out.write_record(BENCH_HEADER))?;
    for r in rows {
        io_or_format(out.write_record([
            r.method.as_str().to_string(),
            r.n_items.to_string(),
            r.dim.to_string(),
            r.k.to_string(),
            r.seed.to_string(),
            fmt_sig6(r.build_seconds),
            fmt_sig6(r.total_sse),
        ]))?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_compare_csv<W: Write>(rows: &[CompareRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    io_or_format(out.write_record([
        "n_items",
        "constrained_seconds",
        "greedy_seconds",
        "hybrid_seconds",
        "constrained_sse",
        "greedy_sse",
        "hybrid_sse",
        "greedy_time_ratio",
        "hybrid_time_ratio",
        "greedy_sse_ratio",
        "hybrid_sse_ratio",
    ]))?;
    for r in rows {
        let mut rec = vec![r.n_items.to_string()];
        rec.extend(
            [
                r.constrained.seconds,
                r.greedy.seconds,
                r.hybrid.seconds,
                r.constrained.sse,
                r.greedy.sse,
                r.hybrid.sse,
                r.greedy_time_ratio(),
                r.hybrid_time_ratio(),
                r.greedy_sse_ratio(),
                r.hybrid_sse_ratio(),
            ]
            .iter()
            .map(|&v| fmt_sig6(v)),
        );
        io_or_format(out.write_record(rec))?;
    }
    out.flush()?;
    Ok(())
}

/// Decoded rankings: `user,rank,item,score` with 1-based ranks.
pub fn write_rankings_csv<W: Write>(rankings: &[(String, Vec<Ranked>)], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    io_or_format(out.write_record(["user", "rank", "item", "score"]))?;
    for (user, ranked) in rankings {
        for (r, hit) in ranked.iter().enumerate() {
            io_or_format(out.write_record([
                user.clone(),
                (r + 1).to_string(),
                hit.item.to_string(),
                fmt_sig6(hit.score),
            ]))?;
        }
    }
    out.flush()?;
    Ok(())
}

fn records(path: &Path) -> Result<Vec<csv::StringRecord>> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(FormatError::Csv)?;
    let mut out = Vec::new();
    for rec in rd.records() {
        out.push(rec.map_err(FormatError::Csv)?);
    }
    Ok(out)
}

fn field(rec: &csv::StringRecord, i: usize, line: usize) -> Result<&str> {
    rec.get(i).ok_or_else(|| FormatError::Text { line, msg: format!("missing column {}", i + 1) }.into())
}

fn parse_num<T: std::str::FromStr>(s: &str, line: usize) -> Result<T> {
    s.trim().parse().map_err(|_| FormatError::Text { line, msg: format!("cannot parse '{s}'") }.into())
}

/// Reads `user,rank,item[,score]` rows into per-user rankings ordered by rank.
pub fn read_rankings_csv(path: &Path) -> Result<BTreeMap<String, Vec<u32>>> {
    let mut by_user: BTreeMap<String, Vec<(usize, u32)>> = BTreeMap::new();
    for (i, rec) in records(path)?.iter().enumerate() {
        let line = i + 2;
        let user = field(rec, 0, line)?.to_string();
        let rank: usize = parse_num(field(rec, 1, line)?, line)?;
        let item: u32 = parse_num(field(rec, 2, line)?, line)?;
        by_user.entry(user).or_default().push((rank, item));
    }
    Ok(by_user
        .into_iter()
        .map(|(u, mut v)| {
            v.sort_by_key(|&(r, _)| r);
            (u, v.into_iter().map(|(_, it)| it).collect())
        })
        .collect())
}

/// Reads `user,item` ground-truth rows.
pub fn read_truth_csv(path: &Path) -> Result<BTreeMap<String, HashSet<u32>>> {
    let mut by_user: BTreeMap<String, HashSet<u32>> = BTreeMap::new();
    for (i, rec) in records(path)?.iter().enumerate() {
        let line = i + 2;
        let user = field(rec, 0, line)?.to_string();
        let item: u32 = parse_num(field(rec, 1, line)?, line)?;
        by_user.entry(user).or_default().insert(item);
    }
    Ok(by_user)
}

/// Pairs every ground-truth user with its ranking (empty if absent).
pub fn join_runs(
    runs: &BTreeMap<String, Vec<u32>>,
    truth: BTreeMap<String, HashSet<u32>>,
) -> Vec<UserRun> {
    truth
        .into_iter()
        .map(|(user, relevant)| UserRun {
            recommended: runs.get(&user).cloned().unwrap_or_default(),
            user,
            relevant,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Metric;

    #[test]
    fn embedding_header_bytes() {
        let m = EmbeddingMatrix::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut buf = Vec::new();
        write_embeddings(&m, &mut buf).unwrap();
        assert_eq!(
            &buf[..20],
            &[0x53, 0x45, 0x4D, 0x42, 1, 0, 0, 0, 2, 0, 0, 0, 0, 0, 0, 0, 3, 0, 0, 0]
        );
        assert_eq!(buf.len(), 20 + 24);
        assert_eq!(read_embeddings(&buf[..]).unwrap(), m);
    }

    #[test]
    fn embedding_errors_are_distinct() {
        let m = EmbeddingMatrix::new(1, 2, vec![1.0, 2.0]).unwrap();
        let mut buf = Vec::new();
        write_embeddings(&m, &mut buf).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_embeddings(&bad[..]), Err(Error::Format(FormatError::BadMagic(_)))));

        let mut bad = buf.clone();
        bad[4] = 2;
        assert!(matches!(read_embeddings(&bad[..]), Err(Error::Format(FormatError::BadVersion(2)))));

        assert!(matches!(
            read_embeddings(&buf[..buf.len() - 1]),
            Err(Error::Format(FormatError::Truncated { .. }))
        ));

        let mut bad = buf.clone();
        bad[20..24].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(read_embeddings(&bad[..]), Err(Error::Format(FormatError::NonFinite(0)))));

        let mut bad = buf.clone();
        bad.push(0);
        assert!(matches!(read_embeddings(&bad[..]), Err(Error::Format(FormatError::TrailingData(1)))));
    }

    #[test]
    fn tsv_parsing() {
        let m = parse_embeddings_tsv("0\t1.0,2.0\n1\t3.0,4.0").unwrap();
        assert_eq!(m, EmbeddingMatrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let e = parse_embeddings_tsv("0\t1.0,2.0\n1\t3.0").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
        let e = parse_embeddings_tsv("0 1.0 x").unwrap_err();
        assert!(e.to_string().contains("line 1"), "{e}");
    }

    #[test]
    fn sig6_formatting() {
        assert_eq!(fmt_sig6(0.630929753571), "0.63093");
        assert_eq!(fmt_sig6(0.5), "0.5");
        assert_eq!(fmt_sig6(1.0), "1");
        assert_eq!(fmt_sig6(123456789.0), "1.23457e8");
        assert_eq!(fmt_sig6(9.9999996), "10");
        assert_eq!(fmt_sig6(1.234e-7), "1.234e-7");
        assert_eq!(fmt_sig6(0.0), "0");
    }

    #[test]
    fn eval_csv_layout() {
        let report = EvalReport { entries: vec![(Metric::Recall, 20, 0.25)], n_users: 1 };
        let mut buf = Vec::new();
        write_eval_csv(&report, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "metric,cutoff,value\nrecall,20,0.25\n");
    }

    #[test]
    fn tree_json_duplicate_path_rejected() {
        let json = r#"{"format":"treeid-v1","k":8,"depth":1,"n_items":2,"pad_token":8,"paths":[[0],[0]]}"#;
        assert!(read_tree(json.as_bytes()).is_err());
        let json = r#"{"format":"treeid-v1","k":8,"depth":1,"n_items":2,"pad_token":8,"paths":[[0],[1]]}"#;
        let t = read_tree(json.as_bytes()).unwrap();
        assert_eq!(tree_to_json(&t).trim_end(), json);
    }

    #[test]
    fn tree_json_schema_errors() {
        let wrong_pad = r#"{"format":"treeid-v1","k":8,"depth":1,"n_items":1,"pad_token":3,"paths":[[0]]}"#;
        assert!(read_tree(wrong_pad.as_bytes()).is_err());
        let extra = r#"{"format":"treeid-v1","k":8,"depth":1,"n_items":1,"pad_token":8,"paths":[[0]],"x":1}"#;
        assert!(read_tree(extra.as_bytes()).is_err());
        let unbalanced = r#"{"format":"treeid-v1","k":2,"depth":2,"n_items":3,"pad_token":2,"paths":[[0,0],[0,1],[1,2]]}"#;
        assert!(read_tree(unbalanced.as_bytes()).is_err());
    }
}
