//! On-disk dataset layout.
//!
//! ```text
//! features.bin    "ALZS" u32 version=1, u32 N, u32 d, N*d f32 (row-major)
//! features.csv    alternative to features.bin: N rows of d decimal fields
//! labels.csv      header of class names, N rows of +1/-1
//! split.csv       N rows of `train` / `test`
//! sources.bin     "ALSW" u32 version=1, u32 K, u32 d, K*d f32
//! sources.txt     K source names, one per line
//! relations.csv   header of K source names; rows: target name, K betas
//! uris.csv        optional, N display URIs
//! ids.csv         optional, N unique sample ids (default: row index)
//! source_biases.csv  optional, K source biases (default: 0)
//! ```
//!
//! All binary integers and floats are little-endian.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::{
    DataError, Dataset, Label, LabelMatrix, Pool, RelationMatrix, Result, SourceBank, SplitTag,
};

const FEATURES_MAGIC: &[u8; 4] = b"ALZS";
const SOURCES_MAGIC: &[u8; 4] = b"ALSW";
const FORMAT_VERSION: u32 = 1;

fn io_err(file: &str) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        file: file.to_string(),
        source,
    }
}

fn read_file(dir: &Path, name: &str) -> Result<Vec<u8>> {
    let path = dir.join(name);
    if !path.exists() {
        return Err(DataError::MissingFile { file: name.into() });
    }
    let mut buf = Vec::new();
    File::open(&path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(io_err(name))?;
    Ok(buf)
}

/// Reads a `magic, version, rows, cols, f32 payload` matrix, checking the
/// header before touching the payload.
fn read_matrix_bin(bytes: &[u8], file: &str, magic: &[u8; 4]) -> Result<(usize, usize, Vec<f64>)> {
    if bytes.len() < 16 {
        return Err(DataError::BadHeader {
            file: file.into(),
            reason: format!("{} bytes is shorter than the 16-byte header", bytes.len()),
        });
    }
    if &bytes[0..4] != magic {
        return Err(DataError::BadHeader {
            file: file.into(),
            reason: format!("expected magic {:?}", std::str::from_utf8(magic).unwrap()),
        });
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let version = word(4);
    if version != FORMAT_VERSION {
        return Err(DataError::BadHeader {
            file: file.into(),
            reason: format!("unsupported version {version}"),
        });
    }
    let rows = word(8) as usize;
    let cols = word(12) as usize;
    let payload = &bytes[16..];
    let expected = rows * cols * 4;
    if payload.len() != expected {
        return Err(DataError::ShapeMismatch {
            file: file.into(),
            what: format!("payload bytes for {rows}x{cols} header"),
            expected,
            found: payload.len(),
        });
    }
    let mut values = Vec::with_capacity(rows * cols);
    for (pos, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(DataError::NonFinite {
                file: file.into(),
                row: pos / cols,
                col: pos % cols,
            });
        }
        values.push(v as f64);
    }
    Ok((rows, cols, values))
}

fn write_matrix_bin(
    path: &Path,
    magic: &[u8; 4],
    rows: usize,
    cols: usize,
    values: &[f64],
) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(magic)?;
    for word in [FORMAT_VERSION, rows as u32, cols as u32] {
        out.write_all(&word.to_le_bytes())?;
    }
    for v in values {
        out.write_all(&(*v as f32).to_le_bytes())?;
    }
    out.flush()
}

/// Data rows of a header-less CSV, with their 0-based row index.
fn csv_rows(bytes: &[u8], file: &str) -> Result<Vec<Vec<String>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(bytes);
    let mut rows = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| DataError::Parse {
            file: file.into(),
            row,
            msg: e.to_string(),
        })?;
        rows.push(record.iter().map(|f| f.trim().to_string()).collect());
    }
    Ok(rows)
}

fn parse_real(field: &str, file: &str, row: usize, col: usize) -> Result<f64> {
    let v: f64 = field.parse().map_err(|_| DataError::Parse {
        file: file.into(),
        row,
        msg: format!("column {col}: {field:?} is not a number"),
    })?;
    if !v.is_finite() {
        return Err(DataError::NonFinite {
            file: file.into(),
            row,
            col,
        });
    }
    Ok(v)
}

fn read_features(dir: &Path) -> Result<(usize, usize, Vec<f64>)> {
    if dir.join("features.bin").exists() {
        let bytes = read_file(dir, "features.bin")?;
        return read_matrix_bin(&bytes, "features.bin", FEATURES_MAGIC);
    }
    if !dir.join("features.csv").exists() {
        return Err(DataError::MissingFile {
            file: "features.bin".into(),
        });
    }
    let file = "features.csv";
    let rows = csv_rows(&read_file(dir, file)?, file)?;
    let dim = rows.first().map(|r| r.len()).unwrap_or(0);
    let mut values = Vec::with_capacity(rows.len() * dim);
    for (row, fields) in rows.iter().enumerate() {
        if fields.len() != dim {
            return Err(DataError::RowShape {
                file: file.into(),
                row,
                what: "fields".into(),
                expected: dim,
                found: fields.len(),
            });
        }
        for (col, f) in fields.iter().enumerate() {
            values.push(parse_real(f, file, row, col)?);
        }
    }
    Ok((rows.len(), dim, values))
}

fn read_lines(dir: &Path, file: &str) -> Result<Vec<String>> {
    let bytes = read_file(dir, file)?;
    let text = String::from_utf8(bytes).map_err(|e| DataError::Parse {
        file: file.into(),
        row: 0,
        msg: e.to_string(),
    })?;
    Ok(text
        .lines()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect())
}

fn read_optional_lines(dir: &Path, file: &str) -> Result<Vec<String>> {
    if dir.join(file).exists() {
        read_lines(dir, file)
    } else {
        Ok(Vec::new())
    }
}

fn check_rows(file: &str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(DataError::ShapeMismatch {
            file: file.into(),
            what: format!("rows (features has {expected})"),
            expected,
            found,
        });
    }
    Ok(())
}

fn read_labels(dir: &Path, n: usize) -> Result<LabelMatrix> {
    let file = "labels.csv";
    let mut rows = csv_rows(&read_file(dir, file)?, file)?;
    if rows.is_empty() {
        return Err(DataError::Parse {
            file: file.into(),
            row: 0,
            msg: "missing header row".into(),
        });
    }
    let class_names = rows.remove(0);
    check_rows(file, n, rows.len())?;
    let mut labels = Vec::with_capacity(n * class_names.len());
    for (row, fields) in rows.iter().enumerate() {
        if fields.len() != class_names.len() {
            return Err(DataError::RowShape {
                file: file.into(),
                row,
                what: "fields".into(),
                expected: class_names.len(),
                found: fields.len(),
            });
        }
        for f in fields {
            let label = match f.as_str() {
                "+1" | "1" => Label::Positive,
                "-1" => Label::Negative,
                other => {
                    return Err(DataError::Parse {
                        file: file.into(),
                        row,
                        msg: format!("label {other:?} is not +1 or -1"),
                    })
                }
            };
            labels.push(label);
        }
    }
    LabelMatrix::new(class_names, labels)
}

fn read_split(dir: &Path, n: usize) -> Result<Vec<SplitTag>> {
    let file = "split.csv";
    let lines = read_lines(dir, file)?;
    check_rows(file, n, lines.len())?;
    lines
        .iter()
        .enumerate()
        .map(|(row, l)| match l.as_str() {
            "train" => Ok(SplitTag::Train),
            "test" => Ok(SplitTag::Test),
            other => Err(DataError::Parse {
                file: file.into(),
                row,
                msg: format!("{other:?} is neither train nor test"),
            }),
        })
        .collect()
}

fn read_sources(dir: &Path) -> Result<SourceBank> {
    let (k, d, weights) = read_matrix_bin(
        &read_file(dir, "sources.bin")?,
        "sources.bin",
        SOURCES_MAGIC,
    )?;
    let names = read_lines(dir, "sources.txt")?;
    if names.len() != k {
        return Err(DataError::ShapeMismatch {
            file: "sources.txt".into(),
            what: "names (sources.bin header K)".into(),
            expected: k,
            found: names.len(),
        });
    }
    let biases = read_optional_lines(dir, "source_biases.csv")?
        .iter()
        .enumerate()
        .map(|(row, l)| parse_real(l, "source_biases.csv", row, 0))
        .collect::<Result<Vec<_>>>()?;
    SourceBank::new(names, d, weights, biases)
}

fn read_relations(dir: &Path, sources: &SourceBank) -> Result<RelationMatrix> {
    let file = "relations.csv";
    let mut rows = csv_rows(&read_file(dir, file)?, file)?;
    if rows.is_empty() {
        return Err(DataError::Parse {
            file: file.into(),
            row: 0,
            msg: "missing header row".into(),
        });
    }
    let mut header = rows.remove(0);
    // tolerate a leading label cell above the target-name column
    if header.len() == sources.len() + 1 {
        header.remove(0);
    }
    if header.len() != sources.len() {
        return Err(DataError::ShapeMismatch {
            file: file.into(),
            what: "source columns (sources.bin has K)".into(),
            expected: sources.len(),
            found: header.len(),
        });
    }
    if header != sources.source_names() {
        return Err(DataError::Parse {
            file: file.into(),
            row: 0,
            msg: "header source names differ from sources.txt".into(),
        });
    }
    let k = header.len();
    let mut targets = Vec::with_capacity(rows.len());
    let mut betas = Vec::with_capacity(rows.len() * k);
    for (row, fields) in rows.iter().enumerate() {
        if fields.len() != k + 1 {
            return Err(DataError::RowShape {
                file: file.into(),
                row,
                what: "fields (name + K betas)".into(),
                expected: k + 1,
                found: fields.len(),
            });
        }
        targets.push(fields[0].clone());
        for (col, f) in fields[1..].iter().enumerate() {
            betas.push(parse_real(f, file, row, col + 1)?);
        }
    }
    RelationMatrix::new(targets, header, betas)
}

/// Loads and validates a dataset directory.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(DataError::MissingFile {
            file: dir.display().to_string(),
        });
    }
    let (n, d, features) = read_features(dir)?;
    let labels = read_labels(dir, n)?;
    let split = read_split(dir, n)?;
    let uris = read_optional_lines(dir, "uris.csv")?;
    if !uris.is_empty() {
        check_rows("uris.csv", n, uris.len())?;
    }
    let ids = read_optional_lines(dir, "ids.csv")?;
    if !ids.is_empty() {
        check_rows("ids.csv", n, ids.len())?;
    }
    let pool = Pool::new(d, features, split, ids, uris)?;
    let sources = read_sources(dir)?;
    let relations = read_relations(dir, &sources)?;
    let (dataset, _warnings) = Dataset::new(pool, labels, sources, relations)?;
    Ok(dataset)
}

/// Writes a dataset in the layout `load_dataset` reads. Features and source
/// weights are stored as f32.
pub fn save_dataset(dir: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let dir = dir.as_ref();
    let dir_name = dir.display().to_string();
    fs::create_dir_all(dir).map_err(io_err(&dir_name))?;
    let pool = &data.pool;

    write_matrix_bin(
        &dir.join("features.bin"),
        FEATURES_MAGIC,
        pool.n_samples(),
        pool.dim(),
        pool.features(),
    )
    .map_err(io_err("features.bin"))?;

    let mut labels = String::new();
    labels.push_str(&data.labels.class_names().join(","));
    labels.push('\n');
    for i in 0..pool.n_samples() {
        let row: Vec<String> = (0..data.labels.n_classes())
            .map(|c| data.labels.get(i, c).to_string())
            .collect();
        labels.push_str(&row.join(","));
        labels.push('\n');
    }
    fs::write(dir.join("labels.csv"), labels).map_err(io_err("labels.csv"))?;

    let split: String = pool
        .split()
        .iter()
        .map(|s| match s {
            SplitTag::Train => "train\n",
            SplitTag::Test => "test\n",
        })
        .collect();
    fs::write(dir.join("split.csv"), split).map_err(io_err("split.csv"))?;

    let sources = &data.sources;
    let mut flat = Vec::with_capacity(sources.len() * sources.dim());
    for k in 0..sources.len() {
        flat.extend_from_slice(sources.weights(k));
    }
    write_matrix_bin(
        &dir.join("sources.bin"),
        SOURCES_MAGIC,
        sources.len(),
        sources.dim(),
        &flat,
    )
    .map_err(io_err("sources.bin"))?;
    let names: String = sources
        .source_names()
        .iter()
        .map(|n| format!("{n}\n"))
        .collect();
    fs::write(dir.join("sources.txt"), names).map_err(io_err("sources.txt"))?;
    if sources.biases().iter().any(|&b| b != 0.0) {
        let biases: String = sources.biases().iter().map(|b| format!("{b}\n")).collect();
        fs::write(dir.join("source_biases.csv"), biases).map_err(io_err("source_biases.csv"))?;
    }

    let rel = &data.relations;
    let mut relations = rel.source_names().join(",");
    relations.push('\n');
    for (t, name) in rel.target_names().iter().enumerate() {
        relations.push_str(name);
        for b in rel.row(t) {
            relations.push_str(&format!(",{b}"));
        }
        relations.push('\n');
    }
    fs::write(dir.join("relations.csv"), relations).map_err(io_err("relations.csv"))?;

    if pool.display_uris().iter().any(|u| !u.is_empty()) {
        let uris: String = pool
            .display_uris()
            .iter()
            .map(|u| format!("{u}\n"))
            .collect();
        fs::write(dir.join("uris.csv"), uris).map_err(io_err("uris.csv"))?;
    }
    if !pool.has_default_ids() {
        let ids: String = pool.sample_ids().iter().map(|u| format!("{u}\n")).collect();
        fs::write(dir.join("ids.csv"), ids).map_err(io_err("ids.csv"))?;
    }
    Ok(())
}
