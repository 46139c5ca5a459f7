//! File formats: dense matrix containers (text and binary), edge-list
//! graphs, MovieLens-100K ratings, and experiment reports.
//!
//! Loaders are total over their error cases: malformed input yields a
//! diagnostic error with path and line, never a panic. Matrix round-trips
//! through either container are bit-exact for finite values.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::graph::{knn_graph, KernelScale, WeightedGraph};
use crate::report::ExperimentReport;
use crate::solver::MaskedMatrix;

const MATRIX_MAGIC: &[u8; 5] = b"FVMD1";

fn read_to_string(path: &Path) -> Result<String> {
    match fs::read_to_string(path) {
        Ok(s) => Ok(s),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::MissingFile {
            path: path.to_path_buf(),
        }),
        Err(e) => Err(Error::io(path, e)),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Text container: header `matrix m n`, then `m` whitespace-separated
/// rows. Values use the shortest representation that parses back to the
/// same bits.
pub fn save_matrix_text(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    out.push_str(&format!("matrix {} {}\n", m.nrows(), m.ncols()));
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(' ');
            }
            out.push_str(&format!("{:?}", m[(i, j)]));
        }
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

pub fn load_matrix_text(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    if text.trim().is_empty() {
        return Err(Error::EmptyFile {
            path: path.to_path_buf(),
        });
    }
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().expect("non-empty text");
    let dims: Vec<&str> = header
        .strip_prefix("matrix ")
        .ok_or_else(|| Error::parse(path, 1, "expected `matrix m n` header"))?
        .split_whitespace()
        .collect();
    let parse_dim = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::parse(path, 1, format!("bad dimension `{s}`")))
    };
    if dims.len() != 2 {
        return Err(Error::parse(path, 1, "expected `matrix m n` header"));
    }
    let (m, n) = (parse_dim(dims[0])?, parse_dim(dims[1])?);
    let mut out = DMatrix::zeros(m, n);
    for i in 0..m {
        let (ln, row) = lines
            .next()
            .ok_or_else(|| Error::parse(path, i + 1, "unexpected end of file"))?;
        let cells: Vec<&str> = row.split_whitespace().collect();
        if cells.len() != n {
            return Err(Error::RaggedRow {
                path: path.to_path_buf(),
                line: ln + 1,
                expected: n,
                got: cells.len(),
            });
        }
        for (j, cell) in cells.iter().enumerate() {
            out[(i, j)] = cell.parse().map_err(|_| Error::NonNumericCell {
                path: path.to_path_buf(),
                line: ln + 1,
                column: j + 1,
                token: cell.to_string(),
            })?;
        }
    }
    for (ln, rest) in lines {
        if !rest.trim().is_empty() {
            return Err(Error::parse(path, ln + 1, "trailing content after matrix rows"));
        }
    }
    Ok(out)
}

/// Binary container: magic `FVMD1`, little-endian u64 dimensions, then
/// row-major little-endian f64 values.
pub fn save_matrix_binary(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(5 + 16 + 8 * m.len());
    bytes.extend_from_slice(MATRIX_MAGIC);
    bytes.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    bytes.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            bytes.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    write_file(path, &bytes)
}

pub fn load_matrix_binary(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingFile {
                path: path.to_path_buf(),
            })
        }
        Err(e) => return Err(Error::io(path, e)),
    };
    if bytes.is_empty() {
        return Err(Error::EmptyFile {
            path: path.to_path_buf(),
        });
    }
    let bad = |msg: &str| Error::parse(path, 0, msg);
    if bytes.len() < 21 || &bytes[..5] != MATRIX_MAGIC {
        return Err(bad("not an FVMD1 matrix file"));
    }
    let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
    let m = word(5) as usize;
    let n = word(13) as usize;
    let expected = 21usize
        .checked_add(m.checked_mul(n).and_then(|e| e.checked_mul(8)).unwrap_or(usize::MAX))
        .unwrap_or(usize::MAX);
    if bytes.len() != expected {
        return Err(bad("file length does not match declared dimensions"));
    }
    let mut out = DMatrix::zeros(m, n);
    let mut at = 21;
    for i in 0..m {
        for j in 0..n {
            out[(i, j)] = f64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
            at += 8;
        }
    }
    Ok(out)
}

/// Edge-list graph file: mandatory `# nodes N` first line (so isolated
/// nodes survive), then 0-indexed `i j weight` triples; other `#` lines
/// are comments.
pub fn save_graph(path: impl AsRef<Path>, g: &WeightedGraph) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!("# nodes {}\n", g.node_count());
    for (i, j, w) in g.edges() {
        out.push_str(&format!("{i} {j} {w:?}\n"));
    }
    write_file(path, out.as_bytes())
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<WeightedGraph> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let n: usize = match lines.next() {
        None => {
            return Err(Error::EmptyFile {
                path: path.to_path_buf(),
            })
        }
        Some((_, first)) => first
            .strip_prefix("# nodes ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::parse(path, 1, "expected `# nodes N` header"))?,
    };
    let mut adjacency: DMatrix<f64> = DMatrix::zeros(n, n);
    for (ln, line) in lines {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::parse(path, ln + 1, "expected `i j weight`"));
        }
        let index = |s: &str| -> Result<usize> {
            let v: usize = s
                .parse()
                .map_err(|_| Error::parse(path, ln + 1, format!("bad node index `{s}`")))?;
            if v >= n {
                return Err(Error::parse(
                    path,
                    ln + 1,
                    format!("node index {v} out of range (graph has {n} nodes)"),
                ));
            }
            Ok(v)
        };
        let i = index(fields[0])?;
        let j = index(fields[1])?;
        if i == j {
            return Err(Error::parse(path, ln + 1, "self-loops are not allowed"));
        }
        let w: f64 = fields[2]
            .parse()
            .map_err(|_| Error::parse(path, ln + 1, format!("bad weight `{}`", fields[2])))?;
        adjacency[(i, j)] = w;
        adjacency[(j, i)] = w;
    }
    WeightedGraph::from_adjacency(adjacency)
}

/// Generic dense numeric table. `has_header` skips the first line;
/// `delimiter` is typically `,` or `;`.
pub fn load_dense_csv(path: impl AsRef<Path>, has_header: bool, delimiter: char) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = 0usize;
    for (ln, line) in text.lines().enumerate() {
        if ln == 0 && has_header {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(delimiter).collect();
        if rows.is_empty() {
            width = cells.len();
        } else if cells.len() != width {
            return Err(Error::RaggedRow {
                path: path.to_path_buf(),
                line: ln + 1,
                expected: width,
                got: cells.len(),
            });
        }
        let mut row = Vec::with_capacity(width);
        for (col, cell) in cells.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::NonNumericCell {
                path: path.to_path_buf(),
                line: ln + 1,
                column: col + 1,
                token: cell.trim().to_string(),
            })?;
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyFile {
            path: path.to_path_buf(),
        });
    }
    let m = rows.len();
    Ok(DMatrix::from_fn(m, width, |i, j| rows[i][j]))
}

/// Which part of a predefined split a dataset holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Test,
    All,
}

impl std::fmt::Display for SplitTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SplitTag::Train => write!(f, "train"),
            SplitTag::Test => write!(f, "test"),
            SplitTag::All => write!(f, "all"),
        }
    }
}

/// A ratings matrix with external-id ↔ index maps for both axes.
#[derive(Debug, Clone)]
pub struct RatingsDataset {
    pub masked: MaskedMatrix,
    /// Index → external id, one per row.
    pub row_ids: Vec<u32>,
    pub col_ids: Vec<u32>,
    pub split_tag: SplitTag,
    row_lookup: HashMap<u32, usize>,
    col_lookup: HashMap<u32, usize>,
}

impl RatingsDataset {
    pub fn new(
        masked: MaskedMatrix,
        row_ids: Vec<u32>,
        col_ids: Vec<u32>,
        split_tag: SplitTag,
    ) -> Result<Self> {
        let (m, n) = masked.shape();
        if row_ids.len() != m || col_ids.len() != n {
            return Err(Error::size(
                "id maps",
                format!("{m} row ids, {n} col ids"),
                format!("{} row ids, {} col ids", row_ids.len(), col_ids.len()),
            ));
        }
        let index = |ids: &[u32], what: &str| -> Result<HashMap<u32, usize>> {
            let mut map = HashMap::with_capacity(ids.len());
            for (i, &id) in ids.iter().enumerate() {
                if map.insert(id, i).is_some() {
                    return Err(Error::size(what, "unique ids", format!("duplicate id {id}")));
                }
            }
            Ok(map)
        };
        let row_lookup = index(&row_ids, "row ids")?;
        let col_lookup = index(&col_ids, "column ids")?;
        Ok(RatingsDataset {
            masked,
            row_ids,
            col_ids,
            split_tag,
            row_lookup,
            col_lookup,
        })
    }

    pub fn row_index(&self, external_id: u32) -> Option<usize> {
        self.row_lookup.get(&external_id).copied()
    }

    pub fn col_index(&self, external_id: u32) -> Option<usize> {
        self.col_lookup.get(&external_id).copied()
    }
}

pub const ML100K_USERS: usize = 943;
pub const ML100K_ITEMS: usize = 1682;

/// Loads the canonical MovieLens-100K predefined split (`u1.base` /
/// `u1.test`, tab-separated `user item rating timestamp` lines) from a
/// directory, as 943×1682 users × items masked matrices with disjoint
/// supports.
pub fn load_movielens_100k(dir: impl AsRef<Path>) -> Result<(RatingsDataset, RatingsDataset)> {
    let dir = dir.as_ref();
    let train_entries = load_ratings_file(&dir.join("u1.base"))?;
    let test_entries = load_ratings_file(&dir.join("u1.test"))?;

    let build = |entries: &[(usize, usize, f64)], tag: SplitTag| -> Result<RatingsDataset> {
        let mut values = DMatrix::zeros(ML100K_USERS, ML100K_ITEMS);
        let mut mask = DMatrix::zeros(ML100K_USERS, ML100K_ITEMS);
        for &(u, i, r) in entries {
            values[(u, i)] = r;
            mask[(u, i)] = 1.0;
        }
        RatingsDataset::new(
            MaskedMatrix::new(values, mask)?,
            (1..=ML100K_USERS as u32).collect(),
            (1..=ML100K_ITEMS as u32).collect(),
            tag,
        )
    };
    let train = build(&train_entries, SplitTag::Train)?;
    let test = build(&test_entries, SplitTag::Test)?;

    let train_support: HashSet<(usize, usize)> = train
        .masked
        .observed()
        .iter()
        .map(|&(i, j, _)| (i, j))
        .collect();
    for &(i, j, _) in test.masked.observed() {
        if train_support.contains(&(i, j)) {
            return Err(Error::OverlappingSplit { row: i, col: j });
        }
    }
    Ok((train, test))
}

fn load_ratings_file(path: &Path) -> Result<Vec<(usize, usize, f64)>> {
    let text = read_to_string(path)?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 3 {
            return Err(Error::parse(
                path,
                ln + 1,
                "expected `user item rating [timestamp]`",
            ));
        }
        let id = |s: &str, max: usize| -> Result<usize> {
            let v: i64 = s
                .parse()
                .map_err(|_| Error::parse(path, ln + 1, format!("bad id `{s}`")))?;
            if v < 1 || v as usize > max {
                return Err(Error::IdOutOfRange {
                    path: path.to_path_buf(),
                    line: ln + 1,
                    id: v,
                    max,
                });
            }
            Ok(v as usize - 1)
        };
        let user = id(fields[0], ML100K_USERS)?;
        let item = id(fields[1], ML100K_ITEMS)?;
        let rating: f64 = fields[2]
            .parse()
            .map_err(|_| Error::parse(path, ln + 1, format!("bad rating `{}`", fields[2])))?;
        if !(1.0..=5.0).contains(&rating) || rating.fract() != 0.0 {
            return Err(Error::parse(
                path,
                ln + 1,
                format!("rating {rating} outside 1..=5"),
            ));
        }
        out.push((user, item, rating));
    }
    if out.is_empty() {
        return Err(Error::EmptyFile {
            path: path.to_path_buf(),
        });
    }
    Ok(out)
}

/// KNN graphs over users (rows of the zero-filled training matrix as
/// feature vectors) and over items (columns likewise).
pub fn build_rating_graphs(
    train: &RatingsDataset,
    k: usize,
) -> Result<(WeightedGraph, WeightedGraph)> {
    if train.masked.observed_count() == 0 {
        return Err(Error::EmptySupport);
    }
    let values = train.masked.values();
    let row_graph = knn_graph(values, k, KernelScale::Auto)?;
    let col_graph = knn_graph(&values.transpose(), k, KernelScale::Auto)?;
    Ok((row_graph, col_graph))
}

pub fn save_report(path: impl AsRef<Path>, report: &ExperimentReport) -> Result<()> {
    write_file(path.as_ref(), report.to_text().as_bytes())
}

pub fn load_report(path: impl AsRef<Path>) -> Result<ExperimentReport> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    ExperimentReport::from_text(&text, &path.display().to_string())
}
