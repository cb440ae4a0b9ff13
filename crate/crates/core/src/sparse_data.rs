//! Sparse training vectors, their page-request sets, and dataset files.
//!
//! Two on-disk formats are supported.
//!
//! Binary (little-endian): magic `DPJDATA\0`, u32 version, u64 dimension,
//! u64 record count; version 2 appends u64 rows, u64 cols, u64 rank for
//! matrix-factorization cell datasets. Each record is u64 tid, f64 label,
//! u32 nnz, nnz u64 indexes, nnz f64 values.
//!
//! Text: a header line `# dpjoin d=<dimension>` (optionally followed by
//! `lmf=<rows>x<cols>x<rank>`), then one record per line:
//! `tid label idx:val idx:val ...`.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::gradient_descent::LmfLayout;
use crate::model_store::{PageId, PageLayout};

pub const DATA_MAGIC: &[u8; 8] = b"DPJDATA\0";
const DATA_VERSION_PLAIN: u32 = 1;
const DATA_VERSION_LMF: u32 = 2;

/// One training example: sorted non-zero `(index, value)` pairs plus id and label.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseVector {
    pub tid: u64,
    pub label: f64,
    indexes: Vec<u64>,
    values: Vec<f64>,
}

impl SparseVector {
    pub fn new(tid: u64, label: f64, indexes: Vec<u64>, values: Vec<f64>) -> Result<Self> {
        if indexes.is_empty() {
            return Err(Error::Validation(format!("vector {tid} has no non-zero entries")));
        }
        if indexes.len() != values.len() {
            return Err(Error::Validation(format!(
                "vector {tid} has {} indexes but {} values",
                indexes.len(),
                values.len()
            )));
        }
        if let Some(w) = indexes.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Validation(format!(
                "vector {tid} indexes not strictly ascending at {} -> {}",
                w[0], w[1]
            )));
        }
        Ok(Self { tid, label, indexes, values })
    }

    /// Builds a vector from unordered pairs, sorting by index.
    pub fn from_pairs(tid: u64, label: f64, mut pairs: Vec<(u64, f64)>) -> Result<Self> {
        pairs.sort_by_key(|&(i, _)| i);
        let (indexes, values) = pairs.into_iter().unzip();
        Self::new(tid, label, indexes, values)
    }

    pub fn indexes(&self) -> &[u64] {
        &self.indexes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn nnz(&self) -> usize {
        self.indexes.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.indexes.iter().copied().zip(self.values.iter().copied())
    }

    pub fn validate(&self, dimension: u64) -> Result<()> {
        match self.indexes.last() {
            Some(&last) if last >= dimension => Err(Error::IndexOutOfRange { index: last, dimension }),
            _ => Ok(()),
        }
    }

    pub fn page_request_set(&self, layout: &PageLayout) -> Result<PageRequestSet> {
        page_request_set(self, layout)
    }
}

/// Sorted, deduplicated set of model pages touched by a vector (or a batch).
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct PageRequestSet(Vec<PageId>);

impl PageRequestSet {
    pub fn new(mut pages: Vec<PageId>) -> Self {
        pages.sort_unstable();
        pages.dedup();
        Self(pages)
    }

    pub fn from_ids(ids: impl IntoIterator<Item = u64>) -> Self {
        Self::new(ids.into_iter().map(PageId).collect())
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn pages(&self) -> &[PageId] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = PageId> + '_ {
        self.0.iter().copied()
    }

    pub fn contains(&self, page: PageId) -> bool {
        self.0.binary_search(&page).is_ok()
    }

    /// Sorted merge of two sets.
    pub fn union(&self, other: &PageRequestSet) -> PageRequestSet {
        let (a, b) = (&self.0, &other.0);
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => {
                    out.push(a[i]);
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push(b[j]);
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    out.push(a[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        PageRequestSet(out)
    }

    /// Cardinality of the union without materializing it.
    pub fn union_len(&self, other: &PageRequestSet) -> usize {
        self.len() + set_diff_cardinality(other, self)
    }

    pub fn intersection_len(&self, other: &PageRequestSet) -> usize {
        self.len() - set_diff_cardinality(self, other)
    }
}

impl FromIterator<PageId> for PageRequestSet {
    fn from_iter<I: IntoIterator<Item = PageId>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

/// Pages touched by `v` under `layout`.
pub fn page_request_set(v: &SparseVector, layout: &PageLayout) -> Result<PageRequestSet> {
    let mut pages = Vec::new();
    for &idx in &v.indexes {
        let page = layout.page_of(idx)?;
        // indexes are ascending, so duplicates are adjacent
        if pages.last() != Some(&page) {
            pages.push(page);
        }
    }
    Ok(PageRequestSet(pages))
}

/// `|a \ b|`: pages of `a` that `b` does not already hold.
pub fn set_diff_cardinality(a: &PageRequestSet, b: &PageRequestSet) -> usize {
    let (a, b) = (&a.0, &b.0);
    let (mut i, mut j, mut count) = (0, 0, 0);
    while i < a.len() {
        if j == b.len() {
            return count + (a.len() - i);
        }
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                count += 1;
                i += 1;
            }
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
    }
    count
}

/// Dataset file encoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataFormat {
    Binary,
    Text,
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bin" | "binary" => Ok(DataFormat::Binary),
            "txt" | "text" => Ok(DataFormat::Text),
            other => Err(Error::InvalidArgument(format!("unknown dataset format '{other}'"))),
        }
    }
}

impl DataFormat {
    /// Guesses the format from a file extension, defaulting to binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("txt") | Some("text") => DataFormat::Text,
            _ => DataFormat::Binary,
        }
    }
}

/// An ordered collection of sparse vectors over a model of fixed dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    dimension: u64,
    vectors: Vec<SparseVector>,
    lmf: Option<LmfLayout>,
}

impl Dataset {
    pub fn new(dimension: u64, vectors: Vec<SparseVector>) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::Validation("dataset dimension must be at least 1".into()));
        }
        let mut tids = HashSet::with_capacity(vectors.len());
        for v in &vectors {
            v.validate(dimension)?;
            if !tids.insert(v.tid) {
                return Err(Error::Validation(format!("duplicate tid {}", v.tid)));
            }
        }
        Ok(Self { dimension, vectors, lmf: None })
    }

    /// Attaches a matrix-factorization layout; every vector must be a valid cell.
    pub fn with_lmf(mut self, layout: LmfLayout) -> Result<Self> {
        if layout.dimension() != self.dimension {
            return Err(Error::Validation(format!(
                "LMF layout dimension {} does not match dataset dimension {}",
                layout.dimension(),
                self.dimension
            )));
        }
        for v in &self.vectors {
            layout.cell_of(v)?;
        }
        self.lmf = Some(layout);
        Ok(self)
    }

    pub fn dimension(&self) -> u64 {
        self.dimension
    }

    pub fn vectors(&self) -> &[SparseVector] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn lmf(&self) -> Option<&LmfLayout> {
        self.lmf.as_ref()
    }

    pub fn total_nnz(&self) -> usize {
        self.vectors.iter().map(SparseVector::nnz).sum()
    }

    pub fn page_request_sets(&self, layout: &PageLayout) -> Result<Vec<PageRequestSet>> {
        self.check_layout(layout)?;
        self.vectors.iter().map(|v| page_request_set(v, layout)).collect()
    }

    pub fn check_layout(&self, layout: &PageLayout) -> Result<()> {
        if layout.dimension() != self.dimension {
            return Err(Error::Validation(format!(
                "model dimension {} does not match dataset dimension {}",
                layout.dimension(),
                self.dimension
            )));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, format: DataFormat) -> Result<Self> {
        let file = File::open(path)?;
        let reader = BufReader::new(file);
        match format {
            DataFormat::Binary => read_binary(reader),
            DataFormat::Text => read_text(reader),
        }
    }

    pub fn store(&self, path: impl AsRef<Path>, format: DataFormat) -> Result<()> {
        let mut writer = BufWriter::new(File::create(path)?);
        match format {
            DataFormat::Binary => self.write_binary(&mut writer)?,
            DataFormat::Text => self.write_text(&mut writer)?,
        }
        writer.flush()?;
        Ok(())
    }

    pub fn write_binary<W: Write>(&self, out: &mut W) -> Result<()> {
        out.write_all(DATA_MAGIC)?;
        let version = if self.lmf.is_some() { DATA_VERSION_LMF } else { DATA_VERSION_PLAIN };
        out.write_all(&version.to_le_bytes())?;
        out.write_all(&self.dimension.to_le_bytes())?;
        out.write_all(&(self.vectors.len() as u64).to_le_bytes())?;
        if let Some(lmf) = &self.lmf {
            for field in [lmf.rows(), lmf.cols(), lmf.rank()] {
                out.write_all(&field.to_le_bytes())?;
            }
        }
        for v in &self.vectors {
            out.write_all(&v.tid.to_le_bytes())?;
            out.write_all(&v.label.to_le_bytes())?;
            out.write_all(&(v.nnz() as u32).to_le_bytes())?;
            for idx in &v.indexes {
                out.write_all(&idx.to_le_bytes())?;
            }
            for val in &v.values {
                out.write_all(&val.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn write_text<W: Write>(&self, out: &mut W) -> Result<()> {
        write!(out, "# dpjoin d={}", self.dimension)?;
        if let Some(lmf) = &self.lmf {
            write!(out, " lmf={}x{}x{}", lmf.rows(), lmf.cols(), lmf.rank())?;
        }
        writeln!(out)?;
        let mut line = String::new();
        for v in &self.vectors {
            line.clear();
            write!(line, "{} {}", v.tid, v.label).unwrap();
            for (i, x) in v.iter() {
                write!(line, " {i}:{x}").unwrap();
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

fn read_array<const N: usize, R: Read>(r: &mut R, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Validation(format!("truncated dataset file while reading {what}")))?;
    Ok(buf)
}

fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array::<8, _>(r, what)?))
}

fn read_binary<R: Read>(mut r: R) -> Result<Dataset> {
    let magic = read_array::<8, _>(&mut r, "magic")?;
    if &magic != DATA_MAGIC {
        return Err(Error::Validation("bad dataset file magic".into()));
    }
    let version = u32::from_le_bytes(read_array::<4, _>(&mut r, "version")?);
    if version != DATA_VERSION_PLAIN && version != DATA_VERSION_LMF {
        return Err(Error::Validation(format!("unsupported dataset version {version}")));
    }
    let dimension = read_u64(&mut r, "dimension")?;
    let n = read_u64(&mut r, "record count")?;
    let lmf = if version == DATA_VERSION_LMF {
        let rows = read_u64(&mut r, "rows")?;
        let cols = read_u64(&mut r, "cols")?;
        let rank = read_u64(&mut r, "rank")?;
        Some(LmfLayout::new(rows, cols, rank)?)
    } else {
        None
    };
    let mut vectors = Vec::with_capacity(n.min(1 << 20) as usize);
    for _ in 0..n {
        let tid = read_u64(&mut r, "tid")?;
        let label = f64::from_le_bytes(read_array::<8, _>(&mut r, "label")?);
        let nnz = u32::from_le_bytes(read_array::<4, _>(&mut r, "nnz")?) as usize;
        let mut indexes = Vec::with_capacity(nnz);
        for _ in 0..nnz {
            indexes.push(read_u64(&mut r, "index")?);
        }
        let mut values = Vec::with_capacity(nnz);
        for _ in 0..nnz {
            values.push(f64::from_le_bytes(read_array::<8, _>(&mut r, "value")?));
        }
        vectors.push(SparseVector::new(tid, label, indexes, values)?);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Validation("trailing bytes after last record".into()));
    }
    let ds = Dataset::new(dimension, vectors)?;
    match lmf {
        Some(layout) => ds.with_lmf(layout),
        None => Ok(ds),
    }
}

fn parse_field<T: FromStr>(token: &str, what: &str, line_no: usize) -> Result<T> {
    token
        .parse()
        .map_err(|_| Error::Validation(format!("line {line_no}: cannot parse {what} from '{token}'")))
}

fn read_text<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut dimension = None;
    let mut lmf = None;
    let mut vectors = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            for token in comment.split_whitespace() {
                if let Some(d) = token.strip_prefix("d=") {
                    dimension = Some(parse_field::<u64>(d, "dimension", line_no)?);
                } else if let Some(shape) = token.strip_prefix("lmf=") {
                    let parts: Vec<&str> = shape.split('x').collect();
                    if parts.len() != 3 {
                        return Err(Error::Validation(format!("line {line_no}: bad lmf shape '{shape}'")));
                    }
                    lmf = Some(LmfLayout::new(
                        parse_field(parts[0], "rows", line_no)?,
                        parse_field(parts[1], "cols", line_no)?,
                        parse_field(parts[2], "rank", line_no)?,
                    )?);
                }
            }
            continue;
        }
        let mut tokens = line.split_whitespace();
        let tid = parse_field::<u64>(tokens.next().unwrap(), "tid", line_no)?;
        let label = match tokens.next() {
            Some(t) => parse_field::<f64>(t, "label", line_no)?,
            None => return Err(Error::Validation(format!("line {line_no}: missing label"))),
        };
        let mut indexes = Vec::new();
        let mut values = Vec::new();
        for token in tokens {
            let (idx, val) = token
                .split_once(':')
                .ok_or_else(|| Error::Validation(format!("line {line_no}: expected idx:val, got '{token}'")))?;
            indexes.push(parse_field::<u64>(idx, "index", line_no)?);
            values.push(parse_field::<f64>(val, "value", line_no)?);
        }
        vectors.push(SparseVector::new(tid, label, indexes, values)?);
    }
    let dimension = dimension
        .ok_or_else(|| Error::Validation("text dataset is missing the '# dpjoin d=<dim>' header".into()))?;
    let ds = Dataset::new(dimension, vectors)?;
    match lmf {
        Some(layout) => ds.with_lmf(layout),
        None => Ok(ds),
    }
}
