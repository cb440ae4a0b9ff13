//! Paged, file-backed storage for the dense model.
//!
//! The model is a vector of `dimension` f64 values split into fixed-size pages
//! of `page_size` entries. Page `k` holds indexes `[k * P, min((k + 1) * P, d))`;
//! the last page is zero-padded on disk so every page has the same stride.
//!
//! File layout (little-endian):
//!
//! ```text
//! 8 bytes  magic "DPJMODEL"
//! u32      version (1)
//! u64      dimension
//! u64      page size (entries per page)
//! pages    num_pages * page_size * f64
//! ```

use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Cursor, Read, Seek, SeekFrom, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 8] = b"DPJMODEL";
pub const MODEL_VERSION: u32 = 1;
pub const MODEL_HEADER_LEN: u64 = 8 + 4 + 8 + 8;
const VALUE_BYTES: usize = std::mem::size_of::<f64>();

/// Zero-based identifier of a model page.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PageId(pub u64);

impl fmt::Display for PageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Range partitioning of model indexes into pages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageLayout {
    dimension: u64,
    page_size: u64,
}

impl PageLayout {
    pub fn new(dimension: u64, page_size: u64) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidArgument("model dimension must be at least 1".into()));
        }
        if page_size == 0 {
            return Err(Error::InvalidArgument("page size must be at least 1".into()));
        }
        Ok(Self { dimension, page_size })
    }

    pub fn dimension(&self) -> u64 {
        self.dimension
    }

    pub fn page_size(&self) -> u64 {
        self.page_size
    }

    pub fn num_pages(&self) -> u64 {
        self.dimension.div_ceil(self.page_size)
    }

    pub fn page_of(&self, index: u64) -> Result<PageId> {
        if index >= self.dimension {
            return Err(Error::IndexOutOfRange { index, dimension: self.dimension });
        }
        Ok(PageId(index / self.page_size))
    }

    /// Model indexes covered by `page`, excluding the zero padding.
    pub fn index_range(&self, page: PageId) -> Result<Range<u64>> {
        self.check_page(page)?;
        let start = page.0 * self.page_size;
        Ok(start..(start + self.page_size).min(self.dimension))
    }

    pub fn check_page(&self, page: PageId) -> Result<()> {
        if page.0 >= self.num_pages() {
            return Err(Error::PageOutOfRange { page, num_pages: self.num_pages() });
        }
        Ok(())
    }

    fn page_offset(&self, page: PageId) -> u64 {
        MODEL_HEADER_LEN + page.0 * self.page_size * VALUE_BYTES as u64
    }

    pub fn file_len(&self) -> u64 {
        MODEL_HEADER_LEN + self.num_pages() * self.page_size * VALUE_BYTES as u64
    }
}

/// Initial contents of a freshly created model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitSpec {
    Zeros,
    Constant(f64),
    /// Values drawn uniformly from `[lo, hi)`, in index order, from a seeded stream.
    Uniform { lo: f64, hi: f64, seed: u64 },
}

/// One page of model values held in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct PageView {
    page_id: PageId,
    values: Vec<f64>,
    dirty: bool,
}

impl PageView {
    pub fn new(page_id: PageId, values: Vec<f64>) -> Self {
        Self { page_id, values, dirty: false }
    }

    pub fn page_id(&self) -> PageId {
        self.page_id
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access; marks the page dirty.
    pub fn values_mut(&mut self) -> &mut [f64] {
        self.dirty = true;
        &mut self.values
    }

    pub fn is_dirty(&self) -> bool {
        self.dirty
    }

    pub fn mark_dirty(&mut self) {
        self.dirty = true;
    }

    pub(crate) fn mark_clean(&mut self) {
        self.dirty = false;
    }
}

trait Backing: Read + Write + Seek + Send {}
impl<T: Read + Write + Seek + Send> Backing for T {}

/// The dense model as a sequence of fixed-size pages on secondary storage.
pub struct ModelStore {
    layout: PageLayout,
    backing: Box<dyn Backing>,
    path: Option<PathBuf>,
    page_reads: u64,
    page_writes: u64,
}

impl fmt::Debug for ModelStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelStore")
            .field("layout", &self.layout)
            .field("path", &self.path)
            .field("page_reads", &self.page_reads)
            .field("page_writes", &self.page_writes)
            .finish()
    }
}

impl ModelStore {
    /// Creates a model file at `path`, overwriting any existing file.
    pub fn create(path: impl AsRef<Path>, dimension: u64, page_size: u64, init: InitSpec) -> Result<Self> {
        let layout = PageLayout::new(dimension, page_size)?;
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(true)
            .open(&path)?;
        let mut writer = BufWriter::new(file);
        write_model(&mut writer, layout, init)?;
        let file = writer.into_inner().map_err(|e| e.into_error())?;
        Ok(Self::with_backing(layout, Box::new(file), Some(path)))
    }

    /// Creates a model held in a memory buffer instead of a file.
    pub fn create_in_memory(dimension: u64, page_size: u64, init: InitSpec) -> Result<Self> {
        let layout = PageLayout::new(dimension, page_size)?;
        let mut buf = Cursor::new(Vec::with_capacity(layout.file_len() as usize));
        write_model(&mut buf, layout, init)?;
        Ok(Self::with_backing(layout, Box::new(buf), None))
    }

    /// In-memory model with explicit values; `values.len()` is the dimension.
    pub fn from_values_in_memory(values: &[f64], page_size: u64) -> Result<Self> {
        let mut store = Self::create_in_memory(values.len() as u64, page_size, InitSpec::Zeros)?;
        store.overwrite_values(values)?;
        Ok(store)
    }

    /// Writes `values` to a new model file at `path`.
    pub fn create_from_values(path: impl AsRef<Path>, values: &[f64], page_size: u64) -> Result<Self> {
        let mut store = Self::create(path, values.len() as u64, page_size, InitSpec::Zeros)?;
        store.overwrite_values(values)?;
        Ok(store)
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new().read(true).write(true).open(&path)?;
        let layout = read_header(&mut file)?;
        let actual = file.metadata()?.len();
        if actual != layout.file_len() {
            return Err(Error::Validation(format!(
                "model file is {actual} bytes, expected {}",
                layout.file_len()
            )));
        }
        Ok(Self::with_backing(layout, Box::new(file), Some(path)))
    }

    fn with_backing(layout: PageLayout, backing: Box<dyn Backing>, path: Option<PathBuf>) -> Self {
        Self { layout, backing, path, page_reads: 0, page_writes: 0 }
    }

    pub fn layout(&self) -> PageLayout {
        self.layout
    }

    pub fn dimension(&self) -> u64 {
        self.layout.dimension
    }

    pub fn page_size(&self) -> u64 {
        self.layout.page_size
    }

    pub fn num_pages(&self) -> u64 {
        self.layout.num_pages()
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn page_of(&self, index: u64) -> Result<PageId> {
        self.layout.page_of(index)
    }

    pub fn read_page(&mut self, page: PageId) -> Result<PageView> {
        self.layout.check_page(page)?;
        let mut bytes = vec![0u8; self.layout.page_size as usize * VALUE_BYTES];
        self.backing.seek(SeekFrom::Start(self.layout.page_offset(page)))?;
        self.backing.read_exact(&mut bytes).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => {
                Error::Validation(format!("short read on page {page}: model file is truncated"))
            }
            _ => Error::Io(e),
        })?;
        self.page_reads += 1;
        Ok(PageView::new(page, decode_values(&bytes)))
    }

    pub fn write_page(&mut self, page: &PageView) -> Result<()> {
        self.layout.check_page(page.page_id)?;
        if page.values.len() as u64 != self.layout.page_size {
            return Err(Error::InvalidArgument(format!(
                "page {} has {} values, expected {}",
                page.page_id,
                page.values.len(),
                self.layout.page_size
            )));
        }
        self.backing.seek(SeekFrom::Start(self.layout.page_offset(page.page_id)))?;
        self.backing.write_all(&encode_values(&page.values))?;
        self.page_writes += 1;
        Ok(())
    }

    pub fn page_reads(&self) -> u64 {
        self.page_reads
    }

    pub fn page_writes(&self) -> u64 {
        self.page_writes
    }

    /// Number of `read_page` plus `write_page` calls.
    pub fn storage_accesses(&self) -> u64 {
        self.page_reads + self.page_writes
    }

    /// Reads the whole model without touching the access counters.
    pub fn snapshot_values(&mut self) -> Result<Vec<f64>> {
        let mut bytes = vec![0u8; (self.layout.file_len() - MODEL_HEADER_LEN) as usize];
        self.backing.seek(SeekFrom::Start(MODEL_HEADER_LEN))?;
        self.backing.read_exact(&mut bytes)?;
        let mut values = decode_values(&bytes);
        values.truncate(self.layout.dimension as usize);
        Ok(values)
    }

    /// Replaces all model values without touching the access counters.
    pub fn overwrite_values(&mut self, values: &[f64]) -> Result<()> {
        if values.len() as u64 != self.layout.dimension {
            return Err(Error::InvalidArgument(format!(
                "expected {} values, got {}",
                self.layout.dimension,
                values.len()
            )));
        }
        let mut padded = values.to_vec();
        padded.resize((self.layout.num_pages() * self.layout.page_size) as usize, 0.0);
        self.backing.seek(SeekFrom::Start(MODEL_HEADER_LEN))?;
        self.backing.write_all(&encode_values(&padded))?;
        self.backing.flush()?;
        Ok(())
    }

    pub fn sync(&mut self) -> Result<()> {
        self.backing.flush()?;
        Ok(())
    }
}

fn write_model<W: Write>(out: &mut W, layout: PageLayout, init: InitSpec) -> Result<()> {
    out.write_all(MODEL_MAGIC)?;
    out.write_all(&MODEL_VERSION.to_le_bytes())?;
    out.write_all(&layout.dimension.to_le_bytes())?;
    out.write_all(&layout.page_size.to_le_bytes())?;

    let mut rng = match init {
        InitSpec::Uniform { lo, hi, seed } => {
            if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidArgument(format!("invalid uniform range [{lo}, {hi})")));
            }
            Some(ChaCha8Rng::seed_from_u64(seed))
        }
        _ => None,
    };
    let mut page = vec![0.0f64; layout.page_size as usize];
    for p in 0..layout.num_pages() {
        let range = layout.index_range(PageId(p))?;
        let live = (range.end - range.start) as usize;
        for (slot, value) in page.iter_mut().enumerate() {
            *value = if slot >= live {
                0.0
            } else {
                match init {
                    InitSpec::Zeros => 0.0,
                    InitSpec::Constant(c) => c,
                    InitSpec::Uniform { lo, hi, .. } => {
                        rng.as_mut().expect("seeded for uniform init").random_range(lo..hi)
                    }
                }
            };
        }
        out.write_all(&encode_values(&page))?;
    }
    out.flush()?;
    Ok(())
}

fn read_header(file: &mut File) -> Result<PageLayout> {
    let mut header = [0u8; MODEL_HEADER_LEN as usize];
    file.read_exact(&mut header)
        .map_err(|_| Error::Validation("model file shorter than its header".into()))?;
    if &header[..8] != MODEL_MAGIC {
        return Err(Error::Validation("bad model file magic".into()));
    }
    let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
    if version != MODEL_VERSION {
        return Err(Error::Validation(format!("unsupported model file version {version}")));
    }
    let dimension = u64::from_le_bytes(header[12..20].try_into().unwrap());
    let page_size = u64::from_le_bytes(header[20..28].try_into().unwrap());
    PageLayout::new(dimension, page_size).map_err(|e| Error::Validation(e.to_string()))
}

fn encode_values(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn decode_values(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(VALUE_BYTES)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect()
}
