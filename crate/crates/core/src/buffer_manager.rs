//! Budget-limited page cache over a [`ModelStore`].
//!
//! Requests arrive as page *sets*. A set request is served in two stages:
//! requested pages that are already resident are pinned first, then the
//! missing pages are loaded, evicting the least-recently-used unpinned
//! residents. Because the whole request is pinned before any eviction, no
//! page of a request can be evicted to make room for another page of the
//! same request.
//!
//! Recency is a logical clock bumped once per set request; every page of
//! the request receives the same tick. Eviction picks the smallest
//! `(tick, page id)` pair, so among equally recent pages the lowest page id
//! goes first.

use std::collections::{BTreeSet, HashMap};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model_store::{ModelStore, PageId, PageLayout, PageView};
use crate::sparse_data::PageRequestSet;

/// Point-in-time copy of the buffer manager counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    /// Individual model entries requested, before grouping by page.
    pub element_requests: u64,
    /// Pages named in set requests, summed over requests.
    pub page_requests: u64,
    /// Number of set requests.
    pub set_requests: u64,
    /// Pages loaded from storage.
    pub page_misses: u64,
    /// Dirty pages written back to storage.
    pub write_backs: u64,
    #[serde(skip)]
    pub io_time: Duration,
}

impl MetricsSnapshot {
    /// Counter-wise difference `self - earlier`.
    pub fn since(&self, earlier: &MetricsSnapshot) -> MetricsSnapshot {
        MetricsSnapshot {
            element_requests: self.element_requests - earlier.element_requests,
            page_requests: self.page_requests - earlier.page_requests,
            set_requests: self.set_requests - earlier.set_requests,
            page_misses: self.page_misses - earlier.page_misses,
            write_backs: self.write_backs - earlier.write_backs,
            io_time: self.io_time.saturating_sub(earlier.io_time),
        }
    }
}

#[derive(Debug)]
struct Frame {
    view: PageView,
    pins: u32,
    last_used: u64,
}

#[derive(Debug)]
pub struct BufferManager {
    store: ModelStore,
    capacity: usize,
    frames: HashMap<PageId, Frame>,
    // unpinned residents ordered by (last_used, page id)
    evictable: BTreeSet<(u64, PageId)>,
    clock: u64,
    stats: MetricsSnapshot,
    miss_log: Option<HashMap<PageId, u64>>,
}

impl BufferManager {
    pub fn new(store: ModelStore, capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("memory budget must be at least one page".into()));
        }
        Ok(Self {
            store,
            capacity,
            frames: HashMap::new(),
            evictable: BTreeSet::new(),
            clock: 0,
            stats: MetricsSnapshot::default(),
            miss_log: None,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn layout(&self) -> PageLayout {
        self.store.layout()
    }

    pub fn store(&self) -> &ModelStore {
        &self.store
    }

    /// Flushes dirty pages and hands back the underlying store.
    pub fn into_store(mut self) -> Result<ModelStore> {
        self.flush_all()?;
        self.store.sync()?;
        Ok(self.store)
    }

    /// Starts recording misses per page; resets any previous log.
    pub fn enable_miss_log(&mut self) {
        self.miss_log = Some(HashMap::new());
    }

    /// Returns and clears the per-page miss log.
    pub fn take_miss_log(&mut self) -> HashMap<PageId, u64> {
        self.miss_log.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Pins every page of `pages`, loading the missing ones.
    ///
    /// Returns the number of pages read from storage.
    pub fn request_set(&mut self, pages: &PageRequestSet) -> Result<usize> {
        if pages.len() > self.capacity {
            return Err(Error::RequestTooLarge { requested: pages.len(), budget: self.capacity });
        }
        let layout = self.store.layout();
        let mut missing = Vec::new();
        let mut resident_unpinned = 0;
        for page in pages.iter() {
            layout.check_page(page)?;
            match self.frames.get(&page) {
                Some(frame) if frame.pins == 0 => resident_unpinned += 1,
                Some(_) => {}
                None => missing.push(page),
            }
        }
        let free = self.capacity - self.frames.len();
        let evictions = missing.len().saturating_sub(free);
        if evictions > self.evictable.len() - resident_unpinned {
            return Err(Error::BufferExhausted { budget: self.capacity });
        }

        // stage 1: pin what is already resident
        for page in pages.iter() {
            if let Some(frame) = self.frames.get_mut(&page) {
                if frame.pins == 0 {
                    self.evictable.remove(&(frame.last_used, page));
                }
                frame.pins += 1;
            }
        }

        // stage 2: replacement among the remaining unpinned residents
        for &page in &missing {
            if self.frames.len() >= self.capacity {
                let (_, victim) = self.evictable.pop_first().expect("eviction feasibility checked above");
                let frame = self.frames.remove(&victim).expect("evictable page is resident");
                if frame.view.is_dirty() {
                    self.write_back(&frame.view)?;
                }
            }
            let started = Instant::now();
            let view = self.store.read_page(page)?;
            self.stats.io_time += started.elapsed();
            self.stats.page_misses += 1;
            if let Some(log) = self.miss_log.as_mut() {
                *log.entry(page).or_insert(0) += 1;
            }
            self.frames.insert(page, Frame { view, pins: 1, last_used: 0 });
        }

        self.clock += 1;
        for page in pages.iter() {
            self.frames.get_mut(&page).expect("requested page is resident").last_used = self.clock;
        }
        self.stats.page_requests += pages.len() as u64;
        self.stats.set_requests += 1;
        Ok(missing.len())
    }

    /// Releases one pin on every page of `pages`.
    pub fn unpin_set(&mut self, pages: &PageRequestSet) -> Result<()> {
        for page in pages.iter() {
            match self.frames.get(&page) {
                Some(frame) if frame.pins > 0 => {}
                _ => return Err(Error::NotPinned(page)),
            }
        }
        for page in pages.iter() {
            let frame = self.frames.get_mut(&page).expect("checked above");
            frame.pins -= 1;
            if frame.pins == 0 {
                self.evictable.insert((frame.last_used, page));
            }
        }
        Ok(())
    }

    pub fn mark_dirty(&mut self, page: PageId) -> Result<()> {
        self.frames
            .get_mut(&page)
            .map(|f| f.view.mark_dirty())
            .ok_or(Error::NotResident(page))
    }

    /// Writes every dirty resident page back to storage; pages stay resident.
    pub fn flush_all(&mut self) -> Result<()> {
        let mut dirty: Vec<PageId> =
            self.frames.iter().filter(|(_, f)| f.view.is_dirty()).map(|(&p, _)| p).collect();
        dirty.sort_unstable();
        for page in dirty {
            let view = self.frames[&page].view.clone();
            self.write_back(&view)?;
            self.frames.get_mut(&page).unwrap().view.mark_clean();
        }
        Ok(())
    }

    fn write_back(&mut self, view: &PageView) -> Result<()> {
        let started = Instant::now();
        self.store.write_page(view)?;
        self.stats.io_time += started.elapsed();
        self.stats.write_backs += 1;
        Ok(())
    }

    /// Counts model entries requested by the caller before page grouping.
    pub fn record_element_requests(&mut self, count: u64) {
        self.stats.element_requests += count;
    }

    pub fn stats(&self) -> MetricsSnapshot {
        self.stats
    }

    pub fn is_resident(&self, page: PageId) -> bool {
        self.frames.contains_key(&page)
    }

    pub fn pin_count(&self, page: PageId) -> u32 {
        self.frames.get(&page).map_or(0, |f| f.pins)
    }

    pub fn resident_pages(&self) -> Vec<PageId> {
        let mut pages: Vec<PageId> = self.frames.keys().copied().collect();
        pages.sort_unstable();
        pages
    }

    pub fn pinned_page(&self, page: PageId) -> Result<&PageView> {
        match self.frames.get(&page) {
            Some(frame) if frame.pins > 0 => Ok(&frame.view),
            _ => Err(Error::NotPinned(page)),
        }
    }

    /// Mutable view of a pinned page; the caller marks it dirty by writing.
    pub fn pinned_page_mut(&mut self, page: PageId) -> Result<&mut PageView> {
        match self.frames.get_mut(&page) {
            Some(frame) if frame.pins > 0 => Ok(&mut frame.view),
            _ => Err(Error::NotPinned(page)),
        }
    }

    /// Value of model entry `index`, which must lie on a pinned page.
    pub fn value(&self, index: u64) -> Result<f64> {
        let layout = self.store.layout();
        let page = layout.page_of(index)?;
        let view = self.pinned_page(page)?;
        Ok(view.values()[(index - page.0 * layout.page_size()) as usize])
    }

    /// Adds `delta` to model entry `index` on a pinned page and marks it dirty.
    pub fn add_to_value(&mut self, index: u64, delta: f64) -> Result<()> {
        let layout = self.store.layout();
        let page = layout.page_of(index)?;
        let view = self.pinned_page_mut(page)?;
        view.values_mut()[(index - page.0 * layout.page_size()) as usize] += delta;
        Ok(())
    }
}
