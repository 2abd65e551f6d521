//! Bounded LRU residency set shared by the caching and prefetching roles.
//!
//! Entries in the pinned set (the frame being rendered) are never evicted.
//! Each operation takes the lock once; loads happen outside it.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use mrvol_core::BlockAddress;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
    /// Blocks loaded on demand by the caching role.
    pub loads: u64,
    /// Blocks loaded speculatively by the prefetcher.
    pub prefetch_loads: u64,
    pub bytes_loaded: u64,
}

#[derive(Debug)]
struct Inner<V> {
    tick: u64,
    entries: HashMap<BlockAddress, (Arc<V>, u64)>,
    recency: BTreeMap<u64, BlockAddress>,
    pinned: BTreeSet<BlockAddress>,
}

impl<V> Inner<V> {
    fn touch(&mut self, addr: &BlockAddress) -> Option<Arc<V>> {
        let tick = self.tick + 1;
        let (v, t) = self.entries.get_mut(addr)?;
        self.recency.remove(t);
        *t = tick;
        self.tick = tick;
        self.recency.insert(tick, *addr);
        Some(v.clone())
    }
}

#[derive(Debug)]
pub struct ModelCache<V> {
    capacity: usize,
    inner: Mutex<Inner<V>>,
    hits: AtomicU64,
    misses: AtomicU64,
    evictions: AtomicU64,
    loads: AtomicU64,
    prefetch_loads: AtomicU64,
    bytes_loaded: AtomicU64,
}

/// Who is inserting; only affects the counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Demand,
    Prefetch,
}

impl<V> ModelCache<V> {
    pub fn new(capacity: usize) -> Self {
        ModelCache {
            capacity,
            inner: Mutex::new(Inner {
                tick: 0,
                entries: HashMap::new(),
                recency: BTreeMap::new(),
                pinned: BTreeSet::new(),
            }),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            evictions: AtomicU64::new(0),
            loads: AtomicU64::new(0),
            prefetch_loads: AtomicU64::new(0),
            bytes_loaded: AtomicU64::new(0),
        }
    }

    fn lock(&self) -> MutexGuard<'_, Inner<V>> {
        // A panic while holding the lock cannot leave the maps inconsistent
        // (each mutation completes before returning), so poisoning is ignored.
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.lock().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Replaces the pinned set.
    pub fn pin(&self, addrs: impl IntoIterator<Item = BlockAddress>) -> Result<()> {
        let pinned: BTreeSet<_> = addrs.into_iter().collect();
        if pinned.len() > self.capacity {
            return Err(Error::Capacity { visible: pinned.len(), capacity: self.capacity });
        }
        self.lock().pinned = pinned;
        Ok(())
    }

    pub fn unpin_all(&self) {
        self.lock().pinned.clear();
    }

    /// Visibility query: counts a hit (and refreshes recency) or a miss.
    pub fn lookup(&self, addr: &BlockAddress) -> Option<Arc<V>> {
        let got = self.lock().touch(addr);
        let counter = if got.is_some() { &self.hits } else { &self.misses };
        counter.fetch_add(1, Ordering::Relaxed);
        got
    }

    /// Residency test without touching recency or counters.
    pub fn contains(&self, addr: &BlockAddress) -> bool {
        self.lock().entries.contains_key(addr)
    }

    /// Inserts (or refreshes) `addr`, evicting the least recently used
    /// unpinned entry when full. Returns the evicted address. Fails only when
    /// every resident entry is pinned.
    pub fn insert(
        &self,
        addr: BlockAddress,
        value: Arc<V>,
        bytes: u64,
        origin: Origin,
    ) -> Result<Option<BlockAddress>> {
        let mut g = self.lock();
        if g.entries.contains_key(&addr) {
            g.entries.get_mut(&addr).expect("present").0 = value;
            g.touch(&addr);
            return Ok(None);
        }
        let mut evicted = None;
        if g.entries.len() >= self.capacity {
            let victim = g.recency.iter().find(|(_, a)| !g.pinned.contains(a)).map(|(&t, &a)| (t, a));
            let Some((t, victim)) = victim else {
                return Err(Error::Capacity { visible: g.pinned.len() + 1, capacity: self.capacity });
            };
            g.recency.remove(&t);
            g.entries.remove(&victim);
            self.evictions.fetch_add(1, Ordering::Relaxed);
            evicted = Some(victim);
        }
        g.tick += 1;
        let tick = g.tick;
        g.entries.insert(addr, (value, tick));
        g.recency.insert(tick, addr);
        debug_assert!(g.entries.len() <= self.capacity);
        drop(g);
        let c = match origin {
            Origin::Demand => &self.loads,
            Origin::Prefetch => &self.prefetch_loads,
        };
        c.fetch_add(1, Ordering::Relaxed);
        self.bytes_loaded.fetch_add(bytes, Ordering::Relaxed);
        Ok(evicted)
    }

    /// Resident addresses, least recently used first.
    pub fn recency_order(&self) -> Vec<BlockAddress> {
        self.lock().recency.values().copied().collect()
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            evictions: self.evictions.load(Ordering::Relaxed),
            loads: self.loads.load(Ordering::Relaxed),
            prefetch_loads: self.prefetch_loads.load(Ordering::Relaxed),
            bytes_loaded: self.bytes_loaded.load(Ordering::Relaxed),
        }
    }
}
