//! The out-of-core frame loop.
//!
//! Each step caches the visible set (timed as caching), then renders it on the
//! worker pool while a prefetch thread loads the blocks a predictor expects
//! next. The prefetcher checks the rendering-done flag before every load and
//! stops as soon as it is set.

use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Instant;

use mrvol_core::render::render;
use mrvol_core::visibility::select_visible;
use mrvol_core::{geom, BlockAddress, Frame, LodTable, PointOfView, RenderParams, TransferFunction};
use serde::{Deserialize, Serialize};

use crate::cache::{ModelCache, Origin};
use crate::error::Result;
use crate::par::Rayon;
use crate::store::{Resident, Store, StoreBlock};

pub type BlockCache = ModelCache<StoreBlock>;

/// Cache capacity (blocks) used by default.
pub const DEFAULT_CAPACITY: usize = 200;

/// Set by the render dispatcher when a frame is finished, cleared when the
/// next one starts. Load starts and the done signal are serialized, so no
/// load can start once `finish` has returned.
#[derive(Debug, Default)]
pub struct RenderingDone(Mutex<bool>);

impl RenderingDone {
    fn flag(&self) -> std::sync::MutexGuard<'_, bool> {
        self.0.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn set(&self) {
        *self.flag() = true;
    }

    pub fn clear(&self) {
        *self.flag() = false;
    }

    pub fn is_set(&self) -> bool {
        *self.flag()
    }

    /// Sets the flag and reports it to `hooks` atomically.
    pub fn finish(&self, hooks: &dyn PrefetchHooks) {
        let mut f = self.flag();
        *f = true;
        hooks.rendering_done();
    }

    /// Reports a load start to `hooks` unless the flag is set.
    pub fn try_begin_load(&self, hooks: &dyn PrefetchHooks, addr: &BlockAddress) -> bool {
        let f = self.flag();
        if *f {
            return false;
        }
        hooks.load_started(addr);
        true
    }
}

/// Observation points of the prefetch loop.
pub trait PrefetchHooks: Send + Sync {
    fn load_started(&self, _addr: &BlockAddress) {}
    fn load_finished(&self, _addr: &BlockAddress, _ok: bool) {}
    fn rendering_done(&self) {}
    fn stopped(&self, _loaded: usize, _preempted: bool) {}
}

#[derive(Debug, Default)]
pub struct NoHooks;

impl PrefetchHooks for NoHooks {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrefetchEvent {
    LoadStarted(BlockAddress),
    LoadFinished(BlockAddress),
    RenderingDone,
    Stopped { loaded: usize, preempted: bool },
}

/// Records hook calls in order under one lock.
#[derive(Debug, Default)]
pub struct EventLog(Mutex<Vec<PrefetchEvent>>);

impl EventLog {
    pub fn events(&self) -> Vec<PrefetchEvent> {
        self.0.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }

    fn push(&self, e: PrefetchEvent) {
        self.0.lock().unwrap_or_else(|p| p.into_inner()).push(e);
    }

    /// Largest number of loads started after a rendering-done signal within
    /// one frame. Each frame logs one `RenderingDone` and one `Stopped`, in
    /// either order; the frame ends at whichever comes second.
    pub fn max_loads_after_done(&self) -> usize {
        let mut worst = 0;
        let mut after: Option<usize> = None;
        let mut stopped = false;
        for e in self.events() {
            match e {
                PrefetchEvent::RenderingDone if stopped => stopped = false,
                PrefetchEvent::RenderingDone => after = Some(0),
                PrefetchEvent::Stopped { .. } if after.is_some() => after = None,
                PrefetchEvent::Stopped { .. } => stopped = true,
                PrefetchEvent::LoadStarted(_) => {
                    if let Some(n) = after.as_mut() {
                        *n += 1;
                        worst = worst.max(*n);
                    }
                }
                PrefetchEvent::LoadFinished(_) => {}
            }
        }
        worst
    }
}

impl PrefetchHooks for EventLog {
    fn load_started(&self, addr: &BlockAddress) {
        self.push(PrefetchEvent::LoadStarted(*addr));
    }
    fn load_finished(&self, addr: &BlockAddress, _ok: bool) {
        self.push(PrefetchEvent::LoadFinished(*addr));
    }
    fn rendering_done(&self) {
        self.push(PrefetchEvent::RenderingDone);
    }
    fn stopped(&self, loaded: usize, preempted: bool) {
        self.push(PrefetchEvent::Stopped { loaded, preempted });
    }
}

/// Guesses the next point of view from the history (most recent last).
pub trait Predictor: Send + Sync {
    fn predict(&self, history: &[PointOfView]) -> Option<PointOfView>;
}

/// Predicts nothing; prefetching is effectively off.
#[derive(Debug, Default)]
pub struct NoPrediction;

impl Predictor for NoPrediction {
    fn predict(&self, _: &[PointOfView]) -> Option<PointOfView> {
        None
    }
}

/// Predicts that the camera stays where it is.
#[derive(Debug, Default)]
pub struct StaticPredictor;

impl Predictor for StaticPredictor {
    fn predict(&self, history: &[PointOfView]) -> Option<PointOfView> {
        history.last().copied()
    }
}

/// Constant-velocity extrapolation of position and direction.
#[derive(Debug, Default)]
pub struct LinearPredictor;

impl Predictor for LinearPredictor {
    fn predict(&self, history: &[PointOfView]) -> Option<PointOfView> {
        predict_next_linear(history)
    }
}

/// `p' = p_n + (p_n - p_{n-1})`, direction likewise then renormalized. With
/// fewer than two entries, or a degenerate result, the last POV is returned.
pub fn predict_next_linear(history: &[PointOfView]) -> Option<PointOfView> {
    let last = *history.last()?;
    let [.., prev, _] = history else { return Some(last) };
    let step = |a: [f64; 3], b: [f64; 3]| geom::sub(geom::scale(a, 2.0), b);
    let dir = geom::normalize(step(last.direction, prev.direction)).unwrap_or(last.direction);
    let next = PointOfView { position: step(last.position, prev.position), direction: dir, ..last };
    Some(if next.validate().is_ok() { next } else { PointOfView { position: next.position, ..last } })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PrefetchMode {
    #[default]
    Off,
    Static,
    Linear,
}

impl PrefetchMode {
    pub fn predictor(self) -> Box<dyn Predictor> {
        match self {
            PrefetchMode::Off => Box::new(NoPrediction),
            PrefetchMode::Static => Box::new(StaticPredictor),
            PrefetchMode::Linear => Box::new(LinearPredictor),
        }
    }
}

/// Per-frame accounting. `input_latency_ms` is `caching_ms + rendering_ms`,
/// all three taken from the same three clock readings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameTiming {
    pub frame: usize,
    pub caching_ms: f64,
    pub rendering_ms: f64,
    pub input_latency_ms: f64,
    pub visible: usize,
    pub hits: u64,
    pub misses: u64,
    pub miss_rate: f64,
    pub prefetch_models_loaded: usize,
    pub bytes_loaded: u64,
}

#[derive(Debug, Clone)]
pub struct CachedFrame {
    pub visible: Vec<BlockAddress>,
    pub resident: Resident,
    pub hits: u64,
    pub misses: u64,
    pub bytes_loaded: u64,
}

/// Makes every block visible from `pov` resident and returns handles to them.
pub fn cache_frame(
    pov: &PointOfView,
    store: &Store,
    cache: &BlockCache,
    table: &LodTable,
    aspect: f64,
) -> Result<CachedFrame> {
    let visible = select_visible(pov, store.layout(), table, aspect);
    cache.pin(visible.iter().copied())?;
    let mut out =
        CachedFrame { visible: Vec::new(), resident: Resident::default(), hits: 0, misses: 0, bytes_loaded: 0 };
    for addr in &visible {
        let block = match cache.lookup(addr) {
            Some(b) => {
                out.hits += 1;
                b
            }
            None => {
                out.misses += 1;
                let b = Arc::new(store.load(addr)?);
                let bytes = b.encoded_size() as u64;
                out.bytes_loaded += bytes;
                cache.insert(*addr, b.clone(), bytes, Origin::Demand)?;
                b
            }
        };
        out.resident.0.insert(*addr, block);
    }
    out.visible = visible;
    Ok(out)
}

/// Loads the non-resident blocks of `wanted` in order until `done` is set.
/// Errors are logged and skipped. Returns the number of blocks loaded.
pub fn prefetch(
    wanted: &[BlockAddress],
    store: &Store,
    cache: &BlockCache,
    done: &RenderingDone,
    hooks: &dyn PrefetchHooks,
) -> usize {
    let mut loaded = 0;
    let mut preempted = false;
    for addr in wanted {
        if cache.contains(addr) {
            continue;
        }
        if !done.try_begin_load(hooks, addr) {
            preempted = true;
            break;
        }
        let ok = match store.load(addr) {
            Ok(b) => {
                let bytes = b.encoded_size() as u64;
                match cache.insert(*addr, Arc::new(b), bytes, Origin::Prefetch) {
                    Ok(_) => {
                        loaded += 1;
                        true
                    }
                    Err(e) => {
                        log::debug!("prefetch of {addr} skipped: {e}");
                        false
                    }
                }
            }
            Err(e) => {
                log::warn!("prefetch of {addr} failed: {e}");
                false
            }
        };
        hooks.load_finished(addr, ok);
    }
    hooks.stopped(loaded, preempted);
    loaded
}

#[derive(Debug, Clone)]
pub struct RuntimeConfig {
    pub tf: TransferFunction,
    pub params: RenderParams,
    pub table: LodTable,
    pub capacity: usize,
    pub prefetch: PrefetchMode,
}

pub struct StepOutput {
    pub frame: Frame,
    pub timing: FrameTiming,
    pub visible: Vec<BlockAddress>,
}

/// One caching role plus one prefetch role over one cache.
pub struct Runtime {
    store: Arc<Store>,
    cache: Arc<BlockCache>,
    tf: TransferFunction,
    params: RenderParams,
    table: LodTable,
    predictor: Box<dyn Predictor>,
    hooks: Arc<dyn PrefetchHooks>,
    done: Arc<RenderingDone>,
    history: Vec<PointOfView>,
}

impl Runtime {
    pub fn new(store: Arc<Store>, cfg: RuntimeConfig) -> Self {
        Runtime {
            store,
            cache: Arc::new(ModelCache::new(cfg.capacity)),
            tf: cfg.tf,
            params: cfg.params,
            table: cfg.table,
            predictor: cfg.prefetch.predictor(),
            hooks: Arc::new(NoHooks),
            done: Arc::new(RenderingDone::default()),
            history: Vec::new(),
        }
    }

    pub fn with_predictor(mut self, p: Box<dyn Predictor>) -> Self {
        self.predictor = p;
        self
    }

    pub fn with_hooks(mut self, hooks: Arc<dyn PrefetchHooks>) -> Self {
        self.hooks = hooks;
        self
    }

    pub fn cache(&self) -> &Arc<BlockCache> {
        &self.cache
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn history(&self) -> &[PointOfView] {
        &self.history
    }

    pub fn params(&self) -> &RenderParams {
        &self.params
    }

    /// The flag the prefetcher polls; setting it stops prefetching in flight.
    pub fn rendering_done(&self) -> Arc<RenderingDone> {
        self.done.clone()
    }

    pub fn step(&mut self, pov: PointOfView) -> Result<StepOutput> {
        pov.validate()?;
        let aspect = self.params.aspect();
        let t0 = Instant::now();
        let cached = cache_frame(&pov, &self.store, &self.cache, &self.table, aspect)?;
        let t1 = Instant::now();
        self.history.push(pov);

        self.done.clear();
        let (store, cache, done, hooks) = (&*self.store, &*self.cache, &*self.done, &*self.hooks);
        let (predictor, history, table) = (&*self.predictor, &self.history[..], &self.table);
        let (frame, t2, prefetched) = thread::scope(|s| {
            let worker = s.spawn(move || match predictor.predict(history) {
                Some(next) => {
                    let wanted = select_visible(&next, store.layout(), table, aspect);
                    prefetch(&wanted, store, cache, done, hooks)
                }
                None => {
                    hooks.stopped(0, false);
                    0
                }
            });
            let frame = render(&pov, store.layout(), &cached.visible, &cached.resident, &self.tf, &self.params, &Rayon);
            let t2 = Instant::now();
            done.finish(hooks);
            let prefetched = worker.join().unwrap_or_else(|p| std::panic::resume_unwind(p));
            (frame, t2, prefetched)
        });
        let frame = frame?;

        let ms = |d: std::time::Duration| d.as_secs_f64() * 1e3;
        let visible = cached.visible.len();
        let timing = FrameTiming {
            frame: self.history.len() - 1,
            caching_ms: ms(t1 - t0),
            rendering_ms: ms(t2 - t1),
            input_latency_ms: ms(t2 - t0),
            visible,
            hits: cached.hits,
            misses: cached.misses,
            miss_rate: if visible == 0 { 0.0 } else { cached.misses as f64 / visible as f64 },
            prefetch_models_loaded: prefetched,
            bytes_loaded: cached.bytes_loaded,
        };
        Ok(StepOutput { frame, timing, visible: cached.visible })
    }
}

/// Runs every POV of `trajectory` through `rt`, passing each step to
/// `on_frame` as soon as it is done so partial results survive an error.
pub fn replay(
    rt: &mut Runtime,
    trajectory: &[PointOfView],
    mut on_frame: impl FnMut(&StepOutput) -> Result<()>,
) -> Result<Vec<FrameTiming>> {
    let mut out = Vec::with_capacity(trajectory.len());
    for pov in trajectory {
        let step = rt.step(*pov)?;
        on_frame(&step)?;
        out.push(step.timing);
    }
    Ok(out)
}

/// `n` POVs circling the y axis at `radius` and height `y`, looking at the
/// origin, covering `turns` revolutions.
pub fn orbit(n: usize, radius: f64, y: f64, turns: f64, fov_y: f64) -> mrvol_core::Result<Vec<PointOfView>> {
    (0..n)
        .map(|i| {
            let th = std::f64::consts::TAU * turns * i as f64 / n.max(1) as f64;
            PointOfView::look_at([radius * th.cos(), y, radius * th.sin()], [0.0; 3], [0.0, 1.0, 0.0], fov_y)
        })
        .collect()
}
