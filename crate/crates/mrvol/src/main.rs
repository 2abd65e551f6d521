use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mrvol::compare::{compare_backends, render_store};
use mrvol::io;
use mrvol::par::Rayon;
use mrvol::report::{quality_csv, summarize, timings_csv, Report};
use mrvol::runtime::{replay, PrefetchMode, Runtime, RuntimeConfig, DEFAULT_CAPACITY};
use mrvol::service::{self, tf_presets, ServiceConfig};
use mrvol::store::{write_ds_store, write_fixed_store, write_mfa_store, LayoutOptions, Store};
use mrvol::{Error, Result};
use mrvol_core::encoder::{EncodeConfig, SearchMode};
use mrvol_core::volume::sample_grid;
use mrvol_core::{Aabb, LodTable, MarschnerLobb, PointOfView, RenderParams, TransferFunction, Vec3};

#[derive(Debug, Parser)]
#[command(name = "mrvol", version, about = "Multi-resolution volume encoder, renderer and render service")]
#[command(args_override_self = true)]
struct Cli {
    /// JSON object of option defaults (`{"width": 256}`); command-line flags win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Sample the Marschner-Lobb field to a raw f32 volume plus JSON sidecar.
    GenMl(GenMl),
    /// Encode a raw volume into a block store.
    Encode(Encode),
    /// Render one frame from a store to PNG.
    Render(RenderCmd),
    /// Replay a POV trajectory through the cache and prefetcher.
    Replay(ReplayCmd),
    /// Score stores against the analytic Marschner-Lobb ground truth.
    Compare(CompareCmd),
    /// Run the HTTP/WebSocket render service.
    Serve(Serve),
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct GenMl {
    #[arg(long, default_value_t = 129)]
    dims: usize,
    #[arg(long, default_value_t = 6.0)]
    f_m: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    lo: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    hi: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendArg {
    /// Adaptive micro-models.
    Mfa,
    /// Micro-models with one NCP everywhere.
    Fixed,
    /// Down-sampled blocks.
    Ds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SearchArg {
    Exhaustive,
    Monotone,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct Encode {
    /// Raw f32 volume with a `.json` sidecar.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "mfa")]
    backend: BackendArg,
    #[arg(long, default_value_t = 3)]
    levels: u32,
    #[arg(long, default_value_t = 33)]
    micro: usize,
    #[arg(long, default_value_t = 1)]
    coarsest: u32,
    #[arg(long, default_value_t = 1e-3)]
    error_bound: f64,
    #[arg(long, default_value_t = 2)]
    degree: usize,
    /// NCP for the fixed backend; defaults to the micro-block edge.
    #[arg(long)]
    ncp: Option<usize>,
    #[arg(long, value_enum, default_value = "exhaustive")]
    search: SearchArg,
    /// Search every block instead of pruning below simple parents.
    #[arg(long)]
    no_cross_level: bool,
    /// DS backend without ghost cells.
    #[arg(long)]
    no_ghost: bool,
    /// Write the encode report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ViewArgs {
    #[arg(long, value_parser = parse_vec3, default_value = "0,0,4", allow_hyphen_values = true)]
    pos: Vec3,
    #[arg(long, value_parser = parse_vec3, default_value = "0,0,-1", allow_hyphen_values = true)]
    dir: Vec3,
    #[arg(long, value_parser = parse_vec3, default_value = "0,1,0", allow_hyphen_values = true)]
    up: Vec3,
    #[arg(long, default_value_t = io::DEFAULT_FOV)]
    fov: f64,
}

impl ViewArgs {
    fn pov(&self) -> Result<PointOfView> {
        Ok(PointOfView::new(self.pos, self.dir, self.up, self.fov)?)
    }
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[arg(long, default_value_t = 512)]
    width: u32,
    #[arg(long, default_value_t = 512)]
    height: u32,
    #[arg(long, default_value_t = 1e-3)]
    sample_distance: f64,
    #[arg(long, default_value_t = 0.99)]
    o_max: f64,
    /// Transfer function preset name or JSON file.
    #[arg(long, default_value = "ml-shells")]
    tf: String,
    /// Distance thresholds between LOD levels, finest first.
    #[arg(long, value_delimiter = ',')]
    lod_thresholds: Option<Vec<f64>>,
}

impl RenderArgs {
    fn params(&self) -> Result<RenderParams> {
        let p = RenderParams {
            width: self.width,
            height: self.height,
            sample_distance: self.sample_distance,
            o_max: self.o_max,
            ..RenderParams::default()
        };
        p.validate().map_err(|e| Error::Usage(e.to_string()))?;
        Ok(p)
    }

    fn table(&self) -> Result<LodTable> {
        match &self.lod_thresholds {
            Some(t) => LodTable::new(t.clone()).map_err(|e| Error::Usage(e.to_string())),
            None => Ok(LodTable::default()),
        }
    }

    fn tf(&self, value_range: [f32; 2]) -> Result<TransferFunction> {
        if let Some(t) = tf_presets(value_range).remove(self.tf.as_str()) {
            return Ok(t);
        }
        let path = Path::new(&self.tf);
        if path.exists() {
            return io::read_tf(path);
        }
        let names: Vec<_> = tf_presets(value_range).into_keys().collect();
        Err(Error::Usage(format!("--tf {:?} is neither a preset ({}) nor a file", self.tf, names.join(", "))))
    }
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct RenderCmd {
    #[arg(long, env = "MRVOL_STORE")]
    store: PathBuf,
    #[command(flatten)]
    view: ViewArgs,
    #[command(flatten)]
    render: RenderArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct ReplayCmd {
    #[arg(long, env = "MRVOL_STORE")]
    store: PathBuf,
    /// JSONL file of `{pos, dir, up, fov}` records.
    #[arg(long)]
    trajectory: PathBuf,
    #[command(flatten)]
    render: RenderArgs,
    /// Cache capacity in micro-models.
    #[arg(long = "cache-capacity", alias = "capacity", default_value_t = DEFAULT_CAPACITY)]
    capacity: usize,
    #[arg(long, value_enum, default_value = "linear")]
    prefetch: PrefetchMode,
    /// Per-frame timings as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Summary report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Directory for numbered PNG frames.
    #[arg(long)]
    frames: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct CompareCmd {
    /// `name=dir` pairs.
    #[arg(long = "store", value_parser = parse_named, required = true)]
    stores: Vec<(String, PathBuf)>,
    #[command(flatten)]
    view: ViewArgs,
    #[command(flatten)]
    render: RenderArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.02,0.01,0.005")]
    sample_distances: Vec<f64>,
    #[arg(long, default_value_t = 6.0)]
    f_m: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Quality table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct Serve {
    /// Store directory, or a directory of stores selected per session.
    #[arg(long, env = "MRVOL_STORE")]
    store: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    #[arg(long, default_value_t = 8)]
    max_sessions: usize,
    #[arg(long)]
    cors_origin: Option<String>,
}

fn parse_vec3(s: &str) -> std::result::Result<Vec3, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    <[f64; 3]>::try_from(v).map_err(|v| format!("expected x,y,z, got {} values", v.len()))
}

fn parse_named(s: &str) -> std::result::Result<(String, PathBuf), String> {
    let (name, dir) = s.split_once('=').ok_or_else(|| format!("expected name=dir, got {s:?}"))?;
    Ok((name.to_string(), PathBuf::from(dir)))
}

/// Turns a JSON config object into `--key value` arguments.
fn config_args(path: &Path) -> Result<Vec<String>> {
    let value: serde_json::Value = io::read_json(path).map_err(|e| Error::Usage(format!("--config: {e}")))?;
    let obj =
        value.as_object().ok_or_else(|| Error::Usage(format!("{}: config must be a JSON object", path.display())))?;
    let mut out = Vec::new();
    for (k, v) in obj {
        let flag = format!("--{}", k.replace('_', "-"));
        let scalar = |v: &serde_json::Value| match v {
            serde_json::Value::String(s) => Ok(s.clone()),
            serde_json::Value::Number(n) => Ok(n.to_string()),
            other => Err(Error::Usage(format!("{}: unsupported value for {k}: {other}", path.display()))),
        };
        match v {
            serde_json::Value::Bool(true) => out.push(flag),
            serde_json::Value::Bool(false) | serde_json::Value::Null => {}
            serde_json::Value::Array(items) => {
                let parts = items.iter().map(scalar).collect::<Result<Vec<_>>>()?;
                out.push(format!("{flag}={}", parts.join(",")));
            }
            other => out.push(format!("{flag}={}", scalar(other)?)),
        }
    }
    Ok(out)
}

/// Splices config-file arguments in right after the subcommand, so explicit
/// flags that follow override them.
fn expand_config(mut argv: Vec<String>) -> Result<Vec<String>> {
    let mut config = None;
    let mut i = 1;
    while i < argv.len() {
        if argv[i] == "--config" && i + 1 < argv.len() {
            config = Some(PathBuf::from(argv.remove(i + 1)));
            argv.remove(i);
        } else if let Some(p) = argv[i].strip_prefix("--config=") {
            config = Some(PathBuf::from(p));
            argv.remove(i);
        } else {
            i += 1;
        }
    }
    let Some(path) = config else { return Ok(argv) };
    let extra = config_args(&path)?;
    let at = argv.iter().skip(1).position(|a| !a.starts_with('-')).map_or(argv.len(), |p| p + 2);
    argv.splice(at..at, extra);
    Ok(argv)
}

fn gen_ml(a: GenMl) -> Result<()> {
    let field = MarschnerLobb { f_m: a.f_m, alpha: a.alpha };
    let vol = sample_grid(&field, [a.dims; 3], Aabb::cube(a.lo, a.hi))?;
    io::write_raw(&a.out, &vol)?;
    let (lo, hi) = vol.value_range();
    println!("wrote {} ({}^3, values {lo:.4}..{hi:.4})", a.out.display(), a.dims);
    Ok(())
}

fn encode(a: Encode) -> Result<()> {
    let vol = io::read_raw_with_sidecar(&a.input)?;
    let layout = LayoutOptions { levels: a.levels, micro_dims: [a.micro; 3], coarsest_blocks_per_axis: a.coarsest };
    let raw = vol.raw_bytes() as u64;
    let mut report = Report { dataset: a.input.display().to_string(), ..Default::default() };
    let manifest = match a.backend {
        BackendArg::Mfa => {
            let mut cfg = EncodeConfig::new(a.error_bound, a.degree);
            cfg.mode = match a.search {
                SearchArg::Exhaustive => SearchMode::Exhaustive,
                SearchArg::Monotone => SearchMode::AssumeMonotone,
            };
            cfg.cross_level = !a.no_cross_level;
            let r = write_mfa_store(&a.out, &vol, layout, &cfg, &Rayon)?;
            for (addr, w) in &r.warnings {
                log::warn!("{addr}: {w:?}");
            }
            report.searched_blocks = Some(r.searched_blocks);
            report.total_blocks = Some(r.total_blocks);
            println!("searched {} of {} blocks ({} fits)", r.searched_blocks, r.total_blocks, r.fits);
            r.manifest
        }
        BackendArg::Fixed => write_fixed_store(&a.out, &vol, layout, a.ncp, a.degree, &Rayon)?,
        BackendArg::Ds => write_ds_store(&a.out, &vol, layout, !a.no_ghost, &Rayon)?,
    };
    let ratio = manifest.compression_ratio(raw);
    report.compression_ratio = Some(ratio);
    println!("{} blocks, {} bytes, compression ratio {ratio:.3}", manifest.entries.len(), manifest.total_bytes());
    if let Some(p) = &a.report {
        io::write_json(p, &report)?;
    }
    Ok(())
}

fn render_cmd(a: RenderCmd) -> Result<()> {
    let store = Store::open(&a.store)?;
    let tf = a.render.tf(store.manifest().value_range)?;
    let frame = render_store(&store, &a.view.pov()?, &a.render.table()?, &tf, &a.render.params()?, &Rayon)?;
    io::write_png(&a.out, &frame)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn replay_cmd(a: ReplayCmd) -> Result<()> {
    let store = Arc::new(Store::open(&a.store)?);
    let trajectory = io::read_trajectory(&a.trajectory)?;
    let cfg = RuntimeConfig {
        tf: a.render.tf(store.manifest().value_range)?,
        params: a.render.params()?,
        table: a.render.table()?,
        capacity: a.capacity,
        prefetch: a.prefetch,
    };
    if let Some(dir) = &a.frames {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
    }
    let mut rt = Runtime::new(store, cfg);
    let timings = replay(&mut rt, &trajectory, |step| match &a.frames {
        Some(dir) => io::write_png(&dir.join(format!("frame_{:05}.png", step.timing.frame)), &step.frame),
        None => Ok(()),
    })?;
    let report = Report {
        dataset: a.store.display().to_string(),
        timing: summarize(&timings),
        cache: Some(rt.cache().stats()),
        ..Default::default()
    };
    if let Some(p) = &a.csv {
        std::fs::write(p, timings_csv(&timings)).map_err(|e| Error::Io { path: p.clone(), source: e })?;
    }
    if let Some(p) = &a.json {
        std::fs::write(p, report.to_json()).map_err(|e| Error::Io { path: p.clone(), source: e })?;
    }
    print!("{}", report.to_table());
    Ok(())
}

fn compare_cmd(a: CompareCmd) -> Result<()> {
    let stores = a.stores.iter().map(|(n, d)| Ok((n.as_str(), Store::open(d)?))).collect::<Result<Vec<_>>>()?;
    let refs: Vec<(&str, &Store)> = stores.iter().map(|(n, s)| (*n, s)).collect();
    let tf = a.render.tf(stores[0].1.manifest().value_range)?;
    let field = MarschnerLobb { f_m: a.f_m, alpha: a.alpha };
    let rows = compare_backends(
        &refs,
        &field,
        &a.view.pov()?,
        &a.render.table()?,
        &tf,
        &a.render.params()?,
        &a.sample_distances,
        &Rayon,
    )?;
    let report = Report { dataset: "marschner-lobb".into(), quality: rows, ..Default::default() };
    if let Some(p) = &a.csv {
        std::fs::write(p, quality_csv(&report.quality)).map_err(|e| Error::Io { path: p.clone(), source: e })?;
    }
    if let Some(p) = &a.json {
        std::fs::write(p, report.to_json()).map_err(|e| Error::Io { path: p.clone(), source: e })?;
    }
    print!("{}", report.to_table());
    Ok(())
}

fn serve(a: Serve) -> Result<()> {
    if !a.store.is_dir() {
        return Err(Error::Usage(format!("store root {} is not a directory", a.store.display())));
    }
    let cfg = ServiceConfig { root: a.store, max_sessions: a.max_sessions, cors_origin: a.cors_origin };
    let rt = tokio::runtime::Runtime::new().map_err(|e| Error::Usage(format!("tokio runtime: {e}")))?;
    rt.block_on(async {
        let listener =
            tokio::net::TcpListener::bind(a.addr).await.map_err(|e| Error::Usage(format!("bind {}: {e}", a.addr)))?;
        log::info!("listening on {}", a.addr);
        println!("listening on http://{}", listener.local_addr().map_err(|e| Error::Usage(e.to_string()))?);
        service::serve(listener, cfg).await.map_err(|e| Error::Usage(format!("server: {e}")))
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenMl(a) => gen_ml(a),
        Cmd::Encode(a) => encode(a),
        Cmd::Render(a) => render_cmd(a),
        Cmd::Replay(a) => replay_cmd(a),
        Cmd::Compare(a) => compare_cmd(a),
        Cmd::Serve(a) => serve(a),
    }
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let argv = match expand_config(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => return fail(&e),
    };
    let cli = Cli::parse_from(argv);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
