//! Aggregated results as JSON, CSV and a plain-text table.

use std::fmt::Write as _;

use serde::Serialize;

use crate::cache::CacheStats;
use crate::runtime::FrameTiming;

/// Means over a list of frames; every mean is `None` for an empty list.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Summary {
    pub frames: usize,
    pub mean_caching_ms: Option<f64>,
    pub mean_rendering_ms: Option<f64>,
    pub mean_latency_ms: Option<f64>,
    pub misses: u64,
    pub queries: u64,
    /// Total misses over total visibility queries.
    pub miss_rate: Option<f64>,
    pub prefetch_models_loaded: usize,
}

pub fn summarize(timings: &[FrameTiming]) -> Summary {
    let n = timings.len();
    let mean = |f: fn(&FrameTiming) -> f64| (n > 0).then(|| timings.iter().map(f).sum::<f64>() / n as f64);
    let misses: u64 = timings.iter().map(|t| t.misses).sum();
    let queries: u64 = timings.iter().map(|t| t.visible as u64).sum();
    Summary {
        frames: n,
        mean_caching_ms: mean(|t| t.caching_ms),
        mean_rendering_ms: mean(|t| t.rendering_ms),
        mean_latency_ms: mean(|t| t.input_latency_ms),
        misses,
        queries,
        miss_rate: (queries > 0).then(|| misses as f64 / queries as f64),
        prefetch_models_loaded: timings.iter().map(|t| t.prefetch_models_loaded).sum(),
    }
}

pub const TIMING_CSV_HEADER: &str =
    "frame,caching_ms,rendering_ms,input_latency_ms,visible,hits,misses,miss_rate,prefetch_models_loaded,bytes_loaded";

pub fn timing_csv_row(t: &FrameTiming) -> String {
    format!(
        "{},{:.6},{:.6},{:.6},{},{},{},{:.6},{},{}",
        t.frame,
        t.caching_ms,
        t.rendering_ms,
        t.input_latency_ms,
        t.visible,
        t.hits,
        t.misses,
        t.miss_rate,
        t.prefetch_models_loaded,
        t.bytes_loaded
    )
}

pub fn timings_csv(timings: &[FrameTiming]) -> String {
    let mut s = String::from(TIMING_CSV_HEADER);
    s.push('\n');
    for t in timings {
        s.push_str(&timing_csv_row(t));
        s.push('\n');
    }
    s
}

/// One backend rendered at one sample distance, compared with ground truth.
/// An infinite PSNR (identical frames) serializes as `null`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualityRow {
    pub backend: String,
    pub sample_distance: f64,
    pub bytes: u64,
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

pub fn quality_csv(rows: &[QualityRow]) -> String {
    let mut s = String::from("backend,sample_distance,bytes,mse,psnr,ssim\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{:.8},{:.4},{:.6}", r.backend, r.sample_distance, r.bytes, r.mse, r.psnr, r.ssim);
    }
    s
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Report {
    pub dataset: String,
    pub compression_ratio: Option<f64>,
    pub searched_blocks: Option<usize>,
    pub total_blocks: Option<usize>,
    pub timing: Summary,
    pub cache: Option<CacheStats>,
    pub quality: Vec<QualityRow>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let opt = |v: Option<f64>, prec: usize| v.map_or("-".to_string(), |x| format!("{x:.prec$}"));
        let mut s = String::new();
        let _ = writeln!(s, "dataset            {}", self.dataset);
        let _ = writeln!(s, "compression ratio  {}", opt(self.compression_ratio, 3));
        if let (Some(a), Some(b)) = (self.searched_blocks, self.total_blocks) {
            let _ = writeln!(s, "searched blocks    {a} / {b} ({} skipped)", b - a.min(b));
        }
        let t = &self.timing;
        let _ = writeln!(s, "frames             {}", t.frames);
        let _ = writeln!(s, "mean caching ms    {}", opt(t.mean_caching_ms, 3));
        let _ = writeln!(s, "mean rendering ms  {}", opt(t.mean_rendering_ms, 3));
        let _ = writeln!(s, "mean latency ms    {}", opt(t.mean_latency_ms, 3));
        let _ = writeln!(s, "miss rate          {}", opt(t.miss_rate, 4));
        if !self.quality.is_empty() {
            let _ = writeln!(
                s,
                "\n{:<12} {:>10} {:>10} {:>12} {:>9} {:>8}",
                "backend", "step", "bytes", "mse", "psnr", "ssim"
            );
            for r in &self.quality {
                let _ = writeln!(
                    s,
                    "{:<12} {:>10} {:>10} {:>12.3e} {:>9.3} {:>8.4}",
                    r.backend, r.sample_distance, r.bytes, r.mse, r.psnr, r.ssim
                );
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(frame: usize, c: f64, r: f64, visible: usize, misses: u64) -> FrameTiming {
        FrameTiming {
            frame,
            caching_ms: c,
            rendering_ms: r,
            input_latency_ms: c + r,
            visible,
            hits: visible as u64 - misses,
            misses,
            miss_rate: misses as f64 / visible as f64,
            prefetch_models_loaded: 1,
            bytes_loaded: 0,
        }
    }

    #[test]
    fn empty_summary_is_null() {
        let s = summarize(&[]);
        assert_eq!(s.frames, 0);
        assert_eq!(s.mean_latency_ms, None);
        let json = serde_json::to_value(&s).unwrap();
        assert!(json["miss_rate"].is_null());
    }

    #[test]
    fn single_row_passes_through() {
        let row = t(0, 2.0, 3.0, 8, 2);
        let s = summarize(&[row]);
        assert_eq!(s.mean_caching_ms, Some(2.0));
        assert_eq!(s.mean_latency_ms, Some(5.0));
        assert_eq!(s.miss_rate, Some(0.25));
    }

    #[test]
    fn means_are_arithmetic() {
        let rows = [t(0, 1.0, 4.0, 10, 10), t(1, 3.0, 2.0, 10, 0), t(2, 2.0, 6.0, 20, 5)];
        let s = summarize(&rows);
        assert_eq!(s.mean_caching_ms, Some(2.0));
        assert_eq!(s.mean_rendering_ms, Some(4.0));
        assert_eq!(s.mean_latency_ms, Some(6.0));
        assert_eq!(s.miss_rate, Some(15.0 / 40.0));
        assert_eq!(s.prefetch_models_loaded, 3);
        let csv = timings_csv(&rows);
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().nth(2).unwrap().starts_with("1,3.000000,2.000000,5.000000,10,10,0,"));
    }

    #[test]
    fn report_renders() {
        let r = Report {
            dataset: "ml".into(),
            compression_ratio: Some(5.5),
            searched_blocks: Some(9),
            total_blocks: Some(73),
            quality: vec![QualityRow {
                backend: "mfa".into(),
                sample_distance: 0.01,
                bytes: 10,
                mse: 0.0,
                psnr: f64::INFINITY,
                ssim: 1.0,
            }],
            ..Default::default()
        };
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert!(v["quality"][0]["psnr"].is_null());
        assert!(r.to_table().contains("9 / 73 (64 skipped)"));
        assert!(quality_csv(&r.quality).contains("mfa,0.01,10"));
    }
}
