use std::path::Path;
use std::process::{Command, Output};

use mrvol::io::{read_png, write_raw};
use mrvol_core::{Aabb, ScalarVolume};

fn mrvol(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mrvol")).args(args).env_remove("MRVOL_STORE").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = mrvol(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn to_u8(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Constant 0.5 volume encoded as a two-level DS store.
fn constant_store(dir: &Path) -> std::path::PathBuf {
    let raw = dir.join("const.raw");
    let v = ScalarVolume::new([17; 3], Aabb::cube(-1.0, 1.0), vec![0.5; 17 * 17 * 17]).unwrap();
    write_raw(&raw, &v).unwrap();
    let store = dir.join("store");
    ok(&["encode", "--input", s(&raw), "--out", s(&store), "--backend", "ds", "--levels", "2", "--micro", "9"]);
    store
}

fn flat_tf(dir: &Path, alpha: f64) -> std::path::PathBuf {
    let p = dir.join("tf.json");
    let tf = serde_json::json!({
        "domain": [0.0, 1.0],
        "color": [{"x": 0.0, "rgb": [1.0, 0.5, 0.25]}],
        "opacity": [{"x": 0.0, "alpha": alpha}],
    });
    std::fs::write(&p, tf.to_string()).unwrap();
    p
}

#[test]
fn constant_volume_renders_closed_form_color() {
    let dir = tempfile::tempdir().unwrap();
    let store = constant_store(dir.path());
    let alpha = 0.2;
    let tf = flat_tf(dir.path(), alpha);
    let png = dir.path().join("f.png");
    ok(&[
        "render",
        "--store",
        s(&store),
        "--pos",
        "0,0,6",
        "--dir",
        "0,0,-1",
        "--width",
        "24",
        "--height",
        "24",
        "--sample-distance",
        "0.01",
        "--tf",
        s(&tf),
        "--out",
        s(&png),
    ]);
    let f = read_png(&png).unwrap();
    assert_eq!((f.width, f.height), (24, 24));
    // Flat field: ambient shading only. Front-to-back compositing of k equal
    // samples gives A = 1 - (1 - alpha)^k, stopping at the first A > 0.99.
    let mut a = 0.0f64;
    let mut k = 0;
    while a <= 0.99 {
        k += 1;
        a = 1.0 - (1.0 - alpha).powi(k);
    }
    let expect = [to_u8(0.1 * a), to_u8(0.05 * a), to_u8(0.025 * a), to_u8(a)];
    assert_eq!(f.pixel(12, 12), expect);
    assert_eq!(f.pixel(0, 0), [0, 0, 0, 0]);
}

#[test]
fn constant_volume_matches_single_block_store() {
    let dir = tempfile::tempdir().unwrap();
    let multi = constant_store(dir.path());
    let single = dir.path().join("single");
    let raw = dir.path().join("const.raw");
    ok(&["encode", "--input", s(&raw), "--out", s(&single), "--backend", "ds", "--levels", "1", "--micro", "17"]);
    let tf = flat_tf(dir.path(), 0.05);
    let mut frames = Vec::new();
    for (name, store) in [("m.png", &multi), ("s.png", &single)] {
        let png = dir.path().join(name);
        ok(&[
            "render",
            "--store",
            s(store),
            "--pos",
            "0,0.3,2.5",
            "--dir",
            "0.28,0,-0.96",
            "--width",
            "32",
            "--height",
            "32",
            "--sample-distance",
            "0.01",
            "--tf",
            s(&tf),
            "--out",
            s(&png),
        ]);
        frames.push(read_png(&png).unwrap());
    }
    assert_eq!(frames[0], frames[1]);
    assert!(frames[0].rgba.chunks_exact(4).any(|p| p[3] > 0));
}

#[test]
fn gen_encode_replay_compare_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("ml.raw");
    let out = ok(&["gen-ml", "--dims", "17", "--out", s(&raw)]);
    assert!(out.contains("17^3"));
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(raw.with_extension("json")).unwrap()).unwrap();
    assert_eq!(meta["dims"], serde_json::json!([17, 17, 17]));

    let mfa = dir.path().join("mfa");
    let report = dir.path().join("encode.json");
    let out = ok(&[
        "encode",
        "--input",
        s(&raw),
        "--out",
        s(&mfa),
        "--levels",
        "2",
        "--micro",
        "9",
        "--error-bound",
        "0.01",
        "--report",
        s(&report),
    ]);
    assert!(out.contains("searched") && out.contains("compression ratio"), "{out}");
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(rep["total_blocks"], 9);
    assert!(rep["compression_ratio"].as_f64().unwrap() > 0.0);

    let traj = dir.path().join("t.jsonl");
    std::fs::write(
        &traj,
        "{\"pos\":[0,0,3],\"dir\":[0,0,-1],\"up\":[0,1,0]}\n{\"pos\":[0.1,0,3],\"dir\":[0,0,-1],\"up\":[0,1,0],\"fov\":40}\n",
    )
    .unwrap();
    let csv = dir.path().join("t.csv");
    let json = dir.path().join("t.json");
    let frames = dir.path().join("frames");
    ok(&[
        "replay",
        "--store",
        s(&mfa),
        "--trajectory",
        s(&traj),
        "--width",
        "16",
        "--height",
        "16",
        "--sample-distance",
        "0.05",
        "--csv",
        s(&csv),
        "--json",
        s(&json),
        "--frames",
        s(&frames),
    ]);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with("frame,caching_ms,rendering_ms,input_latency_ms"));
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(summary["timing"]["frames"], 2);
    assert!(frames.join("frame_00001.png").exists());

    let ds = dir.path().join("ds");
    ok(&["encode", "--input", s(&raw), "--out", s(&ds), "--backend", "ds", "--levels", "2", "--micro", "9"]);
    let q = dir.path().join("q.csv");
    let mfa_arg = format!("mfa={}", s(&mfa));
    let ds_arg = format!("ds={}", s(&ds));
    ok(&[
        "compare",
        "--store",
        &mfa_arg,
        "--store",
        &ds_arg,
        "--pos",
        "0,0,3",
        "--width",
        "16",
        "--height",
        "16",
        "--sample-distances",
        "0.05,0.02",
        "--csv",
        s(&q),
    ]);
    let rows = std::fs::read_to_string(&q).unwrap();
    assert_eq!(rows.lines().count(), 5, "{rows}");
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let store = constant_store(dir.path());
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        format!("{{\"store\": {:?}, \"width\": 8, \"height\": 6, \"sample_distance\": 0.05}}", s(&store)),
    )
    .unwrap();
    let a = dir.path().join("a.png");
    ok(&["render", "--config", s(&cfg), "--out", s(&a)]);
    let f = read_png(&a).unwrap();
    assert_eq!((f.width, f.height), (8, 6));
    let b = dir.path().join("b.png");
    ok(&["--config", s(&cfg), "render", "--width", "10", "--out", s(&b)]);
    assert_eq!(read_png(&b).unwrap().width, 10);
}

#[test]
fn store_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let store = constant_store(dir.path());
    let png = dir.path().join("e.png");
    let out = Command::new(env!("CARGO_BIN_EXE_mrvol"))
        .args(["render", "--width", "4", "--height", "4", "--sample-distance", "0.1", "--out", s(&png)])
        .env("MRVOL_STORE", &store)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(png.exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(mrvol(&["render", "--bogus"]).status.code(), Some(2));
    assert_eq!(mrvol(&["render", "--store", "/nonexistent", "--out", "x.png"]).status.code(), Some(3));
    let store = constant_store(dir.path());
    let bad_tf = mrvol(&["render", "--store", s(&store), "--tf", "no-such-preset", "--out", "x.png"]);
    assert_eq!(bad_tf.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad_tf.stderr).contains("ml-shells"));
    let traj = dir.path().join("t.jsonl");
    std::fs::write(&traj, "{\"pos\":[0,0,1.2],\"dir\":[0,0,-1],\"up\":[0,1,0]}\n").unwrap();
    let cap = mrvol(&[
        "replay",
        "--store",
        s(&store),
        "--trajectory",
        s(&traj),
        "--cache-capacity",
        "1",
        "--lod-thresholds",
        "10",
        "--width",
        "4",
        "--height",
        "4",
    ]);
    assert_eq!(cap.status.code(), Some(4), "{}", String::from_utf8_lossy(&cap.stderr));
    std::fs::write(&traj, "{\"pos\":[0,0,3]}\n").unwrap();
    let bad = mrvol(&["replay", "--store", s(&store), "--trajectory", s(&traj)]);
    assert_eq!(bad.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("line 1"));
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "[1]").unwrap();
    assert_eq!(mrvol(&["render", "--config", s(&cfg)]).status.code(), Some(2));
}
