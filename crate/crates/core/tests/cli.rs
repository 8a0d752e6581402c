use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use dense_mttkrp::perfmodel::{flops, PerfReport};
use dense_mttkrp::tensor::io as dten;
use dense_mttkrp::{KruskalTensor, MachineSpec, Shape};
use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_dense-mttkrp");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).env_remove("MTTKRP_WORKERS").args(args).output().unwrap()
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn gen(dir: &Path, name: &str, extra: &[&str]) -> String {
    let path = dir.join(name).to_string_lossy().into_owned();
    let mut args = vec!["gen", "--out", &path];
    args.extend_from_slice(extra);
    json(&run(&args));
    path
}

#[test]
fn gen_is_deterministic_and_writes_dten() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen(dir.path(), "a.dten", &["--shape", "2,2", "--seed", "17"]);
    let b = gen(dir.path(), "b.dten", &["--shape", "2,2", "--seed", "17"]);
    let c = gen(dir.path(), "c.dten", &["--shape", "2,2", "--seed", "18"]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
    let t = dten::load(&a).unwrap();
    assert_eq!(t.shape().dims(), &[2, 2]);
    assert!(t.data().iter().all(|&x| (0.0..1.0).contains(&x)));
}

#[test]
fn full_size_presets_need_a_flag() {
    let tearing = Shape::new(vec![401, 201, 12, 501]).unwrap();
    assert_eq!(dten::payload_len(&tearing), 3_876_585_696);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.dten");
    let res = run(&["gen", "--preset", "tearing", "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(!out.exists());

    let small = gen(dir.path(), "s.dten", &["--preset", "island-small"]);
    assert_eq!(dten::load(small).unwrap().shape().dims(), &[17, 17, 17, 12, 9]);
}

#[test]
fn noiseless_kruskal_tensor_is_recovered() {
    let dir = tempfile::tempdir().unwrap();
    let truth = dir.path().join("truth.kten");
    let y = gen(
        dir.path(),
        "k.dten",
        &["--shape", "6,5,4", "--kind", "kruskal-plus-noise", "--rank", "1", "--snr", "inf", "--seed", "2", "--truth", truth.to_str().unwrap()],
    );
    let m = KruskalTensor::load_text(&truth).unwrap();
    assert_eq!(m.full().unwrap(), dten::load(&y).unwrap());
    let trace = json(&run(&["cpals", "--input", &y, "--rank", "1", "--variant", "gemm"]));
    assert!(trace["final_fit"].as_f64().unwrap() >= 1.0 - 1e-10);

    let noisy = gen(dir.path(), "n.dten", &["--shape", "6,5,4", "--kind", "kruskal-plus-noise", "--rank", "1", "--snr", "20", "--seed", "2"]);
    let noisy = dten::load(noisy).unwrap();
    let clean = m.full().unwrap();
    let noise: f64 = noisy.data().iter().zip(clean.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    assert!((noise / clean.norm() - 0.1).abs() < 1e-12);
}

#[test]
fn mttkrp_report_fields() {
    let dir = tempfile::tempdir().unwrap();
    let y = gen(dir.path(), "y.dten", &["--shape", "6,5,4,3"]);
    let r = json(&run(&["mttkrp", "--input", &y, "--variant", "tile", "--mode", "2", "--rank", "7", "--verify", "--reps", "2"]));
    assert!(r["oracle_max_rel_err"].as_f64().unwrap() <= 1e-12);
    assert_eq!(r["verified"], Value::Bool(true));
    assert_eq!(r["model"]["f"].as_u64().unwrap(), 360 * 7 * 4);
    assert_eq!(r["times"].as_array().unwrap().len(), 2);
    // Tile width omitted: the 8480+ heuristic clamps to the smallest extent, 3.
    assert_eq!(r["heuristic"]["width"].as_u64(), Some(3));
    assert_eq!(r["tile_volume"].as_u64(), Some(27));
    assert_eq!(r["atomic_updates"].as_u64(), Some(5 * 3 * 7));

    let shape = Shape::new(vec![6, 5, 4, 3]).unwrap();
    let model = PerfReport::model(&shape, 7, 1, 27, &MachineSpec::intel_8480p());
    assert_eq!(r["model"]["t0"].as_f64(), Some(model.t0));
    assert_eq!(r["model"]["m_inf"].as_u64(), Some(model.m_inf as u64));
    let mean = r["time_mean"].as_f64().unwrap();
    let gflops = flops(&shape, 7) as f64 / mean / (1u64 << 30) as f64;
    assert_eq!(r["gflops"].as_f64(), Some(gflops));
}

#[test]
fn verify_rejects_corrupted_results() {
    let dir = tempfile::tempdir().unwrap();
    let y = gen(dir.path(), "y.dten", &["--shape", "5,4,3"]);
    for variant in ["reference", "full-krp", "gemm", "elem", "slice", "tile"] {
        let ok = run(&["mttkrp", "--input", &y, "--variant", variant, "--rank", "3", "--verify"]);
        assert!(ok.status.success(), "{variant}");
        let bad = run(&["mttkrp", "--input", &y, "--variant", variant, "--rank", "3", "--verify", "--corrupt"]);
        assert_eq!(bad.status.code(), Some(1), "{variant}");
        let report: Value = serde_json::from_slice(&bad.stdout).unwrap();
        assert_eq!(report["verified"], Value::Bool(false));
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let y = gen(dir.path(), "y.dten", &["--shape", "5,4,3"]);
    assert_eq!(run(&["mttkrp", "--input", &y, "--mode", "4"]).status.code(), Some(2));
    assert_eq!(run(&["mttkrp", "--input", &y, "--unroll", "3"]).status.code(), Some(2));
    assert_eq!(run(&["mttkrp", "--input", &y, "--variant", "blocked"]).status.code(), Some(2));
    assert_eq!(run(&["mttkrp", "--input", "/nonexistent.dten"]).status.code(), Some(4));
    let junk = dir.path().join("junk.dten");
    std::fs::write(&junk, b"not a tensor").unwrap();
    assert_eq!(run(&["mttkrp", "--input", junk.to_str().unwrap()]).status.code(), Some(4));

    // The explicit Khatri-Rao matrix would be 1e6 × 300 doubles, over the 2 GiB cap.
    let wide = gen(dir.path(), "w.dten", &["--shape", "1,1000,1000"]);
    let out = run(&["mttkrp", "--input", &wide, "--variant", "full-krp", "--rank", "300", "--reps", "1", "--warmup", "0"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn worker_count_from_environment_and_flag() {
    let dir = tempfile::tempdir().unwrap();
    let y = gen(dir.path(), "y.dten", &["--shape", "12,12,12,12"]);
    let base = ["mttkrp", "--input", &y, "--variant", "elem", "--rank", "2", "--reps", "1", "--warmup", "0"];
    let with_env = Command::new(BIN).env("MTTKRP_WORKERS", "3").args(base).output().unwrap();
    assert_eq!(json(&with_env)["workers"].as_u64(), Some(3));
    let overridden = Command::new(BIN).env("MTTKRP_WORKERS", "3").args(base).args(["--workers", "2"]).output().unwrap();
    assert_eq!(json(&overridden)["workers"].as_u64(), Some(2));
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<BTreeMap<String, String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| header.iter().cloned().zip(rec.unwrap().iter().map(String::from)).collect())
        .collect();
    (header, rows)
}

#[test]
fn sweep_rows_and_aggregates() {
    let dir = tempfile::tempdir().unwrap();
    let y = gen(dir.path(), "y.dten", &["--shape", "12,12,12,12"]);
    let out = dir.path().join("sweep.csv");
    let summary = json(&run(&[
        "sweep", "--input", &y, "--variants", "tile,slice", "--ranks", "3,5", "--tile-widths", "2,4,6",
        "--reps", "2", "--warmup", "0", "--workers", "1", "--out", out.to_str().unwrap(),
    ]));
    let (header, rows) = read_csv(&out);
    assert_eq!(
        header,
        ["variant", "mode", "rank", "tile_width", "N_T", "time_s", "gflops", "mops0", "mopsInf", "T0", "T0LM", "TInf", "atomic_updates"]
    );
    // tile: 2 ranks × 3 widths × 4 modes × 2 reps; slice ignores widths.
    assert_eq!(rows.len(), 2 * 3 * 4 * 2 + 2 * 4 * 2);
    assert_eq!(summary["rows"].as_u64(), Some(rows.len() as u64));

    let shape = Shape::new(vec![12, 12, 12, 12]).unwrap();
    let cpu = MachineSpec::intel_8480p();
    for row in &rows {
        let mode: usize = row["mode"].parse().unwrap();
        let rank: usize = row["rank"].parse().unwrap();
        let n_t = if row["variant"] == "tile" { row["N_T"].parse().unwrap() } else { shape.slice_volume(mode - 1) };
        if row["variant"] == "tile" {
            let w: usize = row["tile_width"].parse().unwrap();
            assert_eq!(n_t, w * w * w);
        } else {
            assert!(row["tile_width"].is_empty());
        }
        let model = PerfReport::model(&shape, rank, mode - 1, n_t, &cpu);
        assert_eq!(row["T0"].parse::<f64>().unwrap(), model.t0);
        assert_eq!(row["T0LM"].parse::<f64>().unwrap(), model.t0_lm);
        assert_eq!(row["TInf"].parse::<f64>().unwrap(), model.t_inf);
        let time: f64 = row["time_s"].parse().unwrap();
        assert_eq!(row["gflops"].parse::<f64>().unwrap(), model.f as f64 / time / (1u64 << 30) as f64);
        let tiles = 12 * (1728usize).div_ceil(n_t);
        let expected_atomics = if row["variant"] == "tile" { tiles * rank } else { 0 };
        assert_eq!(row["atomic_updates"].parse::<usize>().unwrap(), expected_atomics);
    }

    let (agg_header, agg) = read_csv(&dir.path().join("sweep-aggregate.csv"));
    assert_eq!(agg_header, ["variant", "rank", "tile_width", "gflops", "best"]);
    assert_eq!(agg.len(), 2 * 3 + 2);
    for a in &agg {
        // Mean over modes of the per-mode mean over repetitions, recomputed from raw rows.
        let mut per_mode: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for row in rows.iter().filter(|r| r["variant"] == a["variant"] && r["rank"] == a["rank"] && r["tile_width"] == a["tile_width"]) {
            per_mode.entry(row["mode"].clone()).or_default().push(row["gflops"].parse().unwrap());
        }
        assert_eq!(per_mode.len(), 4);
        let means: Vec<f64> = per_mode.values().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
        let expected = means.iter().sum::<f64>() / means.len() as f64;
        let got: f64 = a["gflops"].parse().unwrap();
        assert!((got - expected).abs() <= 1e-12 * expected);
    }
    for variant in ["tile", "slice"] {
        for rank in ["3", "5"] {
            let group: Vec<_> = agg.iter().filter(|a| a["variant"] == variant && a["rank"] == rank).collect();
            let best: Vec<_> = group.iter().filter(|a| a["best"] == "1").collect();
            assert_eq!(best.len(), 1);
            let top = group.iter().map(|a| a["gflops"].parse::<f64>().unwrap()).fold(f64::MIN, f64::max);
            assert_eq!(best[0]["gflops"].parse::<f64>().unwrap(), top);
        }
    }
}

#[test]
fn model_table_and_json() {
    let r = json(&run(&["model", "--shape", "10,20,30", "--ranks", "0,4", "--format", "json"]));
    let zero = &r["ranks"][0];
    assert_eq!(zero["matrix_free_bytes"].as_u64(), Some(8 * 6000));
    assert_eq!(zero["gemm_worst_bytes"].as_u64(), Some(8 * 6000));
    assert_eq!(r["ranks"][1]["matrix_free_bytes"].as_u64(), Some(8 * (6000 + 4 * 60)));

    let table = run(&["model", "--preset", "island", "--ranks", "2000", "--machine", "nvidia-h100"]);
    assert!(table.status.success());
    let text = String::from_utf8(table.stdout).unwrap();
    assert!(text.contains("GEMM worst 391.34 GiB at mode 5"), "{text}");
    assert!(text.contains("ratio 1.91%"), "{text}");

    let dir = tempfile::tempdir().unwrap();
    let y = gen(dir.path(), "y.dten", &["--shape", "3,4,5"]);
    let from_file = json(&run(&["model", "--input", &y, "--ranks", "2", "--format", "json"]));
    assert_eq!(from_file["dims"], serde_json::json!([3, 4, 5]));

    let spec = dir.path().join("m.json");
    std::fs::write(&spec, serde_json::to_string(&MachineSpec::nvidia_h100()).unwrap()).unwrap();
    let custom = json(&run(&["model", "--shape", "3,4,5", "--format", "json", "--machine", spec.to_str().unwrap()]));
    assert_eq!(custom["machine"], Value::String(MachineSpec::nvidia_h100().name));
}

#[test]
fn cpals_trace_and_model_files() {
    let dir = tempfile::tempdir().unwrap();
    let y = gen(dir.path(), "y.dten", &["--shape", "30,25,20", "--kind", "kruskal-plus-noise", "--rank", "1", "--snr", "inf"]);
    let trace = dir.path().join("trace.json");
    let model = dir.path().join("m.kten");
    let args = ["cpals", "--input", &y, "--rank", "1", "--seed", "4", "--trace", trace.to_str().unwrap(), "--model", model.to_str().unwrap()];
    assert!(run(&args).status.success());
    let first: Value = serde_json::from_str(&std::fs::read_to_string(&trace).unwrap()).unwrap();
    assert!(first["final_fit"].as_f64().unwrap() >= 1.0 - 1e-10);
    let m = KruskalTensor::load_text(&model).unwrap();
    assert_eq!(m.dims(), vec![30, 25, 20]);

    assert!(run(&args).status.success());
    let second: Value = serde_json::from_str(&std::fs::read_to_string(&trace).unwrap()).unwrap();
    assert_eq!(first["fits"], second["fits"]);
    assert_eq!(first["lambda"], second["lambda"]);
}

#[test]
fn cpals_timing_breakdown_adds_up() {
    let dir = tempfile::tempdir().unwrap();
    let y = gen(dir.path(), "y.dten", &["--shape", "40,40,40"]);
    let t = json(&run(&["cpals", "--input", &y, "--rank", "4", "--max-iters", "10", "--tol", "1e-12", "--workers", "1"]));
    let p = &t["timing"]["phases"];
    let measured: f64 = ["mttkrp", "solve", "normalize", "fit"].iter().map(|k| p[k].as_f64().unwrap()).sum();
    let total = p["total"].as_f64().unwrap();
    assert!((total - measured).abs() <= 0.02 * total, "phases {measured} vs total {total}");
    let split = t["timing"]["mttkrp"].as_f64().unwrap() + t["timing"]["other_operations"].as_f64().unwrap();
    assert!((split - total).abs() <= 1e-12 * total);
}
