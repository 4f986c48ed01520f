use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cubetop::io::{load_ctvol, save_ctvol};
use cubetop::Volume;
use serde_json::Value;
use tempfile::TempDir;

fn cubetop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cubetop")).args(args).env("CUBETOP_THREADS", "2").output().expect("binary runs")
}

fn ok_json(args: &[&str]) -> Value {
    let out = cubetop(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn code(args: &[&str]) -> i32 {
    cubetop(args).status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn volume(dir: &TempDir, name: &str, dims: [usize; 3], f: impl Fn(usize, usize, usize) -> f64) -> PathBuf {
    let path = dir.path().join(name);
    save_ctvol(&Volume::from_fn(dims, f).unwrap(), &path).unwrap();
    path
}

fn bumpy(x: usize, y: usize, z: usize) -> f64 {
    ((x * 7 + y * 3 + z * 5) % 11) as f64 / 10.0
}

#[test]
fn ph_then_dist_to_itself_is_zero() {
    let dir = TempDir::new().unwrap();
    let v = volume(&dir, "v.ctvol", [5, 4, 3], bumpy);
    let d = dir.path().join("d.json");
    assert!(cubetop(&["ph", s(&v), "-o", s(&d)]).status.success());

    let out = ok_json(&["dist", s(&d), s(&d)]);
    let dims = out["dims"].as_array().unwrap();
    assert_eq!(dims.len(), 3);
    for entry in dims {
        assert_eq!(entry["w2"].as_f64().unwrap(), 0.0);
    }
}

#[test]
fn output_is_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let v = volume(&dir, "v.ctvol", [6, 5, 4], bumpy);
    let first = cubetop(&["ph", s(&v)]).stdout;
    assert!(!first.is_empty());
    assert_eq!(cubetop(&["ph", s(&v)]).stdout, first);

    let mask = ["mask", "--dims", "8,8,4", "--patch", "2", "--ratio", "0.5", "--seed", "7"];
    assert_eq!(cubetop(&mask).stdout, cubetop(&mask).stdout);
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let a = volume(&dir, "a.ctvol", [4, 4, 4], bumpy);
    let b = volume(&dir, "b.ctvol", [4, 4, 3], bumpy);
    let junk = dir.path().join("junk.ctvol");
    std::fs::write(&junk, b"not a volume").unwrap();
    let missing = dir.path().join("missing.ctvol");

    assert_eq!(code(&["frobnicate"]), 64);
    assert_eq!(code(&["mask", "--dims", "4,4"]), 64);
    assert_eq!(code(&["ph", s(&missing)]), 2);
    assert_eq!(code(&["ph", s(&junk)]), 2);
    assert_eq!(code(&["topoloss", s(&a), s(&b)]), 3);
    assert_eq!(code(&["mask", "--dims", "5,4,4", "--patch", "2"]), 3);
    assert_eq!(code(&["--help"]), 0);
}

#[test]
fn mask_and_apply_mask() {
    let dir = TempDir::new().unwrap();
    let out = ok_json(&["mask", "--dims", "4,4,4", "--patch", "2", "--ratio", "0.5", "--seed", "3"]);
    let flags = out["masked"].as_array().unwrap();
    assert_eq!(flags.len(), 8);
    assert_eq!(flags.iter().filter(|f| f.as_u64() == Some(1)).count(), 4);

    let mask = dir.path().join("m.json");
    std::fs::write(&mask, serde_json::to_vec(&out).unwrap()).unwrap();
    let v = volume(&dir, "v.ctvol", [4, 4, 4], |_, _, _| 0.5);
    let masked = dir.path().join("masked.ctvol");
    assert!(cubetop(&["apply-mask", s(&v), s(&mask), "-o", s(&masked), "--fill", "-1"]).status.success());
    let m = load_ctvol(&masked).unwrap();
    assert_eq!(m.data().iter().filter(|&&x| x == -1.0).count(), 32);
}

#[test]
fn keypoints_of_a_full_crop() {
    let out = ok_json(&["keypoints", "--origin", "0", "--size", "5", "--parent", "5"]);
    let points = out["points"].as_array().unwrap();
    assert_eq!(points.len(), 9);
    assert_eq!(points[0], serde_json::json!([-1.0, -1.0, -1.0]));
    assert_eq!(points[7], serde_json::json!([1.0, 1.0, 1.0]));
    assert_eq!(points[8], serde_json::json!([0.0, 0.0, 0.0]));
}

#[test]
fn topoloss_writes_gradient() {
    let dir = TempDir::new().unwrap();
    let t = volume(&dir, "t.ctvol", [5, 4, 3], bumpy);
    let r = volume(&dir, "r.ctvol", [5, 4, 3], |x, y, z| bumpy(y % 4, x % 4, z));
    let g = dir.path().join("g.ctvol");
    let out = ok_json(&["topoloss", s(&t), s(&r), "--grad", s(&g)]);
    let value = out["value"].as_f64().unwrap();
    let per_dim: Vec<f64> = out["per_dim"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert!((value * value - per_dim.iter().map(|w| w * w).sum::<f64>()).abs() < 1e-9);
    assert_eq!(load_ctvol(&g).unwrap().dims(), [5, 4, 3]);

    let same = ok_json(&["topoloss", s(&t), s(&t)]);
    assert_eq!(same["value"].as_f64().unwrap(), 0.0);
}

#[test]
fn pretrain_loss_on_perfect_predictions() {
    let dir = TempDir::new().unwrap();
    let t = volume(&dir, "t.ctvol", [4, 4, 4], bumpy);
    let mask = dir.path().join("m.json");
    let kp = dir.path().join("kp.json");
    assert!(cubetop(&["mask", "--dims", "4", "--patch", "2", "-o", s(&mask)]).status.success());
    assert!(cubetop(&["keypoints", "--origin", "0", "--size", "4", "--parent", "8", "-o", s(&kp)]).status.success());

    let args = [
        "pretrain-loss",
        "--target",
        s(&t),
        "--recon-a",
        s(&t),
        "--recon-b",
        s(&t),
        "--mask",
        s(&mask),
        "--kp-gt",
        s(&kp),
        "--kp-a",
        s(&kp),
        "--kp-b",
        s(&kp),
    ];
    let raw = String::from_utf8(cubetop(&args).stdout).unwrap();
    let keys = [
        "mse_vit",
        "topo_vit",
        "spa_vit",
        "mse_unetrpp",
        "topo_unetrpp",
        "spa_unetrpp",
        "spa_consis",
        "rec_consis",
        "total",
    ];
    let positions: Vec<usize> = keys.iter().map(|k| raw.find(&format!("\"{k}\"")).unwrap()).collect();
    assert!(positions.windows(2).all(|w| w[0] < w[1]), "{raw}");
    let out: Value = serde_json::from_str(&raw).unwrap();
    assert_eq!(out["total"].as_f64().unwrap(), 0.0);

    let mut bad = args.to_vec();
    bad.extend(["--l1", "1.5"]);
    assert_eq!(code(&bad), 3);
}

#[test]
fn betti_of_a_hollow_shell() {
    let dir = TempDir::new().unwrap();
    let v = volume(
        &dir,
        "shell.ctvol",
        [5, 5, 5],
        |x, y, z| {
            if [x, y, z].iter().any(|&c| c == 0 || c == 4) {
                1.0
            } else {
                0.0
            }
        },
    );
    let out = ok_json(&["betti", s(&v), "--tau", "0.5"]);
    assert_eq!(out["betti"], serde_json::json!([1, 0, 1]));
    assert_eq!(out["euler"], 2);
    let below = ok_json(&["betti", s(&v), "--tau", "-1"]);
    assert_eq!(below["betti"], serde_json::json!([1, 0, 0]));
}

#[test]
fn selfcheck_and_small_bench() {
    let lines = cubetop(&["selfcheck", "--seed", "1"]);
    assert!(lines.status.success());
    let text = String::from_utf8(lines.stdout).unwrap();
    assert_eq!(text.lines().count(), 4);
    for line in text.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["passed"], true);
    }

    let bench = ok_json(&["bench", "--dims", "8", "--seed", "2"]);
    assert_eq!(bench["cells"], 15 * 15 * 15);
    assert_eq!(bench["within_target"], true);
}
