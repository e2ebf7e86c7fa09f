use std::path::Path;
use std::process::{Command, Output};

fn dwn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dwn"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn dwn")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = dwn(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fail(dir: &Path, args: &[&str]) -> (i32, String) {
    let out = dwn(dir, args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "multi-line error: {err}");
    (out.status.code().unwrap(), err)
}

const TRAIN: &[&str] = &[
    "train", "--data", "har", "--epochs", "2", "--num-luts", "60", "--pool-size", "16", "--bits-per-value", "4",
    "--batch-size", "30",
];

fn prepared() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["prepare-data", "--data", "har", "--synthetic", "10"]);
    dir
}

#[test]
fn pipeline_round_trip() {
    let dir = prepared();
    let d = dir.path();
    ok(d, &[TRAIN, &["--out", "m.dwnc", "--frozen", "m.dwnm"]].concat());

    let log = std::fs::read_to_string(d.join("m.dwnc.log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    let last: serde_json::Value = serde_json::from_str(log.lines().last().unwrap()).unwrap();
    let logged = last["eval"]["accuracy"].as_f64().unwrap();

    for model in ["m.dwnc", "m.dwnm"] {
        let out = ok(d, &["eval", "--model", model, "--data", "har"]);
        let acc: f64 = out
            .lines()
            .find_map(|l| l.strip_prefix("accuracy "))
            .unwrap()
            .parse()
            .unwrap();
        assert!((acc - logged).abs() < 1e-6, "{model}: {acc} vs {logged}");
    }
    assert!(d.join("m.dwnm.confusion.txt").exists());

    ok(d, &["export", "--checkpoint", "m.dwnc", "--out", "again.dwnm"]);
    assert_eq!(std::fs::read(d.join("m.dwnm")).unwrap(), std::fs::read(d.join("again.dwnm")).unwrap());

    let rtl = ok(d, &["emit-rtl", "--model", "m.dwnm", "--out", "m.sv", "--check", "200"]);
    assert!(rtl.contains("check 200/200 inputs agree"));
    assert!(std::fs::read_to_string(d.join("m.sv")).unwrap().starts_with("// luts=60"));

    let bench = ok(d, &["bench", "--model", "m.dwnm", "--repetitions", "2", "--random-windows", "16"]);
    let report: serde_json::Value = serde_json::from_str(bench.trim()).unwrap();
    assert_eq!(report["inferences"], 32);

    let table = ok(d, &["report", "--model", "m.dwnm"]);
    assert!(table.contains("HARMamba") && table.contains("120"));
}

#[test]
fn same_seed_runs_write_identical_models() {
    let dir = prepared();
    let d = dir.path();
    for name in ["a", "b"] {
        ok(
            d,
            &[TRAIN, &["--seed", "7", "--out", &format!("{name}.dwnc"), "--frozen", &format!("{name}.dwnm")]].concat(),
        );
    }
    for ext in ["dwnc", "dwnm"] {
        assert_eq!(
            std::fs::read(d.join(format!("a.{ext}"))).unwrap(),
            std::fs::read(d.join(format!("b.{ext}"))).unwrap()
        );
    }
    let cfg = std::fs::read_to_string(d.join("a.dwnc.config.txt")).unwrap();
    assert!(cfg.contains("seed=7") && cfg.contains("num_luts=60"));
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = prepared();
    let d = dir.path();
    std::fs::write(d.join("c.cfg"), "# small run\nepochs = 1\nnum_luts = 30\n").unwrap();
    ok(d, &[TRAIN, &["--config", "c.cfg", "--out", "c.dwnc"]].concat());
    let cfg = std::fs::read_to_string(d.join("c.dwnc.config.txt")).unwrap();
    // --epochs 2 and --num-luts 60 on the command line win over the file.
    assert!(cfg.contains("epochs=2") && cfg.contains("num_luts=60"));
}

#[test]
fn errors_are_single_categorized_lines() {
    let dir = prepared();
    let d = dir.path();
    let (code, err) = fail(d, &["train", "--data", "har", "--out", "x", "--no-such-flag", "1"]);
    assert_eq!(code, 2);
    assert!(err.starts_with("error[usage]:"), "{err}");

    std::fs::write(d.join("bad.cfg"), "epochs = 3\n\nbeta1 = nope\n").unwrap();
    let (_, err) = fail(d, &["train", "--data", "har", "--out", "x", "--config", "bad.cfg"]);
    assert!(err.starts_with("error[config]:") && err.contains("line 3"), "{err}");

    let (_, err) = fail(d, &["eval", "--model", "missing.dwnm", "--data", "har"]);
    assert!(err.starts_with("error[io]:"), "{err}");

    std::fs::write(d.join("junk.dwnm"), b"DWNMxxxx").unwrap();
    let (_, err) = fail(d, &["eval", "--model", "junk.dwnm", "--data", "har"]);
    assert!(err.starts_with("error[format]:"), "{err}");

    let (_, err) = fail(d, &["emit-rtl", "--model", "junk.dwnm", "--out", "x.sv"]);
    assert!(err.starts_with("error[format]:"), "{err}");

    let (_, err) = fail(d, &["prepare-data", "--data", "nowhere"]);
    assert!(err.starts_with("error[data]:"), "{err}");
}

#[test]
fn energy_estimates() {
    let d = tempfile::tempdir().unwrap();
    assert!(ok(d.path(), &["estimate-energy", "--flops", "44000000"]).starts_with("33.5 mJ"));
    assert!(ok(d.path(), &["estimate-energy", "--flops", "0"]).starts_with("0.0 mJ"));
    let v: serde_json::Value =
        serde_json::from_str(&ok(d.path(), &["estimate-energy", "--flops", "35000000", "--json"])).unwrap();
    assert!((v["energy_mj"].as_f64().unwrap() - 26.635).abs() < 1e-9);
}
