use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dehaze_core::data::load_png;

const TINY: [&str; 8] = [
    "--set",
    "image_size=32",
    "--set",
    "gen_base_width=4",
    "--set",
    "gen_res_blocks=1",
    "--set",
    "disc_widths=4,4,4",
];

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cycle-dehaze"))
        .args(args)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn synth(dir: &Path, count: usize, size: usize, seed: u64) {
    ok(&[
        "synth",
        "--out",
        s(dir),
        "--count",
        &count.to_string(),
        "--size",
        &size.to_string(),
        "--seed",
        &seed.to_string(),
    ]);
}

#[test]
fn synth_count_zero_writes_manifests_only() {
    let t = tempfile::tempdir().unwrap();
    synth(t.path(), 0, 32, 0);
    let names: Vec<_> = files(t.path()).into_iter().map(|(p, _)| p).collect();
    assert_eq!(names, [PathBuf::from("manifest.tsv"), PathBuf::from("run_manifest.txt")]);
}

#[test]
fn synth_without_scattering_copies_clean() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    ok(&["synth", "--out", s(d), "--count", "3", "--size", "24", "--beta-min", "0", "--beta-max", "0"]);
    for i in 0..3 {
        let clean = fs::read(d.join(format!("clean/clean_{i:04}.png"))).unwrap();
        let hazy = fs::read(d.join(format!("hazy/hazy_{i:04}.png"))).unwrap();
        assert_eq!(clean, hazy);
    }
}

#[test]
fn synth_replays_byte_for_byte() {
    let t = tempfile::tempdir().unwrap();
    synth(&t.path().join("a"), 16, 32, 7);
    synth(&t.path().join("b"), 16, 32, 7);
    let strip = |v: Vec<(PathBuf, Vec<u8>)>| -> Vec<_> {
        v.into_iter().filter(|(p, _)| p != Path::new("run_manifest.txt")).collect()
    };
    let (a, b) = (files(&t.path().join("a")), files(&t.path().join("b")));
    assert_eq!(a.len(), 16 * 2 + 2);
    assert_eq!(strip(a), strip(b));
}

#[test]
fn augment_counts_and_replay() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    synth(&d.join("ds"), 2, 48, 3);
    let src = d.join("ds/clean");
    let aug = |name: &str, factor: &str, seed: &str| {
        let out = d.join(name);
        ok(&["augment", "--in", s(&src), "--out", s(&out), "--factor", factor, "--min-crop", "16", "--size", "32", "--seed", seed]);
        // The run manifest names the output directory, so it is left out.
        files(&out)
            .into_iter()
            .filter(|(p, _)| p != Path::new("run_manifest.txt"))
            .collect::<Vec<_>>()
    };
    let none = aug("zero", "0", "1");
    assert_eq!(none.len(), 1, "only crops.tsv");
    let a = aug("a", "5", "1");
    let b = aug("b", "5", "1");
    assert_eq!(a.len(), 2 * 5 + 1);
    assert_eq!(a, b);
    let crop = load_png(&d.join("a/clean_0000_0004.png")).unwrap();
    assert_eq!(crop.dims(), (32, 32, 3));
    let c = aug("c", "5", "2");
    assert_ne!(a, c);
}

#[test]
fn train_dehaze_eval_pipeline() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    synth(&d.join("ds"), 3, 64, 5);
    let (hazy, clean) = (d.join("ds/hazy"), d.join("ds/clean"));
    let cfg = d.join("train.cfg");
    fs::write(&cfg, "# small network\nepochs = 4\nseed = 2\n").unwrap();
    let run_dir = d.join("run");
    let mut args = vec!["train", "--hazy", s(&hazy), "--clean", s(&clean), "--config", s(&cfg), "--out", s(&run_dir), "--epochs", "1"];
    args.extend(TINY);
    ok(&args);

    // The flag wins over the file: one epoch of three steps.
    let curve = fs::read_to_string(run_dir.join("loss_curve.tsv")).unwrap();
    assert_eq!(curve.lines().count(), 1 + 3);
    assert!(curve.starts_with("step\td_x\td_y\tg_adv\tcycle\tperceptual\ttotal\n"));
    let manifest = fs::read_to_string(run_dir.join("run_manifest.txt")).unwrap();
    assert!(manifest.contains("epochs = 1\n") && manifest.contains("seed = 2\n"));

    let ckpt = run_dir.join("final.ckpt");
    for (mode, name) in [("on", "on"), ("off", "off"), ("on", "on2")] {
        ok(&["dehaze", "--ckpt", s(&ckpt), "--in", s(&hazy), "--out", s(&d.join(name)), "--pyramid", mode]);
    }
    for i in 0..3 {
        let f = format!("hazy_{i:04}.png");
        assert_eq!(load_png(&d.join("on").join(&f)).unwrap().dims(), (64, 64, 3));
        assert_eq!(load_png(&d.join("off").join(&f)).unwrap().dims(), (64, 64, 3));
        assert_eq!(fs::read(d.join("on").join(&f)).unwrap(), fs::read(d.join("on2").join(&f)).unwrap());
    }

    ok(&["eval", "--pred", s(&d.join("on")), "--gt", s(&clean), "--report", s(&d.join("r.tsv"))]);
    let report = fs::read_to_string(d.join("r.tsv")).unwrap();
    assert_eq!(report.lines().filter(|l| !l.starts_with('#')).count(), 1 + 3 + 1);
    assert!(d.join("r.tsv.manifest").exists());

    ok(&["eval", "--pred", s(&clean), "--gt", s(&clean), "--report", s(&d.join("same.tsv"))]);
    let same = fs::read_to_string(d.join("same.tsv")).unwrap();
    let mean = same.lines().last().unwrap();
    assert_eq!(mean, "mean\t99.000000\t1.000000");
}

#[test]
fn network_size_input_keeps_its_shape() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    synth(&d.join("ds"), 2, 32, 1);
    let (hazy, clean, out) = (d.join("ds/hazy"), d.join("ds/clean"), d.join("run"));
    let mut args = vec!["train", "--hazy", s(&hazy), "--clean", s(&clean), "--out", s(&out), "--epochs", "1"];
    args.extend(TINY);
    ok(&args);
    ok(&["dehaze", "--ckpt", s(&d.join("run/final.ckpt")), "--in", s(&d.join("ds/hazy")), "--out", s(&d.join("out"))]);
    assert_eq!(load_png(&d.join("out/hazy_0001.png")).unwrap().dims(), (32, 32, 3));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    synth(&d.join("ds"), 3, 32, 4);
    let base = |out: &Path, epochs: &str| -> Vec<String> {
        let mut v: Vec<String> = ["train", "--hazy", s(&d.join("ds/hazy")), "--clean", s(&d.join("ds/clean")), "--out", s(out), "--epochs", epochs, "--set", "checkpoint_interval=3"]
            .iter()
            .map(|a| a.to_string())
            .collect();
        v.extend(TINY.iter().map(|a| a.to_string()));
        v
    };
    let full = d.join("full");
    let args = base(&full, "2");
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(full.join("step_000003.ckpt").exists() && full.join("step_000006.ckpt").exists());

    let resumed = d.join("resumed");
    let mut args = base(&resumed, "2");
    let mid = full.join("step_000003.ckpt");
    args.extend(["--resume".to_string(), s(&mid).to_string()]);
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>());

    assert_eq!(fs::read(full.join("final.ckpt")).unwrap(), fs::read(resumed.join("final.ckpt")).unwrap());
    let tail = |p: &Path| fs::read_to_string(p).unwrap().lines().skip(4).map(String::from).collect::<Vec<_>>();
    let resumed_curve: Vec<String> = fs::read_to_string(resumed.join("loss_curve.tsv")).unwrap().lines().skip(1).map(String::from).collect();
    assert_eq!(tail(&full.join("loss_curve.tsv")), resumed_curve);
}

#[test]
fn exit_codes() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    synth(&d.join("ds"), 2, 32, 0);
    synth(&d.join("other"), 3, 32, 0);

    let code = |args: &[&str]| run(args).status.code();
    // Mismatched file sets are a contract error.
    assert_eq!(code(&["eval", "--pred", s(&d.join("ds/hazy")), "--gt", s(&d.join("other/clean")), "--report", s(&d.join("r.tsv"))]), Some(2));
    assert_eq!(code(&["synth"]), Some(2));
    assert_eq!(code(&["train", "--out", s(&d.join("x")), "--set", "no_such_key=1"]), Some(2));
    assert_eq!(code(&["dehaze", "--ckpt", s(&d.join("missing.ckpt")), "--in", s(&d.join("ds/hazy")), "--out", s(&d.join("y"))]), Some(3));
    fs::write(d.join("garbage.ckpt"), b"not a checkpoint").unwrap();
    assert_eq!(code(&["dehaze", "--ckpt", s(&d.join("garbage.ckpt")), "--in", s(&d.join("ds/hazy")), "--out", s(&d.join("y"))]), Some(3));

    // An absurd learning rate overflows the parameters within a few steps.
    let (hazy, clean, out) = (d.join("ds/hazy"), d.join("ds/clean"), d.join("nan"));
    let mut args = vec!["train", "--hazy", s(&hazy), "--clean", s(&clean), "--out", s(&out), "--epochs", "3", "--set", "lr=1e300"];
    args.extend(TINY);
    let out = run(&args);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}
