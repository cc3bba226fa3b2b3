use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ganfinder(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ganfinder")).args(args).env("RUST_LOG", "warn").output().expect("spawn ganfinder")
}

fn ok(args: &[&str]) -> String {
    let out = ganfinder(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn gen(dir: &Path, count: usize, seed: u64) {
    let (count, seed) = (count.to_string(), seed.to_string());
    ok(&[
        "gen-data",
        "--family",
        "rect",
        "--size",
        "16",
        "--count",
        &count,
        "--seed",
        &seed,
        "--out",
        dir.to_str().unwrap(),
    ]);
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn gen_data_is_deterministic_and_split() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    gen(&a, 40, 7);
    gen(&b, 40, 7);
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    let counts = &manifest["counts"];
    assert_eq!((&counts["train"], &counts["test"], &counts["validation"]), (&30.into(), &6.into(), &4.into()));
    assert_eq!(dir_bytes(&a).len(), 40 * 2 + 1);
}

#[test]
fn conflicting_density_flags_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let r = ganfinder(&["gen-data", "--family", "rect", "--count", "4", "--density-range", "0.1,0.2", "--out", out]);
    assert_eq!(r.status.code(), Some(1));
    let r = ganfinder(&["gen-data", "--family", "random", "--count", "4", "--density", "0.2", "--out", out]);
    assert_eq!(r.status.code(), Some(1));
    let r = ganfinder(&["gen-data", "--family", "rect", "--count", "4", "--density", "1.5", "--out", out]);
    assert_eq!(r.status.code(), Some(1));
    assert_eq!(ganfinder(&["eval", "--data", out]).status.code(), Some(1));
}

#[test]
fn oracle_eval_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data, 30, 3);
    for split in ["train", "test", "validation"] {
        let stdout = ok(&["eval", "--data", data.to_str().unwrap(), "--oracle", "--split", split]);
        assert!(stdout.contains("100.0"), "{stdout}");
        let report = data.join(format!("eval-oracle-{split}"));
        assert!(report.join("report.json").exists());
        assert!(report.join("report.csv").exists());
    }
}

#[test]
fn train_eval_infer_render() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    gen(&data, 20, 11);
    let (d, r) = (data.to_str().unwrap(), run.to_str().unwrap());
    let stdout = ok(&[
        "train",
        "--data",
        d,
        "--out",
        r,
        "--epochs",
        "1",
        "--batch-size",
        "4",
        "--g-features",
        "4",
        "--d-features",
        "4",
        "--augment",
    ]);
    assert!(stdout.contains("epoch 0"), "{stdout}");
    let ckpt = run.join("model.ckpt");
    assert!(ckpt.exists() && run.join("train.csv").exists());
    let c = ckpt.to_str().unwrap();

    ok(&["eval", "--data", d, "--checkpoint", c]);
    assert!(run.join("eval-test").join("report.json").exists());

    let out = tmp.path().join("out.png");
    let stdout = ok(&[
        "infer",
        "--checkpoint",
        c,
        "--input",
        data.join("000000_input.png").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(stdout.contains("success:"));
    assert!(out.exists() && tmp.path().join("out.generated.png").exists());

    let render = tmp.path().join("render");
    ok(&[
        "render",
        "--data",
        d,
        "--instance",
        "000000",
        "--checkpoint",
        c,
        "--scale",
        "3",
        "--out",
        render.to_str().unwrap(),
    ]);
    let img = image::open(render.join("000000_gt.png")).unwrap();
    assert_eq!((img.width(), img.height()), (48, 48));
    let strip = image::open(render.join("000000_panels.png")).unwrap();
    assert_eq!((strip.width(), strip.height()), (4 * 48 + 3 * 3, 48));
}

#[test]
fn infer_rejects_off_palette_input() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    gen(&data, 8, 5);
    ok(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "--max-steps",
        "1",
        "--g-features",
        "4",
        "--d-features",
        "4",
    ]);
    let bad = tmp.path().join("bad.png");
    let mut img = image::open(data.join("000000_input.png")).unwrap().to_luma8();
    img.put_pixel(2, 3, image::Luma([77]));
    img.save(&bad).unwrap();
    let r = ganfinder(&[
        "infer",
        "--checkpoint",
        run.join("model.ckpt").to_str().unwrap(),
        "--input",
        bad.to_str().unwrap(),
        "--out",
        tmp.path().join("o.png").to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(2));
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("(3, 2)") && err.contains("77"), "{err}");
}
