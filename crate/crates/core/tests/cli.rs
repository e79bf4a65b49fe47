mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::*;
use funit::model::Generator;
use funit::objective::{Checkpoint, ImageSource};
use funit::{synthetic, ImageTensor};
use tempfile::TempDir;

fn funit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_funit"))
        .args(args)
        .env_remove("FUNIT_DATA_ROOT")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: Output) -> String {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        stdout(&o),
        String::from_utf8_lossy(&o.stderr)
    );
    stdout(&o)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a two-class 16 px shape dataset as PNG files plus `manifest.tsv`.
fn shapes_on_disk(dir: &Path) -> PathBuf {
    let (manifest, source) = synthetic::shapes_dataset(&synthetic::two_classes(), 6, 16, 3).unwrap();
    for r in manifest.records() {
        source.load(r).unwrap().save_png(&dir.join(&r.path)).unwrap();
    }
    let path = dir.join("manifest.tsv");
    manifest.save(&path).unwrap();
    path
}

/// Trains a tiny model for two iterations and returns its checkpoint path.
fn trained(dir: &Path, manifest: &Path) -> PathBuf {
    let out = dir.join("run");
    ok(funit(&[
        "train",
        "--manifest",
        s(manifest),
        "--out-dir",
        s(&out),
        "--image-size",
        "16",
        "--base-channels",
        "4",
        "--iterations",
        "2",
        "--batch-size",
        "2",
        "--k",
        "2",
        "--seed",
        "5",
    ]));
    out.join("latest.ckpt")
}

#[test]
fn missing_manifest_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let o = funit(&[
        "curate",
        "--manifest",
        s(&dir.path().join("nope.tsv")),
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("manifest not found"));
    assert_eq!(funit(&["train", "--bogus"]).status.code(), Some(2));
    assert_eq!(funit(&[]).status.code(), Some(2));
}

#[test]
fn curate_splits_and_balances() {
    let dir = TempDir::new().unwrap();
    let manifest = dir.path().join("all.tsv");
    manifest_with_counts(&DOMAIN_COUNTS, 1).save(&manifest).unwrap();
    let out = dir.path().join("split");
    let text = ok(funit(&[
        "curate",
        "--manifest",
        s(&manifest),
        "--out-dir",
        s(&out),
        "--test-classes",
        "night",
    ]));
    assert!(text.contains("train: 25627 records in 3 classes"), "{text}");
    assert!(text.contains("test: 6705 records in 1 classes"), "{text}");
    assert!(out.join("train.tsv").exists() && out.join("test.tsv").exists());
    assert!(out.join("run_config.toml").exists());

    let balanced = dir.path().join("balanced");
    let text = ok(funit(&[
        "curate",
        "--manifest",
        s(&manifest),
        "--out-dir",
        s(&balanced),
        "--test-classes",
        "night",
        "--balance",
        "2226",
    ]));
    assert!(text.contains("train: 6678 records in 3 classes"), "{text}");
}

#[test]
fn expand_respects_the_threshold() {
    let dir = TempDir::new().unwrap();
    let manifest = shapes_on_disk(dir.path());
    let first = funit::dataset::DatasetManifest::load(&manifest).unwrap().records()[0]
        .path
        .clone();
    let fixture = dir.path().join("dets.tsv");
    std::fs::write(
        &fixture,
        format!("# boxes\n{first}\tcar\t0.9\t0\t0\t16\t16\n{first}\tbus\t0.4\t0\t0\t16\t16\n"),
    )
    .unwrap();
    let run = |threshold: &str, out: &str| {
        ok(funit(&[
            "expand",
            "--manifest",
            s(&manifest),
            "--out",
            s(&dir.path().join(out)),
            "--detections",
            s(&fixture),
            "--threshold",
            threshold,
        ]))
    };
    let text = run("0.5", "half.tsv");
    assert!(
        text.contains("expanded: 1 records, 1 object crops, 1 classes"),
        "{text}"
    );
    let text = run("1.0", "none.tsv");
    assert!(text.contains("0 object crops"), "{text}");
    let text = run("0.3", "low.tsv");
    assert!(text.contains("2 object crops"), "{text}");
    let o = funit(&[
        "expand",
        "--manifest",
        s(&manifest),
        "--out",
        s(&dir.path().join("x.tsv")),
        "--threshold",
        "1.5",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_echoes_hyperparameters_and_resumes() {
    let dir = TempDir::new().unwrap();
    let manifest = shapes_on_disk(dir.path());
    let out = dir.path().join("run");
    let text = ok(funit(&[
        "train",
        "--manifest",
        s(&manifest),
        "--out-dir",
        s(&out),
        "--image-size",
        "16",
        "--base-channels",
        "4",
        "--iterations",
        "2",
        "--batch-size",
        "2",
    ]));
    assert!(
        text.contains("lr=0.0001 lambda_r=0.1 lambda_f=1 batch_size=2 k=1"),
        "{text}"
    );
    assert_eq!(
        std::fs::read_to_string(out.join("train_log.jsonl"))
            .unwrap()
            .lines()
            .count(),
        2
    );
    assert!(out.join("iter_00000002.ckpt").exists());
    let text = ok(funit(&[
        "train",
        "--manifest",
        s(&manifest),
        "--out-dir",
        s(&out),
        "--resume",
        s(&out.join("latest.ckpt")),
        "--iterations",
        "3",
    ]));
    assert!(text.contains("finished at iteration 3"), "{text}");
    assert_eq!(Checkpoint::load(&out.join("latest.ckpt")).unwrap().iteration, 3);
}

#[test]
fn flags_override_the_config_file() {
    let dir = TempDir::new().unwrap();
    let manifest = shapes_on_disk(dir.path());
    let config = dir.path().join("defaults.toml");
    std::fs::write(
        &config,
        "lr = 0.0005\niterations = 1\nbatch_size = 2\nimage_size = 16\nbase_channels = 4\n",
    )
    .unwrap();
    let base = ["--config", s(&config), "train", "--manifest", s(&manifest)];
    let from_file = ok(funit(&[&base[..], &["--out-dir", s(&dir.path().join("a"))]].concat()));
    assert!(from_file.contains("lr=0.0005"), "{from_file}");
    let flagged = ok(funit(
        &[&base[..], &["--out-dir", s(&dir.path().join("b")), "--lr", "0.002"]].concat(),
    ));
    assert!(flagged.contains("lr=0.002"), "{flagged}");
}

#[test]
fn finetune_uses_a_tenth_of_the_learning_rate() {
    let dir = TempDir::new().unwrap();
    let manifest = shapes_on_disk(dir.path());
    let ckpt = trained(dir.path(), &manifest);
    let out = dir.path().join("ft");
    let text = ok(funit(&[
        "finetune",
        "--checkpoint",
        s(&ckpt),
        "--manifest",
        s(&manifest),
        "--out-dir",
        s(&out),
        "--iterations",
        "1",
    ]));
    assert!(text.contains("lr=0.00001 iterations=1 starting_iteration=2"), "{text}");
    assert!(text.contains("finished at iteration 3"), "{text}");
}

#[test]
fn translate_matches_the_library_and_merges_without_boxes_are_plain() {
    let dir = TempDir::new().unwrap();
    let manifest = shapes_on_disk(dir.path());
    let ckpt_path = trained(dir.path(), &manifest);
    let m = funit::dataset::DatasetManifest::load(&manifest).unwrap();
    let content = dir.path().join(&m.records()[0].path);
    let styles: Vec<PathBuf> = m.records()[6..8].iter().map(|r| dir.path().join(&r.path)).collect();
    let translate = |variant: &str, out: &str, extra: &[&str]| {
        let out_dir = dir.path().join(out);
        ok(funit(
            &[
                &[
                    "translate",
                    "--checkpoint",
                    s(&ckpt_path),
                    "--content",
                    s(&content),
                    "--style",
                    s(&styles[0]),
                    s(&styles[1]),
                ][..],
                &["--out-dir", s(&out_dir), "--variant", variant],
                extra,
            ]
            .concat(),
        ));
        let stem = content.file_stem().unwrap().to_str().unwrap();
        std::fs::read(out_dir.join(format!("{stem}.png"))).unwrap()
    };
    let plain = translate("none", "plain", &[]);

    let ckpt = Checkpoint::load(&ckpt_path).unwrap();
    let mut g = Generator::new(ckpt.generator_config.clone(), 0).unwrap();
    g.load_params(ckpt.generator).unwrap();
    let ys: Vec<ImageTensor> = styles
        .iter()
        .map(|p| ImageTensor::load_square(p, 16).unwrap())
        .collect();
    let expected = g
        .translate(&ImageTensor::load_square(&content, 16).unwrap(), &ys)
        .unwrap();
    let written = image::load_from_memory(&plain).unwrap().to_rgb8();
    assert_eq!(written, expected.to_rgb8());

    let empty = dir.path().join("empty.tsv");
    std::fs::write(&empty, "# no boxes\n").unwrap();
    assert_eq!(translate("paste", "paste", &["--detections", s(&empty)]), plain);
    assert_eq!(translate("latent", "latent", &["--detections", s(&empty)]), plain);

    let boxed = dir.path().join("boxed.tsv");
    std::fs::write(&boxed, format!("{}\tcar\t0.9\t2\t2\t9\t9\n", content.display())).unwrap();
    assert_ne!(translate("paste", "boxed", &["--detections", s(&boxed)]), plain);
}

#[test]
fn evaluate_constant_baseline_for_several_shot_counts() {
    let dir = TempDir::new().unwrap();
    let manifest = shapes_on_disk(dir.path());
    let run = |out: &str| {
        let out_dir = dir.path().join(out);
        ok(funit(&[
            "evaluate",
            "--constant-baseline",
            "--content-manifest",
            s(&manifest),
            "--style-manifest",
            s(&manifest),
            "--target-class",
            "blue squares",
            "--out-dir",
            s(&out_dir),
            "--k",
            "2",
            "5",
            "--n-content",
            "3",
            "--n-pairs",
            "2",
            "--image-size",
            "16",
        ]));
        out_dir
    };
    let a = run("a");
    for k in [2, 5] {
        let report = funit::evaluation::read_report(&a.join(format!("report_k{k}.json"))).unwrap();
        assert_eq!(report.k_style, k);
        assert!(report.rows.iter().all(|r| r.lpips == 0.0 && r.pairs == 6));
        let table = std::fs::read_to_string(a.join(format!("report_k{k}.txt"))).unwrap();
        assert!(table.lines().last().unwrap().contains("0.000"));
    }
    let b = run("b");
    for name in ["report_k2.json", "report_k2.txt", "report_k5.json"] {
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
    let o = funit(&[
        "evaluate",
        "--constant-baseline",
        "--content-manifest",
        s(&manifest),
        "--style-manifest",
        s(&manifest),
        "--target-class",
        "purple",
        "--out-dir",
        s(&dir.path().join("c")),
    ]);
    assert_eq!(o.status.code(), Some(2));
}
