//! End-to-end tests of the cprc binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cprc_core::codec::write_pgm;
use cprc_core::fixtures::synthetic_image;
use cprc_core::models::{save_model, Model, ModelKind};
use cprc_core::rng::Xorshift64;

fn cprc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cprc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write_fixture(dir: &Path, name: &str, w: usize, h: usize, seed: u64) -> PathBuf {
    let path = dir.join(name);
    write_pgm(&synthetic_image(w, h, seed), &path).unwrap();
    path
}

fn write_models(dir: &Path) -> (PathBuf, PathBuf) {
    let mut rng = Xorshift64::new(99);
    let com = Model::comcnn(1, &mut rng).unwrap();
    let rec = Model::reccnn(1, &mut rng).unwrap();
    let com_path = dir.join("comcnn.bin");
    let rec_path = dir.join("reccnn.bin");
    save_model(&com, &com_path).unwrap();
    save_model(&rec, &rec_path).unwrap();
    (com_path, rec_path)
}

#[test]
fn train_smoke_writes_all_outputs_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    fs::create_dir(&data).unwrap();
    write_fixture(&data, "a.pgm", 60, 60, 1);
    write_fixture(&data, "b.pgm", 60, 60, 2);
    let config = dir.path().join("train.cfg");
    fs::write(
        &config,
        "seed = 5\nouter_iterations = 1\nepochs_per_inner_loop = 2\nbatch_size = 4\nqf = 30\n",
    )
    .unwrap();

    let run = |out_name: &str| {
        let out_dir = dir.path().join(out_name);
        let out = cprc(&[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--quiet",
        ]);
        assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
        out_dir
    };
    let out1 = run("out1");
    for f in ["comcnn.bin", "reccnn.bin", "train_report.csv", "summary.csv"] {
        assert!(out1.join(f).exists(), "{f} missing");
    }
    let summary = fs::read_to_string(out1.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2, "header plus one row: {summary}");
    let report = fs::read_to_string(out1.join("train_report.csv")).unwrap();
    assert!(report.starts_with("epoch,network,lr,mean_loss"));

    // same seed, byte-identical artifacts
    let out2 = run("out2");
    for f in ["comcnn.bin", "reccnn.bin", "train_report.csv", "summary.csv"] {
        assert_eq!(
            fs::read(out1.join(f)).unwrap(),
            fs::read(out2.join(f)).unwrap(),
            "{f} differs between identical runs"
        );
    }
}

#[test]
fn train_missing_data_dir_exits_1_naming_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = cprc(&[
        "train",
        "--data",
        dir.path().join("nope").to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("nope"), "stderr: {}", stderr(&out));
}

#[test]
fn compress_decompress_round_trip_and_rate_ordering() {
    let dir = tempfile::tempdir().unwrap();
    let (com, rec) = write_models(dir.path());
    let img = write_fixture(dir.path(), "x.pgm", 64, 64, 7);

    let compress = |qf: &str, out_name: &str| -> (f64, PathBuf) {
        let out_path = dir.path().join(out_name);
        let out = cprc(&[
            "compress",
            "--in",
            img.to_str().unwrap(),
            "--comcnn",
            com.to_str().unwrap(),
            "--qf",
            qf,
            "--out",
            out_path.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
        (stdout(&out).trim().parse().expect("bpp on stdout"), out_path)
    };
    let (bpp5, _) = compress("5", "x5.cprc");
    let (bpp50, stream50) = compress("50", "x50.cprc");
    assert!(bpp5 < bpp50, "bpp {bpp5} !< {bpp50}");

    // same invocation, byte-identical stream
    let (_, again) = compress("50", "x50b.cprc");
    assert_eq!(fs::read(&stream50).unwrap(), fs::read(&again).unwrap());

    let restored = dir.path().join("y.pgm");
    let out = cprc(&[
        "decompress",
        "--in",
        stream50.to_str().unwrap(),
        "--reccnn",
        rec.to_str().unwrap(),
        "--out",
        restored.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    assert!(stdout(&out).is_empty(), "decompress prints nothing");
    let back = cprc_core::codec::read_pgm(&restored).unwrap();
    assert_eq!((back.width(), back.height()), (64, 64));
}

#[test]
fn decompress_with_wrong_model_kind_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let (com, _) = write_models(dir.path());
    let img = write_fixture(dir.path(), "x.pgm", 48, 48, 3);
    let stream = dir.path().join("x.cprc");
    let out = cprc(&[
        "compress",
        "--in",
        img.to_str().unwrap(),
        "--comcnn",
        com.to_str().unwrap(),
        "--qf",
        "30",
        "--out",
        stream.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let out = cprc(&[
        "decompress",
        "--in",
        stream.to_str().unwrap(),
        "--reccnn",
        com.to_str().unwrap(), // ComCNN checkpoint in the RecCNN slot
        "--out",
        dir.path().join("y.pgm").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("ComCnn"), "stderr: {}", stderr(&out));
}

#[test]
fn eval_reports_rows_and_average() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_fixture(dir.path(), "a.pgm", 32, 32, 11);
    let b = write_fixture(dir.path(), "b.pgm", 32, 32, 12);
    let c = write_fixture(dir.path(), "c.pgm", 32, 32, 13);
    let pairs = dir.path().join("pairs.csv");
    // identical pair, then two distinct pairs
    fs::write(
        &pairs,
        format!(
            "{0},{0}\n{1},{2}\n{2},{1}\n",
            a.display(),
            b.display(),
            c.display()
        ),
    )
    .unwrap();
    let out = cprc(&["eval", "--pairs", pairs.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5, "header + 3 rows + average: {text}");
    assert_eq!(lines[0], "name,psnr,ssim");
    assert!(lines[1].starts_with("a,inf,"), "identical pair: {}", lines[1]);

    // average of the finite rows only
    let parse = |line: &str| -> (f64, f64) {
        let mut it = line.split(',').skip(1);
        (
            it.next().unwrap().parse().unwrap(),
            it.next().unwrap().parse().unwrap(),
        )
    };
    let (p2, s2) = parse(lines[2]);
    let (p3, s3) = parse(lines[3]);
    let (pa, sa) = parse(lines[4]);
    assert!((pa - (p2 + p3) / 2.0).abs() < 1e-9);
    let (s1, _) = (parse(lines[1]).1, ());
    assert!((sa - (s1 + s2 + s3) / 3.0).abs() < 1e-9);
}

#[test]
fn eval_dim_mismatch_marks_row_and_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_fixture(dir.path(), "a.pgm", 32, 32, 1);
    let b = write_fixture(dir.path(), "b.pgm", 16, 16, 2);
    let pairs = dir.path().join("pairs.csv");
    fs::write(&pairs, format!("{},{}\n{0},{0}\n", a.display(), b.display())).unwrap();
    let out = cprc(&["eval", "--pairs", pairs.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    let text = stdout(&out);
    assert!(text.contains("a,error,error"), "{text}");
    assert!(text.lines().count() == 4, "{text}"); // header, error row, ok row, average
}

#[test]
fn gradcheck_passes_and_fault_injection_fails() {
    let out = cprc(&["gradcheck", "--seed", "0"]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let text = stdout(&out);
    let rows = text.lines().filter(|l| l.contains("max_rel_err")).count();
    assert!(rows >= 6, "expected at least 6 rows:\n{text}");

    let out = cprc(&["gradcheck", "--seed", "0", "--inject-fault"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("relu"));
}

#[test]
fn unknown_flag_exits_1() {
    let out = cprc(&["compress", "--bogus"]);
    assert_eq!(code(&out), 1);
}
