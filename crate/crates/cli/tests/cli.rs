use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use stemsynth::calibration::{CalibrationReport, ProfileStats};
use stemsynth::image::read_png;
use stemsynth::synthesis::{read_manifest, MANIFEST_FILE};
use stemsynth::Mode;

fn stemsynth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stemsynth"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = stemsynth(args);
    assert!(
        out.status.success(),
        "stemsynth {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(out: &Path, extra: &[&str]) {
    let mut args = vec![
        "--seed",
        "7",
        "synthesize",
        "-o",
        p(out),
        "--n-train",
        "10",
        "--n-test",
        "2",
        "--set",
        "size=96",
    ];
    args.extend_from_slice(extra);
    ok(&args);
}

fn csv_column(path: &Path, col: &str) -> Vec<String> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let i = header.iter().position(|h| *h == col).unwrap();
    lines.map(|l| l.split(',').nth(i).unwrap().to_string()).collect()
}

#[test]
fn calibrate_rejects_missing_or_empty_input() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    fs::write(empty.join("notes.txt"), "not an image").unwrap();
    let out = stemsynth(&["calibrate", p(&empty), "-o", p(&tmp.path().join("out"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no PNG frames"));
    let out = stemsynth(&[
        "calibrate",
        p(&tmp.path().join("missing")),
        "-o",
        p(&tmp.path().join("out")),
    ]);
    assert!(!out.status.success());

    // unreadable files are skipped; if nothing is left the run fails
    fs::write(empty.join("broken.png"), "garbage").unwrap();
    let out = stemsynth(&["calibrate", p(&empty), "-o", p(&tmp.path().join("out"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("skipping"));
}

#[test]
fn synthesize_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    synth(&a, &[]);
    synth(&b, &["--workers", "3"]);
    let rows = read_manifest(&a.join(MANIFEST_FILE)).unwrap();
    assert_eq!(rows.len(), 12);
    assert_eq!(rows.iter().filter(|r| r.split == "test").count(), 2);
    let ma = fs::read(a.join(MANIFEST_FILE)).unwrap();
    assert_eq!(ma, fs::read(b.join(MANIFEST_FILE)).unwrap());
    assert_eq!(
        fs::read(a.join("run.json")).unwrap(),
        fs::read(b.join("run.json")).unwrap()
    );
    for r in &rows {
        assert_eq!(fs::read(a.join(&r.noisy)).unwrap(), fs::read(b.join(&r.noisy)).unwrap());
    }
    ok(&[
        "--seed",
        "8",
        "synthesize",
        "-o",
        p(&c),
        "--n-train",
        "10",
        "--n-test",
        "2",
        "--set",
        "size=96",
    ]);
    assert_ne!(ma, fs::read(c.join(MANIFEST_FILE)).unwrap());
}

#[test]
fn unseeded_synthesis_logs_its_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(&[
        "synthesize",
        "-o",
        p(tmp.path()),
        "--n-train",
        "1",
        "--n-test",
        "0",
        "--set",
        "size=64",
    ]);
    let log = String::from_utf8_lossy(&out.stderr);
    let seed: u64 = log
        .lines()
        .find_map(|l| l.split("seed: ").nth(1))
        .expect("seed logged")
        .trim()
        .parse()
        .unwrap();
    let run: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("run.json")).unwrap()).unwrap();
    assert_eq!(run["seed"].as_u64(), Some(seed));
    assert!(log.contains(stemsynth::VERSION));
}

#[test]
fn bf_preset_gives_bf_polarity() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&[
        "--seed",
        "3",
        "synthesize",
        "-o",
        p(tmp.path()),
        "--preset",
        "bf-real",
        "--n-train",
        "3",
        "--n-test",
        "0",
        "--set",
        "size=96",
    ]);
    for r in read_manifest(&tmp.path().join(MANIFEST_FILE)).unwrap() {
        assert_eq!(r.profile.mode, Mode::Bf);
        let (img, _) = read_png(&tmp.path().join(&r.noisy)).unwrap();
        assert_eq!(stemsynth::calibration::detect_polarity(&img).unwrap(), Mode::Bf);
    }
}

#[test]
fn config_file_layers_under_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, "seed = 5\nn-train = 3\nn_test = 4\nsize = 64\n").unwrap();
    let out = tmp.path().join("ds");
    ok(&["--config", p(&cfg), "synthesize", "-o", p(&out), "--n-test", "1"]);
    let rows = read_manifest(&out.join(MANIFEST_FILE)).unwrap();
    assert_eq!(rows.len(), 4);
    let (img, _) = read_png(&out.join(&rows[0].noisy)).unwrap();
    assert_eq!(img.dims(), (64, 64));
    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["seed"].as_u64(), Some(5));

    // flag beats file
    let out2 = tmp.path().join("ds2");
    ok(&[
        "--config",
        p(&cfg),
        "--seed",
        "6",
        "synthesize",
        "-o",
        p(&out2),
        "--set",
        "size=48",
    ]);
    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(out2.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["seed"].as_u64(), Some(6));
    assert_eq!(run["synthesis"]["size"].as_u64(), Some(48));
}

#[test]
fn bad_arguments_fail() {
    let tmp = tempfile::tempdir().unwrap();
    let o = p(tmp.path());
    assert!(!stemsynth(&["synthesize", "-o", o, "--set", "no_such_knob=1"])
        .status
        .success());
    assert!(!stemsynth(&["synthesize", "-o", o, "--preset", "nope"]).status.success());
    assert!(!stemsynth(&["synthesize", "-o", o, "--set", "size"]).status.success());
    assert!(!stemsynth(&["enhance", o, "-o", o, "--method", "median"])
        .status
        .success());
    assert!(!stemsynth(&["frobnicate"]).status.success());
}

#[test]
fn enhance_evaluate_and_compare_on_a_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tmp.path().join("ds");
    synth(&ds, &[]);

    let enh = tmp.path().join("enh");
    let out = ok(&["enhance", p(&ds), "-o", p(&enh), "--method", "fftpeak"]);
    let names = csv_column(&enh.join("metrics.csv"), "image");
    assert_eq!(names, ["test_0000", "test_0001"]);
    for n in &names {
        assert!(enh.join(format!("{n}.png")).is_file());
    }
    let psnr: Vec<f64> = csv_column(&enh.join("metrics.csv"), "psnr")
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
    assert!(psnr.iter().all(|v| v.is_finite() && *v > 0.0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("mean"));

    // parameter override reaches the filter
    let enh2 = tmp.path().join("enh2");
    ok(&[
        "enhance",
        p(&ds),
        "-o",
        p(&enh2),
        "--method",
        "wiener",
        "--set",
        "window=3",
        "--split",
        "all",
    ]);
    assert_eq!(csv_column(&enh2.join("metrics.csv"), "image").len(), 12);

    // identical directories
    let ev = tmp.path().join("ev");
    ok(&["evaluate", p(&enh), p(&enh), "-o", p(&ev)]);
    let ssim = csv_column(&ev.join("metrics.csv"), "ssim");
    assert_eq!(ssim.len(), 2);
    assert!(ssim.iter().all(|s| s.parse::<f64>().unwrap() == 1.0));
    assert!(csv_column(&ev.join("metrics.csv"), "psnr").iter().all(|s| s == "inf"));

    // evaluate against the dataset's clean images reproduces enhance's scores
    let ev2 = tmp.path().join("ev2");
    ok(&["evaluate", p(&enh), p(&ds), "-o", p(&ev2)]);
    assert_eq!(
        fs::read_to_string(ev2.join("metrics.csv")).unwrap(),
        fs::read_to_string(enh.join("metrics.csv")).unwrap()
    );

    // self comparison of the generating profiles
    let cmp = tmp.path().join("cmp");
    ok(&["compare-datasets", p(&ds), p(&ds), "-o", p(&cmp)]);
    let rows = csv_column(&cmp.join("realism.csv"), "parameter");
    assert_eq!(rows.len(), 7);
    for col in ["kld_ab", "kld_ba"] {
        assert!(csv_column(&cmp.join("realism.csv"), col)
            .iter()
            .all(|v| v.parse::<f64>().unwrap().abs() < 1e-9));
    }
    assert!(fs::read_to_string(cmp.join("realism.txt"))
        .unwrap()
        .contains("pw_lambda"));

    // too few profiles
    let small = tmp.path().join("small");
    ok(&[
        "--seed",
        "1",
        "synthesize",
        "-o",
        p(&small),
        "--n-train",
        "3",
        "--n-test",
        "0",
        "--set",
        "size=64",
    ]);
    assert!(!stemsynth(&["compare-datasets", p(&small), p(&ds)]).status.success());
}

#[test]
fn calibrate_writes_reports_stats_and_plots() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tmp.path().join("ds");
    ok(&[
        "--seed",
        "2",
        "synthesize",
        "-o",
        p(&ds),
        "--n-train",
        "0",
        "--n-test",
        "20",
        "--set",
        "size=128",
    ]);
    // frames copied to a plain directory, as real data would arrive
    let frames = tmp.path().join("frames");
    fs::create_dir(&frames).unwrap();
    for r in read_manifest(&ds.join(MANIFEST_FILE)).unwrap() {
        fs::copy(ds.join(&r.noisy), frames.join(format!("frame{:02}.png", r.index))).unwrap();
    }
    let cal = tmp.path().join("cal");
    let out = ok(&["calibrate", p(&frames), "-o", p(&cal), "--mode", "haadf", "--plots"]);
    let log = String::from_utf8_lossy(&out.stderr);
    let reports: Vec<_> = fs::read_dir(cal.join("reports")).unwrap().collect();
    let calibrated = reports.len();
    let skipped = log.matches("skipping").count();
    assert_eq!(calibrated + skipped, 20, "{log}");
    assert!(calibrated >= 18, "{log}");
    let stats: ProfileStats =
        serde_json::from_str(&fs::read_to_string(cal.join("profile_stats.json")).unwrap()).unwrap();
    assert_eq!(stats.count, calibrated);
    let report: CalibrationReport =
        serde_json::from_str(&fs::read_to_string(cal.join("reports/frame00.json")).unwrap()).unwrap();
    assert!(report.source.ends_with("frame00.png"));
    for kind in ["scan", "pointwise", "ppcc"] {
        let (img, _) = read_png(&cal.join(format!("plots/frame00_{kind}.png"))).unwrap();
        assert_eq!(img.dims(), (640, 480));
    }
    // the input directory is untouched
    assert_eq!(fs::read_dir(&frames).unwrap().count(), 20);

    // reports feed compare-datasets
    ok(&["compare-datasets", p(&cal), p(&ds)]);
}

#[test]
fn calibrate_warns_on_polarity_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tmp.path().join("ds");
    ok(&[
        "--seed",
        "4",
        "synthesize",
        "-o",
        p(&ds),
        "--preset",
        "bf-real",
        "--n-train",
        "1",
        "--n-test",
        "0",
        "--set",
        "size=128",
        "--set",
        "arrangement_weights=[1,0,0,0]",
    ]);
    let out = stemsynth(&["calibrate", p(&ds), "-o", p(&tmp.path().join("cal")), "--mode", "haadf"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("polarity check suggests BF"));
    // the dataset's own mode is used when no flag is given
    let out = ok(&["calibrate", p(&ds), "-o", p(&tmp.path().join("cal2"))]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("mode: BF"));
}
