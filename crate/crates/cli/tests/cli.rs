use std::path::Path;
use std::process::{Command, Output};

fn bevswarm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bevswarm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn help_exits_zero() {
    for args in [&["--help"][..], &["simulate", "--help"], &["codec-bench", "--help"], &["geometry-check", "--help"]] {
        let out = bevswarm(args);
        assert!(out.status.success(), "{args:?}");
        assert!(!out.stdout.is_empty());
    }
}

#[test]
fn codec_bench_table() {
    let out = bevswarm(&["codec-bench"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("M,ratio,formula,wire_ratio"));
    let expected = [(1, 1.000), (2, 0.625), (4, 0.531), (8, 0.508), (16, 0.502), (32, 0.500)];
    for (line, (m, ratio)) in lines.zip(expected) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[0].parse::<usize>().unwrap(), m);
        assert!((f[1].parse::<f64>().unwrap() - ratio).abs() < 1e-3, "{line}");
        let formula = (1.0 + 1.0 / (m * m) as f64) / 2.0;
        assert!((f[2].parse::<f64>().unwrap() - formula).abs() < 1e-6, "{line}");
        assert_eq!(f[3], f[2], "wire size disagrees with the closed form: {line}");
    }
    assert_eq!(bevswarm(&["codec-bench"]).stdout, text.as_bytes());
}

#[test]
fn geometry_check_passes_and_reproduces() {
    let a = bevswarm(&["geometry-check", "--trials", "2000", "--seed", "5"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stdout));
    let b = bevswarm(&["geometry-check", "--trials", "2000", "--seed", "5"]);
    assert_eq!(a.stdout, b.stdout);
    assert!(String::from_utf8_lossy(&a.stdout).contains("worst: trial"));
}

#[test]
fn geometry_check_zero_trials_is_vacuous() {
    let out = bevswarm(&["geometry-check", "--trials", "0"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
}

#[test]
fn simulate_none_reports_every_task() {
    let dir = tempfile::tempdir().unwrap();
    let out = bevswarm(&["simulate", "--strategy", "none", "--seed", "7", "--frames", "1", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read(dir.path(), "report.csv");
    assert!(report.starts_with("strategy,range,task,metric,value\n"));
    for task in ["detection", "segmentation", "prediction", "bandwidth"] {
        for range in ["short", "long"] {
            assert!(report.contains(&format!("none,{range},{task},")), "{task} {range}");
        }
    }
    // Nothing is sent without collaboration.
    assert_eq!(read(dir.path(), "ledger.csv").lines().count(), 1);
    assert!(report.contains("none,long,bandwidth,total_bytes,0.000000"));
}

#[test]
fn simulate_hlfdc_ratio_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let names = ["report.csv", "ledger.csv", "summary.txt", "scene.txt", "config.toml"];
    let run = || {
        let out = bevswarm(&[
            "simulate", "--strategy", "hlfdc", "--window", "4", "--frames", "1", "--range", "long", "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        names.map(|n| std::fs::read(dir.path().join(n)).unwrap())
    };
    let first = run();
    let second = run();
    for (name, (a, b)) in names.iter().zip(first.iter().zip(&second)) {
        assert_eq!(a, b, "{name}");
    }

    let ledger = read(dir.path(), "ledger.csv");
    let mut rows = 0;
    for line in ledger.lines().skip(1) {
        let ratio: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!((ratio - 0.531).abs() <= 0.001, "{line}");
        rows += 1;
    }
    // Five platforms, every directed link.
    assert_eq!(rows, 20);
    assert!(!read(dir.path(), "report.csv").contains(",short,"));
}

#[test]
fn config_file_is_read_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    let out_dir = dir.path().join("out");
    std::fs::write(&cfg, "strategy = \"late\"\nseed = 3\n[scene]\nframes = 1\n").unwrap();
    let out = bevswarm(&["simulate", "--config", cfg.to_str().unwrap(), "--seed", "4", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let resolved = read(&out_dir, "config.toml");
    assert!(resolved.contains("strategy = \"late\""));
    assert!(resolved.contains("seed = 4"));
    assert!(read(&out_dir, "report.csv").contains("late,long,detection,mAP,"));
}

#[test]
fn invalid_configs_fail() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "seed = 1\nstrategy = \"semaphore\"\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = bevswarm(&["simulate", "--config", bad.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.toml:2"));

    let out = bevswarm(&["simulate", "--strategy", "hlfdc", "--window", "7", "--out", out_dir.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("window 7"));

    let missing = dir.path().join("nope.toml");
    assert!(!bevswarm(&["simulate", "--config", missing.to_str().unwrap()]).status.success());
    assert!(!bevswarm(&["simulate", "--strategy", "telepathy"]).status.success());
    assert!(!bevswarm(&["simulate", "--range", "medium"]).status.success());
    assert!(!out_dir.join("report.csv").exists());
}

#[test]
fn thread_count_does_not_change_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, threads) in [(a.path(), "1"), (b.path(), "3")] {
        let out = Command::new(env!("CARGO_BIN_EXE_bevswarm"))
            .args(["simulate", "--strategy", "full", "--frames", "1", "--seed", "2", "--out", dir.to_str().unwrap()])
            .env("BEVSWARM_THREADS", threads)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(read(a.path(), "report.csv"), read(b.path(), "report.csv"));
    assert_eq!(read(a.path(), "ledger.csv"), read(b.path(), "ledger.csv"));

    let out = Command::new(env!("CARGO_BIN_EXE_bevswarm"))
        .args(["codec-bench"])
        .env("BEVSWARM_THREADS", "zero")
        .output()
        .unwrap();
    assert!(!out.status.success());
}
