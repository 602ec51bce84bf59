//! End-to-end runs of the binary on small configurations.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nimgp"))
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("nimgp-cli-tests").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn synthetic_subcommand_writes_result_files() {
    let out = tmp("synth");
    let status = bin()
        .args([
            "synthetic",
            "--method",
            "mgp",
            "--method",
            "nimgp-fo",
            "--noise",
            "0.1",
            "--reps",
            "1",
            "--seed",
            "3",
            "--epochs",
            "10",
            "--batch",
            "30",
            "--inducing",
            "8",
            "--n-train",
            "90",
            "--n-test",
            "60",
            "--out",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let metrics = std::fs::read_to_string(out.join("metrics.tsv")).unwrap();
    assert!(metrics.lines().count() >= 3, "{}", metrics);
    assert!(out.join("aggregate.tsv").exists());
}

#[test]
fn gradcheck_subcommand_passes() {
    let output = bin().args(["gradcheck", "--step", "1e-5"]).output().unwrap();
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(output.status.success(), "{}", stdout);
    assert_eq!(stdout.matches("PASS").count(), 4, "{}", stdout);
}

#[test]
fn baseline_modes_run_on_the_plain_gp() {
    for baseline in ["augment", "resample"] {
        let out = tmp(&format!("baseline-{}", baseline));
        let status = bin()
            .args([
                "synthetic",
                "--method",
                "mgp",
                "--baseline",
                baseline,
                "--noise",
                "0.1",
                "--reps",
                "1",
                "--epochs",
                "8",
                "--batch",
                "30",
                "--inducing",
                "6",
                "--n-train",
                "80",
                "--n-test",
                "40",
                "--out",
            ])
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success(), "baseline {}", baseline);
        assert!(out.join("metrics.tsv").exists());
    }
}

#[test]
fn tabular_subcommand_ingests_csv_with_error_bars() {
    let dir = tmp("tabular");
    let csv = dir.join("sources.csv");
    let mut body = String::from("class,flux,flux_err,alpha\n");
    // three separable blobs with per-row error bars on one attribute
    for i in 0..120 {
        let c = i % 3;
        let base = c as f64 * 3.0;
        body.push_str(&format!(
            "type{},{:.4},{:.3},{:.4}\n",
            c,
            base + (i as f64 * 0.37).sin() * 0.4,
            0.1 + 0.01 * (i % 5) as f64,
            -base + (i as f64 * 0.53).cos() * 0.4,
        ));
    }
    std::fs::write(&csv, body).unwrap();
    let out = dir.join("out");
    let status = bin()
        .args([
            "tabular",
            "--file",
            csv.to_str().unwrap(),
            "--label-col",
            "class",
            "--errbar",
            "flux:flux_err",
            "--method",
            "mgp",
            "--method",
            "nimgp-fo",
            "--noise",
            "0.0",
            "--noise-mode",
            "known",
            "--reps",
            "2",
            "--epochs",
            "15",
            "--batch",
            "20",
            "--inducing",
            "6",
            "--out",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("mean_rank.tsv").exists());
    let metrics = std::fs::read_to_string(out.join("metrics.tsv")).unwrap();
    assert!(metrics.lines().count() >= 5, "{}", metrics);
}

#[test]
fn active_subcommand_writes_curves() {
    let out = tmp("active");
    let status = bin()
        .args([
            "active",
            "--method",
            "mgp",
            "--strategy",
            "entropy",
            "--strategy",
            "random",
            "--reps",
            "1",
            "--init-train",
            "40",
            "--n-test",
            "60",
            "--pool",
            "50",
            "--add",
            "3",
            "--init-epochs",
            "20",
            "--refit-epochs",
            "5",
            "--inducing",
            "8",
            "--mc-samples",
            "30",
            "--out",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let curves = std::fs::read_to_string(out.join("active_curves.tsv")).unwrap();
    // header + 2 strategies x 4 curve points
    assert_eq!(curves.lines().count(), 1 + 2 * 4, "{}", curves);
}
