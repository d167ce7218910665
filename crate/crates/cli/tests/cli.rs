//! End-to-end tests driving the compiled binary: the full pipeline,
//! byte-level determinism, the golden history regression, and the exit-code
//! contract.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sbka_core::ablation::{embed_all, STUDENT_INIT_TAG};
use sbka_core::codebook::load_codebook;
use sbka_core::data::{read_embedding_file, Modality};
use sbka_core::metrics::MetricsReport;
use sbka_core::model::{checkpoint_to_bytes, init_params, load_checkpoint, ModelDims};
use sbka_core::numerics::RngSeed;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sbka"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn run_ok(args: &[&str], dir: &Path) -> Output {
    let out = bin()
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn sbka");
    assert!(
        out.status.success(),
        "command {args:?} failed with {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_expect_code(args: &[&str], dir: &Path, code: i32) -> String {
    let out = bin()
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn sbka");
    assert_eq!(
        out.status.code(),
        Some(code),
        "command {args:?} expected exit {code}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn tiny_cfg() -> String {
    fixture("tiny.toml").display().to_string()
}

#[test]
fn full_pipeline_runs_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_cfg();

    for round in ["a", "b"] {
        run_ok(
            &["--config", &cfg, "gen-data", "--out-dir", round],
            dir.path(),
        );
        run_ok(
            &[
                "--config",
                &cfg,
                "train",
                "--data",
                &format!("{round}/train.emb"),
                "--out-dir",
                round,
            ],
            dir.path(),
        );
        run_ok(
            &[
                "--config",
                &cfg,
                "fit-clusters",
                "--checkpoint",
                &format!("{round}/student.ckpt"),
                "--gallery",
                &format!("{round}/test.emb"),
                "--out",
                &format!("{round}/codebook.bin"),
            ],
            dir.path(),
        );
        run_ok(
            &[
                "--config",
                &cfg,
                "retrieve-eval",
                "--checkpoint",
                &format!("{round}/student.ckpt"),
                "--codebook",
                &format!("{round}/codebook.bin"),
                "--queries",
                &format!("{round}/test.emb"),
                "--gallery",
                &format!("{round}/test.emb"),
                "--out",
                &format!("{round}/report.json"),
                "--rankings",
                &format!("{round}/rankings.tsv"),
            ],
            dir.path(),
        );
    }

    for file in [
        "train.emb",
        "test.emb",
        "student.ckpt",
        "teacher.ckpt",
        "history.tsv",
        "codebook.bin",
        "report.json",
        "rankings.tsv",
    ] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }

    // The embedding header carries the configured input dimension.
    let train_bytes = std::fs::read(dir.path().join("a/train.emb")).unwrap();
    assert_eq!(&train_bytes[..8], b"SBKAEMB1");
    assert_eq!(
        u32::from_le_bytes(train_bytes[8..12].try_into().unwrap()),
        8
    );

    let report = MetricsReport::load(&dir.path().join("a/report.json")).unwrap();
    assert!((0.0..=1.0).contains(&report.map_all));
    assert_eq!(report.k, 5);
    assert_eq!(report.skipped_queries, 0);

    // Baseline flag produces a valid report too.
    run_ok(
        &[
            "--config",
            &cfg,
            "retrieve-eval",
            "--checkpoint",
            "a/student.ckpt",
            "--queries",
            "a/test.emb",
            "--gallery",
            "a/test.emb",
            "--baseline",
            "--out",
            "a/baseline.json",
        ],
        dir.path(),
    );
    let baseline = MetricsReport::load(&dir.path().join("a/baseline.json")).unwrap();
    assert!((0.0..=1.0).contains(&baseline.map_all));
}

#[test]
fn history_matches_golden_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_cfg();
    run_ok(
        &["--config", &cfg, "gen-data", "--out-dir", "."],
        dir.path(),
    );
    run_ok(
        &[
            "--config",
            &cfg,
            "train",
            "--data",
            "train.emb",
            "--out-dir",
            ".",
        ],
        dir.path(),
    );
    let got = std::fs::read(dir.path().join("history.tsv")).unwrap();
    let golden = std::fs::read(fixture("history_golden.tsv")).unwrap();
    assert_eq!(
        got,
        golden,
        "history deviates from the golden trace:\n{}",
        String::from_utf8_lossy(&got)
    );
}

#[test]
fn missing_prior_equals_zero_prior() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_cfg();
    run_ok(
        &["--config", &cfg, "gen-data", "--out-dir", "."],
        dir.path(),
    );

    // Explicit all-zero prior: 3 training classes x k_src = 3.
    let zero_prior = "0 0 0\n0 0 0\n0 0 0\n";
    std::fs::write(dir.path().join("prior.txt"), zero_prior).unwrap();

    run_ok(
        &[
            "--config",
            &cfg,
            "train",
            "--data",
            "train.emb",
            "--out-dir",
            "without",
        ],
        dir.path(),
    );
    run_ok(
        &[
            "--config",
            &cfg,
            "train",
            "--data",
            "train.emb",
            "--prior",
            "prior.txt",
            "--out-dir",
            "with",
        ],
        dir.path(),
    );
    let a = std::fs::read(dir.path().join("without/student.ckpt")).unwrap();
    let b = std::fs::read(dir.path().join("with/student.ckpt")).unwrap();
    assert_eq!(a, b, "zero prior file must reproduce the no-prior run");
}

#[test]
fn zero_epochs_emit_initialization_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_text = std::fs::read_to_string(fixture("tiny.toml"))
        .unwrap()
        .replace("total_epochs = 3", "total_epochs = 0")
        .replace("warmup_epochs = 1", "warmup_epochs = 0")
        .replace("pretrain_epochs = 2", "pretrain_epochs = 0");
    std::fs::write(dir.path().join("cfg.toml"), cfg_text).unwrap();
    run_ok(
        &["--config", "cfg.toml", "gen-data", "--out-dir", "."],
        dir.path(),
    );
    run_ok(
        &[
            "--config",
            "cfg.toml",
            "train",
            "--data",
            "train.emb",
            "--out-dir",
            ".",
        ],
        dir.path(),
    );

    let dims = ModelDims {
        d_in: 8,
        hidden: 10,
        d_emb: 8,
        k_train: 3,
        k_src: 3,
    };
    let teacher0 = init_params(dims, RngSeed(1)).unwrap();
    let student0 = init_params(dims, RngSeed(1).derive(STUDENT_INIT_TAG)).unwrap();
    assert_eq!(
        std::fs::read(dir.path().join("teacher.ckpt")).unwrap(),
        checkpoint_to_bytes(&teacher0)
    );
    assert_eq!(
        std::fs::read(dir.path().join("student.ckpt")).unwrap(),
        checkpoint_to_bytes(&student0)
    );
}

#[test]
fn degenerate_data_self_retrieval_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_text = std::fs::read_to_string(fixture("tiny.toml"))
        .unwrap()
        .replace("modality_gap = 0.5", "modality_gap = 0.0")
        .replace("intra_class_spread = 0.3", "intra_class_spread = 0.0");
    std::fs::write(dir.path().join("cfg.toml"), cfg_text).unwrap();
    run_ok(
        &["--config", "cfg.toml", "gen-data", "--out-dir", "."],
        dir.path(),
    );
    run_ok(
        &[
            "--config",
            "cfg.toml",
            "train",
            "--data",
            "train.emb",
            "--out-dir",
            ".",
        ],
        dir.path(),
    );
    run_ok(
        &[
            "--config",
            "cfg.toml",
            "fit-clusters",
            "--checkpoint",
            "student.ckpt",
            "--gallery",
            "test.emb",
            "--out",
            "codebook.bin",
        ],
        dir.path(),
    );
    run_ok(
        &[
            "--config",
            "cfg.toml",
            "retrieve-eval",
            "--checkpoint",
            "student.ckpt",
            "--codebook",
            "codebook.bin",
            "--queries",
            "test.emb",
            "--gallery",
            "test.emb",
            "--out",
            "report.json",
        ],
        dir.path(),
    );
    let report = MetricsReport::load(&dir.path().join("report.json")).unwrap();
    assert_eq!(
        report.map_all, 1.0,
        "self retrieval on degenerate data must be perfect"
    );
}

#[test]
fn seed_override_is_coherent_and_changes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_cfg();
    run_ok(
        &[
            "--config",
            &cfg,
            "--seed",
            "42",
            "gen-data",
            "--out-dir",
            "s42a",
        ],
        dir.path(),
    );
    run_ok(
        &[
            "--config",
            &cfg,
            "--seed",
            "42",
            "gen-data",
            "--out-dir",
            "s42b",
        ],
        dir.path(),
    );
    run_ok(
        &[
            "--config",
            &cfg,
            "--seed",
            "43",
            "gen-data",
            "--out-dir",
            "s43",
        ],
        dir.path(),
    );
    let a = std::fs::read(dir.path().join("s42a/train.emb")).unwrap();
    let b = std::fs::read(dir.path().join("s42b/train.emb")).unwrap();
    let c = std::fs::read(dir.path().join("s43/train.emb")).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn exit_codes_and_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_cfg();

    // Unknown config key: exit 2, message names the key.
    std::fs::write(dir.path().join("bad.toml"), "no_such_knob = 1\n").unwrap();
    let stderr = run_expect_code(
        &["--config", "bad.toml", "gen-data", "--out-dir", "."],
        dir.path(),
        2,
    );
    assert!(
        stderr.contains("no_such_knob"),
        "stderr must name the key: {stderr}"
    );

    // Invalid config value: exit 2.
    std::fs::write(dir.path().join("bad2.toml"), "batch_size = 1\n").unwrap();
    let stderr = run_expect_code(
        &["--config", "bad2.toml", "gen-data", "--out-dir", "."],
        dir.path(),
        2,
    );
    assert!(stderr.contains("batch_size"), "{stderr}");

    // Corrupted magic: exit 3, message names the expected magic and offset.
    run_ok(
        &["--config", &cfg, "gen-data", "--out-dir", "."],
        dir.path(),
    );
    let mut bytes = std::fs::read(dir.path().join("train.emb")).unwrap();
    bytes[1] ^= 0xAA;
    std::fs::write(dir.path().join("corrupt.emb"), &bytes).unwrap();
    let stderr = run_expect_code(
        &[
            "--config",
            &cfg,
            "train",
            "--data",
            "corrupt.emb",
            "--out-dir",
            ".",
        ],
        dir.path(),
        3,
    );
    assert!(
        stderr.contains("SBKAEMB1") && stderr.contains("offset 0"),
        "diagnostic must name magic and offset: {stderr}"
    );

    // Truncated payload: exit 3.
    let full = std::fs::read(dir.path().join("train.emb")).unwrap();
    std::fs::write(dir.path().join("short.emb"), &full[..full.len() - 5]).unwrap();
    run_expect_code(
        &[
            "--config",
            &cfg,
            "train",
            "--data",
            "short.emb",
            "--out-dir",
            ".",
        ],
        dir.path(),
        3,
    );

    // Config/data dimension mismatch: exit 2 before any training.
    let cfg_text = std::fs::read_to_string(fixture("tiny.toml"))
        .unwrap()
        .replace("d_in = 8", "d_in = 12");
    std::fs::write(dir.path().join("wrong_dim.toml"), cfg_text).unwrap();
    let stderr = run_expect_code(
        &[
            "--config",
            "wrong_dim.toml",
            "train",
            "--data",
            "train.emb",
            "--out-dir",
            ".",
        ],
        dir.path(),
        2,
    );
    assert!(stderr.contains("d_in"), "{stderr}");

    // Fused retrieval without a codebook: exit 2.
    run_ok(
        &[
            "--config",
            &cfg,
            "train",
            "--data",
            "train.emb",
            "--out-dir",
            ".",
        ],
        dir.path(),
    );
    run_expect_code(
        &[
            "--config",
            &cfg,
            "retrieve-eval",
            "--checkpoint",
            "student.ckpt",
            "--queries",
            "test.emb",
            "--gallery",
            "test.emb",
            "--out",
            "r.json",
        ],
        dir.path(),
        2,
    );

    // Codebook/gallery mismatch: exit 3.
    run_ok(
        &[
            "--config",
            &cfg,
            "fit-clusters",
            "--checkpoint",
            "student.ckpt",
            "--gallery",
            "test.emb",
            "--out",
            "codebook.bin",
        ],
        dir.path(),
    );
    run_expect_code(
        &[
            "--config",
            &cfg,
            "retrieve-eval",
            "--checkpoint",
            "student.ckpt",
            "--codebook",
            "codebook.bin",
            "--queries",
            "test.emb",
            "--gallery",
            "train.emb",
            "--out",
            "r.json",
        ],
        dir.path(),
        3,
    );

    // Indivisible subspace count: exit 2 naming both numbers.
    let stderr = run_expect_code(
        &[
            "--config",
            &cfg,
            "fit-clusters",
            "--checkpoint",
            "student.ckpt",
            "--gallery",
            "test.emb",
            "--out",
            "cb.bin",
            "--subspaces",
            "3",
        ],
        dir.path(),
        2,
    );
    assert!(stderr.contains('8') && stderr.contains('3'), "{stderr}");
}

#[test]
fn single_subspace_single_cluster_centroid_is_the_gallery_mean() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_cfg();
    run_ok(
        &["--config", &cfg, "gen-data", "--out-dir", "."],
        dir.path(),
    );
    run_ok(
        &[
            "--config",
            &cfg,
            "train",
            "--data",
            "train.emb",
            "--out-dir",
            ".",
        ],
        dir.path(),
    );
    run_ok(
        &[
            "--config",
            &cfg,
            "fit-clusters",
            "--checkpoint",
            "student.ckpt",
            "--gallery",
            "test.emb",
            "--out",
            "cb1.bin",
            "--subspaces",
            "1",
            "--clusters",
            "1",
        ],
        dir.path(),
    );
    let cb = load_codebook(&dir.path().join("cb1.bin")).unwrap();
    assert_eq!(cb.m(), 1);
    assert_eq!(cb.k(), 1);

    let student = load_checkpoint(&dir.path().join("student.ckpt")).unwrap();
    let samples = read_embedding_file(&dir.path().join("test.emb")).unwrap();
    let photos: Vec<Vec<f64>> = samples
        .iter()
        .filter(|s| s.modality == Modality::Photo)
        .map(|s| s.input.clone())
        .collect();
    let embs = embed_all(&student, &photos).unwrap();
    let n = embs.len() as f64;
    let centroid = cb.centroid(0, 0);
    for (d, &c) in centroid.iter().enumerate() {
        let mean: f64 = embs.iter().map(|e| e[d]).sum::<f64>() / n;
        // The codebook stores f32 payloads; compare at f32 precision.
        assert!(
            (c - mean).abs() < 1e-4,
            "dim {d}: centroid {c} vs mean {mean}"
        );
    }
}

#[test]
fn gradcheck_subcommand_reports_six_components() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_ok(&["gradcheck", "--cases", "2"], dir.path());
    let stdout = String::from_utf8_lossy(&out.stdout);
    let component_lines = stdout
        .lines()
        .filter(|l| l.starts_with("component="))
        .count();
    assert_eq!(component_lines, 6, "{stdout}");
    assert!(stdout.contains("gradcheck passed"));

    // Seed variation: all pass across ten derived seeds.
    for seed in 0..10 {
        run_ok(
            &["--seed", &seed.to_string(), "gradcheck", "--cases", "2"],
            dir.path(),
        );
    }
}

#[test]
fn ablation_subcommand_writes_schema_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_cfg();
    run_ok(
        &[
            "--config",
            &cfg,
            "ablation",
            "--repetitions",
            "1",
            "--out",
            "table.tsv",
        ],
        dir.path(),
    );
    let text = std::fs::read_to_string(dir.path().join("table.tsv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4, "{text}");
    assert!(lines[0].starts_with("bidirectional\tone_to_many"));
    assert!(lines[1].starts_with("false\tfalse"));
    assert!(lines[2].starts_with("true\tfalse"));
    assert!(lines[3].starts_with("true\ttrue"));
}

#[test]
fn thread_cap_is_honored_and_validated() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_cfg();
    let out = bin()
        .args(["--config", &cfg, "gen-data", "--out-dir", "capped"])
        .env("SBKA_THREADS", "1")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());

    let out = bin()
        .args(["--config", &cfg, "gen-data", "--out-dir", "x"])
        .env("SBKA_THREADS", "zero")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("SBKA_THREADS"));
}
