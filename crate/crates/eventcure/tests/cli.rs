//! End-to-end checks of the binary: exit codes, file outputs, and the
//! equivalence of neutral fusion settings with the averaging baseline.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use eventcure::io;
use eventcure_core::linalg::argmax;
use eventcure_core::predictors::{
    pca_apply, predict_image_events, predict_sequence_event,
};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_eventcure")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary failed to spawn")
}

#[track_caller]
fn assert_code(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// One generated dataset with all three models, shared across tests.
struct Fixture {
    _dir: tempfile::TempDir,
    manifest: PathBuf,
    image: PathBuf,
    sequence: PathBuf,
    importance: PathBuf,
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("manifest.json");
        let out = run(&[
            "synth",
            "--out",
            s(&manifest),
            "--events",
            "3",
            "--albums-per-event",
            "6",
            "--album-size-min",
            "3",
            "--album-size-max",
            "6",
            "--feature-dim",
            "8",
            "--seed",
            "5",
        ]);
        assert_code(&out, 0);

        let train = |which: &str, path: &Path, extra: &[&str]| {
            let mut args = vec![
                "train",
                "--manifest",
                s(&manifest),
                "--which",
                which,
                "--out",
                s(path),
                "--seed",
                "5",
                "--epochs",
                "3",
                "--hidden",
                "6",
                "--reduced-dim",
                "4",
            ];
            args.extend_from_slice(extra);
            assert_code(&run(&args), 0);
        };
        let image = dir.path().join("image.json");
        let sequence = dir.path().join("sequence.json");
        let importance = dir.path().join("importance.json");
        train("image-event", &image, &[]);
        train("sequence-event", &sequence, &[]);
        train("importance", &importance, &["--pairs-per-album", "3"]);
        Fixture { _dir: dir, manifest, image, sequence, importance }
    })
}

#[test]
fn synth_writes_a_loadable_manifest() {
    let fx = fixture();
    let manifest = io::load_manifest(&fx.manifest).unwrap();
    assert_eq!(manifest.albums.len(), 18);
    assert_eq!(manifest.vocabulary.len(), 3);
}

#[test]
fn usage_errors_exit_with_one() {
    assert_code(&run(&["frobnicate"]), 1);
    assert_code(&run(&[]), 1);
    assert_code(&run(&["train", "--manifest", "m.json", "--which", "magic", "--out", "x"]), 1);
    let fx = fixture();
    assert_code(
        &run(&[
            "evaluate",
            "--manifest",
            s(&fx.manifest),
            "--method",
            "telepathy",
            "--out",
            "r.csv",
        ]),
        1,
    );
}

#[test]
fn help_exits_cleanly() {
    assert_code(&run(&["--help"]), 0);
    assert_code(&run(&["synth", "--help"]), 0);
}

#[test]
fn data_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.csv");
    // Manifest path does not exist.
    assert_code(
        &run(&[
            "evaluate",
            "--manifest",
            s(&dir.path().join("missing.json")),
            "--method",
            "random",
            "--out",
            s(&report),
        ]),
        2,
    );
    // Method requires a model that was not supplied.
    let fx = fixture();
    assert_code(
        &run(&[
            "evaluate",
            "--manifest",
            s(&fx.manifest),
            "--method",
            "cnn-recognition",
            "--out",
            s(&report),
        ]),
        2,
    );
}

#[test]
fn reports_never_overwrite_without_force() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.csv");
    let args = [
        "evaluate",
        "--manifest",
        s(&fx.manifest),
        "--method",
        "random",
        "--out",
        s(&report),
    ];
    assert_code(&run(&args), 0);
    assert_code(&run(&args), 2);
    let mut forced: Vec<&str> = args.to_vec();
    forced.push("--force");
    assert_code(&run(&forced), 0);
}

#[test]
fn evaluate_writes_the_requested_cutoffs() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.csv");
    let out = run(&[
        "evaluate",
        "--manifest",
        s(&fx.manifest),
        "--method",
        "gt-event",
        "--importance-model",
        s(&fx.importance),
        "--t-list",
        "50",
        "--out",
        s(&report),
    ]);
    assert_code(&out, 0);
    let csv = fs::read_to_string(&report).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("metric,t,value"));
    assert!(csv.contains("\nmap,50,"));
    assert!(csv.contains("\nprecision,50,"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn neutral_fusion_matches_the_averaging_baseline() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let fused = dir.path().join("fusion.json");
    let out = run(&[
        "fuse",
        "--manifest",
        s(&fx.manifest),
        "--image-model",
        s(&fx.image),
        "--sequence-model",
        s(&fx.sequence),
        "--importance-model",
        s(&fx.importance),
        "--alpha",
        "0",
        "--mask-fraction",
        "0",
        "--out",
        s(&fused),
    ]);
    assert_code(&out, 0);

    let manifest = io::load_manifest(&fx.manifest).unwrap();
    let image = io::load_image_event_model(&fx.image).unwrap();
    let sequence = io::load_sequence_event_model(&fx.sequence).unwrap();
    let records = io::load_fusion_results(&fused).unwrap();
    assert_eq!(records.len(), manifest.albums.len());
    for (album, record) in manifest.albums.iter().zip(&records) {
        assert_eq!(album.album_id, record.album_id);
        let features = album.features.to_f64();
        let q = predict_image_events(&image, &pca_apply(&image.pca, &features).unwrap()).unwrap();
        let p_hat =
            predict_sequence_event(&sequence, &pca_apply(&sequence.pca, &features).unwrap())
                .unwrap();
        let expected: Vec<f64> = (0..q.cols())
            .map(|c| {
                let mean = (0..q.rows()).map(|r| q.row(r)[c]).sum::<f64>() / q.rows() as f64;
                0.5 * (mean + p_hat[c])
            })
            .collect();
        assert_eq!(argmax(&record.p), argmax(&expected), "album {}", album.album_id);
        for (a, b) in record.p.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12, "album {}: {a} vs {b}", album.album_id);
        }
    }
}

#[test]
fn confusion_remap_flow() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.csv");
    let confusion = dir.path().join("confusion.json");
    let out = run(&[
        "evaluate",
        "--manifest",
        s(&fx.manifest),
        "--method",
        "cnn-recognition",
        "--image-model",
        s(&fx.image),
        "--out",
        s(&report),
        "--confusion",
        s(&confusion),
    ]);
    assert_code(&out, 0);

    // Merging every class into one makes every prediction correct.
    let mapping = dir.path().join("mapping.json");
    fs::write(
        &mapping,
        r#"{"target_classes": ["any"], "map": ["any", "any", "any"]}"#,
    )
    .unwrap();
    let remapped = dir.path().join("remapped.json");
    let out = run(&[
        "remap",
        "--confusion",
        s(&confusion),
        "--mapping",
        s(&mapping),
        "--out",
        s(&remapped),
    ]);
    assert_code(&out, 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("accuracy 1.000000"));
    let (classes, cm) = io::load_confusion(&remapped).unwrap();
    assert_eq!(classes, vec![String::from("any")]);
    let manifest = io::load_manifest(&fx.manifest).unwrap();
    let test_albums =
        manifest.albums.iter().filter(|a| a.split == eventcure_core::dataset::Split::Test).count();
    assert_eq!(cm.total() as usize, test_albums);
}

#[test]
fn thread_cap_env_is_validated() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.csv");
    let args = [
        "evaluate",
        "--manifest",
        s(&fx.manifest),
        "--method",
        "random",
        "--out",
        s(&report),
        "--force",
    ];
    let ok = Command::new(bin()).args(args).env("EVENTCURE_THREADS", "1").output().unwrap();
    assert_code(&ok, 0);
    let bad = Command::new(bin()).args(args).env("EVENTCURE_THREADS", "lots").output().unwrap();
    assert_code(&bad, 1);
}

#[test]
fn synth_flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("synth.json");
    fs::write(&config, r#"{"events": 4, "albums_per_event": 2, "album_size": [3, 5]}"#).unwrap();
    let manifest = dir.path().join("manifest.json");
    let out = run(&[
        "synth",
        "--out",
        s(&manifest),
        "--config",
        s(&config),
        "--events",
        "3",
        "--feature-dim",
        "6",
    ]);
    assert_code(&out, 0);
    let loaded = io::load_manifest(&manifest).unwrap();
    assert_eq!(loaded.vocabulary.len(), 3);
    assert_eq!(loaded.albums.len(), 6);
    assert_eq!(loaded.feature_dim, 6);
}

#[test]
fn gridsearch_writes_a_table() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("grid.csv");
    let out = run(&[
        "gridsearch",
        "--manifest",
        s(&fx.manifest),
        "--image-model",
        s(&fx.image),
        "--sequence-model",
        s(&fx.sequence),
        "--importance-model",
        s(&fx.importance),
        "--alphas",
        "0,1",
        "--mask-fractions",
        "0,0.5",
        "--out",
        s(&table),
    ]);
    assert_code(&out, 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("best alpha="));
    let csv = fs::read_to_string(&table).unwrap();
    assert_eq!(csv.lines().next(), Some("alpha,mask_fraction,accuracy"));
    assert_eq!(csv.lines().count(), 5);
}
