use std::path::Path;
use std::process::{Command, Output};

use pdl::datasets::{synthetic_cifar, write_cifar10_dir, Split};
use pdl::dictionary::Dictionary;
use pdl::model::ModelFile;
use pdl::selection::ExemplarSet;
use pdl::viz::parse_ppm;

fn pdl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pdl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn data_dir(root: &Path) -> String {
    let dir = root.join("cifar");
    write_cifar10_dir(
        &dir,
        &synthetic_cifar(200, Split::Train, 1),
        &synthetic_cifar(60, Split::Test, 2),
    )
    .unwrap();
    dir.to_string_lossy().into_owned()
}

fn learn(root: &Path, data: &str, m: &str) -> String {
    let model = root.join("model.bin").to_string_lossy().into_owned();
    let out = pdl(&[
        "learn-dict",
        "--dataset",
        "cifar10",
        "--data-dir",
        data,
        "--patch-side",
        "6",
        "--m",
        m,
        "--seed",
        "1",
        "--samples",
        "4000",
        "--iters",
        "10",
        "--out",
        &model,
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    model
}

#[test]
fn help_and_usage_codes() {
    assert_eq!(pdl(&["--help"]).status.code(), Some(0));
    assert_eq!(pdl(&["frobnicate"]).status.code(), Some(1));
    let out = pdl(&["learn-dict", "--data-dir", "/nonexistent"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--m"));
    assert_eq!(
        pdl(&["learn-dict", "--pool-grid", "2by2", "--m", "4"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn missing_dataset_is_environment_error() {
    let out = pdl(&["learn-dict", "--data-dir", "/nonexistent/cifar", "--m", "8"]);
    assert_eq!(out.status.code(), Some(2));
    let out = pdl(&["select", "--model", "/nonexistent/model.bin", "--k", "2"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stages_chain_through_one_model_file() {
    let tmp = tempfile::tempdir().unwrap();
    let data = data_dir(tmp.path());
    let model = learn(tmp.path(), &data, "24");
    let first = ModelFile::load(Path::new(&model)).unwrap();
    let dict: Dictionary = first.get().unwrap();
    assert_eq!((dict.size(), dict.dim()), (24, 108));

    let again = tmp.path().join("again.bin").to_string_lossy().into_owned();
    let out = pdl(&[
        "learn-dict",
        "--dataset",
        "cifar10",
        "--data-dir",
        &data,
        "--patch-side",
        "6",
        "--m",
        "24",
        "--seed",
        "1",
        "--samples",
        "4000",
        "--iters",
        "10",
        "--out",
        &again,
    ]);
    assert!(out.status.success());
    assert_eq!(
        std::fs::read(&again).unwrap(),
        std::fs::read(&model).unwrap()
    );

    let out = pdl(&["select", "--model", &model, "--k", "25"]);
    assert_eq!(out.status.code(), Some(1), "K > M is a usage error");

    let out = pdl(&[
        "select",
        "--model",
        &model,
        "--k",
        "8",
        "--samples",
        "2000",
        "--seed",
        "3",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let selected = ModelFile::load(Path::new(&model)).unwrap();
    let sel: ExemplarSet = selected.get().unwrap();
    assert_eq!(sel.len(), 8);
    assert!(sel.is_consistent());

    let csv = tmp.path().join("eval.csv").to_string_lossy().into_owned();
    let out = pdl(&["evaluate", "--model", &model, "--out", &csv, "--seed", "5"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(stdout.starts_with("accuracy "));
    let table = std::fs::read_to_string(&csv).unwrap();
    assert!(table.lines().nth(1).unwrap().contains("PDL"));

    let out2 = pdl(&["evaluate", "--model", &model, "--out", &csv, "--seed", "5"]);
    assert_eq!(String::from_utf8_lossy(&out2.stdout), stdout);

    let figs = tmp.path().join("figs");
    let out = pdl(&[
        "visualize",
        "--model",
        &model,
        "--out",
        figs.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    for name in ["dictionary.ppm", "selected.ppm", "clusters.ppm"] {
        let img = parse_ppm(&std::fs::read(figs.join(name)).unwrap()).unwrap();
        assert!(img.width > 0 && img.height > 0);
    }
    let grid = parse_ppm(&std::fs::read(figs.join("selected.ppm")).unwrap()).unwrap();
    assert_eq!(grid.width, 3 * 7 + 1);
}

#[test]
fn select_all_codes_gives_near_identity_rescale() {
    let tmp = tempfile::tempdir().unwrap();
    let data = data_dir(tmp.path());
    let model = learn(tmp.path(), &data, "6");
    let out = pdl(&["select", "--model", &model, "--k", "6", "--samples", "2000"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let f = ModelFile::load(Path::new(&model)).unwrap();
    let sel: ExemplarSet = f.get().unwrap();
    assert_eq!(sel.indices, (0..6).collect::<Vec<_>>());
}

#[test]
fn model_without_dictionary_is_environment_error() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("empty.bin");
    ModelFile::new().save(&path).unwrap();
    let out = pdl(&["select", "--model", path.to_str().unwrap(), "--k", "4"]);
    assert_eq!(out.status.code(), Some(2));
    let out = pdl(&[
        "evaluate",
        "--model",
        path.to_str().unwrap(),
        "--data-dir",
        "/tmp",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_test_file_is_environment_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = data_dir(tmp.path());
    let model = learn(tmp.path(), &data, "8");
    std::fs::remove_file(Path::new(&data).join("test_batch.bin")).unwrap();
    let out = pdl(&["evaluate", "--model", &model]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_with_flag_override() {
    let tmp = tempfile::tempdir().unwrap();
    let data = data_dir(tmp.path());
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(
        &cfg,
        format!(
            r#"{{"data_dir": "{data}", "m_start": 10, "patch_samples": 3000, "kmeans_iters": 5}}"#
        ),
    )
    .unwrap();
    let model = tmp.path().join("m.bin");
    let out = pdl(&[
        "learn-dict",
        "--config",
        cfg.to_str().unwrap(),
        "--m",
        "12",
        "--out",
        model.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let d: Dictionary = ModelFile::load(&model).unwrap().get().unwrap();
    assert_eq!(d.size(), 12);

    std::fs::write(&cfg, "[1, 2]").unwrap();
    let out = pdl(&["learn-dict", "--config", cfg.to_str().unwrap(), "--m", "12"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unwritable_visualize_target_is_environment_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = data_dir(tmp.path());
    let model = learn(tmp.path(), &data, "4");
    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let out = pdl(&[
        "visualize",
        "--model",
        &model,
        "--out",
        blocker.join("sub").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
