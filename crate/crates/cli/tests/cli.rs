//! End-to-end runs of the `dewater` binary, checking the exit-code contract:
//! 0 clean, 1 fatal, 2 completed with warnings.

use std::path::Path;
use std::process::{Command, Output};

fn dewater(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dewater"))
        .args(args)
        .env_remove("DGD_CONFIG")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn s(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

/// 12x12 all-gray PNG, written without the core crate so the test stays a
/// pure black-box exercise of the binary.
fn write_png(path: &Path) {
    let file = std::fs::File::create(path).unwrap();
    let mut enc = png::Encoder::new(file, 12, 12);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().unwrap();
    let data: Vec<u8> = (0..12 * 12 * 3).map(|i| (i % 251) as u8).collect();
    writer.write_image_data(&data).unwrap();
}

#[test]
fn help_documents_every_config_key() {
    let out = dewater(&["--help"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    for key in ["cache_dir", "lambda1", "shuffle_seed", "checkpoint_every"] {
        assert!(text.contains(key), "--help must document {key}");
    }
    for sub in ["prepare-data", "train", "dewater", "evaluate", "synthesize"] {
        assert!(text.contains(sub), "--help must list {sub}");
    }
}

#[test]
fn missing_required_paths_are_fatal() {
    let out = dewater(&["train"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}

#[test]
fn bad_params_file_exits_one_with_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    let clean = tmp.path().join("clean");
    std::fs::create_dir_all(&clean).unwrap();
    write_png(&clean.join("img.png"));
    let params = tmp.path().join("bad.params");
    std::fs::write(&params, "beta = not, a, number\n").unwrap();
    let out = dewater(&[
        "synthesize",
        "--clean",
        s(&clean),
        "--params",
        s(&params),
        "--out",
        s(&tmp.path().join("out")),
    ]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains(":1:"));
}

#[test]
fn empty_dataset_root_completes_with_warnings() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("root");
    std::fs::create_dir_all(&root).unwrap();
    let out = dewater(&[
        "prepare-data",
        "--root",
        s(&root),
        "--cache-dir",
        s(&tmp.path().join("cache")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
}

/// The whole toolchain, smallest possible: synthesize pairs, prepare them,
/// "train" for zero epochs to mint a checkpoint, dewater, evaluate.
#[test]
fn five_commands_chain_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let clean = tmp.path().join("clean");
    std::fs::create_dir_all(&clean).unwrap();
    write_png(&clean.join("a.png"));
    write_png(&clean.join("b.png"));
    let params = tmp.path().join("water.params");
    std::fs::write(
        &params,
        "beta = 0.4, 0.2, 0.1\na = 0.3, 0.5, 0.6\ndepth = constant 1.5\n",
    )
    .unwrap();
    let config = tmp.path().join("run.conf");
    std::fs::write(
        &config,
        "train_size = 16\nquadrisect = false\ntrain_fraction = 1.0\n\
         depth = 2\nbase_width = 4\ndisc_base_width = 4\n\
         epochs = 0\nbatch_size = 2\n",
    )
    .unwrap();

    let data = tmp.path().join("data");
    let out = dewater(&[
        "synthesize",
        "--clean",
        s(&clean),
        "--params",
        s(&params),
        "--out",
        s(&data),
    ]);
    assert_eq!(code(&out), 0, "synthesize: {}", String::from_utf8_lossy(&out.stderr));

    let cache = tmp.path().join("cache");
    let out = dewater(&[
        "prepare-data",
        "--config",
        s(&config),
        "--root",
        s(&data),
        "--cache-dir",
        s(&cache),
    ]);
    assert_eq!(code(&out), 0, "prepare: {}", String::from_utf8_lossy(&out.stderr));

    let run = tmp.path().join("run");
    let mut with_paths = std::fs::read_to_string(&config).unwrap();
    with_paths.push_str(&format!("cache_dir = {}\n", cache.display()));
    std::fs::write(&config, with_paths).unwrap();
    let out = dewater(&["train", "--config", s(&config), "--out", s(&run)]);
    assert_eq!(code(&out), 0, "train: {}", String::from_utf8_lossy(&out.stderr));
    let ckpt = run.join("checkpoint_final.ckpt");
    assert!(ckpt.is_file());

    let restored = tmp.path().join("restored");
    let out = dewater(&[
        "dewater",
        "--checkpoint",
        s(&ckpt),
        "--input",
        s(&data.join("synthetic/underwater")),
        "--out",
        s(&restored),
    ]);
    assert_eq!(code(&out), 0, "dewater: {}", String::from_utf8_lossy(&out.stderr));
    assert!(restored.join("a_dewatered.png").is_file());
    assert!(restored.join("b_dewatered.png").is_file());

    let scores = tmp.path().join("scores");
    let out = dewater(&[
        "evaluate",
        "--pred",
        s(&restored),
        "--reference",
        s(&data.join("synthetic/reference")),
        "--out",
        s(&scores),
    ]);
    assert_eq!(code(&out), 0, "evaluate: {}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(scores.join("metrics.csv")).unwrap();
    assert!(csv.lines().count() >= 3, "two rows plus MEAN");
    assert!(scores.join("metrics.json").is_file());
}
