use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hgnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hgnn"))
        .args(args)
        .output()
        .unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn gen(dir: &Path, n: usize) -> String {
    let path = dir.join("data.vtds");
    let out = hgnn(&[
        "gen-data",
        "--n",
        &n.to_string(),
        "--objects",
        "2",
        "--seed",
        "4",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    path.to_str().unwrap().to_string()
}

#[test]
fn unknown_subcommand_fails() {
    let out = hgnn(&["frobnicate"]);
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
}

#[test]
fn help_lists_every_subcommand() {
    let out = hgnn(&["--help"]);
    assert!(out.status.success());
    let help = text(&out.stdout);
    for cmd in [
        "gen-data",
        "train",
        "eval",
        "ablate",
        "sweep-tactile",
        "dump",
    ] {
        assert!(help.contains(cmd), "{cmd} missing from\n{help}");
    }
}

#[test]
fn gen_data_then_dump() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 10);
    let out = hgnn(&["dump", &data, "--index", "9"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let dump = text(&out.stdout);
    assert!(dump.starts_with("sample 9\n"), "{dump}");

    let out = hgnn(&["dump", &data, "--index", "9", "--graph"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(!out.stdout.is_empty());

    let out = hgnn(&["dump", &data, "--index", "10"]);
    assert!(!out.status.success());
    assert!(text(&out.stderr).starts_with("error:"));
}

#[test]
fn conflicting_ablation_flags_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = hgnn(&[
        "train",
        "--dataset",
        "missing.vtds",
        "--flag",
        "NoVis",
        "--flag",
        "NoProp",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(text(&out.stderr).contains("error:"));
    assert!(!dir.path().join("run.cfg").exists());
}

#[test]
fn missing_dataset_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = hgnn(&[
        "train",
        "--dataset",
        dir.path().join("none.vtds").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
}

#[test]
fn config_file_with_flag_overrides_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 10);
    let run = dir.path().join("run");
    let cfg = dir.path().join("base.cfg");
    fs::write(
        &cfg,
        format!(
            "# toy run\ndataset = {data}\nepochs = 5\nbatch-size = 4\nmodel = NoProp\nmax_steps = 1\nloss_points = 32\n"
        ),
    )
    .unwrap();
    let out = hgnn(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--epochs",
        "1",
        "--single-thread",
        "--out-dir",
        run.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let saved = fs::read_to_string(run.join("run.cfg")).unwrap();
    assert!(saved.contains("epochs = 1\n"), "{saved}");
    assert!(saved.contains("batch_size = 4\n"), "{saved}");
    assert!(saved.contains("model = NoProp\n"), "{saved}");

    let ckpt = run.join("checkpoint.bin");
    let out = hgnn(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--svg"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 2);
    assert!(metrics.starts_with("sample_id,object_id,occlusion_pct,pos_err_cm,ang_err_deg"));
    assert!(run.join("occlusion_bins.csv").exists());
    assert!(fs::read_to_string(run.join("occlusion_position.svg"))
        .unwrap()
        .starts_with("<svg"));

    let out = hgnn(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--all"]);
    assert!(out.status.success());
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 10);
}

#[test]
fn bad_config_values_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "epochs = many\n").unwrap();
    let out = hgnn(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(text(&out.stderr).contains("epochs"));
    let out = hgnn(&["train", "--split", "1.5"]);
    assert!(!out.status.success());
}
