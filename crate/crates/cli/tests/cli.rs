//! CLI smoke tests: every subcommand against a tiny synthetic scene.

use std::path::Path;
use std::process::Command;

fn crownvec() -> Command {
    Command::new(env!("CARGO_BIN_EXE_crownvec"))
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(
        &path,
        r#"
seed = 9

[synth]
width = 200
height = 150
channels = 60
tree_count = 4
radius_min = 9.0
radius_max = 12.0

[embed]
embed_dim = 8
hidden_dim = 32
epochs = 5

[analysis]
kmeans_k = 2
repetitions = 2
test_fractions = [0.25]
logistic_iters = 30
"#,
    )
    .unwrap();
    path
}

fn run_ok(command: &mut Command) -> String {
    let output = command.output().expect("spawn crownvec");
    assert!(
        output.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8_lossy(&output.stdout).into_owned()
}

#[test]
fn stage_by_stage_walkthrough() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = dir.path().join("out");
    let base = |cmd: &str| {
        let mut c = crownvec();
        c.arg("--config")
            .arg(&config)
            .arg("--out-dir")
            .arg(&out)
            .arg(cmd);
        c
    };

    run_ok(&mut base("synth"));
    assert!(out.join("scene.hdr").exists() && out.join("scene.raw").exists());

    let stdout = run_ok(&mut base("extract"));
    assert!(stdout.contains("extracted 4 trees"), "{stdout}");

    run_ok(&mut base("indices"));
    run_ok(&mut base("segment"));
    run_ok(&mut base("band"));
    run_ok(&mut base("train"));
    run_ok(&mut base("vectors"));
    assert!(out.join("model.json").exists());
    assert!(out.join("tree_vectors.csv").exists());

    run_ok(base("cluster").args(["--space", "embedding"]));
    run_ok(base("cluster").args(["--space", "direct"]));
    let stdout = run_ok(base("purity").args([
        "--a",
        out.join("clusters_embedding.csv").to_str().unwrap(),
        "--b",
        out.join("clusters_direct.csv").to_str().unwrap(),
    ]));
    assert!(stdout.contains("purity = "), "{stdout}");

    let stdout = run_ok(base("classify").args(["--space", "embedding", "--algorithm", "gnb"]));
    assert!(stdout.contains("test fraction 0.25"), "{stdout}");
    run_ok(base("classify").args(["--space", "direct", "--algorithm", "logistic"]));

    let stdout = run_ok(base("characterize").args(["--cluster", "1", "--top", "3"]));
    assert!(stdout.contains("segment"), "{stdout}");

    let stdout = run_ok(base("nn").args(["--token", "Low NDVI", "--n", "3", "--space", "direct"]));
    assert!(stdout.contains("neighbors of Low NDVI"), "{stdout}");
    let stdout = run_ok(base("nn").args(["--token", "5", "--n", "2", "--space", "embedding"]));
    assert!(stdout.contains("neighbors of"), "{stdout}");
}

#[test]
fn full_run_and_cached_suffix() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = dir.path().join("out");

    let mut cmd = crownvec();
    cmd.arg("--config")
        .arg(&config)
        .arg("--out-dir")
        .arg(&out)
        .arg("run");
    let stdout = run_ok(&mut cmd);
    assert!(stdout.contains("pipeline complete"), "{stdout}");
    assert!(out.join("manifest.json").exists());
    assert!(out.join("purity.json").exists());

    let mut cmd = crownvec();
    cmd.arg("--config")
        .arg(&config)
        .arg("--out-dir")
        .arg(&out)
        .arg("run")
        .args(["--from", "train"]);
    run_ok(&mut cmd);
}

#[test]
fn paper_sentinel_flag_changes_band_export() {
    // Hand-written segment profiles with one wild ARI1 value, so the banding
    // stage is guaranteed to mark an outlier.
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    std::fs::create_dir_all(&out).unwrap();
    let header = "tree_id,segment,pixel_count,ARI1,ARI2,ARVI,CRI1,CRI2,EVI,MCARI,MCARI2,\
MRENVI,MRESRI,NDVI,PRI,PSRI,RENDVI,SRI,SIPI,TCARI,VREI1,VREI2,VREI3,WBI";
    let mut csv = String::from(header);
    csv.push('\n');
    for tree in 1..=2 {
        for segment in 1..=5 {
            let row = (tree - 1) * 5 + segment;
            let ari1 = if row == 10 { 1000.0 } else { row as f64 * 0.1 };
            csv.push_str(&format!("{tree},{segment},4,{ari1}"));
            for i in 1..21 {
                csv.push_str(&format!(",{}", row as f64 * 0.1 + i as f64));
            }
            csv.push('\n');
        }
    }
    std::fs::write(out.join("segments.csv"), csv).unwrap();

    let mut with_sentinel = crownvec();
    with_sentinel
        .arg("--out-dir")
        .arg(&out)
        .arg("--paper-sentinel")
        .arg("band");
    run_ok(&mut with_sentinel);
    let bands = std::fs::read_to_string(out.join("bands.csv")).unwrap();
    assert!(bands.contains("-1000000"), "sentinel missing from export");

    let mut without = crownvec();
    without.arg("--out-dir").arg(&out).arg("band");
    run_ok(&mut without);
    let bands = std::fs::read_to_string(out.join("bands.csv")).unwrap();
    assert!(!bands.contains("-1000000"), "sentinel should be absent");
}

#[test]
fn missing_input_fails_with_stage_name() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut cmd = crownvec();
    cmd.arg("--out-dir").arg(&out).arg("extract");
    let output = cmd.output().unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("extract"), "{stderr}");
}

#[test]
fn purity_of_identical_assignments_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    std::fs::write(&a, "tree_id,cluster\n1,1\n2,2\n3,1\n").unwrap();
    let out = dir.path().join("out");
    std::fs::create_dir_all(&out).unwrap();
    let mut cmd = crownvec();
    cmd.arg("--out-dir")
        .arg(&out)
        .arg("purity")
        .args(["--a", a.to_str().unwrap(), "--b", a.to_str().unwrap()]);
    let stdout = run_ok(&mut cmd);
    assert!(stdout.contains("purity = 1.0000"), "{stdout}");
    assert!(out.join("confusion.csv").exists());
}
