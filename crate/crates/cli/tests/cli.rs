use std::path::Path;
use std::process::{Command, Output};

use regcgan::data::{idx_image_bytes, idx_label_bytes};
use regcgan::tensor::Tensor;

const GLYPHS: &str = "\
# tiny glyph run
variant = standard
lambda = 0.1
beta = 0.004
gamma = 1.0
lr = 0.0002
batch_size = 8
iterations = 4
checkpoint_every = 2
sample_every = 2
latent_dim = 8
width = 4
dataset = glyphs
n = 24
resolution = 8
transform = negative
";

const RINGS: &str = "\
batch_size = 16
iterations = 3
checkpoint_every = 0
latent_dim = 4
hidden = 8
dataset = rings
n = 80
";

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regcgan")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn train_into(dir: &Path, config: &str, extra: &[&str]) -> Output {
    let out = dir.to_string_lossy().into_owned();
    let mut args = vec!["train", "--config", config, "--out", out.as_str()];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn missing_config_exits_2_naming_the_path() {
    let o = run(&["train", "--config", "/nonexistent/cfg.txt"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/cfg.txt"));
    assert!(stdout(&o).is_empty());
}

#[test]
fn strict_config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("dup.txt", format!("{GLYPHS}lambda = 0.2\n"), "lambda"),
        ("unknown.txt", format!("{GLYPHS}lamda = 0.2\n"), "lamda"),
        ("bad.txt", GLYPHS.replace("beta = 0.004", "beta = much"), "beta"),
        ("neg.txt", GLYPHS.replace("beta = 0.004", "beta = -1"), "beta"),
    ];
    for (name, text, key) in cases {
        let cfg = write_config(dir.path(), name, &text);
        let o = train_into(&dir.path().join("out"), &cfg, &[]);
        assert_eq!(o.status.code(), Some(2), "{name}: {}", stderr(&o));
        assert!(stderr(&o).contains(key), "{name}: {}", stderr(&o));
    }
}

#[test]
fn train_writes_artifacts_and_reruns_from_its_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "glyphs.txt", GLYPHS);
    let a = dir.path().join("a");
    let o = train_into(&a, &cfg, &["--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).is_empty());
    let line = stdout(&o);
    assert_eq!(line.lines().count(), 1);
    assert!(line.starts_with("iterations=4 loss_d="), "{line}");

    let mut files: Vec<String> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    files.sort();
    assert_eq!(
        files,
        [
            "checkpoint-000000.bin",
            "checkpoint-000002.bin",
            "checkpoint-000004.bin",
            "manifest.txt",
            "metrics.csv",
            "samples-000002.pgm",
            "samples-000004.pgm",
        ]
    );
    let manifest = std::fs::read_to_string(a.join("manifest.txt")).unwrap();
    assert!(manifest.contains("seed = 3\n"));
    assert!(manifest.contains("# tool_version = "));
    let metrics = std::fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("iter,loss_d,loss_g,reg_g,reg_d,cls,acc_src\n"));

    let b = dir.path().join("b");
    let o = train_into(&b, &a.join("manifest.txt").to_string_lossy(), &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read(b.join("metrics.csv")).unwrap(), metrics.as_bytes());
    assert_eq!(
        std::fs::read(b.join("checkpoint-000004.bin")).unwrap(),
        std::fs::read(a.join("checkpoint-000004.bin")).unwrap()
    );
}

#[test]
fn eval_metrics_print_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "glyphs.txt", GLYPHS);
    let run_dir = dir.path().join("g");
    assert!(train_into(&run_dir, &cfg, &[]).status.success());
    let ck = run_dir.join("checkpoint-000004.bin").to_string_lossy().into_owned();

    let o = run(&["eval", "--checkpoint", &ck, "--metric", "correspondence", "--n", "20"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let line = stdout(&o);
    assert_eq!(line.lines().count(), 1);
    assert!(
        line.starts_with("mean_error=") && line.contains(" baseline_error="),
        "{line}"
    );
    assert!(run_dir.join("correspondence.csv").exists());

    let o = run(&[
        "eval",
        "--checkpoint",
        &ck,
        "--metric",
        "correspondence",
        "--n",
        "20",
        "--trials",
        "3",
    ]);
    assert!(stdout(&o).contains('±'), "{}", stdout(&o));

    let o = run(&["eval", "--checkpoint", &ck, "--metric", "interp", "--steps", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let pgm = std::fs::read(run_dir.join("interp.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n32 16\n255\n"));

    // no classifier in this checkpoint
    let o = run(&["eval", "--checkpoint", &ck, "--metric", "uda"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn uda_eval_format_single_and_trials() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "rings.txt", RINGS);
    let run_dir = dir.path().join("r");
    let o = train_into(&run_dir, &cfg, &["--uda"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ck = run_dir.join("checkpoint-000003.bin").to_string_lossy().into_owned();

    let o = run(&["eval", "--checkpoint", &ck, "--metric", "uda", "--test-n", "50"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let line = stdout(&o);
    let fields: Vec<&str> = line.split_whitespace().collect();
    assert_eq!(fields.len(), 2, "{line}");
    for (f, key) in fields.iter().zip(["acc_sampled=", "acc_test="]) {
        let v: f64 = f.strip_prefix(key).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }

    let o = run(&[
        "eval",
        "--checkpoint",
        &ck,
        "--metric",
        "uda",
        "--trials",
        "3",
        "--test-n",
        "50",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let line = stdout(&o);
    for field in line.split_whitespace() {
        let (_, v) = field.split_once('=').unwrap();
        let (m, s) = v.split_once('±').unwrap();
        assert!(m.parse::<f64>().is_ok() && s.parse::<f64>().unwrap() >= 0.0, "{line}");
    }
    let csv = std::fs::read_to_string(run_dir.join("uda.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn missing_checkpoint_exits_2() {
    let o = run(&["eval", "--checkpoint", "/nonexistent/ck.bin", "--metric", "uda"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/ck.bin"));
}

#[test]
fn correspondence_on_digits_is_a_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let n = 30;
    let data: Vec<f64> = (0..n * 64).map(|i| ((i * 37) % 255) as f64 / 127.5 - 1.0).collect();
    let x = Tensor::new(&[n, 1, 8, 8], data).unwrap();
    let labels: Vec<usize> = (0..n).map(|i| i % 10).collect();
    for side in ["src", "tgt"] {
        std::fs::write(dir.path().join(format!("{side}-images")), idx_image_bytes(&x).unwrap()).unwrap();
        std::fs::write(
            dir.path().join(format!("{side}-labels")),
            idx_label_bytes(&labels).unwrap(),
        )
        .unwrap();
    }
    let p = |s: &str| dir.path().join(s).to_string_lossy().into_owned();
    let text = format!(
        "batch_size = 4\niterations = 1\ncheckpoint_every = 0\nlatent_dim = 4\nwidth = 2\ndataset = digits\n\
         resolution = 8\nsource_n = 20\ntarget_n = 18\nsource_images = {}\nsource_labels = {}\n\
         target_images = {}\ntarget_labels = {}\n",
        p("src-images"),
        p("src-labels"),
        p("tgt-images"),
        p("tgt-labels")
    );
    let cfg = write_config(dir.path(), "digits.txt", &text);
    let run_dir = dir.path().join("d");
    let o = train_into(&run_dir, &cfg, &["--uda"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ck = run_dir.join("checkpoint-000001.bin").to_string_lossy().into_owned();
    let o = run(&["eval", "--checkpoint", &ck, "--metric", "correspondence"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("ground-truth"));
    let o = run(&["eval", "--checkpoint", &ck, "--metric", "uda"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn divergence_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{RINGS}variant = least_squares\nlr = 10000\n").replace("iterations = 3", "iterations = 50");
    let cfg = write_config(dir.path(), "hot.txt", &text);
    let o = train_into(&dir.path().join("h"), &cfg, &[]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged"));
}

#[test]
fn gradcheck_passes_on_a_clean_build() {
    let o = run(&["gradcheck", "--instances", "20"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 1);
    assert!(stdout(&o).starts_with("gradcheck ok"));
}

#[test]
fn gradcheck_names_an_injected_reg_g_bug() {
    let o = run(&["gradcheck", "--instances", "2", "--inject-fault", "reg_g"]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("max_rel_err"), "{err}");
    assert!(
        err.lines().any(|l| l.starts_with("reg_g ") && l.ends_with("FAIL")),
        "{err}"
    );
    assert!(err.contains("gradient check failed: reg_g"), "{err}");
}
