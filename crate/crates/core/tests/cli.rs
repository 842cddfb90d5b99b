use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ccgan::config::ConfigFile;
use ccgan::data::load_csv;

const SMALL: &str = "\
dataset.n_labels = 12
dataset.per_label = 4
train.iters = 6
train.eval_every = 3
train.batch_d = 16
train.batch_g = 16
model.g_hidden = 8
model.d_hidden = 8
embed.t1_hidden = 8
embed.t3_hidden = 8
embed.regressor_epochs = 5
embed.embed_steps = 10
eval.n_per_label = 5
";

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new(extra: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let text = format!(
            "{SMALL}dataset.dir = {}\ntrain.out_dir = {}\n{extra}",
            dir.path().join("data").display(),
            dir.path().join("run").display(),
        );
        std::fs::write(dir.path().join("c.cfg"), text).unwrap();
        Workspace { dir }
    }

    fn path(&self, p: &str) -> PathBuf {
        self.dir.path().join(p)
    }

    fn run(&self, args: &[&str]) -> Output {
        self.run_env(args, None)
    }

    fn run_env(&self, args: &[&str], seed: Option<&str>) -> Output {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_ccgan"));
        cmd.arg(args[0])
            .arg("--config")
            .arg(self.path("c.cfg"))
            .args(&args[1..]);
        cmd.env_remove("CCGAN_SEED");
        if let Some(s) = seed {
            cmd.env("CCGAN_SEED", s);
        }
        cmd.output().unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn gen_data_writes_reloadable_files() {
    let ws = Workspace::new("");
    let stdout = ws.ok(&["gen-data"]);
    assert!(stdout.contains("distinct labels"));
    let train = load_csv(&ws.path("data/train.csv")).unwrap();
    let heldout = load_csv(&ws.path("data/heldout.csv")).unwrap();
    assert_eq!(train.len() + heldout.len(), 48);
    assert!(train.spec().is_some());
    assert!(ws.path("data/train.manifest").exists());
    let m = ConfigFile::read(&ws.path("data/gen-data.manifest")).unwrap();
    assert_eq!(
        m.synthetic_spec().unwrap(),
        ConfigFile::read(&ws.path("c.cfg"))
            .unwrap()
            .synthetic_spec()
            .unwrap()
    );
}

#[test]
fn gen_data_zero_holdout_and_seed_change() {
    let ws = Workspace::new("");
    ws.ok(&["gen-data", "--dataset.holdout", "0"]);
    assert_eq!(read(&ws.path("data/heldout.csv")), "y,x1,x2\n");
    let a = load_csv(&ws.path("data/train.csv")).unwrap();
    ws.ok(&["gen-data", "--dataset.holdout", "0", "--dataset.seed", "5"]);
    let b = load_csv(&ws.path("data/train.csv")).unwrap();
    assert_eq!(a.len(), b.len());
    assert_eq!(a.labels(), b.labels());
    assert_ne!(a.samples(), b.samples());
}

#[test]
fn train_writes_run_and_reproduces() {
    let ws =
        Workspace::new("vicinal.kernel = soft\nmodel.label_input = ili\nvicinal.sigma = auto\n");
    ws.ok(&["gen-data"]);
    let stdout = ws.ok(&["train"]);
    assert!(stdout.contains("sigma = "));
    for f in [
        "generator.ckpt",
        "discriminator.ckpt",
        "runlog.csv",
        "run.manifest",
    ] {
        assert!(ws.path("run").join(f).exists(), "{f}");
    }
    let log = read(&ws.path("run/runlog.csv"));
    assert!(log.starts_with("iter,d_loss,g_loss,label_score,cond_mean_err,sfid,fallbacks\n"));
    assert_eq!(log.lines().count(), 3);

    // The manifest records the resolved vicinal values and replays the run.
    let manifest = ConfigFile::read(&ws.path("run/run.manifest")).unwrap();
    let sigma: f64 = manifest.require("vicinal.sigma").unwrap();
    assert!(sigma > 0.0);
    let replay = ws.path("replay.cfg");
    let text = read(&ws.path("run/run.manifest"));
    std::fs::write(
        &replay,
        text.replace(
            &ws.path("run").display().to_string(),
            &ws.path("run2").display().to_string(),
        ),
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ccgan"))
        .args(["train", "--config"])
        .arg(&replay)
        .env_remove("CCGAN_SEED")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(read(&ws.path("run2/runlog.csv")), log);

    ws.ok(&["train"]);
    assert_eq!(read(&ws.path("run/runlog.csv")), log);
}

#[test]
fn train_dispatches_every_method() {
    let ws = Workspace::new("");
    ws.ok(&["gen-data"]);
    for extra in [
        &["--vicinal.kernel", "hard", "--model.label_input", "nli"][..],
        &["--train.loss", "hinge"],
        &["--train.method", "cgan_bin", "--bin.K", "4"],
        &["--train.method", "cgan_concat"],
    ] {
        let mut args = vec!["train"];
        args.extend_from_slice(extra);
        ws.ok(&args);
    }
}

#[test]
fn config_errors_exit_two_and_runtime_errors_exit_three() {
    let ws = Workspace::new("");
    let code = |args: &[&str]| ws.run(args).status.code();
    assert_eq!(code(&["train", "--train.method", "cgan_bin"]), Some(2));
    assert_eq!(code(&["train", "--train.bogus", "1"]), Some(2));
    assert_eq!(code(&["train", "--train.iters", "zero"]), Some(2));
    assert_eq!(code(&["train", "--train.iters"]), Some(2));
    assert_eq!(ws.run_env(&["gen-data"], Some("x")).status.code(), Some(2));
    // No dataset generated yet.
    let out = ws.run(&["train"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.csv"));
}

#[test]
fn seed_env_overrides_config() {
    let ws = Workspace::new("dataset.seed = 1\n");
    ws.ok(&["gen-data"]);
    let a = read(&ws.path("data/train.csv"));
    assert!(ws.run_env(&["gen-data"], Some("2")).status.success());
    let b = read(&ws.path("data/train.csv"));
    ws.ok(&["gen-data", "--dataset.seed", "2"]);
    assert_ne!(a, b);
    assert_eq!(read(&ws.path("data/train.csv")), b);
}

#[test]
fn eval_reports() {
    let ws = Workspace::new("eval.sfid_radius = 0.1\n");
    ws.ok(&["gen-data"]);
    let rr = ws.ok(&[
        "eval",
        "--real-vs-real",
        "--eval.out_dir",
        ws.path("ev0").to_str().unwrap(),
    ]);
    assert!(
        rr.contains("SFID 0.0000000000000000e0±0.0000000000000000e0"),
        "{rr}"
    );
    assert!(ws.path("ev0/sfid.csv").exists());

    ws.ok(&["train", "--model.label_input", "nli"]);
    let ck = ws.path("run/generator.ckpt");
    let ck = ck.to_str().unwrap();
    let out = ws.ok(&[
        "eval",
        "--checkpoint",
        ck,
        "--eval.sfid_radius",
        "0",
        "--eval.out_dir",
        ws.path("ev1").to_str().unwrap(),
    ]);
    assert!(out.contains("Intra-FID"), "{out}");
    assert!(out.contains("label score") && out.contains("conditional mean error"));

    let out = ws.ok(&[
        "eval",
        "--checkpoint",
        ck,
        "--eval.labels",
        "grid:2000",
        "--eval.n_per_label",
        "1",
        "--eval.sfid_centers",
        "50",
        "--eval.out_dir",
        ws.path("ev2").to_str().unwrap(),
    ]);
    assert!(out.contains("SFID"));
    assert!(read(&ws.path("ev2/sfid.csv")).lines().count() > 1);
    let m = ConfigFile::read(&ws.path("ev2/eval.manifest")).unwrap();
    assert_eq!(
        m.get::<String>("eval.labels").unwrap().as_deref(),
        Some("grid:2000")
    );

    assert_eq!(ws.run(&["eval"]).status.code(), Some(2));
}

#[test]
fn embed_writes_checkpoints_reproducibly() {
    let ws = Workspace::new("");
    ws.ok(&["gen-data"]);
    let dir = ws.path("embed");
    let dir = dir.to_str().unwrap();
    let out = ws.ok(&["embed", "--embed.dir", dir]);
    assert!(out.contains("self-consistency"));
    for f in ["t1.ckpt", "t2.ckpt", "t3.ckpt", "embed.manifest"] {
        assert!(ws.path("embed").join(f).exists(), "{f}");
    }
    let first = std::fs::read(ws.path("embed/t3.ckpt")).unwrap();
    let m = ConfigFile::read(&ws.path("embed/embed.manifest")).unwrap();
    assert!(m.get::<f64>("embed.self_consistency").unwrap().is_some());
    ws.ok(&["embed", "--embed.dir", dir]);
    assert_eq!(std::fs::read(ws.path("embed/t3.ckpt")).unwrap(), first);

    // Training can reuse the saved embedding.
    ws.ok(&["train", "--embed.dir", dir]);
    assert!(read(&ws.path("run/run.manifest")).contains("embed.dir"));

    // A missing embedding directory is a runtime failure.
    let missing = ws.path("nowhere");
    assert_eq!(
        ws.run(&["train", "--embed.dir", missing.to_str().unwrap()])
            .status
            .code(),
        Some(3)
    );
}

#[test]
fn bounds_sweep_rows_and_determinism() {
    let ws = Workspace::new("bounds.u = 1\nbounds.mc_draws = 500\n");
    ws.ok(&["gen-data"]);
    let out_path = ws.path("b.csv");
    let out = out_path.to_str().unwrap();
    ws.ok(&["bounds", "--bounds.kappa_grid", "0.05", "--bounds.out", out]);
    assert_eq!(read(&out_path).lines().count(), 2);

    ws.ok(&[
        "bounds",
        "--bounds.kappa_grid",
        "0.01,0.02,0.05,0.1",
        "--bounds.nu_grid",
        "400",
        "--bounds.out",
        out,
    ]);
    let a = read(&out_path);
    let hard: Vec<f64> = a
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(hard.len(), 4);
    assert!(hard.windows(2).all(|w| w[1] <= w[0]), "{hard:?}");
    ws.ok(&[
        "bounds",
        "--bounds.kappa_grid",
        "0.01,0.02,0.05,0.1",
        "--bounds.nu_grid",
        "400",
        "--bounds.out",
        out,
    ]);
    assert_eq!(read(&out_path), a);

    let missing_u = Workspace::new("");
    missing_u.ok(&["gen-data"]);
    assert_eq!(
        missing_u
            .run(&["bounds", "--bounds.kappa_grid", "0.1"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(ws.run(&["bounds"]).status.code(), Some(2));
}
