//! `ccgan` command-line tool.
//!
//! Settings come from a `--config` file; any `--section.key value` pair after
//! the named flags overrides the file, and `CCGAN_SEED` overrides every seed
//! last. Exit codes: 0 success, 2 configuration error, 3 runtime abort.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ccgan::bounds::{bound_sweep, estimate_u_discriminator, write_sweep_csv, BoundInputs};
use ccgan::conditioning::{Discriminator, EmbeddingStack};
use ccgan::config::{manifest_to_config_text, ConfigFile};
use ccgan::data::{
    generate, load_csv, replicate_minority, save_csv, Family, LabeledDataset, Manifest, Oracle,
};
use ccgan::eval::{
    conditional_mean_error, diversity, intra_fid, label_score, sfid, Autoencoder, FeatureExtractor,
    SfidConfig, SfidReport,
};
use ccgan::netcore::{Checkpoint, Tensor};
use ccgan::trainer::{generate_from_checkpoint, train};
use ccgan::vicinal::VicinalParams;
use ccgan::{fmt_f64, Error};

#[derive(Parser)]
#[command(
    name = "ccgan",
    version,
    about = "Continuous conditional GANs on synthetic data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: PathBuf,
    /// `--section.key value` overrides applied after the file.
    #[arg(
        trailing_var_arg = true,
        allow_hyphen_values = true,
        value_name = "OVERRIDES"
    )]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic train/held-out CSVs.
    GenData {
        /// Output directory; defaults to dataset.dir.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Train a CcGAN or baseline.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a generator checkpoint.
    Eval {
        /// Generator checkpoint.
        #[arg(long, required_unless_present = "real_vs_real")]
        checkpoint: Option<PathBuf>,
        /// Compare the real data against itself instead of a generator.
        #[arg(long)]
        real_vs_real: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Pre-train the label embedding networks.
    Embed {
        #[command(flatten)]
        common: Common,
    },
    /// Sweep the discriminator error-bound terms over kappa/nu grids.
    Bounds {
        /// Discriminator checkpoint used to estimate U when bounds.u is unset.
        #[arg(long)]
        discriminator: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

type Outcome<T> = std::result::Result<T, Failure>;

trait Stage<T> {
    fn config(self) -> Outcome<T>;
    fn runtime(self) -> Outcome<T>;
}

impl<T, E: Into<anyhow::Error>> Stage<T> for std::result::Result<T, E> {
    fn config(self) -> Outcome<T> {
        self.map_err(|e| Failure::Config(e.into()))
    }
    fn runtime(self) -> Outcome<T> {
        self.map_err(|e| {
            let e: anyhow::Error = e.into();
            match e.downcast_ref::<Error>() {
                Some(Error::Config(_)) => Failure::Config(e),
                _ => Failure::Runtime(e),
            }
        })
    }
}

fn load_config(common: &Common) -> anyhow::Result<ConfigFile> {
    let mut cfg = ConfigFile::read(&common.config)?;
    let mut it = common.overrides.iter();
    while let Some(flag) = it.next() {
        let Some(key) = flag.strip_prefix("--") else {
            bail!("expected `--section.key value`, got {flag:?}");
        };
        let value = it
            .next()
            .with_context(|| format!("override {flag} has no value"))?;
        cfg.set(key, value.as_str())?;
    }
    if let Ok(seed) = std::env::var("CCGAN_SEED") {
        let seed: u64 = seed
            .parse()
            .with_context(|| format!("CCGAN_SEED={seed:?} is not an integer"))?;
        cfg.override_seed(seed);
    }
    Ok(cfg)
}

fn warn_unused(cfg: &ConfigFile, cmd: &str) {
    for key in cfg.unused() {
        eprintln!("note: {key} is not used by `{cmd}`");
    }
}

fn write_config_manifest(path: &Path, m: &Manifest) -> anyhow::Result<()> {
    std::fs::write(path, manifest_to_config_text(m))
        .with_context(|| format!("writing {}", path.display()))
}

fn echo_keys(cfg: &ConfigFile, prefixes: &[&str], m: &mut Manifest) {
    for (k, v) in cfg.entries() {
        if prefixes.iter().any(|p| k.starts_with(p)) && m.get(k).is_none() {
            m.insert(k, v);
        }
    }
}

fn load_datasets(cfg: &ConfigFile) -> anyhow::Result<(LabeledDataset, LabeledDataset)> {
    let (train_path, heldout_path) = cfg.dataset_paths();
    let mut train =
        load_csv(&train_path).with_context(|| format!("loading {}", train_path.display()))?;
    let heldout = if heldout_path.exists() {
        load_csv(&heldout_path).with_context(|| format!("loading {}", heldout_path.display()))?
    } else {
        LabeledDataset::empty(
            train.dim(),
            train.labels().raw_min(),
            train.labels().raw_max(),
        )?
        .with_spec(train.spec().cloned())
    };
    if let Some(min) = cfg.get::<usize>("dataset.min_per_label")? {
        let seed: u64 = cfg.get_or("dataset.seed", 0)?;
        train = replicate_minority(&train, min, &mut ChaCha8Rng::seed_from_u64(seed))?;
    }
    Ok((train, heldout))
}

fn merge(a: &LabeledDataset, b: &LabeledDataset) -> anyhow::Result<LabeledDataset> {
    let mut out = a.clone();
    for i in 0..b.len() {
        out.push(b.sample(i).to_vec(), b.label(i))?;
    }
    Ok(out)
}

fn cmd_gen_data(common: &Common, out: Option<PathBuf>) -> Outcome<()> {
    let cfg = load_config(common).config()?;
    let spec = cfg.synthetic_spec().config()?;
    let seed: u64 = cfg.get_or("dataset.seed", 0).config()?;
    let dir = out
        .or_else(|| cfg.path("dataset.dir"))
        .unwrap_or_else(|| PathBuf::from("data"));
    warn_unused(&cfg, "gen-data");

    let (train, heldout, _) = generate(&spec, &mut ChaCha8Rng::seed_from_u64(seed)).runtime()?;
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating {}", dir.display()))
        .runtime()?;
    save_csv(&train, &dir.join("train.csv")).runtime()?;
    save_csv(&heldout, &dir.join("heldout.csv")).runtime()?;

    let mut m = Manifest::new();
    m.insert("dataset.family", spec.family.as_str());
    m.insert("dataset.mean_path", ccgan::data::format_path(&spec.path));
    m.insert("dataset.noise", fmt_f64(spec.noise));
    m.insert("dataset.n_labels", spec.n_labels.to_string());
    m.insert("dataset.per_label", spec.per_label.to_string());
    m.insert("dataset.holdout", fmt_f64(spec.holdout));
    m.insert("dataset.raw_min", fmt_f64(spec.raw_min));
    m.insert("dataset.raw_max", fmt_f64(spec.raw_max));
    m.insert("dataset.seed", seed.to_string());
    m.insert("dataset.dir", dir.display().to_string());
    write_config_manifest(&dir.join("gen-data.manifest"), &m).runtime()?;

    for (name, d) in [("train", &train), ("heldout", &heldout)] {
        let distinct = d.distinct_labels();
        let counts: Vec<usize> = distinct.iter().map(|&y| d.window(y, 0.0).len()).collect();
        let (lo, hi) = (
            counts.iter().min().copied().unwrap_or(0),
            counts.iter().max().copied().unwrap_or(0),
        );
        println!(
            "{name}: {} samples, {} distinct labels, {lo}..{hi} per label",
            d.len(),
            distinct.len()
        );
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_train(common: &Common) -> Outcome<()> {
    let cfg = load_config(common).config()?;
    let mut tc = cfg.train_config().config()?;
    let embed_dir = cfg.path("embed.dir");
    let (train_data, heldout) = load_datasets(&cfg).runtime()?;
    let min_per_label = cfg.get::<usize>("dataset.min_per_label").config()?;
    warn_unused(&cfg, "train");

    let (train_csv, heldout_csv) = cfg.dataset_paths();
    tc.provenance
        .insert("dataset.train_csv", train_csv.display().to_string());
    tc.provenance
        .insert("dataset.heldout_csv", heldout_csv.display().to_string());
    if let Some(min) = min_per_label {
        tc.provenance
            .insert("dataset.min_per_label", min.to_string());
    }
    if let Some(dir) = &tc.out_dir {
        tc.provenance
            .insert("train.out_dir", dir.display().to_string());
    }
    let stack = match (&embed_dir, tc.method.label_input()) {
        (Some(dir), ccgan::conditioning::LabelInputMode::Ili) => {
            tc.provenance.insert("embed.dir", dir.display().to_string());
            Some(EmbeddingStack::load(dir).runtime()?)
        }
        _ => None,
    };
    let out = train(&train_data, Some(&heldout), &tc, stack).runtime()?;
    if let Some(v) = &out.vicinal {
        println!(
            "sigma = {}, kappa = {}, nu = {}",
            fmt_f64(v.sigma),
            fmt_f64(v.kappa),
            fmt_f64(v.nu)
        );
    }
    if let Some(r) = out.log.last() {
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_else(|| "-".into());
        println!(
            "iter {}: d_loss {} g_loss {} label_score {} cond_mean_err {}",
            r.iter,
            fmt_f64(r.d_loss),
            fmt_f64(r.g_loss),
            opt(r.label_score),
            opt(r.cond_mean_err)
        );
    }
    if let Some(dir) = &tc.out_dir {
        println!("wrote {}", dir.display());
    }
    Ok(())
}

/// Label set an evaluation generates at, with the real data it is compared to.
fn eval_target(
    cfg: &ConfigFile,
    train: &LabeledDataset,
    heldout: &LabeledDataset,
) -> anyhow::Result<(Vec<f64>, LabeledDataset)> {
    let which: String = cfg.get_or("eval.labels", "heldout".to_string())?;
    Ok(match which.as_str() {
        "heldout" if !heldout.is_empty() => (heldout.distinct_labels(), heldout.clone()),
        "heldout" | "train" => (train.distinct_labels(), train.clone()),
        other => {
            let n: usize = other
                .strip_prefix("grid:")
                .and_then(|n| n.parse().ok())
                .filter(|&n| n >= 2)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "eval.labels: expected heldout, train or grid:N, got {other:?}"
                    ))
                })?;
            let grid = (0..n).map(|k| k as f64 / (n - 1) as f64).collect();
            (grid, merge(train, heldout)?)
        }
    })
}

fn cmd_eval(common: &Common, checkpoint: Option<&Path>, real_vs_real: bool) -> Outcome<()> {
    let cfg = load_config(common).config()?;
    let settings = cfg.eval_settings().config()?;
    let seed: u64 = cfg.get_or("eval.seed", 0).config()?;
    let extractor_name: String = cfg
        .get_or("eval.extractor", "identity".to_string())
        .config()?;
    let centers_n: Option<usize> = cfg.get("eval.sfid_centers").config()?;
    let min_count: usize = cfg.get_or("eval.min_count", 2).config()?;
    let ae_epochs: usize = cfg.get_or("eval.ae_epochs", 200).config()?;
    let out_dir = cfg
        .path("eval.out_dir")
        .unwrap_or_else(|| PathBuf::from("eval"));
    let embed_dir = cfg.path("embed.dir");
    let (train_data, heldout) = load_datasets(&cfg).runtime()?;
    let (labels, real) = eval_target(&cfg, &train_data, &heldout).config()?;
    warn_unused(&cfg, "eval");

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fake = if real_vs_real {
        real.clone()
    } else {
        let path = checkpoint.expect("clap requires --checkpoint without --real-vs-real");
        let ck = Checkpoint::read(path).runtime()?;
        generate_from_checkpoint(&ck, &labels, settings.n_per_label, &mut rng).runtime()?
    };
    let stack = match &embed_dir {
        Some(dir) => Some(EmbeddingStack::load(dir).runtime()?),
        None => None,
    };
    let fx = match extractor_name.as_str() {
        "identity" => FeatureExtractor::Identity,
        "regressor" => match &stack {
            Some(s) => FeatureExtractor::Regressor(Box::new(s.regressor.clone())),
            None => {
                return Err(Failure::Config(anyhow::anyhow!(
                    "eval.extractor = regressor needs embed.dir"
                )))
            }
        },
        "autoencoder" => {
            let ae = Autoencoder::train(
                &merge(&train_data, &heldout).runtime()?,
                32,
                2,
                ae_epochs,
                &mut rng,
            )
            .runtime()?;
            FeatureExtractor::Autoencoder(Box::new(ae))
        }
        other => {
            return Err(Failure::Config(anyhow::anyhow!(
                "unknown eval.extractor {other:?}"
            )))
        }
    };
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))
        .runtime()?;

    let mut m = Manifest::new();
    m.insert("eval.n_per_label", settings.n_per_label.to_string());
    m.insert("eval.seed", seed.to_string());
    m.insert("eval.extractor", fx.name());
    m.insert("eval.min_count", min_count.to_string());
    echo_keys(&cfg, &["eval.", "dataset.", "embed.dir"], &mut m);

    if let Some(radius) = settings.sfid_radius {
        let report: SfidReport = if radius == 0.0 && centers_n.is_none() {
            println!("radius 0 on distinct labels: reporting Intra-FID");
            intra_fid(&real, &fake, &real.distinct_labels(), &fx).runtime()?
        } else {
            let centers = match centers_n {
                Some(n) => SfidConfig::even(n, radius).centers,
                None => real.distinct_labels(),
            };
            let mut sc = SfidConfig::new(centers, radius);
            sc.min_count = min_count;
            sfid(&real, &fake, &sc, &fx).runtime()?
        };
        println!("{}", report.summary());
        let labels = real.labels().clone();
        report
            .write_csv(&out_dir.join("sfid.csv"), |c| labels.to_raw(c))
            .runtime()?;
        m.insert("result.sfid_mean", fmt_f64(report.mean));
        m.insert("result.sfid_std", fmt_f64(report.std));
        m.insert("result.sfid_skipped", report.skipped.to_string());
    }
    let oracle = real.spec().cloned().map(Oracle::new);
    let ls = match (&oracle, &stack) {
        (Some(o), _) => Some(label_score(&fake, |x| o.spec().predict_label(x)).runtime()?),
        (None, Some(s)) => {
            let reg = s.regressor.clone();
            Some(
                label_score(&fake, |x| {
                    reg.predict(&[x.to_vec()]).map(|v| v[0]).unwrap_or(f64::NAN)
                })
                .runtime()?,
            )
        }
        (None, None) => None,
    };
    if let Some(ls) = ls {
        println!("label score {}", fmt_f64(ls));
        m.insert("result.label_score", fmt_f64(ls));
    }
    if let Some(o) = &oracle {
        let cme = conditional_mean_error(&fake, o).runtime()?;
        println!("conditional mean error {}", fmt_f64(cme));
        m.insert("result.cond_mean_err", fmt_f64(cme));
        if o.spec().family == Family::TwoMode {
            let spec = o.spec().clone();
            let radius = settings.sfid_radius.unwrap_or(0.0);
            let div =
                diversity(&fake, |x, y| spec.nearest_mode(x, y), 2, &labels, radius).runtime()?;
            println!("diversity {} (skipped: {})", fmt_f64(div.mean), div.skipped);
            m.insert("result.diversity", fmt_f64(div.mean));
        }
    }
    let text: String = manifest_to_config_text(&m)
        .lines()
        .map(|l| {
            if l.starts_with("result.") {
                format!("# {l}\n")
            } else {
                format!("{l}\n")
            }
        })
        .collect();
    let path = out_dir.join("eval.manifest");
    std::fs::write(&path, text)
        .with_context(|| format!("writing {}", path.display()))
        .runtime()?;
    println!("wrote {}", out_dir.display());
    Ok(())
}

fn cmd_embed(common: &Common) -> Outcome<()> {
    let cfg = load_config(common).config()?;
    let ec = cfg.embed_config().config()?;
    let seed: u64 = cfg.get_or("train.seed", 0).config()?;
    let threshold: f64 = cfg.get_or("embed.threshold", 0.05).config()?;
    let dir = cfg
        .path("embed.dir")
        .unwrap_or_else(|| PathBuf::from("embed"));
    let (train_data, _) = load_datasets(&cfg).runtime()?;
    warn_unused(&cfg, "embed");

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let (stack, mae) = EmbeddingStack::train(&train_data, &ec, &mut rng).runtime()?;
    let consistency = stack
        .self_consistency(&train_data.distinct_labels())
        .runtime()?;
    stack.save(&dir).runtime()?;

    let mut m = Manifest::new();
    m.insert("embed.d_f", ec.d_f.to_string());
    m.insert("embed.t1_hidden", join(&ec.t1_hidden));
    m.insert("embed.t3_hidden", join(&ec.t3_hidden));
    m.insert("embed.sigma_gamma", fmt_f64(ec.sigma_gamma));
    m.insert("embed.regressor_epochs", ec.regressor_epochs.to_string());
    m.insert("embed.embed_steps", ec.embed_steps.to_string());
    m.insert("embed.batch", ec.batch.to_string());
    m.insert("embed.lr", fmt_f64(ec.lr));
    m.insert("embed.threshold", fmt_f64(threshold));
    m.insert("embed.dir", dir.display().to_string());
    m.insert("train.seed", seed.to_string());
    m.insert("embed.regressor_mae", fmt_f64(mae));
    m.insert("embed.self_consistency", fmt_f64(consistency));
    echo_keys(&cfg, &["dataset."], &mut m);
    write_config_manifest(&dir.join("embed.manifest"), &m).runtime()?;

    println!("regressor MAE {} (normalized labels)", fmt_f64(mae));
    println!(
        "self-consistency {} (threshold {})",
        fmt_f64(consistency),
        fmt_f64(threshold)
    );
    if consistency >= threshold {
        eprintln!("warning: self-consistency is above embed.threshold");
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn join(v: &[usize]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn cmd_bounds(common: &Common, discriminator: Option<&Path>) -> Outcome<()> {
    let cfg = load_config(common).config()?;
    let kappas: Vec<f64> = cfg.get_list("bounds.kappa_grid").config()?.ok_or_else(|| {
        Failure::Config(anyhow::anyhow!("missing required key bounds.kappa_grid"))
    })?;
    let nus: Option<Vec<f64>> = cfg.get_list("bounds.nu_grid").config()?;
    let vic = cfg.vicinal().config()?;
    let u: Option<f64> = cfg.get("bounds.u").config()?;
    let mut inputs = BoundInputs::new(Vec::new(), 1.0, 1.0);
    inputs.mc_draws = cfg.get_or("bounds.mc_draws", inputs.mc_draws).config()?;
    inputs.seed = cfg.get_or("bounds.seed", 0).config()?;
    inputs.m_r = cfg.get("bounds.m_r").config()?;
    inputs.m_g = cfg.get("bounds.m_g").config()?;
    inputs.l_r = cfg.get("bounds.l_r").config()?;
    inputs.l_g = cfg.get("bounds.l_g").config()?;
    let fake_csv = cfg.path("bounds.fake_csv");
    let out = cfg
        .path("bounds.out")
        .unwrap_or_else(|| PathBuf::from("bounds.csv"));
    if u.is_none() && discriminator.is_none() {
        return Err(Failure::Config(anyhow::anyhow!(
            "set bounds.u or pass --discriminator to estimate it"
        )));
    }
    let (train_data, _) = load_datasets(&cfg).runtime()?;
    warn_unused(&cfg, "bounds");

    let labels = train_data.labels();
    let sigma = match vic.sigma {
        Some(s) => s,
        None => {
            VicinalParams::rule_of_thumb(labels, vic.m_kappa)
                .runtime()?
                .sigma
        }
    };
    inputs.real_labels = labels.labels().to_vec();
    inputs.sigma = sigma;
    inputs.u = match u {
        Some(u) => u,
        None => {
            let path = discriminator.expect("checked above");
            let d = Discriminator::from_checkpoint(&Checkpoint::read(path).runtime()?).runtime()?;
            let probe = Tensor::from_rows(train_data.samples(), train_data.dim()).runtime()?;
            estimate_u_discriminator(&d, &probe, labels.labels()).runtime()?
        }
    };
    if let Some(p) = &fake_csv {
        let fake = load_csv(p)
            .with_context(|| format!("loading {}", p.display()))
            .runtime()?;
        inputs.fake_labels = Some(fake.labels().labels().to_vec());
    }
    let nus = nus.unwrap_or_else(|| kappas.iter().map(|k| 1.0 / (k * k)).collect());
    let rows = bound_sweep(&inputs, &kappas, &nus).runtime()?;
    write_sweep_csv(&rows, &out).runtime()?;

    let mut m = Manifest::new();
    m.insert("vicinal.sigma", fmt_f64(sigma));
    m.insert("bounds.u", fmt_f64(inputs.u));
    m.insert(
        "bounds.kappa_grid",
        kappas
            .iter()
            .map(|v| fmt_f64(*v))
            .collect::<Vec<_>>()
            .join(","),
    );
    m.insert(
        "bounds.nu_grid",
        nus.iter()
            .map(|v| fmt_f64(*v))
            .collect::<Vec<_>>()
            .join(","),
    );
    m.insert("bounds.mc_draws", inputs.mc_draws.to_string());
    m.insert("bounds.seed", inputs.seed.to_string());
    echo_keys(&cfg, &["bounds.", "dataset."], &mut m);
    write_config_manifest(&out.with_extension("manifest"), &m).runtime()?;
    println!(
        "{} rows (U = {}, sigma = {})",
        rows.len(),
        fmt_f64(inputs.u),
        fmt_f64(sigma)
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData { out, common } => cmd_gen_data(common, out.clone()),
        Command::Train { common } => cmd_train(common),
        Command::Eval {
            checkpoint,
            real_vs_real,
            common,
        } => cmd_eval(common, checkpoint.as_deref(), *real_vs_real),
        Command::Embed { common } => cmd_embed(common),
        Command::Bounds {
            discriminator,
            common,
        } => cmd_bounds(common, discriminator.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
