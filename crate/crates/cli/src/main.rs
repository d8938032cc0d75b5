use anyhow::{bail, Context};
use atac_core::atac::AtacParams;
use atac_core::augment::suite;
use atac_core::config::{RunConfig, Setup};
use atac_core::encoder::StoreEncoder;
use atac_core::eval::{
    ablate_suites, atac_from_store, evaluate_attacked, export_embeddings, roc_curve, run_attack,
    sweep, AttackKind, AttackSpec, AttackedSet, DefenseSpec, SweepParameter,
};
use atac_core::imgio::{read_labels, write_image, write_labels};
use atac_core::report::{run_dir_name, to_canonical_json};
use atac_core::store::{EmbeddingStore, STORE_VERSION};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "atac",
    version,
    about = "Test-time adversarial correction experiments on a synthetic task"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML file with `task`, `encoder`, `temperature` and `seeds` tables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Comma-separated seeds; overrides the config file.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Samples per class; overrides the config file.
    #[arg(long, global = true)]
    per_class: Option<usize>,
    /// Worker threads for per-sample work.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Output root directory.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic task as IMG1 images plus a label file.
    GenData,
    /// Encode every sample and its suite views into an EMB1 store.
    ExportEmbeddings {
        #[arg(long, default_value = "default")]
        suite: String,
    },
    /// Clean and robust accuracy for one defense under one attack.
    Eval {
        #[arg(long, default_value = "atac")]
        defense: String,
        #[arg(long, default_value = "pgd")]
        attack: String,
        /// Adaptive-attack weight on the gate statistic.
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Correction accuracy over a grid of `tau_star` or `alpha` values.
    Sweep {
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
        #[arg(long, default_value = "pgd")]
        attack: String,
    },
    /// ROC points of the drift-consistency score, clean vs attacked.
    Roc {
        #[arg(long, default_value = "pgd")]
        attack: String,
    },
    /// Correction accuracy with each augmentation suite.
    AblateAugs {
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "default,asymmetric,random,color,more"
        )]
        suites: Vec<String>,
        #[arg(long, default_value = "pgd")]
        attack: String,
    },
    /// Run the correction on a stored embedding file instead of an encoder.
    EvalStore {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value = "default")]
        suite: String,
    },
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    seed: u64,
    run: &'a RunConfig,
    details: serde_json::Value,
    store_version: u16,
    image_format: &'static str,
    report_format: &'static str,
}

fn load_config(common: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(seeds) = &common.seeds {
        cfg.seeds = seeds.clone();
    }
    if let Some(n) = common.per_class {
        cfg.task.per_class = n;
    }
    if cfg.seeds.is_empty() {
        bail!("no seeds given");
    }
    if common.jobs == 0 {
        bail!("--jobs must be at least 1");
    }
    Ok(cfg)
}

/// Creates the run directory for `seed` and writes its manifest.
fn run_dir(
    common: &Common,
    cfg: &RunConfig,
    command: &str,
    seed: u64,
    details: serde_json::Value,
) -> anyhow::Result<PathBuf> {
    let manifest = Manifest {
        command,
        seed,
        run: cfg,
        details,
        store_version: STORE_VERSION,
        image_format: "IMG1",
        report_format: "canonical-json-1",
    };
    let dir = common.out.join(run_dir_name(seed, &manifest)?);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join("manifest.json"), to_canonical_json(&manifest)?)?;
    Ok(dir)
}

fn attack_spec(name: &str, lambda: Option<f64>) -> anyhow::Result<AttackSpec> {
    let kind: AttackKind = name.parse()?;
    let mut spec = AttackSpec::new(kind);
    if let Some(l) = lambda {
        spec.lambda = l;
    }
    Ok(spec)
}

fn attacked(setup: &Setup, spec: &AttackSpec, jobs: usize) -> atac_core::Result<AttackedSet> {
    run_attack(
        &setup.task.samples,
        &setup.task.labels,
        &setup.encoder,
        &setup.head,
        spec,
        setup.seed,
        jobs,
    )
}

fn write_csv(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    print!("{text}");
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let common = &cli.common;
    let cfg = load_config(common)?;
    let jobs = common.jobs;
    match &cli.command {
        Command::GenData => {
            for &seed in &cfg.seeds {
                let setup = cfg.setup(seed)?;
                let dir = run_dir(common, &cfg, "gen-data", seed, serde_json::Value::Null)?;
                std::fs::create_dir_all(dir.join("images"))?;
                std::fs::create_dir_all(dir.join("prototypes"))?;
                for (i, x) in setup.task.samples.iter().enumerate() {
                    write_image(&dir.join("images").join(format!("{i:05}.img")), x)?;
                }
                for (c, p) in setup.task.prototypes.iter().enumerate() {
                    write_image(&dir.join("prototypes").join(format!("{c:02}.img")), p)?;
                }
                write_labels(&dir.join("labels.txt"), &setup.task.label_pairs())?;
                println!(
                    "seed {seed}: {} samples -> {}",
                    setup.task.len(),
                    dir.display()
                );
            }
        }
        Command::ExportEmbeddings { suite: name } => {
            let s = suite(name)?;
            for &seed in &cfg.seeds {
                let setup = cfg.setup(seed)?;
                let dir = run_dir(
                    common,
                    &cfg,
                    "export-embeddings",
                    seed,
                    serde_json::json!({ "suite": name }),
                )?;
                let store = export_embeddings(&setup.task.samples, &setup.encoder, &s, seed)?;
                store.write(&dir.join("embeddings.emb1"))?;
                write_labels(&dir.join("labels.txt"), &setup.task.label_pairs())?;
                println!("seed {seed}: {} records -> {}", store.len(), dir.display());
            }
        }
        Command::Eval {
            defense,
            attack,
            lambda,
        } => {
            let defense = DefenseSpec::from_name(defense)?;
            let spec = attack_spec(attack, *lambda)?;
            for &seed in &cfg.seeds {
                let setup = cfg.setup(seed)?;
                let details = serde_json::json!({ "defense": defense, "attack": spec });
                let dir = run_dir(common, &cfg, "eval", seed, details)?;
                let set = attacked(&setup, &spec, jobs)?;
                let report = evaluate_attacked(
                    &setup.task.samples,
                    &setup.task.labels,
                    &set,
                    &setup.encoder,
                    &setup.head,
                    &defense,
                    jobs,
                )?;
                std::fs::write(dir.join("report.json"), to_canonical_json(&report)?)?;
                println!(
                    "seed {seed}: defense={} attack={} clean={:.4} robust={:.4} gate_clean={:.4} gate_adv={:.4} calls={} -> {}",
                    report.defense,
                    report.attack,
                    report.clean_accuracy,
                    report.robust_accuracy,
                    report.gate_fire_rate_clean,
                    report.gate_fire_rate_adv,
                    report.encoder_calls_per_sample,
                    dir.display()
                );
            }
        }
        Command::Sweep {
            param,
            grid,
            attack,
        } => {
            let parameter: SweepParameter = param.parse()?;
            let spec = attack_spec(attack, None)?;
            for &seed in &cfg.seeds {
                let setup = cfg.setup(seed)?;
                let details = serde_json::json!({ "param": param, "grid": grid, "attack": spec });
                let dir = run_dir(common, &cfg, "sweep", seed, details)?;
                let set = attacked(&setup, &spec, jobs)?;
                let points = sweep(
                    parameter,
                    grid,
                    &setup.task.samples,
                    &setup.task.labels,
                    &set,
                    &setup.encoder,
                    &setup.head,
                    &AtacParams::default(),
                    jobs,
                )?;
                let mut csv = String::from("value,clean,robust\n");
                for p in &points {
                    writeln!(
                        csv,
                        "{},{},{}",
                        p.value, p.report.clean_accuracy, p.report.robust_accuracy
                    )?;
                }
                write_csv(&dir.join("sweep.csv"), &csv)?;
            }
        }
        Command::Roc { attack } => {
            let spec = attack_spec(attack, None)?;
            for &seed in &cfg.seeds {
                let setup = cfg.setup(seed)?;
                let dir = run_dir(
                    common,
                    &cfg,
                    "roc",
                    seed,
                    serde_json::json!({ "attack": spec }),
                )?;
                let set = attacked(&setup, &spec, jobs)?;
                let report = evaluate_attacked(
                    &setup.task.samples,
                    &setup.task.labels,
                    &set,
                    &setup.encoder,
                    &setup.head,
                    &DefenseSpec::Atac(AtacParams::default()),
                    jobs,
                )?;
                let mut csv = String::from("fpr,tpr\n");
                for p in roc_curve(&report.tau_clean, &report.tau_adv)? {
                    writeln!(csv, "{},{}", p.fpr, p.tpr)?;
                }
                write_csv(&dir.join("roc.csv"), &csv)?;
            }
        }
        Command::AblateAugs { suites, attack } => {
            let spec = attack_spec(attack, None)?;
            let names: Vec<&str> = suites.iter().map(String::as_str).collect();
            for &seed in &cfg.seeds {
                let setup = cfg.setup(seed)?;
                let details = serde_json::json!({ "suites": suites, "attack": spec });
                let dir = run_dir(common, &cfg, "ablate-augs", seed, details)?;
                let set = attacked(&setup, &spec, jobs)?;
                let rows = ablate_suites(
                    &names,
                    &setup.task.samples,
                    &setup.task.labels,
                    &set,
                    &setup.encoder,
                    &setup.head,
                    &AtacParams::default(),
                    jobs,
                )?;
                let mut csv = String::from("suite,clean,robust\n");
                for r in &rows {
                    writeln!(
                        csv,
                        "{},{},{}",
                        r.suite, r.clean_accuracy, r.robust_accuracy
                    )?;
                }
                write_csv(&dir.join("ablation.csv"), &csv)?;
            }
        }
        Command::EvalStore {
            store,
            labels,
            suite: name,
        } => {
            let params = AtacParams {
                suite: suite(name)?,
                ..AtacParams::default()
            };
            let labels = read_labels(labels)?;
            let store = StoreEncoder::new(EmbeddingStore::read(store)?);
            // The head is rebuilt from the configured encoder so stored and
            // direct evaluations share class embeddings.
            let setup = cfg.setup(cfg.seeds[0])?;
            let ids: Vec<u64> = labels.iter().map(|&(id, _)| id).collect();
            let preds = atac_from_store(&store, &ids, &setup.head, &params)?;
            let correct = preds
                .iter()
                .zip(&labels)
                .filter(|(p, (_, y))| p.label == *y)
                .count();
            println!(
                "accuracy={:.4} samples={}",
                correct as f64 / labels.len().max(1) as f64,
                labels.len()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            // Library errors are invariant violations; anything else is I/O or usage.
            if e.downcast_ref::<atac_core::Error>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
