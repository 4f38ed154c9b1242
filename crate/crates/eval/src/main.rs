use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use ccnet_core::{model_grad_check, CcNet, CcNetConfig};
use ccnet_data::{build_lodo_split, parse_key_values, Dataset, DatasetConfig};
use ccnet_eval::{
    evaluate, export, format_table, islands, lodo, make_backbone, train_and_test, BackboneKind, EvalOptions, Manifest,
    RunConfig, DEFAULT_TAU,
};
use ccnet_fed::{audit, RunOptions, Strategy};
use clap::{Parser, Subcommand};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "ccnet", version = ccnet_eval::VERSION, about = "Federated column networks on a synthetic multi-domain benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the four-domain dataset and write it to a directory.
    GenData {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 400)]
        per_domain: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Federated training with one held-out domain, then test on it.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        strategy: Option<Strategy>,
        #[arg(long, default_value = "ccnet")]
        backbone: BackboneKind,
        #[arg(long, default_value_t = 0)]
        heldout: usize,
        /// read a dataset written by gen-data instead of generating one
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Every held-out domain for every strategy, backbone and seed.
    Lodo {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "fedavg")]
        strategies: Vec<Strategy>,
        #[arg(long, value_delimiter = ',', default_value = "ccnet,cnn")]
        backbones: Vec<BackboneKind>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "lodo-out")]
        out: PathBuf,
    },
    /// Cluster maps of a trained column network on one held-out sample.
    Islands {
        /// parameter file written by `train`; its directory must hold the manifest
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        sample: usize,
        #[arg(long, default_value_t = DEFAULT_TAU)]
        tau: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Central-difference check of the full model gradient.
    GradCheck {
        /// model keys override the small default instance
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(path: Option<&Path>) -> anyhow::Result<RunConfig> {
    Ok(match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => RunConfig::default(),
    })
}

fn dataset(cfg: &RunConfig, dir: Option<&Path>) -> anyhow::Result<Dataset> {
    Ok(match dir {
        Some(d) => Dataset::load(d).with_context(|| format!("loading dataset from {}", d.display()))?,
        None => Dataset::generate(cfg.data)?,
    })
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenData { seed, per_domain, out } => {
            let ds = Dataset::generate(DatasetConfig::new(seed, per_domain))?;
            ds.save(&out)?;
            let m = Manifest::new("gen-data", ds.manifest(), vec![seed], Some(ds.checksum()));
            m.save(out.join("manifest.json"))?;
            println!("wrote {} samples to {} (checksum {})", ds.domains.iter().map(Vec::len).sum::<usize>(), out.display(), ds.checksum());
        }
        Command::Train {
            config,
            strategy,
            backbone,
            heldout,
            data,
            out,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = strategy {
                cfg.fed.strategy = s;
            }
            let ds = dataset(&cfg, data.as_deref())?;
            let net = make_backbone(backbone, &cfg.model)?;
            fs::create_dir_all(&out)?;
            let opts = RunOptions {
                checkpoint_dir: Some(out.clone()),
                record_exchange: true,
                init: None,
            };
            let t = Instant::now();
            let run = train_and_test(net.as_ref(), &ds, heldout, &cfg.fed, &opts, cfg.eval_batch)?;
            let secs = t.elapsed().as_secs_f64();
            run.output.exchange.save(out.join("exchange.bin"))?;
            let split = build_lodo_split(&ds, heldout)?;
            let images: Vec<&[f64]> = split.clients.iter().flat_map(|c| c.train.iter().map(|s| s.image.as_slice())).collect();
            let report = audit(&run.output.exchange.bytes, run.output.server.global.names(), &images)?;
            let eval = EvalOptions {
                batch_size: cfg.eval_batch,
                prior: cfg.fed.prior,
                seed: cfg.fed.seed,
            };
            let val: Vec<_> = split.clients.iter().flat_map(|c| c.validation.iter().cloned()).collect();
            let val_acc = if val.is_empty() { f64::NAN } else { evaluate(net.as_ref(), &run.output.server.global, &val, &eval)? };
            fs::write(
                out.join("metrics.csv"),
                format!(
                    "backbone,strategy,params,held_out,test_accuracy,val_accuracy,seconds\n{},{},{},{},{:.6},{:.6},{:.1}\n",
                    net.name(),
                    cfg.fed.strategy,
                    net.param_count(),
                    heldout,
                    run.accuracy,
                    val_acc,
                    secs
                ),
            )?;
            fs::write(out.join("config.txt"), cfg.to_text())?;
            Manifest::new("train", cfg.to_key_values(), vec![cfg.fed.seed], Some(ds.checksum()))
                .with("backbone", backbone)
                .with("held_out", heldout)
                .with("checkpoint", "global.ccn1")
                .save(out.join("manifest.json"))?;
            println!(
                "{} {} held-out {heldout}: test {:.4}, in-domain val {:.4} ({} params, {secs:.1}s)",
                net.name(),
                cfg.fed.strategy,
                run.accuracy,
                val_acc,
                net.param_count()
            );
            println!(
                "exchange audit: {} frames, {} violations",
                report.frames,
                report.violations.len()
            );
            if !report.clean() {
                bail!("privacy audit failed: {:?}", report.violations);
            }
        }
        Command::Lodo {
            config,
            strategies,
            backbones,
            seeds,
            data,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let ds = dataset(&cfg, data.as_deref())?;
            let reports = lodo(&cfg, &ds, &strategies, &backbones, &seeds)?;
            fs::create_dir_all(&out)?;
            let mut csv = String::new();
            for (i, r) in reports.iter().enumerate() {
                let body = r.to_csv();
                csv.push_str(if i == 0 { &body } else { body.split_once('\n').map_or("", |x| x.1) });
            }
            let table = format_table(&reports);
            fs::write(out.join("lodo.csv"), csv)?;
            fs::write(out.join("table.txt"), &table)?;
            Manifest::new("lodo", cfg.to_key_values(), seeds, Some(ds.checksum()))
                .with("strategies", strategies.iter().map(ToString::to_string).collect::<Vec<_>>().join(","))
                .with("backbones", backbones.iter().map(ToString::to_string).collect::<Vec<_>>().join(","))
                .save(out.join("manifest.json"))?;
            print!("{table}");
        }
        Command::Islands {
            checkpoint,
            sample,
            tau,
            out,
        } => {
            let dir = checkpoint.parent().unwrap_or(Path::new("."));
            let manifest = Manifest::load(dir.join("manifest.json")).context("islands needs the manifest written by train")?;
            if manifest.extra.get("backbone").map(String::as_str) != Some("ccnet") {
                bail!("islands need a column network checkpoint");
            }
            let cfg = RunConfig::from_key_values(&manifest.config)?;
            let held: usize = manifest.extra.get("held_out").map_or(Ok(0), |s| s.parse())?;
            let ds = Dataset::generate(cfg.data)?;
            if manifest.dataset_checksum.as_deref() != Some(ds.checksum().as_str()) {
                bail!("regenerated dataset does not match the checkpoint's manifest");
            }
            let test = &ds.domains[held];
            let s = test.get(sample).with_context(|| format!("sample {sample} out of range 0..{}", test.len()))?;
            let model = CcNet::new(cfg.model.clone())?;
            let params = ccnet_tensor::ParamSet::load(&checkpoint)?;
            let map = islands(&model, &params, s, tau, cfg.fed.prior)?;
            let files = export(&map, s, &out)?;
            Manifest::new("islands", cfg.to_key_values(), vec![cfg.fed.seed], manifest.dataset_checksum.clone())
                .with("checkpoint", checkpoint.display())
                .with("sample", sample)
                .with("tau", tau)
                .save(out.join("manifest.json"))?;
            for l in 1..=map.levels() {
                println!("level {l}: {} clusters", map.cluster_count(l));
            }
            println!("wrote {} files to {}", files.len(), out.display());
        }
        Command::GradCheck { config, eps, seed } => {
            let mut model = CcNetConfig::grad_check();
            if let Some(p) = config {
                let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                model = CcNetConfig::from_key_values(model, &parse_key_values(&text)?)?;
            }
            let t = Instant::now();
            let r = model_grad_check(&model, 2, seed, eps)?;
            let secs = t.elapsed().as_secs_f64();
            println!(
                "max relative error {:.3e} over {} coordinates (worst: tensor {} coord {}, analytic {:.6e}, numeric {:.6e}) in {secs:.2}s",
                r.max_rel_error, r.coordinates, r.worst.0, r.worst.1, r.analytic, r.numeric
            );
            if r.max_rel_error >= 1e-4 {
                bail!("gradient check failed");
            }
        }
    }
    Ok(())
}
