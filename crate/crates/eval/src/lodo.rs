//! Leave-one-domain-out runs and their report.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use ccnet_core::{Backbone, CcNet, CcNetConfig};
use ccnet_data::{build_lodo_split, Dataset, Renderer, DomainStyle, NUM_DOMAINS};
use ccnet_fed::{run_rounds, FedConfig, RunOptions, RunOutput, Strategy};
use rayon::prelude::*;

use crate::cnn::{CnnBaseline, CnnConfig};
use crate::config::RunConfig;
use crate::error::{EvalError, Result};
use crate::evaluate::{evaluate, EvalOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BackboneKind {
    CcNet,
    Cnn,
}

impl fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackboneKind::CcNet => "ccnet",
            BackboneKind::Cnn => "cnn",
        })
    }
}

impl FromStr for BackboneKind {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ccnet" => Ok(BackboneKind::CcNet),
            "cnn" => Ok(BackboneKind::Cnn),
            _ => Err(EvalError::Config(format!("unknown backbone {s:?}"))),
        }
    }
}

/// The CNN is sized against the column network built from the same config.
pub fn make_backbone(kind: BackboneKind, model: &CcNetConfig) -> Result<Box<dyn Backbone>> {
    let ccnet = CcNet::new(model.clone())?;
    Ok(match kind {
        BackboneKind::CcNet => Box::new(ccnet),
        BackboneKind::Cnn => {
            let budget = ccnet.param_count();
            let cfg = CnnConfig::matched(model.height, model.width, model.channels, model.classes, 2, budget);
            Box::new(CnnBaseline::new(cfg, budget)?)
        }
    })
}

/// Short display name of a source domain.
pub fn domain_name(domain: usize) -> &'static str {
    match DomainStyle::for_domain(domain).renderer {
        Renderer::FilledSolid => "solid",
        Renderer::OutlineStroke => "outline",
        Renderer::TexturedFill => "textured",
        Renderer::QuantizedFlat => "flat",
    }
}

pub struct TrainedRun {
    pub held_out: usize,
    pub output: RunOutput,
    pub accuracy: f64,
}

/// Trains on every domain except `held_out` and tests on all of `held_out`.
pub fn train_and_test(
    backbone: &dyn Backbone,
    dataset: &Dataset,
    held_out: usize,
    fed: &FedConfig,
    opts: &RunOptions,
    eval_batch: usize,
) -> Result<TrainedRun> {
    let split = build_lodo_split(dataset, held_out)?;
    let output = run_rounds(backbone, split.clients, fed, opts)?;
    let eval = EvalOptions {
        batch_size: eval_batch,
        prior: fed.prior,
        seed: fed.seed,
    };
    let accuracy = evaluate(backbone, &output.server.global, &split.test, &eval)?;
    Ok(TrainedRun {
        held_out,
        output,
        accuracy,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LodoEntry {
    pub held_out: usize,
    pub seed: u64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LodoReport {
    pub backbone: String,
    pub strategy: Strategy,
    pub param_count: usize,
    /// sorted by (held-out domain, seed)
    pub entries: Vec<LodoEntry>,
}

impl LodoReport {
    pub fn new(backbone: String, strategy: Strategy, param_count: usize, mut entries: Vec<LodoEntry>) -> Result<Self> {
        if let Some(e) = entries.iter().find(|e| !(0.0..=1.0).contains(&e.accuracy)) {
            return Err(EvalError::Config(format!("accuracy {} outside [0, 1]", e.accuracy)));
        }
        entries.sort_by_key(|e| (e.held_out, e.seed));
        Ok(Self {
            backbone,
            strategy,
            param_count,
            entries,
        })
    }

    pub fn domains(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.entries.iter().map(|e| e.held_out).collect();
        d.dedup();
        d
    }

    /// Mean over seeds for one held-out domain.
    pub fn domain_accuracy(&self, domain: usize) -> Option<f64> {
        let v: Vec<f64> = self
            .entries
            .iter()
            .filter(|e| e.held_out == domain)
            .map(|e| e.accuracy)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Arithmetic mean of the per-domain accuracies.
    pub fn average(&self) -> f64 {
        let per: Vec<f64> = self.domains().iter().filter_map(|&d| self.domain_accuracy(d)).collect();
        per.iter().sum::<f64>() / per.len().max(1) as f64
    }

    /// Average over domains for a single seed.
    pub fn seed_average(&self, seed: u64) -> Option<f64> {
        let v: Vec<f64> = self.entries.iter().filter(|e| e.seed == seed).map(|e| e.accuracy).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn method(&self) -> String {
        format!("{}+{}", self.strategy, self.backbone)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,backbone,strategy,params,held_out,domain,seed,accuracy\n");
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{:.6}",
                self.method(),
                self.backbone,
                self.strategy,
                self.param_count,
                e.held_out,
                domain_name(e.held_out),
                e.seed,
                e.accuracy
            );
        }
        s
    }
}

/// Percent table with one row per report: per-domain accuracy, average and
/// the difference to the first report's average.
pub fn format_table(reports: &[LodoReport]) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<22} {:>8}", "method", "params");
    for d in 0..NUM_DOMAINS {
        let _ = write!(out, " {:>9}", domain_name(d));
    }
    let _ = writeln!(out, " {:>8} {:>8}", "avg", "delta");
    let base = reports.first().map(LodoReport::average);
    for r in reports {
        let _ = write!(out, "{:<22} {:>8}", r.method(), r.param_count);
        for d in 0..NUM_DOMAINS {
            match r.domain_accuracy(d) {
                Some(a) => {
                    let _ = write!(out, " {:>9.2}", 100.0 * a);
                }
                None => {
                    let _ = write!(out, " {:>9}", "-");
                }
            }
        }
        let avg = r.average();
        let delta = base.map_or(0.0, |b| avg - b);
        let _ = writeln!(out, " {:>8.2} {:>+8.2}", 100.0 * avg, 100.0 * delta);
    }
    out
}

/// One report per (strategy, backbone); every (held-out, seed) pair is an
/// independent run.
pub fn lodo(
    base: &RunConfig,
    dataset: &Dataset,
    strategies: &[Strategy],
    backbones: &[BackboneKind],
    seeds: &[u64],
) -> Result<Vec<LodoReport>> {
    let mut reports = Vec::new();
    for &strategy in strategies {
        for &kind in backbones {
            let backbone = make_backbone(kind, &base.model)?;
            let jobs: Vec<(usize, u64)> = (0..dataset.domains.len())
                .flat_map(|d| seeds.iter().map(move |&s| (d, s)))
                .collect();
            let entries = jobs
                .par_iter()
                .map(|&(held_out, seed)| {
                    let fed = FedConfig {
                        strategy,
                        seed,
                        ..base.fed.clone()
                    };
                    let run = train_and_test(backbone.as_ref(), dataset, held_out, &fed, &RunOptions::default(), base.eval_batch)?;
                    Ok(LodoEntry {
                        held_out,
                        seed,
                        accuracy: run.accuracy,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            reports.push(LodoReport::new(backbone.name(), strategy, backbone.param_count(), entries)?);
        }
    }
    Ok(reports)
}
