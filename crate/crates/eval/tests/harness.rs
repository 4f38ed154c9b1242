#[path = "../../fed/tests/common/mod.rs"]
mod fed_common;

use ccnet_core::{Backbone, Batch, CcNet, CcNetConfig, CoreError, Forward, PriorShape};
use ccnet_data::{generate_one, oracle_class, Dataset, DatasetConfig, Sample};
use ccnet_eval::{
    accuracy, argmax, evaluate, format_table, lodo, make_backbone, train_and_test, BackboneKind, CnnBaseline,
    CnnConfig, EvalError, EvalOptions, LodoEntry, LodoReport, RunConfig,
};
use ccnet_fed::{run_rounds, RunOptions, Strategy};
use ccnet_tensor::{ParamSet, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Predicts the same distribution for every input.
struct Constant(Vec<f64>);

impl Backbone for Constant {
    fn name(&self) -> String {
        "constant".into()
    }

    fn init_params(&self, _seed: u64) -> ParamSet {
        ParamSet::new()
    }

    fn prior_shape(&self) -> Option<PriorShape> {
        None
    }

    fn forward(&self, tape: &mut Tape, _p: &[Var], batch: &Batch, _m: Option<&[Tensor]>) -> ccnet_core::Result<Forward> {
        let b = batch.len();
        let data = (0..b).flat_map(|_| self.0.clone()).collect();
        let probs = tape.constant(Tensor::new(&[b, self.0.len()], data).map_err(CoreError::from)?);
        Ok(Forward { probs, features: vec![] })
    }
}

fn samples(n: usize, seed: u64) -> Vec<(ccnet_data::SceneSpec, Sample)> {
    let cfg = DatasetConfig::new(seed, n);
    (0..n).map(|i| generate_one(&cfg, i % 4, i, (i * 7 + 3) % 4)).collect()
}

#[test]
fn argmax_breaks_ties_low() {
    assert_eq!(argmax(&[0.25; 4]), 0);
    assert_eq!(argmax(&[0.1, 0.4, 0.4, 0.1]), 1);
    assert_eq!(argmax(&[0.0, 0.0, 0.0, 1.0]), 3);
}

#[test]
fn uniform_classifier_scores_class_zero_frequency() {
    let data = samples(60, 3);
    let test: Vec<Sample> = data.into_iter().map(|(_, s)| s).collect();
    let zeros = test.iter().filter(|s| s.label == 0).count() as f64 / test.len() as f64;
    let acc = evaluate(&Constant(vec![0.25; 4]), &ParamSet::new(), &test, &EvalOptions { batch_size: 7, ..Default::default() }).unwrap();
    assert_eq!(acc, zeros);
    assert!(zeros > 0.0 && zeros < 1.0);
}

#[test]
fn oracle_classifier_is_perfect_and_shuffled_labels_are_chance() {
    let data = samples(1000, 4);
    let mut probs = Vec::new();
    let mut labels = Vec::new();
    for (scene, s) in &data {
        let mut row = vec![0.0; 4];
        row[oracle_class(scene)] = 1.0;
        probs.extend(row);
        labels.push(s.label);
    }
    assert_eq!(accuracy(&probs, 4, &labels).unwrap(), 1.0);
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(5));
    let chance = accuracy(&probs, 4, &labels).unwrap();
    assert!((chance - 0.25).abs() <= 0.05, "{chance}");
}

#[test]
fn empty_and_mismatched_inputs_are_rejected() {
    assert!(matches!(accuracy(&[], 4, &[]), Err(EvalError::EmptyTestSet)));
    assert!(matches!(accuracy(&[0.5, 0.5], 4, &[0]), Err(EvalError::Shape(_))));
    let r = evaluate(&Constant(vec![0.5, 0.5]), &ParamSet::new(), &[], &EvalOptions::default());
    assert!(matches!(r, Err(EvalError::EmptyTestSet)));
}

#[test]
fn matched_baseline_sizes() {
    let cfg = CcNetConfig::desk(32);
    let ccnet = CcNet::new(cfg.clone()).unwrap().param_count();
    let cnn = make_backbone(BackboneKind::Cnn, &cfg).unwrap();
    // conv 3→16: 9·3·16+16 = 448, 16→48: 6960, 48→64: 27712, fc 2·2·64·4+4 = 1028
    assert_eq!(cnn.param_count(), 448 + 6960 + 27712 + 1028);
    assert_eq!(CnnConfig::matched(32, 32, 3, 4, 2, ccnet).widths, [16, 48, 64]);
    assert!(cnn.param_count() >= ccnet);
    assert!((cnn.param_count() as f64 - ccnet as f64).abs() / ccnet as f64 <= 0.25);
    let c = CnnConfig::new(32, 32, 3, 4, [5, 7, 9]);
    assert_eq!(c.param_count(), CnnBaseline { config: c }.init_params(0).numel());
}

#[test]
fn stride_one_baseline_keeps_a_four_by_four_map() {
    let c = CnnConfig::new(32, 32, 3, 4, [16, 48, 64]).with_first_stride(1);
    assert_eq!(c.final_size(), (4, 4));
    // the three convs as before plus fc 4·4·64·4+4 = 4100
    assert_eq!(c.param_count(), 448 + 6960 + 27712 + 4100);
    assert_eq!(CnnBaseline { config: c }.init_params(0).numel(), c.param_count());
    assert!(CnnBaseline::new(c.with_first_stride(3), 39_220).is_err());
    assert!(CnnBaseline::new(CnnConfig::new(24, 24, 3, 4, [16, 48, 64]).with_first_stride(1), 39_220).is_ok());
}

#[test]
fn baseline_outside_budget_is_rejected() {
    let big = CnnConfig::new(32, 32, 3, 4, [64, 192, 256]);
    assert!(matches!(CnnBaseline::new(big, 31_458), Err(EvalError::Budget { .. })));
    let small = CnnConfig::new(32, 32, 3, 4, [2, 2, 2]);
    assert!(matches!(CnnBaseline::new(small, 31_458), Err(EvalError::Budget { .. })));
    let odd = CnnConfig::new(24, 32, 3, 4, [16, 48, 64]);
    assert!(matches!(CnnBaseline::new(odd, 36_000), Err(EvalError::Config(_))));
}

#[test]
fn baseline_forward_shapes_and_feature_mask() {
    let cfg = CnnConfig::new(32, 32, 3, 4, [4, 8, 8]);
    let net = CnnBaseline { config: cfg };
    let data = samples(5, 6);
    let refs: Vec<&Sample> = data.iter().map(|(_, s)| s).collect();
    let batch = Batch::from_samples(&refs, None, Default::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let p = net.init_params(1);
    let mut tape = Tape::new();
    let v: Vec<Var> = p.tensors().map(|t| tape.constant(t.clone())).collect();
    let out = net.forward(&mut tape, &v, &batch, None).unwrap();
    assert_eq!(tape.shape(out.probs), &[5, 4]);
    assert_eq!(tape.shape(out.features[0]), &[5, cfg.feature_len()]);
    for row in tape.value(out.probs).data().chunks(4) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    // zero mask and zero head bias leave uniform probabilities
    let masked = net.forward(&mut tape, &v, &batch, Some(&[Tensor::zeros(&[5, cfg.feature_len()])])).unwrap();
    assert!(tape.value(masked.probs).data().iter().all(|&x| (x - 0.25).abs() < 1e-15));
}

#[test]
fn baseline_fedprox_without_proximal_term_is_fedavg() {
    let ds = fed_common::tiny_dataset();
    let net = CnnBaseline::new(CnnConfig::new(16, 16, 3, 4, [4, 6, 8]), 700).unwrap();
    let avg = run_rounds(&net, fed_common::shards(&ds), &fed_common::quick(Strategy::FedAvg), &RunOptions::default()).unwrap();
    let mut cfg = fed_common::quick(Strategy::FedProx);
    cfg.mu = 0.0;
    let prox = run_rounds(&net, fed_common::shards(&ds), &cfg, &RunOptions::default()).unwrap();
    assert_eq!(avg.server.global.to_bytes(), prox.server.global.to_bytes());
    assert_ne!(avg.server.global.to_bytes(), net.init_params(7).to_bytes());
}

fn entry(held_out: usize, seed: u64, accuracy: f64) -> LodoEntry {
    LodoEntry { held_out, seed, accuracy }
}

#[test]
fn report_average_recomputes_exactly() {
    let r = LodoReport::new(
        "ccnet-3h".into(),
        Strategy::FedAvg,
        10,
        vec![entry(0, 0, 0.5), entry(1, 0, 0.75), entry(2, 0, 0.25), entry(3, 0, 1.0)],
    )
    .unwrap();
    assert_eq!(r.average(), 0.625);
    let per: Vec<f64> = (0..4).map(|d| r.domain_accuracy(d).unwrap()).collect();
    assert_eq!(r.average(), per.iter().sum::<f64>() / 4.0);
}

#[test]
fn report_with_seeds_averages_seeds_first() {
    let entries = vec![entry(0, 0, 0.5), entry(0, 1, 1.0), entry(1, 0, 0.25), entry(1, 1, 0.25)];
    let r = LodoReport::new("cnn".into(), Strategy::FedAvg, 10, entries).unwrap();
    assert_eq!(r.domain_accuracy(0), Some(0.75));
    assert_eq!(r.average(), 0.5);
    assert_eq!(r.seed_average(1), Some(0.625));
    assert_eq!(r.domain_accuracy(3), None);
}

#[test]
fn report_is_independent_of_run_order() {
    let entries = vec![entry(0, 0, 0.5), entry(1, 0, 0.625), entry(2, 0, 0.25), entry(3, 0, 0.875)];
    let mut swapped = entries.clone();
    swapped.reverse();
    swapped.swap(0, 2);
    let a = LodoReport::new("x".into(), Strategy::Am, 1, entries).unwrap();
    let b = LodoReport::new("x".into(), Strategy::Am, 1, swapped).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_csv(), b.to_csv());
}

#[test]
fn report_rejects_impossible_accuracy() {
    assert!(LodoReport::new("x".into(), Strategy::FedAvg, 1, vec![entry(0, 0, 1.2)]).is_err());
    assert!(LodoReport::new("x".into(), Strategy::FedAvg, 1, vec![entry(0, 0, f64::NAN)]).is_err());
}

#[test]
fn csv_and_table_layout() {
    let a = LodoReport::new("ccnet-3h".into(), Strategy::FedAvg, 100, (0..4).map(|d| entry(d, 0, 0.5)).collect()).unwrap();
    let b = LodoReport::new("cnn".into(), Strategy::FedAvg, 120, (0..4).map(|d| entry(d, 0, 0.25)).collect()).unwrap();
    let csv = a.to_csv();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().nth(1).unwrap().starts_with("fedavg+ccnet-3h,ccnet-3h,fedavg,100,0,solid,0,0.500000"));
    let table = format_table(&[a, b]);
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].contains("outline") && rows[0].ends_with("delta"));
    assert!(rows[1].trim_end().ends_with("50.00    +0.00"), "{}", rows[1]);
    assert!(rows[2].trim_end().ends_with("25.00   -25.00"), "{}", rows[2]);
}

#[test]
fn lodo_runs_are_independent() {
    let ds = fed_common::tiny_dataset();
    let base = RunConfig {
        data: ds.config,
        model: fed_common::tiny_model().config.clone(),
        fed: {
            let mut f = fed_common::quick(Strategy::FedAvg);
            f.rounds = 1;
            f
        },
        eval_batch: 32,
    };
    let reports = lodo(&base, &ds, &[Strategy::FedAvg], &[BackboneKind::CcNet], &[3]).unwrap();
    assert_eq!(reports.len(), 1);
    let r = &reports[0];
    assert_eq!(r.domains(), vec![0, 1, 2, 3]);
    let net = make_backbone(BackboneKind::CcNet, &base.model).unwrap();
    for d in [2, 0, 3, 1] {
        let mut fed = base.fed.clone();
        fed.seed = 3;
        let alone = train_and_test(net.as_ref(), &ds, d, &fed, &RunOptions::default(), 32).unwrap();
        assert_eq!(r.domain_accuracy(d), Some(alone.accuracy));
        assert_eq!(alone.held_out, d);
    }
}

#[test]
fn config_round_trips() {
    let mut c = RunConfig::default();
    c.fed.strategy = Strategy::Scaffold;
    c.fed.mu = 0.25;
    c.fed.lion.beta2 = 0.9;
    c.model.num_heads = 2;
    c.model.radius = Some(1);
    c.data.per_domain = 80;
    c.eval_batch = 17;
    assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    assert_eq!(RunConfig::from_key_values(&c.to_key_values()).unwrap(), c);
    assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
}

#[test]
fn config_rejects_unknown_and_bad_values() {
    assert!(RunConfig::parse("learning_rate=0.1\n").is_err());
    assert!(RunConfig::parse("rounds=ten\n").is_err());
    assert!(RunConfig::parse("strategy=sgd\n").is_err());
    assert!(RunConfig::parse("heads=5\n").is_err());
    let c = RunConfig::parse("# desk run\ndim = 16\nheads=1\nprior=random\n").unwrap();
    assert_eq!((c.model.dim, c.model.num_heads), (16, 1));
    let d = Dataset::generate(DatasetConfig::new(1, 40)).unwrap();
    assert_eq!(d.config.height, c.data.height);
}

#[test]
fn baseline_learns_the_task_in_domain() {
    // desk schedule, held-out domain 0; accuracy on the source domains'
    // validation samples and on their training samples. The small baseline
    // overfits the textured domain at 400 samples per domain, so this checks
    // learning well above chance (0.25), not a 95% ceiling.
    let cfg = RunConfig::default();
    let ds = Dataset::generate(cfg.data).unwrap();
    let net = make_backbone(BackboneKind::Cnn, &cfg.model).unwrap();
    let run = train_and_test(net.as_ref(), &ds, 0, &cfg.fed, &RunOptions::default(), 64).unwrap();
    let split = ccnet_data::build_lodo_split(&ds, 0).unwrap();
    let opts = EvalOptions::default();
    let val: Vec<Sample> = split.clients.iter().flat_map(|c| c.validation.clone()).collect();
    let train: Vec<Sample> = split.clients.iter().flat_map(|c| c.train.clone()).collect();
    let (v, t) = (
        evaluate(net.as_ref(), &run.output.server.global, &val, &opts).unwrap(),
        evaluate(net.as_ref(), &run.output.server.global, &train, &opts).unwrap(),
    );
    println!("baseline in-domain validation {v:.3}, training {t:.3}, held-out {:.3}", run.accuracy);
    assert!(t >= 0.9, "training accuracy {t}");
    assert!(v >= 0.75, "in-domain validation accuracy {v}");
}
