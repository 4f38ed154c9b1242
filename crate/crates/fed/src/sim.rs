//! Client-side local training and the round loop.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ccnet_core::{oracle_masks, prompt_points, Backbone, Batch, MaskSet, PriorMode};
use ccnet_data::{derive_seed, ClientShard, Sample};
use ccnet_tensor::{LionState, ParamSet, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::aggregate::{aggregate_fedavg, scaffold_client_update, scaffold_correct, scaffold_server_update};
use crate::am::{amplitude, amplitude_mix};
use crate::config::{FedConfig, Strategy};
use crate::error::{FedError, Result};
use crate::exchange::{
    decode_count, decode_params, encode_count, encode_params, Direction, ExchangeLog, FrameKind,
};
use crate::rsc::rsc_mask;

// independent random streams of one client in one round
const STREAM_SHUFFLE: u64 = 1;
const STREAM_PRIOR: u64 = 2;
const STREAM_AM: u64 = 3;
const STREAM_RSC: u64 = 4;

/// SHA-256 of the CCN1 encoding, hex.
pub fn checksum(p: &ParamSet) -> String {
    hex::encode(Sha256::digest(p.to_bytes()))
}

pub fn client_rng(seed: u64, round: usize, client: usize, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &[round as u64, client as u64, stream]))
}

/// Amplitude spectra received from one other client: `[n, C·H·W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeBank {
    pub client_id: usize,
    pub spectra: Vec<Vec<f64>>,
}

impl AmplitudeBank {
    pub fn of_shard(shard: &ClientShard) -> Self {
        let spectra = shard
            .train
            .iter()
            .map(|s| amplitude(&s.image, s.image.len() / (s.height * s.width), s.height, s.width))
            .collect();
        Self {
            client_id: shard.client_id,
            spectra,
        }
    }

    pub fn to_params(&self) -> ParamSet {
        let mut p = ParamSet::new();
        for (k, s) in self.spectra.iter().enumerate() {
            p.push(format!("amp.{k}"), Tensor::from_vec(s.clone()));
        }
        p
    }

    pub fn from_params(client_id: usize, p: &ParamSet) -> Self {
        Self {
            client_id,
            spectra: p.tensors().map(|t| t.data().to_vec()).collect(),
        }
    }
}

pub struct ClientState {
    pub client_id: usize,
    pub shard: ClientShard,
    pub optimizer: LionState,
    /// Scaffold client control variate
    pub control: Option<ParamSet>,
    /// amplitude spectra of the other clients (AM)
    pub amp_bank: Vec<AmplitudeBank>,
    /// uncorrupted oracle masks per training sample, built on first use
    pub oracle_cache: Option<Vec<MaskSet>>,
}

impl ClientState {
    pub fn new(shard: ClientShard, params: &ParamSet, cfg: &FedConfig) -> Self {
        Self {
            client_id: shard.client_id,
            optimizer: LionState::new(cfg.lion, params),
            control: (cfg.strategy == Strategy::Scaffold).then(|| params.zeros_like()),
            amp_bank: Vec::new(),
            oracle_cache: None,
            shard,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub global: ParamSet,
    pub round: usize,
    /// Scaffold server control variate
    pub control: Option<ParamSet>,
}

impl ServerState {
    pub fn new(global: ParamSet, strategy: Strategy) -> Self {
        Self {
            control: (strategy == Strategy::Scaffold).then(|| global.zeros_like()),
            global,
            round: 0,
        }
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.global.save(dir.join("global.ccn1"))?;
        if let Some(c) = &self.control {
            c.save(dir.join("control.ccn1"))?;
        }
        fs::write(dir.join("server.txt"), format!("round={}\n", self.round))?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let global = ParamSet::load(dir.join("global.ccn1"))?;
        let control_path = dir.join("control.ccn1");
        let control = if control_path.exists() {
            Some(ParamSet::load(control_path)?)
        } else {
            None
        };
        let text = fs::read_to_string(dir.join("server.txt"))?;
        let round = text
            .lines()
            .find_map(|l| l.strip_prefix("round="))
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| FedError::Frame("server.txt lacks round=".into()))?;
        Ok(Self { global, round, control })
    }
}

/// Result of one client's local training.
#[derive(Debug, Clone)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub params: ParamSet,
    pub n_samples: usize,
    pub mean_loss: f64,
    pub steps: usize,
    pub control_delta: Option<ParamSet>,
}

fn finite_or(loss: f64, client: usize, step: usize) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(FedError::Config(format!("client {client}: non-finite loss at local step {step}")))
    }
}

/// Loss and parameter gradients on one batch, with RSC masking when
/// `rsc` is `Some(percentile)`.
fn batch_gradients(backbone: &dyn Backbone, params: &ParamSet, batch: &Batch, rsc: Option<f64>) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let vars: Vec<_> = params.tensors().map(|t| tape.param(t.clone())).collect();
    let out = backbone.forward(&mut tape, &vars, batch, None)?;
    let loss = tape.nll_probs(out.probs, &batch.labels)?;
    let grads = tape.backward(loss)?;
    let Some(p) = rsc else {
        let g = vars.iter().map(|&v| grads.wrt(&tape, v)).collect();
        return Ok((tape.value(loss).item(), g));
    };
    let masks = out
        .features
        .iter()
        .map(|&f| rsc_mask(tape.value(f), &grads.wrt(&tape, f), p))
        .collect::<Result<Vec<_>>>()?;
    let mut tape = Tape::new();
    let vars: Vec<_> = params.tensors().map(|t| tape.param(t.clone())).collect();
    let out = backbone.forward(&mut tape, &vars, batch, Some(&masks))?;
    let loss = tape.nll_probs(out.probs, &batch.labels)?;
    let grads = tape.backward(loss)?;
    let g = vars.iter().map(|&v| grads.wrt(&tape, v)).collect();
    Ok((tape.value(loss).item(), g))
}

/// `local_epochs` passes of Lion over the client's training shard starting
/// from `global`, with the configured strategy's hooks.
pub fn local_train(
    backbone: &dyn Backbone,
    client: &mut ClientState,
    global: &ParamSet,
    server_control: Option<&ParamSet>,
    cfg: &FedConfig,
    round: usize,
) -> Result<ClientUpdate> {
    let id = client.client_id;
    let mut shuffle = client_rng(cfg.seed, round, id, STREAM_SHUFFLE);
    let mut prior_rng = client_rng(cfg.seed, round, id, STREAM_PRIOR);
    let mut am_rng = client_rng(cfg.seed, round, id, STREAM_AM);
    let mut rsc_rng = client_rng(cfg.seed, round, id, STREAM_RSC);

    let saved_optimizer = client.optimizer.clone();
    let mut params = global.clone();
    let n = client.shard.train.len();
    let mut order: Vec<usize> = (0..n).collect();
    let (mut loss_sum, mut seen, mut steps) = (0.0, 0usize, 0usize);

    if let (Some(ps), PriorMode::Oracle { corruption }) = (backbone.prior_shape(), cfg.prior) {
        if corruption == 0.0 && client.oracle_cache.is_none() {
            let sets = client
                .shard
                .train
                .iter()
                .map(|s| {
                    let points = prompt_points(ps.rows, ps.cols, s.height, s.width);
                    oracle_masks(&s.regions, s.height, s.width, &points, ps.levels)
                })
                .collect::<std::result::Result<Vec<_>, _>>()?;
            client.oracle_cache = Some(sets);
        }
    }

    let result = (|| -> Result<()> {
        for _ in 0..cfg.local_epochs {
            order.shuffle(&mut shuffle);
            for chunk in order.chunks(cfg.batch_size) {
                let mixed: Vec<Sample>;
                let refs: Vec<&Sample> = if cfg.strategy == Strategy::Am && !client.amp_bank.is_empty() {
                    mixed = chunk
                        .iter()
                        .map(|&i| {
                            let s = &client.shard.train[i];
                            let bank = &client.amp_bank[am_rng.gen_range(0..client.amp_bank.len())];
                            let foreign = &bank.spectra[am_rng.gen_range(0..bank.spectra.len())];
                            let c = s.image.len() / (s.height * s.width);
                            let image = amplitude_mix(&s.image, foreign, c, s.height, s.width, cfg.am_lambda)?;
                            Ok(Sample { image, ..s.clone() })
                        })
                        .collect::<Result<_>>()?;
                    mixed.iter().collect()
                } else {
                    chunk.iter().map(|&i| &client.shard.train[i]).collect()
                };
                let batch = match &client.oracle_cache {
                    Some(cache) => {
                        let sets: Vec<&MaskSet> = chunk.iter().map(|&i| &cache[i]).collect();
                        Batch::with_masks(&refs, &sets)?
                    }
                    None => Batch::from_samples(&refs, backbone.prior_shape(), cfg.prior, &mut prior_rng)?,
                };
                let rsc = (cfg.strategy == Strategy::Rsc && rsc_rng.gen_bool(cfg.rsc_trigger)).then_some(cfg.rsc_percentile);
                let (loss, mut grads) = batch_gradients(backbone, &params, &batch, rsc)?;
                let loss = finite_or(loss, id, steps)?;

                if cfg.strategy == Strategy::FedProx && cfg.mu > 0.0 {
                    for ((g, w), wg) in grads.iter_mut().zip(params.tensors()).zip(global.tensors()) {
                        for ((g, &w), &wg) in g.data_mut().iter_mut().zip(w.data()).zip(wg.data()) {
                            *g += cfg.mu * (w - wg);
                        }
                    }
                }
                if cfg.strategy == Strategy::Scaffold {
                    let c = server_control.ok_or_else(|| FedError::Config("scaffold without server control".into()))?;
                    let ci = client.control.as_ref().expect("scaffold client control");
                    scaffold_correct(&mut grads, c, ci)?;
                }
                client.optimizer.step(&mut params, &grads)?;
                loss_sum += loss * chunk.len() as f64;
                seen += chunk.len();
                steps += 1;
            }
        }
        Ok(())
    })();
    if let Err(e) = result {
        client.optimizer = saved_optimizer;
        return Err(e);
    }

    let control_delta = if cfg.strategy == Strategy::Scaffold {
        let c = server_control.expect("checked above");
        let ci = client.control.as_ref().expect("scaffold client control");
        let (next, delta) = scaffold_client_update(ci, c, global, &params, steps, cfg.lion.lr)?;
        client.control = Some(next);
        Some(delta)
    } else {
        None
    };
    Ok(ClientUpdate {
        client_id: id,
        params,
        n_samples: n,
        mean_loss: if seen > 0 { loss_sum / seen as f64 } else { f64::NAN },
        steps,
        control_delta,
    })
}

/// One line of the round log.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub client_id: usize,
    pub n_samples: usize,
    /// `NaN` when the client failed
    pub mean_loss: f64,
    /// checksum of the global parameters after the round
    pub checksum: String,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RoundLog {
    pub strategy: String,
    pub records: Vec<RoundRecord>,
    /// wall time of each round in seconds
    pub wall: Vec<f64>,
}

impl RoundLog {
    pub const HEADER: &'static str = "round,client_id,n_samples,mean_loss,checksum";

    pub fn csv_line(r: &RoundRecord) -> String {
        format!("{},{},{},{},{}", r.round, r.client_id, r.n_samples, r.mean_loss, r.checksum)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for r in &self.records {
            s.push_str(&Self::csv_line(r));
            s.push('\n');
        }
        s
    }

    /// Sample-weighted mean loss of the successful clients of `round`.
    pub fn round_loss(&self, round: usize) -> Option<f64> {
        let rs: Vec<_> = self
            .records
            .iter()
            .filter(|r| r.round == round && r.error.is_none())
            .collect();
        let n: usize = rs.iter().map(|r| r.n_samples).sum();
        (n > 0).then(|| rs.iter().map(|r| r.mean_loss * r.n_samples as f64).sum::<f64>() / n as f64)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// write `round_XXX.ccn1`, the server state and `rounds.csv` here
    pub checkpoint_dir: Option<PathBuf>,
    pub record_exchange: bool,
    /// start from these parameters instead of `init_params(seed)`
    pub init: Option<ParamSet>,
}

pub struct RunOutput {
    pub server: ServerState,
    pub log: RoundLog,
    pub exchange: ExchangeLog,
    pub clients: Vec<ClientState>,
}

/// Federated training of `backbone` over `shards` (one client each).
pub fn run_rounds(backbone: &dyn Backbone, shards: Vec<ClientShard>, cfg: &FedConfig, opts: &RunOptions) -> Result<RunOutput> {
    cfg.validate()?;
    if shards.is_empty() {
        return Err(FedError::Config("no clients".into()));
    }
    let init = opts.init.clone().unwrap_or_else(|| backbone.init_params(cfg.seed));
    let mut server = ServerState::new(init, cfg.strategy);
    let mut clients: Vec<ClientState> = shards.into_iter().map(|s| ClientState::new(s, &server.global, cfg)).collect();
    clients.sort_by_key(|c| c.client_id);
    let mut log = RoundLog {
        strategy: cfg.strategy.to_string(),
        ..Default::default()
    };
    let mut exchange = if opts.record_exchange {
        ExchangeLog::recording()
    } else {
        ExchangeLog::default()
    };
    let mut csv = match &opts.checkpoint_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let mut f = fs::File::create(dir.join("rounds.csv"))?;
            writeln!(f, "{}", RoundLog::HEADER)?;
            Some(f)
        }
        None => None,
    };

    for round in 1..=cfg.rounds {
        let start = Instant::now();

        // server -> clients: global model, control variate, amplitude banks
        let down = encode_params(FrameKind::Params, Direction::ToClient, round, 0, &server.global);
        let down_control = server
            .control
            .as_ref()
            .map(|c| encode_params(FrameKind::Control, Direction::ToClient, round, 0, c));
        if cfg.strategy == Strategy::Am {
            let ups: Vec<(usize, Vec<u8>)> = clients
                .iter()
                .map(|c| {
                    let bank = AmplitudeBank::of_shard(&c.shard);
                    let f = encode_params(FrameKind::Amplitude, Direction::ToServer, round, c.client_id, &bank.to_params());
                    (c.client_id, f)
                })
                .collect();
            for (_, f) in &ups {
                exchange.record(f);
            }
            for c in clients.iter_mut() {
                c.amp_bank.clear();
                for (other, f) in &ups {
                    if *other == c.client_id {
                        continue;
                    }
                    let relay = decode_params(f, FrameKind::Amplitude)?;
                    let frame = encode_params(FrameKind::Amplitude, Direction::ToClient, round, c.client_id, &relay);
                    exchange.record(&frame);
                    c.amp_bank
                        .push(AmplitudeBank::from_params(*other, &decode_params(&frame, FrameKind::Amplitude)?));
                }
            }
        }
        for _ in &clients {
            exchange.record(&down);
            if let Some(f) = &down_control {
                exchange.record(f);
            }
        }

        // the mean loss stays with the simulator for the round log; only the
        // frames cross the boundary
        let train = |c: &mut ClientState| -> (usize, std::result::Result<(Vec<Vec<u8>>, f64), String>) {
            let id = c.client_id;
            let mut go = || -> Result<(Vec<Vec<u8>>, f64)> {
                let global = decode_params(&down, FrameKind::Params)?;
                let control = match &down_control {
                    Some(f) => Some(decode_params(f, FrameKind::Control)?),
                    None => None,
                };
                let u = local_train(backbone, c, &global, control.as_ref(), cfg, round)?;
                let mut frames = vec![
                    encode_params(FrameKind::Params, Direction::ToServer, round, id, &u.params),
                    encode_count(round, id, u.n_samples),
                ];
                if let Some(d) = &u.control_delta {
                    frames.push(encode_params(FrameKind::Control, Direction::ToServer, round, id, d));
                }
                Ok((frames, u.mean_loss))
            };
            (id, go().map_err(|e| e.to_string()))
        };
        let results: Vec<_> = if cfg.concurrent {
            clients.par_iter_mut().map(train).collect()
        } else {
            clients.iter_mut().map(train).collect()
        };

        // clients -> server, in client-id order
        let mut updates = Vec::new();
        let mut failures = Vec::new();
        for (id, r) in results {
            match r {
                Ok((frames, loss)) => {
                    for f in &frames {
                        exchange.record(f);
                    }
                    let params = decode_params(&frames[0], FrameKind::Params)?;
                    let n = decode_count(&frames[1])?;
                    let delta = match frames.get(2) {
                        Some(f) => Some(decode_params(f, FrameKind::Control)?),
                        None => None,
                    };
                    updates.push((id, params, n, loss, delta));
                }
                Err(e) => failures.push((id, e)),
            }
        }
        if updates.is_empty() {
            for (id, e) in &failures {
                log.records.push(RoundRecord {
                    round,
                    client_id: *id,
                    n_samples: 0,
                    mean_loss: f64::NAN,
                    checksum: checksum(&server.global),
                    error: Some(e.clone()),
                });
            }
            if let Some(f) = csv.as_mut() {
                for r in log.records.iter().filter(|r| r.round == round) {
                    writeln!(f, "{}", RoundLog::csv_line(r))?;
                }
                f.flush()?;
            }
            let reasons = failures.iter().map(|(id, e)| format!("client {id}: {e}")).collect::<Vec<_>>().join("; ");
            return Err(FedError::AllClientsFailed { round, reasons });
        }
        let pairs: Vec<(&ParamSet, usize)> = updates.iter().map(|(_, p, n, _, _)| (p, *n)).collect();
        server.global = aggregate_fedavg(&pairs)?;
        if let Some(c) = server.control.as_mut() {
            let deltas: Vec<&ParamSet> = updates.iter().filter_map(|u| u.4.as_ref()).collect();
            scaffold_server_update(c, &deltas)?;
        }
        server.round = round;
        let sum = checksum(&server.global);
        let mut rows: Vec<RoundRecord> = updates
            .iter()
            .map(|(id, _, n, loss, _)| RoundRecord {
                round,
                client_id: *id,
                n_samples: *n,
                mean_loss: *loss,
                checksum: sum.clone(),
                error: None,
            })
            .collect();
        rows.extend(failures.into_iter().map(|(id, e)| RoundRecord {
            round,
            client_id: id,
            n_samples: 0,
            mean_loss: f64::NAN,
            checksum: sum.clone(),
            error: Some(e),
        }));
        rows.sort_by_key(|r| r.client_id);
        if let Some(dir) = &opts.checkpoint_dir {
            server.global.save(dir.join(format!("round_{round:03}.ccn1")))?;
            server.save(dir)?;
        }
        if let Some(f) = csv.as_mut() {
            for r in &rows {
                writeln!(f, "{}", RoundLog::csv_line(r))?;
            }
            f.flush()?;
        }
        log.records.extend(rows);
        log.wall.push(start.elapsed().as_secs_f64());
    }
    Ok(RunOutput {
        server,
        log,
        exchange,
        clients,
    })
}
