//! Federated simulation for leave-one-domain-out training: each client owns
//! one source domain, trains locally with Lion, and exchanges only
//! serialized parameters, control variates, sample counts and (for
//! amplitude mixing) Fourier amplitude spectra with the server.

mod aggregate;
mod am;
mod config;
mod error;
mod exchange;
mod rsc;
mod sim;

pub use aggregate::{aggregate_fedavg, scaffold_client_update, scaffold_correct, scaffold_server_update};
pub use am::{amplitude, amplitude_mix, spectrum};
pub use config::{FedConfig, Strategy};
pub use error::{FedError, Result};
pub use exchange::{
    audit, decode_count, decode_params, encode_count, encode_params, parse_frames, AuditReport, Direction,
    ExchangeLog, Frame, FrameKind,
};
pub use rsc::{rsc_apply, rsc_drop_count, rsc_mask};
pub use sim::{
    checksum, client_rng, local_train, run_rounds, AmplitudeBank, ClientState, ClientUpdate, RoundLog, RoundRecord,
    RunOptions, RunOutput, ServerState,
};
