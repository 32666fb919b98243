//! Federated training: FedAvg / FedProx local updates, weighted aggregation
//! and the server-side synthetic update, plus a centralized reference
//! trainer.

pub mod aggregate;
pub mod config;
pub mod local;
pub mod model;
pub mod pool;
pub mod round;

pub use aggregate::{aggregate, ClientUpdate};
pub use config::{Algorithm, FederationConfig, Injection};
pub use local::{local_update, synthetic_update, LocalResult};
pub use model::{classifier, classifier_fingerprint, load_classifier, train_step, Prox};
pub use pool::{SyntheticPool, SyntheticSource};
pub use round::{
    average_auc, round_log_rows, run_federation, run_round, select_best, train_centralized,
    write_round_log, Best, FederationResult, FederationState, RoundRecord, ROUND_LOG_HEADER,
};
