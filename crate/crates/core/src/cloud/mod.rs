//! Cloud side: CEP rule engine, failure prediction, maintenance orders, raw
//! store, batch retraining, and the TCP/HTTP front ends.

pub mod batch;
pub mod cep;
pub mod http;
pub mod inproc;
pub mod orders;
pub mod predict;
pub mod server;
pub mod service;
pub mod store;

pub use batch::{retrain, RetrainError, RetrainParams, RetrainSummary};
pub use cep::{box_jaccard, CepRule, MergeOutcome, RuleSet, RuleSource, MERGE_JACCARD};
pub use orders::{ErpStub, MaintenanceOrder, OrderError, OrderStatus, OrderTransition, ERP_LOG};
pub use predict::{estimate_eta, CatalogEntry, Eta, FailurePrediction, FaultCatalog, OrderAction};
pub use service::{
    AlertView, CloudConfig, CloudError, CloudService, DistributionStatus, EdgeSink, EdgeSummary, EventRecord,
    Session, Severity,
};
