pub mod codec;
pub mod crypto;
pub mod records;
pub mod workload;
pub mod protocol;
pub mod economics;
pub mod ledger;
pub mod pbft;
pub mod netsim;
pub mod sync;
pub mod agents;
pub mod scenario;
pub mod tcp;
pub mod config;
pub mod report;
pub mod verify;
