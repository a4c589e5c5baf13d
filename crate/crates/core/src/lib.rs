//! Deterministic simulation of optimistic concurrency control for mobile
//! databases.
//!
//! Mobile hosts execute on a copy of the data they fetched from their base
//! station. At commit time the coordinator validates the read versions
//! against the database. When a commit goes through, every other in-flight
//! transaction that used the written items is sent the new values and told
//! to restart, so a conflict costs one recomputation but no abort and no
//! second fetch over the slow uplink. Two baselines (abort on conflict and
//! periodic invalidation broadcasts) run on the same engine for comparison.
//!
//! ```
//! use mocc::harness::run_scenario;
//!
//! let run = run_scenario("banking-case-i", 0, false).unwrap();
//! assert_eq!(run.metrics.committed, 2);
//! assert_eq!(run.metrics.restarted, 1);
//! assert_eq!(run.metrics.aborted, 0);
//! assert!(run.metrics.verdict.passed());
//! ```
//!
//! The layers, bottom up: [`model`] and [`store`] hold data and versions,
//! [`coordinator`] and [`host`] are the two protocol roles as pure state
//! machines, [`netsim`] and [`sim`] move messages between them in simulated
//! time, [`verify`] checks the resulting history and [`harness`] drives
//! configured runs.

pub mod coordinator;
pub mod harness;
pub mod host;
pub mod logic;
pub mod message;
pub mod model;
pub mod netsim;
pub mod sim;
pub mod store;
pub mod trace;
pub mod verify;
