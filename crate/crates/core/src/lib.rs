//! Deterministic discrete-event simulator for a self-adaptive sensor-fusion
//! segmentation pipeline.
//!
//! The crate models a small robotics-style perception stack — camera, depth
//! sensor, image enhancement, sensor fusion, semantic segmentation — as
//! lifecycle-managed nodes exchanging messages over a virtual-time pub/sub
//! bus. Degradations (sensor outages, lighting shifts, calibration drift,
//! noise bursts, defocus) can be injected mid-run; a monitor derives health
//! symptoms from topic rates and model uncertainty, and pluggable
//! controllers react with lifecycle transitions, parameter changes,
//! subscription rewiring, restarts, and redeployments. The harness scores
//! each run (segmentation quality, output availability, reaction time,
//! resolution ratio, unnecessary redeployments) and every run is a pure
//! function of its scenario and seed, down to byte-identical event logs.

pub mod bus;
pub mod calibrate;
pub mod cli;
pub mod injector;
pub mod lifecycle;
pub mod log;
pub mod managing;
pub mod metrics;
pub mod monitor;
pub mod pipeline;
pub mod plot;
pub mod scenario;
pub mod scene;
pub mod sim;
pub mod sweep;
pub mod time;
