//! Deterministic substation-network laboratory.
//!
//! The crate simulates a small SCADA deployment (a DNP3 master polling a
//! handful of outstations across a substation router) inside a
//! single-process discrete-event simulation. An adversary node can be
//! inserted on the LAN via ARP cache poisoning to tamper with commands and
//! measurements in flight, a rule-based IDS watches the router, and a
//! metrics layer turns the resulting capture and alert logs into
//! retransmission/RTT/processing reports.
//!
//! Module map:
//! - [`dnp3`]: bit-exact frame codec (link/transport/application layers,
//!   per-chunk CRC, point extraction and localization)
//! - [`netsim`]: the event queue, LAN/WAN frames, ARP, a minimal reliable
//!   transport with a fixed retransmission timer, and capture taps
//! - [`endpoints`]: master and outstation state machines plus the operator
//!   script
//! - [`mitm`]: the adversary forwarding pipeline (command inversion,
//!   setpoint forgery, measurement sniff/modify, acknowledgement masking)
//! - [`ids`]: ARP-spoof whitelist and DNP3 preprocessor rules (R1–R5,
//!   CRC check)
//! - [`metrics`]: retransmission rate, RTT pairing, processing-time and
//!   alert-correlation reports
//! - [`scenario`]: config files, the three-phase runner, artifacts, sweeps

pub mod dnp3;
pub mod endpoints;
pub mod ids;
pub mod metrics;
pub mod mitm;
pub mod netsim;
pub mod scenario;
