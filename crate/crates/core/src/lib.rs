//! Passive network scope discovery.
//!
//! The pipeline sniffs ARP and IPv4 traffic without sending anything
//! ([`scanner`]), groups the detected hosts into candidate ranges
//! ([`scope`]), checks or proposes an interface configuration and snaps the
//! ranges to CIDR blocks ([`planner`]), and writes a scan plan for an active
//! scanner ([`planfile`]). [`synth`] builds annotated test captures.

pub mod addr;
pub mod capture;
pub mod cli;
pub mod codec;
pub mod hints;
pub mod pcap;
pub mod planfile;
pub mod planner;
pub mod scanner;
pub mod scope;
pub mod synth;
