//! The scan plan file handed to active scanners.
//!
//! One JSON object. Readers must ignore fields they do not know, so the
//! document can grow without breaking consumers.

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::addr::{Ipv4Cidr, MacAddr};
use crate::planner::{GatewayProvenance, ScanPlan};
use crate::scanner::{HostObservation, TerminationReason};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostCounts {
    pub macs: BTreeSet<MacAddr>,
    pub arp_requests_sent: u64,
    pub arp_replies_sent: u64,
    pub arp_requests_targeting: u64,
    pub ip_packets_sent: u64,
    pub observed_ttls: BTreeMap<u8, u64>,
    pub first_seen_us: u64,
    pub last_seen_us: u64,
}

impl From<&HostObservation> for HostCounts {
    fn from(h: &HostObservation) -> HostCounts {
        HostCounts {
            macs: h.macs.clone(),
            arp_requests_sent: h.arp_requests_sent,
            arp_replies_sent: h.arp_replies_sent,
            arp_requests_targeting: h.arp_requests_targeting,
            ip_packets_sent: h.ip_packets_sent,
            observed_ttls: h.observed_ttls.clone(),
            first_seen_us: h.first_seen_us,
            last_seen_us: h.last_seen_us,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanDocument {
    pub final_ranges: Vec<Ipv4Cidr>,
    pub own_network: Ipv4Cidr,
    /// The `proposed_*` fields are null when no reconfiguration is needed.
    pub proposed_ip: Option<Ipv4Addr>,
    pub proposed_prefix_length: Option<u8>,
    pub proposed_gateway: Option<Ipv4Addr>,
    pub gateway_provenance: Option<GatewayProvenance>,
    pub reconfiguration_required: bool,
    pub termination_reason: Option<TerminationReason>,
    pub detected_hosts: BTreeMap<Ipv4Addr, HostCounts>,
    /// Observed "start-end" spans before snapping to CIDR blocks.
    #[serde(default)]
    pub preliminary_ranges: Vec<String>,
    #[serde(default)]
    pub internal_gateway_hint: Option<Ipv4Addr>,
    /// Zero when written with normalized timestamps.
    #[serde(default)]
    pub created_at_us: u64,
}

impl PlanDocument {
    pub fn from_plan(plan: &ScanPlan, internal_gateway_hint: Option<Ipv4Addr>) -> PlanDocument {
        let obs = &plan.source_observations;
        let r = plan.reconfiguration.as_ref();
        PlanDocument {
            final_ranges: plan.final_ranges.clone(),
            own_network: plan.own_network,
            proposed_ip: r.map(|c| c.ip),
            proposed_prefix_length: r.map(|c| c.prefix_length),
            proposed_gateway: r.map(|c| c.gateway),
            gateway_provenance: r.map(|c| c.gateway_provenance),
            reconfiguration_required: r.is_some(),
            termination_reason: obs.termination_reason,
            detected_hosts: obs.hosts.iter().map(|(ip, h)| (*ip, HostCounts::from(h))).collect(),
            preliminary_ranges: plan.preliminary_ranges.iter().map(|r| r.to_string()).collect(),
            internal_gateway_hint,
            created_at_us: plan.created_at_us,
        }
    }

    /// Pretty-printed JSON with a trailing newline. Map keys are sorted, so
    /// equal plans give identical bytes.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plan documents always serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<PlanDocument, serde_json::Error> {
        serde_json::from_str(text)
    }
}
