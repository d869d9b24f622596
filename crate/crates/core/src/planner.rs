//! From preliminary ranges to a scan plan.
//!
//! If the scanner interface already holds an address inside one of the
//! preliminary ranges, that configuration is kept and only the final ranges
//! are derived. Otherwise the highest-ranked range becomes the own network,
//! a default gateway candidate is picked from ARP statistics and a free
//! address is chosen next to the detected hosts.

use std::collections::BTreeSet;
use std::net::Ipv4Addr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addr::Ipv4Cidr;
use crate::scanner::ObservationSet;
use crate::scope::{cluster, order_ranges, ClusteringPolicy, NetworkRange, ScopeError};

/// The scanner interface's current IPv4 configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct InterfaceState {
    address: Option<(Ipv4Addr, u8)>,
    pub gateway: Option<Ipv4Addr>,
}

impl InterfaceState {
    pub fn unconfigured() -> InterfaceState {
        InterfaceState::default()
    }

    /// Panics if `prefix_length > 32`.
    pub fn configured(ip: Ipv4Addr, prefix_length: u8, gateway: Option<Ipv4Addr>) -> InterfaceState {
        assert!(prefix_length <= 32, "prefix length {prefix_length} out of range");
        InterfaceState { address: Some((ip, prefix_length)), gateway }
    }

    pub fn is_configured(&self) -> bool {
        self.address.is_some()
    }

    pub fn ip(&self) -> Option<Ipv4Addr> {
        self.address.map(|(ip, _)| ip)
    }

    pub fn prefix_length(&self) -> Option<u8> {
        self.address.map(|(_, p)| p)
    }

    /// The block the configured address and mask describe.
    pub fn block(&self) -> Option<Ipv4Cidr> {
        self.address.map(|(ip, p)| Ipv4Cidr::new(ip, p))
    }
}

/// Where the proposed default gateway came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GatewayProvenance {
    ArpReplySender,
    ArpRequestTarget,
    RangeFirstAddress,
    RangeLastAddress,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposedConfig {
    pub ip: Ipv4Addr,
    pub prefix_length: u8,
    pub gateway: Ipv4Addr,
    pub gateway_provenance: GatewayProvenance,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanPlan {
    pub final_ranges: Vec<Ipv4Cidr>,
    pub own_network: Ipv4Cidr,
    /// Absent when the current interface configuration already fits.
    pub reconfiguration: Option<ProposedConfig>,
    pub preliminary_ranges: Vec<NetworkRange>,
    pub source_observations: Arc<ObservationSet>,
    /// Microseconds since the Unix epoch.
    pub created_at_us: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("no network ranges could be determined (no hosts were detected)")]
    NoRangesDetermined,
    #[error("no free address found in {network}")]
    NoFreeAddress { network: Ipv4Cidr },
}

/// The preliminary range holding the interface address, if any.
pub fn fits_configuration<'a>(iface: &InterfaceState, ranges: &'a [NetworkRange]) -> Option<&'a NetworkRange> {
    let ip = iface.ip()?;
    ranges.iter().find(|r| r.contains(ip))
}

/// Head of the ordered range list.
pub fn select_own_network(ordered: &[NetworkRange]) -> Result<&NetworkRange, PlanError> {
    ordered.first().ok_or(PlanError::NoRangesDetermined)
}

/// Picks an unused address for the scanner.
///
/// The first undetected address strictly between the range's lowest and
/// highest host wins. Failing that, the closest eligible address below the
/// range, then the closest above it. Eligible means usable in
/// `finalized_cidr`, not detected and not in `reserved`.
pub fn select_free_ip(
    range: &NetworkRange,
    finalized_cidr: Ipv4Cidr,
    reserved: &BTreeSet<Ipv4Addr>,
) -> Result<Ipv4Addr, PlanError> {
    let eligible = |v: u32| {
        let a = Ipv4Addr::from(v);
        finalized_cidr.is_usable(a) && !range.detected_hosts.contains(&a) && !reserved.contains(&a)
    };
    // Every address in a gap between consecutive hosts is undetected, so a
    // gap holds a candidate unless reserved or unusable addresses fill it.
    let hosts: Vec<u32> = range.detected_hosts.iter().map(|h| u32::from(*h)).collect();
    for pair in hosts.windows(2) {
        if let Some(v) = (pair[0] + 1..pair[1]).find(|v| eligible(*v)) {
            return Ok(Ipv4Addr::from(v));
        }
    }
    let (lo, hi) = (finalized_cidr.first_u32(), finalized_cidr.last_u32());
    let start = u32::from(range.start);
    let end = u32::from(range.end);
    if start > lo {
        if let Some(v) = (lo..start).rev().find(|v| eligible(*v)) {
            return Ok(Ipv4Addr::from(v));
        }
    }
    if end < hi {
        if let Some(v) = (end + 1..=hi).find(|v| eligible(*v)) {
            return Ok(Ipv4Addr::from(v));
        }
    }
    Err(PlanError::NoFreeAddress { network: finalized_cidr })
}

/// Picks a default gateway candidate for `finalized_cidr`.
///
/// Tiers, first hit wins: the most frequent ARP reply sender, the most
/// frequent ARP request target, then the first usable address of the block.
/// Only usable addresses of the block are candidates; ties go to the lowest
/// address.
pub fn determine_gateway(observations: &ObservationSet, finalized_cidr: Ipv4Cidr) -> (Ipv4Addr, GatewayProvenance) {
    let in_block = |ip: &Ipv4Addr| finalized_cidr.is_usable(*ip);

    let replies = observations.hosts.values().filter(|h| in_block(&h.ip)).map(|h| (h.ip, h.arp_replies_sent));
    if let Some(ip) = argmax_positive(replies) {
        return (ip, GatewayProvenance::ArpReplySender);
    }

    let targets = observations
        .hosts
        .values()
        .map(|h| (h.ip, h.arp_requests_targeting))
        .chain(observations.target_only_stats.iter().map(|(ip, n)| (*ip, *n)))
        .filter(|(ip, _)| in_block(ip));
    if let Some(ip) = argmax_positive(targets) {
        return (ip, GatewayProvenance::ArpRequestTarget);
    }

    (finalized_cidr.first_usable(), GatewayProvenance::RangeFirstAddress)
}

fn argmax_positive(items: impl Iterator<Item = (Ipv4Addr, u64)>) -> Option<Ipv4Addr> {
    items.filter(|(_, n)| *n > 0).max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0))).map(|(ip, _)| ip)
}

/// Turns preliminary ranges into disjoint CIDR blocks.
///
/// The fitting range takes the interface's own block. Every other range is
/// snapped to its smallest covering block; when that block would leave the
/// range's special-purpose segment the range is covered exactly by aligned
/// blocks instead. Nested blocks are merged into their container.
pub fn finalize_ranges(
    preliminary: &[NetworkRange],
    iface: &InterfaceState,
    fit: Option<&NetworkRange>,
) -> Vec<Ipv4Cidr> {
    let mut blocks: Vec<Ipv4Cidr> = Vec::new();
    for range in preliminary {
        match (fit, iface.block()) {
            (Some(f), Some(own)) if f == range => blocks.push(own),
            _ => blocks.extend(snap_range(range)),
        }
    }
    merge_blocks(blocks)
}

fn snap_range(range: &NetworkRange) -> Vec<Ipv4Cidr> {
    let covering = range.covering_block();
    if covering.is_class_pure() {
        vec![covering]
    } else {
        Ipv4Cidr::decompose(range.start, range.end)
    }
}

/// Drops every block nested in another; CIDR blocks are either nested or
/// disjoint, so the result is pairwise disjoint.
fn merge_blocks(mut blocks: Vec<Ipv4Cidr>) -> Vec<Ipv4Cidr> {
    blocks.sort();
    let mut out: Vec<Ipv4Cidr> = Vec::with_capacity(blocks.len());
    for b in blocks {
        match out.last() {
            Some(last) if last.contains_block(&b) => {}
            _ => out.push(b),
        }
    }
    out
}

/// Runs the full analysis over a finished passive phase.
pub fn build_scan_plan(
    observations: Arc<ObservationSet>,
    policy: &ClusteringPolicy,
    iface: &InterfaceState,
    created_at_us: u64,
) -> Result<ScanPlan, PlanError> {
    let hosts: BTreeSet<Ipv4Addr> = observations.hosts.keys().copied().collect();
    let preliminary = cluster(&hosts, policy).map_err(|e| match e {
        ScopeError::EmptyInput => PlanError::NoRangesDetermined,
        // Policies are validated on construction.
        other => unreachable!("unexpected clustering error: {other}"),
    })?;
    let ordered = order_ranges(preliminary.clone());
    let fit = fits_configuration(iface, &preliminary);
    let final_ranges = finalize_ranges(&preliminary, iface, fit);

    let (own_network, reconfiguration) = match (fit, iface.ip()) {
        (Some(_), Some(ip)) => {
            let own = *final_ranges.iter().find(|b| b.contains(ip)).expect("fitting block is finalized");
            (own, None)
        }
        _ => {
            let own_range = select_own_network(&ordered)?;
            let (block, range) = own_block(own_range, &final_ranges);
            let proposed = propose_config(&observations, &range, block)?;
            (block, Some(proposed))
        }
    };

    Ok(ScanPlan {
        final_ranges,
        own_network,
        reconfiguration,
        preliminary_ranges: preliminary,
        source_observations: observations,
        created_at_us,
    })
}

/// The final block for the own range, and the part of the range inside it.
///
/// Normally one block covers the whole range. When the range had to be
/// split into several blocks, the one holding most detected hosts wins.
fn own_block(range: &NetworkRange, final_ranges: &[Ipv4Cidr]) -> (Ipv4Cidr, NetworkRange) {
    let best = final_ranges
        .iter()
        .map(|b| (*b, range.detected_hosts.iter().filter(|h| b.contains(**h)).count()))
        .filter(|(_, n)| *n > 0)
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(b, _)| b)
        .expect("every detected host lies in a final block");
    if best.contains(range.start) && best.contains(range.end) {
        return (best, range.clone());
    }
    let inside = range.detected_hosts.iter().copied().filter(|h| best.contains(*h)).collect();
    (best, NetworkRange::from_hosts(inside).expect("block holds at least one host"))
}

fn propose_config(
    observations: &ObservationSet,
    range: &NetworkRange,
    block: Ipv4Cidr,
) -> Result<ProposedConfig, PlanError> {
    let (gateway, provenance) = determine_gateway(observations, block);
    // Hosts of other ranges merged into the same block are off limits too.
    let others: BTreeSet<Ipv4Addr> = observations.hosts.keys().copied().filter(|h| block.contains(*h)).collect();
    let attempt = |gw: Ipv4Addr| {
        let mut reserved = others.clone();
        reserved.insert(gw);
        select_free_ip(range, block, &reserved)
    };
    let (ip, gateway, gateway_provenance) = match attempt(gateway) {
        Ok(ip) => (ip, gateway, provenance),
        Err(err) => {
            // The last usable address is the fallback fixed candidate.
            let last = block.last_usable();
            if provenance != GatewayProvenance::RangeFirstAddress || last == gateway {
                return Err(err);
            }
            (attempt(last)?, last, GatewayProvenance::RangeLastAddress)
        }
    };
    Ok(ProposedConfig { ip, prefix_length: block.prefix_len(), gateway, gateway_provenance })
}
