//! Preliminary network ranges from detected host addresses.
//!
//! Addresses are clustered with one of three policies. Every policy also
//! splits at special-purpose space boundaries, checked on the whole
//! `[start, end]` interval: two global addresses on either side of 10.0.0.0/8
//! never share a range.

use std::collections::BTreeSet;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addr::{class_segment, classify_address, AddressClass, Ipv4Cidr};

pub const DEFAULT_MAX_NETWORK_SIZE: u64 = 256;

/// A contiguous span of addresses bounded by its lowest and highest
/// detected host.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkRange {
    pub start: Ipv4Addr,
    pub end: Ipv4Addr,
    pub detected_hosts: BTreeSet<Ipv4Addr>,
    pub class: AddressClass,
}

impl NetworkRange {
    /// Builds the min–max range of a non-empty host set.
    pub fn from_hosts(detected_hosts: BTreeSet<Ipv4Addr>) -> Option<NetworkRange> {
        let start = *detected_hosts.first()?;
        let end = *detected_hosts.last()?;
        Some(NetworkRange { start, end, class: classify_address(start), detected_hosts })
    }

    pub fn contains(&self, ip: Ipv4Addr) -> bool {
        self.start <= ip && ip <= self.end
    }

    pub fn host_count(&self) -> usize {
        self.detected_hosts.len()
    }

    /// Number of addresses in `[start, end]`.
    pub fn span(&self) -> u64 {
        u64::from(u32::from(self.end)) - u64::from(u32::from(self.start)) + 1
    }

    /// Smallest CIDR block containing the range.
    pub fn covering_block(&self) -> Ipv4Cidr {
        Ipv4Cidr::covering(self.start, self.end)
    }
}

impl std::fmt::Display for NetworkRange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{}", self.start, self.end)
    }
}

/// One of the three clustering variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ClusteringVariant {
    /// Split whenever a cluster would span more than `max_size` addresses.
    MaxNetworkSize { max_size: u64 },
    /// Group by a presumed network prefix.
    PresumedPrefix { prefix_length: u8 },
    /// One network per special-purpose segment.
    SingleNetwork,
}

/// A validated clustering variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ClusteringPolicy(ClusteringVariant);

impl Default for ClusteringPolicy {
    fn default() -> Self {
        ClusteringPolicy(ClusteringVariant::MaxNetworkSize { max_size: DEFAULT_MAX_NETWORK_SIZE })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScopeError {
    #[error("no addresses to cluster")]
    EmptyInput,
    #[error("maximum network size must be at least 2 (got {0})")]
    MaxSizeTooSmall(u64),
    #[error("prefix length {0} exceeds 32")]
    PrefixTooLong(u8),
}

impl ClusteringPolicy {
    pub fn max_network_size(max_size: u64) -> Result<Self, ScopeError> {
        if max_size < 2 {
            return Err(ScopeError::MaxSizeTooSmall(max_size));
        }
        Ok(ClusteringPolicy(ClusteringVariant::MaxNetworkSize { max_size }))
    }

    pub fn presumed_prefix(prefix_length: u8) -> Result<Self, ScopeError> {
        if prefix_length > 32 {
            return Err(ScopeError::PrefixTooLong(prefix_length));
        }
        Ok(ClusteringPolicy(ClusteringVariant::PresumedPrefix { prefix_length }))
    }

    pub fn single_network() -> Self {
        ClusteringPolicy(ClusteringVariant::SingleNetwork)
    }

    pub fn variant(&self) -> ClusteringVariant {
        self.0
    }

    /// Whether `next` may join a cluster whose lowest address is `first`.
    fn joins(&self, first: Ipv4Addr, next: Ipv4Addr) -> bool {
        if class_segment(first) != class_segment(next) {
            return false;
        }
        match self.0 {
            ClusteringVariant::MaxNetworkSize { max_size } => {
                u64::from(u32::from(next)) - u64::from(u32::from(first)) < max_size
            }
            ClusteringVariant::PresumedPrefix { prefix_length } => Ipv4Cidr::new(first, prefix_length).contains(next),
            ClusteringVariant::SingleNetwork => true,
        }
    }
}

/// Partitions `addresses` into preliminary ranges, sorted by start address.
///
/// Clusters are grown greedily over the ascending address list; a new one
/// starts as soon as the next address cannot join the current cluster.
pub fn cluster(addresses: &BTreeSet<Ipv4Addr>, policy: &ClusteringPolicy) -> Result<Vec<NetworkRange>, ScopeError> {
    let mut iter = addresses.iter().copied();
    let first = iter.next().ok_or(ScopeError::EmptyInput)?;
    let mut ranges = Vec::new();
    let mut current = BTreeSet::from([first]);
    let mut lowest = first;
    for addr in iter {
        if !policy.joins(lowest, addr) {
            ranges.extend(NetworkRange::from_hosts(std::mem::take(&mut current)));
            lowest = addr;
        }
        current.insert(addr);
    }
    ranges.extend(NetworkRange::from_hosts(current));
    Ok(ranges)
}

/// Sorts ranges by class (global, private, link-local), then by detected
/// host count descending, then by start address.
pub fn order_ranges(mut ranges: Vec<NetworkRange>) -> Vec<NetworkRange> {
    ranges.sort_by(|a, b| {
        a.class.cmp(&b.class).then_with(|| b.host_count().cmp(&a.host_count())).then_with(|| a.start.cmp(&b.start))
    });
    ranges
}
