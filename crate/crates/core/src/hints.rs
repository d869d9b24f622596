//! Analytics that need no active probing: initial-TTL guesses and locating a
//! target network's internal router interface from external hopcounts.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Common operating-system initial TTLs, ascending.
pub const INITIAL_TTLS: [u8; 3] = [64, 128, 255];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OsFamilyHint {
    UnixLike,
    Windows,
    NetworkDevice,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TtlHint {
    pub observed_ttl: u32,
    /// `None` when the observed value is outside 1..=255.
    pub inferred_initial_ttl: Option<u8>,
    pub inferred_distance_hops: Option<u8>,
    pub os_family_hint: OsFamilyHint,
}

/// Guesses the sender's initial TTL as the smallest common default not
/// below the observed value.
pub fn ttl_hint(observed_ttl: u32) -> TtlHint {
    let initial = INITIAL_TTLS.iter().copied().find(|t| observed_ttl >= 1 && u32::from(*t) >= observed_ttl);
    let os_family_hint = match initial {
        Some(64) => OsFamilyHint::UnixLike,
        Some(128) => OsFamilyHint::Windows,
        Some(255) => OsFamilyHint::NetworkDevice,
        _ => OsFamilyHint::Unknown,
    };
    TtlHint {
        observed_ttl,
        inferred_initial_ttl: initial,
        inferred_distance_hops: initial.map(|t| t - observed_ttl as u8),
        os_family_hint,
    }
}

/// Hopcounts to addresses of one target range, measured from a single
/// external vantage point.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HopcountTable {
    pub entries: BTreeMap<Ipv4Addr, u32>,
}

#[derive(Debug, Error)]
pub enum HopcountError {
    #[error("cannot read hopcount table {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid hopcount table: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("hopcount for {0} must be at least 1")]
    ZeroHopcount(Ipv4Addr),
}

impl HopcountTable {
    /// Parses a JSON object mapping address strings to hopcounts.
    pub fn from_json(text: &str) -> Result<HopcountTable, HopcountError> {
        let table: HopcountTable = serde_json::from_str(text)?;
        if let Some((ip, _)) = table.entries.iter().find(|(_, h)| **h == 0) {
            return Err(HopcountError::ZeroHopcount(*ip));
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<HopcountTable, HopcountError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| HopcountError::Io { path: path.display().to_string(), source })?;
        HopcountTable::from_json(&text)
    }
}

/// Finds the single address whose hopcount is one below the table's modal
/// hopcount.
///
/// A router's internal interface answers as a host, so seen from outside it
/// is one hop closer than the hosts behind it. When two hopcounts are
/// equally frequent the larger is taken as the mode. Returns `None` when no
/// address or more than one address sits one hop closer.
pub fn infer_internal_gateway(table: &HopcountTable) -> Option<Ipv4Addr> {
    let mut frequency: BTreeMap<u32, usize> = BTreeMap::new();
    for hops in table.entries.values() {
        *frequency.entry(*hops).or_insert(0) += 1;
    }
    let (mode, _) = frequency.iter().max_by(|a, b| a.1.cmp(b.1).then(a.0.cmp(b.0)))?;
    let wanted = mode.checked_sub(1)?;
    let mut candidates = table.entries.iter().filter(|(_, h)| **h == wanted).map(|(ip, _)| *ip);
    match (candidates.next(), candidates.next()) {
        (Some(ip), None) => Some(ip),
        _ => None,
    }
}
