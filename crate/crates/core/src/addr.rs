//! IPv4 address helpers: special-purpose classification, CIDR blocks and
//! MAC addresses.

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// A 48-bit Ethernet hardware address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct MacAddr(pub [u8; 6]);

impl MacAddr {
    pub const ZERO: MacAddr = MacAddr([0; 6]);
    pub const BROADCAST: MacAddr = MacAddr([0xff; 6]);

    pub fn octets(&self) -> [u8; 6] {
        self.0
    }
}

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d, e, g] = self.0;
        write!(f, "{a:02x}:{b:02x}:{c:02x}:{d:02x}:{e:02x}:{g:02x}")
    }
}

impl FromStr for MacAddr {
    type Err = ParseAddrError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 6];
        let mut parts = s.split(':');
        for slot in out.iter_mut() {
            let part = parts.next().ok_or_else(|| ParseAddrError::Mac(s.to_string()))?;
            if part.len() != 2 {
                return Err(ParseAddrError::Mac(s.to_string()));
            }
            *slot = u8::from_str_radix(part, 16).map_err(|_| ParseAddrError::Mac(s.to_string()))?;
        }
        if parts.next().is_some() {
            return Err(ParseAddrError::Mac(s.to_string()));
        }
        Ok(MacAddr(out))
    }
}

impl Serialize for MacAddr {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MacAddr {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseAddrError {
    #[error("invalid MAC address `{0}`")]
    Mac(String),
    #[error("invalid CIDR block `{0}` (expected a.b.c.d/p)")]
    Cidr(String),
}

/// Special-purpose class of an IPv4 address.
///
/// The derived ordering is the priority used when ranking ranges: globally
/// reachable space first, then private, then dynamic link-local.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AddressClass {
    Global,
    Private,
    LinkLocal,
}

impl fmt::Display for AddressClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AddressClass::Global => "global",
            AddressClass::Private => "private",
            AddressClass::LinkLocal => "link-local",
        })
    }
}

/// Private (RFC 1918) and dynamic link-local (RFC 3927) blocks, ascending.
const SPECIAL_BLOCKS: [(Ipv4Cidr, AddressClass); 4] = [
    (Ipv4Cidr::from_raw(0x0a00_0000, 8), AddressClass::Private),
    (Ipv4Cidr::from_raw(0xa9fe_0000, 16), AddressClass::LinkLocal),
    (Ipv4Cidr::from_raw(0xac10_0000, 12), AddressClass::Private),
    (Ipv4Cidr::from_raw(0xc0a8_0000, 16), AddressClass::Private),
];

pub fn classify_address(ip: Ipv4Addr) -> AddressClass {
    SPECIAL_BLOCKS.iter().find(|(block, _)| block.contains(ip)).map(|(_, class)| *class).unwrap_or(AddressClass::Global)
}

/// A maximal contiguous interval of the address space holding one class.
///
/// The special blocks cut the 32-bit space into nine such segments. Two
/// addresses belong to the same segment iff every address between them has
/// the same class, which is the purity condition ranges must satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClassSegment {
    pub first: u32,
    pub last: u32,
    pub class: AddressClass,
}

pub fn class_segment(ip: Ipv4Addr) -> ClassSegment {
    let value = u32::from(ip);
    let mut lower = 0u32;
    for (block, class) in SPECIAL_BLOCKS.iter() {
        let (first, last) = (block.first_u32(), block.last_u32());
        if value < first {
            return ClassSegment { first: lower, last: first - 1, class: AddressClass::Global };
        }
        if value <= last {
            return ClassSegment { first, last, class: *class };
        }
        lower = last + 1;
    }
    ClassSegment { first: lower, last: u32::MAX, class: AddressClass::Global }
}

/// Whether every address in `[start, end]` has a single class.
pub fn is_class_pure(start: Ipv4Addr, end: Ipv4Addr) -> bool {
    let seg = class_segment(start);
    u32::from(end) >= seg.first && u32::from(end) <= seg.last
}

/// Addresses that may be recorded as a host: not unspecified, not limited
/// broadcast and not multicast.
pub fn is_storable_host(ip: Ipv4Addr) -> bool {
    !(ip.is_unspecified() || ip.is_broadcast() || ip.is_multicast())
}

/// An IPv4 CIDR block with its network address normalised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Ipv4Cidr {
    network: u32,
    prefix: u8,
}

impl Ipv4Cidr {
    /// Builds the block of length `prefix` that contains `ip`.
    ///
    /// Panics if `prefix > 32`.
    pub fn new(ip: Ipv4Addr, prefix: u8) -> Ipv4Cidr {
        assert!(prefix <= 32, "prefix length {prefix} out of range");
        Ipv4Cidr::from_raw(u32::from(ip), prefix)
    }

    const fn from_raw(value: u32, prefix: u8) -> Ipv4Cidr {
        Ipv4Cidr { network: value & mask(prefix), prefix }
    }

    pub fn network(&self) -> Ipv4Addr {
        Ipv4Addr::from(self.network)
    }

    pub fn prefix_len(&self) -> u8 {
        self.prefix
    }

    pub fn netmask(&self) -> Ipv4Addr {
        Ipv4Addr::from(mask(self.prefix))
    }

    /// Highest address of the block (the directed broadcast for prefixes up to /30).
    pub fn broadcast(&self) -> Ipv4Addr {
        Ipv4Addr::from(self.last_u32())
    }

    pub fn size(&self) -> u64 {
        1u64 << (32 - u32::from(self.prefix))
    }

    pub fn contains(&self, ip: Ipv4Addr) -> bool {
        u32::from(ip) & mask(self.prefix) == self.network
    }

    pub fn contains_block(&self, other: &Ipv4Cidr) -> bool {
        other.prefix >= self.prefix && self.contains(other.network())
    }

    pub fn overlaps(&self, other: &Ipv4Cidr) -> bool {
        self.contains_block(other) || other.contains_block(self)
    }

    pub(crate) fn first_u32(&self) -> u32 {
        self.network
    }

    pub(crate) fn last_u32(&self) -> u32 {
        self.network | !mask(self.prefix)
    }

    /// Whether `ip` may be assigned to an interface in this block.
    ///
    /// /31 and /32 have no network or broadcast address (RFC 3021); in larger
    /// blocks both ends are excluded.
    pub fn is_usable(&self, ip: Ipv4Addr) -> bool {
        if !self.contains(ip) {
            return false;
        }
        if self.prefix >= 31 {
            return true;
        }
        let v = u32::from(ip);
        v != self.first_u32() && v != self.last_u32()
    }

    pub fn first_usable(&self) -> Ipv4Addr {
        if self.prefix >= 31 {
            self.network()
        } else {
            Ipv4Addr::from(self.network + 1)
        }
    }

    pub fn last_usable(&self) -> Ipv4Addr {
        if self.prefix >= 31 {
            self.broadcast()
        } else {
            Ipv4Addr::from(self.last_u32() - 1)
        }
    }

    /// Smallest block containing both `start` and `end`.
    pub fn covering(start: Ipv4Addr, end: Ipv4Addr) -> Ipv4Cidr {
        let diff = u32::from(start) ^ u32::from(end);
        let prefix = diff.leading_zeros() as u8;
        Ipv4Cidr::new(start, prefix)
    }

    /// Minimal list of aligned blocks exactly covering `[start, end]`.
    pub fn decompose(start: Ipv4Addr, end: Ipv4Addr) -> Vec<Ipv4Cidr> {
        let (mut lo, hi) = (u64::from(u32::from(start)), u64::from(u32::from(end)));
        let mut out = Vec::new();
        while lo <= hi {
            let align = if lo == 0 { 32 } else { lo.trailing_zeros().min(32) };
            let mut bits = align;
            while bits > 0 && lo + (1u64 << bits) - 1 > hi {
                bits -= 1;
            }
            out.push(Ipv4Cidr::from_raw(lo as u32, (32 - bits) as u8));
            lo += 1u64 << bits;
        }
        out
    }

    /// Whether every address of the block has one class.
    pub fn is_class_pure(&self) -> bool {
        is_class_pure(self.network(), self.broadcast())
    }
}

impl PartialOrd for Ipv4Cidr {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ipv4Cidr {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.network, self.prefix).cmp(&(other.network, other.prefix))
    }
}

const fn mask(prefix: u8) -> u32 {
    if prefix == 0 {
        0
    } else {
        u32::MAX << (32 - prefix as u32)
    }
}

impl fmt::Display for Ipv4Cidr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.network(), self.prefix)
    }
}

impl FromStr for Ipv4Cidr {
    type Err = ParseAddrError;

    /// Accepts `a.b.c.d/p`; host bits are cleared.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseAddrError::Cidr(s.to_string());
        let (ip, prefix) = s.split_once('/').ok_or_else(err)?;
        let ip: Ipv4Addr = ip.parse().map_err(|_| err())?;
        let prefix: u8 = prefix.parse().map_err(|_| err())?;
        if prefix > 32 {
            return Err(err());
        }
        Ok(Ipv4Cidr::new(ip, prefix))
    }
}

impl Serialize for Ipv4Cidr {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Ipv4Cidr {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Parses `a.b.c.d/p` keeping the host part, as used for interface addresses.
pub fn parse_interface_address(s: &str) -> Result<(Ipv4Addr, u8), ParseAddrError> {
    let err = || ParseAddrError::Cidr(s.to_string());
    let (ip, prefix) = s.split_once('/').ok_or_else(err)?;
    let ip: Ipv4Addr = ip.parse().map_err(|_| err())?;
    let prefix: u8 = prefix.parse().map_err(|_| err())?;
    if prefix > 32 {
        return Err(err());
    }
    Ok((ip, prefix))
}
