//! Ethernet II frame decoding into ARP and IPv4 summaries.
//!
//! Decoding is total: any byte sequence yields a [`Decoded`] value, and
//! malformed or unsupported frames simply come back as [`Decoded::Ignored`].
//! Only the bytes of the captured slice are ever inspected.

use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::addr::MacAddr;

pub const ETHERTYPE_IPV4: u16 = 0x0800;
pub const ETHERTYPE_ARP: u16 = 0x0806;
pub const ETHERTYPE_VLAN: u16 = 0x8100;
pub const ETHERTYPE_QINQ: u16 = 0x88a8;
pub const ETHERTYPE_IPV6: u16 = 0x86dd;

pub const ETHERNET_HEADER_LEN: usize = 14;
pub const VLAN_TAG_LEN: usize = 4;
/// Ethernet/IPv4 ARP payload length.
pub const ARP_PAYLOAD_LEN: usize = 28;

const ARP_HTYPE_ETHERNET: u16 = 1;

/// One captured link-layer frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawFrame {
    pub bytes: Vec<u8>,
    /// Microseconds since the Unix epoch.
    pub timestamp_us: u64,
    /// Length of the frame on the wire; at least `bytes.len()`.
    pub original_length: u32,
}

impl RawFrame {
    pub fn new(bytes: Vec<u8>, timestamp_us: u64) -> RawFrame {
        let original_length = bytes.len() as u32;
        RawFrame { bytes, timestamp_us, original_length }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArpOperation {
    Request,
    Reply,
}

impl ArpOperation {
    pub fn opcode(self) -> u16 {
        match self {
            ArpOperation::Request => 1,
            ArpOperation::Reply => 2,
        }
    }

    fn from_opcode(op: u16) -> Option<ArpOperation> {
        match op {
            1 => Some(ArpOperation::Request),
            2 => Some(ArpOperation::Reply),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ArpSummary {
    pub operation: ArpOperation,
    pub sender_mac: MacAddr,
    pub sender_ip: Ipv4Addr,
    pub target_mac: MacAddr,
    pub target_ip: Ipv4Addr,
    pub timestamp_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct IpSummary {
    pub source_ip: Ipv4Addr,
    pub destination_ip: Ipv4Addr,
    /// The header TTL verbatim.
    pub ttl: u8,
    pub timestamp_us: u64,
}

/// Summary of a frame the scanner can use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Summary {
    Arp(ArpSummary),
    Ip(IpSummary),
}

impl Summary {
    pub fn timestamp_us(&self) -> u64 {
        match self {
            Summary::Arp(a) => a.timestamp_us,
            Summary::Ip(i) => i.timestamp_us,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Decoded {
    Arp(ArpSummary),
    Ip(IpSummary),
    Ignored,
}

impl Decoded {
    pub fn summary(self) -> Option<Summary> {
        match self {
            Decoded::Arp(a) => Some(Summary::Arp(a)),
            Decoded::Ip(i) => Some(Summary::Ip(i)),
            Decoded::Ignored => None,
        }
    }
}

pub fn decode_frame(frame: &RawFrame) -> Decoded {
    decode_bytes(&frame.bytes, frame.timestamp_us)
}

/// Decodes a captured frame given as a slice.
pub fn decode_bytes(bytes: &[u8], timestamp_us: u64) -> Decoded {
    let Some(ethertype) = read_u16(bytes, 12) else {
        return Decoded::Ignored;
    };
    let (ethertype, l3) = match ethertype {
        ETHERTYPE_VLAN => match read_u16(bytes, 16) {
            // Only a single tag is unwrapped.
            Some(ETHERTYPE_VLAN) | Some(ETHERTYPE_QINQ) | None => return Decoded::Ignored,
            Some(inner) => (inner, ETHERNET_HEADER_LEN + VLAN_TAG_LEN),
        },
        other => (other, ETHERNET_HEADER_LEN),
    };
    let payload = &bytes[l3..];
    match ethertype {
        ETHERTYPE_ARP => decode_arp(payload, timestamp_us).map_or(Decoded::Ignored, Decoded::Arp),
        ETHERTYPE_IPV4 => decode_ipv4(payload, timestamp_us).map_or(Decoded::Ignored, Decoded::Ip),
        _ => Decoded::Ignored,
    }
}

fn decode_arp(p: &[u8], timestamp_us: u64) -> Option<ArpSummary> {
    if p.len() < ARP_PAYLOAD_LEN {
        return None;
    }
    if read_u16(p, 0)? != ARP_HTYPE_ETHERNET || read_u16(p, 2)? != ETHERTYPE_IPV4 {
        return None;
    }
    if p[4] != 6 || p[5] != 4 {
        return None;
    }
    let operation = ArpOperation::from_opcode(read_u16(p, 6)?)?;
    Some(ArpSummary {
        operation,
        sender_mac: read_mac(p, 8)?,
        sender_ip: read_ipv4(p, 14)?,
        target_mac: read_mac(p, 18)?,
        target_ip: read_ipv4(p, 24)?,
        timestamp_us,
    })
}

fn decode_ipv4(p: &[u8], timestamp_us: u64) -> Option<IpSummary> {
    let first = *p.first()?;
    let (version, ihl) = (first >> 4, usize::from(first & 0x0f));
    if version != 4 || ihl < 5 || p.len() < ihl * 4 {
        return None;
    }
    Some(IpSummary { source_ip: read_ipv4(p, 12)?, destination_ip: read_ipv4(p, 16)?, ttl: p[8], timestamp_us })
}

fn read_u16(b: &[u8], at: usize) -> Option<u16> {
    let s = b.get(at..at + 2)?;
    Some(u16::from_be_bytes([s[0], s[1]]))
}

fn read_mac(b: &[u8], at: usize) -> Option<MacAddr> {
    let s: [u8; 6] = b.get(at..at + 6)?.try_into().ok()?;
    Some(MacAddr(s))
}

fn read_ipv4(b: &[u8], at: usize) -> Option<Ipv4Addr> {
    let s: [u8; 4] = b.get(at..at + 4)?.try_into().ok()?;
    Some(Ipv4Addr::from(s))
}
