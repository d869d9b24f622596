//! Ground-truth-annotated synthetic captures.
//!
//! A scenario places hosts and one gateway per subnet on a single Ethernet
//! segment and drives three Poisson event streams on a logical clock:
//!
//! * ARP requests from random hosts, mostly asking for their gateway;
//! * ARP replies sent by gateways to random hosts of their subnet;
//! * IPv4 packets from random hosts. Most stay inside the subnet. A share
//!   goes to another subnet and is seen twice, once as sent and once as
//!   forwarded by the router with the TTL decremented. With remote networks
//!   configured, a share arrives from off-segment senders several hops away.
//!
//! Output is a pcap savefile plus a manifest describing every sender. Equal
//! specs give byte-identical output.

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addr::{Ipv4Cidr, MacAddr};
use crate::capture::CaptureMode;
use crate::codec::{
    ArpOperation, ArpSummary, IpSummary, ARP_PAYLOAD_LEN, ETHERNET_HEADER_LEN, ETHERTYPE_ARP, ETHERTYPE_IPV4,
};
use crate::hints::INITIAL_TTLS;
use crate::pcap::PcapWriter;

/// Share of ARP requests that ask for the gateway.
const GATEWAY_REQUEST_SHARE: f64 = 0.8;
const FORWARDING_DELAY_US: u64 = 40;
const MAX_REMOTE_HOPS: u8 = 5;
const DEFAULT_START_TIME_US: u64 = 1_600_000_000_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubnetSpec {
    pub cidr: Ipv4Cidr,
    pub host_count: usize,
    pub gateway_address: Ipv4Addr,
    /// Weights over initial TTLs 64, 128 and 255.
    pub os_mix: BTreeMap<u8, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub subnets: Vec<SubnetSpec>,
    /// Events per simulated second, over the whole scenario.
    pub arp_reply_rate: f64,
    pub arp_request_rate: f64,
    pub ip_packet_rate: f64,
    /// Simulated seconds.
    pub duration: f64,
    /// Share of IP packets addressed to another subnet.
    #[serde(default = "default_cross_subnet_fraction")]
    pub cross_subnet_fraction: f64,
    /// Off-segment networks whose traffic reaches the segment via a gateway.
    #[serde(default)]
    pub remote_networks: Vec<Ipv4Cidr>,
    /// Share of IP packets arriving from a remote network.
    #[serde(default = "default_remote_fraction")]
    pub remote_fraction: f64,
    #[serde(default = "default_start_time")]
    pub start_time_us: u64,
}

fn default_cross_subnet_fraction() -> f64 {
    0.2
}

fn default_remote_fraction() -> f64 {
    0.1
}

fn default_start_time() -> u64 {
    DEFAULT_START_TIME_US
}

impl ScenarioSpec {
    /// A spec with the given subnets, even 64/128 OS mix and moderate rates.
    pub fn simple(seed: u64, subnets: &[(&str, usize, &str)], duration: f64) -> ScenarioSpec {
        ScenarioSpec {
            seed,
            subnets: subnets
                .iter()
                .map(|(cidr, hosts, gw)| SubnetSpec {
                    cidr: cidr.parse().expect("valid CIDR"),
                    host_count: *hosts,
                    gateway_address: gw.parse().expect("valid gateway"),
                    os_mix: BTreeMap::from([(64, 1.0), (128, 1.0)]),
                })
                .collect(),
            arp_reply_rate: 2.0,
            arp_request_rate: 5.0,
            ip_packet_rate: 20.0,
            duration,
            cross_subnet_fraction: default_cross_subnet_fraction(),
            remote_networks: Vec::new(),
            remote_fraction: default_remote_fraction(),
            start_time_us: DEFAULT_START_TIME_US,
        }
    }

    pub fn from_json(text: &str) -> Result<ScenarioSpec, SynthError> {
        serde_json::from_str(text).map_err(|e| SynthError::InvalidSpec(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::InvalidSpec(msg));
        if self.subnets.is_empty() {
            return bad("at least one subnet is required".into());
        }
        for (name, rate) in [
            ("arp_reply_rate", self.arp_reply_rate),
            ("arp_request_rate", self.arp_request_rate),
            ("ip_packet_rate", self.ip_packet_rate),
            ("duration", self.duration),
        ] {
            if !rate.is_finite() || rate < 0.0 {
                return bad(format!("{name} must be a finite non-negative number"));
            }
        }
        for (name, share) in
            [("cross_subnet_fraction", self.cross_subnet_fraction), ("remote_fraction", self.remote_fraction)]
        {
            if !(0.0..=1.0).contains(&share) {
                return bad(format!("{name} must lie in [0, 1]"));
            }
        }
        if self.cross_subnet_fraction + self.remote_fraction > 1.0 {
            return bad("cross_subnet_fraction + remote_fraction exceeds 1".into());
        }
        if self.subnets.len() > 255 {
            return bad("at most 255 subnets are supported".into());
        }
        for (i, s) in self.subnets.iter().enumerate() {
            if s.cidr.prefix_len() > 30 {
                return bad(format!("subnet {} is too small to hold hosts and a gateway", s.cidr));
            }
            if !s.cidr.is_usable(s.gateway_address) {
                return bad(format!("gateway {} is not a usable address of {}", s.gateway_address, s.cidr));
            }
            // Usable addresses minus the gateway.
            let room = s.cidr.size() - 3;
            if s.host_count as u64 > room || s.host_count > 65_535 {
                return bad(format!("{} cannot hold {} hosts besides its gateway", s.cidr, s.host_count));
            }
            if s.os_mix.is_empty()
                || s.os_mix.keys().any(|t| !INITIAL_TTLS.contains(t))
                || s.os_mix.values().any(|w| !w.is_finite() || *w < 0.0)
                || s.os_mix.values().sum::<f64>() <= 0.0
            {
                return bad(format!("os_mix of {} must weight initial TTLs 64/128/255", s.cidr));
            }
            if self.subnets[..i].iter().any(|o| o.cidr.overlaps(&s.cidr)) {
                return bad(format!("subnet {} overlaps another subnet", s.cidr));
            }
        }
        for r in &self.remote_networks {
            if r.prefix_len() > 30 {
                return bad(format!("remote network {r} is too small"));
            }
            if self.subnets.iter().any(|s| s.cidr.overlaps(r)) {
                return bad(format!("remote network {r} overlaps a local subnet"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SynthError {
    #[error("invalid scenario spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SenderRole {
    Host,
    Gateway,
    Remote,
}

/// What one address emitted into the capture.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SenderRecord {
    pub role: SenderRole,
    /// Index into `subnets`; absent for remote senders.
    pub subnet: Option<usize>,
    pub arp_requests: u64,
    pub arp_replies: u64,
    /// IPv4 frames emitted with this address as source, by TTL on the wire.
    pub ip_ttls: BTreeMap<u8, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestHost {
    pub ip: Ipv4Addr,
    pub mac: MacAddr,
    pub initial_ttl: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestSubnet {
    pub cidr: Ipv4Cidr,
    pub gateway: Ipv4Addr,
    pub gateway_mac: MacAddr,
    pub hosts: Vec<ManifestHost>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioManifest {
    pub seed: u64,
    pub subnets: Vec<ManifestSubnet>,
    pub senders: BTreeMap<Ipv4Addr, SenderRecord>,
    pub emitted_frame_count: u64,
    /// Router-forwarded copies of cross-subnet packets.
    pub forwarded_frame_count: u64,
    pub remote_frame_count: u64,
}

impl ScenarioManifest {
    /// Hosts and gateway of subnet `index`.
    pub fn true_hosts(&self, index: usize) -> BTreeSet<Ipv4Addr> {
        let s = &self.subnets[index];
        s.hosts.iter().map(|h| h.ip).chain([s.gateway]).collect()
    }

    pub fn true_gateway(&self, index: usize) -> Ipv4Addr {
        self.subnets[index].gateway
    }

    /// Senders a passive phase with the given filter must detect.
    pub fn expected_detections(&self, mode: CaptureMode, accepted_ttls: &BTreeSet<u8>) -> BTreeSet<Ipv4Addr> {
        self.senders
            .iter()
            .filter(|(_, s)| {
                (mode.includes_arp() && s.arp_requests + s.arp_replies > 0)
                    || (mode.includes_ip() && s.ip_ttls.keys().any(|t| accepted_ttls.contains(t)))
            })
            .map(|(ip, _)| *ip)
            .collect()
    }
}

/// Ethernet II frame carrying an ARP packet for `arp`.
pub fn encode_arp(arp: &ArpSummary, eth_src: MacAddr, eth_dst: MacAddr) -> Vec<u8> {
    let mut f = Vec::with_capacity(ETHERNET_HEADER_LEN + ARP_PAYLOAD_LEN);
    f.extend_from_slice(&eth_dst.octets());
    f.extend_from_slice(&eth_src.octets());
    f.extend_from_slice(&ETHERTYPE_ARP.to_be_bytes());
    f.extend_from_slice(&1u16.to_be_bytes());
    f.extend_from_slice(&ETHERTYPE_IPV4.to_be_bytes());
    f.extend_from_slice(&[6, 4]);
    f.extend_from_slice(&arp.operation.opcode().to_be_bytes());
    f.extend_from_slice(&arp.sender_mac.octets());
    f.extend_from_slice(&arp.sender_ip.octets());
    f.extend_from_slice(&arp.target_mac.octets());
    f.extend_from_slice(&arp.target_ip.octets());
    f
}

/// Ethernet II frame carrying a small UDP datagram in IPv4 for `ip`.
pub fn encode_ipv4(ip: &IpSummary, eth_src: MacAddr, eth_dst: MacAddr, ident: u16, ports: (u16, u16)) -> Vec<u8> {
    const PAYLOAD: usize = 16;
    let total_len = (20 + 8 + PAYLOAD) as u16;
    let mut h = [0u8; 20];
    h[0] = 0x45;
    h[2..4].copy_from_slice(&total_len.to_be_bytes());
    h[4..6].copy_from_slice(&ident.to_be_bytes());
    h[6] = 0x40; // don't fragment
    h[8] = ip.ttl;
    h[9] = 17;
    h[12..16].copy_from_slice(&ip.source_ip.octets());
    h[16..20].copy_from_slice(&ip.destination_ip.octets());
    let sum = internet_checksum(&h);
    h[10..12].copy_from_slice(&sum.to_be_bytes());

    let mut f = Vec::with_capacity(ETHERNET_HEADER_LEN + total_len as usize);
    f.extend_from_slice(&eth_dst.octets());
    f.extend_from_slice(&eth_src.octets());
    f.extend_from_slice(&ETHERTYPE_IPV4.to_be_bytes());
    f.extend_from_slice(&h);
    f.extend_from_slice(&ports.0.to_be_bytes());
    f.extend_from_slice(&ports.1.to_be_bytes());
    f.extend_from_slice(&((8 + PAYLOAD) as u16).to_be_bytes());
    f.extend_from_slice(&0u16.to_be_bytes()); // no UDP checksum
    f.extend_from_slice(&[0u8; PAYLOAD]);
    f
}

fn internet_checksum(bytes: &[u8]) -> u16 {
    let mut sum: u32 = bytes.chunks(2).map(|c| u32::from(u16::from_be_bytes([c[0], *c.get(1).unwrap_or(&0)]))).sum();
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

struct Node {
    ip: Ipv4Addr,
    mac: MacAddr,
    initial_ttl: u8,
    subnet: usize,
}

struct Event {
    at_us: u64,
    seq: u64,
    bytes: Vec<u8>,
}

struct Generator<'a> {
    spec: &'a ScenarioSpec,
    rng: ChaCha8Rng,
    hosts: Vec<Node>,
    /// Host indices per subnet.
    members: Vec<Vec<usize>>,
    gateway_macs: Vec<MacAddr>,
    events: Vec<Event>,
    manifest: ScenarioManifest,
    ident: u16,
}

fn host_mac(subnet: usize, index: usize) -> MacAddr {
    MacAddr([0x02, 0x48, subnet as u8, (index >> 8) as u8, index as u8, 0x01])
}

fn gateway_mac(subnet: usize) -> MacAddr {
    MacAddr([0x02, 0x47, 0x57, 0x00, subnet as u8, 0x01])
}

/// Builds the capture file and manifest for `spec`.
pub fn synthesize(spec: &ScenarioSpec) -> Result<(Vec<u8>, ScenarioManifest), SynthError> {
    spec.validate()?;
    let mut g = Generator::new(spec);
    g.run();
    g.finish()
}

/// Writes the capture to `pcap_path` and the manifest next to it.
pub fn write_scenario(spec: &ScenarioSpec, pcap_path: &Path) -> std::io::Result<ScenarioManifest> {
    let (bytes, manifest) = synthesize(spec).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e))?;
    std::fs::write(pcap_path, bytes)?;
    let json = serde_json::to_string_pretty(&manifest).map_err(std::io::Error::other)?;
    std::fs::write(manifest_path(pcap_path), json + "\n")?;
    Ok(manifest)
}

/// Sidecar manifest location for a capture file.
pub fn manifest_path(pcap_path: &Path) -> PathBuf {
    let mut name = pcap_path.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

impl<'a> Generator<'a> {
    fn new(spec: &'a ScenarioSpec) -> Generator<'a> {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut hosts = Vec::new();
        let mut members = Vec::new();
        let mut subnets = Vec::new();
        let mut senders = BTreeMap::new();
        for (si, s) in spec.subnets.iter().enumerate() {
            let base = u32::from(s.cidr.network());
            let candidates: Vec<u32> = (1..s.cidr.size() as u32 - 1)
                .map(|o| base + o)
                .filter(|v| Ipv4Addr::from(*v) != s.gateway_address)
                .collect();
            let mut picked: Vec<u32> = rand::seq::index::sample(&mut rng, candidates.len(), s.host_count)
                .into_iter()
                .map(|i| candidates[i])
                .collect();
            picked.sort_unstable();
            let ttls: Vec<u8> = s.os_mix.keys().copied().collect();
            let weights = WeightedIndex::new(s.os_mix.values().copied()).expect("validated weights");
            let mut idx = Vec::new();
            let mut manifest_hosts = Vec::new();
            for (hi, v) in picked.into_iter().enumerate() {
                let node = Node {
                    ip: Ipv4Addr::from(v),
                    mac: host_mac(si, hi),
                    initial_ttl: ttls[weights.sample(&mut rng)],
                    subnet: si,
                };
                manifest_hosts.push(ManifestHost { ip: node.ip, mac: node.mac, initial_ttl: node.initial_ttl });
                idx.push(hosts.len());
                hosts.push(node);
            }
            members.push(idx);
            subnets.push(ManifestSubnet {
                cidr: s.cidr,
                gateway: s.gateway_address,
                gateway_mac: gateway_mac(si),
                hosts: manifest_hosts,
            });
            senders.insert(
                s.gateway_address,
                SenderRecord {
                    role: SenderRole::Gateway,
                    subnet: Some(si),
                    arp_requests: 0,
                    arp_replies: 0,
                    ip_ttls: BTreeMap::new(),
                },
            );
        }
        for h in &hosts {
            senders.insert(
                h.ip,
                SenderRecord {
                    role: SenderRole::Host,
                    subnet: Some(h.subnet),
                    arp_requests: 0,
                    arp_replies: 0,
                    ip_ttls: BTreeMap::new(),
                },
            );
        }
        let gateway_macs = (0..spec.subnets.len()).map(gateway_mac).collect();
        Generator {
            spec,
            rng,
            hosts,
            members,
            gateway_macs,
            events: Vec::new(),
            manifest: ScenarioManifest {
                seed: spec.seed,
                subnets,
                senders,
                emitted_frame_count: 0,
                forwarded_frame_count: 0,
                remote_frame_count: 0,
            },
            ident: 0,
        }
    }

    fn run(&mut self) {
        if self.hosts.is_empty() {
            return;
        }
        let horizon_us = (self.spec.duration * 1e6) as u64;
        // Each stream is drawn in full before the next so that changing one
        // rate does not reshuffle the others.
        for (kind, rate) in [
            (EventKind::ArpRequest, self.spec.arp_request_rate),
            (EventKind::ArpReply, self.spec.arp_reply_rate),
            (EventKind::Ip, self.spec.ip_packet_rate),
        ] {
            if rate <= 0.0 {
                continue;
            }
            let gap = Exp::new(rate).expect("positive rate");
            let mut t = 0.0f64;
            loop {
                t += gap.sample(&mut self.rng);
                let at = (t * 1e6) as u64;
                if at >= horizon_us {
                    break;
                }
                self.emit_event(kind, at);
            }
        }
    }

    fn emit_event(&mut self, kind: EventKind, at: u64) {
        let h = self.rng.random_range(0..self.hosts.len());
        match kind {
            EventKind::ArpRequest => self.arp_request(h, at),
            EventKind::ArpReply => self.arp_reply(h, at),
            EventKind::Ip => self.ip_packet(h, at),
        }
    }

    fn peer_of(&mut self, h: usize) -> Option<usize> {
        let group = &self.members[self.hosts[h].subnet];
        if group.len() < 2 {
            return None;
        }
        loop {
            let p = group[self.rng.random_range(0..group.len())];
            if p != h {
                return Some(p);
            }
        }
    }

    fn arp_request(&mut self, h: usize, at: u64) {
        let subnet = self.hosts[h].subnet;
        let target = if self.rng.random_bool(GATEWAY_REQUEST_SHARE) {
            self.spec.subnets[subnet].gateway_address
        } else {
            match self.peer_of(h) {
                Some(p) => self.hosts[p].ip,
                None => self.spec.subnets[subnet].gateway_address,
            }
        };
        let node = &self.hosts[h];
        let arp = ArpSummary {
            operation: ArpOperation::Request,
            sender_mac: node.mac,
            sender_ip: node.ip,
            target_mac: MacAddr::ZERO,
            target_ip: target,
            timestamp_us: at,
        };
        let bytes = encode_arp(&arp, node.mac, MacAddr::BROADCAST);
        self.record(node.ip, |s| s.arp_requests += 1);
        self.push(at, bytes);
    }

    fn arp_reply(&mut self, h: usize, at: u64) {
        let node = &self.hosts[h];
        let gw_ip = self.spec.subnets[node.subnet].gateway_address;
        let gw_mac = self.gateway_macs[node.subnet];
        let arp = ArpSummary {
            operation: ArpOperation::Reply,
            sender_mac: gw_mac,
            sender_ip: gw_ip,
            target_mac: node.mac,
            target_ip: node.ip,
            timestamp_us: at,
        };
        let bytes = encode_arp(&arp, gw_mac, node.mac);
        self.record(gw_ip, |s| s.arp_replies += 1);
        self.push(at, bytes);
    }

    fn ip_packet(&mut self, h: usize, at: u64) {
        let roll: f64 = self.rng.random();
        let subnet = self.hosts[h].subnet;
        let multi = self.spec.subnets.len() > 1;
        if !self.spec.remote_networks.is_empty() && roll < self.spec.remote_fraction {
            self.remote_packet(h, at);
        } else if multi && roll < self.spec.remote_fraction + self.spec.cross_subnet_fraction {
            let mut other = self.rng.random_range(0..self.spec.subnets.len() - 1);
            if other >= subnet {
                other += 1;
            }
            let dst = if self.members[other].is_empty() {
                self.spec.subnets[other].gateway_address
            } else {
                let group = &self.members[other];
                self.hosts[group[self.rng.random_range(0..group.len())]].ip
            };
            let dst_mac = self.mac_of(dst, other);
            let node = &self.hosts[h];
            let (src_ip, src_mac, ttl) = (node.ip, node.mac, node.initial_ttl);
            self.send_ip(src_ip, dst, ttl, src_mac, self.gateway_macs[subnet], at);
            // The router's copy on the destination subnet, one hop later.
            self.send_ip(src_ip, dst, ttl - 1, self.gateway_macs[other], dst_mac, at + FORWARDING_DELAY_US);
            self.manifest.forwarded_frame_count += 1;
        } else {
            let (dst, dst_mac) = match self.peer_of(h) {
                Some(p) if self.rng.random_bool(0.5) => (self.hosts[p].ip, self.hosts[p].mac),
                _ => (self.spec.subnets[subnet].gateway_address, self.gateway_macs[subnet]),
            };
            let node = &self.hosts[h];
            let (src_ip, src_mac, ttl) = (node.ip, node.mac, node.initial_ttl);
            self.send_ip(src_ip, dst, ttl, src_mac, dst_mac, at);
        }
    }

    fn remote_packet(&mut self, h: usize, at: u64) {
        let net = self.spec.remote_networks[self.rng.random_range(0..self.spec.remote_networks.len())];
        let src = Ipv4Addr::from(u32::from(net.network()) + self.rng.random_range(1..net.size() as u32 - 1));
        let initial = INITIAL_TTLS[self.rng.random_range(0..INITIAL_TTLS.len())];
        let hops = self.rng.random_range(1..=MAX_REMOTE_HOPS);
        let node = &self.hosts[h];
        let (dst, dst_mac, subnet) = (node.ip, node.mac, node.subnet);
        self.manifest.senders.entry(src).or_insert_with(|| SenderRecord {
            role: SenderRole::Remote,
            subnet: None,
            arp_requests: 0,
            arp_replies: 0,
            ip_ttls: BTreeMap::new(),
        });
        self.send_ip(src, dst, initial - hops, self.gateway_macs[subnet], dst_mac, at);
        self.manifest.remote_frame_count += 1;
    }

    fn mac_of(&self, ip: Ipv4Addr, subnet: usize) -> MacAddr {
        self.members[subnet]
            .iter()
            .map(|i| &self.hosts[*i])
            .find(|n| n.ip == ip)
            .map_or(self.gateway_macs[subnet], |n| n.mac)
    }

    fn send_ip(&mut self, src: Ipv4Addr, dst: Ipv4Addr, ttl: u8, eth_src: MacAddr, eth_dst: MacAddr, at: u64) {
        self.ident = self.ident.wrapping_add(1);
        let ports = (self.rng.random_range(49152..=65535), [53u16, 123, 443, 5353][self.rng.random_range(0..4)]);
        let summary = IpSummary { source_ip: src, destination_ip: dst, ttl, timestamp_us: at };
        let bytes = encode_ipv4(&summary, eth_src, eth_dst, self.ident, ports);
        self.record(src, |s| *s.ip_ttls.entry(ttl).or_insert(0) += 1);
        self.push(at, bytes);
    }

    fn record(&mut self, ip: Ipv4Addr, update: impl FnOnce(&mut SenderRecord)) {
        if let Some(s) = self.manifest.senders.get_mut(&ip) {
            update(s);
        }
    }

    fn push(&mut self, at: u64, bytes: Vec<u8>) {
        let seq = self.events.len() as u64;
        self.events.push(Event { at_us: at, seq, bytes });
    }

    fn finish(mut self) -> Result<(Vec<u8>, ScenarioManifest), SynthError> {
        self.events.sort_by_key(|e| (e.at_us, e.seq));
        let mut writer = PcapWriter::new(Vec::new()).expect("writing to memory");
        for e in &self.events {
            writer.write_frame(self.spec.start_time_us + e.at_us, &e.bytes).expect("writing to memory");
        }
        self.manifest.emitted_frame_count = self.events.len() as u64;
        Ok((writer.into_inner(), self.manifest))
    }
}

#[derive(Debug, Clone, Copy)]
enum EventKind {
    ArpRequest,
    ArpReply,
    Ip,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{decode_bytes, Decoded};
    use crate::pcap::PcapReader;
    use proptest::prelude::*;

    fn one_subnet(seed: u64) -> ScenarioSpec {
        ScenarioSpec::simple(seed, &[("10.0.0.0/24", 20, "10.0.0.1")], 30.0)
    }

    fn decoded_senders(bytes: &[u8]) -> BTreeSet<Ipv4Addr> {
        PcapReader::new(bytes)
            .unwrap()
            .map(|f| f.unwrap())
            .filter_map(|f| match decode_bytes(&f.bytes, f.timestamp_us) {
                Decoded::Arp(a) => Some(a.sender_ip),
                Decoded::Ip(i) => Some(i.source_ip),
                Decoded::Ignored => None,
            })
            .collect()
    }

    #[test]
    fn one_subnet_round_trip() {
        let (bytes, manifest) = synthesize(&one_subnet(7)).unwrap();
        assert_eq!(manifest.subnets[0].hosts.len(), 20);
        assert_eq!(manifest.true_hosts(0).len(), 21);
        assert!(manifest.true_hosts(0).contains(&"10.0.0.1".parse().unwrap()));
        let emitted: BTreeSet<Ipv4Addr> = manifest
            .senders
            .iter()
            .filter(|(_, s)| s.arp_requests + s.arp_replies + s.ip_ttls.values().sum::<u64>() > 0)
            .map(|(ip, _)| *ip)
            .collect();
        assert_eq!(decoded_senders(&bytes), emitted);
        assert_eq!(emitted, manifest.true_hosts(0));
        let frames = PcapReader::new(&bytes[..]).unwrap().count() as u64;
        assert_eq!(frames, manifest.emitted_frame_count);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = synthesize(&one_subnet(7)).unwrap();
        let b = synthesize(&one_subnet(7)).unwrap();
        assert_eq!(a, b);
        let c = synthesize(&one_subnet(8)).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn zero_rates_give_empty_capture() {
        let mut spec = one_subnet(1);
        spec.arp_reply_rate = 0.0;
        spec.arp_request_rate = 0.0;
        spec.ip_packet_rate = 0.0;
        let (bytes, manifest) = synthesize(&spec).unwrap();
        assert_eq!(bytes.len(), 24);
        assert_eq!(manifest.emitted_frame_count, 0);
    }

    #[test]
    fn cross_subnet_copies_are_decremented() {
        let spec = ScenarioSpec::simple(3, &[("10.0.1.0/24", 10, "10.0.1.1"), ("10.0.2.0/24", 10, "10.0.2.1")], 20.0);
        let (_, manifest) = synthesize(&spec).unwrap();
        assert!(manifest.forwarded_frame_count > 0);
        let ttls: BTreeSet<u8> = manifest.senders.values().flat_map(|s| s.ip_ttls.keys().copied()).collect();
        assert!(ttls.contains(&63) || ttls.contains(&127));
        assert!(ttls.iter().all(|t| [63, 64, 127, 128].contains(t)));
    }

    #[test]
    fn remote_senders_are_marked() {
        let mut spec = one_subnet(5);
        spec.remote_networks = vec!["198.51.100.0/24".parse().unwrap()];
        spec.remote_fraction = 0.3;
        let (_, manifest) = synthesize(&spec).unwrap();
        let remote: Vec<_> = manifest.senders.values().filter(|s| s.role == SenderRole::Remote).collect();
        assert!(!remote.is_empty());
        for s in remote {
            assert!(s.ip_ttls.keys().all(|t| ![1, 64, 128].contains(t)));
        }
    }

    #[test]
    fn invalid_specs() {
        let mut s = one_subnet(1);
        s.subnets[0].gateway_address = "10.0.1.1".parse().unwrap();
        assert!(matches!(synthesize(&s), Err(SynthError::InvalidSpec(_))));
        let mut s = one_subnet(1);
        s.subnets[0].host_count = 254;
        assert!(synthesize(&s).is_err());
        s.subnets[0].host_count = 253;
        assert!(synthesize(&s).is_ok());
        let mut s = one_subnet(1);
        s.subnets[0].os_mix = BTreeMap::from([(60, 1.0)]);
        assert!(synthesize(&s).is_err());
        let mut s = one_subnet(1);
        s.ip_packet_rate = -1.0;
        assert!(synthesize(&s).is_err());
        let mut s = one_subnet(1);
        s.subnets.push(s.subnets[0].clone());
        assert!(synthesize(&s).is_err());
        assert!(ScenarioSpec::from_json("{}").is_err());
    }

    #[test]
    fn spec_json_defaults() {
        let spec = ScenarioSpec::from_json(
            r#"{"seed": 1, "subnets": [{"cidr": "10.0.0.0/24", "host_count": 3, "gateway_address": "10.0.0.1",
                "os_mix": {"64": 1.0}}], "arp_reply_rate": 1, "arp_request_rate": 1, "ip_packet_rate": 1, "duration": 5}"#,
        )
        .unwrap();
        assert_eq!(spec.cross_subnet_fraction, 0.2);
        assert!(spec.remote_networks.is_empty());
        assert!(spec.validate().is_ok());
    }

    #[test]
    fn ipv4_checksum_verifies() {
        let s = IpSummary {
            source_ip: Ipv4Addr::new(192, 168, 0, 7),
            destination_ip: Ipv4Addr::new(192, 168, 0, 1),
            ttl: 64,
            timestamp_us: 0,
        };
        let f = encode_ipv4(&s, MacAddr::ZERO, MacAddr::BROADCAST, 0, (1234, 53));
        assert_eq!(internet_checksum(&f[14..34]), 0);
    }

    fn mac() -> impl Strategy<Value = MacAddr> {
        any::<[u8; 6]>().prop_map(MacAddr)
    }

    fn addr() -> impl Strategy<Value = Ipv4Addr> {
        any::<u32>().prop_map(Ipv4Addr::from)
    }

    proptest! {
        #[test]
        fn arp_encoding_round_trips(
            reply in any::<bool>(), sm in mac(), si in addr(), tm in mac(), ti in addr(), ts in any::<u64>(),
        ) {
            let arp = ArpSummary {
                operation: if reply { ArpOperation::Reply } else { ArpOperation::Request },
                sender_mac: sm, sender_ip: si, target_mac: tm, target_ip: ti, timestamp_us: ts,
            };
            prop_assert_eq!(decode_bytes(&encode_arp(&arp, sm, MacAddr::BROADCAST), ts), Decoded::Arp(arp));
        }

        #[test]
        fn ipv4_encoding_round_trips(src in addr(), dst in addr(), ttl in any::<u8>(), ts in any::<u64>(), id in any::<u16>()) {
            let ip = IpSummary { source_ip: src, destination_ip: dst, ttl, timestamp_us: ts };
            prop_assert_eq!(decode_bytes(&encode_ipv4(&ip, MacAddr::ZERO, MacAddr::ZERO, id, (1, 2)), ts), Decoded::Ip(ip));
        }
    }
}
