//! Passive phase: filter decoded frames, accumulate per-host evidence and
//! stop on timeout, host threshold or end of input.

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::addr::{is_storable_host, MacAddr};
use crate::capture::{open_source, CaptureConfig, CaptureError, ClockKind, FrameSource, SourceEvent};
use crate::codec::{decode_frame, ArpOperation, Summary};

/// Everything seen from one sender address.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostObservation {
    pub ip: Ipv4Addr,
    pub macs: BTreeSet<MacAddr>,
    pub arp_requests_sent: u64,
    pub arp_replies_sent: u64,
    /// Times this address was the target of an ARP request.
    pub arp_requests_targeting: u64,
    pub ip_packets_sent: u64,
    /// TTL multiset as value -> count.
    pub observed_ttls: BTreeMap<u8, u64>,
    pub first_seen_us: u64,
    pub last_seen_us: u64,
}

impl HostObservation {
    fn new(ip: Ipv4Addr, at: u64) -> HostObservation {
        HostObservation {
            ip,
            macs: BTreeSet::new(),
            arp_requests_sent: 0,
            arp_replies_sent: 0,
            arp_requests_targeting: 0,
            ip_packets_sent: 0,
            observed_ttls: BTreeMap::new(),
            first_seen_us: at,
            last_seen_us: at,
        }
    }

    pub fn frames_sent(&self) -> u64 {
        self.arp_requests_sent + self.arp_replies_sent + self.ip_packets_sent
    }

    /// Most frequent TTL, lowest value on ties.
    pub fn dominant_ttl(&self) -> Option<u8> {
        self.observed_ttls.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(ttl, _)| *ttl)
    }

    fn touch(&mut self, at: u64) {
        self.first_seen_us = self.first_seen_us.min(at);
        self.last_seen_us = self.last_seen_us.max(at);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TerminationReason {
    Timeout,
    ThresholdReached,
    SourceExhausted,
    /// Stopped from outside through [`ScanControl::stop`].
    Stopped,
}

impl std::fmt::Display for TerminationReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TerminationReason::Timeout => "Timeout",
            TerminationReason::ThresholdReached => "ThresholdReached",
            TerminationReason::SourceExhausted => "SourceExhausted",
            TerminationReason::Stopped => "Stopped",
        })
    }
}

/// Accumulated passive-phase evidence.
///
/// `hosts` holds detected hosts, i.e. addresses seen as ARP sender or IP
/// source. Addresses only ever seen as ARP request targets live in
/// `target_only_stats` until they send something themselves.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub hosts: BTreeMap<Ipv4Addr, HostObservation>,
    pub target_only_stats: BTreeMap<Ipv4Addr, u64>,
    /// Capture time of the first frame (wall clock for live capture).
    pub started_at_us: Option<u64>,
    pub ended_at_us: Option<u64>,
    pub termination_reason: Option<TerminationReason>,
    /// Frames read from the source, admitted or not.
    pub frames_seen: u64,
    pub frames_admitted: u64,
}

impl ObservationSet {
    pub fn new() -> ObservationSet {
        ObservationSet::default()
    }

    pub fn detected_count(&self) -> usize {
        self.hosts.len()
    }

    pub fn is_detected(&self, ip: Ipv4Addr) -> bool {
        self.hosts.contains_key(&ip)
    }

    /// How often `ip` was the target of an ARP request, detected or not.
    pub fn requests_targeting(&self, ip: Ipv4Addr) -> u64 {
        self.hosts
            .get(&ip)
            .map(|h| h.arp_requests_targeting)
            .or_else(|| self.target_only_stats.get(&ip).copied())
            .unwrap_or(0)
    }

    /// Folds one admitted summary into the set.
    pub fn observe(&mut self, summary: &Summary) {
        match summary {
            Summary::Arp(arp) => {
                let at = arp.timestamp_us;
                if let Some(host) = self.sender_entry(arp.sender_ip, at) {
                    match arp.operation {
                        ArpOperation::Request => host.arp_requests_sent += 1,
                        ArpOperation::Reply => host.arp_replies_sent += 1,
                    }
                    host.macs.insert(arp.sender_mac);
                }
                if arp.operation == ArpOperation::Request && is_storable_host(arp.target_ip) {
                    match self.hosts.get_mut(&arp.target_ip) {
                        Some(host) => host.arp_requests_targeting += 1,
                        None => *self.target_only_stats.entry(arp.target_ip).or_insert(0) += 1,
                    }
                }
            }
            Summary::Ip(ip) => {
                if let Some(host) = self.sender_entry(ip.source_ip, ip.timestamp_us) {
                    host.ip_packets_sent += 1;
                    *host.observed_ttls.entry(ip.ttl).or_insert(0) += 1;
                }
            }
        }
    }

    /// Entry for a sender, promoting a target-only address with its count.
    fn sender_entry(&mut self, ip: Ipv4Addr, at: u64) -> Option<&mut HostObservation> {
        if !is_storable_host(ip) {
            return None;
        }
        let targeted = &mut self.target_only_stats;
        let host = self.hosts.entry(ip).or_insert_with(|| {
            let mut h = HostObservation::new(ip, at);
            h.arp_requests_targeting = targeted.remove(&ip).unwrap_or(0);
            h
        });
        host.touch(at);
        Some(host)
    }
}

/// Whether the capture filter lets `summary` through.
pub fn admit(summary: &Summary, config: &CaptureConfig) -> bool {
    match summary {
        Summary::Arp(_) => config.mode.includes_arp(),
        Summary::Ip(ip) => config.mode.includes_ip() && config.accepted_ttls.contains(&ip.ttl),
    }
}

/// Handle for observing or stopping a running passive phase from another
/// thread.
#[derive(Debug, Clone, Default)]
pub struct ScanControl {
    inner: Arc<ControlInner>,
}

#[derive(Debug, Default)]
struct ControlInner {
    stop: AtomicBool,
    observations: RwLock<ObservationSet>,
}

impl ScanControl {
    pub fn new() -> ScanControl {
        ScanControl::default()
    }

    /// Requests termination; honoured before the next frame is processed.
    pub fn stop(&self) {
        self.inner.stop.store(true, Ordering::SeqCst);
    }

    pub fn is_stopped(&self) -> bool {
        self.inner.stop.load(Ordering::SeqCst)
    }

    /// A consistent copy of the observations gathered so far.
    pub fn snapshot(&self) -> ObservationSet {
        self.inner.observations.read().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

/// Opens the configured source and runs the passive phase on it.
pub fn run_passive_phase(config: &CaptureConfig) -> Result<ObservationSet, CaptureError> {
    config.validate()?;
    let mut source = open_source(config)?;
    run_passive_phase_on(config, source.as_mut(), &ScanControl::new())
}

/// Runs the passive phase over an already opened source.
///
/// The threshold is checked after every admitted frame, the timeout before
/// each frame is processed. On trace replay the timeout runs on capture
/// timestamps measured from the first frame, so replay is deterministic.
pub fn run_passive_phase_on(
    config: &CaptureConfig,
    source: &mut dyn FrameSource,
    control: &ScanControl,
) -> Result<ObservationSet, CaptureError> {
    config.validate()?;
    let clock = source.clock();
    let wall_start = Instant::now();
    let timeout_us = u64::try_from(config.duration_timeout.as_micros()).unwrap_or(u64::MAX);
    let lock = &control.inner.observations;
    *lock.write().unwrap_or_else(|e| e.into_inner()) = ObservationSet::new();
    if clock == ClockKind::WallClock {
        lock.write().unwrap_or_else(|e| e.into_inner()).started_at_us = Some(wall_now_us());
    }

    let reason = loop {
        if control.is_stopped() {
            break TerminationReason::Stopped;
        }
        if clock == ClockKind::WallClock && wall_start.elapsed() >= config.duration_timeout {
            break TerminationReason::Timeout;
        }
        let frame = match source.next_event()? {
            SourceEvent::Frame(frame) => frame,
            SourceEvent::Idle => continue,
            SourceEvent::Exhausted => break TerminationReason::SourceExhausted,
        };
        let mut obs = lock.write().unwrap_or_else(|e| e.into_inner());
        if clock == ClockKind::CaptureTime {
            let start = *obs.started_at_us.get_or_insert(frame.timestamp_us);
            if frame.timestamp_us.saturating_sub(start) >= timeout_us {
                break TerminationReason::Timeout;
            }
        }
        obs.frames_seen += 1;
        obs.ended_at_us = Some(frame.timestamp_us);
        let Some(summary) = decode_frame(&frame).summary() else { continue };
        if !admit(&summary, config) {
            continue;
        }
        obs.frames_admitted += 1;
        obs.observe(&summary);
        if obs.detected_count() >= config.host_threshold {
            break TerminationReason::ThresholdReached;
        }
    };

    let mut obs = lock.write().unwrap_or_else(|e| e.into_inner());
    if clock == ClockKind::WallClock {
        obs.ended_at_us = Some(wall_now_us());
    }
    obs.termination_reason = Some(reason);
    Ok(obs.clone())
}

fn wall_now_us() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).unwrap_or(Duration::ZERO).as_micros() as u64
}
