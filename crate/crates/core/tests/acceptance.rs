//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails or overruns its time limit.
//!
//! Run with `cargo test --test acceptance`.

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use netscope::addr::{Ipv4Cidr, MacAddr};
use netscope::capture::{CaptureConfig, CaptureMode, CaptureSource};
use netscope::codec::{decode_bytes, decode_frame, ArpOperation, ArpSummary, Decoded, IpSummary, RawFrame, Summary};
use netscope::hints::{infer_internal_gateway, HopcountTable};
use netscope::pcap::{PcapReader, PcapWriter};
use netscope::planfile::PlanDocument;
use netscope::planner::{build_scan_plan, determine_gateway, GatewayProvenance, InterfaceState};
use netscope::scanner::{run_passive_phase, ObservationSet, TerminationReason};
use netscope::scope::{cluster, order_ranges, ClusteringPolicy, NetworkRange};
use netscope::synth::{encode_arp, encode_ipv4, synthesize, ScenarioSpec};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BIN: &str = env!("CARGO_BIN_EXE_netscope");

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

struct Criterion {
    id: u8,
    name: &'static str,
    limit: Duration,
    check: fn() -> Outcome,
}

const CRITERIA: [Criterion; 8] = [
    Criterion {
        id: 1,
        name: "worked example, two ranges in the plan file",
        limit: Duration::from_secs(1),
        check: worked_example,
    },
    Criterion {
        id: 2,
        name: "passive phase stops at exactly 10 hosts",
        limit: Duration::from_secs(5),
        check: threshold_stop,
    },
    Criterion { id: 3, name: "two-subnet scenario, 100 seeds", limit: Duration::from_secs(30), check: two_subnets },
    Criterion {
        id: 4,
        name: "greedy clustering matches the partition oracle",
        limit: Duration::from_secs(60),
        check: clustering_oracle,
    },
    Criterion {
        id: 5,
        name: "decoder survives 10^6 random frames",
        limit: Duration::from_secs(60),
        check: decoder_fuzz,
    },
    Criterion {
        id: 6,
        name: "gateway tier ordering and tie-breaking",
        limit: Duration::from_secs(10),
        check: gateway_tiers,
    },
    Criterion {
        id: 7,
        name: "internal gateway from hopcount tables",
        limit: Duration::from_secs(5),
        check: hopcount_router,
    },
    Criterion {
        id: 8,
        name: "deterministic CLI runs give identical plans",
        limit: Duration::from_secs(5),
        check: deterministic_cli,
    },
];

fn main() {
    // Keep panic output from interleaving with the report lines.
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for c in &CRITERIA {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let result = match result {
            Ok(detail) if elapsed > c.limit => Err(format!("{detail}; took {elapsed:.2?}, limit {:?}", c.limit)),
            other => other,
        };
        match result {
            Ok(detail) => println!("PASS {} {} ({:.2?} of {:?}): {detail}", c.id, c.name, elapsed, c.limit),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {} ({:.2?} of {:?}): {why}", c.id, c.name, elapsed, c.limit);
            }
        }
    }
    println!("{} of {} criteria passed", CRITERIA.len() - failed, CRITERIA.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ip(s: &str) -> Ipv4Addr {
    s.parse().unwrap()
}

fn run_cli(args: &[&str]) -> Result<std::process::Output, String> {
    Command::new(BIN).args(args).output().map_err(|e| format!("cannot run {BIN}: {e}"))
}

fn read_plan(path: &Path) -> Result<(String, PlanDocument), String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("plan not written: {e}"))?;
    let doc = PlanDocument::from_json(&text).map_err(|e| format!("plan does not parse: {e}"))?;
    Ok((text, doc))
}

fn worked_example() -> Outcome {
    let hosts = BTreeSet::from([ip("192.168.0.2"), ip("192.168.1.17")]);
    let ranges = cluster(&hosts, &ClusteringPolicy::max_network_size(256).unwrap()).map_err(|e| e.to_string())?;
    let spans: Vec<String> = ranges.iter().map(|r| r.to_string()).collect();
    ensure!(spans == ["192.168.0.2-192.168.0.2", "192.168.1.17-192.168.1.17"], "cluster gave {spans:?}");

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let trace = dir.path().join("example.pcap");
    let mut w =
        PcapWriter::new(std::fs::File::create(&trace).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let a = IpSummary { source_ip: ip("192.168.0.2"), destination_ip: ip("192.168.0.1"), ttl: 64, timestamp_us: 0 };
    let b = ArpSummary {
        operation: ArpOperation::Request,
        sender_mac: MacAddr([2, 0, 0, 0, 1, 17]),
        sender_ip: ip("192.168.1.17"),
        target_mac: MacAddr::ZERO,
        target_ip: ip("192.168.1.1"),
        timestamp_us: 0,
    };
    w.write_frame(1_000_000, &encode_ipv4(&a, MacAddr([2, 0, 0, 0, 0, 2]), MacAddr::BROADCAST, 1, (40000, 53)))
        .map_err(|e| e.to_string())?;
    w.write_frame(2_000_000, &encode_arp(&b, b.sender_mac, MacAddr::BROADCAST)).map_err(|e| e.to_string())?;
    drop(w);

    // The interface already sits in the first range, so the plan is written
    // without reconfiguration.
    let out = dir.path().join("plan.json");
    let r = run_cli(&[
        "--trace",
        trace.to_str().unwrap(),
        "--iface-addr",
        "192.168.0.2/24",
        "--cluster",
        "max-size",
        "--max-net-size",
        "256",
        "--deterministic",
        "--out",
        out.to_str().unwrap(),
        "--report",
        dir.path().join("report.txt").to_str().unwrap(),
    ])?;
    ensure!(r.status.code() == Some(0), "exit {:?}: {}", r.status.code(), String::from_utf8_lossy(&r.stderr));
    let (text, doc) = read_plan(&out)?;
    let expected =
        "  \"preliminary_ranges\": [\n    \"192.168.0.2-192.168.0.2\",\n    \"192.168.1.17-192.168.1.17\"\n  ],\n";
    ensure!(text.contains(expected), "plan file lacks the exact range listing:\n{text}");
    ensure!(
        doc.final_ranges == ["192.168.0.0/24".parse::<Ipv4Cidr>().unwrap(), "192.168.1.17/32".parse().unwrap()],
        "final ranges {:?}",
        doc.final_ranges
    );
    Ok("ranges 192.168.0.2-192.168.0.2 and 192.168.1.17-192.168.1.17".into())
}

/// Senders admitted under the default filter, in first-admitted order, up to
/// `limit` distinct addresses. Computed straight from the decoded trace.
fn first_senders(pcap: &[u8], limit: usize) -> Result<BTreeSet<Ipv4Addr>, String> {
    let mut seen = BTreeSet::new();
    for frame in PcapReader::new(pcap).map_err(|e| e.to_string())? {
        let frame = frame.map_err(|e| e.to_string())?;
        let sender = match decode_bytes(&frame.bytes, frame.timestamp_us) {
            Decoded::Arp(a) => Some(a.sender_ip),
            Decoded::Ip(i) if [1, 64, 128].contains(&i.ttl) => Some(i.source_ip),
            _ => None,
        };
        if let Some(s) = sender {
            seen.insert(s);
            if seen.len() == limit {
                break;
            }
        }
    }
    Ok(seen)
}

fn threshold_stop() -> Outcome {
    let spec = ScenarioSpec::simple(21, &[("172.20.5.0/24", 24, "172.20.5.1")], 120.0);
    let (bytes, manifest) = synthesize(&spec).map_err(|e| e.to_string())?;
    let senders = manifest.expected_detections(CaptureMode::Both, &BTreeSet::from([1, 64, 128]));
    ensure!(senders.len() >= 12, "scenario has only {} same-segment senders", senders.len());

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let trace = dir.path().join("scenario.pcap");
    std::fs::write(&trace, &bytes).map_err(|e| e.to_string())?;
    let out = dir.path().join("plan.json");
    let r = run_cli(&[
        "--trace",
        trace.to_str().unwrap(),
        "--threshold",
        "10",
        "--timeout",
        "300",
        "--cluster",
        "max-size",
        "--max-net-size",
        "256",
        "--out",
        out.to_str().unwrap(),
        "--report",
        dir.path().join("report.txt").to_str().unwrap(),
    ])?;
    ensure!(r.status.code() == Some(0), "exit {:?}: {}", r.status.code(), String::from_utf8_lossy(&r.stderr));
    let (_, doc) = read_plan(&out)?;
    ensure!(
        doc.termination_reason == Some(TerminationReason::ThresholdReached),
        "stopped by {:?}",
        doc.termination_reason
    );
    let detected: BTreeSet<Ipv4Addr> = doc.detected_hosts.keys().copied().collect();
    ensure!(detected.len() == 10, "{} hosts detected", detected.len());
    let expected = first_senders(&bytes, 10)?;
    ensure!(detected == expected, "detected {detected:?}, first ten senders {expected:?}");
    Ok(format!("{} senders in trace, stopped at 10 with ThresholdReached", senders.len()))
}

fn two_subnet_spec(seed: u64) -> ScenarioSpec {
    let mut spec =
        ScenarioSpec::simple(seed, &[("10.0.1.0/24", 30, "10.0.1.1"), ("10.0.2.0/24", 60, "10.0.2.1")], 60.0);
    spec.cross_subnet_fraction = 0.25;
    spec
}

fn two_subnets() -> Outcome {
    let accepted = BTreeSet::from([1, 64, 128]);
    let subnets: [Ipv4Cidr; 2] = ["10.0.1.0/24".parse().unwrap(), "10.0.2.0/24".parse().unwrap()];
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut forwarded_total = 0;
    for seed in 0..100u64 {
        let (bytes, manifest) = synthesize(&two_subnet_spec(seed)).map_err(|e| e.to_string())?;
        let trace = dir.path().join(format!("s{seed}.pcap"));
        std::fs::write(&trace, &bytes).map_err(|e| e.to_string())?;
        let mut config = CaptureConfig::new(CaptureSource::TraceFile(trace));
        config.host_threshold = 100_000;
        let obs = run_passive_phase(&config).map_err(|e| format!("seed {seed}: {e}"))?;

        // (a) forwarded copies carry TTL 63/127 and are all dropped.
        let routed_ttls: BTreeSet<u8> = manifest
            .senders
            .values()
            .flat_map(|s| s.ip_ttls.keys().copied())
            .filter(|t| !accepted.contains(t))
            .collect();
        ensure!(manifest.forwarded_frame_count > 0, "seed {seed}: scenario has no cross-subnet frames");
        ensure!(routed_ttls.iter().all(|t| [63, 127].contains(t)), "seed {seed}: unexpected TTLs {routed_ttls:?}");
        ensure!(obs.frames_seen == manifest.emitted_frame_count, "seed {seed}: replay stopped early");
        ensure!(
            obs.frames_seen - obs.frames_admitted == manifest.forwarded_frame_count,
            "seed {seed}: {} frames dropped, {} forwarded",
            obs.frames_seen - obs.frames_admitted,
            manifest.forwarded_frame_count
        );
        for h in obs.hosts.values() {
            ensure!(
                h.observed_ttls.keys().all(|t| accepted.contains(t)),
                "seed {seed}: {} kept TTLs {:?}",
                h.ip,
                h.observed_ttls
            );
            let sent: u64 =
                manifest.senders[&h.ip].ip_ttls.iter().filter(|(t, _)| accepted.contains(t)).map(|(_, n)| n).sum();
            ensure!(
                h.ip_packets_sent == sent,
                "seed {seed}: {} counted {} IP frames, sent {sent}",
                h.ip,
                h.ip_packets_sent
            );
        }
        forwarded_total += manifest.forwarded_frame_count;
        let expected = manifest.expected_detections(CaptureMode::Both, &accepted);
        let detected: BTreeSet<Ipv4Addr> = obs.hosts.keys().copied().collect();
        ensure!(detected == expected, "seed {seed}: detected set differs from manifest senders");

        let plan = build_scan_plan(Arc::new(obs), &ClusteringPolicy::default(), &InterfaceState::unconfigured(), 0)
            .map_err(|e| format!("seed {seed}: {e}"))?;
        // (b) one preliminary range per subnet, holding exactly its senders.
        ensure!(
            plan.preliminary_ranges.len() == 2,
            "seed {seed}: {} preliminary ranges",
            plan.preliminary_ranges.len()
        );
        for (range, net) in plan.preliminary_ranges.iter().zip(&subnets) {
            let want: BTreeSet<Ipv4Addr> = expected.iter().copied().filter(|a| net.contains(*a)).collect();
            ensure!(range.detected_hosts == want, "seed {seed}: range {range} does not match {net}");
        }
        // (c) the 60-host subnet wins.
        ensure!(subnets[1].contains_block(&plan.own_network), "seed {seed}: own network {}", plan.own_network);
        // (d) gateway from reply evidence.
        let cfg = plan.reconfiguration.ok_or(format!("seed {seed}: no reconfiguration proposed"))?;
        ensure!(cfg.gateway == manifest.true_gateway(1), "seed {seed}: gateway {}", cfg.gateway);
        ensure!(
            cfg.gateway_provenance == GatewayProvenance::ArpReplySender,
            "seed {seed}: {:?}",
            cfg.gateway_provenance
        );
        // (e) plan validity.
        let own = plan.own_network;
        ensure!(!detected.contains(&cfg.ip), "seed {seed}: proposed {} is a detected host", cfg.ip);
        ensure!(own.contains(cfg.ip) && own.contains(cfg.gateway), "seed {seed}: ip or gateway outside {own}");
        ensure!(cfg.ip != cfg.gateway, "seed {seed}: ip equals gateway");
        ensure!(cfg.ip != own.network() && cfg.ip != own.broadcast(), "seed {seed}: {} is not a host address", cfg.ip);
        ensure!(cfg.prefix_length == own.prefix_len(), "seed {seed}: prefix {}", cfg.prefix_length);
    }
    Ok(format!("100 seeds, {forwarded_total} forwarded frames filtered"))
}

const SPECIAL: [(u32, u32); 4] =
    [(0x0a00_0000, 0x0aff_ffff), (0xa9fe_0000, 0xa9fe_ffff), (0xac10_0000, 0xac1f_ffff), (0xc0a8_0000, 0xc0a8_ffff)];

/// An interval holds one address class iff it lies inside or outside each
/// special block.
fn interval_pure(a: u32, b: u32) -> bool {
    SPECIAL.iter().all(|&(lo, hi)| (a >= lo && b <= hi) || b < lo || a > hi)
}

fn address_class(a: u32) -> u8 {
    match SPECIAL.iter().position(|&(lo, hi)| a >= lo && a <= hi) {
        None => 0,
        Some(1) => 2,
        Some(_) => 1,
    }
}

/// Minimum partition size and number of minimum partitions of sorted `xs`
/// into contiguous groups accepted by `ok`, plus the partition that takes
/// the longest possible first group at each step.
fn partition_oracle(xs: &[u32], ok: impl Fn(usize, usize) -> bool) -> (usize, u64, Vec<(usize, usize)>) {
    let n = xs.len();
    let mut best = vec![usize::MAX; n + 1];
    let mut ways = vec![0u64; n + 1];
    best[n] = 0;
    ways[n] = 1;
    for i in (0..n).rev() {
        for j in i..n {
            if !ok(i, j) || best[j + 1] == usize::MAX {
                continue;
            }
            let c = best[j + 1] + 1;
            if c < best[i] {
                best[i] = c;
                ways[i] = ways[j + 1];
            } else if c == best[i] {
                ways[i] = ways[i].saturating_add(ways[j + 1]);
            }
        }
    }
    let mut groups = Vec::new();
    let mut i = 0;
    while i < n {
        let j = (i..n).rev().find(|&j| ok(i, j) && best[j + 1] != usize::MAX && best[j + 1] + 1 == best[i]).unwrap();
        groups.push((i, j));
        i = j + 1;
    }
    (best[0], ways[0], groups)
}

/// Exhaustive minimum over all 2^(n-1) cut patterns.
fn brute_force_minimum(xs: &[u32], ok: impl Fn(usize, usize) -> bool) -> (usize, u64) {
    let n = xs.len();
    let (mut best, mut count) = (usize::MAX, 0u64);
    for mask in 0u32..(1 << (n - 1)) {
        let mut start = 0;
        let mut groups = 0;
        let mut valid = true;
        for k in 0..n {
            if k == n - 1 || mask & (1 << k) != 0 {
                if !ok(start, k) {
                    valid = false;
                    break;
                }
                groups += 1;
                start = k + 1;
            }
        }
        if valid {
            if groups < best {
                best = groups;
                count = 1;
            } else if groups == best {
                count += 1;
            }
        }
    }
    (best, count)
}

fn random_address_set(rng: &mut ChaCha8Rng) -> BTreeSet<Ipv4Addr> {
    const ANCHORS: [u32; 8] =
        [0x0a00_0000, 0x0b00_0000, 0xa9fe_0000, 0xa9ff_0000, 0xac10_0000, 0xac20_0000, 0xc0a8_0000, 0xc0a9_0000];
    let size = rng.random_range(1..=64);
    let spread: i64 = [16, 300, 1500][rng.random_range(0..3)];
    let mut set = BTreeSet::new();
    while set.len() < size {
        let base = if rng.random_bool(0.85) {
            ANCHORS[rng.random_range(0..ANCHORS.len())]
        } else {
            rng.random_range(0x0100_0000..0xdf00_0000)
        };
        let v = (i64::from(base) + rng.random_range(-spread..spread)).clamp(0x0100_0000, 0xdfff_ffff) as u32;
        set.insert(Ipv4Addr::from(v));
    }
    set
}

fn check_scope_invariants(
    hosts: &BTreeSet<Ipv4Addr>,
    ranges: &[NetworkRange],
    policy: &ClusteringPolicy,
    prefix: Option<u8>,
) -> Result<(), String> {
    let mut union = BTreeSet::new();
    let mut total = 0;
    for (k, r) in ranges.iter().enumerate() {
        total += r.detected_hosts.len();
        union.extend(r.detected_hosts.iter().copied());
        ensure!(r.start <= r.end, "range {r} reversed");
        ensure!(
            Some(&r.start) == r.detected_hosts.first() && Some(&r.end) == r.detected_hosts.last(),
            "range {r} is not min-max"
        );
        ensure!(interval_pure(r.start.into(), r.end.into()), "range {r} crosses a class boundary");
        if let Some(p) = prefix {
            let shift = 32 - u32::from(p);
            let top = |a: Ipv4Addr| u64::from(u32::from(a)) >> shift;
            ensure!(top(r.start) == top(r.end), "range {r} spans two /{p} prefixes");
        }
        if k > 0 {
            ensure!(ranges[k - 1].end < r.start, "ranges not sorted and disjoint");
        }
        let again = cluster(&r.detected_hosts, policy).map_err(|e| e.to_string())?;
        ensure!(again.len() == 1 && again[0] == *r, "reclustering {r} is not idempotent");
    }
    ensure!(union == *hosts && total == hosts.len(), "ranges do not partition the input");

    let ordered = order_ranges(ranges.to_vec());
    let mut a = ordered.clone();
    let mut b = ranges.to_vec();
    a.sort_by_key(|r| r.start);
    b.sort_by_key(|r| r.start);
    ensure!(a == b, "ordering is not a permutation");
    let key = |r: &NetworkRange| (address_class(r.start.into()), std::cmp::Reverse(r.host_count()), r.start);
    ensure!(ordered.windows(2).all(|w| key(&w[0]) < key(&w[1])), "ordering keys not ascending");
    ensure!(order_ranges(ranges.to_vec()) == ordered, "ordering not deterministic");
    Ok(())
}

fn clustering_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0004);
    let sizes = [2u64, 3, 64, 256, 300, 1024, 65536];
    let (mut unique, mut brute_checked, mut crossing) = (0, 0, 0);
    for case in 0..500 {
        let hosts = random_address_set(&mut rng);
        let m = sizes[rng.random_range(0..sizes.len())];
        let policy = ClusteringPolicy::max_network_size(m).unwrap();
        let greedy = cluster(&hosts, &policy).map_err(|e| e.to_string())?;

        let xs: Vec<u32> = hosts.iter().map(|a| u32::from(*a)).collect();
        let ok = |i: usize, j: usize| u64::from(xs[j] - xs[i]) < m && interval_pure(xs[i], xs[j]);
        let (min_groups, ways, leftmost) = partition_oracle(&xs, ok);
        ensure!(greedy.len() == min_groups, "case {case}: greedy {} ranges, minimum {min_groups}", greedy.len());
        let oracle_spans: Vec<(u32, u32)> = leftmost.iter().map(|&(i, j)| (xs[i], xs[j])).collect();
        let greedy_spans: Vec<(u32, u32)> = greedy.iter().map(|r| (r.start.into(), r.end.into())).collect();
        ensure!(greedy_spans == oracle_spans, "case {case}: greedy partition differs from the oracle");
        if ways == 1 {
            unique += 1;
        }
        if xs.len() <= 14 {
            let (b, c) = brute_force_minimum(&xs, ok);
            ensure!((b, c) == (min_groups, ways), "case {case}: brute force ({b}, {c}) vs dp ({min_groups}, {ways})");
            brute_checked += 1;
        }
        if !interval_pure(xs[0], xs[xs.len() - 1]) {
            crossing += 1;
        }
        check_scope_invariants(&hosts, &greedy, &policy, None).map_err(|e| format!("case {case}: {e}"))?;
        ensure!(greedy.iter().all(|r| r.span() <= m), "case {case}: span above {m}");

        let p = rng.random_range(0..=32u8);
        let by_prefix = ClusteringPolicy::presumed_prefix(p).unwrap();
        let ranges = cluster(&hosts, &by_prefix).map_err(|e| e.to_string())?;
        check_scope_invariants(&hosts, &ranges, &by_prefix, Some(p)).map_err(|e| format!("case {case} /{p}: {e}"))?;
        let single = ClusteringPolicy::single_network();
        let ranges = cluster(&hosts, &single).map_err(|e| e.to_string())?;
        check_scope_invariants(&hosts, &ranges, &single, None).map_err(|e| format!("case {case} single: {e}"))?;
        // Maximal same-class runs: neighbours in different ranges never
        // share a class-pure interval.
        for w in ranges.windows(2) {
            ensure!(
                !interval_pure(w[0].end.into(), w[1].start.into()),
                "case {case}: single-network split inside one class"
            );
        }
    }
    Ok(format!(
        "500 sets ({crossing} crossing class boundaries, {brute_checked} brute-forced, {unique} with a unique minimum partition)"
    ))
}

fn decoder_fuzz() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0005);
    let mut buf = [0u8; 200];
    let (mut arp, mut ipv4, mut crashes) = (0u64, 0u64, 0u64);
    for n in 0..1_000_000u64 {
        let len = rng.random_range(0..=200usize);
        rng.fill_bytes(&mut buf[..len]);
        // A third of the frames get a plausible Ethernet/IP prefix so the
        // deeper parsing paths are reached.
        if len >= 15 && n % 3 == 0 {
            let et: [u16; 4] = [0x0800, 0x0806, 0x8100, 0x88a8];
            let et = et[(n / 3 % 4) as usize];
            buf[12..14].copy_from_slice(&et.to_be_bytes());
            match et {
                0x0800 => buf[14] = 0x40 | (buf[14] & 0x0f),
                0x0806 if len >= 22 => {
                    let op = 1 + (buf[21] & 1);
                    buf[14..22].copy_from_slice(&[0, 1, 8, 0, 6, 4, 0, op]);
                }
                _ => {}
            }
        }
        let frame = RawFrame::new(buf[..len].to_vec(), n);
        match catch_unwind(|| decode_frame(&frame)) {
            Ok(Decoded::Arp(a)) => {
                arp += 1;
                ensure!(len >= 42 && a.timestamp_us == n, "ARP decoded from {len} bytes");
            }
            Ok(Decoded::Ip(i)) => {
                ipv4 += 1;
                ensure!(len >= 34 && i.timestamp_us == n, "IPv4 decoded from {len} bytes");
            }
            Ok(Decoded::Ignored) => {}
            Err(_) => crashes += 1,
        }
    }
    ensure!(crashes == 0, "{crashes} frames made the decoder panic");
    Ok(format!("no panics; {arp} ARP and {ipv4} IPv4 summaries, rest ignored"))
}

fn gateway_tiers() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0006);
    let mut seen = BTreeMap::<&str, u32>::new();
    for case in 0..3000 {
        let prefix = [24u8, 28, 29, 30, 31, 32][rng.random_range(0..6)];
        let block = Ipv4Cidr::new(Ipv4Addr::from(0x0a00_0000 + rng.random_range(0..256u32) * 256), prefix);
        let base = u32::from(block.network());
        // A small pool around the block forces ties and out-of-block noise.
        let pool: Vec<u32> = (0..8).map(|_| base + rng.random_range(0..(block.size() as u32 + 4))).collect();
        let pick = |rng: &mut ChaCha8Rng| Ipv4Addr::from(pool[rng.random_range(0..pool.len())]);

        let mut obs = ObservationSet::new();
        let mut replies = BTreeMap::<Ipv4Addr, u64>::new();
        let mut targeted = BTreeMap::<Ipv4Addr, u64>::new();
        let events = rng.random_range(0..25);
        let reply_share = [0.0, 0.1, 0.5][rng.random_range(0..3)];
        let request_share = [0.0, 0.5][rng.random_range(0..2)];
        for t in 0..events {
            let (sender, target) = (pick(&mut rng), pick(&mut rng));
            let r: f64 = rng.random();
            let summary = if r < reply_share {
                *replies.entry(sender).or_insert(0) += 1;
                Summary::Arp(ArpSummary {
                    operation: ArpOperation::Reply,
                    sender_mac: MacAddr([2, 0, 0, 0, 0, 1]),
                    sender_ip: sender,
                    target_mac: MacAddr([2, 0, 0, 0, 0, 2]),
                    target_ip: target,
                    timestamp_us: t,
                })
            } else if r < reply_share + request_share && sender != target {
                *targeted.entry(target).or_insert(0) += 1;
                Summary::Arp(ArpSummary {
                    operation: ArpOperation::Request,
                    sender_mac: MacAddr([2, 0, 0, 0, 0, 1]),
                    sender_ip: sender,
                    target_mac: MacAddr::ZERO,
                    target_ip: target,
                    timestamp_us: t,
                })
            } else {
                Summary::Ip(IpSummary { source_ip: sender, destination_ip: target, ttl: 64, timestamp_us: t })
            };
            obs.observe(&summary);
        }

        let usable =
            |a: Ipv4Addr| block.contains(a) && (prefix >= 31 || (a != block.network() && a != block.broadcast()));
        let best = |counts: &BTreeMap<Ipv4Addr, u64>| {
            let top = counts.iter().filter(|(a, n)| usable(**a) && **n > 0).map(|(_, n)| *n).max()?;
            counts.iter().find(|(a, n)| usable(**a) && **n == top).map(|(a, _)| *a)
        };
        let expected = if let Some(a) = best(&replies) {
            (a, GatewayProvenance::ArpReplySender)
        } else if let Some(a) = best(&targeted) {
            (a, GatewayProvenance::ArpRequestTarget)
        } else {
            let first = if prefix >= 31 { block.network() } else { Ipv4Addr::from(base + 1) };
            (first, GatewayProvenance::RangeFirstAddress)
        };
        let got = determine_gateway(&obs, block);
        ensure!(got == expected, "case {case} in {block}: got {got:?}, expected {expected:?}");
        *seen
            .entry(match got.1 {
                GatewayProvenance::ArpReplySender => "tier 1",
                GatewayProvenance::ArpRequestTarget => "tier 2",
                _ => "tier 3",
            })
            .or_insert(0) += 1;
    }
    ensure!(seen.len() == 3, "not every tier was exercised: {seen:?}");
    Ok(format!("3000 observation sets, {seen:?}"))
}

fn hopcount_router() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0007);
    for case in 0..200 {
        let h = rng.random_range(2..30u32);
        let hosts = rng.random_range(2..40usize);
        let mut addresses = rand::seq::index::sample(&mut rng, 65_534, 6 * hosts + 2)
            .into_iter()
            .map(|i| Ipv4Addr::from(0xc633_0000 + i as u32 + 1));
        let mut entries = BTreeMap::new();
        for _ in 0..hosts {
            entries.insert(addresses.next().unwrap(), h);
        }
        // Noise at other distances, never one hop closer than the mode and
        // never as frequent as it.
        for level in [h.saturating_sub(3), h.saturating_sub(2), h + 1, h + 2, h + 4] {
            if level == 0 || level + 1 == h {
                continue;
            }
            for _ in 0..rng.random_range(0..hosts) {
                entries.insert(addresses.next().unwrap(), level);
            }
        }
        let without = HopcountTable { entries: entries.clone() };
        let router = addresses.next().unwrap();
        entries.insert(router, h - 1);
        let with = HopcountTable { entries };
        ensure!(infer_internal_gateway(&with) == Some(router), "case {case}: planted {router} at {} not found", h - 1);
        ensure!(infer_internal_gateway(&without).is_none(), "case {case}: router invented without one planted");
    }
    Ok("200 planted routers found, 200 router-less tables gave none".into())
}

fn deterministic_cli() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let trace = dir.path().join("scenario.pcap");
    let (bytes, _) = synthesize(&two_subnet_spec(8)).map_err(|e| e.to_string())?;
    std::fs::write(&trace, bytes).map_err(|e| e.to_string())?;
    let mut plans = Vec::new();
    let mut reports = Vec::new();
    for run in 0..2 {
        let out = dir.path().join(format!("plan{run}.json"));
        let report = dir.path().join(format!("report{run}.txt"));
        let r = run_cli(&[
            "--trace",
            trace.to_str().unwrap(),
            "--threshold",
            "1000",
            "--deterministic",
            "--out",
            out.to_str().unwrap(),
            "--report",
            report.to_str().unwrap(),
        ])?;
        ensure!(r.status.code() == Some(0), "run {run}: exit {:?}", r.status.code());
        plans.push(std::fs::read(&out).map_err(|e| e.to_string())?);
        reports.push(std::fs::read(&report).map_err(|e| e.to_string())?);
    }
    ensure!(plans[0] == plans[1], "plan files differ");
    ensure!(reports[0] == reports[1], "reports differ");
    let (_, doc) = read_plan(&dir.path().join("plan0.json"))?;
    ensure!(doc.created_at_us == 0, "timestamp not normalized");
    Ok(format!("{} identical plan bytes", plans[0].len()))
}
