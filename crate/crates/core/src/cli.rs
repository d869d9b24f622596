//! Command-line orchestration: passive phase, analysis, plan and report.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use clap::{ArgGroup, Parser, ValueEnum};
use thiserror::Error;

use crate::addr::{parse_interface_address, Ipv4Cidr};
use crate::capture::{open_source, CaptureConfig, CaptureError, CaptureMode, CaptureSource};
use crate::hints::{infer_internal_gateway, HopcountError, HopcountTable};
use crate::planfile::PlanDocument;
use crate::planner::{build_scan_plan, GatewayProvenance, InterfaceState, PlanError, ScanPlan};
use crate::scanner::{run_passive_phase_on, ObservationSet, ScanControl, TerminationReason};
use crate::scope::{order_ranges, ClusteringPolicy};
use crate::synth::{write_scenario, ScenarioSpec, SynthError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Arp,
    Ip,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClusterArg {
    MaxSize,
    Prefix,
    Single,
}

/// Passive network scope discovery.
///
/// Listens to ARP and IPv4 traffic (live or from a pcap trace), infers the
/// surrounding network ranges, proposes an interface configuration and
/// writes a scan plan for an active scanner.
#[derive(Debug, Clone, Parser)]
#[command(name = "netscope", version)]
#[command(group(ArgGroup::new("source").required(true).args(["interface", "trace"])))]
pub struct Args {
    /// Capture live from this network interface (needs CAP_NET_RAW)
    #[arg(long, value_name = "NAME")]
    pub interface: Option<String>,

    /// Replay frames from a pcap savefile
    #[arg(long, value_name = "PATH")]
    pub trace: Option<PathBuf>,

    #[arg(long, value_enum, default_value = "both")]
    pub mode: ModeArg,

    /// IPv4 TTL values admitted by the filter
    #[arg(long, value_name = "LIST", value_delimiter = ',', default_value = "1,64,128")]
    pub ttl_accept: Vec<u8>,

    /// Passive phase duration limit in seconds
    #[arg(long, value_name = "SECONDS", default_value_t = 300)]
    pub timeout: u64,

    /// Stop after this many detected hosts
    #[arg(long, value_name = "N", default_value_t = 10)]
    pub threshold: usize,

    #[arg(long, value_enum, default_value = "max-size")]
    pub cluster: ClusterArg,

    /// Largest span of one range for `--cluster max-size`
    #[arg(long, value_name = "N", default_value_t = 256)]
    pub max_net_size: u64,

    /// Presumed prefix length for `--cluster prefix`
    #[arg(long, value_name = "N")]
    pub prefix_len: Option<u8>,

    /// Where to write the scan plan
    #[arg(long, value_name = "PATH", default_value = "scan_plan.json")]
    pub out: PathBuf,

    /// Where to write the text report (default: standard output)
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,

    /// JSON object of address -> hopcount measured from outside
    #[arg(long, value_name = "PATH")]
    pub hopcounts: Option<PathBuf>,

    /// Synthesize a trace from this scenario spec into `--trace` first
    #[arg(long, value_name = "SPEC", requires = "trace", conflicts_with = "interface")]
    pub synth: Option<PathBuf>,

    /// Normalize timestamps so equal inputs give byte-identical plans
    #[arg(long)]
    pub deterministic: bool,

    /// Current interface address as a.b.c.d/p (overrides the OS state)
    #[arg(long, value_name = "CIDR")]
    pub iface_addr: Option<String>,

    /// Current default gateway, used with `--iface-addr`
    #[arg(long, value_name = "IP", requires = "iface_addr")]
    pub iface_gateway: Option<Ipv4Addr>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("InvalidArguments: {0}")]
    InvalidArguments(String),
    #[error("SourceOpenFailure: {0}")]
    SourceOpenFailure(CaptureError),
    #[error("MalformedTraceFile: {0}")]
    MalformedTraceFile(CaptureError),
    #[error("NoRangesDetermined: {0}")]
    NoRangesDetermined(PlanError),
    #[error("NoFreeAddress: {0}")]
    NoFreeAddress(PlanError),
    #[error("OutputFailure: cannot write {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Output { .. } => 1,
            CliError::InvalidArguments(_) => 2,
            CliError::SourceOpenFailure(_) => 3,
            CliError::MalformedTraceFile(_) => 4,
            CliError::NoRangesDetermined(_) => 5,
            CliError::NoFreeAddress(_) => 6,
        }
    }
}

impl From<CaptureError> for CliError {
    fn from(e: CaptureError) -> CliError {
        match e {
            CaptureError::SourceOpenFailure { .. } => CliError::SourceOpenFailure(e),
            CaptureError::MalformedTraceFile { .. } => CliError::MalformedTraceFile(e),
            CaptureError::InvalidConfig(c) => CliError::InvalidArguments(c.to_string()),
        }
    }
}

impl From<PlanError> for CliError {
    fn from(e: PlanError) -> CliError {
        match e {
            PlanError::NoRangesDetermined => CliError::NoRangesDetermined(e),
            PlanError::NoFreeAddress { .. } => CliError::NoFreeAddress(e),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> CliError {
        CliError::InvalidArguments(e.to_string())
    }
}

impl From<HopcountError> for CliError {
    fn from(e: HopcountError) -> CliError {
        CliError::InvalidArguments(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseTimings {
    pub passive: Duration,
    pub analysis: Duration,
}

/// One row of a per-range host table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HostRow {
    pub ip: Ipv4Addr,
    pub macs: String,
    pub arp_requests: u64,
    pub arp_replies: u64,
    pub targeted: u64,
    pub ip_packets: u64,
    pub ttls: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RangeTable {
    pub block: Ipv4Cidr,
    pub rows: Vec<HostRow>,
}

/// Human-readable account of a run, built only from the plan, its
/// observations and the measured phase timings.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub scan_plan: ScanPlan,
    pub source: String,
    pub tables: Vec<RangeTable>,
    /// Absent in deterministic mode.
    pub timings: Option<PhaseTimings>,
    pub internal_gateway_hint: Option<Ipv4Addr>,
    pub warnings: Vec<String>,
}

impl RunReport {
    pub fn new(
        plan: &ScanPlan,
        source: String,
        timings: Option<PhaseTimings>,
        internal_gateway_hint: Option<Ipv4Addr>,
        hopcounts_given: bool,
    ) -> RunReport {
        let obs = &plan.source_observations;
        let tables = plan
            .final_ranges
            .iter()
            .map(|block| RangeTable {
                block: *block,
                rows: obs
                    .hosts
                    .values()
                    .filter(|h| block.contains(h.ip))
                    .map(|h| HostRow {
                        ip: h.ip,
                        macs: h.macs.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(","),
                        arp_requests: h.arp_requests_sent,
                        arp_replies: h.arp_replies_sent,
                        targeted: h.arp_requests_targeting,
                        ip_packets: h.ip_packets_sent,
                        ttls: if h.observed_ttls.is_empty() {
                            "-".into()
                        } else {
                            h.observed_ttls.iter().map(|(t, n)| format!("{t}x{n}")).collect::<Vec<_>>().join(",")
                        },
                    })
                    .collect(),
            })
            .collect();

        let mut warnings = Vec::new();
        if let Some(cfg) = &plan.reconfiguration {
            if matches!(
                cfg.gateway_provenance,
                GatewayProvenance::RangeFirstAddress | GatewayProvenance::RangeLastAddress
            ) {
                warnings.push(format!(
                    "gateway {} is a positional guess: no ARP evidence pointed at a router in {}",
                    cfg.gateway, plan.own_network
                ));
            }
        }
        if obs.termination_reason == Some(TerminationReason::Timeout) {
            warnings.push("passive phase hit the duration limit before the host threshold".into());
        }
        for h in obs.hosts.values().filter(|h| h.macs.len() > 1) {
            warnings.push(format!("{} was seen with {} different MAC addresses", h.ip, h.macs.len()));
        }
        if hopcounts_given && internal_gateway_hint.is_none() {
            warnings.push("hopcount table has no unique address one hop closer than the rest".into());
        }

        RunReport { scan_plan: plan.clone(), source, tables, timings, internal_gateway_hint, warnings }
    }

    pub fn render(&self) -> String {
        let plan = &self.scan_plan;
        let obs = &plan.source_observations;
        let mut out = String::new();
        let w = &mut out;
        let _ = writeln!(w, "netscope run report");
        let _ = writeln!(w, "source: {}", self.source);
        let _ = writeln!(
            w,
            "passive phase: {} frames seen, {} admitted, {} hosts detected, stopped by {}",
            obs.frames_seen,
            obs.frames_admitted,
            obs.detected_count(),
            obs.termination_reason.map_or("-".to_string(), |r| r.to_string()),
        );
        if let (Some(a), Some(b)) = (obs.started_at_us, obs.ended_at_us) {
            let _ = writeln!(w, "capture span: {:.3} s", b.saturating_sub(a) as f64 / 1e6);
        }
        if let Some(t) = &self.timings {
            let _ = writeln!(
                w,
                "timing: passive {:.3} s, analysis {:.3} s",
                t.passive.as_secs_f64(),
                t.analysis.as_secs_f64()
            );
        }

        let _ = writeln!(w, "\npreliminary ranges (by priority):");
        for r in order_ranges(plan.preliminary_ranges.clone()) {
            let _ = writeln!(w, "  {:<33} {:<10} {} hosts", r.to_string(), r.class.to_string(), r.host_count());
        }
        let _ = writeln!(w, "\nfinal ranges:");
        for b in &plan.final_ranges {
            let mark = if *b == plan.own_network { "  (own network)" } else { "" };
            let _ = writeln!(w, "  {b}{mark}");
        }
        let _ = writeln!(w);
        match &plan.reconfiguration {
            None => {
                let _ = writeln!(w, "interface configuration fits {}; no change needed", plan.own_network);
            }
            Some(c) => {
                let _ = writeln!(
                    w,
                    "proposed configuration: {}/{} gateway {} ({:?})",
                    c.ip, c.prefix_length, c.gateway, c.gateway_provenance
                );
            }
        }
        if let Some(h) = self.internal_gateway_hint {
            let _ = writeln!(w, "internal gateway hint: {h}");
        }

        for t in &self.tables {
            let _ = writeln!(w, "\nhosts in {}:", t.block);
            let _ = writeln!(
                w,
                "  {:<15}  {:>7}  {:>7}  {:>8}  {:>7}  {:<17}  ttls",
                "address", "arp req", "arp rep", "targeted", "ip pkts", "mac"
            );
            for r in &t.rows {
                let _ = writeln!(
                    w,
                    "  {:<15}  {:>7}  {:>7}  {:>8}  {:>7}  {:<17}  {}",
                    r.ip.to_string(),
                    r.arp_requests,
                    r.arp_replies,
                    r.targeted,
                    r.ip_packets,
                    r.macs,
                    r.ttls
                );
            }
        }
        if !self.warnings.is_empty() {
            let _ = writeln!(w, "\nwarnings:");
            for msg in &self.warnings {
                let _ = writeln!(w, "  - {msg}");
            }
        }
        out
    }
}

/// What a successful run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub document: PlanDocument,
    pub report: RunReport,
}

fn capture_config(args: &Args) -> Result<CaptureConfig, CliError> {
    let source = match (&args.interface, &args.trace) {
        (Some(name), None) => CaptureSource::LiveInterface(name.clone()),
        (None, Some(path)) => CaptureSource::TraceFile(path.clone()),
        _ => return Err(CliError::InvalidArguments("give exactly one of --interface or --trace".into())),
    };
    let mut config = CaptureConfig::new(source);
    config.mode = match args.mode {
        ModeArg::Arp => CaptureMode::ArpOnly,
        ModeArg::Ip => CaptureMode::IpOnly,
        ModeArg::Both => CaptureMode::Both,
    };
    config.accepted_ttls = args.ttl_accept.iter().copied().collect::<BTreeSet<u8>>();
    config.duration_timeout = Duration::from_secs(args.timeout);
    config.host_threshold = args.threshold;
    config.validate().map_err(|e| CliError::InvalidArguments(e.to_string()))?;
    Ok(config)
}

fn clustering_policy(args: &Args) -> Result<ClusteringPolicy, CliError> {
    let invalid = |e: crate::scope::ScopeError| CliError::InvalidArguments(e.to_string());
    match args.cluster {
        ClusterArg::MaxSize => ClusteringPolicy::max_network_size(args.max_net_size).map_err(invalid),
        ClusterArg::Prefix => {
            let p = args
                .prefix_len
                .ok_or_else(|| CliError::InvalidArguments("--cluster prefix needs --prefix-len".into()))?;
            ClusteringPolicy::presumed_prefix(p).map_err(invalid)
        }
        ClusterArg::Single => Ok(ClusteringPolicy::single_network()),
    }
}

fn interface(args: &Args) -> Result<InterfaceState, CliError> {
    if let Some(text) = &args.iface_addr {
        let (ip, prefix) = parse_interface_address(text).map_err(|e| CliError::InvalidArguments(e.to_string()))?;
        return Ok(InterfaceState::configured(ip, prefix, args.iface_gateway));
    }
    match &args.interface {
        Some(name) => os_interface_state(name),
        None => Ok(InterfaceState::unconfigured()),
    }
}

#[cfg(target_os = "linux")]
fn os_interface_state(name: &str) -> Result<InterfaceState, CliError> {
    crate::capture::interface_state(name).map_err(|e| {
        CliError::SourceOpenFailure(CaptureError::SourceOpenFailure {
            source_name: format!("interface {name}"),
            reason: e.to_string(),
        })
    })
}

#[cfg(not(target_os = "linux"))]
fn os_interface_state(_name: &str) -> Result<InterfaceState, CliError> {
    Ok(InterfaceState::unconfigured())
}

/// Runs the whole pipeline and writes the plan and report.
pub fn run(args: &Args) -> Result<RunOutcome, CliError> {
    let config = capture_config(args)?;
    let policy = clustering_policy(args)?;
    let iface = interface(args)?;

    if let Some(spec_path) = &args.synth {
        let trace = args.trace.as_deref().expect("clap enforces --trace with --synth");
        let text = std::fs::read_to_string(spec_path)
            .map_err(|e| CliError::InvalidArguments(format!("cannot read scenario {}: {e}", spec_path.display())))?;
        let spec = ScenarioSpec::from_json(&text)?;
        spec.validate()?;
        write_scenario(&spec, trace).map_err(|source| CliError::Output { path: trace.to_path_buf(), source })?;
    }
    let hopcounts = args.hopcounts.as_deref().map(HopcountTable::load).transpose()?;

    let passive_start = Instant::now();
    let mut source = open_source(&config)?;
    let control = ScanControl::new();
    let stop_watch =
        matches!(config.source, CaptureSource::LiveInterface(_)).then(|| interrupt::watch(control.clone()));
    let observations = run_passive_phase_on(&config, source.as_mut(), &control);
    drop(stop_watch);
    let observations: ObservationSet = observations?;
    let passive = passive_start.elapsed();

    let analysis_start = Instant::now();
    let created_at_us = if args.deterministic { 0 } else { now_us() };
    let plan = build_scan_plan(Arc::new(observations), &policy, &iface, created_at_us)?;
    let hint = hopcounts.as_ref().and_then(infer_internal_gateway);
    let analysis = analysis_start.elapsed();

    let document = PlanDocument::from_plan(&plan, hint);
    write_file(&args.out, &document.to_json())?;
    let timings = (!args.deterministic).then_some(PhaseTimings { passive, analysis });
    let report = RunReport::new(&plan, config.source.to_string(), timings, hint, hopcounts.is_some());
    match &args.report {
        Some(path) => write_file(path, &report.render())?,
        None => print!("{}", report.render()),
    }
    Ok(RunOutcome { document, report })
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|source| CliError::Output { path: path.to_path_buf(), source })
}

fn now_us() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or(Duration::ZERO).as_micros() as u64
}

/// Parses `argv`, runs, prints diagnostics and returns the exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&args) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("netscope: error: {e}");
            e.exit_code()
        }
    }
}

/// Ctrl-C during a live capture ends the passive phase cleanly.
mod interrupt {
    use std::sync::atomic::{AtomicBool, Ordering};
    use std::sync::Arc;
    use std::thread::JoinHandle;
    use std::time::Duration;

    use crate::scanner::ScanControl;

    static INTERRUPTED: AtomicBool = AtomicBool::new(false);

    extern "C" fn on_sigint(_: libc::c_int) {
        INTERRUPTED.store(true, Ordering::SeqCst);
    }

    pub struct Watch {
        done: Arc<AtomicBool>,
        thread: Option<JoinHandle<()>>,
    }

    pub fn watch(control: ScanControl) -> Watch {
        let handler: extern "C" fn(libc::c_int) = on_sigint;
        // SAFETY: the handler only stores to an atomic, which is async-signal-safe.
        unsafe {
            libc::signal(libc::SIGINT, handler as libc::sighandler_t);
        }
        let done = Arc::new(AtomicBool::new(false));
        let flag = done.clone();
        let thread = std::thread::spawn(move || {
            while !flag.load(Ordering::SeqCst) {
                if INTERRUPTED.load(Ordering::SeqCst) {
                    control.stop();
                    return;
                }
                std::thread::sleep(Duration::from_millis(50));
            }
        });
        Watch { done, thread: Some(thread) }
    }

    impl Drop for Watch {
        fn drop(&mut self) {
            self.done.store(true, Ordering::SeqCst);
            if let Some(t) = self.thread.take() {
                let _ = t.join();
            }
            // SAFETY: restoring the default disposition.
            unsafe {
                libc::signal(libc::SIGINT, libc::SIG_DFL);
            }
        }
    }
}
