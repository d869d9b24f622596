//! Capture configuration and frame sources.
//!
//! A [`FrameSource`] yields raw frames in capture order. Recorded traces and
//! live devices share the abstraction; the only difference the scanner sees
//! is which clock the duration timeout is measured against.

#[cfg(target_os = "linux")]
mod live;

use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Duration;

use thiserror::Error;

use crate::codec::RawFrame;
use crate::pcap::{PcapError, PcapReader};

#[cfg(target_os = "linux")]
pub use live::{interface_state, LiveSource};

pub const DEFAULT_ACCEPTED_TTLS: [u8; 3] = [1, 64, 128];
pub const DEFAULT_DURATION_TIMEOUT: Duration = Duration::from_secs(300);
pub const DEFAULT_HOST_THRESHOLD: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CaptureSource {
    LiveInterface(String),
    TraceFile(PathBuf),
}

impl std::fmt::Display for CaptureSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CaptureSource::LiveInterface(name) => write!(f, "interface {name}"),
            CaptureSource::TraceFile(path) => write!(f, "trace {}", path.display()),
        }
    }
}

/// Which protocols the scanner listens to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CaptureMode {
    ArpOnly,
    IpOnly,
    Both,
}

impl CaptureMode {
    pub fn includes_arp(self) -> bool {
        matches!(self, CaptureMode::ArpOnly | CaptureMode::Both)
    }

    pub fn includes_ip(self) -> bool {
        matches!(self, CaptureMode::IpOnly | CaptureMode::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptureConfig {
    pub source: CaptureSource,
    pub mode: CaptureMode,
    /// IPv4 TTL values let through the IP filter.
    pub accepted_ttls: BTreeSet<u8>,
    pub duration_timeout: Duration,
    /// Number of detected hosts that ends the passive phase.
    pub host_threshold: usize,
    pub promiscuous: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("accepted TTL set is empty but IP capture is enabled")]
    EmptyTtlSet,
    #[error("duration timeout must be positive")]
    ZeroTimeout,
    #[error("host threshold must be positive")]
    ZeroThreshold,
}

impl CaptureConfig {
    pub fn new(source: CaptureSource) -> CaptureConfig {
        CaptureConfig {
            source,
            mode: CaptureMode::Both,
            accepted_ttls: DEFAULT_ACCEPTED_TTLS.into_iter().collect(),
            duration_timeout: DEFAULT_DURATION_TIMEOUT,
            host_threshold: DEFAULT_HOST_THRESHOLD,
            promiscuous: true,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.mode != CaptureMode::ArpOnly && self.accepted_ttls.is_empty() {
            return Err(ConfigError::EmptyTtlSet);
        }
        if self.duration_timeout.is_zero() {
            return Err(ConfigError::ZeroTimeout);
        }
        if self.host_threshold == 0 {
            return Err(ConfigError::ZeroThreshold);
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("cannot open capture source {source_name}: {reason}")]
    SourceOpenFailure { source_name: String, reason: String },
    #[error("malformed trace file {path}: {cause}")]
    MalformedTraceFile { path: String, cause: PcapError },
    #[error("invalid capture configuration: {0}")]
    InvalidConfig(#[from] ConfigError),
}

/// Clock against which the duration timeout runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockKind {
    /// Frame capture timestamps (deterministic replay).
    CaptureTime,
    /// The host's wall clock.
    WallClock,
}

#[derive(Debug)]
pub enum SourceEvent {
    Frame(RawFrame),
    /// Nothing arrived within the poll interval; lets the caller check its
    /// timeout and stop flag.
    Idle,
    Exhausted,
}

pub trait FrameSource {
    fn next_event(&mut self) -> Result<SourceEvent, CaptureError>;

    fn clock(&self) -> ClockKind;
}

/// Frames replayed from a pcap savefile.
pub struct TraceFileSource<R> {
    /// `None` for a zero-byte file, which replays as an empty capture.
    reader: Option<PcapReader<R>>,
    path: String,
}

impl TraceFileSource<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self, CaptureError> {
        let file = File::open(path).map_err(|e| CaptureError::SourceOpenFailure {
            source_name: format!("trace {}", path.display()),
            reason: e.to_string(),
        })?;
        TraceFileSource::from_reader(BufReader::new(file), path.display().to_string())
    }
}

impl<R: std::io::Read> TraceFileSource<R> {
    pub fn from_reader(reader: R, name: impl Into<String>) -> Result<Self, CaptureError> {
        let path = name.into();
        let reader = match PcapReader::new(reader) {
            Ok(r) => Some(r),
            Err(PcapError::TruncatedHeader(0)) => None,
            Err(PcapError::Io(e)) => {
                return Err(CaptureError::SourceOpenFailure {
                    source_name: format!("trace {path}"),
                    reason: e.to_string(),
                })
            }
            Err(cause) => return Err(CaptureError::MalformedTraceFile { path, cause }),
        };
        Ok(TraceFileSource { reader, path })
    }
}

impl<R: std::io::Read> FrameSource for TraceFileSource<R> {
    fn next_event(&mut self) -> Result<SourceEvent, CaptureError> {
        let Some(reader) = self.reader.as_mut() else { return Ok(SourceEvent::Exhausted) };
        match reader.next_frame() {
            Ok(Some(frame)) => Ok(SourceEvent::Frame(frame)),
            Ok(None) => Ok(SourceEvent::Exhausted),
            Err(cause) => Err(CaptureError::MalformedTraceFile { path: self.path.clone(), cause }),
        }
    }

    fn clock(&self) -> ClockKind {
        ClockKind::CaptureTime
    }
}

/// In-memory frames, replayed in order on the capture clock.
pub struct FrameListSource {
    frames: std::vec::IntoIter<RawFrame>,
}

impl FrameListSource {
    pub fn new(frames: Vec<RawFrame>) -> FrameListSource {
        FrameListSource { frames: frames.into_iter() }
    }
}

impl FrameSource for FrameListSource {
    fn next_event(&mut self) -> Result<SourceEvent, CaptureError> {
        Ok(self.frames.next().map_or(SourceEvent::Exhausted, SourceEvent::Frame))
    }

    fn clock(&self) -> ClockKind {
        ClockKind::CaptureTime
    }
}

/// Opens the source named in `config`.
pub fn open_source(config: &CaptureConfig) -> Result<Box<dyn FrameSource>, CaptureError> {
    match &config.source {
        CaptureSource::TraceFile(path) => Ok(Box::new(TraceFileSource::open(path)?)),
        CaptureSource::LiveInterface(name) => open_live(name, config.promiscuous),
    }
}

#[cfg(target_os = "linux")]
fn open_live(name: &str, promiscuous: bool) -> Result<Box<dyn FrameSource>, CaptureError> {
    Ok(Box::new(LiveSource::open(name, promiscuous)?))
}

#[cfg(not(target_os = "linux"))]
fn open_live(name: &str, _promiscuous: bool) -> Result<Box<dyn FrameSource>, CaptureError> {
    Err(CaptureError::SourceOpenFailure {
        source_name: format!("interface {name}"),
        reason: "live capture is only supported on Linux in this build".into(),
    })
}
