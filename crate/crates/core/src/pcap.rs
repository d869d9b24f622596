//! Classic pcap savefile reading and writing.
//!
//! Both the microsecond (`0xa1b2c3d4`) and nanosecond (`0xa1b23c4d`) magics
//! are read in either byte order; nanosecond timestamps are truncated to
//! microseconds. Only the Ethernet link type is accepted. The writer always
//! emits little-endian microsecond files.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::codec::RawFrame;

pub const MAGIC_MICROS: u32 = 0xa1b2_c3d4;
pub const MAGIC_NANOS: u32 = 0xa1b2_3c4d;
pub const LINKTYPE_ETHERNET: u32 = 1;

const FILE_HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;
/// Upper bound on a single record, matching libpcap's maximum snapshot length.
const MAX_RECORD_LEN: u32 = 262_144;
const DEFAULT_SNAPLEN: u32 = 65_535;

#[derive(Debug, Error)]
pub enum PcapError {
    #[error("I/O error while reading capture: {0}")]
    Io(#[from] io::Error),
    #[error("not a pcap savefile (magic {0:#010x})")]
    BadMagic(u32),
    #[error("truncated file header ({0} of 24 bytes)")]
    TruncatedHeader(usize),
    #[error("unsupported link type {0} (only Ethernet is supported)")]
    UnsupportedLinkType(u32),
    #[error("record {index}: truncated {what}")]
    TruncatedRecord { index: u64, what: &'static str },
    #[error("record {index}: captured length {caplen} exceeds limit {limit}")]
    OversizedRecord { index: u64, caplen: u32, limit: u32 },
    #[error("record {index}: captured length {caplen} exceeds original length {origlen}")]
    InconsistentLengths { index: u64, caplen: u32, origlen: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Resolution {
    Micros,
    Nanos,
}

/// Streaming reader over a pcap savefile.
pub struct PcapReader<R> {
    inner: R,
    big_endian: bool,
    resolution: Resolution,
    snaplen: u32,
    index: u64,
    done: bool,
}

impl<R: Read> PcapReader<R> {
    pub fn new(mut inner: R) -> Result<Self, PcapError> {
        let mut header = [0u8; FILE_HEADER_LEN];
        let got = read_full(&mut inner, &mut header)?;
        if got < 4 {
            return Err(PcapError::TruncatedHeader(got));
        }
        let le = u32::from_le_bytes(header[0..4].try_into().unwrap());
        let (big_endian, resolution) = match le {
            MAGIC_MICROS => (false, Resolution::Micros),
            MAGIC_NANOS => (false, Resolution::Nanos),
            m if m.swap_bytes() == MAGIC_MICROS => (true, Resolution::Micros),
            m if m.swap_bytes() == MAGIC_NANOS => (true, Resolution::Nanos),
            m => return Err(PcapError::BadMagic(m)),
        };
        if got < FILE_HEADER_LEN {
            return Err(PcapError::TruncatedHeader(got));
        }
        let field = |at: usize| {
            let raw: [u8; 4] = header[at..at + 4].try_into().unwrap();
            if big_endian {
                u32::from_be_bytes(raw)
            } else {
                u32::from_le_bytes(raw)
            }
        };
        let snaplen = field(16);
        // The upper 16 bits may carry FCS flags; the link type is the low half.
        let linktype = field(20) & 0xffff;
        if linktype != LINKTYPE_ETHERNET {
            return Err(PcapError::UnsupportedLinkType(linktype));
        }
        let snaplen = if snaplen == 0 || snaplen > MAX_RECORD_LEN { MAX_RECORD_LEN } else { snaplen };
        Ok(PcapReader { inner, big_endian, resolution, snaplen, index: 0, done: false })
    }

    pub fn snaplen(&self) -> u32 {
        self.snaplen
    }

    /// Reads the next record; `Ok(None)` at a clean end of file.
    pub fn next_frame(&mut self) -> Result<Option<RawFrame>, PcapError> {
        if self.done {
            return Ok(None);
        }
        let index = self.index;
        let mut header = [0u8; RECORD_HEADER_LEN];
        let got = read_full(&mut self.inner, &mut header)?;
        if got == 0 {
            self.done = true;
            return Ok(None);
        }
        if got < RECORD_HEADER_LEN {
            self.done = true;
            return Err(PcapError::TruncatedRecord { index, what: "record header" });
        }
        let field = |at: usize| {
            let raw: [u8; 4] = header[at..at + 4].try_into().unwrap();
            if self.big_endian {
                u32::from_be_bytes(raw)
            } else {
                u32::from_le_bytes(raw)
            }
        };
        let (secs, frac, caplen, origlen) = (field(0), field(4), field(8), field(12));
        if caplen > MAX_RECORD_LEN {
            self.done = true;
            return Err(PcapError::OversizedRecord { index, caplen, limit: MAX_RECORD_LEN });
        }
        if caplen > origlen {
            self.done = true;
            return Err(PcapError::InconsistentLengths { index, caplen, origlen });
        }
        let mut bytes = vec![0u8; caplen as usize];
        if read_full(&mut self.inner, &mut bytes)? < bytes.len() {
            self.done = true;
            return Err(PcapError::TruncatedRecord { index, what: "packet data" });
        }
        let micros = match self.resolution {
            Resolution::Micros => u64::from(frac),
            Resolution::Nanos => u64::from(frac) / 1000,
        };
        self.index += 1;
        Ok(Some(RawFrame { bytes, timestamp_us: u64::from(secs) * 1_000_000 + micros, original_length: origlen }))
    }
}

impl<R: Read> Iterator for PcapReader<R> {
    type Item = Result<RawFrame, PcapError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_frame().transpose()
    }
}

/// Reads until `buf` is full or EOF; returns the number of bytes read.
fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

pub struct PcapWriter<W> {
    inner: W,
}

impl<W: Write> PcapWriter<W> {
    pub fn new(mut inner: W) -> io::Result<Self> {
        let mut header = Vec::with_capacity(FILE_HEADER_LEN);
        header.extend_from_slice(&MAGIC_MICROS.to_le_bytes());
        header.extend_from_slice(&2u16.to_le_bytes());
        header.extend_from_slice(&4u16.to_le_bytes());
        header.extend_from_slice(&0i32.to_le_bytes()); // thiszone
        header.extend_from_slice(&0u32.to_le_bytes()); // sigfigs
        header.extend_from_slice(&DEFAULT_SNAPLEN.to_le_bytes());
        header.extend_from_slice(&LINKTYPE_ETHERNET.to_le_bytes());
        inner.write_all(&header)?;
        Ok(PcapWriter { inner })
    }

    pub fn write_frame(&mut self, timestamp_us: u64, bytes: &[u8]) -> io::Result<()> {
        let caplen = bytes.len().min(DEFAULT_SNAPLEN as usize);
        let mut rec = Vec::with_capacity(RECORD_HEADER_LEN + caplen);
        rec.extend_from_slice(&((timestamp_us / 1_000_000) as u32).to_le_bytes());
        rec.extend_from_slice(&((timestamp_us % 1_000_000) as u32).to_le_bytes());
        rec.extend_from_slice(&(caplen as u32).to_le_bytes());
        rec.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
        rec.extend_from_slice(&bytes[..caplen]);
        self.inner.write_all(&rec)
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}
