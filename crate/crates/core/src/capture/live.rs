//! Live capture on Linux through an `AF_PACKET` raw socket, plus reading the
//! interface's current IPv4 configuration.
//!
//! Capturing requires `CAP_NET_RAW`. The socket only ever receives.

use std::ffi::{CStr, CString};
use std::io;
use std::net::Ipv4Addr;
use std::os::fd::{AsRawFd, FromRawFd, OwnedFd};
use std::time::{SystemTime, UNIX_EPOCH};

use super::{CaptureError, ClockKind, FrameSource, SourceEvent};
use crate::codec::RawFrame;
use crate::planner::InterfaceState;

const POLL_INTERVAL_MS: libc::suseconds_t = 200;
const RECV_BUFFER: usize = 65_536;

pub struct LiveSource {
    fd: OwnedFd,
    name: String,
    buf: Vec<u8>,
}

impl LiveSource {
    pub fn open(name: &str, promiscuous: bool) -> Result<LiveSource, CaptureError> {
        let fail =
            |reason: String| CaptureError::SourceOpenFailure { source_name: format!("interface {name}"), reason };
        let cname = CString::new(name).map_err(|_| fail("interface name contains NUL".into()))?;
        // SAFETY: `cname` is a valid NUL-terminated string.
        let ifindex = unsafe { libc::if_nametoindex(cname.as_ptr()) };
        if ifindex == 0 {
            return Err(fail(io::Error::last_os_error().to_string()));
        }
        let proto = (libc::ETH_P_ALL as u16).to_be();
        // SAFETY: plain socket(2) call; the result is checked below.
        let raw = unsafe { libc::socket(libc::AF_PACKET, libc::SOCK_RAW, libc::c_int::from(proto)) };
        if raw < 0 {
            return Err(fail(format!("{} (capture needs CAP_NET_RAW)", io::Error::last_os_error())));
        }
        // SAFETY: `raw` is a freshly created descriptor we own.
        let fd = unsafe { OwnedFd::from_raw_fd(raw) };

        // SAFETY: sockaddr_ll is plain data; zeroed is a valid initial value.
        let mut addr: libc::sockaddr_ll = unsafe { std::mem::zeroed() };
        addr.sll_family = libc::AF_PACKET as u16;
        addr.sll_protocol = proto;
        addr.sll_ifindex = ifindex as i32;
        // SAFETY: `addr` is a valid sockaddr_ll and the length matches.
        let rc = unsafe {
            libc::bind(
                fd.as_raw_fd(),
                &addr as *const libc::sockaddr_ll as *const libc::sockaddr,
                std::mem::size_of::<libc::sockaddr_ll>() as libc::socklen_t,
            )
        };
        if rc < 0 {
            return Err(fail(io::Error::last_os_error().to_string()));
        }

        if promiscuous {
            // SAFETY: packet_mreq is plain data.
            let mut mreq: libc::packet_mreq = unsafe { std::mem::zeroed() };
            mreq.mr_ifindex = ifindex as i32;
            mreq.mr_type = libc::PACKET_MR_PROMISC as u16;
            set_opt(&fd, libc::SOL_PACKET, libc::PACKET_ADD_MEMBERSHIP, &mreq).map_err(|e| fail(e.to_string()))?;
        }
        let timeout = libc::timeval { tv_sec: 0, tv_usec: POLL_INTERVAL_MS * 1000 };
        set_opt(&fd, libc::SOL_SOCKET, libc::SO_RCVTIMEO, &timeout).map_err(|e| fail(e.to_string()))?;

        Ok(LiveSource { fd, name: name.to_string(), buf: vec![0u8; RECV_BUFFER] })
    }
}

fn set_opt<T>(fd: &OwnedFd, level: libc::c_int, name: libc::c_int, value: &T) -> io::Result<()> {
    // SAFETY: `value` points to a live T of the advertised size.
    let rc = unsafe {
        libc::setsockopt(
            fd.as_raw_fd(),
            level,
            name,
            value as *const T as *const libc::c_void,
            std::mem::size_of::<T>() as libc::socklen_t,
        )
    };
    if rc < 0 {
        Err(io::Error::last_os_error())
    } else {
        Ok(())
    }
}

impl FrameSource for LiveSource {
    fn next_event(&mut self) -> Result<SourceEvent, CaptureError> {
        // MSG_TRUNC makes recv report the on-wire length even when truncated.
        // SAFETY: the buffer is valid for `len` bytes.
        let n = unsafe {
            libc::recv(self.fd.as_raw_fd(), self.buf.as_mut_ptr() as *mut libc::c_void, self.buf.len(), libc::MSG_TRUNC)
        };
        if n < 0 {
            let err = io::Error::last_os_error();
            return match err.kind() {
                io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut | io::ErrorKind::Interrupted => {
                    Ok(SourceEvent::Idle)
                }
                _ => Err(CaptureError::SourceOpenFailure {
                    source_name: format!("interface {}", self.name),
                    reason: err.to_string(),
                }),
            };
        }
        let wire_len = n as usize;
        let captured = wire_len.min(self.buf.len());
        let timestamp_us = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_micros() as u64).unwrap_or(0);
        Ok(SourceEvent::Frame(RawFrame {
            bytes: self.buf[..captured].to_vec(),
            timestamp_us,
            original_length: wire_len as u32,
        }))
    }

    fn clock(&self) -> ClockKind {
        ClockKind::WallClock
    }
}

/// Reads the first IPv4 address of `name` and the default route through it.
pub fn interface_state(name: &str) -> io::Result<InterfaceState> {
    let mut head: *mut libc::ifaddrs = std::ptr::null_mut();
    // SAFETY: getifaddrs fills `head`; it is released with freeifaddrs below.
    if unsafe { libc::getifaddrs(&mut head) } != 0 {
        return Err(io::Error::last_os_error());
    }
    let mut found = None;
    let mut cur = head;
    while !cur.is_null() {
        // SAFETY: `cur` walks the list returned by getifaddrs.
        let ifa = unsafe { &*cur };
        cur = ifa.ifa_next;
        if ifa.ifa_addr.is_null() || ifa.ifa_name.is_null() {
            continue;
        }
        // SAFETY: ifa_name is a NUL-terminated C string.
        let ifname = unsafe { CStr::from_ptr(ifa.ifa_name) };
        // SAFETY: ifa_addr is non-null.
        let family = unsafe { (*ifa.ifa_addr).sa_family };
        if ifname.to_bytes() != name.as_bytes() || i32::from(family) != libc::AF_INET {
            continue;
        }
        // SAFETY: family is AF_INET so the address is a sockaddr_in.
        let sin = unsafe { &*(ifa.ifa_addr as *const libc::sockaddr_in) };
        let ip = Ipv4Addr::from(u32::from_be(sin.sin_addr.s_addr));
        let prefix = if ifa.ifa_netmask.is_null() {
            32
        } else {
            // SAFETY: the netmask of an AF_INET entry is a sockaddr_in.
            let mask = unsafe { &*(ifa.ifa_netmask as *const libc::sockaddr_in) };
            u32::from_be(mask.sin_addr.s_addr).leading_ones() as u8
        };
        found = Some((ip, prefix));
        break;
    }
    // SAFETY: `head` came from getifaddrs.
    unsafe { libc::freeifaddrs(head) };

    Ok(match found {
        Some((ip, prefix_length)) => InterfaceState::configured(ip, prefix_length, default_gateway(name)),
        None => InterfaceState::unconfigured(),
    })
}

/// Default route via `name` from the kernel routing table, if any.
fn default_gateway(name: &str) -> Option<Ipv4Addr> {
    let table = std::fs::read_to_string("/proc/net/route").ok()?;
    parse_default_gateway(&table, name)
}

fn parse_default_gateway(table: &str, name: &str) -> Option<Ipv4Addr> {
    table.lines().skip(1).find_map(|line| {
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() < 3 || cols[0] != name || cols[1] != "00000000" {
            return None;
        }
        let gw = u32::from_str_radix(cols[2], 16).ok()?;
        // /proc/net/route prints the address in host byte order.
        (gw != 0).then(|| Ipv4Addr::from(gw.to_ne_bytes()))
    })
}
