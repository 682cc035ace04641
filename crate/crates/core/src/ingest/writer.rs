//! Minimal classic-pcap writer for fixtures and round-trip checks.
//!
//! Frames are Ethernet II + IPv4/IPv6 + TCP/UDP with zero-filled payloads.
//! Headers are encoded by hand here, independently of the decoding path.

use std::net::{IpAddr, SocketAddr};

use super::packet::{TcpFlags, Transport};

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSpec {
    pub src: SocketAddr,
    pub dst: SocketAddr,
    pub transport: Transport,
    pub timestamp: f64,
    pub payload_len: usize,
    pub flags: TcpFlags,
}

impl FrameSpec {
    /// # Panics
    /// If `src`/`dst` are not socket-address literals.
    pub fn tcp(src: &str, dst: &str, timestamp: f64, payload_len: usize, flags: TcpFlags) -> Self {
        FrameSpec {
            src: src.parse().expect("socket address"),
            dst: dst.parse().expect("socket address"),
            transport: Transport::Tcp,
            timestamp,
            payload_len,
            flags,
        }
    }

    /// # Panics
    /// If `src`/`dst` are not socket-address literals.
    pub fn udp(src: &str, dst: &str, timestamp: f64, payload_len: usize) -> Self {
        FrameSpec {
            src: src.parse().expect("socket address"),
            dst: dst.parse().expect("socket address"),
            transport: Transport::Udp,
            timestamp,
            payload_len,
            flags: TcpFlags::empty(),
        }
    }

    /// IP datagram length this frame will declare.
    pub fn ip_len(&self) -> usize {
        let l4 = match self.transport {
            Transport::Tcp => 20,
            Transport::Udp => 8,
        };
        let l3 = if self.src.is_ipv4() { 20 } else { 40 };
        l3 + l4 + self.payload_len
    }
}

#[derive(Debug, Clone)]
pub struct CaptureWriter {
    big_endian: bool,
    nanos: bool,
    records: Vec<u8>,
}

impl Default for CaptureWriter {
    fn default() -> Self {
        Self::new()
    }
}

impl CaptureWriter {
    /// Little-endian, microsecond-resolution capture with Ethernet framing.
    pub fn new() -> Self {
        CaptureWriter {
            big_endian: false,
            nanos: false,
            records: Vec::new(),
        }
    }

    pub fn big_endian(mut self) -> Self {
        self.big_endian = true;
        self
    }

    pub fn nanosecond(mut self) -> Self {
        self.nanos = true;
        self
    }

    fn u16(&self, v: u16) -> [u8; 2] {
        if self.big_endian {
            v.to_be_bytes()
        } else {
            v.to_le_bytes()
        }
    }

    fn u32(&self, v: u32) -> [u8; 4] {
        if self.big_endian {
            v.to_be_bytes()
        } else {
            v.to_le_bytes()
        }
    }

    pub fn push(&mut self, frame: &FrameSpec) {
        let bytes = encode_frame(frame, &[]);
        self.push_raw(frame.timestamp, &bytes);
    }

    /// Appends a UDP DNS response from `server:53` to `client:33333`
    /// answering `domain` with the given addresses.
    pub fn push_dns_response(
        &mut self,
        timestamp: f64,
        server: &str,
        client: &str,
        domain: &str,
        addresses: &[IpAddr],
    ) {
        let server: IpAddr = server.parse().expect("ip address");
        let client: IpAddr = client.parse().expect("ip address");
        let payload = encode_dns_response(domain, addresses);
        let frame = FrameSpec {
            src: SocketAddr::new(server, 53),
            dst: SocketAddr::new(client, 33333),
            transport: Transport::Udp,
            timestamp,
            payload_len: payload.len(),
            flags: TcpFlags::empty(),
        };
        let bytes = encode_frame(&frame, &payload);
        self.push_raw(timestamp, &bytes);
    }

    pub fn push_raw(&mut self, timestamp: f64, frame: &[u8]) {
        let secs = timestamp.floor();
        let scale = if self.nanos { 1e9 } else { 1e6 };
        let frac = ((timestamp - secs) * scale).round() as u32;
        let mut rec = Vec::with_capacity(16 + frame.len());
        rec.extend(self.u32(secs as u32));
        rec.extend(self.u32(frac));
        rec.extend(self.u32(frame.len() as u32));
        rec.extend(self.u32(frame.len() as u32));
        rec.extend_from_slice(frame);
        self.records.extend(rec);
    }

    pub fn finish(&self) -> Vec<u8> {
        let magic: u32 = if self.nanos { 0xa1b2_3c4d } else { 0xa1b2_c3d4 };
        let mut out = Vec::with_capacity(24 + self.records.len());
        out.extend(self.u32(magic));
        out.extend(self.u16(2));
        out.extend(self.u16(4));
        out.extend(self.u32(0));
        out.extend(self.u32(0));
        out.extend(self.u32(65535));
        out.extend(self.u32(1)); // LINKTYPE_ETHERNET
        out.extend_from_slice(&self.records);
        out
    }

    pub fn write_to(&self, path: impl AsRef<std::path::Path>) -> std::io::Result<()> {
        std::fs::write(path, self.finish())
    }
}

fn checksum(data: &[u8]) -> u16 {
    let mut sum: u32 = 0;
    for chunk in data.chunks(2) {
        let word = if chunk.len() == 2 {
            u16::from_be_bytes([chunk[0], chunk[1]])
        } else {
            u16::from_be_bytes([chunk[0], 0])
        };
        sum += word as u32;
    }
    while sum >> 16 != 0 {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

fn encode_frame(f: &FrameSpec, payload: &[u8]) -> Vec<u8> {
    let mut l4 = Vec::new();
    match f.transport {
        Transport::Tcp => {
            l4.extend(f.src.port().to_be_bytes());
            l4.extend(f.dst.port().to_be_bytes());
            l4.extend(1u32.to_be_bytes()); // seq
            l4.extend(0u32.to_be_bytes()); // ack
            l4.push(5 << 4);
            l4.push(f.flags.bits());
            l4.extend(65535u16.to_be_bytes());
            l4.extend([0, 0, 0, 0]); // checksum, urgent pointer
        }
        Transport::Udp => {
            l4.extend(f.src.port().to_be_bytes());
            l4.extend(f.dst.port().to_be_bytes());
            l4.extend(((8 + f.payload_len) as u16).to_be_bytes());
            l4.extend([0, 0]);
        }
    }
    if payload.is_empty() {
        l4.resize(l4.len() + f.payload_len, 0);
    } else {
        l4.extend_from_slice(payload);
    }
    let proto = match f.transport {
        Transport::Tcp => 6u8,
        Transport::Udp => 17u8,
    };

    let mut frame = Vec::new();
    frame.extend([0x02, 0, 0, 0, 0, 0x01]);
    frame.extend([0x02, 0, 0, 0, 0, 0x02]);
    match (f.src.ip(), f.dst.ip()) {
        (IpAddr::V4(s), IpAddr::V4(d)) => {
            frame.extend(0x0800u16.to_be_bytes());
            let mut ip = Vec::with_capacity(20);
            ip.push(0x45);
            ip.push(0);
            ip.extend(((20 + l4.len()) as u16).to_be_bytes());
            ip.extend([0, 0, 0x40, 0]); // id, DF
            ip.push(64);
            ip.push(proto);
            ip.extend([0, 0]);
            ip.extend(s.octets());
            ip.extend(d.octets());
            let c = checksum(&ip);
            ip[10..12].copy_from_slice(&c.to_be_bytes());
            frame.extend(ip);
        }
        (IpAddr::V6(s), IpAddr::V6(d)) => {
            frame.extend(0x86DDu16.to_be_bytes());
            frame.extend([0x60, 0, 0, 0]);
            frame.extend((l4.len() as u16).to_be_bytes());
            frame.push(proto);
            frame.push(64);
            frame.extend(s.octets());
            frame.extend(d.octets());
        }
        _ => panic!("mixed address families in one frame"),
    }
    frame.extend(l4);
    frame
}

fn encode_dns_response(domain: &str, addresses: &[IpAddr]) -> Vec<u8> {
    let mut p = Vec::new();
    p.extend(0x1234u16.to_be_bytes());
    p.extend(0x8180u16.to_be_bytes());
    p.extend(1u16.to_be_bytes());
    p.extend((addresses.len() as u16).to_be_bytes());
    p.extend([0, 0, 0, 0]);
    for label in domain.trim_end_matches('.').split('.') {
        p.push(label.len() as u8);
        p.extend(label.as_bytes());
    }
    p.push(0);
    p.extend(1u16.to_be_bytes());
    p.extend(1u16.to_be_bytes());
    for addr in addresses {
        p.extend(0xC00Cu16.to_be_bytes());
        match addr {
            IpAddr::V4(a) => {
                p.extend(1u16.to_be_bytes());
                p.extend(1u16.to_be_bytes());
                p.extend(60u32.to_be_bytes());
                p.extend(4u16.to_be_bytes());
                p.extend(a.octets());
            }
            IpAddr::V6(a) => {
                p.extend(28u16.to_be_bytes());
                p.extend(1u16.to_be_bytes());
                p.extend(60u32.to_be_bytes());
                p.extend(16u16.to_be_bytes());
                p.extend(a.octets());
            }
        }
    }
    p
}
