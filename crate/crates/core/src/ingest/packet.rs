use std::net::IpAddr;

use bitflags::bitflags;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    Tcp,
    Udp,
}

bitflags! {
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
    pub struct TcpFlags: u8 {
        const FIN = 0x01;
        const SYN = 0x02;
        const RST = 0x04;
        const PSH = 0x08;
        const ACK = 0x10;
        const URG = 0x20;
    }
}

/// One TCP or UDP packet as seen in a capture.
#[derive(Debug, Clone, PartialEq)]
pub struct PacketRecord {
    /// Seconds since the capture clock's epoch.
    pub timestamp: f64,
    pub src_addr: IpAddr,
    pub dst_addr: IpAddr,
    pub src_port: u16,
    pub dst_port: u16,
    pub transport: Transport,
    /// Length of the IP datagram (header included) as declared on the wire.
    /// This is the per-packet size used by flow features.
    pub ip_len: u32,
    /// Transport payload bytes, excluding the TCP/UDP header.
    pub payload_len: u32,
    /// Present iff `transport == Tcp`.
    pub tcp_flags: Option<TcpFlags>,
}

impl PacketRecord {
    pub fn has_flag(&self, flag: TcpFlags) -> bool {
        self.tcp_flags.is_some_and(|f| f.contains(flag))
    }
}

/// A DNS answer observed in the capture: the queried name and every A/AAAA
/// address in the answer section. CNAME targets are not followed; the
/// addresses they resolve to are attributed to the queried name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnsResponse {
    pub timestamp: f64,
    pub domain: String,
    pub addresses: Vec<IpAddr>,
}
