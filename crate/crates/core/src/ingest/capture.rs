//! Classic libpcap capture reading.

use std::net::IpAddr;
use std::path::Path;

use etherparse::{NetSlice, SlicedPacket, TransportSlice};
use log::{debug, warn};
use pcap_parser::{parse_pcap_frame, parse_pcap_frame_be, parse_pcap_header, Linktype};

use super::packet::{DnsResponse, PacketRecord, TcpFlags, Transport};
use crate::{Error, Result};

const MDNS_PORT: u16 = 5353;
const DNS_PORT: u16 = 53;

/// Everything extracted from one capture file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Capture {
    /// TCP/UDP packets in file order, mDNS excluded.
    pub packets: Vec<PacketRecord>,
    /// DNS responses carried over UDP port 53, in file order.
    pub dns: Vec<DnsResponse>,
}

/// Reads the packet records of a capture file.
pub fn parse_capture(path: impl AsRef<Path>) -> Result<Vec<PacketRecord>> {
    read_capture(path).map(|c| c.packets)
}

/// Reads packets and DNS responses from a capture file.
pub fn read_capture(path: impl AsRef<Path>) -> Result<Capture> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_capture_bytes(&bytes)
}

pub(crate) fn parse_capture_bytes(bytes: &[u8]) -> Result<Capture> {
    let (mut rest, header) = parse_pcap_header(bytes)
        .map_err(|e| Error::Capture(format!("bad pcap file header: {e:?}")))?;
    if header.is_modified_format() {
        return Err(Error::Capture("modified pcap format is not supported".into()));
    }
    let big_endian = header.is_bigendian();
    let frac_scale = if header.is_nanosecond_precision() {
        1e-9
    } else {
        1e-6
    };
    let link = header.network;

    let mut capture = Capture::default();
    let mut index = 0usize;
    while !rest.is_empty() {
        let parsed = if big_endian {
            parse_pcap_frame_be(rest)
        } else {
            parse_pcap_frame(rest)
        };
        let (next, block) = match parsed {
            Ok(ok) => ok,
            Err(e) => {
                warn!("truncated or malformed record #{index} at end of capture ({e:?}); stopping");
                break;
            }
        };
        rest = next;
        let timestamp = block.ts_sec as f64 + block.ts_usec as f64 * frac_scale;
        decode_frame(link, block.data, timestamp, index, &mut capture);
        index += 1;
    }
    Ok(capture)
}

fn slice_frame(link: Linktype, data: &[u8]) -> Option<SlicedPacket<'_>> {
    let res = match link {
        Linktype::ETHERNET => SlicedPacket::from_ethernet(data),
        Linktype::RAW | Linktype::IPV4 | Linktype::IPV6 => SlicedPacket::from_ip(data),
        Linktype::LINUX_SLL => SlicedPacket::from_linux_sll(data),
        // BSD loopback: 4-byte address family, then the IP packet.
        Linktype::NULL | Linktype::LOOP if data.len() > 4 => SlicedPacket::from_ip(&data[4..]),
        other => {
            debug!("unsupported link type {other:?}");
            return None;
        }
    };
    res.map_err(|e| debug!("skipping undecodable frame: {e}")).ok()
}

fn decode_frame(link: Linktype, data: &[u8], timestamp: f64, index: usize, out: &mut Capture) {
    let Some(sliced) = slice_frame(link, data) else {
        return;
    };
    let (src_addr, dst_addr, ip_len, l4_len): (IpAddr, IpAddr, u32, u32) = match &sliced.net {
        Some(NetSlice::Ipv4(v4)) => {
            let h = v4.header();
            let total = h.total_len() as u32;
            let hdr = h.slice().len() as u32;
            (
                h.source_addr().into(),
                h.destination_addr().into(),
                total,
                total.saturating_sub(hdr),
            )
        }
        Some(NetSlice::Ipv6(v6)) => {
            let h = v6.header();
            let payload = h.payload_length() as u32;
            let ext = v6.extensions().slice().len() as u32;
            (
                h.source_addr().into(),
                h.destination_addr().into(),
                payload + 40,
                payload.saturating_sub(ext),
            )
        }
        _ => return,
    };

    let record = match &sliced.transport {
        Some(TransportSlice::Tcp(tcp)) => {
            let mut flags = TcpFlags::empty();
            flags.set(TcpFlags::FIN, tcp.fin());
            flags.set(TcpFlags::SYN, tcp.syn());
            flags.set(TcpFlags::RST, tcp.rst());
            flags.set(TcpFlags::PSH, tcp.psh());
            flags.set(TcpFlags::ACK, tcp.ack());
            flags.set(TcpFlags::URG, tcp.urg());
            PacketRecord {
                timestamp,
                src_addr,
                dst_addr,
                src_port: tcp.source_port(),
                dst_port: tcp.destination_port(),
                transport: Transport::Tcp,
                ip_len,
                payload_len: l4_len.saturating_sub(tcp.data_offset() as u32 * 4),
                tcp_flags: Some(flags),
            }
        }
        Some(TransportSlice::Udp(udp)) => {
            let rec = PacketRecord {
                timestamp,
                src_addr,
                dst_addr,
                src_port: udp.source_port(),
                dst_port: udp.destination_port(),
                transport: Transport::Udp,
                ip_len,
                payload_len: l4_len.saturating_sub(8),
                tcp_flags: None,
            };
            if rec.src_port == MDNS_PORT || rec.dst_port == MDNS_PORT {
                return;
            }
            if rec.src_port == DNS_PORT {
                if let Some(resp) = decode_dns_response(udp.payload(), timestamp) {
                    out.dns.push(resp);
                } else {
                    debug!("record #{index}: port-53 datagram is not a usable DNS response");
                }
            }
            rec
        }
        _ => return,
    };
    out.packets.push(record);
}

fn decode_dns_response(payload: &[u8], timestamp: f64) -> Option<DnsResponse> {
    use dns_parser::{Packet, RData, ResponseCode};

    let pkt = Packet::parse(payload).ok()?;
    if pkt.header.query || pkt.header.response_code != ResponseCode::NoError {
        return None;
    }
    let domain = pkt.questions.first()?.qname.to_string().to_ascii_lowercase();
    let addresses: Vec<IpAddr> = pkt
        .answers
        .iter()
        .filter_map(|rr| match rr.data {
            RData::A(a) => Some(IpAddr::V4(a.0)),
            RData::AAAA(a) => Some(IpAddr::V6(a.0)),
            _ => None,
        })
        .collect();
    if addresses.is_empty() {
        return None;
    }
    Some(DnsResponse {
        timestamp,
        domain,
        addresses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::writer::{CaptureWriter, FrameSpec};

    #[test]
    fn empty_capture_has_no_records() {
        let w = CaptureWriter::new();
        let cap = parse_capture_bytes(&w.finish()).unwrap();
        assert!(cap.packets.is_empty());
        assert!(cap.dns.is_empty());
    }

    #[test]
    fn mdns_is_excluded() {
        let mut w = CaptureWriter::new();
        w.push(&FrameSpec::udp("10.0.0.2:5353", "224.0.0.251:5353", 1.0, 40));
        let cap = parse_capture_bytes(&w.finish()).unwrap();
        assert!(cap.packets.is_empty());
    }

    #[test]
    fn garbage_header_is_fatal() {
        let err = parse_capture_bytes(b"not a pcap file at all, sorry").unwrap_err();
        assert!(matches!(err, Error::Capture(_)));
    }

    #[test]
    fn truncated_trailer_keeps_complete_records() {
        let mut w = CaptureWriter::new();
        w.push(&FrameSpec::udp("10.0.0.2:4000", "10.0.0.3:443", 1.0, 100));
        w.push(&FrameSpec::udp("10.0.0.2:4000", "10.0.0.3:443", 2.0, 100));
        let mut bytes = w.finish();
        bytes.truncate(bytes.len() - 10);
        let cap = parse_capture_bytes(&bytes).unwrap();
        assert_eq!(cap.packets.len(), 1);
    }

    #[test]
    fn dns_response_is_extracted() {
        let mut w = CaptureWriter::new();
        w.push_dns_response(
            0.5,
            "10.0.0.1",
            "10.0.0.2",
            "Video.Example.com",
            &["93.184.216.34".parse().unwrap()],
        );
        let cap = parse_capture_bytes(&w.finish()).unwrap();
        assert_eq!(cap.dns.len(), 1);
        assert_eq!(cap.dns[0].domain, "video.example.com");
        assert_eq!(cap.dns[0].addresses, vec!["93.184.216.34".parse::<IpAddr>().unwrap()]);
        assert_eq!(cap.packets.len(), 1);
    }
}
