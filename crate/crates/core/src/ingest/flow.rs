use std::collections::HashMap;
use std::net::{IpAddr, SocketAddr};

use serde::{Deserialize, Serialize};

use super::packet::{DnsResponse, PacketRecord, TcpFlags, Transport};

/// Flows shorter than this are not studied.
pub const MIN_FLOW_PACKETS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "c2s")]
    ClientToServer,
    #[serde(rename = "s2c")]
    ServerToClient,
}

/// Oriented 5-tuple: the client is the sender of the first observed packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FlowKey {
    pub client: SocketAddr,
    pub server: SocketAddr,
    pub transport: Transport,
}

impl FlowKey {
    /// Key of the flow a packet would open.
    pub fn opened_by(p: &PacketRecord) -> Self {
        FlowKey {
            client: SocketAddr::new(p.src_addr, p.src_port),
            server: SocketAddr::new(p.dst_addr, p.dst_port),
            transport: p.transport,
        }
    }

    /// Direction of `p` relative to this key, or `None` if `p` belongs to
    /// another conversation.
    pub fn direction_of(&self, p: &PacketRecord) -> Option<Direction> {
        if p.transport != self.transport {
            return None;
        }
        let src = SocketAddr::new(p.src_addr, p.src_port);
        let dst = SocketAddr::new(p.dst_addr, p.dst_port);
        if src == self.client && dst == self.server {
            Some(Direction::ClientToServer)
        } else if src == self.server && dst == self.client {
            Some(Direction::ServerToClient)
        } else {
            None
        }
    }
}

/// Direction-insensitive conversation identity used for grouping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct ConversationKey {
    lo: SocketAddr,
    hi: SocketAddr,
    transport: Transport,
}

impl ConversationKey {
    fn of(p: &PacketRecord) -> Self {
        let a = SocketAddr::new(p.src_addr, p.src_port);
        let b = SocketAddr::new(p.dst_addr, p.dst_port);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        ConversationKey {
            lo,
            hi,
            transport: p.transport,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowPacket {
    /// Seconds since the flow's first packet.
    #[serde(rename = "t")]
    pub time: f64,
    /// IP datagram length in bytes.
    #[serde(rename = "s")]
    pub size: u32,
    #[serde(rename = "d")]
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flow {
    pub key: FlowKey,
    /// Absolute timestamp of the first packet.
    pub start_time: f64,
    pub packets: Vec<FlowPacket>,
    pub session_id: String,
    #[serde(default)]
    pub domain: Option<String>,
    #[serde(default)]
    pub label: Option<String>,
}

impl Flow {
    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssemblyMode {
    /// Keep only flows whose server address was resolved by an earlier DNS
    /// response; anything else predates the capture's application launch.
    DnsGated,
    /// Keep every flow (sessions captured after the application started).
    KeepAll,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssemblyOptions {
    pub mode: AssemblyMode,
    pub session_id: String,
    pub min_packets: usize,
    /// A UDP conversation silent for longer than this is closed; the next
    /// datagram opens a new flow.
    pub udp_idle_timeout: f64,
}

impl AssemblyOptions {
    pub fn new(mode: AssemblyMode, session_id: impl Into<String>) -> Self {
        AssemblyOptions {
            mode,
            session_id: session_id.into(),
            min_packets: MIN_FLOW_PACKETS,
            udp_idle_timeout: 60.0,
        }
    }
}

struct Builder {
    key: FlowKey,
    start: f64,
    last: f64,
    packets: Vec<FlowPacket>,
    fin_client: bool,
    fin_server: bool,
    closed: bool,
}

impl Builder {
    fn open(p: &PacketRecord) -> Self {
        Builder {
            key: FlowKey::opened_by(p),
            start: p.timestamp,
            last: p.timestamp,
            packets: Vec::new(),
            fin_client: false,
            fin_server: false,
            closed: false,
        }
    }

    fn accept(&mut self, p: &PacketRecord, dir: Direction) {
        if p.transport == Transport::Tcp && p.has_flag(TcpFlags::FIN) {
            let seen = match dir {
                Direction::ClientToServer => &mut self.fin_client,
                Direction::ServerToClient => &mut self.fin_server,
            };
            if *seen {
                // retransmitted FIN
                return;
            }
            *seen = true;
        }
        self.packets.push(FlowPacket {
            time: p.timestamp - self.start,
            size: p.ip_len,
            direction: dir,
        });
        self.last = p.timestamp;
        if p.transport == Transport::Tcp
            && ((self.fin_client && self.fin_server) || p.has_flag(TcpFlags::RST))
        {
            self.closed = true;
        }
    }
}

/// Groups time-ordered packets into flows.
///
/// TCP flows end at the packet carrying the second direction's FIN (or at
/// an RST); later packets of the conversation are discarded unless a fresh
/// SYN reopens it. Flows with fewer than `opts.min_packets` packets are
/// dropped, as are, in [`AssemblyMode::DnsGated`], flows whose server was
/// not resolved by a DNS response at or before the flow's first packet.
pub fn assemble_flows(
    packets: &[PacketRecord],
    dns: &[DnsResponse],
    opts: &AssemblyOptions,
) -> Vec<Flow> {
    let mut builders: Vec<Builder> = Vec::new();
    let mut active: HashMap<ConversationKey, usize> = HashMap::new();

    for p in packets {
        let ck = ConversationKey::of(p);
        if let Some(&idx) = active.get(&ck) {
            let b = &mut builders[idx];
            let reopen = if b.closed {
                p.transport == Transport::Tcp
                    && p.has_flag(TcpFlags::SYN)
                    && !p.has_flag(TcpFlags::ACK)
            } else {
                p.transport == Transport::Udp && p.timestamp - b.last > opts.udp_idle_timeout
            };
            if !reopen {
                if !b.closed {
                    let dir = b.key.direction_of(p).expect("conversation key matched");
                    b.accept(p, dir);
                }
                continue;
            }
        }
        let mut b = Builder::open(p);
        b.accept(p, Direction::ClientToServer);
        active.insert(ck, builders.len());
        builders.push(b);
    }

    let resolved = ResolvedIndex::new(dns);
    builders
        .into_iter()
        .filter(|b| b.packets.len() >= opts.min_packets)
        .filter(|b| match opts.mode {
            AssemblyMode::KeepAll => true,
            AssemblyMode::DnsGated => resolved.latest(b.key.server.ip(), b.start).is_some(),
        })
        .map(|b| Flow {
            key: b.key,
            start_time: b.start,
            packets: b.packets,
            session_id: opts.session_id.clone(),
            domain: None,
            label: None,
        })
        .collect()
}

/// Per-address list of (timestamp, response index), sorted by time.
struct ResolvedIndex<'a> {
    dns: &'a [DnsResponse],
    by_addr: HashMap<IpAddr, Vec<(f64, usize)>>,
}

impl<'a> ResolvedIndex<'a> {
    fn new(dns: &'a [DnsResponse]) -> Self {
        let mut by_addr: HashMap<IpAddr, Vec<(f64, usize)>> = HashMap::new();
        for (i, r) in dns.iter().enumerate() {
            for a in &r.addresses {
                by_addr.entry(*a).or_default().push((r.timestamp, i));
            }
        }
        for v in by_addr.values_mut() {
            // stable: equal timestamps keep file order, so the later record wins below
            v.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
        ResolvedIndex { dns, by_addr }
    }

    fn latest(&self, addr: IpAddr, at: f64) -> Option<&'a DnsResponse> {
        let list = self.by_addr.get(&addr)?;
        let n = list.partition_point(|(t, _)| *t <= at);
        n.checked_sub(1).map(|i| &self.dns[list[i].1])
    }
}

/// Sets each flow's domain to that of the most recent DNS response, at or
/// before the flow's first packet, that resolved the flow's server address.
pub fn associate_dns(mut flows: Vec<Flow>, dns: &[DnsResponse]) -> Vec<Flow> {
    let index = ResolvedIndex::new(dns);
    for f in &mut flows {
        f.domain = index
            .latest(f.key.server.ip(), f.start_time)
            .map(|r| r.domain.clone());
    }
    flows
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tcp(t: f64, from_client: bool, flags: TcpFlags) -> PacketRecord {
        let (c, s): (IpAddr, IpAddr) = ("10.0.0.2".parse().unwrap(), "1.2.3.4".parse().unwrap());
        let (src_addr, dst_addr, src_port, dst_port) = if from_client {
            (c, s, 50000, 443)
        } else {
            (s, c, 443, 50000)
        };
        PacketRecord {
            timestamp: t,
            src_addr,
            dst_addr,
            src_port,
            dst_port,
            transport: Transport::Tcp,
            ip_len: 100,
            payload_len: 60,
            tcp_flags: Some(flags | TcpFlags::ACK),
        }
    }

    fn udp(t: f64, sport: u16, from_client: bool) -> PacketRecord {
        let (c, s): (IpAddr, IpAddr) = ("10.0.0.2".parse().unwrap(), "8.8.4.4".parse().unwrap());
        let (src_addr, dst_addr, src_port, dst_port) = if from_client {
            (c, s, sport, 3478)
        } else {
            (s, c, 3478, sport)
        };
        PacketRecord {
            timestamp: t,
            src_addr,
            dst_addr,
            src_port,
            dst_port,
            transport: Transport::Udp,
            ip_len: 200,
            payload_len: 172,
            tcp_flags: None,
        }
    }

    fn keep_all() -> AssemblyOptions {
        AssemblyOptions::new(AssemblyMode::KeepAll, "s1")
    }

    #[test]
    fn fin_pair_truncates_after_second_fin() {
        let mut pkts: Vec<_> = (0..43)
            .map(|i| tcp(i as f64, i % 2 == 0, TcpFlags::empty()))
            .collect();
        pkts.push(tcp(43.0, true, TcpFlags::FIN));
        pkts.push(tcp(44.0, false, TcpFlags::FIN));
        for i in 45..50 {
            pkts.push(tcp(i as f64, true, TcpFlags::empty()));
        }
        let flows = assemble_flows(&pkts, &[], &keep_all());
        assert_eq!(flows.len(), 1);
        assert_eq!(flows[0].len(), 45);
    }

    #[test]
    fn short_flow_dropped() {
        let pkts: Vec<_> = (0..39).map(|i| tcp(i as f64, true, TcpFlags::empty())).collect();
        assert!(assemble_flows(&pkts, &[], &keep_all()).is_empty());
        let pkts: Vec<_> = (0..40).map(|i| tcp(i as f64, true, TcpFlags::empty())).collect();
        assert_eq!(assemble_flows(&pkts, &[], &keep_all()).len(), 1);
    }

    #[test]
    fn interleaved_udp_conversations_partition() {
        let mut pkts = Vec::new();
        for i in 0..40 {
            pkts.push(udp(i as f64, 6000, i % 3 != 0));
            pkts.push(udp(i as f64 + 0.5, 6001, i % 2 == 0));
        }
        let flows = assemble_flows(&pkts, &[], &keep_all());
        assert_eq!(flows.len(), 2);
        assert!(flows.iter().all(|f| f.len() == 40));
    }

    #[test]
    fn rst_terminates_flow() {
        let mut pkts: Vec<_> = (0..41)
            .map(|i| tcp(i as f64, true, TcpFlags::empty()))
            .collect();
        pkts.push(tcp(41.0, false, TcpFlags::RST));
        pkts.push(tcp(42.0, true, TcpFlags::empty()));
        let flows = assemble_flows(&pkts, &[], &keep_all());
        assert_eq!(flows[0].len(), 42);
    }

    #[test]
    fn udp_idle_timeout_splits() {
        let mut pkts: Vec<_> = (0..40).map(|i| udp(i as f64, 7000, true)).collect();
        pkts.extend((0..40).map(|i| udp(200.0 + i as f64, 7000, true)));
        let flows = assemble_flows(&pkts, &[], &keep_all());
        assert_eq!(flows.len(), 2);
        assert_eq!(flows[1].start_time, 200.0);
        assert_eq!(flows[1].packets[0].time, 0.0);
    }

    #[test]
    fn dns_gate_drops_lingering_flows() {
        let pkts: Vec<_> = (0..40)
            .map(|i| tcp(10.0 + i as f64, true, TcpFlags::empty()))
            .collect();
        let early = DnsResponse {
            timestamp: 5.0,
            domain: "a.example".into(),
            addresses: vec!["1.2.3.4".parse().unwrap()],
        };
        let late = DnsResponse {
            timestamp: 11.0,
            ..early.clone()
        };
        let gated = AssemblyOptions::new(AssemblyMode::DnsGated, "s");
        assert_eq!(assemble_flows(&pkts, &[early], &gated).len(), 1);
        assert!(assemble_flows(&pkts, &[late], &gated).is_empty());
        assert!(assemble_flows(&pkts, &[], &gated).is_empty());
    }

    #[test]
    fn server_direction_recorded() {
        let pkts: Vec<_> = (0..40)
            .map(|i| tcp(i as f64, i < 20, TcpFlags::empty()))
            .collect();
        let f = &assemble_flows(&pkts, &[], &keep_all())[0];
        assert_eq!(f.key.client.port(), 50000);
        assert_eq!(f.packets[19].direction, Direction::ClientToServer);
        assert_eq!(f.packets[20].direction, Direction::ServerToClient);
    }
}
