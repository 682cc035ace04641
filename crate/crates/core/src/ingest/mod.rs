//! Capture parsing, flow assembly, DNS association, labeling and
//! session-level splitting.

mod capture;
mod flow;
mod jsonl;
mod labels;
mod packet;
mod split;
pub mod writer;

pub use capture::{parse_capture, read_capture, Capture};
pub use flow::{
    assemble_flows, associate_dns, AssemblyMode, AssemblyOptions, Direction, Flow, FlowKey,
    FlowPacket, MIN_FLOW_PACKETS,
};
pub use jsonl::{read_flows, write_flows, FLOW_SCHEMA_VERSION};
pub use labels::{apply_labels, DomainRule, LabelRuleSet, SessionRule};
pub use packet::{DnsResponse, PacketRecord, TcpFlags, Transport};
pub use split::{split_sessions, Split};
