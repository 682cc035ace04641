use crate::ingest::{Direction, Flow, FlowPacket};

/// Rows in a time-series feature (first packets of a flow).
pub const TS_LEN: usize = 40;
/// Entries in a size-sequence feature.
pub const SIZE_SEQ_LEN: usize = 256;

/// 40 x 2 matrix: per packet, seconds since flow start and the packet size,
/// negated for server-to-client packets. Rows past the flow's end are zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeSeriesFeature(pub [[f64; 2]; TS_LEN]);

impl Default for TimeSeriesFeature {
    fn default() -> Self {
        TimeSeriesFeature([[0.0; 2]; TS_LEN])
    }
}

impl TimeSeriesFeature {
    pub fn rows(&self) -> &[[f64; 2]; TS_LEN] {
        &self.0
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.iter().flatten().copied().collect()
    }

    /// Inverse of [`TimeSeriesFeature::to_vec`]; `None` unless `v.len() == 80`.
    pub fn from_slice(v: &[f64]) -> Option<Self> {
        if v.len() != TS_LEN * 2 {
            return None;
        }
        let mut out = Self::default();
        for (row, pair) in out.0.iter_mut().zip(v.chunks_exact(2)) {
            *row = [pair[0], pair[1]];
        }
        Some(out)
    }
}

/// First 256 packet sizes of a flow, zero padded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizeSequenceFeature(pub [u32; SIZE_SEQ_LEN]);

impl SizeSequenceFeature {
    pub fn to_vec(&self) -> Vec<f64> {
        self.0.iter().map(|&s| s as f64).collect()
    }
}

pub(crate) fn packet_row(p: &FlowPacket) -> [f64; 2] {
    let size = p.size as f64;
    let signed = match p.direction {
        Direction::ClientToServer => size,
        Direction::ServerToClient => -size,
    };
    [p.time, signed]
}

pub fn extract_timeseries(flow: &Flow) -> TimeSeriesFeature {
    let mut out = TimeSeriesFeature::default();
    for (row, p) in out.0.iter_mut().zip(&flow.packets) {
        *row = packet_row(p);
    }
    out
}

pub fn extract_size_sequence(flow: &Flow) -> SizeSequenceFeature {
    let mut out = SizeSequenceFeature([0; SIZE_SEQ_LEN]);
    for (slot, p) in out.0.iter_mut().zip(&flow.packets) {
        *slot = p.size;
    }
    out
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::ingest::{FlowKey, Transport};

    pub(crate) fn flow_with(n: usize, server_rows: std::ops::Range<usize>) -> Flow {
        Flow {
            key: FlowKey {
                client: "10.0.0.1:1000".parse().unwrap(),
                server: "10.0.0.2:443".parse().unwrap(),
                transport: Transport::Tcp,
            },
            start_time: 100.0,
            packets: (0..n)
                .map(|i| FlowPacket {
                    time: i as f64,
                    size: 100 + i as u32,
                    direction: if server_rows.contains(&i) {
                        Direction::ServerToClient
                    } else {
                        Direction::ClientToServer
                    },
                })
                .collect(),
            session_id: "s".into(),
            domain: None,
            label: Some("A".into()),
        }
    }

    #[test]
    fn forty_client_packets() {
        let mut f = flow_with(40, 0..0);
        for p in &mut f.packets {
            p.size = 100;
        }
        let ts = extract_timeseries(&f);
        for (i, row) in ts.rows().iter().enumerate() {
            assert_eq!(*row, [i as f64, 100.0]);
        }
    }

    #[test]
    fn server_rows_negated() {
        let ts = extract_timeseries(&flow_with(40, 10..20));
        for (i, row) in ts.rows().iter().enumerate() {
            let size = 100.0 + i as f64;
            let expect = if (10..20).contains(&i) { -size } else { size };
            assert_eq!(row[1], expect);
        }
    }

    #[test]
    fn long_flow_keeps_first_forty() {
        let ts = extract_timeseries(&flow_with(45, 0..0));
        assert_eq!(ts.rows()[39], [39.0, 139.0]);
    }

    #[test]
    fn size_sequence_padding_and_truncation() {
        let s = extract_size_sequence(&flow_with(40, 0..5));
        assert_eq!(s.0[39], 139);
        assert!(s.0[40..].iter().all(|&v| v == 0));
        let s = extract_size_sequence(&flow_with(300, 0..0));
        assert_eq!(s.0[255], 355);
        let s = extract_size_sequence(&flow_with(0, 0..0));
        assert!(s.0.iter().all(|&v| v == 0));
    }

    #[test]
    fn vec_round_trip() {
        let ts = extract_timeseries(&flow_with(40, 3..9));
        assert_eq!(TimeSeriesFeature::from_slice(&ts.to_vec()), Some(ts));
        assert!(TimeSeriesFeature::from_slice(&[0.0; 79]).is_none());
    }
}
