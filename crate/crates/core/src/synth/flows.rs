use std::collections::BTreeMap;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::classes::BACKGROUND;
use crate::ingest::{Direction, Flow, FlowKey, FlowPacket, Split, Transport, MIN_FLOW_PACKETS};
use crate::{Error, Result};

/// Packet sizes are truncated to this range (bytes).
pub const SIZE_MIN: f64 = 40.0;
pub const SIZE_MAX: f64 = 1500.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeDist {
    pub mean: f64,
    pub sd: f64,
}

/// Generative parameters of one kind of flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProfile {
    pub name: String,
    pub transport: Transport,
    /// Client-to-server packet sizes.
    pub c2s: SizeDist,
    /// Server-to-client packet sizes.
    pub s2c: SizeDist,
    /// Mean of the exponential inter-arrival time, in seconds.
    pub inter_arrival: f64,
    /// Probability that a packet travels opposite to its predecessor.
    pub switch_prob: f64,
    /// Flow length is uniform on `min_len..=max_len` packets.
    pub min_len: usize,
    pub max_len: usize,
}

impl ClassProfile {
    fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("profile `{}`: {what}", self.name)));
        if !(self.c2s.sd > 0.0 && self.s2c.sd > 0.0) {
            return bad("size standard deviations must be > 0");
        }
        if !(self.inter_arrival > 0.0) {
            return bad("mean inter-arrival time must be > 0");
        }
        if !(0.0..=1.0).contains(&self.switch_prob) {
            return bad("switch probability must be in [0, 1]");
        }
        if self.min_len < MIN_FLOW_PACKETS || self.max_len < self.min_len {
            return bad("flow lengths must satisfy 40 <= min_len <= max_len");
        }
        Ok(())
    }
}

/// The background class: several sub-profiles for training sessions and
/// further held-out ones that only appear in test sessions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundProfile {
    pub seen: Vec<ClassProfile>,
    pub held_out: Vec<ClassProfile>,
    /// Share of background flows in test sessions drawn from `held_out`.
    pub held_out_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Application classes (background excluded).
    pub classes: Vec<ClassProfile>,
    pub background: BackgroundProfile,
    pub sessions_per_class: usize,
    pub flows_per_session: usize,
    /// The last this-many sessions of every class are test sessions.
    pub test_sessions_per_class: usize,
    /// Share of flows in application sessions that are background traffic.
    pub background_share: f64,
}

fn profile(
    name: &str,
    transport: Transport,
    c2s: (f64, f64),
    s2c: (f64, f64),
    inter_arrival: f64,
    switch_prob: f64,
) -> ClassProfile {
    ClassProfile {
        name: name.into(),
        transport,
        c2s: SizeDist { mean: c2s.0, sd: c2s.1 },
        s2c: SizeDist { mean: s2c.0, sd: s2c.1 },
        inter_arrival,
        switch_prob,
        min_len: 40,
        max_len: 120,
    }
}

impl Default for SynthConfig {
    /// Nine application classes plus a heterogeneous background, 8 sessions
    /// of 20 flows each per class, 2 test sessions per class. A quarter of
    /// the flows in application sessions are background.
    fn default() -> Self {
        use Transport::{Tcp, Udp};
        SynthConfig {
            classes: vec![
                profile("WebBrowsing", Tcp, (320.0, 120.0), (1150.0, 300.0), 0.02, 0.3),
                profile("SocialMedia", Tcp, (260.0, 100.0), (850.0, 300.0), 0.06, 0.45),
                profile("Video", Tcp, (110.0, 30.0), (1380.0, 90.0), 0.004, 0.12),
                profile("Email", Tcp, (620.0, 200.0), (420.0, 150.0), 0.12, 0.6),
                profile("VoIP", Udp, (200.0, 20.0), (200.0, 20.0), 0.02, 0.5),
                profile("Chat", Tcp, (160.0, 50.0), (170.0, 60.0), 0.35, 0.75),
                profile("Gaming", Udp, (90.0, 25.0), (130.0, 40.0), 0.03, 0.5),
                profile("OnlineDocs", Tcp, (760.0, 220.0), (640.0, 220.0), 0.08, 0.45),
                profile("Azure", Tcp, (1050.0, 250.0), (300.0, 120.0), 0.04, 0.35),
            ],
            background: BackgroundProfile {
                seen: vec![
                    profile("analytics", Tcp, (420.0, 150.0), (260.0, 100.0), 0.15, 0.5),
                    profile("ads", Tcp, (360.0, 120.0), (980.0, 250.0), 0.06, 0.35),
                    profile("telemetry", Tcp, (220.0, 80.0), (110.0, 40.0), 0.5, 0.6),
                ],
                held_out: vec![
                    profile("cdn-push", Tcp, (60.0, 10.0), (1480.0, 15.0), 0.0008, 0.03),
                    profile("keepalive", Udp, (1400.0, 40.0), (1400.0, 40.0), 2.0, 0.95),
                ],
                held_out_share: 0.5,
            },
            sessions_per_class: 8,
            flows_per_session: 20,
            test_sessions_per_class: 2,
            background_share: 0.25,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Config("at least one application class is required".into()));
        }
        for p in self.classes.iter().chain(&self.background.seen).chain(&self.background.held_out) {
            p.validate()?;
        }
        if self.background.seen.is_empty() {
            return Err(Error::Config("background needs at least one seen sub-profile".into()));
        }
        let shares = [self.background.held_out_share, self.background_share];
        if shares.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::Config("shares must be in [0, 1]".into()));
        }
        if self.background.held_out_share > 0.0 && self.background.held_out.is_empty() {
            return Err(Error::Config("held-out share set but no held-out sub-profiles".into()));
        }
        if self.test_sessions_per_class > self.sessions_per_class {
            return Err(Error::Config("more test sessions than sessions".into()));
        }
        let mut names: Vec<&str> = self.classes.iter().map(|p| p.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) || names.contains(&BACKGROUND) {
            return Err(Error::Config("application class names must be unique and not `Background`".into()));
        }
        Ok(())
    }

    /// Class names with `Background` last.
    pub fn class_names(&self) -> Vec<String> {
        let mut v: Vec<String> = self.classes.iter().map(|p| p.name.clone()).collect();
        v.push(BACKGROUND.into());
        v
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: SynthConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Generated flows and their session split.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub flows: Vec<Flow>,
    pub split: BTreeMap<String, Split>,
}

fn truncated_normal(rng: &mut ChaCha8Rng, d: SizeDist) -> f64 {
    let n = Normal::new(d.mean, d.sd).expect("validated sd");
    for _ in 0..1000 {
        let v = n.sample(rng);
        if (SIZE_MIN..=SIZE_MAX).contains(&v) {
            return v;
        }
    }
    d.mean.clamp(SIZE_MIN, SIZE_MAX)
}

fn generate_flow(
    rng: &mut ChaCha8Rng,
    p: &ClassProfile,
    key: FlowKey,
    start_time: f64,
    session_id: &str,
    label: &str,
) -> Flow {
    let len = rng.gen_range(p.min_len..=p.max_len);
    let iat = Exp::new(1.0 / p.inter_arrival).expect("validated inter-arrival");
    let mut packets = Vec::with_capacity(len);
    let mut t = 0.0;
    let mut dir = Direction::ClientToServer;
    for i in 0..len {
        if i > 0 {
            t += iat.sample(rng);
            if rng.gen::<f64>() < p.switch_prob {
                dir = match dir {
                    Direction::ClientToServer => Direction::ServerToClient,
                    Direction::ServerToClient => Direction::ClientToServer,
                };
            }
        }
        let d = match dir {
            Direction::ClientToServer => p.c2s,
            Direction::ServerToClient => p.s2c,
        };
        packets.push(FlowPacket {
            time: t,
            size: truncated_normal(rng, d).round() as u32,
            direction: dir,
        });
    }
    let domain = if label == BACKGROUND {
        format!("{}.tracker.example", p.name.to_ascii_lowercase())
    } else {
        format!("{}.example", p.name.to_ascii_lowercase())
    };
    Flow {
        key,
        start_time,
        packets,
        session_id: session_id.to_string(),
        domain: Some(domain),
        label: Some(label.to_string()),
    }
}

/// Generates `sessions_per_class` sessions of `flows_per_session` flows for
/// every application class and for the background class. Deterministic in
/// `seed`.
pub fn generate_flows(cfg: &SynthConfig, seed: u64) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flows = Vec::new();
    let mut split = BTreeMap::new();
    let n_app = cfg.classes.len();
    for class in 0..=n_app {
        let label = if class == n_app {
            BACKGROUND
        } else {
            cfg.classes[class].name.as_str()
        };
        for s in 0..cfg.sessions_per_class {
            let session_id = format!("{label}-s{s:02}");
            let test = s >= cfg.sessions_per_class - cfg.test_sessions_per_class;
            split.insert(session_id.clone(), if test { Split::Test } else { Split::Train });
            let client_ip = IpAddr::V4(Ipv4Addr::new(10, class as u8, s as u8, 2));
            let mut t0 = 1_700_000_000.0 + (class * 1000 + s * 10) as f64;
            for f in 0..cfg.flows_per_session {
                let is_bg = class == n_app || rng.gen::<f64>() < cfg.background_share;
                let (profile, flow_label, sub) = if is_bg {
                    let held = test && rng.gen::<f64>() < cfg.background.held_out_share;
                    let pool = if held { &cfg.background.held_out } else { &cfg.background.seen };
                    let i = rng.gen_range(0..pool.len());
                    (&pool[i], BACKGROUND, 100 + i + if held { 50 } else { 0 })
                } else {
                    (&cfg.classes[class], label, class)
                };
                let server_ip = IpAddr::V4(Ipv4Addr::new(198, 18, sub as u8, (f % 250 + 1) as u8));
                let key = FlowKey {
                    client: SocketAddr::new(client_ip, 40000 + f as u16),
                    server: SocketAddr::new(server_ip, 443),
                    transport: profile.transport,
                };
                let flow = generate_flow(&mut rng, profile, key, t0, &session_id, flow_label);
                t0 += flow.packets.last().map_or(0.0, |p| p.time) + 0.5;
                flows.push(flow);
            }
        }
    }
    Ok(SynthCorpus { flows, split })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_corpus_counts_and_determinism() {
        let cfg = SynthConfig::default();
        let a = generate_flows(&cfg, 7).unwrap();
        let b = generate_flows(&cfg, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.flows.len(), 10 * 8 * 20);
        assert_eq!(a.split.len(), 80);
        assert_eq!(a.split.values().filter(|s| **s == Split::Test).count(), 20);
        assert!(a.flows.iter().all(|f| f.len() >= 40));
        assert_ne!(a, generate_flows(&cfg, 8).unwrap());
    }

    #[test]
    fn held_out_background_only_in_test_sessions() {
        let c = generate_flows(&SynthConfig::default(), 1).unwrap();
        for f in &c.flows {
            let held = f.domain.as_deref().is_some_and(|d| d.starts_with("cdn-push") || d.starts_with("keepalive"));
            if held {
                assert_eq!(c.split[&f.session_id], Split::Test);
            }
        }
        assert!(c.flows.iter().any(|f| f.domain.as_deref() == Some("cdn-push.tracker.example")));
    }

    #[test]
    fn invalid_profile_is_rejected() {
        let mut cfg = SynthConfig::default();
        cfg.classes[0].min_len = 39;
        assert!(generate_flows(&cfg, 0).is_err());
    }
}
