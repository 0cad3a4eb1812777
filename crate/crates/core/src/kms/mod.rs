//! Key management: global key minting, hop-by-hop one-time-pad relay across
//! trusted nodes, and the per-node key inventories behind the key delivery
//! API.

mod envelope;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::mpsc;

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;
use zeroize::{Zeroize, Zeroizing};

pub use envelope::{
    otp_decapsulate, otp_encapsulate, read_envelope, write_envelope, xor_into, KeyEnvelope, WireError,
    ENVELOPE_MAGIC,
};

use crate::link_sim::{LinkError, LinkStatus, PadRef, QkdLink};
use crate::seed::derive_seed;
use crate::telemetry::{Alarm, AlarmThresholds, EventKind, TelemetryEvent};
use crate::topology::{LinkId, NodeId, Route, RouteError, Topology};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KmsError {
    #[error("key size {bits} bits rejected")]
    SizeRejected { bits: u32 },
    /// `hop` is 1-based; 0 means the failing hop was not yet known.
    #[error("insufficient key material on {link} at hop {hop}")]
    InsufficientKeyMaterial { hop: usize, link: LinkId },
    #[error("pad unavailable on {link}: {pad:?}")]
    PadUnavailable { link: LinkId, pad: Option<PadRef> },
    #[error("route broken: link {link} is down")]
    RouteBroken { link: LinkId },
    #[error(transparent)]
    Route(#[from] RouteError),
    #[error("unknown SAE {0}")]
    UnknownSae(String),
    #[error("unknown link {0}")]
    UnknownLink(LinkId),
    #[error("unknown key {0}")]
    UnknownKeyId(Uuid),
    #[error("key {0} already redeemed")]
    AlreadyRedeemed(Uuid),
    #[error("only {available} of {requested} keys available")]
    InsufficientKeys { requested: usize, available: usize },
    #[error("key {id} cannot move from {from:?} to {to:?}")]
    InvalidTransition { id: Uuid, from: KeyState, to: KeyState },
    #[error("route does not join {0} to {1}")]
    RouteMismatch(NodeId, NodeId),
    #[error("envelope transport: {0}")]
    Transport(String),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Link(#[from] LinkError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum KeyState {
    Minted,
    InTransit,
    Delivered,
    Consumed,
    Failed,
}

impl KeyState {
    pub fn can_become(self, next: KeyState) -> bool {
        use KeyState::*;
        matches!(
            (self, next),
            (Minted, InTransit) | (InTransit, Delivered) | (Delivered, Consumed) | (Minted | InTransit | Delivered, Failed)
        )
    }
}

/// End-to-end key; `bytes` are wiped on drop.
#[derive(Debug, Clone)]
pub struct GlobalKey {
    pub global_key_id: Uuid,
    pub bytes: Zeroizing<Vec<u8>>,
    pub origin_node: NodeId,
    pub destination_node: NodeId,
    pub state: KeyState,
    pub master_sae_id: String,
    pub slave_sae_id: String,
}

impl GlobalKey {
    pub fn size_bits(&self) -> u32 {
        self.bytes.len() as u32 * 8
    }

    fn transition(&mut self, next: KeyState) -> Result<(), KmsError> {
        if !self.state.can_become(next) {
            return Err(KmsError::InvalidTransition {
                id: self.global_key_id,
                from: self.state,
                to: next,
            });
        }
        self.state = next;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KmsConfig {
    pub max_key_size_bits: u32,
    pub min_key_size_bits: u32,
    pub default_key_size_bits: u32,
    /// Storage bound per SAE pair at the origin node.
    pub max_key_count: u32,
    pub max_keys_per_request: u32,
}

impl Default for KmsConfig {
    fn default() -> Self {
        KmsConfig {
            max_key_size_bits: 4096,
            min_key_size_bits: 8,
            default_key_size_bits: 512,
            max_key_count: 1024,
            max_keys_per_request: 128,
        }
    }
}

impl KmsConfig {
    pub fn check_size(&self, bits: u32) -> Result<(), KmsError> {
        if bits == 0 || bits % 8 != 0 || bits < self.min_key_size_bits || bits > self.max_key_size_bits {
            return Err(KmsError::SizeRejected { bits });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct StoredKey {
    pub global_key_id: Uuid,
    pub master_sae_id: String,
    pub slave_sae_id: String,
    pub bytes: Zeroizing<Vec<u8>>,
    seq: u64,
    issued_to_master: bool,
}

/// One KMS instance. `key_store` holds keys delivered here for local slave
/// SAEs; `master_copies` holds keys minted here and not yet issued to the
/// local master SAE.
#[derive(Debug)]
pub struct KmsNode {
    pub node_id: NodeId,
    pub local_links: Vec<LinkId>,
    pub peers: Vec<NodeId>,
    key_store: BTreeMap<Uuid, StoredKey>,
    master_copies: BTreeMap<Uuid, StoredKey>,
    redeemed: BTreeSet<Uuid>,
    rng: ChaCha20Rng,
}

impl KmsNode {
    fn new(topology: &Topology, node_id: &str, seed: u64) -> Self {
        let local: Vec<_> = topology.links_at(node_id).collect();
        KmsNode {
            node_id: node_id.to_string(),
            local_links: local.iter().map(|l| l.link_id.clone()).collect(),
            peers: local
                .iter()
                .filter_map(|l| l.other_end(node_id).map(str::to_string))
                .collect(),
            key_store: BTreeMap::new(),
            master_copies: BTreeMap::new(),
            redeemed: BTreeSet::new(),
            rng: ChaCha20Rng::from_seed(derive_seed(seed, &["kms", node_id])),
        }
    }

    pub fn key_store(&self) -> impl Iterator<Item = &StoredKey> {
        self.key_store.values()
    }

    pub fn master_copies(&self) -> impl Iterator<Item = &StoredKey> {
        self.master_copies.values()
    }
}

/// Keys held for one SAE pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairInventory {
    pub source_node: NodeId,
    pub target_node: NodeId,
    pub master_sae_id: String,
    pub slave_sae_id: String,
    /// Delivered keys not yet issued to the master SAE.
    pub stored_key_count: usize,
    /// Issued to the master and awaiting redemption by the slave.
    pub awaiting_slave: usize,
    pub max_key_count: u32,
    /// Default-size keys per second the route can sustain.
    pub key_rate_estimate: f64,
}

/// Moves encoded envelopes between the near and far KMS of a hop.
pub trait EnvelopeChannel: Send {
    fn transfer(&mut self, from: &str, to: &str, message: Vec<u8>) -> Result<Vec<u8>, KmsError>;
}

/// Ordered in-process channel.
#[derive(Debug)]
pub struct InProcessChannel {
    tx: mpsc::Sender<Vec<u8>>,
    rx: mpsc::Receiver<Vec<u8>>,
}

impl Default for InProcessChannel {
    fn default() -> Self {
        let (tx, rx) = mpsc::channel();
        InProcessChannel { tx, rx }
    }
}

impl EnvelopeChannel for InProcessChannel {
    fn transfer(&mut self, _from: &str, _to: &str, message: Vec<u8>) -> Result<Vec<u8>, KmsError> {
        self.tx
            .send(message)
            .map_err(|e| KmsError::Transport(e.to_string()))?;
        self.rx.recv().map_err(|e| KmsError::Transport(e.to_string()))
    }
}

/// One envelope that crossed a link.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopeRecord {
    pub global_key_id: Uuid,
    pub link: LinkId,
    pub from: NodeId,
    pub to: NodeId,
    pub pad_refs: Vec<PadRef>,
    pub ciphertext_len: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LinkPadAudit {
    /// Consumed bytes at the link's first and second endpoint.
    pub consumed: [u64; 2],
    pub envelope_bytes: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PadAudit {
    pub links: BTreeMap<LinkId, LinkPadAudit>,
    pub overlapping_refs: Vec<(PadRef, PadRef)>,
}

impl PadAudit {
    pub fn is_clean(&self) -> bool {
        self.overlapping_refs.is_empty()
            && self
                .links
                .values()
                .all(|a| a.consumed[0] == a.envelope_bytes && a.consumed[1] == a.envelope_bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelayOutcome {
    pub global_key_id: Uuid,
    pub hops: usize,
    pub pad_bytes_per_hop: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KeyRecord {
    pub origin_node: NodeId,
    pub destination_node: NodeId,
    pub master_sae_id: String,
    pub slave_sae_id: String,
    pub size_bits: u32,
    pub state: KeyState,
}

/// All KMS nodes and the links between them. Every mutation goes through
/// `&mut self`, so wrapping the network in one lock serializes all node
/// command queues.
pub struct KmsNetwork {
    topology: Topology,
    config: KmsConfig,
    links: BTreeMap<LinkId, QkdLink>,
    nodes: BTreeMap<NodeId, KmsNode>,
    registry: BTreeMap<Uuid, KeyRecord>,
    envelopes: Vec<EnvelopeRecord>,
    channel: Box<dyn EnvelopeChannel>,
    alarms: Vec<(String, Alarm)>,
    delivery_seq: u64,
    now: f64,
}

impl std::fmt::Debug for KmsNetwork {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KmsNetwork")
            .field("nodes", &self.nodes.keys().collect::<Vec<_>>())
            .field("links", &self.links.keys().collect::<Vec<_>>())
            .field("keys", &self.registry.len())
            .field("now", &self.now)
            .finish()
    }
}

impl KmsNetwork {
    pub fn new(topology: Topology, config: KmsConfig, thresholds: AlarmThresholds, seed: u64) -> Self {
        let links = topology
            .links()
            .iter()
            .map(|l| {
                let link = QkdLink::new(l, thresholds.clone(), derive_seed(seed, &["link", &l.link_id]));
                (l.link_id.clone(), link)
            })
            .collect();
        let nodes = topology
            .nodes()
            .iter()
            .map(|n| (n.node_id.clone(), KmsNode::new(&topology, &n.node_id, seed)))
            .collect();
        KmsNetwork {
            topology,
            config,
            links,
            nodes,
            registry: BTreeMap::new(),
            envelopes: Vec::new(),
            channel: Box::new(InProcessChannel::default()),
            alarms: Vec::new(),
            delivery_seq: 0,
            now: 0.0,
        }
    }

    pub fn with_channel(mut self, channel: Box<dyn EnvelopeChannel>) -> Self {
        self.channel = channel;
        self
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn config(&self) -> &KmsConfig {
        &self.config
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn node(&self, id: &str) -> Option<&KmsNode> {
        self.nodes.get(id)
    }

    pub fn link(&self, id: &str) -> Option<&QkdLink> {
        self.links.get(id)
    }

    pub fn link_mut(&mut self, id: &str) -> Option<&mut QkdLink> {
        self.links.get_mut(id)
    }

    pub fn links(&self) -> impl Iterator<Item = &QkdLink> {
        self.links.values()
    }

    pub fn key_record(&self, id: &Uuid) -> Option<&KeyRecord> {
        self.registry.get(id)
    }

    pub fn key_records(&self) -> impl Iterator<Item = (&Uuid, &KeyRecord)> {
        self.registry.iter()
    }

    pub fn envelopes(&self) -> &[EnvelopeRecord] {
        &self.envelopes
    }

    /// Advances every link by `dt` seconds and returns their telemetry.
    pub fn advance(&mut self, dt: f64) -> Vec<TelemetryEvent> {
        self.now += dt;
        let mut events = Vec::new();
        for link in self.links.values_mut() {
            events.extend(link.advance(dt).1);
        }
        events
    }

    pub fn set_link_status(&mut self, link: &str, status: LinkStatus) -> Result<(), KmsError> {
        self.links
            .get_mut(link)
            .ok_or_else(|| KmsError::UnknownLink(link.to_string()))?
            .set_status(status);
        Ok(())
    }

    /// Alarms raised by KMS nodes since the last call, with their source.
    pub fn drain_alarms(&mut self) -> Vec<(String, Alarm)> {
        std::mem::take(&mut self.alarms)
    }

    fn sae_node(&self, sae: &str) -> Result<NodeId, KmsError> {
        self.topology
            .sae(sae)
            .map(|s| s.node_id.clone())
            .ok_or_else(|| KmsError::UnknownSae(sae.to_string()))
    }

    /// Draws a fresh key at the master SAE's node, addressed to the slave
    /// SAE's node.
    pub fn mint_global_key(&mut self, size_bits: u32, master_sae: &str, slave_sae: &str) -> Result<GlobalKey, KmsError> {
        self.config.check_size(size_bits)?;
        let origin = self.sae_node(master_sae)?;
        let destination = self.sae_node(slave_sae)?;
        let node = self.nodes.get_mut(&origin).expect("SAE hosts are topology nodes");
        let mut id = [0u8; 16];
        node.rng.fill_bytes(&mut id);
        let mut bytes = Zeroizing::new(vec![0u8; size_bits as usize / 8]);
        node.rng.fill_bytes(&mut bytes);
        let key = GlobalKey {
            global_key_id: uuid::Builder::from_random_bytes(id).into_uuid(),
            bytes,
            origin_node: origin.clone(),
            destination_node: destination.clone(),
            state: KeyState::Minted,
            master_sae_id: master_sae.to_string(),
            slave_sae_id: slave_sae.to_string(),
        };
        self.registry.insert(
            key.global_key_id,
            KeyRecord {
                origin_node: origin,
                destination_node: destination,
                master_sae_id: key.master_sae_id.clone(),
                slave_sae_id: key.slave_sae_id.clone(),
                size_bits,
                state: KeyState::Minted,
            },
        );
        Ok(key)
    }

    fn set_state(&mut self, key: &mut GlobalKey, next: KeyState) -> Result<(), KmsError> {
        key.transition(next)?;
        if let Some(r) = self.registry.get_mut(&key.global_key_id) {
            r.state = next;
        }
        Ok(())
    }

    /// Carries `key` from its origin to its destination along `route`.
    ///
    /// Each hop consumes exactly `|key|` pad bytes. Pads burned before a
    /// failure stay burned.
    pub fn relay_global_key(&mut self, mut key: GlobalKey, route: &Route) -> Result<RelayOutcome, KmsError> {
        if route.nodes.first() != Some(&key.origin_node) || route.nodes.last() != Some(&key.destination_node) {
            return Err(KmsError::RouteMismatch(key.origin_node.clone(), key.destination_node.clone()));
        }
        if key.state != KeyState::Minted {
            return Err(KmsError::InvalidTransition {
                id: key.global_key_id,
                from: key.state,
                to: KeyState::InTransit,
            });
        }
        self.set_state(&mut key, KeyState::InTransit)?;
        match self.walk(&key, route) {
            Ok(carried) => {
                debug_assert_eq!(*carried, *key.bytes);
                self.set_state(&mut key, KeyState::Delivered)?;
                self.store_delivered(&key, carried);
                Ok(RelayOutcome {
                    global_key_id: key.global_key_id,
                    hops: route.links.len(),
                    pad_bytes_per_hop: key.bytes.len(),
                })
            }
            Err(e) => {
                self.set_state(&mut key, KeyState::Failed)?;
                let mut alarm = Alarm::new(EventKind::RelayFailed)
                    .with("global_key_id", key.global_key_id.to_string())
                    .with("reason", e.to_string());
                match &e {
                    KmsError::InsufficientKeyMaterial { hop, link } => {
                        alarm = alarm.with("hop", *hop as u64).with("link", link.clone())
                    }
                    KmsError::RouteBroken { link } => alarm = alarm.with("link", link.clone()),
                    _ => {}
                }
                self.alarms.push((key.origin_node.clone(), alarm));
                Err(e)
            }
        }
    }

    fn walk(&mut self, key: &GlobalKey, route: &Route) -> Result<Zeroizing<Vec<u8>>, KmsError> {
        let mut carried = Zeroizing::new(key.bytes.to_vec());
        for (i, (link_id, near, far)) in route.hops().enumerate() {
            let link = self
                .links
                .get_mut(link_id)
                .ok_or_else(|| KmsError::UnknownLink(link_id.to_string()))?;
            if link.status() == LinkStatus::Down {
                return Err(KmsError::RouteBroken {
                    link: link_id.to_string(),
                });
            }
            let env = otp_encapsulate(key.global_key_id, &carried, link, near).map_err(|e| match e {
                KmsError::InsufficientKeyMaterial { link, .. } => KmsError::InsufficientKeyMaterial { hop: i + 1, link },
                other => other,
            })?;
            // Transit plaintext at a trusted node lives only until the next
            // hop is encapsulated.
            carried.zeroize();
            let received = self.channel.transfer(near, far, env.encode()?)?;
            let env = KeyEnvelope::decode(&received)?;
            let link = self.links.get_mut(link_id).expect("looked up above");
            carried = Zeroizing::new(otp_decapsulate(&env, link, far)?);
            self.envelopes.push(EnvelopeRecord {
                global_key_id: env.global_key_id,
                link: env.hop_link.clone(),
                from: near.to_string(),
                to: far.to_string(),
                pad_refs: env.pad_refs.clone(),
                ciphertext_len: env.ciphertext.len(),
            });
        }
        Ok(carried)
    }

    fn store_delivered(&mut self, key: &GlobalKey, carried: Zeroizing<Vec<u8>>) {
        self.delivery_seq += 1;
        let stored = StoredKey {
            global_key_id: key.global_key_id,
            master_sae_id: key.master_sae_id.clone(),
            slave_sae_id: key.slave_sae_id.clone(),
            bytes: carried,
            seq: self.delivery_seq,
            issued_to_master: false,
        };
        let master_copy = StoredKey {
            bytes: key.bytes.clone(),
            ..stored.clone()
        };
        let dest = self.nodes.get_mut(&key.destination_node).expect("route endpoint");
        let fresh = dest.key_store.insert(key.global_key_id, stored).is_none();
        debug_assert!(fresh, "key ids are unique");
        let origin = self.nodes.get_mut(&key.origin_node).expect("route endpoint");
        origin.master_copies.insert(key.global_key_id, master_copy);
    }

    /// Mints and relays one key for the SAE pair along the topology route.
    pub fn establish_key(&mut self, size_bits: u32, master_sae: &str, slave_sae: &str) -> Result<RelayOutcome, KmsError> {
        let key = self.mint_global_key(size_bits, master_sae, slave_sae)?;
        if key.origin_node == key.destination_node {
            let route = Route {
                nodes: vec![key.origin_node.clone()],
                links: vec![],
            };
            return self.relay_global_key(key, &route);
        }
        let route = match self.topology.route_between(&key.origin_node, &key.destination_node) {
            Ok(r) => r,
            Err(e) => {
                let mut key = key;
                self.set_state(&mut key, KeyState::Failed)?;
                return Err(e.into());
            }
        };
        self.relay_global_key(key, &route)
    }

    fn available_for(&self, master_sae: &str, slave_sae: &str, size_bits: u32) -> Result<Vec<Uuid>, KmsError> {
        let origin = self.sae_node(master_sae)?;
        self.sae_node(slave_sae)?;
        let mut found: Vec<(u64, Uuid)> = self.nodes[&origin]
            .master_copies
            .values()
            .filter(|k| k.master_sae_id == master_sae && k.slave_sae_id == slave_sae && k.bytes.len() * 8 == size_bits as usize)
            .map(|k| (k.seq, k.global_key_id))
            .collect();
        found.sort();
        Ok(found.into_iter().map(|(_, id)| id).collect())
    }

    /// Hands `number` keys of `size_bits` to the master SAE, relaying more on
    /// demand. All or nothing; each key leaves the origin store for good.
    pub fn issue_to_master(
        &mut self,
        master_sae: &str,
        slave_sae: &str,
        number: usize,
        size_bits: u32,
        relay_on_demand: bool,
    ) -> Result<Vec<(Uuid, Zeroizing<Vec<u8>>)>, KmsError> {
        self.config.check_size(size_bits)?;
        let mut ids = self.available_for(master_sae, slave_sae, size_bits)?;
        if ids.len() < number && relay_on_demand {
            for _ in ids.len()..number {
                if self.establish_key(size_bits, master_sae, slave_sae).is_err() {
                    break;
                }
            }
            ids = self.available_for(master_sae, slave_sae, size_bits)?;
        }
        if ids.len() < number {
            return Err(KmsError::InsufficientKeys {
                requested: number,
                available: ids.len(),
            });
        }
        let origin = self.sae_node(master_sae)?;
        let mut out = Vec::with_capacity(number);
        for id in ids.into_iter().take(number) {
            let copy = self
                .nodes
                .get_mut(&origin)
                .and_then(|n| n.master_copies.remove(&id))
                .expect("listed above");
            let dest = self.registry[&id].destination_node.clone();
            if let Some(k) = self.nodes.get_mut(&dest).and_then(|n| n.key_store.get_mut(&id)) {
                k.issued_to_master = true;
            }
            out.push((id, copy.bytes));
        }
        Ok(out)
    }

    /// Releases keys previously issued to `master_sae` to the slave SAE.
    /// Each key id is redeemable once. All or nothing.
    pub fn redeem_at_slave(
        &mut self,
        slave_sae: &str,
        master_sae: &str,
        ids: &[Uuid],
    ) -> Result<Vec<(Uuid, Zeroizing<Vec<u8>>)>, KmsError> {
        let node_id = self.sae_node(slave_sae)?;
        self.sae_node(master_sae)?;
        let node = &self.nodes[&node_id];
        let mut seen = BTreeSet::new();
        for id in ids {
            if node.redeemed.contains(id) || !seen.insert(*id) {
                return Err(KmsError::AlreadyRedeemed(*id));
            }
            match node.key_store.get(id) {
                Some(k) if k.issued_to_master && k.slave_sae_id == slave_sae && k.master_sae_id == master_sae => {}
                _ => return Err(KmsError::UnknownKeyId(*id)),
            }
        }
        let mut out = Vec::with_capacity(ids.len());
        for id in ids {
            let node = self.nodes.get_mut(&node_id).expect("checked above");
            let k = node.key_store.remove(id).expect("checked above");
            node.redeemed.insert(*id);
            if let Some(r) = self.registry.get_mut(id) {
                r.state = KeyState::Consumed;
            }
            out.push((*id, k.bytes));
        }
        Ok(out)
    }

    /// Snapshot of the keys held for one SAE pair.
    pub fn pair_inventory(&self, master_sae: &str, slave_sae: &str) -> Result<PairInventory, KmsError> {
        let source = self.sae_node(master_sae)?;
        let target = self.sae_node(slave_sae)?;
        let stored = self.nodes[&source]
            .master_copies
            .values()
            .filter(|k| k.master_sae_id == master_sae && k.slave_sae_id == slave_sae)
            .count();
        let awaiting_slave = self.nodes[&target]
            .key_store
            .values()
            .filter(|k| k.issued_to_master && k.master_sae_id == master_sae && k.slave_sae_id == slave_sae)
            .count();
        let key_rate_estimate = match self.topology.route_between(&source, &target) {
            Ok(route) => route
                .links
                .iter()
                .filter_map(|l| self.links.get(l))
                .map(|l| l.ends()[0].secure_rate_bps())
                .fold(f64::INFINITY, f64::min)
                / self.config.default_key_size_bits as f64,
            Err(_) => 0.0,
        };
        Ok(PairInventory {
            source_node: source,
            target_node: target,
            master_sae_id: master_sae.to_string(),
            slave_sae_id: slave_sae.to_string(),
            stored_key_count: stored,
            awaiting_slave,
            max_key_count: self.config.max_key_count,
            key_rate_estimate: if key_rate_estimate.is_finite() { key_rate_estimate } else { 0.0 },
        })
    }

    /// Per-pair inventory of keys minted at `node`.
    pub fn inventory(&self, node: &str) -> Vec<PairInventory> {
        let Some(n) = self.nodes.get(node) else {
            return Vec::new();
        };
        let pairs: BTreeSet<(String, String)> = n
            .master_copies
            .values()
            .map(|k| (k.master_sae_id.clone(), k.slave_sae_id.clone()))
            .chain(
                self.topology
                    .saes()
                    .iter()
                    .filter(|m| m.node_id == node)
                    .flat_map(|m| {
                        self.topology
                            .saes()
                            .iter()
                            .filter(move |s| s.sae_id != m.sae_id)
                            .map(move |s| (m.sae_id.clone(), s.sae_id.clone()))
                    }),
            )
            .collect();
        pairs
            .iter()
            .filter_map(|(m, s)| self.pair_inventory(m, s).ok())
            .collect()
    }

    /// Cross-checks pad consumption on every link against the envelopes
    /// that crossed it, and checks no pad byte was used twice.
    pub fn pad_audit(&self) -> PadAudit {
        let mut audit = PadAudit::default();
        for (id, link) in &self.links {
            audit.links.insert(
                id.clone(),
                LinkPadAudit {
                    consumed: link.consumed_bytes(),
                    envelope_bytes: 0,
                },
            );
        }
        let mut refs: Vec<(&LinkId, &PadRef)> = Vec::new();
        for e in &self.envelopes {
            if let Some(a) = audit.links.get_mut(&e.link) {
                a.envelope_bytes += e.ciphertext_len as u64;
            }
            refs.extend(e.pad_refs.iter().map(|r| (&e.link, r)));
        }
        refs.sort_by(|a, b| (a.0, a.1.key_id, a.1.start).cmp(&(b.0, b.1.key_id, b.1.start)));
        for w in refs.windows(2) {
            let ((la, a), (lb, b)) = (w[0], w[1]);
            if la == lb && a.key_id == b.key_id && b.start < a.range().end {
                audit.overlapping_refs.push((a.clone(), b.clone()));
            }
        }
        audit
    }

    /// Where each global key currently lives, for checking that no key sits
    /// in two key stores.
    pub fn key_store_locations(&self) -> BTreeMap<Uuid, Vec<NodeId>> {
        let mut out: BTreeMap<Uuid, Vec<NodeId>> = BTreeMap::new();
        for (nid, n) in &self.nodes {
            for id in n.key_store.keys() {
                out.entry(*id).or_default().push(nid.clone());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests;
