//! Network graph: core exchanges, customer sites, QKD links and the
//! wavelength plans multiplexed onto access tails.
//!
//! A [`Topology`] is only ever constructed through validation, so every
//! instance in circulation satisfies the structural rules checked here.
//! It is immutable afterwards and can be shared freely behind an `Arc`.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::link_sim::{AvailabilityProfile, QkdSystemParams};

pub type NodeId = String;
pub type LinkId = String;

/// DWDM channel 34.
pub const LD_QUANTUM_WAVELENGTH_NM: f64 = 1550.12;
pub const MU_QUANTUM_WAVELENGTH_NM: f64 = 1310.0;
/// How far an MU quantum channel may sit from 1310 nm and still count as O-band.
pub const MU_WAVELENGTH_TOLERANCE_NM: f64 = 10.0;
pub const MAX_ACCESS_LENGTH_KM: f64 = 30.0;
pub const ACCESS_CHANNEL_SLOTS: usize = 8;
/// Allowed offset between a plan's quantum channel and the link profile.
pub const PLAN_QUANTUM_MATCH_NM: f64 = 1.0;
pub const LOSS_1550_DB_PER_KM: f64 = 0.21;
pub const LOSS_1310_DB_PER_KM: f64 = 0.33;

const WAVELENGTH_EPS_NM: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("malformed topology document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("cannot read topology file: {0}")]
    Io(#[from] std::io::Error),
    #[error("{rule}: {detail}")]
    Validation { rule: &'static str, detail: String },
}

impl TopologyError {
    /// Name of the violated rule, if this is a validation failure.
    pub fn rule(&self) -> Option<&'static str> {
        match self {
            TopologyError::Validation { rule, .. } => Some(rule),
            _ => None,
        }
    }
}

fn invalid(rule: &'static str, detail: impl Into<String>) -> TopologyError {
    TopologyError::Validation {
        rule,
        detail: detail.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RouteError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("route endpoints must differ ({0})")]
    SameNode(NodeId),
    #[error("no route between {from} and {to}")]
    NoRoute { from: NodeId, to: NodeId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    CoreExchange,
    CustomerSite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub node_id: NodeId,
    pub kind: NodeKind,
    #[serde(default)]
    pub secure_location: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QkdSystem {
    /// Multiplexed unidirectional, O-band quantum channel.
    MU,
    /// Long distance, C-band quantum channel over dark fibre.
    LD,
    Access,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum FibreConfig {
    SingleFibre,
    #[default]
    DualFibre,
}

/// Static description of one QKD link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkProfile {
    pub link_id: LinkId,
    pub endpoints: (NodeId, NodeId),
    pub system: QkdSystem,
    pub length_km: f64,
    #[serde(default)]
    pub fibre_config: FibreConfig,
    pub co_propagating_data: bool,
    pub loss_coeff_db_per_km: f64,
    pub quantum_wavelength_nm: f64,
    #[serde(default)]
    pub qkd_params: QkdSystemParams,
    #[serde(default)]
    pub availability: AvailabilityProfile,
}

impl LinkProfile {
    pub fn touches(&self, node: &str) -> bool {
        self.endpoints.0 == node || self.endpoints.1 == node
    }

    /// The endpoint opposite `node`, if `node` is on this link.
    pub fn other_end(&self, node: &str) -> Option<&str> {
        if self.endpoints.0 == node {
            Some(&self.endpoints.1)
        } else if self.endpoints.1 == node {
            Some(&self.endpoints.0)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChannelRole {
    Quantum,
    EthernetData,
    QkdClassical,
    QkdSync,
    Unused,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub index: u8,
    pub role: ChannelRole,
    pub wavelength_nm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WavelengthPlan {
    pub link_id: LinkId,
    pub channels: Vec<Channel>,
}

impl WavelengthPlan {
    /// Eight-slot access mux: quantum, data, classical and sync on slots 1-4,
    /// remaining slots idle, 100 GHz-ish spacing below the quantum channel.
    pub fn standard_access(link_id: impl Into<LinkId>, quantum_wavelength_nm: f64) -> Self {
        let roles = [
            ChannelRole::Quantum,
            ChannelRole::EthernetData,
            ChannelRole::QkdClassical,
            ChannelRole::QkdSync,
            ChannelRole::Unused,
            ChannelRole::Unused,
            ChannelRole::Unused,
            ChannelRole::Unused,
        ];
        let channels = roles
            .iter()
            .enumerate()
            .map(|(i, role)| Channel {
                index: i as u8 + 1,
                role: *role,
                wavelength_nm: quantum_wavelength_nm - 1.6 * i as f64,
            })
            .collect();
        WavelengthPlan {
            link_id: link_id.into(),
            channels,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanViolation {
    LinkMismatch,
    ChannelCount { found: usize },
    ChannelIndex { index: u8 },
    DuplicateIndex { index: u8 },
    QuantumChannelCount { found: usize },
    DuplicateWavelength,
    QuantumWavelengthMismatch,
    MissingRole(ChannelRole),
}

impl fmt::Display for PlanViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlanViolation::LinkMismatch => "link mismatch",
            PlanViolation::ChannelCount { .. } => "channel count",
            PlanViolation::ChannelIndex { .. } => "channel index",
            PlanViolation::DuplicateIndex { .. } => "duplicate channel index",
            PlanViolation::QuantumChannelCount { .. } => "quantum channel count",
            PlanViolation::DuplicateWavelength => "duplicate wavelength",
            PlanViolation::QuantumWavelengthMismatch => "quantum wavelength mismatch",
            PlanViolation::MissingRole(_) => "missing role",
        })
    }
}

/// Checks a plan against the link it belongs to. An empty result means the
/// plan is acceptable.
pub fn validate_wavelength_plan(plan: &WavelengthPlan, profile: &LinkProfile) -> Vec<PlanViolation> {
    let mut out = Vec::new();
    if plan.link_id != profile.link_id {
        out.push(PlanViolation::LinkMismatch);
    }

    let n = plan.channels.len();
    let count_ok = match profile.system {
        QkdSystem::Access => n == ACCESS_CHANNEL_SLOTS,
        _ => (1..=ACCESS_CHANNEL_SLOTS).contains(&n),
    };
    if !count_ok {
        out.push(PlanViolation::ChannelCount { found: n });
    }

    let mut seen_index = BTreeSet::new();
    for ch in &plan.channels {
        if !(1..=ACCESS_CHANNEL_SLOTS as u8).contains(&ch.index) {
            out.push(PlanViolation::ChannelIndex { index: ch.index });
        } else if !seen_index.insert(ch.index) {
            out.push(PlanViolation::DuplicateIndex { index: ch.index });
        }
    }

    let quantum: Vec<&Channel> = plan
        .channels
        .iter()
        .filter(|c| c.role == ChannelRole::Quantum)
        .collect();
    if quantum.len() != 1 {
        out.push(PlanViolation::QuantumChannelCount {
            found: quantum.len(),
        });
    }

    let duplicate = plan.channels.iter().enumerate().any(|(i, a)| {
        plan.channels[i + 1..]
            .iter()
            .any(|b| (a.wavelength_nm - b.wavelength_nm).abs() < WAVELENGTH_EPS_NM)
    });
    if duplicate {
        out.push(PlanViolation::DuplicateWavelength);
    }

    if quantum
        .iter()
        .any(|c| (c.wavelength_nm - profile.quantum_wavelength_nm).abs() > PLAN_QUANTUM_MATCH_NM)
    {
        out.push(PlanViolation::QuantumWavelengthMismatch);
    }

    if profile.system == QkdSystem::Access {
        for role in [
            ChannelRole::EthernetData,
            ChannelRole::QkdClassical,
            ChannelRole::QkdSync,
        ] {
            if !plan.channels.iter().any(|c| c.role == role) {
                out.push(PlanViolation::MissingRole(role));
            }
        }
    }
    out
}

/// A secure application entity and the KMS node that serves it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaeSpec {
    pub sae_id: String,
    pub node_id: NodeId,
    pub token: String,
}

/// Explicit route override for one node pair (usable in both directions).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteEntry {
    pub from: NodeId,
    pub to: NodeId,
    pub links: Vec<LinkId>,
}

/// Ordered path through the network. `nodes.len() == links.len() + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Route {
    pub nodes: Vec<NodeId>,
    pub links: Vec<LinkId>,
}

impl Route {
    pub fn origin(&self) -> &str {
        &self.nodes[0]
    }

    pub fn destination(&self) -> &str {
        self.nodes.last().expect("route has nodes")
    }

    /// `(link, near node, far node)` for each hop in travel order.
    pub fn hops(&self) -> impl Iterator<Item = (&str, &str, &str)> {
        self.links
            .iter()
            .enumerate()
            .map(move |(i, l)| (l.as_str(), self.nodes[i].as_str(), self.nodes[i + 1].as_str()))
    }

    pub fn reversed(&self) -> Route {
        Route {
            nodes: self.nodes.iter().rev().cloned().collect(),
            links: self.links.iter().rev().cloned().collect(),
        }
    }
}

// On-disk shape. Optional physical fields are resolved to per-system
// defaults before validation.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologyDocument {
    nodes: Vec<NodeSpec>,
    links: Vec<LinkDocument>,
    #[serde(default)]
    plans: Vec<WavelengthPlan>,
    #[serde(default)]
    routes: Option<Vec<RouteEntry>>,
    #[serde(default)]
    saes: Option<Vec<SaeSpec>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkDocument {
    link_id: LinkId,
    endpoints: (NodeId, NodeId),
    system: QkdSystem,
    length_km: f64,
    #[serde(default)]
    fibre_config: FibreConfig,
    co_propagating_data: bool,
    loss_coeff_db_per_km: Option<f64>,
    quantum_wavelength_nm: Option<f64>,
    #[serde(default)]
    qkd_params: QkdSystemParams,
    #[serde(default)]
    availability: AvailabilityProfile,
}

impl LinkDocument {
    fn resolve(self) -> Result<LinkProfile, TopologyError> {
        let quantum_wavelength_nm = match (self.quantum_wavelength_nm, self.system) {
            (Some(w), _) => w,
            (None, QkdSystem::LD) => LD_QUANTUM_WAVELENGTH_NM,
            (None, QkdSystem::MU) => MU_QUANTUM_WAVELENGTH_NM,
            (None, QkdSystem::Access) => {
                return Err(invalid(
                    "access profile",
                    format!("{}: access links must state quantum_wavelength_nm", self.link_id),
                ))
            }
        };
        let loss_coeff_db_per_km = self
            .loss_coeff_db_per_km
            .unwrap_or_else(|| default_loss_coeff(quantum_wavelength_nm));
        Ok(LinkProfile {
            link_id: self.link_id,
            endpoints: self.endpoints,
            system: self.system,
            length_km: self.length_km,
            fibre_config: self.fibre_config,
            co_propagating_data: self.co_propagating_data,
            loss_coeff_db_per_km,
            quantum_wavelength_nm,
            qkd_params: self.qkd_params,
            availability: self.availability,
        })
    }
}

/// Standard single-mode fibre attenuation for the band the wavelength sits in.
pub fn default_loss_coeff(wavelength_nm: f64) -> f64 {
    if wavelength_nm >= 1450.0 {
        LOSS_1550_DB_PER_KM
    } else {
        LOSS_1310_DB_PER_KM
    }
}

#[derive(Debug, Clone)]
pub struct Topology {
    nodes: Vec<NodeSpec>,
    links: Vec<LinkProfile>,
    plans: Vec<WavelengthPlan>,
    routes: Option<Vec<RouteEntry>>,
    saes: Vec<SaeSpec>,
    adjacency: BTreeMap<NodeId, Vec<(LinkId, NodeId)>>,
}

/// Parses and validates a topology JSON document.
pub fn load_topology(document: &str) -> Result<Topology, TopologyError> {
    let doc: TopologyDocument = serde_json::from_str(document)?;
    let links = doc
        .links
        .into_iter()
        .map(LinkDocument::resolve)
        .collect::<Result<Vec<_>, _>>()?;
    Topology::from_parts(doc.nodes, links, doc.plans, doc.saes, doc.routes)
}

pub fn load_topology_file(path: impl AsRef<Path>) -> Result<Topology, TopologyError> {
    load_topology(&std::fs::read_to_string(path)?)
}

impl Topology {
    /// Builds a topology from already-resolved parts. When `saes` is `None`
    /// every customer site gets one SAE named `<node>-sae` with token
    /// `<node>-token`.
    pub fn from_parts(
        nodes: Vec<NodeSpec>,
        links: Vec<LinkProfile>,
        plans: Vec<WavelengthPlan>,
        saes: Option<Vec<SaeSpec>>,
        routes: Option<Vec<RouteEntry>>,
    ) -> Result<Self, TopologyError> {
        let saes = saes.unwrap_or_else(|| {
            nodes
                .iter()
                .filter(|n| n.kind == NodeKind::CustomerSite)
                .map(|n| SaeSpec {
                    sae_id: format!("{}-sae", n.node_id),
                    node_id: n.node_id.clone(),
                    token: format!("{}-token", n.node_id),
                })
                .collect()
        });
        let mut adjacency: BTreeMap<NodeId, Vec<(LinkId, NodeId)>> = BTreeMap::new();
        for n in &nodes {
            adjacency.entry(n.node_id.clone()).or_default();
        }
        for l in &links {
            if let Some(v) = adjacency.get_mut(&l.endpoints.0) {
                v.push((l.link_id.clone(), l.endpoints.1.clone()));
            }
            if let Some(v) = adjacency.get_mut(&l.endpoints.1) {
                v.push((l.link_id.clone(), l.endpoints.0.clone()));
            }
        }
        for v in adjacency.values_mut() {
            v.sort();
        }
        let topo = Topology {
            nodes,
            links,
            plans,
            routes,
            saes,
            adjacency,
        };
        topo.validate()?;
        Ok(topo)
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn links(&self) -> &[LinkProfile] {
        &self.links
    }

    pub fn plans(&self) -> &[WavelengthPlan] {
        &self.plans
    }

    pub fn saes(&self) -> &[SaeSpec] {
        &self.saes
    }

    pub fn explicit_routes(&self) -> Option<&[RouteEntry]> {
        self.routes.as_deref()
    }

    pub fn node(&self, id: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.node_id == id)
    }

    pub fn link(&self, id: &str) -> Option<&LinkProfile> {
        self.links.iter().find(|l| l.link_id == id)
    }

    pub fn sae(&self, sae_id: &str) -> Option<&SaeSpec> {
        self.saes.iter().find(|s| s.sae_id == sae_id)
    }

    pub fn sae_by_token(&self, token: &str) -> Option<&SaeSpec> {
        self.saes.iter().find(|s| s.token == token)
    }

    /// Links incident to `node`, sorted by link id.
    pub fn links_at(&self, node: &str) -> impl Iterator<Item = &LinkProfile> {
        self.adjacency
            .get(node)
            .into_iter()
            .flatten()
            .filter_map(|(l, _)| self.link(l))
    }

    /// The access link of a customer site.
    pub fn access_link_of(&self, customer: &str) -> Option<&LinkProfile> {
        self.links
            .iter()
            .find(|l| l.system == QkdSystem::Access && l.touches(customer))
    }

    /// Serializes back to the on-disk document shape.
    pub fn to_json(&self) -> serde_json::Value {
        let mut doc = serde_json::json!({
            "nodes": self.nodes,
            "links": self.links,
            "plans": self.plans,
            "saes": self.saes,
        });
        if let Some(r) = &self.routes {
            doc["routes"] = serde_json::to_value(r).expect("routes serialize");
        }
        doc
    }

    fn validate(&self) -> Result<(), TopologyError> {
        let mut node_ids = BTreeSet::new();
        for n in &self.nodes {
            if n.node_id.is_empty() {
                return Err(invalid("node id", "empty node_id"));
            }
            if !node_ids.insert(n.node_id.as_str()) {
                return Err(invalid("duplicate node", n.node_id.clone()));
            }
        }

        let mut link_ids = BTreeSet::new();
        for l in &self.links {
            if !link_ids.insert(l.link_id.as_str()) {
                return Err(invalid("duplicate link", l.link_id.clone()));
            }
            self.validate_link(l)?;
        }

        for n in self.nodes.iter().filter(|n| n.kind == NodeKind::CustomerSite) {
            let access = self
                .links
                .iter()
                .filter(|l| l.touches(&n.node_id))
                .collect::<Vec<_>>();
            if access.len() != 1 || access[0].system != QkdSystem::Access {
                return Err(invalid(
                    "customer attachment",
                    format!(
                        "{} must attach to exactly one core exchange via one access link",
                        n.node_id
                    ),
                ));
            }
        }

        let mut planned = BTreeSet::new();
        for plan in &self.plans {
            let profile = self.link(&plan.link_id).ok_or_else(|| {
                invalid("wavelength plan", format!("plan for unknown link {}", plan.link_id))
            })?;
            if !planned.insert(plan.link_id.as_str()) {
                return Err(invalid(
                    "wavelength plan",
                    format!("more than one plan for {}", plan.link_id),
                ));
            }
            let violations = validate_wavelength_plan(plan, profile);
            if !violations.is_empty() {
                let names: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
                return Err(invalid(
                    "wavelength plan",
                    format!("{}: {}", plan.link_id, names.join(", ")),
                ));
            }
        }
        if let Some(l) = self
            .links
            .iter()
            .find(|l| l.system == QkdSystem::Access && !planned.contains(l.link_id.as_str()))
        {
            return Err(invalid(
                "wavelength plan",
                format!("access link {} has no wavelength plan", l.link_id),
            ));
        }

        self.validate_core_connectivity()?;

        let mut sae_ids = BTreeSet::new();
        let mut tokens = BTreeSet::new();
        for s in &self.saes {
            if !sae_ids.insert(s.sae_id.as_str()) || !tokens.insert(s.token.as_str()) {
                return Err(invalid("sae", format!("duplicate SAE id or token for {}", s.sae_id)));
            }
            if self.node(&s.node_id).is_none() {
                return Err(invalid(
                    "sae",
                    format!("{} attached to unknown node {}", s.sae_id, s.node_id),
                ));
            }
        }

        if let Some(routes) = &self.routes {
            for r in routes {
                self.walk_explicit(r)?;
            }
        }
        Ok(())
    }

    fn validate_link(&self, l: &LinkProfile) -> Result<(), TopologyError> {
        let (a, b) = (&l.endpoints.0, &l.endpoints.1);
        let kind_a = self
            .node(a)
            .ok_or_else(|| invalid("unknown endpoint", format!("{}: {}", l.link_id, a)))?
            .kind;
        let kind_b = self
            .node(b)
            .ok_or_else(|| invalid("unknown endpoint", format!("{}: {}", l.link_id, b)))?
            .kind;
        if a == b {
            return Err(invalid("self loop", l.link_id.clone()));
        }
        if !(l.length_km.is_finite() && l.length_km > 0.0) {
            return Err(invalid(
                "link length",
                format!("{}: length_km must be positive, got {}", l.link_id, l.length_km),
            ));
        }
        if !(l.loss_coeff_db_per_km.is_finite() && l.loss_coeff_db_per_km > 0.0) {
            return Err(invalid("loss coefficient", l.link_id.clone()));
        }
        if !(l.quantum_wavelength_nm.is_finite() && l.quantum_wavelength_nm > 0.0) {
            return Err(invalid("quantum wavelength", l.link_id.clone()));
        }
        match l.system {
            QkdSystem::LD => {
                if (l.quantum_wavelength_nm - LD_QUANTUM_WAVELENGTH_NM).abs() > WAVELENGTH_EPS_NM
                    || l.co_propagating_data
                {
                    return Err(invalid(
                        "LD profile",
                        format!("{}: LD runs at 1550.12 nm over dark fibre", l.link_id),
                    ));
                }
            }
            QkdSystem::MU => {
                if (l.quantum_wavelength_nm - MU_QUANTUM_WAVELENGTH_NM).abs()
                    > MU_WAVELENGTH_TOLERANCE_NM
                {
                    return Err(invalid(
                        "MU profile",
                        format!("{}: MU quantum channel must be near 1310 nm", l.link_id),
                    ));
                }
            }
            QkdSystem::Access => {
                if !l.co_propagating_data {
                    return Err(invalid(
                        "access profile",
                        format!("{}: access links carry co-propagating data", l.link_id),
                    ));
                }
                if l.length_km > MAX_ACCESS_LENGTH_KM {
                    return Err(invalid(
                        "access radius",
                        format!("{}: {} km exceeds {} km", l.link_id, l.length_km, MAX_ACCESS_LENGTH_KM),
                    ));
                }
            }
        }
        let kinds_ok = match l.system {
            QkdSystem::Access => {
                matches!(
                    (kind_a, kind_b),
                    (NodeKind::CustomerSite, NodeKind::CoreExchange)
                        | (NodeKind::CoreExchange, NodeKind::CustomerSite)
                )
            }
            _ => kind_a == NodeKind::CoreExchange && kind_b == NodeKind::CoreExchange,
        };
        if !kinds_ok {
            return Err(invalid(
                "link endpoints",
                format!("{}: {:?} link between {:?} and {:?}", l.link_id, l.system, kind_a, kind_b),
            ));
        }
        l.qkd_params
            .validate()
            .map_err(|e| invalid("qkd params", format!("{}: {}", l.link_id, e)))?;
        l.availability
            .validate()
            .map_err(|e| invalid("availability", format!("{}: {}", l.link_id, e)))?;
        Ok(())
    }

    fn validate_core_connectivity(&self) -> Result<(), TopologyError> {
        let core: Vec<&str> = self
            .nodes
            .iter()
            .filter(|n| n.kind == NodeKind::CoreExchange)
            .map(|n| n.node_id.as_str())
            .collect();
        let Some(start) = core.first() else {
            return Ok(());
        };
        let mut seen = BTreeSet::from([*start]);
        let mut queue = VecDeque::from([*start]);
        while let Some(n) = queue.pop_front() {
            for (_, m) in &self.adjacency[n] {
                let is_core = self.node(m).map(|s| s.kind) == Some(NodeKind::CoreExchange);
                if is_core && seen.insert(m.as_str()) {
                    queue.push_back(m.as_str());
                }
            }
        }
        if seen.len() != core.len() {
            let missing: Vec<&str> = core.iter().copied().filter(|c| !seen.contains(c)).collect();
            return Err(invalid(
                "core connectivity",
                format!("core exchanges not reachable: {}", missing.join(", ")),
            ));
        }
        Ok(())
    }

    fn walk_explicit(&self, entry: &RouteEntry) -> Result<Route, TopologyError> {
        let bad = |why: String| invalid("route", format!("{} -> {}: {}", entry.from, entry.to, why));
        if self.node(&entry.from).is_none() || self.node(&entry.to).is_none() {
            return Err(bad("unknown node".into()));
        }
        let mut nodes = vec![entry.from.clone()];
        for l in &entry.links {
            let profile = self.link(l).ok_or_else(|| bad(format!("unknown link {l}")))?;
            let here = nodes.last().expect("non-empty");
            let next = profile
                .other_end(here)
                .ok_or_else(|| bad(format!("link {l} does not leave {here}")))?;
            nodes.push(next.to_string());
        }
        if nodes.last() != Some(&entry.to) || entry.links.is_empty() {
            return Err(bad("path does not end at destination".into()));
        }
        Ok(Route {
            nodes,
            links: entry.links.clone(),
        })
    }

    /// Minimum-hop route from `a` to `b`.
    ///
    /// Ties are broken by the lexicographically smallest link-id sequence,
    /// read from the endpoint whose id sorts first, so that
    /// `route_between(a, b)` is always the reverse of `route_between(b, a)`.
    /// An explicit route table entry for the pair (either direction) wins.
    pub fn route_between(&self, a: &str, b: &str) -> Result<Route, RouteError> {
        for n in [a, b] {
            if self.node(n).is_none() {
                return Err(RouteError::UnknownNode(n.to_string()));
            }
        }
        if a == b {
            return Err(RouteError::SameNode(a.to_string()));
        }
        if let Some(routes) = &self.routes {
            for r in routes {
                if r.from == a && r.to == b {
                    return Ok(self.walk_explicit(r).expect("validated at load"));
                }
                if r.from == b && r.to == a {
                    return Ok(self.walk_explicit(r).expect("validated at load").reversed());
                }
            }
        }

        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let dist = self.hop_distances(hi);
        let Some(&total) = dist.get(lo) else {
            return Err(RouteError::NoRoute {
                from: a.to_string(),
                to: b.to_string(),
            });
        };
        let mut nodes = vec![lo.to_string()];
        let mut links = Vec::with_capacity(total);
        let mut here = lo;
        for remaining in (0..total).rev() {
            // adjacency is sorted by link id, so the first qualifying entry is
            // the lexicographically smallest continuation.
            let (link, next) = self.adjacency[here]
                .iter()
                .find(|(_, m)| dist.get(m.as_str()) == Some(&remaining))
                .expect("bfs distances guarantee a predecessor");
            links.push(link.clone());
            nodes.push(next.clone());
            here = next;
        }
        let route = Route { nodes, links };
        Ok(if lo == a { route } else { route.reversed() })
    }

    fn hop_distances<'a>(&'a self, from: &'a str) -> BTreeMap<&'a str, usize> {
        let mut dist = BTreeMap::from([(from, 0usize)]);
        let mut queue = VecDeque::from([from]);
        while let Some(n) = queue.pop_front() {
            let d = dist[n];
            for (_, m) in &self.adjacency[n] {
                if !dist.contains_key(m.as_str()) {
                    dist.insert(m.as_str(), d + 1);
                    queue.push_back(m.as_str());
                }
            }
        }
        dist
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn london() -> String {
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/london.json"))
            .unwrap()
    }

    fn mutate(f: impl FnOnce(&mut serde_json::Value)) -> Result<Topology, TopologyError> {
        let mut doc: serde_json::Value = serde_json::from_str(&london()).unwrap();
        f(&mut doc);
        load_topology(&doc.to_string())
    }

    fn profile(system: QkdSystem, wavelength: f64) -> LinkProfile {
        LinkProfile {
            link_id: "l".into(),
            endpoints: ("a".into(), "b".into()),
            system,
            length_km: 10.0,
            fibre_config: FibreConfig::DualFibre,
            co_propagating_data: system == QkdSystem::Access,
            loss_coeff_db_per_km: default_loss_coeff(wavelength),
            quantum_wavelength_nm: wavelength,
            qkd_params: QkdSystemParams::default(),
            availability: AvailabilityProfile::default(),
        }
    }

    fn names(v: &[PlanViolation]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn london_sample_loads() {
        let t = load_topology(&london()).unwrap();
        let core = t.nodes().iter().filter(|n| n.kind == NodeKind::CoreExchange).count();
        let cust = t.nodes().iter().filter(|n| n.kind == NodeKind::CustomerSite).count();
        assert_eq!((core, cust), (3, 2));
        assert!(t.links().iter().any(|l| l.system != QkdSystem::Access && l.length_km == 46.7));
        assert!(t
            .links()
            .iter()
            .filter(|l| l.system == QkdSystem::Access)
            .all(|l| l.length_km == 12.0));
    }

    #[test]
    fn access_link_beyond_radius_is_rejected() {
        let err = mutate(|d| {
            for l in d["links"].as_array_mut().unwrap() {
                if l["system"] == "Access" {
                    l["length_km"] = 35.0.into();
                }
            }
        })
        .unwrap_err();
        assert_eq!(err.rule(), Some("access radius"));
    }

    #[test]
    fn two_quantum_channels_rejected() {
        let err = mutate(|d| {
            d["plans"][0]["channels"][1]["role"] = "Quantum".into();
        })
        .unwrap_err();
        assert_eq!(err.rule(), Some("wavelength plan"));
    }

    #[test]
    fn malformed_document_is_parse_error() {
        assert!(matches!(load_topology("{ nodes: "), Err(TopologyError::Parse(_))));
        assert!(matches!(load_topology("{}"), Err(TopologyError::Parse(_))));
    }

    #[test]
    fn ld_link_must_sit_on_channel_34() {
        let err = mutate(|d| {
            for l in d["links"].as_array_mut().unwrap() {
                if l["system"] == "LD" {
                    l["quantum_wavelength_nm"] = 1550.92.into();
                }
            }
        })
        .unwrap_err();
        assert_eq!(err.rule(), Some("LD profile"));
    }

    #[test]
    fn unknown_endpoint_named() {
        let err = mutate(|d| d["links"][0]["endpoints"][0] = "nowhere".into()).unwrap_err();
        assert_eq!(err.rule(), Some("unknown endpoint"));
    }

    #[test]
    fn customer_needs_exactly_one_access_link() {
        let err = mutate(|d| {
            let links = d["links"].as_array_mut().unwrap();
            links.retain(|l| l["system"] != "Access");
            d["plans"] = serde_json::json!([]);
        })
        .unwrap_err();
        assert_eq!(err.rule(), Some("customer attachment"));
    }

    #[test]
    fn mu_plan_at_1310_is_clean() {
        let p = profile(QkdSystem::MU, 1310.0);
        let plan = WavelengthPlan {
            link_id: "l".into(),
            channels: vec![
                Channel { index: 1, role: ChannelRole::Quantum, wavelength_nm: 1310.0 },
                Channel { index: 2, role: ChannelRole::QkdClassical, wavelength_nm: 1550.92 },
            ],
        };
        assert!(validate_wavelength_plan(&plan, &p).is_empty());
    }

    #[test]
    fn mu_plan_at_1550_mismatches() {
        let p = profile(QkdSystem::MU, 1310.0);
        let plan = WavelengthPlan {
            link_id: "l".into(),
            channels: vec![Channel {
                index: 1,
                role: ChannelRole::Quantum,
                wavelength_nm: 1550.12,
            }],
        };
        assert_eq!(names(&validate_wavelength_plan(&plan, &p)), ["quantum wavelength mismatch"]);
    }

    #[test]
    fn duplicate_wavelength_flagged() {
        let p = profile(QkdSystem::Access, 1547.72);
        let mut plan = WavelengthPlan::standard_access("l", 1547.72);
        assert!(validate_wavelength_plan(&plan, &p).is_empty());
        plan.channels[6].wavelength_nm = plan.channels[5].wavelength_nm;
        assert_eq!(names(&validate_wavelength_plan(&plan, &p)), ["duplicate wavelength"]);
    }

    #[test]
    fn access_plan_needs_eight_slots_and_roles() {
        let p = profile(QkdSystem::Access, 1547.72);
        let mut plan = WavelengthPlan::standard_access("l", 1547.72);
        plan.channels.pop();
        assert_eq!(names(&validate_wavelength_plan(&plan, &p)), ["channel count"]);
        let mut plan = WavelengthPlan::standard_access("l", 1547.72);
        plan.channels[3].role = ChannelRole::Unused;
        assert_eq!(
            validate_wavelength_plan(&plan, &p),
            [PlanViolation::MissingRole(ChannelRole::QkdSync)]
        );
    }

    #[test]
    fn customer_to_customer_route_has_three_segments() {
        let t = load_topology(&london()).unwrap();
        let a = "customer-a";
        let b = "customer-b";
        let r = t.route_between(a, b).unwrap();
        assert_eq!(r.links.len(), 3);
        assert_eq!(t.link(&r.links[0]).unwrap().system, QkdSystem::Access);
        assert_ne!(t.link(&r.links[1]).unwrap().system, QkdSystem::Access);
        assert_eq!(t.link(&r.links[2]).unwrap().system, QkdSystem::Access);
        assert_eq!(r.origin(), a);
        assert_eq!(r.destination(), b);
        assert_eq!(t.route_between(b, a).unwrap(), r.reversed());
    }

    #[test]
    fn neighbour_route_is_one_link() {
        let t = load_topology(&london()).unwrap();
        let access = t.access_link_of("customer-a").unwrap();
        let core = access.other_end("customer-a").unwrap();
        let r = t.route_between("customer-a", core).unwrap();
        assert_eq!(r.links, vec![access.link_id.clone()]);
    }

    #[test]
    fn route_errors() {
        let t = load_topology(&london()).unwrap();
        assert_eq!(
            t.route_between("customer-a", "customer-a"),
            Err(RouteError::SameNode("customer-a".into()))
        );
        assert!(matches!(
            t.route_between("customer-a", "mars"),
            Err(RouteError::UnknownNode(_))
        ));
    }

    #[test]
    fn explicit_route_overrides_min_hop() {
        let t = load_topology(&london()).unwrap();
        let core: Vec<&LinkProfile> =
            t.links().iter().filter(|l| l.system != QkdSystem::Access).collect();
        // Force the long way round the triangle between the two ends of core[0].
        let (x, y) = core[0].endpoints.clone();
        let via = core[1..]
            .iter()
            .find(|l| l.touches(&x))
            .unwrap();
        let mid = via.other_end(&x).unwrap().to_string();
        let back = core[1..]
            .iter()
            .find(|l| l.touches(&mid) && l.touches(&y))
            .unwrap();
        let entry = RouteEntry {
            from: x.clone(),
            to: y.clone(),
            links: vec![via.link_id.clone(), back.link_id.clone()],
        };
        let t2 = Topology::from_parts(
            t.nodes().to_vec(),
            t.links().to_vec(),
            t.plans().to_vec(),
            Some(t.saes().to_vec()),
            Some(vec![entry.clone()]),
        )
        .unwrap();
        assert_eq!(t2.route_between(&x, &y).unwrap().links, entry.links);
        assert_eq!(t2.route_between(&y, &x).unwrap().links.len(), 2);
    }
}
