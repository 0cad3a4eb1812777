#![allow(dead_code)]

use std::path::PathBuf;

use qsmn::kms::{KmsConfig, KmsNetwork};
use qsmn::link_sim::{AvailabilityProfile, QkdSystemParams};
use qsmn::runner::Scenario;
use qsmn::telemetry::AlarmThresholds;
use qsmn::topology::{FibreConfig, LinkProfile, NodeKind, NodeSpec, QkdSystem, SaeSpec, Topology};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Deserialize;

pub fn examples_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples")
}

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("data")
}

/// An example scenario with its output files stripped.
pub fn example_scenario(name: &str) -> Scenario {
    let mut s = Scenario::load(examples_dir().join(name)).unwrap();
    s.outputs = Default::default();
    s
}

#[derive(Debug, Deserialize)]
pub struct OracleInput {
    pub clock: f64,
    pub mu: f64,
    pub det_eff: f64,
    pub dark: f64,
    pub mis: f64,
    pub f: f64,
    pub raman: f64,
    pub eps: f64,
    pub block: u64,
    pub system: String,
    pub length: f64,
    pub loss: f64,
    pub wavelength: f64,
    pub co_prop: bool,
}

#[derive(Debug, Deserialize)]
pub struct OraclePoint {
    pub input: OracleInput,
    pub transmittance: f64,
    pub qber: f64,
    pub secret_key_rate: f64,
    pub finite_key_rate: f64,
}

pub fn oracle_points() -> Vec<OraclePoint> {
    let doc = std::fs::read_to_string(data_dir().join("rate_oracle.json")).unwrap();
    serde_json::from_str(&doc).unwrap()
}

impl OracleInput {
    pub fn profile(&self) -> (LinkProfile, QkdSystemParams) {
        let params = QkdSystemParams {
            clock_rate_hz: self.clock,
            mean_photon_number: self.mu,
            detector_efficiency: self.det_eff,
            dark_count_prob_per_gate: self.dark,
            misalignment_error: self.mis,
            error_correction_inefficiency: self.f,
            raman_noise_per_gate: self.raman,
            failure_probability: self.eps,
            block_size_bits: self.block,
            ..Default::default()
        };
        let system = match self.system.as_str() {
            "LD" => QkdSystem::LD,
            "MU" => QkdSystem::MU,
            _ => QkdSystem::Access,
        };
        let profile = LinkProfile {
            link_id: "oracle".into(),
            endpoints: ("x".into(), "y".into()),
            system,
            length_km: self.length,
            fibre_config: FibreConfig::DualFibre,
            co_propagating_data: self.co_prop,
            loss_coeff_db_per_km: self.loss,
            quantum_wavelength_nm: self.wavelength,
            qkd_params: params.clone(),
            availability: AvailabilityProfile::default(),
        };
        (profile, params)
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs())
}

pub fn ld_profile(length_km: f64) -> LinkProfile {
    LinkProfile {
        link_id: "ld".into(),
        endpoints: ("x".into(), "y".into()),
        system: QkdSystem::LD,
        length_km,
        fibre_config: FibreConfig::DualFibre,
        co_propagating_data: false,
        loss_coeff_db_per_km: 0.21,
        quantum_wavelength_nm: 1550.12,
        qkd_params: QkdSystemParams::default(),
        availability: AvailabilityProfile::default(),
    }
}

pub const SMALL_BLOCK_BYTES: u64 = 1250;

/// Random connected core-only network of `n` nodes with one SAE per node
/// (`n<i>-sae`). Links use small blocks so buffers fill within a second.
pub fn random_network<R: Rng>(rng: &mut R, n: usize, seed: u64) -> KmsNetwork {
    let names: Vec<String> = (0..n).map(|i| format!("n{i}")).collect();
    let mut order = names.clone();
    order.shuffle(rng);
    let mut edges = std::collections::BTreeSet::new();
    // Random spanning tree, then a few chords.
    for i in 1..n {
        let parent = rng.gen_range(0..i);
        let (a, b) = (order[parent].clone(), order[i].clone());
        edges.insert(if a < b { (a, b) } else { (b, a) });
    }
    for _ in 0..rng.gen_range(0..=n) {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a != b {
            let (a, b) = (names[a].clone(), names[b].clone());
            edges.insert(if a < b { (a, b) } else { (b, a) });
        }
    }
    let params = QkdSystemParams {
        block_size_bits: SMALL_BLOCK_BYTES * 8,
        buffer_capacity_bytes: SMALL_BLOCK_BYTES * 16,
        ..Default::default()
    };
    let links = edges
        .iter()
        .map(|(a, b)| LinkProfile {
            link_id: format!("{a}-{b}"),
            endpoints: (a.clone(), b.clone()),
            system: QkdSystem::LD,
            length_km: rng.gen_range(5.0..60.0),
            fibre_config: FibreConfig::DualFibre,
            co_propagating_data: false,
            loss_coeff_db_per_km: 0.21,
            quantum_wavelength_nm: 1550.12,
            qkd_params: params.clone(),
            availability: AvailabilityProfile::default(),
        })
        .collect();
    let nodes = names
        .iter()
        .map(|n| NodeSpec {
            node_id: n.clone(),
            kind: NodeKind::CoreExchange,
            secure_location: true,
        })
        .collect();
    let saes = names
        .iter()
        .map(|n| SaeSpec {
            sae_id: format!("{n}-sae"),
            node_id: n.clone(),
            token: format!("{n}-token"),
        })
        .collect();
    let topology = Topology::from_parts(nodes, links, vec![], Some(saes), None).unwrap();
    KmsNetwork::new(topology, KmsConfig::default(), AlarmThresholds::default(), seed)
}

/// Relays one key for every ordered SAE pair and checks the bytes the
/// slave redeems equal the bytes minted for the master. Returns the number
/// of pairs checked.
pub fn check_all_pairs(net: &mut KmsNetwork, size_bits: u32) -> Result<usize, String> {
    let saes: Vec<String> = net.topology().saes().iter().map(|s| s.sae_id.clone()).collect();
    let mut checked = 0;
    for m in &saes {
        for s in &saes {
            if m == s {
                continue;
            }
            net.advance(0.5);
            let minted = net
                .issue_to_master(m, s, 1, size_bits, true)
                .map_err(|e| format!("{m}->{s}: issue failed: {e}"))?;
            let (id, master_bytes) = &minted[0];
            let delivered = net
                .redeem_at_slave(s, m, &[*id])
                .map_err(|e| format!("{m}->{s}: redeem failed: {e}"))?;
            if delivered[0].1.as_slice() != master_bytes.as_slice() {
                return Err(format!("{m}->{s}: delivered bytes differ from minted bytes"));
            }
            checked += 1;
        }
    }
    Ok(checked)
}
