use super::*;
use crate::link_sim::{AvailabilityProfile, QkdSystemParams};
use crate::topology::{FibreConfig, LinkProfile, NodeKind, NodeSpec, QkdSystem, SaeSpec};
use proptest::prelude::*;
use rand::Rng as _;

const BLOCK_BYTES: u64 = 1250;

fn small_blocks() -> QkdSystemParams {
    QkdSystemParams {
        block_size_bits: BLOCK_BYTES * 8,
        buffer_capacity_bytes: BLOCK_BYTES * 4,
        ..Default::default()
    }
}

fn ld(id: &str, a: &str, b: &str) -> LinkProfile {
    LinkProfile {
        link_id: id.into(),
        endpoints: (a.into(), b.into()),
        system: QkdSystem::LD,
        length_km: 20.0,
        fibre_config: FibreConfig::DualFibre,
        co_propagating_data: false,
        loss_coeff_db_per_km: 0.21,
        quantum_wavelength_nm: 1550.12,
        qkd_params: small_blocks(),
        availability: AvailabilityProfile::default(),
    }
}

/// Core-only network with one SAE per node, named `<node>-sae`.
fn network(nodes: &[&str], links: &[(&str, &str, &str)], seed: u64) -> KmsNetwork {
    let specs = nodes
        .iter()
        .map(|n| NodeSpec {
            node_id: n.to_string(),
            kind: NodeKind::CoreExchange,
            secure_location: true,
        })
        .collect();
    let saes = nodes
        .iter()
        .map(|n| SaeSpec {
            sae_id: format!("{n}-sae"),
            node_id: n.to_string(),
            token: format!("{n}-token"),
        })
        .collect();
    let links = links.iter().map(|(id, a, b)| ld(id, a, b)).collect();
    let topo = Topology::from_parts(specs, links, vec![], Some(saes), None).unwrap();
    KmsNetwork::new(topo, KmsConfig::default(), AlarmThresholds::default(), seed)
}

fn chain() -> KmsNetwork {
    network(&["a", "b", "c", "d"], &[("ab", "a", "b"), ("bc", "b", "c"), ("cd", "c", "d")], 7)
}

/// Advances one link until it holds at least `blocks` blocks of free key.
fn fill(net: &mut KmsNetwork, link: &str, blocks: u64) {
    let l = net.link_mut(link).unwrap();
    for _ in 0..1000 {
        if l.ends()[0].free_bytes() >= blocks * BLOCK_BYTES {
            return;
        }
        l.advance(0.1);
    }
    panic!("{link} never reached {blocks} free blocks");
}

fn free(net: &KmsNetwork, link: &str) -> [u64; 2] {
    let e = net.link(link).unwrap().ends();
    [e[0].free_bytes(), e[1].free_bytes()]
}

#[test]
fn mint_sizes() {
    let mut net = chain();
    let k = net.mint_global_key(512, "a-sae", "d-sae").unwrap();
    assert_eq!(k.bytes.len(), 64);
    assert_eq!(k.state, KeyState::Minted);
    assert_eq!(k.origin_node, "a");
    assert_eq!(k.destination_node, "d");
    assert_eq!(net.mint_global_key(0, "a-sae", "d-sae").unwrap_err(), KmsError::SizeRejected { bits: 0 });
    assert!(matches!(net.mint_global_key(12, "a-sae", "d-sae"), Err(KmsError::SizeRejected { .. })));
    assert!(matches!(net.mint_global_key(4104, "a-sae", "d-sae"), Err(KmsError::SizeRejected { .. })));
    let k2 = net.mint_global_key(512, "a-sae", "d-sae").unwrap();
    assert_ne!(k.global_key_id, k2.global_key_id);
    assert_ne!(*k.bytes, *k2.bytes);
}

#[test]
fn state_machine_edges() {
    use KeyState::*;
    let all = [Minted, InTransit, Delivered, Consumed, Failed];
    let allowed: Vec<_> = all
        .iter()
        .flat_map(|a| all.iter().map(move |b| (*a, *b)))
        .filter(|(a, b)| a.can_become(*b))
        .collect();
    assert_eq!(
        allowed,
        vec![
            (Minted, InTransit),
            (Minted, Failed),
            (InTransit, Delivered),
            (InTransit, Failed),
            (Delivered, Consumed),
            (Delivered, Failed)
        ]
    );
}

#[test]
fn three_hop_delivery_matches_origin() {
    let mut net = chain();
    for l in ["ab", "bc", "cd"] {
        fill(&mut net, l, 2);
    }
    let key = net.mint_global_key(512, "a-sae", "d-sae").unwrap();
    let original = key.bytes.to_vec();
    let id = key.global_key_id;
    let route = net.topology().route_between("a", "d").unwrap();
    let before: Vec<_> = ["ab", "bc", "cd"].iter().map(|l| free(&net, l)).collect();
    let out = net.relay_global_key(key, &route).unwrap();
    assert_eq!(out.hops, 3);
    assert_eq!(out.pad_bytes_per_hop, 64);
    for (l, b) in ["ab", "bc", "cd"].iter().zip(before) {
        assert_eq!(free(&net, l), [b[0] - 64, b[1] - 64], "{l}");
    }
    let stored: Vec<_> = net.node("d").unwrap().key_store().collect();
    assert_eq!(stored.len(), 1);
    assert_eq!(*stored[0].bytes, original);
    assert_eq!(net.key_record(&id).unwrap().state, KeyState::Delivered);
    for transit in ["b", "c"] {
        let n = net.node(transit).unwrap();
        assert_eq!(n.key_store().count() + n.master_copies().count(), 0);
    }
    assert!(net.pad_audit().is_clean());
}

#[test]
fn one_hop_consumes_exactly_key_length() {
    let mut net = chain();
    fill(&mut net, "ab", 1);
    let key = net.mint_global_key(1024, "a-sae", "b-sae").unwrap();
    let route = net.topology().route_between("a", "b").unwrap();
    net.relay_global_key(key, &route).unwrap();
    assert_eq!(net.link("ab").unwrap().consumed_bytes(), [128, 128]);
}

#[test]
fn down_link_breaks_route() {
    let mut net = chain();
    for l in ["ab", "bc", "cd"] {
        fill(&mut net, l, 1);
    }
    net.set_link_status("cd", LinkStatus::Down).unwrap();
    let err = net.establish_key(512, "a-sae", "d-sae").unwrap_err();
    assert_eq!(err, KmsError::RouteBroken { link: "cd".into() });
    let alarms = net.drain_alarms();
    assert_eq!(alarms.len(), 1);
    assert_eq!(alarms[0].0, "a");
    assert_eq!(alarms[0].1.kind, EventKind::RelayFailed);
}

/// Reference walk of the relay state machine over free-byte counters.
struct RefWalk {
    free: BTreeMap<String, u64>,
    consumed: BTreeMap<String, u64>,
}

impl RefWalk {
    fn relay(&mut self, links: &[String], n: u64) -> Result<(), (usize, String)> {
        for (i, l) in links.iter().enumerate() {
            let f = self.free.get_mut(l).unwrap();
            if *f < n {
                return Err((i + 1, l.clone()));
            }
            *f -= n;
            *self.consumed.get_mut(l).unwrap() += n;
        }
        Ok(())
    }
}

#[test]
fn empty_middle_link_fails_at_hop_two() {
    let mut net = chain();
    fill(&mut net, "ab", 1);
    fill(&mut net, "cd", 1);
    let key = net.mint_global_key(512, "a-sae", "d-sae").unwrap();
    let id = key.global_key_id;
    let route = net.topology().route_between("a", "d").unwrap();
    let mut reference = RefWalk {
        free: ["ab", "bc", "cd"].iter().map(|l| (l.to_string(), free(&net, l)[0])).collect(),
        consumed: ["ab", "bc", "cd"].iter().map(|l| (l.to_string(), 0)).collect(),
    };
    assert_eq!(reference.relay(&route.links, 64), Err((2, "bc".to_string())));

    let err = net.relay_global_key(key, &route).unwrap_err();
    assert_eq!(
        err,
        KmsError::InsufficientKeyMaterial {
            hop: 2,
            link: "bc".into()
        }
    );
    assert_eq!(net.key_record(&id).unwrap().state, KeyState::Failed);
    for l in ["ab", "bc", "cd"] {
        let c = reference.consumed[l];
        assert_eq!(net.link(l).unwrap().consumed_bytes(), [c, c], "{l}");
    }
    assert_eq!(net.link("ab").unwrap().consumed_bytes(), [64, 64]);
    assert_eq!(net.node("d").unwrap().key_store().count(), 0);
    assert!(net.pad_audit().is_clean());
}

#[test]
fn random_schedules_follow_reference_walk() {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    for round in 0..20 {
        let mut net = chain();
        let links = ["ab", "bc", "cd"];
        for l in links {
            let blocks = rng.gen_range(0..3);
            if blocks > 0 {
                fill(&mut net, l, blocks);
            }
        }
        let mut reference = RefWalk {
            free: links.iter().map(|l| (l.to_string(), free(&net, l)[0])).collect(),
            consumed: links.iter().map(|l| (l.to_string(), 0)).collect(),
        };
        let nodes = ["a", "b", "c", "d"];
        for _ in 0..40 {
            let i = rng.gen_range(0..4);
            let mut j = rng.gen_range(0..4);
            while j == i {
                j = rng.gen_range(0..4);
            }
            let bits = 8 * rng.gen_range(1..=128u32);
            let master = format!("{}-sae", nodes[i]);
            let slave = format!("{}-sae", nodes[j]);
            let route = net.topology().route_between(nodes[i], nodes[j]).unwrap();
            let expected = reference.relay(&route.links, bits as u64 / 8);
            let got = net.establish_key(bits, &master, &slave);
            match (expected, got) {
                (Ok(()), Ok(o)) => assert_eq!(o.hops, route.links.len()),
                (Err((hop, link)), Err(KmsError::InsufficientKeyMaterial { hop: h, link: l })) => {
                    assert_eq!((hop, link), (h, l), "round {round}")
                }
                (e, g) => panic!("round {round}: reference {e:?}, network {g:?}"),
            }
        }
        for l in links {
            let c = reference.consumed[l];
            assert_eq!(net.link(l).unwrap().consumed_bytes(), [c, c], "round {round} {l}");
            assert_eq!(free(&net, l), [reference.free[l]; 2]);
        }
        assert!(net.pad_audit().is_clean());
    }
}

#[test]
fn thousand_random_keys_round_trip() {
    let mut net = chain();
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let len = rng.gen_range(1..=256);
        let mut key = vec![0u8; len];
        rand::RngCore::fill_bytes(&mut rng, &mut key);
        if net.link("ab").unwrap().ends()[0].free_bytes() < len as u64 {
            fill(&mut net, "ab", 1);
        }
        let id = Uuid::from_u128(rng.gen());
        let link = net.link_mut("ab").unwrap();
        let env = otp_encapsulate(id, &key, link, "a").unwrap();
        assert_eq!(env.ciphertext.len(), len);
        assert_eq!(env.pad_len(), len as u64);
        let wire = KeyEnvelope::decode(&env.encode().unwrap()).unwrap();
        assert_eq!(otp_decapsulate(&wire, link, "b").unwrap(), key);
    }
    assert!(net.link("ab").unwrap().mirrors_identical());
}

#[test]
fn replay_and_tamper_are_rejected() {
    let mut net = chain();
    fill(&mut net, "ab", 1);
    let link = net.link_mut("ab").unwrap();
    let env = otp_encapsulate(Uuid::nil(), &[0xAA; 32], link, "a").unwrap();
    let mut shifted = env.clone();
    shifted.pad_refs[0].start += 1;
    assert!(matches!(otp_decapsulate(&shifted, link, "b"), Err(KmsError::PadUnavailable { .. })));
    let mut short = env.clone();
    short.pad_refs[0].len -= 1;
    assert!(matches!(otp_decapsulate(&short, link, "b"), Err(KmsError::PadUnavailable { .. })));
    let mut foreign = env.clone();
    foreign.pad_refs[0].key_id = Uuid::from_u128(5);
    assert!(matches!(otp_decapsulate(&foreign, link, "b"), Err(KmsError::PadUnavailable { .. })));
    assert_eq!(otp_decapsulate(&env, link, "b").unwrap(), vec![0xAA; 32]);
    assert!(matches!(otp_decapsulate(&env, link, "b"), Err(KmsError::PadUnavailable { .. })));
}

#[test]
fn encapsulation_without_key_consumes_nothing() {
    let mut net = chain();
    let link = net.link_mut("bc").unwrap();
    let err = otp_encapsulate(Uuid::nil(), &[1; 8], link, "b").unwrap_err();
    assert!(matches!(err, KmsError::InsufficientKeyMaterial { .. }));
    assert_eq!(link.consumed_bytes(), [0, 0]);
}

#[test]
fn same_key_under_fresh_pads_differs() {
    let mut net = chain();
    fill(&mut net, "ab", 2);
    let link = net.link_mut("ab").unwrap();
    let key = [0x5c; 64];
    let cts: BTreeSet<Vec<u8>> = (0..20)
        .map(|_| otp_encapsulate(Uuid::nil(), &key, link, "a").unwrap().ciphertext)
        .collect();
    assert_eq!(cts.len(), 20);
}

#[test]
fn inventory_counts_follow_issue_and_redeem() {
    let mut net = chain();
    fill(&mut net, "ab", 1);
    let inv = net.pair_inventory("a-sae", "b-sae").unwrap();
    assert_eq!(inv.stored_key_count, 0);
    assert!(net.inventory("a").iter().all(|p| p.stored_key_count == 0));
    net.establish_key(512, "a-sae", "b-sae").unwrap();
    assert_eq!(net.pair_inventory("a-sae", "b-sae").unwrap().stored_key_count, 1);
    let issued = net.issue_to_master("a-sae", "b-sae", 1, 512, false).unwrap();
    let inv = net.pair_inventory("a-sae", "b-sae").unwrap();
    assert_eq!((inv.stored_key_count, inv.awaiting_slave), (0, 1));
    let (id, bytes) = &issued[0];
    let redeemed = net.redeem_at_slave("b-sae", "a-sae", &[*id]).unwrap();
    assert_eq!(*redeemed[0].1, **bytes);
    assert_eq!(net.key_record(id).unwrap().state, KeyState::Consumed);
    assert_eq!(net.redeem_at_slave("b-sae", "a-sae", &[*id]).unwrap_err(), KmsError::AlreadyRedeemed(*id));
    let unknown = Uuid::from_u128(99);
    assert_eq!(net.redeem_at_slave("b-sae", "a-sae", &[unknown]).unwrap_err(), KmsError::UnknownKeyId(unknown));
    assert_eq!(net.pair_inventory("a-sae", "b-sae").unwrap().awaiting_slave, 0);
}

#[test]
fn unissued_keys_are_not_redeemable() {
    let mut net = chain();
    fill(&mut net, "ab", 1);
    let out = net.establish_key(512, "a-sae", "b-sae").unwrap();
    assert_eq!(
        net.redeem_at_slave("b-sae", "a-sae", &[out.global_key_id]).unwrap_err(),
        KmsError::UnknownKeyId(out.global_key_id)
    );
}

#[test]
fn issue_is_all_or_nothing() {
    let mut net = chain();
    fill(&mut net, "ab", 1);
    net.establish_key(512, "a-sae", "b-sae").unwrap();
    let err = net.issue_to_master("a-sae", "b-sae", 2, 512, false).unwrap_err();
    assert_eq!(err, KmsError::InsufficientKeys { requested: 2, available: 1 });
    assert_eq!(net.pair_inventory("a-sae", "b-sae").unwrap().stored_key_count, 1);
    assert!(net.issue_to_master("a-sae", "b-sae", 0, 512, false).unwrap().is_empty());
    assert_eq!(net.issue_to_master("a-sae", "b-sae", 3, 512, true).unwrap().len(), 3);
}

#[test]
fn envelopes_cross_a_tcp_stream() {
    struct Tcp {
        tx: std::net::TcpStream,
        rx: std::net::TcpStream,
    }
    impl EnvelopeChannel for Tcp {
        fn transfer(&mut self, _: &str, _: &str, message: Vec<u8>) -> Result<Vec<u8>, KmsError> {
            use std::io::Write;
            self.tx.write_all(&message).map_err(|e| KmsError::Transport(e.to_string()))?;
            let env = read_envelope(&mut self.rx).map_err(|e| KmsError::Transport(e.to_string()))?;
            Ok(env.encode()?)
        }
    }
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let tx = std::net::TcpStream::connect(listener.local_addr().unwrap()).unwrap();
    let (rx, _) = listener.accept().unwrap();
    let mut net = chain().with_channel(Box::new(Tcp { tx, rx }));
    for l in ["ab", "bc", "cd"] {
        fill(&mut net, l, 1);
    }
    net.establish_key(256, "d-sae", "a-sae").unwrap();
    assert_eq!(net.node("a").unwrap().key_store().count(), 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pads_never_reused_and_keys_live_in_one_store(
        ops in prop::collection::vec((0usize..4, 0usize..4, 1u32..=64, 0u8..4), 1..40)
    ) {
        let mut net = chain();
        let nodes = ["a", "b", "c", "d"];
        for (i, j, bytes, refill) in ops {
            if refill == 0 {
                for l in ["ab", "bc", "cd"] {
                    net.link_mut(l).unwrap().advance(0.3);
                }
            }
            if i == j {
                continue;
            }
            let _ = net.establish_key(bytes * 8, &format!("{}-sae", nodes[i]), &format!("{}-sae", nodes[j]));
        }
        let audit = net.pad_audit();
        prop_assert!(audit.is_clean(), "{:?}", audit);
        prop_assert!(net.key_store_locations().values().all(|v| v.len() == 1));
        for l in net.links() {
            prop_assert!(l.mirrors_identical());
        }
    }
}
