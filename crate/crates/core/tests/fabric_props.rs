use proptest::prelude::*;

use qhsm_core::fabric::{AdversarySpec, Delivery, FrameKind, Matcher, PartyPattern, Rule, RuleAction};
use qhsm_core::group::DomainParams;
use qhsm_core::host::{QuorumConfig, Setup};
use qhsm_core::ids::{HostId, KeyId, NodeId};
use qhsm_core::fabric::Action;
use qhsm_core::multisig;
use qhsm_core::wire::{Dest, Envelope, Opcode, Party};

fn pattern() -> impl Strategy<Value = Option<PartyPattern>> {
    prop_oneof![
        Just(None),
        Just(Some(PartyPattern::AnyHost)),
        Just(Some(PartyPattern::AnyNode)),
        (1u16..=3).prop_map(|n| Some(PartyPattern::Node(NodeId(n)))),
        Just(Some(PartyPattern::Broadcast)),
    ]
}

fn opcode() -> impl Strategy<Value = Option<Opcode>> {
    prop_oneof![
        Just(None),
        prop::sample::select(Opcode::ALL.to_vec()).prop_map(Some),
    ]
}

fn kind() -> impl Strategy<Value = Option<FrameKind>> {
    prop_oneof![
        Just(None),
        Just(Some(FrameKind::Command)),
        Just(Some(FrameKind::Response)),
    ]
}

fn mutation() -> impl Strategy<Value = RuleAction> {
    prop_oneof![
        (any::<usize>(), 1u8..=255).prop_map(|(offset, xor)| RuleAction::Modify { offset, xor }),
        Just(RuleAction::Tamper),
    ]
}

fn rule() -> impl Strategy<Value = Rule> {
    (pattern(), pattern(), opcode(), kind(), mutation(), 0.2f64..=1.0).prop_map(|(src, dst, opcode, kind, action, p)| {
        let mut r = Rule::new(Matcher { src, dst, opcode, kind }, action);
        r.probability = p;
        r
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// Without collusion every mutated envelope fails authentication at
    /// each recipient, and whatever the host still completes is correct.
    #[test]
    fn mutations_are_always_detected(rules in prop::collection::vec(rule(), 1..3), seed in any::<u64>()) {
        let p = DomainParams::transparent(257).unwrap();
        let spec = AdversarySpec { rules, seed, ..Default::default() };
        let (mut fab, mut host) = Setup::with_nodes(p, 3, seed).adversary(spec).build().unwrap();
        let q = QuorumConfig::range(1, 1, 3);
        let k = KeyId::from_label("fuzz");
        if let Ok(qk) = host.dkpg(&mut fab, &q, k) {
            if let Ok(ct) = host.encrypt_bytes(&q, k, &[42]) {
                if let Ok(m) = host.decrypt_bytes(&mut fab, &q, k, &ct) {
                    prop_assert_eq!(m, vec![42]);
                }
            }
            if host.cache(&mut fab, &q, k, 1).is_ok() {
                if let Ok(sig) = host.sign(&mut fab, &q, k, b"msg") {
                    prop_assert!(multisig::verify(&p, &qk.aggregate, b"msg", &sig));
                }
            }
        }
        while !fab.is_idle() {
            fab.step();
        }

        let nodes = fab.node_ids();
        let (mut to_nodes, mut to_host) = (0u64, 0u64);
        for r in fab.transcript().records() {
            if !matches!(r.action, Action::Modified(_) | Action::Tampered(_)) {
                continue;
            }
            let env = Envelope::decode(&r.bytes).unwrap();
            match env.dst {
                Dest::Broadcast => {
                    to_nodes += nodes.iter().filter(|n| env.src != Party::Node(**n)).count() as u64
                }
                Dest::To(Party::Node(n)) if nodes.contains(&n) => to_nodes += 1,
                Dest::To(Party::Host(_)) => to_host += 1,
                Dest::To(_) => {}
            }
        }
        let node_rejects: u64 = fab.nodes().map(|n| n.stats().rejected_auth).sum();
        prop_assert_eq!(node_rejects, to_nodes);

        // replies still sitting in the host inbox were never looked at
        let mut leftover_bad = 0u64;
        for d in fab.take_inbox(HostId(0)) {
            if let Delivery::Envelope(e) = d {
                let Party::Node(n) = e.src else { continue };
                let vk = fab.node(n).unwrap().verifying_key();
                if !(e.verify(&vk) && e.frame().is_ok_and(|f| f.verify(&vk))) {
                    leftover_bad += 1;
                }
            }
        }
        prop_assert_eq!(host.stats().rejected_auth + leftover_bad, to_host);
    }
}
