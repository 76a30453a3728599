//! Decoder totality fuzz and agreement with the reference deriver.

mod common;

use saban_core::selfies::{decode, validate};
use saban_core::rng::SplitMix64;

#[test]
fn every_random_token_sequence_decodes_to_a_valid_graph() {
    let mut rng = SplitMix64::new(0xF022);
    for trial in 0..100_000u64 {
        let tokens = common::random_token_sequence(&mut rng, 60);
        let (graph, _) = decode(&tokens);
        assert!(
            validate(&graph),
            "trial {trial}: invalid graph from {:?}",
            tokens.iter().map(|t| t.text()).collect::<String>()
        );
    }
}

#[test]
fn decoder_agrees_with_reference_deriver() {
    let mut rng = SplitMix64::new(0xACE5);
    for trial in 0..20_000u64 {
        let tokens = common::random_token_sequence(&mut rng, 40);
        let (graph, _) = decode(&tokens);
        let reference = common::reference_decode(&tokens);
        let text: String = tokens.iter().map(|t| t.text()).collect();
        assert_eq!(
            graph.atoms, reference.atoms,
            "trial {trial}: atom mismatch for {text}"
        );
        assert_eq!(
            common::normalized_bonds(&graph),
            common::normalized_bonds(&reference),
            "trial {trial}: bond mismatch for {text}"
        );
    }
}

#[test]
fn pathologically_nested_branches_still_decode() {
    // One opening branch per level; far deeper than the nesting cap.
    let unit = "[S][Branch1][Br]"; // [Br] indexes the maximum extent 16
    let text: String = unit.repeat(200_000 / 3);
    let tokens = saban_core::selfies::tokenize(&text).unwrap();
    let (graph, _) = decode(&tokens);
    assert!(validate(&graph));
    assert!(!graph.atoms.is_empty());
}

#[test]
fn decoding_is_deterministic() {
    let mut rng = SplitMix64::new(0xDE7E);
    for _ in 0..2_000 {
        let tokens = common::random_token_sequence(&mut rng, 50);
        let (a, da) = decode(&tokens);
        let (b, db) = decode(&tokens);
        assert_eq!(a, b);
        assert_eq!(da, db);
    }
}
