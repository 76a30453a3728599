//! Independent reference implementations used as test oracles. These are
//! deliberately written against the documented contracts, not against the
//! library code paths they check.

#![allow(dead_code)]

use std::collections::BTreeMap;

use saban_core::rng::SplitMix64;
use saban_core::selfies::{Atom, Bond, Element, MolGraph, SelfiesToken, SizeClass};

/// O(P*N) pair-counting AUROC: wins plus half-credit for ties.
pub fn brute_auroc(items: &[(f64, u8)]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for &(sp, lp) in items.iter().filter(|(_, l)| *l == 1) {
        let _ = lp;
        for &(sn, ln) in items.iter().filter(|(_, l)| *l == 0) {
            let _ = ln;
            pairs += 1.0;
            if sp > sn {
                wins += 1.0;
            } else if sp == sn {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Exhaustive threshold-sweep AUPRC: one full pass per distinct score.
pub fn brute_auprc(items: &[(f64, u8)]) -> f64 {
    let n_pos = items.iter().filter(|(_, l)| *l == 1).count() as f64;
    let mut thresholds: Vec<f64> = items.iter().map(|&(s, _)| s).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for &t in &thresholds {
        let mut tp = 0.0;
        let mut fp = 0.0;
        for &(s, l) in items {
            if s >= t {
                if l == 1 {
                    tp += 1.0;
                } else {
                    fp += 1.0;
                }
            }
        }
        let recall = tp / n_pos;
        let precision = tp / (tp + fp);
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    area
}

/// Brute-force bilinear fusion: scalar loops over every index of the
/// per-glimpse projection, attention, and fusion equations.
pub fn brute_ban_fusion(
    hd: &[Vec<f64>],
    ht: &[Vec<f64>],
    drug_proj: &[Vec<f64>],
    prot_proj: &[Vec<f64>],
) -> Vec<f64> {
    let n_d = hd.len();
    let n_t = ht.len();
    let r = drug_proj[0].len();
    let proj = |tokens: &[Vec<f64>], w: &[Vec<f64>]| -> Vec<Vec<f64>> {
        tokens
            .iter()
            .map(|row| {
                (0..r)
                    .map(|c| {
                        let mut s = 0.0;
                        for (k, &x) in row.iter().enumerate() {
                            s += x * w[k][c];
                        }
                        s.max(0.0)
                    })
                    .collect()
            })
            .collect()
    };
    let d = proj(hd, drug_proj);
    let t = proj(ht, prot_proj);

    // Row-wise softmax over protein tokens.
    let mut attn = vec![vec![0.0; n_t]; n_d];
    for i in 0..n_d {
        let scores: Vec<f64> = (0..n_t)
            .map(|j| (0..r).map(|c| d[i][c] * t[j][c]).sum::<f64>())
            .collect();
        let m = scores.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let exps: Vec<f64> = scores.iter().map(|&s| (s - m).exp()).collect();
        let denom: f64 = exps.iter().sum();
        for j in 0..n_t {
            attn[i][j] = exps[j] / denom;
        }
    }

    // f_c = sum_i d[i][c] * (sum_j attn[i][j] * t[j][c])
    (0..r)
        .map(|c| {
            (0..n_d)
                .map(|i| {
                    let attended: f64 = (0..n_t).map(|j| attn[i][j] * t[j][c]).sum();
                    d[i][c] * attended
                })
                .sum()
        })
        .collect()
}

/// Closed-form expectation of the discrete min-max BEDROC under a uniformly
/// random ranking of `n` actives among `total` items.
pub fn bedroc_random_expectation(total: usize, n: usize, alpha: f64) -> f64 {
    let decay = |rank: usize| (-alpha * rank as f64 / total as f64).exp();
    let all: f64 = (1..=total).map(decay).sum();
    let expected_sum = n as f64 / total as f64 * all;
    let best: f64 = (1..=n).map(decay).sum();
    let worst: f64 = (total - n + 1..=total).map(decay).sum();
    (expected_sum - worst) / (best - worst)
}

/// Reference SELFIES deriver implementing the documented grammar rules on
/// flat arrays and a bond map; output bonds are in pair order, so compare
/// with [`normalized_bonds`] on both sides.
pub fn reference_decode(tokens: &[SelfiesToken]) -> MolGraph {
    struct State {
        elements: Vec<Element>,
        free: Vec<u8>,
        bonds: BTreeMap<(usize, usize), u8>,
    }

    fn extent(size: SizeClass, q: usize) -> usize {
        match size {
            SizeClass::One => q + 1,
            SizeClass::Two => q + 17,
        }
    }

    fn derive(
        tokens: &[SelfiesToken],
        st: &mut State,
        attach: Option<usize>,
        start_budget: u8,
        depth: usize,
    ) {
        let mut cur = attach;
        let mut budget = start_budget;
        let mut i = 0;
        while i < tokens.len() {
            let allowed = match cur {
                None => 0,
                Some(c) => {
                    if cur == attach {
                        st.free[c].min(budget)
                    } else {
                        st.free[c]
                    }
                }
            };
            match tokens[i] {
                SelfiesToken::Atom { element, bond } => {
                    match cur {
                        None => {
                            st.elements.push(element);
                            st.free.push(element.max_valence());
                            cur = Some(st.elements.len() - 1);
                        }
                        Some(prev) => {
                            if allowed == 0 {
                                return; // saturated: rest of scope is dropped
                            }
                            let order = bond.order().min(allowed).min(element.max_valence());
                            st.elements.push(element);
                            let new = st.elements.len() - 1;
                            st.free.push(element.max_valence() - order);
                            st.free[prev] -= order;
                            st.bonds.insert((prev.min(new), prev.max(new)), order);
                            if cur == attach {
                                budget = budget.saturating_sub(order);
                            }
                            cur = Some(new);
                        }
                    }
                    i += 1;
                }
                SelfiesToken::Branch(size) => {
                    if i + 1 >= tokens.len() {
                        return;
                    }
                    let n = extent(size, tokens[i + 1].index_value());
                    if cur.is_none()
                        || allowed <= 1
                        || depth >= saban_core::selfies::MAX_BRANCH_DEPTH
                    {
                        i += 2;
                        continue;
                    }
                    let root = cur.unwrap();
                    let body = n.min(tokens.len() - i - 2);
                    let before = st.free[root];
                    derive(&tokens[i + 2..i + 2 + body], st, Some(root), allowed - 1, depth + 1);
                    if cur == attach {
                        budget = budget.saturating_sub(before - st.free[root]);
                    }
                    i += 2 + body;
                }
                SelfiesToken::Ring(size) => {
                    if i + 1 >= tokens.len() {
                        return;
                    }
                    let dist = extent(size, tokens[i + 1].index_value());
                    if let Some(c) = cur {
                        let partner = c.saturating_sub(dist);
                        let key = (partner.min(c), partner.max(c));
                        if partner != c
                            && allowed >= 1
                            && st.free[partner] >= 1
                            && !st.bonds.contains_key(&key)
                        {
                            st.bonds.insert(key, 1);
                            st.free[c] -= 1;
                            st.free[partner] -= 1;
                            if cur == attach {
                                budget = budget.saturating_sub(1);
                            }
                        }
                    }
                    i += 2;
                }
            }
        }
    }

    let mut st = State { elements: Vec::new(), free: Vec::new(), bonds: BTreeMap::new() };
    derive(tokens, &mut st, None, 0, 0);
    MolGraph {
        atoms: st
            .elements
            .iter()
            .map(|&e| Atom { element: e, max_valence: e.max_valence() })
            .collect(),
        bonds: st
            .bonds
            .into_iter()
            .map(|((a, b), order)| Bond { a, b, order })
            .collect(),
    }
}

/// Bonds as a sorted, direction-normalized list for order-insensitive
/// comparison.
pub fn normalized_bonds(graph: &MolGraph) -> Vec<(usize, usize, u8)> {
    let mut bonds: Vec<(usize, usize, u8)> = graph
        .bonds
        .iter()
        .map(|b| (b.a.min(b.b), b.a.max(b.b), b.order))
        .collect();
    bonds.sort_unstable();
    bonds
}

/// Random token sequence over the full drug vocabulary.
pub fn random_token_sequence(rng: &mut SplitMix64, max_len: usize) -> Vec<SelfiesToken> {
    let len = rng.next_below(max_len as u64 + 1) as usize;
    (0..len)
        .map(|_| {
            let id = rng.next_below(saban_core::selfies::DRUG_VOCAB_SIZE as u64) as usize;
            SelfiesToken::from_vocab_id(id).unwrap()
        })
        .collect()
}
