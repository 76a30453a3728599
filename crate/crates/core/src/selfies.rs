//! SELFIES tokenizer and decoder.
//!
//! Implements the core derivation rules of the SELFIES grammar for a fixed
//! drug-like vocabulary: atoms {C, N, O, S, P, F, Cl, Br, I, H} with bond
//! prefixes {none, =, #}, plus `Branch1`/`Branch2` and `Ring1`/`Ring2`
//! markers that each consume one following index token.
//!
//! Decoding is total: every token sequence derives a chemically valid
//! molecular graph because bond orders, branch lengths, and ring distances
//! are clamped to what the remaining valence and the already-derived graph
//! allow. Anything clamped or skipped is reported as a diagnostic rather
//! than an error.
//!
//! Derivation rules, in full:
//!
//! 1. An atom token bonds the new atom to the current atom with order
//!    `min(prefix order, free valence of current, valence of new atom)`.
//!    At the start of a chain the prefix is ignored and the atom is placed
//!    unbonded. If the current atom has no free valence the chain is
//!    saturated and the rest of the scope is skipped.
//! 2. A branch marker reads one index token (`q = vocab_id mod 16`) giving
//!    a body length of `q + 1` (`Branch1`) or `q + 17` (`Branch2`). The body
//!    is derived as a sub-chain attached to the current atom, which must
//!    keep one valence slot for the main chain (so branches need free
//!    valence of at least 2; otherwise marker and index are skipped and the
//!    would-be body continues the current chain).
//! 3. A ring marker reads one index token giving a backward distance of
//!    `q + 1` (`Ring1`) or `q + 17` (`Ring2`) in atom-placement order and
//!    adds a single bond from the current atom to that partner. Rings that
//!    would self-bond, exceed valence, or duplicate an existing bond are
//!    dropped with a diagnostic; distances past the first atom clamp to it.
//! 4. A marker at the very end of a scope has no index token and is skipped.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SelfiesError {
    #[error("unbalanced bracket at byte offset {offset}")]
    UnbalancedBracket { offset: usize },
    #[error("unknown token {text:?} at byte offset {offset}")]
    UnknownToken { text: String, offset: usize },
    #[error("drug token sequence must contain at least one token")]
    EmptySequence,
    #[error("token id {id} is outside the drug vocabulary (size {size})")]
    IdOutOfRange { id: usize, size: usize },
}

/// Supported elements with their standard maximum valences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Element {
    C,
    N,
    O,
    S,
    P,
    F,
    Cl,
    Br,
    I,
    H,
}

pub const ELEMENTS: [Element; 10] = [
    Element::C,
    Element::N,
    Element::O,
    Element::S,
    Element::P,
    Element::F,
    Element::Cl,
    Element::Br,
    Element::I,
    Element::H,
];

impl Element {
    pub fn max_valence(self) -> u8 {
        match self {
            Element::C => 4,
            Element::N => 3,
            Element::O => 2,
            Element::S => 6,
            Element::P => 5,
            Element::F | Element::Cl | Element::Br | Element::I | Element::H => 1,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::S => "S",
            Element::P => "P",
            Element::F => "F",
            Element::Cl => "Cl",
            Element::Br => "Br",
            Element::I => "I",
            Element::H => "H",
        }
    }

    fn from_symbol(s: &str) -> Option<Self> {
        ELEMENTS.iter().copied().find(|e| e.symbol() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BondOrder {
    Single = 1,
    Double = 2,
    Triple = 3,
}

impl BondOrder {
    pub fn order(self) -> u8 {
        self as u8
    }

    fn prefix(self) -> &'static str {
        match self {
            BondOrder::Single => "",
            BondOrder::Double => "=",
            BondOrder::Triple => "#",
        }
    }
}

/// Size class of a branch or ring marker; selects the range its single
/// index token addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SizeClass {
    One,
    Two,
}

impl SizeClass {
    /// Length/distance encoded by index `q` in `[0, 16)`.
    fn extent(self, q: usize) -> usize {
        match self {
            SizeClass::One => q + 1,
            SizeClass::Two => q + 17,
        }
    }

    fn digit(self) -> &'static str {
        match self {
            SizeClass::One => "1",
            SizeClass::Two => "2",
        }
    }
}

/// One bracket-delimited SELFIES token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SelfiesToken {
    Atom { element: Element, bond: BondOrder },
    Branch(SizeClass),
    Ring(SizeClass),
}

/// Number of index values a single index token can encode.
pub const INDEX_ALPHABET_SIZE: usize = 16;

impl SelfiesToken {
    /// Canonical bracketed text of the token.
    pub fn text(self) -> String {
        match self {
            SelfiesToken::Atom { element, bond } => {
                format!("[{}{}]", bond.prefix(), element.symbol())
            }
            SelfiesToken::Branch(s) => format!("[Branch{}]", s.digit()),
            SelfiesToken::Ring(s) => format!("[Ring{}]", s.digit()),
        }
    }

    /// Position in the fixed drug vocabulary: atoms in element order, each
    /// with the three bond prefixes, then the four markers.
    pub fn vocab_id(self) -> usize {
        match self {
            SelfiesToken::Atom { element, bond } => {
                let ei = ELEMENTS.iter().position(|&e| e == element).unwrap();
                ei * 3 + (bond.order() as usize - 1)
            }
            SelfiesToken::Branch(SizeClass::One) => 30,
            SelfiesToken::Branch(SizeClass::Two) => 31,
            SelfiesToken::Ring(SizeClass::One) => 32,
            SelfiesToken::Ring(SizeClass::Two) => 33,
        }
    }

    pub fn from_vocab_id(id: usize) -> Option<Self> {
        match id {
            0..=29 => Some(SelfiesToken::Atom {
                element: ELEMENTS[id / 3],
                bond: match id % 3 {
                    0 => BondOrder::Single,
                    1 => BondOrder::Double,
                    _ => BondOrder::Triple,
                },
            }),
            30 => Some(SelfiesToken::Branch(SizeClass::One)),
            31 => Some(SelfiesToken::Branch(SizeClass::Two)),
            32 => Some(SelfiesToken::Ring(SizeClass::One)),
            33 => Some(SelfiesToken::Ring(SizeClass::Two)),
            _ => None,
        }
    }

    /// Value of this token when read as an index token.
    pub fn index_value(self) -> usize {
        self.vocab_id() % INDEX_ALPHABET_SIZE
    }
}

/// Total number of tokens in the drug vocabulary.
pub const DRUG_VOCAB_SIZE: usize = 34;

/// The full drug vocabulary in id order.
pub fn vocabulary() -> Vec<SelfiesToken> {
    (0..DRUG_VOCAB_SIZE).map(|id| SelfiesToken::from_vocab_id(id).unwrap()).collect()
}

/// Ordered list of drug-vocabulary token ids; never empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DrugTokenSeq(Vec<usize>);

impl DrugTokenSeq {
    pub fn new(ids: Vec<usize>) -> Result<Self, SelfiesError> {
        if ids.is_empty() {
            return Err(SelfiesError::EmptySequence);
        }
        for &id in &ids {
            if id >= DRUG_VOCAB_SIZE {
                return Err(SelfiesError::IdOutOfRange { id, size: DRUG_VOCAB_SIZE });
            }
        }
        Ok(Self(ids))
    }

    pub fn from_tokens(tokens: &[SelfiesToken]) -> Result<Self, SelfiesError> {
        Self::new(tokens.iter().map(|t| t.vocab_id()).collect())
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false // non-empty by construction
    }
}

/// Greedy left-to-right split into bracketed tokens. Concatenating the
/// texts of the returned tokens reproduces the input exactly.
pub fn tokenize(selfies: &str) -> Result<Vec<SelfiesToken>, SelfiesError> {
    let bytes = selfies.as_bytes();
    let mut tokens = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        if bytes[pos] != b'[' {
            return Err(SelfiesError::UnbalancedBracket { offset: pos });
        }
        let close = bytes[pos..]
            .iter()
            .position(|&b| b == b']')
            .ok_or(SelfiesError::UnbalancedBracket { offset: pos })?
            + pos;
        let inner = &selfies[pos + 1..close];
        let token = parse_token(inner).ok_or_else(|| SelfiesError::UnknownToken {
            text: selfies[pos..=close].to_string(),
            offset: pos,
        })?;
        tokens.push(token);
        pos = close + 1;
    }
    Ok(tokens)
}

fn parse_token(inner: &str) -> Option<SelfiesToken> {
    match inner {
        "Branch1" => return Some(SelfiesToken::Branch(SizeClass::One)),
        "Branch2" => return Some(SelfiesToken::Branch(SizeClass::Two)),
        "Ring1" => return Some(SelfiesToken::Ring(SizeClass::One)),
        "Ring2" => return Some(SelfiesToken::Ring(SizeClass::Two)),
        _ => {}
    }
    let (bond, rest) = match inner.strip_prefix('=') {
        Some(r) => (BondOrder::Double, r),
        None => match inner.strip_prefix('#') {
            Some(r) => (BondOrder::Triple, r),
            None => (BondOrder::Single, inner),
        },
    };
    Element::from_symbol(rest).map(|element| SelfiesToken::Atom { element, bond })
}

/// An atom of the decoded graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Atom {
    pub element: Element,
    pub max_valence: u8,
}

/// An undirected bond between two atom indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: u8,
}

/// Decoded molecular graph. Atoms appear in derivation order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MolGraph {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
}

/// True iff every graph invariant holds: indices in range, no self-bonds,
/// no duplicate bonds, bond orders in {1,2,3}, and the sum of incident bond
/// orders within each atom's maximum valence.
pub fn validate(graph: &MolGraph) -> bool {
    let n = graph.atoms.len();
    let mut load = vec![0u32; n];
    let mut seen = std::collections::HashSet::new();
    for bond in &graph.bonds {
        if bond.a >= n || bond.b >= n || bond.a == bond.b {
            return false;
        }
        if !(1..=3).contains(&bond.order) {
            return false;
        }
        let key = (bond.a.min(bond.b), bond.a.max(bond.b));
        if !seen.insert(key) {
            return false;
        }
        load[bond.a] += u32::from(bond.order);
        load[bond.b] += u32::from(bond.order);
    }
    graph.atoms.iter().zip(&load).all(|(atom, &l)| l <= u32::from(atom.max_valence))
}

/// Branch nesting bound; deeper branch markers are skipped so decoding
/// stays total on arbitrarily long inputs.
pub const MAX_BRANCH_DEPTH: usize = 128;

/// Why a decode step deviated from the literal token sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeEventKind {
    /// Bond prefix on the first atom of a chain has nothing to bond to.
    LeadingBondIgnored,
    /// Requested bond order reduced to fit the remaining valence.
    BondClamped { requested: u8, applied: u8 },
    /// Current atom has no free valence; the rest of the scope was skipped.
    ChainSaturated { skipped: usize },
    /// Branch or ring marker at the end of a scope without its index token.
    DanglingMarker,
    /// Branch needs free valence of at least 2 on the current atom.
    BranchSkipped,
    /// Branch body extends past the end of the scope.
    BranchTruncated { requested: usize, actual: usize },
    /// Ring had no atoms, would self-bond, or lacked valence on an endpoint.
    RingSkipped,
    /// Ring distance reached past the first atom and was clamped.
    RingDistanceClamped { requested: usize, actual: usize },
    /// Ring would duplicate an existing bond and was dropped.
    DuplicateRingBond,
}

/// Per-token decode diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeEvent {
    /// Index into the decoded token list.
    pub token_index: usize,
    pub kind: DecodeEventKind,
}

struct Deriver {
    graph: MolGraph,
    used: Vec<u8>,
    events: Vec<DecodeEvent>,
}

impl Deriver {
    fn add_atom(&mut self, element: Element) -> usize {
        self.graph.atoms.push(Atom { element, max_valence: element.max_valence() });
        self.used.push(0);
        self.graph.atoms.len() - 1
    }

    fn add_bond(&mut self, a: usize, b: usize, order: u8) {
        self.graph.bonds.push(Bond { a, b, order });
        self.used[a] += order;
        self.used[b] += order;
    }

    fn free(&self, atom: usize) -> u8 {
        self.graph.atoms[atom].max_valence - self.used[atom]
    }

    fn has_bond(&self, a: usize, b: usize) -> bool {
        self.graph.bonds.iter().any(|bond| {
            (bond.a == a && bond.b == b) || (bond.a == b && bond.b == a)
        })
    }

    /// Derive one scope. `attach` is the atom the scope's first bond must
    /// come from; `budget` caps how much of its valence the scope may use.
    fn derive_scope(
        &mut self,
        tokens: &[SelfiesToken],
        base: usize,
        attach: Option<usize>,
        budget: u8,
        depth: usize,
    ) {
        let mut cur = attach;
        let mut budget = budget;
        let mut i = 0;
        while i < tokens.len() {
            let at = base + i;
            // Free valence available to this scope on the current atom.
            let avail = match cur {
                Some(c) => {
                    let f = self.free(c);
                    if cur == attach {
                        f.min(budget)
                    } else {
                        f
                    }
                }
                None => 0,
            };
            match tokens[i] {
                SelfiesToken::Atom { element, bond } => {
                    match cur {
                        None => {
                            if bond.order() > 1 {
                                self.events.push(DecodeEvent {
                                    token_index: at,
                                    kind: DecodeEventKind::LeadingBondIgnored,
                                });
                            }
                            cur = Some(self.add_atom(element));
                        }
                        Some(prev) => {
                            if avail == 0 {
                                self.events.push(DecodeEvent {
                                    token_index: at,
                                    kind: DecodeEventKind::ChainSaturated {
                                        skipped: tokens.len() - i,
                                    },
                                });
                                return;
                            }
                            let applied = bond.order().min(avail).min(element.max_valence());
                            if applied < bond.order() {
                                self.events.push(DecodeEvent {
                                    token_index: at,
                                    kind: DecodeEventKind::BondClamped {
                                        requested: bond.order(),
                                        applied,
                                    },
                                });
                            }
                            let a = self.add_atom(element);
                            self.add_bond(prev, a, applied);
                            if cur == attach {
                                budget = budget.saturating_sub(applied);
                            }
                            cur = Some(a);
                        }
                    }
                    i += 1;
                }
                SelfiesToken::Branch(size) => {
                    if i + 1 >= tokens.len() {
                        self.events.push(DecodeEvent {
                            token_index: at,
                            kind: DecodeEventKind::DanglingMarker,
                        });
                        return;
                    }
                    let wanted = size.extent(tokens[i + 1].index_value());
                    if cur.is_none() || avail <= 1 || depth >= MAX_BRANCH_DEPTH {
                        // Marker and index are consumed; the would-be body
                        // simply continues this chain.
                        self.events.push(DecodeEvent {
                            token_index: at,
                            kind: DecodeEventKind::BranchSkipped,
                        });
                        i += 2;
                        continue;
                    }
                    let body_start = i + 2;
                    let body_len = wanted.min(tokens.len() - body_start);
                    if body_len < wanted {
                        self.events.push(DecodeEvent {
                            token_index: at,
                            kind: DecodeEventKind::BranchTruncated {
                                requested: wanted,
                                actual: body_len,
                            },
                        });
                    }
                    let root = cur.expect("branch requires a current atom");
                    let used_before = self.used[root];
                    self.derive_scope(
                        &tokens[body_start..body_start + body_len],
                        base + body_start,
                        Some(root),
                        avail - 1,
                        depth + 1,
                    );
                    // Rings inside the branch may bond back to `root` past
                    // the reservation, so the delta can exceed the budget.
                    if cur == attach {
                        budget = budget.saturating_sub(self.used[root] - used_before);
                    }
                    i = body_start + body_len;
                }
                SelfiesToken::Ring(size) => {
                    if i + 1 >= tokens.len() {
                        self.events.push(DecodeEvent {
                            token_index: at,
                            kind: DecodeEventKind::DanglingMarker,
                        });
                        return;
                    }
                    let wanted = size.extent(tokens[i + 1].index_value());
                    match cur {
                        None => {
                            self.events.push(DecodeEvent {
                                token_index: at,
                                kind: DecodeEventKind::RingSkipped,
                            });
                        }
                        Some(c) => {
                            let partner = c.saturating_sub(wanted);
                            if wanted > c {
                                self.events.push(DecodeEvent {
                                    token_index: at,
                                    kind: DecodeEventKind::RingDistanceClamped {
                                        requested: wanted,
                                        actual: c,
                                    },
                                });
                            }
                            if partner == c || avail == 0 || self.free(partner) == 0 {
                                self.events.push(DecodeEvent {
                                    token_index: at,
                                    kind: DecodeEventKind::RingSkipped,
                                });
                            } else if self.has_bond(c, partner) {
                                self.events.push(DecodeEvent {
                                    token_index: at,
                                    kind: DecodeEventKind::DuplicateRingBond,
                                });
                            } else {
                                self.add_bond(c, partner, 1);
                                if cur == attach {
                                    budget = budget.saturating_sub(1);
                                }
                            }
                        }
                    }
                    i += 2;
                }
            }
        }
    }
}

/// Decode a token sequence into a molecular graph. Total: every input
/// yields a graph for which [`validate`] holds, alongside diagnostics for
/// every clamp or skip that was applied.
pub fn decode(tokens: &[SelfiesToken]) -> (MolGraph, Vec<DecodeEvent>) {
    let mut deriver = Deriver { graph: MolGraph::default(), used: Vec::new(), events: Vec::new() };
    deriver.derive_scope(tokens, 0, None, 0, 0);
    (deriver.graph, deriver.events)
}

/// Convenience: tokenize then decode.
pub fn decode_str(selfies: &str) -> Result<(MolGraph, Vec<DecodeEvent>), SelfiesError> {
    Ok(decode(&tokenize(selfies)?))
}
