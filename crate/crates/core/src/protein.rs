//! Structure-aware protein vocabulary: 441 tokens, each coupling an
//! amino-acid identity with a discretized local-geometry letter.
//!
//! Alphabet ordering is part of the contract so that embedding files stay
//! portable: residues use the conventional one-letter alphabet in
//! alphabetical order followed by the unknown placeholder `X`; geometry
//! letters are `a`-`t` followed by the unknown placeholder `#`. A token id
//! is `residue_index * 21 + geometry_index`.
//!
//! The annotated-sequence text format interleaves one residue character and
//! one geometry character per position, e.g. `"MaKc"` is a two-residue
//! sequence. Geometry letters are taken as given input; computing them from
//! 3-D coordinates is out of scope.

use thiserror::Error;

/// Residue half of the alphabet: 20 standard amino acids plus `X`.
pub const RESIDUE_ALPHABET: [char; 21] = [
    'A', 'C', 'D', 'E', 'F', 'G', 'H', 'I', 'K', 'L', 'M', 'N', 'P', 'Q', 'R', 'S', 'T', 'V',
    'W', 'Y', 'X',
];

/// Geometry half of the alphabet: letters `a`-`t` plus `#`.
pub const GEOM_ALPHABET: [char; 21] = [
    'a', 'b', 'c', 'd', 'e', 'f', 'g', 'h', 'i', 'j', 'k', 'l', 'm', 'n', 'o', 'p', 'q', 'r',
    's', 't', '#',
];

/// Number of combined residue-geometry tokens.
pub const VOCAB_SIZE: usize = RESIDUE_ALPHABET.len() * GEOM_ALPHABET.len();

/// Size of the structure-aware protein vocabulary (441 = 21 x 21).
pub fn vocab_size() -> usize {
    VOCAB_SIZE
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VocabError {
    #[error("symbol '{symbol}' at position {position} is not in the {alphabet} alphabet")]
    UnknownSymbol { symbol: char, position: usize, alphabet: &'static str },
    #[error("annotated sequence has odd length {length}; expected residue/geometry pairs")]
    OddLength { length: usize },
    #[error("protein token sequence must contain at least one token")]
    EmptySequence,
}

/// One of the 21 residue symbols, stored as its alphabet index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ResidueSymbol(u8);

impl ResidueSymbol {
    pub fn from_char(c: char) -> Option<Self> {
        RESIDUE_ALPHABET.iter().position(|&r| r == c).map(|i| Self(i as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn as_char(self) -> char {
        RESIDUE_ALPHABET[self.0 as usize]
    }
}

/// One of the 21 geometry symbols, stored as its alphabet index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GeomSymbol(u8);

impl GeomSymbol {
    pub fn from_char(c: char) -> Option<Self> {
        GEOM_ALPHABET.iter().position(|&g| g == c).map(|i| Self(i as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn as_char(self) -> char {
        GEOM_ALPHABET[self.0 as usize]
    }
}

/// Combined residue-geometry token, an id in `[0, 441)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StructToken(u16);

impl StructToken {
    pub fn new(id: usize) -> Option<Self> {
        (id < VOCAB_SIZE).then_some(Self(id as u16))
    }

    pub fn from_symbols(residue: ResidueSymbol, geom: GeomSymbol) -> Self {
        Self((residue.index() * GEOM_ALPHABET.len() + geom.index()) as u16)
    }

    pub fn id(self) -> usize {
        self.0 as usize
    }

    pub fn split(self) -> (ResidueSymbol, GeomSymbol) {
        let id = self.0 as usize;
        (
            ResidueSymbol((id / GEOM_ALPHABET.len()) as u8),
            GeomSymbol((id % GEOM_ALPHABET.len()) as u8),
        )
    }
}

/// Encode one residue/geometry character pair into a token.
pub fn encode_pair(residue: char, geom: char) -> Result<StructToken, VocabError> {
    let r = ResidueSymbol::from_char(residue).ok_or(VocabError::UnknownSymbol {
        symbol: residue,
        position: 0,
        alphabet: "residue",
    })?;
    let g = GeomSymbol::from_char(geom).ok_or(VocabError::UnknownSymbol {
        symbol: geom,
        position: 1,
        alphabet: "geometry",
    })?;
    Ok(StructToken::from_symbols(r, g))
}

/// Decode a token back into its (residue, geometry) character pair.
pub fn decode_pair(token: StructToken) -> (char, char) {
    let (r, g) = token.split();
    (r.as_char(), g.as_char())
}

/// Ordered sequence of structure-aware tokens; never empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProteinTokenSeq(Vec<StructToken>);

impl ProteinTokenSeq {
    pub fn new(tokens: Vec<StructToken>) -> Result<Self, VocabError> {
        if tokens.is_empty() {
            return Err(VocabError::EmptySequence);
        }
        Ok(Self(tokens))
    }

    pub fn tokens(&self) -> &[StructToken] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false // non-empty by construction
    }

    pub fn ids(&self) -> Vec<usize> {
        self.0.iter().map(|t| t.id()).collect()
    }
}

/// Encode an annotated sequence of interleaved residue/geometry characters.
pub fn encode_sequence(annotated: &str) -> Result<ProteinTokenSeq, VocabError> {
    let chars: Vec<char> = annotated.chars().collect();
    if !chars.len().is_multiple_of(2) {
        return Err(VocabError::OddLength { length: chars.len() });
    }
    let mut tokens = Vec::with_capacity(chars.len() / 2);
    for (i, pair) in chars.chunks_exact(2).enumerate() {
        let r = ResidueSymbol::from_char(pair[0]).ok_or(VocabError::UnknownSymbol {
            symbol: pair[0],
            position: 2 * i,
            alphabet: "residue",
        })?;
        let g = GeomSymbol::from_char(pair[1]).ok_or(VocabError::UnknownSymbol {
            symbol: pair[1],
            position: 2 * i + 1,
            alphabet: "geometry",
        })?;
        tokens.push(StructToken::from_symbols(r, g));
    }
    ProteinTokenSeq::new(tokens)
}

/// Render a token sequence back to annotated text.
pub fn decode_sequence(seq: &ProteinTokenSeq) -> String {
    let mut out = String::with_capacity(seq.len() * 2);
    for &t in seq.tokens() {
        let (r, g) = decode_pair(t);
        out.push(r);
        out.push(g);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocab_size_is_441() {
        assert_eq!(vocab_size(), 441);
        assert_eq!(vocab_size(), 21 * 21);
    }

    #[test]
    fn first_pair_maps_to_id_zero() {
        let t = encode_pair('A', 'a').unwrap();
        assert_eq!(t.id(), 0);
    }

    #[test]
    fn encode_pair_is_a_bijection_over_all_441_pairs() {
        let mut seen = vec![false; VOCAB_SIZE];
        for &r in &RESIDUE_ALPHABET {
            for &g in &GEOM_ALPHABET {
                let t = encode_pair(r, g).unwrap();
                assert!(t.id() < vocab_size(), "id {} out of range", t.id());
                assert!(!seen[t.id()], "id {} assigned twice", t.id());
                seen[t.id()] = true;
                assert_eq!(decode_pair(t), (r, g), "round trip failed for ({r}, {g})");
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn unknown_residue_is_rejected() {
        assert!(matches!(
            encode_pair('B', 'a'),
            Err(VocabError::UnknownSymbol { symbol: 'B', .. })
        ));
        assert!(matches!(
            encode_pair('A', 'z'),
            Err(VocabError::UnknownSymbol { symbol: 'z', .. })
        ));
    }

    #[test]
    fn placeholders_tokenize() {
        assert!(encode_pair('X', '#').is_ok());
    }

    #[test]
    fn single_residue_sequence() {
        let seq = encode_sequence("Aa").unwrap();
        assert_eq!(seq.len(), 1);
        assert_eq!(seq.tokens()[0], encode_pair('A', 'a').unwrap());
    }

    #[test]
    fn sequence_round_trip() {
        let seq = encode_sequence("AaCc").unwrap();
        assert_eq!(seq.len(), 2);
        assert_eq!(decode_sequence(&seq), "AaCc");
    }

    #[test]
    fn odd_length_is_rejected() {
        assert_eq!(encode_sequence("AaC"), Err(VocabError::OddLength { length: 3 }));
    }

    #[test]
    fn empty_sequence_is_rejected() {
        assert_eq!(encode_sequence(""), Err(VocabError::EmptySequence));
    }

    #[test]
    fn unknown_symbol_reports_position() {
        match encode_sequence("AaC!") {
            Err(VocabError::UnknownSymbol { symbol: '!', position: 3, .. }) => {}
            other => panic!("expected UnknownSymbol at position 3, got {other:?}"),
        }
    }

    #[test]
    fn token_ids_stay_below_vocab_size() {
        let seq = encode_sequence("XhY#Wt").unwrap();
        assert!(seq.ids().iter().all(|&id| id < vocab_size()));
    }
}
