use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EmbeddingTable, MutationKind, MutatorError, TokenizationView};

/// Replacement alphabet for the character operators: `[a-zA-Z]`.
pub const ASCII_LETTERS: &[u8; 52] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ";

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a_64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// FNV-1a 64 of `"task_id|kind|token_index|variant_index"`.
pub fn derive_seed(task_id: &str, kind: MutationKind, token_index: usize, variant_index: u32) -> u64 {
    fnv1a_64(format!("{task_id}|{kind}|{token_index}|{variant_index}").as_bytes())
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// The result of applying one operator to one token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppliedMutation {
    pub kind: MutationKind,
    pub token_index: usize,
    pub seed: u64,
    pub byte_span: [usize; 2],
    pub original_surface: String,
    pub mutated_surface: String,
    pub mutated_prompt: String,
    pub char_positions: Vec<usize>,
    pub replacement_token_id: Option<u32>,
}

fn is_nonword(surface: &str) -> bool {
    !surface.chars().any(char::is_alphanumeric)
}

fn is_eligible(
    view: &TokenizationView,
    i: usize,
    kind: MutationKind,
    table: Option<&EmbeddingTable>,
    skip_nonword: bool,
) -> bool {
    let token = &view.tokens[i];
    if skip_nonword && is_nonword(&token.surface) {
        return false;
    }
    match kind {
        MutationKind::SingleChar => token.char_count() >= 1,
        MutationKind::ThreeChar => token.char_count() >= 3,
        MutationKind::TokenReplace => table.is_some_and(|t| {
            t.contains(token.id) && t.top_k_similar(token.id, 1).is_ok_and(|n| !n.is_empty())
        }),
    }
}

/// Token indices the operator can act on. `skip_nonword` additionally
/// excludes tokens with no alphanumeric character.
pub fn eligible_positions(
    view: &TokenizationView,
    kind: MutationKind,
    table: Option<&EmbeddingTable>,
    skip_nonword: bool,
) -> Result<Vec<usize>, MutatorError> {
    if kind == MutationKind::TokenReplace && table.is_none() {
        return Err(MutatorError::TableRequired);
    }
    Ok((0..view.len())
        .filter(|&i| is_eligible(view, i, kind, table, skip_nonword))
        .collect())
}

fn splice(view: &TokenizationView, token_index: usize, replacement: &str) -> String {
    let t = &view.tokens[token_index];
    let p = &view.prompt_text;
    let mut s = String::with_capacity(p.len() + replacement.len());
    s.push_str(&p[..t.start]);
    s.push_str(replacement);
    s.push_str(&p[t.end..]);
    s
}

fn draw_letter_except(rng: &mut ChaCha8Rng, original: char) -> char {
    let pool: Vec<u8> = ASCII_LETTERS
        .iter()
        .copied()
        .filter(|&b| b as char != original)
        .collect();
    pool[rng.random_range(0..pool.len())] as char
}

fn rewrite_chars(
    view: &TokenizationView,
    token_index: usize,
    kind: MutationKind,
    seed: u64,
    positions: Vec<usize>,
    rng: &mut ChaCha8Rng,
) -> AppliedMutation {
    let token = &view.tokens[token_index];
    let mut chars: Vec<char> = token.surface.chars().collect();
    for &p in &positions {
        chars[p] = draw_letter_except(rng, chars[p]);
    }
    let mutated_surface: String = chars.into_iter().collect();
    AppliedMutation {
        kind,
        token_index,
        seed,
        byte_span: [token.start, token.end],
        original_surface: token.surface.clone(),
        mutated_prompt: splice(view, token_index, &mutated_surface),
        mutated_surface,
        char_positions: positions,
        replacement_token_id: None,
    }
}

fn check_index(view: &TokenizationView, token_index: usize, kind: MutationKind) -> Result<(), MutatorError> {
    if token_index >= view.len() {
        return Err(MutatorError::IneligibleToken { token_index, kind });
    }
    Ok(())
}

/// Replaces one uniformly chosen character of the token with a uniformly
/// chosen ASCII letter different from it.
pub fn mutate_single_char(
    view: &TokenizationView,
    token_index: usize,
    seed: u64,
) -> Result<AppliedMutation, MutatorError> {
    let kind = MutationKind::SingleChar;
    check_index(view, token_index, kind)?;
    let n = view.tokens[token_index].char_count();
    if n == 0 {
        return Err(MutatorError::IneligibleToken { token_index, kind });
    }
    let mut rng = rng_for(seed);
    let pos = rng.random_range(0..n);
    Ok(rewrite_chars(view, token_index, kind, seed, vec![pos], &mut rng))
}

/// Replaces three distinct characters of the token; each replacement is
/// drawn independently and differs from the character it replaces.
pub fn mutate_three_char(
    view: &TokenizationView,
    token_index: usize,
    seed: u64,
) -> Result<AppliedMutation, MutatorError> {
    let kind = MutationKind::ThreeChar;
    check_index(view, token_index, kind)?;
    let n = view.tokens[token_index].char_count();
    if n < 3 {
        return Err(MutatorError::IneligibleToken { token_index, kind });
    }
    let mut rng = rng_for(seed);
    let mut positions = index::sample(&mut rng, n, 3).into_vec();
    positions.sort_unstable();
    Ok(rewrite_chars(view, token_index, kind, seed, positions, &mut rng))
}

/// Replaces the token's surface with that of a neighbour drawn uniformly
/// from its `k` most cosine-similar vocabulary entries.
pub fn mutate_token_replace(
    view: &TokenizationView,
    token_index: usize,
    table: &EmbeddingTable,
    seed: u64,
    k: usize,
) -> Result<AppliedMutation, MutatorError> {
    let kind = MutationKind::TokenReplace;
    check_index(view, token_index, kind)?;
    let token = &view.tokens[token_index];
    if !table.contains(token.id) {
        return Err(MutatorError::IneligibleToken { token_index, kind });
    }
    let neighbours = table.top_k_similar(token.id, k)?;
    replace_with_neighbour(view, token_index, table, seed, &neighbours)
}

pub(crate) fn replace_with_neighbour(
    view: &TokenizationView,
    token_index: usize,
    table: &EmbeddingTable,
    seed: u64,
    neighbours: &[u32],
) -> Result<AppliedMutation, MutatorError> {
    let token = &view.tokens[token_index];
    if neighbours.is_empty() {
        return Err(MutatorError::EmptyNeighborhood(token.id));
    }
    let mut rng = rng_for(seed);
    let chosen = neighbours[rng.random_range(0..neighbours.len())];
    let mutated_surface = table
        .surface(chosen)
        .ok_or(MutatorError::UnknownToken(chosen))?
        .to_string();
    Ok(AppliedMutation {
        kind: MutationKind::TokenReplace,
        token_index,
        seed,
        byte_span: [token.start, token.end],
        original_surface: token.surface.clone(),
        mutated_prompt: splice(view, token_index, &mutated_surface),
        mutated_surface,
        char_positions: Vec::new(),
        replacement_token_id: Some(chosen),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mutator::{Token, WhitespaceTokenizer};

    fn view(text: &str) -> TokenizationView {
        WhitespaceTokenizer::fit([text]).tokenize("t", text)
    }

    /// Independent FNV-1a reference, bytewise over an explicit key string.
    fn fnv_reference(s: &str) -> u64 {
        let mut h: u64 = 14_695_981_039_346_656_037;
        for b in s.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(1_099_511_628_211);
        }
        h
    }

    #[test]
    fn fnv_known_vectors() {
        assert_eq!(fnv1a_64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a_64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a_64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn seed_matches_reference() {
        assert_eq!(
            derive_seed("t", MutationKind::SingleChar, 0, 0),
            fnv_reference("t|SingleChar|0|0")
        );
        assert_eq!(
            derive_seed("CWE-022-2", MutationKind::TokenReplace, 26, 5),
            fnv_reference("CWE-022-2|TokenReplace|26|5")
        );
        assert_ne!(
            derive_seed("t", MutationKind::SingleChar, 0, 0),
            derive_seed("t", MutationKind::SingleChar, 0, 1)
        );
    }

    #[test]
    fn eligibility_by_length() {
        let v = view("ab c food");
        assert_eq!(
            eligible_positions(&v, MutationKind::ThreeChar, None, false).unwrap(),
            vec![2]
        );
        assert_eq!(
            eligible_positions(&v, MutationKind::SingleChar, None, false).unwrap(),
            vec![0, 1, 2]
        );
        assert!(matches!(
            eligible_positions(&v, MutationKind::TokenReplace, None, false),
            Err(MutatorError::TableRequired)
        ));
    }

    #[test]
    fn eligibility_requires_table_membership() {
        let text = "t0 t1 t2 t3 t4";
        let v = view(text);
        let entries = (0..5u32)
            .filter(|&i| i != 3)
            .map(|i| (i, format!("t{i}"), vec![1.0, i as f32]))
            .collect();
        let table = EmbeddingTable::new(2, entries).unwrap();
        assert_eq!(
            eligible_positions(&v, MutationKind::TokenReplace, Some(&table), false).unwrap(),
            vec![0, 1, 2, 4]
        );
    }

    #[test]
    fn skip_nonword_flag() {
        let v = view("foo ( bar ) ;");
        assert_eq!(
            eligible_positions(&v, MutationKind::SingleChar, None, true).unwrap(),
            vec![0, 2]
        );
    }

    #[test]
    fn single_char_on_one_letter_token() {
        let v = view("x");
        for seed in 0..200 {
            let m = mutate_single_char(&v, 0, seed).unwrap();
            assert_ne!(m.mutated_surface, "x");
            assert_eq!(m.mutated_surface.len(), 1);
            assert!(m.mutated_surface.bytes().all(|b| b.is_ascii_alphabetic()));
        }
    }

    #[test]
    fn three_char_covers_three_letter_token() {
        let v = view("abc");
        for seed in 0..200 {
            let m = mutate_three_char(&v, 0, seed).unwrap();
            for (a, b) in m.mutated_surface.chars().zip("abc".chars()) {
                assert_ne!(a, b);
            }
        }
    }

    #[test]
    fn three_char_rejects_short_token() {
        let v = view("ab");
        assert!(matches!(
            mutate_three_char(&v, 0, 1),
            Err(MutatorError::IneligibleToken { token_index: 0, .. })
        ));
    }

    #[test]
    fn single_char_on_multibyte_token() {
        let text = "é€x";
        let v = TokenizationView::new(
            "t",
            text,
            vec![Token { id: 0, start: 0, end: text.len(), surface: text.into() }],
        )
        .unwrap();
        for seed in 0..50 {
            let m = mutate_single_char(&v, 0, seed).unwrap();
            let diffs = m
                .mutated_surface
                .chars()
                .zip(text.chars())
                .filter(|(a, b)| a != b)
                .count();
            assert_eq!(diffs, 1);
        }
    }

    #[test]
    fn forced_neighbour_draw() {
        let v = view("a b");
        let table = EmbeddingTable::new(
            2,
            vec![(0, "a".into(), vec![1.0, 0.0]), (1, "b".into(), vec![0.0, 1.0])],
        )
        .unwrap();
        for seed in 0..20 {
            let m = mutate_token_replace(&v, 0, &table, seed, 10).unwrap();
            assert_eq!(m.mutated_surface, "b");
            assert_eq!(m.mutated_prompt, "b b");
            assert_eq!(m.replacement_token_id, Some(1));
        }
    }

    #[test]
    fn empty_neighbourhood() {
        let v = view("a");
        let table = EmbeddingTable::new(2, vec![(0, "a".into(), vec![1.0, 0.0])]).unwrap();
        assert!(matches!(
            mutate_token_replace(&v, 0, &table, 0, 10),
            Err(MutatorError::EmptyNeighborhood(0))
        ));
    }
}
