//! Byte-level BPE compatible with the published GPT-2 vocabulary.
//!
//! Text is split with GPT-2's pre-tokenization pattern
//!
//! ```text
//! 's|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+
//! ```
//!
//! (implemented by hand, since the lookahead is not expressible in a
//! DFA-based regex), each piece's UTF-8 bytes are remapped to printable
//! characters, and merges are applied lowest rank first.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use hashbrown::HashMap;
use unicode_general_category::{get_general_category, GeneralCategory};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TokenizerError {
    #[error("vocabulary format error: {0}")]
    Format(String),
    #[error("token id {id} out of range for vocabulary of size {size}")]
    OutOfRange { id: u32, size: usize },
}

/// Index into the vocabulary, `0 <= id < M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<u32> for TokenId {
    fn from(id: u32) -> Self {
        Self(id)
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// GPT-2's reversible byte to printable-character table.
///
/// Printable Latin-1 bytes map to themselves; the remaining 68 bytes map to
/// `U+0100..` in byte order.
pub fn byte_to_char_table() -> [char; 256] {
    let mut table = ['\0'; 256];
    let mut next = 256u32;
    for b in 0..=255u8 {
        let printable = matches!(b, b'!'..=b'~' | 0xA1..=0xAC | 0xAE..=0xFF);
        table[b as usize] = if printable {
            b as char
        } else {
            let c = char::from_u32(next).unwrap_or('\u{FFFD}');
            next += 1;
            c
        };
    }
    table
}

/// An immutable byte-level BPE vocabulary.
#[derive(Debug, Clone)]
pub struct Vocab {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
    merges: Vec<(String, String)>,
    merge_ranks: HashMap<(u32, u32), (u32, u32)>,
    byte_tokens: [u32; 256],
    char_to_byte: BTreeMap<char, u8>,
}

impl Vocab {
    /// Builds a vocabulary from the text of a JSON `token -> id` object and
    /// a ranked merges file (one `left right` pair per line; a leading
    /// `#` line is a header). LF and CRLF are both accepted.
    pub fn from_json_and_merges(vocab_json: &str, merges_txt: &str) -> Result<Self, TokenizerError> {
        let raw: BTreeMap<String, serde_json::Value> = serde_json::from_str(vocab_json)
            .map_err(|e| TokenizerError::Format(format!("vocabulary JSON: {e}")))?;
        let mut entries = Vec::with_capacity(raw.len());
        for (token, value) in raw {
            let id = value
                .as_u64()
                .and_then(|v| u32::try_from(v).ok())
                .ok_or_else(|| TokenizerError::Format(format!("token {token:?} has non-integer id {value}")))?;
            entries.push((token, id));
        }
        let merges = parse_merges(merges_txt)?;
        Self::from_parts(entries, merges)
    }

    /// Builds a vocabulary from explicit `(token, id)` entries and ordered
    /// merges. Ids must cover `0..M` exactly once.
    pub fn from_parts(entries: Vec<(String, u32)>, merges: Vec<(String, String)>) -> Result<Self, TokenizerError> {
        let size = entries.len();
        let mut id_to_token: Vec<Option<String>> = alloc::vec![None; size];
        let mut token_to_id = HashMap::with_capacity(size);
        for (token, id) in entries {
            let slot = id_to_token
                .get_mut(id as usize)
                .ok_or_else(|| TokenizerError::Format(format!("token {token:?} has id {id} outside 0..{size}")))?;
            if let Some(prev) = slot {
                return Err(TokenizerError::Format(format!(
                    "duplicate id {id} for tokens {prev:?} and {token:?}"
                )));
            }
            *slot = Some(token.clone());
            token_to_id.insert(token, id);
        }
        // size entries, no duplicates, all in range: every slot is filled
        let id_to_token: Vec<String> = id_to_token.into_iter().map(Option::unwrap_or_default).collect();

        let table = byte_to_char_table();
        let mut byte_tokens = [0u32; 256];
        let mut char_to_byte = BTreeMap::new();
        for (b, &c) in table.iter().enumerate() {
            let mut buf = [0u8; 4];
            let s: &str = c.encode_utf8(&mut buf);
            byte_tokens[b] = *token_to_id
                .get(s)
                .ok_or_else(|| TokenizerError::Format(format!("byte token {s:?} (byte {b}) missing from vocabulary")))?;
            char_to_byte.insert(c, b as u8);
        }

        let mut merge_ranks = HashMap::with_capacity(merges.len());
        for (rank, (left, right)) in merges.iter().enumerate() {
            let lookup = |t: &str| {
                token_to_id.get(t).copied().ok_or_else(|| {
                    TokenizerError::Format(format!("merge {rank} ({left} {right}) uses unknown token {t:?}"))
                })
            };
            let l = lookup(left)?;
            let r = lookup(right)?;
            let joined = format!("{left}{right}");
            let merged = lookup(&joined)?;
            if merge_ranks.insert((l, r), (rank as u32, merged)).is_some() {
                return Err(TokenizerError::Format(format!("merge {rank} ({left} {right}) is a duplicate")));
            }
        }

        Ok(Self {
            token_to_id,
            id_to_token,
            merges,
            merge_ranks,
            byte_tokens,
            char_to_byte,
        })
    }

    /// A vocabulary of the 256 byte tokens (ids in byte order) followed by
    /// one token per merge, id `256 + rank`.
    pub fn byte_level(merges: Vec<(String, String)>) -> Result<Self, TokenizerError> {
        let table = byte_to_char_table();
        let mut entries: Vec<(String, u32)> = table
            .iter()
            .enumerate()
            .map(|(b, c)| (String::from(*c), b as u32))
            .collect();
        for (rank, (l, r)) in merges.iter().enumerate() {
            entries.push((format!("{l}{r}"), 256 + rank as u32));
        }
        Self::from_parts(entries, merges)
    }

    /// Vocabulary size `M`.
    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn token_id(&self, token: &str) -> Option<TokenId> {
        self.token_to_id.get(token).copied().map(TokenId)
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.id_to_token.get(id.index()).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let mut out = Vec::new();
        for piece in pretokenize(text) {
            self.encode_piece(piece.as_bytes(), &mut out);
        }
        out
    }

    fn encode_piece(&self, bytes: &[u8], out: &mut Vec<TokenId>) {
        let mut parts: Vec<u32> = bytes.iter().map(|&b| self.byte_tokens[b as usize]).collect();
        while parts.len() > 1 {
            let best = parts
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| self.merge_ranks.get(&(w[0], w[1])).map(|&(rank, merged)| (rank, i, merged)))
                .min_by_key(|&(rank, i, _)| (rank, i));
            let Some((rank, _, merged)) = best else { break };
            // merge every non-overlapping occurrence of the winning pair, left to right
            let mut next = Vec::with_capacity(parts.len());
            let mut i = 0;
            while i < parts.len() {
                if i + 1 < parts.len()
                    && self
                        .merge_ranks
                        .get(&(parts[i], parts[i + 1]))
                        .is_some_and(|&(r, _)| r == rank)
                {
                    next.push(merged);
                    i += 2;
                } else {
                    next.push(parts[i]);
                    i += 1;
                }
            }
            parts = next;
        }
        out.extend(parts.into_iter().map(TokenId));
    }

    /// Raw bytes of a token sequence.
    pub fn decode_bytes(&self, ids: &[TokenId]) -> Result<Vec<u8>, TokenizerError> {
        let mut bytes = Vec::new();
        for &id in ids {
            let token = self.token(id).ok_or(TokenizerError::OutOfRange {
                id: id.0,
                size: self.len(),
            })?;
            for c in token.chars() {
                match self.char_to_byte.get(&c) {
                    Some(&b) => bytes.push(b),
                    // tokens outside the byte alphabet (special tokens) decode verbatim
                    None => {
                        let mut buf = [0u8; 4];
                        bytes.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
                    }
                }
            }
        }
        Ok(bytes)
    }

    /// Decodes to text. Byte sequences that are not valid UTF-8 (a sequence
    /// cut inside a multibyte character) are replaced with U+FFFD.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String, TokenizerError> {
        let bytes = self.decode_bytes(ids)?;
        Ok(match String::from_utf8(bytes) {
            Ok(s) => s,
            Err(e) => String::from_utf8_lossy(e.as_bytes()).into_owned(),
        })
    }
}

fn parse_merges(text: &str) -> Result<Vec<(String, String)>, TokenizerError> {
    let mut merges = Vec::new();
    let lines: Vec<&str> = text.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l)).collect();
    let last_content = lines.iter().rposition(|l| !l.is_empty()).map_or(0, |i| i + 1);
    for (lineno, line) in lines[..last_content].iter().enumerate() {
        if lineno == 0 && line.starts_with('#') {
            continue;
        }
        let mut parts = line.split(' ');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                merges.push((l.to_owned(), r.to_owned()));
            }
            _ => {
                return Err(TokenizerError::Format(format!(
                    "merges line {}: expected two space-separated tokens, got {line:?}",
                    lineno + 1
                )))
            }
        }
    }
    Ok(merges)
}

fn is_letter(c: char) -> bool {
    matches!(
        get_general_category(c),
        GeneralCategory::UppercaseLetter
            | GeneralCategory::LowercaseLetter
            | GeneralCategory::TitlecaseLetter
            | GeneralCategory::ModifierLetter
            | GeneralCategory::OtherLetter
    )
}

fn is_number(c: char) -> bool {
    matches!(
        get_general_category(c),
        GeneralCategory::DecimalNumber | GeneralCategory::LetterNumber | GeneralCategory::OtherNumber
    )
}

fn is_other(c: char) -> bool {
    !c.is_whitespace() && !is_letter(c) && !is_number(c)
}

const CONTRACTIONS: [&str; 7] = ["s", "t", "re", "ve", "m", "ll", "d"];

/// Splits text into GPT-2 pre-tokens. The pieces concatenate back to the
/// input.
pub fn pretokenize(text: &str) -> Vec<&str> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let byte_at = |i: usize| chars.get(i).map_or(text.len(), |&(b, _)| b);
    let run_end = |from: usize, pred: fn(char) -> bool| {
        let mut j = from;
        while j < chars.len() && pred(chars[j].1) {
            j += 1;
        }
        j
    };

    let mut pieces = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i].1;
        let end = if c == '\'' {
            let rest = &text[byte_at(i + 1)..];
            CONTRACTIONS
                .iter()
                .find(|s| rest.starts_with(**s))
                .map(|s| i + 1 + s.chars().count())
                .unwrap_or_else(|| run_end(i, is_other))
        } else {
            let (start, lead) = match chars.get(i + 1) {
                Some(&(_, n)) if c == ' ' && !n.is_whitespace() => (i + 1, n),
                _ => (i, c),
            };
            if is_letter(lead) {
                run_end(start, is_letter)
            } else if is_number(lead) {
                run_end(start, is_number)
            } else if is_other(lead) {
                run_end(start, is_other)
            } else {
                // whitespace run; leave its last character to prefix the next
                // piece unless the run ends the text or is a single character
                let j = run_end(i, char::is_whitespace);
                if j == chars.len() || j - i == 1 {
                    j
                } else {
                    j - 1
                }
            }
        };
        pieces.push(&text[byte_at(i)..byte_at(end)]);
        i = end;
    }
    pieces
}
