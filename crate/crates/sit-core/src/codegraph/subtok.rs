//! CamelCase and snake_case subtokenization.
//!
//! Identifier lexemes split into lowercase pieces; keywords, operators,
//! punctuation and literals pass through as a single piece. The map keeps
//! the piece-to-origin relation so graph rows can be expanded.

/// Piece list plus, for each piece, the index of the terminal it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SubtokenMap {
    pub pieces: Vec<String>,
    pub origin: Vec<usize>,
}

fn looks_like_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Split one identifier on underscores and camel-case boundaries.
pub fn split_identifier(s: &str) -> Vec<String> {
    let mut pieces = Vec::new();
    for chunk in s.split('_') {
        let chars: Vec<char> = chunk.chars().collect();
        if chars.is_empty() {
            continue;
        }
        let mut start = 0;
        for i in 1..chars.len() {
            let prev = chars[i - 1];
            let cur = chars[i];
            // lower/digit -> Upper starts a word; an Upper run ends one
            // letter before a lower (XMLParser -> xml parser).
            let boundary = (prev.is_ascii_lowercase() || prev.is_ascii_digit())
                && cur.is_ascii_uppercase()
                || prev.is_ascii_uppercase()
                    && cur.is_ascii_uppercase()
                    && chars.get(i + 1).map_or(false, |n| n.is_ascii_lowercase());
            if boundary {
                pieces.push(chars[start..i].iter().collect::<String>().to_lowercase());
                start = i;
            }
        }
        pieces.push(chars[start..].iter().collect::<String>().to_lowercase());
    }
    if pieces.is_empty() {
        pieces.push(s.to_string());
    }
    pieces
}

const KEYWORDS: &[&str] = &["def", "if", "elif", "else", "while", "for", "in", "return"];

/// Subtokenize a terminal lexeme sequence, preserving order.
pub fn subtokenize(terminals: &[String]) -> SubtokenMap {
    let mut pieces = Vec::new();
    let mut origin = Vec::new();
    for (i, lexeme) in terminals.iter().enumerate() {
        if looks_like_identifier(lexeme) && !KEYWORDS.contains(&lexeme.as_str()) {
            for p in split_identifier(lexeme) {
                pieces.push(p);
                origin.push(i);
            }
        } else {
            pieces.push(lexeme.clone());
            origin.push(i);
        }
    }
    SubtokenMap { pieces, origin }
}
