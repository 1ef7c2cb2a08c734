//! MiniLang lexer. Whitespace separates tokens and is otherwise discarded;
//! every token records its 1-based line and column so the parser can apply
//! the offside rule for blocks.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Identifier,
    IntegerLiteral,
    StringLiteral,
    Keyword,
    Operator,
    Punctuation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    pub lexeme: String,
    pub line: usize,
    pub col: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("unexpected character {ch:?} at line {line}, col {col}")]
pub struct LexError {
    pub line: usize,
    pub col: usize,
    pub ch: char,
}

const KEYWORDS: &[&str] = &[
    "def", "if", "elif", "else", "while", "for", "in", "return",
];

pub fn lex(source: &str) -> Result<Vec<Token>, LexError> {
    let mut tokens = Vec::new();
    let mut line = 1usize;
    let mut col = 1usize;
    let mut chars = source.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c == '\n' {
            chars.next();
            line += 1;
            col = 1;
            continue;
        }
        if c == ' ' || c == '\t' || c == '\r' {
            chars.next();
            col += 1;
            continue;
        }
        if c == '#' {
            while let Some(&n) = chars.peek() {
                if n == '\n' {
                    break;
                }
                chars.next();
                col += 1;
            }
            continue;
        }
        let start_col = col;
        if c.is_ascii_alphabetic() || c == '_' {
            let mut lexeme = String::new();
            while let Some(&n) = chars.peek() {
                if n.is_ascii_alphanumeric() || n == '_' {
                    lexeme.push(n);
                    chars.next();
                    col += 1;
                } else {
                    break;
                }
            }
            let kind = if KEYWORDS.contains(&lexeme.as_str()) {
                TokenKind::Keyword
            } else {
                TokenKind::Identifier
            };
            tokens.push(Token {
                kind,
                lexeme,
                line,
                col: start_col,
            });
        } else if c.is_ascii_digit() {
            let mut lexeme = String::new();
            while let Some(&n) = chars.peek() {
                if n.is_ascii_digit() {
                    lexeme.push(n);
                    chars.next();
                    col += 1;
                } else {
                    break;
                }
            }
            tokens.push(Token {
                kind: TokenKind::IntegerLiteral,
                lexeme,
                line,
                col: start_col,
            });
        } else if c == '"' {
            let mut lexeme = String::from('"');
            chars.next();
            col += 1;
            loop {
                match chars.peek() {
                    Some('"') => {
                        lexeme.push('"');
                        chars.next();
                        col += 1;
                        break;
                    }
                    Some(&n) if n != '\n' => {
                        lexeme.push(n);
                        chars.next();
                        col += 1;
                    }
                    _ => {
                        return Err(LexError {
                            line,
                            col,
                            ch: '"',
                        })
                    }
                }
            }
            tokens.push(Token {
                kind: TokenKind::StringLiteral,
                lexeme,
                line,
                col: start_col,
            });
        } else if c == '=' {
            chars.next();
            col += 1;
            if chars.peek() == Some(&'=') {
                chars.next();
                col += 1;
                tokens.push(Token {
                    kind: TokenKind::Operator,
                    lexeme: "==".into(),
                    line,
                    col: start_col,
                });
            } else {
                // Assignment '=' is a statement delimiter, not an
                // expression operator.
                tokens.push(Token {
                    kind: TokenKind::Punctuation,
                    lexeme: "=".into(),
                    line,
                    col: start_col,
                });
            }
        } else if "+-*/<>".contains(c) {
            chars.next();
            col += 1;
            tokens.push(Token {
                kind: TokenKind::Operator,
                lexeme: c.to_string(),
                line,
                col: start_col,
            });
        } else if "(),:".contains(c) {
            chars.next();
            col += 1;
            tokens.push(Token {
                kind: TokenKind::Punctuation,
                lexeme: c.to_string(),
                line,
                col: start_col,
            });
        } else {
            return Err(LexError { line, col, ch: c });
        }
    }
    Ok(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assign_statement() {
        let toks = lex("b = a + 1").unwrap();
        let pairs: Vec<_> = toks
            .iter()
            .map(|t| (t.kind, t.lexeme.as_str()))
            .collect();
        assert_eq!(
            pairs,
            vec![
                (TokenKind::Identifier, "b"),
                (TokenKind::Punctuation, "="),
                (TokenKind::Identifier, "a"),
                (TokenKind::Operator, "+"),
                (TokenKind::IntegerLiteral, "1"),
            ]
        );
    }

    #[test]
    fn empty_input() {
        assert_eq!(lex("").unwrap(), vec![]);
    }

    #[test]
    fn unknown_character_is_reported_with_position() {
        let err = lex("x @ y").unwrap_err();
        assert_eq!(err.line, 1);
        assert_eq!(err.col, 3);
        assert_eq!(err.ch, '@');
    }

    #[test]
    fn positions_track_lines() {
        let toks = lex("x = 1\n  y = 2").unwrap();
        let y = toks.iter().find(|t| t.lexeme == "y").unwrap();
        assert_eq!((y.line, y.col), (2, 3));
    }

    #[test]
    fn double_equals_is_one_operator() {
        let toks = lex("a == b").unwrap();
        assert_eq!(toks[1].lexeme, "==");
        assert_eq!(toks[1].kind, TokenKind::Operator);
    }
}
