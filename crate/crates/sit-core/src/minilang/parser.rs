//! Recursive-descent parser with offside-rule blocks.
//!
//! Statements occupy a single line. A compound statement's suite is either
//! one inline simple statement after the colon, or an indented block on the
//! following lines (the first token's column sets the block indentation).
//! Every consumed token becomes a terminal node, so no token is lost or
//! invented.

use thiserror::Error;

use super::lexer::{Token, TokenKind};
use super::{kind, Ast};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("expected {expected}, found {found} at line {line}, col {col}")]
pub struct ParseError {
    pub expected: String,
    pub found: String,
    pub line: usize,
    pub col: usize,
}

const MAX_DEPTH: usize = 128;

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    builder: super::AstBuilder,
    depth: usize,
}

pub fn parse(tokens: &[Token]) -> Result<Ast, ParseError> {
    let mut p = Parser {
        tokens,
        pos: 0,
        builder: Ast::builder(),
        depth: 0,
    };
    let module = p.builder.open(kind::MODULE);
    if let Some(first) = p.peek() {
        let block_col = first.col;
        while let Some(tok) = p.peek() {
            if tok.col != block_col {
                return Err(p.err_at("a statement at the top-level indentation", tok));
            }
            let stmt = p.statement()?;
            p.builder.attach(module, stmt);
        }
    }
    Ok(p.builder.finish(module))
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&'a Token> {
        self.tokens.get(self.pos)
    }

    fn err_eof(&self, expected: &str) -> ParseError {
        let (line, col) = self
            .tokens
            .last()
            .map(|t| (t.line, t.col + t.lexeme.len()))
            .unwrap_or((1, 1));
        ParseError {
            expected: expected.to_string(),
            found: "end of input".to_string(),
            line,
            col,
        }
    }

    fn err_at(&self, expected: &str, tok: &Token) -> ParseError {
        ParseError {
            expected: expected.to_string(),
            found: format!("{:?}", tok.lexeme),
            line: tok.line,
            col: tok.col,
        }
    }

    fn advance(&mut self) -> &'a Token {
        let t = &self.tokens[self.pos];
        self.pos += 1;
        t
    }

    fn eat_terminal(&mut self, parent: usize, term_kind: &str) -> &'a Token {
        let t = self.advance();
        self.builder.terminal(parent, term_kind, &t.lexeme);
        t
    }

    fn expect_punct(&mut self, parent: usize, lexeme: &str) -> Result<(), ParseError> {
        match self.peek() {
            Some(t) if t.kind == TokenKind::Punctuation && t.lexeme == lexeme => {
                self.eat_terminal(parent, kind::PUNCT);
                Ok(())
            }
            Some(t) => Err(self.err_at(&format!("{lexeme:?}"), t)),
            None => Err(self.err_eof(&format!("{lexeme:?}"))),
        }
    }

    fn expect_name(&mut self, parent: usize) -> Result<(), ParseError> {
        match self.peek() {
            Some(t) if t.kind == TokenKind::Identifier => {
                self.eat_terminal(parent, kind::NAME);
                Ok(())
            }
            Some(t) => Err(self.err_at("an identifier", t)),
            None => Err(self.err_eof("an identifier")),
        }
    }

    fn statement(&mut self) -> Result<usize, ParseError> {
        let tok = match self.peek() {
            Some(t) => t,
            None => return Err(self.err_eof("a statement")),
        };
        match (tok.kind, tok.lexeme.as_str()) {
            (TokenKind::Keyword, "def") => self.function_def(),
            (TokenKind::Keyword, "if") => self.if_statement(),
            (TokenKind::Keyword, "while") => self.while_statement(),
            (TokenKind::Keyword, "for") => self.for_statement(),
            (TokenKind::Keyword, "return") => self.simple_statement(),
            (TokenKind::Keyword, _) => Err(self.err_at("a statement", tok)),
            _ => self.simple_statement(),
        }
    }

    /// Assignment, return, or expression statement; always single-line.
    fn simple_statement(&mut self) -> Result<usize, ParseError> {
        let tok = match self.peek() {
            Some(t) => t,
            None => return Err(self.err_eof("a statement")),
        };
        let line = tok.line;
        let node = if tok.kind == TokenKind::Keyword && tok.lexeme == "return" {
            let ret = self.builder.open(kind::RETURN);
            self.eat_terminal(ret, kind::KEYWORD);
            if self.peek().map_or(false, |t| t.line == line) {
                let expr = self.expression(line)?;
                self.builder.attach(ret, expr);
            }
            ret
        } else if tok.kind == TokenKind::Identifier
            && self.tokens.get(self.pos + 1).map_or(false, |t| {
                t.kind == TokenKind::Punctuation && t.lexeme == "=" && t.line == line
            })
        {
            let assign = self.builder.open(kind::ASSIGN);
            self.eat_terminal(assign, kind::NAME);
            self.eat_terminal(assign, kind::PUNCT);
            let rhs = self.expression(line)?;
            self.builder.attach(assign, rhs);
            assign
        } else {
            self.expression(line)?
        };
        if let Some(next) = self.peek() {
            if next.line == line {
                return Err(self.err_at("end of line", next));
            }
        }
        Ok(node)
    }

    fn function_def(&mut self) -> Result<usize, ParseError> {
        let def = self.builder.open(kind::FUNCTION_DEF);
        let header = self.peek().unwrap();
        let (line, col) = (header.line, header.col);
        self.eat_terminal(def, kind::KEYWORD);
        self.expect_name(def)?;
        self.expect_punct(def, "(")?;
        if self
            .peek()
            .map_or(false, |t| !(t.kind == TokenKind::Punctuation && t.lexeme == ")"))
        {
            self.expect_name(def)?;
            while self
                .peek()
                .map_or(false, |t| t.kind == TokenKind::Punctuation && t.lexeme == ",")
            {
                self.eat_terminal(def, kind::PUNCT);
                self.expect_name(def)?;
            }
        }
        self.expect_punct(def, ")")?;
        self.expect_punct(def, ":")?;
        let suite = self.suite(line, col)?;
        self.builder.attach(def, suite);
        Ok(def)
    }

    fn if_statement(&mut self) -> Result<usize, ParseError> {
        let node = self.builder.open(kind::IF);
        let header = self.peek().unwrap();
        let (line, col) = (header.line, header.col);
        self.eat_terminal(node, kind::KEYWORD);
        let cond = self.expression(line)?;
        self.builder.attach(node, cond);
        self.expect_punct(node, ":")?;
        let suite = self.suite(line, col)?;
        self.builder.attach(node, suite);
        loop {
            match self.peek() {
                Some(t) if t.kind == TokenKind::Keyword && t.lexeme == "elif" && t.col == col => {
                    let clause = self.builder.open(kind::ELIF_CLAUSE);
                    let cl_line = t.line;
                    self.eat_terminal(clause, kind::KEYWORD);
                    let cond = self.expression(cl_line)?;
                    self.builder.attach(clause, cond);
                    self.expect_punct(clause, ":")?;
                    let body = self.suite(cl_line, col)?;
                    self.builder.attach(clause, body);
                    self.builder.attach(node, clause);
                }
                Some(t) if t.kind == TokenKind::Keyword && t.lexeme == "else" && t.col == col => {
                    let clause = self.builder.open(kind::ELSE_CLAUSE);
                    let cl_line = t.line;
                    self.eat_terminal(clause, kind::KEYWORD);
                    self.expect_punct(clause, ":")?;
                    let body = self.suite(cl_line, col)?;
                    self.builder.attach(clause, body);
                    self.builder.attach(node, clause);
                    break;
                }
                _ => break,
            }
        }
        Ok(node)
    }

    fn while_statement(&mut self) -> Result<usize, ParseError> {
        let node = self.builder.open(kind::WHILE);
        let header = self.peek().unwrap();
        let (line, col) = (header.line, header.col);
        self.eat_terminal(node, kind::KEYWORD);
        let cond = self.expression(line)?;
        self.builder.attach(node, cond);
        self.expect_punct(node, ":")?;
        let suite = self.suite(line, col)?;
        self.builder.attach(node, suite);
        Ok(node)
    }

    fn for_statement(&mut self) -> Result<usize, ParseError> {
        let node = self.builder.open(kind::FOR);
        let header = self.peek().unwrap();
        let (line, col) = (header.line, header.col);
        self.eat_terminal(node, kind::KEYWORD);
        self.expect_name(node)?;
        match self.peek() {
            Some(t) if t.kind == TokenKind::Keyword && t.lexeme == "in" => {
                self.eat_terminal(node, kind::KEYWORD);
            }
            Some(t) => return Err(self.err_at("\"in\"", t)),
            None => return Err(self.err_eof("\"in\"")),
        }
        let iter = self.expression(line)?;
        self.builder.attach(node, iter);
        self.expect_punct(node, ":")?;
        let suite = self.suite(line, col)?;
        self.builder.attach(node, suite);
        Ok(node)
    }

    /// Inline suite (one statement on the header line) or an indented block.
    fn suite(&mut self, header_line: usize, header_col: usize) -> Result<usize, ParseError> {
        let suite = self.builder.open(kind::SUITE);
        match self.peek() {
            Some(t) if t.line == header_line => {
                let stmt = self.simple_statement()?;
                self.builder.attach(suite, stmt);
            }
            Some(t) if t.col > header_col => {
                let block_col = t.col;
                loop {
                    match self.peek() {
                        Some(t) if t.col == block_col => {
                            let stmt = self.statement()?;
                            self.builder.attach(suite, stmt);
                        }
                        Some(t) if t.col > header_col => {
                            return Err(self.err_at(
                                &format!("a statement indented to column {block_col}"),
                                t,
                            ));
                        }
                        _ => break,
                    }
                }
            }
            Some(t) => return Err(self.err_at("an indented block", t)),
            None => return Err(self.err_eof("an indented block")),
        }
        Ok(suite)
    }

    /// Comparison-level expression confined to `line`.
    fn expression(&mut self, line: usize) -> Result<usize, ParseError> {
        self.depth += 1;
        let result = if self.depth > MAX_DEPTH {
            Err(ParseError {
                expected: "a shallower expression".into(),
                found: "nesting deeper than the parser limit".into(),
                line,
                col: self.peek().map(|t| t.col).unwrap_or(1),
            })
        } else {
            self.binary_level(line, 0)
        };
        self.depth -= 1;
        result
    }

    fn binary_level(&mut self, line: usize, level: usize) -> Result<usize, ParseError> {
        const LEVELS: [&[&str]; 3] = [&["==", "<", ">"], &["+", "-"], &["*", "/"]];
        if level == LEVELS.len() {
            return self.factor(line);
        }
        let mut lhs = self.binary_level(line, level + 1)?;
        while let Some(t) = self.peek() {
            if t.line == line
                && t.kind == TokenKind::Operator
                && LEVELS[level].contains(&t.lexeme.as_str())
            {
                let op_node = self.builder.open(kind::BINARY_OP);
                self.builder.attach(op_node, lhs);
                self.eat_terminal(op_node, kind::OP);
                let rhs = self.binary_level(line, level + 1)?;
                self.builder.attach(op_node, rhs);
                lhs = op_node;
            } else {
                break;
            }
        }
        Ok(lhs)
    }

    fn factor(&mut self, line: usize) -> Result<usize, ParseError> {
        match self.peek() {
            Some(t) if t.line == line && t.kind == TokenKind::Operator && t.lexeme == "-" => {
                self.depth += 1;
                let result = if self.depth > MAX_DEPTH {
                    Err(ParseError {
                        expected: "a shallower expression".into(),
                        found: "nesting deeper than the parser limit".into(),
                        line,
                        col: t.col,
                    })
                } else {
                    let node = self.builder.open(kind::UNARY_OP);
                    self.eat_terminal(node, kind::OP);
                    let inner = self.factor(line)?;
                    self.builder.attach(node, inner);
                    Ok(node)
                };
                self.depth -= 1;
                result
            }
            _ => self.atom_with_trailers(line),
        }
    }

    fn atom_with_trailers(&mut self, line: usize) -> Result<usize, ParseError> {
        let mut node = self.atom(line)?;
        while let Some(t) = self.peek() {
            if t.line == line && t.kind == TokenKind::Punctuation && t.lexeme == "(" {
                let call = self.builder.open(kind::CALL);
                self.builder.attach(call, node);
                self.eat_terminal(call, kind::PUNCT);
                if self
                    .peek()
                    .map_or(false, |t| !(t.kind == TokenKind::Punctuation && t.lexeme == ")"))
                {
                    let arg = self.expression(line)?;
                    self.builder.attach(call, arg);
                    while self
                        .peek()
                        .map_or(false, |t| t.kind == TokenKind::Punctuation && t.lexeme == ",")
                    {
                        self.eat_terminal(call, kind::PUNCT);
                        let arg = self.expression(line)?;
                        self.builder.attach(call, arg);
                    }
                }
                self.expect_punct(call, ")")?;
                node = call;
            } else {
                break;
            }
        }
        Ok(node)
    }

    fn atom(&mut self, line: usize) -> Result<usize, ParseError> {
        match self.peek() {
            Some(t) if t.line != line => Err(self.err_at("an expression on the same line", t)),
            Some(t) if t.kind == TokenKind::Identifier => {
                let id = self.builder.leaf(kind::NAME, &t.lexeme);
                self.advance();
                Ok(id)
            }
            Some(t)
                if t.kind == TokenKind::IntegerLiteral || t.kind == TokenKind::StringLiteral =>
            {
                let id = self.builder.leaf(kind::CONSTANT, &t.lexeme);
                self.advance();
                Ok(id)
            }
            Some(t) if t.kind == TokenKind::Punctuation && t.lexeme == "(" => {
                let paren = self.builder.open(kind::PAREN);
                self.eat_terminal(paren, kind::PUNCT);
                let inner = self.expression(line)?;
                self.builder.attach(paren, inner);
                self.expect_punct(paren, ")")?;
                Ok(paren)
            }
            Some(t) => Err(self.err_at("an expression", t)),
            None => Err(self.err_eof("an expression")),
        }
    }
}
