//! MiniLang: a small indentation-based imperative language.
//!
//! The grammar (see `docs/GRAMMAR.md`) covers functions, assignments,
//! arithmetic and comparison expressions, calls, `if`/`elif`/`else`,
//! `while`, `for-in` and `return` — enough surface to exercise syntax,
//! control-flow and data-dependency structure without modelling a real
//! language. The parser keeps every token as a terminal AST node, so the
//! in-order terminal sequence reproduces the token stream exactly.

mod lexer;
mod parser;

pub use lexer::{lex, LexError, Token, TokenKind};
pub use parser::{parse, ParseError};

/// AST node. Terminals carry the token lexeme; non-terminals carry a
/// construct kind and ordered children. Node ids are assigned in pre-order.
#[derive(Debug, Clone, PartialEq)]
pub struct AstNode {
    pub id: usize,
    pub kind: String,
    pub lexeme: String,
    pub children: Vec<usize>,
    pub is_terminal: bool,
}

/// An AST stored as a flat pre-order arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Ast {
    nodes: Vec<AstNode>,
}

/// Non-terminal kind names. Terminal kinds are `Name`, `Constant`, `Op`,
/// `Keyword` and `Punct`.
pub mod kind {
    pub const MODULE: &str = "Module";
    pub const FUNCTION_DEF: &str = "FunctionDef";
    pub const ASSIGN: &str = "Assign";
    pub const RETURN: &str = "Return";
    pub const IF: &str = "If";
    pub const ELIF_CLAUSE: &str = "ElifClause";
    pub const ELSE_CLAUSE: &str = "ElseClause";
    pub const WHILE: &str = "While";
    pub const FOR: &str = "For";
    pub const CALL: &str = "Call";
    pub const BINARY_OP: &str = "BinaryOp";
    pub const UNARY_OP: &str = "UnaryOp";
    pub const SUITE: &str = "Suite";

    pub const PAREN: &str = "Paren";

    pub const NAME: &str = "Name";
    pub const CONSTANT: &str = "Constant";
    pub const OP: &str = "Op";
    pub const KEYWORD: &str = "Keyword";
    pub const PUNCT: &str = "Punct";
}

impl Ast {
    pub(crate) fn from_nodes(nodes: Vec<AstNode>) -> Ast {
        Ast { nodes }
    }

    pub fn root(&self) -> &AstNode {
        &self.nodes[0]
    }

    pub fn node(&self, id: usize) -> &AstNode {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[AstNode] {
        &self.nodes
    }

    /// Terminal node ids in source order (in-order over the tree equals
    /// pre-order restricted to leaves).
    pub fn terminals(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect_terminals(0, &mut out);
        out
    }

    fn collect_terminals(&self, id: usize, out: &mut Vec<usize>) {
        let n = &self.nodes[id];
        if n.is_terminal {
            out.push(id);
        }
        for &c in &n.children {
            self.collect_terminals(c, out);
        }
    }

    /// Leftmost terminal descendant of a node (the node itself if terminal).
    pub fn leftmost_terminal(&self, id: usize) -> Option<usize> {
        let n = &self.nodes[id];
        if n.is_terminal {
            return Some(id);
        }
        for &c in &n.children {
            if let Some(t) = self.leftmost_terminal(c) {
                return Some(t);
            }
        }
        None
    }

    /// Builder used by the parser and by tests that construct trees by hand.
    pub fn builder() -> AstBuilder {
        AstBuilder { nodes: Vec::new() }
    }
}

/// Incremental AST construction. Nodes may be created in any order;
/// `finish` renumbers them so ids are 0..n-1 in pre-order, which is what
/// the [`AstNode`] invariants promise.
pub struct AstBuilder {
    nodes: Vec<AstNode>,
}

impl AstBuilder {
    pub fn open(&mut self, kind: &str) -> usize {
        let id = self.nodes.len();
        self.nodes.push(AstNode {
            id,
            kind: kind.to_string(),
            lexeme: String::new(),
            children: Vec::new(),
            is_terminal: false,
        });
        id
    }

    /// Terminal attached to `parent`.
    pub fn terminal(&mut self, parent: usize, kind: &str, lexeme: &str) -> usize {
        let id = self.leaf(kind, lexeme);
        self.nodes[parent].children.push(id);
        id
    }

    /// Unattached terminal; attach it later with [`AstBuilder::attach`].
    pub fn leaf(&mut self, kind: &str, lexeme: &str) -> usize {
        let id = self.nodes.len();
        self.nodes.push(AstNode {
            id,
            kind: kind.to_string(),
            lexeme: lexeme.to_string(),
            children: Vec::new(),
            is_terminal: true,
        });
        id
    }

    pub fn attach(&mut self, parent: usize, child: usize) {
        self.nodes[parent].children.push(child);
    }

    /// Renumber in pre-order from `root` and build the final tree. Nodes
    /// not reachable from `root` are discarded.
    pub fn finish(self, root: usize) -> Ast {
        let mut map = vec![usize::MAX; self.nodes.len()];
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![root];
        while let Some(id) = stack.pop() {
            map[id] = order.len();
            order.push(id);
            for &c in self.nodes[id].children.iter().rev() {
                stack.push(c);
            }
        }
        let nodes = order
            .iter()
            .map(|&old| {
                let n = &self.nodes[old];
                AstNode {
                    id: map[old],
                    kind: n.kind.clone(),
                    lexeme: n.lexeme.clone(),
                    children: n.children.iter().map(|&c| map[c]).collect(),
                    is_terminal: n.is_terminal,
                }
            })
            .collect();
        Ast::from_nodes(nodes)
    }
}

/// Terminals of one statement, in source order. Compound statements
/// contribute a span for their header (keyword through the trailing colon)
/// and recurse into their bodies.
#[derive(Debug, Clone, PartialEq)]
pub struct StatementSpan {
    pub stmt_id: usize,
    pub terminal_ids: Vec<usize>,
}

/// Statement spans in execution (source) order.
pub fn statements(ast: &Ast) -> Vec<StatementSpan> {
    let mut spans = Vec::new();
    collect_statement_spans(ast, 0, &mut spans);
    spans
}

fn collect_statement_spans(ast: &Ast, id: usize, spans: &mut Vec<StatementSpan>) {
    let node = ast.node(id);
    match node.kind.as_str() {
        kind::MODULE | kind::SUITE => {
            for &c in &node.children {
                collect_statement_spans(ast, c, spans);
            }
        }
        kind::FUNCTION_DEF | kind::IF | kind::WHILE | kind::FOR | kind::ELIF_CLAUSE
        | kind::ELSE_CLAUSE => {
            // Header terminals are everything outside nested suites/clauses.
            let mut header = Vec::new();
            let mut rest = Vec::new();
            for &c in &node.children {
                let ck = ast.node(c).kind.as_str();
                if ck == kind::SUITE || ck == kind::ELIF_CLAUSE || ck == kind::ELSE_CLAUSE {
                    rest.push(c);
                } else {
                    collect_terminals_into(ast, c, &mut header);
                }
            }
            spans.push(StatementSpan {
                stmt_id: id,
                terminal_ids: header,
            });
            for c in rest {
                collect_statement_spans(ast, c, spans);
            }
        }
        _ => {
            // Simple statement: all terminals beneath it form one span.
            let mut terms = Vec::new();
            collect_terminals_into(ast, id, &mut terms);
            spans.push(StatementSpan {
                stmt_id: id,
                terminal_ids: terms,
            });
        }
    }
}

fn collect_terminals_into(ast: &Ast, id: usize, out: &mut Vec<usize>) {
    let n = ast.node(id);
    if n.is_terminal {
        out.push(id);
    }
    for &c in &n.children {
        collect_terminals_into(ast, c, out);
    }
}
