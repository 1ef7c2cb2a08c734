//! Multi-view code graphs over terminal tokens.
//!
//! Three binary views share one vertex set (the terminal tokens plus a
//! synthetic root at index 0): abstract syntax, control flow and data
//! dependency. A weighted sum combines them into a single non-negative
//! matrix whose positive entries are the pairs self-attention may connect;
//! the root row and column are forced on so it can attend everywhere and
//! everything can attend to it.

mod interchange;
mod sbt;
mod subtok;

pub use interchange::{deserialize_graph, serialize_graph};
pub use sbt::sbt_flatten;
pub use subtok::{subtokenize, SubtokenMap};

use std::collections::HashMap;

use thiserror::Error;

use crate::minilang::{self, kind, lex, parse, statements, Ast, StatementSpan};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("negative view weight {value} for {which}")]
    NegativeWeight { which: &'static str, value: f64 },
    #[error("view size mismatch: ast {ast}, flow {flow}, dep {dep}")]
    SizeMismatch { ast: usize, flow: usize, dep: usize },
    #[error("graph format error: {0}")]
    Format(String),
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error(transparent)]
    Lex(#[from] minilang::LexError),
    #[error(transparent)]
    Parse(#[from] minilang::ParseError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewKind {
    Ast,
    Flow,
    Dep,
}

/// Symmetric binary adjacency over the token sequence. Index 0 is the root
/// slot, which carries only its self-loop inside a view; the combiner is
/// responsible for wiring the root to everything.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewMatrix {
    pub view: ViewKind,
    pub n: usize,
    entries: Vec<bool>,
}

impl ViewMatrix {
    /// Identity-only matrix (self-loops, nothing else).
    pub fn identity(view: ViewKind, n: usize) -> ViewMatrix {
        let mut entries = vec![false; n * n];
        for i in 0..n {
            entries[i * n + i] = true;
        }
        ViewMatrix { view, n, entries }
    }

    /// Set an undirected edge.
    pub fn connect(&mut self, i: usize, j: usize) {
        self.entries[i * self.n + j] = true;
        self.entries[j * self.n + i] = true;
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.entries[i * self.n + j]
    }

    /// Non-self edges as upper-triangular pairs, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                if self.get(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.edges().len()
    }

    /// Re-index through a subtoken map: piece p maps to its origin
    /// terminal's row, so pieces inherit all edges of their origin and
    /// pieces sharing an origin form a clique (they inherit the self-loop).
    pub fn expand(&self, map: &SubtokenMap) -> ViewMatrix {
        let m = map.pieces.len() + 1;
        let old_index = |i: usize| if i == 0 { 0 } else { map.origin[i - 1] + 1 };
        let mut entries = vec![false; m * m];
        for i in 0..m {
            for j in 0..m {
                entries[i * m + j] = self.get(old_index(i), old_index(j));
            }
        }
        ViewMatrix {
            view: self.view,
            n: m,
            entries,
        }
    }

    /// Truncate to the first `n` rows/columns (root included in the count).
    pub fn truncate(&self, n: usize) -> ViewMatrix {
        if n >= self.n {
            return self.clone();
        }
        let mut entries = vec![false; n * n];
        for i in 0..n {
            for j in 0..n {
                entries[i * n + j] = self.get(i, j);
            }
        }
        ViewMatrix {
            view: self.view,
            n,
            entries,
        }
    }
}

/// The combined multi-view graph the encoder consumes. `tokens` excludes
/// the root slot; all matrices include it at index 0.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewGraph {
    pub tokens: Vec<String>,
    pub ast: ViewMatrix,
    pub flow: ViewMatrix,
    pub dep: ViewMatrix,
    pub combined: Vec<f64>,
    pub weights: [f64; 3],
}

impl MultiViewGraph {
    /// Sequence length including the root slot.
    pub fn n(&self) -> usize {
        self.tokens.len() + 1
    }

    pub fn combined_at(&self, i: usize, j: usize) -> f64 {
        self.combined[i * self.n() + j]
    }

    /// Whether attention from i to j is allowed (positive combined weight).
    pub fn allowed(&self, i: usize, j: usize) -> bool {
        self.combined_at(i, j) > 0.0
    }

    /// Trivial graph over `tokens` where everything may attend everywhere.
    /// Used by baselines that ignore structure (plain sequences, SBT).
    pub fn full(tokens: Vec<String>) -> MultiViewGraph {
        let n = tokens.len() + 1;
        MultiViewGraph {
            tokens,
            ast: ViewMatrix::identity(ViewKind::Ast, n),
            flow: ViewMatrix::identity(ViewKind::Flow, n),
            dep: ViewMatrix::identity(ViewKind::Dep, n),
            combined: vec![1.0; n * n],
            weights: [1.0, 1.0, 1.0],
        }
    }
}

/// Weighted combination `alpha*A_ast + beta*A_flow + gamma*A_dep` with the
/// root row/column and the diagonal forced positive.
pub fn combine(
    tokens: Vec<String>,
    ast: ViewMatrix,
    flow: ViewMatrix,
    dep: ViewMatrix,
    alpha: f64,
    beta: f64,
    gamma: f64,
) -> Result<MultiViewGraph, GraphError> {
    for (which, value) in [("alpha", alpha), ("beta", beta), ("gamma", gamma)] {
        if value < 0.0 {
            return Err(GraphError::NegativeWeight { which, value });
        }
    }
    if ast.n != flow.n || ast.n != dep.n || ast.n != tokens.len() + 1 {
        return Err(GraphError::SizeMismatch {
            ast: ast.n,
            flow: flow.n,
            dep: dep.n,
        });
    }
    let n = ast.n;
    let mut combined = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut v = 0.0;
            if ast.get(i, j) {
                v += alpha;
            }
            if flow.get(i, j) {
                v += beta;
            }
            if dep.get(i, j) {
                v += gamma;
            }
            combined[i * n + j] = v;
        }
    }
    for i in 0..n {
        combined[i * n + i] = combined[i * n + i].max(1.0);
        combined[i] = combined[i].max(1.0);
        combined[i * n] = combined[i * n].max(1.0);
    }
    Ok(MultiViewGraph {
        tokens,
        ast,
        flow,
        dep,
        combined,
        weights: [alpha, beta, gamma],
    })
}

fn terminal_positions(ast: &Ast) -> HashMap<usize, usize> {
    ast.terminals()
        .into_iter()
        .enumerate()
        .map(|(pos, id)| (id, pos))
        .collect()
}

/// Abstract-syntax view: for every non-terminal, the representatives of its
/// children are pairwise connected. A child's representative is its leftmost
/// terminal descendant (a terminal represents itself); terminal children
/// that are pure syntax markers (keywords and punctuation) do not
/// participate, while expression operators do.
pub fn build_ast_view(ast: &Ast) -> ViewMatrix {
    let pos = terminal_positions(ast);
    let n = pos.len() + 1;
    let mut view = ViewMatrix::identity(ViewKind::Ast, n);
    for node in ast.nodes() {
        if node.is_terminal {
            continue;
        }
        let mut reps = Vec::new();
        for &c in &node.children {
            let child = ast.node(c);
            if child.is_terminal && (child.kind == kind::KEYWORD || child.kind == kind::PUNCT) {
                continue;
            }
            if let Some(t) = ast.leftmost_terminal(c) {
                reps.push(pos[&t] + 1);
            }
        }
        for a in 0..reps.len() {
            for b in (a + 1)..reps.len() {
                if reps[a] != reps[b] {
                    view.connect(reps[a], reps[b]);
                }
            }
        }
    }
    view
}

/// Control-flow view: a clique over each statement's terminals. Statement
/// order itself is covered by position encoding, so spans stay disconnected
/// from each other.
pub fn build_flow_view(ast: &Ast, spans: &[StatementSpan]) -> ViewMatrix {
    let pos = terminal_positions(ast);
    let n = pos.len() + 1;
    let mut view = ViewMatrix::identity(ViewKind::Flow, n);
    for span in spans {
        for a in 0..span.terminal_ids.len() {
            for b in (a + 1)..span.terminal_ids.len() {
                view.connect(
                    pos[&span.terminal_ids[a]] + 1,
                    pos[&span.terminal_ids[b]] + 1,
                );
            }
        }
    }
    view
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepMode {
    /// Each definition connects to its subsequent uses up to the next
    /// redefinition (an assignment reads its right side before defining
    /// its left side).
    #[default]
    DefUse,
    /// Every pair of occurrences of the same identifier connects.
    AllPairs,
}

/// Data-dependency view over identifier terminals.
pub fn build_dep_view(ast: &Ast, mode: DepMode) -> ViewMatrix {
    let pos = terminal_positions(ast);
    let n = pos.len() + 1;
    let mut view = ViewMatrix::identity(ViewKind::Dep, n);
    match mode {
        DepMode::DefUse => {
            let mut env: HashMap<String, usize> = HashMap::new();
            dep_walk(ast, 0, &pos, &mut env, &mut view);
        }
        DepMode::AllPairs => {
            let mut occurrences: HashMap<&str, Vec<usize>> = HashMap::new();
            for node in ast.nodes() {
                if node.is_terminal && node.kind == kind::NAME {
                    occurrences
                        .entry(node.lexeme.as_str())
                        .or_default()
                        .push(pos[&node.id] + 1);
                }
            }
            let mut keys: Vec<&&str> = occurrences.keys().collect();
            keys.sort();
            for key in keys {
                let occ = &occurrences[*key];
                for a in 0..occ.len() {
                    for b in (a + 1)..occ.len() {
                        view.connect(occ[a], occ[b]);
                    }
                }
            }
        }
    }
    view
}

fn dep_use(
    ast: &Ast,
    id: usize,
    pos: &HashMap<usize, usize>,
    env: &mut HashMap<String, usize>,
    view: &mut ViewMatrix,
) {
    let node = ast.node(id);
    if node.is_terminal {
        if node.kind == kind::NAME {
            if let Some(&def) = env.get(&node.lexeme) {
                view.connect(def, pos[&id] + 1);
            }
        }
        return;
    }
    for &c in &node.children {
        dep_use(ast, c, pos, env, view);
    }
}

fn dep_define(ast: &Ast, name_id: usize, pos: &HashMap<usize, usize>, env: &mut HashMap<String, usize>) {
    let node = ast.node(name_id);
    env.insert(node.lexeme.clone(), pos[&name_id] + 1);
}

fn dep_walk(
    ast: &Ast,
    id: usize,
    pos: &HashMap<usize, usize>,
    env: &mut HashMap<String, usize>,
    view: &mut ViewMatrix,
) {
    let node = ast.node(id);
    match node.kind.as_str() {
        kind::MODULE | kind::SUITE => {
            for &c in &node.children {
                dep_walk(ast, c, pos, env, view);
            }
        }
        kind::ASSIGN => {
            // The right side reads the previous binding; then the left side
            // becomes the reaching definition.
            dep_use(ast, node.children[2], pos, env, view);
            dep_define(ast, node.children[0], pos, env);
        }
        kind::FUNCTION_DEF => {
            let mut names = node
                .children
                .iter()
                .filter(|&&c| ast.node(c).kind == kind::NAME);
            names.next(); // the function's own name is neither def nor use
            let params: Vec<usize> = names.copied().collect();
            for param in params {
                dep_define(ast, param, pos, env);
            }
            for &c in &node.children {
                if ast.node(c).kind == kind::SUITE {
                    dep_walk(ast, c, pos, env, view);
                }
            }
        }
        kind::FOR => {
            // for <var> in <iterable>: iterable uses resolve before the
            // loop variable's definition takes effect.
            let var = node.children[1];
            for &c in &node.children[2..] {
                let ck = ast.node(c).kind.as_str();
                if ck != kind::SUITE && ck != kind::KEYWORD && ck != kind::PUNCT {
                    dep_use(ast, c, pos, env, view);
                }
            }
            dep_define(ast, var, pos, env);
            for &c in &node.children {
                if ast.node(c).kind == kind::SUITE {
                    dep_walk(ast, c, pos, env, view);
                }
            }
        }
        kind::IF | kind::WHILE | kind::ELIF_CLAUSE | kind::ELSE_CLAUSE => {
            for &c in &node.children {
                let ck = ast.node(c).kind.as_str();
                if ck == kind::SUITE || ck == kind::ELIF_CLAUSE || ck == kind::ELSE_CLAUSE {
                    dep_walk(ast, c, pos, env, view);
                } else if ck != kind::KEYWORD && ck != kind::PUNCT {
                    dep_use(ast, c, pos, env, view);
                }
            }
        }
        _ => dep_use(ast, id, pos, env, view),
    }
}

/// Options for the source-to-graph pipeline.
#[derive(Debug, Clone)]
pub struct GraphOptions {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub dep_mode: DepMode,
    /// Maximum sequence length including the root slot; longer graphs are
    /// truncated together with their token list.
    pub max_tokens: usize,
}

impl Default for GraphOptions {
    fn default() -> Self {
        GraphOptions {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            dep_mode: DepMode::DefUse,
            max_tokens: 400,
        }
    }
}

/// Full pipeline: lex, parse, build the three terminal-level views, expand
/// them to subtoken granularity, truncate, and combine.
pub fn graph_from_source(source: &str, opts: &GraphOptions) -> Result<MultiViewGraph, BuildError> {
    let tokens = lex(source)?;
    let ast = parse(&tokens)?;
    let spans = statements(&ast);
    let ast_view = build_ast_view(&ast);
    let flow_view = build_flow_view(&ast, &spans);
    let dep_view = build_dep_view(&ast, opts.dep_mode);
    let lexemes: Vec<String> = ast
        .terminals()
        .iter()
        .map(|&t| ast.node(t).lexeme.clone())
        .collect();
    let map = subtokenize(&lexemes);
    let keep = opts.max_tokens.max(1);
    let a = ast_view.expand(&map).truncate(keep);
    let f = flow_view.expand(&map).truncate(keep);
    let d = dep_view.expand(&map).truncate(keep);
    let mut pieces = map.pieces;
    pieces.truncate(keep - 1);
    Ok(combine(pieces, a, f, d, opts.alpha, opts.beta, opts.gamma)?)
}

#[cfg(test)]
mod tests;
