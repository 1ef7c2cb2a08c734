//! Graph interchange format.
//!
//! A JSON object with sparse coordinate lists per view. Indices are
//! 0-based over the token list and exclude the root slot, which is added
//! back on load; diagonals are implied. The canonical form (upper-triangle
//! pairs, sorted) makes serialize-then-deserialize byte-stable, and the
//! format doubles as the ingestion path for graphs extracted from other
//! languages by external tools.

use serde::{Deserialize, Serialize};

use super::{combine, GraphError, MultiViewGraph, ViewKind, ViewMatrix};

#[derive(Serialize, Deserialize)]
struct GraphFile {
    n: usize,
    tokens: Vec<String>,
    views: ViewsFile,
    weights: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct ViewsFile {
    ast: Vec<(usize, usize)>,
    flow: Vec<(usize, usize)>,
    dep: Vec<(usize, usize)>,
}

fn view_edges(v: &ViewMatrix) -> Vec<(usize, usize)> {
    // Matrix indices include the root at 0; the file excludes it.
    v.edges().iter().map(|&(i, j)| (i - 1, j - 1)).collect()
}

pub fn serialize_graph(g: &MultiViewGraph) -> Vec<u8> {
    let file = GraphFile {
        n: g.tokens.len(),
        tokens: g.tokens.clone(),
        views: ViewsFile {
            ast: view_edges(&g.ast),
            flow: view_edges(&g.flow),
            dep: view_edges(&g.dep),
        },
        weights: g.weights,
    };
    serde_json::to_vec(&file).expect("graph serialization cannot fail")
}

fn view_from_edges(
    view: ViewKind,
    n: usize,
    edges: &[(usize, usize)],
    name: &str,
) -> Result<ViewMatrix, GraphError> {
    let mut m = ViewMatrix::identity(view, n + 1);
    for &(i, j) in edges {
        if i >= n || j >= n {
            return Err(GraphError::Format(format!(
                "{name} edge ({i}, {j}) out of range for n = {n}"
            )));
        }
        m.connect(i + 1, j + 1);
    }
    Ok(m)
}

pub fn deserialize_graph(bytes: &[u8]) -> Result<MultiViewGraph, GraphError> {
    let file: GraphFile = serde_json::from_slice(bytes)
        .map_err(|e| GraphError::Format(format!("invalid graph JSON: {e}")))?;
    if file.tokens.len() != file.n {
        return Err(GraphError::Format(format!(
            "n is {} but the token list has {} entries",
            file.n,
            file.tokens.len()
        )));
    }
    let ast = view_from_edges(ViewKind::Ast, file.n, &file.views.ast, "ast")?;
    let flow = view_from_edges(ViewKind::Flow, file.n, &file.views.flow, "flow")?;
    let dep = view_from_edges(ViewKind::Dep, file.n, &file.views.dep, "dep")?;
    combine(
        file.tokens,
        ast,
        flow,
        dep,
        file.weights[0],
        file.weights[1],
        file.weights[2],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codegraph::{graph_from_source, GraphOptions};

    #[test]
    fn roundtrip_is_byte_identical() {
        let g = graph_from_source("b = a + 1\nprint(b)", &GraphOptions::default()).unwrap();
        let bytes = serialize_graph(&g);
        let g2 = deserialize_graph(&bytes).unwrap();
        assert_eq!(g, g2);
        assert_eq!(serialize_graph(&g2), bytes);
    }

    #[test]
    fn n_mismatch_is_a_format_error() {
        let bad = br#"{"n": 3, "tokens": ["a", "b"], "views": {"ast": [], "flow": [], "dep": []}, "weights": [1.0, 1.0, 1.0]}"#;
        assert!(matches!(
            deserialize_graph(bad),
            Err(GraphError::Format(_))
        ));
    }

    #[test]
    fn out_of_range_edge_is_a_format_error() {
        let bad = br#"{"n": 2, "tokens": ["a", "b"], "views": {"ast": [[0, 5]], "flow": [], "dep": []}, "weights": [1.0, 1.0, 1.0]}"#;
        assert!(matches!(
            deserialize_graph(bad),
            Err(GraphError::Format(_))
        ));
    }

    #[test]
    fn hand_written_two_token_graph() {
        let file = br#"{"n": 2, "tokens": ["a", "b"], "views": {"ast": [[0, 1]], "flow": [], "dep": []}, "weights": [1.0, 0.0, 1.0]}"#;
        let g = deserialize_graph(file).unwrap();
        assert_eq!(g.tokens, vec!["a", "b"]);
        // root slot at 0; tokens at 1 and 2
        assert!(g.ast.get(1, 2));
        assert!(!g.flow.get(1, 2));
        assert_eq!(g.combined_at(1, 2), 1.0);
        assert!(g.allowed(0, 2) && g.allowed(2, 0), "root is global");
        assert_eq!(g.weights, [1.0, 0.0, 1.0]);
    }
}
