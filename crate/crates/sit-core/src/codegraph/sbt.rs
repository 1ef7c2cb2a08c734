//! Structure-based traversal: flatten an AST into a bracketed sequence.
//!
//! Each node contributes `( label ... ) label`, where the label is the
//! lexeme for terminals and the construct kind for non-terminals, so the
//! output has exactly four tokens per node. This is the sequential baseline
//! the graph views compete against.

use crate::minilang::Ast;

pub fn sbt_flatten(ast: &Ast) -> Vec<String> {
    let mut out = Vec::with_capacity(ast.len() * 4);
    emit(ast, 0, &mut out);
    out
}

fn emit(ast: &Ast, id: usize, out: &mut Vec<String>) {
    let node = ast.node(id);
    let label = if node.is_terminal {
        node.lexeme.clone()
    } else {
        node.kind.clone()
    };
    out.push("(".to_string());
    out.push(label.clone());
    for &c in &node.children {
        emit(ast, c, out);
    }
    out.push(")".to_string());
    out.push(label);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minilang::{kind, lex, parse, Ast};

    #[test]
    fn single_terminal() {
        let mut b = Ast::builder();
        let root = b.leaf(kind::NAME, "x");
        let ast = b.finish(root);
        assert_eq!(sbt_flatten(&ast), vec!["(", "x", ")", "x"]);
    }

    #[test]
    fn three_node_tree_has_twelve_tokens() {
        let mut b = Ast::builder();
        let assign = b.open(kind::ASSIGN);
        b.terminal(assign, kind::NAME, "b");
        b.terminal(assign, kind::CONSTANT, "1");
        let ast = b.finish(assign);
        let seq = sbt_flatten(&ast);
        assert_eq!(seq.len(), 12);
        assert_eq!(
            seq,
            vec!["(", "Assign", "(", "b", ")", "b", "(", "1", ")", "1", ")", "Assign"]
        );
    }

    #[test]
    fn output_exceeds_terminal_count() {
        let ast = parse(&lex("b = a + 1\nprint(b)").unwrap()).unwrap();
        let seq = sbt_flatten(&ast);
        assert_eq!(seq.len(), 4 * ast.len());
        assert!(seq.len() > ast.terminals().len());
    }
}
