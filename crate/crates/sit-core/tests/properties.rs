//! Property tests: parser totality and round-tripping, view matrix
//! invariants, subtoken reachability, metric bounds, and interchange
//! stability, driven by random programs from the corpus generator and by
//! adversarial token streams.

use proptest::prelude::*;

use sit_core::codegraph::{
    deserialize_graph, graph_from_source, serialize_graph, subtokenize, GraphOptions,
};
use sit_core::minilang::{lex, parse, statements, Token, TokenKind};
use sit_core::trainer::{bleu, gen_corpus, rouge_l, Task};

fn arb_task() -> impl Strategy<Value = Task> {
    prop_oneof![
        Just(Task::Rename),
        Just(Task::Dataflow),
        Just(Task::Mixed)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// The lexer is total: any input either tokenizes or reports a
    /// position, and every token's lexeme matches the source text at its
    /// recorded position.
    #[test]
    fn lexer_is_total_and_positions_are_exact(src in "[ -~\n]{0,120}") {
        if let Ok(tokens) = lex(&src) {
            let lines: Vec<&str> = src.split('\n').collect();
            for t in &tokens {
                let line = lines[t.line - 1];
                let from_col: String = line.chars().skip(t.col - 1).take(t.lexeme.chars().count()).collect();
                prop_assert_eq!(&from_col, &t.lexeme);
            }
        }
    }

    /// The parser never panics on arbitrary token streams, however
    /// incoherent their kinds and positions.
    #[test]
    fn parser_is_total_on_arbitrary_token_streams(
        spec in prop::collection::vec((0usize..12, 1usize..4, 1usize..30), 0..60)
    ) {
        let lexemes = [
            "def", "if", "return", "x", "y", "(", ")", ":", "=", "+", "1", ",",
        ];
        let mut line = 1;
        let tokens: Vec<Token> = spec
            .iter()
            .map(|&(ix, dline, col)| {
                line += dline - 1;
                let lexeme = lexemes[ix];
                let kind = match lexeme {
                    "def" | "if" | "return" => TokenKind::Keyword,
                    "x" | "y" => TokenKind::Identifier,
                    "1" => TokenKind::IntegerLiteral,
                    "+" => TokenKind::Operator,
                    _ => TokenKind::Punctuation,
                };
                Token { kind, lexeme: lexeme.into(), line, col }
            })
            .collect();
        let _ = parse(&tokens); // must return, never crash
    }

    /// Valid programs round-trip: terminal lexemes in tree order equal the
    /// token stream, ids are pre-order, and every terminal lands in
    /// exactly one statement span.
    #[test]
    fn generated_programs_roundtrip(seed in 0u64..500, task in arb_task()) {
        let item = &gen_corpus(1, seed, task)[0];
        let tokens = lex(&item.code).unwrap();
        let ast = parse(&tokens).unwrap();
        let terminal_lexemes: Vec<&str> = ast
            .terminals()
            .iter()
            .map(|&t| ast.node(t).lexeme.as_str())
            .collect();
        let stream: Vec<&str> = tokens.iter().map(|t| t.lexeme.as_str()).collect();
        prop_assert_eq!(terminal_lexemes, stream);
        for node in ast.nodes() {
            for &c in &node.children {
                prop_assert!(node.id < c);
            }
        }
        let spans = statements(&ast);
        let mut seen = std::collections::HashSet::new();
        for s in &spans {
            for &t in &s.terminal_ids {
                prop_assert!(seen.insert(t));
            }
        }
        prop_assert_eq!(seen.len(), ast.terminals().len());
    }

    /// All three views are symmetric with a full diagonal, and the combined
    /// matrix is the pointwise weighted sum away from the root slot.
    #[test]
    fn views_and_combination_invariants(
        seed in 0u64..300,
        task in arb_task(),
        alpha in 0.0f64..3.0,
        beta in 0.0f64..3.0,
        gamma in 0.0f64..3.0,
    ) {
        let item = &gen_corpus(1, seed, task)[0];
        let opts = GraphOptions { alpha, beta, gamma, ..GraphOptions::default() };
        let g = graph_from_source(&item.code, &opts).unwrap();
        let n = g.n();
        for v in [&g.ast, &g.flow, &g.dep] {
            for i in 0..n {
                prop_assert!(v.get(i, i));
                for j in 0..n {
                    prop_assert_eq!(v.get(i, j), v.get(j, i));
                }
            }
        }
        for i in 1..n {
            for j in 1..n {
                if i == j { continue; }
                let expect = alpha * (g.ast.get(i, j) as u8 as f64)
                    + beta * (g.flow.get(i, j) as u8 as f64)
                    + gamma * (g.dep.get(i, j) as u8 as f64);
                prop_assert_eq!(g.combined_at(i, j), expect);
            }
        }
        // root row/column and diagonal forced positive
        for i in 0..n {
            prop_assert!(g.combined_at(0, i) > 0.0);
            prop_assert!(g.combined_at(i, 0) > 0.0);
            prop_assert!(g.combined_at(i, i) > 0.0);
        }
    }

    /// Piece connectivity after expansion is exactly origin connectivity
    /// plus same-origin cliques.
    #[test]
    fn subtoken_expansion_preserves_reachability(seed in 0u64..200) {
        let item = &gen_corpus(1, seed, Task::Mixed)[0];
        let tokens = lex(&item.code).unwrap();
        let ast = parse(&tokens).unwrap();
        let view = sit_core::codegraph::build_ast_view(&ast);
        let lexemes: Vec<String> = ast
            .terminals()
            .iter()
            .map(|&t| ast.node(t).lexeme.clone())
            .collect();
        let map = subtokenize(&lexemes);
        let expanded = view.expand(&map);
        for p in 0..map.pieces.len() {
            for q in 0..map.pieces.len() {
                let want = map.origin[p] == map.origin[q]
                    || view.get(map.origin[p] + 1, map.origin[q] + 1);
                prop_assert_eq!(expanded.get(p + 1, q + 1), want);
            }
        }
    }

    /// Serialization is canonical: parse(serialize(g)) == g and the bytes
    /// are stable under a round trip.
    #[test]
    fn interchange_roundtrip(seed in 0u64..200, task in arb_task()) {
        let item = &gen_corpus(1, seed, task)[0];
        let g = graph_from_source(&item.code, &GraphOptions::default()).unwrap();
        let bytes = serialize_graph(&g);
        let g2 = deserialize_graph(&bytes).unwrap();
        prop_assert_eq!(&g, &g2);
        prop_assert_eq!(serialize_graph(&g2), bytes);
    }

    /// Metric outputs stay in [0, 1] and only the identity reaches 1.
    #[test]
    fn metric_bounds(
        hyp in prop::collection::vec("[a-d]", 1..8),
        rf in prop::collection::vec("[a-d]", 1..8),
    ) {
        let hyps = vec![hyp.clone()];
        let refs = vec![rf.clone()];
        let b = bleu(&hyps, &refs).unwrap();
        let r = rouge_l(&hyps, &refs).unwrap();
        prop_assert!((0.0..=1.0).contains(&b));
        prop_assert!((0.0..=1.0).contains(&r));
        if hyp == rf {
            prop_assert!((b - 1.0).abs() < 1e-12);
            prop_assert!((r - 1.0).abs() < 1e-12);
        }
    }
}
