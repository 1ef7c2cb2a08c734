//! Synthetic MiniLang corpora.
//!
//! Two task families. `rename` summaries are recoverable from the token
//! surface alone (function name and parameter list). `dataflow` summaries
//! name the one parameter whose def-use chain reaches the returned value,
//! so producing the right summary requires resolving data dependencies:
//! every parameter feeds a first-level temporary, several temporaries feed
//! second-level ones, and exactly one chain ends at the return statement.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Rename,
    Dataflow,
    Mixed,
}

impl std::str::FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rename" => Ok(Task::Rename),
            "dataflow" => Ok(Task::Dataflow),
            "mixed" => Ok(Task::Mixed),
            other => Err(format!("unknown task {other:?} (rename|dataflow|mixed)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusItem {
    pub code: String,
    pub summary: String,
}

const VERBS: &[&str] = &[
    "get", "set", "make", "build", "fetch", "clean", "merge", "apply", "scan", "pack",
];
const NOUNS: &[&str] = &[
    "data", "items", "lines", "values", "records", "cache", "buffer", "chunks", "fields",
    "names",
];
const PARAMS: &[&str] = &[
    "alpha", "beta", "gamma", "delta", "omega", "count", "total", "value", "size", "width",
    "depth", "limit", "base", "rate", "scale", "offset", "index", "weight", "score", "level",
];
const TEMPS: &[&str] = &["t", "u", "v", "w", "p", "q", "m", "k"];
const OPS: &[(&str, &str)] = &[("+", "plus"), ("-", "minus"), ("*", "times")];

fn pick<'a>(rng: &mut ChaCha8Rng, pool: &[&'a str]) -> &'a str {
    pool[rng.gen_range(0..pool.len())]
}

fn pick_distinct<'a>(rng: &mut ChaCha8Rng, pool: &[&'a str], n: usize) -> Vec<&'a str> {
    let mut pool: Vec<&str> = pool.to_vec();
    pool.shuffle(rng);
    pool.truncate(n);
    pool
}

fn gen_rename(rng: &mut ChaCha8Rng) -> CorpusItem {
    let verb = pick(rng, VERBS);
    let noun = pick(rng, NOUNS);
    let params = pick_distinct(rng, PARAMS, 2);
    let (op, op_word) = OPS[rng.gen_range(0..OPS.len())];
    if rng.gen_bool(0.5) {
        CorpusItem {
            code: format!(
                "def {verb}_{noun}({}, {}):\n    return {} {op} {}",
                params[0], params[1], params[0], params[1]
            ),
            summary: format!(
                "{verb} the {noun} as {} {op_word} {}",
                params[0], params[1]
            ),
        }
    } else {
        let c = rng.gen_range(2..9);
        let t = pick(rng, TEMPS);
        CorpusItem {
            code: format!(
                "def {verb}_{noun}({}):\n    {t} = {} {op} {c}\n    return {t}",
                params[0], params[0]
            ),
            summary: format!("{verb} the {noun} from {} {op_word} {c}", params[0]),
        }
    }
}

/// The summary template shared by the dataflow generator and its tests.
/// Deliberately short: with four words, every high-order n-gram includes
/// the origin, so the score hinges on resolving the chain.
pub fn dataflow_summary(verb: &str, noun: &str, origin: &str) -> String {
    format!("{verb} {noun} from {origin}")
}

fn gen_dataflow(rng: &mut ChaCha8Rng) -> CorpusItem {
    let verb = pick(rng, VERBS);
    let noun = pick(rng, NOUNS);
    let n_params = rng.gen_range(3..=5);
    let params = pick_distinct(rng, PARAMS, n_params);
    let temps = pick_distinct(rng, TEMPS, 2);

    // Every statement assigns one parameter into one of two temporaries,
    // so temporaries are redefined along the way. The summary names the
    // parameter behind the returned temporary's reaching definition; a
    // temp's name alone is ambiguous, only the def-use chain disambiguates
    // which assignment survives.
    let mut temp_of: Vec<usize> = (0..n_params).map(|i| if i < 2 { i } else { rng.gen_range(0..2) }).collect();
    temp_of.shuffle(rng);
    let mut order: Vec<usize> = (0..n_params).collect();
    order.shuffle(rng);

    let mut body = String::new();
    let mut last_def_param: [Option<usize>; 2] = [None, None];
    for &i in &order {
        let (op, _) = OPS[rng.gen_range(0..OPS.len())];
        let c = rng.gen_range(1..9);
        body.push_str(&format!(
            "    {} = {} {op} {c}\n",
            temps[temp_of[i]], params[i]
        ));
        last_def_param[temp_of[i]] = Some(i);
    }
    let returned_temp = rng.gen_range(0..2);
    let origin = last_def_param[returned_temp].expect("both temps are defined");
    let code = format!(
        "def {verb}_{noun}({}):\n{body}    return {}",
        params.join(", "),
        temps[returned_temp]
    );
    CorpusItem {
        code,
        summary: dataflow_summary(verb, noun, params[origin]),
    }
}

/// Deterministic synthetic corpus: same `(n, seed, task)` always yields the
/// same items.
pub fn gen_corpus(n: usize, seed: u64, task: Task) -> Vec<CorpusItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| match task {
            Task::Rename => gen_rename(&mut rng),
            Task::Dataflow => gen_dataflow(&mut rng),
            Task::Mixed => {
                if rng.gen_bool(0.5) {
                    gen_rename(&mut rng)
                } else {
                    gen_dataflow(&mut rng)
                }
            }
        })
        .collect()
}

pub fn corpus_to_jsonl(items: &[CorpusItem]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("corpus item serializes"));
        out.push('\n');
    }
    out
}

pub fn corpus_from_jsonl(text: &str) -> Result<Vec<CorpusItem>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codegraph::{build_dep_view, DepMode};
    use crate::minilang::{kind, lex, parse};

    #[test]
    fn corpora_are_deterministic() {
        for task in [Task::Rename, Task::Dataflow, Task::Mixed] {
            let a = gen_corpus(20, 7, task);
            let b = gen_corpus(20, 7, task);
            assert_eq!(a, b);
            let c = gen_corpus(20, 8, task);
            assert_ne!(a, c);
        }
    }

    #[test]
    fn generated_programs_parse() {
        for task in [Task::Rename, Task::Dataflow, Task::Mixed] {
            for (i, item) in gen_corpus(50, 3, task).iter().enumerate() {
                let toks = lex(&item.code).unwrap_or_else(|e| panic!("item {i}: {e}"));
                parse(&toks).unwrap_or_else(|e| panic!("item {i}: {e}\n{}", item.code));
            }
        }
    }

    /// Independent resolution oracle: follow def-use edges from the returned
    /// variable back to a parameter; the summary must name exactly that
    /// parameter.
    fn resolve_origin(code: &str) -> String {
        let ast = parse(&lex(code).unwrap()).unwrap();
        let dep = build_dep_view(&ast, DepMode::DefUse);
        let terminals = ast.terminals();
        // parameters: Name children of FunctionDef after the function name
        let def_node = ast
            .nodes()
            .iter()
            .find(|n| n.kind == kind::FUNCTION_DEF)
            .unwrap();
        let param_ids: Vec<usize> = def_node
            .children
            .iter()
            .copied()
            .filter(|&c| ast.node(c).kind == kind::NAME)
            .skip(1)
            .collect();
        // the returned variable: the Name under the Return node
        let ret_node = ast.nodes().iter().find(|n| n.kind == kind::RETURN).unwrap();
        let ret_name = *ret_node
            .children
            .iter()
            .find(|&&c| ast.node(c).kind == kind::NAME)
            .unwrap();
        let pos_of = |id: usize| terminals.iter().position(|&t| t == id).unwrap() + 1;
        // walk backward: a use connects to its definition, whose statement's
        // right side connects further back
        let mut frontier = pos_of(ret_name);
        loop {
            // the definition this use links to is the smallest connected
            // position before it
            let mut def_pos = None;
            for j in (1..frontier).rev() {
                if dep.get(frontier, j) {
                    def_pos = Some(j);
                    break;
                }
            }
            let def_pos = def_pos.expect("use must have a reaching definition");
            let def_id = terminals[def_pos - 1];
            if param_ids.contains(&def_id) {
                return ast.node(def_id).lexeme.clone();
            }
            // def is a temp's assignment LHS; chase the first Name terminal
            // after it, which is that statement's right-side variable
            let mut idx = def_pos; // 0-based index of the token after the LHS
            let next_use = loop {
                let cand = terminals[idx];
                if ast.node(cand).kind == kind::NAME {
                    break cand;
                }
                idx += 1;
            };
            frontier = pos_of(next_use);
        }
    }

    #[test]
    fn dataflow_summary_names_the_chain_origin() {
        for (i, item) in gen_corpus(40, 11, Task::Dataflow).iter().enumerate() {
            let origin = resolve_origin(&item.code);
            assert!(
                item.summary.ends_with(&format!("from {origin}")),
                "item {i}: summary {:?} vs resolved origin {origin}\n{}",
                item.summary,
                item.code
            );
        }
    }

    /// Word-level swap of two identifiers (plain substring replacement would
    /// corrupt names that contain other names, like value/values).
    fn swap_words(code: &str, a: &str, b: &str) -> String {
        let mut out = String::new();
        let mut word = String::new();
        let flush = |word: &mut String, out: &mut String| {
            if !word.is_empty() {
                if word == a {
                    out.push_str(b);
                } else if word == b {
                    out.push_str(a);
                } else {
                    out.push_str(word);
                }
                word.clear();
            }
        };
        for ch in code.chars() {
            if ch.is_ascii_alphanumeric() || ch == '_' {
                word.push(ch);
            } else {
                flush(&mut word, &mut out);
                out.push(ch);
            }
        }
        flush(&mut word, &mut out);
        out
    }

    #[test]
    fn swapping_variable_roles_changes_the_correct_summary() {
        for seed in [5u64, 6, 7] {
            let item = &gen_corpus(1, seed, Task::Dataflow)[0];
            let origin = resolve_origin(&item.code);
            let header_end = item.code.find(':').unwrap();
            let header = &item.code[..header_end];
            let inside = &header[header.find('(').unwrap() + 1..header.rfind(')').unwrap()];
            let distractor = inside
                .split(',')
                .map(|s| s.trim().to_string())
                .find(|p| *p != origin)
                .unwrap();
            let swapped = swap_words(&item.code, &origin, &distractor);
            assert_eq!(
                resolve_origin(&swapped),
                distractor,
                "after the swap the chain must reach the other parameter"
            );
        }
    }

    #[test]
    fn golden_first_item() {
        let item = &gen_corpus(1, 0, Task::Dataflow)[0];
        let expected: CorpusItem = serde_json::from_str(include_str!(
            "../../tests/fixtures/corpus_golden_seed0.json"
        ))
        .unwrap();
        assert_eq!(*item, expected);
    }

    #[test]
    fn jsonl_roundtrip() {
        let items = gen_corpus(5, 1, Task::Mixed);
        let text = corpus_to_jsonl(&items);
        assert_eq!(corpus_from_jsonl(&text).unwrap(), items);
    }
}
