use apicon_core::dsl::compile_rule;
use apicon_core::eval::{check_on_input, Verdict};
use apicon_core::exec::targets::BROADCAST;
use apicon_core::value::{ApiInput, ConcreteValue, Tensor};
use proptest::prelude::*;

fn t(shape: &[u64]) -> ConcreteValue {
    ConcreteValue::Tensor(Tensor::summary(shape.to_vec(), 0, 0.0, 1.0))
}

fn ints(a: i64, b: i64) -> ApiInput {
    ApiInput::new("t.f")
        .with("a", ConcreteValue::Int(a))
        .with("b", ConcreteValue::Int(b))
}

fn params() -> Vec<String> {
    vec!["a".into(), "b".into()]
}

const OPS: [(&str, fn(i64, i64) -> bool); 6] = [
    ("=", |x, y| x == y),
    ("!=", |x, y| x != y),
    (">", |x, y| x > y),
    ("<", |x, y| x < y),
    (">=", |x, y| x >= y),
    ("<=", |x, y| x <= y),
];

fn negated(op: &str) -> &'static str {
    match op {
        "=" => "!=",
        "!=" => "=",
        ">" => "<=",
        "<" => ">=",
        ">=" => "<",
        _ => ">",
    }
}

fn verdict(b: bool) -> Verdict {
    if b {
        Verdict::Holds
    } else {
        Verdict::Fails
    }
}

/// Right-aligned pairwise dimension test.
fn broadcastable(x: &[u64], y: &[u64]) -> bool {
    let n = x.len().max(y.len());
    (0..n).all(|k| {
        let a = if k < x.len() { x[x.len() - 1 - k] } else { 1 };
        let b = if k < y.len() { y[y.len() - 1 - k] } else { 1 };
        a == b || a == 1 || b == 1
    })
}

fn small_shapes() -> Vec<Vec<u64>> {
    let mut out = vec![vec![]];
    let mut layer: Vec<Vec<u64>> = vec![vec![]];
    for _ in 0..3 {
        layer = layer
            .iter()
            .flat_map(|s| (1..=3).map(move |d| [s.clone(), vec![d]].concat()))
            .collect();
        out.extend(layer.clone());
    }
    out
}

#[test]
fn broadcast_rule_matches_brute_force() {
    let rule = compile_rule(BROADCAST).unwrap();
    let shapes = small_shapes();
    let p = vec!["x".to_string(), "y".to_string()];
    let mut n = 0;
    for a in &shapes {
        for b in &shapes {
            let input = ApiInput::new("t").with("x", t(a)).with("y", t(b));
            assert_eq!(check_on_input(&rule.rule, &p, &input), verdict(broadcastable(a, b)), "{a:?} {b:?}");
            n += 1;
        }
    }
    assert_eq!(n, 1600);
}

#[test]
fn broadcast_examples() {
    let rule = compile_rule(BROADCAST).unwrap();
    let p = vec!["x".to_string(), "y".to_string()];
    let pair = |a: &[u64], b: &[u64]| ApiInput::new("t").with("x", t(a)).with("y", t(b));
    assert_eq!(check_on_input(&rule.rule, &p, &pair(&[5, 3, 4, 1], &[3, 1, 1])), Verdict::Holds);
    assert_eq!(check_on_input(&rule.rule, &p, &pair(&[3, 4], &[2, 4])), Verdict::Fails);
}

#[test]
fn index_errors_surface() {
    let rule = compile_rule("{v_1: tensor} |= shape(v_1, 3) = 1").unwrap();
    let input = ApiInput::new("t").with("x", t(&[2, 2]));
    assert!(matches!(check_on_input(&rule.rule, &["x".into()], &input), Verdict::Errors(_)));
}

proptest! {
    #[test]
    fn forall_is_a_fold(lo in -4i64..6, len in -2i64..8, a in -5i64..6, b in -10i64..10, op in 0usize..6) {
        let hi = lo + len;
        let (sym, f) = OPS[op];
        let rule = compile_rule(&format!("{{v_1: int, v_2: int}} |= forall i in [{lo}, {hi}] : i * v_1 {sym} v_2")).unwrap();
        let expected = (lo..=hi).all(|i| f(i * a, b));
        prop_assert_eq!(check_on_input(&rule.rule, &params(), &ints(a, b)), verdict(expected));
        let rule = compile_rule(&format!("{{v_1: int, v_2: int}} |= exists i in [{lo}, {hi}] : i * v_1 {sym} v_2")).unwrap();
        let expected = (lo..=hi).any(|i| f(i * a, b));
        prop_assert_eq!(check_on_input(&rule.rule, &params(), &ints(a, b)), verdict(expected));
    }

    #[test]
    fn exists_is_dual_of_forall(lo in -4i64..6, len in -2i64..8, a in -5i64..6, b in -10i64..10, op in 0usize..6) {
        let hi = lo + len;
        let sym = OPS[op].0;
        let ex = compile_rule(&format!("{{v_1: int, v_2: int}} |= exists i in [{lo}, {hi}] : i * v_1 {sym} v_2")).unwrap();
        let fa = compile_rule(&format!("{{v_1: int, v_2: int}} |= forall i in [{lo}, {hi}] : i * v_1 {} v_2", negated(sym))).unwrap();
        let e = check_on_input(&ex.rule, &params(), &ints(a, b));
        let f = check_on_input(&fa.rule, &params(), &ints(a, b));
        prop_assert_eq!(e == Verdict::Holds, f == Verdict::Fails);
    }

    #[test]
    fn evaluation_is_deterministic(dims in prop::collection::vec(0u64..5, 0..5), d in -6i64..6) {
        let rule = compile_rule("{v_1: tensor, v_2: int} |= -1 * ndim(v_1) <= v_2 and v_2 <= ndim(v_1) - 1").unwrap();
        let input = ApiInput::new("t").with("x", t(&dims)).with("d", ConcreteValue::Int(d));
        let p = vec!["x".to_string(), "d".to_string()];
        let first = check_on_input(&rule.rule, &p, &input);
        prop_assert_eq!(&first, &check_on_input(&rule.rule, &p, &input));
        let nd = dims.len() as i64;
        prop_assert_eq!(first, verdict(-nd <= d && d < nd));
    }
}
