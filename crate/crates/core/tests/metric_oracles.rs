use gvqa_core::metrics::{bleu_n, cider, rouge_l, stable_mean, tokenize, ROUGE_BETA};
use serde_json::Value;

const ALPHABET: [u8; 3] = *b"abc";

fn all_lists(max_len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for l in &frontier {
            for &s in &ALPHABET {
                let mut m: Vec<u8> = l.clone();
                m.push(s);
                next.push(m);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

fn is_subsequence(sub: &[u8], of: &[u8]) -> bool {
    let mut it = of.iter();
    sub.iter().all(|x| it.any(|y| y == x))
}

/// Every distinct subsequence of `a`, longest first.
fn subsequences(a: &[u8]) -> Vec<Vec<u8>> {
    let mut subs: Vec<Vec<u8>> = (0u32..(1 << a.len()))
        .map(|mask| (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| a[i]).collect())
        .collect();
    subs.sort_by(|x, y| y.len().cmp(&x.len()).then_with(|| x.cmp(y)));
    subs.dedup();
    subs
}

/// Longest common subsequence: the longest subsequence of `a` found in `b`.
fn brute_lcs(subs_of_a: &[Vec<u8>], b: &[u8]) -> usize {
    subs_of_a.iter().find(|s| is_subsequence(s, b)).map_or(0, Vec::len)
}

fn rouge_formula(c: &[u8], subs_of_c: &[Vec<u8>], r: &[u8]) -> f64 {
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let lcs = brute_lcs(subs_of_c, r);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / c.len() as f64;
    let rec = lcs as f64 / r.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    ((1.0 + b2) * p * rec) / (rec + b2 * p)
}

fn bleu1_direct(c: &[u8], r: &[u8]) -> f64 {
    if c.is_empty() {
        return 0.0;
    }
    let mut matched = 0;
    for s in ALPHABET {
        let in_c = c.iter().filter(|&&x| x == s).count();
        let in_r = r.iter().filter(|&&x| x == s).count();
        matched += in_c.min(in_r);
    }
    let p = if matched == 0 {
        1.0 / (c.len() as f64 + 1.0)
    } else {
        matched as f64 / c.len() as f64
    };
    let bp = if c.len() < r.len() {
        libm::exp(1.0 - r.len() as f64 / c.len() as f64)
    } else {
        1.0
    };
    p * bp
}

#[test]
fn exhaustive_small_lists_match_direct_formulas() {
    let lists = all_lists(6);
    assert_eq!(lists.len(), 1093);
    for c in &lists {
        let subs = subsequences(c);
        for r in &lists {
            assert_eq!(rouge_l(c, r), rouge_formula(c, &subs, r), "rouge_l {c:?} {r:?}");
            assert_eq!(
                bleu_n(c, std::slice::from_ref(r), 1),
                bleu1_direct(c, r),
                "bleu1 {c:?} {r:?}"
            );
        }
    }
}

fn oracle() -> Value {
    serde_json::from_str(include_str!("fixtures/metric_oracle.json")).unwrap()
}

fn words(v: &Value) -> Vec<String> {
    v.as_str().unwrap().split_whitespace().map(str::to_string).collect()
}

#[test]
fn rouge_matches_reference_script() {
    for case in oracle()["rouge_l"].as_array().unwrap() {
        let got = rouge_l(&words(&case["candidate"]), &words(&case["reference"]));
        let want = case["value"].as_f64().unwrap();
        assert!((got - want).abs() < 1e-12, "{case}: {got}");
    }
}

#[test]
fn rouge_spot_value_the_cat_sat() {
    let got = rouge_l(&tokenize("the cat sat"), &tokenize("the cat"));
    assert!((got - 0.830).abs() <= 0.001, "{got}");
}

#[test]
fn bleu_matches_reference_script() {
    for case in oracle()["bleu"].as_array().unwrap() {
        let cand = words(&case["candidate"]);
        let refs: Vec<Vec<String>> = case["references"].as_array().unwrap().iter().map(words).collect();
        for (n, want) in case["values"].as_array().unwrap().iter().enumerate() {
            let got = bleu_n(&cand, &refs, n + 1);
            assert!(
                (got - want.as_f64().unwrap()).abs() < 1e-12,
                "{case} n={}: {got}",
                n + 1
            );
        }
    }
}

#[test]
fn cider_matches_reference_script() {
    for case in oracle()["cider"].as_array().unwrap() {
        let corpus: Vec<(Vec<String>, Vec<Vec<String>>)> = case["corpus"]
            .as_array()
            .unwrap()
            .iter()
            .map(|item| (words(&item[0]), item[1].as_array().unwrap().iter().map(words).collect()))
            .collect();
        let got = cider(&corpus);
        let want: Vec<f64> = case["per_item"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_f64().unwrap())
            .collect();
        assert_eq!(got.per_item.len(), want.len());
        for (g, w) in got.per_item.iter().zip(&want) {
            assert!((g - w).abs() < 1e-9, "{case}: {g} vs {w}");
        }
        assert!((got.corpus - stable_mean(want)).abs() < 1e-9);
    }
}

#[test]
fn cider_identity_with_distinct_vocabularies_is_ten() {
    let corpus: Vec<(Vec<&str>, Vec<Vec<&str>>)> =
        ["red car ahead now", "blue bus behind slowly", "green light turns on"]
            .iter()
            .map(|s| {
                let t: Vec<&str> = s.split(' ').collect();
                (t.clone(), vec![t])
            })
            .collect();
    for s in cider(&corpus).per_item {
        assert!((s - 10.0).abs() < 1e-9, "{s}");
    }
}

#[test]
fn headline_row_fixture_is_in_range() {
    let row: Value = serde_json::from_str(include_str!("fixtures/headline_row.json")).unwrap();
    for key in ["accuracy", "gpt", "match", "bleu1", "rouge_l", "cider", "final_score"] {
        let v = row[key].as_f64().unwrap();
        assert!((0.0..=100.0).contains(&v), "{key}");
    }
}
