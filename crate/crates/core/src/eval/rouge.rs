//! ROUGE-L: longest-common-subsequence precision/recall/F1 over token lists.

/// Tokenize for metric computation: lowercase, split on runs of
/// non-alphanumeric characters. Alphanumeric is unicode-aware.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            for lc in ch.to_lowercase() {
                current.push(lc);
            }
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Length of the longest common subsequence of two token slices.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    // Two-row DP keeps memory at O(min side).
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut prev = vec![0usize; short.len() + 1];
    let mut row = vec![0usize; short.len() + 1];
    for item in long {
        for (j, s) in short.iter().enumerate() {
            row[j + 1] = if item == s {
                prev[j] + 1
            } else {
                row[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut row);
    }
    prev[short.len()]
}

/// ROUGE-L precision, recall and F1 for a candidate against a reference.
///
/// With LCS length `L`: precision is `L/|candidate|`, recall `L/|reference|`,
/// and F1 their harmonic mean, computed as `2L/(|candidate|+|reference|)`.
/// All three are 0 when either side is empty.
pub fn rouge_l<T: PartialEq>(candidate: &[T], reference: &[T]) -> (f64, f64, f64) {
    if candidate.is_empty() || reference.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let l = lcs_len(candidate, reference) as f64;
    let p = l / candidate.len() as f64;
    let r = l / reference.len() as f64;
    let f1 = 2.0 * l / (candidate.len() + reference.len()) as f64;
    (p, r, f1)
}

/// ROUGE-L F1 only.
pub fn rouge_l_f1<T: PartialEq>(candidate: &[T], reference: &[T]) -> f64 {
    rouge_l(candidate, reference).2
}

/// Tokenize both strings and return ROUGE-L F1.
pub fn rouge_l_f1_str(candidate: &str, reference: &str) -> f64 {
    rouge_l_f1(&tokenize(candidate), &tokenize(reference))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_lowercases_and_splits() {
        assert_eq!(tokenize("2023 ATP Tour"), vec!["2023", "atp", "tour"]);
        assert_eq!(tokenize("Camp  Nou!"), vec!["camp", "nou"]);
        assert_eq!(tokenize("  "), Vec::<String>::new());
        assert_eq!(tokenize("men's tennis"), vec!["men", "s", "tennis"]);
    }

    #[test]
    fn identical_sequences_score_one() {
        let toks = tokenize("home venue of");
        assert_eq!(rouge_l_f1(&toks, &toks), 1.0);
    }

    #[test]
    fn atp_tour_case_scores_exactly_point_eight() {
        let cand = tokenize("ATP Tour");
        let reference = tokenize("2023 ATP Tour");
        let (p, r, f1) = rouge_l(&cand, &reference);
        assert_eq!(p, 1.0);
        assert!((r - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(f1, 0.8);
    }

    #[test]
    fn disjoint_token_sets_score_zero() {
        assert_eq!(rouge_l_f1_str("alpha beta", "gamma delta"), 0.0);
    }

    #[test]
    fn empty_side_scores_zero() {
        assert_eq!(rouge_l_f1_str("", "anything"), 0.0);
        assert_eq!(rouge_l_f1_str("anything", ""), 0.0);
        assert_eq!(rouge_l_f1_str("", ""), 0.0);
    }

    #[test]
    fn swap_exchanges_precision_and_recall() {
        let a = tokenize("one two three");
        let b = tokenize("two three four five");
        let (pa, ra, fa) = rouge_l(&a, &b);
        let (pb, rb, fb) = rouge_l(&b, &a);
        assert_eq!(pa, rb);
        assert_eq!(ra, pb);
        assert_eq!(fa, fb);
    }
}
