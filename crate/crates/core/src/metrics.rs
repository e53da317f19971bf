//! Automatic evaluation metrics and inter-annotator agreement.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{EmbeddingTable, PAD};
use crate::error::{Error, Result};

/// Evaluation bundle. BLEU, distinct-n and cosine are raw values in [0, 1]
/// (not scaled by 100).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ppl: f64,
    pub bleu: f64,
    pub distinct_1: f64,
    pub distinct_2: f64,
    pub avg_cosine: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassScores>,
    pub confusion: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// `exp(total_nll / tokens)`.
pub fn perplexity_from_nll(total_nll: f64, tokens: usize) -> Result<f64> {
    if tokens == 0 {
        return Err(Error::Empty("evaluation set"));
    }
    Ok((total_nll / tokens as f64).exp())
}

fn ngrams<S: AsRef<str>>(tokens: &[S], n: usize) -> Vec<Vec<&str>> {
    if tokens.len() < n {
        return Vec::new();
    }
    tokens
        .windows(n)
        .map(|w| w.iter().map(AsRef::as_ref).collect())
        .collect()
}

fn counts(grams: Vec<Vec<&str>>) -> HashMap<Vec<&str>, usize> {
    let mut m = HashMap::new();
    for g in grams {
        *m.entry(g).or_insert(0) += 1;
    }
    m
}

/// Corpus BLEU-4 against one reference per candidate. Clipped n-gram
/// precisions; a zero match count for n ≥ 2 is smoothed to
/// `(0 + 1) / (total + 1)`.
pub fn bleu<S: AsRef<str>>(candidates: &[Vec<S>], references: &[Vec<S>]) -> Result<f64> {
    if candidates.len() != references.len() {
        return Err(Error::LengthMismatch(format!(
            "{} candidates vs {} references",
            candidates.len(),
            references.len()
        )));
    }
    if candidates.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for (c, r) in candidates.iter().zip(references) {
        cand_len += c.len();
        ref_len += r.len();
        for n in 1..=4 {
            let cc = counts(ngrams(c, n));
            let rc = counts(ngrams(r, n));
            totals[n - 1] += cc.values().sum::<usize>();
            matches[n - 1] += cc
                .iter()
                .map(|(g, &k)| k.min(rc.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
        }
    }
    if cand_len == 0 || matches[0] == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..4 {
        let p = if n > 0 && matches[n] == 0 {
            1.0 / (totals[n] as f64 + 1.0)
        } else {
            matches[n] as f64 / totals[n] as f64
        };
        log_sum += p.ln() / 4.0;
    }
    let bp = if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    Ok((bp * log_sum.exp()).clamp(0.0, 1.0))
}

/// Unique n-grams over total n-grams across the whole corpus.
pub fn distinct_n<S: AsRef<str>>(candidates: &[Vec<S>], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Config("distinct-n needs n >= 1".into()));
    }
    let mut unique = HashSet::new();
    let mut total = 0usize;
    for c in candidates {
        for g in ngrams(c, n) {
            total += 1;
            unique.insert(g);
        }
    }
    if total == 0 {
        return Err(Error::Empty("n-gram set"));
    }
    Ok(unique.len() as f64 / total as f64)
}

fn mean_embedding(ids: &[usize], table: &EmbeddingTable) -> Vec<f64> {
    let mut acc = vec![0.0; table.dim()];
    let mut n = 0usize;
    for &id in ids.iter().filter(|&&id| id != PAD) {
        for (a, &v) in acc.iter_mut().zip(table.row(id)) {
            *a += f64::from(v);
        }
        n += 1;
    }
    if n > 0 {
        acc.iter_mut().for_each(|a| *a /= n as f64);
    }
    acc
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Mean over pairs of the cosine between mean token embeddings. PAD ids
/// are skipped; an all-zero side scores 0.
pub fn avg_cosine(candidates: &[Vec<usize>], references: &[Vec<usize>], table: &EmbeddingTable) -> f64 {
    if candidates.is_empty() {
        return 0.0;
    }
    let total: f64 = candidates
        .iter()
        .zip(references)
        .map(|(c, r)| cosine(&mean_embedding(c, table), &mean_embedding(r, table)))
        .sum();
    total / candidates.len().min(references.len()) as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classification {
    pub macro_f1: f64,
    pub per_class: Vec<ClassScores>,
    /// `confusion[gold][predicted]`
    pub confusion: Vec<Vec<usize>>,
}

/// Per-class precision/recall/F1 (0/0 counts as 0) and their unweighted
/// mean over classes not listed in `exclude`.
pub fn macro_f1(
    predictions: &[usize],
    golds: &[usize],
    class_names: &[String],
    exclude: &[usize],
) -> Result<Classification> {
    if predictions.is_empty() {
        return Err(Error::Empty("prediction set"));
    }
    if predictions.len() != golds.len() {
        return Err(Error::LengthMismatch(format!(
            "{} predictions vs {} golds",
            predictions.len(),
            golds.len()
        )));
    }
    let m = class_names.len();
    let mut confusion = vec![vec![0usize; m]; m];
    for (&p, &g) in predictions.iter().zip(golds) {
        if p >= m || g >= m {
            return Err(Error::TargetOutOfRange {
                what: "class",
                index: p.max(g),
                classes: m,
            });
        }
        confusion[g][p] += 1;
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let per_class: Vec<ClassScores> = (0..m)
        .map(|c| {
            let tp = confusion[c][c];
            let predicted: usize = (0..m).map(|g| confusion[g][c]).sum();
            let support: usize = confusion[c].iter().sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassScores {
                class: class_names[c].clone(),
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();
    let kept: Vec<f64> = per_class
        .iter()
        .enumerate()
        .filter(|(i, _)| !exclude.contains(i))
        .map(|(_, s)| s.f1)
        .collect();
    let macro_f1 = if kept.is_empty() {
        0.0
    } else {
        kept.iter().sum::<f64>() / kept.len() as f64
    };
    Ok(Classification {
        macro_f1,
        per_class,
        confusion,
    })
}

/// Fleiss' kappa over `ratings[item][category]` annotator counts. When every
/// rating falls in one category (chance agreement 1) the result is 1.
pub fn fleiss_kappa(ratings: &[Vec<usize>]) -> Result<f64> {
    let first = ratings.first().ok_or(Error::Empty("rating matrix"))?;
    let raters: usize = first.iter().sum();
    if raters < 2 {
        return Err(Error::Config("Fleiss' kappa needs at least 2 raters per item".into()));
    }
    let k = first.len();
    for (i, row) in ratings.iter().enumerate() {
        let n: usize = row.iter().sum();
        if n != raters || row.len() != k {
            return Err(Error::UnequalRaters {
                item: i,
                expected: raters,
                found: n,
            });
        }
    }
    let items = ratings.len() as f64;
    let n = raters as f64;
    let p_bar = ratings
        .iter()
        .map(|row| {
            let agree: f64 = row.iter().map(|&c| (c * c.saturating_sub(1)) as f64).sum();
            agree / (n * (n - 1.0))
        })
        .sum::<f64>()
        / items;
    let p_e: f64 = (0..k)
        .map(|j| {
            let pj = ratings.iter().map(|r| r[j] as f64).sum::<f64>() / (items * n);
            pj * pj
        })
        .sum();
    if (1.0 - p_e).abs() < f64::EPSILON {
        return Ok(if (p_bar - 1.0).abs() < f64::EPSILON { 1.0 } else { 0.0 });
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sent(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn perplexity_cases() {
        // probs 0.5 and 0.125
        let nll = 2f64.ln() + 8f64.ln();
        assert!((perplexity_from_nll(nll, 2).unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(perplexity_from_nll(0.0, 5).unwrap(), 1.0);
        assert!(perplexity_from_nll(1.0, 0).is_err());
    }

    #[test]
    fn bleu_identity_and_disjoint() {
        let c = vec![sent("the cat sat on the mat"), sent("hi")];
        assert!((bleu(&c, &c).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(bleu(&[sent("a b")], &[sent("c d")]).unwrap(), 0.0);
        assert!(bleu::<String>(&[], &[]).is_err());
        assert!(bleu(&[sent("a")], &[]).is_err());
    }

    #[test]
    fn bleu_short_candidate() {
        // all n-gram precisions are 1, only the brevity penalty applies
        let b = bleu(&[sent("the cat sat")], &[sent("the cat sat down")]).unwrap();
        assert!((b - (1.0f64 - 4.0 / 3.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn distinct_cases() {
        assert!((distinct_n(&[sent("a a a")], 1).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(distinct_n(&[sent("a b"), sent("b a")], 2).unwrap(), 1.0);
        let same = vec![sent("x"); 4];
        assert_eq!(distinct_n(&same, 1).unwrap(), 0.25);
        assert!(distinct_n(&[sent("a")], 2).is_err());
    }

    #[test]
    fn cosine_cases() {
        let t = EmbeddingTable::from_rows(2, vec![0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0]);
        assert!((avg_cosine(&[vec![1]], &[vec![2]], &t) - 1.0 / 2f64.sqrt()).abs() < 1e-12);
        assert!(avg_cosine(&[vec![1]], &[vec![3]], &t).abs() < 1e-12);
        assert!((avg_cosine(&[vec![1, 2]], &[vec![1, 2]], &t) - 1.0).abs() < 1e-12);
        // PAD only -> zero vector -> 0
        assert_eq!(avg_cosine(&[vec![0]], &[vec![1]], &t), 0.0);
    }

    #[test]
    fn macro_f1_hand_case() {
        let r = macro_f1(&[0, 0, 0, 0], &[0, 0, 1, 1], &names(2), &[]).unwrap();
        assert!((r.per_class[0].f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.per_class[1].f1, 0.0);
        assert!((r.macro_f1 - 1.0 / 3.0).abs() < 1e-12);
        let ex = macro_f1(&[0, 0, 0, 0], &[0, 0, 1, 1], &names(2), &[1]).unwrap();
        assert!((ex.macro_f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(ex.confusion, r.confusion);
        assert_eq!(r.confusion, vec![vec![2, 0], vec![2, 0]]);
    }

    #[test]
    fn kappa_cases() {
        assert!((fleiss_kappa(&[vec![3, 0], vec![1, 2]]).unwrap() - 0.25).abs() < 1e-12);
        assert_eq!(fleiss_kappa(&[vec![3, 0], vec![0, 3]]).unwrap(), 1.0);
        assert_eq!(fleiss_kappa(&[vec![3, 0], vec![3, 0]]).unwrap(), 1.0);
        assert!(matches!(
            fleiss_kappa(&[vec![3, 0], vec![1, 1]]),
            Err(Error::UnequalRaters { item: 1, .. })
        ));
        assert!(fleiss_kappa(&[]).is_err());
    }

    proptest! {
        #[test]
        fn bleu_self_is_one(corpus in prop::collection::vec(prop::collection::vec("[a-d]", 1..8), 1..5)) {
            prop_assert!((bleu(&corpus, &corpus).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn macro_f1_permutation_invariant(
            pairs in prop::collection::vec((0usize..4, 0usize..4), 1..40),
            perm in Just([2usize, 0, 3, 1]),
        ) {
            let (p, g): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
            let a = macro_f1(&p, &g, &names(4), &[]).unwrap().macro_f1;
            let pp: Vec<_> = p.iter().map(|&x| perm[x]).collect();
            let gg: Vec<_> = g.iter().map(|&x| perm[x]).collect();
            let b = macro_f1(&pp, &gg, &names(4), &[]).unwrap().macro_f1;
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn kappa_in_range(rows in prop::collection::vec(prop::collection::vec(0usize..4, 3), 1..10)) {
            // each row: 3 raters choosing among 3 categories
            let ratings: Vec<Vec<usize>> = rows
                .iter()
                .map(|choices| {
                    let mut c = vec![0; 3];
                    for &x in choices { c[x % 3] += 1; }
                    c
                })
                .collect();
            let k = fleiss_kappa(&ratings).unwrap();
            prop_assert!((-1.0..=1.0).contains(&k));
            let unanimous = ratings.iter().all(|r| r.contains(&3));
            prop_assert_eq!(unanimous, (k - 1.0).abs() < 1e-12);
        }

        #[test]
        fn distinct_in_unit_interval(corpus in prop::collection::vec(prop::collection::vec("[a-c]", 1..6), 1..5)) {
            let d = distinct_n(&corpus, 1).unwrap();
            prop_assert!(d > 0.0 && d <= 1.0);
        }
    }
}
