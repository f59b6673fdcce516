//! Topic-quality measures: PMI coherence, parent-child coherence, topic
//! specialization and hierarchical affinity.
//!
//! Probabilities are document frequencies over all corpus documents; the
//! joint probability carries a `1e-12` smoothing term so pairs that never
//! co-occur stay finite.

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{TermFrequencyMatrix, Vocabulary};
use crate::error::{Error, Result};
use crate::hierarchy::{TopicNode, TopicTree};

pub const JOINT_EPSILON: f64 = 1e-12;

/// Document frequencies and pairwise co-occurrence counts restricted to a
/// set of terms of interest.
#[derive(Debug, Clone)]
pub struct CooccurrenceStats {
    n_docs: usize,
    doc_freq: HashMap<usize, usize>,
    joint: HashMap<(usize, usize), usize>,
}

/// One PMI evaluation. `flagged` marks pairs with a zero marginal, whose
/// value is reported as 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pmi {
    pub value: f64,
    pub flagged: bool,
}

impl CooccurrenceStats {
    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn doc_freq(&self, w: usize) -> usize {
        self.doc_freq.get(&w).copied().unwrap_or(0)
    }

    /// Number of documents containing both terms; `doc_freq(w)` when equal.
    pub fn joint(&self, a: usize, b: usize) -> usize {
        if a == b {
            return self.doc_freq(a);
        }
        let key = if a < b { (a, b) } else { (b, a) };
        self.joint.get(&key).copied().unwrap_or(0)
    }

    /// `ln(P(a, b) / (P(a) P(b)))` with `P(a, b) = (joint + eps) / |D|`.
    pub fn pmi(&self, a: usize, b: usize) -> Pmi {
        let (fa, fb) = (self.doc_freq(a), self.doc_freq(b));
        if fa == 0 || fb == 0 || self.n_docs == 0 {
            return Pmi {
                value: 0.0,
                flagged: true,
            };
        }
        let n = self.n_docs as f64;
        let p_ab = (self.joint(a, b) as f64 + JOINT_EPSILON) / n;
        let p_a = fa as f64 / n;
        let p_b = fb as f64 / n;
        Pmi {
            value: (p_ab / (p_a * p_b)).ln(),
            flagged: false,
        }
    }
}

/// Counts occurrences of `terms` over the rows of `tf`.
pub fn build_stats(tf: &TermFrequencyMatrix, terms: &BTreeSet<usize>) -> CooccurrenceStats {
    let counts = tf.counts();
    let per_doc: Vec<Vec<usize>> = (0..tf.n_docs())
        .into_par_iter()
        .map(|d| {
            counts
                .outer_view(d)
                .unwrap()
                .iter()
                .filter(|(w, &c)| c > 0 && terms.contains(w))
                .map(|(w, _)| w)
                .collect()
        })
        .collect();
    let mut doc_freq = HashMap::new();
    let mut joint = HashMap::new();
    for present in &per_doc {
        for (i, &a) in present.iter().enumerate() {
            *doc_freq.entry(a).or_insert(0) += 1;
            for &b in &present[i + 1..] {
                let key = if a < b { (a, b) } else { (b, a) };
                *joint.entry(key).or_insert(0) += 1;
            }
        }
    }
    CooccurrenceStats {
        n_docs: tf.n_docs(),
        doc_freq,
        joint,
    }
}

/// Mean PMI over all unordered pairs of the first `n` terms. `None` with
/// fewer than two terms.
pub fn coherence(terms: &[usize], stats: &CooccurrenceStats, n: usize) -> Option<f64> {
    let t = &terms[..n.min(terms.len())];
    if t.len() < 2 {
        return None;
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..t.len() {
        for j in i + 1..t.len() {
            sum += stats.pmi(t[i], t[j]).value;
            pairs += 1;
        }
    }
    Some(sum / pairs as f64)
}

/// Mean PMI over the full grid of the first `n` parent terms against the
/// first `n` child terms, identical pairs included.
pub fn hierarchical_coherence(
    parent: &[usize],
    child: &[usize],
    stats: &CooccurrenceStats,
    n: usize,
) -> Option<f64> {
    let p = &parent[..n.min(parent.len())];
    let c = &child[..n.min(child.len())];
    if p.is_empty() || c.is_empty() {
        return None;
    }
    let sum: f64 = p
        .iter()
        .flat_map(|&a| c.iter().map(move |&b| (a, b)))
        .map(|(a, b)| stats.pmi(a, b).value)
        .sum();
    Some(sum / (p.len() * c.len()) as f64)
}

/// Column sums of `tf`, L2-normalized.
pub fn corpus_vector(tf: &TermFrequencyMatrix) -> Vec<f64> {
    let mut v = tf.column_sums();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// `1 - cos(topic, corpus)`, or `None` for a zero topic or corpus vector.
pub fn topic_specialization(topic: &[f64], corpus: &[f64]) -> Option<f64> {
    cosine(topic, corpus).map(|c| (1.0 - c).clamp(0.0, 1.0))
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    // one square root keeps proportional vectors at exactly 1
    (na > 0.0 && nb > 0.0).then(|| dot / (na * nb).sqrt())
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Affinity {
    /// Mean cosine between level-2 topics and their own level-3 children.
    pub child: Option<f64>,
    /// Mean cosine between level-2 topics and level-3 topics under other
    /// parents.
    pub non_child: Option<f64>,
}

pub fn hierarchical_affinity(tree: &TopicTree) -> Affinity {
    let parents = tree.nodes_at_level(2);
    let grandchildren = tree.nodes_at_level(3);
    let mut child = Vec::new();
    let mut non_child = Vec::new();
    for p in &parents {
        for g in &grandchildren {
            let Some(c) = cosine(&p.term_weights, &g.term_weights) else {
                continue;
            };
            if g.path.starts_with(&p.path) {
                child.push(c);
            } else {
                non_child.push(c);
            }
        }
    }
    Affinity {
        child: mean(child),
        non_child: mean(non_child),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicScore {
    pub id: String,
    pub level: usize,
    pub coherence_top5: Option<f64>,
    pub coherence_top10: Option<f64>,
    /// Average of the top-5 and top-10 scores.
    pub coherence: Option<f64>,
    pub specialization: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeScore {
    pub parent: String,
    pub child: String,
    pub hierarchical_coherence_top5: Option<f64>,
    pub hierarchical_coherence_top10: Option<f64>,
    pub hierarchical_coherence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelScore {
    pub level: usize,
    pub topics: usize,
    pub mean_coherence: Option<f64>,
    pub mean_specialization: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub topics: usize,
    pub depth: usize,
    pub mean_coherence: Option<f64>,
    pub mean_hierarchical_coherence: Option<f64>,
    pub mean_specialization: Option<f64>,
    pub affinity: Affinity,
    /// PMI evaluations that hit a term absent from every document.
    pub flagged_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub summary: Summary,
    pub levels: Vec<LevelScore>,
    pub topics: Vec<TopicScore>,
    pub edges: Vec<EdgeScore>,
}

fn average_of(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some((x + y) / 2.0),
        (x, None) => x,
        (None, y) => y,
    }
}

fn count_flagged(stats: &CooccurrenceStats, a: &[usize], b: &[usize], grid: bool) -> usize {
    let mut n = 0;
    for (i, &x) in a.iter().enumerate() {
        let others = if grid { b } else { &b[i + 1..] };
        n += others.iter().filter(|&&y| stats.pmi(x, y).flagged).count();
    }
    n
}

/// Scores every topic and parent-child edge of `tree` against the corpus
/// counts in `tf`.
pub fn evaluate(
    tree: &TopicTree,
    tf: &TermFrequencyMatrix,
    vocab: &Vocabulary,
) -> Result<EvalReport> {
    if tf.n_terms() != vocab.len() {
        return Err(Error::Shape(format!(
            "term counts have {} columns for a vocabulary of {}",
            tf.n_terms(),
            vocab.len()
        )));
    }
    let nodes = tree.nodes();
    if let Some(bad) = nodes.iter().find(|n| {
        n.term_weights.len() != vocab.len() || n.top_terms.iter().any(|&t| t >= vocab.len())
    }) {
        return Err(Error::Contract(format!(
            "topic {} does not match the vocabulary of {} terms",
            bad.id(),
            vocab.len()
        )));
    }
    let top10 = |n: &TopicNode| n.top_terms[..10.min(n.top_terms.len())].to_vec();
    let terms: BTreeSet<usize> = nodes.iter().flat_map(|n| top10(n)).collect();
    let stats = build_stats(tf, &terms);
    let corpus = corpus_vector(tf);

    let mut flagged = 0usize;
    let topics: Vec<TopicScore> = nodes
        .iter()
        .map(|n| {
            let t = top10(n);
            flagged += count_flagged(&stats, &t, &t, false);
            let c5 = coherence(&t, &stats, 5);
            let c10 = coherence(&t, &stats, 10);
            TopicScore {
                id: n.id(),
                level: n.level,
                coherence_top5: c5,
                coherence_top10: c10,
                coherence: average_of(c5, c10),
                specialization: topic_specialization(&n.term_weights, &corpus),
            }
        })
        .collect();

    let mut edges = Vec::new();
    for p in &nodes {
        let pt = top10(p);
        for c in &p.children {
            let ct = top10(c);
            flagged += count_flagged(&stats, &pt, &ct, true);
            let h5 = hierarchical_coherence(&pt, &ct, &stats, 5);
            let h10 = hierarchical_coherence(&pt, &ct, &stats, 10);
            edges.push(EdgeScore {
                parent: p.id(),
                child: c.id(),
                hierarchical_coherence_top5: h5,
                hierarchical_coherence_top10: h10,
                hierarchical_coherence: average_of(h5, h10),
            });
        }
    }

    let depth = tree.depth();
    let levels = (1..=depth)
        .map(|l| {
            let at: Vec<&TopicScore> = topics.iter().filter(|t| t.level == l).collect();
            LevelScore {
                level: l,
                topics: at.len(),
                mean_coherence: mean(at.iter().filter_map(|t| t.coherence)),
                mean_specialization: mean(at.iter().filter_map(|t| t.specialization)),
            }
        })
        .collect();

    Ok(EvalReport {
        summary: Summary {
            topics: topics.len(),
            depth,
            mean_coherence: mean(topics.iter().filter_map(|t| t.coherence)),
            mean_hierarchical_coherence: mean(
                edges.iter().filter_map(|e| e.hierarchical_coherence),
            ),
            mean_specialization: mean(topics.iter().filter_map(|t| t.specialization)),
            affinity: hierarchical_affinity(tree),
            flagged_pairs: flagged,
        },
        levels,
        topics,
        edges,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::Codec(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    /// One row per topic and per edge; empty cells for undefined values.
    pub fn to_csv(&self) -> Result<String> {
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut w = csv::Writer::from_writer(Vec::new());
        let codec = |e: csv::Error| Error::Codec(e.to_string());
        w.write_record([
            "kind",
            "id",
            "parent",
            "level",
            "coherence_top5",
            "coherence_top10",
            "coherence",
            "specialization",
        ])
        .map_err(codec)?;
        for t in &self.topics {
            w.write_record([
                "topic".to_string(),
                t.id.clone(),
                String::new(),
                t.level.to_string(),
                cell(t.coherence_top5),
                cell(t.coherence_top10),
                cell(t.coherence),
                cell(t.specialization),
            ])
            .map_err(codec)?;
        }
        for e in &self.edges {
            w.write_record([
                "edge".to_string(),
                e.child.clone(),
                e.parent.clone(),
                String::new(),
                cell(e.hierarchical_coherence_top5),
                cell(e.hierarchical_coherence_top10),
                cell(e.hierarchical_coherence),
                String::new(),
            ])
            .map_err(codec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Codec(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_tf, Corpus};
    use crate::hierarchy::{BuildStats, TrainConfig};

    fn fixture() -> (Corpus, TermFrequencyMatrix) {
        // apple banana / apple banana / apple cherry / cherry
        let c = Corpus::from_tokens(vec![
            ("0", vec!["apple", "banana"]),
            ("1", vec!["apple", "banana"]),
            ("2", vec!["apple", "cherry"]),
            ("3", vec!["cherry"]),
        ])
        .unwrap();
        let tf = build_tf(&c);
        (c, tf)
    }

    fn all_terms(n: usize) -> BTreeSet<usize> {
        (0..n).collect()
    }

    #[test]
    fn pmi_examples() {
        let (_, tf) = fixture();
        let s = build_stats(&tf, &all_terms(3));
        // P(apple)=3/4, P(banana)=2/4, P(apple,banana)=2/4
        let v = s.pmi(0, 1);
        assert!(!v.flagged);
        assert!((v.value - (4.0f64 / 3.0).ln()).abs() < 1e-12);
        // banana and cherry never co-occur
        let v = s.pmi(1, 2).value;
        assert!((v - (1e-12f64 / 4.0 / (0.5 * 0.5)).ln()).abs() < 1e-9);
        // self pair: -ln P(w)
        assert!((s.pmi(2, 2).value - 2.0f64.ln()).abs() < 1e-12);
        assert_eq!(s.pmi(1, 0), s.pmi(0, 1));
    }

    #[test]
    fn zero_marginal_is_flagged() {
        let (_, tf) = fixture();
        let s = build_stats(&tf, &[0usize].into_iter().collect());
        assert_eq!(
            s.pmi(0, 1),
            Pmi {
                value: 0.0,
                flagged: true
            }
        );
    }

    #[test]
    fn coherence_examples() {
        let (_, tf) = fixture();
        let s = build_stats(&tf, &all_terms(3));
        let c = coherence(&[0, 1], &s, 2).unwrap();
        assert!((c - 0.28768207245178093).abs() < 1e-12);
        let three = coherence(&[0, 1, 2], &s, 10).unwrap();
        let expected = (s.pmi(0, 1).value + s.pmi(0, 2).value + s.pmi(1, 2).value) / 3.0;
        assert!((three - expected).abs() < 1e-12);
        assert_eq!(coherence(&[0], &s, 5), None);
    }

    #[test]
    fn hierarchical_coherence_examples() {
        let (_, tf) = fixture();
        let s = build_stats(&tf, &all_terms(3));
        let single = hierarchical_coherence(&[0], &[1], &s, 1).unwrap();
        assert!((single - s.pmi(0, 1).value).abs() < 1e-15);
        let grid = hierarchical_coherence(&[0, 2], &[0, 1], &s, 2).unwrap();
        let expected =
            (s.pmi(0, 0).value + s.pmi(0, 1).value + s.pmi(2, 0).value + s.pmi(2, 1).value) / 4.0;
        assert!((grid - expected).abs() < 1e-12);
        assert_eq!(hierarchical_coherence(&[], &[1], &s, 5), None);
    }

    #[test]
    fn specialization_examples() {
        let corpus = [1.0, 0.0];
        assert!((topic_specialization(&[2.0, 0.0], &corpus).unwrap()).abs() < 1e-15);
        assert!((topic_specialization(&[0.0, 3.0], &corpus).unwrap() - 1.0).abs() < 1e-15);
        let v = topic_specialization(&[1.0, 1.0], &corpus).unwrap();
        assert!((v - (1.0 - std::f64::consts::FRAC_1_SQRT_2)).abs() < 1e-15);
        assert_eq!(topic_specialization(&[0.0, 0.0], &corpus), None);

        let (_, tf) = fixture();
        let cv = corpus_vector(&tf);
        assert!((cv.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    fn node(path: Vec<usize>, w: Vec<f64>, children: Vec<TopicNode>) -> TopicNode {
        TopicNode {
            top_terms: crate::hierarchy::top_terms(&w, 3),
            level: path.len(),
            topic_index: *path.last().unwrap(),
            path,
            term_weights: w,
            doc_ids: vec![],
            children,
        }
    }

    fn tree(roots: Vec<TopicNode>) -> TopicTree {
        TopicTree {
            roots,
            config: TrainConfig::default(),
            stats: BuildStats::default(),
        }
    }

    #[test]
    fn affinity_separates_children_from_others() {
        let t = tree(vec![node(
            vec![0],
            vec![1.0, 1.0, 1.0],
            vec![
                node(
                    vec![0, 0],
                    vec![1.0, 0.0, 0.0],
                    vec![node(vec![0, 0, 0], vec![1.0, 0.0, 0.0], vec![])],
                ),
                node(
                    vec![0, 1],
                    vec![0.0, 1.0, 0.0],
                    vec![node(vec![0, 1, 0], vec![0.0, 1.0, 0.0], vec![])],
                ),
            ],
        )]);
        let a = hierarchical_affinity(&t);
        assert_eq!(a.child, Some(1.0));
        assert_eq!(a.non_child, Some(0.0));
        let flat = tree(vec![node(vec![0], vec![1.0, 0.0, 0.0], vec![])]);
        assert_eq!(hierarchical_affinity(&flat), Affinity::default());
    }

    #[test]
    fn evaluate_report() {
        let (c, tf) = fixture();
        let t = tree(vec![node(
            vec![0],
            vec![0.9, 0.5, 0.0],
            vec![node(vec![0, 0], vec![0.0, 0.4, 0.8], vec![])],
        )]);
        let r = evaluate(&t, &tf, c.vocab()).unwrap();
        assert_eq!(r.summary.topics, 2);
        assert_eq!(r.summary.depth, 2);
        let top = &r.topics[0];
        assert!((top.coherence.unwrap() - 0.28768207245178093).abs() < 1e-12);
        assert_eq!(r.edges.len(), 1);
        assert_eq!(r.levels.len(), 2);
        let csv = r.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("kind,id,parent,level,"));
        assert!(r
            .to_json()
            .unwrap()
            .contains("\"mean_hierarchical_coherence\""));

        let bad = tree(vec![node(vec![0], vec![1.0, 0.0], vec![])]);
        assert!(matches!(
            evaluate(&bad, &tf, c.vocab()),
            Err(Error::Contract(_))
        ));
    }
}
