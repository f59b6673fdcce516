//! Synthetic corpora with a planted two-level topic hierarchy.
//!
//! Each document belongs to one subtopic of one root topic and mixes words
//! of its root, words of its subtopic, shared background words and a little
//! cross-topic noise. The matching embedding places root words near the
//! origin of the ball, subtopic words further out along their root's
//! direction, and background words close to the boundary.

use rand::distributions::Uniform;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::corpus::RawDocument;

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedConfig {
    pub roots: usize,
    pub subs_per_root: usize,
    pub docs_per_sub: usize,
    pub root_words: usize,
    pub sub_words: usize,
    pub background_words: usize,
    pub doc_len: usize,
    /// Token mix; the remainder is cross-topic noise.
    pub p_root: f64,
    pub p_sub: f64,
    pub p_background: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            roots: 3,
            subs_per_root: 3,
            docs_per_sub: 100,
            root_words: 10,
            sub_words: 12,
            background_words: 30,
            doc_len: 40,
            p_root: 0.3,
            p_sub: 0.45,
            p_background: 0.2,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedCorpus {
    pub documents: Vec<RawDocument>,
    /// Root topic of each document.
    pub root_labels: Vec<usize>,
    /// Global subtopic index (`root * subs_per_root + sub`) of each document.
    pub sub_labels: Vec<usize>,
    pub embeddings: Vec<(String, Vec<f64>)>,
}

impl PlantedCorpus {
    /// Embeddings in word2vec text format, header line included.
    pub fn embeddings_text(&self) -> String {
        let dim = self.embeddings.first().map_or(0, |(_, v)| v.len());
        let mut out = format!("{} {}\n", self.embeddings.len(), dim);
        for (w, v) in &self.embeddings {
            out.push_str(w);
            for x in v {
                out.push(' ');
                out.push_str(&x.to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// Bijective base-26 spelling: 0 -> a, 25 -> z, 26 -> aa.
fn letters(mut n: usize) -> String {
    let mut out = Vec::new();
    loop {
        out.push(b'a' + (n % 26) as u8);
        if n < 26 {
            break;
        }
        n = n / 26 - 1;
    }
    out.reverse();
    String::from_utf8(out).unwrap()
}

pub fn root_word(r: usize, j: usize) -> String {
    format!("r{}x{}", letters(r), letters(j))
}

pub fn sub_word(r: usize, s: usize, j: usize) -> String {
    format!("s{}y{}x{}", letters(r), letters(s), letters(j))
}

pub fn background_word(j: usize) -> String {
    format!("bgx{}", letters(j))
}

fn place(rng: &mut ChaCha8Rng, axis: &[f64], jitter: f64, radius: f64) -> Vec<f64> {
    let mut v: Vec<f64> = axis
        .iter()
        .map(|a| a + jitter * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x *= radius / norm);
    v
}

pub fn generate(cfg: &PlantedConfig) -> PlantedCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_subs = cfg.roots * cfg.subs_per_root;
    let dim = cfg.roots + n_subs + 4;
    let unit = |i: usize| {
        let mut e = vec![0.0; dim];
        e[i] = 1.0;
        e
    };

    let mut embeddings = Vec::new();
    for r in 0..cfg.roots {
        for j in 0..cfg.root_words {
            let radius = 0.15 + 0.1 * rng.gen::<f64>();
            embeddings.push((root_word(r, j), place(&mut rng, &unit(r), 0.15, radius)));
        }
        for s in 0..cfg.subs_per_root {
            let mut axis = unit(cfg.roots + r * cfg.subs_per_root + s);
            axis[r] = 0.6;
            for j in 0..cfg.sub_words {
                let radius = 0.65 + 0.1 * rng.gen::<f64>();
                embeddings.push((sub_word(r, s, j), place(&mut rng, &axis, 0.1, radius)));
            }
        }
    }
    for j in 0..cfg.background_words {
        let axis = vec![0.0; dim];
        let radius = 0.85 + 0.1 * rng.gen::<f64>();
        embeddings.push((background_word(j), place(&mut rng, &axis, 1.0, radius)));
    }

    let pick_root = Uniform::new(0, cfg.root_words);
    let pick_sub = Uniform::new(0, cfg.sub_words);
    let pick_bg = Uniform::new(0, cfg.background_words.max(1));
    let pick_any_sub = Uniform::new(0, n_subs);
    let mut documents = Vec::new();
    let mut root_labels = Vec::new();
    let mut sub_labels = Vec::new();
    for r in 0..cfg.roots {
        for s in 0..cfg.subs_per_root {
            for _ in 0..cfg.docs_per_sub {
                let mut words = Vec::with_capacity(cfg.doc_len);
                for _ in 0..cfg.doc_len {
                    let u: f64 = rng.gen();
                    let w = if u < cfg.p_root {
                        root_word(r, rng.sample(pick_root))
                    } else if u < cfg.p_root + cfg.p_sub {
                        sub_word(r, s, rng.sample(pick_sub))
                    } else if u < cfg.p_root + cfg.p_sub + cfg.p_background
                        && cfg.background_words > 0
                    {
                        background_word(rng.sample(pick_bg))
                    } else {
                        let g = rng.sample(pick_any_sub);
                        sub_word(
                            g / cfg.subs_per_root,
                            g % cfg.subs_per_root,
                            rng.sample(pick_sub),
                        )
                    };
                    words.push(w);
                }
                let id = format!("doc{:04}", documents.len());
                documents.push(RawDocument::new(id, words.join(" ")));
                root_labels.push(r);
                sub_labels.push(r * cfg.subs_per_root + s);
            }
        }
    }
    PlantedCorpus {
        documents,
        root_labels,
        sub_labels,
        embeddings,
    }
}
