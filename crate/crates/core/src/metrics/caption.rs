//! Corpus-level caption metrics over pre-tokenized text. Scoring conventions
//! follow the widely used COCO caption evaluation toolkit.

use std::collections::{HashMap, HashSet};

use rust_stemmers::{Algorithm, Stemmer};

use super::MetricError;

/// Lowercase, replace every non-alphanumeric character with a space, split on
/// whitespace.
pub fn tokenize_caption(text: &str) -> Vec<String> {
    let cleaned: String = text
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' })
        .collect();
    cleaned.split_whitespace().map(str::to_owned).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionItem {
    pub id: String,
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionEvalSet {
    items: Vec<CaptionItem>,
}

impl CaptionEvalSet {
    pub fn new(items: Vec<CaptionItem>) -> Result<Self, MetricError> {
        if items.is_empty() {
            return Err(MetricError::Empty("caption eval set"));
        }
        if let Some(it) = items.iter().find(|it| it.references.is_empty()) {
            return Err(MetricError::NoReferences(it.id.clone()));
        }
        Ok(Self { items })
    }

    /// Tokenizes raw `(id, candidate, references)` triples.
    pub fn from_texts<I, S>(rows: I) -> Result<Self, MetricError>
    where
        I: IntoIterator<Item = (S, S, Vec<S>)>,
        S: AsRef<str>,
    {
        let items = rows
            .into_iter()
            .map(|(id, cand, refs)| CaptionItem {
                id: id.as_ref().to_owned(),
                candidate: tokenize_caption(cand.as_ref()),
                references: refs.iter().map(|r| tokenize_caption(r.as_ref())).collect(),
            })
            .collect();
        Self::new(items)
    }

    pub fn items(&self) -> &[CaptionItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

type Ngram<'a> = &'a [String];

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<Ngram<'_>, usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus BLEU-n. The effective reference length of each image is the
/// reference length closest to the candidate (shorter on ties); clipping uses
/// the maximum count over references.
pub fn bleu(set: &CaptionEvalSet, n: usize) -> Result<f64, MetricError> {
    if !(1..=4).contains(&n) {
        return Err(MetricError::BleuOrder(n));
    }
    let mut guess = vec![0usize; n];
    let mut correct = vec![0usize; n];
    let (mut test_len, mut ref_len) = (0usize, 0usize);
    for it in &set.items {
        let c = it.candidate.len();
        test_len += c;
        ref_len += it
            .references
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| (l.abs_diff(c), l))
            .unwrap_or(0);
        for k in 1..=n {
            let mut max_ref: HashMap<Ngram<'_>, usize> = HashMap::new();
            for r in &it.references {
                for (g, cnt) in ngram_counts(r, k) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(cnt);
                }
            }
            guess[k - 1] += c.saturating_sub(k - 1);
            correct[k - 1] += ngram_counts(&it.candidate, k)
                .into_iter()
                .map(|(g, cnt)| cnt.min(max_ref.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
        }
    }
    let mut log_sum = 0.0;
    for k in 0..n {
        if correct[k] == 0 || guess[k] == 0 {
            return Ok(0.0);
        }
        log_sum += (correct[k] as f64 / guess[k] as f64).ln();
    }
    let mut score = (log_sum / n as f64).exp();
    if test_len < ref_len {
        score *= (1.0 - ref_len as f64 / test_len as f64).exp();
    }
    Ok(score.min(1.0))
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

const ROUGE_BETA: f64 = 1.2;

/// ROUGE-L for one image: precision and recall are each maximized over the
/// references before forming the F-measure.
pub fn rouge_l_single(candidate: &[String], references: &[Vec<String>]) -> f64 {
    if candidate.is_empty() {
        return 0.0;
    }
    let (mut p_max, mut r_max) = (0.0_f64, 0.0_f64);
    for r in references.iter().filter(|r| !r.is_empty()) {
        let l = lcs_len(r, candidate) as f64;
        p_max = p_max.max(l / candidate.len() as f64);
        r_max = r_max.max(l / r.len() as f64);
    }
    if p_max == 0.0 || r_max == 0.0 {
        return 0.0;
    }
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p_max * r_max / (r_max + b2 * p_max)
}

pub fn rouge_l(set: &CaptionEvalSet) -> f64 {
    let sum: f64 = set.items.iter().map(|it| rouge_l_single(&it.candidate, &it.references)).sum();
    sum / set.len() as f64
}

/// Greedy unigram matching: each hypothesis word (last to first) takes the
/// latest unused reference position carrying the same key.
fn match_stage(hyp: &mut Vec<(usize, String)>, refs: &mut Vec<(usize, String)>, out: &mut Vec<(usize, usize)>) {
    let mut positions: HashMap<&str, Vec<usize>> = HashMap::new();
    for (j, (_, w)) in refs.iter().enumerate() {
        positions.entry(w.as_str()).or_default().push(j);
    }
    let mut used_h = HashSet::new();
    let mut used_r = HashSet::new();
    for i in (0..hyp.len()).rev() {
        if let Some(j) = positions.get_mut(hyp[i].1.as_str()).and_then(Vec::pop) {
            used_h.insert(i);
            used_r.insert(j);
            out.push((hyp[i].0, refs[j].0));
        }
    }
    let mut i = 0;
    hyp.retain(|_| {
        i += 1;
        !used_h.contains(&(i - 1))
    });
    let mut j = 0;
    refs.retain(|_| {
        j += 1;
        !used_r.contains(&(j - 1))
    });
}

const METEOR_ALPHA: f64 = 0.9;
const METEOR_BETA: i32 = 3;
const METEOR_GAMMA: f64 = 0.5;

/// Exact-then-stem METEOR for a single reference; no synonym stage.
pub fn meteor_single(candidate: &[String], reference: &[String], stemmer: &Stemmer) -> f64 {
    let mut hyp: Vec<(usize, String)> = candidate.iter().cloned().enumerate().collect();
    let mut refs: Vec<(usize, String)> = reference.iter().cloned().enumerate().collect();
    let mut matches = Vec::new();
    match_stage(&mut hyp, &mut refs, &mut matches);
    let stem = |v: Vec<(usize, String)>| -> Vec<(usize, String)> {
        v.into_iter().map(|(i, w)| (i, stemmer.stem(&w).into_owned())).collect()
    };
    let (mut hyp, mut refs) = (stem(hyp), stem(refs));
    match_stage(&mut hyp, &mut refs, &mut matches);
    matches.sort_by_key(|m| m.0);

    let m = matches.len();
    if m == 0 || candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let p = m as f64 / candidate.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let fmean = p * r / (METEOR_ALPHA * p + (1.0 - METEOR_ALPHA) * r);
    let chunks = 1 + matches
        .windows(2)
        .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
        .count();
    let penalty = METEOR_GAMMA * (chunks as f64 / m as f64).powi(METEOR_BETA);
    fmean * (1.0 - penalty)
}

/// Mean over images of the best single-reference score.
pub fn meteor_lite(set: &CaptionEvalSet) -> f64 {
    let stemmer = Stemmer::create(Algorithm::English);
    let sum: f64 = set
        .items
        .iter()
        .map(|it| {
            it.references
                .iter()
                .map(|r| meteor_single(&it.candidate, r, &stemmer))
                .fold(0.0, f64::max)
        })
        .sum();
    sum / set.len() as f64
}

const CIDER_N: usize = 4;
const CIDER_SIGMA: f64 = 6.0;

struct TfIdf<'a> {
    vec: [HashMap<Ngram<'a>, f64>; CIDER_N],
    norm: [f64; CIDER_N],
    length: f64,
}

fn tfidf<'a>(tokens: &'a [String], df: &HashMap<Ngram<'a>, usize>, log_n: f64) -> TfIdf<'a> {
    let mut vec: [HashMap<Ngram<'a>, f64>; CIDER_N] = Default::default();
    let mut norm = [0.0; CIDER_N];
    let mut length = 0.0;
    for n in 1..=CIDER_N {
        for (g, tf) in ngram_counts(tokens, n) {
            let d = (df.get(g).copied().unwrap_or(0).max(1) as f64).ln();
            let w = tf as f64 * (log_n - d);
            norm[n - 1] += w * w;
            vec[n - 1].insert(g, w);
            // Length is counted over bigrams, as in the reference scorer.
            if n == 2 {
                length += tf as f64;
            }
        }
    }
    TfIdf { vec, norm: norm.map(f64::sqrt), length }
}

fn cider_sim(h: &TfIdf<'_>, r: &TfIdf<'_>) -> f64 {
    let delta = h.length - r.length;
    let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
    let mut total = 0.0;
    for n in 0..CIDER_N {
        let mut val: f64 = h.vec[n]
            .iter()
            .map(|(g, hw)| {
                let rw = r.vec[n].get(g).copied().unwrap_or(0.0);
                hw.min(rw) * rw
            })
            .sum();
        if h.norm[n] != 0.0 && r.norm[n] != 0.0 {
            val /= h.norm[n] * r.norm[n];
        }
        total += val * penalty;
    }
    total / CIDER_N as f64
}

/// Per-image CIDEr-D scores (raw scale, 10× the averaged cosine term).
/// Document frequencies come from this set's references.
pub fn cider_d_per_image(set: &CaptionEvalSet) -> Vec<f64> {
    let mut df: HashMap<Ngram<'_>, usize> = HashMap::new();
    for it in &set.items {
        let mut seen = HashSet::new();
        for r in &it.references {
            for n in 1..=CIDER_N {
                seen.extend(ngram_counts(r, n).into_keys());
            }
        }
        for g in seen {
            *df.entry(g).or_insert(0) += 1;
        }
    }
    let log_n = (set.len() as f64).ln();
    set.items
        .iter()
        .map(|it| {
            let h = tfidf(&it.candidate, &df, log_n);
            let sum: f64 = it.references.iter().map(|r| cider_sim(&h, &tfidf(r, &df, log_n))).sum();
            10.0 * sum / it.references.len() as f64
        })
        .collect()
}

pub fn cider_d(set: &CaptionEvalSet) -> f64 {
    let scores = cider_d_per_image(set);
    scores.iter().sum::<f64>() / scores.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaptionScores {
    pub bleu: [f64; 4],
    pub rouge_l: f64,
    pub meteor: f64,
    pub cider_d: f64,
}

pub fn caption_scores(set: &CaptionEvalSet) -> CaptionScores {
    let mut b = [0.0; 4];
    for (n, slot) in b.iter_mut().enumerate() {
        *slot = bleu(set, n + 1).expect("order in range");
    }
    CaptionScores { bleu: b, rouge_l: rouge_l(set), meteor: meteor_lite(set), cider_d: cider_d(set) }
}
