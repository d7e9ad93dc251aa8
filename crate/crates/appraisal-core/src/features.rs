//! Word n-gram bag-of-words and TF-IDF sparse features.
//!
//! Tokenization splits text into maximal runs of letters and digits;
//! punctuation separates and is dropped. Grams of order `n_min..=n_max`
//! (default 1..=4) are joined with a non-printable separator so multi-word
//! grams cannot collide with real tokens.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Dataset;
use crate::error::{Error, Result};

/// Joins tokens of a multi-word gram; U+001F never appears in tokens
/// because tokenization keeps only alphanumerics.
pub const GRAM_SEPARATOR: char = '\u{1F}';

/// N-gram extraction settings.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct NgramConfig {
    pub n_min: usize,
    pub n_max: usize,
    pub lowercase: bool,
    pub min_document_frequency: usize,
}

impl Default for NgramConfig {
    fn default() -> Self {
        NgramConfig {
            n_min: 1,
            n_max: 4,
            lowercase: true,
            min_document_frequency: 1,
        }
    }
}

impl NgramConfig {
    fn validate(&self) -> Result<()> {
        if self.n_min < 1 || self.n_max < self.n_min {
            return Err(Error::Config(format!(
                "invalid n-gram range {}..={}",
                self.n_min, self.n_max
            )));
        }
        if self.min_document_frequency < 1 {
            return Err(Error::Config("min_document_frequency must be >= 1".into()));
        }
        Ok(())
    }
}

/// Split into maximal alphanumeric runs, lowercasing first if asked.
pub fn tokenize(text: &str, lowercase: bool) -> Vec<String> {
    let prepared: String = if lowercase {
        text.to_lowercase()
    } else {
        text.to_string()
    };
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in prepared.chars() {
        if ch.is_alphanumeric() {
            current.push(ch);
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// All contiguous grams of each order in the configured range, in window
/// order per order.
pub fn extract_ngrams(tokens: &[String], config: &NgramConfig) -> Vec<String> {
    let mut grams = Vec::new();
    for n in config.n_min..=config.n_max {
        if tokens.len() < n {
            continue;
        }
        for window in tokens.windows(n) {
            let mut gram = String::with_capacity(window.iter().map(|t| t.len() + 1).sum());
            for (i, tok) in window.iter().enumerate() {
                if i > 0 {
                    gram.push(GRAM_SEPARATOR);
                }
                gram.push_str(tok);
            }
            grams.push(gram);
        }
    }
    grams
}

/// Gram-to-index map fitted on a corpus, with document frequencies.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Vocabulary {
    grams: Vec<String>,
    index: HashMap<String, u32>,
    document_frequency: Vec<u32>,
    n_docs: usize,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.grams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grams.is_empty()
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn gram(&self, index: usize) -> &str {
        &self.grams[index]
    }

    pub fn index_of(&self, gram: &str) -> Option<u32> {
        self.index.get(gram).copied()
    }

    pub fn document_frequency(&self, index: usize) -> u32 {
        self.document_frequency[index]
    }

    /// SHA-256 over grams and document frequencies in index order; model
    /// files store this to pin the vocabulary they were trained against.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.n_docs.to_le_bytes());
        for (gram, df) in self.grams.iter().zip(&self.document_frequency) {
            hasher.update(gram.as_bytes());
            hasher.update([0u8]);
            hasher.update(df.to_le_bytes());
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Write `gram<TAB>index<TAB>df` lines sorted by index.
    pub fn dump(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for (i, (gram, df)) in self.grams.iter().zip(&self.document_frequency).enumerate() {
            writeln!(out, "{gram}\t{i}\t{df}")?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Fit a vocabulary over the corpus. Index order is lexicographic over
/// grams, so equal corpora give byte-identical vocabularies.
pub fn fit_vocabulary(corpus: &Dataset, config: &NgramConfig) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::Usage("fit_vocabulary on an empty corpus".into()));
    }
    config.validate()?;
    let mut df: BTreeMap<String, u32> = BTreeMap::new();
    for moment in corpus.moments() {
        let tokens = tokenize(&moment.text, config.lowercase);
        let mut seen = extract_ngrams(&tokens, config);
        seen.sort_unstable();
        seen.dedup();
        for gram in seen {
            *df.entry(gram).or_insert(0) += 1;
        }
    }
    let min_df = config.min_document_frequency as u32;
    let mut grams = Vec::new();
    let mut document_frequency = Vec::new();
    for (gram, count) in df {
        if count >= min_df {
            grams.push(gram);
            document_frequency.push(count);
        }
    }
    if grams.is_empty() {
        return Err(Error::Fit(
            "no gram meets min_document_frequency; vocabulary is empty".into(),
        ));
    }
    let index = grams
        .iter()
        .enumerate()
        .map(|(i, g)| (g.clone(), i as u32))
        .collect();
    Ok(Vocabulary {
        grams,
        index,
        document_frequency,
        n_docs: corpus.len(),
    })
}

/// Sorted sparse vector of `(index, value)` pairs with a fixed
/// dimensionality. No explicit zeros are stored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    entries: Vec<(u32, f64)>,
    dim: usize,
}

impl SparseVector {
    pub fn new(mut entries: Vec<(u32, f64)>, dim: usize) -> Result<Self> {
        entries.retain(|&(_, v)| v != 0.0);
        entries.sort_unstable_by_key(|&(i, _)| i);
        for pair in entries.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::Data(format!(
                    "duplicate sparse index {}",
                    pair[0].0
                )));
            }
        }
        if let Some(&(last, _)) = entries.last() {
            if last as usize >= dim {
                return Err(Error::Shape(format!(
                    "sparse index {last} outside dimension {dim}"
                )));
            }
        }
        if entries.iter().any(|&(_, v)| !v.is_finite()) {
            return Err(Error::Data("non-finite sparse value".into()));
        }
        Ok(SparseVector { entries, dim })
    }

    pub fn empty(dim: usize) -> Self {
        SparseVector {
            entries: Vec::new(),
            dim,
        }
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn l2_norm(&self) -> f64 {
        self.entries
            .iter()
            .map(|&(_, v)| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        self.entries
            .iter()
            .map(|&(i, v)| v * dense[i as usize])
            .sum()
    }
}

/// Raw gram counts of one document over a fitted vocabulary.
/// Out-of-vocabulary grams are dropped.
pub fn vectorize_counts(
    tokens: &[String],
    vocab: &Vocabulary,
    config: &NgramConfig,
) -> SparseVector {
    let mut counts: HashMap<u32, f64> = HashMap::new();
    for gram in extract_ngrams(tokens, config) {
        if let Some(idx) = vocab.index_of(&gram) {
            *counts.entry(idx).or_insert(0.0) += 1.0;
        }
    }
    let entries = counts.into_iter().collect();
    SparseVector::new(entries, vocab.len()).expect("count vector is well-formed")
}

/// Tokenize and count one document in one call.
pub fn vectorize_text(text: &str, vocab: &Vocabulary, config: &NgramConfig) -> SparseVector {
    vectorize_counts(&tokenize(text, config.lowercase), vocab, config)
}

/// Smoothed idf weights plus L2 normalization.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TfidfModel {
    idf: Vec<f64>,
}

impl TfidfModel {
    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    pub fn dim(&self) -> usize {
        self.idf.len()
    }
}

/// idf(t) = ln((1 + N) / (1 + df(t))) + 1, from the fitted vocabulary.
pub fn fit_tfidf(count_vectors: &[SparseVector], vocab: &Vocabulary) -> Result<TfidfModel> {
    for v in count_vectors {
        if v.dim() != vocab.len() {
            return Err(Error::Shape(format!(
                "count vector of dim {} against vocabulary of {}",
                v.dim(),
                vocab.len()
            )));
        }
    }
    let n = vocab.n_docs() as f64;
    let idf = (0..vocab.len())
        .map(|i| ((1.0 + n) / (1.0 + vocab.document_frequency(i) as f64)).ln() + 1.0)
        .collect();
    Ok(TfidfModel { idf })
}

/// count * idf per entry, then L2-normalized. Zero vectors stay zero.
pub fn transform_tfidf(model: &TfidfModel, v: &SparseVector) -> Result<SparseVector> {
    if v.dim() != model.dim() {
        return Err(Error::Shape(format!(
            "vector of dim {} against tf-idf model of {}",
            v.dim(),
            model.dim()
        )));
    }
    let mut entries: Vec<(u32, f64)> = v
        .entries()
        .iter()
        .map(|&(i, value)| (i, value * model.idf[i as usize]))
        .collect();
    let norm = entries.iter().map(|&(_, x)| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for (_, x) in &mut entries {
            *x /= norm;
        }
    }
    SparseVector::new(entries, v.dim())
}

/// Which document representation feeds a linear model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    Bow,
    BowTfidf,
}

impl std::str::FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bow" => Ok(FeatureKind::Bow),
            "bow-tfidf" | "bow+tfidf" | "tfidf" => Ok(FeatureKind::BowTfidf),
            other => Err(Error::Config(format!("unknown feature kind `{other}`"))),
        }
    }
}

impl FeatureKind {
    pub fn name(&self) -> &'static str {
        match self {
            FeatureKind::Bow => "bow",
            FeatureKind::BowTfidf => "bow-tfidf",
        }
    }
}

/// Fitted featurization: vocabulary plus optional tf-idf, applied the same
/// way at train and predict time.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FeaturePipeline {
    pub config: NgramConfig,
    pub kind: FeatureKind,
    pub vocab: Vocabulary,
    pub tfidf: Option<TfidfModel>,
}

impl FeaturePipeline {
    /// Fit on a corpus and return the pipeline with per-document vectors
    /// of the fitting corpus.
    pub fn fit(
        corpus: &Dataset,
        config: NgramConfig,
        kind: FeatureKind,
    ) -> Result<(Self, Vec<SparseVector>)> {
        let vocab = fit_vocabulary(corpus, &config)?;
        let counts: Vec<SparseVector> = crate::par::map(corpus.moments(), |m| {
            vectorize_text(&m.text, &vocab, &config)
        });
        let (tfidf, vectors) = match kind {
            FeatureKind::Bow => (None, counts),
            FeatureKind::BowTfidf => {
                let model = fit_tfidf(&counts, &vocab)?;
                let transformed: Vec<SparseVector> = counts
                    .iter()
                    .map(|v| transform_tfidf(&model, v))
                    .collect::<Result<_>>()?;
                (Some(model), transformed)
            }
        };
        Ok((
            FeaturePipeline {
                config,
                kind,
                vocab,
                tfidf,
            },
            vectors,
        ))
    }

    pub fn transform_one(&self, text: &str) -> Result<SparseVector> {
        let counts = vectorize_text(text, &self.vocab, &self.config);
        match &self.tfidf {
            None => Ok(counts),
            Some(model) => transform_tfidf(model, &counts),
        }
    }

    pub fn transform(&self, corpus: &Dataset) -> Result<Vec<SparseVector>> {
        crate::par::map(corpus.moments(), |m| self.transform_one(&m.text))
            .into_iter()
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Moment;
    use proptest::prelude::*;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    fn docs(texts: &[&str]) -> Dataset {
        let moments = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Moment {
                id: i.to_string(),
                text: t.to_string(),
                agency: None,
                social: None,
            })
            .collect();
        Dataset::from_moments(moments).unwrap()
    }

    fn unigrams() -> NgramConfig {
        NgramConfig {
            n_min: 1,
            n_max: 1,
            ..NgramConfig::default()
        }
    }

    #[test]
    fn tokenize_drops_punctuation_and_lowercases() {
        assert_eq!(
            tokenize("I enjoyed dinner!", true),
            toks(&["i", "enjoyed", "dinner"])
        );
    }

    #[test]
    fn tokenize_empty_text() {
        assert_eq!(tokenize("", true), Vec::<String>::new());
        assert_eq!(tokenize("!?.,", true), Vec::<String>::new());
    }

    #[test]
    fn tokenize_splits_hyphens_and_keeps_digit_runs() {
        assert_eq!(
            tokenize("well-being 2x", true),
            toks(&["well", "being", "2x"])
        );
    }

    #[test]
    fn tokenize_preserves_case_when_asked() {
        assert_eq!(tokenize("Hi There", false), toks(&["Hi", "There"]));
    }

    #[test]
    fn ngrams_enumerate_windows() {
        let config = NgramConfig {
            n_min: 1,
            n_max: 2,
            ..NgramConfig::default()
        };
        let grams = extract_ngrams(&toks(&["a", "b", "c"]), &config);
        let sep = GRAM_SEPARATOR;
        assert_eq!(
            grams,
            vec![
                "a".to_string(),
                "b".to_string(),
                "c".to_string(),
                format!("a{sep}b"),
                format!("b{sep}c"),
            ]
        );
    }

    #[test]
    fn ngrams_short_sequence_keeps_lower_orders() {
        let grams = extract_ngrams(&toks(&["a"]), &NgramConfig::default());
        assert_eq!(grams, vec!["a".to_string()]);
    }

    #[test]
    fn ngram_count_for_six_tokens() {
        let tokens = toks(&["a", "b", "c", "d", "e", "f"]);
        assert_eq!(extract_ngrams(&tokens, &NgramConfig::default()).len(), 18);
    }

    proptest! {
        #[test]
        fn ngram_cardinality_formula(len in 0usize..50, n_min in 1usize..5, extra in 0usize..4) {
            let n_max = n_min + extra;
            let tokens: Vec<String> = (0..len).map(|i| format!("t{i}")).collect();
            let config = NgramConfig { n_min, n_max, ..NgramConfig::default() };
            let expected: usize = (n_min..=n_max)
                .map(|n| if len >= n { len - n + 1 } else { 0 })
                .sum();
            prop_assert_eq!(extract_ngrams(&tokens, &config).len(), expected);
        }

        #[test]
        fn tfidf_output_is_unit_norm(values in proptest::collection::vec(0u32..5, 1..20)) {
            let text: String = values
                .iter()
                .enumerate()
                .flat_map(|(i, &v)| std::iter::repeat(format!("w{i} ")).take(v as usize + 1))
                .collect();
            let corpus = docs(&[&text, "w0 filler words here"]);
            let (pipeline, vectors) =
                FeaturePipeline::fit(&corpus, NgramConfig::default(), FeatureKind::BowTfidf)
                    .unwrap();
            for v in vectors {
                if v.nnz() > 0 {
                    prop_assert!((v.l2_norm() - 1.0).abs() < 1e-12);
                }
            }
            let _ = pipeline;
        }
    }

    #[test]
    fn fit_vocabulary_counts_document_frequencies() {
        let corpus = docs(&["a b", "a c"]);
        let vocab = fit_vocabulary(&corpus, &unigrams()).unwrap();
        assert_eq!(vocab.len(), 3);
        assert_eq!(vocab.index_of("a"), Some(0));
        assert_eq!(vocab.index_of("b"), Some(1));
        assert_eq!(vocab.index_of("c"), Some(2));
        assert_eq!(vocab.document_frequency(0), 2);
        assert_eq!(vocab.document_frequency(1), 1);
        assert_eq!(vocab.document_frequency(2), 1);
    }

    #[test]
    fn min_df_filters_rare_grams() {
        let corpus = docs(&["a b", "a c"]);
        let config = NgramConfig {
            min_document_frequency: 2,
            ..unigrams()
        };
        let vocab = fit_vocabulary(&corpus, &config).unwrap();
        assert_eq!(vocab.len(), 1);
        assert_eq!(vocab.index_of("a"), Some(0));
    }

    #[test]
    fn empty_effective_vocabulary_is_fit_error() {
        let corpus = docs(&["..."]);
        assert!(matches!(
            fit_vocabulary(&corpus, &unigrams()),
            Err(Error::Fit(_))
        ));
    }

    #[test]
    fn vectorize_counts_raw_occurrences() {
        let corpus = docs(&["a b c"]);
        let vocab = fit_vocabulary(&corpus, &unigrams()).unwrap();
        let v = vectorize_counts(&toks(&["a", "a", "b"]), &vocab, &unigrams());
        assert_eq!(v.entries(), &[(0, 2.0), (1, 1.0)]);
        assert_eq!(v.dim(), 3);
    }

    #[test]
    fn vectorize_drops_oov_and_handles_empty() {
        let corpus = docs(&["a b c"]);
        let vocab = fit_vocabulary(&corpus, &unigrams()).unwrap();
        assert_eq!(
            vectorize_counts(&toks(&["z"]), &vocab, &unigrams()).nnz(),
            0
        );
        assert_eq!(vectorize_counts(&[], &vocab, &unigrams()).nnz(), 0);
    }

    #[test]
    fn unigram_counts_are_order_invariant_but_bigrams_are_not() {
        let corpus = docs(&["a b", "b a"]);
        let uni = unigrams();
        let vocab = fit_vocabulary(&corpus, &uni).unwrap();
        let forward = vectorize_counts(&toks(&["a", "b"]), &vocab, &uni);
        let backward = vectorize_counts(&toks(&["b", "a"]), &vocab, &uni);
        assert_eq!(forward, backward);

        let bi = NgramConfig {
            n_min: 1,
            n_max: 2,
            ..NgramConfig::default()
        };
        let vocab = fit_vocabulary(&corpus, &bi).unwrap();
        let forward = vectorize_counts(&toks(&["a", "b"]), &vocab, &bi);
        let backward = vectorize_counts(&toks(&["b", "a"]), &vocab, &bi);
        assert_ne!(forward, backward);
    }

    #[test]
    fn idf_of_everywhere_term_is_one() {
        // term in both of 2 docs: idf = ln(3/3) + 1 = 1
        let corpus = docs(&["a b", "a c"]);
        let vocab = fit_vocabulary(&corpus, &unigrams()).unwrap();
        let model = fit_tfidf(&[], &vocab).unwrap();
        assert!((model.idf()[vocab.index_of("a").unwrap() as usize] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tfidf_zero_vector_stays_zero() {
        let corpus = docs(&["a b", "a c"]);
        let vocab = fit_vocabulary(&corpus, &unigrams()).unwrap();
        let model = fit_tfidf(&[], &vocab).unwrap();
        let zero = SparseVector::empty(vocab.len());
        let out = transform_tfidf(&model, &zero).unwrap();
        assert_eq!(out.nnz(), 0);
    }

    #[test]
    fn tfidf_single_entry_normalizes_to_one() {
        let corpus = docs(&["a b", "a c"]);
        let vocab = fit_vocabulary(&corpus, &unigrams()).unwrap();
        let model = fit_tfidf(&[], &vocab).unwrap();
        let v = SparseVector::new(vec![(0, 1.0)], vocab.len()).unwrap();
        let out = transform_tfidf(&model, &v).unwrap();
        assert_eq!(out.entries(), &[(0, 1.0)]);
    }

    #[test]
    fn tfidf_dim_mismatch_is_shape_error() {
        let corpus = docs(&["a b", "a c"]);
        let vocab = fit_vocabulary(&corpus, &unigrams()).unwrap();
        let model = fit_tfidf(&[], &vocab).unwrap();
        let wrong = SparseVector::empty(vocab.len() + 1);
        assert!(matches!(
            transform_tfidf(&model, &wrong),
            Err(Error::Shape(_))
        ));
    }

    /// Hand-computed oracle on a 4-document corpus: counts, idf, and the
    /// normalized tf-idf matrix, exact to f64 arithmetic.
    #[test]
    fn tfidf_matches_hand_computed_matrix() {
        let corpus = docs(&["a a b", "a c", "b b c", "d"]);
        let config = unigrams();
        let (pipeline, vectors) =
            FeaturePipeline::fit(&corpus, config, FeatureKind::BowTfidf).unwrap();
        // vocabulary: a=0 (df 2), b=1 (df 2), c=2 (df 2), d=3 (df 1)
        let idf_abc = (5.0f64 / 3.0).ln() + 1.0;
        let idf_d = (5.0f64 / 2.0).ln() + 1.0;
        let idf = pipeline.tfidf.as_ref().unwrap().idf();
        assert_eq!(idf, &[idf_abc, idf_abc, idf_abc, idf_d]);

        // doc0 "a a b": raw (2, 1, 0, 0) * idf, normalized
        let n0 = ((2.0 * idf_abc).powi(2) + idf_abc.powi(2)).sqrt();
        assert_eq!(
            vectors[0].entries(),
            &[(0, 2.0 * idf_abc / n0), (1, idf_abc / n0)]
        );
        // doc1 "a c": equal weights -> 1/sqrt(2) each
        let half = 1.0 / 2.0f64.sqrt();
        for (i, (idx, v)) in vectors[1].entries().iter().enumerate() {
            assert_eq!(*idx, [0u32, 2u32][i]);
            assert!((v - half).abs() < 1e-15);
        }
        // doc3 "d": single entry -> exactly 1
        assert_eq!(vectors[3].entries(), &[(3, 1.0)]);
    }

    #[test]
    fn vocabulary_dump_format() {
        let corpus = docs(&["b a", "a"]);
        let vocab = fit_vocabulary(&corpus, &unigrams()).unwrap();
        let file = tempfile::NamedTempFile::new().unwrap();
        vocab.dump(file.path()).unwrap();
        let content = std::fs::read_to_string(file.path()).unwrap();
        assert_eq!(content, "a\t0\t2\nb\t1\t1\n");
    }

    #[test]
    fn content_hash_is_stable_and_content_sensitive() {
        let vocab_a = fit_vocabulary(&docs(&["a b", "a"]), &unigrams()).unwrap();
        let vocab_b = fit_vocabulary(&docs(&["a b", "a"]), &unigrams()).unwrap();
        let vocab_c = fit_vocabulary(&docs(&["a c", "a"]), &unigrams()).unwrap();
        assert_eq!(vocab_a.content_hash(), vocab_b.content_hash());
        assert_ne!(vocab_a.content_hash(), vocab_c.content_hash());
    }
}
