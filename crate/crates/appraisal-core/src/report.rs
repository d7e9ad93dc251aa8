//! Attention interpretability artifacts: per-sentence HTML heatmaps and
//! corpus-level word-importance rankings.
//!
//! Heatmap cells carry a background alpha equal to `weight / max(weight)`
//! (full precision, so intensity order always equals weight order) plus a
//! `data-weight` attribute with the raw weight. Rankings accumulate each
//! word's summed attention weight over the moments whose gold label
//! matches the requested class.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Dataset, Moment, Task};
use crate::error::{Error, Result};
use crate::neural::{EmbeddingSource, NeuralModel};

/// One rendered sentence.
#[derive(Clone, Debug)]
pub struct HeatmapDoc {
    pub tokens: Vec<String>,
    pub weights: Vec<f64>,
    pub task: Task,
    pub predicted: bool,
    pub gold: Option<bool>,
    pub html: String,
}

fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(ch),
        }
    }
    out
}

fn label_text(label: Option<bool>) -> &'static str {
    match label {
        Some(true) => "yes",
        Some(false) => "no",
        None => "unlabeled",
    }
}

/// Render one sentence as an HTML fragment (a `<figure>`).
fn render_figure(
    tokens: &[String],
    weights: &[f64],
    task: Task,
    predicted: bool,
    gold: Option<bool>,
) -> String {
    let max = weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut html = String::from("<figure class=\"moment\">\n  <p class=\"tokens\">");
    for (token, &weight) in tokens.iter().zip(weights) {
        let alpha = if max > 0.0 { weight / max } else { 0.0 };
        html.push_str(&format!(
            "<span class=\"tok\" data-weight=\"{weight}\" style=\"background-color: rgba(217,86,28,{alpha})\">{}</span> ",
            escape_html(token)
        ));
    }
    html.push_str(&format!(
        "</p>\n  <figcaption>task={} predicted={} gold={}</figcaption>\n</figure>",
        task.name(),
        label_text(Some(predicted)),
        label_text(gold),
    ));
    html
}

/// Wrap rendered figures into a complete HTML5 document.
pub fn heatmap_document(title: &str, figures: &[String]) -> String {
    let mut html = String::new();
    html.push_str("<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n");
    html.push_str(&format!("<title>{}</title>\n", escape_html(title)));
    html.push_str(
        "<style>\nbody { font-family: sans-serif; margin: 2em; }\n.tok { padding: 2px 3px; border-radius: 3px; }\nfigcaption { color: #555; font-size: 0.85em; margin-top: 0.3em; }\nfigure.moment { margin: 1em 0; }\n</style>\n</head>\n<body>\n",
    );
    for figure in figures {
        html.push_str(figure);
        html.push('\n');
    }
    html.push_str("</body>\n</html>\n");
    html
}

/// Render one sentence into a self-contained [`HeatmapDoc`].
///
/// Weights must align with tokens and sum to 1 within 1e-6.
pub fn render_heatmap(
    tokens: &[String],
    weights: &[f64],
    task: Task,
    predicted: bool,
    gold: Option<bool>,
) -> Result<HeatmapDoc> {
    if tokens.is_empty() {
        return Err(Error::Usage("heatmap of an empty token list".into()));
    }
    if tokens.len() != weights.len() {
        return Err(Error::Usage(format!(
            "{} tokens against {} weights",
            tokens.len(),
            weights.len()
        )));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Usage(format!(
            "attention weights sum to {sum}, expected 1"
        )));
    }
    let figure = render_figure(tokens, weights, task, predicted, gold);
    let html = heatmap_document(&format!("attention heatmap ({})", task.name()), &[figure]);
    Ok(HeatmapDoc {
        tokens: tokens.to_vec(),
        weights: weights.to_vec(),
        task,
        predicted,
        gold,
        html,
    })
}

/// How heatmap sentences are chosen.
pub enum SampleSpec<'a> {
    /// Explicit moment ids, rendered in the given order.
    Ids(&'a [String]),
    /// Seeded sample of `per_class` moments per gold class.
    Random { per_class: usize, seed: u64 },
}

/// Render a batch of moments through an attention model into one HTML
/// document string.
pub fn heatmap_batch(
    model: &NeuralModel,
    dataset: &Dataset,
    source: &EmbeddingSource,
    spec: &SampleSpec,
) -> Result<String> {
    let selected: Vec<&Moment> = match spec {
        SampleSpec::Ids(ids) => {
            let by_id: HashMap<&str, &Moment> = dataset
                .moments()
                .iter()
                .map(|m| (m.id.as_str(), m))
                .collect();
            ids.iter()
                .map(|id| {
                    by_id
                        .get(id.as_str())
                        .copied()
                        .ok_or_else(|| Error::Key(format!("moment id `{id}` not in dataset")))
                })
                .collect::<Result<_>>()?
        }
        SampleSpec::Random { per_class, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut selected = Vec::new();
            for class in [true, false] {
                let mut pool: Vec<&Moment> = dataset
                    .moments()
                    .iter()
                    .filter(|m| m.label(model.task) == Some(class))
                    .collect();
                pool.shuffle(&mut rng);
                pool.truncate(*per_class);
                selected.extend(pool);
            }
            selected
        }
    };
    if selected.is_empty() {
        return Err(Error::Usage("no moments selected for the heatmap".into()));
    }

    let figures: Vec<Result<String>> = crate::par::map(&selected, |moment| {
        let out = model.predict_with_attention(moment, source)?;
        Ok(render_figure(
            &out.tokens,
            &out.weights,
            model.task,
            out.label,
            moment.label(model.task),
        ))
    });
    let figures = figures.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(heatmap_document(
        &format!("attention heatmaps ({})", model.task.name()),
        &figures,
    ))
}

/// One ranked word.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedWord {
    pub word: String,
    pub score: f64,
    pub count: usize,
}

/// Word-importance ranking for one task and gold class.
#[derive(Clone, Debug)]
pub struct WordRanking {
    pub task: Task,
    pub class: bool,
    pub k: usize,
    pub entries: Vec<RankedWord>,
}

/// Ranking settings: top `k` words, ignoring words that appear in fewer
/// than `min_count` of the selected moments.
#[derive(Clone, Copy, Debug)]
pub struct RankConfig {
    pub k: usize,
    pub min_count: usize,
}

impl Default for RankConfig {
    fn default() -> Self {
        RankConfig {
            k: 35,
            min_count: 5,
        }
    }
}

/// Accumulate summed attention weight per word over the moments whose
/// gold label equals `class`, and return the top `k`.
///
/// A word's count is the number of selected moments containing it; its
/// score sums the weight of every occurrence. Ties sort alphabetically.
pub fn rank_words(
    model: &NeuralModel,
    dataset: &Dataset,
    source: &EmbeddingSource,
    class: bool,
    config: &RankConfig,
) -> Result<WordRanking> {
    let selected: Vec<&Moment> = dataset
        .moments()
        .iter()
        .filter(|m| m.label(model.task) == Some(class))
        .collect();
    if selected.is_empty() {
        return Err(Error::Data(format!(
            "no moments with gold {} label `{}`",
            model.task.name(),
            if class { "yes" } else { "no" }
        )));
    }

    let per_moment: Vec<Result<Vec<(String, f64)>>> = crate::par::map(&selected, |moment| {
        let out = model.predict_with_attention(moment, source)?;
        Ok(out.tokens.into_iter().zip(out.weights).collect())
    });

    let mut scores: HashMap<String, f64> = HashMap::new();
    let mut counts: HashMap<String, usize> = HashMap::new();
    for entry in per_moment {
        let pairs = entry?;
        let mut seen: Vec<&str> = Vec::new();
        for (token, weight) in &pairs {
            *scores.entry(token.clone()).or_insert(0.0) += weight;
            if !seen.contains(&token.as_str()) {
                seen.push(token);
                *counts.entry(token.clone()).or_insert(0) += 1;
            }
        }
    }

    let mut entries: Vec<RankedWord> = scores
        .into_iter()
        .filter_map(|(word, score)| {
            let count = counts[&word];
            (count >= config.min_count).then_some(RankedWord { word, score, count })
        })
        .collect();
    if entries.is_empty() {
        return Err(Error::Data(format!(
            "no word appears in at least {} moments",
            config.min_count
        )));
    }
    entries.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.word.cmp(&b.word))
    });
    entries.truncate(config.k);
    Ok(WordRanking {
        task: model.task,
        class,
        k: config.k,
        entries,
    })
}

/// Write `rank,word,score,count` rows, rank starting at 1.
pub fn write_ranking_csv(path: &Path, ranking: &WordRanking) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "rank,word,score,count")?;
    for (i, entry) in ranking.entries.iter().enumerate() {
        writeln!(out, "{},{},{:.6},{}", i + 1, entry.word, entry.score, entry.count)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn single_token_is_fully_saturated() {
        let doc = render_heatmap(&toks(&["joy"]), &[1.0], Task::Agency, true, None).unwrap();
        assert!(doc.html.contains("rgba(217,86,28,1)"));
        assert!(doc.html.starts_with("<!DOCTYPE html>"));
    }

    #[test]
    fn alpha_is_weight_over_max() {
        let doc =
            render_heatmap(&toks(&["a", "b"]), &[0.9, 0.1], Task::Agency, true, Some(false))
                .unwrap();
        // 0.9/0.9 = 1, 0.1/0.9 = 0.111...
        assert!(doc.html.contains("rgba(217,86,28,1)"));
        let second_alpha = 0.1f64 / 0.9;
        assert!(doc.html.contains(&format!("rgba(217,86,28,{second_alpha})")));
    }

    #[test]
    fn empty_tokens_are_usage_error() {
        assert!(matches!(
            render_heatmap(&[], &[], Task::Agency, true, None),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn mismatched_lengths_are_usage_error() {
        assert!(matches!(
            render_heatmap(&toks(&["a", "b"]), &[1.0], Task::Agency, true, None),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn weights_must_sum_to_one() {
        assert!(matches!(
            render_heatmap(&toks(&["a", "b"]), &[0.9, 0.3], Task::Agency, true, None),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn tokens_are_escaped() {
        let doc =
            render_heatmap(&toks(&["<script>"]), &[1.0], Task::Social, false, None).unwrap();
        assert!(doc.html.contains("&lt;script&gt;"));
        assert!(!doc.html.contains("<script>"));
    }

    #[test]
    fn caption_carries_task_and_labels() {
        let doc =
            render_heatmap(&toks(&["x"]), &[1.0], Task::Social, true, Some(false)).unwrap();
        assert!(doc
            .html
            .contains("task=social predicted=yes gold=no"));
    }

    #[test]
    fn ranking_csv_format() {
        let ranking = WordRanking {
            task: Task::Agency,
            class: true,
            k: 2,
            entries: vec![
                RankedWord {
                    word: "friend".into(),
                    score: 3.25,
                    count: 7,
                },
                RankedWord {
                    word: "lunch".into(),
                    score: 1.5,
                    count: 5,
                },
            ],
        };
        let f = tempfile::NamedTempFile::new().unwrap();
        write_ranking_csv(f.path(), &ranking).unwrap();
        let content = std::fs::read_to_string(f.path()).unwrap();
        assert_eq!(
            content,
            "rank,word,score,count\n1,friend,3.250000,7\n2,lunch,1.500000,5\n"
        );
    }
}
