//! Edit distance, WER/CER and corpus-level evaluation.
//!
//! Scores are micro averages: total edits divided by total reference units.
//! Hypotheses and references are both passed through
//! [`normalize_for_scoring`] first.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{Error, Result};
use crate::fusion::FusionModel;
use crate::text::{apply_diacritics, normalize_for_scoring, CharVocab, DiacriticLabel};

/// Unit-cost edit distance (insertions, deletions, substitutions).
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edits and reference length for one unit type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ErrorCounts {
    pub edits: usize,
    pub ref_units: usize,
}

impl ErrorCounts {
    pub fn rate(&self) -> f64 {
        if self.ref_units == 0 {
            0.0
        } else {
            self.edits as f64 / self.ref_units as f64
        }
    }
}

pub fn word_errors(hyp: &str, reference: &str) -> Result<ErrorCounts> {
    let (h, r) = (normalize_for_scoring(hyp), normalize_for_scoring(reference));
    let rw: Vec<&str> = r.split_whitespace().collect();
    if rw.is_empty() {
        return Err(Error::EmptyReference);
    }
    let hw: Vec<&str> = h.split_whitespace().collect();
    Ok(ErrorCounts {
        edits: levenshtein(&hw, &rw),
        ref_units: rw.len(),
    })
}

pub fn char_errors(hyp: &str, reference: &str) -> Result<ErrorCounts> {
    let (h, r) = (normalize_for_scoring(hyp), normalize_for_scoring(reference));
    let rc: Vec<char> = r.chars().collect();
    if rc.is_empty() {
        return Err(Error::EmptyReference);
    }
    let hc: Vec<char> = h.chars().collect();
    Ok(ErrorCounts {
        edits: levenshtein(&hc, &rc),
        ref_units: rc.len(),
    })
}

pub fn wer(hyp: &str, reference: &str) -> Result<f64> {
    word_errors(hyp, reference).map(|c| c.rate())
}

pub fn cer(hyp: &str, reference: &str) -> Result<f64> {
    char_errors(hyp, reference).map(|c| c.rate())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    TextOnly,
    TextSpeech,
}

impl EvalMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::TextOnly => "text_only",
            EvalMode::TextSpeech => "text+speech",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceScore {
    pub id: String,
    pub hypothesis: String,
    pub reference: String,
    pub words: ErrorCounts,
    pub chars: ErrorCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: EvalMode,
    pub wer: f64,
    pub cer: f64,
    pub n_sentences: usize,
    pub n_ref_words: usize,
    pub n_ref_chars: usize,
    pub word_edits: usize,
    pub char_edits: usize,
    /// Records that could not be scored and were left out of the aggregates.
    pub failures: usize,
    pub sentences: Vec<SentenceScore>,
}

impl MetricsReport {
    pub fn from_scores(mode: EvalMode, sentences: Vec<SentenceScore>, failures: usize) -> Self {
        let word_edits = sentences.iter().map(|s| s.words.edits).sum();
        let n_ref_words = sentences.iter().map(|s| s.words.ref_units).sum();
        let char_edits = sentences.iter().map(|s| s.chars.edits).sum();
        let n_ref_chars = sentences.iter().map(|s| s.chars.ref_units).sum();
        let ratio = |e: usize, n: usize| if n == 0 { 0.0 } else { e as f64 / n as f64 };
        MetricsReport {
            mode,
            wer: ratio(word_edits, n_ref_words),
            cer: ratio(char_edits, n_ref_chars),
            n_sentences: sentences.len(),
            n_ref_words,
            n_ref_chars,
            word_edits,
            char_edits,
            failures,
            sentences,
        }
    }
}

/// Anything that assigns one label per base character of an example.
pub trait Predictor {
    fn predict_labels(&self, example: &Example, vocab: &CharVocab, use_speech: bool) -> Result<Vec<DiacriticLabel>>;
}

impl Predictor for FusionModel {
    fn predict_labels(&self, example: &Example, vocab: &CharVocab, use_speech: bool) -> Result<Vec<DiacriticLabel>> {
        let ids = vocab.encode(example.labeled.base());
        let mel = if use_speech { example.mel.as_ref() } else { None };
        self.predict(&ids, mel)
    }
}

/// Returns the gold labels; a perfect hypothesis for harness checks.
pub struct GoldOracle;

impl Predictor for GoldOracle {
    fn predict_labels(&self, example: &Example, _: &CharVocab, _: bool) -> Result<Vec<DiacriticLabel>> {
        Ok(example.labeled.labels().to_vec())
    }
}

/// Predicts `none` everywhere.
pub struct AllNone;

impl Predictor for AllNone {
    fn predict_labels(&self, example: &Example, _: &CharVocab, _: bool) -> Result<Vec<DiacriticLabel>> {
        Ok(vec![DiacriticLabel::NONE; example.labeled.len()])
    }
}

/// Greedy decoding of every example, re-diacritized and scored against its
/// reference text.
pub fn evaluate<P: Predictor + ?Sized>(
    predictor: &P,
    examples: &[Example],
    vocab: &CharVocab,
    mode: EvalMode,
) -> MetricsReport {
    let use_speech = mode == EvalMode::TextSpeech;
    let mut scores = Vec::with_capacity(examples.len());
    let mut failures = 0;
    for ex in examples {
        let scored = predictor
            .predict_labels(ex, vocab, use_speech)
            .and_then(|labels| ex.labeled.with_predicted(&labels))
            .and_then(|lt| {
                let hypothesis = apply_diacritics(&lt);
                Ok(SentenceScore {
                    id: ex.id.clone(),
                    words: word_errors(&hypothesis, &ex.text)?,
                    chars: char_errors(&hypothesis, &ex.text)?,
                    hypothesis,
                    reference: ex.text.clone(),
                })
            });
        match scored {
            Ok(s) => scores.push(s),
            Err(_) => failures += 1,
        }
    }
    MetricsReport::from_scores(mode, scores, failures)
}
