//! Examples, padded batches and the synthetic toy corpus.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{compute_log_mel, FeatureConfig, MelSpectrogram, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::text::{apply_diacritics, is_arabic_letter, strip_diacritics, CharVocab, DiacriticLabel, LabeledText};

/// One training or evaluation record with its features precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    /// Reference diacritized text.
    pub text: String,
    pub labeled: LabeledText,
    pub mel: Option<MelSpectrogram>,
}

impl Example {
    pub fn new(id: impl Into<String>, text: impl Into<String>, mel: Option<MelSpectrogram>) -> Result<Self> {
        let text = text.into();
        let labeled = strip_diacritics(&text)?;
        Ok(Example {
            id: id.into(),
            text,
            labeled,
            mel,
        })
    }

    pub fn with_audio(
        id: impl Into<String>,
        text: impl Into<String>,
        wave: &Waveform,
        features: &FeatureConfig,
    ) -> Result<Self> {
        let mel = compute_log_mel(wave, features)?;
        Self::new(id, text, Some(mel))
    }
}

/// Padded batch. `labels` is `None` (the ignore marker) exactly where
/// `text_mask` is false.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub ids: Vec<String>,
    pub token_ids: Vec<Vec<usize>>,
    pub labels: Vec<Vec<Option<DiacriticLabel>>>,
    pub text_mask: Vec<Vec<bool>>,
    pub mels: Vec<Option<MelSpectrogram>>,
    pub speech_present: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn max_len(&self) -> usize {
        self.token_ids.first().map_or(0, Vec::len)
    }

    pub fn valid_positions(&self) -> usize {
        self.text_mask.iter().flatten().filter(|&&m| m).count()
    }

    pub fn has_speech(&self) -> bool {
        self.speech_present.iter().any(|&p| p)
    }

    pub fn from_examples(examples: &[&Example], vocab: &CharVocab) -> Batch {
        let t_max = examples.iter().map(|e| e.labeled.len()).max().unwrap_or(0);
        let mut b = Batch {
            ids: Vec::with_capacity(examples.len()),
            token_ids: Vec::with_capacity(examples.len()),
            labels: Vec::with_capacity(examples.len()),
            text_mask: Vec::with_capacity(examples.len()),
            mels: Vec::with_capacity(examples.len()),
            speech_present: Vec::with_capacity(examples.len()),
        };
        for ex in examples {
            let n = ex.labeled.len();
            let mut ids = vocab.encode(ex.labeled.base());
            ids.resize(t_max, CharVocab::PAD_ID);
            let mut labels: Vec<Option<DiacriticLabel>> = ex.labeled.labels().iter().copied().map(Some).collect();
            labels.resize(t_max, None);
            let mut mask = vec![true; n];
            mask.resize(t_max, false);
            b.ids.push(ex.id.clone());
            b.token_ids.push(ids);
            b.labels.push(labels);
            b.text_mask.push(mask);
            b.speech_present.push(ex.mel.is_some());
            b.mels.push(ex.mel.clone());
        }
        b
    }
}

/// Splits examples into padded batches of at most `batch_size`, shuffling
/// first when `shuffle` is set.
pub fn make_batches<R: Rng + ?Sized>(
    examples: &[Example],
    vocab: &CharVocab,
    batch_size: usize,
    shuffle: bool,
    rng: &mut R,
) -> Vec<Batch> {
    let mut order: Vec<&Example> = examples.iter().collect();
    if shuffle {
        order.shuffle(rng);
    }
    order
        .chunks(batch_size.max(1))
        .map(|chunk| Batch::from_examples(chunk, vocab))
        .collect()
}

/// Knobs of the synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Mel frames (10 ms each) of tone per character.
    pub frames_per_char: usize,
    pub amplitude: f32,
    pub base_hz: f32,
    pub step_hz: f32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            frames_per_char: 20,
            amplitude: 0.5,
            base_hz: 250.0,
            step_hz: 250.0,
        }
    }
}

/// A generated sentence and its waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthRecord {
    pub id: String,
    pub text: String,
    pub samples: Vec<f32>,
}

impl SynthRecord {
    pub fn waveform(&self) -> Waveform {
        Waveform::new(self.samples.clone(), SAMPLE_RATE).expect("synthetic samples are finite")
    }
}

/// Three-letter stems, each readable several ways; the label ids follow
/// the `DiacriticLabel` numbering.
const AMBIGUOUS: &[(&str, &[[u8; 3]])] = &[
    ("ضرب", &[[1, 1, 1], [2, 3, 1], [1, 7, 5]]),
    ("ذهب", &[[1, 1, 1], [1, 1, 5], [1, 1, 7]]),
    ("كتب", &[[1, 1, 1], [2, 3, 1], [2, 2, 5]]),
    ("علم", &[[1, 3, 1], [3, 7, 5], [2, 11, 1]]),
    ("درس", &[[1, 1, 1], [1, 7, 5], [1, 9, 1]]),
    ("حمل", &[[1, 1, 1], [3, 7, 5], [2, 3, 1]]),
    ("شرب", &[[1, 3, 1], [2, 7, 5], [2, 3, 1]]),
];

const LINKS: &[(&str, &[u8])] = &[("في", &[3, 0]), ("من", &[3, 7]), ("على", &[1, 1, 0]), ("مع", &[1, 1])];

fn diacritize(base: &str, ids: &[u8]) -> String {
    let chars: Vec<char> = base.chars().collect();
    let labels = ids.iter().map(|&i| DiacriticLabel::new(i).expect("valid id")).collect();
    apply_diacritics(&LabeledText::new(chars, labels).expect("lexicon entry"))
}

/// `n` sentences of the form `stem link stem`, generated in pairs that share
/// their undiacritized text but differ in the first stem's reading, so only
/// the audio tells them apart. Each character is voiced as a tone whose
/// pitch encodes its label (`base_hz + step_hz·class`); spaces and other
/// non-letters are silent.
pub fn synth_toy_corpus(n: usize, seed: u64, cfg: &SynthConfig) -> Vec<SynthRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = BTreeSet::new();
    let mut texts = Vec::with_capacity(n);
    while texts.len() < n {
        let (stem1, readings1) = AMBIGUOUS[rng.random_range(0..AMBIGUOUS.len())];
        let (link, link_ids) = LINKS[rng.random_range(0..LINKS.len())];
        let (stem2, readings2) = AMBIGUOUS[rng.random_range(0..AMBIGUOUS.len())];
        let a1 = rng.random_range(0..readings1.len());
        let b1 = (a1 + rng.random_range(1..readings1.len())) % readings1.len();
        let a2 = rng.random_range(0..readings2.len());
        let b2 = rng.random_range(0..readings2.len());
        let mk = |r1: usize, r2: usize| {
            format!(
                "{} {} {}",
                diacritize(stem1, &readings1[r1]),
                diacritize(link, link_ids),
                diacritize(stem2, &readings2[r2])
            )
        };
        let (first, second) = (mk(a1, a2), mk(b1, b2));
        if seen.contains(&first) || seen.contains(&second) {
            continue;
        }
        seen.insert(first.clone());
        seen.insert(second.clone());
        texts.push(first);
        if texts.len() < n {
            texts.push(second);
        }
    }
    texts
        .into_iter()
        .enumerate()
        .map(|(i, text)| SynthRecord {
            id: format!("synth-{i:04}"),
            samples: synth_waveform(&text, cfg),
            text,
        })
        .collect()
}

/// Tone sequence for a diacritized sentence.
pub fn synth_waveform(text: &str, cfg: &SynthConfig) -> Vec<f32> {
    let lt = strip_diacritics(text).expect("synthetic text is well formed");
    let seg = cfg.frames_per_char * 160;
    let fade = (SAMPLE_RATE as usize / 200).min(seg / 2);
    let mut out = Vec::with_capacity(seg * lt.len());
    for (&c, &label) in lt.base().iter().zip(lt.labels()) {
        if !is_arabic_letter(c) {
            out.extend(core::iter::repeat_n(0.0, seg));
            continue;
        }
        let hz = cfg.base_hz + cfg.step_hz * label.id() as f32;
        for i in 0..seg {
            let env = if i < fade {
                i as f32 / fade as f32
            } else if i + fade > seg {
                (seg - i) as f32 / fade as f32
            } else {
                1.0
            };
            let phase = 2.0 * core::f32::consts::PI * hz * i as f32 / SAMPLE_RATE as f32;
            out.push(cfg.amplitude * env * libm::sinf(phase));
        }
    }
    out
}

/// Converts synthetic records into examples with mel features.
pub fn synth_examples(records: &[SynthRecord], features: &FeatureConfig) -> Result<Vec<Example>> {
    records
        .iter()
        .map(|r| Example::with_audio(r.id.clone(), r.text.clone(), &r.waveform(), features))
        .collect()
}

/// Vocabulary over the base characters of `examples`.
pub fn build_vocab<'a, I: IntoIterator<Item = &'a Example>>(examples: I) -> CharVocab {
    CharVocab::build(examples.into_iter().flat_map(|e| e.labeled.base().iter().copied()))
}

/// Checks that split tags partition ids: no id appears under two splits.
pub fn check_disjoint_splits<'a, I>(records: I) -> Result<()>
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let mut owner: alloc::collections::BTreeMap<&str, &str> = alloc::collections::BTreeMap::new();
    for (id, split) in records {
        if let Some(prev) = owner.insert(id, split) {
            if prev != split {
                return Err(Error::Config(format!("id {id:?} appears in splits {prev:?} and {split:?}")));
            }
        }
    }
    Ok(())
}
