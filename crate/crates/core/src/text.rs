//! Arabic character handling: the 15-way diacritic taxonomy, lossless
//! conversion between diacritized text and `(base text, labels)` pairs, and
//! the character vocabulary.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

pub const FATHATAN: char = '\u{064B}';
pub const DAMMATAN: char = '\u{064C}';
pub const KASRATAN: char = '\u{064D}';
pub const FATHA: char = '\u{064E}';
pub const DAMMA: char = '\u{064F}';
pub const KASRA: char = '\u{0650}';
pub const SHADDA: char = '\u{0651}';
pub const SUKUN: char = '\u{0652}';

/// One of the eight labelled combining marks U+064B..=U+0652.
#[inline]
pub fn is_diacritic(c: char) -> bool {
    ('\u{064B}'..='\u{0652}').contains(&c)
}

/// Arabic combining marks outside the labelled set (Quranic annotation,
/// superscript alef, madda and hamza marks). These are dropped by stripping.
pub fn is_unlabelled_mark(c: char) -> bool {
    matches!(c,
        '\u{0610}'..='\u{061A}'
        | '\u{0653}'..='\u{065F}'
        | '\u{0670}'
        | '\u{06D6}'..='\u{06DC}'
        | '\u{06DF}'..='\u{06E4}'
        | '\u{06E7}'..='\u{06E8}'
        | '\u{06EA}'..='\u{06ED}'
        | '\u{08D3}'..='\u{08FF}')
}

/// Characters allowed to carry a diacritic label: Arabic letters plus tatweel.
pub fn is_arabic_letter(c: char) -> bool {
    matches!(c,
        '\u{0620}'..='\u{064A}'
        | '\u{066E}'..='\u{066F}'
        | '\u{0671}'..='\u{06D3}'
        | '\u{06D5}'
        | '\u{06EE}'..='\u{06EF}'
        | '\u{06FA}'..='\u{06FC}'
        | '\u{06FF}'
        | '\u{0750}'..='\u{077F}'
        | '\u{08A0}'..='\u{08C9}')
}

/// The non-shadda part of a diacritic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Vowel {
    Fatha,
    Damma,
    Kasra,
    Fathatan,
    Dammatan,
    Kasratan,
    Sukun,
}

impl Vowel {
    pub const ALL: [Vowel; 7] = [
        Vowel::Fatha,
        Vowel::Damma,
        Vowel::Kasra,
        Vowel::Fathatan,
        Vowel::Dammatan,
        Vowel::Kasratan,
        Vowel::Sukun,
    ];

    pub fn mark(self) -> char {
        match self {
            Vowel::Fatha => FATHA,
            Vowel::Damma => DAMMA,
            Vowel::Kasra => KASRA,
            Vowel::Fathatan => FATHATAN,
            Vowel::Dammatan => DAMMATAN,
            Vowel::Kasratan => KASRATAN,
            Vowel::Sukun => SUKUN,
        }
    }

    pub fn from_mark(c: char) -> Option<Vowel> {
        Some(match c {
            FATHA => Vowel::Fatha,
            DAMMA => Vowel::Damma,
            KASRA => Vowel::Kasra,
            FATHATAN => Vowel::Fathatan,
            DAMMATAN => Vowel::Dammatan,
            KASRATAN => Vowel::Kasratan,
            SUKUN => Vowel::Sukun,
            _ => return None,
        })
    }

    fn index(self) -> u8 {
        self as u8
    }
}

/// Per-character prediction target, a class id in `0..15`.
///
/// Ids 0..=7 are `none` followed by the seven plain vowel marks, 8 is bare
/// shadda, and 9..=14 are shadda combined with fatha, damma, kasra and the
/// three tanween marks. Shadda never combines with sukun.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct DiacriticLabel(u8);

impl DiacriticLabel {
    pub const COUNT: usize = 15;
    pub const NONE: DiacriticLabel = DiacriticLabel(0);
    pub const SHADDA: DiacriticLabel = DiacriticLabel(8);

    const NAMES: [&'static str; 15] = [
        "none",
        "fatha",
        "damma",
        "kasra",
        "fathatan",
        "dammatan",
        "kasratan",
        "sukun",
        "shadda",
        "shadda+fatha",
        "shadda+damma",
        "shadda+kasra",
        "shadda+fathatan",
        "shadda+dammatan",
        "shadda+kasratan",
    ];

    pub fn new(id: u8) -> Result<Self> {
        if (id as usize) < Self::COUNT {
            Ok(DiacriticLabel(id))
        } else {
            Err(Error::BadClassId(id))
        }
    }

    pub fn all() -> impl Iterator<Item = DiacriticLabel> {
        (0..Self::COUNT as u8).map(DiacriticLabel)
    }

    #[inline]
    pub fn id(self) -> u8 {
        self.0
    }

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        Self::NAMES[self.index()]
    }

    /// Returns `None` for the one impossible pairing, shadda with sukun.
    pub fn compose(shadda: bool, vowel: Option<Vowel>) -> Option<Self> {
        let id = match (shadda, vowel) {
            (false, None) => 0,
            (false, Some(v)) => 1 + v.index(),
            (true, None) => 8,
            (true, Some(Vowel::Sukun)) => return None,
            (true, Some(v)) => 9 + v.index(),
        };
        Some(DiacriticLabel(id))
    }

    pub fn decompose(self) -> (bool, Option<Vowel>) {
        match self.0 {
            0 => (false, None),
            1..=7 => (false, Some(Vowel::ALL[self.0 as usize - 1])),
            8 => (true, None),
            _ => (true, Some(Vowel::ALL[self.0 as usize - 9])),
        }
    }

    /// Marks in output order, shadda first.
    pub fn marks(self) -> impl Iterator<Item = char> {
        let (shadda, vowel) = self.decompose();
        shadda
            .then_some(SHADDA)
            .into_iter()
            .chain(vowel.map(Vowel::mark))
    }

    pub fn mark_count(self) -> usize {
        let (shadda, vowel) = self.decompose();
        shadda as usize + vowel.is_some() as usize
    }
}

impl TryFrom<u8> for DiacriticLabel {
    type Error = Error;
    fn try_from(id: u8) -> Result<Self> {
        DiacriticLabel::new(id)
    }
}

impl From<DiacriticLabel> for u8 {
    fn from(l: DiacriticLabel) -> u8 {
        l.0
    }
}

impl fmt::Debug for DiacriticLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for DiacriticLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Undiacritized characters paired with one label each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledText {
    base: Vec<char>,
    labels: Vec<DiacriticLabel>,
}

impl LabeledText {
    pub fn new(base: Vec<char>, labels: Vec<DiacriticLabel>) -> Result<Self> {
        if base.len() != labels.len() {
            return Err(Error::LabelLength {
                chars: base.len(),
                labels: labels.len(),
            });
        }
        for (&c, &l) in base.iter().zip(&labels) {
            if is_diacritic(c) {
                return Err(Error::MarkInBase(c));
            }
            if l != DiacriticLabel::NONE && !is_arabic_letter(c) {
                return Err(Error::LabelOnNonArabic(c));
            }
        }
        Ok(LabeledText { base, labels })
    }

    /// Every character labelled `none`.
    pub fn unlabeled(base: &str) -> Result<Self> {
        let base: Vec<char> = base.chars().collect();
        let labels = alloc::vec![DiacriticLabel::NONE; base.len()];
        LabeledText::new(base, labels)
    }

    pub fn base(&self) -> &[char] {
        &self.base
    }

    pub fn base_string(&self) -> String {
        self.base.iter().collect()
    }

    pub fn labels(&self) -> &[DiacriticLabel] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    /// Replaces the labels, forcing `none` on characters that cannot carry one.
    pub fn with_predicted(&self, labels: &[DiacriticLabel]) -> Result<Self> {
        if labels.len() != self.base.len() {
            return Err(Error::LabelLength {
                chars: self.base.len(),
                labels: labels.len(),
            });
        }
        let labels = self
            .base
            .iter()
            .zip(labels)
            .map(|(&c, &l)| if is_arabic_letter(c) { l } else { DiacriticLabel::NONE })
            .collect();
        Ok(LabeledText {
            base: self.base.clone(),
            labels,
        })
    }
}

/// An unlabelled Arabic mark removed during stripping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DroppedMark {
    pub offset: usize,
    pub mark: char,
}

struct Pending {
    offset: usize,
    base: char,
    shadda: bool,
    vowel: Option<Vowel>,
}

impl Pending {
    fn label(&self) -> Result<DiacriticLabel> {
        DiacriticLabel::compose(self.shadda, self.vowel).ok_or(Error::Normalization {
            offset: self.offset,
            base: self.base,
            reason: "shadda combined with sukun",
        })
    }
}

/// Splits diacritized text into base characters and labels.
pub fn strip_diacritics(text: &str) -> Result<LabeledText> {
    strip_diacritics_with_report(text).map(|(lt, _)| lt)
}

/// Like [`strip_diacritics`], also returning the unlabelled marks it dropped.
pub fn strip_diacritics_with_report(text: &str) -> Result<(LabeledText, Vec<DroppedMark>)> {
    let mut base = Vec::new();
    let mut labels = Vec::new();
    let mut dropped = Vec::new();
    let mut pending: Option<Pending> = None;

    for (offset, c) in text.chars().enumerate() {
        if is_diacritic(c) {
            let p = pending
                .as_mut()
                .ok_or(Error::MarkWithoutBase { offset, mark: c })?;
            if !is_arabic_letter(p.base) {
                return Err(Error::MarkOnNonArabic {
                    offset,
                    mark: c,
                    base: p.base,
                });
            }
            if c == SHADDA {
                if p.shadda {
                    return Err(Error::Normalization {
                        offset,
                        base: p.base,
                        reason: "repeated shadda",
                    });
                }
                p.shadda = true;
            } else {
                if p.vowel.is_some() {
                    return Err(Error::Normalization {
                        offset,
                        base: p.base,
                        reason: "two vowel marks on one character",
                    });
                }
                p.vowel = Vowel::from_mark(c);
            }
            continue;
        }
        if is_unlabelled_mark(c) {
            dropped.push(DroppedMark { offset, mark: c });
            continue;
        }
        if let Some(p) = pending.take() {
            labels.push(p.label()?);
        }
        base.push(c);
        pending = Some(Pending {
            offset,
            base: c,
            shadda: false,
            vowel: None,
        });
    }
    if let Some(p) = pending {
        labels.push(p.label()?);
    }
    Ok((LabeledText { base, labels }, dropped))
}

/// Emits each base character followed by its marks, shadda first.
pub fn apply_diacritics(lt: &LabeledText) -> String {
    let mut out = String::with_capacity(lt.base.len() * 4);
    for (&c, &l) in lt.base.iter().zip(&lt.labels) {
        out.push(c);
        out.extend(l.marks());
    }
    out
}

/// Moves shadda to the front of every run of labelled marks, leaving the
/// rest of the text untouched.
pub fn canonical_mark_order(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut run: Vec<char> = Vec::new();
    let flush = |run: &mut Vec<char>, out: &mut String| {
        out.extend(run.iter().filter(|&&m| m == SHADDA));
        out.extend(run.iter().filter(|&&m| m != SHADDA));
        run.clear();
    };
    for c in text.chars() {
        if is_diacritic(c) {
            run.push(c);
        } else {
            flush(&mut run, &mut out);
            out.push(c);
        }
    }
    flush(&mut run, &mut out);
    out
}

/// NFC followed by shadda-first mark order; applied identically to
/// hypotheses and references before scoring.
pub fn normalize_for_scoring(text: &str) -> String {
    let nfc: String = text.nfc().collect();
    canonical_mark_order(&nfc)
}

/// Character vocabulary with padding at id 0 and unknown at id 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharVocab {
    id_to_char: Vec<char>,
    char_to_id: BTreeMap<char, usize>,
}

impl CharVocab {
    pub const PAD_ID: usize = 0;
    pub const UNK_ID: usize = 1;
    pub const N_SPECIAL: usize = 2;

    /// Every distinct character seen, ordered by code point.
    pub fn build<I: IntoIterator<Item = char>>(chars: I) -> Self {
        let set: BTreeSet<char> = chars.into_iter().filter(|c| !is_diacritic(*c)).collect();
        Self::from_ordered(set.into_iter().collect()).expect("set has no duplicates")
    }

    /// Builds from characters listed in id order, starting at id 2.
    pub fn from_ordered(chars: Vec<char>) -> Result<Self> {
        let mut char_to_id = BTreeMap::new();
        for (i, &c) in chars.iter().enumerate() {
            if char_to_id.insert(c, i + Self::N_SPECIAL).is_some() {
                return Err(Error::Config(alloc::format!(
                    "duplicate vocabulary character U+{:04X}",
                    c as u32
                )));
            }
        }
        Ok(CharVocab {
            id_to_char: chars,
            char_to_id,
        })
    }

    /// Total ids including the two specials.
    pub fn len(&self) -> usize {
        self.id_to_char.len() + Self::N_SPECIAL
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_char.is_empty()
    }

    pub fn id(&self, c: char) -> usize {
        self.char_to_id.get(&c).copied().unwrap_or(Self::UNK_ID)
    }

    pub fn char_of(&self, id: usize) -> Option<char> {
        id.checked_sub(Self::N_SPECIAL)
            .and_then(|i| self.id_to_char.get(i).copied())
    }

    /// Real characters in id order (ids 2..).
    pub fn chars(&self) -> &[char] {
        &self.id_to_char
    }

    pub fn encode(&self, base: &[char]) -> Vec<usize> {
        base.iter().map(|&c| self.id(c)).collect()
    }

    /// Specials decode to U+FFFD.
    pub fn decode(&self, ids: &[usize]) -> Vec<char> {
        ids.iter()
            .map(|&i| self.char_of(i).unwrap_or('\u{FFFD}'))
            .collect()
    }
}

/// Free-function form of [`CharVocab::encode`].
pub fn encode_chars(base: &[char], vocab: &CharVocab) -> Vec<usize> {
    vocab.encode(base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn labels(ids: &[u8]) -> Vec<DiacriticLabel> {
        ids.iter().map(|&i| DiacriticLabel::new(i).unwrap()).collect()
    }

    #[test]
    fn reference_word_from_dialect_example() {
        let lt = strip_diacritics("عَندُكُو").unwrap();
        assert_eq!(lt.base_string(), "عندكو");
        assert_eq!(lt.labels(), labels(&[1, 0, 2, 2, 0]).as_slice());
        assert_eq!(apply_diacritics(&lt), "عَندُكُو");
    }

    #[test]
    fn ascii_passes_through() {
        let lt = strip_diacritics("abc 123").unwrap();
        assert_eq!(lt.base_string(), "abc 123");
        assert!(lt.labels().iter().all(|&l| l == DiacriticLabel::NONE));
        assert_eq!(apply_diacritics(&lt), "abc 123");
    }

    #[test]
    fn both_shadda_orders_accepted_output_is_shadda_first() {
        let vowel_first = "ب\u{064E}\u{0651}";
        let shadda_first = "ب\u{0651}\u{064E}";
        let a = strip_diacritics(vowel_first).unwrap();
        let b = strip_diacritics(shadda_first).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.labels()[0].name(), "shadda+fatha");
        assert_eq!(apply_diacritics(&a), shadda_first);
    }

    #[test]
    fn leading_mark_names_offset() {
        let err = strip_diacritics("\u{064E}ب").unwrap_err();
        assert_eq!(
            err,
            Error::MarkWithoutBase {
                offset: 0,
                mark: FATHA
            }
        );
    }

    #[test]
    fn two_vowels_rejected() {
        let err = strip_diacritics("ب\u{064E}\u{064F}").unwrap_err();
        assert!(matches!(err, Error::Normalization { offset: 2, .. }));
    }

    #[test]
    fn shadda_sukun_rejected() {
        let err = strip_diacritics("ب\u{0651}\u{0652}").unwrap_err();
        assert!(matches!(err, Error::Normalization { offset: 0, .. }));
    }

    #[test]
    fn mark_on_latin_rejected() {
        let err = strip_diacritics("a\u{064E}").unwrap_err();
        assert!(matches!(err, Error::MarkOnNonArabic { offset: 1, .. }));
    }

    #[test]
    fn unlabelled_marks_are_dropped_and_reported() {
        let (lt, dropped) = strip_diacritics_with_report("ه\u{0670}\u{064E}ذا").unwrap();
        assert_eq!(lt.base_string(), "هذا");
        assert_eq!(lt.labels()[0].name(), "fatha");
        assert_eq!(
            dropped,
            vec![DroppedMark {
                offset: 1,
                mark: '\u{0670}'
            }]
        );
    }

    #[test]
    fn class_bijection() {
        for l in DiacriticLabel::all() {
            let (s, v) = l.decompose();
            assert_eq!(DiacriticLabel::compose(s, v), Some(l));
        }
        let mut seen = BTreeSet::new();
        for s in [false, true] {
            for v in core::iter::once(None).chain(Vowel::ALL.iter().copied().map(Some)) {
                if let Some(l) = DiacriticLabel::compose(s, v) {
                    assert!(seen.insert(l));
                }
            }
        }
        assert_eq!(seen.len(), DiacriticLabel::COUNT);
        assert!(DiacriticLabel::new(15).is_err());
    }

    #[test]
    fn labeled_text_invariants() {
        assert!(LabeledText::new(vec!['a'], labels(&[1])).is_err());
        assert!(LabeledText::new(vec!['ب'], vec![]).is_err());
        assert!(LabeledText::new(vec![FATHA], labels(&[0])).is_err());
        assert!(LabeledText::new(vec!['ب'], labels(&[9])).is_ok());
    }

    #[test]
    fn canonical_order_only_touches_mark_runs() {
        assert_eq!(canonical_mark_order("ab ب\u{064E}\u{0651}"), "ab ب\u{0651}\u{064E}");
        // NFC would put fatha (ccc 30) ahead of shadda (ccc 33).
        assert_eq!(
            normalize_for_scoring("ب\u{0651}\u{064E}"),
            "ب\u{0651}\u{064E}"
        );
    }

    #[test]
    fn vocab_specials_and_unknowns() {
        let v = CharVocab::build("عندكو".chars());
        assert_eq!(v.len(), 7);
        assert_eq!(v.encode(&[]), Vec::<usize>::new());
        assert_eq!(v.id('x'), CharVocab::UNK_ID);
        let base: Vec<char> = "كوع".chars().collect();
        let ids = v.encode(&base);
        assert!(ids.iter().all(|&i| i >= CharVocab::N_SPECIAL));
        assert_eq!(v.decode(&ids), base);
        assert_eq!(v.char_of(CharVocab::PAD_ID), None);
        assert!(CharVocab::from_ordered(vec!['a', 'a']).is_err());
    }
}
