//! Vocabulary files: one `<id>\t<entry>` line per id, where the entry is a
//! code point as `U+XXXX` or one of the `<pad>`/`<unk>` specials.

use std::fs;
use std::path::Path;

use harakat_core::text::CharVocab;

use crate::error::{AppError, Result};

pub fn format_vocab(vocab: &CharVocab) -> String {
    let mut out = format!("{}\t<pad>\n{}\t<unk>\n", CharVocab::PAD_ID, CharVocab::UNK_ID);
    for (i, c) in vocab.chars().iter().enumerate() {
        out.push_str(&format!("{}\tU+{:04X}\n", i + CharVocab::N_SPECIAL, *c as u32));
    }
    out
}

pub fn parse_vocab(body: &str, path: &Path) -> Result<CharVocab> {
    let err = |line: usize, msg: String| AppError::Checkpoint {
        path: path.to_path_buf(),
        msg: format!("line {line}: {msg}"),
    };
    let mut chars = Vec::new();
    for (i, line) in body.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
        let (id, entry) = line.split_once('\t').ok_or_else(|| err(i + 1, "missing tab".into()))?;
        let id: usize = id.parse().map_err(|_| err(i + 1, format!("bad id {id:?}")))?;
        if id != i {
            return Err(err(i + 1, format!("expected id {i}, found {id}")));
        }
        match (id, entry) {
            (CharVocab::PAD_ID, "<pad>") | (CharVocab::UNK_ID, "<unk>") => {}
            (id, _) if id < CharVocab::N_SPECIAL => return Err(err(i + 1, format!("special id {id} is {entry:?}"))),
            _ => {
                let c = entry
                    .strip_prefix("U+")
                    .and_then(|h| u32::from_str_radix(h, 16).ok())
                    .and_then(char::from_u32)
                    .ok_or_else(|| err(i + 1, format!("bad code point {entry:?}")))?;
                chars.push(c);
            }
        }
    }
    CharVocab::from_ordered(chars).map_err(|e| err(0, e.to_string()))
}

pub fn write_vocab(path: &Path, vocab: &CharVocab) -> Result<()> {
    fs::write(path, format_vocab(vocab)).map_err(|e| AppError::io(path, e))
}

pub fn read_vocab(path: &Path) -> Result<CharVocab> {
    let body = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    parse_vocab(&body, path)
}
