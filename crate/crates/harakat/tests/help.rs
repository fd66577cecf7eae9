//! `--help` output is compared to files in `tests/golden/`. Set
//! `HARAKAT_BLESS=1` to rewrite them after an intentional change.

use std::fs;
use std::path::PathBuf;
use std::process::Command;

const COMMANDS: &[&str] = &["", "train", "evaluate", "predict", "strip", "apply", "synth-corpus", "gradcheck"];

#[test]
fn help_texts_match_golden_files() {
    let golden = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let bless = std::env::var_os("HARAKAT_BLESS").is_some();
    let mut stale = Vec::new();
    for cmd in COMMANDS {
        let mut c = Command::new(env!("CARGO_BIN_EXE_harakat"));
        c.env_remove("CW_SEED").env("COLUMNS", "100");
        if !cmd.is_empty() {
            c.arg(cmd);
        }
        let out = c.arg("--help").output().unwrap();
        assert!(out.status.success());
        let text = String::from_utf8(out.stdout).unwrap();
        let file = golden.join(format!("{}.txt", if cmd.is_empty() { "harakat" } else { cmd }));
        if bless {
            fs::create_dir_all(&golden).unwrap();
            fs::write(&file, &text).unwrap();
        } else if fs::read_to_string(&file).ok().as_deref() != Some(text.as_str()) {
            stale.push(file.display().to_string());
        }
    }
    assert!(stale.is_empty(), "help text differs from {stale:?}; rerun with HARAKAT_BLESS=1 if intended");
}
