#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use failslice::lexicon::{parse_wordnet, Lexicon};

/// Full WordNet 3.0 database: `$WNSEARCHDIR`, else `data/wordnet/dict` at the
/// workspace root (see `scripts/fetch-wordnet.sh`).
pub fn wordnet_dir() -> PathBuf {
    if let Some(dir) = std::env::var_os("WNSEARCHDIR") {
        return PathBuf::from(dir);
    }
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/wordnet/dict")
}

pub fn full_wordnet() -> &'static Lexicon {
    static LEX: OnceLock<Lexicon> = OnceLock::new();
    LEX.get_or_init(|| {
        let dir = wordnet_dir();
        parse_wordnet(&dir).unwrap_or_else(|e| {
            panic!(
                "WordNet 3.0 not available at {} ({e}); run scripts/fetch-wordnet.sh or set WNSEARCHDIR",
                dir.display()
            )
        })
    })
}

pub fn fixture_wordnet_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("test-data/wordnet")
}

pub fn fixture_wordnet() -> &'static Lexicon {
    static LEX: OnceLock<Lexicon> = OnceLock::new();
    LEX.get_or_init(|| parse_wordnet(&fixture_wordnet_dir()).expect("fixture parses"))
}
