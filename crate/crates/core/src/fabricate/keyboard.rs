//! Keyboard-proximity typos and ASCII transliteration.
//!
//! The adjacency map ships as a data file (`qwerty_adjacency.txt`) so tests
//! can enumerate it; keys are lowercase letters and digits, lookups fold case
//! and replacements preserve it.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

const QWERTY_TABLE: &str = include_str!("qwerty_adjacency.txt");

/// Parsed QWERTY neighbor lists.
pub struct KeyboardMap {
    neighbors: BTreeMap<char, Vec<char>>,
}

impl KeyboardMap {
    /// Parses the bundled adjacency file.
    pub fn bundled() -> Self {
        let mut neighbors = BTreeMap::new();
        for line in QWERTY_TABLE.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let key = parts.next().and_then(|s| s.chars().next());
            let ns = parts.next();
            if let (Some(key), Some(ns)) = (key, ns) {
                neighbors.insert(key, ns.chars().collect());
            }
        }
        KeyboardMap { neighbors }
    }

    /// Neighbor list for a key, folded to lowercase.
    pub fn neighbors(&self, key: char) -> Option<&[char]> {
        let folded = key.to_ascii_lowercase();
        self.neighbors.get(&folded).map(Vec::as_slice)
    }

    pub fn keys(&self) -> impl Iterator<Item = char> + '_ {
        self.neighbors.keys().copied()
    }

    /// Applies keyboard-proximity noise: the text is ASCII-transliterated,
    /// then each mapped character is independently replaced by a uniformly
    /// chosen neighbor with probability `p`. Unmapped characters pass through.
    pub fn corrupt(&self, text: &str, p: f64, rng: &mut impl Rng) -> String {
        assert!((0.0..=1.0).contains(&p), "probability out of range");
        let clean = transliterate(text);
        let mut out = String::with_capacity(clean.len());
        for ch in clean.chars() {
            match self.neighbors(ch) {
                Some(ns) if rng.random::<f64>() < p => {
                    let pick = ns[rng.random_range(0..ns.len())];
                    if ch.is_ascii_uppercase() {
                        out.push(pick.to_ascii_uppercase());
                    } else {
                        out.push(pick);
                    }
                }
                _ => out.push(ch),
            }
        }
        out
    }
}

/// Maps each Unicode scalar to its nearest ASCII approximation; scalars
/// without an entry become `?`.
pub fn transliterate(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        if ch.is_ascii() {
            out.push(ch);
            continue;
        }
        match ascii_approx(ch) {
            Some(s) => out.push_str(s),
            None => out.push('?'),
        }
    }
    out
}

fn ascii_approx(ch: char) -> Option<&'static str> {
    let s = match ch {
        'à' | 'á' | 'â' | 'ã' | 'ä' | 'å' | 'ā' | 'ă' => "a",
        'À' | 'Á' | 'Â' | 'Ã' | 'Ä' | 'Å' | 'Ā' => "A",
        'è' | 'é' | 'ê' | 'ë' | 'ē' | 'ė' | 'ę' => "e",
        'È' | 'É' | 'Ê' | 'Ë' | 'Ē' => "E",
        'ì' | 'í' | 'î' | 'ï' | 'ī' => "i",
        'Ì' | 'Í' | 'Î' | 'Ï' => "I",
        'ò' | 'ó' | 'ô' | 'õ' | 'ö' | 'ø' | 'ō' => "o",
        'Ò' | 'Ó' | 'Ô' | 'Õ' | 'Ö' | 'Ø' => "O",
        'ù' | 'ú' | 'û' | 'ü' | 'ū' => "u",
        'Ù' | 'Ú' | 'Û' | 'Ü' => "U",
        'ý' | 'ÿ' => "y",
        'Ý' => "Y",
        'ñ' => "n",
        'Ñ' => "N",
        'ç' | 'ć' | 'č' => "c",
        'Ç' | 'Ć' | 'Č' => "C",
        'š' | 'ś' => "s",
        'ž' | 'ź' | 'ż' => "z",
        'ł' => "l",
        'Ł' => "L",
        'ß' => "ss",
        'æ' => "ae",
        'Æ' => "AE",
        'œ' => "oe",
        'Œ' => "OE",
        'đ' => "d",
        '\u{2018}' | '\u{2019}' => "'",
        '\u{201C}' | '\u{201D}' => "\"",
        '\u{2013}' | '\u{2014}' => "-",
        '\u{2026}' => "...",
        '\u{00A0}' => " ",
        '·' | '•' => "*",
        _ => return None,
    };
    Some(s)
}
