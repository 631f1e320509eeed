//! Porter stemmer (Porter 1980), used by the METEOR stem-match stage.
//!
//! Operates on lowercase ASCII words; anything containing non-ASCII-alphabetic
//! characters is returned unchanged.

fn is_vowel_letter(b: u8) -> bool {
    matches!(b, b'a' | b'e' | b'i' | b'o' | b'u')
}

/// Porter's consonant test: 'y' counts as a vowel when preceded by a consonant.
fn is_consonant(word: &[u8], i: usize) -> bool {
    let b = word[i];
    if is_vowel_letter(b) {
        return false;
    }
    if b == b'y' {
        return i == 0 || !is_consonant(word, i - 1);
    }
    true
}

/// The measure m: number of vowel-consonant sequences in [C](VC)^m[V].
fn measure(word: &[u8]) -> usize {
    let mut m = 0;
    let mut i = 0;
    let n = word.len();
    while i < n && is_consonant(word, i) {
        i += 1;
    }
    loop {
        if i >= n {
            return m;
        }
        while i < n && !is_consonant(word, i) {
            i += 1;
        }
        if i >= n {
            return m;
        }
        m += 1;
        while i < n && is_consonant(word, i) {
            i += 1;
        }
    }
}

fn contains_vowel(word: &[u8]) -> bool {
    (0..word.len()).any(|i| !is_consonant(word, i))
}

fn ends_double_consonant(word: &[u8]) -> bool {
    let n = word.len();
    n >= 2 && word[n - 1] == word[n - 2] && is_consonant(word, n - 1)
}

/// *o: ends consonant-vowel-consonant where the final consonant is not w, x, y.
fn ends_cvc(word: &[u8]) -> bool {
    let n = word.len();
    n >= 3
        && is_consonant(word, n - 3)
        && !is_consonant(word, n - 2)
        && is_consonant(word, n - 1)
        && !matches!(word[n - 1], b'w' | b'x' | b'y')
}

fn ends_with(word: &[u8], suffix: &str) -> bool {
    word.ends_with(suffix.as_bytes())
}

fn stem_part(word: &[u8], suffix: &str) -> Vec<u8> {
    word[..word.len() - suffix.len()].to_vec()
}

/// Apply the first matching (suffix, replacement) rule whose stem satisfies
/// `cond`. Rules are ordered longest-suffix-first by the caller.
fn replace_rule(word: &mut Vec<u8>, rules: &[(&str, &str)], cond: impl Fn(&[u8]) -> bool) -> bool {
    for (suffix, replacement) in rules {
        if ends_with(word, suffix) {
            let stem = stem_part(word, suffix);
            if cond(&stem) {
                *word = stem;
                word.extend_from_slice(replacement.as_bytes());
            }
            return true;
        }
    }
    false
}

fn step_1a(word: &mut Vec<u8>) {
    if ends_with(word, "sses") {
        word.truncate(word.len() - 2);
    } else if ends_with(word, "ies") {
        word.truncate(word.len() - 2);
    } else if ends_with(word, "ss") {
        // keep
    } else if ends_with(word, "s") {
        word.truncate(word.len() - 1);
    }
}

fn step_1b(word: &mut Vec<u8>) {
    if ends_with(word, "eed") {
        let stem = stem_part(word, "eed");
        if measure(&stem) > 0 {
            word.truncate(word.len() - 1);
        }
        return;
    }
    let stripped = if ends_with(word, "ed") && contains_vowel(&stem_part(word, "ed")) {
        word.truncate(word.len() - 2);
        true
    } else if ends_with(word, "ing") && contains_vowel(&stem_part(word, "ing")) {
        word.truncate(word.len() - 3);
        true
    } else {
        false
    };
    if stripped {
        if ends_with(word, "at") || ends_with(word, "bl") || ends_with(word, "iz") {
            word.push(b'e');
        } else if ends_double_consonant(word) && !matches!(word[word.len() - 1], b'l' | b's' | b'z') {
            word.truncate(word.len() - 1);
        } else if measure(word) == 1 && ends_cvc(word) {
            word.push(b'e');
        }
    }
}

fn step_1c(word: &mut Vec<u8>) {
    if ends_with(word, "y") && contains_vowel(&word[..word.len() - 1]) {
        let n = word.len();
        word[n - 1] = b'i';
    }
}

const STEP2_RULES: [(&str, &str); 20] = [
    ("ational", "ate"),
    ("tional", "tion"),
    ("enci", "ence"),
    ("anci", "ance"),
    ("izer", "ize"),
    ("abli", "able"),
    ("alli", "al"),
    ("entli", "ent"),
    ("eli", "e"),
    ("ousli", "ous"),
    ("ization", "ize"),
    ("ation", "ate"),
    ("ator", "ate"),
    ("alism", "al"),
    ("iveness", "ive"),
    ("fulness", "ful"),
    ("ousness", "ous"),
    ("aliti", "al"),
    ("iviti", "ive"),
    ("biliti", "ble"),
];

const STEP3_RULES: [(&str, &str); 7] = [
    ("icate", "ic"),
    ("ative", ""),
    ("alize", "al"),
    ("iciti", "ic"),
    ("ical", "ic"),
    ("ful", ""),
    ("ness", ""),
];

const STEP4_SUFFIXES: [&str; 18] = [
    "ement", "ance", "ence", "able", "ible", "ment", "ent", "ism", "ate", "iti", "ous", "ive",
    "ize", "ion", "al", "er", "ic", "ou",
];

fn step_4(word: &mut Vec<u8>) {
    for suffix in STEP4_SUFFIXES {
        if ends_with(word, suffix) {
            let stem = stem_part(word, suffix);
            if measure(&stem) > 1 {
                // "ion" only drops after s or t.
                if suffix == "ion" && !matches!(stem.last(), Some(b's') | Some(b't')) {
                    return;
                }
                *word = stem;
            }
            return;
        }
    }
}

fn step_5a(word: &mut Vec<u8>) {
    if ends_with(word, "e") {
        let stem = &word[..word.len() - 1];
        let m = measure(stem);
        if m > 1 || (m == 1 && !ends_cvc(stem)) {
            word.truncate(word.len() - 1);
        }
    }
}

fn step_5b(word: &mut Vec<u8>) {
    if measure(word) > 1 && ends_double_consonant(word) && word[word.len() - 1] == b'l' {
        word.truncate(word.len() - 1);
    }
}

/// Stem a single lowercase word.
pub fn stem(word: &str) -> String {
    if word.len() <= 2 || !word.bytes().all(|b| b.is_ascii_lowercase()) {
        return word.to_string();
    }
    let mut w = word.as_bytes().to_vec();
    step_1a(&mut w);
    step_1b(&mut w);
    step_1c(&mut w);
    replace_rule(&mut w, &STEP2_RULES, |stem| measure(stem) > 0);
    replace_rule(&mut w, &STEP3_RULES, |stem| measure(stem) > 0);
    step_4(&mut w);
    step_5a(&mut w);
    step_5b(&mut w);
    String::from_utf8(w).expect("ascii stays ascii")
}
