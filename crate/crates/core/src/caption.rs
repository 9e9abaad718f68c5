//! Deterministic scene captions and a rule-based caption parser.
//!
//! Generation picks phrases and sentence frames from a [`CaptionTemplates`]
//! set with a seeded RNG. Every bin gets a sentence, empty ones included, and
//! counts are spelled out as English number words.
//!
//! Parsing scans the lowercased token stream left to right. Distance-range
//! phrases ("ten to twenty meters") and qualitative markers ("moderate
//! distance") switch the current bin; `<number> vehicles <sector phrase>`
//! adds to a cell; `<number> vehicles in total` / `a total of <number>
//! vehicles` record the stated bin total; sign phrases and walker counts are
//! picked up wherever they occur. Anything that cannot be attributed becomes
//! a [`Diagnostic`] instead of a guess.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::HashLayout;
use crate::scene::{DistanceBin, SceneDescriptor, SectorLabel, SignKind};

pub const TEMPLATE_VERSION: &str = "rfm-captions-v1";
const DEFAULT_TEMPLATES: &str = include_str!("../templates/captions.json");

const UNITS: [&str; 20] = [
    "zero",
    "one",
    "two",
    "three",
    "four",
    "five",
    "six",
    "seven",
    "eight",
    "nine",
    "ten",
    "eleven",
    "twelve",
    "thirteen",
    "fourteen",
    "fifteen",
    "sixteen",
    "seventeen",
    "eighteen",
    "nineteen",
];
const TENS: [&str; 10] = [
    "", "", "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety",
];

/// Largest per-cell count a caption may carry (5-bit hash field).
pub const MAX_CELL_WORD: u32 = 31;

/// English words for `0..=999`, tens joined to units with a hyphen.
pub fn number_to_words(n: u32) -> Result<String> {
    if n >= 1000 {
        return Err(Error::input(format!("no number words for {n}")));
    }
    let below_hundred = |n: u32| -> String {
        if n < 20 {
            UNITS[n as usize].to_string()
        } else if n.is_multiple_of(10) {
            TENS[(n / 10) as usize].to_string()
        } else {
            format!("{}-{}", TENS[(n / 10) as usize], UNITS[(n % 10) as usize])
        }
    };
    Ok(if n < 100 {
        below_hundred(n)
    } else if n.is_multiple_of(100) {
        format!("{} hundred", UNITS[(n / 100) as usize])
    } else {
        format!("{} hundred {}", UNITS[(n / 100) as usize], below_hundred(n % 100))
    })
}

fn word_below_hundred(word: &str) -> Option<u32> {
    if let Some(i) = UNITS.iter().position(|&u| u == word) {
        return Some(i as u32);
    }
    if let Some(i) = TENS.iter().position(|&t| !t.is_empty() && t == word) {
        return Some(10 * i as u32);
    }
    let (tens, unit) = word.split_once('-')?;
    let t = TENS.iter().position(|&t| !t.is_empty() && t == tens)?;
    let u = UNITS[1..10].iter().position(|&u| u == unit)? + 1;
    Some(10 * t as u32 + u as u32)
}

/// Parses a number starting at `tokens[i]`; returns the value and the
/// number of tokens consumed.
fn parse_number(tokens: &[String], i: usize) -> Option<(u32, usize)> {
    let tok = tokens.get(i)?;
    if !tok.is_empty() && tok.bytes().all(|b| b.is_ascii_digit()) {
        return tok.parse().ok().map(|v| (v, 1));
    }
    let first = word_below_hundred(tok)?;
    if (1..10).contains(&first) && tokens.get(i + 1).map(String::as_str) == Some("hundred") {
        let base = first * 100;
        if let Some(rest) = tokens.get(i + 2).and_then(|t| word_below_hundred(t)) {
            if rest > 0 {
                return Some((base + rest, 3));
            }
        }
        return Some((base, 2));
    }
    Some((first, 1))
}

fn is_number_token(tok: &str) -> bool {
    word_below_hundred(tok).is_some() || (!tok.is_empty() && tok.bytes().all(|b| b.is_ascii_digit()))
}

/// Versioned phrase and frame tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionTemplates {
    pub version: String,
    pub sector_phrases: BTreeMap<String, Vec<String>>,
    pub bin_markers: BTreeMap<String, Vec<String>>,
    pub bin_intros: BTreeMap<String, Vec<String>>,
    pub sign_phrases: BTreeMap<String, Vec<String>>,
    pub openers: Vec<String>,
    pub bin_frames: Vec<String>,
    pub single_frames: Vec<String>,
    pub empty_frames: Vec<String>,
    pub signs_none: Vec<String>,
    pub signs_some: Vec<String>,
    pub walkers_none: Vec<String>,
    pub walkers_some: Vec<String>,
    pub closings: Vec<String>,
}

impl Default for CaptionTemplates {
    fn default() -> Self {
        Self::from_json(DEFAULT_TEMPLATES).expect("bundled caption templates are valid")
    }
}

/// A phrase matcher: token sequence plus what it stands for.
#[derive(Debug, Clone)]
struct Phrase<T> {
    tokens: Vec<String>,
    value: T,
}

fn match_longest<T: Copy>(phrases: &[Phrase<T>], tokens: &[String], i: usize) -> Option<(T, usize)> {
    // phrases are sorted longest first
    phrases
        .iter()
        .find(|p| tokens.len() >= i + p.tokens.len() && tokens[i..i + p.tokens.len()] == p.tokens[..])
        .map(|p| (p.value, p.tokens.len()))
}

fn build_phrases<T: Copy>(entries: impl IntoIterator<Item = (T, String)>) -> Vec<Phrase<T>> {
    let mut out: Vec<Phrase<T>> = entries
        .into_iter()
        .map(|(value, text)| Phrase {
            tokens: tokenize(&text),
            value,
        })
        .collect();
    out.sort_by_key(|p| std::cmp::Reverse(p.tokens.len()));
    out
}

impl CaptionTemplates {
    pub fn from_json(s: &str) -> Result<Self> {
        let t: CaptionTemplates = serde_json::from_str(s)?;
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    pub fn sector_phrases(&self, sector: SectorLabel) -> &[String] {
        &self.sector_phrases[sector.key()]
    }

    pub fn bin_intros(&self, bin: DistanceBin) -> &[String] {
        &self.bin_intros[bin.key()]
    }

    fn sign_phrases_for(&self, sign: SignKind) -> &[String] {
        &self.sign_phrases[sign.key()]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::config(format!("caption templates: {msg}")));
        if self.version != TEMPLATE_VERSION {
            return bad(format!("version `{}`, expected `{TEMPLATE_VERSION}`", self.version));
        }
        fn keys_exact<'a>(
            map: &BTreeMap<String, Vec<String>>,
            expected: impl Iterator<Item = &'a str>,
            what: &str,
        ) -> Result<()> {
            let expected: Vec<&str> = expected.collect();
            for k in &expected {
                if map.get(*k).is_none_or(|v| v.is_empty()) {
                    return Err(Error::config(format!("caption templates: no {what} for `{k}`")));
                }
            }
            if let Some(k) = map.keys().find(|k| !expected.contains(&k.as_str())) {
                return Err(Error::config(format!("caption templates: unknown {what} key `{k}`")));
            }
            Ok(())
        }
        keys_exact(
            &self.sector_phrases,
            SectorLabel::ALL.iter().map(|s| s.key()),
            "sector phrase",
        )?;
        keys_exact(
            &self.bin_markers,
            DistanceBin::ALL.iter().map(|b| b.key()),
            "bin marker",
        )?;
        keys_exact(&self.bin_intros, DistanceBin::ALL.iter().map(|b| b.key()), "bin intro")?;
        keys_exact(&self.sign_phrases, SignKind::ALL.iter().map(|s| s.key()), "sign phrase")?;

        for (name, list, placeholders) in [
            ("openers", &self.openers, &["{s}"][..]),
            ("bin_frames", &self.bin_frames, &["{intro}", "{total}", "{list}"][..]),
            (
                "single_frames",
                &self.single_frames,
                &["{intro}", "{total}", "{only}"][..],
            ),
            ("empty_frames", &self.empty_frames, &["{intro}"][..]),
            ("signs_none", &self.signs_none, &[][..]),
            ("signs_some", &self.signs_some, &["{signs}"][..]),
            ("walkers_none", &self.walkers_none, &[][..]),
            ("walkers_some", &self.walkers_some, &["{walkers}"][..]),
            ("closings", &self.closings, &["{signs}", "{walkers}"][..]),
        ] {
            if list.is_empty() {
                return bad(format!("`{name}` is empty"));
            }
            for frame in list {
                if let Some(p) = placeholders.iter().find(|p| !frame.contains(*p)) {
                    return bad(format!("`{name}` frame `{frame}` lacks {p}"));
                }
            }
        }

        // every phrase must be free of digits/apostrophes and map to one label
        let all_text = self
            .sector_phrases
            .values()
            .chain(self.bin_markers.values())
            .chain(self.bin_intros.values())
            .chain(self.sign_phrases.values())
            .flatten();
        for p in all_text {
            if p.chars().any(|c| c.is_ascii_digit() || c == '\'' || c == '\u{2019}') {
                return bad(format!("phrase `{p}` contains digits or apostrophes"));
            }
        }
        for (what, map) in [
            ("sector phrase", &self.sector_phrases),
            ("bin marker", &self.bin_markers),
            ("sign phrase", &self.sign_phrases),
        ] {
            let mut seen: BTreeMap<Vec<String>, &str> = BTreeMap::new();
            for (label, phrases) in map {
                for p in phrases {
                    if let Some(prev) = seen.insert(tokenize(p), label) {
                        if prev != label.as_str() || phrases.iter().filter(|q| tokenize(q) == tokenize(p)).count() > 1 {
                            return bad(format!("{what} `{p}` is listed more than once"));
                        }
                    }
                }
            }
        }

        // intros must resolve to their own bin
        let parser = CaptionParser::new(self);
        for bin in DistanceBin::ALL {
            for intro in self.bin_intros(bin) {
                let tokens = tokenize(intro);
                match parser.scope_in(&tokens) {
                    Some(b) if b == bin => {}
                    other => {
                        return bad(format!(
                            "intro `{intro}` resolves to {:?}, expected {bin}",
                            other.map(|b| b.key())
                        ))
                    }
                }
            }
        }
        Ok(())
    }
}

/// A generated caption with its provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caption {
    pub text: String,
    pub seed: u64,
    pub variant: u64,
}

struct Picker {
    rng: ChaCha8Rng,
    variant: u64,
}

impl Picker {
    fn pick<'a>(&mut self, options: &'a [String]) -> &'a str {
        let i = self.rng.random_range(0..options.len());
        self.variant = self.variant.wrapping_mul(31).wrapping_add(i as u64);
        &options[i]
    }
}

fn plural(n: u32, one: &str, many: &str) -> Result<String> {
    Ok(format!("{} {}", number_to_words(n)?, if n == 1 { one } else { many }))
}

fn join_list(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {}", init.join(", "), last),
    }
}

fn capitalize_sentences(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut upper_next = true;
    for c in text.chars() {
        if upper_next && c.is_alphabetic() {
            out.extend(c.to_uppercase());
            upper_next = false;
        } else {
            out.push(c);
        }
        if c == '.' {
            upper_next = true;
        }
    }
    out
}

/// Renders `d` as a single flowing description.
pub fn generate_caption(d: &SceneDescriptor, seed: u64, templates: &CaptionTemplates) -> Result<Caption> {
    for bin in DistanceBin::ALL {
        for (sector, n) in d.occupied(bin) {
            if n > MAX_CELL_WORD {
                return Err(Error::input(format!(
                    "{bin} {sector} has {n} vehicles, captions support at most {MAX_CELL_WORD}"
                )));
            }
        }
    }

    let mut picker = Picker {
        rng: ChaCha8Rng::seed_from_u64(seed),
        variant: 0,
    };
    let mut sentences = Vec::with_capacity(DistanceBin::COUNT + 1);
    for bin in DistanceBin::ALL {
        let intro = picker.pick(templates.bin_intros(bin)).to_string();
        let mut cells: Vec<(SectorLabel, u32)> = d.occupied(bin).collect();
        cells.shuffle(&mut picker.rng);
        let total = d.total_vehicles(bin);
        let be = if total == 1 { "is" } else { "are" };
        let sentence = if cells.is_empty() {
            picker.pick(&templates.empty_frames).replace("{intro}", &intro)
        } else if cells.len() == 1 && total >= 2 && picker.rng.random_bool(0.5) {
            let only = picker.pick(templates.sector_phrases(cells[0].0)).to_string();
            picker
                .pick(&templates.single_frames)
                .replace("{intro}", &intro)
                .replace("{be}", be)
                .replace("{total}", &plural(total, "vehicle", "vehicles")?)
                .replace("{only}", &only)
        } else {
            let mut items = Vec::with_capacity(cells.len());
            for &(sector, n) in &cells {
                let phrase = picker.pick(templates.sector_phrases(sector));
                items.push(format!("{} {}", plural(n, "vehicle", "vehicles")?, phrase));
            }
            picker
                .pick(&templates.bin_frames)
                .replace("{intro}", &intro)
                .replace("{be}", be)
                .replace("{total}", &plural(total, "vehicle", "vehicles")?)
                .replace("{list}", &join_list(&items))
        };
        sentences.push(sentence);
    }
    let opener = picker.pick(&templates.openers).to_string();
    sentences[0] = opener.replace("{s}", &sentences[0]);

    let signs_clause = if d.signs().is_empty() {
        picker.pick(&templates.signs_none).to_string()
    } else {
        let mut signs: Vec<SignKind> = d.signs().iter().copied().collect();
        signs.shuffle(&mut picker.rng);
        let items: Vec<String> = signs
            .iter()
            .map(|&s| format!("a {}", picker.pick(templates.sign_phrases_for(s))))
            .collect();
        picker
            .pick(&templates.signs_some)
            .replace("{signs}", &join_list(&items))
    };
    let walkers = u32::from(d.walkers());
    let walkers_clause = if walkers == 0 {
        picker.pick(&templates.walkers_none).to_string()
    } else {
        picker
            .pick(&templates.walkers_some)
            .replace("{be}", if walkers == 1 { "is" } else { "are" })
            .replace("{walkers}", &plural(walkers, "walker", "walkers")?)
    };
    sentences.push(
        picker
            .pick(&templates.closings)
            .replace("{signs}", &signs_clause)
            .replace("{walkers}", &walkers_clause),
    );

    Ok(Caption {
        text: capitalize_sentences(&sentences.join(" ")),
        seed,
        variant: picker.variant,
    })
}

/// Lowercase words (hyphens kept) and punctuation as separate tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() || c == '-' {
            word.extend(c.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            tokens.push(std::mem::take(&mut word));
        }
        if matches!(c, ',' | '.' | ';' | ':' | '!' | '?') {
            tokens.push(c.to_string());
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

fn is_punct(tok: &str) -> bool {
    matches!(tok, "," | "." | ";" | ":" | "!" | "?")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diagnostic {
    /// A vehicle count with no sector phrase after it.
    UnattributedCount {
        bin: Option<String>,
        count: u32,
        clause: String,
    },
    /// A vehicle or total mention before any distance bin was named.
    NoBinScope { count: u32, clause: String },
    /// The stated bin total disagrees with the parsed sector counts.
    TotalMismatch { bin: String, stated: u32, parsed: u32 },
    /// "all of which are ..." without a known bin total.
    UnresolvedAll { clause: String },
    /// A clause with number words that no rule consumed.
    UnparsedClause { clause: String },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::UnattributedCount { bin, count, clause } => write!(
                f,
                "unattributed count: {count} vehicle(s) in {} with no sector (`{clause}`)",
                bin.as_deref().unwrap_or("no bin")
            ),
            Diagnostic::NoBinScope { count, clause } => {
                write!(f, "no distance bin in scope for {count} vehicle(s) (`{clause}`)")
            }
            Diagnostic::TotalMismatch { bin, stated, parsed } => {
                write!(
                    f,
                    "total mismatch in {bin}: caption states {stated}, sectors sum to {parsed}"
                )
            }
            Diagnostic::UnresolvedAll { clause } => {
                write!(f, "`all of which` without a stated total (`{clause}`)")
            }
            Diagnostic::UnparsedClause { clause } => write!(f, "unparsed clause: `{clause}`"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParseOutput {
    pub descriptor: SceneDescriptor,
    /// Bin totals as stated in the text, when present.
    pub stated_totals: [Option<u32>; 4],
    pub diagnostics: Vec<Diagnostic>,
}

impl ParseOutput {
    pub fn is_clean(&self) -> bool {
        self.diagnostics.is_empty()
    }
}

const VEHICLE_NOUNS: [&str; 4] = ["vehicle", "vehicles", "car", "cars"];
const WALKER_NOUNS: [&str; 4] = ["walker", "walkers", "pedestrian", "pedestrians"];
const FILLERS: [&str; 10] = [
    "that",
    "which",
    "are",
    "is",
    "located",
    "positioned",
    "traveling",
    "travelling",
    "driving",
    "moving",
];
const ALL_OF: [&[&str]; 4] = [
    &["all", "of", "which", "are"],
    &["all", "of", "them", "are"],
    &["both", "of", "which", "are"],
    &["both", "of", "them", "are"],
];

/// Compiled matcher tables for one template set.
pub struct CaptionParser {
    sectors: Vec<Phrase<SectorLabel>>,
    markers: Vec<Phrase<DistanceBin>>,
    signs: Vec<Phrase<SignKind>>,
}

impl CaptionParser {
    pub fn new(templates: &CaptionTemplates) -> Self {
        let sectors = build_phrases(
            SectorLabel::ALL
                .iter()
                .flat_map(|&s| templates.sector_phrases[s.key()].iter().map(move |p| (s, p.clone()))),
        );
        let markers = build_phrases(
            DistanceBin::ALL
                .iter()
                .flat_map(|&b| templates.bin_markers[b.key()].iter().map(move |p| (b, p.clone()))),
        );
        let signs = build_phrases(
            SignKind::ALL
                .iter()
                .flat_map(|&s| templates.sign_phrases[s.key()].iter().map(move |p| (s, p.clone()))),
        );
        Self {
            sectors,
            markers,
            signs,
        }
    }

    /// `<a> to <b> meters`, `<a> and <b> meters` or `<a>-<b>m`, where the
    /// pair is a bin's bounds.
    fn numeric_range(&self, tokens: &[String], i: usize) -> Option<(DistanceBin, usize)> {
        let tok = tokens.get(i)?;
        if let Some(body) = tok.strip_suffix('m') {
            if let Some((a, b)) = body.split_once('-') {
                if let (Ok(a), Ok(b)) = (a.parse::<u32>(), b.parse::<u32>()) {
                    return bin_for_bounds(a, b).map(|bin| (bin, 1));
                }
            }
        }
        let (lo, n1) = parse_number(tokens, i)?;
        let sep = tokens.get(i + n1)?;
        if sep != "to" && sep != "and" {
            return None;
        }
        let (hi, n2) = parse_number(tokens, i + n1 + 1)?;
        let unit = tokens.get(i + n1 + 1 + n2)?;
        if !matches!(unit.as_str(), "meters" | "meter" | "metres" | "metre" | "m") {
            return None;
        }
        bin_for_bounds(lo, hi).map(|bin| (bin, n1 + n2 + 2))
    }

    fn bin_marker(&self, tokens: &[String], i: usize) -> Option<(DistanceBin, usize)> {
        self.numeric_range(tokens, i)
            .or_else(|| match_longest(&self.markers, tokens, i))
    }

    /// Last bin named in a token slice.
    fn scope_in(&self, tokens: &[String]) -> Option<DistanceBin> {
        let mut scope = None;
        let mut i = 0;
        while i < tokens.len() {
            if let Some((bin, used)) = self.bin_marker(tokens, i) {
                scope = Some(bin);
                i += used;
            } else {
                i += 1;
            }
        }
        scope
    }

    fn quantity(tokens: &[String], i: usize) -> Option<(u32, usize)> {
        match tokens.get(i)?.as_str() {
            "no" => Some((0, 1)),
            "a" | "an" if tokens.get(i + 1).map(String::as_str) == Some("single") => Some((1, 2)),
            "a" | "an" | "single" => Some((1, 1)),
            _ => parse_number(tokens, i),
        }
    }

    pub fn parse(&self, text: &str) -> ParseOutput {
        let tokens = tokenize(text);
        let mut d = SceneDescriptor::new();
        let mut stated: [Option<u32>; 4] = [None; 4];
        let mut diagnostics = Vec::new();
        let mut scope: Option<DistanceBin> = None;
        let mut walkers: Option<u32> = None;
        let mut unparsed_clauses: Vec<usize> = Vec::new();

        let clause_of = |i: usize| -> String {
            let start = tokens[..i].iter().rposition(|t| is_punct(t)).map_or(0, |p| p + 1);
            let end = tokens[i..]
                .iter()
                .position(|t| is_punct(t))
                .map_or(tokens.len(), |p| i + p);
            tokens[start..end].join(" ")
        };
        let clause_start = |i: usize| tokens[..i].iter().rposition(|t| is_punct(t)).map_or(0, |p| p + 1);

        let mut i = 0;
        while i < tokens.len() {
            if let Some((bin, used)) = self.bin_marker(&tokens, i) {
                scope = Some(bin);
                i += used;
                continue;
            }
            if let Some(pattern) = ALL_OF.iter().find(|p| tokens[i..].starts_with_strs(p)) {
                let after = i + pattern.len();
                if let Some((sector, used)) = match_longest(&self.sectors, &tokens, after) {
                    match scope.and_then(|b| stated[b.slot()].map(|t| (b, t))) {
                        Some((bin, total)) => d.add_count(bin, sector, total),
                        None => diagnostics.push(Diagnostic::UnresolvedAll { clause: clause_of(i) }),
                    }
                    i = after + used;
                    continue;
                }
            }
            if let Some((sign, used)) = match_longest(&self.signs, &tokens, i) {
                d.insert_sign(sign);
                i += used;
                continue;
            }
            if let Some((n, used)) = Self::quantity(&tokens, i) {
                let noun_at = i + used;
                let noun = tokens.get(noun_at).map(String::as_str);
                if noun.is_some_and(|w| WALKER_NOUNS.contains(&w)) {
                    walkers = Some(walkers.unwrap_or(0) + n);
                    i = noun_at + 1;
                    continue;
                }
                if noun.is_some_and(|w| VEHICLE_NOUNS.contains(&w)) {
                    let mut next = noun_at + 1;
                    let total_before = i >= 2 && tokens[i - 2] == "total" && tokens[i - 1] == "of";
                    let total_after = tokens[next..].starts_with_strs(&["in", "total"]);
                    if total_after {
                        next += 2;
                    }
                    if total_before || total_after {
                        match scope {
                            Some(bin) => stated[bin.slot()] = Some(n),
                            None => diagnostics.push(Diagnostic::NoBinScope {
                                count: n,
                                clause: clause_of(i),
                            }),
                        }
                        i = next;
                        continue;
                    }
                    let mut probe = next;
                    while probe < tokens.len() && probe < next + 3 && FILLERS.contains(&tokens[probe].as_str()) {
                        probe += 1;
                    }
                    if let Some((sector, used)) = match_longest(&self.sectors, &tokens, probe) {
                        match scope {
                            Some(bin) => d.add_count(bin, sector, n),
                            None => diagnostics.push(Diagnostic::NoBinScope {
                                count: n,
                                clause: clause_of(i),
                            }),
                        }
                        i = probe + used;
                    } else if n == 0 {
                        // "there are no vehicles"
                        if let Some(bin) = scope {
                            stated[bin.slot()] = Some(0);
                        }
                        i = next;
                    } else {
                        diagnostics.push(Diagnostic::UnattributedCount {
                            bin: scope.map(|b| b.key().to_string()),
                            count: n,
                            clause: clause_of(i),
                        });
                        i = next;
                    }
                    continue;
                }
            }
            if is_number_token(&tokens[i]) {
                let start = clause_start(i);
                if !unparsed_clauses.contains(&start) {
                    unparsed_clauses.push(start);
                    diagnostics.push(Diagnostic::UnparsedClause { clause: clause_of(i) });
                }
            }
            i += 1;
        }

        if let Some(w) = walkers {
            d.set_walkers(w);
        }
        for bin in DistanceBin::ALL {
            if let Some(total) = stated[bin.slot()] {
                let parsed = d.total_vehicles(bin);
                if parsed != total {
                    diagnostics.push(Diagnostic::TotalMismatch {
                        bin: bin.key().to_string(),
                        stated: total,
                        parsed,
                    });
                }
            }
        }
        ParseOutput {
            descriptor: d,
            stated_totals: stated,
            diagnostics,
        }
    }
}

trait StartsWithStrs {
    fn starts_with_strs(&self, words: &[&str]) -> bool;
}

impl StartsWithStrs for [String] {
    fn starts_with_strs(&self, words: &[&str]) -> bool {
        self.len() >= words.len() && self.iter().zip(words).all(|(a, b)| a == b)
    }
}

fn bin_for_bounds(lo: u32, hi: u32) -> Option<DistanceBin> {
    DistanceBin::ALL.into_iter().find(|b| {
        let (l, h) = b.range();
        f64::from(lo) == l && f64::from(hi) == h
    })
}

/// Parses arbitrary text; never fails, anomalies go to diagnostics.
pub fn parse_caption(text: &str, templates: &CaptionTemplates) -> ParseOutput {
    CaptionParser::new(templates).parse(text)
}

/// True when every cell, walker and sign count fits a caption and the hash.
pub fn within_capacity(d: &SceneDescriptor) -> bool {
    DistanceBin::ALL.iter().all(|&b| {
        SectorLabel::ALL
            .iter()
            .all(|&s| d.count(b, s) <= HashLayout::capacity(s))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bin(i: u8) -> DistanceBin {
        DistanceBin::new(i).unwrap()
    }

    #[test]
    fn number_words() {
        assert_eq!(number_to_words(0).unwrap(), "zero");
        assert_eq!(number_to_words(13).unwrap(), "thirteen");
        assert_eq!(number_to_words(31).unwrap(), "thirty-one");
        assert_eq!(number_to_words(40).unwrap(), "forty");
        assert_eq!(number_to_words(180).unwrap(), "one hundred eighty");
        assert_eq!(number_to_words(372).unwrap(), "three hundred seventy-two");
        assert!(number_to_words(1000).is_err());
        for n in 0..1000 {
            let toks = tokenize(&number_to_words(n).unwrap());
            assert_eq!(parse_number(&toks, 0), Some((n, toks.len())), "{n}");
        }
        assert_eq!(parse_number(&tokenize("12 cars"), 0), Some((12, 1)));
        assert_eq!(parse_number(&tokenize("twenty-ten"), 0), None);
    }

    #[test]
    fn tokenizer() {
        assert_eq!(
            tokenize("Further away, from thirty-one to 40 meters."),
            vec!["further", "away", ",", "from", "thirty-one", "to", "40", "meters", "."]
        );
    }

    #[test]
    fn default_templates_validate() {
        let t = CaptionTemplates::default();
        assert_eq!(t.version, TEMPLATE_VERSION);
    }

    #[test]
    fn template_validation_catches_problems() {
        let base: serde_json::Value = serde_json::from_str(DEFAULT_TEMPLATES).unwrap();

        let mut dup = base.clone();
        dup["sector_phrases"]["left_side"][0] = "in the opposing lane ahead of us".into();
        assert!(CaptionTemplates::from_json(&dup.to_string()).is_err());

        let mut missing = base.clone();
        missing["sector_phrases"].as_object_mut().unwrap().remove("right_side");
        assert!(CaptionTemplates::from_json(&missing.to_string()).is_err());

        let mut digits = base.clone();
        digits["bin_intros"]["0-10m"][0] = "within 0 to 10 meters".into();
        assert!(CaptionTemplates::from_json(&digits.to_string()).is_err());

        let mut wrong_bin = base.clone();
        wrong_bin["bin_intros"]["0-10m"][0] = "further away".into();
        assert!(CaptionTemplates::from_json(&wrong_bin.to_string()).is_err());

        let mut version = base.clone();
        version["version"] = "rfm-captions-v0".into();
        assert!(CaptionTemplates::from_json(&version.to_string()).is_err());

        let mut frame = base;
        frame["bin_frames"][0] = "{intro}, there are vehicles.".into();
        assert!(CaptionTemplates::from_json(&frame.to_string()).is_err());
    }

    #[test]
    fn empty_scene_caption() {
        let t = CaptionTemplates::default();
        let c = generate_caption(&SceneDescriptor::new(), 4, &t).unwrap();
        let lower = c.text.to_lowercase();
        assert!(lower.matches("no vehicles").count() == 4, "{}", c.text);
        assert!(lower.contains("no applicable traffic signs"));
        assert!(lower.contains("no walkers") || lower.contains("no pedestrians"));
        let p = parse_caption(&c.text, &t);
        assert!(p.is_clean(), "{:?}", p.diagnostics);
        assert_eq!(p.descriptor, SceneDescriptor::new());
        assert_eq!(p.stated_totals, [Some(0); 4]);
    }

    #[test]
    fn seeds_vary_surface_not_content() {
        let t = CaptionTemplates::default();
        let mut d = SceneDescriptor::new();
        d.set_count(bin(1), SectorLabel::InLaneFrontSide, 1);
        d.set_count(bin(1), SectorLabel::RightLaneBackSide, 2);
        d.set_count(bin(3), SectorLabel::OpposingLaneFront, 4);
        d.insert_sign(SignKind::StopSign);
        d.set_walkers(2);
        let a = generate_caption(&d, 1, &t).unwrap();
        let b = generate_caption(&d, 2, &t).unwrap();
        assert_ne!(a.text, b.text);
        assert_eq!(parse_caption(&a.text, &t).descriptor, d);
        assert_eq!(parse_caption(&b.text, &t).descriptor, d);
        assert_eq!(generate_caption(&d, 1, &t).unwrap(), a);
    }

    #[test]
    fn oversized_cell_is_rejected() {
        let mut d = SceneDescriptor::new();
        d.set_count(bin(2), SectorLabel::OtherLaneFront, 32);
        assert!(generate_caption(&d, 0, &CaptionTemplates::default()).is_err());
        assert!(!within_capacity(&d));
    }

    #[test]
    fn unattributed_count() {
        let t = CaptionTemplates::default();
        let p = parse_caption("two vehicles somewhere around", &t);
        assert_eq!(p.descriptor, SceneDescriptor::new());
        assert_eq!(p.diagnostics.len(), 1);
        assert!(p.diagnostics[0].to_string().starts_with("unattributed count"));
    }

    #[test]
    fn no_scope_and_mismatch() {
        let t = CaptionTemplates::default();
        let p = parse_caption("One car in the opposing lane ahead of us.", &t);
        assert!(matches!(p.diagnostics[..], [Diagnostic::NoBinScope { count: 1, .. }]));

        let p = parse_caption(
            "From ten to twenty meters there are three vehicles in total, with one vehicle in our lane ahead of us.",
            &t,
        );
        assert_eq!(p.descriptor.count(bin(2), SectorLabel::InLaneFrontSide), 1);
        assert_eq!(
            p.diagnostics,
            vec![Diagnostic::TotalMismatch {
                bin: "10-20m".into(),
                stated: 3,
                parsed: 1
            }]
        );
    }

    #[test]
    fn qualitative_and_digit_scopes() {
        let t = CaptionTemplates::default();
        let p = parse_caption(
            "At a moderate distance, a single car is in a crossing lane behind us. 30-40m: 3 cars alongside us on the left.",
            &t,
        );
        assert!(p.is_clean(), "{:?}", p.diagnostics);
        assert_eq!(p.descriptor.count(bin(3), SectorLabel::OtherLaneBack), 1);
        assert_eq!(p.descriptor.count(bin(4), SectorLabel::LeftSide), 3);
    }

    #[test]
    fn stray_numbers_are_reported() {
        let t = CaptionTemplates::default();
        let p = parse_caption("Within very close range, seven of them honk.", &t);
        assert!(matches!(p.diagnostics[..], [Diagnostic::UnparsedClause { .. }]));
    }

    #[test]
    fn signs_and_walkers() {
        let t = CaptionTemplates::default();
        let p = parse_caption(
            "I can see a speed limit sign and a traffic light around us. There are three pedestrians on the road.",
            &t,
        );
        assert!(p.is_clean());
        assert_eq!(
            p.descriptor.signs().iter().copied().collect::<Vec<_>>(),
            vec![SignKind::TrafficLight, SignKind::SpeedLimit]
        );
        assert_eq!(p.descriptor.walkers(), 3);
    }

    const REFERENCE_CAPTION: &str = "As we are driving, I notice that within the very close range of zero to ten meters from our vehicle, there are three vehicles in total, with one vehicle directly ahead of us in the same lane and two vehicles in the right adjacent lane behind us. Looking a bit further ahead, from ten to twenty meters, I see a total of five vehicles, with three vehicles in the right adjacent lane ahead of us, one vehicle in the right adjacent lane behind us, and one vehicle directly behind us in the same lane.  At a moderate distance of twenty to thirty meters, I observe four vehicles in total, all of which are in the opposing lane ahead of us.   Further away, from thirty to forty meters, there are two vehicles in total, with one vehicle in the right adjacent lane ahead of us and one vehicle directly ahead of us in the same lane. I also notice that there are no applicable traffic signs around us, and fortunately, there are no walkers on the road.";

    #[test]
    fn reference_caption_parses_exactly() {
        use SectorLabel::*;
        let t = CaptionTemplates::default();
        let p = parse_caption(REFERENCE_CAPTION, &t);
        assert!(p.is_clean(), "{:?}", p.diagnostics);
        let mut d = SceneDescriptor::new();
        d.set_count(bin(1), InLaneFrontSide, 1);
        d.set_count(bin(1), RightLaneBackSide, 2);
        d.set_count(bin(2), InLaneBackSide, 1);
        d.set_count(bin(2), RightLaneFrontSide, 3);
        d.set_count(bin(2), RightLaneBackSide, 1);
        d.set_count(bin(3), OpposingLaneFront, 4);
        d.set_count(bin(4), InLaneFrontSide, 1);
        d.set_count(bin(4), RightLaneFrontSide, 1);
        assert_eq!(p.descriptor, d);
        assert_eq!(p.stated_totals, [Some(3), Some(5), Some(4), Some(2)]);
    }

    #[test]
    fn captions_have_no_digits_or_apostrophes() {
        let t = CaptionTemplates::default();
        let mut d = SceneDescriptor::new();
        d.set_count(bin(4), SectorLabel::OtherLaneBack, 31);
        d.set_count(bin(4), SectorLabel::LeftSide, 7);
        d.insert_sign(SignKind::YieldSign);
        for seed in 0..50 {
            let c = generate_caption(&d, seed, &t).unwrap();
            assert!(
                !c.text.chars().any(|ch| ch.is_ascii_digit() || ch == '\''),
                "{}",
                c.text
            );
            assert_eq!(parse_caption(&c.text, &t).descriptor, d);
        }
    }
}
