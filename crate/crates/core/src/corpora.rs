//! Deterministic synthetic multilingual data.
//!
//! Toy languages are bijective lexical ciphers of a fixed pivot lexicon: a
//! controllable fraction ρ of pivot words keep their surface form, the rest
//! are replaced by generated pseudo-words (optionally suffixed). Unlabeled
//! corpora for masked-language-model training are sampled per language from a
//! template grammar (different seeds ⇒ non-parallel text), while the two
//! labeled tasks — token classification over PER/LOC/ORG spans and 3-way
//! sentence-pair classification — are generated from language-independent
//! latent examples, so every language sees the same labeled content under its
//! own cipher.

use crate::error::{Error, Result};
use crate::math;
use crate::rng::{mix, mix_str, Rng};
use crate::specials;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

// ── Pivot lexicon ────────────────────────────────────────────────────────

pub const PER_NAMES: [&str; 8] =
    ["anna", "boris", "clara", "dmitri", "elena", "farid", "greta", "henrik"];
pub const PER_TITLES: [&str; 2] = ["doctor", "captain"];
pub const LOC_NAMES: [&str; 8] =
    ["avalon", "brindel", "corwyn", "durshire", "elmford", "fenwick", "garmouth", "hollan"];
pub const LOC_MODS: [&str; 2] = ["north", "south"];
pub const LOC_BASES: [&str; 2] = ["harbor", "valley"];
pub const ORG_NAMES: [&str; 8] =
    ["acme", "borealis", "cindral", "dynacore", "ebonware", "fluxion", "gravitas", "helix"];
pub const ORG_SUFFIXES: [&str; 2] = ["labs", "corp"];
pub const NOUNS: [&str; 10] = [
    "merchant", "sailor", "teacher", "farmer", "singer", "guard", "baker", "hunter", "weaver",
    "scribe",
];
pub const VERBS: [&str; 8] =
    ["likes", "hates", "sees", "meets", "helps", "greets", "trusts", "follows"];
pub const ADJS: [&str; 8] = ["happy", "tired", "clever", "brave", "quiet", "proud", "eager", "calm"];
pub const PREPS: [&str; 4] = ["in", "near", "with", "from"];
pub const DETS: [&str; 2] = ["the", "a"];
pub const QUANTS: [&str; 3] = ["every", "no", "some"];
pub const COPULA: [&str; 2] = ["is", "was"];
pub const FUNCTION_WORDS: [&str; 4] = ["not", "and", "to", "visits"];
pub const TRAVELS: &str = "travels";

/// The full pivot lexicon in id-assignment order.
pub fn pivot_lexicon() -> Vec<String> {
    let mut out = Vec::new();
    for group in [
        &PER_NAMES[..],
        &PER_TITLES[..],
        &LOC_NAMES[..],
        &LOC_MODS[..],
        &LOC_BASES[..],
        &ORG_NAMES[..],
        &ORG_SUFFIXES[..],
        &NOUNS[..],
        &VERBS[..],
        &ADJS[..],
        &PREPS[..],
        &DETS[..],
        &QUANTS[..],
        &COPULA[..],
        &FUNCTION_WORDS[..],
    ] {
        out.extend(group.iter().map(|w| w.to_string()));
    }
    out.push(TRAVELS.to_string());
    out
}

// ── Cipher ───────────────────────────────────────────────────────────────

const CONSONANTS: [char; 14] = ['b', 'd', 'f', 'g', 'k', 'l', 'm', 'n', 'p', 'r', 's', 't', 'v', 'z'];
const VOWELS: [char; 5] = ['a', 'e', 'i', 'o', 'u'];

fn pseudo_word(rng: &mut Rng) -> String {
    let syllables = 2 + rng.range(2);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push(CONSONANTS[rng.range(CONSONANTS.len())]);
        w.push(VOWELS[rng.range(VOWELS.len())]);
    }
    w
}

/// Bijective word mapping over `words`: exactly round(ρ·|words|) entries map
/// to themselves (round half up); the rest map to fresh pseudo-words, suffixed
/// when a suffix is given.
pub fn cipher_mapping(
    words: &[String],
    seed: u64,
    rho: f64,
    suffix: Option<&str>,
) -> Result<Vec<String>> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Config(format!("overlap fraction must be in [0,1], got {rho}")));
    }
    let n = words.len();
    let n_self = math::round_nonneg(rho * n as f64).min(n);
    let mut rng = Rng::new(mix(seed, 0x6d61_7070_696e_67)); // "mapping" stream
    let order = rng.permutation(n);
    let mut self_mapped = vec![false; n];
    for &i in order.iter().take(n_self) {
        self_mapped[i] = true;
    }
    let mut taken: BTreeSet<String> = words.iter().cloned().collect();
    let mut mapping = Vec::with_capacity(n);
    for (i, w) in words.iter().enumerate() {
        if self_mapped[i] {
            mapping.push(w.clone());
            continue;
        }
        let mut found = None;
        for _ in 0..1000 {
            let mut cand = pseudo_word(&mut rng);
            if let Some(s) = suffix {
                cand.push_str(s);
            }
            if !taken.contains(&cand) {
                taken.insert(cand.clone());
                found = Some(cand);
                break;
            }
        }
        match found {
            Some(c) => mapping.push(c),
            None => {
                return Err(Error::Generation(format!(
                    "could not find a fresh surface form for `{w}` after 1000 attempts"
                )))
            }
        }
    }
    Ok(mapping)
}

// ── Languages and the registry ───────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SizeClass {
    Low,
    High,
}

impl SizeClass {
    pub fn as_str(self) -> &'static str {
        match self {
            SizeClass::Low => "low",
            SizeClass::High => "high",
        }
    }

    /// Unlabeled-corpus sentence budget for MLM training.
    pub fn n_sentences(self) -> usize {
        match self {
            SizeClass::Low => 300,
            SizeClass::High => 1200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LanguageSpec {
    pub code: String,
    pub seed: u64,
    pub rho: f64,
    pub suffix: Option<String>,
    pub size_class: SizeClass,
}

#[derive(Debug, Clone)]
pub struct ToyLanguage {
    pub spec: LanguageSpec,
    /// Surface form per pivot-lexicon index.
    pub mapping: Vec<String>,
}

impl ToyLanguage {
    pub fn generate(spec: LanguageSpec, lexicon: &[String]) -> Result<Self> {
        let mapping = cipher_mapping(lexicon, mix_str(spec.seed, &spec.code), spec.rho, spec.suffix.as_deref())?;
        Ok(ToyLanguage { spec, mapping })
    }

    pub fn code(&self) -> &str {
        &self.spec.code
    }

    /// Count of pivot words whose surface form is unchanged.
    pub fn self_mapped_count(&self, lexicon: &[String]) -> usize {
        lexicon.iter().zip(&self.mapping).filter(|(a, b)| a == b).count()
    }
}

/// The pivot lexicon plus every registered language, with a shared
/// union vocabulary: special tokens first, then pivot words, then each
/// language's novel surface forms in registration order.
#[derive(Debug, Clone)]
pub struct LanguageSuite {
    pub lexicon: Vec<String>,
    pub languages: Vec<ToyLanguage>,
    vocab_words: Vec<String>,
    vocab_ids: BTreeMap<String, u32>,
    /// Per language: pivot-lexicon index → union-vocab id of the surface form.
    lang_token_maps: BTreeMap<String, Vec<u32>>,
}

impl LanguageSuite {
    pub fn build(specs: &[LanguageSpec]) -> Result<Self> {
        let lexicon = pivot_lexicon();
        let mut seen = BTreeSet::new();
        let mut languages = Vec::with_capacity(specs.len());
        for spec in specs {
            if !seen.insert(spec.code.clone()) {
                return Err(Error::Config(format!("duplicate language code `{}`", spec.code)));
            }
            languages.push(ToyLanguage::generate(spec.clone(), &lexicon)?);
        }

        let mut vocab_words: Vec<String> =
            specials::TOKENS.iter().map(|s| s.to_string()).collect();
        let mut vocab_ids: BTreeMap<String, u32> = vocab_words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        let intern = |w: &str, words: &mut Vec<String>, ids: &mut BTreeMap<String, u32>| -> u32 {
            if let Some(&id) = ids.get(w) {
                return id;
            }
            let id = words.len() as u32;
            words.push(w.to_string());
            ids.insert(w.to_string(), id);
            id
        };
        for w in &lexicon {
            intern(w, &mut vocab_words, &mut vocab_ids);
        }
        let mut lang_token_maps = BTreeMap::new();
        for lang in &languages {
            let map: Vec<u32> = lang
                .mapping
                .iter()
                .map(|w| intern(w, &mut vocab_words, &mut vocab_ids))
                .collect();
            lang_token_maps.insert(lang.code().to_string(), map);
        }
        Ok(LanguageSuite { lexicon, languages, vocab_words, vocab_ids, lang_token_maps })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_words.len()
    }

    pub fn vocab_words(&self) -> &[String] {
        &self.vocab_words
    }

    pub fn word_id(&self, word: &str) -> Option<u32> {
        self.vocab_ids.get(word).copied()
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.vocab_words.get(id as usize).map(String::as_str)
    }

    pub fn language(&self, code: &str) -> Result<&ToyLanguage> {
        self.languages
            .iter()
            .find(|l| l.code() == code)
            .ok_or_else(|| Error::Config(format!("unknown language `{code}`")))
    }

    fn pivot_index(&self, word: &str) -> Result<usize> {
        self.lexicon
            .iter()
            .position(|w| w == word)
            .ok_or_else(|| Error::Generation(format!("`{word}` is not a pivot lexicon word")))
    }

    /// Union-vocab ids of a pivot-word sentence rendered in `code`.
    pub fn render(&self, code: &str, pivot_words: &[&str]) -> Result<Vec<u32>> {
        let map = self
            .lang_token_maps
            .get(code)
            .ok_or_else(|| Error::Config(format!("unknown language `{code}`")))?;
        pivot_words
            .iter()
            .map(|w| Ok(map[self.pivot_index(w)?]))
            .collect()
    }

    /// Translate a pivot-language id sequence into `code` (specials pass
    /// through unchanged).
    pub fn translate_ids(&self, code: &str, pivot_ids: &[u32]) -> Result<Vec<u32>> {
        let map = self
            .lang_token_maps
            .get(code)
            .ok_or_else(|| Error::Config(format!("unknown language `{code}`")))?;
        pivot_ids
            .iter()
            .map(|&id| {
                if (id as usize) < specials::COUNT {
                    return Ok(id);
                }
                let lex_idx = id as usize - specials::COUNT;
                if lex_idx >= self.lexicon.len() {
                    return Err(Error::Generation(format!(
                        "id {id} is not a pivot-language token"
                    )));
                }
                Ok(map[lex_idx])
            })
            .collect()
    }

    /// Invert a `code` sentence back to pivot ids.
    pub fn invert_ids(&self, code: &str, lang_ids: &[u32]) -> Result<Vec<u32>> {
        let map = self
            .lang_token_maps
            .get(code)
            .ok_or_else(|| Error::Config(format!("unknown language `{code}`")))?;
        let inverse: BTreeMap<u32, u32> = map
            .iter()
            .enumerate()
            .map(|(lex_idx, &id)| (id, (lex_idx + specials::COUNT) as u32))
            .collect();
        lang_ids
            .iter()
            .map(|&id| {
                if (id as usize) < specials::COUNT {
                    return Ok(id);
                }
                inverse
                    .get(&id)
                    .copied()
                    .ok_or_else(|| Error::Generation(format!("id {id} is not a `{code}` token")))
            })
            .collect()
    }
}

/// The default experiment suite: the pivot plus six targets spanning
/// ρ ∈ {0.0, 0.2, 0.5} × size ∈ {low, high}.
pub fn default_specs() -> Vec<LanguageSpec> {
    let mk = |code: &str, seed: u64, rho: f64, suffix: Option<&str>, size: SizeClass| LanguageSpec {
        code: code.to_string(),
        seed,
        rho,
        suffix: suffix.map(|s| s.to_string()),
        size_class: size,
    };
    vec![
        mk("eng", 11, 1.0, None, SizeClass::High),
        mk("apu", 21, 0.5, None, SizeClass::High),
        mk("bex", 22, 0.5, Some("ka"), SizeClass::Low),
        mk("cor", 23, 0.2, None, SizeClass::High),
        mk("dal", 24, 0.2, Some("mi"), SizeClass::Low),
        mk("eno", 25, 0.0, None, SizeClass::High),
        mk("fir", 26, 0.0, Some("su"), SizeClass::Low),
    ]
}

// ── Template grammar ─────────────────────────────────────────────────────

fn pick<'a>(rng: &mut Rng, xs: &[&'a str]) -> &'a str {
    xs[rng.range(xs.len())]
}

/// A PER/LOC/ORG entity: surface pivot words plus its BIO class.
#[derive(Debug, Clone)]
struct Entity {
    words: Vec<&'static str>,
    class: u8,
}

pub const CLASS_PER: u8 = 0;
pub const CLASS_LOC: u8 = 1;
pub const CLASS_ORG: u8 = 2;

fn sample_per(rng: &mut Rng) -> Entity {
    if rng.bernoulli(0.35) {
        Entity { words: vec![pick(rng, &PER_TITLES), pick(rng, &PER_NAMES)], class: CLASS_PER }
    } else {
        Entity { words: vec![pick(rng, &PER_NAMES)], class: CLASS_PER }
    }
}

fn sample_loc(rng: &mut Rng) -> Entity {
    if rng.bernoulli(0.35) {
        Entity { words: vec![pick(rng, &LOC_MODS), pick(rng, &LOC_BASES)], class: CLASS_LOC }
    } else {
        Entity { words: vec![pick(rng, &LOC_NAMES)], class: CLASS_LOC }
    }
}

fn sample_org(rng: &mut Rng) -> Entity {
    if rng.bernoulli(0.35) {
        Entity { words: vec![pick(rng, &ORG_NAMES), pick(rng, &ORG_SUFFIXES)], class: CLASS_ORG }
    } else {
        Entity { words: vec![pick(rng, &ORG_NAMES)], class: CLASS_ORG }
    }
}

/// One plain sentence in pivot words, for unlabeled corpora.
fn sample_mlm_sentence(rng: &mut Rng) -> Vec<&'static str> {
    let template = rng.range(14);
    let mut w: Vec<&'static str> = Vec::new();
    match template {
        0 => {
            w.extend(sample_per(rng).words);
            w.push(pick(rng, &VERBS));
            w.push(pick(rng, &DETS));
            w.push(pick(rng, &NOUNS));
        }
        1 => {
            w.extend(sample_per(rng).words);
            w.push("visits");
            w.extend(sample_loc(rng).words);
        }
        2 => {
            w.push(pick(rng, &DETS));
            w.push(pick(rng, &NOUNS));
            w.push(pick(rng, &PREPS));
            w.extend(sample_loc(rng).words);
            w.push(pick(rng, &COPULA));
            w.push(pick(rng, &ADJS));
        }
        3 => {
            w.extend(sample_org(rng).words);
            w.push(pick(rng, &COPULA));
            w.push("in");
            w.extend(sample_loc(rng).words);
        }
        4 => {
            w.extend(sample_per(rng).words);
            w.push(pick(rng, &COPULA));
            w.push(pick(rng, &ADJS));
            w.push("and");
            w.push(pick(rng, &ADJS));
        }
        5 => {
            w.push(pick(rng, &QUANTS));
            w.push(pick(rng, &NOUNS));
            w.push(pick(rng, &VERBS));
            w.push(pick(rng, &DETS));
            w.push(pick(rng, &NOUNS));
        }
        6 => {
            w.extend(sample_per(rng).words);
            w.push("travels");
            w.push("to");
            w.extend(sample_loc(rng).words);
        }
        7 => {
            w.push(pick(rng, &DETS));
            w.push(pick(rng, &NOUNS));
            w.push("from");
            w.extend(sample_org(rng).words);
            w.push(pick(rng, &VERBS));
            w.extend(sample_per(rng).words);
        }
        8 => {
            w.extend(sample_per(rng).words);
            w.push(pick(rng, &COPULA));
            w.push("not");
            w.push(pick(rng, &ADJS));
        }
        9 => {
            w.extend(sample_per(rng).words);
            w.push("and");
            w.extend(sample_per(rng).words);
            w.push(pick(rng, &VERBS));
            w.push(pick(rng, &DETS));
            w.push(pick(rng, &NOUNS));
        }
        10 => {
            w.push(pick(rng, &DETS));
            w.push(pick(rng, &ADJS));
            w.push(pick(rng, &NOUNS));
            w.push(pick(rng, &COPULA));
            w.push("near");
            w.extend(sample_loc(rng).words);
        }
        11 => {
            w.push(pick(rng, &QUANTS));
            w.push(pick(rng, &NOUNS));
            w.push(pick(rng, &COPULA));
            w.push(pick(rng, &ADJS));
        }
        12 => {
            w.extend(sample_per(rng).words);
            w.push(pick(rng, &VERBS));
            w.extend(sample_per(rng).words);
            w.push("with");
            w.push(pick(rng, &DETS));
            w.push(pick(rng, &NOUNS));
        }
        _ => {
            w.extend(sample_org(rng).words);
            w.push(pick(rng, &VERBS));
            w.push(pick(rng, &DETS));
            w.push(pick(rng, &NOUNS));
            w.push("from");
            w.extend(sample_loc(rng).words);
        }
    }
    w
}

// ── Corpora ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct Corpus {
    pub language: String,
    /// Token-id sentences (no specials).
    pub sentences: Vec<Vec<u32>>,
    pub train_idx: Vec<usize>,
    pub heldout_idx: Vec<usize>,
}

impl Corpus {
    pub fn train_sentences(&self) -> impl Iterator<Item = &Vec<u32>> {
        self.train_idx.iter().map(move |&i| &self.sentences[i])
    }

    pub fn heldout_sentences(&self) -> impl Iterator<Item = &Vec<u32>> {
        self.heldout_idx.iter().map(move |&i| &self.sentences[i])
    }
}

/// Deterministic train/heldout split: membership is a pure function of
/// (seed, n). At least one sentence is held out.
pub fn split_indices(n: usize, heldout_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::Empty(format!(
            "cannot split {n} sentence(s) into train and heldout"
        )));
    }
    if !(0.0..1.0).contains(&heldout_fraction) {
        return Err(Error::Config(format!(
            "heldout fraction must be in [0,1), got {heldout_fraction}"
        )));
    }
    let n_held = math::round_nonneg(heldout_fraction * n as f64).clamp(1, n - 1);
    let mut rng = Rng::new(mix(seed, 0x73706c_6974)); // "split" stream
    let perm = rng.permutation(n);
    let mut held: Vec<usize> = perm[..n_held].to_vec();
    let mut train: Vec<usize> = perm[n_held..].to_vec();
    held.sort_unstable();
    train.sort_unstable();
    Ok((train, held))
}

/// Sample `n_sentences` sentences for `code` from the template grammar.
/// Deterministic per (language seed, purpose); each language draws from its
/// own stream, so corpora are non-parallel across languages.
pub fn gen_corpus(
    suite: &LanguageSuite,
    code: &str,
    n_sentences: usize,
    heldout_fraction: f64,
    max_len: usize,
) -> Result<Corpus> {
    if n_sentences == 0 {
        return Err(Error::Config("corpus needs at least one sentence".into()));
    }
    let lang = suite.language(code)?;
    let seed = mix(mix_str(lang.spec.seed, code), 0x6d6c_6d63); // "mlmc" stream
    let mut rng = Rng::new(seed);
    let mut sentences = Vec::with_capacity(n_sentences);
    // +2 leaves room for [CLS]/[SEP] at batch time.
    let budget = max_len.saturating_sub(2);
    for _ in 0..n_sentences {
        let mut found = None;
        for _ in 0..100 {
            let words = sample_mlm_sentence(&mut rng);
            if words.len() <= budget {
                found = Some(words);
                break;
            }
        }
        let words =
            found.ok_or_else(|| Error::Generation(format!(
                "no template sentence fits max_len {max_len} after 100 attempts"
            )))?;
        sentences.push(suite.render(code, &words)?);
    }
    let (train_idx, heldout_idx) = split_indices(n_sentences, heldout_fraction, seed)?;
    Ok(Corpus { language: code.to_string(), sentences, train_idx, heldout_idx })
}

// ── Labeled tasks ────────────────────────────────────────────────────────

/// BIO tag ids over three entity classes.
pub mod tags {
    pub const O: u8 = 0;
    pub const B_PER: u8 = 1;
    pub const I_PER: u8 = 2;
    pub const B_LOC: u8 = 3;
    pub const I_LOC: u8 = 4;
    pub const B_ORG: u8 = 5;
    pub const I_ORG: u8 = 6;
    pub const COUNT: usize = 7;

    pub fn begin(class: u8) -> u8 {
        1 + 2 * class
    }

    pub fn inside(class: u8) -> u8 {
        2 + 2 * class
    }
}

#[derive(Debug, Clone)]
pub struct TokenClsExample {
    pub language: String,
    pub tokens: Vec<u32>,
    pub tags: Vec<u8>,
    /// Latent template id; a rule-based oracle recovers the gold tags from it.
    pub template: usize,
}

pub const PAIR_ENTAIL: u8 = 0;
pub const PAIR_NEUTRAL: u8 = 1;
pub const PAIR_CONTRADICT: u8 = 2;
pub const PAIR_CLASSES: usize = 3;

#[derive(Debug, Clone)]
pub struct PairClsExample {
    pub language: String,
    pub premise: Vec<u32>,
    pub hypothesis: Vec<u32>,
    pub label: u8,
    pub template: usize,
}

struct LatentTokenCls {
    words: Vec<&'static str>,
    tags: Vec<u8>,
    template: usize,
}

fn push_entity(words: &mut Vec<&'static str>, tags: &mut Vec<u8>, e: &Entity) {
    for (i, w) in e.words.iter().enumerate() {
        words.push(w);
        tags.push(if i == 0 { tags::begin(e.class) } else { tags::inside(e.class) });
    }
}

fn push_plain(words: &mut Vec<&'static str>, tags: &mut Vec<u8>, w: &'static str) {
    words.push(w);
    tags.push(tags::O);
}

fn sample_token_cls_latent(rng: &mut Rng) -> LatentTokenCls {
    let template = rng.range(6);
    let mut words = Vec::new();
    let mut tags = Vec::new();
    match template {
        0 => {
            push_entity(&mut words, &mut tags, &sample_per(rng));
            push_plain(&mut words, &mut tags, "visits");
            push_entity(&mut words, &mut tags, &sample_loc(rng));
        }
        1 => {
            push_plain(&mut words, &mut tags, pick(rng, &DETS));
            push_plain(&mut words, &mut tags, pick(rng, &NOUNS));
            push_plain(&mut words, &mut tags, "from");
            push_entity(&mut words, &mut tags, &sample_org(rng));
            push_plain(&mut words, &mut tags, pick(rng, &VERBS));
            push_entity(&mut words, &mut tags, &sample_per(rng));
        }
        2 => {
            push_entity(&mut words, &mut tags, &sample_per(rng));
            push_plain(&mut words, &mut tags, "and");
            push_entity(&mut words, &mut tags, &sample_per(rng));
            push_plain(&mut words, &mut tags, "travels");
            push_plain(&mut words, &mut tags, "to");
            push_entity(&mut words, &mut tags, &sample_loc(rng));
        }
        3 => {
            push_entity(&mut words, &mut tags, &sample_org(rng));
            push_plain(&mut words, &mut tags, pick(rng, &COPULA));
            push_plain(&mut words, &mut tags, "in");
            push_entity(&mut words, &mut tags, &sample_loc(rng));
        }
        4 => {
            push_entity(&mut words, &mut tags, &sample_per(rng));
            push_plain(&mut words, &mut tags, pick(rng, &VERBS));
            push_plain(&mut words, &mut tags, pick(rng, &DETS));
            push_plain(&mut words, &mut tags, pick(rng, &NOUNS));
            push_plain(&mut words, &mut tags, "near");
            push_entity(&mut words, &mut tags, &sample_loc(rng));
        }
        _ => {
            push_plain(&mut words, &mut tags, pick(rng, &DETS));
            push_plain(&mut words, &mut tags, pick(rng, &NOUNS));
            push_plain(&mut words, &mut tags, "from");
            push_entity(&mut words, &mut tags, &sample_loc(rng));
            push_plain(&mut words, &mut tags, pick(rng, &VERBS));
            push_entity(&mut words, &mut tags, &sample_per(rng));
            push_plain(&mut words, &mut tags, "with");
            push_entity(&mut words, &mut tags, &sample_org(rng));
        }
    }
    LatentTokenCls { words, tags, template }
}

/// Token-classification examples for `code`: latent example `i` is identical
/// across languages for a fixed seed (parallel task data).
pub fn gen_token_cls(
    suite: &LanguageSuite,
    code: &str,
    n: usize,
    seed: u64,
) -> Result<Vec<TokenClsExample>> {
    if n == 0 {
        return Err(Error::Config("need at least one example".into()));
    }
    suite.language(code)?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = Rng::new(mix(mix(seed, 0x746f_6b63), i as u64)); // "tokc" stream
        let latent = sample_token_cls_latent(&mut rng);
        out.push(TokenClsExample {
            language: code.to_string(),
            tokens: suite.render(code, &latent.words)?,
            tags: latent.tags,
            template: latent.template,
        });
    }
    Ok(out)
}

struct LatentPair {
    premise: Vec<&'static str>,
    hypothesis: Vec<&'static str>,
    label: u8,
    template: usize,
}

fn sample_pair_latent(rng: &mut Rng) -> LatentPair {
    let template = rng.range(12);
    let (premise, hypothesis, label): (Vec<&'static str>, Vec<&'static str>, u8) = match template {
        // ── entailment ──
        0 => {
            // travel-to entails visit
            let per = sample_per(rng).words;
            let loc = sample_loc(rng).words;
            let mut p = per.clone();
            p.push("travels");
            p.push("to");
            p.extend(loc.iter().copied());
            let mut h = per;
            h.push("visits");
            h.extend(loc);
            (p, h, PAIR_ENTAIL)
        }
        1 => {
            // dropping a conjunct
            let per = sample_per(rng).words;
            let a1 = pick(rng, &ADJS);
            let mut a2 = pick(rng, &ADJS);
            while a2 == a1 {
                a2 = pick(rng, &ADJS);
            }
            let mut p = per.clone();
            p.extend(["is", a1, "and", a2]);
            let mut h = per;
            h.extend(["is", a1]);
            (p, h, PAIR_ENTAIL)
        }
        2 => {
            // "every" entails "the"
            let noun = pick(rng, &NOUNS);
            let per = sample_per(rng).words;
            let verb = pick(rng, &VERBS);
            let mut p = vec!["every", noun, verb];
            p.extend(per.iter().copied());
            let mut h = vec!["the", noun, verb];
            h.extend(per);
            (p, h, PAIR_ENTAIL)
        }
        3 => {
            // identity
            let per = sample_per(rng).words;
            let adj = pick(rng, &ADJS);
            let mut p = per;
            p.extend(["is", adj]);
            (p.clone(), p, PAIR_ENTAIL)
        }
        // ── contradiction ──
        4 => {
            // likes vs hates
            let per = sample_per(rng).words;
            let noun = pick(rng, &NOUNS);
            let mut p = per.clone();
            p.extend(["likes", "the", noun]);
            let mut h = per;
            h.extend(["hates", "the", noun]);
            (p, h, PAIR_CONTRADICT)
        }
        5 => {
            // negation insertion
            let per = sample_per(rng).words;
            let adj = pick(rng, &ADJS);
            let mut p = per.clone();
            p.extend(["is", adj]);
            let mut h = per;
            h.extend(["is", "not", adj]);
            (p, h, PAIR_CONTRADICT)
        }
        6 => {
            // different destination
            let per = sample_per(rng).words;
            let l1 = pick(rng, &LOC_NAMES);
            let mut l2 = pick(rng, &LOC_NAMES);
            while l2 == l1 {
                l2 = pick(rng, &LOC_NAMES);
            }
            let mut p = per.clone();
            p.extend(["travels", "to", l1]);
            let mut h = per;
            h.extend(["travels", "to", l2]);
            (p, h, PAIR_CONTRADICT)
        }
        7 => {
            // "no" vs "every"
            let noun = pick(rng, &NOUNS);
            let per = sample_per(rng).words;
            let verb = pick(rng, &VERBS);
            let mut p = vec!["no", noun, verb];
            p.extend(per.iter().copied());
            let mut h = vec!["every", noun, verb];
            h.extend(per);
            (p, h, PAIR_CONTRADICT)
        }
        // ── neutral ──
        8 => {
            // different person, same claim
            let n1 = pick(rng, &PER_NAMES);
            let mut n2 = pick(rng, &PER_NAMES);
            while n2 == n1 {
                n2 = pick(rng, &PER_NAMES);
            }
            let noun = pick(rng, &NOUNS);
            (
                vec![n1, "likes", "the", noun],
                vec![n2, "likes", "the", noun],
                PAIR_NEUTRAL,
            )
        }
        9 => {
            // different adjective
            let per = sample_per(rng).words;
            let a1 = pick(rng, &ADJS);
            let mut a2 = pick(rng, &ADJS);
            while a2 == a1 {
                a2 = pick(rng, &ADJS);
            }
            let mut p = per.clone();
            p.extend(["is", a1]);
            let mut h = per;
            h.extend(["is", a2]);
            (p, h, PAIR_NEUTRAL)
        }
        10 => {
            // unrelated facts
            let per = sample_per(rng).words;
            let loc1 = sample_loc(rng).words;
            let org = sample_org(rng).words;
            let loc2 = sample_loc(rng).words;
            let mut p = per;
            p.push("visits");
            p.extend(loc1);
            let mut h = org;
            h.push("is");
            h.push("in");
            h.extend(loc2);
            (p, h, PAIR_NEUTRAL)
        }
        _ => {
            // seeing does not imply liking
            let per = sample_per(rng).words;
            let noun = pick(rng, &NOUNS);
            let mut p = per.clone();
            p.extend(["sees", "the", noun]);
            let mut h = per;
            h.extend(["likes", "the", noun]);
            (p, h, PAIR_NEUTRAL)
        }
    };
    LatentPair { premise, hypothesis, label, template }
}

/// Sentence-pair examples for `code`; latent example `i` is shared across
/// languages for a fixed seed.
pub fn gen_pair_cls(
    suite: &LanguageSuite,
    code: &str,
    n: usize,
    seed: u64,
) -> Result<Vec<PairClsExample>> {
    if n == 0 {
        return Err(Error::Config("need at least one example".into()));
    }
    suite.language(code)?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = Rng::new(mix(mix(seed, 0x7061_6972), i as u64)); // "pair" stream
        let latent = sample_pair_latent(&mut rng);
        out.push(PairClsExample {
            language: code.to_string(),
            premise: suite.render(code, &latent.premise)?,
            hypothesis: suite.render(code, &latent.hypothesis)?,
            label: latent.label,
            template: latent.template,
        });
    }
    Ok(out)
}

/// Gold label implied by a pair template — the rule the generator used.
pub fn pair_template_label(template: usize) -> u8 {
    match template {
        0..=3 => PAIR_ENTAIL,
        4..=7 => PAIR_CONTRADICT,
        _ => PAIR_NEUTRAL,
    }
}
