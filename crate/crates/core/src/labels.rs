//! Label normalization, the weighted vocabulary, multi-hot targets and
//! question-answer sample generation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_COUNT: u32 = 30;
/// Allowed target weights.
pub const WEIGHT_SET: [f64; 5] = [0.0, 0.1, 0.4, 0.5, 1.0];

const DEFAULT_CATEGORIES: &str = include_str!("../data/categories.json");
const DEFAULT_TEMPLATES: &str = include_str!("../data/templates.json");
pub const LABEL_PLACEHOLDER: &str = "{label}";

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("label '{0}' is empty after normalization")]
    EmptyLabel(String),
    #[error("count {0} outside 1..=30")]
    CountRange(u32),
    #[error("no {0} templates supplied")]
    NoTemplates(Task),
    #[error("invalid category table: {0}")]
    Categories(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WordCategory {
    #[serde(rename = "Core Action")]
    CoreAction,
    #[serde(rename = "Spatial Adjective Variation")]
    SpatialAdjectiveVariation,
    #[serde(rename = "Noun Variation")]
    NounVariation,
    #[serde(rename = "Body Part Noun")]
    BodyPartNoun,
    #[serde(rename = "Warmups")]
    Warmups,
    #[serde(rename = "Temporal Adverb Variation")]
    TemporalAdverbVariation,
    #[serde(rename = "Equipment Noun")]
    EquipmentNoun,
    #[serde(rename = "Combination Conjunction")]
    CombinationConjunction,
    #[serde(rename = "Uncategorized")]
    Uncategorized,
    #[serde(rename = "Integers")]
    Integers,
}

impl WordCategory {
    pub fn name(self) -> &'static str {
        match self {
            WordCategory::CoreAction => "Core Action",
            WordCategory::SpatialAdjectiveVariation => "Spatial Adjective Variation",
            WordCategory::NounVariation => "Noun Variation",
            WordCategory::BodyPartNoun => "Body Part Noun",
            WordCategory::Warmups => "Warmups",
            WordCategory::TemporalAdverbVariation => "Temporal Adverb Variation",
            WordCategory::EquipmentNoun => "Equipment Noun",
            WordCategory::CombinationConjunction => "Combination Conjunction",
            WordCategory::Uncategorized => "Uncategorized",
            WordCategory::Integers => "Integers",
        }
    }
}

impl fmt::Display for WordCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategoryEntry {
    pub weight: f64,
    pub words: Vec<String>,
}

/// Word to category assignment plus per-category weights.
#[derive(Debug, Clone)]
pub struct CategoryTable {
    weights: BTreeMap<WordCategory, f64>,
    word_category: HashMap<String, WordCategory>,
}

fn bundled_table() -> &'static CategoryTable {
    static TABLE: OnceLock<CategoryTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        CategoryTable::from_json(DEFAULT_CATEGORIES).expect("bundled category table is valid")
    })
}

impl Default for CategoryTable {
    fn default() -> Self {
        bundled_table().clone()
    }
}

impl CategoryTable {
    pub fn from_json(json: &str) -> Result<Self, LabelError> {
        let raw: BTreeMap<WordCategory, CategoryEntry> = serde_json::from_str(json)?;
        let mut weights = BTreeMap::new();
        let mut word_category = HashMap::new();
        for (cat, entry) in raw {
            if !WEIGHT_SET.contains(&entry.weight) {
                return Err(LabelError::Categories(format!(
                    "weight {} of '{cat}' is not one of {WEIGHT_SET:?}",
                    entry.weight
                )));
            }
            weights.insert(cat, entry.weight);
            for word in entry.words {
                if let Some(prev) = word_category.insert(word.clone(), cat) {
                    if prev != cat {
                        return Err(LabelError::Categories(format!(
                            "'{word}' listed under both '{prev}' and '{cat}'"
                        )));
                    }
                }
            }
        }
        weights.insert(WordCategory::Integers, 1.0);
        weights.entry(WordCategory::Uncategorized).or_insert(0.0);
        Ok(CategoryTable { weights, word_category })
    }

    pub fn load(path: &Path) -> Result<Self, LabelError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Overrides the weight given to uncategorized words (0.0 or 0.1 in practice).
    pub fn with_uncategorized_weight(mut self, weight: f64) -> Self {
        self.weights.insert(WordCategory::Uncategorized, weight);
        self
    }

    pub fn category_weight(&self, cat: WordCategory) -> f64 {
        self.weights.get(&cat).copied().unwrap_or(0.0)
    }

    /// Category of a word. Integer strings 1..30 are Integers; plurals of body
    /// part nouns ("arms") count as body part nouns.
    pub fn category_of(&self, word: &str) -> WordCategory {
        if parse_count_class(word).is_some() {
            return WordCategory::Integers;
        }
        if let Some(&cat) = self.word_category.get(word) {
            return cat;
        }
        if self.is_body_part_plural(word) {
            return WordCategory::BodyPartNoun;
        }
        WordCategory::Uncategorized
    }

    pub fn weight(&self, word: &str) -> f64 {
        self.category_weight(self.category_of(word))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.word_category.contains_key(word)
    }

    fn is_body_part_plural(&self, word: &str) -> bool {
        word.strip_suffix('s')
            .is_some_and(|stem| self.word_category.get(stem) == Some(&WordCategory::BodyPartNoun))
    }

    /// Serializable form mirroring the bundled data file.
    pub fn to_entries(&self) -> BTreeMap<WordCategory, CategoryEntry> {
        let mut out: BTreeMap<WordCategory, CategoryEntry> = BTreeMap::new();
        for (&cat, &weight) in &self.weights {
            out.insert(cat, CategoryEntry { weight, words: Vec::new() });
        }
        let mut words: Vec<(&String, &WordCategory)> = self.word_category.iter().collect();
        words.sort();
        for (w, cat) in words {
            out.get_mut(cat).expect("category present").words.push(w.clone());
        }
        out
    }
}

/// Category weight of a word under the bundled table.
pub fn word_weight(word: &str) -> f64 {
    bundled_table().weight(word)
}

/// A normalized exercise label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label {
    pub words: Vec<String>,
}

impl Label {
    pub fn text(&self) -> String {
        self.words.join(" ")
    }

    /// Distinct words in first-occurrence order.
    pub fn unique_words(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        self.words.iter().filter(|w| seen.insert(w.as_str())).map(|w| w.as_str()).collect()
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text())
    }
}

fn expand_abbreviation(word: &str) -> Option<&'static [&'static str]> {
    match word {
        "l" => Some(&["left"]),
        "r" => Some(&["right"]),
        "rdl" => Some(&["romanian", "deadlift"]),
        _ => None,
    }
}

fn singularize(word: &str, table: &CategoryTable) -> String {
    if word.len() <= 3 || table.contains(word) || table.is_body_part_plural(word) {
        return word.to_string();
    }
    if let Some(stem) = word.strip_suffix("ies") {
        return format!("{stem}y");
    }
    for suffix in ["sses", "ches", "shes", "xes", "zzes"] {
        if word.ends_with(suffix) {
            return word[..word.len() - 2].to_string();
        }
    }
    if word.ends_with("ss") || word.ends_with("us") || word.ends_with("is") {
        return word.to_string();
    }
    match word.strip_suffix('s') {
        Some(stem) => stem.to_string(),
        None => word.to_string(),
    }
}

/// Normalizes a raw label with the bundled category table.
pub fn normalize_label(raw: &str) -> Result<Label, LabelError> {
    normalize_label_with(raw, bundled_table())
}

/// Lowercases, fuses hyphenated words, strips special characters other than
/// `+` and `&`, singularizes plurals (anatomical plurals excepted) and expands
/// the fixed abbreviation table.
pub fn normalize_label_with(raw: &str, table: &CategoryTable) -> Result<Label, LabelError> {
    let lower = raw.to_lowercase();
    let mut tokens: Vec<String> = Vec::new();
    for chunk in lower.split_whitespace() {
        let mut chunk = chunk.to_string();
        // "1-leg" / "1-arm" style number abbreviations
        if let Some(rest) = chunk.strip_prefix("1-") {
            if rest.starts_with(|c: char| c.is_ascii_alphabetic()) {
                tokens.push("single".into());
                chunk = rest.to_string();
            }
        }
        let mut cleaned = String::with_capacity(chunk.len());
        for ch in chunk.chars() {
            match ch {
                'a'..='z' | '0'..='9' => cleaned.push(ch),
                '+' | '&' => {
                    cleaned.push(' ');
                    cleaned.push(ch);
                    cleaned.push(' ');
                }
                '-' | '\'' | '\u{2019}' => {}
                _ => cleaned.push(' '),
            }
        }
        tokens.extend(cleaned.split_whitespace().map(str::to_string));
    }

    let mut words = Vec::with_capacity(tokens.len());
    for token in tokens {
        let singular = singularize(&token, table);
        match expand_abbreviation(&singular) {
            Some(expansion) => words.extend(expansion.iter().map(|s| s.to_string())),
            None => words.push(singular),
        }
    }
    if words.is_empty() {
        return Err(LabelError::EmptyLabel(raw.to_string()));
    }
    Ok(Label { words })
}

pub fn parse_count_class(word: &str) -> Option<u32> {
    if word.starts_with('0') {
        return None;
    }
    word.parse::<u32>().ok().filter(|n| (1..=MAX_COUNT).contains(n))
}

/// Ordered prediction classes with their weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    classes: Vec<String>,
    weights: Vec<f64>,
    categories: Vec<WordCategory>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyFile {
    classes: Vec<String>,
    weights: Vec<f64>,
    categories: BTreeMap<String, WordCategory>,
}

impl Vocabulary {
    fn from_parts(classes: Vec<String>, weights: Vec<f64>, categories: Vec<WordCategory>) -> Self {
        let index = classes.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect();
        Vocabulary { classes, weights, categories, index }
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn class(&self, idx: usize) -> &str {
        &self.classes[idx]
    }

    pub fn weight_of(&self, idx: usize) -> f64 {
        self.weights[idx]
    }

    pub fn category_of(&self, idx: usize) -> WordCategory {
        self.categories[idx]
    }

    pub fn index_of(&self, class: &str) -> Option<usize> {
        self.index.get(class).copied()
    }

    pub fn count_index(&self, count: u32) -> Option<usize> {
        self.index_of(&count.to_string())
    }

    /// The integer value of a count class, if `idx` is one.
    pub fn count_value(&self, idx: usize) -> Option<u32> {
        parse_count_class(&self.classes[idx])
    }

    /// Indices of the 30 integer classes in ascending integer order.
    pub fn count_indices(&self) -> Vec<usize> {
        (1..=MAX_COUNT).filter_map(|n| self.count_index(n)).collect()
    }

    pub fn to_json(&self) -> Result<String, LabelError> {
        let file = VocabularyFile {
            classes: self.classes.clone(),
            weights: self.weights.clone(),
            categories: self.classes.iter().cloned().zip(self.categories.iter().copied()).collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(json: &str) -> Result<Self, LabelError> {
        let file: VocabularyFile = serde_json::from_str(json)?;
        if file.classes.len() != file.weights.len() {
            return Err(LabelError::Categories("classes and weights differ in length".into()));
        }
        let categories = file
            .classes
            .iter()
            .map(|c| file.categories.get(c).copied().unwrap_or(WordCategory::Uncategorized))
            .collect();
        let vocab = Vocabulary::from_parts(file.classes, file.weights, categories);
        if vocab.index.len() != vocab.classes.len() {
            return Err(LabelError::Categories("duplicate classes".into()));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<(), LabelError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, LabelError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Builds the class list: sorted unique label words followed by "1".."30".
pub fn build_vocabulary<'a>(
    labels: impl IntoIterator<Item = &'a Label>,
    table: &CategoryTable,
) -> Vocabulary {
    let words: BTreeSet<&str> = labels
        .into_iter()
        .flat_map(|l| l.words.iter().map(String::as_str))
        .filter(|w| parse_count_class(w).is_none())
        .collect();
    let mut classes: Vec<String> = words.into_iter().map(str::to_string).collect();
    classes.extend((1..=MAX_COUNT).map(|n| n.to_string()));
    let categories: Vec<WordCategory> = classes.iter().map(|c| table.category_of(c)).collect();
    let weights = categories.iter().map(|&c| table.category_weight(c)).collect();
    Vocabulary::from_parts(classes, weights, categories)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Detection,
    Counting,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Detection => "detection",
            Task::Counting => "counting",
        })
    }
}

/// Weighted multi-hot vector over the vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TargetVector {
    pub values: Vec<f64>,
}

impl TargetVector {
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn is_degenerate(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn support(&self) -> Vec<usize> {
        self.values.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(i, _)| i).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub enum TargetSource<'a> {
    Label(&'a Label),
    Count(u32),
}

/// Detection: the category weight at each label word present in the
/// vocabulary (duplicates once). Counting: 1.0 at the integer class.
pub fn encode_target(source: TargetSource<'_>, vocab: &Vocabulary) -> Result<TargetVector, LabelError> {
    let mut values = vec![0.0; vocab.len()];
    match source {
        TargetSource::Count(n) => {
            if !(1..=MAX_COUNT).contains(&n) {
                return Err(LabelError::CountRange(n));
            }
            let idx = vocab.count_index(n).ok_or(LabelError::CountRange(n))?;
            values[idx] = 1.0;
        }
        TargetSource::Label(label) => {
            for word in label.unique_words() {
                match vocab.index_of(word) {
                    Some(idx) => values[idx] = vocab.weight_of(idx),
                    None => log::warn!("word '{word}' not in vocabulary; skipped"),
                }
            }
            if values.iter().all(|&v| v == 0.0) {
                log::warn!("label '{label}' encodes to an all-zero target");
            }
        }
    }
    Ok(TargetVector { values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub counting: Vec<String>,
    pub detection: Vec<String>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_TEMPLATES).expect("bundled templates are valid")
    }
}

impl TemplateSet {
    pub fn load(path: &Path) -> Result<Self, LabelError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn for_task(&self, task: Task) -> &[String] {
        match task {
            Task::Counting => &self.counting,
            Task::Detection => &self.detection,
        }
    }

    /// Every template with the label placeholder removed; used to seed the lexicon.
    pub fn all_text(&self) -> impl Iterator<Item = String> + '_ {
        self.counting.iter().chain(&self.detection).map(|t| t.replace(LABEL_PLACEHOLDER, " "))
    }
}

/// Fills a template's `{label}` placeholder.
pub fn render_question(template: &str, label: &Label) -> String {
    template.replace(LABEL_PLACEHOLDER, &label.text())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum GroundTruth {
    Label(Label),
    Count(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QASample {
    pub image_ref: String,
    pub question: String,
    pub task: Task,
    pub target: TargetVector,
    pub ground_truth: GroundTruth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroTargetPolicy {
    #[default]
    Keep,
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QaOptions {
    /// Draw this many templates per task (seeded) instead of using all of them.
    pub per_task: Option<usize>,
    pub zero_targets: ZeroTargetPolicy,
}

/// One sample per template per task (or `per_task` seeded draws).
pub fn make_qa_samples(
    image_ref: &str,
    label: &Label,
    count: u32,
    templates: &TemplateSet,
    vocab: &Vocabulary,
    seed: u64,
    opts: QaOptions,
) -> Result<Vec<QASample>, LabelError> {
    for task in [Task::Counting, Task::Detection] {
        if templates.for_task(task).is_empty() {
            return Err(LabelError::NoTemplates(task));
        }
    }
    let count_target = encode_target(TargetSource::Count(count), vocab)?;
    let label_target = encode_target(TargetSource::Label(label), vocab)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut samples = Vec::new();
    for task in [Task::Detection, Task::Counting] {
        let mut chosen: Vec<&String> = templates.for_task(task).iter().collect();
        if let Some(k) = opts.per_task {
            chosen.shuffle(&mut rng);
            chosen.truncate(k.max(1));
        }
        let (target, ground_truth) = match task {
            Task::Detection => {
                if label_target.is_degenerate() && opts.zero_targets == ZeroTargetPolicy::Drop {
                    continue;
                }
                (&label_target, GroundTruth::Label(label.clone()))
            }
            Task::Counting => (&count_target, GroundTruth::Count(count)),
        };
        for template in chosen {
            samples.push(QASample {
                image_ref: image_ref.to_string(),
                question: render_question(template, label),
                task,
                target: target.clone(),
                ground_truth: ground_truth.clone(),
            });
        }
    }
    Ok(samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split '{other}'")),
        }
    }
}

/// One video in a dataset manifest (JSONL, one record per line).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub skeleton_path: String,
    pub label_raw: String,
    pub label_norm: String,
    pub count: u32,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<u32>,
}

impl ManifestRecord {
    pub fn label(&self) -> Label {
        Label { words: self.label_norm.split_whitespace().map(str::to_string).collect() }
    }
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<(), LabelError> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>, LabelError> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(LabelError::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(label: &str) -> Vec<String> {
        normalize_label(label).unwrap().words
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(words("Push-ups"), ["pushup"]);
        assert_eq!(words("squats"), ["squat"]);
        assert_eq!(words("1-leg RDL"), ["single", "leg", "romanian", "deadlift"]);
        assert_eq!(words("L lunge"), ["left", "lunge"]);
        assert_eq!(words("squat"), ["squat"]);
        assert_eq!(words("Child's pose"), ["child", "pose"]);
        assert_eq!(words("lunge+press"), ["lunge", "+", "press"]);
        assert_eq!(words("Clean & Press"), ["clean", "&", "press"]);
        assert_eq!(words("w raise"), ["w", "raise"]);
        assert_eq!(words("x plank"), ["x", "plank"]);
        assert_eq!(words("crunches"), ["crunch"]);
        assert_eq!(words("flies"), ["fly"]);
        assert_eq!(words("presses"), ["press"]);
    }

    #[test]
    fn anatomical_plurals_are_kept() {
        assert_eq!(words("arms circles"), ["arms", "circle"]);
        assert_eq!(word_weight("arms"), 1.0);
    }

    #[test]
    fn empty_label_is_an_error() {
        assert!(matches!(normalize_label("  -- ' "), Err(LabelError::EmptyLabel(_))));
        assert!(normalize_label("").is_err());
    }

    #[test]
    fn category_weights() {
        assert_eq!(word_weight("squat"), 1.0);
        assert_eq!(word_weight("slow"), 0.4);
        assert_eq!(word_weight("dumbbell"), 0.1);
        assert_eq!(word_weight("and"), 0.5);
        assert_eq!(word_weight("with"), 0.5);
        assert_eq!(word_weight("wacky"), 0.0);
        assert_eq!(word_weight("neverseen"), 0.0);
        assert_eq!(word_weight("warmup7"), 1.0);
        assert_eq!(word_weight("17"), 1.0);
        let table = CategoryTable::default().with_uncategorized_weight(0.1);
        assert_eq!(table.weight("wacky"), 0.1);
    }

    #[test]
    fn table_two_examples_are_categorized() {
        let table = CategoryTable::default();
        use WordCategory::*;
        let cases = [
            (CoreAction, &["curl", "squat", "press", "hinge"][..]),
            (SpatialAdjectiveVariation, &["alternating", "wide", "supine"]),
            (NounVariation, &["burpee", "clamshell", "skater", "diamond"]),
            (BodyPartNoun, &["bicep", "hamstring", "shoulder"]),
            (TemporalAdverbVariation, &["slow", "hold", "eccentric", "power"]),
            (EquipmentNoun, &["dumbbell", "chair", "wall", "heavy"]),
            (CombinationConjunction, &["and", "plus", "with"]),
            (Uncategorized, &["wacky", "truffle", "vogue"]),
        ];
        for (cat, ws) in cases {
            for w in ws {
                assert_eq!(table.category_of(w), cat, "{w}");
            }
        }
    }

    #[test]
    fn vocabulary_small() {
        let table = CategoryTable::default();
        let labels = [normalize_label("squat").unwrap(), normalize_label("slow squat").unwrap()];
        let vocab = build_vocabulary(&labels, &table);
        assert_eq!(vocab.len(), 32);
        assert_eq!(&vocab.classes()[..2], ["slow", "squat"]);
        assert_eq!(vocab.count_index(1), Some(2));
        assert_eq!(vocab.count_value(31), Some(30));
        assert_eq!(vocab.count_value(0), None);
        let empty = build_vocabulary(&[], &table);
        assert_eq!(empty.len(), 30);
    }

    #[test]
    fn vocabulary_json_round_trip() {
        let labels = [normalize_label("lunge and press").unwrap()];
        let vocab = build_vocabulary(&labels, &CategoryTable::default());
        let back = Vocabulary::from_json(&vocab.to_json().unwrap()).unwrap();
        assert_eq!(back, vocab);
    }

    #[test]
    fn targets() {
        let table = CategoryTable::default();
        let slow_squat = normalize_label("slow squat").unwrap();
        let vocab = build_vocabulary([&slow_squat], &table);
        let t = encode_target(TargetSource::Label(&slow_squat), &vocab).unwrap();
        assert_eq!(t.values[vocab.index_of("slow").unwrap()], 0.4);
        assert_eq!(t.values[vocab.index_of("squat").unwrap()], 1.0);
        assert_eq!(t.support().len(), 2);

        let five = encode_target(TargetSource::Count(5), &vocab).unwrap();
        assert_eq!(five.support(), vec![vocab.index_of("5").unwrap()]);
        assert_eq!(five.total(), 1.0);
        assert!(matches!(
            encode_target(TargetSource::Count(31), &vocab),
            Err(LabelError::CountRange(31))
        ));
        assert!(encode_target(TargetSource::Count(0), &vocab).is_err());

        let wacky = Label { words: vec!["wacky".into()] };
        let vocab = build_vocabulary([&wacky], &table);
        assert!(encode_target(TargetSource::Label(&wacky), &vocab).unwrap().is_degenerate());
    }

    #[test]
    fn duplicate_words_encode_once() {
        let label = Label { words: vec!["squat".into(), "squat".into()] };
        let vocab = build_vocabulary([&label], &CategoryTable::default());
        let t = encode_target(TargetSource::Label(&label), &vocab).unwrap();
        assert_eq!(t.total(), 1.0);
    }

    #[test]
    fn qa_sample_counts() {
        let label = normalize_label("squat").unwrap();
        let vocab = build_vocabulary([&label], &CategoryTable::default());
        let templates = TemplateSet::default();
        assert_eq!((templates.counting.len(), templates.detection.len()), (6, 6));
        let samples =
            make_qa_samples("v0", &label, 5, &templates, &vocab, 1, QaOptions::default()).unwrap();
        assert_eq!(samples.len(), 12);
        assert_eq!(samples.iter().filter(|s| s.task == Task::Counting).count(), 6);
        for s in &samples {
            if s.task == Task::Counting {
                assert_eq!(s.target.support(), vec![vocab.count_index(5).unwrap()]);
                assert!(s.question.contains("squat"));
            }
        }
        let opts = QaOptions { per_task: Some(1), ..Default::default() };
        let few = make_qa_samples("v0", &label, 5, &templates, &vocab, 1, opts).unwrap();
        assert_eq!(few.len(), 2);
        let again = make_qa_samples("v0", &label, 5, &templates, &vocab, 1, opts).unwrap();
        assert_eq!(few, again);

        let none = TemplateSet { counting: vec![], detection: templates.detection.clone() };
        assert!(matches!(
            make_qa_samples("v0", &label, 5, &none, &vocab, 1, QaOptions::default()),
            Err(LabelError::NoTemplates(Task::Counting))
        ));
    }

    #[test]
    fn zero_targets_can_be_dropped() {
        let label = Label { words: vec!["wacky".into()] };
        let vocab = build_vocabulary([&label], &CategoryTable::default());
        let opts = QaOptions { per_task: None, zero_targets: ZeroTargetPolicy::Drop };
        let samples = make_qa_samples("v", &label, 3, &TemplateSet::default(), &vocab, 0, opts).unwrap();
        assert!(samples.iter().all(|s| s.task == Task::Counting));
    }

    #[test]
    fn bundled_table_has_no_conflicts() {
        let table = CategoryTable::default();
        let entries = table.to_entries();
        let json = serde_json::to_string(&entries).unwrap();
        let reparsed = CategoryTable::from_json(&json).unwrap();
        assert_eq!(reparsed.weight("squat"), 1.0);
        let dup = r#"{"Core Action": {"weight": 1.0, "words": ["a"]},
                      "Noun Variation": {"weight": 1.0, "words": ["a"]}}"#;
        assert!(CategoryTable::from_json(dup).is_err());
        let bad = r#"{"Core Action": {"weight": 0.3, "words": ["a"]}}"#;
        assert!(CategoryTable::from_json(bad).is_err());
    }
}
