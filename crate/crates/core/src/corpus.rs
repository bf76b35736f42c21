//! Text ingestion: token normalization, a small subject-verb-object
//! extractor, triplet JSONL files, and min-count vocabulary filtering.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sg::Vocabulary;

/// Articles, pronouns and copulas.
pub const DEFAULT_STOPLIST: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "i", "me", "my", "you", "your", "he",
    "him", "his", "she", "her", "it", "its", "we", "us", "our", "they", "them", "their", "is",
    "are", "was", "were", "be", "been", "being", "am",
];

/// Verbs and prepositions recognised as predicate material. Words ending in
/// `-ing`, and `-s` forms of lexicon entries, are recognised as well.
pub const DEFAULT_PREDICATE_LEXICON: &[&str] = &[
    "on", "in", "of", "at", "with", "near", "under", "above", "below", "behind", "beside",
    "by", "over", "inside", "outside", "next", "to", "top", "front", "across", "along",
    "against", "around", "from", "into", "onto", "through", "beneath", "between", "has",
    "have", "had", "hold", "held", "wear", "wore", "worn", "ride", "rode", "sit", "sat",
    "stand", "stood", "walk", "eat", "ate", "carry", "look", "watch", "play", "cover",
    "covered", "park", "parked", "hang", "hung", "contain", "lay", "lie", "use", "drive",
    "fly", "pull", "push", "throw", "catch", "kick", "hit", "grow", "cut", "read", "see",
    "saw", "touch", "lean", "leaning", "made", "attached", "mounted", "painted", "belong",
    "dribble", "say", "said", "dribbled",
];

pub fn default_stoplist() -> HashSet<String> {
    DEFAULT_STOPLIST.iter().map(|s| s.to_string()).collect()
}

pub fn default_lexicon() -> HashSet<String> {
    DEFAULT_PREDICATE_LEXICON
        .iter()
        .map(|s| s.to_string())
        .collect()
}

/// Word list file: one entry per line, `#` starts a comment.
pub fn load_word_list(path: &Path) -> Result<HashSet<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim().to_lowercase())
        .filter(|l| !l.is_empty())
        .collect())
}

fn clean(raw: &str) -> String {
    let mapped: String = raw
        .chars()
        .map(|c| {
            if c.is_ascii_alphabetic() {
                c.to_ascii_lowercase()
            } else {
                ' '
            }
        })
        .collect();
    mapped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Lowercase, map every non-letter to a space and collapse whitespace.
/// Returns `None` when nothing is left or every word is a stop word.
pub fn normalize_token(raw: &str, stoplist: &HashSet<String>) -> Option<String> {
    let s = clean(raw);
    if s.is_empty() || s.split(' ').all(|w| stoplist.contains(w)) {
        None
    } else {
        Some(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub subject: String,
    pub predicate: String,
    pub object: String,
    #[serde(default = "one")]
    pub weight: u64,
}

fn one() -> u64 {
    1
}

impl Triplet {
    pub fn new(subject: &str, predicate: &str, object: &str) -> Self {
        Triplet {
            subject: subject.to_string(),
            predicate: predicate.to_string(),
            object: object.to_string(),
            weight: 1,
        }
    }

    pub fn with_weight(mut self, weight: u64) -> Self {
        self.weight = weight;
        self
    }
}

/// Rule-based SVO extractor. Stop words are dropped first; the subject is the
/// last word of the leading non-predicate run, the predicate is the following
/// run of predicate words, the object is the last word of the next
/// non-predicate run.
#[derive(Debug, Clone)]
pub struct SvoExtractor {
    stoplist: HashSet<String>,
    lexicon: HashSet<String>,
}

impl Default for SvoExtractor {
    fn default() -> Self {
        SvoExtractor::new(default_stoplist(), default_lexicon())
    }
}

const CLAUSE_BREAKS: &[char] = &['.', ',', ';', ':', '!', '?', '(', ')', '"', '\n'];

impl SvoExtractor {
    pub fn new(stoplist: HashSet<String>, lexicon: HashSet<String>) -> Self {
        SvoExtractor { stoplist, lexicon }
    }

    pub fn stoplist(&self) -> &HashSet<String> {
        &self.stoplist
    }

    pub fn is_predicate_word(&self, w: &str) -> bool {
        if self.lexicon.contains(w) {
            return true;
        }
        if w.len() >= 5 && w.ends_with("ing") {
            return true;
        }
        w.len() >= 3 && w.ends_with('s') && self.lexicon.contains(&w[..w.len() - 1])
    }

    fn clause_triplet(&self, clause: &str) -> Option<Triplet> {
        let words: Vec<String> = clause
            .split_whitespace()
            .filter_map(|t| normalize_token(t, &self.stoplist))
            .flat_map(|t| t.split(' ').map(str::to_string).collect::<Vec<_>>())
            .filter(|w| !self.stoplist.contains(w))
            .collect();

        let mut i = 0;
        let run_end = |mut i: usize, want_pred: bool| {
            while i < words.len() && self.is_predicate_word(&words[i]) == want_pred {
                i += 1;
            }
            i
        };
        let subj_end = run_end(i, false);
        if subj_end == 0 {
            return None;
        }
        let subject = &words[subj_end - 1];
        i = subj_end;
        let pred_end = run_end(i, true);
        if pred_end == i {
            return None;
        }
        let predicate = words[i..pred_end].join(" ");
        let obj_end = run_end(pred_end, false);
        if obj_end == pred_end {
            return None;
        }
        let object = &words[obj_end - 1];
        Some(Triplet::new(subject, &predicate, object))
    }

    /// At most one triplet per clause; clauses are split on punctuation and
    /// line breaks.
    pub fn extract(&self, text: &str) -> Vec<Triplet> {
        text.split(CLAUSE_BREAKS)
            .filter_map(|c| self.clause_triplet(c))
            .collect()
    }
}

/// Extract with the default predicate lexicon and the given stoplist.
pub fn extract_triplets(sentence: &str, stoplist: &HashSet<String>) -> Vec<Triplet> {
    SvoExtractor::new(stoplist.clone(), default_lexicon()).extract(sentence)
}

/// Join wrapped lines into paragraphs; blank lines separate paragraphs.
pub fn join_prose_lines(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for para in text.split("\n\n") {
        let joined = para.lines().map(str::trim).collect::<Vec<_>>().join(" ");
        out.push_str(&joined);
        out.push('\n');
    }
    out
}

type TripletKey = (String, String, String);

/// Weighted multiset of triplets, keyed by (subject, predicate, object).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TripletCorpus {
    counts: BTreeMap<TripletKey, u64>,
    pub provenance: Vec<String>,
}

impl TripletCorpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_triplets<I: IntoIterator<Item = Triplet>>(items: I) -> Self {
        let mut c = Self::new();
        for t in items {
            c.add(t);
        }
        c
    }

    pub fn add(&mut self, t: Triplet) {
        if t.weight == 0 {
            return;
        }
        *self
            .counts
            .entry((t.subject, t.predicate, t.object))
            .or_insert(0) += t.weight;
    }

    pub fn merge(&mut self, other: &TripletCorpus) {
        for ((s, p, o), &w) in &other.counts {
            *self
                .counts
                .entry((s.clone(), p.clone(), o.clone()))
                .or_insert(0) += w;
        }
        for p in &other.provenance {
            if !self.provenance.contains(p) {
                self.provenance.push(p.clone());
            }
        }
    }

    /// Distinct triplets with their accumulated weights, sorted by
    /// (subject, predicate, object).
    pub fn triplets(&self) -> impl Iterator<Item = Triplet> + '_ {
        self.counts.iter().map(|((s, p, o), &w)| Triplet {
            subject: s.clone(),
            predicate: p.clone(),
            object: o.clone(),
            weight: w,
        })
    }

    pub fn distinct_len(&self) -> usize {
        self.counts.len()
    }

    pub fn total_weight(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn weight_of(&self, subject: &str, predicate: &str, object: &str) -> u64 {
        self.counts
            .get(&(subject.to_string(), predicate.to_string(), object.to_string()))
            .copied()
            .unwrap_or(0)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for t in self.triplets() {
            out.push_str(&serde_json::to_string(&t).expect("triplet serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

/// Read a triplet JSONL file; repeated triplets accumulate weight. Fields are
/// cleaned with the token rules (no stop words are removed).
pub fn ingest_triplet_file(path: &Path) -> Result<TripletCorpus> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    let mut corpus = ingest_triplet_lines(BufReader::new(file), &name)?;
    corpus.provenance.push(name);
    Ok(corpus)
}

pub fn ingest_triplet_lines<R: BufRead>(reader: R, source_name: &str) -> Result<TripletCorpus> {
    let empty = HashSet::new();
    let mut corpus = TripletCorpus::new();
    for (i, line) in reader.lines().enumerate() {
        let err = |message: String| Error::Parse {
            source_name: source_name.to_string(),
            line: i + 1,
            message,
        };
        let line = line.map_err(|e| err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: Triplet = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        if raw.weight == 0 {
            return Err(err("weight must be >= 1".into()));
        }
        let field = |name: &str, v: &str| {
            normalize_token(v, &empty).ok_or_else(|| err(format!("{name} is empty after normalization")))
        };
        corpus.add(Triplet {
            subject: field("subject", &raw.subject)?,
            predicate: field("predicate", &raw.predicate)?,
            object: field("object", &raw.object)?,
            weight: raw.weight,
        });
    }
    Ok(corpus)
}

/// Weighted label counts: objects count both subject and object slots.
pub fn label_counts(corpus: &TripletCorpus) -> (HashMap<String, u64>, HashMap<String, u64>) {
    let mut objects: HashMap<String, u64> = HashMap::new();
    let mut predicates: HashMap<String, u64> = HashMap::new();
    for ((s, p, o), &w) in &corpus.counts {
        *objects.entry(s.clone()).or_insert(0) += w;
        *objects.entry(o.clone()).or_insert(0) += w;
        *predicates.entry(p.clone()).or_insert(0) += w;
    }
    (objects, predicates)
}

fn vocab_from_counts(counts: HashMap<String, u64>) -> Vocabulary {
    let sorted: BTreeMap<String, u64> = counts.into_iter().collect();
    let (labels, counts): (Vec<_>, Vec<_>) = sorted.into_iter().unzip();
    Vocabulary::new(labels, counts).expect("map keys are unique")
}

/// Keep triplets whose subject, object and predicate each occur at least
/// `min_count` times in the input corpus. Returned vocabularies list the
/// surviving labels (sorted) with their counts in the filtered corpus.
pub fn filter_vocabulary(
    corpus: &TripletCorpus,
    min_count: u64,
) -> Result<(TripletCorpus, Vocabulary, Vocabulary)> {
    if min_count == 0 {
        return Err(Error::InvalidArgument("min_count must be >= 1".into()));
    }
    let (obj_counts, pred_counts) = label_counts(corpus);
    let keep = |label: &str, counts: &HashMap<String, u64>| counts[label] >= min_count;
    let mut filtered = TripletCorpus {
        counts: BTreeMap::new(),
        provenance: corpus.provenance.clone(),
    };
    for ((s, p, o), &w) in &corpus.counts {
        if keep(s, &obj_counts) && keep(o, &obj_counts) && keep(p, &pred_counts) {
            filtered.counts.insert((s.clone(), p.clone(), o.clone()), w);
        }
    }
    let (objs, preds) = label_counts(&filtered);
    Ok((filtered, vocab_from_counts(objs), vocab_from_counts(preds)))
}

/// Distinct labels appearing in the corpus, sorted.
pub fn corpus_labels(corpus: &TripletCorpus) -> (BTreeSet<String>, BTreeSet<String>) {
    let mut objects = BTreeSet::new();
    let mut predicates = BTreeSet::new();
    for (s, p, o) in corpus.counts.keys() {
        objects.insert(s.clone());
        objects.insert(o.clone());
        predicates.insert(p.clone());
    }
    (objects, predicates)
}
