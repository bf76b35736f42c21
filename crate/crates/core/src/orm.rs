//! Object-relationship mapping: per (subject, object) label pair predicate
//! counts from a text corpus, the conditional `P(r | s, o) = count(s-r-o) /
//! count(s-o)`, ranked lookup with marginal backoff, and top-M / draw-K
//! candidate sampling.
//!
//! Dump format (TSV): a `#total\t<N>` header followed by one
//! `subject\tobject\tpredicate\tcount` line per entry, sorted by subject,
//! object, then descending count (ties by predicate).

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::TripletCorpus;
use crate::error::{Error, Result};

type Pair = (String, String);

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OrmTable {
    pair_counts: BTreeMap<Pair, BTreeMap<String, u64>>,
    pair_totals: BTreeMap<Pair, u64>,
    marginal: BTreeMap<String, u64>,
}

/// Ranked predicates for a pair. `backoff` marks a result served from the
/// global predicate marginal because the pair was never observed.
#[derive(Debug, Clone, PartialEq)]
pub struct Lookup {
    pub entries: Vec<(String, f64)>,
    pub backoff: bool,
}

impl Lookup {
    pub fn head(&self) -> Option<(&str, f64)> {
        self.entries.first().map(|(p, q)| (p.as_str(), *q))
    }

    pub fn predicates(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(p, _)| p.as_str())
    }
}

/// How candidates are drawn for a pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CandidatePolicy {
    pub top_m: usize,
    pub draw_k: usize,
    /// Unseen pairs fall back to the predicate marginal; otherwise they get
    /// no candidates.
    pub backoff: bool,
    /// Draw without replacement proportionally to probability instead of
    /// uniformly.
    pub weighted: bool,
}

impl Default for CandidatePolicy {
    fn default() -> Self {
        CandidatePolicy {
            top_m: 10,
            draw_k: 5,
            backoff: true,
            weighted: false,
        }
    }
}

impl CandidatePolicy {
    pub fn validate(&self) -> Result<()> {
        if self.draw_k == 0 || self.draw_k > self.top_m {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= K <= M, got K={} M={}",
                self.draw_k, self.top_m
            )));
        }
        Ok(())
    }
}

fn ranked(counts: &BTreeMap<String, u64>, total: u64) -> Vec<(String, f64)> {
    let mut items: Vec<(&String, u64)> = counts.iter().map(|(p, &c)| (p, c)).collect();
    // same denominator within a pair: rank on exact integer counts
    items.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let total = total as f64;
    items
        .into_iter()
        .map(|(p, c)| (p.clone(), c as f64 / total))
        .collect()
}

pub fn build_orm(corpus: &TripletCorpus) -> OrmTable {
    let mut t = OrmTable::default();
    for tr in corpus.triplets() {
        t.add(&tr.subject, &tr.object, &tr.predicate, tr.weight);
    }
    t
}

impl OrmTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, subject: &str, object: &str, predicate: &str, count: u64) {
        if count == 0 {
            return;
        }
        let key = (subject.to_string(), object.to_string());
        *self
            .pair_counts
            .entry(key.clone())
            .or_default()
            .entry(predicate.to_string())
            .or_insert(0) += count;
        *self.pair_totals.entry(key).or_insert(0) += count;
        *self.marginal.entry(predicate.to_string()).or_insert(0) += count;
    }

    pub fn is_empty(&self) -> bool {
        self.pair_counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.marginal.values().sum()
    }

    pub fn num_pairs(&self) -> usize {
        self.pair_counts.len()
    }

    pub fn count(&self, subject: &str, object: &str, predicate: &str) -> u64 {
        self.pair_counts
            .get(&(subject.to_string(), object.to_string()))
            .and_then(|m| m.get(predicate))
            .copied()
            .unwrap_or(0)
    }

    pub fn pair_total(&self, subject: &str, object: &str) -> u64 {
        self.pair_totals
            .get(&(subject.to_string(), object.to_string()))
            .copied()
            .unwrap_or(0)
    }

    pub fn marginal(&self) -> &BTreeMap<String, u64> {
        &self.marginal
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.pair_counts
            .keys()
            .map(|(s, o)| (s.as_str(), o.as_str()))
    }

    /// Conditional probability of `predicate` given the pair, `None` for an
    /// unseen pair.
    pub fn probability(&self, subject: &str, object: &str, predicate: &str) -> Option<f64> {
        let total = self.pair_total(subject, object);
        (total > 0).then(|| self.count(subject, object, predicate) as f64 / total as f64)
    }

    /// Predicates for the pair in descending probability, ties by ascending
    /// predicate string. Unseen pairs get the marginal when `backoff` is set
    /// and an empty list otherwise.
    pub fn lookup_with(&self, subject: &str, object: &str, backoff: bool) -> Lookup {
        let key = (subject.to_string(), object.to_string());
        match self.pair_counts.get(&key) {
            Some(counts) => Lookup {
                entries: ranked(counts, self.pair_totals[&key]),
                backoff: false,
            },
            None if backoff && !self.marginal.is_empty() => Lookup {
                entries: ranked(&self.marginal, self.total()),
                backoff: true,
            },
            None => Lookup {
                entries: Vec::new(),
                backoff,
            },
        }
    }

    pub fn lookup(&self, subject: &str, object: &str) -> Lookup {
        self.lookup_with(subject, object, true)
    }

    /// Elementwise sum of counts.
    pub fn merge(&self, other: &OrmTable) -> OrmTable {
        let mut out = self.clone();
        for ((s, o), preds) in &other.pair_counts {
            for (p, &c) in preds {
                out.add(s, o, p, c);
            }
        }
        out
    }

    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let mut marginal: BTreeMap<&str, u64> = BTreeMap::new();
        for (key, preds) in &self.pair_counts {
            let sum: u64 = preds.values().sum();
            if self.pair_totals.get(key) != Some(&sum) {
                return Err(format!("pair total mismatch for {key:?}"));
            }
            for (p, &c) in preds {
                if c == 0 {
                    return Err(format!("zero count for {key:?} {p}"));
                }
                *marginal.entry(p).or_insert(0) += c;
            }
        }
        if self.pair_totals.len() != self.pair_counts.len() {
            return Err("stray pair totals".into());
        }
        let stored: BTreeMap<&str, u64> =
            self.marginal.iter().map(|(p, &c)| (p.as_str(), c)).collect();
        if stored != marginal {
            return Err("marginal does not match pair counts".into());
        }
        Ok(())
    }

    pub fn dump(&self) -> String {
        let mut out = format!("#total\t{}\n", self.total());
        for ((s, o), preds) in &self.pair_counts {
            let mut items: Vec<(&String, &u64)> = preds.iter().collect();
            items.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
            for (p, c) in items {
                out.push_str(&format!("{s}\t{o}\t{p}\t{c}\n"));
            }
        }
        out
    }

    pub fn parse_dump(text: &str) -> Result<OrmTable> {
        let fail = |offset: usize, message: String| Error::Format {
            offset: offset as u64,
            message,
        };
        let mut offset = 0usize;
        let mut lines = text.split_inclusive('\n');
        let header = lines
            .next()
            .ok_or_else(|| fail(0, "missing header".into()))?;
        let declared: u64 = header
            .trim_end_matches(['\n', '\r'])
            .strip_prefix("#total\t")
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| fail(0, "expected `#total\\t<count>` header".into()))?;
        offset += header.len();

        let mut table = OrmTable::new();
        for raw in lines {
            let line = raw.trim_end_matches(['\n', '\r']);
            if !raw.ends_with('\n') {
                return Err(fail(offset, "unterminated final line".into()));
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(fail(
                    offset,
                    format!("expected 4 tab-separated fields, found {}", fields.len()),
                ));
            }
            let count: u64 = fields[3]
                .parse()
                .map_err(|e| fail(offset, format!("bad count {:?}: {e}", fields[3])))?;
            if count == 0 {
                return Err(fail(offset, "count must be >= 1".into()));
            }
            if fields[..3].iter().any(|f| f.is_empty()) {
                return Err(fail(offset, "empty label".into()));
            }
            if table.count(fields[0], fields[1], fields[2]) != 0 {
                return Err(fail(offset, "duplicate entry".into()));
            }
            table.add(fields[0], fields[1], fields[2], count);
            offset += raw.len();
        }
        if table.total() != declared {
            return Err(fail(
                offset,
                format!(
                    "header declares {declared} triplets but entries sum to {}",
                    table.total()
                ),
            ));
        }
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.dump()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<OrmTable> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let text = std::str::from_utf8(&bytes).map_err(|e| Error::Format {
            offset: e.valid_up_to() as u64,
            message: "invalid utf-8".into(),
        })?;
        Self::parse_dump(text)
    }
}

pub fn save_orm(orm: &OrmTable, path: &Path) -> Result<()> {
    orm.save(path)
}

pub fn load_orm(path: &Path) -> Result<OrmTable> {
    OrmTable::load(path)
}

/// Draw candidates for a pair: rank, keep the top `policy.top_m`, then draw
/// `policy.draw_k` of them without replacement. Returned in draw order.
pub fn sample_with<R: rand::Rng + ?Sized>(
    orm: &OrmTable,
    subject: &str,
    object: &str,
    policy: &CandidatePolicy,
    rng: &mut R,
) -> Result<Vec<String>> {
    policy.validate()?;
    let lookup = orm.lookup_with(subject, object, policy.backoff);
    let top: Vec<&(String, f64)> = lookup.entries.iter().take(policy.top_m).collect();
    if top.len() <= policy.draw_k && !policy.weighted {
        // forced subset; still shuffled so the order reflects a draw
        let idx = rand::seq::index::sample(rng, top.len(), top.len());
        return Ok(idx.into_iter().map(|i| top[i].0.clone()).collect());
    }
    let amount = policy.draw_k.min(top.len());
    let idx: Vec<usize> = if policy.weighted {
        rand::seq::index::sample_weighted(rng, top.len(), |i| top[i].1, amount)
            .map_err(|e| Error::InvalidArgument(format!("weighted draw: {e}")))?
            .into_iter()
            .collect()
    } else {
        rand::seq::index::sample(rng, top.len(), amount).into_vec()
    };
    Ok(idx.into_iter().map(|i| top[i].0.clone()).collect())
}

/// Uniform K-subset of the top-M predicates for the pair, deterministic in
/// `seed`. Unseen pairs back off to the marginal.
pub fn sample_candidates(
    orm: &OrmTable,
    subject: &str,
    object: &str,
    top_m: usize,
    draw_k: usize,
    seed: u64,
) -> Result<Vec<String>> {
    let policy = CandidatePolicy {
        top_m,
        draw_k,
        ..CandidatePolicy::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_with(orm, subject, object, &policy, &mut rng)
}

/// Deterministic candidates for evaluation: the first K of the top M.
pub fn top_candidates(orm: &OrmTable, subject: &str, object: &str, policy: &CandidatePolicy) -> Vec<String> {
    orm.lookup_with(subject, object, policy.backoff)
        .entries
        .into_iter()
        .take(policy.top_m.min(policy.draw_k))
        .map(|(p, _)| p)
        .collect()
}

/// Total order used for ranked lists everywhere in the toolkit: descending
/// score, then ascending key.
pub fn rank_order<K: Ord>(a: (&K, f64), b: (&K, f64)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.0.cmp(b.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Triplet;
    use proptest::prelude::*;

    fn corpus(items: &[(&str, &str, &str, u64)]) -> TripletCorpus {
        TripletCorpus::from_triplets(
            items
                .iter()
                .map(|&(s, p, o, w)| Triplet::new(s, p, o).with_weight(w)),
        )
    }

    #[test]
    fn single_observation() {
        let t = build_orm(&corpus(&[("a", "r", "b", 1)]));
        assert_eq!(t.probability("a", "b", "r"), Some(1.0));
        assert_eq!(t.lookup("a", "b").entries, vec![("r".to_string(), 1.0)]);
    }

    #[test]
    fn man_helmet_head() {
        let t = build_orm(&corpus(&[
            ("man", "wearing", "helmet", 54),
            ("man", "holding", "helmet", 30),
            ("man", "with", "helmet", 15),
            ("man", "stands with", "helmet", 1),
        ]));
        let l = t.lookup("man", "helmet");
        assert!(!l.backoff);
        let (p, q) = l.head().unwrap();
        assert_eq!(p, "wearing");
        assert!((q - 0.54).abs() <= 1e-12);
    }

    #[test]
    fn unseen_pair_backoff_and_strict() {
        let t = build_orm(&corpus(&[
            ("man", "on", "horse", 1),
            ("dog", "on", "couch", 1),
            ("man", "near", "car", 1),
        ]));
        let l = t.lookup("cat", "tree");
        assert!(l.backoff);
        // marginal: on=2/3, near=1/3
        assert_eq!(l.entries.len(), 2);
        assert_eq!(l.entries[0].0, "on");
        assert!((l.entries[0].1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(l.entries[1].0, "near");
        assert!((l.entries[1].1 - 1.0 / 3.0).abs() < 1e-15);

        assert!(t.lookup_with("cat", "tree", false).entries.is_empty());
    }

    #[test]
    fn ties_break_lexicographically() {
        let t = build_orm(&corpus(&[("a", "zz", "b", 2), ("a", "aa", "b", 2), ("a", "mm", "b", 3)]));
        let lookup = t.lookup("a", "b");
        let order: Vec<&str> = lookup.predicates().collect();
        assert_eq!(order, ["mm", "aa", "zz"]);
    }

    #[test]
    fn sampling_edges() {
        let t = build_orm(&corpus(&[("a", "x", "b", 5), ("a", "y", "b", 3), ("a", "z", "b", 1)]));
        let s = sample_candidates(&t, "a", "b", 1, 1, 7).unwrap();
        assert_eq!(s, vec!["x"]);
        let mut all = sample_candidates(&t, "a", "b", 3, 3, 9).unwrap();
        all.sort();
        assert_eq!(all, vec!["x", "y", "z"]);
        // fewer than K available
        let few = sample_candidates(&t, "a", "b", 10, 5, 1).unwrap();
        assert_eq!(few.len(), 3);
        assert!(matches!(
            sample_candidates(&t, "a", "b", 2, 3, 1),
            Err(Error::InvalidArgument(_))
        ));
        assert_eq!(
            sample_candidates(&t, "a", "b", 3, 2, 42).unwrap(),
            sample_candidates(&t, "a", "b", 3, 2, 42).unwrap()
        );
    }

    #[test]
    fn weighted_draw_stays_in_top_m() {
        let t = build_orm(&corpus(&[("a", "x", "b", 5), ("a", "y", "b", 3), ("a", "z", "b", 1)]));
        let policy = CandidatePolicy {
            top_m: 2,
            draw_k: 1,
            backoff: true,
            weighted: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let s = sample_with(&t, "a", "b", &policy, &mut rng).unwrap();
            assert!(s[0] == "x" || s[0] == "y");
        }
    }

    #[test]
    fn dump_roundtrip_and_corruption() {
        let t = build_orm(&corpus(&[("man", "wearing", "helmet", 3), ("man", "on", "horse", 1)]));
        let text = t.dump();
        assert_eq!(text, "#total\t4\nman\thelmet\twearing\t3\nman\thorse\ton\t1\n");
        assert_eq!(OrmTable::parse_dump(&text).unwrap(), t);

        let empty = OrmTable::new();
        assert_eq!(OrmTable::parse_dump(&empty.dump()).unwrap(), empty);

        let truncated = &text[..text.len() - 3];
        match OrmTable::parse_dump(truncated) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 30),
            other => panic!("{other:?}"),
        }
        let short = &text[..text.len() - 1];
        assert!(OrmTable::parse_dump(short).is_err());
        assert!(OrmTable::parse_dump("").is_err());
        assert!(OrmTable::parse_dump("#total\t5\nman\thelmet\twearing\t3\n").is_err());
    }

    fn arb_corpus() -> impl Strategy<Value = TripletCorpus> {
        let w = prop::sample::select(vec!["a", "b", "c", "d"]);
        let p = prop::sample::select(vec!["on", "has", "near"]);
        prop::collection::vec((w.clone(), p, w, 1u64..10), 0..30).prop_map(|v| {
            TripletCorpus::from_triplets(v.into_iter().map(|(s, p, o, c)| Triplet::new(s, p, o).with_weight(c)))
        })
    }

    proptest! {
        #[test]
        fn probabilities_sum_to_one(c in arb_corpus()) {
            let t = build_orm(&c);
            prop_assert!(t.check_invariants().is_ok());
            for (s, o) in t.pairs() {
                let sum: f64 = t.lookup(s, o).entries.iter().map(|e| e.1).sum();
                prop_assert!((sum - 1.0).abs() <= 1e-9);
            }
        }

        #[test]
        fn merge_is_commutative_with_identity(a in arb_corpus(), b in arb_corpus()) {
            let (ta, tb) = (build_orm(&a), build_orm(&b));
            prop_assert_eq!(ta.merge(&tb), tb.merge(&ta));
            prop_assert_eq!(ta.merge(&OrmTable::new()), ta.clone());
            let mut joined = a.clone();
            joined.merge(&b);
            prop_assert_eq!(build_orm(&joined), ta.merge(&tb));
        }

        #[test]
        fn dump_roundtrip(c in arb_corpus()) {
            let t = build_orm(&c);
            prop_assert_eq!(OrmTable::parse_dump(&t.dump()).unwrap(), t);
        }

        #[test]
        fn draws_subset_of_top_m(c in arb_corpus(), m in 1usize..4, seed in any::<u64>()) {
            let t = build_orm(&c);
            for (s, o) in t.pairs() {
                let top: Vec<String> = t.lookup(s, o).entries.into_iter().take(m).map(|e| e.0).collect();
                let draw = sample_candidates(&t, s, o, m, 1.max(m / 2), seed).unwrap();
                prop_assert!(draw.iter().all(|p| top.contains(p)));
                let mut uniq = draw.clone();
                uniq.sort();
                uniq.dedup();
                prop_assert_eq!(uniq.len(), draw.len());
            }
        }
    }
}
