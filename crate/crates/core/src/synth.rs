//! Seeded synthetic scenes whose features are affine images of label
//! embeddings plus Gaussian noise, so the learning task is solvable and
//! held-out predicates can be recognised through their embeddings.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Triplet, TripletCorpus};
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::relhead::train::stream_seed;
use crate::sg::{BoundingBox, Edge, SceneGraph, SceneInstance, SceneObject, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub objects: usize,
    /// predicates used as training labels
    pub seen_predicates: usize,
    /// predicates present only in text, embeddings and the unseen split
    pub heldout_predicates: usize,
    /// embedding size of the generated word vectors
    pub e: usize,
    /// visual feature size
    pub d: usize,
    /// annotated edges in the training split
    pub train_pairs: usize,
    /// annotated edges in the seen-predicate test split
    pub test_pairs: usize,
    /// annotated edges per held-out predicate in the unseen split
    pub unseen_pairs_per_predicate: usize,
    pub edges_per_scene: usize,
    /// (subject, object) label pairs each predicate favours
    pub homes_per_predicate: usize,
    pub sigma: f64,
    /// corpus triplets per home pair
    pub corpus_per_home: u64,
    /// random off-home corpus triplets
    pub corpus_noise: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            objects: 12,
            seen_predicates: 10,
            heldout_predicates: 0,
            e: 8,
            d: 16,
            train_pairs: 150,
            test_pairs: 60,
            unseen_pairs_per_predicate: 15,
            edges_per_scene: 2,
            homes_per_predicate: 2,
            sigma: 0.1,
            corpus_per_home: 20,
            corpus_noise: 40,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if self.objects < 2 || self.seen_predicates == 0 || self.e == 0 || self.d == 0 {
            return bad("need >= 2 objects, >= 1 seen predicate, e >= 1, d >= 1");
        }
        if self.edges_per_scene == 0 || self.homes_per_predicate == 0 {
            return bad("edges_per_scene and homes_per_predicate must be >= 1");
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be finite and >= 0");
        }
        Ok(())
    }
}

/// Everything the generator produces. Predicate ids index `labels`: seen
/// predicates come first, so `predicates` (the training vocabulary) is a
/// prefix of it.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub objects: Vocabulary,
    pub predicates: Vocabulary,
    pub labels: Vocabulary,
    pub table: EmbeddingTable,
    pub corpus: TripletCorpus,
    pub train: Vec<SceneInstance>,
    pub test: Vec<SceneInstance>,
    pub unseen: Vec<SceneInstance>,
}

/// Distinct pronounceable lowercase words, deterministic in `i`.
pub fn synth_word(i: usize) -> String {
    const C: &[u8] = b"bdfgklmnprstvz";
    const V: &[u8] = b"aeiou";
    let syll = C.len() * V.len();
    let mut n = i;
    let mut w = String::new();
    // three syllables, most significant first
    let mut parts = [0usize; 3];
    for p in parts.iter_mut().rev() {
        *p = n % syll;
        n /= syll;
    }
    for p in parts {
        w.push(C[p / V.len()] as char);
        w.push(V[p % V.len()] as char);
    }
    if n > 0 {
        w.push_str(&synth_word(n - 1));
    }
    w
}

fn unit_gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| x / norm).collect()
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        let z: f64 = StandardNormal.sample(rng);
        z * std
    })
}

fn random_box(rng: &mut ChaCha8Rng) -> BoundingBox {
    BoundingBox::new(
        rng.random_range(0.1..0.9),
        rng.random_range(0.1..0.9),
        rng.random_range(0.05..0.5),
        rng.random_range(0.05..0.5),
    )
    .expect("box ranges are valid")
}

struct Generator {
    sigma: f64,
    a_pair: Array2<f64>,
    c_pair: Array1<f64>,
    a_obj: Array2<f64>,
    c_obj: Array1<f64>,
    object_codes: Vec<Array1<f64>>,
    predicate_codes: Vec<Array1<f64>>,
    homes: Vec<Vec<(usize, usize)>>,
}

impl Generator {
    fn noisy(&self, code: &Array1<f64>, a: &Array2<f64>, c: &Array1<f64>, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let clean = code.dot(a) + c;
        clean
            .iter()
            .map(|x| {
                let z: f64 = StandardNormal.sample(rng);
                x + self.sigma * z
            })
            .collect()
    }

    /// Scenes holding the given predicate sequence, `per_scene` edges each.
    fn scenes(&self, predicates: &[usize], per_scene: usize, rng: &mut ChaCha8Rng) -> Vec<SceneInstance> {
        let e = self.a_pair.nrows();
        predicates
            .chunks(per_scene)
            .map(|chunk| {
                let mut objects = Vec::new();
                let mut edges = Vec::new();
                for &p in chunk {
                    let (s, o) = self.homes[p][rng.random_range(0..self.homes[p].len())];
                    let si = objects.len();
                    objects.push(SceneObject { label: s, bbox: random_box(rng) });
                    objects.push(SceneObject { label: o, bbox: random_box(rng) });
                    edges.push(Edge { subject: si, object: si + 1, predicate: p });
                }
                let object_features = objects
                    .iter()
                    .map(|ob| self.noisy(&self.object_codes[ob.label], &self.a_obj, &self.c_obj, rng))
                    .collect();
                let mut pair_features = BTreeMap::new();
                let n = objects.len();
                for s in 0..n {
                    for o in 0..n {
                        if s == o {
                            continue;
                        }
                        let code = match edges.iter().find(|ed| ed.subject == s && ed.object == o) {
                            Some(ed) => self.predicate_codes[ed.predicate].clone(),
                            None => Array1::from(unit_gaussian(rng, e)),
                        };
                        pair_features.insert((s, o), self.noisy(&code, &self.a_pair, &self.c_pair, rng));
                    }
                }
                SceneInstance {
                    graph: SceneGraph { objects, edges },
                    object_features,
                    pair_features,
                }
            })
            .collect()
    }
}

/// Balanced predicate sequence of length `n` over `ids`, shuffled.
fn balanced(ids: &[usize], n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut seq: Vec<usize> = (0..n).map(|i| ids[i % ids.len()]).collect();
    seq.shuffle(rng);
    seq
}

pub fn generate(config: &SynthConfig) -> Result<SynthDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&[config.seed, 0x5717]));
    let total_pred = config.seen_predicates + config.heldout_predicates;
    let object_names: Vec<String> = (0..config.objects).map(synth_word).collect();
    let predicate_names: Vec<String> = (0..total_pred).map(|i| synth_word(config.objects + i)).collect();

    let mut table = EmbeddingTable::new(config.e);
    let mut object_codes = Vec::new();
    for name in &object_names {
        let v = unit_gaussian(&mut rng, config.e);
        object_codes.push(Array1::from(v.clone()));
        table.insert(name, v)?;
    }
    let mut predicate_codes = Vec::new();
    for name in &predicate_names {
        let v = unit_gaussian(&mut rng, config.e);
        predicate_codes.push(Array1::from(v.clone()));
        table.insert(name, v)?;
    }

    let all_pairs: Vec<(usize, usize)> = (0..config.objects)
        .flat_map(|s| (0..config.objects).filter(move |&o| o != s).map(move |o| (s, o)))
        .collect();
    let homes: Vec<Vec<(usize, usize)>> = (0..total_pred)
        .map(|_| {
            all_pairs
                .choose_multiple(&mut rng, config.homes_per_predicate)
                .copied()
                .collect()
        })
        .collect();

    let scale = 1.0 / (config.e as f64).sqrt();
    let gen = Generator {
        sigma: config.sigma,
        a_pair: gaussian_matrix(&mut rng, config.e, config.d, scale),
        c_pair: gaussian_matrix(&mut rng, 1, config.d, 0.1).row(0).to_owned(),
        a_obj: gaussian_matrix(&mut rng, config.e, config.d, scale),
        c_obj: gaussian_matrix(&mut rng, 1, config.d, 0.1).row(0).to_owned(),
        object_codes,
        predicate_codes,
        homes,
    };

    let mut corpus = TripletCorpus::new();
    for (p, homes) in gen.homes.iter().enumerate() {
        for &(s, o) in homes {
            let w = config.corpus_per_home + rng.random_range(0..=config.corpus_per_home / 2);
            corpus.add(Triplet::new(&object_names[s], &predicate_names[p], &object_names[o]).with_weight(w));
        }
    }
    for _ in 0..config.corpus_noise {
        let (s, o) = all_pairs[rng.random_range(0..all_pairs.len())];
        let p = rng.random_range(0..total_pred);
        corpus.add(Triplet::new(&object_names[s], &predicate_names[p], &object_names[o]));
    }

    let seen: Vec<usize> = (0..config.seen_predicates).collect();
    let held: Vec<usize> = (config.seen_predicates..total_pred).collect();
    let train_seq = balanced(&seen, config.train_pairs, &mut rng);
    let test_seq = balanced(&seen, config.test_pairs, &mut rng);
    let unseen_seq = if held.is_empty() {
        Vec::new()
    } else {
        balanced(&held, config.unseen_pairs_per_predicate * held.len(), &mut rng)
    };
    let train = gen.scenes(&train_seq, config.edges_per_scene, &mut rng);
    let test = gen.scenes(&test_seq, config.edges_per_scene, &mut rng);
    let unseen = gen.scenes(&unseen_seq, config.edges_per_scene, &mut rng);

    let mut obj_counts = vec![0u64; config.objects];
    let mut pred_counts = vec![0u64; total_pred];
    for sc in train.iter().chain(&test).chain(&unseen) {
        for o in &sc.graph.objects {
            obj_counts[o.label] += 1;
        }
        for e in &sc.graph.edges {
            pred_counts[e.predicate] += 1;
        }
    }
    let labels = Vocabulary::new(predicate_names.clone(), pred_counts.clone())?;
    let predicates = Vocabulary::new(
        predicate_names[..config.seen_predicates].to_vec(),
        pred_counts[..config.seen_predicates].to_vec(),
    )?;
    Ok(SynthDataset {
        objects: Vocabulary::new(object_names, obj_counts)?,
        predicates,
        labels,
        table,
        corpus,
        train,
        test,
        unseen,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::normalize_token;
    use crate::sg::validate_scene;
    use std::collections::HashSet;

    #[test]
    fn words_are_distinct_and_clean() {
        let words: Vec<String> = (0..500).map(synth_word).collect();
        let set: HashSet<&String> = words.iter().collect();
        assert_eq!(set.len(), words.len());
        let stop = crate::corpus::default_stoplist();
        for w in &words {
            assert_eq!(normalize_token(w, &stop).as_deref(), Some(w.as_str()));
        }
    }

    #[test]
    fn deterministic_and_valid() {
        let cfg = SynthConfig {
            heldout_predicates: 3,
            ..SynthConfig::default()
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train.iter().map(|s| s.graph.edges.len()).sum::<usize>(), 150);
        assert_eq!(a.unseen.iter().map(|s| s.graph.edges.len()).sum::<usize>(), 45);
        for s in a.train.iter().chain(&a.test).chain(&a.unseen) {
            assert!(validate_scene(s).is_empty(), "{:?}", validate_scene(s));
        }
        assert!(a.train.iter().all(|s| s.graph.edges.iter().all(|e| e.predicate < 10)));
        assert!(a.unseen.iter().all(|s| s.graph.edges.iter().all(|e| e.predicate >= 10)));
        let c = generate(&SynthConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn zero_noise_features_follow_labels() {
        let cfg = SynthConfig {
            sigma: 0.0,
            ..SynthConfig::default()
        };
        let ds = generate(&cfg).unwrap();
        let mut by_pred: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let mut by_obj: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for s in &ds.train {
            for e in &s.graph.edges {
                let f = &s.pair_features[&(e.subject, e.object)];
                assert_eq!(by_pred.entry(e.predicate).or_insert_with(|| f.clone()), f);
            }
            for (o, f) in s.graph.objects.iter().zip(&s.object_features) {
                assert_eq!(by_obj.entry(o.label).or_insert_with(|| f.clone()), f);
            }
        }
    }
}
