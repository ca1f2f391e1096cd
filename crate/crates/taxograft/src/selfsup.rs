//! Balanced self-supervised dataset generation from the existing taxonomy.
//!
//! Existing taxonomies are dominated by headword edges (the parent surface
//! is the head of the child surface), so a naive dataset overfits that
//! pattern. Positives are rebalanced toward the stated headword:other
//! target; negatives pair order shuffles with hard replace samples drawn
//! from click-log concepts outside the query's ancestor/descendant cone.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ConceptId, ConceptVocabulary};
use crate::error::{Error, Result};
use crate::graph::HeteroGraph;
use crate::rng::{derive_seed, rng_from};
use crate::taxonomy::Taxonomy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    Headword,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegType {
    Shuffle,
    Replace,
}

/// One labeled training pair. Exactly one of `pattern` / `neg_type` is set,
/// matching the label; the constructors enforce that.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledPair {
    pub query: ConceptId,
    pub item: ConceptId,
    pub positive: bool,
    pub pattern: Option<Pattern>,
    pub neg_type: Option<NegType>,
}

impl LabeledPair {
    pub fn positive(query: ConceptId, item: ConceptId, pattern: Pattern) -> Self {
        LabeledPair {
            query,
            item,
            positive: true,
            pattern: Some(pattern),
            neg_type: None,
        }
    }

    pub fn negative(query: ConceptId, item: ConceptId, neg_type: NegType) -> Self {
        LabeledPair {
            query,
            item,
            positive: false,
            pattern: None,
            neg_type: Some(neg_type),
        }
    }

    /// Stratum key used by the splitter: (label, pattern/neg_type).
    fn stratum(&self) -> u8 {
        match (self.positive, self.pattern, self.neg_type) {
            (true, Some(Pattern::Headword), _) => 0,
            (true, Some(Pattern::Other), _) => 1,
            (false, _, Some(NegType::Shuffle)) => 2,
            (false, _, Some(NegType::Replace)) => 3,
            _ => unreachable!("constructors keep pattern/neg_type consistent"),
        }
    }
}

/// True iff the parent surface is the head of the child surface: a proper
/// suffix for unspaced scripts, or the last whitespace token otherwise.
pub fn detect_headword(parent: &str, child: &str) -> bool {
    if parent == child || parent.is_empty() {
        return false;
    }
    if child.contains(' ') {
        child.split_whitespace().next_back() == Some(parent)
    } else {
        child.ends_with(parent)
    }
}

/// Keep all non-headword taxonomy edges as positives; keep headword edges
/// with probability `keep_prob` only when they also occur as click edges,
/// then down-sample them so their share does not exceed `target_ratio`.
pub fn balance_positives(
    taxonomy: &Taxonomy,
    vocab: &ConceptVocabulary,
    graph: &HeteroGraph,
    target_ratio: f64,
    keep_prob: f64,
    seed: u64,
) -> Result<Vec<LabeledPair>> {
    if taxonomy.num_edges() == 0 {
        return Err(Error::EmptyPositives);
    }
    let mut others = Vec::new();
    let mut headword_kept = Vec::new();
    for edge in taxonomy.edges() {
        let parent = vocab.surface(edge.parent);
        let child = vocab.surface(edge.child);
        if detect_headword(parent, child) {
            if !graph.has_click_edge(edge.parent, edge.child) {
                continue;
            }
            let mut rng = rng_from(derive_seed(
                seed,
                &format!("keep:{}:{}", edge.parent, edge.child),
            ));
            if rng.gen::<f64>() < keep_prob {
                headword_kept.push((edge.parent, edge.child));
            }
        } else {
            others.push((edge.parent, edge.child));
        }
    }
    // Cap headword count at target_ratio of the final total. With no
    // non-headword supply the target is unreachable; keep what we have.
    let cap = if others.is_empty() || target_ratio >= 1.0 {
        headword_kept.len()
    } else {
        // Epsilon guards exact-integer caps against FP rounding (3626 * 3/7
        // must come out 1554, not 1553.999...).
        (target_ratio / (1.0 - target_ratio) * others.len() as f64 + 1e-6).floor() as usize
    };
    if headword_kept.len() > cap {
        let mut rng = rng_from(derive_seed(seed, "headword-downsample"));
        headword_kept.shuffle(&mut rng);
        headword_kept.truncate(cap);
    }
    let mut positives: Vec<LabeledPair> = others
        .into_iter()
        .map(|(q, i)| LabeledPair::positive(q, i, Pattern::Other))
        .chain(
            headword_kept
                .into_iter()
                .map(|(q, i)| LabeledPair::positive(q, i, Pattern::Headword)),
        )
        .collect();
    positives.sort_by_key(|p| (p.query, p.item));
    Ok(positives)
}

/// The filtered taxonomy defined by the balanced positives: original node
/// set semantics, positive pairs as its edge set.
pub fn filtered_taxonomy(positives: &[LabeledPair]) -> Taxonomy {
    Taxonomy::new(positives.iter().map(|p| (p.query, p.item)))
        .expect("subset of an acyclic edge set is acyclic")
}

/// Emit `per_positive` negatives per positive: order shuffles and replace
/// samples in a globally balanced `shuffle_share` mix. Replace candidates
/// come from click-log concepts that are filtered-taxonomy nodes and are
/// neither ancestors nor descendants of the query; after 100 rejected draws
/// the slot falls back to a shuffle.
pub fn sample_negatives(
    positives: &[LabeledPair],
    filtered: &Taxonomy,
    graph: &HeteroGraph,
    per_positive: usize,
    shuffle_share: f64,
    seed: u64,
) -> Vec<LabeledPair> {
    assert!(per_positive >= 1, "per_positive must be at least 1");
    let mut ordered: Vec<&LabeledPair> = positives.iter().collect();
    ordered.sort_by_key(|p| (p.query, p.item));

    let pool: Vec<ConceptId> = graph
        .click_concepts()
        .into_iter()
        .filter(|c| filtered.contains_node(*c))
        .collect();

    let total = ordered.len() * per_positive;
    let target_shuffle = ((total as f64) * shuffle_share).round() as usize;
    let mut slot_is_shuffle = vec![false; total];
    for s in slot_is_shuffle.iter_mut().take(target_shuffle.min(total)) {
        *s = true;
    }
    slot_is_shuffle.shuffle(&mut rng_from(derive_seed(seed, "negtype")));

    let mut cone_cache: BTreeMap<ConceptId, BTreeSet<ConceptId>> = BTreeMap::new();
    let mut emitted: BTreeSet<(ConceptId, ConceptId)> = BTreeSet::new();
    let mut negatives = Vec::with_capacity(total);
    for (k, pos) in ordered.iter().enumerate() {
        let mut rng = rng_from(derive_seed(
            seed,
            &format!("replace:{}:{}", pos.query, pos.item),
        ));
        for slot in 0..per_positive {
            let want_shuffle = slot_is_shuffle[k * per_positive + slot];
            if want_shuffle || pool.is_empty() {
                negatives.push(LabeledPair::negative(pos.item, pos.query, NegType::Shuffle));
                continue;
            }
            let cone = cone_cache.entry(pos.query).or_insert_with(|| {
                let mut cone = filtered.ancestors(pos.query);
                cone.extend(filtered.descendants(pos.query));
                cone.insert(pos.query);
                cone
            });
            let mut chosen = None;
            for _ in 0..100 {
                let c = pool[rng.gen_range(0..pool.len())];
                if !cone.contains(&c) && !emitted.contains(&(pos.query, c)) {
                    chosen = Some(c);
                    break;
                }
            }
            match chosen {
                Some(c) => {
                    emitted.insert((pos.query, c));
                    negatives.push(LabeledPair::negative(pos.query, c, NegType::Replace));
                }
                None => {
                    negatives.push(LabeledPair::negative(pos.item, pos.query, NegType::Shuffle));
                }
            }
        }
    }
    negatives
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<LabeledPair>,
    pub val: Vec<LabeledPair>,
    pub test: Vec<LabeledPair>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn counts(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }
}

/// 60/20/20 split, stratified by (label, pattern/neg_type) so validation and
/// test preserve the pattern balance. Deterministic under `seed`.
pub fn split_dataset(pairs: &[LabeledPair], seed: u64) -> DatasetSplit {
    let mut strata: BTreeMap<u8, Vec<LabeledPair>> = BTreeMap::new();
    for p in pairs {
        strata.entry(p.stratum()).or_default().push(p.clone());
    }
    let mut split = DatasetSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        seed,
    };
    for (key, mut members) in strata {
        members.sort_by_key(|p| (p.query, p.item));
        members.shuffle(&mut rng_from(derive_seed(seed, &format!("split:{key}"))));
        let n = members.len();
        // Integer rounding of 0.6n / 0.2n; remainder goes to test.
        let n_train = (6 * n + 5) / 10;
        let n_val = (2 * n + 5) / 10;
        for (idx, p) in members.into_iter().enumerate() {
            if idx < n_train {
                split.train.push(p);
            } else if idx < n_train + n_val {
                split.val.push(p);
            } else {
                split.test.push(p);
            }
        }
    }
    split
}

#[derive(Debug, Serialize, Deserialize)]
struct PairRecord {
    query: String,
    item: String,
    label: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    pattern: Option<Pattern>,
    #[serde(skip_serializing_if = "Option::is_none")]
    neg_type: Option<NegType>,
}

/// JSONL, one `{"query", "item", "label", "pattern"/"neg_type"}` per line.
pub fn write_dataset(path: &Path, vocab: &ConceptVocabulary, pairs: &[LabeledPair]) -> Result<()> {
    let mut out = String::new();
    for p in pairs {
        let record = PairRecord {
            query: vocab.surface(p.query).to_string(),
            item: vocab.surface(p.item).to_string(),
            label: u8::from(p.positive),
            pattern: p.pattern,
            neg_type: p.neg_type,
        };
        out.push_str(&serde_json::to_string(&record).expect("record serializes"));
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(out.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_dataset(path: &Path, vocab: &ConceptVocabulary) -> Result<Vec<LabeledPair>> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut pairs = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let record: PairRecord = serde_json::from_str(line).map_err(|e| Error::MalformedLine {
            line: idx + 1,
            message: e.to_string(),
        })?;
        let resolve = |surface: &str| {
            vocab.lookup(surface).ok_or_else(|| Error::UnknownConcept {
                surface: surface.to_string(),
            })
        };
        let query = resolve(&record.query)?;
        let item = resolve(&record.item)?;
        pairs.push(if record.label == 1 {
            LabeledPair::positive(query, item, record.pattern.unwrap_or(Pattern::Other))
        } else {
            LabeledPair::negative(query, item, record.neg_type.unwrap_or(NegType::Replace))
        });
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, ClickEdge, HeteroGraph};

    fn id(n: usize) -> ConceptId {
        ConceptId(n)
    }

    #[test]
    fn headword_detection_suffix_and_token_rules() {
        assert!(detect_headword("面包", "黑麦面包"));
        assert!(!detect_headword("面包", "奶酪包"));
        assert!(detect_headword("bread", "rye bread"));
        assert!(!detect_headword("bread", "breadstick sticks"));
        assert!(!detect_headword("面包", "面包"));
    }

    /// Vocab with `n_headword` detectable edges and `n_other` opaque edges,
    /// every edge also present in the click graph.
    fn balanced_fixture(
        n_headword: usize,
        n_other: usize,
    ) -> (ConceptVocabulary, Taxonomy, HeteroGraph) {
        let mut vocab = ConceptVocabulary::new();
        let mut edges = Vec::new();
        let mut clicks = Vec::new();
        for k in 0..n_headword {
            let p = vocab.insert(format!("hp{k}")).unwrap();
            let c = vocab.insert(format!("mod{k}hp{k}")).unwrap();
            edges.push((p, c));
            clicks.push((p, c));
        }
        for k in 0..n_other {
            let p = vocab.insert(format!("op{k}")).unwrap();
            let c = vocab.insert(format!("zq{k}")).unwrap();
            edges.push((p, c));
            clicks.push((p, c));
        }
        let taxonomy = Taxonomy::new(edges).unwrap();
        let click_edges = clicks
            .into_iter()
            .map(|(q, i)| ClickEdge {
                query: q,
                item: i,
                clicks: 1,
                weight: 1.0,
            })
            .collect();
        let graph = HeteroGraph::assemble(&taxonomy, click_edges);
        (vocab, taxonomy, graph)
    }

    #[test]
    fn balance_reproduces_snack_row_proportions() {
        // 10,000 headword + 3,626 other at target 0.3 keeps 1,554 headword.
        let (vocab, taxonomy, graph) = balanced_fixture(10_000, 3_626);
        let positives = balance_positives(&taxonomy, &vocab, &graph, 0.3, 1.0, 7).unwrap();
        let headword = positives
            .iter()
            .filter(|p| p.pattern == Some(Pattern::Headword))
            .count();
        let other = positives.len() - headword;
        assert_eq!(headword, 1_554);
        assert_eq!(other, 3_626);
    }

    #[test]
    fn balance_keeps_everything_without_headwords() {
        let (vocab, taxonomy, graph) = balanced_fixture(0, 10);
        let positives = balance_positives(&taxonomy, &vocab, &graph, 0.3, 1.0, 7).unwrap();
        assert_eq!(positives.len(), 10);
        assert!(positives.iter().all(|p| p.pattern == Some(Pattern::Other)));
    }

    #[test]
    fn balance_keep_prob_zero_drops_all_headwords() {
        let (vocab, taxonomy, graph) = balanced_fixture(20, 5);
        let positives = balance_positives(&taxonomy, &vocab, &graph, 0.9, 0.0, 7).unwrap();
        assert!(positives.iter().all(|p| p.pattern == Some(Pattern::Other)));
    }

    #[test]
    fn balance_requires_click_evidence_for_headwords() {
        // Headword edges absent from the click graph are never kept.
        let mut vocab = ConceptVocabulary::new();
        let p = vocab.insert("bread".into()).unwrap();
        let c = vocab.insert("rye bread".into()).unwrap();
        let o1 = vocab.insert("soup".into()).unwrap();
        let o2 = vocab.insert("broth".into()).unwrap();
        let taxonomy = Taxonomy::new([(p, c), (o1, o2)]).unwrap();
        let (graph, _) = build_graph(&taxonomy, &vocab, &[]);
        let positives = balance_positives(&taxonomy, &vocab, &graph, 0.9, 1.0, 7).unwrap();
        assert_eq!(positives.len(), 1);
        assert_eq!(positives[0].pattern, Some(Pattern::Other));
    }

    #[test]
    fn balance_empty_taxonomy_is_error() {
        let vocab = ConceptVocabulary::new();
        let taxonomy = Taxonomy::new(Vec::<(ConceptId, ConceptId)>::new()).unwrap();
        let graph = HeteroGraph::assemble(&taxonomy, Vec::new());
        assert!(matches!(
            balance_positives(&taxonomy, &vocab, &graph, 0.3, 1.0, 7),
            Err(Error::EmptyPositives)
        ));
    }

    fn chain_fixture() -> (ConceptVocabulary, Taxonomy, HeteroGraph) {
        // a -> b -> c plus side concepts d, e; clicks touch all of them
        let mut vocab = ConceptVocabulary::new();
        let ids: Vec<ConceptId> = ["aa", "bb", "cc", "dd", "ee"]
            .iter()
            .map(|s| vocab.insert((*s).into()).unwrap())
            .collect();
        let taxonomy =
            Taxonomy::new([(ids[0], ids[1]), (ids[1], ids[2]), (ids[3], ids[4])]).unwrap();
        let click_edges = vec![
            ClickEdge {
                query: ids[0],
                item: ids[1],
                clicks: 1,
                weight: 1.0,
            },
            ClickEdge {
                query: ids[0],
                item: ids[3],
                clicks: 1,
                weight: 1.0,
            },
            ClickEdge {
                query: ids[1],
                item: ids[4],
                clicks: 1,
                weight: 1.0,
            },
            ClickEdge {
                query: ids[2],
                item: ids[4],
                clicks: 1,
                weight: 1.0,
            },
        ];
        let graph = HeteroGraph::assemble(&taxonomy, click_edges);
        (vocab, taxonomy, graph)
    }

    #[test]
    fn negatives_have_exact_count_and_balanced_types() {
        let (vocab, taxonomy, graph) = chain_fixture();
        let positives = balance_positives(&taxonomy, &vocab, &graph, 0.3, 1.0, 7).unwrap();
        let filtered = filtered_taxonomy(&positives);
        let negatives = sample_negatives(&positives, &filtered, &graph, 1, 0.5, 7);
        assert_eq!(negatives.len(), positives.len());
        let shuffles = negatives
            .iter()
            .filter(|n| n.neg_type == Some(NegType::Shuffle))
            .count();
        let replaces = negatives.len() - shuffles;
        assert!(shuffles.abs_diff(replaces) <= 1);
    }

    #[test]
    fn shuffle_negatives_are_exact_reversals() {
        let (vocab, taxonomy, graph) = chain_fixture();
        let positives = balance_positives(&taxonomy, &vocab, &graph, 0.3, 1.0, 11).unwrap();
        let filtered = filtered_taxonomy(&positives);
        let negatives = sample_negatives(&positives, &filtered, &graph, 1, 1.0, 11);
        let pos_set: BTreeSet<(ConceptId, ConceptId)> =
            positives.iter().map(|p| (p.query, p.item)).collect();
        for n in &negatives {
            assert_eq!(n.neg_type, Some(NegType::Shuffle));
            assert!(pos_set.contains(&(n.item, n.query)));
        }
    }

    #[test]
    fn no_pair_appears_with_both_labels() {
        let (vocab, taxonomy, graph) = chain_fixture();
        let positives = balance_positives(&taxonomy, &vocab, &graph, 0.3, 1.0, 13).unwrap();
        let filtered = filtered_taxonomy(&positives);
        let negatives = sample_negatives(&positives, &filtered, &graph, 2, 0.5, 13);
        let pos_set: BTreeSet<(ConceptId, ConceptId)> =
            positives.iter().map(|p| (p.query, p.item)).collect();
        for n in &negatives {
            assert!(!pos_set.contains(&(n.query, n.item)));
        }
    }

    #[test]
    fn replace_negatives_avoid_ancestor_descendant_cone() {
        // Brute-force oracle on a random 50-node DAG.
        use rand::Rng;
        let mut rng = rng_from(99);
        let mut vocab = ConceptVocabulary::new();
        let ids: Vec<ConceptId> = (0..50)
            .map(|k| vocab.insert(format!("n{k:02}")).unwrap())
            .collect();
        let mut edges = Vec::new();
        for i in 0..50usize {
            for j in (i + 1)..50 {
                if rng.gen::<f64>() < 0.06 {
                    edges.push((ids[i], ids[j]));
                }
            }
        }
        let taxonomy = Taxonomy::new(edges.clone()).unwrap();
        let click_edges: Vec<ClickEdge> = edges
            .iter()
            .map(|&(q, i)| ClickEdge {
                query: q,
                item: i,
                clicks: 1,
                weight: 0.5,
            })
            .collect();
        let graph = HeteroGraph::assemble(&taxonomy, click_edges);
        let positives = balance_positives(&taxonomy, &vocab, &graph, 0.3, 1.0, 5).unwrap();
        let filtered = filtered_taxonomy(&positives);
        let negatives = sample_negatives(&positives, &filtered, &graph, 1, 0.5, 5);

        let closure = filtered.transitive_closure();
        for n in negatives.iter().filter(|n| n.neg_type == Some(NegType::Replace)) {
            assert!(!closure.contains(&(n.query, n.item)), "descendant leaked");
            assert!(!closure.contains(&(n.item, n.query)), "ancestor leaked");
            assert_ne!(n.query, n.item);
        }
    }

    #[test]
    fn split_matches_snack_row_counts() {
        // Strata sized like the Snack dataset: 1554 + 3626 positives and a
        // balanced 2590/2590 negative mix; totals must come out 6216/2072/2072.
        let mut pairs = Vec::new();
        let mut next = 0usize;
        let mut fresh = || {
            next += 2;
            (id(next - 2), id(next - 1))
        };
        for _ in 0..1554 {
            let (q, i) = fresh();
            pairs.push(LabeledPair::positive(q, i, Pattern::Headword));
        }
        for _ in 0..3626 {
            let (q, i) = fresh();
            pairs.push(LabeledPair::positive(q, i, Pattern::Other));
        }
        for _ in 0..2590 {
            let (q, i) = fresh();
            pairs.push(LabeledPair::negative(q, i, NegType::Shuffle));
        }
        for _ in 0..2590 {
            let (q, i) = fresh();
            pairs.push(LabeledPair::negative(q, i, NegType::Replace));
        }
        let split = split_dataset(&pairs, 42);
        assert_eq!(split.counts(), (6216, 2072, 2072));
    }

    #[test]
    fn split_small_stratum_rounds_3_1_1() {
        let pairs: Vec<LabeledPair> = (0..5)
            .map(|k| LabeledPair::positive(id(2 * k), id(2 * k + 1), Pattern::Other))
            .collect();
        let split = split_dataset(&pairs, 1);
        assert_eq!(split.counts(), (3, 1, 1));
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let (vocab, taxonomy, graph) = chain_fixture();
        let positives = balance_positives(&taxonomy, &vocab, &graph, 0.3, 1.0, 3).unwrap();
        let filtered = filtered_taxonomy(&positives);
        let mut pairs = positives.clone();
        pairs.extend(sample_negatives(&positives, &filtered, &graph, 1, 0.5, 3));
        let a = split_dataset(&pairs, 9);
        let b = split_dataset(&pairs, 9);
        assert_eq!(a.train, b.train);
        assert_eq!(a.val, b.val);
        assert_eq!(a.test, b.test);

        let key = |p: &LabeledPair| (p.query, p.item, p.positive);
        let train: BTreeSet<_> = a.train.iter().map(key).collect();
        let val: BTreeSet<_> = a.val.iter().map(key).collect();
        let test: BTreeSet<_> = a.test.iter().map(key).collect();
        assert!(train.is_disjoint(&val));
        assert!(train.is_disjoint(&test));
        assert!(val.is_disjoint(&test));
    }

    #[test]
    fn dataset_jsonl_round_trip() {
        let (vocab, taxonomy, graph) = chain_fixture();
        let positives = balance_positives(&taxonomy, &vocab, &graph, 0.3, 1.0, 3).unwrap();
        let filtered = filtered_taxonomy(&positives);
        let mut pairs = positives.clone();
        pairs.extend(sample_negatives(&positives, &filtered, &graph, 1, 0.5, 3));
        let f = tempfile::NamedTempFile::new().unwrap();
        write_dataset(f.path(), &vocab, &pairs).unwrap();
        let reloaded = load_dataset(f.path(), &vocab).unwrap();
        assert_eq!(reloaded, pairs);
    }
}
