//! Heterogeneous edge-weighted graph built from the taxonomy and click logs.
//!
//! Click edges carry a weight in (0, 1]: the softmax, within one query, of
//! IF(q,i) * IQF(i)^2, where IF is the per-query click share and IQF the
//! log-scaled rarity of the item across queries. Taxonomy edges keep weight 1.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{match_concept, ClickRecord, ConceptId, ConceptVocabulary};
use crate::error::{Error, Result};
use crate::taxonomy::Taxonomy;

/// A query-concept -> item-concept edge mined from click logs.
#[derive(Debug, Clone, PartialEq)]
pub struct ClickEdge {
    pub query: ConceptId,
    pub item: ConceptId,
    pub clicks: u64,
    pub weight: f64,
}

/// Taxonomy edges plus weighted click edges over one node universe.
/// The adjacency is undirected for propagation; direction labels stay in
/// the two edge sets and are reinjected later via position embeddings.
#[derive(Debug, Clone, Default)]
pub struct HeteroGraph {
    nodes: BTreeSet<ConceptId>,
    taxo_edges: BTreeSet<(ConceptId, ConceptId)>,
    click_edges: Vec<ClickEdge>,
    click_index: BTreeMap<(ConceptId, ConceptId), usize>,
    adjacency: BTreeMap<ConceptId, Vec<(ConceptId, f64)>>,
}

impl HeteroGraph {
    pub fn assemble(taxonomy: &Taxonomy, click_edges: Vec<ClickEdge>) -> Self {
        let mut nodes: BTreeSet<ConceptId> = taxonomy.nodes().collect();
        let taxo_edges: BTreeSet<_> = taxonomy.edges().map(|e| (e.parent, e.child)).collect();
        for e in &click_edges {
            nodes.insert(e.query);
            nodes.insert(e.item);
        }
        let mut weights: BTreeMap<ConceptId, BTreeMap<ConceptId, f64>> = BTreeMap::new();
        let mut add = |a: ConceptId, b: ConceptId, w: f64| {
            *weights.entry(a).or_default().entry(b).or_insert(0.0) += w;
        };
        for &(p, c) in &taxo_edges {
            add(p, c, 1.0);
            add(c, p, 1.0);
        }
        for e in &click_edges {
            add(e.query, e.item, e.weight);
            add(e.item, e.query, e.weight);
        }
        let adjacency = weights
            .into_iter()
            .map(|(n, m)| (n, m.into_iter().collect()))
            .collect();
        let click_index = click_edges
            .iter()
            .enumerate()
            .map(|(i, e)| ((e.query, e.item), i))
            .collect();
        HeteroGraph {
            nodes,
            taxo_edges,
            click_edges,
            click_index,
            adjacency,
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = ConceptId> + '_ {
        self.nodes.iter().copied()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn contains_node(&self, id: ConceptId) -> bool {
        self.nodes.contains(&id)
    }

    pub fn taxo_edges(&self) -> impl Iterator<Item = (ConceptId, ConceptId)> + '_ {
        self.taxo_edges.iter().copied()
    }

    pub fn click_edges(&self) -> &[ClickEdge] {
        &self.click_edges
    }

    pub fn has_click_edge(&self, query: ConceptId, item: ConceptId) -> bool {
        self.click_index.contains_key(&(query, item))
    }

    /// Click edges whose query concept is `query`, in item order.
    pub fn click_items_of(&self, query: ConceptId) -> impl Iterator<Item = &ClickEdge> {
        self.click_index
            .range((query, ConceptId(0))..=(query, ConceptId(usize::MAX)))
            .map(|(_, &i)| &self.click_edges[i])
    }

    /// Every concept incident to a click edge.
    pub fn click_concepts(&self) -> BTreeSet<ConceptId> {
        self.click_edges
            .iter()
            .flat_map(|e| [e.query, e.item])
            .collect()
    }

    /// Undirected neighbors with accumulated edge weights (no self entry).
    pub fn neighbors(&self, id: ConceptId) -> &[(ConceptId, f64)] {
        self.adjacency.get(&id).map_or(&[], Vec::as_slice)
    }

    /// Drop all click edges, keeping the node set (ablation support).
    pub fn without_click_edges(&self) -> Self {
        let mut weights: BTreeMap<ConceptId, Vec<(ConceptId, f64)>> = BTreeMap::new();
        for &(p, c) in &self.taxo_edges {
            weights.entry(p).or_default().push((c, 1.0));
            weights.entry(c).or_default().push((p, 1.0));
        }
        for v in weights.values_mut() {
            v.sort_by_key(|&(n, _)| n);
        }
        HeteroGraph {
            nodes: self.nodes.clone(),
            taxo_edges: self.taxo_edges.clone(),
            click_edges: Vec::new(),
            click_index: BTreeMap::new(),
            adjacency: weights,
        }
    }
}

/// Coverage counters emitted alongside the graph.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GraphStats {
    pub taxonomy_nodes: usize,
    pub taxonomy_edges: usize,
    /// Taxonomy nodes that appear as queries with at least one clicked item.
    pub covered_nodes: usize,
    pub cnode: f64,
    /// Taxonomy edges that also emerged as an identified query-item pair.
    pub covered_edges: usize,
    pub cedge: f64,
    /// Identified query-item pairs absent from the taxonomy edge set.
    pub new_edges: usize,
    pub click_edges: usize,
    /// Total clicks on items that matched no vocabulary concept.
    pub unresolved_items: u64,
    /// Total clicks dropped because query and item resolved identically.
    pub self_loops: u64,
}

/// Retain click records whose query exactly equals a taxonomy node surface.
pub fn collect_items(
    taxonomy: &Taxonomy,
    vocab: &ConceptVocabulary,
    log: &[ClickRecord],
) -> BTreeMap<ConceptId, Vec<(String, u64)>> {
    let mut out: BTreeMap<ConceptId, Vec<(String, u64)>> = BTreeMap::new();
    for record in log {
        if let Some(id) = vocab.lookup(&record.query) {
            if taxonomy.contains_node(id) {
                out.entry(id)
                    .or_default()
                    .push((record.item_text.clone(), record.count));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct IdentifyResult {
    /// (query, item, clicks) with duplicates merged, sorted by (query, item).
    pub triples: Vec<(ConceptId, ConceptId, u64)>,
    pub unresolved: u64,
    pub self_loops: u64,
}

/// Resolve item texts to vocabulary concepts via longest-substring matching.
pub fn identify_items(
    collected: &BTreeMap<ConceptId, Vec<(String, u64)>>,
    vocab: &ConceptVocabulary,
) -> IdentifyResult {
    let mut merged: BTreeMap<(ConceptId, ConceptId), u64> = BTreeMap::new();
    let mut unresolved = 0u64;
    let mut self_loops = 0u64;
    for (&query, items) in collected {
        for (text, count) in items {
            match match_concept(text, vocab) {
                Some(item) if item == query => self_loops += count,
                Some(item) => *merged.entry((query, item)).or_insert(0) += count,
                None => unresolved += count,
            }
        }
    }
    IdentifyResult {
        triples: merged.into_iter().map(|((q, i), c)| (q, i, c)).collect(),
        unresolved,
        self_loops,
    }
}

/// IF(q,i) = clicks(q,i) / sum_k clicks(q,k); sums to 1 within each query.
pub fn compute_if(triples: &[(ConceptId, ConceptId, u64)]) -> BTreeMap<(ConceptId, ConceptId), f64> {
    let mut per_query: BTreeMap<ConceptId, u64> = BTreeMap::new();
    for &(q, _, c) in triples {
        *per_query.entry(q).or_insert(0) += c;
    }
    triples
        .iter()
        .map(|&(q, i, c)| ((q, i), c as f64 / per_query[&q] as f64))
        .collect()
}

/// IQF(i) = ln(|distinct queries| / |queries that click i|); natural log.
pub fn compute_iqf(triples: &[(ConceptId, ConceptId, u64)]) -> BTreeMap<ConceptId, f64> {
    let queries: BTreeSet<ConceptId> = triples.iter().map(|&(q, _, _)| q).collect();
    let mut clicked_by: BTreeMap<ConceptId, BTreeSet<ConceptId>> = BTreeMap::new();
    for &(q, i, _) in triples {
        clicked_by.entry(i).or_default().insert(q);
    }
    clicked_by
        .into_iter()
        .map(|(i, qs)| (i, (queries.len() as f64 / qs.len() as f64).ln()))
        .collect()
}

/// Edge weight: softmax, within each query, of IF(q,i) * IQF(i)^2.
pub fn assign_weights(
    triples: &[(ConceptId, ConceptId, u64)],
    if_scores: &BTreeMap<(ConceptId, ConceptId), f64>,
    iqf_scores: &BTreeMap<ConceptId, f64>,
) -> Vec<ClickEdge> {
    let mut groups: BTreeMap<ConceptId, Vec<(ConceptId, u64, f64)>> = BTreeMap::new();
    for &(q, i, c) in triples {
        let score = if_scores[&(q, i)] * iqf_scores[&i].powi(2);
        groups.entry(q).or_default().push((i, c, score));
    }
    let mut edges = Vec::new();
    for (query, members) in groups {
        let max = members
            .iter()
            .map(|&(_, _, s)| s)
            .fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = members.iter().map(|&(_, _, s)| (s - max).exp()).sum();
        for (item, clicks, score) in members {
            edges.push(ClickEdge {
                query,
                item,
                clicks,
                weight: (score - max).exp() / denom,
            });
        }
    }
    edges
}

/// The four construction steps in sequence: collect, identify, weight, merge.
pub fn build_graph(
    taxonomy: &Taxonomy,
    vocab: &ConceptVocabulary,
    log: &[ClickRecord],
) -> (HeteroGraph, GraphStats) {
    let collected = collect_items(taxonomy, vocab, log);
    let covered_nodes = collected.len();
    let identified = identify_items(&collected, vocab);
    let if_scores = compute_if(&identified.triples);
    let iqf_scores = compute_iqf(&identified.triples);
    let click_edges = assign_weights(&identified.triples, &if_scores, &iqf_scores);

    let covered_edges = identified
        .triples
        .iter()
        .filter(|&&(q, i, _)| taxonomy.contains_edge(q, i))
        .count();
    let stats = GraphStats {
        taxonomy_nodes: taxonomy.num_nodes(),
        taxonomy_edges: taxonomy.num_edges(),
        covered_nodes,
        cnode: ratio(covered_nodes, taxonomy.num_nodes()),
        covered_edges,
        cedge: ratio(covered_edges, taxonomy.num_edges()),
        new_edges: identified.triples.len() - covered_edges,
        click_edges: click_edges.len(),
        unresolved_items: identified.unresolved,
        self_loops: identified.self_loops,
    };
    (HeteroGraph::assemble(taxonomy, click_edges), stats)
}

fn ratio(num: usize, denom: usize) -> f64 {
    if denom == 0 {
        0.0
    } else {
        num as f64 / denom as f64
    }
}

/// TSV `kind<TAB>src<TAB>dst<TAB>weight` with kind in {taxo, click}.
pub fn write_graph_tsv(path: &Path, vocab: &ConceptVocabulary, graph: &HeteroGraph) -> Result<()> {
    let mut out = String::new();
    for (p, c) in graph.taxo_edges() {
        out.push_str(&format!(
            "taxo\t{}\t{}\t1\n",
            vocab.surface(p),
            vocab.surface(c)
        ));
    }
    for e in graph.click_edges() {
        out.push_str(&format!(
            "click\t{}\t{}\t{}\n",
            vocab.surface(e.query),
            vocab.surface(e.item),
            e.weight
        ));
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(out.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reload a graph written by [`write_graph_tsv`]. Raw click counts are not
/// part of the format; reloaded edges carry `clicks = 1`.
pub fn load_graph_tsv(path: &Path, vocab: &ConceptVocabulary) -> Result<HeteroGraph> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut taxo = Vec::new();
    let mut clicks = Vec::new();
    for (idx, raw) in content.lines().enumerate() {
        let line = idx + 1;
        if raw.is_empty() || raw.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::MalformedLine {
                line,
                message: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let resolve = |surface: &str| {
            vocab.lookup(surface).ok_or_else(|| Error::UnknownConcept {
                surface: surface.to_string(),
            })
        };
        let src = resolve(fields[1])?;
        let dst = resolve(fields[2])?;
        let weight: f64 = fields[3].parse().map_err(|_| Error::MalformedLine {
            line,
            message: format!("weight {:?} is not a float", fields[3]),
        })?;
        match fields[0] {
            "taxo" => taxo.push((src, dst)),
            "click" => clicks.push(ClickEdge {
                query: src,
                item: dst,
                clicks: 1,
                weight,
            }),
            other => {
                return Err(Error::MalformedLine {
                    line,
                    message: format!("unknown edge kind {other:?}"),
                })
            }
        }
    }
    let taxonomy = Taxonomy::new(taxo)?;
    Ok(HeteroGraph::assemble(&taxonomy, clicks))
}
