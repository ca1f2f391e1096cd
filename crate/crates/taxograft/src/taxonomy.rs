//! Rooted DAG of hypernym -> hyponym edges.
//!
//! The loader guarantees acyclicity; everything downstream (dataset
//! generation, expansion, metrics) relies on that invariant, so the
//! constructor is the only way to build a [`Taxonomy`].

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::corpus::{ConceptId, ConceptVocabulary};
use crate::error::{Error, Result};
use crate::text::normalize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct TaxonomyEdge {
    pub parent: ConceptId,
    pub child: ConceptId,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Taxonomy {
    nodes: BTreeSet<ConceptId>,
    edges: BTreeSet<(ConceptId, ConceptId)>,
    children: BTreeMap<ConceptId, Vec<ConceptId>>,
    parents: BTreeMap<ConceptId, Vec<ConceptId>>,
}

impl Taxonomy {
    /// Build from (parent, child) pairs. Parallel duplicates collapse;
    /// self-loops and cycles are rejected with a witness path.
    pub fn new(edge_list: impl IntoIterator<Item = (ConceptId, ConceptId)>) -> Result<Self> {
        let mut edges = BTreeSet::new();
        for (p, c) in edge_list {
            if p == c {
                return Err(Error::CycleDetected {
                    path: vec![p.to_string(), c.to_string()],
                });
            }
            edges.insert((p, c));
        }
        let mut nodes = BTreeSet::new();
        let mut children: BTreeMap<ConceptId, Vec<ConceptId>> = BTreeMap::new();
        let mut parents: BTreeMap<ConceptId, Vec<ConceptId>> = BTreeMap::new();
        for &(p, c) in &edges {
            nodes.insert(p);
            nodes.insert(c);
            children.entry(p).or_default().push(c);
            parents.entry(c).or_default().push(p);
        }
        let taxonomy = Taxonomy {
            nodes,
            edges,
            children,
            parents,
        };
        if let Some(cycle) = taxonomy.find_cycle() {
            return Err(Error::CycleDetected {
                path: cycle.iter().map(|id| id.to_string()).collect(),
            });
        }
        Ok(taxonomy)
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = ConceptId> + '_ {
        self.nodes.iter().copied()
    }

    pub fn edges(&self) -> impl Iterator<Item = TaxonomyEdge> + '_ {
        self.edges
            .iter()
            .map(|&(parent, child)| TaxonomyEdge { parent, child })
    }

    pub fn contains_node(&self, id: ConceptId) -> bool {
        self.nodes.contains(&id)
    }

    pub fn contains_edge(&self, parent: ConceptId, child: ConceptId) -> bool {
        self.edges.contains(&(parent, child))
    }

    pub fn children(&self, id: ConceptId) -> &[ConceptId] {
        self.children.get(&id).map_or(&[], Vec::as_slice)
    }

    pub fn parents(&self, id: ConceptId) -> &[ConceptId] {
        self.parents.get(&id).map_or(&[], Vec::as_slice)
    }

    /// Nodes with no parent, in id order.
    pub fn roots(&self) -> Vec<ConceptId> {
        self.nodes
            .iter()
            .copied()
            .filter(|n| self.parents(*n).is_empty())
            .collect()
    }

    /// Breadth-first levels from the roots; each node appears once at its
    /// shortest depth.
    pub fn levels(&self) -> Vec<Vec<ConceptId>> {
        let mut seen: BTreeSet<ConceptId> = BTreeSet::new();
        let mut levels = Vec::new();
        let mut frontier = self.roots();
        while !frontier.is_empty() {
            seen.extend(frontier.iter().copied());
            levels.push(frontier.clone());
            let mut next = BTreeSet::new();
            for &n in &frontier {
                for &c in self.children(n) {
                    if !seen.contains(&c) {
                        next.insert(c);
                    }
                }
            }
            frontier = next.into_iter().collect();
        }
        levels
    }

    /// All strict descendants of `id`.
    pub fn descendants(&self, id: ConceptId) -> BTreeSet<ConceptId> {
        let mut out = BTreeSet::new();
        let mut stack: Vec<ConceptId> = self.children(id).to_vec();
        while let Some(n) = stack.pop() {
            if out.insert(n) {
                stack.extend_from_slice(self.children(n));
            }
        }
        out
    }

    /// All strict ancestors of `id`.
    pub fn ancestors(&self, id: ConceptId) -> BTreeSet<ConceptId> {
        let mut out = BTreeSet::new();
        let mut stack: Vec<ConceptId> = self.parents(id).to_vec();
        while let Some(n) = stack.pop() {
            if out.insert(n) {
                stack.extend_from_slice(self.parents(n));
            }
        }
        out
    }

    /// Every (ancestor, descendant) pair.
    pub fn transitive_closure(&self) -> BTreeSet<(ConceptId, ConceptId)> {
        let mut closure = BTreeSet::new();
        for &n in &self.nodes {
            for d in self.descendants(n) {
                closure.insert((n, d));
            }
        }
        closure
    }

    /// Minimal equivalent DAG: drops every edge (a, c) for which a path
    /// a -> ... -> c of length >= 2 exists. Reachability is unchanged.
    pub fn transitive_reduce(&self) -> Taxonomy {
        let mut desc: BTreeMap<ConceptId, BTreeSet<ConceptId>> = BTreeMap::new();
        for &n in &self.nodes {
            desc.insert(n, self.descendants(n));
        }
        let kept = self
            .edges
            .iter()
            .copied()
            .filter(|&(a, c)| !self.children(a).iter().any(|&b| b != c && desc[&b].contains(&c)));
        Taxonomy::new(kept).expect("subgraph of a DAG is a DAG")
    }

    fn find_cycle(&self) -> Option<Vec<ConceptId>> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            White,
            Gray,
            Black,
        }
        let mut marks: BTreeMap<ConceptId, Mark> =
            self.nodes.iter().map(|&n| (n, Mark::White)).collect();
        let mut stack_path: Vec<ConceptId> = Vec::new();

        // Iterative DFS; (node, next child index) frames.
        for &start in &self.nodes {
            if marks[&start] != Mark::White {
                continue;
            }
            let mut frames: Vec<(ConceptId, usize)> = vec![(start, 0)];
            marks.insert(start, Mark::Gray);
            stack_path.push(start);
            while let Some(&mut (node, ref mut idx)) = frames.last_mut() {
                let kids = self.children(node);
                if *idx < kids.len() {
                    let next = kids[*idx];
                    *idx += 1;
                    match marks[&next] {
                        Mark::Gray => {
                            let pos = stack_path.iter().position(|&n| n == next).unwrap();
                            let mut cycle: Vec<ConceptId> = stack_path[pos..].to_vec();
                            cycle.push(next);
                            return Some(cycle);
                        }
                        Mark::White => {
                            marks.insert(next, Mark::Gray);
                            stack_path.push(next);
                            frames.push((next, 0));
                        }
                        Mark::Black => {}
                    }
                } else {
                    marks.insert(node, Mark::Black);
                    stack_path.pop();
                    frames.pop();
                }
            }
        }
        None
    }
}

/// Result of loading a taxonomy file: surfaces absent from the vocabulary
/// are appended to it and reported here.
#[derive(Debug)]
pub struct TaxonomyLoad {
    pub taxonomy: Taxonomy,
    pub added_concepts: Vec<ConceptId>,
}

/// TSV `parent<TAB>child`, one edge per line.
pub fn load_taxonomy(path: &Path, vocab: &mut ConceptVocabulary) -> Result<TaxonomyLoad> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut edge_list = Vec::new();
    let mut added = Vec::new();
    for (idx, raw) in content.lines().enumerate() {
        let line = idx + 1;
        if raw.is_empty() || raw.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::MalformedLine {
                line,
                message: format!("expected `parent<TAB>child`, found {} fields", fields.len()),
            });
        }
        let parent = normalize(fields[0]);
        let child = normalize(fields[1]);
        if parent.is_empty() || child.is_empty() {
            return Err(Error::MalformedLine {
                line,
                message: "parent and child must be non-empty".to_string(),
            });
        }
        let mut resolve = |surface: String| match vocab.lookup(&surface) {
            Some(id) => id,
            None => {
                let id = vocab.get_or_insert(&surface);
                added.push(id);
                id
            }
        };
        let p = resolve(parent);
        let c = resolve(child);
        edge_list.push((p, c));
    }
    let taxonomy = Taxonomy::new(edge_list).map_err(|e| match e {
        // Re-express id witnesses as surfaces now that we have the vocab.
        Error::CycleDetected { path } => Error::CycleDetected {
            path: path
                .iter()
                .map(|s| {
                    s.parse::<usize>()
                        .map(|i| vocab.surface(ConceptId(i)).to_string())
                        .unwrap_or_else(|_| s.clone())
                })
                .collect(),
        },
        other => other,
    })?;
    Ok(TaxonomyLoad {
        taxonomy,
        added_concepts: added,
    })
}

/// Inverse of [`load_taxonomy`]; edges in (parent, child) surface order.
pub fn write_taxonomy(path: &Path, vocab: &ConceptVocabulary, taxonomy: &Taxonomy) -> Result<()> {
    let mut out = String::new();
    for e in taxonomy.edges() {
        out.push_str(vocab.surface(e.parent));
        out.push('\t');
        out.push_str(vocab.surface(e.child));
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(out.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;
    use tempfile::NamedTempFile;

    fn write_temp(content: &str) -> NamedTempFile {
        let mut f = NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn id(n: usize) -> ConceptId {
        ConceptId(n)
    }

    #[test]
    fn loads_single_edge() {
        let mut vocab = ConceptVocabulary::new();
        vocab.insert("面包".into()).unwrap();
        vocab.insert("黑麦面包".into()).unwrap();
        let f = write_temp("面包\t黑麦面包\n");
        let load = load_taxonomy(f.path(), &mut vocab).unwrap();
        assert_eq!(load.taxonomy.num_nodes(), 2);
        assert_eq!(load.taxonomy.num_edges(), 1);
        assert!(load.added_concepts.is_empty());
    }

    #[test]
    fn rejects_two_cycle_with_witness() {
        let mut vocab = ConceptVocabulary::new();
        let f = write_temp("a\tb\nb\ta\n");
        match load_taxonomy(f.path(), &mut vocab) {
            Err(Error::CycleDetected { path }) => {
                assert!(path.len() >= 3);
                assert_eq!(path.first(), path.last());
            }
            other => panic!("expected CycleDetected, got {other:?}"),
        }
    }

    #[test]
    fn collapses_duplicate_edges() {
        let mut vocab = ConceptVocabulary::new();
        let f = write_temp("a\tb\na\tb\n");
        let load = load_taxonomy(f.path(), &mut vocab).unwrap();
        assert_eq!(load.taxonomy.num_edges(), 1);
    }

    #[test]
    fn appends_unknown_surfaces_and_reports_them() {
        let mut vocab = ConceptVocabulary::new();
        vocab.insert("a".into()).unwrap();
        let f = write_temp("a\tb\n");
        let load = load_taxonomy(f.path(), &mut vocab).unwrap();
        assert_eq!(load.added_concepts.len(), 1);
        assert_eq!(vocab.surface(load.added_concepts[0]), "b");
    }

    #[test]
    fn rejects_self_loop() {
        let mut vocab = ConceptVocabulary::new();
        let f = write_temp("a\ta\n");
        assert!(matches!(
            load_taxonomy(f.path(), &mut vocab),
            Err(Error::CycleDetected { .. })
        ));
    }

    #[test]
    fn levels_are_breadth_first() {
        let t = Taxonomy::new([
            (id(0), id(1)),
            (id(0), id(2)),
            (id(1), id(3)),
            (id(2), id(3)),
        ])
        .unwrap();
        assert_eq!(
            t.levels(),
            vec![vec![id(0)], vec![id(1), id(2)], vec![id(3)]]
        );
    }

    #[test]
    fn ancestors_and_descendants_are_transitive() {
        let t = Taxonomy::new([(id(0), id(1)), (id(1), id(2)), (id(2), id(3))]).unwrap();
        assert_eq!(t.descendants(id(0)), [id(1), id(2), id(3)].into());
        assert_eq!(t.ancestors(id(3)), [id(0), id(1), id(2)].into());
    }

    #[test]
    fn reduce_drops_triangle_shortcut() {
        let t = Taxonomy::new([(id(0), id(1)), (id(1), id(2)), (id(0), id(2))]).unwrap();
        let r = t.transitive_reduce();
        assert_eq!(r.num_edges(), 2);
        assert!(!r.contains_edge(id(0), id(2)));
        assert!(r.contains_edge(id(0), id(1)));
        assert!(r.contains_edge(id(1), id(2)));
    }

    #[test]
    fn reduce_keeps_already_reduced_chain() {
        let t = Taxonomy::new([(id(0), id(1)), (id(1), id(2))]).unwrap();
        assert_eq!(t.transitive_reduce(), t);
    }

    /// Independent closure oracle: boolean Floyd-Warshall over the edge set.
    fn closure_oracle(n: usize, edges: &BTreeSet<(ConceptId, ConceptId)>) -> Vec<Vec<bool>> {
        let mut reach = vec![vec![false; n]; n];
        for &(a, b) in edges {
            reach[a.0][b.0] = true;
        }
        for k in 0..n {
            for i in 0..n {
                if reach[i][k] {
                    for j in 0..n {
                        if reach[k][j] {
                            reach[i][j] = true;
                        }
                    }
                }
            }
        }
        reach
    }

    fn random_dag(n: usize, density: f64, seed: u64) -> Taxonomy {
        use rand::Rng;
        let mut rng = crate::rng::rng_from(seed);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.gen::<f64>() < density {
                    edges.push((id(i), id(j)));
                }
            }
        }
        Taxonomy::new(edges).unwrap()
    }

    #[test]
    fn reduce_preserves_reachability_and_is_minimal_on_random_dags() {
        for seed in 0..100u64 {
            let t = random_dag(30, 0.12, seed);
            let r = t.transitive_reduce();
            let before = closure_oracle(30, &t.edges.iter().copied().collect());
            let after = closure_oracle(30, &r.edges.iter().copied().collect());
            assert_eq!(before, after, "reachability changed at seed {seed}");
            // Minimality: no surviving edge has an alternate path of length >= 2.
            for e in r.edges() {
                let mut without: BTreeSet<_> = r.edges.clone();
                without.remove(&(e.parent, e.child));
                let reach = closure_oracle(30, &without);
                assert!(
                    !reach[e.parent.0][e.child.0],
                    "edge ({},{}) is redundant at seed {seed}",
                    e.parent,
                    e.child
                );
            }
        }
    }

    proptest! {
        #[test]
        fn closure_matches_oracle(seed in 0u64..500) {
            let t = random_dag(12, 0.2, seed);
            let closure = t.transitive_closure();
            let reach = closure_oracle(12, &t.edges.iter().copied().collect());
            for i in 0..12 {
                for j in 0..12 {
                    prop_assert_eq!(reach[i][j], closure.contains(&(id(i), id(j))));
                }
            }
        }
    }
}
