//! Directed multigraph of cells.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Cells of a transportation network, each a directed link between two nodes.
///
/// Cell identifiers map to dense indices in declaration order. On-ramps,
/// off-ramps and the adjacency relation are derived from the tail/head nodes
/// and the world node, never supplied separately.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTopology {
    world: String,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    tails: Vec<String>,
    heads: Vec<String>,
    onramp: Vec<bool>,
    offramp: Vec<bool>,
    successors: Vec<Vec<usize>>,
    predecessors: Vec<Vec<usize>>,
}

impl NetworkTopology {
    /// Builds a topology from `(id, tail, head)` triples.
    pub fn new<I, S>(world: impl Into<String>, cells: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, S, S)>,
        S: Into<String>,
    {
        let world = world.into();
        let mut ids = Vec::new();
        let mut tails = Vec::new();
        let mut heads = Vec::new();
        let mut index = HashMap::new();
        for (id, tail, head) in cells {
            let (id, tail, head) = (id.into(), tail.into(), head.into());
            if tail == head {
                return Err(Error::InvalidTopology(format!(
                    "cell {id} is a self-loop at node {tail}"
                )));
            }
            if index.insert(id.clone(), ids.len()).is_some() {
                return Err(Error::InvalidTopology(format!("duplicate cell id {id}")));
            }
            ids.push(id);
            tails.push(tail);
            heads.push(head);
        }
        if ids.is_empty() {
            return Err(Error::InvalidTopology("network has no cells".into()));
        }
        let n = ids.len();
        let onramp: Vec<bool> = tails.iter().map(|t| *t == world).collect();
        let offramp: Vec<bool> = heads.iter().map(|h| *h == world).collect();
        let mut successors = vec![Vec::new(); n];
        let mut predecessors = vec![Vec::new(); n];
        for i in 0..n {
            if offramp[i] {
                continue;
            }
            for j in 0..n {
                if heads[i] == tails[j] {
                    successors[i].push(j);
                    predecessors[j].push(i);
                }
            }
        }
        Ok(Self {
            world,
            ids,
            index,
            tails,
            heads,
            onramp,
            offramp,
            successors,
            predecessors,
        })
    }

    pub fn num_cells(&self) -> usize {
        self.ids.len()
    }

    pub fn world(&self) -> &str {
        &self.world
    }

    pub fn cell_id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn cell_ids(&self) -> &[String] {
        &self.ids
    }

    pub fn cell_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn tail(&self, i: usize) -> &str {
        &self.tails[i]
    }

    pub fn head(&self, i: usize) -> &str {
        &self.heads[i]
    }

    pub fn is_onramp(&self, i: usize) -> bool {
        self.onramp[i]
    }

    pub fn is_offramp(&self, i: usize) -> bool {
        self.offramp[i]
    }

    pub fn onramps(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_cells()).filter(|&i| self.onramp[i])
    }

    pub fn offramps(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_cells()).filter(|&i| self.offramp[i])
    }

    /// Cells `j` with `head(i) = tail(j) ≠ world`.
    pub fn successors(&self, i: usize) -> &[usize] {
        &self.successors[i]
    }

    pub fn predecessors(&self, j: usize) -> &[usize] {
        &self.predecessors[j]
    }

    pub fn is_adjacent(&self, i: usize, j: usize) -> bool {
        self.successors[i].contains(&j)
    }

    /// All adjacent pairs in lexicographic order.
    pub fn adjacency(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.successors
            .iter()
            .enumerate()
            .flat_map(|(i, s)| s.iter().map(move |&j| (i, j)))
    }
}
