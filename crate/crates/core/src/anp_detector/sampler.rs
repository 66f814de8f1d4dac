//! Hierarchical triple sampling.
//!
//! Each triple is (anchor, positive with the same pair, negative with the same
//! noun but a different pair), so the negative doubles as a noun-level
//! positive. After picking an anchor the sampler stays on that noun, cycling
//! through its sub-categories, until every sub-category has been used or the
//! batch is full; then it draws a fresh anchor. Each image is emitted at most
//! once per epoch.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DetectorError;
use crate::dataset::ImageRecord;
use crate::labels::{Anp, LabelHierarchy};

/// Anything the sampler can draw from.
pub trait Labeled {
    fn id(&self) -> &str;
    fn anp(&self) -> Option<&Anp>;
}

impl Labeled for ImageRecord {
    fn id(&self) -> &str {
        &self.id
    }

    fn anp(&self) -> Option<&Anp> {
        self.anp.as_ref()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BatchTriple {
    pub anchor: String,
    pub positive: String,
    pub negative: String,
}

/// Ids already emitted in the current epoch.
#[derive(Debug, Clone, Default)]
pub struct EpochState {
    visited: HashSet<String>,
}

impl EpochState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_visited(&self, id: &str) -> bool {
        self.visited.contains(id)
    }

    pub fn visited_count(&self) -> usize {
        self.visited.len()
    }

    pub fn reset(&mut self) {
        self.visited.clear();
    }
}

/// Unvisited item indices per pair, restricted to pairs in the hierarchy.
struct Pool<'h> {
    hierarchy: &'h LabelHierarchy,
    by_anp: BTreeMap<Anp, Vec<usize>>,
}

impl<'h> Pool<'h> {
    fn new<T: Labeled>(items: &[T], hierarchy: &'h LabelHierarchy, state: &EpochState) -> Self {
        let mut by_anp: BTreeMap<Anp, Vec<usize>> = BTreeMap::new();
        for (i, item) in items.iter().enumerate() {
            if let Some(anp) = item.anp() {
                if hierarchy.contains(anp) && !state.is_visited(item.id()) {
                    by_anp.entry(anp.clone()).or_default().push(i);
                }
            }
        }
        Pool { hierarchy, by_anp }
    }

    fn available(&self, anp: &Anp) -> usize {
        self.by_anp.get(anp).map_or(0, Vec::len)
    }

    fn siblings(&self, anp: &Anp) -> impl Iterator<Item = &'h Anp> + '_ {
        let anp = anp.clone();
        self.hierarchy
            .group(anp.noun())
            .into_iter()
            .flatten()
            .filter(move |a| **a != anp)
    }

    /// A pair can anchor a triple if it has two unvisited images and some
    /// sibling pair still has one.
    fn can_anchor(&self, anp: &Anp) -> bool {
        self.available(anp) >= 2 && self.siblings(anp).any(|s| self.available(s) >= 1)
    }

    fn take<R: Rng + ?Sized>(&mut self, anp: &Anp, rng: &mut R) -> usize {
        let v = self.by_anp.get_mut(anp).expect("pair has unvisited images");
        let k = rng.gen_range(0..v.len());
        v.remove(k)
    }
}

/// Draws up to `batch_size / 3` triples from unvisited items.
///
/// Returns [`DetectorError::EpochExhausted`] when not even one triple can be
/// formed, which is the end-of-epoch signal.
pub fn sample_hierarchical_batch<T: Labeled, R: Rng + ?Sized>(
    items: &[T],
    hierarchy: &LabelHierarchy,
    batch_size: usize,
    rng: &mut R,
    state: &mut EpochState,
) -> Result<Vec<BatchTriple>, DetectorError> {
    if batch_size < 3 {
        return Err(DetectorError::SamplerBatchSize(batch_size));
    }
    let mut pool = Pool::new(items, hierarchy, state);
    let mut triples = Vec::new();

    'batch: while (triples.len() + 1) * 3 <= batch_size {
        // Fresh anchor: uniform over unvisited images whose pair can anchor.
        let anchors: Vec<(&Anp, usize)> = pool
            .by_anp
            .iter()
            .filter(|(a, _)| pool.can_anchor(a))
            .flat_map(|(a, v)| v.iter().map(move |&i| (a, i)))
            .collect();
        let Some(&(anchor_anp, _)) = anchors.choose(rng) else {
            break;
        };
        let mut anchor_anp = anchor_anp.clone();
        let mut covered: BTreeSet<Anp> = BTreeSet::new();

        loop {
            let a = pool.take(&anchor_anp, rng);
            let p = pool.take(&anchor_anp, rng);
            let negatives: Vec<&Anp> = pool.siblings(&anchor_anp).filter(|s| pool.available(s) >= 1).collect();
            let fresh: Vec<&Anp> = negatives.iter().copied().filter(|s| !covered.contains(*s)).collect();
            let neg_anp = if fresh.is_empty() { &negatives } else { &fresh }
                .choose(rng)
                .copied()
                .expect("anchor was eligible")
                .clone();
            let n = pool.take(&neg_anp, rng);

            for &i in &[a, p, n] {
                state.visited.insert(items[i].id().to_string());
            }
            triples.push(BatchTriple {
                anchor: items[a].id().to_string(),
                positive: items[p].id().to_string(),
                negative: items[n].id().to_string(),
            });
            covered.insert(anchor_anp.clone());
            covered.insert(neg_anp);

            if (triples.len() + 1) * 3 > batch_size {
                break 'batch;
            }
            // Continue on the same noun with a sub-category not yet used.
            let next: Vec<&Anp> = hierarchy
                .group(anchor_anp.noun())
                .into_iter()
                .flatten()
                .filter(|s| !covered.contains(*s) && pool.can_anchor(s))
                .collect();
            match next.choose(rng) {
                Some(s) => anchor_anp = (*s).clone(),
                None => break,
            }
        }
    }

    if triples.is_empty() {
        return Err(DetectorError::EpochExhausted);
    }
    Ok(triples)
}

/// Ids in first-appearance order with duplicates removed: the flat batch the
/// loss consumes.
pub fn flatten_batch(triples: &[BatchTriple]) -> Vec<String> {
    let mut seen = HashSet::new();
    triples
        .iter()
        .flat_map(|t| [&t.anchor, &t.positive, &t.negative])
        .filter(|id| seen.insert(id.as_str()))
        .cloned()
        .collect()
}
