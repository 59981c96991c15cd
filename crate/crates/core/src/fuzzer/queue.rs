//! Seed queue with AFL-style favoured-entry culling.

use std::collections::HashMap;

use rand::Rng;

/// Where a test case came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    /// The `n`-th initial seed.
    Seed(usize),
    /// Mutated from queue entry `parent` by the named stage.
    Mutation { parent: usize, stage: &'static str },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TestCase {
    pub bytes: Vec<u8>,
    pub provenance: Provenance,
    /// Exec index (1-based) at which the case was produced.
    pub found_at: u64,
}

#[derive(Debug, Clone)]
pub(crate) struct QueueEntry {
    pub case: TestCase,
    pub edges: Vec<usize>,
    pub depth: u32,
    pub favored: bool,
    pub fuzzed: bool,
}

/// The queue plus per-edge best entries.
#[derive(Debug, Default)]
pub(crate) struct Queue {
    pub entries: Vec<QueueEntry>,
    /// Edge -> (smallest entry length covering it, entry index).
    top_rated: HashMap<usize, (usize, usize)>,
    dirty: bool,
    cursor: usize,
    pending_favored: usize,
}

impl Queue {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn push(&mut self, case: TestCase, edges: Vec<usize>, depth: u32) -> usize {
        let idx = self.entries.len();
        let len = case.bytes.len();
        for &e in &edges {
            match self.top_rated.get(&e) {
                // strictly smaller wins, so ties keep the earlier entry
                Some(&(best, _)) if best <= len => {}
                _ => {
                    self.top_rated.insert(e, (len, idx));
                    self.dirty = true;
                }
            }
        }
        self.entries.push(QueueEntry { case, edges, depth, favored: false, fuzzed: false });
        idx
    }

    /// Recomputes the favoured set: walking edges in index order, each
    /// edge not yet covered by a favoured entry promotes its top entry.
    fn cull(&mut self) {
        if !self.dirty {
            return;
        }
        self.dirty = false;
        for e in &mut self.entries {
            e.favored = false;
        }
        let mut edges: Vec<(&usize, &(usize, usize))> = self.top_rated.iter().collect();
        edges.sort_unstable_by_key(|(e, _)| **e);
        let mut covered = std::collections::HashSet::new();
        for (edge, &(_, idx)) in edges {
            if covered.contains(edge) {
                continue;
            }
            let entry = &mut self.entries[idx];
            entry.favored = true;
            covered.extend(entry.edges.iter().copied());
        }
        self.pending_favored = self.entries.iter().filter(|e| e.favored && !e.fuzzed).count();
    }

    /// Next entry to fuzz: round-robin, probabilistically skipping entries
    /// that are not favoured or were already fuzzed.
    pub fn next<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        self.cull();
        loop {
            let idx = self.cursor % self.entries.len();
            self.cursor = idx + 1;
            let e = &self.entries[idx];
            let skip = if self.pending_favored > 0 {
                (e.fuzzed || !e.favored) && rng.gen_range(0..100) < 99
            } else if !e.favored && self.entries.len() > 10 {
                rng.gen_range(0..100) < if e.fuzzed { 95 } else { 75 }
            } else {
                false
            };
            if !skip {
                return idx;
            }
        }
    }

    pub fn mark_fuzzed(&mut self, idx: usize) {
        let e = &mut self.entries[idx];
        if !e.fuzzed {
            e.fuzzed = true;
            if e.favored {
                self.pending_favored = self.pending_favored.saturating_sub(1);
            }
        }
    }
}

/// AFL depth multiplier on the mutation budget of an entry.
pub(crate) fn depth_multiplier(depth: u32) -> u64 {
    match depth {
        0..=3 => 1,
        4..=7 => 2,
        8..=13 => 3,
        14..=25 => 4,
        _ => 5,
    }
}
