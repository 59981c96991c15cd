//! AFL-style edge coverage for software models of hardware.
//!
//! Branch points in the device models, the bus host and the harnesses are
//! assigned static 16-bit site ids, each tagged with the component it belongs
//! to. A [`Tracer`] turns the sequence of visited sites into edges
//! (`(prev >> 1) ^ cur`) recorded in a 64 KiB byte map with saturating
//! counters. A [`ScopeFilter`] decides which components are instrumented.
//!
//! Every component keeps its own "previous site" register, as if each one
//! were compiled as a separate instrumented unit. This keeps DUT edges
//! identical whether or not the harness is also instrumented.

use serde::{Deserialize, Serialize};

/// Number of entries in a coverage map.
pub const MAP_SIZE: usize = 1 << 16;

/// Which part of the simulation binary a branch site lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Dut,
    Harness,
    Bus,
}

impl Component {
    const fn slot(self) -> usize {
        match self {
            Component::Dut => 0,
            Component::Harness => 1,
            Component::Bus => 2,
        }
    }
}

/// A statically assigned branch point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Site {
    pub id: u16,
    pub component: Component,
}

impl Site {
    pub const fn dut(id: u16) -> Self {
        Site { id, component: Component::Dut }
    }

    pub const fn harness(id: u16) -> Self {
        Site { id, component: Component::Harness }
    }

    pub const fn bus(id: u16) -> Self {
        Site { id, component: Component::Bus }
    }

    /// Site for one instance of a replicated branch, e.g. the comparator of
    /// lock state `index`. Ids are scattered over the 16-bit space with a
    /// fixed mixing function, so distinct instances may rarely collide the
    /// same way distinct basic blocks do under compiler instrumentation.
    pub const fn indexed(component: Component, base: u16, index: u32) -> Self {
        let mut x = (base as u32).wrapping_mul(0x9E37_79B1) ^ index.wrapping_mul(0x85EB_CA6B);
        x ^= x >> 15;
        x = x.wrapping_mul(0x2C1B_3C6D);
        x ^= x >> 12;
        Site { id: (x ^ (x >> 16)) as u16, component }
    }
}

/// Which instrumented regions contribute edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScopeFilter {
    #[default]
    DutOnly,
    All,
}

impl ScopeFilter {
    pub fn label(self) -> &'static str {
        match self {
            ScopeFilter::DutOnly => "dut_only",
            ScopeFilter::All => "all",
        }
    }

    pub fn admits(self, component: Component) -> bool {
        match self {
            ScopeFilter::DutOnly => component == Component::Dut,
            ScopeFilter::All => true,
        }
    }
}

/// Edge index for a `(prev, cur)` site pair.
#[inline]
pub fn edge_index(prev: u16, cur: u16) -> usize {
    ((prev >> 1) ^ cur) as usize
}

/// AFL hit-count class of a raw counter. Classes are single bits that grow
/// with the count, so comparing them numerically orders them.
#[inline]
pub fn bucket_class(count: u8) -> u8 {
    match count {
        0 => 0,
        1 => 1,
        2 => 2,
        3 => 4,
        4..=7 => 8,
        8..=15 => 16,
        16..=31 => 32,
        32..=127 => 64,
        128..=255 => 128,
    }
}

/// Ordinal (0..=8) of a hit-count class.
#[inline]
fn class_rank(class: u8) -> u32 {
    if class == 0 {
        0
    } else {
        class.trailing_zeros() + 1
    }
}

/// Per-test edge hit map with saturating byte counters.
///
/// Touched indices are remembered so clearing and scanning cost is
/// proportional to the number of distinct edges rather than the map size.
#[derive(Clone)]
pub struct CoverageMap {
    buckets: Box<[u8]>,
    touched: Vec<u16>,
}

impl Default for CoverageMap {
    fn default() -> Self {
        Self::new()
    }
}

impl PartialEq for CoverageMap {
    fn eq(&self, other: &Self) -> bool {
        self.buckets == other.buckets
    }
}

impl Eq for CoverageMap {}

impl std::fmt::Debug for CoverageMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoverageMap").field("edges", &self.edges_covered()).finish()
    }
}

impl CoverageMap {
    pub fn new() -> Self {
        CoverageMap { buckets: vec![0u8; MAP_SIZE].into_boxed_slice(), touched: Vec::new() }
    }

    /// Records one traversal of the `prev -> cur` edge.
    #[inline]
    pub fn trace_edge(&mut self, prev: u16, cur: u16) {
        self.hit(edge_index(prev, cur));
    }

    #[inline]
    pub fn hit(&mut self, index: usize) {
        let b = &mut self.buckets[index];
        if *b == 0 {
            self.touched.push(index as u16);
        }
        *b = b.saturating_add(1);
    }

    pub fn get(&self, index: usize) -> u8 {
        self.buckets[index]
    }

    pub fn clear(&mut self) {
        for &i in &self.touched {
            self.buckets[i as usize] = 0;
        }
        self.touched.clear();
    }

    /// Number of edges with a nonzero count.
    pub fn edges_covered(&self) -> usize {
        self.touched.len()
    }

    /// Nonzero `(index, count)` pairs in first-hit order.
    pub fn iter_nonzero(&self) -> impl Iterator<Item = (usize, u8)> + '_ {
        self.touched.iter().map(|&i| (i as usize, self.buckets[i as usize]))
    }

    /// Sorted list of covered edge indices.
    pub fn covered_indices(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.touched.iter().map(|&i| i as usize).collect();
        v.sort_unstable();
        v
    }
}

/// Campaign-wide record of the highest hit-count class seen per edge.
#[derive(Clone)]
pub struct GlobalCoverage {
    classes: Box<[u8]>,
    covered: usize,
    class_total: u64,
}

impl Default for GlobalCoverage {
    fn default() -> Self {
        Self::new()
    }
}

impl std::fmt::Debug for GlobalCoverage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GlobalCoverage")
            .field("edges", &self.covered)
            .field("class_total", &self.class_total)
            .finish()
    }
}

impl GlobalCoverage {
    pub fn new() -> Self {
        GlobalCoverage { classes: vec![0u8; MAP_SIZE].into_boxed_slice(), covered: 0, class_total: 0 }
    }

    /// True iff some edge of `test` lands in a higher class than recorded.
    pub fn is_interesting(&self, test: &CoverageMap) -> bool {
        test.iter_nonzero().any(|(i, c)| bucket_class(c) > self.classes[i])
    }

    /// Raises each edge's recorded class to the test's class. Returns the
    /// number of edges whose class increased.
    pub fn merge(&mut self, test: &CoverageMap) -> usize {
        let mut raised = 0;
        for (i, c) in test.iter_nonzero() {
            let class = bucket_class(c);
            let slot = &mut self.classes[i];
            if class > *slot {
                if *slot == 0 {
                    self.covered += 1;
                }
                self.class_total += u64::from(class_rank(class) - class_rank(*slot));
                *slot = class;
                raised += 1;
            }
        }
        raised
    }

    /// Merges and reports whether anything changed.
    pub fn merge_if_interesting(&mut self, test: &CoverageMap) -> bool {
        self.merge(test) > 0
    }

    pub fn class_of(&self, index: usize) -> u8 {
        self.classes[index]
    }

    /// Distinct edges ever covered.
    pub fn edges_covered(&self) -> usize {
        self.covered
    }

    /// Sum over edges of the class ordinal; never decreases under merge.
    pub fn class_total(&self) -> u64 {
        self.class_total
    }

    pub fn covered_indices(&self) -> Vec<usize> {
        (0..MAP_SIZE).filter(|&i| self.classes[i] != 0).collect()
    }
}

/// Receiver of branch-site hits.
pub trait EdgeSink {
    fn hit(&mut self, site: Site);
}

/// Discards all hits. Used where no feedback is wanted (the CRV testbench).
impl EdgeSink for () {
    #[inline]
    fn hit(&mut self, _site: Site) {}
}

/// Converts site hits into edges on a [`CoverageMap`], honoring the scope.
#[derive(Debug, Clone)]
pub struct Tracer {
    map: CoverageMap,
    scope: ScopeFilter,
    prev: [u16; 3],
    enabled: bool,
}

impl Tracer {
    pub fn new(scope: ScopeFilter) -> Self {
        Tracer { map: CoverageMap::new(), scope, prev: [0; 3], enabled: true }
    }

    pub fn scope(&self) -> ScopeFilter {
        self.scope
    }

    pub fn map(&self) -> &CoverageMap {
        &self.map
    }

    /// Clears the map and the previous-site registers.
    pub fn reset(&mut self) {
        self.map.clear();
        self.prev = [0; 3];
    }

    pub fn set_enabled(&mut self, enabled: bool) {
        self.enabled = enabled;
    }
}

impl EdgeSink for Tracer {
    #[inline]
    fn hit(&mut self, site: Site) {
        if !self.enabled || !self.scope.admits(site.component) {
            return;
        }
        let prev = &mut self.prev[site.component.slot()];
        self.map.trace_edge(*prev, site.id);
        *prev = site.id;
    }
}

/// Set of visited states of a finite-state machine with `2^N` states.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FsmCoverage {
    num_states: u32,
    visited: Vec<u64>,
    count: u32,
}

impl FsmCoverage {
    pub fn new(num_states: u32) -> Self {
        let words = (num_states as usize).div_ceil(64);
        FsmCoverage { num_states, visited: vec![0; words], count: 0 }
    }

    pub fn num_states(&self) -> u32 {
        self.num_states
    }

    #[inline]
    pub fn visit(&mut self, state: u32) {
        debug_assert!(state < self.num_states);
        let (w, b) = ((state / 64) as usize, state % 64);
        if self.visited[w] & (1 << b) == 0 {
            self.visited[w] |= 1 << b;
            self.count += 1;
        }
    }

    pub fn contains(&self, state: u32) -> bool {
        state < self.num_states && self.visited[(state / 64) as usize] & (1 << (state % 64)) != 0
    }

    pub fn visited_count(&self) -> u32 {
        self.count
    }

    pub fn fraction(&self) -> f64 {
        f64::from(self.count) / f64::from(self.num_states)
    }

    pub fn is_full(&self) -> bool {
        self.count == self.num_states
    }

    /// Adds `other`'s states; returns how many were new.
    pub fn merge(&mut self, other: &FsmCoverage) -> u32 {
        debug_assert_eq!(self.num_states, other.num_states);
        let before = self.count;
        for (a, b) in self.visited.iter_mut().zip(&other.visited) {
            *a |= *b;
        }
        self.count = self.visited.iter().map(|w| w.count_ones()).sum();
        self.count - before
    }

    pub fn clear(&mut self) {
        self.visited.iter_mut().for_each(|w| *w = 0);
        self.count = 0;
    }
}

/// Fraction of the `2^state_bits` states that appear in `trace`.
pub fn fsm_coverage_fraction(trace: impl IntoIterator<Item = u32>, state_bits: u32) -> f64 {
    let mut cov = FsmCoverage::new(1 << state_bits);
    for s in trace {
        cov.visit(s);
    }
    cov.fraction()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_edge_twice_counts_two() {
        let mut m = CoverageMap::new();
        m.trace_edge(10, 20);
        m.trace_edge(10, 20);
        assert_eq!(m.get(edge_index(10, 20)), 2);
        assert_eq!(m.edges_covered(), 1);
    }

    #[test]
    fn edge_hash_is_shift_xor() {
        assert_eq!(edge_index(0x0003, 0x0100), 0x0101);
        assert_eq!(edge_index(0xFFFF, 0x0000), 0x7FFF);
    }

    #[test]
    fn counters_saturate() {
        let mut m = CoverageMap::new();
        for _ in 0..300 {
            m.hit(7);
        }
        assert_eq!(m.get(7), 255);
        m.hit(7);
        assert_eq!(m.get(7), 255);
    }

    #[test]
    fn harness_edges_dropped_under_dut_only() {
        let mut t = Tracer::new(ScopeFilter::DutOnly);
        t.hit(Site::harness(5));
        t.hit(Site::bus(6));
        assert_eq!(t.map().edges_covered(), 0);
        t.hit(Site::dut(5));
        assert_eq!(t.map().edges_covered(), 1);
    }

    #[test]
    fn clear_resets_everything() {
        let mut m = CoverageMap::new();
        m.hit(1);
        m.hit(65535);
        m.clear();
        assert_eq!(m, CoverageMap::new());
        assert_eq!(m.edges_covered(), 0);
    }

    #[test]
    fn bucket_classes() {
        let expect = [(0u8, 0u8), (1, 1), (2, 2), (3, 4), (4, 8), (7, 8), (8, 16), (15, 16), (16, 32), (31, 32), (32, 64), (127, 64), (128, 128), (255, 128)];
        for (count, class) in expect {
            assert_eq!(bucket_class(count), class, "count {count}");
        }
    }

    #[test]
    fn interesting_against_empty_global() {
        let g = GlobalCoverage::new();
        let mut m = CoverageMap::new();
        assert!(!g.is_interesting(&m));
        m.hit(3);
        assert!(g.is_interesting(&m));
    }

    #[test]
    fn identical_map_not_interesting() {
        let mut g = GlobalCoverage::new();
        let mut m = CoverageMap::new();
        m.hit(3);
        m.hit(9);
        g.merge(&m);
        assert!(!g.is_interesting(&m));
    }

    #[test]
    fn class_one_to_two_is_interesting() {
        let mut g = GlobalCoverage::new();
        let mut m = CoverageMap::new();
        m.hit(42);
        g.merge(&m);
        m.hit(42);
        assert!(g.is_interesting(&m));
        g.merge(&m);
        assert_eq!(g.class_of(42), 2);
        // a lower class later is not new
        let mut low = CoverageMap::new();
        low.hit(42);
        assert!(!g.is_interesting(&low));
    }

    #[test]
    fn fsm_fraction_examples() {
        assert_eq!(fsm_coverage_fraction([0], 2), 0.25);
        assert_eq!(fsm_coverage_fraction([0, 1, 2, 3], 2), 1.0);
        assert_eq!(fsm_coverage_fraction([0, 0, 0], 2), 0.25);
        assert_eq!(fsm_coverage_fraction([0], 3), 1.0 / 8.0);
    }

    #[test]
    fn fsm_merge_counts_new_states() {
        let mut a = FsmCoverage::new(128);
        a.visit(0);
        a.visit(100);
        let mut b = FsmCoverage::new(128);
        b.visit(100);
        b.visit(127);
        assert_eq!(a.merge(&b), 1);
        assert_eq!(a.visited_count(), 3);
        assert!(a.contains(127));
        assert!(!a.is_full());
    }

    #[test]
    fn indexed_sites_are_spread() {
        let ids: std::collections::HashSet<u16> =
            (0..64).map(|i| Site::indexed(Component::Dut, 0x100, i).id).collect();
        assert!(ids.len() >= 63);
    }
}
