//! Degree profiles and the random graphs users collaborate over.
//!
//! Static graphs come from the configuration model: every user draws a target
//! degree from a [`DegreeProfile`], stubs are paired uniformly at random and
//! self-loops and repeated edges are cut. Dynamic graphs keep a fixed expected
//! degree per user and rebuild the edge set from Poisson-distributed realized
//! degrees each time the topology changes.
//!
//! All stochastic functions take the caller's generator so a whole run can be
//! driven from one seed. Draw order inside [`configuration_graph`] is: odd-sum
//! repair, then the stub shuffle.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

const PMF_SUM_TOL: f64 = 1e-12;

/// Distribution of user degrees over a finite, ascending support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProfile", into = "RawProfile")]
pub struct DegreeProfile {
    support: Vec<usize>,
    pmf: Vec<f64>,
    mean: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProfile {
    support: Vec<usize>,
    pmf: Vec<f64>,
}

impl TryFrom<RawProfile> for DegreeProfile {
    type Error = Error;

    fn try_from(raw: RawProfile) -> Result<Self> {
        DegreeProfile::new(raw.support, raw.pmf)
    }
}

impl From<DegreeProfile> for RawProfile {
    fn from(p: DegreeProfile) -> Self {
        RawProfile {
            support: p.support,
            pmf: p.pmf,
        }
    }
}

impl DegreeProfile {
    pub fn new(support: Vec<usize>, pmf: Vec<f64>) -> Result<Self> {
        if support.is_empty() {
            return Err(invalid("degree profile has an empty support"));
        }
        if support.len() != pmf.len() {
            return Err(invalid(format!(
                "support has {} degrees but pmf has {} entries",
                support.len(),
                pmf.len()
            )));
        }
        if support[0] == 0 {
            return Err(invalid("degrees must be at least 1"));
        }
        if support.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("support must be strictly ascending"));
        }
        if pmf.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(invalid("pmf entries must be finite and nonnegative"));
        }
        let total: f64 = pmf.iter().sum();
        if (total - 1.0).abs() > PMF_SUM_TOL {
            return Err(invalid(format!("pmf sums to {total}, expected 1")));
        }
        let mean = support
            .iter()
            .zip(&pmf)
            .map(|(&k, &p)| k as f64 * p)
            .sum();
        Ok(Self { support, pmf, mean })
    }

    /// Uniform distribution over `k_min..=k_max`.
    pub fn uniform(k_min: usize, k_max: usize) -> Result<Self> {
        if k_min > k_max {
            return Err(invalid("k_min exceeds k_max"));
        }
        let n = k_max - k_min + 1;
        let support: Vec<usize> = (k_min..=k_max).collect();
        // Exact 1/n entries can miss the sum by an ulp; pin the last one.
        let mut pmf = vec![1.0 / n as f64; n];
        let head: f64 = pmf[..n - 1].iter().sum();
        pmf[n - 1] = 1.0 - head;
        Self::new(support, pmf)
    }

    /// Every user has degree `k`.
    pub fn homogeneous(k: usize) -> Result<Self> {
        Self::new(vec![k], vec![1.0])
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    /// Number of degree classes.
    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn mean_degree(&self) -> f64 {
        self.mean
    }

    pub fn k_min(&self) -> usize {
        self.support[0]
    }

    pub fn k_max(&self) -> usize {
        self.support[self.support.len() - 1]
    }

    /// `k_max / mean`, at least 1.
    pub fn delta1(&self) -> f64 {
        self.k_max() as f64 / self.mean
    }

    /// `k_min / mean`, at most 1.
    pub fn delta2(&self) -> f64 {
        self.k_min() as f64 / self.mean
    }

    /// Position of degree `k` in the support.
    pub fn class_of(&self, k: usize) -> Option<usize> {
        self.support.binary_search(&k).ok()
    }

    /// Neighbour-degree law of an uncorrelated graph, `k' p(k') / mean`.
    pub fn neighbor_pmf(&self, k_prime: usize) -> f64 {
        match self.class_of(k_prime) {
            Some(c) => k_prime as f64 * self.pmf[c] / self.mean,
            None => 0.0,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (&k, &p) in self.support.iter().zip(&self.pmf) {
            acc += p;
            if u < acc {
                return k;
            }
        }
        self.k_max()
    }
}

/// Simple undirected graph stored as sorted adjacency lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    adjacency: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds a graph from an edge list, rejecting self-loops, duplicates and
    /// out-of-range endpoints.
    pub fn from_edges(n_users: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adjacency = vec![Vec::new(); n_users];
        let mut seen = BTreeSet::new();
        for &(u, v) in edges {
            if u >= n_users || v >= n_users {
                return Err(invalid(format!("edge ({u}, {v}) out of range")));
            }
            if u == v {
                return Err(invalid(format!("self-loop at {u}")));
            }
            if !seen.insert((u.min(v), u.max(v))) {
                return Err(invalid(format!("duplicate edge ({u}, {v})")));
            }
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(Self { adjacency })
    }

    pub fn n_users(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.adjacency[u]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.adjacency[u].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adjacency.iter().map(Vec::len).collect()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(u, list)| list.iter().filter(move |&&v| u < v).map(move |&v| (u, v)))
    }

    /// Checks symmetry, absence of self-loops and of repeated neighbours.
    pub fn check_invariants(&self) -> Result<()> {
        for (u, list) in self.adjacency.iter().enumerate() {
            if list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(invalid(format!("adjacency of {u} unsorted or repeated")));
            }
            for &v in list {
                if v == u {
                    return Err(invalid(format!("self-loop at {u}")));
                }
                if self.adjacency[v].binary_search(&u).is_err() {
                    return Err(invalid(format!("edge {u}->{v} has no reverse")));
                }
            }
        }
        Ok(())
    }

    /// Number of connected components, isolated users included.
    pub fn component_count(&self) -> usize {
        let n = self.n_users();
        let mut seen = vec![false; n];
        let mut stack = Vec::new();
        let mut components = 0;
        for start in 0..n {
            if seen[start] {
                continue;
            }
            components += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(u) = stack.pop() {
                for &v in &self.adjacency[u] {
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
        }
        components
    }

    /// Writes one `u v` line per edge, 0-based ids.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> Result<()> {
        for (u, v) in self.edges() {
            writeln!(out, "{u} {v}")?;
        }
        Ok(())
    }
}

/// Configuration-model graph on `n_users` users with degrees drawn iid from
/// `profile`.
pub fn build_configuration_graph<R: Rng + ?Sized>(
    n_users: usize,
    profile: &DegreeProfile,
    rng: &mut R,
) -> Result<Graph> {
    if n_users < 2 {
        return Err(invalid(format!("need at least 2 users, got {n_users}")));
    }
    let targets: Vec<usize> = (0..n_users).map(|_| profile.sample(rng)).collect();
    Ok(configuration_graph(targets, rng))
}

/// Pairs stubs for the given target degrees uniformly at random.
///
/// An odd stub total is repaired by adding one stub to a uniformly chosen
/// user. Self-loops and repeated pairs are dropped rather than resampled, so
/// realized degrees never exceed their targets (except for the repaired user).
pub fn configuration_graph<R: Rng + ?Sized>(mut targets: Vec<usize>, rng: &mut R) -> Graph {
    let n = targets.len();
    let total: usize = targets.iter().sum();
    if total % 2 == 1 {
        let u = rng.random_range(0..n);
        targets[u] += 1;
    }
    let mut stubs: Vec<usize> = targets
        .iter()
        .enumerate()
        .flat_map(|(u, &d)| std::iter::repeat_n(u, d))
        .collect();
    stubs.shuffle(rng);

    let mut adjacency = vec![Vec::new(); n];
    for pair in stubs.chunks_exact(2) {
        let (u, v) = (pair[0], pair[1]);
        if u != v {
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
    }
    for list in &mut adjacency {
        list.sort_unstable();
        list.dedup();
    }
    Graph { adjacency }
}

/// Draws a Poisson realized degree around each expected degree.
pub fn sample_realized_degrees<R: Rng + ?Sized>(
    expected_degrees: &[usize],
    rng: &mut R,
) -> Result<Vec<usize>> {
    expected_degrees
        .iter()
        .map(|&k| {
            if k == 0 {
                return Err(invalid("expected degree must be at least 1"));
            }
            let poisson = Poisson::new(k as f64)
                .map_err(|e| invalid(format!("poisson mean {k}: {e}")))?;
            Ok(poisson.sample(rng) as usize)
        })
        .collect()
}

/// Graph whose realized degrees fluctuate around fixed expected degrees.
#[derive(Debug, Clone)]
pub struct DynamicGraphModel {
    expected_degrees: Vec<usize>,
    regeneration_rate: f64,
    current: Graph,
}

impl DynamicGraphModel {
    /// Draws expected degrees from `profile` and builds the first topology.
    pub fn new<R: Rng + ?Sized>(
        n_users: usize,
        profile: &DegreeProfile,
        regeneration_rate: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if n_users < 2 {
            return Err(invalid(format!("need at least 2 users, got {n_users}")));
        }
        let expected: Vec<usize> = (0..n_users).map(|_| profile.sample(rng)).collect();
        Self::with_expected_degrees(expected, regeneration_rate, rng)
    }

    pub fn with_expected_degrees<R: Rng + ?Sized>(
        expected_degrees: Vec<usize>,
        regeneration_rate: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(regeneration_rate.is_finite() && regeneration_rate > 0.0) {
            return Err(invalid("regeneration rate must be positive"));
        }
        let realized = sample_realized_degrees(&expected_degrees, rng)?;
        let current = configuration_graph(realized, rng);
        Ok(Self {
            expected_degrees,
            regeneration_rate,
            current,
        })
    }

    pub fn expected_degrees(&self) -> &[usize] {
        &self.expected_degrees
    }

    pub fn regeneration_rate(&self) -> f64 {
        self.regeneration_rate
    }

    pub fn current(&self) -> &Graph {
        &self.current
    }

    /// Replaces the topology: fresh Poisson degrees, fresh stub pairing.
    /// Users whose realized degree is 0 end up isolated.
    pub fn regenerate<R: Rng + ?Sized>(&mut self, rng: &mut R) -> &Graph {
        let realized = sample_realized_degrees(&self.expected_degrees, rng)
            .expect("expected degrees validated at construction");
        self.current = configuration_graph(realized, rng);
        &self.current
    }
}

/// Empirical `p̂(k'|k)` tabulated over ordered edges.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalDegreeTable {
    counts: BTreeMap<usize, BTreeMap<usize, u64>>,
}

/// Tallies the degree pair of both endpoints of every edge, keyed by the
/// realized degree of the graph. Returns `None` for an edgeless graph.
pub fn empirical_conditional_degree_pmf(graph: &Graph) -> Option<ConditionalDegreeTable> {
    let degrees = graph.degrees();
    conditional_degree_pmf_by(graph, &degrees)
}

/// Same tabulation with a caller-supplied degree label per user (for example
/// the expected degree in a dynamic graph).
pub fn conditional_degree_pmf_by(graph: &Graph, labels: &[usize]) -> Option<ConditionalDegreeTable> {
    let mut counts: BTreeMap<usize, BTreeMap<usize, u64>> = BTreeMap::new();
    for (u, v) in graph.edges() {
        let (du, dv) = (labels[u], labels[v]);
        *counts.entry(du).or_default().entry(dv).or_default() += 1;
        *counts.entry(dv).or_default().entry(du).or_default() += 1;
    }
    if counts.is_empty() {
        None
    } else {
        Some(ConditionalDegreeTable { counts })
    }
}

impl ConditionalDegreeTable {
    /// Degrees `k` that own at least one edge end.
    pub fn degrees(&self) -> impl Iterator<Item = usize> + '_ {
        self.counts.keys().copied()
    }

    /// Number of edge ends attached to degree-`k` users.
    pub fn row_total(&self, k: usize) -> u64 {
        self.counts.get(&k).map_or(0, |row| row.values().sum())
    }

    /// `p̂(k'|k)`; 0 when the row or entry is absent.
    pub fn prob(&self, k_prime: usize, k: usize) -> f64 {
        let total = self.row_total(k);
        if total == 0 {
            return 0.0;
        }
        let c = self.counts[&k].get(&k_prime).copied().unwrap_or(0);
        c as f64 / total as f64
    }

    /// Total-variation distance between row `k` and `k'p(k')/mean` of the
    /// given profile. `None` if the row is empty.
    pub fn tv_to_uncorrelated(&self, k: usize, profile: &DegreeProfile) -> Option<f64> {
        let row = self.counts.get(&k)?;
        let keys: BTreeSet<usize> = row.keys().copied().chain(profile.support().iter().copied()).collect();
        let tv = keys
            .into_iter()
            .map(|kp| (self.prob(kp, k) - profile.neighbor_pmf(kp)).abs())
            .sum::<f64>();
        Some(0.5 * tv)
    }
}
