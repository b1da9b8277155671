//! Maximum k-set cover: pick `k` candidate subsets whose union is largest.
//!
//! Candidates carry a rank (their position in the problem), and every solver
//! breaks ties toward the lower rank. Once no candidate adds new elements the
//! greedy solvers keep picking in rank order, so a solution has exactly
//! `min(k, #candidates)` members.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest number of combinations the exhaustive solver will enumerate.
pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

#[derive(Debug, Error)]
pub enum CoverError {
    #[error("candidate '{0}' appears more than once")]
    DuplicateCandidate(String),
    #[error("exhaustive search over {0} combinations exceeds the limit of {BRUTE_FORCE_LIMIT}")]
    TooManyCombinations(u128),
    #[error("universe_size {declared} is smaller than the {found} distinct elements listed")]
    UniverseTooSmall { declared: usize, found: usize },
    #[error("partitioned cover needs at least 2 partitions, got {0}")]
    Partitions(usize),
    #[error("invalid cover problem JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverProblem {
    candidates: Vec<String>,
    subsets: Vec<Vec<u32>>,
    elements: Vec<String>,
    universe_size: usize,
}

/// Wire form: subsets keyed by candidate id, in rank order.
#[derive(Serialize, Deserialize)]
struct CoverProblemFile {
    subsets: serde_json::Map<String, serde_json::Value>,
    universe_size: usize,
}

impl CoverProblem {
    /// Builds a problem from `(candidate, elements)` pairs listed in rank
    /// order. The universe is the union of all listed elements.
    pub fn from_named<C, E>(subsets: impl IntoIterator<Item = (C, Vec<E>)>) -> Result<Self, CoverError>
    where
        C: Into<String>,
        E: Into<String>,
    {
        let raw: Vec<(String, Vec<String>)> = subsets
            .into_iter()
            .map(|(c, es)| (c.into(), es.into_iter().map(Into::into).collect()))
            .collect();
        let mut elements: Vec<String> = raw.iter().flat_map(|(_, es)| es.iter().cloned()).collect();
        elements.sort();
        elements.dedup();
        let index: HashMap<&str, u32> = elements
            .iter()
            .enumerate()
            .map(|(i, e)| (e.as_str(), i as u32))
            .collect();
        let mut seen = HashMap::new();
        let mut candidates = Vec::with_capacity(raw.len());
        let mut sets = Vec::with_capacity(raw.len());
        for (c, es) in &raw {
            if seen.insert(c.clone(), ()).is_some() {
                return Err(CoverError::DuplicateCandidate(c.clone()));
            }
            let mut set: Vec<u32> = es.iter().map(|e| index[e.as_str()]).collect();
            set.sort_unstable();
            set.dedup();
            candidates.push(c.clone());
            sets.push(set);
        }
        let universe_size = elements.len();
        Ok(CoverProblem {
            candidates,
            subsets: sets,
            elements,
            universe_size,
        })
    }

    /// Index-based constructor: candidate `i` is named `c{i}`, element `j` is `e{j}`.
    pub fn from_indices(universe_size: usize, subsets: Vec<Vec<usize>>) -> Self {
        let candidates = (0..subsets.len()).map(|i| format!("c{i}")).collect();
        let elements = (0..universe_size).map(|j| format!("e{j:06}")).collect();
        let subsets = subsets
            .into_iter()
            .map(|s| {
                let mut s: Vec<u32> = s.into_iter().map(|e| e as u32).collect();
                s.sort_unstable();
                s.dedup();
                s
            })
            .collect();
        CoverProblem {
            candidates,
            subsets,
            elements,
            universe_size,
        }
    }

    pub(crate) fn from_parts(candidates: Vec<String>, subsets: Vec<Vec<u32>>, elements: Vec<String>) -> Self {
        let universe_size = elements.len();
        CoverProblem {
            candidates,
            subsets,
            elements,
            universe_size,
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self, CoverError> {
        let file: CoverProblemFile = serde_json::from_str(s)?;
        let mut pairs = Vec::with_capacity(file.subsets.len());
        for (cand, value) in file.subsets {
            let elems: Vec<String> = serde_json::from_value(value)?;
            pairs.push((cand, elems));
        }
        let mut problem = CoverProblem::from_named(pairs)?;
        if file.universe_size < problem.elements.len() {
            return Err(CoverError::UniverseTooSmall {
                declared: file.universe_size,
                found: problem.elements.len(),
            });
        }
        problem.universe_size = file.universe_size;
        Ok(problem)
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let mut subsets = serde_json::Map::new();
        for (c, set) in self.candidates.iter().zip(&self.subsets) {
            let names: Vec<&str> = set.iter().map(|&e| self.elements[e as usize].as_str()).collect();
            subsets.insert(c.clone(), serde_json::json!(names));
        }
        serde_json::to_value(CoverProblemFile {
            subsets,
            universe_size: self.universe_size,
        })
        .expect("cover problem serializes")
    }

    pub fn num_candidates(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn candidates(&self) -> &[String] {
        &self.candidates
    }

    /// Named elements that appear in at least one subset, sorted.
    pub fn elements(&self) -> &[String] {
        &self.elements
    }

    pub fn universe_size(&self) -> usize {
        self.universe_size
    }

    /// Element names of the subset at `rank`.
    pub fn subset(&self, rank: usize) -> Vec<&str> {
        self.subsets[rank]
            .iter()
            .map(|&e| self.elements[e as usize].as_str())
            .collect()
    }

    /// `|union of subsets at ranks|`.
    pub fn coverage_of(&self, ranks: &[usize]) -> usize {
        let mut covered = Bitset::new(self.elements.len());
        ranks.iter().map(|&r| covered.insert_all(&self.subsets[r])).sum()
    }

    /// Elements candidate `rank` adds on top of `selected`.
    pub fn marginal_gain(&self, rank: usize, selected: &[usize]) -> usize {
        let mut covered = Bitset::new(self.elements.len());
        for &r in selected {
            covered.insert_all(&self.subsets[r]);
        }
        covered.gain(&self.subsets[rank])
    }

    fn solution(&self, ranks: Vec<usize>) -> CoverSolution {
        let mut covered = Bitset::new(self.elements.len());
        for &r in &ranks {
            covered.insert_all(&self.subsets[r]);
        }
        let covered: Vec<String> = covered.iter().map(|e| self.elements[e].clone()).collect();
        CoverSolution {
            selected: ranks.iter().map(|&r| self.candidates[r].clone()).collect(),
            coverage: covered.len(),
            covered,
            ranks,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverSolution {
    /// Candidate ids in the order they were picked.
    pub selected: Vec<String>,
    pub covered: Vec<String>,
    pub coverage: usize,
    /// Ranks of `selected`, parallel to it.
    #[serde(skip)]
    pub ranks: Vec<usize>,
}

struct Bitset {
    words: Vec<u64>,
}

impl Bitset {
    fn new(n: usize) -> Self {
        Bitset {
            words: vec![0; n.div_ceil(64)],
        }
    }

    fn contains(&self, i: u32) -> bool {
        self.words[(i / 64) as usize] & (1 << (i % 64)) != 0
    }

    fn gain(&self, set: &[u32]) -> usize {
        set.iter().filter(|&&e| !self.contains(e)).count()
    }

    /// Inserts every element and returns how many were new.
    fn insert_all(&mut self, set: &[u32]) -> usize {
        let mut added = 0;
        for &e in set {
            let w = &mut self.words[(e / 64) as usize];
            let bit = 1u64 << (e % 64);
            if *w & bit == 0 {
                *w |= bit;
                added += 1;
            }
        }
        added
    }

    fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words
            .iter()
            .enumerate()
            .flat_map(|(wi, &w)| (0..64).filter(move |b| w & (1 << b) != 0).map(move |b| wi * 64 + b))
    }
}

// Below this many candidates a greedy step is evaluated serially.
#[cfg(feature = "parallel")]
const PARALLEL_STEP_THRESHOLD: usize = 4096;

/// Best unselected candidate in `pool`: maximum gain, then lowest rank.
fn best_candidate(problem: &CoverProblem, pool: &[usize], taken: &[bool], covered: &Bitset) -> Option<(usize, usize)> {
    let score = |&r: &usize| (covered.gain(&problem.subsets[r]), Reverse(r));
    #[cfg(feature = "parallel")]
    if pool.len() >= PARALLEL_STEP_THRESHOLD {
        use rayon::prelude::*;
        return pool
            .par_iter()
            .filter(|&&r| !taken[r])
            .map(score)
            .max()
            .map(|(g, Reverse(r))| (r, g));
    }
    pool.iter()
        .filter(|&&r| !taken[r])
        .map(score)
        .max()
        .map(|(g, Reverse(r))| (r, g))
}

/// Plain greedy restricted to the candidates in `pool`.
fn greedy_ranks(problem: &CoverProblem, pool: &[usize], k: usize) -> Vec<usize> {
    let mut taken = vec![false; problem.num_candidates()];
    let mut covered = Bitset::new(problem.elements.len());
    let mut picked = Vec::with_capacity(k.min(pool.len()));
    while picked.len() < k {
        let Some((r, _)) = best_candidate(problem, pool, &taken, &covered) else {
            break;
        };
        taken[r] = true;
        covered.insert_all(&problem.subsets[r]);
        picked.push(r);
    }
    picked
}

/// Standard greedy: repeatedly take the candidate with the largest marginal
/// coverage gain. Achieves at least `(1 - 1/e)` of the optimum.
pub fn greedy_max_cover(problem: &CoverProblem, k: usize) -> CoverSolution {
    let pool: Vec<usize> = (0..problem.num_candidates()).collect();
    problem.solution(greedy_ranks(problem, &pool, k))
}

/// Greedy with stale upper bounds kept in a max-heap. Produces exactly the
/// same picks as [`greedy_max_cover`].
pub fn lazy_greedy_max_cover(problem: &CoverProblem, k: usize) -> CoverSolution {
    let mut heap: BinaryHeap<(usize, Reverse<usize>)> = problem
        .subsets
        .iter()
        .enumerate()
        .map(|(r, s)| (s.len(), Reverse(r)))
        .collect();
    let mut covered = Bitset::new(problem.elements.len());
    let mut picked = Vec::with_capacity(k.min(problem.num_candidates()));
    while picked.len() < k {
        let Some((_, Reverse(r))) = heap.pop() else {
            break;
        };
        let fresh = (covered.gain(&problem.subsets[r]), Reverse(r));
        // Stale keys only overestimate, so beating the next key beats everyone.
        if heap.peek().is_none_or(|top| fresh >= *top) {
            covered.insert_all(&problem.subsets[r]);
            picked.push(r);
        } else {
            heap.push(fresh);
        }
    }
    problem.solution(picked)
}

/// Partition-and-merge greedy. Candidates are shuffled into `partitions`
/// groups, each group runs greedy for `min(k, |group|)` picks, and a final
/// greedy over the union of group picks returns the solution.
pub fn partitioned_max_cover(
    problem: &CoverProblem,
    k: usize,
    partitions: usize,
    seed: u64,
) -> Result<CoverSolution, CoverError> {
    if partitions < 2 {
        return Err(CoverError::Partitions(partitions));
    }
    let mut order: Vec<usize> = (0..problem.num_candidates()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut groups = vec![Vec::new(); partitions];
    for (i, r) in order.into_iter().enumerate() {
        groups[i % partitions].push(r);
    }
    for g in &mut groups {
        g.sort_unstable();
    }

    let run = |g: &Vec<usize>| greedy_ranks(problem, g, k.min(g.len()));
    #[cfg(feature = "parallel")]
    let picks: Vec<Vec<usize>> = {
        use rayon::prelude::*;
        groups.par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let picks: Vec<Vec<usize>> = groups.iter().map(run).collect();

    let mut merged: Vec<usize> = picks.into_iter().flatten().collect();
    merged.sort_unstable();
    Ok(problem.solution(greedy_ranks(problem, &merged, k)))
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > BRUTE_FORCE_LIMIT * 1000 {
            return acc;
        }
    }
    acc
}

/// Exact optimum by enumerating every `min(k, n)`-subset in lexicographic
/// rank order; the first optimum found wins.
pub fn brute_force_max_cover(problem: &CoverProblem, k: usize) -> Result<CoverSolution, CoverError> {
    let n = problem.num_candidates();
    let k = k.min(n);
    let combos = binomial(n, k);
    if combos > BRUTE_FORCE_LIMIT {
        return Err(CoverError::TooManyCombinations(combos));
    }
    if k == 0 {
        return Ok(problem.solution(Vec::new()));
    }
    let mut idx: Vec<usize> = (0..k).collect();
    let mut best = (problem.coverage_of(&idx), idx.clone());
    loop {
        // advance to the next combination
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
        let cov = problem.coverage_of(&idx);
        if cov > best.0 {
            best = (cov, idx.clone());
        }
    }
    Ok(problem.solution(best.1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn abc() -> CoverProblem {
        CoverProblem::from_named(vec![
            ("A", vec!["1", "2", "3"]),
            ("B", vec!["3", "4"]),
            ("C", vec!["4", "5", "6", "7"]),
        ])
        .unwrap()
    }

    #[test]
    fn abc_greedy_picks_c_then_a() {
        let sol = greedy_max_cover(&abc(), 2);
        assert_eq!(sol.selected, vec!["C", "A"]);
        assert_eq!(sol.coverage, 7);
        assert_eq!(lazy_greedy_max_cover(&abc(), 2), sol);
    }

    #[test]
    fn abc_brute_force_optimum() {
        // Hand enumeration: AB = 4, AC = 7, BC = 5.
        let p = abc();
        assert_eq!(p.coverage_of(&[0, 1]), 4);
        assert_eq!(p.coverage_of(&[0, 2]), 7);
        assert_eq!(p.coverage_of(&[1, 2]), 5);
        let sol = brute_force_max_cover(&p, 2).unwrap();
        assert_eq!(sol.coverage, 7);
        assert_eq!(sol.selected, vec!["A", "C"]);
    }

    #[test]
    fn brute_force_edges() {
        let p = abc();
        assert_eq!(brute_force_max_cover(&p, 1).unwrap().selected, vec!["C"]);
        assert_eq!(brute_force_max_cover(&p, 3).unwrap().coverage, 7);
        let big = CoverProblem::from_indices(10, vec![vec![0]; 40]);
        assert!(matches!(
            brute_force_max_cover(&big, 20),
            Err(CoverError::TooManyCombinations(_))
        ));
    }

    #[test]
    fn k_beyond_candidates_takes_all() {
        let sol = greedy_max_cover(&abc(), 10);
        assert_eq!(sol.selected.len(), 3);
        assert_eq!(sol.coverage, 7);
    }

    #[test]
    fn identical_subsets_pad_in_rank_order() {
        let p = CoverProblem::from_named(vec![
            ("x", vec!["1", "2"]),
            ("y", vec!["1", "2"]),
            ("z", vec!["1", "2"]),
        ])
        .unwrap();
        let sol = greedy_max_cover(&p, 2);
        assert_eq!(sol.selected, vec!["x", "y"]);
        assert_eq!(sol.coverage, 2);
        assert_eq!(lazy_greedy_max_cover(&p, 2), sol);
    }

    #[test]
    fn empty_and_singleton() {
        let empty = CoverProblem::from_named(Vec::<(String, Vec<String>)>::new()).unwrap();
        assert!(lazy_greedy_max_cover(&empty, 3).selected.is_empty());
        let one = CoverProblem::from_named(vec![("only", vec!["e"])]).unwrap();
        assert_eq!(lazy_greedy_max_cover(&one, 3).selected, vec!["only"]);
    }

    #[test]
    fn partitioned_small_cases() {
        let p = abc();
        let best_single = (0..3).map(|r| p.coverage_of(&[r])).max().unwrap();
        for seed in 0..10 {
            let sol = partitioned_max_cover(&p, 2, 2, seed).unwrap();
            assert!(sol.coverage >= best_single);
            assert_eq!(sol.selected.len(), 2);
        }
        let singles = CoverProblem::from_indices(6, (0..6).map(|i| vec![i]).collect());
        assert_eq!(partitioned_max_cover(&singles, 3, 3, 7).unwrap().coverage, 3);
        assert!(partitioned_max_cover(&p, 2, 1, 0).is_err());
    }

    #[test]
    fn partitioned_is_seed_deterministic() {
        let p = CoverProblem::from_indices(30, (0..20).map(|i| vec![i, (i * 7) % 30, (i * 3 + 1) % 30]).collect());
        let a = partitioned_max_cover(&p, 5, 3, 42).unwrap();
        let b = partitioned_max_cover(&p, 5, 3, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn json_round_trip_keeps_rank_order() {
        let p = abc();
        let text = p.to_json_value().to_string();
        assert!(text.starts_with(r#"{"subsets":{"A":"#));
        let back = CoverProblem::from_json_str(&text).unwrap();
        assert_eq!(back, p);
        let bigger =
            CoverProblem::from_json_str(r#"{"subsets": {"z": ["1"], "a": ["2"]}, "universe_size": 5}"#).unwrap();
        assert_eq!(bigger.candidates(), ["z", "a"]);
        assert_eq!(bigger.universe_size(), 5);
        assert!(CoverProblem::from_json_str(r#"{"subsets": {"z": ["1", "2"]}, "universe_size": 1}"#).is_err());
    }

    fn random_problem() -> impl Strategy<Value = (CoverProblem, usize)> {
        (1usize..=40, 1usize..=18, 1usize..=6).prop_flat_map(|(n_elem, n_cand, k)| {
            prop::collection::vec(prop::collection::vec(0..n_elem, 0..=n_elem.min(12)), n_cand)
                .prop_map(move |subsets| (CoverProblem::from_indices(n_elem, subsets), k))
        })
    }

    proptest! {
        #[test]
        fn coverage_nondecreasing_in_k((p, k) in random_problem()) {
            let a = greedy_max_cover(&p, k).coverage;
            let b = greedy_max_cover(&p, k + 1).coverage;
            prop_assert!(b >= a);
            prop_assert!(brute_force_max_cover(&p, k + 1).unwrap().coverage >= brute_force_max_cover(&p, k).unwrap().coverage);
        }

        #[test]
        fn diminishing_returns((p, _) in random_problem(), picks in prop::collection::vec(any::<prop::sample::Index>(), 0..8), c in any::<prop::sample::Index>()) {
            let n = p.num_candidates();
            let t: Vec<usize> = picks.iter().map(|i| i.index(n)).collect();
            let s: Vec<usize> = t.iter().copied().step_by(2).collect();
            let c = c.index(n);
            prop_assert!(p.marginal_gain(c, &s) >= p.marginal_gain(c, &t));
        }

        #[test]
        fn solution_size_is_min_k_n((p, k) in random_problem()) {
            let sol = lazy_greedy_max_cover(&p, k);
            prop_assert_eq!(sol.selected.len(), k.min(p.num_candidates()));
            prop_assert_eq!(sol.coverage, p.coverage_of(&sol.ranks));
        }
    }
}
