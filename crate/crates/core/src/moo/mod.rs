//! Multi-objective search with NSGA-II: fast non-dominated sorting, crowding
//! distance, binary tournaments under constrained domination, simulated
//! binary crossover and polynomial mutation. Everything is seeded and single
//! threaded, so a fixed seed reproduces the front bit for bit.
//!
//! Decision vectors live in a box; the evaluator returns the objective
//! vector plus a nonnegative constraint violation (zero means feasible).
//! Feasible individuals always dominate infeasible ones; two infeasible
//! individuals are ordered by violation.

pub mod process;

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use process::{ProcessContext, ProcessObjectives, ProcessParams};

pub type MooResult<T> = Result<T, MooError>;

#[derive(Debug, Error)]
pub enum MooError {
    #[error("bounds arrays differ in length: {lower} lower vs {upper} upper")]
    BoundsLength { lower: usize, upper: usize },

    #[error("empty bounds")]
    EmptyBounds,

    #[error("lower bound {lower} exceeds upper bound {upper} at variable {index}")]
    BoundOrder {
        index: usize,
        lower: f64,
        upper: f64,
    },

    #[error("population must be even and at least 4, got {0}")]
    BadPopulation(usize),

    #[error("evaluator returned {got} objectives, expected {expected}")]
    ObjectiveCount { expected: usize, got: usize },

    #[error("every individual of the initial population is infeasible; review the bounds")]
    AllInfeasible,

    #[error("hypervolume reference has {got} entries, expected {expected}")]
    ReferenceLength { expected: usize, got: usize },

    #[error("process evaluation failed: {0}")]
    Process(String),
}

/// Box constraints, one pair per decision variable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> MooResult<Self> {
        if lower.len() != upper.len() {
            return Err(MooError::BoundsLength {
                lower: lower.len(),
                upper: upper.len(),
            });
        }
        if lower.is_empty() {
            return Err(MooError::EmptyBounds);
        }
        for (i, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if lo > hi {
                return Err(MooError::BoundOrder {
                    index: i,
                    lower: lo,
                    upper: hi,
                });
            }
        }
        Ok(Bounds { lower, upper })
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    fn clip(&self, x: &mut [f64]) {
        for (v, (&lo, &hi)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(lo, hi);
        }
    }
}

/// Objectives plus constraint violation of one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub objectives: Vec<f64>,
    /// Zero for feasible candidates, positive magnitude otherwise.
    pub violation: f64,
}

impl Evaluation {
    pub fn feasible(objectives: Vec<f64>) -> Self {
        Evaluation {
            objectives,
            violation: 0.0,
        }
    }

    pub fn infeasible(objectives: Vec<f64>, violation: f64) -> Self {
        Evaluation {
            objectives,
            violation: violation.max(f64::MIN_POSITIVE),
        }
    }

    pub fn is_feasible(&self) -> bool {
        self.violation == 0.0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NsgaParams {
    pub population: usize,
    pub generations: usize,
    pub crossover_eta: f64,
    pub crossover_probability: f64,
    pub mutation_eta: f64,
    /// Per-variable mutation probability; defaults to 1/n when absent.
    pub mutation_probability: Option<f64>,
    pub seed: u64,
    /// When set, the feasible rank-0 hypervolume against this reference point
    /// is logged every generation.
    pub hypervolume_reference: Option<Vec<f64>>,
}

impl Default for NsgaParams {
    fn default() -> Self {
        NsgaParams {
            population: 100,
            generations: 100,
            crossover_eta: 15.0,
            crossover_probability: 0.9,
            mutation_eta: 20.0,
            mutation_probability: None,
            seed: 42,
            hypervolume_reference: None,
        }
    }
}

/// One member of the final population.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Individual {
    pub x: Vec<f64>,
    pub objectives: Vec<f64>,
    pub violation: f64,
    pub rank: usize,
    pub crowding: f64,
}

impl Individual {
    pub fn is_feasible(&self) -> bool {
        self.violation == 0.0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    /// Componentwise minimum of each objective over feasible members.
    pub best: Vec<f64>,
    pub feasible_count: usize,
    pub hypervolume: Option<f64>,
}

/// Final sorted population plus run statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParetoFront {
    /// Whole final population, rank then crowding ordered.
    pub population: Vec<Individual>,
    pub history: Vec<GenerationStats>,
    pub evaluations: usize,
    pub cache_hits: usize,
}

impl ParetoFront {
    /// Rank-0 members only.
    pub fn first_front(&self) -> Vec<&Individual> {
        self.population.iter().filter(|m| m.rank == 0).collect()
    }
}

/// Constrained domination: feasible beats infeasible, infeasible candidates
/// compare by violation, feasible ones by Pareto domination.
pub fn dominates(a: &Evaluation, b: &Evaluation) -> bool {
    match (a.is_feasible(), b.is_feasible()) {
        (true, false) => true,
        (false, true) => false,
        (false, false) => a.violation < b.violation,
        (true, true) => {
            let mut strictly_better = false;
            for (&fa, &fb) in a.objectives.iter().zip(&b.objectives) {
                if fa > fb {
                    return false;
                }
                if fa < fb {
                    strictly_better = true;
                }
            }
            strictly_better
        }
    }
}

/// Fast non-dominated sort; returns the front index of every entry.
pub fn non_dominated_ranks(evals: &[Evaluation]) -> Vec<usize> {
    let n = evals.len();
    let mut dominated_by: Vec<usize> = vec![0; n];
    let mut dominates_list: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            if dominates(&evals[i], &evals[j]) {
                dominates_list[i].push(j);
                dominated_by[j] += 1;
            } else if dominates(&evals[j], &evals[i]) {
                dominates_list[j].push(i);
                dominated_by[i] += 1;
            }
        }
    }
    let mut rank = vec![usize::MAX; n];
    let mut current: Vec<usize> = (0..n).filter(|&i| dominated_by[i] == 0).collect();
    let mut level = 0;
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            rank[i] = level;
            for &j in &dominates_list[i] {
                dominated_by[j] -= 1;
                if dominated_by[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        current = next;
        level += 1;
    }
    rank
}

/// Crowding distances within one front (indices into `evals`). Boundary
/// members get the +infinity sentinel.
pub fn crowding_distances(evals: &[Evaluation], front: &[usize]) -> Vec<f64> {
    let mut distance = vec![0.0f64; front.len()];
    if front.len() <= 2 {
        for d in &mut distance {
            *d = f64::INFINITY;
        }
        return distance;
    }
    let objective_count = evals[front[0]].objectives.len();
    let mut order: Vec<usize> = (0..front.len()).collect();
    for m in 0..objective_count {
        order.sort_by(|&a, &b| {
            evals[front[a]].objectives[m].total_cmp(&evals[front[b]].objectives[m])
        });
        let f_min = evals[front[order[0]]].objectives[m];
        let f_max = evals[front[*order.last().unwrap()]].objectives[m];
        distance[order[0]] = f64::INFINITY;
        distance[*order.last().unwrap()] = f64::INFINITY;
        let span = f_max - f_min;
        if span <= 0.0 {
            continue;
        }
        for w in 1..order.len() - 1 {
            let below = evals[front[order[w - 1]]].objectives[m];
            let above = evals[front[order[w + 1]]].objectives[m];
            distance[order[w]] += (above - below) / span;
        }
    }
    distance
}

fn tournament_winner(
    a: usize,
    b: usize,
    ranks: &[usize],
    crowding: &[f64],
) -> usize {
    if ranks[a] != ranks[b] {
        return if ranks[a] < ranks[b] { a } else { b };
    }
    if crowding[a] != crowding[b] {
        return if crowding[a] > crowding[b] { a } else { b };
    }
    a
}

fn sbx_crossover(
    p1: &[f64],
    p2: &[f64],
    bounds: &Bounds,
    eta: f64,
    probability: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, Vec<f64>) {
    let mut c1 = p1.to_vec();
    let mut c2 = p2.to_vec();
    if rng.gen::<f64>() > probability {
        return (c1, c2);
    }
    for i in 0..p1.len() {
        if rng.gen::<f64>() > 0.5 {
            continue;
        }
        let (y1, y2) = if p1[i] <= p2[i] {
            (p1[i], p2[i])
        } else {
            (p2[i], p1[i])
        };
        if (y2 - y1).abs() < 1e-14 {
            continue;
        }
        let (lo, hi) = (bounds.lower[i], bounds.upper[i]);
        let u: f64 = rng.gen();
        let spread = |beta: f64| -> f64 {
            let alpha = 2.0 - beta.powf(-(eta + 1.0));
            if u <= 1.0 / alpha {
                (u * alpha).powf(1.0 / (eta + 1.0))
            } else {
                (1.0 / (2.0 - u * alpha)).powf(1.0 / (eta + 1.0))
            }
        };
        let beta_low = 1.0 + 2.0 * (y1 - lo) / (y2 - y1);
        let beta_high = 1.0 + 2.0 * (hi - y2) / (y2 - y1);
        let mut child_low = 0.5 * ((y1 + y2) - spread(beta_low) * (y2 - y1));
        let mut child_high = 0.5 * ((y1 + y2) + spread(beta_high) * (y2 - y1));
        child_low = child_low.clamp(lo, hi);
        child_high = child_high.clamp(lo, hi);
        if rng.gen::<f64>() <= 0.5 {
            std::mem::swap(&mut child_low, &mut child_high);
        }
        c1[i] = child_low;
        c2[i] = child_high;
    }
    (c1, c2)
}

fn polynomial_mutation(
    x: &mut [f64],
    bounds: &Bounds,
    eta: f64,
    probability: f64,
    rng: &mut ChaCha8Rng,
) {
    for i in 0..x.len() {
        if rng.gen::<f64>() > probability {
            continue;
        }
        let (lo, hi) = (bounds.lower[i], bounds.upper[i]);
        let span = hi - lo;
        if span <= 0.0 {
            continue;
        }
        let u: f64 = rng.gen();
        let delta_low = (x[i] - lo) / span;
        let delta_high = (hi - x[i]) / span;
        let delta_q = if u < 0.5 {
            let value = 2.0 * u + (1.0 - 2.0 * u) * (1.0 - delta_low).powf(eta + 1.0);
            value.powf(1.0 / (eta + 1.0)) - 1.0
        } else {
            let value =
                2.0 * (1.0 - u) + 2.0 * (u - 0.5) * (1.0 - delta_high).powf(eta + 1.0);
            1.0 - value.powf(1.0 / (eta + 1.0))
        };
        x[i] = (x[i] + delta_q * span).clamp(lo, hi);
    }
}

/// Quantizes a decision vector to a 1e-9 grid for the evaluation cache.
fn cache_key(x: &[f64]) -> Vec<i64> {
    x.iter().map(|&v| (v * 1e9).round() as i64).collect()
}

struct CachedEvaluator<'a, F> {
    evaluate: &'a mut F,
    cache: BTreeMap<Vec<i64>, Evaluation>,
    evaluations: usize,
    cache_hits: usize,
    objective_count: Option<usize>,
}

impl<'a, F: FnMut(&[f64]) -> Evaluation> CachedEvaluator<'a, F> {
    fn new(evaluate: &'a mut F) -> Self {
        CachedEvaluator {
            evaluate,
            cache: BTreeMap::new(),
            evaluations: 0,
            cache_hits: 0,
            objective_count: None,
        }
    }

    fn eval(&mut self, x: &[f64]) -> MooResult<Evaluation> {
        let key = cache_key(x);
        if let Some(hit) = self.cache.get(&key) {
            self.cache_hits += 1;
            return Ok(hit.clone());
        }
        let mut result = (self.evaluate)(x);
        self.evaluations += 1;
        // Non-finite objectives cannot be ordered meaningfully; demote the
        // candidate to a maximally infeasible one.
        if result.objectives.iter().any(|v| !v.is_finite()) {
            result.violation = f64::MAX / 2.0;
            for v in &mut result.objectives {
                if !v.is_finite() {
                    *v = f64::MAX / 2.0;
                }
            }
        }
        match self.objective_count {
            None => self.objective_count = Some(result.objectives.len()),
            Some(expected) if expected != result.objectives.len() => {
                return Err(MooError::ObjectiveCount {
                    expected,
                    got: result.objectives.len(),
                });
            }
            _ => {}
        }
        self.cache.insert(key, result.clone());
        Ok(result)
    }
}

/// Hypervolume of a minimization front against a reference point, exact for
/// one to three objectives. Points not strictly below the reference in every
/// coordinate contribute nothing.
pub fn hypervolume(points: &[Vec<f64>], reference: &[f64]) -> f64 {
    let keep: Vec<&Vec<f64>> = points
        .iter()
        .filter(|p| p.len() == reference.len() && p.iter().zip(reference).all(|(a, r)| a < r))
        .collect();
    if keep.is_empty() {
        return 0.0;
    }
    match reference.len() {
        1 => {
            let best = keep.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
            reference[0] - best
        }
        2 => hv2(&keep.iter().map(|p| [p[0], p[1]]).collect::<Vec<_>>(), reference[0], reference[1]),
        3 => {
            // Sweep the third objective: between consecutive levels the 2D
            // slice is the projection of every point at or below the level.
            let mut levels: Vec<f64> = keep.iter().map(|p| p[2]).collect();
            levels.sort_by(f64::total_cmp);
            levels.dedup();
            let mut volume = 0.0;
            for (i, &z) in levels.iter().enumerate() {
                let depth = if i + 1 < levels.len() {
                    levels[i + 1] - z
                } else {
                    reference[2] - z
                };
                let slice: Vec<[f64; 2]> = keep
                    .iter()
                    .filter(|p| p[2] <= z)
                    .map(|p| [p[0], p[1]])
                    .collect();
                volume += hv2(&slice, reference[0], reference[1]) * depth;
            }
            volume
        }
        _ => f64::NAN,
    }
}

fn hv2(points: &[[f64; 2]], ref_x: f64, ref_y: f64) -> f64 {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let mut area = 0.0;
    let mut prev_x = f64::NAN;
    let mut best_y = ref_y;
    for p in &sorted {
        if p[1] >= best_y {
            continue;
        }
        if prev_x.is_nan() {
            prev_x = p[0];
        } else {
            area += (p[0] - prev_x) * (ref_y - best_y);
            prev_x = p[0];
        }
        best_y = p[1];
    }
    if !prev_x.is_nan() {
        area += (ref_x - prev_x) * (ref_y - best_y);
    }
    area
}

/// Runs NSGA-II and returns the final sorted population.
pub fn nsga2<F: FnMut(&[f64]) -> Evaluation>(
    mut evaluate: F,
    bounds: &Bounds,
    params: &NsgaParams,
) -> MooResult<ParetoFront> {
    if params.population < 4 || params.population % 2 != 0 {
        return Err(MooError::BadPopulation(params.population));
    }
    if let Some(reference) = &params.hypervolume_reference {
        // Validated lazily against the first evaluation otherwise.
        if reference.is_empty() {
            return Err(MooError::ReferenceLength {
                expected: 1,
                got: 0,
            });
        }
    }
    let n = bounds.len();
    let mutation_probability = params
        .mutation_probability
        .unwrap_or(1.0 / n as f64)
        .clamp(0.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut cached = CachedEvaluator::new(&mut evaluate);

    let mut population: Vec<Vec<f64>> = (0..params.population)
        .map(|_| {
            (0..n)
                .map(|i| {
                    let (lo, hi) = (bounds.lower[i], bounds.upper[i]);
                    if hi > lo {
                        rng.gen_range(lo..hi)
                    } else {
                        lo
                    }
                })
                .collect()
        })
        .collect();
    let mut evals: Vec<Evaluation> = population
        .iter()
        .map(|x| cached.eval(x))
        .collect::<MooResult<_>>()?;
    if evals.iter().all(|e| !e.is_feasible()) {
        return Err(MooError::AllInfeasible);
    }
    if let Some(reference) = &params.hypervolume_reference {
        let expected = evals[0].objectives.len();
        if reference.len() != expected {
            return Err(MooError::ReferenceLength {
                expected,
                got: reference.len(),
            });
        }
    }

    let mut ranks = non_dominated_ranks(&evals);
    let mut crowding = crowding_for_population(&evals, &ranks);
    let mut history = Vec::with_capacity(params.generations + 1);
    history.push(generation_stats(0, &evals, &ranks, params));

    for generation in 0..params.generations {
        // Offspring by binary tournament, SBX and polynomial mutation.
        let mut offspring: Vec<Vec<f64>> = Vec::with_capacity(params.population);
        while offspring.len() < params.population {
            let pick = |rng: &mut ChaCha8Rng| {
                let a = rng.gen_range(0..params.population);
                let b = rng.gen_range(0..params.population);
                tournament_winner(a, b, &ranks, &crowding)
            };
            let p1 = pick(&mut rng);
            let p2 = pick(&mut rng);
            let (mut c1, mut c2) = sbx_crossover(
                &population[p1],
                &population[p2],
                bounds,
                params.crossover_eta,
                params.crossover_probability,
                &mut rng,
            );
            polynomial_mutation(&mut c1, bounds, params.mutation_eta, mutation_probability, &mut rng);
            polynomial_mutation(&mut c2, bounds, params.mutation_eta, mutation_probability, &mut rng);
            bounds.clip(&mut c1);
            bounds.clip(&mut c2);
            offspring.push(c1);
            offspring.push(c2);
        }

        // Combine, sort, and keep the best half front by front.
        let mut combined = population;
        combined.extend(offspring);
        let mut combined_evals = evals;
        for x in &combined[combined_evals.len()..] {
            combined_evals.push(cached.eval(x)?);
        }
        let combined_ranks = non_dominated_ranks(&combined_evals);
        let max_rank = combined_ranks.iter().copied().max().unwrap_or(0);
        let mut next: Vec<usize> = Vec::with_capacity(params.population);
        for level in 0..=max_rank {
            let mut front: Vec<usize> = (0..combined.len())
                .filter(|&i| combined_ranks[i] == level)
                .collect();
            if next.len() + front.len() <= params.population {
                next.extend(front);
            } else {
                let distances = crowding_distances(&combined_evals, &front);
                let mut order: Vec<usize> = (0..front.len()).collect();
                order.sort_by(|&a, &b| {
                    distances[b]
                        .total_cmp(&distances[a])
                        .then(front[a].cmp(&front[b]))
                });
                front = order.iter().map(|&k| front[k]).collect();
                front.truncate(params.population - next.len());
                next.extend(front);
                break;
            }
        }
        population = next.iter().map(|&i| combined[i].clone()).collect();
        evals = next.iter().map(|&i| combined_evals[i].clone()).collect();
        ranks = non_dominated_ranks(&evals);
        crowding = crowding_for_population(&evals, &ranks);
        history.push(generation_stats(generation + 1, &evals, &ranks, params));
    }

    let mut members: Vec<Individual> = population
        .into_iter()
        .zip(evals)
        .zip(ranks.iter().zip(&crowding))
        .map(|((x, eval), (&rank, &crowd))| Individual {
            x,
            objectives: eval.objectives,
            violation: eval.violation,
            rank,
            crowding: crowd,
        })
        .collect();
    members.sort_by(|a, b| {
        a.rank
            .cmp(&b.rank)
            .then(b.crowding.total_cmp(&a.crowding))
            .then(a.x[0].total_cmp(&b.x[0]))
    });
    Ok(ParetoFront {
        population: members,
        history,
        evaluations: cached.evaluations,
        cache_hits: cached.cache_hits,
    })
}

fn crowding_for_population(evals: &[Evaluation], ranks: &[usize]) -> Vec<f64> {
    let mut crowding = vec![0.0; evals.len()];
    let max_rank = ranks.iter().copied().max().unwrap_or(0);
    for level in 0..=max_rank {
        let front: Vec<usize> = (0..evals.len()).filter(|&i| ranks[i] == level).collect();
        if front.is_empty() {
            continue;
        }
        let distances = crowding_distances(evals, &front);
        for (&i, &d) in front.iter().zip(&distances) {
            crowding[i] = d;
        }
    }
    crowding
}

fn generation_stats(
    generation: usize,
    evals: &[Evaluation],
    ranks: &[usize],
    params: &NsgaParams,
) -> GenerationStats {
    let feasible: Vec<&Evaluation> = evals.iter().filter(|e| e.is_feasible()).collect();
    let objective_count = evals.first().map(|e| e.objectives.len()).unwrap_or(0);
    let mut best = vec![f64::INFINITY; objective_count];
    for e in &feasible {
        for (slot, &v) in best.iter_mut().zip(&e.objectives) {
            *slot = slot.min(v);
        }
    }
    let hypervolume_value = params.hypervolume_reference.as_ref().map(|reference| {
        let first_front: Vec<Vec<f64>> = evals
            .iter()
            .zip(ranks)
            .filter(|(e, &r)| r == 0 && e.is_feasible())
            .map(|(e, _)| e.objectives.clone())
            .collect();
        hypervolume(&first_front, reference)
    });
    GenerationStats {
        generation,
        best,
        feasible_count: feasible.len(),
        hypervolume: hypervolume_value,
    }
}
