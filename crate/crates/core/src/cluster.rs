//! Genetic K-means.
//!
//! A chromosome is an assignment vector. Each generation applies
//! fitness-proportional selection, per-gene allele mutation and one K-means
//! operator pass (recompute centroids, reassign to the nearest one); the best
//! `elitism_count` individuals survive unchanged. The objective is the total
//! within-cluster variation (TWCV).

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{squared_distance, Matrix};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaParams {
    pub population_size: usize,
    pub generations: usize,
    /// Per-gene probability of reassigning a point to a random cluster.
    pub mutation_prob: f64,
    pub elitism_count: usize,
    pub seed: u64,
}

impl Default for GaParams {
    fn default() -> Self {
        GaParams { population_size: 30, generations: 100, mutation_prob: 0.05, elitism_count: 2, seed: 0 }
    }
}

impl GaParams {
    pub fn with_seed(seed: u64) -> Self {
        GaParams { seed, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.population_size < 2 {
            return Err(Error::invalid("population_size must be >= 2"));
        }
        if self.generations < 1 {
            return Err(Error::invalid("generations must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.mutation_prob) {
            return Err(Error::invalid("mutation_prob must lie in [0,1]"));
        }
        if self.elitism_count > self.population_size {
            return Err(Error::invalid("elitism_count exceeds population_size"));
        }
        Ok(())
    }
}

/// A hard partition with its centroids and TWCV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub k: usize,
    pub centroids: Matrix,
    pub assignment: Vec<usize>,
    pub twcv: f64,
}

impl Clustering {
    /// Builds a clustering from an assignment, computing centroids and TWCV.
    pub fn from_assignment(data: &Matrix, k: usize, assignment: Vec<usize>) -> Result<Self> {
        if assignment.len() != data.rows() {
            return Err(Error::invalid("assignment length differs from row count"));
        }
        if let Some(&bad) = assignment.iter().find(|&&c| c >= k) {
            return Err(Error::invalid(format!("cluster index {bad} out of range for k = {k}")));
        }
        let (centroids, counts) = centroids_of(data, &assignment, k);
        if counts.contains(&0) {
            return Err(Error::invalid("every cluster must be non-empty"));
        }
        let twcv = twcv(data, &assignment, &centroids);
        Ok(Clustering { k, centroids, assignment, twcv })
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &c in &self.assignment {
            sizes[c] += 1;
        }
        sizes
    }

    /// Index of the centroid nearest to `point` (lowest index on ties).
    pub fn nearest(&self, point: &[f64]) -> usize {
        nearest(point, &self.centroids, |_| true)
    }
}

pub fn centroids_of(data: &Matrix, assignment: &[usize], k: usize) -> (Matrix, Vec<usize>) {
    let d = data.cols();
    let mut sums = Matrix::zeros(k, d);
    let mut counts = vec![0usize; k];
    for (i, &c) in assignment.iter().enumerate() {
        counts[c] += 1;
        for (s, x) in sums.row_mut(c).iter_mut().zip(data.row(i)) {
            *s += x;
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            let n = counts[c] as f64;
            sums.row_mut(c).iter_mut().for_each(|s| *s /= n);
        }
    }
    (sums, counts)
}

pub fn twcv(data: &Matrix, assignment: &[usize], centroids: &Matrix) -> f64 {
    assignment.iter().enumerate().map(|(i, &c)| squared_distance(data.row(i), centroids.row(c))).sum()
}

fn nearest(point: &[f64], centroids: &Matrix, usable: impl Fn(usize) -> bool) -> usize {
    let mut best = usize::MAX;
    let mut best_d = f64::INFINITY;
    for c in 0..centroids.rows() {
        if !usable(c) {
            continue;
        }
        let d = squared_distance(point, centroids.row(c));
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

/// One K-means operator pass with empty-cluster repair. Returns the TWCV of
/// the resulting (legal) assignment.
fn kmeans_operator(data: &Matrix, k: usize, assignment: &mut [usize]) -> f64 {
    let (centroids, counts) = centroids_of(data, assignment, k);
    for (i, a) in assignment.iter_mut().enumerate() {
        *a = nearest(data.row(i), &centroids, |c| counts[c] > 0);
    }
    repair_empty(data, k, assignment);
    let (centroids, _) = centroids_of(data, assignment, k);
    twcv(data, assignment, &centroids)
}

/// Moves the point farthest from its centroid into each empty cluster.
fn repair_empty(data: &Matrix, k: usize, assignment: &mut [usize]) {
    loop {
        let (centroids, counts) = centroids_of(data, assignment, k);
        let Some(empty) = counts.iter().position(|&c| c == 0) else { return };
        let mut far = None;
        let mut far_d = -1.0;
        for (i, &c) in assignment.iter().enumerate() {
            if counts[c] < 2 {
                continue;
            }
            let d = squared_distance(data.row(i), centroids.row(c));
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        match far {
            Some(i) => assignment[i] = empty,
            None => return,
        }
    }
}

/// Repeats the K-means operator until the assignment stops changing, keeping
/// the best TWCV seen.
fn polish(data: &Matrix, k: usize, assignment: &mut Vec<usize>, mut best: f64) -> f64 {
    let mut current = assignment.clone();
    for _ in 0..200 {
        let before = current.clone();
        let v = kmeans_operator(data, k, &mut current);
        if v < best {
            best = v;
            assignment.clone_from(&current);
        }
        if current == before {
            break;
        }
    }
    best
}

fn init_individual(data: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let picks = sample(rng, data.rows(), k).into_vec();
    let centroids = data.select_rows(&picks);
    (0..data.rows()).map(|i| nearest(data.row(i), &centroids, |_| true)).collect()
}

fn roulette(fitness: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = fitness.iter().sum();
    let mut target = rng.random::<f64>() * total;
    for (i, &f) in fitness.iter().enumerate() {
        target -= f;
        if target < 0.0 {
            return i;
        }
    }
    fitness.len() - 1
}

#[derive(Clone, Debug)]
pub struct GaTrace {
    pub clustering: Clustering,
    /// Best TWCV in the population after initialization and after each generation.
    pub best_per_generation: Vec<f64>,
}

pub fn ga_kmeans(data: &Matrix, k: usize, params: &GaParams) -> Result<Clustering> {
    ga_kmeans_traced(data, k, params).map(|t| t.clustering)
}

pub fn ga_kmeans_traced(data: &Matrix, k: usize, params: &GaParams) -> Result<GaTrace> {
    if k < 2 {
        return Err(Error::invalid(format!("k must be >= 2, got {k}")));
    }
    if data.rows() < k {
        return Err(Error::invalid(format!("need at least k = {k} points, got {}", data.rows())));
    }
    params.validate()?;
    let mut rng = seed::rng(params.seed);
    let n = data.rows();

    let mut population: Vec<Vec<usize>> = Vec::with_capacity(params.population_size);
    let mut scores = Vec::with_capacity(params.population_size);
    for _ in 0..params.population_size {
        let mut ind = init_individual(data, k, &mut rng);
        scores.push(kmeans_operator(data, k, &mut ind));
        population.push(ind);
    }

    let best_of = |scores: &[f64]| {
        scores
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
            .map(|(i, &s)| (i, s))
            .expect("non-empty population")
    };
    let mut history = vec![best_of(&scores).1];

    for _ in 0..params.generations {
        let mut order: Vec<usize> = (0..population.len()).collect();
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));

        let worst = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let best = scores[order[0]];
        let eps = 1e-9 * (worst - best) + 1e-12;
        let fitness: Vec<f64> = scores.iter().map(|s| (worst - s) + eps).collect();

        let mut next = Vec::with_capacity(population.len());
        let mut next_scores = Vec::with_capacity(population.len());
        for &e in order.iter().take(params.elitism_count) {
            next.push(population[e].clone());
            next_scores.push(scores[e]);
        }
        while next.len() < params.population_size {
            let parent = roulette(&fitness, &mut rng);
            let mut child = population[parent].clone();
            for gene in child.iter_mut() {
                if rng.random::<f64>() < params.mutation_prob {
                    *gene = rng.random_range(0..k);
                }
            }
            next_scores.push(kmeans_operator(data, k, &mut child));
            next.push(child);
        }
        population = next;
        scores = next_scores;
        history.push(best_of(&scores).1);
    }

    let (bi, bs) = best_of(&scores);
    let mut assignment = population.swap_remove(bi);
    polish(data, k, &mut assignment, bs);
    debug_assert_eq!(assignment.len(), n);
    let clustering = Clustering::from_assignment(data, k, assignment)?;
    Ok(GaTrace { clustering, best_per_generation: history })
}

/// Plain Lloyd iterations from `k` distinct random points; the single-restart
/// baseline the genetic search is compared against.
pub fn lloyd_kmeans(data: &Matrix, k: usize, seed: u64, max_iter: usize) -> Result<Clustering> {
    if k < 1 || data.rows() < k {
        return Err(Error::invalid("need 1 <= k <= n"));
    }
    let mut rng = seed::rng(seed);
    let picks = sample(&mut rng, data.rows(), k).into_vec();
    let mut centroids = data.select_rows(&picks);
    let mut assignment = vec![usize::MAX; data.rows()];
    for _ in 0..max_iter {
        let next: Vec<usize> = (0..data.rows()).map(|i| nearest(data.row(i), &centroids, |_| true)).collect();
        if next == assignment {
            break;
        }
        assignment = next;
        let (c, counts) = centroids_of(data, &assignment, k);
        for j in 0..k {
            if counts[j] > 0 {
                centroids.row_mut(j).copy_from_slice(c.row(j));
            }
        }
    }
    let (final_centroids, counts) = centroids_of(data, &assignment, k);
    for j in 0..k {
        if counts[j] > 0 {
            centroids.row_mut(j).copy_from_slice(final_centroids.row(j));
        }
    }
    let twcv = twcv(data, &assignment, &centroids);
    Ok(Clustering { k, centroids, assignment, twcv })
}
