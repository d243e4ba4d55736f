//! Per-stratum clustering of response vectors and rerun consistency.
//!
//! Responses are grouped into strata, one per (task, correctness class), and
//! each stratum is clustered separately with Lloyd k-means or Voronoi
//! k-medoids. Stability across reruns is quantified by the same-way-pair
//! ratio: the fraction of response pairs that land the same way (together or
//! apart) in two clusterings, i.e. the unadjusted Rand index. Every tie-break
//! (nearest centroid, medoid choice) resolves by lowest index or item id, so
//! a permutation of the input order never changes the induced partition.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, ItemId, Label, LabelSource, LABEL_SCALE};
use crate::representations::VectorSet;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("k must be at least 1")]
    KZero,
    #[error("k = {k} exceeds the {n} members of the stratum")]
    KTooLarge { k: usize, n: usize },
    #[error("stratum has no members")]
    EmptyStratum,
    #[error("no vector for item {0}")]
    MissingVector(String),
    #[error("clusterings cover different member sets")]
    MemberMismatch,
    #[error("rerun consistency needs at least 2 seeds, got {got}")]
    TooFewSeeds { got: usize },
}

/// All responses of one (task, class) cell, members in canonical order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stratum {
    pub task_id: String,
    pub class: Label,
    pub members: Vec<ItemId>,
}

impl Stratum {
    pub fn new(task_id: impl Into<String>, class: Label, mut members: Vec<ItemId>) -> Self {
        members.sort();
        members.dedup();
        Self {
            task_id: task_id.into(),
            class,
            members,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Strata with at least one member, plus the (task, class) cells that were
/// empty and therefore omitted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StrataResult {
    pub strata: Vec<Stratum>,
    pub empty_cells: Vec<(String, Label)>,
}

/// Group scored items into one stratum per (task, class) under the given
/// label source. Empty cells are omitted and reported, not errors.
pub fn build_strata(corpus: &Corpus, labels: &LabelSource) -> StrataResult {
    let resolved = labels.resolve(corpus);
    let mut cells: BTreeMap<(String, u8), Vec<ItemId>> = BTreeMap::new();
    for (item, label) in resolved {
        cells
            .entry((item.task_id.clone(), label.value()))
            .or_default()
            .push(item);
    }
    let tasks: BTreeSet<String> = cells.keys().map(|(task, _)| task.clone()).collect();
    let mut strata = Vec::new();
    let mut empty_cells = Vec::new();
    for task in tasks {
        for class in 0..LABEL_SCALE as u8 {
            let label = Label::new(i64::from(class)).expect("class in scale");
            match cells.remove(&(task.clone(), class)) {
                Some(members) => strata.push(Stratum::new(task.clone(), label, members)),
                None => empty_cells.push((task.clone(), label)),
            }
        }
    }
    StrataResult {
        strata,
        empty_cells,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    KMeans,
    KMedoids,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    Euclidean,
    Cosine,
}

impl Distance {
    fn between(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Distance::Euclidean => squared_euclidean(a, b).sqrt(),
            Distance::Cosine => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                if na == 0.0 && nb == 0.0 {
                    0.0
                } else if na == 0.0 || nb == 0.0 {
                    1.0
                } else {
                    1.0 - dot / (na * nb)
                }
            }
        }
    }
}

fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// A partition of one stratum's members into dense cluster indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub stratum: Stratum,
    pub algorithm: Algorithm,
    pub k: usize,
    pub seed: u64,
    pub iterations: usize,
    /// Objective (WCSS for k-means, summed medoid distance for k-medoids)
    /// after each iteration, non-increasing.
    pub objective_trace: Vec<f64>,
    assignment: BTreeMap<ItemId, usize>,
}

impl Clustering {
    /// Construct directly from an assignment (testing and report replay).
    #[doc(hidden)]
    pub fn from_assignment(
        stratum: Stratum,
        algorithm: Algorithm,
        k: usize,
        seed: u64,
        assignment: BTreeMap<ItemId, usize>,
    ) -> Self {
        Self {
            stratum,
            algorithm,
            k,
            seed,
            iterations: 0,
            objective_trace: Vec::new(),
            assignment,
        }
    }

    pub fn cluster_of(&self, item: &ItemId) -> Option<usize> {
        self.assignment.get(item).copied()
    }

    pub fn assignment(&self) -> &BTreeMap<ItemId, usize> {
        &self.assignment
    }

    /// Number of distinct clusters actually present.
    pub fn n_clusters(&self) -> usize {
        self.assignment.values().collect::<BTreeSet<_>>().len()
    }

    pub fn final_objective(&self) -> Option<f64> {
        self.objective_trace.last().copied()
    }
}

/// Remap cluster indices to dense 0..m preserving index order, so no empty
/// cluster appears in the output.
fn compact(raw: Vec<usize>) -> Vec<usize> {
    let used: BTreeSet<usize> = raw.iter().copied().collect();
    let remap: BTreeMap<usize, usize> = used.into_iter().zip(0..).collect();
    raw.into_iter().map(|c| remap[&c]).collect()
}

fn gather<'a>(vectors: &'a VectorSet, stratum: &Stratum) -> Result<Vec<&'a [f64]>, ClusterError> {
    stratum
        .members
        .iter()
        .map(|item| {
            vectors
                .get(item)
                .ok_or_else(|| ClusterError::MissingVector(item.to_string()))
        })
        .collect()
}

fn validate_k(k: usize, n: usize) -> Result<(), ClusterError> {
    if n == 0 {
        return Err(ClusterError::EmptyStratum);
    }
    if k == 0 {
        return Err(ClusterError::KZero);
    }
    if k > n {
        return Err(ClusterError::KTooLarge { k, n });
    }
    Ok(())
}

/// Default cluster count for a stratum of `n` members:
/// `min(5, ceil(n/10), n)`, small enough to stay instructor-readable.
pub fn default_k(n: usize) -> usize {
    5.min(n.div_ceil(10)).min(n).max(1)
}

/// Seeded draw of `k` distinct member indices, in draw order.
fn seeded_distinct(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand::seq::index::sample(&mut rng, n, k).into_vec()
}

/// Lloyd k-means under squared Euclidean distance.
///
/// Ties in assignment go to the lowest centroid index; an empty cluster is
/// reseeded with the point farthest from its own centroid (lowest item id on
/// ties), which strictly reduces the objective.
pub fn kmeans(
    vectors: &VectorSet,
    stratum: &Stratum,
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<Clustering, ClusterError> {
    let data = gather(vectors, stratum)?;
    let n = data.len();
    validate_k(k, n)?;
    let dim = vectors.dim();

    let mut centroids: Vec<Vec<f64>> = seeded_distinct(n, k, seed)
        .into_iter()
        .map(|i| data[i].to_vec())
        .collect();
    let mut assignment = vec![0usize; n];
    let mut trace = Vec::new();
    let mut iterations = 0;

    for _ in 0..max_iter {
        iterations += 1;

        let mut new_assignment = Vec::with_capacity(n);
        for x in &data {
            let mut best = 0;
            let mut best_d = squared_euclidean(x, &centroids[0]);
            for (c, centroid) in centroids.iter().enumerate().skip(1) {
                let d = squared_euclidean(x, centroid);
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            new_assignment.push(best);
        }

        // Reseed empty clusters, ascending index. A donor cluster always has
        // at least two members while any cluster is empty (k <= n).
        let mut sizes = vec![0usize; k];
        for &c in &new_assignment {
            sizes[c] += 1;
        }
        for empty in 0..k {
            if sizes[empty] > 0 {
                continue;
            }
            let mut donor: Option<(usize, f64)> = None;
            for (i, x) in data.iter().enumerate() {
                if sizes[new_assignment[i]] < 2 {
                    continue;
                }
                let d = squared_euclidean(x, &centroids[new_assignment[i]]);
                if donor.is_none_or(|(_, best)| d > best) {
                    donor = Some((i, d));
                }
            }
            let (i, _) = donor.expect("a multi-member cluster exists");
            sizes[new_assignment[i]] -= 1;
            new_assignment[i] = empty;
            sizes[empty] = 1;
            centroids[empty] = data[i].to_vec();
        }

        let objective: f64 = data
            .iter()
            .zip(&new_assignment)
            .map(|(x, &c)| squared_euclidean(x, &centroids[c]))
            .sum();
        trace.push(objective);

        let unchanged = new_assignment == assignment && iterations > 1;
        assignment = new_assignment;

        let mut shift: f64 = 0.0;
        let mut means = vec![vec![0.0; dim]; k];
        for (x, &c) in data.iter().zip(&assignment) {
            for (m, v) in means[c].iter_mut().zip(x.iter()) {
                *m += v;
            }
        }
        for (c, mean) in means.iter_mut().enumerate() {
            for v in mean.iter_mut() {
                *v /= sizes[c] as f64;
            }
            shift = shift.max(squared_euclidean(mean, &centroids[c]).sqrt());
        }
        centroids = means;

        if unchanged || shift < tol {
            break;
        }
    }

    let compacted = compact(assignment);
    Ok(Clustering {
        stratum: stratum.clone(),
        algorithm: Algorithm::KMeans,
        k,
        seed,
        iterations,
        objective_trace: trace,
        assignment: stratum.members.iter().cloned().zip(compacted).collect(),
    })
}

/// Voronoi k-medoids under Euclidean or cosine distance.
///
/// Assignment ties go to the lowest medoid index; the medoid of each cluster
/// is the member minimizing summed distance to co-members, lowest item id on
/// ties (members are in canonical order, so the first minimum wins).
pub fn kmedoids(
    vectors: &VectorSet,
    stratum: &Stratum,
    k: usize,
    distance: Distance,
    seed: u64,
    max_iter: usize,
) -> Result<Clustering, ClusterError> {
    let data = gather(vectors, stratum)?;
    let n = data.len();
    validate_k(k, n)?;

    let mut medoids = seeded_distinct(n, k, seed);
    let mut assignment = vec![0usize; n];
    let mut trace = Vec::new();
    let mut iterations = 0;

    for _ in 0..max_iter {
        iterations += 1;

        let mut cost = 0.0;
        for (i, x) in data.iter().enumerate() {
            let mut best = 0;
            let mut best_d = distance.between(x, data[medoids[0]]);
            for (c, &m) in medoids.iter().enumerate().skip(1) {
                let d = distance.between(x, data[m]);
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            assignment[i] = best;
            cost += best_d;
        }
        trace.push(cost);

        let mut new_medoids = medoids.clone();
        for c in 0..k {
            let members: Vec<usize> = (0..n).filter(|&i| assignment[i] == c).collect();
            if members.is_empty() {
                continue;
            }
            let mut best = members[0];
            let mut best_sum = f64::INFINITY;
            for &candidate in &members {
                let sum: f64 = members
                    .iter()
                    .map(|&other| distance.between(data[candidate], data[other]))
                    .sum();
                if sum < best_sum {
                    best = candidate;
                    best_sum = sum;
                }
            }
            new_medoids[c] = best;
        }

        if new_medoids == medoids && iterations > 1 {
            break;
        }
        medoids = new_medoids;
    }

    let compacted = compact(assignment);
    Ok(Clustering {
        stratum: stratum.clone(),
        algorithm: Algorithm::KMedoids,
        k,
        seed,
        iterations,
        objective_trace: trace,
        assignment: stratum.members.iter().cloned().zip(compacted).collect(),
    })
}

/// Same-way-pair counts between two clusterings of the same members.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyScore {
    pub value: f64,
    pub agree_together: u64,
    pub agree_apart: u64,
    pub disagree: u64,
}

/// Fraction of unordered member pairs whose co-membership status matches
/// between the two clusterings (the unadjusted Rand index), by direct pair
/// scan. Fewer than two members leaves no pairs to contradict: value 1.
pub fn consistency(a: &Clustering, b: &Clustering) -> Result<ConsistencyScore, ClusterError> {
    if a.stratum.members != b.stratum.members {
        return Err(ClusterError::MemberMismatch);
    }
    let members = &a.stratum.members;
    let mut agree_together = 0u64;
    let mut agree_apart = 0u64;
    let mut disagree = 0u64;
    for i in 0..members.len() {
        for j in (i + 1)..members.len() {
            let together_a = a.assignment[&members[i]] == a.assignment[&members[j]];
            let together_b = b.assignment[&members[i]] == b.assignment[&members[j]];
            match (together_a, together_b) {
                (true, true) => agree_together += 1,
                (false, false) => agree_apart += 1,
                _ => disagree += 1,
            }
        }
    }
    let total = agree_together + agree_apart + disagree;
    Ok(ConsistencyScore {
        value: if total == 0 {
            1.0
        } else {
            (agree_together + agree_apart) as f64 / total as f64
        },
        agree_together,
        agree_apart,
        disagree,
    })
}

/// How one stratum should be clustered.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub algorithm: Algorithm,
    /// None: use [`default_k`] for the stratum size.
    pub k: Option<usize>,
    pub distance: Distance,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::KMeans,
            k: None,
            distance: Distance::Euclidean,
            max_iter: 100,
            tol: 1e-9,
        }
    }
}

/// Cluster one stratum under the config, resolving the default k.
pub fn run_clustering(
    vectors: &VectorSet,
    stratum: &Stratum,
    config: &ClusterConfig,
    seed: u64,
) -> Result<Clustering, ClusterError> {
    let k = config.k.unwrap_or_else(|| default_k(stratum.len()));
    match config.algorithm {
        Algorithm::KMeans => kmeans(vectors, stratum, k, seed, config.max_iter, config.tol),
        Algorithm::KMedoids => {
            kmedoids(vectors, stratum, k, config.distance, seed, config.max_iter)
        }
    }
}

/// Rerun stability for one stratum: pairwise consistency over a seed list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RerunConsistency {
    pub seeds: Vec<u64>,
    /// Full symmetric matrix, `pairwise[i][j]` = consistency of runs i and j.
    pub pairwise: Vec<Vec<f64>>,
    /// Mean over the strictly-upper-triangle seed pairs.
    pub mean: f64,
}

/// Cluster once per seed (optionally refreshing the representation first via
/// `retrain_hook`, e.g. retraining WTMF under that run's seed) and score all
/// seed pairs.
pub fn rerun_consistency(
    vectors: &VectorSet,
    stratum: &Stratum,
    config: &ClusterConfig,
    seeds: &[u64],
    mut retrain_hook: Option<&mut dyn FnMut(u64) -> VectorSet>,
) -> Result<RerunConsistency, ClusterError> {
    if seeds.len() < 2 {
        return Err(ClusterError::TooFewSeeds { got: seeds.len() });
    }
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let refreshed = retrain_hook.as_mut().map(|hook| hook(seed));
        let active = refreshed.as_ref().unwrap_or(vectors);
        runs.push(run_clustering(active, stratum, config, seed)?);
    }
    let m = runs.len();
    let mut pairwise = vec![vec![1.0; m]; m];
    let mut total = 0.0;
    let mut count = 0u64;
    for i in 0..m {
        for j in (i + 1)..m {
            let score = consistency(&runs[i], &runs[j])?.value;
            pairwise[i][j] = score;
            pairwise[j][i] = score;
            total += score;
            count += 1;
        }
    }
    Ok(RerunConsistency {
        seeds: seeds.to_vec(),
        pairwise,
        mean: total / count as f64,
    })
}

/// Write clusterings as CSV `task_id,class,student_id,cluster`, strata in
/// (task, class) order and members in canonical order.
pub fn write_clusters_csv(clusterings: &[Clustering], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "task_id,class,student_id,cluster")?;
    let mut sorted: Vec<&Clustering> = clusterings.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.stratum.task_id, a.stratum.class).cmp(&(&b.stratum.task_id, b.stratum.class))
    });
    for clustering in sorted {
        for member in &clustering.stratum.members {
            writeln!(
                w,
                "{},{},{},{}",
                clustering.stratum.task_id,
                clustering.stratum.class,
                member.student_id,
                clustering.assignment[member]
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{RaterKey, Response, ScoreRecord};
    use crate::representations::Provenance;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn item(i: usize) -> ItemId {
        ItemId::new(format!("s{i:02}"), "t")
    }

    fn vector_set(points: &[&[f64]]) -> (VectorSet, Stratum) {
        let dim = points[0].len();
        let mut set = VectorSet::new(dim, Provenance::External);
        let mut members = Vec::new();
        for (i, p) in points.iter().enumerate() {
            set.insert(item(i), p.to_vec()).unwrap();
            members.push(item(i));
        }
        let stratum = Stratum::new("t", Label::new(0).unwrap(), members);
        (set, stratum)
    }

    #[test]
    fn build_strata_groups_by_task_and_class() {
        let mut corpus = Corpus::new();
        for (i, label) in [0i64, 0, 1].iter().enumerate() {
            corpus
                .insert_response(Response {
                    student_id: format!("s{i}"),
                    task_id: "t".to_string(),
                    text: "x".to_string(),
                })
                .unwrap();
            corpus
                .insert_score(ScoreRecord {
                    rater_id: "A".to_string(),
                    student_id: format!("s{i}"),
                    task_id: "t".to_string(),
                    label: Label::new(*label).unwrap(),
                    epoch: "current".to_string(),
                })
                .unwrap();
        }
        let result = build_strata(&corpus, &LabelSource::Rater(RaterKey::current("A")));
        assert_eq!(result.strata.len(), 2);
        assert_eq!(result.strata[0].class.value(), 0);
        assert_eq!(result.strata[0].len(), 2);
        assert_eq!(result.strata[1].class.value(), 1);
        assert_eq!(result.strata[1].len(), 1);
        assert_eq!(
            result.empty_cells,
            vec![("t".to_string(), Label::new(2).unwrap())]
        );
    }

    #[test]
    fn build_strata_consensus_tie_goes_to_lower_class() {
        let mut corpus = Corpus::new();
        corpus
            .insert_response(Response {
                student_id: "s1".to_string(),
                task_id: "t".to_string(),
                text: "x".to_string(),
            })
            .unwrap();
        for (rater, label) in [("A", 1i64), ("B", 1), ("C", 2), ("D", 2)] {
            corpus
                .insert_score(ScoreRecord {
                    rater_id: rater.to_string(),
                    student_id: "s1".to_string(),
                    task_id: "t".to_string(),
                    label: Label::new(label).unwrap(),
                    epoch: "current".to_string(),
                })
                .unwrap();
        }
        let result = build_strata(&corpus, &LabelSource::Consensus);
        assert_eq!(result.strata.len(), 1);
        assert_eq!(result.strata[0].class.value(), 1);
    }

    #[test]
    fn kmeans_k_equals_n_zero_objective() {
        let (set, stratum) = vector_set(&[&[0.0, 0.0], &[5.0, 0.0], &[0.0, 5.0]]);
        let clustering = kmeans(&set, &stratum, 3, 7, 50, 1e-9).unwrap();
        assert_eq!(clustering.n_clusters(), 3);
        assert_relative_eq!(clustering.final_objective().unwrap(), 0.0);
    }

    #[test]
    fn kmeans_two_blobs_recovered_for_every_seed() {
        let mut points: Vec<Vec<f64>> = Vec::new();
        for i in 0..6 {
            points.push(vec![0.0 + 0.1 * i as f64, 0.0]);
        }
        for i in 0..6 {
            points.push(vec![100.0 + 0.1 * i as f64, 0.0]);
        }
        let refs: Vec<&[f64]> = points.iter().map(Vec::as_slice).collect();
        let (set, stratum) = vector_set(&refs);
        for seed in 0..25 {
            let clustering = kmeans(&set, &stratum, 2, seed, 100, 1e-9).unwrap();
            let left = clustering.cluster_of(&item(0)).unwrap();
            let right = clustering.cluster_of(&item(6)).unwrap();
            assert_ne!(left, right, "seed {seed}");
            for i in 0..6 {
                assert_eq!(clustering.cluster_of(&item(i)), Some(left), "seed {seed}");
                assert_eq!(
                    clustering.cluster_of(&item(i + 6)),
                    Some(right),
                    "seed {seed}"
                );
            }
        }
    }

    #[test]
    fn kmeans_k1_mean_and_objective_oracle() {
        // Points 0, 3, 9: mean 4, WCSS = 16 + 1 + 25 = 42.
        let (set, stratum) = vector_set(&[&[0.0], &[3.0], &[9.0]]);
        let clustering = kmeans(&set, &stratum, 1, 3, 50, 1e-9).unwrap();
        assert_eq!(clustering.n_clusters(), 1);
        assert_relative_eq!(
            clustering.final_objective().unwrap(),
            42.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn kmeans_objective_non_increasing() {
        let points: Vec<Vec<f64>> = (0..12)
            .map(|i| vec![(i * 7 % 13) as f64, (i * 5 % 11) as f64])
            .collect();
        let refs: Vec<&[f64]> = points.iter().map(Vec::as_slice).collect();
        let (set, stratum) = vector_set(&refs);
        for seed in 0..10 {
            let clustering = kmeans(&set, &stratum, 3, seed, 100, 0.0).unwrap();
            for pair in clustering.objective_trace.windows(2) {
                assert!(
                    pair[1] <= pair[0] + 1e-9,
                    "seed {seed}: {} -> {}",
                    pair[0],
                    pair[1]
                );
            }
        }
    }

    #[test]
    fn kmedoids_k_equals_n_zero_cost() {
        let (set, stratum) = vector_set(&[&[0.0], &[2.0], &[10.0]]);
        let clustering = kmedoids(&set, &stratum, 3, Distance::Euclidean, 5, 50).unwrap();
        assert_eq!(clustering.n_clusters(), 3);
        assert_relative_eq!(clustering.final_objective().unwrap(), 0.0);
    }

    #[test]
    fn kmedoids_collinear_oracle() {
        // 0, 1, 10 with k=2. The converged partition is decided by the seeded
        // initial medoids: any start containing the far point settles on
        // {0,1} | {10} (cost 1); the {0,1} start is itself a fixed point of
        // the Voronoi update, {0} | {1,10} (cost 9).
        let (set, stratum) = vector_set(&[&[0.0], &[1.0], &[10.0]]);
        let mut saw_far_start = false;
        let mut saw_near_start = false;
        for seed in 0..15 {
            let clustering = kmedoids(&set, &stratum, 2, Distance::Euclidean, seed, 50).unwrap();
            let split_far = clustering.cluster_of(&item(0)) == clustering.cluster_of(&item(1));
            if seeded_distinct(3, 2, seed).contains(&2) {
                assert!(split_far, "seed {seed}");
                assert_relative_eq!(clustering.final_objective().unwrap(), 1.0);
                saw_far_start = true;
            } else {
                assert!(!split_far, "seed {seed}");
                assert_eq!(
                    clustering.cluster_of(&item(1)),
                    clustering.cluster_of(&item(2)),
                    "seed {seed}"
                );
                assert_relative_eq!(clustering.final_objective().unwrap(), 9.0);
                saw_near_start = true;
            }
        }
        assert!(saw_far_start && saw_near_start);
    }

    #[test]
    fn kmedoids_cosine_scale_invariant() {
        let (set_a, stratum) = vector_set(&[&[1.0, 0.0], &[0.9, 0.1], &[0.0, 1.0], &[0.1, 0.9]]);
        // Positive rescaling of each vector leaves cosine distances unchanged.
        let scales = [3.0, 0.5, 10.0, 7.0];
        let mut set_b = VectorSet::new(2, Provenance::External);
        for (i, (id, v)) in set_a.iter().enumerate() {
            set_b
                .insert(id.clone(), v.iter().map(|x| x * scales[i]).collect())
                .unwrap();
        }
        for seed in 0..10 {
            let a = kmedoids(&set_a, &stratum, 2, Distance::Cosine, seed, 50).unwrap();
            let b = kmedoids(&set_b, &stratum, 2, Distance::Cosine, seed, 50).unwrap();
            assert_relative_eq!(consistency(&a, &b).unwrap().value, 1.0);
        }
    }

    #[test]
    fn kmedoids_cost_non_increasing() {
        let points: Vec<Vec<f64>> = (0..10)
            .map(|i| vec![(i * 3 % 7) as f64, (i * 2 % 5) as f64])
            .collect();
        let refs: Vec<&[f64]> = points.iter().map(Vec::as_slice).collect();
        let (set, stratum) = vector_set(&refs);
        for seed in 0..10 {
            let clustering = kmedoids(&set, &stratum, 3, Distance::Euclidean, seed, 100).unwrap();
            for pair in clustering.objective_trace.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-9, "seed {seed}");
            }
        }
    }

    #[test]
    fn k_validation_errors() {
        let (set, stratum) = vector_set(&[&[0.0], &[1.0]]);
        assert_eq!(
            kmeans(&set, &stratum, 0, 0, 10, 1e-9).unwrap_err(),
            ClusterError::KZero
        );
        assert_eq!(
            kmeans(&set, &stratum, 3, 0, 10, 1e-9).unwrap_err(),
            ClusterError::KTooLarge { k: 3, n: 2 }
        );
        assert_eq!(
            kmedoids(&set, &stratum, 5, Distance::Euclidean, 0, 10).unwrap_err(),
            ClusterError::KTooLarge { k: 5, n: 2 }
        );
    }

    fn manual_clustering(assignments: &[usize]) -> Clustering {
        let members: Vec<ItemId> = (0..assignments.len()).map(item).collect();
        let stratum = Stratum::new("t", Label::new(0).unwrap(), members.clone());
        Clustering::from_assignment(
            stratum,
            Algorithm::KMeans,
            assignments.iter().max().map_or(1, |m| m + 1),
            0,
            members
                .into_iter()
                .zip(assignments.iter().copied())
                .collect(),
        )
    }

    #[test]
    fn consistency_identical_is_one() {
        let a = manual_clustering(&[0, 0, 1, 1, 2]);
        assert_relative_eq!(consistency(&a, &a).unwrap().value, 1.0);
    }

    #[test]
    fn consistency_relabeling_is_one() {
        let a = manual_clustering(&[0, 0, 1, 1, 2]);
        let b = manual_clustering(&[2, 2, 0, 0, 1]);
        assert_relative_eq!(consistency(&a, &b).unwrap().value, 1.0);
    }

    #[test]
    fn consistency_crossed_halves_oracle() {
        // {ab|cd} vs {ac|bd}: only pairs (a,d) and (b,c) are apart in both.
        let ab_cd = manual_clustering(&[0, 0, 1, 1]);
        let ac_bd = manual_clustering(&[0, 1, 0, 1]);
        let score = consistency(&ab_cd, &ac_bd).unwrap();
        assert_relative_eq!(score.value, 2.0 / 6.0, max_relative = 1e-12);
        assert_eq!(score.agree_together, 0);
        assert_eq!(score.agree_apart, 2);
        assert_eq!(score.disagree, 4);
    }

    #[test]
    fn consistency_singletons_vs_single_cluster_is_zero() {
        let singles = manual_clustering(&[0, 1, 2]);
        let lump = manual_clustering(&[0, 0, 0]);
        let score = consistency(&singles, &lump).unwrap();
        assert_relative_eq!(score.value, 0.0);
        assert_eq!(score.disagree, 3);
    }

    #[test]
    fn consistency_symmetric_and_counts_complete() {
        let a = manual_clustering(&[0, 1, 0, 1, 2, 2]);
        let b = manual_clustering(&[0, 0, 1, 1, 1, 2]);
        let ab = consistency(&a, &b).unwrap();
        let ba = consistency(&b, &a).unwrap();
        assert_eq!(ab, ba);
        assert_eq!(ab.agree_together + ab.agree_apart + ab.disagree, 15);
    }

    #[test]
    fn consistency_rejects_member_mismatch() {
        let a = manual_clustering(&[0, 1]);
        let b = manual_clustering(&[0, 1, 2]);
        assert_eq!(
            consistency(&a, &b).unwrap_err(),
            ClusterError::MemberMismatch
        );
    }

    #[test]
    fn rerun_identical_seeds_is_one() {
        let (set, stratum) = vector_set(&[&[0.0], &[1.0], &[5.0], &[6.0]]);
        let config = ClusterConfig {
            k: Some(2),
            ..ClusterConfig::default()
        };
        let result = rerun_consistency(&set, &stratum, &config, &[9, 9], None).unwrap();
        assert_relative_eq!(result.mean, 1.0);
    }

    #[test]
    fn rerun_requires_two_seeds() {
        let (set, stratum) = vector_set(&[&[0.0], &[1.0]]);
        let config = ClusterConfig::default();
        assert_eq!(
            rerun_consistency(&set, &stratum, &config, &[1], None).unwrap_err(),
            ClusterError::TooFewSeeds { got: 1 }
        );
    }

    #[test]
    fn rerun_hook_refreshes_representation() {
        // The hook emits a seed-dependent representation; with two clearly
        // separated groups the partition is stable anyway, proving the hook's
        // vectors were used (dimension differs from the base set).
        let (base, stratum) = vector_set(&[&[0.0], &[0.1], &[9.0], &[9.1]]);
        let config = ClusterConfig {
            k: Some(2),
            ..ClusterConfig::default()
        };
        let mut calls = Vec::new();
        let mut hook = |seed: u64| {
            calls.push(seed);
            let mut set = VectorSet::new(2, Provenance::Wtmf);
            for (i, offset) in [0.0, 0.1, 9.0, 9.1].iter().enumerate() {
                set.insert(item(i), vec![*offset, seed as f64]).unwrap();
            }
            set
        };
        let result =
            rerun_consistency(&base, &stratum, &config, &[3, 4, 5], Some(&mut hook)).unwrap();
        assert_eq!(calls, vec![3, 4, 5]);
        assert_relative_eq!(result.mean, 1.0);
    }

    #[test]
    fn equal_halves_exhaustive_mean_consistency() {
        // All 10 partitions of 6 items into unordered equal halves; the mean
        // pairwise consistency over independent uniform draws (including
        // identical pairs) is 13/25.
        let mut partitions = Vec::new();
        for mask in 0u32..64 {
            if mask.count_ones() == 3 && mask & 1 == 1 {
                // Fixing item 0 in the first half de-duplicates complements.
                let assignment: Vec<usize> =
                    (0..6).map(|i| usize::from(mask >> i & 1 == 0)).collect();
                partitions.push(manual_clustering(&assignment));
            }
        }
        assert_eq!(partitions.len(), 10);
        let mut total = 0.0;
        for a in &partitions {
            for b in &partitions {
                total += consistency(a, b).unwrap().value;
            }
        }
        assert_relative_eq!(total / 100.0, 13.0 / 25.0, max_relative = 1e-12);
    }

    #[test]
    fn k1_and_kn_rerun_consistency_one() {
        let (set, stratum) = vector_set(&[&[0.0], &[2.0], &[4.0], &[9.0]]);
        for k in [1, 4] {
            for algorithm in [Algorithm::KMeans, Algorithm::KMedoids] {
                let config = ClusterConfig {
                    algorithm,
                    k: Some(k),
                    ..ClusterConfig::default()
                };
                let result =
                    rerun_consistency(&set, &stratum, &config, &[1, 2, 3, 4], None).unwrap();
                assert_relative_eq!(result.mean, 1.0);
            }
        }
    }

    #[test]
    fn input_order_does_not_change_partition() {
        let points: Vec<Vec<f64>> = (0..9)
            .map(|i| vec![(i % 3) as f64 * 10.0 + i as f64 * 0.01])
            .collect();
        let mut set = VectorSet::new(1, Provenance::External);
        let mut forward = Vec::new();
        for (i, p) in points.iter().enumerate() {
            set.insert(item(i), p.clone()).unwrap();
            forward.push(item(i));
        }
        let mut reversed = forward.clone();
        reversed.reverse();
        let s1 = Stratum::new("t", Label::new(0).unwrap(), forward);
        let s2 = Stratum::new("t", Label::new(0).unwrap(), reversed);
        for seed in 0..5 {
            let a = kmeans(&set, &s1, 3, seed, 100, 1e-9).unwrap();
            let b = kmeans(&set, &s2, 3, seed, 100, 1e-9).unwrap();
            assert_eq!(a.assignment(), b.assignment(), "seed {seed}");
        }
    }

    #[test]
    fn default_k_formula() {
        assert_eq!(default_k(1), 1);
        assert_eq!(default_k(9), 1);
        assert_eq!(default_k(10), 1);
        assert_eq!(default_k(11), 2);
        assert_eq!(default_k(49), 5);
        assert_eq!(default_k(50), 5);
        assert_eq!(default_k(1000), 5);
    }

    #[test]
    fn clusters_csv_shape() {
        let clustering = manual_clustering(&[0, 1, 0]);
        let mut out = Vec::new();
        write_clusters_csv(&[clustering], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(
            text,
            "task_id,class,student_id,cluster\nt,0,s00,0\nt,0,s01,1\nt,0,s02,0\n"
        );
    }

    proptest! {
        #[test]
        fn prop_consistency_matches_contingency_identity(
            a in proptest::collection::vec(0usize..3, 2..12),
            b_raw in proptest::collection::vec(0usize..3, 12)
        ) {
            // Independent formulation via the contingency table:
            // agreeing pairs = C(n,2) + 2*sum_ij C(n_ij,2)
            //                  - sum_i C(a_i,2) - sum_j C(b_j,2).
            let n = a.len();
            let b: Vec<usize> = b_raw[..n].to_vec();
            let ca = manual_clustering(&a);
            let cb = manual_clustering(&b);
            let score = consistency(&ca, &cb).unwrap();

            let c2 = |x: u64| x * x.saturating_sub(1) / 2;
            let mut n_ij = [[0u64; 3]; 3];
            let mut a_i = [0u64; 3];
            let mut b_j = [0u64; 3];
            for (x, y) in a.iter().zip(b.iter()) {
                n_ij[*x][*y] += 1;
                a_i[*x] += 1;
                b_j[*y] += 1;
            }
            let pairs = c2(n as u64);
            let same_same: u64 = n_ij.iter().flatten().map(|c| c2(*c)).sum();
            let in_a: u64 = a_i.iter().map(|c| c2(*c)).sum();
            let in_b: u64 = b_j.iter().map(|c| c2(*c)).sum();
            let agreeing = pairs + 2 * same_same - in_a - in_b;
            prop_assert!((score.value - agreeing as f64 / pairs as f64).abs() < 1e-12);
        }

        #[test]
        fn prop_kmeans_trace_non_increasing(
            seed in any::<u64>(),
            coords in proptest::collection::vec(-10.0f64..10.0, 6..20),
            k in 1usize..4
        ) {
            let points: Vec<Vec<f64>> = coords.chunks(2).map(|c| c.to_vec()).collect();
            prop_assume!(points.iter().all(|p| p.len() == 2));
            prop_assume!(k <= points.len());
            let refs: Vec<&[f64]> = points.iter().map(Vec::as_slice).collect();
            let (set, stratum) = vector_set(&refs);
            let clustering = kmeans(&set, &stratum, k, seed, 60, 0.0).unwrap();
            for pair in clustering.objective_trace.windows(2) {
                prop_assert!(pair[1] <= pair[0] + 1e-9);
            }
        }
    }
}
