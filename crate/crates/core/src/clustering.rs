//! Partitioning contingencies from a distance matrix.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{DistanceMatrix, MetricKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MedoidVariant {
    /// BUILD then steepest-descent SWAP.
    #[default]
    Pam,
    /// Park–Jun initialization followed by alternating assign/update.
    ParkJun,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct MedoidOptions {
    /// Shuffles the order in which equal-cost candidates are considered.
    pub seed: Option<u64>,
    pub variant: MedoidVariant,
    /// Minimize the sum of squared distances instead of distances.
    pub squared: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    KCenters,
    KMedoids(MedoidOptions),
    DivisiveKCenters,
    DivisiveKMedoids(MedoidOptions),
}

impl Algorithm {
    pub fn seed(&self) -> Option<u64> {
        match self {
            Algorithm::KMedoids(o) | Algorithm::DivisiveKMedoids(o) => o.seed,
            _ => None,
        }
    }

    fn with_seed(self, seed: Option<u64>) -> Self {
        match self {
            Algorithm::KMedoids(o) => Algorithm::KMedoids(MedoidOptions { seed, ..o }),
            Algorithm::DivisiveKMedoids(o) => Algorithm::DivisiveKMedoids(MedoidOptions { seed, ..o }),
            other => other,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (name, opts) = match self {
            Algorithm::KCenters => ("k_centers", None),
            Algorithm::KMedoids(o) => ("k_medoids", Some(o)),
            Algorithm::DivisiveKCenters => ("divisive_k_centers", None),
            Algorithm::DivisiveKMedoids(o) => ("divisive_k_medoids", Some(o)),
        };
        f.write_str(name)?;
        if let Some(o) = opts {
            if o.variant == MedoidVariant::ParkJun {
                f.write_str("+park_jun")?;
            }
            if o.squared {
                f.write_str("+squared")?;
            }
        }
        Ok(())
    }
}

impl FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split('+');
        let base = parts.next().unwrap_or_default();
        let mut opts = MedoidOptions::default();
        for flag in parts {
            match flag {
                "park_jun" => opts.variant = MedoidVariant::ParkJun,
                "squared" => opts.squared = true,
                _ => return Err(Error::InvalidInput(format!("unknown algorithm flag {flag:?} in {s:?}"))),
            }
        }
        match base {
            "k_centers" | "divisive_k_centers" if opts != MedoidOptions::default() => {
                Err(Error::InvalidInput(format!("flags do not apply to {base}")))
            }
            "k_centers" => Ok(Algorithm::KCenters),
            "divisive_k_centers" => Ok(Algorithm::DivisiveKCenters),
            "k_medoids" => Ok(Algorithm::KMedoids(opts)),
            "divisive_k_medoids" => Ok(Algorithm::DivisiveKMedoids(opts)),
            _ => Err(Error::InvalidInput(format!(
                "unknown algorithm {s:?} (expected k_centers, k_medoids, divisive_k_centers or divisive_k_medoids)"
            ))),
        }
    }
}

/// A partition of contingency indices with one member center per group.
///
/// Groups are stored in canonical order: by smallest member index, members
/// ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Grouping {
    pub metric: MetricKind,
    pub algorithm: Algorithm,
    pub ids: Vec<u32>,
    pub groups: Vec<Vec<usize>>,
    pub centers: Vec<usize>,
}

impl Grouping {
    pub fn k(&self) -> usize {
        self.groups.len()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Group index of each contingency.
    pub fn assignment(&self) -> Vec<usize> {
        let mut out = vec![0; self.len()];
        for (g, members) in self.groups.iter().enumerate() {
            for &i in members {
                out[i] = g;
            }
        }
        out
    }

    fn from_parts(dm: &DistanceMatrix, algorithm: Algorithm, parts: Vec<(usize, Vec<usize>)>) -> Self {
        let mut parts: Vec<(usize, Vec<usize>)> = parts
            .into_iter()
            .map(|(c, mut m)| {
                m.sort_unstable();
                (c, m)
            })
            .collect();
        parts.sort_by_key(|(_, m)| m[0]);
        let (centers, groups) = parts.into_iter().unzip();
        Self { metric: dm.metric, algorithm, ids: dm.ids.clone(), groups, centers }
    }

    /// Partition of `0..M`, nonempty groups, centers inside their groups.
    pub fn validate(&self) -> Result<()> {
        let m = self.len();
        if self.groups.is_empty() || self.groups.len() > m || self.centers.len() != self.groups.len() {
            return Err(Error::KOutOfRange { k: self.groups.len(), m });
        }
        let mut seen = vec![false; m];
        for (members, &c) in self.groups.iter().zip(&self.centers) {
            if members.is_empty() || !members.contains(&c) {
                return Err(Error::InvalidInput(format!("center {c} is not a member of its group")));
            }
            for &i in members {
                if i >= m || std::mem::replace(&mut seen[i], true) {
                    return Err(Error::InvalidInput(format!("index {i} is repeated or out of range")));
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidInput("grouping does not cover every contingency".into()));
        }
        Ok(())
    }

    /// `max_i d(i, c(i))`.
    pub fn max_radius(&self, dm: &DistanceMatrix) -> f64 {
        self.groups
            .iter()
            .zip(&self.centers)
            .flat_map(|(ms, &c)| ms.iter().map(move |&i| dm.get(i, c)))
            .fold(0.0, f64::max)
    }

    /// `Σ_i d(i, c(i))`.
    pub fn total_distance(&self, dm: &DistanceMatrix) -> f64 {
        self.groups.iter().zip(&self.centers).flat_map(|(ms, &c)| ms.iter().map(move |&i| dm.get(i, c))).sum()
    }

    pub fn to_json(&self) -> String {
        let file = GroupingFile {
            metric: self.metric,
            algorithm: self.algorithm.to_string(),
            k: self.k(),
            seed: self.algorithm.seed(),
            groups: self
                .groups
                .iter()
                .zip(&self.centers)
                .map(|(ms, &c)| GroupFile { center: self.ids[c], members: ms.iter().map(|&i| self.ids[i]).collect() })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("grouping serializes");
        s.push('\n');
        s
    }

    /// Reads a grouping against the contingency ids in distance-matrix order.
    pub fn from_json(text: &str, ids: &[u32]) -> Result<Self> {
        let file: GroupingFile = serde_json::from_str(text)?;
        let algorithm = file.algorithm.parse::<Algorithm>()?.with_seed(file.seed);
        let index = |id: u32| ids.iter().position(|&x| x == id).ok_or(Error::UnknownLine(id));
        let mut groups = Vec::with_capacity(file.groups.len());
        let mut centers = Vec::with_capacity(file.groups.len());
        for g in &file.groups {
            centers.push(index(g.center)?);
            groups.push(g.members.iter().map(|&id| index(id)).collect::<Result<Vec<_>>>()?);
        }
        if file.k != groups.len() {
            return Err(Error::InvalidInput(format!("k = {} but {} groups listed", file.k, groups.len())));
        }
        let grouping = Self { metric: file.metric, algorithm, ids: ids.to_vec(), groups, centers };
        grouping.validate()?;
        Ok(grouping)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>, ids: &[u32]) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?, ids)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupingFile {
    metric: MetricKind,
    algorithm: String,
    k: usize,
    seed: Option<u64>,
    groups: Vec<GroupFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupFile {
    center: u32,
    members: Vec<u32>,
}

fn check_k(k: usize, m: usize) -> Result<()> {
    if k == 0 || k > m {
        return Err(Error::KOutOfRange { k, m });
    }
    Ok(())
}

/// Nearest center for every point, ties to the lowest center index.
fn assign(d: &DMatrix<f64>, points: &[usize], centers: &[usize]) -> Vec<(usize, Vec<usize>)> {
    let mut sorted = centers.to_vec();
    sorted.sort_unstable();
    let mut parts: Vec<(usize, Vec<usize>)> = sorted.iter().map(|&c| (c, Vec::new())).collect();
    for &i in points {
        let mut best = 0;
        for (g, &c) in sorted.iter().enumerate() {
            if d[(i, c)] < d[(i, sorted[best])] {
                best = g;
            }
        }
        // a center always belongs to its own group, even with zero distances to others
        let g = sorted.iter().position(|&c| c == i).unwrap_or(best);
        parts[g].1.push(i);
    }
    parts
}

/// Gonzalez farthest-first traversal over `points` (global indices), first
/// center `points[0]`.
fn gonzalez(d: &DMatrix<f64>, points: &[usize], k: usize) -> Vec<usize> {
    let mut centers = vec![points[0]];
    let mut nearest: Vec<f64> = points.iter().map(|&i| d[(i, points[0])]).collect();
    while centers.len() < k {
        let mut far = None;
        for (p, &i) in points.iter().enumerate() {
            if centers.contains(&i) {
                continue;
            }
            if far.is_none_or(|f: usize| nearest[p] > nearest[f]) {
                far = Some(p);
            }
        }
        let next = points[far.expect("k ≤ number of points")];
        centers.push(next);
        for (p, &i) in points.iter().enumerate() {
            nearest[p] = nearest[p].min(d[(i, next)]);
        }
    }
    centers
}

pub fn k_centers(dm: &DistanceMatrix, k: usize) -> Result<Grouping> {
    let m = dm.len();
    check_k(k, m)?;
    let points: Vec<usize> = (0..m).collect();
    let centers = gonzalez(&dm.values, &points, k);
    Ok(Grouping::from_parts(dm, Algorithm::KCenters, assign(&dm.values, &points, &centers)))
}

fn candidate_order(points: &[usize], rng: &mut Option<ChaCha8Rng>) -> Vec<usize> {
    let mut order = points.to_vec();
    if let Some(r) = rng {
        order.shuffle(r);
    }
    order
}

fn sum_cost(d: &DMatrix<f64>, points: &[usize], medoids: &[usize]) -> f64 {
    points.iter().map(|&i| medoids.iter().map(|&c| d[(i, c)]).fold(f64::INFINITY, f64::min)).sum()
}

fn pam(d: &DMatrix<f64>, points: &[usize], k: usize, rng: &mut Option<ChaCha8Rng>) -> Vec<usize> {
    let order = candidate_order(points, rng);
    // BUILD
    let mut medoids: Vec<usize> = Vec::with_capacity(k);
    let mut nearest = vec![f64::INFINITY; d.nrows()];
    while medoids.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for &c in &order {
            if medoids.contains(&c) {
                continue;
            }
            let cost: f64 = points.iter().map(|&j| nearest[j].min(d[(j, c)])).sum();
            if best.is_none_or(|(_, b)| cost < b) {
                best = Some((c, cost));
            }
        }
        let (c, _) = best.expect("k ≤ number of points");
        medoids.push(c);
        for &j in points {
            nearest[j] = nearest[j].min(d[(j, c)]);
        }
    }
    // SWAP
    let mut cost = sum_cost(d, points, &medoids);
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for slot in 0..k {
            for &h in &order {
                if medoids.contains(&h) {
                    continue;
                }
                let mut trial = medoids.clone();
                trial[slot] = h;
                let c = sum_cost(d, points, &trial);
                if best.is_none_or(|(_, _, b)| c < b) {
                    best = Some((slot, h, c));
                }
            }
        }
        match best {
            Some((slot, h, c)) if c < cost - 1e-12 * cost.abs().max(f64::MIN_POSITIVE) => {
                medoids[slot] = h;
                cost = c;
            }
            _ => break,
        }
    }
    medoids
}

fn park_jun(d: &DMatrix<f64>, points: &[usize], k: usize, rng: &mut Option<ChaCha8Rng>) -> Vec<usize> {
    let order = candidate_order(points, rng);
    let row_sums: Vec<f64> = points.iter().map(|&i| points.iter().map(|&l| d[(i, l)]).sum()).collect();
    let score = |j: usize| -> f64 {
        points
            .iter()
            .zip(&row_sums)
            .map(|(&i, &s)| if s > 0.0 { d[(i, j)] / s } else { 0.0 })
            .sum()
    };
    let mut ranked: Vec<(f64, usize)> = order.iter().map(|&j| (score(j), j)).collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut medoids: Vec<usize> = ranked.iter().take(k).map(|&(_, j)| j).collect();
    let mut cost = sum_cost(d, points, &medoids);
    for _ in 0..100 {
        let parts = assign(d, points, &medoids);
        let updated: Vec<usize> = parts
            .iter()
            .map(|(c, members)| {
                let within = |x: usize| members.iter().map(|&i| d[(i, x)]).sum::<f64>();
                let mut best = *c;
                for &x in order.iter().filter(|x| members.contains(x)) {
                    if within(x) < within(best) {
                        best = x;
                    }
                }
                best
            })
            .collect();
        let new_cost = sum_cost(d, points, &updated);
        if new_cost >= cost {
            break;
        }
        medoids = updated;
        cost = new_cost;
    }
    medoids
}

fn medoids_of(d: &DMatrix<f64>, points: &[usize], k: usize, opts: &MedoidOptions) -> Vec<usize> {
    let mut rng = opts.seed.map(ChaCha8Rng::seed_from_u64);
    let squared;
    let d = if opts.squared {
        squared = d.map(|v| v * v);
        &squared
    } else {
        d
    };
    match opts.variant {
        MedoidVariant::Pam => pam(d, points, k, &mut rng),
        MedoidVariant::ParkJun => park_jun(d, points, k, &mut rng),
    }
}

pub fn k_medoids(dm: &DistanceMatrix, k: usize, opts: MedoidOptions) -> Result<Grouping> {
    let m = dm.len();
    check_k(k, m)?;
    let points: Vec<usize> = (0..m).collect();
    let medoids = medoids_of(&dm.values, &points, k, &opts);
    let d = if opts.squared { dm.values.map(|v| v * v) } else { dm.values.clone() };
    Ok(Grouping::from_parts(dm, Algorithm::KMedoids(opts), assign(&d, &points, &medoids)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DivisiveBase {
    KCenters,
    KMedoids(MedoidOptions),
}

/// Top-down splitting of the cluster with the highest mean distance to its center.
pub fn divisive(dm: &DistanceMatrix, k: usize, base: DivisiveBase) -> Result<Grouping> {
    let m = dm.len();
    check_k(k, m)?;
    let d = &dm.values;
    let all: Vec<usize> = (0..m).collect();
    let one_medoid = all
        .iter()
        .copied()
        .min_by(|&a, &b| {
            let (sa, sb) = (all.iter().map(|&j| d[(a, j)]).sum::<f64>(), all.iter().map(|&j| d[(b, j)]).sum::<f64>());
            sa.total_cmp(&sb).then(a.cmp(&b))
        })
        .expect("m ≥ 1");
    let mut parts: Vec<(usize, Vec<usize>)> = vec![(one_medoid, all)];
    while parts.len() < k {
        let mut worst: Option<(usize, f64)> = None;
        for (g, (c, members)) in parts.iter().enumerate() {
            if members.len() < 2 {
                continue;
            }
            let score = members.iter().map(|&i| d[(i, *c)]).sum::<f64>() / members.len() as f64;
            if worst.is_none_or(|(_, s)| score > s) {
                worst = Some((g, score));
            }
        }
        let (g, _) = worst.expect("k ≤ M leaves a splittable cluster");
        let (_, members) = parts.remove(g);
        let split = match &base {
            DivisiveBase::KCenters => assign(d, &members, &gonzalez(d, &members, 2)),
            DivisiveBase::KMedoids(opts) => {
                let medoids = medoids_of(d, &members, 2, opts);
                if opts.squared {
                    assign(&d.map(|v| v * v), &members, &medoids)
                } else {
                    assign(d, &members, &medoids)
                }
            }
        };
        parts.extend(split);
        parts.sort_by_key(|(_, ms)| *ms.iter().min().expect("nonempty"));
    }
    let algorithm = match base {
        DivisiveBase::KCenters => Algorithm::DivisiveKCenters,
        DivisiveBase::KMedoids(o) => Algorithm::DivisiveKMedoids(o),
    };
    Ok(Grouping::from_parts(dm, algorithm, parts))
}

/// Dispatch on an [`Algorithm`].
pub fn cluster(dm: &DistanceMatrix, k: usize, algorithm: Algorithm) -> Result<Grouping> {
    match algorithm {
        Algorithm::KCenters => k_centers(dm, k),
        Algorithm::KMedoids(o) => k_medoids(dm, k, o),
        Algorithm::DivisiveKCenters => divisive(dm, k, DivisiveBase::KCenters),
        Algorithm::DivisiveKMedoids(o) => divisive(dm, k, DivisiveBase::KMedoids(o)),
    }
}
