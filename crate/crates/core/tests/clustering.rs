mod common;

use common::rng;
use gridgroup_core::clustering::{
    cluster, divisive, k_centers, k_medoids, Algorithm, DivisiveBase, Grouping, MedoidOptions, MedoidVariant,
};
use gridgroup_core::metrics::{DistanceMatrix, MetricKind};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn random_metric(r: &mut impl Rng, m: usize) -> DistanceMatrix {
    let pts: Vec<[f64; 3]> = (0..m).map(|_| [r.gen_range(0.0..10.0), r.gen_range(0.0..10.0), r.gen_range(0.0..1.0)]).collect();
    let values = DMatrix::from_fn(m, m, |i, j| {
        pts[i].iter().zip(&pts[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    });
    DistanceMatrix { metric: MetricKind::PerturbationSpectralNorm, ids: (1..=m as u32).collect(), values }
}

fn subsets(m: usize, k: usize) -> Vec<Vec<usize>> {
    (0u32..1 << m).filter(|s| s.count_ones() as usize == k).map(|s| (0..m).filter(|i| s >> i & 1 == 1).collect()).collect()
}

fn nearest(d: &DMatrix<f64>, i: usize, centers: &[usize]) -> f64 {
    centers.iter().map(|&c| d[(i, c)]).fold(f64::INFINITY, f64::min)
}

fn exhaustive_k_centers(dm: &DistanceMatrix, k: usize) -> f64 {
    subsets(dm.len(), k)
        .iter()
        .map(|cs| (0..dm.len()).map(|i| nearest(&dm.values, i, cs)).fold(0.0, f64::max))
        .fold(f64::INFINITY, f64::min)
}

fn exhaustive_k_medoids(dm: &DistanceMatrix, k: usize) -> f64 {
    subsets(dm.len(), k)
        .iter()
        .map(|cs| (0..dm.len()).map(|i| nearest(&dm.values, i, cs)).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn gonzalez_within_twice_optimum_and_pam_near_optimum() {
    let mut r = rng(2024);
    let (mut pam_ok, mut total) = (0, 0);
    for _ in 0..50 {
        let m = r.gen_range(2..=8);
        let dm = random_metric(&mut r, m);
        for k in 1..=m {
            let g = k_centers(&dm, k).unwrap();
            g.validate().unwrap();
            let opt = exhaustive_k_centers(&dm, k);
            assert!(g.max_radius(&dm) <= 2.0 * opt + 1e-12, "k-centers m={m} k={k}");

            let g = k_medoids(&dm, k, MedoidOptions::default()).unwrap();
            g.validate().unwrap();
            let opt = exhaustive_k_medoids(&dm, k);
            assert!(g.total_distance(&dm) >= opt - 1e-12);
            total += 1;
            if g.total_distance(&dm) <= 1.1 * opt + 1e-12 {
                pam_ok += 1;
            }
        }
    }
    assert!(pam_ok as f64 >= 0.95 * total as f64, "PAM near-optimal on {pam_ok}/{total}");
}

#[test]
fn park_jun_and_squared_variants_give_valid_partitions() {
    let mut r = rng(5);
    for _ in 0..20 {
        let m = r.gen_range(3..=12);
        let dm = random_metric(&mut r, m);
        for k in 1..=m {
            for opts in [
                MedoidOptions { variant: MedoidVariant::ParkJun, ..Default::default() },
                MedoidOptions { squared: true, ..Default::default() },
                MedoidOptions { seed: Some(3), variant: MedoidVariant::ParkJun, squared: true },
            ] {
                let g = k_medoids(&dm, k, opts).unwrap();
                g.validate().unwrap();
                assert_eq!(g.k(), k);
            }
        }
    }
}

#[test]
fn squared_flag_minimizes_sum_of_squares() {
    let mut r = rng(77);
    for _ in 0..20 {
        let m = r.gen_range(3..=8);
        let dm = random_metric(&mut r, m);
        let sq = dm.squared();
        for k in 1..m {
            let g = k_medoids(&dm, k, MedoidOptions { squared: true, ..Default::default() }).unwrap();
            let plain_on_sq = k_medoids(&sq, k, MedoidOptions::default()).unwrap();
            assert_eq!(g.centers, plain_on_sq.centers);
            assert_eq!(g.groups, plain_on_sq.groups);
        }
    }
}

#[test]
fn objectives_are_monotone_in_k() {
    let mut r = rng(31);
    let mut medoid_violations = 0;
    let mut medoid_steps = 0;
    for _ in 0..30 {
        let m = r.gen_range(2..=10);
        let dm = random_metric(&mut r, m);
        let kc: Vec<f64> = (1..=m).map(|k| k_centers(&dm, k).unwrap().max_radius(&dm)).collect();
        let km: Vec<f64> =
            (1..=m).map(|k| k_medoids(&dm, k, MedoidOptions::default()).unwrap().total_distance(&dm)).collect();
        let dv: Vec<f64> = (1..=m)
            .map(|k| divisive(&dm, k, DivisiveBase::KMedoids(MedoidOptions::default())).unwrap().total_distance(&dm))
            .collect();
        assert!(kc.windows(2).all(|w| w[1] <= w[0]), "k-centers {kc:?}");
        assert!(dv.windows(2).all(|w| w[1] <= w[0] + 1e-12), "divisive {dv:?}");
        for w in km.windows(2) {
            medoid_steps += 1;
            if w[1] > w[0] {
                medoid_violations += 1;
            }
        }
    }
    assert!(medoid_violations * 20 <= medoid_steps, "{medoid_violations}/{medoid_steps}");
}

#[test]
fn divisive_k_one_is_the_one_medoid() {
    let mut r = rng(8);
    for _ in 0..10 {
        let m = r.gen_range(1..=8);
        let dm = random_metric(&mut r, m);
        let a = divisive(&dm, 1, DivisiveBase::KCenters).unwrap();
        let b = k_medoids(&dm, 1, MedoidOptions::default()).unwrap();
        assert_eq!(a.centers, b.centers);
        assert_eq!(a.groups, b.groups);
    }
}

fn as_sets(g: &Grouping, relabel: impl Fn(usize) -> usize) -> Vec<(Vec<usize>, usize)> {
    let mut out: Vec<(Vec<usize>, usize)> = g
        .groups
        .iter()
        .zip(&g.centers)
        .map(|(ms, &c)| {
            let mut ms: Vec<usize> = ms.iter().map(|&i| relabel(i)).collect();
            ms.sort_unstable();
            // both members of a pair tie as medoid, so only larger groups pin their center
            let c = if ms.len() == 2 { usize::MAX } else { relabel(c) };
            (ms, c)
        })
        .collect();
    out.sort();
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_algorithm_yields_a_partition(seed in any::<u64>(), m in 1usize..=12, kf in 0.0f64..1.0) {
        let mut r = rng(seed);
        let dm = random_metric(&mut r, m);
        let k = 1 + ((m - 1) as f64 * kf) as usize;
        let opts = MedoidOptions { seed: Some(seed), ..Default::default() };
        for alg in [Algorithm::KCenters, Algorithm::KMedoids(opts), Algorithm::DivisiveKCenters, Algorithm::DivisiveKMedoids(opts)] {
            let g = cluster(&dm, k, alg).unwrap();
            prop_assert!(g.validate().is_ok());
            prop_assert_eq!(g.k(), k);
            prop_assert_eq!(&cluster(&dm, k, alg).unwrap(), &g);
            prop_assert_eq!(Grouping::from_json(&g.to_json(), &dm.ids).unwrap(), g);
        }
    }

    #[test]
    fn k_medoids_is_permutation_equivariant(seed in any::<u64>(), m in 2usize..=9, kf in 0.0f64..1.0) {
        let mut r = rng(seed);
        let dm = random_metric(&mut r, m);
        let k = 1 + ((m - 1) as f64 * kf) as usize;
        let mut perm: Vec<usize> = (0..m).collect();
        for i in (1..m).rev() {
            perm.swap(i, r.gen_range(0..=i));
        }
        // permuted[p] = original[perm[p]]
        let permuted = DistanceMatrix {
            metric: dm.metric,
            ids: perm.iter().map(|&i| dm.ids[i]).collect(),
            values: DMatrix::from_fn(m, m, |a, b| dm.values[(perm[a], perm[b])]),
        };
        let g = k_medoids(&dm, k, MedoidOptions::default()).unwrap();
        let gp = k_medoids(&permuted, k, MedoidOptions::default()).unwrap();
        prop_assert_eq!(as_sets(&gp, |p| perm[p]), as_sets(&g, |i| i));
    }
}
