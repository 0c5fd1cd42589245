mod common;

use std::path::PathBuf;

use gridgroup_core::lti::is_hurwitz;
use gridgroup_core::power_model::{
    build_dynamics, enumerate_contingencies, laplacian, load_network, save_network, Bus, Line, PowerNetwork,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

#[test]
fn bundled_fixtures_have_expected_topology() {
    let ring = load_network(fixture("case10ring.json")).unwrap();
    assert_eq!(ring.buses.len(), 10);
    assert_eq!(ring.lines.len(), 13);
    assert_eq!(enumerate_contingencies(&ring).unwrap().len(), 13);

    let tri = load_network(fixture("case3tri.json")).unwrap();
    assert_eq!(enumerate_contingencies(&tri).unwrap().len(), 3);

    let mesh = load_network(fixture("case20mesh.json")).unwrap();
    assert_eq!(mesh.buses.len(), 20);
    assert_eq!(mesh.bridges().len(), 2);
    assert_eq!(enumerate_contingencies(&mesh).unwrap().len(), 27);
}

#[test]
fn every_contingency_is_hurwitz_and_shares_io_maps() {
    for name in ["case3tri.json", "case10ring.json", "case20mesh.json"] {
        let net = load_network(fixture(name)).unwrap();
        let nominal = build_dynamics(&net, None).unwrap();
        for c in enumerate_contingencies(&net).unwrap() {
            assert!(is_hurwitz(c.model.a()).unwrap(), "{name} line {}", c.line_id);
            assert_eq!(c.model.b_w(), nominal.b_w());
            assert_eq!(c.model.b_u(), nominal.b_u());
            assert_eq!(c.model.c(), nominal.c());
            assert_eq!(c.model.d(), nominal.d());
        }
    }
}

/// 39 buses, 46 lines: a 28-bus ring with 7 chords (no bridges) plus 11
/// radial buses, each hanging off the core by a single line.
fn ieee39_like() -> PowerNetwork {
    let buses = (1..=39)
        .map(|id| Bus { id, inertia: 2.0 + (id % 5) as f64, damping: 1.0, actuated: id % 4 == 1 })
        .collect();
    let mut lines = Vec::new();
    for i in 1..=28u32 {
        lines.push(Line { id: i, from: i, to: i % 28 + 1, susceptance: 5.0 });
    }
    for (k, (f, t)) in [(1, 10), (3, 15), (5, 20), (8, 25), (12, 22), (14, 27), (17, 6)].into_iter().enumerate() {
        lines.push(Line { id: 29 + k as u32, from: f, to: t, susceptance: 3.0 });
    }
    for (k, leaf) in (29..=39u32).enumerate() {
        lines.push(Line { id: 36 + k as u32, from: 1 + 2 * k as u32, to: leaf, susceptance: 4.0 });
    }
    PowerNetwork { buses, lines }
}

#[test]
fn synthetic_39_bus_graph_yields_35_contingencies() {
    let net = ieee39_like();
    net.validate().unwrap();
    assert_eq!(net.lines.len(), 46);
    assert_eq!(net.bridges().len(), 11);
    assert_eq!(enumerate_contingencies(&net).unwrap().len(), 35);
}

fn random_graph(rng: &mut impl Rng, n: u32, edges: usize) -> PowerNetwork {
    let buses = (1..=n).map(|id| Bus { id, inertia: 1.0, damping: 1.0, actuated: true }).collect();
    let lines = (0..edges)
        .map(|k| {
            let from = rng.gen_range(1..=n);
            let mut to = rng.gen_range(1..=n);
            while to == from {
                to = rng.gen_range(1..=n);
            }
            Line { id: k as u32 + 1, from, to, susceptance: rng.gen_range(0.5..3.0) }
        })
        .collect();
    PowerNetwork { buses, lines }
}

fn components(net: &PowerNetwork) -> usize {
    let n = net.buses.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut Vec<usize>, x: usize) -> usize {
        if p[x] != x {
            let r = find(p, p[x]);
            p[x] = r;
        }
        p[x]
    }
    for l in &net.lines {
        let (a, b) = (find(&mut parent, l.from as usize - 1), find(&mut parent, l.to as usize - 1));
        parent[a] = b;
    }
    (0..n).filter(|&i| find(&mut parent, i) == i).count()
}

#[test]
fn laplacian_kernel_counts_components() {
    let mut r = common::rng(21);
    for _ in 0..30 {
        let edges = r.gen_range(2..7);
        let net = random_graph(&mut r, 5, edges);
        let l = laplacian(&net, None).unwrap();
        let ones = DVector::from_element(5, 1.0);
        assert!((&l * ones).abs().max() < 1e-12);
        let eig = l.clone().symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&e| e > -1e-12));
        let zeros = eig.eigenvalues.iter().filter(|e| e.abs() < 1e-9).count();
        assert_eq!(zeros, components(&net));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn laplacian_is_permutation_equivariant(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let net = random_graph(&mut r, 6, 9);
        // relabel bus at position i as perm[i] by reordering the bus list
        let mut perm: Vec<usize> = (0..6).collect();
        for i in (1..6).rev() {
            perm.swap(i, r.gen_range(0..=i));
        }
        let mut permuted = net.clone();
        permuted.buses = perm.iter().map(|&i| net.buses[i].clone()).collect();
        let l = laplacian(&net, None).unwrap();
        let lp = laplacian(&permuted, None).unwrap();
        let p = DMatrix::from_fn(6, 6, |i, j| if perm[i] == j { 1.0 } else { 0.0 });
        prop_assert!((lp - &p * l * p.transpose()).abs().max() < 1e-14);
    }

    #[test]
    fn network_file_round_trips(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let mut net = random_graph(&mut r, 4, 6);
        for b in &mut net.buses {
            b.inertia = r.gen_range(0.1..10.0);
            b.damping = r.gen_range(0.1..5.0);
            b.actuated = r.gen_bool(0.5);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        save_network(&net, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let back: PowerNetwork = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, net);
    }
}
