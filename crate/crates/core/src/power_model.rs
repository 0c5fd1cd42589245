//! Linearized swing-equation dynamics of a network and its single-line
//! contingencies.
//!
//! Rotor angles are expressed in average-angle-free coordinates
//! `θ̃ = Uᵀθ`, where the columns of `U` are an orthonormal basis of the
//! complement of the all-ones vector. With `ω = θ̇` the state is
//! `x = [θ̃; ω]` and
//!
//! ```text
//! A = [[0, Uᵀ], [−M⁻¹ L U, −M⁻¹ D]],  B_u = B_w = [0; M⁻¹ E],
//! C = [[I, 0], [0, (M/2)^{1/2}]],     D = 0
//! ```
//!
//! with `L` the susceptance-weighted Laplacian and `E` selecting the
//! actuated buses. A line outage only changes `L`, hence only `A`.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::lti::{is_hurwitz, StateSpaceModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: u32,
    #[serde(deserialize_with = "positive")]
    pub inertia: f64,
    #[serde(deserialize_with = "positive")]
    pub damping: f64,
    #[serde(default)]
    pub actuated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Line {
    pub id: u32,
    pub from: u32,
    pub to: u32,
    #[serde(deserialize_with = "positive")]
    pub susceptance: f64,
}

fn positive<'de, D: Deserializer<'de>>(de: D) -> std::result::Result<f64, D::Error> {
    let v = f64::deserialize(de)?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(serde::de::Error::custom(format!("expected a finite value > 0, found {v}")))
    }
}

/// Buses with inertia and damping, lines with susceptance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerNetwork {
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
}

impl PowerNetwork {
    /// Checks the structural invariants serde cannot see.
    pub fn validate(&self) -> Result<()> {
        if self.buses.len() < 2 {
            return Err(Error::InvalidNetwork("at least 2 buses are required".into()));
        }
        let mut bus_ids = BTreeSet::new();
        for (i, b) in self.buses.iter().enumerate() {
            if !bus_ids.insert(b.id) {
                return Err(Error::InvalidNetwork(format!("buses[{i}].id: duplicate bus id {}", b.id)));
            }
            for (field, v) in [("inertia", b.inertia), ("damping", b.damping)] {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::InvalidNetwork(format!("buses[{i}].{field}: expected > 0, found {v}")));
                }
            }
        }
        if !self.buses.iter().any(|b| b.actuated) {
            return Err(Error::InvalidNetwork("no actuated bus".into()));
        }
        let mut line_ids = BTreeSet::new();
        for (i, l) in self.lines.iter().enumerate() {
            if !line_ids.insert(l.id) {
                return Err(Error::InvalidNetwork(format!("lines[{i}].id: duplicate line id {}", l.id)));
            }
            for (field, end) in [("from", l.from), ("to", l.to)] {
                if !bus_ids.contains(&end) {
                    return Err(Error::InvalidNetwork(format!("lines[{i}].{field}: unknown bus {end}")));
                }
            }
            if l.from == l.to {
                return Err(Error::InvalidNetwork(format!("lines[{i}]: self-loop on bus {}", l.from)));
            }
            if !(l.susceptance > 0.0 && l.susceptance.is_finite()) {
                return Err(Error::InvalidNetwork(format!(
                    "lines[{i}].susceptance: expected > 0, found {}",
                    l.susceptance
                )));
            }
        }
        if !self.is_connected_without(None) {
            return Err(Error::InvalidNetwork("bus graph is not connected".into()));
        }
        Ok(())
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn actuated_count(&self) -> usize {
        self.buses.iter().filter(|b| b.actuated).count()
    }

    fn bus_index(&self) -> HashMap<u32, usize> {
        self.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect()
    }

    fn check_line(&self, removed: Option<u32>) -> Result<()> {
        match removed {
            Some(id) if !self.lines.iter().any(|l| l.id == id) => Err(Error::UnknownLine(id)),
            _ => Ok(()),
        }
    }

    /// Connectivity of the bus graph with one line optionally taken out.
    pub fn is_connected_without(&self, removed: Option<u32>) -> bool {
        let index = self.bus_index();
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for l in self.lines.iter().filter(|l| Some(l.id) != removed) {
            let (a, b) = (index[&l.from], index[&l.to]);
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(v) = queue.pop_front() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Line ids whose removal disconnects the graph.
    pub fn bridges(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self
            .lines
            .iter()
            .filter(|l| !self.is_connected_without(Some(l.id)))
            .map(|l| l.id)
            .collect();
        ids.sort_unstable();
        ids
    }
}

pub fn load_network(path: impl AsRef<Path>) -> Result<PowerNetwork> {
    let text = std::fs::read_to_string(path)?;
    parse_network(&text)
}

pub fn parse_network(text: &str) -> Result<PowerNetwork> {
    let net: PowerNetwork = serde_json::from_str(text)?;
    net.validate()?;
    Ok(net)
}

pub fn save_network(net: &PowerNetwork, path: impl AsRef<Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(net)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Susceptance-weighted Laplacian, parallel lines summed.
pub fn laplacian(net: &PowerNetwork, removed: Option<u32>) -> Result<DMatrix<f64>> {
    net.check_line(removed)?;
    let index = net.bus_index();
    let n = net.n_buses();
    let mut l = DMatrix::zeros(n, n);
    for line in net.lines.iter().filter(|l| Some(l.id) != removed) {
        let (i, j) = (index[&line.from], index[&line.to]);
        let b = line.susceptance;
        l[(i, i)] += b;
        l[(j, j)] += b;
        l[(i, j)] -= b;
        l[(j, i)] -= b;
    }
    Ok(l)
}

/// Orthonormal basis of `1⊥` from Gram–Schmidt on `e_1 − e_2, e_2 − e_3, …`.
pub fn mean_free_basis(n: usize) -> DMatrix<f64> {
    let mut u = DMatrix::<f64>::zeros(n, n - 1);
    for k in 0..n - 1 {
        let mut v = DVector::<f64>::zeros(n);
        v[k] = 1.0;
        v[k + 1] = -1.0;
        for j in 0..k {
            let col = u.column(j);
            let proj = col.dot(&v);
            v -= col * proj;
        }
        let norm = v.norm();
        u.set_column(k, &(v / norm));
    }
    u
}

/// Swing-equation plant with `removed` taken out of service.
pub fn build_dynamics(net: &PowerNetwork, removed: Option<u32>) -> Result<StateSpaceModel> {
    net.check_line(removed)?;
    if let Some(line) = removed {
        if !net.is_connected_without(Some(line)) {
            return Err(Error::Disconnects { line });
        }
    }
    let nb = net.n_buses();
    let nr = nb - 1;
    let n = nr + nb;
    let u = mean_free_basis(nb);
    let lap = laplacian(net, removed)?;
    let inv_m = DVector::from_iterator(nb, net.buses.iter().map(|b| 1.0 / b.inertia));

    let mut a = DMatrix::zeros(n, n);
    a.view_mut((0, nr), (nr, nb)).copy_from(&u.transpose());
    let stiffness = -(lap * &u);
    for i in 0..nb {
        for j in 0..nr {
            a[(nr + i, j)] = inv_m[i] * stiffness[(i, j)];
        }
        a[(nr + i, nr + i)] = -inv_m[i] * net.buses[i].damping;
    }

    let actuated: Vec<usize> = (0..nb).filter(|&i| net.buses[i].actuated).collect();
    let mut b_u = DMatrix::zeros(n, actuated.len());
    for (col, &i) in actuated.iter().enumerate() {
        b_u[(nr + i, col)] = inv_m[i];
    }
    let b_w = b_u.clone();

    let mut c = DMatrix::zeros(n, n);
    for i in 0..nr {
        c[(i, i)] = 1.0;
    }
    for i in 0..nb {
        c[(nr + i, nr + i)] = (0.5 * net.buses[i].inertia).sqrt();
    }
    let d = DMatrix::zeros(n, actuated.len());

    if !is_hurwitz(&a)? {
        return Err(Error::InvalidNetwork(format!(
            "swing dynamics not Hurwitz with line {removed:?} removed"
        )));
    }
    StateSpaceModel::new(a, b_w, b_u, c, d)
}

/// A single-line outage that keeps the network connected.
#[derive(Debug, Clone, PartialEq)]
pub struct Contingency {
    pub line_id: u32,
    /// 1-based position in the contingency list.
    pub index: usize,
    pub model: StateSpaceModel,
}

/// One contingency per non-bridge line, ordered by line id.
pub fn enumerate_contingencies(net: &PowerNetwork) -> Result<Vec<Contingency>> {
    let mut ids: Vec<u32> = net
        .lines
        .iter()
        .filter(|l| net.is_connected_without(Some(l.id)))
        .map(|l| l.id)
        .collect();
    ids.sort_unstable();
    ids.into_iter()
        .enumerate()
        .map(|(pos, line_id)| {
            Ok(Contingency { line_id, index: pos + 1, model: build_dynamics(net, Some(line_id))? })
        })
        .collect()
}

/// Summary counts used by the `enumerate` report.
pub fn topology_summary(net: &PowerNetwork) -> BTreeMap<&'static str, usize> {
    let bridges = net.bridges().len();
    BTreeMap::from([
        ("buses", net.n_buses()),
        ("lines", net.lines.len()),
        ("bridges", bridges),
        ("contingencies", net.lines.len() - bridges),
        ("states", 2 * net.n_buses() - 1),
        ("controls", net.actuated_count()),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::linalg::eigenvalues;

    fn bus(id: u32, actuated: bool) -> Bus {
        Bus { id, inertia: 1.0, damping: 1.0, actuated }
    }

    fn line(id: u32, from: u32, to: u32) -> Line {
        Line { id, from, to, susceptance: 1.0 }
    }

    fn triangle() -> PowerNetwork {
        PowerNetwork {
            buses: vec![bus(1, true), bus(2, true), bus(3, false)],
            lines: vec![line(1, 1, 2), line(2, 2, 3), line(3, 1, 3)],
        }
    }

    #[test]
    fn triangle_laplacian() {
        let l = laplacian(&triangle(), None).unwrap();
        let expected = DMatrix::from_row_slice(3, 3, &[2.0, -1.0, -1.0, -1.0, 2.0, -1.0, -1.0, -1.0, 2.0]);
        assert_eq!(l, expected);
    }

    #[test]
    fn laplacian_with_line_removed() {
        let l = laplacian(&triangle(), Some(1)).unwrap();
        assert_eq!(l[(0, 1)], 0.0);
        assert_eq!((l[(0, 0)], l[(1, 1)], l[(2, 2)]), (1.0, 1.0, 2.0));
        assert!(matches!(laplacian(&triangle(), Some(42)), Err(Error::UnknownLine(42))));
    }

    #[test]
    fn parallel_lines_are_summed() {
        let mut net = triangle();
        net.lines.push(Line { id: 4, from: 2, to: 1, susceptance: 0.5 });
        let l = laplacian(&net, None).unwrap();
        assert_eq!(l[(0, 1)], -1.5);
        // parallel circuits are never bridges
        assert!(net.bridges().is_empty());
    }

    #[test]
    fn basis_is_orthonormal_and_mean_free() {
        for n in 2..8 {
            let u = mean_free_basis(n);
            let gram = u.transpose() * &u;
            assert!((gram - DMatrix::identity(n - 1, n - 1)).abs().max() < 1e-14);
            let ones = DVector::from_element(n, 1.0);
            assert!((u.transpose() * ones).abs().max() < 1e-14);
        }
    }

    #[test]
    fn two_bus_spectrum() {
        let net = PowerNetwork {
            buses: vec![bus(1, true), bus(2, true)],
            lines: vec![line(1, 1, 2)],
        };
        let model = build_dynamics(&net, None).unwrap();
        assert_eq!(model.n_states(), 3);
        let eigs = eigenvalues(model.a()).unwrap();
        // λ² + λ + 2 = 0 → -1/2 ± j √7/2, plus the common-mode λ = -1
        let r = 7f64.sqrt() / 2.0;
        let expected = [(-1.0, 0.0), (-0.5, -r), (-0.5, r)];
        for (e, (re, im)) in eigs.iter().zip(expected) {
            assert!((e.re - re).abs() < 1e-12 && (e.im - im).abs() < 1e-12, "{e}");
        }
    }

    #[test]
    fn contingencies_only_change_a() {
        let net = triangle();
        let nominal = build_dynamics(&net, None).unwrap();
        let cs = enumerate_contingencies(&net).unwrap();
        assert_eq!(cs.len(), 3);
        for c in &cs {
            assert_eq!(c.model.b_w(), nominal.b_w());
            assert_eq!(c.model.b_u(), nominal.b_u());
            assert_eq!(c.model.c(), nominal.c());
            assert_eq!(c.model.d(), nominal.d());
            assert_ne!(c.model.a(), nominal.a());
        }
        assert_eq!(cs.iter().map(|c| c.index).collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn star_has_no_contingencies() {
        let net = PowerNetwork {
            buses: (1..=5).map(|i| bus(i, true)).collect(),
            lines: (2..=5).map(|i| line(i, 1, i)).collect(),
        };
        assert!(enumerate_contingencies(&net).unwrap().is_empty());
        assert!(matches!(build_dynamics(&net, Some(3)), Err(Error::Disconnects { line: 3 })));
    }

    #[test]
    fn rejects_structural_violations() {
        let mut net = triangle();
        net.lines.push(line(1, 1, 3));
        assert!(net.validate().is_err());

        let mut net = triangle();
        net.lines[0].to = 1;
        assert!(net.validate().is_err());

        let mut net = triangle();
        net.lines[1].to = 9;
        assert!(net.validate().unwrap_err().to_string().contains("lines[1].to"));

        let net = PowerNetwork { buses: vec![bus(1, true), bus(2, true), bus(3, true)], lines: vec![line(1, 1, 2)] };
        assert!(net.validate().is_err());

        let mut net = triangle();
        net.buses.iter_mut().for_each(|b| b.actuated = false);
        assert!(net.validate().is_err());
    }

    #[test]
    fn parses_minimal_file_and_rejects_negative_inertia() {
        let ok = r#"{"buses":[{"id":1,"inertia":1.0,"damping":0.5,"actuated":true},
                              {"id":2,"inertia":2.0,"damping":0.5,"actuated":false}],
                     "lines":[{"id":7,"from":1,"to":2,"susceptance":3.0}]}"#;
        let net = parse_network(ok).unwrap();
        assert_eq!(net.lines.len(), 1);

        let bad = ok.replace("\"inertia\":2.0", "\"inertia\":-2.0");
        let msg = parse_network(&bad).unwrap_err().to_string();
        assert!(msg.contains("> 0") && msg.contains("line 2"), "{msg}");
    }
}
