//! Synthetic hourly load and PV profiles.
//!
//! Load at hour `t` (day `d`, hour of day `h`) on a node with nominal
//! `(p_nom, q_nom)`:
//!
//! ```text
//! s(h)    = 0.45 + 0.35·exp(−(h−8)²/4.5) + 0.55·exp(−(h−19)²/8)
//! P_load  = p_nom · s(h) · (1 + day_noise·D_d) · (1 + node_noise·E_t)
//! Q_load  = P_load · (q_nom/p_nom) · (1 + pf_band·U_t)
//! P_pv    = gen_capacity · max(0, sin(π(h−6)/12)) · (1 − cloud_depth·C_d)
//! ```
//!
//! with `D_d, E_t ~ N(0, 1)`, `U_t ~ U(−1, 1)` and `C_d ~ U(0, 1)`. `D_d` and
//! `C_d` are shared by all nodes on day `d`. Generation nodes carry their
//! load plus PV output. The expected load is `p_nom · s(h)`; the expected PV
//! output scales the sine by `1 − cloud_depth/2`.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridModel, NodeId, NodeKind, NodeRole};
use crate::powerflow::InjectionProfile;

/// Daily shape with a morning and an evening peak.
pub fn daily_shape(h: f64) -> f64 {
    0.45 + 0.35 * (-(h - 8.0).powi(2) / 4.5).exp() + 0.55 * (-(h - 19.0).powi(2) / 8.0).exp()
}

/// Clear-sky PV output per unit of capacity.
pub fn solar_shape(h: f64) -> f64 {
    (std::f64::consts::PI * (h - 6.0) / 12.0).sin().max(0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileParams {
    pub node_noise: f64,
    pub day_noise: f64,
    pub pf_band: f64,
    pub cloud_depth: f64,
}

impl Default for ProfileParams {
    fn default() -> Self {
        Self {
            node_noise: 0.05,
            day_noise: 0.05,
            pf_band: 0.05,
            cloud_depth: 0.6,
        }
    }
}

impl ProfileParams {
    /// Every random term switched off.
    pub fn noiseless() -> Self {
        Self {
            node_noise: 0.0,
            day_noise: 0.0,
            pf_band: 0.0,
            cloud_depth: 0.0,
        }
    }

    /// Expected `(P, Q)` of a node at hour of day `h`.
    pub fn mean(&self, p_nom: f64, q_nom: f64, gen_capacity: f64, h: f64) -> (f64, f64) {
        let load = p_nom * daily_shape(h);
        let q = if p_nom != 0.0 { load * q_nom / p_nom } else { 0.0 };
        let pv = gen_capacity * solar_shape(h) * (1.0 - self.cloud_depth / 2.0);
        (load + pv, q)
    }
}

/// Hourly `(P, Q)` series for every load/generation node.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadProfiles {
    pub nodes: Vec<NodeId>,
    pub hours: usize,
    /// `p[k][t]` for node `nodes[k]`.
    pub p: Vec<Vec<f64>>,
    /// Zero on DC nodes.
    pub q: Vec<Vec<f64>>,
}

pub fn gen_load_profiles(grid: &GridModel, days: usize, params: &ProfileParams, seed: u64) -> Result<LoadProfiles> {
    if days == 0 {
        return Err(Error::Validation("profile length must be at least one day".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = grid.injection_nodes();
    let hours = days * 24;
    let mut p = vec![Vec::with_capacity(hours); idx.len()];
    let mut q = vec![Vec::with_capacity(hours); idx.len()];
    for _ in 0..days {
        let day: f64 = rng.sample(StandardNormal);
        let cloud: f64 = rng.random();
        let day_factor = 1.0 + params.day_noise * day;
        let cloud_factor = 1.0 - params.cloud_depth * cloud;
        for h in 0..24 {
            let h = h as f64;
            for (k, &i) in idx.iter().enumerate() {
                let n = &grid.nodes()[i];
                let e: f64 = rng.sample(StandardNormal);
                let u: f64 = rng.random_range(-1.0..=1.0);
                let load = n.p_nom * daily_shape(h) * day_factor * (1.0 + params.node_noise * e);
                let ql = if n.kind == NodeKind::Ac && n.p_nom != 0.0 {
                    load * n.q_nom / n.p_nom * (1.0 + params.pf_band * u)
                } else {
                    0.0
                };
                let pv = if n.role == NodeRole::Generation {
                    n.gen_capacity * solar_shape(h) * cloud_factor
                } else {
                    0.0
                };
                p[k].push(load + pv);
                q[k].push(ql);
            }
        }
    }
    Ok(LoadProfiles {
        nodes: idx.iter().map(|&i| grid.nodes()[i].id).collect(),
        hours,
        p,
        q,
    })
}

impl LoadProfiles {
    pub fn days(&self) -> usize {
        self.hours / 24
    }

    /// All injections at hour `t`.
    pub fn at(&self, t: usize) -> InjectionProfile {
        let mut out = InjectionProfile::new();
        for (k, &n) in self.nodes.iter().enumerate() {
            out.set(n, self.p[k][t], self.q[k][t]);
        }
        out
    }

    /// Long format: `hour,node_id,P,Q`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["hour", "node_id", "P", "Q"])?;
        for t in 0..self.hours {
            for (k, n) in self.nodes.iter().enumerate() {
                w.write_record([t.to_string(), n.to_string(), self.p[k][t].to_string(), self.q[k][t].to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            hour: usize,
            node_id: u32,
            #[serde(rename = "P")]
            p: f64,
            #[serde(rename = "Q")]
            q: f64,
        }
        let mut rows = Vec::new();
        for r in csv::Reader::from_reader(reader).deserialize() {
            let r: Row = r?;
            rows.push(r);
        }
        let mut nodes: Vec<NodeId> = rows.iter().map(|r| NodeId(r.node_id)).collect();
        nodes.sort();
        nodes.dedup();
        let hours = rows.iter().map(|r| r.hour + 1).max().unwrap_or(0);
        if nodes.is_empty() || rows.len() != nodes.len() * hours {
            return Err(Error::Parse(format!(
                "profile file has {} rows for {} nodes over {hours} hours",
                rows.len(),
                nodes.len()
            )));
        }
        let mut p = vec![vec![f64::NAN; hours]; nodes.len()];
        let mut q = vec![vec![f64::NAN; hours]; nodes.len()];
        for r in rows {
            let k = nodes.binary_search(&NodeId(r.node_id)).expect("collected above");
            if !p[k][r.hour].is_nan() {
                return Err(Error::Parse(format!("duplicate row for node {} hour {}", r.node_id, r.hour)));
            }
            p[k][r.hour] = r.p;
            q[k][r.hour] = r.q;
        }
        Ok(Self { nodes, hours, p, q })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::cases;

    #[test]
    fn noiseless_repeats_daily() {
        let g = cases::case33_hybrid();
        let pr = gen_load_profiles(&g, 3, &ProfileParams::noiseless(), 1).unwrap();
        for k in 0..pr.nodes.len() {
            for t in 0..24 {
                assert_eq!(pr.p[k][t], pr.p[k][t + 24]);
                assert_eq!(pr.q[k][t], pr.q[k][t + 48]);
            }
        }
        // two peaks: 8h and 19h above the 3h trough
        assert!(daily_shape(8.0) > daily_shape(3.0) && daily_shape(19.0) > daily_shape(13.0));
    }

    #[test]
    fn seeded() {
        let g = cases::case33_hybrid();
        let a = gen_load_profiles(&g, 2, &ProfileParams::default(), 5).unwrap();
        let b = gen_load_profiles(&g, 2, &ProfileParams::default(), 5).unwrap();
        let c = gen_load_profiles(&g, 2, &ProfileParams::default(), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(gen_load_profiles(&g, 0, &ProfileParams::default(), 5).is_err());
    }

    #[test]
    fn hourly_means_match_formula() {
        let g = cases::case33_hybrid();
        let params = ProfileParams::default();
        let pr = gen_load_profiles(&g, 365, &params, 11).unwrap();
        // one plain load node and one PV node
        for id in [NodeId(18), NodeId(24)] {
            let k = pr.nodes.iter().position(|&n| n == id).unwrap();
            let n = &g.nodes()[g.node_index(id).unwrap()];
            for h in 0..24 {
                let xs: Vec<f64> = (0..365).map(|d| pr.p[k][d * 24 + h]).collect();
                let m = xs.iter().sum::<f64>() / 365.0;
                let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 364.0;
                let se = (var / 365.0).sqrt();
                let (mu, _) = params.mean(n.p_nom, n.q_nom, n.gen_capacity, h as f64);
                assert!((m - mu).abs() <= 3.0 * se.max(1e-15), "node {id} hour {h}: {m} vs {mu} (se {se})");
            }
        }
    }

    #[test]
    fn csv_round_trip() {
        let g = cases::hybrid4();
        let pr = gen_load_profiles(&g, 2, &ProfileParams::default(), 3).unwrap();
        let mut buf = Vec::new();
        pr.write_csv(&mut buf).unwrap();
        assert_eq!(LoadProfiles::read_csv(&buf[..]).unwrap(), pr);
    }
}
