//! Shard plans: uniform random splits and splits stratified by outcome and
//! k-means cluster.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::{Dataset, Shard};
use crate::samplers::rng_from_seed;
use crate::{Error, Result};

pub const DEFAULT_KMEANS_K: usize = 10;
const KMEANS_MAX_ITERS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Uniform,
    Stratified,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Strategy::Uniform),
            "stratified" => Ok(Strategy::Stratified),
            other => Err(Error::Config(format!("unknown split strategy '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShardPlan {
    #[serde(rename = "S")]
    pub splits: usize,
    pub strategy: Strategy,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kmeans_k: Option<usize>,
    /// Strata with fewer members than shards.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub small_strata: Option<usize>,
    pub assignment: Vec<usize>,
}

impl ShardPlan {
    /// Checks the partition: every id below `S` and every shard non-empty.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.splits == 0 {
            return Err(Error::Config("plan has zero shards".into()));
        }
        if self.assignment.len() != n {
            return Err(Error::Validation(format!(
                "plan assigns {} rows but the dataset has {n}",
                self.assignment.len()
            )));
        }
        let sizes = self.sizes()?;
        if let Some(empty) = sizes.iter().position(|&c| c == 0) {
            return Err(Error::Validation(format!("shard {empty} of the plan is empty")));
        }
        Ok(())
    }

    pub fn sizes(&self) -> Result<Vec<usize>> {
        let mut sizes = vec![0usize; self.splits];
        for (row, &s) in self.assignment.iter().enumerate() {
            *sizes.get_mut(s).ok_or_else(|| {
                Error::Validation(format!("row {row} is assigned to shard {s} but S = {}", self.splits))
            })? += 1;
        }
        Ok(sizes)
    }

    pub fn rows(&self, shard: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == shard)
            .map(|(i, _)| i)
            .collect()
    }

    /// Materialises the shards, each holding only its own rows.
    pub fn shards(&self, data: &Dataset) -> Result<Vec<Shard>> {
        self.validate(data.n)?;
        let mut rows = vec![Vec::new(); self.splits];
        for (i, &s) in self.assignment.iter().enumerate() {
            rows[s].push(i);
        }
        rows.into_iter()
            .enumerate()
            .map(|(s, r)| Shard::new(data, s, r))
            .collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("plan serialises");
        s.push('\n');
        s
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("cannot read plan {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn check_splits(n: usize, splits: usize) -> Result<()> {
    if splits == 0 {
        return Err(Error::Domain("number of shards must be at least 1".into()));
    }
    if splits > n {
        return Err(Error::Domain(format!("cannot split {n} rows into {splits} non-empty shards")));
    }
    Ok(())
}

/// Seeded permutation dealt round-robin into `splits` shards.
pub fn uniform_split(n: usize, splits: usize, seed: u64) -> Result<ShardPlan> {
    check_splits(n, splits)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let mut assignment = vec![0; n];
    for (k, &row) in order.iter().enumerate() {
        assignment[row] = k % splits;
    }
    Ok(ShardPlan {
        splits,
        strategy: Strategy::Uniform,
        seed,
        kmeans_k: None,
        small_strata: None,
        assignment,
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm with k-means++ seeding on row-major `x` (`n × p`).
pub fn kmeans_lloyd(x: &[f64], p: usize, k: usize, max_iters: usize, seed: u64) -> Result<Vec<usize>> {
    if p == 0 || x.len() % p != 0 {
        return Err(Error::Dimension("feature matrix is not n × p".into()));
    }
    let n = x.len() / p;
    if k == 0 || k > n {
        return Err(Error::Domain(format!("k = {k} clusters for {n} points")));
    }
    if max_iters == 0 {
        return Err(Error::Config("k-means needs at least one iteration".into()));
    }
    let row = |i: usize| &x[i * p..(i + 1) * p];
    let mut rng = rng_from_seed(seed);

    let mut centers: Vec<f64> = Vec::with_capacity(k * p);
    centers.extend_from_slice(row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), &centers[..p])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    chosen = i;
                    break;
                }
                u -= d;
            }
            // guard against landing on a zero-weight point through rounding
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&d| d > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = row(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(row(i), &c));
        }
        centers.extend_from_slice(&c);
    }

    let mut labels = vec![usize::MAX; n];
    for _ in 0..max_iters {
        let mut changed = false;
        for i in 0..n {
            let xi = row(i);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let d = sq_dist(xi, &centers[c * p..(c + 1) * p]);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![0.0; k * p];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = labels[i];
            counts[c] += 1;
            for (s, v) in sums[c * p..(c + 1) * p].iter_mut().zip(row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..p {
                    centers[c * p + j] = sums[c * p + j] / counts[c] as f64;
                }
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // reseed from the point farthest from its own centre
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(row(a), &centers[labels[a] * p..(labels[a] + 1) * p]);
                        let db = sq_dist(row(b), &centers[labels[b] * p..(labels[b] + 1) * p]);
                        da.partial_cmp(&db).unwrap().then(b.cmp(&a))
                    })
                    .unwrap();
                let point = row(far).to_vec();
                centers[c * p..(c + 1) * p].copy_from_slice(&point);
                counts[labels[far]] -= 1;
                labels[far] = c;
                counts[c] = 1;
            }
        }
    }
    Ok(labels)
}

/// Column-wise z-scores; constant columns are only centred.
fn z_scores(data: &Dataset) -> Vec<f64> {
    let (n, p) = (data.n, data.p);
    let mut out = data.x.clone();
    for j in 0..p {
        let mean = (0..n).map(|i| data.x[i * p + j]).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (data.x[i * p + j] - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        for i in 0..n {
            out[i * p + j] = (data.x[i * p + j] - mean) / sd;
        }
    }
    out
}

/// Strata are (outcome, cluster) for binary outcomes and cluster alone
/// otherwise. Members of each stratum are shuffled and dealt round-robin;
/// the dealing position carries over between strata so totals stay balanced.
pub fn stratified_split(data: &Dataset, splits: usize, k: usize, seed: u64) -> Result<ShardPlan> {
    check_splits(data.n, splits)?;
    let k = k.min(data.n).max(1);
    let mut plan = ShardPlan {
        splits,
        strategy: Strategy::Stratified,
        seed,
        kmeans_k: Some(k),
        small_strata: None,
        assignment: vec![0; data.n],
    };
    if splits == 1 {
        return Ok(plan);
    }
    let labels = if data.p == 0 {
        vec![0; data.n]
    } else {
        kmeans_lloyd(&z_scores(data), data.p, k, KMEANS_MAX_ITERS, seed)?
    };
    let binary = data.y.iter().all(|&v| v == 0.0 || v == 1.0);
    let mut strata: BTreeMap<(u8, usize), Vec<usize>> = BTreeMap::new();
    for i in 0..data.n {
        let outcome = if binary { data.y[i] as u8 } else { 0 };
        strata.entry((outcome, labels[i])).or_default().push(i);
    }
    // independent stream for dealing, separate from the k-means seeding
    let mut rng = rng_from_seed(seed ^ 0x5bd1_e995_0000_0001);
    let mut next = 0usize;
    let mut small = 0usize;
    for members in strata.values_mut() {
        if members.len() < splits {
            small += 1;
        }
        members.shuffle(&mut rng);
        for &row in members.iter() {
            plan.assignment[row] = next;
            next = (next + 1) % splits;
        }
    }
    if small > 0 {
        plan.small_strata = Some(small);
    }
    Ok(plan)
}
