//! Brute-force oracles and fixtures shared by the integration tests.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use robust_domains::domains::{Domain, MultiDomainDataset};
use robust_domains::regularizers::CostMatrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Uniform point on the simplex (normalized exponentials).
pub fn random_simplex(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| -rng.random_range(1e-12..1.0f64).ln()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

/// Simplex point bounded away from the faces by `floor`.
pub fn interior_simplex(rng: &mut ChaCha8Rng, k: usize, floor: f64) -> Vec<f64> {
    let raw = random_simplex(rng, k);
    let scale = 1.0 - floor * k as f64;
    raw.into_iter().map(|x| floor + scale * x).collect()
}

pub fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Euclidean projection onto the simplex by enumerating every support set:
/// on support `S` the KKT point is `v_i - θ` with `θ = (Σ_S v - 1) / |S|`;
/// the projection is the feasible candidate closest to `v`.
pub fn projection_by_support_enumeration(v: &[f64]) -> Vec<f64> {
    let k = v.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << k) {
        let support: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        let theta = (support.iter().map(|&i| v[i]).sum::<f64>() - 1.0) / support.len() as f64;
        let mut p = vec![0.0; k];
        let mut feasible = true;
        for &i in &support {
            p[i] = v[i] - theta;
            if p[i] < 0.0 {
                feasible = false;
            }
        }
        if !feasible {
            continue;
        }
        let dist: f64 = p.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.as_ref().is_none_or(|(d, _)| dist < *d) {
            best = Some((dist, p));
        }
    }
    best.expect("the full support minus a large shift is always feasible").1
}

/// Every point of the simplex grid with spacing `1/n`.
pub fn simplex_grid(k: usize, n: usize) -> Vec<Vec<f64>> {
    fn rec(k: usize, left: usize, n: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if prefix.len() == k - 1 {
            let mut point: Vec<f64> = prefix.iter().map(|&c| c as f64 / n as f64).collect();
            point.push(left as f64 / n as f64);
            out.push(point);
            return;
        }
        for c in 0..=left {
            prefix.push(c);
            rec(k, left - c, n, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(k, n, n, &mut Vec::new(), &mut out);
    out
}

/// Maximizes a concave `f` over the simplex by grid search: a global grid
/// of spacing `1/32`, then grids refined tenfold around the incumbent.
pub fn grid_maximize(k: usize, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut best = simplex_grid(k, 32)
        .into_iter()
        .map(|p| (f(&p), p))
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap();
    let mut radius = 2.0 / 32.0;
    let steps = 10i64;
    for _ in 0..6 {
        let center = best.1.clone();
        let h = radius / steps as f64;
        let free = k - 1;
        let mut offsets = vec![-steps; free];
        loop {
            let mut point: Vec<f64> = (0..free).map(|i| center[i] + offsets[i] as f64 * h).collect();
            let last = 1.0 - point.iter().sum::<f64>();
            point.push(last);
            if point.iter().all(|x| *x >= 0.0) {
                let value = f(&point);
                if value > best.0 {
                    best = (value, point);
                }
            }
            let mut i = 0;
            while i < free {
                offsets[i] += 1;
                if offsets[i] <= steps {
                    break;
                }
                offsets[i] = -steps;
                i += 1;
            }
            if i == free {
                break;
            }
        }
        radius = 2.0 * h;
    }
    best.1
}

/// Unregularized optimal transport `min ⟨P, M⟩` subject to `P1 = p`,
/// `Pᵀ1 = q`, solved exactly by successive shortest paths on the
/// transportation network (Bellman-Ford on the residual graph).
pub fn transport_lp(p: &[f64], q: &[f64], cost: &CostMatrix) -> f64 {
    let k = p.len();
    let mut flow = vec![0.0; k * k];
    let mut supply = p.to_vec();
    let mut demand = q.to_vec();
    const EPS: f64 = 1e-15;
    // Nodes 0..k are sources, k..2k sinks.
    loop {
        if supply.iter().all(|s| *s <= EPS) || demand.iter().all(|d| *d <= EPS) {
            break;
        }
        let n = 2 * k;
        let mut dist = vec![f64::INFINITY; n];
        let mut parent = vec![usize::MAX; n];
        for i in 0..k {
            if supply[i] > EPS {
                dist[i] = 0.0;
            }
        }
        for _ in 0..n {
            let mut changed = false;
            for i in 0..k {
                for j in 0..k {
                    let c = cost.get(i, j);
                    // Forward arc i -> sink j, unbounded capacity.
                    if dist[i] + c < dist[k + j] - 1e-15 {
                        dist[k + j] = dist[i] + c;
                        parent[k + j] = i;
                        changed = true;
                    }
                    // Backward arc sink j -> i when flow can be undone.
                    if flow[i * k + j] > EPS && dist[k + j] - c < dist[i] - 1e-15 {
                        dist[i] = dist[k + j] - c;
                        parent[i] = k + j;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let target = (0..k)
            .filter(|&j| demand[j] > EPS && dist[k + j].is_finite())
            .min_by(|&a, &b| dist[k + a].total_cmp(&dist[k + b]))
            .expect("a feasible path exists while mass remains");
        // Walk back to the source to find the bottleneck.
        let mut path = Vec::new();
        let mut node = k + target;
        while parent[node] != usize::MAX {
            path.push((parent[node], node));
            node = parent[node];
        }
        let source = node;
        let mut amount = supply[source].min(demand[target]);
        for &(from, to) in &path {
            if from >= k {
                amount = amount.min(flow[to * k + (from - k)]);
            }
        }
        for &(from, to) in &path {
            if from < k {
                flow[from * k + (to - k)] += amount;
            } else {
                flow[to * k + (from - k)] -= amount;
            }
        }
        supply[source] -= amount;
        demand[target] -= amount;
    }
    (0..k * k).map(|idx| flow[idx] * cost.get(idx / k, idx % k)).sum()
}

/// Random symmetric cost with zero diagonal and entries in `[0.1, 2]`.
pub fn random_cost(rng: &mut ChaCha8Rng, k: usize) -> CostMatrix {
    let mut entries = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..i {
            let c = rng.random_range(0.1..2.0);
            entries[i * k + j] = c;
            entries[j * k + i] = c;
        }
    }
    CostMatrix::new(k, entries).unwrap()
}

/// Gaussian blobs: `n` examples per domain over `c` classes in `d`
/// dimensions, with per-domain noise added to shared clean features.
pub fn blobs(seed: u64, n: usize, d: usize, c: usize, center_scale: f64, noise: &[f64]) -> MultiDomainDataset {
    let mut r = rng(seed);
    let centers: Vec<f64> = (0..c * d).map(|_| center_scale * normal(&mut r)).collect();
    let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    let clean: Vec<f64> = labels
        .iter()
        .flat_map(|&l| (0..d).map(move |j| (l, j)))
        .map(|(l, j)| centers[l * d + j] + normal(&mut r))
        .collect();
    let domains = noise
        .iter()
        .enumerate()
        .map(|(k, &sigma)| {
            let features = clean.iter().map(|x| x + sigma * normal(&mut r)).collect();
            Domain::new(format!("domain{k}"), d, features, labels.clone()).unwrap()
        })
        .collect();
    MultiDomainDataset::new(domains, c).unwrap()
}

/// Central difference with step `1e-5 · max(1, |x|)`.
pub fn central_difference(x: f64, f: impl Fn(f64) -> f64) -> f64 {
    let h = 1e-5 * x.abs().max(1.0);
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// `|a - b| / max(1, |a|, |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}
