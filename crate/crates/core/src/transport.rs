//! Exact optimal transport between finitely supported measures.

use crate::error::{Error, Result};
use crate::nn::CriticHandle;
use crate::spaces::{GridSignal, SpaceSpec};

/// Largest support accepted per measure.
pub const SUPPORT_CAP: usize = 64;

/// Allowed deviation of the weight sum from 1.
pub const WEIGHT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    points: Vec<GridSignal>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// Validates the weights, drops zero-weight points and renormalizes the
    /// rest so they sum to one.
    pub fn new(points: Vec<GridSignal>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::shape(
                "measure",
                format!("{} points but {} weights", points.len(), weights.len()),
            ));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::invalid(format!("weight {w} is not a nonnegative number")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(Error::WeightSum(total));
        }
        if let Some(first) = points.first() {
            if let Some(p) = points.iter().find(|p| p.geometry() != first.geometry()) {
                return Err(Error::shape(
                    "measure",
                    format!("point of geometry {} among {}", p.geometry(), first.geometry()),
                ));
            }
        }
        let (points, weights): (Vec<_>, Vec<_>) = points.into_iter().zip(weights).filter(|(_, w)| *w > 0.0).unzip();
        if points.len() > SUPPORT_CAP {
            return Err(Error::SupportTooLarge {
                size: points.len(),
                cap: SUPPORT_CAP,
            });
        }
        let kept: f64 = weights.iter().sum();
        let weights = weights.into_iter().map(|w| w / kept).collect();
        Ok(DiscreteMeasure { points, weights })
    }

    pub fn uniform(points: Vec<GridSignal>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptySample);
        }
        let w = 1.0 / points.len() as f64;
        let n = points.len();
        // 1/n summed n times can miss 1 by a few ulps, well inside tolerance
        DiscreteMeasure::new(points, vec![w; n])
    }

    pub fn dirac(point: GridSignal) -> Self {
        DiscreteMeasure {
            points: vec![point],
            weights: vec![1.0],
        }
    }

    pub fn points(&self) -> &[GridSignal] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `Σ wᵢ f(xᵢ)`.
    pub fn expect(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

/// Row-major `m × n` transport plan.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingPlan {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CouplingPlan {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.data.chunks(self.cols).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for r in self.data.chunks(self.cols) {
            for (acc, v) in s.iter_mut().zip(r) {
                *acc += v;
            }
        }
        s
    }

    /// `Σ πᵢⱼ Cᵢⱼ`.
    pub fn cost(&self, cost: &[Vec<f64>]) -> f64 {
        let mut total = 0.0;
        for (i, row) in cost.iter().enumerate() {
            for (j, c) in row.iter().enumerate() {
                total += self.get(i, j) * c;
            }
        }
        total
    }
}

/// `Cᵢⱼ = ‖xᵢ − yⱼ‖_B^p`.
pub fn cost_matrix(mu: &DiscreteMeasure, nu: &DiscreteMeasure, space: &SpaceSpec, p: f64) -> Result<Vec<Vec<f64>>> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::invalid(format!("transport exponent must be >= 1, got {p}")));
    }
    if let (Some(x), Some(y)) = (mu.points.first(), nu.points.first()) {
        if x.geometry() != y.geometry() {
            return Err(Error::shape(
                "cost matrix",
                format!("geometries {} and {} differ", x.geometry(), y.geometry()),
            ));
        }
    }
    mu.points
        .iter()
        .map(|x| nu.points.iter().map(|y| Ok(space.norm(&x.sub(y))?.powf(p))).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportSolution {
    /// `W_p`, the p-th root of the optimal cost.
    pub distance: f64,
    /// Optimal value of `Σ πᵢⱼ Cᵢⱼ`.
    pub cost: f64,
    pub plan: CouplingPlan,
}

/// Exact `W_p(μ, ν)` with ground metric `‖x − y‖_B`.
pub fn wasserstein_p_exact(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    space: &SpaceSpec,
    p: f64,
) -> Result<TransportSolution> {
    if mu.is_empty() || nu.is_empty() {
        return Err(Error::EmptySample);
    }
    let cost = cost_matrix(mu, nu, space, p)?;
    let (value, plan) = solve_transport(&mu.weights, &nu.weights, &cost)?;
    let value = value.max(0.0);
    Ok(TransportSolution {
        distance: value.powf(1.0 / p),
        cost: value,
        plan,
    })
}

/// `W₁(μ, ν) − (E_μ D − E_ν D)`.
pub fn kantorovich_gap(
    critic: &CriticHandle,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    space: &SpaceSpec,
) -> Result<f64> {
    let w1 = wasserstein_p_exact(mu, nu, space, 1.0)?.distance;
    let dm = mu.expect(&critic.values(&mu.points)?);
    let dn = nu.expect(&critic.values(&nu.points)?);
    Ok(w1 - (dm - dn))
}

/// A critic's value in the dual problem once rescaled to be 1-Lipschitz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualEstimate {
    /// `E_μ D − E_ν D`.
    pub mean_difference: f64,
    /// Largest `|D(x) − D(y)| / ‖x − y‖_B` over distinct points of both
    /// supports.
    pub support_lipschitz: f64,
    /// `mean_difference / support_lipschitz`, or 0 for a constant critic.
    /// Never exceeds `W₁(μ, ν)` beyond rounding.
    pub normalized: f64,
}

/// Evaluates `D / L` in the dual objective, with `L` the Lipschitz constant
/// of `D` restricted to the supports. Any function on a finite set extends
/// to the whole space with the same constant, so `D / L` is dual feasible.
pub fn dual_estimate(
    critic: &CriticHandle,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    space: &SpaceSpec,
) -> Result<DualEstimate> {
    if mu.is_empty() || nu.is_empty() {
        return Err(Error::EmptySample);
    }
    let points: Vec<GridSignal> = mu.points.iter().chain(&nu.points).cloned().collect();
    let values = critic.values(&points)?;
    let (dm, dn) = values.split_at(mu.len());
    let mean_difference = mu.expect(dm) - nu.expect(dn);
    let mut lip = 0.0f64;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d = space.norm(&points[i].sub(&points[j]))?;
            if d > 0.0 {
                lip = lip.max((values[i] - values[j]).abs() / d);
            }
        }
    }
    Ok(DualEstimate {
        mean_difference,
        support_lipschitz: lip,
        normalized: if lip > 0.0 { mean_difference / lip } else { 0.0 },
    })
}

/// Minimizes `Σ πᵢⱼ Cᵢⱼ` over couplings of `supply` and `demand` with the
/// transportation simplex. The basis is a spanning tree of the bipartite
/// graph; pivots follow Bland's rule so degenerate bases cannot cycle.
pub fn solve_transport(supply: &[f64], demand: &[f64], cost: &[Vec<f64>]) -> Result<(f64, CouplingPlan)> {
    let (m, n) = (supply.len(), demand.len());
    if m == 0 || n == 0 {
        return Err(Error::EmptySample);
    }
    if cost.len() != m || cost.iter().any(|r| r.len() != n) {
        return Err(Error::shape("cost matrix", format!("expected {m}x{n}")));
    }
    let sa: f64 = supply.iter().sum();
    let sb: f64 = demand.iter().sum();
    if (sa - sb).abs() > WEIGHT_TOLERANCE * sa.max(sb).max(1.0) {
        return Err(Error::WeightSum(sb / sa));
    }
    let mut tree = Basis::northwest(supply, demand);
    let scale = cost
        .iter()
        .flatten()
        .fold(0.0f64, |acc, c| acc.max(c.abs()))
        .max(f64::MIN_POSITIVE);
    let tol = 1e-12 * scale;
    let mut u = vec![0.0; m];
    let mut v = vec![0.0; n];
    loop {
        tree.potentials(cost, &mut u, &mut v);
        let entering = (0..m)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .find(|&(i, j)| !tree.is_basic(i, j) && cost[i][j] - u[i] - v[j] < -tol);
        match entering {
            None => break,
            Some((i, j)) => tree.pivot(i, j),
        }
    }
    let mut data = vec![0.0; m * n];
    for (k, &(i, j)) in tree.cells.iter().enumerate() {
        data[i * n + j] = tree.flow[k].max(0.0);
    }
    let plan = CouplingPlan { rows: m, cols: n, data };
    Ok((plan.cost(cost), plan))
}

/// Spanning-tree basis. Nodes `0..m` are sources, `m..m+n` sinks.
struct Basis {
    m: usize,
    n: usize,
    cells: Vec<(usize, usize)>,
    flow: Vec<f64>,
    /// `slot[i * n + j]` is the index into `cells` or `usize::MAX`.
    slot: Vec<usize>,
}

impl Basis {
    fn northwest(supply: &[f64], demand: &[f64]) -> Self {
        let (m, n) = (supply.len(), demand.len());
        let mut a = supply.to_vec();
        let mut b = demand.to_vec();
        let mut basis = Basis {
            m,
            n,
            cells: Vec::with_capacity(m + n - 1),
            flow: Vec::with_capacity(m + n - 1),
            slot: vec![usize::MAX; m * n],
        };
        let (mut i, mut j) = (0, 0);
        loop {
            let last = i == m - 1 && j == n - 1;
            // the final cell absorbs rounding so marginals close exactly
            let x = if last { a[i].max(0.0) } else { a[i].min(b[j]).max(0.0) };
            basis.slot[i * n + j] = basis.cells.len();
            basis.cells.push((i, j));
            basis.flow.push(x);
            if last {
                break;
            }
            a[i] -= x;
            b[j] -= x;
            if j == n - 1 || (i < m - 1 && a[i] <= b[j]) {
                i += 1;
            } else {
                j += 1;
            }
        }
        basis
    }

    fn is_basic(&self, i: usize, j: usize) -> bool {
        self.slot[i * self.n + j] != usize::MAX
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.m + self.n];
        for (k, &(i, j)) in self.cells.iter().enumerate() {
            adj[i].push(k);
            adj[self.m + j].push(k);
        }
        adj
    }

    fn other(&self, k: usize, node: usize) -> usize {
        let (i, j) = self.cells[k];
        if node == i {
            self.m + j
        } else {
            i
        }
    }

    /// Solves `uᵢ + vⱼ = Cᵢⱼ` on basic cells with `u₀ = 0`.
    fn potentials(&self, cost: &[Vec<f64>], u: &mut [f64], v: &mut [f64]) {
        let adj = self.adjacency();
        let mut seen = vec![false; self.m + self.n];
        let mut stack = vec![0usize];
        seen[0] = true;
        u[0] = 0.0;
        while let Some(node) = stack.pop() {
            for &k in &adj[node] {
                let next = self.other(k, node);
                if seen[next] {
                    continue;
                }
                seen[next] = true;
                let (i, j) = self.cells[k];
                if next >= self.m {
                    v[j] = cost[i][j] - u[i];
                } else {
                    u[i] = cost[i][j] - v[j];
                }
                stack.push(next);
            }
        }
    }

    /// Tree path from `from` to `to` as a list of cell indices.
    fn path(&self, from: usize, to: usize) -> Vec<usize> {
        let adj = self.adjacency();
        let mut parent = vec![usize::MAX; self.m + self.n];
        let mut seen = vec![false; self.m + self.n];
        let mut stack = vec![from];
        seen[from] = true;
        while let Some(node) = stack.pop() {
            if node == to {
                break;
            }
            for &k in &adj[node] {
                let next = self.other(k, node);
                if !seen[next] {
                    seen[next] = true;
                    parent[next] = k;
                    stack.push(next);
                }
            }
        }
        let mut path = Vec::new();
        let mut node = to;
        while node != from {
            let k = parent[node];
            path.push(k);
            node = self.other(k, node);
        }
        path.reverse();
        path
    }

    fn pivot(&mut self, i: usize, j: usize) {
        // cycle: entering (+), then alternating along the tree path i → j
        let path = self.path(i, self.m + j);
        let minus: Vec<usize> = path.iter().step_by(2).copied().collect();
        let theta = minus.iter().map(|&k| self.flow[k]).fold(f64::INFINITY, f64::min);
        let leaving = minus
            .iter()
            .copied()
            .filter(|&k| self.flow[k] == theta)
            .min_by_key(|&k| self.cells[k].0 * self.n + self.cells[k].1)
            .expect("cycle has a minus cell");
        for (pos, &k) in path.iter().enumerate() {
            if pos % 2 == 0 {
                self.flow[k] -= theta;
            } else {
                self.flow[k] += theta;
            }
        }
        let (li, lj) = self.cells[leaving];
        self.slot[li * self.n + lj] = usize::MAX;
        self.cells[leaving] = (i, j);
        self.flow[leaving] = theta;
        self.slot[i * self.n + j] = leaving;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LinearFunctional, NormFunctional};
    use crate::spaces::Geometry;

    fn pt(v: &[f64]) -> GridSignal {
        GridSignal::flat(v.to_vec())
    }

    #[test]
    fn normalized_dual_estimate_is_feasible() {
        let mu = DiscreteMeasure::new(vec![pt(&[0.0, 0.0]), pt(&[1.0, 0.0])], vec![0.5, 0.5]).unwrap();
        let nu = DiscreteMeasure::dirac(pt(&[0.0, 3.0]));
        let space = SpaceSpec::l2();
        let w1 = wasserstein_p_exact(&mu, &nu, &space, 1.0).unwrap().distance;
        // a steep linear critic overshoots W1 raw but not once normalized
        let steep = LinearFunctional::handle(vec![0.0, -4.0]);
        let e = dual_estimate(&steep, &mu, &nu, &space).unwrap();
        assert!((e.mean_difference - 12.0).abs() < 1e-12);
        assert!(e.normalized <= w1 + 1e-12);
        // the optimal potential d(x, y0) is recovered exactly
        let potential = NormFunctional::handle(space.clone(), Geometry::flat(2), 1.0);
        let shifted = |m: &DiscreteMeasure| {
            DiscreteMeasure::new(
                m.points().iter().map(|x| x.sub(&pt(&[0.0, 3.0]))).collect(),
                m.weights().to_vec(),
            )
            .unwrap()
        };
        let e = dual_estimate(&potential, &shifted(&mu), &shifted(&nu), &space).unwrap();
        assert!((e.normalized - w1).abs() < 1e-9, "{} vs {w1}", e.normalized);
        let flat = LinearFunctional::handle(vec![0.0, 0.0]);
        assert_eq!(dual_estimate(&flat, &mu, &nu, &space).unwrap().normalized, 0.0);
    }

    #[test]
    fn identical_measures_have_zero_distance() {
        let mu = DiscreteMeasure::new(vec![pt(&[0.0, 1.0]), pt(&[2.0, -1.0])], vec![0.3, 0.7]).unwrap();
        let w = wasserstein_p_exact(&mu, &mu, &SpaceSpec::l2(), 1.0).unwrap();
        assert!(w.distance.abs() < 1e-12);
    }

    #[test]
    fn diracs_give_ground_distance_for_every_p() {
        let a = DiscreteMeasure::dirac(pt(&[0.0, 0.0]));
        let b = DiscreteMeasure::dirac(pt(&[3.0, 4.0]));
        for p in [1.0, 1.5, 2.0, 3.0] {
            let w = wasserstein_p_exact(&a, &b, &SpaceSpec::l2(), p).unwrap();
            assert!((w.distance - 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_point_cost_matrix_is_symmetric() {
        let mu = DiscreteMeasure::new(vec![pt(&[0.0]), pt(&[2.0])], vec![0.5, 0.5]).unwrap();
        let c = cost_matrix(&mu, &mu, &SpaceSpec::l2(), 1.0).unwrap();
        assert_eq!(c, vec![vec![0.0, 2.0], vec![2.0, 0.0]]);
    }

    #[test]
    fn shift_of_uniform_line() {
        // moving every atom by 1 is optimal: W₁ = 1
        let xs: Vec<_> = (0..5).map(|i| pt(&[i as f64])).collect();
        let ys: Vec<_> = (0..5).map(|i| pt(&[i as f64 + 1.0])).collect();
        let w = wasserstein_p_exact(
            &DiscreteMeasure::uniform(xs).unwrap(),
            &DiscreteMeasure::uniform(ys).unwrap(),
            &SpaceSpec::l2(),
            1.0,
        )
        .unwrap();
        assert!((w.distance - 1.0).abs() < 1e-12);
    }

    #[test]
    fn plan_marginals_match() {
        let mu = DiscreteMeasure::new(vec![pt(&[0.0]), pt(&[1.0]), pt(&[5.0])], vec![0.2, 0.5, 0.3]).unwrap();
        let nu = DiscreteMeasure::new(vec![pt(&[0.5]), pt(&[4.0])], vec![0.6, 0.4]).unwrap();
        let sol = wasserstein_p_exact(&mu, &nu, &SpaceSpec::l2(), 2.0).unwrap();
        for (a, b) in sol.plan.row_sums().iter().zip(mu.weights()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in sol.plan.col_sums().iter().zip(nu.weights()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(sol.plan.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn rejects_bad_weights_and_drops_zeros() {
        assert!(matches!(
            DiscreteMeasure::new(vec![pt(&[0.0]), pt(&[1.0])], vec![0.5, 0.6]),
            Err(Error::WeightSum(_))
        ));
        let mu = DiscreteMeasure::new(vec![pt(&[0.0]), pt(&[1.0])], vec![1.0, 0.0]).unwrap();
        assert_eq!(mu.len(), 1);
    }

    #[test]
    fn support_cap_enforced() {
        let pts: Vec<_> = (0..65).map(|i| pt(&[i as f64])).collect();
        assert!(matches!(
            DiscreteMeasure::uniform(pts),
            Err(Error::SupportTooLarge { size: 65, cap: 64 })
        ));
    }
}
