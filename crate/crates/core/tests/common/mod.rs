//! Independent oracles shared by integration tests and the acceptance run.
#![allow(dead_code)]

use bwgan_core::spaces::{Geometry, GridSignal};
use rand::Rng;
use rand_distr::StandardNormal;

/// Minimum of `Σ πᵢⱼ Cᵢⱼ` over every basic feasible solution of the
/// transportation polytope, found by trying each set of `m + n − 1` cells.
pub fn vertex_enumeration(supply: &[f64], demand: &[f64], cost: &[Vec<f64>]) -> f64 {
    let (m, n) = (supply.len(), demand.len());
    let cells: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let k = m + n - 1;
    let mut best = f64::INFINITY;
    let mut choose = vec![0usize; k];
    fn rec(start: usize, depth: usize, choose: &mut Vec<usize>, cells: &[(usize, usize)], f: &mut dyn FnMut(&[usize])) {
        if depth == choose.len() {
            f(choose);
            return;
        }
        for c in start..=cells.len() - (choose.len() - depth) {
            choose[depth] = c;
            rec(c + 1, depth + 1, choose, cells, f);
        }
    }
    let rhs: Vec<f64> = supply.iter().chain(demand).copied().collect();
    rec(0, 0, &mut choose, &cells, &mut |basis| {
        // Rows: m supply equations then n demand equations; columns: basis cells.
        let rows = m + n;
        let mut a = vec![vec![0.0; k + 1]; rows];
        for (col, &c) in basis.iter().enumerate() {
            let (i, j) = cells[c];
            a[i][col] = 1.0;
            a[m + j][col] = 1.0;
        }
        for (r, row) in a.iter_mut().enumerate() {
            row[k] = rhs[r];
        }
        let Some(x) = solve_full_column_rank(a, k) else {
            return;
        };
        if x.iter().any(|&v| v < -1e-12) {
            return;
        }
        let total: f64 = basis
            .iter()
            .zip(&x)
            .map(|(&c, &v)| v * cost[cells[c].0][cells[c].1])
            .sum();
        best = best.min(total);
    });
    best
}

/// Gauss-Jordan on an augmented `[A | b]` with `cols` unknowns; `None` when
/// `A` is rank deficient or the system is inconsistent.
fn solve_full_column_rank(mut a: Vec<Vec<f64>>, cols: usize) -> Option<Vec<f64>> {
    let rows = a.len();
    let mut r = 0;
    for c in 0..cols {
        let piv = (r..rows).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs()))?;
        if a[piv][c].abs() < 1e-12 {
            return None;
        }
        a.swap(r, piv);
        let p = a[r][c];
        for v in a[r].iter_mut() {
            *v /= p;
        }
        for rr in 0..rows {
            if rr != r && a[rr][c] != 0.0 {
                let f = a[rr][c];
                let pivot_row = a[r].clone();
                for (v, pv) in a[rr].iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
        r += 1;
    }
    if a[r..].iter().any(|row| row[cols].abs() > 1e-9) {
        return None;
    }
    Some((0..cols).map(|c| a[c][cols]).collect())
}

pub fn random_weights<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / s).collect()
}

pub fn normal_signal<R: Rng>(geometry: Geometry, rng: &mut R) -> GridSignal {
    let v = (0..geometry.len()).map(|_| rng.sample(StandardNormal)).collect();
    GridSignal::new(geometry, v).unwrap()
}
