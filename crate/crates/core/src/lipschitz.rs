//! Dual-norm gradients of critics, difference quotients and empirical
//! Lipschitz estimates.

use rayon::prelude::*;

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::nn::CriticHandle;
use crate::spaces::{diff, iota_star, Geometry, GridSignal, SpaceSpec};

/// Number of equispaced interior points used when maximizing the gradient
/// dual norm along a segment; both endpoints are added on top.
pub const SEGMENT_INTERIOR_POINTS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzReport {
    pub max_dual_gradient_norm: f64,
    pub max_difference_quotient: f64,
    /// Pairs that contributed (degenerate pairs excluded).
    pub sample_count: usize,
    /// Pairs with `x = y`, skipped.
    pub degenerate_pairs: usize,
    pub space: SpaceSpec,
}

fn check_space(space: &SpaceSpec) -> Result<()> {
    if space.exponent() <= 1.0 {
        return Err(Error::DualUndefined(space.exponent()));
    }
    Ok(())
}

/// `‖ι*∇D(x)‖_{B*}`.
pub fn grad_dual_norm(critic: &CriticHandle, space: &SpaceSpec, x: &GridSignal) -> Result<f64> {
    Ok(grad_dual_norms(critic, space, std::slice::from_ref(x))?[0])
}

/// Batched [`grad_dual_norm`].
pub fn grad_dual_norms(critic: &CriticHandle, space: &SpaceSpec, xs: &[GridSignal]) -> Result<Vec<f64>> {
    check_space(space)?;
    let geometry = match xs.first() {
        Some(x) => x.geometry(),
        None => return Ok(Vec::new()),
    };
    let (_, grads) = critic.values_and_gradients(xs)?;
    let n = geometry.len();
    grads
        .data()
        .chunks(n)
        .map(|row| {
            let g = iota_star(&Tensor::vector(row.to_vec()), geometry, space)?;
            space.dual_norm(g.values())
        })
        .collect()
}

/// `|D(x) − D(y)| / ‖x − y‖_B`.
pub fn difference_quotient(critic: &CriticHandle, space: &SpaceSpec, x: &GridSignal, y: &GridSignal) -> Result<f64> {
    let d = space.norm(&x.sub(y))?;
    if d == 0.0 {
        return Err(Error::CoincidentPoints);
    }
    let v = critic.values(&[x.clone(), y.clone()])?;
    Ok((v[0] - v[1]).abs() / d)
}

/// Points `x + t(y − x)` for `t = i/(k+1)`, `i = 0..=k+1`.
pub fn segment_points(x: &GridSignal, y: &GridSignal, interior: usize) -> Vec<GridSignal> {
    let steps = interior + 1;
    (0..=steps)
        .map(|i| {
            let t = i as f64 / steps as f64;
            x.combine(1.0 - t, y, t)
        })
        .collect()
}

/// Largest gradient dual norm over the sampled segment between `x` and `y`.
pub fn segment_max_grad_dual_norm(
    critic: &CriticHandle,
    space: &SpaceSpec,
    x: &GridSignal,
    y: &GridSignal,
    interior: usize,
) -> Result<f64> {
    let pts = segment_points(x, y, interior);
    Ok(grad_dual_norms(critic, space, &pts)?.into_iter().fold(0.0, f64::max))
}

/// Empirical maxima of difference quotients and gradient dual norms over
/// `n` sampled pairs. Gradient norms are taken at `segment_interior` points
/// strictly inside each segment plus both endpoints.
pub fn estimate_lipschitz<F>(
    critic: &CriticHandle,
    space: &SpaceSpec,
    mut sampler: F,
    n: usize,
    segment_interior: usize,
) -> Result<LipschitzReport>
where
    F: FnMut() -> (GridSignal, GridSignal),
{
    check_space(space)?;
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let pairs: Vec<_> = (0..n).map(|_| sampler()).collect();
    let results: Vec<Option<(f64, f64)>> = pairs
        .par_iter()
        .map(|(x, y)| -> Result<Option<(f64, f64)>> {
            let q = match difference_quotient(critic, space, x, y) {
                Ok(q) => q,
                Err(Error::CoincidentPoints) => return Ok(None),
                Err(e) => return Err(e),
            };
            let g = segment_max_grad_dual_norm(critic, space, x, y, segment_interior)?;
            Ok(Some((q, g)))
        })
        .collect::<Result<_>>()?;
    let degenerate = results.iter().filter(|r| r.is_none()).count();
    let used: Vec<(f64, f64)> = results.into_iter().flatten().collect();
    if used.is_empty() {
        return Err(Error::EmptySample);
    }
    Ok(LipschitzReport {
        max_difference_quotient: used.iter().map(|r| r.0).fold(0.0, f64::max),
        max_dual_gradient_norm: used.iter().map(|r| r.1).fold(0.0, f64::max),
        sample_count: used.len(),
        degenerate_pairs: degenerate,
        space: space.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffQuotientPenalty {
    /// Mean of `((q − 1)₊)²` over the non-coincident pairs.
    pub value: f64,
    /// Coincident pairs left out of the mean.
    pub excluded: usize,
}

/// Mean one-sided squared hinge of the difference quotients.
pub fn diff_quotient_penalty(
    critic: &CriticHandle,
    space: &SpaceSpec,
    pairs: &[(GridSignal, GridSignal)],
) -> Result<DiffQuotientPenalty> {
    let mut total = 0.0;
    let mut used = 0usize;
    for (x, y) in pairs {
        match difference_quotient(critic, space, x, y) {
            Ok(q) => {
                total += (q - 1.0).max(0.0).powi(2);
                used += 1;
            }
            Err(Error::CoincidentPoints) => {}
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(Error::EmptySample);
    }
    Ok(DiffQuotientPenalty {
        value: total / used as f64,
        excluded: pairs.len() - used,
    })
}

/// Per-pair hinge terms `((|D(x)−D(y)|/‖x−y‖ − 1)₊)²` as a `[batch]` node,
/// given per-row scores of both batches. Rows of `x − y` must be nonzero.
pub fn diff_quotient_hinge_rows(
    graph: &mut Graph,
    x: NodeId,
    y: NodeId,
    scores_x: NodeId,
    scores_y: NodeId,
    space: &SpaceSpec,
    geometry: Geometry,
) -> Result<NodeId> {
    let delta = graph.sub(x, y)?;
    let dist = diff::norm_rows(graph, delta, space, geometry)?;
    let ds = graph.sub(scores_x, scores_y)?;
    let num = graph.pow_abs(ds, 1.0);
    let inv = graph.recip(dist);
    let q = graph.mul(num, inv)?;
    let shifted = graph.affine(q, 1.0, -1.0);
    let hinge = graph.relu(shifted);
    Ok(graph.square(hinge))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ConstantField, LinearFunctional, NormFunctional};

    #[test]
    fn linear_critic_has_constant_dual_gradient() {
        let a = vec![3.0, -4.0];
        let critic = LinearFunctional::handle(a.clone());
        let x = GridSignal::flat(vec![0.3, 0.7]);
        assert!((grad_dual_norm(&critic, &SpaceSpec::l2(), &x).unwrap() - 5.0).abs() < 1e-12);
        let y = x.combine(1.0, &GridSignal::flat(a), -0.25);
        let q = difference_quotient(&critic, &SpaceSpec::l2(), &x, &y).unwrap();
        assert!((q - 5.0).abs() < 1e-12);
    }

    #[test]
    fn norm_critic_has_unit_dual_gradient() {
        let geometry = Geometry::new(1, 4, 4).unwrap();
        let x = GridSignal::new(geometry, (0..16).map(|i| (i as f64 * 0.9).cos() + 0.1).collect()).unwrap();
        for space in [SpaceSpec::lp(1.5), SpaceSpec::lp(4.0), SpaceSpec::sobolev(-1.0, 2.0)] {
            let critic = NormFunctional::handle(space.clone(), geometry, -2.5);
            let v = grad_dual_norm(&critic, &space, &x).unwrap();
            assert!((v - 2.5).abs() < 1e-8 * 2.5, "{space:?}: {v}");
        }
    }

    #[test]
    fn coincident_points_rejected() {
        let critic = ConstantField::handle(2, 1.0);
        let x = GridSignal::flat(vec![1.0, 2.0]);
        assert!(matches!(
            difference_quotient(&critic, &SpaceSpec::l2(), &x, &x),
            Err(Error::CoincidentPoints)
        ));
    }

    #[test]
    fn penalty_arithmetic() {
        // f = ⟨(3, 0), ·⟩: the quotient along a unit direction at angle θ is 3|cos θ|
        let critic = LinearFunctional::handle(vec![3.0, 0.0]);
        let origin = GridSignal::flat(vec![0.0, 0.0]);
        let dir = |c: f64| GridSignal::flat(vec![c, (1.0 - c * c).sqrt()]);
        let pairs: Vec<_> = [1.0 / 6.0, 0.5, 1.0]
            .into_iter()
            .map(|c| (origin.clone(), dir(c)))
            .collect();
        let p = diff_quotient_penalty(&critic, &SpaceSpec::l2(), &pairs).unwrap();
        assert!((p.value - 4.25 / 3.0).abs() < 1e-12);
        assert_eq!(p.excluded, 0);

        let single = diff_quotient_penalty(&critic.scaled(2.0 / 3.0), &SpaceSpec::l2(), &pairs[2..]).unwrap();
        assert!((single.value - 1.0).abs() < 1e-12);

        let mut with_dup = pairs.clone();
        with_dup.push((origin.clone(), origin.clone()));
        let p2 = diff_quotient_penalty(&critic, &SpaceSpec::l2(), &with_dup).unwrap();
        assert_eq!(p2.excluded, 1);
        assert_eq!(p2.value, p.value);
    }

    #[test]
    fn graph_hinge_matches_direct_penalty() {
        let critic = LinearFunctional::handle(vec![2.0, -1.0]);
        let xs = vec![GridSignal::flat(vec![0.0, 0.0]), GridSignal::flat(vec![1.0, 1.0])];
        let ys = vec![GridSignal::flat(vec![1.0, 0.0]), GridSignal::flat(vec![1.0, 3.0])];
        let bx = crate::spaces::batch_tensor(&xs).unwrap();
        let by = crate::spaces::batch_tensor(&ys).unwrap();
        let mut g = Graph::new();
        let x = g.input("x", bx.shape());
        let y = g.input("y", by.shape());
        let params = crate::nn::param_inputs(&mut g, critic.network().as_ref(), "t");
        let sx = critic.build_scores(&mut g, x, &params).unwrap();
        let sy = critic.build_scores(&mut g, y, &params).unwrap();
        let h = diff_quotient_hinge_rows(&mut g, x, y, sx, sy, &SpaceSpec::l2(), Geometry::flat(2)).unwrap();
        let m = g.mean(h);
        let feeds: Vec<&Tensor> = [&bx, &by].into_iter().chain(critic.params()).collect();
        let got = g.forward(&feeds, m).unwrap();
        let pairs: Vec<_> = xs.into_iter().zip(ys).collect();
        let want = diff_quotient_penalty(&critic, &SpaceSpec::l2(), &pairs).unwrap().value;
        assert!((got - want).abs() < 1e-14);
        assert!((want - 0.5).abs() < 1e-14);
    }
}
