//! Differentiable norms built as autodiff subgraphs, one value per batch row.

use super::{Geometry, Measure, SpaceSpec, SpectralMultiplier};
use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};

/// Appends `‖x_k‖_B` for every row `x_k` of the `[batch, n]` node `x`.
pub fn norm_rows(graph: &mut Graph, x: NodeId, space: &SpaceSpec, geometry: Geometry) -> Result<NodeId> {
    let shape = graph.shape(x).to_vec();
    if shape.len() != 2 || shape[1] != geometry.len() {
        return Err(Error::shape(
            graph.describe(x),
            format!(
                "expected [batch, {}] for geometry {geometry}, got {shape:?}",
                geometry.len()
            ),
        ));
    }
    space.validate(geometry)?;
    rows(graph, x, space, geometry)
}

/// Appends `‖g_k‖_{B*}` for every row of `g`.
pub fn dual_norm_rows(graph: &mut Graph, g: NodeId, space: &SpaceSpec, geometry: Geometry) -> Result<NodeId> {
    norm_rows(graph, g, &space.dual_space()?, geometry)
}

fn rows(graph: &mut Graph, x: NodeId, space: &SpaceSpec, geometry: Geometry) -> Result<NodeId> {
    match space {
        SpaceSpec::Lp { p, measure } => lp_rows(graph, x, *p, *measure),
        SpaceSpec::Sobolev {
            p,
            s,
            frequency_scale,
            measure,
        } => {
            let y = if *s == 0.0 {
                x
            } else {
                let m = SpectralMultiplier::cached(geometry, *s, *frequency_scale)?;
                graph.spectral(x, m)?
            };
            lp_rows(graph, y, *p, *measure)
        }
        SpaceSpec::Weighted { base, weights } => {
            let batch = graph.shape(x)[0];
            let w = graph.constant(Tensor::vector(weights.clone()));
            let w = graph.broadcast_rows(w, batch)?;
            let y = graph.mul(x, w)?;
            rows(graph, y, base, geometry)
        }
        SpaceSpec::Product { p, factors } => {
            let mut total: Option<NodeId> = None;
            let mut offset = 0;
            for f in factors {
                let n = f.geometry.len();
                let block = graph.slice_cols(x, offset, n)?;
                let r = rows(graph, block, &f.space, f.geometry)?;
                let rp = graph.pow_abs(r, *p);
                total = Some(match total {
                    None => rp,
                    Some(acc) => graph.add(acc, rp)?,
                });
                offset += n;
            }
            let total = total.ok_or_else(|| Error::invalid("empty product space"))?;
            Ok(root(graph, total, *p))
        }
    }
}

fn lp_rows(graph: &mut Graph, x: NodeId, p: f64, measure: Measure) -> Result<NodeId> {
    if !p.is_finite() {
        return Err(Error::invalid("L^inf norms are not differentiable here"));
    }
    let n = graph.shape(x)[1];
    let powered = graph.pow_abs(x, p);
    let sums = graph.sum_cols(powered)?;
    let raw = root(graph, sums, p);
    Ok(graph.scale(raw, measure.norm_factor(n, p)))
}

fn root(graph: &mut Graph, x: NodeId, p: f64) -> NodeId {
    if p == 2.0 {
        graph.sqrt(x)
    } else {
        graph.pow_abs(x, 1.0 / p)
    }
}
