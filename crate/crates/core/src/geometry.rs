//! Metric tensor calculus on chart grids: Christoffel symbols, scalar
//! curvature, covariant derivatives, volume elements and partition-of-unity
//! quadrature.
//!
//! Derivatives are second-order finite differences; halo data keeps every
//! stencil that lands on a core point centered, so curvature converges at
//! order two on the builtin metrics.

use crate::atlas::Atlas;
use crate::error::{Error, Result};
use crate::fields::ChartField;
use crate::grid::{deriv1, deriv2_mixed};
use ndarray::{ArrayD, Dimension, IxDyn};
use serde::Serialize;

/// Metric with cached inverse, determinant and Christoffel symbols.
#[derive(Debug, Clone)]
pub struct MetricField {
    /// g_ij, rank (0,2).
    pub g: ChartField,
    /// g^ij, rank (2,0).
    pub inv: ChartField,
    /// det g per chart.
    pub det: Vec<ArrayD<f64>>,
    /// sqrt(det g) per chart.
    pub sqrt_det: Vec<ArrayD<f64>>,
    /// Christoffel symbols Gamma^i_{jk} per chart, component i*m^2 + j*m + k.
    pub gamma: Vec<Vec<ArrayD<f64>>>,
}

impl MetricField {
    /// Sample the atlas's closed-form metric on every chart grid.
    pub fn from_atlas(atlas: &Atlas) -> Result<Self> {
        let m = atlas.dim;
        let comps: Vec<Vec<ArrayD<f64>>> = atlas
            .charts
            .iter()
            .map(|c| {
                (0..m * m)
                    .map(|ci| c.grid.sample(|x| c.metric_eval(x)[ci]))
                    .collect()
            })
            .collect();
        let g = ChartField {
            sigma: 0,
            tau: 2,
            comps,
        };
        Self::from_components(atlas, g)
    }

    /// Build the caches from given per-chart metric components (must be
    /// symmetric and positive definite at every grid point, halo included).
    pub fn from_components(atlas: &Atlas, g: ChartField) -> Result<Self> {
        let m = atlas.dim;
        let n_charts = atlas.n_charts();
        let mut inv = ChartField::zeros(atlas, 2, 0);
        let mut det = Vec::with_capacity(n_charts);
        let mut sqrt_det = Vec::with_capacity(n_charts);

        for k in 0..n_charts {
            let grid = &atlas.charts[k].grid;
            let mut det_a = grid.zeros();
            let mut sqrt_a = grid.zeros();
            let ext = grid.ext_shape();
            let mut gm = nalgebra::DMatrix::<f64>::zeros(m, m);
            for idx in ndarray::indices(IxDyn(&ext)) {
                for i in 0..m {
                    for j in 0..m {
                        gm[(i, j)] = g.comps[k][i * m + j][idx.clone()];
                    }
                }
                let d = gm.determinant();
                if d <= 0.0 {
                    return Err(Error::SingularMetric {
                        chart: k,
                        index: idx.slice().to_vec(),
                        det: d,
                    });
                }
                det_a[idx.clone()] = d;
                sqrt_a[idx.clone()] = d.sqrt();
                let ginv = gm.clone().try_inverse().ok_or(Error::SingularMetric {
                    chart: k,
                    index: idx.slice().to_vec(),
                    det: d,
                })?;
                for i in 0..m {
                    for j in 0..m {
                        inv.comps[k][i * m + j][idx.clone()] = ginv[(i, j)];
                    }
                }
            }
            det.push(det_a);
            sqrt_det.push(sqrt_a);
        }

        let gamma = christoffel_arrays(atlas, &g, &inv);
        Ok(MetricField {
            g,
            inv,
            det,
            sqrt_det,
            gamma,
        })
    }

    /// Largest eigenvalue of g^ij over all masked core points (used by the
    /// parabolic step-size bound).
    pub fn max_inverse_eigenvalue(&self, atlas: &Atlas) -> f64 {
        let m = atlas.dim;
        let mut worst: f64 = 0.0;
        let mut gm = nalgebra::DMatrix::<f64>::zeros(m, m);
        for (k, chart) in atlas.charts.iter().enumerate() {
            for idx in chart.masked_core_indices() {
                for i in 0..m {
                    for j in 0..m {
                        gm[(i, j)] = self.inv.comps[k][i * m + j][IxDyn(&idx)];
                    }
                }
                let eigs = gm.symmetric_eigenvalues();
                for &e in eigs.iter() {
                    worst = worst.max(e);
                }
            }
        }
        worst
    }

    /// Max of |g^ij g_jk - delta^i_k| over masked core points.
    pub fn inverse_defect(&self, atlas: &Atlas) -> f64 {
        let m = atlas.dim;
        let mut worst: f64 = 0.0;
        for (k, chart) in atlas.charts.iter().enumerate() {
            for idx in chart.masked_core_indices() {
                for i in 0..m {
                    for kk in 0..m {
                        let mut acc = 0.0;
                        for j in 0..m {
                            acc += self.inv.comps[k][i * m + j][IxDyn(&idx)]
                                * self.g.comps[k][j * m + kk][IxDyn(&idx)];
                        }
                        let target = if i == kk { 1.0 } else { 0.0 };
                        worst = worst.max((acc - target).abs());
                    }
                }
            }
        }
        worst
    }
}

/// Gamma^i_{jk} = 1/2 g^il (d_j g_lk + d_k g_lj - d_l g_jk), central
/// differences (one-sided only at extended-grid edges).
pub fn christoffel_arrays(
    atlas: &Atlas,
    g: &ChartField,
    inv: &ChartField,
) -> Vec<Vec<ArrayD<f64>>> {
    let m = atlas.dim;
    let mut out = Vec::with_capacity(atlas.n_charts());
    for (k, chart) in atlas.charts.iter().enumerate() {
        let grid = &chart.grid;
        // dg[l][i*m + j] = d_l g_ij
        let dg: Vec<Vec<ArrayD<f64>>> = (0..m)
            .map(|l| {
                (0..m * m)
                    .map(|c| deriv1(grid, &g.comps[k][c], l))
                    .collect()
            })
            .collect();
        let mut gamma_k: Vec<ArrayD<f64>> = Vec::with_capacity(m * m * m);
        for i in 0..m {
            for j in 0..m {
                for kk in 0..m {
                    let mut acc = grid.zeros();
                    for l in 0..m {
                        // d_j g_lk + d_k g_lj - d_l g_jk
                        let mut term = dg[j][l * m + kk].clone();
                        term += &dg[kk][l * m + j];
                        term -= &dg[l][j * m + kk];
                        term *= 0.5;
                        term *= &inv.comps[k][i * m + l];
                        acc += &term;
                    }
                    gamma_k.push(acc);
                }
            }
        }
        out.push(gamma_k);
    }
    out
}

/// Scalar curvature report; serializes as a flat record (arrays skipped).
#[derive(Debug, Clone, Serialize)]
pub struct CurvatureReport {
    pub min: f64,
    pub max: f64,
    /// Volume-weighted mean over the partition-of-unity quadrature.
    pub mean: f64,
    /// Grid spacing used.
    pub h: f64,
    pub grid_shape: Vec<usize>,
    #[serde(skip)]
    pub field: ChartField,
}

/// Scalar curvature by the full Christoffel contraction
/// R = g^{jk} (d_l Gamma^l_{jk} - d_j Gamma^l_{lk}
///            + Gamma^l_{lm} Gamma^m_{jk} - Gamma^l_{jm} Gamma^m_{lk}).
pub fn scalar_curvature(atlas: &Atlas, metric: &MetricField) -> Result<CurvatureReport> {
    let m = atlas.dim;
    let mut field = ChartField::zeros(atlas, 0, 0);
    for (k, chart) in atlas.charts.iter().enumerate() {
        let grid = &chart.grid;
        let gamma = &metric.gamma[k];
        let idx3 = |i: usize, j: usize, kk: usize| i * m * m + j * m + kk;

        // trace_k = Gamma^l_{lk}
        let trace: Vec<ArrayD<f64>> = (0..m)
            .map(|kk| {
                let mut acc = grid.zeros();
                for l in 0..m {
                    acc += &gamma[idx3(l, l, kk)];
                }
                acc
            })
            .collect();

        let mut r = grid.zeros();
        for j in 0..m {
            for kk in 0..m {
                let mut term = grid.zeros();
                // d_l Gamma^l_{jk}
                for l in 0..m {
                    term += &deriv1(grid, &gamma[idx3(l, j, kk)], l);
                }
                // - d_j Gamma^l_{lk}
                term -= &deriv1(grid, &trace[kk], j);
                // + Gamma^l_{lm} Gamma^m_{jk} - Gamma^l_{jm} Gamma^m_{lk}
                for mm in 0..m {
                    term += &(&trace[mm] * &gamma[idx3(mm, j, kk)]);
                    for l in 0..m {
                        term -= &(&gamma[idx3(l, j, mm)] * &gamma[idx3(mm, l, kk)]);
                    }
                }
                term *= &metric.inv.comps[k][j * m + kk];
                r += &term;
            }
        }
        field.comps[k][0] = r;
    }

    curvature_report(atlas, metric, field)
}

/// The pure-second-derivative curvature expression
/// R = 1/2 g^{ki} g^{lj} (g_{jk,li} + g_{il,kj} - g_{jl,ki} - g_{ik,lj}).
/// Diagnostic only: it agrees with the full contraction exactly where the
/// first derivatives of g vanish (flat charts, conformal-factor critical
/// points) and omits the Gamma*Gamma terms elsewhere.
pub fn scalar_curvature_second_order_form(atlas: &Atlas, metric: &MetricField) -> ChartField {
    let m = atlas.dim;
    let mut field = ChartField::zeros(atlas, 0, 0);
    for (kc, chart) in atlas.charts.iter().enumerate() {
        let grid = &chart.grid;
        // Second derivatives of all metric components: d2g[j*m+k][l*m+i].
        let d2g: Vec<Vec<ArrayD<f64>>> = (0..m * m)
            .map(|c| {
                (0..m * m)
                    .map(|li| {
                        let (l, i) = (li / m, li % m);
                        deriv2_mixed(grid, &metric.g.comps[kc][c], l, i)
                    })
                    .collect()
            })
            .collect();
        let d2 = |j: usize, k: usize, l: usize, i: usize| &d2g[j * m + k][l * m + i];
        let mut r = grid.zeros();
        for k in 0..m {
            for i in 0..m {
                for l in 0..m {
                    for j in 0..m {
                        let mut term = d2(j, k, l, i).clone();
                        term += d2(i, l, k, j);
                        term -= d2(j, l, k, i);
                        term -= d2(i, k, l, j);
                        term *= 0.5;
                        term *= &metric.inv.comps[kc][k * m + i];
                        term *= &metric.inv.comps[kc][l * m + j];
                        r += &term;
                    }
                }
            }
        }
        field.comps[kc][0] = r;
    }
    field
}

fn curvature_report(
    atlas: &Atlas,
    metric: &MetricField,
    field: ChartField,
) -> Result<CurvatureReport> {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for (k, chart) in atlas.charts.iter().enumerate() {
        for idx in chart.masked_core_indices() {
            let v = field.comps[k][0][IxDyn(&idx)];
            min = min.min(v);
            max = max.max(v);
        }
    }
    let volume = integrate(atlas, &ChartField::constant(atlas, 1.0), metric)?;
    let mean = integrate(atlas, &field, metric)? / volume;
    Ok(CurvatureReport {
        min,
        max,
        mean,
        h: atlas.charts[0].grid.spacing[0],
        grid_shape: atlas.charts[0].grid.shape.clone(),
        field,
    })
}

/// Covariant derivative, appending one lower index (listed first among the
/// lower slots):
///   scalars:   (grad u)_i   = d_i u
///   covectors: (grad w)_ij  = d_i w_j - Gamma^k_{ij} w_k
///   vectors:   (grad X)^i_j = d_j X^i + Gamma^i_{jk} X^k
///   (0,2):     (grad T)_kij = d_k T_ij - Gamma^l_{ki} T_lj - Gamma^l_{kj} T_il
pub fn covariant_derivative(
    atlas: &Atlas,
    field: &ChartField,
    metric: &MetricField,
) -> Result<ChartField> {
    let m = atlas.dim;
    let (sigma, tau) = field.rank();
    let mut out = ChartField::zeros(atlas, sigma, tau + 1);
    let idx3 = |i: usize, j: usize, kk: usize| i * m * m + j * m + kk;
    match (sigma, tau) {
        (0, 0) => {
            for (k, chart) in atlas.charts.iter().enumerate() {
                for i in 0..m {
                    out.comps[k][i] = deriv1(&chart.grid, &field.comps[k][0], i);
                }
            }
        }
        (0, 1) => {
            for (k, chart) in atlas.charts.iter().enumerate() {
                let gamma = &metric.gamma[k];
                for i in 0..m {
                    for j in 0..m {
                        let mut acc = deriv1(&chart.grid, &field.comps[k][j], i);
                        for kk in 0..m {
                            acc -= &(&gamma[idx3(kk, i, j)] * &field.comps[k][kk]);
                        }
                        out.comps[k][i * m + j] = acc;
                    }
                }
            }
        }
        (1, 0) => {
            for (k, chart) in atlas.charts.iter().enumerate() {
                let gamma = &metric.gamma[k];
                for i in 0..m {
                    for j in 0..m {
                        let mut acc = deriv1(&chart.grid, &field.comps[k][i], j);
                        for kk in 0..m {
                            acc += &(&gamma[idx3(i, j, kk)] * &field.comps[k][kk]);
                        }
                        out.comps[k][i * m + j] = acc;
                    }
                }
            }
        }
        (0, 2) => {
            for (k, chart) in atlas.charts.iter().enumerate() {
                let gamma = &metric.gamma[k];
                for kk in 0..m {
                    for i in 0..m {
                        for j in 0..m {
                            let mut acc = deriv1(&chart.grid, &field.comps[k][i * m + j], kk);
                            for l in 0..m {
                                acc -= &(&gamma[idx3(l, kk, i)] * &field.comps[k][l * m + j]);
                                acc -= &(&gamma[idx3(l, kk, j)] * &field.comps[k][i * m + l]);
                            }
                            out.comps[k][kk * m * m + i * m + j] = acc;
                        }
                    }
                }
            }
        }
        _ => {
            return Err(Error::UnsupportedRank { sigma, tau });
        }
    }
    Ok(out)
}

/// Integral of a scalar field against the volume element:
/// sum_kappa sum_x w(x) pi_kappa^2(x) f(x) sqrt(det g(x)).
/// Overlaps are weighted solely by pi^2, never double-counted.
pub fn integrate(atlas: &Atlas, field: &ChartField, metric: &MetricField) -> Result<f64> {
    if !field.is_scalar() {
        return Err(Error::UnsupportedRank {
            sigma: field.sigma,
            tau: field.tau,
        });
    }
    let loc = atlas.localization()?;
    let mut total = 0.0;
    for (k, chart) in atlas.charts.iter().enumerate() {
        let grid = &chart.grid;
        let mut chart_sum = 0.0;
        for core in ndarray::indices(IxDyn(&grid.shape)) {
            let core_v: Vec<usize> = core.slice().to_vec();
            let ext = grid.ext_index(&core_v);
            if !chart.mask[IxDyn(&ext)] {
                continue;
            }
            let pi = loc.pi[k][IxDyn(&ext)];
            if pi == 0.0 {
                continue;
            }
            let w = grid.quad_weight(&core_v);
            chart_sum += w
                * pi
                * pi
                * field.comps[k][0][IxDyn(&ext)]
                * metric.sqrt_det[k][IxDyn(&ext)];
        }
        total += chart_sum;
    }
    Ok(total)
}
