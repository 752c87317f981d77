//! Localization system subordinate to an atlas: a family (pi_kappa)_kappa
//! whose squares form a partition of unity, together with nested plateau
//! cutoffs zeta_kappa (identically 1 on supp pi_kappa) and the auxiliary
//! varpi_kappa (identically 1 on supp zeta_kappa).
//!
//! The bumps are the standard exponential profile exp(-1/(1-t^2)) on the
//! r-shrunk patches, normalized pointwise through the chart transitions, so
//! the partition residual is machine precision by construction.

use crate::atlas::Atlas;
use crate::error::{Error, Result};
use ndarray::{ArrayD, IxDyn};

/// Plateau fractions of the chart half-width: zeta is 1 out to `ZETA_IN` and
/// supported in `ZETA_OUT`; varpi likewise. Strict nesting
/// supp(pi) = 0.7 < ZETA_IN < ZETA_OUT < VARPI_IN < VARPI_OUT < 1 makes the
/// grid-level support inclusions hold at every resolution.
const ZETA_IN: f64 = 0.72;
const ZETA_OUT: f64 = 0.82;
const VARPI_IN: f64 = 0.84;
const VARPI_OUT: f64 = 0.94;

/// Bump-sum threshold below which the shrunk patches fail to cover.
const COVER_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone)]
struct CutoffProfile {
    center: Vec<f64>,
    half_width: Vec<f64>,
    /// Radial profile (ball charts) versus per-axis product (cube charts).
    radial: bool,
    support: f64,
}

impl CutoffProfile {
    /// Exponential bump on the `support`-shrunk patch.
    fn bump(&self, x: &[f64]) -> f64 {
        if self.radial {
            let r = dist(x, &self.center) / (self.support * self.half_width[0]);
            bump1(r)
        } else {
            let mut b = 1.0;
            for d in 0..x.len() {
                let t = (x[d] - self.center[d]).abs() / (self.support * self.half_width[d]);
                b *= bump1(t);
                if b == 0.0 {
                    return 0.0;
                }
            }
            b
        }
    }

    fn plateau(&self, x: &[f64], inner: f64, outer: f64) -> f64 {
        if self.radial {
            let s = dist(x, &self.center) / self.half_width[0];
            plateau1(s, inner, outer)
        } else {
            let mut v = 1.0;
            for d in 0..x.len() {
                let s = (x[d] - self.center[d]).abs() / self.half_width[d];
                v *= plateau1(s, inner, outer);
                if v == 0.0 {
                    return 0.0;
                }
            }
            v
        }
    }
}

fn dist(x: &[f64], c: &[f64]) -> f64 {
    x.iter()
        .zip(c.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

fn bump1(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - t * t)).exp()
    }
}

/// Smooth plateau: 1 for s <= inner, 0 for s >= outer, C^infinity between.
fn plateau1(s: f64, inner: f64, outer: f64) -> f64 {
    if s <= inner {
        1.0
    } else if s >= outer {
        0.0
    } else {
        let t = (s - inner) / (outer - inner);
        let a = (-1.0 / (1.0 - t)).exp();
        let b = (-1.0 / t).exp();
        a / (a + b)
    }
}

#[derive(Debug, Clone)]
pub struct LocalizationSystem {
    /// pi_kappa sampled on each chart's extended grid.
    pub pi: Vec<ArrayD<f64>>,
    /// zeta_kappa sampled likewise; identically 1 on supp(pi_kappa).
    pub zeta: Vec<ArrayD<f64>>,
    /// varpi_kappa sampled likewise; identically 1 on supp(zeta_kappa).
    pub varpi: Vec<ArrayD<f64>>,
    /// Sup-norms of finite-difference derivatives of pi_kappa, orders 0..=2.
    pub derivative_bounds: Vec<Vec<f64>>,
    /// Measured max of |sum_kappa pi_kappa^2 - 1| over all masked samples.
    pub max_partition_residual: f64,
    profiles: Vec<CutoffProfile>,
    /// Single-chart shortcut: all cutoffs are identically one.
    uniform: bool,
}

impl LocalizationSystem {
    /// pi_kappa^2 at chart coordinates `x` of chart `kappa` (exact partition:
    /// the bump sum is re-evaluated through the transitions).
    pub fn pi_sq_at(&self, atlas: &Atlas, kappa: usize, x: &[f64]) -> f64 {
        if self.uniform {
            return 1.0;
        }
        let p = atlas.manifold_point(kappa, x);
        let mut num = 0.0;
        let mut total = 0.0;
        for eta in 0..atlas.n_charts() {
            if let Some(y) = atlas.chart_coords(eta, &p) {
                let b = self.profiles[eta].bump(&y);
                total += b;
                if eta == kappa {
                    num = b;
                }
            }
        }
        if total <= COVER_FLOOR {
            return 0.0;
        }
        num / total
    }

    pub fn pi_at(&self, atlas: &Atlas, kappa: usize, x: &[f64]) -> f64 {
        self.pi_sq_at(atlas, kappa, x).sqrt()
    }

    pub fn zeta_at(&self, kappa: usize, x: &[f64]) -> f64 {
        if self.uniform {
            return 1.0;
        }
        self.profiles[kappa].plateau(x, ZETA_IN, ZETA_OUT)
    }

    pub fn varpi_at(&self, kappa: usize, x: &[f64]) -> f64 {
        if self.uniform {
            return 1.0;
        }
        self.profiles[kappa].plateau(x, VARPI_IN, VARPI_OUT)
    }
}

/// Build the localization system for an atlas whose shrunk cover holds.
///
/// Errors with [`Error::DegenerateCover`] if the bump sum vanishes at a
/// sampled manifold point.
pub fn build_localization(atlas: &Atlas) -> Result<LocalizationSystem> {
    let n = atlas.n_charts();
    if n == 1 {
        let grid = &atlas.charts[0].grid;
        let ones = ArrayD::from_elem(IxDyn(&grid.ext_shape()), 1.0);
        return Ok(LocalizationSystem {
            pi: vec![ones.clone()],
            zeta: vec![ones.clone()],
            varpi: vec![ones],
            derivative_bounds: vec![vec![1.0, 0.0, 0.0]],
            max_partition_residual: 0.0,
            profiles: Vec::new(),
            uniform: true,
        });
    }

    let profiles: Vec<CutoffProfile> = atlas
        .charts
        .iter()
        .map(|c| {
            let radial = matches!(c.domain, crate::atlas::ParamDomain::Ball { .. });
            CutoffProfile {
                center: c.domain.center(atlas.dim),
                half_width: c.domain.half_widths(atlas.dim),
                radial,
                support: c.shrink_factor,
            }
        })
        .collect();

    let mut sys = LocalizationSystem {
        pi: Vec::new(),
        zeta: Vec::new(),
        varpi: Vec::new(),
        derivative_bounds: Vec::new(),
        max_partition_residual: 0.0,
        profiles,
        uniform: false,
    };

    // Degenerate-cover check on the masked core samples.
    for chart in &atlas.charts {
        for idx in chart.masked_core_indices() {
            let x = chart.grid.point_of_ext(&idx);
            let p = atlas.manifold_point(chart.id, &x);
            let total: f64 = (0..n)
                .filter_map(|eta| {
                    atlas
                        .chart_coords(eta, &p)
                        .map(|y| sys.profiles[eta].bump(&y))
                })
                .sum();
            if total <= COVER_FLOOR {
                return Err(Error::DegenerateCover {
                    chart: chart.id,
                    index: idx.clone(),
                    sum: total,
                });
            }
        }
    }

    let mut residual: f64 = 0.0;
    for chart in &atlas.charts {
        let grid = &chart.grid;
        let pi = grid.sample(|x| sys.pi_at(atlas, chart.id, x));
        let zeta = grid.sample(|x| sys.zeta_at(chart.id, x));
        let varpi = grid.sample(|x| sys.varpi_at(chart.id, x));
        sys.pi.push(pi);
        sys.zeta.push(zeta);
        sys.varpi.push(varpi);

        for idx in chart.masked_core_indices() {
            let x = grid.point_of_ext(&idx);
            let p = atlas.manifold_point(chart.id, &x);
            let sum: f64 = (0..n)
                .map(|eta| match atlas.chart_coords(eta, &p) {
                    Some(y) => sys.pi_sq_at(atlas, eta, &y),
                    None => 0.0,
            })
                .sum();
            residual = residual.max((sum - 1.0).abs());
        }
    }
    sys.max_partition_residual = residual;

    // (L3): finite-difference derivative sup-bounds of pi, orders 0..=2.
    for (k, chart) in atlas.charts.iter().enumerate() {
        let grid = &chart.grid;
        let a = &sys.pi[k];
        let sup0 = masked_sup(chart, a);
        let mut sup1: f64 = 0.0;
        let mut sup2: f64 = 0.0;
        for axis in 0..atlas.dim {
            let d1 = crate::grid::deriv1(grid, a, axis);
            sup1 = sup1.max(masked_sup(chart, &d1));
            for axis2 in 0..atlas.dim {
                let d2 = crate::grid::deriv1(grid, &d1, axis2);
                sup2 = sup2.max(masked_sup(chart, &d2));
            }
        }
        sys.derivative_bounds.push(vec![sup0, sup1, sup2]);
    }

    Ok(sys)
}

fn masked_sup(chart: &crate::atlas::Chart, a: &ArrayD<f64>) -> f64 {
    chart
        .masked_core_indices()
        .into_iter()
        .map(|idx| a[IxDyn(&idx)].abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bump_profile_is_supported_in_the_unit_interval() {
        assert_eq!(bump1(1.0), 0.0);
        assert_eq!(bump1(-1.2), 0.0);
        assert!(bump1(0.0) > 0.0);
        assert!(bump1(0.999) > 0.0);
    }

    #[test]
    fn plateau_hits_its_levels_exactly() {
        assert_eq!(plateau1(0.5, 0.72, 0.82), 1.0);
        assert_eq!(plateau1(0.72, 0.72, 0.82), 1.0);
        assert_eq!(plateau1(0.82, 0.72, 0.82), 0.0);
        let mid = plateau1(0.77, 0.72, 0.82);
        assert!(mid > 0.0 && mid < 1.0);
    }

    #[test]
    fn plateau_is_monotone() {
        let mut prev = 1.0;
        for i in 0..=100 {
            let s = 0.7 + 0.3 * i as f64 / 100.0;
            let v = plateau1(s, 0.72, 0.82);
            assert!(v <= prev + 1e-15);
            prev = v;
        }
    }
}
