//! Chart atlases for the builtin manifolds: overlapping cube charts on the
//! flat torus (R/2piZ)^m and the two-chart stereographic atlas of the round
//! 3-sphere. All chart maps and transition maps are closed form.
//!
//! An atlas reports the data needed to check uniform regularity at desk
//! scale: a shrinkable cover, finite multiplicity, bounded transition
//! derivatives and a metric uniformly equivalent to the Euclidean one.

use crate::error::{Error, Result};
use crate::grid::ChartGrid;
use crate::localization::{build_localization, LocalizationSystem};
use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::TAU;

/// Boundary tolerance for chart-membership decisions, in chart coordinates.
pub const MEMBERSHIP_TOL: f64 = 1e-10;

/// Shrink factor r of the uniformly-shrinkable condition. Fixed for all
/// builtin atlases; the shrunk patches must still cover the manifold.
pub const SHRINK_FACTOR: f64 = 0.7;

#[derive(Debug, Clone, PartialEq)]
pub enum ManifoldKind {
    /// Flat torus (R/2piZ)^m covered by translated cube charts.
    Torus {
        charts_per_axis: usize,
        /// Lattice cells per base cell (grid spacing is (2pi/n)/cells).
        cells_per_chart: usize,
        /// Extension of each chart beyond its base cell, in lattice cells.
        overlap_cells: usize,
    },
    /// Round 3-sphere of the given radius, two stereographic charts.
    Sphere { radius: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParamDomain {
    Cube { lo: Vec<f64>, hi: Vec<f64> },
    /// Ball centered at the chart origin, sampled on the enclosing cube grid
    /// with an interior mask.
    Ball { radius: f64 },
}

impl ParamDomain {
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        match self {
            ParamDomain::Cube { lo, hi } => x
                .iter()
                .enumerate()
                .all(|(d, &v)| v >= lo[d] - tol && v <= hi[d] + tol),
            ParamDomain::Ball { radius } => norm(x) <= radius + tol,
        }
    }

    /// Membership in the r-shrunk domain (shrunk about the center).
    pub fn contains_shrunk(&self, x: &[f64], r: f64, tol: f64) -> bool {
        match self {
            ParamDomain::Cube { lo, hi } => x.iter().enumerate().all(|(d, &v)| {
                let c = 0.5 * (lo[d] + hi[d]);
                let hw = 0.5 * (hi[d] - lo[d]);
                (v - c).abs() <= r * hw + tol
            }),
            ParamDomain::Ball { radius } => norm(x) <= r * radius + tol,
        }
    }

    pub fn center(&self, dim: usize) -> Vec<f64> {
        match self {
            ParamDomain::Cube { lo, hi } => {
                (0..dim).map(|d| 0.5 * (lo[d] + hi[d])).collect()
            }
            ParamDomain::Ball { .. } => vec![0.0; dim],
        }
    }

    pub fn half_widths(&self, dim: usize) -> Vec<f64> {
        match self {
            ParamDomain::Cube { lo, hi } => {
                (0..dim).map(|d| 0.5 * (hi[d] - lo[d])).collect()
            }
            ParamDomain::Ball { radius } => vec![*radius; dim],
        }
    }

    /// Distance from `x` to the domain boundary (negative outside).
    pub fn boundary_distance(&self, x: &[f64]) -> f64 {
        match self {
            ParamDomain::Cube { lo, hi } => x
                .iter()
                .enumerate()
                .map(|(d, &v)| (v - lo[d]).min(hi[d] - v))
                .fold(f64::INFINITY, f64::min),
            ParamDomain::Ball { radius } => radius - norm(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChartGeometry {
    /// Pullback metric is the identity.
    Flat,
    /// g_ij(x) = 4 a^2 / (1 + |x|^2)^2 delta_ij in dimensionless chart coords.
    Stereographic { radius: f64 },
}

#[derive(Debug, Clone)]
pub struct Chart {
    pub id: usize,
    pub domain: ParamDomain,
    pub grid: ChartGrid,
    pub geometry: ChartGeometry,
    pub shrink_factor: f64,
    /// Manifold-coordinate offset of the chart frame (torus charts only).
    pub torus_origin: Option<Vec<f64>>,
    /// True on core grid points inside the parameter domain. Points of the
    /// enclosing cube outside a ball domain still carry well-defined data
    /// (the chart map extends smoothly) but are excluded from reports,
    /// quadrature and norms.
    pub mask: ArrayD<bool>,
}

impl Chart {
    /// Closed-form metric g_ij at chart coordinates `x`, row-major m x m.
    pub fn metric_eval(&self, x: &[f64]) -> Vec<f64> {
        let m = self.grid.dim;
        let mut g = vec![0.0; m * m];
        match &self.geometry {
            ChartGeometry::Flat => {
                for d in 0..m {
                    g[d * m + d] = 1.0;
                }
            }
            ChartGeometry::Stereographic { radius } => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                let f = 4.0 * radius * radius / ((1.0 + r2) * (1.0 + r2));
                for d in 0..m {
                    g[d * m + d] = f;
                }
            }
        }
        g
    }

    pub fn masked_core_indices(&self) -> Vec<Vec<usize>> {
        self.grid
            .core_indices()
            .into_iter()
            .filter(|idx| self.mask[IxDyn(idx)])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransitionKind {
    /// y = x + delta with each axis adjusted by a multiple of the period so
    /// the image lands in the target chart frame.
    Translation { delta: Vec<f64>, period: f64 },
    /// y = x / |x|^2 between the two stereographic charts.
    Inversion,
}

#[derive(Debug, Clone)]
pub struct TransitionMap {
    pub from: usize,
    pub to: usize,
    pub kind: TransitionKind,
}

impl TransitionMap {
    /// Jacobian dy/dx at `x`, row-major m x m.
    pub fn jacobian(&self, x: &[f64]) -> Vec<f64> {
        let m = x.len();
        let mut j = vec![0.0; m * m];
        match &self.kind {
            TransitionKind::Translation { .. } => {
                for d in 0..m {
                    j[d * m + d] = 1.0;
                }
            }
            TransitionKind::Inversion => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                for a in 0..m {
                    for i in 0..m {
                        let delta = if a == i { 1.0 } else { 0.0 };
                        j[a * m + i] = (delta * r2 - 2.0 * x[a] * x[i]) / (r2 * r2);
                    }
                }
            }
        }
        j
    }
}

#[derive(Debug, Clone)]
pub struct Atlas {
    pub dim: usize,
    pub kind: ManifoldKind,
    pub charts: Vec<Chart>,
    /// N(kappa): charts whose domains meet chart kappa's, self included.
    pub neighbors: Vec<Vec<usize>>,
    pub transitions: Vec<TransitionMap>,
    transition_index: HashMap<(usize, usize), usize>,
    /// Reported multiplicity K: maximum number of charts covering a point.
    pub multiplicity: usize,
    pub shrink_factor: f64,
    pub localization: Option<LocalizationSystem>,
}

/// Buildable description of an atlas; round-trips through a structured-text
/// document via [`Atlas::to_document`] / [`Atlas::from_document`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "manifold", deny_unknown_fields)]
pub enum AtlasSpec {
    #[serde(rename = "torus")]
    Torus {
        m: usize,
        charts_per_axis: usize,
        overlap: f64,
        grid_n: usize,
    },
    #[serde(rename = "sphere")]
    Sphere { radius: f64, grid_n: usize },
}

impl AtlasSpec {
    pub fn build(&self) -> Result<Atlas> {
        match *self {
            AtlasSpec::Torus {
                m,
                charts_per_axis,
                overlap,
                grid_n,
            } => build_torus_atlas(m, charts_per_axis, overlap, grid_n),
            AtlasSpec::Sphere { radius, grid_n } => build_sphere_atlas(radius, grid_n),
        }
    }
}

impl Atlas {
    pub fn n_charts(&self) -> usize {
        self.charts.len()
    }

    pub fn localization(&self) -> Result<&LocalizationSystem> {
        self.localization.as_ref().ok_or(Error::MissingLocalization)
    }

    /// Manifold point of chart coordinates `x` in chart `kappa`.
    ///
    /// Torus points are coordinates modulo 2pi; sphere points are unit vectors
    /// in R^4 (dimensionless; the radius scales the metric, not the chart).
    pub fn manifold_point(&self, kappa: usize, x: &[f64]) -> Vec<f64> {
        match &self.kind {
            ManifoldKind::Torus { .. } => {
                let o = self.charts[kappa].torus_origin.as_ref().unwrap();
                x.iter()
                    .enumerate()
                    .map(|(d, &v)| (o[d] + v).rem_euclid(TAU))
                    .collect()
            }
            ManifoldKind::Sphere { .. } => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                let den = 1.0 + r2;
                let mut p: Vec<f64> = x.iter().map(|&v| 2.0 * v / den).collect();
                let last = (r2 - 1.0) / den;
                // Chart 0 projects from the north pole, chart 1 from the south.
                p.push(if kappa == 0 { last } else { -last });
                p
            }
        }
    }

    /// Chart coordinates of manifold point `p` in chart `kappa`, if `p` lies
    /// in the chart domain (with boundary tolerance).
    pub fn chart_coords(&self, kappa: usize, p: &[f64]) -> Option<Vec<f64>> {
        let x = self.chart_coords_unchecked(kappa, p)?;
        if self.charts[kappa].domain.contains(&x, MEMBERSHIP_TOL) {
            Some(x)
        } else {
            None
        }
    }

    /// Chart coordinates without the domain test (still `None` at the
    /// projection pole of a sphere chart).
    pub fn chart_coords_unchecked(&self, kappa: usize, p: &[f64]) -> Option<Vec<f64>> {
        match &self.kind {
            ManifoldKind::Torus { .. } => {
                let chart = &self.charts[kappa];
                let o = chart.torus_origin.as_ref().unwrap();
                let (lo, hi) = match &chart.domain {
                    ParamDomain::Cube { lo, hi } => (lo, hi),
                    _ => unreachable!("torus charts are cubes"),
                };
                let mut x = vec![0.0; self.dim];
                for d in 0..self.dim {
                    let mut v = (p[d] - o[d]).rem_euclid(TAU);
                    // Choose the representative inside (or nearest) the chart
                    // interval; the interval is shorter than the period, so
                    // the branch is unique.
                    if v > hi[d] + MEMBERSHIP_TOL && v - TAU >= lo[d] - MEMBERSHIP_TOL {
                        v -= TAU;
                    }
                    x[d] = v;
                }
                Some(x)
            }
            ManifoldKind::Sphere { .. } => {
                let w = if kappa == 0 { p[3] } else { -p[3] };
                let den = 1.0 - w;
                if den.abs() < 1e-14 {
                    return None;
                }
                Some((0..3).map(|d| p[d] / den).collect())
            }
        }
    }

    /// Charts whose domain contains `p`, in increasing index order.
    pub fn charts_containing(&self, p: &[f64]) -> Vec<usize> {
        (0..self.n_charts())
            .filter(|&k| self.chart_coords(k, p).is_some())
            .collect()
    }

    /// Canonical owner of a manifold point: the lowest-index containing chart.
    pub fn owner_chart(&self, p: &[f64]) -> Option<usize> {
        self.charts_containing(p).into_iter().next()
    }

    /// Donor chart for cross-chart evaluation: the chart (optionally excluding
    /// one) in which `p` sits deepest inside the domain.
    pub fn donor_chart(&self, p: &[f64], exclude: Option<usize>) -> Option<(usize, Vec<f64>)> {
        let mut best: Option<(usize, Vec<f64>, f64)> = None;
        for k in 0..self.n_charts() {
            if Some(k) == exclude {
                continue;
            }
            if let Some(x) = self.chart_coords(k, p) {
                let depth = self.charts[k].domain.boundary_distance(&x);
                if best.as_ref().map_or(true, |b| depth > b.2) {
                    best = Some((k, x, depth));
                }
            }
        }
        best.map(|(k, x, _)| (k, x))
    }

    pub fn transition(&self, from: usize, to: usize) -> Option<&TransitionMap> {
        self.transition_index.get(&(from, to)).map(|&i| &self.transitions[i])
    }

    /// Apply the transition map phi_eta o psi_kappa to chart point `x`.
    pub fn transition_apply(&self, from: usize, to: usize, x: &[f64]) -> Result<Vec<f64>> {
        if from == to {
            return Ok(x.to_vec());
        }
        let tr = self
            .transition(from, to)
            .ok_or_else(|| Error::OutOfOverlap {
                from,
                to,
                point: x.to_vec(),
            })?;
        if !self.charts[from].domain.contains(x, MEMBERSHIP_TOL) {
            return Err(Error::OutOfOverlap {
                from,
                to,
                point: x.to_vec(),
            });
        }
        let y = match &tr.kind {
            TransitionKind::Translation { delta, period } => {
                let (lo, hi) = match &self.charts[to].domain {
                    ParamDomain::Cube { lo, hi } => (lo, hi),
                    _ => unreachable!(),
                };
                let mut y = vec![0.0; self.dim];
                for d in 0..self.dim {
                    let y0 = x[d] + delta[d];
                    let mut found = None;
                    for k in -2i32..=2 {
                        let v = y0 + k as f64 * period;
                        if v >= lo[d] - MEMBERSHIP_TOL && v <= hi[d] + MEMBERSHIP_TOL {
                            found = Some(v);
                            break;
                        }
                    }
                    match found {
                        Some(v) => y[d] = v,
                        None => {
                            return Err(Error::OutOfOverlap {
                                from,
                                to,
                                point: x.to_vec(),
                            })
                        }
                    }
                }
                y
            }
            TransitionKind::Inversion => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                if r2 < 1e-28 {
                    return Err(Error::OutOfOverlap {
                        from,
                        to,
                        point: x.to_vec(),
                    });
                }
                x.iter().map(|&v| v / r2).collect()
            }
        };
        if !self.charts[to].domain.contains(&y, MEMBERSHIP_TOL) {
            return Err(Error::OutOfOverlap {
                from,
                to,
                point: x.to_vec(),
            });
        }
        Ok(y)
    }

    /// True if `x` lies in the valid region of the `from -> to` transition.
    pub fn in_overlap(&self, from: usize, to: usize, x: &[f64]) -> bool {
        self.transition_apply(from, to, x).is_ok()
    }

    /// All masked core grid points of all charts, as manifold points.
    pub fn sample_points(&self) -> Vec<Vec<f64>> {
        let mut pts = Vec::new();
        for chart in &self.charts {
            for idx in chart.masked_core_indices() {
                let x = chart.grid.point_of_ext(&idx);
                pts.push(self.manifold_point(chart.id, &x));
            }
        }
        pts
    }

    /// Structured-text description (round-trips exactly through
    /// [`Atlas::from_document`]).
    pub fn to_document(&self) -> String {
        toml::to_string(&self.to_spec()).expect("atlas spec serializes")
    }

    pub fn from_document(doc: &str) -> Result<Atlas> {
        let spec: AtlasSpec = toml::from_str(doc)
            .map_err(|e| Error::InvalidParameter(format!("atlas document: {e}")))?;
        spec.build()
    }

    pub fn to_spec(&self) -> AtlasSpec {
        match &self.kind {
            ManifoldKind::Torus {
                charts_per_axis,
                cells_per_chart,
                overlap_cells,
            } => AtlasSpec::Torus {
                m: self.dim,
                charts_per_axis: *charts_per_axis,
                overlap: if *charts_per_axis == 1 {
                    0.0
                } else {
                    *overlap_cells as f64 / *cells_per_chart as f64
                },
                grid_n: self.charts[0].grid.shape[0],
            },
            ManifoldKind::Sphere { radius } => AtlasSpec::Sphere {
                radius: *radius,
                grid_n: self.charts[0].grid.shape[0],
            },
        }
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Cover the flat torus (R/2piZ)^m with `charts_per_axis`^m overlapping cube
/// charts whose transitions are pure translations. The requested overlap
/// fraction is snapped to the grid lattice so that all chart grids align with
/// one global lattice; transported grid values are then exact index shifts.
pub fn build_torus_atlas(
    m: usize,
    charts_per_axis: usize,
    overlap: f64,
    grid_n: usize,
) -> Result<Atlas> {
    if m < 3 {
        return Err(Error::InvalidParameter(format!(
            "torus dimension m = {m}; the flow theory needs m >= 3"
        )));
    }
    if charts_per_axis == 0 {
        return Err(Error::InvalidParameter("charts_per_axis must be >= 1".into()));
    }
    if !(0.0..0.5).contains(&overlap) {
        return Err(Error::InvalidParameter(format!(
            "overlap fraction {overlap} outside [0, 0.5)"
        )));
    }
    if grid_n < 8 {
        return Err(Error::InvalidParameter(format!(
            "grid_n = {grid_n} too coarse; need at least 8 points per axis"
        )));
    }

    let n = charts_per_axis;
    let kind;
    let mut charts = Vec::new();

    if n == 1 {
        // One periodic chart covering the whole torus.
        kind = ManifoldKind::Torus {
            charts_per_axis: 1,
            cells_per_chart: grid_n,
            overlap_cells: 0,
        };
        let h = TAU / grid_n as f64;
        let grid = ChartGrid::new_periodic(vec![grid_n; m], vec![0.0; m], vec![h; m]);
        let mask = ArrayD::from_elem(IxDyn(&grid.ext_shape()), true);
        charts.push(Chart {
            id: 0,
            domain: ParamDomain::Cube {
                lo: vec![0.0; m],
                hi: vec![TAU; m],
            },
            grid,
            geometry: ChartGeometry::Flat,
            shrink_factor: SHRINK_FACTOR,
            torus_origin: Some(vec![0.0; m]),
            mask,
        });
    } else {
        // Snap the overlap to whole lattice cells: q cells per base cell and
        // p extension cells per side, with q + 2p + 1 = grid_n.
        let (q, p) = if overlap == 0.0 {
            (grid_n - 1, 0usize)
        } else {
            let q0 = (grid_n - 1) as f64 / (1.0 + 2.0 * overlap);
            let p = ((overlap * q0).round() as usize).max(1);
            if 2 * p + 1 >= grid_n {
                return Err(Error::InvalidParameter(format!(
                    "grid_n = {grid_n} too coarse for overlap {overlap}"
                )));
            }
            (grid_n - 1 - 2 * p, p)
        };
        if overlap > 0.0 && 2 * p + 1 < 8 {
            return Err(Error::InvalidParameter(format!(
                "grid too coarse: only {} points across the chart overlap; need at least 8",
                2 * p + 1
            )));
        }
        kind = ManifoldKind::Torus {
            charts_per_axis: n,
            cells_per_chart: q,
            overlap_cells: p,
        };
        let cell = TAU / n as f64;
        let h = cell / q as f64;
        let side = (grid_n - 1) as f64 * h;

        let n_charts = n.pow(m as u32);
        for id in 0..n_charts {
            // Decode the cell multi-index lexicographically.
            let mut rem = id;
            let mut cell_idx = vec![0usize; m];
            for d in (0..m).rev() {
                cell_idx[d] = rem % n;
                rem /= n;
            }
            let origin: Vec<f64> = cell_idx
                .iter()
                .map(|&c| c as f64 * cell - p as f64 * h)
                .collect();
            let grid = ChartGrid::new_with_halo(vec![grid_n; m], vec![0.0; m], vec![h; m]);
            let mask = ArrayD::from_elem(IxDyn(&grid.ext_shape()), false);
            let mut mask = mask;
            for idx in grid.core_indices() {
                mask[IxDyn(&idx)] = true;
            }
            charts.push(Chart {
                id,
                domain: ParamDomain::Cube {
                    lo: vec![0.0; m],
                    hi: vec![side; m],
                },
                grid,
                geometry: ChartGeometry::Flat,
                shrink_factor: SHRINK_FACTOR,
                torus_origin: Some(origin),
                mask,
            });
        }
    }

    finish_atlas(m, kind, charts)
}

/// Two-chart stereographic atlas of the round 3-sphere of the given radius.
/// Each chart is the ball of (dimensionless) radius 2 about a pole, sampled
/// on the enclosing cube grid with an interior mask; the 0.7-shrunk balls
/// still cover. The transition is the inversion x -> x/|x|^2 on the annular
/// overlap.
pub fn build_sphere_atlas(radius: f64, grid_n: usize) -> Result<Atlas> {
    if radius <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "sphere radius must be positive, got {radius}"
        )));
    }
    if grid_n < 16 {
        return Err(Error::InvalidParameter(format!(
            "grid_n = {grid_n} below the minimum of 16 for the sphere atlas"
        )));
    }
    let m = 3;
    let chart_radius = 2.0;
    let h = 2.0 * chart_radius / (grid_n - 1) as f64;
    let mut charts = Vec::new();
    for id in 0..2 {
        let grid = ChartGrid::new_with_halo(
            vec![grid_n; m],
            vec![-chart_radius; m],
            vec![h; m],
        );
        let mut mask = ArrayD::from_elem(IxDyn(&grid.ext_shape()), false);
        for idx in grid.core_indices() {
            let x = grid.point_of_ext(&idx);
            mask[IxDyn(&idx)] = norm(&x) <= chart_radius + MEMBERSHIP_TOL;
        }
        charts.push(Chart {
            id,
            domain: ParamDomain::Ball {
                radius: chart_radius,
            },
            grid,
            geometry: ChartGeometry::Stereographic { radius },
            shrink_factor: SHRINK_FACTOR,
            torus_origin: None,
            mask,
        });
    }
    finish_atlas(m, ManifoldKind::Sphere { radius }, charts)
}

/// Shared tail of the builders: neighbor sets, transitions, multiplicity,
/// localization.
fn finish_atlas(m: usize, kind: ManifoldKind, charts: Vec<Chart>) -> Result<Atlas> {
    let n_charts = charts.len();
    let mut transitions = Vec::new();
    let mut transition_index = HashMap::new();
    let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); n_charts];

    match &kind {
        ManifoldKind::Torus {
            charts_per_axis, ..
        } => {
            let n = *charts_per_axis;
            if n == 1 {
                neighbors[0].push(0);
            } else {
                let side = match &charts[0].domain {
                    ParamDomain::Cube { hi, .. } => hi[0],
                    _ => unreachable!(),
                };
                for a in 0..n_charts {
                    for b in 0..n_charts {
                        if a == b {
                            neighbors[a].push(b);
                            continue;
                        }
                        let oa = charts[a].torus_origin.as_ref().unwrap();
                        let ob = charts[b].torus_origin.as_ref().unwrap();
                        // Axis intervals [o, o+side] overlap mod 2pi.
                        let overlap_all = (0..m).all(|d| {
                            let diff = (oa[d] - ob[d]).rem_euclid(TAU);
                            let gap = diff.min(TAU - diff);
                            gap < side - MEMBERSHIP_TOL
                        });
                        if overlap_all {
                            neighbors[a].push(b);
                            let delta: Vec<f64> =
                                (0..m).map(|d| oa[d] - ob[d]).collect();
                            transition_index.insert((a, b), transitions.len());
                            transitions.push(TransitionMap {
                                from: a,
                                to: b,
                                kind: TransitionKind::Translation {
                                    delta,
                                    period: TAU,
                                },
                            });
                        }
                    }
                }
            }
        }
        ManifoldKind::Sphere { .. } => {
            neighbors[0] = vec![0, 1];
            neighbors[1] = vec![0, 1];
            for (a, b) in [(0usize, 1usize), (1, 0)] {
                transition_index.insert((a, b), transitions.len());
                transitions.push(TransitionMap {
                    from: a,
                    to: b,
                    kind: TransitionKind::Inversion,
                });
            }
        }
    }

    let mut atlas = Atlas {
        dim: m,
        kind,
        charts,
        neighbors,
        transitions,
        transition_index,
        multiplicity: 0,
        shrink_factor: SHRINK_FACTOR,
        localization: None,
    };

    // Measure multiplicity over the canonical sample set.
    let mut multiplicity = 0usize;
    for p in atlas.sample_points() {
        multiplicity = multiplicity.max(atlas.charts_containing(&p).len());
    }
    atlas.multiplicity = multiplicity;

    // The localization system needs the shrunk cover; leave it out (and let
    // dependent operations fail) when the cover check does not hold.
    if shrunk_cover_holds(&atlas) {
        let loc = build_localization(&atlas)?;
        atlas.localization = Some(loc);
    }
    Ok(atlas)
}

/// Check that the r-shrunk chart images cover every sampled manifold point.
pub fn shrunk_cover_holds(atlas: &Atlas) -> bool {
    if atlas.n_charts() == 1 {
        // The periodic chart covers the whole manifold by construction.
        return true;
    }
    atlas.sample_points().iter().all(|p| {
        (0..atlas.n_charts()).any(|k| match atlas.chart_coords(k, p) {
            Some(x) => atlas.charts[k].domain.contains_shrunk(
                &x,
                atlas.shrink_factor,
                MEMBERSHIP_TOL,
            ),
            None => false,
        })
    })
}

/// Desk-scale verification of the uniform-regularity conditions.
#[derive(Debug, Clone, Serialize)]
pub struct RegularityReport {
    pub dim: usize,
    pub n_charts: usize,
    pub k_max: usize,
    /// Cover by the r-shrunk patches.
    pub shrinkable: bool,
    pub multiplicity_reported: usize,
    pub multiplicity_measured: usize,
    pub finite_multiplicity: bool,
    /// |N(kappa)| <= K for every chart.
    pub neighbor_bound: bool,
    /// Per-order bounds: c(k) = max over transitions of
    /// max_{|alpha| = k} sup |d^alpha (phi_eta o psi_kappa)|.
    pub transition_bounds: Vec<f64>,
    pub transitions_bounded: bool,
    /// Metric equivalence constant c: eigenvalues of g lie in [1/c, c].
    pub metric_equivalence: f64,
    pub metric_eigen_min: f64,
    pub metric_eigen_max: f64,
    /// Per-order metric bounds: max_{|alpha| = k} sup |d^alpha (psi* g)|.
    pub metric_bounds: Vec<f64>,
    pub metric_bounded: bool,
    pub pass: bool,
}

pub fn validate_uniform_regularity(atlas: &Atlas, k_max: usize) -> RegularityReport {
    let k_max = k_max.min(4);
    let shrinkable = shrunk_cover_holds(atlas);

    let mut multiplicity_measured = 0usize;
    for p in atlas.sample_points() {
        multiplicity_measured = multiplicity_measured.max(atlas.charts_containing(&p).len());
    }
    let finite_multiplicity = multiplicity_measured == atlas.multiplicity;
    let neighbor_bound = atlas
        .neighbors
        .iter()
        .all(|nb| nb.len() <= atlas.multiplicity);

    // (R2): derivative bounds of the transition maps, by nested central
    // differences of the closed-form maps at sampled overlap points.
    let mut transition_bounds = vec![0.0f64; k_max + 1];
    for tr in &atlas.transitions {
        let chart = &atlas.charts[tr.from];
        let samples = overlap_samples(atlas, tr.from, tr.to, 64);
        for x in &samples {
            if let Ok(y) = atlas.transition_apply(tr.from, tr.to, x) {
                let sup = y.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
                transition_bounds[0] = transition_bounds[0].max(sup);
            }
            for alpha in multi_indices(atlas.dim, k_max) {
                let order: usize = alpha.iter().sum();
                let v = transition_derivative_sup(atlas, tr, x, &alpha, &chart.grid);
                transition_bounds[order] = transition_bounds[order].max(v);
            }
        }
    }
    let transitions_bounded = transition_bounds.iter().all(|v| v.is_finite());

    // (R3)/(R4): metric eigenvalue range and derivative bounds on chart grids.
    let mut eig_min = f64::INFINITY;
    let mut eig_max: f64 = 0.0;
    let mut metric_bounds = vec![0.0f64; k_max + 1];
    for chart in &atlas.charts {
        let m = atlas.dim;
        // Sample the metric components on the extended grid.
        let comps: Vec<ArrayD<f64>> = (0..m * m)
            .map(|c| chart.grid.sample(|x| chart.metric_eval(x)[c]))
            .collect();
        for idx in chart.masked_core_indices() {
            let mut gm = nalgebra::DMatrix::zeros(m, m);
            for i in 0..m {
                for j in 0..m {
                    gm[(i, j)] = comps[i * m + j][IxDyn(&idx)];
                }
            }
            let eigs = gm.symmetric_eigenvalues();
            for &e in eigs.iter() {
                eig_min = eig_min.min(e);
                eig_max = eig_max.max(e);
            }
        }
        // ||psi* g||_{k,infty}: max over components and |alpha| <= k.
        for comp in &comps {
            let sup = masked_sup(chart, comp);
            metric_bounds[0] = metric_bounds[0].max(sup);
            let mut stack = vec![comp.clone()];
            for k in 1..=k_max {
                let mut next = Vec::new();
                for a in &stack {
                    for axis in 0..m {
                        let d = crate::grid::deriv1(&chart.grid, a, axis);
                        metric_bounds[k] = metric_bounds[k].max(masked_sup(chart, &d));
                        next.push(d);
                    }
                }
                stack = next;
            }
        }
    }
    let metric_equivalence = eig_max.max(1.0 / eig_min);
    let metric_bounded = metric_bounds.iter().all(|v| v.is_finite());

    let pass = shrinkable
        && finite_multiplicity
        && neighbor_bound
        && transitions_bounded
        && metric_bounded
        && metric_equivalence.is_finite();

    RegularityReport {
        dim: atlas.dim,
        n_charts: atlas.n_charts(),
        k_max,
        shrinkable,
        multiplicity_reported: atlas.multiplicity,
        multiplicity_measured,
        finite_multiplicity,
        neighbor_bound,
        transition_bounds,
        transitions_bounded,
        metric_equivalence,
        metric_eigen_min: eig_min,
        metric_eigen_max: eig_max,
        metric_bounds,
        metric_bounded,
        pass,
    }
}

/// Up to `want` masked grid points of `from` lying in the overlap with `to`.
pub fn overlap_samples(atlas: &Atlas, from: usize, to: usize, want: usize) -> Vec<Vec<f64>> {
    let chart = &atlas.charts[from];
    let all: Vec<Vec<f64>> = chart
        .masked_core_indices()
        .into_iter()
        .map(|idx| chart.grid.point_of_ext(&idx))
        .filter(|x| atlas.in_overlap(from, to, x))
        .collect();
    if all.len() <= want {
        return all;
    }
    let stride = all.len() / want;
    all.into_iter().step_by(stride.max(1)).take(want).collect()
}

fn masked_sup(chart: &Chart, a: &ArrayD<f64>) -> f64 {
    chart
        .masked_core_indices()
        .into_iter()
        .map(|idx| a[IxDyn(&idx)].abs())
        .fold(0.0, f64::max)
}

/// All multi-indices alpha in N_0^m with 1 <= |alpha| <= k_max.
pub fn multi_indices(m: usize, k_max: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = vec![0usize; m];
    fn rec(d: usize, m: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if d == m {
            if cur.iter().sum::<usize>() >= 1 {
                out.push(cur.clone());
            }
            return;
        }
        for v in 0..=left {
            cur[d] = v;
            rec(d + 1, m, left - v, cur, out);
        }
        cur[d] = 0;
    }
    rec(0, m, k_max, &mut cur, &mut out);
    out
}

/// Sup over components of the nested-central-difference estimate of
/// d^alpha of the transition map at `x`.
fn transition_derivative_sup(
    atlas: &Atlas,
    tr: &TransitionMap,
    x: &[f64],
    alpha: &[usize],
    grid: &ChartGrid,
) -> f64 {
    let m = atlas.dim;
    let h_fd: Vec<f64> = grid.spacing.iter().map(|&h| h.min(2e-2)).collect();
    let mut memo: HashMap<Vec<i32>, Option<Vec<f64>>> = HashMap::new();
    let mut eval = |off: &[i32]| -> Option<Vec<f64>> {
        if let Some(v) = memo.get(off) {
            return v.clone();
        }
        let pt: Vec<f64> = (0..m).map(|d| x[d] + off[d] as f64 * h_fd[d]).collect();
        let v = raw_forward(tr, &pt);
        memo.insert(off.to_vec(), v.clone());
        v
    };

    fn diff(
        alpha: &[usize],
        off: &mut Vec<i32>,
        h: &[f64],
        eval: &mut dyn FnMut(&[i32]) -> Option<Vec<f64>>,
    ) -> Option<Vec<f64>> {
        match alpha.iter().position(|&a| a > 0) {
            None => eval(off),
            Some(d) => {
                let mut lower = alpha.to_vec();
                lower[d] -= 1;
                off[d] += 1;
                let plus = diff(&lower, off, h, eval)?;
                off[d] -= 2;
                let minus = diff(&lower, off, h, eval)?;
                off[d] += 1;
                Some(
                    plus.iter()
                        .zip(minus.iter())
                        .map(|(p, q)| (p - q) / (2.0 * h[d]))
                        .collect(),
                )
            }
        }
    }

    let mut off = vec![0i32; m];
    match diff(alpha, &mut off, &h_fd, &mut |o| eval(o)) {
        Some(v) => v.iter().fold(0.0f64, |acc, &c| acc.max(c.abs())),
        None => 0.0,
    }
}

/// Transition map evaluated without domain checks (used by the derivative
/// sampler, whose stencil may poke slightly outside the overlap).
fn raw_forward(tr: &TransitionMap, x: &[f64]) -> Option<Vec<f64>> {
    match &tr.kind {
        TransitionKind::Translation { delta, .. } => {
            Some(x.iter().zip(delta.iter()).map(|(a, b)| a + b).collect())
        }
        TransitionKind::Inversion => {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            if r2 < 1e-12 {
                None
            } else {
                Some(x.iter().map(|&v| v / r2).collect())
            }
        }
    }
}
