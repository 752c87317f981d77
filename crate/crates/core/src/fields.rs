//! Global tensor fields stored as per-chart grid arrays, the
//! coretraction/retraction transfer pair, discrete Hoelder norm estimators,
//! and pointwise power maps.
//!
//! A field of rank (sigma, tau) keeps m^(sigma+tau) component arrays per
//! chart, indices ordered lexicographically. Consistency on overlaps means
//! components transported by the transition Jacobians agree up to the
//! finite-difference/interpolation tolerance.

use crate::atlas::Atlas;
use crate::error::{Error, Result};
use crate::grid::{deriv1, ChartGrid};
use ndarray::{ArrayD, Dimension, IxDyn};
use serde::Serialize;

#[derive(Debug, Clone)]
pub struct ChartField {
    pub sigma: usize,
    pub tau: usize,
    /// comps[chart][component], extended-grid arrays.
    pub comps: Vec<Vec<ArrayD<f64>>>,
}

impl ChartField {
    pub fn rank(&self) -> (usize, usize) {
        (self.sigma, self.tau)
    }

    pub fn n_comps(&self) -> usize {
        self.comps.first().map_or(0, |c| c.len())
    }

    pub fn is_scalar(&self) -> bool {
        self.sigma == 0 && self.tau == 0
    }

    pub fn zeros(atlas: &Atlas, sigma: usize, tau: usize) -> Self {
        let m = atlas.dim;
        let nc = m.pow((sigma + tau) as u32);
        let comps = atlas
            .charts
            .iter()
            .map(|c| (0..nc).map(|_| c.grid.zeros()).collect())
            .collect();
        ChartField { sigma, tau, comps }
    }

    pub fn constant(atlas: &Atlas, value: f64) -> Self {
        let mut f = Self::zeros(atlas, 0, 0);
        for chart in &mut f.comps {
            chart[0].fill(value);
        }
        f
    }

    /// Scalar field sampled from a chart-coordinate function.
    pub fn scalar_from_chart_fn(atlas: &Atlas, f: impl Fn(usize, &[f64]) -> f64) -> Self {
        let comps = atlas
            .charts
            .iter()
            .map(|c| vec![c.grid.sample(|x| f(c.id, x))])
            .collect();
        ChartField {
            sigma: 0,
            tau: 0,
            comps,
        }
    }

    /// Scalar field sampled from a function of the manifold point; consistent
    /// across charts by construction.
    pub fn scalar_from_manifold_fn(atlas: &Atlas, f: impl Fn(&[f64]) -> f64) -> Self {
        Self::scalar_from_chart_fn(atlas, |k, x| f(&atlas.manifold_point(k, x)))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let comps = self
            .comps
            .iter()
            .map(|chart| chart.iter().map(|a| a.mapv(&f)).collect())
            .collect();
        ChartField {
            sigma: self.sigma,
            tau: self.tau,
            comps,
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        let comps = self
            .comps
            .iter()
            .zip(other.comps.iter())
            .map(|(ca, cb)| {
                ca.iter()
                    .zip(cb.iter())
                    .map(|(a, b)| {
                        let mut out = a.clone();
                        out.zip_mut_with(b, |x, &y| *x = f(*x, y));
                        out
                    })
                    .collect()
            })
            .collect();
        ChartField {
            sigma: self.sigma,
            tau: self.tau,
            comps,
        }
    }

    pub fn scale(&self, a: f64) -> Self {
        self.map(|v| a * v)
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    /// Sup of |components| over masked core points of all charts.
    pub fn sup_norm(&self, atlas: &Atlas) -> f64 {
        let mut sup: f64 = 0.0;
        for (k, chart) in atlas.charts.iter().enumerate() {
            for idx in chart.masked_core_indices() {
                for comp in &self.comps[k] {
                    sup = sup.max(comp[IxDyn(&idx)].abs());
                }
            }
        }
        sup
    }

    /// Minimum of a scalar field over masked core points of all charts.
    pub fn min_value(&self, atlas: &Atlas) -> f64 {
        self.argmin(atlas).2
    }

    /// Location of the scalar minimum: (chart, core index, value).
    pub fn argmin(&self, atlas: &Atlas) -> (usize, Vec<usize>, f64) {
        let mut best = (0, Vec::new(), f64::INFINITY);
        for (k, chart) in atlas.charts.iter().enumerate() {
            for idx in chart.masked_core_indices() {
                let v = self.comps[k][0][IxDyn(&idx)];
                if v < best.2 {
                    best = (k, idx, v);
                }
            }
        }
        best
    }

    /// Multilinear evaluation of one component at chart coordinates.
    pub fn eval_in_chart(&self, atlas: &Atlas, kappa: usize, x: &[f64], comp: usize) -> f64 {
        atlas.charts[kappa].grid.interp(&self.comps[kappa][comp], x)
    }

    /// Transport all components of this field at chart-eta coordinates `y`
    /// into the frame of chart `kappa` at `x` (both representing the same
    /// manifold point). Rank (0,0) is a plain interpolation.
    pub fn transported_comps(
        &self,
        atlas: &Atlas,
        kappa: usize,
        x: &[f64],
        eta: usize,
        y: &[f64],
    ) -> Vec<f64> {
        let m = atlas.dim;
        let nc = self.n_comps();
        let vals: Vec<f64> = (0..nc)
            .map(|c| self.eval_in_chart(atlas, eta, y, c))
            .collect();
        if self.sigma + self.tau == 0 || kappa == eta {
            return vals;
        }
        // J[a][i] = d y^a / d x^i for the kappa -> eta transition; the inverse
        // Jacobian equals the eta -> kappa Jacobian evaluated at y.
        let j = atlas
            .transition(kappa, eta)
            .expect("charts overlap")
            .jacobian(x);
        let jinv = atlas
            .transition(eta, kappa)
            .expect("charts overlap")
            .jacobian(y);
        let rank = self.sigma + self.tau;
        let decode = |mut c: usize| -> Vec<usize> {
            let mut slots = vec![0usize; rank];
            for r in (0..rank).rev() {
                slots[r] = c % m;
                c /= m;
            }
            slots
        };
        let mut out = vec![0.0; nc];
        for (ci, out_c) in out.iter_mut().enumerate() {
            let target = decode(ci);
            let mut acc = 0.0;
            for (si, &val) in vals.iter().enumerate() {
                if val == 0.0 {
                    continue;
                }
                let source = decode(si);
                let mut w = 1.0;
                for r in 0..rank {
                    w *= if r < self.sigma {
                        // upper index transforms by dx^i/dy^a
                        jinv[target[r] * m + source[r]]
                    } else {
                        // lower index transforms by dy^a/dx^i
                        j[source[r] * m + target[r]]
                    };
                    if w == 0.0 {
                        break;
                    }
                }
                acc += w * val;
            }
            *out_c = acc;
        }
        out
    }

    /// Fill halo values from neighbouring charts (no-op on periodic charts).
    /// Core values are left untouched.
    pub fn exchange_halos(&mut self, atlas: &Atlas) {
        for k in 0..atlas.n_charts() {
            let chart = &atlas.charts[k];
            let grid = &chart.grid;
            if grid.periodic || grid.halo == 0 {
                continue;
            }
            let ext = grid.ext_shape();
            let mut updates: Vec<(Vec<usize>, Vec<f64>)> = Vec::new();
            for idx in ndarray::indices(IxDyn(&ext)) {
                let iv: Vec<usize> = idx.slice().to_vec();
                let is_core = iv
                    .iter()
                    .enumerate()
                    .all(|(d, &i)| i >= grid.halo && i < grid.halo + grid.shape[d]);
                if is_core {
                    continue;
                }
                let x = grid.point_of_ext(&iv);
                let p = atlas.manifold_point(k, &x);
                if let Some((eta, y)) = atlas.donor_chart(&p, Some(k)) {
                    let vals = self.transported_comps(atlas, k, &x, eta, &y);
                    updates.push((iv, vals));
                }
            }
            for (iv, vals) in updates {
                for (c, v) in vals.into_iter().enumerate() {
                    self.comps[k][c][IxDyn(&iv)] = v;
                }
            }
        }
    }

    /// Max overlap defect: the difference between a chart's own values and
    /// the Jacobian-transported values of each neighbour, over all masked
    /// core points in the overlaps.
    pub fn overlap_defect(&self, atlas: &Atlas) -> f64 {
        let mut worst: f64 = 0.0;
        for (k, chart) in atlas.charts.iter().enumerate() {
            for &eta in &atlas.neighbors[k] {
                if eta == k {
                    continue;
                }
                for idx in chart.masked_core_indices() {
                    let x = chart.grid.point_of_ext(&idx);
                    if let Ok(y) = atlas.transition_apply(k, eta, &x) {
                        let theirs = self.transported_comps(atlas, k, &x, eta, &y);
                        for (c, &tv) in theirs.iter().enumerate() {
                            let own = self.comps[k][c][IxDyn(&idx)];
                            worst = worst.max((own - tv).abs());
                        }
                    }
                }
            }
        }
        worst
    }
}

/// Coretraction R^c: per-chart localized pieces psi*_kappa(pi_kappa u),
/// supported in supp(pi_kappa) and zero elsewhere.
pub fn coretract(atlas: &Atlas, field: &ChartField) -> Result<Vec<Vec<ArrayD<f64>>>> {
    let loc = atlas.localization()?;
    let mut pieces = Vec::with_capacity(atlas.n_charts());
    for (k, chart_comps) in field.comps.iter().enumerate() {
        let pi = &loc.pi[k];
        pieces.push(chart_comps.iter().map(|a| a * pi).collect::<Vec<_>>());
    }
    Ok(pieces)
}

/// Retraction R: reassemble per-chart pieces into a global field,
/// field(p) = sum_kappa pi_kappa(p) * v_kappa(phi_kappa(p)).
pub fn retract(
    atlas: &Atlas,
    pieces: &[Vec<ArrayD<f64>>],
    sigma: usize,
    tau: usize,
) -> Result<ChartField> {
    let loc = atlas.localization()?;
    let mut out = ChartField::zeros(atlas, sigma, tau);
    if atlas.n_charts() == 1 {
        // pi = 1: the retraction is the identity on the single piece.
        out.comps[0] = pieces[0].clone();
        return Ok(out);
    }
    let nc = out.comps[0].len();
    let piece_field = ChartField {
        sigma,
        tau,
        comps: pieces.to_vec(),
    };
    for k in 0..atlas.n_charts() {
        let chart = &atlas.charts[k];
        let grid = &chart.grid;
        for idx in grid.core_indices() {
            let x = grid.point_of_ext(&idx);
            let p = atlas.manifold_point(k, &x);
            let mut acc = vec![0.0; nc];
            for eta in 0..atlas.n_charts() {
                if let Some(y) = atlas.chart_coords(eta, &p) {
                    let pi = loc.pi_at(atlas, eta, &y);
                    if pi == 0.0 {
                        continue;
                    }
                    let vals = piece_field.transported_comps(atlas, k, &x, eta, &y);
                    for (c, v) in vals.into_iter().enumerate() {
                        acc[c] += pi * v;
                    }
                }
            }
            for c in 0..nc {
                out.comps[k][c][IxDyn(&idx)] = acc[c];
            }
        }
    }
    out.exchange_halos(atlas);
    Ok(out)
}

/// The canonical consistency projection R o R^c. Identity on consistent
/// fields up to interpolation error; exact on the single-chart torus.
pub fn blend(atlas: &Atlas, field: &ChartField) -> Result<ChartField> {
    let pieces = coretract(atlas, field)?;
    retract(atlas, &pieces, field.sigma, field.tau)
}

/// Discrete Hoelder-norm estimate of a localized scalar field.
#[derive(Debug, Clone, Serialize)]
pub struct HolderEstimate {
    pub s: f64,
    /// Global estimate: sup over charts of the localized chart norms.
    pub value: f64,
    pub per_chart: Vec<f64>,
    /// Sup-norms of finite-difference derivatives, orders 0..=floor(s).
    pub derivative_sups: Vec<f64>,
    /// Seminorm of the floor(s)-order derivatives at the largest delta.
    pub seminorm: f64,
    /// (delta, seminorm at delta), in the caller's (decreasing) order.
    pub delta_table: Vec<(f64, f64)>,
}

fn holder_norm_localized(
    atlas: &Atlas,
    field: &ChartField,
    s: f64,
    deltas: &[f64],
    square_cutoff: bool,
) -> Result<HolderEstimate> {
    if !field.is_scalar() {
        return Err(Error::UnsupportedRank {
            sigma: field.sigma,
            tau: field.tau,
        });
    }
    if !(0.0..3.0).contains(&s) {
        return Err(Error::InvalidExponent(s));
    }
    if deltas.is_empty() {
        return Err(Error::InvalidOffsets("empty delta list".into()));
    }
    if deltas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidOffsets(
            "delta list must be strictly decreasing".into(),
        ));
    }
    let loc = atlas.localization()?;
    let k_ord = s.floor() as usize;
    let theta = s - k_ord as f64;

    let h_max = atlas
        .charts
        .iter()
        .flat_map(|c| c.grid.spacing.iter().copied())
        .fold(0.0f64, f64::max);
    let delta_min = *deltas.last().unwrap();
    if delta_min < 2.0 * h_max {
        return Err(Error::InvalidOffsets(format!(
            "smallest delta {delta_min} is under twice the grid spacing {h_max}"
        )));
    }

    let mut per_chart = Vec::with_capacity(atlas.n_charts());
    let mut derivative_sups = vec![0.0f64; k_ord + 1];
    let mut seminorm_global: f64 = 0.0;
    let mut table_global = vec![0.0f64; deltas.len()];

    for (k, chart) in atlas.charts.iter().enumerate() {
        let grid = &chart.grid;
        let cutoff = if square_cutoff {
            &loc.pi[k] * &loc.pi[k]
        } else {
            loc.pi[k].clone()
        };
        let piece = &field.comps[k][0] * &cutoff;

        // Derivatives up to order floor(s); the last stack holds the top order.
        let mut norm_k: f64 = 0.0;
        let mut stack = vec![piece.clone()];
        for ord in 0..=k_ord {
            let sup = stack
                .iter()
                .map(|a| masked_sup(chart, a))
                .fold(0.0f64, f64::max);
            derivative_sups[ord] = derivative_sups[ord].max(sup);
            norm_k = norm_k.max(sup);
            if ord < k_ord {
                let mut next = Vec::new();
                for a in &stack {
                    for axis in 0..atlas.dim {
                        next.push(deriv1(grid, a, axis));
                    }
                }
                stack = next;
            }
        }

        // Seminorm table of the top derivatives over grid-point pairs. One
        // pass over the offsets of the largest delta serves every entry.
        let mut chart_table = vec![0.0f64; deltas.len()];
        for a in &stack {
            let table = seminorm_table(grid, chart, a, theta, deltas);
            for (t, v) in chart_table.iter_mut().zip(table) {
                *t = (*t).max(v);
            }
        }
        for (t, &v) in table_global.iter_mut().zip(chart_table.iter()) {
            *t = (*t).max(v);
        }
        let sn_top = chart_table.first().copied().unwrap_or(0.0);
        seminorm_global = seminorm_global.max(sn_top);
        per_chart.push(norm_k + if theta > 0.0 { sn_top } else { 0.0 });
    }

    let value = per_chart.iter().fold(0.0f64, |a, &b| a.max(b));
    Ok(HolderEstimate {
        s,
        value,
        per_chart,
        derivative_sups,
        seminorm: seminorm_global,
        delta_table: deltas.iter().copied().zip(table_global).collect(),
    })
}

/// Discrete seminorm over grid-point pairs with offset in (0, delta)^m:
/// max |a(x + kh) - a(x)| / |kh|^theta over nonzero integer offsets k >= 0
/// with k_d h_d < delta, both endpoints in the masked core.
pub fn discrete_seminorm(
    grid: &ChartGrid,
    chart: &crate::atlas::Chart,
    a: &ArrayD<f64>,
    theta: f64,
    delta: f64,
) -> f64 {
    seminorm_table(grid, chart, a, theta, &[delta])[0]
}

/// Seminorm at each delta of a decreasing list, sharing one scan per offset:
/// each offset contributes sup |a(x + kh) - a(x)| once, then enters every
/// delta whose box (0, delta)^m contains the offset.
pub fn seminorm_table(
    grid: &ChartGrid,
    chart: &crate::atlas::Chart,
    a: &ArrayD<f64>,
    theta: f64,
    deltas: &[f64],
) -> Vec<f64> {
    let m = grid.dim;
    let delta_max = deltas.iter().copied().fold(0.0f64, f64::max);
    let max_off: Vec<usize> = (0..m)
        .map(|d| {
            let mut k = (delta_max / grid.spacing[d]).ceil() as usize;
            while k > 0 && (k as f64) * grid.spacing[d] >= delta_max {
                k -= 1;
            }
            k.min(grid.shape[d].saturating_sub(1))
        })
        .collect();
    let mut offsets = Vec::new();
    let mut cur = vec![0usize; m];
    fn rec(d: usize, max_off: &[usize], cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if d == max_off.len() {
            if cur.iter().any(|&v| v > 0) {
                out.push(cur.clone());
            }
            return;
        }
        for v in 0..=max_off[d] {
            cur[d] = v;
            rec(d + 1, max_off, cur, out);
        }
        cur[d] = 0;
    }
    rec(0, &max_off, &mut cur, &mut offsets);

    let core = chart.masked_core_indices();
    let mut table = vec![0.0f64; deltas.len()];
    for off in &offsets {
        let step: f64 = off
            .iter()
            .enumerate()
            .map(|(d, &k)| {
                let v = k as f64 * grid.spacing[d];
                v * v
            })
            .sum::<f64>()
            .sqrt();
        let w = step.powf(theta);
        let mut pair_sup: f64 = 0.0;
        for idx in &core {
            let mut jdx = idx.clone();
            let mut ok = true;
            for d in 0..m {
                jdx[d] += off[d];
                if jdx[d] >= grid.shape[d] + grid.halo {
                    ok = false;
                    break;
                }
            }
            if !ok || !chart.mask[IxDyn(&jdx)] {
                continue;
            }
            pair_sup = pair_sup.max((a[IxDyn(&jdx)] - a[IxDyn(idx)]).abs());
        }
        for (di, &delta) in deltas.iter().enumerate() {
            if off
                .iter()
                .enumerate()
                .all(|(d, &k)| (k as f64) * grid.spacing[d] < delta)
            {
                table[di] = table[di].max(pair_sup / w);
            }
        }
    }
    table
}

/// Localized Hoelder norm estimate through pi_kappa pieces.
pub fn holder_norm(
    atlas: &Atlas,
    field: &ChartField,
    s: f64,
    deltas: &[f64],
) -> Result<HolderEstimate> {
    holder_norm_localized(atlas, field, s, deltas, false)
}

/// Same pipeline with pi^2 in place of pi; also returns the ratio of the
/// squared-cutoff estimate to the plain one on this field.
pub fn holder_norm_breve(
    atlas: &Atlas,
    field: &ChartField,
    s: f64,
    deltas: &[f64],
) -> Result<(HolderEstimate, f64)> {
    let breve = holder_norm_localized(atlas, field, s, deltas, true)?;
    let plain = holder_norm_localized(atlas, field, s, deltas, false)?;
    let ratio = if plain.value == 0.0 {
        if breve.value == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        breve.value / plain.value
    };
    Ok((breve, ratio))
}

/// The delta-resolved seminorm table [.]^delta of the localized field; a
/// little-Hoelder field shows it decaying to 0 as delta shrinks.
pub fn little_holder_modulus(
    atlas: &Atlas,
    field: &ChartField,
    s: f64,
    deltas: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let est = holder_norm_localized(atlas, field, s, deltas, false)?;
    Ok(est.delta_table)
}

/// Pointwise power u^alpha, requiring inf u > b > 0 over all masked grids.
pub fn power_map(atlas: &Atlas, field: &ChartField, alpha: f64, b: f64) -> Result<ChartField> {
    if !field.is_scalar() {
        return Err(Error::UnsupportedRank {
            sigma: field.sigma,
            tau: field.tau,
        });
    }
    if b <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "power map lower bound b = {b} must be positive"
        )));
    }
    let (chart, index, value) = field.argmin(atlas);
    if value <= b {
        return Err(Error::PositivityViolation {
            chart,
            index,
            value,
            bound: b,
        });
    }
    Ok(field.map(|v| v.powf(alpha)))
}

/// Binomial-series evaluation of u^alpha about the positive center u0:
/// sum_{n <= terms} C(alpha, n) u0^(alpha-n) (u - u0)^n. Returns the field
/// and the sup of the first omitted term as the truncation bound.
pub fn power_map_series(
    atlas: &Atlas,
    field: &ChartField,
    center: &ChartField,
    alpha: f64,
    terms: usize,
) -> Result<(ChartField, f64)> {
    if !field.is_scalar() || !center.is_scalar() {
        return Err(Error::UnsupportedRank {
            sigma: field.sigma,
            tau: field.tau,
        });
    }
    if center.min_value(atlas) <= 0.0 {
        let (chart, index, value) = center.argmin(atlas);
        return Err(Error::PositivityViolation {
            chart,
            index,
            value,
            bound: 0.0,
        });
    }
    // Series radius: |(u - u0)/u0| < 1 everywhere.
    let mut ratio: f64 = 0.0;
    for (k, chart) in atlas.charts.iter().enumerate() {
        for idx in chart.masked_core_indices() {
            let u = field.comps[k][0][IxDyn(&idx)];
            let u0 = center.comps[k][0][IxDyn(&idx)];
            ratio = ratio.max(((u - u0) / u0).abs());
        }
    }
    if ratio >= 1.0 {
        return Err(Error::RadiusViolation { ratio });
    }

    let mut out = ChartField::zeros(atlas, 0, 0);
    let mut trunc: f64 = 0.0;
    for (k, chart_comps) in field.comps.iter().enumerate() {
        let u = &chart_comps[0];
        let u0 = &center.comps[k][0];
        let mut sum = ArrayD::zeros(u.raw_dim());
        ndarray::Zip::from(&mut sum)
            .and(u)
            .and(u0)
            .for_each(|s, &uv, &cv| {
                // term_0 = u0^alpha; term_{n+1} = term_n (alpha-n)/(n+1) (u-u0)/u0
                let x = (uv - cv) / cv;
                let mut term = cv.powf(alpha);
                let mut acc = term;
                for n in 0..terms {
                    term *= (alpha - n as f64) / (n as f64 + 1.0) * x;
                    acc += term;
                }
                let next = term * (alpha - terms as f64) / (terms as f64 + 1.0) * x;
                trunc = trunc.max(next.abs());
                *s = acc;
            });
        out.comps[k][0] = sum;
    }
    Ok((out, trunc))
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
    use crate::atlas::{build_sphere_atlas, build_torus_atlas};
    use approx::assert_abs_diff_eq;

    fn torus1() -> Atlas {
        crate::fixtures::torus1()
    }

    fn torus8() -> Atlas {
        crate::fixtures::torus8()
    }

    #[test]
    fn coretract_on_single_chart_is_the_identity() {
        let atlas = torus1();
        let u = ChartField::scalar_from_manifold_fn(&atlas, |p| p[0].sin());
        let pieces = coretract(&atlas, &u).unwrap();
        let defect = (&pieces[0][0] - &u.comps[0][0])
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()));
        assert_eq!(defect, 0.0);
    }

    #[test]
    fn retract_coretract_is_identity_on_single_chart() {
        let atlas = torus1();
        let u = ChartField::scalar_from_manifold_fn(&atlas, |p| p[0].sin() * p[1].cos());
        let blended = blend(&atlas, &u).unwrap();
        let defect = blended.sub(&u).sup_norm(&atlas);
        assert!(defect <= 1e-10, "defect {defect}");
    }

    #[test]
    fn coretract_pieces_are_pi_for_unit_field() {
        let atlas = torus8();
        let u = ChartField::constant(&atlas, 1.0);
        let pieces = coretract(&atlas, &u).unwrap();
        let loc = atlas.localization().unwrap();
        for k in 0..atlas.n_charts() {
            let d = (&pieces[k][0] - &loc.pi[k])
                .iter()
                .fold(0.0f64, |a, v| a.max(v.abs()));
            assert!(d <= 1e-15);
        }
    }

    #[test]
    fn retract_coretract_reproduces_smooth_fields_on_eight_charts() {
        let atlas = torus8();
        let u = ChartField::scalar_from_manifold_fn(&atlas, |p| p[0].sin() * p[1].cos());
        let blended = blend(&atlas, &u).unwrap();
        let defect = blended.sub(&u).sup_norm(&atlas);
        // Lattice-aligned translations make the transfer exact to rounding.
        assert!(defect <= 1e-12, "defect {defect}");
    }

    #[test]
    fn retract_of_zero_pieces_is_zero() {
        let atlas = torus8();
        let zero = ChartField::zeros(&atlas, 0, 0);
        let pieces = coretract(&atlas, &zero).unwrap();
        let out = retract(&atlas, &pieces, 0, 0).unwrap();
        assert_eq!(out.sup_norm(&atlas), 0.0);
    }

    #[test]
    fn sphere_blend_keeps_smooth_fields_within_h2() {
        let atlas = crate::fixtures::sphere24();
        // Ambient coordinate function: smooth on the sphere.
        let u = ChartField::scalar_from_manifold_fn(&atlas, |p| p[3]);
        let blended = blend(&atlas, &u).unwrap();
        let defect = blended.sub(&u).sup_norm(&atlas);
        let h = atlas.charts[0].grid.spacing[0];
        assert!(defect <= 10.0 * h * h, "defect {defect}, h^2 {}", h * h);
    }

    #[test]
    fn scalar_overlap_defect_vanishes_for_manifold_functions() {
        let atlas = torus8();
        let u = ChartField::scalar_from_manifold_fn(&atlas, |p| p[0].sin() + p[2].cos());
        assert!(u.overlap_defect(&atlas) <= 1e-12);
    }

    #[test]
    fn metric_rank_two_transport_is_consistent_on_sphere() {
        let atlas = crate::fixtures::sphere24();
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
        // The closed-form metric components transported through the inversion
        // Jacobians agree up to interpolation error.
        let defect = g.overlap_defect(&atlas);
        let h = atlas.charts[0].grid.spacing[0];
        assert!(defect <= 20.0 * h * h, "defect {defect}");
    }

    #[test]
    fn holder_norm_of_constant_is_its_magnitude() {
        let atlas = torus1();
        let u = ChartField::constant(&atlas, -3.5);
        let h = atlas.charts[0].grid.spacing[0];
        let est = holder_norm(&atlas, &u, 0.5, &[2.0 * h, 4.0 * h]).unwrap_err();
        // deltas must be decreasing
        assert!(matches!(est, Error::InvalidOffsets(_)));
        let est = holder_norm(&atlas, &u, 0.5, &[6.0 * h, 4.0 * h, 2.0 * h]).unwrap();
        assert_abs_diff_eq!(est.value, 3.5, epsilon = 1e-12);
        assert_eq!(est.seminorm, 0.0);
    }

    #[test]
    fn holder_norm_matches_brute_force_pair_scan() {
        // Exhaustive O(N^2) oracle on a coarse single-chart grid.
        let atlas = build_torus_atlas(3, 1, 0.25, 8).unwrap();
        let u = ChartField::scalar_from_manifold_fn(&atlas, |p| p[0].sin());
        let grid = &atlas.charts[0].grid;
        let h = grid.spacing[0];
        let s = 0.5;
        let delta = std::f64::consts::TAU; // all offsets
        let est = holder_norm(&atlas, &u, s, &[delta]).unwrap();

        // Oracle: scan every ordered grid pair with nonnegative offset.
        let a = &u.comps[0][0];
        let n = grid.shape[0];
        let mut sup0: f64 = 0.0;
        let mut semi: f64 = 0.0;
        let idxs: Vec<Vec<usize>> = grid.core_indices();
        for i in &idxs {
            sup0 = sup0.max(a[IxDyn(i)].abs());
            for j in &idxs {
                if i.iter().zip(j.iter()).all(|(a, b)| b >= a) && i != j {
                    let off: Vec<usize> = i.iter().zip(j.iter()).map(|(a, b)| b - a).collect();
                    if off.iter().any(|&o| o as f64 * h >= delta) {
                        continue;
                    }
                    let dist = off
                        .iter()
                        .map(|&o| (o as f64 * h).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    semi = semi.max((a[IxDyn(j)] - a[IxDyn(i)]).abs() / dist.powf(s));
                }
            }
        }
        assert_eq!(est.value, sup0 + semi);
        assert_eq!(est.seminorm, semi);
    }

    #[test]
    fn holder_norm_is_homogeneous() {
        let atlas = torus1();
        let u = ChartField::scalar_from_manifold_fn(&atlas, |p| p[0].sin() + 0.3 * p[1].cos());
        let h = atlas.charts[0].grid.spacing[0];
        let deltas = [6.0 * h, 4.0 * h, 2.0 * h];
        let e1 = holder_norm(&atlas, &u, 0.5, &deltas).unwrap();
        let e2 = holder_norm(&atlas, &u.scale(2.0), 0.5, &deltas).unwrap();
        assert_abs_diff_eq!(e2.value, 2.0 * e1.value, epsilon = 1e-12);
    }

    #[test]
    fn holder_norm_satisfies_triangle_inequality_on_random_fields() {
        use rand::Rng;
        use rand::SeedableRng;
        let atlas = torus1();
        let h = atlas.charts[0].grid.spacing[0];
        let deltas = [6.0 * h, 4.0 * h, 2.0 * h];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..8 {
            let (a1, b1, c1): (f64, f64, f64) = (
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(1.0..3.0),
            );
            let (a2, b2, c2): (f64, f64, f64) = (
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(1.0..3.0),
            );
            let u = ChartField::scalar_from_manifold_fn(&atlas, |p| {
                a1 * (c1 * p[0]).sin() + b1 * p[1].cos()
            });
            let v = ChartField::scalar_from_manifold_fn(&atlas, |p| {
                a2 * (c2 * p[1]).sin() + b2 * p[2].cos()
            });
            let eu = holder_norm(&atlas, &u, 0.5, &deltas).unwrap().value;
            let ev = holder_norm(&atlas, &v, 0.5, &deltas).unwrap().value;
            let euv = holder_norm(&atlas, &u.add(&v), 0.5, &deltas).unwrap().value;
            assert!(euv <= eu + ev + 1e-12, "{euv} > {eu} + {ev}");
        }
    }

    #[test]
    fn holder_rejects_out_of_range_exponent() {
        let atlas = torus1();
        let u = ChartField::constant(&atlas, 1.0);
        assert!(matches!(
            holder_norm(&atlas, &u, 3.0, &[1.0]),
            Err(Error::InvalidExponent(_))
        ));
    }

    #[test]
    fn breve_norm_equals_plain_for_constants_on_single_chart() {
        let atlas = torus1();
        let u = ChartField::constant(&atlas, 2.0);
        let h = atlas.charts[0].grid.spacing[0];
        let (breve, ratio) = holder_norm_breve(&atlas, &u, 0.5, &[4.0 * h, 2.0 * h]).unwrap();
        assert_abs_diff_eq!(breve.value, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ratio, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn breve_ratio_is_bounded_on_eight_charts() {
        let atlas = torus8();
        let u = ChartField::scalar_from_manifold_fn(&atlas, |p| p[0].sin());
        let h = atlas.charts[0].grid.spacing[0];
        let (_, ratio) = holder_norm_breve(&atlas, &u, 0.5, &[4.0 * h, 3.0 * h, 2.0 * h]).unwrap();
        assert!(ratio > 0.25 && ratio < 4.0, "ratio {ratio}");
        let zero = ChartField::zeros(&atlas, 0, 0);
        let (est, _) = holder_norm_breve(&atlas, &zero, 0.5, &[4.0 * h, 2.0 * h]).unwrap();
        assert_eq!(est.value, 0.0);
    }

    #[test]
    fn little_holder_modulus_decays_for_smooth_fields() {
        let atlas = build_torus_atlas(3, 1, 0.25, 48).unwrap();
        let u = ChartField::scalar_from_manifold_fn(&atlas, |p| p[0].sin());
        let h = atlas.charts[0].grid.spacing[0];
        let deltas: Vec<f64> = vec![8.5 * h, 6.5 * h, 4.5 * h, 3.5 * h];
        let table = little_holder_modulus(&atlas, &u, 0.5, &deltas).unwrap();
        // Smooth field: modulus ~ delta^{1-s} = delta^{0.5}; check the
        // log-log slope over the resolved range.
        let slope = ((table[0].1 / table[3].1).ln()) / ((table[0].0 / table[3].0).ln());
        assert!((slope - 0.5).abs() <= 0.1, "slope {slope}");
        // Monotone in delta.
        for w in table.windows(2) {
            assert!(w[1].1 <= w[0].1 + 1e-15);
        }
    }

    #[test]
    fn little_holder_modulus_stalls_for_a_genuine_cusp() {
        let atlas = build_torus_atlas(3, 1, 0.25, 32).unwrap();
        let u = ChartField::scalar_from_manifold_fn(&atlas, |p| p[0].sin().abs().sqrt());
        let h = atlas.charts[0].grid.spacing[0];
        let deltas: Vec<f64> = vec![8.0 * h, 6.0 * h, 4.0 * h, 3.0 * h];
        let table = little_holder_modulus(&atlas, &u, 0.5, &deltas).unwrap();
        // The cusp at sin(x) = 0 keeps the 0.5-seminorm pinned near 1.
        let drop = table[3].1 / table[0].1;
        assert!(drop > 0.8, "modulus dropped by {drop}");
        assert!(table[3].1 > 0.8, "seminorm {}", table[3].1);
    }

    #[test]
    fn power_map_basics() {
        let atlas = torus1();
        let four = ChartField::constant(&atlas, 4.0);
        let two = power_map(&atlas, &four, 0.5, 1e-6).unwrap();
        assert_abs_diff_eq!(two.sup_norm(&atlas), 2.0, epsilon = 1e-14);
        // alpha = 1 is the identity.
        let same = power_map(&atlas, &four, 1.0, 1e-6).unwrap();
        assert_eq!(same.sub(&four).sup_norm(&atlas), 0.0);
        // alpha = -4 matches 1/u^4.
        let u = ChartField::scalar_from_manifold_fn(&atlas, |p| 2.0 + 0.5 * p[0].sin());
        let inv4 = power_map(&atlas, &u, -4.0, 0.1).unwrap();
        let oracle = u.map(|v| 1.0 / (v * v * v * v));
        assert!(inv4.sub(&oracle).sup_norm(&atlas) <= 1e-14);
    }

    #[test]
    fn power_map_reports_positivity_violations() {
        let atlas = torus1();
        let u = ChartField::scalar_from_manifold_fn(&atlas, |p| 0.5 + 0.6 * p[0].sin());
        match power_map(&atlas, &u, 0.5, 0.2) {
            Err(Error::PositivityViolation { value, bound, .. }) => {
                assert!(value <= bound);
            }
            other => panic!("expected positivity violation, got {other:?}"),
        }
    }

    #[test]
    fn power_map_round_trip_with_reciprocal_exponent() {
        let atlas = torus1();
        let u = ChartField::scalar_from_manifold_fn(&atlas, |p| 2.0 + 0.3 * p[1].cos());
        let alpha = 1.7;
        let fwd = power_map(&atlas, &u, alpha, 0.1).unwrap();
        let back = power_map(&atlas, &fwd, 1.0 / alpha, 0.1).unwrap();
        assert!(back.sub(&u).sup_norm(&atlas) <= 1e-12);
    }

    #[test]
    fn power_series_is_exact_at_the_center() {
        let atlas = torus1();
        let u0 = ChartField::constant(&atlas, 1.7);
        let (s, bound) = power_map_series(&atlas, &u0, &u0, 0.5, 0).unwrap();
        assert_abs_diff_eq!(s.sup_norm(&atlas), 1.7f64.sqrt(), epsilon = 1e-14);
        assert_eq!(bound, 0.0);
    }

    #[test]
    fn power_series_converges_to_direct_power() {
        let atlas = torus1();
        let u = ChartField::constant(&atlas, 1.1);
        let u0 = ChartField::constant(&atlas, 1.0);
        let (s, _) = power_map_series(&atlas, &u, &u0, 0.5, 30).unwrap();
        assert_abs_diff_eq!(s.sup_norm(&atlas), 1.1f64.sqrt(), epsilon = 1e-12);

        // ratio 0.5 needs more terms; oracle is the direct power map.
        let v = ChartField::scalar_from_manifold_fn(&atlas, |p| 1.0 + 0.5 * p[0].sin());
        let v0 = ChartField::constant(&atlas, 1.0);
        let (sv, _) = power_map_series(&atlas, &v, &v0, 0.5, 60).unwrap();
        let direct = power_map(&atlas, &v, 0.5, 0.1).unwrap();
        assert!(sv.sub(&direct).sup_norm(&atlas) <= 1e-10);
    }

    #[test]
    fn power_series_rejects_radius_violations() {
        let atlas = torus1();
        let u = ChartField::constant(&atlas, 2.5);
        let u0 = ChartField::constant(&atlas, 1.0);
        assert!(matches!(
            power_map_series(&atlas, &u, &u0, 0.5, 10),
            Err(Error::RadiusViolation { .. })
        ));
    }
}
