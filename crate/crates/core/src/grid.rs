//! Tensor-product chart grids and second-order finite-difference kernels.
//!
//! Every chart samples its parameter domain on a uniform grid. Non-periodic
//! charts carry a halo ring of `HALO` extra points per side whose values come
//! either from closed-form evaluation or from neighbouring charts, so that all
//! derivative stencils applied to core points stay centered. Periodic charts
//! (the one-chart torus) wrap instead and need no halo.

use ndarray::{ArrayD, Axis, Dimension, IxDyn};

/// Halo width in grid cells for non-periodic charts.
pub const HALO: usize = 2;

/// Snap tolerance (in cells) for treating an interpolation point as on-lattice.
const LATTICE_SNAP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ChartGrid {
    /// Manifold dimension m.
    pub dim: usize,
    /// Core points per axis (excluding halo).
    pub shape: Vec<usize>,
    /// Chart coordinates of core index (0, ..., 0).
    pub origin: Vec<f64>,
    /// Grid spacing per axis.
    pub spacing: Vec<f64>,
    /// All axes periodic; the stored points tile the period without repetition.
    pub periodic: bool,
    /// Halo cells per side (0 when periodic).
    pub halo: usize,
}

impl ChartGrid {
    pub fn new_periodic(shape: Vec<usize>, origin: Vec<f64>, spacing: Vec<f64>) -> Self {
        let dim = shape.len();
        ChartGrid {
            dim,
            shape,
            origin,
            spacing,
            periodic: true,
            halo: 0,
        }
    }

    pub fn new_with_halo(shape: Vec<usize>, origin: Vec<f64>, spacing: Vec<f64>) -> Self {
        let dim = shape.len();
        ChartGrid {
            dim,
            shape,
            origin,
            spacing,
            periodic: false,
            halo: HALO,
        }
    }

    /// Shape of stored arrays (core plus halo).
    pub fn ext_shape(&self) -> Vec<usize> {
        self.shape.iter().map(|&n| n + 2 * self.halo).collect()
    }

    pub fn n_ext(&self) -> usize {
        self.ext_shape().iter().product()
    }

    pub fn n_core(&self) -> usize {
        self.shape.iter().product()
    }

    /// Chart coordinates of an extended-grid index.
    pub fn point_of_ext(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter()
            .enumerate()
            .map(|(d, &i)| self.origin[d] + (i as f64 - self.halo as f64) * self.spacing[d])
            .collect()
    }

    /// Chart coordinates of a core index.
    pub fn point_of_core(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter()
            .enumerate()
            .map(|(d, &i)| self.origin[d] + i as f64 * self.spacing[d])
            .collect()
    }

    /// Extended-grid index of a core index.
    pub fn ext_index(&self, core: &[usize]) -> Vec<usize> {
        core.iter().map(|&i| i + self.halo).collect()
    }

    pub fn zeros(&self) -> ArrayD<f64> {
        ArrayD::zeros(IxDyn(&self.ext_shape()))
    }

    /// Sample a chart-coordinate function on the extended grid.
    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> ArrayD<f64> {
        let mut a = self.zeros();
        for idx in ndarray::indices(IxDyn(&self.ext_shape())) {
            let iv: Vec<usize> = idx.slice().to_vec();
            let x = self.point_of_ext(&iv);
            a[idx.clone()] = f(&x);
        }
        a
    }

    /// Iterate extended-grid indices of all core points.
    pub fn core_indices(&self) -> Vec<Vec<usize>> {
        ndarray::indices(IxDyn(&self.shape))
            .into_iter()
            .map(|idx| self.ext_index(idx.slice()))
            .collect()
    }

    /// Tensor-product quadrature weight of a core point: rectangle rule on
    /// periodic axes, trapezoidal on bounded axes.
    pub fn quad_weight(&self, core: &[usize]) -> f64 {
        let mut w = 1.0;
        for (d, &i) in core.iter().enumerate() {
            let mut wd = self.spacing[d];
            if !self.periodic && (i == 0 || i + 1 == self.shape[d]) {
                wd *= 0.5;
            }
            w *= wd;
        }
        w
    }

    /// Multilinear interpolation of the stored array at chart coordinates `x`.
    ///
    /// Points within `LATTICE_SNAP` cells of a lattice point reproduce the
    /// stored value exactly (no interpolation blur on aligned grids).
    pub fn interp(&self, a: &ArrayD<f64>, x: &[f64]) -> f64 {
        let m = self.dim;
        debug_assert_eq!(x.len(), m);
        // Per-axis base index (extended) and fraction.
        let mut base = vec![0usize; m];
        let mut frac = vec![0.0f64; m];
        for d in 0..m {
            let n_ext = self.shape[d] + 2 * self.halo;
            let mut t = (x[d] - self.origin[d]) / self.spacing[d] + self.halo as f64;
            if self.periodic {
                let n = self.shape[d] as f64;
                t = t.rem_euclid(n);
            }
            let mut i0 = t.floor();
            let mut f = t - i0;
            if f < LATTICE_SNAP {
                f = 0.0;
            } else if f > 1.0 - LATTICE_SNAP {
                i0 += 1.0;
                f = 0.0;
            }
            if self.periodic {
                let n = self.shape[d] as f64;
                i0 = i0.rem_euclid(n);
            } else {
                // Clamp slight excursions; anything farther is a caller bug.
                if i0 < 0.0 {
                    debug_assert!(i0 > -1.0 - LATTICE_SNAP, "interp out of range");
                    i0 = 0.0;
                    f = 0.0;
                }
                let max_i = (n_ext - 1) as f64;
                if i0 > max_i || (i0 == max_i && f > 0.0) {
                    debug_assert!(i0 - max_i < 1.0 + LATTICE_SNAP, "interp out of range");
                    i0 = max_i;
                    f = 0.0;
                }
            }
            base[d] = i0 as usize;
            frac[d] = f;
        }
        let mut value = 0.0;
        let mut idx = vec![0usize; m];
        for corner in 0..(1usize << m) {
            let mut w = 1.0;
            for d in 0..m {
                if corner >> d & 1 == 1 {
                    w *= frac[d];
                    idx[d] = base[d] + 1;
                } else {
                    w *= 1.0 - frac[d];
                    idx[d] = base[d];
                }
                if self.periodic {
                    idx[d] %= self.shape[d];
                }
            }
            if w != 0.0 {
                value += w * a[IxDyn(&idx)];
            }
        }
        value
    }
}

fn lane_wrap(v: &[f64], i: isize) -> f64 {
    let n = v.len() as isize;
    v[i.rem_euclid(n) as usize]
}

/// First derivative along `axis`, second order. Centered in the interior,
/// one-sided at the two extreme extended-grid planes of bounded charts.
pub fn deriv1(grid: &ChartGrid, a: &ArrayD<f64>, axis: usize) -> ArrayD<f64> {
    let h = grid.spacing[axis];
    let mut out = ArrayD::zeros(a.raw_dim());
    for (lane, mut lane_out) in a
        .lanes(Axis(axis))
        .into_iter()
        .zip(out.lanes_mut(Axis(axis)))
    {
        let v: Vec<f64> = lane.iter().copied().collect();
        let n = v.len();
        for i in 0..n {
            let ii = i as isize;
            lane_out[i] = if grid.periodic {
                (lane_wrap(&v, ii + 1) - lane_wrap(&v, ii - 1)) / (2.0 * h)
            } else if i == 0 {
                (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h)
            } else if i == n - 1 {
                (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * h)
            } else {
                (v[i + 1] - v[i - 1]) / (2.0 * h)
            };
        }
    }
    out
}

/// Second derivative along `axis`, second order, compact 3-point stencil.
pub fn deriv2(grid: &ChartGrid, a: &ArrayD<f64>, axis: usize) -> ArrayD<f64> {
    let h2 = grid.spacing[axis] * grid.spacing[axis];
    let mut out = ArrayD::zeros(a.raw_dim());
    for (lane, mut lane_out) in a
        .lanes(Axis(axis))
        .into_iter()
        .zip(out.lanes_mut(Axis(axis)))
    {
        let v: Vec<f64> = lane.iter().copied().collect();
        let n = v.len();
        for i in 0..n {
            let ii = i as isize;
            lane_out[i] = if grid.periodic {
                (lane_wrap(&v, ii + 1) - 2.0 * v[i] + lane_wrap(&v, ii - 1)) / h2
            } else if i == 0 {
                (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / h2
            } else if i == n - 1 {
                (2.0 * v[n - 1] - 5.0 * v[n - 2] + 4.0 * v[n - 3] - v[n - 4]) / h2
            } else {
                (v[i + 1] - 2.0 * v[i] + v[i - 1]) / h2
            };
        }
    }
    out
}

/// Mixed or repeated second derivative: compact for `i == j`, composed
/// first-derivative stencils otherwise.
pub fn deriv2_mixed(grid: &ChartGrid, a: &ArrayD<f64>, i: usize, j: usize) -> ArrayD<f64> {
    if i == j {
        deriv2(grid, a, i)
    } else {
        deriv1(grid, &deriv1(grid, a, i), j)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::TAU;

    fn periodic_grid(n: usize) -> ChartGrid {
        ChartGrid::new_periodic(vec![n, n, n], vec![0.0; 3], vec![TAU / n as f64; 3])
    }

    fn bounded_grid(n: usize) -> ChartGrid {
        let h = 1.0 / (n - 1) as f64;
        ChartGrid::new_with_halo(vec![n, n, n], vec![0.0; 3], vec![h; 3])
    }

    #[test]
    fn derivative_of_constant_is_exactly_zero() {
        let g = bounded_grid(9);
        let a = g.sample(|_| 4.25);
        for axis in 0..3 {
            assert!(deriv1(&g, &a, axis).iter().all(|&v| v == 0.0));
            assert!(deriv2(&g, &a, axis).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn periodic_first_derivative_converges_at_order_two() {
        let mut errs = Vec::new();
        for &n in &[16usize, 32] {
            let g = periodic_grid(n);
            let a = g.sample(|x| x[0].sin());
            let d = deriv1(&g, &a, 0);
            let mut err: f64 = 0.0;
            for idx in g.core_indices() {
                let x = g.point_of_ext(&idx);
                err = err.max((d[IxDyn(&idx)] - x[0].cos()).abs());
            }
            errs.push(err);
        }
        assert!(errs[0] / errs[1] > 3.5, "ratio {}", errs[0] / errs[1]);
    }

    #[test]
    fn bounded_second_derivative_converges_at_order_two() {
        // Includes the one-sided stencils at extended-grid edges.
        let mut errs = Vec::new();
        for &n in &[17usize, 33] {
            let g = bounded_grid(n);
            let a = g.sample(|x| (2.0 * x[0]).sin() * x[1].cos());
            let d = deriv2(&g, &a, 0);
            let mut err: f64 = 0.0;
            for idx in g.core_indices() {
                let x = g.point_of_ext(&idx);
                let exact = -4.0 * (2.0 * x[0]).sin() * x[1].cos();
                err = err.max((d[IxDyn(&idx)] - exact).abs());
            }
            errs.push(err);
        }
        assert!(errs[0] / errs[1] > 3.5, "ratio {}", errs[0] / errs[1]);
    }

    #[test]
    fn mixed_derivative_matches_analytic() {
        let g = bounded_grid(33);
        let a = g.sample(|x| x[0].sin() * x[1].sin());
        let d = deriv2_mixed(&g, &a, 0, 1);
        let mut err: f64 = 0.0;
        for idx in g.core_indices() {
            let x = g.point_of_ext(&idx);
            err = err.max((d[IxDyn(&idx)] - x[0].cos() * x[1].cos()).abs());
        }
        assert!(err < 5e-3, "err {err}");
    }

    #[test]
    fn interp_reproduces_lattice_values_exactly() {
        let g = bounded_grid(9);
        let a = g.sample(|x| x[0] + 2.0 * x[1] + 3.0 * x[2]);
        for idx in g.core_indices() {
            let x = g.point_of_ext(&idx);
            assert_eq!(g.interp(&a, &x), a[IxDyn(&idx)]);
        }
    }

    #[test]
    fn interp_is_exact_on_multilinear_functions() {
        let g = bounded_grid(9);
        let a = g.sample(|x| 1.0 + x[0] - 0.5 * x[1] + 2.0 * x[2]);
        let x = [0.3171, 0.6559, 0.0617];
        assert_abs_diff_eq!(
            g.interp(&a, &x),
            1.0 + x[0] - 0.5 * x[1] + 2.0 * x[2],
            epsilon = 1e-13
        );
    }

    #[test]
    fn periodic_interp_wraps() {
        let g = periodic_grid(16);
        let a = g.sample(|x| x[0].sin());
        let h = TAU / 16.0;
        // One spacing below 0 wraps to the last stored plane.
        let v = g.interp(&a, &[-h, 0.0, 0.0]);
        assert_abs_diff_eq!(v, (-h).sin(), epsilon = 1e-12);
    }

    #[test]
    fn quadrature_weights_tile_the_domain() {
        let g = bounded_grid(9);
        let total: f64 = ndarray::indices(IxDyn(&g.shape))
            .into_iter()
            .map(|idx| g.quad_weight(idx.slice()))
            .sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);

        let gp = periodic_grid(16);
        let total_p: f64 = ndarray::indices(IxDyn(&gp.shape))
            .into_iter()
            .map(|idx| gp.quad_weight(idx.slice()))
            .sum();
        assert_abs_diff_eq!(total_p, TAU.powi(3), epsilon = 1e-9);
    }
}
