//! Gauss-Legendre x equispaced-longitude grid on the unit sphere, together with
//! the real spherical-harmonic transforms that live on it.
//!
//! Basis functions are the orthonormal real harmonics
//!
//! ```text
//! Y_l0  = P_l^0(cos t)
//! Y_lm  = sqrt(2) P_l^m(cos t) cos(m p)      m > 0
//! Y_l-m = sqrt(2) P_l^m(cos t) sin(m p)      m > 0
//! ```
//!
//! with `P_l^m` normalised so that `int Y^2 dA = 1` on the unit sphere
//! (no Condon-Shortley phase). The grid is sized so that every integrand of
//! polynomial degree `<= 3N + 1` is integrated exactly, which gives the usual
//! 3/2 dealiasing margin for quadratic products of band-`N` fields.

use nalgebra::DMatrix;
use std::f64::consts::PI;

/// One real spherical harmonic `(degree, signed order)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mode {
    pub degree: usize,
    pub order: i64,
}

#[derive(Clone, Debug)]
struct OrderBlock {
    order: i64,
    modes: Vec<usize>,
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, nodes descending
/// (so colatitude ascends).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        for _ in 0..100 {
            let (p, d) = legendre_and_derivative(n, x);
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_and_derivative(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = x;
        nodes[n - 1 - i] = -x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let d = nf * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Fully normalised associated Legendre values `P_l^m(x)` for `0 <= m <= l <= n`,
/// stored row-major as `table[l * (n + 1) + m]`, plus their colatitude
/// derivatives. `s = sin(theta)` must be positive for the derivative.
pub fn normalized_legendre(n: usize, x: f64, s: f64) -> (Vec<f64>, Vec<f64>) {
    let stride = n + 1;
    let mut p = vec![0.0; stride * stride];
    let mut dp = vec![0.0; stride * stride];
    p[0] = 1.0 / (4.0 * PI).sqrt();
    for m in 1..=n {
        let mf = m as f64;
        p[m * stride + m] = ((2.0 * mf + 1.0) / (2.0 * mf)).sqrt() * s * p[(m - 1) * stride + m - 1];
    }
    for m in 0..n {
        let mf = m as f64;
        p[(m + 1) * stride + m] = (2.0 * mf + 3.0).sqrt() * x * p[m * stride + m];
    }
    for m in 0..=n {
        let mf = m as f64;
        for l in (m + 2)..=n {
            let lf = l as f64;
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0)).sqrt();
            p[l * stride + m] = a * (x * p[(l - 1) * stride + m] - b * p[(l - 2) * stride + m]);
        }
    }
    for l in 0..=n {
        let lf = l as f64;
        for m in 0..=l {
            let mf = m as f64;
            let lower = if l > m {
                ((2.0 * lf + 1.0) * (lf * lf - mf * mf) / (2.0 * lf - 1.0)).sqrt() * p[(l - 1) * stride + m]
            } else {
                0.0
            };
            dp[l * stride + m] = (lf * x * p[l * stride + m] - lower) / s;
        }
    }
    (p, dp)
}

fn trig(order: i64, phi: f64) -> f64 {
    match order.cmp(&0) {
        std::cmp::Ordering::Greater => (order as f64 * phi).cos(),
        std::cmp::Ordering::Less => (-order as f64 * phi).sin(),
        std::cmp::Ordering::Equal => 1.0,
    }
}

fn trig_derivative(order: i64, phi: f64) -> f64 {
    match order.cmp(&0) {
        std::cmp::Ordering::Greater => -(order as f64) * (order as f64 * phi).sin(),
        std::cmp::Ordering::Less => (-order as f64) * (-order as f64 * phi).cos(),
        std::cmp::Ordering::Equal => 0.0,
    }
}

/// Quadrature grid and real spherical-harmonic basis up to a band limit.
#[derive(Clone, Debug)]
pub struct SphereGrid {
    band_limit: usize,
    even_only: bool,
    n_lat: usize,
    n_lon: usize,
    cos_theta: Vec<f64>,
    sin_theta: Vec<f64>,
    lat_weights: Vec<f64>,
    phi: Vec<f64>,
    modes: Vec<Mode>,
    blocks: Vec<OrderBlock>,
    // n_lat x n_modes, latitude-major
    theta_fn: Vec<f64>,
    theta_deriv: Vec<f64>,
    // (2N + 1) x n_lon, indexed by order + N
    trig_table: Vec<f64>,
    trig_deriv_table: Vec<f64>,
}

impl SphereGrid {
    pub fn new(band_limit: usize, even_only: bool) -> Self {
        let n = band_limit;
        let n_lat = (3 * n + 1).div_ceil(2) + 1;
        let n_lon = 3 * n + 2 + (3 * n) % 2;
        let (cos_theta, lat_weights) = gauss_legendre(n_lat);
        let sin_theta: Vec<f64> = cos_theta.iter().map(|x| (1.0 - x * x).sqrt()).collect();
        let phi: Vec<f64> = (0..n_lon).map(|k| 2.0 * PI * k as f64 / n_lon as f64).collect();

        let mut modes = Vec::new();
        for l in 0..=n {
            if even_only && l % 2 == 1 {
                continue;
            }
            for m in -(l as i64)..=(l as i64) {
                modes.push(Mode { degree: l, order: m });
            }
        }
        let mut blocks: Vec<OrderBlock> =
            (-(n as i64)..=(n as i64)).map(|order| OrderBlock { order, modes: Vec::new() }).collect();
        for (idx, mode) in modes.iter().enumerate() {
            blocks[(mode.order + n as i64) as usize].modes.push(idx);
        }
        blocks.retain(|b| !b.modes.is_empty());

        let nm = modes.len();
        let mut theta_fn = vec![0.0; n_lat * nm];
        let mut theta_deriv = vec![0.0; n_lat * nm];
        for j in 0..n_lat {
            let (p, dp) = normalized_legendre(n, cos_theta[j], sin_theta[j]);
            for (idx, mode) in modes.iter().enumerate() {
                let am = mode.order.unsigned_abs() as usize;
                let c = if mode.order == 0 { 1.0 } else { std::f64::consts::SQRT_2 };
                theta_fn[j * nm + idx] = c * p[mode.degree * (n + 1) + am];
                theta_deriv[j * nm + idx] = c * dp[mode.degree * (n + 1) + am];
            }
        }
        let n_orders = 2 * n + 1;
        let mut trig_table = vec![0.0; n_orders * n_lon];
        let mut trig_deriv_table = vec![0.0; n_orders * n_lon];
        for slot in 0..n_orders {
            let order = slot as i64 - n as i64;
            for k in 0..n_lon {
                trig_table[slot * n_lon + k] = trig(order, phi[k]);
                trig_deriv_table[slot * n_lon + k] = trig_derivative(order, phi[k]);
            }
        }
        Self {
            band_limit,
            even_only,
            n_lat,
            n_lon,
            cos_theta,
            sin_theta,
            lat_weights,
            phi,
            modes,
            blocks,
            theta_fn,
            theta_deriv,
            trig_table,
            trig_deriv_table,
        }
    }

    pub fn band_limit(&self) -> usize {
        self.band_limit
    }

    pub fn even_only(&self) -> bool {
        self.even_only
    }

    pub fn n_lat(&self) -> usize {
        self.n_lat
    }

    pub fn n_lon(&self) -> usize {
        self.n_lon
    }

    pub fn n_nodes(&self) -> usize {
        self.n_lat * self.n_lon
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn mode_index(&self, degree: usize, order: i64) -> Option<usize> {
        self.modes.iter().position(|m| m.degree == degree && m.order == order)
    }

    /// Colatitude and longitude of a node.
    pub fn node_angles(&self, node: usize) -> (f64, f64) {
        let j = node / self.n_lon;
        let k = node % self.n_lon;
        (self.cos_theta[j].acos(), self.phi[k])
    }

    pub fn node_sin_theta(&self, node: usize) -> f64 {
        self.sin_theta[node / self.n_lon]
    }

    /// Quadrature weights on the unit sphere; they sum to `4 pi`.
    pub fn node_weights(&self) -> Vec<f64> {
        let dphi = 2.0 * PI / self.n_lon as f64;
        let mut w = Vec::with_capacity(self.n_nodes());
        for j in 0..self.n_lat {
            for _ in 0..self.n_lon {
                w.push(self.lat_weights[j] * dphi);
            }
        }
        w
    }

    /// Eigenvalue `l (l + 1)` of the (nonnegative) unit-sphere Laplacian, per mode.
    pub fn unit_laplacian_eigenvalues(&self) -> Vec<f64> {
        self.modes.iter().map(|m| (m.degree * (m.degree + 1)) as f64).collect()
    }

    fn synthesize_with(&self, coeffs: &[f64], theta_tab: &[f64], trig_tab: &[f64]) -> Vec<f64> {
        assert_eq!(coeffs.len(), self.n_modes());
        let nm = self.n_modes();
        let n = self.band_limit as i64;
        let mut out = vec![0.0; self.n_nodes()];
        for j in 0..self.n_lat {
            let row = &mut out[j * self.n_lon..(j + 1) * self.n_lon];
            for block in &self.blocks {
                let a: f64 = block.modes.iter().map(|&i| coeffs[i] * theta_tab[j * nm + i]).sum();
                if a == 0.0 {
                    continue;
                }
                let slot = (block.order + n) as usize;
                let t = &trig_tab[slot * self.n_lon..(slot + 1) * self.n_lon];
                for (r, tv) in row.iter_mut().zip(t) {
                    *r += a * tv;
                }
            }
        }
        out
    }

    /// Grid values of the band-limited field with the given coefficients.
    pub fn synthesize(&self, coeffs: &[f64]) -> Vec<f64> {
        self.synthesize_with(coeffs, &self.theta_fn, &self.trig_table)
    }

    /// Colatitude derivative of the field.
    pub fn synthesize_dtheta(&self, coeffs: &[f64]) -> Vec<f64> {
        self.synthesize_with(coeffs, &self.theta_deriv, &self.trig_table)
    }

    /// Longitude derivative of the field.
    pub fn synthesize_dphi(&self, coeffs: &[f64]) -> Vec<f64> {
        self.synthesize_with(coeffs, &self.theta_fn, &self.trig_deriv_table)
    }

    /// L2 projection of grid values onto the band-limited basis.
    pub fn analyze(&self, values: &[f64]) -> Vec<f64> {
        assert_eq!(values.len(), self.n_nodes());
        let nm = self.n_modes();
        let n = self.band_limit as i64;
        let dphi = 2.0 * PI / self.n_lon as f64;
        let mut coeffs = vec![0.0; nm];
        for j in 0..self.n_lat {
            let row = &values[j * self.n_lon..(j + 1) * self.n_lon];
            for block in &self.blocks {
                let slot = (block.order + n) as usize;
                let t = &self.trig_table[slot * self.n_lon..(slot + 1) * self.n_lon];
                let f: f64 = row.iter().zip(t).map(|(a, b)| a * b).sum::<f64>() * dphi * self.lat_weights[j];
                for &i in &block.modes {
                    coeffs[i] += f * self.theta_fn[j * nm + i];
                }
            }
        }
        coeffs
    }

    /// Squared unit-sphere gradient pairing `grad f . grad g` at every node.
    pub fn gradient_dot(&self, f: &[f64], g: &[f64]) -> Vec<f64> {
        let ft = self.synthesize_dtheta(f);
        let fp = self.synthesize_dphi(f);
        let gt = self.synthesize_dtheta(g);
        let gp = self.synthesize_dphi(g);
        (0..self.n_nodes())
            .map(|i| {
                let s = self.sin_theta[i / self.n_lon];
                ft[i] * gt[i] + fp[i] * gp[i] / (s * s)
            })
            .collect()
    }

    fn block_gram(
        &self,
        weight: &[f64],
        theta_tab: &[f64],
        trig_tab: &[f64],
        lat_scale: &[f64],
        out: &mut DMatrix<f64>,
    ) {
        let nm = self.n_modes();
        let n = self.band_limit as i64;
        let dphi = 2.0 * PI / self.n_lon as f64;
        let nb = self.blocks.len();
        let mut sums = vec![0.0; nb * nb];
        for j in 0..self.n_lat {
            let wrow = &weight[j * self.n_lon..(j + 1) * self.n_lon];
            let scale = self.lat_weights[j] * dphi * lat_scale[j];
            for (bi, a) in self.blocks.iter().enumerate() {
                let ta = &trig_tab[((a.order + n) as usize) * self.n_lon..][..self.n_lon];
                for (bj, b) in self.blocks.iter().enumerate().skip(bi) {
                    let tb = &trig_tab[((b.order + n) as usize) * self.n_lon..][..self.n_lon];
                    let s: f64 = (0..self.n_lon).map(|k| wrow[k] * ta[k] * tb[k]).sum::<f64>() * scale;
                    sums[bi * nb + bj] = s;
                }
            }
            for (bi, a) in self.blocks.iter().enumerate() {
                for (bj, b) in self.blocks.iter().enumerate().skip(bi) {
                    let s = sums[bi * nb + bj];
                    if s == 0.0 {
                        continue;
                    }
                    for &ia in &a.modes {
                        let pa = theta_tab[j * nm + ia] * s;
                        for &ib in &b.modes {
                            out[(ia, ib)] += pa * theta_tab[j * nm + ib];
                        }
                    }
                }
            }
        }
    }

    fn symmetrize_upper(&self, out: &mut DMatrix<f64>) {
        // block_gram fills block pairs (a <= b); copy each into its mirror
        let nb = self.blocks.len();
        for bi in 0..nb {
            for bj in (bi + 1)..nb {
                for &ia in &self.blocks[bi].modes {
                    for &ib in &self.blocks[bj].modes {
                        out[(ib, ia)] = out[(ia, ib)];
                    }
                }
            }
        }
        for block in &self.blocks {
            for (p, &ia) in block.modes.iter().enumerate() {
                for &ib in &block.modes[p + 1..] {
                    let v = 0.5 * (out[(ia, ib)] + out[(ib, ia)]);
                    out[(ia, ib)] = v;
                    out[(ib, ia)] = v;
                }
            }
        }
    }

    /// `G_ab = sum_n w_n d_n Y_a(n) Y_b(n)` over the unit-sphere quadrature.
    pub fn gram_values(&self, weight: &[f64]) -> DMatrix<f64> {
        let nm = self.n_modes();
        let mut out = DMatrix::zeros(nm, nm);
        let ones = vec![1.0; self.n_lat];
        self.block_gram(weight, &self.theta_fn, &self.trig_table, &ones, &mut out);
        self.symmetrize_upper(&mut out);
        out
    }

    /// `G_ab = sum_n w_n d_n grad Y_a . grad Y_b` (unit-sphere gradients).
    pub fn gram_gradients(&self, weight: &[f64]) -> DMatrix<f64> {
        let nm = self.n_modes();
        let mut out = DMatrix::zeros(nm, nm);
        let ones = vec![1.0; self.n_lat];
        let inv_sin2: Vec<f64> = self.sin_theta.iter().map(|s| 1.0 / (s * s)).collect();
        self.block_gram(weight, &self.theta_deriv, &self.trig_table, &ones, &mut out);
        self.block_gram(weight, &self.theta_fn, &self.trig_deriv_table, &inv_sin2, &mut out);
        self.symmetrize_upper(&mut out);
        out
    }

    /// Basis functions and their angular derivatives at an arbitrary point.
    fn point_basis(&self, theta: f64, phi: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.band_limit;
        let s = theta.sin().max(1e-300);
        let (p, dp) = normalized_legendre(n, theta.cos(), s);
        let mut v = Vec::with_capacity(self.n_modes());
        let mut vt = Vec::with_capacity(self.n_modes());
        let mut vp = Vec::with_capacity(self.n_modes());
        for mode in &self.modes {
            let am = mode.order.unsigned_abs() as usize;
            let c = if mode.order == 0 { 1.0 } else { std::f64::consts::SQRT_2 };
            let pl = c * p[mode.degree * (n + 1) + am];
            let dpl = c * dp[mode.degree * (n + 1) + am];
            v.push(pl * trig(mode.order, phi));
            vt.push(dpl * trig(mode.order, phi));
            vp.push(pl * trig_derivative(mode.order, phi));
        }
        (v, vt, vp)
    }

    /// Evaluates a band-limited field at an arbitrary point.
    pub fn eval_point(&self, coeffs: &[f64], theta: f64, phi: f64) -> f64 {
        let (v, _, _) = self.point_basis(theta, phi);
        v.iter().zip(coeffs).map(|(a, b)| a * b).sum()
    }

    /// Value, colatitude derivative and longitude derivative at a point.
    pub fn eval_point_with_derivatives(&self, coeffs: &[f64], theta: f64, phi: f64) -> (f64, f64, f64) {
        let (v, vt, vp) = self.point_basis(theta, phi);
        let dot = |b: &[f64]| b.iter().zip(coeffs).map(|(a, c)| a * c).sum::<f64>();
        (dot(&v), dot(&vt), dot(&vp))
    }

    /// Evaluates several band-limited fields at the same point.
    pub fn eval_point_many(&self, fields: &[&[f64]], theta: f64, phi: f64) -> Vec<f64> {
        let (v, _, _) = self.point_basis(theta, phi);
        fields.iter().map(|c| v.iter().zip(c.iter()).map(|(a, b)| a * b).sum()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(9);
        for deg in 0..=17 {
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg)).sum();
            let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
            assert!((q - exact).abs() < 1e-14, "degree {deg}: {q} vs {exact}");
        }
    }

    #[test]
    fn basis_is_orthonormal_under_quadrature() {
        let grid = SphereGrid::new(12, false);
        let gram = grid.gram_values(&vec![1.0; grid.n_nodes()]);
        let eye = DMatrix::<f64>::identity(grid.n_modes(), grid.n_modes());
        assert!((gram - eye).amax() < 1e-12);
    }

    #[test]
    fn round_trip_reproduces_coefficients() {
        let grid = SphereGrid::new(10, false);
        let coeffs: Vec<f64> = (0..grid.n_modes()).map(|i| ((i * 7 + 3) % 11) as f64 - 5.0).collect();
        let back = grid.analyze(&grid.synthesize(&coeffs));
        for (a, b) in coeffs.iter().zip(&back) {
            assert!((a - b).abs() < 1e-11);
        }
    }

    #[test]
    fn gradient_gram_matches_laplacian_spectrum() {
        let grid = SphereGrid::new(9, false);
        let k = grid.gram_gradients(&vec![1.0; grid.n_nodes()]);
        let lam = grid.unit_laplacian_eigenvalues();
        for i in 0..grid.n_modes() {
            for j in 0..grid.n_modes() {
                let expect = if i == j { lam[i] } else { 0.0 };
                assert!((k[(i, j)] - expect).abs() < 1e-10, "({i},{j}) {}", k[(i, j)]);
            }
        }
    }

    #[test]
    fn point_evaluation_matches_grid() {
        let grid = SphereGrid::new(8, false);
        let coeffs: Vec<f64> = (0..grid.n_modes()).map(|i| (i as f64 * 0.37).sin()).collect();
        let vals = grid.synthesize(&coeffs);
        let dt = grid.synthesize_dtheta(&coeffs);
        let dp = grid.synthesize_dphi(&coeffs);
        for node in [0, 17, 101, grid.n_nodes() - 1] {
            let (t, p) = grid.node_angles(node);
            let (v, vt, vp) = grid.eval_point_with_derivatives(&coeffs, t, p);
            assert!((v - vals[node]).abs() < 1e-12);
            assert!((vt - dt[node]).abs() < 1e-11);
            assert!((vp - dp[node]).abs() < 1e-11);
        }
    }

    #[test]
    fn y10_is_scaled_cosine() {
        let grid = SphereGrid::new(4, false);
        let i = grid.mode_index(1, 0).unwrap();
        let mut c = vec![0.0; grid.n_modes()];
        c[i] = 1.0;
        let v = grid.eval_point(&c, 0.4, 1.0);
        assert!((v - (3.0 / (4.0 * PI)).sqrt() * 0.4f64.cos()).abs() < 1e-14);
    }
}
