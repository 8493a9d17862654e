//! Generalized eigendecomposition `L φ = λ M φ` and the spectral calculus on it.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::DiscreteManifold;

/// Relative factor of the default merge rule `|λ − λ'| ≤ tol·(1 + λ)`.
pub const DEFAULT_CLUSTER_TOLERANCE: f64 = 1e-8;

/// Mean tolerance (relative to `‖f‖·‖1‖`) for inputs that must be mean-zero.
pub const MEAN_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub eigenvalue: f64,
    pub multiplicity: usize,
    /// First column of the cluster in the eigenvector matrix.
    pub start: usize,
}

impl Cluster {
    pub fn columns(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.multiplicity
    }
}

#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    mass: Vec<f64>,
    values: Vec<f64>,
    vectors: DMatrix<f64>,
    clusters: Vec<Cluster>,
    cluster_tolerance: f64,
    residual: f64,
}

pub fn mass_dot(mass: &[f64], a: &[f64], b: &[f64]) -> f64 {
    mass.iter().zip(a).zip(b).map(|((w, x), y)| w * x * y).sum()
}

pub fn mass_norm(mass: &[f64], a: &[f64]) -> f64 {
    mass_dot(mass, a, a).sqrt()
}

impl SpectralDecomposition {
    /// Full dense decomposition through the symmetric matrix
    /// `M^{-1/2} L M^{-1/2}`. Columns are mass-orthonormal; eigenvalues
    /// within a cluster are snapped to the cluster mean and the per-cluster
    /// basis is fixed by pivoted orthogonalization.
    pub fn decompose(m: &DiscreteManifold, cluster_tolerance: f64) -> Result<Self> {
        if !(cluster_tolerance > 0.0 && cluster_tolerance.is_finite()) {
            return Err(Error::InvalidParameter(format!("cluster tolerance {cluster_tolerance} must be positive")));
        }
        let n = m.n_vertices();
        let mass = m.mass().to_vec();
        let inv_sqrt: Vec<f64> = mass.iter().map(|w| 1.0 / w.sqrt()).collect();
        let l = m.stiffness_matrix();
        let mut a = DMatrix::from_fn(n, n, |i, j| l[(i, j)] * inv_sqrt[i] * inv_sqrt[j]);
        a = (&a + a.transpose()) * 0.5;
        let eig = a.symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let raw_values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
        let mut raw = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])] * inv_sqrt[r]);

        // clusters by chained relative gaps
        let mut bounds = vec![0usize];
        for i in 1..n {
            if raw_values[i] - raw_values[i - 1] > cluster_tolerance * (1.0 + raw_values[i - 1]) {
                bounds.push(i);
            }
        }
        bounds.push(n);
        if bounds[1] != 1 {
            return Err(Error::InvalidManifold(format!(
                "zero eigenvalue has multiplicity {} (graph should be connected)",
                bounds[1]
            )));
        }

        let total_mass: f64 = mass.iter().sum();
        let c0 = 1.0 / total_mass.sqrt();
        for r in 0..n {
            raw[(r, 0)] = c0;
        }
        let mut values = vec![0.0; n];
        let mut vectors = DMatrix::zeros(n, n);
        vectors.column_mut(0).fill(c0);
        let mut clusters = vec![Cluster { eigenvalue: 0.0, multiplicity: 1, start: 0 }];
        for w in bounds.windows(2).skip(1) {
            let (s, e) = (w[0], w[1]);
            let lambda = raw_values[s..e].iter().sum::<f64>() / (e - s) as f64;
            let block = raw.columns(s, e - s).into_owned();
            let canon = canonical_basis(&block);
            vectors.columns_mut(s, e - s).copy_from(&canon);
            values[s..e].iter_mut().for_each(|v| *v = lambda);
            clusters.push(Cluster { eigenvalue: lambda, multiplicity: e - s, start: s });
        }

        let lambda_max = values[n - 1];
        let mut residual = 0.0f64;
        let lphi = &l * &vectors;
        for c in 0..n {
            for r in 0..n {
                residual = residual.max((lphi[(r, c)] - mass[r] * values[c] * vectors[(r, c)]).abs());
            }
        }
        let tolerance = 1e-8 * (1.0 + lambda_max);
        if !(residual <= tolerance) {
            return Err(Error::EigenSolver { residual, tolerance });
        }
        Ok(Self { mass, values, vectors, clusters, cluster_tolerance, residual })
    }

    pub fn n(&self) -> usize {
        self.mass.len()
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Eigenvalue per column (snapped to the cluster value).
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mass-orthonormal eigenvectors as columns.
    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn cluster_tolerance(&self) -> f64 {
        self.cluster_tolerance
    }

    /// Max-abs residual of `LΦ − MΦΛ` recorded at construction.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    /// Smallest positive eigenvalue.
    pub fn lambda_1(&self) -> f64 {
        self.clusters[1].eigenvalue
    }

    pub fn lambda_max(&self) -> f64 {
        self.values[self.n() - 1]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.vectors.column(j).iter().copied().collect()
    }

    /// Mass-weighted coefficients `(f, φ_j)` for every column.
    pub fn coefficients(&self, f: &[f64]) -> DVector<f64> {
        let mf = DVector::from_iterator(self.n(), f.iter().zip(&self.mass).map(|(x, w)| x * w));
        self.vectors.tr_mul(&mf)
    }

    /// `Σ_j g(λ_j) (f, φ_j) φ_j`.
    pub fn apply_function(&self, f: &[f64], g: impl Fn(f64) -> f64) -> Vec<f64> {
        let mut c = self.coefficients(f);
        for (cj, &l) in c.iter_mut().zip(&self.values) {
            *cj *= g(l);
        }
        (&self.vectors * c).iter().copied().collect()
    }

    /// Dense matrix of `g(−Δ)` acting on vertex values: `Φ g(Λ) Φᵀ M`.
    pub fn operator_matrix(&self, g: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let n = self.n();
        let mut scaled = self.vectors.clone();
        for (j, &l) in self.values.iter().enumerate() {
            let gj = g(l);
            scaled.column_mut(j).scale_mut(gj);
        }
        let mut out = scaled * self.vectors.transpose();
        for c in 0..n {
            out.column_mut(c).scale_mut(self.mass[c]);
        }
        out
    }

    pub fn project(&self, f: &[f64], k: usize) -> Result<Vec<f64>> {
        let cl = self
            .clusters
            .get(k)
            .ok_or_else(|| Error::InvalidParameter(format!("cluster {k} out of range ({})", self.clusters.len())))?;
        let mut out = vec![0.0; self.n()];
        for j in cl.columns() {
            let col = self.vectors.column(j);
            let c: f64 = col.iter().zip(f).zip(&self.mass).map(|((p, x), w)| p * x * w).sum();
            for (o, p) in out.iter_mut().zip(col.iter()) {
                *o += c * p;
            }
        }
        Ok(out)
    }

    /// `Σ_k λ_k^α π_k f`; `α` may exceed one.
    pub fn frac_power_apply(&self, alpha: f64, f: &[f64]) -> Result<Vec<f64>> {
        check_alpha(alpha)?;
        Ok(self.apply_function(f, |l| if l == 0.0 { 0.0 } else { l.powf(alpha) }))
    }

    /// `Σ_{k≥1} λ_k^{−α} π_k f` for mean-zero `f`.
    pub fn inv_frac_power_apply(&self, alpha: f64, f: &[f64]) -> Result<Vec<f64>> {
        check_alpha(alpha)?;
        self.check_mean_zero(f)?;
        Ok(self.apply_function(f, |l| if l == 0.0 { 0.0 } else { l.powf(-alpha) }))
    }

    pub fn check_mean_zero(&self, f: &[f64]) -> Result<()> {
        let total: f64 = self.mass.iter().sum();
        let integral: f64 = f.iter().zip(&self.mass).map(|(x, w)| x * w).sum();
        let scale = mass_norm(&self.mass, f) * total.sqrt();
        if integral.abs() > MEAN_TOLERANCE * scale.max(f64::MIN_POSITIVE) && integral != 0.0 {
            return Err(Error::NonzeroMean { mean: integral / total, tolerance: MEAN_TOLERANCE * scale / total });
        }
        Ok(())
    }

    pub fn heat_apply(&self, t: f64, f: &[f64]) -> Result<Vec<f64>> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::InvalidParameter(format!("heat time {t} must be finite and nonnegative")));
        }
        Ok(self.apply_function(f, |l| (-t * l).exp()))
    }

    /// Heat kernel with respect to the mass measure:
    /// `Σ_j e^{−tλ_j} φ_j(x) φ_j(y)`.
    pub fn heat_kernel_entry(&self, t: f64, x: usize, y: usize) -> Result<f64> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::InvalidParameter(format!("heat kernel time {t} must be positive")));
        }
        let n = self.n();
        if x >= n || y >= n {
            return Err(Error::IndexOutOfRange { index: x.max(y), n });
        }
        Ok((0..n).map(|j| (-t * self.values[j]).exp() * self.vectors[(x, j)] * self.vectors[(y, j)]).sum())
    }

    /// Exact cosine evolution `Σ_k cos(√λ_k t) π_k f` (zero initial velocity).
    pub fn wave_evolve_spectral(&self, f: &[f64], t: f64) -> Vec<f64> {
        self.apply_function(f, |l| (l.sqrt() * t).cos())
    }

    /// `‖(1 + λ)^{s/2} coefficients‖`.
    pub fn sobolev_norm(&self, s: f64, f: &[f64]) -> f64 {
        let c = self.coefficients(f);
        c.iter().zip(&self.values).map(|(cj, l)| (1.0 + l).powf(s) * cj * cj).sum::<f64>().sqrt()
    }

    /// Bound `e^{−tλ_K}` on the heat semigroup restricted to columns `≥ K`.
    pub fn heat_truncation_bound(&self, t: f64, k: usize) -> f64 {
        self.values.get(k).map_or(0.0, |l| (-t * l).exp())
    }

    /// One row per eigenpair: `cluster,eigenvalue,v_0,…,v_{n−1}`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("cluster,eigenvalue");
        for i in 0..self.n() {
            write!(s, ",v{i}").unwrap();
        }
        s.push('\n');
        for (k, cl) in self.clusters.iter().enumerate() {
            for j in cl.columns() {
                write!(s, "{k},{:e}", self.values[j]).unwrap();
                for r in 0..self.n() {
                    write!(s, ",{:e}", self.vectors[(r, j)]).unwrap();
                }
                s.push('\n');
            }
        }
        s
    }

    /// Counting function `N(λ)` against `λ^{n/2}` at each cluster.
    pub fn weyl_curve(&self, dim: usize) -> Vec<(f64, usize, f64)> {
        self.clusters
            .iter()
            .map(|c| (c.eigenvalue, c.start + c.multiplicity, c.eigenvalue.powf(dim as f64 / 2.0)))
            .collect()
    }

    /// Per column `(λ, max|φ|, λ^{(n−1)/4})`.
    pub fn sup_norm_diagnostic(&self, dim: usize) -> Vec<(f64, f64, f64)> {
        (0..self.n())
            .map(|j| {
                let sup = self.vectors.column(j).amax();
                (self.values[j], sup, self.values[j].powf((dim as f64 - 1.0) / 4.0))
            })
            .collect()
    }

    /// Index of the cluster containing column `j`.
    pub fn cluster_of_column(&self, j: usize) -> usize {
        self.clusters.partition_point(|c| c.start + c.multiplicity <= j)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!("fractional order {alpha} must be positive")));
    }
    Ok(())
}

/// Deterministic mass-orthonormal basis of the span of `block` (whose
/// columns are already mass-orthonormal). Repeatedly takes the span element
/// with the largest value at the vertex of largest row norm (lowest index on
/// near-ties), then deflates it.
fn canonical_basis(block: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, d) = block.shape();
    let mut out = DMatrix::zeros(n, d);
    let mut rest = block.clone();
    for k in 0..d {
        let r = rest.ncols();
        let norms: Vec<f64> = (0..n).map(|i| rest.row(i).norm()).collect();
        let top = norms.iter().cloned().fold(0.0, f64::max);
        let pivot = norms.iter().position(|&v| v >= top * (1.0 - 1e-7)).unwrap();
        let c = rest.row(pivot).transpose() / norms[pivot];
        out.column_mut(k).copy_from(&(&rest * &c));
        if r == 1 {
            break;
        }
        // Householder reflector sending c to e_1; its remaining columns span c^⊥
        let mut w = c.clone();
        w[0] -= 1.0;
        let wn = w.norm();
        let h = if wn < 1e-300 {
            DMatrix::identity(r, r)
        } else {
            let w = w / wn;
            DMatrix::identity(r, r) - (&w * w.transpose()) * 2.0
        };
        rest = &rest * h.columns(1, r - 1);
    }
    out
}

/// Fit of a Gaussian-type upper envelope `K(t,x,y) ≤ C exp(−c d(x,y)²/t)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GaussianFit {
    pub big_c: f64,
    pub small_c: f64,
}

/// Least-squares slope of `log K` against `d²/t` over vertices `y ≠ x`,
/// then the smallest `C` that makes the envelope hold everywhere.
pub fn fit_gaussian_envelope(spec: &SpectralDecomposition, distances: &[f64], t: f64, x: usize) -> Result<GaussianFit> {
    let mut pts = Vec::new();
    for (y, &d) in distances.iter().enumerate() {
        let k = spec.heat_kernel_entry(t, x, y)?;
        if k > 0.0 {
            pts.push((d * d / t, k.ln()));
        }
    }
    if pts.len() < 2 {
        return Err(Error::Fit("too few positive kernel values".into()));
    }
    let np = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / np;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / np;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("all distances equal".into()));
    }
    let small_c = (-sxy / sxx).max(0.0);
    let log_c = pts.iter().map(|p| p.1 + small_c * p.0).fold(f64::NEG_INFINITY, f64::max);
    Ok(GaussianFit { big_c: log_c.exp(), small_c })
}

/// Result of [`wave_evolve_local`]: snapshots at steps `0..=steps`.
#[derive(Clone, Debug)]
pub struct WaveSeries {
    pub dt: f64,
    pub snapshots: Vec<Vec<f64>>,
}

/// Stability limit `2/√ρ` of the leapfrog scheme, `ρ` a Gershgorin bound.
pub fn leapfrog_limit(m: &DiscreteManifold) -> f64 {
    2.0 / m.spectral_radius_bound().sqrt()
}

/// Explicit leapfrog for `∂²U = ΔU`, `U(0) = f`, `∂U(0) = 0`. Each step uses
/// the one-hop stencil only, so the support grows by at most one hop per step.
pub fn wave_evolve_local(m: &DiscreteManifold, f: &[f64], dt: f64, steps: usize) -> Result<WaveSeries> {
    let limit = leapfrog_limit(m);
    if !(dt > 0.0) || dt > limit {
        return Err(Error::Unstable { dt, limit });
    }
    if f.len() != m.n_vertices() {
        return Err(Error::InvalidParameter(format!("function has length {}, expected {}", f.len(), m.n_vertices())));
    }
    let dt2 = dt * dt;
    let mut snapshots = vec![f.to_vec()];
    if steps == 0 {
        return Ok(WaveSeries { dt, snapshots });
    }
    let lf = m.apply_neg_laplacian(f);
    let u1: Vec<f64> = f.iter().zip(&lf).map(|(u, l)| u - 0.5 * dt2 * l).collect();
    snapshots.push(u1);
    for s in 1..steps {
        let cur = &snapshots[s];
        let prev = &snapshots[s - 1];
        let lc = m.apply_neg_laplacian(cur);
        let next = (0..cur.len()).map(|i| 2.0 * cur[i] - prev[i] - dt2 * lc[i]).collect();
        snapshots.push(next);
    }
    Ok(WaveSeries { dt, snapshots })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn torus(sides: &[usize]) -> (DiscreteManifold, SpectralDecomposition) {
        let m = DiscreteManifold::flat_torus(sides, 1.0).unwrap();
        let s = SpectralDecomposition::decompose(&m, DEFAULT_CLUSTER_TOLERANCE).unwrap();
        (m, s)
    }

    fn random_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn cluster_summary(s: &SpectralDecomposition) -> Vec<(f64, usize)> {
        s.clusters().iter().map(|c| (c.eigenvalue, c.multiplicity)).collect()
    }

    #[test]
    fn torus_3x3_clusters() {
        let (_, s) = torus(&[3, 3]);
        let cl = cluster_summary(&s);
        assert_eq!(cl.len(), 3);
        for ((l, d), (el, ed)) in cl.iter().zip([(0.0, 1), (3.0, 4), (6.0, 4)]) {
            assert!((l - el).abs() < 1e-12, "{l} vs {el}");
            assert_eq!(*d, ed);
        }
    }

    #[test]
    fn cycle_4_clusters() {
        let m = DiscreteManifold::cycle(4, 1.0).unwrap();
        let s = SpectralDecomposition::decompose(&m, DEFAULT_CLUSTER_TOLERANCE).unwrap();
        let cl = cluster_summary(&s);
        assert_eq!(cl.iter().map(|c| c.1).collect::<Vec<_>>(), vec![1, 2, 1]);
        assert!((cl[1].0 - 2.0).abs() < 1e-12 && (cl[2].0 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn torus_4x4_matches_closed_form() {
        let (_, s) = torus(&[4, 4]);
        let axis: Vec<f64> = (0..4).map(|j| 2.0 - 2.0 * (2.0 * std::f64::consts::PI * j as f64 / 4.0).cos()).collect();
        let mut expected: Vec<f64> = axis.iter().flat_map(|a| axis.iter().map(move |b| a + b)).collect();
        expected.sort_by(f64::total_cmp);
        for (v, e) in s.values().iter().zip(&expected) {
            assert!((v - e).abs() < 1e-12);
        }
    }

    #[test]
    fn mass_orthonormal_on_weighted_graph() {
        let m = DiscreteManifold::random_graph(20, 15, 9).unwrap();
        let s = SpectralDecomposition::decompose(&m, DEFAULT_CLUSTER_TOLERANCE).unwrap();
        let mm = DMatrix::from_diagonal(&DVector::from_column_slice(m.mass()));
        let g = s.vectors().transpose() * mm * s.vectors();
        assert!((g - DMatrix::identity(20, 20)).amax() < 1e-12);
        let c0 = 1.0 / m.mass().iter().sum::<f64>().sqrt();
        assert!(s.vectors().column(0).iter().all(|&v| v == c0));
    }

    #[test]
    fn canonical_basis_independent_of_raw_rotation() {
        let (m, s) = torus(&[6, 6]);
        let cl = s.clusters()[1].clone();
        let block = s.vectors().columns(cl.start, cl.multiplicity).into_owned();
        // rotate by a random orthogonal matrix
        let q = DMatrix::from_fn(cl.multiplicity, cl.multiplicity, |i, j| ((i * 7 + j * 3) as f64).sin()).qr().q();
        let rotated = &block * q;
        let canon = canonical_basis(&rotated);
        assert!((canon - block).amax() < 1e-10);
        let _ = m;
    }

    #[test]
    fn frac_power_alpha_one_is_laplacian() {
        let m = DiscreteManifold::random_graph(15, 10, 4).unwrap();
        let s = SpectralDecomposition::decompose(&m, DEFAULT_CLUSTER_TOLERANCE).unwrap();
        let f = random_vec(15, 1);
        let a = s.frac_power_apply(1.0, &f).unwrap();
        let b = m.apply_neg_laplacian(&f);
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-10));
    }

    #[test]
    fn eigenfunction_scaling_and_constant() {
        let (_, s) = torus(&[4, 4]);
        let k = s.clusters().iter().position(|c| (c.eigenvalue - 2.0).abs() < 1e-9).unwrap();
        let phi = s.column(s.clusters()[k].start);
        let out = s.frac_power_apply(0.5, &phi).unwrap();
        assert!(out.iter().zip(&phi).all(|(o, p)| (o - 2f64.sqrt() * p).abs() < 1e-12));
        let ones = vec![1.0; 16];
        assert!(s.frac_power_apply(0.3, &ones).unwrap().iter().all(|v| v.abs() < 1e-12));
        assert!(matches!(s.inv_frac_power_apply(0.3, &ones), Err(Error::NonzeroMean { .. })));
    }

    #[test]
    fn heat_kernel_stochastic_and_symmetric() {
        let m = DiscreteManifold::random_graph(12, 8, 2).unwrap();
        let s = SpectralDecomposition::decompose(&m, DEFAULT_CLUSTER_TOLERANCE).unwrap();
        for x in 0..12 {
            let row: f64 = (0..12).map(|y| m.mass()[y] * s.heat_kernel_entry(0.7, x, y).unwrap()).sum();
            assert!((row - 1.0).abs() < 1e-9);
            for y in 0..12 {
                let (a, b) = (s.heat_kernel_entry(0.7, x, y).unwrap(), s.heat_kernel_entry(0.7, y, x).unwrap());
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gaussian_envelope_on_cycle() {
        let m = DiscreteManifold::cycle(16, 1.0).unwrap();
        let s = SpectralDecomposition::decompose(&m, DEFAULT_CLUSTER_TOLERANCE).unwrap();
        let d = crate::mesh::dijkstra(&m, 0).unwrap();
        let k8 = s.heat_kernel_entry(0.1, 0, 8).unwrap();
        let k1 = s.heat_kernel_entry(0.1, 0, 1).unwrap();
        assert!(k8 < 1e-10 * k1);
        let fit = fit_gaussian_envelope(&s, &d, 0.1, 0).unwrap();
        assert!(fit.small_c > 0.0);
        for y in 0..16 {
            let k = s.heat_kernel_entry(0.1, 0, y).unwrap();
            assert!(k <= fit.big_c * (-fit.small_c * d[y] * d[y] / 0.1).exp() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn local_wave_is_finite_speed() {
        let m = DiscreteManifold::cycle(16, 1.0).unwrap();
        let mut f = vec![0.0; 16];
        f[0] = 1.0;
        let series = wave_evolve_local(&m, &f, 0.5, 7).unwrap();
        let hops = m.hop_distances(0);
        for (s, snap) in series.snapshots.iter().enumerate() {
            for v in 0..16 {
                if hops[v] > s {
                    assert_eq!(snap[v], 0.0, "step {s} vertex {v}");
                }
            }
        }
        assert!(matches!(wave_evolve_local(&m, &f, 1.5, 3), Err(Error::Unstable { .. })));
    }

    #[test]
    fn local_wave_tracks_spectral_wave() {
        let (m, s) = torus(&[8, 8]);
        let f = s.column(3);
        let dt = 0.01;
        let series = wave_evolve_local(&m, &f, dt, 100).unwrap();
        let exact = s.wave_evolve_spectral(&f, 1.0);
        let err = series.snapshots[100].iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn sobolev_norm_single_mode() {
        let (_, s) = torus(&[4, 4]);
        let phi = s.column(5);
        let l = s.values()[5];
        assert!((s.sobolev_norm(0.0, &phi) - 1.0).abs() < 1e-12);
        assert!((s.sobolev_norm(2.0, &phi) - (1.0 + l)).abs() < 1e-12);
    }
}
