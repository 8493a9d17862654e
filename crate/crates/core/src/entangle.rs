//! Multi-function unique continuation diagnostics.
//!
//! Given orders `α_j` and coefficients `b_j`, the constraint operator maps
//! functions `v_1, …, v_N` vanishing on a set containing `O` to
//! `(Σ_j b_j (−Δ)^{α_j} v_j)|_O`. Injectivity of this map is the discrete
//! entanglement statement; for `N = 1` it is global unique continuation.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatrep::{fit_decay, moment_functional, DecayFits, TimeGrid};
use crate::mesh::{enlarge, DiscreteManifold, ObservationSet};
use crate::spectral::{mass_norm, SpectralDecomposition};

/// Normalized singular value below which a nullspace is declared.
pub const NULLSPACE_THRESHOLD: f64 = 1e-8;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EntangleConfig {
    pub alphas: Vec<f64>,
    pub coefficients: Vec<f64>,
    /// Sorted set on which every `v_j` vanishes; contains `O`.
    pub vanish_set: Vec<usize>,
    pub obs: ObservationSet,
}

impl EntangleConfig {
    pub fn new(alphas: Vec<f64>, coefficients: Vec<f64>, mut vanish_set: Vec<usize>, obs: ObservationSet) -> Result<Self> {
        if alphas.is_empty() || alphas.len() != coefficients.len() {
            return Err(Error::InvalidParameter(format!(
                "{} orders and {} coefficients",
                alphas.len(),
                coefficients.len()
            )));
        }
        for &a in &alphas {
            if !(a > 0.0 && a.is_finite()) || (a - a.round()).abs() < 1e-12 {
                return Err(Error::InvalidParameter(format!("order {a} must be positive and non-integer")));
            }
        }
        for i in 0..alphas.len() {
            for j in 0..i {
                if alphas[i] == alphas[j] {
                    return Err(Error::InvalidParameter(format!("orders {i} and {j} coincide")));
                }
            }
        }
        if let Some(b) = coefficients.iter().find(|b| !(b.is_finite() && **b != 0.0)) {
            return Err(Error::InvalidParameter(format!("coefficient {b} must be finite and nonzero")));
        }
        vanish_set.sort_unstable();
        vanish_set.dedup();
        let n = obs.n_vertices();
        if let Some(&x) = vanish_set.iter().find(|&&x| x >= n) {
            return Err(Error::IndexOutOfRange { index: x, n });
        }
        if let Some(&x) = obs.indices().iter().find(|x| vanish_set.binary_search(x).is_err()) {
            return Err(Error::InvalidParameter(format!("vanish set misses vertex {x} of O")));
        }
        Ok(Self { alphas, coefficients, vanish_set, obs })
    }

    pub fn n_functions(&self) -> usize {
        self.alphas.len()
    }

    /// True when no two orders differ by an integer.
    pub fn integer_shift_free(&self) -> bool {
        let a = &self.alphas;
        (0..a.len()).all(|i| (0..i).all(|j| {
            let d = a[i] - a[j];
            (d - d.round()).abs() > 1e-12
        }))
    }

    /// Vertices where the `v_j` may be nonzero.
    pub fn interior(&self) -> Vec<usize> {
        (0..self.obs.n_vertices()).filter(|x| self.vanish_set.binary_search(x).is_err()).collect()
    }
}

#[derive(Clone, Debug)]
pub struct EntangleOperator {
    pub matrix: DMatrix<f64>,
    pub interior: Vec<usize>,
    pub n_functions: usize,
}

impl EntangleOperator {
    /// Stacks full vertex functions into the operator's input vector.
    pub fn stack(&self, vs: &[Vec<f64>]) -> Vec<f64> {
        vs.iter().flat_map(|v| self.interior.iter().map(move |&y| v[y])).collect()
    }

    /// Splits an input vector back into full vertex functions.
    pub fn unstack(&self, x: &[f64], n_vertices: usize) -> Vec<Vec<f64>> {
        let k = self.interior.len();
        (0..self.n_functions)
            .map(|j| {
                let mut v = vec![0.0; n_vertices];
                for (i, &y) in self.interior.iter().enumerate() {
                    v[y] = x[j * k + i];
                }
                v
            })
            .collect()
    }
}

/// Dense `|O| × N·|interior|` matrix; column `(j, y)` is
/// `b_j ((−Δ)^{α_j} e_y)|_O`.
pub fn assemble_operator(spec: &SpectralDecomposition, cfg: &EntangleConfig) -> Result<EntangleOperator> {
    let interior = cfg.interior();
    if interior.is_empty() {
        return Err(Error::InvalidParameter("vanish set leaves an empty interior".into()));
    }
    let n = spec.n();
    let obs = cfg.obs.indices();
    let k = interior.len();
    let cols: Vec<Vec<f64>> = (0..cfg.n_functions() * k)
        .into_par_iter()
        .map(|c| {
            let (j, i) = (c / k, c % k);
            let mut e = vec![0.0; n];
            e[interior[i]] = 1.0;
            let out = spec.frac_power_apply(cfg.alphas[j], &e)?;
            Ok(obs.iter().map(|&x| cfg.coefficients[j] * out[x]).collect())
        })
        .collect::<Result<_>>()?;
    let matrix = DMatrix::from_fn(obs.len(), cols.len(), |r, c| cols[c][r]);
    Ok(EntangleOperator { matrix, interior, n_functions: cfg.n_functions() })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InjectivityReport {
    pub rows: usize,
    pub cols: usize,
    pub sigma_max: f64,
    /// Smallest of the `cols` singular values (zero when `cols > rows`).
    pub sigma_min: f64,
    pub sigma_min_normalized: f64,
    pub threshold: f64,
    /// Right singular vectors with normalized σ below the threshold.
    pub nullspace_candidates: Vec<Vec<f64>>,
}

impl InjectivityReport {
    pub fn injective(&self) -> bool {
        self.nullspace_candidates.is_empty()
    }
}

pub fn injectivity_diagnostic(op: &EntangleOperator, threshold: f64) -> InjectivityReport {
    let e = &op.matrix;
    let (rows, cols) = e.shape();
    // zero-pad wide matrices so the SVD returns a full right basis
    let padded = if rows < cols {
        let mut p = DMatrix::zeros(cols, cols);
        p.rows_mut(0, rows).copy_from(e);
        p
    } else {
        e.clone()
    };
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("requested Vᵀ");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sigma_max = svd.singular_values[order[0]];
    let sigma_min = svd.singular_values[order[cols - 1]];
    let normalized = if sigma_max > 0.0 { sigma_min / sigma_max } else { 0.0 };
    let nullspace_candidates = order
        .iter()
        .filter(|&&i| sigma_max == 0.0 || svd.singular_values[i] < threshold * sigma_max)
        .map(|&i| vt.row(i).iter().copied().collect())
        .collect();
    InjectivityReport { rows, cols, sigma_max, sigma_min, sigma_min_normalized: normalized, threshold, nullspace_candidates }
}

/// Normalized residual `‖E x‖ / (σ_max ‖x‖)` of a proposed nullvector.
pub fn certify_nullvector(op: &EntangleOperator, sigma_max: f64, x: &[f64]) -> f64 {
    let xv = nalgebra::DVector::from_column_slice(x);
    (&op.matrix * &xv).norm() / (sigma_max * xv.norm())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IntegerShiftCounterexample {
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
    /// `‖(−Δ)^α v1 − (−Δ)^{α+k} v2‖` in the mass norm, over the whole manifold.
    pub residual: f64,
    pub config: EntangleConfig,
}

/// `v2 = v` random on the complement of `enlarge(O, k)`, `v1 = (−Δ)^k v`
/// through the `k`-hop stencil, so both vanish on `O` while
/// `(−Δ)^α v1 = (−Δ)^{α+k} v2`.
pub fn counterexample_integer_shift(
    m: &DiscreteManifold,
    spec: &SpectralDecomposition,
    obs: &ObservationSet,
    alpha: f64,
    k: usize,
    seed: u64,
) -> Result<IntegerShiftCounterexample> {
    if !(alpha > 0.0 && alpha < 1.0) || k == 0 {
        return Err(Error::InvalidParameter(format!("need α in (0,1) and k ≥ 1, got α={alpha}, k={k}")));
    }
    let n = m.n_vertices();
    let grown = enlarge(m, obs.indices(), k);
    let free: Vec<usize> = (0..n).filter(|x| grown.binary_search(x).is_err()).collect();
    if free.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "enlarge(O, {k}) covers the manifold; need a vertex at distance > {k} from O"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = vec![0.0; n];
    for &x in &free {
        v[x] = rng.gen_range(0.5..1.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    }
    let mut v1 = v.clone();
    for _ in 0..k {
        v1 = m.apply_neg_laplacian(&v1);
    }
    let lhs = spec.frac_power_apply(alpha, &v1)?;
    let rhs = spec.frac_power_apply(alpha + k as f64, &v)?;
    let diff: Vec<f64> = lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect();
    let residual = mass_norm(spec.mass(), &diff);
    let interior = enlarge(m, &free, k);
    let vanish: Vec<usize> = (0..n).filter(|x| interior.binary_search(x).is_err()).collect();
    let config = EntangleConfig::new(vec![alpha, alpha + k as f64], vec![1.0, -1.0], vanish, obs.clone())?;
    Ok(IntegerShiftCounterexample { v1, v2: v, residual, config })
}

/// `σ_min/σ_max` of the two-function operator with `α₂` moving toward `α₁ + 1`.
pub fn homotopy_curve(spec: &SpectralDecomposition, base: &EntangleConfig, alpha2: &[f64]) -> Result<Vec<(f64, f64)>> {
    alpha2
        .iter()
        .map(|&a2| {
            let cfg = EntangleConfig::new(
                vec![base.alphas[0], a2],
                base.coefficients[..2].to_vec(),
                base.vanish_set.clone(),
                base.obs.clone(),
            )?;
            let op = assemble_operator(spec, &cfg)?;
            Ok((a2, injectivity_diagnostic(&op, NULLSPACE_THRESHOLD).sigma_min_normalized))
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MomentSeries {
    pub probe: usize,
    pub grid: TimeGrid,
    /// `f_j` sampled at the grid nodes, `b_j` included.
    pub samples: Vec<Vec<f64>>,
    pub alphas: Vec<f64>,
    pub fits: Vec<DecayFits>,
    /// Hop distance from the probe to the support of each `v_j`.
    pub distances: Vec<usize>,
    /// Largest moment order with an integrable `t → 0` singularity for every `j`.
    pub max_moment: u32,
    pub warning: Option<String>,
}

impl MomentSeries {
    pub fn moment(&self, m: u32) -> Result<f64> {
        if m > self.max_moment {
            return Err(Error::InvalidParameter(format!(
                "moment order {m} exceeds the integrable range 1..={} at this probe",
                self.max_moment
            )));
        }
        moment_functional(&self.grid, &self.samples, &self.alphas, m)
    }
}

/// Probe in `O` farthest (in hops) from the interior, lowest index on ties.
pub fn default_probe(m: &DiscreteManifold, cfg: &EntangleConfig) -> usize {
    let d = m.multi_source_hops(&cfg.interior());
    *cfg
        .obs
        .indices()
        .iter()
        .max_by(|&&a, &&b| d[a].cmp(&d[b]).then(b.cmp(&a)))
        .expect("O is nonempty")
}

const TAYLOR_TERMS: usize = 80;

/// Samples `f_j(t) = (−b_j sin(πα_j)/π) (e^{tΔ}Δv_j)(x) t^{−(1+α_j)}`.
///
/// For `t ≤ 2/ρ` (`ρ` a spectral radius bound) the heat factor is summed as a
/// Taylor series in the sparse stencil, which keeps the exact zeros of the
/// short-time expansion at distant probes; larger `t` use the eigenbasis.
pub fn heat_moment_series(
    m: &DiscreteManifold,
    spec: &SpectralDecomposition,
    cfg: &EntangleConfig,
    vs: &[Vec<f64>],
    probe: Option<usize>,
    grid: &TimeGrid,
) -> Result<MomentSeries> {
    if vs.len() != cfg.n_functions() {
        return Err(Error::InvalidParameter(format!("{} functions for {} orders", vs.len(), cfg.n_functions())));
    }
    let n = m.n_vertices();
    for (j, v) in vs.iter().enumerate() {
        if let Some(&x) = cfg.vanish_set.iter().find(|&&x| v[x] != 0.0) {
            return Err(Error::Hypothesis(format!("v_{j} is nonzero at vertex {x} of the vanish set")));
        }
    }
    let x = probe.unwrap_or_else(|| default_probe(m, cfg));
    if x >= n {
        return Err(Error::IndexOutOfRange { index: x, n });
    }
    let rho = m.spectral_radius_bound();
    let t_switch = 2.0 / rho;
    let mut samples = Vec::new();
    let mut distances = Vec::new();
    let mut max_moment = grid.max_moment;
    for (j, v) in vs.iter().enumerate() {
        let al = cfg.alphas[j];
        let pref = -cfg.coefficients[j] * (PI * al).sin() / PI;
        // w = Δv; Taylor coefficients a_k = (Δ^k w)(x)
        let w: Vec<f64> = m.apply_neg_laplacian(v).iter().map(|y| -y).collect();
        let mut taylor = Vec::with_capacity(TAYLOR_TERMS);
        let mut cur = w.clone();
        for _ in 0..TAYLOR_TERMS {
            taylor.push(cur[x]);
            cur = m.apply_neg_laplacian(&cur).iter().map(|y| -y).collect();
        }
        let coeffs = spec.coefficients(&w);
        let phi_x: Vec<f64> = (0..n).map(|c| spec.vectors()[(x, c)]).collect();
        let series: Vec<f64> = grid
            .nodes
            .iter()
            .map(|&t| {
                let heat = if t <= t_switch {
                    let mut term = 1.0;
                    let mut acc = 0.0;
                    for (k, a) in taylor.iter().enumerate() {
                        if k > 0 {
                            term *= t / k as f64;
                        }
                        acc += a * term;
                    }
                    acc
                } else {
                    (0..n).map(|c| (-t * spec.values()[c]).exp() * coeffs[c] * phi_x[c]).sum()
                };
                pref * heat * t.powf(-(1.0 + al))
            })
            .collect();
        let support: Vec<usize> = (0..n).filter(|&y| v[y] != 0.0).collect();
        let d = if support.is_empty() { usize::MAX } else { m.multi_source_hops(&support)[x] };
        if d != usize::MAX {
            // f_j t^{−m} ~ t^{d−2−α_j−m} near zero; integrable iff m < d − 1 − α_j
            let limit = (d as f64 - 1.0 - al).ceil() - 1.0;
            max_moment = max_moment.min(limit.max(0.0) as u32);
        }
        distances.push(d);
        samples.push(series);
    }
    let fits = samples.iter().map(|s| fit_decay(&grid.nodes, s)).collect();
    let interior_dist = m.multi_source_hops(&cfg.interior())[x];
    let warning = (!cfg.obs.contains(x) || interior_dist < 2)
        .then(|| format!("probe {x} is {interior_dist} hops from the interior; decay fit degenerates"));
    Ok(MomentSeries { probe: x, grid: grid.clone(), samples, alphas: cfg.alphas.clone(), fits, distances, max_moment, warning })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::DEFAULT_CLUSTER_TOLERANCE;

    fn torus8() -> (DiscreteManifold, SpectralDecomposition) {
        let m = DiscreteManifold::flat_torus(&[8, 8], 1.0).unwrap();
        let s = SpectralDecomposition::decompose(&m, DEFAULT_CLUSTER_TOLERANCE).unwrap();
        (m, s)
    }

    fn far_from(m: &DiscreteManifold, c: usize, r: usize) -> ObservationSet {
        let d = m.hop_distances(c);
        ObservationSet::new((0..m.n_vertices()).filter(|&x| d[x] >= r).collect(), m.n_vertices()).unwrap()
    }

    #[test]
    fn config_validation() {
        let m = DiscreteManifold::cycle(8, 1.0).unwrap();
        let o = ObservationSet::new(vec![0, 1], 8).unwrap();
        assert!(EntangleConfig::new(vec![0.5], vec![0.0], vec![0, 1], o.clone()).is_err());
        assert!(EntangleConfig::new(vec![1.0], vec![1.0], vec![0, 1], o.clone()).is_err());
        assert!(EntangleConfig::new(vec![0.5, 0.5], vec![1.0, 1.0], vec![0, 1], o.clone()).is_err());
        assert!(EntangleConfig::new(vec![0.5], vec![1.0], vec![0], o.clone()).is_err());
        let c = EntangleConfig::new(vec![0.3, 1.3], vec![1.0, -1.0], vec![0, 1], o.clone()).unwrap();
        assert!(!c.integer_shift_free());
        let c = EntangleConfig::new(vec![0.3, 0.6], vec![1.0, -1.0], vec![0, 1], o).unwrap();
        assert!(c.integer_shift_free());
        let _ = m;
    }

    #[test]
    fn columns_match_frac_power() {
        let (m, s) = torus8();
        let obs = far_from(&m, 0, 3);
        let cfg = EntangleConfig::new(vec![0.3, 0.6], vec![1.0, -2.0], obs.indices().to_vec(), obs.clone()).unwrap();
        let op = assemble_operator(&s, &cfg).unwrap();
        assert_eq!(op.matrix.shape(), (obs.len(), 2 * 13));
        let frac = s.operator_matrix(|l| if l == 0.0 { 0.0 } else { l.powf(0.6) });
        for (i, &y) in op.interior.iter().enumerate() {
            for (r, &x) in obs.indices().iter().enumerate() {
                assert!((op.matrix[(r, 13 + i)] + 2.0 * frac[(x, y)]).abs() < 1e-12);
            }
        }
        let zero = nalgebra::DVector::zeros(26);
        assert!((&op.matrix * zero).amax() == 0.0);
    }

    #[test]
    fn wide_operator_reports_structural_nullspace() {
        let (m, s) = torus8();
        let obs = far_from(&m, 0, 6);
        let cfg = EntangleConfig::new(vec![0.5], vec![1.0], obs.indices().to_vec(), obs).unwrap();
        let op = assemble_operator(&s, &cfg).unwrap();
        assert!(op.matrix.nrows() < op.matrix.ncols());
        let rep = injectivity_diagnostic(&op, NULLSPACE_THRESHOLD);
        assert_eq!(rep.sigma_min, 0.0);
        assert!(rep.nullspace_candidates.len() >= op.matrix.ncols() - op.matrix.nrows());
    }

    #[test]
    fn integer_shift_gives_nullvector() {
        let (m, s) = torus8();
        let obs = far_from(&m, 0, 2);
        let ce = counterexample_integer_shift(&m, &s, &obs, 0.4, 1, 5).unwrap();
        assert!(ce.residual < 1e-10);
        assert!(obs.indices().iter().all(|&x| ce.v1[x] == 0.0 && ce.v2[x] == 0.0));
        assert!(ce.v1.iter().any(|&x| x != 0.0));
        let op = assemble_operator(&s, &ce.config).unwrap();
        let rep = injectivity_diagnostic(&op, NULLSPACE_THRESHOLD);
        assert!(rep.sigma_min_normalized < 1e-8);
        let x = op.stack(&[ce.v1.clone(), ce.v2.clone()]);
        assert!(certify_nullvector(&op, rep.sigma_max, &x) < 1e-10);
    }

    #[test]
    fn zero_functions_give_zero_series() {
        let (m, s) = torus8();
        let obs = far_from(&m, 0, 3);
        let cfg = EntangleConfig::new(vec![0.5], vec![1.0], obs.indices().to_vec(), obs).unwrap();
        let grid = TimeGrid::log_panels(1e-6, 60.0, 2, 6).unwrap();
        let ms = heat_moment_series(&m, &s, &cfg, &[vec![0.0; 64]], None, &grid).unwrap();
        assert!(ms.samples[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn taylor_and_spectral_heat_agree() {
        let (m, s) = torus8();
        let obs = far_from(&m, 0, 2);
        let ce = counterexample_integer_shift(&m, &s, &obs, 0.4, 1, 5).unwrap();
        let grid = TimeGrid::log_panels(0.01, 1.0, 2, 6).unwrap();
        let probe = m.grid_vertex(&[1, 3]).unwrap();
        let ms = heat_moment_series(&m, &s, &ce.config, &[ce.v1.clone(), ce.v2.clone()], Some(probe), &grid).unwrap();
        let w: Vec<f64> = m.apply_neg_laplacian(&ce.v1).iter().map(|y| -y).collect();
        let pref = -(PI * 0.4).sin() / PI;
        for (i, &t) in grid.nodes.iter().enumerate() {
            let heat = s.heat_apply(t, &w).unwrap()[probe];
            let expect = pref * heat * t.powf(-1.4);
            assert!((ms.samples[0][i] - expect).abs() < 1e-12 * (1.0 + expect.abs()), "t={t}");
        }
    }
}
