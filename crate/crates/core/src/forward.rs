//! The forward problem `P u = ((−Δ)^α + V) u = f`: Fredholm kernel, the
//! admissible source space `H^O`, the canonical solution operator and
//! Cauchy data generation.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{invert_permutation, DiscreteManifold, ObservationSet};
use crate::spectral::SpectralDecomposition;

pub const DEFAULT_KERNEL_TOLERANCE: f64 = 1e-9;
pub const RESIDUAL_TOLERANCE: f64 = 1e-9;
pub const ORTHOGONALITY_TOLERANCE: f64 = 1e-10;

type CVec = Vec<Complex64>;

fn c(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// Mass inner product `Σ_x mass(x) a(x) conj(b(x))`.
pub fn cmass_dot(mass: &[f64], a: &[Complex64], b: &[Complex64]) -> Complex64 {
    mass.iter().zip(a).zip(b).map(|((w, x), y)| x * y.conj() * *w).sum()
}

pub fn cmass_norm(mass: &[f64], a: &[Complex64]) -> f64 {
    mass.iter().zip(a).map(|(w, x)| w * x.norm_sqr()).sum::<f64>().sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Potential {
    values: CVec,
}

impl Potential {
    pub fn real(values: Vec<f64>) -> Result<Self> {
        Self::complex(values.into_iter().map(c).collect())
    }

    pub fn complex(values: CVec) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::InvalidParameter(format!("potential value at vertex {i} is not finite")));
        }
        Ok(Self { values })
    }

    pub fn zero(n: usize) -> Self {
        Self { values: vec![c(0.0); n] }
    }

    pub fn constant(n: usize, value: f64) -> Self {
        Self { values: vec![c(value); n] }
    }

    /// `height · cos²(π d / (2(r+1)))` for hop distance `d ≤ r` from `center`.
    pub fn bump(m: &DiscreteManifold, center: usize, radius: usize, height: f64) -> Result<Self> {
        if center >= m.n_vertices() {
            return Err(Error::IndexOutOfRange { index: center, n: m.n_vertices() });
        }
        Self::real(bump_profile(m, center, radius).into_iter().map(|v| v * height).collect())
    }

    /// Uniform random values in `[−amplitude, amplitude]` off `O`, zero on `O`.
    pub fn random_outside(obs: &ObservationSet, amplitude: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..obs.n_vertices())
            .map(|x| {
                let r: f64 = rng.gen_range(-amplitude..=amplitude);
                if obs.contains(x) {
                    c(0.0)
                } else {
                    c(r)
                }
            })
            .collect();
        Self { values }
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_real(&self) -> bool {
        self.values.iter().all(|v| v.im == 0.0)
    }

    pub fn real_values(&self) -> Option<Vec<f64>> {
        self.is_real().then(|| self.values.iter().map(|v| v.re).collect())
    }

    /// Exact test `V(x) == 0` for every `x ∈ O`.
    pub fn vanishes_on(&self, obs: &ObservationSet) -> bool {
        obs.indices().iter().all(|&x| self.values[x] == c(0.0))
    }

    pub fn conj(&self) -> Self {
        Self { values: self.values.iter().map(|v| v.conj()).collect() }
    }

    /// `V ∘ Φ`, i.e. `x ↦ V(perm[x])`.
    pub fn compose(&self, perm: &[usize]) -> Self {
        Self { values: perm.iter().map(|&p| self.values[p]).collect() }
    }
}

pub(crate) fn bump_profile(m: &DiscreteManifold, center: usize, radius: usize) -> Vec<f64> {
    cos2_profile(m, center, radius, (radius + 1) as f64)
}

/// `cos²(π d / 2w)` in hop distance `d`, cut off beyond `radius` (`w > radius`).
fn cos2_profile(m: &DiscreteManifold, center: usize, radius: usize, width: f64) -> Vec<f64> {
    let hops = m.hop_distances(center);
    let scale = std::f64::consts::PI / (2.0 * width);
    hops.iter().map(|&d| if d <= radius { (scale * d as f64).cos().powi(2) } else { 0.0 }).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KernelBasis {
    /// Mass-orthonormal basis of `Ker P`.
    pub columns: Vec<CVec>,
    /// Mass-orthonormal basis of `Ker P*` (the operator with `V̄`).
    pub adjoint_columns: Vec<CVec>,
    /// Descending singular values of `P` in mass-orthonormal coordinates.
    pub singular_values: Vec<f64>,
    pub threshold: f64,
    /// `(largest kernel σ, smallest retained σ)`.
    pub gap: (f64, f64),
    pub warning: Option<String>,
}

impl KernelBasis {
    pub fn dim(&self) -> usize {
        self.columns.len()
    }
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub u: CVec,
    pub residual: f64,
    pub orthogonality: f64,
}

/// `P = (−Δ)^α + V` with its SVD in mass-orthonormal coordinates
/// `B = M^{1/2} P M^{−1/2}`.
#[derive(Clone, Debug)]
pub struct ForwardProblem {
    alpha: f64,
    potential: Potential,
    mass: Vec<f64>,
    frac: DMatrix<f64>,
    u_svd: DMatrix<Complex64>,
    v_svd: DMatrix<Complex64>,
    sigma: Vec<f64>,
    rank: usize,
    kernel: KernelBasis,
}

impl ForwardProblem {
    pub fn new(spec: &SpectralDecomposition, potential: Potential, alpha: f64, tol: f64) -> Result<Self> {
        let n = spec.n();
        if potential.len() != n {
            return Err(Error::InvalidParameter(format!("potential has {} values, manifold {n}", potential.len())));
        }
        if !(alpha > 0.0) {
            return Err(Error::InvalidParameter(format!("α = {alpha} must be positive")));
        }
        if !(tol > 0.0 && tol < 1.0) {
            return Err(Error::InvalidParameter(format!("kernel tolerance {tol} not in (0,1)")));
        }
        let mass = spec.mass().to_vec();
        let frac = spec.operator_matrix(|l| if l == 0.0 { 0.0 } else { l.powf(alpha) });
        let sq: Vec<f64> = mass.iter().map(|w| w.sqrt()).collect();
        let b = DMatrix::from_fn(n, n, |i, j| {
            let mut v = c(frac[(i, j)] * sq[i] / sq[j]);
            if i == j {
                v += potential.values[i];
            }
            v
        });
        let svd = b.svd(true, true);
        let u_raw = svd.u.ok_or_else(|| Error::RankDeficient("SVD did not return U".into()))?;
        let vt_raw = svd.v_t.ok_or_else(|| Error::RankDeficient("SVD did not return Vᵀ".into()))?;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
        let sigma: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
        let u_svd = DMatrix::from_fn(n, n, |r, k| u_raw[(r, order[k])]);
        let v_svd = DMatrix::from_fn(n, n, |r, k| vt_raw[(order[k], r)].conj());

        let threshold = tol * sigma[0];
        let rank = sigma.iter().take_while(|&&s| s >= threshold).count();
        let back = |m: &DMatrix<Complex64>, k: usize| -> CVec { (0..n).map(|r| m[(r, k)] / sq[r]).collect() };
        let columns: Vec<CVec> = (rank..n).map(|k| back(&v_svd, k)).collect();
        let adjoint_columns: Vec<CVec> = (rank..n).map(|k| back(&u_svd, k)).collect();
        let largest_kernel = if rank < n { sigma[rank] } else { 0.0 };
        let smallest_kept = if rank > 0 { sigma[rank - 1] } else { 0.0 };
        let floor = 10.0 * f64::EPSILON * sigma[0];
        let warning = (rank > 0 && rank < n && smallest_kept - largest_kernel < floor.max(10.0 * largest_kernel) && largest_kernel > floor)
            .then(|| format!("ill-separated kernel: σ gap ({largest_kernel:e}, {smallest_kept:e}) around threshold {threshold:e}"));
        let kernel = KernelBasis { columns, adjoint_columns, singular_values: sigma.clone(), threshold, gap: (largest_kernel, smallest_kept), warning };
        Ok(Self { alpha, potential, mass, frac, u_svd, v_svd, sigma, rank, kernel })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn kernel(&self) -> &KernelBasis {
        &self.kernel
    }

    /// Dense matrix of `(−Δ)^α` acting on vertex values.
    pub fn frac_matrix(&self) -> &DMatrix<f64> {
        &self.frac
    }

    pub fn apply(&self, u: &[Complex64]) -> CVec {
        let n = u.len();
        (0..n)
            .map(|i| (0..n).map(|j| u[j] * self.frac[(i, j)]).sum::<Complex64>() + self.potential.values[i] * u[i])
            .collect()
    }

    pub fn apply_frac_real(&self, u: &[f64]) -> Vec<f64> {
        (&self.frac * DVector::from_column_slice(u)).iter().copied().collect()
    }

    /// `max_l |(f, ζ_l)| / ‖f‖` over the adjoint kernel.
    pub fn range_defect(&self, f: &[Complex64]) -> f64 {
        let nf = cmass_norm(&self.mass, f).max(f64::MIN_POSITIVE);
        self.kernel.adjoint_columns.iter().map(|z| cmass_dot(&self.mass, f, z).norm() / nf).fold(0.0, f64::max)
    }

    /// Canonical solution: the pseudo-inverse solve, automatically orthogonal
    /// to `Ker P`. Rejects `f` not orthogonal to `Ker P*`.
    pub fn solve_canonical(&self, f: &[Complex64]) -> Result<Solution> {
        let n = self.mass.len();
        if f.len() != n {
            return Err(Error::InvalidParameter(format!("source has length {}, expected {n}", f.len())));
        }
        let defect = self.range_defect(f);
        if defect > ORTHOGONALITY_TOLERANCE {
            return Err(Error::NotAdmissible(format!("source has relative component {defect:e} along Ker P*")));
        }
        let sq: Vec<f64> = self.mass.iter().map(|w| w.sqrt()).collect();
        let g = DVector::from_iterator(n, f.iter().zip(&sq).map(|(x, s)| x * *s));
        let coeff = self.u_svd.columns(0, self.rank).adjoint() * g;
        let scaled = DVector::from_iterator(self.rank, coeff.iter().zip(&self.sigma).map(|(x, s)| x / *s));
        let y = self.v_svd.columns(0, self.rank) * scaled;
        let u: CVec = y.iter().zip(&sq).map(|(x, s)| x / *s).collect();
        let pu = self.apply(&u);
        let r: CVec = pu.iter().zip(f).map(|(a, b)| a - b).collect();
        let residual = cmass_norm(&self.mass, &r);
        let nu = cmass_norm(&self.mass, &u).max(f64::MIN_POSITIVE);
        let orthogonality = self.kernel.columns.iter().map(|z| cmass_dot(&self.mass, &u, z).norm() / nu).fold(0.0, f64::max);
        let scale = cmass_norm(&self.mass, f).max(1.0);
        if residual > RESIDUAL_TOLERANCE * scale {
            return Err(Error::RankDeficient(format!("solve residual {residual:e} exceeds {:e}", RESIDUAL_TOLERANCE * scale)));
        }
        Ok(Solution { u, residual, orthogonality })
    }

    pub fn solve_canonical_real(&self, f: &[f64]) -> Result<(Vec<f64>, Solution)> {
        let fc: CVec = f.iter().map(|&x| c(x)).collect();
        let sol = self.solve_canonical(&fc)?;
        let imag = sol.u.iter().fold(0.0f64, |m, z| m.max(z.im.abs()));
        let scale = sol.u.iter().fold(0.0f64, |m, z| m.max(z.re.abs())).max(1.0);
        if imag > 1e-9 * scale {
            return Err(Error::InvalidParameter(format!("real source produced imaginary part {imag:e}")));
        }
        Ok((sol.u.iter().map(|z| z.re).collect(), sol))
    }
}

/// Minimum-norm `h` supported in `O` with `(h, ζ_l)_{L²(O)} = target_l`.
pub fn hit_vector(obs: &ObservationSet, mass: &[f64], columns: &[CVec], target: &[Complex64]) -> Result<CVec> {
    let n = obs.n_vertices();
    let nk = columns.len();
    if target.len() != nk {
        return Err(Error::InvalidParameter(format!("{} targets for {nk} columns", target.len())));
    }
    let mut h = vec![c(0.0); n];
    if nk == 0 {
        return Ok(h);
    }
    let idx = obs.indices();
    // A[l, x] = mass(x) conj(ζ_l(x)) so that A h_O = target
    let a = DMatrix::from_fn(nk, idx.len(), |l, k| columns[l][idx[k]].conj() * mass[idx[k]]);
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let (kmin, smin) = svd.singular_values.iter().enumerate().fold((0, f64::INFINITY), |acc, (k, &s)| if s < acc.1 { (k, s) } else { acc });
    if nk > idx.len() || smin <= 1e-10 * smax {
        let combo: Vec<String> = svd.u.as_ref().map_or(Vec::new(), |u| u.column(kmin).iter().map(|z| format!("{z:.3e}")).collect());
        return Err(Error::RankDeficient(format!(
            "kernel restrictions to O are dependent (σ_min/σ_max = {:e}); combination [{}]",
            smin / smax,
            combo.join(", ")
        )));
    }
    let sol = svd
        .solve(&DVector::from_column_slice(target), 0.0)
        .map_err(|e| Error::RankDeficient(e.to_string()))?;
    for (k, &x) in idx.iter().enumerate() {
        h[x] = sol[k];
    }
    let check = a * sol;
    let err = check.iter().zip(target).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
    if err > 1e-10 * (1.0 + target.iter().map(|z| z.norm()).fold(0.0, f64::max)) {
        return Err(Error::RankDeficient(format!("moment system residual {err:e}")));
    }
    Ok(h)
}

/// Projects `f` (supported in `O`) into `H^O`: `f − Σ_j (f, ζ_j) θ_j`.
pub fn admissible_sources(obs: &ObservationSet, mass: &[f64], kernel: &KernelBasis, f: &[Complex64]) -> Result<CVec> {
    if let Some(x) = (0..f.len()).find(|&x| !obs.contains(x) && f[x] != c(0.0)) {
        return Err(Error::NotAdmissible(format!("raw source is nonzero at vertex {x} outside O")));
    }
    let nk = kernel.adjoint_columns.len();
    let mut out = f.to_vec();
    for j in 0..nk {
        let mut e = vec![c(0.0); nk];
        e[j] = c(1.0);
        let theta = hit_vector(obs, mass, &kernel.adjoint_columns, &e)?;
        let coef = cmass_dot(mass, f, &kernel.adjoint_columns[j]);
        for (o, t) in out.iter_mut().zip(&theta) {
            *o -= coef * t;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CauchyPair {
    pub f_o: Vec<f64>,
    pub u_o: Vec<f64>,
    pub fracu_o: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CauchyMetadata {
    pub manifold_hash: String,
    pub n_vertices: usize,
    pub alpha: f64,
    pub seed: u64,
    pub source_radius: usize,
    pub observation: Vec<usize>,
    pub potential_on_o: Vec<f64>,
    pub kernel_dimension: usize,
    pub kernel_tolerance: f64,
}

/// Generated data with the full solutions kept for oracle tests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CauchyDataSet {
    pub metadata: CauchyMetadata,
    pub pairs: Vec<CauchyPair>,
    full_solutions: Vec<Vec<f64>>,
    full_sources: Vec<Vec<f64>>,
}

/// The O-indexed view handed to inversion code.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlindCauchyData {
    pub metadata: CauchyMetadata,
    pub pairs: Vec<CauchyPair>,
}

impl CauchyDataSet {
    pub fn blind(&self) -> BlindCauchyData {
        BlindCauchyData { metadata: self.metadata.clone(), pairs: self.pairs.clone() }
    }

    /// Full solution `u` of pair `i` (data-owner side only).
    pub fn full_solution(&self, i: usize) -> &[f64] {
        &self.full_solutions[i]
    }

    pub fn full_source(&self, i: usize) -> &[f64] {
        &self.full_sources[i]
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn to_json(&self, blind: bool) -> Result<String> {
        Ok(if blind { serde_json::to_string_pretty(&self.blind())? } else { serde_json::to_string_pretty(self)? })
    }
}

impl BlindCauchyData {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Index of each O vertex inside the per-pair arrays.
    pub fn position_of(&self, x: usize) -> Option<usize> {
        self.metadata.observation.binary_search(&x).ok()
    }
}

pub struct CauchyOptions {
    pub n_sources: usize,
    pub seed: u64,
    pub source_radius: usize,
}

/// Random squared-cosine bumps centered in `O` (the first `|O|` centers run
/// through a shuffled copy of `O`, later ones are drawn uniformly), clipped
/// to `O`, scaled by a random factor in `[0.5, 1.5]`, projected into `H^O`
/// and solved canonically. The profile width is drawn per source from
/// `radius + [0.5, 1.5]`: one fixed stencil can be singular on a symmetric
/// `O` and would then miss a direction for every source.
pub fn cauchy_generate(
    m: &DiscreteManifold,
    problem: &ForwardProblem,
    obs: &ObservationSet,
    opts: &CauchyOptions,
) -> Result<CauchyDataSet> {
    let v = problem
        .potential()
        .real_values()
        .ok_or_else(|| Error::InvalidParameter("Cauchy data generation requires a real potential".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order = obs.indices().to_vec();
    order.shuffle(&mut rng);
    let mass = problem.mass();
    let mut pairs = Vec::with_capacity(opts.n_sources);
    let mut full_solutions = Vec::with_capacity(opts.n_sources);
    let mut full_sources = Vec::with_capacity(opts.n_sources);
    for s in 0..opts.n_sources {
        let center = if s < order.len() { order[s] } else { obs.indices()[rng.gen_range(0..obs.len())] };
        let scale: f64 = rng.gen_range(0.5..1.5);
        let width = opts.source_radius as f64 + rng.gen_range(0.5..1.5);
        let raw: CVec = cos2_profile(m, center, opts.source_radius, width)
            .into_iter()
            .enumerate()
            .map(|(x, b)| if obs.contains(x) { c(b * scale) } else { c(0.0) })
            .collect();
        let f = admissible_sources(obs, mass, problem.kernel(), &raw)?;
        let f_re: Vec<f64> = f.iter().map(|z| z.re).collect();
        let (u, _) = problem.solve_canonical_real(&f_re)?;
        let fracu = problem.apply_frac_real(&u);
        let pick = |w: &[f64]| obs.indices().iter().map(|&x| w[x]).collect::<Vec<_>>();
        pairs.push(CauchyPair { f_o: pick(&f_re), u_o: pick(&u), fracu_o: pick(&fracu) });
        full_solutions.push(u);
        full_sources.push(f_re);
    }
    let metadata = CauchyMetadata {
        manifold_hash: m.content_hash(),
        n_vertices: m.n_vertices(),
        alpha: problem.alpha(),
        seed: opts.seed,
        source_radius: opts.source_radius,
        observation: obs.indices().to_vec(),
        potential_on_o: obs.indices().iter().map(|&x| v[x]).collect(),
        kernel_dimension: problem.kernel().dim(),
        kernel_tolerance: problem.kernel().threshold / problem.kernel().singular_values[0],
    };
    Ok(CauchyDataSet { metadata, pairs, full_solutions, full_sources })
}

/// Checks that `perm` fixes `O` pointwise and is an automorphism of `m`.
pub fn check_automorphism(m: &DiscreteManifold, obs: &ObservationSet, perm: &[usize]) -> Result<()> {
    invert_permutation(perm, m.n_vertices())?;
    if let Some(&x) = obs.indices().iter().find(|&&x| perm[x] != x) {
        return Err(Error::NotAutomorphism(format!("vertex {x} of O is moved to {}", perm[x])));
    }
    for x in 0..m.n_vertices() {
        if m.mass()[perm[x]] != m.mass()[x] {
            return Err(Error::NotAutomorphism(format!(
                "mass of {x} is {} but of its image {} is {}",
                m.mass()[x],
                perm[x],
                m.mass()[perm[x]]
            )));
        }
    }
    for e in m.edges() {
        match m.edge_between(perm[e.a], perm[e.b]) {
            Some(img) if img.conductance == e.conductance && img.length == e.length => {}
            Some(img) => {
                return Err(Error::NotAutomorphism(format!(
                    "edge ({}, {}) has weight {} but its image ({}, {}) has {}",
                    e.a, e.b, e.conductance, perm[e.a], perm[e.b], img.conductance
                )))
            }
            None => {
                return Err(Error::NotAutomorphism(format!(
                    "edge ({}, {}) with weight {} maps to non-edge ({}, {})",
                    e.a, e.b, e.conductance, perm[e.a], perm[e.b]
                )))
            }
        }
    }
    Ok(())
}

/// The gauge-equivalent pair `(Φ*m, V∘Φ)` for an `O`-fixing automorphism `Φ`.
pub fn gauge_pullback(
    m: &DiscreteManifold,
    v: &Potential,
    obs: &ObservationSet,
    perm: &[usize],
) -> Result<(DiscreteManifold, Potential)> {
    check_automorphism(m, obs, perm)?;
    Ok((m.pullback(perm)?, v.compose(perm)))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DensityWitness {
    pub eigen_column: usize,
    pub found: bool,
    pub sources_tried: usize,
    pub best_value: f64,
}

/// Searches random admissible sources until `|(S f, φ)| > threshold`.
pub fn density_witness(
    m: &DiscreteManifold,
    spec: &SpectralDecomposition,
    problem: &ForwardProblem,
    obs: &ObservationSet,
    eigen_column: usize,
    max_sources: usize,
    threshold: f64,
    seed: u64,
) -> Result<DensityWitness> {
    let phi = spec.column(eigen_column);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0f64;
    for tried in 1..=max_sources {
        let center = obs.indices()[rng.gen_range(0..obs.len())];
        let raw: CVec = bump_profile(m, center, 1)
            .into_iter()
            .enumerate()
            .map(|(x, b)| if obs.contains(x) { c(b * rng.gen_range(0.5..1.5)) } else { c(0.0) })
            .collect();
        let f = admissible_sources(obs, problem.mass(), problem.kernel(), &raw)?;
        let sol = problem.solve_canonical(&f)?;
        let pc: CVec = phi.iter().map(|&x| c(x)).collect();
        let val = cmass_dot(problem.mass(), &sol.u, &pc).norm();
        best = best.max(val);
        if val > threshold {
            return Ok(DensityWitness { eigen_column, found: true, sources_tried: tried, best_value: val });
        }
    }
    Ok(DensityWitness { eigen_column, found: false, sources_tried: max_sources, best_value: best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::DEFAULT_CLUSTER_TOLERANCE;

    fn setup(sides: &[usize]) -> (DiscreteManifold, SpectralDecomposition) {
        let m = DiscreteManifold::flat_torus(sides, 1.0).unwrap();
        let s = SpectralDecomposition::decompose(&m, DEFAULT_CLUSTER_TOLERANCE).unwrap();
        (m, s)
    }

    fn half(m: &DiscreteManifold) -> ObservationSet {
        let sides = m.grid_sides().unwrap().to_vec();
        let idx = (0..m.n_vertices()).filter(|&v| m.grid_coords(v).unwrap()[0] < sides[0] / 2).collect();
        ObservationSet::new(idx, m.n_vertices()).unwrap()
    }

    #[test]
    fn kernel_dimensions() {
        let (_, s) = setup(&[6, 6]);
        let n = s.n();
        let p = ForwardProblem::new(&s, Potential::constant(n, 1.0), 0.5, DEFAULT_KERNEL_TOLERANCE).unwrap();
        assert_eq!(p.kernel().dim(), 0);
        let p = ForwardProblem::new(&s, Potential::zero(n), 0.5, DEFAULT_KERNEL_TOLERANCE).unwrap();
        assert_eq!(p.kernel().dim(), 1);
        let z = &p.kernel().columns[0];
        assert!(z.iter().all(|v| (v - z[0]).norm() < 1e-12));
        let l1 = s.lambda_1();
        let p = ForwardProblem::new(&s, Potential::constant(n, -l1.powf(0.5)), 0.5, DEFAULT_KERNEL_TOLERANCE).unwrap();
        assert_eq!(p.kernel().dim(), s.clusters()[1].multiplicity);
        for col in &p.kernel().columns {
            let r = p.apply(col);
            assert!(cmass_norm(s.mass(), &r) < 1e-9);
        }
    }

    #[test]
    fn complex_potential_adjoint_kernel() {
        let (_, s) = setup(&[4, 4]);
        let n = s.n();
        // V = −((−Δ)^α ζ)/ζ puts the zero-free complex ζ in Ker P
        let zeta: CVec = (0..n).map(|x| Complex64::new(3.0 + s.column(1)[x], s.column(2)[x])).collect();
        let re: Vec<f64> = zeta.iter().map(|z| z.re).collect();
        let im: Vec<f64> = zeta.iter().map(|z| z.im).collect();
        let (fr, fi) = (s.frac_power_apply(0.5, &re).unwrap(), s.frac_power_apply(0.5, &im).unwrap());
        let v: CVec = (0..n).map(|x| -Complex64::new(fr[x], fi[x]) / zeta[x]).collect();
        let pot = Potential::complex(v).unwrap();
        assert!(!pot.is_real());
        let p = ForwardProblem::new(&s, pot.clone(), 0.5, DEFAULT_KERNEL_TOLERANCE).unwrap();
        let pc = ForwardProblem::new(&s, pot.conj(), 0.5, DEFAULT_KERNEL_TOLERANCE).unwrap();
        assert!(p.kernel().dim() >= 1);
        assert_eq!(p.kernel().dim(), pc.kernel().dim());
        assert_eq!(p.kernel().adjoint_columns.len(), p.kernel().dim());
        // adjoint columns lie in the kernel of the conjugate-potential operator
        for z in &p.kernel().adjoint_columns {
            assert!(cmass_norm(s.mass(), &pc.apply(z)) < 1e-9);
        }
    }

    #[test]
    fn canonical_solve_spectral_case() {
        let (_, s) = setup(&[6, 6]);
        let p = ForwardProblem::new(&s, Potential::zero(s.n()), 0.5, DEFAULT_KERNEL_TOLERANCE).unwrap();
        let phi = s.column(1);
        let (u, sol) = p.solve_canonical_real(&phi).unwrap();
        let l1 = s.values()[1];
        assert!(u.iter().zip(&phi).all(|(a, b)| (a - l1.powf(-0.5) * b).abs() < 1e-10));
        assert!(sol.residual < 1e-9 && sol.orthogonality < 1e-10);
        let (zero, _) = p.solve_canonical_real(&vec![0.0; s.n()]).unwrap();
        assert!(zero.iter().all(|&x| x == 0.0));
        assert!(matches!(p.solve_canonical_real(&vec![1.0; s.n()]), Err(Error::NotAdmissible(_))));
    }

    #[test]
    fn admissible_projection_removes_mean() {
        let (m, s) = setup(&[6, 6]);
        let obs = half(&m);
        let p = ForwardProblem::new(&s, Potential::zero(s.n()), 0.5, DEFAULT_KERNEL_TOLERANCE).unwrap();
        let raw: CVec = (0..s.n()).map(|x| if obs.contains(x) { c(1.0 + x as f64) } else { c(0.0) }).collect();
        let f = admissible_sources(&obs, s.mass(), p.kernel(), &raw).unwrap();
        let total: Complex64 = f.iter().zip(s.mass()).map(|(v, w)| v * *w).sum();
        assert!(total.norm() < 1e-10);
        assert!((0..s.n()).all(|x| obs.contains(x) || f[x] == c(0.0)));
    }

    #[test]
    fn hit_vector_min_norm_and_rank_error() {
        let (m, s) = setup(&[6, 6]);
        let obs = half(&m);
        let cols: Vec<CVec> = (1..3).map(|j| s.column(j).into_iter().map(c).collect()).collect();
        let h0 = hit_vector(&obs, s.mass(), &cols, &[c(0.0), c(0.0)]).unwrap();
        assert!(h0.iter().all(|z| z.norm() == 0.0));
        let target = [c(0.3), c(-1.2)];
        let h = hit_vector(&obs, s.mass(), &cols, &target).unwrap();
        for (l, col) in cols.iter().enumerate() {
            let ip: Complex64 = obs.indices().iter().map(|&x| h[x] * col[x].conj() * s.mass()[x]).sum();
            assert!((ip - target[l]).norm() < 1e-12);
        }
        let dup = vec![cols[0].clone(), cols[0].clone()];
        assert!(matches!(hit_vector(&obs, s.mass(), &dup, &target), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn cauchy_pairs_are_consistent_and_deterministic() {
        let (m, s) = setup(&[6, 6]);
        let obs = half(&m);
        let v = Potential::random_outside(&obs, 0.5, 3);
        let p = ForwardProblem::new(&s, v, 0.5, DEFAULT_KERNEL_TOLERANCE).unwrap();
        let opts = CauchyOptions { n_sources: 20, seed: 7, source_radius: 1 };
        let a = cauchy_generate(&m, &p, &obs, &opts).unwrap();
        let b = cauchy_generate(&m, &p, &obs, &opts).unwrap();
        assert_eq!(a.to_json(false).unwrap(), b.to_json(false).unwrap());
        for i in 0..a.len() {
            let u: CVec = a.full_solution(i).iter().map(|&x| c(x)).collect();
            let f: CVec = a.full_source(i).iter().map(|&x| c(x)).collect();
            let r: CVec = p.apply(&u).iter().zip(&f).map(|(x, y)| x - y).collect();
            assert!(cmass_norm(s.mass(), &r) < 1e-9);
        }
        let blind = BlindCauchyData::from_json(&a.to_json(true).unwrap()).unwrap();
        assert_eq!(blind, a.blind());
    }

    #[test]
    fn sources_span_admissible_space() {
        // the band x < 3 on a 6×6 torus makes the fixed radius-1 stencil singular
        let (m, s) = setup(&[6, 6]);
        let obs = half(&m);
        for (v, constraints) in [(Potential::zero(36), 1), (Potential::random_outside(&obs, 0.5, 3), 0)] {
            let p = ForwardProblem::new(&s, v, 0.5, DEFAULT_KERNEL_TOLERANCE).unwrap();
            let data = cauchy_generate(&m, &p, &obs, &CauchyOptions { n_sources: 40, seed: 5, source_radius: 1 }).unwrap();
            let f = DMatrix::from_fn(obs.len(), data.len(), |i, j| data.pairs[j].f_o[i]);
            let sv = f.singular_values();
            let rank = sv.iter().filter(|&&x| x > 1e-10 * sv.max()).count();
            assert_eq!(rank, obs.len() - constraints);
        }
    }

    #[test]
    fn automorphism_checks() {
        let (m, _) = setup(&[4, 4]);
        let obs = ObservationSet::new(vec![0, 1], 16).unwrap();
        let id: Vec<usize> = (0..16).collect();
        assert!(check_automorphism(&m, &obs, &id).is_ok());
        let mut swap = id.clone();
        swap.swap(0, 5);
        assert!(matches!(check_automorphism(&m, &obs, &swap), Err(Error::NotAutomorphism(_))));
        let mut swap = id;
        swap.swap(2, 3);
        assert!(matches!(check_automorphism(&m, &obs, &swap), Err(Error::NotAutomorphism(_))));
    }
}
