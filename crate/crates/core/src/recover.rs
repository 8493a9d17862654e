//! The inverse pipeline: heat traces from Cauchy data, joint exponential
//! fitting, eigenspace accumulation, normalization of the restricted
//! eigenfunctions, potential recovery and gauge verification.
//!
//! Inversion entry points take only `O`-indexed inputs ([`BlindCauchyData`],
//! [`HeatTraceSamples`], [`SpectralData`]). Functions that need the hidden
//! manifold live in [`oracle`] or take the matched geometry explicitly.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::entangle::{assemble_operator, injectivity_diagnostic, EntangleConfig, NULLSPACE_THRESHOLD};
use crate::error::{Error, Result};
use crate::forward::{BlindCauchyData, CauchyDataSet, Potential};
use crate::mesh::{DiscreteManifold, ObservationSet};
use crate::spectral::{leapfrog_limit, mass_norm, wave_evolve_local, SpectralDecomposition};

/// Samples of `t ↦ (e^{tΔ}(−Δ)^α u)(x)` for `x ∈ O` on `t_i = i·dt`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HeatTraceSamples {
    pub dt: f64,
    pub n_times: usize,
    pub obs: Vec<usize>,
    pub alpha: f64,
    /// Per source, `n_times × |O|` values in time-major order.
    pub signals: Vec<Vec<f64>>,
}

impl HeatTraceSamples {
    pub fn times(&self) -> Vec<f64> {
        (0..self.n_times).map(|i| i as f64 * self.dt).collect()
    }

    pub fn value(&self, source: usize, time: usize, pos: usize) -> f64 {
        self.signals[source][time * self.obs.len() + pos]
    }

    /// All signals side by side: `n_times × (sources·|O|)`, source-major columns.
    pub fn joint_matrix(&self) -> DMatrix<f64> {
        let p = self.obs.len();
        DMatrix::from_fn(self.n_times, self.signals.len() * p, |i, c| self.signals[c / p][i * p + c % p])
    }

    /// Every `stride`-th sample starting at `offset`.
    pub fn subsample(&self, offset: usize, stride: usize) -> Self {
        let p = self.obs.len();
        let keep: Vec<usize> = (offset..self.n_times).step_by(stride).collect();
        let signals = self
            .signals
            .iter()
            .map(|s| keep.iter().flat_map(|&i| s[i * p..(i + 1) * p].iter().copied()).collect())
            .collect();
        Self { dt: self.dt * stride as f64, n_times: keep.len(), obs: self.obs.clone(), alpha: self.alpha, signals }
    }
}

/// Data-owner side of the reduction: evaluates the heat traces of
/// `(−Δ)^α u` for every generated pair on the hidden manifold and hands over
/// only the `O` rows.
pub fn heat_trace_from_cauchy(data: &CauchyDataSet, spec: &SpectralDecomposition, dt: f64, n_times: usize) -> Result<HeatTraceSamples> {
    if data.metadata.potential_on_o.iter().any(|&v| v != 0.0) {
        return Err(Error::Hypothesis("potential does not vanish on O".into()));
    }
    if !(dt > 0.0) || n_times < 4 {
        return Err(Error::InvalidParameter(format!("need dt > 0 and at least 4 samples, got dt={dt}, K={n_times}")));
    }
    let alpha = data.metadata.alpha;
    let obs = data.metadata.observation.clone();
    let mut signals = Vec::with_capacity(data.len());
    for s in 0..data.len() {
        let u = data.full_solution(s);
        let fracu = spec.frac_power_apply(alpha, u)?;
        let coeffs = spec.coefficients(&fracu);
        let mut sig = Vec::with_capacity(n_times * obs.len());
        for i in 0..n_times {
            let t = i as f64 * dt;
            let scaled = DVector::from_iterator(spec.n(), coeffs.iter().zip(spec.values()).map(|(c, l)| c * (-t * l).exp()));
            for &x in &obs {
                sig.push(spec.vectors().row(x).transpose().dot(&scaled));
            }
        }
        signals.push(sig);
    }
    Ok(HeatTraceSamples { dt, n_times, obs, alpha, signals })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_modes: usize,
    /// Relative singular-value floor for the model order.
    pub noise_floor: f64,
    /// Amplitude discrepancy tolerated between the full and the decimated fit.
    pub stability_tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_modes: 64, noise_floor: 1e-11, stability_tolerance: 1e-7 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExpFit {
    pub dt: f64,
    /// Ascending decay exponents.
    pub exponents: Vec<f64>,
    /// Per mode, one amplitude per signal column.
    pub amplitudes: Vec<Vec<f64>>,
    /// Columns per source (`|O|`).
    pub group_size: usize,
    pub singular_values: Vec<f64>,
    /// Per mode amplitude discrepancy against decimated fits (`∞` if unmatched).
    pub discrepancy: Vec<f64>,
    /// Largest exponent regarded as resolved.
    pub lambda_cap: f64,
}

/// One matrix-pencil pass on the columns of `y` (uniformly sampled at `dt`).
fn pencil(y: &DMatrix<f64>, dt: f64, opts: &FitOptions) -> Result<(Vec<f64>, Vec<Vec<f64>>, Vec<f64>)> {
    let k = y.nrows();
    if k < 3 {
        return Err(Error::Fit(format!("need at least 3 samples, got {k}")));
    }
    // Compress to the column space above the floor first. Many signals can
    // span fewer directions than there are exponents, so the shift count
    // follows the compressed width, not the raw column count.
    let ysvd = y.clone().svd(true, false);
    let top = ysvd.singular_values.max();
    if top == 0.0 {
        return Ok((Vec::new(), Vec::new(), Vec::new()));
    }
    let keep: Vec<usize> = (0..ysvd.singular_values.len())
        .filter(|&i| ysvd.singular_values[i] > top * opts.noise_floor)
        .collect();
    let yu = ysvd.u.as_ref().expect("requested U");
    let yc = DMatrix::from_fn(k, keep.len(), |i, j| yu[(i, keep[j])] * ysvd.singular_values[keep[j]]);
    let q = yc.ncols();
    // block-Hankel embedding: `shifts` delayed copies of every column
    let shifts = (4 * opts.max_modes).div_ceil(q).clamp(1, k / 2);
    let rows = k - shifts + 1;
    let hankel = DMatrix::from_fn(rows, q * shifts, |i, c| yc[(i + c % shifts, c / shifts)]);
    let svd = hankel.svd(true, false);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sv: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    if sv.is_empty() || sv[0] == 0.0 {
        return Ok((Vec::new(), Vec::new(), sv));
    }
    let r = sv.iter().take_while(|&&s| s > opts.noise_floor * sv[0]).count();
    if r >= sv.len().min(rows - 1) {
        let profile: Vec<String> = sv.iter().map(|s| format!("{:.2e}", s / sv[0])).collect();
        return Err(Error::Fit(format!("no singular-value gap below floor {:e}: [{}]", opts.noise_floor, profile.join(", "))));
    }
    let r = r.min(opts.max_modes);
    let u = svd.u.expect("requested U");
    let ur = DMatrix::from_fn(rows, r, |i, j| u[(i, order[j])]);
    let up = ur.rows(0, rows - 1).into_owned();
    let down = ur.rows(1, rows - 1).into_owned();
    let psi = up.svd(true, true).solve(&down, 0.0).map_err(|e| Error::Fit(e.to_string()))?;
    let z = psi.complex_eigenvalues();
    let mut lambdas = Vec::with_capacity(r);
    for zi in z.iter() {
        if zi.im.abs() > 1e-6 * zi.norm() || zi.re <= 0.0 {
            return Err(Error::Fit(format!("pole {zi} is not a real decay factor")));
        }
        lambdas.push(-zi.re.ln() / dt);
    }
    lambdas.sort_by(f64::total_cmp);
    let vand = DMatrix::from_fn(k, r, |i, j| (-lambdas[j] * dt * i as f64).exp());
    let amp = vand.svd(true, true).solve(y, 0.0).map_err(|e| Error::Fit(e.to_string()))?;
    let amplitudes = (0..r).map(|j| amp.row(j).iter().copied().collect()).collect();
    Ok((lambdas, amplitudes, sv))
}

/// Joint matrix-pencil fit over every source and every `x ∈ O`.
///
/// The resolvable band is estimated by refitting on the even and odd
/// samples (spacing `2dt`): a mode is stable when both refits reproduce its
/// amplitudes within `stability_tolerance`. `lambda_cap` is `π/dt` or the
/// midpoint between the last stable mode and the first unstable one.
pub fn exponential_fit(samples: &HeatTraceSamples, opts: &FitOptions) -> Result<ExpFit> {
    let y = samples.joint_matrix();
    let (exponents, amplitudes, singular_values) = pencil(&y, samples.dt, opts)?;
    let mut discrepancy = vec![0.0; exponents.len()];
    if !exponents.is_empty() {
        for offset in 0..2 {
            let sub = samples.subsample(offset, 2);
            let (le, la) = match pencil(&sub.joint_matrix(), sub.dt, opts) {
                Ok((le, la, _)) => (le, la),
                Err(_) => (Vec::new(), Vec::new()),
            };
            for (k, &l) in exponents.iter().enumerate() {
                let best = le.iter().enumerate().min_by(|a, b| (a.1 - l).abs().total_cmp(&(b.1 - l).abs()));
                let d = match best {
                    Some((j, &lj)) if (lj - l).abs() <= 1e-3 * l.max(1e-12) => {
                        let shift = (lj * samples.dt * offset as f64).exp();
                        let a = &amplitudes[k];
                        let num: f64 = a.iter().zip(&la[j]).map(|(x, y)| (x - y * shift).powi(2)).sum::<f64>().sqrt();
                        let den: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                        num / den
                    }
                    _ => f64::INFINITY,
                };
                discrepancy[k] = f64::max(discrepancy[k], d);
            }
        }
    }
    let nyquist = std::f64::consts::PI / samples.dt;
    let first_bad = discrepancy.iter().position(|&d| !(d <= opts.stability_tolerance));
    let lambda_cap = match first_bad {
        Some(0) => exponents[0] / 2.0,
        Some(k) => nyquist.min(0.5 * (exponents[k - 1] + exponents[k])),
        None => nyquist,
    };
    Ok(ExpFit { dt: samples.dt, exponents, amplitudes, group_size: samples.obs.len(), singular_values, discrepancy, lambda_cap })
}

/// Laplace transform `∫ e^{-zt} h(t) dt` of every signal column by the
/// trapezoid rule on the sample grid, against the same rule applied to the
/// fitted model `Σ_k A_k e^{-λ_k t}`. Returns the largest mismatch relative
/// to the model's exact transform `Σ_k A_k/(z + λ_k)`.
pub fn resolvent_cross_check(samples: &HeatTraceSamples, fit: &ExpFit, z: &[f64]) -> f64 {
    let y = samples.joint_matrix();
    let (k, p) = y.shape();
    let dt = samples.dt;
    let trap = |f: &dyn Fn(usize) -> f64| -> f64 {
        (0..k).map(|i| if i == 0 || i == k - 1 { 0.5 * f(i) } else { f(i) }).sum::<f64>() * dt
    };
    let mut worst = 0.0f64;
    for &zz in z {
        for c in 0..p {
            let numeric = trap(&|i| (-zz * i as f64 * dt).exp() * y[(i, c)]);
            let mut model = 0.0;
            let mut exact = 0.0;
            for (l, a) in fit.exponents.iter().zip(&fit.amplitudes) {
                model += a[c] * trap(&|i| (-(zz + l) * i as f64 * dt).exp());
                exact += a[c] / (zz + l);
            }
            worst = worst.max((numeric - model).abs() / exact.abs().max(1e-300));
        }
    }
    worst
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterFlags {
    /// Number of source columns that contributed.
    pub sources: usize,
    /// Fewer sources than could saturate the recovered rank.
    pub unsaturated: bool,
    /// `(low, high)` rank hypotheses when a singular value sits in the band.
    pub ambiguous: Option<(usize, usize)>,
}

/// Eigenvalues with restricted eigenfunctions on `O`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralData {
    pub eigenvalues: Vec<f64>,
    pub multiplicities: Vec<usize>,
    /// Row-major `|O| × Σ d_k`.
    pub restrictions: Vec<f64>,
    #[serde(rename = "O_indices")]
    pub o_indices: Vec<usize>,
    pub normalized: bool,
    /// `None` when every cluster is present.
    pub lambda_cap: Option<f64>,
    #[serde(default)]
    pub flags: Vec<ClusterFlags>,
}

impl SpectralData {
    pub fn total_columns(&self) -> usize {
        self.multiplicities.iter().sum()
    }

    pub fn restriction_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.o_indices.len(), self.total_columns(), &self.restrictions)
    }

    pub fn set_restriction_matrix(&mut self, r: &DMatrix<f64>) {
        self.restrictions = (0..r.nrows()).flat_map(|i| r.row(i).iter().copied().collect::<Vec<_>>()).collect();
    }

    pub fn cluster_columns(&self, k: usize) -> std::ops::Range<usize> {
        let start: usize = self.multiplicities[..k].iter().sum();
        start..start + self.multiplicities[k]
    }

    pub fn cluster_block(&self, k: usize) -> DMatrix<f64> {
        let r = self.cluster_columns(k);
        self.restriction_matrix().columns(r.start, r.len()).into_owned()
    }

    /// Clusters with eigenvalue at most `cap`.
    pub fn truncated(&self, cap: f64) -> Self {
        let keep: Vec<usize> = (0..self.eigenvalues.len()).filter(|&k| self.eigenvalues[k] <= cap).collect();
        let r = self.restriction_matrix();
        let cols: Vec<usize> = keep.iter().flat_map(|&k| self.cluster_columns(k)).collect();
        let restrictions = (0..r.nrows()).flat_map(|i| cols.iter().map(|&j| r[(i, j)]).collect::<Vec<_>>()).collect();
        Self {
            eigenvalues: keep.iter().map(|&k| self.eigenvalues[k]).collect(),
            multiplicities: keep.iter().map(|&k| self.multiplicities[k]).collect(),
            restrictions,
            o_indices: self.o_indices.clone(),
            normalized: self.normalized,
            lambda_cap: Some(self.lambda_cap.map_or(cap, |c| c.min(cap))),
            flags: keep.iter().filter_map(|&k| self.flags.get(k).cloned()).collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AccumulateOptions {
    /// Relative tolerance for merging exponents across fits.
    pub dedup_tol: f64,
    /// Relative singular-value threshold deciding the multiplicity.
    pub rank_tol: f64,
}

impl Default for AccumulateOptions {
    fn default() -> Self {
        Self { dedup_tol: 1e-6, rank_tol: 1e-6 }
    }
}

/// Clusters exponents across fits, stacks the per-source amplitude fields
/// and reads off multiplicities and restriction bases by SVD. Modes above
/// the smallest `lambda_cap` of the fits are dropped; the trivial cluster
/// (`μ₀ = 0`, constant restriction) is inserted first.
pub fn accumulate_eigenspaces(fits: &[ExpFit], obs: &[usize], alpha: f64, opts: &AccumulateOptions) -> Result<SpectralData> {
    if fits.is_empty() {
        return Err(Error::InvalidParameter("no fits to accumulate".into()));
    }
    let p = obs.len();
    let cap = fits.iter().map(|f| f.lambda_cap).fold(f64::INFINITY, f64::min);
    // (λ, |O| × sources block)
    let mut modes: Vec<(f64, DMatrix<f64>)> = Vec::new();
    for fit in fits {
        if fit.group_size != p {
            return Err(Error::InvalidParameter(format!("fit has group size {}, O has {p}", fit.group_size)));
        }
        for (l, a) in fit.exponents.iter().zip(&fit.amplitudes) {
            if *l <= cap && *l > 0.0 {
                let s = a.len() / p;
                modes.push((*l, DMatrix::from_fn(p, s, |x, j| a[j * p + x])));
            }
        }
    }
    modes.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut groups: Vec<Vec<(f64, DMatrix<f64>)>> = Vec::new();
    for mode in modes {
        match groups.last_mut() {
            Some(g) if (mode.0 - g[0].0).abs() <= opts.dedup_tol * g[0].0 => g.push(mode),
            _ => groups.push(vec![mode]),
        }
    }

    let mut eigenvalues = vec![0.0];
    let mut multiplicities = vec![1];
    let mut columns: Vec<Vec<f64>> = vec![vec![1.0; p]];
    let mut flags = vec![ClusterFlags { sources: 0, unsaturated: false, ambiguous: None }];
    for g in groups {
        let lambda = g.iter().map(|m| m.0).sum::<f64>() / g.len() as f64;
        let total_cols: usize = g.iter().map(|m| m.1.ncols()).sum();
        let mut stacked = DMatrix::zeros(p, total_cols);
        let mut c0 = 0;
        for (_, block) in &g {
            stacked.columns_mut(c0, block.ncols()).copy_from(block);
            c0 += block.ncols();
        }
        let svd = stacked.svd(true, false);
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let sv: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
        if sv[0] == 0.0 {
            continue;
        }
        let rank = sv.iter().take_while(|&&s| s > opts.rank_tol * sv[0]).count();
        let low = sv.iter().take_while(|&&s| s > 10.0 * opts.rank_tol * sv[0]).count();
        let high = sv.iter().take_while(|&&s| s > 0.1 * opts.rank_tol * sv[0]).count();
        let ambiguous = (low != high).then_some((low, high));
        let u = svd.u.expect("requested U");
        let scale = 1.0 / (lambda.powf(alpha) * (total_cols as f64).sqrt());
        for j in 0..rank {
            columns.push((0..p).map(|x| u[(x, order[j])] * sv[j] * scale).collect());
        }
        eigenvalues.push(lambda);
        multiplicities.push(rank);
        flags.push(ClusterFlags { sources: total_cols, unsaturated: total_cols <= rank, ambiguous });
    }
    let total: usize = multiplicities.iter().sum();
    let restrictions = (0..p).flat_map(|x| columns.iter().map(move |c| c[x])).collect();
    debug_assert_eq!(columns.len(), total);
    Ok(SpectralData {
        eigenvalues,
        multiplicities,
        restrictions,
        o_indices: obs.to_vec(),
        normalized: false,
        lambda_cap: cap.is_finite().then_some(cap),
        flags,
    })
}

/// Blind end-to-end: fit and accumulate from heat traces.
pub fn recover_spectral_data(samples: &HeatTraceSamples, fit_opts: &FitOptions, acc_opts: &AccumulateOptions) -> Result<(ExpFit, SpectralData)> {
    let fit = exponential_fit(samples, fit_opts)?;
    let data = accumulate_eigenspaces(std::slice::from_ref(&fit), &samples.obs, samples.alpha, acc_opts)?;
    Ok((fit, data))
}

/// Exact recursion: `ψ̂_k = ψ̃_k − Σ_{l<k} c_{kl} ψ_l` with
/// `c_{kl} = (ψ̃_k, ψ_l)_{L²(M)}`, then `ψ_k = ψ̂_k/‖ψ̂_k‖`; family `B`
/// receives the same coefficients and divisors.
pub fn joint_gram_schmidt(mass: &[f64], a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if a.ncols() != b.ncols() {
        return Err(Error::InvalidParameter(format!("families have {} and {} members", a.ncols(), b.ncols())));
    }
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).zip(mass).map(|((p, q), w)| p * q * w).sum::<f64>();
    let mut out_a = a.clone();
    let mut out_b = b.clone();
    let scale = (0..a.ncols()).map(|k| mass_norm(mass, a.column(k).as_slice())).fold(0.0, f64::max);
    for k in 0..a.ncols() {
        let orig: Vec<f64> = a.column(k).iter().copied().collect();
        let mut hat_a = a.column(k).into_owned();
        let mut hat_b = b.column(k).into_owned();
        for l in 0..k {
            let c = dot(&orig, out_a.column(l).as_slice());
            hat_a -= out_a.column(l) * c;
            hat_b -= out_b.column(l) * c;
        }
        let nrm = mass_norm(mass, hat_a.as_slice());
        if !(nrm > 1e-10 * scale) {
            return Err(Error::RankDeficient(format!("member {k} depends on its predecessors (norm {nrm:e})")));
        }
        out_a.set_column(k, &(hat_a / nrm));
        out_b.set_column(k, &(hat_b / nrm));
    }
    Ok((out_a, out_b))
}

/// For each cluster of `data`, the functions on the known manifold whose
/// restrictions to `O` are the recorded columns (least squares inside the
/// matching eigenspace). Returns the full `n × Σd` matrix and the worst
/// restriction mismatch.
pub fn lift_restrictions(data: &SpectralData, spec: &SpectralDecomposition) -> Result<(DMatrix<f64>, f64)> {
    let n = spec.n();
    let r = data.restriction_matrix();
    let mut full = DMatrix::zeros(n, data.total_columns());
    let mut worst = 0.0f64;
    for (k, &lambda) in data.eigenvalues.iter().enumerate() {
        let cl = spec
            .clusters()
            .iter()
            .find(|c| (c.eigenvalue - lambda).abs() <= 1e-6 * (1.0 + lambda))
            .ok_or_else(|| Error::Hypothesis(format!("eigenvalue {lambda} not in the spectrum of the known manifold")))?;
        let phi = spec.vectors().columns(cl.start, cl.multiplicity);
        let phi_o = DMatrix::from_fn(data.o_indices.len(), cl.multiplicity, |i, j| phi[(data.o_indices[i], j)]);
        let cols = data.cluster_columns(k);
        let target = r.columns(cols.start, cols.len()).into_owned();
        let svd = phi_o.clone().svd(true, true);
        let smax = svd.singular_values.max();
        if svd.singular_values.min() <= 1e-10 * smax {
            return Err(Error::RankDeficient(format!("eigenspace {lambda} is not observable on O")));
        }
        let coef = svd.solve(&target, 0.0).map_err(|e| Error::RankDeficient(e.to_string()))?;
        let mismatch = (&phi_o * &coef - &target).amax() / target.amax().max(1e-300);
        worst = worst.max(mismatch);
        full.columns_mut(cols.start, cols.len()).copy_from(&(phi * coef));
    }
    Ok((full, worst))
}

/// Lifts the restrictions to the known manifold, runs the joint
/// Gram–Schmidt recursion and returns the transformed restrictions together
/// with the orthonormal full family.
pub fn normalize(data: &SpectralData, spec: &SpectralDecomposition) -> Result<(SpectralData, DMatrix<f64>)> {
    let (full, _) = lift_restrictions(data, spec)?;
    let (a, b) = joint_gram_schmidt(spec.mass(), &full, &data.restriction_matrix())?;
    let mut out = data.clone();
    out.set_restriction_matrix(&b);
    Ok((out, a))
}

/// Per cluster, `max_m |(f, θ_m)_V − Σ_ℓ (f, θ_ℓ)_V G[ℓ, m]|` over the test
/// sources, where `G` is the mass Gram matrix of the lifted full functions.
/// Test sources are given on `O` (row order of `data.o_indices`).
pub fn expansion_residual(data: &SpectralData, lifted: &DMatrix<f64>, mass: &[f64], tests: &[Vec<f64>]) -> Result<Vec<f64>> {
    let r = data.restriction_matrix();
    let mass_o: Vec<f64> = data.o_indices.iter().map(|&x| mass[x]).collect();
    let mut out = Vec::with_capacity(data.eigenvalues.len());
    for k in 0..data.eigenvalues.len() {
        let cols = data.cluster_columns(k);
        let d = cols.len();
        let theta = r.columns(cols.start, d);
        let big = lifted.columns(cols.start, d);
        let gram = DMatrix::from_fn(d, d, |i, j| (0..mass.len()).map(|x| mass[x] * big[(x, i)] * big[(x, j)]).sum::<f64>());
        let moments = DMatrix::from_fn(tests.len(), d, |t, l| {
            (0..mass_o.len()).map(|i| mass_o[i] * tests[t][i] * theta[(i, l)]).sum::<f64>()
        });
        let svd = moments.clone().svd(false, false);
        let smax = svd.singular_values.max();
        let rank = svd.singular_values.iter().filter(|&&s| s > 1e-10 * smax).count();
        if rank < d {
            return Err(Error::RankDeficient(format!("cluster {k}: test moments have rank {rank} < multiplicity {d}")));
        }
        let pred = &moments * &gram;
        out.push((&moments - pred).amax());
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WaveOrientation {
    pub source_center: usize,
    pub target_center: usize,
    pub steps: usize,
    /// Largest `|U|` seen on the target ball over all steps.
    pub max_on_target: f64,
    pub cone_ok: bool,
    /// `‖f₂‖_{M∖O} / ‖f₂‖_M`.
    pub outside_mass: f64,
    pub support_ok: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WaveSupportReport {
    pub orientations: Vec<WaveOrientation>,
    pub passed: bool,
    pub note: String,
}

/// Tolerance on the relative mass of `f₂` outside `O`.
pub const OUTSIDE_MASS_TOLERANCE: f64 = 1e-8;

/// Builds `f₂ = Σ (f₁, θ)_O Θ` from the normalized restrictions `θ` and
/// their lifts `Θ` on the test manifold, for a bump `f₁` on a ball in `O`,
/// runs the local wave solver from `f₁` for fewer steps than the hop
/// distance to the target ball, and checks both the exact zero cone and the
/// mass of `f₂` outside `O`. Both orientations of `(p, q)` are run.
pub fn wave_support_check(
    m: &DiscreteManifold,
    obs: &ObservationSet,
    data: &SpectralData,
    lifted: &DMatrix<f64>,
    p: usize,
    q: usize,
    radius: usize,
) -> Result<WaveSupportReport> {
    let n = m.n_vertices();
    let r = data.restriction_matrix();
    let mass = m.mass();
    let dt = 0.9 * leapfrog_limit(m);
    let mut orientations = Vec::new();
    for (src, dst) in [(q, p), (p, q)] {
        let bump = crate::forward::bump_profile(m, src, radius);
        let f1: Vec<f64> = (0..n).map(|x| if obs.contains(x) { bump[x] } else { 0.0 }).collect();
        let f1_o: Vec<f64> = data.o_indices.iter().map(|&x| f1[x]).collect();
        let mut f2 = vec![0.0; n];
        for c in 0..r.ncols() {
            let a: f64 = data.o_indices.iter().enumerate().map(|(i, &x)| mass[x] * f1_o[i] * r[(i, c)]).sum();
            for x in 0..n {
                f2[x] += a * lifted[(x, c)];
            }
        }
        let outside: Vec<f64> = (0..n).map(|x| if obs.contains(x) { 0.0 } else { f2[x] }).collect();
        let outside_mass = mass_norm(mass, &outside) / mass_norm(mass, &f2).max(1e-300);

        let support: Vec<usize> = (0..n).filter(|&x| f1[x] != 0.0).collect();
        let target: Vec<usize> = { let d = m.hop_distances(dst); (0..n).filter(|&x| d[x] <= radius).collect() };
        let gap = m.multi_source_hops(&support).iter().enumerate().filter(|(x, _)| target.contains(x)).map(|(_, &d)| d).min().unwrap_or(0);
        let steps = gap.saturating_sub(1);
        let series = wave_evolve_local(m, &f1, dt, steps)?;
        let max_on_target = series.snapshots.iter().flat_map(|s| target.iter().map(move |&x| s[x].abs())).fold(0.0, f64::max);
        orientations.push(WaveOrientation {
            source_center: src,
            target_center: dst,
            steps,
            max_on_target,
            cone_ok: max_on_target == 0.0,
            outside_mass,
            support_ok: outside_mass < OUTSIDE_MASS_TOLERANCE,
        });
    }
    let passed = orientations.iter().all(|o| o.cone_ok && o.support_ok);
    Ok(WaveSupportReport {
        orientations,
        passed,
        note: "continuation step replaced by direct support inspection on the known test manifold".into(),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PotentialRecovery {
    /// `V̂(x)` for covered `x ∉ O`; `None` elsewhere (and on `O`).
    pub values: Vec<Option<f64>>,
    pub covered: Vec<usize>,
    pub uncovered: Vec<usize>,
    /// Index of the source used per covered vertex.
    pub best_source: BTreeMap<usize, usize>,
    pub extension_sigma_min_normalized: f64,
    pub max_extension_residual: f64,
}

impl PotentialRecovery {
    pub fn coverage(&self) -> f64 {
        let total = self.covered.len() + self.uncovered.len();
        if total == 0 {
            1.0
        } else {
            self.covered.len() as f64 / total as f64
        }
    }
}

/// Extends each `u` off `O` through `E w = fracu_O − A_{O,O} u_O` with
/// `E = A_{O,I}` (the one-function constraint operator) and evaluates
/// `V̂(x) = (f(x) − ((−Δ)^α u)(x)) / u(x)` with the source of largest `|u(x)|`.
pub fn recover_potential(blind: &BlindCauchyData, spec: &SpectralDecomposition, tau: f64) -> Result<PotentialRecovery> {
    let meta = &blind.metadata;
    let n = spec.n();
    if meta.n_vertices != n {
        return Err(Error::InvalidParameter(format!("data has {} vertices, geometry {n}", meta.n_vertices)));
    }
    if meta.potential_on_o.iter().any(|&v| v != 0.0) {
        return Err(Error::Hypothesis("potential does not vanish on O".into()));
    }
    let obs = ObservationSet::new(meta.observation.clone(), n)?;
    let alpha = meta.alpha;
    let cfg = EntangleConfig::new(vec![alpha], vec![1.0], obs.indices().to_vec(), obs.clone())?;
    let op = assemble_operator(spec, &cfg)?;
    let diag = injectivity_diagnostic(&op, NULLSPACE_THRESHOLD);
    if !diag.injective() {
        return Err(Error::RankDeficient(format!(
            "extension operator has normalized σ_min {:e}; unique continuation fails on this O",
            diag.sigma_min_normalized
        )));
    }
    let interior = op.interior.clone();
    let frac = spec.operator_matrix(|l| if l == 0.0 { 0.0 } else { l.powf(alpha) });
    let oi = obs.indices();
    let svd = op.matrix.clone().svd(true, true);
    let mut us = Vec::with_capacity(blind.pairs.len());
    let mut max_res = 0.0f64;
    for pair in &blind.pairs {
        let rhs = DVector::from_fn(oi.len(), |r, _| {
            pair.fracu_o[r] - (0..oi.len()).map(|c| frac[(oi[r], oi[c])] * pair.u_o[c]).sum::<f64>()
        });
        let w = svd.solve(&rhs, 0.0).map_err(|e| Error::RankDeficient(e.to_string()))?;
        let res = (&op.matrix * &w - &rhs).amax() / rhs.amax().max(1e-300);
        max_res = max_res.max(res);
        let mut u = vec![0.0; n];
        for (i, &x) in oi.iter().enumerate() {
            u[x] = pair.u_o[i];
        }
        for (i, &y) in interior.iter().enumerate() {
            u[y] = w[i];
        }
        us.push(u);
    }
    let mut values = vec![None; n];
    let mut covered = Vec::new();
    let mut uncovered = Vec::new();
    let mut best_source = BTreeMap::new();
    for &x in &interior {
        let best = us.iter().enumerate().max_by(|a, b| a.1[x].abs().total_cmp(&b.1[x].abs()).then(b.0.cmp(&a.0)));
        match best {
            Some((s, u)) if u[x].abs() > tau => {
                let au: f64 = (0..n).map(|y| frac[(x, y)] * u[y]).sum();
                values[x] = Some(-au / u[x]);
                best_source.insert(x, s);
                covered.push(x);
            }
            _ => uncovered.push(x),
        }
    }
    Ok(PotentialRecovery {
        values,
        covered,
        uncovered,
        best_source,
        extension_sigma_min_normalized: diag.sigma_min_normalized,
        max_extension_residual: max_res,
    })
}

/// One side of a gauge comparison (verification mode: the manifold is known).
pub struct GaugeSide<'a> {
    pub manifold: &'a DiscreteManifold,
    pub spec: &'a SpectralDecomposition,
    pub data: &'a SpectralData,
    pub potential: &'a Potential,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GaugeResult {
    pub matched: bool,
    /// `Φ` with `V₁ = V₂ ∘ Φ` when matched.
    pub permutation: Option<Vec<usize>>,
    pub identity_on_o: bool,
    pub witness: Option<String>,
}

impl GaugeResult {
    fn refuted(witness: String) -> Self {
        Self { matched: false, permutation: None, identity_on_o: false, witness: Some(witness) }
    }
}

const FINGERPRINT_TIMES: [f64; 3] = [0.5, 1.0, 2.0];

fn fingerprint(spec: &SpectralDecomposition, x: usize, obs: &[usize]) -> Vec<f64> {
    FINGERPRINT_TIMES
        .iter()
        .flat_map(|&t| obs.iter().map(move |&y| spec.heat_kernel_entry(t, x, y).unwrap_or(f64::NAN)))
        .collect()
}

/// Compares eigenvalues, the `O`-projectors onto each restricted eigenspace
/// and heat-kernel fingerprints, then searches for a vertex bijection
/// `Φ: M₁ → M₂` that is the identity on `O`, preserves masses and edge
/// weights and satisfies `V₁ = V₂ ∘ Φ`.
pub fn verify_gauge_equivalence(one: &GaugeSide, two: &GaugeSide, obs: &ObservationSet, tol: f64) -> Result<GaugeResult> {
    // compare only what both fits resolved
    let cap = [one.data.lambda_cap, two.data.lambda_cap].into_iter().flatten().fold(f64::INFINITY, f64::min);
    let (d1, d2) = (&one.data.truncated(cap), &two.data.truncated(cap));
    if d1.o_indices != d2.o_indices || d1.o_indices != obs.indices() {
        return Ok(GaugeResult::refuted("observation sets differ".into()));
    }
    if d1.multiplicities != d2.multiplicities {
        return Ok(GaugeResult::refuted(format!("multiplicities {:?} vs {:?}", d1.multiplicities, d2.multiplicities)));
    }
    for (k, (a, b)) in d1.eigenvalues.iter().zip(&d2.eigenvalues).enumerate() {
        if (a - b).abs() > tol * (1.0 + a.abs()) {
            return Ok(GaugeResult::refuted(format!("eigenvalue {k}: {a} vs {b}")));
        }
    }
    for k in 0..d1.eigenvalues.len() {
        let (p1, p2) = (span_projector(&d1.cluster_block(k)), span_projector(&d2.cluster_block(k)));
        let diff = (&p1 - &p2).amax();
        if diff > tol.sqrt() {
            return Ok(GaugeResult::refuted(format!("restricted eigenspace {k} differs on O by {diff:e}")));
        }
    }
    let (m1, m2) = (one.manifold, two.manifold);
    let n = m1.n_vertices();
    if m2.n_vertices() != n {
        return Ok(GaugeResult::refuted(format!("vertex counts {n} vs {}", m2.n_vertices())));
    }
    let oi = obs.indices();
    let prints1: Vec<Vec<f64>> = (0..n).map(|x| fingerprint(one.spec, x, oi)).collect();
    let prints2: Vec<Vec<f64>> = (0..n).map(|x| fingerprint(two.spec, x, oi)).collect();
    let scale = prints1.iter().flatten().fold(0.0f64, |a, b| a.max(b.abs()));
    let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol.sqrt() * scale);
    for &x in oi {
        if !close(&prints1[x], &prints2[x]) {
            return Ok(GaugeResult::refuted(format!("heat-kernel fingerprint differs at O vertex {x}")));
        }
    }
    let free: Vec<usize> = {
        // breadth-first from O so edge constraints bite early
        let d = m1.multi_source_hops(oi);
        let mut f: Vec<usize> = (0..n).filter(|x| !obs.contains(*x)).collect();
        f.sort_by_key(|&x| (d[x], x));
        f
    };
    let mut candidates: Vec<Vec<usize>> = Vec::with_capacity(free.len());
    for &x in &free {
        let mut c: Vec<usize> = (0..n)
            .filter(|&y| !obs.contains(y) && m1.mass()[x] == m2.mass()[y] && close(&prints1[x], &prints2[y]))
            .collect();
        c.sort_by_key(|&y| (y != x, y));
        if c.is_empty() {
            return Ok(GaugeResult::refuted(format!("no vertex of M₂ matches the fingerprint of vertex {x}")));
        }
        candidates.push(c);
    }
    let v1 = one.potential.values();
    let v2 = two.potential.values();
    let v_tol = tol;
    for use_potential in [true, false] {
        let mut phi = vec![usize::MAX; n];
        let mut used = vec![false; n];
        for &x in oi {
            phi[x] = x;
            used[x] = true;
        }
        if search(0, &free, &candidates, m1, m2, &mut phi, &mut used, use_potential, v1, v2, v_tol) {
            if use_potential {
                let identity_on_o = oi.iter().all(|&x| phi[x] == x);
                return Ok(GaugeResult { matched: true, permutation: Some(phi), identity_on_o, witness: None });
            }
            let bad = (0..n).find(|&x| (v1[x] - v2[phi[x]]).norm() > v_tol).unwrap_or(0);
            return Ok(GaugeResult::refuted(format!(
                "geometry matches but V₁({bad}) = {} differs from V₂(Φ({bad})) = {}",
                v1[bad],
                v2[phi[bad]]
            )));
        }
    }
    Ok(GaugeResult::refuted("no edge-preserving bijection matches the fingerprints".into()))
}

#[allow(clippy::too_many_arguments)]
fn search(
    depth: usize,
    free: &[usize],
    candidates: &[Vec<usize>],
    m1: &DiscreteManifold,
    m2: &DiscreteManifold,
    phi: &mut [usize],
    used: &mut [bool],
    use_potential: bool,
    v1: &[num_complex::Complex64],
    v2: &[num_complex::Complex64],
    v_tol: f64,
) -> bool {
    if depth == free.len() {
        return true;
    }
    let x = free[depth];
    for &y in &candidates[depth] {
        if used[y] || (use_potential && (v1[x] - v2[y]).norm() > v_tol) {
            continue;
        }
        let consistent = m1.neighbors(x).iter().all(|&(w, k)| {
            let pw = phi[w];
            pw == usize::MAX || m2.edge_between(y, pw).is_some_and(|e| e.conductance == m1.edges()[k].conductance)
        }) && m1.neighbors(x).len() == m2.neighbors(y).len();
        if !consistent {
            continue;
        }
        phi[x] = y;
        used[y] = true;
        if search(depth + 1, free, candidates, m1, m2, phi, used, use_potential, v1, v2, v_tol) {
            return true;
        }
        phi[x] = usize::MAX;
        used[y] = false;
    }
    false
}

fn span_projector(block: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = block.clone().svd(true, false);
    let smax = svd.singular_values.max();
    let u = svd.u.expect("requested U");
    let keep: Vec<usize> = (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > 1e-10 * smax).collect();
    let q = DMatrix::from_fn(block.nrows(), keep.len(), |i, j| u[(i, keep[j])]);
    &q * q.transpose()
}

/// Truth-side constructors and comparisons used to grade the blind pipeline.
pub mod oracle {
    use super::*;

    /// Restrictions of the mass-orthonormal eigenvectors to `O`, clusters up
    /// to `cap` (all when `None`).
    pub fn spectral_data_from_decomposition(spec: &SpectralDecomposition, obs: &ObservationSet, cap: Option<f64>) -> SpectralData {
        let clusters: Vec<_> = spec.clusters().iter().filter(|c| cap.is_none_or(|l| c.eigenvalue <= l)).cloned().collect();
        let cols: Vec<usize> = clusters.iter().flat_map(|c| c.columns()).collect();
        let restrictions = obs.indices().iter().flat_map(|&x| cols.iter().map(move |&j| spec.vectors()[(x, j)])).collect();
        SpectralData {
            eigenvalues: clusters.iter().map(|c| c.eigenvalue).collect(),
            multiplicities: clusters.iter().map(|c| c.multiplicity).collect(),
            restrictions,
            o_indices: obs.indices().to_vec(),
            normalized: true,
            lambda_cap: cap,
            flags: clusters.iter().map(|_| ClusterFlags { sources: 0, unsaturated: false, ambiguous: None }).collect(),
        }
    }

    /// Sine of the largest principal angle between the column spans.
    pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        let qa = orth(a);
        let qb = orth(b);
        if qa.ncols() != qb.ncols() {
            return 1.0;
        }
        let resid = &qb - &qa * (qa.transpose() * &qb);
        resid.svd(false, false).singular_values.max()
    }

    fn orth(a: &DMatrix<f64>) -> DMatrix<f64> {
        let svd = a.clone().svd(true, false);
        let smax = svd.singular_values.max();
        let u = svd.u.expect("requested U");
        let keep: Vec<usize> = (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > 1e-12 * smax).collect();
        DMatrix::from_fn(a.nrows(), keep.len(), |i, j| u[(i, keep[j])])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{cauchy_generate, CauchyOptions, ForwardProblem, DEFAULT_KERNEL_TOLERANCE};
    use crate::spectral::DEFAULT_CLUSTER_TOLERANCE;

    fn synthetic(exps: &[(f64, f64)], dt: f64, k: usize) -> HeatTraceSamples {
        let sig = (0..k).map(|i| exps.iter().map(|(a, l)| a * (-l * dt * i as f64).exp()).sum()).collect();
        HeatTraceSamples { dt, n_times: k, obs: vec![0], alpha: 0.5, signals: vec![sig] }
    }

    #[test]
    fn two_exponentials() {
        let s = synthetic(&[(3.0, 1.0), (5.0, 2.0)], 0.1, 64);
        let fit = exponential_fit(&s, &FitOptions::default()).unwrap();
        assert_eq!(fit.exponents.len(), 2);
        assert!((fit.exponents[0] - 1.0).abs() < 1e-8 && (fit.exponents[1] - 2.0).abs() < 2e-8);
        assert!((fit.amplitudes[0][0] - 3.0).abs() < 3e-8 && (fit.amplitudes[1][0] - 5.0).abs() < 5e-8);
        assert!(resolvent_cross_check(&s, &fit, &[0.5, 1.0, 3.0]) < 1e-8);
    }

    #[test]
    fn more_exponents_than_amplitude_rank() {
        // 300 signals, every one a combination of the same two mixtures of three modes
        let (dt, k) = (0.1, 120);
        let mix = |i: usize, w: [f64; 3]| [1.0f64, 2.0, 3.5].iter().zip(w).map(|(l, a)| a * (-l * dt * i as f64).exp()).sum::<f64>();
        let signals: Vec<Vec<f64>> = (0..300)
            .map(|s| {
                let (c1, c2) = (1.0 + (s % 7) as f64, 0.5 - (s % 3) as f64);
                (0..k).map(|i| c1 * mix(i, [1.0, 0.3, 2.0]) + c2 * mix(i, [0.5, -1.0, 0.7])).collect()
            })
            .collect();
        let s = HeatTraceSamples { dt, n_times: k, obs: vec![0], alpha: 0.5, signals };
        let fit = exponential_fit(&s, &FitOptions::default()).unwrap();
        assert_eq!(fit.exponents.len(), 3);
        assert!(fit.exponents.iter().zip([1.0, 2.0, 3.5]).all(|(a, b)| (a - b).abs() < 1e-7), "{:?}", fit.exponents);
    }

    #[test]
    fn zero_signal_has_no_modes() {
        let s = synthetic(&[], 0.1, 32);
        let fit = exponential_fit(&s, &FitOptions::default()).unwrap();
        assert!(fit.exponents.is_empty());
    }

    #[test]
    fn gram_schmidt_scaling() {
        let mass = vec![1.0; 4];
        let a = DMatrix::from_column_slice(4, 1, &[2.0, 0.0, 0.0, 0.0]);
        let b = DMatrix::from_column_slice(2, 1, &[4.0, 6.0]);
        let (oa, ob) = joint_gram_schmidt(&mass, &a, &b).unwrap();
        assert_eq!(oa[(0, 0)], 1.0);
        assert_eq!((ob[(0, 0)], ob[(1, 0)]), (2.0, 3.0));
        let dep = DMatrix::from_column_slice(4, 2, &[1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0]);
        assert!(joint_gram_schmidt(&mass, &dep, &DMatrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn single_source_is_unsaturated() {
        let m = DiscreteManifold::flat_torus(&[6, 6], 1.0).unwrap();
        let s = SpectralDecomposition::decompose(&m, DEFAULT_CLUSTER_TOLERANCE).unwrap();
        let obs = ObservationSet::new((0..18).collect(), 36).unwrap();
        let p = ForwardProblem::new(&s, Potential::zero(36), 0.5, DEFAULT_KERNEL_TOLERANCE).unwrap();
        let data = cauchy_generate(&m, &p, &obs, &CauchyOptions { n_sources: 1, seed: 1, source_radius: 1 }).unwrap();
        let h = heat_trace_from_cauchy(&data, &s, 0.1, 200).unwrap();
        let (_, sd) = recover_spectral_data(&h, &FitOptions::default(), &AccumulateOptions::default()).unwrap();
        assert!(sd.multiplicities[1..].iter().all(|&d| d <= 1));
        assert!(sd.flags[1..].iter().all(|f| f.unsaturated));
    }

    #[test]
    fn spectral_data_json_round_trip() {
        let m = DiscreteManifold::flat_torus(&[4, 4], 1.0).unwrap();
        let s = SpectralDecomposition::decompose(&m, DEFAULT_CLUSTER_TOLERANCE).unwrap();
        let obs = ObservationSet::new((0..8).collect(), 16).unwrap();
        let d = oracle::spectral_data_from_decomposition(&s, &obs, None);
        let text = d.to_json().unwrap();
        assert!(text.contains("\"O_indices\""));
        assert_eq!(SpectralData::from_json(&text).unwrap(), d);
    }
}
