use std::f64::consts::PI;

use fracinv_core::entangle::{
    assemble_operator, certify_nullvector, counterexample_integer_shift, heat_moment_series, homotopy_curve,
    injectivity_diagnostic,
    EntangleConfig,
};
use fracinv_core::forward::{
    cauchy_generate, check_automorphism, cmass_norm, gauge_pullback, CauchyDataSet, CauchyOptions, ForwardProblem,
    Potential,
};
use fracinv_core::heatrep::{
    frac_power_via_heat_pointwise, gamma, inv_frac_power_via_heat, power_via_quadrature, QuadratureScheme,
    RepresentationKind, TimeGrid,
};
use fracinv_core::mesh::{antipodal_set, check_condition_h, dijkstra, enlarge, DiscreteManifold, ObservationSet};
use fracinv_core::recover::{
    expansion_residual, heat_trace_from_cauchy, lift_restrictions, normalize, oracle, recover_potential,
    recover_spectral_data, resolvent_cross_check, verify_gauge_equivalence, wave_support_check, AccumulateOptions,
    ExpFit, FitOptions, GaugeSide, SpectralData,
};
use fracinv_core::spectral::{fit_gaussian_envelope, mass_norm, SpectralDecomposition};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::report::{cell, Report, RunDir};
use crate::CliError;

pub struct Ctx {
    pub cfg: ExperimentConfig,
    pub m: DiscreteManifold,
    pub spec: SpectralDecomposition,
    pub obs: ObservationSet,
    pub potential: Potential,
    pub blind: bool,
    pub oracle: bool,
    pub dir: RunDir,
    pub report: Report,
}

impl Ctx {
    pub fn new(cfg: ExperimentConfig, dir: RunDir, report: Report, blind: bool, oracle: bool) -> Result<Self, CliError> {
        let m = cfg.build_manifold()?;
        let obs = cfg.build_observation(&m)?;
        let potential = cfg.build_potential(&m, &obs)?;
        let spec = SpectralDecomposition::decompose(&m, cfg.tolerances.cluster).map_err(|e| CliError::check("spectral.decompose", e))?;
        Ok(Self { cfg, m, spec, obs, potential, blind, oracle, dir, report })
    }

    fn fail(&mut self, id: &str, e: impl std::fmt::Display) -> CliError {
        self.report.flag(id, false, e.to_string());
        CliError::check(id, e)
    }

    fn problem(&mut self, spec: &SpectralDecomposition, potential: Potential) -> Result<ForwardProblem, CliError> {
        ForwardProblem::new(spec, potential, self.cfg.alpha, self.cfg.tolerances.kernel).map_err(|e| self.fail("forward.problem", e))
    }

    fn cauchy_options(&self) -> CauchyOptions {
        CauchyOptions { n_sources: self.cfg.sources.count, seed: self.cfg.seed, source_radius: self.cfg.sources.radius }
    }

    fn fit_options(&self) -> (FitOptions, AccumulateOptions) {
        let f = &self.cfg.fit;
        (
            FitOptions { max_modes: f.max_modes, noise_floor: f.noise_floor, stability_tolerance: f.stability_tolerance },
            AccumulateOptions { rank_tol: f.rank_tolerance, ..AccumulateOptions::default() },
        )
    }
}

pub fn forward(ctx: &mut Ctx) -> Result<CauchyDataSet, CliError> {
    let spec = ctx.spec.clone();
    let problem = ctx.problem(&spec, ctx.potential.clone())?;
    let data = cauchy_generate(&ctx.m, &problem, &ctx.obs, &ctx.cauchy_options()).map_err(|e| ctx.fail("forward.generate", e))?;
    let mass = spec.mass();
    let (mut res, mut orth) = (0.0f64, 0.0f64);
    let mut rows = Vec::new();
    for i in 0..data.len() {
        let u: Vec<Complex64> = data.full_solution(i).iter().map(|&x| x.into()).collect();
        let f: Vec<Complex64> = data.full_source(i).iter().map(|&x| x.into()).collect();
        let d: Vec<Complex64> = problem.apply(&u).iter().zip(&f).map(|(a, b)| a - b).collect();
        let r = cmass_norm(mass, &d) / cmass_norm(mass, &f).max(1e-300);
        let mut o = 0.0f64;
        for k in &problem.kernel().columns {
            let dot: Complex64 = u.iter().zip(k).zip(mass).map(|((a, b), w)| a * b.conj() * w).sum();
            o = o.max(dot.norm() / cmass_norm(mass, &u).max(1e-300));
        }
        res = res.max(r);
        orth = orth.max(o);
        let pair = &data.pairs[i];
        rows.push(vec![i.to_string(), cell(r), cell(o), cell(pair.u_o.iter().map(|x| x * x).sum::<f64>().sqrt())]);
    }
    let tol = ctx.cfg.tolerances.clone();
    ctx.report.below("forward.residual", res, tol.residual, format!("max relative residual over {} pairs", data.len()));
    ctx.report.below("forward.orthogonality", orth, tol.orthogonality, "max |(u, κ)| / ‖u‖ over kernel vectors");
    let kernel = problem.kernel();
    ctx.report.stage(
        "forward",
        json!({
            "pairs": data.len(),
            "kernel_dimension": kernel.dim(),
            "kernel_gap": [kernel.gap.0, kernel.gap.1],
            "kernel_warning": kernel.warning,
            "max_residual": res,
            "max_orthogonality": orth,
        }),
    )?;
    let text = data.to_json(ctx.blind).map_err(|e| ctx.fail("forward.export", e))?;
    ctx.dir.write("cauchy.json", &text)?;
    ctx.dir.write_csv("pairs.csv", &["pair", "residual", "orthogonality", "norm_u_on_o"], &rows)?;
    Ok(data)
}

pub fn spectral_recover(ctx: &mut Ctx, data: &CauchyDataSet) -> Result<(ExpFit, SpectralData), CliError> {
    let (fo, ao) = ctx.fit_options();
    let samples = heat_trace_from_cauchy(data, &ctx.spec, ctx.cfg.fit.dt, ctx.cfg.fit.samples).map_err(|e| ctx.fail("spectral.heat_trace", e))?;
    let (fit, rec) = recover_spectral_data(&samples, &fo, &ao).map_err(|e| ctx.fail("spectral.fit", e))?;
    let lmin = fit.exponents.first().copied().unwrap_or(1.0);
    let z = [0.25 * lmin, lmin, 4.0 * lmin];
    let resolvent = resolvent_cross_check(&samples, &fit, &z);
    ctx.report.below("spectral.resolvent", resolvent, ctx.cfg.tolerances.resolvent, "trapezoid Laplace transform of samples vs fitted modes");
    let rows: Vec<Vec<String>> = fit
        .exponents
        .iter()
        .zip(&fit.discrepancy)
        .map(|(l, d)| vec![cell(*l), cell(*d), (*l <= fit.lambda_cap).to_string()])
        .collect();
    ctx.dir.write_csv("modes.csv", &["lambda", "decimation_discrepancy", "resolved"], &rows)?;
    let sv: Vec<Vec<String>> = fit.singular_values.iter().enumerate().map(|(i, s)| vec![i.to_string(), cell(*s)]).collect();
    ctx.dir.write_csv("singular_values.csv", &["index", "sigma"], &sv)?;
    let text = rec.to_json().map_err(|e| ctx.fail("spectral.export", e))?;
    ctx.dir.write("spectral_data.json", &text)?;
    ctx.report.stage(
        "spectral",
        json!({
            "lambda_cap": fit.lambda_cap,
            "modes": fit.exponents.len(),
            "clusters": rec.eigenvalues,
            "multiplicities": rec.multiplicities,
            "flags": rec.flags,
        }),
    )?;
    if ctx.oracle {
        let truth = oracle::spectral_data_from_decomposition(&ctx.spec, &ctx.obs, Some(fit.lambda_cap));
        let count_ok = truth.eigenvalues.len() == rec.eigenvalues.len();
        let mult_ok = count_ok && truth.multiplicities == rec.multiplicities;
        let (mut eig, mut angle) = (0.0f64, 0.0f64);
        if count_ok {
            for k in 1..truth.eigenvalues.len() {
                eig = eig.max((rec.eigenvalues[k] - truth.eigenvalues[k]).abs() / truth.eigenvalues[k]);
                angle = angle.max(oracle::max_principal_angle(&rec.cluster_block(k), &truth.cluster_block(k)));
            }
        } else {
            eig = f64::INFINITY;
            angle = f64::INFINITY;
        }
        let tol = ctx.cfg.tolerances.clone();
        ctx.report.flag(
            "spectral.multiplicities",
            mult_ok,
            format!("true {:?}, recovered {:?}", truth.multiplicities, rec.multiplicities),
        );
        ctx.report.below("spectral.eigenvalues", eig, tol.eigenvalue, "max relative eigenvalue error below λ_cap");
        ctx.report.below("spectral.angles", angle, tol.angle, "max sine of principal angle vs oracle restrictions");
    }
    Ok((fit, rec))
}

pub fn normalize_stage(ctx: &mut Ctx, recovered: &SpectralData) -> Result<(), CliError> {
    let tests: Vec<Vec<f64>> = (0..ctx.obs.len()).map(|i| (0..ctx.obs.len()).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    let (lifted_raw, mismatch) = lift_restrictions(recovered, &ctx.spec).map_err(|e| ctx.fail("normalize.lift", e))?;
    let before = expansion_residual(recovered, &lifted_raw, ctx.spec.mass(), &tests).map_err(|e| ctx.fail("normalize.moments", e))?;
    let (mut normalized, lifted) = normalize(recovered, &ctx.spec).map_err(|e| ctx.fail("normalize.gram_schmidt", e))?;
    let after = expansion_residual(&normalized, &lifted, ctx.spec.mass(), &tests).map_err(|e| ctx.fail("normalize.moments", e))?;
    let worst = after.iter().copied().fold(0.0, f64::max);
    ctx.report.below("normalize.expansion", worst, ctx.cfg.tolerances.expansion, "expansion residual after joint Gram–Schmidt");
    normalized.normalized = worst < ctx.cfg.tolerances.expansion;
    let text = normalized.to_json().map_err(|e| ctx.fail("normalize.export", e))?;
    ctx.dir.write("spectral_data_normalized.json", &text)?;
    let rows: Vec<Vec<String>> = (0..after.len())
        .map(|k| vec![k.to_string(), cell(recovered.eigenvalues[k]), cell(before[k]), cell(after[k])])
        .collect();
    ctx.dir.write_csv("expansion_residual.csv", &["cluster", "lambda", "before", "after"], &rows)?;

    let tie = 0.0;
    let pq = ctx.obs.indices().iter().find_map(|&p| {
        let a = antipodal_set(&ctx.m, p, tie).ok()?;
        a.iter().all(|&q| ctx.obs.contains(q)).then(|| (p, a[0]))
    });
    let wave = match (ctx.oracle, pq) {
        (false, _) => json!({"skipped": "support check needs the complete spectral data (run with --oracle)"}),
        (true, None) => json!({"skipped": "no p ∈ O has its antipodes inside O"}),
        (true, Some((p, q))) => {
            let full = oracle::spectral_data_from_decomposition(&ctx.spec, &ctx.obs, None);
            let (lifted_full, _) = lift_restrictions(&full, &ctx.spec).map_err(|e| ctx.fail("normalize.lift", e))?;
            let rep = wave_support_check(&ctx.m, &ctx.obs, &full, &lifted_full, p, q, 1).map_err(|e| ctx.fail("normalize.wave", e))?;
            let cone = rep.orientations.iter().all(|o| o.cone_ok);
            let outside = rep.orientations.iter().map(|o| o.outside_mass).fold(0.0, f64::max);
            ctx.report.flag("normalize.wave_cone", cone, "local wave is exactly zero on the target ball");
            ctx.report.below("normalize.support", outside, fracinv_core::recover::OUTSIDE_MASS_TOLERANCE, "relative mass of f₂ outside O");
            serde_json::to_value(&rep).map_err(|e| CliError::Usage(e.to_string()))?
        }
    };
    ctx.report.stage(
        "normalize",
        json!({
            "lift_mismatch": mismatch,
            "residual_before": before,
            "residual_after": after,
            "wave": wave,
        }),
    )
}

pub fn potential_stage(ctx: &mut Ctx, data: &CauchyDataSet) -> Result<(), CliError> {
    let tol = ctx.cfg.tolerances.clone();
    let rec = recover_potential(&data.blind(), &ctx.spec, tol.coverage_threshold).map_err(|e| ctx.fail("potential.recover", e))?;
    ctx.report.below("potential.extension", rec.max_extension_residual, tol.residual, "relative residual of the extension solve");
    ctx.report.push(
        "potential.coverage",
        rec.coverage() >= tol.min_coverage,
        rec.coverage(),
        tol.min_coverage,
        format!("{} of {} vertices outside O covered", rec.covered.len(), rec.covered.len() + rec.uncovered.len()),
    );
    let truth = ctx.potential.real_values();
    let mut rows = Vec::new();
    for x in rec.covered.iter().chain(&rec.uncovered) {
        let mut row = vec![x.to_string(), rec.values[*x].map_or("nan".into(), cell), rec.best_source.get(x).map_or(String::new(), |s| s.to_string())];
        if ctx.oracle {
            row.push(truth.as_ref().map_or(String::new(), |t| cell(t[*x])));
        }
        rows.push(row);
    }
    rows.sort_by_key(|r| r[0].parse::<usize>().unwrap_or(0));
    let mut header = vec!["vertex", "recovered", "source"];
    if ctx.oracle {
        header.push("truth");
        let t = truth.unwrap_or_else(|| vec![f64::NAN; ctx.m.n_vertices()]);
        let scale = t.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let scale = if scale > 0.0 { scale } else { 1.0 };
        let err = rec.covered.iter().map(|&x| (rec.values[x].unwrap_or(f64::NAN) - t[x]).abs()).fold(0.0, f64::max) / scale;
        ctx.report.below("potential.error", err, tol.potential, "max |V̂ − V| / max |V| on covered vertices");
    }
    ctx.dir.write_csv("potential.csv", &header, &rows)?;
    ctx.report.stage(
        "potential",
        json!({
            "coverage": rec.coverage(),
            "uncovered": rec.uncovered,
            "extension_sigma_min_normalized": rec.extension_sigma_min_normalized,
            "max_extension_residual": rec.max_extension_residual,
        }),
    )
}

pub fn entangle(ctx: &mut Ctx) -> Result<(), CliError> {
    let tol = ctx.cfg.tolerances.clone();
    let alpha = ctx.cfg.alpha;
    let cfg = EntangleConfig::new(vec![alpha], vec![1.0], ctx.obs.indices().to_vec(), ctx.obs.clone()).map_err(|e| ctx.fail("entangle.config", e))?;
    let op = assemble_operator(&ctx.spec, &cfg).map_err(|e| ctx.fail("entangle.assemble", e))?;
    let ucp = injectivity_diagnostic(&op, tol.nullspace);
    ctx.report.flag(
        "entangle.ucp",
        ucp.injective(),
        format!("N=1 normalized σ_min {:.3e}, threshold {:e}", ucp.sigma_min_normalized, tol.nullspace),
    );
    let mut stage = json!({
        "ucp": {"rows": ucp.rows, "cols": ucp.cols, "sigma_max": ucp.sigma_max, "sigma_min_normalized": ucp.sigma_min_normalized,
                "nullspace_dimension": ucp.nullspace_candidates.len()},
    });
    // measured only: no law is asserted for the approach to an integer gap.
    // Two functions vanishing on W need 2|M∖W| ≤ |O| before injectivity is
    // even possible, so W grows from O hop by hop until the count allows it.
    let n = ctx.m.n_vertices();
    let w = (0..n)
        .map(|h| enlarge(&ctx.m, ctx.obs.indices(), h))
        .find(|w| 2 * (n - w.len()) <= ctx.obs.len())
        .filter(|w| w.len() < n);
    match w {
        Some(w) => {
            // integer orders are not admissible and are skipped
            let steps: Vec<f64> = (1..=10).map(|i| alpha + 0.1 * i as f64).filter(|a| (a - a.round()).abs() > 1e-9).collect();
            let pair = EntangleConfig::new(vec![alpha, steps[0]], vec![1.0, -1.0], w.clone(), ctx.obs.clone())
                .map_err(|e| ctx.fail("entangle.config", e))?;
            let curve = homotopy_curve(&ctx.spec, &pair, &steps).map_err(|e| ctx.fail("entangle.homotopy", e))?;
            let rows: Vec<Vec<String>> = curve.iter().map(|&(a2, s)| vec![cell(a2), cell(s)]).collect();
            ctx.dir.write_csv("homotopy.csv", &["alpha2", "sigma_min_normalized"], &rows)?;
            stage["homotopy"] = json!({
                "vanish_set_size": w.len(),
                "curve": curve.iter().map(|&(a2, s)| json!({"alpha2": a2, "sigma_min_normalized": s})).collect::<Vec<_>>(),
            });
        }
        None => stage["homotopy"] = json!({"skipped": "no proper vanishing set leaves enough rows for two functions"}),
    }
    let shift = ctx.cfg.entangle.shift;
    match counterexample_integer_shift(&ctx.m, &ctx.spec, &ctx.obs, alpha, shift, ctx.cfg.seed) {
        Ok(ce) => {
            let op2 = assemble_operator(&ctx.spec, &ce.config).map_err(|e| ctx.fail("entangle.assemble", e))?;
            let rep = injectivity_diagnostic(&op2, tol.nullspace);
            let cert = certify_nullvector(&op2, rep.sigma_max, &op2.stack(&[ce.v1.clone(), ce.v2.clone()]));
            ctx.report.below("entangle.shift_residual", ce.residual, 1e-10, "global ‖(−Δ)^α v₁ − (−Δ)^{α+k} v₂‖");
            ctx.report.below("entangle.shift_certificate", cert, 1e-10, "‖E x‖ / (σ_max ‖x‖) for the stacked counterexample");
            let grid = TimeGrid::log_panels(ctx.cfg.entangle.grid_min, ctx.cfg.entangle.grid_max, 2, 12).map_err(|e| ctx.fail("entangle.grid", e))?;
            let ms = heat_moment_series(&ctx.m, &ctx.spec, &ce.config, &[ce.v1.clone(), ce.v2.clone()], None, &grid)
                .map_err(|e| ctx.fail("entangle.moments", e))?;
            let mut rows = Vec::new();
            let mut skipped = Vec::new();
            let mut worst = 0.0f64;
            for &order in &ctx.cfg.entangle.moment_orders {
                match ms.moment(order) {
                    Ok(v) => {
                        worst = worst.max(v.abs());
                        rows.push(vec![order.to_string(), cell(v)]);
                    }
                    Err(e) => skipped.push(format!("m={order}: {e}")),
                }
            }
            if !rows.is_empty() {
                ctx.report.below("entangle.moment_witness", worst, tol.moment, format!("max |moment| over {} orders", rows.len()));
            }
            ctx.dir.write_csv("moments.csv", &["m", "value"], &rows)?;
            stage["integer_shift"] = json!({
                "shift": shift,
                "residual": ce.residual,
                "certificate": cert,
                "sigma_min_normalized": rep.sigma_min_normalized,
                "probe": ms.probe,
                "max_moment": ms.max_moment,
                "skipped_orders": skipped,
                "decay_fits": ms.fits,
            });
        }
        Err(e) => stage["integer_shift"] = json!({"skipped": e.to_string()}),
    }
    ctx.report.stage("entangle", stage)
}

pub fn heatcheck(ctx: &mut Ctx) -> Result<(), CliError> {
    let tol = ctx.cfg.tolerances.clone();
    let alpha = ctx.cfg.alpha;
    let s = &ctx.spec;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.seed);
    let mut v: Vec<f64> = (0..s.n()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let total_mass: f64 = s.mass().iter().sum();
    let mean = v.iter().zip(s.mass()).map(|(a, w)| a * w).sum::<f64>() / total_mass;
    v.iter_mut().for_each(|x| *x -= mean);
    let inv = QuadratureScheme::for_spectrum(RepresentationKind::Inverse, alpha, s).map_err(|e| CliError::check("heat.scheme", e))?;
    let fwd = QuadratureScheme::for_spectrum(RepresentationKind::Forward, alpha, s).map_err(|e| CliError::check("heat.scheme", e))?;
    let rel = |a: &[f64], b: &[f64]| {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        mass_norm(s.mass(), &d) / mass_norm(s.mass(), b).max(1e-300)
    };
    let inv_err = rel(
        &inv_frac_power_via_heat(s, &v, &inv).map_err(|e| CliError::check("heat.inverse", e))?,
        &s.inv_frac_power_apply(alpha, &v).map_err(|e| CliError::check("heat.inverse", e))?,
    );
    let pw = frac_power_via_heat_pointwise(s, &v, &fwd).map_err(|e| CliError::check("heat.forward", e))?;
    let fwd_err = rel(&pw.values, &s.frac_power_apply(alpha, &v).map_err(|e| CliError::check("heat.forward", e))?);
    let (lo, hi) = inv.calibrated_range;
    let mut scalar = 0.0f64;
    for i in 0..=40 {
        let a = lo * (hi / lo).powf(i as f64 / 40.0);
        scalar = scalar.max(power_via_quadrature(a, &inv).map_err(|e| CliError::check("heat.scalar", e))?.relative_error);
    }
    let mut refl = 0.0f64;
    for i in 1..100 {
        let a = i as f64 / 100.0;
        let rhs = -PI / (PI * a).sin();
        refl = refl.max(((gamma(-a) * gamma(1.0 + a) - rhs) / rhs).abs());
    }
    let (pw_estimate, pw_warning) = (pw.error_estimate, pw.warning);
    let mut rows = Vec::new();
    for (kind, sc) in [("inverse", &inv), ("forward", &fwd)] {
        for (t, w) in sc.nodes.iter().zip(&sc.weights) {
            rows.push(vec![kind.to_string(), cell(*t), cell(*w)]);
        }
    }
    ctx.report.below("heat.inverse", inv_err, tol.heat_inverse, "quadrature vs spectral (−Δ)^{−α}");
    ctx.report.below("heat.forward", fwd_err, tol.heat_forward, "quadrature vs spectral (−Δ)^α");
    ctx.report.below("heat.scalar", scalar, tol.scalar_quadrature, "scalar a^{−α} over the calibrated range");
    ctx.report.below("gamma.reflection", refl, tol.reflection, "Γ(−α)Γ(1+α) against −π/sin(πα) on α = 0.01..0.99");
    ctx.dir.write_csv("quadrature_nodes.csv", &["kind", "t", "weight"], &rows)?;
    // fitted per manifold; no universal constants are claimed
    let d0 = dijkstra(&ctx.m, 0).map_err(|e| ctx.fail("heat.envelope", e))?;
    let envelope: Vec<_> = [0.5, 1.0, 2.0]
        .into_iter()
        .filter_map(|t| fit_gaussian_envelope(&ctx.spec, &d0, t, 0).ok().map(|f| json!({"t": t, "C": f.big_c, "c": f.small_c})))
        .collect();
    ctx.report.stage(
        "heatcheck",
        json!({
            "alpha": alpha,
            "calibrated_range": [lo, hi],
            "nodes": inv.nodes.len(),
            "pointwise_error_estimate": pw_estimate,
            "pointwise_warning": pw_warning,
            "gaussian_envelope_from_vertex_0": envelope,
        }),
    )
}

pub fn geometry(ctx: &mut Ctx) -> Result<(), CliError> {
    let rep = check_condition_h(&ctx.m, &ctx.obs, &ctx.spec, 0.0).map_err(|e| ctx.fail("geometry.condition_h", e))?;
    let c = rep.observability_constant;
    ctx.report.push(
        "geometry.observability",
        c.is_finite() && c >= 1.0 - 1e-12,
        c,
        f64::INFINITY,
        format!("discrete observability constant (worst eigenvector {:?})", rep.worst_eigen_index),
    );
    let rows: Vec<Vec<String>> = rep
        .candidates
        .iter()
        .map(|a| vec![a.p.to_string(), a.antipodes.iter().map(|q| q.to_string()).collect::<Vec<_>>().join(" "), a.ok.to_string()])
        .collect();
    ctx.dir.write_csv("antipodes.csv", &["p", "antipodes", "inside_o"], &rows)?;
    ctx.report.stage(
        "geometry",
        json!({
            "observability_constant": c,
            "antipodal_ok_count": rep.candidates.iter().filter(|a| a.ok).count(),
            "candidates": rep.candidates.len(),
            "any_antipodal_ok": rep.any_antipodal_ok(),
            "note": rep.note,
        }),
    )
}

pub fn gauge(ctx: &mut Ctx) -> Result<(), CliError> {
    let tol = ctx.cfg.tolerances.clone();
    let sigma = ctx.cfg.gauge_permutation(&ctx.m)?;
    if let Err(e) = check_automorphism(&ctx.m, &ctx.obs, &sigma) {
        return Err(ctx.fail("gauge.automorphism", e));
    }
    let (m2, v2) = gauge_pullback(&ctx.m, &ctx.potential, &ctx.obs, &sigma).map_err(|e| ctx.fail("gauge.pullback", e))?;
    let s2 = SpectralDecomposition::decompose(&m2, tol.cluster).map_err(|e| ctx.fail("spectral.decompose", e))?;
    let s1 = ctx.spec.clone();
    let p1 = ctx.problem(&s1, ctx.potential.clone())?;
    let p2 = ctx.problem(&s2, v2.clone())?;
    let opts = ctx.cauchy_options();
    let d1 = cauchy_generate(&ctx.m, &p1, &ctx.obs, &opts).map_err(|e| ctx.fail("forward.generate", e))?;
    let d2 = cauchy_generate(&m2, &p2, &ctx.obs, &opts).map_err(|e| ctx.fail("forward.generate", e))?;
    let mut diff = 0.0f64;
    for (a, b) in d1.pairs.iter().zip(&d2.pairs) {
        for (x, y) in a.f_o.iter().chain(&a.u_o).chain(&a.fracu_o).zip(b.f_o.iter().chain(&b.u_o).chain(&b.fracu_o)) {
            diff = diff.max((x - y).abs());
        }
    }
    ctx.report.below("gauge.cauchy_match", diff, tol.cauchy_match, "max pair-for-pair difference of the Cauchy data");
    let (fo, ao) = ctx.fit_options();
    let (dt, k) = (ctx.cfg.fit.dt, ctx.cfg.fit.samples);
    let recover = |d: &CauchyDataSet, s: &SpectralDecomposition| {
        heat_trace_from_cauchy(d, s, dt, k).and_then(|h| recover_spectral_data(&h, &fo, &ao)).map(|r| r.1)
    };
    let sd1 = recover(&d1, &s1).map_err(|e| ctx.fail("spectral.fit", e))?;
    let sd2 = recover(&d2, &s2).map_err(|e| ctx.fail("spectral.fit", e))?;
    let one = GaugeSide { manifold: &m2, spec: &s2, data: &sd2, potential: &v2 };
    let two = GaugeSide { manifold: &ctx.m, spec: &s1, data: &sd1, potential: &ctx.potential };
    let res = verify_gauge_equivalence(&one, &two, &ctx.obs, tol.eigenvalue).map_err(|e| ctx.fail("gauge.verify", e))?;
    ctx.report.flag("gauge.matched", res.matched, res.witness.clone().unwrap_or_else(|| "data sets are gauge equivalent".into()));
    if let Some(phi) = &res.permutation {
        let generating = phi == &sigma;
        // a different Φ with the same pulled-back potential is an equally valid gauge
        let equivalent = (0..phi.len()).all(|x| ctx.potential.values()[phi[x]] == ctx.potential.values()[sigma[x]]);
        ctx.report.flag("gauge.permutation", generating || equivalent, format!("returned generating permutation: {generating}"));
        ctx.report.flag("gauge.identity_on_o", res.identity_on_o, "Φ fixes every vertex of O");
        let rows: Vec<Vec<String>> = phi.iter().enumerate().map(|(x, y)| vec![x.to_string(), y.to_string(), sigma[x].to_string()]).collect();
        ctx.dir.write_csv("permutation.csv", &["vertex", "recovered", "generator"], &rows)?;
    }
    ctx.report.stage("gauge", &res)
}

/// Full round trip: data generation, spectral recovery, normalization and
/// potential recovery.
pub fn all(ctx: &mut Ctx) -> Result<(), CliError> {
    let data = forward(ctx)?;
    let (_, rec) = spectral_recover(ctx, &data)?;
    normalize_stage(ctx, &rec)?;
    potential_stage(ctx, &data)
}

/// Discretization-dependent thresholds recorded for a config.
pub fn golden_values(ctx: &mut Ctx) -> Result<serde_json::Value, CliError> {
    let alpha = ctx.cfg.alpha;
    let cfg = EntangleConfig::new(vec![alpha], vec![1.0], ctx.obs.indices().to_vec(), ctx.obs.clone()).map_err(|e| ctx.fail("entangle.config", e))?;
    let op = assemble_operator(&ctx.spec, &cfg).map_err(|e| ctx.fail("entangle.assemble", e))?;
    let ucp = injectivity_diagnostic(&op, ctx.cfg.tolerances.nullspace);
    let problem = {
        let spec = ctx.spec.clone();
        ctx.problem(&spec, ctx.potential.clone())?
    };
    let lambda_cap = if ctx.potential.vanishes_on(&ctx.obs) && ctx.potential.is_real() {
        let data = cauchy_generate(&ctx.m, &problem, &ctx.obs, &ctx.cauchy_options()).map_err(|e| ctx.fail("forward.generate", e))?;
        let (fo, ao) = ctx.fit_options();
        heat_trace_from_cauchy(&data, &ctx.spec, ctx.cfg.fit.dt, ctx.cfg.fit.samples)
            .and_then(|h| recover_spectral_data(&h, &fo, &ao))
            .map(|(fit, _)| fit.lambda_cap)
            .ok()
    } else {
        None
    };
    Ok(json!({
        "ucp_sigma_min_normalized": ucp.sigma_min_normalized,
        "lambda_cap": lambda_cap,
        "kernel_dimension": problem.kernel().dim(),
        "lambda_1": ctx.spec.lambda_1(),
    }))
}
