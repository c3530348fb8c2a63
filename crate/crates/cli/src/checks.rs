//! Check dispatch: turns the flag set into calls of the core checkers.

use evolab_core::engine::apply;
use evolab_core::functions::{Family, FamilyKind, SharedFn, TestFunction};
use evolab_core::inequalities::{
    beta_profile, blowup_exponent_fit, gradient_estimate_check, harnack_grid,
    heat_kernel_sup_check, hypercontractivity_recursion_check, kernel_lsi_check, l1_l2_check,
    measure_lsi_check, norm_constant, potential_contraction_check, potential_subinvariance_check,
    supercontractivity_norm_bound, ultrabounded_bound_check, uniform_integrability_check, Budget,
    InequalityReport, LsiDefect, MSupplier, Z,
};
use evolab_core::measures::{
    estimate_measure, invariance_residuals, tightness_check, EmpiricalMeasure, GibbsDensity,
};
use evolab_core::oracle::{ou_apply, ou_invariant, OuSpec};
use evolab_core::{ConfigFile, Error, McEstimate, OperatorSpec, Regime, Result};

pub const CHECKS: &[&str] = &[
    "gradient",
    "kernel_lsi",
    "harnack",
    "invariance",
    "measure_lsi",
    "hypercontractivity",
    "supercontractivity",
    "ultrabounded",
    "blowup",
    "heat_kernel",
    "l1_l2",
    "beta",
    "uniform_integrability",
    "potential",
    "tightness",
];

/// Interval lengths of the kernel-sup fit when `--delta-grid` has fewer than
/// five. It ends at 1, the largest interval the frozen constant must cover.
pub const BLOWUP_GRID: [f64; 7] = [0.1, 0.15, 0.22, 0.33, 0.5, 0.75, 1.0];
pub const EPSILON_GRID: [f64; 6] = [0.05, 0.07, 0.1, 0.15, 0.2, 0.3];
const KERNEL_POINTS: [f64; 7] = [0.0, 1.0, 2.0, 3.0, 5.0, 10.0, 30.0];
const UI_LEVELS: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

pub struct Settings {
    pub checks: Vec<String>,
    pub samples: usize,
    pub inner: usize,
    pub seed: u64,
    pub step: f64,
    pub burn_in: f64,
    pub family: Vec<FamilyKind>,
    pub family_size: usize,
    pub delta_grid: Vec<f64>,
    pub oracle: bool,
}

/// File stem, column headers and rows of one plot data file.
pub type Plot = (String, (&'static str, &'static str), Vec<(f64, f64)>);

#[derive(Default)]
pub struct Artifacts {
    pub reports: Vec<InequalityReport>,
    pub estimates: Vec<(String, McEstimate, u64)>,
    pub plots: Vec<Plot>,
    pub measures: Vec<(String, EmpiricalMeasure)>,
    /// Checks or parameter points skipped because an estimate was unusable.
    pub diagnostics: Vec<String>,
}

struct Run<'a> {
    cfg: &'a ConfigFile,
    spec: &'a OperatorSpec,
    set: &'a Settings,
    family: Family,
    budget: Budget,
    s: f64,
    measures: Vec<(f64, EmpiricalMeasure)>,
    frozen_c: Option<f64>,
    out: Artifacts,
}

fn axis_points(dim: usize, coords: &[f64]) -> Vec<Vec<f64>> {
    coords
        .iter()
        .map(|c| {
            let mut x = vec![0.0; dim];
            x[0] = *c;
            x
        })
        .collect()
}

/// `|a - b| <= 3σ` as a report: the margin carries no error bar of its own.
fn equality_report(name: String, tag: &str, diff: McEstimate, seed: u64) -> InequalityReport {
    let lhs = diff.abs();
    let rhs = McEstimate::exact(Z * diff.stderr);
    let margin = McEstimate::new(rhs.value - lhs.value, 0.0, diff.n);
    InequalityReport::with_margin(name, tag, lhs, rhs, margin, seed)
}

pub fn run(cfg: &ConfigFile, set: &Settings) -> Result<Artifacts> {
    let spec = &cfg.spec;
    let mut run = Run {
        cfg,
        spec,
        set,
        family: Family::build(&set.family, spec.dim, set.family_size, set.seed),
        budget: Budget::new(set.samples, set.step, set.seed),
        s: spec.time_window.0,
        measures: Vec::new(),
        frozen_c: None,
        out: Artifacts::default(),
    };
    if set.oracle {
        run.oracle()?;
    }
    for name in &set.checks {
        let tag = CHECKS
            .iter()
            .position(|c| c == name)
            .expect("validated check name") as u64;
        match run.check(name, &run.budget.child(tag)) {
            Ok(()) => {}
            Err(e @ (Error::ExpMomentDiverged { .. } | Error::FitIllConditioned(_))) => {
                run.out.diagnostics.push(format!("{name}: {e}"))
            }
            Err(e) => return Err(e),
        }
    }
    let Run {
        measures, mut out, ..
    } = run;
    for (t, m) in measures {
        out.measures.push((format!("mu_t{t}"), m));
    }
    Ok(out)
}

impl Run<'_> {
    fn measure(&mut self, t: f64) -> Result<EmpiricalMeasure> {
        if let Some((_, m)) = self.measures.iter().find(|(tt, _)| *tt == t) {
            return Ok(m.clone());
        }
        let lineage = self.budget.lineage.child(0x6d75 ^ t.to_bits());
        let m = estimate_measure(
            self.spec,
            t,
            self.set.burn_in,
            self.set.samples,
            &self.budget.config,
            &lineage,
        )?;
        self.measures.push((t, m.clone()));
        Ok(m)
    }

    fn x_points(&self) -> Vec<Vec<f64>> {
        axis_points(self.spec.dim, &[-1.0, 0.0, 1.0])
    }

    fn members(&self) -> Vec<SharedFn> {
        self.family.members.clone()
    }

    fn oracle(&mut self) -> Result<()> {
        let ou = OuSpec::from_operator(self.spec)?;
        let b = self.budget.child(1000);
        for &dt in &self.set.delta_grid {
            let t = self.s + dt;
            for x in self.x_points() {
                for f in self.members() {
                    let f = f.as_ref();
                    let exact = match ou_apply(&ou, f, self.s, t, &x) {
                        Ok(v) => v,
                        Err(Error::UnsupportedFunction(_)) => continue,
                        Err(e) => return Err(e),
                    };
                    let mc = apply(self.spec, f, self.s, t, &x, b.n, &b.config, &b.lineage)?;
                    let name = format!("oracle[{}]", f.name());
                    self.out.estimates.push((
                        format!("{name}[dt={dt};x={x:?}]"),
                        mc,
                        b.lineage.master_seed,
                    ));
                    let rep = equality_report(
                        name,
                        "oracle",
                        mc.minus(McEstimate::exact(exact)),
                        b.lineage.master_seed,
                    )
                    .param("t", t)
                    .param("exact", exact)
                    .point("x", &x);
                    self.out.reports.push(rep);
                }
            }
        }
        Ok(())
    }

    fn check(&mut self, name: &str, b: &Budget) -> Result<()> {
        let s = self.s;
        let deltas = self.set.delta_grid.clone();
        match name {
            "gradient" | "kernel_lsi" => {
                for &dt in &deltas {
                    for x in self.x_points() {
                        for f in self.members() {
                            let f = f.as_ref();
                            let rep = if name == "gradient" {
                                gradient_estimate_check(self.spec, f, 2.0, s, s + dt, &x, b)?
                            } else {
                                kernel_lsi_check(self.spec, f, 2.0, s, s + dt, &x, b)?
                            };
                            self.out.reports.push(rep);
                        }
                    }
                }
            }
            "harnack" => {
                let pts = axis_points(self.spec.dim, &[-2.0, -1.0, 0.0, 1.0, 2.0]);
                for &dt in &deltas {
                    for f in self.members() {
                        let f = f.as_ref();
                        self.out.reports.extend(harnack_grid(
                            self.spec,
                            f,
                            &[1.5, 2.0, 4.0],
                            s,
                            s + dt,
                            &pts,
                            b,
                        )?);
                    }
                }
            }
            "invariance" => {
                let members = self.members();
                let fs: Vec<&dyn TestFunction> = members.iter().map(|f| f.as_ref()).collect();
                for &dt in &deltas {
                    let rs = invariance_residuals(
                        self.spec,
                        &fs,
                        s,
                        s + dt,
                        b.n,
                        self.set.burn_in,
                        &b.config,
                        &b.lineage,
                    )?;
                    for (f, r) in fs.iter().zip(rs) {
                        self.out.reports.push(
                            equality_report(
                                format!("invariance[{}]", f.name()),
                                "invariance",
                                r.propagated.minus(r.direct),
                                b.lineage.master_seed,
                            )
                            .param("s", s)
                            .param("t", s + dt),
                        );
                    }
                }
            }
            "measure_lsi" => {
                let mu_s = self.measure(s)?;
                let defect = self.defect(&mu_s)?;
                for f in self.members() {
                    let f = f.as_ref();
                    self.out.reports.push(measure_lsi_check(&mu_s, f, &defect)?);
                }
            }
            "hypercontractivity" => {
                let mu_s = self.measure(s)?;
                let defect = self.defect(&mu_s)?;
                for &dt in &deltas {
                    let mu_t = self.measure(s + dt)?;
                    for f in self.members() {
                        let f = f.as_ref();
                        self.out.reports.push(hypercontractivity_recursion_check(
                            self.spec,
                            f,
                            2.0,
                            &defect,
                            &mu_s,
                            &mu_t,
                            self.set.inner,
                            b,
                        )?);
                    }
                }
            }
            "supercontractivity" => {
                let mu_s = self.measure(s)?;
                for &dt in &deltas {
                    let mu_t = self.measure(s + dt)?;
                    let r = supercontractivity_norm_bound(
                        self.spec,
                        &self.family,
                        2.0,
                        3.0,
                        &mu_s,
                        &mu_t,
                        self.set.inner,
                        b,
                    );
                    self.keep(r, &format!("supercontractivity dt={dt}"))?;
                }
            }
            "ultrabounded" => {
                let mu_s = self.measure(s)?;
                let supplier = if self.spec.regime.is_ultracontractive() {
                    MSupplier::Analytic
                } else {
                    MSupplier::Empirical {
                        points: self.x_points(),
                    }
                };
                for &dt in &deltas {
                    let mu_t = self.measure(s + dt)?;
                    let pts = self.x_points();
                    self.out.reports.extend(ultrabounded_bound_check(
                        self.spec,
                        &self.family,
                        &mu_s,
                        &mu_t,
                        &pts,
                        &supplier,
                        b,
                    )?);
                }
            }
            "blowup" => {
                self.blowup(b)?;
            }
            "heat_kernel" => {
                let c = self.frozen(b)?;
                let density = GibbsDensity::new(self.spec)?;
                let pts = axis_points(self.spec.dim, &KERNEL_POINTS);
                for &dt in &deltas {
                    self.out.reports.push(heat_kernel_sup_check(
                        self.spec,
                        &density,
                        s,
                        s + dt,
                        &pts,
                        c,
                        b,
                    )?);
                }
            }
            "l1_l2" => {
                let c = self.frozen(b)?;
                let mu_s = self.measure(s)?;
                for &dt in &deltas {
                    let mu_t = self.measure(s + dt)?;
                    self.out.reports.extend(l1_l2_check(
                        self.spec,
                        &self.family,
                        &mu_s,
                        &mu_t,
                        c,
                        self.set.inner,
                        b,
                    )?);
                }
            }
            "beta" => {
                let mu_s = self.measure(s)?;
                let hi = mu_s.sorted_first();
                let top = hi[(0.999 * hi.len() as f64) as usize].max(0.5);
                let centers: Vec<f64> = (0..=8).map(|k| top * k as f64 / 8.0).collect();
                let fam =
                    Family::bump_grid(self.spec.dim, &centers, &[0.25, 0.5, 1.0, 2.0, 4.0, 8.0]);
                let bp = beta_profile(self.spec, &mu_s, &EPSILON_GRID, &fam)?;
                let seed = mu_s.lineage.master_seed;
                for (e, v) in bp.epsilon.iter().zip(&bp.beta) {
                    self.out.estimates.push((
                        format!("beta_hat[eps={e}]"),
                        McEstimate::exact(*v),
                        seed,
                    ));
                }
                if let Some(k) = bp.tail_exponent {
                    self.out.estimates.push((
                        "beta_tail_exponent".into(),
                        McEstimate::exact(k),
                        seed,
                    ));
                }
                if let Some(c1) = bp.c1 {
                    self.out
                        .estimates
                        .push(("c1".into(), McEstimate::exact(c1), seed));
                }
                let rows = bp
                    .epsilon
                    .iter()
                    .zip(&bp.beta)
                    .map(|(e, v)| (*e, *v))
                    .collect();
                self.out
                    .plots
                    .push(("beta_profile".into(), ("epsilon", "beta_hat"), rows));
            }
            "uniform_integrability" => {
                let mu_s = self.measure(s)?;
                for &dt in &deltas {
                    let mu_t = self.measure(s + dt)?;
                    let r = uniform_integrability_check(
                        self.spec,
                        &self.family,
                        &mu_s,
                        &mu_t,
                        &UI_LEVELS,
                        self.set.inner,
                        b,
                    );
                    self.keep(r, &format!("uniform_integrability dt={dt}"))?;
                }
            }
            "potential" => {
                let potential = self.cfg.potential.clone().ok_or_else(|| {
                    Error::Config("check 'potential' needs a [potential] section".into())
                })?;
                let positive = Family::build(
                    &[FamilyKind::Gaussian],
                    self.spec.dim,
                    self.set.family_size,
                    self.set.seed,
                );
                for &dt in &deltas {
                    for f in &positive.members {
                        for x in self.x_points() {
                            self.out.reports.push(potential_contraction_check(
                                self.spec,
                                &potential,
                                f.as_ref(),
                                s,
                                s + dt,
                                &x,
                                b,
                            )?);
                        }
                        if potential.infimum() >= 0.0 {
                            self.out.reports.push(potential_subinvariance_check(
                                self.spec,
                                &potential,
                                f.as_ref(),
                                s,
                                s + dt,
                                self.set.burn_in,
                                b,
                            )?);
                        }
                    }
                }
            }
            "tightness" => {
                let ms: Vec<EmpiricalMeasure> = std::iter::once(0.0)
                    .chain(deltas.iter().copied())
                    .map(|d| self.measure(s + d))
                    .collect::<Result<_>>()?;
                let radii = [0.5, 1.0, 2.0, 4.0, 8.0];
                let rep = tightness_check(&ms, 0.05, &radii);
                for (r, m) in radii.iter().zip(&rep.min_mass) {
                    self.out.estimates.push((
                        format!("tightness_min_mass[R={r}]"),
                        McEstimate::exact(*m),
                        b.lineage.master_seed,
                    ));
                }
                if let Some(r) = rep.radius {
                    self.out.estimates.push((
                        "tightness_radius[eps=0.05]".into(),
                        McEstimate::exact(r),
                        b.lineage.master_seed,
                    ));
                }
            }
            other => return Err(Error::Config(format!("unknown check {other:?}"))),
        }
        Ok(())
    }

    /// Stores the reports, or records a diagnostic when the exponential moment
    /// behind the constant could not be estimated.
    fn keep(&mut self, r: Result<Vec<InequalityReport>>, label: &str) -> Result<()> {
        match r {
            Ok(reps) => self.out.reports.extend(reps),
            Err(e @ Error::ExpMomentDiverged { .. }) => {
                self.out.diagnostics.push(format!("{label}: {e}"))
            }
            Err(e) => return Err(e),
        }
        Ok(())
    }

    /// Gaussian inequality for Ornstein-Uhlenbeck operators, otherwise the
    /// defect derived from `C_{2,3}` at the largest interval of the grid.
    fn defect(&mut self, mu_s: &EmpiricalMeasure) -> Result<LsiDefect> {
        if let Ok(ou) = OuSpec::from_operator(self.spec) {
            if let Ok(v) = ou_invariant(&ou) {
                return Ok(LsiDefect::gaussian(v));
            }
        }
        let dt = self.set.delta_grid.iter().copied().fold(0.0, f64::max);
        let mu_t = self.measure(self.s + dt)?;
        let c = norm_constant(self.spec, mu_s, &mu_t, 2.0, 3.0)?;
        LsiDefect::from_norm_constant(self.spec, &c)
    }

    fn blowup(&mut self, b: &Budget) -> Result<f64> {
        if !matches!(self.spec.regime, Regime::Ultracontractive { .. }) {
            return Err(Error::RegimeMismatch {
                required: "ultracontractive",
                found: self.spec.regime.to_string(),
            });
        }
        let grid: Vec<f64> = if self.set.delta_grid.len() >= 5 {
            self.set.delta_grid.clone()
        } else {
            BLOWUP_GRID.to_vec()
        };
        let density = GibbsDensity::new(self.spec)?;
        let pts = axis_points(self.spec.dim, &KERNEL_POINTS);
        let (fit, _) = blowup_exponent_fit(self.spec, &density, &grid, self.s, &pts, b)?;
        let seed = b.lineage.master_seed;
        for (d, l) in fit.deltas.iter().zip(&fit.log_sups) {
            self.out.estimates.push((
                format!("log_kernel_sup[dt={d}]"),
                McEstimate::exact(*l),
                seed,
            ));
        }
        for (k, v) in [
            ("blowup_slope", fit.slope),
            ("blowup_c_fit", fit.c_fit),
            ("blowup_c_bound", fit.c_bound),
        ] {
            self.out
                .estimates
                .push((k.into(), McEstimate::exact(v), seed));
        }
        let rows = fit
            .deltas
            .iter()
            .zip(&fit.log_sups)
            .map(|(d, l)| ((1.0 / d).ln(), l.ln()))
            .collect();
        self.out.plots.push((
            "blowup".into(),
            ("log_inv_delta", "log_log_kernel_sup"),
            rows,
        ));
        self.frozen_c = Some(fit.c_bound);
        Ok(fit.c_bound)
    }

    fn frozen(&mut self, b: &Budget) -> Result<f64> {
        match self.frozen_c {
            Some(c) => Ok(c),
            None => self.blowup(&b.child(0xb10)),
        }
    }
}

/// 64 for configuration and precondition problems, 70 for estimator failures.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::Expr(_)
        | Error::RegimeMismatch { .. }
        | Error::DimensionTooHigh(_)
        | Error::Precondition(_)
        | Error::DegenerateExponents { .. }
        | Error::UnsupportedFunction(_)
        | Error::NotConstantCoefficient
        | Error::SymmetryViolation { .. }
        | Error::NotConvex { .. }
        | Error::TailNotIntegrable { .. }
        | Error::Domain(_) => 64,
        _ => 70,
    }
}
