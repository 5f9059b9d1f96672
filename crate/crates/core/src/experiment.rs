//! Sweep configuration, the rigidity battery and machine-readable reports.
//!
//! Every cell of a sweep is one parameter value. Cells run in parallel; inside a
//! cell the diagnostics share the periodic orbits, the cocycle solution and the
//! Franks map. Verdicts are pure functions of the recorded numbers and the
//! configured thresholds.

use std::cell::OnceCell;
use std::fmt;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::bundles::{estimate_rates, Bundle};
use crate::cohomology::{solve_transfer, CohomologySolution};
use crate::conjugacy::{center_diff_probe, conjugacy_residual, holder_probe, invert_h_on_leaf, solve_franks, ConjugacyField};
use crate::error::{Error, Result};
use crate::foliation::{
    accessibility_scan, holonomy_ratio_test, homology_profile, su_path, CenterDensity, GapMetric, SuPath, TraceOptions,
};
use crate::model::{MapModel, TrigField};
use crate::orbits::{all_orbits, PeriodicOrbit};
use crate::torus::{LiftPoint, ToralAutomorphism, Vec3};

pub const SCHEMA_VERSION: &str = "1.0";

/// Cocycle solutions below this sup residual are used as the center metric for su-defects.
const CENTER_METRIC_RESIDUAL: f64 = 1e-3;
/// Homology deviations below this are treated as straight leaves.
const HOMOLOGY_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Perturbed,
    Conjugated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Diagnostic {
    Spectrum,
    Accessibility,
    Cohomology,
    HomologyBound,
    HolonomyRatio,
    Franks,
    Holder,
}

impl Diagnostic {
    pub const ALL: [Diagnostic; 7] = [
        Diagnostic::Spectrum,
        Diagnostic::Accessibility,
        Diagnostic::Cohomology,
        Diagnostic::HomologyBound,
        Diagnostic::HolonomyRatio,
        Diagnostic::Franks,
        Diagnostic::Holder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Diagnostic::Spectrum => "spectrum",
            Diagnostic::Accessibility => "accessibility",
            Diagnostic::Cohomology => "cohomology",
            Diagnostic::HomologyBound => "homology_bound",
            Diagnostic::HolonomyRatio => "holonomy_ratio",
            Diagnostic::Franks => "franks",
            Diagnostic::Holder => "holder",
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Classification thresholds. A diagnostic reads non-rigid when its value exceeds its threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Spread of periodic center multipliers.
    pub dispersion: f64,
    /// Largest sampled su-closure defect.
    pub su_defect: f64,
    /// Smallest least-squares residual of the cocycle equation over the mode list.
    pub cohomology_floor: f64,
    /// Growth factor of the unstable-leaf deviation between the two radii.
    pub homology_growth: f64,
    /// `|d/dn log r_n|` of the holonomy ratio sequence.
    pub ratio_trend: f64,
    /// Relative drift of `|H(I)| / d^c(I)` over nested center arcs.
    pub center_diff_drift: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            dispersion: 1e-4,
            su_defect: 1e-4,
            cohomology_floor: 1e-3,
            homology_growth: 1.5,
            ratio_trend: 1.5e-2,
            center_diff_drift: 1e-3,
        }
    }
}

impl Tolerances {
    fn named(&self) -> [(&'static str, f64); 6] {
        [
            ("dispersion", self.dispersion),
            ("su_defect", self.su_defect),
            ("cohomology_floor", self.cohomology_floor),
            ("homology_growth", self.homology_growth),
            ("ratio_trend", self.ratio_trend),
            ("center_diff_drift", self.center_diff_drift),
        ]
    }
}

/// Numerical resolution of the battery.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    /// Largest minimal period entering the spectrum.
    pub spectrum_period: usize,
    pub orbit_limit: usize,
    pub su_samples: usize,
    pub leg_length: f64,
    pub trace_step: f64,
    pub cohomology_modes: Vec<usize>,
    pub cohomology_grid: usize,
    /// Short and long radius of the homology comparison.
    pub homology_radii: [f64; 2],
    pub holonomy_arc: f64,
    pub holonomy_steps: usize,
    pub franks_depth: usize,
    pub franks_samples: usize,
    pub holder_scales: Vec<f64>,
    pub center_diff_lengths: Vec<f64>,
    /// Samples of the partial hyperbolicity check run before the sweep.
    pub rate_samples: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            spectrum_period: 2,
            orbit_limit: 100_000,
            su_samples: 32,
            leg_length: 0.2,
            trace_step: 0.01,
            cohomology_modes: vec![4, 6, 8],
            cohomology_grid: 24,
            homology_radii: [5.0, 50.0],
            holonomy_arc: 0.02,
            holonomy_steps: 15,
            franks_depth: 60,
            franks_samples: 1000,
            holder_scales: vec![1e-4, 1e-3, 1e-2, 1e-1],
            center_diff_lengths: vec![1e-3, 1e-2, 1e-1, 1.0],
            rate_samples: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub matrix: [[i64; 3]; 3],
    pub family: Family,
    /// `p` for the perturbed family, `q` for the conjugated one.
    pub modes: TrigField,
    pub epsilon_sweep: Vec<f64>,
    #[serde(default)]
    pub battery: Vec<Diagnostic>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub settings: Settings,
}

impl FromStr for ExperimentConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(s).map_err(|e| Error::ConfigInvalid(vec![e.to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn span(values: &[f64]) -> f64 {
    let lo = values.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
    let hi = values.iter().map(|v| v.abs()).fold(0.0, f64::max);
    hi / lo
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        std::fs::read_to_string(path)?.parse()
    }

    pub fn base(&self) -> Result<ToralAutomorphism> {
        ToralAutomorphism::from_rows(self.matrix)
    }

    pub fn model(&self, epsilon: f64) -> Result<MapModel> {
        let base = self.base()?;
        Ok(match self.family {
            Family::Perturbed => MapModel::perturbed(base, self.modes.clone(), epsilon),
            Family::Conjugated => MapModel::conjugated(base, self.modes.clone(), epsilon),
        })
    }

    /// Static checks with one message per offending field.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let base = match self.base() {
            Ok(b) => Some(b),
            Err(e) => {
                errs.push(format!("matrix: {e}"));
                None
            }
        };
        for (i, mode) in self.modes.modes.iter().enumerate() {
            if !mode.amplitude.iter().chain([&mode.phase]).all(|v| v.is_finite()) {
                errs.push(format!("modes[{i}]: amplitude and phase must be finite"));
            }
        }
        if self.epsilon_sweep.is_empty() {
            errs.push("epsilon_sweep: at least one value required".into());
        }
        for (i, &eps) in self.epsilon_sweep.iter().enumerate() {
            if !eps.is_finite() || eps < 0.0 {
                errs.push(format!("epsilon_sweep[{i}]: {eps} is not a finite non-negative number"));
            } else if let Some(b) = &base {
                let m = match self.family {
                    Family::Perturbed => MapModel::perturbed(b.clone(), self.modes.clone(), eps),
                    Family::Conjugated => MapModel::conjugated(b.clone(), self.modes.clone(), eps),
                };
                if !m.is_certified() {
                    errs.push(format!(
                        "epsilon_sweep[{i}]: {eps} exceeds the invertibility certificate (margin {:.3e})",
                        m.invertibility_margin()
                    ));
                }
            }
        }
        for (i, d) in self.battery.iter().enumerate() {
            if self.battery[..i].contains(d) {
                errs.push(format!("battery[{i}]: duplicate diagnostic {d}"));
            }
        }
        for (name, v) in self.tolerances.named() {
            if !(v.is_finite() && v > 0.0) {
                errs.push(format!("tolerances.{name}: {v} must be positive"));
            }
        }
        let s = &self.settings;
        if s.spectrum_period == 0 {
            errs.push("settings.spectrum_period: must be at least 1".into());
        }
        if s.su_samples == 0 {
            errs.push("settings.su_samples: must be at least 1".into());
        }
        if !(s.leg_length > 0.0 && s.leg_length <= 0.5) {
            errs.push(format!("settings.leg_length: {} outside (0, 0.5]", s.leg_length));
        }
        if !(s.trace_step > 0.0 && s.trace_step <= 0.1) {
            errs.push(format!("settings.trace_step: {} outside (0, 0.1]", s.trace_step));
        }
        if s.cohomology_modes.is_empty() {
            errs.push("settings.cohomology_modes: at least one mode count required".into());
        }
        for (i, &k) in s.cohomology_modes.iter().enumerate() {
            if k == 0 || 2 * k >= s.cohomology_grid {
                errs.push(format!("settings.cohomology_modes[{i}]: {k} needs 1 <= modes and 2*modes < cohomology_grid"));
            }
        }
        let [r0, r1] = s.homology_radii;
        if !(r0 > 0.0 && r1 > r0 && r1.is_finite()) {
            errs.push(format!("settings.homology_radii: need 0 < short < long, got [{r0}, {r1}]"));
        }
        if !(s.holonomy_arc > 0.0 && s.holonomy_arc <= 0.2) {
            errs.push(format!("settings.holonomy_arc: {} outside (0, 0.2]", s.holonomy_arc));
        }
        if s.holonomy_steps < 2 {
            errs.push("settings.holonomy_steps: must be at least 2".into());
        }
        if s.franks_depth == 0 {
            errs.push("settings.franks_depth: must be at least 1".into());
        }
        if s.franks_samples == 0 {
            errs.push("settings.franks_samples: must be at least 1".into());
        }
        if s.holder_scales.iter().any(|v| !(v.is_finite() && *v > 0.0)) || !(span(&s.holder_scales) >= 1e3) {
            errs.push("settings.holder_scales: positive scales spanning three decades required".into());
        }
        if s.center_diff_lengths.iter().any(|v| !(v.is_finite() && *v > 0.0)) || !(span(&s.center_diff_lengths) >= 1e3) {
            errs.push("settings.center_diff_lengths: positive lengths spanning three decades required".into());
        }
        if s.rate_samples == 0 {
            errs.push("settings.rate_samples: must be at least 1".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigInvalid(errs))
        }
    }

    fn trace_options(&self) -> TraceOptions {
        TraceOptions::with_step(self.settings.trace_step)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Class {
    Rigid,
    NonRigid,
    /// Recorded without a rigidity reading.
    Informational,
    Failed,
}

impl Class {
    pub fn name(self) -> &'static str {
        match self {
            Class::Rigid => "rigid",
            Class::NonRigid => "non_rigid",
            Class::Informational => "informational",
            Class::Failed => "failed",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub diagnostic: Diagnostic,
    pub value: Option<f64>,
    pub threshold: Option<f64>,
    pub class: Class,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeResidual {
    pub modes: usize,
    pub residual_l2: f64,
    pub residual_sup: f64,
    pub psi_error: f64,
}

/// Everything measured at one parameter value. Absent numbers were not requested or failed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub epsilon: f64,
    pub margin: f64,
    /// Largest sampled `|det Df - det A|`; metadata only.
    pub volume_defect: f64,
    pub dispersion: Option<f64>,
    pub orbit_count: Option<usize>,
    pub orbits_skipped: Option<usize>,
    pub max_su_defect: Option<f64>,
    pub mean_su_defect: Option<f64>,
    pub su_skipped: Option<usize>,
    pub gap_metric: Option<GapMetric>,
    pub cohomology: Option<Vec<ModeResidual>>,
    pub cohomology_residual_floor: Option<f64>,
    pub homology_deviation: Option<[f64; 2]>,
    pub homology_growth_flag: Option<bool>,
    pub ratio_trend: Option<f64>,
    /// `log(λ_c(p)/λ_c(q))` of the two orbits used by the ratio test.
    pub ratio_predicted: Option<f64>,
    pub ratio_bounds: Option<[f64; 2]>,
    pub franks_residual: Option<f64>,
    pub center_diff_drift: Option<f64>,
    pub holder_beta: Option<f64>,
    pub verdicts: Vec<Verdict>,
    /// All rigid/non-rigid verdicts of the cell agree.
    pub coherent: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub generator: String,
    pub matrix: [[i64; 3]; 3],
    pub eigenvalues: [f64; 3],
    pub family: Family,
    pub modes: TrigField,
    pub epsilon_sweep: Vec<f64>,
    pub battery: Vec<Diagnostic>,
    pub seed: u64,
    pub settings: Settings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub schema_version: String,
    pub metadata: Metadata,
    pub thresholds: Tolerances,
    pub cells: Vec<CellReport>,
    /// Fraction of cells with at least one classifying verdict whose verdicts all agree.
    pub coherence: Option<f64>,
}

impl EquivalenceReport {
    /// Share of cells where the two diagnostics are both classified and agree.
    pub fn pair_agreement(&self, a: Diagnostic, b: Diagnostic) -> Option<f64> {
        let class = |c: &CellReport, d| c.verdicts.iter().find(|v| v.diagnostic == d).map(|v| v.class);
        let pairs: Vec<bool> = self
            .cells
            .iter()
            .filter_map(|c| match (class(c, a), class(c, b)) {
                (Some(x), Some(y)) => Some(x == y && matches!(x, Class::Rigid | Class::NonRigid)),
                _ => None,
            })
            .collect();
        (!pairs.is_empty()).then(|| pairs.iter().filter(|&&p| p).count() as f64 / pairs.len() as f64)
    }
}

/// The fixed point `p`, the period-2 orbit `q` of smallest center multiplier and an
/// s-leg from `p` to the center-unstable leaf of a lift of `q`.
#[derive(Clone, Debug)]
pub struct HolonomyFixture {
    pub p: PeriodicOrbit,
    pub q: PeriodicOrbit,
    pub lift: [i64; 3],
    pub su: SuPath,
}

/// Picks the lift of `q` whose linear s-coordinate relative to `p` lies in
/// `(0.02, 0.2)` with the smallest center-unstable offset, and realizes the
/// s-leg on the `F`-leaf through `p` by inverting `H`.
pub fn holonomy_fixture(
    m: &MapModel,
    hf: &ConjugacyField,
    orbits: &[PeriodicOrbit],
    opts: &TraceOptions,
) -> Result<HolonomyFixture> {
    let p = orbits.iter().find(|o| o.period == 1).ok_or_else(|| Error::InvalidInput("no fixed point".into()))?;
    let q = orbits
        .iter()
        .filter(|o| o.period == 2)
        .min_by(|a, b| a.lambda_c.total_cmp(&b.lambda_c))
        .ok_or_else(|| Error::InvalidInput("no period-2 orbit".into()))?;
    let a = m.base();
    let (vs, ws) = (a.eigenvectors()[0], a.dual_basis()[0]);
    let hp = hf.eval(&p.lift_point())?;
    let hq = hf.eval(&q.lift_point())?;
    let mut best: Option<([i64; 3], f64, f64)> = None;
    for i in -3..=3 {
        for j in -3..=3 {
            for k in -3..=3 {
                let d = hq + Vec3::new(i as f64, j as f64, k as f64) - hp;
                let t = ws.dot(&d);
                let off = (d - vs * t).norm();
                if t.abs() > 0.02 && t.abs() < 0.2 && best.is_none_or(|b| off < b.2) {
                    best = Some(([i, j, k], t, off));
                }
            }
        }
    }
    let (lift, t, _) = best.ok_or_else(|| Error::InvalidInput("no lift of q within s-distance 0.2 of p".into()))?;
    let pre = invert_h_on_leaf(hf, &p.lift_point(), &(hp + vs * t), Bundle::S, opts)?;
    let su = su_path(m, &p.lift_point(), &[(Bundle::S, pre.param)], opts)?;
    Ok(HolonomyFixture { p: p.clone(), q: q.clone(), lift, su })
}

type Shared<T> = OnceCell<std::result::Result<T, String>>;

fn shared<T>(cell: &Shared<T>, f: impl FnOnce() -> Result<T>) -> std::result::Result<&T, String> {
    cell.get_or_init(|| f().map_err(|e| e.to_string())).as_ref().map_err(Clone::clone)
}

struct CellRun<'a> {
    cfg: &'a ExperimentConfig,
    m: MapModel,
    opts: TraceOptions,
    orbits: Shared<(Vec<PeriodicOrbit>, usize)>,
    cohomology: Shared<(Vec<ModeResidual>, CohomologySolution)>,
    franks: Shared<ConjugacyField>,
}

impl CellRun<'_> {
    fn orbits(&self) -> std::result::Result<&(Vec<PeriodicOrbit>, usize), String> {
        let n = self.cfg.settings.spectrum_period.max(2);
        shared(&self.orbits, || {
            let (o, skipped) = all_orbits(&self.m, n, self.cfg.settings.orbit_limit)?;
            Ok((o, skipped.len()))
        })
    }

    /// Residuals for every mode count and the solution with the smallest one.
    fn cohomology(&self) -> std::result::Result<&(Vec<ModeResidual>, CohomologySolution), String> {
        shared(&self.cohomology, || {
            let mut rows = Vec::new();
            let mut best: Option<CohomologySolution> = None;
            for &k in &self.cfg.settings.cohomology_modes {
                let sol = solve_transfer(&self.m, k, self.cfg.settings.cohomology_grid)?;
                rows.push(ModeResidual {
                    modes: k,
                    residual_l2: sol.residual_l2,
                    residual_sup: sol.residual_sup,
                    psi_error: sol.psi_error,
                });
                if best.as_ref().is_none_or(|b| sol.residual_l2 < b.residual_l2) {
                    best = Some(sol);
                }
            }
            Ok((rows, best.expect("validated non-empty mode list")))
        })
    }

    fn franks(&self) -> std::result::Result<&ConjugacyField, String> {
        shared(&self.franks, || solve_franks(&self.m, self.cfg.settings.franks_depth, 0))
    }

    fn run(&self, d: Diagnostic, out: &mut CellReport) -> std::result::Result<Option<f64>, String> {
        let s = &self.cfg.settings;
        match d {
            Diagnostic::Spectrum => {
                let (orbits, skipped) = self.orbits()?;
                let lc: Vec<f64> = orbits.iter().filter(|o| o.period <= s.spectrum_period).map(|o| o.lambda_c).collect();
                let hi = lc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lo = lc.iter().copied().fold(f64::INFINITY, f64::min);
                let dispersion = if lc.is_empty() { 0.0 } else { hi - lo };
                out.dispersion = Some(dispersion);
                out.orbit_count = Some(lc.len());
                out.orbits_skipped = Some(*skipped);
                Ok(Some(dispersion))
            }
            Diagnostic::Accessibility => {
                let density = match self.cfg.battery.contains(&Diagnostic::Cohomology) {
                    true => self.cohomology().ok().map(|c| &c.1).filter(|sol| sol.residual_sup < CENTER_METRIC_RESIDUAL),
                    false => None,
                };
                let scan = accessibility_scan(
                    &self.m,
                    s.su_samples,
                    s.leg_length,
                    s.leg_length,
                    self.cfg.seed,
                    density.map(|d| d as &dyn CenterDensity),
                    &self.opts,
                );
                out.gap_metric = Some(if density.is_some() { GapMetric::CenterMetric } else { GapMetric::EuclideanArclength });
                out.mean_su_defect = Some(scan.mean_defect);
                out.su_skipped = Some(scan.skipped);
                if scan.skipped == s.su_samples {
                    let first = scan.samples.iter().find_map(|x| x.error.clone()).unwrap_or_default();
                    return Err(format!("every su-defect sample failed: {first}"));
                }
                out.max_su_defect = Some(scan.max_defect);
                Ok(Some(scan.max_defect))
            }
            Diagnostic::Cohomology => {
                let (rows, best) = self.cohomology()?;
                out.cohomology = Some(rows.clone());
                out.cohomology_residual_floor = Some(best.residual_l2);
                Ok(Some(best.residual_l2))
            }
            Diagnostic::HomologyBound => {
                let x = LiftPoint::new(0.1, 0.2, 0.3);
                let dev = homology_profile(&self.m, &x, &s.homology_radii, &self.opts).map_err(|e| e.to_string())?;
                let growth = dev[1] / dev[0].max(HOMOLOGY_FLOOR);
                let flag = dev[1] > HOMOLOGY_FLOOR && growth > self.cfg.tolerances.homology_growth;
                out.homology_deviation = Some([dev[0], dev[1]]);
                out.homology_growth_flag = Some(flag);
                Ok(Some(growth))
            }
            Diagnostic::HolonomyRatio => {
                let (orbits, _) = self.orbits()?;
                let hf = self.franks()?;
                let fx = holonomy_fixture(&self.m, hf, orbits, &self.opts).map_err(|e| e.to_string())?;
                let seq = holonomy_ratio_test(&self.m, &fx.p, s.holonomy_arc, &fx.su, s.holonomy_steps, &self.opts)
                    .map_err(|e| e.to_string())?;
                let (lo, hi) = seq.bounds();
                out.ratio_trend = Some(seq.trend);
                out.ratio_predicted = Some((fx.p.lambda_c / fx.q.lambda_c).ln());
                out.ratio_bounds = Some([lo, hi]);
                Ok(Some(seq.trend.abs()))
            }
            Diagnostic::Franks => {
                let hf = self.franks()?;
                let res = conjugacy_residual(hf, &self.m, s.franks_samples, self.cfg.seed).map_err(|e| e.to_string())?;
                out.franks_residual = Some(res);
                let (_, sol) = self.cohomology()?;
                let rep = center_diff_probe(hf, sol, &LiftPoint::new(0.2, 0.5, 0.9), &s.center_diff_lengths, &self.opts)
                    .map_err(|e| e.to_string())?;
                out.center_diff_drift = Some(rep.drift);
                Ok(Some(rep.drift))
            }
            Diagnostic::Holder => {
                let hf = self.franks()?;
                let fit = holder_probe(hf, &LiftPoint::new(0.1, 0.1, 0.1), Bundle::U, &s.holder_scales, &self.opts)
                    .map_err(|e| e.to_string())?;
                out.holder_beta = Some(fit.beta_hat);
                Ok(Some(fit.beta_hat))
            }
        }
    }
}

fn threshold(t: &Tolerances, d: Diagnostic) -> Option<f64> {
    match d {
        Diagnostic::Spectrum => Some(t.dispersion),
        Diagnostic::Accessibility => Some(t.su_defect),
        Diagnostic::Cohomology => Some(t.cohomology_floor),
        Diagnostic::HomologyBound => Some(t.homology_growth),
        Diagnostic::HolonomyRatio => Some(t.ratio_trend),
        Diagnostic::Franks => Some(t.center_diff_drift),
        Diagnostic::Holder => None,
    }
}

/// Rigid/non-rigid reading of a recorded value.
pub fn classify(d: Diagnostic, value: Option<f64>, t: &Tolerances, cell: &CellReport) -> Class {
    let Some(v) = value else { return Class::Failed };
    match (d, threshold(t, d)) {
        (Diagnostic::HomologyBound, _) => match cell.homology_growth_flag {
            Some(true) => Class::NonRigid,
            Some(false) => Class::Rigid,
            None => Class::Failed,
        },
        (_, Some(thr)) if v > thr => Class::NonRigid,
        (_, Some(_)) => Class::Rigid,
        (_, None) => Class::Informational,
    }
}

fn run_cell(cfg: &ExperimentConfig, epsilon: f64) -> CellReport {
    let mut out = CellReport { epsilon, ..Default::default() };
    let m = match cfg.model(epsilon) {
        Ok(m) => m,
        Err(e) => {
            out.verdicts = cfg
                .battery
                .iter()
                .map(|&d| Verdict {
                    diagnostic: d,
                    value: None,
                    threshold: threshold(&cfg.tolerances, d),
                    class: Class::Failed,
                    error: Some(e.to_string()),
                })
                .collect();
            return out;
        }
    };
    out.margin = m.invertibility_margin();
    out.volume_defect = m.volume_defect(cfg.settings.rate_samples, cfg.seed);
    let cell = CellRun {
        cfg,
        m,
        opts: cfg.trace_options(),
        orbits: OnceCell::new(),
        cohomology: OnceCell::new(),
        franks: OnceCell::new(),
    };
    // the cocycle runs first so that the accessibility scan can measure gaps in d^c
    let mut order = cfg.battery.clone();
    order.sort_by_key(|d| *d != Diagnostic::Cohomology);
    let mut results = Vec::new();
    for d in order {
        let r = cell.run(d, &mut out);
        results.push((d, r));
    }
    out.verdicts = cfg
        .battery
        .iter()
        .map(|&d| {
            let (_, r) = results.iter().find(|(x, _)| *x == d).expect("every diagnostic ran");
            let (value, error) = match r {
                Ok(v) => (*v, None),
                Err(e) => (None, Some(e.clone())),
            };
            Verdict {
                diagnostic: d,
                value,
                threshold: threshold(&cfg.tolerances, d),
                class: classify(d, value, &cfg.tolerances, &out),
                error,
            }
        })
        .collect();
    let classes: Vec<Class> =
        out.verdicts.iter().map(|v| v.class).filter(|c| matches!(c, Class::Rigid | Class::NonRigid)).collect();
    out.coherent = (!classes.is_empty()).then(|| classes.windows(2).all(|w| w[0] == w[1]));
    out
}

/// Runs the battery over the sweep. Per-cell failures end up in the verdicts; only an
/// invalid configuration or a model failing partial hyperbolicity aborts.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<EquivalenceReport> {
    cfg.validate()?;
    let base = cfg.base()?;
    let rejected: Vec<String> = cfg
        .epsilon_sweep
        .par_iter()
        .enumerate()
        .map(|(i, &eps)| {
            let m = cfg.model(eps).map_err(|e| e.to_string())?;
            match estimate_rates(&m, cfg.settings.rate_samples, cfg.seed) {
                Ok(r) if r.is_partially_hyperbolic() => Ok(()),
                Ok(r) => Err(format!(
                    "epsilon_sweep[{i}]: {eps} fails partial hyperbolicity (sigma {:.4}, center [{:.4}, {:.4}], mu {:.4})",
                    r.sigma_hat, r.center_range.0, r.center_range.1, r.mu_hat
                )),
                Err(e) => Err(format!("epsilon_sweep[{i}]: {e}")),
            }
        })
        .filter_map(|r: std::result::Result<(), String>| r.err())
        .collect();
    if !rejected.is_empty() {
        return Err(Error::ConfigInvalid(rejected));
    }
    let cells: Vec<CellReport> =
        if cfg.battery.is_empty() { Vec::new() } else { cfg.epsilon_sweep.par_iter().map(|&eps| run_cell(cfg, eps)).collect() };
    let counted: Vec<bool> = cells.iter().filter_map(|c| c.coherent).collect();
    let coherence = (!counted.is_empty()).then(|| counted.iter().filter(|&&c| c).count() as f64 / counted.len() as f64);
    Ok(EquivalenceReport {
        schema_version: SCHEMA_VERSION.into(),
        metadata: Metadata {
            generator: concat!("phlab ", env!("CARGO_PKG_VERSION")).into(),
            matrix: cfg.matrix,
            eigenvalues: base.eigenvalues(),
            family: cfg.family,
            modes: cfg.modes.clone(),
            epsilon_sweep: cfg.epsilon_sweep.clone(),
            battery: cfg.battery.clone(),
            seed: cfg.seed,
            settings: cfg.settings.clone(),
        },
        thresholds: cfg.tolerances.clone(),
        cells,
        coherence,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::InvalidInput(format!("unknown report format {other:?}"))),
        }
    }
}

/// Pretty JSON with every float written as `{:.16e}`, i.e. 17 significant digits.
struct Sig17<'a>(PrettyFormatter<'a>);

impl Formatter for Sig17<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

fn sig17(v: Option<f64>) -> String {
    v.filter(|x| x.is_finite()).map(|x| format!("{x:.16e}")).unwrap_or_default()
}

pub const CSV_HEADER: [&str; 7] = ["schema_version", "epsilon", "diagnostic", "value", "threshold", "verdict", "error"];

/// Report bytes in the requested format.
pub fn render_report(r: &EquivalenceReport, format: ReportFormat) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    match format {
        ReportFormat::Json => {
            let mut ser = serde_json::Serializer::with_formatter(&mut buf, Sig17(PrettyFormatter::with_indent(b"  ")));
            r.serialize(&mut ser)?;
            buf.push(b'\n');
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(CSV_HEADER)?;
            for c in &r.cells {
                for v in &c.verdicts {
                    w.write_record([
                        r.schema_version.as_str(),
                        &format!("{:.16e}", c.epsilon),
                        v.diagnostic.name(),
                        &sig17(v.value),
                        &sig17(v.threshold),
                        v.class.name(),
                        v.error.as_deref().unwrap_or(""),
                    ])?;
                }
            }
            w.flush()?;
        }
    }
    Ok(buf)
}

pub fn emit_report(r: &EquivalenceReport, format: ReportFormat, path: &Path) -> Result<()> {
    let bytes = render_report(r, format)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn parse_report(json: &str) -> Result<EquivalenceReport> {
    Ok(serde_json::from_str(json)?)
}
