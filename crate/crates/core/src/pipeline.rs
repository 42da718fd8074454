//! The full theorem-mode pipeline: admission, the large-disorder check at
//! the initial scale, the induction along the scale ladder, the deviation
//! trend, the Lyapunov lower bound and the continuity probe.

use serde::{Deserialize, Serialize};

use crate::cocycle::CocycleKind;
use crate::deviation::{deviation_measure, initial_scale_check, DeviationReport, InitialScaleRecord, Threshold};
use crate::error::{Error, Result};
use crate::lyapunov::{check_budget, LyapunovEstimate, Sampler, DEFAULT_WORK_BUDGET};
use crate::model::{AdmissionMode, JacobiModel, ModelSpec};
use crate::multiscale::{
    continuity_probe, induction_step, scale_schedule, ContinuityOptions, ContinuityReport, InductionOptions,
    InductionRecord, ScaleSchedule,
};
use crate::torus::{diophantine_check, DiophantineReport};

/// Resolved settings of a theorem-mode run. Serialized verbatim into the
/// archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    /// Energies to run; each must satisfy `|E| ≤ E₀`.
    pub energies: Vec<f64>,
    pub n0: usize,
    /// Number of induction stages.
    pub stages: usize,
    /// Monte Carlo sample count shared by every estimate.
    pub samples: u64,
    pub seed: u64,
    /// Exponent `B` in `λ₁ = max(λ₀, n₀^B)`.
    pub lambda_exponent: f64,
    /// Raise the model's `λ` to `λ₁` (otherwise a smaller `λ` is refused).
    pub raise_lambda: bool,
    pub diophantine_nmax: u64,
    /// Log-Hölder exponent, also used for the scale schedule.
    pub sigma: f64,
    /// Deviation trend thresholds are `S n^{−τ}`.
    pub tau: f64,
    pub ldt_proxy: f64,
    pub schedule_stages: usize,
    /// Energy of the continuity probe.
    pub continuity_energy: f64,
    pub continuity_deltas: Vec<f64>,
    pub continuity_scale: usize,
    pub continuity_proxy_scales: Vec<usize>,
    /// Side of the square grid used by the continuity probe.
    pub continuity_grid: u64,
    pub work_budget: u64,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            energies: vec![0.0],
            n0: 16,
            stages: 2,
            samples: 1000,
            seed: 0,
            lambda_exponent: 4.0,
            raise_lambda: true,
            diophantine_nmax: 10_000,
            sigma: 1.0 / 25.0,
            tau: 0.25,
            ldt_proxy: 0.1,
            schedule_stages: 3,
            continuity_energy: 0.0,
            continuity_deltas: vec![1e-1, 1e-2, 1e-3, 1e-4, 1e-6],
            continuity_scale: 8,
            continuity_proxy_scales: vec![4, 8],
            continuity_grid: 64,
            work_budget: DEFAULT_WORK_BUDGET,
        }
    }
}

impl RunSettings {
    /// `(n, N, γ)` per induction stage: `(n₀, n₀², ½)`, then each stage
    /// starts from the previous `N` with `γ = ⅓`.
    pub fn induction_ladder(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.stages);
        let mut n = self.n0;
        for k in 0..self.stages {
            let big = n.saturating_mul(n);
            out.push((n, big, if k == 0 { 0.5 } else { 1.0 / 3.0 }));
            n = big;
        }
        out
    }

    /// Scales of the deviation trend: `n₀, 2n₀, 4n₀, 8n₀`.
    pub fn trend_scales(&self) -> Vec<usize> {
        (0..4).map(|k| self.n0 << k).collect()
    }

    /// Matrix products the run will perform.
    pub fn work(&self) -> u128 {
        let s = self.samples as u128;
        let induction: u128 = self
            .induction_ladder()
            .iter()
            .map(|&(n, big, _)| 3 * (n as u128 + big as u128))
            .sum();
        let trend: u128 = self.trend_scales().iter().map(|&n| n as u128).sum();
        let initial = 3 * self.n0 as u128;
        let per_energy = (induction + trend + initial) * s;
        let g = (self.continuity_grid as u128).pow(2);
        let continuity = (2 * self.continuity_scale as u128
            + self.continuity_proxy_scales.iter().map(|&n| n as u128).sum::<u128>())
            * g
            * (self.continuity_deltas.len() as u128 + 1);
        per_energy * self.energies.len() as u128 + continuity
    }

    fn validate(&self) -> Result<()> {
        if self.energies.is_empty() {
            return Err(Error::InvalidInput("no energies given".into()));
        }
        if self.n0 < 2 || self.stages == 0 {
            return Err(Error::InvalidInput("need n0 ≥ 2 and at least one stage".into()));
        }
        if self.samples < 2 {
            return Err(Error::InvalidInput("need at least two samples".into()));
        }
        if !(self.lambda_exponent >= 0.0) {
            return Err(Error::InvalidInput("lambda_exponent must be nonnegative".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::InvalidInput("tau must be positive".into()));
        }
        if self.continuity_grid == 0 {
            return Err(Error::InvalidInput("continuity grid must be nonempty".into()));
        }
        Ok(())
    }
}

/// How the run's model was admitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissionRecord {
    pub lambda0: f64,
    pub lambda1: f64,
    pub lambda: f64,
    pub lambda_exponent: f64,
    pub nonconstant_v: bool,
    pub diophantine: DiophantineReport,
    pub energy_cap: f64,
}

/// One line of the Lyapunov table: an estimate and the running infimum over
/// all scales up to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovRecord {
    #[serde(flatten)]
    pub estimate: LyapunovEstimate,
    pub running_infimum: f64,
    /// `¼ log λ`.
    pub lower_bound: f64,
    /// `running_infimum ≥ lower_bound − 3 std_error`.
    pub holds: bool,
}

/// Everything computed at one energy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyRun {
    #[serde(rename = "E")]
    pub energy: f64,
    pub initial: InitialScaleRecord,
    pub induction: Vec<InductionRecord>,
    pub deviation_trend: Vec<DeviationReport>,
    pub lyapunov: Vec<LyapunovRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub lambda: f64,
    pub quarter_log_lambda: f64,
    pub min_running_infimum: f64,
    pub lower_bound_holds: bool,
    pub initial_lower_bound_holds: bool,
    pub induction_hypotheses_hold: bool,
    pub max_c0_fit: f64,
    pub schedule_threshold_ok: bool,
    pub schedule_overlap_ok: bool,
    pub continuity_violations: u64,
}

/// The complete output of a run; the archive is a rendering of this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremRun {
    pub settings: RunSettings,
    pub model: ModelSpec,
    pub model_hash: String,
    pub admission: AdmissionRecord,
    pub energies: Vec<EnergyRun>,
    pub schedule: ScaleSchedule,
    pub continuity: ContinuityReport,
    pub summary: RunSummary,
}

/// Admit the model in theorem mode with `λ ≥ λ₁ = max(λ₀, n₀^B)`, where
/// `λ₀` is the `λ` of `spec`.
pub fn admit(spec: &ModelSpec, settings: &RunSettings) -> Result<(JacobiModel, AdmissionRecord)> {
    settings.validate()?;
    let lambda0 = spec.lambda;
    let lambda1 = lambda0.max((settings.n0 as f64).powf(settings.lambda_exponent));
    let lambda = if settings.raise_lambda { lambda1 } else { lambda0 };
    if lambda < lambda1 {
        return Err(Error::Admission(format!("λ = {lambda} is below λ₁ = {lambda1}")));
    }
    let spec = ModelSpec {
        lambda,
        ..spec.clone()
    };
    let model = JacobiModel::from_spec(spec, AdmissionMode::Theorem)?;
    let diophantine = diophantine_check(&model.frequency(), settings.diophantine_nmax)?;
    if !diophantine.passes {
        return Err(Error::Admission(format!(
            "frequency fails the Diophantine scan at n = {} (margin {:.3e} < ε)",
            diophantine.worst_n, diophantine.worst_margin
        )));
    }
    let cap = model.energy_bound();
    for &e in settings.energies.iter().chain(std::iter::once(&settings.continuity_energy)) {
        if !(e.abs() <= cap) {
            return Err(Error::InvalidInput(format!("|E| = {} exceeds E₀ = {cap}", e.abs())));
        }
    }
    let record = AdmissionRecord {
        lambda0,
        lambda1,
        lambda,
        lambda_exponent: settings.lambda_exponent,
        nonconstant_v: !model.spec().v_coeffs.is_constant(),
        diophantine,
        energy_cap: cap,
    };
    Ok((model, record))
}

fn run_energy(model: &JacobiModel, energy: f64, settings: &RunSettings, sampler: &Sampler) -> Result<EnergyRun> {
    let initial = initial_scale_check(model, energy, settings.n0, sampler).map_err(|e| e.in_stage("initial_scale"))?;

    let options = InductionOptions {
        ldt_proxy: settings.ldt_proxy,
        budget: settings.work_budget,
        ..Default::default()
    };
    let mut induction = Vec::with_capacity(settings.stages);
    for (k, (n, big, gamma)) in settings.induction_ladder().into_iter().enumerate() {
        let rec = induction_step(model, energy, n, big, gamma, sampler, options)
            .map_err(|e| e.in_stage(&format!("induction[{}]", k + 1)))?;
        induction.push(rec);
    }

    let deviation_trend = settings
        .trend_scales()
        .into_iter()
        .map(|n| {
            let thr = Threshold::in_s((n as f64).powf(-settings.tau));
            deviation_measure(model, energy, n, thr, sampler, CocycleKind::Unimodular, None)
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("deviation_trend"))?;

    let mut estimates: Vec<LyapunovEstimate> = induction
        .iter()
        .flat_map(|r| [&r.l_n, &r.l_2n, &r.l_big_n, &r.l_2big_n])
        .cloned()
        .collect();
    estimates.sort_by_key(|e| e.n);
    estimates.dedup_by_key(|e| e.n);
    let lower_bound = 0.25 * model.lambda().ln();
    let mut inf = f64::INFINITY;
    let mut inf_err = 0.0;
    let lyapunov = estimates
        .into_iter()
        .map(|estimate| {
            if estimate.value < inf {
                inf = estimate.value;
                inf_err = estimate.std_error;
            }
            LyapunovRecord {
                holds: inf >= lower_bound - 3.0 * inf_err,
                running_infimum: inf,
                lower_bound,
                estimate,
            }
        })
        .collect();

    Ok(EnergyRun {
        energy,
        initial,
        induction,
        deviation_trend,
        lyapunov,
    })
}

/// Run the whole pipeline. Stages run in order; sampling inside a stage is
/// parallel with deterministic reductions, so the result depends only on
/// `(spec, settings)`.
pub fn theorem_mode_run(spec: &ModelSpec, settings: &RunSettings) -> Result<TheoremRun> {
    let (model, admission) = admit(spec, settings).map_err(|e| e.in_stage("admission"))?;
    check_budget(settings.work(), settings.work_budget).map_err(|e| e.in_stage("admission"))?;
    let sampler = Sampler::monte_carlo(settings.samples, settings.seed)?;

    let energies = settings
        .energies
        .iter()
        .map(|&e| run_energy(&model, e, settings, &sampler))
        .collect::<Result<Vec<_>>>()?;

    let schedule = scale_schedule(settings.n0 as u64, settings.sigma, settings.schedule_stages)
        .map_err(|e| e.in_stage("schedule"))?;

    let grid = Sampler::grid(settings.continuity_grid, settings.continuity_grid)?;
    let continuity = continuity_probe(
        &model,
        settings.continuity_energy,
        &settings.continuity_deltas,
        settings.continuity_scale,
        &grid,
        &ContinuityOptions {
            proxy_scales: settings.continuity_proxy_scales.clone(),
            sigma: settings.sigma,
        },
    )
    .map_err(|e| e.in_stage("continuity"))?;

    let quarter = 0.25 * model.lambda().ln();
    let summary = RunSummary {
        lambda: model.lambda(),
        quarter_log_lambda: quarter,
        min_running_infimum: energies
            .iter()
            .flat_map(|r| r.lyapunov.last())
            .map(|r| r.running_infimum)
            .fold(f64::INFINITY, f64::min),
        lower_bound_holds: energies.iter().all(|r| r.lyapunov.iter().all(|l| l.holds)),
        initial_lower_bound_holds: energies.iter().all(|r| r.initial.lower_bound_holds),
        induction_hypotheses_hold: energies.iter().all(|r| r.induction.iter().all(|s| s.hypotheses_hold())),
        max_c0_fit: energies
            .iter()
            .flat_map(|r| r.induction.iter().map(|s| s.c0_fit))
            .fold(0.0, f64::max),
        schedule_threshold_ok: schedule.threshold_ok,
        schedule_overlap_ok: schedule.overlap_ok,
        continuity_violations: continuity.violations,
    };
    Ok(TheoremRun {
        settings: settings.clone(),
        model: model.spec().clone(),
        model_hash: model.hash().to_string(),
        admission,
        energies,
        schedule,
        continuity,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_settings() -> RunSettings {
        RunSettings {
            n0: 4,
            stages: 2,
            samples: 400,
            seed: 5,
            continuity_grid: 8,
            continuity_deltas: vec![1e-2, 1e-4],
            ..Default::default()
        }
    }

    #[test]
    fn ladder_and_trend() {
        let s = RunSettings::default();
        assert_eq!(s.induction_ladder(), vec![(16, 256, 0.5), (256, 65536, 1.0 / 3.0)]);
        assert_eq!(s.trend_scales(), vec![16, 32, 64, 128]);
        assert!(s.work() < 3_000_000_000);
    }

    #[test]
    fn lambda_is_raised_to_threshold() {
        let s = RunSettings::default();
        let (m, adm) = admit(&ModelSpec::default_theorem(10.0), &s).unwrap();
        assert_eq!(adm.lambda1, 65536.0);
        assert_eq!(m.lambda(), 65536.0);
        let strict = RunSettings {
            raise_lambda: false,
            ..s.clone()
        };
        assert!(matches!(admit(&ModelSpec::default_theorem(10.0), &strict), Err(Error::Admission(_))));
        let (m, _) = admit(&ModelSpec::default_theorem(1e6), &strict).unwrap();
        assert_eq!(m.lambda(), 1e6);
    }

    #[test]
    fn constant_potential_is_refused() {
        let err = theorem_mode_run(&ModelSpec::free(), &tiny_settings()).unwrap_err();
        match err {
            Error::Stage { stage, source } => {
                assert_eq!(stage, "admission");
                assert!(matches!(*source, Error::Admission(_)));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn energy_cap_is_enforced() {
        let s = RunSettings {
            energies: vec![1e12],
            ..tiny_settings()
        };
        let err = theorem_mode_run(&ModelSpec::default_theorem(1.0), &s).unwrap_err();
        assert!(matches!(err.root(), Error::InvalidInput(_)));
    }

    #[test]
    fn tiny_run_is_deterministic() {
        let spec = ModelSpec::default_theorem(1.0);
        let a = theorem_mode_run(&spec, &tiny_settings()).unwrap();
        let b = theorem_mode_run(&spec, &tiny_settings()).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.energies[0].induction.len(), 2);
        assert_eq!(a.energies[0].lyapunov.len(), 6);
        assert_eq!(a.summary.continuity_violations, 0);
        assert_eq!(a.summary.lambda, 256.0);
    }
}
