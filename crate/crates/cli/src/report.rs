//! Dimension report: empirical estimates next to every theorem bound, with
//! a dominance verdict per applicable bound.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::{SystemTime, UNIX_EPOCH};

use invdim_core::bounds::{
    degree_check, growth_rates, remark24_bound, thm11_min_d, thm12_bound, thm25_bound, BoundResult, Direction,
    GrowthRates, Theorem,
};
use invdim_core::boxdim::{estimate_box_dimension_with, lemma21_estimate_with, FitOptions, FitResult, ScaleSchedule};
use invdim_core::systems::{invariance_check, MapDirection, ReferenceDimension, SamplerMethod};
use invdim_core::{CloudMeta, Invariance, PointCloud, SystemDescriptor};
use serde::Serialize;

use crate::config::{ConfigError, RunConfig, ScheduleConfig};

/// A bound dominates when `value >= empirical - DOMINANCE_TOLERANCE`.
pub const DOMINANCE_TOLERANCE: f64 = 0.05;
/// Newton seeds per axis for the degree check.
pub const DEGREE_GRID: usize = 16;

#[derive(Debug, Clone, Serialize)]
pub struct ToolInfo {
    pub name: &'static str,
    pub version: &'static str,
}

impl Default for ToolInfo {
    fn default() -> Self {
        Self { name: "invdim", version: env!("CARGO_PKG_VERSION") }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SystemIdentity {
    pub name: String,
    pub ambient: String,
    pub params: BTreeMap<String, f64>,
    pub degree: Option<u32>,
    pub invariance: Invariance,
    pub has_inverse: bool,
    pub sampler: SamplerMethod,
}

impl From<&SystemDescriptor> for SystemIdentity {
    fn from(sys: &SystemDescriptor) -> Self {
        Self {
            name: sys.name.clone(),
            ambient: sys.ambient.to_string(),
            params: sys.params.clone(),
            degree: sys.degree,
            invariance: sys.invariance,
            has_inverse: sys.has_inverse,
            sampler: sys.sampler,
        }
    }
}

/// Settings the run used, including defaults that were filled in.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub budget: usize,
    pub seed: u64,
    pub m_max: usize,
    pub schedule: ScheduleConfig,
    pub schedule_defaulted: bool,
    pub deltas: Vec<f64>,
    pub saturation_fraction: f64,
    pub min_scales: usize,
    pub dominance_tolerance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleSummary {
    pub points: usize,
    pub meta: CloudMeta,
    /// Forward-invariance check at twice the sample resolution.
    pub invariance_check: Option<invdim_core::systems::InvarianceCheck>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Empirical {
    pub box_counting: Option<FitResult>,
    pub lemma21: Option<FitResult>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct GrowthSection {
    pub forward: Option<GrowthRates>,
    pub inverse: Option<GrowthRates>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DegreeCheck {
    pub target: Vec<f64>,
    pub grid_resolution: usize,
    pub declared: u32,
    pub computed: i64,
    pub matches: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    pub theorem: Theorem,
    pub value: f64,
    pub empirical: f64,
    pub dominates_empirical: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub stage: &'static str,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct Failures(pub Vec<Failure>);

impl Failures {
    fn push(&mut self, stage: &'static str, message: impl ToString) {
        self.0.push(Failure { stage, message: message.to_string() });
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DimensionReport {
    pub tool: ToolInfo,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generated_at_unix: Option<u64>,
    pub system: SystemIdentity,
    pub provenance: Provenance,
    pub sample: Option<SampleSummary>,
    pub empirical: Empirical,
    pub growth_rates: GrowthSection,
    pub degree_check: Option<DegreeCheck>,
    pub bounds: Vec<BoundResult>,
    pub verdicts: Vec<Verdict>,
    pub reference_dimension: Option<ReferenceDimension>,
    pub notes: Vec<String>,
    pub failures: Vec<Failure>,
    pub all_dominate: bool,
}

/// The thm11, thm12, thm25 and rmk24 bounds for one sample, in that order. Bounds that
/// cannot be evaluated are listed as inapplicable with the reason.
pub fn evaluate_bounds(
    sys: &SystemDescriptor,
    cloud: &PointCloud,
    m_max: usize,
    failures: &mut Failures,
) -> (Vec<BoundResult>, GrowthSection, Option<DegreeCheck>) {
    let n = sys.dim();
    let mut rates = GrowthSection::default();
    let thm11 = thm11_min_d(sys, cloud).unwrap_or_else(|e| {
        failures.push("bounds", format!("thm11: {e}"));
        BoundResult::not_evaluated(Theorem::Thm11, format!("evaluation failed: {e}"), n)
    });

    let (mut thm12, mut rmk24) = (None, None);
    match growth_rates(sys, cloud, m_max, Direction::Forward) {
        Ok(fwd) => {
            rmk24 = Some(remark24_bound(&fwd, n).expect("forward rates"));
            if let Some(deg) = sys.degree {
                thm12 = Some(thm12_bound(&fwd, deg, n).expect("forward rates"));
            }
            rates.forward = Some(fwd);
        }
        Err(e) => failures.push("bounds", format!("forward growth rates: {e}")),
    }
    let thm12 = thm12.unwrap_or_else(|| {
        let reason =
            if sys.degree.is_none() { "no degree: ambient is not a torus" } else { "forward growth rates unavailable" };
        BoundResult::not_evaluated(Theorem::Thm12, reason, n)
    });
    let rmk24 =
        rmk24.unwrap_or_else(|| BoundResult::not_evaluated(Theorem::Rmk24, "forward growth rates unavailable", n));

    let thm25 = if sys.has_inverse {
        match growth_rates(sys, cloud, m_max, Direction::Inverse) {
            Ok(inv) => {
                let r = thm25_bound(&inv, n).expect("inverse rates");
                rates.inverse = Some(inv);
                r
            }
            Err(e) => {
                failures.push("bounds", format!("inverse growth rates: {e}"));
                BoundResult::not_evaluated(Theorem::Thm25, "inverse growth rates unavailable", n)
            }
        }
    } else {
        BoundResult::not_evaluated(Theorem::Thm25, "map has no inverse", n)
    };

    let degree = sys.degree.and_then(|declared| {
        let target = vec![0.5; n];
        match degree_check(sys, &target, DEGREE_GRID) {
            Ok(computed) => {
                let matches = computed == i64::from(declared);
                if !matches {
                    failures.push("bounds", format!("degree check found {computed}, descriptor declares {declared}"));
                }
                Some(DegreeCheck { target, grid_resolution: DEGREE_GRID, declared, computed, matches })
            }
            Err(e) => {
                failures.push("bounds", format!("degree check: {e}"));
                None
            }
        }
    });
    (vec![thm11, thm12, thm25, rmk24], rates, degree)
}

/// Box-counting and neighbourhood-volume fits over `schedule`.
pub fn evaluate_empirical(cloud: &PointCloud, schedule: &ScaleSchedule, failures: &mut Failures) -> Empirical {
    let opts = FitOptions::default();
    let box_counting = estimate_box_dimension_with(cloud, schedule, &opts)
        .map_err(|e| failures.push("boxdim", format!("box counting: {e}")))
        .ok();
    let lemma21 = lemma21_estimate_with(cloud, schedule, &opts)
        .map_err(|e| failures.push("boxdim", format!("neighbourhood volume: {e}")))
        .ok();
    Empirical { box_counting, lemma21 }
}

pub fn verdicts(bounds: &[BoundResult], empirical: Option<f64>) -> Vec<Verdict> {
    let Some(empirical) = empirical else { return Vec::new() };
    bounds
        .iter()
        .filter(|b| b.applicable)
        .filter_map(|b| {
            let value = b.value?;
            Some(Verdict {
                theorem: b.theorem,
                value,
                empirical,
                dominates_empirical: value >= empirical - DOMINANCE_TOLERANCE,
            })
        })
        .collect()
}

/// Samples the system of `cfg` and evaluates everything.
pub fn build_report(cfg: &RunConfig) -> Result<DimensionReport, ConfigError> {
    let sys = cfg.build_system()?;
    let opts = FitOptions::default();
    let mut failures = Failures::default();
    let mut report = DimensionReport {
        tool: ToolInfo::default(),
        generated_at_unix: (!cfg.deterministic)
            .then(|| SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)),
        system: SystemIdentity::from(&sys),
        provenance: Provenance {
            budget: cfg.budget,
            seed: cfg.seed,
            m_max: cfg.m_max,
            schedule: cfg.schedule.clone(),
            schedule_defaulted: cfg.schedule.delta_max.is_none(),
            deltas: Vec::new(),
            saturation_fraction: opts.saturation_fraction,
            min_scales: opts.min_scales,
            dominance_tolerance: DOMINANCE_TOLERANCE,
        },
        sample: None,
        empirical: Empirical::default(),
        growth_rates: GrowthSection::default(),
        degree_check: None,
        bounds: Vec::new(),
        verdicts: Vec::new(),
        reference_dimension: sys.reference_dimension.clone(),
        notes: vec!["every bound on the upper box dimension also bounds the Hausdorff dimension".to_string()],
        failures: Vec::new(),
        all_dominate: false,
    };

    let cloud = match sys.sample_invariant_set(cfg.budget, cfg.seed) {
        Ok(c) => c,
        Err(e) => {
            failures.push("systems", format!("sampling: {e}"));
            report.failures = failures.0;
            return Ok(report);
        }
    };
    report.notes.push(format!(
        "approximation: Jacobian extrema and growth rates are taken over {} sample points, not the exact invariant set",
        cloud.len()
    ));
    let check = invariance_check(&sys, &cloud, MapDirection::Forward, 2.0 * cloud.meta().resolution)
        .map_err(|e| failures.push("systems", format!("invariance check: {e}")))
        .ok();
    report.sample = Some(SampleSummary { points: cloud.len(), meta: cloud.meta().clone(), invariance_check: check });

    match cfg.schedule.resolve(&cloud) {
        Ok(schedule) => {
            report.provenance.deltas = schedule.deltas().to_vec();
            report.empirical = evaluate_empirical(&cloud, &schedule, &mut failures);
        }
        Err(e) => failures.push("boxdim", format!("schedule: {e}")),
    }

    let (bounds, rates, degree) = evaluate_bounds(&sys, &cloud, cfg.m_max, &mut failures);
    let empirical = report.empirical.box_counting.as_ref().map(|f| f.estimate);
    report.verdicts = verdicts(&bounds, empirical);
    let applicable = bounds.iter().filter(|b| b.applicable).count();
    report.all_dominate = empirical.is_some()
        && report.verdicts.len() == applicable
        && report.verdicts.iter().all(|v| v.dominates_empirical);
    report.bounds = bounds;
    report.growth_rates = rates;
    report.degree_check = degree;
    report.failures = failures.0;
    Ok(report)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl DimensionReport {
    /// True when nothing failed and every applicable bound dominates.
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.all_dominate
    }

    pub fn bound(&self, theorem: Theorem) -> Option<&BoundResult> {
        self.bounds.iter().find(|b| b.theorem == theorem)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }

    /// One row per empirical estimate and per bound.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["quantity", "value", "applicable", "dominates_empirical", "note"]).expect("in-memory write");
        let fits = [("box_counting", &self.empirical.box_counting), ("lemma21", &self.empirical.lemma21)];
        for (name, fit) in fits {
            w.write_record([name, &fmt_opt(fit.as_ref().map(|f| f.estimate)), "", "", ""]).expect("in-memory write");
        }
        for b in &self.bounds {
            let dominates = self
                .verdicts
                .iter()
                .find(|v| v.theorem == b.theorem)
                .map(|v| v.dominates_empirical.to_string())
                .unwrap_or_default();
            w.write_record([
                b.theorem.label(),
                &fmt_opt(b.value),
                &b.applicable.to_string(),
                &dominates,
                b.reason.as_deref().unwrap_or(""),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let params: Vec<String> = self.system.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let points = self.sample.as_ref().map_or(0, |x| x.points);
        let _ = writeln!(
            s,
            "system      {} ({}) on {}, {} points",
            self.system.name,
            params.join(", "),
            self.system.ambient,
            points
        );
        let fit = |f: &Option<FitResult>| match f {
            Some(f) => format!("{:.4} over {} scales", f.estimate, f.scales_used().len()),
            None => "failed".to_string(),
        };
        let _ = writeln!(s, "box count   {}", fit(&self.empirical.box_counting));
        let _ = writeln!(s, "nbhd volume {}", fit(&self.empirical.lemma21));
        if let Some(r) = &self.reference_dimension {
            let _ = writeln!(s, "reference   {:.4} ({})", r.value, r.note);
        }
        for b in &self.bounds {
            let line = match (b.value, b.reason.as_deref()) {
                (Some(v), _) => {
                    let ok = self.verdicts.iter().find(|x| x.theorem == b.theorem).map(|x| x.dominates_empirical);
                    let tag = match ok {
                        Some(true) => "dominates",
                        Some(false) => "BELOW EMPIRICAL",
                        None => "no verdict",
                    };
                    format!("{v:.6}  {tag}")
                }
                (None, reason) => format!("inapplicable: {}", reason.unwrap_or("")),
            };
            let _ = writeln!(s, "{:<11} {line}", b.theorem.label());
        }
        for f in &self.failures {
            let _ = writeln!(s, "failure     [{}] {}", f.stage, f.message);
        }
        let _ = writeln!(s, "verdict     {}", if self.passed() { "all applicable bounds dominate" } else { "FAILED" });
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Overrides;

    fn config(system: &str, budget: usize) -> RunConfig {
        let o = Overrides {
            system: Some(system.into()),
            budget: Some(budget),
            deterministic: true,
            ..Overrides::default()
        };
        RunConfig::resolve(None, &o).unwrap()
    }

    #[test]
    fn verdicts_cover_applicable_bounds_only() {
        let bounds = vec![
            BoundResult::not_evaluated(Theorem::Thm12, "x", 2),
            BoundResult { value: Some(1.0), applicable: true, ..BoundResult::not_evaluated(Theorem::Thm11, "", 2) },
        ];
        let v = verdicts(&bounds, Some(1.04));
        assert_eq!(v.len(), 1);
        assert!(v[0].dominates_empirical);
        assert!(!verdicts(&bounds, Some(1.06))[0].dominates_empirical);
        assert!(verdicts(&bounds, None).is_empty());
    }

    #[test]
    fn circle_report_is_tight() {
        let r = build_report(&config("circle_expanding", 20_000)).unwrap();
        assert!(r.passed(), "{}", r.summary());
        assert!(r.generated_at_unix.is_none());
        let t12 = r.bound(Theorem::Thm12).unwrap();
        assert!((t12.value.unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(r.degree_check.as_ref().unwrap().computed, 3);
        assert_eq!(r.bound(Theorem::Thm25).unwrap().reason.as_deref(), Some("map has no inverse"));
        assert_eq!(r.bounds.len(), 4);
    }

    #[test]
    fn sampler_failure_yields_partial_report() {
        let mut cfg = config("henon", 100);
        // an expanding affine-like Hénon escapes to infinity
        cfg.params.insert("a".into(), 5.0);
        let r = build_report(&cfg).unwrap();
        assert!(!r.passed());
        assert_eq!(r.failures[0].stage, "systems");
        assert!(r.bounds.is_empty());
    }

    #[test]
    fn csv_lists_every_bound() {
        let r = build_report(&config("cat_map", 20_000)).unwrap();
        let csv = r.to_csv();
        assert!(csv.starts_with("quantity,value,applicable,dominates_empirical,note\n"));
        assert!(csv.contains("thm11,2.000000,true,true,"), "{csv}");
        assert_eq!(csv.lines().count(), 7);
    }
}
