//! Report: evaluate the directional claims against a directory of trace
//! files. Pure function of the traces; nothing is recomputed.

use super::trace::TraceFile;
use super::ExperimentError;
use serde::Serialize;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionStatus {
    Pass,
    Fail,
    NotRun,
}

#[derive(Debug, Clone, Serialize)]
pub struct CriterionOutcome {
    pub name: &'static str,
    pub status: CriterionStatus,
    /// Signed margin in the criterion's own units; positive passes.
    pub margin: Option<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub criteria: Vec<CriterionOutcome>,
}

impl Report {
    pub fn has_failure(&self) -> bool {
        self.criteria.iter().any(|c| c.status == CriterionStatus::Fail)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.criteria {
            let tag = match c.status {
                CriterionStatus::Pass => "PASS   ",
                CriterionStatus::Fail => "FAIL   ",
                CriterionStatus::NotRun => "NOT RUN",
            };
            out.push_str(&format!("{tag} {:<28} {}\n", c.name, c.detail));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Load every `*.csv` trace in the directory, sorted by file name.
pub fn load_traces(dir: &Path) -> Result<Vec<TraceFile>, ExperimentError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|ext| ext == "csv"))
        .collect();
    paths.sort();
    paths.iter().map(|p| TraceFile::load(p)).collect()
}

/// Evaluate every directional criterion that the present traces can answer.
pub fn evaluate(traces: &[TraceFile]) -> Report {
    let criteria = vec![
        rank_monotone(traces, "kernel-psd", "kernel-psd-rank-monotone"),
        rank_monotone(traces, "kernel-normal", "kernel-normal-rank-monotone"),
        grid_step_contrast(traces),
        grid_supervised_baseline(traces),
        rank_ratio(traces, "monte_carlo", "grid-mc-rank-preserved", RatioSide::AtLeast, 0.8),
        rank_ratio(traces, "fqe", "grid-fqe-rank-collapse", RatioSide::AtMost, 0.5),
        rank_ratio(traces, "reinit", "grid-reinit-rank-collapse", RatioSide::AtMost, 0.5),
        grid_penalty_mitigation(traces),
        grid_td_tradeoff(traces),
    ];
    Report { criteria }
}

fn not_run(name: &'static str, detail: &str) -> CriterionOutcome {
    CriterionOutcome {
        name,
        status: CriterionStatus::NotRun,
        margin: None,
        detail: detail.to_string(),
    }
}

fn verdict(name: &'static str, pass: bool, margin: f64, detail: String) -> CriterionOutcome {
    CriterionOutcome {
        name,
        status: if pass { CriterionStatus::Pass } else { CriterionStatus::Fail },
        margin: Some(margin),
        detail,
    }
}

/// Converged traces of one experiment, optionally filtered by an embedded
/// config value.
fn select<'a>(
    traces: &'a [TraceFile],
    experiment: &str,
    filter: Option<(&str, &str)>,
) -> Vec<&'a TraceFile> {
    traces
        .iter()
        .filter(|t| t.experiment == experiment && !t.diverged)
        .filter(|t| match filter {
            Some((key, value)) => t.config_value(key) == Some(value),
            None => true,
        })
        .collect()
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// End-of-run value: median over the last five rows, so a single noisy
/// measurement at the final step cannot flip a criterion.
fn final_column(traces: &[&TraceFile], column: &str) -> Option<Vec<f64>> {
    traces
        .iter()
        .map(|t| {
            t.column(column).filter(|c| !c.is_empty()).map(|c| {
                let tail = c.len().saturating_sub(5);
                median(c[tail..].to_vec())
            })
        })
        .collect()
}

fn peak_column(traces: &[&TraceFile], column: &str) -> Option<Vec<f64>> {
    traces
        .iter()
        .map(|t| {
            t.column(column)
                .filter(|c| !c.is_empty())
                .map(|c| c.into_iter().fold(f64::NEG_INFINITY, f64::max))
        })
        .collect()
}

/// Per-k rank non-increasing in every run of the experiment.
fn rank_monotone(
    traces: &[TraceFile],
    experiment: &str,
    name: &'static str,
) -> CriterionOutcome {
    let runs = select(traces, experiment, None);
    if runs.is_empty() {
        return not_run(name, "no traces for this experiment");
    }
    let mut violations = 0usize;
    let mut total_drop = 0.0;
    for t in &runs {
        let Some(srank) = t.column("srank") else {
            return verdict(name, false, 0.0, format!("seed {}: no srank column", t.seed));
        };
        violations += srank.windows(2).filter(|w| w[1] > w[0]).count();
        if let (Some(first), Some(last)) = (srank.first(), srank.last()) {
            total_drop += first - last;
        }
    }
    let detail = format!(
        "{} runs, {} increase(s), mean first-to-last drop {:.2}",
        runs.len(),
        violations,
        total_drop / runs.len() as f64
    );
    verdict(name, violations == 0, -(violations as f64), detail)
}

/// More gradient steps per fitting iteration collapse rank further:
/// grid-offline T = 200 median final srank at least 3 below T = 10.
fn grid_step_contrast(traces: &[TraceFile]) -> CriterionOutcome {
    let name = "grid-step-contrast";
    let key = "train.grad_steps_per_iteration";
    let t10 = select(traces, "grid-offline", Some((key, "10")));
    let t200 = select(traces, "grid-offline", Some((key, "200")));
    if t10.is_empty() || t200.is_empty() {
        return not_run(name, "needs grid-offline runs at 10 and 200 steps per iteration");
    }
    let (Some(f10), Some(f200)) =
        (final_column(&t10, "srank"), final_column(&t200, "srank"))
    else {
        return not_run(name, "missing srank column");
    };
    let (m10, m200) = (median(f10), median(f200));
    let margin = m10 - m200 - 3.0;
    verdict(
        name,
        margin >= 0.0,
        margin,
        format!("median final srank {m200} at 200 steps vs {m10} at 10, need gap >= 3"),
    )
}

/// Supervised regression to the optimal values keeps rank well above
/// bootstrapped training: margin >= 5 over grid-offline T = 200.
fn grid_supervised_baseline(traces: &[TraceFile]) -> CriterionOutcome {
    let name = "grid-supervised-baseline";
    let sup = select(traces, "grid-ablations", Some(("mode", "supervised")));
    let base = select(
        traces,
        "grid-offline",
        Some(("train.grad_steps_per_iteration", "200")),
    );
    if sup.is_empty() || base.is_empty() {
        return not_run(name, "needs supervised ablation and grid-offline 200-step runs");
    }
    let (Some(fs), Some(fb)) =
        (final_column(&sup, "srank"), final_column(&base, "srank"))
    else {
        return not_run(name, "missing srank column");
    };
    let (ms, mb) = (median(fs), median(fb));
    let margin = ms - mb - 5.0;
    verdict(
        name,
        margin >= 0.0,
        margin,
        format!("median final srank {ms} supervised vs {mb} bootstrapped, need gap >= 5"),
    )
}

enum RatioSide {
    AtLeast,
    AtMost,
}

/// Median final-to-peak srank ratio of one ablation mode against a bound.
fn rank_ratio(
    traces: &[TraceFile],
    mode: &str,
    name: &'static str,
    side: RatioSide,
    bound: f64,
) -> CriterionOutcome {
    let runs = select(traces, "grid-ablations", Some(("mode", mode)));
    if runs.is_empty() {
        return not_run(name, "no traces for this ablation mode");
    }
    let (Some(finals), Some(peaks)) =
        (final_column(&runs, "srank"), peak_column(&runs, "srank"))
    else {
        return not_run(name, "missing srank column");
    };
    let ratios: Vec<f64> =
        finals.iter().zip(&peaks).map(|(f, p)| if *p > 0.0 { f / p } else { 0.0 }).collect();
    let med = median(ratios);
    let (margin, relation) = match side {
        RatioSide::AtLeast => (med - bound, ">="),
        RatioSide::AtMost => (bound - med, "<="),
    };
    verdict(
        name,
        margin >= 0.0,
        margin,
        format!("median final/peak srank {med:.3}, need {relation} {bound}"),
    )
}

/// The spread penalty keeps rank higher without costing return.
fn grid_penalty_mitigation(traces: &[TraceFile]) -> CriterionOutcome {
    let name = "grid-penalty-mitigation";
    let pen = select(traces, "grid-penalty", None);
    let base = select(
        traces,
        "grid-offline",
        Some(("train.grad_steps_per_iteration", "200")),
    );
    if pen.is_empty() || base.is_empty() {
        return not_run(name, "needs grid-penalty and grid-offline 200-step runs");
    }
    let (Some(sp), Some(sb)) = (final_column(&pen, "srank"), final_column(&base, "srank"))
    else {
        return not_run(name, "missing srank column");
    };
    let (Some(rp), Some(rb)) =
        (final_column(&pen, "greedy_return"), final_column(&base, "greedy_return"))
    else {
        return not_run(name, "missing greedy_return column");
    };
    let (msp, msb) = (median(sp), median(sb));
    let (mrp, mrb) = (median(rp), median(rb));
    let rank_margin = msp - msb - 3.0;
    let pass = rank_margin >= 0.0 && mrp >= mrb;
    verdict(
        name,
        pass,
        rank_margin,
        format!(
            "median final srank {msp} vs {msb} (need gap >= 3), return {mrp:.3} vs {mrb:.3} (need >=)"
        ),
    )
}

/// The extra rank collapse at T = 200 trades against TD error: final TD
/// error higher than at T = 10 while srank is lower.
fn grid_td_tradeoff(traces: &[TraceFile]) -> CriterionOutcome {
    let name = "grid-td-tradeoff";
    let key = "train.grad_steps_per_iteration";
    let t10 = select(traces, "grid-offline", Some((key, "10")));
    let t200 = select(traces, "grid-offline", Some((key, "200")));
    if t10.is_empty() || t200.is_empty() {
        return not_run(name, "needs grid-offline runs at 10 and 200 steps per iteration");
    }
    let cols = (
        final_column(&t10, "td_error"),
        final_column(&t200, "td_error"),
        final_column(&t10, "srank"),
        final_column(&t200, "srank"),
    );
    let (Some(td10), Some(td200), Some(s10), Some(s200)) = cols else {
        return not_run(name, "missing td_error or srank column");
    };
    let (mt10, mt200) = (median(td10), median(td200));
    let (ms10, ms200) = (median(s10), median(s200));
    let pass = mt200 > mt10 && ms200 < ms10;
    verdict(
        name,
        pass,
        mt200 - mt10,
        format!(
            "median final td_error {mt200:.3e} vs {mt10:.3e} (need >), srank {ms200} vs {ms10} (need <)"
        ),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_trace(
        experiment: &str,
        seed: u64,
        config: &str,
        srank: &[f64],
        td: &[f64],
        ret: &[f64],
    ) -> TraceFile {
        let mut t = TraceFile::new(
            experiment,
            seed,
            "deadbeefdeadbeef",
            config,
            &["iteration", "step", "srank", "td_error", "qstar_fit_error", "greedy_return", "penalty"],
        );
        for (i, &s) in srank.iter().enumerate() {
            t.push_row(vec![i as f64, (i * 10) as f64, s, td[i], 0.0, ret[i], 0.0]);
        }
        t
    }

    fn kernel_trace(seed: u64, srank: &[f64]) -> TraceFile {
        let mut t = TraceFile::new(
            "kernel-psd",
            seed,
            "deadbeefdeadbeef",
            "experiment = kernel-psd\n",
            &["k", "srank", "sigma_max", "sigma_min", "nuclear_norm"],
        );
        for (i, &s) in srank.iter().enumerate() {
            t.push_row(vec![(i + 1) as f64, s, 1.0, 0.1, 2.0]);
        }
        t
    }

    #[test]
    fn kernel_only_directory_leaves_grid_criteria_not_run() {
        let traces = vec![kernel_trace(1, &[48.0, 40.0, 33.0])];
        let report = evaluate(&traces);
        let psd = report.criteria.iter().find(|c| c.name == "kernel-psd-rank-monotone").unwrap();
        assert_eq!(psd.status, CriterionStatus::Pass);
        for c in &report.criteria {
            if c.name.starts_with("grid") || c.name == "kernel-normal-rank-monotone" {
                assert_eq!(c.status, CriterionStatus::NotRun, "{}", c.name);
            }
        }
        assert!(!report.has_failure());
    }

    #[test]
    fn increasing_rank_fails_the_monotone_criterion() {
        let traces = vec![kernel_trace(1, &[30.0, 35.0, 33.0])];
        let report = evaluate(&traces);
        let psd = report.criteria.iter().find(|c| c.name == "kernel-psd-rank-monotone").unwrap();
        assert_eq!(psd.status, CriterionStatus::Fail);
        assert!(report.has_failure());
    }

    #[test]
    fn step_contrast_uses_grouped_medians() {
        let cfg10 = "train.grad_steps_per_iteration = 10\n";
        let cfg200 = "train.grad_steps_per_iteration = 200\n";
        let mut traces = Vec::new();
        for seed in 1..=5u64 {
            let hi = 44.0 + seed as f64;
            let lo = 20.0 + seed as f64;
            traces.push(grid_trace(
                "grid-offline",
                seed,
                cfg10,
                &[50.0, hi, hi, hi, hi, hi],
                &[1.0, 0.1, 0.1, 0.1, 0.1, 0.1],
                &[-5.0, -3.0, -3.0, -3.0, -3.0, -3.0],
            ));
            traces.push(grid_trace(
                "grid-offline",
                seed,
                cfg200,
                &[50.0, lo, lo, lo, lo, lo],
                &[1.0, 0.5, 0.5, 0.5, 0.5, 0.5],
                &[-5.0, -3.5, -3.5, -3.5, -3.5, -3.5],
            ));
        }
        let report = evaluate(&traces);
        let c = report.criteria.iter().find(|c| c.name == "grid-step-contrast").unwrap();
        assert_eq!(c.status, CriterionStatus::Pass);
        assert_eq!(c.margin, Some(47.0 - 23.0 - 3.0));
        let td = report.criteria.iter().find(|c| c.name == "grid-td-tradeoff").unwrap();
        assert_eq!(td.status, CriterionStatus::Pass);
    }

    #[test]
    fn ratio_criteria_split_preserved_from_collapsed() {
        let mc = "mode = monte_carlo\n";
        let fqe = "mode = fqe\n";
        let traces = vec![
            grid_trace(
                "grid-ablations",
                1,
                mc,
                &[40.0, 46.0, 44.0, 44.0, 44.0, 44.0, 44.0],
                &[1.0; 7],
                &[-4.0; 7],
            ),
            grid_trace(
                "grid-ablations",
                1,
                fqe,
                &[40.0, 46.0, 12.0, 12.0, 12.0, 12.0, 12.0],
                &[1.0; 7],
                &[-4.0; 7],
            ),
        ];
        let report = evaluate(&traces);
        let mc_c = report.criteria.iter().find(|c| c.name == "grid-mc-rank-preserved").unwrap();
        let fqe_c = report.criteria.iter().find(|c| c.name == "grid-fqe-rank-collapse").unwrap();
        assert_eq!(mc_c.status, CriterionStatus::Pass);
        assert_eq!(fqe_c.status, CriterionStatus::Pass);
    }

    #[test]
    fn diverged_traces_are_excluded() {
        let mut ok = kernel_trace(1, &[30.0, 25.0]);
        ok.diverged = false;
        let mut bad = kernel_trace(2, &[10.0, 50.0]);
        bad.diverged = true;
        let report = evaluate(&[ok, bad]);
        let psd = report.criteria.iter().find(|c| c.name == "kernel-psd-rank-monotone").unwrap();
        assert_eq!(psd.status, CriterionStatus::Pass);
    }

    #[test]
    fn json_output_carries_margins() {
        let traces = vec![kernel_trace(1, &[48.0, 40.0])];
        let json = evaluate(&traces).to_json();
        assert!(json.contains("\"kernel-psd-rank-monotone\""));
        assert!(json.contains("\"margin\""));
        assert!(json.contains("\"not_run\""));
    }
}
