use std::fmt::Write as _;
use std::io::Write;

use crate::criteria::{CriterionVerdict, PassRule};
use crate::error::Result;
use crate::harness::RunReport;

fn verdicts(report: &RunReport) -> impl Iterator<Item = &CriterionVerdict> {
    report
        .emr
        .iter()
        .flat_map(|b| &b.verdicts)
        .chain(report.er.iter().flat_map(|c| &c.verdicts))
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn method_columns(v: &CriterionVerdict) -> (String, String) {
    let a = v.methods.first().map(|m| m.to_string()).unwrap_or_default();
    let b = v.methods.get(1).map(|m| m.to_string()).unwrap_or_default();
    (a, b)
}

/// One row per evaluated pair of every verdict. Only reports produced in
/// this process carry the per-pair records.
pub fn write_distances(report: &RunReport, out: &mut impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "criterion", "method_a", "method_b", "pair_i", "pair_j", "d_input", "d_output", "d_expl",
    ])?;
    for v in verdicts(report) {
        let (a, b) = method_columns(v);
        for r in &v.records {
            w.write_record([
                v.criterion.as_str().to_string(),
                a.clone(),
                b.clone(),
                r.a.clone(),
                r.b.clone(),
                opt(r.d_input),
                opt(r.d_output),
                r.d_expl.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per verdict, reconstructible from `report.json` alone.
pub fn write_verdicts(report: &RunReport, out: &mut impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "criterion", "method_a", "method_b", "pass", "violations", "total", "rule", "estimate",
        "ci_lower", "ci_upper",
    ])?;
    for v in verdicts(report) {
        let (a, b) = method_columns(v);
        let p = v.probability.as_ref();
        w.write_record([
            v.criterion.as_str().to_string(),
            a,
            b,
            v.pass.to_string(),
            v.violations.to_string(),
            v.total.to_string(),
            rule(&v.rule),
            opt(p.map(|p| p.estimate)),
            opt(p.map(|p| p.lower)),
            opt(p.map(|p| p.upper)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn rule(r: &PassRule) -> String {
    match r {
        PassRule::Strict { slack } => format!("strict(slack={slack})"),
        PassRule::Relaxed { lambda } => format!("relaxed(lambda={lambda})"),
    }
}

fn mark(pass: bool) -> &'static str {
    if pass {
        "pass"
    } else {
        "FAIL"
    }
}

fn verdict_rows(s: &mut String, vs: &[CriterionVerdict]) {
    for v in vs {
        let detail = match &v.probability {
            Some(p) => format!(
                "P = {:.4} [{:.4}, {:.4}] over {}",
                p.estimate, p.lower, p.upper, p.qualifiers
            ),
            None => format!("{}/{} violations", v.violations, v.total),
        };
        let _ = writeln!(s, "| {} | {} | {} | {} |", v.criterion, mark(v.pass), detail, rule(&v.rule));
    }
}

pub fn render_markdown(report: &RunReport) -> String {
    let mut s = String::new();
    let sum = &report.summary;
    let _ = writeln!(s, "# Robustness report\n");
    let _ = writeln!(
        s,
        "{} {} on `{}` ({} rows, {} features), master seed {}.\n",
        report.tool.name,
        report.tool.version,
        report.dataset.id,
        report.dataset.n,
        report.dataset.dim,
        report.config.master_seed
    );
    let _ = writeln!(s, "**Verdict: {}**\n", if sum.robust { "robust" } else { "not robust" });
    for r in &sum.reasons {
        let _ = writeln!(s, "- {r}");
    }
    if !sum.reasons.is_empty() {
        s.push('\n');
    }

    let _ = writeln!(s, "## Models\n\n| id | architecture | origin | accuracy |\n|---|---|---|---|");
    for m in &report.models {
        let _ = writeln!(s, "| {} | {} | {:?} | {:.3} |", m.id, m.architecture, m.origin, m.accuracy);
    }

    let _ = writeln!(s, "\n## EMR\n");
    for b in &report.emr {
        let _ = writeln!(s, "### {} ({})\n", b.method, if b.robust { "robust" } else { "not robust" });
        let _ = writeln!(s, "| criterion | result | detail | rule |\n|---|---|---|---|");
        verdict_rows(&mut s, &b.verdicts);
        for u in &b.unevaluated {
            let _ = writeln!(s, "| {} | unevaluated | {} | |", u.criterion, u.reason);
        }
        s.push('\n');
    }

    if !report.er.is_empty() {
        let _ = writeln!(s, "## ER\n");
        for c in &report.er {
            let tag = if c.informational { ", informational" } else { "" };
            let _ = writeln!(s, "### {} vs {} ({}{tag})\n", c.a, c.b, mark(c.robust));
            let _ = writeln!(s, "| criterion | result | detail | rule |\n|---|---|---|---|");
            verdict_rows(&mut s, &c.verdicts);
            for u in &c.unevaluated {
                let _ = writeln!(s, "| {} | unevaluated | {} | |", u.criterion, u.reason);
            }
            s.push('\n');
        }
    }

    if !report.scenarios.is_empty() {
        let _ = writeln!(s, "## Scenarios\n\n| scenario | agreement | regressions |\n|---|---|---|");
        for r in &report.scenarios {
            let _ = writeln!(
                s,
                "| {} | {} | {} |",
                r.scenario,
                mark(r.agreement),
                mark(r.regressions_ok())
            );
        }
    }
    s
}
