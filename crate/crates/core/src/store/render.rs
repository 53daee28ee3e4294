use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::roles::{Finding, Report};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[serde(alias = "markdown")]
    Md,
    Html,
}

impl ReportFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            ReportFormat::Md => "md",
            ReportFormat::Html => "html",
        }
    }

    pub fn content_type(&self) -> &'static str {
        match self {
            ReportFormat::Md => "text/markdown; charset=utf-8",
            ReportFormat::Html => "text/html; charset=utf-8",
        }
    }
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "md" | "markdown" => Ok(ReportFormat::Md),
            "html" => Ok(ReportFormat::Html),
            other => Err(format!("unknown report format `{other}` (expected md or html)")),
        }
    }
}

fn sorted_findings(report: &Report) -> Vec<&Finding> {
    let mut f: Vec<&Finding> = report.findings.iter().collect();
    f.sort_by(|a, b| b.severity.cmp(&a.severity).then_with(|| a.name.cmp(&b.name)));
    f
}

fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

/// Markdown table cells cannot hold raw pipes or newlines.
fn md_cell(s: &str) -> String {
    s.replace('|', "\\|").replace('\n', " ")
}

fn markdown(report: &Report) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {}\n", report.title);
    let _ = writeln!(out, "**Target:** {}\n", report.target_description);
    let _ = writeln!(out, "**Final status:** {}\n", report.final_status);
    let _ = writeln!(out, "**Tokens used:** {}\n", report.token_usage_total);
    out.push_str("## Outcome\n\n");
    let _ = writeln!(out, "{}\n", report.outcome);
    out.push_str("## Findings\n\n");
    let findings = sorted_findings(report);
    if findings.is_empty() {
        out.push_str("No findings recorded.\n\n");
    } else {
        out.push_str("| Severity | Finding | Evidence |\n|---|---|---|\n");
        for f in findings {
            let _ = writeln!(
                out,
                "| {} | {} | {} |",
                f.severity.as_str(),
                md_cell(&f.name),
                md_cell(&f.evidence)
            );
        }
        out.push('\n');
    }
    out.push_str("## Timeline\n\n");
    if report.timeline.is_empty() {
        out.push_str("No commands were executed.\n");
    } else {
        for t in &report.timeline {
            let _ = writeln!(out, "{}. [{}] {}", t.seq, t.node, t.digest);
        }
    }
    out
}

fn html(report: &Report) -> String {
    let e = escape_html;
    let mut out = String::new();
    out.push_str("<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n");
    let _ = writeln!(out, "<title>{}</title>", e(&report.title));
    out.push_str(
        "<style>body{font-family:sans-serif;max-width:60em;margin:2em auto}\
table{border-collapse:collapse}td,th{border:1px solid #999;padding:.3em .6em;text-align:left}\
code{white-space:pre-wrap}</style>\n</head>\n<body>\n",
    );
    let _ = writeln!(out, "<h1>{}</h1>", e(&report.title));
    let _ = writeln!(out, "<p><strong>Target:</strong> {}</p>", e(&report.target_description));
    let _ = writeln!(
        out,
        "<p><strong>Final status:</strong> {}</p>",
        e(report.final_status.as_str())
    );
    let _ = writeln!(out, "<p><strong>Tokens used:</strong> {}</p>", report.token_usage_total);
    let _ = writeln!(out, "<h2>Outcome</h2>\n<p>{}</p>", e(&report.outcome));
    out.push_str("<h2>Findings</h2>\n");
    let findings = sorted_findings(report);
    if findings.is_empty() {
        out.push_str("<p>No findings recorded.</p>\n");
    } else {
        out.push_str("<table>\n<tr><th>Severity</th><th>Finding</th><th>Evidence</th></tr>\n");
        for f in findings {
            let _ = writeln!(
                out,
                "<tr><td>{}</td><td>{}</td><td><code>{}</code></td></tr>",
                f.severity.as_str(),
                e(&f.name),
                e(&f.evidence)
            );
        }
        out.push_str("</table>\n");
    }
    out.push_str("<h2>Timeline</h2>\n");
    if report.timeline.is_empty() {
        out.push_str("<p>No commands were executed.</p>\n");
    } else {
        out.push_str("<ol>\n");
        for t in &report.timeline {
            let _ = writeln!(
                out,
                "<li value=\"{}\">[{}] <code>{}</code></li>",
                t.seq,
                t.node,
                e(&t.digest)
            );
        }
        out.push_str("</ol>\n");
    }
    out.push_str("</body>\n</html>\n");
    out
}

/// Renders a report. Output depends only on the report, byte for byte.
pub fn render_report(report: &Report, format: ReportFormat) -> String {
    match format {
        ReportFormat::Md => markdown(report),
        ReportFormat::Html => html(report),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{NodeId, RunStatus};
    use crate::roles::{Severity, TimelineEntry};

    fn report(findings: Vec<Finding>) -> Report {
        Report {
            title: "T <x>".into(),
            target_description: "10.0.2.7".into(),
            final_status: RunStatus::Succeeded,
            timeline: vec![TimelineEntry {
                seq: 4,
                node: NodeId::Pentester,
                digest: "Shell `id` -> exit 0".into(),
            }],
            findings,
            outcome: "done".into(),
            token_usage_total: 10,
            narrative_available: true,
        }
    }

    fn finding(name: &str, severity: Severity) -> Finding {
        Finding {
            name: name.into(),
            severity,
            evidence: "e|v".into(),
        }
    }

    #[test]
    fn findings_sorted_by_severity_then_name() {
        let r = report(vec![
            finding("b", Severity::Low),
            finding("z", Severity::Critical),
            finding("a", Severity::Low),
        ]);
        let md = render_report(&r, ReportFormat::Md);
        let z = md.find("| critical | z").unwrap();
        let a = md.find("| low | a").unwrap();
        let b = md.find("| low | b").unwrap();
        assert!(z < a && a < b);
        assert!(md.contains("e\\|v"));
    }

    #[test]
    fn empty_findings_section() {
        let r = report(vec![]);
        assert!(render_report(&r, ReportFormat::Md).contains("No findings recorded"));
        let html = render_report(&r, ReportFormat::Html);
        assert!(html.contains("No findings recorded"));
        assert!(html.contains("T &lt;x&gt;"));
    }
}
