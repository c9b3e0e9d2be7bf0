//! Plain-text overall and per-class tables, one column group per run.

use se3grasp::eval::{EvalReport, Summary};
use std::fmt::Write;

fn cell(s: &Summary) -> [String; 3] {
    [format!("{:.4} ± {:.4}", s.emd_mean, s.emd_std), format!("{:.1}", s.ta), format!("{:.1}", s.ca)]
}

fn header(out: &mut String, first: &str, reports: &[EvalReport]) {
    write!(out, "{first:<20} {:>6}", "scenes").unwrap();
    for r in reports {
        let emd = format!("{} EMD", r.label);
        let ta = format!("{} TA%", r.label);
        let ca = format!("{} CA%", r.label);
        write!(out, "  {emd:>19} {ta:>9} {ca:>9}").unwrap();
    }
    out.push('\n');
}

fn row(out: &mut String, name: &str, scenes: usize, cells: &[Option<[String; 3]>]) {
    write!(out, "{name:<20} {scenes:>6}").unwrap();
    for c in cells {
        let [e, t, a] = c.clone().unwrap_or_else(|| ["-".into(), "-".into(), "-".into()]);
        write!(out, "  {e:>19} {t:>9} {a:>9}").unwrap();
    }
    out.push('\n');
}

/// EMD is mean ± std over scenes.
pub fn render(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    out.push_str("overall (EMD mean ± std over scenes)\n");
    header(&mut out, "", reports);
    let overall: Vec<_> = reports.iter().map(|r| Some(cell(&r.overall))).collect();
    row(&mut out, "all", reports.first().map_or(0, |r| r.overall.scenes), &overall);

    out.push_str("\nper class\n");
    header(&mut out, "class", reports);
    let mut classes: Vec<(usize, String, usize)> = Vec::new();
    for r in reports {
        for c in &r.per_class {
            if !classes.iter().any(|k| k.0 == c.class_label) {
                classes.push((c.class_label, c.class_name.clone(), c.summary.scenes));
            }
        }
    }
    classes.sort();
    for (label, name, scenes) in classes {
        let cells: Vec<_> = reports
            .iter()
            .map(|r| r.per_class.iter().find(|c| c.class_label == label).map(|c| cell(&c.summary)))
            .collect();
        row(&mut out, &name, scenes, &cells);
    }
    out
}
