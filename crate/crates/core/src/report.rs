//! Human-readable views of the machine outputs.

use std::fmt::Write;

use crate::analysis::{count_significant, enumerate_tests, Battery, Metric};
use crate::attributes::Axis;
use crate::corpus::{ManifestReport, ToneReport};
use crate::pmi::PmiReport;

/// `t` to two decimals with its stars, or `n/a` for a degenerate cell.
pub fn format_cell(t: Option<f64>, stars: &str) -> String {
    match t {
        Some(t) => format!("{t:.2}{stars}"),
        None => "n/a".to_string(),
    }
}

/// Contrasts as rows grouped by metric, one column per model, and a
/// significance count per metric at the bottom.
pub fn render_battery_table(batteries: &[Battery], alpha: f64) -> String {
    let contrasts = batteries
        .first()
        .map(|b| {
            let mut seen = Vec::new();
            for r in &b.results {
                if !seen.contains(&r.contrast) {
                    seen.push(r.contrast);
                }
            }
            seen
        })
        .unwrap_or_else(|| enumerate_tests(&Axis::ALL));

    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut header = vec!["Metric".to_string(), "Contrast".to_string()];
    header.extend(batteries.iter().map(|b| b.model_id.clone()));
    rows.push(header);
    for metric in Metric::ALL {
        for (i, contrast) in contrasts.iter().enumerate() {
            let mut row = vec![
                if i == 0 { metric.label().to_string() } else { String::new() },
                contrast.to_string(),
            ];
            for b in batteries {
                let cell = b
                    .results
                    .iter()
                    .find(|r| r.metric == metric && r.contrast == *contrast)
                    .map(|r| format_cell(r.t_stat, r.stars.as_str()))
                    .unwrap_or_else(|| "-".to_string());
                row.push(cell);
            }
            rows.push(row);
        }
    }
    let footer_at = rows.len();
    rows.push(vec!["# of significant stereotypes".to_string()]);
    let counts: Vec<_> = batteries.iter().map(|b| count_significant(&b.results, alpha)).collect();
    for metric in Metric::ALL {
        let mut row = vec![metric.label().to_string(), String::new()];
        for c in &counts {
            row.push(c.get(&metric).map(|c| c.to_string()).unwrap_or_else(|| "-".into()));
        }
        rows.push(row);
    }

    let ncols = rows[0].len();
    let widths: Vec<usize> = (0..ncols)
        .map(|c| {
            rows.iter()
                .enumerate()
                .filter(|(i, _)| *i != footer_at)
                .filter_map(|(_, r)| r.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let rule = "-".repeat(widths.iter().sum::<usize>() + 2 * ncols.saturating_sub(1));

    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        if i == 1 || i == footer_at {
            writeln!(out, "{rule}").unwrap();
        }
        if i == footer_at {
            writeln!(out, "{}", row[0]).unwrap();
            continue;
        }
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| {
                if c < 2 {
                    format!("{s:<w$}", w = widths[c])
                } else {
                    format!("{s:>w$}", w = widths[c])
                }
            })
            .collect();
        writeln!(out, "{}", line.join("  ").trim_end()).unwrap();
    }
    writeln!(out, "{rule}").unwrap();
    writeln!(out, "* p<0.05, ** p<0.01, *** p<0.001").unwrap();
    out
}

/// One block per (aspect, dimension, model) listing ranked words.
pub fn render_pmi(report: &PmiReport) -> String {
    let mut out = String::new();
    writeln!(out, "PMI top-{} words (|cos| >= {})", report.k, report.threshold).unwrap();
    for table in &report.tables {
        if table.entries.is_empty() {
            continue;
        }
        writeln!(
            out,
            "\n[{}] {} / {}",
            table.model_id,
            table.aspect.label(),
            table.dimension.label()
        )
        .unwrap();
        for (rank, e) in table.entries.iter().enumerate() {
            writeln!(
                out,
                "{:>3}. {:<20} {:>8.4}  n={}",
                rank + 1,
                e.word,
                e.pmi,
                e.count_in_aspect
            )
            .unwrap();
        }
    }
    writeln!(out, "\nShared by all models").unwrap();
    for c in &report.common {
        if !c.words.is_empty() {
            writeln!(out, "{} / {}: {}", c.aspect.label(), c.dimension.label(), c.words.join(", ")).unwrap();
        }
    }
    out
}

pub fn render_manifest(report: &ManifestReport, tone: Option<&ToneReport>) -> String {
    let mut out = String::new();
    writeln!(out, "images: {}", report.total_images).unwrap();
    writeln!(out, "complete occupations: {}", report.complete_occupations.join(", ")).unwrap();
    if !report.incomplete_occupations.is_empty() {
        writeln!(out, "incomplete occupations: {}", report.incomplete_occupations.join(", ")).unwrap();
    }
    writeln!(out, "missing keys: {}", report.missing_keys.len()).unwrap();
    writeln!(out, "duplicate keys: {}", report.duplicate_keys.len()).unwrap();
    if let Some(tone) = tone {
        for c in &tone.contrasts {
            match c.change_percent {
                Some([r, g, b]) => writeln!(
                    out,
                    "{} vs White ({} pairs): R {r:+.2}%  G {g:+.2}%  B {b:+.2}%",
                    c.color.label(),
                    c.n_pairs
                )
                .unwrap(),
                None => writeln!(out, "{} vs White: no pairs", c.color.label()).unwrap(),
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{PairedTestResult, Stars};
    use crate::stats::Correction;

    fn battery(model: &str, p: f64) -> Battery {
        let mut results = Vec::new();
        for metric in Metric::ALL {
            for contrast in enumerate_tests(&Axis::ALL) {
                results.push(PairedTestResult {
                    metric,
                    contrast,
                    n_pairs: 90,
                    t_stat: Some(-4.25),
                    p_value: Some(p),
                    p_adjusted: None,
                    stars: Stars::from_p(p),
                    degenerate: None,
                });
            }
        }
        Battery {
            model_id: model.into(),
            correction: Correction::None,
            n_contrasts: 19,
            results,
        }
    }

    #[test]
    fn footer_and_rows() {
        let text = render_battery_table(&[battery("m", 0.5)], 0.05);
        assert!(text.contains("# of significant stereotypes"));
        let footer = text.split("# of significant stereotypes").nth(1).unwrap();
        assert_eq!(footer.matches("0/19").count(), 3);
        assert_eq!(text.matches("Blue vs Red").count(), 3);
        assert_eq!(text.lines().filter(|l| l.contains(" vs ")).count(), 57);
    }

    #[test]
    fn star_suffix() {
        let text = render_battery_table(&[battery("m", 0.0005), battery("n", 0.02)], 0.05);
        assert!(text.contains("-4.25***"));
        assert!(text.contains("-4.25*"));
        assert!(text.contains("19/19"));
        assert_eq!(format_cell(None, ""), "n/a");
    }
}
