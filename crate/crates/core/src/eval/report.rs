use std::str::FromStr;

use super::{AgreementReport, CoverageReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Markdown,
    Csv,
    Latex,
}

impl FromStr for TableFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(TableFormat::Markdown),
            "csv" => Ok(TableFormat::Csv),
            "latex" | "tex" => Ok(TableFormat::Latex),
            _ => Err(format!("unknown table format {s:?} (expected markdown, csv or latex)")),
        }
    }
}

/// Fixed-point text with round-half-up at `decimals` places. Values that are
/// a decimal tie up to float noise (e.g. 0.9115 stored as 0.91149999...)
/// round up.
pub fn format_fixed(x: f64, decimals: usize) -> String {
    let scale = 10f64.powi(decimals as i32);
    let scaled = x * scale;
    let mut r = (scaled + 0.5 + 1e-9 * scaled.abs().max(1.0)).floor();
    if r == 0.0 {
        r = 0.0; // no "-0.000"
    }
    format!("{:.*}", decimals, r / scale)
}

const UNDEFINED: &str = "undefined";

fn opt(x: Option<f64>, decimals: usize) -> String {
    x.map_or_else(|| UNDEFINED.to_string(), |v| format_fixed(v, decimals))
}

fn render(header: &[&str], rows: &[Vec<String>], format: TableFormat) -> String {
    match format {
        TableFormat::Markdown => {
            let mut out = format!("| {} |\n", header.join(" | "));
            out.push_str(&format!(
                "|{}|\n",
                header
                    .iter()
                    .enumerate()
                    .map(|(i, _)| if i == 0 { " --- " } else { " ---: " })
                    .collect::<Vec<_>>()
                    .join("|")
            ));
            for row in rows {
                out.push_str(&format!("| {} |\n", row.join(" | ")));
            }
            out
        }
        TableFormat::Latex => {
            let mut out = format!("{} \\\\\n\\hline\n", header.join(" & "));
            for row in rows {
                out.push_str(&format!("{} \\\\\n", row.join(" & ")));
            }
            out
        }
        TableFormat::Csv => {
            let mut w = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(Vec::new());
            w.write_record(header).expect("in-memory write");
            for row in rows {
                w.write_record(row).expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
        }
    }
}

/// Coverage table: counts, FP%/FN% to one decimal, ratios to three.
pub fn coverage_table(rows: &[(String, CoverageReport)], format: TableFormat) -> String {
    let header = ["Model", "TP", "FP", "FN", "FP%", "FN%", "Precision", "Recall", "F1"];
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(label, r)| {
            vec![
                label.clone(),
                r.tp.to_string(),
                r.fp.to_string(),
                r.fn_.to_string(),
                opt(r.fp_pct, 1),
                opt(r.fn_pct, 1),
                opt(r.precision, 3),
                opt(r.recall, 3),
                opt(r.f1, 3),
            ]
        })
        .collect();
    render(&header, &body, format)
}

/// Agreement table. Markdown and LaTeX combine exact and ±1 accuracy in one
/// "a / b" column; CSV keeps them separate.
pub fn agreement_table(rows: &[(String, AgreementReport)], format: TableFormat) -> String {
    let combined = format != TableFormat::Csv;
    let mut header = vec!["Model", "N", "MAE", "RMSE", "R2", "Pearson r"];
    if combined {
        header.push("Accuracy / ±1 Acc");
    } else {
        header.extend(["Accuracy", "±1 Acc"]);
    }
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(label, r)| {
            let mut row = vec![
                label.clone(),
                r.n.to_string(),
                format_fixed(r.mae, 3),
                format_fixed(r.rmse, 3),
                opt(r.r_squared, 3),
                opt(r.pearson_r, 3),
            ];
            let (exact, within) = (
                format_fixed(r.exact_accuracy, 3),
                format_fixed(r.within_one_accuracy, 3),
            );
            if combined {
                row.push(format!("{exact} / {within}"));
            } else {
                row.extend([exact, within]);
            }
            row
        })
        .collect();
    render(&header, &body, format)
}
