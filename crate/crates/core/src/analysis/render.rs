//! CSV and plain-text renderings of the three tables. Percentages carry one
//! decimal, currency amounts are whole units per month.

use std::fmt::Write as _;

use crate::solver::{ImpactKind, ImpactRow};

use super::quintiles::QUINTILES;
use super::scenarios::{ScenarioKind, ScenarioOutcome};
use super::shares::ShareTable;
use super::AnalysisError;

/// One table as CSV and as aligned text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rendered {
    pub csv: String,
    pub text: String,
}

fn finite_or(v: f64, f: impl Fn(f64) -> String) -> String {
    if v.is_finite() {
        f(v)
    } else {
        "NA".to_string()
    }
}

fn clean_zero(s: String) -> String {
    // "-0", "-0.0", "-0.000" read badly in tables
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

pub fn percent(v: f64) -> String {
    finite_or(v, |v| clean_zero(format!("{v:.1}")))
}

pub fn currency(v: f64) -> String {
    finite_or(v, |v| clean_zero(format!("{v:.0}")))
}

pub fn ratio(v: f64) -> String {
    finite_or(v, |v| clean_zero(format!("{v:.3}")))
}

fn csv_string(rows: &[Vec<String>]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for r in rows {
        w.write_record(r).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("utf-8 input")
}

/// Left-aligns the first column and right-aligns the rest.
fn aligned(title: &str, rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = format!("{title}\n\n");
    for r in rows {
        let mut line = String::new();
        for (c, cell) in r.iter().enumerate() {
            let pad = widths[c] - cell.chars().count();
            if c == 0 {
                line.push_str(cell);
                line.push_str(&" ".repeat(pad));
            } else {
                line.push_str("  ");
                line.push_str(&" ".repeat(pad));
                line.push_str(cell);
            }
        }
        let _ = writeln!(out, "{}", line.trim_end());
    }
    out
}

fn quintile_header(first: &str, last: Option<&str>) -> Vec<String> {
    let mut h = vec![first.to_string()];
    h.extend((1..=QUINTILES).map(|q| format!("Q{q}")));
    if let Some(l) = last {
        h.push(l.to_string());
    }
    h
}

/// Budget shares by treatment group: one row per group plus a closing
/// `Total` row, columns Q1..Q5 and Total.
pub fn render_share_table(table: &ShareTable) -> Rendered {
    let mut rows = vec![quintile_header("group", Some("Total"))];
    for ((g, cells), total) in table.groups.iter().zip(&table.cells).zip(&table.total) {
        let mut r = vec![g.label.clone()];
        r.extend(cells.iter().map(|v| percent(*v)));
        r.push(percent(*total));
        rows.push(r);
    }
    let mut r = vec!["Total".to_string()];
    r.extend(table.column_sums().iter().map(|v| percent(*v)));
    rows.push(r);
    Rendered {
        csv: csv_string(&rows),
        text: aligned(
            "Budget share of expenditure by treatment group (%), quintiles of per-capita total expenditure",
            &rows,
        ),
    }
}

/// Reference rate (outside, %) without each favoured treatment.
pub fn render_impact_table(rows_in: &[ImpactRow]) -> Result<Rendered, AnalysisError> {
    if rows_in.is_empty() {
        return Err(AnalysisError::NoRows);
    }
    let mut rows = vec![vec![
        "row".to_string(),
        "selector".to_string(),
        "rate_outside_pct".to_string(),
        "rate_inside_pct".to_string(),
        "delta_pp".to_string(),
    ]];
    for r in rows_in {
        let selector = match &r.kind {
            ImpactKind::Baseline => "baseline".to_string(),
            ImpactKind::Removal(s) => s.clone(),
            ImpactKind::WithCashback => "cashback".to_string(),
        };
        rows.push(vec![
            r.label.clone(),
            selector,
            percent(r.rate.to_outside().percent()),
            percent(r.rate.to_inside().percent()),
            percent(r.delta_pp),
        ]);
    }
    Ok(Rendered {
        csv: csv_string(&rows),
        text: aligned(
            "Reference rate without each favoured treatment (outside basis, %; change in p.p.)",
            &rows,
        ),
    })
}

/// Mean tax per household by quintile for each scenario, with changes
/// against the baseline.
pub fn render_scenario_table(outcomes: &[ScenarioOutcome]) -> Result<Rendered, AnalysisError> {
    if outcomes.is_empty() {
        return Err(AnalysisError::NoScenarios);
    }
    let mut csv_rows = vec![{
        let mut h = vec!["scenario".to_string()];
        h.extend(quintile_header("measure", None));
        h
    }];
    let mut text = String::from(
        "Mean tax per household by quintile of per-capita total expenditure (currency/month)\n",
    );
    for o in outcomes {
        let mut measures: Vec<(&str, &str, Vec<String>)> = vec![(
            "tax",
            "Tax",
            o.quintiles.iter().map(|q| currency(q.mean_tax)).collect(),
        )];
        if o.kind == ScenarioKind::Baseline {
            measures.push((
                "monetary_expenditure",
                "Monetary expenditure",
                o.quintiles
                    .iter()
                    .map(|q| currency(q.mean_monetary_expenditure))
                    .collect(),
            ));
            measures.push((
                "total_expenditure",
                "Total expenditure incl. non-monetary",
                o.quintiles
                    .iter()
                    .map(|q| currency(q.mean_total_expenditure))
                    .collect(),
            ));
        } else {
            measures.push((
                "delta_tax",
                "Change in tax",
                o.quintiles.iter().map(|q| currency(q.delta_tax)).collect(),
            ));
            measures.push((
                "delta_share",
                "Change in tax / monetary expenditure",
                o.quintiles.iter().map(|q| ratio(q.delta_share)).collect(),
            ));
        }

        let mut block = vec![quintile_header("", None)];
        for (key, label, values) in measures {
            let mut r = vec![o.kind.name().to_string(), key.to_string()];
            r.extend(values.iter().cloned());
            csv_rows.push(r);
            let mut t = vec![label.to_string()];
            t.extend(values);
            block.push(t);
        }
        let mut title = o.kind.title().to_string();
        if let Some(rate) = o.reference_rate {
            let _ = write!(
                title,
                " (reference rate {} outside, {} inside",
                percent(rate.to_outside().percent()),
                percent(rate.to_inside().percent())
            );
            if let Some(t) = o.transfer_per_person {
                let _ = write!(title, "; transfer {t:.2} per person");
            }
            title.push(')');
        }
        text.push('\n');
        text.push_str(&aligned(&title, &block));
    }
    Ok(Rendered {
        csv: csv_string(&csv_rows),
        text,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::Group;

    #[test]
    fn number_formats() {
        assert_eq!(percent(15.04), "15.0");
        assert_eq!(percent(-0.04), "0.0");
        assert_eq!(currency(1388.6), "1389");
        assert_eq!(currency(-0.4), "0");
        assert_eq!(currency(-45.2), "-45");
        assert_eq!(ratio(-0.0591), "-0.059");
        assert_eq!(percent(f64::NAN), "NA");
    }

    #[test]
    fn share_table_has_six_value_columns() {
        let t = ShareTable {
            groups: vec![
                Group { id: "a".into(), label: "A, with comma".into() },
                Group { id: "b".into(), label: "B".into() },
            ],
            cells: vec![[40.0; 5], [60.0; 5]],
            total: vec![40.0, 60.0],
        };
        let r = render_share_table(&t);
        let mut rdr = csv::Reader::from_reader(r.csv.as_bytes());
        assert_eq!(rdr.headers().unwrap().len(), 7);
        let recs: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
        assert_eq!(recs.len(), 3);
        assert_eq!(&recs[0][0], "A, with comma");
        assert_eq!(&recs[2][6], "100.0");
        assert!(r.text.contains("Q5"));
    }

    #[test]
    fn empty_inputs_error() {
        assert!(matches!(render_scenario_table(&[]), Err(AnalysisError::NoScenarios)));
        assert!(matches!(render_impact_table(&[]), Err(AnalysisError::NoRows)));
    }
}
