//! Grouped response-surface fits in the layout of a sensitivity table: one
//! row per setting with R², average, range and per-factor contributions.

use std::collections::BTreeMap;
use std::io;

use anyhow::{bail, Context, Result};
use vardis_lab::analysis::{rsm_fit, AnalysisError, RegressionModel, Term};

#[derive(Debug, Clone, PartialEq)]
pub struct RsmInputRow {
    pub group: Vec<String>,
    /// Raw factor values; the smaller of the two levels becomes -1.
    pub factors: Vec<String>,
    pub response: f64,
}

#[derive(Debug, Clone)]
pub struct RsmRow {
    pub group_names: Vec<String>,
    pub group: Vec<String>,
    pub factor_names: Vec<String>,
    pub response: String,
    pub model: Result<RegressionModel, AnalysisError>,
}

fn level_order(values: &[&str]) -> Vec<String> {
    let mut distinct: Vec<String> = Vec::new();
    for v in values {
        if !distinct.iter().any(|d| d == v) {
            distinct.push(v.to_string());
        }
    }
    let numeric: Option<Vec<f64>> = distinct.iter().map(|v| v.parse().ok()).collect();
    if let Some(nums) = numeric {
        let mut idx: Vec<usize> = (0..distinct.len()).collect();
        idx.sort_by(|&a, &b| nums[a].total_cmp(&nums[b]));
        return idx.into_iter().map(|i| distinct[i].clone()).collect();
    }
    if distinct.iter().all(|v| v == "false" || v == "true") {
        distinct.sort();
    }
    distinct
}

fn fit_one(rows: &[&RsmInputRow], n_factors: usize) -> Result<RegressionModel, AnalysisError> {
    let mut levels = Vec::with_capacity(n_factors);
    for f in 0..n_factors {
        let values: Vec<&str> = rows.iter().map(|r| r.factors[f].as_str()).collect();
        let order = level_order(&values);
        if order.len() != 2 {
            return Err(AnalysisError::IncompleteDesign(format!(
                "factor {f} has {} levels, expected 2",
                order.len()
            )));
        }
        levels.push(order);
    }
    let mut design = BTreeMap::new();
    for r in rows {
        let x: Vec<i8> = r
            .factors
            .iter()
            .zip(&levels)
            .map(|(v, order)| if *v == order[0] { -1 } else { 1 })
            .collect();
        if design.insert(x.clone(), r.response).is_some() {
            return Err(AnalysisError::IncompleteDesign(format!("cell {x:?} appears twice")));
        }
    }
    rsm_fit(&design)
}

/// Fits one model per distinct group value, groups in first-seen order.
pub fn fit_groups(group_names: &[String], factor_names: &[String], response: &str, rows: &[RsmInputRow]) -> Vec<RsmRow> {
    let mut groups: Vec<(Vec<String>, Vec<&RsmInputRow>)> = Vec::new();
    for r in rows {
        match groups.iter_mut().find(|(g, _)| *g == r.group) {
            Some((_, members)) => members.push(r),
            None => groups.push((r.group.clone(), vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|(group, members)| RsmRow {
            group_names: group_names.to_vec(),
            group,
            factor_names: factor_names.to_vec(),
            response: response.to_string(),
            model: fit_one(&members, factor_names.len()),
        })
        .collect()
}

fn pct(v: f64) -> String {
    format!("{v:.2}")
}

pub fn write_csv<W: io::Write>(rows: &[RsmRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
    let mut last_header: Option<Vec<String>> = None;
    for r in rows {
        let mut header = r.group_names.clone();
        header.extend(["response", "r2_pct", "average", "min", "max"].map(String::from));
        header.extend(r.factor_names.iter().map(|f| format!("contr_{f}_pct")));
        header.extend(["contr_interactions_pct", "error"].map(String::from));
        if last_header.as_ref() != Some(&header) {
            w.write_record(&header)?;
            last_header = Some(header);
        }
        let mut rec = r.group.clone();
        rec.push(r.response.clone());
        match &r.model {
            Ok(m) => {
                rec.push(pct(m.r2_pct));
                rec.push(m.intercept().to_string());
                rec.push(m.min.to_string());
                rec.push(m.max.to_string());
                rec.extend((0..r.factor_names.len()).map(|i| pct(m.contribution_pct(Term::Main(i)))));
                rec.push(pct(m.interactions_pct()));
                rec.push(String::new());
            }
            Err(e) => {
                rec.extend(std::iter::repeat_n(String::new(), 4 + r.factor_names.len() + 1));
                rec.push(e.to_string());
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a response table. Columns other than `response` and `groups` are
/// factors.
pub fn read_input<R: io::Read>(input: R, response: &str, groups: &[String]) -> Result<(Vec<String>, Vec<RsmInputRow>)> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let col = |name: &str| header.iter().position(|h| h == name);
    let Some(resp) = col(response) else {
        bail!("no `{response}` column in input (columns: {})", header.join(", "));
    };
    let group_idx: Vec<usize> = groups
        .iter()
        .map(|g| col(g).with_context(|| format!("no `{g}` group column in input")))
        .collect::<Result<_>>()?;
    let factor_idx: Vec<usize> = (0..header.len())
        .filter(|i| *i != resp && !group_idx.contains(i))
        .collect();
    if factor_idx.is_empty() {
        bail!("no factor columns in input");
    }
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let y: f64 = rec[resp]
            .trim()
            .parse()
            .with_context(|| format!("row {}: response `{}` is not a number", line + 2, &rec[resp]))?;
        rows.push(RsmInputRow {
            group: group_idx.iter().map(|&i| rec[i].trim().to_string()).collect(),
            factors: factor_idx.iter().map(|&i| rec[i].trim().to_string()).collect(),
            response: y,
        });
    }
    Ok((factor_idx.iter().map(|&i| header[i].clone()).collect(), rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_example_from_csv() {
        let input = "beta,rep,response\n10,1,1\n10,3,2\n20,1,3\n20,3,4\n";
        let (factors, rows) = read_input(input.as_bytes(), "response", &[]).unwrap();
        assert_eq!(factors, ["beta", "rep"]);
        let out = fit_groups(&[], &factors, "response", &rows);
        let m = out[0].model.as_ref().unwrap();
        assert_eq!(m.contribution_pct(Term::Main(0)), 80.0);
        assert_eq!(m.contribution_pct(Term::Main(1)), 20.0);
        let mut buf = Vec::new();
        write_csv(&out, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "response,r2_pct,average,min,max,contr_beta_pct,contr_rep_pct,contr_interactions_pct,error\n\
             response,100.00,2.5,1,4,80.00,20.00,0.00,\n"
        );
    }

    #[test]
    fn numeric_levels_sort_by_value() {
        assert_eq!(level_order(&["20", "10", "20"]), ["10", "20"]);
        assert_eq!(level_order(&["true", "false"]), ["false", "true"]);
        assert_eq!(level_order(&["b", "a"]), ["b", "a"]);
    }

    #[test]
    fn groups_fit_separately() {
        let input = "k,x,response\n9,0,1\n9,1,3\n13,0,5\n13,1,5\n";
        let (factors, rows) = read_input(input.as_bytes(), "response", &["k".into()]).unwrap();
        let out = fit_groups(&["k".into()], &factors, "response", &rows);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].group, ["9"]);
        assert_eq!(out[0].model.as_ref().unwrap().coefficient(Term::Main(0)), 1.0);
        assert_eq!(out[1].model.as_ref().unwrap().sst, 0.0);
    }

    #[test]
    fn incomplete_design_is_reported_in_row() {
        let input = "x,y,response\n0,0,1\n0,1,2\n1,0,3\n";
        let (factors, rows) = read_input(input.as_bytes(), "response", &[]).unwrap();
        let out = fit_groups(&[], &factors, "response", &rows);
        assert!(matches!(out[0].model, Err(AnalysisError::IncompleteDesign(_))));
    }

    #[test]
    fn missing_response_column() {
        assert!(read_input("a,b\n1,2\n".as_bytes(), "response", &[]).is_err());
    }
}
