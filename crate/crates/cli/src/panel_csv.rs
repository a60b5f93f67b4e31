//! Panel file format: a long-format CSV with one row per observed cell.
//!
//! Two schemas are accepted:
//!
//! ```text
//! portfolio_id,year,defaults,obligors    # counts (preferred)
//! portfolio_id,year,default_rate         # plain rates
//! ```
//!
//! Missing cells are absent rows, never blank fields. Duplicate
//! (portfolio, year) rows are an error. The panel horizon spans the minimum
//! to the maximum year seen in the file; rows are canonicalized to
//! (portfolio, year) order when writing.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{CliError, CliResult};
use ttcpd_core::DefaultRatePanel;

enum Schema {
    Counts { defaults: usize, obligors: usize },
    Rate { rate: usize },
}

fn parse_header(headers: &csv::StringRecord) -> CliResult<(usize, usize, Schema)> {
    let names: Vec<String> = headers
        .iter()
        .map(|h| h.trim().to_ascii_lowercase())
        .collect();
    let find = |name: &str| names.iter().position(|n| n == name);
    let (pid, year) = match (find("portfolio_id"), find("year")) {
        (Some(p), Some(y)) => (p, y),
        _ => {
            return Err(CliError::Parse(
                "header must contain portfolio_id and year columns".into(),
            ))
        }
    };
    let schema = match (find("defaults"), find("obligors"), find("default_rate")) {
        (Some(d), Some(o), None) if names.len() == 4 => Schema::Counts {
            defaults: d,
            obligors: o,
        },
        (None, None, Some(r)) if names.len() == 3 => Schema::Rate { rate: r },
        _ => {
            return Err(CliError::Parse(format!(
                "header must be portfolio_id,year,defaults,obligors or \
                 portfolio_id,year,default_rate (got {})",
                names.join(",")
            )))
        }
    };
    Ok((pid, year, schema))
}

pub fn read_panel(path: &Path) -> CliResult<DefaultRatePanel> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => {
                CliError::Io(path.to_path_buf(), std::io::Error::other(e.to_string()))
            }
            _ => CliError::Parse(e.to_string()),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::Parse(e.to_string()))?
        .clone();
    let (pid_col, year_col, schema) = parse_header(&headers)?;

    // (id, year) -> (rate, obligors)
    let mut cells: BTreeMap<(String, i32), (f64, Option<u64>)> = BTreeMap::new();
    for (lineno, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Parse(e.to_string()))?;
        let row = lineno + 2; // header is line 1
        let id = record
            .get(pid_col)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| CliError::Parse(format!("row {row}: empty portfolio_id")))?
            .to_string();
        let year: i32 = record
            .get(year_col)
            .unwrap_or("")
            .parse()
            .map_err(|_| CliError::Parse(format!("row {row}: year must be an integer")))?;
        let (rate, obligors) = match &schema {
            Schema::Counts { defaults, obligors } => {
                let d: u64 = record.get(*defaults).unwrap_or("").parse().map_err(|_| {
                    CliError::Parse(format!(
                        "row {row}: defaults must be a non-negative integer"
                    ))
                })?;
                let n: u64 = record.get(*obligors).unwrap_or("").parse().map_err(|_| {
                    CliError::Parse(format!("row {row}: obligors must be a positive integer"))
                })?;
                if n == 0 {
                    return Err(CliError::Parse(format!("row {row}: obligors must be >= 1")));
                }
                if d > n {
                    return Err(CliError::Parse(format!(
                        "row {row}: defaults ({d}) exceed obligors ({n})"
                    )));
                }
                (d as f64 / n as f64, Some(n))
            }
            Schema::Rate { rate } => {
                let r: f64 = record.get(*rate).unwrap_or("").parse().map_err(|_| {
                    CliError::Parse(format!("row {row}: default_rate must be a number"))
                })?;
                if !r.is_finite() || !(0.0..=1.0).contains(&r) {
                    return Err(CliError::Parse(format!(
                        "row {row}: default_rate {r} outside [0,1]"
                    )));
                }
                (r, None)
            }
        };
        if cells.insert((id.clone(), year), (rate, obligors)).is_some() {
            return Err(CliError::Parse(format!(
                "duplicate row for portfolio {id:?}, year {year}"
            )));
        }
    }
    if cells.is_empty() {
        return Err(CliError::Parse("panel file has no data rows".into()));
    }

    let mut ids: Vec<String> = cells.keys().map(|(id, _)| id.clone()).collect();
    ids.sort();
    ids.dedup();
    let min_year = cells.keys().map(|(_, y)| *y).min().unwrap();
    let max_year = cells.keys().map(|(_, y)| *y).max().unwrap();
    let years: Vec<i32> = (min_year..=max_year).collect();
    let has_counts = matches!(schema, Schema::Counts { .. });

    let mut grid = vec![vec![None; years.len()]; ids.len()];
    let mut counts = vec![vec![None; years.len()]; ids.len()];
    for ((id, year), (rate, obligors)) in &cells {
        let i = ids.binary_search(id).unwrap();
        let t = (*year - min_year) as usize;
        grid[i][t] = Some(*rate);
        counts[i][t] = *obligors;
    }
    DefaultRatePanel::new(ids, years, grid, has_counts.then_some(counts))
        .map_err(|e| CliError::Parse(e.to_string()))
}

/// Render a panel in canonical (portfolio, year) order. Counts format when
/// obligor counts are available, rates otherwise.
pub fn panel_to_csv(panel: &DefaultRatePanel) -> String {
    let mut order: Vec<usize> = (0..panel.n_portfolios()).collect();
    order.sort_by(|&a, &b| panel.portfolio_ids()[a].cmp(&panel.portfolio_ids()[b]));
    let mut out = String::new();
    if panel.has_obligor_counts() {
        out.push_str("portfolio_id,year,defaults,obligors\n");
        for &i in &order {
            for (t, &year) in panel.years().iter().enumerate() {
                if let (Some(rate), Some(n)) = (panel.rate(i, t), panel.obligors(i, t)) {
                    let defaults = (rate * n as f64).round() as u64;
                    out.push_str(&format!(
                        "{},{},{},{}\n",
                        panel.portfolio_ids()[i],
                        year,
                        defaults,
                        n
                    ));
                }
            }
        }
    } else {
        out.push_str("portfolio_id,year,default_rate\n");
        for &i in &order {
            for (t, &year) in panel.years().iter().enumerate() {
                if let Some(rate) = panel.rate(i, t) {
                    out.push_str(&format!("{},{},{}\n", panel.portfolio_ids()[i], year, rate));
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn reads_counts_schema() {
        let f = write_tmp(
            "portfolio_id,year,defaults,obligors\nB,2002,5,100\nA,2001,1,50\nA,2002,0,50\n",
        );
        let panel = read_panel(f.path()).unwrap();
        assert_eq!(panel.portfolio_ids(), &["A".to_string(), "B".to_string()]);
        assert_eq!(panel.years(), &[2001, 2002]);
        assert_eq!(panel.rate(0, 0), Some(0.02));
        assert_eq!(panel.rate(0, 1), Some(0.0));
        assert_eq!(panel.rate(1, 0), None);
        assert_eq!(panel.obligors(1, 1), Some(100));
    }

    #[test]
    fn reads_rate_schema_and_detects_duplicates() {
        let f = write_tmp("portfolio_id,year,default_rate\nA,2001,0.02\nA,2001,0.03\n");
        let err = read_panel(f.path()).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn rejects_bad_values() {
        for body in [
            "portfolio_id,year,default_rate\nA,2001,1.5\n",
            "portfolio_id,year,default_rate\nA,x,0.01\n",
            "portfolio_id,year,defaults,obligors\nA,2001,5,0\n",
            "portfolio_id,year,defaults,obligors\nA,2001,50,10\n",
            "portfolio_id,year,rate\nA,2001,0.1\n",
        ] {
            let f = write_tmp(body);
            let err = read_panel(f.path()).unwrap_err();
            assert_eq!(err.exit_code(), 2, "accepted bad file: {body}");
        }
    }

    #[test]
    fn round_trip_is_canonical_and_stable() {
        let f = write_tmp(
            "portfolio_id,year,defaults,obligors\nB,2002,5,100\nA,2002,0,50\nA,2001,1,50\n",
        );
        let panel = read_panel(f.path()).unwrap();
        let rendered = panel_to_csv(&panel);
        let f2 = write_tmp(&rendered);
        let panel2 = read_panel(f2.path()).unwrap();
        assert_eq!(panel, panel2);
        assert_eq!(rendered, panel_to_csv(&panel2));
        // Canonical order: A rows before B rows, years ascending.
        let lines: Vec<&str> = rendered.lines().collect();
        assert_eq!(lines[1], "A,2001,1,50");
        assert_eq!(lines[2], "A,2002,0,50");
        assert_eq!(lines[3], "B,2002,5,100");
    }

    #[test]
    fn missing_middle_year_is_kept_in_horizon() {
        let f = write_tmp("portfolio_id,year,default_rate\nA,2001,0.02\nA,2003,0.04\n");
        let panel = read_panel(f.path()).unwrap();
        assert_eq!(panel.years(), &[2001, 2002, 2003]);
        assert_eq!(panel.rate(0, 1), None);
    }
}
