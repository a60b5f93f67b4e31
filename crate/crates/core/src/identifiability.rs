//! Missing-data identifiability analysis.
//!
//! The authoritative test is the numerical rank of the design matrix with
//! its constraint row. A bipartite observation graph (portfolios and years
//! as vertices, one edge per observed cell) provides human-readable
//! diagnostics: disconnected portfolio groups are the classic unidentifiable
//! pattern, an overlapping chain covering every year the classic
//! identifiable one. The graph never overrides the rank test; when the two
//! disagree a note is recorded.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linear::{DesignRow, DesignSystem, RANK_RTOL};
use crate::model::FactorPath;

/// Boolean observation pattern of a panel: `true` where d_{i,t} is observed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AvailabilityMask {
    grid: Vec<Vec<bool>>,
}

impl AvailabilityMask {
    pub fn from_grid(grid: Vec<Vec<bool>>) -> Result<Self> {
        if grid.is_empty() || grid[0].is_empty() {
            return Err(Error::Invalid(
                "mask must have at least one row and column".into(),
            ));
        }
        let width = grid[0].len();
        if grid.iter().any(|row| row.len() != width) {
            return Err(Error::Invalid(
                "mask rows must all have the same length".into(),
            ));
        }
        if !grid.iter().flatten().any(|&b| b) {
            return Err(Error::Invalid("mask has no observed cells".into()));
        }
        Ok(Self { grid })
    }

    /// Fully observed mask.
    pub fn complete(n_portfolios: usize, n_years: usize) -> Self {
        Self {
            grid: vec![vec![true; n_years]; n_portfolios],
        }
    }

    pub fn from_panel(panel: &crate::model::DefaultRatePanel) -> Self {
        let grid = (0..panel.n_portfolios())
            .map(|i| {
                (0..panel.n_years())
                    .map(|t| panel.is_observed(i, t))
                    .collect()
            })
            .collect();
        Self { grid }
    }

    /// Parse the textual grid format: one line per portfolio, one `0`/`1`
    /// character per year; blank lines and `#` comments are skipped.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut grid = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row: Result<Vec<bool>> = line
                .chars()
                .map(|c| match c {
                    '1' => Ok(true),
                    '0' => Ok(false),
                    other => Err(Error::Invalid(format!(
                        "mask line {}: unexpected character {other:?}",
                        lineno + 1
                    ))),
                })
                .collect();
            grid.push(row?);
        }
        Self::from_grid(grid)
    }

    /// Render as the textual grid format accepted by [`AvailabilityMask::from_text`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for row in &self.grid {
            for &b in row {
                out.push(if b { '1' } else { '0' });
            }
            out.push('\n');
        }
        out
    }

    pub fn n_portfolios(&self) -> usize {
        self.grid.len()
    }

    pub fn n_years(&self) -> usize {
        self.grid[0].len()
    }

    pub fn is_observed(&self, portfolio: usize, year: usize) -> bool {
        self.grid[portfolio][year]
    }

    pub fn observed_count(&self) -> usize {
        self.grid.iter().flatten().filter(|&&b| b).count()
    }

    pub fn observed_years(&self, portfolio: usize) -> Vec<usize> {
        (0..self.n_years())
            .filter(|&t| self.grid[portfolio][t])
            .collect()
    }
}

/// One connected component of the observation graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphComponent {
    pub portfolios: Vec<usize>,
    pub years: Vec<usize>,
}

/// Outcome of the identifiability analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityReport {
    pub identifiable: bool,
    /// Numerical rank of the design matrix including the constraint row.
    pub numerical_rank: usize,
    /// Columns minus rank; zero exactly when identifiable.
    pub deficiency: usize,
    /// Partition of portfolios and years into connected components of the
    /// observation graph (singleton components are unobserved years or
    /// empty portfolios).
    pub components: Vec<GraphComponent>,
    pub unobserved_years: Vec<usize>,
    pub notes: Vec<String>,
    pub n_portfolios: usize,
    pub n_years: usize,
}

impl IdentifiabilityReport {
    pub fn n_columns(&self) -> usize {
        self.n_portfolios + self.n_years
    }

    pub(crate) fn summary_suffix(&self) -> String {
        let groups = self
            .components
            .iter()
            .filter(|c| !c.portfolios.is_empty())
            .count();
        if groups > 1 {
            format!("; {groups} disconnected observation groups")
        } else {
            String::new()
        }
    }
}

fn graph_components(mask: &AvailabilityMask) -> Vec<GraphComponent> {
    let n_p = mask.n_portfolios();
    let n_t = mask.n_years();
    let n = n_p + n_t; // portfolio vertices first, then year vertices
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    for start in 0..n {
        if label[start] != usize::MAX {
            continue;
        }
        let mut queue = vec![start];
        label[start] = next;
        while let Some(v) = queue.pop() {
            if v < n_p {
                for t in 0..n_t {
                    if mask.is_observed(v, t) && label[n_p + t] == usize::MAX {
                        label[n_p + t] = next;
                        queue.push(n_p + t);
                    }
                }
            } else {
                let t = v - n_p;
                for i in (0..n_p).filter(|&i| mask.is_observed(i, t)) {
                    if label[i] == usize::MAX {
                        label[i] = next;
                        queue.push(i);
                    }
                }
            }
        }
        next += 1;
    }
    let mut components = vec![
        GraphComponent {
            portfolios: vec![],
            years: vec![]
        };
        next
    ];
    for (v, &c) in label.iter().enumerate() {
        if v < n_p {
            components[c].portfolios.push(v);
        } else {
            components[c].years.push(v - n_p);
        }
    }
    components
}

/// Decide whether the observation pattern pins down unique parameters.
///
/// `rho` supplies the per-portfolio correlations entering the design matrix;
/// its length must match the mask.
pub fn check_identifiability(mask: &AvailabilityMask, rho: &[f64]) -> IdentifiabilityReport {
    assert_eq!(
        rho.len(),
        mask.n_portfolios(),
        "one correlation per portfolio is required"
    );
    let n_p = mask.n_portfolios();
    let n_t = mask.n_years();

    // Rank of the full design matrix (constraint row included). The eta
    // right-hand side plays no role in the rank.
    let rows: Vec<DesignRow> = (0..n_p)
        .flat_map(|i| {
            (0..n_t)
                .filter(move |&t| mask.is_observed(i, t))
                .map(move |t| DesignRow {
                    portfolio: i,
                    year: t,
                    rho_sqrt: rho[i].sqrt(),
                    eta: 0.0,
                    weight: 1.0,
                })
        })
        .collect();
    let system = DesignSystem {
        n_portfolios: n_p,
        n_years: n_t,
        alpha_mean: 0.0,
        rows,
        clamp_warnings: vec![],
    };
    let full = system.full_matrix();
    let svd = full.svd(false, false);
    let sigma_max = svd.singular_values.max();
    let numerical_rank = if sigma_max > 0.0 {
        svd.rank(RANK_RTOL * sigma_max)
    } else {
        0
    };
    let deficiency = (n_p + n_t).saturating_sub(numerical_rank);
    let identifiable = deficiency == 0;

    let components = graph_components(mask);
    let unobserved_years: Vec<usize> = (0..n_t)
        .filter(|&t| (0..n_p).all(|i| !mask.is_observed(i, t)))
        .collect();
    let empty_portfolios: Vec<usize> = (0..n_p)
        .filter(|&i| mask.observed_years(i).is_empty())
        .collect();

    let mut notes = Vec::new();
    let portfolio_groups = components
        .iter()
        .filter(|c| !c.portfolios.is_empty())
        .count();

    // Advisory graph claim; None when the graph alone cannot decide.
    let claim: Option<bool> = if !empty_portfolios.is_empty() {
        notes.push(format!(
            "portfolios with no observations: {empty_portfolios:?}"
        ));
        Some(false)
    } else if portfolio_groups > 1 {
        notes.push(format!(
            "observation graph splits into {portfolio_groups} disjoint portfolio groups; \
             their factor levels cannot be compared"
        ));
        Some(false)
    } else if unobserved_years.is_empty() {
        notes.push("observation graph is connected and covers every year".into());
        Some(true)
    } else {
        notes.push(format!(
            "years with no observations: {unobserved_years:?}; the mean constraint can pin \
             at most one degree of freedom, rank test decides"
        ));
        None
    };
    if let Some(c) = claim {
        if c != identifiable {
            notes.push(
                "graph heuristic disagrees with the rank test; the rank test is authoritative"
                    .into(),
            );
        }
    }

    IdentifiabilityReport {
        identifiable,
        numerical_rank,
        deficiency,
        components,
        unobserved_years,
        notes,
        n_portfolios: n_p,
        n_years: n_t,
    }
}

/// Mean of the factor path over one portfolio's observed years.
///
/// This is the boom/recession diagnostic: a positive value means the
/// portfolio was only seen in better-than-average years, so its fitted TTC
/// level sits above the mean of its observed transformed rates.
pub fn observed_factor_mean(
    mask: &AvailabilityMask,
    factor: &FactorPath,
    portfolio: usize,
) -> Result<f64> {
    if factor.len() != mask.n_years() {
        return Err(Error::Invalid(format!(
            "factor path has {} years but mask has {}",
            factor.len(),
            mask.n_years()
        )));
    }
    if portfolio >= mask.n_portfolios() {
        return Err(Error::Invalid(format!(
            "portfolio index {portfolio} out of range"
        )));
    }
    let years = mask.observed_years(portfolio);
    if years.is_empty() {
        return Err(Error::EmptyPortfolio(format!("#{portfolio}")));
    }
    Ok(years.iter().map(|&t| factor.values[t]).sum::<f64>() / years.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complete_mask_is_identifiable() {
        let mask = AvailabilityMask::complete(3, 5);
        let report = check_identifiability(&mask, &[0.2, 0.15, 0.1]);
        assert!(report.identifiable);
        assert_eq!(report.deficiency, 0);
        assert_eq!(report.numerical_rank, 8);
        assert_eq!(report.components.len(), 1);
        assert!(report.unobserved_years.is_empty());
    }

    #[test]
    fn block_disjoint_mask_is_unidentifiable() {
        // Portfolios {0} observed only in years {0,1}; portfolio {1} only in
        // years {2,3}.
        let mask = AvailabilityMask::from_grid(vec![
            vec![true, true, false, false],
            vec![false, false, true, true],
        ])
        .unwrap();
        let report = check_identifiability(&mask, &[0.2, 0.2]);
        assert!(!report.identifiable);
        assert_eq!(report.deficiency, 1);
        let groups = report
            .components
            .iter()
            .filter(|c| !c.portfolios.is_empty())
            .count();
        assert_eq!(groups, 2);
    }

    #[test]
    fn overlapping_chain_is_identifiable() {
        let mask = AvailabilityMask::from_grid(vec![
            vec![true, true, true, false, false, false],
            vec![false, false, true, true, true, false],
            vec![false, false, false, false, true, true],
        ])
        .unwrap();
        let report = check_identifiability(&mask, &[0.2, 0.15, 0.1]);
        assert!(report.identifiable);
        assert_eq!(report.deficiency, 0);
    }

    #[test]
    fn unobserved_year_leaves_one_free_direction() {
        // A year nobody observes cannot be pinned by the rows; the
        // constraint absorbs the overall shift instead, so one degree of
        // freedom remains and the rank test flags it.
        let mask = AvailabilityMask::from_grid(vec![
            vec![true, true, false, true],
            vec![true, true, false, true],
        ])
        .unwrap();
        let report = check_identifiability(&mask, &[0.2, 0.15]);
        assert_eq!(report.unobserved_years, vec![2]);
        assert!(!report.identifiable);
        assert_eq!(report.deficiency, 1);
        // The heuristic makes no claim here, so no disagreement note.
        assert!(report.notes.iter().all(|n| !n.contains("disagrees")));
    }

    #[test]
    fn removing_rows_never_increases_rank() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        let rho = [0.2, 0.15, 0.1, 0.25];
        for _ in 0..20 {
            let mut grid = vec![vec![true; 6]; 4];
            let full_rank =
                check_identifiability(&AvailabilityMask::from_grid(grid.clone()).unwrap(), &rho)
                    .numerical_rank;
            let mut prev = full_rank;
            // Peel off random cells one at a time.
            for _ in 0..10 {
                let i = rng.gen_range(0..4);
                let t = rng.gen_range(0..6);
                grid[i][t] = false;
                if !grid.iter().flatten().any(|&b| b) {
                    break;
                }
                let rank = check_identifiability(
                    &AvailabilityMask::from_grid(grid.clone()).unwrap(),
                    &rho,
                )
                .numerical_rank;
                assert!(rank <= prev, "rank increased after removing a row");
                prev = rank;
            }
        }
    }

    #[test]
    fn observed_factor_mean_cases() {
        let factor = FactorPath::new(vec![1.0, -1.0, 2.0, -2.0]);
        let full = AvailabilityMask::complete(2, 4);
        assert!(observed_factor_mean(&full, &factor, 0).unwrap().abs() < 1e-15);

        let partial = AvailabilityMask::from_grid(vec![
            vec![true, false, true, false], // f = 1, 2 -> mean 1.5
            vec![false, true, false, false],
        ])
        .unwrap();
        assert!((observed_factor_mean(&partial, &factor, 0).unwrap() - 1.5).abs() < 1e-15);
        assert!((observed_factor_mean(&partial, &factor, 1).unwrap() - (-1.0)).abs() < 1e-15);

        let with_empty = AvailabilityMask::from_grid(vec![
            vec![true, true, true, true],
            vec![false, false, false, false],
        ])
        .unwrap();
        assert!(matches!(
            observed_factor_mean(&with_empty, &factor, 1),
            Err(Error::EmptyPortfolio(_))
        ));
    }

    #[test]
    fn mask_text_round_trip() {
        let text = "# comment\n110\n011\n";
        let mask = AvailabilityMask::from_text(text).unwrap();
        assert_eq!(mask.n_portfolios(), 2);
        assert_eq!(mask.n_years(), 3);
        assert!(mask.is_observed(0, 0));
        assert!(!mask.is_observed(0, 2));
        let back = AvailabilityMask::from_text(&mask.to_text()).unwrap();
        assert_eq!(mask, back);
        assert!(AvailabilityMask::from_text("10\n2\n").is_err());
        assert!(AvailabilityMask::from_text("10\n011\n").is_err());
    }

    #[test]
    fn empty_portfolio_noted() {
        let mask =
            AvailabilityMask::from_grid(vec![vec![true, true, true], vec![false, false, false]])
                .unwrap();
        let report = check_identifiability(&mask, &[0.2, 0.2]);
        assert!(!report.identifiable);
        assert!(report.notes.iter().any(|n| n.contains("no observations")));
    }
}
