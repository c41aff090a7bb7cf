use std::ops::Range;

use nalgebra::DMatrix;

use crate::error::{FadsError, Result};

/// A named block of contiguous covariate columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Group {
    pub id: String,
    pub columns: Range<usize>,
}

impl Group {
    pub fn new(id: impl Into<String>, columns: Range<usize>) -> Self {
        Group {
            id: id.into(),
            columns,
        }
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }
}

/// Right-censored survival data with a grouped covariate matrix.
///
/// Rows are subjects. Observed times are strictly positive and finite, the
/// groups tile `[0, p)` in order, and (unless built with
/// [`SurvivalDataset::new_allowing_ties`]) no two events share a time.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalDataset {
    times: Vec<f64>,
    events: Vec<bool>,
    covariates: DMatrix<f64>,
    groups: Vec<Group>,
}

impl SurvivalDataset {
    pub fn new(
        times: Vec<f64>,
        events: Vec<bool>,
        covariates: DMatrix<f64>,
        groups: Vec<Group>,
    ) -> Result<Self> {
        let data = Self::new_allowing_ties(times, events, covariates, groups)?;
        if let Some((first, second)) = data.first_tied_events() {
            return Err(FadsError::TiedEvents {
                first,
                second,
                time: data.times[first],
            });
        }
        Ok(data)
    }

    /// Same checks as [`SurvivalDataset::new`] except tied event times are
    /// kept. Ties are then handled with the Breslow convention: every event at
    /// time `t` sees the full risk set `{j : Y_j >= t}`.
    pub fn new_allowing_ties(
        times: Vec<f64>,
        events: Vec<bool>,
        covariates: DMatrix<f64>,
        groups: Vec<Group>,
    ) -> Result<Self> {
        let n = times.len();
        if events.len() != n || covariates.nrows() != n {
            return Err(FadsError::Dimension(format!(
                "times has {n} entries, events {}, covariate rows {}",
                events.len(),
                covariates.nrows()
            )));
        }
        if n == 0 {
            return Err(FadsError::InvalidInput("dataset has no subjects".into()));
        }
        if let Some((i, t)) = times
            .iter()
            .enumerate()
            .find(|(_, t)| !(t.is_finite() && **t > 0.0))
        {
            return Err(FadsError::InvalidInput(format!(
                "time at row {i} must be positive and finite, got {t}"
            )));
        }
        if let Some(i) = covariates.iter().position(|v| !v.is_finite()) {
            return Err(FadsError::InvalidInput(format!(
                "non-finite covariate at row {}, column {}",
                i % n,
                i / n
            )));
        }
        check_groups(&groups, covariates.ncols())?;
        Ok(SurvivalDataset {
            times,
            events,
            covariates,
            groups,
        })
    }

    /// Dataset with a single group `"all"` spanning every column.
    pub fn ungrouped(times: Vec<f64>, events: Vec<bool>, covariates: DMatrix<f64>) -> Result<Self> {
        let p = covariates.ncols();
        Self::new(times, events, covariates, vec![Group::new("all", 0..p)])
    }

    fn first_tied_events(&self) -> Option<(usize, usize)> {
        let mut idx: Vec<usize> = (0..self.n()).filter(|&i| self.events[i]).collect();
        idx.sort_by(|&a, &b| self.times[a].total_cmp(&self.times[b]).then(a.cmp(&b)));
        idx.windows(2)
            .find(|w| self.times[w[0]] == self.times[w[1]])
            .map(|w| (w[0].min(w[1]), w[0].max(w[1])))
    }

    pub fn n(&self) -> usize {
        self.times.len()
    }

    pub fn p(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn events(&self) -> &[bool] {
        &self.events
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn group(&self, id: &str) -> Option<&Group> {
        self.groups.iter().find(|g| g.id == id)
    }

    pub fn event_count(&self) -> usize {
        self.events.iter().filter(|&&d| d).count()
    }

    pub fn censoring_rate(&self) -> f64 {
        1.0 - self.event_count() as f64 / self.n() as f64
    }

    fn require_group(&self, id: &str) -> Result<&Group> {
        self.group(id)
            .ok_or_else(|| FadsError::InvalidInput(format!("unknown group `{id}`")))
    }

    /// Columns of group `id` (the `X_m` block).
    pub fn group_matrix(&self, id: &str) -> Result<DMatrix<f64>> {
        let g = self.require_group(id)?;
        Ok(self.covariates.columns(g.columns.start, g.len()).into_owned())
    }

    /// Column indices outside group `id`, in dataset order.
    pub fn complement_columns(&self, id: &str) -> Result<Vec<usize>> {
        let g = self.require_group(id)?;
        Ok((0..self.p()).filter(|j| !g.columns.contains(j)).collect())
    }

    /// All columns outside group `id` (the `X_{-m}` block).
    pub fn complement_matrix(&self, id: &str) -> Result<DMatrix<f64>> {
        let cols = self.complement_columns(id)?;
        Ok(self.covariates.select_columns(&cols))
    }

    /// Rows `rows` as a new dataset, keeping the group layout.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.n()) {
            return Err(FadsError::Dimension(format!("row {bad} out of range")));
        }
        Self::new_allowing_ties(
            rows.iter().map(|&r| self.times[r]).collect(),
            rows.iter().map(|&r| self.events[r]).collect(),
            self.covariates.select_rows(rows),
            self.groups.clone(),
        )
    }
}

fn check_groups(groups: &[Group], p: usize) -> Result<()> {
    if groups.is_empty() {
        return Err(FadsError::InvalidInput("at least one group is required".into()));
    }
    let mut next = 0;
    for g in groups {
        if g.is_empty() {
            return Err(FadsError::InvalidInput(format!("group `{}` is empty", g.id)));
        }
        if g.columns.start != next {
            return Err(FadsError::InvalidInput(format!(
                "group `{}` starts at column {} but column {next} is the next uncovered one",
                g.id, g.columns.start
            )));
        }
        next = g.columns.end;
    }
    if next != p {
        return Err(FadsError::InvalidInput(format!(
            "groups cover {next} columns but the matrix has {p}"
        )));
    }
    for (i, a) in groups.iter().enumerate() {
        if groups[i + 1..].iter().any(|b| b.id == a.id) {
            return Err(FadsError::InvalidInput(format!("duplicate group id `{}`", a.id)));
        }
    }
    Ok(())
}

/// Breaks ties among event times by adding `1e-9 * rank` to the later
/// members of each tied run (rank 0 keeps its time). Returns the number of
/// times that were moved.
pub fn break_ties(times: &mut [f64], events: &[bool]) -> usize {
    const JITTER: f64 = 1e-9;
    let mut moved = 0;
    loop {
        let mut idx: Vec<usize> = (0..times.len()).filter(|&i| events[i]).collect();
        idx.sort_by(|&a, &b| times[a].total_cmp(&times[b]).then(a.cmp(&b)));
        let mut changed = false;
        let mut start = 0;
        while start < idx.len() {
            let mut end = start + 1;
            while end < idx.len() && times[idx[end]] == times[idx[start]] {
                end += 1;
            }
            for (rank, &i) in idx[start..end].iter().enumerate().skip(1) {
                times[i] += JITTER * rank as f64;
                moved += 1;
                changed = true;
            }
            start = end;
        }
        if !changed {
            return moved;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x(n: usize, p: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, p, |i, j| (i * p + j) as f64 * 0.1)
    }

    #[test]
    fn rejects_tied_events_naming_both_rows() {
        let err = SurvivalDataset::ungrouped(
            vec![1.0, 2.0, 1.0],
            vec![true, false, true],
            x(3, 2),
        )
        .unwrap_err();
        match err {
            FadsError::TiedEvents { first, second, .. } => assert_eq!((first, second), (0, 2)),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn censored_ties_are_fine() {
        let d = SurvivalDataset::ungrouped(vec![1.0, 1.0, 1.0], vec![true, false, false], x(3, 2));
        assert!(d.is_ok());
    }

    #[test]
    fn rejects_bad_times_and_groups() {
        assert!(SurvivalDataset::ungrouped(vec![0.0, 1.0], vec![true, true], x(2, 1)).is_err());
        assert!(SurvivalDataset::ungrouped(vec![f64::NAN, 1.0], vec![true, true], x(2, 1)).is_err());
        let gaps = vec![Group::new("a", 0..1), Group::new("b", 2..3)];
        assert!(SurvivalDataset::new(vec![1.0, 2.0], vec![true, true], x(2, 3), gaps).is_err());
        let short = vec![Group::new("a", 0..2)];
        assert!(SurvivalDataset::new(vec![1.0, 2.0], vec![true, true], x(2, 3), short).is_err());
        let dup = vec![Group::new("a", 0..1), Group::new("a", 1..3)];
        assert!(SurvivalDataset::new(vec![1.0, 2.0], vec![true, true], x(2, 3), dup).is_err());
    }

    #[test]
    fn group_blocks() {
        let groups = vec![Group::new("a", 0..2), Group::new("b", 2..5)];
        let d = SurvivalDataset::new(vec![1.0, 2.0], vec![true, false], x(2, 5), groups).unwrap();
        assert_eq!(d.group_matrix("a").unwrap().ncols(), 2);
        assert_eq!(d.complement_columns("a").unwrap(), vec![2, 3, 4]);
        assert_eq!(d.complement_matrix("b").unwrap()[(1, 1)], d.covariates()[(1, 1)]);
        assert!(d.group_matrix("zzz").is_err());
        assert_eq!(d.event_count(), 1);
        assert!((d.censoring_rate() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn break_ties_makes_dataset_valid() {
        let mut t = vec![1.0, 1.0, 1.0, 2.0, 1.0];
        let e = vec![true, true, true, true, false];
        let moved = break_ties(&mut t, &e);
        assert_eq!(moved, 2);
        assert_eq!(t[0], 1.0);
        assert!((t[1] - 1.0 - 1e-9).abs() < 1e-15);
        assert!((t[2] - 1.0 - 2e-9).abs() < 1e-15);
        assert_eq!(t[4], 1.0);
        assert!(SurvivalDataset::ungrouped(t, e, x(5, 1)).is_ok());
    }
}
