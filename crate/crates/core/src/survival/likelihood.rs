use nalgebra::{DMatrix, DVector};

use super::SurvivalDataset;
use crate::error::{FadsError, Result};

/// Largest admissible `|eta|` for a linear predictor.
pub const ETA_LIMIT: f64 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Factor,
    Covariate,
}

/// The regressors entering a linear predictor, one row per subject.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureAssembly {
    matrix: DMatrix<f64>,
    labels: Vec<ColumnKind>,
}

impl FeatureAssembly {
    pub fn new(matrix: DMatrix<f64>, labels: Vec<ColumnKind>) -> Result<Self> {
        if matrix.ncols() == 0 {
            return Err(FadsError::InvalidInput("feature assembly has no columns".into()));
        }
        if labels.len() != matrix.ncols() {
            return Err(FadsError::Dimension(format!(
                "{} labels for {} columns",
                labels.len(),
                matrix.ncols()
            )));
        }
        Ok(FeatureAssembly { matrix, labels })
    }

    /// Every column labelled as a covariate.
    pub fn covariates(matrix: DMatrix<f64>) -> Result<Self> {
        let q = matrix.ncols();
        Self::new(matrix, vec![ColumnKind::Covariate; q])
    }

    /// `[factors | nuisance]`, the design of the factor-adjusted fit.
    pub fn factor_adjusted(factors: &DMatrix<f64>, nuisance: &DMatrix<f64>) -> Result<Self> {
        if factors.nrows() != nuisance.nrows() {
            return Err(FadsError::Dimension(format!(
                "factor rows {} != nuisance rows {}",
                factors.nrows(),
                nuisance.nrows()
            )));
        }
        let (k, r) = (factors.ncols(), nuisance.ncols());
        let mut m = DMatrix::zeros(factors.nrows(), k + r);
        m.columns_mut(0, k).copy_from(factors);
        m.columns_mut(k, r).copy_from(nuisance);
        let mut labels = vec![ColumnKind::Factor; k];
        labels.extend(std::iter::repeat_n(ColumnKind::Covariate, r));
        Self::new(m, labels)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn labels(&self) -> &[ColumnKind] {
        &self.labels
    }

    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    /// 1 on covariate columns, 0 on factor columns.
    pub fn default_penalty_weights(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.ncols(),
            self.labels.iter().map(|l| match l {
                ColumnKind::Factor => 0.0,
                ColumnKind::Covariate => 1.0,
            }),
        )
    }
}

/// `Phi_k(t)` at every distinct event time.
#[derive(Debug, Clone)]
pub struct RiskSetAggregates {
    pub event_times: Vec<f64>,
    pub phi0: Vec<f64>,
    pub phi1: Vec<DVector<f64>>,
    pub phi2: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone, Copy)]
struct EventSlot {
    subject: usize,
    /// Size of the risk set `{j : Y_j >= Y_subject}`; the members are the first
    /// `at_risk` entries of the descending-time order.
    at_risk: usize,
}

/// Cox negative log partial likelihood `l(coefs)` over a fixed dataset and
/// feature assembly, with an optional fixed offset in the linear predictor.
///
/// Construction sorts the subjects once; evaluations at different
/// coefficient vectors reuse that ordering.
#[derive(Debug, Clone)]
pub struct PartialLikelihood {
    n: usize,
    raw: DMatrix<f64>,
    /// Columns centred by their sample mean. Risk-set centring cancels
    /// constant shifts, so all moment terms use this copy.
    centered: DMatrix<f64>,
    offset: Option<DVector<f64>>,
    order: Vec<usize>,
    slots: Vec<EventSlot>,
    times: Vec<f64>,
}

impl PartialLikelihood {
    pub fn new(data: &SurvivalDataset, features: &FeatureAssembly) -> Result<Self> {
        Self::from_matrix(data, features.matrix().clone())
    }

    pub(crate) fn from_matrix(data: &SurvivalDataset, raw: DMatrix<f64>) -> Result<Self> {
        let n = data.n();
        if raw.nrows() != n {
            return Err(FadsError::Dimension(format!(
                "feature rows {} != dataset rows {n}",
                raw.nrows()
            )));
        }
        if raw.ncols() == 0 {
            return Err(FadsError::InvalidInput("feature assembly has no columns".into()));
        }
        if data.event_count() == 0 {
            return Err(FadsError::NoEvents);
        }
        let times = data.times().to_vec();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| times[b].total_cmp(&times[a]).then(a.cmp(&b)));
        let mut slots: Vec<EventSlot> = (0..n)
            .filter(|&i| data.events()[i])
            .map(|i| EventSlot {
                subject: i,
                at_risk: order.partition_point(|&j| times[j] >= times[i]),
            })
            .collect();
        slots.sort_by(|a, b| a.at_risk.cmp(&b.at_risk).then(a.subject.cmp(&b.subject)));

        let mut centered = raw.clone();
        for mut col in centered.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
        Ok(PartialLikelihood {
            n,
            raw,
            centered,
            offset: None,
            order,
            slots,
            times,
        })
    }

    /// Adds a fixed term to every linear predictor: `eta_i = x_i'coefs + offset_i`.
    pub fn with_offset(mut self, offset: DVector<f64>) -> Result<Self> {
        if offset.len() != self.n {
            return Err(FadsError::Dimension(format!(
                "offset length {} != n {}",
                offset.len(),
                self.n
            )));
        }
        self.offset = Some(offset);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.raw.ncols()
    }

    pub fn event_count(&self) -> usize {
        self.slots.len()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.raw
    }

    pub fn linear_predictor(&self, coefs: &DVector<f64>) -> Result<DVector<f64>> {
        if coefs.len() != self.dim() {
            return Err(FadsError::Dimension(format!(
                "coefficient length {} != feature count {}",
                coefs.len(),
                self.dim()
            )));
        }
        let mut eta = &self.raw * coefs;
        if let Some(off) = &self.offset {
            eta += off;
        }
        if let Some((index, &value)) = eta
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && v.abs() <= ETA_LIMIT))
        {
            return Err(FadsError::Overflow {
                index,
                value,
                limit: ETA_LIMIT,
            });
        }
        Ok(eta)
    }

    /// Shifted weights `exp(eta - max eta)` and the shift.
    fn weights(&self, eta: &DVector<f64>) -> (DVector<f64>, f64) {
        let shift = eta.max();
        (eta.map(|e| (e - shift).exp()), shift)
    }

    /// Shifted risk-set sums `S0` per event slot.
    fn risk_sums(&self, w: &DVector<f64>) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.slots.len());
        let mut acc = 0.0;
        let mut k = 0;
        for slot in &self.slots {
            while k < slot.at_risk {
                acc += w[self.order[k]];
                k += 1;
            }
            out.push(acc);
        }
        out
    }

    /// Risk-set means of the centred features, one row per event slot.
    fn risk_means(&self, w: &DVector<f64>, s0: &[f64]) -> DMatrix<f64> {
        let mut means = DMatrix::zeros(self.slots.len(), self.dim());
        for (c, col) in self.centered.column_iter().enumerate() {
            let mut acc = 0.0;
            let mut k = 0;
            for (e, slot) in self.slots.iter().enumerate() {
                while k < slot.at_risk {
                    let j = self.order[k];
                    acc += w[j] * col[j];
                    k += 1;
                }
                means[(e, c)] = acc / s0[e];
            }
        }
        means
    }

    fn value_from(&self, eta: &DVector<f64>, s0: &[f64], shift: f64) -> f64 {
        let n = self.n as f64;
        let mut total = 0.0;
        for (slot, &s) in self.slots.iter().zip(s0) {
            total += s.ln() + shift - n.ln() - eta[slot.subject];
        }
        total / n
    }

    fn gradient_from(&self, means: &DMatrix<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim());
        for (e, slot) in self.slots.iter().enumerate() {
            for c in 0..self.dim() {
                g[c] -= self.centered[(slot.subject, c)] - means[(e, c)];
            }
        }
        g / self.n as f64
    }

    pub fn value(&self, coefs: &DVector<f64>) -> Result<f64> {
        let eta = self.linear_predictor(coefs)?;
        let (w, shift) = self.weights(&eta);
        let s0 = self.risk_sums(&w);
        Ok(self.value_from(&eta, &s0, shift))
    }

    pub fn gradient(&self, coefs: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.value_and_gradient(coefs)?.1)
    }

    pub fn value_and_gradient(&self, coefs: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let eta = self.linear_predictor(coefs)?;
        let (w, shift) = self.weights(&eta);
        let s0 = self.risk_sums(&w);
        let means = self.risk_means(&w, &s0);
        Ok((self.value_from(&eta, &s0, shift), self.gradient_from(&means)))
    }

    /// Pieces of the Hessian `(1/n)[X' D X - Xbar' Xbar]`: per-subject
    /// diagonal `D` and the risk-set means `Xbar`.
    fn hessian_parts(&self, coefs: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let eta = self.linear_predictor(coefs)?;
        let (w, _) = self.weights(&eta);
        let s0 = self.risk_sums(&w);
        let means = self.risk_means(&w, &s0);
        // Subject j at descending position k is at risk for every slot with
        // at_risk > k; accumulate 1/S0 over those slots.
        let mut d = DVector::zeros(self.n);
        let mut acc = 0.0;
        let mut e = self.slots.len();
        for k in (0..self.n).rev() {
            while e > 0 && self.slots[e - 1].at_risk > k {
                e -= 1;
                acc += 1.0 / s0[e];
            }
            let j = self.order[k];
            d[j] = w[j] * acc;
        }
        Ok((d, means))
    }

    pub fn hessian(&self, coefs: &DVector<f64>) -> Result<DMatrix<f64>> {
        let (d, means) = self.hessian_parts(coefs)?;
        let mut scaled = self.centered.clone();
        for mut col in scaled.column_iter_mut() {
            col.component_mul_assign(&d);
        }
        let mut h = self.centered.tr_mul(&scaled);
        h -= means.tr_mul(&means);
        h /= self.n as f64;
        // exact symmetry
        let h = (&h + h.transpose()) * 0.5;
        Ok(h)
    }

    pub fn hessian_block(
        &self,
        coefs: &DVector<f64>,
        rows: &[usize],
        cols: &[usize],
    ) -> Result<DMatrix<f64>> {
        if let Some(&bad) = rows.iter().chain(cols).find(|&&c| c >= self.dim()) {
            return Err(FadsError::Dimension(format!("column index {bad} out of range")));
        }
        let (d, means) = self.hessian_parts(coefs)?;
        let xr = self.centered.select_columns(rows);
        let mut xc = self.centered.select_columns(cols);
        for mut col in xc.column_iter_mut() {
            col.component_mul_assign(&d);
        }
        let mut h = xr.tr_mul(&xc);
        h -= means.select_columns(rows).tr_mul(&means.select_columns(cols));
        h /= self.n as f64;
        Ok(h)
    }

    /// Matrix-free Hessian restricted to `columns`.
    pub fn hessian_operator(
        &self,
        coefs: &DVector<f64>,
        columns: &[usize],
    ) -> Result<HessianOperator> {
        if let Some(&bad) = columns.iter().find(|&&c| c >= self.dim()) {
            return Err(FadsError::Dimension(format!("column index {bad} out of range")));
        }
        let (d, means) = self.hessian_parts(coefs)?;
        Ok(HessianOperator {
            x: self.centered.select_columns(columns),
            d,
            means: means.select_columns(columns),
            n: self.n as f64,
        })
    }

    pub fn aggregates(&self, coefs: &DVector<f64>, order: usize) -> Result<RiskSetAggregates> {
        if order > 2 {
            return Err(FadsError::InvalidInput(format!(
                "aggregate order must be 0, 1 or 2, got {order}"
            )));
        }
        let eta = self.linear_predictor(coefs)?;
        let q = self.dim();
        let n = self.n as f64;
        let mut out = RiskSetAggregates {
            event_times: Vec::new(),
            phi0: Vec::new(),
            phi1: Vec::new(),
            phi2: Vec::new(),
        };
        let mut s0 = 0.0;
        let mut s1 = DVector::zeros(if order >= 1 { q } else { 0 });
        let mut s2 = DMatrix::zeros(if order >= 2 { q } else { 0 }, if order >= 2 { q } else { 0 });
        let mut k = 0;
        for slot in &self.slots {
            let t = self.times[slot.subject];
            if out.event_times.last() == Some(&t) {
                continue;
            }
            while k < slot.at_risk {
                let j = self.order[k];
                let w = eta[j].exp();
                s0 += w;
                if order >= 1 {
                    let xj = self.raw.row(j).transpose();
                    s1.axpy(w, &xj, 1.0);
                    if order >= 2 {
                        s2.ger(w, &xj, &xj, 1.0);
                    }
                }
                k += 1;
            }
            out.event_times.push(t);
            out.phi0.push(s0 / n);
            if order >= 1 {
                out.phi1.push(&s1 / n);
            }
            if order >= 2 {
                out.phi2.push(&s2 / n);
            }
        }
        // slots run in descending time; report ascending
        out.event_times.reverse();
        out.phi0.reverse();
        out.phi1.reverse();
        out.phi2.reverse();
        Ok(out)
    }
}

/// `v -> H v` for a Hessian block, in `O(n q)` per product.
#[derive(Debug, Clone)]
pub struct HessianOperator {
    x: DMatrix<f64>,
    d: DVector<f64>,
    means: DMatrix<f64>,
    n: f64,
}

impl HessianOperator {
    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let xv = (&self.x * v).component_mul(&self.d);
        let mv = &self.means * v;
        (self.x.tr_mul(&xv) - self.means.tr_mul(&mv)) / self.n
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut scaled = self.x.clone();
        for mut col in scaled.column_iter_mut() {
            col.component_mul_assign(&self.d);
        }
        let h = (self.x.tr_mul(&scaled) - self.means.tr_mul(&self.means)) / self.n;
        (&h + h.transpose()) * 0.5
    }
}

pub fn riskset_aggregates(
    data: &SurvivalDataset,
    features: &FeatureAssembly,
    coefs: &DVector<f64>,
    order: usize,
) -> Result<RiskSetAggregates> {
    PartialLikelihood::new(data, features)?.aggregates(coefs, order)
}

pub fn neg_log_partial_likelihood(
    data: &SurvivalDataset,
    features: &FeatureAssembly,
    coefs: &DVector<f64>,
) -> Result<f64> {
    PartialLikelihood::new(data, features)?.value(coefs)
}

/// Gradient of [`neg_log_partial_likelihood`].
pub fn score(
    data: &SurvivalDataset,
    features: &FeatureAssembly,
    coefs: &DVector<f64>,
) -> Result<DVector<f64>> {
    PartialLikelihood::new(data, features)?.gradient(coefs)
}

pub fn hessian_block(
    data: &SurvivalDataset,
    features: &FeatureAssembly,
    coefs: &DVector<f64>,
    rows: &[usize],
    cols: &[usize],
) -> Result<DMatrix<f64>> {
    PartialLikelihood::new(data, features)?.hessian_block(coefs, rows, cols)
}
