//! Regression designs over categorical factors and numeric covariates.
//!
//! Factor columns are one-hot with the declared reference level dropped, and
//! each row stores only its active column indices, so high-cardinality
//! location factors stay cheap. Rows are kept in a canonical sort order and
//! cross products are reduced chunk-by-chunk in that order, which makes every
//! fit bit-identical under permutation of the input rows.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// A categorical predictor; `levels[0]` is the reference and is dropped from
/// the design.
#[derive(Debug, Clone, serde::Serialize)]
pub struct Factor {
    pub name: String,
    pub levels: Vec<String>,
}

impl Factor {
    pub fn level_index(&self, level: &str) -> Option<u32> {
        self.levels.iter().position(|l| l == level).map(|i| i as u32)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct DesignRow {
    pub levels: Vec<u32>,
    pub covs: Vec<f64>,
    pub response: f64,
    pub weight: f64,
    pub offset: f64,
    pub src_idx: usize,
}

/// One term of the fitted linear predictor, in column order.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub enum Term {
    Intercept,
    FactorLevel { factor: String, level: String },
    Covariate { name: String },
}

impl Term {
    pub fn name(&self) -> String {
        match self {
            Term::Intercept => "(Intercept)".to_string(),
            Term::FactorLevel { factor, level } => format!("{factor}={level}"),
            Term::Covariate { name } => name.clone(),
        }
    }
}

/// An immutable, canonically ordered design ready for fitting.
#[derive(Debug, Clone)]
pub struct Design {
    pub(crate) factors: Vec<Factor>,
    pub(crate) covariate_names: Vec<String>,
    pub(crate) rows: Vec<DesignRow>,
    pub(crate) has_offset: bool,
    /// column offset of each factor's first dummy (level 1)
    pub(crate) factor_col_start: Vec<usize>,
    pub(crate) covariate_col_start: usize,
    pub(crate) n_cols: usize,
}

pub struct DesignBuilder {
    factors: Vec<Factor>,
    covariate_names: Vec<String>,
    rows: Vec<DesignRow>,
    has_offset: bool,
}

impl Design {
    pub fn builder() -> DesignBuilder {
        DesignBuilder { factors: Vec::new(), covariate_names: Vec::new(), rows: Vec::new(), has_offset: false }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    /// Total observation count (sum of replication weights).
    pub fn n_obs(&self) -> f64 {
        self.rows.iter().map(|r| r.weight).sum()
    }

    pub fn has_offset(&self) -> bool {
        self.has_offset
    }

    pub fn factors(&self) -> &[Factor] {
        self.factors.as_slice()
    }

    /// Column terms in design order.
    pub fn terms(&self) -> Vec<Term> {
        let mut terms = vec![Term::Intercept];
        for f in &self.factors {
            for level in f.levels.iter().skip(1) {
                terms.push(Term::FactorLevel { factor: f.name.clone(), level: level.clone() });
            }
        }
        for name in &self.covariate_names {
            terms.push(Term::Covariate { name: name.clone() });
        }
        terms
    }

    /// Active (column, value) pairs of a row, intercept first.
    pub(crate) fn active_cols<'a>(&self, row: &'a DesignRow, out: &mut Vec<(usize, f64)>) {
        out.clear();
        out.push((0, 1.0));
        for (fi, &lv) in row.levels.iter().enumerate() {
            if lv > 0 {
                out.push((self.factor_col_start[fi] + lv as usize - 1, 1.0));
            }
        }
        for (ci, &v) in row.covs.iter().enumerate() {
            out.push((self.covariate_col_start + ci, v));
        }
    }

    pub(crate) fn linear_predictor(&self, row: &DesignRow, beta: &DVector<f64>) -> f64 {
        let mut eta = beta[0] + row.offset;
        for (fi, &lv) in row.levels.iter().enumerate() {
            if lv > 0 {
                eta += beta[self.factor_col_start[fi] + lv as usize - 1];
            }
        }
        for (ci, &v) in row.covs.iter().enumerate() {
            eta += beta[self.covariate_col_start + ci] * v;
        }
        eta
    }

    /// Accumulate `X'WX` and `X'r` over all rows.
    ///
    /// `per_row` maps a row and its linear predictor to `(w, r)`. Rows are
    /// processed in fixed-size chunks that are combined in chunk order, so the
    /// reduction is deterministic regardless of thread scheduling.
    pub(crate) fn weighted_cross_products(
        &self,
        beta: &DVector<f64>,
        per_row: impl Fn(&DesignRow, f64) -> (f64, f64) + Sync,
    ) -> (DMatrix<f64>, DVector<f64>) {
        const CHUNK: usize = 8192;
        let p = self.n_cols;
        let partials: Vec<(DMatrix<f64>, DVector<f64>)> = self
            .rows
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut xtwx = DMatrix::zeros(p, p);
                let mut xtr = DVector::zeros(p);
                let mut active = Vec::with_capacity(8);
                for row in chunk {
                    let eta = self.linear_predictor(row, beta);
                    let (w, r) = per_row(row, eta);
                    self.active_cols(row, &mut active);
                    for &(i, xi) in &active {
                        xtr[i] += r * xi;
                        for &(j, xj) in &active {
                            if j >= i {
                                xtwx[(i, j)] += w * xi * xj;
                            }
                        }
                    }
                }
                (xtwx, xtr)
            })
            .collect();

        let mut xtwx = DMatrix::zeros(p, p);
        let mut xtr = DVector::zeros(p);
        for (m, v) in partials {
            xtwx += m;
            xtr += v;
        }
        // mirror the upper triangle
        for i in 0..p {
            for j in 0..i {
                xtwx[(i, j)] = xtwx[(j, i)];
            }
        }
        (xtwx, xtr)
    }

    /// Fold `f` over rows sequentially in canonical order.
    pub(crate) fn fold_rows<T>(&self, init: T, mut f: impl FnMut(T, &DesignRow, f64) -> T, beta: &DVector<f64>) -> T {
        let mut acc = init;
        for row in &self.rows {
            let eta = self.linear_predictor(row, beta);
            acc = f(acc, row, eta);
        }
        acc
    }
}

impl DesignBuilder {
    /// Declare a factor; the first level is the reference.
    pub fn factor(&mut self, name: impl Into<String>, levels: impl IntoIterator<Item = impl Into<String>>) -> &mut Self {
        let levels: Vec<String> = levels.into_iter().map(Into::into).collect();
        self.factors.push(Factor { name: name.into(), levels });
        self
    }

    pub fn covariate(&mut self, name: impl Into<String>) -> &mut Self {
        self.covariate_names.push(name.into());
        self
    }

    pub fn with_offset(&mut self) -> &mut Self {
        self.has_offset = true;
        self
    }

    /// Append a row by factor level indices.
    pub fn push_row_idx(
        &mut self,
        levels: &[u32],
        covs: &[f64],
        response: f64,
        weight: f64,
        offset: f64,
    ) -> Result<&mut Self> {
        if levels.len() != self.factors.len() {
            return Err(Error::validation(format!(
                "row has {} factor levels, design declares {}",
                levels.len(),
                self.factors.len()
            )));
        }
        for (fi, &lv) in levels.iter().enumerate() {
            if lv as usize >= self.factors[fi].levels.len() {
                return Err(Error::validation(format!(
                    "level index {lv} out of range for factor {}",
                    self.factors[fi].name
                )));
            }
        }
        if covs.len() != self.covariate_names.len() {
            return Err(Error::validation("covariate count mismatch".to_string()));
        }
        if weight < 1.0 {
            return Err(Error::validation(format!("weights must be >= 1, got {weight}")));
        }
        if !self.has_offset && offset != 0.0 {
            return Err(Error::validation("offset supplied but design has no offset".to_string()));
        }
        let src_idx = self.rows.len();
        self.rows.push(DesignRow {
            levels: levels.to_vec(),
            covs: covs.to_vec(),
            response,
            weight,
            offset,
            src_idx,
        });
        Ok(self)
    }

    /// Append a row by factor level names.
    pub fn push_row(
        &mut self,
        levels: &[&str],
        covs: &[f64],
        response: f64,
        weight: f64,
        offset: f64,
    ) -> Result<&mut Self> {
        let mut idx = Vec::with_capacity(levels.len());
        if levels.len() != self.factors.len() {
            return Err(Error::validation(format!(
                "row has {} factor levels, design declares {}",
                levels.len(),
                self.factors.len()
            )));
        }
        for (f, &name) in self.factors.iter().zip(levels) {
            let i = f
                .level_index(name)
                .ok_or_else(|| Error::validation(format!("unknown level '{name}' for factor {}", f.name)))?;
            idx.push(i);
        }
        self.push_row_idx(&idx, covs, response, weight, offset)
    }

    /// Finalize: validate factor declarations and canonically order rows.
    pub fn build(mut self) -> Result<Design> {
        for f in &self.factors {
            if f.levels.len() < 2 {
                return Err(Error::validation(format!(
                    "factor {} needs at least a reference and one contrast level",
                    f.name
                )));
            }
            let mut seen = std::collections::HashSet::new();
            for l in &f.levels {
                if !seen.insert(l) {
                    return Err(Error::validation(format!("duplicate level '{l}' in factor {}", f.name)));
                }
            }
        }
        if self.rows.is_empty() {
            return Err(Error::validation("design has no rows".to_string()));
        }

        // Canonical order: any input permutation produces the same sequence.
        self.rows.sort_by(|a, b| {
            a.levels
                .cmp(&b.levels)
                .then_with(|| cmp_f64_slice(&a.covs, &b.covs))
                .then_with(|| a.response.total_cmp(&b.response))
                .then_with(|| a.weight.total_cmp(&b.weight))
                .then_with(|| a.offset.total_cmp(&b.offset))
        });

        let mut factor_col_start = Vec::with_capacity(self.factors.len());
        let mut col = 1;
        for f in &self.factors {
            factor_col_start.push(col);
            col += f.levels.len() - 1;
        }
        let covariate_col_start = col;
        col += self.covariate_names.len();

        Ok(Design {
            factors: self.factors,
            covariate_names: self.covariate_names,
            rows: self.rows,
            has_offset: self.has_offset,
            factor_col_start,
            covariate_col_start,
            n_cols: col,
        })
    }
}

fn cmp_f64_slice(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        let c = x.total_cmp(y);
        if c != std::cmp::Ordering::Equal {
            return c;
        }
    }
    a.len().cmp(&b.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_order_ignores_input_permutation() {
        let build = |order: &[usize]| {
            let rows = [
                (vec![0u32, 1], 1.0, 3.0),
                (vec![1, 0], 0.0, 2.0),
                (vec![1, 2], 1.0, 5.0),
            ];
            let mut b = Design::builder();
            b.factor("g", ["a", "b"]).factor("h", ["x", "y", "z"]);
            for &i in order {
                let (lv, resp, w) = &rows[i];
                b.push_row_idx(lv, &[], *resp, *w, 0.0).unwrap();
            }
            b.build().unwrap()
        };
        let d1 = build(&[0, 1, 2]);
        let d2 = build(&[2, 0, 1]);
        for (r1, r2) in d1.rows.iter().zip(&d2.rows) {
            assert_eq!(r1.levels, r2.levels);
            assert_eq!(r1.response, r2.response);
        }
    }

    #[test]
    fn column_layout() {
        let mut b = Design::builder();
        b.factor("race", ["White", "Black", "Hispanic"]).factor("gender", ["F", "M"]).covariate("t");
        b.push_row(&["Black", "M"], &[1.5], 1.0, 1.0, 0.0).unwrap();
        let d = b.build().unwrap();
        assert_eq!(d.n_cols(), 1 + 2 + 1 + 1);
        let terms = d.terms();
        assert_eq!(terms[0], Term::Intercept);
        assert_eq!(terms[1].name(), "race=Black");
        assert_eq!(terms[3].name(), "gender=M");
        assert_eq!(terms[4].name(), "t");
        let mut active = Vec::new();
        d.active_cols(&d.rows[0], &mut active);
        assert_eq!(active, vec![(0, 1.0), (1, 1.0), (3, 1.0), (4, 1.5)]);
    }

    #[test]
    fn rejects_bad_rows() {
        let mut b = Design::builder();
        b.factor("g", ["a", "b"]);
        assert!(b.push_row(&["c"], &[], 0.0, 1.0, 0.0).is_err());
        assert!(b.push_row(&["a"], &[], 0.0, 0.5, 0.0).is_err());
        assert!(b.push_row(&["a"], &[], 0.0, 1.0, 0.3).is_err());
    }
}
