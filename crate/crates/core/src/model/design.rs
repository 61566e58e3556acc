use nalgebra::DMatrix;

use super::{FixedTerm, ItemEffects, ModelError, ModelSpec};
use crate::data::ResponseTable;

/// Model matrices for one table and one spec.
///
/// Observations are sorted by (person index, item index), so the design is
/// independent of input row order. Random-effect columns are laid out as
/// persons `0..N`, item intercepts `N..N+I`, then (with slopes) item
/// treatment slopes `N+I..N+2I`.
#[derive(Debug, Clone)]
pub struct Design {
    pub spec: ModelSpec,
    /// Fixed-effect matrix, one row per observation.
    pub x: DMatrix<f64>,
    pub x_names: Vec<String>,
    pub y: Vec<f64>,
    pub person: Vec<usize>,
    pub item: Vec<usize>,
    pub treatment: Vec<f64>,
    pub person_ids: Vec<String>,
    pub item_ids: Vec<String>,
    /// Row-major copy of `x` for the inner loops.
    pub(crate) x_rows: Vec<f64>,
}

impl Design {
    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn n_fixed(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_persons(&self) -> usize {
        self.person_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    /// Random-effect columns per item (0, 1 or 2).
    pub fn item_blocks(&self) -> usize {
        match self.spec.items {
            ItemEffects::Fixed => 0,
            ItemEffects::Intercept => 1,
            ItemEffects::InterceptAndTreatment => 2,
        }
    }

    /// Total number of random-effect columns in `Z`.
    pub fn n_random(&self) -> usize {
        self.n_persons() + self.item_blocks() * self.n_items()
    }

    /// Nonzero entries `(row, column, value)` of the random-effect matrix `Z`.
    pub fn z_entries(&self) -> Vec<(usize, usize, f64)> {
        let (np, ni) = (self.n_persons(), self.n_items());
        let mut out = Vec::with_capacity(self.n_obs() * 3);
        for o in 0..self.n_obs() {
            out.push((o, self.person[o], 1.0));
            if self.item_blocks() >= 1 {
                out.push((o, np + self.item[o], 1.0));
            }
            if self.item_blocks() == 2 && self.treatment[o] != 0.0 {
                out.push((o, np + ni + self.item[o], self.treatment[o]));
            }
        }
        out
    }

    #[inline]
    pub(crate) fn x_row(&self, o: usize) -> &[f64] {
        let p = self.n_fixed();
        &self.x_rows[o * p..(o + 1) * p]
    }

    /// Items whose responses are all 0 or all 1 within a treatment group.
    pub fn separated_items(&self) -> Vec<String> {
        // [group][item] -> (zeros, ones)
        let mut counts = vec![vec![(0usize, 0usize); self.n_items()]; 2];
        for o in 0..self.n_obs() {
            let g = usize::from(self.treatment[o] != 0.0);
            let c = &mut counts[g][self.item[o]];
            if self.y[o] > 0.5 {
                c.1 += 1;
            } else {
                c.0 += 1;
            }
        }
        (0..self.n_items())
            .filter(|&i| counts.iter().any(|g| (g[i].0 + g[i].1 > 0) && (g[i].0 == 0 || g[i].1 == 0)))
            .map(|i| self.item_ids[i].clone())
            .collect()
    }
}

/// Build `X`, `Z` and `y` for `spec` on `table`.
pub fn build_design(table: &ResponseTable, spec: &ModelSpec) -> Result<Design, ModelError> {
    spec.validate()?;
    let needs_cov = spec.fixed.iter().any(|t| matches!(t, FixedTerm::Covariate | FixedTerm::TreatmentByCovariate));
    if needs_cov && !table.has_covariate() {
        return Err(ModelError::MissingColumn("covariate".into()));
    }
    let needs_sub = spec.fixed.iter().any(|t| matches!(t, FixedTerm::Subscale | FixedTerm::TreatmentBySubscale));
    if needs_sub && !table.has_subscale() {
        return Err(ModelError::MissingColumn("subscale".into()));
    }
    let mut extra_idx = Vec::new();
    for t in &spec.fixed {
        if let FixedTerm::Person(name) = t {
            let k = table
                .extra_columns()
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| ModelError::MissingColumn(name.clone()))?;
            extra_idx.push(k);
        }
    }

    let mut order: Vec<usize> = (0..table.len()).collect();
    order.sort_by_key(|&r| (table.person_of(r), table.item_of(r)));

    let mut x_names: Vec<String> = spec.fixed.iter().map(ToString::to_string).collect();
    let fixed_items = spec.items == ItemEffects::Fixed;
    if fixed_items {
        x_names.extend(table.item_ids()[1..].iter().map(|id| format!("item[{id}]")));
    }
    let p = x_names.len();
    let n = order.len();
    let rows = table.rows();

    let mut x_rows = vec![0.0; n * p];
    let mut y = Vec::with_capacity(n);
    let mut person = Vec::with_capacity(n);
    let mut item = Vec::with_capacity(n);
    let mut treatment = Vec::with_capacity(n);
    for (o, &r) in order.iter().enumerate() {
        let row = &rows[r];
        let t = f64::from(row.treatment);
        let xv = row.covariate.unwrap_or(0.0);
        let s = row.subscale.unwrap_or(0.0);
        let out = &mut x_rows[o * p..(o + 1) * p];
        let mut extra = extra_idx.iter();
        for (c, term) in spec.fixed.iter().enumerate() {
            out[c] = match term {
                FixedTerm::Intercept => 1.0,
                FixedTerm::Treatment => t,
                FixedTerm::Covariate => xv,
                FixedTerm::TreatmentByCovariate => t * xv,
                FixedTerm::Subscale => s,
                FixedTerm::TreatmentBySubscale => t * s,
                FixedTerm::Person(_) => row.extra[*extra.next().expect("index per person term")],
            };
        }
        let i = table.item_of(r);
        if fixed_items && i > 0 {
            out[spec.fixed.len() + i - 1] = 1.0;
        }
        y.push(f64::from(row.score));
        person.push(table.person_of(r));
        item.push(i);
        treatment.push(t);
    }
    let x = DMatrix::from_row_slice(n, p, &x_rows);

    if spec.has_item_slope() && treatment.iter().all(|&t| t == 0.0) {
        return Err(ModelError::Spec("item treatment slopes need treated persons".into()));
    }
    Ok(Design {
        spec: spec.clone(),
        x,
        x_names,
        y,
        person,
        item,
        treatment,
        person_ids: table.person_ids().to_vec(),
        item_ids: table.item_ids().to_vec(),
        x_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Response, ResponseTable};

    fn table() -> ResponseTable {
        let mut rows = vec![];
        for (p, t, x) in [("p1", 0u8, -1.0), ("p2", 1u8, 1.0)] {
            for (i, s) in [("i1", 1u8), ("i2", 0u8)] {
                rows.push(Response {
                    person_id: p.into(),
                    item_id: i.into(),
                    score: s,
                    treatment: t,
                    covariate: Some(x),
                    subscale: None,
                    extra: vec![],
                });
            }
        }
        ResponseTable::new(rows, vec![]).unwrap()
    }

    #[test]
    fn model_one_shapes() {
        let d = build_design(&table(), &ModelSpec::numbered(1).unwrap()).unwrap();
        assert_eq!((d.x.nrows(), d.x.ncols()), (4, 2));
        assert_eq!(d.n_random(), 4);
    }

    #[test]
    fn slopes_zero_for_control() {
        let d = build_design(&table(), &ModelSpec::numbered(3).unwrap()).unwrap();
        assert_eq!(d.n_random(), 6);
        for (o, col, v) in d.z_entries() {
            if col >= 4 {
                assert_eq!(d.treatment[o], 1.0);
                assert_eq!(v, 1.0);
            }
        }
        let slope_entries = d.z_entries().iter().filter(|e| e.1 >= 4).count();
        assert_eq!(slope_entries, 2);
    }

    #[test]
    fn model_five_columns() {
        let d = build_design(&table(), &ModelSpec::numbered(5).unwrap()).unwrap();
        assert_eq!(d.x_names, ["intercept", "treatment", "covariate", "treatment:covariate"]);
        let row: Vec<f64> = d.x.row(3).iter().copied().collect();
        assert_eq!(row, [1.0, 1.0, 1.0, 1.0]);
        let row: Vec<f64> = d.x.row(0).iter().copied().collect();
        assert_eq!(row, [1.0, 0.0, -1.0, -0.0]);
    }

    #[test]
    fn fixed_item_dummies() {
        let spec = ModelSpec::new(vec![FixedTerm::Intercept, FixedTerm::Treatment], ItemEffects::Fixed, false).unwrap();
        let d = build_design(&table(), &spec).unwrap();
        assert_eq!(d.x_names[2], "item[i2]");
        assert_eq!(d.n_random(), 2);
    }

    #[test]
    fn missing_covariate_named() {
        let mut t = vec![];
        for r in table().rows() {
            t.push(Response { covariate: None, ..r.clone() });
        }
        let t = ResponseTable::new(t, vec![]).unwrap();
        let err = build_design(&t, &ModelSpec::numbered(5).unwrap()).unwrap_err();
        assert_eq!(err, ModelError::MissingColumn("covariate".into()));
    }
}
