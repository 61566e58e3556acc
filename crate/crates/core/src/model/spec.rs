use std::fmt;

use serde::{Deserialize, Serialize};

use super::ModelError;

/// One fixed-effect column.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "term", content = "column", rename_all = "snake_case")]
pub enum FixedTerm {
    Intercept,
    Treatment,
    Covariate,
    TreatmentByCovariate,
    Subscale,
    TreatmentBySubscale,
    /// A user-supplied person-level column, by name.
    Person(String),
}

impl fmt::Display for FixedTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Intercept => f.write_str("intercept"),
            Self::Treatment => f.write_str("treatment"),
            Self::Covariate => f.write_str("covariate"),
            Self::TreatmentByCovariate => f.write_str("treatment:covariate"),
            Self::Subscale => f.write_str("subscale"),
            Self::TreatmentBySubscale => f.write_str("treatment:subscale"),
            Self::Person(name) => f.write_str(name),
        }
    }
}

/// How items enter the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemEffects {
    /// Random item intercepts `b_i`.
    Intercept,
    /// Random intercepts plus random treatment slopes `ζ_i`.
    InterceptAndTreatment,
    /// Items as fixed dummy offsets (first item is the reference level);
    /// only the person intercept is random.
    Fixed,
}

/// Fixed terms plus random-effect structure. The person random intercept is
/// always present.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub fixed: Vec<FixedTerm>,
    pub items: ItemEffects,
    /// Estimate the correlation between item intercepts and treatment slopes.
    pub correlated: bool,
}

impl ModelSpec {
    pub fn new(fixed: Vec<FixedTerm>, items: ItemEffects, correlated: bool) -> Result<Self, ModelError> {
        let spec = Self { fixed, items, correlated };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.fixed.first() != Some(&FixedTerm::Intercept) {
            return Err(ModelError::Spec("the intercept must be the first fixed term".into()));
        }
        for (k, t) in self.fixed.iter().enumerate() {
            if self.fixed[..k].contains(t) {
                return Err(ModelError::Spec(format!("fixed term '{t}' listed twice")));
            }
        }
        if self.items == ItemEffects::InterceptAndTreatment && !self.fixed.contains(&FixedTerm::Treatment) {
            return Err(ModelError::Spec("an item treatment slope requires the treatment fixed term".into()));
        }
        if self.correlated && self.items != ItemEffects::InterceptAndTreatment {
            return Err(ModelError::Spec("a correlation needs item treatment slopes".into()));
        }
        Ok(())
    }

    /// The five standard specifications, numbered 1 to 5:
    ///
    /// 1. intercept + treatment, random person and item intercepts
    /// 2. adds the baseline covariate
    /// 3. model 2 plus correlated random item treatment slopes
    /// 4. model 2 plus treatment × covariate
    /// 5. model 4 plus correlated random item treatment slopes
    pub fn numbered(k: u8) -> Result<Self, ModelError> {
        use FixedTerm::*;
        let (fixed, items) = match k {
            1 => (vec![Intercept, Treatment], ItemEffects::Intercept),
            2 => (vec![Intercept, Treatment, Covariate], ItemEffects::Intercept),
            3 => (vec![Intercept, Treatment, Covariate], ItemEffects::InterceptAndTreatment),
            4 => (vec![Intercept, Treatment, Covariate, TreatmentByCovariate], ItemEffects::Intercept),
            5 => (
                vec![Intercept, Treatment, Covariate, TreatmentByCovariate],
                ItemEffects::InterceptAndTreatment,
            ),
            _ => return Err(ModelError::Spec(format!("model number must be 1..=5, got {k}"))),
        };
        Self::new(fixed, items, items == ItemEffects::InterceptAndTreatment)
    }

    /// Treatment × subscale with the baseline covariate, random person
    /// intercepts and correlated random item intercepts and treatment slopes.
    pub fn subscale(with_covariate: bool) -> Self {
        use FixedTerm::*;
        let mut fixed = vec![Intercept, Treatment, Subscale, TreatmentBySubscale];
        if with_covariate {
            fixed.push(Covariate);
        }
        Self { fixed, items: ItemEffects::InterceptAndTreatment, correlated: true }
    }

    /// Measurement-only Rasch model: intercept, random person and item intercepts.
    pub fn measurement() -> Self {
        Self { fixed: vec![FixedTerm::Intercept], items: ItemEffects::Intercept, correlated: false }
    }

    /// Same fixed terms as `self` without the item treatment slope.
    pub fn without_item_slope(&self) -> Self {
        let items = match self.items {
            ItemEffects::InterceptAndTreatment => ItemEffects::Intercept,
            other => other,
        };
        Self { fixed: self.fixed.clone(), items, correlated: false }
    }

    /// Drop the covariate and its interaction; used when data have no covariate.
    pub fn without_covariate(&self) -> Self {
        let fixed = self
            .fixed
            .iter()
            .filter(|t| !matches!(t, FixedTerm::Covariate | FixedTerm::TreatmentByCovariate))
            .cloned()
            .collect();
        Self { fixed, ..self.clone() }
    }

    pub fn has_item_slope(&self) -> bool {
        self.items == ItemEffects::InterceptAndTreatment
    }

    pub fn position(&self, term: &FixedTerm) -> Option<usize> {
        self.fixed.iter().position(|t| t == term)
    }

    /// `alt` adds only random-effect structure to `self`.
    pub fn is_nested_in(&self, alt: &ModelSpec) -> bool {
        self.fixed == alt.fixed
            && match (self.items, alt.items) {
                (a, b) if a == b => !self.correlated || alt.correlated,
                (ItemEffects::Intercept, ItemEffects::InterceptAndTreatment) => true,
                (ItemEffects::Fixed, _) | (_, ItemEffects::Fixed) => false,
                _ => false,
            }
    }

    pub fn describe(&self) -> String {
        let fixed: Vec<String> = self.fixed.iter().map(ToString::to_string).collect();
        let items = match (self.items, self.correlated) {
            (ItemEffects::Intercept, _) => "(1|item)",
            (ItemEffects::InterceptAndTreatment, true) => "(1+treatment|item)",
            (ItemEffects::InterceptAndTreatment, false) => "(1+treatment||item)",
            (ItemEffects::Fixed, _) => "item (fixed)",
        };
        format!("{} + (1|person) + {items}", fixed.join(" + "))
    }
}
