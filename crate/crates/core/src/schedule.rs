//! Declarative tax policy: consumption categories, their treatment under the
//! reformed VAT, cashback classes and the pre-reform effective rates.
//!
//! Schedules are read from JSON. The layout is
//!
//! ```json
//! {
//!   "groups": [{"id": "cesta_basica", "label": "Food basket"}],
//!   "categories": [{
//!     "id": "cesta_basica", "label": "Food basket", "group": "cesta_basica",
//!     "treatment": {"kind": "zero_rate"},
//!     "cashback_class": "standard",
//!     "in_denominator": true,
//!     "baseline_effective": {"value": 0.12, "basis": "inside"}
//!   }],
//!   "cashback": {"utility_refund_share": 0.466, "standard_refund_share": 0.2},
//!   "eligibility_threshold": 477.0,
//!   "target_net_burden": 0.201
//! }
//! ```
//!
//! Unknown keys are rejected everywhere. A validated [`Schedule`] is immutable.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::rates::{compose_selective, Rate};

pub const DEFAULT_UTILITY_REFUND_SHARE: f64 = 0.466;
pub const DEFAULT_STANDARD_REFUND_SHARE: f64 = 0.20;
pub const DEFAULT_TARGET_NET_BURDEN: f64 = 0.201;
/// Half of the 2018 monthly minimum wage (R$ 954).
pub const DEFAULT_ELIGIBILITY_THRESHOLD: f64 = 477.0;

/// PLP 68/2024-style schedule with one category per treatment subgroup.
pub const PLP68_JSON: &str = include_str!("../fixtures/plp68.json");
/// Single-category schedule taxing all consumption at the reference rate.
pub const UNIFORM_JSON: &str = include_str!("../fixtures/uniform.json");

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("cannot read schedule {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}: parse error at line {line}, column {column}: {message}")]
    Parse {
        origin: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid schedule: {subject}: {message}")]
    Invalid { subject: String, message: String },
    #[error("empty treatment-group selector")]
    EmptySelector,
    #[error("unknown selector `{selector}`; valid groups and categories: {}", valid.join(", "))]
    UnknownSelector { selector: String, valid: Vec<String> },
}

fn invalid(subject: impl Into<String>, message: impl Into<String>) -> ScheduleError {
    ScheduleError::Invalid {
        subject: subject.into(),
        message: message.into(),
    }
}

/// Policy rule applied to one consumption category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTreatment", into = "RawTreatment")]
pub enum Treatment {
    ZeroRate,
    ReferenceRate,
    /// A fraction of the statutory reference rate, `0 < fraction < 1`.
    ReducedFraction { fraction: f64 },
    /// Fixed effective rate that does not move with the reference rate.
    SpecificRegime { effective: Rate },
    /// Excise levied inside the VAT base, on top of `vat_fraction` times the
    /// reference rate.
    Selective {
        is_rate: Rate,
        vat_fraction: f64,
    },
    /// Property rent: a fraction of the reference rate on the rent less a
    /// monthly reducer.
    RentRegime { fraction: f64, reducer: f64 },
    Untaxed,
}

fn one() -> f64 {
    1.0
}

/// Flat on-disk form of [`Treatment`]: `kind` plus the parameters that kind
/// takes. Parameters that do not belong to the kind are rejected.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTreatment {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    effective: Option<Rate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    is_rate: Option<Rate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vat_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reducer: Option<f64>,
}

impl TryFrom<RawTreatment> for Treatment {
    type Error = String;

    fn try_from(raw: RawTreatment) -> Result<Self, Self::Error> {
        let kind = TreatmentKind::from_name(&raw.kind).ok_or_else(|| {
            let names: Vec<&str> = TreatmentKind::ALL.iter().map(|k| k.name()).collect();
            format!("unknown treatment kind `{}`, expected one of {}", raw.kind, names.join(", "))
        })?;
        let present = [
            ("fraction", raw.fraction.is_some()),
            ("effective", raw.effective.is_some()),
            ("is_rate", raw.is_rate.is_some()),
            ("vat_fraction", raw.vat_fraction.is_some()),
            ("reducer", raw.reducer.is_some()),
        ];
        let allowed: &[&str] = match kind {
            TreatmentKind::ReducedFraction => &["fraction"],
            TreatmentKind::SpecificRegime => &["effective"],
            TreatmentKind::Selective => &["is_rate", "vat_fraction"],
            TreatmentKind::RentRegime => &["fraction", "reducer"],
            _ => &[],
        };
        if let Some((field, _)) = present.iter().find(|(f, p)| *p && !allowed.contains(f)) {
            return Err(format!("field `{field}` does not apply to treatment `{}`", raw.kind));
        }
        let need = |v: Option<f64>, field: &str| {
            v.ok_or_else(|| format!("treatment `{}` requires `{field}`", raw.kind))
        };
        Ok(match kind {
            TreatmentKind::ZeroRate => Treatment::ZeroRate,
            TreatmentKind::ReferenceRate => Treatment::ReferenceRate,
            TreatmentKind::Untaxed => Treatment::Untaxed,
            TreatmentKind::ReducedFraction => Treatment::ReducedFraction {
                fraction: need(raw.fraction, "fraction")?,
            },
            TreatmentKind::SpecificRegime => Treatment::SpecificRegime {
                effective: raw
                    .effective
                    .ok_or_else(|| "treatment `specific_regime` requires `effective`".to_string())?,
            },
            TreatmentKind::Selective => Treatment::Selective {
                is_rate: raw
                    .is_rate
                    .ok_or_else(|| "treatment `selective` requires `is_rate`".to_string())?,
                vat_fraction: raw.vat_fraction.unwrap_or_else(one),
            },
            TreatmentKind::RentRegime => Treatment::RentRegime {
                fraction: need(raw.fraction, "fraction")?,
                reducer: need(raw.reducer, "reducer")?,
            },
        })
    }
}

impl From<Treatment> for RawTreatment {
    fn from(t: Treatment) -> Self {
        let mut raw = RawTreatment {
            kind: t.kind().name().to_string(),
            fraction: None,
            effective: None,
            is_rate: None,
            vat_fraction: None,
            reducer: None,
        };
        match t {
            Treatment::ReducedFraction { fraction } => raw.fraction = Some(fraction),
            Treatment::SpecificRegime { effective } => raw.effective = Some(effective),
            Treatment::Selective { is_rate, vat_fraction } => {
                raw.is_rate = Some(is_rate);
                raw.vat_fraction = Some(vat_fraction);
            }
            Treatment::RentRegime { fraction, reducer } => {
                raw.fraction = Some(fraction);
                raw.reducer = Some(reducer);
            }
            _ => {}
        }
        raw
    }
}

/// Field-free discriminant of [`Treatment`], used by `kind:` selectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TreatmentKind {
    ZeroRate,
    ReferenceRate,
    ReducedFraction,
    SpecificRegime,
    Selective,
    RentRegime,
    Untaxed,
}

impl TreatmentKind {
    pub const ALL: [TreatmentKind; 7] = [
        TreatmentKind::ZeroRate,
        TreatmentKind::ReferenceRate,
        TreatmentKind::ReducedFraction,
        TreatmentKind::SpecificRegime,
        TreatmentKind::Selective,
        TreatmentKind::RentRegime,
        TreatmentKind::Untaxed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TreatmentKind::ZeroRate => "zero_rate",
            TreatmentKind::ReferenceRate => "reference_rate",
            TreatmentKind::ReducedFraction => "reduced_fraction",
            TreatmentKind::SpecificRegime => "specific_regime",
            TreatmentKind::Selective => "selective",
            TreatmentKind::RentRegime => "rent_regime",
            TreatmentKind::Untaxed => "untaxed",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl Treatment {
    pub fn kind(&self) -> TreatmentKind {
        match self {
            Treatment::ZeroRate => TreatmentKind::ZeroRate,
            Treatment::ReferenceRate => TreatmentKind::ReferenceRate,
            Treatment::ReducedFraction { .. } => TreatmentKind::ReducedFraction,
            Treatment::SpecificRegime { .. } => TreatmentKind::SpecificRegime,
            Treatment::Selective { .. } => TreatmentKind::Selective,
            Treatment::RentRegime { .. } => TreatmentKind::RentRegime,
            Treatment::Untaxed => TreatmentKind::Untaxed,
        }
    }

    /// Inside rate applied to the (possibly reduced) tax base when the
    /// statutory reference rate is `reference`. For the rent regime this is
    /// the rate part only; the reducer is applied to the base by the engine.
    pub fn inside_rate(&self, reference: Rate) -> Rate {
        let reference = reference.to_outside().value();
        let scaled = |f: f64| Rate::outside_unchecked(f * reference).to_inside();
        match self {
            Treatment::ZeroRate | Treatment::Untaxed => Rate::ZERO_INSIDE,
            Treatment::ReferenceRate => scaled(1.0),
            Treatment::ReducedFraction { fraction } => scaled(*fraction),
            Treatment::SpecificRegime { effective } => effective.to_inside(),
            Treatment::Selective {
                is_rate,
                vat_fraction,
            } => compose_selective(
                *is_rate,
                Rate::outside_unchecked(vat_fraction * reference),
            )
            .to_inside(),
            Treatment::RentRegime { fraction, .. } => scaled(*fraction),
        }
    }

    /// True when the category's tax moves with the reference rate.
    pub fn depends_on_reference(&self) -> bool {
        matches!(
            self,
            Treatment::ReferenceRate
                | Treatment::ReducedFraction { .. }
                | Treatment::Selective { .. }
                | Treatment::RentRegime { .. }
        )
    }

    fn validate(&self, subject: &str) -> Result<(), ScheduleError> {
        match *self {
            Treatment::ReducedFraction { fraction } => {
                if !(fraction > 0.0 && fraction < 1.0) {
                    return Err(invalid(
                        subject,
                        format!("reduced fraction {fraction} must lie in (0, 1)"),
                    ));
                }
            }
            Treatment::Selective { vat_fraction, .. } => {
                if !(vat_fraction > 0.0 && vat_fraction <= 1.0) {
                    return Err(invalid(
                        subject,
                        format!("vat_fraction {vat_fraction} must lie in (0, 1]"),
                    ));
                }
            }
            Treatment::RentRegime { fraction, reducer } => {
                if !(fraction > 0.0 && fraction <= 1.0) {
                    return Err(invalid(
                        subject,
                        format!("rent fraction {fraction} must lie in (0, 1]"),
                    ));
                }
                if !(reducer.is_finite() && reducer >= 0.0) {
                    return Err(invalid(
                        subject,
                        format!("rent reducer {reducer} must be finite and non-negative"),
                    ));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Which cashback refund share applies to a category's tax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CashbackClass {
    /// Household gas, electricity, water and sewage.
    UtilityEnhanced,
    Standard,
    /// Goods under the selective excise, and anything else not refunded.
    Excluded,
}

/// Illustrative Engel-curve parameters consumed by the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngelProfile {
    /// Relative budget weight at the reference expenditure level.
    pub share: f64,
    /// Expenditure elasticity of that weight (negative for necessities).
    #[serde(default)]
    pub elasticity: f64,
    /// Probability that a household buys from the category at all.
    #[serde(default = "one")]
    pub participation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Category {
    pub id: String,
    pub label: String,
    /// Treatment group used for budget-share tables and removal selectors.
    /// Categories without a group are left out of the budget-share table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    pub treatment: Treatment,
    pub cashback_class: CashbackClass,
    /// Whether the category counts in the consumption denominator of the
    /// burden ratio.
    pub in_denominator: bool,
    /// Pre-reform effective rate (any basis; applied on the inside basis).
    pub baseline_effective: Rate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub engel: Option<EngelProfile>,
}

impl Category {
    pub fn inside_rate(&self, reference: Rate) -> Rate {
        self.treatment.inside_rate(reference)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Group {
    pub id: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CashbackParams {
    #[serde(default = "default_utility_share")]
    pub utility_refund_share: f64,
    #[serde(default = "default_standard_share")]
    pub standard_refund_share: f64,
}

fn default_utility_share() -> f64 {
    DEFAULT_UTILITY_REFUND_SHARE
}
fn default_standard_share() -> f64 {
    DEFAULT_STANDARD_REFUND_SHARE
}
fn default_threshold() -> f64 {
    DEFAULT_ELIGIBILITY_THRESHOLD
}
fn default_target() -> f64 {
    DEFAULT_TARGET_NET_BURDEN
}

impl Default for CashbackParams {
    fn default() -> Self {
        CashbackParams {
            utility_refund_share: DEFAULT_UTILITY_REFUND_SHARE,
            standard_refund_share: DEFAULT_STANDARD_REFUND_SHARE,
        }
    }
}

/// Unvalidated schedule as it appears on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    #[serde(default)]
    pub groups: Vec<Group>,
    pub categories: Vec<Category>,
    #[serde(default)]
    pub cashback: CashbackParams,
    #[serde(default = "default_threshold")]
    pub eligibility_threshold: f64,
    #[serde(default = "default_target")]
    pub target_net_burden: f64,
}

/// A validated policy schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    spec: ScheduleSpec,
    groups: Vec<Group>,
    index: HashMap<String, usize>,
}

impl Serialize for Schedule {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.spec.serialize(serializer)
    }
}

fn valid_token(s: &str) -> bool {
    !s.is_empty()
        && s
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

impl TryFrom<ScheduleSpec> for Schedule {
    type Error = ScheduleError;

    fn try_from(spec: ScheduleSpec) -> Result<Self, Self::Error> {
        Schedule::new(spec)
    }
}

impl Schedule {
    pub fn new(spec: ScheduleSpec) -> Result<Self, ScheduleError> {
        let shares = [
            ("cashback.utility_refund_share", spec.cashback.utility_refund_share),
            ("cashback.standard_refund_share", spec.cashback.standard_refund_share),
        ];
        for (field, v) in shares {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(field, format!("refund share {v} must lie in [0, 1]")));
            }
        }
        if !(spec.eligibility_threshold.is_finite() && spec.eligibility_threshold >= 0.0) {
            return Err(invalid(
                "eligibility_threshold",
                format!("{} must be finite and non-negative", spec.eligibility_threshold),
            ));
        }
        if !(spec.target_net_burden > 0.0 && spec.target_net_burden < 1.0) {
            return Err(invalid(
                "target_net_burden",
                format!("{} must lie in (0, 1)", spec.target_net_burden),
            ));
        }
        if spec.categories.is_empty() {
            return Err(invalid("categories", "at least one category is required"));
        }

        let mut group_ids = BTreeSet::new();
        for g in &spec.groups {
            if !valid_token(&g.id) {
                return Err(invalid(format!("group `{}`", g.id), "id must be a non-empty token of [A-Za-z0-9_.-]"));
            }
            if !group_ids.insert(g.id.clone()) {
                return Err(invalid(format!("group `{}`", g.id), "duplicate group id"));
            }
        }

        let mut index = HashMap::new();
        for (i, c) in spec.categories.iter().enumerate() {
            let subject = format!("category `{}`", c.id);
            if !valid_token(&c.id) {
                return Err(invalid(subject, "id must be a non-empty token of [A-Za-z0-9_.-]"));
            }
            if index.insert(c.id.clone(), i).is_some() {
                return Err(invalid(subject, "duplicate category id"));
            }
            c.treatment.validate(&subject)?;
            if c.treatment.kind() == TreatmentKind::Selective
                && c.cashback_class != CashbackClass::Excluded
            {
                return Err(invalid(
                    subject,
                    "goods under the selective excise are excluded from cashback; cashback_class must be `excluded`",
                ));
            }
            if let Some(g) = &c.group {
                if !spec.groups.is_empty() && !group_ids.contains(g) {
                    return Err(invalid(subject, format!("unknown group `{g}`")));
                }
            }
            if let Some(e) = &c.engel {
                let ok = e.share.is_finite()
                    && e.share >= 0.0
                    && e.elasticity.is_finite()
                    && (0.0..=1.0).contains(&e.participation);
                if !ok {
                    return Err(invalid(
                        subject,
                        "engel profile needs share >= 0, finite elasticity and participation in [0, 1]",
                    ));
                }
            }
        }

        let identified = spec.categories.iter().any(|c| {
            matches!(
                c.treatment.kind(),
                TreatmentKind::ReferenceRate | TreatmentKind::ReducedFraction
            )
        });
        if !identified {
            return Err(invalid(
                "categories",
                "no category is taxed at the reference rate or a fraction of it, so the reference rate is unidentified",
            ));
        }

        let groups = if spec.groups.is_empty() {
            let mut seen = BTreeSet::new();
            spec.categories
                .iter()
                .filter_map(|c| c.group.clone())
                .filter(|g| seen.insert(g.clone()))
                .map(|g| Group {
                    label: g.clone(),
                    id: g,
                })
                .collect()
        } else {
            spec.groups.clone()
        };

        Ok(Schedule {
            spec,
            groups,
            index,
        })
    }

    pub fn from_json_str(text: &str, origin: &str) -> Result<Self, ScheduleError> {
        let spec: ScheduleSpec =
            serde_json::from_str(text).map_err(|e| ScheduleError::Parse {
                origin: origin.to_string(),
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })?;
        Schedule::new(spec)
    }

    /// Reads and validates a schedule file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScheduleError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ScheduleError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Schedule::from_json_str(&text, &path.display().to_string())
    }

    pub fn plp68() -> Self {
        Schedule::from_json_str(PLP68_JSON, "plp68.json").expect("bundled fixture is valid")
    }

    pub fn uniform() -> Self {
        Schedule::from_json_str(UNIFORM_JSON, "uniform.json").expect("bundled fixture is valid")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.spec).expect("schedule serializes")
    }

    /// SHA-256 of the compact JSON serialization.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(&self.spec).expect("schedule serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn spec(&self) -> &ScheduleSpec {
        &self.spec
    }

    pub fn categories(&self) -> &[Category] {
        &self.spec.categories
    }

    pub fn category_ids(&self) -> impl Iterator<Item = &str> {
        self.spec.categories.iter().map(|c| c.id.as_str())
    }

    pub fn category_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Treatment groups in table order.
    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn utility_refund_share(&self) -> f64 {
        self.spec.cashback.utility_refund_share
    }

    pub fn standard_refund_share(&self) -> f64 {
        self.spec.cashback.standard_refund_share
    }

    pub fn refund_share(&self, class: CashbackClass) -> f64 {
        match class {
            CashbackClass::UtilityEnhanced => self.utility_refund_share(),
            CashbackClass::Standard => self.standard_refund_share(),
            CashbackClass::Excluded => 0.0,
        }
    }

    pub fn eligibility_threshold(&self) -> f64 {
        self.spec.eligibility_threshold
    }

    pub fn target_net_burden(&self) -> f64 {
        self.spec.target_net_burden
    }

    /// Inside rates of every category, in category order.
    pub fn inside_rates(&self, reference: Rate) -> Vec<f64> {
        self.spec
            .categories
            .iter()
            .map(|c| c.inside_rate(reference).value())
            .collect()
    }

    pub fn with_target(&self, target: f64) -> Result<Self, ScheduleError> {
        let mut spec = self.spec.clone();
        spec.target_net_burden = target;
        Schedule::new(spec)
    }

    pub fn with_cashback(&self, params: CashbackParams) -> Result<Self, ScheduleError> {
        let mut spec = self.spec.clone();
        spec.cashback = params;
        Schedule::new(spec)
    }

    /// Counterfactual without the selected favoured treatments: every
    /// selected category is taxed at the plain reference rate. Category ids,
    /// cashback classes and denominator flags are kept.
    pub fn with_removal(&self, selector: &Selector) -> Result<Self, ScheduleError> {
        let selected = self.resolve(selector)?;
        let mut spec = self.spec.clone();
        for i in selected {
            spec.categories[i].treatment = Treatment::ReferenceRate;
        }
        Schedule::new(spec)
    }

    /// Same categories, every in-denominator category at the reference rate,
    /// everything else untaxed, and no cashback.
    pub fn uniform_variant(&self) -> Self {
        let mut spec = self.spec.clone();
        for c in &mut spec.categories {
            c.treatment = if c.in_denominator {
                Treatment::ReferenceRate
            } else {
                Treatment::Untaxed
            };
        }
        spec.cashback = CashbackParams {
            utility_refund_share: 0.0,
            standard_refund_share: 0.0,
        };
        Schedule::new(spec).expect("uniform variant of a valid schedule is valid")
    }

    /// Indices of the categories a selector picks out, in category order.
    /// Every term must match at least one category.
    pub fn resolve(&self, selector: &Selector) -> Result<Vec<usize>, ScheduleError> {
        let mut picked = BTreeSet::new();
        for term in &selector.terms {
            let matches: Vec<usize> = match term {
                Term::Kind(kind) => self
                    .spec
                    .categories
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| c.treatment.kind() == *kind)
                    .map(|(i, _)| i)
                    .collect(),
                Term::Name(name) if self.groups.iter().any(|g| &g.id == name) => self
                    .spec
                    .categories
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| c.group.as_deref() == Some(name.as_str()))
                    .map(|(i, _)| i)
                    .collect(),
                Term::Name(name) => self.index.get(name).copied().into_iter().collect(),
            };
            if matches.is_empty() {
                return Err(ScheduleError::UnknownSelector {
                    selector: term.to_string(),
                    valid: self.selector_vocabulary(),
                });
            }
            picked.extend(matches);
        }
        Ok(picked.into_iter().collect())
    }

    fn selector_vocabulary(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.groups
            .iter()
            .map(|g| g.id.clone())
            .chain(self.spec.categories.iter().map(|c| c.id.clone()))
            .chain(TreatmentKind::ALL.iter().map(|k| format!("kind:{}", k.name())))
            .filter(|v| seen.insert(v.clone()))
            .collect()
    }

    /// Human-readable name of what a selector removes.
    pub fn selector_label(&self, selector: &Selector) -> String {
        selector
            .terms
            .iter()
            .map(|t| match t {
                Term::Kind(k) => k.name().to_string(),
                Term::Name(n) => self
                    .groups
                    .iter()
                    .find(|g| &g.id == n)
                    .map(|g| g.label.clone())
                    .or_else(|| self.index.get(n).map(|&i| self.spec.categories[i].label.clone()))
                    .unwrap_or_else(|| n.clone()),
            })
            .collect::<Vec<_>>()
            .join(", ")
    }

    /// Selectors for every group that carries a favoured treatment, in group
    /// order.
    pub fn default_removals(&self) -> Vec<Selector> {
        self.groups
            .iter()
            .filter(|g| {
                let mut members = self
                    .spec
                    .categories
                    .iter()
                    .filter(|c| c.group.as_deref() == Some(g.id.as_str()))
                    .peekable();
                members.peek().is_some()
                    && members.any(|c| c.treatment.kind() != TreatmentKind::ReferenceRate)
            })
            .map(|g| Selector {
                terms: vec![Term::Name(g.id.clone())],
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Term {
    Name(String),
    Kind(TreatmentKind),
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Name(n) => f.write_str(n),
            Term::Kind(k) => write!(f, "kind:{}", k.name()),
        }
    }
}

/// Picks out a set of categories: a comma-separated list of group ids,
/// category ids, or `kind:<treatment>` terms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selector {
    terms: Vec<Term>,
}

impl Selector {
    pub fn parse(text: &str) -> Result<Self, ScheduleError> {
        let mut terms = Vec::new();
        for raw in text.split(',') {
            let raw = raw.trim();
            if raw.is_empty() {
                return Err(ScheduleError::EmptySelector);
            }
            let term = match raw.strip_prefix("kind:") {
                Some(k) => Term::Kind(TreatmentKind::from_name(k).ok_or_else(|| {
                    ScheduleError::UnknownSelector {
                        selector: raw.to_string(),
                        valid: TreatmentKind::ALL
                            .iter()
                            .map(|k| format!("kind:{}", k.name()))
                            .collect(),
                    }
                })?),
                None => Term::Name(raw.to_string()),
            };
            terms.push(term);
        }
        Ok(Selector { terms })
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.terms.iter().map(|t| t.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

impl std::str::FromStr for Selector {
    type Err = ScheduleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Selector::parse(s)
    }
}
