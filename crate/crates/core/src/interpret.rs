//! Risk-group positivity thresholds.
//!
//! The questionnaire selects a threshold through an ordered rule table
//! (first match wins, the last rule is a catch-all). A reading is positive
//! when the induration diameter is at least that threshold.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InterpretError {
    #[error("invalid diameter {0} mm")]
    InvalidDiameter(f64),
    #[error("invalid rule table: {0}")]
    InvalidRules(String),
}

/// Patient answers. Every field must be present when deserialized.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Questionnaire {
    pub hiv_positive: bool,
    pub recent_tb_contact: bool,
    pub immunosuppressed: bool,
    pub organ_transplant: bool,
    pub fibrotic_chest_xray: bool,
    pub recent_immigrant_high_burden: bool,
    pub injection_drug_use: bool,
    pub high_risk_congregate_resident: bool,
    pub mycobacteriology_lab_worker: bool,
    pub child_under_4: bool,
    pub lived_low_incidence_area: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskFactor {
    HivPositive,
    RecentTbContact,
    Immunosuppressed,
    OrganTransplant,
    FibroticChestXray,
    RecentImmigrantHighBurden,
    InjectionDrugUse,
    HighRiskCongregateResident,
    MycobacteriologyLabWorker,
    #[serde(rename = "child_under_4")]
    ChildUnder4,
    LivedLowIncidenceArea,
}

impl RiskFactor {
    pub const ALL: [RiskFactor; 11] = [
        RiskFactor::HivPositive,
        RiskFactor::RecentTbContact,
        RiskFactor::Immunosuppressed,
        RiskFactor::OrganTransplant,
        RiskFactor::FibroticChestXray,
        RiskFactor::RecentImmigrantHighBurden,
        RiskFactor::InjectionDrugUse,
        RiskFactor::HighRiskCongregateResident,
        RiskFactor::MycobacteriologyLabWorker,
        RiskFactor::ChildUnder4,
        RiskFactor::LivedLowIncidenceArea,
    ];
}

impl Questionnaire {
    pub fn has(&self, f: RiskFactor) -> bool {
        match f {
            RiskFactor::HivPositive => self.hiv_positive,
            RiskFactor::RecentTbContact => self.recent_tb_contact,
            RiskFactor::Immunosuppressed => self.immunosuppressed,
            RiskFactor::OrganTransplant => self.organ_transplant,
            RiskFactor::FibroticChestXray => self.fibrotic_chest_xray,
            RiskFactor::RecentImmigrantHighBurden => self.recent_immigrant_high_burden,
            RiskFactor::InjectionDrugUse => self.injection_drug_use,
            RiskFactor::HighRiskCongregateResident => self.high_risk_congregate_resident,
            RiskFactor::MycobacteriologyLabWorker => self.mycobacteriology_lab_worker,
            RiskFactor::ChildUnder4 => self.child_under_4,
            RiskFactor::LivedLowIncidenceArea => self.lived_low_incidence_area,
        }
    }

    pub fn set(&mut self, f: RiskFactor, v: bool) {
        let slot = match f {
            RiskFactor::HivPositive => &mut self.hiv_positive,
            RiskFactor::RecentTbContact => &mut self.recent_tb_contact,
            RiskFactor::Immunosuppressed => &mut self.immunosuppressed,
            RiskFactor::OrganTransplant => &mut self.organ_transplant,
            RiskFactor::FibroticChestXray => &mut self.fibrotic_chest_xray,
            RiskFactor::RecentImmigrantHighBurden => &mut self.recent_immigrant_high_burden,
            RiskFactor::InjectionDrugUse => &mut self.injection_drug_use,
            RiskFactor::HighRiskCongregateResident => &mut self.high_risk_congregate_resident,
            RiskFactor::MycobacteriologyLabWorker => &mut self.mycobacteriology_lab_worker,
            RiskFactor::ChildUnder4 => &mut self.child_under_4,
            RiskFactor::LivedLowIncidenceArea => &mut self.lived_low_incidence_area,
        };
        *slot = v;
    }

    /// Questionnaire whose bit `i` of `bits` answers `RiskFactor::ALL[i]`.
    pub fn from_bits(bits: u16) -> Self {
        let mut q = Self::default();
        for (i, f) in RiskFactor::ALL.iter().enumerate() {
            q.set(*f, bits & (1 << i) != 0);
        }
        q
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    /// Matches when any listed factor is answered yes.
    AnyOf(Vec<RiskFactor>),
    Always,
}

impl Predicate {
    pub fn matches(&self, q: &Questionnaire) -> bool {
        match self {
            Predicate::AnyOf(fs) => fs.iter().any(|&f| q.has(f)),
            Predicate::Always => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub id: String,
    pub when: Predicate,
    pub threshold_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RuleFile")]
pub struct RuleTable {
    rules: Vec<Rule>,
}

#[derive(Deserialize)]
struct RuleFile {
    rules: Vec<Rule>,
}

impl TryFrom<RuleFile> for RuleTable {
    type Error = InterpretError;

    fn try_from(f: RuleFile) -> Result<Self, Self::Error> {
        RuleTable::new(f.rules)
    }
}

impl Default for RuleTable {
    fn default() -> Self {
        use RiskFactor::*;
        Self {
            rules: vec![
                Rule {
                    id: "high_risk_5mm".into(),
                    when: Predicate::AnyOf(vec![
                        HivPositive,
                        RecentTbContact,
                        Immunosuppressed,
                        OrganTransplant,
                        FibroticChestXray,
                    ]),
                    threshold_mm: 5.0,
                },
                Rule {
                    id: "elevated_risk_10mm".into(),
                    when: Predicate::AnyOf(vec![
                        RecentImmigrantHighBurden,
                        InjectionDrugUse,
                        HighRiskCongregateResident,
                        MycobacteriologyLabWorker,
                        ChildUnder4,
                        LivedLowIncidenceArea,
                    ]),
                    threshold_mm: 10.0,
                },
                Rule {
                    id: "no_risk_15mm".into(),
                    when: Predicate::Always,
                    threshold_mm: 15.0,
                },
            ],
        }
    }
}

impl RuleTable {
    /// Rules must have positive, non-decreasing thresholds and end in an
    /// `Always` catch-all.
    pub fn new(rules: Vec<Rule>) -> Result<Self, InterpretError> {
        let bad = |m: String| Err(InterpretError::InvalidRules(m));
        match rules.last() {
            None => return bad("empty rule table".into()),
            Some(r) if r.when != Predicate::Always => {
                return bad(format!("last rule {:?} is not a catch-all", r.id))
            }
            _ => {}
        }
        for (i, r) in rules.iter().enumerate() {
            if !(r.threshold_mm.is_finite() && r.threshold_mm > 0.0) {
                return bad(format!("rule {:?} threshold {} is not positive", r.id, r.threshold_mm));
            }
            if i > 0 && rules[i - 1].threshold_mm > r.threshold_mm {
                return bad(format!("rule {:?} lowers the threshold order", r.id));
            }
            if rules[..i].iter().any(|o| o.id == r.id) {
                return bad(format!("duplicate rule id {:?}", r.id));
            }
        }
        Ok(Self { rules })
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn determine_threshold(&self, q: &Questionnaire) -> (f64, &str) {
        let rule = self
            .rules
            .iter()
            .find(|r| r.when.matches(q))
            .expect("table ends in a catch-all");
        (rule.threshold_mm, &rule.id)
    }

    pub fn classify(&self, diameter_mm: f64, q: &Questionnaire) -> Result<Assessment, InterpretError> {
        if !diameter_mm.is_finite() || diameter_mm < 0.0 {
            return Err(InterpretError::InvalidDiameter(diameter_mm));
        }
        let (threshold_mm, rule_id) = self.determine_threshold(q);
        let result = if diameter_mm >= threshold_mm {
            TstResult::Positive
        } else {
            TstResult::Negative
        };
        Ok(Assessment {
            diameter_mm,
            threshold_mm,
            result,
            rule_id: rule_id.to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TstResult {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    pub diameter_mm: f64,
    pub threshold_mm: f64,
    pub result: TstResult,
    pub rule_id: String,
}

pub fn determine_threshold<'a>(q: &Questionnaire, rules: &'a RuleTable) -> (f64, &'a str) {
    rules.determine_threshold(q)
}

pub fn classify(
    diameter_mm: f64,
    q: &Questionnaire,
    rules: &RuleTable,
) -> Result<Assessment, InterpretError> {
    rules.classify(diameter_mm, q)
}
