//! Verdict reports shared by all checkers.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Holds,
    Fails,
    HypothesesUnmet,
    Undetermined,
    NotApplicable,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Holds => "HOLDS",
            Status::Fails => "FAILS",
            Status::HypothesesUnmet => "HYPOTHESES_UNMET",
            Status::Undetermined => "UNDETERMINED",
            Status::NotApplicable => "NOT_APPLICABLE",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Status::Holds,
            Status::Fails,
            Status::HypothesesUnmet,
            Status::Undetermined,
            Status::NotApplicable,
        ]
        .into_iter()
        .find(|v| v.as_str() == s)
    }

    /// Process exit code for a run ending in this status.
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Holds => 0,
            Status::Fails => 1,
            Status::HypothesesUnmet | Status::Undetermined | Status::NotApplicable => 2,
        }
    }
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ItemStatus {
    Pass,
    Fail,
    Undetermined,
}

impl ItemStatus {
    pub fn from_bool(pass: bool) -> Self {
        if pass {
            ItemStatus::Pass
        } else {
            ItemStatus::Fail
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckItem {
    pub name: String,
    pub status: ItemStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub required: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl CheckItem {
    pub fn new(name: impl Into<String>, status: ItemStatus) -> Self {
        Self {
            name: name.into(),
            status,
            value: None,
            required: None,
            margin: None,
            witness: None,
            detail: None,
        }
    }

    pub fn pass(name: impl Into<String>, pass: bool) -> Self {
        Self::new(name, ItemStatus::from_bool(pass))
    }

    pub fn value(mut self, v: f64) -> Self {
        self.value = Some(v);
        self
    }

    pub fn required(mut self, r: impl Into<String>) -> Self {
        self.required = Some(r.into());
        self
    }

    pub fn margin(mut self, m: f64) -> Self {
        self.margin = Some(m);
        self
    }

    pub fn witness(mut self, x: f64) -> Self {
        self.witness = Some(x);
        self
    }

    pub fn detail(mut self, d: impl Into<String>) -> Self {
        self.detail = Some(d.into());
        self
    }

    pub fn passed(&self) -> bool {
        self.status == ItemStatus::Pass
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerdictReport {
    pub checker: String,
    pub status: Status,
    pub hypotheses: Vec<CheckItem>,
    pub conclusions: Vec<CheckItem>,
    pub notes: Vec<String>,
    pub details: BTreeMap<String, Value>,
}

impl VerdictReport {
    pub fn new(checker: impl Into<String>) -> Self {
        Self {
            checker: checker.into(),
            status: Status::Undetermined,
            hypotheses: Vec::new(),
            conclusions: Vec::new(),
            notes: Vec::new(),
            details: BTreeMap::new(),
        }
    }

    pub fn hypothesis(&mut self, item: CheckItem) -> &mut Self {
        self.hypotheses.push(item);
        self
    }

    pub fn conclusion(&mut self, item: CheckItem) -> &mut Self {
        self.conclusions.push(item);
        self
    }

    pub fn note(&mut self, note: impl Into<String>) -> &mut Self {
        self.notes.push(note.into());
        self
    }

    pub fn detail<T: Serialize>(&mut self, key: &str, value: T) -> &mut Self {
        let v = serde_json::to_value(value).unwrap_or(Value::Null);
        self.details.insert(key.to_string(), v);
        self
    }

    pub fn hypotheses_pass(&self) -> bool {
        self.hypotheses.iter().all(CheckItem::passed)
    }

    pub fn hypothesis_named(&self, name: &str) -> Option<&CheckItem> {
        self.hypotheses.iter().find(|i| i.name == name)
    }

    pub fn conclusion_named(&self, name: &str) -> Option<&CheckItem> {
        self.conclusions.iter().find(|i| i.name == name)
    }

    /// Derives the overall status: a failed hypothesis gives
    /// HYPOTHESES_UNMET, an undecided one UNDETERMINED; then a failed
    /// conclusion gives FAILS, an undecided one UNDETERMINED; otherwise HOLDS.
    pub fn finish(mut self) -> Self {
        let any = |items: &[CheckItem], s: ItemStatus| items.iter().any(|i| i.status == s);
        self.status = if any(&self.hypotheses, ItemStatus::Fail) {
            Status::HypothesesUnmet
        } else if any(&self.hypotheses, ItemStatus::Undetermined) {
            Status::Undetermined
        } else if any(&self.conclusions, ItemStatus::Fail) {
            Status::Fails
        } else if any(&self.conclusions, ItemStatus::Undetermined) {
            Status::Undetermined
        } else {
            Status::Holds
        };
        self
    }

    pub fn not_applicable(mut self, why: impl Into<String>) -> Self {
        self.status = Status::NotApplicable;
        self.notes.push(why.into());
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_precedence() {
        let mut r = VerdictReport::new("t");
        r.hypothesis(CheckItem::pass("h", true));
        r.conclusion(CheckItem::pass("c", true));
        assert_eq!(r.clone().finish().status, Status::Holds);
        r.conclusion(CheckItem::new("c2", ItemStatus::Undetermined));
        assert_eq!(r.clone().finish().status, Status::Undetermined);
        r.conclusion(CheckItem::pass("c3", false));
        assert_eq!(r.clone().finish().status, Status::Fails);
        r.hypothesis(CheckItem::pass("h2", false));
        assert_eq!(r.finish().status, Status::HypothesesUnmet);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(Status::Holds.exit_code(), 0);
        assert_eq!(Status::Fails.exit_code(), 1);
        assert_eq!(Status::NotApplicable.exit_code(), 2);
        assert_eq!(Status::parse("HYPOTHESES_UNMET"), Some(Status::HypothesesUnmet));
        let j = serde_json::to_string(&Status::HypothesesUnmet).unwrap();
        assert_eq!(j, "\"HYPOTHESES_UNMET\"");
    }
}
