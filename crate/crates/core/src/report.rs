//! Structured pass/fail records.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// How a residual is scored against the report tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResidualKind {
    /// Inequality: passes when `value ≥ −tol`.
    AtLeast,
    /// Strict positivity: passes when `value > tol`.
    Positive,
    /// Equality: passes when `|value| ≤ tol`.
    Zero,
    /// Diagnostic only.
    #[default]
    Info,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub label: String,
    #[serde(serialize_with = "finite_or_null", deserialize_with = "null_as_nan")]
    pub value: f64,
    #[serde(skip)]
    pub kind: ResidualKind,
}

impl Residual {
    pub fn passes(&self, tol: f64) -> bool {
        match self.kind {
            ResidualKind::AtLeast => self.value >= -tol,
            ResidualKind::Positive => self.value > tol,
            ResidualKind::Zero => self.value.abs() <= tol,
            ResidualKind::Info => true,
        }
    }
}

fn finite_or_null<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

fn null_as_nan<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

/// Outcome of one lemma or inequality check.
///
/// `passed` is derived from the residuals when the report is built and is
/// never set independently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub name: String,
    pub passed: bool,
    pub residuals: Vec<Residual>,
    #[serde(rename = "tolerance")]
    pub tolerance_used: f64,
    pub notes: String,
}

impl VerificationReport {
    pub fn builder(name: impl Into<String>, tol: f64) -> ReportBuilder {
        ReportBuilder {
            name: name.into(),
            tol,
            residuals: Vec::new(),
            notes: Vec::new(),
        }
    }

    /// Value of the first residual with this label.
    pub fn residual(&self, label: &str) -> Option<f64> {
        self.residuals
            .iter()
            .find(|r| r.label == label)
            .map(|r| r.value)
    }

    /// Failed report carrying an error message, for checks that could not run.
    pub fn errored(name: impl Into<String>, tol: f64, message: impl Into<String>) -> Self {
        Self::builder(name, tol)
            .at_least("evaluated", -1.0)
            .note(message)
            .finish()
    }
}

#[derive(Debug, Clone)]
pub struct ReportBuilder {
    name: String,
    tol: f64,
    residuals: Vec<Residual>,
    notes: Vec<String>,
}

impl ReportBuilder {
    fn push(mut self, label: impl Into<String>, value: f64, kind: ResidualKind) -> Self {
        self.residuals.push(Residual {
            label: label.into(),
            value,
            kind,
        });
        self
    }

    pub fn at_least(self, label: impl Into<String>, value: f64) -> Self {
        self.push(label, value, ResidualKind::AtLeast)
    }

    pub fn positive(self, label: impl Into<String>, value: f64) -> Self {
        self.push(label, value, ResidualKind::Positive)
    }

    pub fn zero(self, label: impl Into<String>, value: f64) -> Self {
        self.push(label, value, ResidualKind::Zero)
    }

    pub fn info(self, label: impl Into<String>, value: f64) -> Self {
        self.push(label, value, ResidualKind::Info)
    }

    pub fn note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }

    pub fn finish(self) -> VerificationReport {
        let tol = self.tol;
        let passed = self.residuals.iter().all(|r| r.passes(tol));
        VerificationReport {
            name: self.name,
            passed,
            residuals: self.residuals,
            tolerance_used: tol,
            notes: self.notes.join("; "),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn passed_follows_residuals() {
        let r = VerificationReport::builder("x", 1e-8)
            .at_least("a", -1e-9)
            .zero("b", 5e-9)
            .info("c", -100.0)
            .finish();
        assert!(r.passed);
        let r = VerificationReport::builder("x", 1e-8)
            .at_least("a", -1e-7)
            .finish();
        assert!(!r.passed);
        let r = VerificationReport::builder("x", 1e-8).zero("b", f64::NAN).finish();
        assert!(!r.passed);
        let r = VerificationReport::builder("x", 1e-8).positive("p", 1e-8).finish();
        assert!(!r.passed);
    }

    #[test]
    fn json_shape() {
        let r = VerificationReport::builder("check", 0.5)
            .at_least("gap", 1.25)
            .zero("bad", f64::INFINITY)
            .note("hello")
            .finish();
        let text = serde_json::to_string(&r).unwrap();
        assert_eq!(
            text,
            r#"{"name":"check","passed":false,"residuals":[{"label":"gap","value":1.25},{"label":"bad","value":null}],"tolerance":0.5,"notes":"hello"}"#
        );
        let back: VerificationReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back.name, "check");
        assert!(back.residuals[1].value.is_nan());
    }
}
