//! `key=value` report records, one per line.
//!
//! Floating-point fields are written in the shortest form that parses back
//! to the same `f64`, so a record round-trips exactly.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReportLine {
    fields: Vec<(String, String)>,
}

impl ReportLine {
    pub fn new(check: &str) -> Self {
        Self::default().with("check", check)
    }

    pub fn with(mut self, key: &str, value: impl fmt::Display) -> Self {
        self.push(key, value);
        self
    }

    pub fn with_f64(self, key: &str, value: f64) -> Self {
        self.with(key, format_f64(value))
    }

    pub fn push(&mut self, key: &str, value: impl fmt::Display) {
        let value = value.to_string();
        assert!(
            !key.contains(['=', ' ']) && !value.contains(char::is_whitespace),
            "report fields must not contain separators: {key}={value}"
        );
        self.fields.push((key.to_owned(), value));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key)?.parse().ok()
    }

    pub fn passed(&self) -> Option<bool> {
        self.get("passed")?.parse().ok()
    }

    pub fn fields(&self) -> &[(String, String)] {
        &self.fields
    }
}

/// Shortest round-trip rendering in exponent form, e.g. `1.5e-12`.
pub fn format_f64(v: f64) -> String {
    format!("{v:e}")
}

impl fmt::Display for ReportLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (k, v)) in self.fields.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

impl FromStr for ReportLine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut line = ReportLine::default();
        for tok in s.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("report token without '=': {tok:?}")))?;
            line.fields.push((k.to_owned(), v.to_owned()));
        }
        if line.get("check").is_none() {
            return Err(Error::Format("report line has no check field".into()));
        }
        Ok(line)
    }
}
