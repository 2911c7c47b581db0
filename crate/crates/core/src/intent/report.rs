//! Parsing of structured model output.

use super::prompt::{in_order, AUDIT_OUTPUT_SECTIONS, PROFILE_OUTPUT_SECTIONS};
use crate::graph::Edge;
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::OnceLock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Low,
    Medium,
    High,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Low => "Low",
            Verdict::Medium => "Medium",
            Verdict::High => "High",
        })
    }
}

/// Fields extracted from the Risk Verdict section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictFields {
    pub verdict: Verdict,
    pub confidence: f64,
    pub signals: Vec<String>,
    /// Set when parsing failed and the fields are the degraded defaults.
    pub degraded: bool,
}

impl VerdictFields {
    pub fn degraded() -> Self {
        Self {
            verdict: Verdict::Medium,
            confidence: 0.0,
            signals: Vec::new(),
            degraded: true,
        }
    }
}

/// One audited suspicious connection `r_uv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub edge: Edge,
    pub text: String,
    pub verdict: Verdict,
    pub confidence: f64,
    pub signals: Vec<String>,
    pub degraded: bool,
}

impl AuditReport {
    pub fn from_text(edge: Edge, text: String, strict: bool) -> Self {
        let f = parse_audit_report(&text, strict);
        Self {
            edge,
            text,
            verdict: f.verdict,
            confidence: f.confidence,
            signals: f.signals,
            degraded: f.degraded,
        }
    }

    /// Report standing in for an audit whose completion failed.
    pub fn failed(edge: Edge) -> Self {
        let f = VerdictFields::degraded();
        Self {
            edge,
            text: String::new(),
            verdict: f.verdict,
            confidence: f.confidence,
            signals: f.signals,
            degraded: true,
        }
    }
}

fn regexes() -> &'static (Regex, Regex, Regex, Regex) {
    static RE: OnceLock<(Regex, Regex, Regex, Regex)> = OnceLock::new();
    RE.get_or_init(|| {
        (
            Regex::new(r"(?i)\b(low|medium|med|high)\b").unwrap(),
            Regex::new(r"(?i)confidence\W*?(-?\d+(?:\.\d+)?)").unwrap(),
            Regex::new(r"^\s*(?:[-*\u{2022}]|\d+[.)])\s+(.+?)\s*$").unwrap(),
            Regex::new(r"(?i)key\s+(?:signals|evidence)").unwrap(),
        )
    })
}

/// Extracts verdict, confidence and exactly three key signals from an audit
/// report. Lenient mode matches headings and verdicts case-insensitively
/// and tolerates markdown decoration; strict mode requires exact casing.
/// Any failure yields [`VerdictFields::degraded`].
pub fn parse_audit_report(text: &str, strict: bool) -> VerdictFields {
    try_parse(text, strict).unwrap_or_else(VerdictFields::degraded)
}

fn try_parse(text: &str, strict: bool) -> Option<VerdictFields> {
    let (verdict_re, conf_re, item_re, signals_re) = regexes();
    let heading = "risk verdict";
    let start = if strict {
        text.rfind("Risk Verdict")?
    } else {
        text.to_ascii_lowercase().rfind(heading)?
    };
    let section = &text[start + heading.len()..];

    let verdict = verdict_re.captures_iter(section).find_map(|c| {
        let word = c.get(1)?.as_str();
        if strict {
            match word {
                "Low" => Some(Verdict::Low),
                "Medium" => Some(Verdict::Medium),
                "High" => Some(Verdict::High),
                _ => None,
            }
        } else {
            match word.to_lowercase().as_str() {
                "low" => Some(Verdict::Low),
                "medium" | "med" => Some(Verdict::Medium),
                "high" => Some(Verdict::High),
                _ => None,
            }
        }
    })?;

    let confidence: f64 = conf_re.captures(section)?.get(1)?.as_str().parse().ok()?;
    if !(0.0..=1.0).contains(&confidence) {
        return None;
    }

    let list_start = signals_re.find(section).map_or(0, |m| m.end());
    let signals: Vec<String> = section[list_start..]
        .lines()
        .filter_map(|l| {
            item_re
                .captures(l)
                .map(|c| c[1].trim_matches('*').trim().to_string())
        })
        .filter(|s| !s.is_empty())
        .collect();
    if signals.len() != 3 {
        return None;
    }
    Some(VerdictFields {
        verdict,
        confidence,
        signals,
        degraded: false,
    })
}

/// True when the four profile sections appear in order.
pub fn profile_sections_ok(text: &str) -> bool {
    in_order(text, &PROFILE_OUTPUT_SECTIONS)
}

/// True when the five audit sections appear in order.
pub fn audit_sections_ok(text: &str) -> bool {
    in_order(text, &AUDIT_OUTPUT_SECTIONS)
}
