//! Deterministic offline stand-in for the completion model.
//!
//! The mock reads only the rendered prompt. Profiles restate the target's
//! trace digest (timing, rating shape, recurring wording, tone) and compare it
//! with the reference cases; audits derive a verdict from the rating and
//! timing divergence between the two endpoints.

use super::client::{LlmBackend, LlmError};
use super::encoder::tokenize;
use super::prompt::{sentiment, Prompt, PromptKind};
use chrono::NaiveDate;
use regex::Regex;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;
use std::sync::OnceLock;

pub const MOCK_MODEL_ID: &str = "mock-intent-v1";

/// Window used to detect bursts of activity, in days.
const BURST_WINDOW_DAYS: i64 = 3;

#[derive(Debug, Clone, Default)]
pub struct MockBackend;

impl MockBackend {
    pub fn new() -> Self {
        Self
    }
}

impl LlmBackend for MockBackend {
    fn model_id(&self) -> &str {
        MOCK_MODEL_ID
    }

    fn complete(&self, prompt: &Prompt) -> Result<String, LlmError> {
        Ok(match prompt.kind {
            PromptKind::Profile => mock_profile(&prompt.user),
            PromptKind::Audit => mock_audit(&prompt.user),
        })
    }
}

/// A trace record recovered from prompt text.
#[derive(Debug, Clone, PartialEq)]
struct ParsedRecord {
    day: i64,
    item: String,
    rating: u8,
    text: String,
    helpfulness: f64,
}

fn record_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s+\d+\.\s+(.*)$").unwrap())
}

fn parse_record(body: &str) -> Option<ParsedRecord> {
    let parts: Vec<&str> = body.split(" | ").collect();
    if parts.len() < 5 {
        return None;
    }
    let date = NaiveDate::parse_from_str(parts[0], "%Y-%m-%d").ok()?;
    let day = date
        .signed_duration_since(NaiveDate::from_ymd_opt(1970, 1, 1)?)
        .num_days();
    let item = parts[1].strip_prefix("Product ")?.to_string();
    let rating = parts[2].strip_suffix(" stars")?.parse().ok()?;
    let last = parts[parts.len() - 1];
    let helpfulness = last.strip_prefix("Helpfulness ")?.parse().ok()?;
    let text = parts[3..parts.len() - 1].join(" | ");
    let text = text.trim_matches('"').to_string();
    Some(ParsedRecord {
        day,
        item,
        rating,
        text,
        helpfulness,
    })
}

/// Records listed under the first line starting with `header`.
fn trace_block(user: &str, header: &str) -> Vec<ParsedRecord> {
    let mut lines = user.lines().skip_while(|l| !l.starts_with(header));
    if lines.next().is_none() {
        return Vec::new();
    }
    lines
        .map_while(|l| record_re().captures(l).map(|c| c[1].to_string()))
        .filter_map(|b| parse_record(&b))
        .collect()
}

#[derive(Debug, Clone)]
struct Digest {
    n: usize,
    mean_rating: f64,
    same_rating: Option<u8>,
    extreme_share: f64,
    burst_share: f64,
    items: BTreeSet<String>,
    recurring: Vec<String>,
    sentiment: f64,
    helpfulness: f64,
}

impl Digest {
    fn of(records: &[ParsedRecord]) -> Self {
        let n = records.len();
        let nf = n.max(1) as f64;
        let mean_rating = records.iter().map(|r| r.rating as f64).sum::<f64>() / nf;
        let same_rating = match records.first() {
            Some(first) if n >= 2 && records.iter().all(|r| r.rating == first.rating) => {
                Some(first.rating)
            }
            _ => None,
        };
        let extreme_share = records
            .iter()
            .filter(|r| r.rating == 1 || r.rating == 5)
            .count() as f64
            / nf;
        // Largest number of records inside any window starting at a record.
        let mut best = 0;
        for (i, r) in records.iter().enumerate() {
            let inside = records[i..]
                .iter()
                .take_while(|s| s.day - r.day <= BURST_WINDOW_DAYS)
                .count();
            best = best.max(inside);
        }
        let burst_share = best as f64 / nf;
        let mut doc_freq: BTreeMap<String, usize> = BTreeMap::new();
        for r in records {
            let toks: BTreeSet<String> = tokenize(&r.text)
                .filter(|t| t.len() >= 3 && !t.chars().all(|c| c.is_ascii_digit()))
                .collect();
            for t in toks {
                *doc_freq.entry(t).or_default() += 1;
            }
        }
        let mut recurring: Vec<(String, usize)> = doc_freq
            .into_iter()
            .filter(|&(_, c)| c >= 2 && 2 * c >= n)
            .collect();
        recurring.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let joined: Vec<&str> = records.iter().map(|r| r.text.as_str()).collect();
        Self {
            n,
            mean_rating,
            same_rating,
            extreme_share,
            burst_share,
            items: records.iter().map(|r| r.item.clone()).collect(),
            recurring: recurring.into_iter().take(5).map(|(t, _)| t).collect(),
            sentiment: sentiment(&joined.join(" ")),
            helpfulness: records.iter().map(|r| r.helpfulness).sum::<f64>() / nf,
        }
    }

    fn bursty(&self) -> bool {
        self.n >= 3 && self.burst_share >= 0.6
    }

    fn timing_phrase(&self) -> &'static str {
        if self.n < 2 {
            "has too few reviews to judge timing"
        } else if self.bursty() {
            "posts in a tight burst within a few days"
        } else {
            "posts at irregular intervals spread over time"
        }
    }

    fn rating_phrase(&self) -> String {
        if let Some(r) = self.same_rating {
            format!("Every review gives the same {r} star rating.")
        } else if self.n >= 2 && self.extreme_share >= 0.8 {
            "Ratings sit almost entirely at the extremes of the scale.".into()
        } else if self.n == 0 {
            "There are no ratings to assess.".into()
        } else {
            "Ratings vary across the scale.".into()
        }
    }

    fn tone_phrase(&self) -> &'static str {
        if self.sentiment > 0.6 {
            "Review language is uniformly enthusiastic."
        } else if self.sentiment < -0.3 {
            "Review language is largely negative."
        } else {
            "Review language is mixed in tone."
        }
    }

    fn helpfulness_phrase(&self) -> &'static str {
        if self.n == 0 {
            "No helpfulness feedback exists."
        } else if self.helpfulness >= 0.5 {
            "Readers generally found the reviews helpful."
        } else {
            "Readers rarely found the reviews helpful."
        }
    }
}

fn capture_f64(re: &Regex, line: &str) -> Option<f64> {
    re.captures(line)?.get(1)?.as_str().parse().ok()
}

/// Mean (avg rating, sentiment) of one group of reference cases.
type Centroid = Option<(f64, f64)>;

/// Centroids of the fraud and benign reference cases.
fn reference_centroids(user: &str) -> (Centroid, Centroid) {
    static RE: OnceLock<(Regex, Regex)> = OnceLock::new();
    let (avg_re, sent_re) = RE.get_or_init(|| {
        (
            Regex::new(r"Avg rating (-?\d+(?:\.\d+)?)").unwrap(),
            Regex::new(r"Sentiment score (-?\d+(?:\.\d+)?)").unwrap(),
        )
    });
    let mut acc = [(0.0, 0.0, 0usize); 2];
    for line in user.lines().filter(|l| l.trim_start().starts_with("Case ")) {
        let slot = if line.contains("(fraud reference)") {
            1
        } else if line.contains("(benign reference)") {
            0
        } else {
            continue;
        };
        if let (Some(a), Some(s)) = (capture_f64(avg_re, line), capture_f64(sent_re, line)) {
            acc[slot].0 += a;
            acc[slot].1 += s;
            acc[slot].2 += 1;
        }
    }
    let mean = |(a, s, c): (f64, f64, usize)| (c > 0).then(|| (a / c as f64, s / c as f64));
    (mean(acc[1]), mean(acc[0]))
}

fn mock_profile(user: &str) -> String {
    let target = user.split("[Target Node]").nth(1).unwrap_or("");
    let records = trace_block(target, "Review Traces");
    let d = Digest::of(&records);
    let (fraud_ref, benign_ref) = reference_centroids(user);

    let mut out = String::new();
    out.push_str("User Profile Summary\n");
    if d.n == 0 {
        out.push_str("The user has no recorded reviews.\n");
    } else {
        let _ = writeln!(
            out,
            "The user wrote {} reviews on {} products with an average rating of {:.1} stars.",
            d.n,
            d.items.len(),
            d.mean_rating
        );
    }

    out.push_str("\nBehavior Pattern Analysis\n");
    let _ = writeln!(out, "The user {}.", d.timing_phrase());
    let _ = writeln!(out, "{}", d.rating_phrase());
    let _ = writeln!(out, "{}", d.helpfulness_phrase());

    out.push_str("\nFraud Signal Analysis\n");
    if d.recurring.is_empty() {
        out.push_str("No wording recurs across reviews.\n");
    } else {
        let _ = writeln!(
            out,
            "Recurring wording across reviews: {}.",
            d.recurring.join(", ")
        );
    }
    let _ = writeln!(out, "{}", d.tone_phrase());
    let closer_to_fraud = match (fraud_ref, benign_ref) {
        (Some(f), Some(b)) if d.n > 0 => {
            let dist = |(a, s): (f64, f64)| {
                (d.mean_rating - a).abs() / 4.0 + (d.sentiment - s).abs() / 2.0
            };
            let fraud_closer = dist(f) < dist(b);
            let _ = writeln!(
                out,
                "Rating and tone levels sit closer to the {} reference cases.",
                if fraud_closer {
                    "suspicious"
                } else {
                    "ordinary"
                }
            );
            fraud_closer
        }
        _ => {
            out.push_str("No usable reference comparison is available.\n");
            false
        }
    };

    out.push_str("\nOverall Assessment\n");
    let signals = [
        d.bursty(),
        d.same_rating.is_some() || (d.n >= 2 && d.extreme_share >= 0.8),
        !d.recurring.is_empty(),
        closer_to_fraud,
    ]
    .iter()
    .filter(|&&s| s)
    .count();
    out.push_str(match signals {
        0 => "Observed behavior is consistent with ordinary purchasing activity; no coordinated intent is apparent.\n",
        1 => "One irregular signal appears, but the overall behavior can still be explained by ordinary use.\n",
        2 => "Several irregular signals co-occur, suggesting possible promotional intent that warrants review.\n",
        _ => "Multiple coordinated signals align, pointing to deliberate promotional intent behind the activity.\n",
    });
    out
}

fn mock_audit(user: &str) -> String {
    static RE: OnceLock<Regex> = OnceLock::new();
    let ids_re = RE.get_or_init(|| {
        Regex::new(r"User A (\S+) \(Suspected Fraud Node\) & User B (\S+) \(").unwrap()
    });
    let (uid_a, uid_b) = ids_re
        .captures(user)
        .map(|c| (c[1].to_string(), c[2].to_string()))
        .unwrap_or_else(|| ("A".into(), "B".into()));
    let a = Digest::of(&trace_block(user, "User A Review Traces"));
    let b = Digest::of(&trace_block(user, "User B Review Traces"));

    let timing_div = a.burst_share - b.burst_share;
    let rating_div = ((a.mean_rating - b.mean_rating) / 4.0).clamp(-1.0, 1.0);
    let score =
        (0.5 + 0.35 * timing_div + 0.15 * rating_div + 0.15 * (a.extreme_share - b.extreme_share))
            .clamp(0.0, 1.0);
    let verdict = if score >= 0.65 {
        "High"
    } else if score <= 0.45 {
        "Low"
    } else {
        "Medium"
    };
    let confidence = (0.5 + (score - 0.5).abs()).min(1.0);
    let shared_items = a.items.intersection(&b.items).count();
    let shared_words: Vec<&String> = a
        .recurring
        .iter()
        .filter(|t| b.recurring.contains(t))
        .collect();

    let mut out = String::new();
    let _ = writeln!(
        out,
        "Connection Overview\nUser A {uid_a} sits on the high-risk side and User B {uid_b} on the low-risk side of this connection.\n"
    );
    let _ = writeln!(
        out,
        "Behavior Difference\nUser A averages {:.1} stars while User B averages {:.1}. User A {}, whereas User B {}. The two users share {} products.\n",
        a.mean_rating,
        b.mean_rating,
        a.timing_phrase(),
        b.timing_phrase(),
        shared_items
    );
    out.push_str("Connection Intent Analysis\n");
    out.push_str(match verdict {
        "High" => "The link looks like camouflage: coordinated activity on one side borrows legitimacy from an ordinary reviewer.\n\n",
        "Low" => "The link looks incidental: both users behave alike and the connection likely reflects shared interests.\n\n",
        _ => "The intent behind the link is ambiguous; the behavioral contrast is only partial.\n\n",
    });
    out.push_str("Counter Evidence and Uncertainty\n");
    if shared_words.is_empty() {
        out.push_str("The two histories share no distinctive wording.");
    } else {
        let words: Vec<&str> = shared_words.iter().map(|s| s.as_str()).collect();
        let _ = write!(
            out,
            "Shared wording ({}) could reflect common product vocabulary.",
            words.join(", ")
        );
    }
    if a.n < 3 || b.n < 3 {
        out.push_str(" Short histories limit certainty.");
    }
    out.push_str("\n\n");
    let _ = write!(
        out,
        "Risk Verdict\nRisk level: {verdict}\nConfidence: {confidence:.2}\nKey signals:\n1. timing contrast: burst share {:.2} against {:.2}\n2. rating contrast: average gap {:+.1} stars\n3. overlap: {} shared products\n",
        a.burst_share,
        b.burst_share,
        a.mean_rating - b.mean_rating,
        shared_items
    );
    out
}
