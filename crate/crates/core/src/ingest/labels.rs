use std::path::Path;

use serde::{Deserialize, Serialize};

use super::flow::Flow;
use crate::classes::BACKGROUND;
use crate::{Error, Result};

/// Labels every flow whose session id contains `session` with `label`,
/// regardless of domain (sessions whose traffic all belongs to one app).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionRule {
    pub session: String,
    pub label: String,
}

/// Labels a flow with `label` when its domain contains `pattern`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainRule {
    pub pattern: String,
    pub label: String,
}

/// Ordered first-match labeling rules. Session rules are consulted before
/// domain rules; flows matching nothing get `fallback`. Matching is
/// ASCII case-insensitive substring search.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRuleSet {
    #[serde(default)]
    pub session_rules: Vec<SessionRule>,
    #[serde(default)]
    pub rules: Vec<DomainRule>,
    #[serde(default = "default_fallback")]
    pub fallback: String,
}

fn default_fallback() -> String {
    BACKGROUND.to_string()
}

impl Default for LabelRuleSet {
    fn default() -> Self {
        LabelRuleSet {
            session_rules: Vec::new(),
            rules: Vec::new(),
            fallback: default_fallback(),
        }
    }
}

impl LabelRuleSet {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let rules: LabelRuleSet = serde_json::from_str(&text)?;
        rules.validate()?;
        Ok(rules)
    }

    pub fn validate(&self) -> Result<()> {
        let empty = self.rules.iter().any(|r| r.pattern.is_empty())
            || self.session_rules.iter().any(|r| r.session.is_empty());
        if empty {
            return Err(Error::Config("label rule with empty pattern".into()));
        }
        if self.fallback.is_empty() {
            return Err(Error::Config("empty fallback label".into()));
        }
        Ok(())
    }

    pub fn label_for(&self, session_id: &str, domain: Option<&str>) -> &str {
        let session = session_id.to_ascii_lowercase();
        if let Some(r) = self
            .session_rules
            .iter()
            .find(|r| session.contains(&r.session.to_ascii_lowercase()))
        {
            return &r.label;
        }
        if let Some(domain) = domain {
            let domain = domain.to_ascii_lowercase();
            if let Some(r) = self
                .rules
                .iter()
                .find(|r| domain.contains(&r.pattern.to_ascii_lowercase()))
            {
                return &r.label;
            }
        }
        &self.fallback
    }
}

pub fn apply_labels(mut flows: Vec<Flow>, rules: &LabelRuleSet) -> Vec<Flow> {
    for f in &mut flows {
        f.label = Some(rules.label_for(&f.session_id, f.domain.as_deref()).to_string());
    }
    flows
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rules() -> LabelRuleSet {
        serde_json::from_str(
            r#"{
                "session_rules": [{"session": "gaming", "label": "Gaming"}],
                "rules": [
                    {"pattern": "netflix", "label": "Video"},
                    {"pattern": "net", "label": "WebBrowsing"}
                ]
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn first_match_wins() {
        let r = rules();
        assert_eq!(r.label_for("video-1", Some("video.netflix.example")), "Video");
        assert_eq!(r.label_for("web-1", Some("www.example.net")), "WebBrowsing");
    }

    #[test]
    fn unmatched_is_background() {
        assert_eq!(rules().label_for("web-1", Some("ads.tracker.example")), "Background");
        assert_eq!(rules().label_for("web-1", None), "Background");
    }

    #[test]
    fn keep_all_session_ignores_domain() {
        let r = rules();
        assert_eq!(r.label_for("Gaming-console-3", None), "Gaming");
        assert_eq!(r.label_for("gaming-3", Some("video.netflix.example")), "Gaming");
    }
}
