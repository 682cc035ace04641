//! Ordered class vocabularies.
//!
//! Numeric stages (encoder heads, similarity vectors, confusion matrices)
//! refer to classes by their index in a [`ClassSet`]; files carry names.
//! Index order is the tie-break order everywhere a tie can occur.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Name of the distinguished class for generic background traffic.
pub const BACKGROUND: &str = "Background";

/// Canonical ten-class vocabulary, in tie-break order.
pub const DEFAULT_CLASSES: [&str; 10] = [
    "WebBrowsing",
    "SocialMedia",
    "Video",
    "Email",
    "VoIP",
    "Chat",
    "Gaming",
    "OnlineDocs",
    "Azure",
    BACKGROUND,
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSet {
    names: Vec<String>,
}

impl ClassSet {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::Config("class set is empty".into()));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Error::Config(format!("duplicate class `{n}`")));
            }
        }
        Ok(ClassSet { names })
    }

    pub fn default_ten() -> Self {
        ClassSet {
            names: DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Builds a class set from the labels present in a data set.
    ///
    /// Names from the canonical vocabulary keep their canonical order;
    /// any other names follow, sorted, with `Background` always last.
    pub fn infer<'a, I>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut seen: Vec<&str> = Vec::new();
        for l in labels {
            if !seen.contains(&l) {
                seen.push(l);
            }
        }
        let rank = |n: &str| {
            if n == BACKGROUND {
                (2, usize::MAX)
            } else {
                match DEFAULT_CLASSES.iter().position(|c| *c == n) {
                    Some(i) => (0, i),
                    None => (1, 0),
                }
            }
        };
        seen.sort_by(|a, b| rank(a).cmp(&rank(b)).then_with(|| a.cmp(b)));
        ClassSet::new(seen)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn require_id(&self, name: &str) -> Result<usize> {
        self.id(name)
            .ok_or_else(|| Error::Data(format!("label `{name}` is not in the class set")))
    }

    pub fn background(&self) -> Option<usize> {
        self.id(BACKGROUND)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infer_orders_canonically() {
        let cs = ClassSet::infer(["Background", "zeta", "Video", "WebBrowsing", "alpha"]).unwrap();
        assert_eq!(
            cs.names(),
            &["WebBrowsing", "Video", "alpha", "zeta", "Background"]
        );
        assert_eq!(cs.background(), Some(4));
    }

    #[test]
    fn duplicates_rejected() {
        assert!(ClassSet::new(["a", "b", "a"]).is_err());
    }
}
