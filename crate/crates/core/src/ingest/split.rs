use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use super::flow::Flow;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Partitions flows by session so that no session feeds both sets.
pub fn split_sessions(
    flows: Vec<Flow>,
    assignment: &BTreeMap<String, Split>,
) -> Result<(Vec<Flow>, Vec<Flow>)> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for f in flows {
        match assignment.get(&f.session_id) {
            Some(Split::Train) => train.push(f),
            Some(Split::Test) => test.push(f),
            None => {
                return Err(Error::Config(format!(
                    "session `{}` has no train/test assignment",
                    f.session_id
                )))
            }
        }
    }
    if test.is_empty() {
        warn!("session split produced an empty test set");
    }
    if train.is_empty() {
        warn!("session split produced an empty training set");
    }
    Ok((train, test))
}
