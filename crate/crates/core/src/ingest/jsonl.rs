//! One flow per line, each line tagged with `schema_version`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::flow::Flow;
use crate::{Error, Result};

pub const FLOW_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize)]
struct LineOut<'a> {
    schema_version: u32,
    #[serde(flatten)]
    flow: &'a Flow,
}

#[derive(Deserialize)]
struct LineIn {
    schema_version: u32,
    #[serde(flatten)]
    flow: Flow,
}

pub fn write_flows(path: impl AsRef<Path>, flows: &[Flow]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for flow in flows {
        serde_json::to_writer(
            &mut w,
            &LineOut {
                schema_version: FLOW_SCHEMA_VERSION,
                flow,
            },
        )?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_flows(path: impl AsRef<Path>) -> Result<Vec<Flow>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut flows = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LineIn = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), n + 1)))?;
        if rec.schema_version != FLOW_SCHEMA_VERSION {
            return Err(Error::Data(format!(
                "{}:{}: unsupported flow schema version {}",
                path.display(),
                n + 1,
                rec.schema_version
            )));
        }
        flows.push(rec.flow);
    }
    Ok(flows)
}
