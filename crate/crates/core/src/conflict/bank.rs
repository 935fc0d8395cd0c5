use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::fact::SurfaceTriple;
use crate::kg::RelationId;

/// Demonstrations embedded per generation prompt.
pub const DEMOS_PER_PROMPT: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemoStatus {
    Pending,
    Accepted,
    Rejected,
}

/// One curated (original → replacement) example for a relation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub id: String,
    pub relation: RelationId,
    pub original: SurfaceTriple,
    pub replacement: Vec<SurfaceTriple>,
    pub status: DemoStatus,
}

/// Few-shot demonstrations, in file order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FewShotBank {
    pub demos: Vec<Demonstration>,
}

impl FewShotBank {
    /// Read line-delimited JSON demonstrations; blank lines are skipped and
    /// errors name the line.
    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self, String> {
        let mut demos = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| format!("line {}: {e}", i + 1))?;
            if line.trim().is_empty() {
                continue;
            }
            demos.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?);
        }
        Ok(FewShotBank { demos })
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for d in &self.demos {
            serde_json::to_writer(&mut out, d)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// The first accepted demonstrations for `relation`, at most three.
    pub fn for_prompt(&self, relation: &RelationId) -> Vec<&Demonstration> {
        self.demos
            .iter()
            .filter(|d| &d.relation == relation && d.status == DemoStatus::Accepted)
            .take(DEMOS_PER_PROMPT)
            .collect()
    }
}
