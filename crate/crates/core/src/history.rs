//! Plot-ready history files.
//!
//! Lines starting with `#` carry run metadata as `# key: <json>`; the rest is
//! a comma-separated table with a fixed column order. The best vector is
//! space-separated inside its column.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::arch::SparsityTargets;
use crate::fitness::EvaluatorDescriptor;
use crate::ide::{IdeConfig, SearchHistory};

pub const COLUMNS: [&str; 5] = [
    "generation",
    "best_fitness",
    "evaluations",
    "reinitializations",
    "best_vector",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub config: IdeConfig,
    /// Decimal string; the size routinely exceeds 64 bits.
    pub space_size: String,
    pub evaluator: EvaluatorDescriptor,
    pub arch: Option<String>,
    pub targets: Option<SparsityTargets>,
    pub steps: Option<Vec<i64>>,
}

pub fn write_history<W: Write>(
    mut out: W,
    meta: &RunMetadata,
    history: &SearchHistory,
) -> io::Result<()> {
    writeln!(out, "# chanprune search history")?;
    writeln!(out, "# config: {}", json(&meta.config))?;
    writeln!(out, "# space_size: {}", meta.space_size)?;
    writeln!(out, "# evaluator: {}", json(&meta.evaluator))?;
    if let Some(arch) = &meta.arch {
        writeln!(out, "# arch: {arch}")?;
    }
    if let Some(t) = &meta.targets {
        writeln!(out, "# targets: {}", json(t))?;
    }
    if let Some(steps) = &meta.steps {
        writeln!(out, "# steps: {}", json(steps))?;
    }
    writeln!(out, "{}", COLUMNS.join(","))?;
    for r in &history.records {
        let vector = r
            .best_vector
            .0
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        writeln!(
            out,
            "{},{},{},{},{}",
            r.generation, r.best_fitness, r.evaluations, r.reinitializations, vector
        )?;
    }
    out.flush()
}

fn json<T: Serialize + ?Sized>(v: &T) -> String {
    serde_json::to_string(v).expect("metadata serializes")
}
