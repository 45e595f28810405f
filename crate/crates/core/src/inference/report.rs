use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::RetrievalResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub result: RetrievalResult,
}

impl AblationRow {
    pub fn new(name: &str, result: RetrievalResult) -> Self {
        Self {
            name: name.to_string(),
            result,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn get(&self, name: &str) -> Option<&RetrievalResult> {
        self.rows.iter().find(|r| r.name == name).map(|r| &r.result)
    }

    /// Best mAP among rows whose name starts with `prefix`.
    pub fn best_with_prefix(&self, prefix: &str) -> Option<f64> {
        self.rows
            .iter()
            .filter(|r| r.name.starts_with(prefix))
            .map(|r| r.result.map)
            .max_by(f64::total_cmp)
    }
}

/// `name,map,rank<k>...` with percentages.
pub fn write_table_csv(table: &AblationTable, ranks: &[usize]) -> String {
    let mut out = String::from("name,map");
    for k in ranks {
        write!(out, ",rank{k}").ok();
    }
    out.push('\n');
    for r in &table.rows {
        write!(out, "{},{:.4}", r.name, 100.0 * r.result.map).ok();
        for &k in ranks {
            write!(out, ",{:.4}", 100.0 * r.result.cmc_at(k)).ok();
        }
        out.push('\n');
    }
    out
}

/// Targets by rows, source domains by columns.
pub fn heatmap_csv(target_names: &[String], domain_ids: &[usize], matrix: &[Vec<f64>]) -> String {
    let mut out = String::from("target");
    for d in domain_ids {
        write!(out, ",domain{d}").ok();
    }
    out.push('\n');
    for (name, row) in target_names.iter().zip(matrix) {
        out.push_str(name);
        for v in row {
            write!(out, ",{v:?}").ok();
        }
        out.push('\n');
    }
    out
}
