//! Task-density report: a 2-D histogram of corpus tasks over feature
//! and shot-count bins, as text and optional CSV.

use std::collections::BTreeMap;

use anyhow::Result;

use crate::corpus::{d_bin_label, m_bin_label, CorpusRecord};

pub const D_BINS: [&str; 5] = ["d05-14", "d15-23", "d24-32", "d33-41", "d42-50"];
pub const M_BINS: [&str; 4] = [
    "m0001-0032",
    "m0033-0128",
    "m0129-0512",
    "m0513-1024",
];

#[derive(Debug, Clone, Default)]
pub struct DensityTable {
    /// (d bin, m bin) -> task count.
    pub cells: BTreeMap<(String, String), u64>,
    pub total: u64,
}

impl DensityTable {
    pub fn from_records(records: &[CorpusRecord]) -> Self {
        let mut table = DensityTable::default();
        for r in records {
            *table
                .cells
                .entry((d_bin_label(r.d), m_bin_label(r.m)))
                .or_default() += 1;
            table.total += 1;
        }
        table
    }

    pub fn count(&self, d_bin: &str, m_bin: &str) -> u64 {
        self.cells
            .get(&(d_bin.to_string(), m_bin.to_string()))
            .copied()
            .unwrap_or(0)
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<11}", "d \\ m"));
        for m in M_BINS {
            out.push_str(&format!("{m:>12}"));
        }
        out.push('\n');
        for d in D_BINS {
            out.push_str(&format!("{d:<11}"));
            for m in M_BINS {
                out.push_str(&format!("{:>12}", self.count(d, m)));
            }
            out.push('\n');
        }
        out.push_str(&format!("total tasks: {}\n", self.total));
        out
    }

    pub fn render_csv(&self) -> String {
        let mut out = String::from("d_bin,m_bin,count\n");
        for d in D_BINS {
            for m in M_BINS {
                out.push_str(&format!("{d},{m},{}\n", self.count(d, m)));
            }
        }
        out
    }
}

pub fn write_csv(table: &DensityTable, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, table.render_csv())?;
    Ok(())
}
