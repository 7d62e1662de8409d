//! Score tables: one row per test image, one column per method, plus an
//! `average` row.

use crate::classical::{adaptive_mef_stack, MefParams, WeightVariant};
use crate::error::Result;
use crate::image::Image;
use crate::metrics::{mef_ssim_luma, SsimWindowSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTable {
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl ScoreTable {
    pub fn new(columns: Vec<String>) -> Self {
        ScoreTable {
            columns,
            rows: Vec::new(),
        }
    }

    /// Column means over all rows.
    pub fn averages(&self) -> Vec<f64> {
        let n = self.rows.len().max(1) as f64;
        (0..self.columns.len())
            .map(|c| self.rows.iter().map(|(_, v)| v[c]).sum::<f64>() / n)
            .collect()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.columns.iter().position(|n| n == name)?;
        Some(self.rows.iter().map(|(_, v)| v[c]).collect())
    }

    /// CSV with scores at four decimals.
    pub fn to_csv(&self) -> String {
        let fmt_row = |name: &str, vals: &[f64]| {
            let cells: Vec<String> = vals.iter().map(|v| format!("{v:.4}")).collect();
            format!("{name},{}\n", cells.join(","))
        };
        let mut out = format!("image,{}\n", self.columns.join(","));
        for (name, vals) in &self.rows {
            out.push_str(&fmt_row(name, vals));
        }
        out.push_str(&fmt_row("average", &self.averages()));
        out
    }
}

/// MEF-SSIM of the combined-weight fusion and both single-weight ablations
/// for each named exposure stack.
pub fn classical_table(scenes: &[(String, Vec<Image>)], params: &MefParams, window: &SsimWindowSpec) -> Result<ScoreTable> {
    let mut table = ScoreTable::new(WeightVariant::ALL.iter().map(|v| v.name().to_string()).collect());
    for (name, stack) in scenes {
        let scores = WeightVariant::ALL
            .iter()
            .map(|&variant| {
                let (fused, _) = adaptive_mef_stack(stack, params, variant)?;
                Ok(mef_ssim_luma(stack, &fused, window)?.global_score)
            })
            .collect::<Result<Vec<_>>>()?;
        table.rows.push((name.clone(), scores));
    }
    Ok(table)
}
