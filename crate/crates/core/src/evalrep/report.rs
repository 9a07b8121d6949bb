use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::Family;

pub const CSV_HEADER: &str = "shape_id,view_id,iou_native,iou_coarse,cd,flags";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub shape_id: String,
    pub view_id: usize,
    /// Not part of the CSV; known when the report comes from a manifest.
    pub family: Option<Family>,
    pub iou_native: f64,
    pub iou_coarse: f64,
    /// Absent for flagged rows.
    pub cd: Option<f64>,
    pub flags: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
    pub cd_points: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub rows: usize,
    pub mean_iou_native: f64,
    pub mean_iou_coarse: f64,
    /// Rows contributing to `mean_cd`.
    pub cd_rows: usize,
    pub mean_cd: Option<f64>,
    pub flagged_rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub cd_points: usize,
    pub seed: u64,
    pub overall: SummaryStats,
    pub by_family: BTreeMap<String, SummaryStats>,
}

fn stats<'a>(rows: impl Iterator<Item = &'a MetricsRow>) -> SummaryStats {
    let rows: Vec<&MetricsRow> = rows.collect();
    let n = rows.len();
    let mean = |f: &dyn Fn(&MetricsRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n as f64;
    let cds: Vec<f64> = rows.iter().filter_map(|r| r.cd).collect();
    SummaryStats {
        rows: n,
        mean_iou_native: mean(&|r| r.iou_native),
        mean_iou_coarse: mean(&|r| r.iou_coarse),
        cd_rows: cds.len(),
        mean_cd: (!cds.is_empty()).then(|| cds.iter().sum::<f64>() / cds.len() as f64),
        flagged_rows: rows.iter().filter(|r| !r.flags.is_empty()).count(),
    }
}

impl MetricsReport {
    pub fn summary(&self) -> Summary {
        let mut families: BTreeMap<String, Vec<&MetricsRow>> = BTreeMap::new();
        for r in &self.rows {
            if let Some(f) = r.family {
                families.entry(f.to_string()).or_default().push(r);
            }
        }
        Summary {
            cd_points: self.cd_points,
            seed: self.seed,
            overall: stats(self.rows.iter()),
            by_family: families.into_iter().map(|(k, v)| (k, stats(v.into_iter()))).collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let cd = r.cd.map(|v| format!("{v:?}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{:?},{:?},{},{}\n",
                r.shape_id,
                r.view_id,
                r.iou_native,
                r.iou_coarse,
                cd,
                r.flags.join(";")
            ));
        }
        out
    }

    /// Parses the CSV written by [`MetricsReport::to_csv`]; families and
    /// the CD settings are not recorded there.
    pub fn from_csv(text: &str) -> Result<MetricsReport> {
        let mut lines = text.lines();
        let mut offset = 0u64;
        match lines.next() {
            Some(h) if h == CSV_HEADER => offset += h.len() as u64 + 1,
            _ => return Err(Error::format(0, format!("expected header `{CSV_HEADER}`"))),
        }
        let mut rows = Vec::new();
        for line in lines {
            let bad = |what: &str| Error::format(offset, format!("bad {what} in report row `{line}`"));
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 6 {
                return Err(bad("column count"));
            }
            let num = |s: &str, what: &str| s.parse::<f64>().map_err(|_| bad(what));
            rows.push(MetricsRow {
                shape_id: cells[0].to_string(),
                view_id: cells[1].parse().map_err(|_| bad("view_id"))?,
                family: None,
                iou_native: num(cells[2], "iou_native")?,
                iou_coarse: num(cells[3], "iou_coarse")?,
                cd: if cells[4].is_empty() { None } else { Some(num(cells[4], "cd")?) },
                flags: cells[5].split(';').filter(|f| !f.is_empty()).map(str::to_string).collect(),
            });
            offset += line.len() as u64 + 1;
        }
        Ok(MetricsReport {
            rows,
            cd_points: 0,
            seed: 0,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeltaRow {
    pub shape_id: String,
    pub view_id: usize,
    pub delta_iou_native: f64,
    pub delta_iou_coarse: f64,
    /// `b - a`, when both rows have a CD.
    pub delta_cd: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaSummary {
    pub rows: usize,
    pub mean_delta_iou_native: f64,
    pub mean_delta_iou_coarse: f64,
    pub cd_rows: usize,
    pub mean_delta_cd: Option<f64>,
    /// Fraction of CD-bearing rows where `b` has the lower CD.
    pub cd_improved_fraction: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeltaTable {
    pub rows: Vec<DeltaRow>,
}

impl DeltaTable {
    pub fn summary(&self) -> DeltaSummary {
        let n = self.rows.len() as f64;
        let cds: Vec<f64> = self.rows.iter().filter_map(|r| r.delta_cd).collect();
        DeltaSummary {
            rows: self.rows.len(),
            mean_delta_iou_native: self.rows.iter().map(|r| r.delta_iou_native).sum::<f64>() / n,
            mean_delta_iou_coarse: self.rows.iter().map(|r| r.delta_iou_coarse).sum::<f64>() / n,
            cd_rows: cds.len(),
            mean_delta_cd: (!cds.is_empty()).then(|| cds.iter().sum::<f64>() / cds.len() as f64),
            cd_improved_fraction: (!cds.is_empty())
                .then(|| cds.iter().filter(|&&d| d < 0.0).count() as f64 / cds.len() as f64),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("shape_id,view_id,delta_iou_native,delta_iou_coarse,delta_cd\n");
        for r in &self.rows {
            let cd = r.delta_cd.map(|v| format!("{v:?}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{:?},{:?},{}\n",
                r.shape_id, r.view_id, r.delta_iou_native, r.delta_iou_coarse, cd
            ));
        }
        out
    }
}

/// Row-by-row `b - a`; both reports must hold the same keys.
pub fn compare_reports(a: &MetricsReport, b: &MetricsReport) -> Result<DeltaTable> {
    let index: BTreeMap<(&str, usize), &MetricsRow> =
        b.rows.iter().map(|r| ((r.shape_id.as_str(), r.view_id), r)).collect();
    if index.len() != b.rows.len() || a.rows.len() != b.rows.len() {
        return Err(Error::KeyMismatch(format!(
            "{} rows vs {} rows (or duplicate keys)",
            a.rows.len(),
            b.rows.len()
        )));
    }
    if a.rows.is_empty() {
        return Err(Error::KeyMismatch("reports have no rows".into()));
    }
    let mut rows = Vec::with_capacity(a.rows.len());
    for ra in &a.rows {
        let rb = index
            .get(&(ra.shape_id.as_str(), ra.view_id))
            .ok_or_else(|| Error::KeyMismatch(format!("({}, {}) only in the first report", ra.shape_id, ra.view_id)))?;
        rows.push(DeltaRow {
            shape_id: ra.shape_id.clone(),
            view_id: ra.view_id,
            delta_iou_native: rb.iou_native - ra.iou_native,
            delta_iou_coarse: rb.iou_coarse - ra.iou_coarse,
            delta_cd: ra.cd.zip(rb.cd).map(|(x, y)| y - x),
        });
    }
    Ok(DeltaTable { rows })
}
