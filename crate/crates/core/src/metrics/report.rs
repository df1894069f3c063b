//! Batch metric evaluation and serialization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::metrics::{euclidean_distance, psnr, ssim, uiqm};

/// One image to score: a prediction and, when available, its ground truth.
/// Without a reference only the no-reference UIQM column is filled.
pub struct ReportEntry {
    pub image_id: String,
    pub pred: ImageTensor,
    pub reference: Option<ImageTensor>,
}

/// Metric values for a single image; reference-based columns are `None` when
/// no ground truth was supplied.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricRow {
    pub image_id: String,
    pub ed_r: Option<f64>,
    pub ed_g: Option<f64>,
    pub ed_b: Option<f64>,
    pub ed_avg: Option<f64>,
    pub psnr_db: Option<f64>,
    pub ssim: Option<f64>,
    pub uiqm: Option<f64>,
}

/// Per-image metric rows plus their column-wise arithmetic means.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    pub dataset_id: String,
    pub method_id: String,
    pub per_image: Vec<MetricRow>,
    /// Mean of each column over the rows where it is present.
    pub aggregate: MetricRow,
}

fn mean_of(rows: &[MetricRow], field: impl Fn(&MetricRow) -> Option<f64>) -> Option<f64> {
    let values: Vec<f64> = rows.iter().filter_map(&field).collect();
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

fn aggregate_rows(rows: &[MetricRow]) -> MetricRow {
    MetricRow {
        image_id: "MEAN".to_string(),
        ed_r: mean_of(rows, |r| r.ed_r),
        ed_g: mean_of(rows, |r| r.ed_g),
        ed_b: mean_of(rows, |r| r.ed_b),
        ed_avg: mean_of(rows, |r| r.ed_avg),
        psnr_db: mean_of(rows, |r| r.psnr_db),
        ssim: mean_of(rows, |r| r.ssim),
        uiqm: mean_of(rows, |r| r.uiqm),
    }
}

/// Score a batch of images and aggregate.
///
/// Rows come back sorted by `image_id` regardless of input order. SSIM is
/// skipped (left null) for images smaller than its 11x11 window rather than
/// failing the whole report; UIQM still requires one full 8x8 block.
pub fn build_report(
    dataset_id: &str,
    method_id: &str,
    entries: &[ReportEntry],
) -> Result<MetricsReport> {
    if entries.is_empty() {
        return Err(Error::invalid("cannot build a report from zero images"));
    }
    let mut rows = Vec::with_capacity(entries.len());
    for entry in entries {
        let mut row = MetricRow {
            image_id: entry.image_id.clone(),
            ed_r: None,
            ed_g: None,
            ed_b: None,
            ed_avg: None,
            psnr_db: None,
            ssim: None,
            uiqm: Some(uiqm(&entry.pred)?),
        };
        if let Some(reference) = &entry.reference {
            let (ed_r, ed_g, ed_b, ed_avg) = euclidean_distance(&entry.pred, reference)?;
            row.ed_r = Some(ed_r);
            row.ed_g = Some(ed_g);
            row.ed_b = Some(ed_b);
            row.ed_avg = Some(ed_avg);
            row.psnr_db = Some(psnr(&entry.pred, reference)?);
            if entry.pred.height() >= 11 && entry.pred.width() >= 11 {
                row.ssim = Some(ssim(&entry.pred, reference)?);
            }
        }
        rows.push(row);
    }
    rows.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let aggregate = aggregate_rows(&rows);
    Ok(MetricsReport {
        dataset_id: dataset_id.to_string(),
        method_id: method_id.to_string(),
        per_image: rows,
        aggregate,
    })
}

fn csv_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl MetricsReport {
    /// CSV with one row per image plus a final `MEAN` row; null metrics are
    /// empty cells.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image_id,ed_r,ed_g,ed_b,ed_avg,psnr_db,ssim,uiqm\n");
        for row in self.per_image.iter().chain(std::iter::once(&self.aggregate)) {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                row.image_id,
                csv_cell(row.ed_r),
                csv_cell(row.ed_g),
                csv_cell(row.ed_b),
                csv_cell(row.ed_avg),
                csv_cell(row.psnr_db),
                csv_cell(row.ssim),
                csv_cell(row.uiqm),
            ));
        }
        out
    }

    /// JSON mirror of the report; null metrics serialize as `null`.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn entry(id: &str, pred: ImageTensor, reference: Option<ImageTensor>) -> ReportEntry {
        ReportEntry {
            image_id: id.to_string(),
            pred,
            reference,
        }
    }

    #[test]
    fn perfect_pair_row() {
        // Gray constant: both opponent channels vanish, so UIQM is exactly 0.
        let img = ImageTensor::constant(16, 16, [0.5, 0.5, 0.5]).unwrap();
        let report = build_report(
            "unit",
            "identity",
            &[entry("a", img.clone(), Some(img.clone()))],
        )
        .unwrap();
        let row = &report.per_image[0];
        assert_eq!(row.ed_avg, Some(0.0));
        assert_eq!(row.psnr_db, Some(100.0));
        assert_abs_diff_eq!(row.ssim.unwrap(), 1.0, epsilon = 1e-9);
        assert_eq!(row.uiqm, Some(0.0));
    }

    #[test]
    fn aggregate_is_arithmetic_mean() {
        // Three rows with distinct PSNRs; build synthetic rows directly.
        let rows = vec![
            MetricRow {
                image_id: "a".into(),
                ed_r: Some(0.1),
                ed_g: None,
                ed_b: None,
                ed_avg: None,
                psnr_db: Some(10.0),
                ssim: None,
                uiqm: Some(1.0),
            },
            MetricRow {
                image_id: "b".into(),
                ed_r: Some(0.3),
                ed_g: None,
                ed_b: None,
                ed_avg: None,
                psnr_db: Some(20.0),
                ssim: None,
                uiqm: Some(2.0),
            },
            MetricRow {
                image_id: "c".into(),
                ed_r: None,
                ed_g: None,
                ed_b: None,
                ed_avg: None,
                psnr_db: Some(30.0),
                ssim: None,
                uiqm: Some(3.0),
            },
        ];
        let agg = aggregate_rows(&rows);
        assert_abs_diff_eq!(agg.psnr_db.unwrap(), 20.0, epsilon = 1e-9);
        assert_abs_diff_eq!(agg.ed_r.unwrap(), 0.2, epsilon = 1e-9);
        assert_abs_diff_eq!(agg.uiqm.unwrap(), 2.0, epsilon = 1e-9);
        assert_eq!(agg.ssim, None);
        assert_eq!(agg.image_id, "MEAN");
    }

    #[test]
    fn rows_sorted_by_image_id() {
        let img = ImageTensor::constant(8, 8, [0.5; 3]).unwrap();
        let report = build_report(
            "unit",
            "m",
            &[
                entry("zebra", img.clone(), None),
                entry("apple", img.clone(), None),
            ],
        )
        .unwrap();
        assert_eq!(report.per_image[0].image_id, "apple");
        assert_eq!(report.per_image[1].image_id, "zebra");
    }

    #[test]
    fn no_reference_leaves_columns_null() {
        let img = ImageTensor::constant(16, 16, [0.5; 3]).unwrap();
        let report = build_report("unit", "m", &[entry("a", img, None)]).unwrap();
        let row = &report.per_image[0];
        assert!(row.ed_avg.is_none() && row.psnr_db.is_none() && row.ssim.is_none());
        assert!(row.uiqm.is_some());
        // CSV renders the missing cells empty.
        let csv = report.to_csv();
        let line = csv.lines().nth(1).unwrap();
        assert!(line.starts_with("a,,,,,,,"));
    }

    #[test]
    fn empty_report_rejected() {
        assert!(build_report("unit", "m", &[]).is_err());
    }

    #[test]
    fn csv_has_header_and_mean_row() {
        let img = ImageTensor::constant(8, 8, [0.5; 3]).unwrap();
        let report = build_report("unit", "m", &[entry("a", img, None)]).unwrap();
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "image_id,ed_r,ed_g,ed_b,ed_avg,psnr_db,ssim,uiqm");
        assert!(lines.last().unwrap().starts_with("MEAN,"));
    }

    #[test]
    fn json_round_trips() {
        let img = ImageTensor::constant(8, 8, [0.5; 3]).unwrap();
        let report = build_report("unit", "m", &[entry("a", img, None)]).unwrap();
        let json = report.to_json().unwrap();
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }
}
