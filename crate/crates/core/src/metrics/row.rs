use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One (study, model, condition) evaluation result.
///
/// Serialized column order is fixed by field order; an undefined HD95 is an
/// empty field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub study_id: String,
    pub model_id: String,
    pub fold: usize,
    pub condition: String,
    pub dice: f64,
    pub hd95: Option<f64>,
    pub pred_volume: usize,
    pub label_volume: usize,
    pub fp_voxels: usize,
}

pub const METRIC_ROW_COLUMNS: [&str; 9] = [
    "study_id",
    "model_id",
    "fold",
    "condition",
    "dice",
    "hd95",
    "pred_volume",
    "label_volume",
    "fp_voxels",
];

pub fn write_metric_rows<W: Write>(rows: &[MetricRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    if rows.is_empty() {
        w.write_record(METRIC_ROW_COLUMNS)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_metric_rows<R: Read>(input: R) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout_is_pinned() {
        let rows = vec![
            MetricRow {
                study_id: "s1".into(),
                model_id: "m".into(),
                fold: 2,
                condition: "clean".into(),
                dice: 0.5,
                hd95: None,
                pred_volume: 3,
                label_volume: 4,
                fp_voxels: 0,
            },
            MetricRow {
                study_id: "s2".into(),
                model_id: "m".into(),
                fold: 0,
                condition: "rician:0.1".into(),
                dice: 1.0,
                hd95: Some(1.5),
                pred_volume: 4,
                label_volume: 4,
                fp_voxels: 0,
            },
        ];
        let mut buf = Vec::new();
        write_metric_rows(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), METRIC_ROW_COLUMNS.join(","));
        assert_eq!(lines.next().unwrap(), "s1,m,2,clean,0.5,,3,4,0");
        assert_eq!(read_metric_rows(&buf[..]).unwrap(), rows);
    }
}
