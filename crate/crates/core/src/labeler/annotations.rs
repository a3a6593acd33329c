//! Annotation CSV: `user_id,screen_name,label`, label empty when unlabeled.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LabelError;
use crate::ingest::UserRecord;

pub const ANNOTATION_HEADER: [&str; 3] = ["user_id", "screen_name", "label"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub user_id: String,
    pub screen_name: String,
    pub label: Option<f64>,
}

pub fn write_annotations<W: std::io::Write>(
    out: W,
    records: &[AnnotationRecord],
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ANNOTATION_HEADER)?;
    for r in records {
        let label = r.label.map(|l| l.to_string()).unwrap_or_default();
        w.write_record([r.user_id.as_str(), r.screen_name.as_str(), label.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

/// Blank template with one row per user.
pub fn annotation_template(users: &[UserRecord]) -> String {
    let records: Vec<AnnotationRecord> = users
        .iter()
        .map(|u| AnnotationRecord {
            user_id: u.user_id.clone(),
            screen_name: u.profile.screen_name.clone(),
            label: None,
        })
        .collect();
    let mut buf = Vec::new();
    write_annotations(&mut buf, &records).expect("writing to memory");
    String::from_utf8(buf).expect("csv output is utf-8")
}

/// Parses annotation CSV. Columns are found by header name; `screen_name`
/// is optional. Rows with an empty label are kept with `label: None`.
pub fn read_annotations<R: Read>(input: R) -> Result<Vec<AnnotationRecord>, LabelError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let bad = |line: u64, message: String| LabelError::Annotation { line, message };
    let headers = rdr.headers().map_err(|e| bad(1, e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (Some(id_col), Some(label_col)) = (col("user_id"), col("label")) else {
        return Err(bad(1, "header must contain user_id and label".into()));
    };
    let name_col = col("screen_name");

    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let user_id = rec.get(id_col).unwrap_or("").trim();
        if user_id.is_empty() {
            if rec.iter().all(|f| f.trim().is_empty()) {
                continue;
            }
            return Err(bad(line, "empty user_id".into()));
        }
        let raw = rec.get(label_col).unwrap_or("").trim();
        let label = if raw.is_empty() {
            None
        } else {
            let v: f64 = raw
                .parse()
                .map_err(|_| bad(line, format!("label {raw:?} is not a number")))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(bad(line, format!("label {v} outside [0, 1]")));
            }
            Some(v)
        };
        out.push(AnnotationRecord {
            user_id: user_id.to_string(),
            screen_name: name_col.and_then(|c| rec.get(c)).unwrap_or("").to_string(),
            label,
        });
    }
    Ok(out)
}

pub fn load_annotations(path: &Path) -> Result<Vec<AnnotationRecord>, LabelError> {
    let f = File::open(path).map_err(|e| LabelError::io(path, &e))?;
    read_annotations(f)
}
