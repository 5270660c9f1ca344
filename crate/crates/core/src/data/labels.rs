//! YOLO-format text labels: one object per line, `class cx cy w h` with
//! normalized fractions.

use crate::detector::BBox;
use crate::error::{Error, Result};

/// Parse label text; blank lines are skipped, malformed lines report their
/// 1-based line number. An empty file is a valid background image.
pub fn load_labels(text: &str, n_classes: usize) -> Result<Vec<BBox>> {
    let mut boxes = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(Error::LabelParse {
                line: line_no,
                msg: format!("expected 5 fields, got {}", fields.len()),
            });
        }
        let class_id: usize = fields[0].parse().map_err(|_| Error::LabelParse {
            line: line_no,
            msg: format!("bad class id '{}'", fields[0]),
        })?;
        if class_id >= n_classes {
            return Err(Error::LabelParse {
                line: line_no,
                msg: format!("class id {class_id} >= vocabulary size {n_classes}"),
            });
        }
        let mut vals = [0.0f64; 4];
        for (i, v) in vals.iter_mut().enumerate() {
            *v = fields[i + 1].parse().map_err(|_| Error::LabelParse {
                line: line_no,
                msg: format!("bad number '{}'", fields[i + 1]),
            })?;
        }
        let bbox =
            BBox::checked(class_id, vals[0], vals[1], vals[2], vals[3]).map_err(|e| {
                Error::LabelParse {
                    line: line_no,
                    msg: e.to_string(),
                }
            })?;
        boxes.push(bbox);
    }
    Ok(boxes)
}

/// Canonical serialization: 6-decimal fixed precision, one box per line.
pub fn serialize_labels(boxes: &[BBox]) -> String {
    let mut out = String::new();
    for b in boxes {
        out.push_str(&format!(
            "{} {:.6} {:.6} {:.6} {:.6}\n",
            b.class_id, b.cx, b.cy, b.w, b.h
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_box() {
        let boxes = load_labels("0 0.5 0.5 0.2 0.3\n", 1).unwrap();
        assert_eq!(boxes.len(), 1);
        assert_eq!(boxes[0].class_id, 0);
        assert_eq!(boxes[0].cx, 0.5);
    }

    #[test]
    fn empty_file_is_background() {
        assert!(load_labels("", 1).unwrap().is_empty());
        assert!(load_labels("\n  \n", 1).unwrap().is_empty());
    }

    #[test]
    fn out_of_range_reports_line() {
        let err = load_labels("0 1.5 0.5 0.2 0.3", 1).unwrap_err();
        match err {
            Error::LabelParse { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn second_line_error_reported_as_line_2() {
        let err = load_labels("0 0.5 0.5 0.2 0.3\n0 0.5 0.5 nope 0.3", 1).unwrap_err();
        match err {
            Error::LabelParse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn class_out_of_vocab_rejected() {
        assert!(load_labels("2 0.5 0.5 0.2 0.3", 2).is_err());
        assert!(load_labels("1 0.5 0.5 0.2 0.3", 2).is_ok());
    }

    #[test]
    fn roundtrip_canonicalizes() {
        let text = "0   0.500000 0.5 0.25 0.125\n\n1 0.25 0.75 0.0625 0.03125\n";
        let boxes = load_labels(text, 2).unwrap();
        let canon = serialize_labels(&boxes);
        assert_eq!(
            canon,
            "0 0.500000 0.500000 0.250000 0.125000\n1 0.250000 0.750000 0.062500 0.031250\n"
        );
        // serializing the reparse reproduces the canonical form exactly
        let again = serialize_labels(&load_labels(&canon, 2).unwrap());
        assert_eq!(again, canon);
    }
}
