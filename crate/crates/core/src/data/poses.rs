//! Pose log ingestion: one frame per line, six whitespace-delimited numbers
//! (three Euler angles in degrees, then three translations).

use super::Transform6DoF;
use crate::error::{Error, Result};

pub fn parse_pose_log(text: &str) -> Result<Vec<Transform6DoF>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(Error::Input(format!(
                "pose log line {}: expected 6 fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let mut vals = [0.0f64; 6];
        for (i, f) in fields.iter().enumerate() {
            vals[i] = f.parse().map_err(|_| {
                Error::Input(format!(
                    "pose log line {}: `{f}` is not a number",
                    lineno + 1
                ))
            })?;
        }
        out.push(Transform6DoF {
            euler_deg: [vals[0], vals[1], vals[2]],
            trans: [vals[3], vals[4], vals[5]],
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_rows_and_skips_comments() {
        let log = "# frame poses\n0.1 0.2 0.3  1 2 3\n\n-0.5 0 0 0 0 9.5\n";
        let poses = parse_pose_log(log).unwrap();
        assert_eq!(poses.len(), 2);
        assert_eq!(poses[0].euler_deg, [0.1, 0.2, 0.3]);
        assert_eq!(poses[1].trans, [0.0, 0.0, 9.5]);
    }

    #[test]
    fn wrong_field_count_names_the_line() {
        let err = parse_pose_log("1 2 3 4 5 6\n1 2 3\n").unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn non_numeric_field_names_the_line() {
        let err = parse_pose_log("1 2 x 4 5 6").unwrap_err();
        assert!(err.to_string().contains("line 1"));
    }
}
