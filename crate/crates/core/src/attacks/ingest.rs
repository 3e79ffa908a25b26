use std::io::{Read, Write};

use serde::{Deserialize, Deserializer, Serialize};

use super::ScoreMatrix;
use crate::error::{Error, Result};

/// JSON sidecar giving the matrix dimensions of a score CSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSidecar {
    pub num_models: usize,
    pub num_examples: usize,
}

fn flexible_bool<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<bool, D::Error> {
    let s = String::deserialize(d)?;
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        other => Err(serde::de::Error::custom(format!("is_member must be 0/1/true/false, got '{other}'"))),
    }
}

#[derive(Deserialize)]
struct Row {
    example_id: usize,
    model_id: usize,
    #[serde(deserialize_with = "flexible_bool")]
    is_member: bool,
    score: f64,
    class: usize,
}

/// Parse long-format scores (`example_id,model_id,is_member,score,class`).
/// Every (example, model) cell must appear exactly once.
pub fn read_score_csv<R: Read>(reader: R, sidecar: MatrixSidecar) -> Result<ScoreMatrix> {
    let MatrixSidecar { num_models: m, num_examples: n } = sidecar;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["example_id", "model_id", "is_member", "score", "class"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Ingest {
            line: 1,
            detail: format!("header must be '{}', got '{}'", expected.join(","), headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut scores = vec![f64::NAN; n * m];
    let mut membership = vec![false; n * m];
    let mut seen = vec![false; n * m];
    let mut class: Vec<Option<usize>> = vec![None; n];
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let row: Row = record
            .deserialize(Some(&headers))
            .map_err(|e| Error::Ingest { line, detail: e.to_string() })?;
        let bad = |detail: String| Error::Ingest { line, detail };
        if row.example_id >= n {
            return Err(bad(format!("example_id {} out of range (num_examples = {n})", row.example_id)));
        }
        if row.model_id >= m {
            return Err(bad(format!("model_id {} out of range (num_models = {m})", row.model_id)));
        }
        if !row.score.is_finite() {
            return Err(bad(format!("non-finite score {}", row.score)));
        }
        let cell = row.example_id * m + row.model_id;
        if seen[cell] {
            return Err(bad(format!("duplicate entry for example {} model {}", row.example_id, row.model_id)));
        }
        match class[row.example_id] {
            Some(c) if c != row.class => {
                return Err(bad(format!("example {} has class {} here but {c} earlier", row.example_id, row.class)));
            }
            _ => class[row.example_id] = Some(row.class),
        }
        seen[cell] = true;
        scores[cell] = row.score;
        membership[cell] = row.is_member;
    }
    if let Some(cell) = seen.iter().position(|s| !s) {
        return Err(Error::Ingest {
            line: 0,
            detail: format!("missing entry for example {} model {}", cell / m, cell % m),
        });
    }
    let class = class.into_iter().map(|c| c.expect("every example seen")).collect();
    ScoreMatrix::new(n, m, scores, membership, class)
}

/// Write a matrix in the long CSV format accepted by [`read_score_csv`].
pub fn write_score_csv<W: Write>(matrix: &ScoreMatrix, writer: W) -> Result<MatrixSidecar> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["example_id", "model_id", "is_member", "score", "class"])?;
    for x in 0..matrix.num_examples() {
        for j in 0..matrix.num_models() {
            w.write_record([
                x.to_string(),
                j.to_string(),
                u8::from(matrix.is_member(x, j)).to_string(),
                format!("{:e}", matrix.score(x, j)),
                matrix.example_class()[x].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(MatrixSidecar { num_models: matrix.num_models(), num_examples: matrix.num_examples() })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SIDE: MatrixSidecar = MatrixSidecar { num_models: 4, num_examples: 1 };

    #[test]
    fn round_trip() {
        let m = ScoreMatrix::new(2, 4, vec![0.1, -2.5, 1e-17, 3.0, 0.0, 1.0, 2.0, 3.0], vec![true, false, true, false, false, true, false, true], vec![3, 1])
            .unwrap();
        let mut buf = Vec::new();
        let side = write_score_csv(&m, &mut buf).unwrap();
        assert_eq!(read_score_csv(buf.as_slice(), side).unwrap(), m);
    }

    #[test]
    fn errors_name_the_line() {
        let csv = "example_id,model_id,is_member,score,class\n0,0,1,0.5,0\n0,1,maybe,0.5,0\n";
        match read_score_csv(csv.as_bytes(), SIDE) {
            Err(Error::Ingest { line: 3, .. }) => {}
            other => panic!("{other:?}"),
        }
        let csv = "example_id,model_id,is_member,score,class\n0,0,1,0.5,0\n0,7,1,0.5,0\n";
        assert!(matches!(read_score_csv(csv.as_bytes(), SIDE), Err(Error::Ingest { line: 3, .. })));
        let csv = "a,b\n";
        assert!(matches!(read_score_csv(csv.as_bytes(), SIDE), Err(Error::Ingest { line: 1, .. })));
    }

    #[test]
    fn too_few_out_models_names_example() {
        let csv = "example_id,model_id,is_member,score,class\n0,0,1,0.5,0\n0,1,1,0.5,0\n0,2,1,0.5,0\n0,3,0,0.5,0\n";
        assert!(matches!(read_score_csv(csv.as_bytes(), SIDE), Err(Error::Statistics { example: 0, .. })));
    }
}
