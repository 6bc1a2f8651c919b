//! Arc serialization. CSV columns are `t,j,mode,<components>`, one row per
//! sample, so a jump shows up as two rows with the same `t`. Reals are written
//! with 17 significant digits, which round-trips `f64` exactly.

use super::{ArcSample, HybridArc, HybridError, HybridTime, ProductState, Termination};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArcFormat {
    Csv,
    Json,
}

fn real(x: f64) -> String {
    format!("{x:.16e}")
}

fn jump_positions(samples: &[ArcSample]) -> Vec<usize> {
    (1..samples.len())
        .filter(|&i| samples[i].time.j != samples[i - 1].time.j)
        .collect()
}

pub fn arc_to_csv(arc: &HybridArc, components: &[String]) -> Result<String, HybridError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["t".to_string(), "j".into(), "mode".into()];
    header.extend(components.iter().cloned());
    let err = |e: csv::Error| HybridError::Export(e.to_string());
    w.write_record(&header).map_err(err)?;
    for s in &arc.samples {
        if s.state.z.len() != components.len() {
            return Err(HybridError::Export(format!(
                "sample has {} components, header has {}",
                s.state.z.len(),
                components.len()
            )));
        }
        let mut row = vec![real(s.time.t), s.time.j.to_string(), s.state.q.to_string()];
        row.extend(s.state.z.iter().map(|&v| real(v)));
        w.write_record(&row).map_err(err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| HybridError::Export(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| HybridError::Export(e.to_string()))
}

/// Parses CSV written by [`arc_to_csv`]. The CSV carries no termination
/// record, so the parsed arc reports [`Termination::HorizonReached`].
pub fn arc_from_csv(text: &str) -> Result<(Vec<String>, HybridArc), HybridError> {
    let bad = |m: String| HybridError::Export(m);
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.len() < 3 || &header[0] != "t" || &header[1] != "j" || &header[2] != "mode" {
        return Err(bad("header must start with t,j,mode".into()));
    }
    let components: Vec<String> = header.iter().skip(3).map(str::to_string).collect();
    let mut samples = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let field = |i: usize| {
            rec.get(i)
                .ok_or_else(|| bad(format!("row {line}: missing field {i}")))
        };
        let num = |i: usize| -> Result<f64, HybridError> {
            field(i)?
                .parse::<f64>()
                .map_err(|e| bad(format!("row {line}: {e}")))
        };
        let t = num(0)?;
        let j = field(1)?
            .parse()
            .map_err(|e| bad(format!("row {line}: {e}")))?;
        let q = field(2)?
            .parse()
            .map_err(|e| bad(format!("row {line}: {e}")))?;
        let z = (0..components.len())
            .map(|i| num(3 + i))
            .collect::<Result<Vec<_>, _>>()?;
        samples.push(ArcSample {
            time: HybridTime { t, j },
            state: ProductState::new(q, DVector::from_vec(z)),
        });
    }
    if samples.is_empty() {
        return Err(bad("arc has no samples".into()));
    }
    let jump_indices = jump_positions(&samples);
    Ok((
        components,
        HybridArc {
            samples,
            jump_indices,
            termination: Termination::HorizonReached,
        },
    ))
}

#[derive(Serialize, Deserialize)]
struct JsonRecord {
    t: f64,
    j: usize,
    mode: i32,
    state: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct JsonArc {
    columns: Vec<String>,
    records: Vec<JsonRecord>,
    jump_indices: Vec<usize>,
    termination: Termination,
}

/// JSON mirror of the CSV rows plus jump indices and termination. Numbers use
/// the shortest representation that parses back to the same `f64`.
pub fn arc_to_json(arc: &HybridArc, components: &[String]) -> Result<String, HybridError> {
    let doc = JsonArc {
        columns: components.to_vec(),
        records: arc
            .samples
            .iter()
            .map(|s| JsonRecord {
                t: s.time.t,
                j: s.time.j,
                mode: s.state.q,
                state: s.state.z.iter().copied().collect(),
            })
            .collect(),
        jump_indices: arc.jump_indices.clone(),
        termination: arc.termination.clone(),
    };
    serde_json::to_string_pretty(&doc).map_err(|e| HybridError::Export(e.to_string()))
}

pub fn arc_from_json(text: &str) -> Result<(Vec<String>, HybridArc), HybridError> {
    let doc: JsonArc =
        serde_json::from_str(text).map_err(|e| HybridError::Export(e.to_string()))?;
    if doc.records.is_empty() {
        return Err(HybridError::Export("arc has no samples".into()));
    }
    let samples = doc
        .records
        .into_iter()
        .map(|r| ArcSample {
            time: HybridTime { t: r.t, j: r.j },
            state: ProductState::new(r.mode, DVector::from_vec(r.state)),
        })
        .collect();
    Ok((
        doc.columns,
        HybridArc {
            samples,
            jump_indices: doc.jump_indices,
            termination: doc.termination,
        },
    ))
}

pub fn write_arc(
    arc: &HybridArc,
    components: &[String],
    format: ArcFormat,
    path: &Path,
) -> Result<(), HybridError> {
    if arc.samples.is_empty() {
        return Err(HybridError::Export("arc has no samples".into()));
    }
    let text = match format {
        ArcFormat::Csv => arc_to_csv(arc, components)?,
        ArcFormat::Json => arc_to_json(arc, components)?,
    };
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_jump_arc() -> HybridArc {
        let s = |t: f64, j, q, z: &[f64]| ArcSample {
            time: HybridTime { t, j },
            state: ProductState::from_slice(q, z),
        };
        HybridArc {
            samples: vec![
                s(0.0, 0, 2, &[0.1, 1.0 / 3.0]),
                s(0.25, 0, 2, &[0.2, -1e-300]),
                s(0.25, 1, 1, &[0.2, -1e-300]),
                s(0.5, 1, 1, &[std::f64::consts::PI, 2.0]),
            ],
            jump_indices: vec![2],
            termination: Termination::HorizonReached,
        }
    }

    fn names() -> Vec<String> {
        vec!["x0".into(), "x1".into()]
    }

    #[test]
    fn single_sample_gives_header_and_one_row() {
        let arc = HybridArc {
            samples: vec![one_jump_arc().samples[0].clone()],
            jump_indices: vec![],
            termination: Termination::InAttractor,
        };
        let text = arc_to_csv(&arc, &names()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], "t,j,mode,x0,x1");
    }

    #[test]
    fn jump_rows_share_time() {
        let text = arc_to_csv(&one_jump_arc(), &names()).unwrap();
        let rows: Vec<&str> = text.lines().skip(1).collect();
        let t = |r: &str| r.split(',').next().unwrap().to_string();
        assert_eq!(t(rows[1]), t(rows[2]));
        assert!(rows[1].starts_with("2.5000000000000000e-1,0,2,"));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let arc = one_jump_arc();
        let text = arc_to_csv(&arc, &names()).unwrap();
        let (cols, back) = arc_from_csv(&text).unwrap();
        assert_eq!(cols, names());
        assert_eq!(back, arc);
        assert_eq!(arc_to_csv(&back, &cols).unwrap(), text);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut arc = one_jump_arc();
        arc.termination = Termination::IntegrationFailure("boom".into());
        let text = arc_to_json(&arc, &names()).unwrap();
        let (cols, back) = arc_from_json(&text).unwrap();
        assert_eq!(back, arc);
        assert_eq!(arc_to_json(&back, &cols).unwrap(), text);
    }
}
