//! CSV and LP outputs. Quantizers are numbered from 1 in delay-sorted bank
//! order in every file, matching the `x_t_i` variables of the LP export.

use std::path::Path;

use qflqg_core::quantizer::QuantizerBank;
use qflqg_core::selection::SelectionSchedule;
use qflqg_core::TrajectoryRecord;

fn with_header(hash: &str, body: Vec<u8>) -> String {
    let mut out = format!("# manifest_sha256={hash}\n");
    out.push_str(&String::from_utf8(body).expect("CSV output is UTF-8"));
    out
}

fn writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Vec<u8> {
    w.into_inner().expect("in-memory writer")
}

/// `t, c_1..c_M, theta_star`.
pub fn schedule_csv(schedule: &SelectionSchedule, hash: &str) -> String {
    let mut w = writer();
    let m = schedule.c.first().map_or(0, Vec::len);
    let mut header = vec!["t".to_string()];
    header.extend((1..=m).map(|i| format!("c_{i}")));
    header.push("theta_star".into());
    w.write_record(&header).expect("in-memory");
    for (t, row) in schedule.c.iter().enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(row.iter().map(f64::to_string));
        rec.push((schedule.theta_star[t] + 1).to_string());
        w.write_record(&rec).expect("in-memory");
    }
    with_header(hash, finish(w))
}

/// One row per stage and quantizer, for plotting.
pub fn coefficients_csv(schedule: &SelectionSchedule, bank: &QuantizerBank, hash: &str) -> String {
    let mut w = writer();
    w.write_record(["t", "quantizer", "file_index", "delay", "price", "beta", "c", "selected"]).expect("in-memory");
    for (t, (betas, cs)) in schedule.beta.iter().zip(&schedule.c).enumerate() {
        for (i, spec) in bank.quantizers().iter().enumerate() {
            w.write_record([
                t.to_string(),
                (i + 1).to_string(),
                spec.index.to_string(),
                bank.delays()[i].to_string(),
                spec.price.to_string(),
                betas[i].to_string(),
                cs[i].to_string(),
                u8::from(schedule.theta_star[t] == i).to_string(),
            ])
            .expect("in-memory");
        }
    }
    with_header(hash, finish(w))
}

/// `t, x_1..x_n, u_1..u_m, theta, arrivals`; the last row holds `X_T` only.
pub fn trajectory_csv(rec: &TrajectoryRecord, hash: &str) -> String {
    let n = rec.states.first().map_or(0, |x| x.len());
    let m = rec.inputs.first().map_or(0, |u| u.len());
    let mut w = writer();
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x_{i}")));
    header.extend((1..=m).map(|i| format!("u_{i}")));
    header.push("theta".into());
    header.push("arrivals".into());
    w.write_record(&header).expect("in-memory");
    for (t, x) in rec.states.iter().enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(x.iter().map(f64::to_string));
        match rec.inputs.get(t) {
            Some(u) => {
                row.extend(u.iter().map(f64::to_string));
                row.push((rec.selections[t] + 1).to_string());
                row.push(rec.arrivals[t].iter().map(usize::to_string).collect::<Vec<_>>().join(";"));
            }
            None => row.extend(std::iter::repeat_n(String::new(), m + 2)),
        }
        w.write_record(&row).expect("in-memory");
    }
    with_header(hash, finish(w))
}

#[derive(Debug, thiserror::Error)]
pub enum ScheduleFileError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("{path}: {reason}")]
    Format { path: String, reason: String },
}

/// Read a schedule from a CSV with a `theta_star` or `theta` column
/// (1-based quantizer numbers), one row per stage.
pub fn read_schedule_csv(path: &Path) -> Result<Vec<usize>, ScheduleFileError> {
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ScheduleFileError::Read { path: shown.clone(), source })?;
    let fail = |reason: String| ScheduleFileError::Format { path: shown.clone(), reason };
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let headers = r.headers().map_err(|e| fail(e.to_string()))?.clone();
    let col = headers
        .iter()
        .position(|h| h == "theta_star")
        .or_else(|| headers.iter().position(|h| h == "theta"))
        .ok_or_else(|| fail("no theta_star or theta column".into()))?;
    let mut theta = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| fail(e.to_string()))?;
        let v: usize = rec
            .get(col)
            .and_then(|s| s.trim().parse().ok())
            .filter(|v| *v >= 1)
            .ok_or_else(|| fail(format!("row {row}: quantizer numbers start at 1")))?;
        theta.push(v - 1);
    }
    Ok(theta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_round_trip() {
        let sched = SelectionSchedule {
            beta: vec![vec![0.0, 1.0], vec![0.5, 0.25]],
            c: vec![vec![1.0, -0.5], vec![0.5, 1.75]],
            theta_star: vec![1, 0],
            c0: qflqg_core::selection::C0Breakdown { constant: 0.0, reduction: 0.0, price: 0.0 },
            control_cost: 0.0,
            j_star: 0.0,
        };
        let text = schedule_csv(&sched, "abc");
        assert!(text.starts_with("# manifest_sha256=abc\nt,c_1,c_2,theta_star\n0,1,-0.5,2\n"));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        std::fs::write(&path, text).unwrap();
        assert_eq!(read_schedule_csv(&path).unwrap(), [1, 0]);
    }
}
