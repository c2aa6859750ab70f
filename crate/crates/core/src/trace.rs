//! Time-stamped closed-loop history and its CSV form.
//!
//! Header: `t, x_true[0..n), x_meas[0..n), u[0..m), x_ref[0..n),
//! solver_iters, solver_cost, solve_ms, finetune_event, ft_loss_before,
//! ft_loss_after, ft_ms`. Values are written with shortest round-trip
//! formatting; missing values are `NaN`.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub x_true: Vec<f64>,
    pub x_meas: Vec<f64>,
    pub u: Vec<f64>,
    pub x_ref: Vec<f64>,
    pub solver_iters: usize,
    pub solver_cost: f64,
    pub solve_ms: f64,
    pub finetune_event: bool,
    pub ft_loss_before: f64,
    pub ft_loss_after: f64,
    pub ft_ms: f64,
}

impl TraceRow {
    /// A row with only the plant columns filled in.
    pub fn plant(t: f64, x_true: Vec<f64>, x_meas: Vec<f64>, u: Vec<f64>) -> Self {
        let n = x_true.len();
        Self {
            t,
            x_true,
            x_meas,
            u,
            x_ref: vec![f64::NAN; n],
            solver_iters: 0,
            solver_cost: f64::NAN,
            solve_ms: f64::NAN,
            finetune_event: false,
            ft_loss_before: f64::NAN,
            ft_loss_after: f64::NAN,
            ft_ms: f64::NAN,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutTrace {
    pub state_dim: usize,
    pub input_dim: usize,
    pub rows: Vec<TraceRow>,
    /// Set when the run stopped early because the plant diverged.
    pub failed: bool,
}

impl RolloutTrace {
    pub fn new(state_dim: usize, input_dim: usize) -> Self {
        Self {
            state_dim,
            input_dim,
            rows: Vec::new(),
            failed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn finetune_events(&self) -> usize {
        self.rows.iter().filter(|r| r.finetune_event).count()
    }

    pub fn header(state_dim: usize, input_dim: usize) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        h.extend((0..state_dim).map(|i| format!("x_true[{i}]")));
        h.extend((0..state_dim).map(|i| format!("x_meas[{i}]")));
        h.extend((0..input_dim).map(|i| format!("u[{i}]")));
        h.extend((0..state_dim).map(|i| format!("x_ref[{i}]")));
        for c in [
            "solver_iters",
            "solver_cost",
            "solve_ms",
            "finetune_event",
            "ft_loss_before",
            "ft_loss_after",
            "ft_ms",
        ] {
            h.push(c.to_string());
        }
        h
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::header(self.state_dim, self.input_dim))?;
        for r in &self.rows {
            let mut rec = vec![fmt_f64(r.t)];
            rec.extend(r.x_true.iter().map(|v| fmt_f64(*v)));
            rec.extend(r.x_meas.iter().map(|v| fmt_f64(*v)));
            rec.extend(r.u.iter().map(|v| fmt_f64(*v)));
            rec.extend(r.x_ref.iter().map(|v| fmt_f64(*v)));
            rec.push(r.solver_iters.to_string());
            rec.push(fmt_f64(r.solver_cost));
            rec.push(fmt_f64(r.solve_ms));
            rec.push(if r.finetune_event { "1" } else { "0" }.to_string());
            rec.push(fmt_f64(r.ft_loss_before));
            rec.push(fmt_f64(r.ft_loss_after));
            rec.push(fmt_f64(r.ft_ms));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Numeric(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()?).map_err(|e| Error::io(path, e))
    }

    /// Reads a trace written by [`RolloutTrace::write_csv`]; dimensions come
    /// from the header.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let ingest = |column: &str, msg: String| Error::Ingestion {
            file: path.to_path_buf(),
            column: column.to_string(),
            msg,
        };
        let mut rdr = csv::Reader::from_path(path).map_err(|e| ingest("<file>", e.to_string()))?;
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| ingest("<header>", e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let n = header.iter().filter(|h| h.starts_with("x_true[")).count();
        let m = header.iter().filter(|h| h.starts_with("u[")).count();
        let expected = Self::header(n, m);
        if header != expected {
            let bad = header
                .iter()
                .zip(&expected)
                .find(|(a, b)| a != b)
                .map(|(a, _)| a.clone())
                .unwrap_or_else(|| "<column count>".into());
            return Err(ingest(&bad, "header does not match the trace schema".into()));
        }
        let mut trace = Self::new(n, m);
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| ingest("<row>", e.to_string()))?;
            if rec.len() != expected.len() {
                return Err(ingest("<row>", format!("row {line} has {} fields", rec.len())));
            }
            let val = |i: usize| -> Result<f64> {
                rec[i]
                    .parse::<f64>()
                    .map_err(|e| ingest(&expected[i], format!("row {line}: {e}")))
            };
            let vec_at = |start: usize, len: usize| -> Result<Vec<f64>> {
                (start..start + len).map(val).collect()
            };
            let mut at = 0;
            let t = val(at)?;
            at += 1;
            let x_true = vec_at(at, n)?;
            at += n;
            let x_meas = vec_at(at, n)?;
            at += n;
            let u = vec_at(at, m)?;
            at += m;
            let x_ref = vec_at(at, n)?;
            at += n;
            let solver_iters = rec[at]
                .parse::<usize>()
                .map_err(|e| ingest("solver_iters", format!("row {line}: {e}")))?;
            let finetune_event = match &rec[at + 3] {
                "0" => false,
                "1" => true,
                other => return Err(ingest("finetune_event", format!("row {line}: {other}"))),
            };
            trace.rows.push(TraceRow {
                t,
                x_true,
                x_meas,
                u,
                x_ref,
                solver_iters,
                solver_cost: val(at + 1)?,
                solve_ms: val(at + 2)?,
                finetune_event,
                ft_loss_before: val(at + 4)?,
                ft_loss_after: val(at + 5)?,
                ft_ms: val(at + 6)?,
            });
        }
        Ok(trace)
    }
}

/// Shortest round-trip decimal form.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let mut tr = RolloutTrace::new(2, 1);
        let mut row = TraceRow::plant(0.02, vec![0.1, 1.0 / 3.0], vec![0.1, 0.3], vec![-2.5]);
        row.finetune_event = true;
        row.ft_loss_before = 0.5;
        tr.rows.push(row);
        tr.rows.push(TraceRow::plant(0.04, vec![1e-300, -0.0], vec![0.0, 0.0], vec![1.0]));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        tr.write_csv(&path).unwrap();
        let back = RolloutTrace::read_csv(&path).unwrap();
        assert_eq!(back.rows.len(), 2);
        assert_eq!(back.rows[0].x_true[1], 1.0 / 3.0);
        assert!(back.rows[0].finetune_event);
        assert!(back.rows[1].solver_cost.is_nan());
        assert_eq!(back.to_csv_string().unwrap(), tr.to_csv_string().unwrap());
    }

    #[test]
    fn schema_mismatch_names_file_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "t,x_true[0],bogus\n0,1,2\n").unwrap();
        match RolloutTrace::read_csv(&path) {
            Err(Error::Ingestion { file, column, .. }) => {
                assert_eq!(file, path);
                assert_eq!(column, "bogus");
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
