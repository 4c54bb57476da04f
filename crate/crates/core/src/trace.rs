//! Per-event solver metrics and CSV trace output.

use std::io::Write;

/// Metrics captured at one logging event.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iteration: u64,
    /// Sampled-fiber work in units of one full single-mode MTTKRP.
    pub mttkrp_eq: f64,
    /// `mttkrp_eq / N`.
    pub all_mode_mttkrp_eq: f64,
    pub sampled_entries: u64,
    pub wall_seconds: f64,
    pub cost: f64,
    pub mse_per_mode: Option<Vec<f64>>,
    pub mse_avg: Option<f64>,
}

pub trait TraceSink {
    fn record(&mut self, rec: &TraceRecord) -> std::io::Result<()>;
}

impl TraceSink for Vec<TraceRecord> {
    fn record(&mut self, rec: &TraceRecord) -> std::io::Result<()> {
        self.push(rec.clone());
        Ok(())
    }
}

/// Discards records.
pub struct NullSink;

impl TraceSink for NullSink {
    fn record(&mut self, _rec: &TraceRecord) -> std::io::Result<()> {
        Ok(())
    }
}

/// Forwards to two sinks.
pub struct Tee<'a, A: TraceSink + ?Sized, B: TraceSink + ?Sized>(pub &'a mut A, pub &'a mut B);

impl<A: TraceSink + ?Sized, B: TraceSink + ?Sized> TraceSink for Tee<'_, A, B> {
    fn record(&mut self, rec: &TraceRecord) -> std::io::Result<()> {
        self.0.record(rec)?;
        self.1.record(rec)
    }
}

pub fn csv_columns(n_modes: usize, with_mse: bool) -> Vec<String> {
    let mut cols: Vec<String> = [
        "iteration",
        "mttkrp_eq",
        "all_mode_mttkrp_eq",
        "sampled_entries",
        "wall_seconds",
        "cost",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    if with_mse {
        cols.extend((1..=n_modes).map(|n| format!("mse_mode_{n}")));
        cols.push("mse_avg".into());
    }
    cols
}

/// Writes `#`-prefixed header lines, the column row, then one row per record.
pub struct CsvTraceWriter<W: Write> {
    out: W,
    n_modes: usize,
    with_mse: bool,
}

impl<W: Write> CsvTraceWriter<W> {
    pub fn new(mut out: W, header: &[String], n_modes: usize, with_mse: bool) -> std::io::Result<Self> {
        for line in header {
            writeln!(out, "# {line}")?;
        }
        writeln!(out, "{}", csv_columns(n_modes, with_mse).join(","))?;
        Ok(CsvTraceWriter { out, n_modes, with_mse })
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> TraceSink for CsvTraceWriter<W> {
    fn record(&mut self, r: &TraceRecord) -> std::io::Result<()> {
        write!(
            self.out,
            "{},{},{},{},{},{}",
            r.iteration, r.mttkrp_eq, r.all_mode_mttkrp_eq, r.sampled_entries, r.wall_seconds, r.cost
        )?;
        if self.with_mse {
            match &r.mse_per_mode {
                Some(per_mode) => {
                    for v in per_mode {
                        write!(self.out, ",{v}")?;
                    }
                    write!(self.out, ",{}", r.mse_avg.unwrap_or(f64::NAN))?;
                }
                None => {
                    for _ in 0..=self.n_modes {
                        write!(self.out, ",NaN")?;
                    }
                }
            }
        }
        writeln!(self.out)?;
        self.out.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(mse: Option<Vec<f64>>) -> TraceRecord {
        TraceRecord {
            iteration: 500,
            mttkrp_eq: 1.0,
            all_mode_mttkrp_eq: 1.0 / 3.0,
            sampled_entries: 1_000_000,
            wall_seconds: 0.0,
            cost: 0.25,
            mse_avg: mse.as_ref().map(|m| m.iter().sum::<f64>() / m.len() as f64),
            mse_per_mode: mse,
        }
    }

    #[test]
    fn csv_layout() {
        let mut w = CsvTraceWriter::new(Vec::new(), &["seed = 3".into()], 3, true).unwrap();
        w.record(&rec(Some(vec![0.5, 0.25, 0.75]))).unwrap();
        w.record(&rec(None)).unwrap();
        let text = String::from_utf8(w.into_inner()).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "# seed = 3");
        assert_eq!(
            lines[1],
            "iteration,mttkrp_eq,all_mode_mttkrp_eq,sampled_entries,wall_seconds,cost,mse_mode_1,mse_mode_2,mse_mode_3,mse_avg"
        );
        assert_eq!(lines[2], "500,1,0.3333333333333333,1000000,0,0.25,0.5,0.25,0.75,0.5");
        assert_eq!(lines[3], "500,1,0.3333333333333333,1000000,0,0.25,NaN,NaN,NaN,NaN");
    }

    #[test]
    fn no_mse_columns_without_truth() {
        let mut w = CsvTraceWriter::new(Vec::new(), &[], 3, false).unwrap();
        w.record(&rec(None)).unwrap();
        let text = String::from_utf8(w.into_inner()).unwrap();
        assert!(text.starts_with("iteration,mttkrp_eq,all_mode_mttkrp_eq,sampled_entries,wall_seconds,cost\n"));
        assert_eq!(text.lines().nth(1).unwrap().split(',').count(), 6);
    }
}
