use crate::{error::invalid, Result};
use std::path::Path;

/// Observations `y_k` at strictly increasing times `t_k > t0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedSeries {
    t0: f64,
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl ObservedSeries {
    pub fn new(t0: f64, times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(invalid(format!(
                "{} observation times but {} observations",
                times.len(),
                values.len()
            )));
        }
        let mut prev = t0;
        for &t in &times {
            if !(t > prev) {
                return Err(invalid(
                    "observation times must be strictly increasing after t0",
                ));
            }
            prev = t;
        }
        Ok(Self { t0, times, values })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Writes `t,y1,y2,...`.
    pub fn write_csv(&self, out: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let width = self.values.first().map_or(0, Vec::len);
        let mut header = vec!["t".to_string()];
        header.extend((1..=width).map(|k| format!("y{k}")));
        w.write_record(&header)?;
        for (t, y) in self.times.iter().zip(&self.values) {
            let mut rec = vec![format!("{t}")];
            rec.extend(y.iter().map(|v| format!("{v}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the `t,y1,y2,...` layout written by [`write_csv`](Self::write_csv).
    pub fn read_csv(path: &Path, t0: f64) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_path(path)?;
        let mut times = Vec::new();
        let mut values = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let nums: Vec<f64> = rec
                .iter()
                .map(|f| {
                    f.trim()
                        .parse::<f64>()
                        .map_err(|_| invalid(format!("bad number '{f}'")))
                })
                .collect::<Result<_>>()?;
            if nums.len() < 2 {
                return Err(invalid("each row needs a time and at least one value"));
            }
            times.push(nums[0]);
            values.push(nums[1..].to_vec());
        }
        Self::new(t0, times, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(ObservedSeries::new(0.0, vec![1.0, 2.0], vec![vec![0.0]]).is_err());
        assert!(ObservedSeries::new(0.0, vec![1.0, 1.0], vec![vec![0.0], vec![0.0]]).is_err());
        assert!(ObservedSeries::new(1.0, vec![1.0], vec![vec![0.0]]).is_err());
        assert!(ObservedSeries::new(0.0, vec![0.5, 1.0], vec![vec![0.0], vec![1.0]]).is_ok());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let s = ObservedSeries::new(0.0, vec![1.0, 2.0], vec![vec![70.5, 3.25], vec![-1.0, 0.0]])
            .unwrap();
        s.write_csv(std::fs::File::create(&p).unwrap()).unwrap();
        assert!(std::fs::read_to_string(&p)
            .unwrap()
            .starts_with("t,y1,y2\n"));
        assert_eq!(ObservedSeries::read_csv(&p, 0.0).unwrap(), s);
    }
}
