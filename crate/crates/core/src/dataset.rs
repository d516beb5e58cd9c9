//! Sparse noisy observations of a latent curve sequence.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distance convention for locations in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainMetric {
    #[default]
    Linear,
    /// Endpoints identified: distance is `min(|d|, 1 - |d|)`.
    Circular,
}

impl DomainMetric {
    /// Signed displacement of `x` relative to the anchor `at`.
    #[inline]
    pub fn diff(self, x: f64, at: f64) -> f64 {
        let d = x - at;
        match self {
            DomainMetric::Linear => d,
            DomainMetric::Circular => {
                if d > 0.5 {
                    d - 1.0
                } else if d < -0.5 {
                    d + 1.0
                } else {
                    d
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub x: f64,
    pub y: f64,
}

/// Observations `(t, x, y)` for `t = 1..=T`, grouped by time.
///
/// Internally curves are indexed from 0; the CSV format and all user-facing
/// messages use 1-based time.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseFtsDataset {
    curves: Vec<Vec<Observation>>,
    metric: DomainMetric,
}

impl SparseFtsDataset {
    /// Builds a dataset with horizon `horizon` from 1-based records.
    pub fn new(horizon: usize, records: impl IntoIterator<Item = (usize, f64, f64)>) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::invalid("horizon T must be at least 1"));
        }
        let mut curves = vec![Vec::new(); horizon];
        for (t, x, y) in records {
            if t == 0 || t > horizon {
                return Err(Error::invalid(format!("time index {t} outside 1..={horizon}")));
            }
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::invalid(format!("location {x} outside [0, 1]")));
            }
            if !y.is_finite() {
                return Err(Error::invalid(format!("non-finite measurement at t={t}")));
            }
            curves[t - 1].push(Observation { x, y });
        }
        Ok(SparseFtsDataset { curves, metric: DomainMetric::Linear })
    }

    pub fn from_curves(curves: Vec<Vec<Observation>>) -> Result<Self> {
        let horizon = curves.len();
        let records = curves
            .iter()
            .enumerate()
            .flat_map(|(t, c)| c.iter().map(move |o| (t + 1, o.x, o.y)))
            .collect::<Vec<_>>();
        Self::new(horizon, records)
    }

    pub fn with_metric(mut self, metric: DomainMetric) -> Self {
        self.metric = metric;
        self
    }

    pub fn metric(&self) -> DomainMetric {
        self.metric
    }

    /// Horizon `T`.
    pub fn horizon(&self) -> usize {
        self.curves.len()
    }

    /// Observations of curve `t` (0-based).
    pub fn curve(&self, t: usize) -> &[Observation] {
        &self.curves[t]
    }

    pub fn curves(&self) -> &[Vec<Observation>] {
        &self.curves
    }

    pub fn counts(&self) -> Vec<usize> {
        self.curves.iter().map(Vec::len).collect()
    }

    pub fn total_records(&self) -> usize {
        self.curves.iter().map(Vec::len).sum()
    }

    /// Average number of observations per curve, `N̄`.
    pub fn mean_count(&self) -> f64 {
        self.total_records() as f64 / self.horizon() as f64
    }

    /// Average squared count, `mean(N_t²)`.
    pub fn mean_squared_count(&self) -> f64 {
        self.curves.iter().map(|c| (c.len() * c.len()) as f64).sum::<f64>() / self.horizon() as f64
    }

    /// Iterates over 1-based records.
    pub fn records(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        self.curves
            .iter()
            .enumerate()
            .flat_map(|(t, c)| c.iter().map(move |o| (t + 1, o.x, o.y)))
    }

    /// Copy with the curves where `drop[t]` is true emptied (horizon unchanged).
    pub fn without(&self, drop: &[bool]) -> Self {
        let curves = self
            .curves
            .iter()
            .zip(drop)
            .map(|(c, &d)| if d { Vec::new() } else { c.clone() })
            .collect();
        SparseFtsDataset { curves, metric: self.metric }
    }

    /// Copy with time running backwards (`t ↦ T + 1 - t`).
    pub fn time_reversed(&self) -> Self {
        let mut curves = self.curves.clone();
        curves.reverse();
        SparseFtsDataset { curves, metric: self.metric }
    }

    /// Copy extended by `extra` empty curves at the end.
    pub fn extended(&self, extra: usize) -> Self {
        let mut curves = self.curves.clone();
        curves.extend(std::iter::repeat_n(Vec::new(), extra));
        SparseFtsDataset { curves, metric: self.metric }
    }

    /// Applies `f(t, x, y)` (0-based `t`) to every measurement.
    pub fn map_values(&self, f: impl Fn(usize, f64, f64) -> f64) -> Self {
        let curves = self
            .curves
            .iter()
            .enumerate()
            .map(|(t, c)| c.iter().map(|o| Observation { x: o.x, y: f(t, o.x, o.y) }).collect())
            .collect();
        SparseFtsDataset { curves, metric: self.metric }
    }

    /// Reads long-format CSV with header `t,x,y`.
    ///
    /// When `domain = Some((a, b))` locations are rescaled from `[a, b]` to
    /// `[0, 1]`. The horizon is `horizon` if given, otherwise the largest `t`.
    pub fn read_csv<R: Read>(reader: R, domain: Option<(f64, f64)>, horizon: Option<usize>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.eq_ignore_ascii_case(name))
                .ok_or_else(|| parse_err(1, format!("missing column `{name}` (expected header t,x,y)")))
        };
        let (ct, cx, cy) = (col("t")?, col("x")?, col("y")?);
        if let Some((a, b)) = domain {
            if !(b > a) {
                return Err(Error::invalid(format!("empty domain [{a}, {b}]")));
            }
        }
        let mut records = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let line = i as u64 + 2;
            let row = row.map_err(|e| parse_err(line, e.to_string()))?;
            let field = |c: usize, name: &str| -> Result<&str> {
                row.get(c).ok_or_else(|| parse_err(line, format!("missing field `{name}`")))
            };
            let t: usize = field(ct, "t")?
                .parse()
                .map_err(|_| parse_err(line, format!("`t` is not a positive integer: {:?}", row.get(ct))))?;
            let x: f64 = field(cx, "x")?
                .parse()
                .map_err(|_| parse_err(line, format!("`x` is not numeric: {:?}", row.get(cx))))?;
            let y: f64 = field(cy, "y")?
                .parse()
                .map_err(|_| parse_err(line, format!("`y` is not numeric: {:?}", row.get(cy))))?;
            let x = match domain {
                Some((a, b)) => (x - a) / (b - a),
                None => x,
            };
            if t == 0 {
                return Err(parse_err(line, "time index must be >= 1".into()));
            }
            if !(0.0..=1.0).contains(&x) {
                return Err(parse_err(line, format!("location {x} outside [0, 1] (use --domain)")));
            }
            if !y.is_finite() {
                return Err(parse_err(line, "non-finite measurement".into()));
            }
            if let Some(h) = horizon {
                if t > h {
                    return Err(parse_err(line, format!("time index {t} exceeds horizon {h}")));
                }
            }
            records.push((t, x, y));
        }
        let horizon = horizon.unwrap_or_else(|| records.iter().map(|r| r.0).max().unwrap_or(0));
        if horizon == 0 {
            return Err(parse_err(1, "no observations and no horizon given".into()));
        }
        Self::new(horizon, records)
    }

    pub fn read_csv_path(path: &Path, domain: Option<(f64, f64)>, horizon: Option<usize>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?, domain, horizon)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,x,y")?;
        for (t, x, y) in self.records() {
            writeln!(w, "{t},{x},{y}")?;
        }
        Ok(())
    }
}

fn parse_err(line: u64, message: String) -> Error {
    Error::Parse { line, message }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let d = SparseFtsDataset::new(3, vec![(1, 0.1, 2.0), (1, 0.7, -1.0 / 3.0), (3, 1.0, 1e-17)]).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = SparseFtsDataset::read_csv(buf.as_slice(), None, Some(3)).unwrap();
        assert_eq!(d, back);
        assert_eq!(back.counts(), vec![2, 0, 1]);
    }

    #[test]
    fn reports_line_numbers() {
        let bad = "t,x,y\n1,0.5,1\n2,abc,3\n";
        match SparseFtsDataset::read_csv(bad.as_bytes(), None, None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let missing = "a,b\n1,2\n";
        assert!(matches!(
            SparseFtsDataset::read_csv(missing.as_bytes(), None, None),
            Err(Error::Parse { line: 1, .. })
        ));
        let out_of_range = "t,x,y\n5,0.5,1\n";
        assert!(SparseFtsDataset::read_csv(out_of_range.as_bytes(), None, Some(3)).is_err());
    }

    #[test]
    fn domain_rescaling() {
        let csv = "t,x,y\n1,0,1\n1,12,2\n2,24,3\n";
        let d = SparseFtsDataset::read_csv(csv.as_bytes(), Some((0.0, 24.0)), None).unwrap();
        assert_eq!(d.curve(0)[1].x, 0.5);
        assert_eq!(d.curve(1)[0].x, 1.0);
    }

    #[test]
    fn circular_difference_wraps() {
        let m = DomainMetric::Circular;
        assert!((m.diff(0.95, 0.05) + 0.1).abs() < 1e-12);
        assert!((m.diff(0.05, 0.95) - 0.1).abs() < 1e-12);
        assert_eq!(DomainMetric::Linear.diff(0.95, 0.05), 0.95 - 0.05);
    }

    #[test]
    fn count_statistics() {
        let d = SparseFtsDataset::new(2, vec![(1, 0.1, 0.0), (1, 0.2, 0.0), (1, 0.3, 0.0)]).unwrap();
        assert_eq!(d.mean_count(), 1.5);
        assert_eq!(d.mean_squared_count(), 4.5);
    }
}
