//! Sampled multi-channel trajectories.

use std::io::{Read, Write};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strictly increasing sample times, in hours.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::GridTooShort(points.len()));
        }
        if let Some(i) = points.iter().position(|t| !t.is_finite()) {
            return Err(Error::NonIncreasingGrid { index: i });
        }
        if let Some(i) = points.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::NonIncreasingGrid { index: i + 1 });
        }
        Ok(Self { points })
    }

    /// `count` points `start, start + step, ...`.
    pub fn uniform(start: f64, step: f64, count: usize) -> Result<Self> {
        Self::new((0..count).map(|i| start + step * i as f64).collect())
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.points[0]
    }

    pub fn end(&self) -> f64 {
        self.points[self.points.len() - 1]
    }
}

impl TryFrom<Vec<f64>> for TimeGrid {
    type Error = Error;
    fn try_from(points: Vec<f64>) -> Result<Self> {
        Self::new(points)
    }
}

impl From<TimeGrid> for Vec<f64> {
    fn from(g: TimeGrid) -> Self {
        g.points
    }
}

/// Sample indices `j` with `t_j` in `[t_k + a, t_k + b]`.
///
/// `b` may be `f64::INFINITY`. An empty time window with `a = 0` degrades to
/// the singleton `{k}`, so short windows on a coarse grid act pointwise.
pub fn window_indices(grid: &TimeGrid, k: usize, a: f64, b: f64) -> Result<Range<usize>> {
    if k >= grid.len() {
        return Err(Error::IndexOutOfRange {
            index: k,
            len: grid.len(),
        });
    }
    if a > b || a.is_nan() || b.is_nan() {
        return Err(Error::InvalidWindow { a, b });
    }
    let t = grid.points();
    let lo_t = t[k] + a;
    let hi_t = t[k] + b;
    let lo = t.partition_point(|&x| x < lo_t);
    let hi = t.partition_point(|&x| x <= hi_t);
    if lo >= hi {
        if a == 0.0 {
            return Ok(k..k + 1);
        }
        return Ok(lo..lo);
    }
    Ok(lo..hi)
}

/// Channels sampled on a shared [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    grid: TimeGrid,
    names: Vec<String>,
    channels: Vec<Vec<f64>>,
}

impl Trace {
    pub fn new<S: Into<String>>(grid: TimeGrid, channels: Vec<(S, Vec<f64>)>) -> Result<Self> {
        let mut names: Vec<String> = Vec::with_capacity(channels.len());
        let mut data = Vec::with_capacity(channels.len());
        for (name, samples) in channels {
            let name = name.into();
            if samples.len() != grid.len() {
                return Err(Error::LengthMismatch {
                    name,
                    expected: grid.len(),
                    got: samples.len(),
                });
            }
            if names.contains(&name) {
                return Err(Error::DuplicateChannel(name));
            }
            names.push(name);
            data.push(samples);
        }
        Ok(Self {
            grid,
            names,
            channels: data,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn channel_index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownChannel(name.to_string()))
    }

    pub fn channel(&self, name: &str) -> Result<&[f64]> {
        Ok(&self.channels[self.channel_index(name)?])
    }

    pub fn channel_at(&self, idx: usize) -> &[f64] {
        &self.channels[idx]
    }

    /// Appends a channel; fails on a duplicate name or wrong length.
    pub fn push_channel(&mut self, name: impl Into<String>, samples: Vec<f64>) -> Result<()> {
        let name = name.into();
        if samples.len() != self.grid.len() {
            return Err(Error::LengthMismatch {
                name,
                expected: self.grid.len(),
                got: samples.len(),
            });
        }
        if self.names.contains(&name) {
            return Err(Error::DuplicateChannel(name));
        }
        self.names.push(name);
        self.channels.push(samples);
        Ok(())
    }

    /// Piecewise-linear value of `channel` at time `t`, holding the first and
    /// last samples outside the grid.
    pub fn interp_linear(&self, channel: &str, t: f64) -> Result<f64> {
        let values = self.channel(channel)?;
        Ok(interp_samples(self.grid.points(), values, t))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for (k, t) in self.grid.points().iter().enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(self.channels.iter().map(|c| c[k].to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let header = r.headers().map_err(csv_err)?.clone();
        if header.get(0) != Some("t") {
            return Err(Error::Config("trace CSV must start with a `t` column".into()));
        }
        let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut times = Vec::new();
        let mut cols = vec![Vec::new(); names.len()];
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            let mut fields = rec.iter().map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad number `{f}` in trace CSV")))
            });
            times.push(fields.next().transpose()?.unwrap_or(f64::NAN));
            for col in cols.iter_mut() {
                col.push(
                    fields
                        .next()
                        .transpose()?
                        .ok_or_else(|| Error::Config("short row in trace CSV".into()))?,
                );
            }
        }
        Trace::new(TimeGrid::new(times)?, names.into_iter().zip(cols).collect())
    }
}

/// Linear interpolation on raw sample arrays with constant extrapolation.
pub fn interp_samples(times: &[f64], values: &[f64], t: f64) -> f64 {
    debug_assert_eq!(times.len(), values.len());
    let n = times.len();
    if t <= times[0] {
        return values[0];
    }
    if t >= times[n - 1] {
        return values[n - 1];
    }
    let hi = times.partition_point(|&x| x <= t);
    let lo = hi - 1;
    if times[lo] == t {
        return values[lo];
    }
    let w = (t - times[lo]) / (times[hi] - times[lo]);
    values[lo] + w * (values[hi] - values[lo])
}

fn csv_err(e: csv::Error) -> Error {
    if e.is_io_error() {
        Error::Io(e.to_string())
    } else {
        Error::Config(e.to_string())
    }
}
