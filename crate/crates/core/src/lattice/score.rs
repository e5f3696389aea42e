use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{KwsError, Result};
use crate::math::log_sum_exp;

const SDKF_MAGIC: &[u8; 4] = b"SDKF";

/// What the values of a [`ScoreMatrix`] mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    LogPosterior,
    LogPseudoLikelihood,
    /// Linear-domain occupancies or posteriors.
    Occupancy,
    Gradient,
    Feature,
}

/// Dense frames × units matrix, row-major, double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    frames: usize,
    units: usize,
    kind: ScoreKind,
    values: Vec<f64>,
}

impl ScoreMatrix {
    pub fn filled(frames: usize, units: usize, value: f64, kind: ScoreKind) -> Self {
        Self { frames, units, kind, values: vec![value; frames * units] }
    }

    pub fn zeros(frames: usize, units: usize, kind: ScoreKind) -> Self {
        Self::filled(frames, units, 0.0, kind)
    }

    pub fn from_vec(frames: usize, units: usize, values: Vec<f64>, kind: ScoreKind) -> Result<Self> {
        if values.len() != frames * units {
            return Err(KwsError::DimensionMismatch { expected: frames * units, got: values.len() });
        }
        Ok(Self { frames, units, kind, values })
    }

    pub fn from_rows(rows: &[Vec<f64>], kind: ScoreKind) -> Result<Self> {
        let units = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * units);
        for row in rows {
            if row.len() != units {
                return Err(KwsError::DimensionMismatch { expected: units, got: row.len() });
            }
            values.extend_from_slice(row);
        }
        Ok(Self { frames: rows.len(), units, kind, values })
    }

    #[inline]
    pub fn frames(&self) -> usize {
        self.frames
    }

    #[inline]
    pub fn units(&self) -> usize {
        self.units
    }

    pub fn kind(&self) -> ScoreKind {
        self.kind
    }

    pub fn with_kind(mut self, kind: ScoreKind) -> Self {
        self.kind = kind;
        self
    }

    #[inline]
    pub fn get(&self, t: usize, u: usize) -> f64 {
        self.values[t * self.units + u]
    }

    #[inline]
    pub fn set(&mut self, t: usize, u: usize, v: f64) {
        self.values[t * self.units + u] = v;
    }

    #[inline]
    pub fn add(&mut self, t: usize, u: usize, v: f64) {
        self.values[t * self.units + u] += v;
    }

    #[inline]
    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.units..(t + 1) * self.units]
    }

    #[inline]
    pub fn row_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.values[t * self.units..(t + 1) * self.units]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.units.max(1)).take(self.frames)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn map(&self, kind: ScoreKind, f: impl Fn(f64) -> f64) -> Self {
        Self { frames: self.frames, units: self.units, kind, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// Elementwise `self * scale`.
    pub fn scaled(&self, scale: f64) -> Self {
        self.map(self.kind, |v| v * scale)
    }

    /// Linear-domain copy of a log-domain matrix.
    pub fn exp(&self) -> Self {
        self.map(ScoreKind::Occupancy, f64::exp)
    }

    /// Largest deviation of any row's logsumexp from zero.
    pub fn max_row_normalization_error(&self) -> f64 {
        self.rows().map(|r| log_sum_exp(r).abs()).fold(0.0, f64::max)
    }

    /// Selects every `step`-th frame starting at frame 0.
    pub fn subsample(&self, step: usize) -> Self {
        let step = step.max(1);
        let kept: Vec<usize> = (0..self.frames).step_by(step).collect();
        let mut values = Vec::with_capacity(kept.len() * self.units);
        for &t in &kept {
            values.extend_from_slice(self.row(t));
        }
        Self { frames: kept.len(), units: self.units, kind: self.kind, values }
    }

    pub fn write_sdkf<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(SDKF_MAGIC)?;
        out.write_all(&(self.frames as u32).to_le_bytes())?;
        out.write_all(&(self.units as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.values.len() * 4);
        for &v in &self.values {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_sdkf<R: Read>(mut input: R, kind: ScoreKind) -> Result<Self> {
        let mut header = [0u8; 12];
        input.read_exact(&mut header)?;
        if &header[..4] != SDKF_MAGIC {
            return Err(KwsError::Format("missing SDKF magic".into()));
        }
        let frames = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
        let units = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let mut body = Vec::new();
        input.read_to_end(&mut body)?;
        if body.len() != frames * units * 4 {
            return Err(KwsError::Format(format!(
                "SDKF body has {} bytes, expected {}",
                body.len(),
                frames * units * 4
            )));
        }
        let values = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Ok(Self { frames, units, kind, values })
    }

    /// Splits a concatenation of SDKF records.
    pub fn read_sdkf_all(mut bytes: &[u8], kind: ScoreKind) -> Result<Vec<Self>> {
        let mut out = Vec::new();
        while !bytes.is_empty() {
            if bytes.len() < 12 {
                return Err(KwsError::Format("truncated SDKF header".into()));
            }
            let frames = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
            let units = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
            let end = 12 + frames * units * 4;
            if bytes.len() < end {
                return Err(KwsError::Format("truncated SDKF body".into()));
            }
            out.push(Self::read_sdkf(&bytes[..end], kind)?);
            bytes = &bytes[end..];
        }
        Ok(out)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((0..self.units).map(|u| format!("u{u}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for (t, row) in self.rows().enumerate() {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{t},{}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R, kind: ScoreKind) -> Result<Self> {
        let mut lines = BufReader::new(input).lines();
        let header = lines.next().ok_or_else(|| KwsError::Format("empty CSV".into()))??;
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.first() != Some(&"t") || cols[1..].iter().enumerate().any(|(i, c)| *c != format!("u{i}")) {
            return Err(KwsError::Format(format!("bad score CSV header `{header}`")));
        }
        let units = cols.len() - 1;
        let mut rows = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != units + 1 {
                return Err(KwsError::Format(format!("CSV row has {} fields, expected {}", fields.len(), units + 1)));
            }
            let t: usize = fields[0].parse().map_err(|_| KwsError::Format(format!("bad frame index `{}`", fields[0])))?;
            if t != rows.len() {
                return Err(KwsError::Format(format!("frame index {t} out of order")));
            }
            let row = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>().map_err(|_| KwsError::Format(format!("bad value `{f}`"))))
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        let mut m = Self::from_rows(&rows, kind)?;
        if rows.is_empty() {
            m.units = units;
        }
        Ok(m)
    }

    /// Loads SDKF or CSV, chosen by the file's leading bytes.
    pub fn load(path: &Path, kind: ScoreKind) -> Result<Self> {
        let bytes = fs::read(path)?;
        if bytes.starts_with(SDKF_MAGIC) {
            Self::read_sdkf(&bytes[..], kind)
        } else {
            Self::read_csv(&bytes[..], kind)
        }
    }

    pub fn save_sdkf(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(12 + self.values.len() * 4);
        self.write_sdkf(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sdkf_layout_is_little_endian_row_major() {
        let m = ScoreMatrix::from_rows(&[vec![1.0, -2.5], vec![0.25, 3.0]], ScoreKind::Feature).unwrap();
        let mut buf = Vec::new();
        m.write_sdkf(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"SDKF");
        assert_eq!(&buf[4..8], &2u32.to_le_bytes());
        assert_eq!(&buf[8..12], &2u32.to_le_bytes());
        assert_eq!(&buf[12..16], &1.0f32.to_le_bytes());
        assert_eq!(&buf[16..20], &(-2.5f32).to_le_bytes());
        assert_eq!(buf.len(), 12 + 16);
        let back = ScoreMatrix::read_sdkf(&buf[..], ScoreKind::Feature).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn sdkf_archive_round_trip() {
        let a = ScoreMatrix::from_rows(&[vec![1.0, 2.0]], ScoreKind::Feature).unwrap();
        let b = ScoreMatrix::from_rows(&[vec![3.0], vec![4.5]], ScoreKind::Feature).unwrap();
        let mut buf = Vec::new();
        a.write_sdkf(&mut buf).unwrap();
        b.write_sdkf(&mut buf).unwrap();
        assert_eq!(ScoreMatrix::read_sdkf_all(&buf, ScoreKind::Feature).unwrap(), vec![a, b]);
        assert!(ScoreMatrix::read_sdkf_all(&buf[..buf.len() - 1], ScoreKind::Feature).is_err());
    }

    #[test]
    fn truncated_sdkf_is_rejected() {
        let m = ScoreMatrix::zeros(3, 2, ScoreKind::Feature);
        let mut buf = Vec::new();
        m.write_sdkf(&mut buf).unwrap();
        buf.pop();
        assert!(matches!(ScoreMatrix::read_sdkf(&buf[..], ScoreKind::Feature), Err(KwsError::Format(_))));
    }

    #[test]
    fn csv_round_trip_and_header_check() {
        let m = ScoreMatrix::from_rows(&[vec![0.5, -1.0, 2.0]], ScoreKind::LogPosterior).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("t,u0,u1,u2\n"));
        assert_eq!(ScoreMatrix::read_csv(&buf[..], ScoreKind::LogPosterior).unwrap(), m);
        assert!(ScoreMatrix::read_csv(&b"frame,a\n0,1\n"[..], ScoreKind::LogPosterior).is_err());
    }

    #[test]
    fn subsample_keeps_every_third_frame() {
        let rows: Vec<Vec<f64>> = (0..7).map(|t| vec![t as f64]).collect();
        let m = ScoreMatrix::from_rows(&rows, ScoreKind::Feature).unwrap().subsample(3);
        assert_eq!(m.frames(), 3);
        assert_eq!(m.as_slice(), &[0.0, 3.0, 6.0]);
    }
}
