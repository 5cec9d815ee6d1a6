//! Stream file formats.
//!
//! CSV streams carry the header `t,channel,re,im` with integer sample
//! indices and shortest-roundtrip decimal floats, so `load(save(m)) == m`
//! bit-exactly. The JSONL alternative holds one `{t, channel, re, im}`
//! object per line. Channel metadata and the sampling rate are not part of
//! the wire format; loads default to 30 Hz voltage channels.
//!
//! Missing cells are an error, not imputed: every `(t, channel)` pair in the
//! dense grid must be present exactly once.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detect::DetectionEvent;
use crate::error::{Error, Result};
use crate::model::{ChannelMeta, ComplexSample, MeasurementMatrix, DEFAULT_RATE_HZ};

/// Supported stream file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamFormat {
    Csv,
    Jsonl,
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleRecord {
    t: usize,
    channel: usize,
    re: f64,
    im: f64,
}

/// Load a dense measurement matrix from a CSV or JSONL stream file.
pub fn load_stream<P: AsRef<Path>>(path: P, format: StreamFormat) -> Result<MeasurementMatrix> {
    let file = File::open(path)?;
    load_stream_from(file, format)
}

/// Same as [`load_stream`] but over any reader, which keeps tests off disk.
pub fn load_stream_from<R: Read>(reader: R, format: StreamFormat) -> Result<MeasurementMatrix> {
    let records = match format {
        StreamFormat::Csv => read_csv_records(reader)?,
        StreamFormat::Jsonl => read_jsonl_records(reader)?,
    };
    assemble(records)
}

fn read_csv_records<R: Read>(reader: R) -> Result<Vec<SampleRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<SampleRecord>().enumerate() {
        let rec = rec.map_err(|e| Error::Parse { line: i + 2, msg: e.to_string() })?;
        out.push(rec);
    }
    Ok(out)
}

fn read_jsonl_records<R: Read>(reader: R) -> Result<Vec<SampleRecord>> {
    let buf = BufReader::new(reader);
    let mut out = Vec::new();
    for (i, line) in buf.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord =
            serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        out.push(rec);
    }
    Ok(out)
}

fn assemble(records: Vec<SampleRecord>) -> Result<MeasurementMatrix> {
    if records.is_empty() {
        return Err(Error::Parse { line: 0, msg: "stream file holds no samples".into() });
    }
    let n_samples = records.iter().map(|r| r.t).max().unwrap() + 1;
    let n_channels = records.iter().map(|r| r.channel).max().unwrap() + 1;
    let mut cells: Vec<Option<ComplexSample>> = vec![None; n_samples * n_channels];
    for rec in records {
        if !rec.re.is_finite() || !rec.im.is_finite() {
            return Err(Error::NonFinite {
                t: rec.t,
                channel: rec.channel,
                value: if rec.re.is_finite() { rec.im } else { rec.re },
            });
        }
        let slot = &mut cells[rec.t * n_channels + rec.channel];
        if slot.is_some() {
            return Err(Error::DuplicateCell { t: rec.t, channel: rec.channel });
        }
        *slot = Some(ComplexSample { re: rec.re, im: rec.im });
    }
    let mut samples = Vec::with_capacity(cells.len());
    for (i, c) in cells.into_iter().enumerate() {
        match c {
            Some(s) => samples.push(s),
            None => return Err(Error::MissingCell { t: i / n_channels, channel: i % n_channels }),
        }
    }
    MeasurementMatrix::new(
        samples,
        n_samples,
        n_channels,
        DEFAULT_RATE_HZ,
        vec![ChannelMeta::default(); n_channels],
    )
}

/// Write a measurement matrix as a CSV or JSONL stream file.
pub fn save_stream<P: AsRef<Path>>(m: &MeasurementMatrix, path: P, format: StreamFormat) -> Result<()> {
    let file = File::create(path)?;
    save_stream_to(m, file, format)
}

/// Same as [`save_stream`] but over any writer.
pub fn save_stream_to<W: Write>(m: &MeasurementMatrix, writer: W, format: StreamFormat) -> Result<()> {
    let mut w = BufWriter::new(writer);
    match format {
        StreamFormat::Csv => {
            writeln!(w, "t,channel,re,im")?;
            for t in 0..m.n_samples() {
                for j in 0..m.n_channels() {
                    let z = m.get(t, j);
                    writeln!(w, "{t},{j},{},{}", z.re, z.im)?;
                }
            }
        }
        StreamFormat::Jsonl => {
            for t in 0..m.n_samples() {
                for j in 0..m.n_channels() {
                    let z = m.get(t, j);
                    let rec = SampleRecord { t, channel: j, re: z.re, im: z.im };
                    writeln!(w, "{}", serde_json::to_string(&rec)?)?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Write detection events as JSONL, one `{t, channel, d_t, delta, pattern}`
/// object per line.
pub fn save_events<P: AsRef<Path>>(events: &[DetectionEvent], path: P) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    for e in events {
        writeln!(w, "{}", serde_json::to_string(e)?)?;
    }
    w.flush()?;
    Ok(())
}

/// Read detection events back from JSONL.
pub fn load_events<P: AsRef<Path>>(path: P) -> Result<Vec<DetectionEvent>> {
    let file = File::open(path)?;
    let buf = BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in buf.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: DetectionEvent =
            serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        out.push(e);
    }
    Ok(out)
}

/// Write ground-truth labels as CSV `t,channel,class`. Clean cells are
/// omitted; absent rows mean class 0.
pub fn save_labels<P: AsRef<Path>>(labels: &crate::attack::LabelTrack, path: P) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "t,channel,class")?;
    for t in 0..labels.n_samples() {
        for j in 0..labels.n_channels() {
            let c = labels.get(t, j);
            if c != 0 {
                writeln!(w, "{t},{j},{c}")?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a ground-truth label track written by [`save_labels`]. The grid
/// shape cannot be recovered from a sparse file, so it must be supplied.
pub fn load_labels<P: AsRef<Path>>(path: P, n_samples: usize, n_channels: usize) -> Result<crate::attack::LabelTrack> {
    let file = File::open(path)?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let mut track = crate::attack::LabelTrack::zeros(n_samples, n_channels);
    #[derive(Deserialize)]
    struct Row {
        t: usize,
        channel: usize,
        class: u8,
    }
    for (i, rec) in rdr.deserialize::<Row>().enumerate() {
        let rec = rec.map_err(|e| Error::Parse { line: i + 2, msg: e.to_string() })?;
        if rec.t >= n_samples || rec.channel >= n_channels {
            return Err(Error::Parse {
                line: i + 2,
                msg: format!("label at ({}, {}) outside {}x{} grid", rec.t, rec.channel, n_samples, n_channels),
            });
        }
        track.set(rec.t, rec.channel, rec.class);
    }
    Ok(track)
}
