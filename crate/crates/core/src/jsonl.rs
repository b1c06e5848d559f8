//! Newline-delimited JSON encoding of survey samples.
//!
//! One record per line:
//!
//! ```text
//! {"point_id":"rp-07","x":3.0,"y":2.0,"heading_deg":0,"t":"2024-05-01T03:21:09Z","device_id":"dev-1","readings":[{"bssid":"aa:bb:cc:dd:ee:ff","band":"5","ssid":"lab","rssi":-61}]}
//! ```
//!
//! Unknown keys are rejected. Floats are written in shortest round-trip form
//! so a decoded file reproduces the in-memory samples bit for bit.

use std::io::{self, BufRead, Write};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AccessPointId, Band, Bssid, FingerprintSample, Heading, Readings};

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("malformed record on line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadingRecord {
    pub bssid: Bssid,
    pub band: Band,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ssid: Option<String>,
    pub rssi: i32,
}

pub(crate) fn readings_to_records(readings: &Readings) -> Vec<ReadingRecord> {
    readings
        .iter()
        .map(|(ap, &rssi)| ReadingRecord {
            bssid: ap.bssid,
            band: ap.band,
            ssid: ap.ssid.clone(),
            rssi,
        })
        .collect()
}

pub(crate) fn records_to_readings(records: Vec<ReadingRecord>) -> Result<Readings, String> {
    let mut readings = Readings::new();
    for r in records {
        let ap = AccessPointId { bssid: r.bssid, band: r.band, ssid: r.ssid };
        let label = ap.to_string();
        if readings.insert(ap, r.rssi).is_some() {
            return Err(format!("duplicate reading for {label}"));
        }
    }
    Ok(readings)
}

pub(crate) mod timestamp {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn render(t: &DateTime<Utc>) -> String {
        t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
    }

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&render(t))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&raw)
            .map(|t| t.with_timezone(&Utc))
            .map_err(serde::de::Error::custom)
    }
}

/// Wire form of [`FingerprintSample`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub point_id: String,
    pub x: f64,
    pub y: f64,
    pub heading_deg: Heading,
    #[serde(with = "timestamp")]
    pub t: DateTime<Utc>,
    pub device_id: String,
    pub readings: Vec<ReadingRecord>,
}

impl From<&FingerprintSample> for SampleRecord {
    fn from(s: &FingerprintSample) -> Self {
        SampleRecord {
            point_id: s.point_id.clone(),
            x: s.x,
            y: s.y,
            heading_deg: s.heading,
            t: s.timestamp,
            device_id: s.device_id.clone(),
            readings: readings_to_records(&s.readings),
        }
    }
}

impl TryFrom<SampleRecord> for FingerprintSample {
    type Error = String;

    fn try_from(r: SampleRecord) -> Result<Self, Self::Error> {
        Ok(FingerprintSample {
            point_id: r.point_id,
            x: r.x,
            y: r.y,
            heading: r.heading_deg,
            timestamp: r.t,
            device_id: r.device_id,
            readings: records_to_readings(r.readings)?,
        })
    }
}

impl Serialize for FingerprintSample {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        SampleRecord::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for FingerprintSample {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let record = SampleRecord::deserialize(deserializer)?;
        FingerprintSample::try_from(record).map_err(serde::de::Error::custom)
    }
}

/// Encodes one sample as a single JSON line, newline included.
pub fn encode_line(sample: &FingerprintSample) -> Vec<u8> {
    let mut line = serde_json::to_vec(sample).expect("sample serialization is infallible");
    line.push(b'\n');
    line
}

/// Writes `samples` as JSONL and returns the number of bytes written.
pub fn write_jsonl<'a, W, I>(samples: I, mut sink: W) -> io::Result<u64>
where
    W: Write,
    I: IntoIterator<Item = &'a FingerprintSample>,
{
    let mut written = 0u64;
    for sample in samples {
        let line = encode_line(sample);
        sink.write_all(&line)?;
        written += line.len() as u64;
    }
    sink.flush()?;
    Ok(written)
}

/// Reads every record from `source`. Blank lines are skipped; any malformed
/// line aborts the read and reports its 1-based line number.
pub fn read_jsonl<R: BufRead>(source: R) -> Result<Vec<FingerprintSample>, JsonlError> {
    read_lines(source)
}

/// Generic JSONL reader used for samples and observation files alike.
pub fn read_lines<T, R>(source: R) -> Result<Vec<T>, JsonlError>
where
    T: serde::de::DeserializeOwned,
    R: BufRead,
{
    let mut out = Vec::new();
    for (idx, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| JsonlError::MalformedRecord {
            line: idx + 1,
            reason: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"{"point_id":"rp-07","x":3.0,"y":2.0,"heading_deg":0,"t":"2024-05-01T03:21:09Z","device_id":"dev-1","readings":[{"bssid":"aa:bb:cc:dd:ee:ff","band":"5","ssid":"lab","rssi":-61}]}"#;

    #[test]
    fn empty_roundtrip() {
        let mut buf = Vec::new();
        assert_eq!(write_jsonl(&[], &mut buf).unwrap(), 0);
        assert!(buf.is_empty());
        assert!(read_jsonl(&buf[..]).unwrap().is_empty());
    }

    #[test]
    fn reference_line_is_bit_exact() {
        let samples = read_jsonl(EXAMPLE.as_bytes()).unwrap();
        assert_eq!(samples.len(), 1);
        let mut buf = Vec::new();
        write_jsonl(&samples, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{EXAMPLE}\n"));
    }

    #[test]
    fn two_readings_roundtrip() {
        let line = r#"{"point_id":"a","x":0.1,"y":13.75,"heading_deg":270,"t":"2024-05-01T03:21:09.123456789Z","device_id":"d","readings":[{"bssid":"00:00:00:00:00:01","band":"2.4","rssi":-100},{"bssid":"00:00:00:00:00:01","band":"5","ssid":"x","rssi":0}]}"#;
        let samples = read_jsonl(line.as_bytes()).unwrap();
        assert_eq!(samples[0].readings.len(), 2);
        assert_eq!(samples[0].heading, Heading::W);
        let mut buf = Vec::new();
        write_jsonl(&samples, &mut buf).unwrap();
        assert_eq!(read_jsonl(&buf[..]).unwrap(), samples);
        assert_eq!(String::from_utf8(buf).unwrap().trim_end(), line);
    }

    #[test]
    fn missing_heading_is_malformed() {
        let bad = EXAMPLE.replace(r#""heading_deg":0,"#, "");
        match read_jsonl(bad.as_bytes()) {
            Err(JsonlError::MalformedRecord { line, reason }) => {
                assert_eq!(line, 1);
                assert!(reason.contains("heading_deg"), "{reason}");
            }
            other => panic!("expected MalformedRecord, got {other:?}"),
        }
    }

    #[test]
    fn schema_violations() {
        let cases = [
            EXAMPLE.replace(r#""device_id""#, r#""extra":1,"device_id""#),
            EXAMPLE.replace("-61", "-61.5"),
            EXAMPLE.replace(r#""band":"5""#, r#""band":"6""#),
            EXAMPLE.replace("aa:bb:cc:dd:ee:ff", "aa:bb:cc:dd:ee"),
            EXAMPLE.replace(r#""heading_deg":0"#, r#""heading_deg":45"#),
        ];
        for case in cases {
            let input = format!("{EXAMPLE}\n{case}\n");
            assert!(
                matches!(read_jsonl(input.as_bytes()), Err(JsonlError::MalformedRecord { line: 2, .. })),
                "{case}"
            );
        }
    }

    #[test]
    fn duplicate_reading_rejected() {
        let dup = EXAMPLE.replace(
            r#"}]}"#,
            r#"},{"bssid":"AA:BB:CC:DD:EE:FF","band":"5","rssi":-70}]}"#,
        );
        assert!(matches!(
            read_jsonl(dup.as_bytes()),
            Err(JsonlError::MalformedRecord { line: 1, .. })
        ));
    }
}
