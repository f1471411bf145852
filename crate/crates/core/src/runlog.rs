//! JSON-lines run logs: odometry, scans, ground truth, estimates and stalls,
//! one record per line with a timestamp first.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::LaserScan;
use crate::geometry::{TimedTransformBuffer, Transform2D};
use crate::metrics::EstimateSample;
use crate::multihyp::{Estimate, Stall};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Body {
    /// odom → base transform.
    Odom {
        x: f64,
        y: f64,
        yaw: f64,
    },
    Scan {
        angle_min: f64,
        angle_inc: f64,
        range_max: f64,
        ranges: Vec<f64>,
    },
    Gt {
        x: f64,
        y: f64,
        yaw: f64,
    },
    Estimate {
        x: f64,
        y: f64,
        yaw: f64,
        cov: [f64; 9],
        quality: f64,
        n_hyp: usize,
        hyp_id: u64,
    },
    Stall {
        gap: f64,
    },
}

const KNOWN_TYPES: [&str; 5] = ["odom", "scan", "gt", "estimate", "stall"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub t: f64,
    #[serde(flatten)]
    pub body: Body,
}

impl Record {
    pub fn odom(t: f64, pose: &Transform2D) -> Self {
        Self {
            t,
            body: Body::Odom {
                x: pose.x,
                y: pose.y,
                yaw: pose.yaw,
            },
        }
    }

    pub fn gt(t: f64, pose: &Transform2D) -> Self {
        Self {
            t,
            body: Body::Gt {
                x: pose.x,
                y: pose.y,
                yaw: pose.yaw,
            },
        }
    }

    pub fn scan(scan: &LaserScan) -> Self {
        Self {
            t: scan.stamp,
            body: Body::Scan {
                angle_min: scan.angle_min,
                angle_inc: scan.angle_increment,
                range_max: scan.range_max,
                ranges: scan.ranges.clone(),
            },
        }
    }

    pub fn estimate(e: &Estimate) -> Self {
        Self {
            t: e.t,
            body: Body::Estimate {
                x: e.pose.x,
                y: e.pose.y,
                yaw: e.pose.yaw,
                cov: e.covariance,
                quality: e.quality,
                n_hyp: e.n_hyp,
                hyp_id: e.hyp_id,
            },
        }
    }

    pub fn stall(s: &Stall) -> Self {
        Self {
            t: s.t,
            body: Body::Stall { gap: s.gap },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub records: Vec<Record>,
}

impl RunLog {
    /// Parses a log. Records of unknown type are skipped with a warning;
    /// decreasing timestamps are an error.
    pub fn parse<R: BufRead>(reader: R, path: &Path) -> Result<Self> {
        let mut records: Vec<Record> = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let at = |reason: String| Error::format(path, format!("line {}: {reason}", lineno + 1));
            let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| at(e.to_string()))?;
            let kind = value.get("type").and_then(|k| k.as_str()).unwrap_or("");
            if !KNOWN_TYPES.contains(&kind) {
                log::warn!(
                    "{}:{}: skipping record of unknown type {kind:?}",
                    path.display(),
                    lineno + 1
                );
                continue;
            }
            let record: Record = serde_json::from_value(value).map_err(|e| at(e.to_string()))?;
            if let Some(last) = records.last() {
                if record.t < last.t {
                    return Err(at(format!("timestamp {} precedes {}", record.t, last.t)));
                }
            }
            records.push(record);
        }
        Ok(Self { records })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse(BufReader::new(file), path)
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file)).map_err(|e| Error::io(path, e))
    }

    /// Stable merge by timestamp; on equal times records of `self` come first.
    pub fn merge(mut self, other: RunLog) -> RunLog {
        self.records.extend(other.records);
        self.records.sort_by(|a, b| a.t.total_cmp(&b.t));
        self
    }

    pub fn odometry(&self) -> Result<TimedTransformBuffer> {
        let mut buffer = TimedTransformBuffer::new(f64::INFINITY);
        for r in &self.records {
            if let Body::Odom { x, y, yaw } = r.body {
                buffer.insert(r.t, Transform2D::new(x, y, yaw))?;
            }
        }
        Ok(buffer)
    }

    pub fn scans(&self) -> Vec<LaserScan> {
        self.records
            .iter()
            .filter_map(|r| match &r.body {
                Body::Scan {
                    angle_min,
                    angle_inc,
                    range_max,
                    ranges,
                } => Some(LaserScan {
                    stamp: r.t,
                    angle_min: *angle_min,
                    angle_increment: *angle_inc,
                    range_max: *range_max,
                    ranges: ranges.clone(),
                }),
                _ => None,
            })
            .collect()
    }

    pub fn ground_truth(&self) -> Result<TimedTransformBuffer> {
        let mut buffer = TimedTransformBuffer::new(f64::INFINITY);
        for r in &self.records {
            if let Body::Gt { x, y, yaw } = r.body {
                buffer.insert(r.t, Transform2D::new(x, y, yaw))?;
            }
        }
        Ok(buffer)
    }

    pub fn estimates(&self) -> Vec<EstimateSample> {
        self.records
            .iter()
            .filter_map(|r| match r.body {
                Body::Estimate {
                    x,
                    y,
                    yaw,
                    cov,
                    quality,
                    n_hyp,
                    ..
                } => Some(EstimateSample {
                    t: r.t,
                    pose: Transform2D::new(x, y, yaw),
                    covariance: cov,
                    quality,
                    n_hyp,
                }),
                _ => None,
            })
            .collect()
    }

    pub fn count(&self, kind: &str) -> usize {
        self.records
            .iter()
            .filter(|r| {
                matches!(
                    (&r.body, kind),
                    (Body::Odom { .. }, "odom")
                        | (Body::Scan { .. }, "scan")
                        | (Body::Gt { .. }, "gt")
                        | (Body::Estimate { .. }, "estimate")
                        | (Body::Stall { .. }, "stall")
                )
            })
            .count()
    }
}
