use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::topology::Topology;
use crate::error::{Error, Result};
use crate::rng::seeded;

/// One image submitted for classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub request_id: String,
    pub device_id: String,
    #[serde(rename = "creation_time_s")]
    pub creation_time: f64,
    pub payload_bytes: u64,
}

pub const WORKLOAD_HEADER: [&str; 4] = [
    "request_id",
    "device_id",
    "creation_time_s",
    "payload_bytes",
];

/// Reads `request_id,device_id,creation_time_s,payload_bytes`; `name` is
/// used in error locations (`name:line`).
pub fn read_workload<R: Read>(r: R, name: &str) -> Result<Vec<Request>> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr
        .headers()
        .map_err(|e| Error::config(format!("{name}:1"), e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != WORKLOAD_HEADER {
        return Err(Error::config(
            format!("{name}:1"),
            format!("expected header `{}`", WORKLOAD_HEADER.join(",")),
        ));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<Request>().enumerate() {
        let location = format!("{name}:{}", i + 2);
        let req = row.map_err(|e| Error::config(&location, e.to_string()))?;
        if req.payload_bytes == 0 {
            return Err(Error::config(location, "payload_bytes must be positive"));
        }
        if !req.creation_time.is_finite() || req.creation_time < 0.0 {
            return Err(Error::config(
                location,
                "creation_time_s must be finite and non-negative",
            ));
        }
        out.push(req);
    }
    Ok(out)
}

pub fn write_workload<W: Write>(w: W, requests: &[Request]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    for r in requests {
        wtr.serialize(r)
            .map_err(|e| Error::domain(format!("workload write failed: {e}")))?;
    }
    wtr.flush()
        .map_err(|e| Error::domain(format!("workload write failed: {e}")))
}

/// Poisson arrivals spread uniformly over the topology's devices.
pub fn generate_workload(
    topology: &Topology,
    count: usize,
    mean_interarrival_s: f64,
    payload_bytes: (u64, u64),
    seed: u64,
) -> Result<Vec<Request>> {
    let devices = topology.devices();
    if devices.is_empty() {
        return Err(Error::domain("topology has no devices"));
    }
    if payload_bytes.0 == 0 || payload_bytes.0 > payload_bytes.1 {
        return Err(Error::domain("payload range must be positive and ordered"));
    }
    let mut rng = seeded(seed);
    let mut t = 0.0;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let u: f64 = rng.random_range(f64::EPSILON..1.0);
        t += -u.ln() * mean_interarrival_s;
        let device = devices[rng.random_range(0..devices.len())];
        out.push(Request {
            request_id: format!("r{i:05}"),
            device_id: topology.nodes[device].id.clone(),
            creation_time: t,
            payload_bytes: rng.random_range(payload_bytes.0..=payload_bytes.1),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_locate_errors() {
        let ok = "request_id,device_id,creation_time_s,payload_bytes\nr1,d1,0.5,1000\n";
        let reqs = read_workload(ok.as_bytes(), "w.csv").unwrap();
        assert_eq!(reqs[0].payload_bytes, 1000);
        assert_eq!(reqs[0].creation_time, 0.5);

        let bad = "request_id,device_id,creation_time_s,payload_bytes\nr1,d1,0.5,1000\nr2,d1,x,5\n";
        match read_workload(bad.as_bytes(), "w.csv") {
            Err(Error::Config { location, .. }) => assert_eq!(location, "w.csv:3"),
            other => panic!("{other:?}"),
        }
        let zero = "request_id,device_id,creation_time_s,payload_bytes\nr1,d1,0.5,0\n";
        assert!(read_workload(zero.as_bytes(), "w.csv").is_err());
    }

    #[test]
    fn round_trip() {
        let reqs = vec![Request {
            request_id: "a".into(),
            device_id: "d".into(),
            creation_time: 0.125,
            payload_bytes: 7,
        }];
        let mut buf = Vec::new();
        write_workload(&mut buf, &reqs).unwrap();
        assert_eq!(read_workload(&buf[..], "x").unwrap(), reqs);
    }
}
