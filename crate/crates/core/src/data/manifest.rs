use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Unassigned,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "unassigned" => Ok(Split::Unassigned),
            other => Err(Error::config("split", format!("unknown split {other:?}"))),
        }
    }
}

/// 0 = normal, 1 = COVID-19 positive.
pub const NORMAL: u8 = 0;
pub const COVID: u8 = 1;

pub fn class_name(label: u8) -> &'static str {
    if label == COVID {
        "COVID-19"
    } else {
        "NORMAL"
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SampleRecord {
    /// Relative to the manifest's image root, `/`-separated.
    pub path: String,
    pub label: u8,
    pub split: Split,
}

impl SampleRecord {
    pub fn new(path: impl Into<String>, label: u8) -> Self {
        Self {
            path: path.into(),
            label,
            split: Split::Unassigned,
        }
    }
}

/// Split percentages; validation and test sizes are floored, train takes
/// the remainder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitRatios {
    pub train: u32,
    pub val: u32,
    pub test: u32,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 80,
            val: 10,
            test: 10,
        }
    }
}

impl SplitRatios {
    /// `(train, val, test)` for a class of `n` samples.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let val = n * self.val as usize / 100;
        let test = n * self.test as usize / 100;
        (n - val - test, val, test)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub records: Vec<SampleRecord>,
}

pub const MIN_PER_CLASS: usize = 10;

/// Per-class deterministic shuffle, then `floor(val%)` to validation,
/// `floor(test%)` to test and the rest to training. The result depends only
/// on the set of records and the seed, not on input order.
pub fn stratified_split(
    records: Vec<SampleRecord>,
    ratios: SplitRatios,
    seed: u64,
) -> Result<DatasetManifest> {
    if ratios.train + ratios.val + ratios.test != 100 {
        return Err(Error::config("ratios", "split percentages must sum to 100"));
    }
    let mut by_class: BTreeMap<u8, Vec<SampleRecord>> = BTreeMap::new();
    for r in records {
        if r.label > 1 {
            return Err(Error::domain(format!(
                "{}: label {} is not 0 or 1",
                r.path, r.label
            )));
        }
        by_class.entry(r.label).or_default().push(r);
    }
    for label in [NORMAL, COVID] {
        let n = by_class.get(&label).map_or(0, Vec::len);
        if n < MIN_PER_CLASS {
            return Err(Error::domain(format!(
                "class {} has {n} samples; at least {MIN_PER_CLASS} are required",
                class_name(label)
            )));
        }
    }
    let mut out = Vec::new();
    for (label, mut class) in by_class {
        class.sort_by(|a, b| a.path.cmp(&b.path));
        let mut rng = seeded(derive_seed(seed, &format!("split/{label}")));
        class.shuffle(&mut rng);
        let (_, val, test) = ratios.sizes(class.len());
        for (i, mut r) in class.into_iter().enumerate() {
            r.split = if i < val {
                Split::Val
            } else if i < val + test {
                Split::Test
            } else {
                Split::Train
            };
            out.push(r);
        }
    }
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(DatasetManifest { records: out })
}

impl DatasetManifest {
    pub const CSV_HEADER: &'static str = "path,label,split";

    /// Counts per class label, per split.
    pub fn class_counts(&self) -> BTreeMap<u8, SplitCounts> {
        let mut out: BTreeMap<u8, SplitCounts> = BTreeMap::new();
        for r in &self.records {
            let c = out.entry(r.label).or_default();
            match r.split {
                Split::Train => c.train += 1,
                Split::Val => c.val += 1,
                Split::Test => c.test += 1,
                Split::Unassigned => {}
            }
        }
        out
    }

    pub fn split(&self, split: Split) -> Vec<&SampleRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    /// Split table, COVID-19 row first.
    pub fn split_table(&self) -> String {
        let counts = self.class_counts();
        let mut s = format!(
            "{:<10}{:>14}{:>16}{:>13}{:>8}\n",
            "Classes", "Training Set", "Validation Set", "Testing Set", "Total"
        );
        for label in [COVID, NORMAL] {
            let c = counts.get(&label).copied().unwrap_or_default();
            s.push_str(&format!(
                "{:<10}{:>14}{:>16}{:>13}{:>8}\n",
                class_name(label),
                c.train,
                c.val,
                c.test,
                c.total()
            ));
        }
        s
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        for r in &self.records {
            wtr.serialize(r)
                .map_err(|e| Error::domain(format!("manifest write failed: {e}")))?;
        }
        wtr.flush()
            .map_err(|e| Error::domain(format!("manifest write failed: {e}")))?;
        Ok(())
    }

    /// `name` is used for error locations (`name:line`).
    pub fn read_csv<R: Read>(r: R, name: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr
            .headers()
            .map_err(|e| Error::config(format!("{name}:1"), e.to_string()))?
            .clone();
        if headers.iter().collect::<Vec<_>>() != ["path", "label", "split"] {
            return Err(Error::config(
                format!("{name}:1"),
                format!("expected header `{}`", Self::CSV_HEADER),
            ));
        }
        let mut records = Vec::new();
        for (i, row) in rdr.deserialize::<SampleRecord>().enumerate() {
            let line = i + 2;
            let r = row.map_err(|e| Error::config(format!("{name}:{line}"), e.to_string()))?;
            if r.label > 1 {
                return Err(Error::config(
                    format!("{name}:{line}"),
                    format!("label {} is not 0 or 1", r.label),
                ));
            }
            records.push(r);
        }
        Ok(Self { records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file, &path.display().to_string())
    }
}
