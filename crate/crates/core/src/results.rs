//! Results CSV: one row per [`MetricRecord`].
//!
//! Columns, in order: `method,train_seed,unlearn_seed,target_kind,target_id,
//! retain_train_acc,forget_train_acc,retain_test_acc,forget_test_acc,wall_ms,
//! hyper_digest,protocol`. Readers locate columns by name; `protocol` is
//! optional on input, and rows without it are read as [`Protocol::Custom`].

use std::io::{Read, Write};

use crate::datagen::{ForgetTarget, TargetKind};
use crate::error::{Error, Result};
use crate::seedkit::Seed;
use crate::sweep::{MetricRecord, Protocol};
use crate::unlearners::MethodKind;

pub const RESULTS_HEADER: [&str; 12] = [
    "method",
    "train_seed",
    "unlearn_seed",
    "target_kind",
    "target_id",
    "retain_train_acc",
    "forget_train_acc",
    "retain_test_acc",
    "forget_test_acc",
    "wall_ms",
    "hyper_digest",
    "protocol",
];

/// Index of `wall_ms`, the one column outside the determinism contract.
pub const WALL_MS_COLUMN: usize = 9;

pub struct ResultsWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> ResultsWriter<W> {
    pub fn new(out: W) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(out);
        inner.write_record(RESULTS_HEADER)?;
        Ok(ResultsWriter { inner })
    }

    pub fn write(&mut self, r: &MetricRecord) -> Result<()> {
        self.inner.write_record([
            r.method.as_str().to_owned(),
            r.train_seed.to_string(),
            r.unlearn_seed.to_string(),
            r.target.kind.as_str().to_owned(),
            r.target.id.to_string(),
            r.retain_train_acc.to_string(),
            r.forget_train_acc.to_string(),
            r.retain_test_acc.to_string(),
            r.forget_test_acc.to_string(),
            format!("{:.3}", r.wall_ms),
            r.hyper_digest.clone(),
            r.protocol.as_str().to_owned(),
        ])?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush().map_err(|e| Error::io("<results>", e))?;
        self.inner
            .into_inner()
            .map_err(|e| Error::Results(format!("flushing results: {e}")))
    }
}

pub fn write_results<W: Write>(records: &[MetricRecord], out: W) -> Result<W> {
    let mut w = ResultsWriter::new(out)?;
    for r in records {
        w.write(r)?;
    }
    w.finish()
}

pub fn read_results<R: Read>(input: R) -> Result<Vec<MetricRecord>> {
    let mut reader = csv::Reader::from_reader(input);
    let header = reader.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let required = &RESULTS_HEADER[..RESULTS_HEADER.len() - 1];
    let missing: Vec<&str> = required.iter().copied().filter(|n| col(n).is_none()).collect();
    if !missing.is_empty() {
        return Err(Error::Results(format!("missing column(s): {}", missing.join(", "))));
    }
    let idx: Vec<usize> = required.iter().map(|n| col(n).expect("checked")).collect();
    let protocol_col = col("protocol");

    let mut out = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = row + 2;
        let field = |k: usize| rec.get(idx[k]).unwrap_or("");
        let bad = |what: &str, v: &str| Error::Results(format!("line {line}: invalid {what} `{v}`"));
        let num = |k: usize, what: &str| -> Result<f64> {
            let v = field(k);
            v.parse::<f64>().map_err(|_| bad(what, v))
        };
        let acc = |k: usize, what: &str| -> Result<f64> {
            let v = num(k, what)?;
            if (0.0..=1.0).contains(&v) {
                Ok(v)
            } else {
                Err(bad(what, field(k)))
            }
        };
        let seed = |k: usize, what: &str| -> Result<Seed> {
            field(k).parse::<u64>().map(Seed).map_err(|_| bad(what, field(k)))
        };
        let method: MethodKind = field(0).parse().map_err(|_| bad("method", field(0)))?;
        let kind = TargetKind::parse(field(3)).ok_or_else(|| bad("target_kind", field(3)))?;
        let id = field(4).parse::<usize>().map_err(|_| bad("target_id", field(4)))?;
        let protocol = match protocol_col.and_then(|c| rec.get(c)) {
            None | Some("") => Protocol::Custom,
            Some(p) => Protocol::parse(p).ok_or_else(|| bad("protocol", p))?,
        };
        out.push(MetricRecord {
            method,
            hyper_digest: field(10).to_owned(),
            protocol,
            target: ForgetTarget { kind, id },
            train_seed: seed(1, "train_seed")?,
            unlearn_seed: seed(2, "unlearn_seed")?,
            retain_train_acc: acc(5, "retain_train_acc")?,
            forget_train_acc: acc(6, "forget_train_acc")?,
            retain_test_acc: acc(7, "retain_test_acc")?,
            forget_test_acc: acc(8, "forget_test_acc")?,
            wall_ms: num(9, "wall_ms")?,
        });
    }
    Ok(out)
}
