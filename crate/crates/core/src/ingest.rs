//! CSV ingestion and emission for the two survey shapes.
//!
//! Schema A (baseline, one carcass per batch):
//! `batch_id,positive,log10_raw,unit`, with `unit` one of `per_carcass`,
//! `cfu_per_g` and `log10_raw` empty for negative batches.
//!
//! Schema B (positive batches, summaries):
//! `batch_id,n_sampled,n_positive,mean_log10_raw,sd_log10_raw,unit`, with
//! `unit` one of `per_ml_rinse400`, `cfu_per_g` and `sd_log10_raw` empty when
//! a single carcass is positive.
//!
//! Unit conversion is driven by the tag alone. The SD is a spread and is not
//! shifted.

use std::io::{Read, Write};
use std::path::Path;

use csv::{ReaderBuilder, StringRecord, WriterBuilder};

use crate::error::{Error, Result};
use crate::model::{
    transform_baseline, transform_rinse, BaselineSurvey, BatchSummary, PositiveBatchSummaries,
};

const HEADER_A: [&str; 4] = ["batch_id", "positive", "log10_raw", "unit"];
const HEADER_B: [&str; 6] = [
    "batch_id",
    "n_sampled",
    "n_positive",
    "mean_log10_raw",
    "sd_log10_raw",
    "unit",
];

struct Ctx<'a> {
    path: &'a str,
}

impl Ctx<'_> {
    fn err(&self, line: u64, message: impl Into<String>) -> Error {
        Error::Schema {
            path: self.path.to_string(),
            line,
            message: message.into(),
        }
    }

    fn check_header(&self, rdr_header: &StringRecord, expected: &[&str]) -> Result<()> {
        let got: Vec<&str> = rdr_header.iter().map(str::trim).collect();
        if got != expected {
            return Err(self.err(
                1,
                format!(
                    "expected header `{}`, got `{}`",
                    expected.join(","),
                    got.join(",")
                ),
            ));
        }
        Ok(())
    }

    fn float(&self, line: u64, field: &str, raw: &str) -> Result<f64> {
        let v: f64 = raw
            .trim()
            .parse()
            .map_err(|_| self.err(line, format!("{field}: cannot parse `{raw}` as a number")))?;
        if !v.is_finite() {
            return Err(self.err(line, format!("{field}: non-finite value `{raw}`")));
        }
        Ok(v)
    }

    fn count(&self, line: u64, field: &str, raw: &str) -> Result<u64> {
        raw.trim()
            .parse()
            .map_err(|_| self.err(line, format!("{field}: cannot parse `{raw}` as a count")))
    }
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input)
}

fn line_of(rec: &StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

/// Parse a schema A table. `source` names the input in error messages.
pub fn read_baseline<R: Read>(input: R, source: &str) -> Result<BaselineSurvey> {
    let ctx = Ctx { path: source };
    let mut rdr = reader(input);
    ctx.check_header(rdr.headers()?, &HEADER_A)?;
    let mut n_batches = 0u64;
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            ctx.err(line, e.to_string())
        })?;
        let line = line_of(&rec);
        n_batches += 1;
        let positive = match rec[1].trim() {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(ctx.err(line, format!("positive: expected 0 or 1, got `{other}`"))),
        };
        let raw = rec[2].trim();
        if !positive {
            if !raw.is_empty() {
                return Err(ctx.err(line, "log10_raw must be empty for a negative batch"));
            }
            continue;
        }
        if raw.is_empty() {
            return Err(ctx.err(line, "log10_raw is required for a positive batch"));
        }
        let v = ctx.float(line, "log10_raw", raw)?;
        let y = match rec[3].trim() {
            "per_carcass" => transform_baseline(v)?,
            "cfu_per_g" => v,
            other => {
                return Err(ctx.err(
                    line,
                    format!("unit: expected per_carcass or cfu_per_g, got `{other}`"),
                ))
            }
        };
        values.push(y);
    }
    BaselineSurvey::new(n_batches, values)
}

/// Parse a schema B table. `source` names the input in error messages.
pub fn read_summaries<R: Read>(input: R, source: &str) -> Result<PositiveBatchSummaries> {
    let ctx = Ctx { path: source };
    let mut rdr = reader(input);
    ctx.check_header(rdr.headers()?, &HEADER_B)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            ctx.err(line, e.to_string())
        })?;
        let line = line_of(&rec);
        let n_sampled = ctx.count(line, "n_sampled", &rec[1])?;
        let n_positive = ctx.count(line, "n_positive", &rec[2])?;
        let mean = ctx.float(line, "mean_log10_raw", &rec[3])?;
        let sd = match rec[4].trim() {
            "" => None,
            raw => Some(ctx.float(line, "sd_log10_raw", raw)?),
        };
        let mean_log = match rec[5].trim() {
            "per_ml_rinse400" => transform_rinse(mean)?,
            "cfu_per_g" => mean,
            other => {
                return Err(ctx.err(
                    line,
                    format!("unit: expected per_ml_rinse400 or cfu_per_g, got `{other}`"),
                ))
            }
        };
        let batch = BatchSummary {
            n_sampled,
            n_positive,
            mean_log,
            sd_log: sd,
        };
        batch.validate().map_err(|e| ctx.err(line, e.to_string()))?;
        out.push(batch);
    }
    PositiveBatchSummaries::new(out)
}

pub fn read_baseline_file(path: &Path) -> Result<BaselineSurvey> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_baseline(f, &path.display().to_string())
}

pub fn read_summaries_file(path: &Path) -> Result<PositiveBatchSummaries> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_summaries(f, &path.display().to_string())
}

/// Write schema A in `cfu_per_g` units. Positives come first.
pub fn write_baseline<W: Write>(out: W, data: &BaselineSurvey) -> Result<()> {
    let mut w = WriterBuilder::new().from_writer(out);
    w.write_record(HEADER_A)?;
    let mut id = 0u64;
    for y in data.log_concentrations() {
        id += 1;
        w.write_record([
            id.to_string(),
            "1".into(),
            y.to_string(),
            "cfu_per_g".into(),
        ])?;
    }
    for _ in data.n_positive()..data.n_batches() {
        id += 1;
        w.write_record([
            id.to_string(),
            "0".into(),
            String::new(),
            "cfu_per_g".into(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Write schema B in `cfu_per_g` units.
pub fn write_summaries<W: Write>(out: W, data: &PositiveBatchSummaries) -> Result<()> {
    let mut w = WriterBuilder::new().from_writer(out);
    w.write_record(HEADER_B)?;
    for (i, b) in data.batches().iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            b.n_sampled.to_string(),
            b.n_positive.to_string(),
            b.mean_log.to_string(),
            b.sd_log.map(|s| s.to_string()).unwrap_or_default(),
            "cfu_per_g".into(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
