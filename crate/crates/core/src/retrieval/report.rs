//! CSV export of rankings and evaluation reports.

use std::io::{Read, Write};

use super::index::SearchHit;
use super::metrics::EvalReport;
use crate::error::{Error, Result};

/// `query,rank,id,distance` rows.
pub fn write_rankings<W: Write>(rankings: &[Vec<SearchHit>], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["query", "rank", "id", "distance"])?;
    for (q, hits) in rankings.iter().enumerate() {
        for (rank, hit) in hits.iter().enumerate() {
            out.write_record(&[q.to_string(), rank.to_string(), hit.id.to_string(), hit.distance.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// `metric,value` rows for the scalar fields of a report.
pub fn write_report<W: Write>(report: &EvalReport, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["metric", "value"])?;
    out.write_record(["map", &report.map.to_string()])?;
    out.write_record(["num_queries", &report.num_queries.to_string()])?;
    out.write_record(["retrieval_cutoff", &report.retrieval_cutoff.to_string()])?;
    out.flush()?;
    Ok(())
}

/// `k,precision` rows.
pub fn write_precision_curve<W: Write>(report: &EvalReport, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["k", "precision"])?;
    for (k, p) in &report.precision_at_k {
        out.write_record(&[k.to_string(), p.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

fn parse<T: std::str::FromStr>(field: &str, what: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::Format(format!("cannot parse {what} from {field:?}")))
}

/// Reads back the output of [`write_report`] and [`write_precision_curve`].
pub fn read_report<R: Read, P: Read>(report: R, curve: P) -> Result<EvalReport> {
    let mut map = None;
    let mut num_queries = None;
    let mut cutoff = None;
    for row in csv::Reader::from_reader(report).records() {
        let row = row?;
        let value = row.get(1).unwrap_or_default();
        match row.get(0) {
            Some("map") => map = Some(parse(value, "map")?),
            Some("num_queries") => num_queries = Some(parse(value, "num_queries")?),
            Some("retrieval_cutoff") => cutoff = Some(parse(value, "retrieval_cutoff")?),
            _ => {}
        }
    }
    let mut precision_at_k = Vec::new();
    for row in csv::Reader::from_reader(curve).records() {
        let row = row?;
        precision_at_k.push((
            parse(row.get(0).unwrap_or_default(), "k")?,
            parse(row.get(1).unwrap_or_default(), "precision")?,
        ));
    }
    Ok(EvalReport {
        map: map.ok_or_else(|| Error::Format("report lacks map".into()))?,
        precision_at_k,
        num_queries: num_queries.ok_or_else(|| Error::Format("report lacks num_queries".into()))?,
        retrieval_cutoff: cutoff.ok_or_else(|| Error::Format("report lacks retrieval_cutoff".into()))?,
    })
}
