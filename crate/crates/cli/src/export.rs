//! CSV exports of traces.
//!
//! Both formats start with a `# scatter-<format> v1` line followed by the
//! column header.
//!
//! * `csv-positions`: `t,robot,x,y`, one row per robot per recorded step,
//!   where `t` is the instant the position belongs to (`1..=steps`; the
//!   initial configuration is in the trace header). Coordinates use 17
//!   significant digits.
//! * `csv-summary`: one row per trace with `source,digest,seed,n,protocol,
//!   scheduler,status,instants,stop_instant,occupied_points,
//!   multiplicity_points,all_distinct,gathered`.

use std::io::Write;

use scatter_core::engine::fmt_f64;
use scatter_core::Trace;

pub const POSITIONS_HEADER: &str = "# scatter-positions v1";
pub const SUMMARY_HEADER: &str = "# scatter-summary v1";

pub fn write_positions<W: Write>(trace: &Trace, out: W) -> csv::Result<()> {
    let mut out = out;
    writeln!(out, "{POSITIONS_HEADER}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "robot", "x", "y"])?;
    for r in &trace.records {
        let t = (r.t + 1).to_string();
        for (i, p) in r.positions.positions.iter().enumerate() {
            w.write_record([t.as_str(), &i.to_string(), &fmt_f64(p.x), &fmt_f64(p.y)])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary<'a, W: Write>(traces: impl IntoIterator<Item = (&'a str, &'a Trace)>, out: W) -> csv::Result<()> {
    let mut out = out;
    writeln!(out, "{SUMMARY_HEADER}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "source",
        "digest",
        "seed",
        "n",
        "protocol",
        "scheduler",
        "status",
        "instants",
        "stop_instant",
        "occupied_points",
        "multiplicity_points",
        "all_distinct",
        "gathered",
    ])?;
    for (source, t) in traces {
        let last = t.final_configuration();
        let (status, stop) = match t.stop_instant() {
            Some(at) => ("stopped", at.to_string()),
            None => ("budget_exhausted", String::new()),
        };
        w.write_record([
            source.to_string(),
            t.digest.clone(),
            t.seed.to_string(),
            t.n().to_string(),
            t.scenario.protocol.name().to_string(),
            t.scenario.scheduler.to_string(),
            status.to_string(),
            t.records.len().to_string(),
            stop,
            last.occupancy().len().to_string(),
            last.multiplicity_points().len().to_string(),
            last.all_distinct().to_string(),
            last.gathered().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use scatter_core::{engine, Point, ProtocolSpec, Scenario, SchedulerKind};

    fn trace(steps: u64) -> Trace {
        let s = Scenario::new(
            vec![Point::ORIGIN, Point::ORIGIN, Point::new(1.0, 1.0)],
            ProtocolSpec::Scatter,
            SchedulerKind::Bernoulli { p: 0.5 },
        )
        .with_seed(11)
        .with_max_steps(steps);
        engine::run(&s).unwrap()
    }

    fn data_rows(bytes: &[u8]) -> Vec<csv::StringRecord> {
        let text = std::str::from_utf8(bytes).unwrap();
        let body = text.split_once('\n').unwrap().1;
        csv::Reader::from_reader(body.as_bytes())
            .records()
            .map(|r| r.unwrap())
            .collect()
    }

    #[test]
    fn positions_row_count_and_values() {
        let t = trace(10);
        let mut buf = Vec::new();
        write_positions(&t, &mut buf).unwrap();
        assert!(buf.starts_with(POSITIONS_HEADER.as_bytes()));
        let rows = data_rows(&buf);
        assert_eq!(rows.len(), 30);
        for row in rows {
            let k: usize = row[0].parse().unwrap();
            let i: usize = row[1].parse().unwrap();
            let p = t.records[k - 1].positions.positions[i];
            assert_eq!(row[2].parse::<f64>().unwrap().to_bits(), p.x.to_bits());
            assert_eq!(row[3].parse::<f64>().unwrap().to_bits(), p.y.to_bits());
        }
    }

    #[test]
    fn empty_trace_has_header_only() {
        let mut t = trace(1);
        t.records.clear();
        let mut buf = Vec::new();
        write_positions(&t, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{POSITIONS_HEADER}\nt,robot,x,y\n"));
    }

    #[test]
    fn summary_one_row_per_trace() {
        let (a, b) = (trace(5), trace(7));
        let mut buf = Vec::new();
        write_summary([("a", &a), ("b", &b)], &mut buf).unwrap();
        let rows = data_rows(&buf);
        assert_eq!(rows.len(), 2);
        assert_eq!(&rows[1][7], "7");
    }
}
