//! Log files (ndjson and csv) and plot-ready data files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adp::ExcitationReport;
use crate::hybrid::{JumpRecord, LogHeader, Sample, TrajectoryLog};

#[derive(Debug, Error)]
pub enum ExportError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed log at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogFormat {
    Ndjson,
    Csv,
}

impl LogFormat {
    /// Picks the format from a file extension; ndjson unless it is `.csv`.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => LogFormat::Csv,
            _ => LogFormat::Ndjson,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Record {
    Header(Box<LogHeader>),
    Sample(Sample),
    Jump(JumpRecord),
    Excitation(ExcitationRecord),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ExcitationRecord {
    pre: Option<ExcitationReport>,
    full: Option<ExcitationReport>,
}

pub fn export_log(log: &TrajectoryLog, path: &Path, format: LogFormat) -> Result<(), ExportError> {
    let mut out = BufWriter::new(File::create(path)?);
    match format {
        LogFormat::Ndjson => write_ndjson(log, &mut out)?,
        LogFormat::Csv => write_csv(log, &mut out)?,
    }
    out.flush()?;
    Ok(())
}

pub fn read_log(path: &Path) -> Result<TrajectoryLog, ExportError> {
    let reader = BufReader::new(File::open(path)?);
    match LogFormat::from_path(path) {
        LogFormat::Ndjson => read_ndjson(reader),
        LogFormat::Csv => read_csv(reader),
    }
}

pub fn write_ndjson(log: &TrajectoryLog, out: &mut impl Write) -> Result<(), ExportError> {
    let mut line = |r: &Record| -> Result<(), ExportError> {
        serde_json::to_writer(&mut *out, r).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
        Ok(())
    };
    line(&Record::Header(Box::new(log.header.clone())))?;
    // jumps are interleaved at their position in hybrid time
    let mut jumps = log.jumps.iter().peekable();
    for s in &log.samples {
        while let Some(j) = jumps.next_if(|j| j.j <= s.j) {
            line(&Record::Jump(j.clone()))?;
        }
        line(&Record::Sample(s.clone()))?;
    }
    for j in jumps {
        line(&Record::Jump(j.clone()))?;
    }
    line(&Record::Excitation(ExcitationRecord { pre: log.excitation, full: log.excitation_full }))
}

pub fn read_ndjson(reader: impl BufRead) -> Result<TrajectoryLog, ExportError> {
    let mut header = None;
    let mut samples = Vec::new();
    let mut jumps = Vec::new();
    let mut excitation = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record =
            serde_json::from_str(&line).map_err(|e| ExportError::Malformed { line: i + 1, reason: e.to_string() })?;
        match rec {
            Record::Header(h) => header = Some(h),
            Record::Sample(s) => samples.push(s),
            Record::Jump(j) => jumps.push(j),
            Record::Excitation(e) => excitation = Some(e),
        }
    }
    let header = header.ok_or(ExportError::Malformed { line: 1, reason: "missing header record".into() })?;
    let (pre, full) = excitation.map_or((None, None), |e| (e.pre, e.full));
    Ok(TrajectoryLog { header: *header, samples, jumps, excitation: pre, excitation_full: full })
}

struct Dims {
    n: usize,
    m: usize,
    l: usize,
    p: usize,
}

impl Dims {
    fn of(log: &TrajectoryLog) -> Self {
        let first = log.samples.first();
        Dims {
            n: first.map_or(0, |s| s.x.len()),
            m: first.map_or(0, |s| s.u.len()),
            l: first.map_or(0, |s| s.wc.len()),
            p: log.header.theta_true.len(),
        }
    }

    fn columns(&self) -> Vec<String> {
        let mut c: Vec<String> = vec!["kind".into(), "t".into(), "j".into(), "s".into(), "target".into()];
        let vec_cols = |c: &mut Vec<String>, prefix: &str, k: usize| c.extend((1..=k).map(|i| format!("{prefix}{i}")));
        vec_cols(&mut c, "x", self.n);
        vec_cols(&mut c, "u", self.m);
        vec_cols(&mut c, "mu", self.m);
        c.extend(["delta", "vhat", "e_norm", "theta_err"].map(String::from));
        vec_cols(&mut c, "theta_hat", self.p);
        vec_cols(&mut c, "wc", self.l);
        vec_cols(&mut c, "wa", self.l);
        c.extend(
            [
                "w_gap",
                "gamma_min",
                "gamma_max",
                "gamma_theta_min",
                "gamma_theta_max",
                "stack_excitation",
                "clearance",
                "accepted",
                "from",
                "to",
                "consumed",
                "next",
                "vd_before",
                "vd_after",
                "vhat_before",
                "vhat_after",
            ]
            .map(String::from),
        );
        c
    }
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_csv(log: &TrajectoryLog, out: &mut impl Write) -> Result<(), ExportError> {
    writeln!(out, "# header {}", serde_json::to_string(&log.header).map_err(std::io::Error::from)?)?;
    let exc = ExcitationRecord { pre: log.excitation, full: log.excitation_full };
    writeln!(out, "# excitation {}", serde_json::to_string(&exc).map_err(std::io::Error::from)?)?;
    let dims = Dims::of(log);
    let cols = dims.columns();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&cols).map_err(csv_io)?;
    let blank_tail = 8;
    for s in &log.samples {
        let mut row = vec![
            "sample".to_string(),
            num(s.t),
            s.j.to_string(),
            s.s.to_string(),
            s.target.clone().unwrap_or_default(),
        ];
        row.extend(s.x.iter().chain(&s.u).chain(&s.mu).map(|&v| num(v)));
        row.extend([s.delta, s.vhat, s.e_norm, s.theta_err].map(num));
        row.extend(s.theta_hat.iter().chain(&s.wc).chain(&s.wa).map(|&v| num(v)));
        row.extend(
            [s.w_gap, s.gamma_min, s.gamma_max, s.gamma_theta_min, s.gamma_theta_max, s.stack_excitation].map(num),
        );
        row.push(s.clearance.map(num).unwrap_or_default());
        row.push(s.accepted.to_string());
        row.extend(std::iter::repeat_n(String::new(), blank_tail));
        w.write_record(&row).map_err(csv_io)?;
    }
    for jr in &log.jumps {
        let mut row = vec!["jump".to_string(), num(jr.t), jr.j.to_string(), String::new(), String::new()];
        row.resize(cols.len() - blank_tail, String::new());
        row.extend([
            jr.from.to_string(),
            jr.to.to_string(),
            jr.consumed.clone(),
            jr.next.clone().unwrap_or_default(),
            jr.vd_before.to_string(),
            jr.vd_after.to_string(),
            num(jr.vhat_before),
            num(jr.vhat_after),
        ]);
        w.write_record(&row).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e)
}

pub fn read_csv(mut reader: impl BufRead) -> Result<TrajectoryLog, ExportError> {
    let bad = |line: usize, reason: &str| ExportError::Malformed { line, reason: reason.to_string() };
    let mut meta = |prefix: &str, line: usize| -> Result<String, ExportError> {
        let mut buf = String::new();
        reader.read_line(&mut buf)?;
        buf.trim_end().strip_prefix(prefix).map(str::to_string).ok_or_else(|| bad(line, "missing metadata comment"))
    };
    let header: LogHeader = serde_json::from_str(&meta("# header ", 1)?).map_err(|e| bad(1, &e.to_string()))?;
    let exc: ExcitationRecord = serde_json::from_str(&meta("# excitation ", 2)?).map_err(|e| bad(2, &e.to_string()))?;
    let mut rdr = csv::Reader::from_reader(reader);
    let cols: Vec<String> = rdr.headers().map_err(|e| bad(3, &e.to_string()))?.iter().map(String::from).collect();
    let count = |prefix: &str| {
        cols.iter()
            .filter(|c| {
                c.strip_prefix(prefix).is_some_and(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
            })
            .count()
    };
    let (n, m, l, p) = (count("x"), count("u"), count("wc"), count("theta_hat"));
    let mut samples = Vec::new();
    let mut jumps = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 4;
        let rec = rec.map_err(|e| bad(line, &e.to_string()))?;
        let mut it = rec.iter();
        let mut next = || it.next().ok_or_else(|| bad(line, "short row"));
        let f = |s: &str| s.parse::<f64>().map_err(|_| bad(line, "bad number"));
        let u = |s: &str| s.parse::<usize>().map_err(|_| bad(line, "bad integer"));
        let kind = next()?.to_string();
        let t = f(next()?)?;
        let j = u(next()?)?;
        let s_field = next()?.to_string();
        let target = next()?.to_string();
        let mut take =
            |k: usize| -> Result<Vec<String>, ExportError> { (0..k).map(|_| next().map(str::to_string)).collect() };
        let floats = |v: Vec<String>| v.iter().map(|s| f(s)).collect::<Result<Vec<f64>, _>>();
        if kind == "sample" {
            let x = floats(take(n)?)?;
            let uu = floats(take(m)?)?;
            let mu = floats(take(m)?)?;
            let scal = floats(take(4)?)?;
            let theta_hat = floats(take(p)?)?;
            let wc = floats(take(l)?)?;
            let wa = floats(take(l)?)?;
            let more = floats(take(6)?)?;
            let rest = take(2)?;
            samples.push(Sample {
                t,
                j,
                x,
                s: u(&s_field)?,
                target: (!target.is_empty()).then_some(target),
                u: uu,
                mu,
                delta: scal[0],
                vhat: scal[1],
                e_norm: scal[2],
                theta_err: scal[3],
                theta_hat,
                wc,
                wa,
                w_gap: more[0],
                gamma_min: more[1],
                gamma_max: more[2],
                gamma_theta_min: more[3],
                gamma_theta_max: more[4],
                stack_excitation: more[5],
                clearance: if rest[0].is_empty() { None } else { Some(f(&rest[0])?) },
                accepted: rest[1] == "true",
            });
        } else if kind == "jump" {
            let tail: Vec<&str> = rec.iter().skip(cols.len() - 8).collect();
            if tail.len() != 8 {
                return Err(bad(line, "short jump row"));
            }
            jumps.push(JumpRecord {
                t,
                j,
                from: u(tail[0])?,
                to: u(tail[1])?,
                consumed: tail[2].to_string(),
                next: (!tail[3].is_empty()).then(|| tail[3].to_string()),
                vd_before: tail[4].parse().map_err(|_| bad(line, "bad integer"))?,
                vd_after: tail[5].parse().map_err(|_| bad(line, "bad integer"))?,
                vhat_before: f(tail[6])?,
                vhat_after: f(tail[7])?,
            });
        } else {
            return Err(bad(line, "unknown row kind"));
        }
    }
    Ok(TrajectoryLog { header, samples, jumps, excitation: exc.pre, excitation_full: exc.full })
}

/// Writes the four plot data files into `outdir` and returns their paths:
/// phase portrait with region outlines, automaton state, identification
/// error, and critic/actor weights, each against time.
pub fn emit_plots(log: &TrajectoryLog, outdir: &Path) -> Result<Vec<PathBuf>, ExportError> {
    std::fs::create_dir_all(outdir)?;
    let files = ["phase_portrait.csv", "fsa_state.csv", "theta_error.csv", "weights.csv"].map(|f| outdir.join(f));

    let mut w = BufWriter::new(File::create(&files[0])?);
    writeln!(w, "kind,name,x1,x2")?;
    for s in &log.samples {
        let x2 = s.x.get(1).copied().unwrap_or(s.t);
        writeln!(w, "trajectory,,{},{}", num(s.x[0]), num(x2))?;
    }
    for roi in &log.header.scenario.roi {
        let (cx, cy) = (roi.center[0], roi.center.get(1).copied().unwrap_or(0.0));
        for k in 0..=64 {
            let a = std::f64::consts::TAU * k as f64 / 64.0;
            writeln!(w, "roi,{},{},{}", roi.name, num(cx + roi.radius * a.cos()), num(cy + roi.radius * a.sin()))?;
        }
    }
    w.flush()?;

    let mut w = BufWriter::new(File::create(&files[1])?);
    writeln!(w, "t,j,s")?;
    for s in &log.samples {
        writeln!(w, "{},{},{}", num(s.t), s.j, s.s)?;
    }
    w.flush()?;

    let mut w = BufWriter::new(File::create(&files[2])?);
    writeln!(w, "t,theta_err")?;
    for s in &log.samples {
        writeln!(w, "{},{}", num(s.t), num(s.theta_err))?;
    }
    w.flush()?;

    let mut w = BufWriter::new(File::create(&files[3])?);
    let l = log.samples.first().map_or(0, |s| s.wc.len());
    let names: Vec<String> = (1..=l).map(|i| format!("wc{i}")).chain((1..=l).map(|i| format!("wa{i}"))).collect();
    writeln!(w, "t,{}", names.join(","))?;
    for s in &log.samples {
        let vals: Vec<String> = s.wc.iter().chain(&s.wa).map(|&v| num(v)).collect();
        writeln!(w, "{},{}", num(s.t), vals.join(","))?;
    }
    w.flush()?;
    Ok(files.to_vec())
}
