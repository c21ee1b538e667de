//! Tab-separated loss log: one header line, then one line per logged iteration.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use super::objective::LossRecord;
use crate::error::{io_err, Result};

pub struct LossLog {
    out: BufWriter<File>,
    path: std::path::PathBuf,
    start: Instant,
    num_domains: usize,
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"))
}

pub fn header(num_domains: usize) -> String {
    let mut cols = vec!["iteration".to_string(), "total".into(), "d_loss".into()];
    for i in 0..num_domains {
        for k in ["adv", "x_cyc", "s_cyc", "rec"] {
            cols.push(format!("{k}_{i}"));
        }
    }
    cols.extend(["c_cyc".to_string(), "seg".into()]);
    for i in 0..num_domains {
        cols.push(format!("cross_ab_{i}"));
        cols.push(format!("cross_ba_{i}"));
    }
    cols.push("wall_seconds".into());
    cols.join("\t")
}

pub fn format_record(r: &LossRecord, wall: f64) -> String {
    let mut cols = vec![r.iteration.to_string(), fmt(Some(r.total)), fmt(r.d_loss)];
    for d in &r.domains {
        cols.extend([fmt(Some(d.adv)), fmt(d.x_cyc), fmt(Some(d.s_cyc)), fmt(Some(d.rec))]);
    }
    cols.extend([fmt(Some(r.c_cyc)), fmt(r.seg)]);
    for i in 0..r.domains.len() {
        let pair = r.cross.as_ref().map(|c| c[i]).unwrap_or([None, None]);
        cols.extend([fmt(pair[0]), fmt(pair[1])]);
    }
    cols.push(format!("{wall:.3}"));
    cols.join("\t")
}

impl LossLog {
    pub fn create(path: &Path, num_domains: usize) -> Result<Self> {
        let file = File::create(path).map_err(io_err(path))?;
        let mut out = BufWriter::new(file);
        writeln!(out, "{}", header(num_domains)).map_err(io_err(path))?;
        Ok(Self { out, path: path.to_path_buf(), start: Instant::now(), num_domains })
    }

    pub fn append(&mut self, r: &LossRecord) -> Result<()> {
        debug_assert_eq!(r.domains.len(), self.num_domains);
        let line = format_record(r, self.start.elapsed().as_secs_f64());
        writeln!(self.out, "{line}").map_err(io_err(&self.path))?;
        self.out.flush().map_err(io_err(&self.path))
    }
}
