//! Report serialization: a fixed-width text file, a key-value sidecar and merged tables.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::protocol::{DiceSummary, DomainMetrics, MetricsReport, Protocol};
use crate::error::{input, io_err, RemicError, Result};

pub const TEXT_FILE: &str = "report.txt";
pub const KV_FILE: &str = "report.kv";

fn cell(d: &Option<DomainMetrics>, f: impl Fn(&DomainMetrics) -> String) -> String {
    d.as_ref().map_or_else(|| "-".to_string(), f)
}

/// Rows padded to the widest entry of each column, separated by two spaces.
fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> =
        (0..cols).map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r.iter().enumerate().map(|(c, s)| format!("{s:<w$}", w = widths[c])).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

impl MetricsReport {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "method    {}\nprotocol  {}\nsamples   {}\n",
            self.method, self.protocol, self.num_samples
        );
        if !self.config.is_empty() {
            out.push_str(&format!("config    {}\n", self.config));
        }
        out.push('\n');
        let mut rows = vec![["domain", "count", "MAE", "NRMSE", "PSNR", "SSIM"].map(String::from).to_vec()];
        for (i, d) in self.domains.iter().enumerate() {
            rows.push(vec![
                i.to_string(),
                cell(d, |m| m.count.to_string()),
                cell(d, |m| format!("{:.4}", m.mae)),
                cell(d, |m| format!("{:.4}", m.nrmse)),
                cell(d, |m| format!("{:.4}", m.psnr)),
                cell(d, |m| format!("{:.4}", m.ssim)),
            ]);
        }
        out.push_str(&align(&rows));
        if let Some(dice) = &self.dice {
            out.push('\n');
            let mut rows = vec![vec!["dice".to_string(), "mean".to_string()]];
            rows[0].extend((0..dice.per_class.len()).map(|l| format!("class {l}")));
            let mut vals = vec![String::new(), format!("{:.4}", dice.mean)];
            vals.extend(dice.per_class.iter().map(|v| format!("{v:.4}")));
            rows.push(vals);
            out.push_str(&align(&rows));
        }
        out
    }

    pub fn to_kv(&self) -> String {
        let mut out = format!(
            "method={}\nprotocol={}\nnum_samples={}\nnum_domains={}\nconfig={}\n",
            self.method,
            self.protocol,
            self.num_samples,
            self.domains.len(),
            self.config
        );
        for (i, d) in self.domains.iter().enumerate() {
            if let Some(m) = d {
                out.push_str(&format!(
                    "domain.{i}.count={}\ndomain.{i}.mae={}\ndomain.{i}.nrmse={}\ndomain.{i}.psnr={}\ndomain.{i}.ssim={}\n",
                    m.count, m.mae, m.nrmse, m.psnr, m.ssim
                ));
            }
        }
        if let Some(d) = &self.dice {
            out.push_str(&format!("dice.count={}\ndice.mean={}\n", d.count, d.mean));
            for (l, v) in d.per_class.iter().enumerate() {
                out.push_str(&format!("dice.class.{l}={v}\n"));
            }
        }
        out
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let kv: BTreeMap<&str, &str> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.split_once('=').ok_or_else(|| input(format!("bad report line `{l}`"))))
            .collect::<Result<_>>()?;
        let get = |k: &str| kv.get(k).copied().ok_or_else(|| input(format!("report lacks `{k}`")));
        let f = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| input(format!("bad number for `{k}`"))) };
        let u = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| input(format!("bad count for `{k}`"))) };
        let n = u("num_domains")?;
        let domains = (0..n)
            .map(|i| {
                if !kv.contains_key(format!("domain.{i}.count").as_str()) {
                    return Ok(None);
                }
                let k = |m: &str| format!("domain.{i}.{m}");
                Ok(Some(DomainMetrics {
                    mae: f(&k("mae"))?,
                    nrmse: f(&k("nrmse"))?,
                    psnr: f(&k("psnr"))?,
                    ssim: f(&k("ssim"))?,
                    count: u(&k("count"))?,
                }))
            })
            .collect::<Result<Vec<_>>>()?;
        let dice = if kv.contains_key("dice.mean") {
            let mut per_class = Vec::new();
            while let Some(v) = kv.get(format!("dice.class.{}", per_class.len()).as_str()) {
                per_class.push(v.parse().map_err(|_| input("bad dice value"))?);
            }
            Some(DiceSummary { per_class, mean: f("dice.mean")?, count: u("dice.count")? })
        } else {
            None
        };
        Ok(Self {
            method: get("method")?.to_string(),
            protocol: get("protocol")?.parse::<Protocol>()?,
            config: get("config")?.to_string(),
            num_samples: u("num_samples")?,
            domains,
            dice,
        })
    }

    /// Writes `report.txt` and `report.kv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        for (name, body) in [(TEXT_FILE, self.to_text()), (KV_FILE, self.to_kv())] {
            let p = dir.join(name);
            fs::write(&p, body).map_err(io_err(&p))?;
        }
        Ok(())
    }

    pub fn read_kv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_kv(&text).map_err(|e| match e {
            RemicError::Input(m) => RemicError::Input(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

fn row_label(r: &MetricsReport) -> String {
    match r.protocol {
        Protocol::SingleMissing(_) => r.method.clone(),
        Protocol::RandomK { k, .. } => format!("{}-Random(k={k})", r.method),
    }
}

/// Merges reports into one method-by-domain table of `NRMSE / SSIM / PSNR` cells.
///
/// Single-missing reports of the same method share a row; random-k reports get their own.
/// A Dice table follows when any report carries Dice scores.
pub fn format_table(reports: &[MetricsReport]) -> Result<String> {
    let n = reports.first().ok_or_else(|| input("no reports to tabulate"))?.domains.len();
    let mut order: Vec<String> = Vec::new();
    let mut cells: BTreeMap<String, Vec<Option<String>>> = BTreeMap::new();
    for r in reports {
        if r.domains.len() != n {
            return Err(input(format!("report `{}` has {} domains, expected {n}", r.method, r.domains.len())));
        }
        let label = row_label(r);
        if !cells.contains_key(&label) {
            order.push(label.clone());
            cells.insert(label.clone(), vec![None; n]);
        }
        let row = cells.get_mut(&label).expect("row inserted");
        for (i, d) in r.domains.iter().enumerate() {
            if let Some(m) = d {
                if row[i].is_some() {
                    return Err(input(format!("two reports fill row `{label}`, domain {i}")));
                }
                row[i] = Some(format!("{:.4} / {:.4} / {:.4}", m.nrmse, m.ssim, m.psnr));
            }
        }
    }
    let mut rows = vec![{
        let mut h = vec!["Method".to_string()];
        h.extend((0..n).map(|i| format!("Domain {i}")));
        h
    }];
    let mut sub = vec![String::new()];
    sub.extend((0..n).map(|_| "NRMSE / SSIM / PSNR".to_string()));
    rows.push(sub);
    for label in &order {
        let mut row = vec![label.clone()];
        row.extend(cells[label].iter().map(|c| c.clone().unwrap_or_else(|| "-".into())));
        rows.push(row);
    }
    let mut out = align(&rows);

    let with_dice: Vec<&MetricsReport> = reports.iter().filter(|r| r.dice.is_some()).collect();
    if !with_dice.is_empty() {
        let classes = with_dice.iter().map(|r| r.dice.as_ref().unwrap().per_class.len()).max().unwrap_or(0);
        let mut rows = vec![vec!["Dice".to_string(), "Protocol".into(), "Mean".into()]];
        rows[0].extend((1..classes).map(|l| format!("Class {l}")));
        for r in with_dice {
            let d = r.dice.as_ref().unwrap();
            let mut row = vec![r.method.clone(), r.protocol.to_string(), format!("{:.4}", d.mean)];
            row.extend((1..classes).map(|l| d.per_class.get(l).map_or("-".into(), |v| format!("{v:.4}"))));
            rows.push(row);
        }
        out.push('\n');
        out.push_str(&align(&rows));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(method: &str, protocol: Protocol, vals: &[Option<f64>]) -> MetricsReport {
        MetricsReport {
            method: method.into(),
            protocol,
            config: "n=3".into(),
            num_samples: 4,
            domains: vals
                .iter()
                .map(|v| v.map(|v| DomainMetrics { mae: v / 10.0, nrmse: v, psnr: 20.0 + v, ssim: 1.0 - v, count: 4 }))
                .collect(),
            dice: None,
        }
    }

    #[test]
    fn kv_round_trip_is_exact() {
        let mut r = report("ReMIC", Protocol::RandomK { k: 1, seed: 3, exhaustive: false }, &[Some(0.1 + 0.2), None, Some(1.0 / 3.0)]);
        r.dice = Some(DiceSummary { per_class: vec![0.99, 0.7], mean: 0.7, count: 12 });
        assert_eq!(MetricsReport::from_kv(&r.to_kv()).unwrap(), r);
    }

    #[test]
    fn single_missing_reports_share_a_row() {
        let a = report("Zero", Protocol::SingleMissing(0), &[Some(1.0), None]);
        let b = report("Zero", Protocol::SingleMissing(1), &[None, Some(1.0)]);
        let t = format_table(&[a.clone(), b]).unwrap();
        assert_eq!(t.lines().count(), 3);
        assert!(t.lines().nth(2).unwrap().starts_with("Zero  "));
        assert!(format_table(&[a.clone(), a]).is_err());
    }
}
