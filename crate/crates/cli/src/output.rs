//! Results and per-step CSV files.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

pub const RESULTS_HEADER: &str = "method,mu,m_s,n_s,eps_csvd,eps_sdeim,n_mean,e_rel,online_s,offline_s,seed,status";
pub const STEPS_HEADER: &str = "step,t,e_ham_rel,window_index,basis_size";

/// Decimal text with 17 significant digits.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn opt_int<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Parameter vector as `;`-joined numbers.
pub fn mu_text(mu: &[f64]) -> String {
    mu.iter().map(|&v| num(v)).collect::<Vec<_>>().join(";")
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: String,
    /// Formatted parameter, or `mean` for averaged rows.
    pub mu: String,
    pub m_s: Option<usize>,
    pub n_s: Option<usize>,
    pub eps_csvd: Option<f64>,
    pub eps_sdeim: Option<f64>,
    pub n_mean: Option<f64>,
    pub e_rel: Option<f64>,
    pub online_s: Option<f64>,
    pub offline_s: Option<f64>,
    pub seed: Option<u64>,
    pub status: String,
}

impl ResultRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    pub fn csv_line(&self) -> String {
        [
            quote(&self.method),
            quote(&self.mu),
            opt_int(self.m_s),
            opt_int(self.n_s),
            opt_num(self.eps_csvd),
            opt_num(self.eps_sdeim),
            opt_num(self.n_mean),
            opt_num(self.e_rel),
            opt_num(self.online_s),
            opt_num(self.offline_s),
            opt_int(self.seed),
            quote(&self.status),
        ]
        .join(",")
    }
}

/// Mean of the successful rows of one `(method, m_s, n_s)` group.
pub fn mean_row(rows: &[&ResultRow]) -> Option<ResultRow> {
    let first = rows.first()?;
    let ok: Vec<&&ResultRow> = rows.iter().filter(|r| r.is_ok()).collect();
    let avg = |f: fn(&ResultRow) -> Option<f64>| -> Option<f64> {
        let vals: Option<Vec<f64>> = ok.iter().map(|r| f(r)).collect();
        vals.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
    };
    let status = if ok.len() == rows.len() {
        "ok".to_string()
    } else {
        format!("partial: {} of {} runs failed", rows.len() - ok.len(), rows.len())
    };
    Some(ResultRow {
        method: first.method.clone(),
        mu: "mean".into(),
        n_mean: avg(|r| r.n_mean),
        e_rel: avg(|r| r.e_rel),
        online_s: avg(|r| r.online_s),
        offline_s: avg(|r| r.offline_s),
        status,
        ..(*first).clone()
    })
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> io::Result<()> {
    let mut s = String::from(RESULTS_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    std::fs::write(path, s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRow {
    pub step: usize,
    pub t: f64,
    pub e_ham_rel: f64,
    pub window_index: usize,
    pub basis_size: usize,
}

pub fn write_steps(path: &Path, rows: &[StepRow]) -> io::Result<()> {
    let mut s = String::from(STEPS_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.step, num(r.t), num(r.e_ham_rel), r.window_index, r.basis_size);
    }
    std::fs::write(path, s)
}
