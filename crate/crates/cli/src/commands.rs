//! The `offline`, `run`, `experiment` and `check` commands.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hamred_core::checks::{dictionary_consistency, CheckOutcome, Scale, Status, Suite, CHECK_NAMES};
use hamred_core::diagnostics::{hamiltonian_error_series, relative_reduction_error, HamiltonianReference};
use hamred_core::dictfile::{load_dictionary, save_dictionary};
use hamred_core::dictionary::{build_dictionary, Dictionary, OfflineOptions, SnapshotOptions};
use hamred_core::model::AffineHamiltonianModel;
use hamred_core::pipeline::{run_method, GlobalSpectra, Method, MethodParams, MethodRun};
use log::info;
use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::config::{ConfigError, ExperimentConfig};
use crate::output::{mean_row, mu_text, write_results, write_steps, ResultRow, StepRow};
use crate::svg::{Chart, Series};

#[derive(Debug)]
pub struct CliError(pub String);

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError(e.0)
    }
}

impl From<hamred_core::Error> for CliError {
    fn from(e: hamred_core::Error) -> Self {
        CliError(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError(format!("{}: {e}", path.display()))
}

fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| io_error(path, e))
}

#[derive(Debug, Clone)]
pub struct OfflineSummary {
    pub path: PathBuf,
    pub dim: usize,
    pub snapshots: usize,
    pub rows: usize,
    pub seconds: f64,
}

impl fmt::Display for OfflineSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "dictionary {}: 2N = {}, N_X = {}, DEIM rows = {}, built in {:.2} s",
            self.path.display(),
            self.dim,
            self.snapshots,
            self.rows,
            self.seconds
        )
    }
}

pub fn offline(config: &Path, dictionary: Option<&Path>, force: bool) -> CliResult<OfflineSummary> {
    let cfg = ExperimentConfig::load(config)?;
    let path = dictionary.map_or_else(|| cfg.dictionary_path(), Path::to_path_buf);
    if path.exists() && !force {
        return Err(CliError(format!(
            "dictionary {} already exists; pass --force to rebuild it",
            path.display()
        )));
    }
    let model = cfg.build_model()?;
    let options = OfflineOptions {
        snapshots: SnapshotOptions {
            include_initial_state: cfg.training.include_initial_state,
            newton: cfg.newton(),
        },
        row_count: cfg.training.row_count,
    };
    let clock = Instant::now();
    let dict = build_dictionary(&model, &cfg.training(), &options)?;
    let seconds = clock.elapsed().as_secs_f64();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    save_dictionary(&dict, &path)?;
    Ok(OfflineSummary {
        path,
        dim: dict.state.dim(),
        snapshots: dict.state.len(),
        rows: dict.nonlinear.as_ref().map_or(0, |n| n.row_count()),
        seconds,
    })
}

fn open_dictionary(path: &Path, config: &Path, model: &AffineHamiltonianModel) -> CliResult<Dictionary> {
    if !path.exists() {
        return Err(CliError(format!(
            "dictionary {} not found; build it first with `hamred offline --config {}`",
            path.display(),
            config.display()
        )));
    }
    let dict = load_dictionary(path).map_err(|e| CliError(format!("{}: {e}", path.display())))?;
    if dict.model != model.name || dict.state.dim() != model.dim() {
        return Err(CliError(format!(
            "dictionary {} was built for {} with 2N = {}, the config describes {} with 2N = {}; rebuild it with `hamred offline --force`",
            path.display(),
            dict.model,
            dict.state.dim(),
            model.name,
            model.dim()
        )));
    }
    Ok(dict)
}

/// One row of a sweep before it runs.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Job {
    method: Method,
    mu_index: usize,
    window: Option<usize>,
    count: Option<usize>,
}

impl Job {
    fn file_stem(&self) -> String {
        let mut s = format!("{}_mu{}", self.method, self.mu_index);
        match (self.window, self.count) {
            (Some(w), Some(n)) => s.push_str(&format!("_ms{w}_ns{n}")),
            (None, Some(n)) => s.push_str(&format!("_n{n}")),
            _ => {}
        }
        s
    }
}

struct Evaluated {
    row: ResultRow,
    steps: Vec<StepRow>,
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    model: &'a AffineHamiltonianModel,
    dict: Option<&'a Dictionary>,
    spectra: &'a GlobalSpectra,
    seed: Option<u64>,
}

impl Context<'_> {
    fn params(&self, job: &Job) -> MethodParams {
        let mut p = MethodParams::new(job.window.unwrap_or(1), job.count.unwrap_or(0));
        p.eps_csvd = self.cfg.methods.eps_csvd;
        p.eps_sdeim = self.cfg.methods.eps_sdeim;
        p.newton = self.cfg.newton();
        p
    }

    fn blank_row(&self, job: &Job, mu: &[f64]) -> ResultRow {
        let fom = job.method == Method::Fom;
        ResultRow {
            method: job.method.to_string(),
            mu: mu_text(mu),
            m_s: job.window,
            n_s: job.count,
            eps_csvd: (!fom).then_some(self.cfg.methods.eps_csvd),
            eps_sdeim: (!fom).then_some(self.cfg.methods.eps_sdeim),
            n_mean: None,
            e_rel: None,
            online_s: None,
            offline_s: None,
            seed: self.seed,
            status: String::new(),
        }
    }

    fn measure(&self, job: &Job, mu: &[f64], run: &MethodRun, reference: &DMatrix<f64>) -> CliResult<Evaluated> {
        let e_rel = relative_reduction_error(reference, &run.trajectory)?;
        let ham = hamiltonian_error_series(self.model, mu, HamiltonianReference::Trajectory(reference), &run.trajectory)?;
        let grid = self.model.time_grid(mu)?;
        let steps = ham
            .iter()
            .enumerate()
            .map(|(i, &e)| StepRow {
                step: i,
                t: grid.time(i),
                e_ham_rel: e,
                window_index: run.step_window[i],
                basis_size: run.basis_size_at(i),
            })
            .collect();
        let timings = self.cfg.output.record_timings;
        let row = ResultRow {
            n_mean: Some(run.mean_basis_size()),
            e_rel: Some(e_rel),
            online_s: timings.then_some(run.online.as_secs_f64()),
            offline_s: timings.then_some(run.offline.as_secs_f64()),
            status: "ok".into(),
            ..self.blank_row(job, mu)
        };
        Ok(Evaluated { row, steps })
    }

    fn evaluate(&self, job: &Job, mu: &[f64], fom: Result<&MethodRun, &str>) -> Evaluated {
        let outcome = fom.map_err(|e| CliError(format!("full-order reference failed: {e}"))).and_then(|fom| {
            if job.method == Method::Fom {
                self.measure(job, mu, fom, &fom.trajectory)
            } else {
                let run = run_method(self.model, self.dict, self.spectra, job.method, mu, &self.params(job))?;
                self.measure(job, mu, &run, &fom.trajectory)
            }
        });
        outcome.unwrap_or_else(|e| Evaluated {
            row: ResultRow {
                status: format!("error: {e}"),
                ..self.blank_row(job, mu)
            },
            steps: Vec::new(),
        })
    }
}

fn full_order(ctx: &Context<'_>, mu: &[f64]) -> Result<MethodRun, String> {
    run_method(ctx.model, None, ctx.spectra, Method::Fom, mu, &ctx.params(&Job {
        method: Method::Fom,
        mu_index: 0,
        window: None,
        count: None,
    }))
    .map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Default)]
pub struct RunArgs {
    pub config: PathBuf,
    pub method: String,
    pub mu: Option<f64>,
    pub m_s: Option<usize>,
    pub n_s: Option<usize>,
    pub dictionary: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub row: ResultRow,
    pub results: PathBuf,
    pub steps: PathBuf,
}

pub fn run(args: &RunArgs) -> CliResult<RunSummary> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let model = cfg.build_model()?;
    let method: Method = args.method.parse()?;
    if method.is_hyper_reduced() && !model.is_nonlinear() {
        return Err(CliError(format!("method {method} needs a nonlinear model")));
    }
    let mu = match args.mu {
        Some(m) if model.domain.contains(&[m]) => vec![m],
        Some(m) => return Err(CliError(format!("--mu {m} is outside the parameter domain"))),
        None => cfg.test_parameters(&model, args.seed)[0].clone(),
    };
    let first = |grid: &[usize], flag: &str| {
        grid.first()
            .copied()
            .ok_or_else(|| CliError(format!("{flag} is required (the config has no grid to default to)")))
    };
    let (window, count) = match method {
        Method::Fom => (None, None),
        m if m.is_dictionary_based() => (
            Some(args.m_s.map_or_else(|| first(&cfg.methods.m_s, "--m_s"), Ok)?),
            Some(args.n_s.map_or_else(|| first(&cfg.methods.n_s, "--n_s"), Ok)?),
        ),
        _ => (None, Some(args.n_s.map_or_else(|| first(cfg.standard_sizes(), "--n_s"), Ok)?)),
    };
    let dict_path = args.dictionary.clone().unwrap_or_else(|| cfg.dictionary_path());
    let dict = match method {
        Method::Fom => None,
        _ => Some(open_dictionary(&dict_path, &args.config, &model)?),
    };
    let spectra = GlobalSpectra::new();
    let seed = args.seed.or(cfg.test.seed).filter(|_| args.mu.is_none() && cfg.test.random.is_some());
    let ctx = Context {
        cfg: &cfg,
        model: &model,
        dict: dict.as_ref(),
        spectra: &spectra,
        seed,
    };
    let job = Job {
        method,
        mu_index: 0,
        window,
        count,
    };
    let fom = full_order(&ctx, &mu);
    let ev = ctx.evaluate(&job, &mu, fom.as_ref().map_err(String::as_str));
    if !ev.row.is_ok() {
        return Err(CliError(ev.row.status.trim_start_matches("error: ").to_string()));
    }
    let out = args.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    create_dir(&out)?;
    let results = out.join(format!("run_{method}.csv"));
    let steps = out.join(format!("run_{method}_steps.csv"));
    write_results(&results, std::slice::from_ref(&ev.row)).map_err(|e| io_error(&results, e))?;
    write_steps(&steps, &ev.steps).map_err(|e| io_error(&steps, e))?;
    if cfg.output.charts {
        let chart = hamiltonian_chart(format!("Hamiltonian error, {method}, mu = {}", mu[0]), vec![(method.to_string(), &ev.steps)]);
        write_text(&out.join(format!("run_{method}_hamiltonian.svg")), &chart.render())?;
    }
    Ok(RunSummary {
        row: ev.row,
        results,
        steps,
    })
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

fn hamiltonian_chart(title: String, series: Vec<(String, &Vec<StepRow>)>) -> Chart {
    Chart {
        title,
        x_label: "time step".into(),
        y_label: "relative Hamiltonian error".into(),
        log_x: false,
        log_y: true,
        series: series
            .into_iter()
            .map(|(label, steps)| Series {
                label,
                points: steps.iter().map(|s| (s.step as f64, s.e_ham_rel)).collect(),
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentArgs {
    pub config: PathBuf,
    pub dictionary: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub results: PathBuf,
    pub runs: usize,
    pub failed: usize,
}

fn sorted(grid: &[usize]) -> Vec<usize> {
    let mut g = grid.to_vec();
    g.sort_unstable();
    g.dedup();
    g
}

fn jobs(cfg: &ExperimentConfig, methods: &[Method], tests: usize) -> Vec<Job> {
    let (windows, counts, sizes) = (sorted(&cfg.methods.m_s), sorted(&cfg.methods.n_s), sorted(cfg.standard_sizes()));
    let mut out = Vec::new();
    for &method in methods {
        for mu_index in 0..tests {
            let job = |window, count| Job {
                method,
                mu_index,
                window,
                count,
            };
            if method == Method::Fom {
                out.push(job(None, None));
            } else if method.is_dictionary_based() {
                for &w in &windows {
                    for &n in &counts {
                        out.push(job(Some(w), Some(n)));
                    }
                }
            } else {
                for &n in &sizes {
                    out.push(job(None, Some(n)));
                }
            }
        }
    }
    out
}

pub fn experiment(args: &ExperimentArgs) -> CliResult<ExperimentSummary> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let model = cfg.build_model()?;
    let mut methods = Vec::new();
    for m in cfg.methods()? {
        if !methods.contains(&m) {
            methods.push(m);
        }
    }
    let tests = cfg.test_parameters(&model, args.seed);
    let dict_path = args.dictionary.clone().unwrap_or_else(|| cfg.dictionary_path());
    let dict = if methods.iter().all(|&m| m == Method::Fom) {
        None
    } else {
        Some(open_dictionary(&dict_path, &args.config, &model)?)
    };
    let spectra = GlobalSpectra::new();
    let ctx = Context {
        cfg: &cfg,
        model: &model,
        dict: dict.as_ref(),
        spectra: &spectra,
        seed: args.seed.or(cfg.test.seed).filter(|_| cfg.test.random.is_some()),
    };
    let out = args.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    let steps_dir = out.join("steps");
    create_dir(&steps_dir)?;

    info!("computing {} full-order references", tests.len());
    let foms: Vec<Result<MethodRun, String>> = tests.par_iter().map(|mu| full_order(&ctx, mu)).collect();
    let jobs = jobs(&cfg, &methods, tests.len());
    info!("running {} configurations", jobs.len());
    let results: Vec<Evaluated> = jobs
        .par_iter()
        .map(|job| {
            let mu = &tests[job.mu_index];
            let ev = ctx.evaluate(job, mu, foms[job.mu_index].as_ref().map_err(String::as_str));
            info!("{} {}: {}", job.file_stem(), ev.row.mu, ev.row.status);
            ev
        })
        .collect();

    let mut rows = Vec::new();
    for &method in &methods {
        let idx: Vec<usize> = (0..jobs.len()).filter(|&i| jobs[i].method == method).collect();
        rows.extend(idx.iter().map(|&i| results[i].row.clone()));
        let mut keys: Vec<(Option<usize>, Option<usize>)> = idx.iter().map(|&i| (jobs[i].window, jobs[i].count)).collect();
        keys.sort_unstable();
        keys.dedup();
        for key in keys {
            let group: Vec<&ResultRow> = idx
                .iter()
                .filter(|&&i| (jobs[i].window, jobs[i].count) == key)
                .map(|&i| &results[i].row)
                .collect();
            if group.len() > 1 {
                rows.extend(mean_row(&group));
            }
        }
    }
    for (job, ev) in jobs.iter().zip(&results) {
        if !ev.steps.is_empty() {
            let p = steps_dir.join(format!("{}.csv", job.file_stem()));
            write_steps(&p, &ev.steps).map_err(|e| io_error(&p, e))?;
        }
    }
    let path = out.join("results.csv");
    write_results(&path, &rows).map_err(|e| io_error(&path, e))?;
    if cfg.output.charts {
        write_charts(&out, &cfg, &methods, &jobs, &results, &rows)?;
    }
    Ok(ExperimentSummary {
        results: path,
        runs: jobs.len(),
        failed: results.iter().filter(|e| !e.row.is_ok()).count(),
    })
}

/// Averaged rows when several test parameters ran, the single-parameter rows otherwise.
fn summary_rows(rows: &[ResultRow], method: Method, averaged: bool) -> Vec<&ResultRow> {
    rows.iter()
        .filter(|r| r.method == method.name() && (r.mu == "mean") == averaged && r.is_ok())
        .collect()
}

fn write_charts(
    out: &Path,
    cfg: &ExperimentConfig,
    methods: &[Method],
    jobs: &[Job],
    results: &[Evaluated],
    rows: &[ResultRow],
) -> CliResult<()> {
    let averaged = rows.iter().any(|r| r.mu == "mean");
    let mut by_size = Vec::new();
    let mut by_time = Vec::new();
    for &method in methods.iter().filter(|&&m| m != Method::Fom) {
        let mine = summary_rows(rows, method, averaged);
        let mut groups: Vec<(String, Vec<&ResultRow>)> = Vec::new();
        for r in mine {
            let label = match r.m_s {
                Some(w) => format!("{method} m_s={w}"),
                None => method.to_string(),
            };
            match groups.iter_mut().find(|g| g.0 == label) {
                Some(g) => g.1.push(r),
                None => groups.push((label, vec![r])),
            }
        }
        for (label, group) in groups {
            let mut size: Vec<(f64, f64)> = group.iter().filter_map(|r| Some((r.n_mean?, r.e_rel?))).collect();
            size.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut time: Vec<(f64, f64)> = group.iter().filter_map(|r| Some((r.online_s?, r.e_rel?))).collect();
            time.sort_by(|a, b| a.0.total_cmp(&b.0));
            by_size.push(Series { label: label.clone(), points: size });
            if !time.is_empty() {
                by_time.push(Series { label, points: time });
            }
        }
    }
    let chart = |title: &str, x: &str, log_x: bool, series: Vec<Series>| Chart {
        title: title.into(),
        x_label: x.into(),
        y_label: "relative reduction error".into(),
        log_x,
        log_y: true,
        series,
    };
    write_text(&out.join("error_vs_basis_size.svg"), &chart("Error vs. basis size", "average basis size", false, by_size).render())?;
    if cfg.output.record_timings {
        write_text(&out.join("error_vs_online_time.svg"), &chart("Error vs. online time", "online time [s]", true, by_time).render())?;
    }
    // Hamiltonian traces at the first test parameter: the largest configuration of each method
    let mut traces = Vec::new();
    for &method in methods {
        let pick = jobs
            .iter()
            .zip(results)
            .filter(|(j, ev)| j.method == method && j.mu_index == 0 && !ev.steps.is_empty())
            .max_by_key(|(j, _)| (j.count, std::cmp::Reverse(j.window)));
        if let Some((j, ev)) = pick {
            traces.push((j.file_stem(), &ev.steps));
        }
    }
    write_text(&out.join("hamiltonian_error.svg"), &hamiltonian_chart("Hamiltonian error".into(), traces).render())
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub outcomes: Vec<CheckOutcome>,
}

impl CheckReport {
    pub fn failed(&self) -> usize {
        self.outcomes.iter().filter(|o| o.status == Status::Fail).count()
    }
}

/// Runs the acceptance suite, or only the dictionary consistency check when a dictionary is given.
pub fn check(scale: Scale, dictionary: Option<&Path>, mut report: impl FnMut(&CheckOutcome)) -> CheckReport {
    let mut outcomes = Vec::new();
    match dictionary {
        Some(path) => {
            let clock = Instant::now();
            let out = match load_dictionary(path) {
                Ok(d) => dictionary_consistency(&d),
                Err(e) => CheckOutcome {
                    id: 0,
                    name: "dictionary file".into(),
                    status: Status::Fail,
                    detail: format!("{}: {e}", path.display()),
                    elapsed: clock.elapsed(),
                },
            };
            report(&out);
            outcomes.push(out);
        }
        None => {
            let suite = Suite::new(scale);
            for id in 1..=CHECK_NAMES.len() {
                let out = suite.run(id);
                report(&out);
                outcomes.push(out);
            }
        }
    }
    CheckReport { outcomes }
}
