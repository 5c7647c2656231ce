//! The nine simulation methods behind one entry point.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;

use crate::diagnostics::RunReport;
use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::integrators::{integrate, integrate_full_order, NewtonSettings};
use crate::linalg::energy_truncation;
use crate::model::AffineHamiltonianModel;
use crate::reduction_db::{
    online_time, reconstruct_trajectory, run_online, BasisKind, HyperReduction, OnlineSettings, SizeRule, SpectralRoute,
};
use crate::reduction_std::{
    assemble_reduced, assemble_sdeim, csvd_from_spectrum, deim, pod_from_spectrum, CsvdSpectrum, GramSpectrum,
    ProjectionMode,
};
use crate::selection::{SelectionConfig, TimeWeight};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Fom,
    Pod,
    Csvd,
    PodDeim,
    CsvdSdeim,
    DbPod,
    DbCsvd,
    DbPodDeim,
    DbCsvdSdeim,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Fom,
        Method::Pod,
        Method::Csvd,
        Method::PodDeim,
        Method::CsvdSdeim,
        Method::DbPod,
        Method::DbCsvd,
        Method::DbPodDeim,
        Method::DbCsvdSdeim,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Fom => "fom",
            Method::Pod => "pod",
            Method::Csvd => "csvd",
            Method::PodDeim => "pod-deim",
            Method::CsvdSdeim => "csvd-sdeim",
            Method::DbPod => "db-pod",
            Method::DbCsvd => "db-csvd",
            Method::DbPodDeim => "db-pod-deim",
            Method::DbCsvdSdeim => "db-csvd-sdeim",
        }
    }

    pub fn is_dictionary_based(self) -> bool {
        matches!(self, Method::DbPod | Method::DbCsvd | Method::DbPodDeim | Method::DbCsvdSdeim)
    }

    pub fn is_hyper_reduced(self) -> bool {
        matches!(self, Method::PodDeim | Method::CsvdSdeim | Method::DbPodDeim | Method::DbCsvdSdeim)
    }

    pub fn is_symplectic(self) -> bool {
        matches!(self, Method::Csvd | Method::CsvdSdeim | Method::DbCsvd | Method::DbCsvdSdeim)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::Argument(format!("unknown method `{s}`; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodParams {
    /// Window length `m_s` (dictionary methods).
    pub window: usize,
    /// Selected snapshots `n_s` for dictionary methods, basis size for the standard ones.
    pub count: usize,
    pub eps_csvd: f64,
    pub eps_sdeim: f64,
    pub time_weight: TimeWeight,
    pub route: SpectralRoute,
    pub newton: NewtonSettings,
}

impl MethodParams {
    pub fn new(window: usize, count: usize) -> Self {
        MethodParams {
            window,
            count,
            eps_csvd: 1e-12,
            eps_sdeim: 1e-12,
            time_weight: TimeWeight::Auto,
            route: SpectralRoute::Refined,
            newton: NewtonSettings::default(),
        }
    }
}

/// Spectra of the whole dictionary, shared by every standard-method run.
#[derive(Debug, Default)]
pub struct GlobalSpectra {
    pod: OnceLock<GramSpectrum>,
    csvd: OnceLock<CsvdSpectrum>,
    nonlinear: OnceLock<Option<GramSpectrum>>,
}

impl GlobalSpectra {
    pub fn new() -> Self {
        Self::default()
    }

    fn pod(&self, dict: &Dictionary) -> &GramSpectrum {
        self.pod.get_or_init(|| GramSpectrum::new(dict.state.gram.clone()))
    }

    fn csvd(&self, dict: &Dictionary) -> &CsvdSpectrum {
        self.csvd.get_or_init(|| CsvdSpectrum::from_grams(&dict.state.gram, &dict.state.gram_j))
    }

    fn nonlinear(&self, dict: &Dictionary) -> Option<&GramSpectrum> {
        self.nonlinear
            .get_or_init(|| dict.nonlinear.as_ref().map(|nd| GramSpectrum::new(nd.gram_f.clone())))
            .as_ref()
    }
}

/// Outcome of one method at one parameter.
#[derive(Debug, Clone)]
pub struct MethodRun {
    pub method: Method,
    pub mu: Vec<f64>,
    /// Reconstructed full states, one column per step.
    pub trajectory: DMatrix<f64>,
    pub step_window: Vec<usize>,
    /// Basis size of each window; a single entry for non-windowed methods.
    pub window_sizes: Vec<usize>,
    /// Time stepping plus, for dictionary methods, selection, basis and projection.
    pub online: Duration,
    /// Once-per-query work outside the online loop (assembly, forcing products).
    pub setup: Duration,
    /// Basis computation of the standard methods.
    pub offline: Duration,
    pub report: Option<RunReport>,
}

impl MethodRun {
    pub fn mean_basis_size(&self) -> f64 {
        if self.window_sizes.is_empty() {
            return 0.0;
        }
        self.window_sizes.iter().sum::<usize>() as f64 / self.window_sizes.len() as f64
    }

    pub fn basis_size_at(&self, step: usize) -> usize {
        self.window_sizes.get(self.step_window[step]).copied().unwrap_or(0)
    }
}

/// Runs `method` at `mu`. The dictionary supplies both the dictionary-based runs and
/// the snapshot matrix of the standard baselines.
pub fn run_method(
    model: &AffineHamiltonianModel,
    dict: Option<&Dictionary>,
    spectra: &GlobalSpectra,
    method: Method,
    mu: &[f64],
    params: &MethodParams,
) -> Result<MethodRun> {
    if method == Method::Fom {
        let clock = Instant::now();
        let trajectory = integrate_full_order(model, mu, &params.newton)?;
        let steps = trajectory.ncols();
        return Ok(MethodRun {
            method,
            mu: mu.to_vec(),
            trajectory,
            step_window: vec![0; steps],
            window_sizes: vec![model.dim()],
            online: clock.elapsed(),
            setup: Duration::ZERO,
            offline: Duration::ZERO,
            report: None,
        });
    }
    let dict = dict.ok_or_else(|| Error::Argument(format!("method {method} needs a dictionary")))?;
    if method.is_hyper_reduced() && !model.is_nonlinear() {
        return Err(Error::Argument(format!("method {method} needs a nonlinear model")));
    }
    if method.is_dictionary_based() {
        run_dictionary_method(model, dict, method, mu, params)
    } else {
        run_standard_method(model, dict, spectra, method, mu, params)
    }
}

fn run_dictionary_method(
    model: &AffineHamiltonianModel,
    dict: &Dictionary,
    method: Method,
    mu: &[f64],
    params: &MethodParams,
) -> Result<MethodRun> {
    let kind = if method.is_symplectic() { BasisKind::Csvd } else { BasisKind::Pod };
    let hyper = if method.is_hyper_reduced() { HyperReduction::Deim } else { HyperReduction::None };
    let mut selection = SelectionConfig::new(params.window, params.count);
    selection.time_weight = params.time_weight;
    let mut settings = OnlineSettings::new(kind, hyper, selection);
    settings.size = SizeRule::Energy(params.eps_csvd);
    settings.hyper_tolerance = params.eps_sdeim;
    settings.route = params.route;
    settings.newton = params.newton;
    let report = run_online(model, dict, mu, &settings)?;
    let trajectory = reconstruct_trajectory(&report, &dict.state)?;
    Ok(MethodRun {
        method,
        mu: mu.to_vec(),
        trajectory,
        step_window: report.step_window.clone(),
        window_sizes: report.basis_sizes(),
        online: online_time(&report.timings),
        setup: report.timings.setup,
        offline: Duration::ZERO,
        report: Some(report),
    })
}

fn run_standard_method(
    model: &AffineHamiltonianModel,
    dict: &Dictionary,
    spectra: &GlobalSpectra,
    method: Method,
    mu: &[f64],
    params: &MethodParams,
) -> Result<MethodRun> {
    let x = &dict.state.states;
    let clock = Instant::now();
    let (basis, mode) = if method.is_symplectic() {
        let two_k = params.count + params.count % 2;
        (csvd_from_spectrum(x, spectra.csvd(dict), two_k)?.basis, ProjectionMode::Symplectic)
    } else {
        (pod_from_spectrum(x, spectra.pod(dict), params.count)?.basis, ProjectionMode::Orthogonal)
    };
    let nonlinear_basis = if method.is_hyper_reduced() {
        let nd = dict
            .nonlinear
            .as_ref()
            .ok_or_else(|| Error::Argument("dictionary has no nonlinearity data".into()))?;
        let spectrum = spectra.nonlinear(dict).expect("nonlinearity dictionary present");
        if spectrum.rank == 0 {
            None
        } else {
            let m = energy_truncation(&spectrum.values, params.eps_sdeim).min(spectrum.rank).max(1);
            let u = pod_from_spectrum(&nd.values, spectrum, m)?.basis;
            let rows = deim(&u)?;
            Some((u, rows))
        }
    } else {
        None
    };
    let offline = clock.elapsed();

    let clock = Instant::now();
    let (system, y0) = match &nonlinear_basis {
        Some((u, rows)) => assemble_sdeim(&basis, u, rows, model, mu, mode)?,
        None => assemble_reduced(&basis, model, mu, mode)?,
    };
    let grid = model.time_grid(mu)?;
    let mut stepper = system.stepper(grid.dt(), params.newton)?;
    let setup = clock.elapsed();

    let clock = Instant::now();
    let reduced = integrate(&mut stepper, &y0, &grid)?;
    let online = clock.elapsed();
    let trajectory = &basis * reduced;
    Ok(MethodRun {
        method,
        mu: mu.to_vec(),
        step_window: vec![0; trajectory.ncols()],
        trajectory,
        window_sizes: vec![basis.ncols()],
        online,
        setup,
        offline,
        report: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::relative_reduction_error;
    use crate::dictionary::{build_dictionary, OfflineOptions};
    use crate::model::{build_sine_gordon, build_wave2d};

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("dbcsvd".parse::<Method>().is_err());
    }

    #[test]
    fn fom_has_zero_error() {
        let m = build_wave2d(10, 5, 20).unwrap();
        let run = run_method(&m, None, &GlobalSpectra::new(), Method::Fom, &[8.0], &MethodParams::new(20, 10)).unwrap();
        let fom = integrate_full_order(&m, &[8.0], &NewtonSettings::default()).unwrap();
        assert_eq!(relative_reduction_error(&fom, &run.trajectory).unwrap(), 0.0);
    }

    #[test]
    fn wave_methods_run() {
        let m = build_wave2d(20, 5, 40).unwrap();
        let d = build_dictionary(&m, &[vec![7.0], vec![8.5], vec![10.0]], &OfflineOptions::default()).unwrap();
        let spectra = GlobalSpectra::new();
        let mu = [8.5];
        let fom = integrate_full_order(&m, &mu, &NewtonSettings::default()).unwrap();
        for method in [Method::Pod, Method::Csvd, Method::DbPod, Method::DbCsvd] {
            let run = run_method(&m, Some(&d), &spectra, method, &mu, &MethodParams::new(10, 60)).unwrap();
            assert_eq!(run.trajectory.shape(), fom.shape());
            let e = relative_reduction_error(&fom, &run.trajectory).unwrap();
            if method.is_symplectic() {
                assert!(e < 1e-4, "{method}: {e}");
            }
        }
        for method in [Method::PodDeim, Method::CsvdSdeim] {
            assert!(run_method(&m, Some(&d), &spectra, method, &mu, &MethodParams::new(10, 60)).is_err());
        }
    }

    #[test]
    fn sine_gordon_methods_run() {
        let m = build_sine_gordon(40, 60).unwrap();
        let training: Vec<Vec<f64>> = (0..3).map(|j| vec![0.7 + 0.1 * j as f64]).collect();
        let d = build_dictionary(&m, &training, &OfflineOptions::default()).unwrap();
        let spectra = GlobalSpectra::new();
        let mu = [0.8];
        let fom = integrate_full_order(&m, &mu, &NewtonSettings::default()).unwrap();
        for method in [Method::PodDeim, Method::CsvdSdeim, Method::DbPodDeim, Method::DbCsvdSdeim] {
            let run = run_method(&m, Some(&d), &spectra, method, &mu, &MethodParams::new(20, 60)).unwrap();
            let e = relative_reduction_error(&fom, &run.trajectory).unwrap();
            assert!(e < 1e-2, "{method}: {e}");
        }
        assert!(run_method(&m, Some(&d), &spectra, Method::DbCsvd, &mu, &MethodParams::new(20, 60)).is_err());
    }
}
