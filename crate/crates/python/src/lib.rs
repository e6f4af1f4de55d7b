//! Python module `qdcascade`.

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};
use qdcascade::correlator::{self, CorrelationHistogram, G2Method};
use qdcascade::dynamics::{self, ChannelSplit, EvolveOptions};
use qdcascade::emission::TimeTagStream;
use qdcascade::experiments::{self, Format, RunOutput};
use qdcascade::lifetimes::{self, FitOptions, Kernel, ModelKind};
use qdcascade::scenario::{Experiment, Scenario};
use qdcascade::tomography::{self, StokesSet, TwoPhotonCounts};
use qdcascade::{Error, IrfKernel, LaserPulseSpec, PhononEnvironment, QdParameters, Validate};

create_exception!(qdcascade, NumericalError, PyException);

fn to_py(e: Error) -> PyErr {
    if e.root().is_config() {
        PyValueError::new_err(e.to_string())
    } else {
        NumericalError::new_err(e.to_string())
    }
}

#[pyclass(name = "QdParameters", module = "qdcascade", from_py_object)]
#[derive(Clone)]
struct PyQd {
    inner: QdParameters,
}

#[pymethods]
impl PyQd {
    /// Representative dot, with any field overridden by keyword.
    #[new]
    #[pyo3(signature = (*, exciton_energy_mev=None, biexciton_transition_energy_mev=None, fss_uev=None,
                        exciton_lifetime_ns=None, biexciton_lifetime_ns=None, cross_dephasing_time_ns=None,
                        exciton_linewidth_uev=None, biexciton_linewidth_uev=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        exciton_energy_mev: Option<f64>,
        biexciton_transition_energy_mev: Option<f64>,
        fss_uev: Option<f64>,
        exciton_lifetime_ns: Option<f64>,
        biexciton_lifetime_ns: Option<f64>,
        cross_dephasing_time_ns: Option<f64>,
        exciton_linewidth_uev: Option<f64>,
        biexciton_linewidth_uev: Option<f64>,
    ) -> Self {
        let d = QdParameters::representative();
        Self {
            inner: QdParameters {
                exciton_energy_mev: exciton_energy_mev.unwrap_or(d.exciton_energy_mev),
                biexciton_transition_energy_mev: biexciton_transition_energy_mev
                    .unwrap_or(d.biexciton_transition_energy_mev),
                fss_uev: fss_uev.unwrap_or(d.fss_uev),
                exciton_lifetime_ns: exciton_lifetime_ns.unwrap_or(d.exciton_lifetime_ns),
                biexciton_lifetime_ns: biexciton_lifetime_ns.unwrap_or(d.biexciton_lifetime_ns),
                cross_dephasing_time_ns: cross_dephasing_time_ns.unwrap_or(d.cross_dephasing_time_ns),
                exciton_linewidth_uev: exciton_linewidth_uev.unwrap_or(d.exciton_linewidth_uev),
                biexciton_linewidth_uev: biexciton_linewidth_uev.unwrap_or(d.biexciton_linewidth_uev),
            },
        }
    }

    #[getter]
    fn fss_uev(&self) -> f64 {
        self.inner.fss_uev
    }

    #[getter]
    fn exciton_lifetime_ns(&self) -> f64 {
        self.inner.exciton_lifetime_ns
    }

    #[getter]
    fn biexciton_lifetime_ns(&self) -> f64 {
        self.inner.biexciton_lifetime_ns
    }

    #[getter]
    fn binding_energy_mev(&self) -> f64 {
        self.inner.binding_energy_mev()
    }

    #[getter]
    fn tpe_resonance_mev(&self) -> f64 {
        self.inner.tpe_resonance_mev()
    }

    /// Constraint violations, empty when valid.
    fn validate(&self) -> Vec<String> {
        self.inner.validate().iter().map(|v| v.to_string()).collect()
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

fn split_dict<'py>(py: Python<'py>, s: &ChannelSplit) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("xx_coherent", s.xx_coherent)?;
    d.set_item("xx_phonon", s.xx_phonon)?;
    d.set_item("x_phonon", s.x_phonon)?;
    d.set_item("xx_total", s.xx_total())?;
    Ok(d)
}

/// End-of-pulse channel split for a two-photon-resonant pulse. With no
/// area, the π-equivalent area is located first.
#[pyfunction]
#[pyo3(signature = (qd=None, pulse_area_rad=None, detuning_mev=0.0, fwhm_ps=10.0, polarization="H", phonons=true))]
fn channel_split<'py>(
    py: Python<'py>,
    qd: Option<PyQd>,
    pulse_area_rad: Option<f64>,
    detuning_mev: f64,
    fwhm_ps: f64,
    polarization: &str,
    phonons: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let qd = qd.map_or_else(QdParameters::representative, |q| q.inner);
    let pol = qdcascade::Jones::from_label(polarization)
        .ok_or_else(|| PyValueError::new_err(format!("unknown polarization {polarization:?}")))?;
    let env = if phonons {
        PhononEnvironment::calibrated()
    } else {
        PhononEnvironment::decoupled()
    };
    let mut pulse = LaserPulseSpec::tpe(&qd, 0.0).with_center_energy(qd.tpe_resonance_mev() + detuning_mev);
    pulse.fwhm_ps = fwhm_ps;
    let opts = EvolveOptions::default();
    let area = match pulse_area_rad {
        Some(a) => a,
        None => dynamics::find_pi_area(&qd, &pulse, &env, &opts).map_err(to_py)?,
    };
    let pulse = pulse.with_area(area).with_polarization(pol);
    let t = py.detach(|| dynamics::evolve(&qd, &pulse, &env, &opts)).map_err(to_py)?;
    let d = split_dict(py, &t.channel_split)?;
    d.set_item("pulse_area_rad", area)?;
    Ok(d)
}

#[pyclass(name = "CorrelationHistogram", module = "qdcascade", from_py_object)]
#[derive(Clone)]
struct PyHistogram {
    inner: CorrelationHistogram,
}

#[pymethods]
impl PyHistogram {
    #[staticmethod]
    fn from_csv(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: CorrelationHistogram::from_csv(text).map_err(to_py)?,
        })
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }

    #[getter]
    fn taus_ps(&self) -> Vec<i64> {
        self.inner.taus_ps()
    }

    #[getter]
    fn counts(&self) -> Vec<u64> {
        self.inner.counts.clone()
    }

    #[getter]
    fn rep_period_ns(&self) -> f64 {
        self.inner.rep_period_ns
    }

    #[setter]
    fn set_rep_period_ns(&mut self, v: f64) {
        self.inner.rep_period_ns = v;
    }

    /// g²(0) by "side_peak" or "raw_counts".
    #[pyo3(signature = (method="side_peak", side_peaks=3, window_ns=6.0))]
    fn g2_zero(&self, method: &str, side_peaks: usize, window_ns: f64) -> PyResult<f64> {
        let m: G2Method = method.parse().map_err(to_py)?;
        Ok(correlator::g2_zero(&self.inner, self.inner.rep_period_ns, m, side_peaks, window_ns)
            .map_err(to_py)?
            .value)
    }

    /// Lifetime fit; returns the FitResult text and τ ± error.
    #[pyo3(signature = (model="single_exp", irf_sigma_ps=0.0, fixed_feed_ns=None))]
    fn fit_lifetime<'py>(
        &self,
        py: Python<'py>,
        model: &str,
        irf_sigma_ps: f64,
        fixed_feed_ns: Option<f64>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let kind: ModelKind = model.parse().map_err(to_py)?;
        let w = self.inner.bin_width_ps as f64 * 1e-3;
        let kernel = Kernel::from_irf(&IrfKernel::Gaussian { sigma_ps: irf_sigma_ps }, w).map_err(to_py)?;
        let opts = match fixed_feed_ns {
            Some(t) => FitOptions::cascade_with_fixed_feed(t),
            None => FitOptions::default(),
        };
        let fit = lifetimes::fit_lifetime(&self.inner, kind, &kernel, &opts).map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("tau_ns", fit.tau().0)?;
        d.set_item("tau_error_ns", fit.tau().1)?;
        d.set_item("reduced_chi_square", fit.reduced_chi_square)?;
        d.set_item("text", fit.to_text())?;
        Ok(d)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Coincidence histogram of stop − start delays (tags in ps, sorted).
#[pyfunction]
#[pyo3(signature = (start, stop, bin_width_ps=50, range_ns=50.0, rep_period_ns=12.5))]
fn coincidences(
    py: Python<'_>,
    start: Vec<u64>,
    stop: Vec<u64>,
    bin_width_ps: u64,
    range_ns: f64,
    rep_period_ns: f64,
) -> PyResult<PyHistogram> {
    let a = TimeTagStream::new(1, start);
    let b = TimeTagStream::new(2, stop);
    let mut h = py
        .detach(|| correlator::coincidences(&a, &b, bin_width_ps, range_ns))
        .map_err(to_py)?;
    h.rep_period_ns = rep_period_ns;
    Ok(PyHistogram { inner: h })
}

fn stokes_dict<'py>(py: Python<'py>, s: &StokesSet) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    let f = tomography::fidelity(s);
    for ((name, v), e) in ["s33", "s11", "s22", "s30", "s03"].iter().zip(s.values()).zip(s.errors()) {
        d.set_item(*name, (v, e))?;
    }
    d.set_item("fidelity", (f.value, f.error))?;
    d.set_item("entangled", f.entangled)?;
    Ok(d)
}

/// Stokes parameters and fidelity from twelve counts in the order
/// HH, HV, VV, VH, DD, DA, AA, AD, RR, RL, LL, LR.
#[pyfunction]
fn tomography_from_counts<'py>(py: Python<'py>, counts: [u64; 12]) -> PyResult<Bound<'py, PyDict>> {
    let s = tomography::stokes_from_counts(&TwoPhotonCounts::new(counts, 1.0)).map_err(to_py)?;
    stokes_dict(py, &s)
}

/// f = ¼(1 + S33 + S11 − S22 + S30 + S03).
#[pyfunction]
fn fidelity_from_stokes(stokes: [f64; 5]) -> f64 {
    tomography::fidelity(&StokesSet::exact(stokes)).value
}

#[pyfunction]
fn x_minus_xx(x: Vec<f64>, xx: Vec<f64>) -> PyResult<(Vec<f64>, Vec<bool>)> {
    let d = experiments::x_minus_xx(&x, &xx).map_err(to_py)?;
    Ok((d.values, d.inconsistent))
}

#[pyclass(name = "Scenario", module = "qdcascade", from_py_object)]
#[derive(Clone)]
struct PyScenario {
    inner: Scenario,
}

#[pymethods]
impl PyScenario {
    #[new]
    fn new(experiment: &str, seed: u64) -> PyResult<Self> {
        let e: Experiment = experiment.parse().map_err(to_py)?;
        Ok(Self {
            inner: Scenario::new(e, seed),
        })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: Scenario::from_toml(text).map_err(to_py)?,
        })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    #[getter]
    fn experiment(&self) -> &'static str {
        self.inner.experiment.name()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    #[getter]
    fn duration_s(&self) -> f64 {
        self.inner.duration()
    }

    #[setter]
    fn set_duration_s(&mut self, d: f64) {
        self.inner.duration_s = Some(d);
    }

    #[getter]
    fn qd(&self) -> PyQd {
        PyQd {
            inner: self.inner.qd.clone(),
        }
    }

    #[setter]
    fn set_qd(&mut self, qd: PyQd) {
        self.inner.qd = qd.inner;
    }

    fn run(&self, py: Python<'_>) -> PyResult<PyRunOutput> {
        let s = self.inner.clone();
        let out = py.detach(move || experiments::run(&s)).map_err(to_py)?;
        Ok(PyRunOutput { inner: out })
    }
}

#[pyclass(name = "RunOutput", module = "qdcascade")]
struct PyRunOutput {
    inner: RunOutput,
}

#[pymethods]
impl PyRunOutput {
    #[getter]
    fn passed(&self) -> bool {
        self.inner.passed()
    }

    /// Headline numbers keyed by name: (value, error, pass).
    #[getter]
    fn headlines<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for h in &self.inner.headlines {
            d.set_item(&h.name, (h.value, h.error, h.pass))?;
        }
        Ok(d)
    }

    /// Column of a result table.
    fn column(&self, table: &str, column: &str) -> PyResult<Vec<f64>> {
        self.inner
            .table(table)
            .and_then(|t| t.column(column))
            .ok_or_else(|| PyValueError::new_err(format!("no column {table}.{column}")))
    }

    /// Output files as {name: bytes} in "csv" or "json".
    #[pyo3(signature = (format="csv"))]
    fn files<'py>(&self, py: Python<'py>, format: &str) -> PyResult<Bound<'py, PyDict>> {
        let f: Format = format.parse().map_err(to_py)?;
        let d = PyDict::new(py);
        for a in &self.inner.artifacts {
            let (name, bytes) = a.render(f);
            d.set_item(name, PyBytes::new(py, &bytes))?;
        }
        Ok(d)
    }
}

#[pymodule]
#[pyo3(name = "qdcascade")]
fn qdcascade_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("NumericalError", m.py().get_type::<NumericalError>())?;
    m.add_class::<PyQd>()?;
    m.add_class::<PyHistogram>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyRunOutput>()?;
    m.add_function(wrap_pyfunction!(channel_split, m)?)?;
    m.add_function(wrap_pyfunction!(coincidences, m)?)?;
    m.add_function(wrap_pyfunction!(tomography_from_counts, m)?)?;
    m.add_function(wrap_pyfunction!(fidelity_from_stokes, m)?)?;
    m.add_function(wrap_pyfunction!(x_minus_xx, m)?)?;
    Ok(())
}
