//! Run configuration, read from JSON. Missing keys take their defaults;
//! unknown keys are reported as warnings rather than errors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Undersampling;
use crate::dcf::DcfMethod;
use crate::filter::{CutoffUnit, FilterKind, FilterSpec, DEFAULT_ARCTAN_BETA};
use crate::nufft::{GriddingKernel, KernelLookup};
use crate::sim::SimulationSpec;
use crate::{Error, Result};

/// Where coil sensitivities come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivitySource {
    /// Use maps stored with the data if present, otherwise estimate.
    #[default]
    Auto,
    /// Always estimate from the (fully sampled) data.
    Estimate,
    /// Require maps stored with the data.
    Provided,
}

/// Dataset names inside the container file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetNames {
    pub rawdata: String,
    pub trajectory: String,
    pub sensitivities: String,
    pub noise_covariance: String,
}

impl Default for DatasetNames {
    fn default() -> Self {
        Self {
            rawdata: "rawdata".into(),
            trajectory: "trajectory".into(),
            sensitivities: "sensitivities".into(),
            noise_covariance: "noise_covariance".into(),
        }
    }
}

/// Post-reconstruction filter. Without a cutoff the filter sits at the
/// maximum trajectory radius, i.e. the support of the acquired data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub kind: FilterKind,
    pub cutoff: Option<f64>,
    pub unit: CutoffUnit,
    pub beta: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            kind: FilterKind::HardCircle,
            cutoff: None,
            unit: CutoffUnit::Cells,
            beta: DEFAULT_ARCTAN_BETA,
        }
    }
}

impl FilterConfig {
    /// Resolves the cutoff against the trajectory's maximum radius (cells).
    pub fn spec(&self, max_radius: f64) -> FilterSpec {
        let (cutoff, unit) = match self.cutoff {
            Some(c) => (c, self.unit),
            None => (max_radius, CutoffUnit::Cells),
        };
        FilterSpec {
            kind: self.kind,
            cutoff,
            unit,
            beta: self.beta,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    pub directory: Option<String>,
    pub write_png: bool,
    pub write_pgm: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: None,
            write_png: true,
            write_pgm: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub max_iterations: usize,
    pub tikhonov_lambda: f64,
    /// Stop once `δ < ε`; 0 disables early stopping.
    pub tolerance_epsilon: f64,
    pub kernel_width: usize,
    pub kernel_table_points: usize,
    pub kernel_lookup: KernelLookup,
    pub oversampling_ratio_override: Option<f64>,
    /// Hann window width for sensitivity estimation, in k-space cells.
    pub sensitivity_window_width: usize,
    pub sensitivity_threshold: f64,
    pub sensitivity_source: SensitivitySource,
    pub dcf: DcfMethod,
    /// Whiten with the stored noise covariance when there is one.
    pub prewhiten: bool,
    pub filter: FilterConfig,
    pub undersampling: Vec<Undersampling>,
    pub dataset_names: DatasetNames,
    pub output: OutputConfig,
    pub simulation: SimulationSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            max_iterations: 10,
            tikhonov_lambda: 0.0,
            tolerance_epsilon: 0.0,
            kernel_width: 5,
            kernel_table_points: 10_000,
            kernel_lookup: KernelLookup::Linear,
            oversampling_ratio_override: None,
            sensitivity_window_width: 50,
            sensitivity_threshold: crate::coils::SUPPORT_THRESHOLD,
            sensitivity_source: SensitivitySource::Auto,
            dcf: DcfMethod::GriddedOnes,
            prewhiten: true,
            filter: FilterConfig::default(),
            undersampling: (1..=4).map(Undersampling::SkipEvery).collect(),
            dataset_names: DatasetNames::default(),
            output: OutputConfig::default(),
            simulation: SimulationSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.max_iterations < 1 {
            problems.push("max_iterations must be at least 1".to_string());
        }
        if !(self.tikhonov_lambda >= 0.0 && self.tikhonov_lambda.is_finite()) {
            problems.push(format!("tikhonov_lambda must be >= 0, got {}", self.tikhonov_lambda));
        }
        if !(self.tolerance_epsilon >= 0.0 && self.tolerance_epsilon.is_finite()) {
            problems.push(format!(
                "tolerance_epsilon must be >= 0, got {}",
                self.tolerance_epsilon
            ));
        }
        if self.kernel_width < 2 {
            problems.push(format!("kernel_width must be at least 2, got {}", self.kernel_width));
        }
        if self.kernel_table_points < 100 {
            problems.push(format!(
                "kernel_table_points must be at least 100, got {}",
                self.kernel_table_points
            ));
        }
        if let Some(r) = self.oversampling_ratio_override {
            if !(r >= 1.0 && r.is_finite()) {
                problems.push(format!("oversampling_ratio_override must be >= 1, got {r}"));
            }
        }
        if self.sensitivity_window_width == 0 {
            problems.push("sensitivity_window_width must be positive".to_string());
        }
        if !(0.0..1.0).contains(&self.sensitivity_threshold) {
            problems.push(format!(
                "sensitivity_threshold must lie in [0, 1), got {}",
                self.sensitivity_threshold
            ));
        }
        if let Some(c) = self.filter.cutoff {
            if !(c > 0.0) {
                problems.push(format!("filter.cutoff must be > 0, got {c}"));
            }
        }
        if !(self.filter.beta > 0.0) {
            problems.push(format!("filter.beta must be > 0, got {}", self.filter.beta));
        }
        if self.undersampling.is_empty() {
            problems.push("undersampling series is empty".to_string());
        }
        for u in &self.undersampling {
            let v = match u {
                Undersampling::SkipEvery(v) | Undersampling::FirstSpokes(v) => *v,
            };
            if v == 0 {
                problems.push(format!("undersampling {u:?} must be at least 1"));
            }
        }
        if let Err(Error::Validation(sim)) = self.simulation.validate() {
            problems.extend(sim.into_iter().map(|p| format!("simulation: {p}")));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    /// Kaiser-Bessel kernel for a grid with the given oversampling ratio.
    pub fn kernel(&self, oversampling_ratio: f64) -> Result<GriddingKernel> {
        Ok(
            GriddingKernel::kaiser_bessel(self.kernel_width, self.kernel_table_points, oversampling_ratio)?
                .with_lookup(self.kernel_lookup),
        )
    }
}

/// Parses and validates a JSON config. Returns the config and one warning
/// per unknown key.
pub fn parse_config(text: &str) -> Result<(RunConfig, Vec<String>)> {
    let mut warnings = Vec::new();
    let mut de = serde_json::Deserializer::from_str(text);
    let config: RunConfig = serde_ignored::deserialize(&mut de, |path| {
        warnings.push(format!("unknown config key `{path}` ignored"));
    })
    .map_err(|e| Error::Config(e.to_string()))?;
    de.end().map_err(|e| Error::Config(e.to_string()))?;
    config.validate()?;
    Ok((config, warnings))
}

pub fn read_config(path: &Path) -> Result<(RunConfig, Vec<String>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Container {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let (config, warnings) = parse_config("{}").unwrap();
        assert!(warnings.is_empty());
        assert_eq!(config, RunConfig::default());
        assert_eq!(config.max_iterations, 10);
        assert_eq!(config.tikhonov_lambda, 0.0);
        assert_eq!(config.kernel_width, 5);
        assert_eq!(config.kernel_table_points, 10_000);
        assert_eq!(config.tolerance_epsilon, 0.0);
        assert_eq!(config.sensitivity_window_width, 50);
    }

    #[test]
    fn single_override() {
        let (config, _) = parse_config(r#"{"tikhonov_lambda": 0.5}"#).unwrap();
        assert_eq!(config.tikhonov_lambda, 0.5);
        assert_eq!(
            RunConfig {
                tikhonov_lambda: 0.0,
                ..config
            },
            RunConfig::default()
        );
    }

    #[test]
    fn zero_iterations_is_invalid() {
        assert!(matches!(
            parse_config(r#"{"max_iterations": 0}"#),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn unknown_keys_warn() {
        let (config, warnings) =
            parse_config(r#"{"max_iterations": 3, "colour": "red", "filter": {"sharpness": 2}}"#)
                .unwrap();
        assert_eq!(config.max_iterations, 3);
        assert_eq!(warnings.len(), 2);
        assert!(warnings[0].contains("colour"));
        assert!(warnings[1].contains("filter.sharpness"));
    }

    #[test]
    fn malformed_json_is_a_parse_error() {
        assert!(matches!(parse_config("{"), Err(Error::Config(_))));
        assert!(matches!(parse_config(r#"{"max_iterations": "ten"}"#), Err(Error::Config(_))));
    }

    #[test]
    fn nested_sections() {
        let text = r#"{
            "undersampling": [{"scheme": "first_spokes", "value": 55}],
            "dataset_names": {"rawdata": "kdata"},
            "filter": {"kind": "arctan", "cutoff": 0.5, "unit": "normalized"},
            "kernel_lookup": "nearest"
        }"#;
        let (config, warnings) = parse_config(text).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(config.undersampling, vec![Undersampling::FirstSpokes(55)]);
        assert_eq!(config.dataset_names.rawdata, "kdata");
        assert_eq!(config.dataset_names.trajectory, "trajectory");
        assert_eq!(config.filter.kind, FilterKind::Arctan);
        assert_eq!(config.kernel_lookup, KernelLookup::Nearest);
        let spec = config.filter.spec(10.0);
        assert_eq!(spec.cutoff_cells(64), 16.0);
    }

    #[test]
    fn default_filter_uses_trajectory_radius() {
        let spec = FilterConfig::default().spec(23.5);
        assert_eq!(spec.kind, FilterKind::HardCircle);
        assert_eq!(spec.cutoff_cells(300), 23.5);
    }

    #[test]
    fn round_trips_through_json() {
        let config = RunConfig::default();
        let text = serde_json::to_string(&config).unwrap();
        let (back, warnings) = parse_config(&text).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(back, config);
    }
}
