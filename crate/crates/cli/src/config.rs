use std::path::{Path, PathBuf};

use fracinv_core::forward::Potential;
use fracinv_core::mesh::{DiscreteManifold, ObservationSet};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Filled with the subcommand name when absent.
    #[serde(default)]
    pub pipeline: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub manifold: ManifoldSpec,
    pub observation: ObservationSpec,
    #[serde(default)]
    pub potential: PotentialSpec,
    #[serde(default)]
    pub sources: SourcesConfig,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub entangle: EntangleSection,
    #[serde(default)]
    pub gauge: GaugeSection,
}

fn default_alpha() -> f64 {
    0.5
}

fn one() -> f64 {
    1.0
}

/// A vertex by index or, on grids, by coordinates.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Vertex {
    Index(usize),
    Coords(Vec<usize>),
}

impl Vertex {
    pub fn resolve(&self, m: &DiscreteManifold, field: &str) -> Result<usize, CliError> {
        let v = match self {
            Vertex::Index(i) => Some(*i).filter(|&i| i < m.n_vertices()),
            Vertex::Coords(c) => m.grid_vertex(c),
        };
        v.ok_or_else(|| CliError::schema(field, format!("{self:?} is not a vertex of this manifold")))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "builder", rename_all = "snake_case", deny_unknown_fields)]
pub enum ManifoldSpec {
    Torus {
        sides: Vec<usize>,
        #[serde(default = "one")]
        conductance: f64,
    },
    Cycle {
        n: usize,
        #[serde(default = "one")]
        conductance: f64,
    },
    Random {
        n: usize,
        extra_edges: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        perturbation: f64,
    },
    File {
        path: PathBuf,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservationSpec {
    Indices { indices: Vec<usize> },
    Ball { center: Vertex, radius: usize },
    /// Grid vertices whose coordinate along `axis` is one of `values`.
    Band { axis: usize, values: Vec<usize> },
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    #[default]
    Zero,
    Constant {
        value: f64,
    },
    Bump {
        center: Vertex,
        radius: usize,
        #[serde(default = "one")]
        height: f64,
    },
    RandomOutside {
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourcesConfig {
    pub count: usize,
    pub radius: usize,
}

impl Default for SourcesConfig {
    fn default() -> Self {
        Self { count: 40, radius: 1 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub dt: f64,
    pub samples: usize,
    pub noise_floor: f64,
    pub stability_tolerance: f64,
    pub max_modes: usize,
    pub rank_tolerance: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { dt: 0.1, samples: 470, noise_floor: 1e-11, stability_tolerance: 1e-7, max_modes: 64, rank_tolerance: 1e-6 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub cluster: f64,
    pub kernel: f64,
    pub residual: f64,
    pub orthogonality: f64,
    pub eigenvalue: f64,
    pub angle: f64,
    pub resolvent: f64,
    pub expansion: f64,
    pub potential: f64,
    pub coverage_threshold: f64,
    pub min_coverage: f64,
    pub heat_inverse: f64,
    pub heat_forward: f64,
    pub scalar_quadrature: f64,
    pub reflection: f64,
    pub nullspace: f64,
    pub moment: f64,
    pub cauchy_match: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            cluster: 1e-8,
            kernel: 1e-9,
            residual: 1e-9,
            orthogonality: 1e-10,
            eigenvalue: 1e-6,
            angle: 1e-6,
            resolvent: 1e-6,
            expansion: 1e-8,
            potential: 1e-6,
            coverage_threshold: 1e-8,
            min_coverage: 1.0,
            heat_inverse: 1e-6,
            heat_forward: 1e-5,
            scalar_quadrature: 1e-8,
            reflection: 1e-12,
            nullspace: 1e-8,
            moment: 1e-6,
            cauchy_match: 1e-10,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntangleSection {
    /// Hop shift of the integer-shift counterexample.
    pub shift: usize,
    pub moment_orders: Vec<u32>,
    pub grid_min: f64,
    pub grid_max: f64,
}

impl Default for EntangleSection {
    fn default() -> Self {
        Self { shift: 1, moment_orders: vec![1, 2, 3], grid_min: 1e-16, grid_max: 80.0 }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(tag = "permutation", rename_all = "snake_case", deny_unknown_fields)]
pub enum GaugeSection {
    #[default]
    Identity,
    /// `c_axis ↦ −c_axis` on a grid.
    Reflect { axis: usize },
    Explicit { map: Vec<usize> },
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = toml::Deserializer::new(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Schema { path, message: e.into_inner().message().trim().to_string() }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CliError::schema("alpha", format!("must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.fit.dt > 0.0) || self.fit.samples < 8 {
            return Err(CliError::schema("fit", "need dt > 0 and at least 8 samples".into()));
        }
        if self.sources.count == 0 {
            return Err(CliError::schema("sources.count", "must be positive".into()));
        }
        if self.entangle.moment_orders.contains(&0) {
            return Err(CliError::schema("entangle.moment_orders", "orders start at 1".into()));
        }
        Ok(())
    }

    /// Fills pipeline and seed override; the result is what gets written back.
    pub fn resolve(mut self, command: &str, seed: Option<u64>) -> Self {
        if self.pipeline.is_none() {
            self.pipeline = Some(command.to_string());
        }
        if let Some(s) = seed {
            self.seed = s;
        }
        self
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn build_manifold(&self) -> Result<DiscreteManifold, CliError> {
        let m = match &self.manifold {
            ManifoldSpec::Torus { sides, conductance } => DiscreteManifold::flat_torus(sides, *conductance),
            ManifoldSpec::Cycle { n, conductance } => DiscreteManifold::cycle(*n, *conductance),
            ManifoldSpec::Random { n, extra_edges, seed, perturbation } => {
                let base = DiscreteManifold::random_graph(*n, *extra_edges, *seed);
                if *perturbation > 0.0 {
                    base.and_then(|m| m.perturbed(*perturbation, *seed))
                } else {
                    base
                }
            }
            ManifoldSpec::File { path } => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::schema("manifold.path", format!("cannot read {}: {e}", path.display())))?;
                DiscreteManifold::from_text(&text)
            }
        };
        m.map_err(|e| CliError::schema("manifold", e.to_string()))
    }

    pub fn build_observation(&self, m: &DiscreteManifold) -> Result<ObservationSet, CliError> {
        let n = m.n_vertices();
        let obs = match &self.observation {
            ObservationSpec::Indices { indices } => ObservationSet::new(indices.clone(), n),
            ObservationSpec::Ball { center, radius } => {
                ObservationSet::ball(m, center.resolve(m, "observation.center")?, *radius)
            }
            ObservationSpec::Band { axis, values } => {
                if m.grid_sides().is_none_or(|s| *axis >= s.len()) {
                    return Err(CliError::schema("observation.axis", "band needs a grid manifold with this axis".into()));
                }
                let idx = (0..n).filter(|&v| values.contains(&m.grid_coords(v).expect("grid")[*axis])).collect();
                ObservationSet::new(idx, n)
            }
        };
        obs.map_err(|e| CliError::schema("observation", e.to_string()))
    }

    pub fn build_potential(&self, m: &DiscreteManifold, obs: &ObservationSet) -> Result<Potential, CliError> {
        let n = m.n_vertices();
        let p = match &self.potential {
            PotentialSpec::Zero => Ok(Potential::zero(n)),
            PotentialSpec::Constant { value } => Ok(Potential::constant(n, *value)),
            PotentialSpec::Bump { center, radius, height } => {
                Potential::bump(m, center.resolve(m, "potential.center")?, *radius, *height)
            }
            PotentialSpec::RandomOutside { amplitude, seed } => Ok(Potential::random_outside(obs, *amplitude, *seed)),
        };
        p.map_err(|e| CliError::schema("potential", e.to_string()))
    }

    pub fn gauge_permutation(&self, m: &DiscreteManifold) -> Result<Vec<usize>, CliError> {
        let n = m.n_vertices();
        match &self.gauge {
            GaugeSection::Identity => Ok((0..n).collect()),
            GaugeSection::Reflect { axis } => {
                let sides = m
                    .grid_sides()
                    .filter(|s| *axis < s.len())
                    .ok_or_else(|| CliError::schema("gauge.axis", "reflection needs a grid manifold with this axis".into()))?
                    .to_vec();
                Ok((0..n)
                    .map(|v| {
                        let mut c = m.grid_coords(v).expect("grid");
                        c[*axis] = (sides[*axis] - c[*axis]) % sides[*axis];
                        m.grid_vertex(&c).expect("grid")
                    })
                    .collect())
            }
            GaugeSection::Explicit { map } => {
                if map.len() != n {
                    return Err(CliError::schema("gauge.map", format!("has {} entries for {n} vertices", map.len())));
                }
                Ok(map.clone())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[manifold]
builder = "torus"
sides = [4, 4]

[observation]
kind = "band"
axis = 0
values = [0, 1]
"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap().resolve("heatcheck", Some(3));
        assert_eq!(cfg.alpha, 0.5);
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.pipeline.as_deref(), Some("heatcheck"));
        let again = ExperimentConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(again.hash(), cfg.hash());
    }

    #[test]
    fn unknown_field_reports_path() {
        let text = MINIMAL.replace("values = [0, 1]", "values = [0, 1]\nradius = 2");
        match ExperimentConfig::parse(&text) {
            Err(CliError::Schema { path, .. }) => assert!(path.starts_with("observation"), "{path}"),
            other => panic!("expected schema error, got {other:?}"),
        }
        let text = format!("{MINIMAL}\n[tolerances]\nkernal = 1e-9\n");
        match ExperimentConfig::parse(&text) {
            Err(CliError::Schema { path, message }) => {
                assert!(path.starts_with("tolerances"), "{path}");
                assert!(message.contains("kernal"));
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn alpha_is_validated() {
        let text = format!("alpha = 1.5\n{MINIMAL}");
        assert!(matches!(ExperimentConfig::parse(&text), Err(CliError::Schema { path, .. }) if path == "alpha"));
    }
}
