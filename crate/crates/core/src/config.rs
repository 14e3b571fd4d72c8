//! Run configuration: a flat key = value format with [section] headers,
//! strict validation (unknown or malformed keys are named in the error),
//! and a canonical dump so that load(dump(cfg)) round-trips.

use std::path::Path;

use crate::constitutive::{DoubleWell, StoredEnergy, Viscosity};
use crate::error::SimError;
use crate::gravity::{BodyKind, ExternalBody, ExternalMass};
use crate::grid::Boundary;
use crate::integrator::StepControl;
use crate::kinematics::AdvectionScheme;
use crate::mixture::{MixtureSpec, Mobility, ReactionChannel};

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub dim: usize,
    pub cells: [usize; 3],
    pub lengths: [f64; 3],
    pub bc: [Boundary; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaterialConfig {
    pub preset: String,
    pub eps_phi: f64,
    pub alpha: f64,
    pub kappa: f64,
    pub well_amplitude: f64,
    pub well_j_a: f64,
    pub well_j_b: f64,
    pub chi: f64,
    pub nu1: f64,
    pub nu2: f64,
    pub q: f64,
    pub nu1_blend: Vec<f64>,
    pub nu2_blend: Vec<f64>,
    pub nu_j_exponent: f64,
    pub rho_heavy: f64,
    pub rho_light: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureConfig {
    pub enabled: bool,
    pub n: usize,
    pub mobility: String,
    pub m: f64,
    pub m_matrix: Vec<f64>,
    pub reactions: Vec<(usize, usize, f64)>,
    pub eps_pen: f64,
    pub c_star: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GravityConfig {
    pub enabled: bool,
    pub constant: f64,
    pub padding: f64,
    pub ext: Vec<ExtBodyConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtBodyConfig {
    pub kind: String,
    pub mass: f64,
    pub orbit_radius: f64,
    pub angular_rate: f64,
    pub phase: f64,
    pub size: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteppingConfig {
    pub dt_max: f64,
    pub cfl: f64,
    pub visc_factor: f64,
    pub hyper_factor: f64,
    pub diff_factor: f64,
    pub max_steps: u64,
    pub t_end: f64,
    pub j_floor: f64,
    pub scheme: String,
    pub newtonian_implicit: bool,
    pub hyper_implicit: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub amplitude: f64,
    pub mode: usize,
    pub interface: f64,
    pub radius: f64,
    pub flow_amplitude: f64,
    pub interface_width_cells: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub dir: String,
    pub cadence: u64,
    pub images: bool,
    pub csv: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub material: MaterialConfig,
    pub mixture: MixtureConfig,
    pub gravity: GravityConfig,
    pub stepping: SteppingConfig,
    pub scenario: ScenarioConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            grid: GridConfig {
                dim: 2,
                cells: [64, 64, 1],
                lengths: [1.0, 1.0, 1.0],
                bc: [Boundary::Periodic, Boundary::SlipWall, Boundary::Periodic],
            },
            material: MaterialConfig {
                preset: "power-law".into(),
                eps_phi: 1.0,
                alpha: 2.0,
                kappa: 4.0,
                well_amplitude: 40.0,
                well_j_a: 0.8,
                well_j_b: 1.2,
                chi: 1.0,
                nu1: 0.2,
                nu2: 1e-5,
                q: 4.0,
                nu1_blend: Vec::new(),
                nu2_blend: Vec::new(),
                nu_j_exponent: 0.0,
                rho_heavy: 2.0,
                rho_light: 1.0,
            },
            mixture: MixtureConfig {
                enabled: false,
                n: 2,
                mobility: "constant".into(),
                m: 0.01,
                m_matrix: Vec::new(),
                reactions: Vec::new(),
                eps_pen: 1e-4,
                c_star: vec![0.5, 0.5],
            },
            gravity: GravityConfig {
                enabled: true,
                constant: 1.0,
                padding: 2.0,
                ext: Vec::new(),
            },
            stepping: SteppingConfig {
                dt_max: 1e-3,
                cfl: 0.4,
                visc_factor: 0.25,
                hyper_factor: 0.2,
                diff_factor: 0.25,
                max_steps: 1000,
                t_end: f64::INFINITY,
                j_floor: 1e-6,
                scheme: "upwind1".into(),
                newtonian_implicit: true,
                hyper_implicit: false,
            },
            scenario: ScenarioConfig {
                name: "two-layer-rt".into(),
                seed: 42,
                amplitude: 0.02,
                mode: 1,
                interface: 0.5,
                radius: 0.3,
                flow_amplitude: 0.5,
                interface_width_cells: 1.5,
            },
            output: OutputConfig {
                dir: "out".into(),
                cadence: 0,
                images: false,
                csv: "ledger.csv".into(),
            },
        }
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T, SimError> {
    value.trim().parse::<T>().map_err(|_| SimError::Parse {
        line,
        message: format!("cannot parse value `{value}` for key `{key}`"),
    })
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool, SimError> {
    match value.trim() {
        "true" | "yes" | "on" => Ok(true),
        "false" | "no" | "off" => Ok(false),
        other => Err(SimError::Parse {
            line,
            message: format!("cannot parse boolean `{other}` for key `{key}`"),
        }),
    }
}

fn parse_list(line: usize, key: &str, value: &str) -> Result<Vec<f64>, SimError> {
    let value = value.trim();
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|tok| parse_num::<f64>(line, key, tok))
        .collect()
}

fn parse_boundary(line: usize, key: &str, value: &str) -> Result<Boundary, SimError> {
    match value.trim() {
        "periodic" => Ok(Boundary::Periodic),
        "wall" => Ok(Boundary::SlipWall),
        other => Err(SimError::Parse {
            line,
            message: format!("boundary `{other}` for `{key}` must be `periodic` or `wall`"),
        }),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, SimError> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::parse(&text)
    }

    pub fn parse(text: &str) -> Result<RunConfig, SimError> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let stripped = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if stripped.is_empty() {
                continue;
            }
            if let Some(name) = stripped.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or(SimError::Parse {
                    line,
                    message: "unterminated section header".into(),
                })?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = stripped.split_once('=').ok_or(SimError::Parse {
                line,
                message: format!("expected `key = value`, got `{stripped}`"),
            })?;
            let key = key.trim();
            let value = value.trim();
            cfg.apply(&section, key, value, line)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, section: &str, key: &str, value: &str, line: usize) -> Result<(), SimError> {
        let full = format!("{section}.{key}");
        match (section, key) {
            ("grid", "dim") => self.grid.dim = parse_num(line, &full, value)?,
            ("grid", "nx") => self.grid.cells[0] = parse_num(line, &full, value)?,
            ("grid", "ny") => self.grid.cells[1] = parse_num(line, &full, value)?,
            ("grid", "nz") => self.grid.cells[2] = parse_num(line, &full, value)?,
            ("grid", "lx") => self.grid.lengths[0] = parse_num(line, &full, value)?,
            ("grid", "ly") => self.grid.lengths[1] = parse_num(line, &full, value)?,
            ("grid", "lz") => self.grid.lengths[2] = parse_num(line, &full, value)?,
            ("grid", "bc_x") => self.grid.bc[0] = parse_boundary(line, &full, value)?,
            ("grid", "bc_y") => self.grid.bc[1] = parse_boundary(line, &full, value)?,
            ("grid", "bc_z") => self.grid.bc[2] = parse_boundary(line, &full, value)?,
            ("material", "preset") => self.material.preset = value.to_string(),
            ("material", "eps_phi") => self.material.eps_phi = parse_num(line, &full, value)?,
            ("material", "alpha") => self.material.alpha = parse_num(line, &full, value)?,
            ("material", "kappa") => self.material.kappa = parse_num(line, &full, value)?,
            ("material", "well_amplitude") => {
                self.material.well_amplitude = parse_num(line, &full, value)?
            }
            ("material", "well_j_a") => self.material.well_j_a = parse_num(line, &full, value)?,
            ("material", "well_j_b") => self.material.well_j_b = parse_num(line, &full, value)?,
            ("material", "chi") => self.material.chi = parse_num(line, &full, value)?,
            ("material", "nu1") => self.material.nu1 = parse_num(line, &full, value)?,
            ("material", "nu2") => self.material.nu2 = parse_num(line, &full, value)?,
            ("material", "q") => self.material.q = parse_num(line, &full, value)?,
            ("material", "nu1_blend") => self.material.nu1_blend = parse_list(line, &full, value)?,
            ("material", "nu2_blend") => self.material.nu2_blend = parse_list(line, &full, value)?,
            ("material", "nu_j_exponent") => {
                self.material.nu_j_exponent = parse_num(line, &full, value)?
            }
            ("material", "rho_heavy") => self.material.rho_heavy = parse_num(line, &full, value)?,
            ("material", "rho_light") => self.material.rho_light = parse_num(line, &full, value)?,
            ("mixture", "enabled") => self.mixture.enabled = parse_bool(line, &full, value)?,
            ("mixture", "n") => self.mixture.n = parse_num(line, &full, value)?,
            ("mixture", "mobility") => self.mixture.mobility = value.to_string(),
            ("mixture", "m") => self.mixture.m = parse_num(line, &full, value)?,
            ("mixture", "m_matrix") => self.mixture.m_matrix = parse_list(line, &full, value)?,
            ("mixture", "reactions") => {
                let mut channels = Vec::new();
                for tok in value.split(';').filter(|t| !t.trim().is_empty()) {
                    let (pair, rate) = tok.split_once(':').ok_or(SimError::Parse {
                        line,
                        message: format!("reaction `{tok}` must look like `i-j:rate`"),
                    })?;
                    let (i, j) = pair.split_once('-').ok_or(SimError::Parse {
                        line,
                        message: format!("reaction pair `{pair}` must look like `i-j`"),
                    })?;
                    channels.push((
                        parse_num(line, &full, i)?,
                        parse_num(line, &full, j)?,
                        parse_num(line, &full, rate)?,
                    ));
                }
                self.mixture.reactions = channels;
            }
            ("mixture", "eps_pen") => self.mixture.eps_pen = parse_num(line, &full, value)?,
            ("mixture", "c_star") => self.mixture.c_star = parse_list(line, &full, value)?,
            ("gravity", "enabled") => self.gravity.enabled = parse_bool(line, &full, value)?,
            ("gravity", "constant") => self.gravity.constant = parse_num(line, &full, value)?,
            ("gravity", "padding") => self.gravity.padding = parse_num(line, &full, value)?,
            ("gravity", "ext") => {
                let mut bodies = Vec::new();
                for tok in value.split(';').filter(|t| !t.trim().is_empty()) {
                    let parts: Vec<&str> = tok.split(',').map(|p| p.trim()).collect();
                    if parts.len() != 6 {
                        return Err(SimError::Parse {
                            line,
                            message: format!(
                                "external body `{tok}` must be `kind,mass,orbit,rate,phase,size`"
                            ),
                        });
                    }
                    bodies.push(ExtBodyConfig {
                        kind: parts[0].to_string(),
                        mass: parse_num(line, &full, parts[1])?,
                        orbit_radius: parse_num(line, &full, parts[2])?,
                        angular_rate: parse_num(line, &full, parts[3])?,
                        phase: parse_num(line, &full, parts[4])?,
                        size: parse_num(line, &full, parts[5])?,
                    });
                }
                self.gravity.ext = bodies;
            }
            ("stepping", "dt_max") => self.stepping.dt_max = parse_num(line, &full, value)?,
            ("stepping", "cfl") => self.stepping.cfl = parse_num(line, &full, value)?,
            ("stepping", "visc_factor") => self.stepping.visc_factor = parse_num(line, &full, value)?,
            ("stepping", "hyper_factor") => {
                self.stepping.hyper_factor = parse_num(line, &full, value)?
            }
            ("stepping", "diff_factor") => self.stepping.diff_factor = parse_num(line, &full, value)?,
            ("stepping", "max_steps") => self.stepping.max_steps = parse_num(line, &full, value)?,
            ("stepping", "t_end") => self.stepping.t_end = parse_num(line, &full, value)?,
            ("stepping", "j_floor") => self.stepping.j_floor = parse_num(line, &full, value)?,
            ("stepping", "scheme") => self.stepping.scheme = value.to_string(),
            ("stepping", "newtonian_implicit") => {
                self.stepping.newtonian_implicit = parse_bool(line, &full, value)?
            }
            ("stepping", "hyper_implicit") => {
                self.stepping.hyper_implicit = parse_bool(line, &full, value)?
            }
            ("scenario", "name") => self.scenario.name = value.to_string(),
            ("scenario", "seed") => self.scenario.seed = parse_num(line, &full, value)?,
            ("scenario", "amplitude") => self.scenario.amplitude = parse_num(line, &full, value)?,
            ("scenario", "mode") => self.scenario.mode = parse_num(line, &full, value)?,
            ("scenario", "interface") => self.scenario.interface = parse_num(line, &full, value)?,
            ("scenario", "radius") => self.scenario.radius = parse_num(line, &full, value)?,
            ("scenario", "flow_amplitude") => {
                self.scenario.flow_amplitude = parse_num(line, &full, value)?
            }
            ("scenario", "interface_width_cells") => {
                self.scenario.interface_width_cells = parse_num(line, &full, value)?
            }
            ("output", "dir") => self.output.dir = value.to_string(),
            ("output", "cadence") => self.output.cadence = parse_num(line, &full, value)?,
            ("output", "images") => self.output.images = parse_bool(line, &full, value)?,
            ("output", "csv") => self.output.csv = value.to_string(),
            _ => {
                return Err(SimError::Parse {
                    line,
                    message: format!("unknown key `{full}`"),
                })
            }
        }
        Ok(())
    }

    /// Semantic validation across sections. Each failure names the key and
    /// the violated constraint.
    pub fn validate(&self) -> Result<(), SimError> {
        if self.grid.dim != 2 && self.grid.dim != 3 {
            return Err(SimError::config("grid.dim", "must be 2 or 3"));
        }
        for a in 0..self.grid.dim {
            if self.grid.cells[a] < 4 {
                return Err(SimError::config(
                    format!("grid.n{}", ["x", "y", "z"][a]),
                    "need at least 4 cells per axis",
                ));
            }
            if !(self.grid.lengths[a] > 0.0) {
                return Err(SimError::config(
                    format!("grid.l{}", ["x", "y", "z"][a]),
                    "box lengths must be positive",
                ));
            }
        }
        match self.material.preset.as_str() {
            "power-law" | "double-well" => {}
            other => {
                return Err(SimError::config(
                    "material.preset",
                    format!("unknown preset `{other}` (power-law | double-well)"),
                ))
            }
        }
        if !(self.material.q > 3.0) {
            return Err(SimError::config(
                "material.q",
                format!(
                    "hyperviscous exponent must satisfy q > 3, got {}",
                    self.material.q
                ),
            ));
        }
        if !(self.material.alpha > 1.0) {
            return Err(SimError::config("material.alpha", "must exceed 1"));
        }
        if !(self.material.eps_phi > 0.0) {
            return Err(SimError::config("material.eps_phi", "must be positive"));
        }
        if !(self.material.nu1 > 0.0) || !(self.material.nu2 > 0.0) {
            return Err(SimError::config("material.nu1/nu2", "must be positive"));
        }
        if !(self.material.rho_heavy > 0.0) || !(self.material.rho_light > 0.0) {
            return Err(SimError::config(
                "material.rho_heavy/rho_light",
                "densities must be positive",
            ));
        }
        if self.mixture.enabled {
            if self.mixture.n < 2 {
                return Err(SimError::config("mixture.n", "need at least 2 species"));
            }
            if !(self.mixture.eps_pen > 0.0) {
                return Err(SimError::config(
                    "mixture.eps_pen",
                    "penalization strength must be positive",
                ));
            }
            if self.mixture.c_star.len() != self.mixture.n {
                return Err(SimError::config(
                    "mixture.c_star",
                    format!("need {} entries", self.mixture.n),
                ));
            }
            if !(self.material.chi > 0.0) {
                return Err(SimError::config(
                    "material.chi",
                    "mixture part must be uniformly convex (chi > 0)",
                ));
            }
            match self.mixture.mobility.as_str() {
                "constant" | "maxwell-stefan" => {}
                other => {
                    return Err(SimError::config(
                        "mixture.mobility",
                        format!("unknown mobility `{other}`"),
                    ))
                }
            }
            for (i, j, rate) in &self.mixture.reactions {
                if *i >= self.mixture.n || *j >= self.mixture.n || i == j {
                    return Err(SimError::config(
                        "mixture.reactions",
                        format!("invalid species pair {i}-{j}"),
                    ));
                }
                if *rate < 0.0 {
                    return Err(SimError::config(
                        "mixture.reactions",
                        "rates must be nonnegative",
                    ));
                }
            }
            for (k, b) in [("nu1_blend", &self.material.nu1_blend),
                           ("nu2_blend", &self.material.nu2_blend)] {
                if !b.is_empty() && b.len() != self.mixture.n {
                    return Err(SimError::config(
                        format!("material.{k}"),
                        format!("need {} entries or none", self.mixture.n),
                    ));
                }
            }
        }
        if self.gravity.enabled {
            if !(self.gravity.constant > 0.0) {
                return Err(SimError::config("gravity.constant", "must be positive"));
            }
            if !(self.gravity.padding >= 2.0) {
                return Err(SimError::config("gravity.padding", "must be at least 2"));
            }
            for (i, b) in self.gravity.ext.iter().enumerate() {
                match b.kind.as_str() {
                    "plummer" | "sphere" => {}
                    other => {
                        return Err(SimError::config(
                            format!("gravity.ext[{i}].kind"),
                            format!("unknown kind `{other}` (plummer | sphere)"),
                        ))
                    }
                }
                if !(b.size > 0.0) {
                    return Err(SimError::config(
                        format!("gravity.ext[{i}].size"),
                        "softening/radius must be positive",
                    ));
                }
            }
        }
        self.step_control()?.validate()?;
        match self.stepping.scheme.as_str() {
            "upwind1" | "upwind2-minmod" => {}
            other => {
                return Err(SimError::config(
                    "stepping.scheme",
                    format!("unknown scheme `{other}`"),
                ))
            }
        }
        match self.scenario.name.as_str() {
            "uniform-sphere" | "two-layer-rt" | "mixing-box" | "tidal" => {}
            other => {
                return Err(SimError::config(
                    "scenario.name",
                    format!("unknown scenario `{other}`"),
                ))
            }
        }
        if self.scenario.name == "tidal" && self.gravity.ext.is_empty() {
            return Err(SimError::config(
                "gravity.ext",
                "the tidal scenario needs at least one external body",
            ));
        }
        Ok(())
    }

    pub fn step_control(&self) -> Result<StepControl, SimError> {
        let scheme = match self.stepping.scheme.as_str() {
            "upwind2-minmod" => AdvectionScheme::Upwind2Minmod,
            _ => AdvectionScheme::Upwind1,
        };
        Ok(StepControl {
            dt_max: self.stepping.dt_max,
            cfl: self.stepping.cfl,
            visc_factor: self.stepping.visc_factor,
            hyper_factor: self.stepping.hyper_factor,
            diff_factor: self.stepping.diff_factor,
            max_steps: self.stepping.max_steps,
            j_floor: self.stepping.j_floor,
            scheme,
            newtonian_implicit: self.stepping.newtonian_implicit,
            hyper_implicit: self.stepping.hyper_implicit,
        })
    }

    /// Stored-energy and viscosity parameters (ρ_ref comes from the
    /// scenario).
    pub fn stored_energy(&self) -> StoredEnergy {
        let m = &self.material;
        StoredEnergy {
            eps_phi: m.eps_phi,
            alpha: m.alpha,
            kappa: m.kappa,
            well: if m.preset == "double-well" {
                Some(DoubleWell {
                    amplitude: m.well_amplitude,
                    j_a: m.well_j_a,
                    j_b: m.well_j_b,
                })
            } else {
                None
            },
            chi: m.chi,
            c_star: if self.mixture.enabled {
                self.mixture.c_star.clone()
            } else {
                Vec::new()
            },
        }
    }

    pub fn viscosity(&self) -> Viscosity {
        let m = &self.material;
        Viscosity {
            nu1: m.nu1,
            nu2: m.nu2,
            q: m.q,
            blend1: m.nu1_blend.clone(),
            blend2: m.nu2_blend.clone(),
            j_exponent: m.nu_j_exponent,
        }
    }

    pub fn mixture_spec(&self) -> Option<MixtureSpec> {
        if !self.mixture.enabled {
            return None;
        }
        let n = self.mixture.n;
        let mobility = match self.mixture.mobility.as_str() {
            "maxwell-stefan" => Mobility::MaxwellStefan { m: self.mixture.m },
            _ => {
                if self.mixture.m_matrix.is_empty() {
                    let mut m = vec![0.0; n * n];
                    for i in 0..n {
                        m[i * n + i] = self.mixture.m;
                    }
                    Mobility::Constant(m)
                } else {
                    Mobility::Constant(self.mixture.m_matrix.clone())
                }
            }
        };
        let reactions = self
            .mixture
            .reactions
            .iter()
            .map(|(i, j, rate)| {
                let mut basis = vec![0.0; n];
                basis[*i] = 1.0;
                basis[*j] = -1.0;
                ReactionChannel {
                    rate: *rate,
                    basis,
                }
            })
            .collect();
        Some(MixtureSpec {
            n,
            mobility,
            reactions,
            eps_pen: self.mixture.eps_pen,
        })
    }

    pub fn external_mass(&self, box_center: [f64; 3]) -> ExternalMass {
        let bodies = self
            .gravity
            .ext
            .iter()
            .map(|b| ExternalBody {
                mass: b.mass,
                kind: match b.kind.as_str() {
                    "sphere" => BodyKind::Sphere {
                        radius: b.size,
                        taper: 0.2 * b.size,
                    },
                    _ => BodyKind::Plummer { softening: b.size },
                },
                center: box_center,
                orbit_radius: b.orbit_radius,
                angular_rate: b.angular_rate,
                phase: b.phase,
            })
            .collect();
        ExternalMass { bodies }
    }

    /// Canonical text form; `parse(dump(cfg))` reproduces `cfg`.
    pub fn dump(&self) -> String {
        let bc = |b: Boundary| match b {
            Boundary::Periodic => "periodic",
            Boundary::SlipWall => "wall",
        };
        let list = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:?}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut s = String::new();
        let g = &self.grid;
        s += &format!(
            "[grid]\ndim = {}\nnx = {}\nny = {}\nnz = {}\nlx = {:?}\nly = {:?}\nlz = {:?}\nbc_x = {}\nbc_y = {}\nbc_z = {}\n\n",
            g.dim, g.cells[0], g.cells[1], g.cells[2], g.lengths[0], g.lengths[1], g.lengths[2],
            bc(g.bc[0]), bc(g.bc[1]), bc(g.bc[2])
        );
        let m = &self.material;
        s += &format!(
            "[material]\npreset = {}\neps_phi = {:?}\nalpha = {:?}\nkappa = {:?}\nwell_amplitude = {:?}\nwell_j_a = {:?}\nwell_j_b = {:?}\nchi = {:?}\nnu1 = {:?}\nnu2 = {:?}\nq = {:?}\nnu1_blend = {}\nnu2_blend = {}\nnu_j_exponent = {:?}\nrho_heavy = {:?}\nrho_light = {:?}\n\n",
            m.preset, m.eps_phi, m.alpha, m.kappa, m.well_amplitude, m.well_j_a, m.well_j_b,
            m.chi, m.nu1, m.nu2, m.q, list(&m.nu1_blend), list(&m.nu2_blend), m.nu_j_exponent,
            m.rho_heavy, m.rho_light
        );
        let x = &self.mixture;
        let reactions = x
            .reactions
            .iter()
            .map(|(i, j, r)| format!("{i}-{j}:{r:?}"))
            .collect::<Vec<_>>()
            .join(";");
        s += &format!(
            "[mixture]\nenabled = {}\nn = {}\nmobility = {}\nm = {:?}\nm_matrix = {}\nreactions = {}\neps_pen = {:?}\nc_star = {}\n\n",
            x.enabled, x.n, x.mobility, x.m, list(&x.m_matrix), reactions, x.eps_pen, list(&x.c_star)
        );
        let gr = &self.gravity;
        let ext = gr
            .ext
            .iter()
            .map(|b| {
                format!(
                    "{},{:?},{:?},{:?},{:?},{:?}",
                    b.kind, b.mass, b.orbit_radius, b.angular_rate, b.phase, b.size
                )
            })
            .collect::<Vec<_>>()
            .join(";");
        s += &format!(
            "[gravity]\nenabled = {}\nconstant = {:?}\npadding = {:?}\next = {}\n\n",
            gr.enabled, gr.constant, gr.padding, ext
        );
        let st = &self.stepping;
        s += &format!(
            "[stepping]\ndt_max = {:?}\ncfl = {:?}\nvisc_factor = {:?}\nhyper_factor = {:?}\ndiff_factor = {:?}\nmax_steps = {}\nt_end = {:?}\nj_floor = {:?}\nscheme = {}\nnewtonian_implicit = {}\nhyper_implicit = {}\n\n",
            st.dt_max, st.cfl, st.visc_factor, st.hyper_factor, st.diff_factor, st.max_steps,
            st.t_end, st.j_floor, st.scheme, st.newtonian_implicit, st.hyper_implicit
        );
        let sc = &self.scenario;
        s += &format!(
            "[scenario]\nname = {}\nseed = {}\namplitude = {:?}\nmode = {}\ninterface = {:?}\nradius = {:?}\nflow_amplitude = {:?}\ninterface_width_cells = {:?}\n\n",
            sc.name, sc.seed, sc.amplitude, sc.mode, sc.interface, sc.radius, sc.flow_amplitude,
            sc.interface_width_cells
        );
        let o = &self.output;
        s += &format!(
            "[output]\ndir = {}\ncadence = {}\nimages = {}\ncsv = {}\n",
            o.dir, o.cadence, o.images, o.csv
        );
        s
    }
}

/// Canonical form used for round-trip comparisons.
pub fn normalize(cfg: &RunConfig) -> String {
    cfg.dump()
}
