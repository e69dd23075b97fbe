//! Scenario files: a key/value description of geometry, material, boundary
//! regions, control points, optimizer settings, and the initial design,
//! resolved into a ready-to-run [`Model`].
//!
//! The format is TOML. Unknown keys are rejected everywhere, and an empty
//! document reports every missing section at once rather than the first.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fem::mesh::{Mesh, Side};
use crate::model::{
    DesignField, DrivenMode, MaterialParams, Model, ModelError, RegionKind, RegionSpec,
};
use crate::optimizer::{ControlPoint, DriveOpts, OptimizerParams};

/// Sections every scenario must provide.
const REQUIRED_SECTIONS: [&str; 5] = ["geometry", "mesh", "material", "region", "design"];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("missing sections: {}", .0.join(", "))]
    MissingSections(Vec<String>),
    #[error("config syntax: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    /// Domain extents in mm.
    pub lx: f64,
    pub ly: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSection {
    pub nx: usize,
    pub ny: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialSection {
    /// Solid bulk modulus in MPa.
    pub bulk: f64,
    /// Solid shear modulus in MPa.
    pub shear: f64,
    pub ramp_p: f64,
    pub e0: f64,
    pub kbar_r: f64,
    #[serde(default = "default_chi_void")]
    pub chi_void: f64,
}

fn default_chi_void() -> f64 {
    crate::material::DEFAULT_CHI_VOID
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SideName {
    Left,
    Right,
    Bottom,
    Top,
}

impl From<SideName> for Side {
    fn from(s: SideName) -> Side {
        match s {
            SideName::Left => Side::Left,
            SideName::Right => Side::Right,
            SideName::Bottom => Side::Bottom,
            SideName::Top => Side::Top,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKindName {
    Fixed,
    Driven,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrivenModeName {
    /// Constrain only the boundary average; the traction is uniform.
    Average,
    /// Tie every node to one master displacement per component.
    MasterTied,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSection {
    pub name: String,
    pub side: SideName,
    /// Absolute coordinate interval along the side.
    pub span: [f64; 2],
    pub kind: RegionKindName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<DrivenModeName>,
    /// Constrained displacement components (0 = x, 1 = y) of a driven region.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub components: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlPointSection {
    /// Boundary displacement level in mm.
    pub u_d: f64,
    /// Mismatch weight in 1/MPa^2.
    pub weight: f64,
    /// Target traction in MPa for the first constrained component.
    pub q_target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    pub rho_max: f64,
    pub k_rho: f64,
    pub interface_k: f64,
    pub interface_n: f64,
    /// Interface width scale in mm.
    pub interface_l: f64,
    /// Transient regularization length in mm.
    pub transient_l: f64,
    #[serde(default = "default_dt0")]
    pub dt0: f64,
    #[serde(default = "default_dt_max")]
    pub dt_max: f64,
    #[serde(default = "default_i_max")]
    pub i_max: usize,
}

fn default_dt0() -> f64 {
    1.0
}

fn default_dt_max() -> f64 {
    1e6
}

fn default_i_max() -> usize {
    150
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    /// Nodal design from a background density plus rectangular density
    /// patches (all densities strictly inside (0, 1)).
    Patches,
    /// Solid background with void rectangles: elementwise two-level values,
    /// or a nodal field graded linearly across `grade_width` when set.
    Rects,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityPatch {
    /// [x0, y0, x1, y1] in mm.
    pub rect: [f64; 4],
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    pub kind: DesignKind,
    /// Background density (`patches` kind).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub patch: Vec<DensityPatch>,
    /// Design value of solid material (`rects` kind).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chi_solid: Option<f64>,
    /// Design value inside the void rectangles (`rects` kind).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chi_void: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub void_rect: Vec<[f64; 4]>,
    /// Width in mm of the linear solid-void transition; omit for a sharp
    /// elementwise design.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grade_width: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
    /// Pin assembly and summation order. The implementation is already
    /// sequential and ordered, so this only records intent in the echo.
    pub deterministic: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: "out".into(),
            deterministic: false,
        }
    }
}

/// A fully parsed scenario. Serializing and re-parsing yields an equal value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub geometry: GeometrySection,
    pub mesh: MeshSection,
    pub material: MaterialSection,
    pub region: Vec<RegionSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub control_point: Vec<ControlPointSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerSection>,
    pub design: DesignSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// Parse and validate a scenario document.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let table: toml::Table = text.parse()?;
    let missing: Vec<String> = REQUIRED_SECTIONS
        .iter()
        .filter(|s| !table.contains_key(**s))
        .map(|s| s.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(ConfigError::MissingSections(missing));
    }
    let mut config: ScenarioConfig = toml::Value::Table(table).try_into()?;
    validate(&mut config)?;
    Ok(config)
}

/// Serialize a scenario; the output parses back to an equal value.
pub fn to_toml(config: &ScenarioConfig) -> String {
    toml::to_string_pretty(config).expect("scenario serializes")
}

fn validate(config: &mut ScenarioConfig) -> Result<(), ConfigError> {
    let g = &config.geometry;
    if !(g.lx > 0.0 && g.ly > 0.0 && g.lx.is_finite() && g.ly.is_finite()) {
        return Err(invalid(format!("geometry extents must be positive, got {}x{}", g.lx, g.ly)));
    }
    if config.mesh.nx == 0 || config.mesh.ny == 0 {
        return Err(invalid("mesh needs at least one element per direction"));
    }
    for r in &config.region {
        match r.kind {
            RegionKindName::Fixed => {
                if r.mode.is_some() || !r.components.is_empty() {
                    return Err(invalid(format!(
                        "region '{}' is fixed and takes no mode/components",
                        r.name
                    )));
                }
            }
            RegionKindName::Driven => {
                if r.mode.is_none() {
                    return Err(invalid(format!("driven region '{}' needs a mode", r.name)));
                }
                if r.components.is_empty() {
                    return Err(invalid(format!(
                        "driven region '{}' needs at least one component",
                        r.name
                    )));
                }
                if r.components.iter().any(|&c| c > 1) {
                    return Err(invalid(format!(
                        "region '{}': components are 0 (x) or 1 (y)",
                        r.name
                    )));
                }
            }
        }
    }
    for (k, pt) in config.control_point.iter().enumerate() {
        if !(pt.weight > 0.0) {
            return Err(invalid(format!("control point {} needs a positive weight", k + 1)));
        }
        if pt.u_d == 0.0 || !pt.u_d.is_finite() {
            return Err(invalid(format!("control point {} needs a nonzero level", k + 1)));
        }
    }
    // Levels are traversed by continuation from zero, so they must march
    // monotonically away from it.
    for w in config.control_point.windows(2) {
        if w[1].u_d.signum() != w[0].u_d.signum() || w[1].u_d.abs() <= w[0].u_d.abs() {
            return Err(invalid(
                "control point levels must move strictly away from zero in one direction",
            ));
        }
    }
    if let Some(opt) = &config.optimizer {
        if !(opt.rho_max > 0.0 && opt.rho_max < 1.0) {
            return Err(invalid("optimizer.rho_max must lie in (0, 1)"));
        }
        for (v, name) in [
            (opt.k_rho, "k_rho"),
            (opt.interface_k, "interface_k"),
            (opt.interface_n, "interface_n"),
            (opt.interface_l, "interface_l"),
            (opt.transient_l, "transient_l"),
            (opt.dt0, "dt0"),
            (opt.dt_max, "dt_max"),
        ] {
            if !(v > 0.0) {
                return Err(invalid(format!("optimizer.{name} must be positive")));
            }
        }
        if config.control_point.is_empty() {
            return Err(invalid("an optimizer section needs control points"));
        }
    }
    let d = &mut config.design;
    match d.kind {
        DesignKind::Patches => {
            if !d.void_rect.is_empty() || d.chi_solid.is_some() || d.chi_void.is_some()
                || d.grade_width.is_some()
            {
                return Err(invalid("design kind 'patches' takes rho and patch entries only"));
            }
            let rho = d.rho.ok_or_else(|| invalid("design kind 'patches' needs a background rho"))?;
            for &r in std::iter::once(&rho).chain(d.patch.iter().map(|p| &p.rho)) {
                if !(r > 0.0 && r < 1.0) {
                    return Err(invalid(format!(
                        "initial density must lie strictly inside (0, 1), got {r}"
                    )));
                }
            }
            for p in &d.patch {
                check_rect(&p.rect)?;
            }
        }
        DesignKind::Rects => {
            if d.rho.is_some() || !d.patch.is_empty() {
                return Err(invalid("design kind 'rects' takes chi levels and void_rect entries"));
            }
            d.chi_solid.get_or_insert(40.0);
            d.chi_void.get_or_insert(-40.0);
            for r in &d.void_rect {
                check_rect(r)?;
            }
            if let Some(w) = d.grade_width {
                if !(w > 0.0) {
                    return Err(invalid("design.grade_width must be positive"));
                }
            }
        }
    }
    Ok(())
}

fn check_rect(rect: &[f64; 4]) -> Result<(), ConfigError> {
    let [x0, y0, x1, y1] = *rect;
    if !(x0 < x1 && y0 < y1) || rect.iter().any(|v| !v.is_finite()) {
        return Err(invalid(format!("degenerate rectangle [{x0}, {y0}, {x1}, {y1}]")));
    }
    Ok(())
}

/// Everything needed to run: the model, the initial design, and (when
/// control points are configured) the optimizer setup.
pub struct Scenario {
    pub config: ScenarioConfig,
    pub model: Model,
    pub design: DesignField,
    pub optimizer: Option<OptimizerSetup>,
}

pub struct OptimizerSetup {
    pub params: OptimizerParams,
    pub drive: DriveOpts,
}

/// Resolve a parsed scenario into a model and initial design.
pub fn build_scenario(config: &ScenarioConfig) -> Result<Scenario, ConfigError> {
    let mesh = Mesh::new(
        config.mesh.nx,
        config.mesh.ny,
        config.geometry.lx,
        config.geometry.ly,
    )
    .map_err(ModelError::from)?;
    let m = &config.material;
    let material = MaterialParams {
        bulk: m.bulk,
        shear: m.shear,
        ramp_p: m.ramp_p,
        e0: m.e0,
        kbar_r: m.kbar_r,
        chi_void: m.chi_void,
        // The regularization scale uses the larger domain extent as its
        // characteristic length.
        length: config.geometry.lx.max(config.geometry.ly),
    };
    let regions: Vec<RegionSpec> = config
        .region
        .iter()
        .map(|r| RegionSpec {
            name: r.name.clone(),
            side: r.side.into(),
            span: r.span,
            kind: match r.kind {
                RegionKindName::Fixed => RegionKind::Fixed,
                RegionKindName::Driven => RegionKind::Driven {
                    mode: match r.mode.expect("validated") {
                        DrivenModeName::Average => DrivenMode::Average,
                        DrivenModeName::MasterTied => DrivenMode::MasterTied,
                    },
                    comps: r.components.clone(),
                },
            },
        })
        .collect();
    let model = Model::build(mesh, material, &regions)?;
    let design = build_design(&model, &config.design);
    let optimizer = match (&config.control_point[..], &config.optimizer) {
        ([], None) => None,
        (cps, Some(opt)) if !cps.is_empty() => Some(OptimizerSetup {
            params: OptimizerParams {
                control_points: cps
                    .iter()
                    .map(|p| ControlPoint {
                        u_d: p.u_d,
                        weight: p.weight,
                        q_target: p.q_target,
                    })
                    .collect(),
                rho_max: opt.rho_max,
                k_rho: opt.k_rho,
                interface_k: opt.interface_k,
                interface_n: opt.interface_n,
                interface_l: opt.interface_l,
                transient_l: opt.transient_l,
            },
            drive: DriveOpts::with_dt0(opt.dt0, opt.dt_max, opt.i_max),
        }),
        _ => {
            return Err(invalid(
                "control points and the optimizer section come together or not at all",
            ))
        }
    };
    Ok(Scenario {
        config: config.clone(),
        model,
        design,
        optimizer,
    })
}

fn logit(rho: f64) -> f64 {
    (rho / (1.0 - rho)).ln()
}

fn in_rect(x: f64, y: f64, rect: &[f64; 4], tol: f64) -> bool {
    x >= rect[0] - tol && x <= rect[2] + tol && y >= rect[1] - tol && y <= rect[3] + tol
}

/// Signed distance to a rectangle: negative inside, positive outside.
fn rect_sdf(x: f64, y: f64, rect: &[f64; 4]) -> f64 {
    let qx = (rect[0] - x).max(x - rect[2]);
    let qy = (rect[1] - y).max(y - rect[3]);
    if qx > 0.0 || qy > 0.0 {
        let ox = qx.max(0.0);
        let oy = qy.max(0.0);
        (ox * ox + oy * oy).sqrt()
    } else {
        qx.max(qy)
    }
}

fn build_design(model: &Model, d: &DesignSection) -> DesignField {
    let mesh = &model.mesh;
    let tol = 1e-9 * mesh.lx.max(mesh.ly);
    match d.kind {
        DesignKind::Patches => {
            let background = logit(d.rho.expect("validated"));
            let mut chi = vec![background; mesh.n_q4_nodes()];
            for p in &d.patch {
                let v = logit(p.rho);
                for (node, slot) in chi.iter_mut().enumerate() {
                    let (x, y) = mesh.q4_coords(node);
                    if in_rect(x, y, &p.rect, tol) {
                        *slot = v;
                    }
                }
            }
            DesignField::Nodal(chi)
        }
        DesignKind::Rects => {
            let solid = d.chi_solid.expect("validated");
            let void = d.chi_void.expect("validated");
            match d.grade_width {
                None => {
                    let chi = (0..mesh.n_elements())
                        .map(|e| {
                            let (x, y) = mesh.element_center(e);
                            if d.void_rect.iter().any(|r| in_rect(x, y, r, tol)) {
                                void
                            } else {
                                solid
                            }
                        })
                        .collect();
                    DesignField::Elementwise(chi)
                }
                Some(width) => {
                    // Solid-to-void signed distance: positive in solid, so a
                    // node at +width/2 from the interface is fully solid.
                    let half = width / 2.0;
                    let mid = 0.5 * (solid + void);
                    let amp = 0.5 * (solid - void);
                    let chi = (0..mesh.n_q4_nodes())
                        .map(|node| {
                            let (x, y) = mesh.q4_coords(node);
                            let sd = d
                                .void_rect
                                .iter()
                                .map(|r| rect_sdf(x, y, r))
                                .fold(f64::INFINITY, f64::min);
                            mid + amp * (sd / half).clamp(-1.0, 1.0)
                        })
                        .collect();
                    DesignField::Nodal(chi)
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PATH_CONTROL: &str = r#"
[geometry]
lx = 52.0
ly = 26.0

[mesh]
nx = 60
ny = 30

[material]
bulk = 1.6666666666666667
shear = 0.35714285714285715
ramp_p = 8.0
e0 = 1e-12
kbar_r = 1e-6
chi_void = -5.0

[[region]]
name = "support"
side = "left"
span = [23.4, 26.0]
kind = "fixed"

[[region]]
name = "driven"
side = "bottom"
span = [20.8, 31.2]
kind = "driven"
mode = "master_tied"
components = [0]

[[control_point]]
u_d = 5.2
weight = 1e4
q_target = 0.0

[[control_point]]
u_d = 7.8
weight = 1e3
q_target = 0.1

[optimizer]
rho_max = 0.35
k_rho = 1e-3
interface_k = 0.1
interface_n = 6.0
interface_l = 2.0
transient_l = 2.0

[design]
kind = "patches"
rho = 0.2

[[design.patch]]
rect = [11.7, 0.0, 14.3, 26.0]
rho = 1e-5
"#;

    #[test]
    fn parse_serialize_parse_is_identity() {
        let a = parse_scenario(PATH_CONTROL).unwrap();
        let text = to_toml(&a);
        let b = parse_scenario(&text).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn defaults_are_applied() {
        let c = parse_scenario(PATH_CONTROL).unwrap();
        let opt = c.optimizer.as_ref().unwrap();
        assert_eq!(opt.dt0, 1.0);
        assert_eq!(opt.dt_max, 1e6);
        assert_eq!(opt.i_max, 150);
        assert_eq!(c.output.dir, "out");
        assert!(!c.output.deterministic);
    }

    #[test]
    fn empty_document_lists_every_missing_section() {
        let err = parse_scenario("").unwrap_err();
        let msg = err.to_string();
        for section in REQUIRED_SECTIONS {
            assert!(msg.contains(section), "{msg} lacks {section}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = PATH_CONTROL.replace("[optimizer]", "[optimizer]\nstep_sizee = 1.0");
        let err = parse_scenario(&text).unwrap_err();
        assert!(err.to_string().contains("step_sizee"), "{err}");
    }

    #[test]
    fn densities_outside_unit_interval_are_rejected() {
        let text = PATH_CONTROL.replace("rho = 0.2", "rho = 1.0");
        let err = parse_scenario(&text).unwrap_err();
        assert!(err.to_string().contains("(0, 1)"), "{err}");
    }

    #[test]
    fn optimizer_without_control_points_is_rejected() {
        let head = PATH_CONTROL.split("[[control_point]]").next().unwrap();
        let tail = &PATH_CONTROL[PATH_CONTROL.find("[optimizer]").unwrap()..];
        let err = parse_scenario(&format!("{head}{tail}")).unwrap_err();
        assert!(err.to_string().contains("control points"), "{err}");
    }

    #[test]
    fn scenario_builds_model_and_design() {
        let c = parse_scenario(PATH_CONTROL).unwrap();
        let s = build_scenario(&c).unwrap();
        assert_eq!(s.model.mesh.n_elements(), 1800);
        assert_eq!(s.model.n_q(), 1);
        assert!((s.model.material.length - 52.0).abs() < 1e-14);
        let setup = s.optimizer.as_ref().unwrap();
        assert_eq!(setup.params.control_points.len(), 2);
        assert!((setup.drive.dt_min - 1e-9).abs() < 1e-24);
        let DesignField::Nodal(chi) = &s.design else {
            panic!("patches produce a nodal design")
        };
        // Background at 0.2, the stripe near x = 13 close to void.
        let probe = |x: f64, y: f64| {
            let node = (0..s.model.mesh.n_q4_nodes())
                .find(|&n| {
                    let (px, py) = s.model.mesh.q4_coords(n);
                    (px - x).abs() < 1e-9 && (py - y).abs() < 1e-9
                })
                .unwrap();
            chi[node]
        };
        assert!((probe(0.0, 0.0) - logit(0.2)).abs() < 1e-12);
        assert!((probe(13.0, 13.0) - logit(1e-5)).abs() < 1e-12);
        assert!((probe(26.0, 13.0) - logit(0.2)).abs() < 1e-12);
    }

    #[test]
    fn sharp_rects_build_elementwise_two_level_design() {
        let text = r#"
[geometry]
lx = 1.0
ly = 1.0
[mesh]
nx = 20
ny = 20
[material]
bulk = 1.0
shear = 0.46153846153846156
ramp_p = 8.0
e0 = 1e-12
kbar_r = 1e-6
[[region]]
name = "anchor"
side = "left"
span = [0.0, 1.0]
kind = "fixed"
[[region]]
name = "driven"
side = "top"
span = [0.95, 1.0]
kind = "driven"
mode = "average"
components = [1]
[design]
kind = "rects"
void_rect = [[0.1, 0.1, 1.0, 0.9]]
"#;
        let c = parse_scenario(text).unwrap();
        assert_eq!(c.design.chi_solid, Some(40.0));
        let s = build_scenario(&c).unwrap();
        let DesignField::Elementwise(chi) = &s.design else {
            panic!("sharp rects are elementwise")
        };
        let at = |x: f64, y: f64| {
            let e = (0..s.model.mesh.n_elements())
                .find(|&e| {
                    let (cx, cy) = s.model.mesh.element_center(e);
                    (cx - x).abs() < 1e-9 && (cy - y).abs() < 1e-9
                })
                .unwrap();
            chi[e]
        };
        assert_eq!(at(0.025, 0.025), 40.0);
        assert_eq!(at(0.525, 0.475), -40.0);
        assert_eq!(at(0.025, 0.525), 40.0);
        let voids = chi.iter().filter(|&&v| v < 0.0).count();
        // The C-shaped void is 18 x 16 elements at this resolution.
        assert_eq!(voids, 18 * 16);
    }

    #[test]
    fn graded_rects_interpolate_linearly_across_the_band() {
        let text = r#"
[geometry]
lx = 1.0
ly = 1.0
[mesh]
nx = 40
ny = 40
[material]
bulk = 1.0
shear = 0.46153846153846156
ramp_p = 8.0
e0 = 1e-12
kbar_r = 1e-6
[[region]]
name = "anchor"
side = "left"
span = [0.0, 1.0]
kind = "fixed"
[[region]]
name = "driven"
side = "top"
span = [0.95, 1.0]
kind = "driven"
mode = "average"
components = [1]
[design]
kind = "rects"
chi_solid = 10.0
chi_void = -10.0
void_rect = [[0.1, 0.1, 1.0, 0.9]]
grade_width = 0.05
"#;
        let s = build_scenario(&parse_scenario(text).unwrap()).unwrap();
        let DesignField::Nodal(chi) = &s.design else {
            panic!("graded rects are nodal")
        };
        let probe = |x: f64, y: f64| {
            let node = (0..s.model.mesh.n_q4_nodes())
                .find(|&n| {
                    let (px, py) = s.model.mesh.q4_coords(n);
                    (px - x).abs() < 1e-9 && (py - y).abs() < 1e-9
                })
                .unwrap();
            chi[node]
        };
        // One node spacing is half the grade width here.
        assert_eq!(probe(0.5, 0.5), -10.0); // deep void
        assert_eq!(probe(0.025, 0.5), 10.0); // solid rim
        assert!((probe(0.1, 0.5)).abs() < 1e-12); // on the interface
        assert!((probe(0.075, 0.5) - 10.0).abs() < 1e-12); // one spacing out
        assert!((probe(0.125, 0.5) + 10.0).abs() < 1e-12); // one spacing in
    }

    #[test]
    fn non_monotone_control_points_are_rejected() {
        let text = PATH_CONTROL.replace("u_d = 7.8", "u_d = 2.6");
        let err = parse_scenario(&text).unwrap_err();
        assert!(err.to_string().contains("away from zero"), "{err}");
    }
}
