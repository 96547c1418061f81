//! Geometry, material and fluid description of the N-section arm.

use std::f64::consts::PI;

use nalgebra::{Matrix4, Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::screw::{Pose, Screw};

pub const DEFAULT_MICROSOLIDS: usize = 41;
pub const DEFAULT_GRAVITY: [f64; 6] = [0.0, 0.0, 0.0, -9.81, 0.0, 0.0];
/// Relative round-off tolerated when an abscissa is compared with the total
/// length.
pub const ABSCISSA_SLACK: f64 = 1e-12;
pub const REST_STRAIN: [f64; 6] = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0];

/// Base-to-inertial transform of the reference arm (z-axis offset by −90°).
pub fn default_base_transform() -> Matrix4<f64> {
    Matrix4::new(
        0.0, -1.0, 0.0, 0.0, //
        1.0, 0.0, 0.0, 0.0, //
        0.0, 0.0, 1.0, 0.0, //
        0.0, 0.0, 0.0, 1.0,
    )
}

fn default_rest_strain() -> [f64; 6] {
    REST_STRAIN
}

/// One constant-strain section of the arm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectionSpec {
    /// m
    pub length: f64,
    /// m
    pub radius: f64,
    /// kg/m³
    pub density: f64,
    /// Pa
    pub young_modulus: f64,
    /// Kelvin–Voigt modulus (Pa·s with a unit time constant).
    pub shear_viscosity: f64,
    pub poisson_ratio: f64,
    #[serde(default = "default_rest_strain")]
    pub rest_strain: [f64; 6],
    /// Diagonal of the added fluid mass `ℳ_f`, per unit length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub added_mass: Option<[f64; 6]>,
}

impl SectionSpec {
    /// The reference section: E = 110 kPa, G_v = 3 kPa, r = 0.1 m,
    /// ν = 0.45, ρ = 2000 kg/m³.
    pub fn reference(length: f64) -> Self {
        SectionSpec {
            length,
            radius: 0.1,
            density: 2000.0,
            young_modulus: 110e3,
            shear_viscosity: 3e3,
            poisson_ratio: 0.45,
            rest_strain: REST_STRAIN,
            added_mass: None,
        }
    }

    fn check(&self, index: usize, problems: &mut Vec<String>) {
        let mut positive = |name: &str, v: f64| {
            if !(v > 0.0 && v.is_finite()) {
                problems.push(format!("sections[{index}].{name} must be > 0 (got {v})"));
            }
        };
        positive("length", self.length);
        positive("radius", self.radius);
        positive("density", self.density);
        positive("young_modulus", self.young_modulus);
        if !(self.shear_viscosity >= 0.0 && self.shear_viscosity.is_finite()) {
            problems.push(format!(
                "sections[{index}].shear_viscosity must be ≥ 0 (got {})",
                self.shear_viscosity
            ));
        }
        if !(0.0..0.5).contains(&self.poisson_ratio) {
            problems.push(format!(
                "sections[{index}].poisson_ratio must lie in [0, 0.5) (got {})",
                self.poisson_ratio
            ));
        }
        if !self.rest_strain.iter().all(|v| v.is_finite()) {
            problems.push(format!("sections[{index}].rest_strain must be finite"));
        }
        if let Some(m) = self.added_mass {
            if !m.iter().all(|v| *v >= 0.0 && v.is_finite()) {
                problems.push(format!("sections[{index}].added_mass entries must be ≥ 0"));
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluidSpec {
    /// kg/m³, also used as the buoyancy density.
    pub water_density: f64,
    pub drag_coefficient: f64,
}

impl Default for FluidSpec {
    fn default() -> Self {
        FluidSpec {
            water_density: 997.0,
            drag_coefficient: 0.82,
        }
    }
}

/// Cross-section quantities derived from a [`SectionSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct SectionProps {
    pub area: f64,
    /// (I_x, I_y, I_z), m⁴
    pub inertias: [f64; 3],
    pub shear_modulus: f64,
    /// `ℳ = ρ·diag(I_x, I_y, I_z, A, A, A)`
    pub screw_inertia: Matrix6<f64>,
    /// `ℳ_a = ℳ + ℳ_f`
    pub apparent_inertia: Matrix6<f64>,
    /// `Π = diag(G·I_x, E·I_y, E·I_z, E·A, G·A, G·A)`
    pub stiffness: Matrix6<f64>,
    /// `Υ = G_v·diag(I_x, I_y, I_z, A, A, A)`
    pub viscosity: Matrix6<f64>,
    /// Drag operator per unit speed, `½ρ_w C_d diag(0, 0, 0, A, 2r, 2r)`.
    pub drag: Matrix6<f64>,
    /// `1 − ρ_f/ρ`
    pub buoyancy_factor: f64,
    pub rest_strain: Vector6<f64>,
}

/// Area, second moments, shear modulus and screw inertia of a section.
pub fn derived_quantities(s: &SectionSpec) -> (f64, [f64; 3], f64, Matrix6<f64>) {
    let r2 = s.radius * s.radius;
    let area = PI * r2;
    let iy = PI * r2 * r2 / 4.0;
    let ix = 2.0 * iy;
    let shear = s.young_modulus / (2.0 * (1.0 + s.poisson_ratio));
    let inertia = Matrix6::from_diagonal(&Vector6::new(ix, iy, iy, area, area, area)) * s.density;
    (area, [ix, iy, iy], shear, inertia)
}

fn section_props(s: &SectionSpec, fluid: &FluidSpec) -> SectionProps {
    let (area, inertias, shear, screw_inertia) = derived_quantities(s);
    let [ix, iy, iz] = inertias;
    let e = s.young_modulus;
    let added = s
        .added_mass
        .map(|m| Matrix6::from_diagonal(&Vector6::from_column_slice(&m)))
        .unwrap_or_else(Matrix6::zeros);
    let half = 0.5 * fluid.water_density * fluid.drag_coefficient;
    SectionProps {
        area,
        inertias,
        shear_modulus: shear,
        screw_inertia,
        apparent_inertia: screw_inertia + added,
        stiffness: Matrix6::from_diagonal(&Vector6::new(
            shear * ix,
            e * iy,
            e * iz,
            e * area,
            shear * area,
            shear * area,
        )),
        viscosity: Matrix6::from_diagonal(&Vector6::new(ix, iy, iz, area, area, area))
            * s.shear_viscosity,
        drag: Matrix6::from_diagonal(&Vector6::new(
            0.0,
            0.0,
            0.0,
            half * area,
            half * 2.0 * s.radius,
            half * 2.0 * s.radius,
        )),
        buoyancy_factor: 1.0 - fluid.water_density / s.density,
        rest_strain: Vector6::from_column_slice(&s.rest_strain),
    }
}

/// A quadrature node: one microsolid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Node {
    /// Global abscissa X of the microsolid centre, m.
    pub abscissa: f64,
    /// Microsolid length, m.
    pub weight: f64,
    pub section: usize,
    /// Abscissa measured from the start of the section, m.
    pub local: f64,
}

/// Which physical effects a model includes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Toggles {
    pub gravity: bool,
    pub drag: bool,
    pub viscosity: bool,
    pub tip_load: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Toggles {
            gravity: true,
            drag: true,
            viscosity: true,
            tip_load: true,
        }
    }
}

impl Toggles {
    pub fn all_off() -> Self {
        Toggles {
            gravity: false,
            drag: false,
            viscosity: false,
            tip_load: false,
        }
    }
}

/// Immutable description of the arm. Construct with [`RobotModel::new`].
#[derive(Clone, Debug, PartialEq)]
pub struct RobotModel {
    sections: Vec<SectionSpec>,
    fluid: FluidSpec,
    microsolids_per_section: usize,
    base_transform: Pose,
    actuation_abscissa: f64,
    tip_load: Screw,
    gravity: Screw,
    props: Vec<SectionProps>,
    starts: Vec<f64>,
    grid: Vec<Node>,
}

impl RobotModel {
    /// Validates every field and precomputes section properties and the
    /// quadrature grid. All violations are reported together.
    pub fn new(
        sections: Vec<SectionSpec>,
        fluid: FluidSpec,
        microsolids_per_section: usize,
        base_transform: Pose,
        actuation_abscissa: f64,
        tip_load: Screw,
        gravity: Screw,
    ) -> Result<Self> {
        let mut problems = Vec::new();
        if sections.is_empty() {
            problems.push("sections must contain at least one section".to_string());
        }
        for (i, s) in sections.iter().enumerate() {
            s.check(i, &mut problems);
        }
        if !(fluid.water_density > 0.0 && fluid.water_density.is_finite()) {
            problems.push(format!(
                "fluid.water_density must be > 0 (got {})",
                fluid.water_density
            ));
        }
        if !(fluid.drag_coefficient >= 0.0 && fluid.drag_coefficient.is_finite()) {
            problems.push(format!(
                "fluid.drag_coefficient must be ≥ 0 (got {})",
                fluid.drag_coefficient
            ));
        }
        if microsolids_per_section < 2 {
            problems.push(format!(
                "microsolids_per_section must be ≥ 2 (got {microsolids_per_section})"
            ));
        }
        if let Err(e) = base_transform.validate() {
            problems.push(format!("base_transform: {e}"));
        }
        let total: f64 = sections.iter().map(|s| s.length).sum();
        if !(0.0..=total + ABSCISSA_SLACK * total).contains(&actuation_abscissa) {
            problems.push(format!(
                "actuation_abscissa must lie in [0, {total}] (got {actuation_abscissa})"
            ));
        }
        if !tip_load.is_finite() {
            problems.push("tip_load must be finite".into());
        }
        if !gravity.is_finite() {
            problems.push("gravity must be finite".into());
        }
        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }

        let actuation_abscissa = actuation_abscissa.min(total);
        let props = sections.iter().map(|s| section_props(s, &fluid)).collect();
        let mut starts = Vec::with_capacity(sections.len() + 1);
        let mut acc = 0.0;
        starts.push(0.0);
        for s in &sections {
            acc += s.length;
            starts.push(acc);
        }
        let grid = build_grid(&sections, &starts, microsolids_per_section);
        Ok(RobotModel {
            sections,
            fluid,
            microsolids_per_section,
            base_transform,
            actuation_abscissa,
            tip_load,
            gravity,
            props,
            starts,
            grid,
        })
    }

    /// `n` equal reference sections spanning `total_length`, tip load along
    /// +y of magnitude `tip_force` applied at the tip.
    pub fn reference(n: usize, total_length: f64, tip_force: f64) -> Result<Self> {
        let sections = (0..n)
            .map(|_| SectionSpec::reference(total_length / n as f64))
            .collect();
        RobotModel::new(
            sections,
            FluidSpec::default(),
            DEFAULT_MICROSOLIDS,
            Pose::from_matrix(&default_base_transform())?,
            total_length,
            Screw::from_slice(&[0.0, 0.0, 0.0, 0.0, tip_force, 0.0]),
            Screw::from_slice(&DEFAULT_GRAVITY),
        )
    }

    /// Same arm with the disabled effects zeroed out.
    pub fn with_toggles(&self, toggles: Toggles) -> Self {
        let mut sections = self.sections.clone();
        if !toggles.viscosity {
            for s in &mut sections {
                s.shear_viscosity = 0.0;
            }
        }
        let mut fluid = self.fluid.clone();
        if !toggles.drag {
            fluid.drag_coefficient = 0.0;
        }
        RobotModel::new(
            sections,
            fluid,
            self.microsolids_per_section,
            self.base_transform,
            self.actuation_abscissa,
            if toggles.tip_load { self.tip_load } else { Screw::zero() },
            if toggles.gravity { self.gravity } else { Screw::zero() },
        )
        .expect("toggling effects off keeps a valid model valid")
    }

    /// Same material and fluid, re-split into `n` equal sections over the
    /// same total length.
    pub fn with_section_count(&self, n: usize) -> Result<Self> {
        let total = self.total_length();
        let template = &self.sections[0];
        let sections = (0..n)
            .map(|_| SectionSpec {
                length: total / n as f64,
                ..template.clone()
            })
            .collect();
        RobotModel::new(
            sections,
            self.fluid.clone(),
            self.microsolids_per_section,
            self.base_transform,
            self.actuation_abscissa,
            self.tip_load,
            self.gravity,
        )
    }

    pub fn sections(&self) -> &[SectionSpec] {
        &self.sections
    }

    pub fn fluid(&self) -> &FluidSpec {
        &self.fluid
    }

    pub fn microsolids_per_section(&self) -> usize {
        self.microsolids_per_section
    }

    pub fn base_transform(&self) -> &Pose {
        &self.base_transform
    }

    pub fn actuation_abscissa(&self) -> f64 {
        self.actuation_abscissa
    }

    pub fn tip_load(&self) -> &Screw {
        &self.tip_load
    }

    pub fn gravity(&self) -> &Screw {
        &self.gravity
    }

    pub fn props(&self) -> &[SectionProps] {
        &self.props
    }

    pub fn section_count(&self) -> usize {
        self.sections.len()
    }

    /// Generalized coordinate count, 6N.
    pub fn dof(&self) -> usize {
        6 * self.sections.len()
    }

    pub fn total_length(&self) -> f64 {
        *self.starts.last().unwrap()
    }

    /// Section boundaries `X_0 = 0 < X_1 < … < X_N = L`.
    pub fn boundaries(&self) -> &[f64] {
        &self.starts
    }

    pub fn quadrature_grid(&self) -> &[Node] {
        &self.grid
    }

    /// Stacked rest strains `ξ*`.
    pub fn rest_configuration(&self) -> nalgebra::DVector<f64> {
        let mut q = nalgebra::DVector::zeros(self.dof());
        for (k, p) in self.props.iter().enumerate() {
            q.fixed_rows_mut::<6>(6 * k).copy_from(&p.rest_strain);
        }
        q
    }

    /// Section index and local abscissa of a global abscissa. Boundary points
    /// belong to the section they end.
    pub fn locate(&self, x: f64) -> Result<(usize, f64)> {
        let length = self.total_length();
        if !(0.0..=length + ABSCISSA_SLACK * length).contains(&x) {
            return Err(Error::Domain { x, length });
        }
        let n = self.sections.len();
        let mut k = 0;
        while k + 1 < n && x > self.starts[k + 1] {
            k += 1;
        }
        Ok((k, (x - self.starts[k]).clamp(0.0, self.sections[k].length)))
    }
}

/// Uniform cell-centred grid: each section is cut into equal microsolids and
/// every microsolid is represented by its centre with weight equal to its
/// length.
fn build_grid(sections: &[SectionSpec], starts: &[f64], per_section: usize) -> Vec<Node> {
    let mut grid = Vec::with_capacity(sections.len() * per_section);
    for (k, s) in sections.iter().enumerate() {
        let h = s.length / per_section as f64;
        for j in 0..per_section {
            let local = (j as f64 + 0.5) * h;
            grid.push(Node {
                abscissa: starts[k] + local,
                weight: h,
                section: k,
                local,
            });
        }
    }
    grid
}

/// Free-function form of [`RobotModel::quadrature_grid`].
pub fn quadrature_grid(m: &RobotModel) -> Vec<(f64, f64, usize)> {
    m.quadrature_grid()
        .iter()
        .map(|n| (n.abscissa, n.weight, n.section))
        .collect()
}
