//! Parameter and derived-quantity report printed by `validate`.

use std::fmt;

use serde::Serialize;
use soro_spt::config::Config;
use soro_spt::dynamics::{assemble_terms, AbscissaMask};
use soro_spt::kinematics::JointState;
use soro_spt::model::derived_quantities;
use soro_spt::split::{assemble_split, split_by_fraction};
use soro_spt::Result;

#[derive(Clone, Debug, Serialize)]
pub struct SectionReport {
    pub length: f64,
    pub radius: f64,
    pub density: f64,
    pub young_modulus: f64,
    pub shear_viscosity: f64,
    pub poisson_ratio: f64,
    pub area: f64,
    pub i_x: f64,
    pub i_y: f64,
    pub i_z: f64,
    pub shear_modulus: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub sections: Vec<SectionReport>,
    pub total_length: f64,
    pub microsolids_per_section: usize,
    pub water_density: f64,
    pub drag_coefficient: f64,
    pub split_fraction: f64,
    pub epsilon_at_rest: f64,
    pub core_authority: f64,
    pub rest_mass_trace: f64,
    pub warnings: Vec<String>,
}

/// Validates the configured model and runs one assembly at rest.
pub fn validation_report(config: &Config) -> Result<ValidationReport> {
    let model = config.model();
    let sections = model
        .sections()
        .iter()
        .map(|s| {
            let (area, [i_x, i_y, i_z], g, _) = derived_quantities(s);
            SectionReport {
                length: s.length,
                radius: s.radius,
                density: s.density,
                young_modulus: s.young_modulus,
                shear_viscosity: s.shear_viscosity,
                poisson_ratio: s.poisson_ratio,
                area,
                i_x,
                i_y,
                i_z,
                shear_modulus: g,
            }
        })
        .collect();
    let rest = JointState::rest(model);
    let full = assemble_terms(model, &rest, &AbscissaMask::full(model))?;
    let split = split_by_fraction(model, config.split_fraction())?;
    let terms = assemble_split(model, &rest, &split, 1)?;
    Ok(ValidationReport {
        sections,
        total_length: model.total_length(),
        microsolids_per_section: model.microsolids_per_section(),
        water_density: model.fluid().water_density,
        drag_coefficient: model.fluid().drag_coefficient,
        split_fraction: config.split_fraction(),
        epsilon_at_rest: terms.epsilon()?,
        core_authority: split.authority,
        rest_mass_trace: full.mass.trace(),
        warnings: split.warnings(),
    })
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let core = 100.0 * self.split_fraction;
        writeln!(f, "sections                 {}", self.sections.len())?;
        writeln!(f, "total_length             {} m", self.total_length)?;
        writeln!(f, "microsolids_per_section  {}", self.microsolids_per_section)?;
        writeln!(f, "water_density            {} kg/m^3", self.water_density)?;
        writeln!(f, "drag_coefficient         {}", self.drag_coefficient)?;
        writeln!(
            f,
            "split                    {}/{} (core/perturbed, %)",
            core.round(),
            (100.0 - core).round()
        )?;
        for (k, s) in self.sections.iter().enumerate() {
            writeln!(f, "section {k}")?;
            writeln!(f, "  length                 {} m", s.length)?;
            writeln!(f, "  radius                 {} m", s.radius)?;
            writeln!(f, "  density                {} kg/m^3", s.density)?;
            writeln!(f, "  young_modulus          {} Pa", s.young_modulus)?;
            writeln!(f, "  shear_viscosity        {} Pa", s.shear_viscosity)?;
            writeln!(f, "  poisson_ratio          {}", s.poisson_ratio)?;
            writeln!(f, "  A                      {:.6e} m^2", s.area)?;
            writeln!(f, "  I_x                    {:.6e} m^4", s.i_x)?;
            writeln!(f, "  I_y                    {:.6e} m^4", s.i_y)?;
            writeln!(f, "  I_z                    {:.6e} m^4", s.i_z)?;
            writeln!(f, "  G                      {:.6e} Pa", s.shear_modulus)?;
        }
        writeln!(f, "epsilon_at_rest          {:.6e}", self.epsilon_at_rest)?;
        writeln!(f, "core_authority           {:.6e}", self.core_authority)?;
        writeln!(f, "smoke_assembly           ok (trace M = {:.6e})", self.rest_mass_trace)?;
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}
