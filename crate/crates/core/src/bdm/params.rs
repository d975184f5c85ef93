//! Physical constants of the Basic DREAM Model and their flat text file form.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::BdmError;

/// Rate, stoichiometry and volume constants of the five-state model.
///
/// `f0_over_fv` has no tabulated value and must always be supplied by the
/// caller, which is why there is no `Default` impl.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BdmParameters {
    pub k1_plus: f64,
    pub k1_minus: f64,
    pub k2_plus: f64,
    pub k2_minus: f64,
    pub k3: f64,
    pub k4: f64,
    pub k5: f64,
    pub k6: f64,
    pub k7: f64,
    pub k8: f64,
    #[serde(rename = "A_tot")]
    pub a_tot: f64,
    #[serde(rename = "b_H")]
    pub b_h: f64,
    #[serde(rename = "FQ_max")]
    pub fq_max: f64,
    pub n_hill: f64,
    #[serde(rename = "cEqP")]
    pub c_eq_p: f64,
    #[serde(rename = "K_Q")]
    pub k_q: f64,
    #[serde(rename = "PQ_tot")]
    pub pq_tot: f64,
    #[serde(rename = "n_PSII")]
    pub n_psii: f64,
    #[serde(rename = "n_PSI")]
    pub n_psi: f64,
    #[serde(rename = "sigma_II")]
    pub sigma_ii: f64,
    #[serde(rename = "sigma_I")]
    pub sigma_i: f64,
    #[serde(rename = "H_stroma")]
    pub h_stroma: f64,
    #[serde(rename = "V_L")]
    pub v_l: f64,
    #[serde(rename = "V_S")]
    pub v_s: f64,
    #[serde(rename = "L_half")]
    pub l_half: f64,
    #[serde(rename = "N_A")]
    pub n_a: f64,
    #[serde(rename = "F0_over_FV")]
    pub f0_over_fv: f64,
    /// Listed among the model constants but used by none of the rate laws.
    /// Carried through configuration untouched.
    #[serde(rename = "kI", default, skip_serializing_if = "Option::is_none")]
    pub k_i: Option<f64>,
}

/// Same fields as [`BdmParameters`], all optional, for partial files and
/// configuration overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BdmOverrides {
    pub k1_plus: Option<f64>,
    pub k1_minus: Option<f64>,
    pub k2_plus: Option<f64>,
    pub k2_minus: Option<f64>,
    pub k3: Option<f64>,
    pub k4: Option<f64>,
    pub k5: Option<f64>,
    pub k6: Option<f64>,
    pub k7: Option<f64>,
    pub k8: Option<f64>,
    #[serde(rename = "A_tot")]
    pub a_tot: Option<f64>,
    #[serde(rename = "b_H")]
    pub b_h: Option<f64>,
    #[serde(rename = "FQ_max")]
    pub fq_max: Option<f64>,
    pub n_hill: Option<f64>,
    #[serde(rename = "cEqP")]
    pub c_eq_p: Option<f64>,
    #[serde(rename = "K_Q")]
    pub k_q: Option<f64>,
    #[serde(rename = "PQ_tot")]
    pub pq_tot: Option<f64>,
    #[serde(rename = "n_PSII")]
    pub n_psii: Option<f64>,
    #[serde(rename = "n_PSI")]
    pub n_psi: Option<f64>,
    #[serde(rename = "sigma_II")]
    pub sigma_ii: Option<f64>,
    #[serde(rename = "sigma_I")]
    pub sigma_i: Option<f64>,
    #[serde(rename = "H_stroma")]
    pub h_stroma: Option<f64>,
    #[serde(rename = "V_L")]
    pub v_l: Option<f64>,
    #[serde(rename = "V_S")]
    pub v_s: Option<f64>,
    #[serde(rename = "L_half")]
    pub l_half: Option<f64>,
    #[serde(rename = "N_A")]
    pub n_a: Option<f64>,
    #[serde(rename = "F0_over_FV")]
    pub f0_over_fv: Option<f64>,
    #[serde(rename = "kI")]
    pub k_i: Option<f64>,
}

/// (file key, unit, description) for every field, in file order.
const FIELD_DOCS: &[(&str, &str, &str)] = &[
    ("k1_plus", "s^-1", "RCII closed (QA-) -> PQ electron transfer"),
    ("k1_minus", "s^-1", "PQH2 -> RCII open back reaction"),
    ("k2_plus", "s^-1", "PQH2 -> PI_ox"),
    ("k2_minus", "s^-1", "PI_red -> PQ"),
    ("k3", "s^-1", "quencher activation"),
    ("k4", "s^-1", "quencher deactivation"),
    ("k5", "s^-1", "ATP formation"),
    ("k6", "s^-1", "ATP consumption"),
    ("k7", "s^-1", "lumen proton leak"),
    ("k8", "s^-1", "PQH2 oxidation by plastid terminal oxidase"),
    ("A_tot", "uM", "adenylate pool (ADP + ATP)"),
    ("b_H", "-", "lumen pH buffer"),
    ("FQ_max", "-", "maximal quencher extent"),
    ("n_hill", "-", "Hill coefficient of quencher activation"),
    ("cEqP", "-", "ATP synthase equilibrium constant"),
    ("K_Q", "uM", "quencher activation constant"),
    ("PQ_tot", "per RCII", "plastoquinone pool size"),
    ("n_PSII", "-", "PSII stoichiometry"),
    ("n_PSI", "per RCII", "PSI stoichiometry"),
    ("sigma_II", "s^-1 per uE m^-2 s^-1", "PSII antenna cross section"),
    ("sigma_I", "s^-1 per uE m^-2 s^-1", "PSI antenna cross section"),
    ("H_stroma", "uM", "stromal proton concentration"),
    ("V_L", "L per RCII", "lumen volume"),
    ("V_S", "L per RCII", "stroma volume"),
    ("L_half", "uE m^-2 s^-1", "PSI half saturation"),
    ("N_A", "umol^-1", "Avogadro constant"),
    ("F0_over_FV", "-", "fluorescence baseline ratio F0/FV"),
    ("kI", "-", "unused by the rate laws"),
];

impl BdmParameters {
    /// Tabulated constants with the given fluorescence baseline ratio.
    pub fn table_defaults(f0_over_fv: f64) -> Self {
        Self {
            k1_plus: 2.5e4,
            k1_minus: 2.5e3,
            k2_plus: 100.0,
            k2_minus: 10.0,
            k3: 0.05,
            k4: 0.004,
            k5: 100.0,
            k6: 10.0,
            k7: 500.0,
            k8: 1.0,
            a_tot: 1000.0,
            b_h: 0.01,
            fq_max: 0.6,
            n_hill: 5.3,
            c_eq_p: 4.3e-8,
            k_q: 1.0,
            pq_tot: 7.0,
            n_psii: 1.0,
            n_psi: 1.0,
            sigma_ii: 1.0,
            sigma_i: 1.0,
            h_stroma: 10f64.powf(-1.8),
            v_l: 2.62e-21,
            v_s: 2.09e-20,
            l_half: 1e4,
            n_a: 6.022e17,
            f0_over_fv,
            k_i: None,
        }
    }

    /// Checks positivity and range constraints on every field.
    pub fn validate(&self) -> Result<(), BdmError> {
        let positive = [
            ("k1_plus", self.k1_plus),
            ("k1_minus", self.k1_minus),
            ("k2_plus", self.k2_plus),
            ("k2_minus", self.k2_minus),
            ("k3", self.k3),
            ("k4", self.k4),
            ("k5", self.k5),
            ("k6", self.k6),
            ("k7", self.k7),
            ("k8", self.k8),
            ("A_tot", self.a_tot),
            ("b_H", self.b_h),
            ("n_hill", self.n_hill),
            ("cEqP", self.c_eq_p),
            ("K_Q", self.k_q),
            ("PQ_tot", self.pq_tot),
            ("n_PSII", self.n_psii),
            ("n_PSI", self.n_psi),
            ("sigma_II", self.sigma_ii),
            ("sigma_I", self.sigma_i),
            ("H_stroma", self.h_stroma),
            ("V_L", self.v_l),
            ("V_S", self.v_s),
            ("L_half", self.l_half),
            ("N_A", self.n_a),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(BdmError::InvalidParameter {
                    name,
                    reason: format!("must be finite and > 0, got {value}"),
                });
            }
        }
        if !(self.fq_max > 0.0 && self.fq_max < 1.0) {
            return Err(BdmError::InvalidParameter {
                name: "FQ_max",
                reason: format!("must lie in (0, 1), got {}", self.fq_max),
            });
        }
        if !(self.f0_over_fv.is_finite() && self.f0_over_fv >= 0.0) {
            return Err(BdmError::InvalidParameter {
                name: "F0_over_FV",
                reason: format!("must be finite and >= 0, got {}", self.f0_over_fv),
            });
        }
        Ok(())
    }

    /// Applies every `Some` field of `overrides`. `F0_over_FV` may be
    /// provided here or must already be set on `self`.
    pub fn with_overrides(mut self, o: &BdmOverrides) -> Self {
        macro_rules! apply {
            ($($f:ident),*) => { $( if let Some(v) = o.$f { self.$f = v; } )* };
        }
        apply!(
            k1_plus, k1_minus, k2_plus, k2_minus, k3, k4, k5, k6, k7, k8, a_tot, b_h, fq_max,
            n_hill, c_eq_p, k_q, pq_tot, n_psii, n_psi, sigma_ii, sigma_i, h_stroma, v_l, v_s,
            l_half, n_a, f0_over_fv
        );
        if o.k_i.is_some() {
            self.k_i = o.k_i;
        }
        self
    }

    /// Builds a full parameter set from overrides, falling back to the table
    /// for everything except `F0_over_FV`, which is mandatory.
    pub fn from_overrides(o: &BdmOverrides) -> Result<Self, BdmError> {
        let f0 = o.f0_over_fv.ok_or(BdmError::MissingParameter("F0_over_FV"))?;
        let p = Self::table_defaults(f0).with_overrides(o);
        p.validate()?;
        Ok(p)
    }

    /// Parses the flat `key = value` parameter file. Missing keys take the
    /// tabulated value; `F0_over_FV` is required; unknown keys are rejected.
    pub fn from_param_str(text: &str) -> Result<Self, BdmError> {
        let o: BdmOverrides =
            toml::from_str(text).map_err(|e| BdmError::ParameterFile(e.to_string()))?;
        Self::from_overrides(&o)
    }

    pub fn load(path: &Path) -> Result<Self, BdmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BdmError::ParameterFile(format!("{}: {e}", path.display())))?;
        Self::from_param_str(&text)
    }

    /// Writes every field as `key = value  # unit, description`.
    pub fn to_param_string(&self) -> String {
        let values = [
            self.k1_plus,
            self.k1_minus,
            self.k2_plus,
            self.k2_minus,
            self.k3,
            self.k4,
            self.k5,
            self.k6,
            self.k7,
            self.k8,
            self.a_tot,
            self.b_h,
            self.fq_max,
            self.n_hill,
            self.c_eq_p,
            self.k_q,
            self.pq_tot,
            self.n_psii,
            self.n_psi,
            self.sigma_ii,
            self.sigma_i,
            self.h_stroma,
            self.v_l,
            self.v_s,
            self.l_half,
            self.n_a,
            self.f0_over_fv,
        ];
        let mut out = String::from("# BDM parameters\n");
        for ((key, unit, doc), value) in FIELD_DOCS.iter().zip(values) {
            let _ = writeln!(out, "{key} = {value:e}  # [{unit}] {doc}");
        }
        if let Some(k_i) = self.k_i {
            let (key, unit, doc) = FIELD_DOCS[FIELD_DOCS.len() - 1];
            let _ = writeln!(out, "{key} = {k_i:e}  # [{unit}] {doc}");
        }
        out
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_param_string())
    }
}
