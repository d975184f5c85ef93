//! Right-hand side and output map of the five-state model.

use super::{BdmError, BdmParameters};

/// Number of model states.
pub const STATE_DIM: usize = 5;

/// Model state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BdmState {
    /// Oxidized plastoquinone pool PQ (per RCII).
    pub pq: f64,
    /// Lumen proton concentration H_L (uM).
    pub h_lumen: f64,
    /// Active quencher fraction FQ_act.
    pub fq_act: f64,
    /// Stromal ATP (uM).
    pub atp: f64,
    /// Oxidized PSI donor fraction PI_ox.
    pub pi_ox: f64,
}

impl BdmState {
    pub fn from_array(x: [f64; STATE_DIM]) -> Self {
        Self {
            pq: x[0],
            h_lumen: x[1],
            fq_act: x[2],
            atp: x[3],
            pi_ox: x[4],
        }
    }

    pub fn to_array(&self) -> [f64; STATE_DIM] {
        [self.pq, self.h_lumen, self.fq_act, self.atp, self.pi_ox]
    }

    /// Largest violation of the physical bounds, as a fraction of each
    /// bound's range. Zero for admissible states.
    pub fn bound_violation(&self, p: &BdmParameters) -> f64 {
        let below = |v: f64, lo: f64, scale: f64| ((lo - v) / scale).max(0.0);
        let above = |v: f64, hi: f64, scale: f64| ((v - hi) / scale).max(0.0);
        [
            below(self.pq, 0.0, p.pq_tot),
            above(self.pq, p.pq_tot, p.pq_tot),
            below(self.fq_act, 0.0, 1.0),
            above(self.fq_act, 1.0, 1.0),
            below(self.atp, 0.0, p.a_tot),
            above(self.atp, p.a_tot, p.a_tot),
            below(self.pi_ox, 0.0, 1.0),
            above(self.pi_ox, 1.0, 1.0),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn is_admissible(&self, p: &BdmParameters) -> bool {
        self.h_lumen > 0.0 && self.bound_violation(p) == 0.0
    }
}

/// All intermediate rates at one state, in s^-1 per RCII or uM s^-1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub rcii_closed: f64,
    pub rcii_open: f64,
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
    pub v4: f64,
    pub v5: f64,
    pub v6: f64,
    pub v7: f64,
    pub v8: f64,
    pub v_psii: f64,
    pub v_psi: f64,
}

/// Fraction of closed PSII reaction centres.
pub fn rcii_closed(x: &[f64; STATE_DIM], light: f64, p: &BdmParameters) -> f64 {
    let open_drive = (1.0 - p.fq_max * x[2]) * light + p.k1_minus * (p.pq_tot - x[0]);
    1.0 / (1.0 + p.k1_plus * x[0] / open_drive)
}

fn finite(term: &'static str, value: f64) -> Result<f64, BdmError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(BdmError::Domain { term, value })
    }
}

/// Evaluates every rate law.
pub fn rates(x: &[f64; STATE_DIM], light: f64, p: &BdmParameters) -> Result<Rates, BdmError> {
    let [x1, x2, x3, x4, x5] = *x;
    if !(x2 > 0.0) {
        return Err(BdmError::Domain {
            term: "lumen proton concentration x2 (enters (K_Q/x2)^n and (H_stroma/x2)^(14/3))",
            value: x2,
        });
    }
    let rc_cl = finite("RCII_CL", rcii_closed(x, light, p))?;
    let rc_op = 1.0 - rc_cl;
    let v1 = p.k1_plus * rc_cl * x1 - p.k1_minus * rc_op * (p.pq_tot - x1);
    let v2 = p.k2_plus * (p.pq_tot - x1) * x5 - p.k2_minus * x1 * (1.0 - x5);
    let hill = finite("(K_Q/x2)^n", (p.k_q / x2).powf(p.n_hill))?;
    let v3 = p.k3 * (1.0 - x3) / (1.0 + hill);
    let v4 = p.k4 * x3;
    let backpressure = finite("(H_stroma/x2)^(14/3)", (p.h_stroma / x2).powf(14.0 / 3.0))?;
    let v5 = finite(
        "v5",
        p.k5 * (p.a_tot - x4 - x4 / p.c_eq_p * backpressure),
    )?;
    let v6 = p.k6 * x4;
    let v7 = p.k7 * (x2 - p.h_stroma);
    let v8 = p.k8 * (p.pq_tot - x1);
    let v_psii = p.n_psii * p.sigma_ii * (1.0 - p.fq_max * x3) * rc_op * light;
    let v_psi = p.n_psi * p.sigma_i * p.l_half * light / (p.l_half + light) * (1.0 - x5);
    Ok(Rates {
        rcii_closed: rc_cl,
        rcii_open: rc_op,
        v1: finite("v1", v1)?,
        v2: finite("v2", v2)?,
        v3: finite("v3", v3)?,
        v4,
        v5,
        v6,
        v7,
        v8,
        v_psii: finite("v_PSII", v_psii)?,
        v_psi: finite("v_PSI", v_psi)?,
    })
}

/// State derivative f(x, L).
pub fn bdm_rhs(
    x: &[f64; STATE_DIM],
    light: f64,
    p: &BdmParameters,
) -> Result<[f64; STATE_DIM], BdmError> {
    let r = rates(x, light, p)?;
    Ok(rhs_from_rates(&r, p))
}

pub(crate) fn rhs_from_rates(r: &Rates, p: &BdmParameters) -> [f64; STATE_DIM] {
    let lumen_in = (r.v_psii + r.v2) / (p.n_a * p.v_l);
    let lumen_out = 14.0 / 3.0 * p.v_s / p.v_l * r.v5 + r.v7;
    [
        (r.v2 - r.v1) / 2.0 + r.v8,
        p.b_h * (lumen_in - lumen_out),
        r.v3 - r.v4,
        r.v5 - r.v6,
        r.v_psi - r.v2,
    ]
}

/// Model outputs at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BdmOutputs {
    /// Chlorophyll fluorescence yield.
    pub chlf: f64,
    /// Non-photochemical quenching.
    pub npq: f64,
    /// Oxygen evolution rate (per RCII s^-1).
    pub o2_rate: f64,
}

impl BdmOutputs {
    pub fn to_array(&self) -> [f64; 3] {
        [self.chlf, self.npq, self.o2_rate]
    }
}

/// Output map g(x, L).
pub fn bdm_outputs(
    x: &[f64; STATE_DIM],
    light: f64,
    p: &BdmParameters,
) -> Result<BdmOutputs, BdmError> {
    let quench = p.fq_max * x[2];
    if quench >= 1.0 {
        return Err(BdmError::SingularOutput { fq_product: quench });
    }
    let r = rates(x, light, p)?;
    Ok(BdmOutputs {
        chlf: (1.0 - quench) * (p.f0_over_fv + r.rcii_closed),
        npq: quench / (1.0 - quench),
        o2_rate: r.v_psii / 4.0,
    })
}

/// Fluorescence yield only; cheaper than [`bdm_outputs`].
pub fn chlf_yield(x: &[f64; STATE_DIM], light: f64, p: &BdmParameters) -> f64 {
    (1.0 - p.fq_max * x[2]) * (p.f0_over_fv + rcii_closed(x, light, p))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> BdmParameters {
        BdmParameters::table_defaults(0.25)
    }

    #[test]
    fn v8_vanishes_at_full_pool() {
        let p = params();
        let x = [p.pq_tot, 0.7, 0.4, 300.0, 0.5];
        let r = rates(&x, 250.0, &p).unwrap();
        assert_eq!(r.v8, 0.0);
    }

    #[test]
    fn v6_vanishes_without_atp() {
        let p = params();
        let x = [3.0, 0.7, 0.4, 0.0, 0.5];
        let r = rates(&x, 250.0, &p).unwrap();
        assert_eq!(r.v6, 0.0);
        let f = bdm_rhs(&x, 250.0, &p).unwrap();
        assert_eq!(f[3], r.v5);
    }

    #[test]
    fn zero_lumen_protons_is_a_domain_error() {
        let p = params();
        let err = bdm_rhs(&[3.0, 0.0, 0.4, 300.0, 0.5], 100.0, &p).unwrap_err();
        match err {
            BdmError::Domain { term, .. } => assert!(term.contains("x2")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn npq_zero_without_quencher() {
        let p = params();
        let y = bdm_outputs(&[3.0, 0.7, 0.0, 300.0, 0.5], 100.0, &p).unwrap();
        assert_eq!(y.npq, 0.0);
    }

    #[test]
    fn chlf_in_darkness_by_hand() {
        let p = params();
        let x = [2.0, 0.7, 0.0, 300.0, 0.5];
        // L = 0: RCII_CL = 1 / (1 + k1+ x1 / (k1- (PQ_tot - x1)))
        //       = 1 / (1 + 25000*2 / (2500*5)) = 1/5
        let y = bdm_outputs(&x, 0.0, &p).unwrap();
        assert!((y.chlf - (0.25 + 0.2)).abs() < 1e-15);
        assert_eq!(y.o2_rate, 0.0);
    }

    #[test]
    fn singular_npq() {
        let mut p = params();
        p.fq_max = 0.999;
        let err = bdm_outputs(&[2.0, 0.7, 1.002, 300.0, 0.5], 10.0, &p).unwrap_err();
        assert!(matches!(err, BdmError::SingularOutput { .. }));
    }

    #[test]
    fn closed_plus_open_is_one() {
        let p = params();
        for &(x1, x3, l) in &[(0.1, 0.0, 0.0), (6.9, 1.0, 2000.0), (3.5, 0.3, 100.0)] {
            let r = rates(&[x1, 0.5, x3, 200.0, 0.2], l, &p).unwrap();
            assert_eq!(r.rcii_closed + r.rcii_open, 1.0);
            assert!((0.0..=1.0).contains(&r.rcii_closed));
        }
    }
}
