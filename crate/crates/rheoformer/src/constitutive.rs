//! Constitutive-model integrators for the three material models used as
//! training-data generators and verification oracles: a thixotropic
//! elasto-viscoplastic (TEVP) scalar model, the tensorial Giesekus model,
//! and the Oldroyd-B model as its zero-mobility limit.
//!
//! All integrators are fixed-step classical RK4. Inputs are uniformly
//! sampled histories; values between samples are linearly interpolated for
//! the RK4 half steps.

use crate::error::{Result, RheoError};

/// Symmetric 2x2 tensor (stress in Pa, rate tensors in 1/s). `xy == yx`
/// by construction.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SymTensor2 {
    pub xx: f64,
    pub yy: f64,
    pub xy: f64,
}

impl SymTensor2 {
    pub const ZERO: Self = Self { xx: 0.0, yy: 0.0, xy: 0.0 };

    pub fn identity() -> Self {
        Self { xx: 1.0, yy: 1.0, xy: 0.0 }
    }

    pub fn add(self, o: Self) -> Self {
        Self { xx: self.xx + o.xx, yy: self.yy + o.yy, xy: self.xy + o.xy }
    }

    pub fn sub(self, o: Self) -> Self {
        Self { xx: self.xx - o.xx, yy: self.yy - o.yy, xy: self.xy - o.xy }
    }

    pub fn scale(self, c: f64) -> Self {
        Self { xx: c * self.xx, yy: c * self.yy, xy: c * self.xy }
    }

    /// self . self for a symmetric tensor.
    pub fn squared(self) -> Self {
        Self {
            xx: self.xx * self.xx + self.xy * self.xy,
            yy: self.yy * self.yy + self.xy * self.xy,
            xy: self.xy * (self.xx + self.yy),
        }
    }

    pub fn first_normal_difference(self) -> f64 {
        self.xx - self.yy
    }

    pub fn is_finite(self) -> bool {
        self.xx.is_finite() && self.yy.is_finite() && self.xy.is_finite()
    }

    pub fn max_abs_diff(self, o: Self) -> f64 {
        (self.xx - o.xx)
            .abs()
            .max((self.yy - o.yy).abs())
            .max((self.xy - o.xy).abs())
    }
}

/// Full 2x2 velocity gradient, `L_ij = du_i/dx_j` (1/s).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VelocityGradient2 {
    pub xx: f64,
    pub xy: f64,
    pub yx: f64,
    pub yy: f64,
}

impl VelocityGradient2 {
    pub const ZERO: Self = Self { xx: 0.0, xy: 0.0, yx: 0.0, yy: 0.0 };

    pub fn simple_shear(rate: f64) -> Self {
        Self { xx: 0.0, xy: rate, yx: 0.0, yy: 0.0 }
    }

    pub fn planar_extension(rate: f64) -> Self {
        Self { xx: rate, xy: 0.0, yx: 0.0, yy: -rate }
    }

    /// Deformation-rate tensor `L + L^T`.
    pub fn rate_of_strain(self) -> SymTensor2 {
        SymTensor2 { xx: 2.0 * self.xx, yy: 2.0 * self.yy, xy: self.xy + self.yx }
    }

    /// `L . A + A . L^T` for symmetric `A`; the result is symmetric.
    pub fn stretch(self, a: SymTensor2) -> SymTensor2 {
        // M = L . A; result = M + M^T
        let m_xx = self.xx * a.xx + self.xy * a.xy;
        let m_xy = self.xx * a.xy + self.xy * a.yy;
        let m_yx = self.yx * a.xx + self.yy * a.xy;
        let m_yy = self.yx * a.xy + self.yy * a.yy;
        SymTensor2 { xx: 2.0 * m_xx, yy: 2.0 * m_yy, xy: m_xy + m_yx }
    }

    pub fn is_finite(self) -> bool {
        self.xx.is_finite() && self.xy.is_finite() && self.yx.is_finite() && self.yy.is_finite()
    }
}

/// Upper-convected rate under homogeneous flow (advective term vanishes):
/// `dA/dt - L.A - A.L^T` with `L_ij = du_i/dx_j`.
pub fn upper_convected_derivative_rhs(
    a: SymTensor2,
    da_dt: SymTensor2,
    l: VelocityGradient2,
) -> SymTensor2 {
    da_dt.sub(l.stretch(a))
}

// ---------------------------------------------------------------------------
// TEVP
// ---------------------------------------------------------------------------

/// Material constants of the TEVP model.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TevpParams {
    /// Elastic modulus (Pa).
    pub g: f64,
    /// Yield stress (Pa).
    pub sigma_y: f64,
    /// Solvent viscosity (Pa.s).
    pub eta_s: f64,
    /// Plastic viscosity (Pa.s).
    pub eta_p: f64,
    /// Structural buildup rate (1/s).
    pub k_plus: f64,
    /// Structural breakdown rate (1/s).
    pub k_minus: f64,
}

impl TevpParams {
    pub fn validate(&self) -> Result<()> {
        let pos = [self.g, self.eta_s, self.eta_p, self.k_plus, self.k_minus];
        if pos.iter().any(|&v| !(v > 0.0)) || !(self.sigma_y >= 0.0) {
            return Err(RheoError::Config(format!("invalid TEVP parameters: {self:?}")));
        }
        Ok(())
    }
}

/// Shear stress and structure parameter of the TEVP model.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TevpState {
    pub sigma12: f64,
    /// Structure parameter, clamped to [0, 1] after each integration step.
    pub lambda: f64,
}

/// Instantaneous rates (d sigma12/dt, d lambda/dt) of the coupled TEVP system.
pub fn tevp_rhs(params: &TevpParams, state: &TevpState, gamma_dot: f64) -> (f64, f64) {
    let dsigma = params.g / (params.eta_s + params.eta_p)
        * (-state.sigma12
            + params.sigma_y * state.lambda
            + (params.eta_s + params.eta_p * state.lambda) * gamma_dot);
    let dlambda = params.k_plus * (1.0 - state.lambda)
        - params.k_minus * state.lambda * gamma_dot.abs();
    (dsigma, dlambda)
}

/// Analytic fixed point of the TEVP system under constant shear rate.
pub fn tevp_steady_state(params: &TevpParams, gamma_dot: f64) -> Result<(f64, f64)> {
    let denom = params.k_plus + params.k_minus * gamma_dot.abs();
    if denom == 0.0 {
        return Err(RheoError::Config("k_plus and k_minus are both zero".into()));
    }
    let lambda_ss = params.k_plus / denom;
    let sigma_ss =
        params.sigma_y * lambda_ss + (params.eta_s + params.eta_p * lambda_ss) * gamma_dot;
    Ok((lambda_ss, sigma_ss))
}

/// RK4 integration of the TEVP system along a uniformly sampled shear-rate
/// history. Output has one state per input sample; `out[0] == init`.
pub fn integrate_tevp(
    params: &TevpParams,
    gamma_dot_series: &[f64],
    dt: f64,
    init: TevpState,
) -> Result<Vec<TevpState>> {
    params.validate()?;
    if !(dt > 0.0) {
        return Err(RheoError::Config("dt must be positive".into()));
    }
    if gamma_dot_series.iter().any(|v| !v.is_finite()) {
        return Err(RheoError::NonFinite("gamma_dot series"));
    }
    let n = gamma_dot_series.len();
    let mids = sampled_midpoints(gamma_dot_series);
    let mut out = Vec::with_capacity(n);
    let mut state = init;
    state.lambda = state.lambda.clamp(0.0, 1.0);
    out.push(state);
    for i in 1..n {
        let g0 = gamma_dot_series[i - 1];
        let g1 = gamma_dot_series[i];
        let gh = mids[i - 1];
        let f = |s: &TevpState, g: f64| tevp_rhs(params, s, g);
        let k1 = f(&state, g0);
        let s2 = TevpState { sigma12: state.sigma12 + 0.5 * dt * k1.0, lambda: state.lambda + 0.5 * dt * k1.1 };
        let k2 = f(&s2, gh);
        let s3 = TevpState { sigma12: state.sigma12 + 0.5 * dt * k2.0, lambda: state.lambda + 0.5 * dt * k2.1 };
        let k3 = f(&s3, gh);
        let s4 = TevpState { sigma12: state.sigma12 + dt * k3.0, lambda: state.lambda + dt * k3.1 };
        let k4 = f(&s4, g1);
        state.sigma12 += dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        state.lambda += dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        state.lambda = state.lambda.clamp(0.0, 1.0);
        if !state.sigma12.is_finite() || !state.lambda.is_finite() {
            return Err(RheoError::Diverged { step: i });
        }
        out.push(state);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Giesekus / Oldroyd-B
// ---------------------------------------------------------------------------

/// Material constants of the Giesekus model.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GiesekusParams {
    /// Relaxation time (s).
    pub tau1: f64,
    /// Retardation time (s), `0 <= tau2 <= tau1`.
    pub tau2: f64,
    /// Elastic modulus (Pa).
    pub g0: f64,
    /// Mobility factor, `0 <= alpha <= 0.5`.
    pub alpha: f64,
}

impl GiesekusParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau1 > 0.0)
            || !(self.tau2 >= 0.0 && self.tau2 <= self.tau1)
            || !(self.g0 > 0.0)
            || !(self.alpha >= 0.0 && self.alpha <= 0.5)
        {
            return Err(RheoError::Config(format!("invalid Giesekus parameters: {self:?}")));
        }
        Ok(())
    }
}

/// Material constants of the Oldroyd-B model (Giesekus with no mobility factor).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OldroydBParams {
    pub tau1: f64,
    pub tau2: f64,
    pub g0: f64,
}

impl OldroydBParams {
    pub fn validate(&self) -> Result<()> {
        self.as_giesekus().validate()
    }

    pub fn as_giesekus(&self) -> GiesekusParams {
        GiesekusParams { tau1: self.tau1, tau2: self.tau2, g0: self.g0, alpha: 0.0 }
    }
}

/// Time derivative of a uniformly sampled series. Fourth-order stencils
/// (five-point centered, one-sided near the ends) when enough samples are
/// available, second-order otherwise. Keeping this at fourth order is what
/// lets the sampled-input RK4 integrators reach their nominal order.
pub(crate) fn sampled_derivative(f: &[f64], dt: f64) -> Vec<f64> {
    let n = f.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    if n < 5 {
        // centered interior, one-sided ends
        for i in 1..n - 1 {
            out[i] = (f[i + 1] - f[i - 1]) / (2.0 * dt);
        }
        if n == 2 {
            out[0] = (f[1] - f[0]) / dt;
            out[1] = out[0];
        } else {
            out[0] = (-1.5 * f[0] + 2.0 * f[1] - 0.5 * f[2]) / dt;
            out[n - 1] = (1.5 * f[n - 1] - 2.0 * f[n - 2] + 0.5 * f[n - 3]) / dt;
        }
        return out;
    }
    let c = 1.0 / (12.0 * dt);
    for i in 2..n - 2 {
        out[i] = (-f[i + 2] + 8.0 * f[i + 1] - 8.0 * f[i - 1] + f[i - 2]) * c;
    }
    out[0] = (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]) * c;
    out[1] = (-3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4]) * c;
    out[n - 2] = (3.0 * f[n - 1] + 10.0 * f[n - 2] - 18.0 * f[n - 3] + 6.0 * f[n - 4] - f[n - 5]) * c;
    out[n - 1] =
        (25.0 * f[n - 1] - 48.0 * f[n - 2] + 36.0 * f[n - 3] - 16.0 * f[n - 4] + 3.0 * f[n - 5]) * c;
    out
}

/// Values of a uniformly sampled series at interval midpoints, one per
/// interval. Cubic (fourth-order) interpolation with linear fallback for
/// very short series.
pub(crate) fn sampled_midpoints(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    if n < 2 {
        return Vec::new();
    }
    let mut out = vec![0.0; n - 1];
    if n < 4 {
        for i in 0..n - 1 {
            out[i] = 0.5 * (f[i] + f[i + 1]);
        }
        return out;
    }
    for i in 0..n - 1 {
        out[i] = if i == 0 {
            0.3125 * f[0] + 0.9375 * f[1] - 0.3125 * f[2] + 0.0625 * f[3]
        } else if i == n - 2 {
            0.0625 * f[n - 4] - 0.3125 * f[n - 3] + 0.9375 * f[n - 2] + 0.3125 * f[n - 1]
        } else {
            (-f[i - 1] + 9.0 * f[i] + 9.0 * f[i + 1] - f[i + 2]) / 16.0
        };
    }
    out
}

fn map_components<T, const K: usize>(
    series: &[T],
    get: impl Fn(&T) -> [f64; K],
    make: impl Fn([f64; K]) -> T,
    transform: impl Fn(&[f64]) -> Vec<f64>,
) -> Vec<T> {
    let comps: Vec<Vec<f64>> = (0..K)
        .map(|k| {
            let col: Vec<f64> = series.iter().map(|s| get(s)[k]).collect();
            transform(&col)
        })
        .collect();
    let m = comps[0].len();
    (0..m)
        .map(|i| {
            let mut arr = [0.0; K];
            for k in 0..K {
                arr[k] = comps[k][i];
            }
            make(arr)
        })
        .collect()
}

fn sym_get(s: &SymTensor2) -> [f64; 3] {
    [s.xx, s.yy, s.xy]
}

fn sym_make(a: [f64; 3]) -> SymTensor2 {
    SymTensor2 { xx: a[0], yy: a[1], xy: a[2] }
}

fn vel_get(l: &VelocityGradient2) -> [f64; 4] {
    [l.xx, l.xy, l.yx, l.yy]
}

fn vel_make(a: [f64; 4]) -> VelocityGradient2 {
    VelocityGradient2 { xx: a[0], xy: a[1], yx: a[2], yy: a[3] }
}

fn giesekus_rhs(
    p: &GiesekusParams,
    sigma: SymTensor2,
    l: VelocityGradient2,
    gamma_dot: SymTensor2,
    dgamma_dot_dt: SymTensor2,
) -> SymTensor2 {
    // Solve the model for d sigma/dt:
    //   d sigma/dt = L.sigma + sigma.L^T
    //              + (1/tau1) [ G0 tau1 (gamma_dot + tau2 ucd(gamma_dot)) - sigma - (alpha/G0) sigma.sigma ]
    let ucd_gd = upper_convected_derivative_rhs(gamma_dot, dgamma_dot_dt, l);
    let forcing = gamma_dot.add(ucd_gd.scale(p.tau2)).scale(p.g0 * p.tau1);
    let relax = forcing
        .sub(sigma)
        .sub(sigma.squared().scale(p.alpha / p.g0))
        .scale(1.0 / p.tau1);
    l.stretch(sigma).add(relax)
}

/// RK4 integration of the Giesekus model along a uniformly sampled velocity
/// gradient history. One output tensor per input sample; `out[0] == init`.
pub fn integrate_giesekus(
    params: &GiesekusParams,
    l_series: &[VelocityGradient2],
    dt: f64,
    init: SymTensor2,
) -> Result<Vec<SymTensor2>> {
    params.validate()?;
    if !(dt > 0.0) {
        return Err(RheoError::Config("dt must be positive".into()));
    }
    if l_series.iter().any(|l| !l.is_finite()) || !init.is_finite() {
        return Err(RheoError::NonFinite("velocity gradient series"));
    }
    let n = l_series.len();
    let gd: Vec<SymTensor2> = l_series.iter().map(|l| l.rate_of_strain()).collect();
    let dgd = map_components(&gd, sym_get, sym_make, |c| sampled_derivative(c, dt));
    let l_mid = map_components(l_series, vel_get, vel_make, |c| sampled_midpoints(c).to_vec());
    let dgd_mid = map_components(&dgd, sym_get, sym_make, |c| sampled_midpoints(c).to_vec());
    let mut out = Vec::with_capacity(n);
    let mut sigma = init;
    out.push(sigma);
    for i in 1..n {
        let l0 = l_series[i - 1];
        let l1 = l_series[i];
        let lh = l_mid[i - 1];
        let d0 = dgd[i - 1];
        let d1 = dgd[i];
        let dh = dgd_mid[i - 1];
        let f = |s: SymTensor2, l: VelocityGradient2, d: SymTensor2| {
            giesekus_rhs(params, s, l, l.rate_of_strain(), d)
        };
        let k1 = f(sigma, l0, d0);
        let k2 = f(sigma.add(k1.scale(0.5 * dt)), lh, dh);
        let k3 = f(sigma.add(k2.scale(0.5 * dt)), lh, dh);
        let k4 = f(sigma.add(k3.scale(dt)), l1, d1);
        sigma = sigma.add(
            k1.add(k2.scale(2.0)).add(k3.scale(2.0)).add(k4).scale(dt / 6.0),
        );
        if !sigma.is_finite() {
            return Err(RheoError::Diverged { step: i });
        }
        out.push(sigma);
    }
    Ok(out)
}

/// RK4 integration of the Oldroyd-B model (Giesekus with `alpha = 0`).
pub fn integrate_oldroydb(
    params: &OldroydBParams,
    l_series: &[VelocityGradient2],
    dt: f64,
    init: SymTensor2,
) -> Result<Vec<SymTensor2>> {
    integrate_giesekus(&params.as_giesekus(), l_series, dt, init)
}

/// Closed-form steady state of the Oldroyd-B model in simple shear:
/// `(sigma_xy, N1)`.
pub fn oldroydb_steady_shear(p: &OldroydBParams, gamma_dot: f64) -> (f64, f64) {
    let sxy = p.g0 * p.tau1 * gamma_dot;
    let n1 = 2.0 * p.g0 * p.tau1 * (p.tau1 - p.tau2) * gamma_dot * gamma_dot;
    (sxy, n1)
}

/// Closed-form steady state of the Oldroyd-B model in planar extension with
/// `L = diag(rate, -rate)`, valid for `2 tau1 |rate| < 1`. Obtained by
/// setting the stress rate to zero and solving the diagonal components.
pub fn oldroydb_steady_extension(p: &OldroydBParams, rate: f64) -> SymTensor2 {
    let e = rate;
    let sxx = 2.0 * p.g0 * p.tau1 * e * (1.0 - 2.0 * p.tau2 * e) / (1.0 - 2.0 * p.tau1 * e);
    let syy = -2.0 * p.g0 * p.tau1 * e * (1.0 + 2.0 * p.tau2 * e) / (1.0 + 2.0 * p.tau1 * e);
    SymTensor2 { xx: sxx, yy: syy, xy: 0.0 }
}

/// Default TEVP parameter set used by the shipped example configs (not
/// sourced from any reference; chosen for a well-conditioned desk-scale
/// problem).
pub fn default_tevp_params() -> TevpParams {
    TevpParams { g: 1.0, sigma_y: 1.0, eta_s: 0.1, eta_p: 1.0, k_plus: 0.2, k_minus: 0.5 }
}
