//! Discretized harmonic resonate-and-fire dynamics.
//!
//! Each state pair follows `u' = -Ω v - 2b u + x`, `v' = u`, with `u` the
//! velocity-like and `v` the position-like coordinate. The three schemes
//! differ in which `v` enters the `u` update:
//!
//! * explicit Euler: both updates read step `n-1`,
//! * IMEX: `u_n` reads `v_{n-1}`, then `v_n` reads the new `u_n`,
//! * IM: `u_n` reads `v_n`, solved in closed form through `S = 1/(1+Δt²Ω)`.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{parameter, Error, Result};
use crate::scan::{scan, Block2, BlockDiagRecurrence, Scalar, ScanConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    ExplicitEuler,
    Im,
    #[default]
    Imex,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::ExplicitEuler, Scheme::Im, Scheme::Imex];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::ExplicitEuler => "explicit_euler",
            Scheme::Im => "im",
            Scheme::Imex => "imex",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "explicit_euler" | "euler" | "explicit" => Ok(Scheme::ExplicitEuler),
            "im" | "implicit" => Ok(Scheme::Im),
            "imex" => Ok(Scheme::Imex),
            other => Err(parameter(format!("unknown scheme `{other}`"))),
        }
    }
}

/// Per-pair oscillator parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OscillatorParams {
    /// Squared angular frequency, `>= 0`.
    pub omega: Vec<f64>,
    /// Time step, `> 0`.
    pub dt: Vec<f64>,
    /// Damping `b`, `>= 0`. Only the single-neuron simulator sets this.
    pub damping: Vec<f64>,
}

impl OscillatorParams {
    pub fn new(omega: Vec<f64>, dt: Vec<f64>) -> Result<Self> {
        let damping = vec![0.0; omega.len()];
        Self::with_damping(omega, dt, damping)
    }

    pub fn with_damping(omega: Vec<f64>, dt: Vec<f64>, damping: Vec<f64>) -> Result<Self> {
        let params = Self { omega, dt, damping };
        params.validate()?;
        Ok(params)
    }

    /// A single neuron.
    pub fn single(omega: f64, dt: f64) -> Result<Self> {
        Self::new(vec![omega], vec![dt])
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.omega.len();
        if p == 0 {
            return Err(parameter("oscillator needs at least one state pair"));
        }
        if self.dt.len() != p || self.damping.len() != p {
            return Err(parameter(format!(
                "omega/dt/damping lengths differ ({p}, {}, {})",
                self.dt.len(),
                self.damping.len()
            )));
        }
        for j in 0..p {
            if !(self.omega[j] >= 0.0 && self.omega[j].is_finite()) {
                return Err(parameter(format!("omega[{j}] = {} must be >= 0", self.omega[j])));
            }
            if !(self.dt[j] > 0.0 && self.dt[j].is_finite()) {
                return Err(parameter(format!("dt[{j}] = {} must be > 0", self.dt[j])));
            }
            if !(self.damping[j] >= 0.0 && self.damping[j].is_finite()) {
                return Err(parameter(format!("damping[{j}] = {} must be >= 0", self.damping[j])));
            }
        }
        Ok(())
    }
}

/// Transition block and input gains `(c_u, c_v)` of one pair; the forcing at
/// step `n` is `(c_u d_n, c_v d_n)` for drive `d_n = (B x_n)_j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairCoefficients {
    pub block: Block2<f64>,
    pub force_u: f64,
    pub force_v: f64,
}

pub fn pair_coefficients(scheme: Scheme, omega: f64, dt: f64, damping: f64) -> PairCoefficients {
    let (w, h, b) = (omega, dt, damping);
    match scheme {
        Scheme::ExplicitEuler => PairCoefficients {
            block: Block2::new(1.0 - 2.0 * b * h, -h * w, h, 1.0),
            force_u: h,
            force_v: 0.0,
        },
        Scheme::Imex => {
            let d = 1.0 + 2.0 * b * h;
            PairCoefficients {
                block: Block2::new(1.0 / d, -h * w / d, h / d, 1.0 - h * h * w / d),
                force_u: h / d,
                force_v: h * h / d,
            }
        }
        Scheme::Im => {
            let d = 1.0 + 2.0 * b * h + h * h * w;
            let s = 1.0 / d;
            PairCoefficients {
                block: Block2::new(s, -s * h * w, s * h, (1.0 + 2.0 * b * h) * s),
                force_u: s * h,
                force_v: s * h * h,
            }
        }
    }
}

/// Partial derivatives of [`pair_coefficients`] (undamped) with respect to
/// `omega` (first) and `dt` (second).
pub fn pair_jacobian(scheme: Scheme, omega: f64, dt: f64) -> [PairCoefficients; 2] {
    let (w, h) = (omega, dt);
    let pc = |a11, a12, a21, a22, fu, fv| PairCoefficients {
        block: Block2::new(a11, a12, a21, a22),
        force_u: fu,
        force_v: fv,
    };
    match scheme {
        Scheme::ExplicitEuler => [pc(0.0, -h, 0.0, 0.0, 0.0, 0.0), pc(0.0, -w, 1.0, 0.0, 1.0, 0.0)],
        Scheme::Imex => [
            pc(0.0, -h, 0.0, -h * h, 0.0, 0.0),
            pc(0.0, -w, 1.0, -2.0 * h * w, 1.0, 2.0 * h),
        ],
        Scheme::Im => {
            let s = 1.0 / (1.0 + h * h * w);
            let ds_dw = -h * h * s * s;
            let ds_dh = -2.0 * h * w * s * s;
            [
                pc(
                    ds_dw,
                    -h * s - h * w * ds_dw,
                    h * ds_dw,
                    ds_dw,
                    h * ds_dw,
                    h * h * ds_dw,
                ),
                pc(
                    ds_dh,
                    -w * s - h * w * ds_dh,
                    s + h * ds_dh,
                    ds_dh,
                    s + h * ds_dh,
                    2.0 * h * s + h * h * ds_dh,
                ),
            ]
        }
    }
}

/// Builds `(M, F_n)` for a drive sequence `B x_n` given time-major as `L x P`.
pub fn build_recurrence<T: Scalar>(
    params: &OscillatorParams,
    scheme: Scheme,
    drive: &[T],
) -> Result<BlockDiagRecurrence<T>> {
    params.validate()?;
    let p = params.len();
    if drive.is_empty() || !drive.len().is_multiple_of(p) {
        return Err(parameter(format!(
            "drive length {} is not a positive multiple of state size {p}",
            drive.len()
        )));
    }
    let cast = |x: f64| T::from(x).expect("f64 converts to scan scalar");
    let coeffs: Vec<PairCoefficients> = (0..p)
        .map(|j| pair_coefficients(scheme, params.omega[j], params.dt[j], params.damping[j]))
        .collect();
    let blocks = coeffs
        .iter()
        .map(|c| {
            Block2::new(
                cast(c.block.a11),
                cast(c.block.a12),
                cast(c.block.a21),
                cast(c.block.a22),
            )
        })
        .collect();
    let gu: Vec<T> = coeffs.iter().map(|c| cast(c.force_u)).collect();
    let gv: Vec<T> = coeffs.iter().map(|c| cast(c.force_v)).collect();
    let fu = drive.iter().enumerate().map(|(i, &d)| gu[i % p] * d).collect();
    let fv = drive.iter().enumerate().map(|(i, &d)| gv[i % p] * d).collect();
    BlockDiagRecurrence::new(blocks, fu, fv)
}

/// Eigenvalues of a 2x2 block from its characteristic polynomial.
pub fn block_eigenvalues(block: &Block2<f64>) -> (Complex64, Complex64) {
    let half_tr = 0.5 * block.trace();
    let disc = half_tr * half_tr - block.det();
    if disc >= 0.0 {
        let r = disc.sqrt();
        (Complex64::new(half_tr + r, 0.0), Complex64::new(half_tr - r, 0.0))
    } else {
        let r = (-disc).sqrt();
        (Complex64::new(half_tr, r), Complex64::new(half_tr, -r))
    }
}

/// Closed-form eigenvalue pair per state (undamped).
///
/// IM: `s ± i Δt s √Ω` with `s = 1/(1+Δt²Ω)`. IMEX: `(2-Δt²Ω)/2 ± ½√(Δt²Ω(4-Δt²Ω))`,
/// imaginary while `Δt²Ω < 4` and requiring `Δt²Ω <= 4`. Explicit Euler:
/// `1 ± iΔt√Ω`.
pub fn eigenvalues_closed_form(params: &OscillatorParams, scheme: Scheme) -> Result<Vec<(Complex64, Complex64)>> {
    params.validate()?;
    params
        .omega
        .iter()
        .zip(&params.dt)
        .enumerate()
        .map(|(j, (&w, &h))| match scheme {
            Scheme::Im => {
                let s = 1.0 / (1.0 + h * h * w);
                let im = h * s * w.sqrt();
                Ok((Complex64::new(s, im), Complex64::new(s, -im)))
            }
            Scheme::Imex => {
                let a = h * h * w;
                if a > 4.0 {
                    return Err(Error::Precondition(format!(
                        "IMEX pair {j}: dt^2 * omega = {a} exceeds 4"
                    )));
                }
                let re = 0.5 * (2.0 - a);
                let im = 0.5 * (a * (4.0 - a)).sqrt();
                Ok((Complex64::new(re, im), Complex64::new(re, -im)))
            }
            Scheme::ExplicitEuler => {
                let im = h * w.sqrt();
                Ok((Complex64::new(1.0, im), Complex64::new(1.0, -im)))
            }
        })
        .collect()
}

/// `E|λ|^N` for IM eigenvalues with `Ω ~ U[0, Ω_max]` at a fixed step.
///
/// `N` is real so the removable singularity at `N = 2` (value
/// `ln(1+Δt²Ω_max)/(Δt²Ω_max)`) can be probed from both sides.
pub fn eigenvalue_moment(n: f64, dt: f64, omega_max: f64) -> Result<f64> {
    if !(n > 0.0 && n.is_finite()) {
        return Err(parameter(format!("moment order must be positive, got {n}")));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(parameter(format!("dt must be > 0, got {dt}")));
    }
    if !(omega_max > 0.0 && omega_max.is_finite()) {
        return Err(parameter(format!("omega_max must be > 0, got {omega_max}")));
    }
    let a = dt * dt * omega_max;
    let c = 1.0 - 0.5 * n;
    let log1pa = a.ln_1p();
    if c == 0.0 {
        return Ok(log1pa / a);
    }
    Ok((c * log1pa).exp_m1() / (a * c))
}

/// Discrete invariant of the undamped IMEX map: `u² + Ω v² - Δt Ω u v`.
pub fn imex_energy(u: f64, v: f64, omega: f64, dt: f64) -> f64 {
    u * u + omega * v * v - dt * omega * u * v
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub u: f64,
    pub v: f64,
    pub energy: f64,
}

impl TraceRow {
    /// `sqrt(u² + Ω v²)`, the continuous-time amplitude of the pair.
    pub fn amplitude(&self, omega: f64) -> f64 {
        (self.u * self.u + omega * self.v * self.v).sqrt()
    }
}

/// Response of one neuron to a unit impulse.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronTrace {
    pub scheme: Scheme,
    pub omega: f64,
    pub dt: f64,
    pub rows: Vec<TraceRow>,
}

impl NeuronTrace {
    pub fn amplitudes(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.amplitude(self.omega)).collect()
    }

    /// Successive local maxima of `|v|`.
    pub fn peak_envelope(&self) -> Vec<f64> {
        let a: Vec<f64> = self.rows.iter().map(|r| r.v.abs()).collect();
        (1..a.len().saturating_sub(1))
            .filter(|&i| a[i] > a[i - 1] && a[i] >= a[i + 1])
            .map(|i| a[i])
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,u,v,energy\n");
        for r in &self.rows {
            out.push_str(&format!("{},{:e},{:e},{:e}\n", r.step, r.u, r.v, r.energy));
        }
        out
    }
}

/// Unit impulse at step 0 into a resting neuron (zero phase), then free
/// evolution. Row `k` holds the state after update `k`.
pub fn simulate_neuron(params: &OscillatorParams, scheme: Scheme, steps: usize) -> Result<NeuronTrace> {
    if params.len() != 1 {
        return Err(parameter(format!(
            "neuron simulation takes one pair, got {}",
            params.len()
        )));
    }
    if steps == 0 {
        return Err(parameter("steps must be >= 1"));
    }
    let mut drive = vec![0.0; steps];
    drive[0] = 1.0;
    let rec = build_recurrence(params, scheme, &drive)?;
    let states = scan(&rec, &[0.0, 0.0], ScanConfig::sequential())?;
    let (omega, dt) = (params.omega[0], params.dt[0]);
    let rows = (0..steps)
        .map(|k| {
            let (u, v) = (states.u(k)[0], states.v(k)[0]);
            TraceRow {
                step: k,
                u,
                v,
                energy: imex_energy(u, v, omega, dt),
            }
        })
        .collect();
    Ok(NeuronTrace {
        scheme,
        omega,
        dt,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumRow {
    pub omega: f64,
    pub dt: f64,
    /// Numerical eigenvalue of the built block.
    pub eigenvalue: Complex64,
    /// Matching closed-form eigenvalue.
    pub closed_form: Complex64,
}

/// Eigenvalues for `samples` random pairs with `Ω, Δt ~ U(0, 1]`, two rows per sample.
pub fn spectral_sweep(scheme: Scheme, samples: usize, seed: u64) -> Result<Vec<SpectrumRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(2 * samples);
    for _ in 0..samples {
        let omega = 1.0 - rng.random::<f64>();
        let dt = 1.0 - rng.random::<f64>();
        let params = OscillatorParams::single(omega, dt)?;
        let block = pair_coefficients(scheme, omega, dt, 0.0).block;
        let (n1, n2) = block_eigenvalues(&block);
        let (c1, c2) = eigenvalues_closed_form(&params, scheme)?[0];
        // Pair by sign of the imaginary part (real pairs: by magnitude of real part).
        let (c1, c2) = if (n1 - c1).norm() <= (n1 - c2).norm() {
            (c1, c2)
        } else {
            (c2, c1)
        };
        rows.push(SpectrumRow {
            omega,
            dt,
            eigenvalue: n1,
            closed_form: c1,
        });
        rows.push(SpectrumRow {
            omega,
            dt,
            eigenvalue: n2,
            closed_form: c2,
        });
    }
    Ok(rows)
}

pub fn spectrum_csv(rows: &[SpectrumRow]) -> String {
    let mut out = String::from("omega,dt,re,im,abs\n");
    for r in rows {
        out.push_str(&format!(
            "{:e},{:e},{:e},{:e},{:e}\n",
            r.omega,
            r.dt,
            r.eigenvalue.re,
            r.eigenvalue.im,
            r.eigenvalue.norm()
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn im_block_unit_values() {
        let c = pair_coefficients(Scheme::Im, 1.0, 1.0, 0.0);
        assert_eq!(c.block, Block2::new(0.5, -0.5, 0.5, 0.5));
        assert_eq!((c.force_u, c.force_v), (0.5, 0.5));
    }

    #[test]
    fn imex_block_unit_values() {
        let c = pair_coefficients(Scheme::Imex, 1.0, 1.0, 0.0);
        assert_eq!(c.block, Block2::new(1.0, -1.0, 1.0, 0.0));
        assert_eq!((c.force_u, c.force_v), (1.0, 1.0));
    }

    #[test]
    fn zero_frequency_is_integrator() {
        for scheme in Scheme::ALL {
            let c = pair_coefficients(scheme, 0.0, 0.3, 0.0);
            assert_eq!(c.block, Block2::new(1.0, 0.0, 0.3, 1.0), "{scheme}");
        }
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(OscillatorParams::single(-1.0, 0.1).is_err());
        assert!(OscillatorParams::single(1.0, 0.0).is_err());
        assert!(OscillatorParams::with_damping(vec![1.0], vec![0.1], vec![-0.5]).is_err());
    }

    #[test]
    fn imex_precondition() {
        let p = OscillatorParams::single(5.0, 1.0).unwrap();
        assert!(matches!(
            eigenvalues_closed_form(&p, Scheme::Imex),
            Err(Error::Precondition(_))
        ));
        let p = OscillatorParams::single(4.0, 1.0).unwrap();
        let (a, b) = eigenvalues_closed_form(&p, Scheme::Imex).unwrap()[0];
        assert_eq!(a, Complex64::new(-1.0, 0.0));
        assert_eq!(b, Complex64::new(-1.0, 0.0));
    }

    #[test]
    fn moment_reference_values() {
        assert_abs_diff_eq!(
            eigenvalue_moment(1.0, 1.0, 1.0).unwrap(),
            2.0 * (2f64.sqrt() - 1.0),
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(eigenvalue_moment(2.0, 1.0, 1.0).unwrap(), 2f64.ln(), epsilon = 1e-15);
        for n in [1.0, 2.0, 3.0, 7.0] {
            assert_abs_diff_eq!(eigenvalue_moment(n, 1.0, 1e-12).unwrap(), 1.0, epsilon = 1e-9);
        }
        assert!(eigenvalue_moment(0.0, 1.0, 1.0).is_err());
        assert!(eigenvalue_moment(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let fields = |c: PairCoefficients| [c.block.a11, c.block.a12, c.block.a21, c.block.a22, c.force_u, c.force_v];
        for scheme in Scheme::ALL {
            let (w, h) = (0.63, 0.41);
            let [dw, dh] = pair_jacobian(scheme, w, h);
            let eps = 1e-6;
            for (k, (jw, jh)) in fields(dw).into_iter().zip(fields(dh)).enumerate() {
                let fw = (fields(pair_coefficients(scheme, w + eps, h, 0.0))[k]
                    - fields(pair_coefficients(scheme, w - eps, h, 0.0))[k])
                    / (2.0 * eps);
                let fh = (fields(pair_coefficients(scheme, w, h + eps, 0.0))[k]
                    - fields(pair_coefficients(scheme, w, h - eps, 0.0))[k])
                    / (2.0 * eps);
                assert_abs_diff_eq!(jw, fw, epsilon = 1e-8);
                assert_abs_diff_eq!(jh, fh, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn damping_reduces_to_undamped_at_zero() {
        for scheme in Scheme::ALL {
            let a = pair_coefficients(scheme, 0.7, 0.2, 0.0);
            let p = OscillatorParams::single(0.7, 0.2).unwrap();
            let rec = build_recurrence(&p, scheme, &[1.0]).unwrap();
            assert_eq!(rec.blocks()[0], a.block);
        }
    }

    #[test]
    fn damped_neuron_decays_under_every_scheme() {
        for scheme in Scheme::ALL {
            let p = OscillatorParams::with_damping(vec![1.0], vec![0.1], vec![0.5]).unwrap();
            let tr = simulate_neuron(&p, scheme, 400).unwrap();
            let amp = tr.amplitudes();
            assert!(amp[399] < 0.1 * amp[0], "{scheme}: {} vs {}", amp[399], amp[0]);
        }
    }

    #[test]
    fn neuron_csv_header() {
        let p = OscillatorParams::single(1.0, 0.1).unwrap();
        let csv = simulate_neuron(&p, Scheme::Imex, 3).unwrap().to_csv();
        assert!(csv.starts_with("step,u,v,energy\n"));
        assert_eq!(csv.lines().count(), 4);
    }
}
