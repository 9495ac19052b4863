//! Affine-parametric diffusion coefficients `a(x, y) = psi0 + sum_j y_j psi_j(x)`.

use serde::Deserialize;

use crate::error::{Error, Result};

/// One spatial mode `psi_j`.
#[derive(Clone, Debug, PartialEq)]
pub enum Mode {
    /// `amplitude * sin(k1 x1) sin(k2 x2)`.
    Sine { k1: u32, k2: u32, amplitude: f64 },
    /// `value` on the closed rectangle `[x0, x1] x [y0, y1]`, zero elsewhere.
    /// Has no bounded gradient, so only the solve paths accept it.
    Indicator { rect: [f64; 4], value: f64 },
}

impl Mode {
    fn sup_norm(&self) -> f64 {
        match *self {
            Mode::Sine { amplitude, .. } => amplitude.abs(),
            Mode::Indicator { value, .. } => value.abs(),
        }
    }

    fn w1inf_norm(&self) -> Option<f64> {
        match *self {
            Mode::Sine { k1, k2, amplitude } => Some(amplitude.abs() * f64::from(k1.max(k2).max(1))),
            Mode::Indicator { .. } => None,
        }
    }
}

/// Reusable scratch space for [`AffineCoefficient::modes_at`].
#[derive(Clone, Debug, Default)]
pub struct ModeBuffer {
    pub values: Vec<f64>,
    pub gradients: Vec<[f64; 2]>,
    sin1: Vec<f64>,
    cos1: Vec<f64>,
    sin2: Vec<f64>,
    cos2: Vec<f64>,
}

fn fill_trig(x: f64, kmax: usize, s: &mut Vec<f64>, c: &mut Vec<f64>) {
    s.clear();
    c.clear();
    s.push(0.0);
    c.push(1.0);
    if kmax == 0 {
        return;
    }
    let (sx, cx) = x.sin_cos();
    s.push(sx);
    c.push(cx);
    for k in 2..=kmax {
        // angle addition: sin((k-1)x + x), cos((k-1)x + x)
        let (sp, cp) = (s[k - 1], c[k - 1]);
        s.push(sp * cx + cp * sx);
        c.push(cp * cx - sp * sx);
    }
}

#[derive(Clone, Debug)]
pub struct AffineCoefficient {
    psi0: f64,
    modes: Vec<Mode>,
    kappa: f64,
    b: Vec<f64>,
    bprime: Option<Vec<f64>>,
    kmax: usize,
}

impl AffineCoefficient {
    /// Builds a coefficient with constant mean field `psi0`.
    ///
    /// Requires `psi0 > kappa > 0` and `sum_j b_j < 2`, where
    /// `b_j = ||psi_j||_inf / kappa`.
    pub fn new(psi0: f64, modes: Vec<Mode>, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0) || !(psi0 > kappa) {
            return Err(Error::InvalidCoefficient(format!("need psi0 > kappa > 0, got psi0 = {psi0}, kappa = {kappa}")));
        }
        for m in &modes {
            let ok = match *m {
                Mode::Sine { k1, k2, amplitude } => k1 > 0 && k2 > 0 && amplitude.is_finite(),
                Mode::Indicator { rect, value } => value.is_finite() && rect[0] < rect[1] && rect[2] < rect[3],
            };
            if !ok {
                return Err(Error::InvalidCoefficient(format!("bad mode {m:?}")));
            }
        }
        let b: Vec<f64> = modes.iter().map(|m| m.sup_norm() / kappa).collect();
        let total: f64 = b.iter().sum();
        if total >= 2.0 {
            return Err(Error::InvalidCoefficient(format!("sum of b_j is {total}, must be below 2")));
        }
        let bprime = modes.iter().map(Mode::w1inf_norm).collect::<Option<Vec<_>>>();
        let kmax = modes
            .iter()
            .map(|m| match *m {
                Mode::Sine { k1, k2, .. } => k1.max(k2) as usize,
                Mode::Indicator { .. } => 0,
            })
            .max()
            .unwrap_or(0);
        Ok(Self { psi0, modes, kappa, b, bprime, kmax })
    }

    /// The first `s` wave-number pairs of N^2 ordered by `k1^2 + k2^2`, ties
    /// broken lexicographically.
    pub fn sine_wave_numbers(s: usize) -> Vec<(u32, u32)> {
        let mut r = 1u32;
        loop {
            let mut pairs: Vec<(u32, u32)> = (1..=r).flat_map(|a| (1..=r).map(move |b| (a, b))).collect();
            pairs.sort_by_key(|&(a, b)| (a * a + b * b, a, b));
            // every pair with key <= r^2 + 1 is enumerated once a, b <= r
            let complete = pairs.iter().take_while(|&&(a, b)| a * a + b * b <= r * r + 1).count();
            if complete >= s {
                pairs.truncate(s);
                return pairs;
            }
            r *= 2;
        }
    }

    /// `a = psi0 + sum_j y_j sin(k_j1 x1) sin(k_j2 x2) / (k_j1^2 + k_j2^2)^2`
    /// with the first `s` wave-number pairs.
    pub fn sine_modes(s: usize, psi0: f64, kappa: f64) -> Result<Self> {
        let modes = Self::sine_wave_numbers(s)
            .into_iter()
            .map(|(k1, k2)| {
                let key = f64::from(k1 * k1 + k2 * k2);
                Mode::Sine { k1, k2, amplitude: 1.0 / (key * key) }
            })
            .collect();
        Self::new(psi0, modes, kappa)
    }

    /// The 16-mode benchmark coefficient with mean 1/2 and `kappa = 1/4`.
    pub fn sine_modes_16() -> Self {
        Self::sine_modes(16, 0.5, 0.25).expect("benchmark coefficient is valid")
    }

    pub fn dim(&self) -> usize {
        self.modes.len()
    }

    pub fn psi0(&self) -> f64 {
        self.psi0
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// `b_j = ||psi_j||_inf / kappa`.
    pub fn b(&self) -> &[f64] {
        &self.b
    }

    /// `b'_j = ||psi_j||_{W^{1,inf}}`, absent when some mode is not Lipschitz.
    pub fn bprime(&self) -> Option<&[f64]> {
        self.bprime.as_deref()
    }

    pub fn has_gradient(&self) -> bool {
        self.bprime.is_some()
    }

    /// Checks that `y` lies in `[-1/2, 1/2]^s`.
    pub fn check_parameter(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: y.len() });
        }
        match y.iter().position(|v| !(v.abs() <= 0.5)) {
            Some(index) => Err(Error::ParameterOutOfRange { index, value: y[index] }),
            None => Ok(()),
        }
    }

    pub fn buffer(&self) -> ModeBuffer {
        ModeBuffer::default()
    }

    /// Evaluates all modes (and, if `with_gradient`, their gradients) at `x`
    /// into `buf.values` / `buf.gradients`.
    pub fn modes_at(&self, x: [f64; 2], with_gradient: bool, buf: &mut ModeBuffer) {
        fill_trig(x[0], self.kmax, &mut buf.sin1, &mut buf.cos1);
        fill_trig(x[1], self.kmax, &mut buf.sin2, &mut buf.cos2);
        buf.values.clear();
        buf.gradients.clear();
        for m in &self.modes {
            match *m {
                Mode::Sine { k1, k2, amplitude } => {
                    let (k1, k2) = (k1 as usize, k2 as usize);
                    let (s1, s2) = (buf.sin1[k1], buf.sin2[k2]);
                    buf.values.push(amplitude * s1 * s2);
                    if with_gradient {
                        buf.gradients.push([
                            amplitude * k1 as f64 * buf.cos1[k1] * s2,
                            amplitude * k2 as f64 * s1 * buf.cos2[k2],
                        ]);
                    }
                }
                Mode::Indicator { rect, value } => {
                    let inside = x[0] >= rect[0] && x[0] <= rect[1] && x[1] >= rect[2] && x[1] <= rect[3];
                    buf.values.push(if inside { value } else { 0.0 });
                    if with_gradient {
                        buf.gradients.push([0.0, 0.0]);
                    }
                }
            }
        }
    }

    /// `a(x, y)` given mode values already in `buf`.
    pub fn value_from(&self, y: &[f64], buf: &ModeBuffer) -> f64 {
        self.psi0 + y.iter().zip(&buf.values).map(|(y, v)| y * v).sum::<f64>()
    }

    /// `grad_x a(x, y)` given mode gradients already in `buf`.
    pub fn gradient_from(&self, y: &[f64], buf: &ModeBuffer) -> [f64; 2] {
        y.iter().zip(&buf.gradients).fold([0.0, 0.0], |g, (y, d)| [g[0] + y * d[0], g[1] + y * d[1]])
    }

    /// Value and spatial gradient of `a(x, y)`.
    pub fn evaluate(&self, x: [f64; 2], y: &[f64]) -> Result<(f64, [f64; 2])> {
        self.check_parameter(y)?;
        let mut buf = self.buffer();
        self.modes_at(x, true, &mut buf);
        Ok((self.value_from(y, &buf), self.gradient_from(y, &buf)))
    }
}

/// Coefficient section of a run configuration.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientSpec {
    /// Sine family with `s` modes.
    Sine {
        #[serde(default = "default_s")]
        s: usize,
        #[serde(default = "default_psi0")]
        psi0: f64,
        #[serde(default = "default_kappa")]
        kappa: f64,
    },
    /// User-supplied piecewise-constant modes, one `[x0, x1, y0, y1, value]`
    /// row per mode.
    Piecewise {
        psi0: f64,
        #[serde(default = "default_kappa")]
        kappa: f64,
        modes: Vec<[f64; 5]>,
    },
}

fn default_s() -> usize {
    16
}

fn default_psi0() -> f64 {
    0.5
}

fn default_kappa() -> f64 {
    0.25
}

impl Default for CoefficientSpec {
    fn default() -> Self {
        CoefficientSpec::Sine { s: default_s(), psi0: default_psi0(), kappa: default_kappa() }
    }
}

impl CoefficientSpec {
    pub fn build(&self) -> Result<AffineCoefficient> {
        match self {
            CoefficientSpec::Sine { s, psi0, kappa } => AffineCoefficient::sine_modes(*s, *psi0, *kappa),
            CoefficientSpec::Piecewise { psi0, kappa, modes } => AffineCoefficient::new(
                *psi0,
                modes.iter().map(|r| Mode::Indicator { rect: [r[0], r[1], r[2], r[3]], value: r[4] }).collect(),
                *kappa,
            ),
        }
    }
}
