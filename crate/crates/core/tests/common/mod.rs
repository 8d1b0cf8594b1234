#![allow(dead_code)]

//! Reference integrators kept independent of the semi-discretization code.

/// Exact solution of `ẏ = −y(t−1)` with history `y ≡ 1` on `[−1, 0]`,
/// obtained by solving interval by interval (method of steps):
/// `y(t) = Σ_{k=0}^{n} (−1)^k (t − k + 1)^k / k!` for `t ∈ [n−1, n]`.
pub fn unit_delay_decay_exact(t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    let n = t.ceil() as i32;
    let mut sum = 0.0;
    let mut fact = 1.0;
    for k in 0..=n {
        if k > 0 {
            fact *= k as f64;
        }
        sum += (-1f64).powi(k) * (t - k as f64 + 1.0).powi(k) / fact;
    }
    sum
}

/// Fixed-step RK4 for `ẏ = f(y(t), y(t−τ))` with the delayed state taken by
/// linear interpolation of the stored dense solution (or of `history` for
/// `t < 0`). `τ` must be a multiple of `dt` up to rounding.
pub struct DenseDdeIntegrator<F, H> {
    pub rhs: F,
    pub history: H,
    pub tau: f64,
    pub dt: f64,
}

impl<F, H> DenseDdeIntegrator<F, H>
where
    F: Fn(&[f64], &[f64]) -> Vec<f64>,
    H: Fn(f64) -> Vec<f64>,
{
    /// Integrates to `t_end`, returning the states at `k·dt`.
    pub fn run(&self, t_end: f64) -> Vec<Vec<f64>> {
        let steps = (t_end / self.dt).round() as usize;
        let mut out: Vec<Vec<f64>> = vec![(self.history)(0.0)];
        for i in 0..steps {
            let t = i as f64 * self.dt;
            let y = out[i].clone();
            let f = |tt: f64, yy: &[f64], sol: &Vec<Vec<f64>>| -> Vec<f64> {
                let yd = self.delayed(tt - self.tau, sol);
                (self.rhs)(yy, &yd)
            };
            let k1 = f(t, &y, &out);
            let y2: Vec<f64> = y
                .iter()
                .zip(&k1)
                .map(|(a, k)| a + 0.5 * self.dt * k)
                .collect();
            let k2 = f(t + 0.5 * self.dt, &y2, &out);
            let y3: Vec<f64> = y
                .iter()
                .zip(&k2)
                .map(|(a, k)| a + 0.5 * self.dt * k)
                .collect();
            let k3 = f(t + 0.5 * self.dt, &y3, &out);
            let y4: Vec<f64> = y.iter().zip(&k3).map(|(a, k)| a + self.dt * k).collect();
            let k4 = f(t + self.dt, &y4, &out);
            let next = (0..y.len())
                .map(|j| y[j] + self.dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]))
                .collect();
            out.push(next);
        }
        out
    }

    fn delayed(&self, t: f64, sol: &[Vec<f64>]) -> Vec<f64> {
        if t <= 0.0 {
            return (self.history)(t);
        }
        let x = t / self.dt;
        let i = x.floor() as usize;
        let w = x - i as f64;
        if i + 1 >= sol.len() {
            return sol[sol.len() - 1].clone();
        }
        sol[i]
            .iter()
            .zip(&sol[i + 1])
            .map(|(a, b)| a + w * (b - a))
            .collect()
    }
}

/// Chip width on the linear stability boundary of
/// `ẍ + 2ζẋ + x = p(x(t−τ) − x(t))` along lobe `k`, parametrized by the
/// chatter frequency `ω > 1`. Returns `(p, τ)`.
pub fn turning_lobe_point(zeta: f64, k: u32, omega: f64) -> (f64, f64) {
    let w2 = omega * omega - 1.0;
    let p = (w2 * w2 + 4.0 * zeta * zeta * omega * omega) / (2.0 * w2);
    let theta = 2.0 * k as f64 * std::f64::consts::PI - 2.0 * (w2 / (2.0 * zeta * omega)).atan();
    (p, theta / omega)
}

/// Smallest boundary chip width over all lobes at delay `tau` (D-subdivision).
pub fn turning_critical_p(zeta: f64, tau: f64) -> f64 {
    let mut best = f64::INFINITY;
    for k in 1..200u32 {
        if 2.0 * k as f64 * std::f64::consts::PI <= tau {
            continue;
        }
        // the lobe delay decreases monotonically in ω
        let (mut lo, mut hi) = (1.0 + 1e-12, 1.0);
        while turning_lobe_point(zeta, k, hi).1 > tau {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if turning_lobe_point(zeta, k, mid).1 > tau {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        best = best.min(turning_lobe_point(zeta, k, 0.5 * (lo + hi)).0);
    }
    best
}

/// Spindle speed `2π/τ` and chip width at the bottom of lobe `k`.
pub fn turning_lobe_minimum(zeta: f64, k: u32) -> (f64, f64) {
    let (mut a, mut b) = (1.0 + 1e-9, 3.0);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..300 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if turning_lobe_point(zeta, k, c).0 < turning_lobe_point(zeta, k, d).0 {
            b = d;
        } else {
            a = c;
        }
    }
    let (p, tau) = turning_lobe_point(zeta, k, 0.5 * (a + b));
    (2.0 * std::f64::consts::PI / tau, p)
}
