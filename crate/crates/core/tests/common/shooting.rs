//! Shooting for symmetric solutions of `−u″ − (u′)² = λu + s` on `(0, 1)`,
//! `u(0) = u(1) = 0`, with constant `s`.
//!
//! Integrates from the midpoint with `u(1/2) = U`, `u′(1/2) = 0` toward `x = 0`
//! in the variable `w = e^{u−U} − e^{−U}`, which turns the quadratic gradient
//! term into `w″ = −(w + e^{−U})(λu + s)` and stays bounded for large `U`.
//! The boundary condition becomes `w(0) = 0`.

pub struct Shooter {
    pub lambda: f64,
    pub source: f64,
    /// RK4 steps over the half interval.
    pub steps: usize,
}

impl Shooter {
    pub fn new(lambda: f64, source: f64) -> Self {
        Shooter { lambda, source, steps: 4000 }
    }

    fn rhs(&self, top: f64, w: f64) -> f64 {
        let g = w + (-top).exp();
        if g <= 0.0 {
            // u has run off to −∞; freeze
            return 0.0;
        }
        let u = top + g.ln();
        -g * (self.lambda * u + self.source)
    }

    /// `w` at every step from `x = 1/2` down to `x = 0`.
    fn trajectory(&self, top: f64) -> Vec<f64> {
        let dt = 0.5 / self.steps as f64;
        let (mut w, mut dw) = (1.0 - (-top).exp(), 0.0);
        let mut out = Vec::with_capacity(self.steps + 1);
        out.push(w);
        for _ in 0..self.steps {
            let k1 = (dw, self.rhs(top, w));
            let k2 = (dw + 0.5 * dt * k1.1, self.rhs(top, w + 0.5 * dt * k1.0));
            let k3 = (dw + 0.5 * dt * k2.1, self.rhs(top, w + 0.5 * dt * k2.0));
            let k4 = (dw + dt * k3.1, self.rhs(top, w + dt * k3.0));
            w += dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            dw += dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
            out.push(w);
        }
        out
    }

    /// Boundary mismatch `w(0)` for the midpoint value `top`.
    pub fn mismatch(&self, top: f64) -> f64 {
        *self.trajectory(top).last().unwrap()
    }

    /// Midpoint values of all solutions found by scanning `top` over
    /// `±[10⁻⁴, 10^{max_exp}]` on a log grid and bisecting sign changes.
    /// Jumps where `u` ran off to `−∞` are discarded by a residual check.
    pub fn roots(&self, max_exp: f64) -> Vec<f64> {
        let per_side = 400;
        let logs: Vec<f64> = (0..per_side).map(|k| -4.0 + (max_exp + 4.0) * k as f64 / (per_side - 1) as f64).collect();
        let mut tops: Vec<f64> = logs.iter().rev().map(|e| -(10f64.powf(*e))).collect();
        tops.extend(logs.iter().map(|e| 10f64.powf(*e)));
        let values: Vec<f64> = tops.iter().map(|&t| self.mismatch(t)).collect();
        let mut roots = Vec::new();
        for k in 0..tops.len() - 1 {
            if values[k] * values[k + 1] >= 0.0 {
                continue;
            }
            let (mut a, mut b, mut fa) = (tops[k], tops[k + 1], values[k]);
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                let fm = self.mismatch(m);
                if fm * fa <= 0.0 {
                    b = m;
                } else {
                    a = m;
                    fa = fm;
                }
                if (b - a).abs() <= 1e-13 * (1.0 + a.abs()) {
                    break;
                }
            }
            let root = 0.5 * (a + b);
            if self.mismatch(root).abs() <= 1e-6 * (1.0 + (1.0 - (-root).exp()).abs()) {
                roots.push(root);
            }
        }
        roots
    }

    /// Solution profile with midpoint value `top`, sampled at the interior
    /// nodes of the uniform grid with `nodes` interior points (`nodes` odd).
    pub fn profile(&self, top: f64, nodes: usize) -> Vec<f64> {
        assert!(nodes % 2 == 1, "midpoint must be a node");
        let half = nodes.div_ceil(2);
        assert!(self.steps.is_multiple_of(half), "steps must subdivide the grid spacing");
        let stride = self.steps / half;
        let traj = self.trajectory(top);
        let u_at = |w: f64| top + (w + (-top).exp()).ln();
        // traj[stride * m] is at x = 1/2 − m h
        (1..=nodes)
            .map(|k| {
                let m = (k as isize - half as isize).unsigned_abs();
                u_at(traj[stride * m])
            })
            .collect()
    }
}
