//! Parameter update rules and learning-rate schedules: plain gradient
//! descent, Adam, adaptive z-score gradient clipping, and constant /
//! reciprocal-decay / reduce-on-plateau schedules.

use crate::error::{Error, Result};
use crate::net::NetParams;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    /// `alpha(tau) = base / (1 + tau)`; divergent integral, convergent
    /// squared integral.
    RobbinsMonro,
    /// Multiply the rate by `factor` after `patience` consecutive
    /// non-improving observations.
    Plateau,
}

/// Learning-rate schedule with the running state needed by the plateau mode.
/// The rate is non-increasing across steps for every kind.
#[derive(Debug, Clone)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub base_rate: f64,
    /// Training time advanced per step for the reciprocal decay.
    pub dtau: f64,
    pub factor: f64,
    pub patience: u32,
    /// Optional linear patience decay per trigger, floored at 10.
    pub patience_decay: Option<u32>,
    /// Relative improvement needed to reset patience: a monitored value
    /// counts as an improvement only when below `best * (1 - threshold)`.
    pub threshold: f64,
    triggers: u32,
    best: f64,
    since_best: u32,
}

impl Schedule {
    pub fn constant(base_rate: f64) -> Self {
        Self::new(ScheduleKind::Constant, base_rate, 1.0)
    }

    pub fn robbins_monro(base_rate: f64, dtau: f64) -> Self {
        Self::new(ScheduleKind::RobbinsMonro, base_rate, dtau)
    }

    pub fn plateau(base_rate: f64, factor: f64, patience: u32) -> Self {
        let mut s = Self::new(ScheduleKind::Plateau, base_rate, 1.0);
        s.factor = factor;
        s.patience = patience;
        s
    }

    fn new(kind: ScheduleKind, base_rate: f64, dtau: f64) -> Self {
        Self {
            kind,
            base_rate,
            dtau,
            factor: 0.95,
            patience: 100,
            patience_decay: None,
            threshold: 1e-4,
            triggers: 0,
            best: f64::INFINITY,
            since_best: 0,
        }
    }

    fn current_patience(&self) -> u32 {
        match self.patience_decay {
            None => self.patience,
            Some(d) => self.patience.saturating_sub(d * self.triggers).max(10),
        }
    }

    /// Unscaled rate at a given step count.
    pub fn rate_at(&self, step: u64) -> f64 {
        match self.kind {
            ScheduleKind::Constant => self.base_rate,
            ScheduleKind::RobbinsMonro => self.base_rate / (1.0 + step as f64 * self.dtau),
            ScheduleKind::Plateau => self.base_rate * self.factor.powi(self.triggers as i32),
        }
    }

    /// Feed the monitored value (plateau mode only; no-op otherwise).
    pub fn observe(&mut self, monitored: f64) {
        if self.kind != ScheduleKind::Plateau {
            return;
        }
        if monitored < self.best * (1.0 - self.threshold) {
            self.best = monitored;
            self.since_best = 0;
        } else {
            self.since_best += 1;
            if self.since_best >= self.current_patience() {
                self.triggers += 1;
                self.since_best = 0;
            }
        }
    }

    pub fn triggers(&self) -> u32 {
        self.triggers
    }

    /// Closed-form `int_a^b alpha(tau) dtau` for the non-adaptive kinds.
    pub fn integral_alpha(&self, tau_a: f64, tau_b: f64) -> f64 {
        match self.kind {
            ScheduleKind::Constant => self.base_rate * (tau_b - tau_a),
            ScheduleKind::RobbinsMonro => self.base_rate * ((1.0 + tau_b) / (1.0 + tau_a)).ln(),
            ScheduleKind::Plateau => f64::NAN,
        }
    }
}

/// Width-scaled rate `alpha * N^{2 beta - 1}`: with `beta > 1/2` the factor
/// amplifies the nominal rate as the network grows.
pub fn scaled_rate(sched: &Schedule, n: usize, beta: f64, step: u64) -> f64 {
    sched.rate_at(step) * (n as f64).powf(2.0 * beta - 1.0)
}

/// How clipped gradient norms feed the running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipFeed {
    PostClip,
    PreClip,
}

/// Adaptive gradient-norm clipping: exponential moving statistics of the
/// gradient norm and a z-score threshold. During warmup the gradient passes
/// through while plain mean/variance accumulate; afterwards a norm whose
/// z-score exceeds the threshold is rescaled to `mean + threshold * std`.
#[derive(Debug, Clone)]
pub struct ZClip {
    pub smoothing: f64,
    pub z_threshold: f64,
    pub warmup: u32,
    pub feed: ClipFeed,
    count: u32,
    warmup_sum: f64,
    warmup_sumsq: f64,
    ema_mean: f64,
    ema_var: f64,
}

impl ZClip {
    pub fn new(smoothing: f64, z_threshold: f64, warmup: u32) -> Self {
        Self {
            smoothing,
            z_threshold,
            warmup,
            feed: ClipFeed::PostClip,
            count: 0,
            warmup_sum: 0.0,
            warmup_sumsq: 0.0,
            ema_mean: 0.0,
            ema_var: 0.0,
        }
    }

    /// Clip in place; returns whether clipping fired.
    pub fn clip(&mut self, grad: &mut [f64]) -> Result<bool> {
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::Numerical("non-finite gradient norm in clipper".into()));
        }
        if self.count < self.warmup {
            self.count += 1;
            self.warmup_sum += norm;
            self.warmup_sumsq += norm * norm;
            if self.count == self.warmup {
                let n = self.warmup as f64;
                self.ema_mean = self.warmup_sum / n;
                self.ema_var = (self.warmup_sumsq / n - self.ema_mean * self.ema_mean).max(0.0);
            }
            return Ok(false);
        }
        let std = self.ema_var.sqrt();
        // zero spread: any norm above the mean is an outlier by definition
        let z = if std > 0.0 {
            (norm - self.ema_mean) / std
        } else if norm > self.ema_mean {
            f64::INFINITY
        } else {
            0.0
        };
        let mut clipped = false;
        let mut fed = norm;
        if z > self.z_threshold && norm > 0.0 {
            let target = self.ema_mean + self.z_threshold * std;
            let scale = target / norm;
            for g in grad.iter_mut() {
                *g *= scale;
            }
            clipped = true;
            if self.feed == ClipFeed::PostClip {
                fed = target;
            }
        }
        let a = self.smoothing;
        let prev_mean = self.ema_mean;
        self.ema_mean = a * self.ema_mean + (1.0 - a) * fed;
        self.ema_var = a * self.ema_var + (1.0 - a) * (fed - prev_mean) * (fed - prev_mean);
        Ok(clipped)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Gd,
    Adam,
}

/// Update-rule state; exclusively owned by one training loop.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step_count: u64,
    m: Vec<f64>,
    v: Vec<f64>,
    pub zclip: Option<ZClip>,
}

impl OptimizerState {
    pub fn gd() -> Self {
        Self {
            kind: OptimizerKind::Gd,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            m: Vec::new(),
            v: Vec::new(),
            zclip: None,
        }
    }

    pub fn adam(beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            beta1,
            beta2,
            epsilon,
            ..Self::gd()
        }
    }

    pub fn with_zclip(mut self, zclip: ZClip) -> Self {
        self.zclip = Some(zclip);
        self
    }

    /// Apply the configured clipper. Pass-through when none is configured.
    pub fn clip(&mut self, grad: &mut [f64]) -> Result<bool> {
        match &mut self.zclip {
            Some(z) => z.clip(grad),
            None => Ok(false),
        }
    }

    /// One update of the flat parameter vector with the given rate.
    pub fn step(&mut self, params: &NetParams, grad: &[f64], rate: f64) -> Result<NetParams> {
        if grad.len() != params.param_count() {
            return Err(Error::Config(format!(
                "gradient length {} does not match parameter count {}",
                grad.len(),
                params.param_count()
            )));
        }
        let mut flat = params.to_flat();
        match self.kind {
            OptimizerKind::Gd => {
                for (p, g) in flat.iter_mut().zip(grad) {
                    *p -= rate * g;
                }
            }
            OptimizerKind::Adam => {
                if self.m.is_empty() {
                    self.m = vec![0.0; grad.len()];
                    self.v = vec![0.0; grad.len()];
                }
                self.step_count += 1;
                let t = self.step_count as i32;
                let bc1 = 1.0 - self.beta1.powi(t);
                let bc2 = 1.0 - self.beta2.powi(t);
                for ((p, &g), (m, v)) in flat
                    .iter_mut()
                    .zip(grad)
                    .zip(self.m.iter_mut().zip(self.v.iter_mut()))
                {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= rate * m_hat / (v_hat.sqrt() + self.epsilon);
                }
            }
        }
        params.from_flat(&flat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{init_params, Activation, InitDistribution};

    fn params(n: usize) -> NetParams {
        init_params(n, 2.0 / 3.0, Activation::Tanh, &InitDistribution::standard(1)).unwrap()
    }

    #[test]
    fn scaled_rate_examples() {
        let s = Schedule::constant(0.01);
        assert_eq!(scaled_rate(&s, 1, 2.0 / 3.0, 0), 0.01);
        let r = scaled_rate(&s, 1000, 2.0 / 3.0, 0);
        assert!((r - 0.1).abs() < 1e-12, "N=1000 rate {r}");
        let rm = Schedule::robbins_monro(0.5, 1.0);
        assert_eq!(rm.rate_at(0), 0.5);
        assert!((rm.rate_at(3) - 0.5 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn robbins_monro_conditions_via_closed_form() {
        // int_0^X 1/(1+tau) = ln(1+X) diverges; int_0^inf 1/(1+tau)^2 = 1.
        let s = Schedule::robbins_monro(1.0, 1.0);
        let mut prev = 0.0;
        for exp in 1..12 {
            let x = 10f64.powi(exp);
            let val = s.integral_alpha(0.0, x);
            assert!(val > prev + 2.0, "integral must keep growing");
            prev = val;
        }
        let sq_tail = |x: f64| 1.0 - 1.0 / (1.0 + x); // closed form of int alpha^2
        assert!(sq_tail(1e12) < 1.0 + 1e-9);
    }

    #[test]
    fn rate_is_non_increasing() {
        let mut s = Schedule::plateau(1.0, 0.95, 3);
        let mut rates = vec![s.rate_at(0)];
        for k in 0..50u64 {
            s.observe(1.0 + (k as f64 % 7.0)); // mostly non-improving
            rates.push(s.rate_at(k + 1));
        }
        for w in rates.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
        let rm = Schedule::robbins_monro(1.0, 0.1);
        for k in 0..100u64 {
            assert!(rm.rate_at(k + 1) <= rm.rate_at(k));
        }
    }

    #[test]
    fn plateau_rate_is_exact_power_of_factor() {
        let mut s = Schedule::plateau(2.0, 0.95, 4);
        s.observe(1.0); // improvement
        for _ in 0..3 {
            s.observe(2.0);
        }
        assert_eq!(s.triggers(), 0, "below patience, no trigger yet");
        s.observe(2.0);
        assert_eq!(s.triggers(), 1);
        assert_eq!(s.rate_at(0), 2.0 * 0.95);
        for _ in 0..8 {
            s.observe(3.0);
        }
        assert_eq!(s.triggers(), 3);
        assert_eq!(s.rate_at(0), 2.0 * 0.95f64.powi(3));
    }

    #[test]
    fn plateau_improvement_resets_counter() {
        let mut s = Schedule::plateau(1.0, 0.5, 3);
        s.observe(5.0);
        s.observe(6.0);
        s.observe(6.0);
        s.observe(4.0); // improvement just before the trigger
        assert_eq!(s.triggers(), 0);
    }

    #[test]
    fn zclip_constant_stream_never_clips() {
        let mut z = ZClip::new(0.98, 0.4, 25);
        let mut grad = vec![0.6, 0.8]; // norm 1
        for _ in 0..100 {
            let clipped = z.clip(&mut grad).unwrap();
            assert!(!clipped);
            assert_eq!(grad, vec![0.6, 0.8]);
        }
    }

    #[test]
    fn zclip_spike_is_clipped() {
        let mut z = ZClip::new(0.98, 0.4, 25);
        let mut unit = vec![1.0, 0.0];
        for _ in 0..30 {
            assert!(!z.clip(&mut unit).unwrap());
        }
        let mut spike = vec![100.0, 0.0];
        let clipped = z.clip(&mut spike).unwrap();
        assert!(clipped);
        let norm = (spike[0] * spike[0] + spike[1] * spike[1]).sqrt();
        assert!(norm < 2.0, "clipped norm {norm} should be near the mean");
    }

    #[test]
    fn zclip_zero_gradient_passes() {
        let mut z = ZClip::new(0.98, 0.4, 2);
        let mut g = vec![1.0];
        z.clip(&mut g).unwrap();
        z.clip(&mut g).unwrap();
        let mut zero = vec![0.0];
        assert!(!z.clip(&mut zero).unwrap());
        assert_eq!(zero, vec![0.0]);
    }

    #[test]
    fn zclip_is_idempotent_at_fixed_statistics() {
        let mut z = ZClip::new(0.98, 0.4, 5);
        let mut unit = vec![1.0];
        for _ in 0..6 {
            z.clip(&mut unit).unwrap();
        }
        let mut spike = vec![50.0];
        let mut once = z.clone();
        once.clip(&mut spike).unwrap();
        let mut again = z.clone();
        let re_clipped = again.clip(&mut spike.clone()).unwrap();
        assert!(!re_clipped, "already-clipped value must pass unchanged");
    }

    #[test]
    fn step_examples() {
        let p = params(2);
        let zeros = vec![0.0; p.param_count()];
        let mut gd = OptimizerState::gd();
        assert_eq!(gd.step(&p, &zeros, 0.1).unwrap().to_flat(), p.to_flat());
        let mut adam = OptimizerState::adam(0.9, 0.999, 1e-8);
        assert_eq!(adam.step(&p, &zeros, 0.1).unwrap().to_flat(), p.to_flat());

        let ones = vec![1.0; p.param_count()];
        let mut gd = OptimizerState::gd();
        let stepped = gd.step(&p, &ones, 0.1).unwrap().to_flat();
        for (a, b) in stepped.iter().zip(p.to_flat()) {
            assert!((a - (b - 0.1)).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_first_step_is_signed_rate() {
        let p = params(2);
        let grad: Vec<f64> = (0..p.param_count())
            .map(|i| if i % 2 == 0 { 3.0 } else { -0.5 })
            .collect();
        let mut adam = OptimizerState::adam(0.9, 0.999, 1e-8);
        let rate = 0.05;
        let stepped = adam.step(&p, &grad, rate).unwrap().to_flat();
        for ((after, before), g) in stepped.iter().zip(p.to_flat()).zip(&grad) {
            let update = after - before;
            assert!(
                (update + rate * g.signum()).abs() < 1e-6,
                "first Adam update should be -rate*sign(g), got {update}"
            );
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let p = params(2);
        let mut gd = OptimizerState::gd();
        assert!(gd.step(&p, &[1.0, 2.0], 0.1).is_err());
    }
}
