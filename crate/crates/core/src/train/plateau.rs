//! Reduce-on-plateau learning-rate schedule.
//!
//! The rate is always `lr0 * factor^k` where `k` counts triggered
//! reductions, with the power evaluated as iterated multiplication so the
//! schedule law is bit-reproducible (`powi` may fold differently per call
//! site). Epochs spent in cooldown do not count towards patience, which
//! makes consecutive reductions at least `patience + cooldown` epochs apart.

/// `base^k` by sequential multiplication: fixed evaluation order, no
/// intrinsic lowering, so every call site agrees bit-for-bit.
pub fn pow_iter(base: f64, k: u32) -> f64 {
    let mut acc = 1.0;
    for _ in 0..k {
        acc *= base;
    }
    acc
}

#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    initial_lr: f64,
    factor: f64,
    patience: usize,
    cooldown: usize,
    /// Absolute improvement on the monitored metric required to reset patience.
    threshold: f64,
    best: f64,
    wait: usize,
    cooldown_left: usize,
    reductions: u32,
}

impl PlateauScheduler {
    pub fn new(initial_lr: f64, factor: f64, patience: usize, cooldown: usize, threshold: f64) -> Self {
        assert!(initial_lr > 0.0 && factor > 0.0 && factor < 1.0 && patience > 0);
        PlateauScheduler {
            initial_lr,
            factor,
            patience,
            cooldown,
            threshold,
            best: f64::INFINITY,
            wait: 0,
            cooldown_left: 0,
            reductions: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.initial_lr * pow_iter(self.factor, self.reductions)
    }

    pub fn reductions(&self) -> u32 {
        self.reductions
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Feeds one epoch's monitored metric (lower is better) and returns the
    /// learning rate for the next epoch. Returns `(lr, reduced)`.
    pub fn step(&mut self, metric: f64) -> (f64, bool) {
        let mut reduced = false;
        if metric < self.best - self.threshold {
            self.best = metric;
            self.wait = 0;
        } else if self.cooldown_left > 0 {
            self.cooldown_left -= 1;
            self.wait = 0;
        } else {
            self.wait += 1;
            if self.wait >= self.patience {
                self.reductions += 1;
                self.cooldown_left = self.cooldown;
                self.wait = 0;
                reduced = true;
            }
        }
        (self.lr(), reduced)
    }
}
