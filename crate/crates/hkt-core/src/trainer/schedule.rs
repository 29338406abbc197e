use std::f64::consts::PI;

/// One-cycle learning rate: linear warmup from peak/25 to peak, then cosine
/// decay down to peak/1e4.
#[derive(Debug, Clone)]
pub struct OneCycle {
    pub peak: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl OneCycle {
    pub fn new(peak: f64, warmup_steps: usize, total_steps: usize) -> Self {
        OneCycle {
            peak,
            warmup_steps: warmup_steps.min(total_steps),
            total_steps: total_steps.max(1),
        }
    }

    pub fn lr(&self, step: usize) -> f64 {
        let start = self.peak / 25.0;
        let floor = self.peak / 1e4;
        if step < self.warmup_steps {
            let f = step as f64 / self.warmup_steps as f64;
            start + f * (self.peak - start)
        } else if step >= self.total_steps {
            floor
        } else {
            let span = (self.total_steps - self.warmup_steps).max(1);
            let f = (step - self.warmup_steps) as f64 / span as f64;
            floor + 0.5 * (self.peak - floor) * (1.0 + (PI * f).cos())
        }
    }
}
