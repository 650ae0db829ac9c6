//! Training telemetry and its CSV form.

/// One inner-loop epoch.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    /// Global epoch index across the whole run.
    pub epoch: usize,
    pub network: &'static str,
    pub outer_t: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub wall_secs: f64,
}

/// End-to-end validation numbers after one outer iteration.
#[derive(Debug, Clone)]
pub struct OuterRecord {
    pub t: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub bpp: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub outer: Vec<OuterRecord>,
}

impl TrainReport {
    /// Per-epoch loss curves. Wall-clock stays out of the CSV so identical
    /// seeds serialize identically.
    pub fn epochs_csv(&self) -> String {
        let mut out = String::from("epoch,network,lr,mean_loss\n");
        for r in &self.epochs {
            out.push_str(&format!("{},{},{},{}\n", r.epoch, r.network, r.lr, r.mean_loss));
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("t,psnr,ssim,bpp\n");
        for r in &self.outer {
            out.push_str(&format!("{},{},{},{}\n", r.t, r.psnr, r.ssim, r.bpp));
        }
        out
    }

    /// Loss series of one network within one outer iteration, in epoch
    /// order.
    pub fn loss_curve(&self, network: &str, outer_t: usize) -> Vec<f64> {
        self.epochs
            .iter()
            .filter(|r| r.network == network && r.outer_t == outer_t)
            .map(|r| r.mean_loss)
            .collect()
    }
}
