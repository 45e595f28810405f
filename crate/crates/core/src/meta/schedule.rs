/// Learning-rate multiplier for a zero-based epoch: linear warmup
/// `(epoch + 1) / warmup` for the first `warmup` epochs, then a tenfold
/// drop at every decay epoch reached.
pub fn lr_factor(epoch: usize, warmup: usize, decay_epochs: &[usize]) -> f64 {
    if epoch < warmup {
        return (epoch + 1) as f64 / warmup as f64;
    }
    let drops = decay_epochs.iter().filter(|&&d| epoch >= d).count();
    0.1f64.powi(drops as i32)
}
