//! Shared inputs for the criterion benchmarks.

use uqsup_core::synthgen::{generate, GeneratorConfig, SplitMix64, SyntheticDump};

pub fn dump(inputs: usize, samples: usize, classes: usize) -> SyntheticDump {
    generate(&GeneratorConfig {
        seed: 0x5eed,
        inputs,
        samples,
        classes,
        noise_scale: 0.7,
        mislabel_link: 0.8,
    })
    .expect("valid benchmark config")
}

/// Uncertainties with a matching malicious mask, roughly a third positive.
pub fn ranking(n: usize) -> (Vec<f64>, Vec<bool>) {
    let mut rng = SplitMix64::new(n as u64);
    (0..n)
        .map(|_| {
            let u = rng.uniform();
            (u, rng.uniform() < u * 0.66)
        })
        .unzip()
}
