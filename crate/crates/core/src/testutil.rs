use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::balance::{Dataset, Point};
use crate::features::{FeatureVector, Label, LabeledSample};

/// Class `c` centred at `c` on the first two features, pure noise elsewhere.
pub(crate) fn gaussian_dataset(per_class: [usize; 3], sigma: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut samples = Vec::new();
    for (c, &n) in per_class.iter().enumerate() {
        for i in 0..n {
            let p: Point =
                std::array::from_fn(|f| if f < 2 { c as f64 } else { 0.0 } + noise.sample(&mut rng));
            samples.push(LabeledSample {
                features: FeatureVector::from_array(p),
                label: Label::ALL[c],
                source_id: format!("{c}-{i}"),
            });
        }
    }
    Dataset::new(samples)
}
