use glt::datagen::{generate, Dataset, GenConfig, Spurious};
use glt::splits::{Benchmark, BenchmarkConfig};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Pearson chi-square goodness of fit; returns the upper-tail p-value.
fn chi_square_p(observed: &[f64], expected: &[f64]) -> f64 {
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .filter(|(_, &e)| e > 0.0)
        .map(|(o, e)| (o - e) * (o - e) / e)
        .sum();
    let dof = expected.iter().filter(|&&e| e > 0.0).count() - 1;
    1.0 - ChiSquared::new(dof as f64).unwrap().cdf(stat)
}

fn attribute_counts(ds: &Dataset, ids: impl Iterator<Item = u32>) -> Vec<Vec<f64>> {
    let mut counts = vec![vec![0.0; ds.n_attributes]; ds.n_classes];
    for id in ids {
        let s = ds.sample(id);
        for a in s.attrs.indices() {
            counts[s.y][a] += 1.0;
        }
    }
    counts
}

fn balanced(n_classes: usize, per_class: usize, sigma: f64, seed: u64) -> GenConfig {
    GenConfig {
        n_classes,
        samples_head: per_class,
        noise_sigma: sigma,
        seed,
        ..GenConfig::default()
    }
}

#[test]
fn attribute_frequencies_follow_the_conditional() {
    let ds = generate(&balanced(3, 10_000, 0.5, 11)).unwrap();
    let conditional = &ds.generation.as_ref().unwrap().conditional;
    let counts = attribute_counts(&ds, 0..ds.len() as u32);
    for (k, row) in conditional.iter().enumerate() {
        let n: f64 = counts[k].iter().sum();
        assert_eq!(n, 10_000.0);
        let expected: Vec<f64> = row.iter().map(|p| p * n).collect();
        let p = chi_square_p(&counts[k], &expected);
        assert!(p > 0.01, "class {k}: chi-square p = {p}");
    }
}

#[test]
fn noiseless_data_is_separable_by_nearest_class_direction() {
    let ds = generate(&balanced(20, 50, 0.0, 3)).unwrap();
    let mu = &ds.generation.as_ref().unwrap().class_dirs;
    for s in &ds.samples {
        let dist = |m: &Vec<f64>| m.iter().zip(&s.x).map(|(a, &b)| (a - b as f64).powi(2)).sum::<f64>();
        let nearest = (0..mu.len()).min_by(|&a, &b| dist(&mu[a]).total_cmp(&dist(&mu[b]))).unwrap();
        assert_eq!(nearest, s.y, "sample {}", s.id);
    }
}

#[test]
fn spurious_strength_raises_the_frequency_ratio() {
    let (class, attribute) = (1, 6);
    let ratio = |strength: f64| {
        let cfg = GenConfig {
            spurious: Some(Spurious {
                class,
                attribute,
                strength,
            }),
            ..balanced(4, 10_000, 0.5, 21)
        };
        let ds = generate(&cfg).unwrap();
        let counts = attribute_counts(&ds, 0..ds.len() as u32);
        let inside = counts[class][attribute] / counts[class].iter().sum::<f64>();
        let (hit, all) = (0..4)
            .filter(|&k| k != class)
            .fold((0.0, 0.0), |(h, a), k| (h + counts[k][attribute], a + counts[k].iter().sum::<f64>()));
        inside / (hit / all)
    };
    let ratios: Vec<f64> = [0.0, 0.5, 1.0, 2.0, 4.0].iter().map(|&s| ratio(s)).collect();
    for w in ratios.windows(2) {
        assert!(w[1] > w[0], "ratios not increasing: {ratios:?}");
    }
}

#[test]
fn train_cbl_attributes_match_the_conditional() {
    let ds = generate(&GenConfig::default()).unwrap();
    let bench = Benchmark::build(&ds, &BenchmarkConfig::default(), 0).unwrap();
    let conditional = &ds.generation.as_ref().unwrap().conditional;
    let counts = attribute_counts(&ds, bench.train_cbl.sample_ids.iter().copied());
    // Pool cells by within-class rank so each expected count stays large.
    let a = ds.n_attributes;
    let (mut observed, mut expected) = (vec![0.0; a], vec![0.0; a]);
    for (k, row) in conditional.iter().enumerate() {
        let n: f64 = counts[k].iter().sum();
        let mut order: Vec<usize> = (0..a).collect();
        order.sort_by(|&i, &j| row[j].total_cmp(&row[i]));
        for (rank, &attr) in order.iter().enumerate() {
            observed[rank] += counts[k][attr];
            expected[rank] += n * row[attr];
        }
    }
    let p = chi_square_p(&observed, &expected);
    assert!(p > 0.01, "chi-square p = {p}; observed {observed:?} expected {expected:?}");
}
