use memsyn::config::CorrelationConfig;
use memsyn::correlation::run_correlation;

#[test]
#[ignore]
fn probe() {
    for n_dev in [1usize, 3, 7] {
        let mut errs = Vec::new();
        for seed in 1..=5u64 {
            let cfg = CorrelationConfig {
                synapses: 1000,
                correlated: 100,
                devices_per_synapse: n_dev,
                steps: 5000,
                seed,
                ..Default::default()
            };
            let t0 = std::time::Instant::now();
            let out = run_correlation(&cfg).unwrap();
            let mc: f64 = out.weights[..100].iter().sum::<f64>() / 100.0;
            let mu: f64 = out.weights[100..].iter().sum::<f64>() / 900.0;
            println!(
                "N={} seed={}: errors={} fires={} mean_c={:.4} mean_u={:.4} ({:.2?})",
                n_dev, seed, out.errors, out.fires, mc, mu, t0.elapsed()
            );
            errs.push(out.errors);
        }
        let mean: f64 = errs.iter().sum::<usize>() as f64 / errs.len() as f64;
        println!("N={} mean errors = {:.2}", n_dev, mean);
    }
}

#[test]
#[ignore]
fn probe_large() {
    let cfg = CorrelationConfig {
        synapses: 144_000,
        correlated: 14_400,
        devices_per_synapse: 7,
        steps: 3000,
        seed: 1,
        ..Default::default()
    };
    let t0 = std::time::Instant::now();
    let out = run_correlation(&cfg).unwrap();
    let mc: f64 = out.weights[..14_400].iter().sum::<f64>() / 14_400.0;
    let mu: f64 = out.weights[14_400..].iter().sum::<f64>() / (144_000.0 - 14_400.0);
    println!(
        "large: errors={} ({:.4}%) fires={} mean_c={:.4} mean_u={:.4} ({:.2?})",
        out.errors,
        100.0 * out.error_rate,
        out.fires,
        mc,
        mu,
        t0.elapsed()
    );
}
