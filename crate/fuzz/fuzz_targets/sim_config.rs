#![no_main]

use libfuzzer_sys::fuzz_target;
use riou::regsim::{self, RunOptions, SimConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(cfg) = SimConfig::from_toml_str(text) else {
        return;
    };
    // anything accepted must survive a round trip unchanged
    let back = SimConfig::from_toml_str(&cfg.to_toml_string()).expect("re-parse of serialized config");
    assert_eq!(back, cfg);

    if cfg.sample_count <= 32 && cfg.steps <= 8 {
        let opts = RunOptions {
            threads: Some(1),
            ..RunOptions::default()
        };
        if let Ok(report) = regsim::run_descent_with(&cfg, opts) {
            assert_eq!(report.initial_histogram.iter().sum::<usize>(), cfg.sample_count);
            assert_eq!(report.final_histogram.iter().sum::<usize>(), cfg.sample_count);
        }
    }
});
