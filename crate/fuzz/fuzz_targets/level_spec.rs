#![no_main]

use libfuzzer_sys::fuzz_target;
use riou::pyramid::{self, LevelSpec, TpnetOptions};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(levels) = LevelSpec::from_toml_str(text) else {
        return;
    };
    if levels.len() < 3 {
        return;
    }
    let opts = TpnetOptions {
        pyramid_channels: 4,
        ..TpnetOptions::default()
    };
    if let Ok(net) = pyramid::build_tpnet(&levels, levels.len() - 2, opts) {
        assert!(pyramid::validate(&net.graph).is_empty());
        assert!(net.forward_chain_consistent());
    }
    if let Ok(small) = levels.downscaled(4, 8) {
        if let Ok(net) = pyramid::build_tpnet(&small, small.len() - 2, opts) {
            let _ = pyramid::forward_smoke(&net.graph, 0);
        }
    }
});
