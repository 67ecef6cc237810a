//! Config files are user input: arbitrary text must parse or fail with an
//! error, never panic. Parsed files are also pushed through the control
//! measure reader, which does its own number and list parsing.

#![no_main]

use libfuzzer_sys::fuzz_target;
use poisson_chaos::config::Config;
use poisson_chaos::point_process::control_from_config;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = Config::parse(text) {
        let _ = control_from_config(&cfg, "control");
        let _ = cfg.get_f64("run", "seed");
    }
});
