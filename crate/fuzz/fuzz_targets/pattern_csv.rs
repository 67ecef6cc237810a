//! Point-pattern dumps: `#` metadata lines followed by a `u,x` table.

#![no_main]

use libfuzzer_sys::fuzz_target;
use poisson_chaos::point_process::PointPattern;

fuzz_target!(|data: &[u8]| {
    let Ok(p) = PointPattern::read_csv(data) else {
        return;
    };
    let mut out = Vec::new();
    p.write_csv(&mut out).expect("write to memory");
    let again = PointPattern::read_csv(out.as_slice()).expect("own output parses");
    assert_eq!((&again.atoms, again.window, again.seed), (&p.atoms, p.window, p.seed));
    // an absent mass reads back as NaN, so compare the bits
    assert_eq!(again.total_mass.to_bits(), p.total_mass.to_bits());
});
