//! Grid kernels loaded from a header plus a `row,col,value` table. The input
//! is split at the first NUL byte: header before, table after.

#![no_main]

use libfuzzer_sys::fuzz_target;
use poisson_chaos::kernels::GridKernel;

fuzz_target!(|data: &[u8]| {
    let split = data.iter().position(|b| *b == 0).unwrap_or(data.len());
    let Ok(header) = std::str::from_utf8(&data[..split]) else {
        return;
    };
    let table = data.get(split + 1..).unwrap_or(&[]);
    let Ok(g) = GridKernel::from_csv(header, table) else {
        return;
    };
    // whatever loads must survive a write/read cycle unchanged
    let mut out = Vec::new();
    g.write_values_csv(&mut out).expect("write to memory");
    let again = GridKernel::from_csv(&g.header(), &out).expect("own output parses");
    assert_eq!(again, g);
});
