//! Grid-kernel sidecar headers (`arity`, `zero_diagonal`, `cell = ...`).
//! A header that parses must describe cells that rebuild the same header.

#![no_main]

use libfuzzer_sys::fuzz_target;
use poisson_chaos::kernels::GridKernel;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok((arity, zero_diagonal, cells)) = GridKernel::parse_header(text) else {
        return;
    };
    let grid = if arity == 1 {
        GridKernel::arity1(cells.clone(), vec![0.0; cells.len()])
    } else {
        GridKernel::arity2(cells.clone(), std::iter::empty())
    };
    if let Ok(g) = grid {
        let again = GridKernel::parse_header(&g.with_zero_diagonal(zero_diagonal).header()).expect("own header parses");
        assert_eq!(again, (arity, zero_diagonal, cells));
    }
});
