//! Quick tour of the calculus-order experiments: composition, conversion,
//! and commutator remainders over an h-sweep, printed as fitted exponents.
//!
//! cargo run --release --example order_sweeps

use twomicro::calculus::{
    commutator_order_sweep, convert_order_sweep, moyal_order_sweep, order_regression, HSweep,
};
use twomicro::quantize::QuantizationKind;
use twomicro::runner::standard_pair;

fn main() -> twomicro::Result<()> {
    let (a, b) = standard_pair();
    let sweep = HSweep::default_2d(32);
    let seed = 42;

    println!("composition remainder || Opw(a) Opw(b) - Opw(moyal_N(a,b)) ||:");
    for n in 0..3 {
        let data = moyal_order_sweep(&a, &b, n, &sweep, seed)?;
        let r = order_regression(&data)?;
        println!("  N = {n}: fitted exponent {:.3}", r.slope);
    }

    println!("change of quantization || Opl(a) - Opr(b_N) ||:");
    for n in 0..3 {
        let data = convert_order_sweep(
            &a,
            QuantizationKind::Left,
            QuantizationKind::Right,
            n,
            &sweep,
            seed,
        )?;
        let r = order_regression(&data)?;
        println!("  N = {n}: fitted exponent {:.3}", r.slope);
    }

    println!("commutator against the bracket, (i/h)[A,B] - Op({{a,b}}):");
    for kind in [QuantizationKind::Weyl, QuantizationKind::Left] {
        let data = commutator_order_sweep(&a, &b, kind, &sweep, seed)?;
        let r = order_regression(&data)?;
        println!("  {kind:?}: fitted exponent {:.3}", r.slope);
    }
    Ok(())
}
