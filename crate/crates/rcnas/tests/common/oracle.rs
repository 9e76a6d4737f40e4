//! Brute-force resource counter. Walks every weight element and every output
//! element, tallying each multiply-add as 2 FLOPs and each pointwise op as 1.
//! Shapes are propagated here independently of the library.

use rcnas::core::arch::{ArchGraph, Activation, Combine, LayerKind, LayerSpec};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Tally {
    pub params: u64,
    pub flops: u64,
}

#[derive(Clone, Copy, Debug)]
struct Shape {
    t: u64,
    f: u64,
    c: u64,
}

fn ceil_div(a: u64, b: u64) -> u64 {
    (a + b - 1) / b
}

fn activation_of(l: &LayerSpec) -> Activation {
    let applies = matches!(
        l.kind,
        LayerKind::Conv2d | LayerKind::DepSepConv2d | LayerKind::DilatedConv2d | LayerKind::Fc
    );
    if applies {
        l.activation
    } else {
        Activation::None
    }
}

pub fn count(g: &ArchGraph) -> Tally {
    let mut tally = Tally::default();
    let s = g.input_shape;
    let mut shapes = vec![Shape {
        t: s.time_or_height as u64,
        f: s.freq_or_width as u64,
        c: s.channels as u64,
    }];
    for l in &g.layers {
        let out = if l.kind == LayerKind::Add {
            add(l, shapes[l.src1], shapes[l.src2.unwrap()], &mut tally)
        } else {
            let mut x = shapes[l.src1];
            for r in 0..l.repeat {
                x = sublayer(l, x, r == 0, &mut tally);
            }
            x
        };
        shapes.push(out);
    }
    head(*shapes.last().unwrap(), g.output_classes as u64, &mut tally);
    tally
}

fn add(l: &LayerSpec, a: Shape, b: Shape, tally: &mut Tally) -> Shape {
    match l.combine {
        Combine::Add => {
            for _t in 0..a.t {
                for _f in 0..a.f {
                    for _c in 0..a.c {
                        tally.flops += 1;
                    }
                }
            }
            a
        }
        Combine::Concat => Shape { c: a.c + b.c, ..a },
    }
}

fn sublayer(l: &LayerSpec, x: Shape, first: bool, tally: &mut Tally) -> Shape {
    let (st, sf) = if first {
        (l.stride_t as u64, l.stride_f_or_dilation as u64)
    } else {
        (1, 1)
    };
    let kt = l.kernel_t as u64;
    let kf = l.kernel_f as u64;
    let ch = l.channels_or_hidden as u64;
    let act = activation_of(l);
    let factor = if act == Activation::Crelu { 2 } else { 1 };
    let pointwise_act = |y: Shape, tally: &mut Tally| {
        if act != Activation::None {
            for _ in 0..y.t * y.f * y.c {
                tally.flops += 1;
            }
        }
    };
    match l.kind {
        LayerKind::Conv2d | LayerKind::DilatedConv2d => {
            let out_f = if l.kind == LayerKind::Conv2d { ceil_div(x.f, sf) } else { x.f };
            let (ot, of) = (ceil_div(x.t, st), out_f);
            for _o in 0..ch {
                for _ci in 0..x.c {
                    for _a in 0..kt {
                        for _b in 0..kf {
                            tally.params += 1;
                        }
                    }
                }
                tally.params += 1;
            }
            for _i in 0..ot {
                for _j in 0..of {
                    for _o in 0..ch {
                        for _ci in 0..x.c {
                            for _a in 0..kt {
                                for _b in 0..kf {
                                    tally.flops += 2;
                                }
                            }
                        }
                        tally.flops += 1;
                    }
                }
            }
            let y = Shape { t: ot, f: of, c: ch * factor };
            pointwise_act(y, tally);
            y
        }
        LayerKind::DepSepConv2d => {
            let (ot, of) = (ceil_div(x.t, st), ceil_div(x.f, sf));
            tally.params += x.c * kt * kf + x.c * ch + ch;
            for _i in 0..ot {
                for _j in 0..of {
                    for _ci in 0..x.c {
                        for _tap in 0..kt * kf {
                            tally.flops += 2;
                        }
                    }
                    for _o in 0..ch {
                        for _ci in 0..x.c {
                            tally.flops += 2;
                        }
                        tally.flops += 1;
                    }
                }
            }
            let y = Shape { t: ot, f: of, c: ch * factor };
            pointwise_act(y, tally);
            y
        }
        LayerKind::Gru => {
            let n_in = x.f * x.c;
            let dirs = l.directions as u64;
            for _d in 0..dirs {
                for _gate in 0..3 {
                    tally.params += ch * n_in + ch * ch + ch;
                }
                for _step in 0..x.t {
                    for _gate in 0..3 {
                        for _u in 0..ch {
                            for _k in 0..n_in + ch {
                                tally.flops += 2;
                            }
                        }
                    }
                    // sigmoid z, sigmoid r, reset product, tanh, and the two
                    // products of the update blend.
                    for _u in 0..ch {
                        tally.flops += 6;
                    }
                }
            }
            Shape { t: x.t, f: 1, c: ch * dirs }
        }
        LayerKind::AvgPool2d | LayerKind::MaxPool2d => {
            let y = Shape { t: x.t / st, f: x.f / sf, c: x.c };
            for _ in 0..y.t * y.f * y.c {
                for _tap in 0..kt * kf {
                    tally.flops += 1;
                }
            }
            y
        }
        LayerKind::Fc => {
            let n_in = x.t * x.f * x.c;
            for _o in 0..ch {
                for _k in 0..n_in {
                    tally.params += 1;
                    tally.flops += 2;
                }
                tally.params += 1;
                tally.flops += 1;
            }
            let y = Shape { t: 1, f: 1, c: ch * factor };
            pointwise_act(y, tally);
            y
        }
        LayerKind::Add => unreachable!(),
    }
}

fn head(x: Shape, classes: u64, tally: &mut Tally) {
    if x.t * x.f > 1 {
        for _ in 0..x.t * x.f * x.c {
            tally.flops += 1;
        }
    }
    for _k in 0..classes {
        for _c in 0..x.c {
            tally.params += 1;
            tally.flops += 2;
        }
        tally.params += 1;
        tally.flops += 1;
    }
}
