//! Scratch diagnostics; not part of the suite.

use std::time::Instant;

use tmtopo::equilibrium::{
    advance, level_to_u_d, reactions, stiffness_series, AdvanceOpts, SweepPoint,
};
use tmtopo::scenario::{build_scenario, parse_scenario, Scenario};

const C_SHAPE_HALF: &str = include_str!("../../../configs/c_shape_half.cfg");
const C_SHAPE_HALF_BUFFER: &str = include_str!("../../../configs/c_shape_half_buffer.cfg");

fn scenario(text: &str) -> Scenario {
    build_scenario(&parse_scenario(text).expect("config parses")).expect("scenario builds")
}

fn levels(to: f64, steps: usize) -> Vec<f64> {
    (0..=steps).map(|i| to * i as f64 / steps as f64).collect()
}

fn sweep_verbose(tag: &str, scn: &Scenario, lv: &[f64]) -> Vec<SweepPoint> {
    let model = &scn.model;
    let mut opts = AdvanceOpts::default();
    if std::env::var_os("PROBE_BARRIER").is_some() {
        opts.newton.guard = tmtopo::equilibrium::StepGuard::Barrier;
    }
    let mut u = vec![0.0; model.n_u()];
    let mut q = vec![0.0; model.n_q()];
    let mut from = level_to_u_d(model, 0.0);
    let mut points = Vec::new();
    let t0 = Instant::now();
    for &level in lv {
        let t = Instant::now();
        let to = level_to_u_d(model, level);
        let rep = advance(model, &scn.design, &mut u, &mut q, &from, &to, &opts)
            .unwrap_or_else(|e| panic!("{tag}: sweep failed at u_d = {level}: {e}"));
        opts.initial_fraction = (2.0 * rep.final_dt).min(1.0);
        let r = reactions(model, &q)[0];
        println!(
            "{tag} u_d={level:+.3} iters={:4} rej={} min_void={:9.3e} R={:+.6e}  {:6.2?}",
            rep.total_iterations,
            rep.rejections().count(),
            rep.min_void_det,
            r,
            t.elapsed()
        );
        points.push(SweepPoint {
            u_d: level,
            reaction: r,
            iterations: rep.total_iterations,
            min_void_det: rep.min_void_det,
        });
        from = to;
    }
    println!("{tag} total {:?}", t0.elapsed());
    points
}

#[test]
#[ignore]
fn probe_timing() {
    use tmtopo::equilibrium::assemble_equilibrium;
    use tmtopo::sparse::factor_solve;
    let scn = scenario(C_SHAPE_HALF_BUFFER);
    let model = &scn.model;
    let mut u = vec![0.0; model.n_u()];
    let mut q = vec![0.0; model.n_q()];
    let mut from = level_to_u_d(model, 0.0);
    for &level in &levels(-0.2, 10) {
        let to = level_to_u_d(model, level);
        advance(model, &scn.design, &mut u, &mut q, &from, &to, &AdvanceOpts::default()).unwrap();
        from = to;
    }
    let n = 20;
    let t = Instant::now();
    for _ in 0..n {
        assemble_equilibrium(model, &scn.design, &u, &q, &from, true).unwrap();
    }
    println!("assembly with matrix: {:?}", t.elapsed() / n);
    let t = Instant::now();
    for _ in 0..n {
        assemble_equilibrium(model, &scn.design, &u, &q, &from, false).unwrap();
    }
    println!("assembly residual-only: {:?}", t.elapsed() / n);
    let asm = assemble_equilibrium(model, &scn.design, &u, &q, &from, true).unwrap();
    let t = Instant::now();
    for _ in 0..n {
        factor_solve(asm.matrix.as_ref().unwrap(), &asm.residual).unwrap();
    }
    println!("factor+solve: {:?}", t.elapsed() / n);
    let t = Instant::now();
    for _ in 0..n {
        tmtopo::equilibrium::feasible_fraction(model, &u, &asm.residual[..model.n_u()], tmtopo::equilibrium::StepGuard::Cushion);
    }
    println!("feasible_fraction: {:?}", t.elapsed() / n);
}

#[test]
#[ignore]
fn probe_seal_onset() {
    let scn = scenario(C_SHAPE_HALF);
    let model = &scn.model;
    let mut opts = AdvanceOpts::default();
    let mut u = vec![0.0; model.n_u()];
    let mut q = vec![0.0; model.n_q()];
    let mut from = level_to_u_d(model, 0.0);
    for &level in &[-0.10, -0.20, -0.28, -0.30, -0.32, -0.34] {
        let t = Instant::now();
        let to = level_to_u_d(model, level);
        let rep = advance(model, &scn.design, &mut u, &mut q, &from, &to, &opts).unwrap();
        opts.initial_fraction = (2.0 * rep.final_dt).min(1.0);
        from = to;
        println!("  level {level:+.3} done {:?}", t.elapsed());
    }
    println!("--- tracing level -0.34 -> -0.36 ---");
    std::env::set_var("TMTOPO_TRACE", "1");
    let to = level_to_u_d(model, -0.36);
    let rep = advance(model, &scn.design, &mut u, &mut q, &from, &to, &opts).unwrap();
    println!(
        "iters={} rej={} min_void={:.3e}",
        rep.total_iterations,
        rep.rejections().count(),
        rep.min_void_det
    );
}

#[test]
#[ignore]
fn probe_deep_creep() {
    let scn = scenario(C_SHAPE_HALF_BUFFER);
    let model = &scn.model;
    let mut opts = AdvanceOpts::default();
    let mut u = vec![0.0; model.n_u()];
    let mut q = vec![0.0; model.n_q()];
    let mut from = level_to_u_d(model, 0.0);
    let mut lv = vec![-0.05, -0.10, -0.15, -0.22, -0.28];
    let mut x = -0.30;
    while x > -0.461 {
        lv.push(x);
        x -= 0.02;
    }
    for &level in &lv {
        let t = Instant::now();
        let to = level_to_u_d(model, level);
        let rep = advance(model, &scn.design, &mut u, &mut q, &from, &to, &opts).unwrap();
        opts.initial_fraction = (2.0 * rep.final_dt).min(1.0);
        from = to;
        println!("  level {level:+.3} done iters={} {:?}", rep.total_iterations, t.elapsed());
    }
    println!("--- tracing level -0.46 -> -0.48 ---");
    std::env::set_var("TMTOPO_TRACE", "1");
    let to = level_to_u_d(model, -0.48);
    let rep = advance(model, &scn.design, &mut u, &mut q, &from, &to, &opts).unwrap();
    println!(
        "iters={} rej={} min_void={:.3e}",
        rep.total_iterations,
        rep.rejections().count(),
        rep.min_void_det
    );
}

#[test]
#[ignore]
fn probe_criterion_4() {
    let h = 0.5;
    let seal = |head: &[f64]| {
        let mut lv = head.to_vec();
        let mut x = -0.30;
        while x > -0.501 {
            lv.push(x);
            x -= 0.02;
        }
        lv
    };
    let lv_buf = seal(&[-0.05, -0.10, -0.15, -0.22, -0.28]);
    let lv_plain = seal(&[-0.10, -0.20, -0.28]);
    let buffered = sweep_verbose("buffer", &scenario(C_SHAPE_HALF_BUFFER), &lv_buf);
    let plain = sweep_verbose("plain ", &scenario(C_SHAPE_HALF), &lv_plain);

    let k = stiffness_series(&buffered);
    let mut pre = 0.0f64;
    let mut post = 0.0f64;
    for (p, &s) in buffered.iter().zip(&k) {
        if p.u_d.abs() > 0.0 && p.u_d.abs() < 0.3 * h {
            pre = pre.max(s.abs());
        }
        if p.u_d.abs() > 0.6 * h {
            post = post.max(s.abs());
        }
    }
    println!(
        "pre={pre:.4e} post={post:.4e} ratio={:.2} | deep plain={:.4e} buffered={:.4e} ratio={:.2}",
        post / pre,
        plain.last().unwrap().reaction.abs(),
        buffered.last().unwrap().reaction.abs(),
        buffered.last().unwrap().reaction.abs() / plain.last().unwrap().reaction.abs()
    );
}

#[test]
#[ignore]
fn probe_c4_tangent() {
    let mesh40 = std::env::var_os("PROBE_MESH40").is_some();
    let mesh20 = std::env::var_os("PROBE_MESH20").is_some();
    let patch = |text: &str| -> String {
        if mesh40 {
            return text
                .replace("nx = 30", "nx = 40")
                .replace("ny = 15", "ny = 20")
                .replace("lx = 1.0333333333333334", "lx = 1.025")
                .replace("nx = 31", "nx = 41")
                .replace("1.0333333333333334, 0.5]]", "1.025, 0.5]]");
        }
        if mesh20 {
            return text
                .replace("nx = 30", "nx = 20")
                .replace("ny = 15", "ny = 10")
                .replace("lx = 1.0333333333333334", "lx = 1.05")
                .replace("nx = 31", "nx = 21")
                .replace("1.0333333333333334, 0.5]]", "1.05, 0.5]]");
        }
        text.to_string()
    };
    let h = 0.5;
    let mut lv = vec![-0.05, -0.10, -0.15, -0.22, -0.28];
    let mut x = -0.30;
    while x > -0.501 {
        lv.push(x);
        x -= 0.02;
    }
    let run = |tag: &str, text: &str| -> Vec<(f64, f64, f64)> {
        let scn = scenario(&patch(text));
        let model = &scn.model;
        let mut opts = AdvanceOpts::default();
        if std::env::var_os("PROBE_PTC").is_some() {
            opts.newton.ptc_step = 0.01;
        }
        let mut u = vec![0.0; model.n_u()];
        let mut q = vec![0.0; model.n_q()];
        let mut from = level_to_u_d(model, 0.0);
        let mut out = Vec::new();
        let t0 = Instant::now();
        for &level in &lv {
            let t = Instant::now();
            let to = level_to_u_d(model, level);
            let rep = advance(model, &scn.design, &mut u, &mut q, &from, &to, &opts)
                .unwrap_or_else(|e| panic!("{tag}: sweep failed at u_d = {level}: {e}"));
            opts.initial_fraction = (2.0 * rep.final_dt).min(1.0);
            let r = reactions(model, &q)[0];
            // Point tangent: push a hair further on a scratch copy.
            let dd = 5e-4;
            let to2 = level_to_u_d(model, level - dd);
            let mut u2 = u.clone();
            let mut q2 = q.clone();
            let rep2 = advance(model, &scn.design, &mut u2, &mut q2, &to, &to2, &AdvanceOpts::default())
                .unwrap_or_else(|e| panic!("{tag}: tangent probe failed at u_d = {level}: {e}"));
            let r2 = reactions(model, &q2)[0];
            let tan = (r2 - r) / dd;
            println!(
                "{tag} u_d={level:+.3} iters={:4} rej={:2} tan_iters={:3} R={:+.6e} k_tan={:+.5e}  {:6.2?}",
                rep.total_iterations,
                rep.rejections().count(),
                rep2.total_iterations,
                r,
                tan.abs(),
                t.elapsed()
            );
            out.push((level, r, tan.abs()));
            from = to;
        }
        println!("{tag} total {:?}", t0.elapsed());
        out
    };
    let plain = run("plain ", C_SHAPE_HALF);
    let buffered = run("buffer", C_SHAPE_HALF_BUFFER);
    let wmax = |pts: &[(f64, f64, f64)], lo: f64, hi: f64| -> f64 {
        pts.iter()
            .filter(|p| p.0.abs() > lo && p.0.abs() < hi)
            .map(|p| p.2)
            .fold(0.0, f64::max)
    };
    let pre = wmax(&buffered, 0.0, 0.3 * h);
    let post = wmax(&buffered, 0.6 * h, f64::INFINITY);
    let deep_p = plain.last().unwrap().1.abs();
    let deep_b = buffered.last().unwrap().1.abs();
    println!(
        "tangent: pre={pre:.4e} post={post:.4e} ratio={:.2} | deep plain={deep_p:.4e} buffered={deep_b:.4e} ratio={:.2}",
        post / pre,
        deep_b / deep_p
    );
}

#[test]
#[ignore]
fn probe_profile() {
    let scn = scenario(C_SHAPE_HALF);
    let model = &scn.model;
    let mesh = &model.mesh;
    let mut opts = AdvanceOpts::default();
    let mut u = vec![0.0; model.n_u()];
    let mut q = vec![0.0; model.n_q()];
    let mut from = level_to_u_d(model, 0.0);
    let profile = |u: &[f64], tag: &str| {
        let full = model.u_space.scattered(u);
        for row in [0.4f64, 0.1f64] {
            let mut pts: Vec<(f64, f64, f64)> = (0..mesh.n_q8_nodes())
                .filter_map(|n| {
                    let (x, y) = mesh.q8_coords(n);
                    if (y - row).abs() < 1e-9 && x > 0.64 {
                        Some((x, x + full[2 * n], y + full[2 * n + 1]))
                    } else {
                        None
                    }
                })
                .collect();
            pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let line: Vec<String> = pts
                .iter()
                .map(|(x, dx, dy)| format!("{x:.2}:({dx:+.3},{dy:+.3})"))
                .collect();
            println!("{tag} row y={row}: {}", line.join(" "));
        }
    };
    for &level in &[-0.10, -0.20, -0.28, -0.32, -0.34, -0.36, -0.40, -0.45, -0.50] {
        let t = Instant::now();
        let to = level_to_u_d(model, level);
        let rep = advance(model, &scn.design, &mut u, &mut q, &from, &to, &opts)
            .unwrap_or_else(|e| panic!("sweep failed at u_d = {level}: {e}"));
        opts.initial_fraction = (2.0 * rep.final_dt).min(1.0);
        println!(
            "u_d={level:+.3} iters={:4} R={:+.6e} {:6.2?}",
            rep.total_iterations,
            reactions(model, &q)[0],
            t.elapsed()
        );
        if level == -0.34 || level == -0.36 || level == -0.50 {
            profile(&u, &format!("  [{level:+.2}]"));
        }
        from = to;
    }
}
